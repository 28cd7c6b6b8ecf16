"""Robust encoders as a service: feature serving, radius conversion, and client-side certification."""

from .nn import AffineLayer, AffineNetwork, LabeledDataset, forward, train_classifier
from .crown import BoundingLines, bc_feature_radius, propagate_bounds
from .f2i import SearchConfig, f2i_radius, feature_distance_upper_bound
from .smoothing import SmoothingConfig, certify_smoothed
from .spectral import SpectralConfig, pretrain_encoder, spectral_norm_power

__version__ = "0.1.0"
