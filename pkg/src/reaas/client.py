"""Client side: service handles, downstream training, and certification workflows.

REaaS mode uses one Feature query per training input and, per testing
input, one Feature query plus (when there is a radius to convert) one
F2IPerturb query. The SEaaS baseline only has the Feature endpoint, so
smoothing noise is added to images and every noisy image is a query.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import requests

from .crown import bc_feature_radius
from .metrics import average_certified_radius, certified_accuracy_curve
from .nn import AffineNetwork, LabeledDataset, Trainer, init_network, predict
from .service import EncoderService, ProtocolError
from .smoothing import SmoothingConfig, certify_smoothed

FEATURE_CHUNK = 256


class TransportError(ConnectionError):
    """The service could not be reached within the retry budget."""


class RemoteService:
    """HTTP handle for a running encoder service."""

    def __init__(self, url: str, token: Optional[str] = None, retries: int = 3,
                 timeout: float = 60.0, backoff: float = 0.2):
        self.url = url.rstrip("/")
        self.retries = retries
        self.timeout = timeout
        self.backoff = backoff
        self.session = requests.Session()
        if token:
            self.session.headers["X-Client-Token"] = token

    def _call(self, method: str, path: str, body=None) -> dict:
        last = None
        for attempt in range(self.retries + 1):
            try:
                resp = self.session.request(method, self.url + path, json=body, timeout=self.timeout)
            except requests.RequestException as exc:
                last = exc
                time.sleep(self.backoff * 2 ** attempt)
                continue
            data = resp.json()
            if resp.status_code != 200:
                err = data.get("error", {})
                raise ProtocolError(err.get("code", "unknown"), err.get("message", ""), resp.status_code)
            return data
        raise TransportError(f"{path}: {last}")

    def feature(self, body: dict) -> dict:
        return self._call("POST", "/feature", body)

    def f2i(self, body: dict) -> dict:
        return self._call("POST", "/f2iperturb", body)

    def info(self) -> dict:
        return self._call("GET", "/info")

    def ledger(self) -> dict:
        return self._call("GET", "/ledger")


class LocalService:
    """In-process handle with the same interface as :class:`RemoteService`."""

    def __init__(self, service: EncoderService, token: Optional[str] = None):
        self.service = service
        self.token = token

    def feature(self, body: dict) -> dict:
        return self.service.feature(body, self.token)

    def f2i(self, body: dict) -> dict:
        return self.service.f2i(body, self.token)

    def info(self) -> dict:
        return self.service.info()

    def ledger(self) -> dict:
        return self.service.ledger.snapshot()


@dataclass
class CostLedger:
    """Client-side query accounting split by training and testing phase."""

    train_feature: int = 0
    test_feature: int = 0
    test_f2i: int = 0
    n_train: int = 0
    n_test: int = 0

    @property
    def per_training_input(self) -> float:
        return self.train_feature / self.n_train if self.n_train else 0.0

    @property
    def per_testing_input(self) -> float:
        return (self.test_feature + self.test_f2i) / self.n_test if self.n_test else 0.0

    def snapshot(self) -> dict:
        d = asdict(self)
        d["per_training_input"] = self.per_training_input
        d["per_testing_input"] = self.per_testing_input
        return d


class Client:
    """Wraps a service handle and counts every query it issues."""

    def __init__(self, handle, shape):
        self.handle = handle
        self.shape = [int(s) for s in shape]
        self.costs = CostLedger()

    def features(self, images, phase: str) -> np.ndarray:
        images = np.atleast_2d(np.asarray(images, dtype=np.float64))
        out = []
        for start in range(0, images.shape[0], FEATURE_CHUNK):
            chunk = images[start:start + FEATURE_CHUNK]
            reply = self.handle.feature({"shape": self.shape, "pixels": chunk.tolist()})
            out.append(np.asarray(reply["features"], dtype=np.float64))
            self._count(phase, "feature", chunk.shape[0])
        return np.concatenate(out, axis=0)

    def feature(self, image, phase: str) -> np.ndarray:
        reply = self.handle.feature({"shape": self.shape, "pixels": np.asarray(image, dtype=np.float64).tolist()})
        self._count(phase, "feature", 1)
        return np.asarray(reply["feature"], dtype=np.float64)

    def f2i(self, image, feature_radius: float) -> float:
        reply = self.handle.f2i({"shape": self.shape,
                                 "pixels": np.asarray(image, dtype=np.float64).tolist(),
                                 "feature_radius": float(feature_radius)})
        self._count("test", "f2i", 1)
        return float(reply["input_radius"])

    def _count(self, phase: str, kind: str, n: int) -> None:
        if phase == "train":
            self.costs.train_feature += n
        elif kind == "feature":
            self.costs.test_feature += n
        else:
            self.costs.test_f2i += n


@dataclass
class RadiusCertificate:
    input_id: int
    label: int
    predicted: int
    method: str
    mode: str
    feature_radius: Optional[float] = None
    input_radius: Optional[float] = None
    alpha: Optional[float] = None
    abstained: bool = False
    failed: bool = False
    queries: int = 0

    @property
    def correct(self) -> bool:
        return self.predicted == self.label and not self.abstained and not self.failed


@dataclass
class RobustnessReport:
    certificates: list
    acr: float
    curve: list
    ledger: dict = field(default_factory=dict)
    input_dim: int = 0

    @classmethod
    def build(cls, certificates, ledger: dict, input_dim: int, n_points: int = 100) -> "RobustnessReport":
        certificates = sorted(certificates, key=lambda c: c.input_id)
        return cls(certificates, average_certified_radius(certificates),
                   certified_accuracy_curve(certificates, n_points), ledger, input_dim)

    def to_dict(self) -> dict:
        return {
            "acr": self.acr,
            "curve": [list(p) for p in self.curve],
            "ledger": self.ledger,
            "input_dim": self.input_dim,
            "certificates": [asdict(c) for c in self.certificates],
        }


def downstream_network(feature_dim: int, num_classes: int, hidden=(256, 256), seed=0) -> AffineNetwork:
    return init_network([feature_dim, *hidden, num_classes], seed=seed)


def train_downstream(client: Client, data: LabeledDataset, method: str = "bc", sigma: float = 0.5,
                     hidden=(256, 256), epochs: int = 25, lr: float = 0.06, batch: int = 512,
                     seed=0, momentum: float = 0.0) -> AffineNetwork:
    """Train a downstream classifier on served features (one query per input).

    ``method="sc"`` adds fresh Gaussian noise of std ``sigma`` to the feature
    vectors every epoch; no extra queries are needed for that.
    """
    if method not in ("bc", "sc"):
        raise ValueError("method must be 'bc' or 'sc'")
    feats = client.features(data.inputs, "train")
    client.costs.n_train += len(data)
    net = downstream_network(feats.shape[1], data.num_classes, hidden, seed)
    trainer = Trainer(net, lr, batch, seed=seed, momentum=momentum)
    for _ in range(epochs):
        trainer.run_epoch(feats, data.labels, sigma if method == "sc" else None)
    return trainer.network()


def train_downstream_seaas(client: Client, data: LabeledDataset, sigma: float = 0.5,
                           hidden=(256, 256), epochs: int = 25, lr: float = 0.06, batch: int = 512,
                           seed=0, momentum: float = 0.0) -> AffineNetwork:
    """SEaaS baseline: noisy images are re-featurised every epoch (e queries per input)."""
    noise_rng = np.random.default_rng([seed, 7])
    net = None
    trainer = None
    for _ in range(epochs):
        noisy = data.inputs + noise_rng.normal(0.0, sigma, size=data.inputs.shape)
        feats = client.features(noisy, "train")
        if trainer is None:
            net = downstream_network(feats.shape[1], data.num_classes, hidden, seed)
            trainer = Trainer(net, lr, batch, seed=seed, momentum=momentum)
        trainer.run_epoch(feats, data.labels)
    client.costs.n_train += len(data)
    return trainer.network()


def _input_seed(seed: int, input_id: int) -> int:
    return int(np.random.SeedSequence([seed, input_id]).generate_state(1)[0])


def _failed(i, label, method, mode, queries, alpha=None) -> RadiusCertificate:
    return RadiusCertificate(i, label, -1, method, mode, alpha=alpha, failed=True, queries=queries)


def certify_bc(client: Client, test: LabeledDataset, classifier: AffineNetwork,
               precision: float = 0.001) -> RobustnessReport:
    certs = []
    for i, (x, label) in enumerate(zip(test.inputs, test.labels)):
        before = _total(client)
        try:
            v = client.feature(x, "test")
            pred, rf = bc_feature_radius(classifier, v, precision)
            r = client.f2i(x, rf) if rf > 0 else 0.0
        except (TransportError, ProtocolError):
            certs.append(_failed(i, int(label), "BC", "REaaS", _total(client) - before))
            continue
        certs.append(RadiusCertificate(i, int(label), pred, "BC", "REaaS", rf, r,
                                       queries=_total(client) - before))
    client.costs.n_test += len(test)
    return RobustnessReport.build(certs, client.costs.snapshot(), test.dim)


def certify_sc_reaas(client: Client, test: LabeledDataset, classifier: AffineNetwork,
                     cfg: SmoothingConfig = SmoothingConfig()) -> RobustnessReport:
    """Smooth the downstream classifier in feature space, then convert the radius."""
    certs = []
    base = lambda batch: predict(classifier, batch)
    for i, (x, label) in enumerate(zip(test.inputs, test.labels)):
        before = _total(client)
        try:
            v = client.feature(x, "test")
            ev = certify_smoothed(base, v, _replace_seed(cfg, i))
            r = None if ev.abstained else client.f2i(x, ev.radius)
        except (TransportError, ProtocolError):
            certs.append(_failed(i, int(label), "SC", "REaaS", _total(client) - before, cfg.alpha))
            continue
        certs.append(RadiusCertificate(i, int(label), ev.predicted, "SC", "REaaS", ev.radius, r,
                                       alpha=cfg.alpha, abstained=ev.abstained,
                                       queries=_total(client) - before))
    client.costs.n_test += len(test)
    return RobustnessReport.build(certs, client.costs.snapshot(), test.dim)


def certify_sc_seaas(client: Client, test: LabeledDataset, classifier: AffineNetwork,
                     cfg: SmoothingConfig = SmoothingConfig()) -> RobustnessReport:
    """SEaaS baseline: smooth encoder+classifier in input space, one query per noisy image."""
    certs = []
    base = lambda batch: predict(classifier, client.features(batch, "test"))
    for i, (x, label) in enumerate(zip(test.inputs, test.labels)):
        before = _total(client)
        try:
            ev = certify_smoothed(base, x, _replace_seed(cfg, i))
        except (TransportError, ProtocolError):
            certs.append(_failed(i, int(label), "SC", "SEaaS", _total(client) - before, cfg.alpha))
            continue
        certs.append(RadiusCertificate(i, int(label), ev.predicted, "SC", "SEaaS", None, ev.radius,
                                       alpha=cfg.alpha, abstained=ev.abstained,
                                       queries=_total(client) - before))
    client.costs.n_test += len(test)
    return RobustnessReport.build(certs, client.costs.snapshot(), test.dim)


def _replace_seed(cfg: SmoothingConfig, input_id: int) -> SmoothingConfig:
    return SmoothingConfig(cfg.n_samples, cfg.sigma, cfg.alpha, _input_seed(cfg.seed, input_id))


def _total(client: Client) -> int:
    c = client.costs
    return c.test_feature + c.test_f2i
