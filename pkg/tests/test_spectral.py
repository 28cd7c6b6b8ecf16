import numpy as np
import pytest

from oracles import finite_difference, random_relu_net
from reaas.data import gaussian_blobs
from reaas.nn import AffineLayer, AffineNetwork, forward, init_network, train_classifier
from reaas.spectral import (SpectralConfig, SpectralPenalty, exact_lipschitz_product,
                            pretrain_encoder, spectral_norm_power, spectral_profile)


def test_diagonal_matrix():
    s, _ = spectral_norm_power(np.diag([3.0, 1.0, -5.0]), iters=50)
    assert s == pytest.approx(5.0, abs=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_random_matrix_matches_svd(seed):
    W = np.random.default_rng(seed).standard_normal((50, 30))
    s, _ = spectral_norm_power(W, iters=500)
    assert s == pytest.approx(np.linalg.svd(W, compute_uv=False)[0], abs=1e-4)


def test_identity_converges_in_one_step():
    s, _ = spectral_norm_power(np.eye(7), iters=1)
    assert s == pytest.approx(1.0, abs=1e-12)


def test_zero_matrix():
    s, _ = spectral_norm_power(np.zeros((3, 4)), iters=5)
    assert s == 0.0


@pytest.mark.parametrize("seed", range(10))
def test_estimate_never_exceeds_true_norm(seed):
    W = np.random.default_rng(seed).standard_normal((12, 9))
    true = np.linalg.norm(W, 2)
    for iters in (1, 3, 10):
        assert spectral_norm_power(W, iters=iters, rng=np.random.default_rng(seed))[0] <= true + 1e-6


def test_warm_start_does_not_lose_accuracy():
    W = np.random.default_rng(3).standard_normal((20, 20))
    true = np.linalg.norm(W, 2)
    state, prev = None, 0.0
    for _ in range(15):
        s, state = spectral_norm_power(W, state, iters=1)
        assert true - s <= true - prev + 1e-9
        prev = s


def test_profile_and_exact_product():
    rng = np.random.default_rng(0)
    net = random_relu_net(rng, [6, 8, 5, 3])
    prof = spectral_profile(net, iters=300)
    exact = [np.linalg.norm(l.weight, 2) for l in net.layers]
    np.testing.assert_allclose(prof.per_layer_norms, exact, rtol=1e-6)
    assert exact_lipschitz_product(net) == pytest.approx(np.prod(exact))


def test_lipschitz_product_bounds_pairs():
    rng = np.random.default_rng(1)
    net = random_relu_net(rng, [10, 16, 16, 4])
    L = exact_lipschitz_product(net)
    a, b = rng.standard_normal((1000, 10)), rng.standard_normal((1000, 10))
    b = a + rng.uniform(0.001, 1, (1000, 1)) * (b - a)
    ratio = np.linalg.norm(forward(net, a) - forward(net, b), axis=1) / np.linalg.norm(a - b, axis=1)
    assert np.all(ratio <= L * (1 + 1e-12))


def test_penalty_gradient_matches_finite_differences():
    rng = np.random.default_rng(2)
    net = random_relu_net(rng, [4, 5, 3, 2])
    params = [(w.copy(), b.copy()) for w, b in net.params()]
    cfg = SpectralConfig(lam=0.3, power_iters=400)
    pen = SpectralPenalty(cfg, n_layers=2)
    _, grads = pen(params)

    def value(p):
        return cfg.lam * np.prod([np.linalg.norm(p[j][0], 2) for j in range(2)])

    fd = finite_difference(value, params, eps=1e-6)
    for j in range(2):
        np.testing.assert_allclose(grads[j], fd[j][0], atol=1e-6)
    assert grads[2] is None


def test_penalty_descent_shrinks_single_layer():
    W = np.random.default_rng(4).standard_normal((6, 6))
    pen = SpectralPenalty(SpectralConfig(lam=1.0, power_iters=50), n_layers=1)
    norms = []
    for _ in range(30):
        val, grads = pen([(W, np.zeros(6))])
        norms.append(np.linalg.norm(W, 2))
        W = W - 0.05 * grads[0]
    assert all(b < a for a, b in zip(norms, norms[1:]))


def test_zero_lambda_is_plain_training():
    data = gaussian_blobs(80, 3, 4, seed=2)
    net = init_network([4, 10, 8, 3], seed=1)
    a = pretrain_encoder(net, data, SpectralConfig(lam=0.0), epochs=3, lr=0.05, batch=16, seed=4,
                         return_full=True)
    b = train_classifier(net, data, epochs=3, lr=0.05, batch=16, seed=4)
    for la, lb in zip(a.layers, b.layers):
        assert np.array_equal(la.weight, lb.weight) and np.array_equal(la.bias, lb.bias)


def test_pretrain_returns_encoder_without_head():
    data = gaussian_blobs(40, 2, 3, seed=0)
    enc = pretrain_encoder(init_network([3, 6, 5, 2], seed=0), data, epochs=1, batch=8)
    assert enc.depth == 2 and enc.output_dim == 5
    with pytest.raises(ValueError):
        pretrain_encoder(init_network([3, 2]), data)


def test_lambda_sweep_shrinks_encoder_product():
    data = gaussian_blobs(300, 3, 6, separation=3.0, seed=5)
    products = []
    for lam in (0.0, 0.01, 0.1):
        enc = pretrain_encoder(init_network([6, 16, 16, 3], seed=0), data, SpectralConfig(lam=lam),
                               epochs=15, lr=0.05, batch=16, seed=0)
        products.append(exact_lipschitz_product(enc))
    assert products[0] > products[1] > products[2]


def test_config_validation():
    with pytest.raises(ValueError):
        SpectralConfig(lam=-1)
    with pytest.raises(ValueError):
        SpectralConfig(power_iters=0)
    with pytest.raises(ValueError):
        spectral_norm_power(np.eye(2), state=np.zeros(2))
