import numpy as np
import pytest

from reaas.client import (Client, LocalService, RemoteService, TransportError, certify_bc,
                          certify_sc_reaas, certify_sc_seaas, downstream_network, train_downstream,
                          train_downstream_seaas)
from reaas.data import render_images
from reaas.nn import AffineLayer, AffineNetwork, init_network
from reaas.service import BackgroundServer, EncoderService
from reaas.smoothing import SmoothingConfig
from reaas.spectral import pretrain_encoder


@pytest.fixture(scope="module")
def encoder():
    data = render_images(200, (4, 4), 3, seed=1)
    return pretrain_encoder(init_network([16, 12, 8, 3], seed=0), data, epochs=5, lr=0.05, batch=16)


@pytest.fixture(scope="module")
def train_set():
    return render_images(10, (4, 4), 3, seed=3)


@pytest.fixture(scope="module")
def test_set():
    return render_images(10, (4, 4), 3, seed=2)


def local_client(encoder):
    return Client(LocalService(EncoderService(encoder, (4, 4, 1)), "t"), (4, 4, 1))


def test_reaas_bc_query_accounting(encoder, train_set, test_set):
    client = local_client(encoder)
    clf = train_downstream(client, train_set, "bc", hidden=(8,), epochs=3, batch=4)
    assert client.costs.train_feature == 10 and client.costs.per_training_input == 1
    report = certify_bc(client, test_set, clf)
    for c in report.certificates:
        assert c.queries == (2 if c.feature_radius > 0 else 1)
    assert client.costs.per_testing_input <= 2
    server_side = client.handle.ledger()
    assert server_side["feature_calls"] == 20
    assert server_side["f2i_calls"] == client.costs.test_f2i


def test_sc_training_costs_one_query_per_input(encoder, train_set):
    client = local_client(encoder)
    train_downstream(client, train_set, "sc", sigma=0.5, hidden=(8,), epochs=4, batch=4)
    assert client.costs.train_feature == 10


def test_zero_feature_radius_skips_f2i(encoder, test_set):
    # both logits equal everywhere: the margin is zero, so no radius to convert
    clf = AffineNetwork((AffineLayer(np.zeros((2, 8)), np.zeros(2)),))
    client = local_client(encoder)
    report = certify_bc(client, test_set.subset(range(3)), clf)
    assert all(c.queries == 1 and c.input_radius == 0.0 for c in report.certificates)
    assert client.costs.test_f2i == 0


def test_sc_abstention_skips_f2i(encoder, test_set):
    # random base classifier on a symmetric split abstains
    clf = AffineNetwork((AffineLayer(np.outer([1.0, -1.0], np.eye(8)[0]), np.zeros(2)),))
    client = local_client(encoder)
    cfg = SmoothingConfig(200, 50.0, 0.001, 0)
    report = certify_sc_reaas(client, test_set.subset(range(4)), clf, cfg)
    for c in report.certificates:
        assert c.abstained and c.queries == 1 and c.input_radius is None
    assert report.acr == 0.0


def test_sc_reaas_two_queries_when_certified(encoder, test_set):
    clf = AffineNetwork((AffineLayer(np.zeros((2, 8)), np.array([1.0, 0.0])),))
    client = local_client(encoder)
    report = certify_sc_reaas(client, test_set.subset(range(4)), clf, SmoothingConfig(100, 0.5, 0.001))
    for c in report.certificates:
        assert not c.abstained and c.queries == 2
        assert c.feature_radius == pytest.approx(0.5 * 1.50047502412064, abs=1e-8)


def test_seaas_query_accounting(encoder, train_set, test_set):
    client = local_client(encoder)
    clf = train_downstream_seaas(client, train_set, sigma=0.5, hidden=(8,), epochs=25, batch=4)
    assert client.costs.train_feature == 250
    report = certify_sc_seaas(client, test_set, clf, SmoothingConfig(100, 0.5, 0.001))
    assert client.costs.test_feature == 1000 and client.costs.test_f2i == 0
    assert all(c.queries == 100 for c in report.certificates)
    assert client.handle.ledger()["feature_calls"] == 1250


def test_linear_end_to_end_radius():
    # linear encoder W and linear two-class head: the exact input radius is
    # margin / ||w1 - w2|| in feature space, then divided by ||W||_F by the search
    rng = np.random.default_rng(5)
    W = rng.standard_normal((3, 4))
    enc = AffineNetwork((AffineLayer(W, np.zeros(3)),))
    w1, w2 = rng.standard_normal(3), rng.standard_normal(3)
    clf = AffineNetwork((AffineLayer(np.stack([w1, w2]), np.zeros(2)),))
    x = rng.uniform(0, 1, 4)
    v = W @ x
    margin = abs((w1 - w2) @ v)
    from reaas.nn import LabeledDataset
    label = int((w1 - w2) @ v < 0)
    test = LabeledDataset(x[None], np.array([label]), 2, shape=(2, 2, 1))
    client = Client(LocalService(EncoderService(enc, (2, 2, 1))), (2, 2, 1))
    (c,) = certify_bc(client, test, clf, precision=1e-6).certificates
    rf = margin / np.linalg.norm(w1 - w2)
    assert rf - 1e-6 <= c.feature_radius <= rf
    exact = rf / np.linalg.norm(W, "fro")
    assert exact - 0.001 - 1e-5 <= c.input_radius <= exact
    assert c.correct


def test_transport_failure_marks_certificate(encoder, test_set):
    with BackgroundServer(EncoderService(encoder, (4, 4, 1))) as srv:
        url = srv.url
    client = Client(RemoteService(url, retries=1, backoff=0.0, timeout=2), (4, 4, 1))
    clf = downstream_network(8, 3, (4,))
    report = certify_bc(client, test_set.subset(range(2)), clf)
    assert all(c.failed and not c.correct for c in report.certificates)
    assert report.acr == 0.0


def test_transport_error_raised_directly(encoder):
    with BackgroundServer(EncoderService(encoder, (4, 4, 1))) as srv:
        url = srv.url
    with pytest.raises(TransportError):
        RemoteService(url, retries=0, backoff=0.0, timeout=2).info()


def test_remote_and_local_agree(encoder, train_set, test_set):
    local = local_client(encoder)
    clf = train_downstream(local, train_set, "bc", hidden=(8,), epochs=2, batch=4, seed=1)
    a = certify_bc(local, test_set, clf)
    with BackgroundServer(EncoderService(encoder, (4, 4, 1))) as srv:
        remote = Client(RemoteService(srv.url, "t"), (4, 4, 1))
        b = certify_bc(remote, test_set, clf)
    assert [c.input_radius for c in a.certificates] == [c.input_radius for c in b.certificates]
    assert a.acr == b.acr


def test_determinism(encoder, train_set, test_set):
    runs = []
    for _ in range(2):
        client = local_client(encoder)
        clf = train_downstream(client, train_set, "sc", hidden=(8,), epochs=3, batch=4, seed=2)
        runs.append(certify_sc_reaas(client, test_set, clf, SmoothingConfig(300, 0.5, 0.01, 9)).to_dict())
    assert runs[0] == runs[1]


def test_bad_method(encoder, train_set):
    with pytest.raises(ValueError):
        train_downstream(local_client(encoder), train_set, "xx")
