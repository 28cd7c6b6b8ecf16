"""Encoder-as-a-service: Feature and F2IPerturb endpoints over HTTP/JSON.

Endpoints
---------
``POST /feature``
    ``{"shape": [h, w, c], "pixels": [...]}`` -> ``{"feature": [...]}``.
    ``pixels`` may also be a list of flat images, answered with
    ``{"features": [[...], ...]}``; every image counts as one query.
``POST /f2iperturb``
    same body plus ``"feature_radius"`` -> ``{"input_radius": r,
    "rounds": k, "degenerate": bool}``.
``GET /ledger``
    query counters, total and per client.
``GET /info``
    encoder input shape, feature dimension and search settings.

Pixels are flattened channel-major (C, H, W). Images whose resolution
differs from the encoder's are bilinearly resized by a linear map folded into
the encoder's first layer, so radii are reported in the client's own input
space. Clients identify themselves with the ``X-Client-Token`` header.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Optional

import numpy as np

from .crown import PropagationError
from .f2i import SearchConfig, f2i_search
from .io import load_network
from .nn import AffineNetwork, bilinear_rescale_matrix, forward

log = logging.getLogger("reaas.service")

ANONYMOUS = "anonymous"


class ProtocolError(Exception):
    def __init__(self, code: str, message: str, status: int = 400):
        super().__init__(message)
        self.code = code
        self.status = status

    def payload(self) -> dict:
        return {"error": {"code": self.code, "message": str(self)}}


class QueryLedger:
    """Thread-safe per-client counters of Feature and F2IPerturb queries."""

    def __init__(self):
        self._lock = threading.Lock()
        self._counts: dict = {}

    def record(self, kind: str, client: Optional[str] = None, n: int = 1) -> None:
        if kind not in ("feature", "f2i"):
            raise ValueError(f"unknown query kind {kind!r}")
        client = client or ANONYMOUS
        with self._lock:
            entry = self._counts.setdefault(client, {"feature": 0, "f2i": 0})
            entry[kind] += n

    @property
    def feature_calls(self) -> int:
        with self._lock:
            return sum(c["feature"] for c in self._counts.values())

    @property
    def f2i_calls(self) -> int:
        with self._lock:
            return sum(c["f2i"] for c in self._counts.values())

    def snapshot(self) -> dict:
        with self._lock:
            per_client = {k: dict(v) for k, v in sorted(self._counts.items())}
        return {
            "feature_calls": sum(c["feature"] for c in per_client.values()),
            "f2i_calls": sum(c["f2i"] for c in per_client.values()),
            "per_client": per_client,
        }


@dataclass
class ServiceConfig:
    model_path: str = "encoder.reaas"
    listen_address: str = "127.0.0.1:8470"
    search: SearchConfig = field(default_factory=SearchConfig)
    expected_input: tuple = (8, 8, 1)

    @classmethod
    def load(cls, path=None, env=None) -> "ServiceConfig":
        """Read a JSON config file, then apply environment overrides."""
        env = os.environ if env is None else env
        raw = json.loads(Path(path).read_text()) if path else {}
        cfg = cls(
            model_path=raw.get("model_path", cls.model_path),
            listen_address=raw.get("listen_address", cls.listen_address),
            search=SearchConfig(**raw.get("search", {})),
            expected_input=tuple(raw.get("expected_input", cls.expected_input)),
        )
        cfg.model_path = env.get("REAAS_MODEL_PATH", cfg.model_path)
        cfg.listen_address = env.get("REAAS_LISTEN_ADDRESS", cfg.listen_address)
        return cfg

    @property
    def host_port(self) -> tuple:
        host, _, port = self.listen_address.rpartition(":")
        return host or "127.0.0.1", int(port)


class EncoderService:
    """Transport-independent core of the server; holds the only mutable state (the ledger)."""

    def __init__(self, encoder: AffineNetwork, expected_input, search: SearchConfig = SearchConfig()):
        h, w, c = (int(v) for v in expected_input)
        if h * w * c != encoder.input_dim:
            raise ValueError(f"expected_input {expected_input} does not match encoder input {encoder.input_dim}")
        self.encoder = encoder
        self.expected_input = (h, w, c)
        self.search = search
        self.ledger = QueryLedger()
        self._composed = {self.expected_input: encoder}
        self._lock = threading.Lock()

    @classmethod
    def from_config(cls, cfg: ServiceConfig) -> "EncoderService":
        return cls(load_network(cfg.model_path), cfg.expected_input, cfg.search)

    def encoder_for(self, shape) -> AffineNetwork:
        """Encoder for client images of ``shape``, with rescaling prepended if needed."""
        shape = tuple(int(s) for s in shape)
        with self._lock:
            net = self._composed.get(shape)
        if net is not None:
            return net
        h, w, c = shape
        eh, ew, ec = self.expected_input
        if c != ec:
            raise ProtocolError("bad_channels", f"encoder expects {ec} channels, got {c}")
        rescale = bilinear_rescale_matrix(h, w, eh, ew, c)
        net = self.encoder.with_input_transform(rescale.weight)
        with self._lock:
            self._composed[shape] = net
        return net

    def _parse(self, body: dict):
        try:
            shape = [int(s) for s in body["shape"]]
            pixels = np.asarray(body["pixels"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError("malformed", f"malformed payload: {exc}") from exc
        if len(shape) != 3 or min(shape) < 1:
            raise ProtocolError("malformed", "shape must be three positive integers [h, w, c]")
        if pixels.ndim not in (1, 2) or pixels.shape[-1] != np.prod(shape):
            raise ProtocolError("malformed", f"pixel count does not match shape {shape}")
        if not np.all(np.isfinite(pixels)):
            raise ProtocolError("malformed", "pixels must be finite")
        return tuple(shape), pixels

    def feature(self, body: dict, client: Optional[str] = None) -> dict:
        shape, pixels = self._parse(body)
        net = self.encoder_for(shape)
        out = forward(net, pixels)
        n = 1 if pixels.ndim == 1 else pixels.shape[0]
        self.ledger.record("feature", client, n)
        if pixels.ndim == 1:
            return {"feature": out.tolist()}
        return {"features": out.tolist()}

    def f2i(self, body: dict, client: Optional[str] = None) -> dict:
        shape, pixels = self._parse(body)
        if pixels.ndim != 1:
            raise ProtocolError("malformed", "f2iperturb takes a single image")
        try:
            radius = float(body["feature_radius"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError("malformed", f"bad feature_radius: {exc}") from exc
        if not radius > 0 or not np.isfinite(radius):
            raise ProtocolError("bad_radius", "feature_radius must be a positive finite number")
        net = self.encoder_for(shape)
        try:
            result = f2i_search(net, pixels, radius, self.search)
        except PropagationError as exc:
            raise ProtocolError("propagation_failed", str(exc), status=500) from exc
        self.ledger.record("f2i", client)
        return {"input_radius": result.radius, "rounds": result.rounds, "degenerate": result.degenerate}

    def info(self) -> dict:
        h, w, c = self.expected_input
        return {
            "expected_input": [h, w, c],
            "feature_dim": self.encoder.output_dim,
            "search": {"rho_low_init": self.search.rho_low_init,
                       "rho_high_init": self.search.rho_high_init,
                       "beta": self.search.beta},
        }


def encode(obj) -> bytes:
    # repr-based float formatting round-trips float64 exactly
    return json.dumps(obj, separators=(",", ":")).encode()


class _Handler(BaseHTTPRequestHandler):
    service: EncoderService = None
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):
        log.debug("%s " + fmt, self.address_string(), *args)

    def _send(self, status: int, body: dict) -> None:
        data = encode(body)
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_GET(self):
        if self.path == "/ledger":
            self._send(200, self.service.ledger.snapshot())
        elif self.path == "/info":
            self._send(200, self.service.info())
        else:
            self._send(404, {"error": {"code": "not_found", "message": self.path}})

    def do_POST(self):
        start = time.perf_counter()
        handlers = {"/feature": self.service.feature, "/f2iperturb": self.service.f2i}
        handler = handlers.get(self.path)
        length = int(self.headers.get("Content-Length", 0))
        raw = self.rfile.read(length)
        if handler is None:
            self._send(404, {"error": {"code": "not_found", "message": self.path}})
            return
        client = self.headers.get("X-Client-Token") or ANONYMOUS
        try:
            try:
                body = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ProtocolError("malformed", f"invalid JSON: {exc}") from exc
            if not isinstance(body, dict):
                raise ProtocolError("malformed", "body must be a JSON object")
            status, reply = 200, handler(body, client)
        except ProtocolError as exc:
            status, reply = exc.status, exc.payload()
        self._send(status, reply)
        log.info("%s client=%s status=%d latency_ms=%.3f", self.path, client, status,
                 1000 * (time.perf_counter() - start))


def make_server(service: EncoderService, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    handler = type("Handler", (_Handler,), {"service": service})
    server = ThreadingHTTPServer((host, port), handler)
    server.daemon_threads = True
    return server


class BackgroundServer:
    """Run a server on a daemon thread (context manager); ``url`` is its base URL."""

    def __init__(self, service: EncoderService, host: str = "127.0.0.1", port: int = 0):
        self.service = service
        self.server = make_server(service, host, port)
        self._thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self.server.server_address[:2]
        return f"http://{host}:{port}"

    def __enter__(self):
        self._thread.start()
        return self

    def __exit__(self, *exc):
        self.server.shutdown()
        self.server.server_close()
        self._thread.join()


def serve(cfg: ServiceConfig) -> None:
    service = EncoderService.from_config(cfg)
    host, port = cfg.host_port
    server = make_server(service, host, port)
    log.info("serving %s on %s:%d", cfg.model_path, host, server.server_address[1])
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
