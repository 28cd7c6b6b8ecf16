"""Command-line entry point: ``reaas <subcommand>``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import client as cl
from .io import load_dataset, load_network, save_dataset, save_network
from .data import render_images
from .metrics import lp_radii
from .nn import init_network
from .service import EncoderService, ServiceConfig, serve
from .smoothing import SmoothingConfig
from .spectral import SpectralConfig, exact_lipschitz_product, pretrain_encoder


def _meta_path(path) -> Path:
    return Path(str(path) + ".json")


def _load_data(path):
    meta = json.loads(_meta_path(path).read_text()) if _meta_path(path).exists() else {}
    return load_dataset(path, meta.get("shape"))


def _client(args, data) -> cl.Client:
    shape = data.shape or tuple(args.shape)
    if args.server:
        handle = cl.RemoteService(args.server, token=args.token)
    else:
        enc = load_network(args.encoder)
        expected = tuple(args.encoder_shape) if args.encoder_shape else shape
        handle = cl.LocalService(EncoderService(enc, expected), token=args.token)
    return cl.Client(handle, shape)


def cmd_gen_data(args):
    data = render_images(args.n, tuple(args.size), args.classes, args.channels,
                         pixel_noise=args.pixel_noise, seed=args.seed)
    save_dataset(data, args.out)
    _meta_path(args.out).write_text(json.dumps({"shape": list(data.shape)}))
    print(f"wrote {len(data)} samples of shape {data.shape} to {args.out}")


def cmd_pretrain(args):
    data = _load_data(args.data)
    net = init_network([data.dim, *args.hidden, data.num_classes], seed=args.seed)
    enc = pretrain_encoder(net, data, SpectralConfig(args.lam, args.power_iters),
                           epochs=args.epochs, lr=args.lr, batch=args.batch, seed=args.seed,
                           momentum=args.momentum)
    save_network(enc, args.out)
    print(f"encoder saved to {args.out}; spectral-norm product {exact_lipschitz_product(enc):.6g}")


def cmd_serve(args):
    cfg = ServiceConfig.load(args.config)
    if args.model:
        cfg.model_path = args.model
    if args.listen:
        cfg.listen_address = args.listen
    if args.shape:
        cfg.expected_input = tuple(args.shape)
    serve(cfg)


def cmd_train_downstream(args):
    data = _load_data(args.data)
    client = _client(args, data)
    kw = dict(hidden=tuple(args.hidden), epochs=args.epochs, lr=args.lr, batch=args.batch,
              seed=args.seed, momentum=args.momentum)
    if args.mode == "seaas":
        clf = cl.train_downstream_seaas(client, data, sigma=args.sigma, **kw)
    else:
        clf = cl.train_downstream(client, data, method=args.method, sigma=args.sigma, **kw)
    save_network(clf, args.out)
    print(json.dumps(client.costs.snapshot()))


def cmd_certify(args):
    data = _load_data(args.data)
    if args.limit:
        data = data.subset(slice(0, args.limit))
    client = _client(args, data)
    clf = load_network(args.classifier)
    smoothing = SmoothingConfig(args.n_samples, args.sigma, args.alpha, args.seed)
    if args.method == "bc":
        if args.mode != "reaas":
            sys.exit("BC certification needs the F2IPerturb endpoint (REaaS mode)")
        report = cl.certify_bc(client, data, clf, args.precision)
    elif args.mode == "reaas":
        report = cl.certify_sc_reaas(client, data, clf, smoothing)
    else:
        report = cl.certify_sc_seaas(client, data, clf, smoothing)
    Path(args.out).write_text(json.dumps(report.to_dict(), indent=1))
    print(f"ACR {report.acr:.6f} over {len(report.certificates)} inputs; report in {args.out}")


def cmd_report(args):
    rep = json.loads(Path(args.report).read_text())
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "acr.txt").write_text(f"{rep['acr']:.10g}\n")
    with open(out / "curve.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["perturbation_size", "certified_accuracy"])
        w.writerows(rep["curve"])
    (out / "ledger.json").write_text(json.dumps(rep["ledger"], indent=1))
    with open(out / "radii.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["input_id", "label", "predicted", "l2", "l1", "linf"])
        for c in rep["certificates"]:
            r = c["input_radius"]
            conv = lp_radii(r, rep["input_dim"]) if r is not None else {"l2": "", "l1": "", "linf": ""}
            w.writerow([c["input_id"], c["label"], c["predicted"], conv["l2"], conv["l1"], conv["linf"]])
    print(f"ACR {rep['acr']:.6f}; files written to {out}")


def cmd_sweep_sigma(args):
    train, test = _load_data(args.data), _load_data(args.test)
    results = {}
    for sigma in args.sigmas:
        client = _client(args, train)
        clf = cl.train_downstream(client, train, "sc", sigma, tuple(args.hidden), args.epochs,
                                  args.lr, args.batch, args.seed, args.momentum)
        rep = cl.certify_sc_reaas(client, test, clf, SmoothingConfig(args.n_samples, sigma, args.alpha, args.seed))
        results[str(sigma)] = rep.acr
        print(f"sigma={sigma}: ACR {rep.acr:.6f}")
    best = max(results, key=results.get)
    print(json.dumps({"acr": results, "best_sigma": float(best)}))


def _service_args(p):
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--server", help="base URL of a running service")
    g.add_argument("--encoder", help="encoder model file, served in-process")
    p.add_argument("--encoder-shape", type=int, nargs=3, metavar=("H", "W", "C"))
    p.add_argument("--shape", type=int, nargs=3, metavar=("H", "W", "C"), default=None,
                   help="input shape when the dataset has no sidecar metadata")
    p.add_argument("--token", default=None, help="client token for the server ledger")


def _train_args(p, epochs=25, lr=0.06, batch=512):
    p.add_argument("--epochs", type=int, default=epochs)
    p.add_argument("--lr", type=float, default=lr)
    p.add_argument("--batch", type=int, default=batch)
    p.add_argument("--momentum", type=float, default=0.0)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="reaas")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="write a seeded synthetic image dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--size", type=int, nargs=2, default=[8, 8], metavar=("H", "W"))
    p.add_argument("--channels", type=int, default=1)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--pixel-noise", type=float, default=0.0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("pretrain", parents=[common], help="spectral-norm regularised encoder pre-training")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--hidden", type=int, nargs="+", default=[64, 32],
                   help="encoder layer widths; the last is the feature dimension")
    p.add_argument("--lam", type=float, default=0.00075)
    p.add_argument("--power-iters", type=int, default=10)
    _train_args(p, epochs=50, batch=32)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("serve", parents=[common], help="run the encoder service")
    p.add_argument("--config")
    p.add_argument("--model")
    p.add_argument("--listen")
    p.add_argument("--shape", type=int, nargs=3, metavar=("H", "W", "C"))
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("train-downstream", parents=[common], help="train a downstream classifier on served features")
    _service_args(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--method", choices=["bc", "sc"], default="bc")
    p.add_argument("--mode", choices=["reaas", "seaas"], default="reaas")
    p.add_argument("--sigma", type=float, default=0.5)
    p.add_argument("--hidden", type=int, nargs="+", default=[256, 256])
    _train_args(p)
    p.set_defaults(func=cmd_train_downstream)

    p = sub.add_parser("certify", parents=[common], help="certify a test set")
    _service_args(p)
    p.add_argument("--data", required=True)
    p.add_argument("--classifier", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--method", choices=["bc", "sc"], default="bc")
    p.add_argument("--mode", choices=["reaas", "seaas"], default="reaas")
    p.add_argument("--n-samples", type=int, default=100_000)
    p.add_argument("--sigma", type=float, default=0.5)
    p.add_argument("--alpha", type=float, default=0.001)
    p.add_argument("--precision", type=float, default=0.001)
    p.add_argument("--limit", type=int, default=0, help="certify only the first N inputs")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("report", parents=[common], help="write ACR, curve, ledger and lp radii as text files")
    p.add_argument("report")
    p.add_argument("--outdir", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("sweep-sigma", parents=[common], help="train+certify SC over several noise levels")
    _service_args(p)
    p.add_argument("--data", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--sigmas", type=float, nargs="+", default=[0.125, 0.25, 0.5, 0.75, 1.0])
    p.add_argument("--n-samples", type=int, default=10_000)
    p.add_argument("--alpha", type=float, default=0.001)
    p.add_argument("--hidden", type=int, nargs="+", default=[256, 256])
    _train_args(p)
    p.set_defaults(func=cmd_sweep_sigma)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    args.func(args)


if __name__ == "__main__":
    main()
