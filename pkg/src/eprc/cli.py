"""Command line interface: ``eprc {train,eval,sweep,decompress,info,fetch}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric abort.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .autodiff import NonFiniteError
from .container import ContainerError, deserialize, report_size, serialize
from .data import DataError, Dataset, fetch_mnist, load_mnist, make_synthetic, verify
from .decoders import MODES
from .kernels import backend_name
from .models import ARCHITECTURES, build_model
from .trainer import LossConfig, evaluate, train

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4
CSV_COLUMNS = ["lambda", "total_bytes", "payload_bytes", "table_bytes", "psi_bytes", "error_rate", "steps", "seed"]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    arch: str = "lenet300"
    decoder: str | None = None       # decoder of the reparameterized group (conv, else dense)
    ell: int | None = None
    lam: float = 0.0
    steps: int = 20000
    seed: int = 0
    data: str = "mnist"
    batch_size: int = 128
    train_size: int = 10000          # synthetic data only
    hidden: tuple = (32,)            # mlp only
    data_dir: str | None = None
    out: str | None = None
    metrics: str | None = None

    def validate(self) -> "RunConfig":
        if self.arch not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.arch!r}; choose from {sorted(ARCHITECTURES)}")
        if self.data not in ("mnist", "synthetic"):
            raise ConfigError(f"unknown data source {self.data!r}")
        if self.decoder is not None and self.decoder not in MODES:
            raise ConfigError(f"unknown decoder {self.decoder!r}")
        if self.ell is not None and self.ell < 1:
            raise ConfigError("--ell must be >= 1")
        try:
            LossConfig(lam=self.lam, steps=self.steps, seed=self.seed, batch_size=self.batch_size)
            self.model_spec()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self

    def model_spec(self):
        opts = {"hidden": tuple(self.hidden)} if self.arch == "mlp" else {}
        spec = build_model(self.arch, **opts)
        names = [g.name for g in spec.groups]
        target = "conv" if "conv" in names else ("dense" if "dense" in names else "classifier")
        changes = {}
        if self.ell is not None:
            changes["ell"] = self.ell
        if self.decoder is not None:
            changes["decoder"] = self.decoder
        elif self.ell not in (None, 1):
            changes["decoder"] = "dft"
        return spec.configure(target, **changes) if changes else spec

    def loss_config(self) -> LossConfig:
        return LossConfig(lam=self.lam, steps=self.steps, seed=self.seed, batch_size=self.batch_size)


def load_data(cfg: RunConfig) -> tuple[Dataset, Dataset]:
    if cfg.data == "synthetic":
        return make_synthetic(cfg.train_size, cfg.seed), make_synthetic(2000, 10_000 + cfg.seed)
    return load_mnist("train", cfg.data_dir), load_mnist("test", cfg.data_dir)


def _check_writable(paths, force: bool):
    for p in paths:
        if p and Path(p).exists() and not force:
            raise ConfigError(f"{p} exists; pass --force to overwrite")


def run_training(cfg: RunConfig, echo=print) -> dict:
    """Train, finalize and (optionally) write the container; returns a result record."""
    spec = cfg.model_spec()
    train_set, test_set = load_data(cfg)
    result = train(spec, train_set, cfg.loss_config(), metrics_path=cfg.metrics,
                   log_every=max(1, min(500, cfg.steps // 10)))
    blob = serialize(result.artifacts)
    size = report_size(blob)
    error = evaluate(result.artifacts, test_set)
    if cfg.out:
        Path(cfg.out).write_bytes(blob)
        record = {"config": asdict(cfg), "size": size.as_dict(), "error_rate": error,
                  "seconds": result.seconds, "backend": backend_name()}
        Path(cfg.out + ".json").write_text(json.dumps(record, indent=2) + "\n")
    echo(_size_text(size))
    echo(f"test error {error:.4f} ({round(error * len(test_set.labels))}/{len(test_set.labels)}), "
         f"{result.seconds:.1f} s")
    return {"lambda": cfg.lam, "total_bytes": size.total_bytes, "payload_bytes": size.payload_bytes,
            "table_bytes": size.table_bytes, "psi_bytes": size.psi_bytes, "error_rate": error,
            "steps": cfg.steps, "seed": cfg.seed}


def _size_text(size) -> str:
    return (f"total {size.total_bytes} B = payload {size.payload_bytes} + tables {size.table_bytes} + "
            f"decoders {size.psi_bytes} + header {size.header_bytes} + raw {size.extra_bytes}; "
            f"ratio {size.ratio:.1f}x vs {size.baseline_bytes} B")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _config_from_args(args) -> RunConfig:
    return RunConfig(arch=args.arch, decoder=args.decoder, ell=args.ell, lam=getattr(args, "lam", 0.0),
                     steps=args.steps, seed=args.seed, data=args.data, batch_size=args.batch_size,
                     train_size=args.train_size, hidden=tuple(args.hidden), data_dir=args.data_dir,
                     out=getattr(args, "out", None), metrics=getattr(args, "metrics", None)).validate()


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    _check_writable([cfg.out, cfg.out and cfg.out + ".json", cfg.metrics], args.force)
    run_training(cfg)
    return 0


def _read_container(path):
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None


def cmd_eval(args) -> int:
    art = deserialize(_read_container(args.container))
    if args.arch and args.arch != art.spec.name:
        raise ConfigError(f"container holds a {art.spec.name!r} model, not {args.arch!r}")
    cfg = RunConfig(data=args.data, data_dir=args.data_dir, seed=args.seed, arch=art.spec.name)
    _, test_set = load_data(cfg)
    try:
        error = evaluate(art, test_set)
    except ValueError as exc:
        raise ConfigError(f"container/dataset mismatch: {exc}") from None
    wrong = round(error * len(test_set))
    print(f"test error {error:.4f} ({wrong}/{len(test_set)})")
    return 0


def _sweep_point(cfg: RunConfig) -> dict:
    try:
        return run_training(cfg, echo=lambda *_: None)
    except (ValueError, NonFiniteError, FloatingPointError) as exc:
        print(f"lambda={cfg.lam}: failed: {exc}", file=sys.stderr)
        row = {k: math.nan for k in CSV_COLUMNS}
        row.update({"lambda": cfg.lam, "steps": cfg.steps, "seed": cfg.seed})
        return row


def _parse_floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse number list {text!r}") from None


def cmd_sweep(args) -> int:
    lams = _parse_floats(args.lambdas)
    if len(lams) < 2:
        raise ConfigError("a sweep needs at least two lambda values")
    base = _config_from_args(args)
    decoders = args.compare.split(",") if args.compare else [base.decoder]
    outputs = {}
    for mode in decoders:
        if mode is not None and mode not in MODES:
            raise ConfigError(f"unknown decoder {mode!r}")
        path = Path(args.csv)
        if len(decoders) > 1:
            path = path.with_name(f"{path.stem}-{mode}{path.suffix}")
        outputs[mode] = path
    _check_writable(outputs.values(), args.force)
    load_data(base)  # fail early on missing data
    for mode, path in outputs.items():
        ell = base.ell
        if mode == "scalar":
            ell = 1
        cfgs = [replace(base, lam=lam, decoder=mode, ell=ell, out=None, metrics=None).validate() for lam in lams]
        if args.parallel > 1:
            with ProcessPoolExecutor(max_workers=args.parallel) as pool:
                rows = list(pool.map(_sweep_point, cfgs))
        else:
            rows = [_sweep_point(c) for c in cfgs]
        with open(path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=CSV_COLUMNS)
            w.writeheader()
            for row in rows:
                w.writerow({k: row[k] for k in CSV_COLUMNS})
        print(f"wrote {path}")
    return 0


def cmd_decompress(args) -> int:
    art = deserialize(_read_container(args.container))
    _check_writable([args.out], args.force)
    np.savez(args.out, **art.parameters())
    print(f"wrote {len(art.spec.slots)} tensors ({art.spec.num_parameters} parameters) to {args.out}")
    return 0


def cmd_info(args) -> int:
    blob = _read_container(args.container)
    art = deserialize(blob)
    size = report_size(blob)
    print(f"architecture {art.spec.name}, {art.spec.num_parameters} parameters")
    for g in art.spec.groups:
        rows = sum(art.spec.slot(s).shape.size for s in g.slots) // g.ell
        print(f"  group {g.name}: decoder {g.decoder}, ell {g.ell}, d {rows}, "
              f"{'coded' if g.coded else 'raw'}, slots {', '.join(g.slots)}")
    print(_size_text(size))
    print(f"self-information {art.self_information_bits() / 8:.1f} B")
    return 0


def cmd_fetch(args) -> int:
    d = fetch_mnist(args.data_dir, args.mirror) if not args.verify_only else None
    status = verify(args.data_dir)
    for name, ok in status.items():
        print(f"{'ok ' if ok else 'BAD'} {name}")
    if d is not None:
        print(f"data in {d}")
    return 0 if all(status.values()) else EXIT_DATA


def _add_run_args(p: argparse.ArgumentParser, train: bool = True):
    p.add_argument("--arch", default="lenet300", help="lenet300, smallconv or mlp")
    p.add_argument("--decoder", choices=MODES, default=None,
                   help="decoder of the main weight group (conv group for smallconv)")
    p.add_argument("--ell", type=int, default=None, help="latent width of that group")
    p.add_argument("--steps", type=int, default=20000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--data", choices=("mnist", "synthetic"), default="mnist")
    p.add_argument("--data-dir", default=None, help="MNIST directory (default: $EPRC_DATA_DIR)")
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--train-size", type=int, default=10000, help="synthetic training examples")
    p.add_argument("--hidden", type=int, nargs="*", default=[32], help="mlp hidden widths")
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="eprc", description="Entropy-penalized reparameterized model compression")
    ap.add_argument("--version", action="version", version=f"eprc {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train, compress and write a container")
    _add_run_args(p)
    p.add_argument("--lambda", dest="lam", type=float, default=0.0, help="rate penalty per bit")
    p.add_argument("--out", required=True, help="container path (.eprc)")
    p.add_argument("--metrics", default=None, help="JSON-lines training metrics path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="top-1 error of a container")
    p.add_argument("container")
    p.add_argument("--arch", default=None, help="expected architecture")
    p.add_argument("--data", choices=("mnist", "synthetic"), default="mnist")
    p.add_argument("--data-dir", default=None)
    p.add_argument("--seed", type=int, default=0, help="synthetic data seed")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="train at several lambdas and write a CSV")
    _add_run_args(p)
    p.add_argument("--lambda", dest="lambdas", required=True, help="comma-separated lambda values")
    p.add_argument("--csv", required=True)
    p.add_argument("--compare", default=None, help="comma-separated decoder modes, one CSV each")
    p.add_argument("--parallel", type=int, default=1, help="independent training processes")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("decompress", help="decode a container to an .npz of parameters")
    p.add_argument("container")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_decompress)

    p = sub.add_parser("info", help="show groups and the size breakdown")
    p.add_argument("container")
    p.set_defaults(func=cmd_info)

    p = sub.add_parser("fetch", help="download and verify MNIST")
    p.add_argument("--data-dir", default=None)
    p.add_argument("--mirror", default="https://storage.googleapis.com/cvdf-datasets/mnist/")
    p.add_argument("--verify-only", action="store_true")
    p.set_defaults(func=cmd_fetch)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ContainerError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NonFiniteError, FloatingPointError) as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
