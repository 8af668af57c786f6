"""Command-line interface: train, eval, gradcheck, sweep, bench, inspect.

Every run echoes its full effective configuration and a fingerprint (hash of
all effective settings) to stderr so it can be rerun exactly. Exit codes are
a stable contract: 0 success, 2 usage or configuration error, 3 data error,
4 numeric failure. Flags win over values from an optional ``--config`` JSON
file; one ``--seed`` drives all randomness, with subsystem seeds derived by
fixed offsets.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time

import numpy as np

from .data import make_folds, parse_tu
from .errors import ConfigError, DataError, DkepoolError, NumericError
from .gnn import GnnLayer, GraphBatch
from .gradcheck import OPERATOR_CHECKS, run_suite
from .linalg import jacobi_eigen, newton_schulz_sqrt
from .pooling import POOL_KINDS, PoolingOperator
from .tensor import Tape, Tensor
from .train import TrainConfig, run_cv, train_fold

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

POOL_FLAGS = {
    "mean": "mean",
    "sum": "sum",
    "max": "max",
    "dkepool": "dkepool",
    "dkepool_r": "dkepool_robust",
    "gauss_vcat": "gauss_vcat",
    "gauss_embd": "gauss_embd",
}

D_SWEEP = [0, 200, 400, 600, 800]
SNR_SWEEP = [10.0, 15.0, 20.0]
DEFAULT_SNR_DB = 15.0


def _add_data_flags(p):
    p.add_argument("--dataset", required=True, help="directory with TU-format files")
    p.add_argument("--name", required=True, help="TU dataset name (file prefix)")


def _add_train_flags(p):
    _add_data_flags(p)
    p.add_argument("--pool", choices=sorted(POOL_FLAGS), default=None)
    p.add_argument("--d", type=int, default=None, help="projection dim, 0 = none")
    p.add_argument("--snr", default=None,
                   help="noise SNR in dB, or 'off' (default: 15 for dkepool_r, off otherwise)")
    p.add_argument("--ns-iters", type=int, default=None)
    p.add_argument("--folds", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--hidden", type=int, default=None)
    p.add_argument("--gnn", choices=["gin5", "gcn3"], default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--weight-decay", type=float, default=None)
    p.add_argument("--config", default=None, help="JSON config file (flags win)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dkepool", description="Graph classification with distribution pooling"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="k-fold cross-validation run")
    _add_train_flags(p_train)
    p_train.add_argument("--out", default=None, help="write the JSON report here")

    p_eval = sub.add_parser("eval", help="train and score a single held-out fold")
    _add_train_flags(p_eval)
    p_eval.add_argument("--fold", type=int, default=0)

    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p_grad.add_argument("--op", action="append", default=None,
                        choices=sorted(OPERATOR_CHECKS),
                        help="check only these operators (repeatable)")
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.add_argument("--step", type=float, default=1e-5)

    p_sweep = sub.add_parser("sweep", help="grid sweep over d or snr, CSV output")
    _add_train_flags(p_sweep)
    p_sweep.add_argument("--axis", choices=["d", "snr"], required=True)
    p_sweep.add_argument("--out", default=None, help="write the CSV here")

    p_bench = sub.add_parser("bench", help="time the core operators")
    p_bench.add_argument("--seed", type=int, default=0)

    p_inspect = sub.add_parser("inspect", help="print dataset statistics")
    _add_data_flags(p_inspect)
    return parser


def _load_file_config(path):
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"config file must hold a JSON object: {path}")
    return cfg


def _parse_snr(value):
    if value is None:
        return None
    if isinstance(value, str) and value.lower() in ("off", "none", "inf"):
        return "off"
    try:
        return float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"--snr must be a number or 'off', got {value!r}") from exc


def resolve_train_config(args) -> TrainConfig:
    """Merge flags over --config file values over defaults."""
    file_cfg = _load_file_config(args.config)

    def pick(flag, key, default):
        if flag is not None:
            return flag
        return file_cfg.get(key, default)

    pool_flag = pick(args.pool, "pool", "dkepool_r")
    if pool_flag not in POOL_FLAGS:
        raise ConfigError(f"unknown pool {pool_flag!r}; choices: {sorted(POOL_FLAGS)}")
    pool = POOL_FLAGS[pool_flag]

    snr = _parse_snr(pick(_parse_snr(args.snr), "snr", None))
    if snr is None:
        snr = DEFAULT_SNR_DB if pool == "dkepool_robust" else "off"
    snr_db = None if snr == "off" else float(snr)

    return TrainConfig(
        gnn=pick(args.gnn, "gnn", "gin5"),
        hidden=pick(args.hidden, "hidden", 16),
        pool=pool,
        d=pick(args.d, "d", 0),
        ns_iterations=pick(args.ns_iters, "ns_iters", 5),
        snr_db=snr_db,
        batch_size=pick(args.batch_size, "batch_size", 32),
        learning_rate=pick(args.lr, "lr", 0.01),
        epochs=pick(args.epochs, "epochs", 100),
        weight_decay=pick(args.weight_decay, "weight_decay", 1e-4),
        folds=pick(args.folds, "folds", 10),
        seed=pick(args.seed, "seed", 0),
    )


def _echo_config(config: TrainConfig, dataset_name: str):
    fingerprint = config.fingerprint(dataset_name)
    payload = {"dataset": dataset_name, **config.__dict__}
    print(f"config fingerprint={fingerprint}: {json.dumps(payload, sort_keys=True)}",
          file=sys.stderr)
    return fingerprint


def _echo_settings(command, settings):
    """Fingerprint echo for commands without a TrainConfig."""
    payload = {"command": command, **settings}
    blob = json.dumps(payload, sort_keys=True, default=str)
    fingerprint = hashlib.sha256(blob.encode()).hexdigest()[:16]
    print(f"config fingerprint={fingerprint}: {blob}", file=sys.stderr)
    return fingerprint


def cmd_train(args):
    dataset = parse_tu(args.dataset, args.name)
    config = resolve_train_config(args)
    _echo_config(config, dataset.name)
    report = run_cv(dataset, config)
    text = report.to_json()
    print(text)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    return EXIT_OK


def cmd_eval(args):
    dataset = parse_tu(args.dataset, args.name)
    config = resolve_train_config(args)
    fingerprint = _echo_config(config, dataset.name)
    if not (0 <= args.fold < config.folds):
        raise ConfigError(f"--fold must be in 0..{config.folds - 1}")
    started = time.perf_counter()
    plan = make_folds(dataset, config.folds, config.seed)
    train_idx, test_idx = plan.split(args.fold)
    accuracy, losses, _ = train_fold(
        dataset, train_idx, test_idx, config, config.seed + args.fold
    )
    print(json.dumps({
        "dataset": dataset.name,
        "fingerprint": fingerprint,
        "fold": args.fold,
        "accuracy": accuracy,
        "final_train_loss": losses[-1],
        "seconds": time.perf_counter() - started,
    }, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_gradcheck(args):
    _echo_settings("gradcheck", {"op": args.op, "seed": args.seed, "step": args.step})
    results = run_suite(names=args.op, seed=args.seed, step=args.step)
    failed = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name:<20} max rel err {r.max_rel_error:.3e}  "
              f"(tol {r.tolerance:.0e})  {status}")
        failed += not r.passed
    if failed:
        print(f"{failed} operator(s) failed", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_sweep(args):
    dataset = parse_tu(args.dataset, args.name)
    config = resolve_train_config(args)
    _echo_config(config, dataset.name)
    values = D_SWEEP if args.axis == "d" else SNR_SWEEP
    lines = ["axis,value,mean,std,seconds"]
    for value in values:
        overrides = dict(config.__dict__)
        if args.axis == "d":
            overrides["d"] = value
        else:
            overrides["snr_db"] = value
        try:
            report = run_cv(dataset, TrainConfig(**overrides))
            lines.append(
                f"{args.axis},{value},{report.mean},{report.std},"
                f"{report.wallclock_seconds}"
            )
        except DkepoolError as exc:
            print(f"sweep point {args.axis}={value} failed: {exc}", file=sys.stderr)
            lines.append(f"{args.axis},{value},nan,nan,nan")
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    return EXIT_OK


def _time_call(fn, repeats=5):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best * 1e3


def cmd_bench(args):
    _echo_settings("bench", {"seed": args.seed})
    rng = np.random.default_rng(args.seed)
    b = rng.uniform(-1, 1, (16, 16))
    spd = b @ b.T / 16.0 + 0.05 * np.eye(16)
    h = rng.uniform(-1, 1, (50, 16))
    edges = [(i, (i + 1) % 50) for i in range(50)]
    edges += [(v, u) for u, v in edges]
    batch = GraphBatch(h, edges, [0, 50], [0])
    layer = GnnLayer("GIN", 16, 16, rng)

    def ns_forward_backward():
        with Tape() as tape:
            out = newton_schulz_sqrt(Tensor(spd, requires_grad=True), 5)
            tape.backward(out.sum())

    def gin_forward_backward():
        with Tape() as tape:
            out = layer.forward(batch, Tensor(batch.node_features, requires_grad=True))
            tape.backward(out.sum())

    rows = [
        ("newton_schulz_sqrt fwd+bwd (16x16, 5 iters)", ns_forward_backward),
        ("jacobi_eigen (16x16)", lambda: jacobi_eigen(spd)),
        ("gin layer fwd+bwd (50 nodes)", gin_forward_backward),
    ]
    for kind in POOL_KINDS:
        op = PoolingOperator(kind=kind)
        if kind in ("dkepool", "dkepool_robust"):
            op.attach_projection(16, np.random.default_rng(args.seed))
        rows.append((f"pool {kind} (50x16)", lambda op=op: op.pool(Tensor(h))))

    width = max(len(name) for name, _ in rows)
    for name, fn in rows:
        print(f"{name:<{width}}  {_time_call(fn):8.3f} ms")
    return EXIT_OK


def cmd_inspect(args):
    _echo_settings("inspect", {"dataset": args.dataset, "name": args.name})
    dataset = parse_tu(args.dataset, args.name)
    sizes = [g.num_nodes for g in dataset.graphs]
    edge_counts = [len(g.edges) // 2 for g in dataset.graphs]
    labels = dataset.labels()
    print(json.dumps({
        "name": dataset.name,
        "graphs": len(dataset),
        "classes": dataset.num_classes,
        "feature_dim": dataset.feature_dim,
        "feature_source": dataset.feature_source,
        "nodes_avg": float(np.mean(sizes)),
        "nodes_max": int(np.max(sizes)),
        "edges_avg": float(np.mean(edge_counts)),
        "label_histogram": np.bincount(labels).tolist(),
    }, indent=2, sort_keys=True))
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "sweep": cmd_sweep,
    "bench": cmd_bench,
    "inspect": cmd_inspect,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
