"""Command-line entry point: keygen | bench | train | synth.

Machine-readable JSON goes to stdout, diagnostics to stderr. Exit codes:
0 success, 2 usage/configuration error, 3 verification failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import bench, paillier
from .backends import get_backend
from .flr.data import (
    DatasetSpec,
    Table,
    ingest_csv,
    make_synthetic,
    write_csv,
)
from .flr.objective import CentralizedTaylorTrainer
from .flr.parties import FlrConfig, HeteroFederation, HomoFederation

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VERIFY = 3


def _emit(obj) -> None:
    print(json.dumps(obj))


def _load_or_generate_keys(args) -> paillier.KeyPair:
    if getattr(args, "key", None):
        with open(args.key) as fh:
            loaded = paillier.import_key(json.load(fh))
        if not isinstance(loaded, paillier.KeyPair):
            raise ValueError(f"{args.key}: private primes required here")
        return loaded
    bits = args.key_bits
    return paillier.keygen(bits, paillier.default_rng(args.seed),
                           allow_insecure=bits < paillier.SECURE_KEY_BITS)


def cmd_keygen(args) -> int:
    keys = paillier.keygen(args.bits, paillier.default_rng(args.seed),
                           allow_insecure=args.unsafe)
    if os.path.exists(args.out) and not args.force:
        raise ValueError(f"{args.out} exists; pass --force to overwrite")
    data = paillier.export_key(keys.public if args.public_only else keys)
    with open(args.out, "w") as fh:
        json.dump(data, fh, indent=2)
        fh.write("\n")
    _emit({"path": args.out, "key_bits": keys.public.key_bits,
           "public_only": args.public_only})
    return EXIT_OK


def cmd_bench(args) -> int:
    keys = _load_or_generate_keys(args)
    backend = get_backend(args.backend, args.workers)
    try:
        report = bench.run_benchmark(args.op, keys, args.count, backend,
                                     seed=args.seed, warmup=args.warmup,
                                     repeats=args.repeats)
        if args.verify:
            with get_backend("parallel" if args.backend == "naive" else "naive",
                             args.workers) as other:
                report.verified = bench.verify_backends(
                    args.op, keys, min(args.count, 4096), backend, other,
                    seed=args.seed)
        _emit(report.to_json())
        if report.verified is False:
            print("backend outputs disagree", file=sys.stderr)
            return EXIT_VERIFY
        return EXIT_OK
    finally:
        backend.close()


def _oracle_for(mode: str, ingest, config: FlrConfig):
    if mode == "hetero":
        guest, host = ingest.parties[0], ingest.parties[1]
        X = np.hstack([guest.X, np.ones((guest.rows, 1)), host.X])
        return CentralizedTaylorTrainer(X, guest.y, ingest.batches,
                                        config.learning_rate,
                                        loss_indices=ingest.loss_indices)
    X = np.vstack([p.X for p in ingest.parties])
    y = np.concatenate([p.y for p in ingest.parties])
    X = np.hstack([X, np.ones((len(X), 1))])
    return CentralizedTaylorTrainer(X, y, [np.arange(len(y))],
                                    config.learning_rate)


def cmd_train(args) -> int:
    config = FlrConfig(learning_rate=args.lr, batch_size=args.batch_size,
                       seed=args.seed, caching_enabled=args.cache == "on")
    spec = DatasetSpec(
        args.dataset,
        mode="vertical" if args.mode == "hetero" else "horizontal",
        parties=2 if args.mode == "hetero" else args.parties,
        batch_size=args.batch_size,
        seed=args.seed,
    )
    ingest = ingest_csv(spec)
    keys = _load_or_generate_keys(args)
    _emit({
        "mode": args.mode, "dataset": args.dataset, "epochs": args.epochs,
        "batch_size": args.batch_size, "learning_rate": args.lr,
        "key_bits": keys.public.key_bits, "seed": args.seed,
        "parties": len(ingest.parties), "cache": args.cache,
    })
    if args.mode == "hetero":
        federation = HeteroFederation(ingest.parties[0], ingest.parties[1],
                                      ingest.batches, ingest.loss_indices,
                                      keys, config)
    else:
        federation = HomoFederation(ingest.parties, keys, config)
    losses = []
    for _ in range(args.epochs):
        result = federation.run_epoch()
        losses.append(result.loss)
        _emit({"epoch": result.epoch, "loss": result.loss,
               "grad_norm": result.grad_norm, "ledger": result.ledger})
    if args.oracle and args.epochs > 0:
        trace = _oracle_for(args.mode, ingest, config).train(args.epochs)
        deviation = max(abs(a - b) for a, b in zip(losses, trace.losses))
        _emit({"oracle_max_loss_deviation": deviation})
    return EXIT_OK


def cmd_synth(args) -> int:
    table = make_synthetic(args.rows, args.features, args.seed, noise=args.noise)
    written = []
    if args.mode == "joint":
        write_csv(table, args.out)
        written.append(args.out)
    else:
        from .flr.data import horizontal_split, vertical_split

        stem = args.out[:-4] if args.out.endswith(".csv") else args.out
        parts = (vertical_split(table, args.parties) if args.mode == "vertical"
                 else horizontal_split(table, args.parties))
        for part in parts:
            path = f"{stem}_{part.name}.csv"
            write_csv(Table(part.ids, part.feature_names, part.X, part.y), path)
            written.append(path)
    _emit({"files": written, "rows": args.rows, "features": args.features,
           "seed": args.seed})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hebatch",
        description="Batch Paillier operators, federated LR training, benchmarks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", help="generate a key file")
    p.add_argument("--bits", type=int, default=1024)
    p.add_argument("--seed", type=int, default=None,
                   help="deterministic test keys; omit for OS randomness")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.add_argument("--unsafe", action="store_true",
                   help="allow key sizes below 1024 bits")
    p.add_argument("--public-only", action="store_true")
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("bench", help="operator throughput micro-benchmark")
    p.add_argument("--op", required=True, choices=list(bench.operators.OPERATOR_NAMES))
    p.add_argument("--count", type=int, default=100_000)
    p.add_argument("--key-bits", type=int, default=1024)
    p.add_argument("--key", help="reuse a key file instead of generating")
    p.add_argument("--backend", choices=["naive", "parallel"], default="naive")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--verify", action="store_true",
                   help="cross-check against the other backend, bit-exact")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("train", help="run federated LR training")
    p.add_argument("--mode", choices=["hetero", "homo"], required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=0.15)
    p.add_argument("--key-bits", type=int, default=1024)
    p.add_argument("--key")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--parties", type=int, default=2, help="homogeneous mode only")
    p.add_argument("--cache", choices=["on", "off"], default="on",
                   help="arena result caching (IO-ledger comparison)")
    p.add_argument("--oracle", action="store_true",
                   help="also run the centralized plaintext trainer and report "
                        "the max per-epoch loss deviation")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--rows", type=int, default=1000)
    p.add_argument("--features", type=int, default=8)
    p.add_argument("--parties", type=int, default=2)
    p.add_argument("--mode", choices=["joint", "vertical", "horizontal"],
                   default="joint")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.25)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
