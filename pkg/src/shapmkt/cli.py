"""Command line entry point.  Exit codes: 0 ok, 2 bad config or input, 3 protocol abort."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import os
import sys

import numpy as np

from .bristol import load_bristol, serialize_bristol
from .circuits import aes256_circuit, sha256_circuit
from .errors import ConfigError, ProtocolAbort, ShapmktError
from .market import gen_market, load_market, read_dataset_csv, save_market, write_dataset_csv
from .model import TrainConfig, build_preset, save_model, train_utility
from .protocol import ProtocolConfig, _coerce, bench, format_bench, run_plaintext_pipeline, run_protocol
from .valuation import UtilityDataset, build_utility_dataset

BUILTIN_CIRCUITS = {"aes256": aes256_circuit, "sha256": sha256_circuit}


def _config(args) -> ProtocolConfig:
    cfg = ProtocolConfig.from_file(args.config) if args.config else ProtocolConfig()
    kinds = {f.name: f.type for f in dataclasses.fields(ProtocolConfig)}
    changes = {}
    for item in args.set or []:
        key, sep, val = item.partition("=")
        key = key.strip()
        if not sep or key not in kinds:
            raise ConfigError(f"bad override {item!r}")
        try:
            changes[key] = _coerce(kinds[key], val.strip())
        except ValueError:
            raise ConfigError(f"bad value in override {item!r}") from None
    return dataclasses.replace(cfg, **changes).validate()


def _pool_path(sds_path: str) -> str:
    root, _ = os.path.splitext(sds_path)
    return root + ".pool.csv"


def cmd_gen_market(args):
    sc = gen_market(args.owners, args.group_size, args.noise, args.classes, args.dim, args.seed)
    save_market(sc, args.out)
    print(f"wrote {sc.N} owners to {args.out}")


def cmd_build_sds(args):
    sc = load_market(args.market, args.preshare, args.seed)
    X, y, who = sc.preshared(np.random.default_rng(args.seed + 1))
    sds = build_utility_dataset(
        X, y, sc.X_val, sc.y_val, args.size, np.random.default_rng(args.seed + 2), sc.n_classes, args.law, who
    )
    sds.to_csv(args.out)
    write_dataset_csv(_pool_path(args.out), X, y)
    print(f"wrote {sds.M} entries to {args.out} (pool: {_pool_path(args.out)})")


def cmd_train_utility(args):
    subsets, u = UtilityDataset.read_entries(args.sds)
    X, y = read_dataset_csv(_pool_path(args.sds))
    m = build_preset(args.preset, X.shape[1], args.classes or int(y.max()) + 1, args.label_aware, args.seed)
    cfg = TrainConfig(epochs=args.epochs, inner_steps=args.inner_steps, seed=args.seed)
    m, hist = train_utility(m, X, y if args.label_aware else None, subsets, u, cfg)
    save_model(m, args.out)
    print(f"final loss {hist[-1]:.6f}; model written to {args.out}")


def _write_report(report, out):
    if not out:
        return
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "owners.csv"), "w") as fh:
        fh.write(report.owners_csv())
    with open(os.path.join(out, "utilities.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["coalition", "utility"])
        for c, v in sorted(report.utilities.items(), key=lambda kv: (len(kv[0]), sorted(kv[0]))):
            w.writerow([" ".join(str(i + 1) for i in sorted(c)), repr(v)])
    if report.stats is not None:
        with open(os.path.join(out, "cost.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["phase", "bytes", "messages", "rounds", "seconds"])
            for name, st in [*report.stats.phases.items(), ("total", report.stats.total)]:
                w.writerow([name, st.bytes_sent, st.messages, st.rounds, st.seconds])
    if report.ledger_log:
        with open(os.path.join(out, "ledger.tsv"), "w") as fh:
            fh.write(report.ledger_log)
    with open(os.path.join(out, "summary.txt"), "w") as fh:
        fh.write(report.summary() + "\n")


def cmd_valuate(args):
    cfg = _config(args)
    report = run_protocol(cfg) if args.mpc else run_plaintext_pipeline(cfg)
    print(report.summary())
    _write_report(report, args.out)


def cmd_run_protocol(args):
    cfg = _config(args)
    report = run_protocol(cfg)
    print(report.summary())
    _write_report(report, args.out)


def cmd_parse_circuit(args):
    if args.file in BUILTIN_CIRCUITS:
        c = BUILTIN_CIRCUITS[args.file]()
    else:
        c = load_bristol(args.file)
    for k, v in c.stats().items():
        print(f"{k}: {' '.join(map(str, v)) if isinstance(v, list) else v}")
    if args.export:
        with open(args.export, "w") as fh:
            fh.write(serialize_bristol(c))


def _ints(text):
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"expected comma separated integers, got {text!r}") from None


def cmd_bench(args):
    base = _config(args)
    grid = [(n, s) for n in _ints(args.owners) for s in _ints(args.samples)]
    table = format_bench(bench(grid, base, crypto=not args.no_crypto))
    print(table, end="")
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(table)


def _config_args(p):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--out", help="output directory for CSV reports")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="shapmkt", description=__doc__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("gen-market", help="write a synthetic marketplace as CSV files")
    p.add_argument("--owners", type=int, default=4)
    p.add_argument("--group-size", type=int, default=100)
    p.add_argument("--noise", default="gaussian")
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--dim", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen_market)

    p = sub.add_parser("build-sds", help="sample and label the utility training set")
    p.add_argument("--market", required=True)
    p.add_argument("--size", type=int, default=400)
    p.add_argument("--law", default="owner-mix")
    p.add_argument("--preshare", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_build_sds)

    p = sub.add_parser("train-utility", help="train a utility model on a utility dataset")
    p.add_argument("--preset", default="mlp-synthetic")
    p.add_argument("--sds", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=0)
    p.add_argument("--label-aware", action="store_true")
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--inner-steps", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_train_utility)

    p = sub.add_parser("valuate", help="Shapley and leave-one-out values")
    mode = p.add_mutually_exclusive_group(required=True)
    mode.add_argument("--plaintext", action="store_true")
    mode.add_argument("--mpc", action="store_true")
    _config_args(p)
    p.set_defaults(fn=cmd_valuate)

    p = sub.add_parser("run-protocol", help="full run: valuation, payment, decryption")
    _config_args(p)
    p.set_defaults(fn=cmd_run_protocol)

    p = sub.add_parser("parse-circuit", help="print gate statistics of a Bristol file (or aes256 / sha256)")
    p.add_argument("file")
    p.add_argument("--export", help="write the circuit in Bristol Fashion")
    p.set_defaults(fn=cmd_parse_circuit)

    p = sub.add_parser("bench", help="communication and simulated time over a grid")
    p.add_argument("--owners", default="3,4")
    p.add_argument("--samples", default="50,100")
    p.add_argument("--no-crypto", action="store_true", help="skip in-circuit encryption and hashing")
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--out", help="CSV file")
    p.set_defaults(fn=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except ProtocolAbort as e:
        print(f"protocol aborted: {e}", file=sys.stderr)
        return 3
    except (ShapmktError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
