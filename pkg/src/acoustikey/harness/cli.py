"""``acoustikey`` command line.

Exit codes: 0 success, 2 usage, 3 config/plan error, 4 I/O error,
5 experiment error.  Diagnostics go to stderr as ``error[<category>]: ...``.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .. import artifact
from ..bits import unpack
from ..protocol import public_basis
from ..reconcile import optimize_matrix
from .config import ConfigError, build_params
from .plan import load_plan
from .runner import randomness_rows, rows_to_csv, run_plan

EXIT_CONFIG, EXIT_IO, EXIT_RUN = 3, 4, 5


def _fail(category: str, msg: str, code: int) -> int:
    print(f"error[{category}]: {msg}", file=sys.stderr)
    return code


def _summary(rows: list[dict]) -> dict:
    out = {"rows": len(rows)}
    for col in ("success", "pre_recon_agreement", "post_recon_agreement", "rounds", "generation_rate",
                "eavesdrop.agreement", "imitate.agreement", "predictablechannel.agreement"):
        vals = [r[col] for r in rows if col in r and r[col] == r[col]]
        if vals:
            out[f"mean.{col}"] = round(float(np.mean(vals)), 4)
    return out


def _run(args, kind=None) -> int:
    plan = load_plan(args.plan).with_overrides(trials=args.trials, base_seed=args.seed, kind=kind)
    rows, manifest = run_plan(plan, args.out, args.threads)
    if manifest is None:
        sys.stdout.write(rows_to_csv(rows))
    else:
        print(json.dumps({"csv": manifest["csv"], **_summary(rows)}, sort_keys=True))
    return 0


def _optimize(args) -> int:
    a = optimize_matrix(args.pool, args.m, args.n, args.seed_pos)
    artifact.write(args.out_path, matrices=[a])
    print(json.dumps({"m_rows": a.m_rows, "n_cols": a.n_cols, "seed": a.seed, "coherence": a.coherence,
                      "matrix_id": a.matrix_id, "out": args.out_path}))
    return 0


def _train_klt(args) -> int:
    plan = load_plan(args.plan)
    params = build_params(plan.cell_config(plan.cells()[0]))
    seed = params.klt_training_seed if args.seed is None else args.seed
    basis = public_basis(params.klt, params.quantizer, seed)
    artifact.write(args.out_path, bases=[basis])
    print(json.dumps({"block_len": basis.block_len, "n_eigenvectors": basis.n_eigenvectors,
                      "top_eigenvalue": float(basis.eigenvalues[0]), "out": args.out_path}))
    return 0


def read_key_bits(path) -> np.ndarray:
    """Concatenated key bits from a CSV with a ``key_hex`` column, or one hex/binary key per line."""
    text = Path(path).read_text()
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if lines and "key_hex" in lines[0].split(","):
        keys = [r["key_hex"] for r in csv.DictReader(text.splitlines()) if r.get("key_hex")]
    else:
        keys = lines
    parts = []
    for k in keys:
        if set(k) <= {"0", "1"} and len(k) > 32:
            parts.append(np.frombuffer(k.encode(), np.uint8) - ord("0"))
        else:
            parts.append(unpack(bytes.fromhex(k), 4 * len(k)))
    return np.concatenate(parts).astype(np.uint8) if parts else np.zeros(0, np.uint8)


def _randomness(args) -> int:
    bits = read_key_bits(args.keys_file)
    rows = randomness_rows(bits, args.min_len)
    text = rows_to_csv([{"n_bits": bits.size, **r} for r in rows])
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0 if all(r["passed"] is not False for r in rows) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="acoustikey", description="Acoustic key-agreement simulator")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the plan's base seed")
    common.add_argument("--trials", type=int, default=None, help="override trials per cell")
    common.add_argument("--out", default=None, help="output CSV path (manifest written beside it)")
    common.add_argument("--threads", type=int, default=1, help="worker threads")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", parents=[common], help="run an experiment plan")
    r.add_argument("plan")
    r.set_defaults(func=_run)

    a = sub.add_parser("attack", parents=[common], help="run a plan as an attack campaign")
    a.add_argument("plan")
    a.set_defaults(func=lambda args: _run(args, kind="attack"))

    o = sub.add_parser("optimize-matrix", parents=[common], help="greedy low-coherence sampling matrix")
    o.add_argument("m", type=int)
    o.add_argument("n", type=int)
    o.add_argument("seed_pos", type=int, metavar="seed")
    o.add_argument("out_path", metavar="out")
    o.add_argument("--pool", type=int, default=512, help="candidate column pool size")
    o.set_defaults(func=_optimize)

    t = sub.add_parser("train-klt", parents=[common], help="train the public KLT basis")
    t.add_argument("plan")
    t.add_argument("out_path", metavar="out")
    t.set_defaults(func=_train_klt)

    q = sub.add_parser("randomness", parents=[common], help="SP 800-22 subset on concatenated keys")
    q.add_argument("keys_file")
    q.add_argument("--min-len", type=int, default=10_000)
    q.set_defaults(func=_randomness)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", 1) < 1:
        return _fail("usage", "--threads must be >= 1", 2)
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail("config", str(exc), EXIT_CONFIG)
    except OSError as exc:
        return _fail("io", str(exc), EXIT_IO)
    except (ValueError, RuntimeError) as exc:
        return _fail("experiment", str(exc), EXIT_RUN)


if __name__ == "__main__":
    sys.exit(main())
