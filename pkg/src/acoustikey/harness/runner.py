"""Trial functions per experiment kind and the CSV/manifest writer.

Every trial is a pure function of ``(cell config, seed)`` apart from the
matrix-freshness registry, whose only effect is rejecting reuse; rows are
emitted in (cell, trial) order regardless of thread count.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .. import __version__
from ..amplify import decorrelated_entropy, estimate_autocorrelation, klt_basis, redundant_blocks
from ..bits import gray_bits
from ..bloom import slot_key
from ..channel import simulate_cfr_streams, spatial_correlation
from ..metrics import agreement_rate, randomness_suite, symbol_agreement_rate
from ..protocol import (AttackKind, MatrixRegistry, direct_recover, reliability_weights, run_attacks,
                        run_session)
from ..quantize import quantize_windows
from ..reconcile import (RecoveryError, apply_mismatch, bch_reconcile, parity_reconcile, compress_counts, optimize_matrix, recover_mismatch,
                         security_bounds)
from .config import build_attack, build_channel, build_params, flatten
from .plan import ExperimentPlan


def session_row(outcome) -> dict:
    return {
        "success": int(outcome.success),
        "failure": (outcome.failure or "").split(":")[0],
        "pre_recon_agreement": outcome.pre_recon_agreement,
        "bit_agreement": outcome.bit_agreement,
        "post_recon_agreement": outcome.post_recon_agreement,
        "rounds": outcome.reconciliation_rounds,
        "segments_verified": outcome.segments_verified,
        "segments_sent": outcome.segments_sent,
        "mean_mismatch": float(np.mean(outcome.mismatches)) if outcome.mismatches else float("nan"),
        "probes": outcome.probes,
        "generation_rate": outcome.generation_rate if outcome.success else 0.0,
        "keys_equal": int(outcome.success and outcome.key_alice == outcome.key_bob),
        "key_hex": outcome.key_alice.to_bytes().hex() if outcome.success else "",
    }


def _trial_session(cfg, seed, options, registry):
    if options.get("attacks"):
        return _trial_attack(cfg, seed, options, registry)
    return session_row(run_session(build_channel(cfg), build_params(cfg), seed, registry=registry))


def _trial_attack(cfg, seed, options, registry):
    channel, params, attack = build_channel(cfg), build_params(cfg), build_attack(cfg)
    kinds = [AttackKind(k) for k in options.get("attacks", [k.value for k in AttackKind])]
    results = run_attacks(kinds, channel, params, seed, attack, registry=registry)
    first = results[kinds[0]]
    row = session_row(first.legit)
    for k in kinds:
        r = results[k]
        tag = k.value.lower()
        row.update({f"{tag}.agreement": r.agreement, f"{tag}.bit_agreement": r.bit_agreement,
                    f"{tag}.direct_recovery": int(r.direct_recovery),
                    f"{tag}.own_key_recovery": int(r.own_key_recovery),
                    f"{tag}.key_match": int(r.key_match), f"{tag}.confirmed": int(r.confirmed),
                    f"{tag}.legit_success": int(r.legit.success)})
    return row


def _stream_material(cfg, seed, options):
    channel, params, attack = build_channel(cfg), build_params(cfg), build_attack(cfg)
    n_probes = int(options.get("probes", 300))
    eve_rho = spatial_correlation(attack.eve_distance_cm)
    s = simulate_cfr_streams(channel, n_probes, seed, params.ofdm, observers={"eve": {"rho": eve_rho}})
    q = params.quantizer
    la, ka = quantize_windows(s.alice.ravel(), q)
    lb, kb = quantize_windows(s.bob.ravel(), q)
    le, _ = quantize_windows(s.extra["eve"].ravel(), replace(q, guard_ratio=0.0))
    common = ka & kb
    return params, n_probes, eve_rho, la[common], lb[common], le[common]


def _trial_stream(cfg, seed, options, registry):
    params, n_probes, eve_rho, sa, sb, se = _stream_material(cfg, seed, options)
    nb = params.quantizer.bits_per_sample
    ba, bb, be = gray_bits(sa, nb), gray_bits(sb, nb), gray_bits(se, nb)
    row = {
        "kept_symbols": int(sa.size),
        "kept_bits_per_probe": ba.size / n_probes,
        "pre_recon_agreement": symbol_agreement_rate(sa, sb) if sa.size else float("nan"),
        "bit_agreement": agreement_rate(ba, bb) if ba.size else float("nan"),
        "eve_rho": eve_rho,
        "eve_agreement": symbol_agreement_rate(se, sb) if se.size else float("nan"),
        "eve_bit_agreement": agreement_rate(be, bb) if be.size else float("nan"),
    }
    # cheap LP-only reconciliation of up to max_segments segments
    nseg, cap = params.segment_bits, int(options.get("max_segments", 4))
    per = nseg // nb
    post, exact = [], []
    if ba.size >= nseg:
        a = optimize_matrix(params.matrix_pool, params.recon.m_rows, nseg, seed)
        lp = replace(params.recon, solver="lp")
        for j in range(min(cap, ba.size // nseg)):
            seg_a, seg_b = ba[j * nseg:(j + 1) * nseg], bb[j * nseg:(j + 1) * nseg]
            slot_a, slot_b = slot_key(seg_a, params.bloom), slot_key(seg_b, params.bloom)
            w = reliability_weights(sa[j * per:(j + 1) * per], params.mismatch_prior)
            y = (compress_counts(a, slot_a) - compress_counts(a, slot_b)) / math.sqrt(a.m_rows)
            try:
                cand = apply_mismatch(slot_a, recover_mismatch(a, y, lp, reference_key=slot_a, weights=w))
            except RecoveryError:
                cand = slot_a
            post.append(agreement_rate(cand, slot_b))
            exact.append(cand == slot_b)
    row["post_recon_agreement"] = float(np.mean(post)) if post else float("nan")
    row["segments"] = len(post)
    row["exact_rate"] = float(np.mean(exact)) if exact else float("nan")
    return row


def _trial_entropy(cfg, seed, options, registry):
    params = build_params(cfg)
    k = params.klt
    n_test = int(options.get("test_blocks", 512))
    blocks = np.array(redundant_blocks(k.n_training_blocks + n_test, k.block_len,
                                       int(options.get("independent_bits", 80)),
                                       float(options.get("flip_prob", 0.02)), seed))
    train, test = blocks[:k.n_training_blocks], blocks[k.n_training_blocks:]
    basis = klt_basis(estimate_autocorrelation(train), k.n_eigenvectors)
    out = ((2.0 * test - 1.0) @ basis.phi >= 0).astype(np.uint8)
    h_in, h_out = decorrelated_entropy(test), decorrelated_entropy(out)
    return {"entropy_in": h_in, "entropy_out": h_out, "entropy_gain": h_out - h_in}


def _trial_matrix(cfg, seed, options, registry):
    params, _, _, sa, sb, se = _stream_material(cfg, seed, options)
    nb, nseg = params.quantizer.bits_per_sample, params.segment_bits
    ba, bb, be = gray_bits(sa, nb), gray_bits(sb, nb), gray_bits(se, nb)
    if ba.size < nseg:
        return {"segments": 0}
    m = params.recon.m_rows
    a = optimize_matrix(params.matrix_pool, m, nseg, seed)
    seg = slice(0, nseg)
    slot_a, slot_b, slot_e = (slot_key(x[seg], params.bloom) for x in (ba, bb, be))
    counts_b = compress_counts(a, slot_b)
    w = reliability_weights(sa[:nseg // nb], params.mismatch_prior)
    solve = lambda ref, weights: apply_mismatch(ref, recover_mismatch(
        a, (compress_counts(a, ref) - counts_b) / math.sqrt(m), params.recon, reference_key=ref, weights=weights))
    try:
        legit = solve(slot_a, w) == slot_b
    except RecoveryError:
        legit = False
    try:
        own = apply_mismatch(slot_e, recover_mismatch(
            a, (compress_counts(a, slot_e) - counts_b) / math.sqrt(m), replace(params.recon, solver="lp"),
            reference_key=slot_e)) == slot_b
    except RecoveryError:
        own = False
    direct = bool(np.array_equal(direct_recover(a, counts_b), slot_b.bits))
    s_ab = int(np.count_nonzero(slot_a.bits != slot_b.bits))
    s_be = int(np.count_nonzero(slot_e.bits != slot_b.bits))
    b = security_bounds(nseg - s_ab, int(slot_b.bits.sum()), s_be, nseg, m)
    return {"segments": 1, "s_ab": s_ab, "s_bob": int(slot_b.bits.sum()), "s_be": s_be,
            "p_lower": b.p_lower, "q_upper": b.q_upper, "bounds_valid": int(b.valid),
            "legit_exact": int(legit), "direct_attack": int(direct), "own_key_attack": int(own)}


def _trial_baseline(cfg, seed, options, registry):
    params, _, _, sa, sb, _ = _stream_material(cfg, seed, options)
    nb, nseg = params.quantizer.bits_per_sample, params.segment_bits
    ba, bb = gray_bits(sa, nb), gray_bits(sb, nb)
    if ba.size < nseg:
        return {"segments": 0}
    seg_a, seg_b = ba[:nseg], bb[:nseg]
    row = {"segments": 1, "s_ab": int(np.count_nonzero(seg_a != seg_b))}
    a = optimize_matrix(params.matrix_pool, params.recon.m_rows, nseg, seed)
    slot_a, slot_b = slot_key(seg_a, params.bloom), slot_key(seg_b, params.bloom)
    y = (compress_counts(a, slot_a) - compress_counts(a, slot_b)) / math.sqrt(a.m_rows)
    w = reliability_weights(sa[:nseg // nb], params.mismatch_prior)
    try:
        cand = apply_mismatch(slot_a, recover_mismatch(a, y, params.recon, reference_key=slot_a, weights=w))
    except RecoveryError:
        cand = slot_a
    results = {
        "compressive": (cand.bits ^ slot_b.bits, a.m_rows, 1),
        "bch": None,
        "parity": None,
    }
    bch = bch_reconcile(seg_a, seg_b)
    par = parity_reconcile(seg_a, seg_b, seed=seed)
    results["bch"] = (bch.key ^ seg_b, bch.leaked_bits, bch.rounds)
    results["parity"] = (par.key ^ seg_b, par.leaked_bits, par.rounds)
    for name, (diff, leaked, rounds) in results.items():
        row.update({f"{name}.exact": int(not diff.any()), f"{name}.residual": int(diff.sum()),
                    f"{name}.leaked": leaked, f"{name}.rounds": rounds})
    return row


TRIALS = {"session": _trial_session, "baseline": _trial_baseline, "attack": _trial_attack, "stream": _trial_stream,
          "entropy": _trial_entropy, "matrix": _trial_matrix}


def _fmt(v):
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (list, tuple, dict)):
        return json.dumps(v, sort_keys=True)
    return v


def run_experiment(plan: ExperimentPlan, threads: int = 1, environ=None) -> list[dict]:
    """One row per (cell, trial), in that order."""
    plan.validate(environ)
    registry = MatrixRegistry()
    trial_fn = TRIALS[plan.kind]
    jobs = []
    for ci, cell in enumerate(plan.cells()):
        cfg = plan.cell_config(cell, environ)
        flat = flatten(cfg)
        for t in range(plan.trials):
            jobs.append((ci, t, plan.seed(ci, t), cell, cfg, flat))

    def work(job):
        ci, t, seed, cell, cfg, flat = job
        row = {"plan": plan.name, "cell": ci, "trial": t, "seed": seed}
        row.update({f"sweep.{k}": v for k, v in sorted(cell.items())})
        row.update(trial_fn(cfg, seed, plan.options, registry))
        row.update({f"cfg.{k}": v for k, v in flat.items()})
        return row

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(work, jobs))
    return [work(j) for j in jobs]


def rows_to_csv(rows: list[dict]) -> str:
    columns: list[str] = []
    for r in rows:
        for k in r:
            if k not in columns:
                columns.append(k)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n", restval="")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(v) for k, v in r.items()})
    return buf.getvalue()


def write_outputs(plan: ExperimentPlan, rows: list[dict], csv_path, wall_time_s: float) -> dict:
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    text = rows_to_csv(rows)
    csv_path.write_text(text)
    manifest = {
        "plan": plan.echo(),
        "base_seed": plan.base_seed,
        "trials": plan.trials,
        "cells": len(plan.cells()),
        "rows": len(rows),
        "code_version": __version__,
        "wall_time_s": round(wall_time_s, 3),
        "csv": str(csv_path),
        "csv_sha256": hashlib.sha256(text.encode()).hexdigest(),
    }
    csv_path.with_suffix(".json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def run_plan(plan: ExperimentPlan, out=None, threads: int = 1, environ=None) -> tuple[list[dict], dict | None]:
    t0 = time.perf_counter()
    rows = run_experiment(plan, threads, environ)
    target = out or plan.output_csv
    manifest = write_outputs(plan, rows, target, time.perf_counter() - t0) if target else None
    return rows, manifest


def randomness_rows(bits, min_len: int = 10_000) -> list[dict]:
    return randomness_suite(bits, min_len).rows()
