"""Run the three attackers beside a few legitimate sessions and tabulate what they achieve.

Agreement is measured per 2-bit sample at the publicly exchanged indices;
chance level is 0.25.
"""
import sys

import numpy as np

from acoustikey.harness.config import build_attack, build_channel, build_params, load_config
from acoustikey.protocol import AttackKind, MatrixRegistry, run_attacks

trials = int(sys.argv[1]) if len(sys.argv) > 1 else 10
cfg = load_config()
channel, params, attack = build_channel(cfg), build_params(cfg), build_attack(cfg)
registry = MatrixRegistry()

rows = {k: [] for k in AttackKind}
for trial in range(trials):
    for kind, res in run_attacks(list(AttackKind), channel, params, 9000 + trial, attack,
                                 registry=registry).items():
        rows[kind].append(res)

print(f"{'attacker':<20}{'agreement':>10}{'bits':>8}{'legit':>8}{'l1 hit':>8}{'own-key hit':>13}{'confirmed':>11}")
for kind, results in rows.items():
    print(f"{kind.value:<20}"
          f"{np.nanmean([r.agreement for r in results]):>10.3f}"
          f"{np.nanmean([r.bit_agreement for r in results]):>8.3f}"
          f"{np.mean([r.legit.pre_recon_agreement for r in results]):>8.3f}"
          f"{sum(r.direct_recovery for r in results):>8}"
          f"{sum(r.own_key_recovery for r in results):>13}"
          f"{sum(r.confirmed for r in results):>11}")
