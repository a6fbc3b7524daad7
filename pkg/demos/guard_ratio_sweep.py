"""How the guard ratio trades agreement against yield on the calibrated channel.

Raising the ratio drops more samples near level boundaries, so the survivors
agree more often but fewer of them are left.
"""
import numpy as np

from acoustikey.channel import simulate_cfr_streams
from acoustikey.harness.config import build_channel, load_config
from acoustikey.metrics import symbol_agreement_rate
from acoustikey.quantize import QuantizerConfig, agree_levels, quantize_stream

channel = build_channel(load_config())
probes = 300

print(f"{'guard':>6}{'agreement':>11}{'symbols/probe':>15}")
for guard in (0.0, 0.3, 0.6, 0.8, 0.9):
    cfg = QuantizerConfig(guard_ratio=guard)
    agree, kept = [], []
    for seed in range(5):
        s = simulate_cfr_streams(channel, probes, seed)
        la, lb = [], []
        for wa, wb in zip(quantize_stream(s.flat("alice"), cfg), quantize_stream(s.flat("bob"), cfg)):
            la.append(agree_levels(wa, wb.kept_indices))
            lb.append(agree_levels(wb, wa.kept_indices))
        la, lb = np.concatenate(la), np.concatenate(lb)
        agree.append(symbol_agreement_rate(la, lb))
        kept.append(la.size / probes)
    print(f"{guard:>6.1f}{np.mean(agree):>11.3f}{np.mean(kept):>15.2f}")
