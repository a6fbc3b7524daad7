"""Walk one pairing session through every stage and print what each side sees.

Run with:  python3 demos/single_session.py [seed]
"""
import sys

from acoustikey.harness.config import build_channel, build_params, load_config
from acoustikey.protocol import run_session

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 7
cfg = load_config()
channel = build_channel(cfg)
params = build_params(cfg)

out = run_session(channel, params, seed)
t = out.transcript

print(f"channel: {len(channel.taps)} taps, {channel.motion_speed_mps} m/s, reciprocity {channel.reciprocity_rho}")
print(f"probes sent: {out.probes} ({t.probe_times_ms[-1] / 1000:.1f} s of model time)")
print(f"agreement before reconciliation: {out.pre_recon_agreement:.3f} per 2-bit sample, "
      f"{out.bit_agreement:.3f} per bit")
print(f"segments published / verified: {out.segments_sent} / {out.segments_verified}")
print(f"mismatches corrected per verified segment: {out.mismatches}")
print(f"security bounds for this session: P={out.bounds.p_lower:.2f} < M={params.recon.m_rows} "
      f"< Q={out.bounds.q_upper:g}")
print("phases:", " -> ".join(p.value if hasattr(p, "value") else str(p) for p in out.phases))
print(f"public messages: {len(t.messages)}")
if out.success:
    print(f"shared key: {out.key_alice.hex()}  (keys equal: {out.key_alice == out.key_bob})")
    print(f"generation rate: {out.generation_rate:.2f} bit/s of model time")
else:
    print(f"session failed: {out.failure}")
