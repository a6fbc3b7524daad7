"""Alice/Bob pairing sessions over the simulated channel, plus attacker co-simulation.

A session is driven by :func:`run_session`.  Every public message goes
through a :class:`PublicBus`, which stamps sequence numbers, lets an
optional interceptor drop, alter or inject traffic, and rejects anything
carrying a foreign session id or a stale sequence number.

Reconciliation runs per 128-bit segment: Bob publishes the integer
measurement of his slot key with an HMAC keyed by that slot key, Alice
recovers the mismatch and keeps a segment only when the tag verifies.  The
cheap LP pass runs on every segment; the integer search runs only while
fewer than the required number of segments have verified.
"""

from __future__ import annotations

import hashlib
import math
import struct
import threading
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import lru_cache

import numpy as np

from .amplify import KltBasis, KltConfig, decorrelate, leakage_budget, train_basis, universal_hash
from .bits import BitString, as_bits, gray_bits, pack, unpack
from .bloom import BloomConfig, position_mask, slot_key
from .channel import ChannelModel, ScenarioConfig, simulate_cfr_streams
from .dsp import OfdmConfig, smooth_stream
from .metrics import agreement_rate, symbol_agreement_rate
from .quantize import QuantizerConfig, quantize_windows
from .reconcile import (ReconConfig, RecoveryError, SamplingMatrix, apply_mismatch, compress_counts,
                        integer_recover, mac_tag, optimize_matrix, recover_mismatch,
                        security_bounds, verify_tag)
from .transcript import MessageKind, ProtocolMessage, SessionTranscript

# per (level, bit) mismatch rates at the calibrated 84% symbol-agreement point
DEFAULT_MISMATCH_PRIOR = ((0.011, 0.047), (0.419, 0.111), (0.389, 0.13), (0.011, 0.037))


class Phase(str, Enum):
    IDLE = "Idle"
    PROBING = "Probing"
    QUANTIZING = "Quantizing"
    INDEX_EXCHANGE = "IndexExchange"
    RECONCILING = "Reconciling"
    AMPLIFYING = "Amplifying"
    CONFIRMING = "Confirming"
    COMPLETE = "Complete"
    FAILED = "Failed"


# forward order, plus "probe more" after an index exchange and "retry" after reconciliation
_NEXT = {
    Phase.IDLE: {Phase.PROBING},
    Phase.PROBING: {Phase.QUANTIZING},
    Phase.QUANTIZING: {Phase.INDEX_EXCHANGE},
    Phase.INDEX_EXCHANGE: {Phase.RECONCILING, Phase.PROBING},
    Phase.RECONCILING: {Phase.AMPLIFYING, Phase.PROBING},
    Phase.AMPLIFYING: {Phase.CONFIRMING},
    Phase.CONFIRMING: {Phase.COMPLETE},
    Phase.COMPLETE: set(),
    Phase.FAILED: set(),
}


class IllegalTransition(RuntimeError):
    pass


class SessionFailure(RuntimeError):
    """Aborts a session; ``category`` is one of retries, bounds, mac, protocol, matrix."""

    def __init__(self, category: str, detail: str):
        super().__init__(f"{category}: {detail}")
        self.category = category
        self.detail = detail


@dataclass
class SessionState:
    session_id: bytes
    phase: Phase = Phase.IDLE
    attempt: int = 0
    max_retries: int = 5
    history: list = field(default_factory=list)

    def advance(self, to: Phase) -> None:
        if to != Phase.FAILED and to not in _NEXT[self.phase]:
            raise IllegalTransition(f"{self.phase.value} -> {to.value}")
        if self.phase in (Phase.COMPLETE, Phase.FAILED):
            raise IllegalTransition(f"{self.phase.value} is terminal")
        if to == Phase.PROBING and self.phase == Phase.RECONCILING:
            if self.attempt >= self.max_retries:
                raise SessionFailure("retries", f"{self.max_retries} attempts exhausted")
            self.attempt += 1
        self.history.append((self.phase.value, to.value))
        self.phase = to


class MatrixRegistry:
    """Matrix ids consumed by completed sessions; safe for concurrent use."""

    def __init__(self):
        self._used: set[str] = set()
        self._lock = threading.Lock()

    def claim(self, ids) -> bool:
        ids = set(ids)
        with self._lock:
            if ids & self._used:
                return False
            self._used |= ids
            return True

    def __contains__(self, matrix_id: str) -> bool:
        with self._lock:
            return matrix_id in self._used

    def __len__(self) -> int:
        with self._lock:
            return len(self._used)


class PublicBus:
    """Lossless broadcast channel with sequence numbering and replay rejection."""

    def __init__(self, session_id: bytes, transcript: SessionTranscript, interceptor=None,
                 latency_ms: float = 10.0):
        self.session_id = session_id
        self.transcript = transcript
        self.interceptor = interceptor
        self.latency_ms = latency_ms
        self.clock_ms = 0.0
        self._seq = 0
        self._last_seen = {"alice": 0, "bob": 0}

    def stamp(self, kind: MessageKind, sender: str, payload: bytes) -> ProtocolMessage:
        self._seq += 1
        return ProtocolMessage(kind, self.session_id, self._seq, payload, sender, self.clock_ms)

    def accept(self, msg: ProtocolMessage, receiver: str) -> bool:
        if msg.session_id != self.session_id:
            self.transcript.note(f"rejected foreign session message seq={msg.sequence_no}")
            return False
        if msg.sequence_no <= self._last_seen[receiver]:
            self.transcript.note(f"rejected replay seq={msg.sequence_no} at {receiver}")
            return False
        self._last_seen[receiver] = msg.sequence_no
        return True

    def send(self, kind: MessageKind, sender: str, payload: bytes, time_ms: float | None = None):
        """Deliver one message to the other party; returns the accepted messages."""
        if time_ms is not None:
            self.clock_ms = max(self.clock_ms, time_ms)
        self.clock_ms += self.latency_ms
        msg = self.stamp(kind, sender, payload)
        self.transcript.record(msg)
        traffic = [msg] if self.interceptor is None else list(self.interceptor(msg, self))
        receiver = "bob" if sender == "alice" else "alice"
        out = []
        for m in traffic:
            if m is not msg:
                self.transcript.record(m)
            if self.accept(m, receiver):
                out.append(m)
        return out


@dataclass(frozen=True)
class SessionParams:
    quantizer: QuantizerConfig = QuantizerConfig()
    bloom: BloomConfig = BloomConfig()
    recon: ReconConfig = ReconConfig(solver="ternary")
    klt: KltConfig = KltConfig()
    ofdm: OfdmConfig = OfdmConfig()
    key_bits: int = 128
    hash_seed: int = 0x70E1
    hash_margin: int = 64
    leakage_bits_per_value: float = 1.0
    probes_per_chunk: int = 100
    max_probes_per_round: int = 4000
    spare_segments: int = 4
    # integer searches run cheapest LP relaxation first and stop after this many misses in a row
    integer_miss_limit: int = 3
    matrix_pool: int = 512
    max_retries: int = 5
    latency_ms: float = 10.0
    klt_training_seed: int = 0x4B4C54
    # Hamming smoothing of each probe chunk's stream before quantization; 0 disables
    smoothing_window: int = 0
    mismatch_prior: tuple = DEFAULT_MISMATCH_PRIOR

    @property
    def segment_bits(self) -> int:
        return self.bloom.segment_bits

    def segments_needed(self) -> int:
        """Fewest verified segments whose leakage budget still covers ``key_bits``."""
        s, m = self.klt.n_eigenvectors, self.recon.m_rows
        for k in range(1, 65):
            if leakage_budget(k * s, k * m, self.leakage_bits_per_value, self.hash_margin) >= self.key_bits:
                return k
        raise ValueError("leakage budget can never cover the key length")

    def with_overrides(self, **kw) -> "SessionParams":
        return replace(self, **kw)


@lru_cache(maxsize=8)
def public_basis(klt: KltConfig = KltConfig(), quantizer: QuantizerConfig = QuantizerConfig(),
                 seed: int = 0x4B4C54) -> KltBasis:
    """KLT basis trained on public synthetic key material from a reciprocal channel."""
    model = ScenarioConfig().build(reciprocity_rho=1.0, seed=seed)
    need = klt.n_training_blocks * klt.block_len
    bits, chunk = [], 0
    while sum(b.size for b in bits) < need:
        s = simulate_cfr_streams(model, 500, (seed + chunk) & 0xFFFFFFFF, t0=50.0 * chunk)
        level, kept = quantize_windows(s.bob.ravel(), quantizer)
        bits.append(gray_bits(level[kept], quantizer.bits_per_sample))
        chunk += 1
    flat = np.concatenate(bits)[:need]
    return train_basis(flat.reshape(-1, klt.block_len), klt)


def _seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) & 0xFFFFFFFF for p in parts]).generate_state(1)[0])


def matrix_seed(session_id: bytes, attempt: int) -> int:
    return int.from_bytes(hashlib.sha256(b"matrix" + session_id + bytes([attempt])).digest()[:8], "big")


def commitment(session_id: bytes, role: str, key) -> bytes:
    return hashlib.sha256(b"confirm" + session_id + role.encode() + pack(key)).digest()


def reliability_weights(levels, prior=DEFAULT_MISMATCH_PRIOR) -> np.ndarray:
    """Per-bit ``log((1 - p) / p)`` from the public mismatch prior of each symbol's level and bit."""
    p = np.asarray(prior, dtype=float)[np.asarray(levels, dtype=np.int64)].ravel()
    p = np.clip(p, 1e-6, 0.5 - 1e-6)
    return np.log((1 - p) / p)


# --- wire formats ---------------------------------------------------------

def encode_index_list(attempt: int, kept: np.ndarray) -> bytes:
    flat = np.asarray(kept, dtype=np.uint8).ravel()
    return struct.pack(">BI", attempt, flat.size) + pack(flat)


def decode_index_list(payload: bytes) -> tuple[int, np.ndarray]:
    attempt, n = struct.unpack(">BI", payload[:5])
    return attempt, unpack(payload[5:], n).astype(bool)


def _mac_message(session_id: bytes, attempt: int, segment: int, matrix_id: str, counts) -> bytes:
    return (session_id + struct.pack(">BH", attempt, segment) + bytes.fromhex(matrix_id)
            + np.asarray(counts, dtype=">i2").tobytes())


def encode_compressed(session_id: bytes, attempt: int, segment: int, a: SamplingMatrix,
                      counts, slot) -> bytes:
    body = struct.pack(">BHQ", attempt, segment, a.seed) + bytes.fromhex(a.matrix_id)
    body += np.asarray(counts, dtype=">i2").tobytes()
    return body + mac_tag(slot, _mac_message(session_id, attempt, segment, a.matrix_id, counts))


def decode_compressed(payload: bytes, m_rows: int) -> dict:
    attempt, segment, seed = struct.unpack(">BHQ", payload[:11])
    matrix_id = payload[11:27].hex()
    counts = np.frombuffer(payload[27:27 + 2 * m_rows], dtype=">i2").astype(np.int64)
    return {"attempt": attempt, "segment": segment, "matrix_seed": seed, "matrix_id": matrix_id,
            "counts": counts, "tag": payload[27 + 2 * m_rows:]}


def encode_confirm(accepted, digest: bytes) -> bytes:
    out = struct.pack(">H", len(accepted))
    for attempt, seg in accepted:
        out += struct.pack(">BH", attempt, seg)
    return out + digest


def decode_confirm(payload: bytes) -> tuple[list, bytes]:
    (n,) = struct.unpack(">H", payload[:2])
    accepted = [struct.unpack(">BH", payload[2 + 3 * i:5 + 3 * i]) for i in range(n)]
    return accepted, payload[2 + 3 * n:]


# --- session ----------------------------------------------------------------

@dataclass
class SessionOutcome:
    success: bool
    key_alice: BitString | None
    key_bob: BitString | None
    pre_recon_agreement: float
    reconciliation_rounds: int
    transcript: SessionTranscript
    bit_agreement: float = float("nan")
    post_recon_agreement: float = float("nan")
    failure: str | None = None
    segments_verified: int = 0
    segments_sent: int = 0
    mismatches: list = field(default_factory=list)
    matrix_ids: list = field(default_factory=list)
    probes: int = 0
    bounds: object = None
    phases: list = field(default_factory=list)
    private: dict = field(default_factory=dict, repr=False)

    @property
    def generation_rate(self) -> float:
        from .metrics import generation_rate
        if not self.transcript.probe_times_ms:
            return 0.0
        return generation_rate(self.transcript)


@dataclass
class _Round:
    attempt: int
    probes: int = 0
    levels_a: list = field(default_factory=list)
    levels_b: list = field(default_factory=list)
    kept_a: list = field(default_factory=list)
    kept_b: list = field(default_factory=list)
    observers: dict = field(default_factory=dict)
    segments_a: list = field(default_factory=list)
    segments_b: list = field(default_factory=list)
    seg_levels_a: list = field(default_factory=list)
    sym_a: np.ndarray | None = None
    sym_b: np.ndarray | None = None


class _Session:
    def __init__(self, channel: ChannelModel, params: SessionParams, rng_seed: int,
                 registry: MatrixRegistry | None, interceptor, observers, injection):
        self.channel = channel
        self.p = params
        self.seed = int(rng_seed)
        self.registry = registry if registry is not None else MatrixRegistry()
        self.observers = observers or {}
        self.injection = injection
        self.sid = np.random.default_rng([self.seed & 0xFFFFFFFF, 0x5E55]).bytes(16)
        self.state = SessionState(self.sid, max_retries=params.max_retries)
        self.transcript = SessionTranscript(self.sid)
        self.bus = PublicBus(self.sid, self.transcript, interceptor, params.latency_ms)
        self.basis = public_basis(params.klt, params.quantizer, params.klt_training_seed)
        self.mask = position_mask(params.bloom)
        self.rounds: list[_Round] = []
        self.verified: dict = {}  # (attempt, segment) -> Bob's slot key as recovered by Alice
        self.candidates: dict = {}  # Alice's best guess per segment, verified or not
        self.mismatches: list = []
        self.matrices: list[SamplingMatrix] = []
        self.sent = 0
        self.model_ms = 0.0

    # probing + quantization + index exchange for one round
    def _gather(self, attempt: int, target_segments: int) -> _Round:
        p, st = self.p, self.state
        rnd = _Round(attempt)
        q = p.quantizer
        n_bits = 0
        chunk = 0
        while True:
            if st.phase != Phase.PROBING:
                st.advance(Phase.PROBING)
            seed = _seed(self.seed, attempt, chunk)
            # probing resumes only after the last public message
            self.model_ms = max(self.model_ms, self.bus.clock_ms)
            t0 = self.model_ms / 1000.0
            s = simulate_cfr_streams(self.channel, p.probes_per_chunk, seed, p.ofdm, t0,
                                     self.observers or None, self.injection)
            for i in range(p.probes_per_chunk):
                self.transcript.probe_times_ms.append(self.model_ms)
                self.bus.clock_ms = self.model_ms
                self.transcript.record(self.bus.stamp(MessageKind.PROBE, "alice",
                                                      struct.pack(">BHH", attempt, chunk, i)))
                self.model_ms += p.ofdm.probe_interval_ms
            self.bus.clock_ms = self.model_ms
            rnd.probes += p.probes_per_chunk
            st.advance(Phase.QUANTIZING)
            la, ka = quantize_windows(self._prepare(s.alice), q)
            lb, kb = quantize_windows(self._prepare(s.bob), q)
            for name in self.observers:
                rnd.observers.setdefault(name, []).append(s.extra[name].ravel())
            st.advance(Phase.INDEX_EXCHANGE)
            to_bob = self.bus.send(MessageKind.INDEX_LIST, "alice", encode_index_list(attempt, ka))
            to_alice = self.bus.send(MessageKind.INDEX_LIST, "bob", encode_index_list(attempt, kb))
            mask_from_alice = self._index_from(to_bob, attempt, ka.shape, "alice")
            mask_from_bob = self._index_from(to_alice, attempt, kb.shape, "bob")
            rnd.levels_a.append(la)
            rnd.levels_b.append(lb)
            rnd.kept_a.append(ka & mask_from_bob)
            rnd.kept_b.append(kb & mask_from_alice)
            n_bits += int(np.count_nonzero(rnd.kept_a[-1])) * q.bits_per_sample
            chunk += 1
            if n_bits >= target_segments * p.segment_bits or rnd.probes >= p.max_probes_per_round:
                break
        self._segment(rnd)
        return rnd

    def _prepare(self, stream: np.ndarray) -> np.ndarray:
        flat = stream.ravel()
        if self.p.smoothing_window > 0:
            flat = smooth_stream(flat, self.p.smoothing_window)
        return flat

    def _index_from(self, got, attempt, shape, sender) -> np.ndarray:
        for m in got:
            if m.kind == MessageKind.INDEX_LIST:
                att, mask = decode_index_list(m.payload)
                if att == attempt and mask.size == int(np.prod(shape)):
                    return mask.reshape(shape)
        raise SessionFailure("protocol", f"no usable index list from {sender}")

    def _segment(self, rnd: _Round) -> None:
        q, nseg = self.p.quantizer, self.p.segment_bits
        # Alice keeps windows common to both received masks; Bob likewise
        common_a = np.concatenate([k.ravel() for k in rnd.kept_a])
        common_b = np.concatenate([k.ravel() for k in rnd.kept_b])
        lev_a = np.concatenate([lv.ravel() for lv in rnd.levels_a])[common_a]
        lev_b = np.concatenate([lv.ravel() for lv in rnd.levels_b])[common_b]
        rnd.sym_a, rnd.sym_b = lev_a, lev_b
        bits_a = gray_bits(lev_a, q.bits_per_sample)
        bits_b = gray_bits(lev_b, q.bits_per_sample)
        per_seg = nseg // q.bits_per_sample
        for j in range(min(bits_a.size, bits_b.size) // nseg):
            rnd.segments_a.append(bits_a[j * nseg:(j + 1) * nseg])
            rnd.segments_b.append(bits_b[j * nseg:(j + 1) * nseg])
            rnd.seg_levels_a.append(lev_a[j * per_seg:(j + 1) * per_seg])

    def _reconcile(self, rnd: _Round, need: int) -> None:
        p = self.p
        cfg = p.recon
        st = self.state
        st.advance(Phase.RECONCILING)
        a = optimize_matrix(p.matrix_pool, cfg.m_rows, p.segment_bits, matrix_seed(self.sid, rnd.attempt))
        self.matrices.append(a)
        # Bob publishes every segment's measurement
        inbox = {}
        for j, seg_b in enumerate(rnd.segments_b):
            slot_b = slot_key(seg_b, p.bloom)
            counts = compress_counts(a, slot_b)
            self.sent += 1
            for m in self.bus.send(MessageKind.COMPRESSED_KEY_WITH_MAC, "bob",
                                   encode_compressed(self.sid, rnd.attempt, j, a, counts, slot_b)):
                if m.kind != MessageKind.COMPRESSED_KEY_WITH_MAC:
                    continue
                msg = decode_compressed(m.payload, cfg.m_rows)
                if msg["attempt"] == rnd.attempt and msg["segment"] not in inbox:
                    inbox[msg["segment"]] = msg
        pending = []
        lp_cfg = replace(cfg, solver="lp" if cfg.solver == "ternary" else cfg.solver)
        for j, msg in sorted(inbox.items()):
            if j >= len(rnd.segments_a) or msg["matrix_id"] != a.matrix_id:
                self.transcript.note(f"dropped malformed measurement for segment {j}")
                continue
            slot_a = slot_key(rnd.segments_a[j], p.bloom)
            w = reliability_weights(rnd.seg_levels_a[j], p.mismatch_prior)
            y_diff = (compress_counts(a, slot_a) - msg["counts"]) / np.sqrt(cfg.m_rows)
            ok, cost = self._try(a, msg, rnd, j, slot_a, w, y_diff, lp_cfg)
            if not ok and cfg.solver == "ternary":
                pending.append((cost, j, msg, slot_a, w))
        pending.sort(key=lambda item: (item[0], item[1]))
        misses = 0
        for _, j, msg, slot_a, w in pending:
            if self._count_verified() >= need or misses >= p.integer_miss_limit:
                break
            counts = compress_counts(a, slot_a) - msg["counts"]
            d = integer_recover(a, counts, cfg, reference_key=slot_a, weights=w)
            misses = 0 if d is not None and self._check(a, msg, rnd, j, slot_a, d) else misses + 1

    def _try(self, a, msg, rnd, j, slot_a, w, y_diff, cfg) -> tuple[bool, float]:
        """LP pass for one segment; also returns the weighted l1 cost of the relaxed solution."""
        try:
            d = recover_mismatch(a, y_diff, cfg, reference_key=slot_a if cfg.solver != "homotopy" else None,
                                 weights=w)
        except RecoveryError as exc:
            self.transcript.note(f"segment {j}: {exc}")
            return False, math.inf
        cost = float(np.sum(w * np.abs(d.relaxed))) if d.relaxed is not None else float(d.sparsity)
        return self._check(a, msg, rnd, j, slot_a, d), cost

    def _check(self, a, msg, rnd, j, slot_a, d) -> bool:
        cand = apply_mismatch(slot_a, d)
        self.candidates[(rnd.attempt, j)] = cand.bits
        ok = verify_tag(cand, _mac_message(self.sid, rnd.attempt, j, a.matrix_id, msg["counts"]),
                        msg["tag"])
        if ok:
            self.verified[(rnd.attempt, j)] = cand
            self.mismatches.append(d.sparsity)
        return ok

    def _count_verified(self) -> int:
        return len(self.verified)

    def _final_key(self, segments) -> BitString:
        p = self.p
        dec = np.concatenate([decorrelate(seg, self.basis).bits for seg in segments])
        budget = leakage_budget(dec.size, len(segments) * p.recon.m_rows,
                                p.leakage_bits_per_value, p.hash_margin)
        if budget < p.key_bits:
            raise SessionFailure("bounds", f"leakage budget {budget} < {p.key_bits}")
        return universal_hash(dec, p.key_bits, p.hash_seed, p.hash_margin)

    def run(self) -> SessionOutcome:
        p, st = self.p, self.state
        need = p.segments_needed()
        failure = None
        key_a = key_b = None
        success = False
        bounds = None
        try:
            attempt = 0
            while True:
                target = need - len(self.verified) + p.spare_segments
                rnd = self._gather(attempt, target)
                self.rounds.append(rnd)
                if not rnd.segments_a:
                    raise SessionFailure("protocol", "probe budget yielded no full segment")
                self._reconcile(rnd, need)
                if len(self.verified) >= need:
                    break
                st.advance(Phase.PROBING)  # retry edge; raises once retries are exhausted
                attempt = st.attempt
            accepted = sorted(self.verified)[:need]
            n = p.segment_bits
            mean_s = float(np.mean(self.mismatches)) if self.mismatches else 0.0
            weight_b = min(int(self.verified[k].bits.sum()) for k in accepted)
            bounds = security_bounds(n * (1 - mean_s / n), min(weight_b, n // 2), n // 2, n,
                                     p.recon.m_rows)
            if not bounds.valid:
                raise SessionFailure("bounds", f"P={bounds.p_lower:.1f} Q={bounds.q_upper} M={p.recon.m_rows}")
            st.advance(Phase.AMPLIFYING)
            segs_alice = [BitString(self.verified[k].bits ^ self.mask, "reconciled") for k in accepted]
            segs_bob = [BitString(self.rounds[k[0]].segments_b[k[1]], "reconciled") for k in accepted]
            key_a = self._final_key(segs_alice)
            key_b = self._final_key(segs_bob)
            self._record_stage_keys(accepted, segs_alice, segs_bob, key_a, key_b)
            st.advance(Phase.CONFIRMING)
            got = self.bus.send(MessageKind.CONFIRM, "alice",
                                encode_confirm(accepted, commitment(self.sid, "alice", key_a)))
            conf = [m for m in got if m.kind == MessageKind.CONFIRM]
            if not conf:
                raise SessionFailure("protocol", "confirmation from alice missing")
            listed, digest = decode_confirm(conf[0].payload)
            if [tuple(x) for x in listed] != accepted:
                raise SessionFailure("protocol", "segment list mismatch")
            if commitment(self.sid, "alice", key_b) != digest:
                raise SessionFailure("mac", "bob rejected alice's key commitment")
            got = self.bus.send(MessageKind.CONFIRM, "bob",
                                encode_confirm(accepted, commitment(self.sid, "bob", key_b)))
            conf = [m for m in got if m.kind == MessageKind.CONFIRM]
            if not conf or commitment(self.sid, "bob", key_a) != decode_confirm(conf[0].payload)[1]:
                raise SessionFailure("mac", "alice rejected bob's key commitment")
            if not self.registry.claim(a.matrix_id for a in self.matrices):
                raise SessionFailure("matrix", "sampling matrix already used by a completed session")
            st.advance(Phase.COMPLETE)
            success = True
        except SessionFailure as exc:
            failure = f"{exc.category}: {exc.detail}"
            self.bus.send(MessageKind.ABORT, "alice", exc.category.encode())
            if st.phase not in (Phase.COMPLETE, Phase.FAILED):
                st.advance(Phase.FAILED)
            key_a = key_b = None
        self.transcript.end_ms = self.bus.clock_ms
        self.transcript.final_key_bits = p.key_bits if success else 0
        sym_a = np.concatenate([r.sym_a for r in self.rounds]) if self.rounds else np.zeros(0)
        sym_b = np.concatenate([r.sym_b for r in self.rounds]) if self.rounds else np.zeros(0)
        agree = symbol_agreement_rate(sym_a, sym_b) if sym_a.size else float("nan")
        q = p.quantizer.bits_per_sample
        bit_agree = (agreement_rate(gray_bits(sym_a.astype(np.int64), q), gray_bits(sym_b.astype(np.int64), q))
                     if sym_a.size else float("nan"))
        post = [agreement_rate(c ^ self.mask, self.rounds[k[0]].segments_b[k[1]])
                for k, c in sorted(self.candidates.items())]
        return SessionOutcome(
            post_recon_agreement=float(np.mean(post)) if post else float("nan"),
            success=success, key_alice=key_a, key_bob=key_b, pre_recon_agreement=agree,
            reconciliation_rounds=max(1, len(self.rounds)), transcript=self.transcript,
            bit_agreement=bit_agree, failure=failure, segments_verified=len(self.verified),
            segments_sent=self.sent, mismatches=list(self.mismatches),
            matrix_ids=[a.matrix_id for a in self.matrices],
            probes=sum(r.probes for r in self.rounds), bounds=bounds, phases=list(st.history),
            private={"rounds": self.rounds, "matrices": self.matrices, "verified": dict(self.verified),
                     "basis": self.basis},
        )

    def _record_stage_keys(self, accepted, segs_a, segs_b, key_a, key_b) -> None:
        cat = lambda segs: np.concatenate([as_bits(s) for s in segs])
        raw_a = cat([self.rounds[k[0]].segments_a[k[1]] for k in accepted])
        self.transcript.stage_keys = {
            "alice": {"agreed": pack(raw_a).hex(), "reconciled": pack(cat(segs_a)).hex(),
                      "final": key_a.to_bytes().hex()},
            "bob": {"agreed": pack(cat(segs_b)).hex(), "reconciled": pack(cat(segs_b)).hex(),
                    "final": key_b.to_bytes().hex()},
        }


def run_session(channel: ChannelModel, params: SessionParams = SessionParams(), rng_seed: int = 0, *,
                registry: MatrixRegistry | None = None, interceptor=None, observers: dict | None = None,
                injection=None) -> SessionOutcome:
    """Run one pairing session end to end; deterministic for a given seed and registry state."""
    return _Session(channel, params, rng_seed, registry, interceptor, observers, injection).run()


# --- attacks ------------------------------------------------------------------

class AttackKind(str, Enum):
    EAVESDROP = "Eavesdrop"
    IMITATE = "Imitate"
    PREDICTABLE_CHANNEL = "PredictableChannel"


@dataclass(frozen=True)
class AttackConfig:
    eve_distance_cm: float = 25.0
    imitation_rho: float = 0.25
    # attacker-driven share of the channel, strongest on low subcarriers (microphone low-pass)
    injection_strength: float = 0.72
    injection_rolloff: float = 2.0
    # how closely the attacker tracks the process she injects
    injection_tracking: float = 0.8

    def injection_profile(self, n_sub: int = 64) -> np.ndarray:
        k = np.arange(n_sub) / max(n_sub - 1, 1)
        return self.injection_strength * np.exp(-self.injection_rolloff * k)


@dataclass
class AttackOutcome:
    kind: AttackKind
    agreement: float
    bit_agreement: float
    direct_recovery: bool
    own_key_recovery: bool
    key_match: bool
    confirmed: bool
    legit: SessionOutcome


def _observer_spec(kind: AttackKind, cfg: AttackConfig) -> dict:
    from .channel import spatial_correlation
    if kind == AttackKind.EAVESDROP:
        return {"rho": spatial_correlation(cfg.eve_distance_cm)}
    if kind == AttackKind.IMITATE:
        return {"rho": cfg.imitation_rho}
    return {"rho": cfg.injection_tracking, "reference": "injected"}


def direct_recover(a: SamplingMatrix, counts) -> np.ndarray:
    """Attacker's l1 guess of a dense 0/1 key straight from its measurement."""
    from scipy.optimize import linprog
    res = linprog(np.ones(a.n_cols), A_eq=a.signs.astype(float), b_eq=np.asarray(counts, float),
                  bounds=(0, 1), method="highs")
    if res.status != 0:
        return np.zeros(a.n_cols, np.uint8)
    return (res.x >= 0.5).astype(np.uint8)


def _attack_transcript(kind: AttackKind, name: str, out: SessionOutcome,
                       params: SessionParams) -> AttackOutcome:
    sid = out.transcript.session_id
    q, nseg = params.quantizer, params.segment_bits
    mask = position_mask(params.bloom)
    no_guard = replace(q, guard_ratio=0.0)
    # public view: each round's index lists from both sides
    lists = {}
    for m in out.transcript.messages:
        if m.kind == MessageKind.INDEX_LIST:
            att, kept = decode_index_list(m.payload)
            lists.setdefault((att, m.sender), []).append(kept)
    eve_sym, bob_sym, eve_segments = [], [], {}
    for rnd in out.private["rounds"]:
        common = (np.concatenate(lists[(rnd.attempt, "alice")])
                  & np.concatenate(lists[(rnd.attempt, "bob")]))
        levels = np.concatenate([quantize_windows(x, no_guard)[0].ravel() for x in rnd.observers[name]])
        ev = levels[common[:levels.size]]
        eve_sym.append(ev)
        bob_sym.append(rnd.sym_b)
        bits = gray_bits(ev, q.bits_per_sample)
        for j in range(bits.size // nseg):
            eve_segments[(rnd.attempt, j)] = bits[j * nseg:(j + 1) * nseg]
    ev, bv = np.concatenate(eve_sym), np.concatenate(bob_sym)
    n = min(ev.size, bv.size)
    nb = q.bits_per_sample
    agreement = symbol_agreement_rate(ev[:n], bv[:n]) if n else float("nan")
    bit_agreement = agreement_rate(gray_bits(ev[:n], nb), gray_bits(bv[:n], nb)) if n else float("nan")

    confirms = [m for m in out.transcript.messages if m.kind == MessageKind.CONFIRM and m.sender == "alice"]
    accepted, digest = decode_confirm(confirms[0].payload) if confirms else (None, None)
    targets = None if accepted is None else {tuple(k) for k in accepted}
    matrices = {a.matrix_id: a for a in out.private["matrices"]}
    recovered, direct_ok, own_ok = {}, False, False
    for m in out.transcript.messages:
        if m.kind != MessageKind.COMPRESSED_KEY_WITH_MAC:
            continue
        msg = decode_compressed(m.payload, params.recon.m_rows)
        key = (msg["attempt"], msg["segment"])
        # only the segments that make up the key matter once the confirmation is public
        if targets is not None and key not in targets:
            continue
        a = matrices.get(msg["matrix_id"]) or optimize_matrix(params.matrix_pool, params.recon.m_rows,
                                                              nseg, msg["matrix_seed"])
        mac_msg = _mac_message(sid, msg["attempt"], msg["segment"], a.matrix_id, msg["counts"])
        guess = direct_recover(a, msg["counts"])
        if verify_tag(guess, mac_msg, msg["tag"]):
            direct_ok = True
            recovered[key] = guess
        mine = eve_segments.get(key)
        if mine is None:
            continue
        slot_e = slot_key(mine, params.bloom)
        y = (compress_counts(a, slot_e) - msg["counts"]) / np.sqrt(a.m_rows)
        try:
            d = recover_mismatch(a, y, replace(params.recon, solver="lp"), reference_key=slot_e)
        except RecoveryError:
            continue
        cand = apply_mismatch(slot_e, d)
        if verify_tag(cand, mac_msg, msg["tag"]):
            own_ok = True
            recovered[key] = cand.bits
    key_match = confirmed = False
    if accepted is not None:
        segs = []
        for k in map(tuple, accepted):
            if k in recovered:
                segs.append(BitString(as_bits(recovered[k]) ^ mask, "reconciled"))
            elif k in eve_segments:
                segs.append(BitString(eve_segments[k], "reconciled"))
        if len(segs) == len(accepted):
            basis = out.private["basis"]
            dec = np.concatenate([decorrelate(sg, basis).bits for sg in segs])
            guess_key = universal_hash(dec, params.key_bits, params.hash_seed, params.hash_margin)
            confirmed = commitment(sid, "alice", guess_key) == digest
            key_match = out.key_bob is not None and guess_key == out.key_bob
    return AttackOutcome(kind, agreement, bit_agreement, direct_ok, own_ok, key_match, confirmed, out)


def run_attacks(kinds, channel: ChannelModel, params: SessionParams = SessionParams(), rng_seed: int = 0,
                attack: AttackConfig = AttackConfig(), *,
                registry: MatrixRegistry | None = None) -> dict:
    """Co-simulate attackers beside legitimate sessions; returns ``{kind: AttackOutcome}``.

    Passive attackers (eavesdrop, imitate) observe one shared session through
    independent channel draws.  The predictable-channel attacker alters the
    channel itself and gets a session of its own.  Each attacker holds her
    own CFR stream and the full public transcript: she quantizes at the
    publicly exchanged common indices, tries direct l1 recovery of each
    published slot key and reconciliation against her own slot key, tests
    every guess against the published MAC, and checks her final-key guess
    against Alice's confirmation commitment.
    """
    kinds = [AttackKind(k) for k in kinds]
    results = {}
    passive = [k for k in kinds if k != AttackKind.PREDICTABLE_CHANNEL]
    if passive:
        obs = {k.value: _observer_spec(k, attack) for k in passive}
        out = run_session(channel, params, rng_seed, registry=registry, observers=obs)
        for k in passive:
            results[k] = _attack_transcript(k, k.value, out, params)
    if AttackKind.PREDICTABLE_CHANNEL in kinds:
        k = AttackKind.PREDICTABLE_CHANNEL
        # own session id: sharing the passive session's id would reuse its sampling matrices
        seed = _seed(rng_seed, 0xC4A7) if passive else rng_seed
        out = run_session(channel, params, seed, registry=registry,
                          observers={k.value: _observer_spec(k, attack)},
                          injection=attack.injection_profile(params.ofdm.n_subcarriers))
        results[k] = _attack_transcript(k, k.value, out, params)
    return results


def run_attack(kind, channel: ChannelModel, params: SessionParams = SessionParams(), rng_seed: int = 0,
               attack: AttackConfig = AttackConfig(), *, registry: MatrixRegistry | None = None) -> AttackOutcome:
    """Single-attacker form of :func:`run_attacks`."""
    kind = AttackKind(kind)
    return run_attacks([kind], channel, params, rng_seed, attack, registry=registry)[kind]
