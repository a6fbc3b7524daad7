"""Reciprocal acoustic channel: waveform-level and CFR-level simulation.

Every tap fades with a sum-of-sinusoids (Clarke/Jakes) process whose
Doppler spread follows from the motion speed, so CFR draws taken within
the coherence time agree while draws 100 ms apart are close to
independent.  The fast CFR path controls the Alice/Bob correlation
directly: Bob's magnitudes are a variance-preserving mix of Alice's and an
independent realization of the same channel statistics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from scipy import signal

from .dsp import SPEED_OF_SOUND, CfrVector, OfdmConfig, Waveform

WAVELENGTH_CM = 100 * SPEED_OF_SOUND / 20000.0  # ~1.7 cm at 20 kHz
SIGNAL_SPL_DB = 82.0
SPL_REFERENCE_CM = 10.0


@dataclass(frozen=True)
class DeviceProfile:
    """Receive-chain frequency selectivity, one multiplier per subcarrier."""

    freq_response: np.ndarray = field(default_factory=lambda: np.ones(64))
    label: str = "flat"

    def __post_init__(self):
        r = np.asarray(self.freq_response, dtype=float).ravel()
        if not np.all(np.isfinite(r)) or np.any(r <= 0) or np.any(r > 2):
            raise ValueError("device response entries must lie in (0, 2]")
        object.__setattr__(self, "freq_response", r)

    @classmethod
    def flat(cls, n: int = 64, label: str = "flat") -> "DeviceProfile":
        return cls(np.ones(n), label)

    @classmethod
    def rippled(cls, label: str, ripple_db: float, seed: int, n: int = 64,
                rolloff_db: float = 0.0) -> "DeviceProfile":
        """Smooth random ripple of roughly ``ripple_db`` peak plus a linear high-band rolloff."""
        rng = np.random.default_rng(seed)
        k = np.arange(n) / n
        shape = np.zeros(n)
        for order in range(1, 5):
            shape += rng.normal() / order * np.cos(2 * np.pi * order * k + rng.uniform(0, 2 * np.pi))
        shape /= max(np.max(np.abs(shape)), 1e-12)
        gain_db = ripple_db * shape - rolloff_db * k
        return cls(np.clip(10 ** (gain_db / 20), 1e-3, 2.0), label)


# ripple (dB), seed, high-band rolloff (dB); same-model pairs share a profile.
DEVICE_MODELS = {
    "samsung": (1.0, 11, 0.5),
    "htc": (2.0, 23, 1.0),
    "huawei": (2.0, 37, 1.5),
    "arduino": (4.0, 41, 3.0),
}


def device_profile(model: str, n: int = 64) -> DeviceProfile:
    if model == "flat":
        return DeviceProfile.flat(n)
    ripple, seed, rolloff = DEVICE_MODELS[model]
    return DeviceProfile.rippled(model, ripple, seed, n, rolloff)


@dataclass(frozen=True)
class ChannelModel:
    """Multipath profile plus motion, noise and hardware parameters.

    ``taps`` are ``(delay_samples, gain)`` pairs at 48 kHz.  With
    ``motion_speed_mps == 0`` the taps are static real gains; otherwise each
    tap fades with unit mean power scaled by ``gain**2``.  ``los_k_factor``
    adds a non-fading direct path with that power ratio to the fading part.
    """

    taps: tuple = ((0, 1.0),)
    motion_speed_mps: float = 0.0
    distance_cm: float = 100.0
    snr_db: float = math.inf
    device_a: DeviceProfile = field(default_factory=DeviceProfile.flat)
    device_b: DeviceProfile = field(default_factory=DeviceProfile.flat)
    reciprocity_rho: float = 1.0
    carrier_hz: float = 20000.0
    n_sinusoids: int = 16
    los_k_factor: float = 0.0

    def __post_init__(self):
        taps = tuple((int(d), float(g)) for d, g in self.taps)
        if not taps:
            raise ValueError("channel needs at least one tap")
        if any(d < 0 or not math.isfinite(g) for d, g in taps):
            raise ValueError("tap delays must be >= 0 and gains finite")
        if not 0.0 <= self.reciprocity_rho <= 1.0:
            raise ValueError("reciprocity_rho must lie in [0, 1]")
        if self.distance_cm <= 0:
            raise ValueError("distance must be positive")
        if self.motion_speed_mps < 0:
            raise ValueError("motion speed must be non-negative")
        object.__setattr__(self, "taps", taps)

    @property
    def delays(self) -> np.ndarray:
        return np.array([d for d, _ in self.taps], dtype=float)

    @property
    def gains(self) -> np.ndarray:
        return np.array([g for _, g in self.taps], dtype=float)

    @property
    def doppler_hz(self) -> float:
        return self.motion_speed_mps * self.carrier_hz / SPEED_OF_SOUND


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng([abs(int(k)) for k in key])


class FadingField:
    """One seeded realization of the time-varying tap gains of a model."""

    def __init__(self, model: ChannelModel, seed: int, stream: int = 0):
        self.model = model
        n_taps, k = len(model.taps), model.n_sinusoids
        rng = _rng(seed, stream, 0xFAD)
        self._theta = rng.uniform(0, 2 * np.pi, size=(n_taps, k))
        self._phi = rng.uniform(0, 2 * np.pi, size=(n_taps, k))
        self._los_phase = rng.uniform(0, 2 * np.pi)

    def tap_gains(self, t) -> np.ndarray:
        """Complex tap gains, shape ``(len(t), n_taps)``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        m = self.model
        g = m.gains
        if m.motion_speed_mps == 0:
            return np.broadcast_to(g.astype(complex), (t.size, g.size)).copy()
        fd = m.doppler_hz
        phase = 2 * np.pi * fd * np.cos(self._theta)[None] * t[:, None, None] + self._phi[None]
        c = np.exp(1j * phase).sum(axis=-1) / np.sqrt(m.n_sinusoids)
        return c * g[None]

    def cfr(self, t, freqs_hz: np.ndarray, sample_rate_hz: int = 48000) -> np.ndarray:
        """Complex frequency response at times ``t``; shape ``(len(t), len(freqs))``."""
        m = self.model
        steer = np.exp(-2j * np.pi * np.outer(m.delays, freqs_hz) / sample_rate_hz)
        h = self.tap_gains(t) @ steer
        if m.los_k_factor > 0:
            power = float(np.sum(m.gains**2))
            h = h + np.sqrt(m.los_k_factor * power) * np.exp(1j * self._los_phase)
        return h


def mix_correlated(x: np.ndarray, y: np.ndarray, rho) -> np.ndarray:
    """Variance-preserving blend with correlation ``rho`` to ``x``.

    Both inputs are centred on one pooled mean, so per-probe level shifts
    are blended like every other component.  ``rho`` may be a scalar or
    broadcast per subcarrier.
    """
    rho = np.asarray(rho, dtype=float)
    mu = 0.5 * (float(np.mean(x)) + float(np.mean(y)))
    out = mu + rho * (x - mu) + np.sqrt(np.clip(1 - rho**2, 0, 1)) * (y - mu)
    # rho = 1 must reproduce x bit for bit
    out = np.where(rho >= 1.0, x, out)
    return np.maximum(out, 1e-9 * max(mu, 1e-300))


def _add_noise(mag: np.ndarray, snr_db: float, rng: np.random.Generator) -> np.ndarray:
    if not math.isfinite(snr_db):
        return mag
    rms = np.sqrt(np.mean(mag**2, axis=-1, keepdims=True))
    noisy = mag + rng.normal(size=mag.shape) * rms * 10 ** (-snr_db / 20)
    return np.abs(noisy)


@dataclass
class CfrStreams:
    """Per-probe CFR magnitudes for each observer, shape ``(n_probes, n_subcarriers)``."""

    times_s: np.ndarray
    freqs_hz: np.ndarray
    alice: np.ndarray
    bob: np.ndarray
    extra: dict = field(default_factory=dict)

    def flat(self, who: str) -> np.ndarray:
        arr = getattr(self, who) if who in ("alice", "bob") else self.extra[who]
        return arr.ravel()


def simulate_cfr_streams(model: ChannelModel, n_probes: int, rng_seed: int,
                         cfg: OfdmConfig = OfdmConfig(), t0: float = 0.0,
                         observers: dict | None = None, injection=None) -> CfrStreams:
    """CFR magnitudes for Alice, Bob and optional extra observers over a probe train.

    ``observers`` maps a name to a dict with keys ``rho`` (scalar or per
    subcarrier correlation to Bob's raw channel), optional ``device``
    (:class:`DeviceProfile`), ``snr_db`` and ``reference`` (an ``(n_probes,
    n_sub)`` array, or ``"injected"``, to correlate against instead of Bob's
    channel).  ``injection`` (scalar or per-subcarrier weight) blends an
    externally driven fading process into the shared channel.
    """
    freqs = cfg.subcarrier_freqs()
    times = t0 + np.arange(n_probes) * cfg.probe_interval_ms / 1000.0
    shared = np.abs(FadingField(model, rng_seed, 1).cfr(times, freqs, cfg.sample_rate_hz))
    injected = None
    if injection is not None:
        injected = np.abs(FadingField(model, rng_seed, 50).cfr(times, freqs, cfg.sample_rate_hz))
        shared = mix_correlated(injected, shared, injection)
    indep = np.abs(FadingField(model, rng_seed, 2).cfr(times, freqs, cfg.sample_rate_hz))
    bob_raw = mix_correlated(shared, indep, model.reciprocity_rho)
    noise_rng = _rng(rng_seed, 3, 0x401)
    alice = _add_noise(shared * model.device_a.freq_response, model.snr_db, noise_rng)
    bob = _add_noise(bob_raw * model.device_b.freq_response, model.snr_db, noise_rng)
    extra = {}
    for i, (name, spec) in enumerate(sorted((observers or {}).items())):
        other = np.abs(FadingField(model, rng_seed, 100 + i).cfr(times, freqs, cfg.sample_rate_hz))
        ref = spec.get("reference", bob_raw)
        if isinstance(ref, str):
            if ref != "injected" or injected is None:
                raise ValueError("reference 'injected' needs an injection")
            ref = injected
        raw = mix_correlated(ref, other, spec["rho"])
        dev = spec.get("device", DeviceProfile.flat(len(freqs)))
        extra[name] = _add_noise(raw * dev.freq_response, spec.get("snr_db", model.snr_db),
                                 _rng(rng_seed, 200 + i, 0x401))
    return CfrStreams(times, freqs, alice, bob, extra)


def observe_cfr_pair(m: ChannelModel, rng_seed: int, cfg: OfdmConfig = OfdmConfig(),
                     t: float = 0.0) -> tuple[CfrVector, CfrVector]:
    """One reciprocal CFR observation for Alice and Bob at model time ``t``."""
    s = simulate_cfr_streams(m, 1, rng_seed, cfg, t0=t)
    return CfrVector(s.alice[0], s.freqs_hz), CfrVector(s.bob[0], s.freqs_hz)


def spatial_correlation(distance_cm: float, scale_cm: float = 12 * WAVELENGTH_CM / 2) -> float:
    """Correlation between co-channel observers ``distance_cm`` apart.

    Exponential decay over a multiple of the half wavelength; the default
    scale (~10.2 cm) puts the 10 cm value at ~0.37.
    """
    if distance_cm < 0:
        raise ValueError("distance must be non-negative")
    return float(math.exp(-distance_cm / scale_cm))


def propagate(w: Waveform, m: ChannelModel, direction: str = "a_to_b", rng_seed: int = 0,
              t0: float = 0.0) -> Waveform:
    """Pass a waveform through the multipath channel in one direction.

    Taps are shared by both directions; the receiving device's response and
    the noise draw are direction specific.  Fading taps act on the analytic
    signal so a complex gain rotates the passband phase.
    """
    if direction not in ("a_to_b", "b_to_a"):
        raise ValueError("direction must be 'a_to_b' or 'b_to_a'")
    x = w.samples
    fs = w.sample_rate_hz
    n = x.size
    static = m.motion_speed_mps == 0 and m.los_k_factor == 0
    if static:
        y = np.zeros(n)
        for d, g in m.taps:
            if d < n:
                y[d:] += g * x[:n - d]
    else:
        xa = signal.hilbert(x)
        field_ = FadingField(m, rng_seed, 1)
        t = t0 + np.arange(n) / fs
        gains = field_.tap_gains(t)
        y = np.zeros(n)
        for j, (d, _) in enumerate(m.taps):
            if d < n:
                y[d:] += np.real(gains[d:, j] * xa[:n - d])
        if m.los_k_factor > 0:
            amp = np.sqrt(m.los_k_factor * float(np.sum(m.gains**2)))
            y += amp * np.real(np.exp(1j * field_._los_phase) * xa)
    device = m.device_b if direction == "a_to_b" else m.device_a
    if not np.allclose(device.freq_response, 1.0):
        y = _apply_device(y, fs, device)
    if math.isfinite(m.snr_db):
        rng = _rng(rng_seed, 7 if direction == "a_to_b" else 8, 0xA0)
        rms = np.sqrt(np.mean(y**2))
        y = y + rng.normal(size=n) * rms * 10 ** (-m.snr_db / 20)
    return Waveform(y, fs)


def _apply_device(y: np.ndarray, fs: int, device: DeviceProfile,
                  band=(18000.0, 22000.0)) -> np.ndarray:
    spec = np.fft.rfft(y)
    f = np.fft.rfftfreq(y.size, 1 / fs)
    k = device.freq_response.size
    grid = band[0] + (band[1] - band[0]) * np.arange(k) / k
    resp = np.interp(f, grid, device.freq_response)
    return np.fft.irfft(spec * resp, n=y.size)


class Scenario(str, Enum):
    INDOOR_STATIC = "IndoorStatic"
    OUTDOOR_STATIC = "OutdoorStatic"
    INDOOR_MOBILE = "IndoorMobile"
    OUTDOOR_MOBILE = "OutdoorMobile"


# taps, effective speed (m/s), hardware SNR (dB), rms delay spread (samples)
SCENARIO_DEFAULTS = {
    Scenario.INDOOR_STATIC: (8, 0.3, 25.0, 160.0),
    Scenario.OUTDOOR_STATIC: (3, 0.3, 18.0, 60.0),
    Scenario.INDOOR_MOBILE: (8, 1.5, 25.0, 160.0),
    Scenario.OUTDOOR_MOBILE: (3, 1.5, 18.0, 60.0),
}


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: Scenario = Scenario.INDOOR_MOBILE
    distance_cm: float = 100.0
    noise_floor_db: float = 20.0

    def __post_init__(self):
        object.__setattr__(self, "scenario", Scenario(self.scenario))
        if self.distance_cm <= 0:
            raise ValueError("distance must be positive")

    def effective_snr_db(self) -> float:
        """Hardware SNR combined with ambient noise against the spread-out probe SPL."""
        _, _, hw_snr, _ = SCENARIO_DEFAULTS[self.scenario]
        spl = SIGNAL_SPL_DB - 20 * math.log10(max(self.distance_cm, SPL_REFERENCE_CM) / SPL_REFERENCE_CM)
        ambient_snr = spl - self.noise_floor_db
        return -10 * math.log10(10 ** (-hw_snr / 10) + 10 ** (-ambient_snr / 10))

    def build(self, reciprocity_rho: float = 1.0, device_a: DeviceProfile | None = None,
              device_b: DeviceProfile | None = None, seed: int = 0) -> ChannelModel:
        n_taps, speed, _, spread = SCENARIO_DEFAULTS[self.scenario]
        rng = _rng(seed, list(Scenario).index(self.scenario), 0x7A9)
        delays = np.sort(rng.integers(0, int(4 * spread), size=n_taps))
        delays[0] = 0
        gains = np.exp(-delays / (2 * spread)) * rng.uniform(0.5, 1.0, size=n_taps)
        gains /= np.sqrt(np.sum(gains**2))
        # direct path dominates at close range
        k_factor = (20.0 / self.distance_cm) ** 2 if self.distance_cm < 40 else 0.0
        return ChannelModel(
            taps=tuple(zip(delays.tolist(), gains.tolist())),
            motion_speed_mps=speed,
            distance_cm=self.distance_cm,
            snr_db=self.effective_snr_db(),
            device_a=device_a or DeviceProfile.flat(),
            device_b=device_b or DeviceProfile.flat(),
            reciprocity_rho=reciprocity_rho,
            los_k_factor=k_factor,
        )


def with_rho(m: ChannelModel, rho: float) -> ChannelModel:
    return replace(m, reciprocity_rho=rho)
