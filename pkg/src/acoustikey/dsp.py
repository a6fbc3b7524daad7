"""Inaudible-band OFDM probes: synthesis, detection and CFR estimation.

The probe is a real passband OFDM symbol whose subcarriers tile the
18-22 kHz band at 62.5 Hz spacing.  At 48 kHz that spacing fixes the FFT
length to 768 samples; subcarrier ``k`` sits on FFT bin ``288 + k``.  The
first ``cyclic_suffix_len`` samples of the core are repeated at its end so
that any 768-sample window starting inside the suffix span sees a circular
shift of the channel-filtered core.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import signal

SPEED_OF_SOUND = 340.0


@dataclass(frozen=True)
class OfdmConfig:
    sample_rate_hz: int = 48000
    band_low_hz: float = 18000.0
    band_high_hz: float = 22000.0
    n_subcarriers: int = 64
    subcarrier_width_hz: float = 62.5
    cyclic_suffix_len: int = 26
    probe_interval_ms: float = 100.0

    def __post_init__(self):
        width = self.band_high_hz - self.band_low_hz
        if not np.isclose(self.subcarrier_width_hz * self.n_subcarriers, width):
            raise ValueError("subcarrier_width_hz * n_subcarriers must equal the band width")
        if not 0 < self.band_low_hz < self.band_high_hz <= self.sample_rate_hz / 2:
            raise ValueError("band must lie inside (0, Nyquist]")
        fft_len = self.sample_rate_hz / self.subcarrier_width_hz
        if not float(fft_len).is_integer():
            raise ValueError("sample_rate_hz must be a multiple of subcarrier_width_hz")
        if not 0 <= self.cyclic_suffix_len < fft_len:
            raise ValueError("cyclic_suffix_len out of range")

    @property
    def fft_len(self) -> int:
        return int(round(self.sample_rate_hz / self.subcarrier_width_hz))

    @property
    def first_bin(self) -> int:
        return int(round(self.band_low_hz / self.subcarrier_width_hz))

    @property
    def symbol_len(self) -> int:
        return self.fft_len + self.cyclic_suffix_len

    @property
    def symbol_duration_s(self) -> float:
        return self.symbol_len / self.sample_rate_hz

    def subcarrier_freqs(self) -> np.ndarray:
        return self.band_low_hz + self.subcarrier_width_hz * np.arange(self.n_subcarriers)


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate_hz: int = 48000

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float).ravel()
        if s.size < 1:
            raise ValueError("waveform must contain at least one sample")
        if not np.all(np.isfinite(s)):
            raise ValueError("waveform samples must be finite")
        object.__setattr__(self, "samples", s)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def rms(self) -> float:
        return float(np.sqrt(np.mean(self.samples**2)))


@dataclass(frozen=True)
class CfrVector:
    magnitudes: np.ndarray
    subcarrier_freqs_hz: np.ndarray
    units: str = "linear"

    def __post_init__(self):
        mags = np.asarray(self.magnitudes, dtype=float).ravel()
        freqs = np.asarray(self.subcarrier_freqs_hz, dtype=float).ravel()
        if mags.shape != freqs.shape:
            raise ValueError("magnitudes and frequency axis differ in length")
        if not np.all(np.isfinite(mags)):
            raise ValueError("CFR magnitudes must be finite")
        if freqs.size > 1 and np.any(np.diff(freqs) <= 0):
            raise ValueError("frequency axis must be strictly increasing")
        if self.units not in ("linear", "db"):
            raise ValueError("units must be 'linear' or 'db'")
        object.__setattr__(self, "magnitudes", mags)
        object.__setattr__(self, "subcarrier_freqs_hz", freqs)

    def __len__(self) -> int:
        return self.magnitudes.size

    def to_db(self) -> "CfrVector":
        if self.units == "db":
            return self
        return CfrVector(20 * np.log10(np.maximum(self.magnitudes, 1e-12)), self.subcarrier_freqs_hz, "db")


class Detection(NamedTuple):
    offset: int
    peak: float
    detected: bool


def default_pilot(cfg: OfdmConfig = OfdmConfig(), seed: int = 0x5EED) -> np.ndarray:
    """Public unit-magnitude +-1 pilot, one value per subcarrier."""
    rng = np.random.default_rng(seed)
    return rng.choice([-1.0, 1.0], size=cfg.n_subcarriers).astype(complex)


def _check_pilot(pilot, cfg: OfdmConfig) -> np.ndarray:
    pilot = np.asarray(pilot, dtype=complex).ravel()
    if pilot.size != cfg.n_subcarriers:
        raise ValueError(f"pilot must have {cfg.n_subcarriers} entries, got {pilot.size}")
    if not np.any(np.abs(pilot) > 0):
        raise ValueError("pilot has zero energy")
    return pilot


def _core_spectrum(pilot: np.ndarray, cfg: OfdmConfig) -> np.ndarray:
    spec = np.zeros(cfg.fft_len // 2 + 1, dtype=complex)
    spec[cfg.first_bin:cfg.first_bin + cfg.n_subcarriers] = pilot
    return spec


def _core_samples(pilot: np.ndarray, cfg: OfdmConfig) -> tuple[np.ndarray, float]:
    core = np.fft.irfft(_core_spectrum(pilot, cfg), n=cfg.fft_len)
    scale = 1.0 / np.max(np.abs(core))
    return core * scale, scale


def build_ofdm_symbol(cfg: OfdmConfig, pilot) -> Waveform:
    """Synthesize one probe symbol: IFFT core followed by its cyclic suffix.

    The output is scaled to unit peak amplitude.
    """
    pilot = _check_pilot(pilot, cfg)
    core, _ = _core_samples(pilot, cfg)
    return Waveform(np.concatenate([core, core[:cfg.cyclic_suffix_len]]), cfg.sample_rate_hz)


def _normalized_xcorr(x: np.ndarray, ref: np.ndarray) -> np.ndarray:
    num = signal.correlate(x, ref, mode="valid", method="fft")
    csum = np.concatenate([[0.0], np.cumsum(x**2)])
    energy = csum[ref.size:] - csum[:-ref.size]
    denom = np.sqrt(np.maximum(energy, 0.0)) * np.linalg.norm(ref)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(denom > 1e-12 * np.linalg.norm(ref), num / denom, 0.0)
    return out


def detect_symbol_start(received: Waveform, reference: Waveform, threshold: float = 0.5) -> Detection:
    """Locate ``reference`` in ``received`` by normalized cross-correlation."""
    x, ref = received.samples, reference.samples
    if x.size < ref.size:
        raise ValueError("received waveform is shorter than the reference")
    corr = _normalized_xcorr(x, ref)
    offset = int(np.argmax(corr))
    peak = float(corr[offset])
    return Detection(offset, peak, peak >= threshold)


def bandpass(w: Waveform, low_hz: float = 18000.0, high_hz: float = 22000.0, order: int = 6) -> Waveform:
    """Zero-phase Butterworth band-pass filter."""
    nyq = w.sample_rate_hz / 2
    if not 0 < low_hz < high_hz < nyq:
        raise ValueError(f"need 0 < low < high < {nyq} Hz, got ({low_hz}, {high_hz})")
    sos = signal.butter(order, [low_hz, high_hz], btype="bandpass", fs=w.sample_rate_hz, output="sos")
    padlen = min(3 * (2 * sos.shape[0] + 1), len(w) - 1)
    return Waveform(signal.sosfiltfilt(sos, w.samples, padlen=padlen), w.sample_rate_hz)


def estimate_cfr(received_symbol: Waveform, pilot, cfg: OfdmConfig = OfdmConfig(), *,
                 units: str = "linear", check_alignment: bool = True,
                 threshold: float = 0.5) -> CfrVector:
    """Per-subcarrier |H| from a symbol-aligned received buffer.

    The FFT window starts ``cyclic_suffix_len`` samples into the symbol, so
    echoes up to that many samples late still yield a circular convolution.
    Magnitudes are normalized by the transmitted subcarrier values, so an
    identity channel returns exactly 1 on every subcarrier.
    """
    pilot = _check_pilot(pilot, cfg)
    if np.any(np.abs(pilot) == 0):
        raise ValueError("pilot must be nonzero on every subcarrier")
    x = received_symbol.samples
    if x.size < cfg.symbol_len:
        raise ValueError(f"need at least {cfg.symbol_len} samples, got {x.size}")
    if check_alignment:
        ref = build_ofdm_symbol(cfg, pilot).samples
        seg = x[:cfg.symbol_len]
        rho = float(np.dot(seg, ref) / (np.linalg.norm(seg) * np.linalg.norm(ref) + 1e-300))
        if rho < threshold:
            raise ValueError(f"symbol misaligned (correlation {rho:.3f} < {threshold})")
    start = cfg.cyclic_suffix_len
    window = x[start:start + cfg.fft_len]
    rx = np.fft.rfft(window)[cfg.first_bin:cfg.first_bin + cfg.n_subcarriers]
    _, scale = _core_samples(pilot, cfg)
    mags = np.abs(rx) / (np.abs(pilot) * scale)
    cfr = CfrVector(mags, cfg.subcarrier_freqs())
    return cfr.to_db() if units == "db" else cfr


def coherence_time(speed_mps: float, freq_hz: float, c: float = SPEED_OF_SOUND) -> tuple[float, float]:
    """Maximum Doppler shift ``v f / c`` and coherence time ``sqrt(9 / (16 pi fd^2))``."""
    if speed_mps <= 0 or freq_hz <= 0:
        raise ValueError("speed and frequency must be positive")
    doppler = speed_mps * freq_hz / c
    return doppler, float(np.sqrt(9.0 / (16.0 * np.pi * doppler**2)))


def timing_margins(cfg: OfdmConfig, max_speed_mps: float, min_speed_mps: float = 0.1) -> dict:
    """Compare symbol duration and probe interval against the coherence-time span.

    Returns the numbers plus two flags; nothing is enforced here.
    """
    _, tc_min = coherence_time(max_speed_mps, cfg.band_high_hz)
    _, tc_max = coherence_time(min_speed_mps, cfg.band_low_hz)
    return {
        "symbol_s": cfg.symbol_duration_s,
        "probe_interval_s": cfg.probe_interval_ms / 1000,
        "tc_min_s": tc_min,
        "tc_max_s": tc_max,
        "symbol_within_coherence": cfg.symbol_duration_s < tc_min,
        "probes_decorrelated": cfg.probe_interval_ms / 1000 > tc_max,
    }


def smooth_stream(values, window_size: int = 2000) -> np.ndarray:
    """Hamming-weighted moving average over a concatenated CFR stream.

    The window is truncated to the stream length; edges are renormalized so
    a constant stream passes through unchanged.
    """
    x = np.asarray(values, dtype=float)
    n = min(int(window_size), x.size)
    if n < 2:
        return x.copy()
    win = np.hamming(n)
    num = np.convolve(x, win, mode="same")
    den = np.convolve(np.ones_like(x), win, mode="same")
    return num / den


def write_wav(path, w: Waveform) -> None:
    """Mono 16-bit little-endian PCM at the waveform's sample rate."""
    pcm = np.round(np.clip(w.samples, -1.0, 1.0) * 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(int(w.sample_rate_hz))
        fh.writeframes(pcm.tobytes())


def read_wav(path) -> Waveform:
    with wave.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1 or fh.getsampwidth() != 2:
            raise ValueError("expected mono 16-bit PCM")
        rate = fh.getframerate()
        raw = fh.readframes(fh.getnframes())
    return Waveform(np.frombuffer(raw, dtype="<i2").astype(float) / 32767, rate)
