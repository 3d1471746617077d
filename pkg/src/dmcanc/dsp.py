"""Signal-processing primitives: FIR filters, convolution, band-pass design, noise.

Everything here works in float64. Streaming and batch paths accumulate
taps in the same fixed order (tap 0 first), so chunked processing is
bit-identical to processing a whole signal at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

HAMMING_TRANSITION = 3.3
"""Hamming-window transition width in units of ``fs / num_taps``."""


@dataclass
class Signal:
    """Real-valued samples tagged with a sample rate in Hz."""

    samples: np.ndarray
    sample_rate: float

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError("Signal samples must be one-dimensional")
        if not self.sample_rate > 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("Signal contains non-finite samples")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def power(self) -> float:
        return float(np.mean(self.samples**2))


@dataclass
class FirFilter:
    """FIR filter with a streaming delay line.

    ``state`` holds the last ``len(coeffs) - 1`` inputs, newest first.
    """

    coeffs: np.ndarray
    state: np.ndarray = field(default=None)

    def __post_init__(self):
        self.coeffs = np.array(self.coeffs, dtype=np.float64).ravel()
        if len(self.coeffs) < 1:
            raise ValueError("FirFilter needs at least one coefficient")
        if self.state is None:
            self.state = np.zeros(len(self.coeffs) - 1)
        else:
            self.state = np.array(self.state, dtype=np.float64).ravel()
            if len(self.state) != len(self.coeffs) - 1:
                raise ValueError(
                    f"state length {len(self.state)} != taps - 1 = {len(self.coeffs) - 1}"
                )

    @property
    def taps(self) -> int:
        return len(self.coeffs)

    def reset(self) -> None:
        self.state[:] = 0.0

    def copy(self, with_state: bool = False) -> "FirFilter":
        return FirFilter(self.coeffs.copy(), self.state.copy() if with_state else None)

    def process(self, x) -> np.ndarray:
        """Filter ``x`` (array or :class:`Signal`), carrying state across calls."""
        samples = x.samples if isinstance(x, Signal) else np.asarray(x, dtype=np.float64)
        n = len(samples)
        ntaps = self.taps
        # oldest-first history followed by the new block
        ext = np.concatenate([self.state[::-1], samples])
        y = _tap_sum(self.coeffs, ext, n)
        if ntaps > 1:
            self.state = ext[::-1][: ntaps - 1].copy()
        return y

    def save(self, path) -> None:
        save_coeffs(path, self.coeffs)

    @classmethod
    def load(cls, path) -> "FirFilter":
        return cls(load_coeffs(path))


def _tap_sum(coeffs: np.ndarray, ext: np.ndarray, n: int) -> np.ndarray:
    """y[j] = sum_i coeffs[i] * ext[j + L - 1 - i] for j < n, accumulated tap by tap."""
    L = len(coeffs)
    y = np.zeros(n)
    if n <= 4:
        # per-sample path: Python's sum adds left to right, same order as the tap loop
        for j in range(n):
            y[j] = sum((coeffs * ext[j : j + L][::-1]).tolist(), 0.0)
        return y
    for i in range(L):
        start = L - 1 - i
        y += coeffs[i] * ext[start : start + n]
    return y


def convolve(a, b) -> np.ndarray:
    """Full linear convolution, length ``len(a) + len(b) - 1`` (direct form, no FFT)."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if len(a) == 0 or len(b) == 0:
        raise ValueError("convolve needs two non-empty inputs")
    return np.convolve(a, b)


def fir_process(f: FirFilter, x) -> Signal | np.ndarray:
    """Stream ``x`` through ``f``. Returns a Signal when given a Signal."""
    y = f.process(x)
    if isinstance(x, Signal):
        return Signal(y, x.sample_rate)
    return y


def _windowed_lowpass(num_taps: int, cutoff: float, fs: float) -> np.ndarray:
    m = np.arange(num_taps) - (num_taps - 1) / 2.0
    h = 2.0 * cutoff / fs * np.sinc(2.0 * cutoff / fs * m) * np.hamming(num_taps)
    return h / h.sum()


def transition_width(num_taps: int, fs: float) -> float:
    """Approximate transition width (Hz) of a Hamming windowed-sinc design."""
    return HAMMING_TRANSITION * fs / num_taps


def design_bandpass(num_taps: int, f_low: float, f_high: float, fs: float) -> FirFilter:
    """Linear-phase band-pass FIR by the Hamming windowed-sinc method.

    Built as the difference of two unit-DC-gain low-passes, so the response
    is exactly zero at DC. Band edges are the -6 dB points; the transition
    width is roughly :func:`transition_width`. Odd ``num_taps`` gives an
    integer group delay of ``(num_taps - 1) / 2`` samples.
    """
    if num_taps < 3:
        raise ValueError(f"num_taps must be >= 3, got {num_taps}")
    if not 0 < f_low < f_high < fs / 2:
        raise ValueError(
            f"band must satisfy 0 < f_low < f_high < fs/2, got ({f_low}, {f_high}) at fs={fs}"
        )
    h = _windowed_lowpass(num_taps, f_high, fs) - _windowed_lowpass(num_taps, f_low, fs)
    return FirFilter(h)


def magnitude_response(coeffs, fs: float, n_fft: int = 4096):
    """Return (frequencies in Hz, |H|) from an ``n_fft``-point DFT of the taps."""
    H = np.abs(np.fft.rfft(np.asarray(coeffs, dtype=np.float64), n_fft))
    return np.fft.rfftfreq(n_fft, 1.0 / fs), H


def rng(seed: int, stream: int = 0) -> np.random.Generator:
    """PCG64 generator for substream ``stream`` of ``seed``.

    Substreams come from ``SeedSequence([seed, stream])``, so (seed, stream)
    pairs are statistically independent and reproducible on every platform.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(stream)])))


def white_noise(seed: int, n: int, variance: float = 1.0, fs: float = 16000.0,
                stream: int = 0) -> Signal:
    """Zero-mean white Gaussian noise (PCG64 + numpy's ziggurat normal transform)."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not variance > 0:
        raise ValueError(f"variance must be positive, got {variance}")
    return Signal(np.sqrt(variance) * rng(seed, stream).standard_normal(n), fs)


def bandlimited_noise(seed: int, n: int, f_low: float, f_high: float, fs: float,
                      num_taps: int = 513, stream: int = 0) -> Signal:
    """White noise band-pass filtered to [f_low, f_high] and normalized to unit power.

    The filter start-up transient is discarded, so every returned sample is
    in steady state.
    """
    bp = design_bandpass(num_taps, f_low, f_high, fs)
    w = white_noise(seed, n + num_taps - 1, 1.0, fs, stream).samples
    y = convolve(w, bp.coeffs)[num_taps - 1 : n + num_taps - 1]
    y = y / np.sqrt(np.mean(y**2))
    return Signal(y, fs)


def save_coeffs(path, coeffs) -> None:
    """Write ``taps=<count>`` then one coefficient per line (round-trip exact)."""
    coeffs = np.asarray(coeffs, dtype=np.float64).ravel()
    lines = [f"taps={len(coeffs)}"] + [f"{c:.17e}" for c in coeffs]
    Path(path).write_text("\n".join(lines) + "\n")


def load_coeffs(path) -> np.ndarray:
    lines = Path(path).read_text().split()
    if not lines or not lines[0].startswith("taps="):
        raise ValueError(f"{path}: missing 'taps=' header")
    count = int(lines[0][5:])
    values = np.array([float(v) for v in lines[1:]], dtype=np.float64)
    if len(values) != count:
        raise ValueError(f"{path}: header says {count} taps, found {len(values)}")
    return values
