"""Synthetic acoustic plant: primary paths, secondary-path matrix, streaming step.

Path recipe (all paths share it): a band-pass "transducer" prototype
convolved with a room tail made of a bulk propagation delay, a unit direct
arrival and a few exponentially decaying random reflections; then
peak-normalized. Cross paths get an extra bulk delay and an attenuation
``cross_gain`` because their source sits farther from the sensor. Self paths
are zero-padded to the cross-path length.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dsp
from .dsp import FirFilter, Signal


@dataclass
class PlantStepOutput:
    d: np.ndarray
    e: np.ndarray


@dataclass
class Plant:
    """Ground-truth acoustic world for ``N`` nodes.

    ``secondary[k][m]`` is the path from source m to error sensor k.
    Filters carry streaming state; :meth:`reset` clears it.
    """

    primary: list
    secondary: list
    fs: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        N = len(self.primary)
        if len(self.secondary) != N or any(len(row) != N for row in self.secondary):
            raise ValueError("secondary must be an N x N matrix of filters")
        lengths = {f.taps for row in self.secondary for f in row}
        if len(lengths) != 1:
            raise ValueError(f"secondary paths must share one tap length, got {sorted(lengths)}")

    @property
    def n_nodes(self) -> int:
        return len(self.primary)

    def primary_matrix(self) -> np.ndarray:
        return np.array([f.coeffs for f in self.primary])

    def secondary_tensor(self) -> np.ndarray:
        return np.array([[f.coeffs for f in row] for row in self.secondary])

    def path(self, k: int, m: int) -> np.ndarray:
        return self.secondary[k][m].coeffs

    def reset(self) -> None:
        for f in self.primary:
            f.reset()
        for row in self.secondary:
            for f in row:
                f.reset()

    def copy(self) -> "Plant":
        """Fresh-state clone (for independent runs)."""
        return Plant(
            [f.copy() for f in self.primary],
            [[f.copy() for f in row] for row in self.secondary],
            self.fs,
            dict(self.meta),
        )

    def step(self, x_n: float, y) -> PlantStepOutput:
        return plant_step(self, x_n, y)

    def save(self, directory) -> None:
        """Write ``primary_k.txt``, ``secondary_k_m.txt`` and ``manifest.json`` (1-based k, m)."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        N = self.n_nodes
        for k in range(N):
            self.primary[k].save(directory / f"primary_{k + 1}.txt")
            for m in range(N):
                self.secondary[k][m].save(directory / f"secondary_{k + 1}_{m + 1}.txt")
        manifest = {
            "n_nodes": N,
            "fs": self.fs,
            "primary_taps": self.primary[0].taps,
            "secondary_taps": self.secondary[0][0].taps,
            **self.meta,
        }
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, directory) -> "Plant":
        directory = Path(directory)
        manifest = json.loads((directory / "manifest.json").read_text())
        N = manifest["n_nodes"]
        primary = [FirFilter.load(directory / f"primary_{k + 1}.txt") for k in range(N)]
        secondary = [
            [FirFilter.load(directory / f"secondary_{k + 1}_{m + 1}.txt") for m in range(N)]
            for k in range(N)
        ]
        meta = {k: v for k, v in manifest.items()
                if k not in ("n_nodes", "fs", "primary_taps", "secondary_taps")}
        return cls(primary, secondary, manifest["fs"], meta)


def _room_tail(gen: np.random.Generator, length: int, delay: int, decay: float,
               reflection_gain: float) -> np.ndarray:
    tail = np.zeros(length)
    n = length - delay
    if n <= 0:
        raise ValueError(f"bulk delay {delay} does not fit a {length}-tap tail")
    i = np.arange(n)
    tail[delay:] = reflection_gain * gen.standard_normal(n) * np.exp(-i / decay)
    tail[delay] = 1.0
    return tail


def synthesize_path(gen: np.random.Generator, taps: int, prototype: np.ndarray,
                    delay: int = 0, decay: float = 4.0, reflection_gain: float = 0.3) -> np.ndarray:
    """One peak-normalized path of exactly ``taps`` taps."""
    tail_len = taps - len(prototype) + 1
    if tail_len < 1:
        raise ValueError(f"prototype ({len(prototype)} taps) longer than path ({taps} taps)")
    h = dsp.convolve(prototype, _room_tail(gen, tail_len, delay, decay, reflection_gain))
    return h / np.max(np.abs(h))


def synthesize_plant(n_nodes: int = 4, self_taps: int = 256, cross_taps: int = 320,
                     primary_taps: int = 320, band=(50.0, 5000.0), fs: float = 16000.0,
                     seed: int = 0, *, prototype_taps: int | None = None,
                     decay: float = 4.0, reflection_gain: float = 0.3,
                     cross_gain: float = 0.1, cross_delay=(4, 24), primary_delay=(32, 64),
                     noise_band=(100.0, 1000.0)) -> Plant:
    """Seeded synthetic plant.

    ``prototype_taps`` defaults to ``3 * self_taps // 4`` rounded to odd.
    Delays are in samples, drawn uniformly from ``[lo, hi)``. Primary paths
    are rescaled so a unit-power reference band-limited to ``noise_band``
    produces unit disturbance power at every sensor.
    """
    if self_taps > cross_taps:
        raise ValueError(f"self_taps ({self_taps}) must not exceed cross_taps ({cross_taps})")
    if n_nodes < 1:
        raise ValueError("n_nodes must be >= 1")
    if prototype_taps is None:
        prototype_taps = (3 * self_taps // 4) | 1
    if prototype_taps > self_taps:
        raise ValueError("prototype_taps must not exceed self_taps")
    proto = dsp.design_bandpass(prototype_taps, band[0], band[1], fs).coeffs
    gen = dsp.rng(seed, 1)

    N = n_nodes
    secondary = [[None] * N for _ in range(N)]
    for k in range(N):
        for m in range(N):
            if k == m:
                h = synthesize_path(gen, self_taps, proto, 0, decay, reflection_gain)
                h = np.concatenate([h, np.zeros(cross_taps - self_taps)])
            else:
                dl = int(gen.integers(*cross_delay))
                h = cross_gain * synthesize_path(gen, cross_taps, proto, dl, decay, reflection_gain)
            secondary[k][m] = FirFilter(h)
    primary = []
    for k in range(N):
        dl = int(gen.integers(*primary_delay))
        h = synthesize_path(gen, primary_taps, proto, dl, decay, reflection_gain)
        primary.append(FirFilter(h / np.sqrt(band_power_gain(h, noise_band, fs))))

    meta = {
        "seed": seed, "self_taps": self_taps, "cross_taps": cross_taps,
        "band": list(band), "prototype_taps": prototype_taps, "decay": decay,
        "reflection_gain": reflection_gain, "cross_gain": cross_gain,
        "cross_delay": list(cross_delay), "primary_delay": list(primary_delay),
        "noise_band": list(noise_band),
    }
    return Plant(primary, secondary, fs, meta)


def band_power_gain(h, band, fs: float, n_fft: int = 1 << 15) -> float:
    """Output power of ``h`` for unit-power noise flat over ``band`` (DFT average)."""
    f, H = dsp.magnitude_response(h, fs, n_fft)
    sel = (f >= band[0]) & (f <= band[1])
    return float(np.mean(H[sel] ** 2))


def constructed_plant(n_nodes: int = 4, self_taps: int = 256, cross_taps: int = 320,
                      primary_taps: int = 320, comp_taps: int = 64, band=(50.0, 5000.0),
                      fs: float = 16000.0, seed: int = 0, *, cross_gain: float = 0.1,
                      comp_decay: float = 4.0, cross_delay=(4, 24), **kwargs):
    """Plant whose cross paths are exactly ``s_kk * c_true[k][m]``.

    Returns ``(plant, c_true)`` with ``c_true[k][m]`` a ``comp_taps`` array
    (``None`` on the diagonal). Needs ``self_taps + comp_taps - 1 <= cross_taps``.
    """
    if self_taps + comp_taps - 1 > cross_taps:
        raise ValueError("self_taps + comp_taps - 1 must fit in cross_taps")
    base = synthesize_plant(n_nodes, self_taps, cross_taps, primary_taps, band, fs, seed,
                            cross_gain=cross_gain, cross_delay=cross_delay, **kwargs)
    gen = dsp.rng(seed, 2)
    N = n_nodes
    c_true = [[None] * N for _ in range(N)]
    for k in range(N):
        s_kk = base.secondary[k][k].coeffs[:self_taps]
        for m in range(N):
            if k == m:
                continue
            dl = int(gen.integers(*cross_delay))
            c = cross_gain * _room_tail(gen, comp_taps, dl, comp_decay, 0.3)
            c_true[k][m] = c
            h = np.zeros(cross_taps)
            h[: self_taps + comp_taps - 1] = dsp.convolve(s_kk, c)
            base.secondary[k][m] = FirFilter(h)
    base.meta["constructed"] = True
    base.meta["comp_taps"] = comp_taps
    return base, c_true


def plant_step(plant: Plant, x_n: float, y) -> PlantStepOutput:
    """Advance the plant one sample: d_k = (x * p_k)(n), e_k = d_k - sum_m (y_m * s_km)(n)."""
    y = np.asarray(y, dtype=np.float64).ravel()
    N = plant.n_nodes
    if len(y) != N:
        raise ValueError(f"expected {N} control samples, got {len(y)}")
    xv = np.array([x_n], dtype=np.float64)
    d = np.array([plant.primary[k].process(xv)[0] for k in range(N)])
    e = d.copy()
    for k in range(N):
        for m in range(N):
            e[k] -= plant.secondary[k][m].process(y[m : m + 1])[0]
    return PlantStepOutput(d, e)


def disturbances(plant: Plant, x) -> np.ndarray:
    """Batch disturbances ``d_k = x * p_k`` truncated to ``len(x)`` (zero state)."""
    x = x.samples if isinstance(x, Signal) else np.asarray(x, dtype=np.float64)
    return np.array([dsp.convolve(x, f.coeffs)[: len(x)] for f in plant.primary])


def interference(plant: Plant, y_histories, k: int) -> Signal:
    """Cross-talk at sensor k: sum over m != k of (y_m * s_km), zero initial state."""
    N = plant.n_nodes
    if not 0 <= k < N:
        raise IndexError(f"node index {k} out of range for {N} nodes")
    ys = [h.samples if isinstance(h, Signal) else np.asarray(h, dtype=np.float64)
          for h in y_histories]
    if len(ys) != N:
        raise ValueError(f"expected {N} control histories, got {len(ys)}")
    T = len(ys[0])
    gamma = np.zeros(T)
    for m in range(N):
        if m != k:
            gamma += dsp.convolve(ys[m], plant.path(k, m))[:T]
    return Signal(gamma, plant.fs)
