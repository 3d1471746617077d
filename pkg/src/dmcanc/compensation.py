"""Offline identification of compensation filters c_km with s_km ~= s_kk * c_km.

Each (k, m) pair is identified with a filtered-x LMS loop: white noise v
drives the cross path s_km (the desired signal) and, through the adaptive
c_km, the self path s_kk (the model output). The update correlates the
error with v filtered by the self-path estimate.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dsp, kernels
from .dsp import FirFilter
from .errors import DivergenceError
from .plant import Plant

log = logging.getLogger(__name__)

DEFAULT_MU_C = 1e-3
DIVERGENCE_RATIO = 10.0


@dataclass
class CompensationFitReport:
    error_power_trace: np.ndarray
    converged: bool
    iterations: int


@dataclass
class CompensationSet:
    """Compensation filters owned by node ``owner``: ``filters[m]`` is c_km."""

    owner: int
    filters: dict = field(default_factory=dict)
    residual_db: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.owner in self.filters:
            raise ValueError(f"node {self.owner} cannot hold a compensation filter for itself")
        lengths = {f.taps for f in self.filters.values()}
        if len(lengths) > 1:
            raise ValueError(f"compensation filters must share one length, got {sorted(lengths)}")

    @property
    def taps(self) -> int | None:
        return next(iter(self.filters.values())).taps if self.filters else None

    def coeffs(self, m: int) -> np.ndarray:
        return self.filters[m].coeffs


def self_path_estimates(plant: Plant, error_db: float | None = None, seed: int = 0) -> list:
    """Estimates of every s_kk, exact by default.

    With ``error_db`` set, each estimate gets additive white noise whose
    energy is ``error_db`` relative to the true path energy.
    """
    N = plant.n_nodes
    return [FirFilter(_perturb(plant.path(k, k), error_db, seed, 100 + k)) for k in range(N)]


def path_estimates(plant: Plant, error_db: float | None = None, seed: int = 0) -> np.ndarray:
    """Estimates of the full secondary-path matrix (for the centralized baseline)."""
    N = plant.n_nodes
    return np.array([[_perturb(plant.path(k, m), error_db, seed, 200 + k * N + m)
                      for m in range(N)] for k in range(N)])


def _perturb(h: np.ndarray, error_db, seed, stream) -> np.ndarray:
    h = np.array(h, dtype=np.float64)
    if error_db is None:
        return h
    noise = dsp.rng(seed, stream).standard_normal(len(h))
    scale = np.sqrt(np.sum(h**2) / np.sum(noise**2) * 10 ** (error_db / 10))
    return h + scale * noise


def compensation_residual(s_kk, s_km, c_km) -> float:
    """10 log10(||s_km - s_kk * c_km||^2 / ||s_km||^2), zero-padding the shorter response."""
    s_kk = _coeffs(s_kk)
    s_km = _coeffs(s_km)
    model = dsp.convolve(s_kk, _coeffs(c_km))
    ref_energy = float(np.sum(s_km**2))
    if ref_energy == 0.0:
        raise ValueError("s_km has zero norm; residual undefined")
    n = max(len(model), len(s_km))
    diff = np.zeros(n)
    diff[: len(s_km)] += s_km
    diff[: len(model)] -= model
    r = float(np.sum(diff**2)) / ref_energy
    return 10.0 * np.log10(r) if r > 0 else -np.inf


def _coeffs(f) -> np.ndarray:
    return f.coeffs if isinstance(f, FirFilter) else np.asarray(f, dtype=np.float64)


def fit_compensation(plant: Plant, k: int, m: int, s_kk_est, mu_c: float = DEFAULT_MU_C,
                     n_samples: int = 10**6, L_c: int = 64, seed: int = 0, *,
                     block: int = 1000, c0=None, backend: str | None = None):
    """Identify c_km by filtered-x LMS. Returns ``(FirFilter, CompensationFitReport)``.

    Adaptation starts from zero, or from ``c0`` when given. Raises :class:`DivergenceError` when block error power reaches ten times
    the first block's.
    """
    if k == m:
        raise ValueError(f"no compensation filter for k == m ({k})")
    if mu_c < 0:
        raise ValueError(f"mu_c must be non-negative, got {mu_c}")
    N = plant.n_nodes
    if not (0 <= k < N and 0 <= m < N):
        raise IndexError(f"node pair ({k}, {m}) out of range for {N} nodes")

    v = dsp.white_noise(seed, n_samples, 1.0, plant.fs, stream=1000 + k * N + m).samples
    desired = dsp.convolve(v, plant.path(k, m))[:n_samples]
    vhat = dsp.convolve(v, _coeffs(s_kk_est))[:n_samples]
    s_model = np.ascontiguousarray(plant.path(k, k))
    c = np.zeros(L_c) if c0 is None else np.array(c0, dtype=np.float64)
    if len(c) != L_c:
        raise ValueError(f"c0 has {len(c)} taps, expected {L_c}")
    power = np.zeros(n_samples // block)
    status = kernels.get(backend).fxlms_identify(v, desired, vhat, s_model, c, float(mu_c),
                                                 block, power, DIVERGENCE_RATIO)
    if status < 0:
        b = -status - 1
        raise DivergenceError(
            f"compensation fit c_{k}{m} diverged in block {b} with mu_c={mu_c}; reduce mu_c",
            sample=b * block,
        )
    trace = 10.0 * np.log10(np.maximum(power[:status], 1e-30))
    return FirFilter(c), CompensationFitReport(trace, _converged(power[:status]), n_samples)


def _converged(power: np.ndarray, span: int = 10) -> bool:
    if len(power) < 2 * span:
        return False
    last = 10 * np.log10(np.mean(power[-span:]) + 1e-300)
    prev = 10 * np.log10(np.mean(power[-2 * span : -span]) + 1e-300)
    return abs(last - prev) <= 1.0


def fit_all(plant: Plant, estimates=None, mu_c: float = DEFAULT_MU_C, n_samples: int = 10**6,
            L_c: int = 64, seed: int = 0, *, backend: str | None = None,
            reports: dict | None = None) -> list:
    """Fit all N(N-1) compensation filters, one active source at a time.

    ``reports``, when given, is filled with ``(k, m) -> CompensationFitReport``.
    """
    N = plant.n_nodes
    if estimates is None:
        estimates = self_path_estimates(plant)
    sets = []
    for k in range(N):
        cs = CompensationSet(k)
        for m in range(N):
            if m == k:
                continue
            try:
                c, rep = fit_compensation(plant, k, m, estimates[k], mu_c, n_samples, L_c, seed,
                                          backend=backend)
            except DivergenceError as exc:
                raise DivergenceError(f"pair (k={k}, m={m}): {exc}", exc.sample) from exc
            cs.filters[m] = c
            cs.residual_db[m] = compensation_residual(plant.path(k, k), plant.path(k, m), c)
            if reports is not None:
                reports[(k, m)] = rep
            log.debug("c_%d%d residual %.1f dB converged=%s", k, m, cs.residual_db[m], rep.converged)
        sets.append(cs)
    return sets


def sets_from_arrays(comp) -> list:
    """Build CompensationSets from ``comp[k][m]`` arrays (diagonal ignored)."""
    N = len(comp)
    return [CompensationSet(k, {m: FirFilter(comp[k][m]) for m in range(N) if m != k})
            for k in range(N)]


def comp_tensor(sets: list, n_nodes: int) -> np.ndarray:
    """Stack sets into an (N, N, L_c) array with zeros on the diagonal."""
    taps = next((s.taps for s in sets if s.taps), 1)
    out = np.zeros((n_nodes, n_nodes, taps))
    for s in sets:
        for m, f in s.filters.items():
            out[s.owner, m] = f.coeffs
    return out


def save_sets(sets: list, directory) -> None:
    """Write ``comp_k_m.txt`` (1-based) and ``manifest.json`` with residuals."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {"n_nodes": len(sets), "taps": next((s.taps for s in sets if s.taps), 0),
                "residual_db": {}}
    for s in sets:
        for m, f in sorted(s.filters.items()):
            f.save(directory / f"comp_{s.owner + 1}_{m + 1}.txt")
            manifest["residual_db"][f"{s.owner + 1}_{m + 1}"] = round(float(s.residual_db.get(m, np.nan)), 6)
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_sets(directory) -> list:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    N = manifest["n_nodes"]
    sets = []
    for k in range(N):
        cs = CompensationSet(k)
        for m in range(N):
            if m != k:
                cs.filters[m] = FirFilter.load(directory / f"comp_{k + 1}_{m + 1}.txt")
                cs.residual_db[m] = manifest["residual_db"].get(f"{k + 1}_{m + 1}", float("nan"))
        sets.append(cs)
    return sets
