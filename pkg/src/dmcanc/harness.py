"""Experiment orchestration: configuration, Monte Carlo runs, MSE traces, spectra, sweeps."""

from __future__ import annotations

import configparser
import dataclasses
import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import compensation as comp_mod
from . import dsp, kernels
from .control import global_filter
from .dsp import FirFilter, Signal
from .errors import ConfigError, DivergenceError
from .network import CommPolicy
from .plant import Plant, disturbances, synthesize_plant

log = logging.getLogger(__name__)

DB_FLOOR = -120.0
DIVERGENCE_FACTOR = 1e3
ALGORITHMS = ("centralized", "dmcanc")


@dataclass
class ExperimentConfig:
    """Full description of one experiment. Defaults reproduce the four-node setup."""

    n_nodes: int = 4
    fs: float = 16000.0
    duration: int = 1_600_000
    noise_band: tuple = (100.0, 1000.0)
    path_band: tuple = (50.0, 5000.0)
    self_taps: int = 256
    cross_taps: int = 320
    primary_taps: int = 320
    L_psi: int = 512
    L_c: int = 64
    mu_psi: float = 1e-5
    mu_c: float = 1e-3
    comp_samples: int = 1_000_000
    algorithm: str = "dmcanc"
    comm: str = "ideal"
    comm_seed: int = 0
    n_runs: int = 30
    seed: int = 0
    plant_seed: int = 0
    cross_gain: float = 0.1
    cross_delay: tuple = (4, 24)
    primary_delay: tuple = (32, 64)
    path_decay: float = 4.0
    path_error_db: float | None = None
    window: int = 4000
    decimation: int = 100
    final_fraction: float = 0.05
    min_reduction_db: float = 15.0
    refresh: int = 1
    workers: int = 1
    outputs: str = "out"

    def __post_init__(self):
        self.noise_band = tuple(float(v) for v in self.noise_band)
        self.path_band = tuple(float(v) for v in self.path_band)
        self.cross_delay = tuple(int(v) for v in self.cross_delay)
        self.primary_delay = tuple(int(v) for v in self.primary_delay)
        self.validate()

    def validate(self) -> None:
        counts = ("n_nodes", "duration", "self_taps", "cross_taps", "primary_taps", "L_psi",
                  "L_c", "comp_samples", "n_runs", "window", "decimation", "refresh", "workers")
        for name in counts:
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive count, got {getattr(self, name)}")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if not self.fs > 0:
            raise ConfigError(f"fs must be positive, got {self.fs}")
        for name in ("noise_band", "path_band"):
            lo, hi = getattr(self, name)
            if not 0 < lo < hi < self.fs / 2:
                raise ConfigError(f"{name} must satisfy 0 < lo < hi < fs/2, got {(lo, hi)}")
        if self.mu_psi < 0 or self.mu_c < 0:
            raise ConfigError("step sizes must be non-negative")
        if self.self_taps > self.cross_taps:
            raise ConfigError("self_taps must not exceed cross_taps")
        if not 0 < self.final_fraction <= 1:
            raise ConfigError("final_fraction must be in (0, 1]")
        self.policy()
        if self.duration < 10 * self.L_psi:
            warnings.warn(f"duration {self.duration} is shorter than 10 * L_psi", stacklevel=3)

    def policy(self) -> CommPolicy:
        return CommPolicy.parse(self.comm, self.fs, self.comm_seed)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def ci(cls, **overrides) -> "ExperimentConfig":
        """Scaled-down profile for fast checks: 8 kHz, three nodes, short filters."""
        base = dict(
            n_nodes=3, fs=8000.0, duration=200_000, path_band=(50.0, 3000.0),
            self_taps=64, cross_taps=80, primary_taps=80, L_psi=128, L_c=16,
            mu_psi=1e-4, mu_c=2e-3, comp_samples=200_000, n_runs=4,
            cross_delay=(2, 12), primary_delay=(16, 32), path_decay=2.0,
            window=2000, decimation=100,
        )
        base.update(overrides)
        return cls(**base)

    def to_file(self, path) -> None:
        cp = configparser.ConfigParser()
        cp["experiment"] = {f.name: _fmt_value(getattr(self, f.name))
                            for f in dataclasses.fields(self)}
        with open(path, "w") as fh:
            cp.write(fh)

    @classmethod
    def from_file(cls, path, **overrides) -> "ExperimentConfig":
        """Read an INI file with an ``[experiment]`` section; unknown keys are errors."""
        cp = configparser.ConfigParser()
        try:
            if not cp.read(path):
                raise ConfigError(f"cannot read config file {path}")
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if "experiment" not in cp:
            raise ConfigError(f"{path}: missing [experiment] section")
        kwargs = _parse_fields(dict(cp["experiment"]), str(path))
        kwargs.update(overrides)
        return cls(**kwargs)

    def with_text_overrides(self, raw: dict) -> "ExperimentConfig":
        """Apply ``key -> string value`` overrides, typed like the config file."""
        return self.replace(**_parse_fields(raw, "override"))


def _parse_fields(raw: dict, origin: str) -> dict:
    # configparser lowercases keys, so match field names case-insensitively
    types = {f.name.lower(): f for f in dataclasses.fields(ExperimentConfig)}
    out = {}
    for key, value in raw.items():
        field = types.get(key.lower())
        if field is None:
            raise ConfigError(f"{origin}: unknown key {key!r}")
        out[field.name] = _parse_value(field.name, value, field.default)
    return out


def _fmt_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, tuple):
        return ", ".join(_fmt_value(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def _parse_value(key: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, tuple):
            parts = [p.strip() for p in raw.split(",")]
            if len(parts) != len(default):
                raise ValueError(f"expected {len(default)} values")
            return tuple(type(d)(float(p)) if isinstance(d, int) else float(p)
                         for d, p in zip(default, parts))
        if default is None or key == "path_error_db":
            return None if raw.lower() == "none" else float(raw)
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(float(raw)) if float(raw).is_integer() else _bad(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from None


def _bad(raw):
    raise ValueError(f"{raw} is not an integer")


@dataclass
class MseTrace:
    """Smoothed error power in dB; ``db[k, i]`` is node k at sample ``samples[i]``."""

    samples: np.ndarray
    db: np.ndarray
    window: int
    averaged: bool = False
    n_runs: int = 1

    @property
    def mean_db(self) -> np.ndarray:
        """Node-averaged trace (average in linear power, then dB)."""
        return _to_db(np.mean(10.0 ** (self.db / 10.0), axis=0))

    def final_db(self, fraction: float = 0.05) -> np.ndarray:
        """Per-node linear mean over the last ``fraction`` of trace points, in dB."""
        n = max(1, int(round(len(self.samples) * fraction)))
        return _to_db(np.mean(10.0 ** (self.db[:, -n:] / 10.0), axis=1))

    def final_mean_db(self, fraction: float = 0.05) -> float:
        n = max(1, int(round(len(self.samples) * fraction)))
        return float(_to_db(np.mean(10.0 ** (self.db[:, -n:] / 10.0))))


def _to_db(p):
    return 10.0 * np.log10(np.maximum(p, 10.0 ** (DB_FLOOR / 10.0)))


def smooth_power(power: np.ndarray, window: int, decimation: int) -> tuple:
    """Trailing moving average of ``power`` rows, sampled at the end of each decimation block.

    Returns ``(sample_indices, smoothed)``. Early samples average over the
    samples available so far.
    """
    power = np.atleast_2d(np.asarray(power, dtype=np.float64))
    T = power.shape[1]
    if window < 1 or decimation < 1:
        raise ValueError("window and decimation must be >= 1")
    if window > T:
        raise ValueError(f"window {window} exceeds signal length {T}")
    idx = np.arange(decimation - 1, T, decimation)
    csum = np.concatenate([np.zeros((power.shape[0], 1)), np.cumsum(power, axis=1)], axis=1)
    lo = np.maximum(idx + 1 - window, 0)
    smoothed = (csum[:, idx + 1] - csum[:, lo]) / (idx + 1 - lo)
    return idx, smoothed


def mse_smooth(e, window: int = 4000, decimation: int = 100) -> MseTrace:
    """Smoothed MSE trace of one error signal or an (N, T) error array."""
    if isinstance(e, Signal):
        e = e.samples
    e = np.atleast_2d(np.asarray(e, dtype=np.float64))
    idx, p = smooth_power(e**2, window, decimation)
    return MseTrace(idx, _to_db(p), window)


@dataclass
class Setup:
    """Everything shared by the runs of one configuration."""

    plant: Plant
    comp_sets: list
    estimates: list
    path_estimates: np.ndarray
    comp_reports: dict = field(default_factory=dict)


def prepare(cfg: ExperimentConfig, plant: Plant | None = None, comp_sets=None) -> Setup:
    """Build (or accept) the plant and fit the compensation filters once."""
    if plant is None:
        plant = synthesize_plant(
            cfg.n_nodes, cfg.self_taps, cfg.cross_taps, cfg.primary_taps, cfg.path_band,
            cfg.fs, cfg.plant_seed, decay=cfg.path_decay, cross_gain=cfg.cross_gain,
            cross_delay=cfg.cross_delay, primary_delay=cfg.primary_delay,
            noise_band=cfg.noise_band,
        )
    if plant.n_nodes != cfg.n_nodes:
        raise ConfigError(f"plant has {plant.n_nodes} nodes, config says {cfg.n_nodes}")
    estimates = comp_mod.self_path_estimates(plant, cfg.path_error_db, cfg.plant_seed)
    path_est = comp_mod.path_estimates(plant, cfg.path_error_db, cfg.plant_seed)
    reports = {}
    if comp_sets is None and cfg.algorithm == "dmcanc":
        comp_sets = comp_mod.fit_all(plant, estimates, cfg.mu_c, cfg.comp_samples, cfg.L_c,
                                     cfg.seed, reports=reports)
    return Setup(plant, comp_sets, estimates, path_est, reports)


@dataclass
class RunResult:
    trace: MseTrace | None
    weights: np.ndarray
    global_filters: np.ndarray
    diverged_at: int | None
    diagnostics: dict
    power: np.ndarray | None = None


def reference_signal(cfg: ExperimentConfig, seed: int) -> np.ndarray:
    return dsp.bandlimited_noise(seed, cfg.duration, *cfg.noise_band, cfg.fs).samples


def fx_filters(setup: Setup) -> np.ndarray:
    from .control import composed_fx_filter

    N = setup.plant.n_nodes
    sets = setup.comp_sets
    return np.array([
        composed_fx_filter(setup.estimates[k], sets[k],
                           {m: sets[m].coeffs(k) for m in range(N) if m != k})
        for k in range(N)
    ])


def global_filters(psi: np.ndarray, comp_sets: list) -> np.ndarray:
    """Global filters w_k for every node from final local filters."""
    N = len(psi)
    return np.array([global_filter(psi[k], {m: psi[m] for m in range(N) if m != k}, comp_sets[k])
                     for k in range(N)])


def run_once(cfg: ExperimentConfig, seed: int | None = None, setup: Setup | None = None,
             *, backend: str | None = None, keep_errors: bool = False) -> RunResult:
    """Simulate one run; divergence is reported in the result, not raised."""
    seed = cfg.seed if seed is None else seed
    setup = setup or prepare(cfg)
    plant = setup.plant
    N, T, L = cfg.n_nodes, cfg.duration, cfg.L_psi
    x = reference_signal(cfg, seed)
    d0 = disturbances(plant, x[: min(T, cfg.window)])
    d_rms = float(np.sqrt(np.mean(d0**2)))
    limit = DIVERGENCE_FACTOR * max(d_rms, 1e-12)
    K = kernels.get(backend)
    P = np.ascontiguousarray(plant.primary_matrix())
    S = np.ascontiguousarray(plant.secondary_tensor())
    e = np.zeros((N, T))
    no_y = np.zeros((0, 0))
    weights = np.zeros((N, L))

    if cfg.algorithm == "centralized":
        status = K.simulate_centralized(x, P, S, np.ascontiguousarray(setup.path_estimates),
                                        weights, cfg.mu_psi, limit, e, no_y)
        gfilters = weights.copy()
    else:
        policy = cfg.policy()
        mode, delay, events = K.COMM_IDEAL, 0, np.zeros((0, 0), dtype=np.uint8)
        if policy.variant == "delay":
            mode, delay = K.COMM_DELAY, policy.delay
        elif policy.variant == "intermittent":
            mode, events = K.COMM_EVENTS, policy.event_matrix(N, T)
        C = comp_mod.comp_tensor(setup.comp_sets, N) if N > 1 else np.zeros((1, 1, 1))
        status = K.simulate_dmcanc(x, P, S, np.ascontiguousarray(C), fx_filters(setup), weights,
                                   cfg.mu_psi, mode, delay, events, cfg.refresh, limit, e, no_y)
        gfilters = global_filters(weights, setup.comp_sets) if N > 1 else weights.copy()

    diverged = None if status < 0 else int(status)
    diag = {"seed": seed, "disturbance_rms": d_rms, "initial_db": float(_to_db(d_rms**2)),
            "algorithm": cfg.algorithm, "comm": cfg.comm}
    if diverged is not None:
        log.warning("run seed=%d diverged at sample %d", seed, diverged)
        return RunResult(None, weights, gfilters, diverged, diag)
    power = e**2
    idx, p = smooth_power(power, cfg.window, cfg.decimation)
    trace = MseTrace(idx, _to_db(p), cfg.window)
    return RunResult(trace, weights, gfilters, None, diag, power if keep_errors else None)


def _run_worker(args):
    cfg, seed, setup = args
    return run_once(cfg, seed, setup, keep_errors=True)


@dataclass
class AveragedResult:
    trace: MseTrace | None
    runs: list
    diverged: list
    initial_db: float

    @property
    def converged(self) -> bool:
        return self.trace is not None and not self.diverged

    def final_mean_db(self, fraction: float = 0.05) -> float:
        return self.trace.final_mean_db(fraction) if self.trace is not None else float("nan")


def run_averaged(cfg: ExperimentConfig, setup: Setup | None = None, seeds=None) -> AveragedResult:
    """Average squared errors over ``n_runs`` runs with seeds ``seed + i``.

    ``seeds`` overrides the seed list (and hence the run count). Runs may
    execute in worker processes; summation is in run order so the result
    does not depend on ``workers``.
    """
    setup = setup or prepare(cfg)
    seeds = [cfg.seed + i for i in range(cfg.n_runs)] if seeds is None else list(seeds)
    if not seeds:
        raise ConfigError("run_averaged needs at least one seed")
    cfg = cfg.replace(n_runs=len(seeds))
    jobs = [(cfg, s, setup) for s in seeds]
    total = None
    done = 0
    diverged = []
    results = []
    pool = ProcessPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 and cfg.n_runs > 1 else None
    try:
        # map yields in job order, so the running sum is independent of scheduling
        for r in (pool.map(_run_worker, jobs) if pool else map(_run_worker, jobs)):
            results.append(r)
            if r.diverged_at is not None:
                diverged.append((r.diagnostics["seed"], r.diverged_at))
                continue
            total = r.power if total is None else total + r.power
            r.power = None
            done += 1
    finally:
        if pool:
            pool.shutdown()
    if diverged:
        warnings.warn(f"{len(diverged)} of {cfg.n_runs} runs diverged; averaging {done} runs",
                      stacklevel=2)
    initial = float(np.mean([r.diagnostics["initial_db"] for r in results]))
    if total is None:
        return AveragedResult(None, results, diverged, initial)
    idx, p = smooth_power(total / done, cfg.window, cfg.decimation)
    return AveragedResult(MseTrace(idx, _to_db(p), cfg.window, True, done), results, diverged,
                          initial)


@dataclass
class SpectraReport:
    freqs: np.ndarray
    mag_a: np.ndarray
    mag_b: np.ndarray
    deviation_db: np.ndarray
    band: tuple


def spectra_report(weights_a, weights_b, fs: float, band=(100.0, 1000.0),
                   n_fft: int = 4096) -> SpectraReport:
    """Max in-band |dB difference| between two sets of filters, per node.

    Magnitudes are floored at -120 dB before comparison, so a zeroed filter
    yields the other filter's in-band level relative to that floor.
    """
    a = np.atleast_2d(np.asarray(weights_a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(weights_b, dtype=np.float64))
    if a.shape[0] != b.shape[0]:
        raise ValueError("weight sets must cover the same nodes")
    n = max(a.shape[1], b.shape[1])
    a = np.pad(a, ((0, 0), (0, n - a.shape[1])))
    b = np.pad(b, ((0, 0), (0, n - b.shape[1])))
    freqs = np.fft.rfftfreq(n_fft, 1.0 / fs)
    A = np.abs(np.fft.rfft(a, n_fft, axis=1))
    B = np.abs(np.fft.rfft(b, n_fft, axis=1))
    sel = (freqs >= band[0]) & (freqs <= band[1])
    dev = np.max(np.abs(_mag_db(A[:, sel]) - _mag_db(B[:, sel])), axis=1)
    return SpectraReport(freqs, A, B, dev, tuple(band))


def _mag_db(m):
    return 20.0 * np.log10(np.maximum(m, 10.0 ** (DB_FLOOR / 20.0)))


@dataclass
class SweepRow:
    param: float
    final_db: np.ndarray
    final_mean_db: float
    converged: bool
    diverged: bool = False


def sweep(cfg: ExperimentConfig, axis: str, values, setup: Setup | None = None) -> list:
    """One averaged run per axis point (``delay`` in samples or ``rate`` in events/s)."""
    values = list(values)
    if not values:
        raise ConfigError("sweep axis is empty")
    if axis not in ("delay", "rate"):
        raise ConfigError(f"sweep axis must be 'delay' or 'rate', got {axis!r}")
    cfg = cfg.replace(algorithm="dmcanc")
    setup = setup or prepare(cfg)
    rows = []
    for v in values:
        comm = f"delay:{int(v)}" if axis == "delay" else f"intermittent:{v:g}"
        point = cfg.replace(comm=comm)
        res = run_averaged(point, setup)
        if res.trace is None:
            rows.append(SweepRow(v, np.full(cfg.n_nodes, np.nan), float("nan"), False, True))
            continue
        final = res.trace.final_db(cfg.final_fraction)
        mean = res.final_mean_db(cfg.final_fraction)
        ok = not res.diverged and mean <= res.initial_db - cfg.min_reduction_db
        rows.append(SweepRow(v, final, mean, ok, bool(res.diverged)))
    return rows


# CSV output: fixed formatting keeps repeated invocations byte-identical.

def _f(v: float) -> str:
    return f"{v:.6f}"


def write_mse_csv(path, trace: MseTrace) -> None:
    N = trace.db.shape[0]
    header = ["sample"] + [f"mse_node_{k + 1}_db" for k in range(N)] + ["mse_mean_db"]
    mean = trace.mean_db
    lines = [",".join(header)]
    for i, s in enumerate(trace.samples):
        lines.append(",".join([str(int(s))] + [_f(trace.db[k, i]) for k in range(N)] + [_f(mean[i])]))
    Path(path).write_text("\n".join(lines) + "\n")


def write_compare_csv(path, traces: dict) -> None:
    """``sample`` then per-algorithm node and mean columns, algorithms in sorted order."""
    names = sorted(traces)
    first = traces[names[0]]
    N = first.db.shape[0]
    header = ["sample"]
    for a in names:
        header += [f"{a}_node_{k + 1}_db" for k in range(N)] + [f"{a}_mean_db"]
    means = {a: traces[a].mean_db for a in names}
    lines = [",".join(header)]
    for i, s in enumerate(first.samples):
        row = [str(int(s))]
        for a in names:
            row += [_f(traces[a].db[k, i]) for k in range(N)] + [_f(means[a][i])]
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n")


def write_spectra_csv(path, rep: SpectraReport, names=("a", "b")) -> None:
    N = rep.mag_a.shape[0]
    header = ["frequency_hz"] + [f"{names[0]}_node_{k + 1}" for k in range(N)] \
        + [f"{names[1]}_node_{k + 1}" for k in range(N)]
    lines = [",".join(header)]
    for i, f in enumerate(rep.freqs):
        vals = [f"{rep.mag_a[k, i]:.9e}" for k in range(N)] + [f"{rep.mag_b[k, i]:.9e}" for k in range(N)]
        lines.append(",".join([_f(f)] + vals))
    Path(path).write_text("\n".join(lines) + "\n")


def write_sweep_csv(path, rows: list) -> None:
    lines = ["param,final_mse_mean_db,converged"]
    for r in rows:
        lines.append(f"{r.param:g},{_f(r.final_mean_db)},{int(r.converged)}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_weights(directory, weights: np.ndarray, prefix: str) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for k, w in enumerate(weights):
        FirFilter(w).save(directory / f"{prefix}_{k + 1}.txt")


def raise_if_all_diverged(res: AveragedResult) -> None:
    if res.trace is None:
        seed, at = res.diverged[0]
        raise DivergenceError(f"every run diverged (first: seed {seed} at sample {at})", at)


def expansion_check(cfg: ExperimentConfig, samples: int = 20_000, seed: int | None = None,
                    fitted: bool = False, *, backend: str | None = None) -> np.ndarray:
    """Per-node max deviation between measured errors and the compensation expansion.

    Uses a constructed plant (cross paths exactly s_kk * c_true) and random
    control filters held fixed. With ``fitted`` the compensation filters come
    from the identification stage instead of the construction, so the
    deviation reflects their modelling error.
    """
    from .control import ExpansionRecord, error_expansion_check
    from .plant import constructed_plant

    seed = cfg.seed if seed is None else seed
    plant, c_true = constructed_plant(
        cfg.n_nodes, cfg.self_taps, cfg.cross_taps, cfg.primary_taps, cfg.L_c, cfg.path_band,
        cfg.fs, cfg.plant_seed, cross_gain=cfg.cross_gain, cross_delay=cfg.cross_delay,
        primary_delay=cfg.primary_delay, decay=cfg.path_decay, noise_band=cfg.noise_band,
    )
    N = cfg.n_nodes
    if fitted:
        sets = comp_mod.fit_all(plant, None, cfg.mu_c, cfg.comp_samples, cfg.L_c, cfg.seed)
    else:
        sets = comp_mod.sets_from_arrays(c_true)
    setup = Setup(plant, sets, comp_mod.self_path_estimates(plant), plant.secondary_tensor())
    x = dsp.bandlimited_noise(seed, samples, *cfg.noise_band, cfg.fs).samples
    psi = 0.05 * dsp.rng(seed, 7).standard_normal((N, cfg.L_psi))
    work = psi.copy()
    e = np.zeros((N, samples))
    C = comp_mod.comp_tensor(sets, N) if N > 1 else np.zeros((1, 1, 1))
    K = kernels.get(backend)
    K.simulate_dmcanc(x, np.ascontiguousarray(plant.primary_matrix()),
                      np.ascontiguousarray(plant.secondary_tensor()), C, fx_filters(setup), work,
                      0.0, K.COMM_IDEAL, 0, np.zeros((0, 0), dtype=np.uint8), 1, np.inf, e,
                      np.zeros((0, 0)))
    rec = ExpansionRecord(x, psi, e)
    return np.array([error_expansion_check(rec, plant, sets, k) for k in range(N)])
