"""Acceptance criteria, one printed PASS/FAIL line each.

Runs on the scaled CI profile by default. ``DMCANC_ACCEPTANCE=full`` switches
criteria 1-4 to the full four-node configuration (tens of minutes);
``DMCANC_WORKERS`` sets the process count for that mode.
"""

import os
import time

import numpy as np
import pytest

from dmcanc import compensation as C
from dmcanc import control, dsp, plant
from dmcanc import harness as H
from dmcanc.cli import EXIT_OK, main
from dmcanc.dsp import FirFilter

from oracles import ls_compensation, naive_convolve

PARITY_DB = 2.0
MIN_REDUCTION_DB = 15.0
SPECTRAL_DB = 3.0
SPECTRAL_BAND = (100.0, 1000.0)
DELAYS = (0, 500, 1500, 3000)
DELAY_SPREAD_DB = 3.0
RATE_FRACTION = 0.001
RATE_SPREAD_DB = 3.0
FXLMS_RESIDUAL_DB = -30.0
LS_RESIDUAL_DB = -200.0
LS_GAP_DB = 3.0
FIR_TOL = 1e-10
GRADIENT_RTOL = 1e-6
EXPANSION_TOL = 1e-8
PROPERTY_BUDGET_S = 60.0

FULL = os.environ.get("DMCANC_ACCEPTANCE", "ci").lower() == "full"


def _report(capsys, number, name, ok, detail):
    with capsys.disabled():
        print(f"\n[acceptance] criterion {number} {name}: {'PASS' if ok else 'FAIL'} ({detail})")


@pytest.fixture(scope="module")
def cfg():
    if FULL:
        return H.ExperimentConfig(workers=int(os.environ.get("DMCANC_WORKERS", "1")))
    return H.ExperimentConfig.ci()


@pytest.fixture(scope="module")
def setup(cfg):
    return H.prepare(cfg)


@pytest.fixture(scope="module")
def compared(cfg, setup):
    return {alg: H.run_averaged(cfg.replace(algorithm=alg), setup) for alg in H.ALGORITHMS}


@pytest.fixture(scope="module")
def delay_rows(cfg, setup):
    return H.sweep(cfg, "delay", DELAYS, setup)


def test_criterion_1_baseline_parity(capsys, cfg, compared):
    cen, dmc = compared["centralized"], compared["dmcanc"]
    f_cen, f_dmc = cen.final_mean_db(cfg.final_fraction), dmc.final_mean_db(cfg.final_fraction)
    red_cen, red_dmc = cen.initial_db - f_cen, dmc.initial_db - f_dmc
    ok = (cen.converged and dmc.converged and abs(f_dmc - f_cen) <= PARITY_DB
          and min(red_cen, red_dmc) >= MIN_REDUCTION_DB)
    _report(capsys, 1, "baseline parity", ok,
            f"centralized {f_cen:.2f} dB, dmcanc {f_dmc:.2f} dB, gap {abs(f_dmc - f_cen):.2f} "
            f"<= {PARITY_DB}; reductions {red_cen:.1f}/{red_dmc:.1f} >= {MIN_REDUCTION_DB} dB")
    assert ok


def test_criterion_2_spectral_parity(capsys, cfg, compared):
    mean_w = {a: np.mean([r.global_filters for r in res.runs if r.diverged_at is None], axis=0)
              for a, res in compared.items()}
    rep = H.spectra_report(mean_w["centralized"], mean_w["dmcanc"], cfg.fs, SPECTRAL_BAND)
    ok = bool(np.all(rep.deviation_db <= SPECTRAL_DB))
    _report(capsys, 2, "spectral parity", ok,
            "per-node max deviation " + ", ".join(f"{d:.2f}" for d in rep.deviation_db)
            + f" dB <= {SPECTRAL_DB}")
    assert ok


def test_criterion_3_delay_tolerance(capsys, delay_rows):
    ref = delay_rows[0].final_mean_db
    spread = max(abs(r.final_mean_db - ref) for r in delay_rows)
    ok = all(r.converged for r in delay_rows) and spread <= DELAY_SPREAD_DB
    _report(capsys, 3, "delay tolerance", ok,
            ", ".join(f"p={r.param:g}: {r.final_mean_db:.2f} dB" for r in delay_rows)
            + f"; spread {spread:.2f} <= {DELAY_SPREAD_DB} dB")
    assert ok


def test_criterion_4_interruption_tolerance(capsys, cfg, setup, delay_rows):
    rate = RATE_FRACTION * cfg.fs
    row = H.sweep(cfg, "rate", [rate], setup)[0]
    ideal = delay_rows[0].final_mean_db  # delay 0 is the ideal policy
    gap = abs(row.final_mean_db - ideal)
    ok = row.converged and gap <= RATE_SPREAD_DB
    _report(capsys, 4, "interruption tolerance", ok,
            f"rate {rate:g}/s: {row.final_mean_db:.2f} dB vs ideal {ideal:.2f} dB, "
            f"gap {gap:.2f} <= {RATE_SPREAD_DB} dB")
    assert ok


def test_criterion_5_compensation_identity(capsys):
    p, _ = plant.constructed_plant(2, seed=0)
    fitted, _ = C.fit_compensation(p, 1, 0, C.self_path_estimates(p)[1], n_samples=10**6)
    fx_db = C.compensation_residual(p.path(1, 1), p.path(1, 0), fitted)
    c_ls, _ = ls_compensation(p.path(1, 1)[:256], p.path(1, 0), 64)
    ls_db = C.compensation_residual(p.path(1, 1), p.path(1, 0), c_ls)
    gaps = []
    for seed in (0, 1, 2):
        r = plant.synthesize_plant(2, seed=seed, decay=64.0, reflection_gain=1.0, cross_gain=1.0)
        c, _ = C.fit_compensation(r, 0, 1, C.self_path_estimates(r)[0], mu_c=1e-4,
                                  n_samples=10**6)
        _, floor = ls_compensation(r.path(0, 0), r.path(0, 1), 64)
        gaps.append(C.compensation_residual(r.path(0, 0), r.path(0, 1), c) - floor)
    ok = fx_db <= FXLMS_RESIDUAL_DB and ls_db <= LS_RESIDUAL_DB and max(gaps) <= LS_GAP_DB
    _report(capsys, 5, "compensation identity", ok,
            f"constructed FxLMS {fx_db:.1f} <= {FXLMS_RESIDUAL_DB} dB, LS {ls_db:.1f} <= "
            f"{LS_RESIDUAL_DB} dB; random plants above LS by "
            + ", ".join(f"{g:.2f}" for g in gaps) + f" <= {LS_GAP_DB} dB")
    assert ok


def _frozen_errors(p, x, W):
    T = len(x)
    y = [dsp.convolve(x, w)[:T] for w in W]
    e = np.array([dsp.convolve(x, p.primary[k].coeffs)[:T] for k in range(p.n_nodes)])
    for k in range(p.n_nodes):
        for m in range(p.n_nodes):
            e[k] -= dsp.convolve(y[m], p.path(k, m))[:T]
    return e


def _fir_deviation(rng):
    h, x = rng.standard_normal(128), rng.standard_normal(4000)
    ref = naive_convolve(h, x)[:4000]
    return np.max(np.abs(FirFilter(h).process(x) - ref)) / np.max(np.abs(ref))


def _lms_single_step(rng):
    nodes = control.make_nodes(C.sets_from_arrays([[None, rng.standard_normal(3)],
                                                   [rng.standard_normal(3), None]]),
                               [FirFilter(rng.standard_normal(5)) for _ in range(2)], 8)
    nd = nodes[0]
    for v in rng.standard_normal(20):
        control.filtered_reference_step(nd, v)
    before, xhat = nd.psi.coeffs.copy(), nd.xhat.copy()
    control.local_update(nd, -0.3, 0.05)
    return np.max(np.abs(nd.psi.coeffs - (before + (0.05 * -0.3) * xhat)))


def _centralized_gradient(rng, p):
    T, L, mu, eps = 300, 12, 1e-3, 1e-7
    x = rng.standard_normal(T)
    W = 0.1 * rng.standard_normal((p.n_nodes, L))
    state = control.CentralizedState.create(p.secondary_tensor(), L)
    state.W[:] = W
    for v in x:
        control.centralized_step(state, v, None, 0.0)
    control.centralized_adapt(state, _frozen_errors(p, x, W)[:, -1], mu)
    D = rng.standard_normal(W.shape)
    J = lambda Wt: np.sum(_frozen_errors(p, x, Wt)[:, -1] ** 2)  # noqa: E731
    fd = (J(W + eps * D) - J(W - eps * D)) / (2 * eps)
    analytic = -2.0 / mu * np.sum((state.W - W) * D)
    return abs(fd - analytic) / abs(analytic)


def _distributed_gradient(rng, p, c_true):
    sets = C.sets_from_arrays(c_true)
    N, T, L, mu, eps, k = p.n_nodes, 300, 12, 1e-3, 1e-7, 1
    x = rng.standard_normal(T)
    psi = 0.1 * rng.standard_normal((N, L))

    def e_k(psi_k):
        ps = psi.copy()
        ps[k] = psi_k
        W = [control.global_filter(ps[m], {j: ps[j] for j in range(N) if j != m}, sets[m])
             for m in range(N)]
        return _frozen_errors(p, x, np.array(W))[k, -1]

    nd = control.make_nodes(sets, C.self_path_estimates(p), L)[k]
    nd.psi.coeffs = psi[k].copy()
    for v in x:
        control.filtered_reference_step(nd, v)
    control.local_update(nd, e_k(psi[k]), mu)
    D = rng.standard_normal(L)
    fd = (e_k(psi[k] + eps * D) ** 2 - e_k(psi[k] - eps * D) ** 2) / (2 * eps)
    analytic = -2.0 / mu * np.dot(nd.psi.coeffs - psi[k], D)
    return abs(fd - analytic) / abs(analytic)


def test_criterion_6_oracle_equivalences(capsys):
    start = time.perf_counter()
    rng = np.random.default_rng(6)
    small = H.ExperimentConfig.ci(duration=6000, n_runs=1, window=500, decimation=50,
                                  comp_samples=20_000)
    p, c_true = plant.constructed_plant(3, 24, 32, 32, 8, (200.0, 3000.0), 8000.0, seed=3,
                                        cross_delay=(1, 4), primary_delay=(2, 6),
                                        prototype_taps=9)
    fir = _fir_deviation(rng)
    lms = _lms_single_step(rng)
    g_cen = _centralized_gradient(rng, p)
    g_dmc = _distributed_gradient(rng, p, c_true)

    one = small.replace(n_nodes=1)
    one_setup = H.prepare(one)
    a = H.run_once(one.replace(algorithm="centralized"), setup=one_setup, keep_errors=True)
    b = H.run_once(one, setup=one_setup, keep_errors=True)
    single = np.array_equal(a.power, b.power) and np.array_equal(a.weights, b.weights)

    expansion = max(H.expansion_check(small, samples=4000).max(),
                    H.expansion_check(small.replace(n_nodes=4), samples=4000).max())

    small_setup = H.prepare(small)
    traces = [H.run_once(small.replace(comm=c), setup=small_setup, keep_errors=True).power
              for c in ("ideal", "delay:0", f"intermittent:{small.fs:g}")]
    comm_equal = all(np.array_equal(traces[0], t) for t in traces[1:])
    elapsed = time.perf_counter() - start

    ok = (fir <= FIR_TOL and lms == 0.0 and max(g_cen, g_dmc) <= GRADIENT_RTOL and single
          and expansion <= EXPANSION_TOL and comm_equal and elapsed < PROPERTY_BUDGET_S)
    _report(capsys, 6, "oracle equivalences", ok,
            f"FIR {fir:.1e} <= {FIR_TOL:g}; single-step LMS exact={lms == 0.0}; "
            f"gradient rel. error {g_cen:.1e}/{g_dmc:.1e} <= {GRADIENT_RTOL:g}; "
            f"N=1 bitwise={single}; expansion {expansion:.1e} <= {EXPANSION_TOL:g}; "
            f"comm equivalence={comm_equal}; {elapsed:.1f} s < {PROPERTY_BUDGET_S:g} s")
    assert ok


def test_criterion_7_determinism(capsys, tmp_path):
    small = ["--ci", "--set", "duration=20000", "--set", "n_runs=2", "--set",
             "comp_samples=50000"]
    commands = [["paths"], ["compensate"], ["run"], ["compare"],
                ["sweep", "--axis", "delay", "--values", "0,500"],
                ["sweep", "--axis", "rate", "--values", "8000,8"], ["check", "--samples", "3000"]]
    mismatched = []
    for i, argv in enumerate(commands):
        outputs = []
        for tag in ("a", "b"):
            out = tmp_path / f"{i}{tag}"
            assert main(argv + small + ["--out", str(out)]) == EXIT_OK
            outputs.append({q.relative_to(out).as_posix(): q.read_bytes()
                            for q in sorted(out.rglob("*")) if q.is_file()})
        if outputs[0] != outputs[1] or not outputs[0]:
            mismatched.append(argv[0])
    capsys.readouterr()
    ok = not mismatched
    _report(capsys, 7, "determinism", ok,
            f"{len(commands)} subcommand invocations repeated; byte-identical outputs"
            + (f"; mismatched: {mismatched}" if mismatched else ""))
    assert ok
