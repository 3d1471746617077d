"""Time the compiled core against the numpy fallback.

    python benchmarks/bench_kernels.py [--samples 20000] [--repeat 3]

Each kernel runs on the same inputs under both backends; the table reports
the best wall time, throughput and speed-up. Outputs are cross-checked so a
fast but wrong build is caught here too.
"""

import argparse
import time

import numpy as np

from dmcanc import compensation as C
from dmcanc import harness as H
from dmcanc import kernels


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def _cases(cfg, setup, T):
    N, L = cfg.n_nodes, cfg.L_psi
    x = H.reference_signal(cfg, 0)[:T]
    P = np.ascontiguousarray(setup.plant.primary_matrix())
    S = np.ascontiguousarray(setup.plant.secondary_tensor())
    comp = np.ascontiguousarray(C.comp_tensor(setup.comp_sets, N))
    fx = H.fx_filters(setup)
    events = cfg.replace(comm="intermittent:16").policy().event_matrix(N, T)
    no_events = np.zeros((0, 0), dtype=np.uint8)

    def dmcanc(K, mode, ev=no_events, delay=0):
        def run():
            psi, e = np.zeros((N, L)), np.zeros((N, T))
            K.simulate_dmcanc(x, P, S, comp, fx, psi, cfg.mu_psi, mode, delay, ev, 1, np.inf, e,
                              np.zeros((0, 0)))
            return e
        return run

    def centralized(K):
        def run():
            W, e = np.zeros((N, L)), np.zeros((N, T))
            K.simulate_centralized(x, P, S, np.ascontiguousarray(setup.path_estimates), W,
                                   cfg.mu_psi, np.inf, e, np.zeros((0, 0)))
            return e
        return run

    def identify(K):
        v = np.random.default_rng(0).standard_normal(T)
        desired = np.convolve(v, setup.plant.path(0, 1))[:T]
        vhat = np.convolve(v, setup.plant.path(0, 0))[:T]
        s_model = setup.plant.path(0, 0)

        def run():
            c = np.zeros(cfg.L_c)
            K.fxlms_identify(v, desired, vhat, s_model, c, cfg.mu_c, 1000, np.zeros(T // 1000),
                             10.0)
            return c
        return run

    return {
        "dmcanc ideal": lambda K: dmcanc(K, K.COMM_IDEAL),
        "dmcanc delay 3000": lambda K: dmcanc(K, K.COMM_DELAY, delay=3000),
        "dmcanc intermittent": lambda K: dmcanc(K, K.COMM_EVENTS, ev=events),
        "centralized": centralized,
        "compensation fit": identify,
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=20_000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--ci", action="store_true", help="scaled-down plant and filter lengths")
    args = ap.parse_args(argv)

    cfg = H.ExperimentConfig.ci() if args.ci else H.ExperimentConfig(comp_samples=20_000)
    setup = H.prepare(cfg)
    compiled, python = kernels.load("compiled"), kernels.load("python")
    if compiled is python or not compiled.__name__.endswith("._kernels"):
        raise SystemExit("compiled kernels are not built; run `pip install -e .` first")

    print(f"N={cfg.n_nodes} L_psi={cfg.L_psi} L_c={cfg.L_c} samples={args.samples}")
    print(f"{'kernel':<22}{'compiled s':>12}{'python s':>12}{'ksamples/s':>12}{'speed-up':>10}")
    for name, make in _cases(cfg, setup, args.samples).items():
        t_c, out_c = _best(make(compiled), args.repeat)
        t_p, out_p = _best(make(python), args.repeat)
        scale = max(1.0, float(np.max(np.abs(out_p))))
        if not np.allclose(out_c, out_p, rtol=0, atol=1e-9 * scale):
            raise SystemExit(f"{name}: backends disagree")
        rate = args.samples / t_c / 1e3
        print(f"{name:<22}{t_c:>12.3f}{t_p:>12.3f}{rate:>12.1f}{t_p / t_c:>10.1f}")


if __name__ == "__main__":
    main()
