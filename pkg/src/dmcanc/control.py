"""Controllers: the distributed compensation-filter node and the centralized baseline.

The per-object API here (NodeState, CentralizedState and the step functions)
is the readable reference. Long runs go through :mod:`dmcanc.kernels`, which
implements the same recursions with flat arrays; :func:`reference_simulation`
drives the object API so the two routes can be checked against each other.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import dsp
from .compensation import CompensationSet
from .dsp import FirFilter
from .errors import ConfigError, DivergenceError
from .plant import Plant


def global_filter(psi_k, peer_copies: dict, comp: CompensationSet) -> np.ndarray:
    """w_k = psi_k - sum_m psi_m * c_km, length L_psi + L_c - 1 (L_psi with no peers)."""
    psi_k = np.asarray(psi_k, dtype=np.float64)
    if set(peer_copies) != set(comp.filters):
        raise ConfigError(
            f"node {comp.owner}: peer copies {sorted(peer_copies)} do not match "
            f"compensation filters {sorted(comp.filters)}"
        )
    if not peer_copies:
        return psi_k.copy()
    w = np.zeros(len(psi_k) + comp.taps - 1)
    w[: len(psi_k)] = psi_k
    for m in sorted(peer_copies):
        w -= dsp.convolve(peer_copies[m], comp.coeffs(m))
    return w


def composed_fx_filter(s_kk_est, comp: CompensationSet, reverse: dict) -> np.ndarray:
    """Taps of s_kk_est * (delta - sum_m c_mk * c_km).

    ``reverse[m]`` is c_mk, owned by node m. With no peers the bracket is a
    single unit tap, so the result is exactly the self-path estimate.
    """
    s = s_kk_est.coeffs if isinstance(s_kk_est, FirFilter) else np.asarray(s_kk_est, float)
    if set(reverse) != set(comp.filters):
        raise ConfigError(f"node {comp.owner}: reverse compensation keys do not match")
    if not reverse:
        return s.copy()
    g = np.zeros(2 * comp.taps - 1)
    g[0] = 1.0
    for m in sorted(reverse):
        g -= dsp.convolve(reverse[m], comp.coeffs(m))
    return dsp.convolve(s, g)


@dataclass
class NodeState:
    """One distributed node.

    ``peers[m]`` is ``(psi_m copy, version stamp)``. ``out`` streams x through
    the current global filter; swapping its coefficients keeps the delay line.
    """

    k: int
    psi: FirFilter
    comp: CompensationSet
    s_kk_est: FirFilter
    reverse: dict
    peers: dict = field(default_factory=dict)
    fx_pipeline: FirFilter = None
    out: FirFilter = None
    xhat: np.ndarray = None

    def __post_init__(self):
        L = self.psi.taps
        if not self.peers:
            self.peers = {m: (np.zeros(L), 0) for m in self.comp.filters}
        if self.fx_pipeline is None:
            self.fx_pipeline = FirFilter(composed_fx_filter(self.s_kk_est, self.comp, self.reverse))
        if self.xhat is None:
            self.xhat = np.zeros(L)
        w = self._compute_w()
        if self.out is None:
            self.out = FirFilter(w)
        else:
            self.out.coeffs = w

    @property
    def w_cache(self) -> np.ndarray:
        return self.out.coeffs

    def _compute_w(self) -> np.ndarray:
        return global_filter(self.psi.coeffs, {m: c for m, (c, _) in self.peers.items()}, self.comp)

    def refresh(self) -> None:
        self.out.coeffs = self._compute_w()

    def receive(self, copies: dict) -> None:
        """Install peer copies ``m -> (coeffs, stamp)``; stamps must not go backwards."""
        changed = False
        for m, (coeffs, stamp) in copies.items():
            if m not in self.peers:
                raise ConfigError(f"node {self.k} has no peer {m}")
            old_coeffs, old_stamp = self.peers[m]
            if stamp < old_stamp:
                raise ConfigError(f"node {self.k}: stamp for peer {m} went back {old_stamp} -> {stamp}")
            if stamp != old_stamp or not np.array_equal(coeffs, old_coeffs):
                self.peers[m] = (np.array(coeffs, dtype=np.float64), stamp)
                changed = True
        if changed:
            self.refresh()


def make_nodes(comp_sets: list, estimates: list, L_psi: int) -> list:
    """Build one NodeState per compensation set, wiring the reverse filters c_mk."""
    N = len(comp_sets)
    nodes = []
    for k, cs in enumerate(comp_sets):
        reverse = {m: comp_sets[m].coeffs(k) for m in range(N) if m != k}
        nodes.append(NodeState(k, FirFilter(np.zeros(L_psi)), cs, estimates[k], reverse))
    return nodes


def node_output(node: NodeState, x_n: float) -> float:
    """y_k(n) = (x * w_k)(n)."""
    return float(node.out.process(np.array([x_n]))[0])


def filtered_reference_step(node: NodeState, x_n: float) -> float:
    """Advance the filtered-reference pipeline one sample and push onto the history."""
    v = float(node.fx_pipeline.process(np.array([x_n]))[0])
    node.xhat = np.roll(node.xhat, 1)
    node.xhat[0] = v
    return v


def local_update(node: NodeState, e_k_n: float, mu_psi: float) -> np.ndarray:
    """psi_k += mu * xhat_k * e_k. Peer copies are left alone."""
    if not np.isfinite(e_k_n):
        raise DivergenceError(f"node {node.k}: non-finite error sample")
    g = mu_psi * e_k_n
    node.psi.coeffs = node.psi.coeffs + g * node.xhat
    node.refresh()
    return node.psi.coeffs


@dataclass
class CentralizedState:
    """Multichannel FxLMS controller: ``W[m]`` drives source m.

    ``fx_matrix[k][m]`` filters x through the estimate of s_km; ``xhat[k, m]``
    holds the newest-first filtered-reference history.
    """

    W: np.ndarray
    fx_matrix: list
    x_hist: np.ndarray = None
    xhat: np.ndarray = None

    def __post_init__(self):
        self.W = np.array(self.W, dtype=np.float64)
        N, L = self.W.shape
        if len(self.fx_matrix) != N or any(len(r) != N for r in self.fx_matrix):
            raise ConfigError("fx_matrix must be N x N")
        if self.x_hist is None:
            self.x_hist = np.zeros(L)
        if self.xhat is None:
            self.xhat = np.zeros((N, N, L))

    @classmethod
    def create(cls, path_estimates, L_psi: int) -> "CentralizedState":
        N = len(path_estimates)
        return cls(np.zeros((N, L_psi)),
                   [[FirFilter(path_estimates[k][m]) for m in range(N)] for k in range(N)])


def centralized_step(state: CentralizedState, x_n: float, e_prev, mu: float) -> np.ndarray:
    """Adapt with the errors of the previous outputs, then emit y(n).

    ``e_prev`` is None on the first call. Update: W_m += mu * sum_k e_k * xhat_km.
    """
    N, L = state.W.shape
    if e_prev is not None:
        centralized_adapt(state, e_prev, mu)
    state.x_hist = np.roll(state.x_hist, 1)
    state.x_hist[0] = x_n
    xv = np.array([x_n])
    state.xhat = np.roll(state.xhat, 1, axis=2)
    for k in range(N):
        for m in range(N):
            state.xhat[k, m, 0] = state.fx_matrix[k][m].process(xv)[0]
    # same left-to-right tap order as FirFilter, so N=1 matches the node route bit for bit
    return np.array([sum((w * state.x_hist).tolist(), 0.0) for w in state.W])


def centralized_adapt(state: CentralizedState, e, mu: float) -> np.ndarray:
    """W_m += mu * sum_k e_k * xhat_km using the stored filtered-reference history."""
    e = np.asarray(e, dtype=np.float64)
    if not np.all(np.isfinite(e)):
        raise DivergenceError("centralized controller: non-finite error sample")
    g = mu * e
    for m in range(state.W.shape[0]):
        for k in range(len(g)):
            state.W[m] += g[k] * state.xhat[k, m]
    return state.W


def dmcanc_step(nodes: list, x_n: float, e_prev, mu: float) -> np.ndarray:
    """Per-sample distributed step with the same (x(n), e(n-1)) -> y(n) contract."""
    if e_prev is not None:
        for node, e in zip(nodes, e_prev):
            local_update(node, float(e), mu)
    y = np.array([node_output(nd, x_n) for nd in nodes])
    for nd in nodes:
        filtered_reference_step(nd, x_n)
    return y


def reference_simulation(plant: Plant, x, algorithm: str, *, comp_sets=None, estimates=None,
                         L_psi: int = 512, mu: float = 1e-5, policy=None, bus=None,
                         observer=None):
    """Run either controller through the object API. Slow; for verification.

    Returns ``(e, y, final)`` where ``final`` is the node list or centralized
    state. ``policy`` (a :class:`dmcanc.network.CommPolicy`) governs peer copies.
    ``observer(n, nodes)`` is called after the outputs of sample n are formed.
    """
    from .network import CoefficientBus, CommPolicy

    x = x.samples if isinstance(x, dsp.Signal) else np.asarray(x, dtype=np.float64)
    plant = plant.copy()
    N, T = plant.n_nodes, len(x)
    e_out = np.zeros((N, T))
    y_out = np.zeros((N, T))
    e_prev = None
    if algorithm == "centralized":
        if estimates is None:
            estimates = plant.secondary_tensor()
        state = CentralizedState.create(estimates, L_psi)
        for n in range(T):
            y = centralized_step(state, x[n], e_prev, mu)
            e_prev = plant.step(x[n], y).e
            y_out[:, n], e_out[:, n] = y, e_prev
        if e_prev is not None:
            centralized_adapt(state, e_prev, mu)
        return e_out, y_out, state
    if algorithm != "dmcanc":
        raise ConfigError(f"unknown algorithm {algorithm!r}")

    if estimates is None:
        estimates = [FirFilter(plant.path(k, k)) for k in range(N)]
    nodes = make_nodes(comp_sets, estimates, L_psi)
    policy = policy or CommPolicy.parse("ideal", plant.fs)
    bus = bus or CoefficientBus(N, L_psi, capacity=max(policy.delay, 1))
    for n in range(T):
        if e_prev is not None:
            for nd, e in zip(nodes, e_prev):
                local_update(nd, float(e), mu)
        for nd in nodes:
            bus.publish(nd.k, nd.psi.coeffs, n)
        for nd in nodes:
            nd.receive(bus.snapshot(policy, nd.k, n))
        y = np.array([node_output(nd, x[n]) for nd in nodes])
        if observer is not None:
            observer(n, nodes)
        for nd in nodes:
            filtered_reference_step(nd, x[n])
        e_prev = plant.step(x[n], y).e
        y_out[:, n], e_out[:, n] = y, e_prev
    if e_prev is not None:
        for nd, e in zip(nodes, e_prev):
            local_update(nd, float(e), mu)
    return e_out, y_out, nodes


@dataclass
class ExpansionRecord:
    """A run with control filters frozen at ``psi`` (N x L) from zero state."""

    x: np.ndarray
    psi: np.ndarray
    e: np.ndarray


def error_expansion(record: ExpansionRecord, plant: Plant, comp_sets: list, k: int) -> np.ndarray:
    """Error at sensor k predicted from the compensation-based expansion.

    e_k = d_k + x * sum_{m != k} sum_{l != k, m} psi_l * c_ml * s_km
              - x * [psi_k - sum_{m != k} psi_k * c_mk * c_km] * s_kk

    Exact when every s_km equals s_kk * c_km.
    """
    x = np.asarray(record.x, dtype=np.float64)
    T = len(x)
    N = plant.n_nodes
    psi = np.asarray(record.psi, dtype=np.float64)
    d = dsp.convolve(x, plant.primary[k].coeffs)[:T]

    def xconv(*filters):
        h = filters[0]
        for f in filters[1:]:
            h = dsp.convolve(h, f)
        return dsp.convolve(x, h)[:T]

    c = lambda a, b: comp_sets[a].coeffs(b)  # noqa: E731
    pred = d - xconv(psi[k], plant.path(k, k))
    for m in range(N):
        if m == k:
            continue
        pred += xconv(psi[k], c(m, k), c(k, m), plant.path(k, k))
        for l in range(N):
            if l not in (k, m):
                pred += xconv(psi[l], c(m, l), plant.path(k, m))
    return pred


def error_expansion_check(record: ExpansionRecord, plant: Plant, comp_sets: list, k: int) -> float:
    """Max |e_k(measured) - e_k(expansion)| over the record."""
    pred = error_expansion(record, plant, comp_sets, k)
    return float(np.max(np.abs(np.asarray(record.e[k]) - pred)))
