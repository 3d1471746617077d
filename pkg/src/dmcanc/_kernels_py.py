"""Pure-numpy fallback for the compiled kernels in ``_kernels.pyx``.

Same signatures, same per-sample operation order, same return conventions.
Roughly two orders of magnitude slower; results agree with the compiled
core to rounding (dot-product summation order differs).
"""

import numpy as np

COMM_IDEAL = 0
COMM_DELAY = 1
COMM_EVENTS = 2


class _Ring:
    """Doubled ring buffer for ``count`` signals; ``window()`` is newest-first."""

    def __init__(self, count, hist):
        self.hist = hist
        self.buf = np.zeros((count, 2 * hist))
        self.pos = 0

    def push(self, values):
        self.pos = (self.pos - 1) % self.hist
        self.buf[:, self.pos] = values
        self.buf[:, self.pos + self.hist] = values

    def window(self, length, offset=0):
        start = self.pos + offset
        return self.buf[:, start : start + length]


def _plant_errors(primary, secondary, xwin, ywin):
    d = primary @ xwin[: primary.shape[1]]
    return d - np.einsum("kml,ml->k", secondary, ywin)


def simulate_dmcanc(x, primary, secondary, comp, fx_filters, psi, mu, comm_mode, delay,
                    events, refresh, diverge_limit, e_out, y_out):
    T = len(x)
    N, Lp = primary.shape
    L = psi.shape[1]
    Ls = secondary.shape[2]
    Lc = comp.shape[2]
    Lf = fx_filters.shape[1]
    if comm_mode == COMM_DELAY and delay == 0:
        comm_mode = COMM_IDEAL
    d = delay if comm_mode == COMM_DELAY else 0
    record_y = y_out.shape[0] > 0
    offdiag = ~np.eye(N, dtype=bool)

    xr = _Ring(1, max(L, Lp, Lc, Lf))
    ur = _Ring(N * N, L)
    yr = _Ring(N, Ls)
    hr = _Ring(N, L + d)
    comp_flat = comp.reshape(N * N, Lc)
    held = np.broadcast_to(psi[None, :, :], (N, N, L)).copy()
    psi_del = psi.copy()
    own_snap = psi.copy()
    peer_snap = held.copy()

    for n in range(T):
        xr.push(x[n])
        xwin = xr.window(xr.hist)[0]
        ur.push(comp_flat @ xwin[:Lc])

        if comm_mode == COMM_EVENTS:
            for k in np.flatnonzero(events[:, n]):
                held[k] = psi
        if comm_mode == COMM_EVENTS:
            peers = held
        elif comm_mode == COMM_DELAY:
            peers = np.broadcast_to(psi_del[None], (N, N, L))
        else:
            peers = np.broadcast_to(psi[None], (N, N, L))

        if refresh > 1:
            if n % refresh == 0:
                own_snap[:] = psi
                peer_snap[:] = peers
            own, peers = own_snap, peer_snap
        else:
            own = psi

        uwin = ur.window(L).reshape(N, N, L)
        cross = np.einsum("kml,kml->km", peers, uwin)
        y = own @ xwin[:L] - np.where(offdiag, cross, 0.0).sum(axis=1)
        yr.push(y)
        if record_y:
            y_out[:, n] = y

        e = _plant_errors(primary, secondary, xwin, yr.window(Ls))
        e_out[:, n] = e
        bad = ~np.isfinite(e) | (np.abs(e) > diverge_limit)
        if bad.any():
            return n

        hr.push(fx_filters @ xwin[:Lf])
        g = mu * e
        psi += g[:, None] * hr.window(L)

        if comm_mode == COMM_DELAY and d > 0 and n - d >= 0:
            g = mu * e_out[:, n - d]
            psi_del += g[:, None] * hr.window(L, d)
    return -1


def simulate_centralized(x, primary, secondary, shat, W, mu, diverge_limit, e_out, y_out):
    T = len(x)
    N, Lp = primary.shape
    L = W.shape[1]
    Ls = secondary.shape[2]
    Lh = shat.shape[2]
    record_y = y_out.shape[0] > 0
    xr = _Ring(1, max(L, Lp, Lh))
    yr = _Ring(N, Ls)
    hr = _Ring(N * N, L)
    shat_flat = shat.reshape(N * N, Lh)

    for n in range(T):
        xr.push(x[n])
        xwin = xr.window(xr.hist)[0]
        y = W @ xwin[:L]
        yr.push(y)
        if record_y:
            y_out[:, n] = y

        e = _plant_errors(primary, secondary, xwin, yr.window(Ls))
        e_out[:, n] = e
        if (~np.isfinite(e) | (np.abs(e) > diverge_limit)).any():
            return n

        hr.push(shat_flat @ xwin[:Lh])
        g = mu * e
        hw = hr.window(L).reshape(N, N, L)
        # W_m += sum_k g_k * xhat_km, k ascending
        for k in range(N):
            W += g[k] * hw[k]
    return -1


def fxlms_identify(v, desired, vhat, s_model, c, mu, block, block_power, diverge_ratio):
    T = len(v)
    Lc = len(c)
    Ls = len(s_model)
    vr = _Ring(2, Lc)
    ur = _Ring(1, Ls)
    nblocks = len(block_power)
    b = 0
    acc = 0.0
    inblock = 0
    first = -1.0
    for n in range(T):
        vr.push((v[n], vhat[n]))
        win = vr.window(Lc)
        ur.push(c @ win[0])
        e = desired[n] - s_model @ ur.window(Ls)[0]
        if not np.isfinite(e):
            return -(b + 1)
        c += (mu * e) * win[1]
        acc += e * e
        inblock += 1
        if inblock == block:
            p = acc / block
            if b < nblocks:
                block_power[b] = p
            if first < 0.0:
                first = p
            elif p >= diverge_ratio * first and p > 0.0:
                return -(b + 1)
            b += 1
            acc = 0.0
            inblock = 0
    return b
