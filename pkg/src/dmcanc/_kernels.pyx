# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-sample loops for the control simulations and compensation fits.

Signal histories are doubled ring buffers: a sample is written at ``pos`` and
``pos + H`` so ``&buf[pos]`` is always a contiguous newest-first window of
length ``H``. Dot products use four fixed accumulators; results are
deterministic but not bit-identical to the numpy fallback.
"""

import numpy as np
from libc.math cimport isfinite, fabs
from libc.string cimport memcpy

cdef enum:
    _IDEAL = 0
    _DELAY = 1
    _EVENTS = 2

COMM_IDEAL = _IDEAL
COMM_DELAY = _DELAY
COMM_EVENTS = _EVENTS


cdef inline double _dot(const double* a, const double* b, Py_ssize_t n) noexcept nogil:
    cdef double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0
    cdef Py_ssize_t i = 0
    cdef Py_ssize_t n4 = n - (n % 4)
    while i < n4:
        s0 += a[i] * b[i]
        s1 += a[i + 1] * b[i + 1]
        s2 += a[i + 2] * b[i + 2]
        s3 += a[i + 3] * b[i + 3]
        i += 4
    while i < n:
        s0 += a[i] * b[i]
        i += 1
    return (s0 + s1) + (s2 + s3)


cdef inline void _axpy(double g, const double* x, double* y, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i
    for i in range(n):
        y[i] += g * x[i]


cdef inline void _push(double* buf, Py_ssize_t pos, Py_ssize_t hist, double v) noexcept nogil:
    buf[pos] = v
    buf[pos + hist] = v


cdef inline double _plant_error(Py_ssize_t k, Py_ssize_t N,
                                double[:, ::1] primary, double[:, :, ::1] secondary,
                                const double* xwin, double* ybuf, Py_ssize_t ypos,
                                Py_ssize_t yhist) noexcept nogil:
    cdef Py_ssize_t m
    cdef Py_ssize_t Lp = primary.shape[1]
    cdef Py_ssize_t Ls = secondary.shape[2]
    cdef double d = _dot(&primary[k, 0], xwin, Lp)
    cdef double acc = 0.0
    for m in range(N):
        acc += _dot(&secondary[k, m, 0], &ybuf[m * 2 * yhist + ypos], Ls)
    return d - acc


def simulate_dmcanc(double[::1] x,
                    double[:, ::1] primary,
                    double[:, :, ::1] secondary,
                    double[:, :, ::1] comp,
                    double[:, ::1] fx_filters,
                    double[:, ::1] psi,
                    double mu,
                    int comm_mode,
                    Py_ssize_t delay,
                    const unsigned char[:, ::1] events,
                    Py_ssize_t refresh,
                    double diverge_limit,
                    double[:, ::1] e_out,
                    double[:, ::1] y_out):
    """Run the distributed controller over ``x``; ``psi`` is updated in place.

    Returns the sample index at which divergence was detected, or -1.
    """
    cdef Py_ssize_t T = x.shape[0]
    cdef Py_ssize_t N = primary.shape[0]
    cdef Py_ssize_t L = psi.shape[1]
    cdef Py_ssize_t Lp = primary.shape[1]
    cdef Py_ssize_t Ls = secondary.shape[2]
    cdef Py_ssize_t Lc = comp.shape[2]
    cdef Py_ssize_t Lf = fx_filters.shape[1]
    if comm_mode == _DELAY and delay == 0:
        comm_mode = _IDEAL
    cdef Py_ssize_t d = delay if comm_mode == _DELAY else 0
    cdef bint record_y = y_out.shape[0] > 0
    cdef Py_ssize_t xhist = max(max(L, Lp), max(Lc, Lf))
    cdef Py_ssize_t uhist = L
    cdef Py_ssize_t yhist = Ls
    cdef Py_ssize_t hhist = L + d

    cdef double[::1] xbuf = np.zeros(2 * xhist)
    cdef double[::1] ubuf = np.zeros(N * N * 2 * uhist)
    cdef double[::1] ybuf = np.zeros(N * 2 * yhist)
    cdef double[::1] hbuf = np.zeros(N * 2 * hhist)
    cdef double[:, :, ::1] held = np.zeros((N, N, L))
    cdef double[:, ::1] psi_del = np.array(psi, copy=True)
    cdef double[:, ::1] own_snap = np.array(psi, copy=True)
    cdef double[:, :, ::1] peer_snap = np.zeros((N, N, L))
    cdef Py_ssize_t xpos = 0, upos = 0, ypos = 0, hpos = 0
    cdef Py_ssize_t n, k, m, t
    cdef double acc, e, g
    cdef const double* xwin
    cdef const double* own
    cdef const double* peer
    cdef Py_ssize_t nbytes = L * sizeof(double)

    for k in range(N):
        for m in range(N):
            if m != k:
                memcpy(&held[k, m, 0], &psi[m, 0], nbytes)
                memcpy(&peer_snap[k, m, 0], &psi[m, 0], nbytes)

    for n in range(T):
        xpos = (xpos - 1 + xhist) % xhist
        _push(&xbuf[0], xpos, xhist, x[n])
        xwin = &xbuf[xpos]

        upos = (upos - 1 + uhist) % uhist
        for k in range(N):
            for m in range(N):
                if m != k:
                    _push(&ubuf[(k * N + m) * 2 * uhist], upos, uhist,
                          _dot(&comp[k, m, 0], xwin, Lc))

        if comm_mode == _EVENTS:
            for k in range(N):
                if events[k, n]:
                    for m in range(N):
                        if m != k:
                            memcpy(&held[k, m, 0], &psi[m, 0], nbytes)

        if refresh > 1 and n % refresh == 0:
            for k in range(N):
                memcpy(&own_snap[k, 0], &psi[k, 0], nbytes)
                for m in range(N):
                    if m == k:
                        continue
                    if comm_mode == _EVENTS:
                        memcpy(&peer_snap[k, m, 0], &held[k, m, 0], nbytes)
                    elif comm_mode == _DELAY:
                        memcpy(&peer_snap[k, m, 0], &psi_del[m, 0], nbytes)
                    else:
                        memcpy(&peer_snap[k, m, 0], &psi[m, 0], nbytes)

        ypos = (ypos - 1 + yhist) % yhist
        for k in range(N):
            own = &own_snap[k, 0] if refresh > 1 else &psi[k, 0]
            acc = _dot(own, xwin, L)
            for m in range(N):
                if m == k:
                    continue
                if refresh > 1:
                    peer = &peer_snap[k, m, 0]
                elif comm_mode == _EVENTS:
                    peer = &held[k, m, 0]
                elif comm_mode == _DELAY:
                    peer = &psi_del[m, 0]
                else:
                    peer = &psi[m, 0]
                acc -= _dot(peer, &ubuf[(k * N + m) * 2 * uhist + upos], L)
            _push(&ybuf[k * 2 * yhist], ypos, yhist, acc)
            if record_y:
                y_out[k, n] = acc

        for k in range(N):
            e = _plant_error(k, N, primary, secondary, xwin, &ybuf[0], ypos, yhist)
            e_out[k, n] = e
            if not isfinite(e) or fabs(e) > diverge_limit:
                return n

        hpos = (hpos - 1 + hhist) % hhist
        for k in range(N):
            _push(&hbuf[k * 2 * hhist], hpos, hhist, _dot(&fx_filters[k, 0], xwin, Lf))

        for k in range(N):
            g = mu * e_out[k, n]
            _axpy(g, &hbuf[k * 2 * hhist + hpos], &psi[k, 0], L)

        if comm_mode == _DELAY and d > 0:
            t = n - d
            if t >= 0:
                for k in range(N):
                    g = mu * e_out[k, t]
                    _axpy(g, &hbuf[k * 2 * hhist + hpos + d], &psi_del[k, 0], L)
    return -1


def simulate_centralized(double[::1] x,
                         double[:, ::1] primary,
                         double[:, :, ::1] secondary,
                         double[:, :, ::1] shat,
                         double[:, ::1] W,
                         double mu,
                         double diverge_limit,
                         double[:, ::1] e_out,
                         double[:, ::1] y_out):
    """Run the centralized multichannel FxLMS controller; ``W`` is updated in place.

    ``shat[k, m]`` models the path from source m to sensor k. Returns the
    divergence sample index or -1.
    """
    cdef Py_ssize_t T = x.shape[0]
    cdef Py_ssize_t N = primary.shape[0]
    cdef Py_ssize_t L = W.shape[1]
    cdef Py_ssize_t Lp = primary.shape[1]
    cdef Py_ssize_t Ls = secondary.shape[2]
    cdef Py_ssize_t Lh = shat.shape[2]
    cdef bint record_y = y_out.shape[0] > 0
    cdef Py_ssize_t xhist = max(max(L, Lp), Lh)
    cdef Py_ssize_t yhist = Ls
    cdef Py_ssize_t hhist = L
    cdef double[::1] xbuf = np.zeros(2 * xhist)
    cdef double[::1] ybuf = np.zeros(N * 2 * yhist)
    cdef double[::1] hbuf = np.zeros(N * N * 2 * hhist)
    cdef double[::1] gains = np.zeros(N)
    cdef Py_ssize_t xpos = 0, ypos = 0, hpos = 0
    cdef Py_ssize_t n, k, m
    cdef double acc, e
    cdef const double* xwin

    for n in range(T):
        xpos = (xpos - 1 + xhist) % xhist
        _push(&xbuf[0], xpos, xhist, x[n])
        xwin = &xbuf[xpos]

        ypos = (ypos - 1 + yhist) % yhist
        for m in range(N):
            acc = _dot(&W[m, 0], xwin, L)
            _push(&ybuf[m * 2 * yhist], ypos, yhist, acc)
            if record_y:
                y_out[m, n] = acc

        for k in range(N):
            e = _plant_error(k, N, primary, secondary, xwin, &ybuf[0], ypos, yhist)
            e_out[k, n] = e
            if not isfinite(e) or fabs(e) > diverge_limit:
                return n

        hpos = (hpos - 1 + hhist) % hhist
        for k in range(N):
            for m in range(N):
                _push(&hbuf[(k * N + m) * 2 * hhist], hpos, hhist,
                      _dot(&shat[k, m, 0], xwin, Lh))

        for k in range(N):
            gains[k] = mu * e_out[k, n]
        for m in range(N):
            for k in range(N):
                _axpy(gains[k], &hbuf[(k * N + m) * 2 * hhist + hpos], &W[m, 0], L)
    return -1


def fxlms_identify(double[::1] v,
                   double[::1] desired,
                   double[::1] vhat,
                   double[::1] s_model,
                   double[::1] c,
                   double mu,
                   Py_ssize_t block,
                   double[::1] block_power,
                   double diverge_ratio):
    """Adapt ``c`` in place so that ``s_model * c`` tracks the path producing ``desired``.

    ``v`` drives the adaptive filter, whose output passes through ``s_model``;
    ``vhat`` is ``v`` filtered by the path estimate. Mean squared error per
    ``block`` samples goes to ``block_power``. Returns the number of complete
    blocks, negated and offset by one (``-(b + 1)``) if block ``b`` diverged.
    """
    cdef Py_ssize_t T = v.shape[0]
    cdef Py_ssize_t Lc = c.shape[0]
    cdef Py_ssize_t Ls = s_model.shape[0]
    cdef Py_ssize_t nblocks = block_power.shape[0]
    cdef double[::1] vbuf = np.zeros(2 * Lc)
    cdef double[::1] hbuf = np.zeros(2 * Lc)
    cdef double[::1] ubuf = np.zeros(2 * Ls)
    cdef Py_ssize_t vpos = 0, upos = 0, n, b = 0, inblock = 0
    cdef double e, acc = 0.0, first = -1.0, p

    for n in range(T):
        vpos = (vpos - 1 + Lc) % Lc
        _push(&vbuf[0], vpos, Lc, v[n])
        _push(&hbuf[0], vpos, Lc, vhat[n])
        upos = (upos - 1 + Ls) % Ls
        _push(&ubuf[0], upos, Ls, _dot(&c[0], &vbuf[vpos], Lc))
        e = desired[n] - _dot(&s_model[0], &ubuf[upos], Ls)
        if not isfinite(e):
            return -(b + 1)
        _axpy(mu * e, &hbuf[vpos], &c[0], Lc)
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
