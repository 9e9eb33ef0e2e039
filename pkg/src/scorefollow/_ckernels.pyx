# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled forward-step kernels.

Same signatures and results as ``scorefollow._pykernels``; see there for
the meaning of the arguments.  State ``(i, l)`` lives at ``i * L + l``
and the break state, when present, at ``N * L``.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, log1p, INFINITY

cnp.import_array()

cdef double NEG_INF = -INFINITY


cdef inline double lae(double a, double b) noexcept nogil:
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a > b:
        return a + log1p(exp(b - a))
    return b + log1p(exp(a - b))


cdef inline void push(double x, double* m, double* acc) noexcept nogil:
    # streaming logsumexp: value is m + log(acc)
    if x > m[0]:
        acc[0] = acc[0] * exp(m[0] - x) + 1.0
        m[0] = x
    elif x > NEG_INF:
        acc[0] += exp(x - m[0])


cdef inline double finish(double m, double acc) noexcept nogil:
    if m == NEG_INF:
        return NEG_INF
    return m + log(acc)


cdef double _exit_pool(const double[::1] prev, const double[:, ::1] lex,
                       const double[::1] ls, double[::1] exq, double[::1] q) noexcept nogil:
    """Fill exq[j] = log sum_l' alpha(j,l') e(j,l'), q[j] = exq[j] + log s_j; return log sum_j of q."""
    cdef Py_ssize_t N = lex.shape[0], L = lex.shape[1], j, lp
    cdef double m, acc, mx = NEG_INF, tot = 0.0
    for j in range(N):
        m = NEG_INF
        acc = 0.0
        for lp in range(L):
            push(prev[j * L + lp] + lex[j, lp], &m, &acc)
        exq[j] = finish(m, acc)
        q[j] = exq[j] + ls[j]
        if q[j] > mx:
            mx = q[j]
    if mx == NEG_INF:
        return NEG_INF
    for j in range(N):
        tot += exp(q[j] - mx)
    return mx + log(tot)


cdef inline double _local(const double[::1] prev, const double[:, :, ::1] selfb,
                          const double[:, ::1] cross, const double[::1] exq,
                          double entry, Py_ssize_t i, Py_ssize_t l, Py_ssize_t L) noexcept nogil:
    """Mass flowing into (i, l) from events i, i-1, i-2."""
    cdef double m = NEG_INF, acc = 0.0
    cdef Py_ssize_t lp
    for lp in range(L):
        push(prev[i * L + lp] + selfb[i, lp, l], &m, &acc)
    if i >= 1:
        push(exq[i - 1] + cross[i - 1, 1] + entry, &m, &acc)
    if i >= 2:
        push(exq[i - 2] + cross[i - 2, 2] + entry, &m, &acc)
    return finish(m, acc)


cdef double _nobreak_core(const double[::1] prev, const double[::1] logb,
                          const double[:, :, ::1] selfb, const double[:, ::1] cross,
                          const double[:, ::1] lex, const double[:, ::1] lent,
                          const double[::1] ls, const double[::1] lr,
                          double[::1] out, double[::1] exq, double[::1] q) noexcept nogil:
    cdef Py_ssize_t N = selfb.shape[0], L = selfb.shape[1], i, l
    cdef double pool, pn, ratio, rest, entry
    pool = _exit_pool(prev, lex, ls, exq, q)
    for i in range(N):
        pn = q[i]
        if i >= 1:
            pn = lae(pn, q[i - 1])
        if i >= 2:
            pn = lae(pn, q[i - 2])
        if pool == NEG_INF:
            rest = NEG_INF
        else:
            # stop mass from non-neighbours: pool minus the neighbour part
            ratio = exp(pn - pool)
            if ratio >= 1.0:
                rest = NEG_INF
            else:
                rest = pool + log1p(-ratio)
        for l in range(L):
            entry = lent[i, l]
            out[i * L + l] = logb[i * L + l] + lae(
                _local(prev, selfb, cross, exq, entry, i, l, L), lr[i] + entry + rest)
    return pool


cdef double _break_core(const double[::1] prev, const double[::1] logb,
                        const double[:, :, ::1] selfb, const double[:, ::1] cross,
                        const double[:, ::1] lex, const double[:, ::1] lent,
                        const double[::1] ls, const double[::1] lr,
                        double bself, double bexit,
                        double[::1] out, double[::1] exq, double[::1] q) noexcept nogil:
    cdef Py_ssize_t N = selfb.shape[0], L = selfb.shape[1], i, l
    cdef Py_ssize_t nb = N * L
    cdef double pool, resume, entry
    pool = _exit_pool(prev, lex, ls, exq, q)
    resume = prev[nb] + bexit
    for i in range(N):
        for l in range(L):
            entry = lent[i, l]
            out[i * L + l] = logb[i * L + l] + lae(
                _local(prev, selfb, cross, exq, entry, i, l, L), resume + lr[i] + entry)
    out[nb] = logb[nb] + lae(pool, prev[nb] + bself)
    return pool


cdef void _baseline_core(const double[::1] prev, const double[::1] logb,
                         const double[:, :, ::1] selfb, const double[:, ::1] cross,
                         const double[:, ::1] lex, const double[:, ::1] lent,
                         const double[::1] ls, const double[::1] lr,
                         const double[:, ::1] dense, int mode, double bself, double bexit,
                         double[::1] out, double[::1] src) noexcept nogil:
    cdef Py_ssize_t N = selfb.shape[0], L = selfb.shape[1]
    cdef Py_ssize_t nb = N * L, i, l, j, lp, k, p
    cdef double m, acc, a, c
    for j in range(N):
        for lp in range(L):
            src[j * L + lp] = prev[j * L + lp] + lex[j, lp]
    for i in range(N):
        for l in range(L):
            m = NEG_INF
            acc = 0.0
            for j in range(N):
                k = i - j
                if k == 0:
                    for lp in range(L):
                        push(prev[i * L + lp] + selfb[i, lp, l], &m, &acc)
                    continue
                if mode == 0:
                    a = dense[j, i]
                elif k == 1 or k == 2:
                    a = cross[j, k]
                elif mode == 1:
                    a = ls[j] + lr[i]
                else:
                    a = NEG_INF
                c = a + lent[i, l]
                for lp in range(L):
                    push(src[j * L + lp] + c, &m, &acc)
            if mode == 2:
                push(prev[nb] + bexit + lr[i] + lent[i, l], &m, &acc)
            out[i * L + l] = logb[i * L + l] + finish(m, acc)
    if mode == 2:
        m = NEG_INF
        acc = 0.0
        for p in range(nb):
            push(src[p] + ls[p // L], &m, &acc)
        push(prev[nb] + bself, &m, &acc)
        out[nb] = logb[nb] + finish(m, acc)


cdef void _emission_core(const double[::1] y, const double[:, ::1] mu, const double[:, ::1] iv,
                         const double[::1] lnorm, const Py_ssize_t[:, ::1] comp,
                         const double[:, ::1] comp_lw, const Py_ssize_t[::1] slot,
                         Py_ssize_t L, bint has_break, Py_ssize_t sil,
                         double[::1] g, double[::1] mix, double[::1] out) noexcept nogil:
    cdef Py_ssize_t R = mu.shape[0], D = mu.shape[1], U = comp.shape[0], C = comp.shape[1]
    cdef Py_ssize_t N = slot.shape[0], r, d, u, c, i, l
    cdef double s, diff, m, acc, gs
    for r in range(R):
        s = 0.0
        for d in range(D):
            diff = y[d] - mu[r, d]
            s += diff * diff * iv[r, d]
        g[r] = lnorm[r] - 0.5 * s
    for u in range(U):
        m = NEG_INF
        acc = 0.0
        for c in range(C):
            push(comp_lw[u, c] + g[comp[u, c]], &m, &acc)
        mix[u] = finish(m, acc)
    gs = g[sil]
    for i in range(N):
        out[i * L] = mix[slot[i]]
        for l in range(1, L):
            out[i * L + l] = gs
    if has_break:
        out[N * L] = gs


cdef double _readout_core(double[::1] la, Py_ssize_t* best, double* gap) noexcept nogil:
    """Normalize ``la`` in place; return the log normalizer, fill argmax and gap."""
    cdef Py_ssize_t S = la.shape[0], p
    cdef double m = NEG_INF, acc = 0.0, norm, top, second = NEG_INF
    best[0] = 0
    gap[0] = NEG_INF
    for p in range(S):
        push(la[p], &m, &acc)
    norm = finish(m, acc)
    if norm == NEG_INF:
        return norm
    top = la[0]
    for p in range(1, S):
        if la[p] > top:
            second = top
            top = la[p]
            best[0] = p
        elif la[p] > second:
            second = la[p]
    gap[0] = (top - second) if S > 1 else INFINITY
    for p in range(S):
        la[p] -= norm
    return norm


def nobreak_step(const double[::1] prev, const double[::1] logb,
                 const double[:, :, ::1] selfb, const double[:, ::1] cross,
                 const double[:, ::1] lex, const double[:, ::1] lent,
                 const double[::1] ls, const double[::1] lr):
    cdef Py_ssize_t N = selfb.shape[0], L = selfb.shape[1]
    out = np.empty(N * L)
    cdef double[::1] o = out
    cdef double[::1] exq = np.empty(N)
    cdef double[::1] q = np.empty(N)
    cdef double pool
    with nogil:
        pool = _nobreak_core(prev, logb, selfb, cross, lex, lent, ls, lr, o, exq, q)
    return out, pool


def break_step(const double[::1] prev, const double[::1] logb,
               const double[:, :, ::1] selfb, const double[:, ::1] cross,
               const double[:, ::1] lex, const double[:, ::1] lent,
               const double[::1] ls, const double[::1] lr,
               double bself, double bexit):
    cdef Py_ssize_t N = selfb.shape[0], L = selfb.shape[1]
    out = np.empty(N * L + 1)
    cdef double[::1] o = out
    cdef double[::1] exq = np.empty(N)
    cdef double[::1] q = np.empty(N)
    cdef double pool
    with nogil:
        pool = _break_core(prev, logb, selfb, cross, lex, lent, ls, lr, bself, bexit, o, exq, q)
    return out, pool


def baseline_step(const double[::1] prev, const double[::1] logb,
                  const double[:, :, ::1] selfb, const double[:, ::1] cross,
                  const double[:, ::1] lex, const double[:, ::1] lent,
                  const double[::1] ls, const double[::1] lr,
                  const double[:, ::1] dense, int mode,
                  double bself, double bexit):
    """Full sweep over every (source, destination) pair."""
    cdef Py_ssize_t N = selfb.shape[0], L = selfb.shape[1]
    out = np.empty(N * L + (1 if mode == 2 else 0))
    cdef double[::1] o = out
    cdef double[::1] src = np.empty(N * L)
    with nogil:
        _baseline_core(prev, logb, selfb, cross, lex, lent, ls, lr, dense, mode, bself, bexit, o, src)
    return out


def emission_fill(const double[::1] y, const double[:, ::1] mu, const double[:, ::1] iv,
                  const double[::1] lnorm, const Py_ssize_t[:, ::1] comp, const double[:, ::1] comp_lw,
                  const Py_ssize_t[::1] slot, Py_ssize_t L, bint has_break, Py_ssize_t sil,
                  double[::1] g, double[::1] mix, double[::1] out):
    """Per-state log emissions; see ``_pykernels.emission_fill``."""
    with nogil:
        _emission_core(y, mu, iv, lnorm, comp, comp_lw, slot, L, has_break, sil, g, mix, out)


def normalize_readout(double[::1] la):
    """Subtract the log normalizer in place; return (norm, best index, gap to runner-up)."""
    cdef Py_ssize_t best
    cdef double gap, norm
    with nogil:
        norm = _readout_core(la, &best, &gap)
    return norm, best, gap


cdef class FrameEngine:
    """Prepared follower loop: emission, forward step and readout in one call.

    ``kernel`` is 0 (full sweep), 1 (no-break) or 2 (break); ``mode`` tells
    the full sweep which topology to evaluate.  ``tables`` holds the
    emission arrays in the order of :func:`emission_fill`, or is ``None``
    when log emissions are always supplied by the caller.
    """

    cdef int kernel, mode
    cdef double bself, bexit
    cdef const double[::1] log_init
    cdef const double[:, :, ::1] selfb
    cdef const double[:, ::1] cross, lex, lent, dense
    cdef const double[::1] ls, lr
    cdef double[::1] exq, q, src, logb
    cdef bint has_tables
    cdef const double[:, ::1] mu, iv, comp_lw
    cdef const double[::1] lnorm
    cdef const Py_ssize_t[:, ::1] comp
    cdef const Py_ssize_t[::1] slot
    cdef Py_ssize_t L, sil, S
    cdef bint has_break
    cdef double[::1] g, mix
    cdef public object alpha
    cdef public long t
    cdef public double pool

    def __init__(self, int kernel, log_init, selfb, cross, lex, lent, ls, lr, dense, int mode,
                 double bself, double bexit, tables=None):
        self.kernel = kernel
        self.mode = mode
        self.bself = bself
        self.bexit = bexit
        self.log_init = log_init
        self.selfb = selfb
        self.cross = cross
        self.lex = lex
        self.lent = lent
        self.ls = ls
        self.lr = lr
        self.dense = dense
        N = selfb.shape[0]
        self.L = selfb.shape[1]
        self.S = log_init.shape[0]
        self.exq = np.empty(N)
        self.q = np.empty(N)
        self.src = np.empty(N * self.L)
        self.logb = np.empty(self.S)
        self.has_tables = tables is not None
        if self.has_tables:
            mu, iv, lnorm, comp, comp_lw, slot, L, has_break, sil = tables
            self.mu = mu
            self.iv = iv
            self.lnorm = lnorm
            self.comp = comp
            self.comp_lw = comp_lw
            self.slot = slot
            self.has_break = has_break
            self.sil = sil
            self.g = np.empty(mu.shape[0])
            self.mix = np.empty(comp.shape[0])
        self.alpha = None
        self.t = -1
        self.pool = NEG_INF

    def push_frame(self, const double[::1] y):
        if not self.has_tables:
            raise ValueError("no emission tables; use push_logb")
        if y.shape[0] != self.mu.shape[1]:
            raise ValueError(f"frame dimension {y.shape[0]} != model dimension {self.mu.shape[1]}")
        with nogil:
            _emission_core(y, self.mu, self.iv, self.lnorm, self.comp, self.comp_lw, self.slot,
                           self.L, self.has_break, self.sil, self.g, self.mix, self.logb)
        return self._advance(self.logb)

    def push_logb(self, const double[::1] logb):
        if logb.shape[0] != self.S:
            raise ValueError(f"emission vector has length {logb.shape[0]}, expected {self.S}")
        return self._advance(logb)

    cdef _advance(self, const double[::1] logb):
        cdef Py_ssize_t p, best
        cdef double norm, gap, pool = NEG_INF
        out_arr = np.empty(self.S)
        cdef double[::1] out = out_arr
        cdef double[::1] prev
        if self.t < 0:
            with nogil:
                for p in range(self.S):
                    out[p] = logb[p] + self.log_init[p]
        else:
            prev = self.alpha
            with nogil:
                if self.kernel == 1:
                    pool = _nobreak_core(prev, logb, self.selfb, self.cross, self.lex, self.lent,
                                         self.ls, self.lr, out, self.exq, self.q)
                elif self.kernel == 2:
                    pool = _break_core(prev, logb, self.selfb, self.cross, self.lex, self.lent,
                                       self.ls, self.lr, self.bself, self.bexit, out, self.exq, self.q)
                else:
                    _baseline_core(prev, logb, self.selfb, self.cross, self.lex, self.lent,
                                   self.ls, self.lr, self.dense, self.mode, self.bself, self.bexit,
                                   out, self.src)
        with nogil:
            norm = _readout_core(out, &best, &gap)
        if norm == NEG_INF:
            return norm, 0, gap
        self.alpha = out_arr
        self.pool = pool
        self.t += 1
        return norm, best, gap
