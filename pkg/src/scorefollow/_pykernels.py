"""Pure numpy forward-step kernels (fallback for the compiled extension).

Arguments shared by all kernels, with ``N`` events and ``L`` bottom states:

prev, logb : (S,)
    previous log forward variables and current log emissions
selfb : (N, L, L)
    same-event log transitions
cross : (N, 3)
    log top transition j -> j+k for neighbour events (k = 1, 2)
lex, lent : (N, L)
    log exit and log entry probabilities of the bottom states
ls, lr : (N,)
    log stop and log resumption probabilities

The no-break and break kernels return ``(log_alpha, pool)`` where ``pool``
is the log of the exit mass weighted by the stop probabilities, shared by
every destination.  The baseline kernel returns ``log_alpha`` only.
"""
from __future__ import annotations

import numpy as np

NEG_INF = -np.inf
_CHUNK = 1 << 20


def _lse(a: np.ndarray, axis=None) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m_safe), axis=axis, keepdims=True)) + m_safe
    if axis is None:
        return out.reshape(())[()]
    return np.squeeze(out, axis=axis)


def _exit_pool(prev, lex, ls):
    N, L = lex.shape
    exq = _lse(prev[: N * L].reshape(N, L) + lex, axis=1)
    q = exq + ls
    return exq, q, float(_lse(q))


def _local(prev, selfb, cross, exq, lent):
    N, L = lent.shape
    P2 = prev[: N * L].reshape(N, L)
    acc = _lse(P2[:, :, None] + selfb, axis=1)
    from1 = np.full(N, NEG_INF)
    from2 = np.full(N, NEG_INF)
    from1[1:] = exq[:-1] + cross[:-1, 1]
    from2[2:] = exq[:-2] + cross[:-2, 2]
    acc = np.logaddexp(acc, from1[:, None] + lent)
    return np.logaddexp(acc, from2[:, None] + lent)


def nobreak_step(prev, logb, selfb, cross, lex, lent, ls, lr):
    N, L = lent.shape
    exq, q, pool = _exit_pool(prev, lex, ls)
    pn = q.copy()
    pn[1:] = np.logaddexp(pn[1:], q[:-1])
    pn[2:] = np.logaddexp(pn[2:], q[:-2])
    if pool == NEG_INF:
        rest = np.full(N, NEG_INF)
    else:
        ratio = np.minimum(np.exp(pn - pool), 1.0)
        with np.errstate(divide="ignore"):
            rest = pool + np.log1p(-ratio)
    acc = _local(prev, selfb, cross, exq, lent)
    acc = np.logaddexp(acc, (lr + rest)[:, None] + lent)
    return (acc.ravel() + logb), pool


def break_step(prev, logb, selfb, cross, lex, lent, ls, lr, bself, bexit):
    N, L = lent.shape
    exq, q, pool = _exit_pool(prev, lex, ls)
    acc = _local(prev, selfb, cross, exq, lent)
    acc = np.logaddexp(acc, (prev[N * L] + bexit + lr)[:, None] + lent)
    out = np.empty(N * L + 1)
    out[: N * L] = acc.ravel() + logb[: N * L]
    out[N * L] = logb[N * L] + np.logaddexp(pool, prev[N * L] + bself)
    return out, pool


def baseline_step(prev, logb, selfb, cross, lex, lent, ls, lr, dense, mode, bself, bexit):
    """Full sweep: materializes the transition columns chunk by chunk."""
    N, L = lent.shape
    nb = N * L
    P2 = prev[:nb].reshape(N, L)
    src = P2 + lex
    out = np.empty(nb + (1 if mode == 2 else 0))
    chunk = max(1, _CHUNK // (nb * L))
    for i0 in range(0, N, chunk):
        i1 = min(N, i0 + chunk)
        idx = np.arange(i0, i1)
        if mode == 0:
            top = np.array(dense[:, i0:i1])
        elif mode == 1:
            top = ls[:, None] + lr[None, i0:i1]
        else:
            top = np.full((N, i1 - i0), NEG_INF)
        if mode != 0:
            for k in (1, 2):
                ok = idx - k >= 0
                top[idx[ok] - k, idx[ok] - i0] = cross[idx[ok] - k, k]
        A = src[:, :, None, None] + top[:, None, :, None] + lent[None, None, i0:i1, :]
        A[idx, :, idx - i0, :] = P2[idx][:, :, None] + selfb[idx]
        cols = _lse(A.reshape(nb, (i1 - i0) * L), axis=0)
        if mode == 2:
            cols = np.logaddexp(cols, (prev[nb] + bexit + lr[i0:i1, None] + lent[i0:i1]).ravel())
        out[i0 * L : i1 * L] = cols + logb[i0 * L : i1 * L]
    if mode == 2:
        into = _lse(src + ls[:, None])
        out[nb] = logb[nb] + np.logaddexp(into, prev[nb] + bself)
    return out


def emission_fill(y, mu, iv, lnorm, comp, comp_lw, slot, L, has_break, sil, g, mix, out):
    """Per-state log emissions written into ``out``.

    ``mu``, ``iv`` and ``lnorm`` hold the Gaussians of the ``R`` pitches in
    use; ``comp``/``comp_lw`` list each unique event pitch's mixture as
    (row, log weight) pairs padded with ``-inf`` weights; ``slot`` maps
    events to unique pitches; row ``sil`` is silence.  ``g`` and ``mix``
    are scratch buffers of length ``R`` and ``U``.
    """
    diff = y - mu
    g[:] = lnorm - 0.5 * np.einsum("kd,kd,kd->k", diff, diff, iv)
    x = comp_lw + g[comp]
    m = x.max(axis=1)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        mix[:] = m_safe + np.log(np.exp(x - m_safe[:, None]).sum(axis=1))
    N = len(slot)
    block = out[: N * L].reshape(N, L)
    block[:, 0] = mix[slot]
    block[:, 1:] = g[sil]
    if has_break:
        out[N * L] = g[sil]


def normalize_readout(la):
    """Subtract the log normalizer in place; return (norm, best index, gap to runner-up)."""
    norm = float(_lse(la))
    if norm == NEG_INF:
        return norm, 0, NEG_INF
    best = int(np.argmax(la))
    if la.size > 1:
        top = la[best]
        la[best] = NEG_INF
        second = la.max()
        la[best] = top
        gap = float(top - second)
    else:
        gap = np.inf
    la -= norm
    return norm, best, gap


class FrameEngine:
    """Prepared follower loop: emission, forward step and readout in one call.

    ``kernel`` is 0 (full sweep), 1 (no-break) or 2 (break); ``mode`` tells
    the full sweep which topology to evaluate.  ``tables`` holds the
    emission arrays in the order of :func:`emission_fill`, or is ``None``
    when log emissions are always supplied by the caller.
    """

    def __init__(self, kernel, log_init, selfb, cross, lex, lent, ls, lr, dense, mode, bself, bexit, tables=None):
        self.kernel = kernel
        self.mode = mode
        self.log_init = log_init
        self.args = (selfb, cross, lex, lent, ls, lr)
        self.dense = dense
        self.bself = bself
        self.bexit = bexit
        self.tables = tables
        self.S = len(log_init)
        if tables is not None:
            self._g = np.empty(tables[0].shape[0])
            self._mix = np.empty(tables[3].shape[0])
        self.alpha = None
        self.t = -1
        self.pool = NEG_INF

    def push_frame(self, y):
        if self.tables is None:
            raise ValueError("no emission tables; use push_logb")
        y = np.ascontiguousarray(y, dtype=np.float64)
        if y.shape != (self.tables[0].shape[1],):
            raise ValueError(f"frame dimension {y.shape} != model dimension {self.tables[0].shape[1]}")
        logb = np.empty(self.S)
        emission_fill(y, *self.tables, self._g, self._mix, logb)
        return self._advance(logb)

    def push_logb(self, logb):
        logb = np.asarray(logb, dtype=np.float64)
        if logb.shape != (self.S,):
            raise ValueError(f"emission vector has length {logb.shape}, expected {self.S}")
        return self._advance(logb)

    def _advance(self, logb):
        pool = NEG_INF
        if self.t < 0:
            out = logb + self.log_init
        elif self.kernel == 1:
            out, pool = nobreak_step(self.alpha, logb, *self.args)
        elif self.kernel == 2:
            out, pool = break_step(self.alpha, logb, *self.args, self.bself, self.bexit)
        else:
            out = baseline_step(self.alpha, logb, *self.args, self.dense, self.mode, self.bself, self.bexit)
        norm, best, gap = normalize_readout(out)
        if norm == NEG_INF:
            return norm, 0, gap
        self.alpha = out
        self.pool = pool
        self.t += 1
        return norm, best, gap
