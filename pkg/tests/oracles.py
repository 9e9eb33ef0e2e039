"""Reference constructions used as test oracles.

Everything here is written from the model definitions with plain loops and
shares no code with the package's flattening or kernels.
"""
from __future__ import annotations

import math

import numpy as np

from scorefollow.model import BottomHmm, PerformanceHmm, Variant

NEG_INF = -math.inf


def lae(a: float, b: float) -> float:
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    m = max(a, b)
    return m + math.log(math.exp(a - m) + math.exp(b - m))


def top_matrix(hmm: PerformanceHmm) -> list[list[float]]:
    """log a_{j,i} over regular events: dense, or band plus s_j r_i."""
    n = hmm.N
    A = [[NEG_INF] * n for _ in range(n)]
    for j in range(n):
        for i in range(n):
            if hmm.variant is Variant.BASELINE:
                A[j][i] = float(hmm.log_top_dense[j, i])
                continue
            v = NEG_INF
            if 0 <= i - j <= 2:
                v = float(hmm.log_band[j, i - j])
            if hmm.variant is Variant.NOBREAK:
                v = lae(v, float(hmm.log_s[j] + hmm.log_r[i]))
            A[j][i] = v
    return A


def dense_transition(hmm: PerformanceHmm) -> np.ndarray:
    """Flattened log transition matrix built entry by entry."""
    n, L = hmm.N, hmm.L
    b = hmm.bottoms
    A = top_matrix(hmm)
    S = n * L + (1 if hmm.has_break else 0)
    out = np.full((S, S), NEG_INF)
    for j in range(n):
        for lp in range(L):
            for i in range(n):
                for l in range(L):
                    v = float(b.log_exit[j, lp]) + A[j][i] + float(b.log_init[i, l])
                    if i == j:
                        v = lae(float(b.log_trans[i, lp, l]), v)
                    out[j * L + lp, i * L + l] = v
    if hmm.has_break:
        nb = n * L
        a_self = float(hmm.log_break_self)
        e_break = math.log1p(-math.exp(a_self)) if a_self > NEG_INF else 0.0
        for j in range(n):
            for lp in range(L):
                out[j * L + lp, nb] = float(b.log_exit[j, lp] + hmm.log_s[j])
        for i in range(n):
            for l in range(L):
                out[nb, i * L + l] = e_break + float(hmm.log_r[i] + b.log_init[i, l])
        out[nb, nb] = a_self
    return out


def dense_init(hmm: PerformanceHmm) -> np.ndarray:
    vals = [float(hmm.log_top_init[i] + hmm.bottoms.log_init[i, l]) for i in range(hmm.N) for l in range(hmm.L)]
    if hmm.has_break:
        vals.append(NEG_INF)
    return np.array(vals)


def log_matvec(prev: np.ndarray, A: np.ndarray, logb: np.ndarray) -> np.ndarray:
    """log( b * (alpha^T A) ) with a max-shift per column."""
    M = prev[:, None] + A
    m = M.max(axis=0)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return logb + m_safe + np.log(np.exp(M - m_safe).sum(axis=0))


def dense_forward(hmm: PerformanceHmm, logbs: np.ndarray) -> np.ndarray:
    A = dense_transition(hmm)
    la = logbs[0] + dense_init(hmm)
    out = [la]
    for t in range(1, len(logbs)):
        la = log_matvec(la, A, logbs[t])
        out.append(la)
    return np.array(out)


def random_hmm(rng: np.random.Generator, n: int, L: int, variant: Variant, log10_s: float | None = None) -> PerformanceHmm:
    """Random valid performance HMM; s, r and durations all vary per event."""
    with np.errstate(divide="ignore"):
        if L == 1:
            stay = rng.uniform(0.0, 0.98, n)
            log_trans = np.log(stay)[:, None, None]
            log_exit = np.log1p(-stay)[:, None]
            log_init = np.zeros((n, 1))
        else:
            a00 = rng.uniform(0.0, 0.9, n)
            a01 = rng.uniform(0.0, 1.0, n) * (1 - a00) * 0.5
            a11 = rng.uniform(0.0, 0.99, n)
            log_trans = np.full((n, 2, 2), NEG_INF)
            log_trans[:, 0, 0] = np.log(a00)
            log_trans[:, 0, 1] = np.log(a01)
            log_trans[:, 1, 1] = np.log(a11)
            if rng.random() < 0.5:  # sometimes allow pause -> note
                a10 = rng.uniform(0, 1, n) * (1 - a11) * 0.5
                log_trans[:, 1, 0] = np.log(a10)
            else:
                a10 = np.zeros(n)
            log_exit = np.stack([np.log(1 - a00 - a01), np.log(1 - a11 - a10)], axis=1)
            p0 = rng.uniform(0.5, 1.0, n)
            log_init = np.stack([np.log(p0), np.log1p(-p0)], axis=1)
        if log10_s is None:
            s = 10.0 ** rng.uniform(-6, -0.5, n)
        else:
            s = np.full(n, 10.0 ** log10_s)
        r = rng.dirichlet(np.ones(n))
        band = rng.dirichlet(np.ones(3), n) * (1 - s)[:, None]
        # boundary rows keep their mass on existing targets
        if n >= 2:
            band[n - 2, 1] += band[n - 2, 2]
            band[n - 2, 2] = 0.0
        band[n - 1] = [1 - s[n - 1], 0.0, 0.0]
        top_init = rng.dirichlet(np.ones(n))
        log_s = np.log(s) if log10_s is None else np.full(n, log10_s * math.log(10))
        dense = None
        if variant is Variant.BASELINE:
            D = np.zeros((n, n))
            for j in range(n):
                for k in range(3):
                    if j + k < n:
                        D[j, j + k] += band[j, k]
                D[j] += s[j] * r
            dense = np.log(D)
        hmm = PerformanceHmm(
            variant=variant,
            pitches=np.full(n, 60),
            bottoms=BottomHmm(log_trans, log_exit, log_init),
            log_top_init=np.log(top_init),
            log_band=np.log(band),
            log_s=log_s,
            log_r=np.log(r),
            log_top_dense=dense,
            log_break_self=math.log(rng.uniform(0.5, 0.999)) if variant is Variant.BREAK else NEG_INF,
        )
    hmm.check(1e-9)
    return hmm


def random_log_emissions(rng: np.random.Generator, T: int, S: int, scale: float = 30.0) -> np.ndarray:
    """Wide-ranging log emissions, similar in spread to real Gaussian scores."""
    return rng.normal(0.0, scale, (T, S)) - rng.uniform(0, 5 * scale, (T, 1))
