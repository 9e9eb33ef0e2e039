"""Two-level performance HMM and its flattened single-level form.

All probabilities are held as natural logs.  Stop probabilities in the
experiments go down to 1e-5000, which no double can represent, so the stop
probability is configured as ``log10_s`` and never exponentiated.

Top-level transitions are stored as a band ``log_band[j, k]`` holding
``log a_{j, j+k}`` for ``k = 0, 1, 2`` (insertion self-loop, regular
progression, deletion skip) plus the rank-one repeat/skip part
``s_j * r_i`` (no-break topology) or routes via an extra break state
(break topology).  The baseline topology keeps a dense ``N x N`` matrix.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from functools import cached_property
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .score import Score

NEG_INF = -np.inf
LN10 = math.log(10.0)
ROW_TOL = 1e-12


class ModelError(ValueError):
    pass


class Variant(str, Enum):
    BASELINE = "baseline"
    NOBREAK = "nobreak"
    BREAK = "break"


def _log(x: float) -> float:
    return math.log(x) if x > 0 else NEG_INF


def _parse_log10(value) -> float:
    if value is None:
        return NEG_INF
    if isinstance(value, str):
        if value.strip().lower() in ("-inf", "-infinity", "zero"):
            return NEG_INF
        return float(value)
    return float(value)


@dataclass(frozen=True)
class ModelConfig:
    """Model construction parameters.

    Defaults follow the experimental setup: deletion 1e-50, no insertion
    self-loop, pause self-loop 0.999 entered with 1e-100, break self-loop
    0.996 and pitch-error probability 1e-50.
    """

    hop_s: float = 0.020
    frame_s: float = 0.128
    variant: Variant = Variant.BREAK
    log10_s: float = -100.0
    pause_states: bool = False
    a_skip2: float = 1e-50
    a_self_top: float = 0.0
    a_pause_self: float = 0.999
    a_pause_entry: float = 1e-100
    a_break_self: float = 0.996
    log10_C: float = -50.0
    top_init: str = "first"

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.hop_s <= 0 or self.frame_s <= 0:
            raise ModelError("hop_s and frame_s must be positive")
        if self.top_init not in ("first", "uniform"):
            raise ModelError(f"top_init must be 'first' or 'uniform', got {self.top_init!r}")
        if self.log10_s >= 0:
            raise ModelError("stop probability s must be < 1 (log10_s < 0)")
        if self.log10_C > 0:
            raise ModelError("pitch-error probability C must be <= 1")
        for name in ("a_skip2", "a_self_top", "a_pause_self", "a_pause_entry", "a_break_self"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ModelError(f"{name} must lie in [0, 1), got {v}")

    @property
    def s(self) -> float:
        """Linear stop probability; underflows to 0.0 below ~1e-308."""
        return 10.0 ** self.log10_s if np.isfinite(self.log10_s) else 0.0

    def with_(self, **changes) -> "ModelConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        if not np.isfinite(self.log10_s):
            d["log10_s"] = None
        if not np.isfinite(self.log10_C):
            d["log10_C"] = None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ModelError(f"unknown model config keys: {sorted(unknown)}")
        d = dict(d)
        if "log10_s" in d:
            d["log10_s"] = _parse_log10(d["log10_s"])
        if "log10_C" in d:
            d["log10_C"] = _parse_log10(d["log10_C"])
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ModelConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def duration_to_self_loop(d_frames: float) -> float:
    """Self-loop probability whose geometric dwell time has mean ``d_frames``.

    Events shorter than one frame get no self-loop at all.
    """
    if d_frames > 1.0:
        return 1.0 - 1.0 / d_frames
    return 0.0


@dataclass(frozen=True, eq=False)
class BottomHmm:
    """Bottom-level HMMs of all events, stacked.

    ``log_trans[i, l', l]`` is log a^{(i)}_{l', l}; ``log_exit[i, l]`` the
    log exit probability and ``log_init[i, l]`` the log entry probability
    of bottom state ``l`` in event ``i``.  ``L == 2`` adds the pause state.
    """

    log_trans: np.ndarray
    log_exit: np.ndarray
    log_init: np.ndarray

    @cached_property
    def N(self) -> int:
        return self.log_trans.shape[0]

    @cached_property
    def L(self) -> int:
        return self.log_trans.shape[1]

    @property
    def self_loop(self) -> np.ndarray:
        return np.diagonal(self.log_trans, axis1=1, axis2=2)

    @property
    def cross(self) -> np.ndarray:
        """log a^{(i)}_{0,1}, the pause-entry probability (``-inf`` if L == 1)."""
        if self.L < 2:
            return np.full(self.N, NEG_INF)
        return self.log_trans[:, 0, 1]

    def check(self, tol: float = ROW_TOL) -> None:
        rows = np.exp(self.log_trans).sum(axis=2) + np.exp(self.log_exit)
        if np.any(np.abs(rows - 1.0) > tol):
            bad = int(np.argmax(np.abs(rows - 1.0).max(axis=1)))
            raise ModelError(f"bottom HMM of event {bad} is not row-stochastic")
        inits = np.exp(self.log_init).sum(axis=1)
        if np.any(np.abs(inits - 1.0) > tol):
            raise ModelError("bottom initial probabilities do not sum to one")


@dataclass(frozen=True, eq=False)
class PerformanceHmm:
    """Hierarchical performance model.

    For ``Variant.BREAK`` an extra top state with index ``N`` models silent
    breaks; it has a single bottom state with self-loop ``log_break_self``.
    """

    variant: Variant
    pitches: np.ndarray
    bottoms: BottomHmm
    log_top_init: np.ndarray
    log_band: np.ndarray
    log_s: np.ndarray
    log_r: np.ndarray
    log_top_dense: np.ndarray | None = None
    log_break_self: float = NEG_INF
    log_pitch_error: float = -50.0 * LN10
    hop_s: float = 0.020

    def __post_init__(self):
        n = len(self.pitches)
        if n < 1:
            raise ModelError("a performance HMM needs at least one event")
        if self.bottoms.N != n or self.log_band.shape != (n, 3):
            raise ModelError("inconsistent parameter shapes")
        if self.variant is Variant.BASELINE and self.log_top_dense is None:
            raise ModelError("baseline variant needs a dense top transition matrix")
        if np.any(self.log_s >= 0):
            raise ModelError("stop probability s_j must be < 1")

    @cached_property
    def N(self) -> int:
        return len(self.pitches)

    @cached_property
    def L(self) -> int:
        return self.bottoms.L

    @cached_property
    def has_break(self) -> bool:
        return self.variant is Variant.BREAK

    @cached_property
    def log_break_exit(self) -> float:
        return _log(1.0 - math.exp(self.log_break_self)) if self.has_break else NEG_INF

    def check(self, tol: float = ROW_TOL) -> None:
        """Verify that every transition row sums to one in the linear domain."""
        self.bottoms.check(tol)
        if abs(np.exp(self.log_top_init).sum() - 1.0) > tol:
            raise ModelError("top initial probabilities do not sum to one")
        if self.variant is Variant.BASELINE:
            rows = np.exp(self.log_top_dense).sum(axis=1)
        else:
            if abs(np.exp(self.log_r).sum() - 1.0) > tol:
                raise ModelError("resumption probabilities r_i do not sum to one")
            band_rows = np.exp(self.log_band).sum(axis=1)
            if np.any(np.abs(band_rows - (1.0 - np.exp(self.log_s))) > tol):
                raise ModelError("band rows must sum to 1 - s_j")
            rows = band_rows + np.exp(self.log_s)
        if np.any(np.abs(rows - 1.0) > tol):
            raise ModelError("top transition rows are not stochastic")


def _band(n: int, s: float, a_self: float, a_skip2: float) -> np.ndarray:
    """Linear band rows; the successor takes the residual mass.

    Rows near the end lose their missing targets: row N-2 has no skip
    target and row N-1 keeps all non-repeat mass on itself.
    """
    band = np.zeros((n, 3))
    for j in range(n):
        if j == n - 1:
            band[j, 0] = 1.0 - s
            continue
        skip = a_skip2 if j + 2 < n else 0.0
        residual = 1.0 - math.fsum((s, a_self, skip))
        if residual <= 0.0:
            raise ModelError(
                f"inconsistent transition parameters: no mass left for event {j} -> {j + 1}"
            )
        band[j] = (a_self, residual, skip)
    return band


def _bottoms(score: Score, cfg: ModelConfig) -> BottomHmm:
    n = len(score)
    d = np.array(score.durations_s()) / cfg.hop_s
    a00 = np.array([duration_to_self_loop(x) for x in d])
    # 1 - a00 written out to avoid cancellation for long notes
    leave = np.where(d > 1.0, 1.0 / np.maximum(d, 1.0), 1.0)
    with np.errstate(divide="ignore"):
        if not cfg.pause_states:
            log_trans = np.log(a00)[:, None, None]
            log_exit = np.log(leave)[:, None]
            log_init = np.zeros((n, 1))
        else:
            e0 = leave - cfg.a_pause_entry
            if np.any(e0 <= 0):
                raise ModelError("pause entry probability leaves no exit mass for a short event")
            log_trans = np.full((n, 2, 2), NEG_INF)
            log_trans[:, 0, 0] = np.log(a00)
            log_trans[:, 0, 1] = _log(cfg.a_pause_entry)
            log_trans[:, 1, 1] = _log(cfg.a_pause_self)
            log_exit = np.stack([np.log(e0), np.full(n, _log(1.0 - cfg.a_pause_self))], axis=1)
            log_init = np.tile([0.0, NEG_INF], (n, 1))
    return BottomHmm(log_trans, log_exit, log_init)


def build_performance_hmm(score: Score, cfg: ModelConfig = ModelConfig()) -> PerformanceHmm:
    """Construct the performance HMM of ``score`` under ``cfg``.

    Expected durations come from the note values at the notated tempo and
    are measured in hops.  Stop probabilities are uniform ``s`` and
    resumption probabilities uniform ``1/N``.
    """
    n = len(score)
    s = cfg.s
    if s >= 1.0:
        raise ModelError("stop probability s must be < 1")
    bottoms = _bottoms(score, cfg)
    with np.errstate(divide="ignore"):
        log_band = np.log(_band(n, s, cfg.a_self_top, cfg.a_skip2))
    log_s = np.full(n, cfg.log10_s * LN10)
    log_r = np.full(n, -math.log(n))
    if cfg.top_init == "first":
        log_top_init = np.full(n, NEG_INF)
        log_top_init[0] = 0.0
    else:
        log_top_init = np.full(n, -math.log(n))

    dense = None
    if cfg.variant is Variant.BASELINE:
        dense = np.logaddexp.reduce(
            np.stack([np.broadcast_to(log_s[:, None] + log_r[None, :], (n, n)), _band_dense(log_band)]),
            axis=0,
        )

    hmm = PerformanceHmm(
        variant=cfg.variant,
        pitches=np.array(score.pitches, dtype=np.int64),
        bottoms=bottoms,
        log_top_init=log_top_init,
        log_band=log_band,
        log_s=log_s,
        log_r=log_r,
        log_top_dense=dense,
        log_break_self=_log(cfg.a_break_self) if cfg.variant is Variant.BREAK else NEG_INF,
        log_pitch_error=cfg.log10_C * LN10,
        hop_s=cfg.hop_s,
    )
    hmm.check()
    return hmm


def _band_dense(log_band: np.ndarray) -> np.ndarray:
    n = log_band.shape[0]
    out = np.full((n, n), NEG_INF)
    for k in range(3):
        j = np.arange(n - k)
        out[j, j + k] = log_band[: n - k, k]
    return out


@dataclass(frozen=True, eq=False)
class StandardHmm:
    """Flattened HMM over states ``(i, l)``, stored without the dense matrix.

    Flat state index is ``i * L + l``; for the break topology the break
    state is the last index ``N * L``.  The kernels read the structured
    pieces directly:

    ``self_block[i, l', l]``
        same-event transitions, bottom move plus exit/re-enter via a_{i,i}
    ``log_cross[j, k]``
        top transition j -> j+k (k = 1, 2) used for neighbour events; for
        the no-break topology this already contains ``s_j r_{j+k}``
    ``log_exit``, ``log_entry``, ``log_s``, ``log_r``
        per-source exit and per-destination entry factors
    """

    hmm: PerformanceHmm
    log_init: np.ndarray
    self_block: np.ndarray
    log_cross: np.ndarray
    emission: object | None = field(default=None)

    @cached_property
    def variant(self) -> Variant:
        return self.hmm.variant

    @cached_property
    def N(self) -> int:
        return self.hmm.N

    @cached_property
    def L(self) -> int:
        return self.hmm.L

    @cached_property
    def has_break(self) -> bool:
        return self.hmm.has_break

    @cached_property
    def n_states(self) -> int:
        return self.N * self.L + (1 if self.has_break else 0)

    @property
    def log_exit(self) -> np.ndarray:
        return self.hmm.bottoms.log_exit

    @property
    def log_entry(self) -> np.ndarray:
        return self.hmm.bottoms.log_init

    @property
    def log_s(self) -> np.ndarray:
        return self.hmm.log_s

    @property
    def log_r(self) -> np.ndarray:
        return self.hmm.log_r

    @cached_property
    def log_break_self(self) -> float:
        return self.hmm.log_break_self

    @cached_property
    def log_break_exit(self) -> float:
        return self.hmm.log_break_exit

    @property
    def break_index(self) -> int | None:
        return self.N * self.L if self.has_break else None

    @property
    def states(self) -> list[tuple[int, int]]:
        out = [(i, l) for i in range(self.N) for l in range(self.L)]
        if self.has_break:
            out.append((self.N, 0))
        return out

    def state_index(self, i: int, l: int = 0) -> int:
        if self.has_break and i == self.N:
            return self.N * self.L
        return i * self.L + l

    def state_of(self, index: int) -> tuple[int, int]:
        if self.has_break and index == self.N * self.L:
            return self.N, 0
        return divmod(index, self.L)

    def log_top(self, j: int, i: int) -> float:
        """log a_{j,i} between two regular events."""
        hmm = self.hmm
        if self.variant is Variant.BASELINE:
            return float(hmm.log_top_dense[j, i])
        k = i - j
        band = float(hmm.log_band[j, k]) if 0 <= k <= 2 else NEG_INF
        if self.variant is Variant.NOBREAK:
            return float(np.logaddexp(band, hmm.log_s[j] + hmm.log_r[i]))
        return band

    def log_transition(self, src: int, dst: int) -> float:
        """Single entry of the flattened transition matrix (log domain)."""
        j, lp = self.state_of(src)
        i, l = self.state_of(dst)
        n = self.N
        if self.has_break and j == n:
            if i == n:
                return self.log_break_self
            return self.log_break_exit + float(self.log_r[i] + self.log_entry[i, l])
        if self.has_break and i == n:
            return float(self.log_exit[j, lp] + self.log_s[j])
        if i == j:
            return float(self.self_block[i, lp, l])
        return float(self.log_exit[j, lp] + self.log_top(j, i) + self.log_entry[i, l])

    def dense_log_transition(self) -> np.ndarray:
        """Materialize the full ``n_states x n_states`` log transition matrix."""
        n, L = self.N, self.L
        hmm = self.hmm
        if self.variant is Variant.BASELINE:
            top = hmm.log_top_dense.copy()
        else:
            top = _band_dense(hmm.log_band)
            if self.variant is Variant.NOBREAK:
                top = np.logaddexp(top, self.log_s[:, None] + self.log_r[None, :])
        blocks = (
            self.log_exit[:, :, None, None]
            + top[:, None, :, None]
            + self.log_entry[None, None, :, :]
        )  # (j, l', i, l)
        idx = np.arange(n)
        blocks[idx, :, idx, :] = self.self_block
        dense = blocks.reshape(n * L, n * L)
        if not self.has_break:
            return dense
        S = n * L + 1
        out = np.full((S, S), NEG_INF)
        out[: n * L, : n * L] = dense
        out[: n * L, n * L] = (self.log_exit + self.log_s[:, None]).ravel()
        out[n * L, : n * L] = (self.log_break_exit + self.log_r[:, None] + self.log_entry).ravel()
        out[n * L, n * L] = self.log_break_self
        return out

    def log_emissions(self, y, backend: str | None = None) -> np.ndarray:
        """Per-state log emission probabilities of frame ``y``."""
        if self.emission is None:
            raise ModelError("no emission model attached; pass models to flatten()")
        return self.emission.log_b(y, backend)

    @cached_property
    def kernel_args(self) -> tuple:
        """Contiguous ``(selfb, cross, lex, lent, ls, lr)`` shared by all kernels."""
        h = self.hmm
        return tuple(
            np.ascontiguousarray(a, dtype=np.float64)
            for a in (self.self_block, self.log_cross, h.bottoms.log_exit, h.bottoms.log_init, h.log_s, h.log_r)
        )

    def with_emission(self, emission) -> "StandardHmm":
        return replace(self, emission=emission)


def flatten(hmm: PerformanceHmm, models=None) -> StandardHmm:
    """Convert the two-level model into its equivalent single-level HMM.

    If ``models`` (a ``PitchModelSet``) is given, the per-event mixture
    emissions are attached so the result can be fed to the follower.
    """
    n = hmm.N
    b = hmm.bottoms
    if hmm.variant is Variant.BASELINE:
        top_self = np.diagonal(hmm.log_top_dense).copy()
        cross = np.full((n, 3), NEG_INF)
        for k in (1, 2):
            j = np.arange(n - k)
            cross[j, k] = hmm.log_top_dense[j, j + k]
    else:
        top_self = hmm.log_band[:, 0].copy()
        cross = hmm.log_band.copy()
        cross[:, 0] = NEG_INF
        if hmm.variant is Variant.NOBREAK:
            top_self = np.logaddexp(top_self, hmm.log_s + hmm.log_r)
            for k in (1, 2):
                j = np.arange(n - k)
                cross[j, k] = np.logaddexp(cross[j, k], hmm.log_s[j] + hmm.log_r[j + k])
    self_block = np.logaddexp(
        b.log_trans, b.log_exit[:, :, None] + top_self[:, None, None] + b.log_init[:, None, :]
    )
    log_init = (hmm.log_top_init[:, None] + b.log_init).ravel()
    if hmm.has_break:
        log_init = np.append(log_init, NEG_INF)
    std = StandardHmm(hmm=hmm, log_init=log_init, self_block=self_block, log_cross=cross)
    if models is not None:
        from .emission import EventEmission

        std = std.with_emission(EventEmission.for_model(hmm, models))
    return std


def row_sums(std: StandardHmm) -> np.ndarray:
    """Linear-domain row sums of the flattened transition matrix (small models)."""
    return np.exp(logsumexp(std.dense_log_transition(), axis=1))
