"""Streaming forward inference and MAP position readout.

Three interchangeable per-frame updates share one state layout:

``baseline``
    sums over every source state, O((LN)^2) per frame; works for all
    topologies and serves as the reference for the other two
``nobreak``
    factorized repeat/skip mass, pooled once per frame, O(LN)
``break``
    repeats/skips routed through the break state, O(LN)

The ``forward_*`` functions implement the plain recursion on unnormalized
log forward variables.  :class:`Follower` wraps them for live use and
renormalizes every frame so long streams stay well inside double range.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from . import backend as _backend
from .model import StandardHmm, Variant

NEG_INF = -np.inf
_MODE = {Variant.BASELINE: 0, Variant.NOBREAK: 1, Variant.BREAK: 2}
_CODE = {"baseline": 0, "nobreak": 1, "break": 2}
_NO_DENSE = np.zeros((1, 1))


class InferenceError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class ForwardState:
    log_alpha: np.ndarray
    t: int
    N: int
    L: int
    has_break: bool = False
    cached_pool: float = NEG_INF

    def __post_init__(self):
        if self.t < 0:
            raise InferenceError("negative frame index")


@dataclass(frozen=True)
class PositionEstimate:
    event: int
    bottom: int
    frame: int
    log_posterior_gap: float
    suspended: bool = False

    def to_dict(self, hop_s: float) -> dict:
        gap = self.log_posterior_gap
        return {
            "t": self.frame,
            "time_s": round(self.frame * hop_s, 9),
            "event": self.event,
            "bottom": self.bottom,
            "gap": gap if np.isfinite(gap) else None,
            "suspended": self.suspended,
        }


@dataclass
class AlignmentTrace:
    estimates: list[PositionEstimate] = field(default_factory=list)
    hop_s: float = 0.020
    frame_times_s: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.estimates)

    @property
    def events(self) -> np.ndarray:
        return np.array([e.event for e in self.estimates], dtype=np.int64)

    @property
    def suspended(self) -> np.ndarray:
        return np.array([e.suspended for e in self.estimates], dtype=bool)

    @property
    def onset_times(self) -> dict[int, float]:
        """Time of the first frame that reports each event."""
        out: dict[int, float] = {}
        for e in self.estimates:
            if not e.suspended and e.event not in out:
                out[e.event] = e.frame * self.hop_s
        return out

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e.to_dict(self.hop_s)) + "\n" for e in self.estimates)

    def save(self, path) -> None:
        Path(path).write_text(self.to_jsonl())

    @classmethod
    def from_jsonl(cls, text: str, hop_s: float = 0.020) -> "AlignmentTrace":
        est = []
        for line in text.splitlines():
            if not line.strip():
                continue
            d = json.loads(line)
            gap = d.get("gap")
            est.append(
                PositionEstimate(
                    int(d["event"]),
                    int(d.get("bottom", 0)),
                    int(d["t"]),
                    float("inf") if gap is None else float(gap),
                    bool(d.get("suspended", False)),
                )
            )
        return cls(est, hop_s)

    @classmethod
    def from_events(cls, events, hop_s: float = 0.020, suspended=None) -> "AlignmentTrace":
        """Trace with the given per-frame events (handy for tests and replay)."""
        events = list(events)
        suspended = [False] * len(events) if suspended is None else list(suspended)
        est = [PositionEstimate(int(e), 0, t, np.inf, bool(s)) for t, (e, s) in enumerate(zip(events, suspended))]
        return cls(est, hop_s)


def _log_b(std: StandardHmm, frame, log_b, backend=None) -> np.ndarray:
    if log_b is not None:
        out = np.asarray(log_b, dtype=np.float64)
    else:
        out = std.log_emissions(getattr(frame, "values", frame), backend)
    if out.shape != (std.n_states,):
        raise InferenceError(f"emission vector has shape {out.shape}, expected ({std.n_states},)")
    return np.ascontiguousarray(out)


def forward_init(std: StandardHmm, frame=None, *, log_b=None, backend=None) -> ForwardState:
    """First-frame forward variables: emission times initial probability."""
    lb = _log_b(std, frame, log_b, backend)
    return ForwardState(lb + std.log_init, 0, std.N, std.L, std.has_break)


def _check(state: ForwardState, std: StandardHmm) -> None:
    if state.log_alpha.shape != (std.n_states,):
        raise InferenceError("forward state does not belong to this model")


def forward_step_baseline(state: ForwardState, std: StandardHmm, frame=None, *, log_b=None, backend=None) -> ForwardState:
    """One full-sweep update; valid for every topology."""
    _check(state, std)
    lb = _log_b(std, frame, log_b, backend)
    k = _backend.get(backend)
    dense = std.hmm.log_top_dense if std.variant is Variant.BASELINE else _NO_DENSE
    out = k.baseline_step(
        np.ascontiguousarray(state.log_alpha), lb, *std.kernel_args,
        np.ascontiguousarray(dense), _MODE[std.variant],
        float(std.log_break_self), float(std.log_break_exit),
    )
    return ForwardState(np.asarray(out), state.t + 1, state.N, state.L, state.has_break)


def forward_step_nobreak(state: ForwardState, std: StandardHmm, frame=None, *, log_b=None, backend=None) -> ForwardState:
    """Linear-time update for the factorized repeat/skip topology."""
    if std.variant is not Variant.NOBREAK:
        raise InferenceError(f"no-break kernel needs a no-break model, got {std.variant.value}")
    _check(state, std)
    lb = _log_b(std, frame, log_b, backend)
    out, pool = _backend.get(backend).nobreak_step(np.ascontiguousarray(state.log_alpha), lb, *std.kernel_args)
    return ForwardState(np.asarray(out), state.t + 1, state.N, state.L, False, float(pool))


def forward_step_break(state: ForwardState, std: StandardHmm, frame=None, *, log_b=None, backend=None) -> ForwardState:
    """Linear-time update for the break-state topology."""
    if std.variant is not Variant.BREAK:
        raise InferenceError(f"break kernel needs a break model, got {std.variant.value}")
    _check(state, std)
    lb = _log_b(std, frame, log_b, backend)
    out, pool = _backend.get(backend).break_step(
        np.ascontiguousarray(state.log_alpha), lb, *std.kernel_args,
        float(std.log_break_self), float(std.log_break_exit),
    )
    return ForwardState(np.asarray(out), state.t + 1, state.N, state.L, True, float(pool))


KERNELS = {
    "baseline": forward_step_baseline,
    "nobreak": forward_step_nobreak,
    "break": forward_step_break,
}


def kernel_for(std: StandardHmm, name: str = "auto"):
    if name == "auto":
        name = {Variant.BASELINE: "baseline", Variant.NOBREAK: "nobreak", Variant.BREAK: "break"}[std.variant]
    try:
        return KERNELS[name]
    except KeyError:
        raise InferenceError(f"unknown kernel {name!r}; choose from {sorted(KERNELS)}") from None


def estimate_position(state: ForwardState, previous: PositionEstimate | None = None) -> PositionEstimate:
    """MAP state of the filtering distribution.

    Ties go to the lowest event, then the lowest bottom state.  When the
    break state wins the estimate is flagged ``suspended`` and keeps the
    event of ``previous`` (or the best regular state if there is none).
    """
    la = state.log_alpha
    best = int(np.argmax(la))
    top = la[best]
    if not top > NEG_INF:
        raise InferenceError("all forward variables are zero")
    if la.size > 1:
        second = max(la[:best].max(initial=NEG_INF), la[best + 1 :].max(initial=NEG_INF))
        gap = float(top - second)
    else:
        gap = float("inf")
    return _readout(state, best, gap, previous)


def _readout(state: ForwardState, best: int, gap: float, previous: PositionEstimate | None) -> PositionEstimate:
    nb = state.N * state.L
    if state.has_break and best == nb:
        if previous is not None:
            return PositionEstimate(previous.event, previous.bottom, state.t, gap, True)
        j = int(np.argmax(state.log_alpha[:nb]))
        return PositionEstimate(j // state.L, j % state.L, state.t, gap, True)
    return PositionEstimate(best // state.L, best % state.L, state.t, gap)


class Follower:
    """Push-one-frame-at-a-time score follower.

    >>> f = Follower(std)                          # doctest: +SKIP
    >>> est = f.push(frame)                        # doctest: +SKIP

    The forward variables are renormalized after every frame (the running
    log normalizer is kept in ``log_evidence``), so arbitrarily long
    streams stay inside double range.  Not thread-safe: one producer
    pushes frames in order.
    """

    def __init__(self, std: StandardHmm, kernel: str = "auto", backend: str | None = None):
        self.std = std
        step = kernel_for(std, kernel)
        self.kernel_name = next(k for k, v in KERNELS.items() if v is step)
        if self.kernel_name == "nobreak" and std.variant is not Variant.NOBREAK:
            raise InferenceError(f"no-break kernel needs a no-break model, got {std.variant.value}")
        if self.kernel_name == "break" and std.variant is not Variant.BREAK:
            raise InferenceError(f"break kernel needs a break model, got {std.variant.value}")
        self.backend = backend
        dense = std.hmm.log_top_dense if std.variant is Variant.BASELINE else _NO_DENSE
        tables = std.emission.tables if std.emission is not None else None
        self._engine = _backend.get(backend).FrameEngine(
            _CODE[self.kernel_name], np.ascontiguousarray(std.log_init, dtype=np.float64),
            *std.kernel_args, np.ascontiguousarray(dense, dtype=np.float64), _MODE[std.variant],
            float(std.log_break_self), float(std.log_break_exit), tables,
        )
        self.state: ForwardState | None = None
        self.last: PositionEstimate | None = None
        self.log_evidence = 0.0

    def push(self, frame=None, *, log_b=None) -> PositionEstimate:
        eng = self._engine
        try:
            if log_b is not None:
                norm, best, gap = eng.push_logb(np.ascontiguousarray(log_b, dtype=np.float64))
            elif frame is None:
                raise InferenceError("push needs a frame or log emissions")
            elif self.std.emission is None:
                raise InferenceError("no emission model attached; pass models to flatten()")
            else:
                y = getattr(frame, "values", frame)
                norm, best, gap = eng.push_frame(np.ascontiguousarray(y, dtype=np.float64))
        except ValueError as exc:
            raise InferenceError(str(exc)) from None
        if not norm > NEG_INF:
            raise InferenceError(f"frame {eng.t + 1}: observation has zero probability under every state")
        self.log_evidence += norm
        std = self.std
        self.state = ForwardState(eng.alpha, eng.t, std.N, std.L, std.has_break, eng.pool)
        self.last = _readout(self.state, best, gap, self.last)
        return self.last


def follow(std: StandardHmm, frames: Iterable, kernel: str = "auto", backend: str | None = None) -> AlignmentTrace:
    """Run the follower over a whole stream, timing every frame."""
    follower = Follower(std, kernel, backend)
    trace = AlignmentTrace(hop_s=std.hmm.hop_s)
    for frame in frames:
        t0 = time.perf_counter()
        est = follower.push(frame)
        trace.frame_times_s.append(time.perf_counter() - t0)
        trace.estimates.append(est)
    if not trace.estimates:
        raise InferenceError("empty frame stream")
    return trace
