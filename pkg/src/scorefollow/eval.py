"""Alignment metrics and the per-frame processing-time benchmark."""
from __future__ import annotations

import csv
import io
import math
import os
import platform
import sys
import time
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import backend as _backend
from .features import DEFAULT_CQT, CqtConfig, extract_features
from .emission import PitchModelSet, synth_models
from .inference import AlignmentTrace, Follower
from .model import ModelConfig, Variant, build_performance_hmm, flatten
from .simulator import GroundTruth, random_score

PPR_DELTAS_MS = (100, 300, 500, 2000)
ALGORITHMS = ("baseline", "nobreak", "break")


class EvalError(ValueError):
    pass


@dataclass(frozen=True)
class PprResult:
    rate: float
    delta_ms: float
    per_piece: tuple[float, ...] = ()
    detected: int = 0
    total: int = 0


@dataclass(frozen=True)
class RepeatSkipReport:
    detected: int
    total: int
    following_times_s: tuple[float, ...] = ()

    @property
    def rate(self) -> float:
        return self.detected / self.total if self.total else float("nan")

    def __add__(self, other: "RepeatSkipReport") -> "RepeatSkipReport":
        return RepeatSkipReport(
            self.detected + other.detected,
            self.total + other.total,
            self.following_times_s + other.following_times_s,
        )


def _check_timeline(trace: AlignmentTrace, truth: GroundTruth) -> None:
    if len(trace) != truth.n_frames:
        raise EvalError(f"trace has {len(trace)} frames but ground truth has {truth.n_frames}")
    if not math.isclose(trace.hop_s, truth.hop_s, rel_tol=1e-9):
        raise EvalError(f"hop mismatch: trace {trace.hop_s} s, truth {truth.hop_s} s")


def trace_onsets(trace: AlignmentTrace) -> dict[int, list[float]]:
    """Times at which the trace starts reporting each event.

    Suspended frames keep the event reported before them, so leaving the
    break back to the same event is not a new onset.
    """
    out: dict[int, list[float]] = {}
    prev = None
    for e in trace.estimates:
        if e.event != prev:
            out.setdefault(e.event, []).append(e.frame * trace.hop_s)
            prev = e.event
    return out


def _piece_counts(trace: AlignmentTrace, truth: GroundTruth, delta_ms: float) -> tuple[int, int]:
    _check_timeline(trace, truth)
    tol = delta_ms / 1000.0 + 1e-9
    found = {k: np.array(v) for k, v in trace_onsets(trace).items()}
    hits = 0
    for t_true, ev in truth.onsets:
        times = found.get(ev)
        if times is not None and np.any(np.abs(times - t_true) <= tol):
            hits += 1
    return hits, len(truth.onsets)


def ppr(trace, truth, delta_ms: float = 300.0) -> PprResult:
    """Piecewise precision rate: share of true onsets detected within ±delta.

    ``trace`` and ``truth`` may be single objects or equal-length sequences
    of pieces; the overall rate is the unweighted mean of piece rates.
    """
    if delta_ms < 0:
        raise EvalError("delta_ms must be non-negative")
    if isinstance(trace, AlignmentTrace):
        trace, truth = [trace], [truth]
    if len(trace) != len(truth) or not trace:
        raise EvalError("need one ground truth per trace")
    rates, hit_sum, tot_sum = [], 0, 0
    for tr, gt in zip(trace, truth):
        hits, tot = _piece_counts(tr, gt, delta_ms)
        if tot == 0:
            continue
        rates.append(hits / tot)
        hit_sum += hits
        tot_sum += tot
    rate = float(np.mean(rates)) if rates else float("nan")
    return PprResult(rate, float(delta_ms), tuple(rates), hit_sum, tot_sum)


def repeat_skip_report(trace: AlignmentTrace, truth: GroundTruth) -> RepeatSkipReport:
    """Detection count and following times for the jumps in ``truth``.

    A jump counts as detected when some frame from the jump up to the next
    jump (or the stream end) reports the true event without being
    suspended.  The following time is measured to the first such frame.
    """
    _check_timeline(trace, truth)
    hop = truth.hop_s
    est = trace.events
    susp = trace.suspended
    ok = (~susp) & (truth.labels >= 0) & (est == truth.labels)
    detected, times = 0, []
    starts = [j.time_s for j in truth.jumps]
    for m, t0 in enumerate(starts):
        a = math.ceil(t0 / hop - 1e-9)
        b = math.ceil(starts[m + 1] / hop - 1e-9) if m + 1 < len(starts) else truth.n_frames
        hit = np.flatnonzero(ok[a:b])
        if hit.size:
            detected += 1
            times.append(max(0.0, (a + hit[0]) * hop - t0))
    return RepeatSkipReport(detected, len(starts), tuple(times))


# ---------------------------------------------------------------- benchmark


@dataclass(frozen=True)
class BenchRow:
    N: int
    algorithm: str
    mean_frame_time_s: float
    stderr_s: float
    n_frames: int
    pause_states: bool = False
    backend: str = ""


@dataclass
class BenchReport:
    rows: list[BenchRow]
    slopes: dict[str, float] = field(default_factory=dict)
    machine: dict[str, str] = field(default_factory=dict)

    def row(self, N: int, algorithm: str) -> BenchRow:
        for r in self.rows:
            if r.N == N and r.algorithm == algorithm:
                return r
        raise KeyError((N, algorithm))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["N", "algorithm", "mean_frame_time_s", "stderr_s", "n_frames", "pause_states", "backend", "slope"])
        for r in self.rows:
            w.writerow([r.N, r.algorithm, f"{r.mean_frame_time_s:.6e}", f"{r.stderr_s:.3e}", r.n_frames,
                        int(r.pause_states), r.backend, f"{self.slopes.get(r.algorithm, float('nan')):.3f}"])
        return buf.getvalue()

    def table(self) -> str:
        lines = [f"{'N':>8} {'algorithm':>9} {'ms/frame':>10} {'stderr':>9}"]
        for r in self.rows:
            lines.append(f"{r.N:>8} {r.algorithm:>9} {r.mean_frame_time_s * 1e3:>10.4f} {r.stderr_s * 1e3:>9.4f}")
        for a, s in self.slopes.items():
            lines.append(f"slope {a}: {s:.2f}")
        for k, v in self.machine.items():
            lines.append(f"# {k}: {v}")
        return "\n".join(lines)


def machine_info() -> dict[str, str]:
    return {
        "platform": platform.platform(),
        "processor": platform.processor() or platform.machine(),
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "cpus": str(os.cpu_count()),
        "backend": _backend.ACTIVE,
    }


def random_signal_features(seconds: float = 2.0, seed=0, cfg: CqtConfig = DEFAULT_CQT) -> np.ndarray:
    """Normalized CQT frames of uniform white noise."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.0, 1.0, int(round(seconds * cfg.sample_rate)))
    return extract_features(x, cfg)


def loglog_slope(Ns: Sequence[int], times: Sequence[float]) -> float:
    if len(Ns) < 2:
        return float("nan")
    return float(np.polyfit(np.log(np.asarray(Ns, float)), np.log(np.asarray(times, float)), 1)[0])


def bench(
    N_list: Iterable[int] = (10, 100, 1000, 10000),
    algorithms: Iterable[str] = ALGORITHMS,
    frames: np.ndarray | None = None,
    *,
    pause_states: bool = False,
    models: PitchModelSet | None = None,
    backend: str | None = None,
    seed: int = 0,
    n_frames: int = 100,
    warmup: int = 2,
) -> BenchReport:
    """Mean per-frame processing time (emissions included) per N and algorithm.

    The baseline algorithm runs the full sweep on the no-break topology;
    ``nobreak`` and ``break`` use their linear-time kernels.  Frames are the
    CQT of two seconds of noise unless given; the stream is cycled or cut
    to ``n_frames``.
    """
    N_list = [int(n) for n in N_list]
    algorithms = list(algorithms)
    for a in algorithms:
        if a not in ALGORITHMS:
            raise EvalError(f"unknown algorithm {a!r}")
    if frames is None:
        frames = random_signal_features(2.0, seed)
    frames = np.asarray(frames)
    if n_frames < 2:
        raise EvalError("need at least 2 frames per measurement")
    reps = math.ceil(n_frames / len(frames))
    frames = np.concatenate([frames] * reps)[:n_frames]
    models = models or synth_models()
    rows = []
    for N in N_list:
        score = random_score(N, seed=seed + N)
        for alg in algorithms:
            variant = Variant.BREAK if alg == "break" else Variant.NOBREAK
            cfg = ModelConfig(variant=variant, pause_states=pause_states)
            std = flatten(build_performance_hmm(score, cfg), models)
            f = Follower(std, alg, backend)
            for y in frames[:warmup]:
                f.push(y)
            f = Follower(std, alg, backend)
            dt = np.empty(len(frames))
            for k, y in enumerate(frames):
                t0 = time.perf_counter()
                f.push(y)
                dt[k] = time.perf_counter() - t0
            se = float(dt.std(ddof=1) / math.sqrt(len(dt))) if len(dt) > 1 else 0.0
            rows.append(BenchRow(N, alg, float(dt.mean()), se, len(dt), pause_states, backend or _backend.ACTIVE))
    slopes = {}
    for alg in algorithms:
        pts = [(r.N, r.mean_frame_time_s) for r in rows if r.algorithm == alg]
        slopes[alg] = loglog_slope([p[0] for p in pts], [p[1] for p in pts])
    return BenchReport(rows, slopes, machine_info())


def bench_rows_dicts(report: BenchReport) -> list[dict]:
    return [asdict(r) for r in report.rows]
