"""Synthetic performances with errors, repeats/skips and ground truth.

The pipeline is: score -> :func:`inject_errors` -> :func:`inject_repeats_skips`
-> :func:`render_features` (sample frames from the pitch Gaussians) or
:func:`render_audio` (additive synthesis for the CQT path).
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .emission import HARMONIC_DECAY, HARMONICS, PitchModelSet, harmonic_tone
from .features import DEFAULT_CQT
from .score import PITCH_MAX, PITCH_MIN, REST, Score

BREAK = -2  # ground-truth label for frames inside a silent break
SEMITONE_STEPS = (1, 2, 19)


class SimulationError(ValueError):
    pass


class NoteKind(str, Enum):
    CORRECT = "correct"
    SUBSTITUTION = "substitution"
    INSERTION = "insertion"
    PAUSE = "pause"
    BREAK = "break"


@dataclass(frozen=True)
class PerformedNote:
    score_event: int | None  # None for inserted notes, pauses and breaks
    played_pitch: int
    start_s: float
    end_s: float
    kind: NoteKind = NoteKind.CORRECT

    def __post_init__(self):
        if not self.end_s > self.start_s:
            raise SimulationError(f"note must have positive length: {self.start_s}..{self.end_s}")

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s

    def shifted(self, start_s: float) -> "PerformedNote":
        return PerformedNote(self.score_event, self.played_pitch, start_s, start_s + self.duration_s, self.kind)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PerformedNote":
        return cls(d["score_event"], int(d["played_pitch"]), float(d["start_s"]), float(d["end_s"]), NoteKind(d["kind"]))


@dataclass(frozen=True)
class ErrorRates:
    """Per-event error probabilities (piano practice statistics by default)."""

    deletion: float = 0.0034
    insertion: float = 0.0245
    semitone: float = 0.0145
    whole_tone: float = 0.0224
    twelfth: float = 0.0047
    pause: float = 0.0
    pause_s: float = 0.5

    def __post_init__(self):
        for name in ("deletion", "insertion", "semitone", "whole_tone", "twelfth", "pause"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise SimulationError(f"rate {name}={v} outside [0, 1]")
        if self.semitone + self.whole_tone + self.twelfth > 1.0:
            raise SimulationError("substitution rates sum above 1")

    @classmethod
    def none(cls) -> "ErrorRates":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Jump:
    time_s: float  # onset of the resumed note, after the break
    from_event: int
    to_event: int


@dataclass
class GroundTruth:
    labels: np.ndarray  # per-frame event, BREAK inside breaks
    hop_s: float = DEFAULT_CQT.hop_s
    jumps: list[Jump] = field(default_factory=list)
    onsets: list[tuple[float, int]] = field(default_factory=list)

    @property
    def n_frames(self) -> int:
        return len(self.labels)

    @property
    def repeat_skip_times(self) -> list[tuple[float, int, int]]:
        return [(j.time_s, j.from_event, j.to_event) for j in self.jumps]

    @classmethod
    def from_performance(cls, perf: list[PerformedNote], hop_s: float = DEFAULT_CQT.hop_s, jumps=()) -> "GroundTruth":
        """Label each frame (start time ``t * hop_s``) with the covering note's event.

        Inserted notes and pauses belong to the event performed before them.
        """
        if not perf:
            return cls(np.zeros(0, dtype=np.int64), hop_s, list(jumps), [])
        total = perf[-1].end_s
        T = math.ceil(total / hop_s - 1e-9)
        starts = np.array([n.start_s for n in perf])
        note_label = []
        last = perf[0].score_event if perf[0].score_event is not None else 0
        for n in perf:
            if n.kind is NoteKind.BREAK:
                note_label.append(BREAK)
                continue
            if n.score_event is not None:
                last = n.score_event
            note_label.append(last)
        times = np.arange(T) * hop_s
        idx = np.clip(np.searchsorted(starts, times + 1e-12, side="right") - 1, 0, len(perf) - 1)
        labels = np.array(note_label, dtype=np.int64)[idx]
        onsets = [
            (n.start_s, n.score_event)
            for n in perf
            if n.score_event is not None and n.kind in (NoteKind.CORRECT, NoteKind.SUBSTITUTION)
        ]
        return cls(labels, hop_s, list(jumps), onsets)

    def to_jsonl(self) -> str:
        head = {
            "hop_s": self.hop_s,
            "jumps": [asdict(j) for j in self.jumps],
            "onsets": [list(o) for o in self.onsets],
        }
        lines = [json.dumps(head)]
        lines += [json.dumps({"t": t, "event": int(e)}) for t, e in enumerate(self.labels)]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_jsonl())

    @classmethod
    def from_jsonl(cls, text: str) -> "GroundTruth":
        lines = [json.loads(x) for x in text.splitlines() if x.strip()]
        if not lines or "hop_s" not in lines[0]:
            raise SimulationError("ground-truth file must start with a header line holding hop_s")
        head, rows = lines[0], lines[1:]
        labels = np.array([r["event"] for r in sorted(rows, key=lambda r: r["t"])], dtype=np.int64)
        jumps = [Jump(float(j["time_s"]), int(j["from_event"]), int(j["to_event"])) for j in head.get("jumps", [])]
        onsets = [(float(t), int(e)) for t, e in head.get("onsets", [])]
        return cls(labels, float(head["hop_s"]), jumps, onsets)

    @classmethod
    def load(cls, path) -> "GroundTruth":
        return cls.from_jsonl(Path(path).read_text())


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def clean_performance(score: Score) -> list[PerformedNote]:
    return inject_errors(score, ErrorRates.none(), seed=0)


def inject_errors(score: Score, rates: ErrorRates = ErrorRates(), seed=None) -> list[PerformedNote]:
    """Perform ``score`` at its notated tempo with random errors.

    Each event is dropped with the deletion rate; a kept note is played a
    semitone, whole tone or twelfth off (direction uniform) with the
    substitution rates; an extra note a step or two away may follow it.
    """
    rng = _rng(seed)
    sub_p = np.array([rates.semitone, rates.whole_tone, rates.twelfth])
    out: list[PerformedNote] = []
    t = 0.0
    for ev, dur in zip(score.events, score.durations_s()):
        u_del, u_sub, u_sign, u_pause, u_ins, u_ins_pitch = rng.random(6)
        if u_del < rates.deletion:
            continue
        played, kind = ev.pitch, NoteKind.CORRECT
        if not ev.is_rest:
            pick = np.searchsorted(np.cumsum(sub_p), u_sub, side="right")
            if pick < 3:
                step = SEMITONE_STEPS[pick] * (1 if u_sign < 0.5 else -1)
                if not PITCH_MIN <= ev.pitch + step <= PITCH_MAX:
                    step = -step
                played, kind = ev.pitch + step, NoteKind.SUBSTITUTION
        out.append(PerformedNote(ev.index, played, t, t + dur, kind))
        t += dur
        if u_pause < rates.pause:
            out.append(PerformedNote(None, REST, t, t + rates.pause_s, NoteKind.PAUSE))
            t += rates.pause_s
        if u_ins < rates.insertion and not ev.is_rest:
            step = (-2, -1, 1, 2)[int(u_ins_pitch * 4)]
            p = ev.pitch + step if PITCH_MIN <= ev.pitch + step <= PITCH_MAX else ev.pitch - step
            ins = 0.5 * dur
            out.append(PerformedNote(None, p, t, t + ins, NoteKind.INSERTION))
            t += ins
    return out


def _in_nbh(j: int, i: int) -> bool:
    return 0 <= i - j <= 2


def inject_repeats_skips(
    perf: list[PerformedNote],
    p_jump: float = 0.1,
    seed=None,
    *,
    force: bool = True,
    break_s: tuple[float, float] = (0.5, 30.0),
    hop_s: float = DEFAULT_CQT.hop_s,
) -> tuple[list[PerformedNote], GroundTruth]:
    """Insert random repeats/skips, each preceded by a silent break.

    After every score note (each original boundary at most once, which
    keeps the walk finite) the performer jumps with probability ``p_jump``
    to a uniformly chosen non-neighbouring event.  With ``force`` at least
    one jump is made.
    """
    if not 0.0 <= p_jump <= 1.0:
        raise SimulationError(f"p_jump={p_jump} outside [0, 1]")
    rng = _rng(seed)
    first_note: dict[int, int] = {}
    for k, n in enumerate(perf):
        if n.score_event is not None and n.kind is not NoteKind.BREAK:
            first_note.setdefault(n.score_event, k)
    targets = np.array(sorted(first_note))

    def candidates(j: int) -> np.ndarray:
        return targets[(targets - j < 0) | (targets - j > 2)]

    eligible = [
        k for k, n in enumerate(perf[:-1]) if n.score_event is not None and len(candidates(n.score_event))
    ]
    if force and not eligible:
        raise SimulationError("performance too short to host a repeat/skip")
    forced_k = int(rng.choice(eligible)) if (force and eligible) else -1

    out: list[PerformedNote] = []
    jumps: list[Jump] = []
    visited: set[int] = set()
    t, k = 0.0, 0
    while k < len(perf):
        note = perf[k]
        out.append(note.shifted(t))
        t += note.duration_s
        if note.score_event is not None and k < len(perf) - 1 and k not in visited:
            visited.add(k)
            u = rng.random()
            cands = candidates(note.score_event)
            if len(cands) and (u < p_jump or (k == forced_k and not jumps)):
                dest = int(rng.choice(cands))
                pause = float(rng.uniform(*break_s))
                out.append(PerformedNote(None, REST, t, t + pause, NoteKind.BREAK))
                t += pause
                jumps.append(Jump(t, note.score_event, dest))
                k = first_note[dest]
                continue
        k += 1
    return out, GroundTruth.from_performance(out, hop_s, jumps)


def render_features(
    perf: list[PerformedNote],
    models: PitchModelSet,
    hop_s: float = DEFAULT_CQT.hop_s,
    seed=None,
    jumps=(),
) -> tuple[np.ndarray, GroundTruth]:
    """Sample one frame per hop from the Gaussian of the sounding pitch.

    Samples are clipped at zero and renormalized so that they are valid
    normalized-CQT frames.  Returns ``(frames, truth)``.
    """
    rng = _rng(seed)
    truth = GroundTruth.from_performance(perf, hop_s, jumps)
    T = truth.n_frames
    if T == 0:
        return np.zeros((0, models.D)), truth
    starts = np.array([n.start_s for n in perf])
    idx = np.clip(np.searchsorted(starts, np.arange(T) * hop_s + 1e-12, side="right") - 1, 0, len(perf) - 1)
    pitches = np.array([n.played_pitch for n in perf])[idx]
    rows = np.array([models.row(int(p)) for p in pitches])
    Y = models.means[rows] + np.sqrt(models.variances[rows]) * rng.standard_normal((T, models.D))
    Y = np.maximum(Y, 0.0)
    s = Y.sum(axis=1, keepdims=True)
    Y = np.where(s > 0, Y / np.where(s > 0, s, 1.0), 1.0 / models.D)
    return Y, truth


def render_audio(
    perf: list[PerformedNote],
    seed=None,
    sample_rate: int = DEFAULT_CQT.sample_rate,
    amplitude: float = 0.3,
    ramp_s: float = 0.010,
) -> np.ndarray:
    """Additive synthesis: 8 partials decaying by 0.6, 10 ms linear ramps."""
    rng = _rng(seed)
    total = perf[-1].end_s if perf else 0.0
    x = np.zeros(int(round(total * sample_rate)))
    weights = HARMONIC_DECAY ** np.arange(HARMONICS)
    for n in perf:
        if n.played_pitch == REST:
            continue
        a = int(round(n.start_s * sample_rate))
        b = min(len(x), int(round(n.end_s * sample_rate)))
        if b <= a:
            continue
        tone = harmonic_tone(n.played_pitch, b - a, sample_rate, rng.uniform(0, 2 * np.pi, HARMONICS))
        env = np.ones(b - a)
        r = min(int(round(ramp_s * sample_rate)), (b - a) // 2)
        if r > 0:
            env[:r] = np.linspace(0.0, 1.0, r, endpoint=False)
            env[-r:] = np.linspace(1.0, 0.0, r)
        x[a:b] += amplitude * tone * env / weights.sum()
    return x


def random_score(n: int, seed=None, low: int = 55, high: int = 84, tempo_bpm: float = 120.0) -> Score:
    """Random monophonic melody without immediate pitch repetitions."""
    rng = _rng(seed)
    pitches = [int(rng.integers(low, high + 1))]
    while len(pitches) < n:
        p = int(rng.integers(low, high + 1))
        if p != pitches[-1]:
            pitches.append(p)
    values = rng.choice([0.5, 1.0, 1.5, 2.0], size=n)
    return Score.from_pitches(pitches, values, tempo_bpm)


def save_performance(path, perf: list[PerformedNote], meta: dict | None = None) -> None:
    doc = {"meta": meta or {}, "notes": [n.to_dict() for n in perf]}
    Path(path).write_text(json.dumps(doc, indent=1))


def load_performance(path) -> list[PerformedNote]:
    doc = json.loads(Path(path).read_text())
    return [PerformedNote.from_dict(d) for d in doc["notes"]]
