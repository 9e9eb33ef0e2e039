"""Symbolic scores: events, pitch names and the JSON score format.

A score file looks like::

    {"tempo_bpm": 120,
     "events": [{"pitch": "C4", "beats": 1},
                {"pitch": "rest", "beats": 0.5},
                {"pitch": 62, "beats": 1}]}

Pitches are MIDI numbers in 21..108 (A0..C8); rests are stored as -1.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

REST = -1
PITCH_MIN = 21
PITCH_MAX = 108
#: Every pitch index an event or a pitch model may carry.
PITCH_SET = (REST, *range(PITCH_MIN, PITCH_MAX + 1))

_NAME_RE = re.compile(r"^([A-Ga-g])([#sb]*)(-?\d+)$")
_STEPS = {"C": 0, "D": 2, "E": 4, "F": 5, "G": 7, "A": 9, "B": 11}
_NAMES = ("C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B")


class ScoreError(ValueError):
    """Raised for malformed score files.  ``line`` is set for JSON syntax errors."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


def pitch_from_name(name: str) -> int:
    """Convert ``"C4"``, ``"F#3"``, ``"Bb5"`` or ``"rest"`` to a pitch index."""
    if name.strip().lower() in ("rest", "r"):
        return REST
    m = _NAME_RE.match(name.strip())
    if m is None:
        raise ScoreError(f"unknown pitch name {name!r}")
    step, accidentals, octave = m.groups()
    midi = 12 * (int(octave) + 1) + _STEPS[step.upper()]
    midi += accidentals.count("#") + accidentals.count("s") - accidentals.count("b")
    if not PITCH_MIN <= midi <= PITCH_MAX:
        raise ScoreError(f"pitch {name!r} outside A0..C8")
    return midi


def pitch_name(pitch: int) -> str:
    if pitch == REST:
        return "rest"
    return f"{_NAMES[pitch % 12]}{pitch // 12 - 1}"


@dataclass(frozen=True)
class ScoreEvent:
    index: int
    pitch: int
    note_value: float  # beats

    def __post_init__(self):
        if self.pitch not in PITCH_SET:
            raise ScoreError(f"event {self.index}: pitch {self.pitch} not in the pitch set")
        if not self.note_value > 0:
            raise ScoreError(f"event {self.index}: non-positive note value {self.note_value}")

    @property
    def is_rest(self) -> bool:
        return self.pitch == REST


@dataclass(frozen=True)
class Score:
    events: tuple[ScoreEvent, ...]
    tempo_bpm: float = 120.0

    def __post_init__(self):
        if not self.events:
            raise ScoreError("empty score")
        if not self.tempo_bpm > 0:
            raise ScoreError(f"non-positive tempo {self.tempo_bpm}")
        for i, ev in enumerate(self.events):
            if ev.index != i:
                raise ScoreError(f"event indices not contiguous at position {i}")

    def __len__(self) -> int:
        return len(self.events)

    @property
    def pitches(self) -> list[int]:
        return [ev.pitch for ev in self.events]

    def durations_s(self) -> list[float]:
        """Notated duration of each event in seconds."""
        beat = 60.0 / self.tempo_bpm
        return [ev.note_value * beat for ev in self.events]

    @classmethod
    def from_pitches(cls, pitches, note_values=1.0, tempo_bpm: float = 120.0) -> "Score":
        if isinstance(note_values, (int, float)):
            note_values = [float(note_values)] * len(pitches)
        events = tuple(
            ScoreEvent(i, int(p), float(v)) for i, (p, v) in enumerate(zip(pitches, note_values))
        )
        return cls(events, float(tempo_bpm))

    def to_dict(self) -> dict:
        return {
            "tempo_bpm": self.tempo_bpm,
            "events": [
                {"pitch": pitch_name(ev.pitch), "beats": ev.note_value} for ev in self.events
            ],
        }


def _parse_pitch(raw, index: int) -> int:
    if isinstance(raw, bool):
        raise ScoreError(f"event {index}: invalid pitch {raw!r}")
    if isinstance(raw, int):
        if raw != REST and not PITCH_MIN <= raw <= PITCH_MAX:
            raise ScoreError(f"event {index}: MIDI pitch {raw} outside 21..108")
        return raw
    if isinstance(raw, str):
        try:
            return pitch_from_name(raw)
        except ScoreError as exc:
            raise ScoreError(f"event {index}: {exc}") from None
    raise ScoreError(f"event {index}: invalid pitch {raw!r}")


def parse_score(text: str) -> Score:
    """Parse a JSON score document.

    Raises
    ------
    ScoreError
        On JSON syntax errors (with the offending line), unknown pitch
        names, non-positive note values or an empty event list.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScoreError(exc.msg, line=exc.lineno) from None
    if not isinstance(doc, dict) or "events" not in doc:
        raise ScoreError("score must be an object with an 'events' list")
    raw_events = doc["events"]
    if not isinstance(raw_events, list):
        raise ScoreError("'events' must be a list")
    if not raw_events:
        raise ScoreError("empty score")
    tempo = doc.get("tempo_bpm", 120.0)
    if isinstance(tempo, bool) or not isinstance(tempo, (int, float)):
        raise ScoreError(f"invalid tempo_bpm {tempo!r}")

    events = []
    for i, raw in enumerate(raw_events):
        if not isinstance(raw, dict) or "pitch" not in raw or "beats" not in raw:
            raise ScoreError(f"event {i}: expected an object with 'pitch' and 'beats'")
        beats = raw["beats"]
        if isinstance(beats, bool) or not isinstance(beats, (int, float)):
            raise ScoreError(f"event {i}: invalid note value {beats!r}")
        if beats <= 0:
            raise ScoreError(f"event {i}: non-positive note value {beats}")
        events.append(ScoreEvent(i, _parse_pitch(raw["pitch"], i), float(beats)))
    return Score(tuple(events), float(tempo))


def load_score(path) -> Score:
    return parse_score(Path(path).read_text())
