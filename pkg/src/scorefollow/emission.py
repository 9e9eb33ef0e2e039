"""Pitch Gaussians and per-event mixture emissions.

Every pitch ``k`` (and silence, ``k = -1``) has a diagonal Gaussian over
normalized CQT frames.  An event with pitch ``p`` emits from a mixture
that puts ``1 - C`` on ``p`` and spreads the pitch-error probability ``C``
over semitone, whole-tone and twelfth neighbours.
"""
from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from . import backend as _backend
from .features import DEFAULT_CQT, CqtConfig, cqt_frame, normalize_values
from .score import PITCH_MAX, PITCH_MIN, PITCH_SET, REST

DEFAULT_FLOOR = 1e-4
LOG_2PI = math.log(2.0 * math.pi)
LN10 = math.log(10.0)

#: Interval -> share of the pitch-error probability on each side.
ERROR_SHARES = {1: Fraction(7, 40), 2: Fraction(27, 100), 19: Fraction(11, 200)}

HARMONICS = 8
HARMONIC_DECAY = 0.6


class EmissionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PitchModel:
    k: int
    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        if self.mean.shape != self.var.shape or self.mean.ndim != 1:
            raise EmissionError(f"pitch {self.k}: mean/var shape mismatch")
        if not (np.all(np.isfinite(self.mean)) and np.all(np.isfinite(self.var))):
            raise EmissionError(f"pitch {self.k}: non-finite parameters")

    def log_pdf(self, y) -> float:
        y = np.asarray(y, dtype=np.float64)
        if y.shape != self.mean.shape:
            raise EmissionError(f"frame dimension {y.shape} != model dimension {self.mean.shape}")
        diff = y - self.mean
        return float(-0.5 * (len(y) * LOG_2PI + np.log(self.var).sum() + (diff * diff / self.var).sum()))


class PitchModelSet:
    """Gaussians for every pitch in ``{21..108} + {-1}``, stacked for speed.

    ``means``/``variances`` are ``(K, D)`` arrays in the order of
    :data:`scorefollow.score.PITCH_SET`; ``row(k)`` maps a pitch to its row.
    """

    def __init__(self, models: dict[int, PitchModel], F: float = DEFAULT_FLOOR):
        missing = [k for k in PITCH_SET if k not in models]
        if missing:
            raise EmissionError(f"pitch model set incomplete, missing {missing[:5]}...")
        self.F = float(F)
        self.models = {k: models[k] for k in PITCH_SET}
        self.means = np.stack([self.models[k].mean for k in PITCH_SET])
        self.variances = np.stack([self.models[k].var for k in PITCH_SET])
        if np.any(self.variances < 0):
            raise EmissionError("negative variance")
        with np.errstate(divide="ignore"):
            self._inv_var = 1.0 / self.variances
            self._log_norm = -0.5 * (self.D * LOG_2PI + np.log(self.variances).sum(axis=1))

    @property
    def D(self) -> int:
        return self.means.shape[1]

    @staticmethod
    def row(k: int) -> int:
        return 0 if k == REST else k - PITCH_MIN + 1

    def __getitem__(self, k: int) -> PitchModel:
        return self.models[k]

    def log_gaussians(self, y, rows=None) -> np.ndarray:
        """log N(y | mu_k, Sigma_k) for all pitches (or the given rows)."""
        y = np.asarray(y, dtype=np.float64)
        if y.shape != (self.D,):
            raise EmissionError(f"frame dimension {y.shape} != model dimension {self.D}")
        if rows is None:
            diff = y - self.means
            return self._log_norm - 0.5 * np.einsum("kd,kd,kd->k", diff, diff, self._inv_var)
        diff = y - self.means[rows]
        return self._log_norm[rows] - 0.5 * np.einsum("kd,kd,kd->k", diff, diff, self._inv_var[rows])

    def to_dict(self) -> dict:
        return {
            "F": self.F,
            "D": self.D,
            "models": {
                str(k): {"mean": m.mean.tolist(), "var": m.var.tolist()} for k, m in self.models.items()
            },
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def from_dict(cls, d: dict) -> "PitchModelSet":
        D = int(d["D"])
        models = {}
        for key, m in d["models"].items():
            k = int(key)
            mean = np.asarray(m["mean"], dtype=np.float64)
            var = np.asarray(m["var"], dtype=np.float64)
            if mean.shape != (D,):
                raise EmissionError(f"pitch {k}: mean has {mean.shape}, file declares D={D}")
            models[k] = PitchModel(k, mean, var)
        return cls(models, float(d["F"]))

    @classmethod
    def load(cls, path) -> "PitchModelSet":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class MixtureWeights:
    """Sparse mixture over pitches for one event.

    ``log_weights`` is what the emission uses; it is computed from
    ``log10_C`` so that C far below double range still works.  ``weights``
    gives the exact rational weights when C is representable.
    """

    pitch: int
    log10_C: float
    log_weights: dict
    linear_C: float | None = None

    @property
    def C(self) -> float:
        if self.linear_C is not None:
            return self.linear_C
        return 10.0 ** self.log10_C if np.isfinite(self.log10_C) else 0.0

    @property
    def weights(self) -> dict:
        C = Fraction(self.C)
        out: dict[int, Fraction] = defaultdict(Fraction)
        if self.pitch == REST or C == 0:
            return {self.pitch: Fraction(1)}
        out[self.pitch] += 1 - C
        for step, share in ERROR_SHARES.items():
            for k in (self.pitch - step, self.pitch + step):
                target = k if PITCH_MIN <= k <= PITCH_MAX else self.pitch
                out[target] += C * share
        return dict(out)


def mixture_weights(p: int, C: float | None = None, *, log10_C: float | None = None) -> MixtureWeights:
    """Mixture weights for an event of pitch ``p`` with pitch-error probability C.

    Give either ``C`` or ``log10_C``.  Error targets outside A0..C8 fold
    their mass back into ``p``.
    """
    if (C is None) == (log10_C is None):
        raise EmissionError("give exactly one of C and log10_C")
    if C is not None:
        if not 0.0 <= C < 1.0:
            raise EmissionError(f"pitch-error probability must lie in [0, 1), got {C}")
        log10_C = math.log10(C) if C > 0 else -math.inf
    elif log10_C >= 0:
        raise EmissionError("pitch-error probability must be < 1")
    if p not in PITCH_SET:
        raise EmissionError(f"pitch {p} not in the pitch set")

    if p == REST or not np.isfinite(log10_C):
        return MixtureWeights(p, log10_C, {p: 0.0}, C)
    logC = log10_C * LN10
    parts: dict[int, list[float]] = defaultdict(list)
    parts[p].append(math.log1p(-math.exp(logC)))
    for step, share in ERROR_SHARES.items():
        lw = logC + math.log(share)
        for k in (p - step, p + step):
            parts[k if PITCH_MIN <= k <= PITCH_MAX else p].append(lw)
    log_w = {k: float(np.logaddexp.reduce(v)) for k, v in parts.items()}
    return MixtureWeights(p, log10_C, log_w, C)


def log_emission(weights: MixtureWeights, frame, models: PitchModelSet) -> float:
    """log of the mixture emission probability of one frame."""
    y = getattr(frame, "values", frame)
    ks = list(weights.log_weights)
    rows = [models.row(k) for k in ks]
    g = models.log_gaussians(y, rows)
    lw = np.array([weights.log_weights[k] for k in ks])
    return float(logsumexp(lw + g))


def harmonic_tone(k: int, n_samples: int, sample_rate: int = DEFAULT_CQT.sample_rate, phases=None) -> np.ndarray:
    """Additive tone: partials ``h = 1..8`` below Nyquist with amplitude ``0.6**(h-1)``."""
    f0 = 440.0 * 2.0 ** ((k - 69) / 12.0)
    t = np.arange(n_samples) / sample_rate
    phases = np.zeros(HARMONICS) if phases is None else np.asarray(phases, dtype=float)
    x = np.zeros(n_samples)
    for h in range(1, HARMONICS + 1):
        if h * f0 >= sample_rate / 2:
            break
        x += HARMONIC_DECAY ** (h - 1) * np.sin(2.0 * np.pi * h * f0 * t + phases[h - 1])
    return x


def synth_template(k: int, cfg: CqtConfig = DEFAULT_CQT, F: float = DEFAULT_FLOOR) -> PitchModel:
    """Spectral template standing in for trained instrument data.

    The mean is the normalized CQT of one frame of :func:`harmonic_tone`;
    silence is flat.  Variances are all ``F``.
    """
    if k not in PITCH_SET:
        raise EmissionError(f"pitch {k} not in the pitch set")
    D = cfg.D
    if k == REST:
        mean = np.full(D, 1.0 / D)
    else:
        mean = normalize_values(cqt_frame(harmonic_tone(k, cfg.frame_len, cfg.sample_rate), cfg).values)
    return PitchModel(k, mean, np.full(D, F))


def synth_models(cfg: CqtConfig = DEFAULT_CQT, F: float = DEFAULT_FLOOR) -> PitchModelSet:
    return PitchModelSet({k: synth_template(k, cfg, F) for k in PITCH_SET}, F)


def train_pitch_models(
    labeled, F: float = DEFAULT_FLOOR, cfg: CqtConfig = DEFAULT_CQT
) -> PitchModelSet:
    """Fit diagonal Gaussians per pitch with variance flooring.

    ``labeled`` is an iterable of ``(k, frame)`` pairs.  Pitches without
    data use :func:`synth_template`.
    """
    groups: dict[int, list[np.ndarray]] = defaultdict(list)
    for k, frame in labeled:
        k = int(k)
        if k not in PITCH_SET:
            raise EmissionError(f"training label {k} not in the pitch set")
        groups[k].append(np.asarray(getattr(frame, "values", frame), dtype=np.float64))
    if not groups:
        raise EmissionError("no training data")
    models = {}
    for k in PITCH_SET:
        frames = groups.get(k)
        if not frames:
            models[k] = synth_template(k, cfg, F)
            continue
        if len(frames) < 2:
            raise EmissionError(f"pitch {k}: need at least 2 frames, got 1")
        X = np.vstack(frames)
        if X.shape[1] != cfg.D:
            raise EmissionError(f"pitch {k}: frames have dimension {X.shape[1]}, expected {cfg.D}")
        models[k] = PitchModel(k, X.mean(axis=0), np.maximum(X.var(axis=0), F))
    return PitchModelSet(models, F)


class EventEmission:
    """Per-state emission evaluator for a flattened model.

    Events sharing a pitch share a mixture, so each frame costs one
    Gaussian per pitch in the union of mixture supports, at most seven
    terms per distinct pitch, and an O(N) gather.  Pause and break states
    use the silence Gaussian.
    """

    def __init__(self, pitches, models: PitchModelSet, log10_C: float, L: int = 1, has_break: bool = False):
        pitches = np.asarray(pitches, dtype=np.int64)
        self.models = models
        self.L = L
        self.has_break = has_break
        uniq, slot = np.unique(pitches, return_inverse=True)
        self.event_slot = np.ascontiguousarray(slot, dtype=np.intp)
        mixes = [mixture_weights(int(p), log10_C=log10_C) for p in uniq]
        support = sorted({k for m in mixes for k in m.log_weights} | {REST})
        rows = np.array([models.row(k) for k in support])
        col = {k: c for c, k in enumerate(support)}
        self.silence_col = col[REST]
        width = max(len(m.log_weights) for m in mixes)
        self.comp = np.zeros((len(uniq), width), dtype=np.intp)
        self.comp_lw = np.full((len(uniq), width), -np.inf)
        for u, m in enumerate(mixes):
            for c, (k, lw) in enumerate(sorted(m.log_weights.items())):
                self.comp[u, c] = col[k]
                self.comp_lw[u, c] = lw
        self.mu = np.ascontiguousarray(models.means[rows])
        self.iv = np.ascontiguousarray(models._inv_var[rows])
        self.lnorm = np.ascontiguousarray(models._log_norm[rows])
        self._g = np.empty(len(rows))
        self._mix = np.empty(len(uniq))
        self.N = len(pitches)
        self.n_states = self.N * L + (1 if has_break else 0)

    @classmethod
    def for_model(cls, hmm, models: PitchModelSet) -> "EventEmission":
        return cls(hmm.pitches, models, hmm.log_pitch_error / LN10, hmm.L, hmm.has_break)

    def log_b(self, y, backend: str | None = None) -> np.ndarray:
        y = np.ascontiguousarray(y, dtype=np.float64)
        if y.shape != (self.mu.shape[1],):
            raise EmissionError(f"frame dimension {y.shape} != model dimension {self.mu.shape[1]}")
        out = np.empty(self.n_states)
        _backend.get(backend).emission_fill(y, *self.tables, self._g, self._mix, out)
        return out

    @property
    def tables(self) -> tuple:
        """Arrays consumed by the compiled emission routine, in call order."""
        return (self.mu, self.iv, self.lnorm, self.comp, self.comp_lw, self.event_slot,
                self.L, self.has_break, self.silence_col)
