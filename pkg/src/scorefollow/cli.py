"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 input/parse error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import backend as _backend
from .emission import DEFAULT_FLOOR, EmissionError, PitchModelSet, synth_models, train_pitch_models
from .eval import ALGORITHMS, EvalError, bench, ppr, repeat_skip_report
from .features import CqtConfig, FeatureError, extract_features, parse_feature_line, read_features, read_wav, write_features, write_wav
from .inference import Follower, InferenceError, follow
from .model import ModelConfig, ModelError, Variant, build_performance_hmm, flatten
from .score import ScoreError, load_score
from .simulator import (
    ErrorRates,
    GroundTruth,
    SimulationError,
    inject_errors,
    inject_repeats_skips,
    render_audio,
    render_features,
    save_performance,
)

EXIT_USAGE, EXIT_PARSE, EXIT_RUNTIME = 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits with 2 by default
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _log10_prob(text: str) -> float:
    """log10 of a probability; ``-inf`` means exactly zero."""
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if math.isnan(v) or v >= 0:
        raise argparse.ArgumentTypeError(f"log10 probability must be negative (or -inf), got {text}")
    return v


def _positive(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not v > 0 or math.isinf(v):
        raise argparse.ArgumentTypeError(f"must be a positive number, got {text}")
    return v


def _unit(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1], got {text}")
    return v


@dataclass
class RunConfig:
    """Model, feature and run settings shared by every command."""

    model: ModelConfig
    cqt: CqtConfig
    algorithm: str = "break"
    seed: int = 0
    floor: float = DEFAULT_FLOOR
    delta_ms: list[float] = field(default_factory=lambda: [300.0])
    backend: str | None = None
    models_path: str | None = None

    @classmethod
    def from_args(cls, a) -> "RunConfig":
        base = ModelConfig.load(a.config) if a.config else ModelConfig()
        variant = Variant.BREAK if a.algorithm == "break" else Variant.NOBREAK
        model = base.with_(
            variant=variant,
            log10_s=a.log10_s if a.log10_s is not None else base.log10_s,
            log10_C=a.pitch_error_log10_C if a.pitch_error_log10_C is not None else base.log10_C,
            pause_states=a.pause_states or base.pause_states,
            hop_s=a.hop_ms / 1000.0,
            frame_s=a.frame_ms / 1000.0,
        )
        cqt = CqtConfig(frame_s=model.frame_s, hop_s=model.hop_s)
        return cls(model, cqt, a.algorithm, a.seed, a.floor, list(a.delta_ms), a.backend, getattr(a, "models", None))

    def pitch_models(self) -> PitchModelSet:
        if self.models_path:
            models = PitchModelSet.load(self.models_path)
            if models.D != self.cqt.D:
                raise EmissionError(f"model dimension {models.D} != feature dimension {self.cqt.D}")
            return models
        return synth_models(self.cqt, self.floor)


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("model and run options")
    g.add_argument("--algorithm", choices=ALGORITHMS, default="break",
                   help="forward algorithm: full-sweep baseline, no-break or break (default: break)")
    g.add_argument("--log10-s", type=_log10_prob, default=None, metavar="X",
                   help="log10 of the repeat/skip stop probability s (default -100; -inf disables)")
    g.add_argument("--pitch-error-log10-C", type=_log10_prob, default=None, metavar="X",
                   help="log10 of the pitch-error probability C (default -50)")
    g.add_argument("--floor", type=_positive, default=DEFAULT_FLOOR, metavar="F",
                   help="variance floor F for pitch models (default 1e-4)")
    g.add_argument("--delta-ms", type=_positive, nargs="+", default=[300.0], metavar="MS",
                   help="onset tolerance(s) for PPR in ms (default 300)")
    g.add_argument("--pause-states", action="store_true", help="add a pause state to every event")
    g.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    g.add_argument("--hop-ms", type=_positive, default=20.0, help="frame hop in ms (default 20)")
    g.add_argument("--frame-ms", type=_positive, default=128.0, help="analysis frame length in ms (default 128)")
    g.add_argument("--backend", choices=_backend.available(), default=None,
                   help=f"kernel backend (default {_backend.ACTIVE})")
    g.add_argument("--config", metavar="JSON", help="model configuration file; flags override it")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    p = _Parser(
        prog="scorefollow",
        description="Real-time monophonic score following robust to errors and repeats/skips.",
        epilog="Shared options of every command: --algorithm, --log10-s, --pitch-error-log10-C, "
        "--floor, --delta-ms, --pause-states, --seed, --hop-ms, --frame-ms, --backend, --config.",
    )
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    a = sub.add_parser("align", parents=[common], help="follow a performance through a score")
    a.add_argument("score", help="score JSON file")
    src = a.add_mutually_exclusive_group(required=True)
    src.add_argument("--audio", help="16 kHz mono 16-bit WAV file")
    src.add_argument("--features", help="feature file (JSONL or CSV)")
    src.add_argument("--stdin", action="store_true", help="stream JSONL frames from stdin, estimates to stdout")
    a.add_argument("--models", help="pitch model JSON (default: synthetic templates)")
    a.add_argument("--truth", help="ground-truth JSONL; prints PPR and repeat/skip detection")
    a.add_argument("-o", "--output", help="trace JSONL path (default: stdout)")

    s = sub.add_parser("simulate", parents=[common], help="synthesize a performance with ground truth")
    s.add_argument("score", help="score JSON file")
    s.add_argument("--out-dir", required=True, help="directory for performance.json, features.jsonl, truth.jsonl")
    s.add_argument("--p-jump", type=_unit, default=0.1, help="repeat/skip probability per note (default 0.1)")
    s.add_argument("--no-jumps", action="store_true", help="do not insert repeats/skips")
    s.add_argument("--errors", choices=("on", "off"), default="on", help="inject performance errors (default on)")
    s.add_argument("--audio", action="store_true", help="also render audio.wav")
    s.add_argument("--models", help="pitch model JSON used to sample features")

    b = sub.add_parser("bench", parents=[common], help="per-frame processing time versus score length")
    b.add_argument("--N", type=int, nargs="+", default=[10, 100, 1000, 10000], help="score lengths")
    b.add_argument("--algorithms", nargs="+", default=["all"], choices=ALGORITHMS + ("all",))
    b.add_argument("--frames", type=int, default=100, help="frames per measurement (default 100)")
    b.add_argument("-o", "--output", help="CSV path (default: stdout)")

    t = sub.add_parser("train", parents=[common], help="fit pitch Gaussians from labeled frames")
    t.add_argument("data", help="JSONL with one {\"pitch\": k, \"y\": [...]} object per line")
    t.add_argument("-o", "--output", required=True, help="model JSON path")

    m = sub.add_parser("synthmodel", parents=[common], help="write synthetic harmonic pitch models")
    m.add_argument("-o", "--output", required=True, help="model JSON path")
    return p


def _emit(text: str, path: str | None) -> None:
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _model(cfg: RunConfig, score_path: str):
    score = load_score(score_path)
    hmm = build_performance_hmm(score, cfg.model)
    return score, flatten(hmm, cfg.pitch_models())


def cmd_align(a, cfg: RunConfig) -> int:
    _, std = _model(cfg, a.score)
    kernel = cfg.algorithm
    if a.stdin:
        f = Follower(std, kernel, cfg.backend)
        for line in sys.stdin:
            if not line.strip():
                continue
            try:
                y = parse_feature_line(line)
            except (ValueError, KeyError, TypeError) as exc:
                raise FeatureError(f"bad feature line: {exc}") from None
            est = f.push(y)
            sys.stdout.write(json.dumps(est.to_dict(cfg.model.hop_s)) + "\n")
            sys.stdout.flush()
        return 0
    if a.audio:
        Y = extract_features(read_wav(a.audio, cfg.cqt), cfg.cqt)
    else:
        Y = read_features(a.features)
    if len(Y) == 0:
        raise FeatureError("no frames in input")
    if Y.shape[1] != cfg.cqt.D:
        raise FeatureError(f"frames have dimension {Y.shape[1]}, expected {cfg.cqt.D}")
    trace = follow(std, Y, kernel, cfg.backend)
    _emit(trace.to_jsonl(), a.output)
    ms = 1e3 * float(np.mean(trace.frame_times_s))
    print(f"frames: {len(trace)}  algorithm: {kernel}  mean ms/frame: {ms:.4f}", file=sys.stderr)
    if a.truth:
        truth = GroundTruth.load(a.truth)
        for d in cfg.delta_ms:
            print(f"PPR(delta={d:g} ms): {ppr(trace, truth, d).rate:.4f}", file=sys.stderr)
        if truth.jumps:
            rep = repeat_skip_report(trace, truth)
            print(f"repeats/skips detected: {rep.detected}/{rep.total}", file=sys.stderr)
    return 0


def cmd_simulate(a, cfg: RunConfig) -> int:
    score = load_score(a.score)
    models = cfg.pitch_models()
    rates = ErrorRates() if a.errors == "on" else ErrorRates.none()
    rng = np.random.default_rng(cfg.seed)
    perf = inject_errors(score, rates, rng)
    jumps = []
    if not a.no_jumps:
        perf, gt = inject_repeats_skips(perf, a.p_jump, rng, hop_s=cfg.model.hop_s)
        jumps = gt.jumps
    Y, truth = render_features(perf, models, cfg.model.hop_s, rng, jumps)
    out = Path(a.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = {"seed": cfg.seed, "error_rates": rates.to_dict(), "p_jump": 0.0 if a.no_jumps else a.p_jump}
    save_performance(out / "performance.json", perf, meta)
    write_features(out / "features.jsonl", Y)
    truth.save(out / "truth.jsonl")
    if a.audio:
        write_wav(out / "audio.wav", render_audio(perf, rng, cfg.cqt.sample_rate), cfg.cqt.sample_rate)
    rate_text = " ".join(f"{k}={v:g}" for k, v in rates.to_dict().items())
    print(f"# error rates: {rate_text}")
    print(f"# seed: {cfg.seed}  notes: {len(perf)}  frames: {len(Y)}  repeats/skips: {len(jumps)}")
    return 0


def cmd_bench(a, cfg: RunConfig) -> int:
    algs = list(ALGORITHMS) if "all" in a.algorithms else list(dict.fromkeys(a.algorithms))
    if any(n < 1 for n in a.N) or a.frames < 2:
        raise UsageError("N must be positive and --frames at least 2")
    rep = bench(a.N, algs, pause_states=cfg.model.pause_states, backend=cfg.backend,
                seed=cfg.seed, n_frames=a.frames, models=cfg.pitch_models())
    _emit(rep.to_csv(), a.output)
    print(rep.table(), file=sys.stderr)
    return 0


def _read_labeled(path: str) -> list[tuple[int, np.ndarray]]:
    out = []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            out.append((int(obj["pitch"]), np.asarray(obj["y"], dtype=np.float64)))
        except (ValueError, KeyError, TypeError) as exc:
            raise EmissionError(f"line {n}: bad labeled frame ({exc})") from None
    return out


def cmd_train(a, cfg: RunConfig) -> int:
    data = _read_labeled(a.data)
    if not data:
        raise EmissionError("no labeled frames in input")
    models = train_pitch_models(data, cfg.floor, cfg.cqt)
    models.save(a.output)
    print(f"trained on {len(data)} frames, floor {cfg.floor:g}", file=sys.stderr)
    return 0


def cmd_synthmodel(a, cfg: RunConfig) -> int:
    synth_models(cfg.cqt, cfg.floor).save(a.output)
    return 0


COMMANDS = {
    "align": cmd_align,
    "simulate": cmd_simulate,
    "bench": cmd_bench,
    "train": cmd_train,
    "synthmodel": cmd_synthmodel,
}

_PARSE_ERRORS = (ScoreError, FeatureError, EmissionError, FileNotFoundError, IsADirectoryError, json.JSONDecodeError)
_RUNTIME_ERRORS = (InferenceError, SimulationError, EvalError, ModelError, OSError)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = RunConfig.from_args(args)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"scorefollow: input error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (ModelError, FeatureError, ValueError) as exc:
        print(f"scorefollow: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    t0 = time.perf_counter()
    try:
        code = COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"scorefollow: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _PARSE_ERRORS as exc:
        print(f"scorefollow: input error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except _RUNTIME_ERRORS as exc:
        print(f"scorefollow: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if args.command != "align" or not args.stdin:
        print(f"done in {time.perf_counter() - t0:.2f} s", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
