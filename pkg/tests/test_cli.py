import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from scorefollow.cli import EXIT_PARSE, EXIT_RUNTIME, EXIT_USAGE, main
from scorefollow.emission import PitchModelSet
from scorefollow.features import read_features
from scorefollow.simulator import GroundTruth

DATA = Path(__file__).resolve().parents[1] / "data"
SCORE = str(DATA / "example_score.json")


def write_score(path, pitches):
    path.write_text(json.dumps({"tempo_bpm": 120, "events": [{"pitch": p, "beats": 1} for p in pitches]}))
    return str(path)


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", SCORE, "--out-dir", str(out), "--seed", "3"]) == 0
    return out


def test_simulate_writes_all_outputs(sim_dir, capsys):
    for name in ("performance.json", "features.jsonl", "truth.jsonl"):
        assert (sim_dir / name).is_file()
    truth = GroundTruth.load(sim_dir / "truth.jsonl")
    assert len(read_features(sim_dir / "features.jsonl")) == truth.n_frames
    assert len(truth.jumps) >= 1


def test_simulate_prints_error_rates(tmp_path, capsys):
    main(["simulate", SCORE, "--out-dir", str(tmp_path), "--no-jumps"])
    out = capsys.readouterr().out
    assert "deletion=0.0034" in out and "insertion=0.0245" in out
    assert "# seed: 0" in out


def test_simulate_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["simulate", SCORE, "--out-dir", str(d), "--seed", "9", "--audio"]) == 0
    for name in ("performance.json", "features.jsonl", "truth.jsonl", "audio.wav"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_simulate_without_errors_plays_the_score(tmp_path):
    main(["simulate", SCORE, "--out-dir", str(tmp_path), "--errors", "off", "--no-jumps"])
    doc = json.loads((tmp_path / "performance.json").read_text())
    score = json.loads(Path(SCORE).read_text())
    assert len(doc["notes"]) == len(score["events"])
    assert all(n["kind"] == "correct" for n in doc["notes"])


@pytest.mark.parametrize("algorithm", ["baseline", "nobreak", "break"])
def test_align_features_with_truth(sim_dir, tmp_path, capsys, algorithm):
    out = tmp_path / "trace.jsonl"
    code = main(["align", SCORE, "--features", str(sim_dir / "features.jsonl"), "--truth",
                 str(sim_dir / "truth.jsonl"), "--algorithm", algorithm, "-o", str(out), "--delta-ms", "300", "2000"])
    assert code == 0
    err = capsys.readouterr().err
    assert "PPR(delta=300 ms)" in err and "PPR(delta=2000 ms)" in err
    lines = out.read_text().splitlines()
    assert len(lines) == GroundTruth.load(sim_dir / "truth.jsonl").n_frames
    assert set(json.loads(lines[0])) == {"t", "time_s", "event", "bottom", "gap", "suspended"}


def test_align_streams_stdin(sim_dir):
    feats = (sim_dir / "features.jsonl").read_text().splitlines()[:20]
    proc = subprocess.run(
        [sys.executable, "-m", "scorefollow.cli", "align", SCORE, "--stdin"],
        input="\n".join(feats) + "\n", capture_output=True, text=True, timeout=60,
    )
    assert proc.returncode == 0, proc.stderr
    rows = [json.loads(x) for x in proc.stdout.splitlines()]
    assert [r["t"] for r in rows] == list(range(20))


def test_align_audio(tmp_path, capsys):
    assert main(["simulate", SCORE, "--out-dir", str(tmp_path), "--audio", "--no-jumps", "--errors", "off"]) == 0
    assert main(["align", SCORE, "--audio", str(tmp_path / "audio.wav"), "--truth",
                 str(tmp_path / "truth.jsonl"), "-o", str(tmp_path / "t.jsonl")]) == 0
    err = capsys.readouterr().err
    rate = float(err.split("PPR(delta=300 ms): ")[1].split()[0])
    assert rate >= 0.8


def test_missing_score_is_a_parse_error(tmp_path):
    assert main(["align", str(tmp_path / "nope.json"), "--features", "x"]) == EXIT_PARSE


def test_malformed_score_is_a_parse_error(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{ not json")
    assert main(["simulate", str(p), "--out-dir", str(tmp_path)]) == EXIT_PARSE


def test_bad_feature_dimension_is_a_parse_error(tmp_path):
    f = tmp_path / "y.jsonl"
    f.write_text('{"t": 0, "y": [1.0, 0.0]}\n')
    assert main(["align", SCORE, "--features", str(f)]) == EXIT_PARSE


@pytest.mark.parametrize(
    "argv",
    [
        ["align", SCORE, "--features", "x", "--log10-s", "0.5"],
        ["align", SCORE, "--features", "x", "--log10-s", "abc"],
        ["align", SCORE, "--features", "x", "--algorithm", "viterbi"],
        ["align", SCORE],
        ["simulate", SCORE, "--out-dir", "x", "--p-jump", "2"],
        ["bench", "--frames", "1"],
        ["frobnicate"],
    ],
)
def test_usage_errors(argv, capsys):
    with pytest.raises(SystemExit) as info:
        code = main(argv)
        raise SystemExit(code)
    assert info.value.code == EXIT_USAGE


def test_too_short_score_is_a_runtime_error(tmp_path):
    score = write_score(tmp_path / "s.json", [60, 62])
    assert main(["simulate", score, "--out-dir", str(tmp_path / "o")]) == EXIT_RUNTIME


def test_log10_s_accepts_minus_infinity(sim_dir, tmp_path):
    assert main(["align", SCORE, "--features", str(sim_dir / "features.jsonl"), "--log10-s=-inf",
                 "-o", str(tmp_path / "t.jsonl")]) == 0


def test_config_file_and_flag_override(sim_dir, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"log10_s": -20, "pause_states": True}))
    assert main(["align", SCORE, "--features", str(sim_dir / "features.jsonl"), "--config", str(cfg),
                 "--log10-s", "-50", "-o", str(tmp_path / "t.jsonl")]) == 0
    cfg.write_text(json.dumps({"bogus": 1}))
    assert main(["align", SCORE, "--features", "x", "--config", str(cfg)]) == EXIT_USAGE
    assert main(["align", SCORE, "--features", "x", "--config", str(tmp_path / "none.json")]) == EXIT_PARSE


def test_help_lists_the_shared_flags(capsys):
    with pytest.raises(SystemExit) as info:
        main(["align", "--help"])
    assert info.value.code == 0
    text = capsys.readouterr().out
    for flag in ("--algorithm", "--log10-s", "--pitch-error-log10-C", "--floor", "--delta-ms", "--pause-states", "--seed"):
        assert flag in text


def test_bench_csv(capsys):
    assert main(["bench", "--N", "10", "20", "--frames", "3", "--algorithms", "nobreak", "break"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("N,algorithm,mean_frame_time_s")
    assert len(lines) == 5


def test_synthmodel_and_train(tmp_path, models):
    path = tmp_path / "m.json"
    assert main(["synthmodel", "-o", str(path)]) == 0
    back = PitchModelSet.load(path)
    np.testing.assert_array_equal(back.means, models.means)

    rng = np.random.default_rng(0)
    frames = rng.dirichlet(np.ones(85), 4)
    data = tmp_path / "d.jsonl"
    data.write_text("".join(json.dumps({"pitch": 60, "y": y.tolist()}) + "\n" for y in frames))
    out = tmp_path / "t.json"
    assert main(["train", str(data), "-o", str(out), "--floor", "1e-6"]) == 0
    trained = PitchModelSet.load(out)
    np.testing.assert_allclose(trained[60].mean, frames.mean(axis=0), rtol=1e-12)
    np.testing.assert_allclose(trained[60].var, np.maximum(frames.var(axis=0), 1e-6), rtol=1e-12)
    data.write_text("not json\n")
    assert main(["train", str(data), "-o", str(out)]) == EXIT_PARSE
