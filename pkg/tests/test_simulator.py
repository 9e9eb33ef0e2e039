import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scorefollow.features import extract_features
from scorefollow.score import REST, Score
from scorefollow.simulator import (
    BREAK,
    ErrorRates,
    GroundTruth,
    Jump,
    NoteKind,
    PerformedNote,
    SimulationError,
    clean_performance,
    inject_errors,
    inject_repeats_skips,
    load_performance,
    random_score,
    render_audio,
    render_features,
    save_performance,
)


def test_default_error_rates():
    r = ErrorRates()
    assert (r.deletion, r.insertion) == (0.0034, 0.0245)
    assert (r.semitone, r.whole_tone, r.twelfth) == (0.0145, 0.0224, 0.0047)


def test_zero_rates_reproduce_the_score():
    score = random_score(30, seed=1)
    perf = inject_errors(score, ErrorRates.none(), seed=5)
    assert [n.played_pitch for n in perf] == score.pitches
    assert [n.score_event for n in perf] == list(range(30))
    assert all(n.kind is NoteKind.CORRECT for n in perf)
    ends = np.cumsum(score.durations_s())
    np.testing.assert_allclose([n.end_s for n in perf], ends)


def test_deletion_count_is_binomial():
    score = random_score(50, seed=0)
    rates = ErrorRates(deletion=0.0034, insertion=0, semitone=0, whole_tone=0, twelfth=0)
    deleted = sum(50 - len(inject_errors(score, rates, seed=s)) for s in range(1000))
    n, p = 50 * 1000, 0.0034
    assert abs(deleted - n * p) <= 3 * math.sqrt(n * p * (1 - p))


@pytest.mark.parametrize("pitch,expected", [(60, {41, 79}), (100, {81}), (21, {40})])
def test_twelfth_substitution(pitch, expected):
    rates = ErrorRates(deletion=0, insertion=0, semitone=0, whole_tone=0, twelfth=1.0)
    score = Score.from_pitches([pitch] * 50)
    perf = inject_errors(score, rates, seed=3)
    assert {n.played_pitch for n in perf} == expected
    assert all(n.kind is NoteKind.SUBSTITUTION for n in perf)


def test_insertions_follow_their_note_and_belong_to_it():
    rates = ErrorRates(deletion=0, insertion=1.0, semitone=0, whole_tone=0, twelfth=0)
    score = Score.from_pitches([60, 64, 67])
    perf = inject_errors(score, rates, seed=0)
    assert [n.kind for n in perf] == [NoteKind.CORRECT, NoteKind.INSERTION] * 3
    for note, ins in zip(perf[::2], perf[1::2]):
        assert abs(ins.played_pitch - note.played_pitch) in (1, 2)
        assert ins.duration_s == pytest.approx(0.5 * note.duration_s)
    truth = GroundTruth.from_performance(perf)
    assert truth.labels[int(perf[1].start_s / 0.02) + 1] == 0
    assert [e for _, e in truth.onsets] == [0, 1, 2]


def test_rests_are_never_substituted():
    rates = ErrorRates(deletion=0, insertion=1.0, semitone=1.0, whole_tone=0, twelfth=0)
    perf = inject_errors(Score.from_pitches([REST, REST]), rates, seed=0)
    assert [n.played_pitch for n in perf] == [REST, REST]


@pytest.mark.parametrize("kw", [{"deletion": -0.1}, {"insertion": 1.5}, {"semitone": 0.6, "whole_tone": 0.6}])
def test_invalid_rates_rejected(kw):
    with pytest.raises(SimulationError):
        ErrorRates(**kw)


@given(st.integers(0, 2**31))
@settings(max_examples=100, deadline=None)
def test_error_injection_is_seeded(seed):
    score = random_score(20, seed=7)
    assert inject_errors(score, seed=seed) == inject_errors(score, seed=seed)


@given(st.integers(0, 2**31), st.floats(0.0, 1.0))
@settings(max_examples=100, deadline=None)
def test_jump_bookkeeping(seed, p):
    score = random_score(12, seed=seed % 1000)
    perf = inject_errors(score, seed=seed)
    out, truth = inject_repeats_skips(perf, p, seed=seed)
    assert len(truth.jumps) >= 1
    breaks = [k for k, n in enumerate(out) if n.kind is NoteKind.BREAK]
    assert len(breaks) == len(truth.jumps)
    for k, jump in zip(breaks, truth.jumps):
        b = out[k]
        assert 0.5 <= b.duration_s <= 30.0
        assert b.played_pitch == REST
        assert jump.time_s == pytest.approx(b.end_s)
        assert not 0 <= jump.to_event - jump.from_event <= 2
        assert out[k - 1].score_event == jump.from_event
        assert out[k + 1].score_event == jump.to_event
    for a, b in zip(out, out[1:]):
        assert b.start_s == pytest.approx(a.end_s)
    assert np.all(truth.labels[[int(math.ceil(out[k].start_s / 0.02 + 1e-9)) for k in breaks]] == BREAK)


def test_no_jumps_without_probability_or_force():
    perf = clean_performance(random_score(20, seed=0))
    out, truth = inject_repeats_skips(perf, 0.0, seed=0, force=False)
    assert truth.jumps == [] and out == perf


def test_too_short_performance_rejected():
    perf = clean_performance(Score.from_pitches([60, 62]))
    with pytest.raises(SimulationError, match="too short"):
        inject_repeats_skips(perf, 0.5, seed=0)
    with pytest.raises(SimulationError):
        inject_repeats_skips(perf, 1.5, seed=0, force=False)


def test_ground_truth_frames_and_labels():
    perf = [PerformedNote(0, 60, 0.0, 0.5), PerformedNote(1, 62, 0.5, 1.01)]
    truth = GroundTruth.from_performance(perf, 0.02)
    assert truth.n_frames == 51
    assert truth.labels[:25].tolist() == [0] * 25
    assert truth.labels[25:].tolist() == [1] * 26
    assert truth.onsets == [(0.0, 0), (0.5, 1)]


def test_ground_truth_jsonl_round_trip(tmp_path):
    perf = clean_performance(random_score(15, seed=2))
    _, truth = inject_repeats_skips(perf, 0.2, seed=2)
    p = tmp_path / "truth.jsonl"
    truth.save(p)
    back = GroundTruth.load(p)
    np.testing.assert_array_equal(back.labels, truth.labels)
    assert back.jumps == truth.jumps and back.onsets == truth.onsets and back.hop_s == truth.hop_s
    with pytest.raises(SimulationError):
        GroundTruth.from_jsonl('{"t": 0, "event": 1}\n')


def test_performance_file_round_trip(tmp_path):
    perf = inject_errors(random_score(25, seed=3), seed=3)
    p = tmp_path / "perf.json"
    save_performance(p, perf, {"seed": 3})
    assert load_performance(p) == perf


def test_zero_variance_frames_equal_the_means(models):
    from scorefollow.emission import PitchModelSet

    flat = PitchModelSet({k: type(m)(k, m.mean, np.zeros_like(m.var)) for k, m in models.models.items()}, 0.0)
    perf = clean_performance(Score.from_pitches([60, REST, 67], 0.5))
    Y, truth = render_features(perf, flat, seed=0)
    assert Y.shape == (truth.n_frames, 85) == (38, 85)
    np.testing.assert_allclose(Y[0], models[60].mean, rtol=1e-12)
    np.testing.assert_allclose(Y[14], models[REST].mean, rtol=1e-12)
    np.testing.assert_allclose(Y[-1], models[67].mean, rtol=1e-12)


@given(st.integers(0, 2**31))
@settings(max_examples=100, deadline=None)
def test_rendered_frames_are_normalized_and_seeded(models, seed):
    perf = inject_errors(random_score(6, seed=seed % 97), seed=seed)
    Y, truth = render_features(perf, models, seed=seed)
    assert np.all(Y >= 0)
    np.testing.assert_allclose(Y.sum(axis=1), 1.0, rtol=1e-12)
    Y2, _ = render_features(perf, models, seed=seed)
    np.testing.assert_array_equal(Y, Y2)


def test_audio_pitch_and_silence():
    perf = [
        PerformedNote(0, 69, 0.0, 0.5),
        PerformedNote(None, REST, 0.5, 1.5, NoteKind.BREAK),
        PerformedNote(1, 60, 1.5, 2.0),
    ]
    x = render_audio(perf, seed=0)
    assert len(x) == 32000
    assert np.max(np.abs(x)) <= 0.3 + 1e-12
    Y = extract_features(x)
    assert int(np.argmax(Y[5])) == 36
    assert np.all(x[int(0.6 * 16000) : int(1.4 * 16000)] == 0.0)
    np.testing.assert_array_equal(render_audio(perf, seed=0), x)


def test_random_score_has_no_immediate_repeats():
    s = random_score(200, seed=4)
    assert len(s) == 200
    assert all(a != b for a, b in zip(s.pitches, s.pitches[1:]))
    assert all(55 <= p <= 84 for p in s.pitches)


def test_jump_dataclass_fields():
    j = Jump(1.5, 7, 2)
    assert (j.time_s, j.from_event, j.to_event) == (1.5, 7, 2)


@given(st.integers(0, 2**31))
@settings(max_examples=100, deadline=None)
def test_jump_injection_is_seeded(seed):
    perf = inject_errors(random_score(10, seed=seed % 50), seed=seed)
    a, ta = inject_repeats_skips(perf, 0.3, seed=seed)
    b, tb = inject_repeats_skips(perf, 0.3, seed=seed)
    assert a == b and ta.jumps == tb.jumps
    np.testing.assert_array_equal(ta.labels, tb.labels)
