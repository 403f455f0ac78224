import itertools
import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from singsynth.bstf import ConfigMismatchError
from singsynth.duration import (
    DurationModel,
    DurationModelConfig,
    allocate,
    constrain_to_notes,
    evaluate_duration_loss,
    note_frames,
    predict_durations,
    quantize_syllable,
    quantize_to_frames,
    train_duration,
)
from singsynth.frontend import Vocab, ZStats, build_duration_inputs, du_stats

from conftest import make_utterance

HOP = 0.0125


def test_proportional_rescale():
    utt = make_utterance([(60, 1, "shuai4")])  # 0.5 s
    np.testing.assert_allclose(constrain_to_notes([0.12, 0.48], utt), [0.10, 0.40], atol=1e-12)


def test_single_phoneme_takes_note():
    utt = make_utterance([(60, 1, "a1")])
    assert constrain_to_notes([3.7], utt)[0] == 0.5


def test_rest_takes_note_verbatim():
    utt = make_utterance([(60, 1, "ma1"), (None, 0.5, ""), (62, 1, "a1")])
    out = constrain_to_notes([0.1, 0.1, 99.0, 0.1], utt)
    assert out[2] == 0.25


def test_zero_sum_falls_back_to_uniform(caplog):
    utt = make_utterance([(60, 0.6, "ma1")])  # 0.3 s
    np.testing.assert_allclose(constrain_to_notes([0.0, 0.0], utt), [0.15, 0.15])
    assert "uniformly" in caplog.text


def test_constrain_shape_checked():
    with pytest.raises(ValueError):
        constrain_to_notes([0.1], make_utterance([(60, 1, "ma1")]))


def test_quantize_examples():
    assert quantize_syllable([0.10, 0.40], 0.5, HOP) == [8, 32]
    assert quantize_syllable([0.006, 0.019], 0.025, HOP) == [1, 1]


def test_too_short_note_grows():
    assert quantize_syllable([0.004, 0.004], 0.0125, HOP) == [1, 1]


def test_ties_go_to_final():
    # 3 frames split evenly between two phonemes: the later one gets the extra frame.
    assert quantize_syllable([1.0, 1.0], 3 * HOP, HOP) == [1, 2]


def test_minimum_steals_from_longest():
    assert quantize_syllable([0.0001, 0.5], 0.5, HOP) == [1, 39]


def test_note_frames_rounding():
    assert note_frames(0.625) == 50
    assert note_frames(0.00625) == 1  # half a hop rounds up
    assert note_frames(0.0062) == 0


def _oracle_min_l1(quota, total):
    """Best L1 error over every floor/ceil assignment with the right total."""
    best = math.inf
    for bits in itertools.product(*[(math.floor(q), math.ceil(q)) for q in quota]):
        if sum(bits) == total:
            best = min(best, sum(abs(b - q) for b, q in zip(bits, quota)))
    return best


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0.01, 1.0), min_size=1, max_size=4), st.integers(4, 80))
def test_largest_remainder_matches_brute_force(weights, total):
    w = np.array(weights)
    quota = w / w.sum() * total
    frames = quantize_syllable(w, total * HOP, HOP)
    assert sum(frames) == total
    assert min(frames) >= 1
    if quota.min() >= 1:
        err = sum(abs(f - q) for f, q in zip(frames, quota))
        assert err == pytest.approx(_oracle_min_l1(quota, total), abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.001, 1.0), min_size=2, max_size=2), st.floats(0.05, 2.0), st.floats(0.01, 100.0))
def test_constraint_and_scale_invariance(raw, beats, scale):
    utt = make_utterance([(60, beats, "shuai4")])
    a = constrain_to_notes(raw, utt)
    b = constrain_to_notes(np.array(raw) * scale, utt)
    note = utt.syllables[0].note.duration_sec
    assert abs(a.sum() - note) < 1e-9
    assert a[0] / a[1] == pytest.approx(raw[0] / raw[1], rel=1e-9)
    np.testing.assert_array_equal(quantize_to_frames(a, utt), quantize_to_frames(b, utt))


def test_allocate_fills_phonemes():
    utt = make_utterance([(60, 1, "shuai4"), (62, 2, "a1")])
    done = allocate(utt, [0.12, 0.48, 0.3])
    assert [p.allocated_frames for p in done.phonemes] == [8, 32, 80]
    assert sum(p.allocated_sec for p in done.phonemes) == pytest.approx(1.5)


# --------------------------------------------------------------------------
# Model

def _dataset(utts, frames_fn):
    stats = du_stats(utts)
    data = []
    for u in utts:
        x = build_duration_inputs(u, stats)
        y = np.array(frames_fn(u), dtype=np.float64)
        data.append((x, y, np.ones(len(y))))
    return data, stats


def _split_30_70(u):
    out = []
    for s in u.syllables:
        n = note_frames(s.note.duration_sec)
        out += [round(0.3 * n), n - round(0.3 * n)] if len(s.phonemes) == 2 else [n]
    return out


def _config(**kw):
    return DurationModelConfig(input_dim=Vocab.from_lexicon().duration_input_dim, hidden_size=16, **kw)


def test_empty_dataset_rejected():
    with pytest.raises(ValueError):
        train_duration([], _config(), ZStats(0, 1))


def test_targets_must_be_positive():
    u = make_utterance([(60, 1, "ma1")])
    x = build_duration_inputs(u, ZStats(0.5, 1))
    with pytest.raises(ValueError):
        train_duration([(x, np.array([0.0, 40.0]), np.ones(2))], _config(), ZStats(0.5, 1))


def test_overfit_30_70_split():
    utts = [make_utterance([(60, b1, "ma1"), (62, b2, "shan3"), (64, 1, "a1")], uid=str(i))
            for i, (b1, b2) in enumerate([(1, 2), (2, 1), (0.5, 1.5), (1.5, 0.5)])]
    data, stats = _dataset(utts, _split_30_70)
    model = train_duration(data, _config(max_epochs=800, learning_rate=3e-3), stats)
    for x, y, _ in data:
        pred = predict_durations(x, model) / HOP
        assert np.all(np.abs(pred - y) <= 0.1 * y)


def test_predictions_positive_and_sized():
    model = DurationModel(__import__("singsynth.duration", fromlist=["DurationNet"]).DurationNet(_config()),
                          ZStats(0.5, 0.2))
    for n in (1, 2, 17):
        x = np.random.default_rng(n).normal(size=(n, model.config.input_dim))
        out = predict_durations(x, model)
        assert out.shape == (n,) and np.all(out > 0)
    with pytest.raises(ValueError):
        predict_durations(np.zeros((3, 5)), model)


def test_training_is_deterministic_and_checkpointed(tmp_path):
    utt = make_utterance([(60, 1, "ma1"), (62, 1, "a1")])
    data, stats = _dataset([utt], _split_30_70)
    a = train_duration(data, _config(max_epochs=20), stats)
    b = train_duration(data, _config(max_epochs=20), stats)
    assert a.losses == b.losses
    a.save(tmp_path / "d.ckpt")
    c = DurationModel.load(tmp_path / "d.ckpt", {"duration": vars(_config(max_epochs=20))})
    np.testing.assert_array_equal(predict_durations(data[0][0], a), predict_durations(data[0][0], c))
    assert c.stats == stats
    with pytest.raises(ConfigMismatchError):
        DurationModel.load(tmp_path / "d.ckpt", {"duration": vars(_config(max_epochs=21))})


def test_masked_phonemes_do_not_count():
    from singsynth.duration import duration_loss

    pred = torch.log(torch.tensor([[2.0, 5.0]]))
    target = torch.tensor([[2.0, 50.0]])
    assert float(duration_loss(pred, target, torch.tensor([[1.0, 0.0]]))) == 0.0
    assert evaluate_duration_loss  # exported


def test_single_utterance_overfits():
    utt = make_utterance([(60, 1, "ma1"), (62, 2, "shan3"), (None, 0.5, ""), (64, 1.5, "xiao3"), (65, 1, "a1")])
    data, stats = _dataset([utt], _split_30_70)
    cfg = DurationModelConfig(input_dim=Vocab.from_lexicon().duration_input_dim, max_epochs=500)
    model = train_duration(data, cfg, stats)
    assert evaluate_duration_loss(model, data) < 1e-3


def test_toy_overfit_reproduces_frames(toy_workdir):
    from singsynth import pipeline

    data, stats = pipeline.duration_dataset(toy_workdir)
    cfg = toy_workdir.duration_config(data[0][0].shape[1])
    model = train_duration(data, cfg, stats)
    rows = pipeline._rows(toy_workdir, "train-duration")
    hits = total = 0
    for row, (x, y, _) in zip(rows, data):
        utt = pipeline.load_utterance(toy_workdir.workdir / "utts" / f"{row.utterance}.json")
        got = np.array([p.allocated_frames for p in allocate(utt, predict_durations(x, model)).phonemes])
        hits += int(np.sum(np.abs(got - y) <= 1))
        total += len(y)
    assert hits / total >= 0.95
