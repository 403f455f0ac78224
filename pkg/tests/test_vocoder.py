import math

import numpy as np
import pytest
import torch

from singsynth.bstf import ConfigMismatchError
from singsynth.evaluation import extract_mel
from singsynth.vocoder import (
    ConvBlock,
    ConditionNet,
    SampleState,
    Vocoder,
    VocoderConfig,
    WaveRNN,
    combine_sample,
    dequantize_audio,
    quantize_audio,
    split_sample,
    step_distributions,
    teacher_forced_loss,
    train_vocoder,
    upsample_condition,
)

SMALL = dict(gru_size=32, condition_channels=16, num_conv_blocks=2, head_size=32, batch_size=8, seq_frames=1)


@pytest.mark.parametrize("s,pair", [(0, (0, 0)), (65535, (255, 255)), (43981, (171, 205))])
def test_split_examples(s, pair):
    assert split_sample(s) == pair
    assert combine_sample(*pair) == s


@pytest.mark.parametrize("bad", [-1, 65536])
def test_split_range(bad):
    with pytest.raises(ValueError):
        split_sample(bad)


def test_combine_range():
    with pytest.raises(ValueError):
        combine_sample(256, 0)
    with pytest.raises(ValueError):
        combine_sample(0, -1)


def test_quantisation_range():
    q = quantize_audio(np.array([-1.0, -0.5, 0.0, 0.99999, 1.0, 3.0]))
    assert q.min() >= 0 and q.max() <= 65535
    back = dequantize_audio(np.arange(65536))
    assert back.min() == -1.0 and back.max() < 1.0


def test_zero_conv_block_scales_input():
    block = ConvBlock(4, 3, 1)
    with torch.no_grad():
        block.conv.weight.zero_()
    x = torch.randn(2, 4, 8)
    torch.testing.assert_close(block(x), x * 0.7071067811865476)


def test_closed_gate_halves_linear_half():
    block = ConvBlock(4, 3, 1)
    x = torch.randn(1, 4, 8)
    a = block.conv(x)[:, :4]
    torch.testing.assert_close(block(x), (x + 0.5 * a) * math.sqrt(0.5))


def test_receptive_field():
    cfg = VocoderConfig(num_conv_blocks=4)
    assert cfg.dilations == [1, 2, 4, 8]
    assert cfg.receptive_field == 31


def test_condition_keeps_length_and_locality():
    torch.manual_seed(0)
    cfg = VocoderConfig(num_conv_blocks=4, condition_channels=8)
    net = ConditionNet(cfg).double()
    mel = torch.randn(1, 60, 80, dtype=torch.float64)
    with torch.no_grad():
        base = net(mel)
        assert net(mel[:, :10]).shape == (1, 10, 8)
        bumped = mel.clone()
        bumped[0, 30] += 1.0
        changed = (net(bumped) - base).abs().amax(-1)[0] > 0
    half = (cfg.receptive_field - 1) // 2
    idx = np.flatnonzero(changed.numpy())
    assert idx.min() >= 30 - half and idx.max() <= 30 + half
    assert changed[30]


@pytest.mark.parametrize("start", [0, 5, 24, 58])
def test_window_with_margin_matches_full_condition(start):
    torch.manual_seed(1)
    cfg = VocoderConfig(num_conv_blocks=4, condition_channels=8)
    net = ConditionNet(cfg).double()
    with torch.no_grad():
        for p in net.parameters():
            p.add_(0.1 * torch.randn_like(p))
        mel = torch.randn(1, 60, 80, dtype=torch.float64)
        margin = cfg.receptive_field // 2
        lo, hi = max(0, start - margin), min(60, start + 2 + margin)
        window = net(mel[:, lo:hi])[0, start - lo:start - lo + 2]
        assert torch.allclose(window, net(mel)[0, start:start + 2], atol=1e-12)


def test_upsample_repeats_rows():
    cond = np.array([[1.0], [2.0]])
    assert upsample_condition(cond, 3)[:, 0].tolist() == [1, 1, 1, 2, 2, 2]
    t = upsample_condition(torch.randn(1, 5, 4), 300)
    assert t.shape == (1, 1500, 4)
    assert torch.equal(t[0, 599], t[0, 300])


def test_fresh_model_is_uniform():
    cfg = VocoderConfig(**SMALL)
    net = WaveRNN(cfg)
    bias = net.condition_bias(torch.zeros(1, 1, 80))[0, 0].detach().numpy()
    p_c, p_f, state = step_distributions(net, SampleState(np.zeros(cfg.gru_size, dtype=np.float32)), bias, coarse=7)
    assert abs(p_c.sum() - 1) < 1e-6 and abs(p_f.sum() - 1) < 1e-6
    np.testing.assert_allclose(p_c, 1 / 256, rtol=0, atol=1e-12)
    np.testing.assert_allclose(p_f, 1 / 256, rtol=0, atol=1e-12)
    assert state.coarse == 7


def test_initial_loss_is_two_uniform_softmaxes():
    voc = Vocoder(WaveRNN(VocoderConfig(**SMALL)))
    rng = np.random.default_rng(0)
    loss = teacher_forced_loss(voc, rng.normal(size=(3, 80)), rng.integers(0, 65536, 900))
    assert abs(loss - 2 * math.log(256)) < 1e-6


def test_sample_state_validated():
    with pytest.raises(ValueError):
        SampleState(np.zeros(4), coarse=256)


def _jittered_vocoder(seed=0):
    torch.manual_seed(seed)
    net = WaveRNN(VocoderConfig(**SMALL))
    with torch.no_grad():
        for p in net.parameters():
            p.add_(0.3 * torch.randn_like(p))
    return Vocoder(net)


def test_generation_length_range_and_determinism():
    voc = _jittered_vocoder()
    mel = np.random.default_rng(1).normal(size=(4, 80))
    a = voc.generate(mel, "sample", seed=3)
    assert a.shape == (1200,)
    assert a.min() >= -1.0 and a.max() < 1.0
    assert np.array_equal(a, voc.generate(mel, "sample", seed=3))
    assert not np.array_equal(a, voc.generate(mel, "sample", seed=4))
    assert np.array_equal(voc.generate(mel, "argmax"), voc.generate(mel, "argmax", seed=9))
    with pytest.raises(ValueError):
        voc.generate(mel, "beam")
    with pytest.raises(ValueError):
        voc.generate(np.zeros((4, 79)))


def test_step_distributions_reproducible():
    voc = _jittered_vocoder()
    bias = voc.net.condition_bias(torch.zeros(1, 1, 80))[0, 0].detach().numpy()

    def run(seed):
        rng = np.random.default_rng(seed)
        state = SampleState(np.zeros(32, dtype=np.float32))
        out = []
        for _ in range(50):
            _, _, state = step_distributions(voc.net, state, bias, rng=rng)
            out.append(combine_sample(state.coarse, state.fine))
        return out

    assert run(0) == run(0)


def test_pair_length_mismatch():
    voc = Vocoder(WaveRNN(VocoderConfig(**SMALL)))
    with pytest.raises(ValueError, match="mismatch"):
        teacher_forced_loss(voc, np.zeros((3, 80)), np.zeros(1500, dtype=np.int64))
    # within one frame is padded, not an error
    teacher_forced_loss(voc, np.zeros((3, 80)), np.full(700, 32768))


def _clips():
    sr, n = 24000, 4800
    a = 0.03 * np.random.default_rng(0).standard_normal(n)
    b = 0.4 * np.sin(2 * np.pi * 200 * np.arange(n) / sr)
    return [(extract_mel(w)[: n // 300], quantize_audio(w)) for w in (a, b)]


def test_loss_falls_over_first_steps():
    v = train_vocoder(_clips(), VocoderConfig(**SMALL), steps=100, log_every=0)
    blocks = np.array(v.losses).reshape(5, 20).mean(1)
    assert np.all(np.diff(blocks) < 0), blocks


def test_mismatched_pairs_train_worse():
    (ma, sa), (mb, sb) = _clips()
    cfg = VocoderConfig(**SMALL, learning_rate=3e-3)
    matched = train_vocoder([(ma, sa), (mb, sb)], cfg, steps=120, log_every=0)
    shuffled = train_vocoder([(ma, sb), (mb, sa)], cfg, steps=120, log_every=0)
    assert np.mean(matched.losses[-20:]) < np.mean(shuffled.losses[-20:])


def test_checkpoint_round_trip(tmp_path):
    voc = _jittered_vocoder()
    voc.save(tmp_path / "v.ckpt")
    cfg = vars(VocoderConfig(**SMALL))
    again = Vocoder.load(tmp_path / "v.ckpt", {"vocoder": cfg})
    mel = np.zeros((1, 80))
    assert np.array_equal(voc.generate(mel, seed=1), again.generate(mel, seed=1))
    with pytest.raises(ConfigMismatchError):
        Vocoder.load(tmp_path / "v.ckpt", {"vocoder": {**cfg, "gru_size": 64}})


def test_empty_dataset():
    with pytest.raises(ValueError):
        train_vocoder([], VocoderConfig(**SMALL))
