import numpy as np
import pytest

from spacemesh.attention import AttentionConfig
from spacemesh.rearrange import pixel_shuffle
from spacemesh.spam_net import Backbone, BackboneConfig, SpamConfig, SpamNet, ToSpam, exchange_steps
from spacemesh.tensor import Tensor, no_grad


def test_cumulative_strides_and_exchange_stages():
    cfg = BackboneConfig()
    assert cfg.cumulative_strides() == (4, 4, 8, 16, 16)
    assert [exchange_steps(s, 4) for s in cfg.cumulative_strides()] == [1, 1, 0, 2, 2]
    assert SpamNet(cfg).exchange_stages == (0, 1, 3, 4)


def test_stride_16_exchange_has_two_shuffle_sca_steps():
    net = SpamNet()
    path = net.to_spam[net.exchange_stages.index(3)]
    assert path.steps == 2 and len(path.gates) == 2


def test_feature_shapes():
    net = SpamNet(rng=np.random.default_rng(0)).eval()
    x = Tensor(np.random.default_rng(0).standard_normal((2, 3, 64, 64)).astype(np.float32))
    with no_grad():
        feats, m = net(x)
    assert [f.shape for f in feats] == [(2, 16, 16, 16), (2, 16, 16, 16), (2, 32, 8, 8), (2, 64, 4, 4), (2, 64, 4, 4)]
    assert m.shape == (2, 8, 64, 64)


def test_spam_resolution_at_every_stage():
    net = SpamNet(rng=np.random.default_rng(1)).eval()
    x = Tensor(np.random.default_rng(1).standard_normal((1, 3, 32, 32)).astype(np.float32))
    seen = []
    for b in net.spam_blocks:
        orig = b.forward
        b.forward = lambda t, orig=orig: seen.append(t.shape) or orig(t)
    with no_grad():
        net(x)
    assert all(s[2:] == (32, 32) for s in seen) and len(seen) == 5


def test_zero_exchange_recovers_plain_backbone():
    rng = np.random.default_rng(2)
    net = SpamNet(rng=rng).eval()
    plain = Backbone(BackboneConfig())
    for (_, a), (_, b) in zip(net.backbone.named_state(), plain.named_state()):
        b.data = a.data.copy()
    plain.eval()
    net.zero_exchange()
    x = Tensor(rng.standard_normal((2, 3, 32, 32)).astype(np.float32))
    with no_grad():
        feats, _ = net(x)
        ref = plain(x)
    for a, b in zip(feats, ref):
        assert np.array_equal(a.data, b.data)


def test_batch_independence_in_eval():
    rng = np.random.default_rng(3)
    net = SpamNet(rng=rng).eval()
    x = rng.standard_normal((1, 3, 32, 32)).astype(np.float32)
    with no_grad():
        one, m1 = net(Tensor(x))
        two, m2 = net(Tensor(np.concatenate([x, x])))
    np.testing.assert_allclose(two[-1].data[1:], one[-1].data, atol=1e-5)
    np.testing.assert_allclose(m2.data[:1], m1.data, atol=1e-5)


def test_to_spam_channel_bookkeeping():
    path = ToSpam(64, 8, 4, 2, True, AttentionConfig(), np.random.default_rng(4))
    assert path.adapter.weight.shape[0] == 8 * 256
    y = path(Tensor(np.ones((1, 64, 2, 2), np.float32)))
    assert y.shape == (1, 8, 32, 32)


def test_rejects_indivisible_input():
    with pytest.raises(ValueError):
        SpamNet()(Tensor(np.ones((1, 3, 40, 40), np.float32)))


def test_spam_disabled_returns_backbone_only():
    net = SpamNet(spam_cfg=SpamConfig(enabled=False))
    feats, m = net(Tensor(np.ones((1, 3, 32, 32), np.float32)))
    assert m is None and feats[-1].shape == (1, 64, 2, 2)
