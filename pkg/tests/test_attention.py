import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spacemesh.attention import CCA, SCA, AttentionConfig, zero_parameters
from spacemesh.checks import check_cca, check_sca
from spacemesh.tensor import Tensor


def rand(seed, *shape):
    return np.random.default_rng(seed).standard_normal(shape).astype(np.float32)


def test_zero_parameters_halve_input():
    x = rand(0, 2, 8, 5, 5)
    for m in (SCA(8, AttentionConfig(groups=4, sca_kernel=3)), CCA(8, AttentionConfig(groups=2, cca_reduction=2))):
        zero_parameters(m)
        np.testing.assert_array_equal(m(Tensor(x)).data, 0.5 * x)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**16), st.sampled_from([1, 2, 4]))
def test_gates_shrink_and_keep_shape(seed, groups):
    x = rand(seed, 2, 8, 6, 7) * 3
    cfg = AttentionConfig(groups=groups, sca_kernel=3, cca_reduction=2)
    rng = np.random.default_rng(seed)
    for m in (SCA(8, cfg, rng), CCA(8, cfg, rng)):
        y = m(Tensor(x)).data
        assert y.shape == x.shape
        assert np.all(np.abs(y) <= np.abs(x))
        nz = x != 0
        ratio = y[nz] / x[nz]
        assert np.all((ratio >= 0) & (ratio <= 1))


def test_sca_gate_constant_within_group():
    x = rand(1, 1, 8, 5, 5) + 5.0
    m = SCA(8, AttentionConfig(groups=2, sca_kernel=3), np.random.default_rng(1))
    ratio = (m(Tensor(x)).data / x).reshape(1, 2, 4, 5, 5)
    np.testing.assert_allclose(ratio, np.broadcast_to(ratio[:, :, :1], ratio.shape), atol=1e-6)
    assert ratio[0, 0, 0].std() > 0


def test_cca_gate_constant_in_space():
    x = rand(2, 2, 8, 5, 5) + 5.0
    m = CCA(8, AttentionConfig(groups=2, cca_reduction=2), np.random.default_rng(2))
    ratio = m(Tensor(x)).data / x
    np.testing.assert_allclose(ratio, np.broadcast_to(ratio[..., :1, :1], ratio.shape), atol=1e-6)


def test_cca_constant_input_uses_doubled_mlp():
    m = CCA(4, AttentionConfig(groups=1, cca_reduction=2), np.random.default_rng(3))
    v = np.arange(1.0, 5.0, dtype=np.float32).reshape(1, 4, 1, 1)
    x = np.broadcast_to(v, (1, 4, 3, 3)).copy()
    mlp = m._mlp(Tensor(v)).data
    np.testing.assert_allclose(m.gate(Tensor(x)).data, 1 / (1 + np.exp(-2 * mlp)), rtol=1e-6)


def test_sca_group_permutation_equivariance():
    cfg = AttentionConfig(groups=2, sca_kernel=3)
    m = SCA(4, cfg, np.random.default_rng(4))
    x = rand(4, 1, 4, 5, 5)
    y = m(Tensor(x)).data
    p = SCA(4, cfg)
    w, b = m.conv.weight.data, m.conv.bias.data
    p.conv.weight.data = w[[1, 0]].copy()
    p.conv.bias.data = b[[1, 0]].copy()
    xp = x[:, [2, 3, 0, 1]]
    np.testing.assert_allclose(p(Tensor(xp)).data, y[:, [2, 3, 0, 1]], atol=1e-6)


def test_bad_configs():
    with pytest.raises(ValueError):
        SCA(6, AttentionConfig(groups=4))
    with pytest.raises(ValueError):
        CCA(8, AttentionConfig(groups=2, cca_reduction=3))


@pytest.mark.parametrize("check", [check_sca, check_cca])
def test_grad_checks(check):
    assert check(np.random.default_rng(0)) < 1e-2
