import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spacemesh import functional as F
from spacemesh.checks import check_metrocon
from spacemesh.metrocon import ASPP, MetroCon, build_grid, count_params, parse_rates, parity_report
from spacemesh.nn import Conv2d
from spacemesh.tensor import Tensor


@pytest.mark.parametrize(
    "rates,branches,depth",
    [((6, 12, 18), 9, 144), (tuple(range(1, 10)), 81, 16), (tuple(range(1, 19)), 324, 4)],
)
def test_tabulated_grids(rates, branches, depth):
    g = build_grid(rates, rates)
    assert (g.branches, g.depth, g.total_channels) == (branches, depth, 1296)


def test_rounding_rule_and_order():
    g = build_grid(range(1, 7), range(1, 7))
    assert (g.branches, g.depth, g.total_channels) == (36, 36, 1296)
    assert build_grid((1, 2), (1, 2)).pairs == [(1, 1), (1, 2), (2, 1), (2, 2)]
    # a non-default budget ignores the table
    assert build_grid((6, 12, 18), (6, 12, 18), 1281).depth == 142


def test_grid_errors():
    for args in (((), (1,)), ((0, 1), (1,)), ((1, 1), (2,))):
        with pytest.raises(ValueError):
            build_grid(*args)


def test_parse_rates():
    assert parse_rates("1..4") == (1, 2, 3, 4)
    assert parse_rates("6,12,18") == (6, 12, 18)


@settings(max_examples=15, deadline=None)
@given(st.lists(st.integers(1, 6), min_size=1, max_size=3, unique=True),
       st.lists(st.integers(1, 6), min_size=1, max_size=3, unique=True),
       st.integers(0, 2**16))
def test_bank_matches_per_branch_conv(rv, rh, seed):
    rng = np.random.default_rng(seed)
    grid = build_grid(rv, rh, total_budget=2 * len(rv) * len(rh))
    head = MetroCon.from_grid(3, grid, rng)
    x = Tensor(rng.standard_normal((2, 3, 5, 6)).astype(np.float32))
    bank = F.dilated_conv_bank(x, head.weight, head.pairs).data
    for k in range(grid.branches):
        ref = head.branch_conv(k)(x).data
        assert ref.shape[2:] == x.shape[2:]
        np.testing.assert_allclose(bank[:, k * grid.depth : (k + 1) * grid.depth], ref, atol=1e-5)


def test_confidence_zero_and_scaling():
    rng = np.random.default_rng(1)
    head = MetroCon(4, [(1, 1), (1, 2), (3, 1)], 2, rng).eval()
    x = Tensor(rng.standard_normal((1, 4, 6, 6)).astype(np.float32))
    base = head(x).data
    head.confidence.data[1] = 0.0
    assert not head(x).data[:, 2:4].any()
    head.confidence.data[1] = 4.0
    y = head(x).data
    assert np.array_equal(y[:, 2:4], 4.0 * base[:, 2:4])
    assert np.array_equal(y[:, :2], base[:, :2]) and np.array_equal(y[:, 4:], base[:, 4:])


def test_delta_kernel_branch():
    rng = np.random.default_rng(2)
    head = MetroCon(2, [(1, 1)], 2, rng).eval()
    head.weight.data[:] = 0
    head.weight.data[0, 0, 0, 1, 1] = 1.0
    head.weight.data[0, 1, 1, 1, 1] = 1.0
    x = rng.standard_normal((1, 2, 4, 4)).astype(np.float32)
    expect = np.maximum(x / np.sqrt(1 + 1e-5), 0)
    np.testing.assert_allclose(head(Tensor(x)).data, expect, rtol=1e-6)


def test_param_counts():
    assert Conv2d(4, 4, 3).weight.data.size == 144
    g = build_grid((1, 2, 3), (1, 2), total_budget=12)
    head = MetroCon.from_grid(5, g)
    assert head.confidence.data.size == 6
    assert count_params(head) == 6 * 2 * 5 * 9 + 2 * 12 + 6


def test_parity_report_rows():
    rows = parity_report(64, build_grid(range(1, 19), range(1, 19)))
    metro, aspp = rows
    assert (metro["branches"], metro["depth"], metro["concat"]) == (324, 4, 1296)
    assert aspp["concat"] == 1280 and aspp["params"] == count_params(ASPP(64))


def test_aspp_shapes_and_pool_branch():
    rng = np.random.default_rng(3)
    aspp = ASPP(4, width=8, rng=rng).eval()
    assert aspp.concat_channels == 40
    x = Tensor(np.full((1, 4, 5, 5), 0.3, np.float32))
    pooled = aspp.branches(x)[-1].data
    assert np.all(pooled == pooled[:, :, :1, :1])
    y = aspp(Tensor(rng.standard_normal((2, 4, 5, 7)).astype(np.float32)))
    assert y.shape == (2, 8, 5, 7)


def test_grad_check_2x2_grid():
    assert check_metrocon(np.random.default_rng(0)) < 1e-2


def test_without_branch_drops_channels():
    rng = np.random.default_rng(4)
    head = MetroCon(3, [(1, 1), (2, 2), (1, 3)], 2, rng).eval()
    x = Tensor(rng.standard_normal((1, 3, 5, 5)).astype(np.float32))
    full = head(x).data
    cut = head.without_branch(1)(x).data
    np.testing.assert_allclose(cut, np.concatenate([full[:, :2], full[:, 4:]], axis=1), atol=1e-6)
