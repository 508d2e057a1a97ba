"""Loss oracles: per-cell BCE, proposal CE, consistency MSE, kernel MMD."""

import math

import numpy as np
import pytest

from tablemt.autograd import Tensor
from tablemt.corpus import Polarity
from tablemt.detector import Mode, RegionProposal
from tablemt.losses import (
    LossBreakdown,
    MmdConfig,
    RegionFeatures,
    loss_mmd_cell_level,
    loss_mmd_region_level,
    loss_rpc,
    loss_rpn,
    loss_uns,
    match_gold,
    mmd,
    total_loss,
)
from tablemt.tagging import GoldRegion, RegionClass


def test_loss_rpn_perfect_prediction_near_zero():
    y = np.array([[1, 0], [0, 1]])
    eps = 1e-9
    p = Tensor(np.where(y == 1, 1 - eps, eps).astype(float))
    out = loss_rpn(p, p, y, y)
    assert out.item() < 1e-8


def test_loss_rpn_half_everywhere_is_ln2():
    y = np.array([[1, 0], [1, 1]])
    p = Tensor(np.full((2, 2), 0.5))
    assert loss_rpn(p, p, y, 1 - y).item() == pytest.approx(math.log(2), rel=1e-12)


def test_loss_rpn_matches_loop_oracle():
    rng = np.random.default_rng(0)
    pb = rng.uniform(0.05, 0.95, size=(3, 3))
    pe = rng.uniform(0.05, 0.95, size=(3, 3))
    yb = rng.integers(0, 2, size=(3, 3))
    ye = rng.integers(0, 2, size=(3, 3))
    total = 0.0
    for p, y in ((pb, yb), (pe, ye)):
        for i in range(3):
            for j in range(3):
                total += -(y[i, j] * math.log(p[i, j]) + (1 - y[i, j]) * math.log(1 - p[i, j]))
    expected = total / 18.0
    assert loss_rpn(Tensor(pb), Tensor(pe), yb, ye).item() == pytest.approx(expected, rel=1e-12)


def test_loss_rpn_shape_mismatch():
    with pytest.raises(ValueError):
        loss_rpn(Tensor(np.ones((2, 2))), Tensor(np.ones((2, 2))), np.ones((3, 3)), np.ones((2, 2)))


def _logp(probs):
    return Tensor(np.log(probs))


def test_loss_rpc_certain_gold_is_zero():
    assert loss_rpc(_logp(np.array([[1.0, 0, 0, 0]]) + 1e-300), np.array([0])).item() < 1e-12


def test_loss_rpc_uniform_is_ln4():
    lp = _logp(np.full((2, 4), 0.25))
    assert loss_rpc(lp, np.array([1, 3])).item() == pytest.approx(math.log(4), rel=1e-12)


def test_loss_rpc_empty_is_zero():
    assert loss_rpc(None, np.array([], dtype=int)).item() == 0.0


def test_loss_rpc_matches_loop_oracle():
    rng = np.random.default_rng(1)
    probs = rng.dirichlet(np.ones(4), size=3)
    targets = np.array([2, 0, 3])
    expected = -sum(math.log(probs[i, targets[i]]) for i in range(3)) / 3
    assert loss_rpc(_logp(probs), targets).item() == pytest.approx(expected, rel=1e-12)


def _gold(a, b, c, d, cls=RegionClass.POS):
    return GoldRegion(a, b, c, d, cls)


def test_match_gold_exact_match_and_invalid():
    props = [RegionProposal(1, 4, 2, 4, 0.9, 0.9), RegionProposal(0, 0, 2, 4, 0.9, 0.9)]
    out, targets = match_gold(props, [_gold(1, 4, 2, 4)], Mode.ASTE)
    assert list(targets) == [int(RegionClass.POS), int(RegionClass.INVALID)]
    assert len(out) == 2  # gold already present, nothing appended


def test_match_gold_injects_missing_gold_once():
    props = [RegionProposal(0, 0, 0, 0, 0.9, 0.9)]
    out, targets = match_gold(props, [_gold(1, 1, 2, 2, RegionClass.NEG)], Mode.ASTE)
    assert len(out) == 2
    assert out[1].rect() == (1, 1, 2, 2)
    assert list(targets) == [int(RegionClass.INVALID), int(RegionClass.NEG)]
    # without injection the gold is not appended
    out2, targets2 = match_gold(props, [_gold(1, 1, 2, 2)], Mode.ASTE, inject=False)
    assert len(out2) == 1 and list(targets2) == [int(RegionClass.INVALID)]


def test_match_gold_aope_targets_binary():
    props = [RegionProposal(1, 1, 2, 2, 0.9, 0.9), RegionProposal(0, 0, 0, 0, 0.9, 0.9)]
    _, targets = match_gold(props, [_gold(1, 1, 2, 2)], Mode.AOPE)
    assert list(targets) == [0, 1]


def test_loss_uns_identical_zero_and_direct_case():
    p = np.array([[1.0, 0.0, 0.0, 0.0]])
    assert loss_uns(Tensor(p), p).item() == 0.0
    student = Tensor(np.array([[1.0, 0.0, 0.0, 0.0]]))
    teacher = np.array([[0.0, 1.0, 0.0, 0.0]])
    assert loss_uns(student, teacher).item() == pytest.approx(2.0, rel=1e-12)


def test_loss_uns_matches_loop_oracle():
    rng = np.random.default_rng(2)
    s = rng.dirichlet(np.ones(4), size=3)
    t = rng.dirichlet(np.ones(4), size=3)
    expected = sum(((s[i] - t[i]) ** 2).sum() for i in range(3)) / 3
    assert loss_uns(Tensor(s), t).item() == pytest.approx(expected, rel=1e-12)


def test_loss_uns_empty_zero():
    assert loss_uns(None, np.zeros((0, 4))).item() == 0.0


# -- MMD ---------------------------------------------------------------------


def oracle_mmd(x, y, sigma=None):
    """Independent double-loop kernel-sum estimator."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if sigma is None:
        z = np.concatenate([x, y], axis=0)
        dists = []
        for i in range(len(z)):
            for j in range(i + 1, len(z)):
                dists.append(math.sqrt(((z[i] - z[j]) ** 2).sum()))
        sigma = float(np.median(dists)) if dists else 1.0
        if sigma <= 0.0:
            sigma = 1.0

    def k(u, v):
        return math.exp(-((u - v) ** 2).sum() / (2 * sigma**2))

    xx = sum(k(a, b) for a in x for b in x) / (len(x) ** 2)
    yy = sum(k(a, b) for a in y for b in y) / (len(y) ** 2)
    xy = sum(k(a, b) for a in x for b in y) / (len(x) * len(y))
    return max(xx + yy - 2 * xy, 0.0)


def test_mmd_paper_style_fixed_bandwidth_example():
    out = mmd(np.array([[0.0]]), np.array([[2.0]]), MmdConfig(bandwidth=1.0))
    expected = 1 + 1 - 2 * math.exp(-2.0)
    assert out.item() == pytest.approx(expected, rel=1e-12)
    assert out.item() == pytest.approx(1.7293, abs=1e-4)


def test_mmd_identical_sets_zero():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(5, 4))
    assert mmd(x, x.copy()).item() == 0.0


def test_mmd_symmetry_and_nonnegativity():
    rng = np.random.default_rng(4)
    for _ in range(25):
        x = rng.normal(size=(int(rng.integers(1, 6)), 3))
        y = rng.normal(size=(int(rng.integers(1, 6)), 3))
        fwd = mmd(x, y).item()
        rev = mmd(y, x).item()
        assert fwd == pytest.approx(rev, abs=1e-14)
        assert fwd >= 0.0


def test_mmd_matches_oracle_100_random_pairs():
    rng = np.random.default_rng(5)
    for _ in range(100):
        dim = int(rng.integers(1, 17))
        x = rng.normal(size=(int(rng.integers(1, 9)), dim))
        y = rng.normal(size=(int(rng.integers(1, 9)), dim))
        assert abs(mmd(x, y).item() - oracle_mmd(x, y)) < 1e-10


def test_mmd_empty_set_contract():
    assert mmd(np.zeros((0, 3)), np.ones((2, 3))).item() == 0.0
    assert mmd([], [Tensor(np.ones(3))]).item() == 0.0


def test_mmd_median_fallback_when_degenerate():
    x = np.ones((3, 2))
    y = np.ones((2, 2))
    out = mmd(x, y)  # all pairwise distances zero -> bandwidth falls back
    assert out.item() == 0.0  # identical distributions regardless


def test_mmd_gradient_matches_fd_through_median():
    rng = np.random.default_rng(6)
    x0 = rng.normal(size=(3, 2))
    y0 = rng.normal(size=(4, 2))

    def value(x):
        return mmd(Tensor(x), Tensor(y0)).item()

    xt = Tensor(x0.copy())
    out = mmd(xt, Tensor(y0))
    out.backward()
    eps = 1e-6
    for idx in [(0, 0), (1, 1), (2, 0)]:
        p = x0.copy(); p[idx] += eps
        m = x0.copy(); m[idx] -= eps
        fd = (value(p) - value(m)) / (2 * eps)
        assert xt.grad[idx] == pytest.approx(fd, rel=1e-5, abs=1e-9)


def test_loss_mmd_region_level_identical_and_empty():
    rng = np.random.default_rng(7)
    feats = RegionFeatures(
        b_cells=[Tensor(rng.normal(size=(3, 4)))],
        e_cells=[Tensor(rng.normal(size=(3, 4)))],
        rois=[Tensor(rng.normal(size=(3, 12)))],
    )
    same = RegionFeatures(
        b_cells=[Tensor(feats.b_cells[0].data.copy())],
        e_cells=[Tensor(feats.e_cells[0].data.copy())],
        rois=[Tensor(feats.rois[0].data.copy())],
    )
    l_b, l_r = loss_mmd_region_level(feats, same)
    assert l_b.item() == 0.0 and l_r.item() == 0.0
    l_b2, l_r2 = loss_mmd_region_level(feats, RegionFeatures())
    assert l_b2.item() == 0.0 and l_r2.item() == 0.0


def test_loss_mmd_region_level_matches_oracle_sum():
    rng = np.random.default_rng(8)
    src = RegionFeatures(
        b_cells=[Tensor(rng.normal(size=(2, 4)))],
        e_cells=[Tensor(rng.normal(size=(2, 4)))],
        rois=[Tensor(rng.normal(size=(2, 12)))],
    )
    tgt = RegionFeatures(
        b_cells=[Tensor(rng.normal(size=(2, 4)))],
        e_cells=[Tensor(rng.normal(size=(2, 4)))],
        rois=[Tensor(rng.normal(size=(2, 12)))],
    )
    l_b, l_r = loss_mmd_region_level(src, tgt)
    expected_b = oracle_mmd(src.b_cells[0].data, tgt.b_cells[0].data) + oracle_mmd(
        src.e_cells[0].data, tgt.e_cells[0].data
    )
    expected_r = oracle_mmd(src.rois[0].data, tgt.rois[0].data)
    assert l_b.item() == pytest.approx(expected_b, abs=1e-10)
    assert l_r.item() == pytest.approx(expected_r, abs=1e-10)


def test_loss_mmd_cell_level_by_type():
    rng = np.random.default_rng(9)
    a_src = rng.normal(size=(3, 4)); a_tgt = rng.normal(size=(2, 4))
    o_src = rng.normal(size=(2, 4)); o_tgt = rng.normal(size=(2, 4))
    src = {1: [Tensor(a_src)], 2: [Tensor(o_src)], 3: []}
    tgt = {1: [Tensor(a_tgt)], 2: [Tensor(o_tgt)], 5: [Tensor(rng.normal(size=(1, 4)))]}
    out = loss_mmd_cell_level(src, tgt)
    expected = oracle_mmd(a_src, a_tgt) + oracle_mmd(o_src, o_tgt)  # types 3, 5 skipped
    assert out.item() == pytest.approx(expected, abs=1e-10)
    only_a = loss_mmd_cell_level({1: [Tensor(a_src)]}, {1: [Tensor(a_tgt)]})
    assert only_a.item() == pytest.approx(oracle_mmd(a_src, a_tgt), abs=1e-12)
    identical = loss_mmd_cell_level(src, {k: [Tensor(v[0].data.copy())] for k, v in src.items() if v})
    assert identical.item() == 0.0


def test_total_loss_arithmetic_and_linearity():
    val = total_loss(Tensor(1.0), Tensor(0.5), Tensor(2.0), alpha=1.0, beta=0.005)
    assert val.item() == pytest.approx(1.51, rel=1e-12)
    assert total_loss(Tensor(1.0), Tensor(9.0), Tensor(9.0), 0.0, 0.0).item() == 1.0
    a1 = total_loss(Tensor(1.0), Tensor(2.0), Tensor(0.0), 0.3, 0.0).item()
    a2 = total_loss(Tensor(1.0), Tensor(2.0), Tensor(0.0), 0.6, 0.0).item()
    assert a2 - a1 == pytest.approx(0.3 * 2.0, rel=1e-12)


def test_breakdown_invariants():
    bd = LossBreakdown(l_rpn=0.25, l_rpc=0.5, l_sup=0.75, l_uns=0.1,
                       l_mmd_boundary=0.2, l_mmd_region=0.3, l_mmd=0.5, total=0.8525)
    assert bd.l_sup == bd.l_rpn + bd.l_rpc
    assert bd.l_mmd == bd.l_mmd_boundary + bd.l_mmd_region
