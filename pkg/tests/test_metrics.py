import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparsevb.linalg import ZeroReference, norm_dist
from sparsevb.metrics import Alignment, align, compute_errors


def planted(b_ref, perm, signs):
    """b_hat such that the alignment (perm, signs) maps it back to b_ref."""
    b_hat = np.empty_like(b_ref)
    b_hat[perm] = signs[:, None] * b_ref
    return b_hat


def test_identity_recovery(rng):
    b = rng.standard_normal((4, 10))
    al = align(b, b)
    assert al == Alignment.identity(4)
    a = rng.standard_normal((6, 4))
    rep = compute_errors(a, b, a, b)
    assert (rep.err_b, rep.err_b_abs, rep.err_b_sp, rep.err_ab) == (0.0, 0.0, 0.0, 0.0)
    assert rep.err_ab_mc is None


def test_worked_swap_and_negate_example(rng):
    # Swap rows 2 and 4, then flip the signs of rows 2, 3 and 4 (1-based).
    b_ref = rng.standard_normal((5, 12))
    b_hat = b_ref.copy()
    b_hat[[1, 3]] = b_hat[[3, 1]]
    b_hat[[1, 2, 3]] *= -1
    al = align(b_hat, b_ref)
    np.testing.assert_array_equal(al.perm, [0, 3, 2, 1, 4])
    np.testing.assert_array_equal(al.signs, [1, -1, -1, -1, 1])
    np.testing.assert_array_equal(al.apply_b(b_hat), b_ref)


@pytest.mark.parametrize("H", [3, 5])
def test_planted_transform_exhaustive(H):
    """Every one of the H! * 2^H transforms is recovered (H=3 and H=5)."""
    rng = np.random.default_rng(H)
    b_ref = rng.standard_normal((H, 8))
    for perm in itertools.permutations(range(H)):
        perm = np.array(perm)
        for bits in itertools.product((1.0, -1.0), repeat=H):
            signs = np.array(bits)
            al = align(planted(b_ref, perm, signs), b_ref)
            assert np.array_equal(al.perm, perm) and np.array_equal(al.signs, signs)


def test_assignment_branch_for_large_h(rng):
    H = 10
    b_ref = rng.standard_normal((H, 30))
    perm = rng.permutation(H)
    signs = rng.choice([-1.0, 1.0], H)
    al = align(planted(b_ref, perm, signs) + 1e-3 * rng.standard_normal((H, 30)), b_ref)
    np.testing.assert_array_equal(al.perm, perm)
    np.testing.assert_array_equal(al.signs, signs)


def test_negated_factors_zero_errors(rng):
    a = rng.standard_normal((6, 3))
    b = rng.standard_normal((3, 9))
    rep = compute_errors(-a, -b, a, b)
    assert rep.err_b == 0.0 and rep.err_ab == 0.0
    np.testing.assert_array_equal(rep.alignment.signs, [-1, -1, -1])


def test_sparse_error_single_entry():
    b_ref = np.array([[1.0, 0.0, 2.0], [0.0, 3.0, 1.0]])
    a = np.eye(2)
    b_hat = b_ref.copy()
    b_hat[0, 1] = 1.0
    rep = compute_errors(a, b_hat, a, b_ref)
    assert rep.err_b_sp == pytest.approx(1.0 / np.sum(b_hat**2), rel=1e-15)


def test_err_b_and_err_ab_formulas(rng):
    a, b = rng.standard_normal((5, 2)), rng.standard_normal((2, 7))
    ah, bh = a + 0.1 * rng.standard_normal(a.shape), b + 0.1 * rng.standard_normal(b.shape)
    rep = compute_errors(ah, bh, a, b, alignment=Alignment.identity(2))
    unit = lambda x: x / np.linalg.norm(x)
    assert rep.err_b == pytest.approx(norm_dist(unit(bh), unit(b)), rel=1e-13)
    assert rep.err_b_abs == pytest.approx(norm_dist(np.abs(unit(bh)), np.abs(unit(b))), rel=1e-13)
    assert rep.err_ab == pytest.approx(norm_dist(unit(ah @ bh), unit(a @ b)), rel=1e-13)


def test_err_ab_mc_only_on_missing(rng):
    a, b = rng.standard_normal((4, 2)), rng.standard_normal((2, 5))
    mask = np.ones((4, 5))
    mask[1, 2] = 0
    ah = a.copy()
    bh = b.copy()
    rep = compute_errors(ah, bh, a, b, mask=mask)
    assert rep.err_ab_mc == 0.0
    p_hat = a @ b
    p_hat_bad = p_hat.copy()
    p_hat_bad[0, 0] += 1.0  # observed entry: not counted in the MC sum
    unit = lambda x: x / np.linalg.norm(x)
    rep2 = compute_errors(np.eye(4), p_hat_bad[:, :], np.eye(4), p_hat, mask=mask,
                          alignment=Alignment.identity(4))
    expect = (unit(p_hat_bad)[1, 2] - unit(p_hat)[1, 2]) ** 2
    assert rep2.err_ab_mc == pytest.approx(expect, rel=1e-12)


def test_zero_reference():
    with pytest.raises(ZeroReference):
        compute_errors(np.ones((2, 1)), np.ones((1, 3)), np.ones((2, 1)), np.zeros((1, 3)))


def test_alignment_validation():
    with pytest.raises(ValueError):
        Alignment([0, 0], [1, 1])
    with pytest.raises(ValueError):
        Alignment([0, 1], [1, 2])


seeds = st.integers(0, 2**32 - 1)


def _instance(seed, H=4):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((6, H))
    b = rng.standard_normal((H, 9)) * (rng.random((H, 9)) > 0.4)
    b[0, 0] = 1.0
    ah = a + 0.3 * rng.standard_normal(a.shape)
    bh = b + 0.3 * rng.standard_normal(b.shape)
    perm = rng.permutation(H)
    signs = rng.choice([-1.0, 1.0], H)
    scale = rng.uniform(0.01, 100)
    return a, b, ah, bh, Alignment(perm, signs), scale


@pytest.mark.property
@settings(max_examples=60, deadline=None)
@given(seed=seeds)
def test_err_ab_invariant_under_transform(seed):
    a, b, ah, bh, t, _ = _instance(seed)
    base = compute_errors(ah, bh, a, b).err_ab
    moved = compute_errors(t.apply_a(ah), t.apply_b(bh), a, b).err_ab
    assert moved == pytest.approx(base, rel=1e-12, abs=1e-15)


@pytest.mark.property
@settings(max_examples=60, deadline=None)
@given(seed=seeds)
def test_err_b_absorbs_pre_transform(seed):
    a, b, ah, bh, t, _ = _instance(seed)
    base = compute_errors(ah, bh, a, b)
    moved = compute_errors(ah, t.apply_b(bh), a, b)
    assert moved.err_b == pytest.approx(base.err_b, rel=1e-12, abs=1e-15)


@pytest.mark.property
@settings(max_examples=60, deadline=None)
@given(seed=seeds)
def test_error_bounds_and_scale_invariance(seed):
    a, b, ah, bh, _, c = _instance(seed)
    rep = compute_errors(ah, bh, a, b)
    for v in (rep.err_b, rep.err_b_abs, rep.err_b_sp, rep.err_ab):
        assert np.isfinite(v) and v >= 0
    assert rep.err_b_abs <= rep.err_b + 4
    scaled = compute_errors(c * ah, c * bh, a / c, b * c)
    for name in ("err_b", "err_b_abs", "err_b_sp", "err_ab"):
        assert getattr(scaled, name) == pytest.approx(getattr(rep, name), rel=1e-10, abs=1e-14)


@pytest.mark.property
@settings(max_examples=60, deadline=None)
@given(seed=seeds)
def test_abs_equals_plain_for_nonnegative(seed):
    a, b, ah, bh, _, _ = _instance(seed)
    rep = compute_errors(np.abs(ah), np.abs(bh), np.abs(a), np.abs(b))
    assert rep.err_b_abs == pytest.approx(rep.err_b, rel=1e-12, abs=1e-15)
