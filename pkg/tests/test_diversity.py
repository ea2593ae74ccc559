"""Tests for the pool distances, normalization and combined objective."""

import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from seqfed.diversity import (
    ModelPool,
    RegularizerConfig,
    distance_d1,
    distance_d2,
    gradient_with_terms,
    magnitude_normalize,
    normalize_with_scale,
    pool_mean,
    pool_pairwise_distances,
    read_pairwise_csv,
    regularizer_terms,
    total_gradient,
    total_loss,
    write_pairwise_csv,
)
from seqfed.errors import DimensionMismatchError
from seqfed.models import ModelSpec, backward, cross_entropy, forward, init_params

# ------------------------------------------------------------------- oracles


def ref_dist(a, b, measure):
    if measure == "l2":
        return math.sqrt(math.fsum((x - y) ** 2 for x, y in zip(a, b)))
    if measure == "l1":
        return math.fsum(abs(x - y) for x, y in zip(a, b)) / len(a)
    na = math.sqrt(math.fsum(x * x for x in a))
    nb = math.sqrt(math.fsum(y * y for y in b))
    return 1.0 - math.fsum(x * y for x, y in zip(a, b)) / (na * nb)


def brute_d1(current, members, measure):
    return math.fsum(ref_dist(current, m, measure) for m in members) / len(members)


def central_diff(f, x, h=1e-6):
    grad = np.empty_like(x)
    for i in range(x.shape[0]):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        grad[i] = (f(xp) - f(xm)) / (2.0 * h)
    return grad


def make_pool(rng, members, dim, scale=1.0):
    pool = ModelPool(scale * rng.standard_normal(dim))
    for _ in range(members - 1):
        pool.append(scale * rng.standard_normal(dim))
    return pool


# ----------------------------------------------------------------- pool mean


def test_pool_mean_singleton():
    pool = ModelPool(np.array([1.0, 1.0]))
    assert np.array_equal(pool_mean(pool), np.array([1.0, 1.0]))


def test_pool_mean_two_members():
    pool = ModelPool(np.array([0.0, 0.0]))
    pool.append(np.array([2.0, 0.0]))
    assert np.array_equal(pool_mean(pool), np.array([1.0, 0.0]))


def test_pool_mean_matches_naive_sum():
    rng = np.random.default_rng(0)
    pool = make_pool(rng, 5, 50)
    naive = np.array([math.fsum(pool[k][i] for k in range(5)) / 5 for i in range(50)])
    assert pool_mean(pool) == pytest.approx(naive, rel=1e-12)


def test_pool_append_length_check():
    pool = ModelPool(np.zeros(3))
    with pytest.raises(DimensionMismatchError):
        pool.append(np.zeros(4))


def test_pool_seed_model_copied():
    seed = np.array([1.0, 2.0])
    pool = ModelPool(seed)
    seed[0] = 99.0
    assert pool[0][0] == 1.0


# ----------------------------------------------------------------- distances


def test_d1_hand_example():
    pool = ModelPool(np.array([0.0, 0.0]))
    pool.append(np.array([2.0, 0.0]))
    got = distance_d1(np.array([1.0, 1.0]), pool)
    assert got == pytest.approx(math.sqrt(2.0), rel=1e-15)


def test_d1_zero_when_current_is_sole_member():
    v = np.array([0.3, -0.7, 1.1])
    assert distance_d1(v, ModelPool(v)) == 0.0


@pytest.mark.parametrize("measure", ["l2", "l1", "cosine"])
def test_d1_matches_brute_force(measure):
    rng = np.random.default_rng(1)
    pool = make_pool(rng, 10, 30)
    current = rng.standard_normal(30)
    got = distance_d1(current, pool, measure)
    want = brute_d1(current.tolist(), [m.tolist() for m in pool], measure)
    assert got == pytest.approx(want, rel=1e-12)


def test_d2_identity_and_345():
    pool = ModelPool(np.array([0.0, 0.0]))
    assert distance_d2(pool[0], pool) == 0.0
    assert distance_d2(np.array([3.0, 4.0]), pool) == 5.0


def test_singleton_pool_d1_equals_d2_exactly():
    rng = np.random.default_rng(2)
    pool = ModelPool(rng.standard_normal(20))
    current = rng.standard_normal(20)
    for measure in ("l2", "l1", "cosine"):
        assert distance_d1(current, pool, measure) == distance_d2(current, pool, measure)


def test_distance_length_mismatch():
    pool = ModelPool(np.zeros(3))
    with pytest.raises(DimensionMismatchError):
        distance_d1(np.zeros(4), pool)
    with pytest.raises(DimensionMismatchError):
        distance_d2(np.zeros(4), pool)


def test_d1_positive_unless_all_members_equal():
    rng = np.random.default_rng(3)
    v = rng.standard_normal(8)
    pool = ModelPool(v)
    pool.append(v.copy())
    assert distance_d1(v, pool) == 0.0
    pool.append(v + 1e-6)
    assert distance_d1(v, pool) > 0.0


# ------------------------------------------------------------- normalization


def test_normalize_reproduces_reference_example():
    assert magnitude_normalize(45.0, 6.02) == 0.45


def test_normalize_zero_distance():
    assert magnitude_normalize(0.0, 3.7) == 0.0


def test_normalize_already_at_target():
    assert magnitude_normalize(0.45, 6.02) == 0.45


def test_normalize_rejects_bad_loss():
    with pytest.raises(ValueError):
        magnitude_normalize(1.0, 0.0)
    with pytest.raises(ValueError):
        magnitude_normalize(1.0, -2.0)
    with pytest.raises(ValueError):
        magnitude_normalize(-1.0, 2.0)


def test_normalize_scales_up_small_distances():
    # distance far below the loss scale is raised, not only lowered
    got = magnitude_normalize(0.0042, 6.02)
    assert got == pytest.approx(0.42, rel=1e-15)


@given(d=st.floats(1e-10, 1e10), ell=st.floats(1e-6, 1e6))
@settings(max_examples=200, deadline=None)
def test_normalize_order_of_magnitude_property(d, ell):
    # stay away from decade boundaries where floor(log10) is discontinuous
    for v in (d, ell):
        frac = math.log10(v) % 1.0
        assume(1e-9 < frac < 1.0 - 1e-9)
    m = magnitude_normalize(d, ell)
    assert math.floor(math.log10(m)) == math.floor(math.log10(ell)) - 1


def test_normalize_scale_factor_is_linear_gradient():
    value, scale = normalize_with_scale(45.0, 6.02)
    assert value == 0.45
    assert scale == pytest.approx(0.01, rel=1e-15)
    value, scale = normalize_with_scale(0.0042, 6.02)
    assert scale == pytest.approx(100.0, rel=1e-15)


# ------------------------------------------------------------ combined loss


def test_total_loss_arithmetic():
    cfg = RegularizerConfig(alpha=1.0, beta=1.0)
    assert total_loss(2.0, 0.3, 0.1, cfg) == pytest.approx(1.8, rel=1e-15)


def test_total_loss_ablation_identity():
    cfg = RegularizerConfig(alpha=0.0, beta=0.0)
    assert total_loss(2.345, 0.3, 0.1, cfg) == 2.345
    off = RegularizerConfig(alpha=1.0, beta=1.0, enable_d1=False, enable_d2=False)
    assert total_loss(2.345, 0.3, 0.1, off) == 2.345


def test_total_loss_reference_values():
    # loss 6.02 with raw d1 45 normalized to 0.45, d2 off, alpha 1
    cfg = RegularizerConfig(alpha=1.0, beta=1.0, enable_d2=False)
    d1n = magnitude_normalize(45.0, 6.02)
    assert total_loss(6.02, d1n, 0.0, cfg) == pytest.approx(5.57, abs=1e-12)


def test_total_gradient_singleton_cancellation():
    cfg = RegularizerConfig(alpha=1.0, beta=1.0, normalize=False)
    pool = ModelPool(np.array([0.0, 0.0]))
    got = total_gradient(np.zeros(2), np.array([1.0, 0.0]), pool, cfg, ell=1.0)
    assert np.array_equal(got, np.zeros(2))


def test_total_gradient_unit_vector_example():
    cfg = RegularizerConfig(alpha=2.0, beta=1.0, normalize=False)
    pool = ModelPool(np.array([0.0, 0.0]))
    got = total_gradient(np.zeros(2), np.array([1.0, 0.0]), pool, cfg, ell=1.0)
    assert got == pytest.approx(np.array([-1.0, 0.0]), abs=1e-15)


def test_total_gradient_disabled_is_grad_ell_bitwise():
    cfg = RegularizerConfig(alpha=1.0, beta=1.0, enable_d1=False, enable_d2=False)
    rng = np.random.default_rng(4)
    grad = rng.standard_normal(6)
    pool = ModelPool(rng.standard_normal(6))
    out = total_gradient(grad, rng.standard_normal(6), pool, cfg, ell=1.0)
    assert out is grad


def test_total_gradient_coincident_member_contributes_zero():
    cfg = RegularizerConfig(alpha=1.0, beta=0.0, enable_d2=False, normalize=False)
    v = np.array([0.5, -0.5])
    pool = ModelPool(v.copy())
    pool.append(np.array([0.5, 0.5]))
    got = total_gradient(np.zeros(2), v, pool, cfg, ell=1.0)
    # only the non-coincident member pulls; the coincident one adds nothing
    direction = (v - pool[1]) / np.linalg.norm(v - pool[1])
    assert got == pytest.approx(-0.5 * direction, abs=1e-15)


def _stable_scale(d, h=1e-3):
    frac = math.log10(d) % 1.0
    return h < frac < 1.0 - h


@pytest.mark.parametrize("measure", ["l2", "l1", "cosine"])
@pytest.mark.parametrize("normalize", [False, True])
def test_total_gradient_matches_finite_differences(measure, normalize):
    spec = ModelSpec([2, 3, 2], activation="tanh")
    rng = np.random.default_rng(5)
    x = rng.standard_normal((8, 2))
    y = rng.integers(0, 2, size=8)
    cfg = RegularizerConfig(alpha=0.7, beta=0.9, measure=measure, normalize=normalize)
    checked = 0
    attempts = 0
    while checked < 3 and attempts < 20:
        attempts += 1
        params = init_params(spec, rng)
        pool = make_pool(rng, 3, spec.param_count, scale=0.5)
        ell = cross_entropy(forward(spec, params, x), y)
        terms = regularizer_terms(params, pool, cfg, ell)
        if normalize and not (_stable_scale(terms.d1_raw) and _stable_scale(terms.d2_raw)
                              and _stable_scale(ell)):
            continue
        if measure == "l1":
            # sign() is piecewise constant; skip configurations where any
            # coordinate pair sits within h of a kink
            gap = min(np.abs(params - m).min() for m in pool)
            if gap < 1e-4:
                continue

        def full_loss(p):
            e = cross_entropy(forward(spec, p, x), y)
            t = regularizer_terms(p, pool, cfg, e)
            return total_loss(e, t.d1_norm, t.d2_norm, cfg)

        _, grad_ell = backward(spec, params, x, y)
        analytic = gradient_with_terms(grad_ell, params, pool, cfg, terms)
        fd = central_diff(full_loss, params)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), 1e-4)
        assert float(np.max(np.abs(analytic - fd) / denom)) < 1e-4
        checked += 1
    assert checked == 3


# ------------------------------------------------------------- pairwise grid


def test_pairwise_singleton():
    assert np.array_equal(pool_pairwise_distances(ModelPool(np.zeros(2))),
                          np.zeros((1, 1)))


def test_pairwise_345():
    pool = ModelPool(np.array([0.0, 0.0]))
    pool.append(np.array([3.0, 4.0]))
    assert np.array_equal(pool_pairwise_distances(pool),
                          np.array([[0.0, 5.0], [5.0, 0.0]]))


def test_pairwise_matches_brute_force_and_symmetry():
    rng = np.random.default_rng(6)
    pool = make_pool(rng, 6, 12)
    mat = pool_pairwise_distances(pool)
    assert np.array_equal(mat, mat.T)
    assert np.all(np.diag(mat) == 0.0)
    for i in range(6):
        for j in range(6):
            want = ref_dist(pool[i].tolist(), pool[j].tolist(), "l2")
            assert mat[i, j] == pytest.approx(want, rel=1e-12, abs=1e-15)


def test_pairwise_rows_reproduce_d1():
    rng = np.random.default_rng(7)
    pool = make_pool(rng, 5, 16)
    mat = pool_pairwise_distances(pool)
    for k in range(1, 5):
        prefix = ModelPool(pool[0])
        for t in range(1, k):
            prefix.append(pool[t])
        want = distance_d1(pool[k], prefix)
        assert mat[k, :k].mean() == pytest.approx(want, rel=1e-12)


def test_pairwise_csv_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    pool = make_pool(rng, 4, 9)
    mat = pool_pairwise_distances(pool)
    path = tmp_path / "pairwise.csv"
    write_pairwise_csv(mat, path)
    header = path.read_text().splitlines()[0]
    assert header == "0,1,2,3"
    assert np.array_equal(read_pairwise_csv(path), mat)
