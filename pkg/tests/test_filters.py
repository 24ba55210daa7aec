import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from rdm.errors import ConfigError, FilterDomainError, FilterUsageWarning, InvalidInputError
from rdm.filters import (
    DEFAULT_GRID,
    FLOOR_SIGMA,
    FilterKind,
    SpectralFilter,
    _sinkhorn_init,
    _sinkhorn_rounds,
    apply_online_filter,
    apply_target_filter,
    center_sharpen,
    classify,
    constant,
    directpred,
    extract_transformation_filter,
    filter_matrix,
    identity,
    log,
    log1p,
    log1psq,
    online_spectrum,
    parse_filter,
    power,
    sinkhorn_knopp,
)
from rdm.harness import rank_skewed_batch
from rdm.spectral import correlation, effective_rank


def _batch_with_singular_values(s, rng, n=None):
    s = np.asarray(s, dtype=float)
    k = s.size
    n = n or 2 * k
    u, _ = np.linalg.qr(rng.standard_normal((n, k)))
    v, _ = np.linalg.qr(rng.standard_normal((k, k)))
    return (u * s) @ v.T


def _singular_values(b):
    return np.linalg.svd(b, compute_uv=False)


# classification


def test_classify_examples():
    grid = np.geomspace(0.1, 10, 50)
    assert classify(log1p, grid).kind is FilterKind.LOW_PASS
    assert classify(power(-0.3), grid).kind is FilterKind.HIGH_PASS
    assert classify(constant(1.0), grid).kind is FilterKind.CONSTANT
    assert classify(identity).kind is FilterKind.CONSTANT


def test_classify_non_monotone():
    wiggle = SpectralFilter("wiggle", lambda s: np.sin(s))
    assert classify(wiggle).kind is FilterKind.NON_MONOTONE


def test_classify_rejects_bad_grid():
    with pytest.raises(InvalidInputError):
        classify(log1p, [1.0, 2.0])
    with pytest.raises(InvalidInputError):
        classify(log1p, [3.0, 2.0, 1.0])
    with pytest.raises(InvalidInputError):
        classify(log1p, [0.0, 1.0, 2.0])


def test_default_grid_matches_documented_range():
    assert DEFAULT_GRID[0] == pytest.approx(0.05)
    assert DEFAULT_GRID[-1] == pytest.approx(20.0)


def test_filter_domain_error():
    bad = SpectralFilter("inv_minus_one", lambda s: 1.0 / (s - 1.0))
    with pytest.raises(FilterDomainError) as info:
        bad.evaluate([1.0])
    assert info.value.filter_name == "inv_minus_one"


def test_evaluate_floors_small_sigma():
    assert log.evaluate([0.0])[0] == pytest.approx(math.log(FLOOR_SIGMA))


# filter matrices


def test_filter_matrix_identity_leaves_batch(rng):
    z = rng.standard_normal((5, 8))  # rank 5 < k: complement gets identity
    w = filter_matrix(z, identity)
    assert np.allclose(w, np.eye(8), atol=1e-12)
    assert np.allclose(z @ w, z, atol=1e-12)


def test_filter_matrix_diagonal_batch():
    z = np.array([[2.0, 0.0], [0.0, 1.0]])
    assert np.allclose(filter_matrix(z, directpred), np.diag([2.0, 1.0]), atol=1e-14)


def test_filter_matrix_constant(rng):
    z = rng.standard_normal((10, 4))
    assert np.allclose(filter_matrix(z, constant(3.0)), 3.0 * np.eye(4), atol=1e-12)


def test_online_filter_examples(rng):
    z = rng.standard_normal((12, 4))
    assert np.allclose(correlation(apply_online_filter(z, identity)).matrix, correlation(z).matrix)
    b = _batch_with_singular_values([2.0, 1.0], rng)
    assert np.allclose(_singular_values(apply_online_filter(b, directpred)), [4.0, 1.0])


def test_online_filter_lowers_erank(rng):
    z = rng.standard_normal((40, 6)) * np.linspace(2, 0.3, 6)
    lam = lambda b: np.linalg.eigvalsh(correlation(b).matrix)
    for f in (directpred, log1p, log1psq, power(0.5)):
        assert effective_rank(lam(apply_online_filter(z, f)).clip(0)) < effective_rank(lam(z).clip(0))


def test_target_filter_examples(rng):
    b = _batch_with_singular_values([4.0, 1.0, 0.5], rng)
    assert np.allclose(_singular_values(apply_target_filter(b, power(-1.0))), 1.0)
    assert np.allclose(apply_target_filter(b, constant(1.0)), b)
    b2 = _batch_with_singular_values([4.0, 1.0], rng)
    assert np.allclose(_singular_values(apply_target_filter(b2, power(-0.5))), [2.0, 1.0])


def test_target_filter_keeps_zero_singular_values(rng):
    z = rng.standard_normal((10, 1)) @ rng.standard_normal((1, 3))
    out = apply_target_filter(z, power(-1.0))
    s = _singular_values(out)
    assert s[0] == pytest.approx(1.0)
    assert np.all(s[1:] < 1e-14)


def test_wrong_branch_warns(rng):
    z = rng.standard_normal((8, 3))
    with pytest.warns(FilterUsageWarning):
        apply_online_filter(z, power(-0.5))
    with pytest.warns(FilterUsageWarning):
        apply_target_filter(z, directpred)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        apply_online_filter(z, directpred)
        apply_target_filter(z, power(-0.5))


def test_online_spectrum_matches_filtered_batch(rng):
    z = rng.standard_normal((30, 5))
    s = _singular_values(z)
    got = np.sort(np.linalg.eigvalsh(correlation(apply_online_filter(z, log1p)).matrix))[::-1]
    want = np.sort(online_spectrum(s**2, lambda lam: np.log1p(np.sqrt(lam))))[::-1] / 30
    assert np.allclose(got, want, rtol=1e-10)


# Sinkhorn-Knopp


def test_sinkhorn_zero_iters_is_softmax(rng):
    x = rng.standard_normal((6, 4))
    assert np.allclose(sinkhorn_knopp(x, iters=0, eps=0.5), special.softmax(x / 0.5, axis=1))


def test_sinkhorn_uniform_fixed_point():
    for iters in (0, 1, 5):
        assert np.allclose(sinkhorn_knopp(np.ones((4, 3)), iters), 1 / 3)


def test_sinkhorn_two_by_two_converges():
    q = sinkhorn_knopp(np.eye(2), iters=10, eps=1.0)
    assert np.allclose(q.sum(axis=1), 1.0, atol=1e-6)
    assert np.allclose(q.sum(axis=0), 1.0, atol=1e-6)  # n/k = 1


@settings(max_examples=50)
@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 2**32 - 1), st.integers(1, 5))
def test_sinkhorn_round_invariants(n, k, seed, iters):
    x = np.random.default_rng(seed).standard_normal((n, k))
    for which, q in _sinkhorn_rounds(_sinkhorn_init(x, 0.5), iters):
        assert np.all(q > 0)
        if which == "col":
            assert np.allclose(q.sum(axis=0), 1 / k)
        else:
            assert np.allclose(q.sum(axis=1), 1 / n)
    out = sinkhorn_knopp(x, iters, 0.5)
    assert np.allclose(out.sum(axis=1), 1.0)


def test_sinkhorn_extreme_eps_raises():
    x = np.array([[0.0, 1000.0], [0.0, 0.0]])
    with pytest.raises(InvalidInputError, match="larger eps"):
        sinkhorn_knopp(x, eps=1e-3)
    with pytest.raises(InvalidInputError):
        sinkhorn_knopp(x, eps=0.0)


# center and sharpen


def test_center_sharpen_example():
    out = center_sharpen(np.eye(2), [0.5, 0.5], 1.0)
    assert np.allclose(out, [[0.7311, 0.2689], [0.2689, 0.7311]], atol=1e-4)


def test_center_sharpen_hot_limit(rng):
    z = rng.standard_normal((5, 4))
    assert np.allclose(center_sharpen(z, z.mean(axis=0), 1e8), 0.25, atol=1e-7)


def test_center_sharpen_symmetric_batch():
    v = np.array([1.0, -0.5, 2.0])
    z = np.vstack([v, -v])
    out = center_sharpen(z, z.mean(axis=0), 0.7)
    assert np.allclose(out[0], special.softmax(v / 0.7))
    assert np.allclose(out[1], special.softmax(-v / 0.7))


def test_center_sharpen_errors():
    with pytest.raises(InvalidInputError):
        center_sharpen(np.eye(2), [0, 0], 0.0)
    with pytest.raises(InvalidInputError):
        center_sharpen(np.eye(2), [0, 0, 0], 1.0)


# transformation filter extraction


def test_extract_identity_is_constant(rng):
    z = rng.standard_normal((20, 5))
    tf = extract_transformation_filter(z, z)
    assert tf.kind is FilterKind.CONSTANT
    assert np.allclose(tf.h, 1.0)


def test_extract_round_trip_power(rng):
    s = np.geomspace(0.05, 20, 16)
    z = _batch_with_singular_values(s, rng, n=40)
    tf = extract_transformation_filter(z, apply_target_filter(z, power(-0.5)))
    assert tf.kind is FilterKind.HIGH_PASS
    sig = np.sqrt(tf.lam_p * 40)
    assert np.abs(tf.h - sig**-0.5).max() <= 1e-6


def test_extract_sinkhorn_is_high_pass(rng):
    z = rank_skewed_batch(256, 32, rng)
    online = special.softmax(z / 0.1, axis=1)
    tf = extract_transformation_filter(online, sinkhorn_knopp(online, 1, 0.05))
    assert tf.kind is FilterKind.HIGH_PASS
    assert tf.spearman < -0.5


def test_extract_shape_mismatch():
    with pytest.raises(InvalidInputError):
        extract_transformation_filter(np.ones((3, 2)), np.ones((2, 2)))


# spec strings


@pytest.mark.parametrize(
    "text, location",
    [
        ("id", "online"),
        ("DirectPred", "online"),
        ("log", "online"),
        ("log1p", "online"),
        ("log1psq", "online"),
        ("pow:-0.5", "target"),
        ("sinkhorn:3:0.05", "transform"),
        ("centersharp:0.1", "transform"),
    ],
)
def test_parse_filter(text, location):
    assert parse_filter(text).location == location


@pytest.mark.parametrize(
    "text", ["nope", "pow", "pow:x", "pow:nan", "sinkhorn:3", "sinkhorn:-1:0.1", "sinkhorn:2:0", "centersharp:-1", "log:2"]
)
def test_parse_filter_rejects(text):
    with pytest.raises(ConfigError):
        parse_filter(text)


def test_parse_pow_evaluates():
    f = parse_filter("pow:-0.5").filter
    assert f.evaluate([4.0])[0] == pytest.approx(0.5)


def test_transform_specs(rng):
    z = rng.standard_normal((10, 4))
    out = parse_filter("sinkhorn:2:0.5").transform(z)
    assert np.allclose(out, sinkhorn_knopp(z, 2, 0.5))
    out = parse_filter("centersharp:0.2").transform(z)
    assert np.allclose(out, center_sharpen(z, z.mean(axis=0), 0.2))
    with pytest.raises(InvalidInputError):
        parse_filter("log1p").transform(z)
