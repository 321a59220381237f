import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from domadapt.adapt import (
    AdaptationTransform,
    CoralPPConfig,
    apply_transform,
    coral_fit,
    coral_fit_exact,
    coralpp_fit,
    fda_fit,
    floor_spectrum,
    identity_transform,
    load_transform,
    save_transform,
    zscore_spectrum,
)
from domadapt.errors import DegenerateSpectrumError, InsufficientDataError, ValidationError
from domadapt.linalg import estimate_covariance, sym_eig, sym_power

from helpers import data_with_cov, make_set, random_spd


def _pair(rng, d=6, n=200):
    a = rng.standard_normal((d, d))
    b = rng.standard_normal((d, d)) * rng.uniform(0.3, 3.0, size=d)
    ood = make_set(rng.standard_normal((n, d)) @ a, prefix="o")
    ind = make_set(rng.standard_normal((n, d)) @ b + 1.0, prefix="i")
    return ood, ind


def _objective(a, c_o, c_i):
    return np.linalg.norm(a.T @ c_o @ a - c_i)


# --- CORAL -----------------------------------------------------------------


def test_coral_same_covariance_is_preserving(rng):
    ood, _ = _pair(rng)
    ind = make_set(ood.vectors + 5.0, prefix="i")
    out = apply_transform(coral_fit(ood, ind), ood)
    c_before = estimate_covariance(ood).cov
    c_after = estimate_covariance(out).cov
    assert np.linalg.norm(c_after - c_before) <= 1e-8 * np.linalg.norm(c_before)


def test_coral_diagonal_example():
    ood = make_set(data_with_cov(np.diag([3.0, 0.0])))
    ind = make_set(data_with_cov(np.diag([8.0, 0.0])))
    t = coral_fit(ood, ind)
    # ((8 + 1) / (3 + 1)) ** 0.5 on the first axis, (1 / 1) ** 0.5 on the second
    np.testing.assert_allclose(t.matrix, np.diag([1.5, 1.0]), atol=1e-8)
    np.testing.assert_array_equal(t.pre_shift, 0.0)
    np.testing.assert_array_equal(t.post_shift, 0.0)


def test_coral_needs_two_samples(rng):
    with pytest.raises(InsufficientDataError):
        coral_fit(make_set([[1.0, 2.0]]), make_set(rng.standard_normal((5, 2))))


def test_coral_dimension_mismatch(rng):
    with pytest.raises(ValidationError):
        coral_fit(make_set(rng.standard_normal((5, 2))), make_set(rng.standard_normal((5, 3))))


def test_coral_exact_solves_objective(rng):
    ood, ind = _pair(rng)
    t = coral_fit_exact(ood, ind, ridge=0.0)
    c_o, c_i = estimate_covariance(ood).cov, estimate_covariance(ind).cov
    assert _objective(t.matrix, c_o, c_i) < 1e-6 * np.linalg.norm(c_i)


def test_coral_exact_ridge_one_is_coral(rng):
    ood, ind = _pair(rng)
    assert coral_fit_exact(ood, ind, ridge=1.0).matrix.tobytes() == coral_fit(ood, ind).matrix.tobytes()


def test_coral_exact_equal_covariances(rng):
    ood, _ = _pair(rng)
    ind = make_set(ood.vectors[::-1] * 1.0, prefix="i")
    t = coral_fit_exact(ood, ind)
    c = estimate_covariance(ood).cov
    np.testing.assert_allclose(t.matrix.T @ c @ t.matrix, c, atol=1e-8 * np.abs(c).max())


def test_coral_exact_local_minimum(rng):
    ood, ind = _pair(rng, d=5, n=100)
    t = coral_fit_exact(ood, ind)
    c_o, c_i = estimate_covariance(ood).cov, estimate_covariance(ind).cov
    best = _objective(t.matrix, c_o, c_i)
    for _ in range(100):
        assert _objective(t.matrix + 1e-3 * rng.standard_normal((5, 5)), c_o, c_i) > best


# --- fDA -------------------------------------------------------------------


def test_fda_equal_covariance_is_mean_alignment(rng):
    ood, _ = _pair(rng)
    ind = make_set(ood.vectors[rng.permutation(ood.n)] + 3.0, prefix="i")
    t = fda_fit(ood, ind)
    np.testing.assert_allclose(t.matrix, np.eye(ood.dim), atol=1e-8)
    out = apply_transform(t, ood)
    np.testing.assert_allclose(out.vectors.mean(axis=0), ind.vectors.mean(axis=0), atol=1e-10)


def test_fda_floor_binds_on_small_eigenvalue():
    ood = make_set(data_with_cov(np.eye(2)))
    ind = make_set(data_with_cov(np.diag([4.0, 0.25])))
    t = fda_fit(ood, ind)
    # relative spectrum (4, 0.25) floored to (4, 1); square root gives (2, 1)
    np.testing.assert_allclose(t.matrix, np.diag([2.0, 1.0]), atol=1e-8)


def test_fda_same_set_is_identity(rng):
    ood, _ = _pair(rng)
    out = apply_transform(fda_fit(ood, ood), ood)
    np.testing.assert_allclose(out.vectors, ood.vectors, atol=1e-8)


def test_fda_one_sample_in_domain(rng):
    ood, _ = _pair(rng)
    with pytest.raises(InsufficientDataError):
        fda_fit(ood, make_set(np.ones((1, ood.dim))))


def test_fda_rank_deficient_out_of_domain(rng):
    x = rng.standard_normal((50, 3)) @ np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 1.0], [0.0, 0.0, 0.0]])
    ood = make_set(x)
    ind = make_set(rng.standard_normal((50, 3)), prefix="i")
    t = fda_fit(ood, ind)
    assert np.all(np.isfinite(t.matrix))


def test_fda_matches_column_formula(rng):
    """Compare with a direct transcription of the column-vector algorithm."""
    ood, ind = _pair(rng, d=4)
    c_o = np.cov(ood.vectors, rowvar=False)
    c_i = np.cov(ind.vectors, rowvar=False)
    w, v = np.linalg.eigh(c_o)
    c_o_half = v @ np.diag(np.sqrt(w)) @ v.T
    c_o_mhalf = v @ np.diag(1 / np.sqrt(w)) @ v.T
    u, delta, _ = np.linalg.svd(c_o_mhalf @ c_i @ c_o_mhalf)
    m = c_o_half @ u @ np.diag(np.sqrt(np.maximum(1, delta))) @ u.T @ c_o_mhalf
    x = ood.vectors[0]
    expected = m @ (x - ood.vectors.mean(0)) + ind.vectors.mean(0)
    got = apply_transform(fda_fit(ood, ind), ood).vectors[0]
    np.testing.assert_allclose(got, expected, rtol=1e-9, atol=1e-9)


# --- spectrum helpers ------------------------------------------------------


def test_zscore_example():
    # mean 2, population std sqrt(2/3)
    np.testing.assert_allclose(zscore_spectrum([1.0, 2.0, 3.0]), [-np.sqrt(1.5), 0.0, np.sqrt(1.5)], atol=1e-15)


def test_zscore_degenerate():
    with pytest.raises(DegenerateSpectrumError):
        zscore_spectrum([5.0, 5.0, 5.0])
    with pytest.raises(DegenerateSpectrumError):
        zscore_spectrum([1.0])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=64).filter(lambda s: np.std(s) > 1e-6 * max(1.0, np.max(np.abs(s)))))
def test_zscore_standardizes(s):
    s = np.sort(s)[::-1]
    z = zscore_spectrum(s)
    assert abs(z.mean()) < 1e-12
    assert abs(z.std() - 1) < 1e-12
    assert np.all(np.diff(z) <= 0)


def test_floor_examples():
    z = np.array([np.sqrt(1.5), 0.0, -np.sqrt(1.5)])
    np.testing.assert_array_equal(floor_spectrum(z, 0.5), [np.sqrt(1.5), 0.5, 0.5])
    np.testing.assert_array_equal(floor_spectrum(z, 0.0), [np.sqrt(1.5), 0.0, 0.0])
    np.testing.assert_array_equal(floor_spectrum(z, 3.0), [3.0, 3.0, 3.0])
    with pytest.raises(ValidationError):
        floor_spectrum(z, -0.1)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=20), st.floats(0, 4), st.floats(0, 4))
def test_floor_monotone_in_alpha(values, a1, a2):
    lo, hi = sorted((a1, a2))
    v_lo, v_hi = floor_spectrum(values, lo), floor_spectrum(values, hi)
    assert np.all(v_hi >= v_lo)
    assert np.all(v_hi >= hi)
    desc = np.sort(values)[::-1]
    assert np.all(np.diff(floor_spectrum(desc, lo)) <= 0)


# --- CORAL++ ---------------------------------------------------------------


def test_coralpp_config_constraints():
    with pytest.raises(ValidationError):
        CoralPPConfig(lambda_=0.0)
    with pytest.raises(ValidationError):
        CoralPPConfig(alpha=-0.1)
    assert CoralPPConfig() == CoralPPConfig(lambda_=0.1, alpha=0.5)


def test_coralpp_hand_trace():
    ood = make_set(data_with_cov(np.eye(2)))
    ind = make_set(data_with_cov(np.diag([4.0, 1.0])))
    t = coralpp_fit(ood, ind, CoralPPConfig(lambda_=0.1, alpha=0.5))
    # s = (4, 1): mean 2.5, std 1.5 -> z = (1, -1) -> v = (1, 0.5)
    np.testing.assert_allclose(t.spectrum.raw, [4.0, 1.0], atol=1e-12)
    np.testing.assert_allclose(t.spectrum.normalized, [1.0, -1.0], atol=1e-12)
    np.testing.assert_allclose(t.spectrum.floored, [1.0, 0.5], atol=1e-12)
    # recolor diag(1.1, 0.6)^0.5, whiten diag(1.1, 1.1)^-0.5
    np.testing.assert_allclose(t.matrix, np.diag([1.0, np.sqrt(0.6 / 1.1)]), atol=1e-8)
    assert abs(np.sqrt(0.6 / 1.1) - 0.73854895) < 1e-8
    out = apply_transform(t, make_set([[1.0, 1.0]]))
    np.testing.assert_allclose(out.vectors, [[1.0, 0.7385489458759964]], atol=1e-8)


def test_coralpp_reconstruction_contract(rng):
    ood, ind = _pair(rng, d=8, n=400)
    cfg = CoralPPConfig(lambda_=0.3, alpha=0.2)
    t = coralpp_fit(ood, ind, cfg)
    c_i = estimate_covariance(ind).cov
    base = sym_eig(c_i)
    assert np.min(-np.diff(base.values)) > 1e-6
    z = (base.values - base.values.mean()) / base.values.std()
    rebuilt = base.vectors @ np.diag(np.maximum(cfg.alpha, z)) @ base.vectors.T
    eig = sym_eig(rebuilt)
    np.testing.assert_allclose(eig.values, np.sort(np.maximum(cfg.alpha, z))[::-1], atol=1e-10)
    # the transform carries the same basis and spectrum
    np.testing.assert_allclose(np.abs(t.spectrum.vectors.T @ base.vectors), np.eye(8), atol=1e-10)
    np.testing.assert_allclose(t.spectrum.floored, np.maximum(cfg.alpha, z), atol=1e-10)
    # and the matrix is whiten(C_O + lambda) @ sqrt(rebuilt + lambda)
    c_o = estimate_covariance(ood).cov
    expected = sym_power(c_o, -0.5, cfg.lambda_) @ sym_power(rebuilt, 0.5, cfg.lambda_)
    np.testing.assert_allclose(t.matrix, expected, atol=1e-9)


def test_coralpp_whitening_converges(rng):
    ood, _ = _pair(rng, d=6, n=500)
    c_o = estimate_covariance(ood).cov
    w = sym_power(c_o, -0.5, 1e-8)
    white = estimate_covariance(ood.vectors @ w).cov
    assert np.max(np.abs(white - np.eye(6))) < 1e-4


def test_coralpp_degenerate_in_domain(rng):
    ood, _ = _pair(rng)
    ind = make_set(data_with_cov(np.eye(ood.dim)), prefix="i")
    with pytest.raises(DegenerateSpectrumError):
        coralpp_fit(ood, ind)


@pytest.mark.parametrize("fit", [coral_fit, fda_fit, coralpp_fit])
def test_fits_row_order_invariant(rng, fit):
    ood, ind = _pair(rng)
    a = fit(ood, ind)
    b = fit(ood.subset(rng.permutation(ood.n)), ind.subset(rng.permutation(ind.n)))
    assert a.matrix.tobytes() == b.matrix.tobytes()
    assert a.pre_shift.tobytes() == b.pre_shift.tobytes()
    assert a.post_shift.tobytes() == b.post_shift.tobytes()


# --- apply / serialize -----------------------------------------------------


def test_identity_transform_bitwise(rng):
    emb = make_set(rng.standard_normal((5, 3)))
    out = apply_transform(identity_transform(3), emb)
    assert out.vectors.tobytes() == emb.vectors.tobytes()
    assert out.ids == emb.ids


def test_mean_removal_transform(rng):
    emb = make_set(rng.standard_normal((20, 3)) + 4.0)
    t = AdaptationTransform(matrix=np.eye(3), pre_shift=emb.vectors.mean(0), post_shift=np.zeros(3), method="fda")
    np.testing.assert_allclose(apply_transform(t, emb).vectors.mean(0), 0.0, atol=1e-14)


def test_apply_leaves_input_untouched(rng):
    ood, ind = _pair(rng)
    before = ood.vectors.copy()
    apply_transform(coralpp_fit(ood, ind), ood)
    np.testing.assert_array_equal(ood.vectors, before)


def test_apply_dimension_mismatch(rng):
    with pytest.raises(ValidationError):
        apply_transform(identity_transform(2), make_set(rng.standard_normal((3, 3))))


@pytest.mark.parametrize("fit", [coral_fit, fda_fit, coralpp_fit])
def test_transform_file_round_trip(tmp_path, rng, fit):
    ood, ind = _pair(rng)
    t = fit(ood, ind)
    save_transform(t, tmp_path / "t.adt")
    back = load_transform(tmp_path / "t.adt")
    assert back.method == t.method
    assert back.matrix.tobytes() == t.matrix.tobytes()
    assert back.pre_shift.tobytes() == t.pre_shift.tobytes()
    assert back.post_shift.tobytes() == t.post_shift.tobytes()
    assert np.array_equal([back.lambda_, back.alpha], [t.lambda_, t.alpha], equal_nan=True)
