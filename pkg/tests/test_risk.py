import numpy as np
import pytest

from invrisk.engine.attack import empirical_invloss
from invrisk.engine.linalg import svd
from invrisk.engine.risk import bound_dnp, bound_gnp, bound_rank_k, bound_sequence, calibrate_alpha, \
    feasibility_weights, ic_assessment, ic_bound_sequence, ic_lower_bound, invre, masked_jacobian, score_sequence, \
    spectral_profile, weighted_bound
from invrisk.errors import ConfigError, NumericError, ShapeError
from invrisk.model.risk_model import BoundKind, Calibration, RiskBand, RiskThresholds, ScoringMode


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def test_profile_of_identity(linear_jacobian):
    prof = spectral_profile(linear_jacobian(np.eye(3)), [1.0, 0.0, 0.0])
    np.testing.assert_allclose(prof.proj_x ** 2, [1.0, 0.0, 0.0], atol=1e-15)
    assert (prof.d, prof.rank, prof.m, prof.p) == (3, 3, 3, 3)


def test_profile_projections(rng, linear_jacobian):
    g = rng.standard_normal((7, 5))
    x = rng.standard_normal(5)
    prof = spectral_profile(linear_jacobian(g), x)
    vt = svd(g).vt
    assert prof.proj_x @ prof.proj_x == pytest.approx(np.sum((vt @ x) ** 2), abs=1e-10)
    assert prof.proj_x @ prof.proj_x == pytest.approx(x @ x, abs=1e-9)


def test_profile_of_orthogonal_instance(rng, linear_jacobian):
    g = rng.standard_normal((2, 5))
    # last right singular vector of the full decomposition spans no row of g
    x = np.linalg.svd(g)[2][-1]
    prof = spectral_profile(linear_jacobian(g), x)
    np.testing.assert_allclose(prof.proj_x, 0.0, atol=1e-12)


def test_profile_noise_lengths(rng, linear_jacobian):
    j = linear_jacobian(rng.standard_normal((7, 5)))
    x = rng.standard_normal(5)
    assert spectral_profile(j, x, rng.standard_normal(5)).proj_noise_u is None
    assert spectral_profile(j, x, rng.standard_normal(7)).proj_noise_v is None
    square = spectral_profile(linear_jacobian(rng.standard_normal((4, 4))), x[:4], rng.standard_normal(4))
    assert square.proj_noise_u is not None and square.proj_noise_v is not None
    with pytest.raises(ShapeError):
        spectral_profile(j, x, rng.standard_normal(6))
    with pytest.raises(ShapeError):
        spectral_profile(j, rng.standard_normal(4))


def test_rank_k_bound_edges(rng, linear_jacobian):
    x = _unit(rng.standard_normal(4))
    prof = spectral_profile(linear_jacobian(rng.standard_normal((6, 4))), x)
    assert bound_rank_k(prof, prof.d) == 0.0
    assert bound_rank_k(prof, 0) == pytest.approx(1.0)
    taus = bound_sequence(prof)
    assert np.all(np.diff(taus) <= 0)
    with pytest.raises(ValueError):
        bound_rank_k(prof, prof.d + 1)


def test_rank_k_bound_is_tight_on_linear_maps(rng, linear_jacobian):
    j = linear_jacobian(rng.standard_normal((8, 8)))
    x = _unit(rng.standard_normal(8))
    prof = spectral_profile(j, x)
    for k in range(9):
        assert bound_rank_k(prof, k) == pytest.approx(empirical_invloss(j, x, k), abs=1e-9)


def test_rank_cap(linear_jacobian):
    g = np.diag([2.0, 1.0, 0.0])
    x = _unit(np.array([1.0, 1.0, 1.0]))
    prof = spectral_profile(linear_jacobian(g), x)
    assert prof.rank == 2
    # the third direction cannot be recovered by any attacker
    assert bound_rank_k(prof, 3) == pytest.approx(1.0 / 3.0)
    assert bound_rank_k(prof, 3) == pytest.approx(empirical_invloss(linear_jacobian(g), x, 2))


def test_dnp_bound(rng, linear_jacobian):
    g = rng.standard_normal((5, 4))
    j = linear_jacobian(g)
    x = _unit(rng.standard_normal(4))
    clean = spectral_profile(j, x)
    zero = spectral_profile(j, x, np.zeros(4))
    for k in range(5):
        assert bound_dnp(zero, k) == pytest.approx(bound_rank_k(clean, k))
    v1 = svd(g).vt[0]
    for c in (0.5, 1.5):
        prof = spectral_profile(j, x, c * v1)
        for k in range(1, 5):
            assert bound_dnp(prof, k) - bound_rank_k(clean, k) == pytest.approx(c ** 2 / 4, abs=1e-10)
    assert bound_dnp(spectral_profile(j, x, 1.5 * v1), 2) > bound_dnp(spectral_profile(j, x, 0.5 * v1), 2)
    with pytest.raises(ValueError):
        bound_dnp(clean, 1)


def test_gnp_bound(rng, linear_jacobian):
    g = rng.standard_normal((6, 4))
    j = linear_jacobian(g)
    x = _unit(rng.standard_normal(4))
    s = svd(g)
    clean = spectral_profile(j, x)
    assert bound_gnp(spectral_profile(j, x, np.zeros(6)), 3) == pytest.approx(bound_rank_k(clean, 3))
    c = 0.8
    prof = spectral_profile(j, x, c * s.u[:, 0])
    for k in range(1, 5):
        expected = c ** 2 / (s.sigma[0] ** 2 * 6)
        assert bound_gnp(prof, k) - bound_rank_k(clean, k) == pytest.approx(expected, abs=1e-10)
    eps = rng.standard_normal(6)
    single = bound_gnp(spectral_profile(j, x, eps), 4) - bound_rank_k(clean, 4)
    doubled = bound_gnp(spectral_profile(linear_jacobian(2.0 * g), x, eps), 4) - bound_rank_k(clean, 4)
    assert doubled == pytest.approx(single / 4)


def test_gnp_bound_rejects_zero_singular_values(linear_jacobian):
    prof = spectral_profile(linear_jacobian(np.diag([1.0, 0.0])), [0.6, 0.8], [1.0, 1.0])
    assert bound_gnp(prof, 1) > 0
    with pytest.raises(NumericError):
        bound_gnp(prof, 2)


@pytest.mark.parametrize("seed", range(20))
def test_noise_bounds_dominate(seed, linear_jacobian):
    rng = np.random.default_rng(seed)
    m, p = (int(v) for v in rng.integers(2, 10, size=2))
    j = linear_jacobian(rng.standard_normal((p, m)))
    x = _unit(rng.standard_normal(m))
    clean = bound_sequence(spectral_profile(j, x))
    dnp = bound_sequence(spectral_profile(j, x, rng.standard_normal(m)), BoundKind.DNP)
    gnp = bound_sequence(spectral_profile(j, x, rng.standard_normal(p)), BoundKind.GNP)
    assert np.all(dnp >= clean - 1e-15)
    assert np.all(gnp >= clean - 1e-15)


def test_gnp_ignores_noise_outside_leading_directions(rng, linear_jacobian):
    g = rng.standard_normal((6, 4))
    j = linear_jacobian(g)
    x = _unit(rng.standard_normal(4))
    s = svd(g)
    tail = s.u[:, 2:] @ rng.standard_normal(2)
    prof = spectral_profile(j, x, tail)
    clean = spectral_profile(j, x)
    for k in (1, 2):
        assert bound_gnp(prof, k) == pytest.approx(bound_rank_k(clean, k), abs=1e-12)


def test_ic_lower_bound(rng, linear_jacobian):
    x = _unit(rng.standard_normal(5))
    prof = spectral_profile(linear_jacobian(rng.standard_normal((5, 5))), x)
    assert ic_lower_bound(prof, 0) == 0.0
    assert ic_lower_bound(prof, 5) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        ic_lower_bound(prof, 6)


def test_ic_lower_bound_on_aligned_drop(rng, linear_jacobian):
    # rows of g are scaled right singular vectors; the last two rows carry the trailing directions
    q_right = np.linalg.qr(rng.standard_normal((5, 5)))[0]
    g = np.diag([5.0, 4.0, 3.0, 2.0, 1.0]) @ q_right.T
    x = _unit(rng.standard_normal(5))
    dropped = np.array([False, False, False, True, True])
    assessment = ic_assessment(linear_jacobian(g), x, dropped)
    assert (assessment.q, assessment.reduced_rank) == (2, 3)
    achieved = empirical_invloss(masked_jacobian(linear_jacobian(g), dropped), x, 3)
    assert achieved >= assessment.lower_bound - 1e-10
    assert achieved == pytest.approx(assessment.lower_bound, abs=1e-10)


def test_dropped_bounds_dominate_the_clean_ones(rng, linear_jacobian):
    j = linear_jacobian(rng.standard_normal((8, 5)))
    x = _unit(rng.standard_normal(5))
    prof = spectral_profile(j, x)
    clean = bound_sequence(prof)
    order = rng.permutation(8)
    previous = None
    for q in range(9):
        dropped = np.zeros(8, dtype=bool)
        dropped[order[:q]] = True
        tau, assessment = ic_bound_sequence(prof, j, x, dropped)
        assert np.all(tau >= clean - 1e-12)
        assert np.all(tau >= assessment.lower_bound - 1e-12)
        if previous is not None:
            assert np.all(tau >= previous - 1e-12)
        previous = tau
        if q == 0:
            np.testing.assert_allclose(tau, clean, atol=1e-12)
    # nothing left to recover from
    np.testing.assert_allclose(previous, 1.0, atol=1e-12)
    assert assessment.reduced_rank == 0
    assert assessment.q == 5


def test_dropping_a_duplicated_row_leaves_the_lower_bound(linear_jacobian):
    j = linear_jacobian(np.vstack([np.eye(3), np.eye(3)]))
    x = np.array([1.0, 0.0, 0.0])
    prof = spectral_profile(j, x)
    # row 0 is duplicated by row 3, so the row space is unchanged
    tau, assessment = ic_bound_sequence(prof, j, x, [True, False, False, False, False, False])
    assert (assessment.q, assessment.reduced_rank) == (1, 3)
    assert tau[0] == pytest.approx(1.0)
    np.testing.assert_allclose(tau[1:], np.maximum(bound_sequence(prof)[1:], assessment.lower_bound), atol=1e-12)


def test_feasibility_weights():
    np.testing.assert_allclose(feasibility_weights([2.0]), [1.0])
    np.testing.assert_allclose(feasibility_weights([2.0, 1.0]), [3 / 5, 2 / 5])
    weights = feasibility_weights([100.0, 1.0, 0.9, 0.8])
    assert weights.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.argmax(weights) == 0
    tied = feasibility_weights([1.0, 0.5, 0.5])
    assert np.all(np.isfinite(tied))
    assert tied[1] < 1e-6
    with pytest.raises(NumericError):
        feasibility_weights([0.0, 0.0])
    with pytest.raises(ValueError):
        feasibility_weights([1.0, 2.0])


def test_invre_midpoint(rng, linear_jacobian):
    prof = spectral_profile(linear_jacobian(rng.standard_normal((4, 4))), _unit(rng.standard_normal(4)))
    report = invre(prof, Calibration(weighted_bound(prof)))
    assert report.invre == pytest.approx(0.5)
    assert report.band == RiskBand.HIGH
    assert report.p_weights.sum() == pytest.approx(1.0, abs=1e-12)
    assert report.tau.size == prof.d + 1
    assert report.weighted_bound == pytest.approx(report.p_weights @ report.tau[1:])


def test_invre_is_decreasing_in_the_bound(rng, linear_jacobian):
    profiles = [spectral_profile(linear_jacobian(rng.standard_normal((5, 5))), _unit(rng.standard_normal(5)))
                for _ in range(8)]
    bounds = np.array([weighted_bound(prof) for prof in profiles])
    for beta in (1.0, 5.0, 20.0):
        cal = calibrate_alpha(profiles, beta)
        scores = np.array([invre(prof, cal).invre for prof in profiles])
        assert np.all((scores > 0) & (scores < 1))
        np.testing.assert_array_equal(np.argsort(scores), np.argsort(-bounds))


def test_inverse_scoring(rng, linear_jacobian):
    prof = spectral_profile(linear_jacobian(rng.standard_normal((4, 4))), _unit(rng.standard_normal(4)))
    report = invre(prof, Calibration(0.0), mode=ScoringMode.INVERSE)
    assert report.invre == pytest.approx(1.0 / weighted_bound(prof))


def test_score_sequence():
    report = score_sequence([1.0, 0.5, 0.2], [2.0, 1.0], Calibration(0.38))
    np.testing.assert_allclose(report.p_weights, [3 / 5, 2 / 5])
    assert report.weighted_bound == pytest.approx(0.38)
    assert report.invre == pytest.approx(0.5)
    with pytest.raises(ShapeError):
        score_sequence([1.0, 0.5], [2.0, 1.0], Calibration(0.38))


def test_bands():
    thresholds = RiskThresholds()
    assert thresholds.band(0.1) == RiskBand.MINIMAL
    assert thresholds.band(0.3) == RiskBand.MODERATE
    assert thresholds.band(0.5) == RiskBand.HIGH


def test_calibration(rng, linear_jacobian, tmp_path):
    profiles = [spectral_profile(linear_jacobian(rng.standard_normal((5, 3))), _unit(rng.standard_normal(3)))
                for _ in range(4)]
    single = calibrate_alpha(profiles[:1])
    assert single.alpha == pytest.approx(weighted_bound(profiles[0]))
    assert single.beta == 5.0
    assert calibrate_alpha(profiles[:1] * 3).alpha == pytest.approx(single.alpha)
    assert calibrate_alpha(profiles).alpha == pytest.approx(np.mean([weighted_bound(p) for p in profiles]))
    with pytest.raises(ValueError):
        calibrate_alpha([])
    path = tmp_path / "fresh" / "cal.json"
    single.save(path)
    assert Calibration.load(path) == single
    with pytest.raises(ConfigError):
        Calibration.from_dict({'alpha': 0.1, 'beta': 0.0})


@pytest.mark.parametrize("seed", range(200))
def test_rank_k_bound_on_random_linear_maps(seed, linear_jacobian):
    rng = np.random.default_rng(1000 + seed)
    m = int(rng.integers(4, 33))
    p = int(rng.integers(m, 33))
    j = linear_jacobian(rng.standard_normal((p, m)))
    x = _unit(rng.standard_normal(m))
    taus = bound_sequence(spectral_profile(j, x))
    for k in range(m + 1):
        assert abs(taus[k] - empirical_invloss(j, x, k)) <= 1e-9
