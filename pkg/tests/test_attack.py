import numpy as np
import pytest

from invrisk.engine.attack import Adam, build_rank_k, empirical_invloss, expected_mse, matching_attack, \
    reconstruct_rank_k, tier_weights, total_variation
from invrisk.engine.linalg import svd
from invrisk.engine.metrics import mse
from invrisk.engine.risk import bound_rank_k, spectral_profile
from invrisk.engine.shared_map import forward
from invrisk.errors import ConfigError, NumericError, RankError, ShapeError
from invrisk.model.attack_model import AttackConfig


def test_rank_k_identity(linear_jacobian):
    np.testing.assert_allclose(build_rank_k(linear_jacobian(np.eye(4)), 4).a_star, np.eye(4), atol=1e-12)
    assert not np.any(build_rank_k(linear_jacobian(np.eye(4)), 0).a_star)


def test_rank_k_inverts_full_rank(rng, linear_jacobian):
    g = rng.standard_normal((4, 4))
    att = build_rank_k(linear_jacobian(g), 4)
    np.testing.assert_allclose(att.a_star @ g, np.eye(4), atol=1e-8)
    x = rng.standard_normal(4)
    assert np.sum((reconstruct_rank_k(att, g @ x) - x) ** 2) < 1e-9


def test_rank_k_beyond_effective_rank(rng, linear_jacobian):
    g = rng.standard_normal((3, 2)) @ rng.standard_normal((2, 3))
    with pytest.raises(RankError):
        build_rank_k(linear_jacobian(g), 3)


def test_rank_zero_attacker_loses_everything(rng, linear_jacobian):
    g = rng.standard_normal((5, 4))
    x = rng.standard_normal(4)
    att = build_rank_k(linear_jacobian(g), 0)
    assert not np.any(reconstruct_rank_k(att, g @ x))
    assert empirical_invloss(linear_jacobian(g), x, 0) == pytest.approx(x @ x)


def test_null_space_component_is_lost(rng, linear_jacobian):
    g = rng.standard_normal((3, 2)) @ rng.standard_normal((2, 3))
    vt = svd(g).vt
    c = 0.7
    x = 0.4 * vt[0] - 1.3 * vt[1] + c * vt[2]
    assert empirical_invloss(linear_jacobian(g), x, 2) == pytest.approx(c ** 2, abs=1e-9)


def test_reconstruct_checks_length(rng, linear_jacobian):
    att = build_rank_k(linear_jacobian(rng.standard_normal((3, 3))), 3)
    with pytest.raises(ShapeError):
        reconstruct_rank_k(att, np.zeros(4))


def test_invloss_inside_recovered_subspace(rng, linear_jacobian):
    g = rng.standard_normal((6, 4))
    j = linear_jacobian(g)
    assert empirical_invloss(linear_jacobian(np.eye(4)), rng.standard_normal(4), 4) == pytest.approx(0.0, abs=1e-20)
    assert empirical_invloss(j, svd(g).vt[0], 1) == pytest.approx(0.0, abs=1e-9)


@pytest.mark.parametrize("seed", range(40))
def test_invloss_equals_rank_k_bound(seed, linear_jacobian):
    rng = np.random.default_rng(seed)
    m, p = (int(v) for v in rng.integers(4, 33, size=2))
    j = linear_jacobian(rng.standard_normal((p, m)))
    x = rng.standard_normal(m)
    x /= np.linalg.norm(x)
    prof = spectral_profile(j, x)
    # energy outside the row space of g is never recovered (zero when p >= m)
    outside = 1.0 - float(prof.proj_x @ prof.proj_x)
    losses = [empirical_invloss(j, x, k) for k in range(prof.d + 1)]
    for k, loss in enumerate(losses):
        assert loss == pytest.approx(bound_rank_k(prof, k) + outside, abs=1e-9)
    assert all(later <= earlier + 1e-12 for earlier, later in zip(losses, losses[1:]))


def test_adam_minimizes_a_quadratic():
    optimizer = Adam(lr=0.05)
    theta = np.array([3.0, -2.0])
    for _ in range(2000):
        theta = optimizer.step(theta, 2.0 * (theta - np.array([1.0, 1.0])))
    np.testing.assert_allclose(theta, [1.0, 1.0], atol=1e-3)


def test_total_variation_gradient(rng):
    x = rng.standard_normal(16)
    value, grad = total_variation(x)
    h = 1e-6
    numeric = np.array([(total_variation(x + h * e)[0] - total_variation(x - h * e)[0]) / (2 * h)
                        for e in np.eye(16)])
    np.testing.assert_allclose(grad, numeric, atol=1e-6)
    assert value > 0


def test_total_variation_of_flat_signals():
    flat_grid, _ = total_variation(np.full(9, 0.5))
    flat_line, _ = total_variation(np.full(5, 0.5))
    # 12 adjacent pairs on a 3 x 3 grid, 4 on a line of 5
    assert flat_grid == pytest.approx(12 * 1e-4)
    assert flat_line == pytest.approx(4 * 1e-4)


def test_matching_attack_identity_map(rng, linear_spec):
    spec = linear_spec(np.eye(4))
    x = rng.uniform(0.0, 1.0, 4)
    result = matching_attack(spec, forward(spec, x), AttackConfig(iters=2000))
    assert [it for it, _ in result.trajectory] == [0, 100, 500, 2000]
    for tier in (500, 2000):
        assert mse(x, result.snapshots[tier]) < 1e-4
    np.testing.assert_array_equal(result.x_hat, result.snapshots[2000])


def test_matching_attack_agrees_with_full_rank_attacker(rng, linear_spec, linear_jacobian):
    w = 2.0 * np.eye(4) + 0.1 * rng.standard_normal((4, 4))
    spec = linear_spec(w)
    x = rng.uniform(0.0, 1.0, 4)
    result = matching_attack(spec, w @ x, AttackConfig(iters=2000))
    linear = reconstruct_rank_k(build_rank_k(linear_jacobian(w), 4), w @ x)
    assert mse(linear, result.x_hat) < 1e-4


def test_matching_attack_starts_on_target(vfl_spec):
    target = forward(vfl_spec, np.zeros(vfl_spec.input_width))
    result = matching_attack(vfl_spec, target, AttackConfig(iters=5, tiers=[5]))
    assert result.trajectory[0] == (0, 0.0)


def test_cosine_attack_ignores_target_scale(rng, vfl_spec):
    target = forward(vfl_spec, rng.standard_normal(vfl_spec.input_width))
    cfg = AttackConfig(distance="cosine", iters=50, tiers=[10], init="gaussian", seed=3)
    np.testing.assert_allclose(matching_attack(vfl_spec, 2.0 * target, cfg).x_hat,
                               matching_attack(vfl_spec, target, cfg).x_hat, rtol=1e-12, atol=1e-14)


def test_matching_attack_is_seed_deterministic(rng, hfl_spec):
    target = forward(hfl_spec, rng.standard_normal(hfl_spec.input_width))
    cfg = AttackConfig(iters=20, tiers=[10], init="gaussian", seed=9, tv_weight=0.01)
    first, second = matching_attack(hfl_spec, target, cfg), matching_attack(hfl_spec, target, cfg)
    assert first.x_hat.tobytes() == second.x_hat.tobytes()
    assert first.trajectory == second.trajectory


def test_matching_attack_aborts_on_divergence(linear_spec):
    spec = linear_spec(np.eye(3))
    with pytest.raises(NumericError, match="non finite"):
        matching_attack(spec, np.ones(3), AttackConfig(iters=10, step_size=1e300, tiers=[5]))


def test_matching_attack_checks_target(vfl_spec):
    with pytest.raises(ShapeError):
        matching_attack(vfl_spec, np.zeros(vfl_spec.output_width + 1), AttackConfig(iters=1, tiers=[1]))


def test_attack_config_validation():
    with pytest.raises(ConfigError):
        AttackConfig(iters=0)
    with pytest.raises(ConfigError):
        AttackConfig(tv_weight=-1.0)
    with pytest.raises(ConfigError):
        AttackConfig(distance="manhattan")
    with pytest.raises(ConfigError):
        AttackConfig(tiers=[500, 100])
    with pytest.raises(ConfigError):
        AttackConfig.from_dict({'iters': 10, 'learning_rate': 0.1})


def test_tier_weights():
    np.testing.assert_allclose(tier_weights([1, 1]), [2 / 3, 1 / 3], rtol=1e-15)
    assert tier_weights([100, 500, 2000]).sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(np.diff(tier_weights([100, 500, 2000])) < 0)


def test_expected_mse():
    assert expected_mse([0.25], [500]) == pytest.approx(0.25)
    assert expected_mse([0.3, 0.6], [1, 1]) == pytest.approx((2 * 0.3 + 0.6) / 3)
    with pytest.raises(ValueError):
        expected_mse([], [])
    with pytest.raises(ValueError):
        expected_mse([0.1], [0])
    with pytest.raises(ValueError):
        expected_mse([0.1, 0.2], [1])
