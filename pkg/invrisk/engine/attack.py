"""
Reconstruction attacks: the analytic rank-k optimal attacker and an iterative
gradient / embedding matching attacker
"""
import logging
import math

import numpy as np

from invrisk.engine.linalg import effective_rank, svd, truncated_pinv
from invrisk.engine.shared_map import forward, jacobian
from invrisk.errors import NumericError, RankError, ShapeError
from invrisk.model.attack_model import AttackConfig, AttackResult, Distance, Init, RankKAttacker
from invrisk.model.map_model import Jacobian, SharedMapSpec

log = logging.getLogger("invrisk")

TV_SMOOTHING = 1e-8
_TINY = 1e-12


def build_rank_k(j: Jacobian, k: int) -> RankKAttacker:
    """
    Rank-k optimal attacker for the Jacobian j

    :param j:
    :param k: 0 <= k <= effective rank of j.g
    """
    s = svd(j.g)
    rank = effective_rank(s)
    if not 0 <= k <= rank:
        raise RankError(k, rank)
    return RankKAttacker(truncated_pinv(s, k), k)


def reconstruct_rank_k(att: RankKAttacker, shared) -> np.ndarray:
    shared = np.asarray(shared, dtype=np.float64)
    if shared.ndim != 1 or shared.size != att.a_star.shape[1]:
        raise ShapeError(f"attacker expects a shared vector of length {att.a_star.shape[1]}, got {shared.shape}")
    return att.a_star @ shared


def empirical_invloss(j: Jacobian, x, k: int) -> float:
    """
    Squared error of the rank-k optimal attacker under local linearization,
    ||A_k G x - x||^2
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size != j.m:
        raise ShapeError(f"instance length {x.size} != jacobian width {j.m}")
    residual = reconstruct_rank_k(build_rank_k(j, k), j.g @ x) - x
    return float(residual @ residual)


class Adam(object):
    """
    Moment-based first-order optimizer with bias correction
    """

    def __init__(self, lr: float = 0.01, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.b1 = b1
        self.b2 = b2
        self.eps = eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(theta)
            self.v = np.zeros_like(theta)
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad ** 2
        m_hat = self.m / (1 - self.b1 ** self.t)
        v_hat = self.v / (1 - self.b2 ** self.t)
        return theta - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def total_variation(x: np.ndarray) -> tuple[float, np.ndarray]:
    """
    Smoothed anisotropic total variation and its gradient. Inputs whose length
    is a perfect square are read as square grids, others as 1-D signals.
    """
    side = math.isqrt(x.size)
    grid = x.reshape(side, side) if side * side == x.size else x.reshape(1, -1)
    value = 0.0
    grad = np.zeros_like(grid)
    for axis in (0, 1):
        if grid.shape[axis] < 2:
            continue
        diff = np.diff(grid, axis=axis)
        smooth = np.sqrt(diff ** 2 + TV_SMOOTHING)
        value += float(smooth.sum())
        w = diff / smooth
        if axis == 0:
            grad[1:, :] += w
            grad[:-1, :] -= w
        else:
            grad[:, 1:] += w
            grad[:, :-1] -= w
    return value, grad.reshape(-1)


def _matching_objective(spec: SharedMapSpec,
                        x_hat: np.ndarray,
                        target: np.ndarray,
                        cfg: AttackConfig) -> tuple[float, np.ndarray]:
    shared = forward(spec, x_hat)
    g = jacobian(spec, x_hat).g
    match cfg.distance:
        case Distance.L2:
            diff = shared - target
            value = float(diff @ diff)
            d_shared = 2.0 * diff
        case Distance.COSINE:
            norm_s = max(float(np.linalg.norm(shared)), _TINY)
            norm_t = max(float(np.linalg.norm(target)), _TINY)
            cos = float(shared @ target) / (norm_s * norm_t)
            value = 1.0 - cos
            d_shared = -(target / (norm_s * norm_t) - cos * shared / norm_s ** 2)
    grad = g.T @ d_shared
    if cfg.tv_weight > 0:
        tv, tv_grad = total_variation(x_hat)
        value += cfg.tv_weight * tv
        grad = grad + cfg.tv_weight * tv_grad
    return value, grad


def matching_attack(spec: SharedMapSpec, shared_target, cfg: AttackConfig) -> AttackResult:
    """
    Reconstructs an input by matching its shared vector to shared_target,
    minimizing D(F(x_hat), target) + tv_weight * TV(x_hat).
    Objectives and iterates are recorded at iteration 0, at every tier boundary
    and at the last iteration.

    :param spec: the shared map
    :param shared_target: the observed gradient / embedding
    :param cfg: attack settings
    """
    target = np.asarray(shared_target, dtype=np.float64)
    if target.ndim != 1 or target.size != spec.output_width:
        raise ShapeError(f"target length {target.size} != map output width {spec.output_width}")
    match cfg.init:
        case Init.ZEROS:
            x_hat = np.zeros(spec.input_width)
        case Init.GAUSSIAN:
            x_hat = np.random.default_rng(cfg.seed).standard_normal(spec.input_width)

    checkpoints = {t for t in cfg.tiers if t <= cfg.iters} | {cfg.iters}
    optimizer = Adam(lr=cfg.step_size)
    value, grad = _matching_objective(spec, x_hat, target, cfg)
    trajectory = [(0, value)]
    snapshots = {0: x_hat.copy()}
    for it in range(1, cfg.iters + 1):
        x_hat = optimizer.step(x_hat, grad)
        value, grad = _matching_objective(spec, x_hat, target, cfg)
        if not (math.isfinite(value) and np.all(np.isfinite(grad))):
            raise NumericError(f"non finite matching objective at iteration {it} "
                               f"(distance {cfg.distance.value}, step {cfg.step_size})")
        if it in checkpoints:
            if value > trajectory[-1][1]:
                log.debug("matching objective rose from %.6g to %.6g at iteration %d",
                          trajectory[-1][1], value, it)
            trajectory.append((it, value))
            snapshots[it] = x_hat.copy()
    return AttackResult(x_hat, trajectory, value, snapshots)


def tier_weights(iters_by_tier: list[int]) -> np.ndarray:
    """
    Attacker tier probabilities, P_t proportional to 1 / sum_{i<=t} iters_i
    """
    iters = np.asarray(iters_by_tier, dtype=np.float64)
    if iters.size == 0:
        raise ValueError("at least one tier is required")
    if np.any(iters <= 0):
        raise ValueError("iteration counts must be positive")
    inv = 1.0 / np.cumsum(iters)
    return inv / inv.sum()


def expected_mse(mse_by_tier: list[float], iters_by_tier: list[int]) -> float:
    """
    Reconstruction error averaged over attacker tiers, weaker tiers weighing more
    """
    if len(mse_by_tier) != len(iters_by_tier):
        raise ValueError("one mse per tier is required")
    return float(np.dot(tier_weights(iters_by_tier), np.asarray(mse_by_tier, dtype=np.float64)))
