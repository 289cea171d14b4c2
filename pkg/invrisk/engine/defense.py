"""
Defenses against reconstruction: Gaussian noise on data / gradients / embeddings,
pruning and dropout of the shared vector, and spectrally truncated adaptive noise.
"""
import logging
import math

import numpy as np

from invrisk.engine.linalg import svd
from invrisk.errors import ConfigError, NumericError, ShapeError
from invrisk.model.defense_model import AdaptiveNoise, DefendedShare, DefenseKind, DefenseSpec, TruncationRule
from invrisk.model.map_model import Jacobian

log = logging.getLogger("invrisk")


def gaussian_noise(dim: int, delta: float, seed: int) -> np.ndarray:
    """
    i.i.d. N(0, delta) samples, delta being the variance
    """
    if delta <= 0:
        raise ValueError(f"noise variance must be > 0, got {delta}")
    return np.random.default_rng(seed).normal(0.0, math.sqrt(delta), size=dim)


def select_k(sigma, keep_fraction: float, rule: TruncationRule = TruncationRule.MASS) -> int:
    """
    Smallest k whose leading singular values reach keep_fraction of the total
    mass (or of the count, under the count rule); at least 1

    :param sigma: non-increasing singular values
    :param keep_fraction: in (0, 1]
    :param rule:
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    if not 0.0 < keep_fraction <= 1.0:
        raise ValueError(f"keep fraction must be in (0, 1], got {keep_fraction}")
    if sigma.size == 0 or sigma.sum() <= 0.0:
        raise NumericError("cannot truncate an all-zero spectrum")
    match rule:
        case TruncationRule.MASS:
            cumulative = np.cumsum(sigma)
            k = int(np.searchsorted(cumulative, keep_fraction * cumulative[-1] * (1.0 - 1e-12))) + 1
        case TruncationRule.COUNT:
            k = math.ceil(keep_fraction * sigma.size - 1e-9)
    return min(max(k, 1), sigma.size)


def _require_kind(spec: DefenseSpec, *kinds: DefenseKind):
    if spec.kind not in kinds:
        raise ConfigError(f"{spec.kind.value} is not one of {[k.value for k in kinds]}")


def adaptive_noise_dnp(j: Jacobian, spec: DefenseSpec) -> AdaptiveNoise:
    """
    Data-space noise confined to the leading right singular vectors of j.g
    """
    _require_kind(spec, DefenseKind.INVL_DNP)
    s = svd(j.g)
    eps = gaussian_noise(j.m, spec.delta, spec.seed)
    n = s.vt @ eps
    k = select_k(s.sigma, spec.spectral_keep, spec.truncation)
    n[k:] = 0.0
    eps_hat = s.vt.T @ n
    return AdaptiveNoise(eps_hat, range(0, k), float(eps_hat @ eps_hat), eps)


def adaptive_noise_genp(j: Jacobian, spec: DefenseSpec) -> AdaptiveNoise:
    """
    Shared-space noise confined to the left singular band [j, k): the leading
    directions up to spectral_keep, minus those up to spectral_skip
    """
    _require_kind(spec, DefenseKind.INVL_GNP, DefenseKind.INVL_ENP)
    s = svd(j.g)
    eps = gaussian_noise(j.p, spec.delta, spec.seed)
    n = s.u.T @ eps
    k = select_k(s.sigma, spec.spectral_keep, spec.truncation)
    skip = 0 if spec.spectral_skip == 0 else select_k(s.sigma, spec.spectral_skip, spec.truncation)
    skip = min(skip, k - 1)
    n[:skip] = 0.0
    n[k:] = 0.0
    eps_hat = s.u @ n
    return AdaptiveNoise(eps_hat, range(skip, k), float(eps_hat @ eps_hat), eps)


def adaptive_noise(j: Jacobian, spec: DefenseSpec) -> AdaptiveNoise:
    match spec.kind:
        case DefenseKind.INVL_DNP:
            return adaptive_noise_dnp(j, spec)
        case DefenseKind.INVL_GNP | DefenseKind.INVL_ENP:
            return adaptive_noise_genp(j, spec)
        case _:
            raise ConfigError(f"{spec.kind.value} is not an adaptive defense")


def dropped_mask(spec: DefenseSpec, target) -> np.ndarray:
    """
    Entries zeroed by prune (smallest magnitudes, lower index first on ties)
    or dropout (seeded uniform subset); floor(lambda * len) of them
    """
    _require_kind(spec, DefenseKind.PRUNE, DefenseKind.DROPOUT)
    target = np.asarray(target, dtype=np.float64)
    q = math.floor(spec.lam * target.size + 1e-9)
    match spec.kind:
        case DefenseKind.PRUNE:
            chosen = np.argsort(np.abs(target), kind='stable')[:q]
        case DefenseKind.DROPOUT:
            chosen = np.random.default_rng(spec.seed).permutation(target.size)[:q]
    mask = np.zeros(target.size, dtype=bool)
    mask[chosen] = True
    return mask


def defend(spec: DefenseSpec, target, j: Jacobian | None = None) -> DefendedShare:
    """
    Applies the defense to an instance (data-level kinds) or to a shared vector

    :param spec: the defense
    :param target: x for dnp / invl_dnp, the gradient or embedding otherwise
    :param j: Jacobian of the shared map, required by the adaptive kinds
    :return: the defended vector with its noise or dropped mask
    """
    target = np.asarray(target, dtype=np.float64)
    if target.ndim != 1:
        raise ShapeError(f"expected a vector, got shape {target.shape}")
    if spec.kind.is_adaptive and j is None:
        raise ConfigError(f"{spec.kind.value} requires a Jacobian")
    match spec.kind:
        case DefenseKind.DNP | DefenseKind.GNP | DefenseKind.ENP:
            noise = gaussian_noise(target.size, spec.delta, spec.seed)
        case DefenseKind.PRUNE | DefenseKind.DROPOUT:
            mask = dropped_mask(spec, target)
            return DefendedShare(np.where(mask, 0.0, target), None, mask)
        case DefenseKind.INVL_DNP:
            if target.size != j.m:
                raise ShapeError(f"data-level target length {target.size} != jacobian width {j.m}")
            noise = adaptive_noise_dnp(j, spec).eps_hat
        case DefenseKind.INVL_GNP | DefenseKind.INVL_ENP:
            if target.size != j.p:
                raise ShapeError(f"shared target length {target.size} != jacobian height {j.p}")
            noise = adaptive_noise_genp(j, spec).eps_hat
    return DefendedShare(target + noise, noise, None)


def apply_defense(spec: DefenseSpec, target, j: Jacobian | None = None) -> np.ndarray:
    """
    The defended vector alone, see defend
    """
    return defend(spec, target, j).defended
