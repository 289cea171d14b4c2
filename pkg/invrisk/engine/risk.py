"""
Reconstruction risk: upper bounds for rank-k optimal attackers with and without
noise defenses, the information-compression lower bound, and the InvRE estimator.

An attacker can use at most as many singular directions as the Jacobian has
non-zero singular values, so every bound is evaluated at min(k, rank).
"""
import logging
from typing import NamedTuple

import numpy as np
from scipy.special import expit

from invrisk.engine.linalg import effective_rank, project, svd
from invrisk.errors import NumericError, ShapeError
from invrisk.model.map_model import Jacobian
from invrisk.model.risk_model import BoundKind, Calibration, DEFAULT_BETA, RiskReport, RiskThresholds, \
    ScoringMode, SpectralProfile

log = logging.getLogger("invrisk")

# relative floor for sigma_i - sigma_{i+1}; ties make T_k huge and P_k small
GAP_FLOOR = 1e-12


class ICAssessment(NamedTuple):
    """
    Information-compression view of a dropped shared vector
    """
    lower_bound: float
    q: int
    reduced_rank: int


def spectral_profile(j: Jacobian, x, noise=None) -> SpectralProfile:
    """
    Projects x (and noise) onto the singular vectors of j.g.
    Noise of length m is projected on V, noise of length p on U; when m == p
    both projections are filled.

    :param j: the Jacobian
    :param x: the (normalized) instance
    :param noise: optional defense noise
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size != j.m:
        raise ShapeError(f"instance length {x.size} != jacobian width {j.m}")
    s = svd(j.g)
    proj_noise_v = proj_noise_u = None
    if noise is not None:
        noise = np.asarray(noise, dtype=np.float64)
        if noise.ndim != 1 or noise.size not in (j.m, j.p):
            raise ShapeError(f"noise length {noise.size} is neither m={j.m} nor p={j.p}")
        if noise.size == j.m:
            proj_noise_v = project(s.vt, noise)
        if noise.size == j.p:
            proj_noise_u = project(s.u.T, noise)
    return SpectralProfile(s.sigma, project(s.vt, x), proj_noise_v, proj_noise_u, j.m, j.p, effective_rank(s))


def masked_jacobian(j: Jacobian, dropped) -> Jacobian:
    """
    Jacobian of a shared vector whose dropped entries are zeroed
    """
    dropped = np.asarray(dropped, dtype=bool)
    if dropped.shape != (j.p,):
        raise ShapeError(f"mask of shape {dropped.shape} does not match {j.p} shared entries")
    g = j.g.copy()
    g[dropped] = 0.0
    return Jacobian(g, j.mode, j.fingerprint)


def bound_sequence(prof: SpectralProfile, kind: BoundKind = BoundKind.RANK_K) -> np.ndarray:
    """
    Upper bounds for k = 0..d under the given defense model

    :return: d + 1 values
    """
    d = prof.d
    capped = np.minimum(np.arange(d + 1), prof.rank)
    energy = prof.proj_x ** 2
    suffix = np.concatenate([np.cumsum(energy[::-1])[::-1], [0.0]])
    bounds = suffix[capped]
    match kind:
        case BoundKind.RANK_K:
            return bounds
        case BoundKind.DNP:
            if prof.proj_noise_v is None:
                raise ValueError("profile carries no data-space noise projection")
            terms = prof.proj_noise_v ** 2 / prof.m
        case BoundKind.GNP:
            if prof.proj_noise_u is None:
                raise ValueError("profile carries no shared-space noise projection")
            terms = np.zeros(d)
            live = slice(0, prof.rank)
            terms[live] = prof.proj_noise_u[live] ** 2 / (prof.sigma[live] ** 2 * prof.p)
    prefix = np.concatenate([[0.0], np.cumsum(terms)])
    return bounds + prefix[capped]


def _check_k(prof: SpectralProfile, k: int):
    if not 0 <= k <= prof.d:
        raise ValueError(f"rank {k} out of range [0, {prof.d}]")


def bound_rank_k(prof: SpectralProfile, k: int) -> float:
    """
    tau_k = sum_{i>k} (V_i^T x)^2, the residual energy outside the recovered subspace
    """
    _check_k(prof, k)
    return float(bound_sequence(prof)[k])


def bound_dnp(prof: SpectralProfile, k: int) -> float:
    """
    tau_k + sum_{i<=k} (V_i^T eps)^2 / m, for noise eps injected into the data
    """
    _check_k(prof, k)
    return float(bound_sequence(prof, BoundKind.DNP)[k])


def bound_gnp(prof: SpectralProfile, k: int) -> float:
    """
    tau_k + sum_{i<=k} (U_i^T eps)^2 / (sigma_i^2 p), for noise eps injected into
    the shared gradient / embedding
    """
    _check_k(prof, k)
    if k > prof.rank:
        raise NumericError(f"zero singular value within the first {k} (effective rank {prof.rank})")
    return float(bound_sequence(prof, BoundKind.GNP)[k])


def ic_lower_bound(prof: SpectralProfile, q: int) -> float:
    """
    Reconstruction error lower bound when q shared dimensions are dropped,
    sum of the q trailing projections of the original profile
    """
    if not 0 <= q <= prof.d:
        raise ValueError(f"dropped count {q} out of range [0, {prof.d}]")
    if q == 0:
        return 0.0
    return float(np.sum(prof.proj_x[prof.d - q:] ** 2))


def ic_bound_sequence(prof: SpectralProfile, j: Jacobian, x, dropped) -> tuple[np.ndarray, ICAssessment]:
    """
    Upper bounds for k = 0..d once the dropped shared entries are zeroed.
    Dropping rows only shrinks the recoverable row space, so tau_k of the
    clean profile is raised to the energy of x outside the masked row space,
    and never falls below the information-compression lower bound.
    Nested masks give element-wise non-decreasing sequences.

    :param prof: clean profile of x
    :param j: clean Jacobian
    :param x: the (normalized) instance
    :param dropped: boolean mask over the p shared entries
    :return: the d + 1 bounds and the assessment of the drop
    """
    x = np.asarray(x, dtype=np.float64)
    masked = svd(masked_jacobian(j, dropped).g)
    rank = effective_rank(masked)
    residual = max(0.0, float(x @ x) - float(np.sum(project(masked.vt[:rank], x) ** 2)))
    q = min(int(np.count_nonzero(dropped)), prof.d)
    lower = ic_lower_bound(prof, q)
    return np.maximum(bound_sequence(prof), max(residual, lower)), ICAssessment(lower, q, rank)


def ic_assessment(j: Jacobian, x, dropped) -> ICAssessment:
    """
    Lower bound from the original profile, alongside the effective rank of the
    Jacobian once the dropped rows are zeroed. q is clamped to d.
    """
    return ic_bound_sequence(spectral_profile(j, x), j, x, dropped)[1]


def feasibility_weights(sigma) -> np.ndarray:
    """
    P_k = (1/T_k) / sum_j (1/T_j) with T_k = sum_{i<=k} sigma_i / (sigma_i - sigma_{i+1}),
    sigma_{d+1} = 0
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.size == 0 or sigma[0] <= 0.0:
        raise NumericError("feasibility weights need a non zero singular value")
    if np.any(np.diff(sigma) > 0):
        raise ValueError("singular values must be non-increasing")
    gaps = np.maximum(sigma - np.append(sigma[1:], 0.0), GAP_FLOOR * sigma[0])
    inv = 1.0 / np.cumsum(sigma / gaps)
    return inv / inv.sum()


def weighted_bound(prof: SpectralProfile, kind: BoundKind = BoundKind.RANK_K) -> float:
    return float(feasibility_weights(prof.sigma) @ bound_sequence(prof, kind)[1:])


def score_bound(wb: float, cal: Calibration, mode: ScoringMode = ScoringMode.SIGMOID) -> float:
    """
    Maps a weighted bound to a risk score
    """
    match mode:
        case ScoringMode.SIGMOID:
            return float(expit(-cal.beta * (wb - cal.alpha)))
        case ScoringMode.INVERSE:
            if wb <= 0.0:
                raise NumericError("inverse scoring of a zero weighted bound")
            return 1.0 / wb


def invre(prof: SpectralProfile,
          cal: Calibration,
          bound: BoundKind = BoundKind.RANK_K,
          mode: ScoringMode = ScoringMode.SIGMOID,
          thresholds: RiskThresholds = RiskThresholds()) -> RiskReport:
    """
    Risk estimate of one instance

    :param prof: spectral profile of the normalized instance
    :param cal: alpha / beta
    :param bound: bound family; dnp / gnp need the matching noise projection
    :param mode: sigmoid (default) or inverse (1 / weighted bound, fixed-model comparisons)
    :param thresholds: risk band edges
    """
    return score_sequence(bound_sequence(prof, bound), prof.sigma, cal, mode, thresholds)


def score_sequence(tau,
                   sigma,
                   cal: Calibration,
                   mode: ScoringMode = ScoringMode.SIGMOID,
                   thresholds: RiskThresholds = RiskThresholds()) -> RiskReport:
    """
    Risk estimate from a precomputed bound sequence tau_0..tau_d, weighted by
    the feasibility of the spectrum sigma
    """
    tau = np.asarray(tau, dtype=np.float64)
    weights = feasibility_weights(sigma)
    if tau.size != weights.size + 1:
        raise ShapeError(f"{tau.size} bounds for {weights.size} singular values")
    wb = float(weights @ tau[1:])
    score = score_bound(wb, cal, mode)
    return RiskReport(tau, weights, wb, score, thresholds.band(score))


def calibrate_alpha(profiles: list[SpectralProfile], beta: float = DEFAULT_BETA) -> Calibration:
    """
    alpha = mean weighted bound over the profiles
    """
    if not profiles:
        raise ValueError("calibration needs at least one profile")
    if beta <= 0:
        raise ValueError("beta must be > 0")
    alpha = float(np.mean([weighted_bound(prof) for prof in profiles]))
    log.debug("calibrated alpha %.6g over %d profiles", alpha, len(profiles))
    return Calibration(alpha, beta)
