"""
Reconstruction quality metrics and correlation statistics
"""
import logging
import math

import numpy as np
from scipy.linalg import solve
from scipy.special import betainc

from invrisk.errors import NumericError, ShapeError
from invrisk.model.metrics_model import CorrelationResult, QualityScore

log = logging.getLogger("invrisk")

SSIM_WINDOW = 8
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.size != b.size:
        raise ShapeError(f"length mismatch {a.size} != {b.size}")
    return a, b


def mse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b, max_val: float = 1.0) -> float:
    """
    Peak signal-to-noise ratio in dB; +inf for identical inputs
    """
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(max_val ** 2 / err)


def ssim(a, b,
         window: int = SSIM_WINDOW,
         k1: float = SSIM_K1,
         k2: float = SSIM_K2,
         data_range: float = 1.0) -> float:
    """
    Structural similarity of two square images, averaged over non-overlapping
    uniform windows (edge windows may be smaller)

    :param a: image, flattened or square
    :param b: image of the same size
    """
    a, b = _pair(a, b)
    side = math.isqrt(a.size)
    if side * side != a.size:
        raise ShapeError(f"length {a.size} is not a perfect square")
    a = a.reshape(side, side)
    b = b.reshape(side, side)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    scores = []
    for row in range(0, side, window):
        for col in range(0, side, window):
            wa = a[row:row + window, col:col + window]
            wb = b[row:row + window, col:col + window]
            mu_a, mu_b = wa.mean(), wb.mean()
            var_a, var_b = wa.var(), wb.var()
            cov = np.mean((wa - mu_a) * (wb - mu_b))
            scores.append(((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                          / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)))
    return float(np.mean(scores))


def quality(reference, reconstruction) -> QualityScore:
    """
    mse, psnr and, for square inputs, ssim
    """
    reference, reconstruction = _pair(reference, reconstruction)
    side = math.isqrt(reference.size)
    structural = ssim(reference, reconstruction) if side * side == reference.size else None
    return QualityScore(mse(reference, reconstruction), psnr(reference, reconstruction), structural)


def pearson(xs, ys) -> CorrelationResult:
    """
    Product-moment correlation with a two-sided p-value from the t statistic,
    p = I_{df/(df+t^2)}(df/2, 1/2), df = n - 2
    """
    x, y = _pair(xs, ys)
    n = x.size
    if n < 3:
        raise ValueError("pearson needs at least 3 pairs")
    xm = x - x.mean()
    ym = y - y.mean()
    norm_x = np.linalg.norm(xm)
    norm_y = np.linalg.norm(ym)
    if norm_x == 0.0 or norm_y == 0.0:
        raise NumericError("correlation is undefined for a constant series")
    r = float(np.clip((xm / norm_x) @ (ym / norm_y), -1.0, 1.0))
    df = n - 2
    if abs(r) == 1.0:
        return CorrelationResult(r, 0.0, n)
    t2 = r * r * df / (1.0 - r * r)
    p = float(betainc(0.5 * df, 0.5, df / (df + t2)))
    return CorrelationResult(r, min(max(p, 0.0), 1.0), n)


def linear_probe_accuracy(train_x, train_labels, test_x, test_labels, ridge: float = 1e-2) -> float:
    """
    Accuracy on (test_x, test_labels) of a ridge-regularized least-squares
    classifier fitted on (train_x, train_labels); labels are 0 / 1

    :param ridge: L2 penalty, bias excluded
    """
    train_x = np.atleast_2d(np.asarray(train_x, dtype=np.float64))
    test_x = np.atleast_2d(np.asarray(test_x, dtype=np.float64))
    train_y = np.where(np.asarray(train_labels) > 0, 1.0, -1.0)
    test_y = np.where(np.asarray(test_labels) > 0, 1.0, -1.0)
    if train_x.shape[0] != train_y.size or test_x.shape[0] != test_y.size:
        raise ShapeError("one label per row is required")
    if train_x.shape[1] != test_x.shape[1]:
        raise ShapeError(f"feature width mismatch {train_x.shape[1]} != {test_x.shape[1]}")
    if test_y.size == 0 or train_y.size == 0:
        raise ValueError("train and test sets must be non empty")
    design = np.hstack([train_x, np.ones((train_x.shape[0], 1))])
    penalty = ridge * np.eye(design.shape[1])
    penalty[-1, -1] = 0.0
    w = solve(design.T @ design + penalty, design.T @ train_y, assume_a='sym')
    scores = np.hstack([test_x, np.ones((test_x.shape[0], 1))]) @ w
    return float(np.mean(np.where(scores >= 0.0, 1.0, -1.0) == test_y))
