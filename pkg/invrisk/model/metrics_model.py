"""
Metrics model
"""
import math
from typing import NamedTuple

# PSNR of identical inputs is +inf; reports carry this cap instead
PSNR_REPORT_CAP = 99.0


class QualityScore(NamedTuple):
    mse: float
    psnr: float
    ssim: float | None

    def to_dict(self) -> dict:
        return {
            'mse': self.mse,
            'psnr': PSNR_REPORT_CAP if math.isinf(self.psnr) else min(self.psnr, PSNR_REPORT_CAP),
            'ssim': self.ssim
        }


class CorrelationResult(NamedTuple):
    r: float
    p_value: float
    n: int

    def to_dict(self) -> dict:
        return {'r': self.r, 'p_value': self.p_value, 'n': self.n}
