"""Monte Carlo study of the ratio between the two deviation metrics.

For Gaussian data the standard deviation exceeds the mean absolute deviation
by exactly sqrt(π/2) ≈ 1.2533 (the absolute deviation of a centered Gaussian
is half-normal with mean σ·sqrt(2/π)).  These trials measure the empirical
ratio per feature/channel and report histograms of both deviations; the ratio
is location- and scale-free, so any affine transform of the input leaves it
unchanged.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .batchnorm import GAUSSIAN_STD_OVER_MAD, batch_axes, l1_batch_stats, l2_batch_stats, pooled_count
from .tensor import DomainError, Rng

HISTOGRAM_BINS = 50
DEFAULT_BAND_HALF_WIDTH = 0.01


class StatisticsError(ValueError):
    """Pooled sample count too small for a meaningful ratio."""


@dataclass
class Histogram:
    """Counts over log10-spaced bins (equivalently, linear bins in log10 σ)."""

    counts: list[int]
    bin_edges_log10: list[float]

    @classmethod
    def of(cls, values: np.ndarray, bins: int = HISTOGRAM_BINS) -> "Histogram":
        counts, edges = np.histogram(np.log10(values), bins=bins)
        return cls(counts=[int(c) for c in counts],
                   bin_edges_log10=[float(e) for e in edges])


@dataclass
class RatioReport:
    """Per-feature deviations, their ratios, and the gap to the Gaussian constant."""

    sigma_l2: np.ndarray
    sigma_l1: np.ndarray
    ratios: np.ndarray
    mean_ratio: float
    gaussian_gap: float          # mean_ratio - sqrt(π/2)
    in_gaussian_band: bool
    band_half_width: float
    sample_count: int            # pooled samples behind each deviation
    hist_l2: Histogram
    hist_l1: Histogram

    def rows(self) -> list[tuple[int, float, float, float]]:
        return [
            (k, float(self.sigma_l2[k]), float(self.sigma_l1[k]), float(self.ratios[k]))
            for k in range(self.ratios.shape[0])
        ]

    def to_dict(self) -> dict:
        return {
            "mean_ratio": self.mean_ratio,
            "gaussian_constant": GAUSSIAN_STD_OVER_MAD,
            "gaussian_gap": self.gaussian_gap,
            "in_gaussian_band": self.in_gaussian_band,
            "band_half_width": self.band_half_width,
            "sample_count": self.sample_count,
            "num_features": int(self.ratios.shape[0]),
            "ratios": [float(r) for r in self.ratios],
            "hist_l2": dataclasses.asdict(self.hist_l2),
            "hist_l1": dataclasses.asdict(self.hist_l1),
        }


def deviation_pair(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature (std, mean-absolute-deviation) about the pooled mean."""
    sigma_l2 = np.sqrt(l2_batch_stats(x)[1])
    sigma_l1 = l1_batch_stats(x, compensate=False)[1]
    return sigma_l2, sigma_l1


def _report(x: np.ndarray, band_half_width: float) -> RatioReport:
    sigma_l2, sigma_l1 = deviation_pair(x)
    ratios = sigma_l2 / sigma_l1
    mean_ratio = float(np.mean(ratios))
    gap = mean_ratio - GAUSSIAN_STD_OVER_MAD
    return RatioReport(
        sigma_l2=sigma_l2,
        sigma_l1=sigma_l1,
        ratios=np.atleast_1d(ratios),
        mean_ratio=mean_ratio,
        gaussian_gap=gap,
        in_gaussian_band=bool(abs(gap) <= band_half_width),
        band_half_width=band_half_width,
        sample_count=pooled_count(x.shape),
        hist_l2=Histogram.of(np.atleast_1d(sigma_l2)),
        hist_l1=Histogram.of(np.atleast_1d(sigma_l1)),
    )


def gaussian_ratio_trial(n: int, mu: float = 0.0, sigma: float = 1.0,
                         seed: int = 0,
                         band_half_width: float = DEFAULT_BAND_HALF_WIDTH) -> RatioReport:
    """Draw n Gaussians and measure std / mean-absolute-deviation."""
    if sigma <= 0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    if n < 100:
        raise StatisticsError(f"need at least 100 samples, got {n}")
    x = Rng(seed).normal((n, 1), mu, sigma)
    return _report(x, band_half_width)


def uniform_ratio_trial(n: int, low: float = -1.0, high: float = 1.0,
                        seed: int = 0,
                        band_half_width: float = DEFAULT_BAND_HALF_WIDTH) -> RatioReport:
    """Non-Gaussian control: uniform inputs land at ratio 2/sqrt(3) ≈ 1.1547."""
    if n < 100:
        raise StatisticsError(f"need at least 100 samples, got {n}")
    if high <= low:
        raise DomainError(f"empty interval [{low}, {high})")
    x = Rng(seed).uniform((n, 1), low, high)
    return _report(x, band_half_width)


def channelwise_ratio_map(x: np.ndarray,
                          band_half_width: float = DEFAULT_BAND_HALF_WIDTH) -> RatioReport:
    """Per-feature/channel ratio map of an activation tensor (2-D or 4-D)."""
    x = np.asarray(x, dtype=np.float64)
    batch_axes(x.shape)
    if pooled_count(x.shape) < 100:
        raise StatisticsError(
            f"pooled count {pooled_count(x.shape)} < 100; ratios would be noise"
        )
    return _report(x, band_half_width)
