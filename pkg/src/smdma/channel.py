"""Shadowed-Rician fading channel for the satellite-ground downlink.

Power-gain density (Abdi et al., "A new simple model for land mobile
satellite channels", IEEE Trans. Wireless Commun. 2003):

    f(r) = (2 b0 m / (2 b0 m + Omega))^m * 1/(2 b0) * exp(-r / (2 b0))
           * 1F1(m, 1, Omega r / (2 b0 (2 b0 m + Omega)))

with b0 the average scattered power, m the Nakagami shadowing parameter,
and Omega the LOS power.  Samples come from the generative construction
|A + Z|^2 with A^2 ~ Gamma(m, Omega/m) shadowed LOS power and Z circular
complex Gaussian scatter with E|Z|^2 = 2 b0, so E r = 2 b0 + Omega.

SNR is defined at the channel input against unit transmit power: the noise
variance is 10^(-snr_db / 10).  Fading multiplies the amplitude by sqrt(r)
and is drawn once per frame (block fading).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericError
from .rng import stream

HYP1F1_RTOL = 1e-15
HYP1F1_MAX_TERMS = 10_000


@dataclass(frozen=True)
class SrParams:
    b0: float = 0.158
    m: float = 19.4
    omega: float = 1.29

    def __post_init__(self):
        if self.b0 <= 0.0 or self.m <= 0.0 or self.omega < 0.0:
            raise ValueError(f"invalid Shadowed-Rician parameters {self}")

    @property
    def mean_power(self) -> float:
        return 2.0 * self.b0 + self.omega


def hyp1f1(a: float, b: float, x: float) -> float:
    """Confluent hypergeometric 1F1(a; b; x) by direct series, x >= 0.

    Terms are accumulated until the latest one falls below 1e-15 of the
    partial sum; failure to converge within 10^4 terms raises, carrying
    the partial value.
    """
    if b <= 0.0 and float(b).is_integer():
        raise ValueError(f"b must not be a non-positive integer, got {b}")
    if x < 0.0:
        raise ValueError(f"x must be >= 0, got {x}")
    total = 1.0
    term = 1.0
    for k in range(HYP1F1_MAX_TERMS):
        term *= (a + k) * x / ((b + k) * (k + 1))
        total += term
        if abs(term) < HYP1F1_RTOL * abs(total):
            return total
    raise NumericError(
        f"1F1({a}, {b}, {x}) did not converge in {HYP1F1_MAX_TERMS} terms",
        partial=total)


def sr_pdf(r: float, p: SrParams) -> float:
    """Shadowed-Rician power-gain density at r >= 0."""
    if r < 0.0:
        raise ValueError(f"r must be >= 0, got {r}")
    denom = 2.0 * p.b0 * p.m + p.omega
    prefactor = (2.0 * p.b0 * p.m / denom) ** p.m / (2.0 * p.b0)
    arg = p.omega * r / (2.0 * p.b0 * denom)
    return prefactor * math.exp(-r / (2.0 * p.b0)) * hyp1f1(p.m, 1.0, arg)


def sr_tail_cutoff(p: SrParams, decades: float = 18.0) -> float:
    """r beyond which the density is below ~10^-decades of its peak scale.

    The density's envelope decays like exp(-m r / (2 b0 m + omega)); past
    the cutoff the series argument would also overflow float64, so finite
    quadrature should stop here (the neglected tail mass is far below any
    tolerance used in this package).
    """
    rate = p.m / (2.0 * p.b0 * p.m + p.omega)
    return decades * math.log(10.0) / rate


def sr_sample(n: int, p: SrParams, seed_or_rng) -> np.ndarray:
    """Draw n power gains; deterministic given (seed, params).

    Draw order: Gamma shadowed-LOS powers, then the two scatter normal
    batches, each vectorized over n.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = seed_or_rng if isinstance(seed_or_rng, np.random.Generator) \
        else stream(int(seed_or_rng), "sr-sample")
    los_amp = np.sqrt(rng.gamma(shape=p.m, scale=p.omega / p.m, size=n))
    sigma = math.sqrt(p.b0)
    z_re = rng.normal(0.0, sigma, size=n)
    z_im = rng.normal(0.0, sigma, size=n)
    return (los_amp + z_re) ** 2 + z_im ** 2


def sr_cdf_grid(p: SrParams, r_max: float | None = None,
                n_points: int = 12_001) -> tuple[np.ndarray, np.ndarray]:
    """Dense quadrature CDF of the power gain on [0, r_max]."""
    from scipy.integrate import cumulative_trapezoid

    if r_max is None:
        r_max = sr_tail_cutoff(p)
    grid = np.linspace(0.0, r_max, n_points)
    dens = np.array([sr_pdf(r, p) for r in grid])
    cdf = np.concatenate(([0.0], cumulative_trapezoid(dens, grid)))
    return grid, np.clip(cdf, 0.0, 1.0)


def ks_statistic(samples: np.ndarray, grid: np.ndarray, cdf: np.ndarray) -> float:
    """Two-sided KS distance between an empirical sample and a gridded CDF."""
    xs = np.sort(np.asarray(samples, dtype=np.float64))
    n = xs.size
    model = np.interp(xs, grid, cdf, left=0.0, right=1.0)
    upper = np.abs(np.arange(1, n + 1) / n - model)
    lower = np.abs(np.arange(0, n) / n - model)
    return float(max(upper.max(), lower.max()))


# ---------------------------------------------------------------------------
# Frame transmission
# ---------------------------------------------------------------------------

MODES = ("sr_fading", "awgn_only")


@dataclass(frozen=True)
class ChannelRealization:
    """One frame's channel state: power gain and noise variance."""

    mode: str
    snr_db: float
    gain: float
    sigma2: float


def realize_channel(mode: str, snr_db: float, params: SrParams,
                    rng: np.random.Generator) -> ChannelRealization:
    """Draw one block-fading realization (gain fixed for the frame)."""
    if mode not in MODES:
        raise ValueError(f"unknown channel mode {mode!r}")
    gain = float(sr_sample(1, params, rng)[0]) if mode == "sr_fading" else 1.0
    sigma2 = 10.0 ** (-snr_db / 10.0)
    return ChannelRealization(mode=mode, snr_db=snr_db, gain=gain, sigma2=sigma2)


def apply_channel(y: np.ndarray, real: ChannelRealization,
                  rng: np.random.Generator) -> np.ndarray:
    """sqrt(gain) * y + white Gaussian noise at the realization's variance."""
    y = np.asarray(y, dtype=np.float64)
    if y.size == 0:
        raise ValueError("cannot transmit an empty sequence")
    noise = rng.normal(0.0, math.sqrt(real.sigma2), size=y.shape)
    return math.sqrt(real.gain) * y + noise
