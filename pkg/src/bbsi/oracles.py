"""Closed-form two-stage winner-selection laws used as ground truth.

These are the exact conditional distributions for the drop-the-losers
design: the hard-truncated normal (conditioning on everything ancillary)
and its marginalized counterpart whose selection weight is a smooth normal
CDF. The learned pipeline is validated against them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

__all__ = [
    "DtlInstance",
    "norm_cdf",
    "norm_sf",
    "norm_logsf",
    "norm_pdf",
    "norm_ppf",
    "tn_cdf",
    "tn_pvalue",
    "tn_ci",
    "marginal_pi",
    "marginal_cdf",
    "marginal_ci",
]

_SQRT2 = math.sqrt(2.0)


# Normal CDF/SF via the complementary error function: the truncated forms
# divide by tiny survival probabilities, so the tails must stay accurate.
def norm_cdf(x):
    return 0.5 * special.erfc(-np.asarray(x, dtype=float) / _SQRT2)


def norm_sf(x):
    return 0.5 * special.erfc(np.asarray(x, dtype=float) / _SQRT2)


def norm_logsf(x):
    return special.log_ndtr(-np.asarray(x, dtype=float))


def norm_pdf(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def norm_ppf(q):
    return special.ndtri(q)


@dataclass(frozen=True)
class DtlInstance:
    """Summaries of one two-stage winner-selection draw.

    sigma2 is Var(theta_hat) = 1/(n1+n2); s2 = 1/n1 - 1/(n1+n2) is the
    variance of the winner's first-stage mean around theta_hat; a is the
    best rival first-stage mean and b the winner's excess over theta_hat,
    so the hard truncation point is a - b.
    """

    sigma2: float
    s2: float
    a: float
    theta_hat: float
    b: float

    def __post_init__(self):
        if self.sigma2 <= 0.0 or self.s2 <= 0.0:
            raise ValueError("sigma2 and s2 must be strictly positive")
        if not np.isfinite(self.a):
            raise ValueError("a must be finite")

    @property
    def ab_threshold(self) -> float:
        return self.a - self.b

    @classmethod
    def from_two_stage(cls, group_means, second_stage_mean, n1, n2) -> "DtlInstance":
        means = np.asarray(group_means, dtype=float)
        winner = int(np.argmax(means))
        theta_hat = (n1 * means[winner] + n2 * second_stage_mean) / (n1 + n2)
        rivals = np.delete(means, winner)
        return cls(
            sigma2=1.0 / (n1 + n2),
            s2=1.0 / n1 - 1.0 / (n1 + n2),
            a=float(np.max(rivals)),
            theta_hat=float(theta_hat),
            b=float(means[winner] - theta_hat),
        )


def tn_cdf(theta, sigma, lower, x):
    """CDF of a normal(theta, sigma^2) truncated to [lower, +inf).

    Computed from log survival functions so the ratio stays accurate even
    when the truncation point sits far above theta.
    """
    if sigma <= 0.0:
        raise ValueError("sigma must be strictly positive")
    if np.isneginf(lower):
        return float(norm_cdf((x - theta) / sigma))
    z_low = (lower - theta) / sigma
    if norm_logsf(z_low) < math.log(1e-300):
        raise ValueError("truncation beyond support: survival mass below 1e-300")
    if x <= lower:
        return 0.0
    z_x = (x - theta) / sigma
    # P(X <= x) = 1 - sf(z_x)/sf(z_low), evaluated via log sf for stability.
    ratio = math.exp(norm_logsf(z_x) - norm_logsf(z_low))
    return float(min(max(1.0 - ratio, 0.0), 1.0))


def tn_sf(theta, sigma, lower, x):
    """Upper tail probability of the truncated normal."""
    if sigma <= 0.0:
        raise ValueError("sigma must be strictly positive")
    if np.isneginf(lower):
        return float(norm_sf((x - theta) / sigma))
    z_low = (lower - theta) / sigma
    if norm_logsf(z_low) < math.log(1e-300):
        raise ValueError("truncation beyond support: survival mass below 1e-300")
    if x <= lower:
        return 1.0
    z_x = (x - theta) / sigma
    return float(min(math.exp(norm_logsf(z_x) - norm_logsf(z_low)), 1.0))


def tn_pvalue(instance: DtlInstance, theta0: float) -> float:
    """One-sided upper p-value at theta0 under the hard-truncated law."""
    return tn_sf(
        theta0,
        math.sqrt(instance.sigma2),
        instance.ab_threshold,
        instance.theta_hat,
    )


def _bisect_decreasing(func, target, lo, hi, tol, max_iter=200):
    """Solve func(t) = target for decreasing func on [lo, hi]; None if unbracketed."""
    f_lo = func(lo)
    f_hi = func(hi)
    if f_lo < target or f_hi > target:
        return None
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if func(mid) >= target:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


def tn_ci(instance: DtlInstance, alpha: float):
    """Equal-tailed interval from inverting the truncated-normal test.

    The CDF at the observed statistic is decreasing in theta, so each
    endpoint is a bisection solve. An endpoint that is not bracketed within
    a 30-sigma window is reported as infinite; the hard-truncated law is
    known to produce arbitrarily long intervals when the observation sits
    close to the truncation point.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    sigma = math.sqrt(instance.sigma2)
    obs = instance.theta_hat
    lower_trunc = instance.ab_threshold

    def cdf_at_obs(theta):
        return tn_cdf(theta, sigma, lower_trunc, obs)

    tol = 1e-8 * sigma
    lo_bound, hi_bound = obs - 30.0 * sigma, obs + 30.0 * sigma
    upper = _bisect_decreasing(cdf_at_obs, alpha / 2.0, lo_bound, hi_bound, tol)
    lower = _bisect_decreasing(cdf_at_obs, 1.0 - alpha / 2.0, lo_bound, hi_bound, tol)
    return (
        -math.inf if lower is None else lower,
        math.inf if upper is None else upper,
    )


def marginal_pi(instance: DtlInstance, x) -> float:
    """Smooth selection probability Phi((x - a) / s) of the marginalized law."""
    return norm_cdf((np.asarray(x, dtype=float) - instance.a) / math.sqrt(instance.s2))


def _simpson(values: np.ndarray, h: float) -> float:
    # composite Simpson rule; len(values) must be odd
    return (h / 3.0) * (
        values[0]
        + values[-1]
        + 4.0 * values[1:-1:2].sum()
        + 2.0 * values[2:-2:2].sum()
    )


def _marginal_numerator(instance: DtlInstance, theta: float, x: float, tol=1e-10):
    """Integral of phi(t; theta, sigma^2) Phi((t - a)/s) from -inf to x."""
    sigma = math.sqrt(instance.sigma2)
    s = math.sqrt(instance.s2)
    lo = theta - 12.0 * math.sqrt(instance.sigma2 + instance.s2)
    if x <= lo:
        return 0.0

    def integrand(t):
        return norm_pdf((t - theta) / sigma) / sigma * norm_cdf((t - instance.a) / s)

    n = 512
    previous = None
    while n <= 2**16:
        grid = np.linspace(lo, x, n + 1)
        value = _simpson(integrand(grid), (x - lo) / n)
        if previous is not None and abs(value - previous) < tol:
            return value
        previous = value
        n *= 2
    return previous


def _marginal_denominator(instance: DtlInstance, theta: float) -> float:
    pooled_sd = math.sqrt(instance.sigma2 + instance.s2)
    return float(norm_sf((instance.a - theta) / pooled_sd))


def marginal_cdf(instance: DtlInstance, theta: float, x: float) -> float:
    """CDF of the marginalized conditional law by adaptive quadrature."""
    denominator = _marginal_denominator(instance, theta)
    if denominator < 1e-300:
        raise ValueError("marginal law denominator underflow")
    value = _marginal_numerator(instance, theta, x) / denominator
    return float(min(max(value, 0.0), 1.0))


def marginal_ci(instance: DtlInstance, alpha: float, one_sided: bool = False):
    """Invert the marginalized law over theta.

    Two-sided: equal-tailed 1-alpha interval. One-sided: the upper
    confidence bound, returned as (-inf, U). The selection event favors
    large values of the target, so the upper direction is the one the
    adaptive data sharpens; the gap U - theta_hat is the quantity bounded
    by the second-stage-only interval half-width.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    obs = instance.theta_hat
    scale = math.sqrt(instance.sigma2 + instance.s2)

    def cdf_at_obs(theta):
        return marginal_cdf(instance, theta, obs)

    tol = 1e-8 * math.sqrt(instance.sigma2)
    # keep the window inside the region where the normalizer has mass
    lo_floor = instance.a - 34.0 * scale

    def solve(target):
        width = 8.0 * scale
        for _ in range(14):
            lo = max(obs - width, lo_floor)
            hi = obs + width
            root = _bisect_decreasing(cdf_at_obs, target, lo, hi, tol)
            if root is not None:
                return root
            if lo == lo_floor and cdf_at_obs(lo_floor) < target:
                return None
            width *= 2.0
        return None

    if one_sided:
        upper = solve(alpha)
        return (-math.inf, math.inf if upper is None else upper)
    upper = solve(alpha / 2.0)
    lower = solve(1.0 - alpha / 2.0)
    return (
        -math.inf if lower is None else lower,
        math.inf if upper is None else upper,
    )
