"""Grid-supported exponential family for conditional inference.

The conditional density of the target given selection is approximated on a
grid: the weight at grid point x is exp(theta x / sigma^2 - x^2 / (2 sigma^2))
times the learned selection probability at Gamma x + W. Tilting in theta is
then closed-form, the CDF is a normalized cumulative sum, and the monotone
likelihood ratio in theta makes interval inversion a pair of bisections.
All weight arithmetic happens in log space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import GaussianDecomposition

__all__ = [
    "ConditionalLaw",
    "DegenerateLawError",
    "CiResult",
    "build_law",
    "cdf",
    "pvalue",
    "invert_ci",
    "nuisance_condition",
    "law_to_text",
    "law_from_text",
]

_LOG_FLOOR = math.log(1e-300)


class DegenerateLawError(RuntimeError):
    """The selection probability vanishes over the whole grid."""


@dataclass(frozen=True)
class ConditionalLaw:
    """Grid, log selection weights, and the decomposition pieces behind them."""

    grid: np.ndarray
    log_pi: np.ndarray
    sigma2: float
    theta_hat: float
    gamma: np.ndarray | None = None
    offset: np.ndarray | None = None

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        log_pi = np.asarray(self.log_pi, dtype=float)
        if grid.ndim != 1 or grid.shape != log_pi.shape:
            raise ValueError("grid and log_pi must be aligned vectors")
        if np.any(np.diff(grid) <= 0.0):
            raise ValueError("grid must be strictly increasing")
        if self.sigma2 <= 0.0:
            raise ValueError("sigma2 must be strictly positive")
        if not np.any(log_pi > _LOG_FLOOR):
            raise DegenerateLawError("selection probability below 1e-300 on the whole grid")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "log_pi", log_pi)

    @property
    def spacing(self) -> float:
        return float(self.grid[1] - self.grid[0])


def _evaluate_pi(pi, points: np.ndarray) -> np.ndarray:
    if hasattr(pi, "predict"):
        return np.asarray(pi.predict(points), dtype=float)
    return np.asarray(pi(points), dtype=float)


def build_law(
    pi,
    decomp: GaussianDecomposition,
    theta_hat: float,
    grid_size: int = 100,
    span: float = 10.0,
    trust_span: float | None = None,
) -> ConditionalLaw:
    """Equally spaced grid on theta_hat +/- span * sigma with log weights.

    ``pi`` is either a trained estimate (anything with ``predict`` mapping
    an (n, d) array to probabilities) or a plain callable doing the same.
    The selection probability is evaluated once per grid point at
    Gamma x_g + W.

    ``trust_span`` clamps the evaluation argument to theta_hat +/-
    trust_span * sigma, continuing the estimate flat outside that range.
    Bootstrap training data only reaches a few sigma from the observed
    target, and beyond it a fitted network extrapolates arbitrarily
    (measured: a spurious decay that inflates intervals), while true
    selection probabilities plateau along the target direction; laws built
    from a trained estimate should pass roughly the supported radius.
    The default evaluates every grid point exactly (right for closed-form
    pi).
    """
    if not decomp.is_scalar:
        raise ValueError("build_law needs a scalar-target decomposition")
    sigma = decomp.sigma()
    grid = np.linspace(theta_hat - span * sigma, theta_hat + span * sigma, grid_size)
    if trust_span is None:
        eval_grid = grid
    else:
        eval_grid = np.clip(
            grid, theta_hat - trust_span * sigma, theta_hat + trust_span * sigma
        )
    points = eval_grid[:, None] * decomp.gamma[None, :] + decomp.offset[None, :]
    probs = _evaluate_pi(pi, points)
    if probs.shape != grid.shape:
        raise ValueError("selection probability must return one value per grid point")
    with np.errstate(divide="ignore"):
        log_pi = np.where(probs > 0.0, np.log(np.maximum(probs, 1e-300)), -np.inf)
    return ConditionalLaw(
        grid=grid,
        log_pi=log_pi,
        sigma2=decomp.sigma2,
        theta_hat=float(theta_hat),
        gamma=decomp.gamma,
        offset=decomp.offset,
    )


def _weights(law: ConditionalLaw, theta: float) -> np.ndarray:
    logw = (theta * law.grid - 0.5 * law.grid**2) / law.sigma2 + law.log_pi
    peak = np.max(logw)
    if not np.isfinite(peak):
        raise AssertionError("all tilted weights vanished; law should have been degenerate")
    return np.exp(logw - peak)


def cdf(law: ConditionalLaw, theta: float, x: float) -> float:
    """Normalized mass on grid points at or below x under the theta-tilt."""
    w = _weights(law, theta)
    total = w.sum()
    assert total > 0.0
    return float(w[law.grid <= x].sum() / total)


def pvalue(law: ConditionalLaw, theta0: float, x_obs: float, alternative: str = "greater") -> float:
    """Tail probability at theta0; the atom at x_obs counts toward the tail.

    For "greater" the mass strictly below x_obs is excluded, which makes the
    one-sided p-value conservative at the observed grid point.
    """
    w = _weights(law, theta0)
    total = w.sum()
    upper = float(w[law.grid >= x_obs].sum() / total)
    lower = float(w[law.grid <= x_obs].sum() / total)
    if alternative == "greater":
        return upper
    if alternative == "less":
        return lower
    if alternative == "two-sided":
        return min(1.0, 2.0 * min(upper, lower))
    raise ValueError("alternative must be greater, less, or two-sided")


@dataclass(frozen=True)
class CiResult:
    lower: float
    upper: float
    clipped_lower: bool = False
    clipped_upper: bool = False

    @property
    def length(self) -> float:
        return self.upper - self.lower

    @property
    def clipped(self) -> bool:
        return self.clipped_lower or self.clipped_upper

    def covers(self, value: float) -> bool:
        return self.lower <= value <= self.upper


def invert_ci(law: ConditionalLaw, x_obs: float, alpha: float = 0.1) -> CiResult:
    """Endpoints of {theta : alpha/2 <= H(theta; x_obs) <= 1 - alpha/2}.

    H(theta; x) is non-increasing in theta (monotone likelihood ratio of the
    tilted family), so each endpoint is found by bisection over
    theta_hat +/- 12 sigma. An endpoint whose defining equation is not
    bracketed inside the window is clipped to the window edge and flagged.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if not law.grid[0] <= x_obs <= law.grid[-1]:
        raise ValueError("x_obs lies outside the grid span")
    sigma = math.sqrt(law.sigma2)
    lo_bound = law.theta_hat - 12.0 * sigma
    hi_bound = law.theta_hat + 12.0 * sigma
    tol = 1e-6 * sigma

    def solve(target):
        lo, hi = lo_bound, hi_bound
        if cdf(law, lo, x_obs) < target:
            return lo, True
        if cdf(law, hi, x_obs) > target:
            return hi, True
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if cdf(law, mid, x_obs) >= target:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi), False

    upper, clip_hi = solve(alpha / 2.0)
    lower, clip_lo = solve(1.0 - alpha / 2.0)
    return CiResult(lower=lower, upper=upper, clipped_lower=clip_lo, clipped_upper=clip_hi)


def nuisance_condition(
    theta_hat: np.ndarray,
    sigma: np.ndarray,
    j: int,
    gamma: np.ndarray,
    offset: np.ndarray,
) -> tuple[GaussianDecomposition, float]:
    """Reduce an s-dimensional target to a univariate law for coordinate j.

    Conditioning on theta_perp = theta_hat - Sigma_{.,j} theta_hat_j / Sigma_jj
    turns the selection weight into pi(Gamma (Sigma_{.,j} x / Sigma_jj +
    theta_perp) + W), an affine map of x, so the result is an equivalent
    scalar decomposition ready for build_law with the same pi.
    """
    theta_hat = np.atleast_1d(np.asarray(theta_hat, dtype=float))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    gamma = np.asarray(gamma, dtype=float)
    if gamma.ndim == 1:
        gamma = gamma[:, None]
    if gamma.shape[1] != theta_hat.shape[0]:
        raise ValueError("gamma columns must match the target dimension")
    sigma_jj = float(sigma[j, j])
    if sigma_jj <= 0.0:
        raise ValueError("Sigma_jj must be strictly positive")
    direction = sigma[:, j] / sigma_jj
    theta_perp = theta_hat - direction * theta_hat[j]
    gamma_eff = gamma @ direction
    offset_eff = gamma @ theta_perp + np.asarray(offset, dtype=float)
    reduced = GaussianDecomposition(sigma2=sigma_jj, gamma=gamma_eff, offset=offset_eff)
    return reduced, float(theta_hat[j])


def law_to_text(law: ConditionalLaw) -> str:
    """Flat text block: sigma2 and theta_hat, then grid and log weights."""
    lines = [
        "bbsi-law 1",
        f"sigma2 {law.sigma2:.17g}",
        f"theta_hat {law.theta_hat:.17g}",
        "grid " + " ".join(f"{v:.17g}" for v in law.grid),
        "log_pi " + " ".join(f"{v:.17g}" for v in law.log_pi),
    ]
    return "\n".join(lines) + "\n"


def law_from_text(text: str) -> ConditionalLaw:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("bbsi-law"):
        raise ValueError("not a serialized law")
    fields = {}
    for line in lines[1:]:
        key, _, rest = line.partition(" ")
        fields[key] = rest
    return ConditionalLaw(
        grid=np.array([float(v) for v in fields["grid"].split()]),
        log_pi=np.array([float(v) for v in fields["log_pi"].split()]),
        sigma2=float(fields["sigma2"]),
        theta_hat=float(fields["theta_hat"]),
    )
