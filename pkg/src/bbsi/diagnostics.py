"""Bootstrap pivot generation for checking the estimated conditional law.

Draw bootstrap datasets, keep the ones that reproduce the observed model,
and evaluate each kept replicate's estimated conditional CDF at its own
target statistic. If the learned law is accurate these pivots are uniform
on [0, 1]; the empirical CDF against the diagonal makes the check visual
and the KS statistic makes it quantitative.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .data import GaussianDecomposition, RandomSeed, resample
from .law import build_law, cdf
from .selectors import SelectionError, SelectorOutput

__all__ = [
    "PivotSample",
    "pivot_sample",
    "Ecdf",
    "ecdf",
    "ks_uniform",
    "write_pivots_csv",
    "write_ecdf_csv",
]


@dataclass(frozen=True)
class PivotSample:
    values: np.ndarray
    attempts: int
    accepted: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.size and (values.min() < 0.0 or values.max() > 1.0):
            raise ValueError("pivots must lie in [0, 1]")
        if self.accepted != values.size or self.accepted > self.attempts:
            raise ValueError("inconsistent acceptance bookkeeping")
        object.__setattr__(self, "values", values)

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.attempts if self.attempts else 0.0


def pivot_sample(
    dataset,
    selector,
    observed: SelectorOutput,
    pi,
    decomp: GaussianDecomposition,
    b_target: int,
    rng: RandomSeed,
    max_attempts: int | None = None,
    grid_size: int = 100,
    span: float = 10.0,
    trust_span: float | None = 4.0,
) -> PivotSample:
    """Accepted-replicate pivots of the estimated conditional law.

    Keeps the trained pi and the observed Gamma, sigma^2 for every accepted
    replicate; only the offset W* is recomputed from the replicate (its
    centered basis minus Gamma times its target). The law's grid stays
    centered at the original observed target. Attempt i uses streams
    rng.child(i, 0) for the resample and rng.child(i, 1) for selector noise.
    """
    if max_attempts is None:
        max_attempts = 50 * b_target
    theta_obs = float(np.atleast_1d(observed.theta_hat)[0])
    shift = observed.vhat
    values = []
    attempts = 0
    for i in range(max_attempts):
        if len(values) >= b_target:
            break
        attempts += 1
        replicate = resample(dataset, rng.child(i, 0))
        try:
            out = selector.run(replicate, rng.child(i, 1), anchor=observed.model)
        except SelectionError:
            continue
        if out.model != observed.model:
            continue
        theta_star = float(np.atleast_1d(out.theta_hat)[0])
        basis = out.basis if shift is None else out.basis + shift
        w_star = basis - decomp.gamma * theta_star
        law = build_law(
            pi,
            GaussianDecomposition(sigma2=decomp.sigma2, gamma=decomp.gamma, offset=w_star),
            theta_hat=theta_obs,
            grid_size=grid_size,
            span=span,
            trust_span=trust_span,
        )
        values.append(cdf(law, theta_obs, theta_star))
    if b_target > 0 and not values:
        raise RuntimeError(
            f"no replicate reproduced the observed model in {attempts} attempts"
        )
    return PivotSample(values=np.asarray(values), attempts=attempts, accepted=len(values))


class Ecdf:
    """Right-continuous empirical CDF."""

    def __init__(self, values):
        self._sorted = np.sort(np.asarray(values, dtype=float))
        self._n = self._sorted.size

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        counts = np.searchsorted(self._sorted, t, side="right")
        result = counts / self._n
        return float(result) if result.ndim == 0 else result


def ecdf(values) -> Ecdf:
    if len(values) == 0:
        raise ValueError("need at least one value")
    return Ecdf(values)


def ks_uniform(values) -> float:
    """sup_t |ECDF(t) - t| against the uniform distribution on [0, 1]."""
    u = np.sort(np.asarray(values, dtype=float))
    if u.size == 0:
        raise ValueError("need at least one value")
    n = u.size
    above = np.max(np.arange(1, n + 1) / n - u)
    below = np.max(u - np.arange(0, n) / n)
    return float(max(above, below))


def write_pivots_csv(sample: PivotSample, path) -> None:
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pivot"])
        for v in sample.values:
            writer.writerow([f"{v:.17g}"])


def write_ecdf_csv(values, path) -> None:
    """Two columns (t, ECDF(t)) at the sorted sample points."""
    fn = ecdf(values)
    ts = np.sort(np.asarray(values, dtype=float))
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "ecdf"])
        for t in ts:
            writer.writerow([f"{t:.17g}", f"{fn(t):.17g}"])
