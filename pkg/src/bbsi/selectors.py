"""Re-runnable selection algorithms and their canonical model encodings.

Each selector exposes ``run(data, rng, anchor=None)`` returning the selected
model together with the basis vector the selection depends on and the target
statistic. ``anchor`` fixes the model whose structure defines the basis and
target (needed when re-running on bootstrap data: the basis of a replicate is
computed with respect to the originally observed model). Selectors consume
randomness only from the rng they are handed, so a rerun with the same
(data, rng) reproduces the model exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .data import GroupedData, RandomSeed, RegressionData, StagedTwoSampleData

__all__ = [
    "ModelId",
    "SelectorOutput",
    "SelectionError",
    "dtl_select",
    "dtl_outputs",
    "DtlSelector",
    "soft_threshold",
    "lasso_cd",
    "carve_select",
    "CarveSelector",
    "bh_select",
    "BhSelector",
    "two_sample_t",
    "repeated_test_run",
    "RepeatedTestSelector",
]


class SelectionError(RuntimeError):
    """Raised when a selector cannot produce a model (nothing selected)."""


@dataclass(frozen=True, order=True)
class ModelId:
    """Canonical encoding of a selection outcome with structural equality."""

    kind: str
    payload: tuple[int, ...]

    @classmethod
    def winner(cls, index: int) -> "ModelId":
        return cls("winner", (int(index),))

    @classmethod
    def support(cls, indices) -> "ModelId":
        return cls("support", tuple(sorted(set(int(i) for i in indices))))

    @classmethod
    def rejection_set(cls, indices) -> "ModelId":
        return cls("rejection_set", tuple(sorted(set(int(i) for i in indices))))

    @classmethod
    def stopped_at(cls, stage: int) -> "ModelId":
        if stage < 1:
            raise ValueError("stopping stage must be at least 1")
        return cls("stopped_at", (int(stage),))


@dataclass(frozen=True)
class SelectorOutput:
    model: ModelId
    basis: np.ndarray
    theta_hat: float | np.ndarray
    vhat: np.ndarray | None = None
    aux: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Drop-the-losers


def dtl_select(group_means) -> ModelId:
    """Index of the maximal mean; ties break to the lowest index."""
    means = np.asarray(group_means, dtype=float)
    if means.size < 2:
        raise ValueError("need at least two groups")
    if not np.all(np.isfinite(means)):
        raise ValueError("group means must be finite")
    return ModelId.winner(int(np.argmax(means)))


def dtl_outputs(
    first_stage: GroupedData,
    second_stage,
    marginalize: bool = False,
    anchor_winner: int | None = None,
) -> SelectorOutput:
    """Model, basis and pooled target for a two-stage winner-selection run.

    The plain basis is the vector of first-stage group means. With
    ``marginalize`` the winner coordinate is replaced by the pooled
    two-stage mean and the removed part e_k (Xbar_k - theta_hat) is
    reported as ``vhat``. ``anchor_winner`` pins which coordinate plays
    the winner's role (the observed winner when re-running on bootstrap
    data); the selected model itself is always this run's own argmax.
    """
    means = np.array([g.mean() for g in first_stage.groups], dtype=float)
    model = dtl_select(means)
    k = int(np.argmax(means)) if anchor_winner is None else int(anchor_winner)
    second = np.asarray(second_stage, dtype=float)
    n1 = first_stage.groups[k].size
    n2 = second.size
    if n2 == 0:
        theta_hat = float(means[k])
    else:
        theta_hat = float((n1 * means[k] + n2 * second.mean()) / (n1 + n2))
    basis = means.copy()
    vhat = None
    if marginalize:
        basis[k] = theta_hat
        vhat = np.zeros_like(basis)
        vhat[k] = means[k] - theta_hat
    return SelectorOutput(
        model=model,
        basis=basis,
        theta_hat=theta_hat,
        vhat=vhat,
        aux={"winner": k, "group_means": means},
    )


class DtlSelector:
    """Winner-takes-the-second-stage selector over K groups.

    Expects ``GroupedData`` with K + 1 groups: the K first-stage groups
    followed by the winner-arm second-stage block.
    """

    def __init__(self, n_groups: int, marginalize: bool = False):
        self.n_groups = int(n_groups)
        self.marginalize = bool(marginalize)

    def run(self, data: GroupedData, rng: RandomSeed, anchor: ModelId | None = None) -> SelectorOutput:
        if data.n_groups != self.n_groups + 1:
            raise ValueError("expected K first-stage groups plus one second-stage block")
        first = GroupedData(data.groups[: self.n_groups])
        second = data.groups[self.n_groups]
        anchor_winner = anchor.payload[0] if anchor is not None else None
        return dtl_outputs(first, second, self.marginalize, anchor_winner)


# ---------------------------------------------------------------------------
# Lasso and data carving


def soft_threshold(z, threshold):
    z = np.asarray(z, dtype=float)
    return np.sign(z) * np.maximum(np.abs(z) - threshold, 0.0)


def lasso_cd(x, y, lam: float, tol: float = 1e-8, max_sweeps: int = 10_000) -> np.ndarray:
    """Cyclic coordinate descent for (1/2n)||y - Xb||^2 + lam ||b||_1.

    Uses covariance updates with an active-set inner loop; converged when a
    full sweep moves no coordinate by more than ``tol``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite entries in the lasso problem")
    if lam <= 0.0:
        raise ValueError("lambda must be strictly positive")
    n, p = x.shape
    gram = x.T @ x / n
    xty = x.T @ y / n
    diag = np.diag(gram).copy()
    beta = np.zeros(p)

    def sweep(indices):
        max_delta = 0.0
        for j in indices:
            if diag[j] == 0.0:
                continue
            rho = xty[j] - gram[j] @ beta + diag[j] * beta[j]
            new = soft_threshold(rho, lam) / diag[j]
            delta = new - beta[j]
            if delta != 0.0:
                beta[j] = new
            max_delta = max(max_delta, abs(delta))
        return max_delta

    everything = range(p)
    sweeps = 0
    while sweeps < max_sweeps:
        sweeps += 1
        if sweep(everything) < tol:
            break
        active = np.flatnonzero(beta)
        while sweeps < max_sweeps:
            sweeps += 1
            if sweep(active) < tol:
                break
    return beta


def _ols(x: np.ndarray, y: np.ndarray, support) -> np.ndarray:
    cols = np.asarray(sorted(support), dtype=int)
    coef, *_ = np.linalg.lstsq(x[:, cols], y, rcond=None)
    return coef


def carve_select(
    data: RegressionData,
    rng: RandomSeed,
    lam: float,
    frac: float = 0.8,
    anchor: ModelId | None = None,
) -> SelectorOutput:
    """Lasso on a random subset; basis and target from the full data.

    The subset of size floor(frac * n) is the external selection noise and
    comes from the rng handed in. Columns are scaled to unit sample
    standard deviation on the subset before the lasso solve (the support
    is scale-invariant). The basis is X1' Y1 / n1 on the unscaled subset;
    the target is the OLS coefficient vector of y on the selected columns
    over all n rows. With no anchor an empty support is an error
    (nothing selected); with an anchor it is reported as the empty
    support model and the target uses the anchor's support.
    """
    gen = rng.generator()
    n = data.n
    n1 = int(math.floor(frac * n))
    if n1 < 1:
        raise ValueError("selection subset is empty")
    subset = np.sort(gen.permutation(n)[:n1])
    x1 = data.x[subset]
    y1 = data.y[subset]
    sd = x1.std(axis=0, ddof=1)
    sd = np.where(sd < 1e-12, 1.0, sd)
    beta = lasso_cd(x1 / sd, y1, lam)
    support = tuple(int(j) for j in np.flatnonzero(beta))
    model = ModelId.support(support)
    if anchor is None and not support:
        raise SelectionError("lasso selected an empty support")
    target_support = anchor.payload if anchor is not None else model.payload
    theta_hat = _ols(data.x, data.y, target_support) if target_support else np.zeros(0)
    basis = x1.T @ y1 / n1
    return SelectorOutput(
        model=model,
        basis=basis,
        theta_hat=theta_hat,
        vhat=None,
        aux={"subset": subset, "lam": lam, "beta_lasso": beta / sd},
    )


class CarveSelector:
    def __init__(self, lam: float, frac: float = 0.8):
        self.lam = float(lam)
        self.frac = float(frac)

    def run(self, data: RegressionData, rng: RandomSeed, anchor: ModelId | None = None) -> SelectorOutput:
        return carve_select(data, rng, self.lam, self.frac, anchor)


# ---------------------------------------------------------------------------
# Benjamini-Hochberg screening


def bh_select(pvalues, q: float) -> ModelId:
    """Step-up rule: reject everything below the largest p(k) <= q k / K."""
    pvals = np.asarray(pvalues, dtype=float)
    if np.any(pvals < 0.0) or np.any(pvals > 1.0):
        raise ValueError("p-values must lie in [0, 1]")
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie in (0, 1)")
    k_total = pvals.size
    order = np.sort(pvals)
    thresholds = q * np.arange(1, k_total + 1) / k_total
    passing = np.flatnonzero(order <= thresholds)
    if passing.size == 0:
        return ModelId.rejection_set(())
    cutoff = order[passing[-1]]
    return ModelId.rejection_set(np.flatnonzero(pvals <= cutoff))


class BhSelector:
    """BH on two-sided z-test p-values of per-group means, unit noise scale."""

    def __init__(self, q: float = 0.2):
        self.q = float(q)

    def run(self, data: GroupedData, rng: RandomSeed, anchor: ModelId | None = None) -> SelectorOutput:
        means = np.array([g.mean() for g in data.groups], dtype=float)
        sizes = np.array([g.size for g in data.groups], dtype=float)
        pvals = 2.0 * special.ndtr(-np.sqrt(sizes) * np.abs(means))
        model = bh_select(pvals, self.q)
        if anchor is None and not model.payload:
            raise SelectionError("BH rejected nothing")
        target = anchor.payload if anchor is not None else model.payload
        theta_hat = means[list(target)] if target else np.zeros(0)
        return SelectorOutput(
            model=model,
            basis=means,
            theta_hat=theta_hat,
            vhat=None,
            aux={"pvalues": pvals},
        )


# ---------------------------------------------------------------------------
# Repeated significance testing


def two_sample_t(x, y):
    """Pooled-variance two-sample t statistic and two-sided p-value.

    Zero pooled variance is degenerate and mapped to (0, 1): conservative
    and keeps NaN out of downstream stopping rules.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2 or y.size < 2:
        raise ValueError("each sample needs at least two observations")
    df = x.size + y.size - 2
    pooled = ((x.size - 1) * x.var(ddof=1) + (y.size - 1) * y.var(ddof=1)) / df
    if pooled <= 0.0:
        return 0.0, 1.0
    t_stat = (x.mean() - y.mean()) / math.sqrt(pooled * (1.0 / x.size + 1.0 / y.size))
    p_value = 2.0 * special.stdtr(df, -abs(t_stat))
    return float(t_stat), float(p_value)


def _stage_stats(blocks) -> np.ndarray:
    out = []
    for block in blocks:
        out.append(block.mean())
        out.append(block.std(ddof=1))
    return np.asarray(out, dtype=float)


def repeated_test_run(
    data: StagedTwoSampleData,
    alpha0: float = 0.1,
    max_stages: int = 20,
    anchor: ModelId | None = None,
) -> SelectorOutput:
    """Cumulative two-sample t-tests; the model is the first significant stage.

    The basis stacks (mean, sd) of each arm at every available stage, in
    stage order: (mean_1, sd_1, mean_2, sd_2) per stage. The target is the
    difference of overall arm means over all stages. When no stage within
    the horizon is significant: with no anchor this is a selection failure;
    with an anchor the run is reported as stopping one stage past the
    horizon, which never equals an observed stopping stage (label zero).
    """
    horizon = min(data.n_stages, max_stages)
    stopped = None
    for t in range(1, horizon + 1):
        first = np.concatenate(data.first[:t])
        second = np.concatenate(data.second[:t])
        _, p_value = two_sample_t(first, second)
        if p_value < alpha0:
            stopped = t
            break
    if stopped is None:
        if anchor is None:
            raise SelectionError(f"never significant within {horizon} stages")
        stopped = horizon + 1
    first_all = np.concatenate(data.first)
    second_all = np.concatenate(data.second)
    basis = np.concatenate(
        [_stage_stats((data.first[t], data.second[t])) for t in range(data.n_stages)]
    )
    return SelectorOutput(
        model=ModelId.stopped_at(stopped),
        basis=basis,
        theta_hat=float(first_all.mean() - second_all.mean()),
        vhat=None,
        aux={"stopped": stopped, "horizon": horizon},
    )


class RepeatedTestSelector:
    def __init__(self, alpha0: float = 0.1, max_stages: int = 20):
        self.alpha0 = float(alpha0)
        self.max_stages = int(max_stages)

    def run(self, data: StagedTwoSampleData, rng: RandomSeed, anchor: ModelId | None = None) -> SelectorOutput:
        return repeated_test_run(data, self.alpha0, self.max_stages, anchor)
