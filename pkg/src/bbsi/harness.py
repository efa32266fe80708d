"""Experiment drivers: simulate a scenario, select, infer, and aggregate.

Each driver simulates data under a known truth, runs the selector, and
produces an interval per method per replicate. Coverage and length are
aggregated with bootstrap percentile error bars over the replicates. The
bb and bb_marginalized pipelines inside one replicate share the same
bootstrap streams, so their length difference isolates the effect of
conditioning alone.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .data import (
    GroupedData,
    RandomSeed,
    RegressionData,
    StagedTwoSampleData,
    decompose,
    estimate_joint_moments,
)
from .diagnostics import PivotSample, ks_uniform, pivot_sample
from .law import CiResult, build_law, invert_ci, nuisance_condition
from .mlp import train
from .oracles import DtlInstance, marginal_ci, norm_ppf, tn_ci
from .selectors import (
    BhSelector,
    CarveSelector,
    DtlSelector,
    RepeatedTestSelector,
    SelectionError,
    two_sample_t,
)
from .training import TrainingSet, balance, build_training_set

__all__ = [
    "ExperimentConfig",
    "ReplicateRecord",
    "MethodResult",
    "DiagnosisResult",
    "run_experiment",
    "run_diagnose",
    "emit",
    "EXPERIMENTS",
]

EXPERIMENTS = ("dtl", "lasso", "bh", "repeated", "diagnose")
_METHOD_ORDER = ("naive", "splitting", "bb", "bb_marginalized", "analytic_tn", "analytic_marginal")
_CSV_COLUMNS = (
    "experiment",
    "method",
    "scenario_param",
    "replicates",
    "coverage",
    "coverage_lo",
    "coverage_hi",
    "mean_length",
    "length_lo",
    "length_hi",
    "clipped_count",
    "seed",
)


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    replicates: int = 100
    boot: int = 1000
    epochs: int = 500
    batch: int = 200
    hidden: tuple[int, ...] = (64, 64, 64)
    lr: float = 1e-3
    # Fixed-epoch training interpolates the Bernoulli labels and collapses the
    # learned selection probability to a hard indicator, so the pipeline
    # snapshots the best holdout epoch by default.
    holdout: float = 0.15
    early_stop: bool = True
    alpha: float = 0.1
    grid_size: int = 100
    span: float = 10.0
    # learned selection probabilities are only trusted out to the radius the
    # bootstrap actually samples; beyond it the law continues them flat
    trust_span: float = 4.0
    seed: int = 0
    # drop-the-losers
    n1: int = 100
    n2: int | None = None
    k_groups: int = 50
    # lasso carving
    n_obs: int = 400
    p_features: int = 50
    n_signals: int = 10
    c0: float = 0.6
    ar_rho: float = 0.3
    carve_frac: float = 0.8
    # BH screening
    bh_k: int = 20
    bh_n: int = 300
    theta0: float = 0.2
    q_fdr: float = 0.2
    # repeated testing
    init_n: int = 100
    step_n: int = 50
    alpha0: float = 0.1
    max_stages: int = 20
    effect: float = 0.0
    # diagnostics
    pivots: int = 300

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if self.replicates < 1:
            raise ConfigError("replicates must be at least 1")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.boot < 0 or self.epochs < 1 or self.batch < 1:
            raise ConfigError("boot, epochs and batch must be positive")

    @property
    def second_stage_n(self) -> int:
        return self.n2 if self.n2 is not None else max(1, self.n1 // 4)

    @property
    def scenario_param(self) -> float:
        return {
            "dtl": float(self.n1),
            "lasso": float(self.c0),
            "bh": float(self.theta0),
            "repeated": float(self.effect),
            "diagnose": float(self.n1),
        }[self.experiment]


@dataclass(frozen=True)
class ReplicateRecord:
    """Per-replicate inference outcomes for one method (one or more targets)."""

    replicate: int
    truths: np.ndarray
    lowers: np.ndarray
    uppers: np.ndarray
    clipped: np.ndarray

    @property
    def covered(self) -> np.ndarray:
        return (self.lowers <= self.truths) & (self.truths <= self.uppers)

    @property
    def lengths(self) -> np.ndarray:
        return self.uppers - self.lowers


@dataclass(frozen=True)
class MethodResult:
    experiment: str
    method: str
    scenario_param: float
    replicates: int
    coverage: float
    coverage_lo: float
    coverage_hi: float
    mean_length: float
    length_lo: float
    length_hi: float
    clipped_count: int
    seed: int
    records: tuple[ReplicateRecord, ...] = field(repr=False, default=())
    failures: int = 0

    def row(self) -> dict:
        return {name: getattr(self, name) for name in _CSV_COLUMNS}


def _record(replicate, truths, intervals) -> ReplicateRecord:
    lowers = np.array([iv[0] for iv in intervals], dtype=float)
    uppers = np.array([iv[1] for iv in intervals], dtype=float)
    clipped = np.array([bool(iv[2]) if len(iv) > 2 else False for iv in intervals])
    return ReplicateRecord(
        replicate=replicate,
        truths=np.asarray(truths, dtype=float),
        lowers=lowers,
        uppers=uppers,
        clipped=clipped,
    )


def _ci_tuple(ci: CiResult):
    return (ci.lower, ci.upper, ci.clipped)


def _aggregate(cfg, method, records, failures, boot_rng, n_boot=1000) -> MethodResult:
    n_cov = np.array([r.covered.sum() for r in records], dtype=float)
    n_units = np.array([r.covered.size for r in records], dtype=float)
    lengths = [r.lengths for r in records]
    finite_sum = np.array([l[np.isfinite(l)].sum() for l in lengths])
    finite_n = np.array([np.isfinite(l).sum() for l in lengths], dtype=float)
    clipped = int(sum(r.clipped.sum() for r in records) + sum((~np.isfinite(l)).sum() for l in lengths))

    coverage = float(n_cov.sum() / n_units.sum())
    mean_length = float(finite_sum.sum() / finite_n.sum()) if finite_n.sum() else math.nan

    gen = boot_rng.generator()
    n = len(records)
    idx = gen.integers(0, n, size=(n_boot, n))
    cov_samples = n_cov[idx].sum(axis=1) / n_units[idx].sum(axis=1)
    with np.errstate(invalid="ignore"):
        len_samples = finite_sum[idx].sum(axis=1) / finite_n[idx].sum(axis=1)
    cov_lo, cov_hi = np.percentile(cov_samples, [2.5, 97.5])
    if np.all(np.isnan(len_samples)):
        len_lo = len_hi = math.nan
    else:
        len_lo, len_hi = np.nanpercentile(len_samples, [2.5, 97.5])

    return MethodResult(
        experiment=cfg.experiment,
        method=method,
        scenario_param=cfg.scenario_param,
        replicates=len(records),
        coverage=coverage,
        coverage_lo=float(cov_lo),
        coverage_hi=float(cov_hi),
        mean_length=mean_length,
        length_lo=float(len_lo),
        length_hi=float(len_hi),
        clipped_count=clipped,
        seed=cfg.seed,
        records=tuple(records),
        failures=failures,
    )


def _fit_selection_prob(dataset, selector, observed, cfg, boot_rng, train_rng):
    """Shared bb pipeline: training set, network, and joint moments.

    The validation rows for early stopping are reserved from the raw
    bootstrap rows before class balancing, so duplicated minority rows
    never leak across the split.
    """
    build = build_training_set(dataset, selector, observed, cfg.boot, boot_rng)
    raw = build.training
    validation = None
    kept = raw
    use_early_stop = cfg.early_stop and cfg.holdout > 0.0
    if use_early_stop:
        gen = train_rng.child(9).generator()
        perm = gen.permutation(raw.n_rows)
        n_hold = int(round(cfg.holdout * raw.n_rows))
        held, keep = perm[:n_hold], perm[n_hold:]
        if n_hold > 0 and np.any(raw.labels[keep] == 1):
            validation = (raw.x[held], raw.labels[held])
            kept = TrainingSet(raw.x[keep], raw.labels[keep])
        else:
            use_early_stop = False
    net = train(
        balance(kept),
        epochs=cfg.epochs,
        batch=cfg.batch,
        rng=train_rng,
        hidden=cfg.hidden,
        lr=cfg.lr,
        early_stop=use_early_stop,
        validation=validation,
    )
    return build, net


def _bb_scalar_interval(dataset, selector, observed, cfg, boot_rng, train_rng):
    build, net = _fit_selection_prob(dataset, selector, observed, cfg, boot_rng, train_rng)
    stats = np.hstack([build.thetas, build.bases])
    moments = estimate_joint_moments(stats)
    decomp = decompose(moments, observed.theta_hat, observed.basis)
    law = build_law(net, decomp, float(observed.theta_hat), cfg.grid_size, cfg.span,
                    trust_span=cfg.trust_span)
    ci = invert_ci(law, float(observed.theta_hat), cfg.alpha)
    return ci, decomp, net


def _pooled_within_variance(blocks) -> float:
    num = sum((b.size - 1) * b.var(ddof=1) for b in blocks if b.size > 1)
    den = sum(b.size - 1 for b in blocks if b.size > 1)
    return num / den if den else 1.0


# ---------------------------------------------------------------------------
# drop-the-losers


def _simulate_dtl(cfg, rng) -> GroupedData:
    gen = rng.generator()
    n2 = cfg.second_stage_n
    groups = [gen.standard_normal(cfg.n1) for _ in range(cfg.k_groups)]
    second = gen.standard_normal(n2)
    return GroupedData(groups + [second])


def _run_dtl(cfg):
    base = RandomSeed(cfg.seed)
    z = norm_ppf(1.0 - cfg.alpha / 2.0)
    n2 = cfg.second_stage_n
    plain = DtlSelector(cfg.k_groups, marginalize=False)
    marg = DtlSelector(cfg.k_groups, marginalize=True)
    out: dict[str, list[ReplicateRecord]] = {m: [] for m in (
        "naive", "splitting", "bb", "bb_marginalized", "analytic_tn", "analytic_marginal",
    )}
    for r in range(cfg.replicates):
        rng = base.child(r)
        data = _simulate_dtl(cfg, rng.child(0))
        obs_plain = plain.run(data, rng.child(1))
        obs_marg = marg.run(data, rng.child(1))
        theta_hat = obs_plain.theta_hat
        truth = 0.0

        s_hat = math.sqrt(_pooled_within_variance(data.groups))
        half = z * s_hat / math.sqrt(cfg.n1 + n2)
        out["naive"].append(_record(r, [truth], [(theta_hat - half, theta_hat + half)]))

        y_bar = data.groups[cfg.k_groups].mean()
        half_split = z * s_hat / math.sqrt(n2)
        out["splitting"].append(_record(r, [truth], [(y_bar - half_split, y_bar + half_split)]))

        ci_bb, _, _ = _bb_scalar_interval(data, plain, obs_plain, cfg, rng.child(2), rng.child(3))
        out["bb"].append(_record(r, [truth], [_ci_tuple(ci_bb)]))

        ci_marg, _, _ = _bb_scalar_interval(data, marg, obs_marg, cfg, rng.child(2), rng.child(4))
        out["bb_marginalized"].append(_record(r, [truth], [_ci_tuple(ci_marg)]))

        instance = DtlInstance.from_two_stage(
            obs_plain.aux["group_means"], y_bar, cfg.n1, n2
        )
        out["analytic_tn"].append(_record(r, [truth], [tn_ci(instance, cfg.alpha)]))
        out["analytic_marginal"].append(_record(r, [truth], [marginal_ci(instance, cfg.alpha)]))
    return out, 0


# ---------------------------------------------------------------------------
# lasso with data carving


def _ar_covariance(p, rho) -> np.ndarray:
    idx = np.arange(p)
    return rho ** np.abs(np.subtract.outer(idx, idx))


def _simulate_lasso(cfg, rng):
    gen = rng.generator()
    p = cfg.p_features
    sigma_x = _ar_covariance(p, cfg.ar_rho)
    chol = np.linalg.cholesky(sigma_x)
    beta = np.zeros(p)
    n_signals = min(cfg.n_signals, p)
    positions = gen.permutation(p)[:n_signals]
    signs = gen.choice([-1.0, 1.0], size=n_signals)
    beta[positions] = signs * math.sqrt(2.0 * cfg.c0 * math.log(p) / cfg.n_obs)
    x = gen.standard_normal((cfg.n_obs, p)) @ chol.T
    y = x @ beta + gen.standard_normal(cfg.n_obs)
    return RegressionData(x, y), beta, sigma_x


def _run_lasso(cfg):
    base = RandomSeed(cfg.seed)
    z = norm_ppf(1.0 - cfg.alpha / 2.0)
    lam = math.sqrt(math.log(cfg.p_features) / cfg.n_obs)
    selector = CarveSelector(lam=lam, frac=cfg.carve_frac)
    out = {m: [] for m in ("naive", "splitting", "bb")}
    failures = 0
    successes = 0
    attempt = 0
    max_attempts = 20 * cfg.replicates
    while successes < cfg.replicates and attempt < max_attempts:
        rng = base.child(attempt)
        attempt += 1
        data, beta, sigma_x = _simulate_lasso(cfg, rng.child(0))
        try:
            observed = selector.run(data, rng.child(1))
        except SelectionError:
            failures += 1
            continue
        support = list(observed.model.payload)
        s = len(support)
        truth = np.linalg.solve(sigma_x[np.ix_(support, support)], sigma_x[support] @ beta)

        x_e = data.x[:, support]
        theta_full = observed.theta_hat
        resid = data.y - x_e @ theta_full
        df = max(data.n - s, 1)
        sigma_hat2 = float(resid @ resid) / df
        xtx_inv = np.linalg.inv(x_e.T @ x_e)
        sds = np.sqrt(sigma_hat2 * np.diag(xtx_inv))
        out["naive"].append(_record(
            successes, truth,
            [(theta_full[i] - z * sds[i], theta_full[i] + z * sds[i]) for i in range(s)],
        ))

        holdout = np.setdiff1d(np.arange(data.n), observed.aux["subset"])
        x2, y2 = data.x[np.ix_(holdout, support)], data.y[holdout]
        theta2, *_ = np.linalg.lstsq(x2, y2, rcond=None)
        resid2 = y2 - x2 @ theta2
        df2 = max(holdout.size - s, 1)
        sig2 = float(resid2 @ resid2) / df2
        sds2 = np.sqrt(sig2 * np.diag(np.linalg.inv(x2.T @ x2)))
        out["splitting"].append(_record(
            successes, truth,
            [(theta2[i] - z * sds2[i], theta2[i] + z * sds2[i]) for i in range(s)],
        ))

        build, net = _fit_selection_prob(data, selector, observed, cfg, rng.child(2), rng.child(3))
        stats = np.hstack([build.thetas, build.bases])
        moments = estimate_joint_moments(stats)
        decomp = decompose(moments, observed.theta_hat, observed.basis)
        intervals = []
        for idx in range(s):
            reduced, theta_j = nuisance_condition(
                observed.theta_hat, decomp.sigma2, idx, decomp.gamma, decomp.offset
            )
            law = build_law(net, reduced, theta_j, cfg.grid_size, cfg.span,
                            trust_span=cfg.trust_span)
            intervals.append(_ci_tuple(invert_ci(law, theta_j, cfg.alpha)))
        out["bb"].append(_record(successes, truth, intervals))
        successes += 1
    if successes == 0:
        raise RuntimeError("lasso carving never selected a non-empty support")
    return out, failures


# ---------------------------------------------------------------------------
# BH screening


def _bh_truth(cfg) -> np.ndarray:
    theta = np.zeros(cfg.bh_k)
    theta[0:4] = cfg.theta0
    theta[4:8] = -cfg.theta0
    return theta


def _simulate_bh(cfg, rng) -> GroupedData:
    gen = rng.generator()
    theta = _bh_truth(cfg)
    return GroupedData([theta[k] + gen.standard_normal(cfg.bh_n) for k in range(cfg.bh_k)])


def _run_bh(cfg):
    base = RandomSeed(cfg.seed)
    z = norm_ppf(1.0 - cfg.alpha / 2.0)
    theta_true = _bh_truth(cfg)
    selector = BhSelector(q=cfg.q_fdr)
    out = {m: [] for m in ("naive", "bb")}
    failures = 0
    successes = 0
    attempt = 0
    max_attempts = 50 * cfg.replicates
    while successes < cfg.replicates and attempt < max_attempts:
        rng = base.child(attempt)
        attempt += 1
        data = _simulate_bh(cfg, rng.child(0))
        try:
            observed = selector.run(data, rng.child(1))
        except SelectionError:
            failures += 1
            continue
        rejected = list(observed.model.payload)
        truth = theta_true[rejected]
        means = observed.basis

        naive_ivs = []
        for k in rejected:
            sd = data.groups[k].std(ddof=1) / math.sqrt(cfg.bh_n)
            naive_ivs.append((means[k] - z * sd, means[k] + z * sd))
        out["naive"].append(_record(successes, truth, naive_ivs))

        build, net = _fit_selection_prob(data, selector, observed, cfg, rng.child(2), rng.child(3))
        intervals = []
        for k in rejected:
            stats = np.column_stack([build.bases[:, k], build.bases])
            decomp_k = decompose(estimate_joint_moments(stats), means[k], observed.basis)
            law = build_law(net, decomp_k, float(means[k]), cfg.grid_size, cfg.span,
                            trust_span=cfg.trust_span)
            intervals.append(_ci_tuple(invert_ci(law, float(means[k]), cfg.alpha)))
        out["bb"].append(_record(successes, truth, intervals))
        successes += 1
    if successes == 0:
        raise RuntimeError("BH never rejected anything")
    return out, failures


# ---------------------------------------------------------------------------
# repeated significance testing


def _simulate_repeated(cfg, rng):
    """Draw stages until the cumulative t-test is significant; None if never."""
    gen = rng.generator()
    first, second = [], []
    for stage in range(cfg.max_stages):
        size = cfg.init_n if stage == 0 else cfg.step_n
        first.append(cfg.effect + gen.standard_normal(size))
        second.append(gen.standard_normal(size))
        _, p_value = two_sample_t(np.concatenate(first), np.concatenate(second))
        if p_value < cfg.alpha0:
            return StagedTwoSampleData(first, second)
    return None


def _run_repeated(cfg):
    base = RandomSeed(cfg.seed)
    z = norm_ppf(1.0 - cfg.alpha / 2.0)
    selector = RepeatedTestSelector(alpha0=cfg.alpha0, max_stages=cfg.max_stages)
    out = {m: [] for m in ("naive", "bb")}
    failures = 0
    successes = 0
    attempt = 0
    max_attempts = 20 * cfg.replicates
    while successes < cfg.replicates and attempt < max_attempts:
        rng = base.child(attempt)
        attempt += 1
        data = _simulate_repeated(cfg, rng.child(0))
        if data is None:
            failures += 1
            continue
        observed = selector.run(data, rng.child(1))
        truth = cfg.effect
        theta_hat = observed.theta_hat

        x_all = np.concatenate(data.first)
        y_all = np.concatenate(data.second)
        pooled = _pooled_within_variance([x_all, y_all])
        half = z * math.sqrt(pooled * (1.0 / x_all.size + 1.0 / y_all.size))
        out["naive"].append(_record(successes, [truth], [(theta_hat - half, theta_hat + half)]))

        ci_bb, _, _ = _bb_scalar_interval(data, selector, observed, cfg, rng.child(2), rng.child(3))
        out["bb"].append(_record(successes, [truth], [_ci_tuple(ci_bb)]))
        successes += 1
    if successes == 0:
        raise RuntimeError("repeated testing never reached significance")
    return out, failures


# ---------------------------------------------------------------------------
# entry points


_DRIVERS = {"dtl": _run_dtl, "lasso": _run_lasso, "bh": _run_bh, "repeated": _run_repeated}


def run_experiment(cfg: ExperimentConfig) -> list[MethodResult]:
    """Simulate, select, and infer; one MethodResult per competing method."""
    if cfg.experiment not in _DRIVERS:
        raise ConfigError(f"experiment {cfg.experiment!r} has no coverage driver")
    records_by_method, failures = _DRIVERS[cfg.experiment](cfg)
    base = RandomSeed(cfg.seed)
    results = []
    for m_idx, method in enumerate(_METHOD_ORDER):
        if method not in records_by_method:
            continue
        results.append(
            _aggregate(cfg, method, records_by_method[method], failures, base.child(10_000, m_idx))
        )
    return results


@dataclass(frozen=True)
class DiagnosisResult:
    adjusted: PivotSample
    unadjusted: PivotSample
    ks_adjusted: float
    ks_unadjusted: float


def run_diagnose(cfg: ExperimentConfig) -> DiagnosisResult:
    """Pivot uniformity check on one drop-the-losers instance.

    The adjusted run uses the trained selection probability; the control
    forces it to the constant one, which should visibly break uniformity.
    """
    base = RandomSeed(cfg.seed)
    marg = DtlSelector(cfg.k_groups, marginalize=True)
    data = _simulate_dtl(cfg, base.child(0))
    observed = marg.run(data, base.child(1))
    build, net = _fit_selection_prob(data, marg, observed, cfg, base.child(2), base.child(3))
    stats = np.hstack([build.thetas, build.bases])
    decomp = decompose(estimate_joint_moments(stats), observed.theta_hat, observed.basis)
    adjusted = pivot_sample(
        data, marg, observed, net, decomp, cfg.pivots, base.child(4),
        grid_size=cfg.grid_size, span=cfg.span,
    )
    flat = lambda pts: np.ones(pts.shape[0])
    unadjusted = pivot_sample(
        data, marg, observed, flat, decomp, cfg.pivots, base.child(4),
        grid_size=cfg.grid_size, span=cfg.span,
    )
    return DiagnosisResult(
        adjusted=adjusted,
        unadjusted=unadjusted,
        ks_adjusted=ks_uniform(adjusted.values),
        ks_unadjusted=ks_uniform(unadjusted.values),
    )


def _format_value(value) -> str:
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def emit(results, fmt: str, path) -> None:
    """Write aggregated results as CSV (fixed column order) or JSON."""
    rows = [r.row() for r in results]
    if fmt == "csv":
        with open(path, "w", newline="", encoding="ascii") as fh:
            writer = csv.writer(fh)
            writer.writerow(_CSV_COLUMNS)
            for row in rows:
                writer.writerow([_format_value(row[c]) for c in _CSV_COLUMNS])
    elif fmt == "json":
        with open(path, "w", encoding="ascii") as fh:
            json.dump(rows, fh, indent=2)
            fh.write("\n")
    else:
        raise ConfigError(f"unknown format {fmt!r}")
