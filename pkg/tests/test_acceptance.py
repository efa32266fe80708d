"""Acceptance suite: one test per criterion, printed pass lines included.

Run with ``pytest tests/test_acceptance.py -s`` to see the per-criterion
summary lines. The coverage suites at 100 replicates and the oracle
agreement run take tens of minutes on one core.
"""

import math
import time
import warnings

import numpy as np
import pytest

from bbsi.data import GaussianDecomposition, RandomSeed, decompose, estimate_joint_moments
from bbsi.diagnostics import ks_uniform
from bbsi.harness import ExperimentConfig, run_diagnose, run_experiment
from bbsi.law import build_law, cdf, invert_ci
from bbsi.mlp import backward, loss, train
from bbsi.oracles import (
    DtlInstance,
    marginal_cdf,
    marginal_ci,
    norm_ppf,
    tn_cdf,
    tn_ci,
    tn_pvalue,
)
from bbsi.selectors import DtlSelector, bh_select, lasso_cd, two_sample_t
from bbsi.training import TrainingSet, balance, build_training_set

warnings.filterwarnings("ignore")

SEED = 20260808


def report(criterion, passed, detail):
    print(f"[criterion {criterion}] {'PASS' if passed else 'FAIL'}: {detail}")
    assert passed, detail


# ---------------------------------------------------------------------------
# criterion 1: learned marginalized law matches the closed form


class _AveragedEstimate:
    """Mean predicted probability over independently trained networks."""

    def __init__(self, nets):
        self.nets = nets

    def predict(self, points):
        return np.mean([net.predict(points) for net in self.nets], axis=0)


def test_criterion_1_dtl_oracle_agreement():
    # Fixed instance K=50, n1=100, n2=25, theta=0. The estimate averages
    # five early-stopped networks trained on 30k bootstrap replicates:
    # single fits carry enough variance along the inference line to blur
    # the comparison, and the average removes it.
    t0 = time.perf_counter()
    cfg = ExperimentConfig(experiment="dtl", n1=100, n2=25, k_groups=50, boot=30_000, seed=7)
    base = RandomSeed(cfg.seed)
    from bbsi.harness import _simulate_dtl

    data = _simulate_dtl(cfg, base.child(0))
    selector = DtlSelector(cfg.k_groups, marginalize=True)
    observed = selector.run(data, base.child(1))
    build = build_training_set(data, selector, observed, cfg.boot, base.child(2))
    ts = balance(build.training)
    nets = [
        train(ts, epochs=150, batch=200, rng=base.child(3, m), hidden=(64, 64, 64),
              holdout=0.15, early_stop=True)
        for m in range(5)
    ]
    stats = np.hstack([build.thetas, build.bases])
    dec = decompose(estimate_joint_moments(stats), observed.theta_hat, observed.basis)
    instance = DtlInstance.from_two_stage(
        observed.aux["group_means"], data.groups[cfg.k_groups].mean(), cfg.n1, 25
    )
    law = build_law(
        _AveragedEstimate(nets), dec, observed.theta_hat,
        grid_size=401, span=10.0, trust_span=4.0,
    )
    learned = np.array([cdf(law, observed.theta_hat, x) for x in law.grid])
    closed = np.array([marginal_cdf(instance, observed.theta_hat, x) for x in law.grid])
    sup = float(np.abs(learned - closed).max())
    elapsed = time.perf_counter() - t0
    report(1, sup < 0.05, f"sup|H_learned - H_closed| = {sup:.4f} (< 0.05), {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# criteria 2 + 3 share one desk-scale run


@pytest.fixture(scope="module")
def dtl_desk_results():
    cfg = ExperimentConfig(experiment="dtl", replicates=100, boot=1000, epochs=500, seed=SEED)
    results = {r.method: r for r in run_experiment(cfg)}
    return results


def test_criterion_2_dtl_desk_coverage(dtl_desk_results):
    res = dtl_desk_results
    checks = [
        ("bb", 0.83 <= res["bb"].coverage <= 0.97),
        ("bb_marginalized", 0.83 <= res["bb_marginalized"].coverage <= 0.97),
        ("naive<0.8", res["naive"].coverage < 0.8),
        ("splitting", 0.83 <= res["splitting"].coverage <= 0.97),
    ]
    wald_len = 2.0 * float(norm_ppf(0.95)) / math.sqrt(25)
    checks.append(("splitting length", abs(res["splitting"].mean_length - wald_len) < 0.1 * wald_len))
    detail = ", ".join(
        f"{m}={res[m].coverage:.3f}" for m in ("naive", "splitting", "bb", "bb_marginalized")
    )
    report(2, all(ok for _, ok in checks), detail)


def test_criterion_3_dtl_length_ordering(dtl_desk_results):
    res = dtl_desk_results
    lengths = {
        m: np.array([r.lengths[0] for r in res[m].records])
        for m in ("bb", "bb_marginalized", "splitting")
    }
    d_bb = lengths["bb"] - lengths["bb_marginalized"]
    d_split = lengths["splitting"] - lengths["bb_marginalized"]
    se_bb = d_bb.std(ddof=1) / math.sqrt(d_bb.size)
    se_split = d_split.std(ddof=1) / math.sqrt(d_split.size)
    ok = d_bb.mean() > se_bb and d_split.mean() > se_split
    report(
        3,
        ok,
        f"marg shorter than bb by {d_bb.mean():.4f} (se {se_bb:.4f}) "
        f"and than splitting by {d_split.mean():.4f} (se {se_split:.4f})",
    )


# ---------------------------------------------------------------------------
# criterion 4: truncated-normal analytics against Monte Carlo


def sample_tn(theta, sigma, lower, size, rng):
    # upper-tail inverse CDF in log space: exact even when the truncation
    # point sits far above theta and the survival mass underflows
    from scipy import special

    log_sf_low = float(special.log_ndtr(-(lower - theta) / sigma))
    v = rng.generator().uniform(size=size)
    return theta - sigma * special.ndtri_exp(np.log(v) + log_sf_low)


def test_criterion_4_truncated_normal_suite():
    sigma2 = 1.0 / 125.0
    sigma = math.sqrt(sigma2)
    s2 = 1.0 / 100.0 - sigma2
    settings = [
        (0.0, 0.15), (0.0, 0.22), (0.1, 0.20), (0.2, 0.18), (0.15, 0.24),
    ]
    n_draws = 1_000_000
    worst = 0.0
    for i, (theta0, ab) in enumerate(settings):
        inst = DtlInstance(sigma2=sigma2, s2=s2, a=ab, theta_hat=0.25, b=0.0)
        draws = sample_tn(theta0, sigma, ab, n_draws, RandomSeed(400 + i))
        mc_p = float(np.mean(draws >= inst.theta_hat))
        se = math.sqrt(max(mc_p * (1 - mc_p), 1e-12) / n_draws)
        gap = abs(tn_pvalue(inst, theta0) - mc_p)
        assert gap < 3 * se + 1e-5, f"pvalue MC mismatch at {(theta0, ab)}: {gap:.2e}"
        worst = max(worst, gap)
        lo, hi = tn_ci(inst, alpha=0.1)
        for endpoint, target, side in ((hi, 0.05, "le"), (lo, 0.95, "le")):
            if not math.isfinite(endpoint):
                continue
            draws = sample_tn(endpoint, sigma, ab, n_draws, RandomSeed(450 + i))
            frac = float(np.mean(draws <= inst.theta_hat))
            se = math.sqrt(max(target * (1 - target), 1e-12) / n_draws)
            assert abs(frac - target) < 3 * se + 1e-4, (
                f"ci endpoint tail mismatch at {(theta0, ab)}: {frac:.5f} vs {target}"
            )

    gen = RandomSeed(404).generator()
    covered = 0
    n_sims = 2000
    for _ in range(n_sims):
        means = gen.normal(0.0, 0.1, size=50)
        second = gen.normal(0.0, 0.2)
        winner = int(np.argmax(means))
        theta_hat = (100 * means[winner] + 25 * second) / 125
        rivals = np.delete(means, winner)
        inst = DtlInstance(
            sigma2=sigma2, s2=s2, a=float(rivals.max()),
            theta_hat=float(theta_hat), b=float(means[winner] - theta_hat),
        )
        lo, hi = tn_ci(inst, alpha=0.1)
        covered += lo <= 0.0 <= hi
    rate = covered / n_sims
    report(4, 0.88 <= rate <= 0.92, f"MC agreement ok (worst pvalue gap {worst:.2e}); ci coverage {rate:.3f}")


# ---------------------------------------------------------------------------
# criterion 5: marginalized one-sided length bound


def test_criterion_5_marginalized_length_bound():
    n1, n2, k_total = 100, 25, 50
    sigma2 = 1.0 / (n1 + n2)
    s2 = 1.0 / n1 - sigma2
    gen = RandomSeed(505).generator()
    n_sims = 2000
    lengths = np.empty(n_sims)
    for i in range(n_sims):
        means = gen.normal(0.0, 1.0 / math.sqrt(n1), size=k_total)
        second = gen.normal(0.0, 1.0 / math.sqrt(n2))
        winner = int(np.argmax(means))
        theta_hat = (n1 * means[winner] + n2 * second) / (n1 + n2)
        rivals = np.delete(means, winner)
        inst = DtlInstance(
            sigma2=sigma2, s2=s2, a=float(rivals.max()),
            theta_hat=float(theta_hat), b=float(means[winner] - theta_hat),
        )
        _, upper = marginal_ci(inst, alpha=0.1, one_sided=True)
        lengths[i] = upper - inst.theta_hat
    bound = float(norm_ppf(0.9)) / math.sqrt(n2)
    slack = 3.0 * lengths.std(ddof=1) / math.sqrt(n_sims)
    ok = lengths.mean() <= bound + slack
    report(5, ok, f"mean one-sided length {lengths.mean():.4f} <= bound {bound:.4f} + {slack:.4f}")


# ---------------------------------------------------------------------------
# criterion 6: diagnostic discrimination


def test_criterion_6_diagnostic_discrimination():
    cfg = ExperimentConfig(
        experiment="diagnose", n1=100, n2=25, k_groups=50,
        boot=3000, epochs=150, hidden=(200, 200, 200), grid_size=400,
        pivots=300, seed=17,
    )
    diag = run_diagnose(cfg)
    ok = diag.ks_adjusted < 0.10 and diag.ks_unadjusted >= diag.ks_adjusted + 0.05
    report(
        6,
        ok,
        f"KS adjusted {diag.ks_adjusted:.4f} (< 0.10), unadjusted {diag.ks_unadjusted:.4f} "
        f"(acceptance rate {diag.adjusted.acceptance_rate:.2f})",
    )


# ---------------------------------------------------------------------------
# criterion 7: learner correctness


def test_criterion_7_learner_correctness():
    from bbsi.mlp import Standardizer, init_params

    std = Standardizer(mean=np.zeros(3), scale=np.ones(3))
    gen = RandomSeed(700).generator()
    x = gen.standard_normal((12, 3))
    y = gen.integers(0, 2, size=12)
    ts = TrainingSet(x, y)
    step = 1e-5
    worst = 0.0
    for trial in range(20):
        params = init_params([3, 4, 1], RandomSeed(701 + trial))
        grad_w, grad_b = backward(params, std, x, y.astype(float))
        for li, w in enumerate(params.weights):
            idx = (trial % w.shape[0], trial % w.shape[1])
            orig = w[idx]
            w[idx] = orig + step
            up = loss(params, std, ts)
            w[idx] = orig - step
            down = loss(params, std, ts)
            w[idx] = orig
            fd = (up - down) / (2 * step)
            scale = max(abs(fd), abs(grad_w[li][idx]), 1e-8)
            worst = max(worst, abs(fd - grad_w[li][idx]) / scale)
    grad_ok = worst < 1e-5

    params = init_params([2, 3, 1], RandomSeed(799))
    for w in params.weights:
        w[:] = 0.0
    ts_half = TrainingSet(np.zeros((9, 2)), np.array([1, 0, 1, 0, 1, 0, 1, 0, 1]))
    exact = loss(params, Standardizer(mean=np.zeros(2), scale=np.ones(2)), ts_half)
    half_ok = exact == pytest.approx(9 * math.log(2), rel=1e-12)

    gen = RandomSeed(702).generator()
    z = gen.standard_normal((2000, 1))
    labels = (z[:, 0] > 0).astype(int)
    net = train(TrainingSet(z, labels), epochs=60, batch=200, rng=RandomSeed(703), hidden=(16, 16))
    z_new = gen.standard_normal((500, 1))
    acc = float(np.mean((net.predict(z_new) > 0.5) == (z_new[:, 0] > 0)))
    sep_ok = acc > 0.95

    report(
        7,
        grad_ok and half_ok and sep_ok,
        f"fd gradient rel err {worst:.2e} (<1e-5), loss at 1/2 exact, held-out acc {acc:.3f}",
    )


# ---------------------------------------------------------------------------
# criterion 8: exponential-family properties


def test_criterion_8_exponential_family_properties():
    gen = RandomSeed(800).generator()
    unit = lambda s2: GaussianDecomposition(sigma2=s2, gamma=np.ones(1), offset=np.zeros(1))

    monotone_ok = True
    for _ in range(100):
        s2 = float(gen.uniform(0.3, 3.0))
        b = gen.uniform(0.05, 1.0, size=4)
        pi = lambda pts, b=b: np.clip(
            b[0] / (1 + np.exp(-(pts[:, 0] - b[1]))) + b[2] * np.exp(-0.5 * (pts[:, 0] - b[3]) ** 2) + 1e-4,
            0.0, 1.0,
        )
        law = build_law(pi, unit(s2), float(gen.normal()), grid_size=60)
        theta = float(gen.normal(law.theta_hat, 1.0))
        vals_x = [cdf(law, theta, x) for x in law.grid[::6]]
        monotone_ok &= all(b2 >= a2 - 1e-12 for a2, b2 in zip(vals_x, vals_x[1:]))
        x = float(gen.uniform(law.grid[5], law.grid[-5]))
        vals_t = [cdf(law, t, x) for t in np.linspace(law.theta_hat - 3, law.theta_hat + 3, 7)]
        monotone_ok &= all(b2 <= a2 + 1e-12 for a2, b2 in zip(vals_t, vals_t[1:]))

    sigma = 0.4
    flat = lambda pts: np.full(pts.shape[0], 0.37)
    law = build_law(flat, unit(sigma**2), 1.0, grid_size=100)
    ci = invert_ci(law, 1.0, alpha=0.1)
    z = float(norm_ppf(0.95))
    wald_ok = (
        abs(ci.lower - (1.0 - z * sigma)) < 1.5 * law.spacing
        and abs(ci.upper - (1.0 + z * sigma)) < 1.5 * law.spacing
    )

    law0 = build_law(lambda pts: np.ones(pts.shape[0]), unit(1.0), 0.3, grid_size=8001)
    threshold = law0.grid[np.searchsorted(law0.grid, -0.2)] - law0.spacing / 2.0
    indicator = lambda pts: (pts[:, 0] >= threshold).astype(float)
    law_ind = build_law(indicator, unit(1.0), 0.3, grid_size=8001)
    xs = law_ind.grid[:: 8000 // 100]
    xs = xs[np.abs(xs - 0.3) <= 5.0]
    sup = max(
        abs(cdf(law_ind, 0.3, x) - tn_cdf(0.3, 1.0, threshold, x)) for x in xs
    )
    indicator_ok = sup < 2e-3

    report(
        8,
        monotone_ok and wald_ok and indicator_ok,
        f"monotone on 100 random laws, wald reduction ok, indicator sup {sup:.2e} (<2e-3)",
    )


# ---------------------------------------------------------------------------
# criterion 9: selector oracles


def test_criterion_9_selector_oracles():
    gen = RandomSeed(900).generator()
    worst_kkt = 0.0
    for _ in range(50):
        n, p = int(gen.integers(20, 60)), int(gen.integers(3, 12))
        x = gen.standard_normal((n, p))
        beta_true = np.zeros(p)
        beta_true[: min(3, p)] = gen.normal(size=min(3, p))
        y = x @ beta_true + gen.standard_normal(n)
        lam = float(gen.uniform(0.02, 0.3))
        beta = lasso_cd(x, y, lam)
        grad = x.T @ (y - x @ beta) / n
        worst_kkt = max(worst_kkt, float(np.max(np.abs(grad) - lam)))
        active = np.flatnonzero(beta)
        if active.size:
            worst_kkt = max(worst_kkt, float(np.max(np.abs(np.abs(grad[active]) - lam))))
    kkt_ok = worst_kkt <= 1e-6

    bh_ok = True
    for _ in range(1000):
        k_total = int(gen.integers(2, 25))
        pvals = np.round(gen.uniform(size=k_total), 3)
        best = ()
        order = np.argsort(pvals, kind="stable")
        for size in range(1, k_total + 1):
            cut = pvals[order[size - 1]]
            if cut <= 0.2 * size / k_total:
                best = tuple(sorted(int(j) for j in np.flatnonzero(pvals <= cut)))
        bh_ok &= bh_select(pvals, 0.2).payload == best

    stops = 0
    runs = 2000
    for _ in range(runs):
        x = gen.standard_normal(100)
        y = gen.standard_normal(100)
        _, p_val = two_sample_t(x, y)
        stops += p_val < 0.1
    rate = stops / runs
    stop_ok = abs(rate - 0.1) < 0.02

    report(
        9,
        kkt_ok and bh_ok and stop_ok,
        f"kkt residual {worst_kkt:.2e} (<=1e-6), bh oracle 1000/1000, stage-1 rate {rate:.3f}",
    )


# ---------------------------------------------------------------------------
# criterion 10: BH and repeated-testing coverage at desk scale


@pytest.mark.parametrize("theta0", [0.05, 0.2])
def test_criterion_10_bh_coverage(theta0):
    cfg = ExperimentConfig(
        experiment="bh", replicates=100, boot=1000, epochs=500, seed=SEED, theta0=theta0
    )
    res = {r.method: r for r in run_experiment(cfg)}
    cov = res["bb"].coverage
    report(10, 0.83 <= cov <= 0.97, f"bh theta0={theta0}: bb coverage {cov:.3f}")


@pytest.mark.parametrize("effect", [0.0, 0.2])
def test_criterion_10_repeated_coverage(effect):
    # the stopped-at-exactly-T event needs the paper's 3000 training points
    # to learn well enough for calibrated intervals at 100 replicates
    cfg = ExperimentConfig(
        experiment="repeated", replicates=100, boot=3000, epochs=500, seed=SEED, effect=effect
    )
    res = {r.method: r for r in run_experiment(cfg)}
    cov = res["bb"].coverage
    ok = 0.83 <= cov <= 0.97
    detail = f"repeated effect={effect}: bb coverage {cov:.3f}"
    if effect == 0.0:
        naive = res["naive"].coverage
        ok = ok and naive < 0.5
        detail += f", naive {naive:.3f} (< 0.5)"
    report(10, ok, detail)


# ---------------------------------------------------------------------------
# criterion 11: CLI determinism


def test_criterion_11_cli_determinism(tmp_path):
    from bbsi.cli import main

    blobs = []
    for name in ("r1", "r2"):
        out = tmp_path / f"{name}.csv"
        code = main([
            "dtl", "--replicates", "2", "--boot", "40", "--epochs", "6",
            "--seed", "123", "--out", str(out),
        ])
        assert code == 0
        blobs.append((
            out.read_bytes(),
            (tmp_path / f"{name}_coverage.png").read_bytes(),
            (tmp_path / f"{name}_length.png").read_bytes(),
        ))
    json_blobs = []
    for name in ("j1", "j2"):
        out = tmp_path / f"{name}.json"
        code = main([
            "bh", "--replicates", "1", "--boot", "40", "--epochs", "6",
            "--theta0", "0.3", "--seed", "5", "--format", "json",
            "--no-figures", "--out", str(out),
        ])
        assert code == 0
        json_blobs.append(out.read_bytes())
    ok = blobs[0] == blobs[1] and json_blobs[0] == json_blobs[1]
    report(11, ok, "csv, json, and figure outputs byte-identical across reruns")
