"""Datasets, seeded resampling, and the Gaussian decomposition of the basis.

The decomposition splits the selection basis Z into a component driven by the
target statistic (through the direction Gamma) and an offset W fixed at the
observed data, which is what the conditional law is built from.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "RandomSeed",
    "GroupedData",
    "RegressionData",
    "StagedTwoSampleData",
    "MomentEstimate",
    "GaussianDecomposition",
    "resample",
    "estimate_joint_moments",
    "decompose",
]


@dataclass(frozen=True)
class RandomSeed:
    """A root seed plus a stream path identifying one variate sequence.

    Streams are realized as Philox generators keyed by a ``SeedSequence``
    with the path as spawn key, so sibling streams never overlap and child
    streams can be derived without coordination. Replicate i of a bootstrap
    loop conventionally uses ``seed.child(i)``; external selection noise
    (the omega randomness) lives on a further child stream.
    """

    seed: int
    stream: tuple[int, ...] = ()

    def child(self, *path: int) -> "RandomSeed":
        return RandomSeed(self.seed, self.stream + tuple(path))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=self.stream)
        return np.random.Generator(np.random.Philox(ss))


def _as_float_vector(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    return arr


@dataclass(frozen=True)
class GroupedData:
    """K independent groups of real-valued observations."""

    groups: tuple[np.ndarray, ...]

    def __init__(self, groups):
        converted = tuple(_as_float_vector(g, "group") for g in groups)
        if not converted:
            raise ValueError("at least one group is required")
        if any(g.size == 0 for g in converted):
            raise ValueError("all groups must be non-empty")
        object.__setattr__(self, "groups", converted)

    @property
    def n_groups(self) -> int:
        return len(self.groups)


@dataclass(frozen=True)
class RegressionData:
    """Design matrix and response; rows are resampled jointly."""

    x: np.ndarray
    y: np.ndarray

    def __init__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = _as_float_vector(y, "y")
        if x.ndim != 2:
            raise ValueError("design matrix must be two-dimensional")
        if x.shape[0] != y.shape[0]:
            raise ValueError("row count of x must equal length of y")
        if x.shape[0] == 0:
            raise ValueError("empty regression dataset")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True)
class StagedTwoSampleData:
    """Two arms of per-stage observation blocks (sequential two-sample data)."""

    first: tuple[np.ndarray, ...]
    second: tuple[np.ndarray, ...]

    def __init__(self, first, second):
        first = tuple(_as_float_vector(b, "stage block") for b in first)
        second = tuple(_as_float_vector(b, "stage block") for b in second)
        if len(first) != len(second):
            raise ValueError("both arms must have the same number of stages")
        if not first:
            raise ValueError("at least one stage is required")
        if any(b.size == 0 for b in first + second):
            raise ValueError("stage blocks must be non-empty")
        object.__setattr__(self, "first", first)
        object.__setattr__(self, "second", second)

    @property
    def n_stages(self) -> int:
        return len(self.first)


def _resample_block(block: np.ndarray, gen: np.random.Generator) -> np.ndarray:
    idx = gen.integers(0, block.shape[0], size=block.shape[0])
    return block[idx]


def resample(dataset, rng: RandomSeed):
    """Nonparametric bootstrap preserving the dataset's stratification.

    Grouped data resamples within each group (per-group sizes are part of
    the design); regression data resamples (x, y) rows jointly; staged
    two-sample data resamples each (stage, arm) block independently.
    """
    gen = rng.generator()
    if isinstance(dataset, GroupedData):
        return GroupedData(tuple(_resample_block(g, gen) for g in dataset.groups))
    if isinstance(dataset, RegressionData):
        idx = gen.integers(0, dataset.n, size=dataset.n)
        return RegressionData(dataset.x[idx], dataset.y[idx])
    if isinstance(dataset, StagedTwoSampleData):
        first = tuple(_resample_block(b, gen) for b in dataset.first)
        second = tuple(_resample_block(b, gen) for b in dataset.second)
        return StagedTwoSampleData(first, second)
    raise TypeError(f"unsupported dataset type: {type(dataset).__name__}")


@dataclass(frozen=True)
class MomentEstimate:
    """Sample mean and covariance of stacked (theta_hat, basis) replicates."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        cov = self.cov
        scale = max(float(np.max(np.abs(cov))), 1.0)
        if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-12 * scale):
            raise ValueError("covariance estimate is not symmetric")
        if np.any(np.diag(cov) < -1e-12 * scale):
            raise ValueError("covariance diagonal must be non-negative")


def estimate_joint_moments(replicates) -> MomentEstimate:
    """Sample mean and covariance (divisor B - 1) over replicate vectors."""
    arr = np.asarray(replicates, dtype=float)
    if arr.ndim != 2:
        arr = np.atleast_2d(arr)
    if arr.shape[0] < 2:
        raise ValueError("need at least two replicates to estimate moments")
    mean = arr.mean(axis=0)
    centered = arr - mean
    cov = centered.T @ centered / (arr.shape[0] - 1)
    return MomentEstimate(mean=mean, cov=np.atleast_2d(cov))


@dataclass(frozen=True)
class GaussianDecomposition:
    """Z = Gamma theta + W split of the basis around the observed data.

    For a scalar target, ``sigma2`` is Var(theta_hat), ``gamma`` is the
    d-vector Cov(Z, theta_hat) / Var(theta_hat), and ``offset`` is the
    residual W = Z - Gamma * theta_hat at the observed values. For an
    s-dimensional target, ``sigma2`` is the s x s covariance block and
    ``gamma`` has shape (d, s).
    """

    sigma2: float | np.ndarray
    gamma: np.ndarray
    offset: np.ndarray

    @property
    def is_scalar(self) -> bool:
        return np.ndim(self.sigma2) == 0

    def sigma(self) -> float:
        if not self.is_scalar:
            raise ValueError("sigma() is only defined for a scalar target")
        return float(np.sqrt(self.sigma2))


def decompose(moments: MomentEstimate, theta_hat, z_obs) -> GaussianDecomposition:
    """Split the observed basis into Gamma * theta_hat + W.

    The leading block of ``moments`` corresponds to theta_hat (dimension
    inferred from ``theta_hat`` itself); the remainder is the basis.
    """
    theta = np.atleast_1d(np.asarray(theta_hat, dtype=float))
    z = _as_float_vector(z_obs, "z_obs")
    s = theta.shape[0]
    cov = moments.cov
    if cov.shape[0] != s + z.shape[0]:
        raise ValueError("moment dimension does not match theta_hat plus basis")
    sigma_block = cov[:s, :s]
    cross = cov[s:, :s]
    if s == 1:
        sigma2 = float(sigma_block[0, 0])
        if sigma2 <= 0.0:
            raise ValueError("variance of theta_hat must be strictly positive")
        gamma = cross[:, 0] / sigma2
        offset = z - gamma * theta[0]
        return GaussianDecomposition(sigma2=sigma2, gamma=gamma, offset=offset)
    eigvals = np.linalg.eigvalsh(sigma_block)
    if eigvals[0] <= 0.0:
        raise ValueError("covariance block of theta_hat must be positive definite")
    gamma = np.linalg.solve(sigma_block, cross.T).T
    offset = z - gamma @ theta
    return GaussianDecomposition(sigma2=sigma_block, gamma=gamma, offset=offset)
