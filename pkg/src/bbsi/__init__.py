"""Black-box selective inference.

Learn the selection probability of an arbitrary re-runnable selection
algorithm from bootstrap replicates, then do conditional post-selection
inference through a grid-supported exponential family.
"""

from .data import (
    GaussianDecomposition,
    GroupedData,
    MomentEstimate,
    RandomSeed,
    RegressionData,
    StagedTwoSampleData,
    decompose,
    estimate_joint_moments,
    resample,
)
from .diagnostics import PivotSample, ecdf, ks_uniform, pivot_sample
from .law import (
    CiResult,
    ConditionalLaw,
    DegenerateLawError,
    build_law,
    cdf,
    invert_ci,
    nuisance_condition,
    pvalue,
)
from .mlp import SelectionProbEstimate, load_model, save_model, train
from .oracles import DtlInstance, marginal_cdf, marginal_ci, marginal_pi, tn_cdf, tn_ci, tn_pvalue
from .selectors import (
    BhSelector,
    CarveSelector,
    DtlSelector,
    ModelId,
    RepeatedTestSelector,
    SelectionError,
    SelectorOutput,
    bh_select,
    carve_select,
    dtl_outputs,
    dtl_select,
    lasso_cd,
    repeated_test_run,
    two_sample_t,
)
from .training import (
    TrainingBuild,
    TrainingSet,
    balance,
    build_training_set,
    load_training_set,
    save_training_set,
)

__version__ = "0.1.0"
