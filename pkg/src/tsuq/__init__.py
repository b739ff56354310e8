"""Learn low-dimensional quantities of interest from time-series ensembles
and solve observation-consistent stochastic inverse problems."""

from .clustering import LloydKMeans, kmeans_assign, kmeans_fit
from .density import (
    GaussianKde,
    InversionResult,
    cluster_weights,
    compute_ratios,
    invert,
    kde_fit,
    rejection_sample,
    tv_distance,
    updated_density,
)
from .errors import (
    FormatError,
    MissingArtifactError,
    NumericalError,
    TsuqError,
    ValidationError,
)
from .kpca import (
    DEFAULT_KPCA_PROPOSALS,
    KernelPca,
    QoiMap,
    QoiSamples,
    Standardizer,
    kpca_fit,
    kpca_transform,
    learn_qois_and_transform,
    standardize_fit_apply,
)
from .models import (
    BurgersSetup,
    ExperimentSpec,
    GeneratedExperiment,
    OscillatorParams,
    SelkovParams,
    burgers_series,
    burgers_state,
    experiment_spec,
    generate_experiment,
    oscillator_solution,
    rk45_integrate,
    selkov_hopf_locus,
    selkov_series,
)
from .splinefilter import (
    FilterConfig,
    FilteredEnsemble,
    SplineModel,
    eval_spline,
    filter_ensemble,
    filter_series,
    fit_spline,
)
from .svm import (
    DEFAULT_SVM_PROPOSALS,
    KernelSpec,
    SvmClassifier,
    classify,
    kernel_eval,
    kernel_matrix,
    select_classifier,
    svm_train,
)
from .timeseries import (
    NoiseModel,
    ParameterDist,
    ParameterSampleSet,
    TimeGrid,
    TimeSeriesEnsemble,
    add_noise,
    load_ensemble,
    load_parameters,
    sample_parameters,
    save_ensemble,
    save_parameters,
    subseed,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
