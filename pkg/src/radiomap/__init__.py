"""Dense 3D radio-environment maps from sparse RSRP measurements.

Interpolators: ordinary, simple, and trans-Gaussian Kriging over
shadow-fading residuals, plus a hybrid local-Kriging + constrained
nuclear-norm matrix completion. A synthetic two-ray channel with
correlated shadow fading provides verifiable ground truth end to end.
"""

from .antenna import AntennaPattern, isotropic_pattern, load_antenna_pattern
from .backend import USING_NUMBA
from .channel import (
    Channel,
    Sample,
    SampleSet,
    TwoRayParams,
    ZigZagSpec,
    detrend,
    generate_shadow_fading,
    received_power,
    reflection_coefficient,
    retrend,
    skew_shadow_fading,
    synthesize_dataset,
    two_ray_pathloss,
)
from .correlation import (
    CorrelationBins,
    CorrelationModel,
    covariance,
    empirical_correlation_from_samples,
    evaluate,
    fit_correlation_model,
    semivariogram,
)
from .errors import DataError, RadiomapError, SolverError
from .experiments import (
    ExperimentConfig,
    ResultRow,
    SceneSpec,
    emit_results,
    load_samples_csv,
    mix_heights,
    rmse,
    run_experiment,
    save_samples_csv,
    split_train_test,
)
from .geo import GeoPoint, LocalFrame, distance_3d, horizontal_distance, vertical_distance
from .kriging import (
    GaussianTransform,
    KrigingPredictor,
    KrigingSolution,
    NeighborSelector,
    Prediction,
    fit_gaussian_transform,
    ordinary_kriging,
    predict_rsrp,
    select_neighbors,
    simple_kriging,
    trans_gaussian_ok,
    trans_gaussian_sk,
)
from .matcomp import (
    CompletionParams,
    GridField,
    GridSpec,
    build_grid,
    check_completable,
    local_fill,
    matrix_completion_pipeline,
    mc_predict,
    nuclear_norm,
    nuclear_norm_min,
    set_nuclear_norm,
)

__version__ = "0.1.0"
