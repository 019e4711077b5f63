"""Learning tissue classifiers from sparse annotations with bias correction.

The package covers the full desk-scale workflow: patient volumes and
normalization (:mod:`dalsa.volume`), sample tables (:mod:`dalsa.samples`),
per-patient density-ratio importance weights (:mod:`dalsa.reweight`), the
observation-weighted random forest (:mod:`dalsa.forest`), segmentation
metrics and threshold sweeps (:mod:`dalsa.metrics`), synthetic benchmarks
with closed-form oracles (:mod:`dalsa.synthetic`), and the
leave-one-patient-out harness (:mod:`dalsa.pipeline`).
"""

__version__ = "0.1.0"

from .errors import DalsaError, DataError, NumericalError, UsageError
from .forest import (
    Forest,
    ForestParams,
    best_split,
    load_forest,
    predict,
    save_forest,
    train_forest,
    train_tree,
    weighted_gini,
)
from .labels import (
    ACTIVE,
    EDEMA,
    FLUID,
    HEALTHY,
    NECROSIS,
    TUMOROUS,
    UNLABELED,
    LabelScheme,
    fuse_labels,
)
from .metrics import (
    MetricsReport,
    SweepCurve,
    confusion_metrics,
    loocv_summary,
    rater_majority_vote,
    sweep,
)
from .pipeline import (
    RunConfig,
    run_depth_sweep,
    run_lambda_sweep,
    run_loocv,
)
from .reweight import (
    DensityRatioModel,
    WeightReport,
    build_discrimination_set,
    compute_patient_weights,
    estimate_weights,
    fit_density_ratio,
    irls_fit,
)
from .samples import SampleTable, concat_tables, extract_features
from .synthetic import (
    GaussianShiftConfig,
    ToyConfig,
    analytic_log_ratio,
    make_gaussian_patient,
    make_gaussian_shift,
    make_toy,
)
from .volume import PatientVolume, load_patient, mode_normalize, normalize_volume, save_patient
