"""No-reference quality assessment of contrast-distorted grayscale images.

The feature side measures high-order Minkowski deviation of a power-law
remapped image (plus its complement) together with histogram entropy; the
learning side maps those features to quality with a kernel regressor or to a
distortion type with a kernel classifier.
"""

from .features import (
    DEFAULT_Q,
    DEFAULT_RHO,
    FeatureVector,
    MdmParams,
    entropy,
    extract,
    extract_batch,
    mdm_feature,
    minkowski_deviation,
)
from .imgio import (
    DatasetManifest,
    DatasetRecord,
    GrayImage,
    ImageError,
    ManifestError,
    load_gray,
    parse_manifest,
    write_manifest,
    write_pgm,
)
from .pixelops import complement, downsample, downsample_factor, fast_pow, power_law
from .svm import (
    SvModel,
    grid_search,
    load_model,
    predict,
    predict_label,
    predict_mos,
    save_model,
    train_svc,
    train_svr,
)
from .evaluation import (
    EvalReport,
    FTestOutcome,
    SplitSpec,
    evaluate_scores,
    f_test,
    fit_logistic,
    pearson,
    run_classification_protocol,
    run_protocol,
    spearman,
    sweep,
)
from .synth import DistortionSpec, apply_distortion, generate_sources, make_dataset

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_Q",
    "DEFAULT_RHO",
    "DatasetManifest",
    "DatasetRecord",
    "DistortionSpec",
    "EvalReport",
    "FTestOutcome",
    "FeatureVector",
    "GrayImage",
    "ImageError",
    "ManifestError",
    "MdmParams",
    "SplitSpec",
    "SvModel",
    "apply_distortion",
    "complement",
    "downsample",
    "downsample_factor",
    "entropy",
    "evaluate_scores",
    "extract",
    "extract_batch",
    "f_test",
    "fast_pow",
    "fit_logistic",
    "generate_sources",
    "grid_search",
    "load_gray",
    "load_model",
    "make_dataset",
    "mdm_feature",
    "minkowski_deviation",
    "parse_manifest",
    "pearson",
    "power_law",
    "predict",
    "predict_label",
    "predict_mos",
    "run_classification_protocol",
    "run_protocol",
    "save_model",
    "spearman",
    "sweep",
    "train_svc",
    "train_svr",
    "write_manifest",
    "write_pgm",
]
