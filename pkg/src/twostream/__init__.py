"""Two-stream (texture + shape) object recognition at desk scale.

Subpackages cover the full pipeline: image handling (:mod:`imagery`),
synthetic silhouette rendering and statistics matching (:mod:`synth`),
Gaussian outlier pruning (:mod:`pruning`), small trainable CNN streams
(:mod:`nnet`), posterior fusion (:mod:`fusion`), region proposals and
detection (:mod:`detect`), metrics and error diagnosis (:mod:`evaluate`),
reports and plots (:mod:`report`), run configuration (:mod:`config`), and a
config-driven command line (:mod:`cli`).

Both :mod:`fusion` and :mod:`nnet` define a ``predict``; import those from
their module rather than from the package root.
"""

from .config import ConfigError, RunConfig, load_run_config
from .detect import (
    Detection,
    Proposal,
    edge_density_proposals,
    load_detections,
    load_proposals,
    nms,
    nms_grouped,
    sample_negatives,
    score_proposals,
    sliding_window_proposals,
    write_detections,
    write_proposals,
)
from .evaluate import (
    FP_CATEGORIES,
    APResult,
    ConfusionMatrix,
    DiagnosisReport,
    GroundTruthBox,
    average_precision,
    confusion,
    diagnose_false_positives,
    evaluate_detections,
    iou,
    match_detections,
    mean_ap,
    overall_accuracy,
)
from .fusion import fuse_average, fuse_max
from .imagery import (
    BoundingBox,
    DatasetManifest,
    Image,
    LabeledSample,
    ManifestError,
    crop,
    load_image,
    load_manifest,
    random_center_crops,
    resize_bilinear,
    save_image,
    save_manifest,
)
from .nnet import (
    Conv,
    Dropout,
    FullyConnected,
    NetworkSpec,
    Params,
    Relu,
    Softmax,
    TrainConfig,
    TrainedModel,
    default_network_spec,
    forward,
    init_params,
    load_model,
    loss_and_grad,
    save_model,
    sgd_step,
    train,
)
from .pruning import (
    GaussianModel,
    PruneResult,
    fit_gaussian,
    log_densities,
    log_density,
    prune,
    retained_count,
)
from .seeding import derive_rng
from .synth import (
    DegenerateRenderError,
    Pose,
    PoseGrid,
    RenderConfig,
    SilhouetteTemplate,
    apply_statistics_matching,
    composite_background,
    default_pose_grid,
    edge_gradient_histogram,
    enumerate_poses,
    gaussian_blur,
    load_templates,
    mean_image,
    render_silhouette,
    sobel_magnitude,
)

__all__ = [
    "APResult",
    "BoundingBox",
    "ConfigError",
    "ConfusionMatrix",
    "Conv",
    "DatasetManifest",
    "DegenerateRenderError",
    "Detection",
    "DiagnosisReport",
    "Dropout",
    "FP_CATEGORIES",
    "FullyConnected",
    "GaussianModel",
    "GroundTruthBox",
    "Image",
    "LabeledSample",
    "ManifestError",
    "NetworkSpec",
    "Params",
    "Pose",
    "PoseGrid",
    "Proposal",
    "PruneResult",
    "Relu",
    "RenderConfig",
    "RunConfig",
    "SilhouetteTemplate",
    "Softmax",
    "TrainConfig",
    "TrainedModel",
    "apply_statistics_matching",
    "average_precision",
    "composite_background",
    "confusion",
    "crop",
    "default_network_spec",
    "default_pose_grid",
    "derive_rng",
    "diagnose_false_positives",
    "edge_density_proposals",
    "edge_gradient_histogram",
    "enumerate_poses",
    "evaluate_detections",
    "fit_gaussian",
    "forward",
    "fuse_average",
    "fuse_max",
    "gaussian_blur",
    "init_params",
    "iou",
    "load_detections",
    "load_image",
    "load_manifest",
    "load_model",
    "load_proposals",
    "load_run_config",
    "load_templates",
    "log_densities",
    "log_density",
    "loss_and_grad",
    "match_detections",
    "mean_ap",
    "mean_image",
    "nms",
    "nms_grouped",
    "overall_accuracy",
    "prune",
    "random_center_crops",
    "render_silhouette",
    "resize_bilinear",
    "retained_count",
    "sample_negatives",
    "save_image",
    "save_manifest",
    "save_model",
    "score_proposals",
    "sgd_step",
    "sliding_window_proposals",
    "sobel_magnitude",
    "train",
    "write_detections",
    "write_proposals",
]

__version__ = "0.1.0"
