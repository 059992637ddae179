"""Microcalcification segmentation: Hessian-constrained DoG candidates fused with a proximity regressor."""

from .clustering import (
    FEATURE_NAMES,
    characterize,
    cluster_features,
    describe_objects,
    extract_clusters,
    homogeneity,
    kmeans,
    optics_order,
    standardize,
)
from .combiner import combine, combine_masks
from .config import PipelineConfig
from .errors import DataError, FormatError, HDoGRegError, ParameterError
from .hessian_blob import HDoGParams, hdog_segment, hessian_field, hessian_mask, label_components
from .image import GrayImage
from .metrics import (
    MatchRule,
    ScoredImage,
    detection_table,
    froc_curve,
    froc_from_table,
    iou,
    iou_per_object,
    match_objects,
    mean_iou_per_image,
    operating_point,
    pauc,
    pauc_bootstrap,
)
from .network import RegressorConfig, dice_loss
from .phantom import PhantomSpec, generate
from .proximity import ProximityParams, proximity_map, proximity_profile, threshold_map
from .regressor import extract_patches, predict_full, train
from .scale_space import build_scale_sequence, detect_blobs, dog_stack, gaussian_blur, prune_overlaps

__version__ = "0.1.0"
