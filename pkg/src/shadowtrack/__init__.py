"""Paired shadow-object tracking, embedding losses, and track evaluation."""

__version__ = "0.1.0"

from .geometry import (
    BinaryMask,
    Box,
    MaskTrackVolume,
    association_mask,
    box_iou,
    mask_iou,
    rle_decode,
    rle_encode,
    st_iou,
)
from .losses import (
    InstanceGroup,
    LocationSample,
    LossValue,
    LossWeights,
    ScenarioSample,
    ToyEmbeddingFitter,
    center_embedding,
    center_loss,
    contrast_loss,
    cycle_loss,
    cycle_loss_embeddings,
    fit_toy,
    grad_check,
    group_samples,
    random_scenario,
    similarity_matrix,
    transition_matrix,
)
from .metrics import (
    TAU_GRID,
    EvalReport,
    TrackVolumeTriple,
    average_precision,
    evaluate_tracks,
    is_tp,
    track_to_triple,
    volume_triple,
)
from .retrieval import RetrievalParams, retrieve_bidirectional, retrieve_pass
from .simulate import OcclusionWindow, ScenarioConfig, generate, preset
from .tracking import (
    Assignment,
    InstanceDetection,
    MatchParams,
    PartDetection,
    ShadowObjectTracker,
    Track,
    TrackingQueue,
    UnpairedDetection,
    aggregate_instance_embedding,
    assign,
    final_score,
    match_score,
    paired_embedding,
    run_tracking,
    split_detections,
    track_video,
    update_queue,
)

__all__ = [name for name in dir() if not name.startswith("_")]
