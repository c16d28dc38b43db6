//! Mask-level outlier scoring for mask-classification segmentation models.
//!
//! Inputs are per-image mask assignments `M` (N×H×W), mask class scores
//! `C` (N×(K+1), last column void) and optionally per-pixel logits. The
//! crate turns them into anomaly maps, open-set semantic and panoptic
//! predictions, and evaluates all of them against ground truth.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dtf;
pub mod error;
pub mod manifest;
pub mod mask_scores;
pub mod metrics;
pub mod negdata;
pub mod openset;
pub mod pipeline;
pub mod pixel_scores;
pub mod pnm;
pub mod scalar;
pub mod synthgen;
pub mod tensor;

pub use error::{Error, Result};
pub use manifest::{load_validated, validate_record, LoadedRecord, Manifest, Record, ValidationReport};
pub use mask_scores::{
    closed_pred, closed_pred_from_masks, fuse_closed, mask_confidence_histogram, per_mask_uncertainty, preferred_mask,
    score_aem, score_ahm, score_am, score_eam, ConfidenceHistograms, Detector, EnergyInput, MaskMethod,
};
pub use metrics::{auroc, average_precision, fpr_at_tpr, miou, panoptic_quality, ScoreAccumulator};
pub use negdata::{paste_instance, paste_patch, BinaryMask, MixedSample, PasteMode, PasteSpec};
pub use openset::{
    anomaly_instances, calibrate_threshold, fuse_open, fuse_open_masks, panoptic_assemble, PanopticConfig,
    ThresholdCalibration,
};
pub use pixel_scores::{pixel_score, PixelMethod};
pub use scalar::Scalar;
pub use synthgen::{gen_scene, Scene, SceneConfig};
pub use tensor::{
    AnomalyMap, ClassMap, ClosedSetScores, LabelMap, MaskAssignments, MaskClassScores, PanopticMap, PixelLogits, IGNORE,
};

pub type MaskAssignmentsF32 = MaskAssignments<f32>;
pub type MaskAssignmentsF64 = MaskAssignments<f64>;
pub type MaskClassScoresF32 = MaskClassScores<f32>;
pub type MaskClassScoresF64 = MaskClassScores<f64>;
pub type PixelLogitsF32 = PixelLogits<f32>;
pub type PixelLogitsF64 = PixelLogits<f64>;
pub type ClosedSetScoresF32 = ClosedSetScores<f32>;
pub type ClosedSetScoresF64 = ClosedSetScores<f64>;
pub type AnomalyMapF32 = AnomalyMap<f32>;
pub type AnomalyMapF64 = AnomalyMap<f64>;
pub type SceneF32 = Scene<f32>;
pub type SceneF64 = Scene<f64>;
