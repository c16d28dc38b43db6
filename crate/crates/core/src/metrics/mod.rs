//! Mergeable evaluation state and the metrics computed from it.

mod confusion;
mod panoptic;
mod scores;

pub use confusion::{miou, ConfusionMatrix};
pub use panoptic::{panoptic_quality, ClassPq, PanopticResult, PanopticStats, Quality};
pub use scores::{
    auroc, average_precision, fpr_at_tpr, BinnedScores, Block, Curve, ExactScores, OperatingPoint, ScoreAccumulator,
    EXACT_LIMIT,
};
