//! Outlier-aware predictions: threshold calibration, open-set fusion and
//! anomaly instance formation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask_scores::{argmax_known, for_each_tile_with_scores, preferred_mask};
use crate::metrics::ScoreAccumulator;
use crate::tensor::{
    ensure_same_hw, ensure_same_n, AnomalyMap, ClosedSetScores, LabelMap, MaskAssignments, MaskClassScores, PanopticMap,
};
use crate::Scalar;

/// Strict lower bound on the size of a kept anomaly instance.
pub const DEFAULT_MIN_PIXELS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCalibration {
    pub tau: f64,
    pub achieved_tpr: f64,
    pub achieved_fpr: f64,
    pub target_tpr: f64,
}

/// Picks the largest threshold whose outlier recall reaches `target_tpr`
/// over all calibration images. Outliers are pixels with `s >= tau`.
pub fn calibrate_threshold<T: Scalar>(
    scores: &[AnomalyMap<T>],
    ood_gt: &[LabelMap],
    target_tpr: f64,
) -> Result<ThresholdCalibration> {
    if scores.len() != ood_gt.len() || scores.is_empty() {
        return Err(Error::invalid("calibration needs one ground truth per score map and at least one image"));
    }
    let mut acc = ScoreAccumulator::exact();
    for (s, g) in scores.iter().zip(ood_gt) {
        acc.accumulate(s, g)?;
    }
    calibrate_from(&acc, target_tpr)
}

/// Calibration over an existing accumulator.
pub fn calibrate_from(acc: &ScoreAccumulator, target_tpr: f64) -> Result<ThresholdCalibration> {
    let op = acc.curve().operating_point(target_tpr)?;
    Ok(ThresholdCalibration { tau: op.threshold, achieved_tpr: op.tpr, achieved_fpr: op.fpr, target_tpr })
}

/// Closed-set labels with every pixel at or above `tau` relabelled as outlier (code K).
pub fn fuse_open<T: Scalar>(h: &ClosedSetScores<T>, s: &AnomalyMap<T>, tau: T) -> Result<LabelMap> {
    ensure_same_hw("open-set fusion", (h.height, h.width), (s.height, s.width))?;
    let mut labels = crate::mask_scores::closed_pred(h);
    let outlier = h.n_classes as u8;
    for (l, &v) in labels.data.iter_mut().zip(&s.data) {
        if v >= tau {
            *l = outlier;
        }
    }
    Ok(labels)
}

/// [`fuse_open`] computed straight from the mask outputs, skipping the class
/// ensemble for tiles whose pixels are all outliers.
pub fn fuse_open_masks<T: Scalar>(
    m: &MaskAssignments<T>,
    cls: &MaskClassScores<T>,
    s: &AnomalyMap<T>,
    tau: T,
) -> Result<LabelMap> {
    ensure_same_n(m, cls)?;
    ensure_same_hw("open-set fusion", (m.height, m.width), (s.height, s.width))?;
    let k = cls.n_classes;
    let outlier = k as u8;
    let mut data = vec![0u8; m.pixels()];
    for_each_tile_with_scores(m, cls, &s.data, tau, &mut data, |tile_scores, acc, chunk| {
        crate::mask_scores::tile_argmax(acc, k, chunk, |j| tile_scores[j] < tau);
        for (l, &v) in chunk.iter_mut().zip(tile_scores) {
            if v >= tau {
                *l = outlier;
            }
        }
    });
    Ok(LabelMap { n_classes: k, height: m.height, width: m.width, data })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnomalyInstance {
    pub id: i32,
    /// Preferred mask that gathered the pixels.
    pub mask: usize,
    pub pixels: usize,
}

/// Anomalous pixels grouped by preferred mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnomalyFragment {
    pub height: usize,
    pub width: usize,
    pub anomalous: Vec<bool>,
    /// Instance id per pixel; 0 for non-anomalous pixels and discarded candidates.
    pub instance: Vec<i32>,
    pub instances: Vec<AnomalyInstance>,
}

impl AnomalyFragment {
    pub fn is_empty(&self) -> bool {
        !self.anomalous.iter().any(|&a| a)
    }

    /// Outlier-only panoptic map; non-anomalous pixels carry the ignore code.
    pub fn to_panoptic(&self, outlier_code: u8) -> PanopticMap {
        let class = self.anomalous.iter().map(|&a| if a { outlier_code } else { crate::IGNORE }).collect();
        PanopticMap { height: self.height, width: self.width, class, instance: self.instance.clone() }
    }
}

/// Groups the pixels with `s >= tau` by their preferred mask and keeps
/// groups of more than `min_pixels` pixels as instances (ids from 1, in mask order).
pub fn anomaly_instances<T: Scalar>(
    s: &AnomalyMap<T>,
    m: &MaskAssignments<T>,
    tau: T,
    min_pixels: usize,
) -> Result<AnomalyFragment> {
    ensure_same_hw("anomaly instances", (m.height, m.width), (s.height, s.width))?;
    let anomalous: Vec<bool> = s.data.iter().map(|&v| v >= tau).collect();
    let preferred = preferred_mask(m);
    let mut sizes = vec![0usize; m.n_masks];
    for (&a, &i) in anomalous.iter().zip(&preferred) {
        if a {
            sizes[i as usize] += 1;
        }
    }
    let mut ids = vec![0i32; m.n_masks];
    let mut instances = Vec::new();
    for (mask, &n) in sizes.iter().enumerate() {
        if n > min_pixels {
            let id = instances.len() as i32 + 1;
            ids[mask] = id;
            instances.push(AnomalyInstance { id, mask, pixels: n });
        }
    }
    let instance = anomalous.iter().zip(&preferred).map(|(&a, &i)| if a { ids[i as usize] } else { 0 }).collect();
    Ok(AnomalyFragment { height: m.height, width: m.width, anomalous, instance, instances })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanopticConfig {
    pub min_pixels: usize,
    /// Masks whose top class probability is below this are not assigned pixels.
    pub mask_conf_threshold: f64,
    /// Class ids that form instances; every other known class is stuff.
    pub thing_classes: Vec<u8>,
}

impl Default for PanopticConfig {
    fn default() -> Self {
        Self { min_pixels: DEFAULT_MIN_PIXELS, mask_conf_threshold: 0.0, thing_classes: Vec::new() }
    }
}

/// Outlier-aware panoptic map. Non-anomalous pixels go to the eligible mask
/// maximizing `m_i · c_i`; anomalous pixels become outlier instances.
pub fn panoptic_assemble<T: Scalar>(
    m: &MaskAssignments<T>,
    cls: &MaskClassScores<T>,
    s: &AnomalyMap<T>,
    tau: T,
    cfg: &PanopticConfig,
) -> Result<PanopticMap> {
    ensure_same_n(m, cls)?;
    ensure_same_hw("panoptic assembly", (m.height, m.width), (s.height, s.width))?;
    let k = cls.n_classes;
    let class_of: Vec<usize> = (0..m.n_masks).map(|i| argmax_known(cls, i)).collect();
    let conf: Vec<T> = (0..m.n_masks).map(|i| cls.known(i)[class_of[i]]).collect();
    let threshold = T::lit(cfg.mask_conf_threshold);
    let eligible: Vec<usize> = (0..m.n_masks).filter(|&i| conf[i] >= threshold).collect();
    if eligible.is_empty() {
        return Err(Error::NoEligibleMask);
    }

    let p = m.pixels();
    let mut owner = vec![eligible[0]; p];
    let mut best: Vec<T> = m.mask(eligible[0]).iter().map(|&v| v * conf[eligible[0]]).collect();
    for &i in &eligible[1..] {
        for ((b, o), &v) in best.iter_mut().zip(owner.iter_mut()).zip(m.mask(i)) {
            let score = v * conf[i];
            if score > *b {
                *b = score;
                *o = i;
            }
        }
    }

    let fragment = anomaly_instances(s, m, tau, cfg.min_pixels)?;
    let mut thing_id = vec![0i32; m.n_masks];
    let mut next = 1;
    let mut used = vec![false; m.n_masks];
    for (px, &o) in owner.iter().enumerate() {
        if !fragment.anomalous[px] {
            used[o] = true;
        }
    }
    for i in 0..m.n_masks {
        if used[i] && cfg.thing_classes.contains(&(class_of[i] as u8)) {
            thing_id[i] = next;
            next += 1;
        }
    }
    let anomaly_offset = next - 1;

    let mut class = vec![0u8; p];
    let mut instance = vec![0i32; p];
    for px in 0..p {
        if fragment.anomalous[px] {
            class[px] = k as u8;
            let id = fragment.instance[px];
            instance[px] = if id > 0 { id + anomaly_offset } else { 0 };
        } else {
            let o = owner[px];
            class[px] = class_of[o] as u8;
            instance[px] = thing_id[o];
        }
    }
    PanopticMap::new(m.height, m.width, class, instance)
}
