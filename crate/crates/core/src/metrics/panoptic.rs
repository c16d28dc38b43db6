use std::collections::{BTreeMap, HashMap, HashSet};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::{ensure_same_hw, PanopticMap, IGNORE};

/// Matching statistics of one class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ClassPq {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub iou_sum: f64,
}

impl ClassPq {
    pub fn is_populated(&self) -> bool {
        self.tp + self.fp + self.fn_ > 0
    }

    pub fn quality(&self) -> Quality {
        let denom = self.tp as f64 + 0.5 * self.fp as f64 + 0.5 * self.fn_ as f64;
        let sq = if self.tp > 0 { self.iou_sum / self.tp as f64 } else { 0.0 };
        let rq = if denom > 0.0 { self.tp as f64 / denom } else { 0.0 };
        Quality { pq: sq * rq, sq, rq }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Quality {
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
}

/// Per-class panoptic matching state, mergeable across images.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PanopticStats {
    pub per_class: BTreeMap<u8, ClassPq>,
}

type Segment = (u8, i32);

impl PanopticStats {
    /// Matches the segments of one image. A segment is every distinct
    /// (class, instance) pair; pixels whose ground truth is ignore are dropped
    /// from both sides.
    pub fn accumulate(&mut self, pred: &PanopticMap, gt: &PanopticMap) -> Result<()> {
        ensure_same_hw("panoptic quality", (pred.height, pred.width), (gt.height, gt.width))?;
        let mut gt_area: HashMap<Segment, u64> = HashMap::new();
        let mut pred_area: HashMap<Segment, u64> = HashMap::new();
        let mut inter: HashMap<(Segment, Segment), u64> = HashMap::new();
        for px in 0..gt.pixels() {
            let g = (gt.class[px], gt.instance[px]);
            if g.0 == IGNORE {
                continue;
            }
            *gt_area.entry(g).or_default() += 1;
            let p = (pred.class[px], pred.instance[px]);
            if p.0 == IGNORE {
                continue;
            }
            *pred_area.entry(p).or_default() += 1;
            if g.0 == p.0 {
                *inter.entry((g, p)).or_default() += 1;
            }
        }

        let mut matched_gt: HashSet<Segment> = HashSet::new();
        let mut matched_pred: HashSet<Segment> = HashSet::new();
        // deterministic accumulation order for the float sum
        let mut pairs: Vec<_> = inter.into_iter().collect();
        pairs.sort_unstable_by_key(|&(k, _)| k);
        for ((g, p), i) in pairs {
            let union = gt_area[&g] + pred_area[&p] - i;
            let iou = i as f64 / union as f64;
            if iou > 0.5 {
                let stats = self.per_class.entry(g.0).or_default();
                stats.tp += 1;
                stats.iou_sum += iou;
                matched_gt.insert(g);
                matched_pred.insert(p);
            }
        }
        for g in gt_area.keys().filter(|g| !matched_gt.contains(g)) {
            self.per_class.entry(g.0).or_default().fn_ += 1;
        }
        for p in pred_area.keys().filter(|p| !matched_pred.contains(p)) {
            self.per_class.entry(p.0).or_default().fp += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &PanopticStats) {
        for (&c, s) in &other.per_class {
            let e = self.per_class.entry(c).or_default();
            e.tp += s.tp;
            e.fp += s.fp;
            e.fn_ += s.fn_;
            e.iou_sum += s.iou_sum;
        }
    }

    /// Mean quality over the populated classes in `classes`.
    pub fn average(&self, classes: &[u8]) -> Option<Quality> {
        let qs: Vec<Quality> = classes
            .iter()
            .filter_map(|c| self.per_class.get(c))
            .filter(|s| s.is_populated())
            .map(ClassPq::quality)
            .collect();
        if qs.is_empty() {
            return None;
        }
        let n = qs.len() as f64;
        Some(Quality {
            pq: qs.iter().map(|q| q.pq).sum::<f64>() / n,
            sq: qs.iter().map(|q| q.sq).sum::<f64>() / n,
            rq: qs.iter().map(|q| q.rq).sum::<f64>() / n,
        })
    }

    pub fn summarize(&self, known_classes: &[u8], unknown_class: u8) -> PanopticResult {
        PanopticResult {
            known: self.average(known_classes),
            unknown: self.average(&[unknown_class]),
            per_class: self.per_class.clone(),
        }
    }
}

/// Panoptic quality split into known classes and the unknown (outlier) class.
#[derive(Debug, Clone, PartialEq)]
pub struct PanopticResult {
    /// `None` when no known class is populated.
    pub known: Option<Quality>,
    pub unknown: Option<Quality>,
    pub per_class: BTreeMap<u8, ClassPq>,
}

pub fn panoptic_quality(
    pred: &PanopticMap,
    gt: &PanopticMap,
    known_classes: &[u8],
    unknown_class: u8,
) -> Result<PanopticResult> {
    if known_classes.contains(&unknown_class) {
        return Err(Error::invalid("unknown class listed among known classes"));
    }
    let mut stats = PanopticStats::default();
    stats.accumulate(pred, gt)?;
    Ok(stats.summarize(known_classes, unknown_class))
}
