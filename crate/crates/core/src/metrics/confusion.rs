use crate::error::{Error, Result};
use crate::tensor::{ensure_same_hw, LabelMap};

/// K x K pixel counts, rows indexed by ground truth and columns by prediction.
///
/// Ground-truth pixels coded ignore or outlier are skipped. Predictions
/// outside `0..K` (outlier or ignore codes) count as misses of the
/// ground-truth class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub n_classes: usize,
    pub counts: Vec<u64>,
    pub missed: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        Self { n_classes, counts: vec![0; n_classes * n_classes], missed: vec![0; n_classes] }
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.n_classes + pred]
    }

    pub fn accumulate(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<()> {
        ensure_same_hw("confusion matrix", (pred.height, pred.width), (gt.height, gt.width))?;
        let k = self.n_classes;
        for (&p, &g) in pred.data.iter().zip(&gt.data) {
            let g = g as usize;
            if g >= k {
                continue;
            }
            if (p as usize) < k {
                self.counts[g * k + p as usize] += 1;
            } else {
                self.missed[g] += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.n_classes != self.n_classes {
            return Err(Error::invalid("confusion matrices differ in class count"));
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        self.missed.iter_mut().zip(&other.missed).for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.missed.iter().sum::<u64>()
    }

    /// Per-class IoU; `None` for classes absent from both prediction and ground truth.
    pub fn class_iou(&self) -> Vec<Option<f64>> {
        let k = self.n_classes;
        (0..k)
            .map(|c| {
                let tp = self.get(c, c);
                let fn_: u64 = (0..k).filter(|&p| p != c).map(|p| self.get(c, p)).sum::<u64>() + self.missed[c];
                let fp: u64 = (0..k).filter(|&g| g != c).map(|g| self.get(g, c)).sum();
                let union = tp + fp + fn_;
                (union > 0).then(|| tp as f64 / union as f64)
            })
            .collect()
    }
}

/// Mean IoU over classes with a nonzero union.
pub fn miou(cm: &ConfusionMatrix) -> Result<f64> {
    let ious: Vec<f64> = cm.class_iou().into_iter().flatten().collect();
    if ious.is_empty() {
        return Err(Error::EmptyPartition("no evaluated pixels"));
    }
    Ok(ious.iter().sum::<f64>() / ious.len() as f64)
}
