use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::{ensure_same_hw, AnomalyMap, LabelMap, IGNORE};
use crate::Scalar;

/// Recorded pixel count above which evaluation switches to binned accumulation.
pub const EXACT_LIMIT: u64 = 10_000_000;

/// Every recorded score, split by partition.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExactScores {
    pub outlier: Vec<f64>,
    pub inlier: Vec<f64>,
}

/// Fixed-range histogram of scores per partition.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedScores {
    pub lo: f64,
    pub hi: f64,
    pub outlier: Vec<u64>,
    pub inlier: Vec<u64>,
    /// Scores below `lo` folded into the first bin.
    pub clamped_low: u64,
    /// Scores above `hi` folded into the last bin.
    pub clamped_high: u64,
}

impl BinnedScores {
    pub fn new(bins: usize, lo: f64, hi: f64) -> Result<Self> {
        if bins < 2 {
            return Err(Error::invalid("binned accumulator needs at least 2 bins"));
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::invalid(format!("invalid bin range [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi, outlier: vec![0; bins], inlier: vec![0; bins], clamped_low: 0, clamped_high: 0 })
    }

    pub fn bins(&self) -> usize {
        self.outlier.len()
    }

    #[inline]
    fn bin(&mut self, s: f64) -> usize {
        let n = self.bins();
        if s < self.lo {
            self.clamped_low += 1;
            return 0;
        }
        if s > self.hi {
            self.clamped_high += 1;
            return n - 1;
        }
        (((s - self.lo) / (self.hi - self.lo) * n as f64) as usize).min(n - 1)
    }

    /// Lower edge of bin `b`; the operating threshold that bin represents.
    pub fn edge(&self, b: usize) -> f64 {
        self.lo + (self.hi - self.lo) * b as f64 / self.bins() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScoreAccumulator {
    Exact(ExactScores),
    Binned(BinnedScores),
}

impl Default for ScoreAccumulator {
    fn default() -> Self {
        ScoreAccumulator::Exact(ExactScores::default())
    }
}

impl ScoreAccumulator {
    pub fn exact() -> Self {
        Self::default()
    }

    pub fn binned(bins: usize, lo: f64, hi: f64) -> Result<Self> {
        Ok(ScoreAccumulator::Binned(BinnedScores::new(bins, lo, hi)?))
    }

    /// An empty accumulator with the same mode and binning.
    pub fn empty_like(&self) -> Self {
        match self {
            ScoreAccumulator::Exact(_) => Self::exact(),
            ScoreAccumulator::Binned(b) => {
                ScoreAccumulator::Binned(BinnedScores::new(b.bins(), b.lo, b.hi).expect("validated binning"))
            }
        }
    }

    #[inline]
    pub fn record(&mut self, score: f64, is_outlier: bool) {
        match self {
            ScoreAccumulator::Exact(e) => {
                if is_outlier {
                    e.outlier.push(score)
                } else {
                    e.inlier.push(score)
                }
            }
            ScoreAccumulator::Binned(b) => {
                let i = b.bin(score);
                if is_outlier {
                    b.outlier[i] += 1
                } else {
                    b.inlier[i] += 1
                }
            }
        }
    }

    /// Records every non-ignored pixel of one image.
    pub fn accumulate<T: Scalar>(&mut self, s: &AnomalyMap<T>, ood_gt: &LabelMap) -> Result<()> {
        ensure_same_hw("accumulate", (s.height, s.width), (ood_gt.height, ood_gt.width))?;
        if let Some(i) = ood_gt.data.iter().position(|&c| c > 1 && c != IGNORE) {
            return Err(Error::invalid(format!("outlier ground truth code {} at pixel {i}", ood_gt.data[i])));
        }
        if let Some(i) = s.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        if let ScoreAccumulator::Exact(e) = self {
            let outliers = ood_gt.data.iter().filter(|&&c| c == 1).count();
            e.outlier.reserve(outliers);
            e.inlier.reserve(ood_gt.data.len() - outliers);
        }
        for (&v, &g) in s.data.iter().zip(&ood_gt.data) {
            if g != IGNORE {
                self.record(v.as_f64(), g == 1);
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: ScoreAccumulator) -> Result<()> {
        match (self, other) {
            (ScoreAccumulator::Exact(a), ScoreAccumulator::Exact(b)) => {
                a.outlier.extend(b.outlier);
                a.inlier.extend(b.inlier);
                Ok(())
            }
            (ScoreAccumulator::Binned(a), ScoreAccumulator::Binned(b)) => {
                if a.bins() != b.bins() || a.lo != b.lo || a.hi != b.hi {
                    return Err(Error::invalid("cannot merge accumulators with different binning"));
                }
                a.outlier.iter_mut().zip(&b.outlier).for_each(|(x, y)| *x += y);
                a.inlier.iter_mut().zip(&b.inlier).for_each(|(x, y)| *x += y);
                a.clamped_low += b.clamped_low;
                a.clamped_high += b.clamped_high;
                Ok(())
            }
            _ => Err(Error::invalid("cannot merge exact and binned accumulators")),
        }
    }

    /// (outlier count, inlier count).
    pub fn totals(&self) -> (u64, u64) {
        match self {
            ScoreAccumulator::Exact(e) => (e.outlier.len() as u64, e.inlier.len() as u64),
            ScoreAccumulator::Binned(b) => (b.outlier.iter().sum(), b.inlier.iter().sum()),
        }
    }

    /// Operating points in descending threshold order.
    pub fn curve(&self) -> Curve {
        let blocks = match self {
            ScoreAccumulator::Exact(e) => exact_blocks(&e.outlier, &e.inlier),
            ScoreAccumulator::Binned(b) => (0..b.bins())
                .rev()
                .filter(|&i| b.outlier[i] + b.inlier[i] > 0)
                .map(|i| Block { threshold: b.edge(i), pos: b.outlier[i], neg: b.inlier[i] })
                .collect(),
        };
        let (pos, neg) = self.totals();
        Curve { blocks, pos, neg }
    }
}

fn sorted_desc(v: &[f64]) -> Vec<f64> {
    let mut v = v.to_vec();
    v.sort_unstable_by(|a, b| b.total_cmp(a));
    v
}

/// Groups scores into tie blocks by walking both sorted partitions.
fn exact_blocks(outlier: &[f64], inlier: &[f64]) -> Vec<Block> {
    let (o, n) = (sorted_desc(outlier), sorted_desc(inlier));
    let (mut i, mut j) = (0, 0);
    let mut blocks = Vec::new();
    while i < o.len() || j < n.len() {
        let t = match (o.get(i), n.get(j)) {
            (Some(&a), Some(&b)) => a.max(b),
            (Some(&a), None) => a,
            (None, Some(&b)) => b,
            (None, None) => unreachable!(),
        };
        let mut block = Block { threshold: t, pos: 0, neg: 0 };
        while i < o.len() && o[i] == t {
            block.pos += 1;
            i += 1;
        }
        while j < n.len() && n[j] == t {
            block.neg += 1;
            j += 1;
        }
        blocks.push(block);
    }
    blocks
}

/// Pixels sharing one threshold value (or one bin).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Block {
    pub threshold: f64,
    pub pos: u64,
    pub neg: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

/// Tie blocks in descending threshold order, with partition totals.
/// Predicting "outlier iff s >= threshold" at block `j` fires on blocks `0..=j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub blocks: Vec<Block>,
    pub pos: u64,
    pub neg: u64,
}

impl Curve {
    fn need_pos(&self) -> Result<()> {
        if self.pos == 0 {
            return Err(Error::NoOutliers);
        }
        Ok(())
    }

    fn need_both(&self) -> Result<()> {
        self.need_pos()?;
        if self.neg == 0 {
            return Err(Error::EmptyPartition("no inlier pixels recorded"));
        }
        Ok(())
    }

    /// Step-wise precision at every recall increment, no interpolation.
    pub fn average_precision(&self) -> Result<f64> {
        self.need_pos()?;
        let (mut tp, mut fp) = (0u64, 0u64);
        let mut ap = 0.0;
        for b in &self.blocks {
            tp += b.pos;
            fp += b.neg;
            if b.pos > 0 {
                ap += b.pos as f64 * (tp as f64 / (tp + fp) as f64);
            }
        }
        Ok(ap / self.pos as f64)
    }

    /// Highest threshold whose true-positive rate reaches `target`.
    pub fn operating_point(&self, target: f64) -> Result<OperatingPoint> {
        self.need_pos()?;
        if !(target > 0.0 && target <= 1.0) {
            return Err(Error::invalid(format!("target TPR must lie in (0, 1], got {target}")));
        }
        let (mut tp, mut fp) = (0u64, 0u64);
        for b in &self.blocks {
            tp += b.pos;
            fp += b.neg;
            let tpr = tp as f64 / self.pos as f64;
            if tpr >= target {
                let fpr = if self.neg == 0 { 0.0 } else { fp as f64 / self.neg as f64 };
                return Ok(OperatingPoint { threshold: b.threshold, tpr, fpr });
            }
        }
        unreachable!("TPR reaches 1 at the last block")
    }

    pub fn fpr_at_tpr(&self, target: f64) -> Result<f64> {
        self.need_both()?;
        Ok(self.operating_point(target)?.fpr)
    }

    /// Probability that a random outlier outscores a random inlier, ties counted half.
    pub fn auroc(&self) -> Result<f64> {
        self.need_both()?;
        let mut above = 0u128;
        let mut twice_wins = 0u128;
        for b in &self.blocks {
            twice_wins += b.neg as u128 * (2 * above + b.pos as u128);
            above += b.pos as u128;
        }
        Ok(twice_wins as f64 / (2 * self.pos as u128 * self.neg as u128) as f64)
    }

    /// (threshold, precision, recall) at every block.
    pub fn pr_points(&self) -> Vec<(f64, f64, f64)> {
        let (mut tp, mut fp) = (0u64, 0u64);
        self.blocks
            .iter()
            .map(|b| {
                tp += b.pos;
                fp += b.neg;
                let recall = if self.pos == 0 { 0.0 } else { tp as f64 / self.pos as f64 };
                (b.threshold, tp as f64 / (tp + fp) as f64, recall)
            })
            .collect()
    }

    /// (threshold, fpr, tpr) at every block.
    pub fn roc_points(&self) -> Vec<(f64, f64, f64)> {
        let (mut tp, mut fp) = (0u64, 0u64);
        self.blocks
            .iter()
            .map(|b| {
                tp += b.pos;
                fp += b.neg;
                let fpr = if self.neg == 0 { 0.0 } else { fp as f64 / self.neg as f64 };
                let tpr = if self.pos == 0 { 0.0 } else { tp as f64 / self.pos as f64 };
                (b.threshold, fpr, tpr)
            })
            .collect()
    }
}

pub fn average_precision(acc: &ScoreAccumulator) -> Result<f64> {
    acc.curve().average_precision()
}

pub fn fpr_at_tpr(acc: &ScoreAccumulator, t: f64) -> Result<f64> {
    acc.curve().fpr_at_tpr(t)
}

pub fn auroc(acc: &ScoreAccumulator) -> Result<f64> {
    acc.curve().auroc()
}
