//! Mask-level fusion and anomaly scores.
//!
//! Every operation here consumes the N x H x W assignment tensor `m` and the
//! N x (K+1) class scores, reading the K known columns only. The void column
//! never enters a max or log-sum-exp over classes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{argmax, log_sum_exp};
use crate::tensor::{ensure_same_n, AnomalyMap, ClosedSetScores, LabelMap, MaskAssignments, MaskClassScores, IGNORE};
use crate::Scalar;

/// Pixels per tile for kernels that keep a K x TILE accumulator in cache.
pub(crate) const CLASS_TILE: usize = 256;
/// Pixels per tile for kernels with a single accumulator row.
const ROW_TILE: usize = 4096;

/// What the energy detector is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyInput {
    /// The class scores as they are (probabilities or ensembled probabilities).
    #[default]
    Probabilities,
    /// Natural logs of the class scores, i.e. logits up to a per-row constant.
    LogProbabilities,
}

/// Scalar uncertainty functional over a vector of K class scores.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Detector {
    /// Negated hard maximum.
    #[default]
    MaxScore,
    /// Negated temperature-scaled log-sum-exp.
    Energy { beta: f64, input: EnergyInput },
}

impl Detector {
    pub fn energy(beta: f64) -> Self {
        Detector::Energy { beta, input: EnergyInput::Probabilities }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Detector::Energy { beta, .. } if !(beta > 0.0 && beta.is_finite()) => {
                Err(Error::invalid(format!("energy temperature must be positive, got {beta}")))
            }
            _ => Ok(()),
        }
    }

    /// Uncertainty of one class-score vector; higher is more anomalous.
    #[inline]
    pub fn uncertainty<T: Scalar>(&self, scores: &[T]) -> T {
        match *self {
            Detector::MaxScore => -scores.iter().copied().fold(T::neg_infinity(), T::max),
            Detector::Energy { beta, input } => {
                let beta = T::lit(beta);
                match input {
                    EnergyInput::Probabilities => -log_sum_exp(scores.iter().copied(), beta),
                    EnergyInput::LogProbabilities => {
                        let floor = T::min_positive_value();
                        -log_sum_exp(scores.iter().map(|v| v.max(floor).ln()), beta)
                    }
                }
            }
        }
    }
}

/// Accumulates `acc[k][j] = Σ_i m_i[start + j] · w_cls[i][k]` for one tile.
#[inline]
fn ensemble_tile<T: Scalar>(m: &MaskAssignments<T>, cls: &MaskClassScores<T>, start: usize, len: usize, acc: &mut [T]) {
    let k = cls.n_classes;
    acc[..k * CLASS_TILE].fill(T::zero());
    for i in 0..m.n_masks {
        let mi = &m.mask(i)[start..start + len];
        for (c, &w) in cls.known(i).iter().enumerate() {
            if w == T::zero() {
                continue;
            }
            let row = &mut acc[c * CLASS_TILE..c * CLASS_TILE + len];
            for (a, &x) in row.iter_mut().zip(mi) {
                *a += x * w;
            }
        }
    }
}

/// Runs `f(accumulator, out_chunk)` over pixel tiles in parallel,
/// with the closed-set accumulator filled for each tile.
fn for_each_ensembled_tile<T, O, F>(m: &MaskAssignments<T>, cls: &MaskClassScores<T>, out: &mut [O], f: F)
where
    T: Scalar,
    O: Send,
    F: Fn(&[T], &mut [O]) + Sync,
{
    let k = cls.n_classes;
    out.par_chunks_mut(CLASS_TILE).enumerate().for_each_init(
        || vec![T::zero(); k * CLASS_TILE],
        |acc, (t, chunk)| {
            let start = t * CLASS_TILE;
            ensemble_tile(m, cls, start, chunk.len(), acc);
            f(acc, chunk);
        },
    );
}

/// Like [`for_each_ensembled_tile`] but hands the tile's anomaly scores to `f`
/// and skips the class ensemble for tiles where every score is `>= tau`.
pub(crate) fn for_each_tile_with_scores<T, O, F>(
    m: &MaskAssignments<T>,
    cls: &MaskClassScores<T>,
    scores: &[T],
    tau: T,
    out: &mut [O],
    f: F,
) where
    T: Scalar,
    O: Send,
    F: Fn(&[T], &[T], &mut [O]) + Sync,
{
    let k = cls.n_classes;
    out.par_chunks_mut(CLASS_TILE).enumerate().for_each_init(
        || vec![T::zero(); k * CLASS_TILE],
        |acc, (t, chunk)| {
            let start = t * CLASS_TILE;
            let tile_scores = &scores[start..start + chunk.len()];
            if tile_scores.iter().any(|&v| !(v >= tau)) {
                ensemble_tile(m, cls, start, chunk.len(), acc);
            }
            f(tile_scores, acc, chunk);
        },
    );
}

/// Closed-set scores: each class plane is the assignment-weighted sum of the
/// per-mask class probabilities. No normalization.
pub fn fuse_closed<T: Scalar>(m: &MaskAssignments<T>, cls: &MaskClassScores<T>) -> Result<ClosedSetScores<T>> {
    ensure_same_n(m, cls)?;
    let (k, p) = (cls.n_classes, m.pixels());
    let tiles: Vec<Vec<T>> = (0..p.div_ceil(CLASS_TILE))
        .into_par_iter()
        .map_init(
            || vec![T::zero(); k * CLASS_TILE],
            |acc, t| {
                let start = t * CLASS_TILE;
                let len = CLASS_TILE.min(p - start);
                ensemble_tile(m, cls, start, len, acc);
                acc.clone()
            },
        )
        .collect();
    let mut data = vec![T::zero(); k * p];
    for (t, acc) in tiles.iter().enumerate() {
        let start = t * CLASS_TILE;
        let len = CLASS_TILE.min(p - start);
        for c in 0..k {
            data[c * p + start..c * p + start + len].copy_from_slice(&acc[c * CLASS_TILE..c * CLASS_TILE + len]);
        }
    }
    ClosedSetScores::new(k, m.height, m.width, data)
}

/// Per-pixel argmax over the K closed-set planes, ties toward the smallest class.
pub fn closed_pred<T: Scalar>(h: &ClosedSetScores<T>) -> LabelMap {
    let p = h.pixels();
    let mut data = vec![0u8; p];
    data.par_chunks_mut(ROW_TILE).enumerate().for_each(|(t, chunk)| {
        let start = t * ROW_TILE;
        let mut best = h.plane(0)[start..start + chunk.len()].to_vec();
        chunk.fill(0);
        for c in 1..h.n_classes {
            let plane = &h.plane(c)[start..start + chunk.len()];
            for ((b, label), &v) in best.iter_mut().zip(chunk.iter_mut()).zip(plane) {
                if v > *b {
                    *b = v;
                    *label = c as u8;
                }
            }
        }
    });
    LabelMap { n_classes: h.n_classes, height: h.height, width: h.width, data }
}

/// `closed_pred(fuse_closed(m, cls))` without materializing the K x H x W tensor.
pub fn closed_pred_from_masks<T: Scalar>(m: &MaskAssignments<T>, cls: &MaskClassScores<T>) -> Result<LabelMap> {
    ensure_same_n(m, cls)?;
    let k = cls.n_classes;
    let mut data = vec![0u8; m.pixels()];
    for_each_ensembled_tile(m, cls, &mut data, |acc, chunk| {
        tile_argmax(acc, k, chunk, |_| true);
    });
    Ok(LabelMap { n_classes: k, height: m.height, width: m.width, data })
}

/// Writes the class argmax of a tile accumulator into `labels` where `keep(j)` holds.
#[inline]
pub(crate) fn tile_argmax<T: Scalar>(acc: &[T], k: usize, labels: &mut [u8], keep: impl Fn(usize) -> bool) {
    let len = labels.len();
    let mut best = acc[..len].to_vec();
    let mut arg = vec![0u8; len];
    for c in 1..k {
        let plane = &acc[c * CLASS_TILE..c * CLASS_TILE + len];
        for ((b, a), &v) in best.iter_mut().zip(arg.iter_mut()).zip(plane) {
            if v > *b {
                *b = v;
                *a = c as u8;
            }
        }
    }
    for (j, (l, a)) in labels.iter_mut().zip(arg).enumerate() {
        if keep(j) {
            *l = a;
        }
    }
}

/// Max-mask score: pixels not claimed by any mask are the most anomalous.
pub fn score_am<T: Scalar>(m: &MaskAssignments<T>) -> AnomalyMap<T> {
    let mut out = vec![T::zero(); m.pixels()];
    out.par_chunks_mut(ROW_TILE).enumerate().for_each(|(t, chunk)| {
        let start = t * ROW_TILE;
        chunk.copy_from_slice(&m.mask(0)[start..start + chunk.len()]);
        for i in 1..m.n_masks {
            for (s, &v) in chunk.iter_mut().zip(&m.mask(i)[start..]) {
                *s = s.max(v);
            }
        }
        for s in chunk.iter_mut() {
            *s = -*s;
        }
    });
    AnomalyMap { height: m.height, width: m.width, data: out }
}

/// Index of the preferred (largest-assignment) mask at every pixel, ties toward the smallest index.
pub fn preferred_mask<T: Scalar>(m: &MaskAssignments<T>) -> Vec<u32> {
    let mut out = vec![0u32; m.pixels()];
    out.par_chunks_mut(ROW_TILE).enumerate().for_each(|(t, chunk)| {
        let start = t * ROW_TILE;
        let mut best = m.mask(0)[start..start + chunk.len()].to_vec();
        chunk.fill(0);
        for i in 1..m.n_masks {
            for ((b, arg), &v) in best.iter_mut().zip(chunk.iter_mut()).zip(&m.mask(i)[start..]) {
                if v > *b {
                    *b = v;
                    *arg = i as u32;
                }
            }
        }
    });
    out
}

/// Hard-assigned mask score: the max known-class probability of the
/// preferred mask, ignoring how strongly that mask claims the pixel.
pub fn score_ahm<T: Scalar>(m: &MaskAssignments<T>, cls: &MaskClassScores<T>) -> Result<AnomalyMap<T>> {
    ensure_same_n(m, cls)?;
    let table = per_mask_uncertainty(cls, &Detector::MaxScore);
    let data = preferred_mask(m).into_par_iter().map(|i| table[i as usize]).collect();
    Ok(AnomalyMap { height: m.height, width: m.width, data })
}

/// Detector applied to the ensembled closed-set scores at each pixel.
pub fn score_aem<T: Scalar>(m: &MaskAssignments<T>, cls: &MaskClassScores<T>, d: &Detector) -> Result<AnomalyMap<T>> {
    ensure_same_n(m, cls)?;
    d.validate()?;
    let k = cls.n_classes;
    let mut out = vec![T::zero(); m.pixels()];
    for_each_ensembled_tile(m, cls, &mut out, |acc, chunk| {
        let mut column = vec![T::zero(); k];
        for (j, s) in chunk.iter_mut().enumerate() {
            for (c, v) in column.iter_mut().enumerate() {
                *v = acc[c * CLASS_TILE + j];
            }
            *s = d.uncertainty(&column);
        }
    });
    Ok(AnomalyMap { height: m.height, width: m.width, data: out })
}

/// Detector output per mask over its K known-class scores.
pub fn per_mask_uncertainty<T: Scalar>(cls: &MaskClassScores<T>, d: &Detector) -> Vec<T> {
    (0..cls.n_masks).map(|i| d.uncertainty(cls.known(i))).collect()
}

/// Ensemble of per-mask anomalies: per-mask uncertainties broadcast through
/// the assignments and summed. With the max-score detector this is a lower
/// bound of [`score_aem`].
pub fn score_eam<T: Scalar>(m: &MaskAssignments<T>, cls: &MaskClassScores<T>, d: &Detector) -> Result<AnomalyMap<T>> {
    ensure_same_n(m, cls)?;
    d.validate()?;
    let u = per_mask_uncertainty(cls, d);
    let mut out = vec![T::zero(); m.pixels()];
    out.par_chunks_mut(ROW_TILE).enumerate().for_each(|(t, chunk)| {
        let start = t * ROW_TILE;
        chunk.fill(T::zero());
        for (i, &ui) in u.iter().enumerate() {
            if ui == T::zero() {
                continue;
            }
            for (s, &v) in chunk.iter_mut().zip(&m.mask(i)[start..]) {
                *s += v * ui;
            }
        }
    });
    Ok(AnomalyMap { height: m.height, width: m.width, data: out })
}

/// Mask-level score family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMethod {
    Am,
    Ahm,
    Aem,
    Eam,
}

impl MaskMethod {
    pub const ALL: [MaskMethod; 4] = [MaskMethod::Am, MaskMethod::Ahm, MaskMethod::Aem, MaskMethod::Eam];

    pub fn score<T: Scalar>(
        self,
        m: &MaskAssignments<T>,
        cls: &MaskClassScores<T>,
        d: &Detector,
    ) -> Result<AnomalyMap<T>> {
        match self {
            MaskMethod::Am => {
                ensure_same_n(m, cls)?;
                Ok(score_am(m))
            }
            MaskMethod::Ahm => score_ahm(m, cls),
            MaskMethod::Aem => score_aem(m, cls, d),
            MaskMethod::Eam => score_eam(m, cls, d),
        }
    }
}

/// Relative frequencies of the max mask assignment over inlier and outlier pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceHistograms {
    /// `None` when the partition has no pixels.
    pub inlier: Option<Vec<f64>>,
    pub outlier: Option<Vec<f64>>,
}

pub fn mask_confidence_histogram<T: Scalar>(
    m: &MaskAssignments<T>,
    ood_gt: &LabelMap,
    bins: usize,
) -> Result<ConfidenceHistograms> {
    let counts = mask_confidence_counts(m, ood_gt, bins)?;
    let normalize = |c: &[u64]| {
        let total: u64 = c.iter().sum();
        (total > 0).then(|| c.iter().map(|&v| v as f64 / total as f64).collect())
    };
    let hist = ConfidenceHistograms { inlier: normalize(&counts[0]), outlier: normalize(&counts[1]) };
    if hist.inlier.is_none() && hist.outlier.is_none() {
        return Err(Error::EmptyPartition("no inlier or outlier pixels"));
    }
    Ok(hist)
}

/// Raw counts behind [`mask_confidence_histogram`]: `[inlier, outlier]`.
pub fn mask_confidence_counts<T: Scalar>(
    m: &MaskAssignments<T>,
    ood_gt: &LabelMap,
    bins: usize,
) -> Result<[Vec<u64>; 2]> {
    if bins == 0 {
        return Err(Error::invalid("histogram needs at least one bin"));
    }
    crate::tensor::ensure_same_hw("histogram", (m.height, m.width), (ood_gt.height, ood_gt.width))?;
    if let Some(i) = ood_gt.data.iter().position(|&c| c > 1 && c != IGNORE) {
        return Err(Error::invalid(format!("outlier ground truth code {} at pixel {i}", ood_gt.data[i])));
    }
    let am = score_am(m);
    let mut counts = [vec![0u64; bins], vec![0u64; bins]];
    for (&s, &g) in am.data.iter().zip(&ood_gt.data) {
        if g == IGNORE {
            continue;
        }
        let v = (-s).as_f64();
        let b = ((v * bins as f64).floor().max(0.0) as usize).min(bins - 1);
        counts[g as usize][b] += 1;
    }
    Ok(counts)
}

/// Most likely known class of mask `i`.
pub(crate) fn argmax_known<T: Scalar>(cls: &MaskClassScores<T>, i: usize) -> usize {
    argmax(cls.known(i)).expect("K >= 1")
}
