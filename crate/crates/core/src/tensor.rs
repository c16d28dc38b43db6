//! Dense domain types exchanged between the scoring, fusion and evaluation stages.
//!
//! All buffers are row-major. Constructors check buffer lengths only; value
//! ranges are reported by [`crate::manifest::validate_record`] and the
//! `check_*` helpers so that out-of-range inputs can be diagnosed instead of
//! rejected outright.

use crate::dtf::{AnyTensor, Tensor};
use crate::error::{Error, Result};
use crate::Scalar;

/// Label code marking pixels excluded from every metric.
pub const IGNORE: u8 = 255;

fn check_len(what: &str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::shape(format!("{what}: expected {expected} elements, got {actual}")));
    }
    Ok(())
}

fn dims<const R: usize>(what: &str, shape: &[usize]) -> Result<[usize; R]> {
    shape.try_into().map_err(|_| Error::shape(format!("{what}: expected rank {R}, got shape {shape:?}")))
}

/// N x H x W per-pixel mask assignment probabilities in [0, 1].
///
/// Assignments are independent sigmoids: they are never renormalized across masks.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskAssignments<T> {
    pub n_masks: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> MaskAssignments<T> {
    pub fn new(n_masks: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if n_masks == 0 || height * width == 0 {
            return Err(Error::shape("mask assignments need N >= 1 and H*W >= 1"));
        }
        check_len("mask assignments", n_masks * height * width, data.len())?;
        Ok(Self { n_masks, height, width, data })
    }

    pub fn zeros(n_masks: usize, height: usize, width: usize) -> Result<Self> {
        Self::new(n_masks, height, width, vec![T::zero(); n_masks * height * width])
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn mask(&self, i: usize) -> &[T] {
        let p = self.pixels();
        &self.data[i * p..(i + 1) * p]
    }

    pub fn mask_mut(&mut self, i: usize) -> &mut [T] {
        let p = self.pixels();
        &mut self.data[i * p..(i + 1) * p]
    }

    /// Assignment of mask `i` at flat pixel index `p`.
    #[inline]
    pub fn at(&self, i: usize, p: usize) -> T {
        self.data[i * self.pixels() + p]
    }

    /// Index of the first element outside [0, 1], if any.
    pub fn first_out_of_range(&self) -> Option<usize> {
        self.data.iter().position(|v| !(*v >= T::zero() && *v <= T::one()))
    }

    pub fn from_tensor(t: Tensor<T>) -> Result<Self> {
        let [n, h, w] = dims::<3>("mask assignments", &t.shape)?;
        Self::new(n, h, w, t.data)
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor { shape: vec![self.n_masks, self.height, self.width], data: self.data.clone() }
    }
}

/// N x (K+1) per-mask categorical distributions; column K is void.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskClassScores<T> {
    pub n_masks: usize,
    pub n_classes: usize,
    pub data: Vec<T>,
}

/// Tolerance on the sum of each class-score row.
pub const ROW_SUM_TOLERANCE: f64 = 1e-5;

impl<T: Scalar> MaskClassScores<T> {
    pub fn new(n_masks: usize, n_classes: usize, data: Vec<T>) -> Result<Self> {
        if n_masks == 0 || n_classes == 0 {
            return Err(Error::shape("class scores need N >= 1 and K >= 1"));
        }
        check_len("class scores", n_masks * (n_classes + 1), data.len())?;
        Ok(Self { n_masks, n_classes, data })
    }

    /// Full row including the void column.
    pub fn row(&self, i: usize) -> &[T] {
        let c = self.n_classes + 1;
        &self.data[i * c..(i + 1) * c]
    }

    /// The K non-void columns of row `i` (a row of `w_cls`).
    pub fn known(&self, i: usize) -> &[T] {
        &self.row(i)[..self.n_classes]
    }

    pub fn void(&self, i: usize) -> T {
        self.row(i)[self.n_classes]
    }

    /// Rows that are not a categorical distribution within [`ROW_SUM_TOLERANCE`].
    pub fn unnormalized_rows(&self) -> Vec<usize> {
        (0..self.n_masks)
            .filter(|&i| {
                let row = self.row(i);
                let negative = row.iter().any(|v| !(*v >= T::zero()));
                let sum: f64 = row.iter().map(|v| v.as_f64()).sum();
                negative || !((sum - 1.0).abs() <= ROW_SUM_TOLERANCE)
            })
            .collect()
    }

    pub fn from_tensor(t: Tensor<T>) -> Result<Self> {
        let [n, c] = dims::<2>("class scores", &t.shape)?;
        if c < 2 {
            return Err(Error::shape("class scores need at least one known class and void"));
        }
        Self::new(n, c - 1, t.data)
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor { shape: vec![self.n_masks, self.n_classes + 1], data: self.data.clone() }
    }
}

/// K x H x W dense class tensor. Used for both per-pixel logits and the
/// fused closed-set scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMap<T> {
    pub n_classes: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

/// Unbounded per-pixel class logits.
pub type PixelLogits<T> = ClassMap<T>;
/// Closed-set scores `H_closed[k, r, c] = Σ_i m_i[r, c] · P_i(k)`.
pub type ClosedSetScores<T> = ClassMap<T>;

impl<T: Scalar> ClassMap<T> {
    pub fn new(n_classes: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if n_classes == 0 || height * width == 0 {
            return Err(Error::shape("class map needs K >= 1 and H*W >= 1"));
        }
        check_len("class map", n_classes * height * width, data.len())?;
        Ok(Self { n_classes, height, width, data })
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn plane(&self, k: usize) -> &[T] {
        let p = self.pixels();
        &self.data[k * p..(k + 1) * p]
    }

    #[inline]
    pub fn at(&self, k: usize, p: usize) -> T {
        self.data[k * self.pixels() + p]
    }

    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }

    pub fn from_tensor(t: Tensor<T>) -> Result<Self> {
        let [k, h, w] = dims::<3>("class map", &t.shape)?;
        Self::new(k, h, w, t.data)
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor { shape: vec![self.n_classes, self.height, self.width], data: self.data.clone() }
    }
}

/// H x W anomaly scores; larger is more anomalous.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyMap<T> {
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> AnomalyMap<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        check_len("anomaly map", height * width, data.len())?;
        Ok(Self { height, width, data })
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn from_tensor(t: Tensor<T>) -> Result<Self> {
        let [h, w] = dims::<2>("anomaly map", &t.shape)?;
        Self::new(h, w, t.data)
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor { shape: vec![self.height, self.width], data: self.data.clone() }
    }

    /// Finite (min, max) over the map, or `None` if empty.
    pub fn range(&self) -> Option<(T, T)> {
        let mut it = self.data.iter().copied();
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v))))
    }
}

/// H x W label codes: `0..K` known classes, `K` outlier, [`IGNORE`] ignore.
///
/// Binary outlier ground truth is a `LabelMap` with `n_classes == 1`
/// (0 inlier, 1 outlier, 255 ignore).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub n_classes: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl LabelMap {
    pub fn new(n_classes: usize, height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if n_classes >= IGNORE as usize {
            return Err(Error::invalid(format!("K = {n_classes} collides with the ignore code")));
        }
        check_len("label map", height * width, data.len())?;
        Ok(Self { n_classes, height, width, data })
    }

    /// Binary outlier ground truth.
    pub fn ood(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        Self::new(1, height, width, data)
    }

    pub fn outlier_code(&self) -> u8 {
        self.n_classes as u8
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// Index of the first code outside `{0..K, K, 255}`.
    pub fn first_invalid(&self) -> Option<usize> {
        let k = self.n_classes as u8;
        self.data.iter().position(|&c| c > k && c != IGNORE)
    }

    pub fn from_tensor(n_classes: usize, t: Tensor<u8>) -> Result<Self> {
        let [h, w] = dims::<2>("label map", &t.shape)?;
        Self::new(n_classes, h, w, t.data)
    }

    pub fn to_tensor(&self) -> Tensor<u8> {
        Tensor { shape: vec![self.height, self.width], data: self.data.clone() }
    }
}

/// Per-pixel (class code, instance id) pairs. Instance 0 marks stuff or
/// pixels that belong to no instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PanopticMap {
    pub height: usize,
    pub width: usize,
    pub class: Vec<u8>,
    pub instance: Vec<i32>,
}

impl PanopticMap {
    pub fn new(height: usize, width: usize, class: Vec<u8>, instance: Vec<i32>) -> Result<Self> {
        check_len("panoptic class", height * width, class.len())?;
        check_len("panoptic instance", height * width, instance.len())?;
        Ok(Self { height, width, class, instance })
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// First instance id (> 0) that spans more than one class code, if any.
    pub fn inconsistent_instance(&self) -> Option<i32> {
        let mut seen = std::collections::HashMap::new();
        for (&c, &id) in self.class.iter().zip(&self.instance) {
            if id > 0 && *seen.entry(id).or_insert(c) != c {
                return Some(id);
            }
        }
        None
    }

    pub fn from_tensors(class: Tensor<u8>, instance: Tensor<i32>) -> Result<Self> {
        let [h, w] = dims::<2>("panoptic class", &class.shape)?;
        if instance.shape != class.shape {
            return Err(Error::shape(format!(
                "panoptic instance shape {:?} differs from class shape {:?}",
                instance.shape, class.shape
            )));
        }
        Self::new(h, w, class.data, instance.data)
    }

    pub fn to_tensors(&self) -> (Tensor<u8>, Tensor<i32>) {
        let shape = vec![self.height, self.width];
        (Tensor { shape: shape.clone(), data: self.class.clone() }, Tensor { shape, data: self.instance.clone() })
    }
}

/// Wraps a float tensor in the interchange enum.
pub fn float_tensor<T: Scalar>(t: Tensor<T>) -> AnyTensor {
    T::wrap(t)
}

pub(crate) fn ensure_same_hw(what: &str, a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::shape(format!("{what}: {}x{} vs {}x{}", a.0, a.1, b.0, b.1)));
    }
    Ok(())
}

pub(crate) fn ensure_same_n<T: Scalar>(m: &MaskAssignments<T>, cls: &MaskClassScores<T>) -> Result<()> {
    if m.n_masks != cls.n_masks {
        return Err(Error::NMismatch { masks: m.n_masks, cls: cls.n_masks });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_layout_is_mask_major() {
        let m = MaskAssignments::<f32>::new(2, 1, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(m.mask(1), &[0.3, 0.4]);
        assert_eq!(m.at(0, 1), 0.2);
        assert!(MaskAssignments::<f32>::new(0, 1, 1, vec![]).is_err());
        assert!(MaskAssignments::<f32>::new(1, 1, 2, vec![0.0]).is_err());
    }

    #[test]
    fn row_normalization_check() {
        let cls = MaskClassScores::<f32>::new(2, 2, vec![0.5, 0.3, 0.2, 0.4, 0.2, 0.2]).unwrap();
        assert_eq!(cls.unnormalized_rows(), vec![1]);
        assert_eq!(cls.known(0), &[0.5, 0.3]);
        assert_eq!(cls.void(0), 0.2);
    }

    #[test]
    fn label_codes() {
        let l = LabelMap::new(3, 1, 4, vec![0, 3, 255, 4]).unwrap();
        assert_eq!(l.first_invalid(), Some(3));
        assert!(LabelMap::new(255, 1, 1, vec![0]).is_err());
    }

    #[test]
    fn panoptic_consistency() {
        let p = PanopticMap::new(1, 3, vec![1, 1, 2], vec![1, 1, 1]).unwrap();
        assert_eq!(p.inconsistent_instance(), Some(1));
        let q = PanopticMap::new(1, 3, vec![1, 2, 2], vec![1, 0, 0]).unwrap();
        assert_eq!(q.inconsistent_instance(), None);
    }
}
