//! Per-pixel anomaly baselines over dense class logits.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{AnomalyMap, PixelLogits};
use crate::Scalar;

const TILE: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PixelMethod {
    MaxSoftmax,
    MaxLogit,
    Entropy,
    Energy,
    KlUniform,
}

impl PixelMethod {
    pub const ALL: [PixelMethod; 5] = [
        PixelMethod::MaxSoftmax,
        PixelMethod::MaxLogit,
        PixelMethod::Entropy,
        PixelMethod::Energy,
        PixelMethod::KlUniform,
    ];

    /// Anomaly score of a single logit vector. Higher is more anomalous.
    pub fn score<T: Scalar>(self, logits: &[T]) -> T {
        let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
        if self == PixelMethod::MaxLogit {
            return -max;
        }
        let sum_exp: T = logits.iter().map(|&l| (l - max).exp()).sum();
        let log_z = max + sum_exp.ln();
        match self {
            PixelMethod::MaxLogit => unreachable!(),
            PixelMethod::Energy => -log_z,
            // p_max = exp(max - log_z)
            PixelMethod::MaxSoftmax => -(max - log_z).exp(),
            PixelMethod::Entropy => entropy(logits, log_z),
            PixelMethod::KlUniform => {
                let k = T::from_usize(logits.len()).expect("class count");
                -(k.ln() - entropy(logits, log_z))
            }
        }
    }
}

/// Σ -p ln p with ln p = l - log_z, taking 0·ln 0 as 0.
#[inline]
fn entropy<T: Scalar>(logits: &[T], log_z: T) -> T {
    logits
        .iter()
        .map(|&l| {
            let log_p = l - log_z;
            let p = log_p.exp();
            if p > T::zero() {
                -p * log_p
            } else {
                T::zero()
            }
        })
        .sum()
}

/// Applies a per-pixel baseline to every pixel of a logit tensor.
pub fn pixel_score<T: Scalar>(logits: &PixelLogits<T>, method: PixelMethod) -> Result<AnomalyMap<T>> {
    if logits.n_classes < 2 {
        return Err(Error::invalid("per-pixel scores need K >= 2"));
    }
    if let Some(i) = logits.first_non_finite() {
        return Err(Error::NonFinite(i));
    }
    let p = logits.pixels();
    let k = logits.n_classes;
    let mut out = vec![T::zero(); p];
    out.par_chunks_mut(TILE).enumerate().for_each(|(t, chunk)| {
        let mut column = vec![T::zero(); k];
        for (j, s) in chunk.iter_mut().enumerate() {
            let px = t * TILE + j;
            for (c, v) in column.iter_mut().enumerate() {
                *v = logits.data[c * p + px];
            }
            *s = method.score(&column);
        }
    });
    AnomalyMap::new(logits.height, logits.width, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Scalar reference: explicit softmax then the textbook formulas.
    fn reference(logits: &[f64], method: PixelMethod) -> f64 {
        let exps: Vec<f64> = logits.iter().map(|l| l.exp()).collect();
        let z: f64 = exps.iter().sum();
        let p: Vec<f64> = exps.iter().map(|e| e / z).collect();
        let k = logits.len() as f64;
        match method {
            PixelMethod::MaxSoftmax => -p.iter().cloned().fold(f64::MIN, f64::max),
            PixelMethod::MaxLogit => -logits.iter().cloned().fold(f64::MIN, f64::max),
            PixelMethod::Entropy => -p.iter().map(|q| if *q > 0.0 { q * q.ln() } else { 0.0 }).sum::<f64>(),
            PixelMethod::Energy => -z.ln(),
            PixelMethod::KlUniform => -p.iter().map(|q| if *q > 0.0 { q * (q * k).ln() } else { 0.0 }).sum::<f64>(),
        }
    }

    fn map(logits: &[f64]) -> PixelLogits<f64> {
        PixelLogits::new(logits.len(), 1, 1, logits.to_vec()).unwrap()
    }

    #[test]
    fn two_class_uniform() {
        let m = map(&[0.0, 0.0]);
        let e = pixel_score(&m, PixelMethod::Entropy).unwrap().data[0];
        assert!((e - 2f64.ln()).abs() < 1e-12);
        let en = pixel_score(&m, PixelMethod::Energy).unwrap().data[0];
        assert!((en + 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn three_class_examples() {
        let m = map(&[2.0, 1.0, 0.0]);
        let msp = pixel_score(&m, PixelMethod::MaxSoftmax).unwrap().data[0];
        assert!((msp - reference(&[2.0, 1.0, 0.0], PixelMethod::MaxSoftmax)).abs() < 1e-12);
        assert!((msp + 0.66524).abs() < 1e-5);
        let kl = pixel_score(&m, PixelMethod::KlUniform).unwrap().data[0];
        assert!((kl + 0.266_216_7).abs() < 1e-6, "{kl}");
    }

    #[test]
    fn rejects_single_class_and_non_finite() {
        assert!(pixel_score(&map(&[1.0]), PixelMethod::Entropy).is_err());
        assert!(matches!(pixel_score(&map(&[1.0, f64::NAN]), PixelMethod::Entropy), Err(Error::NonFinite(1))));
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let s = pixel_score(&map(&[1000.0, -1000.0, 0.0]), PixelMethod::Entropy).unwrap().data[0];
        assert!(s.is_finite() && s >= 0.0);
        let e = pixel_score(&map(&[1000.0, 999.0]), PixelMethod::Energy).unwrap().data[0];
        assert!(e.is_finite());
    }

    #[test]
    fn tiles_cover_every_pixel() {
        let (h, w, k) = (70, 90, 3);
        let data: Vec<f64> = (0..k * h * w).map(|i| ((i * 37) % 11) as f64 * 0.3).collect();
        let logits = PixelLogits::new(k, h, w, data).unwrap();
        let out = pixel_score(&logits, PixelMethod::MaxSoftmax).unwrap();
        for px in [0, 4095, 4096, h * w - 1] {
            let col: Vec<f64> = (0..k).map(|c| logits.at(c, px)).collect();
            assert!((out.data[px] - reference(&col, PixelMethod::MaxSoftmax)).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn matches_reference(logits in prop::collection::vec(-8.0f64..8.0, 2..12)) {
            for method in PixelMethod::ALL {
                let got = method.score(&logits);
                prop_assert!((got - reference(&logits, method)).abs() < 1e-9);
            }
        }

        #[test]
        fn shift_invariance(logits in prop::collection::vec(-8.0f64..8.0, 2..12), c in -50.0f64..50.0) {
            let shifted: Vec<f64> = logits.iter().map(|l| l + c).collect();
            for method in [PixelMethod::MaxSoftmax, PixelMethod::Entropy, PixelMethod::KlUniform] {
                prop_assert!((method.score(&logits) - method.score(&shifted)).abs() < 1e-6);
            }
            for method in [PixelMethod::MaxLogit, PixelMethod::Energy] {
                prop_assert!((method.score(&shifted) - (method.score(&logits) - c)).abs() < 1e-9);
            }
        }

        #[test]
        fn entropy_minus_kl_is_log_k(logits in prop::collection::vec(-8.0f64..8.0, 2..12)) {
            let k = logits.len() as f64;
            let diff = PixelMethod::Entropy.score(&logits) - PixelMethod::KlUniform.score(&logits);
            prop_assert!((diff - k.ln()).abs() < 1e-6);
        }

        #[test]
        fn confident_pixels_score_below_uniform(k in 2usize..12, hot in 0usize..12, gap in 10.0f64..30.0) {
            let uniform = vec![0.0f64; k];
            let mut peaked = vec![0.0f64; k];
            peaked[hot % k] = gap;
            for method in PixelMethod::ALL {
                prop_assert!(method.score(&peaked) < method.score(&uniform), "{method:?}");
            }
        }
    }
}
