//! Negative-data pasting with void ground truth.
//!
//! Pasted pixels are removed from every class mask and recorded in the void
//! mask, so no class claims them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pnm::RgbImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PasteMode {
    /// A masked negative instance, rescaled.
    Instance,
    /// A square patch cut from a donor image.
    Patch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PasteSpec {
    pub mode: PasteMode,
    pub seed: u64,
    /// Pastes per image.
    pub count: usize,
    /// Range of the pasted area as a fraction of the image area.
    pub scale: (f64, f64),
}

impl Default for PasteSpec {
    fn default() -> Self {
        Self { mode: PasteMode::Instance, seed: 0, count: 2, scale: (0.01, 0.10) }
    }
}

impl PasteSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.scale;
        if self.count == 0 {
            return Err(Error::invalid("paste count must be >= 1"));
        }
        if !(lo > 0.0 && hi < 1.0 && lo <= hi) {
            return Err(Error::invalid(format!("paste scale range ({lo}, {hi}) must lie within (0, 1)")));
        }
        Ok(())
    }

    /// Seed of the `index`-th sample of a batch.
    pub fn derived(&self, index: u64) -> Self {
        Self { seed: self.seed ^ index, ..*self }
    }

    fn sample_fraction(&self, rng: &mut ChaCha8Rng) -> f64 {
        let (lo, hi) = self.scale;
        if lo == hi {
            lo
        } else {
            rng.gen_range(lo..=hi)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl BinaryMask {
    pub fn empty(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![false; height * width] }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![true; height * width] }
    }

    pub fn from_u8(height: usize, width: usize, data: &[u8]) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(format!("binary mask {height}x{width} needs {} values", height * width)));
        }
        Ok(Self { height, width, data: data.iter().map(|&v| v != 0).collect() })
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| v as u8).collect()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.data[r * self.width + c]
    }

    /// Tight bounding box `(top, left, height, width)` of the set pixels.
    pub fn bbox(&self) -> Option<(usize, usize, usize, usize)> {
        let (mut r0, mut c0, mut r1, mut c1) = (usize::MAX, usize::MAX, 0, 0);
        for r in 0..self.height {
            for c in 0..self.width {
                if self.get(r, c) {
                    r0 = r0.min(r);
                    c0 = c0.min(c);
                    r1 = r1.max(r);
                    c1 = c1.max(c);
                }
            }
        }
        (r0 != usize::MAX).then(|| (r0, c0, r1 - r0 + 1, c1 - c0 + 1))
    }
}

/// Training image with per-class binary ground truth and the void mask of pasted pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MixedSample {
    pub image: RgbImage,
    pub class_masks: Vec<BinaryMask>,
    pub void_mask: BinaryMask,
}

impl MixedSample {
    fn new(image: &RgbImage, class_masks: &[BinaryMask]) -> Result<Self> {
        let (h, w) = (image.height, image.width);
        let mut claimed = vec![false; h * w];
        for (k, m) in class_masks.iter().enumerate() {
            if (m.height, m.width) != (h, w) {
                return Err(Error::shape(format!("class mask {k} is {}x{}, image is {h}x{w}", m.height, m.width)));
            }
            for (c, &v) in claimed.iter_mut().zip(&m.data) {
                if v && *c {
                    return Err(Error::invalid(format!("class mask {k} overlaps another class")));
                }
                *c |= v;
            }
        }
        Ok(Self { image: image.clone(), class_masks: class_masks.to_vec(), void_mask: BinaryMask::empty(h, w) })
    }

    /// Marks pixel `(r, c)` as negative content with colour `rgb`.
    #[inline]
    fn paste_pixel(&mut self, r: usize, c: usize, rgb: [u8; 3]) {
        self.image.set_pixel(r, c, rgb);
        let px = r * self.image.width + c;
        self.void_mask.data[px] = true;
        for m in &mut self.class_masks {
            m.data[px] = false;
        }
    }

    /// (void pixels, pixels claimed by classes, pixels in neither).
    pub fn pixel_budget(&self) -> (usize, usize, usize) {
        let n = self.void_mask.data.len();
        let void = self.void_mask.count();
        let classes: usize = self.class_masks.iter().map(BinaryMask::count).sum();
        let unlabeled =
            (0..n).filter(|&px| !self.void_mask.data[px] && !self.class_masks.iter().any(|m| m.data[px])).count();
        (void, classes, unlabeled)
    }

    /// True if no class mask claims a void pixel and class masks are disjoint.
    pub fn no_claim_holds(&self) -> bool {
        (0..self.void_mask.data.len()).all(|px| {
            let claims = self.class_masks.iter().filter(|m| m.data[px]).count();
            claims <= 1 && !(self.void_mask.data[px] && claims > 0)
        })
    }
}

/// Pastes a masked negative instance `spec.count` times at seeded scales and positions.
pub fn paste_instance(
    inlier_image: &RgbImage,
    inlier_class_masks: &[BinaryMask],
    negative_image: &RgbImage,
    negative_mask: &BinaryMask,
    spec: &PasteSpec,
) -> Result<MixedSample> {
    spec.validate()?;
    if (negative_mask.height, negative_mask.width) != (negative_image.height, negative_image.width) {
        return Err(Error::shape("negative mask and negative image differ in size"));
    }
    let (top, left, nh, nw) = negative_mask.bbox().ok_or(Error::EmptyNegativeMask)?;
    let (h, w) = (inlier_image.height, inlier_image.width);
    let scaled = |frac: f64| {
        let f = (frac * (h * w) as f64 / (nh * nw) as f64).sqrt();
        (((nh as f64 * f).round() as usize).max(1), ((nw as f64 * f).round() as usize).max(1))
    };
    let (min_h, min_w) = scaled(spec.scale.0);
    if min_h > h || min_w > w {
        return Err(Error::NegativeTooLarge { neg_h: min_h, neg_w: min_w, height: h, width: w });
    }

    let mut sample = MixedSample::new(inlier_image, inlier_class_masks)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for _ in 0..spec.count {
        let (sh, sw) = scaled(spec.sample_fraction(&mut rng));
        // shrink uniformly if the sampled scale overflows along one axis
        let shrink = (h as f64 / sh as f64).min(w as f64 / sw as f64).min(1.0);
        let (sh, sw) = (((sh as f64 * shrink) as usize).clamp(1, h), ((sw as f64 * shrink) as usize).clamp(1, w));
        let dy = rng.gen_range(0..=h - sh);
        let dx = rng.gen_range(0..=w - sw);
        for r in 0..sh {
            let sr = top + ((r * 2 + 1) * nh / (sh * 2)).min(nh - 1);
            for c in 0..sw {
                let sc = left + ((c * 2 + 1) * nw / (sw * 2)).min(nw - 1);
                if negative_mask.get(sr, sc) {
                    sample.paste_pixel(dy + r, dx + c, negative_image.pixel(sr, sc));
                }
            }
        }
    }
    Ok(sample)
}

/// Pastes `spec.count` seeded square patches cut from `donor_image`.
pub fn paste_patch(
    inlier_image: &RgbImage,
    inlier_class_masks: &[BinaryMask],
    donor_image: &RgbImage,
    spec: &PasteSpec,
) -> Result<MixedSample> {
    spec.validate()?;
    let (h, w) = (inlier_image.height, inlier_image.width);
    let side_for = |frac: f64| ((frac * (h * w) as f64).sqrt().round() as usize).max(1);
    let mut sample = MixedSample::new(inlier_image, inlier_class_masks)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for _ in 0..spec.count {
        let side = side_for(spec.sample_fraction(&mut rng));
        if side > donor_image.height || side > donor_image.width {
            return Err(Error::DonorTooSmall { side, height: donor_image.height, width: donor_image.width });
        }
        if side > h || side > w {
            return Err(Error::NegativeTooLarge { neg_h: side, neg_w: side, height: h, width: w });
        }
        let sy = rng.gen_range(0..=donor_image.height - side);
        let sx = rng.gen_range(0..=donor_image.width - side);
        let dy = rng.gen_range(0..=h - side);
        let dx = rng.gen_range(0..=w - side);
        for r in 0..side {
            for c in 0..side {
                sample.paste_pixel(dy + r, dx + c, donor_image.pixel(sy + r, sx + c));
            }
        }
    }
    Ok(sample)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene(h: usize, w: usize) -> (RgbImage, Vec<BinaryMask>) {
        (RgbImage::filled(h, w, [10, 20, 30]), vec![BinaryMask::full(h, w)])
    }

    fn fixed(mode: PasteMode, count: usize, frac: f64, seed: u64) -> PasteSpec {
        PasteSpec { mode, seed, count, scale: (frac, frac) }
    }

    #[test]
    fn empty_negative_mask_is_rejected() {
        let (img, masks) = scene(8, 8);
        let neg = RgbImage::filled(4, 4, [255, 0, 0]);
        let err = paste_instance(&img, &masks, &neg, &BinaryMask::empty(4, 4), &PasteSpec::default()).unwrap_err();
        assert_eq!(err.to_string(), "empty negative mask");
    }

    #[test]
    fn ten_by_ten_instance_bookkeeping() {
        let (img, masks) = scene(64, 64);
        let neg = RgbImage::filled(10, 10, [255, 0, 0]);
        let spec = fixed(PasteMode::Instance, 1, 100.0 / 4096.0, 11);
        let s = paste_instance(&img, &masks, &neg, &BinaryMask::full(10, 10), &spec).unwrap();
        assert_eq!(s.void_mask.count(), 100);
        assert_eq!(s.class_masks[0].count(), 4096 - 100);
        assert_eq!(s.image.data.chunks(3).filter(|p| p == &[255, 0, 0]).count(), 100);
    }

    #[test]
    fn overlapping_pastes_union_into_void() {
        let (img, masks) = scene(16, 16);
        let neg = RgbImage::filled(10, 10, [1, 2, 3]);
        // 10x10 in a 16x16 image: two placements must overlap
        let spec = fixed(PasteMode::Instance, 2, 100.0 / 256.0, 3);
        let s = paste_instance(&img, &masks, &neg, &BinaryMask::full(10, 10), &spec).unwrap();
        assert!(s.void_mask.count() < 200 && s.void_mask.count() >= 100);
        assert!(s.no_claim_holds());
        let (v, c, u) = s.pixel_budget();
        assert_eq!(v + c + u, 256);
        assert_eq!(c, 256 - v);
    }

    #[test]
    fn instance_too_large_is_rejected() {
        let (img, masks) = scene(8, 8);
        let neg = RgbImage::filled(1, 40, [1, 1, 1]);
        let spec = fixed(PasteMode::Instance, 1, 0.5, 0);
        assert!(matches!(
            paste_instance(&img, &masks, &neg, &BinaryMask::full(1, 40), &spec),
            Err(Error::NegativeTooLarge { .. })
        ));
    }

    #[test]
    fn patch_sizes() {
        let (img, masks) = scene(64, 64);
        let donor = RgbImage::filled(64, 64, [9, 9, 9]);
        let one = paste_patch(&img, &masks, &donor, &fixed(PasteMode::Patch, 1, 1.0 / 4096.0, 1)).unwrap();
        assert_eq!(one.void_mask.count(), 1);
        let sixteen = paste_patch(&img, &masks, &donor, &fixed(PasteMode::Patch, 1, 256.0 / 4096.0, 1)).unwrap();
        assert_eq!(sixteen.void_mask.count(), 256);
    }

    #[test]
    fn patch_is_deterministic() {
        let (img, masks) = scene(32, 32);
        let donor = RgbImage::new(32, 32, (0..32 * 32 * 3).map(|i| (i % 251) as u8).collect()).unwrap();
        let spec = PasteSpec { mode: PasteMode::Patch, seed: 42, ..Default::default() };
        let a = paste_patch(&img, &masks, &donor, &spec).unwrap();
        let b = paste_patch(&img, &masks, &donor, &spec).unwrap();
        assert_eq!(a, b);
        let c = paste_patch(&img, &masks, &donor, &spec.derived(1)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn donor_too_small() {
        let (img, masks) = scene(64, 64);
        let donor = RgbImage::filled(4, 4, [0, 0, 0]);
        assert!(matches!(
            paste_patch(&img, &masks, &donor, &fixed(PasteMode::Patch, 1, 0.0625, 0)),
            Err(Error::DonorTooSmall { side: 16, .. })
        ));
    }

    #[test]
    fn overlapping_class_masks_are_rejected() {
        let (img, _) = scene(4, 4);
        let masks = vec![BinaryMask::full(4, 4), BinaryMask::full(4, 4)];
        let donor = RgbImage::filled(4, 4, [0, 0, 0]);
        assert!(paste_patch(&img, &masks, &donor, &fixed(PasteMode::Patch, 1, 0.1, 0)).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(PasteSpec { count: 0, ..Default::default() }.validate().is_err());
        assert!(PasteSpec { scale: (0.0, 0.1), ..Default::default() }.validate().is_err());
        assert!(PasteSpec { scale: (0.2, 0.1), ..Default::default() }.validate().is_err());
        assert!(PasteSpec { scale: (0.1, 1.0), ..Default::default() }.validate().is_err());
        assert!(PasteSpec::default().validate().is_ok());
    }
}
