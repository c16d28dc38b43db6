//! Synthetic mask-model outputs with known ground truth.
//!
//! A scene is a Voronoi partition of the image into regions, each owned by
//! one mask. Owners claim their region with assignments near 1, adjacent
//! owners split a thin band along each shared border, and outlier blobs
//! receive near-zero mass from every mask. Geometry depends only on the seed
//! and image size, so scenes that differ only in the mask count share the
//! same regions, classes and outliers.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask_scores::fuse_closed;
use crate::tensor::{LabelMap, MaskAssignments, MaskClassScores, PanopticMap, PixelLogits};
use crate::Scalar;

/// Assignment mass every mask leaves on pixels it does not own (upper bound of a uniform draw).
pub const BACKGROUND_MASS: f64 = 0.002;
/// Residual mass the underlying region owner keeps on an outlier pixel: uniform in [1, 2] times this.
pub const OUTLIER_RESIDUAL: f64 = 0.02;
/// Floor added before taking the log of closed-set scores for the pixel logits.
pub const LOGIT_FLOOR: f64 = 1e-6;

const GEOMETRY_STREAM: u64 = 0;
const OWNERSHIP_STREAM: u64 = 1;
const CLASS_STREAM: u64 = 2;
const MASS_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub n_masks: usize,
    pub n_classes: usize,
    pub height: usize,
    pub width: usize,
    /// Fraction of the image covered by outlier blobs.
    pub outlier_fraction: f64,
    /// Larger values push owner assignments toward 1.
    pub sharpness: f64,
    /// Probability mass an owning mask puts on its regions' classes.
    pub class_confidence: f64,
    /// Number of Voronoi regions.
    pub regions: usize,
    /// Width in pixels of the split-assignment band along region borders.
    pub band_width: f64,
    /// Classes that form instances. `None` selects the upper ⌊8K/19⌋ classes.
    pub thing_classes: Option<Vec<u8>>,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            n_masks: 100,
            n_classes: 19,
            height: 128,
            width: 256,
            outlier_fraction: 0.1,
            sharpness: 8.0,
            class_confidence: 0.9,
            regions: 24,
            band_width: 2.0,
            thing_classes: None,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_masks == 0 || self.n_classes == 0 || self.height * self.width == 0 || self.regions == 0 {
            return Err(Error::invalid("scene needs masks, classes, regions and pixels"));
        }
        if self.n_classes >= crate::IGNORE as usize {
            return Err(Error::invalid("too many classes for u8 label codes"));
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return Err(Error::invalid(format!("outlier fraction must lie in [0, 1), got {}", self.outlier_fraction)));
        }
        if !(self.sharpness > 0.0) {
            return Err(Error::invalid("sharpness must be positive"));
        }
        if !(0.0..=1.0).contains(&self.class_confidence) {
            return Err(Error::invalid("class confidence must lie in [0, 1]"));
        }
        if !(self.band_width >= 0.0) {
            return Err(Error::invalid("band width must be non-negative"));
        }
        Ok(())
    }

    pub fn things(&self) -> Vec<u8> {
        self.thing_classes.clone().unwrap_or_else(|| {
            let k = self.n_classes;
            ((k - 8 * k / 19)..k).map(|c| c as u8).collect()
        })
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// Generated model outputs and ground truth for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene<T> {
    pub masks: MaskAssignments<T>,
    pub cls: MaskClassScores<T>,
    /// `ln(H_closed + LOGIT_FLOOR)`: the fused closed-set scores seen as per-pixel logits.
    pub pixel_logits: PixelLogits<T>,
    pub gt_semantic: LabelMap,
    pub ood_gt: LabelMap,
    pub gt_panoptic: PanopticMap,
    /// Pixels whose mass is split between two distinct owner masks.
    pub band: Vec<bool>,
    pub thing_classes: Vec<u8>,
}

struct Geometry {
    region: Vec<u32>,
    /// Second-nearest region for pixels inside a border band.
    band_partner: Vec<Option<u32>>,
    region_class: Vec<u8>,
    outlier_blob: Vec<u32>,
}

const NO_BLOB: u32 = u32::MAX;

fn build_geometry(cfg: &SceneConfig) -> Geometry {
    let (h, w) = (cfg.height, cfg.width);
    let mut rng = cfg.rng(GEOMETRY_STREAM);
    let sites: Vec<(f64, f64)> =
        (0..cfg.regions).map(|_| (rng.gen::<f64>() * h as f64, rng.gen::<f64>() * w as f64)).collect();
    let region_class: Vec<u8> = (0..cfg.regions).map(|_| rng.gen_range(0..cfg.n_classes) as u8).collect();

    let mut region = vec![0u32; h * w];
    let mut band_partner = vec![None; h * w];
    for r in 0..h {
        for c in 0..w {
            let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
            let (mut best, mut second) = ((f64::INFINITY, 0usize), (f64::INFINITY, 0usize));
            for (j, &(sy, sx)) in sites.iter().enumerate() {
                let d = (y - sy).powi(2) + (x - sx).powi(2);
                if d < best.0 {
                    second = best;
                    best = (d, j);
                } else if d < second.0 {
                    second = (d, j);
                }
            }
            let px = r * w + c;
            region[px] = best.1 as u32;
            if cfg.regions > 1 {
                let (a, b) = (sites[best.1], sites[second.1]);
                let sep = ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
                // distance to the bisector of the two nearest sites
                let to_border = (second.0 - best.0) / (2.0 * sep);
                if to_border < cfg.band_width / 2.0 {
                    band_partner[px] = Some(second.1 as u32);
                }
            }
        }
    }

    let mut outlier_blob = vec![NO_BLOB; h * w];
    let target = (cfg.outlier_fraction * (h * w) as f64).round() as usize;
    let short = h.min(w) as f64;
    let (rmin, rmax) = ((0.04 * short).max(1.5), (0.10 * short).max(2.0));
    let mut covered = 0;
    let mut blob = 0u32;
    let mut attempts = 0;
    while covered < target {
        let radius = rng.gen_range(rmin..=rmax);
        let cy = rng.gen::<f64>() * h as f64;
        let cx = rng.gen::<f64>() * w as f64;
        let (r0, r1) = ((cy - radius).floor().max(0.0) as usize, ((cy + radius).ceil() as usize).min(h));
        let (c0, c1) = ((cx - radius).floor().max(0.0) as usize, ((cx + radius).ceil() as usize).min(w));
        let inside =
            |r: usize, c: usize| (r as f64 + 0.5 - cy).powi(2) + (c as f64 + 0.5 - cx).powi(2) <= radius * radius;
        attempts += 1;
        let overlaps = (r0..r1).any(|r| (c0..c1).any(|c| inside(r, c) && outlier_blob[r * w + c] != NO_BLOB));
        if overlaps && attempts < 200 {
            continue;
        }
        for r in r0..r1 {
            for c in c0..c1 {
                if inside(r, c) && outlier_blob[r * w + c] == NO_BLOB && covered < target {
                    outlier_blob[r * w + c] = blob;
                    covered += 1;
                }
            }
        }
        blob += 1;
    }
    Geometry { region, band_partner, region_class, outlier_blob }
}

/// Owner mask of every region.
fn assign_owners(cfg: &SceneConfig, geo: &Geometry) -> Vec<usize> {
    let (n, r) = (cfg.n_masks, cfg.regions);
    let mut rng = cfg.rng(OWNERSHIP_STREAM);
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut rng);
    if n >= r {
        return ids[..r].to_vec();
    }
    // fewer masks than regions: neighbouring entries in class order share a mask
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by_key(|&j| (geo.region_class[j], j));
    let mut owner = vec![0; r];
    for (pos, &j) in order.iter().enumerate() {
        owner[j] = ids[pos * n / r];
    }
    owner
}

/// Flat Dirichlet draw.
fn dirichlet(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let g: Vec<f64> = (0..k).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let s: f64 = g.iter().sum();
    if s > 0.0 {
        g.iter().map(|v| v / s).collect()
    } else {
        vec![1.0 / k as f64; k]
    }
}

fn class_scores<T: Scalar>(cfg: &SceneConfig, geo: &Geometry, owner: &[usize]) -> Result<MaskClassScores<T>> {
    let (n, k) = (cfg.n_masks, cfg.n_classes);
    let mut rng = cfg.rng(CLASS_STREAM);
    // pixel area of each region, +1 so fully occluded regions still count
    let mut area = vec![1.0f64; cfg.regions];
    for (&reg, &b) in geo.region.iter().zip(&geo.outlier_blob) {
        if b == NO_BLOB {
            area[reg as usize] += 1.0;
        }
    }
    let mut class_area = vec![vec![0.0f64; k]; n];
    for (j, &i) in owner.iter().enumerate() {
        class_area[i][geo.region_class[j] as usize] += area[j];
    }
    let conf = cfg.class_confidence;
    let mut data = Vec::with_capacity(n * (k + 1));
    for ca in &class_area {
        let total: f64 = ca.iter().sum();
        let spread = dirichlet(&mut rng, k);
        let mut row: Vec<f64> = if total > 0.0 {
            let mut row: Vec<f64> = (0..k).map(|c| conf * ca[c] / total + 0.75 * (1.0 - conf) * spread[c]).collect();
            row.push(0.25 * (1.0 - conf));
            row
        } else {
            // idle mask: mostly void
            let mut row: Vec<f64> = spread.iter().map(|s| 0.2 * s).collect();
            row.push(0.8);
            row
        };
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
        data.extend(row.into_iter().map(T::lit));
    }
    MaskClassScores::new(n, k, data)
}

pub fn gen_scene<T: Scalar>(cfg: &SceneConfig) -> Result<Scene<T>> {
    cfg.validate()?;
    let (h, w, n, k) = (cfg.height, cfg.width, cfg.n_masks, cfg.n_classes);
    let p = h * w;
    let geo = build_geometry(cfg);
    let owner = assign_owners(cfg, &geo);
    let cls = class_scores::<T>(cfg, &geo, &owner)?;

    let mut rng = cfg.rng(MASS_STREAM);
    let mut data: Vec<T> = (0..n * p).map(|_| T::lit(BACKGROUND_MASS * rng.gen::<f64>())).collect();
    let mut band = vec![false; p];
    let gamma = cfg.sharpness;
    for px in 0..p {
        let reg = geo.region[px] as usize;
        let own = owner[reg];
        if geo.outlier_blob[px] != NO_BLOB {
            data[own * p + px] = T::lit(OUTLIER_RESIDUAL * (1.0 + rng.gen::<f64>()));
            continue;
        }
        let partner = geo.band_partner[px].map(|j| owner[j as usize]).filter(|&o| o != own);
        match partner {
            Some(other) => {
                band[px] = true;
                for i in 0..n {
                    data[i * p + px] = T::zero();
                }
                let share = 0.5 + 0.15 * (2.0 * rng.gen::<f64>() - 1.0);
                let scale = 1.0 - 0.1 * rng.gen::<f64>().powf(gamma);
                data[own * p + px] = T::lit(share * scale);
                data[other * p + px] = T::lit((1.0 - share) * scale);
            }
            None => {
                data[own * p + px] = T::lit(1.0 - 0.5 * rng.gen::<f64>().powf(gamma));
            }
        }
    }
    let masks = MaskAssignments::new(n, h, w, data)?;

    let closed = fuse_closed(&masks, &cls)?;
    let floor = T::lit(LOGIT_FLOOR);
    let pixel_logits = PixelLogits::new(k, h, w, closed.data.iter().map(|&v| (v + floor).ln()).collect())?;

    let things = cfg.things();
    let outlier = k as u8;
    let mut semantic = vec![0u8; p];
    let mut ood = vec![0u8; p];
    let mut instance = vec![0i32; p];
    for px in 0..p {
        let reg = geo.region[px] as usize;
        let blob = geo.outlier_blob[px];
        if blob != NO_BLOB {
            semantic[px] = outlier;
            ood[px] = 1;
            instance[px] = (cfg.regions + 1) as i32 + blob as i32;
        } else {
            let class = geo.region_class[reg];
            semantic[px] = class;
            if things.contains(&class) {
                instance[px] = reg as i32 + 1;
            }
        }
    }
    Ok(Scene {
        masks,
        cls,
        pixel_logits,
        gt_panoptic: PanopticMap::new(h, w, semantic.clone(), instance)?,
        gt_semantic: LabelMap::new(k, h, w, semantic)?,
        ood_gt: LabelMap::ood(h, w, ood)?,
        band,
        thing_classes: things,
    })
}

/// Scenes on identical geometry for each mask count.
pub fn mask_count_sweep<T: Scalar>(cfg: &SceneConfig, counts: &[usize]) -> Result<Vec<Scene<T>>> {
    counts.iter().map(|&n| gen_scene(&SceneConfig { n_masks: n, ..cfg.clone() })).collect()
}
