//! Dataset manifest: a JSON array of per-image records whose tensor paths are
//! resolved relative to the manifest file.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dtf::{self, Tensor};
use crate::error::{Error, Result};
use crate::tensor::{ClassMap, LabelMap, MaskAssignments, MaskClassScores, PanopticMap, PixelLogits};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub image_id: String,
    pub masks_path: String,
    pub cls_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pixel_logits_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_semantic_path: Option<String>,
    /// Stem of the two panoptic tensors `<stem>.class.dtf` (u8) and `<stem>.inst.dtf` (i32).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_panoptic_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ood_gt_path: Option<String>,
}

impl Record {
    /// Every file the record points at, resolved against the manifest.
    pub fn referenced_files(&self, manifest: &Manifest) -> Vec<PathBuf> {
        let mut out = vec![manifest.resolve(&self.masks_path), manifest.resolve(&self.cls_path)];
        for p in [&self.pixel_logits_path, &self.gt_semantic_path, &self.ood_gt_path].into_iter().flatten() {
            out.push(manifest.resolve(p));
        }
        if let Some(stem) = &self.gt_panoptic_path {
            let (c, i) = panoptic_paths(&manifest.resolve(stem));
            out.push(c);
            out.push(i);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub records: Vec<Record>,
    /// Directory that record paths are relative to.
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let records = serde_json::from_str(&text).map_err(|e| Error::Json { path: path.into(), source: e })?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { records, base_dir })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path, &self.records)
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.base_dir.join(rel)
    }
}

pub(crate) fn write_json<S: Serialize + ?Sized>(path: impl AsRef<Path>, value: &S) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Json { path: path.into(), source: e })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Paths of the class and instance tensors of a panoptic map stored under `stem`.
pub fn panoptic_paths(stem: &Path) -> (PathBuf, PathBuf) {
    let s = stem.as_os_str().to_string_lossy();
    (PathBuf::from(format!("{s}.class.dtf")), PathBuf::from(format!("{s}.inst.dtf")))
}

pub fn write_panoptic(stem: &Path, map: &PanopticMap) -> Result<()> {
    let (cp, ip) = panoptic_paths(stem);
    let (c, i) = map.to_tensors();
    dtf::write_typed(cp, c)?;
    dtf::write_typed(ip, i)
}

pub fn read_panoptic(stem: &Path) -> Result<PanopticMap> {
    let (cp, ip) = panoptic_paths(stem);
    PanopticMap::from_tensors(dtf::read_typed(cp)?, dtf::read_typed(ip)?)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Issue {
    Unreadable { field: &'static str, message: String },
    NMismatch { masks: usize, cls: usize },
    ShapeMismatch { field: &'static str, expected: Vec<usize>, found: Vec<usize> },
    MaskOutOfRange { index: usize },
    RowNotNormalized { row: usize },
    NonFiniteLogit { index: usize },
    InvalidLabel { field: &'static str, index: usize, code: u8 },
    InconsistentInstance { id: i32 },
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Issue::Unreadable { field, message } => write!(f, "{field} unreadable: {message}"),
            Issue::NMismatch { masks, cls } => write!(f, "N mismatch: masks {masks}, cls {cls}"),
            Issue::ShapeMismatch { field, expected, found } => {
                write!(f, "shape mismatch in {field}: expected {expected:?}, found {found:?}")
            }
            Issue::MaskOutOfRange { index } => write!(f, "mask value out of [0,1] at element {index}"),
            Issue::RowNotNormalized { row } => write!(f, "class score row not normalized: row {row}"),
            Issue::NonFiniteLogit { index } => write!(f, "non-finite pixel logit at element {index}"),
            Issue::InvalidLabel { field, index, code } => write!(f, "invalid code {code} in {field} at pixel {index}"),
            Issue::InconsistentInstance { id } => write!(f, "instance {id} spans several classes"),
        }
    }
}

/// Every invariant violated by a record. Empty means the record is usable.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn messages(&self) -> Vec<String> {
        self.issues.iter().map(ToString::to_string).collect()
    }

    pub fn contains(&self, needle: &str) -> bool {
        self.issues.iter().any(|i| i.to_string().contains(needle))
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.messages().join("; "))
    }
}

/// Tensors of one record, loaded into memory.
#[derive(Debug, Clone)]
pub struct LoadedRecord<T> {
    pub image_id: String,
    pub masks: MaskAssignments<T>,
    pub cls: MaskClassScores<T>,
    pub pixel_logits: Option<PixelLogits<T>>,
    pub gt_semantic: Option<LabelMap>,
    pub gt_panoptic: Option<PanopticMap>,
    pub ood_gt: Option<LabelMap>,
}

impl<T: Scalar> LoadedRecord<T> {
    pub fn validate(&self) -> ValidationReport {
        let mut issues = Vec::new();
        let (n, h, w) = (self.masks.n_masks, self.masks.height, self.masks.width);
        let k = self.cls.n_classes;
        if self.cls.n_masks != n {
            issues.push(Issue::NMismatch { masks: n, cls: self.cls.n_masks });
        }
        if let Some(index) = self.masks.first_out_of_range() {
            issues.push(Issue::MaskOutOfRange { index });
        }
        for row in self.cls.unnormalized_rows() {
            issues.push(Issue::RowNotNormalized { row });
        }
        if let Some(l) = &self.pixel_logits {
            if (l.n_classes, l.height, l.width) != (k, h, w) {
                issues.push(Issue::ShapeMismatch {
                    field: "pixel_logits",
                    expected: vec![k, h, w],
                    found: vec![l.n_classes, l.height, l.width],
                });
            }
            if let Some(index) = l.first_non_finite() {
                issues.push(Issue::NonFiniteLogit { index });
            }
        }
        let mut check_labels = |field: &'static str, l: &LabelMap| {
            if (l.height, l.width) != (h, w) {
                issues.push(Issue::ShapeMismatch { field, expected: vec![h, w], found: vec![l.height, l.width] });
            }
            if let Some(index) = l.first_invalid() {
                issues.push(Issue::InvalidLabel { field, index, code: l.data[index] });
            }
        };
        if let Some(l) = &self.gt_semantic {
            check_labels("gt_semantic", l);
        }
        if let Some(l) = &self.ood_gt {
            check_labels("ood_gt", l);
        }
        if let Some(p) = &self.gt_panoptic {
            if (p.height, p.width) != (h, w) {
                issues.push(Issue::ShapeMismatch {
                    field: "gt_panoptic",
                    expected: vec![h, w],
                    found: vec![p.height, p.width],
                });
            }
            if let Some(index) = p.class.iter().position(|&c| c as usize > k && c != crate::IGNORE) {
                issues.push(Issue::InvalidLabel { field: "gt_panoptic", index, code: p.class[index] });
            }
            if let Some(id) = p.inconsistent_instance() {
                issues.push(Issue::InconsistentInstance { id });
            }
        }
        ValidationReport { issues }
    }
}

fn load_float<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    dtf::read_tensor(path)?.into_float()
}

/// Loads every tensor of a record, collecting load failures as issues.
fn load_parts<T: Scalar>(manifest: &Manifest, record: &Record) -> (Option<LoadedRecord<T>>, Vec<Issue>) {
    let mut issues = Vec::new();
    let mut unreadable =
        |field: &'static str, e: Error| issues.push(Issue::Unreadable { field, message: e.to_string() });

    let masks = load_float(&manifest.resolve(&record.masks_path))
        .and_then(MaskAssignments::from_tensor)
        .map_err(|e| unreadable("masks", e))
        .ok();
    let cls = load_float(&manifest.resolve(&record.cls_path))
        .and_then(MaskClassScores::from_tensor)
        .map_err(|e| unreadable("cls", e))
        .ok();
    let k = cls.as_ref().map(|c| c.n_classes).unwrap_or(0);

    let pixel_logits = record.pixel_logits_path.as_ref().and_then(|p| {
        load_float(&manifest.resolve(p)).and_then(ClassMap::from_tensor).map_err(|e| unreadable("pixel_logits", e)).ok()
    });
    let gt_semantic = record.gt_semantic_path.as_ref().and_then(|p| {
        dtf::read_typed::<u8>(manifest.resolve(p))
            .and_then(|t| LabelMap::from_tensor(k, t))
            .map_err(|e| unreadable("gt_semantic", e))
            .ok()
    });
    let gt_panoptic = record
        .gt_panoptic_path
        .as_ref()
        .and_then(|p| read_panoptic(&manifest.resolve(p)).map_err(|e| unreadable("gt_panoptic", e)).ok());
    let ood_gt = record.ood_gt_path.as_ref().and_then(|p| {
        dtf::read_typed::<u8>(manifest.resolve(p))
            .and_then(|t| LabelMap::from_tensor(1, t))
            .map_err(|e| unreadable("ood_gt", e))
            .ok()
    });

    let loaded = match (masks, cls) {
        (Some(masks), Some(cls)) if issues.is_empty() => Some(LoadedRecord {
            image_id: record.image_id.clone(),
            masks,
            cls,
            pixel_logits,
            gt_semantic,
            gt_panoptic,
            ood_gt,
        }),
        _ => None,
    };
    (loaded, issues)
}

/// Checks a record against every tensor invariant without failing.
pub fn validate_record(manifest: &Manifest, record: &Record) -> ValidationReport {
    let (loaded, mut issues) = load_parts::<f64>(manifest, record);
    if let Some(l) = loaded {
        issues.extend(l.validate().issues);
    }
    ValidationReport { issues }
}

/// Loads a record and rejects it if any invariant is violated.
pub fn load_validated<T: Scalar>(manifest: &Manifest, record: &Record) -> Result<LoadedRecord<T>> {
    for path in record.referenced_files(manifest) {
        if !path.is_file() {
            let e = std::io::Error::new(std::io::ErrorKind::NotFound, "referenced file missing");
            return Err(Error::io(path, e).in_record(&record.image_id));
        }
    }
    let (loaded, issues) = load_parts::<T>(manifest, record);
    let invalid = |issues: Vec<Issue>| Error::Validation {
        record: record.image_id.clone(),
        message: ValidationReport { issues }.to_string(),
    };
    let loaded = loaded.ok_or_else(|| invalid(issues))?;
    let report = loaded.validate();
    if !report.is_empty() {
        return Err(invalid(report.issues));
    }
    Ok(loaded)
}
