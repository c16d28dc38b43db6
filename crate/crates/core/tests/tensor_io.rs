use std::fs;
use std::path::Path;

use maskood::dtf::{self, read_tensor, write_tensor, AnyTensor, Tensor};
use maskood::manifest::{load_validated, validate_record, Manifest, Record};
use maskood::synthgen::{gen_scene, SceneConfig};
use maskood::{
    anomaly_instances, closed_pred, fuse_closed, fuse_open, panoptic_assemble, pixel_score, Error, MaskMethod,
    PanopticConfig, PixelMethod,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn any_tensor() -> impl Strategy<Value = AnyTensor> {
    let shape = prop::collection::vec(0usize..5, 0..4);
    shape.prop_flat_map(|shape| {
        let n: usize = shape.iter().product();
        let s = shape.clone();
        prop_oneof![
            prop::collection::vec(any::<u32>(), n).prop_map({
                let s = s.clone();
                move |bits| {
                    AnyTensor::F32(Tensor::new(s.clone(), bits.into_iter().map(f32::from_bits).collect()).unwrap())
                }
            }),
            prop::collection::vec(any::<u64>(), n).prop_map({
                let s = s.clone();
                move |bits| {
                    AnyTensor::F64(Tensor::new(s.clone(), bits.into_iter().map(f64::from_bits).collect()).unwrap())
                }
            }),
            prop::collection::vec(any::<u8>(), n).prop_map({
                let s = s.clone();
                move |v| AnyTensor::U8(Tensor::new(s.clone(), v).unwrap())
            }),
            prop::collection::vec(any::<i32>(), n)
                .prop_map(move |v| AnyTensor::I32(Tensor::new(s.clone(), v).unwrap())),
        ]
    })
}

proptest! {
    // NaN payloads are compared through their bytes, not with ==.
    #[test]
    fn round_trip_is_bit_identical(t in any_tensor()) {
        let bytes = dtf::to_bytes(&t).unwrap();
        let back = dtf::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.dtype(), t.dtype());
        prop_assert_eq!(back.shape(), t.shape());
        prop_assert_eq!(dtf::to_bytes(&back).unwrap(), bytes);
    }
}

#[test]
fn large_random_tensor_survives_a_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let t = AnyTensor::F32(
        Tensor::new(vec![100, 64, 64], (0..100 * 64 * 64).map(|_| rng.gen::<f32>() * 2.0 - 1.0).collect()).unwrap(),
    );
    let (a, b) = (dir.path().join("a.dtf"), dir.path().join("b.dtf"));
    write_tensor(&a, &t).unwrap();
    let back = read_tensor(&a).unwrap();
    write_tensor(&b, &back).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(back, t);
    assert_eq!(fs::metadata(&a).unwrap().len(), 4 + 1 + 1 + 3 * 8 + 4 * 100 * 64 * 64);
}

#[test]
fn read_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.dtf");
    fs::write(&p, b"DTF2\x00\x01\x01\x00\x00\x00\x00\x00\x00\x00\x00\x00\x80\x3f").unwrap();
    assert!(read_tensor(&p).unwrap_err().to_string().contains("bad magic"));

    let mut bytes = b"DTF1\x00\x02".to_vec();
    bytes.extend_from_slice(&2u64.to_le_bytes());
    bytes.extend_from_slice(&2u64.to_le_bytes());
    bytes.extend_from_slice(&[0u8; 12]);
    fs::write(&p, &bytes).unwrap();
    assert!(read_tensor(&p).unwrap_err().to_string().contains("payload length mismatch"));

    let err = read_tensor(dir.path().join("missing.dtf")).unwrap_err();
    assert!(err.is_io());
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        Self { dir: tempfile::tempdir().unwrap() }
    }

    fn path(&self) -> &Path {
        self.dir.path()
    }

    fn write_f32(&self, name: &str, shape: Vec<usize>, data: Vec<f32>) -> String {
        write_tensor(self.path().join(name), &AnyTensor::F32(Tensor::new(shape, data).unwrap())).unwrap();
        name.to_string()
    }

    fn write_u8(&self, name: &str, shape: Vec<usize>, data: Vec<u8>) -> String {
        write_tensor(self.path().join(name), &AnyTensor::U8(Tensor::new(shape, data).unwrap())).unwrap();
        name.to_string()
    }

    fn manifest(&self, record: &Record) -> Manifest {
        let m = Manifest { records: vec![record.clone()], base_dir: self.path().to_path_buf() };
        m.save(self.path().join("manifest.json")).unwrap();
        Manifest::load(self.path().join("manifest.json")).unwrap()
    }

    /// Consistent N=3, K=2, 4x4 record.
    fn record(&self) -> Record {
        let masks: Vec<f32> = (0..3 * 16).map(|i| (i % 7) as f32 / 6.0).collect();
        let cls = vec![0.5, 0.3, 0.2, 0.1, 0.8, 0.1, 0.0, 0.0, 1.0];
        Record {
            image_id: "r0".into(),
            masks_path: self.write_f32("m.dtf", vec![3, 4, 4], masks),
            cls_path: self.write_f32("c.dtf", vec![3, 3], cls),
            pixel_logits_path: Some(self.write_f32("l.dtf", vec![2, 4, 4], vec![0.25; 32])),
            gt_semantic_path: Some(self.write_u8("s.dtf", vec![4, 4], [0, 1, 2, 255].repeat(4))),
            gt_panoptic_path: None,
            ood_gt_path: Some(self.write_u8("o.dtf", vec![4, 4], [0, 1, 0, 255].repeat(4))),
        }
    }
}

#[test]
fn consistent_record_has_empty_report() {
    let f = Fixture::new();
    let rec = f.record();
    let manifest = f.manifest(&rec);
    let report = validate_record(&manifest, &rec);
    assert!(report.is_empty(), "{report}");
    let loaded = load_validated::<f64>(&manifest, &rec).unwrap();
    assert_eq!((loaded.masks.n_masks, loaded.cls.n_classes), (3, 2));
}

#[test]
fn row_summing_to_point_eight_is_reported() {
    let f = Fixture::new();
    let mut rec = f.record();
    rec.cls_path = f.write_f32("c2.dtf", vec![3, 3], vec![0.5, 0.3, 0.0, 0.1, 0.8, 0.1, 0.0, 0.0, 1.0]);
    let manifest = f.manifest(&rec);
    let report = validate_record(&manifest, &rec);
    assert!(report.contains("row not normalized"), "{report}");
    assert!(matches!(load_validated::<f32>(&manifest, &rec), Err(Error::Validation { .. })));
}

#[test]
fn n_mismatch_is_reported() {
    let f = Fixture::new();
    let mut rec = f.record();
    rec.cls_path = f.write_f32("c4.dtf", vec![4, 3], [0.5f32, 0.3, 0.2].repeat(4));
    let manifest = f.manifest(&rec);
    assert!(validate_record(&manifest, &rec).contains("N mismatch"));
}

#[test]
fn every_violation_is_listed() {
    let f = Fixture::new();
    let mut rec = f.record();
    let mut masks: Vec<f32> = vec![0.5; 3 * 16];
    masks[5] = 1.5;
    rec.masks_path = f.write_f32("bad_m.dtf", vec![3, 4, 4], masks);
    rec.pixel_logits_path = Some(f.write_f32("bad_l.dtf", vec![2, 4, 4], [vec![f32::NAN], vec![0.0; 31]].concat()));
    rec.gt_semantic_path = Some(f.write_u8("bad_s.dtf", vec![4, 5], vec![0; 20]));
    rec.ood_gt_path = Some(f.write_u8("bad_o.dtf", vec![4, 4], [vec![7], vec![0; 15]].concat()));
    let manifest = f.manifest(&rec);
    let report = validate_record(&manifest, &rec);
    for needle in [
        "mask value out of [0,1]",
        "non-finite pixel logit",
        "shape mismatch in gt_semantic",
        "invalid code 7 in ood_gt",
    ] {
        assert!(report.contains(needle), "{needle} not in {report}");
    }
}

#[test]
fn missing_and_unreadable_files() {
    let f = Fixture::new();
    let mut rec = f.record();
    rec.pixel_logits_path = Some("nowhere.dtf".into());
    let manifest = f.manifest(&rec);
    assert!(validate_record(&manifest, &rec).contains("pixel_logits unreadable"));
    let err = load_validated::<f32>(&manifest, &rec).unwrap_err();
    assert!(err.is_io(), "{err}");
    assert!(err.to_string().contains("r0"));

    fs::write(f.path().join("m.dtf"), b"junk").unwrap();
    let rec = Record { pixel_logits_path: None, ..rec };
    assert!(validate_record(&manifest, &rec).contains("masks unreadable"));
}

#[test]
fn validated_records_never_fail_downstream() {
    let f = Fixture::new();
    for seed in 0..6 {
        let cfg = SceneConfig {
            n_masks: 1 + seed as usize * 7,
            n_classes: 1 + seed as usize * 3,
            height: 24,
            width: 40,
            regions: 6,
            seed,
            ..SceneConfig::default()
        };
        let s = gen_scene::<f32>(&cfg).unwrap();
        let id = format!("s{seed}");
        let rec = Record {
            image_id: id.clone(),
            masks_path: format!("{id}.m.dtf"),
            cls_path: format!("{id}.c.dtf"),
            pixel_logits_path: Some(format!("{id}.l.dtf")),
            gt_semantic_path: Some(format!("{id}.s.dtf")),
            gt_panoptic_path: Some(format!("{id}.p")),
            ood_gt_path: Some(format!("{id}.o.dtf")),
        };
        let t = |name: &str| f.path().join(name);
        write_tensor(t(&rec.masks_path), &maskood::tensor::float_tensor(s.masks.to_tensor())).unwrap();
        write_tensor(t(&rec.cls_path), &maskood::tensor::float_tensor(s.cls.to_tensor())).unwrap();
        write_tensor(
            t(rec.pixel_logits_path.as_ref().unwrap()),
            &maskood::tensor::float_tensor(s.pixel_logits.to_tensor()),
        )
        .unwrap();
        dtf::write_typed(t(rec.gt_semantic_path.as_ref().unwrap()), s.gt_semantic.to_tensor()).unwrap();
        dtf::write_typed(t(rec.ood_gt_path.as_ref().unwrap()), s.ood_gt.to_tensor()).unwrap();
        maskood::manifest::write_panoptic(&t(rec.gt_panoptic_path.as_ref().unwrap()), &s.gt_panoptic).unwrap();
        let manifest = f.manifest(&rec);
        assert!(validate_record(&manifest, &rec).is_empty());

        let r = load_validated::<f32>(&manifest, &rec).unwrap();
        let closed = fuse_closed(&r.masks, &r.cls).unwrap();
        closed_pred(&closed);
        for m in MaskMethod::ALL {
            let s = m.score(&r.masks, &r.cls, &Default::default()).unwrap();
            fuse_open(&closed, &s, -0.5).unwrap();
            anomaly_instances(&s, &r.masks, -0.5, 10).unwrap();
            panoptic_assemble(&r.masks, &r.cls, &s, -0.5, &PanopticConfig::default()).unwrap();
        }
        if r.cls.n_classes >= 2 {
            for p in PixelMethod::ALL {
                pixel_score(r.pixel_logits.as_ref().unwrap(), p).unwrap();
            }
        }
    }
}
