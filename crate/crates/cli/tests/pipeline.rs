use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use maskood::dtf::{read_typed, write_typed, Tensor};
use maskood::pnm::{write_ppm, RgbImage};

fn maskood(args: &[&str], workers: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_maskood"));
    cmd.args(args);
    match workers {
        Some(w) => cmd.env("MASKOOD_WORKERS", w),
        None => cmd.env_remove("MASKOOD_WORKERS"),
    };
    cmd.output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = maskood(args, None);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn synth(dir: &Path, seed: &str) -> String {
    let out = dir.to_str().unwrap();
    ok(&[
        "synth",
        "--masks",
        "100",
        "--classes",
        "19",
        "--height",
        "64",
        "--width",
        "96",
        "--count",
        "4",
        "--seed",
        seed,
        "--out",
        out,
    ]);
    dir.join("manifest.json").to_str().unwrap().to_string()
}

fn score_and_eval(manifest: &str, out: &str, workers: Option<&str>) {
    for args in [
        vec!["score", "--method", "eam", "--detector", "max", "--manifest", manifest, "--out", out],
        vec!["eval-ood", "--manifest", manifest, "--out", out],
        vec!["openset", "--manifest", manifest, "--out", out],
        vec!["eval-seg", "--manifest", manifest, "--out", out],
        vec!["panoptic-infer", "--manifest", manifest, "--out", out],
        vec!["eval-panoptic", "--manifest", manifest, "--out", out],
        vec!["hist", "--manifest", manifest, "--out", out],
    ] {
        let o = maskood(&args, workers);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn synth_score_eval_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), "7");
    let out = dir.path().join("run");
    score_and_eval(&manifest, out.to_str().unwrap(), None);
    let metrics = fs::read_to_string(out.join("metrics.json")).unwrap();
    for key in ["\"ap\"", "\"fpr95\"", "\"auroc\"", "\"miou\"", "\"pq\"", "\"tau\""] {
        assert!(metrics.contains(key), "{key} missing from {metrics}");
    }
    for file in ["pr_curve.csv", "roc_curve.csv", "hist_inlier.csv", "hist_outlier.csv", "scores/scene_0000.dtf"] {
        assert!(out.join(file).is_file(), "{file}");
    }
    let pr = fs::read_to_string(out.join("pr_curve.csv")).unwrap();
    assert!(pr.starts_with("threshold,precision,recall\n"));
}

#[test]
fn pixel_method_without_logits_fails() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), "1");
    let text = fs::read_to_string(&manifest).unwrap();
    let stripped: String =
        text.lines().filter(|l| !l.contains("pixel_logits_path")).map(|l| format!("{l}\n")).collect();
    fs::write(&manifest, stripped).unwrap();
    let out = maskood(
        &["score", "--method", "msp", "--manifest", &manifest, "--out", dir.path().join("run").to_str().unwrap()],
        None,
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("pixel logits required"));
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (ma, mb) = (synth(a.path(), "3"), synth(b.path(), "3"));
    assert_eq!(
        fs::read(a.path().join("scenes/scene_0002.masks.dtf")).unwrap(),
        fs::read(b.path().join("scenes/scene_0002.masks.dtf")).unwrap()
    );
    score_and_eval(&ma, a.path().join("run").to_str().unwrap(), None);
    score_and_eval(&mb, b.path().join("run").to_str().unwrap(), None);
    for file in [
        "metrics.json",
        "pr_curve.csv",
        "roc_curve.csv",
        "scores/scene_0001.dtf",
        "labels/scene_0003.dtf",
        "panoptic/scene_0000.inst.dtf",
    ] {
        assert_eq!(
            fs::read(a.path().join("run").join(file)).unwrap(),
            fs::read(b.path().join("run").join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn worker_count_does_not_change_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), "5");
    let one = dir.path().join("w1");
    let eight = dir.path().join("w8");
    score_and_eval(&manifest, one.to_str().unwrap(), Some("1"));
    score_and_eval(&manifest, eight.to_str().unwrap(), Some("8"));
    assert_eq!(fs::read(one.join("metrics.json")).unwrap(), fs::read(eight.join("metrics.json")).unwrap());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let out =
        maskood(&["eval-ood", "--manifest", missing.to_str().unwrap(), "--out", dir.path().to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2));
    let out = maskood(&["score", "--method", "bogus"], None);
    assert_eq!(out.status.code(), Some(1));
    let out = maskood(&["synth", "--outlier-rate", "1.0", "--out", dir.path().to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(maskood(&["--help"], None).status.code(), Some(0));
}

#[test]
fn bad_workers_env_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = maskood(
        &["synth", "--count", "1", "--height", "8", "--width", "8", "--out", dir.path().to_str().unwrap()],
        Some("many"),
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn paste_writes_void_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for (i, rgb) in [[10u8, 20, 30], [200, 100, 50]].iter().enumerate() {
        write_ppm(d.join(format!("in{i}.ppm")), &RgbImage::filled(32, 32, *rgb)).unwrap();
        let mut masks = vec![0u8; 2 * 32 * 32];
        masks[..32 * 16].fill(1);
        masks[32 * 32 + 32 * 16..].fill(1);
        write_typed(d.join(format!("in{i}.dtf")), Tensor::new(vec![2, 32, 32], masks).unwrap()).unwrap();
    }
    write_ppm(d.join("neg.ppm"), &RgbImage::filled(8, 8, [255, 0, 255])).unwrap();
    write_typed(d.join("neg.dtf"), Tensor::new(vec![8, 8], vec![1u8; 64]).unwrap()).unwrap();
    fs::write(
        d.join("inputs.json"),
        r#"{"inliers": [
            {"image_id": "a", "image_path": "in0.ppm", "class_masks_path": "in0.dtf"},
            {"image_id": "b", "image_path": "in1.ppm", "class_masks_path": "in1.dtf"}],
          "negatives": [{"image_path": "neg.ppm", "mask_path": "neg.dtf"}]}"#,
    )
    .unwrap();
    let out = d.join("out");
    for mode in ["instance", "patch"] {
        ok(&[
            "paste",
            "--inputs",
            d.join("inputs.json").to_str().unwrap(),
            "--mode",
            mode,
            "--seed",
            "9",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(out.join("paste_manifest.json").is_file());
        for id in ["a", "b"] {
            let void: Tensor<u8> = read_typed(out.join(format!("paste/{id}.void.dtf"))).unwrap();
            let classes: Tensor<u8> = read_typed(out.join(format!("paste/{id}.classes.dtf"))).unwrap();
            let n_void = void.data.iter().filter(|&&v| v != 0).count();
            assert!(n_void > 0);
            let labeled = classes.data.iter().filter(|&&v| v != 0).count();
            assert_eq!(n_void + labeled, 32 * 32, "{mode} {id}");
            for px in 0..32 * 32 {
                if void.data[px] != 0 {
                    assert_eq!(classes.data[px], 0);
                    assert_eq!(classes.data[32 * 32 + px], 0);
                }
            }
        }
    }
}
