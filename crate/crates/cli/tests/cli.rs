//! End-to-end behaviour of the `dermseg` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dermseg::data::{load_gray, save_mask};
use dermseg::Tensor;

fn dermseg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dermseg"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn dermseg")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

fn pngs(dir: &Path) -> Vec<PathBuf> {
    files(dir).into_iter().filter(|p| p.extension().is_some_and(|e| e == "png")).collect()
}

#[test]
fn synth_is_deterministic_and_validates_count() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    for out in ["a", "b"] {
        let o = dermseg(d, &["synth", "--count", "4", "--size", "32", "--seed", "7", "--out", out]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for sub in ["images", "masks"] {
        let a = files(&d.join("a").join(sub));
        assert_eq!(a.len(), 4);
        for p in a {
            let q = d.join("b").join(sub).join(p.file_name().unwrap());
            assert_eq!(fs::read(&p).unwrap(), fs::read(q).unwrap());
        }
    }
    assert!(d.join("a/manifest.tsv").exists());
    assert!(d.join("a/invocation.toml").exists());
    assert_eq!(dermseg(d, &["synth", "--count", "0", "--out", "c"]).status.code(), Some(2));
}

#[test]
fn usage_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(dermseg(d, &["--threads", "4", "gradcheck"]).status.code(), Some(2));
    assert_eq!(dermseg(d, &["train", "--preset", "nope"]).status.code(), Some(2));
    assert_eq!(dermseg(d, &["gradcheck", "--corrupt", "not_an_op"]).status.code(), Some(2));
    assert_eq!(dermseg(d, &["frobnicate"]).status.code(), Some(2));
}

#[test]
fn gradcheck_passes_and_a_corrupted_op_fails_by_name() {
    let tmp = tempfile::tempdir().unwrap();
    let ok = dermseg(tmp.path(), &["gradcheck", "--only", "sigmoid"]);
    assert!(ok.status.success());
    let bad = dermseg(tmp.path(), &["gradcheck", "--only", "conv2d", "--corrupt", "conv2d"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(stdout(&bad).contains("FAILED: conv2d"), "{}", stdout(&bad));
}

/// Short mgan run at 32×32, then infer twice.
#[test]
fn train_then_infer_writes_binary_masks_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let sets = [
        "--set",
        "generator.input_size=[32, 32]",
        "--set",
        "data.synth.size=32",
        "--set",
        "data.synth.count=12",
        "--set",
        "train.batch_size=4",
    ];
    let mut args = vec!["train", "--preset", "mgan-toy", "--max-steps", "2", "--out", "run"];
    args.extend(sets);
    let o = dermseg(d, &args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["best.lgc", "last.lgc", "history.tsv", "config.toml", "invocation.toml"] {
        assert!(d.join("run").join(f).exists(), "{f}");
    }
    assert!(dermseg(d, &["synth", "--count", "3", "--size", "48", "--out", "imgs"]).status.success());
    for out in ["p1", "p2"] {
        let o = dermseg(d, &["infer", "--checkpoint", "run/best.lgc", "--input", "imgs/images", "--out", out, "--prob"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let masks = pngs(&d.join("p1"));
    assert_eq!(masks.len(), 3);
    for m in &masks {
        let img = load_gray(m).unwrap();
        assert_eq!(img.shape(), &[48, 48]);
        assert!(img.data().iter().all(|&v| v == 0.0 || v == 1.0));
        let twin = d.join("p2").join(m.file_name().unwrap());
        assert_eq!(fs::read(m).unwrap(), fs::read(twin).unwrap());
    }
    assert_eq!(pngs(&d.join("p1/prob")).len(), 3);
}

fn write_mask(path: &Path, bits: &[u8], w: usize) {
    let t = Tensor::from_fn(vec![bits.len() / w, w], |i| bits[i] as f64);
    save_mask(path, &t).unwrap();
}

#[test]
fn eval_scores_pairs_and_reports_missing_partners() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::create_dir_all(d.join("pred")).unwrap();
    fs::create_dir_all(d.join("truth")).unwrap();
    let a = [1, 1, 0, 0, 1, 0, 0, 0, 0];
    let b = [0, 0, 0, 0, 1, 1, 0, 1, 1];
    write_mask(&d.join("pred/a.png"), &a, 3);
    write_mask(&d.join("truth/a_segmentation.png"), &a, 3);
    write_mask(&d.join("pred/b.png"), &b, 3);
    write_mask(&d.join("truth/b_segmentation.png"), &b, 3);
    let o = dermseg(d, &["eval", "--pred", "pred", "--truth", "truth"]);
    assert!(o.status.success());
    let mean = stdout(&o).lines().find(|l| l.starts_with("MEAN")).unwrap().to_string();
    let vals: Vec<f64> = mean.split('\t').skip(1).take(5).map(|v| v.parse().unwrap()).collect();
    assert_eq!(vals, vec![1.0; 5]);

    write_mask(&d.join("pred/orphan.png"), &a, 3);
    let o = dermseg(d, &["eval", "--pred", "pred", "--truth", "truth"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("orphan"));
    assert!(!stdout(&o).contains("orphan"));
    let strict = dermseg(d, &["eval", "--pred", "pred", "--truth", "truth", "--strict"]);
    assert_eq!(strict.status.code(), Some(1));
}

#[test]
fn bench_baseline_init_then_check() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let args = ["bench", "--preset", "mgan-toy", "--set", "generator.input_size=[32, 32]", "--runs", "30"];
    let missing = dermseg(d, &args);
    assert_eq!(missing.status.code(), Some(1));
    let mut init = args.to_vec();
    init.push("--init");
    assert!(dermseg(d, &init).status.success());
    assert_eq!(files(&d.join("bench")).len(), 1);
    let check = dermseg(d, &args);
    assert!(stdout(&check).contains("mgan-toy\t32\t1\t"), "{}", stdout(&check));
}

#[test]
fn dump_features_writes_eleven_egan_taps_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert!(dermseg(d, &["synth", "--count", "1", "--size", "64", "--out", "s"]).status.success());
    let image = files(&d.join("s/images"))[0].to_str().unwrap().to_string();
    for out in ["f1", "f2"] {
        let o = dermseg(d, &["dump-features", "--preset", "egan-toy", "--image", &image, "--out", out]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let names: Vec<String> = pngs(&d.join("f1"))
        .iter()
        .map(|p| p.file_stem().unwrap().to_string_lossy().into_owned())
        .collect();
    let mut want: Vec<String> = (1..=7).map(|i| format!("Block{i}")).chain((1..=4).map(|i| format!("D{i}"))).collect();
    want.sort();
    assert_eq!(names, want);
    for p in pngs(&d.join("f1")) {
        assert_eq!(fs::read(&p).unwrap(), fs::read(d.join("f2").join(p.file_name().unwrap())).unwrap());
    }
}
