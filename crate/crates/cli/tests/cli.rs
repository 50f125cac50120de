use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bbs_core::features::{load_image, save_image};

fn bbs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bbs"))
        .args(args)
        .env("BBS_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

/// Crops a 24x24 template out of a fixture target at a stride-aligned spot.
fn crop_fixture(dir: &Path) -> (PathBuf, PathBuf, (i64, i64)) {
    let image_path = fixtures().join("synthetic/pair03_target.ppm");
    let image = load_image(&image_path).unwrap();
    let (x, y) = (30, 12);
    let template_path = dir.join("crop.ppm");
    save_image(&image.crop(x, y, 24, 24).unwrap(), &template_path).unwrap();
    (template_path, image_path, (x as i64, y as i64))
}

#[test]
fn match_finds_crop_location() {
    let tmp = tempfile::tempdir().unwrap();
    let (template, image, (x, y)) = crop_fixture(tmp.path());
    let out = tmp.path().join("out");
    let o = bbs(&["match", "--template", s(&template), "--image", s(&image), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let json = read_json(&out.join("matches.json"));
    let best = &json["matches"][0];
    assert_eq!(best["box"]["x"], x);
    assert_eq!(best["box"]["y"], y);
    assert_eq!(best["score"], 1.0);
    assert!(out.join("likelihood.bfm").is_file());
    assert!(fs::read(out.join("likelihood.pgm")).unwrap().starts_with(b"P5"));
}

#[test]
fn cached_and_naive_write_identical_json() {
    let tmp = tempfile::tempdir().unwrap();
    let (template, image, _) = crop_fixture(tmp.path());
    let mut outputs = Vec::new();
    for algorithm in ["naive", "cached"] {
        let out = tmp.path().join(algorithm);
        let o = bbs(&[
            "match", "--template", s(&template), "--image", s(&image), "--measure", "color-rgb", "--k", "2",
            "--stride", "1", "--algorithm", algorithm, "--kmodes", "4", "--out", s(&out),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push((fs::read(out.join("matches.json")).unwrap(), fs::read(out.join("likelihood.bfm")).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn missing_file_exits_3_and_names_path() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("no_such_template.ppm");
    let image = fixtures().join("synthetic/pair00_target.ppm");
    let out = tmp.path().join("out");
    let o = bbs(&["match", "--template", s(&missing), "--image", s(&image), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no_such_template.ppm"));
    assert!(!out.exists(), "no output on failure");
}

#[test]
fn oversized_template_exits_4_without_output() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = bbs(&[
        "match",
        "--template",
        s(&fixtures().join("occlusion/occluded_target.ppm")),
        "--image",
        s(&fixtures().join("synthetic/pair00_target.ppm")),
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(4));
    assert!(!out.exists());
}

#[test]
fn unknown_method_exits_2_and_lists_methods() {
    let tmp = tempfile::tempdir().unwrap();
    let o = bbs(&[
        "eval",
        "--annotations",
        s(&fixtures().join("synthetic/annotations.jsonl")),
        "--methods",
        "bbs,fancy",
        "--out",
        s(tmp.path()),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    for name in ["bbs", "ssd", "sad", "ncc", "hm", "bds"] {
        assert!(err.contains(name), "{err}");
    }
}

#[test]
fn bad_flags_exit_2() {
    assert_eq!(bbs(&["match", "--k"]).status.code(), Some(2));
    assert_eq!(bbs(&["simulate", "--experiment", "fig9", "--out", "unused"]).status.code(), Some(2));
    assert_eq!(bbs(&["bench", "--sizes", "8x8/16x16", "--out", "unused"]).status.code(), Some(2));
}

#[test]
fn simulate_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    for i in 0..2 {
        let out = tmp.path().join(format!("run{i}"));
        let o = bbs(&[
            "simulate", "--experiment", "theorem1", "--seed", "9", "--trials", "3", "--n", "500", "--out", s(&out),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        runs.push(fs::read(out.join("theorem1.csv")).unwrap());
    }
    assert_eq!(runs[0], runs[1]);
    let text = String::from_utf8(runs.remove(0)).unwrap();
    assert!(text.lines().nth(1).unwrap().starts_with("theorem1,9,ChaCha8,500,3,"));
}

#[test]
fn eval_on_synthetic_fixtures_gives_bbs_map_one() {
    let tmp = tempfile::tempdir().unwrap();
    let o = bbs(&[
        "eval",
        "--annotations",
        s(&fixtures().join("synthetic/annotations.jsonl")),
        "--methods",
        "bbs",
        "--out",
        s(tmp.path()),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = read_json(&tmp.path().join("summary.json"));
    assert_eq!(summary["methods"]["bbs"]["map_top1"], 1.0);
    let report = fs::read_to_string(tmp.path().join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 1 + 8);
}

#[test]
fn bench_writes_speedup_table() {
    let tmp = tempfile::tempdir().unwrap();
    let o = bbs(&["bench", "--sizes", "32x32/8x8", "--repeats", "1", "--out", s(tmp.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(tmp.path().join("bench.csv")).unwrap();
    let mut lines = table.lines();
    assert!(lines.next().unwrap().contains("speedup"));
    assert!(lines.next().unwrap().ends_with(",true"));
}
