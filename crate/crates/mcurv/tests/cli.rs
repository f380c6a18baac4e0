use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn mcurv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcurv"))
        .args(args)
        .env_remove("CURV_THREADS")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = mcurv(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_gradient_pgm(path: &Path, w: usize, h: usize) {
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    for i in 0..h {
        for j in 0..w {
            bytes.push(((i * 7 + j * 13 + (i * j) % 11) % 256) as u8);
        }
    }
    std::fs::write(path, bytes).unwrap();
}

fn sphere_patch(dir: &Path, name: &str, r: &str, seed: &str, embed: Option<&str>) -> PathBuf {
    let out = dir.join(format!("{name}.csv"));
    let rho = format!("{}", 0.1 * r.parse::<f64>().unwrap());
    let mut args = vec![
        "synth", "--kind", "sphere", "--d", "3", "--D", "6", "--r", r, "--rho", &rho, "--n", "1000", "--seed", seed,
    ];
    if let Some(e) = embed {
        args.extend(["--embed-seed", e]);
    }
    args.extend(["--out", s(&out)]);
    ok(&args);
    out
}

fn curvature(patch: &Path) -> PathBuf {
    let out = patch.with_extension("json");
    ok(&["curvature", "--patch", s(patch), "--out", s(&out)]);
    out
}

#[test]
fn unknown_flag_is_usage_error() {
    let out = mcurv(&["curvature", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(mcurv(&[]).status.code(), Some(2));
    assert_eq!(mcurv(&["--help"]).status.code(), Some(0));
}

#[test]
fn oversized_k_is_parameter_error() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("big.pgm");
    write_gradient_pgm(&img, 500, 500);
    let out = mcurv(&["augment", "--input", s(&img), "--k-max", "9999", "--out-dir", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("augment"), "{err}");
    assert!(!dir.path().join("big.manifest.json").exists());
}

#[test]
fn missing_input_names_stage() {
    let out = mcurv(&["estimate-dim", "--patch", "/definitely/missing.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("estimate-dim"));
}

#[test]
fn small_augment_grid() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("tile.pgm");
    write_gradient_pgm(&img, 6, 5);
    let out_dir = dir.path().join("grid");
    std::fs::create_dir(&out_dir).unwrap();
    ok(&["augment", "--input", s(&img), "--k-max", "3", "--out-dir", s(&out_dir)]);
    let manifest = json(&out_dir.join("tile.manifest.json"));
    assert_eq!(manifest["schema_version"], 1);
    assert_eq!(manifest["count"], 3);
    let entries = manifest["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 3);
    for e in entries {
        for f in e["files"].as_array().unwrap() {
            assert!(out_dir.join(f.as_str().unwrap()).is_file());
        }
    }
    let errors: Vec<f64> = entries.iter().map(|e| e["truncation_error"].as_f64().unwrap()).collect();
    assert!(errors[0] <= errors[1] && errors[1] <= errors[2] && errors[2] > 0.0, "{errors:?}");

    let raw_dir = dir.path().join("raw");
    std::fs::create_dir(&raw_dir).unwrap();
    ok(&["augment", "--input", s(&img), "--k-max", "2", "--out-dir", s(&raw_dir), "--raw", "--stem", "t"]);
    let manifest = json(&raw_dir.join("t.manifest.json"));
    assert_eq!(manifest["raw"], true);
    assert!(raw_dir.join("t_2.csv").is_file());
}

#[test]
fn sphere_pipeline_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let a = sphere_patch(dir.path(), "a", "1", "1", None);
    let b = sphere_patch(dir.path(), "b", "1", "1", Some("2"));
    let c = sphere_patch(dir.path(), "c", "2", "3", None);
    let oracle = json(&dir.path().join("a.oracle.json"));
    assert_eq!(oracle["schema_version"], 1);
    assert_eq!(oracle["oracle"]["sectional"], serde_json::json!([1.0, 1.0, 1.0]));

    let (ra, rb, rc) = (curvature(&a), curvature(&b), curvature(&c));
    assert_eq!(json(&ra)["schema_version"], 1);
    assert!(dir.path().join("a.sectional.csv").is_file());

    let runs = dir.path().join("runs");
    std::fs::create_dir(&runs).unwrap();
    let same = runs.join("same.json");
    ok(&["compare-curvature", "--a", s(&ra), "--b", s(&rb), "--out", s(&same)]);
    let doc = json(&same);
    assert_eq!(doc["schema_version"], 1);
    for key in ["riemann", "sectional"] {
        let r0 = doc[key]["similar_ratio"].as_f64().unwrap();
        assert!((0.99..=1.01).contains(&r0), "{key}: {r0}");
    }
    let diff = runs.join("diff.json");
    ok(&["compare-curvature", "--a", s(&ra), "--b", s(&rc), "--out", s(&diff)]);
    let r0 = json(&diff)["sectional"]["similar_ratio"].as_f64().unwrap();
    assert!((r0 / 4.0 - 1.0).abs() < 0.05, "{r0}");

    let table = dir.path().join("table.json");
    ok(&["report", "--dir", s(&runs), "--range", "0.8", "1.2", "--range", "3.8", "4.2", "--out", s(&table)]);
    let t = json(&table);
    assert_eq!(t["schema_version"], 1);
    assert_eq!(t["files"].as_array().unwrap().len(), 2);
    assert_eq!(t["sectional"]["ranges"][0]["fraction"], 0.5);
    assert_eq!(t["sectional"]["ranges"][1]["fraction"], 0.5);

    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    assert_eq!(mcurv(&["report", "--dir", s(&empty)]).status.code(), Some(1));
}

#[test]
fn every_command_emits_schema_version() {
    let dir = tempfile::tempdir().unwrap();
    let a = sphere_patch(dir.path(), "a", "1", "5", None);
    let b = sphere_patch(dir.path(), "b", "1", "5", Some("9"));
    let stdout = |out: Output| -> Value { serde_json::from_slice(&out.stdout).unwrap() };

    let dim = stdout(ok(&["estimate-dim", "--patch", s(&a)]));
    assert_eq!(dim["schema_version"], 1);
    assert_eq!(dim["dimension"], 3);

    let frame = dir.path().join("frame.json");
    ok(&["frame", "--patch", s(&a), "--out", s(&frame)]);
    let f = json(&frame);
    assert_eq!(f["schema_version"], 1);
    assert_eq!(f["normal_rank"], 1);
    let tangent = std::fs::read_to_string(dir.path().join("frame.tangent.csv")).unwrap();
    assert_eq!(tangent.lines().count(), 3);

    let eu = stdout(ok(&["compare-euclid", "--a", s(&a), "--b", s(&b), "--dim", "3"]));
    assert_eq!(eu["schema_version"], 1);
    assert!(eu["normalized"]["rmse"].as_f64().unwrap() < 1e-9);

    let cv = stdout(ok(&["curvature", "--patch", s(&a), "--abs"]));
    assert_eq!(cv["schema_version"], 1);
    assert_eq!(cv["absolute"], true);
}

#[test]
fn output_independent_of_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("tile.pgm");
    write_gradient_pgm(&img, 9, 7);
    let mut manifests = Vec::new();
    for threads in ["1", "4"] {
        let out_dir = dir.path().join(format!("t{threads}"));
        std::fs::create_dir(&out_dir).unwrap();
        ok(&["--threads", threads, "augment", "--input", s(&img), "--k-max", "4", "--out-dir", s(&out_dir)]);
        let files: Vec<_> = std::fs::read_dir(&out_dir).unwrap().map(|e| e.unwrap().file_name()).collect();
        let mut contents: Vec<_> = files
            .iter()
            .filter(|f| !f.to_string_lossy().ends_with(".json"))
            .map(|f| (f.clone(), std::fs::read(out_dir.join(f)).unwrap()))
            .collect();
        contents.sort();
        let mut m = json(&out_dir.join("tile.manifest.json"));
        m["command"] = Value::Null;
        manifests.push((m["entries"].clone(), contents));
    }
    assert_eq!(manifests[0], manifests[1]);
}
