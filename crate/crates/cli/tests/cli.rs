use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use posekit::metrics::{annotations_to_jsonl, read_annotations};
use posekit::pfm;
use posekit::{flip_annotation, Part};
use posekit_cli::commands::compare::{reference, table};
use posekit_cli::commands::eval::EvalReport;
use serde_json::Value;

fn posekit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_posekit"))
        .args(args)
        .env_remove("POSEKIT_SEED")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = posekit(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> (i32, String) {
    let out = posekit(args);
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, frames: usize, seed: u64) -> PathBuf {
    let out = dir.join(format!("synth-{seed}"));
    ok(&["synth", "--out", s(&out), "--frames", &frames.to_string(), "--seed", &seed.to_string()]);
    out
}

fn read_json(p: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()
}

#[test]
fn render_writes_parts_composite_and_keypoints() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    ok(&["render", "--template", "t_new", "--out", s(&out), "--canvas", "48", "40"]);
    let pfms: Vec<_> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "pfm"))
        .collect();
    assert_eq!(pfms.len(), 19);
    assert!(out.join("keypoints.json").is_file());

    let composite = pfm::read(out.join("composite.pfm")).unwrap();
    assert_eq!((composite.width, composite.height), (48, 40));
    let parts: Vec<_> = Part::ALL.iter().map(|p| pfm::read(out.join(format!("{}.pfm", p.name()))).unwrap()).collect();
    for i in 0..composite.data.len() {
        let max = parts.iter().map(|p| p.data[i]).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(composite.data[i], max);
    }

    let again = dir.path().join("r2");
    ok(&["render", "--template", "t_new", "--out", s(&again), "--canvas", "48", "40"]);
    for p in &pfms {
        let name = p.file_name().unwrap();
        assert_eq!(std::fs::read(p).unwrap(), std::fs::read(again.join(name)).unwrap());
    }
    assert_eq!(std::fs::read(out.join("manifest.json")).unwrap(), std::fs::read(again.join("manifest.json")).unwrap());
}

#[test]
fn render_reports_schema_errors_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\n  \"name\": \"x\",\n  \"canvas\": 5\n}\n").unwrap();
    let (c, err) = code(&["render", "--template", s(&bad), "--out", s(&dir.path().join("o"))]);
    assert_eq!(c, 2);
    assert!(err.contains("line 3"), "{err}");
    let (c, _) = code(&["render", "--template", "no_such_template", "--out", s(&dir.path().join("o"))]);
    assert_eq!(c, 2);
}

#[test]
fn fit_writes_predictions_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let syn = synth(dir.path(), 10, 11);
    let out = dir.path().join("fit");
    let summary = ok(&[
        "fit",
        s(&syn.join("targets")),
        "--out",
        s(&out),
        "--mode",
        "coarse2fine20",
        "--param",
        "constrained",
        "--use-mse",
        "--max-iters",
        "150",
    ]);
    assert!(summary.contains("10 frames"), "{summary}");
    let preds = read_annotations(out.join("predictions.jsonl")).unwrap();
    assert_eq!(preds.len(), 10);
    let ids: Vec<_> = preds.iter().map(|p| p.frame_id.clone()).collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
    assert_eq!(std::fs::read_dir(out.join("frames")).unwrap().count(), 10);
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["config"]["parameter_count"], 62);
    assert_eq!(manifest["command"], "fit");
    let artifacts = manifest["artifacts"].as_object().unwrap();
    assert!(artifacts.contains_key("predictions.jsonl"));
    assert!(artifacts.keys().any(|k| k.starts_with("input:") && k.ends_with("core.pfm")));

    let log = std::fs::read_to_string(out.join("fit_log.jsonl")).unwrap();
    let first: Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(first["iteration"], 0);
    assert!(first["total"].is_number());
}

#[test]
fn fit_baseline_full_affine_reports_its_parameter_count() {
    let dir = tempfile::tempdir().unwrap();
    let syn = synth(dir.path(), 2, 4);
    let out = dir.path().join("fit");
    ok(&[
        "fit",
        s(&syn.join("targets")),
        "--out",
        s(&out),
        "--mode",
        "baseline18",
        "--param",
        "full_affine",
        "--max-iters",
        "20",
        "--flip-augment",
    ]);
    assert_eq!(read_json(&out.join("manifest.json"))["config"]["parameter_count"], 108);
    let flip = read_json(&out.join("flip_check.json"));
    assert!(flip["max_keypoint_discrepancy"].as_f64().unwrap() >= 0.0);
}

#[test]
fn fit_config_file_and_seed_env() {
    let dir = tempfile::tempdir().unwrap();
    let syn = synth(dir.path(), 2, 8);
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"mode": "baseline18", "max_iters": 5}"#).unwrap();
    let out = dir.path().join("fit");
    let status = Command::new(env!("CARGO_BIN_EXE_posekit"))
        .args(["fit", s(&syn.join("targets")), "--out", s(&out), "--config", s(&cfg)])
        .env("POSEKIT_SEED", "77")
        .output()
        .unwrap();
    assert!(status.status.success());
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["seed"], 77);
    assert_eq!(manifest["config"]["fit"]["mode"], "baseline18");
    assert_eq!(manifest["config"]["fit"]["max_iters"], 5);
    assert_eq!(manifest["config"]["parameter_count"], 56);

    std::fs::write(&cfg, r#"{"mode": "baseline18", "bogus": 1}"#).unwrap();
    let (c, err) = code(&["fit", s(&syn.join("targets")), "--out", s(&out), "--config", s(&cfg)]);
    assert_eq!(c, 2);
    assert!(err.contains("bogus"), "{err}");
}

#[test]
fn fit_non_finite_target_exits_3_naming_the_frame() {
    let dir = tempfile::tempdir().unwrap();
    let syn = synth(dir.path(), 2, 3);
    let frame = std::fs::read_dir(syn.join("targets")).unwrap().map(|e| e.unwrap().path()).max().unwrap();
    let mut plane = pfm::read(frame.join("core.pfm")).unwrap();
    plane.data[0] = f64::NAN;
    pfm::write(frame.join("core.pfm"), plane.width, plane.height, &plane.data).unwrap();
    let (c, err) = code(&["fit", s(&syn.join("targets")), "--out", s(&dir.path().join("fit")), "--max-iters", "5"]);
    assert_eq!(c, 3, "{err}");
    let id = frame.file_name().unwrap().to_str().unwrap();
    assert!(err.contains(id), "{err}");
}

#[test]
fn fit_missing_targets_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let (c, _) = code(&["fit", s(&dir.path().join("nope")), "--out", s(&dir.path().join("fit"))]);
    assert_eq!(c, 2);
}

#[test]
fn eval_perfect_and_flipped_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let syn = synth(dir.path(), 6, 21);
    let gt = syn.join("ground_truth.jsonl");
    let out = dir.path().join("eval");
    ok(&["eval", "--gt", s(&gt), "--pred", s(&gt), "--out", s(&out)]);
    let report: EvalReport = serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.metrics.pdj, 1.0);
    assert_eq!(report.metrics.l2, 0.0);
    assert!(report.bplp.is_some());
    assert!(std::fs::read_to_string(out.join("report.csv")).unwrap().starts_with("metric,key,value\n"));

    // A perturbed prediction set, evaluated directly and mirrored.
    let mut pred = read_annotations(&gt).unwrap();
    for (i, p) in pred.iter_mut().enumerate() {
        p.keypoints = p.keypoints.map(|q| posekit::Point2::new(q.x + 0.5 * i as f64, q.y - 0.25));
    }
    let pred_path = dir.path().join("pred.jsonl");
    std::fs::write(&pred_path, annotations_to_jsonl(&pred)).unwrap();
    let flip_all = |src: &Path, dst: &Path| {
        let recs: Vec<_> = read_annotations(src).unwrap().iter().map(flip_annotation).collect();
        std::fs::write(dst, annotations_to_jsonl(&recs)).unwrap();
    };
    let (fgt, fpred) = (dir.path().join("fgt.jsonl"), dir.path().join("fpred.jsonl"));
    flip_all(&gt, &fgt);
    flip_all(&pred_path, &fpred);
    let (a, b) = (dir.path().join("ea"), dir.path().join("eb"));
    ok(&["eval", "--gt", s(&gt), "--pred", s(&pred_path), "--out", s(&a)]);
    ok(&["eval", "--gt", s(&fgt), "--pred", s(&fpred), "--out", s(&b)]);
    let ra: EvalReport = serde_json::from_slice(&std::fs::read(a.join("report.json")).unwrap()).unwrap();
    let rb: EvalReport = serde_json::from_slice(&std::fs::read(b.join("report.json")).unwrap()).unwrap();
    assert!((ra.metrics.pdj - rb.metrics.pdj).abs() < 1e-12);
    assert!((ra.metrics.l2 - rb.metrics.l2).abs() < 1e-12);
    let (ba, bb) = (ra.bplp.unwrap(), rb.bplp.unwrap());
    assert!((ba.bplp_c - bb.bplp_c).abs() < 1e-9 * ba.bplp_c);
}

#[test]
fn eval_misaligned_ids_exit_4_listing_them() {
    let dir = tempfile::tempdir().unwrap();
    let syn = synth(dir.path(), 3, 2);
    let gt = syn.join("ground_truth.jsonl");
    let mut pred = read_annotations(&gt).unwrap();
    pred[1].frame_id = "stray".into();
    let pred_path = dir.path().join("pred.jsonl");
    std::fs::write(&pred_path, annotations_to_jsonl(&pred)).unwrap();
    let (c, err) = code(&["eval", "--gt", s(&gt), "--pred", s(&pred_path), "--out", s(&dir.path().join("e"))]);
    assert_eq!(c, 4);
    assert!(err.contains("stray") && err.contains("subject-2-f0001"), "{err}");

    std::fs::write(&pred_path, "{not json}\n").unwrap();
    let (c, err) = code(&["eval", "--gt", s(&gt), "--pred", s(&pred_path), "--out", s(&dir.path().join("e"))]);
    assert_eq!(c, 2);
    assert!(err.contains("line 1"), "{err}");
}

#[test]
fn compare_shows_reference_rows_and_absent_sections() {
    let dir = tempfile::tempdir().unwrap();
    let syn = synth(dir.path(), 2, 9);
    let gt = syn.join("ground_truth.jsonl");
    let out = dir.path().join("eval");
    ok(&["eval", "--gt", s(&gt), "--pred", s(&gt), "--out", s(&out)]);
    let text = ok(&["compare", s(&out.join("report.json"))]);
    assert!(text.contains("published (not reproduced)"));
    let best = text.lines().find(|l| l.starts_with("best model")).unwrap();
    assert!(best.contains("42.60") && best.contains("6.40"), "{best}");
    let constrained = text.lines().find(|l| l.starts_with("constrained")).unwrap();
    assert!(constrained.contains("12.32"), "{constrained}");

    let mut report = read_json(&out.join("report.json"));
    report.as_object_mut().unwrap().remove("bplp");
    let stripped = dir.path().join("stripped.json");
    std::fs::write(&stripped, serde_json::to_string(&report).unwrap()).unwrap();
    let text = ok(&["compare", s(&stripped)]);
    let mine = text.lines().find(|l| l.starts_with("this run")).unwrap();
    assert!(mine.contains("absent"), "{mine}");
    let parsed: EvalReport = serde_json::from_value(report).unwrap();
    assert_eq!(table(&parsed, &reference()), text.trim_end_matches('\n').to_string() + "\n");
}

#[test]
fn augment_counts_and_restores() {
    let dir = tempfile::tempdir().unwrap();
    let syn = synth(dir.path(), 100, 1);
    let gt = syn.join("ground_truth.jsonl");
    let half = dir.path().join("half.jsonl");
    ok(&["augment", s(&gt), "--out", s(&half), "--fraction", "0.5", "--seed", "4"]);
    let recs = read_annotations(&half).unwrap();
    assert_eq!(recs.len(), 100);
    assert_eq!(recs.iter().filter(|r| r.flipped).count(), 50);

    // Flipped records swap sides exactly as flip_annotation does.
    let orig = read_annotations(&gt).unwrap();
    for (o, r) in orig.iter().zip(&recs) {
        if r.flipped {
            assert_eq!(&flip_annotation(o), r);
        } else {
            assert_eq!(o, r);
        }
    }

    let (once, twice) = (dir.path().join("once.jsonl"), dir.path().join("twice.jsonl"));
    ok(&["augment", s(&gt), "--out", s(&once), "--fraction", "1.0"]);
    ok(&["augment", s(&once), "--out", s(&twice), "--fraction", "1.0"]);
    assert_eq!(std::fs::read(&gt).unwrap(), std::fs::read(&twice).unwrap());

    std::fs::write(dir.path().join("bad.jsonl"), "{}\n").unwrap();
    let (c, _) = code(&["augment", s(&dir.path().join("bad.jsonl")), "--out", s(&once)]);
    assert_eq!(c, 2);
}
