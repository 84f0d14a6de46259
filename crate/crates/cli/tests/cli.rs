use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_parsing-eval"))
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth(dir: &Path, extra: &[&str]) {
    let mut args = vec!["synth", "--out", "d", "--images", "8", "--size", "64", "--categories", "8"];
    args.extend_from_slice(extra);
    let o = run(&args, dir);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn version_prints_protocol() {
    let o = bin().arg("--version").output().unwrap();
    assert!(o.status.success());
    assert!(stdout(&o).contains("mhp-parsing-eval/1"));
}

#[test]
fn usage_errors_exit_two() {
    let o = bin().args(["eval-instance", "--bogus"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"));
    let o = bin().output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_manifest_exits_one_and_names_path() {
    let o = bin().args(["eval-instance", "--manifest", "missing.json"]).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing.json"));
}

#[test]
fn invalid_manifest_exits_one() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("m.json"), r#"{"categories": {"count": 3}, "images": [{"id": "a"}]}"#).unwrap();
    let o = run(&["eval-semantic", "--manifest", "m.json"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("images[0]"), "{}", stderr(&o));
}

#[test]
fn gt_parsing_upper_bound_is_perfect() {
    let tmp = TempDir::new().unwrap();
    synth(tmp.path(), &[]);
    let o = run(
        &["upper-bound", "--manifest", "d/manifest.json", "--mode", "gt-parsing", "--out", "ub.json"],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let line = stdout(&o)
        .lines()
        .find(|l| l.starts_with("gt-parsing"))
        .unwrap()
        .to_string();
    assert_eq!(line.matches("100.0").count(), 4, "{line}");
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("ub.json")).unwrap()).unwrap();
    let m = &json["rows"][1]["metrics"];
    for k in ["miou", "ap50", "ap_vol", "pcp50"] {
        assert_eq!(m[k], 100.0, "{k}");
    }
}

#[test]
fn perfect_predictions_score_100() {
    let tmp = TempDir::new().unwrap();
    synth(tmp.path(), &["--min-miou", "1", "--max-miou", "1", "--boundary-shift", "0"]);
    let o = run(&["eval-semantic", "--manifest", "d/manifest.json"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("100.0"));
    let o = run(&["eval-instance", "--manifest", "d/manifest.json", "--out", "i.json"], tmp.path());
    assert!(o.status.success());
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("i.json")).unwrap()).unwrap();
    assert_eq!(json["instance"]["ap_vol"], 100.0);
    assert_eq!(json["instance"]["pcp50"], 100.0);
}

#[test]
fn pipeline_outputs_are_reproducible() {
    let tmp = TempDir::new().unwrap();
    synth(tmp.path(), &["--iou-noise", "0.02", "--ring", "2"]);
    let steps: [&[&str]; 5] = [
        &["rescore", "--manifest", "d/manifest.json", "--out", "r/manifest.json", "--topk", "3"],
        &["combine", "--manifest", "r/manifest.json", "--out", "c"],
        &["eval-semantic", "--manifest", "r/manifest.json", "--out", "sem.json"],
        &["eval-instance", "--manifest", "r/manifest.json", "--out", "inst.json"],
        &["calibrate", "--manifest", "r/manifest.json", "--out", "cal"],
    ];
    let mut first = Vec::new();
    for threads in ["1", "4"] {
        let mut outs = Vec::new();
        for s in steps {
            let mut args = vec!["--threads", threads];
            args.extend_from_slice(s);
            let o = run(&args, tmp.path());
            assert!(o.status.success(), "{s:?}: {}", stderr(&o));
            outs.push(o.stdout);
        }
        for f in ["r/manifest.json", "c/report.json", "sem.json", "inst.json", "cal/scatter.csv"] {
            outs.push(fs::read(tmp.path().join(f)).unwrap());
        }
        if first.is_empty() {
            first = outs;
        } else {
            assert_eq!(first, outs);
        }
    }
    // rescored manifest points back at the original maps
    let m = fs::read_to_string(tmp.path().join("r/manifest.json")).unwrap();
    assert!(m.contains("../d/maps/"));
    assert!(tmp.path().join("c/maps/00000_c.png").exists());
    let csv = fs::read_to_string(tmp.path().join("cal/scatter.csv")).unwrap();
    assert!(csv.starts_with("gt_miou,cls_score,iou_score,parsing_score\n"));
}

#[test]
fn rescore_without_iou_needs_oracle() {
    let tmp = TempDir::new().unwrap();
    synth(tmp.path(), &[]);
    let o = run(&["rescore", "--manifest", "d/manifest.json", "--out", "r.json"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("iou_score"));
    let o = run(
        &["rescore", "--manifest", "d/manifest.json", "--out", "r.json", "--oracle"],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
}
