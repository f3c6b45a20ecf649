use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use masscade::eval::parse_froc_csv;
use masscade::pipeline::{load_mass_regions, PipelineConfig, PredictionRecord, StageMarker, Stage};
use masscade::superpixel::CandidateLabel;

fn masscade(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_masscade")).args(args).output().expect("spawn masscade")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

/// Synthesizes `n` cases and writes a config with `k` folds.
fn fixture(dir: &Path, n: usize, k: usize) -> (PathBuf, PathBuf) {
    let mut cfg = PipelineConfig::default();
    cfg.eval.k = k;
    let cfg_path = dir.join("config.json");
    fs::write(&cfg_path, cfg.to_json()).unwrap();
    let data = dir.join("data");
    let out = masscade(&["synth", "--config", p(&cfg_path), "--out", p(&data), "--n", &n.to_string()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    (cfg_path, data)
}

#[test]
fn synth_is_deterministic_and_allows_zero_cases() {
    let tmp = tempfile::tempdir().unwrap();
    for name in ["a", "b"] {
        let out = masscade(&["synth", "--out", p(&tmp.path().join(name)), "--n", "5", "--seed", "7"]);
        assert!(out.status.success());
    }
    let a = tree(&tmp.path().join("a"));
    assert_eq!(a.keys().filter(|k| k.ends_with("image.png")).count(), 5);
    assert_eq!(a, tree(&tmp.path().join("b")));

    let other = masscade(&["synth", "--out", p(&tmp.path().join("c")), "--n", "5", "--seed", "8"]);
    assert!(other.status.success());
    assert_ne!(a, tree(&tmp.path().join("c")));

    let empty = masscade(&["synth", "--out", p(&tmp.path().join("e")), "--n", "0"]);
    assert_eq!(empty.status.code(), Some(0));
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(tmp.path().join("e/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["cases"].as_array().unwrap().len(), 0);
}

#[test]
fn missing_annotation_is_a_data_error_naming_the_case() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg, data) = fixture(tmp.path(), 3, 2);
    fs::remove_file(data.join("case_001/masses.json")).unwrap();
    let out = masscade(&["preprocess", "--config", p(&cfg), "--data", p(&data), "--out", p(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("case_001"));
}

#[test]
fn usage_and_config_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(masscade(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(masscade(&["run", "--out", p(tmp.path())]).status.code(), Some(1));

    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"seed": 1, "no_such_key": true}"#).unwrap();
    let out = masscade(&["synth", "--config", p(&bad), "--out", p(&tmp.path().join("d")), "--n", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));
}

#[test]
fn sift_writes_one_image_per_band() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg, data) = fixture(tmp.path(), 2, 2);
    let out_dir = tmp.path().join("o");
    for stage in ["preprocess", "sift"] {
        let out = masscade(&[stage, "--config", p(&cfg), "--data", p(&data), "--out", p(&out_dir)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for case in ["case_000", "case_001"] {
        for s in 1..=4 {
            assert!(out_dir.join(format!("sift/{case}/scale{s}.png")).is_file());
        }
        assert!(!out_dir.join(format!("sift/{case}/scale5.png")).exists());
    }
}

#[test]
fn froc_stage_scores_hand_written_predictions() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg_path, data) = fixture(tmp.path(), 12, 2);
    let root = tmp.path().join("o");
    let out = masscade(&["preprocess", "--config", p(&cfg_path), "--data", p(&data), "--out", p(&root)]);
    assert!(out.status.success());

    // two cases with exactly one mass each
    let ids: Vec<String> = (0..12).map(|i| format!("case_{i:03}")).collect();
    let single: Vec<(String, masscade::imagecore::Region)> = ids
        .iter()
        .filter_map(|id| {
            let m = load_mass_regions(&root, id).unwrap();
            (m.len() == 1 && m[0].area() % 2 == 0).then(|| (id.clone(), m[0].clone()))
        })
        .take(2)
        .collect();
    assert_eq!(single.len(), 2, "fixture needs two single-mass cases");

    // Dice 0.5: half the mass plus as many pixels outside it
    let half_dice = |mass: &masscade::imagecore::Region| {
        let (w, h) = mass.dims();
        let inside: Vec<u32> = mass.indices()[..mass.area() / 2].to_vec();
        let outside: Vec<u32> = (0..(w * h) as u32).filter(|i| !mass.indices().contains(i)).take(mass.area() / 2).collect();
        masscade::imagecore::Region::new(w, h, [inside, outside].concat()).unwrap()
    };
    let far = |mass: &masscade::imagecore::Region| {
        let (w, h) = mass.dims();
        let idx: Vec<u32> = (0..(w * h) as u32).rev().filter(|i| !mass.indices().contains(i)).take(9).collect();
        masscade::imagecore::Region::new(w, h, idx).unwrap()
    };
    let rec = |case: &str, index: usize, r: &masscade::imagecore::Region, prob: f64| PredictionRecord {
        case_id: case.into(),
        index,
        scale: 1,
        fold: 0,
        label: CandidateLabel::Negative,
        survived_stage: 3,
        probability: prob,
        decision: Some(0.0),
        width: r.width(),
        height: r.height(),
        runs: r.to_runs(),
    };
    let (a, ma) = &single[0];
    let (b, mb) = &single[1];
    let preds = [
        rec(a, 0, &half_dice(ma), 0.9),
        rec(a, 1, &far(ma), 0.5),
        rec(b, 0, &half_dice(mb), 0.4),
    ];
    let cfg = PipelineConfig::load(&cfg_path).unwrap();
    fs::create_dir_all(root.join("predict")).unwrap();
    let lines: Vec<String> = preds.iter().map(|r| serde_json::to_string(r).unwrap()).collect();
    fs::write(root.join("predict/predictions.jsonl"), lines.join("\n") + "\n").unwrap();
    StageMarker::new(Stage::Predict, &cfg, vec![a.clone(), b.clone()]).write(&root).unwrap();

    let out = masscade(&["froc", "--config", p(&cfg_path), "--out", p(&root)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let pts = parse_froc_csv(&fs::read_to_string(root.join("froc/froc.csv")).unwrap()).unwrap();
    let at = |th: f64| pts.iter().find(|q| q.threshold == th).copied().unwrap();
    assert_eq!((at(0.5).tpr, at(0.5).fpi), (0.5, 0.5));
    assert_eq!((at(0.9).tpr, at(0.9).fpi), (0.5, 0.0));
    assert_eq!((at(0.4).tpr, at(0.4).fpi), (1.0, 0.5));
}

#[test]
fn staged_run_matches_full_run_and_reruns_agree() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg, data) = fixture(tmp.path(), 20, 5);
    let full = tmp.path().join("full");
    let again = tmp.path().join("again");
    let staged = tmp.path().join("staged");
    for (dir, jobs) in [(&full, "1"), (&again, "2")] {
        let out = masscade(&["run", "--config", p(&cfg), "--data", p(&data), "--out", p(dir), "--jobs", jobs]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for stage in ["preprocess", "sift", "candidates", "features", "train", "predict", "froc", "heatmap"] {
        let out = masscade(&[stage, "--config", p(&cfg), "--data", p(&data), "--out", p(&staged)]);
        assert!(out.status.success(), "{stage}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let full_tree = tree(&full);
    assert_eq!(full_tree, tree(&staged));
    assert_eq!(fs::read(full.join("froc/froc.csv")).unwrap(), fs::read(again.join("froc/froc.csv")).unwrap());

    let pts = parse_froc_csv(&fs::read_to_string(full.join("froc/froc.csv")).unwrap()).unwrap();
    assert!(!pts.is_empty());
    for w in pts.windows(2) {
        assert!(w[0].threshold < w[1].threshold && w[0].tpr >= w[1].tpr && w[0].fpi >= w[1].fpi);
    }
    assert!(full_tree.keys().any(|k| k.starts_with("heatmap") && k.to_string_lossy().ends_with("_overlay.png")));
}
