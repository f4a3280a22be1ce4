use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lowfpr::adjust::{self, CalibrationResult, FitConfig, Variant};
use lowfpr::data::{load_dataset, Format, Split};

fn lowfpr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lowfpr")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, json: &str) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, json).unwrap();
    p
}

/// Small two-split dataset generated through the CLI.
fn small_dataset(dir: &Path, extra: &str) -> PathBuf {
    let cfg = write_config(
        dir,
        &format!("{{\"n_benign\": 4000, \"n_malicious\": 4000, \"seed\": 7{extra}}}"),
    );
    let data = dir.join("data.csv");
    let out = lowfpr(&["synth", "--config", s(&cfg), "--output", s(&data)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    data
}

#[test]
fn validate_reports_counts() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path(), "");
    let out = lowfpr(&["validate", "--input", s(&data)]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("member count: 5"));
    assert!(text.contains("validation"));
}

#[test]
fn validate_rejects_bad_files() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "sample_id,label,split,family,m0\na,0,test,,0.2\nb,1,test,,1.2\n").unwrap();
    let out = lowfpr(&["validate", "--input", s(&bad)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));

    std::fs::write(&bad, "sample_id,label,family,m0\na,0,,0.2\n").unwrap();
    let out = lowfpr(&["validate", "--input", s(&bad)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("split"), "{}", stderr(&out));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&lowfpr(&["fit"])), 1);
    assert_eq!(code(&lowfpr(&["study", "nonsense", "--input", "x.csv"])), 1);
    assert_eq!(code(&lowfpr(&["synth", "--scenario", "nope", "--output", "/tmp/never.csv"])), 1);
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path(), "");
    let out = lowfpr(&["study", "protocol", "--input", s(&data), "--target-fpr", "1e-3", "--target-fpr", "1e-2"]);
    assert_eq!(code(&out), 1, "ascending targets must be rejected");
    let out = lowfpr(&["fit", "--input", s(&data), "--variant", "g", "--target-fpr", "0"]);
    assert_eq!(code(&out), 1);
    assert_eq!(code(&lowfpr(&["--help"])), 0);
}

#[test]
fn fit_writes_expected_alpha_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path(), "");
    for (variant, arity) in [("g", 0), ("g+l", 2), ("g+lv2", 4), ("g+lv3", 5)] {
        let cal = dir.path().join(format!("{variant}.json"));
        let out = lowfpr(&[
            "fit", "--input", s(&data), "--variant", variant, "--target-fpr", "1e-3", "--output", s(&cal),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&cal).unwrap()).unwrap();
        let alpha = json["alpha"].as_array().unwrap();
        assert_eq!(alpha.len(), arity, "{variant}");
        if variant == "g+lv2" {
            assert!(alpha.iter().all(|a| a.as_f64().unwrap().abs() <= 10.0));
        }
    }
}

#[test]
fn fit_then_eval_matches_in_process() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path(), ", \"ambiguous_fraction\": 0.02");
    let ds = load_dataset(&data, Format::Csv).unwrap();
    for variant in ["g", "g+l", "g+lv2", "g+lv3"] {
        let out_dir = dir.path().join(variant);
        let out = lowfpr(&[
            "fit", "--input", s(&data), "--variant", variant, "--target-fpr", "1e-2", "--seed", "3", "--output-dir",
            s(&out_dir),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        let cal = out_dir.join("calibration.json");
        let out = lowfpr(&[
            "eval", "--input", s(&data), "--calibration", s(&cal), "--output-dir", s(&out_dir),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));

        let v: Variant = variant.parse().unwrap();
        let direct = adjust::fit(&ds.filter_split(Split::Validation), 1e-2, v, 3, &FitConfig::default()).unwrap();
        let from_file = CalibrationResult::from_json(&std::fs::read_to_string(&cal).unwrap()).unwrap();
        assert_eq!(from_file.params, direct.params);
        assert_eq!(from_file.global_threshold.to_bits(), direct.global_threshold.to_bits());
        let e = adjust::evaluate_calibration(&ds.filter_split(Split::Test), &direct, 1e-2).unwrap();
        let expected = format!(
            "variant,target_fpr,tpr,fpr,combined\n{variant},0.01,{:?},{:?},{:?}\n",
            e.tpr, e.fpr, e.combined
        );
        assert_eq!(std::fs::read_to_string(out_dir.join("eval.csv")).unwrap(), expected);
    }
}

#[test]
fn eval_on_separable_and_sentinel() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("sep.csv");
    let out = lowfpr(&["synth", "--scenario", "separable", "--output", s(&data)]);
    assert_eq!(code(&out), 0);
    let out = lowfpr(&[
        "fit", "--input", s(&data), "--variant", "g", "--target-fpr", "1e-3", "--output-dir", s(dir.path()),
    ]);
    assert_eq!(code(&out), 0);
    let out = lowfpr(&[
        "eval", "--input", s(&data), "--calibration", s(&dir.path().join("calibration.json")), "--output-dir",
        s(dir.path()),
    ]);
    assert_eq!(code(&out), 0);
    let csv = std::fs::read_to_string(dir.path().join("eval.csv")).unwrap();
    assert_eq!(csv.lines().nth(1).unwrap(), "g,0.001,1.0,0.0,1.0");

    let sentinel = dir.path().join("inf.json");
    std::fs::write(
        &sentinel,
        r#"{"variant": "global_only", "alpha": [], "threshold": "inf", "target_fpr": 0.001,
            "multiplier": 0.9, "seed": 0, "sweeps_used": 0, "member_count": 5,
            "val_tpr": 0.0, "val_fpr": 0.0}"#,
    )
    .unwrap();
    let out = lowfpr(&["eval", "--input", s(&data), "--calibration", s(&sentinel), "--output-dir", s(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("eval.csv")).unwrap();
    assert_eq!(csv.lines().nth(1).unwrap(), "g,0.001,0.0,0.0,0.0");
}

#[test]
fn eval_rejects_member_count_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path(), "");
    let cal = dir.path().join("cal.json");
    std::fs::write(
        &cal,
        r#"{"variant": "global_only", "alpha": [], "threshold": 0.5, "target_fpr": 0.001,
            "multiplier": 0.9, "seed": 0, "sweeps_used": 0, "member_count": 3,
            "val_tpr": 0.5, "val_fpr": 0.0}"#,
    )
    .unwrap();
    let out = lowfpr(&["eval", "--input", s(&data), "--calibration", s(&cal), "--output-dir", s(dir.path())]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("member"), "{}", stderr(&out));
}

#[test]
fn study_cardinalities() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path(), "");
    let out_dir = dir.path().join("out");
    let out = lowfpr(&["study", "protocol", "--input", s(&data), "--output-dir", s(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let protocol = std::fs::read_to_string(out_dir.join("protocol.csv")).unwrap();
    assert_eq!(protocol.lines().count(), 1 + 4);
    assert!(protocol.starts_with("target_fpr,valid_tpr,valid_fpr,invalid_tpr,rel_error,attainable\n"));

    let out = lowfpr(&[
        "study", "subsample", "--input", s(&data), "--fractions", "1,0.1,0.01", "--study-seeds", "20", "--output-dir",
        s(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let sub = std::fs::read_to_string(out_dir.join("subsample.csv")).unwrap();
    assert_eq!(sub.lines().count(), 1 + 240);
    assert!(sub.ends_with('\n'));

    let out = lowfpr(&["study", "pipeline", "--input", s(&data), "--target-fpr", "1e-2", "--output-dir", s(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(std::fs::read_to_string(out_dir.join("pipeline.csv")).unwrap().lines().count(), 1 + 4);
}

#[test]
fn table1_needs_an_ensemble() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path(), ", \"member_count\": 1");
    let out = lowfpr(&["study", "table1", "--input", s(&data), "--output-dir", s(dir.path())]);
    assert_eq!(code(&out), 2);

    let data = small_dataset(dir.path(), "");
    let out = lowfpr(&["study", "table1", "--input", s(&data), "--output-dir", s(dir.path())]);
    assert_eq!(code(&out), 0);
    let table = std::fs::read_to_string(dir.path().join("table1.csv")).unwrap();
    assert!(table.starts_with("model,accuracy,auc,partial_auc,is_ensemble\n"));
    assert_eq!(table.lines().count(), 3);
}

#[test]
fn synth_outputs_round_trip_and_repeat() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "{\"n_benign\": 500, \"n_malicious\": 500, \"novel_fraction\": 0.0}");
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    for p in [&a, &b] {
        assert_eq!(code(&lowfpr(&["synth", "--config", s(&cfg), "--output", s(p)])), 0);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(code(&lowfpr(&["validate", "--input", s(&a)])), 0);
    let ds = load_dataset(&a, Format::Jsonl).unwrap();
    assert!(ds.records().iter().all(|r| r.family.as_deref().is_none_or(|f| f.starts_with("fam-"))));

    let bad = write_config(dir.path(), "{\"logit_sd\": -1}");
    assert_eq!(code(&lowfpr(&["synth", "--config", s(&bad), "--output", s(&a)])), 2);
}

#[test]
fn analysis_outputs_are_readable() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("nov.csv");
    assert_eq!(code(&lowfpr(&["synth", "--scenario", "novelty", "--output", s(&data)])), 0);
    let out_dir = dir.path().join("out");
    for args in [
        vec!["study", "novelty"],
        vec!["study", "errors"],
        vec!["roc"],
        vec!["hist", "--density"],
        vec!["uncertainties", "--split", "test"],
    ] {
        let mut full = args.clone();
        full.extend(["--input", s(&data), "--output-dir", s(&out_dir)]);
        let out = lowfpr(&full);
        assert_eq!(code(&out), 0, "{args:?}: {}", stderr(&out));
    }
    let header = |name: &str| {
        std::fs::read_to_string(out_dir.join(name)).unwrap().lines().next().unwrap().to_string()
    };
    assert_eq!(header("novelty.csv"), "sample_id,group,value");
    assert_eq!(header("errors_hist_incorrect.csv"), "bin_lo,bin_hi,count_or_density");
    assert_eq!(header("roc.csv"), "threshold,tpr,fpr");
    assert_eq!(header("uncertainties.csv"), "sample_id,yhat,pred_entropy,aleatoric,epistemic");
    let roc = std::fs::read_to_string(out_dir.join("roc.csv")).unwrap();
    assert!(roc.lines().nth(1).unwrap().starts_with("inf,0.0,0.0"));
}
