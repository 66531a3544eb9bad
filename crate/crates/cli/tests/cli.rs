use std::path::Path;
use std::process::{Command, Output};

fn riskset(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_riskset")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Small synthetic experiment that runs in about a second.
fn write_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("exp.cfg");
    std::fs::write(
        &path,
        format!(
            "synth.n = 400\nsynth.feature_shift = 2.0\n\
             split.train = 0.4\nsplit.calib = 0.4\nsplit.test = 0.2\n\
             risk.alpha_fnr = 0.2\nrisk.alpha_fpr = 0.2\n\
             detector.epochs = 30\nssgnc.epochs = 15\nssgnc.hidden = 8\n\
             experiment.output = out\n{extra}"
        ),
    )
    .unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn missing_score_file_exits_two_naming_import() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    std::fs::write(&cfg, "data.source = scores\ndata.scores = nowhere.csv\n").unwrap();
    let o = riskset(&["calibrate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("import"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "synth.colour = red\n");
    let o = riskset(&["pipeline", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("synth.colour"));
}

#[test]
fn too_few_trials_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let o = riskset(&["guarantee", "--config", &cfg, "--trials", "10"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("warning") && err.contains("minimum"), "{err}");
}

#[test]
fn pipeline_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = riskset(&[
            "pipeline",
            "--config",
            &cfg,
            "--out",
            out.to_str().unwrap(),
            "--seed",
            "4",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let mut names: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 12, "{names:?}");
    for name in names {
        assert_eq!(
            std::fs::read(a.join(&name)).unwrap(),
            std::fs::read(b.join(&name)).unwrap(),
            "{name:?}"
        );
    }
}

#[test]
fn relative_output_resolves_against_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "ssgnc.enabled = false\n");
    let o = riskset(&["pipeline", "--config", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("out/metrics.csv").exists());
    assert!(!dir.path().join("out/scores_ssgnc.csv").exists());
}

#[test]
fn gen_detect_calibrate_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_config(d, "");
    assert!(riskset(&["gen", "--config", &cfg]).status.success());
    assert!(d.join("out/edges.tsv").exists() && d.join("out/nodes.csv").exists());

    let files = d.join("files.cfg");
    std::fs::write(
        &files,
        "data.source = files\ndata.edges = out/edges.tsv\ndata.nodes = out/nodes.csv\n\
         split.train = 0.4\nsplit.calib = 0.4\nsplit.test = 0.2\ndetector.epochs = 30\n\
         experiment.output = det\n",
    )
    .unwrap();
    let o = riskset(&["detect", "--config", files.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("AUC"));

    let scores = d.join("scores.cfg");
    std::fs::write(
        &scores,
        "data.source = scores\ndata.scores = det/scores_detector.csv\n\
         risk.alpha_fnr = 0.2\nrisk.alpha_fpr = 0.2\nexperiment.output = cal\n",
    )
    .unwrap();
    let o = riskset(&["calibrate", "--config", scores.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cal = std::fs::read_to_string(d.join("cal/calibration.csv")).unwrap();
    assert!(cal.starts_with("class,alpha,n_calib,lambda_hat,empirical_risk_at_lambda\n"));
    assert_eq!(cal.lines().count(), 3);
}

#[test]
fn calibrate_requires_imported_scores() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    assert_eq!(riskset(&["calibrate", "--config", &cfg]).status.code(), Some(2));
}

#[test]
fn sweep_rejects_empty_values_and_records_cells() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "ssgnc.enabled = false\n");
    let o = riskset(&["sweep", "--config", &cfg, "--axis", "alpha", "--values", ""]);
    assert_eq!(o.status.code(), Some(2));
    let o = riskset(&["sweep", "--config", &cfg, "--axis", "alpha", "--values", "0.2,0.001"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("out/sweep.csv")).unwrap();
    assert!(csv.lines().any(|l| l.contains(",error,")), "{csv}");
    assert!(csv.lines().any(|l| l.starts_with("alpha,0.2,DTCRC,ok")), "{csv}");
}

#[test]
fn report_combines_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "ssgnc.enabled = false\n");
    assert!(riskset(&["pipeline", "--config", &cfg]).status.success());
    let metrics = dir.path().join("out/metrics.csv");
    let out = dir.path().join("table.csv");
    let o = riskset(&["report", metrics.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("CP-RAPS") && text.contains("DTCRC"));
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&metrics).unwrap());
}

#[test]
fn report_of_missing_file_exits_two() {
    assert_eq!(riskset(&["report", "/nonexistent/metrics.csv"]).status.code(), Some(2));
}
