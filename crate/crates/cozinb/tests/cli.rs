//! End-to-end tests of the command-line binary: the sample -> fit ->
//! eval -> transform -> export lifecycle, exit-code contracts, config
//! merging, and reproducibility of trace files.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cozinb"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary should spawn")
}

fn run_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Draw one small shared corpus for the whole test file.
fn sample_fixture(dir: &Path) {
    run_ok(&[
        "sample",
        "--output",
        dir.to_str().unwrap(),
        "--samples",
        "30",
        "--features",
        "20",
        "--k",
        "5",
        "--planted",
        "3",
        "--mean-tml",
        "25",
        "--expect-mean-tml",
        "25",
        "--seed",
        "77",
        "--kernel",
        "off",
    ]);
}

fn fit_fixture(corpus: &Path, out: &Path, seed: &str) {
    run_ok(&[
        "fit",
        "--data",
        corpus.to_str().unwrap(),
        "--output",
        out.to_str().unwrap(),
        "--seed",
        seed,
        "--k",
        "6",
        "--max-epochs",
        "6",
        "--local-iters",
        "10",
        "--kernel",
        "off",
        "--validate",
        "on",
    ]);
}

#[test]
fn lifecycle_produces_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let synth = dir.path().join("synth");
    sample_fixture(&synth);
    assert!(synth.join("corpus.tsv").exists());
    assert!(synth.join("truth").join("phi.bin").exists());
    assert!(synth.join("config.json").exists());

    let fitdir = dir.path().join("run");
    fit_fixture(&synth.join("corpus.tsv"), &fitdir, "3");
    let trace = read(&fitdir.join("trace.tsv"));
    let mut lines = trace.lines();
    assert_eq!(lines.next(), Some("epoch\telbo\tval_perplexity"));
    assert_eq!(lines.count(), 6, "one trace row per epoch");
    assert!(fitdir.join("timing.tsv").exists());
    assert!(fitdir.join("checkpoint").join("manifest.json").exists());
    assert!(fitdir.join("checkpoint").join("vocab.tsv").exists());

    // Objective strictly improves over the first epochs of a fresh fit.
    let rows: Vec<f64> = trace
        .lines()
        .skip(1)
        .map(|l| l.split('\t').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(rows[5] > rows[0], "objective should improve: {rows:?}");

    let evaldir = dir.path().join("eval");
    let stdout = run_ok(&[
        "eval",
        "--checkpoint",
        fitdir.join("checkpoint").to_str().unwrap(),
        "--data",
        synth.join("corpus.tsv").to_str().unwrap(),
        "--output",
        evaldir.to_str().unwrap(),
        "--top",
        "5",
    ]);
    assert!(stdout.contains("perplexity"));
    for f in ["eval.json", "report.json", "factors.tsv", "activity.tsv"] {
        assert!(evaldir.join(f).exists(), "missing {f}");
    }
    let factors = read(&evaldir.join("factors.tsv"));
    assert_eq!(factors.lines().next(), Some("factor_id\tfeature\tweight"));
    // 6 factors x top 5 features.
    assert_eq!(factors.lines().count(), 1 + 6 * 5);

    // Evaluating the training corpus with the fit's own split must
    // reproduce the final traced validation perplexity.
    let eval_json = read(&evaldir.join("eval.json"));
    let parsed: serde_json::Value = serde_json::from_str(&eval_json).unwrap();
    let pp = parsed["perplexity"].as_f64().unwrap();
    let traced: f64 = trace
        .lines()
        .last()
        .unwrap()
        .split('\t')
        .nth(2)
        .unwrap()
        .parse()
        .unwrap();
    assert!(
        (pp - traced).abs() < 1e-9,
        "eval {pp} vs traced {traced}"
    );

    let transdir = dir.path().join("trans");
    run_ok(&[
        "transform",
        "--checkpoint",
        fitdir.join("checkpoint").to_str().unwrap(),
        "--data",
        synth.join("corpus.tsv").to_str().unwrap(),
        "--output",
        transdir.to_str().unwrap(),
    ]);
    let table = read(&transdir.join("transform.tsv"));
    assert_eq!(
        table.lines().next(),
        Some("sample_id\tfactor_id\tmean_intensity\tselector")
    );
    assert_eq!(table.lines().count(), 1 + 30 * 6);

    let facdir = dir.path().join("facs");
    run_ok(&[
        "export-factors",
        "--checkpoint",
        fitdir.join("checkpoint").to_str().unwrap(),
        "--output",
        facdir.to_str().unwrap(),
        "--top",
        "4",
    ]);
    let exported = read(&facdir.join("factors.tsv"));
    assert_eq!(exported.lines().count(), 1 + 6 * 4);
}

#[test]
fn identical_runs_write_identical_traces() {
    let dir = tempfile::tempdir().unwrap();
    let synth = dir.path().join("synth");
    sample_fixture(&synth);
    let corpus = synth.join("corpus.tsv");

    let a = dir.path().join("a");
    let b = dir.path().join("b");
    fit_fixture(&corpus, &a, "9");
    fit_fixture(&corpus, &b, "9");
    assert_eq!(
        std::fs::read(a.join("trace.tsv")).unwrap(),
        std::fs::read(b.join("trace.tsv")).unwrap(),
        "same config and seed must give byte-identical traces"
    );

    // A different seed must actually change the numbers.
    let c = dir.path().join("c");
    fit_fixture(&corpus, &c, "10");
    assert_ne!(
        std::fs::read(a.join("trace.tsv")).unwrap(),
        std::fs::read(c.join("trace.tsv")).unwrap()
    );
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let synth = dir.path().join("synth");
    sample_fixture(&synth);
    let corpus = synth.join("corpus.tsv");

    let one = dir.path().join("t1");
    let four = dir.path().join("t4");
    for (threads, out) in [("1", &one), ("4", &four)] {
        run_ok(&[
            "fit",
            "--threads",
            threads,
            "--data",
            corpus.to_str().unwrap(),
            "--output",
            out.to_str().unwrap(),
            "--seed",
            "5",
            "--k",
            "6",
            "--max-epochs",
            "4",
            "--local-iters",
            "8",
            "--kernel",
            "off",
        ]);
    }
    assert_eq!(
        std::fs::read(one.join("trace.tsv")).unwrap(),
        std::fs::read(four.join("trace.tsv")).unwrap(),
        "thread count must not affect results"
    );
}

#[test]
fn exit_codes_follow_error_categories() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");

    // Missing data file: data error (2) naming the path.
    let missing = dir.path().join("absent.tsv");
    let r = run(&[
        "fit",
        "--data",
        missing.to_str().unwrap(),
        "--output",
        out.to_str().unwrap(),
    ]);
    assert_eq!(r.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&r.stderr);
    assert!(
        stderr.contains("absent.tsv"),
        "error should name the missing file: {stderr}"
    );

    // Unknown config key: configuration error (1).
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"k": 4, "no_such_key": true}"#).unwrap();
    let r = run(&[
        "fit",
        "--config",
        cfg.to_str().unwrap(),
        "--output",
        out.to_str().unwrap(),
    ]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("no_such_key"));

    // Invalid hyperparameter from a config file: configuration error.
    let cfg = dir.path().join("badval.json");
    std::fs::write(&cfg, r#"{"kappa": 0.2}"#).unwrap();
    let synth = dir.path().join("synth");
    sample_fixture(&synth);
    let r = run(&[
        "fit",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        synth.join("corpus.tsv").to_str().unwrap(),
        "--output",
        out.to_str().unwrap(),
    ]);
    assert_eq!(r.status.code(), Some(1));

    // Missing checkpoint manifest: data error (2).
    let r = run(&[
        "eval",
        "--checkpoint",
        dir.path().join("nockpt").to_str().unwrap(),
        "--data",
        synth.join("corpus.tsv").to_str().unwrap(),
        "--output",
        out.to_str().unwrap(),
    ]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("manifest"));

    // Bad command line: configuration error (1).
    let r = run(&["fit", "--no-such-flag"]);
    assert_eq!(r.status.code(), Some(1));

    // Help exits zero.
    let r = run(&["--help"]);
    assert_eq!(r.status.code(), Some(0));
}

#[test]
fn cli_flags_override_config_keys() {
    let dir = tempfile::tempdir().unwrap();
    let synth = dir.path().join("synth");
    sample_fixture(&synth);

    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"k": 4, "max_epochs": 2, "kernel": false, "seed": 11, "local_iters": 5}"#,
    )
    .unwrap();
    let out = dir.path().join("run");
    run_ok(&[
        "fit",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        synth.join("corpus.tsv").to_str().unwrap(),
        "--output",
        out.to_str().unwrap(),
        "--k",
        "7",
    ]);
    let resolved: serde_json::Value =
        serde_json::from_str(&read(&out.join("config.json"))).unwrap();
    assert_eq!(resolved["k"], 7, "flag overrides config key");
    assert_eq!(resolved["max_epochs"], 2, "unset flags keep config values");
    assert_eq!(resolved["seed"], 11);
    let trace = read(&out.join("trace.tsv"));
    assert_eq!(trace.lines().count(), 1 + 2);
}

#[test]
fn blacklisted_features_are_dropped_before_fitting() {
    let dir = tempfile::tempdir().unwrap();
    let synth = dir.path().join("synth");
    sample_fixture(&synth);

    let out = dir.path().join("run");
    let stdout = run_ok(&[
        "fit",
        "--data",
        synth.join("corpus.tsv").to_str().unwrap(),
        "--output",
        out.to_str().unwrap(),
        "--seed",
        "3",
        "--k",
        "5",
        "--max-epochs",
        "2",
        "--local-iters",
        "5",
        "--kernel",
        "off",
        "--blacklist",
        "f1,f2,f3",
    ]);
    assert!(stdout.contains("17 features"), "20 - 3 = 17: {stdout}");
    let vocab = read(&out.join("checkpoint").join("vocab.tsv"));
    assert!(!vocab.lines().any(|l| l == "f1"));
    assert_eq!(vocab.lines().count(), 17);
}
