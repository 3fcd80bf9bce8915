use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pllasso::data::write_dataset;
use pllasso::model::{DesignSpec, ModelSpec, Nonlinearity};
use pllasso::simulation::sample_dataset;
use pllasso::tuning::{self, BoundInputs};
use serde_json::Value;

fn pllasso(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pllasso"))
        .args(args)
        .output()
        .expect("spawn pllasso")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn json(o: &Output) -> Value {
    assert!(o.status.success(), "stderr: {}", stderr(o));
    serde_json::from_slice(&o.stdout).unwrap()
}

fn config(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn dataset(dir: &Path) -> PathBuf {
    let model = ModelSpec::sparse(
        DesignSpec::shared(12, 4).unwrap(),
        3,
        1.0,
        Nonlinearity::BoundedInteraction { alpha: 0.3 },
        0.2,
    )
    .unwrap();
    let data = sample_dataset(&model, 40, 240, 11).unwrap();
    let path = dir.join("d.csv");
    write_dataset(&data, std::fs::File::create(&path).unwrap()).unwrap();
    path
}

#[test]
fn lambda_t1_example() {
    let o = pllasso(&[
        "lambda",
        "--theorem",
        "T1",
        "--by",
        "1",
        "--bx",
        "1",
        "--nstar",
        "100",
        "--p",
        "10",
        "--delta",
        "0.1",
    ]);
    assert!(o.status.success());
    let printed = stdout(&o);
    let line = printed.trim();
    assert!(line.starts_with("0.99136"), "{line}");
    let significant = line.trim_start_matches("0.").len();
    assert!(significant >= 12, "{line}");
    let inputs = BoundInputs::new(1.0, 1.0, 100, 200, 10, 0.1).unwrap();
    let expected = tuning::lambda_transductive(&inputs).unwrap();
    assert!((line.parse::<f64>().unwrap() - expected).abs() < 1e-13);
}

#[test]
fn lambda_explain_names_theorem_and_inputs() {
    let v = json(&pllasso(&[
        "lambda",
        "--theorem",
        "t2",
        "--by",
        "2",
        "--bx",
        "1",
        "--n",
        "60",
        "--N",
        "5000",
        "--p",
        "30",
        "--explain",
    ]));
    assert_eq!(v["theorem"], "T2_a");
    assert_eq!(v["inputs"]["n_total"], 5000);
    assert!(v["formula"].as_str().unwrap().contains("log(4p/delta)"));
    let inputs = BoundInputs::new(1.0, 2.0, 60, 5000, 30, 0.1).unwrap();
    assert_eq!(
        v["lambda"].as_f64().unwrap(),
        tuning::lambda_semisup_wellspec(&inputs).unwrap()
    );
}

#[test]
fn lambda_usage_errors_name_the_flag() {
    let o = pllasso(&[
        "lambda",
        "--theorem",
        "T9",
        "--by",
        "1",
        "--bx",
        "1",
        "--n",
        "10",
        "--p",
        "3",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--theorem"));

    let o = pllasso(&[
        "lambda",
        "--theorem",
        "T3",
        "--by",
        "1",
        "--bx",
        "1",
        "--nstar",
        "10",
        "--p",
        "3",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--nstar"));

    let o = pllasso(&[
        "lambda",
        "--theorem",
        "T1",
        "--by",
        "1",
        "--bx",
        "1",
        "--nstar",
        "10",
        "--p",
        "3",
        "--delta",
        "2",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--delta"));
}

#[test]
fn help_and_usage_exit_codes() {
    assert_eq!(pllasso(&["--help"]).status.code(), Some(0));
    assert_eq!(pllasso(&["fit", "--help"]).status.code(), Some(0));
    assert_eq!(pllasso(&[]).status.code(), Some(1));
    let o = pllasso(&["fit", "--lambda", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--dataset"));
}

#[test]
fn fit_auto_semisupervised() {
    let dir = tempfile::tempdir().unwrap();
    let d = dataset(dir.path());
    let d = d.to_str().unwrap();
    let args = [
        "fit",
        "--dataset",
        d,
        "--variant",
        "semisupervised",
        "--lambda",
        "auto",
    ];
    let first = pllasso(&args);
    let v = json(&first);
    assert!(v["kkt_residual"].as_f64().unwrap() <= 1e-8);
    assert_eq!(v["lambda_rule"]["theorem"], "T3");
    assert_eq!(v["beta_hat"].as_array().unwrap().len(), 12);
    let lambda = v["lambda"].as_f64().unwrap();
    let bx = v["lambda_rule"]["inputs"]["bx"].as_f64().unwrap();
    let by = v["lambda_rule"]["inputs"]["by"].as_f64().unwrap();
    let inputs = BoundInputs::new(bx, by, 40, 240, 12, 0.1).unwrap();
    assert_eq!(lambda, tuning::lambda_semisup_misspec(&inputs).unwrap());

    let second = pllasso(&args);
    assert_eq!(first.stdout, second.stdout);

    let ws = json(&pllasso(&[
        "fit",
        "--dataset",
        d,
        "--lambda",
        "auto",
        "--well-specified",
    ]));
    assert_eq!(ws["lambda_rule"]["theorem"], "T2_a");
}

#[test]
fn fit_explicit_lambda_and_output_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dataset(dir.path());
    let out = dir.path().join("fit.json");
    let o = pllasso(&[
        "fit",
        "--dataset",
        d.to_str().unwrap(),
        "--variant",
        "transductive",
        "--lambda",
        "0.02",
        "--output",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["lambda"].as_f64(), Some(0.02));
    assert!(v["lambda_rule"].is_null());
    let support: Vec<u64> = v["support"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_u64().unwrap())
        .collect();
    assert!(!support.is_empty());
    assert!(support.iter().all(|&j| (1..=12).contains(&j)));
    let beta = v["beta_hat"].as_array().unwrap();
    for j in support {
        assert_ne!(beta[j as usize - 1].as_f64(), Some(0.0));
    }
    let names: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert_eq!(names.len(), 2, "{names:?}");
}

#[test]
fn fit_transductive_auto_explains_rule() {
    let dir = tempfile::tempdir().unwrap();
    let d = dataset(dir.path());
    let o = pllasso(&[
        "fit",
        "--dataset",
        d.to_str().unwrap(),
        "--variant",
        "transductive",
        "--lambda",
        "auto",
        "--explain",
    ]);
    let err = stderr(&o);
    let v = json(&o);
    assert_eq!(v["lambda_rule"]["theorem"], "T1");
    assert!(err.contains("T1") && err.contains("inferred"), "{err}");
}

#[test]
fn fit_known_sigma_reads_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let d = dataset(dir.path());
    let sigma = DesignSpec::shared(12, 4).unwrap().population_covariance();
    let rows: Vec<String> = sigma
        .matrix()
        .row_iter()
        .map(|r| {
            r.iter()
                .map(|x| format!("{x}"))
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect();
    let s = dir.path().join("sigma.csv");
    std::fs::write(&s, rows.join("\n")).unwrap();
    let v = json(&pllasso(&[
        "fit",
        "--dataset",
        d.to_str().unwrap(),
        "--variant",
        "known_sigma",
        "--sigma",
        s.to_str().unwrap(),
        "--lambda",
        "0.05",
    ]));
    assert_eq!(v["variant"], "known_sigma");
}

#[test]
fn fit_rejections() {
    let dir = tempfile::tempdir().unwrap();
    let d = dataset(dir.path());
    let d = d.to_str().unwrap();
    let cases: [(&[&str], &str); 6] = [
        (
            &["fit", "--dataset", "/no/such.csv", "--lambda", "1"],
            "--dataset",
        ),
        (&["fit", "--dataset", d, "--lambda", "-1"], "--lambda"),
        (
            &[
                "fit",
                "--dataset",
                d,
                "--variant",
                "supervised",
                "--lambda",
                "auto",
            ],
            "--lambda",
        ),
        (
            &["fit", "--dataset", d, "--variant", "ridge", "--lambda", "1"],
            "--variant",
        ),
        (
            &[
                "fit",
                "--dataset",
                d,
                "--lambda",
                "1",
                "--output",
                "/no/such/dir/o.json",
            ],
            "--output",
        ),
        (
            &["fit", "--dataset", d, "--lambda", "1", "--bx", "0.01"],
            "--bx",
        ),
    ];
    for (args, flag) in cases {
        let o = pllasso(args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        assert!(stderr(&o).contains(flag), "{args:?}: {}", stderr(&o));
        assert!(o.stdout.is_empty());
    }
}

#[test]
fn constants_on_identity() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("eye.csv");
    std::fs::write(&m, "1,0,0,0\n0,1,0,0\n0,0,1,0\n0,0,0,1\n").unwrap();
    let v = json(&pllasso(&[
        "constants",
        "--matrix",
        m.to_str().unwrap(),
        "--support",
        "2,4",
        "--c",
        "3",
    ]));
    let reports = v.as_array().unwrap();
    assert_eq!(reports.len(), 3);
    for r in reports {
        assert!((r["value"].as_f64().unwrap() - 1.0).abs() < 1e-9, "{r}");
        assert_eq!(r["support"], serde_json::json!([2, 4]));
    }

    let v = json(&pllasso(&[
        "constants",
        "--matrix",
        m.to_str().unwrap(),
        "--sparsity",
        "2",
        "--kind",
        "re",
    ]));
    assert!((v["value"].as_f64().unwrap() - 1.0).abs() < 1e-9);

    let o = pllasso(&[
        "constants",
        "--matrix",
        m.to_str().unwrap(),
        "--support",
        "0,5",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--support"));
}

#[test]
fn constants_from_dataset_scope() {
    let dir = tempfile::tempdir().unwrap();
    let d = dataset(dir.path());
    let v = json(&pllasso(&[
        "constants",
        "--dataset",
        d.to_str().unwrap(),
        "--scope",
        "unlabeled",
        "--support",
        "1,2",
        "--kind",
        "compatibility",
    ]));
    assert_eq!(v["kind"], "compatibility");
    assert_eq!(v["certification"], "exact_enumeration");
    assert!(v["value"].as_f64().unwrap() > 0.0);
}

#[test]
fn simulate_is_independent_of_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("t3.toml");
    let one = pllasso(&["simulate", "--config", &cfg, "--trials", "6", "--jobs", "1"]);
    let three = pllasso(&["simulate", "--config", &cfg, "--trials", "6", "--jobs", "3"]);
    assert!(one.status.success(), "{}", stderr(&one));
    assert_eq!(one.stdout, three.stdout);
    let v = json(&one);
    assert_eq!(v["trials"], 6);

    let csv = dir.path().join("trials.csv");
    let out = dir.path().join("report.json");
    let o = pllasso(&[
        "simulate",
        "--config",
        &cfg,
        "--trials",
        "6",
        "--csv",
        csv.to_str().unwrap(),
        "--output",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert_eq!(
        std::fs::read(&out).unwrap(),
        [one.stdout.as_slice()].concat()
    );
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 7);
    assert!(text.starts_with("trial_index,"));
}

#[test]
fn verify_t1_passes() {
    let o = pllasso(&["verify", "--config", &config("t1.toml")]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v = json(&o);
    assert_eq!(v["pass"], true);
    assert_eq!(v["trials"], 200);
}

#[test]
fn verify_exit_status_follows_pass_flag() {
    let o = pllasso(&[
        "verify",
        "--config",
        &config("concentration.toml"),
        "--trials",
        "60",
    ]);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["pass"], false);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_errors_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(
        &bad,
        "theorem = \"t1\"\np = 5\nn = 10\nN = 40\ntrails = 3\n",
    )
    .unwrap();
    let o = pllasso(&["simulate", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("--config") && err.contains("trails"), "{err}");

    let o = pllasso(&["verify", "--config", &config("t1.toml"), "--jobs", "0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--jobs"));
}
