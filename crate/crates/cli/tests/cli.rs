use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dpcox(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpcox"))
        .args(args)
        .env_remove("DPCOX_OUT")
        .output()
        .expect("run dpcox")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn dir_contents(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

#[test]
fn fit_lung_flags_three_variables() {
    let o = dpcox(&["fit", "--dataset", "lung"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("3/7 (sex, ph.ecog, ph.karno)"), "{text}");
    assert!(text.contains("C-index"));
}

#[test]
fn fit_pbc_json_is_a_cox_fit() {
    let o = dpcox(&["fit", "--dataset", "pbc", "--json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let text = v.to_string();
    for key in ["beta", "se", "p_value", "hr", "converged"] {
        assert!(text.contains(&format!("\"{key}\"")), "missing {key}");
    }
}

#[test]
fn unknown_dataset_lists_registry() {
    let o = dpcox(&["fit", "--dataset", "nosuch"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    for name in ["lung", "pbc", "colon", "rotterdam", "flchain"] {
        assert!(err.contains(name), "{err}");
    }
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(dpcox(&["fit"]).status.code(), Some(1));
    assert_eq!(dpcox(&["simulate", "--dataset", "lung", "--eps", "zero"]).status.code(), Some(1));
    assert_eq!(dpcox(&["simulate", "--dataset", "lung", "--eps", "1", "--iters", "0"]).status.code(), Some(1));
}

#[test]
fn simulate_is_deterministic_across_runs_and_workers() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |name: &str, workers: &str| {
        let out = tmp.path().join(name);
        let o = dpcox(&[
            "simulate", "--dataset", "lung", "--method", "phase1", "--eps", "1", "--iters", "50", "--seed", "42",
            "--workers", workers, "--out", out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stderr(&o).contains("[1/1]"));
        dir_contents(&out)
    };
    let a = run("a", "1");
    let b = run("b", "1");
    let c = run("c", "8");
    assert!(a.contains_key("manifest.json"));
    assert!(a.contains_key("records_lung_phase1.csv"));
    assert_eq!(a, b);
    assert_eq!(a, c);
}

#[test]
fn eps_all_expands_to_grid_and_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = dpcox(&[
        "simulate", "--dataset", "lung", "--method", "phase1", "--eps", "all", "--iters", "2",
        "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(out.join("records_lung_phase1.csv")).unwrap();
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let col = rdr.headers().unwrap().iter().position(|h| h == "epsilon").unwrap();
    let mut eps: Vec<String> = rdr.records().map(|r| r.unwrap()[col].to_string()).collect();
    eps.dedup();
    assert_eq!(eps.len(), 15);
    assert_eq!(eps.last().unwrap(), "inf");

    let o = dpcox(&["thresholds", "--records", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = stdout(&o);
    assert!(table.starts_with("dataset,phase,eps_dc05,eps_lsr50,eps_lsr10,eps_fpr10"));
    assert!(table.contains("lung,Phase 1,"));

    let o = dpcox(&["summarize", "--records", out.to_str().unwrap(), "--json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let sums: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(sums.as_array().unwrap().len(), 15);

    // the report is rebuilt from the record files alone
    let report = tmp.path().join("report");
    let o = dpcox(&["report", "--records", out.to_str().unwrap(), "--out", report.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let files = dir_contents(&report);
    for f in ["summary.csv", "fig1_lsr.csv", "fig2_cindex.csv", "thresholds.csv"] {
        assert!(files.contains_key(f), "missing {f}");
    }
}

#[test]
fn partial_grid_is_incomplete() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = dpcox(&[
        "simulate", "--dataset", "lung", "--method", "phase1", "--eps", "1,10,inf", "--iters", "2",
        "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = dpcox(&["thresholds", "--records", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("eps=0.1") && err.contains("eps=1000"), "{err}");
    assert!(!err.contains("eps=10,") && !err.contains("eps=inf"), "{err}");
}

#[test]
fn perturb_writes_release_with_sidecar() {
    let tmp = tempfile::tempdir().unwrap();
    let csv_path = tmp.path().join("lung_p1.csv");
    let o = dpcox(&[
        "perturb", "--dataset", "lung", "--method", "phase1", "--eps", "5", "--out", csv_path.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(csv_path.with_extension("json").exists());
    // the released file can be fitted by path
    let o = dpcox(&["fit", "--dataset", csv_path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));

    let o = dpcox(&["perturb", "--dataset", "lung", "--method", "output", "--eps", "inf"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let fit: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(fit["beta"].is_array());
}
