use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn skewfit(dir: &Path, config: &str, args: &[&str]) -> Output {
    let path = dir.join("run.toml");
    fs::write(&path, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_skewfit"))
        .arg("--config")
        .arg(&path)
        .arg("--quiet")
        .args(args)
        .output()
        .unwrap()
}

const VERIFY: &str = r#"
seed = 3
output_dir = "out"

[verify]
models = ["poisson-1d"]
kinds = ["la"]
random_skewing_functions = 3
ks_draws = 2000
histogram_draws = 10000
"#;

#[test]
fn verify_passes_and_writes_report_relative_to_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = skewfit(dir.path(), VERIFY, &["verify"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/verify.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], true);
    assert!(report["n_checks"].as_u64().unwrap() > 20);
}

#[test]
fn corrupted_factor_fails_verify_with_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let config = VERIFY.replace("kinds = [\"la\"]", "kinds = [\"la\"]\nfactor_offset = 0.05");
    let out = skewfit(dir.path(), &config, &["verify"]);
    assert_eq!(out.status.code(), Some(1));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/verify.json")).unwrap()).unwrap();
    let failed: Vec<&str> = report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["passed"] == false)
        .map(|c| c["suite"].as_str().unwrap())
        .collect();
    assert!(failed.contains(&"divergence-equality"), "{failed:?}");
}

#[test]
fn config_errors_exit_two_and_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let out = skewfit(dir.path(), "seed = 1\n[mcmc]\nn_chains = 1\n", &["compare"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_chains"));

    let out = skewfit(dir.path(), "seed = 1\nsurprise = true\n", &["fit"]);
    assert_eq!(out.status.code(), Some(2));

    let out = skewfit(dir.path(), "output_dir = \"x\"\n", &["fit"]);
    assert_eq!(out.status.code(), Some(2), "a missing seed is a config error");

    let out = skewfit(dir.path(), "seed = 1\n", &["--approx", "la,bogus", "fit"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn missing_dataset_is_reported_against_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let out = skewfit(dir.path(), "seed = 1\n[model]\ndataset = \"nowhere.csv\"\n", &["fit"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.dataset"));
}

#[test]
fn fit_writes_one_artifact_per_approximation() {
    let dir = tempfile::tempdir().unwrap();
    let fits = dir.path().join("fits");
    let out = skewfit(dir.path(), "seed = 1\n", &["--approx", "la,gvb", "--out", fits.to_str().unwrap(), "fit"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let mut names: Vec<String> = fs::read_dir(&fits)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, ["gvb.json", "la.json", "skew-gvb.json", "skew-la.json"]);
}
