use std::fs;
use std::path::Path;
use std::process::Command;

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_landau-dpp");

fn run(config: &str, out: &Path, extra: &[&str]) -> std::process::Output {
    let cfg = out.with_extension("toml");
    fs::write(&cfg, config).unwrap();
    Command::new(BIN)
        .arg("--config")
        .arg(&cfg)
        .arg("--output")
        .arg(out)
        .args(extra)
        .env_remove("LANDAU_DPP_OUTPUT")
        .output()
        .unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

// cos² bump with amplitude √32/π has ∫|∇f|² = 4π for any radius
const PREDICT: &str = r#"
mode = "predict"

[model]
n = 1
a = [1.0]

[window]
alpha = 0.0
beta = 2.0

[flat]
box_radius = 8.0
step = 0.25
p = [4, 64]
exact = false

[stats]
f = "cosine-bump"
params = [1.8006326323142121, 1.5]
"#;

#[test]
fn predict_reports_unit_variance() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("predict");
    let o = run(PREDICT, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = read_json(&out.join("predict.json"));
    assert_eq!(v["config_sha256"].as_str().unwrap().len(), 64);
    for rec in v["records"].as_array().unwrap() {
        let pv = rec["predicted_variance"].as_f64().unwrap();
        assert!((pv - 1.0).abs() < 1e-7, "{pv}");
    }
}

const SPECTRUM: &str = r#"
mode = "torus-spectrum"

[torus]
m = 32
p = [4]
"#;

#[test]
fn torus_spectrum_lowest_cluster_holds_p_states() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("spec");
    let o = run(SPECTRUM, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = read_json(&out.join("torus_spectrum.json"));
    assert_eq!(v["records"][0]["lowest_cluster_count"], 4);
    assert_eq!(v["records"][0]["n_states"], 4);
    let csv = fs::read_to_string(out.join("spectrum_M32_p4.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# config_sha256="));
    assert_eq!(lines.next().unwrap(), "index,eigenvalue,assigned_k,deviation");
    let lowest = lines.filter(|l| l.split(',').nth(2) == Some("0")).count();
    assert_eq!(lowest, 4);
}

const ENSEMBLE: &str = r#"
mode = "torus-ensemble"

[torus]
m = 16
p = [3]

[stats]
f = "periodic-cosine"
params = [1.0, 1.2]
n_samples = 50
base_seed = 7
"#;

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_name() != "metadata.json")
        .map(|e| (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(run(ENSEMBLE, &a, &[]).status.success());
    assert!(run(ENSEMBLE, &b, &["--jobs", "1"]).status.success());
    let (ta, tb) = (tree(&a), tree(&b));
    assert!(ta.len() >= 3);
    assert_eq!(ta, tb);
    assert!(a.join("metadata.json").exists());
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(run(ENSEMBLE, &a, &[]).status.success());
    assert!(run(ENSEMBLE, &b, &["--seed", "8"]).status.success());
    let sa = fs::read_to_string(a.join("samples_M16_p3.csv")).unwrap();
    let sb = fs::read_to_string(b.join("samples_M16_p3.csv")).unwrap();
    assert!(sa.starts_with("# config_sha256=") && sa.lines().next().unwrap().ends_with("seed=7"));
    assert!(sb.lines().next().unwrap().ends_with("seed=8"));
    assert_ne!(sa.lines().nth(2), sb.lines().nth(2));
    let v = read_json(&b.join("torus_ensemble.json"));
    assert_eq!(v["seed"], 8);
    assert_eq!(v["records"][0]["count_variance"].as_f64(), Some(0.0));
}

#[test]
fn env_var_sets_the_output_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    fs::write(&cfg, SPECTRUM.replace("m = 32\np = [4]", "m = 16\np = [2]")).unwrap();
    let target = tmp.path().join("from_env");
    let o = Command::new(BIN)
        .arg("--config")
        .arg(&cfg)
        .env("LANDAU_DPP_OUTPUT", &target)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(target.join("torus_spectrum.json").exists());
}

#[test]
fn bad_config_exits_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&SPECTRUM.replace("p = [4]", "p = [4]\ncolour = 1"), &tmp.path().join("x"), &[]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("colour"));
    let o = run(&SPECTRUM.replace("p = [4]", "p = [100]"), &tmp.path().join("y"), &[]);
    assert!(!o.status.success());
}

#[test]
fn sample_flat_writes_samples_and_summary() {
    let cfg = r#"
mode = "sample-flat"

[model]
n = 1
a = [1.0]

[window]
alpha = 0.0
beta = 2.0

[flat]
box_radius = 4.0
step = 0.25
p = [4]

[stats]
f = "cosine-bump"
params = [1.0, 1.0]
n_samples = 20
base_seed = 3
"#;
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("flat");
    let o = run(cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = read_json(&out.join("summary_p4.json"));
    assert_eq!(v["n_samples"], 20);
    assert!(v["ks"].is_null());
    let expected = v["expected_count"].as_f64().unwrap();
    assert!((expected - 64.0 / (2.0 * std::f64::consts::PI)).abs() < 1e-6);
    let samples = fs::read_to_string(out.join("samples_p4.csv")).unwrap();
    assert_eq!(samples.lines().nth(1), Some("sample_id,x_1,x_2"));
}
