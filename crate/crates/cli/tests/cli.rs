use std::fs;
use std::path::{Path, PathBuf};

use quadri_cli::{run, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_NUMERICAL, EXIT_OK};
use quadri_core::combiner::SpectrumResult;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn quadri(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> i32 {
    let mut argv = vec![
        "quadri".to_string(),
        cmd.to_string(),
        "--config".into(),
        config.display().to_string(),
        "--out".into(),
        out.display().to_string(),
    ];
    argv.extend(extra.iter().map(|s| s.to_string()));
    run(argv)
}

fn edited_fixture(dir: &Path, name: &str, edits: &[(&str, &str)]) -> PathBuf {
    let mut text = fs::read_to_string(fixture(name)).unwrap();
    for (from, to) in edits {
        assert!(text.contains(from), "{from} not in {name}");
        text = text.replacen(from, to, 1);
    }
    let path = dir.join(format!("edited_{name}"));
    fs::write(&path, text).unwrap();
    path
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn symmetric_spectrum_has_equal_weights() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(quadri("spectrum", &fixture("symmetric.toml"), dir.path(), &[]), EXIT_OK);
    let doc: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("spectrum.json")).unwrap()).unwrap();
    for w in doc["result"]["weights"].as_array().unwrap() {
        assert_eq!(format!("{:.12}", w.as_f64().unwrap()), "0.333333333333");
    }
    let result: SpectrumResult = serde_json::from_value(doc["result"].clone()).unwrap();
    result.validate().unwrap();
}

#[test]
fn compare_agrees_on_the_ten_lineage_fixture() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(quadri("compare", &fixture("lineage_n10.toml"), dir.path(), &[]), EXIT_OK);
    let rows = csv_rows(&dir.path().join("compare.csv"));
    assert!(rows.iter().any(|r| r[0] == "P[M=10]" && r[1] == "1"));
    for r in &rows {
        let z: f64 = r[5].parse().unwrap();
        assert!(z.abs() <= 4.0, "{r:?}");
    }
}

#[test]
fn invalid_config_exits_2_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let bad = edited_fixture(dir.path(), "symmetric.toml", &[("n = 3", "n = 4")]);
    assert_eq!(quadri("spectrum", &bad, &out, &[]), EXIT_CONFIG);
    assert!(!out.exists());

    let unknown = edited_fixture(dir.path(), "asymmetric.toml", &[("[oracle]", "[oracle]\nthreads = 2")]);
    assert_eq!(quadri("spectrum", &unknown, &out, &[]), EXIT_CONFIG);
    assert_eq!(quadri("spectrum", &dir.path().join("missing.toml"), &out, &[]), EXIT_CONFIG);
    assert_eq!(quadri("compare", &fixture("symmetric.toml"), &out, &["--replicates", "10"]), EXIT_CONFIG);
    assert_eq!(run(["quadri", "frobnicate"]), EXIT_CONFIG);
    assert!(!out.exists());
    assert_eq!(run(["quadri", "--help"]), EXIT_OK);
}

#[test]
fn impossible_conditioning_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let zero = edited_fixture(dir.path(), "symmetric.toml", &[("divergence_time = 600.0", "divergence_time = 0.0")]);
    assert_eq!(quadri("times", &zero, &out, &[]), EXIT_INFEASIBLE);
    let short = edited_fixture(
        dir.path(),
        "lineage_n10.toml",
        &[("divergence_time = 700.0", "divergence_time = 5.0"), ("m = 3", "m = 1"), ("m = 2", "m = 1")],
    );
    assert_eq!(quadri("compare", &short, &out, &["--replicates", "2000"]), EXIT_INFEASIBLE);
    assert!(!out.exists());
}

#[test]
fn unattainable_tolerance_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(quadri("times", &fixture("lineage_n10.toml"), &out, &["--tolerance", "1e-300"]), EXIT_NUMERICAL);
    assert!(!out.exists());
}

#[test]
fn outputs_are_byte_stable_across_threads() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let cfg = fixture("asymmetric.toml");
    for cmd in ["spectrum", "times", "lineage-prob"] {
        assert_eq!(quadri(cmd, &cfg, &a, &["--threads", "1"]), EXIT_OK);
        assert_eq!(quadri(cmd, &cfg, &b, &["--threads", "3"]), EXIT_OK);
    }
    assert_eq!(quadri("simulate", &cfg, &a, &["--threads", "1", "--replicate-csv"]), EXIT_OK);
    assert_eq!(quadri("simulate", &cfg, &b, &["--threads", "4", "--replicate-csv"]), EXIT_OK);
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 10);
    for n in names {
        assert_eq!(fs::read(a.join(&n)).unwrap(), fs::read(b.join(&n)).unwrap(), "{n:?}");
    }
}

#[test]
fn seed_and_replicate_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture("symmetric.toml");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(quadri("simulate", &cfg, &a, &["--replicates", "3000", "--replicate-csv"]), EXIT_OK);
    assert_eq!(quadri("simulate", &cfg, &b, &["--replicates", "3000", "--replicate-csv", "--seed", "8"]), EXIT_OK);
    let rows = csv_rows(&a.join("replicates.csv"));
    assert_eq!(rows.len(), 3000);
    assert_eq!(rows[2999][0], "2999");
    assert_ne!(fs::read(a.join("replicates.csv")).unwrap(), fs::read(b.join("replicates.csv")).unwrap());
    let doc: serde_json::Value = serde_json::from_slice(&fs::read(b.join("simulate.json")).unwrap()).unwrap();
    assert_eq!(doc["seed"], 8);
    let total: u64 = doc["estimate"]["configurations"].as_array().unwrap().iter().map(|c| c["hits"].as_u64().unwrap()).sum();
    assert_eq!(total, 3000);
}

#[test]
fn lineage_table_rows_sum_to_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(quadri("lineage-prob", &fixture("lineage_n10.toml"), dir.path(), &[]), EXIT_OK);
    let rows = csv_rows(&dir.path().join("lineage_prob.csv"));
    assert_eq!(rows.len(), 10 + 7 + 7);
    for model in ["1", "2", "3"] {
        let total: f64 = rows.iter().filter(|r| r[0] == model).map(|r| r[3].parse::<f64>().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-10);
    }
}

#[test]
fn normalization_set_adds_a_normalized_value() {
    let dir = tempfile::tempdir().unwrap();
    let pops = "[[combiner.normalize.population]]\nn = 3\nancestral = 2\nderived = 1\nm = 2\n";
    let extra = format!("\n[[combiner.normalize]]\n{pops}{pops}{pops}\n[[combiner.normalize]]\n{}{pops}{pops}", pops.replace("ancestral = 2\nderived = 1", "ancestral = 1\nderived = 2"));
    let path = dir.path().join("norm.toml");
    fs::write(&path, fs::read_to_string(fixture("symmetric.toml")).unwrap() + &extra).unwrap();
    assert_eq!(quadri("spectrum", &path, dir.path(), &[]), EXIT_OK);
    let doc: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("spectrum.json")).unwrap()).unwrap();
    let v = doc["result"]["normalized"].as_f64().unwrap();
    assert!(v > 0.0 && v < 1.0, "{v}");
}
