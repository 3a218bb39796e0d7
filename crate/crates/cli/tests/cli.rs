use std::path::Path;
use std::process::{Command, Output};

use vsdr::io::write_activations;
use vsdr::mixture::ActivationDataset;

fn vsdr(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vsdr"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn stderr_json(o: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&o.stderr);
    let line = text.lines().find(|l| l.starts_with('{')).unwrap_or_else(|| panic!("no json line in {text}"));
    serde_json::from_str(line).unwrap()
}

#[test]
fn fit_gmm_on_an_activation_file_writes_the_mixture() {
    let dir = tempfile::tempdir().unwrap();
    let rows: Vec<Vec<f64>> = (0..60).map(|i| vec![if i % 2 == 0 { -3.0 } else { 3.0 } + 0.01 * i as f64, 0.5]).collect();
    let file = dir.path().join("acts.txt");
    write_activations(&file, &ActivationDataset::from_rows("fc0", &rows).unwrap()).unwrap();

    let out = dir.path().join("out");
    let o = vsdr(&out, &["fit-gmm", "--layer", "fc0", "--components", "2", "--activations", file.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let gmm = out.join("cache/adhoc/fc0/gmm_2.json");
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&gmm).unwrap()).unwrap();
    assert_eq!(json["weights"].as_array().unwrap().len(), 2);
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), gmm.display().to_string());
}

#[test]
fn report_before_combine_fails_with_a_json_line() {
    let dir = tempfile::tempdir().unwrap();
    let o = vsdr(dir.path(), &["report", "--preset", "minimal"]);
    assert!(!o.status.success());
    let err = stderr_json(&o);
    assert_eq!(err["stage"], "report");
    assert!(err["error"].as_str().unwrap().contains("scores/index.csv"), "{err}");
}

#[test]
fn missing_activation_file_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let o = vsdr(dir.path(), &["fit-gmm", "--layer", "fc0", "--components", "2", "--activations", "nope.txt"]);
    assert!(!o.status.success());
    assert!(stderr_json(&o)["error"].as_str().unwrap().contains("nope.txt"));
}

#[test]
fn unknown_flags_and_presets_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = vsdr(dir.path(), &["pipeline", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["stage"], "args");

    let o = vsdr(dir.path(), &["train", "--preset", "nope"]);
    assert!(!o.status.success());
    assert!(stderr_json(&o)["error"].as_str().unwrap().contains("unknown preset"));

    // Activations without a layer is an argument error.
    let o = vsdr(dir.path(), &["fit-gmm", "--activations", "x.txt"]);
    assert_eq!(o.status.code(), Some(2));
}
