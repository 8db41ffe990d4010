use std::path::Path;
use std::process::{Command, Output};

fn worp(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_worp"))
        .arg("--out-dir")
        .arg(dir)
        .args(args)
        .output()
        .expect("spawn worp");
    assert!(
        out.status.success(),
        "worp {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn generate_calibrate_sample_estimate() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    worp(d, &["generate", "--dist", "zipf", "--alpha", "1", "--n", "500", "--scale", "1000", "--updates", "3", "--out", "in.csv"]);
    let input = d.join("in.csv");
    assert!(std::fs::read_to_string(&input).unwrap().lines().count() >= 500);

    let cal = worp(d, &["calibrate", "--n", "500", "--k", "11", "--rho", "2", "--trials", "10000", "--out", "cal.json"]);
    assert!(String::from_utf8_lossy(&cal.stdout).contains("psi="));

    let cal_path = d.join("cal.json");
    let (inp, calp) = (input.to_str().unwrap(), cal_path.to_str().unwrap());
    worp(d, &["sample", "--input", inp, "--k", "10", "--p", "1", "--cal", calp, "--width", "310", "--out", "s2.json"]);
    worp(d, &["sample", "--input", inp, "--passes", "1", "--k", "10", "--p", "1", "--cal", calp, "--width", "310", "--out", "s1.json"]);
    for name in ["s1.json", "s2.json"] {
        let s: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join(name)).unwrap()).unwrap();
        assert_eq!(s["entries"].as_array().unwrap().len(), 10);
    }

    let s2 = d.join("s2.json");
    let est = worp(d, &["estimate", "--sample", s2.to_str().unwrap(), "--stat", "p2", "--out", "est.json", "--per-key", "keys.csv"]);
    let value: f64 = String::from_utf8_lossy(&est.stdout).trim().parse().unwrap();
    assert!(value > 0.0);
    let keys = std::fs::read_to_string(d.join("keys.csv")).unwrap();
    assert!(keys.starts_with("key,frequency,inclusion_prob,contribution"));
    assert_eq!(keys.lines().count(), 11);
}

#[test]
fn sampling_is_deterministic_under_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    worp(d, &["generate", "--n", "300", "--out", "in.csv"]);
    let input = d.join("in.csv");
    let inp = input.to_str().unwrap();
    let args = |out: &'static str| ["--seed", "9", "sample", "--input", inp, "--k", "5", "--rows", "7", "--width", "512", "--b", "4", "--out", out];
    worp(d, &args("a.json"));
    worp(d, &args("b.json"));
    assert_eq!(std::fs::read(d.join("a.json")).unwrap(), std::fs::read(d.join("b.json")).unwrap());
}

#[test]
fn tvd_sample_writes_distribution() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    worp(d, &["generate", "--dist", "uniform", "--n", "6", "--out", "in.csv"]);
    let input = d.join("in.csv");
    let out = worp(d, &["tvd-sample", "--input", input.to_str().unwrap(), "--k", "2", "--runs", "2000", "--out", "tvd.csv"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    let tv: f64 = stdout.split("tv=").nth(1).unwrap().trim().parse().unwrap();
    assert!(tv < 0.1, "{stdout}");
    let csv = std::fs::read_to_string(d.join("tvd.csv")).unwrap();
    assert!(csv.starts_with("set,count,empirical,exact"));
    assert_eq!(csv.lines().count(), 1 + 15);
}

#[test]
fn bench_small_writes_csvs() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out = worp(d, &["bench", "--preset", "small", "--runs", "3", "--pipelines", "perfectWR,perfectWOR,worp2", "--cal-trials", "10000"]);
    assert_eq!(String::from_utf8_lossy(&out.stdout).matches("row ").count(), 5);
    let nrmse = std::fs::read_to_string(d.join("l1_zipf2_nu1_nrmse.csv")).unwrap();
    assert!(nrmse.starts_with("pipeline,statistic,truth,nrmse,runs,failures"));
    assert_eq!(nrmse.lines().count(), 4);
    for suffix in ["effective_size.csv", "rank_frequency.csv", "events.csv", "timing.json"] {
        assert!(d.join(format!("l2_zipf2_nu3_{suffix}")).exists(), "{suffix}");
    }
}

#[test]
fn bad_arguments_fail_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_worp"))
        .args(["--out-dir", tmp.path().to_str().unwrap(), "calibrate", "--n", "100", "--k", "5", "--delta", "0.01", "--trials", "10", "--out", "c.json"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("calibration"));
}
