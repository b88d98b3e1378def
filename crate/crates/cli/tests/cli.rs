use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn fastdp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fastdp")).args(args).output().expect("binary runs")
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn generated_data_round_trips_between_formats() {
    let dir = tempfile::tempdir().unwrap();
    let (csv, bin) = (path(dir.path(), "x.csv"), path(dir.path(), "x.bin"));
    for (file, format) in [(&csv, "csv"), (&bin, "bin")] {
        let out = fastdp(&["gen", "--n", "50", "--d", "3", "--seed", "4", "--mean", "1,-2,3", "--output", file, "--format", format]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let bytes = std::fs::read(&bin).unwrap();
    assert_eq!(&bytes[..4], b"DPME");
    assert_eq!(bytes.len(), 24 + 50 * 3 * 8);
    let from_csv = fastdp::io::read_dataset(Path::new(&csv), None).unwrap();
    let from_bin = fastdp::io::read_dataset(Path::new(&bin), None).unwrap();
    assert_eq!(from_csv, from_bin);
}

#[test]
fn estimate_below_gate_reports_fail_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let input = path(dir.path(), "x.csv");
    assert!(fastdp(&["gen", "--n", "200", "--d", "2", "--output", &input]).status.success());
    for cmd in ["estimate-mean", "estimate-cov", "learn-gaussian"] {
        let out = fastdp(&[cmd, "--input", &input, "--eps", "0.5", "--delta", "1e-6", "--lambda0", "6"]);
        assert_eq!(out.status.code(), Some(0), "{cmd}");
        let v = json(&out);
        assert_eq!(v["outcome"], "fail");
        assert!(v["estimate"].is_null());
        for key in ["config", "score1", "score2", "privacy_spent", "timing_ms"] {
            assert!(v.get(key).is_some(), "{cmd} lacks {key}");
        }
        assert_eq!(v["config"]["lambda0"], 6.0);
    }
    let v = json(&fastdp(&["learn-gaussian", "--input", &input, "--eps", "0.5", "--delta", "1e-6"]));
    assert_eq!(v["privacy_spent"]["eps"], 1.0);
}

#[test]
fn concentrated_input_releases_a_mean() {
    let dir = tempfile::tempdir().unwrap();
    let (input, output) = (path(dir.path(), "x.bin"), path(dir.path(), "out.json"));
    let make = ["gen", "--n", "84000", "--d", "2", "--distribution", "scaled-bernoulli", "--mean", "5,-3"];
    assert!(fastdp(&[&make[..], &["--format", "bin", "--output", &input]].concat()).status.success());
    let out = fastdp(&["estimate-mean", "--input", &input, "--eps", "1", "--delta", "0.1", "--lambda0", "12", "--seed", "3", "--output", &output]);
    assert!(out.status.success());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&output).unwrap()).unwrap();
    assert_eq!(v["outcome"], "pass");
    assert_eq!((v["score1"].as_u64(), v["score2"].as_u64()), (Some(0), Some(0)));
    let est: Vec<f64> = serde_json::from_value(v["estimate"].clone()).unwrap();
    assert!((est[0] - 5.0).abs() < 0.1 && (est[1] + 3.0).abs() < 0.1, "{est:?}");
}

#[test]
fn bad_input_exits_two_and_bad_parameters_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let bad = path(dir.path(), "bad.csv");
    std::fs::write(&bad, "1,2\n3\n").unwrap();
    assert_eq!(fastdp(&["estimate-mean", "--input", &bad]).status.code(), Some(2));
    assert_eq!(fastdp(&["estimate-mean", "--input", &path(dir.path(), "missing.csv")]).status.code(), Some(2));
    let good = path(dir.path(), "good.csv");
    std::fs::write(&good, "1,2\n3,4\n5,7\n").unwrap();
    assert_eq!(fastdp(&["estimate-mean", "--input", &good, "--eps", "1.5"]).status.code(), Some(3));
    assert_eq!(fastdp(&["estimate-cov", "--input", &good, "--delta", "0.5"]).status.code(), Some(3));
    assert_eq!(fastdp(&["learn-gaussian", "--input", &good, "--lambda0", "0.5"]).status.code(), Some(3));
}

#[test]
fn experiment_subcommands_emit_json() {
    let v = json(&fastdp(&["calibrate-ptr", "--trials", "2000"]));
    assert_eq!(v["rates_passed"], true);
    let v = json(&fastdp(&["bench", "--n", "400", "--d", "3", "--k", "3", "--lambda0", "6", "--outliers", "4", "--verify"]));
    assert_eq!(v["sets_match"], true);
    let v = json(&fastdp(&["audit-stability", "--n", "400", "--d", "2", "--pairs", "6", "--eps", "1", "--delta", "0.1", "--lambda0", "6"]));
    assert_eq!(v["records"].as_array().unwrap().len(), 6);
    let v = json(&fastdp(&["sweep-accuracy", "--d", "2", "--ns", "100,200", "--trials", "2", "--delta", "0.01"]));
    assert_eq!(v["cells"].as_array().unwrap().len(), 2);
}
