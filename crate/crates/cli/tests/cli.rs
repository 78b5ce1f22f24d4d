use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use succinct::image::Image;
use succinct::io::save_png16;

fn succinct(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_succinct")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&succinct(&[])), 1);
    assert_eq!(code(&succinct(&["eval"])), 1);
    assert_eq!(code(&succinct(&["--threads", "0", "report", "x.json"])), 1);
    assert_eq!(code(&succinct(&["score", "a.png", "--out", "b.png", "--detector", "bogus"])), 2);
    assert_eq!(code(&succinct(&["--help"])), 0);
}

#[test]
fn missing_data_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = succinct(&["eval", "--dataset", path(&dir.path().join("nothing"))]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn synth_eval_report_and_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("seq");
    let out = succinct(&["--seed", "3", "synth", "--preset", "training", "--frames", "5", "--out", path(&data)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(data.join("poses.txt").exists());

    let report = dir.path().join("report");
    let out = succinct(&[
        "eval", "--dataset", path(&data), "--n-max", "60", "--l", "4", "--k-sweep", "6,10", "--out", path(&report),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("AUC-60"));
    for f in ["report.json", "succinctness.csv", "rotation_error.dat", "k_sweep.csv"] {
        assert!(report.join(f).exists(), "{f}");
    }
    let out = succinct(&["report", path(&report.join("report.json"))]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("detector harris"));

    let pairs = dir.path().join("pairs.csv");
    let out = succinct(&["make-pairs", "--dataset", path(&data), "--count", "3", "--out", path(&pairs)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(fs::read_to_string(&pairs).unwrap().starts_with("idx0,idx1,overlap"));

    let ckpt = dir.path().join("net.ckpt");
    let out = succinct(&[
        "train", "--dataset", path(&data), "--pairs", path(&pairs), "--iters", "2", "--out", path(&ckpt),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(ckpt.exists());

    let out = succinct(&[
        "extract", path(&data.join("images/000000.png")), "--detector", "network", "--checkpoint", path(&ckpt), "--n", "5",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let points: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(points.as_array().unwrap().len(), 5);
}

#[test]
fn loss_reproduces_hand_example() {
    let dir = tempfile::tempdir().unwrap();
    let scores = [0.9, 0.7, 0.6, 0.3, 0.2, 0.0, 0.0, 0.0];
    let score = Image::<f32>::from_fn(8, 1, |x, _| scores[x]);
    save_png16(&score, dir.path().join("score.png")).unwrap();
    fs::write(dir.path().join("p0.csv"), "x,y,score\n0,0,0.9\n1,0,0.7\n2,0,0.6\n3,0,0.3\n4,0,0.2\n").unwrap();
    fs::write(dir.path().join("p1.csv"), "0,0,0.95\n1,0,0.85\n2,0,0.75\n3,0,0.65\n4,0,0.55\n").unwrap();
    fs::write(dir.path().join("labels.csv"), "idx0,idx1,label\n0,0,inlier\n1,3,inlier\n2,1,outlier\n4,2,outlier\n").unwrap();
    let d = |f: &str| dir.path().join(f).to_str().unwrap().to_string();
    let out = Command::new(env!("CARGO_BIN_EXE_succinct"))
        .args(["loss", "--score", &d("score.png"), "--points", &d("p0.csv"), "--other-points", &d("p1.csv")])
        .args(["--labels", &d("labels.csv")])
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let total = v["total"].as_f64().unwrap();
    assert!((total - 0.38).abs() < 1e-4, "{total}");
    assert_eq!(v["num_inliers"], 2);
    assert_eq!(v["num_outliers"], 2);

    fs::write(dir.path().join("bad.csv"), "0,9,inlier\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_succinct"))
        .args(["loss", "--score", &d("score.png"), "--points", &d("p0.csv"), "--other-points", &d("p1.csv")])
        .args(["--labels", &d("bad.csv")])
        .output()
        .unwrap();
    assert_eq!(code(&out), 1);
}
