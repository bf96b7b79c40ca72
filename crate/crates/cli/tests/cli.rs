use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tcbp::encoder::EncoderModel;

fn tcbp(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tcbp")).args(args).current_dir(dir).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Small two-modality dataset: 60 train and 20 test scenes.
fn dataset(dir: &Path) {
    let out = tcbp(
        &["synth", "--out", "data", "--n-scenes", "60", "--n-test", "20", "--modalities", "A:3,I:5", "--seed", "4"],
        dir,
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

const TINY: &[&str] = &[
    "--manifest",
    "data/manifest.jsonl",
    "--d",
    "16",
    "--reduce",
    "6",
    "--hidden",
    "8",
    "--out-dim",
    "4",
    "--log-every",
    "0",
];

fn train(dir: &Path, out_dir: &str, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--out", out_dir];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    tcbp(&args, dir)
}

#[test]
fn default_synth_reproduces_the_reference_histogram() {
    let dir = tempfile::tempdir().unwrap();
    let out = tcbp(
        &["synth", "--out", "data", "--modalities", "A:2", "--csv", "hist.csv", "--json", "hist.json"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert!(
        text.lines()
            .any(|l| l.split_whitespace().collect::<Vec<_>>() == ["train", "958", "472", "203", "100", "51", "1784"]),
        "{text}"
    );
    let csv = fs::read_to_string(dir.path().join("hist.csv")).unwrap();
    assert_eq!(csv, "split,M=2,M=3,M=4,M=5,M=6,total\ntrain,958,472,203,100,51,1784\n");
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("hist.json")).unwrap()).unwrap();
    assert_eq!(json["histogram"]["train"]["2"], 958);
}

#[test]
fn synth_honours_size_and_count_flags() {
    let dir = tempfile::tempdir().unwrap();
    let out = tcbp(
        &["synth", "--out", "d", "--n-scenes", "100", "--sizes", "2:1.0", "--modalities", "S:3", "--csv", "h.csv"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(
        fs::read_to_string(dir.path().join("h.csv")).unwrap(),
        "split,M=2,M=3,M=4,M=5,M=6,total\ntrain,100,0,0,0,0,100\n"
    );
    let manifest = tcbp::dataio::load_manifest(&dir.path().join("d/manifest.jsonl")).unwrap();
    assert!(manifest.scenes.iter().all(|s| s.clips.len() == 2));
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad_flag = tcbp(&["synth", "--out", "d", "--frobnicate"], dir.path());
    assert_eq!(code(&bad_flag), 2);
    assert!(stderr(&bad_flag).contains("Usage"), "{}", stderr(&bad_flag));
    assert_eq!(code(&tcbp(&["synth", "--out", "d", "--sizes", "2:0.5,3"], dir.path())), 2);
    assert_eq!(code(&tcbp(&["train", "--manifest", "missing.jsonl", "--out", "m"], dir.path())), 2);
    assert_eq!(code(&tcbp(&["gradcheck", "--op", "no_such_op"], dir.path())), 2);
    assert_eq!(code(&tcbp(&["frobnicate"], dir.path())), 2);
}

#[test]
fn zero_learning_rate_keeps_the_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path());
    let init = train(dir.path(), "init", &["--iters", "0"]);
    assert_eq!(code(&init), 0, "{}", stderr(&init));
    let still = train(dir.path(), "still", &["--iters", "5", "--lr", "0"]);
    assert_eq!(code(&still), 0, "{}", stderr(&still));
    let read = |d: &str| fs::read(dir.path().join(d).join("model.ckpt")).unwrap();
    assert_eq!(read("init"), read("still"));
    let moved = train(dir.path(), "moved", &["--iters", "5", "--lr", "0.05"]);
    assert_eq!(code(&moved), 0, "{}", stderr(&moved));
    assert_ne!(read("init"), read("moved"));

    let log = fs::read_to_string(dir.path().join("moved/log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 5);
    let opt: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("moved/optimizer.json")).unwrap()).unwrap();
    assert_eq!(opt["iteration"], 5);
}

#[test]
fn cbp_and_tcbp_train_identically_at_one_segment() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path());
    let run = |method: &str| {
        let out = train(
            dir.path(),
            method,
            &["--method", method, "--t", "1", "--iters", "20", "--lr", "0.05", "--seed", "3"],
        );
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        EncoderModel::load(&dir.path().join(method).join("model.ckpt")).unwrap()
    };
    let (cbp, tcbp) = (run("cbp"), run("tcbp"));
    assert_eq!(cbp.parameter_bytes(), tcbp.parameter_bytes());
    let (a, b) = (cbp.sketch().unwrap(), tcbp.sketch().unwrap());
    assert_eq!((a.h1(), a.h2(), a.s1(), a.s2()), (b.h1(), b.h2(), b.s1(), b.s2()));
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path());
    for (name, threads) in [("one", "1"), ("three", "3")] {
        let out = train(dir.path(), name, &["--iters", "8", "--lr", "0.05", "--negatives", "--threads", threads]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    for file in ["model.ckpt", "optimizer.json", "log.jsonl"] {
        assert_eq!(
            fs::read(dir.path().join("one").join(file)).unwrap(),
            fs::read(dir.path().join("three").join(file)).unwrap()
        );
    }
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path());
    fs::write(dir.path().join("run.conf"), "# tiny run\niters = 3\nlr = 0.05\nseed = 9\n").unwrap();
    let out = train(dir.path(), "m", &["--config", "run.conf", "--iters", "2"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let err = stderr(&out);
    assert!(err.contains("\"iters\":2") && err.contains("\"lr\":0.05") && err.contains("\"seed\":9"), "{err}");
    assert_eq!(fs::read_to_string(dir.path().join("m/log.jsonl")).unwrap().lines().count(), 2);

    fs::write(dir.path().join("bad.conf"), "no_such_key = 1\n").unwrap();
    assert_eq!(code(&train(dir.path(), "m2", &["--config", "bad.conf"])), 2);
}

#[test]
fn order_and_eval_report_every_scene() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path());
    assert_eq!(code(&train(dir.path(), "m", &["--iters", "10", "--lr", "0.05"])), 0);
    let src = ["--checkpoint", "m/model.ckpt", "--manifest", "data/manifest.jsonl"];

    let order = tcbp(&[&["order"], &src[..]].concat(), dir.path());
    assert_eq!(code(&order), 0, "{}", stderr(&order));
    let lines: Vec<serde_json::Value> = stdout(&order).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 20);
    for v in &lines {
        let (mut p, mut g) = (v["predicted"].as_array().unwrap().clone(), v["gt"].as_array().unwrap().clone());
        assert_eq!(v["correct"], p == g);
        p.sort_by_key(|x| x.to_string());
        g.sort_by_key(|x| x.to_string());
        assert_eq!(p, g);
        assert!(v["total_loss"].as_f64().unwrap() >= 0.0);
    }

    let eval = tcbp(&[&["eval"], &src[..], &["--json", "e.json", "--csv", "e.csv"]].concat(), dir.path());
    assert_eq!(code(&eval), 0, "{}", stderr(&eval));
    let correct = lines.iter().filter(|v| v["correct"] == true).count();
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("e.json")).unwrap()).unwrap();
    assert_eq!(json["scenes"], 20);
    assert!((json["accuracy"].as_f64().unwrap() - correct as f64 / 20.0).abs() < 1e-12);
    let csv = fs::read_to_string(dir.path().join("e.csv")).unwrap();
    assert!(csv.lines().nth(2).unwrap().starts_with("random,50.00,16.67"), "{csv}");
}

#[test]
fn eval_prints_the_reference_chance_row() {
    let dir = tempfile::tempdir().unwrap();
    let synth = tcbp(&["synth", "--out", "data", "--modalities", "A:2,S:2"], dir.path());
    assert_eq!(code(&synth), 0, "{}", stderr(&synth));
    let trained = train(dir.path(), "m", &["--iters", "0"]);
    assert_eq!(code(&trained), 0, "{}", stderr(&trained));
    let eval = tcbp(
        &["eval", "--checkpoint", "m/model.ckpt", "--manifest", "data/manifest.jsonl", "--split", "train"],
        dir.path(),
    );
    assert_eq!(code(&eval), 0, "{}", stderr(&eval));
    let text = stdout(&eval);
    let random: Vec<&str> = text.lines().find(|l| l.starts_with("random")).unwrap().split_whitespace().collect();
    assert_eq!(random, ["random", "50.00", "16.67", "4.17", "0.83", "0.14", "31.78"]);
    assert!(text.contains("(chance 31.78%)"), "{text}");
}

#[test]
fn gradcheck_filters_and_detects_faults() {
    let dir = tempfile::tempdir().unwrap();
    let only = tcbp(&["gradcheck", "--op", "tcbp"], dir.path());
    assert_eq!(code(&only), 0, "{}", stderr(&only));
    let rows: Vec<String> = stdout(&only).lines().skip(1).map(String::from).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("tcbp ") && rows[0].ends_with("pass"), "{rows:?}");

    let faulty = tcbp(&["gradcheck", "--op", "tcbp,relu", "--inject-fault", "circ_conv"], dir.path());
    assert_eq!(code(&faulty), 1);
    assert!(stdout(&faulty).lines().any(|l| l.starts_with("tcbp ") && l.ends_with("FAIL")), "{}", stdout(&faulty));
    assert!(stdout(&faulty).lines().any(|l| l.starts_with("relu ") && l.ends_with("pass")));
}

#[test]
fn full_gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = tcbp(&["gradcheck", "--json", "g.json"], dir.path());
    assert_eq!(code(&out), 0, "{}{}", stdout(&out), stderr(&out));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("g.json")).unwrap()).unwrap();
    assert_eq!(json.as_array().unwrap().len(), tcbp::gradcheck::OPS.len());
}

#[test]
fn bench_reports_reference_parameter_counts() {
    let dir = tempfile::tempdir().unwrap();
    let out = tcbp(&["bench", "--c", "1024", "--t", "1,3", "--d", "64", "--reps", "2", "--json", "b.json"], dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = stdout(&out);
    assert_eq!(csv.lines().next().unwrap(), "method,c,t,d,params,expected_params,mean_us,min_us");
    assert_eq!(csv.lines().count(), 1 + 2 * 4);
    let cell = |method: &str, t: &str| {
        csv.lines()
            .find(|l| l.starts_with(&format!("{method},1024,{t},")))
            .unwrap()
            .split(',')
            .nth(4)
            .unwrap()
            .to_string()
    };
    assert_eq!(cell("cbp", "3"), "4096");
    assert_eq!(cell("tcbp", "3"), "8192");
    assert_eq!(cell("tcbp", "1"), "4096");
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("b.json")).unwrap()).unwrap();
    assert_eq!(json["param_mismatches"].as_array().unwrap().len(), 0);
    assert_eq!(json["tcbp_projection_slopes"].as_array().unwrap().len(), 1);
}
