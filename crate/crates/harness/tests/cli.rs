use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use igloo_harness::checkpoint::Checkpoint;
use igloo_harness::commands::{self, METRICS_HEADER};
use igloo_harness::config::RunConfig;

fn igloo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_igloo"))
        .args(args)
        .env_remove("IGLOO_MNIST_DIR")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let mut v = vec![r.headers().unwrap().iter().map(String::from).collect()];
    v.extend(r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()));
    v
}

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data")
}

const SMALL_COPY: &[&str] = &["--copy-T", "5", "--copy-n-train", "400", "--copy-n-test", "100", "--J", "20"];

#[test]
fn train_writes_metrics_and_checkpoints_and_eval_reproduces() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let mut args = vec!["train", "--max-steps", "25", "--eval-every", "10", "--batch-size", "32", "--out", out.to_str().unwrap()];
    args.extend(SMALL_COPY);
    let run = igloo(&args);
    assert_eq!(code(&run), 0, "{}", stderr(&run));

    let table = rows(&out.join("metrics.csv"));
    assert_eq!(table[0], METRICS_HEADER);
    let steps: Vec<usize> = table[1..].iter().map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(steps, [0, 10, 20, 25]);

    let echoed = RunConfig::from_file(&out.join("config.txt")).unwrap();
    assert_eq!((echoed.max_steps, echoed.patches, echoed.copy_t), (25, 20, 5));

    let last: f64 = table.last().unwrap()[5].parse().unwrap();
    let (score, _) = commands::eval(&out.join("final.ckpt"), &[]).unwrap();
    assert_eq!(score.metric(), last);
    let ckpt = Checkpoint::load(&out.join("final.ckpt")).unwrap();
    assert_eq!(ckpt.optimizer.as_ref().unwrap().step, 25);
    assert!(Checkpoint::load(&out.join("best.ckpt")).unwrap().optimizer.is_none());

    let eval = igloo(&["eval", "--checkpoint", out.join("final.ckpt").to_str().unwrap()]);
    assert_eq!(code(&eval), 0, "{}", stderr(&eval));
    assert!(String::from_utf8_lossy(&eval.stdout).contains(&format!("accuracy {last:.6}")));
}

#[test]
fn missing_config_file_exits_one_and_names_it() {
    let run = igloo(&["train", "--config", "/nonexistent/run.cfg"]);
    assert_eq!(code(&run), 1);
    assert!(stderr(&run).contains("/nonexistent/run.cfg"), "{}", stderr(&run));
}

#[test]
fn unknown_key_exits_one_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("bad.cfg");
    std::fs::write(&file, "task = copy\ntrain.warp_speed = 9\n").unwrap();
    let run = igloo(&["train", "--config", file.to_str().unwrap()]);
    assert_eq!(code(&run), 1);
    assert!(stderr(&run).contains("train.warp_speed"), "{}", stderr(&run));
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    assert_eq!(code(&igloo(&["train", "--bogus", "1"])), 1);
    assert_eq!(code(&igloo(&["train", "--task", "chess"])), 1);
    assert_eq!(code(&igloo(&["eval"])), 1);
    assert_eq!(code(&igloo(&["--help"])), 0);
    assert_eq!(code(&igloo(&["train", "--help"])), 0);
}

#[test]
fn divergence_exits_two_and_keeps_partial_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let mut args = vec!["train", "--lr", "1e200", "--clip-norm", "none", "--max-steps", "50", "--eval-every", "5", "--out", out.to_str().unwrap()];
    args.extend(SMALL_COPY);
    let run = igloo(&args);
    assert_eq!(code(&run), 2, "{}", stderr(&run));
    let table = rows(&out.join("metrics.csv"));
    assert_eq!(table[0], METRICS_HEADER);
    assert!(table.len() >= 2);
    assert!(!out.join("final.ckpt").exists());
}

#[test]
fn gradcheck_passes_and_detects_a_corrupted_rule() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let base = ["gradcheck", "--copy-T", "5", "--J", "10", "--out", out];
    let ok = igloo(&base);
    assert_eq!(code(&ok), 0, "{}", stderr(&ok));
    let table = String::from_utf8_lossy(&ok.stdout).into_owned();
    assert!(table.contains("base.0.filter") && table.contains("head.weight"), "{table}");

    let mut faulty = base.to_vec();
    faulty.extend(["--fault", "matmul"]);
    let bad = igloo(&faulty);
    assert_eq!(code(&bad), 3, "{}", stderr(&bad));
    assert!(String::from_utf8_lossy(&bad.stdout).contains("FAIL"));

    let corpus = dir.path().join("tiny.txt");
    std::fs::write(&corpus, "the cat sat on the mat. a bat ate the hat; the rat ran at a tan cat.\n".repeat(6)).unwrap();
    let seq = igloo(&["gradcheck", "--seed", "5", "--task", "charlm", "--charlm-path", corpus.to_str().unwrap(), "--L", "12", "--J", "4", "--Z", "4", "--K", "4", "--sigma", "3", "--ffn-hidden", "8", "--out", out]);
    assert_eq!(code(&seq), 0, "{}", String::from_utf8_lossy(&seq.stdout));

    let long = igloo(&["gradcheck", "--task", "addition", "--out", out]);
    assert_eq!(code(&long), 1);
    assert!(stderr(&long).contains("64"));
}

#[test]
fn bench_writes_runs_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench");
    let mut args = vec!["bench", "--runs", "3", "--max-steps", "20", "--eval-every", "10", "--batch-size", "32", "--threshold", "0.2", "--out", out.to_str().unwrap()];
    args.extend(SMALL_COPY);
    let run = igloo(&args);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    let table = rows(&out.join("bench.csv"));
    assert_eq!(table.len(), 5);
    assert_eq!(table[4][0], "summary");
    let failures: usize = table[4][8].parse().unwrap();
    let crossed = table[1..4].iter().filter(|r| !r[1].is_empty()).count();
    assert_eq!(crossed + failures, 3);
    assert!(table[4][9].parse::<usize>().unwrap() > 0);

    let none = igloo(&["bench", "--task", "charlm", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&none), 1);
}

#[test]
fn gen_data_writes_each_task() {
    let dir = tempfile::tempdir().unwrap();
    let out = |name: &str| dir.path().join(name).to_str().unwrap().to_string();

    let copy = igloo(&["gen-data", "--copy-T", "5", "--copy-n-train", "30", "--copy-n-test", "7", "--out", &out("copy")]);
    assert_eq!(code(&copy), 0, "{}", stderr(&copy));
    let train = rows(&dir.path().join("copy/train.csv"));
    assert_eq!((train.len(), train[0].len()), (31, 25 + 10));
    assert_eq!(rows(&dir.path().join("copy/test.csv")).len(), 8);

    let add = igloo(&["gen-data", "--task", "addition", "--addition-T", "10", "--addition-n-train", "4", "--addition-n-test", "2", "--out", &out("add")]);
    assert_eq!(code(&add), 0, "{}", stderr(&add));
    let train = rows(&dir.path().join("add/train.csv"));
    assert_eq!((train.len(), train[0].len()), (5, 21));

    let fixture = fixture_dir();
    let perm = igloo(&[
        "gen-data",
        "--task",
        "pmnist",
        "--mnist-dir",
        fixture.to_str().unwrap(),
        "--images",
        "fixture-images-idx3-ubyte",
        "--labels",
        "fixture-labels-idx1-ubyte",
        "--mnist-n-train",
        "2",
        "--mnist-n-test",
        "2",
        "--out",
        &out("perm"),
    ]);
    assert_eq!(code(&perm), 0, "{}", stderr(&perm));
    let table = rows(&dir.path().join("perm/permutation.csv"));
    let mut src: Vec<usize> = table[1..].iter().map(|r| r[1].parse().unwrap()).collect();
    src.sort_unstable();
    assert_eq!(src, (0..784).collect::<Vec<_>>());

    let vocab = igloo(&["gen-data", "--task", "charlm", "--charlm-path", "tests/data/corpus.txt", "--out", &out("lm")]);
    assert_eq!(code(&vocab), 0, "{}", stderr(&vocab));
    assert!(rows(&dir.path().join("lm/vocab.csv")).len() > 30);
}

#[test]
fn mnist_fixture_trains_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = fixture_dir();
    let run = igloo(&[
        "train",
        "--task",
        "mnist",
        "--mnist-dir",
        fixture.to_str().unwrap(),
        "--images",
        "fixture-images-idx3-ubyte",
        "--labels",
        "fixture-labels-idx1-ubyte",
        "--mnist-n-train",
        "3",
        "--mnist-n-test",
        "1",
        "--J",
        "8",
        "--max-steps",
        "4",
        "--batch-size",
        "3",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    assert_eq!(rows(&dir.path().join("metrics.csv")).len(), 3);

    let missing = igloo(&["train", "--task", "mnist", "--mnist-dir", "/nonexistent", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&missing), 1);
    assert!(stderr(&missing).contains("/nonexistent"));
}
