use std::path::Path;
use std::process::{Command, Output};

fn espn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_espn"))
        .args(args)
        .env_remove("ESPN_MNIST_DIR")
        .output()
        .expect("spawn espn")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// CSV text with the wall_ms column blanked.
fn without_wall(path: &Path) -> String {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    let col = header.split(',').position(|c| c == "wall_ms").expect("wall_ms column");
    let mut out = vec![header.to_string()];
    for line in lines {
        let mut cells: Vec<&str> = line.split(',').collect();
        cells[col] = "";
        out.push(cells.join(","));
    }
    out.join("\n")
}

fn planted_run(out: &Path) -> Output {
    espn(&[
        "train-cl", "--family", "planted", "--tasks", "3", "--seed", "4", "--epochs", "1,1,1", "--out",
        out.to_str().unwrap(),
    ])
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&espn(&["--help"])), 0);
    assert_eq!(code(&espn(&["--version"])), 0);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&espn(&["train-cl", "--no-such-flag"])), 1);
    assert_eq!(code(&espn(&["experiment", "no-such-experiment"])), 1);
    assert_eq!(code(&espn(&["train-cl", "--family", "planted", "--epochs", "3,4"])), 1);
    let o = espn(&["train-cl", "--family", "planted", "--gamma", "1.5"]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{ not json").unwrap();
    assert_eq!(code(&espn(&["train-cl", "--config", cfg.to_str().unwrap()])), 1);
}

#[test]
fn missing_mnist_exits_three_with_a_hint() {
    let o = espn(&["train-cl", "--family", "rotated", "--tasks", "1"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("--mnist-dir"), "{}", stderr(&o));

    let dir = tempfile::tempdir().unwrap();
    let o = espn(&["train-cl", "--family", "permuted", "--tasks", "1", "--mnist-dir", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn repeated_runs_write_identical_results() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = planted_run(out);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    assert_eq!(without_wall(&a.join("cl_run.csv")), without_wall(&b.join("cl_run.csv")));
    assert_eq!(
        std::fs::read(a.join("checkpoint_seed4.espn")).unwrap(),
        std::fs::read(b.join("checkpoint_seed4.espn")).unwrap()
    );
}

#[test]
fn eval_reproduces_the_final_metrics_of_train_cl() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    assert_eq!(code(&planted_run(&run)), 0);
    let ckpt = run.join("checkpoint_seed4.espn");

    let ev = dir.path().join("eval");
    let o = espn(&["eval", ckpt.to_str().unwrap(), "--out", ev.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    // rows of the last checkpoint in the training log, keyed by task id
    let train = std::fs::read_to_string(run.join("cl_run.csv")).unwrap();
    let eval = std::fs::read_to_string(ev.join("eval.csv")).unwrap();
    let metric = |line: &str| {
        let c: Vec<&str> = line.split(',').collect();
        (c[2].to_string(), c[3].to_string(), c[8].parse::<f64>().unwrap())
    };
    let mut last: Vec<_> = train.lines().skip(1).map(metric).filter(|(_, ck, _)| ck == "3").collect();
    let mut evald: Vec<_> = eval.lines().skip(1).map(metric).collect();
    last.sort_by(|a, b| a.0.cmp(&b.0));
    evald.sort_by(|a, b| a.0.cmp(&b.0));
    assert_eq!(last.len(), 3);
    assert_eq!(evald.len(), 3);
    for ((ta, _, ma), (tb, _, mb)) in last.iter().zip(&evald) {
        assert_eq!(ta, tb);
        assert_eq!(ma, mb, "task {ta}");
    }

    let o = espn(&["inspect-checkpoint", ckpt.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(!o.stdout.is_empty());
}

#[test]
fn corrupted_checkpoint_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.espn");
    std::fs::write(&bad, b"definitely not a checkpoint").unwrap();
    assert_eq!(code(&espn(&["inspect-checkpoint", bad.to_str().unwrap()])), 3);
    assert_eq!(code(&espn(&["eval", bad.to_str().unwrap()])), 3);
}
