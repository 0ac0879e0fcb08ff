use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
id = tiny
dataset.n_train = 200
dataset.n_test = 100
optim.epochs = 2
optim.batch_size = 32
model.hidden = 8
model.rep_width = 6
ssl.hidden = 8
ssl.epochs = 1
rmd.k = 0.5
seeds = 0,1
";

fn relkd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relkd"))
        .args(args)
        .env_remove("RELKD_THREADS")
        .output()
        .expect("failed to launch relkd")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("tiny.cfg");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn validate_accepts_a_good_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let o = relkd(&["validate", "--config", &cfg]);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("tiny: ok"));
}

#[test]
fn config_errors_exit_with_2_and_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{TINY}optim.momentum = 1.5\n"));
    let o = relkd(&["train", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("optim.momentum"));

    let cfg = write_config(dir.path(), "this is not a config\n");
    assert_eq!(relkd(&["validate", "--config", &cfg]).status.code(), Some(2));
    assert_eq!(relkd(&["validate"]).status.code(), Some(2));
}

#[test]
fn training_abort_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{TINY}optim.lr0 = 1e300\n"));
    let out = dir.path().join("runs");
    let o = relkd(&["train", "--config", &cfg, "--out", out.to_str().unwrap(), "--k", "0"]);
    assert_eq!(o.status.code(), Some(3), "{o:?}");
}

#[test]
fn train_sweep_ablate_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("runs");
    let out_s = out.to_str().unwrap();

    let o = relkd(&[
        "train",
        "--config",
        &cfg,
        "--out",
        out_s,
        "--seeds",
        "4",
        "--threads",
        "1",
    ]);
    assert!(o.status.success(), "{o:?}");
    assert_eq!(stdout(&o).lines().count(), 1);
    assert!(out.join("tiny/seed_4/student.ckpt").is_file());
    assert!(out.join("tiny/seed_4/teacher.ckpt").is_file());

    let o = relkd(&["sweep-k", "--config", &cfg, "--out", out_s, "--k", "0,0.5,0.5"]);
    assert!(o.status.success(), "{o:?}");
    let sweep = std::fs::read_to_string(out.join("tiny/sweep/sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 3);

    let o = relkd(&["ablate", "--config", &cfg, "--out", out_s]);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("rgrl_random_strong"));

    let o = relkd(&["report", "--out", out_s]);
    assert!(o.status.success(), "{o:?}");
    let grid = stdout(&o);
    assert!(grid.contains("symmetric 0.4"), "{grid}");
    assert!(grid.contains("ce+rmd"), "{grid}");
    assert!(out.join("report.csv").is_file());
}

#[test]
fn pretrain_then_dump_embeddings_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("runs");
    let out_s = out.to_str().unwrap();

    let o = relkd(&["pretrain", "--config", &cfg, "--out", out_s, "--seeds", "0"]);
    assert!(o.status.success(), "{o:?}");
    let ckpt = out.join("tiny/seed_0/teacher.ckpt");
    assert!(ckpt.is_file());

    let args = [
        "dump-embeddings",
        "--config",
        &cfg,
        "--out",
        out_s,
        "--seeds",
        "0",
        "--checkpoint",
        ckpt.to_str().unwrap(),
    ];
    let o = relkd(&args);
    assert!(o.status.success(), "{o:?}");
    let path = out.join("tiny/embeddings_train_seed_0.csv");
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 201);
    assert!(text
        .lines()
        .next()
        .unwrap()
        .ends_with("clean_label,noisy_label,corrupted"));

    let first = std::fs::read(&path).unwrap();
    assert!(relkd(&args).status.success());
    assert_eq!(std::fs::read(&path).unwrap(), first);

    let o = relkd(&[
        "dump-embeddings",
        "--config",
        &cfg,
        "--out",
        out_s,
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--section",
        "missing",
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn report_without_results_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = relkd(&["report", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_rejects_a_k_grid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let o = relkd(&["train", "--config", &cfg, "--k", "0,1"]);
    assert_eq!(o.status.code(), Some(2));
}
