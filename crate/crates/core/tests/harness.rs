use std::path::Path;

use relkd::harness::{
    ablate, accuracy, build_teacher, evaluate, load_data, load_results, run_experiment, run_one, sweep_k,
    ExperimentConfig, Teacher, ABLATION_ARMS,
};
use relkd::numerics::RngStream;
use relkd::trainer::{train_task, TeacherMode};
use relkd::Error;

fn tiny(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::parse(
        "id = tiny
         dataset.n_train = 240
         dataset.n_test = 120
         optim.epochs = 2
         optim.batch_size = 32
         optim.lr0 = 0.05
         model.hidden = 12
         model.rep_width = 6
         ssl.hidden = 12
         ssl.epochs = 1
         rmd.k = 0.5
         seeds = 3,1",
    )
    .unwrap();
    cfg.output_dir = out.to_path_buf();
    cfg
}

fn confusion_accuracy(preds: &[usize], labels: &[usize], classes: usize) -> f64 {
    let mut m = vec![vec![0u64; classes]; classes];
    for (&p, &y) in preds.iter().zip(labels) {
        m[y][p] += 1;
    }
    let diag: u64 = (0..classes).map(|c| m[c][c]).sum();
    let total: u64 = m.iter().flatten().sum();
    diag as f64 / total as f64
}

#[test]
fn accuracy_matches_confusion_matrix() {
    let mut rng = RngStream::new(17);
    for _ in 0..20 {
        let preds: Vec<usize> = (0..1000).map(|_| rng.below(7)).collect();
        let labels: Vec<usize> = (0..1000).map(|_| rng.below(7)).collect();
        assert_eq!(
            accuracy(&preds, &labels).unwrap(),
            confusion_accuracy(&preds, &labels, 7)
        );
    }
}

#[test]
fn test_split_is_never_corrupted() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let data = load_data(&cfg, 3).unwrap();
    assert_eq!(data.test.corrupted_count(), 0);
    assert!(data.train.corrupted_count() > 0);
}

#[test]
fn evaluation_reads_clean_labels() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let data = load_data(&cfg, 3).unwrap();
    let (_, model, _) = run_one(&cfg, "canary", 3, &data, &Teacher::none(), 0.0).unwrap();

    let flipped: Vec<usize> = data.test.clean_labels().iter().map(|y| (y + 1) % 4).collect();
    let corrupted_test = data.test.with_noisy_labels(flipped.clone()).unwrap();
    let clean = evaluate(&model, &data.test).unwrap();
    assert_eq!(evaluate(&model, &corrupted_test).unwrap(), clean);
    let preds = relkd::trainer::predict(&model, data.test.features()).unwrap();
    assert_ne!(accuracy(&preds, &flipped).unwrap(), clean);
}

#[test]
fn zero_noise_zero_k_is_plain_supervised_training() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.set("noise.kind", "none").unwrap();
    cfg.set("rmd.k", "0").unwrap();
    let rows = run_experiment(&cfg).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows.iter().map(|r| r.seed).collect::<Vec<_>>(), [1, 3]);
    assert!(rows
        .iter()
        .all(|r| r.noise_kind == "none" && r.k == 0.0 && r.teacher == "none"));

    let data = load_data(&cfg, 1).unwrap();
    assert_eq!(data.train.noisy_labels(), data.train.clean_labels());
    let mut spec = cfg.train_spec(1);
    spec.teacher = TeacherMode::None;
    let (model, _) = train_task(&data.train, None, &spec, &cfg.optim, None).unwrap();
    assert_eq!(evaluate(&model, &data.test).unwrap(), rows[0].test_acc);
}

#[test]
fn reruns_reproduce_rows_and_histories() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = run_experiment(&tiny(a.path())).unwrap();
    let rb = run_experiment(&tiny(b.path())).unwrap();
    assert_eq!(ra.len(), rb.len());
    for (x, y) in ra.iter().zip(&rb) {
        assert!(x.same_outcome(y), "{x:?} vs {y:?}");
    }
    for seed in [1, 3] {
        let rel = format!("tiny/seed_{seed}");
        for f in ["history.csv", "student.ckpt", "teacher.ckpt"] {
            let fa = std::fs::read(a.path().join(&rel).join(f)).unwrap();
            let fb = std::fs::read(b.path().join(&rel).join(f)).unwrap();
            assert_eq!(fa, fb, "{rel}/{f}");
        }
    }
    let on_disk = load_results(a.path().join("tiny/results.csv")).unwrap();
    assert_eq!(on_disk, ra);
}

#[test]
fn sweep_with_only_zero_matches_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    let sweep = sweep_k(&cfg, &[0.0]).unwrap();
    cfg.set("rmd.k", "0").unwrap();
    cfg.output_dir = dir.path().join("base");
    let base = run_experiment(&cfg).unwrap();
    assert_eq!(sweep.table.len(), 1);
    for (s, b) in sweep.rows.iter().zip(&base) {
        assert_eq!(s.test_acc, b.test_acc);
        assert_eq!(s.seed, b.seed);
    }
}

#[test]
fn sweep_dedupes_and_sorts_k() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let out = sweep_k(&cfg, &[1.0, 0.0, 1.0]).unwrap();
    assert_eq!(out.table.iter().map(|r| r.k).collect::<Vec<_>>(), [0.0, 1.0]);
    assert!(out.table.iter().all(|r| r.n == 2));
    assert_eq!(out.rows.len(), 4);
    assert!(dir.path().join("tiny/sweep/sweep.csv").is_file());
    assert!(sweep_k(&cfg, &[]).unwrap_err().is_config());
    assert!(sweep_k(&cfg, &[-1.0]).unwrap_err().is_config());
}

#[test]
fn ablation_gives_comparable_arms_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let out = ablate(&cfg).unwrap();
    assert_eq!(out.rows.len(), 2 * ABLATION_ARMS.len());
    let names: Vec<&str> = out.arms.iter().map(|a| a.name.as_str()).collect();
    assert_eq!(names, ABLATION_ARMS);
    assert_eq!(out.arm("base").unwrap().teacher, TeacherMode::None);
    assert_eq!(out.arm("rgrl_random").unwrap().teacher, TeacherMode::RandomFrozen);
    assert_eq!(out.arm("rgrl_rm").unwrap().teacher, TeacherMode::Pretrained);
    assert_eq!(out.arm("rgrl_random_strong").unwrap().k, 5.0);
    assert!(dir.path().join("tiny/ablation/ablation.csv").is_file());
}

#[test]
fn random_teacher_depends_only_on_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let data = load_data(&cfg, 3).unwrap();
    let a = build_teacher(&cfg, TeacherMode::RandomFrozen, 3, &data.train).unwrap();
    let b = build_teacher(&cfg, TeacherMode::RandomFrozen, 3, &data.train).unwrap();
    assert_eq!(a.encoder, b.encoder);
    assert_eq!(a.encoder.unwrap().output_width(), 6);
}

#[test]
fn config_errors_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.set("teacher.checkpoint", "/no/such/teacher.ckpt").unwrap();
    match run_experiment(&cfg).unwrap_err() {
        Error::Config { key, .. } => assert_eq!(key, "teacher.checkpoint"),
        other => panic!("unexpected {other}"),
    }
    let mut cfg = tiny(dir.path());
    cfg.seeds.clear();
    assert!(run_experiment(&cfg).unwrap_err().is_config());
}

#[test]
fn training_aborts_carry_run_context() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.set("optim.lr0", "1e300").unwrap();
    cfg.set("rmd.k", "0").unwrap();
    let err = run_experiment(&cfg).unwrap_err();
    assert!(err.is_training_abort(), "{err}");
    assert!(err.to_string().contains("tiny seed"), "{err}");
}
