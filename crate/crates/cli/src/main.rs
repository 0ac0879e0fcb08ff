use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use relkd::checkpoint::Checkpoint;
use relkd::harness::{
    ablate, aggregate, build_teacher, collect_results, dump_embeddings, load_data, pretrain_teachers, render_grid,
    run_experiment, sweep_k, write_report, ExperimentConfig, ResultRow,
};
use relkd::trainer::TeacherMode;
use relkd::{Error, Result};

const DEFAULT_K_GRID: [f64; 4] = [0.0, 0.001, 0.1, 1.0];

#[derive(Parser)]
#[command(name = "relkd", version, about = "Noisy-label training with relational distillation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated run seeds; overrides `seeds`.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Comma-separated relation weights.
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<f64>>,
    /// Worker threads (falls back to RELKD_THREADS, then all cores).
    #[arg(long, env = "RELKD_THREADS")]
    threads: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and check a config without running anything.
    Validate(Common),
    /// Pretrain teacher encoders and save them as checkpoints.
    Pretrain(Common),
    /// Train one student per seed.
    Train(Common),
    /// Train over a grid of relation weights.
    SweepK(Common),
    /// Compare no teacher, random frozen teachers and the pretrained teacher.
    Ablate(Common),
    /// Write encoder representations of a dataset split to CSV.
    DumpEmbeddings {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to read the encoder from; defaults to the config's teacher.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Checkpoint section holding the encoder.
        #[arg(long, default_value = "encoder")]
        section: String,
        #[arg(long, value_enum, default_value = "train")]
        split: Split,
    },
    /// Aggregate every results.csv under the output directory.
    Report(Common),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Validate(c)
            | Command::Pretrain(c)
            | Command::Train(c)
            | Command::SweepK(c)
            | Command::Ablate(c)
            | Command::Report(c) => c,
            Command::DumpEmbeddings { common, .. } => common,
        }
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => return Err(Error::config("config", "--config is required")),
    };
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seeds) = &common.seeds {
        cfg.seeds = seeds.clone();
    }
    Ok(cfg)
}

/// Applies a single `--k` to the config; lists are only meaningful for sweeps.
fn single_k(cfg: &mut ExperimentConfig, common: &Common) -> Result<()> {
    match common.k.as_deref() {
        None => Ok(()),
        Some([k]) => cfg.set("rmd.k", &k.to_string()),
        Some(_) => Err(Error::config(
            "k",
            "this command takes a single K; use sweep-k for a grid",
        )),
    }
}

fn print_rows(rows: &[ResultRow]) {
    for r in rows {
        println!(
            "{}\tseed={}\tk={}\tteacher={}\ttest_acc={:.4}\t{:.1}s",
            r.config_id, r.seed, r.k, r.teacher, r.test_acc, r.wall_time
        );
    }
}

fn run(cli: Cli) -> Result<()> {
    let common = cli.command.common();
    if let Some(n) = common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool already configured: {e}");
        }
    }
    match &cli.command {
        Command::Validate(c) => {
            let mut cfg = load_config(c)?;
            single_k(&mut cfg, c)?;
            cfg.validate()?;
            println!("{}: ok", cfg.id);
        }
        Command::Pretrain(c) => {
            let cfg = load_config(c)?;
            for path in pretrain_teachers(&cfg)? {
                println!("{}", path.display());
            }
        }
        Command::Train(c) => {
            let mut cfg = load_config(c)?;
            single_k(&mut cfg, c)?;
            print_rows(&run_experiment(&cfg)?);
        }
        Command::SweepK(c) => {
            let cfg = load_config(c)?;
            let ks = c.k.clone().unwrap_or_else(|| DEFAULT_K_GRID.to_vec());
            let out = sweep_k(&cfg, &ks)?;
            println!("k\tmean\tstd\tn");
            for r in &out.table {
                println!("{}\t{:.4}\t{:.4}\t{}", r.k, r.mean, r.std, r.n);
            }
        }
        Command::Ablate(c) => {
            let mut cfg = load_config(c)?;
            single_k(&mut cfg, c)?;
            let out = ablate(&cfg)?;
            println!("arm\tteacher\tk\tmean\tstd\tn");
            for a in &out.arms {
                println!(
                    "{}\t{}\t{}\t{:.4}\t{:.4}\t{}",
                    a.name,
                    a.teacher.name(),
                    a.k,
                    a.mean,
                    a.std,
                    a.n
                );
            }
        }
        Command::DumpEmbeddings {
            common: c,
            checkpoint,
            section,
            split,
        } => {
            let cfg = load_config(c)?;
            cfg.validate()?;
            let from_file = match checkpoint {
                Some(p) => Some(Checkpoint::load(p)?.require(section)?.clone()),
                None => None,
            };
            let dir = cfg.output_dir.join(&cfg.id);
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for &seed in &cfg.seeds {
                let data = load_data(&cfg, seed)?;
                let encoder = match &from_file {
                    Some(enc) => enc.clone(),
                    None => {
                        let mode = match cfg.train.teacher {
                            TeacherMode::None => TeacherMode::Pretrained,
                            m => m,
                        };
                        build_teacher(&cfg, mode, seed, &data.train)?
                            .encoder
                            .ok_or_else(|| Error::config("teacher", "no encoder to dump"))?
                    }
                };
                let (ds, name) = match split {
                    Split::Train => (&data.train, "train"),
                    Split::Test => (&data.test, "test"),
                };
                let path = dir.join(format!("embeddings_{name}_seed_{seed}.csv"));
                dump_embeddings(&encoder, ds, &path).map_err(|e| e.in_run(format!("{} seed {seed}", cfg.id)))?;
                println!("{}", path.display());
            }
        }
        Command::Report(c) => {
            let dir = match (&c.out, &c.config) {
                (Some(out), _) => out.clone(),
                (None, Some(_)) => load_config(c)?.output_dir,
                (None, None) => return Err(Error::config("out", "--out or --config is required")),
            };
            report(&dir)?;
        }
    }
    Ok(())
}

fn report(dir: &Path) -> Result<()> {
    let rows = collect_results(dir)?;
    if rows.is_empty() {
        return Err(Error::config(
            "out",
            format!("no results.csv found under {}", dir.display()),
        ));
    }
    let cells = aggregate(&rows);
    let path = dir.join("report.csv");
    let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    write_report(&cells, std::io::BufWriter::new(file))?;
    print!("{}", render_grid(&cells));
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() {
                2
            } else if e.is_training_abort() {
                3
            } else {
                1
            })
        }
    }
}
