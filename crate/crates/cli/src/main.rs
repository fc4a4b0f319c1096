// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{Context, Result};
use clap::Parser;

mod commands;
mod config;

use commands::{Artifacts, Command, Job};

/// Particle gradient flows of nonsmooth interaction energies.
#[derive(Debug, Parser)]
#[command(name = "aggflow", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,

    /// Scenario config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,

    /// Directory for summaries and trajectories.
    #[arg(long, default_value = ".")]
    out: PathBuf,

    /// Parallel runs for a sweep.
    #[arg(long, default_value_t = 1)]
    jobs: usize,

    /// Seed for randomized measures; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
}

enum Failure {
    Validation(anyhow::Error),
    Solver(anyhow::Error),
    /// Already printed; carries the exit code.
    Reported(u8),
}

impl Failure {
    fn classify(err: anyhow::Error) -> Self {
        let solver = err.chain().any(|e| {
            e.downcast_ref::<aggflow::Error>()
                .is_some_and(aggflow::Error::is_solver_failure)
        });
        if solver {
            Failure::Solver(err)
        } else {
            Failure::Validation(err)
        }
    }

    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Solver(_) => 2,
            Failure::Reported(code) => *code,
        }
    }

    fn report(&self) {
        if let Failure::Validation(e) | Failure::Solver(e) = self {
            eprintln!("error: {e:#}");
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            f.report();
            ExitCode::from(f.code())
        }
    }
}

fn load_configs(cli: &Cli) -> Result<(Vec<config::Config>, PathBuf)> {
    let (doc, base) = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            let doc = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", path.display()))?;
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            (doc, base)
        }
        None => (serde_json::json!({}), PathBuf::from(".")),
    };
    let mut configs = config::expand(doc)?;
    if let Some(seed) = cli.seed {
        for c in &mut configs {
            c.seed = seed;
        }
    }
    Ok((configs, base))
}

fn run(cli: &Cli) -> std::result::Result<(), Failure> {
    if cli.jobs == 0 {
        return Err(Failure::Validation(anyhow::anyhow!(
            "--jobs must be at least 1"
        )));
    }
    let (configs, base) = load_configs(cli).map_err(Failure::Validation)?;
    let sweep = configs.len() > 1;
    let jobs: Vec<Job> = configs
        .into_iter()
        .enumerate()
        .map(|(k, c)| {
            Job::prepare(cli.command, c, &base).with_context(|| {
                if sweep {
                    format!("sweep entry {k}")
                } else {
                    "config".into()
                }
            })
        })
        .collect::<Result<_>>()
        .map_err(Failure::Validation)?;

    let results: Vec<Mutex<Option<Result<Artifacts>>>> =
        jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..cli.jobs.min(jobs.len()) {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = jobs.get(k) else { break };
                *results[k].lock().expect("result slot") = Some(job.run());
            });
        }
    });

    let mut worst = 0u8;
    for (k, slot) in results.into_iter().enumerate() {
        let outcome = slot
            .into_inner()
            .expect("result slot")
            .expect("every job ran");
        let dir = if sweep {
            cli.out.join(format!("sweep_{k:03}"))
        } else {
            cli.out.clone()
        };
        let written = outcome.and_then(|a| write_artifacts(&dir, &a));
        if let Err(e) = written {
            let f = Failure::classify(if sweep {
                e.context(format!("sweep entry {k}"))
            } else {
                e
            });
            f.report();
            worst = worst.max(f.code());
        }
    }
    match worst {
        0 => Ok(()),
        code => Err(Failure::Reported(code)),
    }
}

fn write_artifacts(dir: &Path, artifacts: &Artifacts) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (name, bytes) in &artifacts.files {
        let path = dir.join(name);
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}
