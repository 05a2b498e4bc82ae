//! `lumafix`: dataset synthesis, training, restoration, evaluation and the
//! prompt-feature diagnostic behind one binary.
//!
//! Exit codes: 0 success, 1 invalid arguments or configuration, 2 failure
//! while running.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use lumafix_core::checkpoint::Checkpoint;
use lumafix_core::config::KvConfig;
use lumafix_core::data::{generate_dataset, load_dataset, write_atomic, DatagenConfig, MANIFEST};
use lumafix_core::diffusion::ScheduleConfig;
use lumafix_core::dit::ModelConfig;
use lumafix_core::metrics::{cluster_csv, cluster_report, extract_prompt_features, ClusterRow, MetricReport};
use lumafix_core::pipeline::restore_dir;
use lumafix_core::train::{run_training, TrainConfig};

#[derive(Parser, Debug)]
#[command(
    name = "lumafix",
    version,
    about = "Exposure and low-light correction with a prompt-steered pyramid diffusion model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize paired corrupted/ground-truth images.
    Datagen {
        /// Dataset directory to create.
        #[arg(long)]
        output: PathBuf,
        /// Optional directory of clean PNG sources (procedural images otherwise).
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        count: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Train a model on a generated dataset.
    Train {
        /// Dataset directory (with manifest.csv).
        #[arg(long)]
        input: PathBuf,
        /// Run directory for model.ckpt and loss.csv.
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Restore every PNG in a directory.
    Restore {
        #[arg(long)]
        checkpoint: PathBuf,
        /// PNG directory, or a dataset directory (its input/ images are used).
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// PSNR/SSIM of restored images against same-named references.
    Eval {
        /// Restored PNG directory.
        #[arg(long)]
        input: PathBuf,
        /// Ground-truth PNG directory.
        #[arg(long)]
        reference: PathBuf,
        /// Optional CSV report path.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Davies-Bouldin index of pooled prompt features per prompt block.
    ClusterDiagnose {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Labelled dataset directory (with manifest.csv).
        #[arg(long)]
        input: PathBuf,
        /// Optional CSV report path.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `key=value` override, applied after the config file; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

trait Stage<T> {
    fn usage(self) -> Result<T, Failure>;
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Stage<T> for Result<T, E> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Usage(e.into()))
    }
    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

fn known_keys() -> Vec<&'static str> {
    let mut k: Vec<&str> = DatagenConfig::KEYS
        .iter()
        .chain(&ModelConfig::KEYS)
        .chain(&ScheduleConfig::KEYS)
        .chain(&TrainConfig::KEYS)
        .copied()
        .collect();
    k.sort_unstable();
    k.dedup();
    k
}

/// Config file, then `--set` overrides, then dedicated flags.
fn settings(common: &Common, flags: &[(&str, Option<String>)]) -> anyhow::Result<KvConfig> {
    let mut kv = match &common.config {
        Some(p) => {
            require_file(p)?;
            KvConfig::load(p)?
        }
        None => KvConfig::new(),
    };
    for o in &common.overrides {
        kv.apply_override(o)?;
    }
    if let Some(s) = common.seed {
        kv.set("seed", s);
    }
    for (k, v) in flags {
        if let Some(v) = v {
            kv.set(k, v);
        }
    }
    kv.reject_unknown(&known_keys())?;
    Ok(kv)
}

fn require_dir(p: &Path) -> anyhow::Result<()> {
    if !p.is_dir() {
        bail!("{}: no such directory", p.display());
    }
    Ok(())
}

fn require_file(p: &Path) -> anyhow::Result<()> {
    if !p.is_file() {
        bail!("{}: no such file", p.display());
    }
    Ok(())
}

fn require_dataset(p: &Path) -> anyhow::Result<()> {
    require_dir(p)?;
    require_file(&p.join(MANIFEST)).context("not a dataset directory")
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Datagen {
            output,
            input,
            count,
            common,
        } => {
            if let Some(src) = &input {
                require_dir(src).usage()?;
            }
            let kv = settings(&common, &[("count", count.map(|c| c.to_string()))]).usage()?;
            let cfg = DatagenConfig::from_kv(&kv).usage()?;
            let manifest = generate_dataset(input.as_deref(), &output, &cfg).runtime()?;
            println!("wrote {} pairs to {}", manifest.rows.len(), output.display());
        }
        Command::Train {
            input,
            output,
            epochs,
            common,
        } => {
            require_dataset(&input).usage()?;
            let kv = settings(&common, &[("epochs", epochs.map(|e| e.to_string()))]).usage()?;
            let model = ModelConfig::from_kv(&kv).usage()?;
            let schedule = ScheduleConfig::from_kv(&kv).usage()?;
            schedule.build().usage()?;
            let train = TrainConfig::from_kv(&kv).usage()?;
            let data = load_dataset(&input).runtime()?;
            let started = Instant::now();
            let per_epoch = train.steps_per_epoch(data.len());
            let outcome = run_training(&data, &model, &schedule, &train, &output, &mut |r| {
                if r.step % per_epoch == 0 || r.step % 50 == 0 {
                    eprintln!(
                        "epoch {} step {} loss {:.5} ({:.0}s)",
                        r.epoch,
                        r.step,
                        r.loss,
                        started.elapsed().as_secs_f64()
                    );
                }
            })
            .runtime()?;
            println!(
                "trained {} steps; checkpoint {}, loss trace {}",
                outcome.records.len(),
                outcome.checkpoint.display(),
                outcome.loss_trace.display()
            );
        }
        Command::Restore {
            checkpoint,
            input,
            output,
            common,
        } => {
            require_file(&checkpoint).usage()?;
            require_dir(&input).usage()?;
            let kv = settings(&common, &[]).usage()?;
            let seed: u64 = kv.get_or("seed", 0).usage()?;
            let images = if input.join(MANIFEST).is_file() {
                input.join("input")
            } else {
                input
            };
            let written = restore_dir(&checkpoint, &images, &output, seed, &mut |p| {
                eprintln!("restored {}", p.display())
            })
            .runtime()?;
            println!("restored {} images into {}", written.len(), output.display());
        }
        Command::Eval {
            input,
            reference,
            output,
        } => {
            require_dir(&input).usage()?;
            require_dir(&reference).usage()?;
            let report = MetricReport::from_dirs(&input, &reference).runtime()?;
            let csv = report.to_csv().runtime()?;
            if let Some(out) = output {
                write_atomic(&out, csv.as_bytes()).runtime()?;
            }
            print!("{csv}");
        }
        Command::ClusterDiagnose {
            checkpoint,
            input,
            output,
        } => {
            require_file(&checkpoint).usage()?;
            require_dataset(&input).usage()?;
            let ckpt = Checkpoint::load(&checkpoint).runtime()?;
            let net = ckpt.network(&checkpoint).runtime()?;
            let schedules = ckpt.schedule.build().runtime()?;
            let data = load_dataset(&input).runtime()?;
            let blocks = extract_prompt_features(&net, &ckpt.params, &schedules, &data).runtime()?;
            let rows = cluster_report(&blocks).runtime()?;
            if let Some(out) = output {
                write_atomic(&out, cluster_csv(&rows).as_bytes()).runtime()?;
            }
            print_table(&rows);
        }
    }
    Ok(())
}

fn print_table(rows: &[ClusterRow]) {
    println!(
        "{:>5}  {:>5}  {:>8}  {:>7}  {:>9}",
        "block", "level", "channels", "samples", "dbi"
    );
    for r in rows {
        println!(
            "{:>5}  {:>5}  {:>8}  {:>7}  {:>9.4}",
            r.block, r.level, r.channels, r.samples, r.dbi
        );
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
