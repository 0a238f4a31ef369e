//! `cyclebev` command-line driver.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use cyclebev::harness::ablate::{self, Axis};
use cyclebev::harness::{checkpoint, eval, gradsuite, render, train, ExperimentConfig, Trainer};
use cyclebev::synth::{self, Sequence};

#[derive(Parser)]
#[command(name = "cyclebev", version, about = "Monocular BEV segmentation on a synthetic world")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; data is generated from the config's seeds.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a dumped dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Resize maps to 196×200 before scoring.
        #[arg(long)]
        paper_protocol: bool,
    },
    /// Train and evaluate one model per value of an axis.
    Ablate {
        #[arg(long)]
        axis: Axis,
        #[arg(long)]
        values: String,
        /// Base configuration; the desk preset when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Finite-difference check of every differentiable module.
    Gradcheck {
        #[arg(long)]
        module: Option<String>,
    },
    /// Generate sequences and dump them to a directory.
    GenData {
        /// Half-open range `a..b`.
        #[arg(long)]
        seeds: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write side-by-side prediction panels for a dumped sequence.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        /// A dataset directory, or one sequence directory inside it.
        #[arg(long)]
        sequence: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn config_or_desk(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => Ok(ExperimentConfig::load(p)?),
        None => Ok(ExperimentConfig::desk()),
    }
}

fn run_train(config: &Path, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    std::fs::write(out.join("config.txt"), cfg.to_text())?;
    let data = train::training_data(&cfg)?;
    let mut trainer = Trainer::new(&cfg, &data)?;
    let log_path = out.join("train.log");
    let mut log = BufWriter::new(File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?);
    let every = cfg.checkpoint_every;
    let summary = trainer.run(|l, state| {
        writeln!(log, "{}", l.to_line()).map_err(|e| cyclebev::Error::io(&log_path, e))?;
        if every > 0 && l.step % every == 0 {
            checkpoint::save(&out.join(format!("step_{:06}.ckpt", l.step)), state)?;
        }
        Ok(())
    })?;
    log.flush()?;
    let ckpt = out.join("final.ckpt");
    checkpoint::save(&ckpt, &trainer.state)?;
    println!("trained {} steps; checkpoint {}", summary.steps, ckpt.display());
    if let Some((step, miou)) = summary.reached {
        println!("train mIoU {miou:.4} reached at step {step}");
    }
    Ok(())
}

fn run_eval(ckpt: &Path, data: &Path, protocol: bool) -> Result<()> {
    let (model, state) = checkpoint::load_model(ckpt)?;
    let seqs = synth::read_dataset(data)?;
    if let Some(s) = seqs.iter().find(|s| s.classes.len() != model.classes) {
        bail!(
            "{} has {} classes but the checkpoint predicts {}",
            s.name,
            s.classes.len(),
            model.classes
        );
    }
    let preds = eval::predict(&model, &state.store, &seqs, state.config.parallelism())?;
    let out = eval::score(&preds, &seqs, protocol)?;
    print!("{}", out.to_text());
    Ok(())
}

fn load_sequences(path: &Path) -> Result<Vec<Sequence>> {
    if path.join("manifest.txt").exists() {
        return Ok(synth::read_dataset(path)?);
    }
    let parent = path.parent().context("sequence directory has no parent dataset")?;
    let name = path.file_name().and_then(|n| n.to_str()).context("sequence directory name")?;
    let seqs: Vec<Sequence> = synth::read_dataset(parent)?
        .into_iter()
        .filter(|s| s.name == name)
        .collect();
    if seqs.is_empty() {
        bail!("{name} is not listed in {}", parent.join("manifest.txt").display());
    }
    Ok(seqs)
}

fn run_render(ckpt: &Path, sequence: &Path, out: Option<&Path>) -> Result<()> {
    let (model, state) = checkpoint::load_model(ckpt)?;
    let seqs = load_sequences(sequence)?;
    let preds = eval::predict(&model, &state.store, &seqs, state.config.parallelism())?;
    let root = out.map_or_else(|| sequence.join("render"), Path::to_path_buf);
    let mut count = 0;
    for (seq, p) in seqs.iter().zip(&preds) {
        let dir = if seqs.len() == 1 { root.clone() } else { root.join(&seq.name) };
        count += render::render_maps(&dir, seq, p)?.len();
    }
    println!("wrote {count} panels under {}", root.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, seed, out } => run_train(&config, seed, &out),
        Command::Eval {
            checkpoint,
            data,
            paper_protocol,
        } => run_eval(&checkpoint, &data, paper_protocol),
        Command::Ablate { axis, values, config } => {
            let cfg = config_or_desk(config.as_deref())?;
            let values = ablate::parse_values(&values)?;
            let tr = train::training_data(&cfg)?;
            let ev = train::evaluation_data(&cfg)?;
            print!("{}", ablate::ablate(&cfg, axis, &values, &tr, &ev)?.to_text());
            Ok(())
        }
        Command::Gradcheck { module } => {
            let entries = gradsuite::run(module.as_deref())?;
            let mut failed = 0;
            for e in &entries {
                let verdict = if e.passed() { "ok" } else { "FAIL" };
                println!("{verdict:<4} {:<9} {:<45} max rel error {:.3e}", e.module, e.name, e.max_rel_error);
                failed += !e.passed() as usize;
            }
            if failed > 0 {
                bail!("{failed} of {} gradient checks exceeded {:e}", entries.len(), gradsuite::TOLERANCE);
            }
            Ok(())
        }
        Command::GenData { seeds, out, config } => {
            let cfg = config_or_desk(config.as_deref())?;
            let range = cyclebev::harness::config::parse_seed_range(&seeds)?;
            let data = synth::generate_dataset(range, &cfg.synth()?, cfg.parallelism())?;
            synth::write_dataset(&out, &data)?;
            println!("wrote {} sequences to {}", data.len(), out.display());
            Ok(())
        }
        Command::Render {
            checkpoint,
            sequence,
            out,
        } => run_render(&checkpoint, &sequence, out.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let reason = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {reason}");
            ExitCode::FAILURE
        }
    }
}
