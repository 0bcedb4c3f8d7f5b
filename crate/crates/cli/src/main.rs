//! `pogars`: generate synthetic data, train, evaluate, predict, export
//! attention weights and run the numerical self-checks.
//!
//! Exit codes: 0 success, 1 invalid input, 2 runtime or numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};
use pogars::data::{
    load_dataset, normalize_all, save_dataset, synth_generate, ClipWindow, DataError, Sample,
    SynthConfig,
};
use pogars::io::write_atomic;
use pogars::model::{Fusion, ModelError, PogarsConfig};
use pogars::train::tables::{
    confusion_table, history_table, mean_temporal_table, predictions_table, spatial_table,
    temporal_table,
};
use pogars::train::{
    evaluate, export_attention, load_checkpoint, save_checkpoint, Checkpoint, TrainConfig,
    TrainError, Trainer,
};

#[derive(Debug, Parser)]
#[command(
    name = "pogars",
    version,
    about = "Pose-only group activity recognition"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset with class-specific key-person motions
    GenSynth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 16)]
        per_class: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 0.01)]
        noise: f64,
    },
    /// Train a model; the history goes to `<out-checkpoint>.history.csv`
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_checkpoint: PathBuf,
        #[arg(long, default_value_t = 40)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2.0)]
        alpha: f64,
        #[arg(long, default_value = "late")]
        fusion: Fusion,
        /// enable the ball-trajectory branch
        #[arg(long)]
        ball: bool,
        /// train without the mirrored copies
        #[arg(long)]
        no_augment: bool,
    },
    /// Print group and individual accuracy and write the confusion matrix
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        confusion_out: PathBuf,
    },
    /// Write per-sample predicted labels and group probabilities
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write temporal, spatial and mean temporal attention tables into a directory
    ExportAttention {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the built-in numerical checks
    Verify,
}

/// Which exit code a failure maps to.
#[derive(Debug)]
enum Failure {
    Invalid(anyhow::Error),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let e = e.into();
        if is_invalid_input(&e) {
            Failure::Invalid(e)
        } else {
            Failure::Runtime(e)
        }
    }
}

fn is_invalid_input(e: &anyhow::Error) -> bool {
    if let Some(d) = e.downcast_ref::<DataError>() {
        return !matches!(d, DataError::Io(_));
    }
    if e.downcast_ref::<ModelError>().is_some() {
        return true;
    }
    match e.downcast_ref::<TrainError>() {
        Some(TrainError::Data(d)) => !matches!(d, DataError::Io(_)),
        Some(TrainError::Io(_) | TrainError::NonFinite(_) | TrainError::MissingGradient(_)) => {
            false
        }
        Some(_) => true,
        None => false,
    }
}

fn invalid(msg: String) -> Failure {
    Failure::Invalid(anyhow!(msg))
}

fn echo(label: &str, value: &impl serde::Serialize) -> String {
    let line = format!(
        "{label}: {}",
        serde_json::to_string(value).expect("configs serialize")
    );
    println!("{line}");
    line
}

fn load_samples(path: &Path, window: ClipWindow) -> Result<Vec<Sample>, Failure> {
    let records = load_dataset(path).with_context(|| format!("loading {}", path.display()))?;
    if records.is_empty() {
        return Err(invalid(format!(
            "{}: dataset has no records",
            path.display()
        )));
    }
    Ok(normalize_all(&records, window)
        .with_context(|| format!("normalizing {}", path.display()))?)
}

fn load_ckpt(path: &Path) -> Result<Checkpoint, Failure> {
    Ok(load_checkpoint(path).with_context(|| format!("reading checkpoint {}", path.display()))?)
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    write_atomic(path, text.as_bytes())
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::Runtime)
}

fn history_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.as_os_str().to_owned();
    name.push(".history.csv");
    PathBuf::from(name)
}

fn gen_synth(out: &Path, cfg: SynthConfig) -> Result<(), Failure> {
    let header = echo("synth", &cfg);
    let records = synth_generate(&cfg)?;
    save_dataset(out, &records, &[header]).map_err(|e| Failure::Runtime(e.into()))?;
    println!(
        "wrote {} records ({} classes x {} per class) to {}",
        records.len(),
        cfg.classes,
        cfg.per_class,
        out.display()
    );
    Ok(())
}

fn train(data: &Path, out: &Path, model: PogarsConfig, config: TrainConfig) -> Result<(), Failure> {
    let mut comments = vec![
        format!("data: {}", data.display()),
        echo("model", &model),
        echo("train", &config),
    ];
    let samples = load_samples(data, ClipWindow::from(&model))?;
    let mut trainer = Trainer::<f32>::new(model, config)?;
    trainer.fit(&samples, |s| {
        println!(
            "epoch {:>3}  lr {:.0e}  L_MT {:.5}  L_GA {:.5}  L_IA {:.5}  train_acc {:.4}",
            s.epoch, s.lr, s.total, s.group, s.action, s.train_acc
        );
        true
    })?;
    let history = history_path(out);
    comments.push(format!("checkpoint: {}", out.display()));
    save_checkpoint(out, &trainer.checkpoint()).map_err(|e| Failure::Runtime(e.into()))?;
    write(&history, &history_table(&comments, &trainer.history))?;
    let last = trainer.history.last().expect("at least one epoch");
    println!("final train_acc {}", last.train_acc);
    println!("wrote {} and {}", out.display(), history.display());
    Ok(())
}

fn provenance(checkpoint: &Path, data: &Path, ckpt: &Checkpoint) -> Vec<String> {
    vec![
        format!("checkpoint: {}", checkpoint.display()),
        format!("data: {}", data.display()),
        echo("model", &ckpt.model),
        echo("train", &ckpt.train),
    ]
}

fn eval(checkpoint: &Path, data: &Path, confusion_out: &Path) -> Result<(), Failure> {
    let ckpt = load_ckpt(checkpoint)?;
    let comments = provenance(checkpoint, data, &ckpt);
    let samples = load_samples(data, ClipWindow::from(&ckpt.model))?;
    let ev = evaluate(&ckpt.params, &ckpt.model, &samples, ckpt.train.batch_size)?;
    write(confusion_out, &confusion_table(&comments, &ev.confusion))?;
    println!("samples {}", samples.len());
    println!("group_accuracy {}", ev.group_accuracy);
    println!("individual_accuracy {}", ev.action_accuracy);
    Ok(())
}

fn predict(checkpoint: &Path, data: &Path, out: &Path) -> Result<(), Failure> {
    let ckpt = load_ckpt(checkpoint)?;
    let comments = provenance(checkpoint, data, &ckpt);
    let samples = load_samples(data, ClipWindow::from(&ckpt.model))?;
    let ev = evaluate(&ckpt.params, &ckpt.model, &samples, ckpt.train.batch_size)?;
    write(out, &predictions_table(&comments, &ev.predictions))?;
    println!(
        "wrote {} predictions to {}",
        ev.predictions.len(),
        out.display()
    );
    Ok(())
}

fn export(checkpoint: &Path, data: &Path, out: &Path) -> Result<(), Failure> {
    let ckpt = load_ckpt(checkpoint)?;
    let comments = provenance(checkpoint, data, &ckpt);
    if ckpt.model.fusion == Fusion::Early {
        return Err(invalid(format!(
            "{}: early-fusion checkpoint has no spatial attention to export",
            checkpoint.display()
        )));
    }
    let samples = load_samples(data, ClipWindow::from(&ckpt.model))?;
    let report = export_attention(&ckpt.params, &ckpt.model, &samples, ckpt.train.batch_size)?;
    std::fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .map_err(Failure::Runtime)?;
    write(
        &out.join("temporal.csv"),
        &temporal_table(&comments, &report),
    )?;
    write(&out.join("spatial.csv"), &spatial_table(&comments, &report))?;
    write(
        &out.join("mean_temporal.csv"),
        &mean_temporal_table(&comments, &report),
    )?;
    let peak = (0..report.mean_temporal.len())
        .max_by(|&a, &b| report.mean_temporal[a].total_cmp(&report.mean_temporal[b]))
        .unwrap_or(0);
    println!("mean temporal weight peaks at frame {peak}");
    println!(
        "wrote temporal.csv, spatial.csv and mean_temporal.csv to {}",
        out.display()
    );
    Ok(())
}

fn verify() -> Result<(), Failure> {
    let results = pogars::verify::run_all();
    let mut failed = 0;
    for r in &results {
        let verdict = if r.passed { "PASS" } else { "FAIL" };
        println!(
            "{verdict}  {:<28} {:.3e} (tol {:.0e})  {}",
            r.name, r.measured, r.tolerance, r.detail
        );
        failed += usize::from(!r.passed);
    }
    if failed > 0 {
        return Err(Failure::Runtime(anyhow!(
            "{failed} of {} checks failed",
            results.len()
        )));
    }
    println!("all {} checks passed", results.len());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::GenSynth {
            out,
            classes,
            per_class,
            seed,
            noise,
        } => gen_synth(
            &out,
            SynthConfig {
                classes,
                per_class,
                seed,
                noise,
                ..SynthConfig::default()
            },
        ),
        Command::Train {
            data,
            out_checkpoint,
            epochs,
            seed,
            alpha,
            fusion,
            ball,
            no_augment,
        } => {
            let model = PogarsConfig {
                alpha,
                fusion,
                ball_enabled: ball,
                ..PogarsConfig::default()
            };
            let config = TrainConfig {
                epochs,
                seed,
                alpha,
                augment: !no_augment,
                ..TrainConfig::default()
            };
            model.validate()?;
            config.validate()?;
            train(&data, &out_checkpoint, model, config)
        }
        Command::Eval {
            checkpoint,
            data,
            confusion_out,
        } => eval(&checkpoint, &data, &confusion_out),
        Command::Predict {
            checkpoint,
            data,
            out,
        } => predict(&checkpoint, &data, &out),
        Command::ExportAttention {
            checkpoint,
            data,
            out,
        } => export(&checkpoint, &data, &out),
        Command::Verify => verify(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
