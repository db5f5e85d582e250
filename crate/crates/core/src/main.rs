use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use mwdnn::data::preprocess_index;
use mwdnn::grad::finite_diff_check;
use mwdnn::optics::PhaseStack;
use mwdnn::tools::export::{intensity_preview, write_pgm};
use mwdnn::tools::{
    export_heights, export_phase, import_phase, optical_metrics, solve_doe_heights, RunConfig,
    Split,
};
use mwdnn::training::{evaluate, init_phases, train};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 3;
const EXIT_CHECKPOINT: u8 = 4;
const EXIT_DATASET: u8 = 5;
const EXIT_GRADCHECK: u8 = 6;

#[derive(Parser)]
#[command(name = "mwdnn", version, about = "Multi-wavelength diffractive network simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Override a config value, e.g. `--set train.epochs=3`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to `run.out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct WithCheckpoint {
    #[command(flatten)]
    common: Common,
    /// Directory of `layer_<i>.raw` files; defaults to `<out>/checkpoint`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the phase stack and write a checkpoint.
    Train(Common),
    /// Score a checkpoint on the test sets.
    Evaluate(WithCheckpoint),
    /// Run one test sample per task through a checkpoint.
    Infer {
        #[command(flatten)]
        ckpt: WithCheckpoint,
        /// Test-set index per task; one value is used for every task.
        #[arg(long, value_delimiter = ',', default_value = "0")]
        index: Vec<usize>,
    },
    /// Compare analytic and finite-difference gradients on random inputs.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 40)]
        samples: usize,
        #[arg(long, default_value_t = 1e-6)]
        step: f64,
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
    },
    /// Write raw phase files and previews (checkpoint, else initial phases).
    ExportPhase(WithCheckpoint),
    /// Solve fabrication height maps for a checkpoint.
    ExportHeights(WithCheckpoint),
    /// Latency, path length and size of the configured system.
    Metrics(Common),
}

#[derive(Debug)]
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

trait ExitWith<T> {
    fn exit(self, code: u8) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> ExitWith<T> for std::result::Result<T, E> {
    fn exit(self, code: u8) -> CliResult<T> {
        self.map_err(|e| Failure {
            code,
            error: e.into(),
        })
    }
}

fn load_config(common: &Common) -> CliResult<(RunConfig, PathBuf)> {
    let mut cfg = RunConfig::load(&common.config, &common.overrides).exit(EXIT_CONFIG)?;
    if let Some(seed) = common.seed {
        cfg.run.seed = seed;
    }
    let out = common.out.clone().unwrap_or_else(|| cfg.run.out_dir.clone());
    cfg.run.out_dir = out.clone();
    let cfg = cfg.resolved().exit(EXIT_CONFIG)?;
    Ok((cfg, out))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .exit(EXIT_FAILURE)
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .exit(EXIT_FAILURE)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).exit(EXIT_FAILURE)?;
    write_text(path, &(text + "\n"))
}

fn checkpoint_dir(args: &WithCheckpoint, out: &Path) -> PathBuf {
    args.checkpoint
        .clone()
        .unwrap_or_else(|| out.join("checkpoint"))
}

fn load_checkpoint(dir: &Path, cfg: &RunConfig) -> CliResult<PhaseStack> {
    if !dir.is_dir() {
        return Err(Failure {
            code: EXIT_CHECKPOINT,
            error: anyhow::anyhow!("checkpoint directory {} not found", dir.display()),
        });
    }
    let phases = import_phase(dir).exit(EXIT_CHECKPOINT)?;
    let g = &cfg.geometry;
    if phases.layer_count() != g.layers || phases.side() != g.side {
        return Err(Failure {
            code: EXIT_CHECKPOINT,
            error: anyhow::anyhow!(
                "checkpoint has {} layers of {}x{}, config expects {} of {}x{}",
                phases.layer_count(),
                phases.side(),
                phases.side(),
                g.layers,
                g.side,
                g.side
            ),
        });
    }
    Ok(phases)
}

fn cmd_train(common: &Common) -> CliResult<()> {
    let (cfg, out) = load_config(common)?;
    create_dir(&out)?;
    write_text(&out.join("config.toml"), &cfg.to_toml())?;
    let sets = cfg.load_sets(Split::Train).exit(EXIT_DATASET)?;
    let model = cfg.model().exit(EXIT_CONFIG)?;
    let tc = cfg.train_config();

    let history_path = out.join("history.jsonl");
    let mut history = BufWriter::new(File::create(&history_path).exit(EXIT_FAILURE)?);
    let mut write_err = None;
    let started = Instant::now();
    eprintln!(
        "training {} task(s), {} samples/epoch, {} epochs",
        sets.len(),
        sets.iter().map(|s| s.len()).max().unwrap_or(0),
        tc.epochs
    );
    let outcome = train(&model, &tc, &sets, |rec| {
        eprintln!(
            "epoch {} lr {:.3e} loss {:.5} acc {:?} ({:.1}s)",
            rec.epoch, rec.learning_rate, rec.mean_loss, rec.train_accuracy, rec.seconds
        );
        let line = serde_json::to_string(rec).expect("record serializes");
        if let Err(e) = writeln!(history, "{line}").and_then(|_| history.flush()) {
            write_err.get_or_insert(e);
        }
    })
    .exit(EXIT_FAILURE)?;
    if let Some(e) = write_err {
        return Err(e).exit(EXIT_FAILURE);
    }

    let ckpt = out.join("checkpoint");
    export_phase(&outcome.phases, &ckpt).exit(EXIT_FAILURE)?;
    write_text(&ckpt.join("config.toml"), &cfg.to_toml())?;
    let last = outcome.history.last().expect("epochs >= 1");
    write_json(
        &out.join("summary.json"),
        &json!({
            "epochs": outcome.history.len(),
            "final_loss": last.mean_loss,
            "final_train_accuracy": last.train_accuracy,
            "logit_scale": cfg.train.logit_scale,
            "seconds": started.elapsed().as_secs_f64(),
            "checkpoint": ckpt,
        }),
    )?;
    println!("checkpoint written to {}", ckpt.display());
    Ok(())
}

fn cmd_evaluate(args: &WithCheckpoint) -> CliResult<()> {
    let (cfg, out) = load_config(&args.common)?;
    let phases = load_checkpoint(&checkpoint_dir(args, &out), &cfg)?;
    let sets = cfg.load_sets(Split::Test).exit(EXIT_DATASET)?;
    let model = cfg.model().exit(EXIT_CONFIG)?;
    let metrics = evaluate(&model, &phases, &sets, cfg.train.interpolation).exit(EXIT_FAILURE)?;
    create_dir(&out)?;
    for t in 0..metrics.accuracy.len() {
        write_text(&out.join(format!("confusion_task{t}.csv")), &metrics.confusion_csv(t))?;
        write_text(&out.join(format!("energy_task{t}.csv")), &metrics.energy_csv(t))?;
        println!(
            "task {t}: accuracy {:.2}% on {} samples",
            100.0 * metrics.accuracy[t],
            metrics.samples[t]
        );
    }
    write_json(&out.join("metrics.json"), &metrics)
}

fn cmd_infer(args: &WithCheckpoint, index: &[usize]) -> CliResult<()> {
    let (cfg, out) = load_config(&args.common)?;
    let phases = load_checkpoint(&checkpoint_dir(args, &out), &cfg)?;
    let sets = cfg.load_sets(Split::Test).exit(EXIT_DATASET)?;
    let model = cfg.model().exit(EXIT_CONFIG)?;
    let tasks = sets.len();
    let index: Vec<usize> = match index.len() {
        1 => vec![index[0]; tasks],
        n if n == tasks => index.to_vec(),
        n => {
            return Err(anyhow::anyhow!("{n} indices for {tasks} tasks")).exit(EXIT_CONFIG);
        }
    };
    let mut amps = Vec::with_capacity(tasks);
    let mut labels = Vec::with_capacity(tasks);
    for (set, &i) in sets.iter().zip(&index) {
        if i >= set.len() {
            return Err(anyhow::anyhow!("index {i} beyond test set of {}", set.len()))
                .exit(EXIT_DATASET);
        }
        let s = preprocess_index(set, i, cfg.geometry.side, cfg.train.interpolation)
            .exit(EXIT_DATASET)?;
        amps.push(s.field);
        labels.push(s.label);
    }
    let inf = model.infer(&phases, &amps).exit(EXIT_FAILURE)?;
    create_dir(&out)?;
    for (c, map) in inf.intensities.iter().enumerate() {
        let img = intensity_preview(map, Some(model.layout()));
        write_pgm(out.join(format!("intensity_channel{c}.pgm")), &img).exit(EXIT_FAILURE)?;
    }
    for t in 0..tasks {
        println!(
            "task {t}: sample {} label {} predicted {}",
            index[t], labels[t], inf.predictions[t]
        );
    }
    write_json(
        &out.join("infer.json"),
        &json!({
            "index": index,
            "labels": labels,
            "predictions": inf.predictions,
            "scores": inf.scores.iter().map(|s| s.as_slice()).collect::<Vec<_>>(),
        }),
    )
}

fn cmd_gradcheck(common: &Common, samples: usize, step: f64, tolerance: f64) -> CliResult<()> {
    let (cfg, _) = load_config(common)?;
    let model = cfg.model().exit(EXIT_CONFIG)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
    let side = cfg.geometry.side;
    let phases = PhaseStack::random_uniform(cfg.geometry.layers, side, &mut rng);
    let amps: Vec<Array2<f64>> = (0..model.task_count())
        .map(|_| Array2::from_shape_simple_fn((side, side), || rng.random::<f64>()))
        .collect();
    let labels: Vec<usize> = (0..model.task_count())
        .map(|_| rng.random_range(0..model.category_count()))
        .collect();
    let (_, grad, _) = model
        .loss_and_gradient(&phases, &amps, &labels)
        .exit(EXIT_FAILURE)?;
    let samples = samples.min(phases.parameter_count());
    let report = finite_diff_check(
        |p| model.loss(p, &amps, &labels).map(|r| r.total),
        &grad,
        &phases,
        step,
        samples,
        1e-8,
        &mut rng,
    )
    .exit(EXIT_FAILURE)?;
    println!(
        "gradcheck: {} parameters, {:?} filter, max relative error {:.3e} (tolerance {:.0e})",
        report.samples.len(),
        cfg.train.filter,
        report.max_relative_error,
        tolerance
    );
    if report.max_relative_error > tolerance {
        return Err(anyhow::anyhow!(
            "max relative error {:.3e} exceeds {:.0e}",
            report.max_relative_error,
            tolerance
        ))
        .exit(EXIT_GRADCHECK);
    }
    Ok(())
}

fn cmd_export_phase(args: &WithCheckpoint) -> CliResult<()> {
    let (cfg, out) = load_config(&args.common)?;
    let ckpt = checkpoint_dir(args, &out);
    let phases = if args.checkpoint.is_some() || ckpt.is_dir() {
        load_checkpoint(&ckpt, &cfg)?
    } else {
        let model = cfg.model().exit(EXIT_CONFIG)?;
        init_phases(&model, cfg.train.init, cfg.run.seed)
    };
    let dir = out.join("phase");
    let files = export_phase(&phases, &dir).exit(EXIT_FAILURE)?;
    println!("wrote {} files to {}", files.len(), dir.display());
    Ok(())
}

fn cmd_export_heights(args: &WithCheckpoint) -> CliResult<()> {
    let (cfg, out) = load_config(&args.common)?;
    let phases = load_checkpoint(&checkpoint_dir(args, &out), &cfg)?;
    let wavelengths = cfg.wavelengths();
    let n = cfg.refractive_indices();
    let maps = phases
        .wrapped()
        .iter()
        .map(|layer| solve_doe_heights(layer, &wavelengths, &n, cfg.doe.max_order))
        .collect::<mwdnn::Result<Vec<_>>>()
        .exit(EXIT_FAILURE)?;
    let dir = out.join("heights");
    export_heights(&maps, &dir).exit(EXIT_FAILURE)?;
    let summary: Vec<_> = maps
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let max = m.heights.iter().cloned().fold(0.0, f64::max);
            println!(
                "layer {i}: max height {:.3} um, residual rms {:?} rad",
                max * 1e6,
                m.residual_rms
            );
            json!({ "layer": i, "max_height_m": max, "residual_rms_rad": m.residual_rms })
        })
        .collect();
    write_json(
        &dir.join("heights.json"),
        &json!({
            "wavelengths_m": wavelengths,
            "refractive_index": n,
            "max_order": cfg.doe.max_order,
            "layers": summary,
        }),
    )
}

fn cmd_metrics(common: &Common) -> CliResult<()> {
    let (cfg, _) = load_config(common)?;
    let geometry = cfg.geometry().exit(EXIT_CONFIG)?;
    let m = optical_metrics(&geometry, cfg.metrics.detector_rate_ghz * 1e9).exit(EXIT_CONFIG)?;
    println!("{}", serde_json::to_string_pretty(&m).exit(EXIT_FAILURE)?);
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match &cli.command {
        Command::Train(c) => cmd_train(c),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Infer { ckpt, index } => cmd_infer(ckpt, index),
        Command::Gradcheck {
            common,
            samples,
            step,
            tolerance,
        } => cmd_gradcheck(common, *samples, *step, *tolerance),
        Command::ExportPhase(a) => cmd_export_phase(a),
        Command::ExportHeights(a) => cmd_export_heights(a),
        Command::Metrics(c) => cmd_metrics(c),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
