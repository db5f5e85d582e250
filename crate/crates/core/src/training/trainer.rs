use std::time::Instant;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::MultiTaskModel;
use super::optimizer::{adam_step, lr_schedule, AdamParams, AdamState};
use crate::data::{batch_iter, preprocess_index, Interpolation, LabeledImageSet};
use crate::error::{Error, Result};
use crate::grad::PhaseGradient;
use crate::optics::PhaseStack;
use crate::readout::energy_distribution;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseInit {
    /// Uniform in [0, 2π).
    #[default]
    Uniform,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub seed: u64,
    pub init: PhaseInit,
    pub interpolation: Interpolation,
    pub adam: AdamParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 5,
            learning_rate: 0.01,
            lr_decay: 0.5,
            seed: 0,
            init: PhaseInit::Uniform,
            interpolation: Interpolation::Bilinear,
            adam: AdamParams::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::Config("learning_rate must be >= 0".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config("lr_decay must be in (0, 1]".into()));
        }
        Ok(())
    }
}

pub fn init_phases(model: &MultiTaskModel, init: PhaseInit, seed: u64) -> PhaseStack {
    let geo = model.geometry();
    match init {
        PhaseInit::Zero => PhaseStack::zeros(geo.layer_count(), geo.grid().side()),
        PhaseInit::Uniform => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            PhaseStack::random_uniform(geo.layer_count(), geo.grid().side(), &mut rng)
        }
    }
}

/// Summary of one training epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub samples: usize,
    pub mean_loss: f64,
    pub mean_cross_entropy: f64,
    pub mean_penalty: f64,
    pub train_accuracy: Vec<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub phases: PhaseStack,
    pub history: Vec<EpochRecord>,
}

fn check_sets(model: &MultiTaskModel, sets: &[LabeledImageSet]) -> Result<()> {
    if sets.len() != model.task_count() {
        return Err(Error::ChannelMismatch {
            expected: model.task_count(),
            actual: sets.len(),
        });
    }
    for s in sets {
        if s.is_empty() {
            return Err(Error::Empty("dataset".into()));
        }
        s.validate_labels(model.category_count())?;
    }
    Ok(())
}

fn sample_inputs(
    model: &MultiTaskModel,
    sets: &[LabeledImageSet],
    tuple: &[usize],
    interp: Interpolation,
) -> Result<(Vec<Array2<f64>>, Vec<usize>)> {
    let side = model.geometry().grid().side();
    let mut amps = Vec::with_capacity(sets.len());
    let mut labels = Vec::with_capacity(sets.len());
    for (set, &i) in sets.iter().zip(tuple) {
        let s = preprocess_index(set, i, side, interp)?;
        amps.push(s.field);
        labels.push(s.label);
    }
    Ok((amps, labels))
}

/// Mini-batch Adam on the joint objective starting from `config.init`.
pub fn train(
    model: &MultiTaskModel,
    config: &TrainConfig,
    sets: &[LabeledImageSet],
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    let phases = init_phases(model, config.init, config.seed);
    train_from(model, config, sets, phases, on_epoch)
}

/// Like [`train`] but from given phases. Per-sample gradients are computed
/// in parallel and summed in batch order, so results do not depend on the
/// thread count.
pub fn train_from(
    model: &MultiTaskModel,
    config: &TrainConfig,
    sets: &[LabeledImageSet],
    mut phases: PhaseStack,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    check_sets(model, sets)?;
    let lengths: Vec<usize> = sets.iter().map(|s| s.len()).collect();
    let tasks = model.task_count();
    let mut adam = AdamState::new(&phases, config.adam);
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let started = Instant::now();
        let lr = lr_schedule(epoch, config.learning_rate, config.lr_decay);
        let mut loss_sum = 0.0;
        let mut ce_sum = 0.0;
        let mut pen_sum = 0.0;
        let mut correct = vec![0usize; tasks];
        let mut seen = 0usize;

        for batch in batch_iter(&lengths, config.batch_size, config.seed, epoch)? {
            let results: Vec<_> = batch
                .par_iter()
                .map(|tuple| {
                    let (amps, labels) = sample_inputs(model, sets, tuple, config.interpolation)?;
                    let (report, grad, preds) = model.loss_and_gradient(&phases, &amps, &labels)?;
                    Ok((report, grad, preds, labels))
                })
                .collect::<Result<_>>()?;

            let mut grad = PhaseGradient::zeros_like(&phases);
            for (report, g, preds, labels) in &results {
                grad.add_assign(g);
                loss_sum += report.total;
                ce_sum += report.cross_entropy.iter().sum::<f64>();
                pen_sum += report.weighted_penalty();
                for t in 0..tasks {
                    correct[t] += usize::from(preds[t] == labels[t]);
                }
            }
            seen += results.len();
            grad.scale(1.0 / results.len() as f64);
            adam_step(&mut phases, &grad, &mut adam, lr)?;
        }

        let n = seen as f64;
        let record = EpochRecord {
            epoch,
            learning_rate: lr,
            samples: seen,
            mean_loss: loss_sum / n,
            mean_cross_entropy: ce_sum / n,
            mean_penalty: pen_sum / n,
            train_accuracy: correct.iter().map(|&c| c as f64 / n).collect(),
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        history.push(record);
    }
    Ok(TrainOutcome { phases, history })
}

/// Test-set accuracy, confusion and energy matrices per task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub accuracy: Vec<f64>,
    pub samples: Vec<usize>,
    /// confusion[task][true][predicted]
    pub confusion: Vec<Vec<Vec<u64>>>,
    /// energy[task][true][category]: mean energy percentage per true class
    pub energy: Vec<Vec<Vec<f64>>>,
    /// Mean energy percentage landing on the correct category, per task.
    pub correct_energy: Vec<f64>,
}

impl EvalMetrics {
    pub fn confusion_csv(&self, task: usize) -> String {
        table_csv(&self.confusion[task], |v| v.to_string())
    }

    pub fn energy_csv(&self, task: usize) -> String {
        table_csv(&self.energy[task], |v| format!("{v:.4}"))
    }
}

fn table_csv<T>(rows: &[Vec<T>], fmt: impl Fn(&T) -> String) -> String {
    let m = rows.len();
    let mut out = String::from("true\\pred");
    for j in 0..m {
        out.push_str(&format!(",{j}"));
    }
    out.push('\n');
    for (i, row) in rows.iter().enumerate() {
        out.push_str(&i.to_string());
        for v in row {
            out.push(',');
            out.push_str(&fmt(v));
        }
        out.push('\n');
    }
    out
}

/// Pairs the k-th sample of every test set. Sets shorter than the longest
/// are cycled to fill their channel but each sample is scored once.
pub fn evaluate(
    model: &MultiTaskModel,
    phases: &PhaseStack,
    sets: &[LabeledImageSet],
    interp: Interpolation,
) -> Result<EvalMetrics> {
    check_sets(model, sets)?;
    let tasks = model.task_count();
    let m = model.category_count();
    let longest = sets.iter().map(|s| s.len()).max().expect("checked");

    let per_sample: Vec<_> = (0..longest)
        .into_par_iter()
        .map(|k| {
            let tuple: Vec<usize> = sets.iter().map(|s| k % s.len()).collect();
            let (amps, labels) = sample_inputs(model, sets, &tuple, interp)?;
            let inf = model.infer(phases, &amps)?;
            Ok((inf, labels))
        })
        .collect::<Result<_>>()?;

    let mut confusion = vec![vec![vec![0u64; m]; m]; tasks];
    let mut energy_sum = vec![vec![vec![0.0; m]; m]; tasks];
    let mut energy_n = vec![vec![0usize; m]; tasks];
    let mut correct = vec![0usize; tasks];
    let mut samples = vec![0usize; tasks];
    for (k, (inf, labels)) in per_sample.iter().enumerate() {
        for t in 0..tasks {
            if k >= sets[t].len() {
                continue;
            }
            let truth = labels[t];
            let pred = inf.predictions[t];
            samples[t] += 1;
            correct[t] += usize::from(truth == pred);
            confusion[t][truth][pred] += 1;
            if let Ok(e) = energy_distribution(inf.scores[t].as_slice()) {
                for (acc, v) in energy_sum[t][truth].iter_mut().zip(e) {
                    *acc += v;
                }
                energy_n[t][truth] += 1;
            }
        }
    }
    let energy: Vec<Vec<Vec<f64>>> = energy_sum
        .into_iter()
        .zip(&energy_n)
        .map(|(rows, counts)| {
            rows.into_iter()
                .zip(counts)
                .map(|(row, &n)| {
                    if n == 0 {
                        row
                    } else {
                        row.into_iter().map(|v| v / n as f64).collect()
                    }
                })
                .collect()
        })
        .collect();
    let correct_energy = (0..tasks)
        .map(|t| {
            let (mut s, mut n) = (0.0, 0usize);
            for c in 0..m {
                if energy_n[t][c] > 0 {
                    s += energy[t][c][c] * energy_n[t][c] as f64;
                    n += energy_n[t][c];
                }
            }
            if n == 0 {
                0.0
            } else {
                s / n as f64
            }
        })
        .collect();
    Ok(EvalMetrics {
        accuracy: correct
            .iter()
            .zip(&samples)
            .map(|(&c, &n)| c as f64 / n as f64)
            .collect(),
        samples,
        confusion,
        energy,
        correct_energy,
    })
}
