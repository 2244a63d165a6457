//! Mini-batch training (cross-entropy + Adam), gradient verification and
//! evaluation metrics.

mod adam;
mod backward;
mod gradcheck;
mod metrics;

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::model::{argmax, forward, ModelInput, Parameters};
use crate::scalar::Scalar;

pub use adam::Adam;
pub use backward::{batch_loss, cross_entropy, loss_and_grad, LabeledInput};
pub use gradcheck::{
    check_indices, compare_gradient, grad_check, relative_error, GradCheckReport, MIN_CHECKED,
};
pub use metrics::Metrics;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Share of the training samples held out for model selection.
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            validation_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.learning_rate, self.adam_beta1, self.adam_beta2, self.adam_eps];
        if self.batch_size == 0 || positive.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config("training hyperparameters must be positive".into()));
        }
        if self.adam_beta1 >= 1.0 || self.adam_beta2 >= 1.0 {
            return Err(Error::Config("Adam betas must be below 1".into()));
        }
        if !(0.0..=0.5).contains(&self.validation_fraction) {
            return Err(Error::Config(format!(
                "validation_fraction {} outside [0, 0.5]",
                self.validation_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    /// Running accuracy over the epoch's mini-batches.
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

/// Model inputs for every sample, sharing the dataset's day-of-year axis.
pub fn labeled_inputs<'a>(ds: &'a Dataset, days: &'a [u16]) -> Vec<LabeledInput<'a>> {
    ds.samples
        .iter()
        .map(|s| LabeledInput {
            input: ModelInput::new(s, days),
            label: s.label,
            id: &s.parcel_id,
        })
        .collect()
}

fn check_labels<S: Scalar>(params: &Parameters<S>, ds: &Dataset) -> Result<()> {
    if ds.n_bands() != params.config.n_bands {
        return Err(Error::Inference(format!(
            "dataset has {} bands, model expects {}",
            ds.n_bands(),
            params.config.n_bands
        )));
    }
    if let Some(s) = ds.samples.iter().find(|s| s.label >= params.config.n_classes) {
        return Err(Error::Schema(format!(
            "sample {} has label {} but the model has {} classes",
            s.parcel_id, s.label, params.config.n_classes
        )));
    }
    Ok(())
}

fn loss_and_accuracy<S: Scalar>(params: &Parameters<S>, items: &[LabeledInput<'_>]) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut correct = 0usize;
    for item in items {
        let tr = forward(params, &item.input)?;
        loss += cross_entropy(&tr.logits, item.label).to_f64_lossy();
        if argmax(tr.logits.as_slice().expect("standard layout")) == item.label {
            correct += 1;
        }
    }
    let n = items.len().max(1) as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Trains with Adam and returns the parameters of the epoch with the best
/// validation accuracy (the last epoch without a validation split).
pub fn train<S: Scalar>(
    params: &Parameters<S>,
    train_ds: &Dataset,
    config: &TrainConfig,
) -> Result<(Parameters<S>, Vec<EpochRecord>)> {
    train_with_progress(params, train_ds, config, |_| {})
}

pub fn train_with_progress<S: Scalar>(
    params: &Parameters<S>,
    train_ds: &Dataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Parameters<S>, Vec<EpochRecord>)> {
    config.validate()?;
    if train_ds.is_empty() {
        return Err(Error::Range("training set is empty".into()));
    }
    check_labels(params, train_ds)?;

    let days = train_ds.axis.days_of_year();
    let items = labeled_inputs(train_ds, &days);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut order: Vec<usize> = (0..items.len()).collect();
    let n_val = if config.validation_fraction > 0.0 && items.len() >= 2 {
        ((items.len() as f64 * config.validation_fraction).round() as usize).clamp(1, items.len() - 1)
    } else {
        0
    };
    order.shuffle(&mut rng);
    let val: Vec<LabeledInput> = order[..n_val].iter().map(|&i| items[i]).collect();
    let mut fit: Vec<LabeledInput> = order[n_val..].iter().map(|&i| items[i]).collect();

    let mut current = params.clone();
    let mut best = params.clone();
    let mut best_acc = f64::NEG_INFINITY;
    let mut adam = Adam::new(
        &current,
        config.learning_rate,
        config.adam_beta1,
        config.adam_beta2,
        config.adam_eps,
    );
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        fit.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in fit.chunks(config.batch_size) {
            let mut grad = current.zeros_like();
            let stats = backward::accumulate(&current, batch, &mut grad).map_err(|e| match e {
                Error::Numeric { sample } => Error::Training {
                    epoch,
                    message: format!("non-finite loss on sample {sample}"),
                },
                other => other,
            })?;
            loss_sum += stats.loss.to_f64_lossy() * batch.len() as f64;
            correct += stats.correct;
            adam.step(&mut current, &grad);
        }
        if !current.all_finite() {
            return Err(Error::Training {
                epoch,
                message: "parameters became non-finite".into(),
            });
        }

        let (val_loss, val_accuracy) = if val.is_empty() {
            (None, None)
        } else {
            let (l, a) = loss_and_accuracy(&current, &val)?;
            (Some(l), Some(a))
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / fit.len() as f64,
            train_accuracy: correct as f64 / fit.len() as f64,
            val_loss,
            val_accuracy,
        };
        if !record.train_loss.is_finite() {
            return Err(Error::Training {
                epoch,
                message: "training loss is not finite".into(),
            });
        }
        match val_accuracy {
            Some(a) if a > best_acc => {
                best_acc = a;
                best = current.clone();
            }
            Some(_) => {}
            None => best = current.clone(),
        }
        on_epoch(&record);
        history.push(record);
    }
    Ok((best, history))
}

/// Predicts every sample of `ds` and tabulates the outcome.
pub fn evaluate<S: Scalar>(params: &Parameters<S>, ds: &Dataset) -> Result<Metrics> {
    check_labels(params, ds)?;
    let days = ds.axis.days_of_year();
    let mut predicted = Vec::with_capacity(ds.len());
    for s in &ds.samples {
        let tr = forward(params, &ModelInput::new(s, &days))?;
        predicted.push(argmax(tr.logits.as_slice().expect("standard layout")));
    }
    Ok(Metrics::from_predictions(
        &ds.labels(),
        &predicted,
        params.config.n_classes,
    ))
}

/// Writes `epoch,train_loss,train_acc,val_loss,val_acc` rows; validation
/// columns stay empty without a validation split.
pub fn write_history<W: Write>(history: &[EpochRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "epoch,train_loss,train_acc,val_loss,val_acc")?;
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for r in history {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.epoch,
            r.train_loss,
            r.train_accuracy,
            opt(r.val_loss),
            opt(r.val_accuracy)
        )?;
    }
    Ok(())
}
