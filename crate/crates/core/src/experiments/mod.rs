//! Validation studies: timestep-removal curves and retraining on windows.

use std::io::Write;

use chrono::NaiveDate;
use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::lrp::export::{csv_err, csv_writer, format_f64};
use crate::lrp::{explain, timestep_relevance, LrpConfig};
use crate::model::{forward, init_model, ModelConfig, ModelInput, Parameters};
use crate::scalar::Scalar;
use crate::timeframe::{prune_to_window, Timeframe};
use crate::train::{evaluate, train, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PruneMode {
    TargetedLeastFirst,
    Random,
}

impl PruneMode {
    pub fn label(self) -> &'static str {
        match self {
            PruneMode::TargetedLeastFirst => "targeted",
            PruneMode::Random => "random",
        }
    }
}

/// Mean logit MSE after removing `n_removed[k]` timesteps.
///
/// Only observed timesteps are removed and at least one always remains, so
/// entry `k` averages over the samples with more than `k` observations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PruneCurve {
    pub n_removed: Vec<usize>,
    /// `n_removed / T`.
    pub fraction_removed: Vec<f64>,
    pub mse: Vec<f64>,
    /// Samples contributing to each entry.
    pub n_samples: Vec<usize>,
    pub n_timesteps: usize,
    pub mode: PruneMode,
    pub trials: usize,
}

impl PruneCurve {
    /// Mean MSE at the removal count closest to `fraction · T`.
    pub fn mse_at_fraction(&self, fraction: f64) -> Option<f64> {
        let k = (fraction * self.n_timesteps as f64).round() as usize;
        self.mse.get(k).copied()
    }
}

fn squared_error<S: Scalar>(a: &Array1<S>, b: &Array1<S>) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x.to_f64_lossy() - y.to_f64_lossy()).powi(2))
        .sum::<f64>()
        / a.len() as f64
}

/// Squared logit error after each removal along `order`; entry 0 is the
/// unpruned input. The last element of `order` is never removed.
fn removal_errors<S: Scalar>(
    params: &Parameters<S>,
    input: &ModelInput<'_>,
    full: &Array1<S>,
    order: &[usize],
) -> Result<Vec<f64>> {
    let mut mask = input.mask.to_vec();
    let mut errs = Vec::with_capacity(order.len());
    errs.push(0.0);
    for &t in &order[..order.len().saturating_sub(1)] {
        mask[t] = false;
        let pruned = ModelInput { mask: &mask, ..*input };
        let tr = forward(params, &pruned)?;
        errs.push(squared_error(&tr.logits, full));
    }
    Ok(errs)
}

struct CurveSum {
    sum: Vec<f64>,
    count: Vec<usize>,
}

impl CurveSum {
    fn new(n_t: usize) -> Self {
        Self {
            sum: vec![0.0; n_t],
            count: vec![0; n_t],
        }
    }

    fn add(&mut self, errs: &[f64], weight: f64) {
        for (k, e) in errs.iter().enumerate() {
            self.sum[k] += e * weight;
        }
    }

    fn finish(self, n_t: usize, mode: PruneMode, trials: usize) -> PruneCurve {
        let len = self.count.iter().rposition(|&c| c > 0).map_or(1, |k| k + 1);
        PruneCurve {
            n_removed: (0..len).collect(),
            fraction_removed: (0..len).map(|k| k as f64 / n_t as f64).collect(),
            mse: (0..len)
                .map(|k| if self.count[k] == 0 { 0.0 } else { self.sum[k] / self.count[k] as f64 })
                .collect(),
            n_samples: self.count[..len].to_vec(),
            n_timesteps: n_t,
            mode,
            trials,
        }
    }
}

/// Observed timesteps of a sample ordered by `|R_t|`, smallest first; ties
/// go to the earlier timestep.
pub fn targeted_order(rt: &[f64], mask: &[bool]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..rt.len()).filter(|&t| mask[t]).collect();
    order.sort_by(|&a, &b| rt[a].abs().total_cmp(&rt[b].abs()).then(a.cmp(&b)));
    order
}

/// Removes each sample's least relevant timestep first.
pub fn prune_curve_targeted<S: Scalar>(
    params: &Parameters<S>,
    ds: &Dataset,
    lrp: &LrpConfig,
) -> Result<PruneCurve> {
    let n_t = ds.n_timesteps();
    let days = ds.axis.days_of_year();
    let mut acc = CurveSum::new(n_t);
    for s in &ds.samples {
        let input = ModelInput::new(s, &days);
        let e = explain(params, &input, &s.parcel_id, lrp)?;
        let rt: Vec<f64> = timestep_relevance(&e.map)
            .values
            .iter()
            .map(|v| v.to_f64_lossy())
            .collect();
        let order = targeted_order(&rt, &s.mask);
        let errs = removal_errors(params, &input, &e.trace.logits, &order)?;
        acc.add(&errs, 1.0);
        for c in &mut acc.count[..errs.len()] {
            *c += 1;
        }
    }
    Ok(acc.finish(n_t, PruneMode::TargetedLeastFirst, 1))
}

/// Generator for one (sample, trial) pair; independent of evaluation order.
fn trial_rng(seed: u64, sample: usize, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((sample as u64) << 32) | trial as u64);
    rng
}

/// Removes timesteps in uniformly random order, averaged over `trials`.
pub fn prune_curve_random<S: Scalar>(
    params: &Parameters<S>,
    ds: &Dataset,
    trials: usize,
    seed: u64,
) -> Result<PruneCurve> {
    if trials == 0 {
        return Err(Error::Range("random pruning needs at least one trial".into()));
    }
    let n_t = ds.n_timesteps();
    let days = ds.axis.days_of_year();
    let mut acc = CurveSum::new(n_t);
    let w = 1.0 / trials as f64;
    for (i, s) in ds.samples.iter().enumerate() {
        let input = ModelInput::new(s, &days);
        let full = forward(params, &input)?.logits;
        let present = s.present_indices();
        for trial in 0..trials {
            let mut order = present.clone();
            order.shuffle(&mut trial_rng(seed, i, trial));
            let errs = removal_errors(params, &input, &full, &order)?;
            acc.add(&errs, w);
        }
        for c in &mut acc.count[..present.len()] {
            *c += 1;
        }
    }
    Ok(acc.finish(n_t, PruneMode::Random, trials))
}

/// Trapezoidal area under MSE against fraction removed, divided by the
/// fraction span so a constant curve `c` has area `c`.
pub fn curve_auc(curve: &PruneCurve) -> f64 {
    let x = &curve.fraction_removed;
    let y = &curve.mse;
    if x.len() < 2 {
        return y.first().copied().unwrap_or(0.0);
    }
    let area: f64 = (1..x.len())
        .map(|k| 0.5 * (y[k] + y[k - 1]) * (x[k] - x[k - 1]))
        .sum();
    area / (x[x.len() - 1] - x[0])
}

/// Areas of a targeted/random pair, both divided by the final random MSE.
pub fn normalized_auc_pair(targeted: &PruneCurve, random: &PruneCurve) -> (f64, f64) {
    let scale = random.mse.last().copied().unwrap_or(0.0);
    let scale = if scale > 0.0 { scale } else { 1.0 };
    (curve_auc(targeted) / scale, curve_auc(random) / scale)
}

pub fn write_curves<W: Write>(curves: &[&PruneCurve], out: W) -> Result<()> {
    let mut w = csv_writer(out);
    w.write_record(["n_removed", "fraction_removed", "mse", "mode"])
        .map_err(csv_err)?;
    for c in curves {
        for k in 0..c.mse.len() {
            w.write_record([
                c.n_removed[k].to_string(),
                format_f64(c.fraction_removed[k]),
                format_f64(c.mse[k]),
                c.mode.label().to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::Schema(format!("write failed: {e}")))
}

/// Accuracy of a model retrained on one window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EarlinessResult {
    /// `None` for the full span.
    pub window_n: Option<usize>,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub window_length_days: i64,
    pub n_timesteps: usize,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub n_train: usize,
    pub n_test: usize,
}

/// Trains one model on `train_ds` pruned to `window` and evaluates it on the
/// equally pruned `test_ds`.
pub fn run_window<S: Scalar>(
    train_ds: &Dataset,
    test_ds: &Dataset,
    window: &Timeframe,
    window_n: Option<usize>,
    train_config: &TrainConfig,
    model_config: &ModelConfig,
) -> Result<EarlinessResult> {
    fit_window::<S>(train_ds, test_ds, window, window_n, train_config, model_config).map(|(r, _)| r)
}

/// [`run_window`] that also returns the trained parameters.
pub fn fit_window<S: Scalar>(
    train_ds: &Dataset,
    test_ds: &Dataset,
    window: &Timeframe,
    window_n: Option<usize>,
    train_config: &TrainConfig,
    model_config: &ModelConfig,
) -> Result<(EarlinessResult, Parameters<S>)> {
    let label = window_n.map_or("full span".to_string(), |n| format!("window n={n}"));
    let tr = prune_to_window(train_ds, window)?;
    let te = prune_to_window(test_ds, window)?;
    if tr.is_empty() || te.is_empty() {
        return Err(Error::Pruning(format!("{label}: no samples observed inside the window")));
    }
    let mcfg = ModelConfig {
        max_timesteps: tr.n_timesteps(),
        ..model_config.clone()
    };
    let init: Parameters<S> = init_model(&mcfg, train_config.seed)?;
    let (params, _) = train(&init, &tr, train_config).map_err(|e| match e {
        Error::Training { epoch, message } => Error::Training {
            epoch,
            message: format!("{label}: {message}"),
        },
        other => other,
    })?;
    let result = EarlinessResult {
        window_n,
        start: window.start,
        end: window.end,
        window_length_days: window.length_days(),
        n_timesteps: tr.n_timesteps(),
        train_accuracy: evaluate(&params, &tr)?.overall_accuracy,
        test_accuracy: evaluate(&params, &te)?.overall_accuracy,
        n_train: tr.len(),
        n_test: te.len(),
    };
    Ok((result, params))
}

/// Retrains from scratch on the full span and on every window; the first
/// result is the full span.
pub fn earliness_experiment<S: Scalar>(
    train_ds: &Dataset,
    test_ds: &Dataset,
    windows: &[Timeframe],
    train_config: &TrainConfig,
    model_config: &ModelConfig,
) -> Result<Vec<EarlinessResult>> {
    let full = Timeframe::full_span(&train_ds.axis)?;
    let mut out = vec![run_window::<S>(train_ds, test_ds, &full, None, train_config, model_config)?];
    for w in windows {
        out.push(run_window::<S>(train_ds, test_ds, w, Some(w.n), train_config, model_config)?);
    }
    Ok(out)
}

/// The columns of an earliness file.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlinessRow {
    pub window_n: Option<usize>,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

impl From<&EarlinessResult> for EarlinessRow {
    fn from(r: &EarlinessResult) -> Self {
        Self {
            window_n: r.window_n,
            start: r.start,
            end: r.end,
            train_accuracy: r.train_accuracy,
            test_accuracy: r.test_accuracy,
        }
    }
}

pub fn read_earliness<R: std::io::Read>(input: R) -> Result<Vec<EarlinessRow>> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(input);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let parse_err = |message: String| Error::Parse {
            path: "earliness".into(),
            line: i as u64 + 2,
            message,
        };
        let rec = rec.map_err(|e| parse_err(e.to_string()))?;
        if rec.len() != 6 {
            return Err(parse_err(format!("expected 6 fields, found {}", rec.len())));
        }
        let date = |s: &str| NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|e| parse_err(format!("{s:?}: {e}")));
        let num = |s: &str| s.parse::<f64>().map_err(|e| parse_err(format!("{s:?}: {e}")));
        out.push(EarlinessRow {
            window_n: match &rec[0] {
                "full" => None,
                n => Some(n.parse().map_err(|e| parse_err(format!("{n:?}: {e}")))?),
            },
            start: date(&rec[1])?,
            end: date(&rec[2])?,
            train_accuracy: num(&rec[3])?,
            test_accuracy: num(&rec[4])?,
        });
    }
    Ok(out)
}

/// `window_n,start,end,train_acc,test_acc,delta_vs_full`; the full span is
/// labelled `full` and deltas are against the first full-span row.
pub fn write_earliness<W: Write>(results: &[EarlinessResult], out: W) -> Result<()> {
    let full = results
        .iter()
        .find(|r| r.window_n.is_none())
        .map(|r| r.test_accuracy);
    let mut w = csv_writer(out);
    w.write_record(["window_n", "start", "end", "train_acc", "test_acc", "delta_vs_full"])
        .map_err(csv_err)?;
    for r in results {
        let delta = full.map(|f| format_f64(r.test_accuracy - f)).unwrap_or_default();
        w.write_record([
            r.window_n.map_or("full".to_string(), |n| n.to_string()),
            r.start.format("%Y-%m-%d").to_string(),
            r.end.format("%Y-%m-%d").to_string(),
            format_f64(r.train_accuracy),
            format_f64(r.test_accuracy),
            delta,
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Schema(format!("write failed: {e}")))
}
