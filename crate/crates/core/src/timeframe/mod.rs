//! From per-sample relevance to a dataset-level classification timeframe.
//!
//! Each sample's `|R_t|` is scaled to a maximum of one, the scaled vectors
//! are aggregated per timestep, and the `n` highest-scoring timesteps bound
//! the window `Δt_n`.

mod export;

use chrono::NaiveDate;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::dataio::{DateAxis, Dataset};
use crate::error::{Error, Result};
use crate::lrp::{explain, timestep_relevance, LrpConfig, LrpDiagnostics};
use crate::model::{argmax, ModelInput, Parameters};
use crate::scalar::Scalar;

pub use export::{read_profile, write_profile, write_timeframes, ProfileTable, POOLED_LABEL};

/// Default threshold for [`dominant_peaks`].
pub const PEAK_THRESHOLD: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    #[default]
    Mean,
    Median,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AggregateOptions {
    pub statistic: Statistic,
    /// Use only samples the model classifies correctly.
    pub correct_only: bool,
}

impl Default for AggregateOptions {
    fn default() -> Self {
        Self {
            statistic: Statistic::Mean,
            correct_only: true,
        }
    }
}

/// `R_t` of one sample with its label and the model's prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRelevance {
    pub index: usize,
    pub label: usize,
    pub predicted: usize,
    pub target_class: usize,
    pub values: Vec<f64>,
}

impl SampleRelevance {
    pub fn correct(&self) -> bool {
        self.label == self.predicted
    }
}

/// Explains every sample of `ds`; diagnostics of all calls are merged.
pub fn sample_relevances<S: Scalar>(
    params: &Parameters<S>,
    ds: &Dataset,
    lrp: &LrpConfig,
) -> Result<(Vec<SampleRelevance>, LrpDiagnostics)> {
    let days = ds.axis.days_of_year();
    let mut diag = LrpDiagnostics::default();
    let mut out = Vec::with_capacity(ds.len());
    for (index, s) in ds.samples.iter().enumerate() {
        let e = explain(params, &ModelInput::new(s, &days), &s.parcel_id, lrp)?;
        diag.merge(&e.diagnostics);
        let rt = timestep_relevance(&e.map);
        out.push(SampleRelevance {
            index,
            label: s.label,
            predicted: argmax(e.trace.logits.as_slice().expect("standard layout")),
            target_class: e.map.target_class,
            values: rt.values.iter().map(|v| v.to_f64_lossy()).collect(),
        });
    }
    Ok((out, diag))
}

/// `|r| / max|r|`, or `None` when `r` is identically zero.
pub fn normalize_linf(r: &[f64]) -> Option<Vec<f64>> {
    let max = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max == 0.0 || !max.is_finite() {
        return None;
    }
    Some(r.iter().map(|v| v.abs() / max).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceProfile {
    /// Aggregated score per timestep over all used samples.
    pub per_timestep: Vec<f64>,
    /// `C × T`; a class without used samples has a zero row.
    pub per_class: Option<Array2<f64>>,
    pub class_counts: Vec<usize>,
    pub n_samples_used: usize,
    /// Samples whose `R_t` was identically zero.
    pub n_zero_excluded: usize,
    pub n_incorrect_excluded: usize,
    pub statistic: Statistic,
}

fn statistic_of(values: &mut [f64], stat: Statistic) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    match stat {
        Statistic::Mean => values.iter().sum::<f64>() / values.len() as f64,
        Statistic::Median => {
            values.sort_by(f64::total_cmp);
            let m = values.len() / 2;
            if values.len() % 2 == 1 {
                values[m]
            } else {
                0.5 * (values[m - 1] + values[m])
            }
        }
    }
}

fn aggregate_rows(rows: &[&Vec<f64>], n_t: usize, stat: Statistic) -> Vec<f64> {
    let mut column = Vec::with_capacity(rows.len());
    (0..n_t)
        .map(|t| {
            column.clear();
            column.extend(rows.iter().map(|r| r[t]));
            statistic_of(&mut column, stat)
        })
        .collect()
}

/// Aggregates already computed per-sample relevances.
pub fn profile_from_relevances(
    samples: &[SampleRelevance],
    n_classes: usize,
    n_timesteps: usize,
    options: &AggregateOptions,
) -> Result<RelevanceProfile> {
    let mut used: Vec<(usize, Vec<f64>)> = Vec::new();
    let mut n_zero = 0;
    let mut n_incorrect = 0;
    for s in samples {
        if s.values.len() != n_timesteps {
            return Err(Error::Range(format!(
                "sample {} has {} timesteps, expected {n_timesteps}",
                s.index,
                s.values.len()
            )));
        }
        if options.correct_only && !s.correct() {
            n_incorrect += 1;
            continue;
        }
        match normalize_linf(&s.values) {
            Some(v) => used.push((s.label, v)),
            None => n_zero += 1,
        }
    }

    let all: Vec<&Vec<f64>> = used.iter().map(|(_, v)| v).collect();
    let per_timestep = aggregate_rows(&all, n_timesteps, options.statistic);
    let mut per_class = Array2::zeros((n_classes, n_timesteps));
    let mut class_counts = vec![0; n_classes];
    for c in 0..n_classes {
        let rows: Vec<&Vec<f64>> = used.iter().filter(|(l, _)| *l == c).map(|(_, v)| v).collect();
        class_counts[c] = rows.len();
        per_class
            .row_mut(c)
            .assign(&Array1::from(aggregate_rows(&rows, n_timesteps, options.statistic)));
    }
    Ok(RelevanceProfile {
        per_timestep,
        per_class: Some(per_class),
        class_counts,
        n_samples_used: used.len(),
        n_zero_excluded: n_zero,
        n_incorrect_excluded: n_incorrect,
        statistic: options.statistic,
    })
}

/// Dataset-level relevance profile of `params` on `ds`.
pub fn aggregate_relevance<S: Scalar>(
    params: &Parameters<S>,
    ds: &Dataset,
    lrp: &LrpConfig,
    options: &AggregateOptions,
) -> Result<RelevanceProfile> {
    if ds.is_empty() {
        return Err(Error::Range("cannot aggregate relevance over an empty dataset".into()));
    }
    let (samples, _) = sample_relevances(params, ds, lrp)?;
    profile_from_relevances(&samples, ds.n_classes(), ds.n_timesteps(), options)
}

/// Indices of the `n` largest scores in ascending order; ties go to the
/// earlier timestep.
pub fn top_n_timesteps(scores: &[f64], n: usize) -> Result<Vec<usize>> {
    if n == 0 || n > scores.len() {
        return Err(Error::Range(format!("n = {n} outside 1..={}", scores.len())));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut top = order[..n].to_vec();
    top.sort_unstable();
    Ok(top)
}

/// The date range spanned by the top-`n` timesteps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Timeframe {
    pub n: usize,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub member_indices: Vec<usize>,
}

impl Timeframe {
    /// Whether `self` lies within `other` as a date interval.
    pub fn within(&self, other: &Timeframe) -> bool {
        other.start <= self.start && self.end <= other.end
    }

    pub fn length_days(&self) -> i64 {
        (self.end - self.start).num_days()
    }

    /// The whole axis as a window.
    pub fn full_span(axis: &DateAxis) -> Result<Self> {
        let all: Vec<usize> = (0..axis.len()).collect();
        bounding_window(&all, axis, axis.len())
    }
}

pub fn bounding_window(indices: &[usize], axis: &DateAxis, n: usize) -> Result<Timeframe> {
    let (Some(&lo), Some(&hi)) = (indices.iter().min(), indices.iter().max()) else {
        return Err(Error::Range("empty timestep set".into()));
    };
    if hi >= axis.len() {
        return Err(Error::Range(format!("timestep {hi} outside axis of {}", axis.len())));
    }
    let mut member_indices = indices.to_vec();
    member_indices.sort_unstable();
    member_indices.dedup();
    Ok(Timeframe {
        n,
        start: axis.dates()[lo],
        end: axis.dates()[hi],
        member_indices,
    })
}

/// `Δt_n` for each `n` from one profile.
pub fn timeframes(scores: &[f64], axis: &DateAxis, ns: &[usize]) -> Result<Vec<Timeframe>> {
    ns.iter()
        .map(|&n| bounding_window(&top_n_timesteps(scores, n)?, axis, n))
        .collect()
}

/// Local maxima of `|scores|` strictly above `threshold`.
///
/// A run of equal values counts once, at its first index, and is a maximum
/// when the values just outside the run are lower.
pub fn dominant_peaks(scores: &[f64], threshold: f64) -> Vec<(usize, f64)> {
    let a: Vec<f64> = scores.iter().map(|v| v.abs()).collect();
    let mut peaks = Vec::new();
    let mut i = 0;
    while i < a.len() {
        let mut j = i;
        while j + 1 < a.len() && a[j + 1] == a[i] {
            j += 1;
        }
        let left_ok = i == 0 || a[i - 1] < a[i];
        let right_ok = j + 1 == a.len() || a[j + 1] < a[i];
        if left_ok && right_ok && a[i] > threshold {
            peaks.push((i, a[i]));
        }
        i = j + 1;
    }
    peaks
}

/// Restricts `ds` to the dates in `[tf.start, tf.end]`. Samples with no
/// observation left inside the window are dropped.
pub fn prune_to_window(ds: &Dataset, tf: &Timeframe) -> Result<Dataset> {
    let keep: Vec<usize> = ds
        .axis
        .dates()
        .iter()
        .enumerate()
        .filter(|(_, d)| tf.start <= **d && **d <= tf.end)
        .map(|(i, _)| i)
        .collect();
    let (Some(&lo), Some(&hi)) = (keep.first(), keep.last()) else {
        return Err(Error::Pruning(format!(
            "window {}..{} does not overlap the axis",
            tf.start, tf.end
        )));
    };
    let axis = DateAxis::new(ds.axis.dates()[lo..=hi].to_vec())?;
    let samples = ds
        .samples
        .iter()
        .filter(|s| s.mask[lo..=hi].iter().any(|&m| m))
        .map(|s| {
            let mut s2 = s.clone();
            s2.values = s.values.slice(ndarray::s![.., lo..=hi]).to_owned();
            s2.mask = s.mask[lo..=hi].to_vec();
            s2
        })
        .collect();
    Ok(Dataset {
        samples,
        axis,
        class_names: ds.class_names.clone(),
        band_names: ds.band_names.clone(),
    })
}

#[cfg(test)]
mod tests;
