//! Parcel timeseries datasets: in-memory representation, long-format text
//! files, synthetic phenology and spatially blocked splitting.

mod io;
mod split;
mod synth;

use std::collections::HashSet;

use chrono::{Datelike, NaiveDate};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_dataset, load_dataset_from_reader, save_dataset, write_dataset};
pub use split::split_spatial;
pub use synth::{cloud_floor, generate_synthetic, PhenologyLayout, SynthConfig, MAX_CLEAR_REFLECTANCE};

/// Sentinel-2 band order used when a dataset has 13 bands.
pub const SENTINEL2_BANDS: [&str; 13] = [
    "B01", "B02", "B03", "B04", "B05", "B06", "B07", "B08", "B8A", "B09", "B10", "B11", "B12",
];

/// Default band names for `n` bands: the Sentinel-2 list when it is long enough.
pub fn default_band_names(n: usize) -> Vec<String> {
    if n <= SENTINEL2_BANDS.len() {
        SENTINEL2_BANDS[..n].iter().map(|s| s.to_string()).collect()
    } else {
        (0..n).map(|i| format!("band_{i:02}")).collect()
    }
}

/// Acquisition dates shared by every sample of a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateAxis {
    dates: Vec<NaiveDate>,
}

impl DateAxis {
    /// Builds an axis, rejecting unsorted dates or dates spanning several years.
    pub fn new(dates: Vec<NaiveDate>) -> Result<Self> {
        if let Some(first) = dates.first() {
            let year = first.year();
            if dates.iter().any(|d| d.year() != year) {
                return Err(Error::Schema(format!(
                    "date axis spans more than calendar year {year}"
                )));
            }
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Schema("date axis is not strictly increasing".into()));
        }
        Ok(Self { dates })
    }

    /// `n` dates starting at `start`, spaced `step_days` apart.
    pub fn regular(start: NaiveDate, step_days: u32, n: usize) -> Result<Self> {
        let dates = (0..n)
            .map(|i| start + chrono::Days::new(u64::from(step_days) * i as u64))
            .collect();
        Self::new(dates)
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn year(&self) -> Option<i32> {
        self.dates.first().map(|d| d.year())
    }

    /// Day of year (1-based) of every date; the model's positional key.
    pub fn days_of_year(&self) -> Vec<u16> {
        self.dates.iter().map(|d| d.ordinal() as u16).collect()
    }

    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }
}

/// One parcel: a bands × timesteps reflectance matrix plus presence mask.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesSample {
    pub parcel_id: String,
    pub label: usize,
    pub block_id: u32,
    /// `B × T` reflectances.
    pub values: Array2<f32>,
    /// `true` where the timestep is present.
    pub mask: Vec<bool>,
}

impl TimeSeriesSample {
    pub fn n_bands(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_timesteps(&self) -> usize {
        self.values.ncols()
    }

    pub fn n_present(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Indices of present timesteps in ascending order.
    pub fn present_indices(&self) -> Vec<usize> {
        self.mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect()
    }

    /// Same values and presence, compared only on present cells.
    pub fn same_content(&self, other: &Self) -> bool {
        if self.parcel_id != other.parcel_id
            || self.label != other.label
            || self.block_id != other.block_id
            || self.mask != other.mask
            || self.values.dim() != other.values.dim()
        {
            return false;
        }
        self.present_indices().into_iter().all(|t| {
            self.values
                .column(t)
                .iter()
                .zip(other.values.column(t))
                .all(|(a, b)| a.to_bits() == b.to_bits())
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<TimeSeriesSample>,
    pub axis: DateAxis,
    pub class_names: Vec<String>,
    pub band_names: Vec<String>,
}

impl Dataset {
    /// Validates all structural invariants and wraps the parts.
    pub fn new(
        samples: Vec<TimeSeriesSample>,
        axis: DateAxis,
        class_names: Vec<String>,
        band_names: Vec<String>,
    ) -> Result<Self> {
        let ds = Self {
            samples,
            axis,
            class_names,
            band_names,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.band_names.len();
        let t = self.axis.len();
        let c = self.class_names.len();
        let mut seen = HashSet::with_capacity(self.samples.len());
        for s in &self.samples {
            if !seen.insert(s.parcel_id.as_str()) {
                return Err(Error::Schema(format!("duplicate parcel_id {}", s.parcel_id)));
            }
            if s.values.dim() != (b, t) {
                return Err(Error::Schema(format!(
                    "parcel {}: values are {:?}, expected ({b}, {t})",
                    s.parcel_id,
                    s.values.dim()
                )));
            }
            if s.mask.len() != t {
                return Err(Error::Schema(format!(
                    "parcel {}: mask length {} != {t}",
                    s.parcel_id,
                    s.mask.len()
                )));
            }
            if s.label >= c {
                return Err(Error::Schema(format!(
                    "parcel {}: label {} outside {c} classes",
                    s.parcel_id, s.label
                )));
            }
            if s.n_present() == 0 {
                return Err(Error::Schema(format!(
                    "parcel {}: no timestep present",
                    s.parcel_id
                )));
            }
            for (ti, present) in s.mask.iter().enumerate() {
                if *present && s.values.column(ti).iter().any(|v| !v.is_finite() || *v < 0.0)
                {
                    return Err(Error::Schema(format!(
                        "parcel {}: non-finite or negative reflectance at timestep {ti}",
                        s.parcel_id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_bands(&self) -> usize {
        self.band_names.len()
    }

    pub fn n_timesteps(&self) -> usize {
        self.axis.len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// A dataset sharing axis and names with `self` but holding other samples.
    pub fn with_samples(&self, samples: Vec<TimeSeriesSample>) -> Self {
        Self {
            samples,
            axis: self.axis.clone(),
            class_names: self.class_names.clone(),
            band_names: self.band_names.clone(),
        }
    }

    /// Equality up to sample order, comparing present cells bit-exactly.
    pub fn same_content(&self, other: &Self) -> bool {
        if self.axis != other.axis
            || self.band_names != other.band_names
            || self.samples.len() != other.samples.len()
        {
            return false;
        }
        let mut a: Vec<_> = self.samples.iter().collect();
        let mut b: Vec<_> = other.samples.iter().collect();
        a.sort_by(|x, y| x.parcel_id.cmp(&y.parcel_id));
        b.sort_by(|x, y| x.parcel_id.cmp(&y.parcel_id));
        a.iter().zip(&b).all(|(x, y)| x.same_content(y))
    }
}

/// Per-class sample counts and shares.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassDistribution {
    pub counts: Vec<usize>,
    pub shares: Vec<f64>,
}

impl ClassDistribution {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

pub fn class_distribution(ds: &Dataset) -> ClassDistribution {
    let mut counts = vec![0usize; ds.n_classes()];
    for s in &ds.samples {
        if s.label >= counts.len() {
            counts.resize(s.label + 1, 0);
        }
        counts[s.label] += 1;
    }
    let n = ds.len();
    let shares = counts
        .iter()
        .map(|&c| if n == 0 { 0.0 } else { c as f64 / n as f64 })
        .collect();
    ClassDistribution { counts, shares }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn date(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn sample(id: &str, label: usize) -> TimeSeriesSample {
        TimeSeriesSample {
            parcel_id: id.into(),
            label,
            block_id: 0,
            values: array![[0.1f32, 0.2]],
            mask: vec![true, true],
        }
    }

    fn tiny(labels: &[usize]) -> Dataset {
        let axis = DateAxis::new(vec![date("2019-01-06"), date("2019-01-13")]).unwrap();
        let samples = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| sample(&format!("p{i}"), l))
            .collect();
        Dataset::new(samples, axis, vec!["a".into(), "b".into()], vec!["B01".into()]).unwrap()
    }

    #[test]
    fn axis_rejects_unsorted_and_multi_year() {
        assert!(DateAxis::new(vec![date("2019-02-01"), date("2019-01-01")]).is_err());
        assert!(DateAxis::new(vec![date("2019-02-01"), date("2019-02-01")]).is_err());
        assert!(DateAxis::new(vec![date("2019-12-30"), date("2020-01-02")]).is_err());
        let ax = DateAxis::regular(date("2019-01-06"), 7, 52).unwrap();
        assert_eq!(ax.dates()[51], date("2019-12-29"));
        assert_eq!(ax.days_of_year()[0], 6);
    }

    #[test]
    fn distribution_counts() {
        let d = class_distribution(&tiny(&[0, 0, 1]));
        assert_eq!(d.counts, vec![2, 1]);
        assert_eq!(d.total(), 3);
        assert!((d.shares[0] - 2.0 / 3.0).abs() < 1e-12);

        let empty = class_distribution(&tiny(&[]));
        assert_eq!(empty.counts, vec![0, 0]);
        assert_eq!(empty.shares, vec![0.0, 0.0]);
    }

    #[test]
    fn validation_catches_bad_samples() {
        let mut ds = tiny(&[0, 1]);
        ds.samples[1].parcel_id = "p0".into();
        assert!(ds.validate().is_err());

        let mut ds = tiny(&[0]);
        ds.samples[0].mask = vec![false, false];
        assert!(ds.validate().is_err());

        let mut ds = tiny(&[0]);
        ds.samples[0].label = 5;
        assert!(ds.validate().is_err());

        let mut ds = tiny(&[0]);
        ds.samples[0].values[[0, 1]] = f32::NAN;
        assert!(ds.validate().is_err());
    }
}
