//! Synthetic crop phenology.
//!
//! Every class owns a double-logistic seasonal curve (green-up, peak and
//! senescence dates) scaled per band by a class-specific band-weight vector.
//! Samples jitter dates and amplitudes, add observation noise, and are
//! occasionally hit by clouds that raise every band to a high level.

use chrono::{Datelike, NaiveDate};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{default_band_names, DateAxis, Dataset, TimeSeriesSample};
use crate::error::{Error, Result};

/// Bare-soil reflectance per Sentinel-2 band.
const SOIL: [f64; 13] = [
    0.12, 0.10, 0.10, 0.12, 0.15, 0.17, 0.19, 0.21, 0.22, 0.08, 0.02, 0.24, 0.19,
];
/// Reflectance change of a fully developed canopy per band.
const CANOPY: [f64; 13] = [
    -0.02, -0.03, 0.0, -0.06, 0.04, 0.18, 0.24, 0.28, 0.29, 0.09, 0.0, -0.05, -0.07,
];
/// Upper bound of cloud-free synthetic reflectance.
pub const MAX_CLEAR_REFLECTANCE: f64 = 0.65;
const CLOUD_LEVEL: (f64, f64) = (0.72, 0.9);
const CLOUD_BAND_SPREAD: f64 = 0.05;
/// Width of the class-specific bump used by the windowed layout, in days.
const BUMP_SIGMA_DAYS: f64 = 5.0;
const BUMP_AMPLITUDE: f64 = 0.12;

/// Where class differences live in the season.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PhenologyLayout {
    /// Each class has its own seasonal timing and band weights.
    Seasonal,
    /// All classes share one seasonal curve; each class adds a short
    /// band-signature bump dated inside `[start_doy, end_doy]`.
    Windowed { start_doy: u16, end_doy: u16 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_classes: usize,
    pub n_samples: usize,
    pub n_timesteps: usize,
    pub n_bands: usize,
    pub year: i32,
    pub cloud_probability: f64,
    pub imbalance_exponent: f64,
    pub n_blocks: u32,
    pub seed: u64,
    /// Per-value observation noise (reflectance units).
    pub noise_std: f64,
    pub date_jitter_days: f64,
    /// Relative std of the per-sample amplitude scale.
    pub amplitude_jitter: f64,
    pub layout: PhenologyLayout,
    /// The last `n_uniform_classes` classes carry no class-specific timing:
    /// each sample places its seasonal event at a uniformly random date.
    pub n_uniform_classes: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_classes: 8,
            n_samples: 2000,
            n_timesteps: 52,
            n_bands: 13,
            year: 2019,
            cloud_probability: 0.1,
            imbalance_exponent: 0.5,
            n_blocks: 20,
            seed: 7,
            noise_std: 0.01,
            date_jitter_days: 4.0,
            amplitude_jitter: 0.1,
            layout: PhenologyLayout::Seasonal,
            n_uniform_classes: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_classes < 2 {
            return bad(format!("n_classes must be >= 2, got {}", self.n_classes));
        }
        if self.n_timesteps < 8 || self.n_timesteps > 365 {
            return bad(format!("n_timesteps must be in 8..=365, got {}", self.n_timesteps));
        }
        if self.n_bands == 0 {
            return bad("n_bands must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.cloud_probability) {
            return bad(format!(
                "cloud_probability must be in [0, 1), got {}",
                self.cloud_probability
            ));
        }
        if !(self.imbalance_exponent >= 0.0) {
            return bad("imbalance_exponent must be >= 0".into());
        }
        if self.n_blocks == 0 {
            return bad("n_blocks must be >= 1".into());
        }
        if !(self.noise_std >= 0.0 && self.date_jitter_days >= 0.0 && self.amplitude_jitter >= 0.0)
        {
            return bad("jitter parameters must be >= 0".into());
        }
        if self.n_uniform_classes >= self.n_classes {
            return bad("at least one class must have class-specific phenology".into());
        }
        if NaiveDate::from_ymd_opt(self.year, 1, 1).is_none() {
            return bad(format!("unsupported year {}", self.year));
        }
        if let PhenologyLayout::Windowed { start_doy, end_doy } = self.layout {
            if !(1 <= start_doy && start_doy < end_doy && end_doy <= 365) {
                return bad(format!("invalid window {start_doy}..{end_doy}"));
            }
        }
        Ok(())
    }

    /// Weekly from 6 January when `n_timesteps` weeks fit in the year,
    /// otherwise spread evenly over the whole year.
    pub fn date_axis(&self) -> Result<DateAxis> {
        let jan1 = NaiveDate::from_ymd_opt(self.year, 1, 1)
            .ok_or_else(|| Error::Config(format!("unsupported year {}", self.year)))?;
        let days_in_year = if jan1.leap_year() { 366 } else { 365 };
        let t = self.n_timesteps;
        if 6 + 7 * (t - 1) <= days_in_year {
            return DateAxis::regular(jan1 + chrono::Days::new(5), 7, t);
        }
        let dates = (0..t)
            .map(|i| jan1 + chrono::Days::new((i * (days_in_year - 1) / (t - 1)) as u64))
            .collect();
        DateAxis::new(dates)
    }

    /// Samples per class: shares proportional to `(k + 1)^-exponent`, rounded
    /// by largest remainder so the total is exact.
    pub fn class_counts(&self) -> Vec<usize> {
        let weights: Vec<f64> = (0..self.n_classes)
            .map(|k| ((k + 1) as f64).powf(-self.imbalance_exponent))
            .collect();
        let total: f64 = weights.iter().sum();
        let exact: Vec<f64> = weights
            .iter()
            .map(|w| w / total * self.n_samples as f64)
            .collect();
        let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
        let mut remainder = self.n_samples - counts.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..self.n_classes).collect();
        order.sort_by(|&a, &b| {
            let fa = exact[a] - exact[a].floor();
            let fb = exact[b] - exact[b].floor();
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        for k in order {
            if remainder == 0 {
                break;
            }
            counts[k] += 1;
            remainder -= 1;
        }
        counts
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Seasonal timing of one class.
#[derive(Debug, Clone)]
struct Phenology {
    green_up: f64,
    peak: f64,
    senescence: f64,
}

impl Phenology {
    fn around_peak(peak: f64, rng: &mut ChaCha8Rng) -> Self {
        Self {
            green_up: peak - rng.random_range(35.0..60.0),
            peak,
            senescence: peak + rng.random_range(30.0..60.0),
        }
    }

    /// Double-logistic greenness in [0, 1] at day-of-year `doy`.
    fn greenness(&self, doy: f64) -> f64 {
        let rise = ((self.peak - self.green_up) / 4.0).max(1.0);
        let fall = ((self.senescence - self.peak) / 4.0).max(1.0);
        (logistic((doy - self.green_up) / rise) + logistic((self.senescence - doy) / fall) - 1.0)
            .max(0.0)
    }

    fn shifted(&self, days: f64) -> Self {
        Self {
            green_up: self.green_up + days,
            peak: self.peak + days,
            senescence: self.senescence + days,
        }
    }
}

#[derive(Debug, Clone)]
struct ClassModel {
    phenology: Phenology,
    soil: Vec<f64>,
    canopy: Vec<f64>,
    /// Windowed layout only: bump date and band signature.
    bump: Option<(f64, Vec<f64>)>,
    uniform: bool,
}

fn class_models(cfg: &SynthConfig) -> Vec<ClassModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let n_b = cfg.n_bands;
    let n_specific = cfg.n_classes - cfg.n_uniform_classes;
    let perturb = Normal::new(0.0, 0.03).expect("valid normal");

    let soil_for = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..n_b)
            .map(|b| SOIL[b % SOIL.len()] + rng.random_range(-0.01..0.01))
            .collect()
    };
    let canopy_for = |rng: &mut ChaCha8Rng, scale: f64| -> Vec<f64> {
        (0..n_b)
            .map(|b| CANOPY[b % CANOPY.len()] * scale + perturb.sample(rng))
            .collect()
    };

    match cfg.layout {
        PhenologyLayout::Seasonal => {
            let mut peaks: Vec<f64> = (0..n_specific)
                .map(|k| {
                    let spread = if n_specific > 1 {
                        150.0 * k as f64 / (n_specific - 1) as f64
                    } else {
                        0.0
                    };
                    110.0 + spread
                })
                .collect();
            peaks.shuffle(&mut rng);
            (0..cfg.n_classes)
                .map(|k| {
                    let peak = peaks.get(k).copied().unwrap_or(180.0) + rng.random_range(-5.0..5.0);
                    let amp = rng.random_range(0.7..1.2);
                    ClassModel {
                        phenology: Phenology::around_peak(peak, &mut rng),
                        soil: soil_for(&mut rng),
                        canopy: canopy_for(&mut rng, amp),
                        bump: None,
                        uniform: k >= n_specific,
                    }
                })
                .collect()
        }
        PhenologyLayout::Windowed { start_doy, end_doy } => {
            let shared = Phenology::around_peak(190.0, &mut rng);
            let soil = soil_for(&mut rng);
            let canopy = canopy_for(&mut rng, 1.0);
            let (lo, hi) = (f64::from(start_doy), f64::from(end_doy));
            (0..cfg.n_classes)
                .map(|k| {
                    let centre = lo + (hi - lo) * (k % n_specific) as f64 / n_specific.max(2) as f64
                        + (hi - lo) / (2.0 * n_specific as f64);
                    let raw: Vec<f64> = (0..n_b).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let norm = raw.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-9);
                    let signature = raw.iter().map(|v| v / norm).collect();
                    ClassModel {
                        phenology: shared.clone(),
                        soil: soil.clone(),
                        canopy: canopy.clone(),
                        bump: Some((centre, signature)),
                        uniform: k >= n_specific,
                    }
                })
                .collect()
        }
    }
}

/// Generates a labelled dataset; identical configs give identical datasets.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let axis = cfg.date_axis()?;
    let doys: Vec<f64> = axis.dates().iter().map(|d| f64::from(d.ordinal())).collect();
    let models = class_models(cfg);
    let counts = cfg.class_counts();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let mut labels: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(k, &n)| std::iter::repeat(k).take(n))
        .collect();
    labels.shuffle(&mut rng);

    let date_jitter = Normal::new(0.0, cfg.date_jitter_days).map_err(|e| Error::Config(e.to_string()))?;
    let amp_jitter = Normal::new(1.0, cfg.amplitude_jitter).map_err(|e| Error::Config(e.to_string()))?;
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let season = (60.0, 300.0);

    let samples = labels
        .iter()
        .enumerate()
        .map(|(i, &label)| {
            let m = &models[label];
            let shift = date_jitter.sample(&mut rng);
            let scale = amp_jitter.sample(&mut rng).max(0.0);

            // Uniform classes draw their event date from the whole season
            // and borrow the band response of a random specific class.
            let (phen, bump) = match (&m.bump, m.uniform) {
                (None, false) => (m.phenology.shifted(shift), None),
                (None, true) => {
                    let peak = rng.random_range(season.0..season.1);
                    (Phenology::around_peak(peak, &mut rng), None)
                }
                (Some((c, sig)), false) => (m.phenology.shifted(shift), Some((c + shift, sig.clone()))),
                (Some(_), true) => {
                    let donor = rng.random_range(0..cfg.n_classes - cfg.n_uniform_classes);
                    let sig = models[donor].bump.as_ref().expect("windowed").1.clone();
                    let c = rng.random_range(season.0..season.1);
                    (m.phenology.shifted(shift), Some((c, sig)))
                }
            };

            let mut values = Array2::<f32>::zeros((cfg.n_bands, cfg.n_timesteps));
            for (t, &doy) in doys.iter().enumerate() {
                if rng.random_bool(cfg.cloud_probability) {
                    let level = rng.random_range(CLOUD_LEVEL.0..CLOUD_LEVEL.1);
                    for b in 0..cfg.n_bands {
                        values[[b, t]] = (level + rng.random_range(0.0..CLOUD_BAND_SPREAD)) as f32;
                    }
                    continue;
                }
                let g = phen.greenness(doy);
                let bump_w = bump
                    .as_ref()
                    .map(|(c, _)| (-(doy - c).powi(2) / (2.0 * BUMP_SIGMA_DAYS.powi(2))).exp());
                for b in 0..cfg.n_bands {
                    let mut v = m.soil[b] + scale * m.canopy[b] * g + noise.sample(&mut rng);
                    if let (Some(w), Some((_, sig))) = (bump_w, &bump) {
                        v += scale * BUMP_AMPLITUDE * sig[b] * w;
                    }
                    values[[b, t]] = v.clamp(0.0, MAX_CLEAR_REFLECTANCE) as f32;
                }
            }
            TimeSeriesSample {
                parcel_id: format!("p{i:05}"),
                label,
                block_id: rng.random_range(0..cfg.n_blocks),
                values,
                mask: vec![true; cfg.n_timesteps],
            }
        })
        .collect();

    Dataset::new(
        samples,
        axis,
        (0..cfg.n_classes).map(|k| format!("class_{k}")).collect(),
        default_band_names(cfg.n_bands),
    )
}

/// Lower bound of cloud reflectance; clear-sky values never exceed
/// [`MAX_CLEAR_REFLECTANCE`].
pub const fn cloud_floor() -> f64 {
    CLOUD_LEVEL.0
}
