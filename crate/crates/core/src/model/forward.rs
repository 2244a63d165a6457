use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use super::Parameters;
use crate::dataio::TimeSeriesSample;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Base of the sinusoidal frequency ladder for day-of-year codes.
const PE_BASE: f64 = 1000.0;

/// What the network consumes: reflectances, presence and acquisition days.
#[derive(Debug, Clone, Copy)]
pub struct ModelInput<'a> {
    /// `B × T` reflectances.
    pub values: ArrayView2<'a, f32>,
    pub mask: &'a [bool],
    pub day_of_year: &'a [u16],
}

impl<'a> ModelInput<'a> {
    pub fn new(sample: &'a TimeSeriesSample, day_of_year: &'a [u16]) -> Self {
        Self::with_mask(sample, &sample.mask, day_of_year)
    }

    /// Same sample with a different presence mask.
    pub fn with_mask(sample: &'a TimeSeriesSample, mask: &'a [bool], day_of_year: &'a [u16]) -> Self {
        Self {
            values: sample.values.view(),
            mask,
            day_of_year,
        }
    }

    pub fn n_timesteps(&self) -> usize {
        self.values.ncols()
    }
}

/// Activations around one linear layer, one row per timestep (or a single
/// row for the decoder).
#[derive(Debug, Clone)]
pub struct DenseRecord<S> {
    pub input: Array2<S>,
    /// Post-activation output.
    pub output: Array2<S>,
    pub relu: bool,
}

/// Everything computed during one forward pass.
///
/// Per-timestep tensors are compact: row `r` belongs to timestep
/// `present[r]`, masked timesteps have no row.
#[derive(Debug, Clone)]
pub struct ForwardTrace<S> {
    pub present: Vec<usize>,
    pub n_timesteps: usize,
    /// `n × B` network input.
    pub input: Array2<S>,
    pub encoder: Vec<DenseRecord<S>>,
    pub positional: Array2<S>,
    /// Encoder output plus positional code.
    pub attn_input: Array2<S>,
    pub query: Array2<S>,
    pub key: Array2<S>,
    pub value: Array2<S>,
    /// One `n × n` row-stochastic matrix per head.
    pub attention: Vec<Array2<S>>,
    /// Concatenated head outputs before the output projection.
    pub mixed: Array2<S>,
    pub attn_output: Array2<S>,
    pub pool_weights: Array1<S>,
    pub pooled: Array1<S>,
    pub decoder: Vec<DenseRecord<S>>,
    pub logits: Array1<S>,
}

impl<S: Scalar> ForwardTrace<S> {
    pub fn n_present(&self) -> usize {
        self.present.len()
    }

    /// Attention of `head` expanded to `T × T`, zero on masked timesteps.
    pub fn attention_full(&self, head: usize) -> Array2<S> {
        let mut full = Array2::zeros((self.n_timesteps, self.n_timesteps));
        for (r, &tr) in self.present.iter().enumerate() {
            for (c, &tc) in self.present.iter().enumerate() {
                full[[tr, tc]] = self.attention[head][[r, c]];
            }
        }
        full
    }

    /// Pooling weights expanded to length `T`.
    pub fn pool_weights_full(&self) -> Array1<S> {
        let mut full = Array1::zeros(self.n_timesteps);
        for (r, &t) in self.present.iter().enumerate() {
            full[t] = self.pool_weights[r];
        }
        full
    }
}

/// Sinusoidal code of each day of year, `days.len() × d`.
pub fn positional_encoding<S: Scalar>(days: &[u16], d: usize) -> Array2<S> {
    let mut pe = Array2::zeros((days.len(), d));
    for (r, &day) in days.iter().enumerate() {
        for i in 0..d {
            let freq = PE_BASE.powf(-((i / 2 * 2) as f64) / d as f64);
            let angle = f64::from(day) * freq;
            pe[[r, i]] = S::lit(if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    pe
}

pub(crate) fn relu_inplace<S: Scalar>(a: &mut Array2<S>) {
    a.mapv_inplace(|v| if v > S::zero() { v } else { S::zero() });
}

pub(crate) fn softmax_inplace<S: Scalar>(v: &mut [S]) {
    let max = v.iter().copied().fold(S::neg_infinity(), S::max);
    let mut sum = S::zero();
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

fn dense_stack<S: Scalar>(
    layers: &[super::Dense<S>],
    mut h: Array2<S>,
    relu_last: bool,
) -> (Vec<DenseRecord<S>>, Array2<S>) {
    let mut records = Vec::with_capacity(layers.len());
    for (i, layer) in layers.iter().enumerate() {
        let relu = relu_last || i + 1 < layers.len();
        let mut out = layer.apply(&h);
        if relu {
            relu_inplace(&mut out);
        }
        records.push(DenseRecord {
            input: h,
            output: out.clone(),
            relu,
        });
        h = out;
    }
    (records, h)
}

/// Runs the network on one input and records every intermediate tensor.
pub fn forward<S: Scalar>(params: &Parameters<S>, input: &ModelInput<'_>) -> Result<ForwardTrace<S>> {
    let cfg = &params.config;
    let (n_bands, n_t) = input.values.dim();
    if n_bands != cfg.n_bands {
        return Err(Error::Inference(format!(
            "sample has {n_bands} bands, model expects {}",
            cfg.n_bands
        )));
    }
    if input.mask.len() != n_t || input.day_of_year.len() != n_t {
        return Err(Error::Inference(format!(
            "mask/day lengths {}/{} do not match {n_t} timesteps",
            input.mask.len(),
            input.day_of_year.len()
        )));
    }
    let present: Vec<usize> = (0..n_t).filter(|&t| input.mask[t]).collect();
    let n = present.len();
    if n == 0 {
        return Err(Error::Inference("all timesteps are masked".into()));
    }

    let mut x0 = Array2::<S>::zeros((n, n_bands));
    for (r, &t) in present.iter().enumerate() {
        for b in 0..n_bands {
            x0[[r, b]] = S::lit(f64::from(input.values[[b, t]]));
        }
    }

    let (encoder, encoded) = dense_stack(&params.encoder, x0.clone(), false);
    let days: Vec<u16> = present.iter().map(|&t| input.day_of_year[t]).collect();
    let positional = positional_encoding::<S>(&days, cfg.d_model);
    let attn_input = &encoded + &positional;

    let query = params.query.apply(&attn_input);
    let key = params.key.apply(&attn_input);
    let value = params.value.apply(&attn_input);

    let dk = cfg.head_dim();
    let scale = S::lit(1.0 / (dk as f64).sqrt());
    let mut mixed = Array2::<S>::zeros((n, cfg.d_model));
    let mut attention = Vec::with_capacity(cfg.n_heads);
    for h in 0..cfg.n_heads {
        let cols = s![.., h * dk..(h + 1) * dk];
        let mut a = query.slice(cols).dot(&key.slice(cols).t());
        a *= scale;
        for mut row in a.rows_mut() {
            softmax_inplace(row.as_slice_mut().expect("standard layout"));
        }
        mixed.slice_mut(cols).assign(&a.dot(&value.slice(cols)));
        attention.push(a);
    }
    let attn_output = params.output.apply(&mixed);

    let mut pool_weights = attn_output.dot(&params.pool_query);
    pool_weights *= S::lit(1.0 / (cfg.d_model as f64).sqrt());
    softmax_inplace(pool_weights.as_slice_mut().expect("standard layout"));
    let pooled = attn_output.t().dot(&pool_weights);

    let (decoder, out) = dense_stack(&params.decoder, pooled.clone().insert_axis(Axis(0)), false);
    let logits = out.row(0).to_owned();
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Inference("non-finite logits".into()));
    }

    Ok(ForwardTrace {
        present,
        n_timesteps: n_t,
        input: x0,
        encoder,
        positional,
        attn_input,
        query,
        key,
        value,
        attention,
        mixed,
        attn_output,
        pool_weights,
        pooled,
        decoder,
        logits,
    })
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax<S: Scalar>(logits: &[S]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

pub fn predict<S: Scalar>(params: &Parameters<S>, input: &ModelInput<'_>) -> Result<(usize, Array1<S>)> {
    let trace = forward(params, input)?;
    let class = argmax(trace.logits.as_slice().expect("standard layout"));
    Ok((class, trace.logits))
}
