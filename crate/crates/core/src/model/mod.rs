//! The baseline classifier: per-timestep MLP encoder, day-of-year positional
//! encoding, multi-head self-attention over time, learned-query attention
//! pooling and an MLP decoder.
//!
//! Linear layers store weights as `in × out` so a row of activations maps
//! through `x · W + b`.

mod forward;
mod io;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use forward::{
    argmax, forward, positional_encoding, predict, DenseRecord, ForwardTrace, ModelInput,
};
pub(crate) use forward::softmax_inplace as softmax_slice;
pub use io::{load_params, read_params, save_params, write_params};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PositionalEncoding {
    #[default]
    SinusoidalDayOfYear,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_bands: usize,
    /// Longest sequence the model is used with; informational, positions are
    /// keyed on dates rather than indices.
    pub max_timesteps: usize,
    pub d_model: usize,
    pub n_heads: usize,
    /// Encoder layer widths; the last one must equal `d_model`.
    pub encoder_dims: Vec<usize>,
    /// Hidden decoder widths; a final linear layer to `n_classes` follows.
    pub decoder_dims: Vec<usize>,
    pub n_classes: usize,
    #[serde(default)]
    pub positional_encoding: PositionalEncoding,
}

impl ModelConfig {
    /// Default architecture for the given input and output sizes.
    pub fn new(n_bands: usize, max_timesteps: usize, n_classes: usize) -> Self {
        Self {
            n_bands,
            max_timesteps,
            d_model: 64,
            n_heads: 4,
            encoder_dims: vec![32, 64],
            decoder_dims: vec![64, 32],
            n_classes,
            positional_encoding: PositionalEncoding::SinusoidalDayOfYear,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_bands == 0 || self.n_classes == 0 || self.d_model == 0 || self.n_heads == 0 {
            return bad("model sizes must be positive".into());
        }
        if self.d_model % self.n_heads != 0 {
            return bad(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        match self.encoder_dims.last() {
            None => return bad("encoder needs at least one layer".into()),
            Some(&w) if w != self.d_model => {
                return bad(format!("encoder output width {w} != d_model {}", self.d_model))
            }
            _ => {}
        }
        if self.encoder_dims.iter().chain(&self.decoder_dims).any(|&w| w == 0) {
            return bad("layer widths must be positive".into());
        }
        Ok(())
    }

    /// Names and shapes of all parameter tensors in canonical order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut push_dense = |name: &str, fan_in: usize, fan_out: usize, bias: bool| {
            out.push((format!("{name}.weight"), vec![fan_in, fan_out]));
            if bias {
                out.push((format!("{name}.bias"), vec![fan_out]));
            }
        };
        let mut prev = self.n_bands;
        for (i, &w) in self.encoder_dims.iter().enumerate() {
            push_dense(&format!("encoder.{i}"), prev, w, true);
            prev = w;
        }
        let d = self.d_model;
        push_dense("attention.query", d, d, true);
        push_dense("attention.key", d, d, false);
        push_dense("attention.value", d, d, true);
        push_dense("attention.output", d, d, true);
        out.push(("pool.query".into(), vec![d]));
        let mut prev = d;
        for (i, &w) in self.decoder_dims.iter().enumerate() {
            out.push((format!("decoder.{i}.weight"), vec![prev, w]));
            out.push((format!("decoder.{i}.bias"), vec![w]));
            prev = w;
        }
        let last = self.decoder_dims.len();
        out.push((format!("decoder.{last}.weight"), vec![prev, self.n_classes]));
        out.push((format!("decoder.{last}.bias"), vec![self.n_classes]));
        out
    }
}

/// One affine layer, `y = x · weight + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<S> {
    /// `fan_in × fan_out`.
    pub weight: Array2<S>,
    pub bias: Option<Array1<S>>,
}

impl<S: Scalar> Dense<S> {
    pub fn zeros(fan_in: usize, fan_out: usize, bias: bool) -> Self {
        Self {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: bias.then(|| Array1::zeros(fan_out)),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.ncols()
    }

    /// Applies the layer to each row of `x`.
    pub fn apply(&self, x: &Array2<S>) -> Array2<S> {
        let mut y = x.dot(&self.weight);
        if let Some(b) = &self.bias {
            y += b;
        }
        y
    }
}

/// All trainable tensors of the network.
///
/// The key projection carries no bias: a shift shared by every key of a
/// query row cancels in the softmax, so such a bias would never receive a
/// gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters<S> {
    pub config: ModelConfig,
    pub encoder: Vec<Dense<S>>,
    pub query: Dense<S>,
    pub key: Dense<S>,
    pub value: Dense<S>,
    pub output: Dense<S>,
    pub pool_query: Array1<S>,
    pub decoder: Vec<Dense<S>>,
}

impl<S: Scalar> Parameters<S> {
    /// All-zero parameters shaped by `config`.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let mut prev = config.n_bands;
        let encoder = config
            .encoder_dims
            .iter()
            .map(|&w| {
                let layer = Dense::zeros(prev, w, true);
                prev = w;
                layer
            })
            .collect();
        let mut prev = d;
        let decoder = config
            .decoder_dims
            .iter()
            .chain(std::iter::once(&config.n_classes))
            .map(|&w| {
                let layer = Dense::zeros(prev, w, true);
                prev = w;
                layer
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            encoder,
            query: Dense::zeros(d, d, true),
            key: Dense::zeros(d, d, false),
            value: Dense::zeros(d, d, true),
            output: Dense::zeros(d, d, true),
            pool_query: Array1::zeros(d),
            decoder,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config).expect("config already validated")
    }

    /// Tensors in canonical order as flat slices.
    pub fn tensors(&self) -> Vec<&[S]> {
        fn push<'a, S>(l: &'a Dense<S>, out: &mut Vec<&'a [S]>) {
            out.push(l.weight.as_slice().expect("standard layout"));
            if let Some(b) = &l.bias {
                out.push(b.as_slice().expect("standard layout"));
            }
        }
        let mut out = Vec::new();
        for l in &self.encoder {
            push(l, &mut out);
        }
        for l in [&self.query, &self.key, &self.value, &self.output] {
            push(l, &mut out);
        }
        out.push(self.pool_query.as_slice().expect("standard layout"));
        for l in &self.decoder {
            push(l, &mut out);
        }
        out
    }

    /// Mutable tensors in canonical order.
    pub fn tensors_mut(&mut self) -> Vec<&mut [S]> {
        fn push<'a, S>(l: &'a mut Dense<S>, out: &mut Vec<&'a mut [S]>) {
            out.push(l.weight.as_slice_mut().expect("standard layout"));
            if let Some(b) = l.bias.as_mut() {
                out.push(b.as_slice_mut().expect("standard layout"));
            }
        }
        let mut out = Vec::new();
        for l in self.encoder.iter_mut() {
            push(l, &mut out);
        }
        push(&mut self.query, &mut out);
        push(&mut self.key, &mut out);
        push(&mut self.value, &mut out);
        push(&mut self.output, &mut out);
        out.push(self.pool_query.as_slice_mut().expect("standard layout"));
        for l in self.decoder.iter_mut() {
            push(l, &mut out);
        }
        out
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Entry `index` of the canonical flattening.
    pub fn get_flat(&self, mut index: usize) -> S {
        for t in self.tensors() {
            if index < t.len() {
                return t[index];
            }
            index -= t.len();
        }
        panic!("parameter index out of range")
    }

    pub fn set_flat(&mut self, mut index: usize, value: S) {
        for t in self.tensors_mut() {
            if index < t.len() {
                t[index] = value;
                return;
            }
            index -= t.len();
        }
        panic!("parameter index out of range")
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Converts every entry to another scalar type.
    pub fn cast<T: Scalar>(&self) -> Parameters<T> {
        let mut out = Parameters::<T>::zeros(&self.config).expect("config already validated");
        for (dst, src) in out.tensors_mut().into_iter().zip(self.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = T::lit(s.to_f64_lossy());
            }
        }
        out
    }
}

/// Glorot-uniform weights, zero biases, deterministic in `seed`.
pub fn init_model<S: Scalar>(config: &ModelConfig, seed: u64) -> Result<Parameters<S>> {
    let mut params = Parameters::<S>::zeros(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = config.layout();
    for (tensor, (name, shape)) in params.tensors_mut().into_iter().zip(&layout) {
        if name.ends_with(".bias") {
            continue;
        }
        let (fan_in, fan_out) = match shape.as_slice() {
            [i, o] => (*i, *o),
            [i] => (*i, 1),
            _ => unreachable!("parameters are vectors or matrices"),
        };
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for v in tensor.iter_mut() {
            *v = S::lit(rng.random_range(-bound..=bound));
        }
    }
    Ok(params)
}
