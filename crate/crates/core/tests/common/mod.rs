//! Loop-only reference implementations shared by the integration tests.
//!
//! Nothing here calls into the library's forward pass or propagation code;
//! only parameter values are read.

#![allow(dead_code)]

use croplrp::model::{init_model, ModelConfig, Parameters};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Mat = Vec<Vec<f64>>;

fn zeros(r: usize, c: usize) -> Mat {
    vec![vec![0.0; c]; r]
}

fn sign_stab(z: f64, eps: f64) -> f64 {
    if z >= 0.0 {
        z + eps
    } else {
        z - eps
    }
}

fn ratio(r: f64, z: f64, eps: f64) -> f64 {
    let d = sign_stab(z, eps);
    if d == 0.0 {
        0.0
    } else {
        r / d
    }
}

struct DenseL {
    w: Mat,
    b: Vec<f64>,
}

fn dense(layer: &croplrp::model::Dense<f64>) -> DenseL {
    let (fi, fo) = layer.weight.dim();
    let w = (0..fi).map(|i| (0..fo).map(|j| layer.weight[[i, j]]).collect()).collect();
    let b = match &layer.bias {
        Some(b) => b.to_vec(),
        None => vec![0.0; fo],
    };
    DenseL { w, b }
}

fn apply(l: &DenseL, x: &[f64], relu: bool) -> Vec<f64> {
    let fo = l.b.len();
    (0..fo)
        .map(|j| {
            let mut s = l.b[j];
            for (i, xi) in x.iter().enumerate() {
                s += xi * l.w[i][j];
            }
            if relu && s < 0.0 {
                0.0
            } else {
                s
            }
        })
        .collect()
}

/// The z-rule through one affine map: `R_i = Σ_j x_i w_ij / (Σ_i' x_i' w_i'j ± ε) · R_j`.
fn z_rule(l: &DenseL, x: &[f64], r_up: &[f64], eps: f64) -> Vec<f64> {
    let mut r = vec![0.0; x.len()];
    for j in 0..r_up.len() {
        let mut zsum = 0.0;
        for (i, xi) in x.iter().enumerate() {
            zsum += xi * l.w[i][j];
        }
        for (i, xi) in x.iter().enumerate() {
            r[i] += ratio(xi * l.w[i][j] * r_up[j], zsum, eps);
        }
    }
    r
}

fn softmax(v: &mut [f64]) {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    for x in v.iter_mut() {
        *x /= s;
    }
}

/// Day-of-year sinusoid with base 1000; pairs of dimensions share a frequency.
fn positional(day: u16, d: usize) -> Vec<f64> {
    (0..d)
        .map(|i| {
            let freq = 1000f64.powf(-((i / 2 * 2) as f64) / d as f64);
            let a = f64::from(day) * freq;
            if i % 2 == 0 {
                a.sin()
            } else {
                a.cos()
            }
        })
        .collect()
}

pub struct OracleOutput {
    pub logits: Vec<f64>,
    pub target: usize,
    /// `B × T`, zero on masked timesteps.
    pub relevance: Mat,
}

/// Forward pass and relevance of `target` (the argmax when `None`).
///
/// `values` is `B × T` and `mask`/`days` have length `T`.
pub fn oracle_relevance(
    p: &Parameters<f64>,
    values: &[Vec<f32>],
    mask: &[bool],
    days: &[u16],
    target: Option<usize>,
    eps: f64,
) -> OracleOutput {
    let cfg = &p.config;
    let n_b = values.len();
    let n_t = mask.len();
    let present: Vec<usize> = (0..n_t).filter(|&t| mask[t]).collect();
    let n = present.len();
    let d = cfg.d_model;
    let heads = cfg.n_heads;
    let dk = d / heads;

    let enc: Vec<DenseL> = p.encoder.iter().map(dense).collect();
    let dec: Vec<DenseL> = p.decoder.iter().map(dense).collect();
    let (q, k, v, o) = (dense(&p.query), dense(&p.key), dense(&p.value), dense(&p.output));

    // encoder, per timestep; the last layer is linear
    let mut enc_in: Vec<Vec<Vec<f64>>> = vec![Vec::new(); enc.len()];
    let mut e: Mat = Vec::with_capacity(n);
    for &t in &present {
        let mut h: Vec<f64> = (0..n_b).map(|b| f64::from(values[b][t])).collect();
        for (li, l) in enc.iter().enumerate() {
            enc_in[li].push(h.clone());
            h = apply(l, &h, li + 1 < enc.len());
        }
        e.push(h);
    }
    let x: Mat = (0..n)
        .map(|r| {
            let pe = positional(days[present[r]], d);
            (0..d).map(|c| e[r][c] + pe[c]).collect()
        })
        .collect();

    let qm: Mat = x.iter().map(|r| apply(&q, r, false)).collect();
    let km: Mat = x.iter().map(|r| apply(&k, r, false)).collect();
    let vm: Mat = x.iter().map(|r| apply(&v, r, false)).collect();

    let scale = 1.0 / (dk as f64).sqrt();
    let mut att = vec![zeros(n, n); heads];
    let mut mixed = zeros(n, d);
    for h in 0..heads {
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for c in h * dk..(h + 1) * dk {
                    s += qm[i][c] * km[j][c];
                }
                att[h][i][j] = s * scale;
            }
            softmax(&mut att[h][i]);
            for c in h * dk..(h + 1) * dk {
                let mut s = 0.0;
                for j in 0..n {
                    s += att[h][i][j] * vm[j][c];
                }
                mixed[i][c] = s;
            }
        }
    }
    let y: Mat = mixed.iter().map(|r| apply(&o, r, false)).collect();

    let mut a: Vec<f64> = (0..n)
        .map(|t| (0..d).map(|c| y[t][c] * p.pool_query[c]).sum::<f64>() / (d as f64).sqrt())
        .collect();
    softmax(&mut a);
    let pooled: Vec<f64> = (0..d).map(|c| (0..n).map(|t| a[t] * y[t][c]).sum()).collect();

    let mut dec_in = Vec::with_capacity(dec.len());
    let mut h = pooled.clone();
    for (li, l) in dec.iter().enumerate() {
        dec_in.push(h.clone());
        h = apply(l, &h, li + 1 < dec.len());
    }
    let logits = h;
    let target = target.unwrap_or_else(|| {
        let mut best = 0;
        for (i, &l) in logits.iter().enumerate() {
            if l > logits[best] {
                best = i;
            }
        }
        best
    });

    // backward
    let mut r = vec![0.0; logits.len()];
    r[target] = logits[target];
    for li in (0..dec.len()).rev() {
        r = z_rule(&dec[li], &dec_in[li], &r, eps);
    }
    let r_pooled = r;

    let mut r_y = zeros(n, d);
    for c in 0..d {
        for t in 0..n {
            r_y[t][c] = ratio(a[t] * y[t][c] * r_pooled[c], pooled[c], eps);
        }
    }
    let r_mixed: Mat = (0..n).map(|t| z_rule(&o, &mixed[t], &r_y[t], eps)).collect();

    let mut r_v = zeros(n, d);
    for h in 0..heads {
        for c in h * dk..(h + 1) * dk {
            for i in 0..n {
                for j in 0..n {
                    r_v[j][c] += ratio(att[h][i][j] * vm[j][c] * r_mixed[i][c], mixed[i][c], eps);
                }
            }
        }
    }
    let r_x: Mat = (0..n).map(|t| z_rule(&v, &x[t], &r_v[t], eps)).collect();

    // x = e + positional code; only e counts as a contribution
    let mut r_h: Mat = (0..n)
        .map(|t| (0..d).map(|c| ratio(e[t][c] * r_x[t][c], e[t][c], eps)).collect())
        .collect();
    for li in (0..enc.len()).rev() {
        r_h = (0..n).map(|t| z_rule(&enc[li], &enc_in[li][t], &r_h[t], eps)).collect();
    }

    let mut relevance = zeros(n_b, n_t);
    for (row, &t) in present.iter().enumerate() {
        for b in 0..n_b {
            relevance[b][t] = r_h[row][b];
        }
    }
    OracleOutput { logits, target, relevance }
}

/// A small random network: widths at most 10 and at most three dense layers
/// outside the attention block. Every parameter, biases included, is drawn
/// uniformly from `[-1, 1]`.
pub fn random_network(seed: u64) -> Parameters<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_heads = rng.random_range(1..=3usize);
    let d_model = n_heads * rng.random_range(1..=10 / n_heads);
    let (n_enc, n_dec) = [(1, 0), (1, 1), (2, 0)][rng.random_range(0..3)];
    let mut encoder_dims: Vec<usize> = (0..n_enc - 1).map(|_| rng.random_range(1..=10)).collect();
    encoder_dims.push(d_model);
    let decoder_dims = (0..n_dec).map(|_| rng.random_range(1..=10)).collect();
    let cfg = ModelConfig {
        encoder_dims,
        decoder_dims,
        d_model,
        n_heads,
        ..ModelConfig::new(rng.random_range(1..=6), 8, rng.random_range(2..=5))
    };
    let mut p: Parameters<f64> = init_model(&cfg, seed).expect("valid config");
    for i in 0..p.n_params() {
        p.set_flat(i, rng.random_range(-1.0..1.0));
    }
    p
}

/// Random reflectances, dates and mask for `p`; at least one timestep is kept.
pub fn random_input(p: &Parameters<f64>, seed: u64) -> (Vec<Vec<f32>>, Vec<bool>, Vec<u16>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let n_t = rng.random_range(1..=8);
    let values = (0..p.config.n_bands)
        .map(|_| (0..n_t).map(|_| rng.random_range(0.0f32..1.0)).collect())
        .collect();
    let mut mask: Vec<bool> = (0..n_t).map(|_| rng.random_bool(0.8)).collect();
    let keep = rng.random_range(0..n_t);
    mask[keep] = true;
    let mut day = rng.random_range(1..30u16);
    let days = (0..n_t)
        .map(|_| {
            day += rng.random_range(1..40u16);
            day
        })
        .collect();
    (values, mask, days)
}
