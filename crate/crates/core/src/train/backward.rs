//! Reverse-mode differentiation of the forward pipeline.

use ndarray::{s, Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::model::{forward, Dense, DenseRecord, ForwardTrace, ModelInput, Parameters};
use crate::scalar::Scalar;

/// A model input with its true class; `id` names the sample in errors.
#[derive(Debug, Clone, Copy)]
pub struct LabeledInput<'a> {
    pub input: ModelInput<'a>,
    pub label: usize,
    pub id: &'a str,
}

/// `-log softmax(logits)[label]`, computed through log-sum-exp.
pub fn cross_entropy<S: Scalar>(logits: &Array1<S>, label: usize) -> S {
    let max = logits.iter().copied().fold(S::neg_infinity(), S::max);
    let lse = logits.iter().map(|&v| (v - max).exp()).sum::<S>().ln() + max;
    lse - logits[label]
}

fn softmax<S: Scalar>(logits: &Array1<S>) -> Array1<S> {
    let mut p = logits.clone();
    crate::model::softmax_slice(p.as_slice_mut().expect("standard layout"));
    p
}

/// Backpropagates `d_out` (gradient w.r.t. the recorded post-activation
/// output) through one dense layer, accumulating into `grad`.
fn dense_backward<S: Scalar>(
    layer: &Dense<S>,
    grad: &mut Dense<S>,
    rec: &DenseRecord<S>,
    mut d_out: Array2<S>,
) -> Array2<S> {
    if rec.relu {
        ndarray::Zip::from(&mut d_out)
            .and(&rec.output)
            .for_each(|d, &o| {
                if o <= S::zero() {
                    *d = S::zero();
                }
            });
    }
    grad.weight += &rec.input.t().dot(&d_out);
    if let Some(b) = grad.bias.as_mut() {
        *b += &d_out.sum_axis(Axis(0));
    }
    d_out.dot(&layer.weight.t())
}

/// Accumulates `scale · ∂loss/∂θ` for one traced sample into `grad`.
pub(crate) fn backward_into<S: Scalar>(
    params: &Parameters<S>,
    trace: &ForwardTrace<S>,
    label: usize,
    scale: S,
    grad: &mut Parameters<S>,
) {
    let cfg = &params.config;
    let mut d = softmax(&trace.logits);
    d[label] -= S::one();
    d *= scale;

    let mut delta = d.insert_axis(Axis(0));
    for i in (0..params.decoder.len()).rev() {
        delta = dense_backward(&params.decoder[i], &mut grad.decoder[i], &trace.decoder[i], delta);
    }
    let d_pooled = delta.row(0).to_owned();

    // attention pooling
    let y = &trace.attn_output;
    let a = &trace.pool_weights;
    let c = S::lit(1.0 / (cfg.d_model as f64).sqrt());
    let mut d_y = a
        .view()
        .insert_axis(Axis(1))
        .dot(&d_pooled.view().insert_axis(Axis(0)));
    let da = y.dot(&d_pooled);
    let dot = a.dot(&da);
    let ds: Array1<S> = a * &(da - dot) * c;
    grad.pool_query += &y.t().dot(&ds);
    d_y += &ds
        .view()
        .insert_axis(Axis(1))
        .dot(&params.pool_query.view().insert_axis(Axis(0)));

    // output projection
    grad.output.weight += &trace.mixed.t().dot(&d_y);
    if let Some(b) = grad.output.bias.as_mut() {
        *b += &d_y.sum_axis(Axis(0));
    }
    let d_mixed = d_y.dot(&params.output.weight.t());

    // heads
    let n = trace.n_present();
    let dk = cfg.head_dim();
    let scale_att = S::lit(1.0 / (dk as f64).sqrt());
    let mut d_q = Array2::<S>::zeros((n, cfg.d_model));
    let mut d_k = Array2::<S>::zeros((n, cfg.d_model));
    let mut d_v = Array2::<S>::zeros((n, cfg.d_model));
    for (h, att) in trace.attention.iter().enumerate() {
        let cols = s![.., h * dk..(h + 1) * dk];
        let d_oh = d_mixed.slice(cols);
        let d_att = d_oh.dot(&trace.value.slice(cols).t());
        d_v.slice_mut(cols).assign(&att.t().dot(&d_oh));
        let row_dot = (&d_att * att).sum_axis(Axis(1));
        let mut d_scores = d_att - &row_dot.insert_axis(Axis(1));
        d_scores *= att;
        d_scores *= scale_att;
        d_q.slice_mut(cols).assign(&d_scores.dot(&trace.key.slice(cols)));
        d_k.slice_mut(cols).assign(&d_scores.t().dot(&trace.query.slice(cols)));
    }

    let x = &trace.attn_input;
    let mut d_x = Array2::<S>::zeros(x.raw_dim());
    for (layer, g, dz) in [
        (&params.query, &mut grad.query, &d_q),
        (&params.key, &mut grad.key, &d_k),
        (&params.value, &mut grad.value, &d_v),
    ] {
        g.weight += &x.t().dot(dz);
        if let Some(b) = g.bias.as_mut() {
            *b += &dz.sum_axis(Axis(0));
        }
        d_x += &dz.dot(&layer.weight.t());
    }

    // the positional code is constant, so the encoder output sees d_x directly
    let mut delta = d_x;
    for i in (0..params.encoder.len()).rev() {
        delta = dense_backward(&params.encoder[i], &mut grad.encoder[i], &trace.encoder[i], delta);
    }
}

/// Per-sample outcome of a gradient pass.
pub(crate) struct BatchStats<S> {
    pub loss: S,
    pub correct: usize,
}

pub(crate) fn accumulate<S: Scalar>(
    params: &Parameters<S>,
    batch: &[LabeledInput<'_>],
    grad: &mut Parameters<S>,
) -> Result<BatchStats<S>> {
    let scale = S::one() / S::lit(batch.len() as f64);
    let mut loss = S::zero();
    let mut correct = 0;
    for item in batch {
        let trace = forward(params, &item.input)?;
        let l = cross_entropy(&trace.logits, item.label);
        if !l.is_finite() {
            return Err(Error::Numeric {
                sample: item.id.to_string(),
            });
        }
        if crate::model::argmax(trace.logits.as_slice().expect("standard layout")) == item.label {
            correct += 1;
        }
        loss += l * scale;
        backward_into(params, &trace, item.label, scale, grad);
    }
    Ok(BatchStats { loss, correct })
}

/// Mean cross-entropy over `batch` and its gradient, shaped like `params`.
pub fn loss_and_grad<S: Scalar>(
    params: &Parameters<S>,
    batch: &[LabeledInput<'_>],
) -> Result<(S, Parameters<S>)> {
    if batch.is_empty() {
        return Err(Error::Range("empty batch".into()));
    }
    let mut grad = params.zeros_like();
    let stats = accumulate(params, batch, &mut grad)?;
    Ok((stats.loss, grad))
}

/// Mean cross-entropy over `batch` without gradients.
pub fn batch_loss<S: Scalar>(params: &Parameters<S>, batch: &[LabeledInput<'_>]) -> Result<S> {
    if batch.is_empty() {
        return Err(Error::Range("empty batch".into()));
    }
    let mut total = S::zero();
    for item in batch {
        let trace = forward(params, &item.input)?;
        let l = cross_entropy(&trace.logits, item.label);
        if !l.is_finite() {
            return Err(Error::Numeric {
                sample: item.id.to_string(),
            });
        }
        total += l;
    }
    Ok(total / S::lit(batch.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::TimeSeriesSample;
    use crate::model::{init_model, ModelConfig};
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_logits_give_log_c() {
        for c in [2usize, 5, 8] {
            let logits = Array1::from_elem(c, 0.3f64);
            assert!((cross_entropy(&logits, 1) - (c as f64).ln()).abs() < 1e-12);
        }
    }

    /// Softmax regression gradient by hand: (p − onehot) ⊗ x.
    #[test]
    fn linear_softmax_gradient_matches_closed_form() {
        let x = array![0.3f64, -1.2, 0.7];
        let w = array![[0.1, -0.4], [0.25, 0.05], [-0.3, 0.2]];
        let b = array![0.05, -0.1];
        let logits = x.dot(&w) + &b;
        let layer = Dense { weight: w.clone(), bias: Some(b) };
        let mut grad = Dense::<f64>::zeros(3, 2, true);
        let rec = DenseRecord {
            input: x.clone().insert_axis(Axis(0)),
            output: logits.clone().insert_axis(Axis(0)),
            relu: false,
        };
        let mut d = softmax(&logits);
        d[1] -= 1.0;
        dense_backward(&layer, &mut grad, &rec, d.clone().insert_axis(Axis(0)));

        let p0 = 1.0 / (1.0 + (logits[1] - logits[0]).exp());
        let p = [p0, 1.0 - p0];
        let onehot = [0.0, 1.0];
        for i in 0..3 {
            for j in 0..2 {
                let expected = (p[j] - onehot[j]) * x[i];
                assert!((grad.weight[[i, j]] - expected).abs() < 1e-14);
            }
        }
        for j in 0..2 {
            assert!((grad.bias.as_ref().unwrap()[j] - (p[j] - onehot[j])).abs() < 1e-14);
        }
    }

    #[test]
    fn duplicating_the_batch_changes_nothing() {
        let cfg = ModelConfig {
            n_bands: 3,
            max_timesteps: 6,
            d_model: 8,
            n_heads: 2,
            encoder_dims: vec![5, 8],
            decoder_dims: vec![6],
            n_classes: 3,
            positional_encoding: Default::default(),
        };
        let p: Parameters<f64> = init_model(&cfg, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let samples: Vec<TimeSeriesSample> = (0..3)
            .map(|i| TimeSeriesSample {
                parcel_id: format!("s{i}"),
                label: i % 3,
                block_id: 0,
                values: Array2::from_shape_fn((3, 6), |_| rng.random_range(0.0f32..0.5)),
                mask: vec![true; 6],
            })
            .collect();
        let days: Vec<u16> = (0..6).map(|i| 10 + 7 * i).collect();
        let batch: Vec<LabeledInput> = samples
            .iter()
            .map(|s| LabeledInput { input: ModelInput::new(s, &days), label: s.label, id: &s.parcel_id })
            .collect();
        let doubled: Vec<LabeledInput> = batch.iter().chain(batch.iter()).copied().collect();
        let (l1, g1) = loss_and_grad(&p, &batch).unwrap();
        let (l2, g2) = loss_and_grad(&p, &doubled).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for (a, b) in g1.tensors().iter().zip(g2.tensors()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        assert!(loss_and_grad(&p, &[]).is_err());
    }
}
