//! Layer-wise relevance propagation.
//!
//! Relevance flows backward with the z-rule: an upper neuron `j` hands its
//! relevance to lower neurons `i` in proportion to their contributions
//! `z_ij = x_i · w_ij`, normalised by `Σ_i z_ij`. Biases never receive a
//! share. Attention and pooling weights are frozen at their forward values,
//! so those blocks act as fixed linear maps and relevance only travels the
//! value path.

pub(crate) mod export;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{argmax, forward, ForwardTrace, ModelInput, Parameters};
use crate::scalar::Scalar;

pub use export::{
    read_relevance_long, read_timestep_relevance, write_relevance_long, write_timestep_relevance,
};

/// Denominators at or below this magnitude are counted as near-zero.
pub const NEAR_ZERO_DENOMINATOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AttentionRule {
    /// Attention and softmax outputs are constants; relevance flows through
    /// the value and output projections only.
    #[default]
    WeightsAsConstants,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind", content = "class")]
pub enum TargetSelection {
    #[default]
    Predicted,
    Given(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LrpConfig {
    /// Stabilizer added as `ε · sign(Σz)` to every denominator.
    pub epsilon: f64,
    pub attention_rule: AttentionRule,
    pub target: TargetSelection,
}

impl Default for LrpConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-9,
            attention_rule: AttentionRule::WeightsAsConstants,
            target: TargetSelection::Predicted,
        }
    }
}

/// Total relevance entering and leaving one propagation step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepBalance {
    pub step: String,
    pub upper: f64,
    pub lower: f64,
}

impl StepBalance {
    /// Relevance absorbed by the step (stabilizer, dead denominators).
    pub fn absorbed(&self) -> f64 {
        self.upper - self.lower
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LrpDiagnostics {
    pub near_zero_denominators: usize,
    pub min_abs_denominator: Option<f64>,
    pub steps: Vec<StepBalance>,
}

impl LrpDiagnostics {
    fn see_denominator(&mut self, d: f64) {
        let a = d.abs();
        if a <= NEAR_ZERO_DENOMINATOR {
            self.near_zero_denominators += 1;
        }
        self.see_min(a);
    }

    fn see_min(&mut self, a: f64) {
        self.min_abs_denominator = Some(self.min_abs_denominator.map_or(a, |m| m.min(a)));
    }

    fn balance<S: Scalar>(&mut self, step: impl Into<String>, upper: S, lower: S) {
        self.steps.push(StepBalance {
            step: step.into(),
            upper: upper.to_f64_lossy(),
            lower: lower.to_f64_lossy(),
        });
    }

    /// Adds the denominator counts of another call; step balances are
    /// per call and are not merged.
    pub fn merge(&mut self, other: &LrpDiagnostics) {
        self.near_zero_denominators += other.near_zero_denominators;
        if let Some(m) = other.min_abs_denominator {
            self.see_min(m);
        }
    }
}

/// `relevance / (Σz + ε·sign(Σz))` with `sign(0) = +1`. A zero denominator
/// (only possible with `ε = 0`) passes nothing.
fn share<S: Scalar>(relevance: S, z_sum: S, eps: S, diag: &mut LrpDiagnostics) -> S {
    diag.see_denominator(z_sum.to_f64_lossy());
    let denom = if z_sum >= S::zero() { z_sum + eps } else { z_sum - eps };
    if denom == S::zero() {
        S::zero()
    } else {
        relevance / denom
    }
}

/// z-rule through `y = x · W` for a single activation vector.
pub fn lrp_linear<S: Scalar>(
    lower_activations: ArrayView1<'_, S>,
    weights: ArrayView2<'_, S>,
    upper_relevance: ArrayView1<'_, S>,
    epsilon: S,
    diag: &mut LrpDiagnostics,
) -> Array1<S> {
    let x = lower_activations.insert_axis(Axis(0));
    let r = upper_relevance.insert_axis(Axis(0));
    lrp_linear_rows(x, weights, r, epsilon, diag).remove_axis(Axis(0))
}

/// [`lrp_linear`] applied independently to each row of `x` and `r`.
pub fn lrp_linear_rows<S: Scalar>(
    x: ArrayView2<'_, S>,
    weights: ArrayView2<'_, S>,
    upper_relevance: ArrayView2<'_, S>,
    epsilon: S,
    diag: &mut LrpDiagnostics,
) -> Array2<S> {
    let z = x.dot(&weights);
    let mut scaled = upper_relevance.to_owned();
    Zip::from(&mut scaled)
        .and(&z)
        .for_each(|r, &zs| *r = share(*r, zs, epsilon, diag));
    let mut lower = scaled.dot(&weights.t());
    lower *= &x;
    lower
}

/// The recorded tensors one attention block needs for propagation.
#[derive(Debug, Clone, Copy)]
pub struct AttentionSegment<'a, S> {
    /// Block input (`n × d`).
    pub input: ArrayView2<'a, S>,
    /// Value projection output including its bias.
    pub value: ArrayView2<'a, S>,
    /// Row-stochastic attention per head.
    pub attention: &'a [Array2<S>],
    /// Head outputs, `attention · value` per head.
    pub mixed: ArrayView2<'a, S>,
    pub value_weight: ArrayView2<'a, S>,
    pub output_weight: ArrayView2<'a, S>,
}

impl<'a, S: Scalar> AttentionSegment<'a, S> {
    pub fn from_trace(params: &'a Parameters<S>, trace: &'a ForwardTrace<S>) -> Self {
        Self {
            input: trace.attn_input.view(),
            value: trace.value.view(),
            attention: &trace.attention,
            mixed: trace.mixed.view(),
            value_weight: params.value.weight.view(),
            output_weight: params.output.weight.view(),
        }
    }
}

/// Relevance on the attention block output (`n × d`) mapped to its input.
pub fn lrp_attention<S: Scalar>(
    seg: &AttentionSegment<'_, S>,
    upper_relevance: ArrayView2<'_, S>,
    epsilon: S,
    diag: &mut LrpDiagnostics,
) -> Array2<S> {
    let r_mixed = lrp_linear_rows(seg.mixed, seg.output_weight, upper_relevance, epsilon, diag);
    diag.balance("attention.output", upper_relevance.sum(), r_mixed.sum());

    let n_heads = seg.attention.len();
    let dk = seg.mixed.ncols() / n_heads;
    let mut r_value = Array2::<S>::zeros(seg.value.raw_dim());
    for (h, att) in seg.attention.iter().enumerate() {
        let cols = s![.., h * dk..(h + 1) * dk];
        let mut scaled = r_mixed.slice(cols).to_owned();
        Zip::from(&mut scaled)
            .and(seg.mixed.slice(cols))
            .for_each(|r, &o| *r = share(*r, o, epsilon, diag));
        let mut rv = att.t().dot(&scaled);
        rv *= &seg.value.slice(cols);
        r_value.slice_mut(cols).assign(&rv);
    }
    diag.balance("attention.mix", r_mixed.sum(), r_value.sum());

    let r_input = lrp_linear_rows(seg.input, seg.value_weight, r_value.view(), epsilon, diag);
    diag.balance("attention.value", r_value.sum(), r_input.sum());
    r_input
}

/// Relevance of every (band, timestep) input for one target logit.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceMap<S> {
    /// `B × T`; masked timesteps are zero.
    pub values: Array2<S>,
    pub target_class: usize,
    pub origin_logit: S,
    pub sample_ref: String,
}

/// Per-timestep relevance: band sums of a [`RelevanceMap`].
#[derive(Debug, Clone, PartialEq)]
pub struct TimestepRelevance<S> {
    pub values: Array1<S>,
}

/// A relevance map with the forward pass it was derived from.
#[derive(Debug, Clone)]
pub struct Explanation<S> {
    pub map: RelevanceMap<S>,
    pub trace: ForwardTrace<S>,
    pub diagnostics: LrpDiagnostics,
}

/// Runs the network on `input` and propagates the target logit back to the
/// input cells.
pub fn explain<S: Scalar>(
    params: &Parameters<S>,
    input: &ModelInput<'_>,
    sample_ref: &str,
    config: &LrpConfig,
) -> Result<Explanation<S>> {
    let trace = forward(params, input)?;
    let eps = S::lit(config.epsilon);
    let mut diag = LrpDiagnostics::default();

    let target = match config.target {
        TargetSelection::Predicted => argmax(trace.logits.as_slice().expect("standard layout")),
        TargetSelection::Given(k) => {
            if k >= trace.logits.len() {
                return Err(crate::Error::Range(format!(
                    "target class {k} outside {} classes",
                    trace.logits.len()
                )));
            }
            k
        }
    };
    let origin = trace.logits[target];
    let mut r = Array2::<S>::zeros((1, trace.logits.len()));
    r[[0, target]] = origin;

    for (i, (layer, rec)) in params.decoder.iter().zip(&trace.decoder).enumerate().rev() {
        let lower = lrp_linear_rows(rec.input.view(), layer.weight.view(), r.view(), eps, &mut diag);
        diag.balance(format!("decoder.{i}"), r.sum(), lower.sum());
        r = lower;
    }
    let r_pooled = r.row(0).to_owned();

    // pooling: pooled[e] = Σ_t a_t · y[t, e]
    let y = &trace.attn_output;
    let mut scaled = r_pooled.clone();
    Zip::from(&mut scaled)
        .and(&trace.pooled)
        .for_each(|r, &p| *r = share(*r, p, eps, &mut diag));
    let mut r_y = trace
        .pool_weights
        .view()
        .insert_axis(Axis(1))
        .dot(&scaled.insert_axis(Axis(0)));
    r_y *= y;
    diag.balance("pool", r_pooled.sum(), r_y.sum());

    let seg = AttentionSegment::from_trace(params, &trace);
    let r_x = lrp_attention(&seg, r_y.view(), eps, &mut diag);

    // the positional code is an additive constant and takes no share
    let encoded = &trace.encoder.last().expect("encoder has layers").output;
    let mut r_e = r_x.clone();
    Zip::from(&mut r_e)
        .and(encoded)
        .for_each(|r, &e| *r = e * share(*r, e, eps, &mut diag));
    diag.balance("positional", r_x.sum(), r_e.sum());

    let mut r = r_e;
    for (i, (layer, rec)) in params.encoder.iter().zip(&trace.encoder).enumerate().rev() {
        let lower = lrp_linear_rows(rec.input.view(), layer.weight.view(), r.view(), eps, &mut diag);
        diag.balance(format!("encoder.{i}"), r.sum(), lower.sum());
        r = lower;
    }

    let mut values = Array2::<S>::zeros((params.config.n_bands, trace.n_timesteps));
    for (row, &t) in trace.present.iter().enumerate() {
        values.column_mut(t).assign(&r.row(row));
    }
    Ok(Explanation {
        map: RelevanceMap {
            values,
            target_class: target,
            origin_logit: origin,
            sample_ref: sample_ref.to_string(),
        },
        trace,
        diagnostics: diag,
    })
}

pub fn relevance_map<S: Scalar>(
    params: &Parameters<S>,
    input: &ModelInput<'_>,
    sample_ref: &str,
    config: &LrpConfig,
) -> Result<RelevanceMap<S>> {
    explain(params, input, sample_ref, config).map(|e| e.map)
}

/// `R_t = Σ_b R_{b,t}`.
pub fn timestep_relevance<S: Scalar>(map: &RelevanceMap<S>) -> TimestepRelevance<S> {
    TimestepRelevance {
        values: map.values.sum_axis(Axis(0)),
    }
}

/// `|Σ R − logit| / max(|logit|, 1e-8)` for the map's target logit.
pub fn conservation_gap<S: Scalar>(map: &RelevanceMap<S>, trace: &ForwardTrace<S>) -> f64 {
    let origin = trace.logits[map.target_class].to_f64_lossy();
    let total: f64 = map.values.iter().map(|v| v.to_f64_lossy()).sum();
    (total - origin).abs() / origin.abs().max(1e-8)
}

#[cfg(test)]
mod tests;
