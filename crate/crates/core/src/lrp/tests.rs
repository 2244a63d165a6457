use super::*;
use crate::dataio::TimeSeriesSample;
use crate::model::{init_model, ModelConfig};
use ndarray::array;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Plain double loop over `R_i = Σ_j x_i w_ij / (Σ_i' x_i' w_i'j + ε sign) R_j`.
fn z_rule(x: &[f64], w: &Array2<f64>, r: &[f64], eps: f64) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for j in 0..r.len() {
        let mut zs = 0.0;
        for i in 0..x.len() {
            zs += x[i] * w[[i, j]];
        }
        let d = if zs >= 0.0 { zs + eps } else { zs - eps };
        for i in 0..x.len() {
            out[i] += x[i] * w[[i, j]] / d * r[j];
        }
    }
    out
}

fn lin(x: &[f64], w: &Array2<f64>, r: &[f64], eps: f64) -> Vec<f64> {
    let mut d = LrpDiagnostics::default();
    lrp_linear(
        ArrayView1::from(x),
        w.view(),
        ArrayView1::from(r),
        eps,
        &mut d,
    )
    .to_vec()
}

#[test]
fn two_inputs_one_output() {
    let w = array![[0.5], [0.25]];
    let r = lin(&[1.0, 2.0], &w, &[2.0], 0.0);
    assert_eq!(r, vec![1.0, 1.0]);
}

#[test]
fn single_input_takes_everything() {
    let w = array![[3.0, -2.0]];
    let r = lin(&[0.7], &w, &[1.5, -0.5], 0.0);
    assert!((r[0] - 1.0).abs() < 1e-15);
}

#[test]
fn zero_denominator_is_counted_and_finite() {
    let w = array![[1.0], [1.0]];
    let mut d = LrpDiagnostics::default();
    let r = lrp_linear(
        array![1.0f64, -1.0].view(),
        w.view(),
        array![1.0].view(),
        1e-9,
        &mut d,
    );
    assert_eq!(d.near_zero_denominators, 1);
    assert_eq!(d.min_abs_denominator, Some(0.0));
    assert!(r.iter().all(|v| v.is_finite()));

    let mut d = LrpDiagnostics::default();
    let r = lrp_linear(
        array![1.0f64, -1.0].view(),
        w.view(),
        array![1.0].view(),
        0.0,
        &mut d,
    );
    assert_eq!(r.to_vec(), vec![0.0, 0.0]);
}

#[test]
fn rows_match_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Array2::from_shape_fn((4, 5), |_| rng.random_range(-1.0..1.0));
    let w = Array2::from_shape_fn((5, 3), |_| rng.random_range(-1.0..1.0));
    let r = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
    let mut d = LrpDiagnostics::default();
    let got = lrp_linear_rows(x.view(), w.view(), r.view(), 1e-9, &mut d);
    for row in 0..4 {
        let expect = z_rule(
            x.row(row).as_slice().unwrap(),
            &w,
            r.row(row).as_slice().unwrap(),
            1e-9,
        );
        for i in 0..5 {
            assert!((got[[row, i]] - expect[i]).abs() < 1e-10);
        }
    }
}

proptest! {
    #[test]
    fn linear_conserves_with_clear_denominators(
        xs in prop::collection::vec(0.1f64..2.0, 2..6),
        ws in prop::collection::vec(0.1f64..2.0, 18),
        rs in prop::collection::vec(-3.0f64..3.0, 3),
    ) {
        let n = xs.len();
        let w = Array2::from_shape_fn((n, 3), |(i, j)| ws[i * 3 + j]);
        let r = lin(&xs, &w, &rs, 1e-9);
        let total: f64 = r.iter().sum();
        let upper: f64 = rs.iter().sum();
        prop_assert!((total - upper).abs() <= 1e-6 * upper.abs().max(1.0));
    }
}

struct AttFixture {
    x: Array2<f64>,
    value: Array2<f64>,
    att: Vec<Array2<f64>>,
    mixed: Array2<f64>,
    wv: Array2<f64>,
    wo: Array2<f64>,
}

impl AttFixture {
    fn random(n: usize, d: usize, heads: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
        let wv = Array2::from_shape_fn((d, d), |_| rng.random_range(-1.0..1.0));
        let wo = Array2::from_shape_fn((d, d), |_| rng.random_range(-1.0..1.0));
        let bv = Array1::from_shape_fn(d, |_| rng.random_range(-0.2..0.2));
        let value = x.dot(&wv) + &bv;
        let att: Vec<Array2<f64>> = (0..heads)
            .map(|_| {
                let mut a = Array2::from_shape_fn((n, n), |_| rng.random_range(0.05..1.0));
                for mut row in a.rows_mut() {
                    let s = row.sum();
                    row /= s;
                }
                a
            })
            .collect();
        let dk = d / heads;
        let mut mixed = Array2::zeros((n, d));
        for (h, a) in att.iter().enumerate() {
            let cols = s![.., h * dk..(h + 1) * dk];
            mixed.slice_mut(cols).assign(&a.dot(&value.slice(cols)));
        }
        Self { x, value, att, mixed, wv, wo }
    }

    fn segment(&self) -> AttentionSegment<'_, f64> {
        AttentionSegment {
            input: self.x.view(),
            value: self.value.view(),
            attention: &self.att,
            mixed: self.mixed.view(),
            value_weight: self.wv.view(),
            output_weight: self.wo.view(),
        }
    }

    /// The three attention stages as explicit `nd × nd` matrices, each fed
    /// through the double-loop z-rule.
    fn brute_force(&self, upper: &Array2<f64>, eps: f64) -> Array2<f64> {
        let (n, d) = self.x.dim();
        let heads = self.att.len();
        let dk = d / heads;
        let flat = |a: &Array2<f64>| a.iter().copied().collect::<Vec<f64>>();
        let block_diag = |w: &Array2<f64>| {
            let mut m = Array2::zeros((n * d, n * d));
            for t in 0..n {
                for i in 0..d {
                    for j in 0..d {
                        m[[t * d + i, t * d + j]] = w[[i, j]];
                    }
                }
            }
            m
        };
        // mixing: O[t, e] = Σ_s A_h(e)[t, s] V[s, e]
        let mut mix = Array2::zeros((n * d, n * d));
        for t in 0..n {
            for s_ in 0..n {
                for e in 0..d {
                    mix[[s_ * d + e, t * d + e]] = self.att[e / dk][[t, s_]];
                }
            }
        }
        let r_o = z_rule(&flat(&self.mixed), &block_diag(&self.wo), &flat(upper), eps);
        let r_v = z_rule(&flat(&self.value), &mix, &r_o, eps);
        let r_x = z_rule(&flat(&self.x), &block_diag(&self.wv), &r_v, eps);
        Array2::from_shape_vec((n, d), r_x).unwrap()
    }
}

#[test]
fn attention_matches_materialized_maps() {
    for (seed, heads) in [(1u64, 1usize), (2, 2), (3, 4)] {
        let f = AttFixture::random(5, 8, heads, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 10);
        let upper = Array2::from_shape_fn((5, 8), |_| rng.random_range(-1.0..1.0));
        let mut d = LrpDiagnostics::default();
        let got = lrp_attention(&f.segment(), upper.view(), 1e-9, &mut d);
        let want = f.brute_force(&upper, 1e-9);
        let err = (&got - &want).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-10, "heads {heads}: {err}");
    }
}

#[test]
fn identity_attention_passes_relevance_through() {
    let n = 3;
    let d = 4;
    let x: Array2<f64> = array![[0.2, 0.5, 1.0, 0.3], [0.7, 0.1, 0.4, 0.9], [0.6, 0.8, 0.2, 0.5]];
    let eye = Array2::eye(d);
    let att = vec![Array2::eye(n)];
    let seg = AttentionSegment {
        input: x.view(),
        value: x.view(),
        attention: &att,
        mixed: x.view(),
        value_weight: eye.view(),
        output_weight: eye.view(),
    };
    let upper = array![[1.0, -2.0, 0.5, 0.0], [0.3, 0.3, 0.3, 0.3], [-1.0, 2.0, 0.0, 4.0]];
    let mut diag = LrpDiagnostics::default();
    let got = lrp_attention(&seg, upper.view(), 0.0, &mut diag);
    assert!((&got - &upper).iter().all(|v| v.abs() < 1e-15));
}

#[test]
fn uniform_attention_over_equal_values_splits_evenly() {
    let x: Array2<f64> = array![[0.4, 0.9], [0.4, 0.9]];
    let eye = Array2::eye(2);
    let att = vec![Array2::from_elem((2, 2), 0.5)];
    let seg = AttentionSegment {
        input: x.view(),
        value: x.view(),
        attention: &att,
        mixed: x.view(),
        value_weight: eye.view(),
        output_weight: eye.view(),
    };
    let upper = array![[1.0, 0.0], [0.0, 0.0]];
    let mut diag = LrpDiagnostics::default();
    let got = lrp_attention(&seg, upper.view(), 0.0, &mut diag);
    assert!((got[[0, 0]] - 0.5).abs() < 1e-15);
    assert!((got[[1, 0]] - 0.5).abs() < 1e-15);
    assert_eq!(got[[0, 1]], 0.0);
}

fn small_config() -> ModelConfig {
    ModelConfig {
        n_bands: 4,
        max_timesteps: 7,
        d_model: 8,
        n_heads: 2,
        encoder_dims: vec![6, 8],
        decoder_dims: vec![5],
        n_classes: 3,
        positional_encoding: Default::default(),
    }
}

fn sample(seed: u64, mask: Vec<bool>) -> TimeSeriesSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    TimeSeriesSample {
        parcel_id: format!("p{seed}"),
        label: 0,
        block_id: 0,
        values: Array2::from_shape_fn((4, mask.len()), |_| rng.random_range(0.0f32..0.7)),
        mask,
    }
}

fn days(n: usize) -> Vec<u16> {
    (0..n).map(|i| 30 + 20 * i as u16).collect()
}

#[test]
fn explanation_conserves_the_logit() {
    let p: Parameters<f64> = init_model(&small_config(), 11).unwrap();
    let d = days(7);
    for seed in 0..10 {
        let s = sample(seed, vec![true; 7]);
        let e = explain(&p, &ModelInput::new(&s, &d), &s.parcel_id, &LrpConfig::default()).unwrap();
        let gap = conservation_gap(&e.map, &e.trace);
        assert!(gap < 1e-6, "seed {seed}: gap {gap} {:?}", e.diagnostics);
        assert_eq!(e.map.values.dim(), (4, 7));
        assert_eq!(e.map.origin_logit, e.trace.logits[e.map.target_class]);
    }
}

#[test]
fn masked_timesteps_get_nothing() {
    let p: Parameters<f64> = init_model(&small_config(), 12).unwrap();
    let d = days(7);
    let mask = vec![true, false, true, true, false, true, false];
    let s = sample(3, mask.clone());
    let map = relevance_map(&p, &ModelInput::new(&s, &d), "x", &LrpConfig::default()).unwrap();
    for (t, &m) in mask.iter().enumerate() {
        if !m {
            assert!(map.values.column(t).iter().all(|&v| v == 0.0));
        }
    }
    let rt = timestep_relevance(&map);
    assert_eq!(rt.values.len(), 7);
    assert!((rt.values.sum() - map.values.sum()).abs() < 1e-12);
}

#[test]
fn given_target_is_respected_and_checked() {
    let p: Parameters<f64> = init_model(&small_config(), 13).unwrap();
    let d = days(7);
    let s = sample(4, vec![true; 7]);
    let input = ModelInput::new(&s, &d);
    for k in 0..3 {
        let cfg = LrpConfig { target: TargetSelection::Given(k), ..Default::default() };
        let e = explain(&p, &input, "x", &cfg).unwrap();
        assert_eq!(e.map.target_class, k);
        assert!(conservation_gap(&e.map, &e.trace) < 1e-6);
    }
    let cfg = LrpConfig { target: TargetSelection::Given(3), ..Default::default() };
    assert!(explain(&p, &input, "x", &cfg).is_err());
}

#[test]
fn gap_does_not_shrink_as_epsilon_grows() {
    let d = days(7);
    let s = sample(5, vec![true; 7]);
    let input = ModelInput::new(&s, &d);
    // skip initialisations whose decoder is dead on this sample
    let p = (14..64)
        .map(|seed| init_model::<f64>(&small_config(), seed).unwrap())
        .find(|p| forward(p, &input).unwrap().logits.iter().any(|v| v.abs() > 1e-2))
        .unwrap();
    let mut last = 0.0;
    for eps in [1e-12, 1e-9, 1e-6, 1e-3, 1e-1, 1.0] {
        let cfg = LrpConfig { epsilon: eps, ..Default::default() };
        let e = explain(&p, &input, "x", &cfg).unwrap();
        let gap = conservation_gap(&e.map, &e.trace);
        assert!(gap >= last - 1e-9, "eps {eps}: {gap} < {last}");
        last = gap;
    }
    assert!(last > 1e-3);
}

#[test]
fn step_balances_cover_every_stage() {
    let p: Parameters<f64> = init_model(&small_config(), 15).unwrap();
    let d = days(7);
    let s = sample(6, vec![true; 7]);
    let e = explain(&p, &ModelInput::new(&s, &d), "x", &LrpConfig::default()).unwrap();
    let names: Vec<&str> = e.diagnostics.steps.iter().map(|b| b.step.as_str()).collect();
    assert_eq!(
        names,
        [
            "decoder.1",
            "decoder.0",
            "pool",
            "attention.output",
            "attention.mix",
            "attention.value",
            "positional",
            "encoder.1",
            "encoder.0"
        ]
    );
    for b in &e.diagnostics.steps {
        assert!(b.absorbed().abs() < 1e-6 * b.upper.abs().max(1.0), "{b:?}");
    }
}

#[test]
fn f32_explanations_conserve_loosely() {
    let p: Parameters<f32> = init_model(&small_config(), 16).unwrap();
    let d = days(7);
    let s = sample(7, vec![true; 7]);
    let e = explain(&p, &ModelInput::new(&s, &d), "x", &LrpConfig::default()).unwrap();
    assert!(conservation_gap(&e.map, &e.trace) < 1e-3);
}

#[test]
fn exports_have_expected_shape() {
    let p: Parameters<f64> = init_model(&small_config(), 17).unwrap();
    let d = days(3);
    let s = sample(8, vec![true, true, false]);
    let map = relevance_map(&p, &ModelInput::new(&s, &d), "p8", &LrpConfig::default()).unwrap();
    let dates: Vec<chrono::NaiveDate> = d
        .iter()
        .map(|&doy| chrono::NaiveDate::from_yo_opt(2019, doy as u32).unwrap())
        .collect();
    let bands: Vec<String> = (0..4).map(|b| format!("b{b}")).collect();

    let mut long = Vec::new();
    write_relevance_long(std::slice::from_ref(&map), &dates, &bands, &mut long).unwrap();
    let text = String::from_utf8(long).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "parcel_id,target_class,date,band,relevance");
    assert_eq!(lines.len(), 1 + 3 * 4);
    assert!(lines[1].starts_with(&format!("p8,{},2019-01-30,b0,", map.target_class)));
    let parsed: f64 = lines[1].rsplit(',').next().unwrap().parse().unwrap();
    assert_eq!(parsed, map.values[[0, 0]]);

    let mut rt = Vec::new();
    write_timestep_relevance(std::slice::from_ref(&map), &dates, &mut rt).unwrap();
    let text = String::from_utf8(rt).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.lines().last().unwrap().ends_with(",0e0"));

    assert!(write_timestep_relevance(std::slice::from_ref(&map), &dates[..2], Vec::new()).is_err());
}


#[test]
fn timestep_sums() {
    let map = RelevanceMap {
        values: array![[1.0, 0.0, -1.0], [0.5, 0.5, 0.0]],
        target_class: 0,
        origin_logit: 1.0,
        sample_ref: "m".into(),
    };
    assert_eq!(timestep_relevance(&map).values.to_vec(), vec![1.5, 0.5, -1.0]);
    let zero = RelevanceMap { values: Array2::<f64>::zeros((2, 4)), ..map };
    assert_eq!(timestep_relevance(&zero).values.to_vec(), vec![0.0; 4]);
}

#[test]
fn zero_origin_gap_is_finite() {
    let p: Parameters<f64> = init_model(&small_config(), 18).unwrap();
    let d = days(7);
    let s = sample(9, vec![true; 7]);
    let mut e = explain(&p, &ModelInput::new(&s, &d), "x", &LrpConfig::default()).unwrap();
    e.trace.logits.fill(0.0);
    assert!(conservation_gap(&e.map, &e.trace).is_finite());
}

#[test]
fn exports_read_back() {
    let p: Parameters<f64> = init_model(&small_config(), 19).unwrap();
    let d = days(3);
    let maps: Vec<RelevanceMap<f64>> = (0..2)
        .map(|i| {
            let s = sample(20 + i, vec![true, false, true]);
            relevance_map(&p, &ModelInput::new(&s, &d), &format!("q{i}"), &LrpConfig::default()).unwrap()
        })
        .collect();
    let dates: Vec<chrono::NaiveDate> = d
        .iter()
        .map(|&doy| chrono::NaiveDate::from_yo_opt(2019, doy as u32).unwrap())
        .collect();
    let bands: Vec<String> = (0..4).map(|b| format!("b{b}")).collect();
    let mut long = Vec::new();
    write_relevance_long(&maps, &dates, &bands, &mut long).unwrap();
    let back = read_relevance_long(long.as_slice(), 4).unwrap();
    assert_eq!(back.len(), 2);
    for ((id, class, values), m) in back.iter().zip(&maps) {
        assert_eq!((id, *class), (&m.sample_ref, m.target_class));
        assert_eq!(values, &m.values);
    }
    let mut rt = Vec::new();
    write_timestep_relevance(&maps, &dates, &mut rt).unwrap();
    let back = read_timestep_relevance(rt.as_slice()).unwrap();
    assert_eq!(back[1].2, timestep_relevance(&maps[1]).values.to_vec());
}
