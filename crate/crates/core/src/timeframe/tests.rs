use super::*;
use crate::dataio::{generate_synthetic, SynthConfig};
use proptest::prelude::*;

fn weekly(n: usize) -> DateAxis {
    DateAxis::regular(NaiveDate::from_ymd_opt(2019, 1, 6).unwrap(), 7, n).unwrap()
}

fn rel(index: usize, label: usize, predicted: usize, values: Vec<f64>) -> SampleRelevance {
    SampleRelevance { index, label, predicted, target_class: predicted, values }
}

#[test]
fn top_n_examples() {
    assert_eq!(top_n_timesteps(&[0.1, 0.9, 0.5, 0.9], 2).unwrap(), vec![1, 3]);
    assert_eq!(top_n_timesteps(&[0.5, 0.5, 0.1], 1).unwrap(), vec![0]);
    assert_eq!(top_n_timesteps(&[0.3, 0.2, 0.1], 3).unwrap(), vec![0, 1, 2]);
    assert!(top_n_timesteps(&[0.3, 0.2], 0).is_err());
    assert!(top_n_timesteps(&[0.3, 0.2], 3).is_err());
}

#[test]
fn bounding_window_examples() {
    let axis = weekly(52);
    let tf = bounding_window(&[9, 4], &axis, 2).unwrap();
    assert_eq!(tf.start, axis.dates()[4]);
    assert_eq!(tf.end, axis.dates()[9]);
    assert_eq!(tf.member_indices, vec![4, 9]);
    let single = bounding_window(&[7], &axis, 1).unwrap();
    assert_eq!(single.start, single.end);
    assert!(bounding_window(&[], &axis, 1).is_err());
    assert!(bounding_window(&[52], &axis, 1).is_err());
}

#[test]
fn peak_examples() {
    assert_eq!(dominant_peaks(&[0.3, 0.1, 0.4], 0.25), vec![(0, 0.3), (2, 0.4)]);
    assert_eq!(dominant_peaks(&[0.3, 0.3, 0.1], 0.25), vec![(0, 0.3)]);
    assert!(dominant_peaks(&[0.2, 0.1, 0.24], 0.25).is_empty());
    assert!(dominant_peaks(&[0.1, 0.3, 0.3, 0.5], 0.25) == vec![(3, 0.5)]);
    assert_eq!(dominant_peaks(&[0.25, 0.1], 0.25), vec![]);
    assert_eq!(dominant_peaks(&[-0.6, 0.1], 0.25), vec![(0, 0.6)]);
}

#[test]
fn aggregation_rules() {
    let one = [rel(0, 0, 0, vec![0.5, -2.0, 1.0])];
    let p = profile_from_relevances(&one, 1, 3, &AggregateOptions::default()).unwrap();
    assert_eq!(p.per_timestep, vec![0.25, 1.0, 0.5]);

    let two = [rel(0, 0, 0, vec![1.0, 3.0]), rel(1, 1, 1, vec![1.0, 3.0])];
    let p = profile_from_relevances(&two, 2, 2, &AggregateOptions::default()).unwrap();
    assert_eq!(p.per_timestep, vec![1.0 / 3.0, 1.0]);
    assert_eq!(p.class_counts, vec![1, 1]);

    let mixed = [
        rel(0, 0, 0, vec![0.0, 0.0]),
        rel(1, 0, 1, vec![1.0, 0.0]),
        rel(2, 1, 1, vec![0.0, 4.0]),
    ];
    let p = profile_from_relevances(&mixed, 2, 2, &AggregateOptions::default()).unwrap();
    assert_eq!(p.n_zero_excluded, 1);
    assert_eq!(p.n_incorrect_excluded, 1);
    assert_eq!(p.n_samples_used, 1);
    assert_eq!(p.per_timestep, vec![0.0, 1.0]);
    let pc = p.per_class.unwrap();
    assert_eq!(pc.row(0).to_vec(), vec![0.0, 0.0]);
    assert_eq!(pc.row(1).to_vec(), vec![0.0, 1.0]);

    let all = AggregateOptions { correct_only: false, ..Default::default() };
    let p = profile_from_relevances(&mixed, 2, 2, &all).unwrap();
    assert_eq!(p.per_timestep, vec![0.5, 0.5]);

    let three = [
        rel(0, 0, 0, vec![1.0, 0.1]),
        rel(1, 0, 0, vec![1.0, 0.2]),
        rel(2, 0, 0, vec![1.0, 0.9]),
    ];
    let med = AggregateOptions { statistic: Statistic::Median, ..Default::default() };
    let p = profile_from_relevances(&three, 1, 2, &med).unwrap();
    assert_eq!(p.per_timestep, vec![1.0, 0.2]);
}

#[test]
fn prune_examples() {
    let cfg = SynthConfig { n_samples: 60, n_classes: 3, ..Default::default() };
    let ds = generate_synthetic(&cfg).unwrap();
    let full = Timeframe::full_span(&ds.axis).unwrap();
    assert_eq!(prune_to_window(&ds, &full).unwrap(), ds);

    let tf = bounding_window(&[10, 20], &ds.axis, 2).unwrap();
    let once = prune_to_window(&ds, &tf).unwrap();
    assert_eq!(once.n_timesteps(), 11);
    assert_eq!(once.axis.dates()[0], ds.axis.dates()[10]);
    assert_eq!(prune_to_window(&once, &tf).unwrap(), once);
    for s in &once.samples {
        let orig = ds.samples.iter().find(|o| o.parcel_id == s.parcel_id).unwrap();
        assert_eq!(s.mask, orig.mask[10..=20].to_vec());
        for t in 0..11 {
            for b in 0..s.n_bands() {
                assert_eq!(s.values[[b, t]].to_bits(), orig.values[[b, t + 10]].to_bits());
            }
        }
    }

    let outside = Timeframe {
        n: 1,
        start: NaiveDate::from_ymd_opt(2020, 3, 1).unwrap(),
        end: NaiveDate::from_ymd_opt(2020, 4, 1).unwrap(),
        member_indices: vec![],
    };
    assert!(matches!(prune_to_window(&ds, &outside), Err(Error::Pruning(_))));
}

#[test]
fn profile_file_round_trips() {
    let axis = weekly(4);
    let samples = [rel(0, 0, 0, vec![0.1, 0.2, -0.7, 0.3]), rel(1, 1, 1, vec![1.0, 0.0, 0.0, 0.5])];
    let p = profile_from_relevances(&samples, 2, 4, &AggregateOptions::default()).unwrap();
    let names = vec!["wheat".to_string(), "maize".to_string()];
    let mut buf = Vec::new();
    write_profile(&p, &axis, &names, &mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("date,score,class\n2019-01-06,"));
    assert_eq!(text.lines().count(), 1 + 3 * 4);
    let back = read_profile(buf.as_slice()).unwrap();
    assert_eq!(back.axis, axis);
    assert_eq!(back.pooled, p.per_timestep);
    assert_eq!(back.classes[1].0, "maize");
    assert_eq!(back.classes[1].1, p.per_class.unwrap().row(1).to_vec());

    let tfs = timeframes(&back.pooled, &axis, &[1, 2]).unwrap();
    let mut out = Vec::new();
    write_timeframes(&tfs, &mut out).unwrap();
    assert_eq!(
        String::from_utf8(out).unwrap(),
        "n,start,end\n1,2019-01-06,2019-01-06\n2,2019-01-06,2019-01-20\n"
    );
}

proptest! {
    #[test]
    fn windows_nest(scores in prop::collection::vec(0.0f64..1.0, 10..=52)) {
        let axis = weekly(scores.len());
        let tfs = timeframes(&scores, &axis, &[3, 5, 10]).unwrap();
        prop_assert!(tfs[0].within(&tfs[1]));
        prop_assert!(tfs[1].within(&tfs[2]));
        for tf in &tfs {
            prop_assert_eq!(tf.start, axis.dates()[tf.member_indices[0]]);
            prop_assert_eq!(tf.end, axis.dates()[*tf.member_indices.last().unwrap()]);
        }
    }

    #[test]
    fn windows_nest_with_ties(scores in prop::collection::vec(0u8..4, 10..40)) {
        let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
        let axis = weekly(scores.len());
        let tfs = timeframes(&scores, &axis, &[3, 5, 10]).unwrap();
        prop_assert!(tfs[0].within(&tfs[1]) && tfs[1].within(&tfs[2]));
    }

    #[test]
    fn lower_threshold_finds_more_peaks(
        scores in prop::collection::vec(-1.0f64..1.0, 1..40),
        a in 0.01f64..1.0,
        b in 0.01f64..1.0,
    ) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let many = dominant_peaks(&scores, lo);
        for p in dominant_peaks(&scores, hi) {
            prop_assert!(many.contains(&p));
        }
    }

    #[test]
    fn normalized_max_is_one(r in prop::collection::vec(-5.0f64..5.0, 1..30)) {
        if let Some(n) = normalize_linf(&r) {
            prop_assert_eq!(n.iter().cloned().fold(0.0, f64::max), 1.0);
        }
    }
}
