use efl::metrics::{ap_cls, evaluate, evaluate_scores, margin_table};
use efl::synth::{make_dataset, seeded_rng, DatasetSpec, Group};
use efl::train::{ModelParams, TrainConfig};
use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;

fn scored_labels() -> impl Strategy<Value = Vec<(f64, bool)>> {
    prop::collection::vec((-5.0..5.0f64, any::<bool>()), 1..40)
}

// Precision at every positive, counting ties pessimistically against later samples.
fn brute_ap(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    if n_pos == 0 {
        return None;
    }
    let mut sum = 0.0;
    for i in (0..scores.len()).filter(|&i| positive[i]) {
        let ahead: Vec<usize> = (0..scores.len())
            .filter(|&k| scores[k] > scores[i] || (scores[k] == scores[i] && k <= i))
            .collect();
        let hits = ahead.iter().filter(|&&k| positive[k]).count();
        sum += hits as f64 / ahead.len() as f64;
    }
    Some(sum / n_pos as f64)
}

proptest! {
    #[test]
    fn ap_matches_pairwise_definition(v in scored_labels()) {
        let (s, p): (Vec<f64>, Vec<bool>) = v.into_iter().unzip();
        let (a, b) = (ap_cls(&s, &p), brute_ap(&s, &p));
        prop_assert_eq!(a.is_some(), b.is_some());
        if let (Some(a), Some(b)) = (a, b) {
            prop_assert!((a - b).abs() <= 1e-12);
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }

    #[test]
    fn ap_ignores_monotone_transforms(v in scored_labels(), k in 0.1..5.0f64, c in -3.0..3.0f64) {
        let (s, p): (Vec<f64>, Vec<bool>) = v.into_iter().unzip();
        let t: Vec<f64> = s.iter().map(|x| (k * x).exp() + c).collect();
        // Rounding may merge nearly equal scores.
        let strict = s.iter().zip(&t).all(|(a, ta)| s.iter().zip(&t).all(|(b, tb)| (a < b) == (ta < tb)));
        prop_assume!(strict);
        prop_assert_eq!(ap_cls(&s, &p), ap_cls(&t, &p));
    }
}

#[test]
fn random_scores_give_prevalence() {
    let mut rng = seeded_rng(11, 0);
    let n = 10_000;
    for prevalence in [0.05, 0.2, 0.5] {
        let scores: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let pos: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < prevalence).collect();
        let ap = ap_cls(&scores, &pos).unwrap();
        assert!((ap - prevalence).abs() < 0.02, "{prevalence}: {ap}");
    }
}

#[test]
fn evaluate_matches_scalar_loop() {
    let mut rng = seeded_rng(3, 0);
    for _ in 0..20 {
        let (n, c) = (rng.random_range(5..30), rng.random_range(1..5usize));
        let scores = Array2::from_shape_fn((n, c), |_| rng.random::<f64>());
        let labels: Vec<i32> = (0..n).map(|_| rng.random_range(-1..c as i32)).collect();
        let groups: Vec<Group> = (0..c).map(|j| Group::ALL[j % 3]).collect();
        let report = evaluate_scores(scores.view(), &labels, &groups).unwrap();
        for j in 0..c {
            let (mut ps, mut np, mut ns, mut nn) = (0.0, 0usize, 0.0, 0usize);
            for i in 0..n {
                if labels[i] == j as i32 {
                    ps += scores[[i, j]];
                    np += 1;
                } else {
                    ns += scores[[i, j]];
                    nn += 1;
                }
            }
            let m = &report.per_category[j];
            assert_eq!(m.positives, np);
            match m.margin {
                Some(margin) => assert!((margin - (ps / np as f64 - ns / nn as f64)).abs() <= 1e-12),
                None => assert!(np == 0 || nn == 0),
            }
        }
    }
}

#[test]
fn predictions_match_scalar_loop() {
    let spec = DatasetSpec {
        num_categories: 3,
        n_max: 10,
        feature_dim: 4,
        bg_ratio: 1.0,
        ..DatasetSpec::default()
    };
    let data = make_dataset(&spec).unwrap();
    let model = ModelParams::init(4, 3, &TrainConfig::default()).unwrap();
    let probs = model.predict(data.features.view()).unwrap();
    for i in 0..data.len() {
        for j in 0..3 {
            let mut z = model.bias[j];
            for k in 0..4 {
                z += data.features[[i, k]] * model.weights[[k, j]];
            }
            assert!((probs[[i, j]] - 1.0 / (1.0 + (-z).exp())).abs() <= 1e-12);
        }
    }
    let report = evaluate(&model, &data).unwrap();
    let table = margin_table(&report, &data.counts).unwrap();
    assert!(table.windows(2).all(|w| w[0].train_count >= w[1].train_count));
}
