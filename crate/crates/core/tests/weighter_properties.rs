use esdfm_core::datagen::{synth_stream, FeatureSpace, Features, GenConfig, GroundTruth, SyntheticTruth};
use esdfm_core::learner::{FeatureSchema, NetConfig, Trainable};
use esdfm_core::methods::fnw_weight;
use esdfm_core::relabel::ElapsedPolicy;
use esdfm_core::weighters::{
    build_dp_rn_dataset, es_weight, ideal_dp_rn, ideal_weights, importance_identity_check, DfmConfig, DfmModel, DfmSample,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn per_cell() -> impl Strategy<Value = (f64, f64)> {
    (0.0f64..=1.0, 1e-5f64..1e-1)
}

proptest! {
    #[test]
    fn es_weights_stay_in_zero_two(y in 0u8..=1, dp in 0.0f64..=1.0, rn in 0.0f64..=1.0) {
        let w = es_weight(y, dp, rn).unwrap();
        prop_assert!((0.0..=2.0).contains(&w));
    }

    #[test]
    fn ideal_factors_are_monotone_in_the_wait((p1, rate) in per_cell(), a in 0.0f64..1e5, b in 0.0f64..1e5) {
        let truth = SyntheticTruth::per_cell(vec![p1], vec![rate]);
        let x = Features::cell(0);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (dp_lo, rn_lo) = ideal_dp_rn(&truth, &x, 0.0, lo);
        let (dp_hi, rn_hi) = ideal_dp_rn(&truth, &x, 0.0, hi);
        prop_assert!(dp_hi <= dp_lo);
        prop_assert!(rn_hi >= rn_lo);
    }

    #[test]
    fn ideal_weights_at_zero_follow_the_fnw_law((p1, rate) in per_cell(), y in 0u8..=1) {
        let truth = SyntheticTruth::per_cell(vec![p1], vec![rate]);
        let x = Features::cell(0);
        let es = ideal_weights(&GroundTruth::Synthetic(truth), &ElapsedPolicy::Dirac(0.0), &x, 0.0, y).unwrap();
        prop_assert!((es - fnw_weight(y, p1).unwrap()).abs() <= 1e-15);
    }
}

#[test]
fn identity_holds_for_random_truths() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let k = 8;
        let cvr: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0)).collect();
        let rates: Vec<f64> = (0..k).map(|_| 1.0 / rng.random_range(60.0..86_400.0)).collect();
        let truth = SyntheticTruth::per_cell(cvr, rates);
        let mean = truth.mean_delay(FeatureSpace::Discrete(k)).unwrap();
        for c in [0.0, rng.random_range(0.0..4.0 * mean), 10.0 * mean] {
            let d = importance_identity_check(&truth, &ElapsedPolicy::Dirac(c), k).unwrap();
            assert!(d < 1e-10, "c = {c}: discrepancy {d}");
        }
    }
}

/// The delayed-positive label of the estimator dataset has mean `p_dp` per cell.
#[test]
fn dp_labels_average_to_ideal_p_dp() {
    let truth = SyntheticTruth::per_cell(vec![0.3, 0.6], vec![1.0 / 3600.0, 1.0 / 900.0]);
    let config = GenConfig {
        n_events: 100_000,
        horizon: 1e6,
        feature_space: FeatureSpace::Discrete(2),
        seed: 5,
        ..GenConfig::default()
    };
    let events = synth_stream(&config, &truth).unwrap();
    let c = 1800.0;
    let data = build_dp_rn_dataset(&events, &ElapsedPolicy::Dirac(c), 1e9, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    for cell in 0..2u32 {
        let x = Features::cell(cell);
        let labels: Vec<f64> = data.iter().filter(|s| s.features == x).map(|s| f64::from(s.dp_label)).collect();
        let n = labels.len() as f64;
        let mean = labels.iter().sum::<f64>() / n;
        let (p_dp, _) = ideal_dp_rn(&truth, &x, 0.0, c);
        let se = (p_dp * (1.0 - p_dp) / n).sqrt();
        assert!((mean - p_dp).abs() < 3.0 * se, "cell {cell}: {mean} vs {p_dp}");
    }
}

#[test]
fn dfm_gradient_matches_finite_differences() {
    let config = NetConfig {
        embedding_dim: 3,
        hidden: vec![5],
        leaky_slope: 0.01,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let samples: Vec<DfmSample> = (0..8)
        .map(|i| DfmSample {
            features: Features::cell(i % 3),
            converted: i % 2 == 0,
            time: rng.random_range(60.0..20_000.0),
        })
        .collect();
    let refs: Vec<&DfmSample> = samples.iter().collect();
    let kink_free = |m: &DfmModel| {
        samples
            .iter()
            .all(|s| m.network().hidden_preactivations(&s.features).unwrap().iter().all(|z| z.abs() > 1e-3))
    };
    let mut checked = 0;
    for seed in 0..10 {
        let m = DfmModel::new(FeatureSchema::discrete(3), config.clone(), 1e-7, DfmConfig::default(), seed).unwrap();
        if !kink_free(&m) {
            continue;
        }
        let (_, grad) = m.batch_loss_and_grad(&refs, 1e-3).unwrap();
        for (name, range) in m.network().tensors() {
            let (mut diff, mut scale) = (0.0f64, 0.0f64);
            for i in range {
                let h = 1e-4;
                let mut plus = m.clone();
                plus.network_mut().params_mut()[i] += h;
                let mut minus = m.clone();
                minus.network_mut().params_mut()[i] -= h;
                if !kink_free(&plus) || !kink_free(&minus) {
                    continue;
                }
                let num = (plus.batch_loss_and_grad(&refs, 1e-3).unwrap().0 - minus.batch_loss_and_grad(&refs, 1e-3).unwrap().0)
                    / (2.0 * h);
                diff += (grad[i] - num).powi(2);
                scale += grad[i].powi(2).max(num.powi(2));
            }
            if scale > 1e-20 {
                let rel = diff.sqrt() / scale.sqrt();
                assert!(rel < 1e-4, "seed {seed} tensor {name}: relative error {rel}");
            }
        }
        checked += 1;
    }
    assert!(checked >= 3, "too few kink-free draws ({checked})");
}
