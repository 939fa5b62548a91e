use std::collections::HashMap;

use esdfm_core::datagen::{synth_stream, ClickEvent, FeatureSpace, Features, GenConfig, SyntheticTruth};
use esdfm_core::relabel::{transform_es, transform_fnw, transform_fsiw, transform_oracle, ElapsedPolicy, SampleKind};
use esdfm_core::weighters::ideal_dp_rn;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn stream() -> impl Strategy<Value = Vec<ClickEvent>> {
    prop::collection::vec((0.0f64..1000.0, prop::option::of(0.0f64..300.0), 0u32..4), 0..40).prop_map(|raw| {
        let mut events: Vec<ClickEvent> = raw
            .into_iter()
            .map(|(t, h, cell)| ClickEvent {
                id: 0,
                click_ts: t,
                conversion_ts: h.map(|h| t + h),
                features: Features::cell(cell),
            })
            .collect();
        events.sort_by(|a, b| a.click_ts.total_cmp(&b.click_ts));
        for (i, e) in events.iter_mut().enumerate() {
            e.id = i as u64;
        }
        events
    })
}

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(9)
}

proptest! {
    #[test]
    fn es_conserves_and_pairs_duplicates(events in stream(), c in 0.0f64..200.0) {
        let out = transform_es(&events, &ElapsedPolicy::Dirac(c), &mut rng()).unwrap();
        let fake: Vec<u64> = out.iter().filter(|s| s.kind == SampleKind::FakeNegative).map(|s| s.source_id).collect();
        let dup: Vec<u64> = out.iter().filter(|s| s.kind == SampleKind::DelayedPositiveDuplicate).map(|s| s.source_id).collect();
        prop_assert_eq!(out.len(), events.len() + fake.len());
        let mut a = fake.clone();
        let mut b = dup.clone();
        a.sort_unstable();
        b.sort_unstable();
        prop_assert_eq!(a, b);
        prop_assert!(out.windows(2).all(|w| w[0].emit_ts <= w[1].emit_ts));
        prop_assert!(out.iter().all(|s| s.emit_ts >= s.click_ts && s.observed_label == s.kind.label()));
    }

    #[test]
    fn every_transform_is_sorted_by_emission(events in stream(), c in 0.0f64..200.0) {
        let policy = ElapsedPolicy::Dirac(c);
        for out in [
            transform_fnw(&events, &mut rng()).unwrap(),
            transform_fsiw(&events, &policy, &mut rng()).unwrap(),
            transform_oracle(&events).unwrap(),
        ] {
            prop_assert!(out.windows(2).all(|w| w[0].emit_ts <= w[1].emit_ts));
        }
    }

    #[test]
    fn es_at_zero_is_fnw(events in stream()) {
        let es = transform_es(&events, &ElapsedPolicy::Dirac(0.0), &mut rng()).unwrap();
        prop_assert_eq!(es, transform_fnw(&events, &mut rng()).unwrap());
    }

    #[test]
    fn es_beyond_every_delay_has_oracle_labels(events in stream()) {
        let es = transform_es(&events, &ElapsedPolicy::Dirac(300.0), &mut rng()).unwrap();
        let mut by_id: HashMap<u64, u8> = HashMap::new();
        for s in &es {
            prop_assert!(by_id.insert(s.source_id, s.observed_label).is_none(), "no duplicates expected");
        }
        for e in &events {
            prop_assert_eq!(by_id[&e.id], e.label());
        }
    }
}

/// Per cell, the observed positive share of the ES stream matches
/// `q(y=1|x) = p1 / (1 + p_dp)` within 3 standard errors, and the shares sum to one.
#[test]
fn es_stream_label_shares_match_closed_form() {
    let k = 4;
    let truth = SyntheticTruth::per_cell(vec![0.1, 0.3, 0.5, 0.8], vec![1.0 / 600.0, 1.0 / 1800.0, 1.0 / 3600.0, 1.0 / 7200.0]);
    let config = GenConfig {
        n_events: 200_000,
        horizon: 1e6,
        feature_space: FeatureSpace::Discrete(k),
        seed: 21,
        ..GenConfig::default()
    };
    let events = synth_stream(&config, &truth).unwrap();
    let c = 1800.0;
    let out = transform_es(&events, &ElapsedPolicy::Dirac(c), &mut rng()).unwrap();
    for cell in 0..k as u32 {
        let x = Features::cell(cell);
        let here: Vec<u8> = out.iter().filter(|s| s.features == x).map(|s| s.observed_label).collect();
        let n = here.len() as f64;
        let pos = here.iter().filter(|&&y| y == 1).count() as f64 / n;
        let neg = here.iter().filter(|&&y| y == 0).count() as f64 / n;
        assert_eq!(pos + neg, 1.0);
        let p1 = truth.cvr(&x, 0.0);
        let (p_dp, _) = ideal_dp_rn(&truth, &x, 0.0, c);
        let q1 = p1 / (1.0 + p_dp);
        let se = (q1 * (1.0 - q1) / n).sqrt();
        assert!((pos - q1).abs() < 3.0 * se, "cell {cell}: {pos} vs {q1} (se {se})");
    }
}
