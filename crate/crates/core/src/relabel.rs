//! Training streams as each method observes them.
//!
//! A transform turns the ground-truth click stream into time-stamped, labeled
//! samples. Under elapsed-time sampling every click is held for an elapsed
//! time `e` drawn from an [`ElapsedPolicy`], then emitted with the label known
//! at that moment; conversions that arrive after `e` re-enter the stream as a
//! positive duplicate at conversion time. FNW is the `e = 0` case, FSIW keeps
//! the wait but drops duplicates, and the oracle labels with the truth at click
//! time.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::index::sample as sample_indices;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::bucket::check_sorted;
use crate::datagen::records::{features_fields, parse_features, parse_field};
use crate::datagen::{ClickEvent, Features, Timed};
use crate::error::{Error, Result};

type ElapsedSampler = dyn Fn(&Features, &mut dyn RngCore) -> f64 + Send + Sync;

/// Distribution `p(e | x)` of the waiting time before a click is labeled.
#[derive(Clone)]
pub enum ElapsedPolicy {
    /// Always wait exactly `c` seconds.
    Dirac(f64),
    /// Per-event sampler.
    PerX(Arc<ElapsedSampler>),
}

impl fmt::Debug for ElapsedPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ElapsedPolicy::Dirac(c) => write!(f, "Dirac({c})"),
            ElapsedPolicy::PerX(_) => f.write_str("PerX(..)"),
        }
    }
}

impl ElapsedPolicy {
    pub fn per_x<F>(sampler: F) -> Self
    where
        F: Fn(&Features, &mut dyn RngCore) -> f64 + Send + Sync + 'static,
    {
        ElapsedPolicy::PerX(Arc::new(sampler))
    }

    /// A constant wait per discrete cell (cell id = first categorical feature).
    pub fn per_cell(waits: Vec<f64>) -> Self {
        ElapsedPolicy::per_x(move |x, _| waits[x.categorical.first().copied().unwrap_or(0) as usize % waits.len()])
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ElapsedPolicy::Dirac(c) if !(c.is_finite() && *c >= 0.0) => {
                Err(Error::config("elapsed", format!("dirac constant must be finite and >= 0, got {c}")))
            }
            _ => Ok(()),
        }
    }

    pub fn dirac_constant(&self) -> Option<f64> {
        match self {
            ElapsedPolicy::Dirac(c) => Some(*c),
            ElapsedPolicy::PerX(_) => None,
        }
    }
}

/// Draw the elapsed time for one click.
pub fn draw_elapsed(event: &ClickEvent, policy: &ElapsedPolicy, rng: &mut dyn RngCore) -> Result<f64> {
    match policy {
        ElapsedPolicy::Dirac(c) => Ok(*c),
        ElapsedPolicy::PerX(sampler) => {
            let e = sampler(&event.features, rng);
            if e.is_finite() && e >= 0.0 {
                Ok(e)
            } else {
                Err(Error::config("elapsed", format!("per-x policy produced {e} for event {}", event.id)))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleKind {
    ObservedPositive,
    FakeNegative,
    RealNegative,
    DelayedPositiveDuplicate,
}

impl SampleKind {
    pub fn label(self) -> u8 {
        match self {
            SampleKind::ObservedPositive | SampleKind::DelayedPositiveDuplicate => 1,
            SampleKind::FakeNegative | SampleKind::RealNegative => 0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SampleKind::ObservedPositive => "observed_positive",
            SampleKind::FakeNegative => "fake_negative",
            SampleKind::RealNegative => "real_negative",
            SampleKind::DelayedPositiveDuplicate => "delayed_positive",
        }
    }
}

impl FromStr for SampleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "observed_positive" => SampleKind::ObservedPositive,
            "fake_negative" => SampleKind::FakeNegative,
            "real_negative" => SampleKind::RealNegative,
            "delayed_positive" => SampleKind::DelayedPositiveDuplicate,
            other => return Err(Error::Input(format!("unknown sample kind `{other}`"))),
        })
    }
}

/// One relabeled instance of a training stream.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub source_id: u64,
    /// Click time of the source event.
    pub click_ts: f64,
    /// Time at which the sample enters the training stream.
    pub emit_ts: f64,
    pub features: Features,
    pub observed_label: u8,
    pub kind: SampleKind,
    /// Elapsed time drawn for the source event.
    pub elapsed: f64,
    /// Click-to-conversion delay, when the sample carries an observed conversion.
    pub observed_delay: Option<f64>,
}

impl Timed for TrainingSample {
    fn time(&self) -> f64 {
        self.emit_ts
    }
}

fn sample(event: &ClickEvent, emit_ts: f64, kind: SampleKind, elapsed: f64, delay: Option<f64>) -> TrainingSample {
    TrainingSample {
        source_id: event.id,
        click_ts: event.click_ts,
        emit_ts,
        features: event.features.clone(),
        observed_label: kind.label(),
        kind,
        elapsed,
        observed_delay: delay,
    }
}

fn sort_by_emit(mut samples: Vec<TrainingSample>) -> Vec<TrainingSample> {
    samples.sort_by(|a, b| a.emit_ts.total_cmp(&b.emit_ts));
    samples
}

fn transform_waiting(
    stream: &[ClickEvent],
    policy: &ElapsedPolicy,
    rng: &mut dyn RngCore,
    duplicates: bool,
) -> Result<Vec<TrainingSample>> {
    policy.validate()?;
    check_sorted(stream)?;
    let mut out = Vec::with_capacity(stream.len() + stream.len() / 4);
    for event in stream {
        let e = draw_elapsed(event, policy, rng)?;
        let observed_at = event.click_ts + e;
        match event.delay() {
            // ties count as observed
            Some(h) if h <= e => out.push(sample(event, observed_at, SampleKind::ObservedPositive, e, Some(h))),
            Some(h) => {
                out.push(sample(event, observed_at, SampleKind::FakeNegative, e, None));
                if duplicates {
                    let conv = event.click_ts + h;
                    out.push(sample(event, conv, SampleKind::DelayedPositiveDuplicate, e, Some(h)));
                }
            }
            None => out.push(sample(event, observed_at, SampleKind::RealNegative, e, None)),
        }
    }
    Ok(sort_by_emit(out))
}

/// Elapsed-time sampling with fake negatives and delayed-positive duplicates.
pub fn transform_es(stream: &[ClickEvent], policy: &ElapsedPolicy, rng: &mut dyn RngCore) -> Result<Vec<TrainingSample>> {
    transform_waiting(stream, policy, rng, true)
}

/// Every click enters immediately as a negative; conversions re-enter as positives.
pub fn transform_fnw(stream: &[ClickEvent], rng: &mut dyn RngCore) -> Result<Vec<TrainingSample>> {
    transform_waiting(stream, &ElapsedPolicy::Dirac(0.0), rng, true)
}

/// Wait `e`, label once, never correct.
pub fn transform_fsiw(stream: &[ClickEvent], policy: &ElapsedPolicy, rng: &mut dyn RngCore) -> Result<Vec<TrainingSample>> {
    transform_waiting(stream, policy, rng, false)
}

/// True labels at click time.
pub fn transform_oracle(stream: &[ClickEvent]) -> Result<Vec<TrainingSample>> {
    check_sorted(stream)?;
    Ok(stream
        .iter()
        .map(|e| {
            let kind = if e.converted() {
                SampleKind::ObservedPositive
            } else {
                SampleKind::RealNegative
            };
            sample(e, e.click_ts, kind, 0.0, e.delay())
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisturbConfig {
    /// Fraction of positives to swap, in `[0, 1]`.
    pub strength: f64,
    pub seed: u64,
}

/// Swap `⌊d·n_pos⌋` random positives with as many distinct random negatives.
///
/// Features stay in place; conversion presence, click time and conversion time
/// move between the two events of a pair. The result is re-sorted by click time.
pub fn disturb(stream: &[ClickEvent], config: &DisturbConfig) -> Result<Vec<ClickEvent>> {
    if !(0.0..=1.0).contains(&config.strength) {
        return Err(Error::config("disturbance", format!("strength must lie in [0, 1], got {}", config.strength)));
    }
    let positives: Vec<usize> = (0..stream.len()).filter(|&i| stream[i].converted()).collect();
    let negatives: Vec<usize> = (0..stream.len()).filter(|&i| !stream[i].converted()).collect();
    let n_swaps = (config.strength * positives.len() as f64).floor() as usize;
    if n_swaps > negatives.len() {
        return Err(Error::config(
            "disturbance",
            format!("{n_swaps} swaps requested but only {} negatives available", negatives.len()),
        ));
    }
    let mut out = stream.to_vec();
    if n_swaps > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let picked_pos = sample_indices(&mut rng, positives.len(), n_swaps);
        let picked_neg = sample_indices(&mut rng, negatives.len(), n_swaps);
        for (p, n) in picked_pos.iter().zip(picked_neg.iter()) {
            let (p, n) = (positives[p], negatives[n]);
            let (click_p, conv_p) = (out[p].click_ts, out[p].conversion_ts);
            out[p].click_ts = out[n].click_ts;
            out[p].conversion_ts = out[n].conversion_ts;
            out[n].click_ts = click_p;
            out[n].conversion_ts = conv_p;
        }
    }
    out.sort_by(|a, b| a.click_ts.total_cmp(&b.click_ts));
    Ok(out)
}

/// Write samples as tab-separated lines:
/// `source_id click_ts emit_ts label kind elapsed observed_delay|"" cat,... cont,...`.
pub fn write_samples(mut out: impl Write, samples: &[TrainingSample]) -> Result<()> {
    for s in samples {
        let delay = s.observed_delay.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            s.source_id,
            s.click_ts,
            s.emit_ts,
            s.observed_label,
            s.kind.as_str(),
            s.elapsed,
            delay,
            features_fields(&s.features)
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_samples(reader: impl BufRead) -> Result<Vec<TrainingSample>> {
    let mut samples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let n = i + 1;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 9 {
            return Err(Error::Parse {
                line: n,
                reason: format!("expected 9 columns, found {}", f.len()),
            });
        }
        let kind: SampleKind = f[4].parse().map_err(|_| Error::Parse {
            line: n,
            reason: format!("unknown kind `{}`", f[4]),
        })?;
        let observed_label: u8 = parse_field(f[3], "label", n)?;
        if observed_label != kind.label() {
            return Err(Error::Parse {
                line: n,
                reason: format!("label {observed_label} contradicts kind {}", kind.as_str()),
            });
        }
        samples.push(TrainingSample {
            source_id: parse_field(f[0], "source_id", n)?,
            click_ts: parse_field(f[1], "click_ts", n)?,
            emit_ts: parse_field(f[2], "emit_ts", n)?,
            observed_label,
            kind,
            elapsed: parse_field(f[5], "elapsed", n)?,
            observed_delay: match f[6] {
                "" => None,
                s => Some(parse_field(s, "observed_delay", n)?),
            },
            features: parse_features(f[7], f[8], n)?,
        });
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{synth_stream, FeatureSpace, GenConfig, SyntheticTruth};
    use rand::Rng;

    fn ev(id: u64, click: f64, conv: Option<f64>) -> ClickEvent {
        ClickEvent {
            id,
            click_ts: click,
            conversion_ts: conv,
            features: Features::cell(0),
        }
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(1)
    }

    fn synthetic(n: usize, cvrs: Vec<f64>, rates: Vec<f64>, seed: u64) -> Vec<ClickEvent> {
        let k = cvrs.len();
        let config = GenConfig {
            n_events: n,
            feature_space: FeatureSpace::Discrete(k),
            seed,
            ..GenConfig::default()
        };
        synth_stream(&config, &SyntheticTruth::per_cell(cvrs, rates)).unwrap()
    }

    #[test]
    fn dirac_draws_constant() {
        let e = ev(0, 5.0, None);
        assert_eq!(draw_elapsed(&e, &ElapsedPolicy::Dirac(900.0), &mut rng()).unwrap(), 900.0);
        assert_eq!(draw_elapsed(&e, &ElapsedPolicy::Dirac(0.0), &mut rng()).unwrap(), 0.0);
        let per_cell = ElapsedPolicy::per_cell(vec![10.0, 20.0]);
        let mut e1 = ev(1, 0.0, None);
        e1.features = Features::cell(1);
        assert_eq!(draw_elapsed(&e, &per_cell, &mut rng()).unwrap(), 10.0);
        assert_eq!(draw_elapsed(&e1, &per_cell, &mut rng()).unwrap(), 20.0);
        let bad = ElapsedPolicy::per_x(|_, _| -1.0);
        assert!(draw_elapsed(&e, &bad, &mut rng()).is_err());
    }

    #[test]
    fn per_x_policy_is_rng_deterministic() {
        let policy = ElapsedPolicy::per_x(|_, rng| rng.random::<f64>() * 100.0);
        let e = ev(0, 0.0, None);
        let a = draw_elapsed(&e, &policy, &mut rng()).unwrap();
        let b = draw_elapsed(&e, &policy, &mut rng()).unwrap();
        assert_eq!(a, b);
        assert!((0.0..100.0).contains(&a));
    }

    #[test]
    fn es_early_conversion_is_observed_positive() {
        let out = transform_es(&[ev(0, 0.0, Some(50.0))], &ElapsedPolicy::Dirac(100.0), &mut rng()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].kind, SampleKind::ObservedPositive);
        assert_eq!(out[0].emit_ts, 100.0);
        assert_eq!(out[0].observed_label, 1);
    }

    #[test]
    fn es_late_conversion_is_fake_negative_plus_duplicate() {
        let out = transform_es(&[ev(0, 0.0, Some(500.0))], &ElapsedPolicy::Dirac(100.0), &mut rng()).unwrap();
        let kinds: Vec<_> = out.iter().map(|s| (s.kind, s.emit_ts, s.observed_label)).collect();
        assert_eq!(
            kinds,
            vec![
                (SampleKind::FakeNegative, 100.0, 0),
                (SampleKind::DelayedPositiveDuplicate, 500.0, 1)
            ]
        );
        assert_eq!(out[1].observed_delay, Some(500.0));
        assert_eq!(out[1].elapsed, 100.0);
    }

    #[test]
    fn fnw_counts_and_timing() {
        let stream = [ev(0, 0.0, None), ev(1, 5.0, Some(15.0)), ev(2, 7.0, None)];
        let out = transform_fnw(&stream, &mut rng()).unwrap();
        assert_eq!(out.len(), 4);
        assert_eq!(out.iter().filter(|s| s.observed_label == 0).count(), 3);
        let dup = out.iter().find(|s| s.kind == SampleKind::DelayedPositiveDuplicate).unwrap();
        assert_eq!(dup.emit_ts, 15.0);
        let neg = out.iter().find(|s| s.source_id == 1 && s.observed_label == 0).unwrap();
        assert_eq!(neg.emit_ts, 5.0);
    }

    #[test]
    fn fnw_equals_es_at_zero() {
        let stream = synthetic(3_000, vec![0.2, 0.5], vec![1e-3, 1e-4], 3);
        let a = transform_fnw(&stream, &mut rng()).unwrap();
        let b = transform_es(&stream, &ElapsedPolicy::Dirac(0.0), &mut rng()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn instant_conversion_at_zero_wait_is_observed() {
        let out = transform_fnw(&[ev(0, 3.0, Some(3.0))], &mut rng()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].kind, SampleKind::ObservedPositive);
    }

    #[test]
    fn fsiw_never_duplicates() {
        let out = transform_fsiw(&[ev(0, 0.0, Some(500.0))], &ElapsedPolicy::Dirac(100.0), &mut rng()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].kind, SampleKind::FakeNegative);

        let stream = synthetic(2_000, vec![0.3], vec![1e-3], 4);
        let out = transform_fsiw(&stream, &ElapsedPolicy::Dirac(1e6), &mut rng()).unwrap();
        assert_eq!(out.len(), stream.len());
        let oracle = transform_oracle(&stream).unwrap();
        let mut labels: Vec<_> = out.iter().map(|s| (s.source_id, s.observed_label)).collect();
        labels.sort();
        let expected: Vec<_> = oracle.iter().map(|s| (s.source_id, s.observed_label)).collect();
        assert_eq!(labels, expected);
    }

    #[test]
    fn oracle_labels_at_click_time() {
        let out = transform_oracle(&[ev(0, 1.0, Some(1e6)), ev(1, 2.0, None)]).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!((out[0].emit_ts, out[0].observed_label), (1.0, 1));
        assert_eq!((out[1].emit_ts, out[1].observed_label), (2.0, 0));
    }

    #[test]
    fn long_wait_reproduces_oracle_labels() {
        let stream = synthetic(5_000, vec![0.2, 0.6], vec![1e-3, 1e-2], 8);
        let max_h = stream.iter().filter_map(ClickEvent::delay).fold(0.0, f64::max);
        let es = transform_es(&stream, &ElapsedPolicy::Dirac(max_h), &mut rng()).unwrap();
        assert_eq!(es.len(), stream.len());
        for s in &es {
            assert_eq!(s.emit_ts, s.click_ts + max_h);
            assert_eq!(s.observed_label, stream[s.source_id as usize].label());
        }
    }

    #[test]
    fn es_invariants_on_synthetic_stream() {
        let stream = synthetic(20_000, vec![0.1, 0.4, 0.7], vec![1.0 / 600.0, 1.0 / 3600.0, 1.0 / 7200.0], 5);
        let out = transform_es(&stream, &ElapsedPolicy::Dirac(1800.0), &mut rng()).unwrap();
        let fakes: Vec<u64> = out.iter().filter(|s| s.kind == SampleKind::FakeNegative).map(|s| s.source_id).collect();
        let mut dups: Vec<u64> = out
            .iter()
            .filter(|s| s.kind == SampleKind::DelayedPositiveDuplicate)
            .map(|s| s.source_id)
            .collect();
        assert_eq!(out.len(), stream.len() + fakes.len());
        let mut fakes_sorted = fakes.clone();
        fakes_sorted.sort();
        dups.sort();
        assert_eq!(fakes_sorted, dups);
        assert!(out.windows(2).all(|w| w[0].emit_ts <= w[1].emit_ts));
        for s in &out {
            let src = &stream[s.source_id as usize];
            assert!(s.emit_ts >= src.click_ts);
            assert_eq!(s.observed_label, s.kind.label());
            match s.kind {
                SampleKind::FakeNegative => assert!(src.delay().unwrap() > s.elapsed),
                SampleKind::RealNegative => assert!(!src.converted()),
                _ => {}
            }
        }
    }

    #[test]
    fn disturb_preserves_class_counts() {
        let stream: Vec<_> = (0..300)
            .map(|i| ev(i, i as f64, if i % 3 == 0 { Some(i as f64 + 7.0) } else { None }))
            .collect();
        let same = disturb(&stream, &DisturbConfig { strength: 0.0, seed: 1 }).unwrap();
        assert_eq!(same, stream);

        for (d, expected_swaps) in [(0.5, 50usize), (1.0, 100)] {
            let out = disturb(&stream, &DisturbConfig { strength: d, seed: 2 }).unwrap();
            assert_eq!(out.iter().filter(|e| e.converted()).count(), 100);
            assert!(out.windows(2).all(|w| w[0].click_ts <= w[1].click_ts));
            // each id keeps its features; a swapped positive now has no conversion
            let lost = stream
                .iter()
                .filter(|e| e.converted())
                .filter(|e| !out.iter().find(|o| o.id == e.id).unwrap().converted())
                .count();
            assert_eq!(lost, expected_swaps);
        }
        assert!(disturb(&stream, &DisturbConfig { strength: 1.5, seed: 0 }).is_err());
        let all_pos: Vec<_> = (0..4).map(|i| ev(i, i as f64, Some(10.0))).collect();
        assert!(disturb(&all_pos, &DisturbConfig { strength: 0.5, seed: 0 }).is_err());
    }

    #[test]
    fn unsorted_stream_rejected() {
        let stream = [ev(0, 10.0, None), ev(1, 5.0, None)];
        assert!(matches!(
            transform_es(&stream, &ElapsedPolicy::Dirac(1.0), &mut rng()),
            Err(Error::Ordering { .. })
        ));
        assert!(transform_oracle(&stream).is_err());
    }

    #[test]
    fn sample_records_round_trip() {
        let stream = synthetic(500, vec![0.4, 0.2], vec![1e-3, 1e-2], 6);
        let out = transform_es(&stream, &ElapsedPolicy::Dirac(300.0), &mut rng()).unwrap();
        let mut buf = Vec::new();
        write_samples(&mut buf, &out).unwrap();
        assert_eq!(read_samples(buf.as_slice()).unwrap(), out);
    }
}
