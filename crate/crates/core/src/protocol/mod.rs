//! Streaming train/evaluate protocol and its report.
//!
//! Buckets are processed in time order. For each bucket the frozen model is
//! first evaluated on the true labels of the clicks in that bucket, then
//! trained on the samples the method observed during it, so a bucket's
//! evaluation never sees parameters touched by its own training data.

pub mod metrics;
pub mod stats;

use std::io::Write;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{bucketize_window, Bucket, ClickEvent, SyntheticTruth};
use crate::error::{Error, Result};
use crate::methods::Method;
use crate::relabel::TrainingSample;

pub use metrics::{auc, nll, pr_auc, relative_metric, Orientation};
pub use stats::{mean_sd, paired_sign_test, sign_test};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketRecord {
    pub bucket: usize,
    pub n_eval: usize,
    pub n_pos: usize,
    /// `None` where the metric is undefined for this bucket (e.g. a single class).
    pub auc: Option<f64>,
    pub pr_auc: Option<f64>,
    pub nll: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub auc: f64,
    pub pr_auc: f64,
    pub nll: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeMetrics {
    pub r_auc: f64,
    pub r_pr_auc: f64,
    pub r_nll: f64,
}

impl Metrics {
    /// Metrics of one prediction set, leaving undefined ones as NaN.
    pub fn compute(scores: &[f64], labels: &[u8]) -> Result<Self> {
        let defined = |r: Result<f64>| match r {
            Ok(v) => Ok(v),
            Err(Error::UndefinedMetric(_)) => Ok(f64::NAN),
            Err(e) => Err(e),
        };
        Ok(Metrics {
            auc: defined(auc(scores, labels))?,
            pr_auc: defined(pr_auc(scores, labels))?,
            nll: defined(nll(scores, labels))?,
        })
    }

    pub fn relative(&self, vanilla: &Metrics, oracle: &Metrics) -> Result<RelativeMetrics> {
        use Orientation::*;
        Ok(RelativeMetrics {
            r_auc: relative_metric(self.auc, vanilla.auc, oracle.auc, HigherIsBetter)?,
            r_pr_auc: relative_metric(self.pr_auc, vanilla.pr_auc, oracle.pr_auc, HigherIsBetter)?,
            r_nll: relative_metric(self.nll, vanilla.nll, oracle.nll, LowerIsBetter)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamReport {
    pub method: String,
    pub records: Vec<BucketRecord>,
    /// Metrics over the concatenation of every bucket's evaluation predictions.
    pub pooled: Metrics,
    pub n_eval: usize,
    /// Evaluation predictions and labels in bucket order.
    #[serde(skip)]
    pub scores: Vec<f64>,
    #[serde(skip)]
    pub labels: Vec<u8>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl StreamReport {
    pub fn relative(&self, vanilla: &StreamReport, oracle: &StreamReport) -> Result<RelativeMetrics> {
        self.pooled.relative(&vanilla.pooled, &oracle.pooled)
    }

    /// One row per bucket and a final `pooled` row.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(["method", "bucket", "n_eval", "n_pos", "auc", "pr_auc", "nll"]).map_err(io)?;
        for r in &self.records {
            w.write_record([
                self.method.clone(),
                r.bucket.to_string(),
                r.n_eval.to_string(),
                r.n_pos.to_string(),
                opt(r.auc),
                opt(r.pr_auc),
                opt(r.nll),
            ])
            .map_err(io)?;
        }
        let n_pos = self.labels.iter().filter(|&&y| y == 1).count();
        w.write_record([
            self.method.clone(),
            "pooled".into(),
            self.n_eval.to_string(),
            n_pos.to_string(),
            self.pooled.auc.to_string(),
            self.pooled.pr_auc.to_string(),
            self.pooled.nll.to_string(),
        ])
        .map_err(io)?;
        w.flush()?;
        Ok(())
    }

    /// One JSON object per bucket, then `{"method":..,"pooled":{..},"n_eval":..}`.
    pub fn write_jsonl(&self, mut out: impl Write) -> Result<()> {
        let json = |e: serde_json::Error| Error::Io(std::io::Error::other(e));
        for r in &self.records {
            serde_json::to_writer(&mut out, r).map_err(json)?;
            out.write_all(b"\n")?;
        }
        let summary = serde_json::json!({ "method": self.method, "pooled": self.pooled, "n_eval": self.n_eval });
        serde_json::to_writer(&mut out, &summary).map_err(json)?;
        out.write_all(b"\n")?;
        out.flush()?;
        Ok(())
    }
}

fn check_aligned(train: &[Bucket<TrainingSample>], eval: &[Bucket<ClickEvent>]) -> Result<()> {
    if train.len() != eval.len() {
        return Err(Error::Protocol(format!(
            "{} training buckets but {} evaluation buckets",
            train.len(),
            eval.len()
        )));
    }
    if let Some((t, e)) = train.iter().zip(eval).find(|(t, e)| t.index != e.index) {
        return Err(Error::Protocol(format!(
            "training bucket {} paired with evaluation bucket {}",
            t.index, e.index
        )));
    }
    Ok(())
}

/// Evaluate-then-train over aligned buckets.
pub fn run_streaming_experiment(
    method: &mut Method,
    train: &[Bucket<TrainingSample>],
    eval: &[Bucket<ClickEvent>],
) -> Result<StreamReport> {
    run_with_matured(method, train, eval, &[], &mut ChaCha8Rng::seed_from_u64(0))
}

/// As [`run_streaming_experiment`], also feeding each bucket's matured clicks to
/// the method's estimator after training.
pub fn run_with_matured(
    method: &mut Method,
    train: &[Bucket<TrainingSample>],
    eval: &[Bucket<ClickEvent>],
    matured: &[Bucket<ClickEvent>],
    rng: &mut dyn RngCore,
) -> Result<StreamReport> {
    check_aligned(train, eval)?;
    if !matured.is_empty() && matured.len() != train.len() {
        return Err(Error::Protocol("matured buckets must align with training buckets".into()));
    }
    let mut records = Vec::with_capacity(eval.len());
    let (mut scores, mut labels) = (Vec::new(), Vec::new());
    for (i, (t, e)) in train.iter().zip(eval).enumerate() {
        let s = method.predict_many(e.items.iter().map(|ev| &ev.features))?;
        let y: Vec<u8> = e.items.iter().map(ClickEvent::label).collect();
        let defined = |r: Result<f64>| r.ok();
        records.push(BucketRecord {
            bucket: e.index,
            n_eval: y.len(),
            n_pos: y.iter().filter(|&&v| v == 1).count(),
            auc: defined(auc(&s, &y)),
            pr_auc: defined(pr_auc(&s, &y)),
            nll: defined(nll(&s, &y)),
        });
        scores.extend(s);
        labels.extend(y);
        method.train_bucket(&t.items)?;
        if let Some(m) = matured.get(i) {
            method.feed_matured(&m.items, rng)?;
        }
    }
    Ok(StreamReport {
        method: method.name().to_string(),
        records,
        pooled: Metrics::compute(&scores, &labels)?,
        n_eval: labels.len(),
        scores,
        labels,
    })
}

/// Streaming-window inputs for one method: its training view, bucketed by
/// emission time, and the true clicks, bucketed by click time.
pub fn stream_buckets(
    method: &Method,
    all_events: &[ClickEvent],
    streaming_events: &[ClickEvent],
    start: f64,
    width: f64,
    n_buckets: usize,
    rng: &mut dyn RngCore,
) -> Result<(Vec<Bucket<TrainingSample>>, Vec<Bucket<ClickEvent>>)> {
    let samples = method.training_stream(all_events, rng)?;
    let train = bucketize_window(samples, width, start, n_buckets)?;
    let eval = bucketize_window(streaming_events.to_vec(), width, start, n_buckets)?;
    Ok((train, eval))
}

/// Per-cell `|mean prediction − mean true CVR|` over evaluated clicks, for discrete truths.
///
/// Cells never evaluated report `NaN`.
pub fn calibration_by_cell(scores: &[f64], events: &[&ClickEvent], truth: &SyntheticTruth, cells: usize) -> Result<Vec<f64>> {
    if scores.len() != events.len() {
        return Err(Error::Input("one score per event expected".into()));
    }
    let mut sum_pred = vec![0.0; cells];
    let mut sum_true = vec![0.0; cells];
    let mut count = vec![0usize; cells];
    for (s, e) in scores.iter().zip(events) {
        let cell = *e.features.categorical.first().unwrap_or(&0) as usize;
        if cell >= cells {
            return Err(Error::Input(format!("cell {cell} outside 0..{cells}")));
        }
        sum_pred[cell] += s;
        sum_true[cell] += truth.cvr(&e.features, e.click_ts);
        count[cell] += 1;
    }
    Ok((0..cells)
        .map(|c| {
            if count[c] == 0 {
                f64::NAN
            } else {
                ((sum_pred[c] - sum_true[c]) / count[c] as f64).abs()
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn misaligned_buckets_are_rejected() {
        let train = vec![Bucket::<TrainingSample> { index: 0, items: vec![] }];
        let eval = vec![Bucket::<ClickEvent> { index: 1, items: vec![] }];
        assert!(matches!(check_aligned(&train, &eval), Err(Error::Protocol(_))));
        assert!(matches!(check_aligned(&train, &[]), Err(Error::Protocol(_))));
    }
}
