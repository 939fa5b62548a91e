//! Time bucketing and the pre-training / streaming split.

use crate::datagen::ClickEvent;
use crate::error::{Error, Result};

/// Items with a time key used for ordering and bucketing.
pub trait Timed {
    fn time(&self) -> f64;
}

impl Timed for ClickEvent {
    fn time(&self) -> f64 {
        self.click_ts
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bucket<T> {
    pub index: usize,
    pub items: Vec<T>,
}

pub(crate) fn check_sorted<T: Timed>(stream: &[T]) -> Result<()> {
    for (i, w) in stream.windows(2).enumerate() {
        let (prev, next) = (w[0].time(), w[1].time());
        if next < prev || next.is_nan() {
            return Err(Error::Ordering {
                index: i + 1,
                time: next,
                previous: prev,
            });
        }
    }
    Ok(())
}

/// `floor(t / width)`, corrected so that `index·width <= t < (index+1)·width` holds exactly.
fn bucket_index(t: f64, width: f64) -> usize {
    let mut index = (t / width).floor().max(0.0) as usize;
    while index > 0 && t < index as f64 * width {
        index -= 1;
    }
    while t >= (index + 1) as f64 * width {
        index += 1;
    }
    index
}

fn check_width(width: f64) -> Result<()> {
    if !(width.is_finite() && width > 0.0) {
        return Err(Error::config("width", format!("bucket width must be > 0, got {width}")));
    }
    Ok(())
}

/// Split a sorted stream into buckets `[i·width, (i+1)·width)`, `i = 0..=last`.
///
/// Empty buckets between occupied ones are kept so that bucket `i` always
/// covers the same interval.
pub fn bucketize<T: Timed>(stream: Vec<T>, width: f64) -> Result<Vec<Bucket<T>>> {
    check_width(width)?;
    check_sorted(&stream)?;
    if let Some(first) = stream.first() {
        if first.time() < 0.0 {
            return Err(Error::Input(format!("negative time {} in stream", first.time())));
        }
    }
    let mut buckets: Vec<Bucket<T>> = Vec::new();
    for item in stream {
        let index = bucket_index(item.time(), width);
        while buckets.len() <= index {
            buckets.push(Bucket {
                index: buckets.len(),
                items: Vec::new(),
            });
        }
        buckets[index].items.push(item);
    }
    Ok(buckets)
}

/// Buckets `[start + i·width, start + (i+1)·width)` for `i in 0..n_buckets`;
/// items outside the window are dropped.
pub fn bucketize_window<T: Timed>(stream: Vec<T>, width: f64, start: f64, n_buckets: usize) -> Result<Vec<Bucket<T>>> {
    check_width(width)?;
    check_sorted(&stream)?;
    let mut buckets: Vec<Bucket<T>> = (0..n_buckets).map(|index| Bucket { index, items: Vec::new() }).collect();
    for item in stream {
        let t = item.time();
        if t >= start {
            let index = bucket_index(t - start, width);
            if index < n_buckets {
                buckets[index].items.push(item);
            }
        }
    }
    Ok(buckets)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamSplit {
    pub pretrain: Vec<ClickEvent>,
    pub streaming: Vec<ClickEvent>,
    /// Median click time.
    pub split_ts: f64,
}

/// Split a sorted stream in two equal halves at the median click time.
///
/// With an odd count the median event opens the streaming half.
pub fn split_pretrain_stream(mut stream: Vec<ClickEvent>) -> StreamSplit {
    let n = stream.len();
    let mid = n / 2;
    let split_ts = match n {
        0 => 0.0,
        _ if n % 2 == 0 => 0.5 * (stream[mid - 1].click_ts + stream[mid].click_ts),
        _ => stream[mid].click_ts,
    };
    let streaming = stream.split_off(mid);
    StreamSplit {
        pretrain: stream,
        streaming,
        split_ts,
    }
}

/// Split a sorted stream at an explicit time: clicks before `ts` go to pre-training.
pub fn split_at(stream: Vec<ClickEvent>, ts: f64) -> StreamSplit {
    let (pretrain, streaming): (Vec<_>, Vec<_>) = stream.into_iter().partition(|e| e.click_ts < ts);
    StreamSplit {
        pretrain,
        streaming,
        split_ts: ts,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{synth_stream, FeatureSpace, Features, GenConfig, SyntheticTruth};
    use proptest::prelude::*;

    fn at(id: u64, t: f64) -> ClickEvent {
        ClickEvent {
            id,
            click_ts: t,
            conversion_ts: None,
            features: Features::cell(0),
        }
    }

    #[test]
    fn three_events_three_buckets() {
        let b = bucketize(vec![at(1, 10.0), at(2, 3600.0), at(3, 7300.0)], 3600.0).unwrap();
        assert_eq!(b.len(), 3);
        assert_eq!(b.iter().map(|b| b.items[0].id).collect::<Vec<_>>(), vec![1, 2, 3]);
    }

    #[test]
    fn empty_stream_empty_buckets() {
        assert!(bucketize(Vec::<ClickEvent>::new(), 3600.0).unwrap().is_empty());
    }

    #[test]
    fn unsorted_input_is_rejected() {
        let err = bucketize(vec![at(1, 50.0), at(2, 10.0)], 3600.0).unwrap_err();
        assert!(matches!(err, Error::Ordering { index: 1, .. }));
        assert!(bucketize(vec![at(1, 1.0)], 0.0).is_err());
    }

    #[test]
    fn synthetic_48h_stream() {
        let config = GenConfig {
            n_events: 20_000,
            horizon: 48.0 * 3600.0,
            feature_space: FeatureSpace::Discrete(2),
            ..GenConfig::default()
        };
        let truth = SyntheticTruth::per_cell(vec![0.2, 0.3], vec![1e-3, 1e-3]);
        let events = synth_stream(&config, &truth).unwrap();
        let buckets = bucketize(events.clone(), 3600.0).unwrap();
        assert_eq!(buckets.len(), 48);
        assert_eq!(buckets.iter().map(|b| b.items.len()).sum::<usize>(), 20_000);

        let split = split_pretrain_stream(events);
        assert!((split.split_ts - 24.0 * 3600.0).abs() < 0.02 * 24.0 * 3600.0);
        assert_eq!(split.pretrain.len(), 10_000);
        assert_eq!(split.streaming.len(), 10_000);
    }

    #[test]
    fn sixty_day_stream_splits_in_half() {
        let day = 86_400.0;
        let events: Vec<_> = (0..600).map(|i| at(i, (i as f64 + 0.5) * 0.1 * day)).collect();
        let split = split_pretrain_stream(events);
        assert!((split.split_ts - 30.0 * day).abs() < 1e-6);
        assert!(split.pretrain.iter().all(|e| e.click_ts < 30.0 * day));
        assert!(split.streaming.iter().all(|e| e.click_ts >= 30.0 * day));
    }

    #[test]
    fn two_events_split_one_each() {
        let split = split_pretrain_stream(vec![at(0, 1.0), at(1, 2.0)]);
        assert_eq!((split.pretrain.len(), split.streaming.len()), (1, 1));
        assert_eq!(split.split_ts, 1.5);
    }

    #[test]
    fn window_drops_outside_items() {
        let b = bucketize_window(vec![at(0, 5.0), at(1, 12.0), at(2, 19.0), at(3, 31.0)], 10.0, 10.0, 2).unwrap();
        assert_eq!(b[0].items.iter().map(|e| e.id).collect::<Vec<_>>(), vec![1, 2]);
        assert!(b[1].items.is_empty());
    }

    proptest! {
        #[test]
        fn concatenated_buckets_reproduce_input(mut times in prop::collection::vec(0.0f64..1e5, 0..200), width in 1.0f64..5000.0) {
            times.sort_by(f64::total_cmp);
            let events: Vec<_> = times.iter().enumerate().map(|(i, &t)| at(i as u64, t)).collect();
            let buckets = bucketize(events.clone(), width).unwrap();
            for b in &buckets {
                for e in &b.items {
                    prop_assert!(e.click_ts >= b.index as f64 * width && e.click_ts < (b.index + 1) as f64 * width);
                }
            }
            let flat: Vec<_> = buckets.into_iter().flat_map(|b| b.items).collect();
            prop_assert_eq!(flat, events);
        }
    }
}
