//! Criteo conversion-log ingestion.
//!
//! Each line is tab separated: click timestamp, conversion timestamp (empty
//! when the click never converted), 8 integer features, 9 hashed categorical
//! features. Missing features are allowed. Integer features are mapped through
//! `sign(v)·ln(1+|v|)`, missing ones to `0.0`; categorical tokens are hashed
//! into `CATEGORICAL_BUCKETS` ids per field, with id `0` reserved for missing.

use std::io::BufRead;

use crate::datagen::{ClickEvent, Features};
use crate::error::{Error, Result};
use crate::learner::FeatureSchema;

pub const N_CONTINUOUS: usize = 8;
pub const N_CATEGORICAL: usize = 9;
pub const N_COLUMNS: usize = 2 + N_CONTINUOUS + N_CATEGORICAL;
pub const CATEGORICAL_BUCKETS: u32 = 1 << 18;

/// Feature schema of parsed Criteo events.
pub fn schema() -> FeatureSchema {
    FeatureSchema {
        categorical_vocab: vec![CATEGORICAL_BUCKETS as usize; N_CATEGORICAL],
        n_continuous: N_CONTINUOUS,
    }
}

// FNV-1a, stable across platforms and releases.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

pub fn hash_token(token: &str) -> u32 {
    if token.is_empty() {
        0
    } else {
        (fnv1a(token.as_bytes()) % u64::from(CATEGORICAL_BUCKETS - 1)) as u32 + 1
    }
}

fn scale_count(v: f64) -> f64 {
    v.signum() * v.abs().ln_1p()
}

/// Parse one record; `line_no` (1-based) becomes the event id and tags errors.
pub fn parse_criteo_line(line: &str, line_no: usize) -> Result<ClickEvent> {
    let line = line.trim_end_matches(['\r', '\n']);
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != N_COLUMNS {
        return Err(Error::Parse {
            line: line_no,
            reason: format!("expected {N_COLUMNS} tab-separated columns, found {}", fields.len()),
        });
    }
    let timestamp = |s: &str, what: &str| -> Result<f64> {
        s.trim().parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Parse {
            line: line_no,
            reason: format!("{what} timestamp `{s}` is not numeric"),
        })
    };
    let click_ts = timestamp(fields[0], "click")?;
    let conversion_ts = match fields[1].trim() {
        "" => None,
        s => Some(timestamp(s, "conversion")?),
    };
    let continuous = fields[2..2 + N_CONTINUOUS]
        .iter()
        .map(|s| match s.trim() {
            "" => Ok(0.0),
            s => s.parse::<f64>().map(scale_count).map_err(|_| Error::Parse {
                line: line_no,
                reason: format!("integer feature `{s}` is not numeric"),
            }),
        })
        .collect::<Result<Vec<_>>>()?;
    let categorical = fields[2 + N_CONTINUOUS..].iter().map(|s| hash_token(s.trim())).collect();
    Ok(ClickEvent {
        id: line_no as u64,
        click_ts,
        conversion_ts,
        features: Features {
            categorical,
            continuous,
        },
    })
}

/// Read a whole log, sort it by click time and shift timestamps so the first click is `t = 0`.
pub fn load_criteo(reader: impl BufRead) -> Result<Vec<ClickEvent>> {
    let mut events = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        events.push(parse_criteo_line(&line, i + 1)?);
    }
    events.sort_by(|a, b| a.click_ts.total_cmp(&b.click_ts));
    if let Some(origin) = events.first().map(|e| e.click_ts) {
        for e in &mut events {
            e.click_ts -= origin;
            if let Some(v) = e.conversion_ts.as_mut() {
                *v -= origin;
            }
        }
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FEATURES: &str = "5\t\t0\t12\t3\t\t1\t7\ta1b2\tc3d4\t\te5\tf6\t77\t88\t99\tx";

    #[test]
    fn empty_conversion_field() {
        let e = parse_criteo_line(&format!("100\t\t{FEATURES}"), 1).unwrap();
        assert_eq!(e.click_ts, 100.0);
        assert_eq!(e.conversion_ts, None);
        assert_eq!(e.features.categorical.len(), N_CATEGORICAL);
        assert_eq!(e.features.continuous.len(), N_CONTINUOUS);
        // missing fields map to the sentinels
        assert_eq!(e.features.continuous[1], 0.0);
        assert_eq!(e.features.categorical[2], 0);
        assert!(e.features.categorical.iter().all(|&c| c < CATEGORICAL_BUCKETS));
    }

    #[test]
    fn conversion_delay() {
        let e = parse_criteo_line(&format!("100\t4000\t{FEATURES}\r\n"), 1).unwrap();
        assert_eq!(e.delay(), Some(3900.0));
        assert!((e.features.continuous[0] - 6f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn errors_carry_line_number() {
        let err = parse_criteo_line(&format!("abc\t\t{FEATURES}"), 17).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 17, .. }));
        let err = parse_criteo_line("1\t2\t3", 4).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 4, .. }));
        let err = parse_criteo_line(&format!("1\tx\t{FEATURES}"), 9).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 9, .. }));
    }

    #[test]
    fn hashing_is_stable() {
        assert_eq!(hash_token(""), 0);
        assert_eq!(hash_token("a1b2"), hash_token("a1b2"));
        assert_ne!(hash_token("a1b2"), hash_token("a1b3"));
        // pinned value guards against accidental hash changes
        assert_eq!(hash_token("68fd1e64"), (fnv1a(b"68fd1e64") % 262_143) as u32 + 1);
    }

    #[test]
    fn load_normalizes_epoch_and_sorts() {
        let text = format!("500\t\t{FEATURES}\n200\t900\t{FEATURES}\n\n300\t\t{FEATURES}\n");
        let events = load_criteo(text.as_bytes()).unwrap();
        let clicks: Vec<f64> = events.iter().map(|e| e.click_ts).collect();
        assert_eq!(clicks, vec![0.0, 100.0, 300.0]);
        assert_eq!(events[0].conversion_ts, Some(700.0));
        assert_eq!(events[0].id, 2);
    }

    /// Full public log; set `CRITEO_PATH` and run with `--ignored`.
    #[test]
    #[ignore]
    fn full_public_log_counts() {
        let Ok(path) = std::env::var("CRITEO_PATH") else {
            return;
        };
        let file = std::io::BufReader::new(std::fs::File::open(path).unwrap());
        let events = load_criteo(file).unwrap();
        assert_eq!(events.len(), 15_898_883);
        assert_eq!(events.iter().filter(|e| e.converted()).count(), 3_619_801);
    }
}
