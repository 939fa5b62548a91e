//! Line-delimited event records.
//!
//! One event per line, tab separated:
//! `id  click_ts  conversion_ts|""  cat,cat,...  cont,cont,...`.
//! Floats use the shortest representation that parses back to the same bits.

use std::io::{BufRead, Write};

use crate::datagen::{ClickEvent, Features};
use crate::error::{Error, Result};

pub(crate) fn join<T: std::fmt::Display>(values: &[T]) -> String {
    values.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

pub(crate) fn parse_list<T: std::str::FromStr>(field: &str, line: usize) -> Result<Vec<T>> {
    if field.is_empty() {
        return Ok(Vec::new());
    }
    field
        .split(',')
        .map(|s| {
            s.parse::<T>().map_err(|_| Error::Parse {
                line,
                reason: format!("bad list element `{s}`"),
            })
        })
        .collect()
}

pub(crate) fn parse_field<T: std::str::FromStr>(field: &str, what: &str, line: usize) -> Result<T> {
    field.parse::<T>().map_err(|_| Error::Parse {
        line,
        reason: format!("bad {what} `{field}`"),
    })
}

pub(crate) fn features_fields(f: &Features) -> String {
    format!("{}\t{}", join(&f.categorical), join(&f.continuous))
}

pub(crate) fn parse_features(cat: &str, cont: &str, line: usize) -> Result<Features> {
    Ok(Features {
        categorical: parse_list(cat, line)?,
        continuous: parse_list(cont, line)?,
    })
}

pub fn write_events(mut out: impl Write, events: &[ClickEvent]) -> Result<()> {
    for e in events {
        let conv = e.conversion_ts.map(|v| v.to_string()).unwrap_or_default();
        writeln!(out, "{}\t{}\t{}\t{}", e.id, e.click_ts, conv, features_fields(&e.features))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_events(reader: impl BufRead) -> Result<Vec<ClickEvent>> {
    let mut events = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let n = i + 1;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(Error::Parse {
                line: n,
                reason: format!("expected 5 columns, found {}", f.len()),
            });
        }
        events.push(ClickEvent {
            id: parse_field(f[0], "id", n)?,
            click_ts: parse_field(f[1], "click_ts", n)?,
            conversion_ts: match f[2] {
                "" => None,
                s => Some(parse_field(s, "conversion_ts", n)?),
            },
            features: parse_features(f[3], f[4], n)?,
        });
    }
    Ok(events)
}
