//! Binary checkpoints.
//!
//! Layout: magic `ESDFMCK\0`, `u32` format version, `u64` header length, a JSON
//! header describing the network, `u64` parameter count, then the parameters
//! as little-endian `f64`. Parameters round-trip bit for bit.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::{FeatureSchema, NetConfig, Network, Standardizer};

const MAGIC: &[u8; 8] = b"ESDFMCK\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    kind: String,
    schema: FeatureSchema,
    config: NetConfig,
    n_outputs: usize,
    standardizer: Standardizer,
    clamp_eps: f64,
    #[serde(default)]
    extra: BTreeMap<String, f64>,
}

/// A network plus what is needed to rebuild the model around it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Model family, e.g. `"cvr"`, `"dual_head"`, `"dfm"`.
    pub kind: String,
    pub network: Network,
    pub clamp_eps: f64,
    /// Model-specific scalars, e.g. the DFM time scale.
    pub extra: BTreeMap<String, f64>,
}

impl Checkpoint {
    pub fn new(kind: &str, network: Network, clamp_eps: f64) -> Self {
        Checkpoint {
            kind: kind.to_string(),
            network,
            clamp_eps,
            extra: BTreeMap::new(),
        }
    }

    /// Fail unless the checkpoint holds a model of the given kind.
    pub fn expect_kind(self, kind: &str) -> Result<Self> {
        if self.kind == kind {
            Ok(self)
        } else {
            Err(Error::Checkpoint(format!("expected a `{kind}` checkpoint, found `{}`", self.kind)))
        }
    }

    pub fn extra(&self, key: &str) -> Result<f64> {
        self.extra
            .get(key)
            .copied()
            .ok_or_else(|| Error::Checkpoint(format!("missing `{key}` in checkpoint header")))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_checkpoint(BufWriter::new(File::create(path)?), self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_checkpoint(BufReader::new(File::open(path)?))
    }
}

pub fn write_checkpoint(mut out: impl Write, checkpoint: &Checkpoint) -> Result<()> {
    let network = &checkpoint.network;
    let header = Header {
        kind: checkpoint.kind.clone(),
        schema: network.schema().clone(),
        config: network.config().clone(),
        n_outputs: network.n_outputs(),
        standardizer: network.standardizer().clone(),
        clamp_eps: checkpoint.clamp_eps,
        extra: checkpoint.extra.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    out.write_all(MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    let params = network.params();
    out.write_all(&(params.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(params.len() * 8);
    for p in params {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

fn read_u64(input: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    input.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_checkpoint(mut input: impl Read) -> Result<Checkpoint> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let mut v = [0u8; 4];
    input.read_exact(&mut v)?;
    let version = u32::from_le_bytes(v);
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let header_len = read_u64(&mut input)? as usize;
    let mut json = vec![0u8; header_len];
    input.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut network = Network::layout(header.schema, header.config, header.n_outputs)?;
    network.set_standardizer(header.standardizer)?;
    let n = read_u64(&mut input)? as usize;
    if n != network.params().len() {
        return Err(Error::Checkpoint(format!(
            "header describes {} parameters but file stores {n}",
            network.params().len()
        )));
    }
    let mut raw = vec![0u8; n * 8];
    input.read_exact(&mut raw)?;
    for (p, chunk) in network.params_mut().iter_mut().zip(raw.chunks_exact(8)) {
        *p = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
    }
    Ok(Checkpoint {
        kind: header.kind,
        network,
        clamp_eps: header.clamp_eps,
        extra: header.extra,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net() -> Network {
        let schema = FeatureSchema {
            categorical_vocab: vec![5, 3],
            n_continuous: 2,
        };
        let mut n = Network::new(schema, NetConfig::default(), 2, 11).unwrap();
        n.set_standardizer(Standardizer {
            mean: vec![0.1, -3.0],
            std: vec![2.0, 0.7],
        })
        .unwrap();
        n
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let original = net();
        let mut ck = Checkpoint::new("dual_head", original.clone(), 1e-7);
        ck.extra.insert("time_scale".into(), 3600.0);
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &ck).unwrap();
        let back = read_checkpoint(buf.as_slice()).unwrap().expect_kind("dual_head").unwrap();
        assert_eq!(back.clamp_eps, 1e-7);
        assert_eq!(back.extra("time_scale").unwrap(), 3600.0);
        assert!(back.extra("missing").is_err());
        let bits = |n: &Network| n.params().iter().map(|p| p.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.network), bits(&original));
        assert_eq!(back.network, original);
    }

    #[test]
    fn rejects_garbage_and_truncation() {
        assert!(matches!(read_checkpoint(&b"NOTACKPT\x01\0\0\0"[..]), Err(Error::Checkpoint(_))));
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &Checkpoint::new("cvr", net(), 1e-7)).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_checkpoint(buf.as_slice()).is_err());
        let mut wrong_version = Vec::new();
        write_checkpoint(&mut wrong_version, &Checkpoint::new("cvr", net(), 1e-7)).unwrap();
        assert!(read_checkpoint(wrong_version.as_slice()).unwrap().expect_kind("dfm").is_err());
        wrong_version[8] = 9;
        assert!(matches!(read_checkpoint(wrong_version.as_slice()), Err(Error::Checkpoint(_))));
    }
}
