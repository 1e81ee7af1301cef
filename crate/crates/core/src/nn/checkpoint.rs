//! Binary checkpoint:
//!
//! ```text
//! b"VEANCKPT" | version: u32 LE | manifest_len: u64 LE | manifest (JSON)
//! then per entry: parameters as f64 LE, followed by the mask as
//! ceil(n / 8) bytes (bit i of byte k is parameter 8k + i) when present.
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::gaussian::ActionBounds;
use super::net::{NetSpec, PolicyNet};
use super::params::ParamBlock;
use super::NnError;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"VEANCKPT";

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub net: PolicyNet,
    pub bounds: Option<ActionBounds>,
    pub mask: Option<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Free-form run description (configs, seeds).
    pub metadata: serde_json::Value,
    pub entries: Vec<CheckpointEntry>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    metadata: serde_json::Value,
    entries: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    spec: NetSpec,
    layout: Vec<ParamBlock>,
    bounds: Option<ActionBounds>,
    has_mask: bool,
}

impl Checkpoint {
    pub fn entry(&self, name: &str) -> Option<&CheckpointEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), NnError> {
        let manifest = Manifest {
            metadata: self.metadata.clone(),
            entries: self
                .entries
                .iter()
                .map(|e| ManifestEntry {
                    name: e.name.clone(),
                    spec: e.net.spec.clone(),
                    layout: e.net.params.layout.clone(),
                    bounds: e.bounds.clone(),
                    has_mask: e.mask.is_some(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&manifest)?;
        w.write_all(MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for e in &self.entries {
            for v in &e.net.params.values {
                w.write_all(&v.to_le_bytes())?;
            }
            if let Some(mask) = &e.mask {
                if mask.len() != e.net.num_params() {
                    return Err(NnError::Checkpoint(format!("mask of {} has wrong length", e.name)));
                }
                w.write_all(&pack_bits(mask))?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, NnError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(NnError::Checkpoint("bad magic".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!("unsupported version {version}")));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let len = usize::try_from(u64::from_le_bytes(b8))
            .map_err(|_| NnError::Checkpoint("manifest too large".into()))?;
        let mut json = vec![0u8; len];
        r.read_exact(&mut json)?;
        let manifest: Manifest = serde_json::from_slice(&json)?;
        let mut entries = Vec::with_capacity(manifest.entries.len());
        for m in manifest.entries {
            let mut net = PolicyNet::new(m.spec)?;
            if net.params.layout != m.layout {
                return Err(NnError::Checkpoint(format!("layout of {} does not match its spec", m.name)));
            }
            for v in net.params.values.iter_mut() {
                r.read_exact(&mut b8)?;
                *v = f64::from_le_bytes(b8);
            }
            net.params.validate()?;
            let mask = if m.has_mask {
                let n = net.num_params();
                let mut bytes = vec![0u8; n.div_ceil(8)];
                r.read_exact(&mut bytes)?;
                Some(unpack_bits(&bytes, n))
            } else {
                None
            };
            entries.push(CheckpointEntry {
                name: m.name,
                net,
                bounds: m.bounds,
                mask,
            });
        }
        Ok(Self {
            metadata: manifest.metadata,
            entries,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, b) in bits.iter().enumerate() {
        if *b {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

fn unpack_bits(bytes: &[u8], n: usize) -> Vec<bool> {
    (0..n).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, BiLstmSpec, Encoder};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let spec = NetSpec {
            input_dim: 7,
            encoder: Encoder::BiLstm(BiLstmSpec {
                steps: 2,
                step_dim: 3,
                hidden_dim: 2,
            }),
            mlp_widths: vec![3],
            activation: Activation::Relu,
            output_dim: 1,
            log_std: true,
        };
        let net = PolicyNet::initialized(spec, &mut rng, -0.5).unwrap();
        let mask: Vec<bool> = (0..net.num_params()).map(|i| i % 3 != 0).collect();
        Checkpoint {
            metadata: serde_json::json!({"seed": 4}),
            entries: vec![CheckpointEntry {
                name: "rsu0".into(),
                bounds: Some(ActionBounds::new(vec![0.4], vec![1.0]).unwrap()),
                net,
                mask: Some(mask),
            }],
        }
    }

    #[test]
    fn roundtrip_is_exact() {
        let ck = sample();
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        assert_eq!(Checkpoint::read_from(buf.as_slice()).unwrap(), ck);
    }

    #[test]
    fn corrupt_headers_are_rejected() {
        let mut buf = Vec::new();
        sample().write_to(&mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(Checkpoint::read_from(bad.as_slice()).is_err());
        let mut bad = buf.clone();
        bad[8] = 9;
        assert!(Checkpoint::read_from(bad.as_slice()).is_err());
        assert!(Checkpoint::read_from(&buf[..buf.len() - 1]).is_err());
    }

    #[test]
    fn bit_packing_roundtrips() {
        let bits: Vec<bool> = (0..19).map(|i| i % 5 == 1 || i == 18).collect();
        assert_eq!(unpack_bits(&pack_bits(&bits), 19), bits);
    }
}
