//! Self-describing binary checkpoint.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "ADCNET\0\x01"
//! header_len u32
//! header     JSON: input shape, layer geometry, head rows
//! payload    every parameter tensor in `Network::params` order, as raw f32
//! ```
//!
//! Weights are stored as raw bit patterns so a save/load cycle is bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{Conv2d, Dense, Layer, Network};

const MAGIC: &[u8; 8] = b"ADCNET\0\x01";

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LayerHeader {
    Dense {
        in_dim: usize,
        out_dim: usize,
    },
    Conv2d {
        in_channels: usize,
        height: usize,
        width: usize,
        out_channels: usize,
        kernel: usize,
    },
    Relu {
        len: usize,
    },
}

#[derive(Serialize, Deserialize)]
struct Header {
    input_shape: Vec<usize>,
    layers: Vec<LayerHeader>,
    head_rows: usize,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Parse {
                offset: self.pos as u64,
                message: format!("checkpoint truncated, needed {n} more bytes"),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

impl Network {
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let header = Header {
            input_shape: self.input_shape.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| match l {
                    Layer::Dense(d) => LayerHeader::Dense {
                        in_dim: d.in_dim,
                        out_dim: d.out_dim,
                    },
                    Layer::Conv2d(c) => LayerHeader::Conv2d {
                        in_channels: c.in_channels,
                        height: c.height,
                        width: c.width,
                        out_channels: c.out_channels,
                        kernel: c.kernel,
                    },
                    Layer::Relu { len } => LayerHeader::Relu { len: *len },
                })
                .collect(),
            head_rows: self.head_rows,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(12 + json.len() + self.param_count() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for p in self.params() {
            for v in p {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(8)? != MAGIC {
            return Err(Error::Format("not a network checkpoint".into()));
        }
        let len_bytes = cur.take(4)?;
        let len = u32::from_le_bytes([len_bytes[0], len_bytes[1], len_bytes[2], len_bytes[3]]);
        let header_start = cur.pos as u64;
        let header: Header =
            serde_json::from_slice(cur.take(len as usize)?).map_err(|e| Error::Parse {
                offset: header_start,
                message: e.to_string(),
            })?;
        let mut layers = Vec::with_capacity(header.layers.len());
        for lh in header.layers {
            layers.push(match lh {
                LayerHeader::Dense { in_dim, out_dim } => {
                    let w = cur.floats(in_dim * out_dim)?;
                    let b = cur.floats(out_dim)?;
                    Layer::Dense(Dense::new(in_dim, out_dim, w, b)?)
                }
                LayerHeader::Conv2d {
                    in_channels,
                    height,
                    width,
                    out_channels,
                    kernel,
                } => {
                    let w = cur.floats(out_channels * in_channels * kernel * kernel)?;
                    let b = cur.floats(out_channels)?;
                    Layer::Conv2d(Conv2d::new(
                        (in_channels, height, width),
                        out_channels,
                        kernel,
                        w,
                        b,
                    )?)
                }
                LayerHeader::Relu { len } => Layer::Relu { len },
            });
        }
        let mut net = Network::from_layers(header.input_shape, layers)?;
        let head = cur.floats(header.head_rows * net.feature_dim)?;
        net.set_head(header.head_rows, head)?;
        if cur.pos != bytes.len() {
            return Err(Error::Parse {
                offset: cur.pos as u64,
                message: "trailing bytes after checkpoint payload".into(),
            });
        }
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_checkpoint_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::net::Architecture;

    #[test]
    fn roundtrip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for arch in [Architecture::default_mlp(), Architecture::default_conv()] {
            let shape: &[usize] = match arch {
                Architecture::Mlp { .. } => &[7],
                Architecture::Conv { .. } => &[1, 5, 5],
            };
            let mut net = Network::new(shape, &arch, &mut rng).unwrap();
            net.extend_head(3, &mut rng);
            let restored = Network::from_checkpoint_bytes(&net.to_checkpoint_bytes()).unwrap();
            assert_eq!(restored.fingerprint(), net.fingerprint());
            assert_eq!(restored, net);
        }
    }

    #[test]
    fn truncated_checkpoint_reports_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Network::new(&[4], &Architecture::default_mlp(), &mut rng).unwrap();
        let bytes = net.to_checkpoint_bytes();
        match Network::from_checkpoint_bytes(&bytes[..bytes.len() - 3]) {
            Err(Error::Parse { offset, .. }) => assert!(offset > 12),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.bin");
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Network::new(&[3], &Architecture::default_mlp(), &mut rng).unwrap();
        net.save(&path).unwrap();
        assert_eq!(Network::load(&path).unwrap(), net);
    }
}
