//! Binary model checkpoints.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! offset  size  field
//! 0       8     magic "EGOCKPT\0"
//! 8       4     u32 format version (1)
//! 12      8     u64 header length H
//! 20      H     UTF-8 header, `key = value` lines: network config (`net.*`),
//!               normalizer (`norm.*`), completed epochs (`train.epoch`), free metadata
//! ...     8     u64 parameter count P, then P records:
//!                 u32 name length, name bytes, u32 rank, rank × u64 dims,
//!                 product(dims) × f64 values
//! ...     8     u64 optimizer buffer count A, then A records:
//!                 u32 name length, name bytes, u64 length n, n × f64 values
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use super::dataset::Normalizer;
use super::network::{Network, NetworkConfig};
use super::optim::RmsPropState;
use super::tensor::Tensor;
use crate::config::KeyValues;
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"EGOCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub normalizer: Normalizer,
    pub optimizer: RmsPropState,
    pub epoch: usize,
    /// Extra metadata echoed into the header (training configuration, provenance).
    pub meta: KeyValues,
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::InvalidInput(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::InvalidInput("checkpoint length overflow".into()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::InvalidInput("checkpoint string is not UTF-8".into()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::InvalidInput("length overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

impl Checkpoint {
    pub fn new(network: Network, normalizer: Normalizer) -> Self {
        Self {
            network,
            normalizer,
            optimizer: RmsPropState::default(),
            epoch: 0,
            meta: KeyValues::new(),
        }
    }

    fn header(&self) -> KeyValues {
        let mut h = self.meta.clone();
        for (k, v) in self.network.config.to_kv() {
            h.set(format!("net.{k}"), v);
        }
        h.set("norm.radar_mean", self.normalizer.radar_mean);
        h.set("norm.depth_mean", self.normalizer.depth_mean);
        h.set("norm.imu_mean", self.normalizer.imu_mean);
        h.set("train.epoch", self.epoch);
        h
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let header = self.header().to_text();
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(header.as_bytes());

        out.extend_from_slice(&(self.network.params.len() as u64).to_le_bytes());
        for (name, t) in self.network.params.iter() {
            put_str(&mut out, name);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            put_f64s(&mut out, t.data());
        }

        out.extend_from_slice(&(self.optimizer.accumulators.len() as u64).to_le_bytes());
        for (name, acc) in &self.optimizer.accumulators {
            put_str(&mut out, name);
            out.extend_from_slice(&(acc.len() as u64).to_le_bytes());
            put_f64s(&mut out, acc);
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::InvalidInput("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::InvalidInput(format!("unsupported checkpoint version {version}")));
        }
        let header_len = r.len()?;
        let header = std::str::from_utf8(r.take(header_len)?)
            .map_err(|_| Error::InvalidInput("checkpoint header is not UTF-8".into()))?;
        let header = KeyValues::parse(header, Path::new("<checkpoint header>"))?;

        let net_kv: BTreeMap<String, String> = header
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("net.").map(|k| (k.to_string(), v.clone())))
            .collect();
        let config = NetworkConfig::from_kv(&net_kv)?;
        let mut network = Network::new(config, 0)?;

        let n_params = r.len()?;
        if n_params != network.params.len() {
            return Err(Error::Shape(format!(
                "checkpoint has {n_params} parameters, configuration expects {}",
                network.params.len()
            )));
        }
        for _ in 0..n_params {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
            let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let data = r.f64s(n.ok_or_else(|| Error::InvalidInput("tensor size overflow".into()))?)?;
            let expected = network
                .params
                .get(&name)
                .ok_or_else(|| Error::Shape(format!("unexpected parameter {name}")))?;
            if expected.shape() != shape.as_slice() {
                return Err(Error::Shape(format!(
                    "parameter {name} has shape {shape:?}, expected {:?}",
                    expected.shape()
                )));
            }
            network.params.insert(name, Tensor::new(shape, data)?);
        }

        let mut optimizer = RmsPropState::default();
        for _ in 0..r.len()? {
            let name = r.string()?;
            let n = r.len()?;
            optimizer.accumulators.insert(name, r.f64s(n)?);
        }
        if r.pos != buf.len() {
            return Err(Error::InvalidInput(format!("{} trailing bytes in checkpoint", buf.len() - r.pos)));
        }

        let normalizer = Normalizer {
            radar_mean: header.get_or("norm.radar_mean", 0.0)?,
            depth_mean: header.get_or("norm.depth_mean", 0.0)?,
            imu_mean: header.get_or("norm.imu_mean", 0.0)?,
        };
        let epoch = header.get_or("train.epoch", 0)?;
        let meta = header
            .iter()
            .filter(|(k, _)| !(k.starts_with("net.") || k.starts_with("norm.") || k.as_str() == "train.epoch"))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        Ok(Self {
            network,
            normalizer,
            optimizer,
            epoch,
            meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::network::Profile;

    #[test]
    fn round_trip_is_exact() {
        let net = Network::new(NetworkConfig::profile(Profile::Tiny), 9).unwrap();
        let mut ck = Checkpoint::new(
            net,
            Normalizer {
                radar_mean: 12.345678901234567,
                depth_mean: 0.1,
                imu_mean: 1.0 / 3.0,
            },
        );
        ck.epoch = 7;
        ck.optimizer.accumulators.insert("fc0.b".into(), vec![0.5, 1e-300]);
        ck.meta.set("train.lr", 1e-3);
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let ck = Checkpoint::new(Network::new(NetworkConfig::profile(Profile::Tiny), 1).unwrap(), Normalizer::default());
        let bytes = ck.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut longer = bytes;
        longer.push(0);
        assert!(Checkpoint::from_bytes(&longer).is_err());
    }
}
