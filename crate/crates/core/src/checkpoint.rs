//! Versioned binary checkpoint container.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic        8 bytes   "MOEFLOWC"
//! version      u32       FORMAT_VERSION
//! kind         u8        0 = vfm, 1 = moefm
//! seed         u64       run seed
//! dim          u32       state dimension m
//! k            u32       expert count (1 for vfm)
//! sigma        f64       kernel width (0 for vfm)
//! net_count    u32       k for vfm, k + 1 for moefm (experts first, gate last)
//! per net:
//!   role       u8        0 = field/expert, 1 = gate
//!   activation u8        0 = tanh, 1 = gelu
//!   net_seed   u64
//!   n_sizes    u32
//!   sizes      n_sizes x u32 (time-embedding columns included)
//!   params     f64 x P, layer by layer: weight (fan_in x fan_out, row-major), then bias
//! checksum     u64       FNV-1a over every preceding byte
//! ```

use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::flow::generate_vfm;
use crate::moefm::{generate, Generated, MoeFlowModel, SamplingMode};
use crate::nnet::{Activation, MlpNet};

pub const MAGIC: &[u8; 8] = b"MOEFLOWC";
pub const FORMAT_VERSION: u32 = 1;

/// A trained model of either family.
#[derive(Debug, Clone, PartialEq)]
pub enum FlowModel {
    Vfm(MlpNet),
    MoeFm(MoeFlowModel),
}

impl FlowModel {
    pub fn family(&self) -> &'static str {
        match self {
            FlowModel::Vfm(_) => "vfm",
            FlowModel::MoeFm(_) => "moefm",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            FlowModel::Vfm(n) => n.state_dim(),
            FlowModel::MoeFm(m) => m.dim(),
        }
    }

    pub fn k(&self) -> usize {
        match self {
            FlowModel::Vfm(_) => 1,
            FlowModel::MoeFm(m) => m.k(),
        }
    }

    pub fn sigma(&self) -> Option<f64> {
        match self {
            FlowModel::Vfm(_) => None,
            FlowModel::MoeFm(m) => Some(m.sigma()),
        }
    }

    /// Frozen-routing generation for either family. `mode` only matters for MoE-FM;
    /// VFM samples report expert 0.
    pub fn generate(&self, n: usize, steps: usize, mode: SamplingMode, seed: u64) -> Result<Generated> {
        match self {
            FlowModel::Vfm(field) => {
                let (samples, trajectories) = generate_vfm(field, n, steps, seed)?;
                Ok(Generated {
                    expert_ids: vec![0; samples.len()],
                    samples,
                    trajectories,
                })
            }
            FlowModel::MoeFm(m) => generate(m, n, steps, mode, seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: FlowModel,
    pub seed: u64,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let (kind, sigma, nets): (u8, f64, Vec<(u8, &MlpNet)>) = match &self.model {
            FlowModel::Vfm(n) => (0, 0.0, vec![(0, n)]),
            FlowModel::MoeFm(m) => (
                1,
                m.sigma(),
                m.experts().iter().map(|e| (0, e)).chain([(1, m.gate())]).collect(),
            ),
        };
        out.push(kind);
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(self.model.dim() as u32).to_le_bytes());
        out.extend_from_slice(&(self.model.k() as u32).to_le_bytes());
        out.extend_from_slice(&sigma.to_le_bytes());
        out.extend_from_slice(&(nets.len() as u32).to_le_bytes());
        for (role, net) in nets {
            out.push(role);
            out.push(match net.activation() {
                Activation::Tanh => 0,
                Activation::Gelu => 1,
            });
            out.extend_from_slice(&net.seed().to_le_bytes());
            out.extend_from_slice(&(net.layer_sizes().len() as u32).to_le_bytes());
            for &s in net.layer_sizes() {
                out.extend_from_slice(&(s as u32).to_le_bytes());
            }
            for p in net.params_flat() {
                out.extend_from_slice(&p.to_le_bytes());
            }
        }
        let sum = checksum(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 + 8 || &bytes[..8] != MAGIC {
            return Err(Error::Format("not a moeflow checkpoint (bad magic)".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let mut r = Reader { buf: body, pos: 8 };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint format version {version} is not supported (expected {FORMAT_VERSION})"
            )));
        }
        let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
        if stored != checksum(body) {
            return Err(Error::Format("checkpoint checksum mismatch".into()));
        }
        let kind = r.u8()?;
        let seed = r.u64()?;
        let dim = r.u32()? as usize;
        let k = r.u32()? as usize;
        let sigma = r.f64()?;
        let count = r.u32()? as usize;
        let mut experts = Vec::new();
        let mut gate = None;
        for _ in 0..count {
            let role = r.u8()?;
            let activation = match r.u8()? {
                0 => Activation::Tanh,
                1 => Activation::Gelu,
                a => return Err(Error::Format(format!("unknown activation tag {a}"))),
            };
            let net_seed = r.u64()?;
            let n_sizes = r.u32()? as usize;
            if !(2..=64).contains(&n_sizes) {
                return Err(Error::Format(format!("implausible layer count {n_sizes}")));
            }
            let sizes = (0..n_sizes)
                .map(|_| r.u32().map(|v| v as usize))
                .collect::<Result<Vec<_>>>()?;
            let mut weights = Vec::new();
            let mut biases = Vec::new();
            for w in sizes.windows(2) {
                let wv = (0..w[0] * w[1]).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
                let bv = (0..w[1]).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
                weights.push(Array2::from_shape_vec((w[0], w[1]), wv).expect("shape from sizes"));
                biases.push(Array1::from(bv));
            }
            let net = MlpNet::from_parts(weights, biases, activation, net_seed)
                .map_err(|e| Error::Format(format!("bad network parameters: {e}")))?;
            match role {
                0 => experts.push(net),
                1 if gate.is_none() => gate = Some(net),
                _ => return Err(Error::Format(format!("unexpected net role {role}"))),
            }
        }
        if r.pos != body.len() {
            return Err(Error::Format("trailing bytes after last network".into()));
        }
        let model = match kind {
            0 => {
                if experts.len() != 1 || gate.is_some() {
                    return Err(Error::Format("vfm checkpoint must hold exactly one field".into()));
                }
                FlowModel::Vfm(experts.pop().expect("one field"))
            }
            1 => {
                let gate = gate.ok_or_else(|| Error::Format("moefm checkpoint has no gate".into()))?;
                FlowModel::MoeFm(MoeFlowModel::new(experts, gate, sigma).map_err(|e| Error::Format(e.to_string()))?)
            }
            other => return Err(Error::Format(format!("unknown model kind {other}"))),
        };
        if model.dim() != dim || model.k() != k {
            return Err(Error::Format("header dimensions disagree with networks".into()));
        }
        Ok(Self { model, seed })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn checksum(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
