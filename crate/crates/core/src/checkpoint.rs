//! Binary network checkpoints.
//!
//! Layout, all integers and reals little-endian:
//!
//! ```text
//! "POPS" | version u8 | input u32 | output u32 | hidden count u32 | widths u32...
//! | activation u8 (0 relu, 1 tanh)
//! | per layer: weights f64 (row-major fan_in × fan_out) | biases f64 | mask bits (LSB first, padded)
//! | env name len u32 | env name utf8 | eval mean f64 | seed u64
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Activation, DenseNetwork, NetworkSpec};

pub const MAGIC: &[u8; 4] = b"POPS";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CheckpointMeta {
    pub env: String,
    pub eval_mean: f64,
    pub seed: u64,
}

pub fn encode(net: &DenseNetwork, meta: &CheckpointMeta) -> Vec<u8> {
    let spec = net.spec();
    let mut out = Vec::with_capacity(64 + 9 * spec.weight_count() + 8 * spec.bias_count());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    for d in [spec.input_dim, spec.output_dim, spec.hidden_widths.len()] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &w in &spec.hidden_widths {
        out.extend_from_slice(&(w as u32).to_le_bytes());
    }
    out.push(match spec.activation {
        Activation::Relu => 0,
        Activation::Tanh => 1,
    });
    for layer in net.layers() {
        for v in layer.weights().iter().chain(layer.biases()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for chunk in layer.mask().chunks(8) {
            out.push(chunk.iter().enumerate().fold(0u8, |b, (i, &m)| b | (u8::from(m) << i)));
        }
    }
    out.extend_from_slice(&(meta.env.len() as u32).to_le_bytes());
    out.extend_from_slice(meta.env.as_bytes());
    out.extend_from_slice(&meta.eval_mean.to_le_bytes());
    out.extend_from_slice(&meta.seed.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Length {
                expected: end,
                found: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Format("layer too large".into()))?,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn decode(bytes: &[u8]) -> Result<(DenseNetwork, CheckpointMeta)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("bad magic bytes".into()));
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version} (this build reads {VERSION})"
        )));
    }
    let input = r.u32()?;
    let output = r.u32()?;
    let hidden_count = r.u32()?;
    if hidden_count > 1024 {
        return Err(Error::Format(format!("implausible hidden layer count {hidden_count}")));
    }
    let hidden = (0..hidden_count).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let activation = match r.u8()? {
        0 => Activation::Relu,
        1 => Activation::Tanh,
        other => return Err(Error::Format(format!("unknown activation code {other}"))),
    };
    let spec = NetworkSpec::new(input, hidden, output, activation).map_err(|e| Error::Format(e.to_string()))?;
    let mut net = DenseNetwork::zeros(spec.clone())?;
    for (g, (fan_in, fan_out)) in spec.layer_shapes().into_iter().enumerate() {
        let size = fan_in * fan_out;
        let weights = r.f64s(size)?;
        let biases = r.f64s(fan_out)?;
        let bits = r.take(size.div_ceil(8))?;
        let mask: Vec<bool> = (0..size).map(|i| bits[i / 8] >> (i % 8) & 1 == 1).collect();
        if weights.iter().zip(&mask).any(|(w, m)| !m && *w != 0.0) {
            return Err(Error::Format(format!("layer {g} stores a nonzero pruned weight")));
        }
        net.set_mask(g, &mask)?;
        net.set_weights(g, &weights)?;
        net.set_biases(g, &biases)?;
    }
    let name_len = r.u32()?;
    let env =
        String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| Error::Format("env name is not utf-8".into()))?;
    let eval_mean = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
    let seed = r.u64()?;
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok((net, CheckpointMeta { env, eval_mean, seed }))
}

pub fn save_checkpoint(net: &DenseNetwork, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, encode(net, meta)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(DenseNetwork, CheckpointMeta)> {
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
