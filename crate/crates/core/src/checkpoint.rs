// SPDX-License-Identifier: MIT OR Apache-2.0

//! Binary weight files.
//!
//! `PRXW` layout (all integers u32 little-endian):
//!
//! ```text
//! magic "PRXW" | version | m_in m_out d d_ff n_heads n_blocks n_q | n_q × f64 quantile
//! n_tensors | { name_len | utf-8 name | ndim | dims… | f32 row-major data }*
//! ```
//!
//! Weights are stored as f32. Exact resumption uses the `PRXS` training-state
//! sidecar, which keeps f64 parameters and the AdamW moments.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::train::{AdamW, TrainState};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"PRXW";
pub const STATE_MAGIC: &[u8; 4] = b"PRXS";
pub const VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| bad("truncated file"))?;
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

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    fn magic(&mut self, want: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != want {
            return Err(bad(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(want)
            )));
        }
        let v = self.u32()?;
        if v != VERSION {
            return Err(bad(format!("unsupported version {v}")));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(bad(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| bad(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn write_config(out: &mut Vec<u8>, c: &ModelConfig) -> Result<()> {
    for v in [c.m_in, c.m_out, c.d, c.d_ff, c.n_heads, c.n_blocks, c.n_quantiles()] {
        put_u32(out, v)?;
    }
    for q in &c.quantiles {
        out.extend_from_slice(&q.to_le_bytes());
    }
    Ok(())
}

fn read_config(r: &mut Reader) -> Result<ModelConfig> {
    let mut f = [0usize; 7];
    for v in &mut f {
        *v = r.usize()?;
    }
    let quantiles = (0..f[6]).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let config = ModelConfig {
        m_in: f[0],
        m_out: f[1],
        d: f[2],
        d_ff: f[3],
        n_heads: f[4],
        n_blocks: f[5],
        quantiles,
    };
    config.validate().map_err(|e| bad(format!("stored model config is invalid: {e}")))?;
    Ok(config)
}

pub fn weights_to_bytes(params: &ModelParams) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHTS_MAGIC);
    put_u32(&mut out, VERSION as usize)?;
    write_config(&mut out, &params.config)?;
    let tensors = params.tensors();
    put_u32(&mut out, tensors.len())?;
    for (name, t) in &tensors {
        put_u32(&mut out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        let shape = t.shape();
        put_u32(&mut out, shape.len())?;
        for d in shape {
            put_u32(&mut out, d)?;
        }
        for v in t.data() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn weights_from_bytes(buf: &[u8]) -> Result<ModelParams> {
    let mut r = Reader { buf, pos: 0 };
    r.magic(WEIGHTS_MAGIC)?;
    let config = read_config(&mut r)?;
    let mut params = ModelParams::zeros(&config)?;
    let expected: BTreeMap<String, Vec<usize>> = params.tensors().into_iter().map(|(n, t)| (n, t.shape())).collect();

    let n = r.usize()?;
    let mut loaded: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for _ in 0..n {
        let len = r.usize()?;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| bad("tensor name is not utf-8"))?
            .to_string();
        let ndim = r.usize()?;
        let shape = (0..ndim).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
        let want = expected.get(&name).ok_or_else(|| bad(format!("unknown tensor {name:?}")))?;
        if *want != shape {
            return Err(bad(format!("tensor {name:?} has shape {shape:?}, model expects {want:?}")));
        }
        let count: usize = shape.iter().product();
        let bytes = r.take(count.checked_mul(4).ok_or_else(|| bad("tensor too large"))?)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        if loaded.insert(name.clone(), data).is_some() {
            return Err(bad(format!("duplicate tensor {name:?}")));
        }
    }
    r.finish()?;
    if let Some(missing) = expected.keys().find(|k| !loaded.contains_key(*k)) {
        return Err(bad(format!("missing tensor {missing:?}")));
    }
    params.visit_mut(&mut |name, a| a.copy_from_slice(&loaded[name]));
    Ok(params)
}

pub fn save_weights(path: impl AsRef<Path>, params: &ModelParams) -> Result<()> {
    fs::write(path, weights_to_bytes(params)?)?;
    Ok(())
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
    weights_from_bytes(&buf).map_err(|e| match e {
        Error::Checkpoint(m) => bad(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// `PRXS` | version | config | seed u64 | step u64 | t u64 | n u64 |
/// n × f64 params | n × f64 m | n × f64 v
pub fn state_to_bytes(params: &ModelParams, state: &TrainState, seed: u64) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(STATE_MAGIC);
    put_u32(&mut out, VERSION as usize)?;
    write_config(&mut out, &params.config)?;
    let flat = params.to_flat();
    for v in [seed, state.step as u64, state.optimizer.t, flat.len() as u64] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for xs in [&flat, &state.optimizer.m, &state.optimizer.v] {
        for x in xs {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

/// Restores parameters and optimizer state. Fails if the stored seed differs
/// from `seed`, since the continued trajectory would not match.
pub fn state_from_bytes(buf: &[u8], seed: u64, weight_decay: f64) -> Result<(ModelParams, TrainState)> {
    let mut r = Reader { buf, pos: 0 };
    r.magic(STATE_MAGIC)?;
    let config = read_config(&mut r)?;
    let stored_seed = r.u64()?;
    if stored_seed != seed {
        return Err(bad(format!("state was written with seed {stored_seed}, run uses seed {seed}")));
    }
    let step = r.u64()? as usize;
    let t = r.u64()?;
    let n = r.u64()? as usize;
    let mut params = ModelParams::zeros(&config)?;
    if n != params.parameter_count() {
        return Err(bad(format!(
            "state holds {n} parameters, config implies {}",
            params.parameter_count()
        )));
    }
    let mut read_vec = || (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>();
    let flat = read_vec()?;
    let m = read_vec()?;
    let v = read_vec()?;
    r.finish()?;
    let mut pos = 0;
    params.visit_mut(&mut |_, a| {
        a.copy_from_slice(&flat[pos..pos + a.len()]);
        pos += a.len();
    });
    let mut optimizer = AdamW::new(n, weight_decay);
    optimizer.t = t;
    optimizer.m = m;
    optimizer.v = v;
    Ok((params, TrainState { step, optimizer }))
}

pub fn save_state(path: impl AsRef<Path>, params: &ModelParams, state: &TrainState, seed: u64) -> Result<()> {
    fs::write(path, state_to_bytes(params, state, seed)?)?;
    Ok(())
}

pub fn load_state(path: impl AsRef<Path>, seed: u64, weight_decay: f64) -> Result<(ModelParams, TrainState)> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
    state_from_bytes(&buf, seed, weight_decay)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn small() -> ModelParams {
        let cfg = ModelConfig {
            m_in: 2,
            m_out: 2,
            d: 4,
            d_ff: 6,
            n_heads: 2,
            n_blocks: 2,
            quantiles: vec![0.1, 0.5, 0.9],
        };
        ModelParams::init(&cfg, &mut rng::seeded(3)).unwrap()
    }

    #[test]
    fn roundtrip_at_f32_precision() {
        let p = small();
        let bytes = weights_to_bytes(&p).unwrap();
        assert_eq!(&bytes[..4], b"PRXW");
        let q = weights_from_bytes(&bytes).unwrap();
        assert_eq!(q.config, p.config);
        for (a, b) in p.to_flat().iter().zip(q.to_flat()) {
            assert_eq!(*a as f32 as f64, b);
        }
        assert_eq!(weights_to_bytes(&q).unwrap(), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = weights_to_bytes(&small()).unwrap();
        assert!(weights_from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(weights_from_bytes(&extra).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(weights_from_bytes(&magic).is_err());

        // rename the first tensor ("input.w_in" -> "input.w_xx")
        let name_at = 4 + 4 + 7 * 4 + 3 * 8 + 4 + 4;
        assert_eq!(&bytes[name_at..name_at + 10], b"input.w_in");
        let mut renamed = bytes.clone();
        renamed[name_at + 8..name_at + 10].copy_from_slice(b"xx");
        let err = weights_from_bytes(&renamed).unwrap_err().to_string();
        assert!(err.contains("unknown tensor"), "{err}");

        // first dim of the first tensor
        let mut reshaped = bytes.clone();
        let dim_at = name_at + 10 + 4;
        reshaped[dim_at] += 1;
        let err = weights_from_bytes(&reshaped).unwrap_err().to_string();
        assert!(err.contains("shape"), "{err}");
    }

    #[test]
    fn state_roundtrip_is_exact() {
        let p = small();
        let mut opt = AdamW::new(p.parameter_count(), 0.01);
        opt.t = 7;
        opt.m.iter_mut().enumerate().for_each(|(i, v)| *v = i as f64 * 0.1);
        opt.v.iter_mut().enumerate().for_each(|(i, v)| *v = i as f64 * 1e-3);
        let st = TrainState { step: 11, optimizer: opt };
        let bytes = state_to_bytes(&p, &st, 5).unwrap();
        let (q, st2) = state_from_bytes(&bytes, 5, 0.01).unwrap();
        assert_eq!(q, p);
        assert_eq!(st2, st);
        assert!(state_from_bytes(&bytes, 6, 0.01).is_err());
    }
}
