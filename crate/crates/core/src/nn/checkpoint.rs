//! Binary checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "PIFMCKPT"
//! version    u32      currently 1
//! kind       u32 len + UTF-8        e.g. "velocity_net", "prior/sage"
//! metadata   u32 len + UTF-8 JSON   resolved config, optimizer step, ...
//! count      u32
//! count x record:
//!   name     u32 len + UTF-8
//!   ndim     u32
//!   dims     ndim x u64
//!   values   prod(dims) x f64
//! ```
//!
//! Optimizer moments are stored as ordinary records named `adam/m/<param>` and
//! `adam/v/<param>`; the step counter and hyperparameters live in metadata.

use std::io::{Read, Write};
use std::path::Path;

use serde_json::Value;

use crate::error::{PifmError, Result};
use crate::nn::adam::AdamState;
use crate::nn::params::{ParameterSet, Tensor};

pub const MAGIC: &[u8; 8] = b"PIFMCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub metadata: Value,
    pub records: Vec<(String, Vec<usize>, Vec<f64>)>,
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>, metadata: Value) -> Self {
        Checkpoint {
            kind: kind.into(),
            metadata,
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) {
        self.records.push((name.into(), shape, data));
    }

    pub fn push_params(&mut self, prefix: &str, params: &ParameterSet) {
        for (name, t) in params.iter() {
            self.push(format!("{prefix}{name}"), t.shape.clone(), t.data.clone());
        }
    }

    pub fn params(&self, prefix: &str) -> Result<ParameterSet> {
        let mut p = ParameterSet::new();
        for (name, shape, data) in &self.records {
            if let Some(stripped) = name.strip_prefix(prefix) {
                if !stripped.starts_with("adam/") {
                    p.insert(stripped, Tensor::new(shape.clone(), data.clone())?)?;
                }
            }
        }
        Ok(p)
    }

    pub fn push_adam(&mut self, state: &AdamState) {
        for (name, m) in &state.m {
            self.push(format!("adam/m/{name}"), vec![m.len()], m.clone());
        }
        for (name, v) in &state.v {
            self.push(format!("adam/v/{name}"), vec![v.len()], v.clone());
        }
        if let Value::Object(map) = &mut self.metadata {
            map.insert(
                "adam".into(),
                serde_json::json!({
                    "lr": state.lr, "beta1": state.beta1, "beta2": state.beta2,
                    "eps": state.eps, "step": state.step,
                }),
            );
        }
    }

    pub fn adam(&self) -> Result<Option<AdamState>> {
        let Some(meta) = self.metadata.get("adam") else {
            return Ok(None);
        };
        let f = |k: &str| {
            meta.get(k)
                .and_then(Value::as_f64)
                .ok_or_else(|| PifmError::State(format!("checkpoint adam metadata lacks `{k}`")))
        };
        let mut s = AdamState::new(f("lr")?);
        s.beta1 = f("beta1")?;
        s.beta2 = f("beta2")?;
        s.eps = f("eps")?;
        s.step = meta.get("step").and_then(Value::as_u64).unwrap_or(0);
        for (name, _, data) in &self.records {
            if let Some(p) = name.strip_prefix("adam/m/") {
                s.m.insert(p.to_string(), data.clone());
            } else if let Some(p) = name.strip_prefix("adam/v/") {
                s.v.insert(p.to_string(), data.clone());
            }
        }
        Ok(Some(s))
    }

    pub fn record(&self, name: &str) -> Option<(&[usize], &[f64])> {
        self.records
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, s, d)| (s.as_slice(), d.as_slice()))
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        write_str(w, &self.kind)?;
        write_str(w, &serde_json::to_string(&self.metadata)?)?;
        w.write_all(&(self.records.len() as u32).to_le_bytes())?;
        for (name, shape, data) in &self.records {
            write_str(w, name)?;
            w.write_all(&(shape.len() as u32).to_le_bytes())?;
            for &d in shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &x in data {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(PifmError::State("not a checkpoint file (bad magic)".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(PifmError::State(format!(
                "checkpoint version {version} unsupported (expected {VERSION})"
            )));
        }
        let kind = read_str(r)?;
        let metadata: Value = serde_json::from_str(&read_str(r)?)?;
        let count = read_u32(r)? as usize;
        let mut records = Vec::with_capacity(count);
        for _ in 0..count {
            let name = read_str(r)?;
            let ndim = read_u32(r)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let len: usize = shape.iter().product();
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                data.push(f64::from_le_bytes(b));
            }
            records.push((name, shape, data));
        }
        Ok(Checkpoint {
            kind,
            metadata,
            records,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Checkpoint::read_from(&mut f)
    }
}

fn write_str(w: &mut impl Write, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_str(r: &mut impl Read) -> Result<String> {
    let len = read_u32(r)? as usize;
    let mut b = vec![0u8; len];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|e| PifmError::State(format!("invalid UTF-8 in checkpoint: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::nn::adam::adam_step;

    #[test]
    fn params_and_optimizer_survive_a_round_trip() {
        let mut p = ParameterSet::new();
        p.insert_matrix("layer0/w", Matrix::from_fn(3, 2, |i, j| i as f64 - 0.25 * j as f64))
            .unwrap();
        p.insert("scale", Tensor::new(vec![4], vec![1.0, -0.0, f64::MIN_POSITIVE, 3.5]).unwrap())
            .unwrap();
        let mut s = AdamState::new(1e-3);
        p.zero_grads();
        p.accumulate_grad("scale", &[0.1, 0.2, 0.3, 0.4]).unwrap();
        adam_step(&mut p, &mut s).unwrap();

        let mut ck = Checkpoint::new("velocity_net", serde_json::json!({"hidden": 32}));
        ck.push_params("", &p);
        ck.push_adam(&s);
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.params("").unwrap(), p);
        assert_eq!(back.adam().unwrap().unwrap(), s);
    }

    #[test]
    fn rejects_foreign_files() {
        let bytes = b"NOTACKPT\x01\x00\x00\x00".to_vec();
        assert!(Checkpoint::read_from(&mut bytes.as_slice()).is_err());
        let mut ok = Vec::new();
        Checkpoint::new("x", serde_json::json!({})).write_to(&mut ok).unwrap();
        ok[8] = 9;
        assert!(matches!(
            Checkpoint::read_from(&mut ok.as_slice()),
            Err(PifmError::State(_))
        ));
    }
}
