//! Single-file checkpoint archive: a versioned magic header, JSON metadata
//! (model config, vocabulary, step counter), three named-tensor tables
//! (parameters, optimizer square-average, optimizer momentum), and the
//! training rng state. All integers and floats are little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::model::{Model, ModelConfig};
use crate::rng::SeedRng;

const MAGIC: &[u8; 4] = b"MEMC";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    /// Token order fixes the encoding; stored so later runs decode
    /// identically.
    pub vocab: Vec<String>,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: Vec<NamedTensor>,
    /// Empty when the optimizer has not run yet.
    pub opt_acc: Vec<NamedTensor>,
    pub opt_mom: Vec<NamedTensor>,
    /// `(seed, word position)` of the training rng stream.
    pub rng: (u64, u128),
}

impl Checkpoint {
    /// Capture a model plus surrounding training state.
    pub fn capture(
        model: &Model,
        vocab: Vec<String>,
        step: u64,
        rng: &SeedRng,
        opt: Option<(&[Vec<f64>], &[Vec<f64>])>,
    ) -> Self {
        let params = model
            .params()
            .iter()
            .map(|p| NamedTensor {
                name: p.name.clone(),
                shape: p.shape.clone(),
                data: p.data.clone(),
            })
            .collect();
        let wrap = |tag: &str, blocks: &[Vec<f64>]| {
            model
                .params()
                .iter()
                .zip(blocks)
                .map(|(p, b)| NamedTensor {
                    name: format!("{tag}.{}", p.name),
                    shape: vec![b.len()],
                    data: b.clone(),
                })
                .collect()
        };
        let (opt_acc, opt_mom) = match opt {
            Some((acc, mom)) => (wrap("acc", acc), wrap("mom", mom)),
            None => (Vec::new(), Vec::new()),
        };
        Self {
            meta: CheckpointMeta {
                config: model.config().clone(),
                vocab,
                step,
            },
            params,
            opt_acc,
            opt_mom,
            rng: rng.state(),
        }
    }

    /// Copy stored parameters back into a model built from the same config.
    pub fn restore_params(&self, model: &mut Model) -> Result<()> {
        if self.meta.config != *model.config() {
            return Err(CoreError::Checkpoint(
                "checkpoint config does not match the model".into(),
            ));
        }
        if self.params.len() != model.params().len() {
            return Err(CoreError::Checkpoint(format!(
                "checkpoint holds {} tensors, model has {}",
                self.params.len(),
                model.params().len()
            )));
        }
        for (stored, live) in self.params.iter().zip(model.params_mut().iter_mut()) {
            if stored.name != live.name || stored.shape != live.shape {
                return Err(CoreError::Checkpoint(format!(
                    "tensor mismatch: {} {:?} vs {} {:?}",
                    stored.name, stored.shape, live.name, live.shape
                )));
            }
            live.data.clone_from(&stored.data);
        }
        Ok(())
    }

    /// Optimizer blocks in model parameter order, if any were stored.
    pub fn optimizer_blocks(&self) -> Option<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        if self.opt_acc.is_empty() {
            return None;
        }
        let strip = |ts: &[NamedTensor]| ts.iter().map(|t| t.data.clone()).collect();
        Some((strip(&self.opt_acc), strip(&self.opt_mom)))
    }

    pub fn training_rng(&self) -> SeedRng {
        SeedRng::from_state(self.rng.0, self.rng.1)
    }
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let meta = serde_json::to_vec(&ckpt.meta)?;
    write_bytes(&mut w, &meta)?;
    for table in [&ckpt.params, &ckpt.opt_acc, &ckpt.opt_mom] {
        write_u64(&mut w, table.len() as u64)?;
        for t in table.iter() {
            write_bytes(&mut w, t.name.as_bytes())?;
            write_u64(&mut w, t.shape.len() as u64)?;
            for &d in &t.shape {
                write_u64(&mut w, d as u64)?;
            }
            write_u64(&mut w, t.data.len() as u64)?;
            for &v in &t.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.write_all(&ckpt.rng.0.to_le_bytes())?;
    w.write_all(&ckpt.rng.1.to_le_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if &magic != MAGIC {
        return Err(CoreError::Checkpoint("not a checkpoint file".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(CoreError::Checkpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let meta: CheckpointMeta = serde_json::from_slice(&read_bytes(&mut r)?)?;
    let mut tables = Vec::with_capacity(3);
    for _ in 0..3 {
        let count = read_u64(&mut r)? as usize;
        let mut table = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let name = String::from_utf8(read_bytes(&mut r)?)
                .map_err(|_| CoreError::Checkpoint("tensor name is not utf-8".into()))?;
            let rank = read_u64(&mut r)? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(read_u64(&mut r)? as usize);
            }
            let len = read_u64(&mut r)? as usize;
            if shape.iter().product::<usize>() != len {
                return Err(CoreError::Checkpoint(format!(
                    "tensor {name}: shape {shape:?} does not hold {len} values"
                )));
            }
            let mut data = Vec::with_capacity(len.min(1 << 24));
            let mut buf = [0u8; 8];
            for _ in 0..len {
                read_exact(&mut r, &mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            table.push(NamedTensor { name, shape, data });
        }
        tables.push(table);
    }
    let mut buf8 = [0u8; 8];
    read_exact(&mut r, &mut buf8)?;
    let seed = u64::from_le_bytes(buf8);
    let mut buf16 = [0u8; 16];
    read_exact(&mut r, &mut buf16)?;
    let word_pos = u128::from_le_bytes(buf16);
    let opt_mom = tables.pop().unwrap();
    let opt_acc = tables.pop().unwrap();
    let params = tables.pop().unwrap();
    Ok(Checkpoint {
        meta,
        params,
        opt_acc,
        opt_mom,
        rng: (seed, word_pos),
    })
}

fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_bytes<W: Write>(w: &mut W, b: &[u8]) -> Result<()> {
    write_u64(w, b.len() as u64)?;
    w.write_all(b)?;
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| CoreError::Checkpoint("unexpected end of file".into()))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    read_exact(r, &mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_bytes<R: Read>(r: &mut R) -> Result<Vec<u8>> {
    let len = read_u64(r)? as usize;
    let mut buf = vec![0u8; len.min(1 << 28)];
    if len > buf.len() {
        return Err(CoreError::Checkpoint("oversized field".into()));
    }
    read_exact(r, &mut buf)?;
    Ok(buf)
}
