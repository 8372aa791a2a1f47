//! Versioned binary model checkpoints.
//!
//! Layout: magic "TAMC", u32 version, u64 vocabulary fingerprint, u32 config
//! JSON length + bytes, u32 parameter count, then per parameter: name
//! (u16 length + bytes), frozen flag, fixed-row list, shape (u8 rank + u32
//! extents), and the little-endian IEEE-754 f64 payload. Loading rejects a
//! vocabulary-fingerprint mismatch.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::numerics::tensor::Tensor;

const MAGIC: &[u8; 4] = b"TAMC";
const VERSION: u32 = 1;

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&model.vocab_fingerprint.to_le_bytes())?;
    let config = serde_json::to_vec(&model.config)?;
    w.write_all(&(config.len() as u32).to_le_bytes())?;
    w.write_all(&config)?;
    w.write_all(&(model.params.len() as u32).to_le_bytes())?;
    for id in model.params.ids() {
        let name = model.params.name(id).as_bytes();
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name)?;
        let p = model.params.get(id);
        w.write_all(&[u8::from(p.frozen)])?;
        w.write_all(&(p.fixed_rows.len() as u32).to_le_bytes())?;
        for &r in &p.fixed_rows {
            w.write_all(&(r as u32).to_le_bytes())?;
        }
        let shape = p.value.shape();
        w.write_all(&[shape.len() as u8])?;
        for &e in shape {
            w.write_all(&(e as u32).to_le_bytes())?;
        }
        for &x in p.value.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_exact<const N: usize>(r: &mut impl Read, path: &str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| Error::Format {
        path: path.to_string(),
        msg: format!("truncated checkpoint: {e}"),
    })?;
    Ok(buf)
}

/// Rebuild a model from a checkpoint. When `expected_fingerprint` is given,
/// a stored fingerprint that differs is rejected (the weights belong to a
/// different vocabulary).
pub fn load_model(path: &Path, expected_fingerprint: Option<u64>) -> Result<Model> {
    let display = path.display().to_string();
    let mut r = BufReader::new(File::open(path)?);
    let magic = read_exact::<4>(&mut r, &display)?;
    if &magic != MAGIC {
        return Err(Error::Format {
            path: display,
            msg: "missing TAMC magic".into(),
        });
    }
    let version = u32::from_le_bytes(read_exact::<4>(&mut r, &display)?);
    if version != VERSION {
        return Err(Error::Format {
            path: display,
            msg: format!("unsupported checkpoint version {version}"),
        });
    }
    let fingerprint = u64::from_le_bytes(read_exact::<8>(&mut r, &display)?);
    if let Some(expected) = expected_fingerprint {
        if expected != fingerprint {
            return Err(Error::Contract(format!(
                "checkpoint vocabulary fingerprint {fingerprint:#x} does not match expected {expected:#x}"
            )));
        }
    }
    let config_len = u32::from_le_bytes(read_exact::<4>(&mut r, &display)?) as usize;
    let mut config_bytes = vec![0u8; config_len];
    r.read_exact(&mut config_bytes)?;
    let config: ModelConfig = serde_json::from_slice(&config_bytes)?;

    let count = u32::from_le_bytes(read_exact::<4>(&mut r, &display)?) as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u16::from_le_bytes(read_exact::<2>(&mut r, &display)?) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| Error::Format {
            path: display.clone(),
            msg: format!("bad parameter name: {e}"),
        })?;
        let frozen = read_exact::<1>(&mut r, &display)?[0] != 0;
        let n_fixed = u32::from_le_bytes(read_exact::<4>(&mut r, &display)?) as usize;
        let mut fixed_rows = Vec::with_capacity(n_fixed);
        for _ in 0..n_fixed {
            fixed_rows.push(u32::from_le_bytes(read_exact::<4>(&mut r, &display)?) as usize);
        }
        let rank = read_exact::<1>(&mut r, &display)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(read_exact::<4>(&mut r, &display)?) as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f64::from_le_bytes(read_exact::<8>(&mut r, &display)?));
        }
        entries.push((name, frozen, fixed_rows, Tensor::from_vec(shape, data)?));
    }

    // vocabulary size comes from the embedding shapes
    let reserved_rows = entries
        .iter()
        .find(|(n, ..)| n == "emb.reserved")
        .map(|(_, _, _, t)| t.rows());
    let word_rows = entries
        .iter()
        .find(|(n, ..)| n == "emb.words")
        .map(|(_, _, _, t)| t.rows());
    let (Some(reserved_rows), Some(word_rows)) = (reserved_rows, word_rows) else {
        return Err(Error::Format {
            path: display,
            msg: "checkpoint is missing embedding tensors".into(),
        });
    };
    let vocab_size = reserved_rows + word_rows;

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = Model::new(config, vocab_size, fingerprint, &mut rng)?;
    for (name, frozen, fixed_rows, value) in entries {
        let id = model.params.id(&name).ok_or_else(|| Error::Format {
            path: display.clone(),
            msg: format!("checkpoint parameter '{name}' is not part of this architecture"),
        })?;
        let p = model.params.get_mut(id);
        if p.value.shape() != value.shape() {
            return Err(Error::Dim {
                op: "load_model",
                lhs: p.value.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        p.value = value;
        p.grad = Tensor::zeros(p.value.shape().to_vec());
        p.frozen = frozen;
        p.fixed_rows = fixed_rows;
    }
    Ok(model)
}
