//! `PSNET1` checkpoint format: 6-byte ASCII magic `PSNET1`, newline, a
//! one-line JSON manifest (network spec, training seed, optional
//! hyperparameters, tensor names/shapes/roles), newline, then a
//! little-endian float64 payload per tensor in manifest order. Parameters
//! and batch-norm running statistics are both stored.

use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};
use crate::networks::{Network, NetworkSpec};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8] = b"PSNET1\n";

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum TensorRole {
    Param,
    State,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub role: TensorRole,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: NetworkSpec,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hyper: Option<serde_json::Value>,
    pub tensors: Vec<TensorEntry>,
}

pub fn save(network: &Network, seed: u64, hyper: Option<serde_json::Value>, path: &Path) -> Result<()> {
    let mut entries = Vec::new();
    let mut order: Vec<&Tensor> = Vec::new();
    for (name, t) in network.param_tensors() {
        entries.push(TensorEntry { name, shape: t.shape().to_vec(), role: TensorRole::Param });
        order.push(t);
    }
    for (name, t) in network.state_tensors() {
        entries.push(TensorEntry { name, shape: t.shape().to_vec(), role: TensorRole::State });
        order.push(t);
    }
    let manifest = Manifest { spec: network.spec().clone(), seed, hyper, tensors: entries };

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    serde_json::to_writer(&mut w, &manifest)?;
    w.write_all(b"\n")?;
    for t in order {
        let mut buf = Vec::with_capacity(t.len() * 8);
        for &v in t.data() {
            if !v.is_finite() {
                return Err(Error::format("checkpoint: non-finite parameter"));
            }
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(Network, Manifest)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 7];
    r.read_exact(&mut magic).map_err(|_| Error::format("checkpoint: file too short"))?;
    if magic != MAGIC {
        return Err(Error::format("checkpoint: magic mismatch"));
    }
    let mut line = Vec::new();
    r.read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(Error::format("checkpoint: unterminated manifest"));
    }
    let manifest: Manifest =
        serde_json::from_slice(&line).map_err(|e| Error::format(format!("checkpoint: bad manifest: {e}")))?;

    let mut loaded: HashMap<String, Tensor> = HashMap::new();
    for entry in &manifest.tensors {
        let len: usize = entry.shape.iter().product();
        if len > (1 << 30) {
            return Err(Error::format("checkpoint: tensor size overflow"));
        }
        let mut buf = vec![0u8; len * 8];
        r.read_exact(&mut buf)
            .map_err(|_| Error::format(format!("checkpoint: truncated payload at {}", entry.name)))?;
        let data: Vec<f64> = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::format(format!("checkpoint: non-finite value in {}", entry.name)));
        }
        loaded.insert(entry.name.clone(), Tensor::new(&entry.shape, data)?);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::format("checkpoint: trailing bytes after payload"));
    }

    let mut network = Network::new(manifest.spec.clone(), 0)?;
    let mut fill = |slots: Vec<(String, &mut Tensor)>| -> Result<()> {
        for (name, t) in slots {
            let src = loaded
                .remove(&name)
                .ok_or_else(|| Error::format(format!("checkpoint: missing tensor {name}")))?;
            if src.shape() != t.shape() {
                return Err(Error::format(format!(
                    "checkpoint: {name} has shape {:?}, expected {:?}",
                    src.shape(),
                    t.shape()
                )));
            }
            t.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    };
    fill(network.param_tensors_mut())?;
    fill(network.state_tensors_mut())?;
    if !loaded.is_empty() {
        let extra: Vec<String> = loaded.keys().cloned().collect();
        return Err(Error::format(format!("checkpoint: unknown tensors {extra:?}")));
    }
    Ok((network, manifest))
}
