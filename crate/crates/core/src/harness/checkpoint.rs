//! Versioned binary checkpoints.
//!
//! Layout (little-endian): magic `ELCK`, `u32` format version, `u32` length
//! and bytes of a JSON header echoing the configuration, `u32` tensor count,
//! then per tensor a `u32`-length name, `u32` rank, `u64` dimensions and the
//! values as `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Params, Tensor};
use crate::protocol::{TrainingConfig, TrainingState};

const MAGIC: &[u8; 4] = b"ELCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: TrainingConfig,
    pub round: usize,
    pub observation_len: usize,
    pub classes: usize,
}

fn node_prefix(i: usize) -> String {
    format!("node{i}.")
}

fn state_tensors(state: &TrainingState) -> Vec<Tensor> {
    let mut out = Vec::new();
    for (i, node) in state.nodes.iter().enumerate() {
        for t in node.params().tensors() {
            out.push(Tensor {
                name: format!("{}{}", node_prefix(i), t.name),
                shape: t.shape.clone(),
                data: t.data.clone(),
            });
        }
    }
    out.extend(state.cloud.named_tensors());
    out
}

pub fn save_checkpoint(state: &TrainingState, path: &Path) -> Result<()> {
    let header = serde_json::to_vec(&CheckpointHeader {
        config: state.config.clone(),
        round: state.round,
        observation_len: state.observation_len,
        classes: state.classes,
    })?;
    let tensors = state_tensors(state);
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(&header)?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for t in &tensors {
        w.write_all(&(t.name.len() as u32).to_le_bytes())?;
        w.write_all(t.name.as_bytes())?;
        w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
        for &d in &t.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Reader<R: Read> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| Error::Checkpoint(format!("truncated while reading {what}")))?;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.bytes(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.bytes(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

/// Reads the header and every tensor of a checkpoint file.
pub fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, Vec<Tensor>)> {
    let mut r = Reader {
        inner: BufReader::new(File::open(path)?),
    };
    if r.bytes(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let len = r.u32("header length")? as usize;
    let header: CheckpointHeader = serde_json::from_slice(&r.bytes(len, "header")?)?;
    let count = r.u32("tensor count")?;
    let mut tensors = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = r.u32("tensor name length")? as usize;
        let name = String::from_utf8(r.bytes(name_len, "tensor name")?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = r.u32("tensor rank")?;
        let shape = (0..rank)
            .map(|_| r.u64("tensor shape").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.bytes(8 * n, &name)?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        tensors.push(Tensor { name, shape, data });
    }
    let mut rest = Vec::new();
    r.inner.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", rest.len())));
    }
    Ok((header, tensors))
}

fn load_tensors(state: &mut TrainingState, tensors: &[Tensor]) -> Result<()> {
    for (i, node) in state.nodes.iter_mut().enumerate() {
        let prefix = node_prefix(i);
        let mut params: Params = node.params().clone();
        for t in params.tensors_mut() {
            let full = format!("{prefix}{}", t.name);
            let src = tensors
                .iter()
                .find(|x| x.name == full)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {full}")))?;
            if src.shape != t.shape {
                return Err(Error::Checkpoint(format!(
                    "{full}: stored shape {:?}, expected {:?}",
                    src.shape, t.shape
                )));
            }
            t.data.clone_from(&src.data);
        }
        node.set_params(params)?;
    }
    state.cloud.load_named(tensors)
}

/// Rebuilds the state stored in a checkpoint.
pub fn load_checkpoint(path: &Path) -> Result<TrainingState> {
    let (header, tensors) = read_checkpoint(path)?;
    let mut state = TrainingState::new(header.config, header.observation_len, header.classes)?;
    load_tensors(&mut state, &tensors)?;
    state.round = header.round;
    Ok(state)
}

/// Loads parameters into an existing state whose configuration must match
/// the stored one in every field that affects parameter shapes.
pub fn load_checkpoint_into(state: &mut TrainingState, path: &Path) -> Result<()> {
    let (header, tensors) = read_checkpoint(path)?;
    let (a, b) = (&state.config, &header.config);
    let mismatches: Vec<&str> = [
        ("nodes", a.nodes != b.nodes),
        ("message_len", a.message_len != b.message_len),
        ("encoder_hidden", a.encoder_hidden != b.encoder_hidden),
        ("architecture", a.architecture != b.architecture),
        ("branches", a.branches != b.branches),
        ("latent", a.latent != b.latent),
        ("cloud_hidden", a.cloud_hidden != b.cloud_hidden),
        ("cqie", a.cqie != b.cqie),
        (
            "observation_len",
            state.observation_len != header.observation_len,
        ),
        ("classes", state.classes != header.classes),
    ]
    .into_iter()
    .filter_map(|(name, differs)| differs.then_some(name))
    .collect();
    if !mismatches.is_empty() {
        return Err(Error::Checkpoint(format!(
            "configuration mismatch in {}",
            mismatches.join(", ")
        )));
    }
    let mut staged = state.clone();
    load_tensors(&mut staged, &tensors)?;
    staged.round = header.round;
    *state = staged;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(nodes: usize) -> TrainingState {
        let config = TrainingConfig {
            nodes,
            branches: 2,
            latent: 4,
            cloud_hidden: 5,
            encoder_hidden: vec![6],
            message_len: 4,
            seed: 9,
            ..TrainingConfig::default()
        };
        TrainingState::new(config, 9, 3).unwrap()
    }

    #[test]
    fn roundtrip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        let s = state(2);
        save_checkpoint(&s, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        for (a, b) in s.nodes.iter().zip(&back.nodes) {
            let bits = |p: &Params| p.iter_values().map(f64::to_bits).collect::<Vec<_>>();
            assert_eq!(bits(a.params()), bits(b.params()));
        }
        assert_eq!(s.cloud.params(), back.cloud.params());
    }

    #[test]
    fn version_mismatch_names_both() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        save_checkpoint(&state(1), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4..8].copy_from_slice(&7u32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('7') && msg.contains('1'), "{msg}");
    }

    #[test]
    fn truncated_and_mismatched_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        save_checkpoint(&state(2), &path).unwrap();
        let mut other = state(3);
        assert!(matches!(
            load_checkpoint_into(&mut other, &path),
            Err(Error::Checkpoint(_))
        ));
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
    }
}
