//! Checkpoint directory: `config.json`, `manifest.json`, `weights.bin`.
//!
//! `weights.bin` holds every tensor as little-endian `f32`, concatenated in
//! manifest order; each manifest entry records its byte offset.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use xnlu_tensor::{Real, Tensor};

use crate::config::RunConfig;
use crate::corpus::{LabelMaps, Vocab};
use crate::error::{Error, Result};
use crate::model::{Model, ModelSpec};

pub const CHECKPOINT_VERSION: u32 = 1;

pub const CONFIG_FILE: &str = "config.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointConfig {
    pub version: u32,
    pub run: RunConfig,
    pub spec: ModelSpec,
    pub maps: LabelMaps,
    pub vocab: Vocab,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub tensors: Vec<ManifestEntry>,
}

/// A loaded checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: CheckpointConfig,
    pub model: Model<f32>,
}

/// Writes `model` (rounded to `f32`) with everything needed to rebuild it.
pub fn save_checkpoint<T: Real>(
    dir: &Path,
    model: &Model<T>,
    run: &RunConfig,
    maps: &LabelMaps,
    vocab: &Vocab,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let config = CheckpointConfig {
        version: CHECKPOINT_VERSION,
        run: run.clone(),
        spec: model.spec().clone(),
        maps: maps.clone(),
        vocab: vocab.clone(),
    };
    let mut weights = Vec::with_capacity(model.store.num_scalars() * 4);
    let mut tensors = Vec::with_capacity(model.store.len());
    for p in model.store.iter() {
        tensors.push(ManifestEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            offset: weights.len() as u64,
        });
        for &v in p.value.data() {
            weights.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    let manifest = Manifest {
        version: CHECKPOINT_VERSION,
        tensors,
    };
    write(&dir.join(CONFIG_FILE), serde_json::to_string_pretty(&config)?.as_bytes())?;
    write(&dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    write(&dir.join(WEIGHTS_FILE), &weights)
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_json<D: for<'de> Deserialize<'de>>(path: &Path) -> Result<D> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let config: CheckpointConfig = read_json(&dir.join(CONFIG_FILE))?;
    let manifest: Manifest = read_json(&dir.join(MANIFEST_FILE))?;
    for (what, version) in [("config", config.version), ("manifest", manifest.version)] {
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "{what} version {version} is not the supported version {CHECKPOINT_VERSION}"
            )));
        }
    }
    let weights_path = dir.join(WEIGHTS_FILE);
    let bytes = fs::read(&weights_path).map_err(|e| Error::io(&weights_path, e))?;

    let mut model = Model::<f32>::new(config.spec.clone(), 0)?;
    let mut seen = vec![false; model.store.len()];
    for entry in &manifest.tensors {
        let id = model
            .store
            .id(&entry.name)
            .ok_or_else(|| Error::Checkpoint(format!("manifest names unknown tensor `{}`", entry.name)))?;
        let expected = model.store.value(id).shape();
        if expected != entry.shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "tensor `{}` has shape {:?} in the manifest but the model expects {:?}",
                entry.name, entry.shape, expected
            )));
        }
        let count: usize = entry.shape.iter().product();
        let start = usize::try_from(entry.offset).map_err(|_| Error::Checkpoint("offset overflow".into()))?;
        let end = start + count * 4;
        let raw = bytes.get(start..end).ok_or_else(|| {
            Error::Checkpoint(format!(
                "weights file truncated: tensor `{}` needs bytes {start}..{end}, file has {}",
                entry.name,
                bytes.len()
            ))
        })?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        model.store.set_value(id, Tensor::new(entry.shape.clone(), data)?)?;
        seen[id.index()] = true;
    }
    if let Some(missing) = model.store.ids().find(|id| !seen[id.index()]) {
        return Err(Error::Checkpoint(format!(
            "manifest has no entry for tensor `{}`",
            model.store.name(missing)
        )));
    }
    Ok(Checkpoint { config, model })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Example, LabelSet};
    use crate::model::{build_model, ModelConfig, TaskKind};

    fn fixture() -> (Model<f32>, LabelMaps, Vocab) {
        let maps = LabelMaps::new(
            LabelSet::new(["a", "b"]).unwrap(),
            LabelSet::new(["loc"]).unwrap(),
            LabelSet::new(["O", "B-loc"]).unwrap(),
        )
        .unwrap();
        let vocab = Vocab::build(&[Example::from_text("x y z")], false);
        let config = ModelConfig {
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            ffn_dim: 8,
            max_len: 6,
            head_dim: 4,
            init_std: 0.5,
        };
        let model = build_model(TaskKind::JointNlu, &maps, config, vocab.len(), 9).unwrap();
        (model, maps, vocab)
    }

    #[test]
    fn round_trip_is_bitwise() {
        let (model, maps, vocab) = fixture();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &model, &RunConfig::default(), &maps, &vocab).unwrap();
        let back = load_checkpoint(dir.path()).unwrap();
        assert_eq!(back.config.maps, maps);
        assert_eq!(back.config.vocab, vocab);
        for (a, b) in model.store.iter().zip(back.model.store.iter()) {
            assert_eq!(a.name, b.name);
            let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.value), bits(&b.value));
        }
    }

    #[test]
    fn damaged_checkpoints_are_rejected() {
        let (model, maps, vocab) = fixture();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &model, &RunConfig::default(), &maps, &vocab).unwrap();
        let manifest_path = dir.path().join(MANIFEST_FILE);
        let original = fs::read_to_string(&manifest_path).unwrap();

        fs::write(&manifest_path, "{ not json").unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::Checkpoint(_))));

        let mut manifest: Manifest = serde_json::from_str(&original).unwrap();
        let dropped = manifest.tensors.remove(3).name;
        fs::write(&manifest_path, serde_json::to_string(&manifest).unwrap()).unwrap();
        let msg = load_checkpoint(dir.path()).unwrap_err().to_string();
        assert!(msg.contains(&dropped), "{msg}");

        let mut manifest: Manifest = serde_json::from_str(&original).unwrap();
        manifest.version = 99;
        fs::write(&manifest_path, serde_json::to_string(&manifest).unwrap()).unwrap();
        assert!(load_checkpoint(dir.path()).unwrap_err().to_string().contains("version"));

        fs::write(&manifest_path, &original).unwrap();
        let weights = dir.path().join(WEIGHTS_FILE);
        let bytes = fs::read(&weights).unwrap();
        fs::write(&weights, &bytes[..bytes.len() - 2]).unwrap();
        assert!(load_checkpoint(dir.path()).unwrap_err().to_string().contains("truncated"));
    }
}
