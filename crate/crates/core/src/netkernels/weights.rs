//! Named weight storage, fixture generation and the manifest file format
//! (JSON index + flat little-endian f32 blob).

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::{TwoStreamConfig, TwoStreamModel};
use crate::error::{Error, Result};

/// Named weight blobs with their shapes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightStore {
    entries: BTreeMap<String, (Vec<usize>, Vec<f64>)>,
}

impl WeightStore {
    pub fn new() -> WeightStore {
        WeightStore::default()
    }

    pub fn insert(&mut self, name: String, shape: Vec<usize>, data: Vec<f64>) -> Result<()> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "weight '{name}': {} values for shape {shape:?}",
                data.len()
            )));
        }
        self.entries.insert(name, (shape, data));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&[f64]> {
        self.entries
            .get(name)
            .map(|(_, data)| data.as_slice())
            .ok_or_else(|| Error::Shape(format!("missing weight blob '{name}'")))
    }

    pub fn shape(&self, name: &str) -> Option<&[usize]> {
        self.entries.get(name).map(|(shape, _)| shape.as_slice())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Deterministic fixture weights for a model configuration.
///
/// Real trained weights are out of reach here, so every layer is filled
/// from a seeded generator: weights uniform in +-1/sqrt(fan_in), biases
/// uniform in +-0.05. The same (config, seed) always yields the same store.
pub fn generate_fixture_weights(cfg: &TwoStreamConfig, seed: u64) -> Result<WeightStore> {
    let model = TwoStreamModel::new(*cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = WeightStore::new();
    for (name, shape) in model.weight_layout() {
        let len: usize = shape.iter().product();
        let data = if shape.len() == 1 {
            (0..len).map(|_| rng.random_range(-0.05..0.05)).collect()
        } else {
            let fan_in: usize = shape[1..].iter().product();
            let bound = 1.0 / (fan_in as f64).sqrt();
            (0..len).map(|_| rng.random_range(-bound..bound)).collect()
        };
        store.insert(name, shape, data)?;
    }
    Ok(store)
}

#[derive(Debug, serde::Serialize, serde::Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the blob file.
    offset: u64,
}

/// Write the manifest: `<stem>.json` index plus `<stem>.bin` f32 LE blob.
pub fn save_weights(json_path: &Path, blob_path: &Path, store: &WeightStore) -> Result<()> {
    let mut index = Vec::with_capacity(store.len());
    let mut blob: Vec<u8> = Vec::new();
    for name in store.names() {
        let shape = store.shape(name).expect("name comes from the store").to_vec();
        let data = store.get(name)?;
        index.push(ManifestEntry {
            name: name.to_string(),
            shape,
            offset: blob.len() as u64,
        });
        for &v in data {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let json = serde_json::to_string_pretty(&index)?;
    std::fs::write(json_path, json).map_err(|e| Error::io(json_path, e))?;
    std::fs::write(blob_path, blob).map_err(|e| Error::io(blob_path, e))?;
    Ok(())
}

/// Load a manifest written by [`save_weights`].
pub fn load_weights(json_path: &Path, blob_path: &Path) -> Result<WeightStore> {
    let json = std::fs::read_to_string(json_path).map_err(|e| Error::io(json_path, e))?;
    let index: Vec<ManifestEntry> = serde_json::from_str(&json)?;
    let mut blob = Vec::new();
    std::fs::File::open(blob_path)
        .map_err(|e| Error::io(blob_path, e))?
        .read_to_end(&mut blob)
        .map_err(|e| Error::io(blob_path, e))?;

    let mut store = WeightStore::new();
    for entry in index {
        let len: usize = entry.shape.iter().product();
        let start = entry.offset as usize;
        let end = start + len * 4;
        if end > blob.len() {
            return Err(Error::Format {
                path: blob_path.to_path_buf(),
                line: 0,
                message: format!(
                    "blob too short for '{}': needs {end} bytes, has {}",
                    entry.name,
                    blob.len()
                ),
            });
        }
        let data = blob[start..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        store.insert(entry.name, entry.shape, data)?;
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_generation_is_reproducible() {
        let cfg = TwoStreamConfig::default();
        let a = generate_fixture_weights(&cfg, 42).unwrap();
        let b = generate_fixture_weights(&cfg, 42).unwrap();
        assert_eq!(a, b);
        let c = generate_fixture_weights(&cfg, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn every_layer_has_a_matching_blob() {
        let cfg = TwoStreamConfig::default();
        let model = TwoStreamModel::new(cfg).unwrap();
        let store = generate_fixture_weights(&cfg, 1).unwrap();
        for (name, shape) in model.weight_layout() {
            assert_eq!(store.shape(&name), Some(shape.as_slice()), "{name}");
        }
        assert_eq!(store.len(), model.weight_layout().len());
    }

    #[test]
    fn manifest_round_trips_at_f32_precision() {
        let dir = std::env::temp_dir().join(format!("weights_test_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let json = dir.join("weights.json");
        let blob = dir.join("weights.bin");

        let cfg = TwoStreamConfig {
            base_channels: 2,
            ..TwoStreamConfig::default()
        };
        let store = generate_fixture_weights(&cfg, 5).unwrap();
        save_weights(&json, &blob, &store).unwrap();
        let back = load_weights(&json, &blob).unwrap();

        assert_eq!(back.len(), store.len());
        for name in store.names() {
            let a = store.get(name).unwrap();
            let b = back.get(name).unwrap();
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() <= 1e-7, "{name}: {x} vs {y}");
            }
        }
        std::fs::remove_dir_all(&dir).ok();
    }
}
