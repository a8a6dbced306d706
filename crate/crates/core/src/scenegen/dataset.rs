use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{read_ply, write_ply};
use crate::scenegen::{generate_scene, make_training_pair, PairRecord, SceneSpec, TrainingPair};
use crate::seed::derive_indexed;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub root_seed: u64,
    pub scene: SceneSpec,
    pub n_cond: usize,
    pub rate: usize,
    pub pairs: Vec<PairRecord>,
}

/// `scenes` pairs; scene `i` uses a seed derived from `root_seed` and `i`.
pub fn synthesize(template: &SceneSpec, scenes: usize, n_cond: usize, rate: usize, root_seed: u64) -> Result<Vec<TrainingPair>> {
    (0..scenes as u64)
        .map(|i| {
            let seed = derive_indexed(root_seed, "scene", i);
            let dense = generate_scene(&SceneSpec { seed, ..template.clone() })?;
            make_training_pair(&dense, n_cond, rate, seed)
        })
        .collect()
}

pub fn write_dataset(dir: &Path, template: &SceneSpec, pairs: &[TrainingPair], root_seed: u64) -> Result<DatasetManifest> {
    let first = pairs.first().ok_or_else(|| Error::InvalidArgument("dataset is empty".into()))?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut records = Vec::with_capacity(pairs.len());
    for (i, pair) in pairs.iter().enumerate() {
        let rec = PairRecord {
            scene_seed: pair.scene_seed(),
            condition: format!("scene_{i:04}_condition.ply"),
            input: format!("scene_{i:04}_input.ply"),
        };
        write_ply(pair.condition(), dir.join(&rec.condition))?;
        write_ply(pair.input(), dir.join(&rec.input))?;
        records.push(rec);
    }
    let manifest = DatasetManifest {
        root_seed,
        scene: template.clone(),
        n_cond: first.condition().len(),
        rate: first.rate(),
        pairs: records,
    };
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<TrainingPair>)> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)?;
    let pairs = manifest
        .pairs
        .iter()
        .map(|r| {
            TrainingPair::new(
                read_ply(dir.join(&r.condition))?,
                read_ply(dir.join(&r.input))?,
                manifest.rate,
                r.scene_seed,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, pairs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SceneSpec { density: 4.0, ..SceneSpec::default() };
        let pairs = synthesize(&spec, 2, 64, 3, 7).unwrap();
        assert_ne!(pairs[0].scene_seed(), pairs[1].scene_seed());
        let m = write_dataset(dir.path(), &spec, &pairs, 7).unwrap();
        let (m2, back) = read_dataset(dir.path()).unwrap();
        assert_eq!(m, m2);
        assert_eq!(back, pairs);
    }

    #[test]
    fn missing_manifest_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::Io { .. })));
    }
}
