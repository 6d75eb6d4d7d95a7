//! On-disk dataset layout:
//!
//! ```text
//! <root>/manifest.json
//! <root>/datasets/<name>/samples.bin   float32 LE, row-major, channel-last
//! <root>/datasets/<name>/samples.json  ordered per-sample records
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    DatasetManifest, LatentSample, Sample, Split, TactileImage, VisionImage, World,
    DATASET_FORMAT_VERSION,
};
use crate::blob;
use crate::error::{Error, Result};

pub const MANIFEST_JSON: &str = "manifest.json";
pub const SAMPLES_BIN: &str = "samples.bin";
pub const SAMPLES_JSON: &str = "samples.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorRef {
    /// In float32 elements from the start of the blob.
    offset: usize,
    shape: Vec<usize>,
}

impl TensorRef {
    fn len(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Record {
    touch: TensorRef,
    vision: TensorRef,
    #[serde(flatten)]
    latent: LatentSample,
    sensor_id: usize,
    split: Split,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Sidecar {
    format_version: u32,
    dataset: String,
    sensor_id: usize,
    count: usize,
    records: Vec<Record>,
}

pub fn write_dataset(world: &World, dir: &Path) -> Result<()> {
    let manifest = &world.manifest;
    manifest.validate()?;
    if manifest.total_size() != world.samples.len() {
        return Err(Error::Shape(format!(
            "manifest declares {} samples, world holds {}",
            manifest.total_size(),
            world.samples.len()
        )));
    }
    blob::ensure_dir(dir)?;
    for (entry, range) in manifest.datasets.iter().zip(manifest.ranges()) {
        let ddir = dir.join(&entry.path);
        blob::ensure_dir(&ddir)?;
        let mut data = Vec::new();
        let mut records = Vec::with_capacity(entry.size);
        for sample in &world.samples[range] {
            let touch = TensorRef {
                offset: data.len(),
                shape: vec![sample.touch.height, sample.touch.width, 3],
            };
            data.extend_from_slice(&sample.touch.pixels);
            let vision = TensorRef {
                offset: data.len(),
                shape: vec![sample.vision.height, sample.vision.width, 3],
            };
            data.extend_from_slice(&sample.vision.pixels);
            records.push(Record {
                touch,
                vision,
                latent: sample.latent.clone(),
                sensor_id: sample.touch.sensor_id,
                split: sample.split,
            });
        }
        blob::write_f32(&ddir.join(SAMPLES_BIN), &data)?;
        blob::write_json(
            &ddir.join(SAMPLES_JSON),
            &Sidecar {
                format_version: DATASET_FORMAT_VERSION,
                dataset: entry.name.clone(),
                sensor_id: entry.sensor_id,
                count: records.len(),
                records,
            },
        )?;
    }
    blob::write_json(&dir.join(MANIFEST_JSON), manifest)
}

pub fn read_dataset(dir: &Path) -> Result<World> {
    let manifest: DatasetManifest = blob::read_json(&dir.join(MANIFEST_JSON))?;
    manifest.validate()?;
    let mut samples = Vec::with_capacity(manifest.total_size());
    for (n, entry) in manifest.datasets.iter().enumerate() {
        let ddir = dir.join(&entry.path);
        let sidecar: Sidecar = blob::read_json(&ddir.join(SAMPLES_JSON))?;
        if sidecar.format_version != DATASET_FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: sidecar.format_version,
                expected: DATASET_FORMAT_VERSION,
            });
        }
        if sidecar.count != entry.size || sidecar.records.len() != entry.size {
            return Err(Error::CorruptHeader(format!(
                "dataset {}: manifest size {}, sidecar count {}, {} records",
                entry.name,
                entry.size,
                sidecar.count,
                sidecar.records.len()
            )));
        }
        let data = blob::read_f32(&ddir.join(SAMPLES_BIN))?;
        let declared: usize = sidecar
            .records
            .iter()
            .map(|r| r.touch.len() + r.vision.len())
            .sum();
        if declared != data.len() {
            return Err(Error::Shape(format!(
                "dataset {}: sidecar declares {declared} floats, blob holds {}",
                entry.name,
                data.len()
            )));
        }
        for rec in sidecar.records {
            let touch = slice(&data, &rec.touch, manifest.image_size, &entry.name)?;
            let vision = slice(&data, &rec.vision, manifest.image_size, &entry.name)?;
            if rec.sensor_id != entry.sensor_id {
                return Err(Error::CorruptHeader(format!(
                    "dataset {}: record sensor {} differs from dataset sensor {}",
                    entry.name, rec.sensor_id, entry.sensor_id
                )));
            }
            let size = manifest.image_size;
            samples.push(Sample {
                latent: rec.latent,
                vision: VisionImage {
                    height: size,
                    width: size,
                    pixels: vision.to_vec(),
                },
                touch: TactileImage {
                    height: size,
                    width: size,
                    sensor_id: rec.sensor_id,
                    pixels: touch.to_vec(),
                },
                split: rec.split,
                dataset: n,
            });
        }
    }
    Ok(World { manifest, samples })
}

fn slice<'a>(data: &'a [f32], r: &TensorRef, size: usize, name: &str) -> Result<&'a [f32]> {
    if r.shape != [size, size, 3] {
        return Err(Error::Shape(format!(
            "dataset {name}: tensor shape {:?}, expected [{size}, {size}, 3]",
            r.shape
        )));
    }
    data.get(r.offset..r.offset + r.len()).ok_or_else(|| {
        Error::Shape(format!(
            "dataset {name}: tensor at offset {} with {} floats overruns blob of {}",
            r.offset,
            r.len(),
            data.len()
        ))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_world, DatasetSpec, WorldConfig};

    fn world() -> World {
        let cfg = WorldConfig {
            datasets: (0..2)
                .map(|k| DatasetSpec {
                    name: format!("s{k}"),
                    sensor_id: k,
                    size: 5,
                    materials: Vec::new(),
                })
                .collect(),
            ..WorldConfig::default()
        };
        generate_world(&cfg, 7).unwrap()
    }

    #[test]
    fn round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let w = world();
        write_dataset(&w, dir.path()).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(w, back);
    }

    #[test]
    fn truncated_blob_is_a_shape_error() {
        let dir = tempfile::tempdir().unwrap();
        let w = world();
        write_dataset(&w, dir.path()).unwrap();
        let bin = dir.path().join("datasets/s0").join(SAMPLES_BIN);
        let mut data = blob::read_f32(&bin).unwrap();
        data.pop();
        blob::write_f32(&bin, &data).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::Shape(_))));
    }

    #[test]
    fn unknown_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = world();
        write_dataset(&w, dir.path()).unwrap();
        w.manifest.format_version = 99;
        blob::write_json(&dir.path().join(MANIFEST_JSON), &w.manifest).unwrap();
        assert!(matches!(
            read_dataset(dir.path()),
            Err(Error::UnsupportedVersion { found: 99, .. })
        ));
    }

    #[test]
    fn garbage_header_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&world(), dir.path()).unwrap();
        std::fs::write(dir.path().join(MANIFEST_JSON), "{ not json").unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::Json { .. })));
    }
}
