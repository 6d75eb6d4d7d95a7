//! Unit-norm embeddings and the `embeds.bin` / `embeds.json` table format.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::blob;
use crate::error::{Error, Result};

pub const EMBEDS_BIN: &str = "embeds.bin";
pub const EMBEDS_JSON: &str = "embeds.json";
pub const TABLE_FORMAT_VERSION: u32 = 1;

/// A point in the shared anchor space; always unit L2 norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Normalizes `values`; fails on non-finite input or a zero vector.
    pub fn normalized(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding contains NaN or infinity".into()));
        }
        let norm = l2(&values);
        if norm == 0.0 {
            return Err(Error::InvalidArgument("cannot normalize a zero vector".into()));
        }
        Ok(Embedding(values.into_iter().map(|v| v / norm).collect()))
    }

    /// Wraps a vector the caller already knows to be unit norm.
    pub(crate) fn from_unit(values: Vec<f64>) -> Self {
        debug_assert!((l2(&values) - 1.0).abs() < 1e-9);
        Embedding(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Cosine similarity; a plain dot product since both sides are unit norm.
    pub fn cosine(&self, other: &Embedding) -> f64 {
        dot(&self.0, &other.0)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Vision,
    Text,
    Audio,
    Touch,
}

impl std::str::FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vision" => Ok(Modality::Vision),
            "text" => Ok(Modality::Text),
            "audio" => Ok(Modality::Audio),
            "touch" => Ok(Modality::Touch),
            other => Err(Error::InvalidArgument(format!("unknown modality {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub key: String,
    pub modality: Modality,
    pub embedding: Embedding,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingTable {
    pub rows: Vec<TableRow>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TableSidecar {
    format_version: u32,
    #[serde(rename = "C")]
    dim: usize,
    count: usize,
    keys: Vec<String>,
    modalities: Vec<Modality>,
}

impl EmbeddingTable {
    pub fn push(&mut self, key: impl Into<String>, modality: Modality, embedding: Embedding) {
        self.rows.push(TableRow {
            key: key.into(),
            modality,
            embedding,
        });
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.rows.first().map(|r| r.embedding.dim())
    }

    pub fn get(&self, key: &str, modality: Modality) -> Option<&Embedding> {
        self.rows
            .iter()
            .find(|r| r.key == key && r.modality == modality)
            .map(|r| &r.embedding)
    }

    fn check_keys(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.rows {
            if !seen.insert((r.key.as_str(), r.modality)) {
                return Err(Error::DuplicateKey(format!("{} ({:?})", r.key, r.modality)));
            }
        }
        Ok(())
    }

    /// Writes `embeds.bin` and `embeds.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        self.check_keys()?;
        let dim = self.dim().unwrap_or(0);
        if let Some(r) = self.rows.iter().find(|r| r.embedding.dim() != dim) {
            return Err(Error::Shape(format!(
                "row {} has dimension {}, table has {dim}",
                r.key,
                r.embedding.dim()
            )));
        }
        blob::ensure_dir(dir)?;
        let data: Vec<f32> = self
            .rows
            .iter()
            .flat_map(|r| r.embedding.as_slice().iter().map(|&v| v as f32))
            .collect();
        blob::write_f32(&dir.join(EMBEDS_BIN), &data)?;
        blob::write_json(
            &dir.join(EMBEDS_JSON),
            &TableSidecar {
                format_version: TABLE_FORMAT_VERSION,
                dim,
                count: self.rows.len(),
                keys: self.rows.iter().map(|r| r.key.clone()).collect(),
                modalities: self.rows.iter().map(|r| r.modality).collect(),
            },
        )
    }
}

/// Loads a table, re-normalizing every row. `expected_dim` is the run's `C`.
pub fn load_embedding_table(dir: &Path, expected_dim: Option<usize>) -> Result<EmbeddingTable> {
    let sidecar: TableSidecar = blob::read_json(&dir.join(EMBEDS_JSON))?;
    if sidecar.format_version != TABLE_FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: sidecar.format_version,
            expected: TABLE_FORMAT_VERSION,
        });
    }
    if let Some(c) = expected_dim {
        if c != sidecar.dim {
            return Err(Error::Shape(format!(
                "table dimension {} does not match configured C = {c}",
                sidecar.dim
            )));
        }
    }
    if sidecar.keys.len() != sidecar.count || sidecar.modalities.len() != sidecar.count {
        return Err(Error::CorruptHeader(format!(
            "sidecar count {} but {} keys and {} modality tags",
            sidecar.count,
            sidecar.keys.len(),
            sidecar.modalities.len()
        )));
    }
    let data = blob::read_f32(&dir.join(EMBEDS_BIN))?;
    if data.len() != sidecar.count * sidecar.dim {
        return Err(Error::Shape(format!(
            "sidecar declares {} x {} floats, blob holds {}",
            sidecar.count,
            sidecar.dim,
            data.len()
        )));
    }
    let mut table = EmbeddingTable::default();
    for (i, (key, modality)) in sidecar.keys.into_iter().zip(sidecar.modalities).enumerate() {
        let row: Vec<f64> = data[i * sidecar.dim..(i + 1) * sidecar.dim]
            .iter()
            .map(|&v| v as f64)
            .collect();
        let embedding = Embedding::normalized(row).map_err(|e| match e {
            Error::NonFinite(_) => Error::NonFinite(format!("row {key}")),
            other => other,
        })?;
        table.push(key, modality, embedding);
    }
    table.check_keys()?;
    Ok(table)
}
