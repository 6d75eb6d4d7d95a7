//! `checkpoint.json` header + `weights.bin` named float32 tensors.

use std::io::Write;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{AdamHyper, AdamW};
use super::{EpochRecord, FinalMetrics, TrainConfig};
use crate::anchor::{AnchorConfig, AnchorSpace};
use crate::blob;
use crate::datagen::{DatasetManifest, DATASET_FORMAT_VERSION};
use crate::encoder::{EncoderConfig, EncoderParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
pub const CHECKPOINT_JSON: &str = "checkpoint.json";
pub const WEIGHTS_BIN: &str = "weights.bin";
pub const METRICS_JSONL: &str = "metrics.jsonl";

/// Enough of a dataset's identity to refuse evaluating on an incompatible one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRef {
    pub format_version: u32,
    pub seed: u64,
    #[serde(rename = "M")]
    pub num_classes: usize,
    #[serde(rename = "K")]
    pub num_sensors: usize,
    pub image_size: usize,
    pub total_size: usize,
}

impl DatasetRef {
    pub fn of(m: &DatasetManifest) -> Self {
        Self {
            format_version: m.format_version,
            seed: m.seed,
            num_classes: m.num_classes,
            num_sensors: m.num_sensors,
            image_size: m.image_size,
            total_size: m.total_size(),
        }
    }

    /// Class count, sensor count, image size and format must agree.
    pub fn check(&self, m: &DatasetManifest) -> Result<()> {
        if m.format_version != DATASET_FORMAT_VERSION || self.format_version != m.format_version {
            return Err(Error::Mismatch(format!(
                "dataset format version {} but checkpoint expects {}",
                m.format_version, self.format_version
            )));
        }
        let pairs = [
            ("M", self.num_classes, m.num_classes),
            ("K", self.num_sensors, m.num_sensors),
            ("image_size", self.image_size, m.image_size),
        ];
        for (name, want, got) in pairs {
            if want != got {
                return Err(Error::Mismatch(format!("{name} is {got}, checkpoint expects {want}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerHeader {
    pub kind: String,
    #[serde(flatten)]
    pub hyper: AdamHyper,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset in float elements into `weights.bin`.
    offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    encoder: EncoderConfig,
    train: TrainConfig,
    anchor: AnchorConfig,
    anchor_fingerprint: u64,
    dataset: DatasetRef,
    step: usize,
    total_steps: usize,
    optimizer: Option<OptimizerHeader>,
    rng: RngState,
    prototypes: Vec<[f64; 3]>,
    history: Vec<EpochRecord>,
    final_metrics: Option<FinalMetrics>,
    tensors: Vec<TensorEntry>,
}

/// A trained (or in-progress) run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub anchor: AnchorConfig,
    pub anchor_fingerprint: u64,
    pub dataset: DatasetRef,
    pub step: usize,
    pub total_steps: usize,
    pub params: EncoderParams<f32>,
    pub optimizer: Option<AdamW>,
    pub rng: RngState,
    pub history: Vec<EpochRecord>,
    pub final_metrics: Option<FinalMetrics>,
}

impl Checkpoint {
    pub fn prototypes(&self) -> &[[f64; 3]] {
        &self.params.sensors.prototypes
    }

    /// Rebuilds the frozen anchor space and checks it is the one trained on.
    pub fn anchor_space(&self) -> Result<AnchorSpace> {
        let space = AnchorSpace::new(self.anchor.clone())?;
        if space.fingerprint() != self.anchor_fingerprint {
            return Err(Error::Mismatch("anchor space fingerprint differs from training".into()));
        }
        Ok(space)
    }

    /// Writes `checkpoint.json`, `weights.bin` and `metrics.jsonl`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        blob::ensure_dir(dir)?;
        let mut values: Vec<f32> = Vec::with_capacity(self.params.num_values() * 3);
        let mut tensors = Vec::new();
        let mut push = |prefix: &str, p: &EncoderParams<f32>, values: &mut Vec<f32>| {
            for ((name, t), shape) in p.tensors().into_iter().zip(p.shapes()) {
                tensors.push(TensorEntry {
                    name: format!("{prefix}{name}"),
                    shape,
                    offset: values.len(),
                });
                values.extend_from_slice(t);
            }
        };
        push("", &self.params, &mut values);
        if let Some(opt) = &self.optimizer {
            push("adam.m.", &opt.first, &mut values);
            push("adam.v.", &opt.second, &mut values);
        }
        let header = Header {
            format_version: CHECKPOINT_FORMAT_VERSION,
            encoder: self.encoder,
            train: self.train.clone(),
            anchor: self.anchor.clone(),
            anchor_fingerprint: self.anchor_fingerprint,
            dataset: self.dataset.clone(),
            step: self.step,
            total_steps: self.total_steps,
            optimizer: self.optimizer.as_ref().map(|o| OptimizerHeader {
                kind: "adamw".into(),
                hyper: o.hyper,
                step: o.step,
            }),
            rng: self.rng.clone(),
            prototypes: self.params.sensors.prototypes.clone(),
            history: self.history.clone(),
            final_metrics: self.final_metrics,
            tensors,
        };
        blob::write_f32(&dir.join(WEIGHTS_BIN), &values)?;
        blob::write_json(&dir.join(CHECKPOINT_JSON), &header)?;
        write_metrics(&dir.join(METRICS_JSONL), &self.history)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let header: Header = blob::read_json(&dir.join(CHECKPOINT_JSON))?;
        if header.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: header.format_version,
                expected: CHECKPOINT_FORMAT_VERSION,
            });
        }
        header.encoder.validate()?;
        let values = blob::read_f32(&dir.join(WEIGHTS_BIN))?;
        let mut entries = header.tensors.iter();
        let mut fill = |prefix: &str| -> Result<EncoderParams<f32>> {
            let mut p = EncoderParams::<f32>::init(&header.encoder, 0)?;
            let shapes = p.shapes();
            for ((name, dst), shape) in p.tensors_mut().into_iter().zip(shapes) {
                let want = format!("{prefix}{name}");
                let e = entries
                    .next()
                    .ok_or_else(|| Error::CorruptHeader(format!("missing tensor {want}")))?;
                if e.name != want {
                    return Err(Error::CorruptHeader(format!("expected tensor {want}, found {}", e.name)));
                }
                if e.shape != shape {
                    return Err(Error::Shape(format!("{want}: header {:?}, config {:?}", e.shape, shape)));
                }
                let end = e.offset + dst.len();
                if end > values.len() {
                    return Err(Error::Shape(format!(
                        "{want} ends at {end} but {WEIGHTS_BIN} holds {} floats",
                        values.len()
                    )));
                }
                dst.copy_from_slice(&values[e.offset..end]);
            }
            Ok(p)
        };
        let mut params = fill("")?;
        let optimizer = match &header.optimizer {
            Some(h) => Some(AdamW {
                hyper: h.hyper,
                step: h.step,
                first: fill("adam.m.")?,
                second: fill("adam.v.")?,
            }),
            None => None,
        };
        if entries.next().is_some() {
            return Err(Error::CorruptHeader("unexpected extra tensors".into()));
        }
        let expected: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
        if expected != values.len() {
            return Err(Error::Shape(format!(
                "header declares {expected} floats, {WEIGHTS_BIN} holds {}",
                values.len()
            )));
        }
        if !params.is_finite() {
            return Err(Error::NonFinite("checkpoint weights".into()));
        }
        if header.prototypes.len() != header.encoder.num_sensors && !header.prototypes.is_empty() {
            return Err(Error::CorruptHeader("prototype count differs from K".into()));
        }
        params.sensors.prototypes = header.prototypes;
        Ok(Self {
            encoder: header.encoder,
            train: header.train,
            anchor: header.anchor,
            anchor_fingerprint: header.anchor_fingerprint,
            dataset: header.dataset,
            step: header.step,
            total_steps: header.total_steps,
            params,
            optimizer,
            rng: header.rng,
            history: header.history,
            final_metrics: header.final_metrics,
        })
    }
}

/// Newline-delimited `{step, epoch, loss, lr}` records.
pub fn write_metrics(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut out = Vec::new();
    for r in history {
        serde_json::to_writer(&mut out, r).expect("plain record serializes");
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}
