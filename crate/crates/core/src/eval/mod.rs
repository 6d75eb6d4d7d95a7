//! Evaluation protocols over trained checkpoints: zero-shot material and
//! grasp prediction, linear probing, cross-modal retrieval, ablation grids.

mod ablation;
mod metrics;

use serde::{Deserialize, Serialize};

use crate::anchor::AnchorSpace;
use crate::datagen::{Split, World};
use crate::embedding::{Embedding, EmbeddingTable, Modality};
use crate::encoder::{encode_batch, resolve_sensor};
use crate::error::{Error, Result};
use crate::prompts::{GraspLabel, PromptTemplateRegistry};
use crate::trainer::Checkpoint;

pub use ablation::{grid_cells, run_ablation_grid, AblationReport, CellResult, GridCell, GridOptions};
pub use metrics::{
    argmax, average_precision, class_prompts, cross_modal_retrieval, grasp_prompts, linear_probe, median,
    rank_gallery, score_prompts, zero_shot_classify, zero_shot_grasp, LinearClassifier, ProbeConfig, ProbeReport,
    RetrievalReport, RetrievalTask,
};

/// Batch size used when embedding a split.
const EMBED_CHUNK: usize = 64;

/// Touch embeddings of one split plus the labels needed by every metric.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedSplit {
    pub split: Split,
    pub indices: Vec<usize>,
    pub embeddings: Vec<Embedding>,
    pub materials: Vec<usize>,
    pub grasp_stable: Vec<bool>,
    pub object_ids: Vec<usize>,
}

pub fn sample_key(index: usize) -> String {
    format!("sample/{index}")
}

impl EmbeddedSplit {
    fn labelled(world: &World, split: Split, indices: Vec<usize>, embeddings: Vec<Embedding>) -> Self {
        let latent = |i: usize| &world.samples[i].latent;
        Self {
            split,
            materials: indices.iter().map(|&i| latent(i).material_class).collect(),
            grasp_stable: indices.iter().map(|&i| latent(i).grasp_stable).collect(),
            object_ids: indices.iter().map(|&i| latent(i).object_id).collect(),
            indices,
            embeddings,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Touch rows keyed by sample index.
    pub fn to_table(&self) -> EmbeddingTable {
        let mut t = EmbeddingTable::default();
        for (&i, e) in self.indices.iter().zip(&self.embeddings) {
            t.push(sample_key(i), Modality::Touch, e.clone());
        }
        t
    }

    /// Rebuilds a split from exported touch rows; labels come from `world`.
    pub fn from_table(table: &EmbeddingTable, world: &World, split: Split) -> Result<Self> {
        let indices = world.indices_in(split);
        let embeddings = indices
            .iter()
            .map(|&i| {
                table
                    .get(&sample_key(i), Modality::Touch)
                    .cloned()
                    .ok_or_else(|| Error::Mismatch(format!("table has no touch row for {}", sample_key(i))))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::labelled(world, split, indices, embeddings))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub accuracy: f64,
    pub correct: usize,
    pub count: usize,
}

impl AccuracyReport {
    fn from_hits(hits: impl IntoIterator<Item = bool>) -> Result<Self> {
        let (mut correct, mut count) = (0, 0);
        for h in hits {
            correct += h as usize;
            count += 1;
        }
        if count == 0 {
            return Err(Error::Empty("nothing to evaluate".into()));
        }
        Ok(Self {
            accuracy: correct as f64 / count as f64,
            correct,
            count,
        })
    }
}

/// A frozen checkpoint bound to a dataset.
pub struct Evaluator<'a> {
    ckpt: &'a Checkpoint,
    world: &'a World,
    anchor: AnchorSpace,
    registry: PromptTemplateRegistry,
}

impl<'a> Evaluator<'a> {
    pub fn new(ckpt: &'a Checkpoint, world: &'a World) -> Result<Self> {
        ckpt.dataset.check(&world.manifest)?;
        if ckpt.prototypes().len() != ckpt.encoder.num_sensors {
            return Err(Error::Mismatch("checkpoint has no sensor prototypes".into()));
        }
        Ok(Self {
            anchor: ckpt.anchor_space()?,
            ckpt,
            world,
            registry: PromptTemplateRegistry::default(),
        })
    }

    pub fn anchor(&self) -> &AnchorSpace {
        &self.anchor
    }

    pub fn registry(&self) -> &PromptTemplateRegistry {
        &self.registry
    }

    /// Sensor for each sample as resolved from pixel prototypes.
    pub fn resolve(&self, indices: &[usize]) -> Result<Vec<usize>> {
        indices
            .iter()
            .map(|&i| resolve_sensor(&self.world.samples[i].touch, self.ckpt.prototypes()))
            .collect()
    }

    pub fn embed_split(&self, split: Split) -> Result<EmbeddedSplit> {
        let indices = self.world.indices_in(split);
        if indices.is_empty() {
            return Err(Error::Empty(format!("{split:?} split is empty")));
        }
        let sensors = self.resolve(&indices)?;
        let mut embeddings = Vec::with_capacity(indices.len());
        for (chunk, s) in indices.chunks(EMBED_CHUNK).zip(sensors.chunks(EMBED_CHUNK)) {
            let images: Vec<&[f32]> = chunk.iter().map(|&i| self.world.samples[i].touch.pixels.as_slice()).collect();
            embeddings.extend(encode_batch(&self.ckpt.params, &self.ckpt.encoder, &images, s)?);
        }
        Ok(EmbeddedSplit::labelled(self.world, split, indices, embeddings))
    }

    pub fn zero_shot(&self, split: &EmbeddedSplit, template: &str) -> Result<AccuracyReport> {
        let prompts = class_prompts(self.anchor.class_names(), template, &self.registry, &self.anchor)?;
        AccuracyReport::from_hits(
            split
                .embeddings
                .iter()
                .zip(&split.materials)
                .map(|(e, &m)| score_prompts(e, &prompts).0 == m),
        )
    }

    pub fn grasp(&self, split: &EmbeddedSplit) -> Result<AccuracyReport> {
        let prompts = grasp_prompts(&self.registry, &self.anchor);
        AccuracyReport::from_hits(split.embeddings.iter().zip(&split.grasp_stable).map(|(e, &stable)| {
            score_prompts(e, &prompts).0 == GraspLabel::from_stable(stable).index()
        }))
    }

    /// Touch queries against one modality. Vision and audio galleries hold
    /// each sample's paired anchor embedding and match by object; the text
    /// gallery holds one prompt per class and matches by material.
    pub fn retrieval(&self, split: &EmbeddedSplit, modality: Modality, template: &str) -> Result<RetrievalReport> {
        let latents = split.indices.iter().map(|&i| &self.world.samples[i].latent);
        let task = match modality {
            Modality::Vision | Modality::Audio => RetrievalTask {
                queries: split.embeddings.clone(),
                query_labels: split.object_ids.clone(),
                gallery: latents
                    .map(|l| match modality {
                        Modality::Vision => self.anchor.anchor_vision(l),
                        _ => self.anchor.anchor_audio(l),
                    })
                    .collect::<Result<Vec<_>>>()?,
                gallery_labels: split.object_ids.clone(),
            },
            Modality::Text => RetrievalTask {
                queries: split.embeddings.clone(),
                query_labels: split.materials.clone(),
                gallery: class_prompts(self.anchor.class_names(), template, &self.registry, &self.anchor)?,
                gallery_labels: (0..self.anchor.num_classes()).collect(),
            },
            Modality::Touch => {
                return Err(Error::InvalidArgument("retrieval gallery must be vision, text or audio".into()))
            }
        };
        cross_modal_retrieval(&task)
    }
}

/// Linear probe trained on one embedded split and scored on another, by
/// material class.
pub fn probe(train: &EmbeddedSplit, test: &EmbeddedSplit, config: &ProbeConfig) -> Result<ProbeReport> {
    linear_probe(&train.embeddings, &train.materials, &test.embeddings, &test.materials, config)
}
