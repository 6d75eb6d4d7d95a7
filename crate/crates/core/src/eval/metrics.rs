//! Checkpoint-free evaluation primitives.

use serde::{Deserialize, Serialize};

use crate::anchor::AnchorSpace;
use crate::embedding::{dot, Embedding};
use crate::error::{Error, Result};
use crate::prompts::{GraspLabel, PromptTemplateRegistry};

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Prompt embeddings for every class under one template.
pub fn class_prompts(
    class_names: &[String],
    template: &str,
    registry: &PromptTemplateRegistry,
    anchor: &AnchorSpace,
) -> Result<Vec<Embedding>> {
    if class_names.len() < 2 {
        return Err(Error::InvalidArgument("zero-shot classification needs at least 2 classes".into()));
    }
    if !registry.contains(template) {
        return Err(Error::UnknownTemplate(template.to_string()));
    }
    class_names
        .iter()
        .map(|c| anchor.anchor_text(&registry.fill(template, c)?, registry))
        .collect()
}

/// Cosine of `query` against each prompt, and the argmax.
pub fn score_prompts(query: &Embedding, prompts: &[Embedding]) -> (usize, Vec<f64>) {
    let scores: Vec<f64> = prompts.iter().map(|p| query.cosine(p)).collect();
    (argmax(&scores), scores)
}

pub fn zero_shot_classify(
    touch: &Embedding,
    class_names: &[String],
    template: &str,
    registry: &PromptTemplateRegistry,
    anchor: &AnchorSpace,
) -> Result<(usize, Vec<f64>)> {
    let prompts = class_prompts(class_names, template, registry, anchor)?;
    Ok(score_prompts(touch, &prompts))
}

pub fn grasp_prompts(registry: &PromptTemplateRegistry, anchor: &AnchorSpace) -> [Embedding; 2] {
    [
        anchor.grasp_text(GraspLabel::Stable, registry),
        anchor.grasp_text(GraspLabel::Slip, registry),
    ]
}

pub fn zero_shot_grasp(touch: &Embedding, registry: &PromptTemplateRegistry, anchor: &AnchorSpace) -> GraspLabel {
    let (i, _) = score_prompts(touch, &grasp_prompts(registry, anchor));
    if i == 0 {
        GraspLabel::Stable
    } else {
        GraspLabel::Slip
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            learning_rate: 0.1,
            l2: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub accuracy: f64,
    pub train_accuracy: f64,
    pub test_count: usize,
    /// Test classes never seen in training; their samples count as errors.
    pub unseen_classes: Vec<usize>,
    pub unseen_errors: usize,
}

/// Multinomial logistic regression (weights + bias) trained by full-batch
/// gradient descent on frozen features.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

impl LinearClassifier {
    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.weights.iter().zip(&self.bias).map(|(w, b)| dot(w, x) + b).collect()
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.logits(x))
    }

    pub fn fit(features: &[&[f64]], labels: &[usize], num_classes: usize, config: &ProbeConfig) -> Self {
        let dim = features.first().map_or(0, |f| f.len());
        let mut model = Self {
            weights: vec![vec![0.0; dim]; num_classes],
            bias: vec![0.0; num_classes],
        };
        let n = features.len() as f64;
        for _ in 0..config.iterations {
            let mut gw = vec![vec![0.0; dim]; num_classes];
            let mut gb = vec![0.0; num_classes];
            for (x, &y) in features.iter().zip(labels) {
                let logits = model.logits(x);
                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
                let z: f64 = exp.iter().sum();
                for k in 0..num_classes {
                    let d = exp[k] / z - if k == y { 1.0 } else { 0.0 };
                    gb[k] += d;
                    for (g, xi) in gw[k].iter_mut().zip(x.iter()) {
                        *g += d * xi;
                    }
                }
            }
            for k in 0..num_classes {
                model.bias[k] -= config.learning_rate * gb[k] / n;
                for (w, g) in model.weights[k].iter_mut().zip(&gw[k]) {
                    *w -= config.learning_rate * (g / n + config.l2 * *w);
                }
            }
        }
        model
    }
}

pub fn linear_probe(
    train: &[Embedding],
    train_labels: &[usize],
    test: &[Embedding],
    test_labels: &[usize],
    config: &ProbeConfig,
) -> Result<ProbeReport> {
    if train.len() != train_labels.len() || test.len() != test_labels.len() {
        return Err(Error::Shape("embedding and label counts differ".into()));
    }
    if test.is_empty() {
        return Err(Error::Empty("no test embeddings".into()));
    }
    let seen: std::collections::BTreeSet<usize> = train_labels.iter().copied().collect();
    if seen.len() < 2 {
        return Err(Error::InvalidArgument("linear probe needs at least 2 training classes".into()));
    }
    let num_classes = train_labels.iter().chain(test_labels).max().map_or(0, |m| m + 1);
    let xs: Vec<&[f64]> = train.iter().map(Embedding::as_slice).collect();
    let model = LinearClassifier::fit(&xs, train_labels, num_classes, config);

    let mut unseen_classes: Vec<usize> = test_labels.iter().filter(|c| !seen.contains(c)).copied().collect();
    unseen_classes.sort_unstable();
    unseen_classes.dedup();
    let mut correct = 0;
    let mut unseen_errors = 0;
    for (x, &y) in test.iter().zip(test_labels) {
        if !seen.contains(&y) {
            unseen_errors += 1;
        } else if model.predict(x.as_slice()) == y {
            correct += 1;
        }
    }
    let train_correct = xs.iter().zip(train_labels).filter(|(x, &y)| model.predict(x) == y).count();
    if !unseen_classes.is_empty() {
        log::warn!("probe test classes {unseen_classes:?} are absent from training");
    }
    Ok(ProbeReport {
        accuracy: correct as f64 / test.len() as f64,
        train_accuracy: train_correct as f64 / train.len().max(1) as f64,
        test_count: test.len(),
        unseen_classes,
        unseen_errors,
    })
}

/// Mean precision at each relevant rank; `None` without positives.
pub fn average_precision(ranked_relevance: &[bool]) -> Option<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &rel) in ranked_relevance.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

/// Queries and a single-modality gallery, matched by label (object id).
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalTask {
    pub queries: Vec<Embedding>,
    pub query_labels: Vec<usize>,
    pub gallery: Vec<Embedding>,
    pub gallery_labels: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    #[serde(rename = "mAP")]
    pub map: f64,
    pub queries: usize,
    pub queries_evaluated: usize,
    pub queries_without_positives: usize,
}

/// Gallery indices by descending cosine, ties by index.
pub fn rank_gallery(query: &Embedding, gallery: &[Embedding]) -> Vec<usize> {
    let scores: Vec<f64> = gallery.iter().map(|g| query.cosine(g)).collect();
    let mut order: Vec<usize> = (0..gallery.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

pub fn cross_modal_retrieval(task: &RetrievalTask) -> Result<RetrievalReport> {
    if task.gallery.is_empty() {
        return Err(Error::Empty("retrieval gallery is empty".into()));
    }
    if task.queries.len() != task.query_labels.len() || task.gallery.len() != task.gallery_labels.len() {
        return Err(Error::Shape("embedding and label counts differ".into()));
    }
    let mut sum = 0.0;
    let mut evaluated = 0;
    for (q, &label) in task.queries.iter().zip(&task.query_labels) {
        let relevance: Vec<bool> = rank_gallery(q, &task.gallery)
            .into_iter()
            .map(|g| task.gallery_labels[g] == label)
            .collect();
        if let Some(ap) = average_precision(&relevance) {
            sum += ap;
            evaluated += 1;
        }
    }
    let skipped = task.queries.len() - evaluated;
    if skipped > 0 {
        log::warn!("{skipped} retrieval queries have no positives and are excluded");
    }
    Ok(RetrievalReport {
        map: if evaluated == 0 { 0.0 } else { sum / evaluated as f64 },
        queries: task.queries.len(),
        queries_evaluated: evaluated,
        queries_without_positives: skipped,
    })
}

/// Median; mean of the middle pair for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}
