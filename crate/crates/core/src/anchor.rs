//! The frozen anchor space that touch embeddings are aligned into.
//!
//! An analytic construction: near-orthogonal class, grasp and audio
//! prototypes plus a nuisance subspace that carries per-contact variation.
//! Vision, text and audio "encoders" are closed-form maps into this space.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::blob;
use crate::datagen::LatentSample;
use crate::embedding::{dot, load_embedding_table, Embedding, EmbeddingTable, Modality};
use crate::error::{Error, Result};
use crate::prompts::{is_haptic, GraspLabel, ParsedPrompt, PromptTemplateRegistry};

pub const ANCHOR_JSON: &str = "anchor.json";
pub const ANCHOR_FORMAT_VERSION: u32 = 1;

pub const HAPTIC_OFFSET: f64 = 0.05;
pub const VISUAL_OFFSET: f64 = 0.15;
/// Largest cosine allowed between two prototypes of the same family.
pub const MAX_PROTOTYPE_COSINE: f64 = 0.1;

const DEFAULT_CLASS_NAMES: [&str; 8] = [
    "wood", "metal", "plastic", "fabric", "glass", "stone", "rubber", "paper",
];

// Log-frequency radial features.
const FREQ_CENTERS: [f64; 6] = [0.2, 0.54, 0.88, 1.22, 1.56, 1.9];
const FREQ_WIDTH: f64 = 0.34;
const FREQ_WEIGHT: f64 = 1.0;
const DEPTH_WEIGHT: f64 = 0.4;
const CENTER_WEIGHT: f64 = 0.4;
const GRASP_WEIGHT: f64 = 0.8;
const SCENE_WEIGHT: f64 = 1.0;
/// Share of the class axis in an audio prototype; the rest is audio specific.
const AUDIO_CLASS_SHARE: f64 = 0.8;

const NUISANCE_DIMS: usize = FREQ_CENTERS.len() + 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorConfig {
    #[serde(rename = "C")]
    pub dim: usize,
    /// Mixing weight of per-contact variation, in [0, 1).
    pub beta: f64,
    pub seed: u64,
    pub class_names: Vec<String>,
}

impl AnchorConfig {
    pub fn new(num_classes: usize, seed: u64) -> Self {
        Self {
            dim: 32,
            beta: 0.3,
            seed,
            class_names: default_class_names(num_classes),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Smallest `C` that fits every prototype family orthogonally.
    pub fn min_dim(num_classes: usize) -> usize {
        2 * num_classes + 2 + NUISANCE_DIMS
    }
}

pub fn default_class_names(m: usize) -> Vec<String> {
    (0..m)
        .map(|i| match DEFAULT_CLASS_NAMES.get(i) {
            Some(n) => n.to_string(),
            None => format!("material{i}"),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSpace {
    config: AnchorConfig,
    class_prototypes: Vec<Vec<f64>>,
    grasp_prototypes: [Vec<f64>; 2],
    audio_prototypes: Vec<Vec<f64>>,
    nuisance_basis: Vec<Vec<f64>>,
    /// Orthogonal remix of nuisance features used by the audio map.
    audio_mixing: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct AnchorHeader {
    format_version: u32,
    #[serde(rename = "M")]
    num_classes: usize,
    #[serde(flatten)]
    config: AnchorConfig,
}

impl AnchorSpace {
    pub fn new(config: AnchorConfig) -> Result<Self> {
        let m = config.num_classes();
        if m < 2 {
            return Err(Error::Config("anchor needs at least 2 classes".into()));
        }
        if !(0.0..1.0).contains(&config.beta) {
            return Err(Error::Config(format!("beta {} outside [0, 1)", config.beta)));
        }
        if config.dim < AnchorConfig::min_dim(m) {
            return Err(Error::Config(format!(
                "C = {} too small for {m} classes (need >= {})",
                config.dim,
                AnchorConfig::min_dim(m)
            )));
        }
        let mut sorted = config.class_names.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != m {
            return Err(Error::Config("class names must be unique".into()));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let count = AnchorConfig::min_dim(m);
        let axes = orthonormal_set(count, config.dim, &mut rng);
        let mut it = axes.into_iter();
        let class_prototypes: Vec<_> = it.by_ref().take(m).collect();
        let grasp_prototypes = [it.next().unwrap(), it.next().unwrap()];
        let audio_axes: Vec<_> = it.by_ref().take(m).collect();
        let nuisance_basis: Vec<_> = it.collect();
        let audio_share = (1.0 - AUDIO_CLASS_SHARE * AUDIO_CLASS_SHARE).sqrt();
        let audio_prototypes = class_prototypes
            .iter()
            .zip(&audio_axes)
            .map(|(c, a)| {
                c.iter()
                    .zip(a)
                    .map(|(x, y)| AUDIO_CLASS_SHARE * x + audio_share * y)
                    .collect()
            })
            .collect();
        let audio_mixing = orthonormal_set(NUISANCE_DIMS, NUISANCE_DIMS, &mut rng);

        let space = Self {
            config,
            class_prototypes,
            grasp_prototypes,
            audio_prototypes,
            nuisance_basis,
            audio_mixing,
        };
        space.check_prototypes()?;
        Ok(space)
    }

    fn check_prototypes(&self) -> Result<()> {
        let mut family: Vec<&Vec<f64>> = self.class_prototypes.iter().collect();
        family.extend(self.grasp_prototypes.iter());
        for group in [family, self.audio_prototypes.iter().collect()] {
            for (i, a) in group.iter().enumerate() {
                for b in &group[i + 1..] {
                    if dot(a, b) > MAX_PROTOTYPE_COSINE {
                        return Err(Error::Config(
                            "prototype draw violates near-orthogonality".into(),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn config(&self) -> &AnchorConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn num_classes(&self) -> usize {
        self.class_prototypes.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.config.class_names
    }

    pub fn class_index(&self, name: &str) -> Result<usize> {
        self.config
            .class_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownClass(name.to_string()))
    }

    pub fn class_prototype(&self, class: usize) -> &[f64] {
        &self.class_prototypes[class]
    }

    pub fn grasp_prototype(&self, label: GraspLabel) -> &[f64] {
        &self.grasp_prototypes[label.index()]
    }

    pub fn audio_prototype(&self, class: usize) -> &[f64] {
        &self.audio_prototypes[class]
    }

    fn check_class(&self, class: usize) -> Result<()> {
        if class >= self.num_classes() {
            return Err(Error::InvalidArgument(format!(
                "material class {class} >= {}",
                self.num_classes()
            )));
        }
        Ok(())
    }

    /// Contact features in nuisance coordinates.
    fn nuisance_features(latent: &LatentSample) -> [f64; NUISANCE_DIMS] {
        let mut f = [0.0; NUISANCE_DIMS];
        let lf = latent.texture_frequency.ln();
        for (j, mu) in FREQ_CENTERS.iter().enumerate() {
            f[j] = FREQ_WEIGHT * (-(lf - mu).powi(2) / (2.0 * FREQ_WIDTH * FREQ_WIDTH)).exp();
        }
        let n = FREQ_CENTERS.len();
        f[n] = DEPTH_WEIGHT * (2.0 * latent.contact_depth - 1.0);
        f[n + 1] = CENTER_WEIGHT * (2.0 * latent.contact_center[0] - 1.0);
        f[n + 2] = CENTER_WEIGHT * (2.0 * latent.contact_center[1] - 1.0);
        f
    }

    fn mix(&self, prototype: &[f64], variation: Vec<f64>) -> Result<Embedding> {
        let beta = self.config.beta;
        if beta == 0.0 {
            return Ok(Embedding::from_unit(prototype.to_vec()));
        }
        let var = Embedding::normalized(variation)?;
        Embedding::normalized(
            prototype
                .iter()
                .zip(var.as_slice())
                .map(|(p, g)| (1.0 - beta) * p + beta * g)
                .collect(),
        )
    }

    /// `normalize((1 - beta) * class_prototype + beta * g(latent))`.
    pub fn anchor_vision(&self, latent: &LatentSample) -> Result<Embedding> {
        self.check_class(latent.material_class)?;
        let f = Self::nuisance_features(latent);
        let grasp = self.grasp_prototype(GraspLabel::from_stable(latent.grasp_stable));
        let mut g: Vec<f64> = grasp.iter().map(|v| GRASP_WEIGHT * v).collect();
        for (coef, axis) in f.iter().zip(&self.nuisance_basis) {
            for (gi, a) in g.iter_mut().zip(axis) {
                *gi += coef * a;
            }
        }
        for (gi, s) in g.iter_mut().zip(self.scene_direction(latent.scene)) {
            *gi += SCENE_WEIGHT * s;
        }
        self.mix(&self.class_prototypes[latent.material_class], g)
    }

    /// Same construction as [`Self::anchor_vision`] over the audio prototypes,
    /// with an independent mixing of the contact features.
    pub fn anchor_audio(&self, latent: &LatentSample) -> Result<Embedding> {
        self.check_class(latent.material_class)?;
        let f = Self::nuisance_features(latent);
        let mut g = vec![0.0; self.dim()];
        for (row, axis) in self.audio_mixing.iter().zip(&self.nuisance_basis) {
            let coef = dot(row, &f);
            for (gi, a) in g.iter_mut().zip(axis) {
                *gi += coef * a;
            }
        }
        self.mix(&self.audio_prototypes[latent.material_class], g)
    }

    /// Unit direction of a recording environment, orthogonal to the class and
    /// grasp prototypes.
    pub fn scene_direction(&self, scene: usize) -> Vec<f64> {
        let tag = format!("scene/{scene}");
        let mut v = self.seeded_orthogonal(&tag);
        let norm = dot(&v, &v).sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        v
    }

    fn seeded_orthogonal(&self, tag: &str) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ fnv1a(tag.as_bytes()));
        let mut v: Vec<f64> = (0..self.dim()).map(|_| StandardNormal.sample(&mut rng)).collect();
        for p in self.class_prototypes.iter().chain(self.grasp_prototypes.iter()) {
            let c = dot(&v, p);
            for (vi, pi) in v.iter_mut().zip(p) {
                *vi -= c * pi;
            }
        }
        v
    }

    /// Deterministic per-template offset, orthogonal to the class and grasp
    /// prototypes. Haptic templates get the smaller magnitude.
    pub fn template_offset(&self, template: &str) -> Vec<f64> {
        let magnitude = if is_haptic(template) {
            HAPTIC_OFFSET
        } else {
            VISUAL_OFFSET
        };
        let v = self.seeded_orthogonal(template);
        let norm = dot(&v, &v).sqrt();
        v.iter().map(|x| magnitude * x / norm).collect()
    }

    fn offset_prototype(&self, prototype: &[f64], phrase: &str) -> Result<Embedding> {
        let delta = self.template_offset(phrase);
        Embedding::normalized(prototype.iter().zip(&delta).map(|(p, d)| p + d).collect())
    }

    pub fn class_text(
        &self,
        template: &str,
        class: usize,
        registry: &PromptTemplateRegistry,
    ) -> Result<Embedding> {
        if !registry.contains(template) {
            return Err(Error::UnknownTemplate(template.to_string()));
        }
        self.check_class(class)?;
        self.offset_prototype(&self.class_prototypes[class], template)
    }

    pub fn grasp_text(&self, label: GraspLabel, registry: &PromptTemplateRegistry) -> Embedding {
        self.offset_prototype(self.grasp_prototype(label), registry.grasp_phrase(label))
            .expect("prototype plus small offset is never zero")
    }

    /// Encodes a filled prompt such as `"This feels like [wood]"`.
    pub fn anchor_text(&self, prompt: &str, registry: &PromptTemplateRegistry) -> Result<Embedding> {
        match registry.parse(prompt)? {
            ParsedPrompt::Grasp(label) => Ok(self.grasp_text(label, registry)),
            ParsedPrompt::Class {
                template,
                class_name,
            } => {
                let class = self.class_index(&class_name)?;
                self.class_text(&template, class, registry)
            }
        }
    }

    /// Stable hash over every parameter bit; changes iff the space changes.
    pub fn fingerprint(&self) -> u64 {
        let mut bytes = Vec::new();
        let all = self
            .class_prototypes
            .iter()
            .chain(self.grasp_prototypes.iter())
            .chain(&self.audio_prototypes)
            .chain(&self.nuisance_basis)
            .chain(&self.audio_mixing);
        for v in all {
            for x in v {
                bytes.extend_from_slice(&x.to_bits().to_le_bytes());
            }
        }
        bytes.extend_from_slice(&self.config.beta.to_bits().to_le_bytes());
        fnv1a(&bytes)
    }

    fn prototype_table(&self) -> EmbeddingTable {
        let mut t = EmbeddingTable::default();
        let unit = |v: &Vec<f64>| Embedding::normalized(v.clone()).expect("unit prototype");
        for (name, p) in self.config.class_names.iter().zip(&self.class_prototypes) {
            t.push(format!("class/{name}"), Modality::Vision, unit(p));
        }
        t.push("grasp/stable", Modality::Text, unit(&self.grasp_prototypes[0]));
        t.push("grasp/slip", Modality::Text, unit(&self.grasp_prototypes[1]));
        for (name, p) in self.config.class_names.iter().zip(&self.audio_prototypes) {
            t.push(format!("audio/{name}"), Modality::Audio, unit(p));
        }
        for (j, p) in self.nuisance_basis.iter().enumerate() {
            t.push(format!("nuisance/{j}"), Modality::Vision, unit(p));
        }
        t
    }

    /// Writes `anchor.json` plus the prototypes as an embedding table.
    pub fn save(&self, dir: &Path) -> Result<()> {
        blob::ensure_dir(dir)?;
        self.prototype_table().write(dir)?;
        blob::write_json(
            &dir.join(ANCHOR_JSON),
            &AnchorHeader {
                format_version: ANCHOR_FORMAT_VERSION,
                num_classes: self.num_classes(),
                config: self.config.clone(),
            },
        )
    }

    /// Rebuilds the space from its parameters and checks it against the
    /// stored prototypes.
    pub fn load(dir: &Path) -> Result<Self> {
        let header: AnchorHeader = blob::read_json(&dir.join(ANCHOR_JSON))?;
        if header.format_version != ANCHOR_FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: header.format_version,
                expected: ANCHOR_FORMAT_VERSION,
            });
        }
        if header.num_classes != header.config.num_classes() {
            return Err(Error::CorruptHeader("M disagrees with class_names".into()));
        }
        let space = Self::new(header.config)?;
        let stored = load_embedding_table(dir, Some(space.dim()))?;
        let expected = space.prototype_table();
        if stored.len() != expected.len() {
            return Err(Error::CorruptHeader("prototype table size mismatch".into()));
        }
        for (a, b) in stored.rows.iter().zip(&expected.rows) {
            let worst = a
                .embedding
                .as_slice()
                .iter()
                .zip(b.embedding.as_slice())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            if a.key != b.key || worst > 1e-6 {
                return Err(Error::CorruptHeader(format!(
                    "stored prototype {} does not match parameters",
                    a.key
                )));
            }
        }
        Ok(space)
    }
}

/// Gram-Schmidt over seeded Gaussian draws.
fn orthonormal_set(count: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count);
    while out.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        for _ in 0..2 {
            for u in &out {
                let c = dot(&v, u);
                for (vi, ui) in v.iter_mut().zip(u) {
                    *vi -= c * ui;
                }
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-6 {
            out.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    out
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::l2;
    use crate::prompts::DEFAULT_TEMPLATES;
    use rand::Rng;

    fn space(beta: f64) -> AnchorSpace {
        let mut c = AnchorConfig::new(4, 11);
        c.beta = beta;
        AnchorSpace::new(c).unwrap()
    }

    fn latent(class: usize, rng: &mut impl Rng) -> LatentSample {
        LatentSample {
            material_class: class,
            texture_frequency: rng.random_range(1.2..7.0),
            contact_depth: rng.random_range(0.0..1.0),
            contact_center: [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)],
            grasp_stable: rng.random(),
            object_id: 0,
            scene: 0,
        }
    }

    #[test]
    fn zero_beta_returns_exact_prototypes() {
        let s = space(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let l = latent(2, &mut rng);
        assert_eq!(s.anchor_vision(&l).unwrap().as_slice(), s.class_prototype(2));
        let a = s.anchor_audio(&l).unwrap();
        for (x, y) in a.as_slice().iter().zip(s.audio_prototype(2)) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn outputs_are_unit_norm() {
        let s = space(0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let l = latent(rng.random_range(0..4), &mut rng);
            assert!((l2(s.anchor_vision(&l).unwrap().as_slice()) - 1.0).abs() < 1e-6);
            assert!((l2(s.anchor_audio(&l).unwrap().as_slice()) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn prototypes_are_near_orthogonal() {
        let s = space(0.3);
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    assert!(dot(s.class_prototype(i), s.class_prototype(j)) <= 0.1);
                    assert!(dot(s.audio_prototype(i), s.audio_prototype(j)) <= 0.1);
                }
            }
        }
    }

    #[test]
    fn cross_class_vision_cosine_is_bounded() {
        // Brute-force scan over sampled pairs.
        let s = space(0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut worst: f64 = -1.0;
        for _ in 0..1000 {
            let a = s.anchor_vision(&latent(0, &mut rng)).unwrap();
            let b = s.anchor_vision(&latent(1, &mut rng)).unwrap();
            worst = worst.max(a.cosine(&b));
        }
        assert!(worst <= 0.45, "{worst}");
    }

    #[test]
    fn class_is_recoverable_up_to_beta_04() {
        for beta in [0.0, 0.1, 0.25, 0.4] {
            let s = space(beta);
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            for _ in 0..500 {
                let class = rng.random_range(0..4);
                let e = s.anchor_vision(&latent(class, &mut rng)).unwrap();
                let best = (0..4)
                    .max_by(|&a, &b| {
                        dot(e.as_slice(), s.class_prototype(a))
                            .total_cmp(&dot(e.as_slice(), s.class_prototype(b)))
                    })
                    .unwrap();
                assert_eq!(best, class);
            }
        }
    }

    #[test]
    fn audio_matches_own_latent_better_than_cross_class() {
        let s = space(0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..500 {
            let la = latent(0, &mut rng);
            let lb = latent(1, &mut rng);
            let same = s.anchor_audio(&la).unwrap().cosine(&s.anchor_vision(&la).unwrap());
            let cross = s.anchor_audio(&lb).unwrap().cosine(&s.anchor_vision(&la).unwrap());
            assert!(same >= cross);
        }
    }

    #[test]
    fn haptic_prompt_is_closer_than_visual() {
        let s = space(0.3);
        let r = PromptTemplateRegistry::default();
        let wood = s.class_prototype(0);
        let feels = s.anchor_text("This feels like [wood]", &r).unwrap();
        let looks = s.anchor_text("This looks like [wood]", &r).unwrap();
        let cf = dot(feels.as_slice(), wood);
        let cl = dot(looks.as_slice(), wood);
        assert!(cf >= 0.95 && cl >= 0.95);
        assert!(cf > cl);
        assert_eq!(feels, s.anchor_text("This feels like [wood]", &r).unwrap());
    }

    #[test]
    fn grasp_phrase_lands_on_stable_prototype() {
        let s = space(0.3);
        let r = PromptTemplateRegistry::default();
        let e = s.anchor_text("the object is lifted in the air", &r).unwrap();
        let stable = dot(e.as_slice(), s.grasp_prototype(GraspLabel::Stable));
        let slip = dot(e.as_slice(), s.grasp_prototype(GraspLabel::Slip));
        assert!(stable >= 0.95 && stable > slip);
        for c in 0..4 {
            assert!(stable > dot(e.as_slice(), s.class_prototype(c)));
        }
    }

    #[test]
    fn template_argmax_is_the_filled_class() {
        let s = space(0.3);
        let r = PromptTemplateRegistry::default();
        for t in DEFAULT_TEMPLATES {
            for c in 0..4 {
                let e = s.class_text(t, c, &r).unwrap();
                let best = (0..4)
                    .max_by(|&a, &b| {
                        dot(e.as_slice(), s.class_prototype(a))
                            .total_cmp(&dot(e.as_slice(), s.class_prototype(b)))
                    })
                    .unwrap();
                assert_eq!(best, c);
            }
        }
    }

    #[test]
    fn unknown_class_and_template_are_errors() {
        let s = space(0.3);
        let r = PromptTemplateRegistry::default();
        assert!(matches!(
            s.anchor_text("This feels like [lava]", &r),
            Err(Error::UnknownClass(_))
        ));
        assert!(matches!(
            s.anchor_text("Smells like wood", &r),
            Err(Error::UnknownTemplate(_))
        ));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = space(0.3);
        s.save(dir.path()).unwrap();
        let back = AnchorSpace::load(dir.path()).unwrap();
        assert_eq!(s.fingerprint(), back.fingerprint());
    }

    #[test]
    fn too_small_dimension_is_rejected() {
        let mut c = AnchorConfig::new(4, 0);
        c.dim = 8;
        assert!(AnchorSpace::new(c).is_err());
    }
}
