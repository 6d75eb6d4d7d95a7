//! Synthetic multi-sensor visuo-tactile world.
//!
//! Every sample is a latent contact event rendered twice: once as a vision
//! image (sensor independent) and once as a touch image through one
//! [`SensorProfile`]. Datasets group samples by sensor; splits are assigned
//! per object so no object leaks between train, val and test.

mod render;
mod store;

pub use render::{render_touch, render_vision, touch_spread};
pub use store::{read_dataset, write_dataset, SAMPLES_BIN, SAMPLES_JSON, MANIFEST_JSON};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DATASET_FORMAT_VERSION: u32 = 1;

/// Minimum L1 distance between the background colors of two sensors.
pub const MIN_BACKGROUND_SEPARATION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentSample {
    pub material_class: usize,
    /// Cycles per image width.
    pub texture_frequency: f64,
    /// 0 means no contact.
    pub contact_depth: f64,
    pub contact_center: [f64; 2],
    /// `true` when the grasp held.
    pub grasp_stable: bool,
    pub object_id: usize,
    /// Visual environment the contact was recorded in; one per dataset.
    #[serde(default)]
    pub scene: usize,
}

impl LatentSample {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.material_class >= num_classes {
            return Err(Error::InvalidArgument(format!(
                "material class {} >= {num_classes}",
                self.material_class
            )));
        }
        if !(0.0..=1.0).contains(&self.contact_depth) {
            return Err(Error::InvalidArgument(format!(
                "contact depth {} outside [0, 1]",
                self.contact_depth
            )));
        }
        if !(self.texture_frequency > 0.0 && self.texture_frequency.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "texture frequency {} must be positive",
                self.texture_frequency
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorProfile {
    pub sensor_id: usize,
    pub background_color: [f64; 3],
    /// Unit vector; also the axis the gel texture runs along.
    pub illumination_direction: [f64; 2],
    /// Stiffer gels spread a contact over a smaller area.
    pub gel_stiffness: f64,
    pub noise_sigma: f64,
    /// Optical magnification: apparent texture frequency is the physical one times this.
    #[serde(default = "one")]
    pub texture_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl SensorProfile {
    pub fn validate(&self) -> Result<()> {
        if self.background_color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::Config(format!(
                "sensor {}: background color outside [0, 1]",
                self.sensor_id
            )));
        }
        let [lx, ly] = self.illumination_direction;
        if ((lx * lx + ly * ly).sqrt() - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!(
                "sensor {}: illumination direction is not unit length",
                self.sensor_id
            )));
        }
        if !(self.gel_stiffness > 0.0) || !(self.texture_scale > 0.0) {
            return Err(Error::Config(format!(
                "sensor {}: gel stiffness and texture scale must be positive",
                self.sensor_id
            )));
        }
        if !(0.0..0.1).contains(&self.noise_sigma) {
            return Err(Error::Config(format!(
                "sensor {}: noise sigma {} outside [0, 0.1)",
                self.sensor_id, self.noise_sigma
            )));
        }
        Ok(())
    }
}

pub fn background_l1(a: &SensorProfile, b: &SensorProfile) -> f64 {
    a.background_color
        .iter()
        .zip(&b.background_color)
        .map(|(x, y)| (x - y).abs())
        .sum()
}

/// Checks every profile and the pairwise background separation.
pub fn validate_profiles(profiles: &[SensorProfile]) -> Result<()> {
    for (k, p) in profiles.iter().enumerate() {
        if p.sensor_id != k {
            return Err(Error::Config(format!(
                "sensor profile at position {k} has sensor_id {}",
                p.sensor_id
            )));
        }
        p.validate()?;
    }
    for (i, a) in profiles.iter().enumerate() {
        for b in &profiles[i + 1..] {
            let d = background_l1(a, b);
            if d < MIN_BACKGROUND_SEPARATION {
                return Err(Error::Config(format!(
                    "backgrounds of sensors {} and {} differ by {d:.3} in L1 (need >= {MIN_BACKGROUND_SEPARATION})",
                    a.sensor_id, b.sensor_id
                )));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: String,
    pub sensor_id: usize,
    pub size: usize,
    /// Material classes this dataset contains; empty means all.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub materials: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub num_classes: usize,
    pub sensors: Vec<SensorProfile>,
    pub datasets: Vec<DatasetSpec>,
    pub image_size: usize,
    pub patch_size: usize,
    pub objects_per_class: usize,
    pub val_objects_per_class: usize,
    pub test_objects_per_class: usize,
    /// Texture frequency of class 0; class c uses `base * ratio^c`.
    pub base_frequency: f64,
    pub frequency_ratio: f64,
    /// Objects draw their frequency within `exp(±object_jitter)` of the class value.
    pub object_jitter: f64,
    pub depth_range: [f64; 2],
    pub grasp_threshold: f64,
    pub grasp_label_noise: f64,
}

/// Each default dataset misses one material, so no single sensor sees every class.
const DEFAULT_COVERAGE: [[usize; 3]; 3] = [[0, 1, 2], [1, 2, 3], [0, 2, 3]];

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            num_classes: 4,
            sensors: default_sensors(),
            datasets: DEFAULT_COVERAGE
                .iter()
                .enumerate()
                .map(|(k, m)| DatasetSpec {
                    name: format!("sensor{k}"),
                    sensor_id: k,
                    size: 2000,
                    materials: m.to_vec(),
                })
                .collect(),
            image_size: 32,
            patch_size: 8,
            objects_per_class: 8,
            val_objects_per_class: 1,
            test_objects_per_class: 1,
            base_frequency: 1.6,
            frequency_ratio: 1.5,
            object_jitter: 0.08,
            depth_range: [0.15, 1.0],
            grasp_threshold: 0.5,
            grasp_label_noise: 0.1,
        }
    }
}

pub fn default_sensors() -> Vec<SensorProfile> {
    let d = std::f64::consts::FRAC_1_SQRT_2;
    vec![
        SensorProfile {
            sensor_id: 0,
            background_color: [0.45, 0.40, 0.55],
            illumination_direction: [1.0, 0.0],
            gel_stiffness: 1.0,
            noise_sigma: 0.02,
            texture_scale: 1.0,
        },
        SensorProfile {
            sensor_id: 1,
            background_color: [0.30, 0.55, 0.45],
            illumination_direction: [0.0, 1.0],
            gel_stiffness: 1.6,
            noise_sigma: 0.03,
            texture_scale: 1.5,
        },
        SensorProfile {
            sensor_id: 2,
            background_color: [0.60, 0.45, 0.30],
            illumination_direction: [-d, d],
            gel_stiffness: 0.7,
            noise_sigma: 0.02,
            texture_scale: 1.0 / 1.5,
        },
    ]
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config("need at least 2 material classes".into()));
        }
        if self.sensors.is_empty() {
            return Err(Error::Config("need at least one sensor profile".into()));
        }
        validate_profiles(&self.sensors)?;
        if self.datasets.is_empty() {
            return Err(Error::Config("need at least one dataset".into()));
        }
        for d in &self.datasets {
            if d.size == 0 {
                return Err(Error::Config(format!("dataset {} has size 0", d.name)));
            }
            if d.sensor_id >= self.sensors.len() {
                return Err(Error::Config(format!(
                    "dataset {} uses unknown sensor {}",
                    d.name, d.sensor_id
                )));
            }
            if d.materials.iter().any(|&m| m >= self.num_classes) {
                return Err(Error::Config(format!("dataset {} lists a material >= M", d.name)));
            }
            if d.name.is_empty() || d.name.contains(['/', '\\']) || d.name.starts_with('.') {
                return Err(Error::Config(format!("dataset name {:?} is not a plain directory name", d.name)));
            }
        }
        let mut names: Vec<&str> = self.datasets.iter().map(|d| d.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.datasets.len() {
            return Err(Error::Config("dataset names must be unique".into()));
        }
        if self.patch_size == 0 || self.image_size == 0 || self.image_size % self.patch_size != 0 {
            return Err(Error::Config(format!(
                "image size {} is not divisible by patch size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.objects_per_class < self.val_objects_per_class + self.test_objects_per_class + 1 {
            return Err(Error::Config(
                "objects_per_class must leave at least one training object per class".into(),
            ));
        }
        let [lo, hi] = self.depth_range;
        if !(0.0..=1.0).contains(&lo) || !(lo..=1.0).contains(&hi) {
            return Err(Error::Config("depth_range must satisfy 0 <= lo <= hi <= 1".into()));
        }
        if !(self.base_frequency > 0.0 && self.frequency_ratio > 0.0 && self.object_jitter >= 0.0) {
            return Err(Error::Config("texture frequency parameters must be positive".into()));
        }
        if !(0.0..=0.5).contains(&self.grasp_label_noise) {
            return Err(Error::Config("grasp_label_noise must lie in [0, 0.5]".into()));
        }
        Ok(())
    }

    pub fn total_samples(&self) -> usize {
        self.datasets.iter().map(|d| d.size).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TactileImage {
    pub height: usize,
    pub width: usize,
    pub sensor_id: usize,
    /// Row-major, channel-last RGB in [0, 1].
    pub pixels: Vec<f32>,
}

impl TactileImage {
    pub fn mean_pixel(&self) -> [f64; 3] {
        mean_rgb(&self.pixels)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisionImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
}

pub fn mean_rgb(pixels: &[f32]) -> [f64; 3] {
    let mut acc = [0.0f64; 3];
    for px in pixels.chunks_exact(3) {
        for c in 0..3 {
            acc[c] += px[c] as f64;
        }
    }
    let n = (pixels.len() / 3).max(1) as f64;
    acc.map(|a| a / n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub latent: LatentSample,
    pub vision: VisionImage,
    pub touch: TactileImage,
    pub split: Split,
    pub dataset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub name: String,
    pub sensor_id: usize,
    pub size: usize,
    /// Relative to the dataset root directory.
    pub path: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    pub fn of(&self, object_id: usize) -> Option<Split> {
        if self.train.contains(&object_id) {
            Some(Split::Train)
        } else if self.val.contains(&object_id) {
            Some(Split::Val)
        } else if self.test.contains(&object_id) {
            Some(Split::Test)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    #[serde(rename = "M")]
    pub num_classes: usize,
    #[serde(rename = "K")]
    pub num_sensors: usize,
    pub image_size: usize,
    pub seed: u64,
    pub datasets: Vec<DatasetEntry>,
    pub splits: Splits,
    pub sensors: Vec<SensorProfile>,
    /// Material class of every object id.
    pub object_classes: Vec<usize>,
}

impl DatasetManifest {
    pub fn total_size(&self) -> usize {
        self.datasets.iter().map(|d| d.size).sum()
    }

    /// Global index range of each dataset's samples.
    pub fn ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut start = 0;
        self.datasets
            .iter()
            .map(|d| {
                let r = start..start + d.size;
                start += d.size;
                r
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != DATASET_FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: self.format_version,
                expected: DATASET_FORMAT_VERSION,
            });
        }
        if self.datasets.is_empty() {
            return Err(Error::Empty("manifest lists no datasets".into()));
        }
        if let Some(d) = self.datasets.iter().find(|d| d.size == 0) {
            return Err(Error::CorruptHeader(format!("dataset {} has size 0", d.name)));
        }
        let mut seen = std::collections::HashSet::new();
        for id in self.splits.train.iter().chain(&self.splits.val).chain(&self.splits.test) {
            if !seen.insert(*id) {
                return Err(Error::CorruptHeader(format!("object {id} appears in two splits")));
            }
        }
        Ok(())
    }
}

/// A generated or loaded dataset held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub manifest: DatasetManifest,
    pub samples: Vec<Sample>,
}

impl World {
    pub fn indices_in(&self, split: Split) -> Vec<usize> {
        (0..self.samples.len())
            .filter(|&i| self.samples[i].split == split)
            .collect()
    }

    /// Per-dataset global indices restricted to one split.
    pub fn pools(&self, split: Split) -> Vec<Vec<usize>> {
        self.manifest
            .ranges()
            .into_iter()
            .map(|r| r.filter(|&i| self.samples[i].split == split).collect())
            .collect()
    }
}

struct ObjectDraw {
    class: usize,
    frequency: f64,
}

/// Generates the whole synthetic world; a pure function of `(config, seed)`.
pub fn generate_world(config: &WorldConfig, seed: u64) -> Result<World> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = config.num_classes;
    let opc = config.objects_per_class;

    let mut objects = Vec::with_capacity(m * opc);
    for class in 0..m {
        let class_freq = config.base_frequency * config.frequency_ratio.powi(class as i32);
        for _ in 0..opc {
            let j = if config.object_jitter > 0.0 {
                rng.random_range(-config.object_jitter..=config.object_jitter)
            } else {
                0.0
            };
            objects.push(ObjectDraw {
                class,
                frequency: class_freq * j.exp(),
            });
        }
    }

    let mut splits = Splits::default();
    for class in 0..m {
        let mut ids: Vec<usize> = (class * opc..(class + 1) * opc).collect();
        shuffle(&mut ids, &mut rng);
        let (test, rest) = ids.split_at(config.test_objects_per_class);
        let (val, train) = rest.split_at(config.val_objects_per_class);
        splits.test.extend_from_slice(test);
        splits.val.extend_from_slice(val);
        splits.train.extend_from_slice(train);
    }
    for s in [&mut splits.train, &mut splits.val, &mut splits.test] {
        s.sort_unstable();
    }
    let split_of: Vec<Split> = (0..objects.len())
        .map(|id| splits.of(id).expect("every object is assigned"))
        .collect();

    let size = config.image_size;
    let mut samples = Vec::with_capacity(config.total_samples());
    let mut entries = Vec::with_capacity(config.datasets.len());
    for (n, spec) in config.datasets.iter().enumerate() {
        let profile = &config.sensors[spec.sensor_id];
        let allowed: Vec<usize> = (0..objects.len())
            .filter(|&id| spec.materials.is_empty() || spec.materials.contains(&objects[id].class))
            .collect();
        for _ in 0..spec.size {
            let object_id = allowed[rng.random_range(0..allowed.len())];
            let obj = &objects[object_id];
            let [lo, hi] = config.depth_range;
            let depth = if hi > lo { rng.random_range(lo..=hi) } else { lo };
            let center = [rng.random_range(0.25..0.75), rng.random_range(0.25..0.75)];
            let flip = rng.random::<f64>() < config.grasp_label_noise;
            let latent = LatentSample {
                material_class: obj.class,
                texture_frequency: obj.frequency,
                contact_depth: depth,
                contact_center: center,
                grasp_stable: (depth >= config.grasp_threshold) != flip,
                object_id,
                scene: n,
            };
            let noise_seed = rng.next_u64();
            let touch = render_touch(&latent, profile, noise_seed, size);
            let vision = render_vision(&latent, size);
            samples.push(Sample {
                latent,
                vision,
                touch,
                split: split_of[object_id],
                dataset: n,
            });
        }
        entries.push(DatasetEntry {
            name: spec.name.clone(),
            sensor_id: spec.sensor_id,
            size: spec.size,
            path: format!("datasets/{}", spec.name),
        });
    }

    let manifest = DatasetManifest {
        format_version: DATASET_FORMAT_VERSION,
        num_classes: m,
        num_sensors: config.sensors.len(),
        image_size: size,
        seed,
        datasets: entries,
        splits,
        sensors: config.sensors.clone(),
        object_classes: objects.iter().map(|o| o.class).collect(),
    };
    Ok(World { manifest, samples })
}

fn shuffle<T>(items: &mut [T], rng: &mut impl Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}
