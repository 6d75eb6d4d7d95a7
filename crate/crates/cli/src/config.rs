//! Run configuration files.
//!
//! A `--config` file is either a full run config with `world`, `train`,
//! `probe` and `ablation` sections, or a bare section for the subcommand at
//! hand (a world config for `gen-data`, a train config for `train`).

use std::path::Path;

use anyhow::bail;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tactile_core::datagen::WorldConfig;
use tactile_core::eval::ProbeConfig;
use tactile_core::trainer::TrainConfig;

use crate::Invalid;

pub const RUN_CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationSection {
    pub seeds: Vec<u64>,
    pub sigmas: Vec<f64>,
}

impl Default for AblationSection {
    fn default() -> Self {
        let g = tactile_core::eval::GridOptions::default();
        Self {
            seeds: g.seeds,
            sigmas: g.sigmas,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub format_version: u32,
    pub world: WorldConfig,
    pub train: TrainConfig,
    pub probe: ProbeConfig,
    pub ablation: AblationSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            format_version: RUN_CONFIG_VERSION,
            world: WorldConfig::default(),
            train: TrainConfig::default(),
            probe: ProbeConfig::default(),
            ablation: AblationSection::default(),
        }
    }
}

/// Which bare section a config file may hold.
#[derive(Debug, Clone, Copy)]
pub enum Section {
    World,
    Train,
    Probe,
}

const RUN_KEYS: [&str; 5] = ["format_version", "world", "train", "probe", "ablation"];

fn parse<T: DeserializeOwned>(value: serde_json::Value, path: &Path) -> anyhow::Result<T> {
    serde_json::from_value(value)
        .map_err(|e| Invalid(format!("{}: {e}", path.display())))
        .map_err(Into::into)
}

pub fn load(path: Option<&Path>, section: Section) -> anyhow::Result<RunConfig> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Invalid(format!("cannot read config {}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Invalid(format!("config {} is not valid JSON: {e}", path.display())))?;
    let Some(obj) = value.as_object() else {
        bail!(Invalid(format!("config {} must be a JSON object", path.display())));
    };
    let is_run = obj.keys().any(|k| RUN_KEYS.contains(&k.as_str()));
    let mut run = RunConfig::default();
    if is_run {
        run = parse(value, path)?;
        if run.format_version != RUN_CONFIG_VERSION {
            bail!(Invalid(format!(
                "config {} has format_version {}, expected {RUN_CONFIG_VERSION}",
                path.display(),
                run.format_version
            )));
        }
    } else {
        match section {
            Section::World => run.world = parse(value, path)?,
            Section::Train => run.train = parse(value, path)?,
            Section::Probe => run.probe = parse(value, path)?,
        }
    }
    run.world.validate().map_err(|e| Invalid(format!("{}: {e}", path.display())))?;
    run.train.validate().map_err(|e| Invalid(format!("{}: {e}", path.display())))?;
    Ok(run)
}
