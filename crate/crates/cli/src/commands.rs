use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use serde::Serialize;
use serde_json::json;
use tactile_core::blob;
use tactile_core::datagen::{generate_world, read_dataset, write_dataset, Split, World};
use tactile_core::embedding::{load_embedding_table, Modality};
use tactile_core::eval::{probe, run_ablation_grid, EmbeddedSplit, Evaluator, GridOptions};
use tactile_core::trainer::{fit_to_dir, Checkpoint};

use crate::config::{self, Section};
use crate::{Command, EvalCommand, EvalTarget, Invalid, ModalityArg, SplitArg};

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

impl From<ModalityArg> for Modality {
    fn from(m: ModalityArg) -> Self {
        match m {
            ModalityArg::Vision => Modality::Vision,
            ModalityArg::Text => Modality::Text,
            ModalityArg::Audio => Modality::Audio,
        }
    }
}

fn require_dir(path: &Path, what: &str) -> Result<()> {
    if !path.is_dir() {
        bail!(Invalid(format!("{what} directory {} does not exist", path.display())));
    }
    Ok(())
}

/// Writes `value` as JSON to stdout. A closed pipe is not an error.
fn print<T: Serialize>(value: &T) -> Result<()> {
    use std::io::Write;
    let text = serde_json::to_string_pretty(value)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn load_data(path: &Path) -> Result<World> {
    require_dir(path, "dataset")?;
    Ok(read_dataset(path)?)
}

fn load_ckpt(path: &Path) -> Result<Checkpoint> {
    require_dir(path, "checkpoint")?;
    Ok(Checkpoint::load(path)?)
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData { config, out, seed } => {
            let run = config::load(config.as_deref(), Section::World)?;
            let world = generate_world(&run.world, seed)?;
            write_dataset(&world, &out)?;
            print(&json!({
                "out": out,
                "seed": seed,
                "total_size": world.manifest.total_size(),
                "datasets": world.manifest.datasets,
            }))
        }
        Command::Train {
            data,
            config,
            out,
            seed,
            sigma,
        } => {
            let run = config::load(config.as_deref(), Section::Train)?;
            let mut train = run.train;
            if let Some(s) = seed {
                train.seed = s;
            }
            if let Some(s) = sigma {
                train.sigma = s;
            }
            train.validate().map_err(|e| Invalid(e.to_string()))?;
            let world = load_data(&data)?;
            let ckpt = fit_to_dir(&world, &train, &out)?;
            print(&json!({
                "out": out,
                "steps": ckpt.step,
                "epochs": ckpt.history.len(),
                "final_metrics": ckpt.final_metrics,
                "prototypes": ckpt.prototypes(),
            }))
        }
        Command::Eval(cmd) => eval(cmd),
        Command::Ablate {
            data,
            config,
            out,
            seed,
            jobs,
            template,
        } => {
            let run = config::load(config.as_deref(), Section::Train)?;
            let world = load_data(&data)?;
            let mut seeds = run.ablation.seeds;
            if let Some(first) = seed {
                seeds = (0..seeds.len() as u64).map(|i| first + i).collect();
            }
            let options = GridOptions {
                seeds,
                sigmas: run.ablation.sigmas,
                jobs: jobs.max(1),
                template,
            };
            let report = run_ablation_grid(&world, &run.train, &options)?;
            blob::ensure_dir(&out)?;
            blob::write_json(&out.join("report.json"), &report)?;
            write_text(&out.join("report.csv"), &report.to_csv())?;
            write_text(&out.join("sigma.svg"), &report.sigma_plot_svg())?;
            print(&report)
        }
        Command::ExportEmbeddings { ckpt, data, out, split } => {
            let ckpt = load_ckpt(&ckpt)?;
            let world = load_data(&data)?;
            let eval = Evaluator::new(&ckpt, &world)?;
            let embedded = eval.embed_split(split.into())?;
            embedded.to_table().write(&out)?;
            print(&json!({
                "out": out,
                "split": Split::from(split),
                "rows": embedded.len(),
                "C": ckpt.encoder.out_dim,
            }))
        }
        Command::Prototypes { ckpt, data } => {
            let ckpt = load_ckpt(&ckpt)?;
            let mut report = json!({ "prototypes": ckpt.prototypes() });
            if let Some(data) = data {
                let world = load_data(&data)?;
                let eval = Evaluator::new(&ckpt, &world)?;
                for split in [Split::Train, Split::Val, Split::Test] {
                    let indices = world.indices_in(split);
                    let resolved = eval.resolve(&indices)?;
                    let hits = indices
                        .iter()
                        .zip(&resolved)
                        .filter(|(&i, &k)| world.samples[i].touch.sensor_id == k)
                        .count();
                    report[format!("{split:?}").to_lowercase() + "_resolution_accuracy"] =
                        json!(hits as f64 / indices.len().max(1) as f64);
                }
            }
            print(&report)
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| tactile_core::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

struct Loaded {
    ckpt: Checkpoint,
    world: World,
    embeddings: Option<PathBuf>,
    split: Split,
}

impl Loaded {
    fn new(target: EvalTarget) -> Result<Self> {
        Ok(Self {
            ckpt: load_ckpt(&target.ckpt)?,
            world: load_data(&target.data)?,
            embeddings: target.embeddings,
            split: target.split.into(),
        })
    }

    fn embedded(&self, eval: &Evaluator, split: Split) -> Result<EmbeddedSplit> {
        match &self.embeddings {
            Some(dir) => {
                require_dir(dir, "embeddings")?;
                let table = load_embedding_table(dir, Some(self.ckpt.encoder.out_dim))?;
                Ok(EmbeddedSplit::from_table(&table, &self.world, split)?)
            }
            None => Ok(eval.embed_split(split)?),
        }
    }
}

fn eval(cmd: EvalCommand) -> Result<()> {
    match cmd {
        EvalCommand::ZeroShot { target, template } => {
            let l = Loaded::new(target)?;
            let eval = Evaluator::new(&l.ckpt, &l.world)?;
            if !eval.registry().contains(&template) {
                bail!(Invalid(format!("unknown template {template:?}")));
            }
            let e = l.embedded(&eval, l.split)?;
            let r = eval.zero_shot(&e, &template)?;
            print(&json!({ "task": "zero-shot", "split": l.split, "template": template, "accuracy": r.accuracy, "correct": r.correct, "count": r.count }))
        }
        EvalCommand::Grasp { target } => {
            let l = Loaded::new(target)?;
            let eval = Evaluator::new(&l.ckpt, &l.world)?;
            let e = l.embedded(&eval, l.split)?;
            let r = eval.grasp(&e)?;
            print(&json!({ "task": "grasp", "split": l.split, "accuracy": r.accuracy, "correct": r.correct, "count": r.count }))
        }
        EvalCommand::Probe { target, config } => {
            let run = config::load(config.as_deref(), Section::Probe)?;
            let l = Loaded::new(target)?;
            if l.embeddings.is_some() {
                bail!(Invalid("probe needs train-split embeddings; run it without --embeddings".into()));
            }
            let eval = Evaluator::new(&l.ckpt, &l.world)?;
            let train = eval.embed_split(Split::Train)?;
            let test = eval.embed_split(l.split)?;
            let r = probe(&train, &test, &run.probe)?;
            print(&json!({ "task": "probe", "split": l.split, "probe": run.probe, "report": r }))
        }
        EvalCommand::Retrieval {
            target,
            modality,
            template,
        } => {
            let l = Loaded::new(target)?;
            let eval = Evaluator::new(&l.ckpt, &l.world)?;
            let e = l.embedded(&eval, l.split)?;
            let r = eval.retrieval(&e, modality.into(), &template)?;
            print(&json!({ "task": "retrieval", "split": l.split, "modality": Modality::from(modality), "report": r }))
        }
    }
}
