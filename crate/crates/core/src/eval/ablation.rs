//! Flag ablations and the sigma sweep, each over several seeds.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::metrics::median;
use super::Evaluator;
use crate::datagen::{Split, World};
use crate::error::{Error, Result};
use crate::prompts::DEFAULT_TEMPLATES;
use crate::trainer::{fit, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub id: String,
    pub use_sensor_tokens: bool,
    pub use_mix_sampling: bool,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOptions {
    pub seeds: Vec<u64>,
    pub sigmas: Vec<f64>,
    pub jobs: usize,
    pub template: String,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2],
            sigmas: vec![0.0, 0.5, 0.75, 1.0],
            jobs: 1,
            template: DEFAULT_TEMPLATES[0].to_string(),
        }
    }
}

/// The four flag combinations at the base sigma, then the sigma sweep with
/// both flags on.
pub fn grid_cells(base: &TrainConfig, sigmas: &[f64]) -> Vec<GridCell> {
    let flag = |id: &str, t: bool, s: bool| GridCell {
        id: id.to_string(),
        use_sensor_tokens: t,
        use_mix_sampling: s,
        sigma: base.sigma,
    };
    let mut cells = vec![
        flag("baseline", false, false),
        flag("tokens", true, false),
        flag("sampling", false, true),
        flag("full", true, true),
    ];
    cells.extend(sigmas.iter().map(|&sigma| GridCell {
        id: format!("sigma={sigma}"),
        use_sensor_tokens: true,
        use_mix_sampling: true,
        sigma,
    }));
    cells
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    #[serde(flatten)]
    pub cell: GridCell,
    pub seeds: Vec<u64>,
    /// Zero-shot material accuracy on the test split, per seed.
    pub per_seed: Vec<Option<f64>>,
    pub per_seed_val_loss: Vec<Option<f64>>,
    pub errors: Vec<Option<String>>,
    pub median: Option<f64>,
    pub median_val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub metric: String,
    pub template: String,
    pub runs_scheduled: usize,
    /// Distinct trainings; cells sharing a configuration share runs.
    pub runs_executed: usize,
    pub cells: Vec<CellResult>,
}

impl AblationReport {
    pub fn cell(&self, id: &str) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.cell.id == id)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("cell,use_sensor_tokens,use_mix_sampling,sigma,seed,accuracy,val_loss,error\n");
        for c in &self.cells {
            for (i, seed) in c.seeds.iter().enumerate() {
                let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
                let err = c.errors[i].clone().unwrap_or_default().replace(['"', '\n'], " ");
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},\"{}\"",
                    c.cell.id,
                    c.cell.use_sensor_tokens,
                    c.cell.use_mix_sampling,
                    c.cell.sigma,
                    seed,
                    opt(c.per_seed[i]),
                    opt(c.per_seed_val_loss[i]),
                    err
                );
            }
        }
        out
    }

    /// Accuracy against sigma for the sweep cells: per-seed dots and a median line.
    pub fn sigma_plot_svg(&self) -> String {
        let sweep: Vec<&CellResult> = self.cells.iter().filter(|c| c.cell.id.starts_with("sigma=")).collect();
        let (w, h, pad) = (480.0, 320.0, 48.0);
        let x = |s: f64| pad + s * (w - 2.0 * pad);
        let y = |a: f64| h - pad - a * (h - 2.0 * pad);
        let mut svg = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"12\">\n"
        );
        let _ = writeln!(svg, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
        let _ = writeln!(
            svg,
            "<line x1=\"{pad}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
            y(0.0),
            x(1.0),
            y(0.0)
        );
        let _ = writeln!(svg, "<line x1=\"{pad}\" y1=\"{}\" x2=\"{pad}\" y2=\"{}\" stroke=\"black\"/>", y(0.0), y(1.0));
        for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{t}</text>", x(t), y(0.0) + 16.0);
            let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{t}</text>", pad - 6.0, y(t) + 4.0);
        }
        let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">sigma</text>", w / 2.0, h - 8.0);
        let _ = writeln!(
            svg,
            "<text x=\"14\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {})\">zero-shot accuracy</text>",
            h / 2.0,
            h / 2.0
        );
        let mut points = Vec::new();
        for c in &sweep {
            for a in c.per_seed.iter().flatten() {
                let _ = writeln!(svg, "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"#8aa\"/>", x(c.cell.sigma), y(*a));
            }
            if let Some(m) = c.median {
                points.push(format!("{:.1},{:.1}", x(c.cell.sigma), y(m)));
            }
        }
        let _ = writeln!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"#c33\" stroke-width=\"2\"/>",
            points.join(" ")
        );
        svg.push_str("</svg>\n");
        svg
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct RunKey {
    tokens: bool,
    mix: bool,
    sigma_bits: Option<u64>,
    seed: u64,
}

impl RunKey {
    fn of(cell: &GridCell, seed: u64) -> Self {
        Self {
            tokens: cell.use_sensor_tokens,
            mix: cell.use_mix_sampling,
            // Sigma has no effect without mixed sampling.
            sigma_bits: cell.use_mix_sampling.then(|| cell.sigma.to_bits()),
            seed,
        }
    }
}

type Outcome = std::result::Result<(f64, f64), String>;

fn run_one(world: &World, config: &TrainConfig, template: &str) -> Result<(f64, f64)> {
    let ckpt = fit(world, config)?;
    let eval = Evaluator::new(&ckpt, world)?;
    let test = eval.embed_split(Split::Test)?;
    let acc = eval.zero_shot(&test, template)?.accuracy;
    let val = ckpt.final_metrics.map(|m| m.val_loss).unwrap_or(f64::NAN);
    Ok((acc, val))
}

/// Trains every cell for every seed, with up to `jobs` trainings in flight.
pub fn run_ablation_grid(world: &World, base: &TrainConfig, options: &GridOptions) -> Result<AblationReport> {
    base.validate()?;
    if world.manifest.datasets.len() < 2 {
        return Err(Error::InvalidArgument("ablation needs a multi-sensor manifest".into()));
    }
    if options.seeds.is_empty() {
        return Err(Error::InvalidArgument("ablation needs at least one seed".into()));
    }
    let cells = grid_cells(base, &options.sigmas);
    let mut unique: Vec<(RunKey, TrainConfig)> = Vec::new();
    for cell in &cells {
        for &seed in &options.seeds {
            let key = RunKey::of(cell, seed);
            if !unique.iter().any(|(k, _)| *k == key) {
                let config = TrainConfig {
                    use_sensor_tokens: cell.use_sensor_tokens,
                    use_mix_sampling: cell.use_mix_sampling,
                    sigma: cell.sigma,
                    seed,
                    ..base.clone()
                };
                config.validate()?;
                unique.push((key, config));
            }
        }
    }

    let next = AtomicUsize::new(0);
    let outcomes: Mutex<Vec<Option<Outcome>>> = Mutex::new(vec![None; unique.len()]);
    let jobs = options.jobs.clamp(1, unique.len());
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((key, config)) = unique.get(i) else { break };
                let result = run_one(world, config, &options.template).map_err(|e| e.to_string());
                match &result {
                    Ok((acc, val)) => log::info!("run {}/{} {key:?}: accuracy {acc:.3}, val loss {val:.4}", i + 1, unique.len()),
                    Err(e) => log::warn!("run {}/{} {key:?} failed: {e}", i + 1, unique.len()),
                }
                outcomes.lock().expect("no worker panicked")[i] = Some(result);
            });
        }
    });
    let outcomes = outcomes.into_inner().expect("no worker panicked");

    let results = cells
        .into_iter()
        .map(|cell| {
            let mut per_seed = Vec::new();
            let mut per_seed_val_loss = Vec::new();
            let mut errors = Vec::new();
            for &seed in &options.seeds {
                let key = RunKey::of(&cell, seed);
                let i = unique.iter().position(|(k, _)| *k == key).expect("scheduled");
                match outcomes[i].as_ref().expect("every run finished") {
                    Ok((acc, val)) => {
                        per_seed.push(Some(*acc));
                        per_seed_val_loss.push(Some(*val));
                        errors.push(None);
                    }
                    Err(e) => {
                        per_seed.push(None);
                        per_seed_val_loss.push(None);
                        errors.push(Some(e.clone()));
                    }
                }
            }
            let ok: Vec<f64> = per_seed.iter().flatten().copied().collect();
            let ok_val: Vec<f64> = per_seed_val_loss.iter().flatten().copied().collect();
            let complete = ok.len() == options.seeds.len();
            CellResult {
                median: if complete { median(&ok) } else { None },
                median_val_loss: if complete { median(&ok_val) } else { None },
                cell,
                seeds: options.seeds.clone(),
                per_seed,
                per_seed_val_loss,
                errors,
            }
        })
        .collect::<Vec<_>>();

    Ok(AblationReport {
        metric: "zero_shot_accuracy".into(),
        template: options.template.clone(),
        runs_scheduled: results.len() * options.seeds.len(),
        runs_executed: unique.len(),
        cells: results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_has_eight_cells_and_24_runs() {
        let cells = grid_cells(&TrainConfig::default(), &GridOptions::default().sigmas);
        assert_eq!(cells.len(), 8);
        assert_eq!(cells.len() * GridOptions::default().seeds.len(), 24);
        let full = RunKey::of(&cells[3], 0);
        let sweep = RunKey::of(&cells[6], 0);
        assert_eq!(full, sweep);
    }
}
