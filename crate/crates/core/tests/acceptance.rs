//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `cargo test --test acceptance -- 1 3 7` runs a subset. Criteria 5 and 6 are
//! measured outcomes of the ablation grid; they are reported but do not set the
//! exit status. Every other criterion does.

mod common;

use std::path::Path;
use std::time::{Duration, Instant};

use ndarray::{array, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use tactile_core::datagen::{generate_world, read_dataset, write_dataset, Split, World, WorldConfig};
use tactile_core::eval::{run_ablation_grid, Evaluator, GridOptions};
use tactile_core::objective::{info_nce_t2v, info_nce_v2t};
use tactile_core::prompts::TEMPLATE_PAIRS;
use tactile_core::sampler::{dataset_probabilities, draw_batch, SamplerConfig};
use tactile_core::trainer::{fit, fit_to_dir, Checkpoint, TrainConfig};

const CLOSED_FORM_TOL: f64 = 1e-9;
const GRAD_REL_TOL: f64 = 1e-3;
const SAMPLER_BATCHES: usize = 10_000;
const SAMPLER_FREQ_TOL: f64 = 0.02;
const SOURCE_SIZES: [usize; 4] = [120_000, 9_300, 183_000, 180_000];
const SOURCE_P: [f64; 4] = [0.2438, 0.0189, 0.3717, 0.3656];
const TOY_EPOCHS: usize = 30;
const TOY_ZERO_SHOT_MIN: f64 = 0.90;
const TOY_GRASP_MIN: f64 = 0.75;
const TOY_MAP_MIN: f64 = 0.80;
const TOY_BUDGET: Duration = Duration::from_secs(600);
const GRID_EPOCHS: usize = 10;
const GRID_MARGIN: f64 = 0.10;
const GRID_BUDGET: Duration = Duration::from_secs(3600);
const AP_TOL: f64 = 1e-12;
const NCE_TOL: f64 = 1e-9;
const TEMPLATE: &str = "This feels like [CLS]";

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// State shared by criteria that reuse the toy run.
#[derive(Default)]
struct Shared {
    toy: Option<(World, Checkpoint)>,
}

impl Shared {
    fn toy(&mut self) -> &(World, Checkpoint) {
        self.toy.get_or_insert_with(|| {
            let world = generate_world(&WorldConfig::default(), 0).expect("default world");
            let config = TrainConfig {
                epochs: TOY_EPOCHS,
                ..TrainConfig::default()
            };
            let ckpt = fit(&world, &config).expect("toy run trains");
            (world, ckpt)
        })
    }
}

fn closed_forms() -> Outcome {
    let start = Instant::now();
    let one = array![[0.6, 0.8]];
    let b1 = info_nce_t2v(one.view(), one.view(), 0.07).unwrap() + info_nce_v2t(one.view(), one.view(), 0.07).unwrap();

    let b = 8;
    let same: Array2<f64> = Array2::from_shape_fn((b, 4), |(_, j)| if j == 0 { 1.0 } else { 0.0 });
    let uniform = info_nce_t2v(same.view(), same.view(), 0.07).unwrap();
    let uniform_err = (uniform - (b as f64).ln()).abs();

    let eye = array![[1.0, 0.0], [0.0, 1.0]];
    let ortho = info_nce_t2v(eye.view(), eye.view(), 0.07).unwrap();
    let ortho_err = (ortho - (1.0 + (-1.0f64 / 0.07).exp()).ln()).abs();

    let elapsed = start.elapsed();
    outcome(
        b1 == 0.0 && uniform_err <= CLOSED_FORM_TOL && ortho_err <= CLOSED_FORM_TOL && elapsed < Duration::from_secs(1),
        format!(
            "B=1 loss {b1}, |ln B err| {uniform_err:.1e}, |orthogonal err| {ortho_err:.1e}, {:.3}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn gradient_contract() -> Outcome {
    let start = Instant::now();
    let config = common::gradcheck::tiny();
    let case = common::gradcheck::case(vec![0, 1, 2], 3);
    let report = common::gradcheck::check(&config, &case, 7);
    let worst = report.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    let has_tokens = report.iter().any(|(n, _)| n == "sensor_tokens");
    let local = common::gradcheck::sensor_locality();
    let elapsed = start.elapsed();
    outcome(
        worst < GRAD_REL_TOL && has_tokens && local && elapsed < Duration::from_secs(30),
        format!(
            "{} tensors, max rel err {worst:.2e}, sensor locality {}, {:.1}s",
            report.len(),
            if local { "exact" } else { "broken" },
            elapsed.as_secs_f64()
        ),
    )
}

fn sampler_law() -> Outcome {
    let start = Instant::now();
    let mut pools = Vec::new();
    let mut offset = 0;
    for &n in &SOURCE_SIZES {
        pools.push((offset..offset + n).collect::<Vec<usize>>());
        offset += n;
    }
    let config = SamplerConfig {
        sigma: 0.75,
        batch_size: 48,
        seed: 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut counts = [0usize; 4];
    let mut exact = true;
    for _ in 0..SAMPLER_BATCHES {
        let draw = draw_batch(&pools, &config, &mut rng).unwrap();
        counts[draw.selected] += 1;
        let range = &pools[draw.selected];
        let (lo, hi) = (range[0], range[range.len() - 1]);
        let majority = draw.indices.iter().filter(|&&i| (lo..=hi).contains(&i)).count();
        exact &= majority == 36;
    }
    let freq: Vec<f64> = counts.iter().map(|&c| c as f64 / SAMPLER_BATCHES as f64).collect();
    let worst = freq.iter().zip(SOURCE_P).map(|(f, p)| (f - p).abs()).fold(0.0, f64::max);
    let p = dataset_probabilities(&SOURCE_SIZES).unwrap();
    let elapsed = start.elapsed();
    outcome(
        exact && worst <= SAMPLER_FREQ_TOL && elapsed < Duration::from_secs(30),
        format!(
            "36/48 majority in every batch: {exact}, frequencies {:?} vs p {:?}, max dev {worst:.4}, {:.1}s",
            freq.iter().map(|f| format!("{f:.4}")).collect::<Vec<_>>(),
            p.iter().map(|f| format!("{f:.4}")).collect::<Vec<_>>(),
            elapsed.as_secs_f64()
        ),
    )
}

fn toy_alignment(shared: &mut Shared) -> Outcome {
    let start = Instant::now();
    let (world, ckpt) = shared.toy();
    let trained = start.elapsed();
    let eval = Evaluator::new(ckpt, world).unwrap();
    let test = eval.embed_split(Split::Test).unwrap();
    let zero_shot = eval.zero_shot(&test, TEMPLATE).unwrap().accuracy;
    let grasp = eval.grasp(&test).unwrap().accuracy;
    let map = eval
        .retrieval(&test, tactile_core::embedding::Modality::Vision, TEMPLATE)
        .unwrap()
        .map;
    let elapsed = start.elapsed();
    outcome(
        zero_shot >= TOY_ZERO_SHOT_MIN && grasp > TOY_GRASP_MIN && map >= TOY_MAP_MIN && elapsed <= TOY_BUDGET,
        format!(
            "zero-shot {zero_shot:.4}, grasp {grasp:.4}, touch->vision mAP {map:.4}, train {:.0}s, total {:.0}s",
            trained.as_secs_f64(),
            elapsed.as_secs_f64()
        ),
    )
}

struct Grid {
    medians: Vec<(String, Option<f64>)>,
    elapsed: Duration,
}

impl Grid {
    fn get(&self, id: &str) -> f64 {
        self.medians
            .iter()
            .find(|(c, _)| c == id)
            .and_then(|(_, m)| *m)
            .unwrap_or(f64::NAN)
    }
}

fn run_grid() -> Grid {
    let start = Instant::now();
    let world = generate_world(&WorldConfig::default(), 0).expect("default world");
    let base = TrainConfig {
        epochs: GRID_EPOCHS,
        ..TrainConfig::default()
    };
    let jobs = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let options = GridOptions {
        jobs,
        template: TEMPLATE.to_string(),
        ..GridOptions::default()
    };
    let report = run_ablation_grid(&world, &base, &options).expect("grid runs");
    for cell in &report.cells {
        println!(
            "    {:<10} per-seed {:?} median {:?} median val loss {:?}",
            cell.cell.id, cell.per_seed, cell.median, cell.median_val_loss
        );
    }
    Grid {
        medians: report.cells.iter().map(|c| (c.cell.id.clone(), c.median)).collect(),
        elapsed: start.elapsed(),
    }
}

fn ablation_direction(grid: &Grid) -> Outcome {
    let base = grid.get("baseline");
    let full = grid.get("full");
    let tokens = grid.get("tokens");
    let sampling = grid.get("sampling");
    outcome(
        full >= base + GRID_MARGIN && tokens > base && sampling > base && grid.elapsed <= GRID_BUDGET,
        format!(
            "medians: baseline {base:.4}, tokens {tokens:.4}, sampling {sampling:.4}, full {full:.4} \
             (needs full >= baseline + {GRID_MARGIN}), {GRID_EPOCHS} epochs/run, grid {:.0}s",
            grid.elapsed.as_secs_f64()
        ),
    )
}

fn sigma_shape(grid: &Grid) -> Outcome {
    let at = |s: &str| grid.get(&format!("sigma={s}"));
    let (s0, s75, s1) = (at("0"), at("0.75"), at("1"));
    outcome(
        s75 >= s0 && s75 >= s1,
        format!(
            "medians: sigma=0 {s0:.4}, sigma=0.5 {:.4}, sigma=0.75 {s75:.4}, sigma=1 {s1:.4}",
            at("0.5")
        ),
    )
}

fn oracle_equivalences() -> Outcome {
    let start = Instant::now();
    let ap = common::oracles::ap_max_error(1000, 11);
    let nce = common::oracles::info_nce_max_error(100, 12);
    let resolve = common::oracles::resolve_mismatches(1000, 13);
    let scaling = common::oracles::scaling_violations(1000, 14);
    outcome(
        ap.is_some_and(|e| e <= AP_TOL) && nce <= NCE_TOL && resolve == 0 && scaling == 0,
        format!(
            "AP max err {ap:?}, InfoNCE max err {nce:.1e}, resolve mismatches {resolve}/1000, \
             scaling violations {scaling}/1000, {:.2}s",
            start.elapsed().as_secs_f64()
        ),
    )
}

fn template_direction(shared: &mut Shared) -> Outcome {
    let (world, ckpt) = shared.toy();
    let eval = Evaluator::new(ckpt, world).unwrap();
    let test = eval.embed_split(Split::Test).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for (visual, haptic) in TEMPLATE_PAIRS {
        let v = eval.zero_shot(&test, visual).unwrap().accuracy;
        let h = eval.zero_shot(&test, haptic).unwrap().accuracy;
        pass &= h >= v;
        parts.push(format!("{haptic:?} {h:.4} vs {visual:?} {v:.4}"));
    }
    outcome(pass, parts.join("; "))
}

/// gen-data -> train -> eval into `dir`, writing metrics JSON beside the checkpoint.
fn pipeline(dir: &Path) {
    let mut config = WorldConfig::default();
    for d in &mut config.datasets {
        d.size = 300;
    }
    let data = dir.join("data");
    write_dataset(&generate_world(&config, 7).unwrap(), &data).unwrap();
    let world = read_dataset(&data).unwrap();
    let train = TrainConfig {
        epochs: 2,
        seed: 3,
        ..TrainConfig::default()
    };
    let run = dir.join("run");
    let ckpt = fit_to_dir(&world, &train, &run).unwrap();
    let loaded = Checkpoint::load(&run).unwrap();
    let eval = Evaluator::new(&loaded, &world).unwrap();
    let test = eval.embed_split(Split::Test).unwrap();
    let metrics = json!({
        "zero_shot": eval.zero_shot(&test, TEMPLATE).unwrap(),
        "grasp": eval.grasp(&test).unwrap(),
        "retrieval": eval.retrieval(&test, tactile_core::embedding::Modality::Vision, TEMPLATE).unwrap(),
        "final": ckpt.final_metrics,
    });
    std::fs::write(dir.join("metrics.json"), serde_json::to_vec_pretty(&metrics).unwrap()).unwrap();
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn reproducibility() -> Outcome {
    let start = Instant::now();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    pipeline(b.path());
    let (fa, fb) = (files(a.path()), files(b.path()));
    let differing: Vec<&str> = fa
        .iter()
        .zip(&fb)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    let same = fa.len() == fb.len() && differing.is_empty();
    outcome(
        same,
        format!(
            "{} files compared, {} differ {:?}, {:.1}s",
            fa.len(),
            differing.len(),
            differing,
            start.elapsed().as_secs_f64()
        ),
    )
}

fn report(n: usize, gating: bool, o: &Outcome) -> bool {
    let verdict = if o.pass { "PASS" } else { "FAIL" };
    let note = if gating { "" } else { " [reported, not gating]" };
    println!("criterion {n}: {verdict}{note}: {}", o.detail);
    o.pass || !gating
}

fn main() {
    let selected: Vec<usize> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .filter_map(|a| a.parse().ok())
        .collect();
    let wanted = |n: usize| selected.is_empty() || selected.contains(&n);
    let mut shared = Shared::default();
    let mut ok = true;

    if wanted(1) {
        ok &= report(1, true, &closed_forms());
    }
    if wanted(2) {
        ok &= report(2, true, &gradient_contract());
    }
    if wanted(3) {
        ok &= report(3, true, &sampler_law());
    }
    if wanted(4) {
        ok &= report(4, true, &toy_alignment(&mut shared));
    }
    if wanted(5) || wanted(6) {
        let grid = run_grid();
        if wanted(5) {
            report(5, false, &ablation_direction(&grid));
        }
        if wanted(6) {
            report(6, false, &sigma_shape(&grid));
        }
    }
    if wanted(7) {
        ok &= report(7, true, &oracle_equivalences());
    }
    if wanted(8) {
        ok &= report(8, true, &template_direction(&mut shared));
    }
    if wanted(9) {
        ok &= report(9, true, &reproducibility());
    }
    if !ok {
        std::process::exit(1);
    }
}
