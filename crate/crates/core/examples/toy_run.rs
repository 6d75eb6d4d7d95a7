//! One seeded toy run with every metric printed.
//!
//! `cargo run --release --example toy_run -- [epochs] [tokens] [mix] [seed] [sigma]`;
//! `WORLD=world.json` replaces the default world.

use std::time::Instant;

use tactile_core::datagen::{generate_world, Split, WorldConfig};
use tactile_core::embedding::Modality;
use tactile_core::eval::{probe, Evaluator, ProbeConfig};
use tactile_core::prompts::DEFAULT_TEMPLATES;
use tactile_core::trainer::{TrainConfig, Trainer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(30);
    let tokens: bool = args.next().map(|s| s.parse()).transpose()?.unwrap_or(true);
    let mix: bool = args.next().map(|s| s.parse()).transpose()?.unwrap_or(true);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    let sigma: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0.75);
    let world_config: WorldConfig = match std::env::var("WORLD") {
        Ok(path) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
        Err(_) => WorldConfig::default(),
    };
    let world = generate_world(&world_config, 7)?;
    let config = TrainConfig {
        epochs,
        use_sensor_tokens: tokens,
        use_mix_sampling: mix,
        seed,
        sigma,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(&world, config)?;
    let t = Instant::now();
    while !trainer.is_done() {
        trainer.run_epochs(1)?;
        let r = trainer.history().last().unwrap();
        if r.epoch % 5 == 0 || r.epoch == 1 {
            println!("epoch {} loss {:.4} lr {:.2e} t {:.1}s", r.epoch, r.loss, r.lr, t.elapsed().as_secs_f64());
        }
    }
    let ckpt = trainer.finish()?;
    println!("final {:?}", ckpt.final_metrics);
    let eval = Evaluator::new(&ckpt, &world)?;
    let test = eval.embed_split(Split::Test)?;
    for tpl in DEFAULT_TEMPLATES {
        println!("zero-shot {:?}: {:.4}", tpl, eval.zero_shot(&test, tpl)?.accuracy);
    }
    println!("grasp {:.4}", eval.grasp(&test)?.accuracy);
    println!("retrieval vision {:?}", eval.retrieval(&test, Modality::Vision, DEFAULT_TEMPLATES[0])?);
    let train = eval.embed_split(Split::Train)?;
    println!("probe {:?}", probe(&train, &test, &ProbeConfig::default())?);
    println!("total {:.1}s", t.elapsed().as_secs_f64());
    Ok(())
}
