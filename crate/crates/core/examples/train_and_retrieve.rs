//! The whole pipeline in miniature: synthesize a dataset, train a small
//! decoder in each prediction mode, and compare retrieval accuracy.
//!
//! `cargo run --release --example train_and_retrieve -- [scenes] [steps]`

use cogt::cgm::PredictionMode;
use cogt::dataset::load_dataset;
use cogt::decoder::DecoderConfig;
use cogt::pipeline::{synthesize, SynthOptions, TASKS_FILE};
use cogt::scorer::{load_tasks, Scorer, Tier};
use cogt::synthbench::TemplateParser;
use cogt::trainer::{train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>());
    let scenes = args.next().transpose()?.unwrap_or(600);
    let steps = args.next().transpose()?.unwrap_or(300);

    let dir = tempfile::tempdir()?;
    let summary = synthesize(dir.path(), &SynthOptions::new(scenes, 1))?;
    println!("{summary:?}");
    let data = load_dataset(dir.path())?;
    let tasks = load_tasks(&dir.path().join(TASKS_FILE))?;
    let first = &data.samples[0].visual;
    let mut dcfg = DecoderConfig::desk(data.vocab.len(), first.dim(), first.slots());
    dcfg.embed_dim = 32;

    for mode in [PredictionMode::Cogt, PredictionMode::FullyParallel] {
        let cfg = TrainConfig {
            steps: Some(steps),
            warmup_steps: steps / 10,
            mode,
            seed: 1,
            ..TrainConfig::default()
        };
        let outcome = train(&data, &cfg, &dcfg)?;
        let scorer = Scorer::new(&outcome.best.decoder, &data.vocab, &TemplateParser, mode);
        let report = scorer.evaluate(&tasks)?;
        println!(
            "\n{mode}: best val loss {:.3} at step {}, swap accuracy {:.3}",
            outcome.best_val_loss.unwrap_or(f64::NAN),
            outcome.best_step,
            report.accuracy(Tier::Swap).unwrap_or(f64::NAN)
        );
        print!("{}", report.to_table());
    }
    Ok(())
}
