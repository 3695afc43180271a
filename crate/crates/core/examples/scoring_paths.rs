//! Score captions with an untrained decoder: probabilities over the full
//! caption space sum to one, and level-order generation matches the
//! single teacher-forced pass.

use cogt::cgm::PredictionMode;
use cogt::category::N_CATEGORIES;
use cogt::decoder::{Decoder, DecoderConfig};
use cogt::scorer::{score_caption, score_caption_single_pass};
use cogt::seed::rng_for;
use cogt::verify::{caption_mass, random_caption, random_visual};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = DecoderConfig {
        blocks: 2,
        heads: 2,
        embed_dim: 16,
        vocab_size: 3,
        max_positions: 16,
        n_categories: N_CATEGORIES,
        dropout_p: 0.1,
        visual_dim_in: 8,
        visual_slots: 4,
    };
    let decoder = Decoder::<f64>::init(cfg.clone(), 11)?;
    let mut rng = rng_for(11, "example/paths");
    let shape = random_caption(3, cfg.vocab_size, &mut rng);
    let visual = random_visual(cfg.visual_slots, cfg.visual_dim_in, &mut rng);
    println!("tree heads {:?}", shape.heads);
    for mode in [PredictionMode::Cogt, PredictionMode::SequentialAr, PredictionMode::FullyParallel] {
        let mass = caption_mass(&decoder, &shape.heads, &shape.categories, &visual, mode)?;
        println!("{mode:>8}: sum over 27 captions of P = {mass:.12}");
    }

    let cap = random_caption(10, cfg.vocab_size, &mut rng);
    for mode in [PredictionMode::Cogt, PredictionMode::SequentialAr, PredictionMode::FullyParallel] {
        let a = score_caption(&decoder, &cap, &visual, mode)?;
        let b = score_caption_single_pass(&decoder, &cap, &visual, mode)?;
        println!("{mode:>8}: level-order {a:.12} single-pass {b:.12} |delta| {:.1e}", (a - b).abs());
    }
    Ok(())
}
