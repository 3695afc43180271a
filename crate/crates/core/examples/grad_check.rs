//! Compare the decoder's analytic gradients with central differences in
//! 64-bit arithmetic, including dropout under a fixed key.

use cogt::cgm::PredictionMode;
use cogt::category::N_CATEGORIES;
use cogt::decoder::{Decoder, DecoderConfig};
use cogt::seed::rng_for;
use cogt::verify::{decoder_grad_check, random_caption, random_visual};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = DecoderConfig {
        blocks: 2,
        heads: 2,
        embed_dim: 8,
        vocab_size: 10,
        max_positions: 8,
        n_categories: N_CATEGORIES,
        dropout_p: 0.1,
        visual_dim_in: 4,
        visual_slots: 4,
    };
    let decoder = Decoder::<f64>::init(cfg.clone(), 5)?;
    let mut rng = rng_for(5, "example/grad");
    let caption = random_caption(6, cfg.vocab_size, &mut rng);
    let visual = random_visual(cfg.visual_slots, cfg.visual_dim_in, &mut rng);

    for (mode, train) in [(PredictionMode::Cogt, false), (PredictionMode::Cogt, true), (PredictionMode::SequentialAr, false)] {
        let report = decoder_grad_check(&decoder, &caption, &visual, mode, train, 99, 1e-5, 1e-4, None)?;
        println!(
            "{mode:>5} dropout={train:<5} {} tensors, max relative error {:.2e} -> {}",
            report.params.len(),
            report.max_rel_error(),
            if report.passed() { "ok" } else { "FAIL" }
        );
    }
    Ok(())
}
