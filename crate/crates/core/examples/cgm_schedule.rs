//! Build the causal graph of a caption tree and print each token's
//! ancestors and the level schedule used for generation under every mode.

use cogt::cgm::{build_cgm, mean_parent_count, schedule_for, PredictionMode};
use cogt::subword::build_vocab;
use cogt::subword::tokenize_tree;
use cogt::synthbench::Description;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let text = "a small red cube above a big blue ball";
    let desc = Description::parse(text).ok_or("not a template caption")?;
    let tree = desc.tree("demo");
    let vocab = build_vocab(&[text], 64)?;
    let cgm = build_cgm(&tokenize_tree(&tree, &vocab));

    for j in 0..cgm.len() {
        let anc: Vec<&str> = cgm.ancestors(j).iter().map(|&a| tree.nodes()[a].form.as_str()).collect();
        println!(
            "{:>6} ({:<5}) depth {} ancestors {:?}",
            tree.nodes()[j].form,
            cgm.category(j).label(),
            cgm.depth(j),
            anc
        );
    }
    println!("mean parent count {:.3}\n", mean_parent_count(&cgm));

    for mode in [PredictionMode::Cogt, PredictionMode::SequentialAr, PredictionMode::FullyParallel] {
        let levels: Vec<Vec<&str>> = schedule_for(&cgm, mode)
            .iter()
            .map(|l| l.iter().map(|&j| tree.nodes()[j].form.as_str()).collect())
            .collect();
        println!("{mode:>8}: {} levels {levels:?}", levels.len());
    }
    Ok(())
}
