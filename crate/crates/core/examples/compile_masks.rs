//! Compile attention plans for a small tree, draw the slot masks, check
//! them for leaks, and round-trip the binary encoding.

use cogt::cgm::{Cgm, PredictionMode};
use cogt::category::SyntacticCategory;
use cogt::mask::{compile, verify_no_leak, AttentionPlan};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // "a red cube": det and amod both attach to the root noun.
    let heads = [Some(2), Some(2), None];
    let cats = [SyntacticCategory::Det, SyntacticCategory::Amod, SyntacticCategory::Root];
    let cgm = Cgm::from_heads(&heads, &cats);

    let mut bytes = Vec::new();
    for mode in [
        PredictionMode::Cogt,
        PredictionMode::SequentialAr,
        PredictionMode::FullyParallel,
        PredictionMode::mixed().resolve(42, 0),
    ] {
        let plan = compile(&cgm, mode)?;
        println!("{mode}: rows are queries, m = masked slot, v = visible slot");
        let n = plan.n();
        let label = |s: usize| if s < n { format!("m{s}") } else { format!("v{}", s - n) };
        print!("     ");
        for k in 0..plan.slots() {
            print!("{:>3}", label(k));
        }
        println!();
        for q in 0..plan.slots() {
            print!("  {:>3}", label(q));
            for k in 0..plan.slots() {
                print!("{:>3}", if plan.allowed(q, k) { "#" } else { "." });
            }
            println!();
        }
        println!("  leak-free: {}\n", verify_no_leak(&plan));
        bytes.extend(plan.encode());
    }
    let decoded = AttentionPlan::decode_all(&bytes)?;
    println!("{} plans in {} bytes, decoded {}", 4, bytes.len(), decoded.len());
    Ok(())
}
