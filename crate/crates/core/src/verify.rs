//! Executable invariant checks. Used by `cogt verify`, the test suites and
//! the examples; each returns a [`CheckResult`] instead of panicking.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::category::{SyntacticCategory, N_CATEGORIES};
use crate::cgm::{schedule, Cgm, PredictionMode};
use crate::decoder::{Decoder, DecoderError, VisualFeatures};
use crate::mask::{compile, verify_no_leak};
use crate::scorer::{score_caption, score_caption_single_pass, ScoreError};
use crate::seed::rng_for;
use crate::subword::Caption;
use crate::tensor::{grad_check, grad_check_sampled, GradCheckReport, Real, Tensor, TensorError};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        CheckResult {
            name,
            passed,
            detail,
        }
    }
}

/// Head links of a random tree: nodes are attached in a random order, each
/// to a uniformly chosen node attached before it.
pub fn random_heads(n: usize, rng: &mut ChaCha8Rng) -> Vec<Option<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut heads = vec![None; n];
    for i in 1..n {
        heads[order[i]] = Some(order[rng.gen_range(0..i)]);
    }
    heads
}

/// Random caption over `vocab_size` ids with a random tree and categories.
pub fn random_caption(n: usize, vocab_size: usize, rng: &mut ChaCha8Rng) -> Caption {
    let heads = random_heads(n, rng);
    let categories = heads
        .iter()
        .map(|h| match h {
            None => SyntacticCategory::Root,
            Some(_) => SyntacticCategory::from_index(rng.gen_range(0..N_CATEGORIES))
                .expect("category index"),
        })
        .collect();
    let ids = (0..n).map(|_| rng.gen_range(0..vocab_size)).collect();
    Caption {
        ids,
        categories,
        heads,
    }
}

pub fn random_visual(slots: usize, dim: usize, rng: &mut ChaCha8Rng) -> VisualFeatures {
    let data = (0..slots * dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    VisualFeatures::new(Tensor::matrix(slots, dim, data).expect("shape"), "random")
        .expect("finite")
}

/// Ancestors by walking head links one step at a time.
fn naive_ancestors(heads: &[Option<usize>], j: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut cur = heads[j];
    while let Some(h) = cur {
        out.push(h);
        cur = heads[h];
    }
    out
}

const ALL_MODES: [PredictionMode; 4] = [
    PredictionMode::Cogt,
    PredictionMode::SequentialAr,
    PredictionMode::FullyParallel,
    PredictionMode::Mixed {
        parallel_fraction: PredictionMode::DEFAULT_PARALLEL_FRACTION,
    },
];

/// Compile plans for random trees in every mode and look for leaks.
pub fn leak_check(trees: usize, min_n: usize, max_n: usize, seed: u64) -> CheckResult {
    let mut rng = rng_for(seed, "verify/leak");
    let mut violations = 0;
    let mut plans = 0;
    for t in 0..trees {
        let n = rng.gen_range(min_n..=max_n);
        let cap = random_caption(n, 2, &mut rng);
        let cgm = Cgm::from_caption(&cap);
        for mode in ALL_MODES {
            let concrete = mode.resolve(seed, t as u64);
            match compile(&cgm, concrete) {
                Ok(plan) => {
                    plans += 1;
                    if !verify_no_leak(&plan) {
                        violations += 1;
                    }
                }
                Err(_) => violations += 1,
            }
        }
    }
    CheckResult::new(
        "leak-freeness",
        violations == 0,
        format!("{plans} plans, {violations} violations"),
    )
}

/// Levels partition the tokens and every ancestor sits in an earlier level.
pub fn schedule_check(trees: usize, min_n: usize, max_n: usize, seed: u64) -> CheckResult {
    let mut rng = rng_for(seed, "verify/schedule");
    let mut violations = 0;
    for _ in 0..trees {
        let n = rng.gen_range(min_n..=max_n);
        let heads = random_heads(n, &mut rng);
        let cats = vec![SyntacticCategory::Dep; n];
        let levels = schedule(&Cgm::from_heads(&heads, &cats));
        let mut level_of = vec![usize::MAX; n];
        let mut ok = true;
        for (l, level) in levels.iter().enumerate() {
            for &j in level {
                if j >= n || level_of[j] != usize::MAX {
                    ok = false;
                } else {
                    level_of[j] = l;
                }
            }
        }
        ok &= level_of.iter().all(|&l| l != usize::MAX);
        if ok {
            for j in 0..n {
                if naive_ancestors(&heads, j).iter().any(|&a| level_of[a] >= level_of[j]) {
                    ok = false;
                }
            }
        }
        if !ok {
            violations += 1;
        }
    }
    CheckResult::new(
        "schedule",
        violations == 0,
        format!("{trees} trees, {violations} violations"),
    )
}

fn same_bits<T: Real>(a: &[T], b: &[T]) -> bool {
    a.len() == b.len()
        && a
            .iter()
            .zip(b)
            .all(|(x, y)| x.to_f64_lossy().to_bits() == y.to_f64_lossy().to_bits())
}

/// Substituting visible tokens outside a token's ancestors (including the
/// token itself) must leave its masked-slot logits bit-identical.
pub fn independence_check<T: Real>(
    decoder: &Decoder<T>,
    trials: usize,
    seed: u64,
) -> Result<CheckResult, DecoderError> {
    let cfg = decoder.config().clone();
    let mut rng = rng_for(seed, "verify/independence");
    let max_n = cfg.max_positions.min(12);
    let mut violations = 0;
    for _ in 0..trials {
        let n = rng.gen_range(2..=max_n.max(2));
        let cap = random_caption(n, cfg.vocab_size, &mut rng);
        let visual = random_visual(cfg.visual_slots, cfg.visual_dim_in, &mut rng);
        let cgm = Cgm::from_caption(&cap);
        let plan = compile(&cgm, PredictionMode::Cogt).expect("concrete mode");
        let j = rng.gen_range(0..n);
        let mut ids = cap.ids.clone();
        for (k, id) in ids.iter_mut().enumerate() {
            if !cgm.is_ancestor(k, j) && cfg.vocab_size > 1 {
                let shift = rng.gen_range(1..cfg.vocab_size);
                *id = (*id + shift) % cfg.vocab_size;
            }
        }
        let before = decoder.forward(&cap, &plan, &visual, false, 0)?;
        let after = decoder.forward(&cap.with_ids(ids), &plan, &visual, false, 0)?;
        let v = cfg.vocab_size;
        if !same_bits(
            &before.data()[j * v..(j + 1) * v],
            &after.data()[j * v..(j + 1) * v],
        ) {
            violations += 1;
        }
    }
    Ok(CheckResult::new(
        "conditional-independence",
        violations == 0,
        format!("{trials} perturbations, {violations} violations"),
    ))
}

/// Under the parallel regime, permuting token identities changes nothing.
pub fn permutation_check<T: Real>(
    decoder: &Decoder<T>,
    trials: usize,
    seed: u64,
) -> Result<CheckResult, DecoderError> {
    let cfg = decoder.config().clone();
    let mut rng = rng_for(seed, "verify/permutation");
    let mut violations = 0;
    for _ in 0..trials {
        let n = rng.gen_range(2..=cfg.max_positions.clamp(2, 10));
        let cap = random_caption(n, cfg.vocab_size, &mut rng);
        let visual = random_visual(cfg.visual_slots, cfg.visual_dim_in, &mut rng);
        let plan = compile(&Cgm::from_caption(&cap), PredictionMode::FullyParallel)
            .expect("concrete mode");
        let mut ids = cap.ids.clone();
        ids.shuffle(&mut rng);
        let before = decoder.forward(&cap, &plan, &visual, false, 0)?;
        let after = decoder.forward(&cap.with_ids(ids), &plan, &visual, false, 0)?;
        if !same_bits(before.data(), after.data()) {
            violations += 1;
        }
    }
    Ok(CheckResult::new(
        "parallel-permutation",
        violations == 0,
        format!("{trials} permutations, {violations} violations"),
    ))
}

/// Sum of `exp(score)` over every caption of the given tree shape.
pub fn caption_mass<T: Real>(
    decoder: &Decoder<T>,
    heads: &[Option<usize>],
    categories: &[SyntacticCategory],
    visual: &VisualFeatures,
    mode: PredictionMode,
) -> Result<f64, ScoreError> {
    let n = heads.len();
    let v = decoder.config().vocab_size;
    let total = v.pow(n as u32);
    let mut mass = 0.0;
    for code in 0..total {
        let mut rest = code;
        let ids = (0..n)
            .map(|_| {
                let id = rest % v;
                rest /= v;
                id
            })
            .collect();
        let cap = Caption {
            ids,
            categories: categories.to_vec(),
            heads: heads.to_vec(),
        };
        mass += score_caption(decoder, &cap, visual, mode)?.exp();
    }
    Ok(mass)
}

/// The normalized regimes must put probability 1 on the set of captions.
/// Uses the longest tree (up to 3 tokens) whose caption space stays under
/// `budget` captions.
pub fn normalization_check<T: Real>(
    decoder: &Decoder<T>,
    seed: u64,
    tol: f64,
    budget: usize,
) -> Result<CheckResult, ScoreError> {
    let cfg = decoder.config();
    let mut n = 3;
    while n > 1 && cfg.vocab_size.pow(n as u32) > budget {
        n -= 1;
    }
    let mut rng = rng_for(seed, "verify/normalization");
    let shape = random_caption(n, cfg.vocab_size, &mut rng);
    let visual = random_visual(cfg.visual_slots, cfg.visual_dim_in, &mut rng);
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for mode in [
        PredictionMode::Cogt,
        PredictionMode::SequentialAr,
        PredictionMode::FullyParallel,
    ] {
        let mass = caption_mass(decoder, &shape.heads, &shape.categories, &visual, mode)?;
        worst = worst.max((mass - 1.0).abs());
        parts.push(format!("{mode}={mass:.12}"));
    }
    Ok(CheckResult::new(
        "normalization",
        worst <= tol,
        format!("{n} tokens over {} ids: {}", cfg.vocab_size, parts.join(" ")),
    ))
}

/// Level-order and single-pass scores agree on random captions.
pub fn scoring_path_check<T: Real>(
    decoder: &Decoder<T>,
    captions: usize,
    seed: u64,
    tol: f64,
) -> Result<CheckResult, ScoreError> {
    let cfg = decoder.config().clone();
    let mut rng = rng_for(seed, "verify/paths");
    let mut worst: f64 = 0.0;
    for c in 0..captions {
        let n = rng.gen_range(1..=cfg.max_positions.min(16));
        let cap = random_caption(n, cfg.vocab_size, &mut rng);
        let visual = random_visual(cfg.visual_slots, cfg.visual_dim_in, &mut rng);
        let mode = [
            PredictionMode::Cogt,
            PredictionMode::SequentialAr,
            PredictionMode::FullyParallel,
        ][c % 3];
        let level = score_caption(decoder, &cap, &visual, mode)?;
        let single = score_caption_single_pass(decoder, &cap, &visual, mode)?;
        worst = worst.max((level - single).abs());
    }
    Ok(CheckResult::new(
        "scoring-paths",
        worst < tol,
        format!("{captions} captions, max |delta| = {worst:.3e}"),
    ))
}

fn as_tensor_error(e: DecoderError) -> TensorError {
    match e {
        DecoderError::Tensor(t) => t,
        other => TensorError::ShapeMismatch {
            op: "decoder",
            detail: other.to_string(),
        },
    }
}

/// Finite-difference check of the per-token training loss. With `train`
/// set, dropout runs with the fixed `dropout_key` so the loss stays a
/// deterministic function. `per_param` limits the checked elements.
#[allow(clippy::too_many_arguments)]
pub fn decoder_grad_check(
    decoder: &Decoder<f64>,
    caption: &Caption,
    visual: &VisualFeatures,
    mode: PredictionMode,
    train: bool,
    dropout_key: u64,
    h: f64,
    tol: f64,
    per_param: Option<usize>,
) -> Result<GradCheckReport, TensorError> {
    let plan = compile(&Cgm::from_caption(caption), mode.scoring_regime()).map_err(|e| {
        TensorError::ShapeMismatch {
            op: "compile",
            detail: e.to_string(),
        }
    })?;
    let inv_tokens = 1.0 / plan.predict_slots().len() as f64;
    let f = |g: &mut crate::tensor::Graph<f64>, vars: &[crate::tensor::Var]| {
        g.set_dropout_key(dropout_key);
        let loss = decoder
            .loss_on(g, vars, caption, &plan, visual, train)
            .map_err(as_tensor_error)?;
        Ok(g.scale(loss, inv_tokens))
    };
    match per_param {
        None => grad_check(f, decoder.params(), h, tol),
        Some(k) => grad_check_sampled(f, decoder.params(), h, tol, k),
    }
}
