//! Causal graphical model over caption tokens: ancestor sets and the
//! level-order generation schedule.

use std::fmt;
use std::str::FromStr;

use crate::category::SyntacticCategory;
use crate::seed::derive_seed;
use crate::subword::{Caption, TokenizedTree};

/// Which factorization the decoder is trained and scored under.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PredictionMode {
    /// Each token conditioned on its tree ancestors.
    Cogt,
    /// Each token conditioned on every earlier token.
    SequentialAr,
    /// Tokens conditionally independent given the image.
    FullyParallel,
    /// Per sample: parallel with probability `parallel_fraction`, otherwise AR.
    Mixed { parallel_fraction: f64 },
}

impl PredictionMode {
    pub const DEFAULT_PARALLEL_FRACTION: f64 = 0.75;

    pub fn mixed() -> Self {
        PredictionMode::Mixed {
            parallel_fraction: Self::DEFAULT_PARALLEL_FRACTION,
        }
    }

    pub fn is_concrete(&self) -> bool {
        !matches!(self, PredictionMode::Mixed { .. })
    }

    /// Resolve `Mixed` to a concrete regime with a Bernoulli draw keyed by
    /// `(seed, sample_key)`. Concrete modes are returned unchanged.
    pub fn resolve(self, seed: u64, sample_key: u64) -> PredictionMode {
        match self {
            PredictionMode::Mixed { parallel_fraction } => {
                let bits = derive_seed(seed, &format!("mixed/{sample_key}"));
                let u = (bits >> 11) as f64 / (1u64 << 53) as f64;
                if u < parallel_fraction {
                    PredictionMode::FullyParallel
                } else {
                    PredictionMode::SequentialAr
                }
            }
            other => other,
        }
    }

    /// The regime used when scoring under a model trained in this mode.
    /// Mixed-trained models are scored autoregressively.
    pub fn scoring_regime(self) -> PredictionMode {
        match self {
            PredictionMode::Mixed { .. } => PredictionMode::SequentialAr,
            other => other,
        }
    }

    pub fn code(&self) -> u8 {
        match self {
            PredictionMode::Cogt => 0,
            PredictionMode::SequentialAr => 1,
            PredictionMode::FullyParallel => 2,
            PredictionMode::Mixed { .. } => 3,
        }
    }
}

impl fmt::Display for PredictionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PredictionMode::Cogt => f.pad("cogt"),
            PredictionMode::SequentialAr => f.pad("ar"),
            PredictionMode::FullyParallel => f.pad("parallel"),
            PredictionMode::Mixed { parallel_fraction } => {
                if (*parallel_fraction - Self::DEFAULT_PARALLEL_FRACTION).abs() < 1e-12 {
                    f.pad("mixed")
                } else {
                    f.pad(&format!("mixed:{parallel_fraction}"))
                }
            }
        }
    }
}

impl FromStr for PredictionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cogt" => Ok(PredictionMode::Cogt),
            "ar" | "sequential-ar" => Ok(PredictionMode::SequentialAr),
            "parallel" | "fully-parallel" => Ok(PredictionMode::FullyParallel),
            "mixed" => Ok(PredictionMode::mixed()),
            other => {
                if let Some(frac) = other.strip_prefix("mixed:") {
                    let parallel_fraction: f64 =
                        frac.parse().map_err(|_| format!("bad fraction `{frac}`"))?;
                    if !(0.0..=1.0).contains(&parallel_fraction) {
                        return Err(format!("parallel fraction {parallel_fraction} outside [0,1]"));
                    }
                    Ok(PredictionMode::Mixed { parallel_fraction })
                } else {
                    Err(format!(
                        "unknown mode `{other}` (expected cogt, ar, parallel or mixed)"
                    ))
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cgm {
    ancestors: Vec<Vec<usize>>,
    categories: Vec<SyntacticCategory>,
    levels: Vec<Vec<usize>>,
    depth: Vec<usize>,
}

impl Cgm {
    /// Build from head links. The heads must already form a valid tree.
    pub fn from_heads(heads: &[Option<usize>], categories: &[SyntacticCategory]) -> Self {
        assert_eq!(heads.len(), categories.len());
        let n = heads.len();
        let mut ancestors: Vec<Option<Vec<usize>>> = vec![None; n];
        for j in 0..n {
            resolve_ancestors(heads, &mut ancestors, j);
        }
        let ancestors: Vec<Vec<usize>> = ancestors
            .into_iter()
            .map(|a| {
                let mut a = a.expect("resolved");
                a.sort_unstable();
                a
            })
            .collect();
        let depth: Vec<usize> = ancestors.iter().map(Vec::len).collect();
        let max_depth = depth.iter().copied().max().unwrap_or(0);
        let mut levels = vec![Vec::new(); if n == 0 { 0 } else { max_depth + 1 }];
        for (j, &d) in depth.iter().enumerate() {
            levels[d].push(j);
        }
        Cgm {
            ancestors,
            categories: categories.to_vec(),
            levels,
            depth,
        }
    }

    pub fn from_caption(caption: &Caption) -> Self {
        Self::from_heads(&caption.heads, &caption.categories)
    }

    pub fn len(&self) -> usize {
        self.ancestors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ancestors.is_empty()
    }

    /// Sorted transitive head closure of `j`, excluding `j`.
    pub fn ancestors(&self, j: usize) -> &[usize] {
        &self.ancestors[j]
    }

    pub fn is_ancestor(&self, i: usize, j: usize) -> bool {
        self.ancestors[j].binary_search(&i).is_ok()
    }

    pub fn category(&self, j: usize) -> SyntacticCategory {
        self.categories[j]
    }

    pub fn depth(&self, j: usize) -> usize {
        self.depth[j]
    }

    pub fn levels(&self) -> &[Vec<usize>] {
        &self.levels
    }
}

// Iterative so deep chains do not recurse.
fn resolve_ancestors(heads: &[Option<usize>], memo: &mut [Option<Vec<usize>>], j: usize) {
    let mut stack = vec![j];
    while let Some(&cur) = stack.last() {
        if memo[cur].is_some() {
            stack.pop();
            continue;
        }
        match heads[cur] {
            None => {
                memo[cur] = Some(Vec::new());
                stack.pop();
            }
            Some(h) => match &memo[h] {
                Some(parent) => {
                    let mut mine = parent.clone();
                    mine.push(h);
                    memo[cur] = Some(mine);
                    stack.pop();
                }
                None => stack.push(h),
            },
        }
    }
}

pub fn build_cgm(tree: &TokenizedTree) -> Cgm {
    Cgm::from_heads(tree.heads(), &tree.caption().categories)
}

/// Level-order generation schedule: tokens grouped by tree depth, ascending.
pub fn schedule(cgm: &Cgm) -> Vec<Vec<usize>> {
    cgm.levels.clone()
}

/// Prediction schedule for a concrete regime: tree levels for Cogt, one token
/// at a time for SequentialAr, everything at once for FullyParallel.
pub fn schedule_for(cgm: &Cgm, mode: PredictionMode) -> Vec<Vec<usize>> {
    match mode.scoring_regime() {
        PredictionMode::Cogt => schedule(cgm),
        PredictionMode::SequentialAr => (0..cgm.len()).map(|j| vec![j]).collect(),
        PredictionMode::FullyParallel => vec![(0..cgm.len()).collect()],
        PredictionMode::Mixed { .. } => unreachable!("scoring regime is concrete"),
    }
}

/// Mean ancestor-set size: the average number of textual parents per token.
pub fn mean_parent_count(cgm: &Cgm) -> f64 {
    if cgm.is_empty() {
        return 0.0;
    }
    cgm.ancestors.iter().map(Vec::len).sum::<usize>() as f64 / cgm.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cats(n: usize) -> Vec<SyntacticCategory> {
        vec![SyntacticCategory::Dep; n]
    }

    #[test]
    fn one_node() {
        let cgm = Cgm::from_heads(&[None], &cats(1));
        assert!(cgm.ancestors(0).is_empty());
        assert_eq!(cgm.levels(), &[vec![0]]);
        assert_eq!(mean_parent_count(&cgm), 0.0);
    }

    #[test]
    fn chain_is_sequential() {
        let heads = [None, Some(0), Some(1), Some(2)];
        let cgm = Cgm::from_heads(&heads, &cats(4));
        assert_eq!(schedule(&cgm), vec![vec![0], vec![1], vec![2], vec![3]]);
        assert_eq!(cgm.ancestors(3), &[0, 1, 2]);
        assert_eq!(mean_parent_count(&cgm), 1.5);
    }

    #[test]
    fn chain_mean_closed_form() {
        for n in 1..30usize {
            let heads: Vec<_> = (0..n).map(|i| i.checked_sub(1)).collect();
            let cgm = Cgm::from_heads(&heads, &cats(n));
            assert!((mean_parent_count(&cgm) - (n as f64 - 1.0) / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn star_has_two_levels() {
        let mut heads = vec![None];
        heads.extend(std::iter::repeat_n(Some(0), 9));
        let cgm = Cgm::from_heads(&heads, &cats(10));
        let levels = schedule(&cgm);
        assert_eq!(levels.len(), 2);
        assert_eq!(levels[1].len(), 9);
    }

    #[test]
    fn complete_binary_tree_mean_is_mean_depth() {
        for d in 0..7u32 {
            let n = (1usize << (d + 1)) - 1;
            let heads: Vec<_> = (0..n).map(|i| if i == 0 { None } else { Some((i - 1) / 2) }).collect();
            let cgm = Cgm::from_heads(&heads, &cats(n));
            // direct sum: level k holds 2^k nodes at depth k
            let direct: usize = (0..=d).map(|k| (1usize << k) * k as usize).sum();
            assert!((mean_parent_count(&cgm) - direct as f64 / n as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn mode_parsing_and_resolution() {
        assert_eq!("cogt".parse::<PredictionMode>().unwrap(), PredictionMode::Cogt);
        assert_eq!("mixed".parse::<PredictionMode>().unwrap(), PredictionMode::mixed());
        assert_eq!(
            "mixed:0.5".parse::<PredictionMode>().unwrap(),
            PredictionMode::Mixed { parallel_fraction: 0.5 }
        );
        assert!("mixed:1.5".parse::<PredictionMode>().is_err());
        assert!("bogus".parse::<PredictionMode>().is_err());
        for m in ["cogt", "ar", "parallel", "mixed", "mixed:0.25"] {
            let mode: PredictionMode = m.parse().unwrap();
            assert_eq!(mode.to_string().parse::<PredictionMode>().unwrap(), mode);
        }
        let all_parallel = PredictionMode::Mixed { parallel_fraction: 1.0 };
        let never = PredictionMode::Mixed { parallel_fraction: 0.0 };
        for k in 0..100 {
            assert_eq!(all_parallel.resolve(1, k), PredictionMode::FullyParallel);
            assert_eq!(never.resolve(1, k), PredictionMode::SequentialAr);
        }
        assert_eq!(PredictionMode::Cogt.resolve(3, 4), PredictionMode::Cogt);
    }

    #[test]
    fn schedules_per_regime() {
        let heads = [Some(1), None, Some(1)];
        let cgm = Cgm::from_heads(&heads, &cats(3));
        assert_eq!(schedule_for(&cgm, PredictionMode::Cogt), vec![vec![1], vec![0, 2]]);
        assert_eq!(
            schedule_for(&cgm, PredictionMode::SequentialAr),
            vec![vec![0], vec![1], vec![2]]
        );
        assert_eq!(schedule_for(&cgm, PredictionMode::FullyParallel), vec![vec![0, 1, 2]]);
    }
}
