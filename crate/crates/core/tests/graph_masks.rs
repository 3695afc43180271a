use cogt::category::SyntacticCategory;
use cogt::cgm::{mean_parent_count, schedule, schedule_for, Cgm, PredictionMode};
use cogt::mask::{compile, verify_no_leak, AttentionPlan, MaskError};
use cogt::seed::rng_for;
use cogt::verify::{leak_check, random_heads, schedule_check};
use proptest::prelude::*;

fn cgm_for(heads: &[Option<usize>]) -> Cgm {
    let cats: Vec<_> = heads
        .iter()
        .map(|h| if h.is_none() { SyntacticCategory::Root } else { SyntacticCategory::Dep })
        .collect();
    Cgm::from_heads(heads, &cats)
}

/// Reachability by repeated boolean matrix squaring.
fn closure_matrix(heads: &[Option<usize>]) -> Vec<Vec<bool>> {
    let n = heads.len();
    let mut r = vec![vec![false; n]; n];
    for (j, h) in heads.iter().enumerate() {
        if let Some(h) = h {
            r[*h][j] = true;
        }
    }
    let mut steps = 1;
    while steps < n {
        let mut next = r.clone();
        for i in 0..n {
            for k in 0..n {
                if r[i][k] {
                    for j in 0..n {
                        if r[k][j] {
                            next[i][j] = true;
                        }
                    }
                }
            }
        }
        r = next;
        steps *= 2;
    }
    r
}

#[test]
fn ancestors_match_transitive_closure_on_large_trees() {
    for seed in 0..5 {
        let mut rng = rng_for(seed, "test/closure");
        let heads = random_heads(200, &mut rng);
        let cgm = cgm_for(&heads);
        let reach = closure_matrix(&heads);
        for j in 0..200 {
            let expect: Vec<usize> = (0..200).filter(|&i| reach[i][j]).collect();
            assert_eq!(cgm.ancestors(j), expect.as_slice(), "node {j}");
        }
    }
}

#[test]
fn mean_parent_count_of_known_shapes() {
    // star: every leaf has one parent
    let star: Vec<Option<usize>> = std::iter::once(None).chain((1..5).map(|_| Some(0))).collect();
    assert!((mean_parent_count(&cgm_for(&star)) - 4.0 / 5.0).abs() < 1e-12);
    // chain of 4: 0 + 1 + 2 + 3 ancestors
    let chain = [None, Some(0), Some(1), Some(2)];
    assert!((mean_parent_count(&cgm_for(&chain)) - 1.5).abs() < 1e-12);
    assert_eq!(mean_parent_count(&cgm_for(&[None])), 0.0);
}

#[test]
fn chain_schedule_is_sequential() {
    let chain = [None, Some(0), Some(1), Some(2)];
    let levels = schedule(&cgm_for(&chain));
    assert_eq!(levels, vec![vec![0], vec![1], vec![2], vec![3]]);
}

#[test]
fn mixed_mode_cannot_compile_unresolved() {
    let cgm = cgm_for(&[None, Some(0)]);
    assert_eq!(compile(&cgm, PredictionMode::mixed()), Err(MaskError::UnresolvedMixedMode));
}

#[test]
fn library_checks_pass() {
    let leak = leak_check(300, 2, 32, 3);
    assert!(leak.passed, "{}", leak.detail);
    let sched = schedule_check(300, 2, 32, 3);
    assert!(sched.passed, "{}", sched.detail);
}

#[test]
fn handmade_leaky_plan_is_caught() {
    let cgm = cgm_for(&[None, Some(0)]);
    let mut plan = compile(&cgm, PredictionMode::Cogt).unwrap();
    // masked slot of token 1 reads its own visible slot through token 0
    plan.set(plan.visible(0), plan.visible(1), true);
    assert!(!verify_no_leak(&plan));
    let mut direct = compile(&cgm, PredictionMode::FullyParallel).unwrap();
    direct.set(direct.masked(0), direct.visible(0), true);
    assert!(!verify_no_leak(&direct));
}

fn arb_heads() -> impl Strategy<Value = Vec<Option<usize>>> {
    (1usize..33, any::<u64>()).prop_map(|(n, seed)| random_heads(n, &mut rng_for(seed, "prop/heads")))
}

fn arb_mode() -> impl Strategy<Value = PredictionMode> {
    prop_oneof![
        Just(PredictionMode::Cogt),
        Just(PredictionMode::SequentialAr),
        Just(PredictionMode::FullyParallel),
        (any::<u64>(), any::<u64>()).prop_map(|(s, k)| PredictionMode::mixed().resolve(s, k)),
    ]
}

proptest! {
    #[test]
    fn every_compiled_plan_is_leak_free(heads in arb_heads(), mode in arb_mode()) {
        let plan = compile(&cgm_for(&heads), mode).unwrap();
        prop_assert!(verify_no_leak(&plan));
    }

    #[test]
    fn masked_rows_follow_the_regime(heads in arb_heads(), mode in arb_mode()) {
        let cgm = cgm_for(&heads);
        let plan = compile(&cgm, mode).unwrap();
        let n = heads.len();
        for j in 0..n {
            for k in 0..n {
                let expect_visible = match mode {
                    PredictionMode::Cogt => cgm.is_ancestor(k, j),
                    PredictionMode::SequentialAr => k < j,
                    _ => false,
                };
                prop_assert_eq!(plan.allowed(plan.masked(j), plan.visible(k)), expect_visible);
                prop_assert_eq!(plan.allowed(plan.masked(j), plan.masked(k)), j == k);
                // visible slots never read masked slots
                prop_assert!(!plan.allowed(plan.visible(j), plan.masked(k)));
            }
        }
    }

    #[test]
    fn plan_encoding_round_trips(heads in arb_heads(), mode in arb_mode()) {
        let plan = compile(&cgm_for(&heads), mode).unwrap();
        let mut bytes = plan.encode();
        bytes.extend(plan.encode());
        let back = AttentionPlan::decode_all(&bytes).unwrap();
        prop_assert_eq!(back, vec![plan.clone(), plan]);
    }

    #[test]
    fn truncated_plan_bytes_are_rejected(heads in arb_heads(), cut in 1usize..8) {
        let bytes = compile(&cgm_for(&heads), PredictionMode::Cogt).unwrap().encode();
        let cut = cut.min(bytes.len());
        prop_assert!(AttentionPlan::decode_all(&bytes[..bytes.len() - cut]).is_err());
    }

    #[test]
    fn schedules_partition_and_respect_ancestry(heads in arb_heads(), mode in arb_mode()) {
        let cgm = cgm_for(&heads);
        let levels = schedule_for(&cgm, mode);
        let mut level_of = vec![usize::MAX; heads.len()];
        for (l, level) in levels.iter().enumerate() {
            for &j in level {
                prop_assert_eq!(level_of[j], usize::MAX);
                level_of[j] = l;
            }
        }
        prop_assert!(level_of.iter().all(|&l| l != usize::MAX));
        if mode == PredictionMode::Cogt {
            for j in 0..heads.len() {
                for &a in cgm.ancestors(j) {
                    prop_assert!(level_of[a] < level_of[j]);
                }
            }
        }
    }

    #[test]
    fn mixed_resolution_is_deterministic(seed in any::<u64>(), key in any::<u64>()) {
        let a = PredictionMode::mixed().resolve(seed, key);
        prop_assert_eq!(a, PredictionMode::mixed().resolve(seed, key));
        prop_assert!(a == PredictionMode::FullyParallel || a == PredictionMode::SequentialAr);
    }
}
