use cogt::category::N_CATEGORIES;
use cogt::cgm::{Cgm, PredictionMode};
use cogt::conllu::parse_conllu;
use cogt::decoder::{Decoder, DecoderConfig};
use cogt::mask::compile;
use cogt::scorer::{argmax_lowest, RetrievalTask, ScoreError, ScorePath, Scorer, TreeLookup};
use cogt::seed::rng_for;
use cogt::subword::{build_vocab, Vocab};
use cogt::synthbench::TemplateParser;
use cogt::verify::random_visual;
use proptest::prelude::*;

const CAPTIONS: [&str; 5] = [
    "a small red cube",
    "a big blue ball",
    "a small red cube above a big blue ball",
    "a big blue ball below a small red cube",
    "a medium green cone near a small white disk",
];

fn setup() -> (Decoder<f32>, Vocab) {
    let vocab = build_vocab(&CAPTIONS, 64).unwrap();
    let cfg = DecoderConfig {
        blocks: 1,
        heads: 2,
        embed_dim: 8,
        vocab_size: vocab.len(),
        max_positions: 16,
        n_categories: N_CATEGORIES,
        dropout_p: 0.1,
        visual_dim_in: 6,
        visual_slots: 4,
    };
    (Decoder::init(cfg, 21).unwrap(), vocab)
}

fn task(candidates: &[&str], positive: usize) -> RetrievalTask {
    RetrievalTask {
        visual: random_visual(4, 6, &mut rng_for(3, "test/visual")),
        candidates: candidates.iter().map(|s| s.to_string()).collect(),
        positive_index: positive,
        tier: None,
    }
}

#[test]
fn ties_go_to_the_lowest_index() {
    assert_eq!(argmax_lowest(&[1.0, 3.0, 3.0]), 1);
    let (dec, vocab) = setup();
    let scorer = Scorer::new(&dec, &vocab, &TemplateParser, PredictionMode::Cogt);
    let r = scorer.retrieve(&task(&[CAPTIONS[2], CAPTIONS[2]], 1)).unwrap();
    assert_eq!(r.scores[0], r.scores[1]);
    assert_eq!(r.chosen, 0);
}

#[test]
fn duplicating_a_candidate_never_changes_the_winner_score() {
    let (dec, vocab) = setup();
    let scorer = Scorer::new(&dec, &vocab, &TemplateParser, PredictionMode::Cogt);
    let base = scorer.retrieve(&task(&CAPTIONS, 0)).unwrap();
    let mut doubled: Vec<&str> = CAPTIONS.to_vec();
    doubled.extend(CAPTIONS);
    let r = scorer.retrieve(&task(&doubled, 0)).unwrap();
    assert_eq!(r.chosen, base.chosen);
    assert_eq!(&r.scores[..5], &base.scores[..]);
    assert_eq!(&r.scores[5..], &base.scores[..]);
}

#[test]
fn one_token_score_is_log_softmax() {
    let (dec, vocab) = setup();
    let scorer = Scorer::new(&dec, &vocab, &TemplateParser, PredictionMode::Cogt);
    // "cube" alone is not a template caption; build it by hand
    let tree = parse_conllu("1\tcube\t_\t_\t_\t_\t0\troot\t_\t_\n").unwrap();
    let lookup = TreeLookup::new(tree);
    let s2 = Scorer::new(&dec, &vocab, &lookup, PredictionMode::Cogt);
    let cap = s2.caption_for("cube").unwrap();
    assert_eq!(cap.len(), 1);
    let visual = random_visual(4, 6, &mut rng_for(4, "v"));
    let plan = compile(&Cgm::from_caption(&cap), PredictionMode::Cogt).unwrap();
    let logits = dec.cast::<f64>().forward(&cap, &plan, &visual, false, 0).unwrap();
    let row = logits.data();
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    let expect = row[cap.ids[0]] - lse;
    let got = s2.score(&cap, &visual).unwrap();
    assert!((got - expect).abs() < 1e-5, "{got} vs {expect}");
    assert!(scorer.caption_for("cube").is_none());
}

#[test]
fn length_normalization_divides_by_tokens() {
    let (dec, vocab) = setup();
    let mut scorer = Scorer::new(&dec, &vocab, &TemplateParser, PredictionMode::Cogt);
    let cap = scorer.caption_for(CAPTIONS[2]).unwrap();
    let visual = random_visual(4, 6, &mut rng_for(5, "v"));
    let raw = scorer.score(&cap, &visual).unwrap();
    scorer.length_normalize = true;
    let norm = scorer.score(&cap, &visual).unwrap();
    assert!((norm - raw / cap.len() as f64).abs() < 1e-12);
}

#[test]
fn both_paths_rank_identically() {
    let (dec, vocab) = setup();
    for mode in [PredictionMode::Cogt, PredictionMode::SequentialAr, PredictionMode::FullyParallel, PredictionMode::mixed()] {
        let mut scorer = Scorer::new(&dec, &vocab, &TemplateParser, mode);
        let a = scorer.retrieve(&task(&CAPTIONS, 0)).unwrap();
        scorer.path = ScorePath::LevelOrder;
        let b = scorer.retrieve(&task(&CAPTIONS, 0)).unwrap();
        assert_eq!(a.chosen, b.chosen);
        for (x, y) in a.scores.iter().zip(&b.scores) {
            assert!((x - y).abs() < 1e-4, "{mode}: {x} vs {y}");
        }
    }
}

#[test]
fn task_errors() {
    let (dec, vocab) = setup();
    let scorer = Scorer::new(&dec, &vocab, &TemplateParser, PredictionMode::Cogt);
    assert!(matches!(
        scorer.retrieve(&task(&[CAPTIONS[0], "not a caption at all"], 0)),
        Err(ScoreError::UnparseableCandidate { index: 1 })
    ));
    assert!(matches!(scorer.retrieve(&task(&[], 0)), Err(ScoreError::EmptyCandidates)));
    assert!(matches!(
        scorer.retrieve(&task(&[CAPTIONS[0]], 3)),
        Err(ScoreError::PositiveOutOfRange { .. })
    ));
    assert!(matches!(scorer.evaluate(&[]), Err(ScoreError::EmptyTasks)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn candidate_order_does_not_change_scores(perm in Just((0..5usize).collect::<Vec<_>>()).prop_shuffle()) {
        let (dec, vocab) = setup();
        let scorer = Scorer::new(&dec, &vocab, &TemplateParser, PredictionMode::Cogt);
        let base = scorer.retrieve(&task(&CAPTIONS, 0)).unwrap();
        let shuffled: Vec<&str> = perm.iter().map(|&i| CAPTIONS[i]).collect();
        let r = scorer.retrieve(&task(&shuffled, 0)).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            prop_assert_eq!(r.scores[k], base.scores[i]);
        }
        prop_assert_eq!(CAPTIONS[perm[r.chosen]], CAPTIONS[base.chosen]);
    }
}
