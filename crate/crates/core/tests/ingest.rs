use cogt::category::{SyntacticCategory, N_CATEGORIES};
use cogt::cgm::build_cgm;
use cogt::conllu::{parse_conllu, serialize_conllu, ConlluError, DependencyTree, TreeNode};
use cogt::seed::rng_for;
use cogt::subword::{build_vocab, tokenize_tree, Vocab, UNK_ID};
use cogt::verify::random_heads;
use proptest::prelude::*;
use rand::Rng;

fn random_tree(n: usize, seed: u64) -> DependencyTree {
    let mut rng = rng_for(seed, "test/tree");
    let heads = random_heads(n, &mut rng);
    let nodes = heads
        .iter()
        .map(|h| {
            let len = rng.gen_range(1..9);
            let form: String = (0..len).map(|_| rng.gen_range(b'a'..=b'f') as char).collect();
            let category = match h {
                None => SyntacticCategory::Root,
                Some(_) => loop {
                    let c = SyntacticCategory::from_index(rng.gen_range(0..N_CATEGORIES)).unwrap();
                    if c != SyntacticCategory::Comp {
                        break c;
                    }
                },
            };
            TreeNode { form, category }
        })
        .collect();
    DependencyTree::new(format!("s{seed}"), nodes, heads).unwrap()
}

#[test]
fn deprel_labels_round_trip() {
    for i in 0..N_CATEGORIES {
        let c = SyntacticCategory::from_index(i).unwrap();
        if c == SyntacticCategory::Comp {
            // continuation pieces only; never read from a parse
            assert_eq!(SyntacticCategory::from_deprel(c.label()), SyntacticCategory::Dep);
            continue;
        }
        assert_eq!(SyntacticCategory::from_deprel(c.label()), c, "{}", c.label());
    }
}

#[test]
fn subtyped_and_unknown_deprels() {
    assert_eq!(SyntacticCategory::from_deprel("nmod:poss"), SyntacticCategory::from_deprel("nmod"));
    assert_eq!(SyntacticCategory::from_deprel("AMOD"), SyntacticCategory::Amod);
    assert_eq!(SyntacticCategory::from_deprel("no-such-relation"), SyntacticCategory::Dep);
}

#[test]
fn rejects_cycles_and_multiple_roots() {
    let cyc = "1\ta\t_\t_\t_\t_\t2\tdet\t_\t_\n2\tb\t_\t_\t_\t_\t1\tamod\t_\t_\n";
    assert!(parse_conllu(cyc).is_err());
    let two = "1\ta\t_\t_\t_\t_\t0\troot\t_\t_\n2\tb\t_\t_\t_\t_\t0\troot\t_\t_\n";
    assert!(parse_conllu(two).is_err());
    let bad_head = "1\ta\t_\t_\t_\t_\t0\troot\t_\t_\n2\tb\t_\t_\t_\t_\t7\tamod\t_\t_\n";
    assert!(parse_conllu(bad_head).is_err());
}

#[test]
fn skips_multiword_ranges_and_rejects_empty_nodes() {
    let words = "# sent_id = m\n1-2\tdon't\t_\t_\t_\t_\t_\t_\t_\t_\n1\tdo\t_\t_\t_\t_\t0\troot\t_\t_\n2\tn't\t_\t_\t_\t_\t1\tadvmod\t_\t_\n";
    let trees = parse_conllu(words).unwrap();
    assert_eq!(trees[0].len(), 2);
    assert_eq!(trees[0].head(1), Some(0));
    let with_empty = format!("{words}2.1\tx\t_\t_\t_\t_\t_\t_\t_\t_\n");
    assert!(matches!(parse_conllu(&with_empty), Err(ConlluError::MalformedLine { .. })));
}

#[test]
fn empty_sentence_is_an_error() {
    let text = "# sent_id = e\n\n";
    match parse_conllu(text) {
        Ok(t) => assert!(t.is_empty()),
        Err(e) => assert!(matches!(e, ConlluError::EmptySentence { .. }), "{e}"),
    }
}

proptest! {
    #[test]
    fn conllu_round_trip(n in 1usize..40, seed in any::<u64>()) {
        let tree = random_tree(n, seed);
        let text = serialize_conllu(std::slice::from_ref(&tree));
        let back = parse_conllu(&text).unwrap();
        prop_assert_eq!(back, vec![tree]);
    }

    #[test]
    fn depth_matches_head_walk(n in 1usize..40, seed in any::<u64>()) {
        let tree = random_tree(n, seed);
        for i in 0..n {
            let mut d = 0;
            let mut cur = i;
            while let Some(h) = tree.head(cur) {
                d += 1;
                cur = h;
            }
            prop_assert_eq!(tree.depth(i), d);
            prop_assert_eq!(cur, tree.root());
        }
    }

    /// Splitting words into pieces keeps the tree well-formed: pieces of a
    /// word chain left to right, the word's first piece takes over its
    /// links, and the surfaces reassemble the original words.
    #[test]
    fn subword_surgery_preserves_structure(n in 1usize..20, seed in any::<u64>(), size in 8usize..40) {
        let tree = random_tree(n, seed);
        let corpus = vec![tree.text()];
        let vocab = build_vocab(&corpus, size.max(8)).unwrap();
        let tt = tokenize_tree(&tree, &vocab);
        prop_assert_eq!(tt.detokenize(),
            tree.nodes().iter().map(|n| n.form.clone()).collect::<Vec<_>>());
        let mut first = vec![usize::MAX; n];
        for (k, tok) in tt.tokens().iter().enumerate() {
            if first[tok.origin_word] == usize::MAX {
                first[tok.origin_word] = k;
                prop_assert_eq!(tok.category, tree.nodes()[tok.origin_word].category);
            } else {
                prop_assert_eq!(tok.category, SyntacticCategory::Comp);
                prop_assert_eq!(tt.heads()[k], Some(k - 1));
            }
        }
        for (k, tok) in tt.tokens().iter().enumerate() {
            if first[tok.origin_word] == k {
                let expect = tree.head(tok.origin_word).map(|h| first[h]);
                prop_assert_eq!(tt.heads()[k], expect);
            }
        }
        // exactly one root, every token reaches it
        let cgm = build_cgm(&tt);
        let root = tt.heads().iter().position(Option::is_none).unwrap();
        prop_assert_eq!(tt.heads().iter().filter(|h| h.is_none()).count(), 1);
        for j in 0..tt.len() {
            prop_assert!(j == root || cgm.is_ancestor(root, j));
        }
    }

    #[test]
    fn vocab_text_round_trip(n in 1usize..20, seed in any::<u64>(), size in 8usize..60) {
        let tree = random_tree(n, seed);
        let vocab = build_vocab(&[tree.text()], size).unwrap();
        prop_assert!(vocab.len() <= size);
        let back = Vocab::from_text(&vocab.to_text()).unwrap();
        prop_assert_eq!(back.pieces(), vocab.pieces());
        // every character of the corpus is covered, so nothing maps to unk
        for node in tree.nodes() {
            prop_assert!(vocab.tokenize_word(&node.form).iter().all(|(id, _)| *id != UNK_ID));
        }
    }
}
