//! Sub-word vocabulary and the tree surgery that makes every node one token.
//!
//! A word split into pieces `p1 … pk` becomes a chain: `p1` keeps the word's
//! head and category, and each later piece hangs off its predecessor with the
//! `comp` relation. Ancestor closure over the rewritten tree then gives the
//! continuation pieces the word's ancestors plus the preceding pieces.

use std::collections::{BTreeSet, HashMap};

use thiserror::Error;

use crate::category::SyntacticCategory;
use crate::conllu::DependencyTree;

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const PAD_PIECE: &str = "<pad>";
pub const UNK_PIECE: &str = "<unk>";
pub const VOCAB_HEADER: &str = "#cogt-vocab v1";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VocabError {
    #[error("vocabulary capacity {max_size} is below the {needed} pieces required (specials + characters)")]
    CapacityTooSmall { needed: usize, max_size: usize },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("vocab file: {0}")]
    Format(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    pieces: Vec<String>,
    index: HashMap<String, usize>,
    longest_piece: usize,
}

impl Vocab {
    /// Build from an explicit piece list; specials are prepended.
    pub fn from_pieces<I, S>(pieces: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all = vec![PAD_PIECE.to_string(), UNK_PIECE.to_string()];
        for p in pieces {
            let p = p.into();
            if !all.contains(&p) {
                all.push(p);
            }
        }
        Self::from_full_list(all)
    }

    fn from_full_list(pieces: Vec<String>) -> Self {
        let index = pieces
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), i))
            .collect();
        let longest_piece = pieces
            .iter()
            .skip(2)
            .map(|p| p.chars().count())
            .max()
            .unwrap_or(1);
        Vocab {
            pieces,
            index,
            longest_piece,
        }
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn piece(&self, id: usize) -> &str {
        &self.pieces[id]
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }

    pub fn id(&self, piece: &str) -> Option<usize> {
        self.index.get(piece).copied()
    }

    /// Greedy longest-match-first segmentation of one word. Returns
    /// `(piece id, original surface fragment)` pairs; runs of characters no
    /// piece covers collapse into a single `<unk>`.
    pub fn tokenize_word(&self, word: &str) -> Vec<(usize, String)> {
        let chars: Vec<char> = word.chars().collect();
        let lowered: Vec<String> = chars.iter().map(|c| c.to_lowercase().collect()).collect();
        let mut out: Vec<(usize, String)> = Vec::new();
        let mut pos = 0;
        while pos < chars.len() {
            let max_len = self.longest_piece.min(chars.len() - pos);
            let mut matched = None;
            for len in (1..=max_len).rev() {
                let candidate: String = lowered[pos..pos + len].concat();
                if let Some(&id) = self.index.get(&candidate) {
                    if id != PAD_ID && id != UNK_ID {
                        matched = Some((id, len));
                        break;
                    }
                }
            }
            match matched {
                Some((id, len)) => {
                    out.push((id, chars[pos..pos + len].iter().collect()));
                    pos += len;
                }
                None => {
                    match out.last_mut() {
                        Some((UNK_ID, frag)) => frag.push(chars[pos]),
                        _ => out.push((UNK_ID, chars[pos].to_string())),
                    }
                    pos += 1;
                }
            }
        }
        out
    }

    /// Serialize as the line-oriented vocab format (header, then one piece per line).
    pub fn to_text(&self) -> String {
        let mut s = String::from(VOCAB_HEADER);
        s.push('\n');
        for p in &self.pieces {
            s.push_str(p);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, VocabError> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim_end() == VOCAB_HEADER => {}
            other => {
                return Err(VocabError::Format(format!(
                    "expected header `{VOCAB_HEADER}`, found {other:?}"
                )))
            }
        }
        let pieces: Vec<String> = lines.map(|l| l.trim_end_matches('\r').to_string()).collect();
        if pieces.len() < 2 || pieces[PAD_ID] != PAD_PIECE || pieces[UNK_ID] != UNK_PIECE {
            return Err(VocabError::Format(
                "first two pieces must be <pad> and <unk>".into(),
            ));
        }
        Ok(Self::from_full_list(pieces))
    }
}

/// Build a vocabulary from captions: specials, then the most frequent
/// whole words that fit, then every character seen (so nothing seen in the
/// corpus maps to `<unk>`). Ties in frequency break lexicographically.
pub fn build_vocab<S: AsRef<str>>(corpus: &[S], max_size: usize) -> Result<Vocab, VocabError> {
    if corpus.is_empty() {
        return Err(VocabError::EmptyCorpus);
    }
    let mut freq: HashMap<String, usize> = HashMap::new();
    let mut chars = BTreeSet::new();
    for caption in corpus {
        for word in caption.as_ref().split_whitespace() {
            let word = word.to_lowercase();
            chars.extend(word.chars());
            *freq.entry(word).or_default() += 1;
        }
    }
    let needed = 2 + chars.len();
    if max_size < needed {
        return Err(VocabError::CapacityTooSmall { needed, max_size });
    }
    let mut words: Vec<(String, usize)> = freq
        .into_iter()
        .filter(|(w, _)| w.chars().count() > 1)
        .collect();
    words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let budget = max_size - needed;
    let mut pieces = vec![PAD_PIECE.to_string(), UNK_PIECE.to_string()];
    pieces.extend(words.into_iter().take(budget).map(|(w, _)| w));
    pieces.extend(chars.into_iter().map(String::from));
    Ok(Vocab::from_full_list(pieces))
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Token {
    pub piece: usize,
    pub category: SyntacticCategory,
    /// Index of the source word in the original tree.
    pub origin_word: usize,
    /// The original (case-preserved) text this piece covers.
    pub surface: String,
}

/// Decoder-facing view of a caption: one entry per token.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Caption {
    pub ids: Vec<usize>,
    pub categories: Vec<SyntacticCategory>,
    pub heads: Vec<Option<usize>>,
}

impl Caption {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn with_ids(&self, ids: Vec<usize>) -> Caption {
        assert_eq!(ids.len(), self.ids.len());
        Caption {
            ids,
            categories: self.categories.clone(),
            heads: self.heads.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TokenizedTree {
    tokens: Vec<Token>,
    heads: Vec<Option<usize>>,
    source: DependencyTree,
}

impl TokenizedTree {
    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn heads(&self) -> &[Option<usize>] {
        &self.heads
    }

    pub fn source(&self) -> &DependencyTree {
        &self.source
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn caption(&self) -> Caption {
        Caption {
            ids: self.tokens.iter().map(|t| t.piece).collect(),
            categories: self.tokens.iter().map(|t| t.category).collect(),
            heads: self.heads.clone(),
        }
    }

    /// Reassemble each word's surface form from its pieces.
    pub fn detokenize(&self) -> Vec<String> {
        let mut words = vec![String::new(); self.source.len()];
        for t in &self.tokens {
            words[t.origin_word].push_str(&t.surface);
        }
        words
    }
}

/// Rewrite a word-level tree so every node is a single vocabulary piece.
pub fn tokenize_tree(tree: &DependencyTree, vocab: &Vocab) -> TokenizedTree {
    let mut tokens = Vec::with_capacity(tree.len());
    let mut first_token = Vec::with_capacity(tree.len());
    // (token index, predecessor piece) for continuation pieces
    let mut chain_heads: Vec<Option<usize>> = Vec::with_capacity(tree.len());
    for (w, node) in tree.nodes().iter().enumerate() {
        let mut pieces = vocab.tokenize_word(&node.form);
        if pieces.is_empty() {
            pieces.push((UNK_ID, String::new()));
        }
        first_token.push(tokens.len());
        for (k, (piece, surface)) in pieces.into_iter().enumerate() {
            let (category, head) = if k == 0 {
                (node.category, None)
            } else {
                (SyntacticCategory::Comp, Some(tokens.len() - 1))
            };
            tokens.push(Token {
                piece,
                category,
                origin_word: w,
                surface,
            });
            chain_heads.push(head);
        }
    }
    let heads = tokens
        .iter()
        .zip(&chain_heads)
        .map(|(tok, chain)| match chain {
            Some(prev) => Some(*prev),
            None => tree.head(tok.origin_word).map(|h| first_token[h]),
        })
        .collect();
    TokenizedTree {
        tokens,
        heads,
        source: tree.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conllu::parse_conllu;
    use crate::conllu::TreeNode;

    fn ancestors_naive(heads: &[Option<usize>], j: usize) -> Vec<usize> {
        let mut out = vec![];
        let mut cur = j;
        while let Some(h) = heads[cur] {
            out.push(h);
            cur = h;
        }
        out.sort_unstable();
        out
    }

    fn fig1() -> DependencyTree {
        let text = "1\tA\t_\t_\t_\t_\t3\tdet\t_\t_\n2\tbrown\t_\t_\t_\t_\t3\tamod\t_\t_\n3\tbird\t_\t_\t_\t_\t0\troot\t_\t_\n4\twith\t_\t_\t_\t_\t3\tprep\t_\t_\n5\ta\t_\t_\t_\t_\t8\tdet\t_\t_\n6\tsmall\t_\t_\t_\t_\t8\tamod\t_\t_\n7\tyellow\t_\t_\t_\t_\t8\tamod\t_\t_\n8\thead\t_\t_\t_\t_\t4\tpobj\t_\t_\n";
        parse_conllu(text).unwrap().remove(0)
    }

    #[test]
    fn small_splits_into_sm_all() {
        let tree = fig1();
        let vocab = Vocab::from_pieces([
            "a", "brown", "bird", "with", "sm", "all", "yellow", "head",
        ]);
        let tt = tokenize_tree(&tree, &vocab);
        assert_eq!(tt.len(), 9);
        let sm = &tt.tokens()[5];
        let all = &tt.tokens()[6];
        assert_eq!(vocab.piece(sm.piece), "sm");
        assert_eq!(vocab.piece(all.piece), "all");
        assert_eq!(sm.category, SyntacticCategory::Amod);
        assert_eq!(all.category, SyntacticCategory::Comp);
        assert_eq!(tt.heads()[6], Some(5));
        // "sm" inherits small's head: "head", now at token 8.
        assert_eq!(tt.heads()[5], Some(8));
        assert_eq!(vocab.piece(tt.tokens()[8].piece), "head");
        assert_eq!(tt.detokenize(), tree.nodes().iter().map(|n| n.form.clone()).collect::<Vec<_>>());
    }

    #[test]
    fn identity_surgery_when_every_word_is_a_piece() {
        let tree = fig1();
        let vocab = Vocab::from_pieces([
            "a", "brown", "bird", "with", "small", "yellow", "head",
        ]);
        let tt = tokenize_tree(&tree, &vocab);
        assert_eq!(tt.len(), tree.len());
        assert_eq!(tt.heads(), tree.heads());
        for (tok, node) in tt.tokens().iter().zip(tree.nodes()) {
            assert_eq!(tok.category, node.category);
            assert_eq!(tok.surface, node.form);
        }
    }

    #[test]
    fn three_piece_split_extends_ancestors() {
        let tree = DependencyTree::new(
            "t",
            vec![
                TreeNode { form: "root".into(), category: SyntacticCategory::Root },
                TreeNode { form: "abc".into(), category: SyntacticCategory::Amod },
            ],
            vec![None, Some(0)],
        )
        .unwrap();
        let vocab = Vocab::from_pieces(["root", "a", "b", "c"]);
        let tt = tokenize_tree(&tree, &vocab);
        assert_eq!(tt.len(), 4);
        let heads = tt.heads();
        let anc_a = ancestors_naive(heads, 1);
        let anc_c = ancestors_naive(heads, 3);
        let mut expected = anc_a.clone();
        expected.extend([1, 2]);
        expected.sort_unstable();
        assert_eq!(anc_c, expected);
        assert_eq!(anc_a, ancestors_naive(tree.heads(), 1));
    }

    #[test]
    fn build_vocab_whole_words_and_char_fallback() {
        let v = build_vocab(&["a b", "a"], 10).unwrap();
        assert!(v.id("a").is_some());
        assert!(v.id("b").is_some());
        assert_eq!(v.piece(PAD_ID), PAD_PIECE);

        let v = build_vocab(&["tiny cat", "cat"], 8).unwrap();
        // 2 specials + 6 chars leaves no room for words
        assert!(v.id("cat").is_none());
        let pieces = v.tokenize_word("cat");
        assert_eq!(pieces.len(), 3);
        assert!(pieces.iter().all(|(id, _)| *id != UNK_ID));

        assert_eq!(
            build_vocab(&["abcdef"], 5),
            Err(VocabError::CapacityTooSmall { needed: 8, max_size: 5 })
        );
    }

    #[test]
    fn frequency_ranking_with_lexicographic_ties() {
        let v = build_vocab(&["zz yy xx", "zz"], 2 + 3 + 2).unwrap();
        // zz has frequency 2, then xx beats yy lexicographically
        assert_eq!(v.piece(2), "zz");
        assert_eq!(v.piece(3), "xx");
        assert!(v.id("yy").is_none());
    }

    #[test]
    fn lowercasing_and_unknown_runs() {
        let v = Vocab::from_pieces(["red", "r", "e", "d"]);
        let pieces = v.tokenize_word("RED");
        assert_eq!(pieces, vec![(v.id("red").unwrap(), "RED".to_string())]);
        let pieces = v.tokenize_word("rxyd");
        assert_eq!(pieces.len(), 3);
        assert_eq!(pieces[1], (UNK_ID, "xy".to_string()));
    }

    #[test]
    fn vocab_text_round_trip() {
        let v = build_vocab(&["a small red cube", "a big ball"], 40).unwrap();
        let back = Vocab::from_text(&v.to_text()).unwrap();
        assert_eq!(v, back);
        assert!(Vocab::from_text("nope\n").is_err());
    }
}
