//! CoNLL-U ingestion into validated dependency trees.
//!
//! Only the ID, FORM, HEAD and DEPREL columns are consumed. Multiword-token
//! ranges (`3-4`) are skipped; empty nodes (`3.1`) are rejected.

use std::fmt::Write as _;

use thiserror::Error;

use crate::category::SyntacticCategory;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConlluError {
    #[error("line {line}: malformed CoNLL-U line: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("sentence `{sentence_id}`: head links contain a cycle through token {node}")]
    CycleDetected { sentence_id: String, node: usize },
    #[error("sentence `{sentence_id}`: more than one root (tokens {first} and {second})")]
    MultipleRoots {
        sentence_id: String,
        first: usize,
        second: usize,
    },
    #[error("sentence `{sentence_id}`: token {node} has head {head} outside 0..={len}")]
    DanglingHead {
        sentence_id: String,
        node: usize,
        head: usize,
        len: usize,
    },
    #[error("sentence `{sentence_id}` has no tokens")]
    EmptySentence { sentence_id: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TreeNode {
    pub form: String,
    pub category: SyntacticCategory,
}

/// A parsed caption: words in surface order, each with one head except the
/// single root.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DependencyTree {
    sentence_id: String,
    nodes: Vec<TreeNode>,
    heads: Vec<Option<usize>>,
    root: usize,
}

impl DependencyTree {
    /// Build a tree from 0-based head indices, validating that the links
    /// form a single-rooted tree.
    pub fn new(
        sentence_id: impl Into<String>,
        nodes: Vec<TreeNode>,
        heads: Vec<Option<usize>>,
    ) -> Result<Self, ConlluError> {
        let sentence_id = sentence_id.into();
        assert_eq!(nodes.len(), heads.len(), "nodes and heads must align");
        let root = validate_heads(&sentence_id, &heads)?;
        Ok(DependencyTree {
            sentence_id,
            nodes,
            heads,
            root,
        })
    }

    pub fn sentence_id(&self) -> &str {
        &self.sentence_id
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn heads(&self) -> &[Option<usize>] {
        &self.heads
    }

    pub fn head(&self, node: usize) -> Option<usize> {
        self.heads[node]
    }

    pub fn root(&self) -> usize {
        self.root
    }

    /// Distance from the root along head links.
    pub fn depth(&self, node: usize) -> usize {
        let mut depth = 0;
        let mut cur = node;
        while let Some(h) = self.heads[cur] {
            depth += 1;
            cur = h;
        }
        depth
    }

    pub fn children(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.heads
            .iter()
            .enumerate()
            .filter(move |(_, h)| **h == Some(node))
            .map(|(i, _)| i)
    }

    /// Surface text: forms joined by single spaces.
    pub fn text(&self) -> String {
        self.nodes
            .iter()
            .map(|n| n.form.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Check that `heads` describe exactly one tree. Returns the root index.
pub(crate) fn validate_heads(
    sentence_id: &str,
    heads: &[Option<usize>],
) -> Result<usize, ConlluError> {
    let n = heads.len();
    if n == 0 {
        return Err(ConlluError::EmptySentence {
            sentence_id: sentence_id.to_string(),
        });
    }
    let mut root = None;
    for (i, h) in heads.iter().enumerate() {
        match h {
            None => {
                if let Some(first) = root {
                    return Err(ConlluError::MultipleRoots {
                        sentence_id: sentence_id.to_string(),
                        first,
                        second: i,
                    });
                }
                root = Some(i);
            }
            Some(h) if *h >= n => {
                return Err(ConlluError::DanglingHead {
                    sentence_id: sentence_id.to_string(),
                    node: i,
                    head: h + 1,
                    len: n,
                })
            }
            Some(_) => {}
        }
    }
    // 0 = unvisited, 1 = on current path, 2 = known to reach the root
    let mut state = vec![0u8; n];
    for start in 0..n {
        let mut path = Vec::new();
        let mut cur = start;
        loop {
            match state[cur] {
                2 => break,
                1 => {
                    return Err(ConlluError::CycleDetected {
                        sentence_id: sentence_id.to_string(),
                        node: cur,
                    })
                }
                _ => {}
            }
            state[cur] = 1;
            path.push(cur);
            match heads[cur] {
                Some(h) => cur = h,
                None => break,
            }
        }
        for p in path {
            state[p] = 2;
        }
    }
    // Every node reaches a headless node and there is at most one; with no
    // cycles there must be exactly one.
    root.ok_or_else(|| ConlluError::CycleDetected {
        sentence_id: sentence_id.to_string(),
        node: 0,
    })
}

/// Parse every sentence block of a CoNLL-U document.
pub fn parse_conllu(text: &str) -> Result<Vec<DependencyTree>, ConlluError> {
    let mut trees = Vec::new();
    let mut block = Block::default();
    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            if let Some(tree) = block.finish(trees.len())? {
                trees.push(tree);
            }
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((key, value)) = comment.split_once('=') {
                if key.trim() == "sent_id" {
                    block.sentence_id = Some(value.trim().to_string());
                }
            }
            continue;
        }
        block.push_line(lineno, line)?;
    }
    if let Some(tree) = block.finish(trees.len())? {
        trees.push(tree);
    }
    Ok(trees)
}

#[derive(Default)]
struct Block {
    sentence_id: Option<String>,
    nodes: Vec<TreeNode>,
    raw_heads: Vec<usize>,
}

impl Block {
    fn push_line(&mut self, lineno: usize, line: &str) -> Result<(), ConlluError> {
        let malformed = |reason: String| ConlluError::MalformedLine {
            line: lineno,
            reason,
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 8 {
            return Err(malformed(format!(
                "expected at least 8 tab-separated columns, found {}",
                cols.len()
            )));
        }
        let id = cols[0];
        if id.contains('-') {
            return Ok(());
        }
        if id.contains('.') {
            return Err(malformed(format!("empty node `{id}` is not supported")));
        }
        let id: usize = id
            .parse()
            .map_err(|_| malformed(format!("invalid token id `{id}`")))?;
        if id != self.nodes.len() + 1 {
            return Err(malformed(format!(
                "token id {id} out of sequence (expected {})",
                self.nodes.len() + 1
            )));
        }
        let head: usize = cols[6]
            .parse()
            .map_err(|_| malformed(format!("invalid head `{}`", cols[6])))?;
        self.nodes.push(TreeNode {
            form: cols[1].to_string(),
            category: SyntacticCategory::from_deprel(cols[7]),
        });
        self.raw_heads.push(head);
        Ok(())
    }

    fn finish(&mut self, index: usize) -> Result<Option<DependencyTree>, ConlluError> {
        let block = std::mem::take(self);
        if block.nodes.is_empty() {
            return Ok(None);
        }
        let sentence_id = block
            .sentence_id
            .unwrap_or_else(|| format!("s{}", index + 1));
        let n = block.nodes.len();
        let mut heads = Vec::with_capacity(n);
        for (i, &h) in block.raw_heads.iter().enumerate() {
            if h > n {
                return Err(ConlluError::DanglingHead {
                    sentence_id,
                    node: i,
                    head: h,
                    len: n,
                });
            }
            heads.push(h.checked_sub(1));
        }
        DependencyTree::new(sentence_id, block.nodes, heads).map(Some)
    }
}

/// Write trees as CoNLL-U. Unused columns are `_`; DEPREL is the category label.
pub fn serialize_conllu(trees: &[DependencyTree]) -> String {
    let mut out = String::new();
    for tree in trees {
        let _ = writeln!(out, "# sent_id = {}", tree.sentence_id);
        let _ = writeln!(out, "# text = {}", tree.text());
        for (i, node) in tree.nodes.iter().enumerate() {
            let head = tree.heads[i].map_or(0, |h| h + 1);
            let _ = writeln!(
                out,
                "{}\t{}\t_\t_\t_\t_\t{}\t{}\t_\t_",
                i + 1,
                node.form,
                head,
                node.category
            );
        }
        out.push('\n');
    }
    out
}
