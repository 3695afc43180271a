//! Training datasets on disk.
//!
//! A dataset directory holds `vocab.txt`, `trees.conllu` (one tree per
//! sample, `sent_id` = sample id) and `samples.jsonl`, whose lines
//! `{sentence_id, image_features}` pair each tree with a `COGTVIS` file
//! relative to the directory.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conllu::{parse_conllu, serialize_conllu, ConlluError, DependencyTree};
use crate::decoder::{read_visual_features, write_visual_features, FormatError, VisualFeatures};
use crate::subword::{tokenize_tree, Caption, Vocab, VocabError};

pub const VOCAB_FILE: &str = "vocab.txt";
pub const TREES_FILE: &str = "trees.conllu";
pub const SAMPLES_FILE: &str = "samples.jsonl";
pub const FEATURES_DIR: &str = "features";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Conllu(#[from] ConlluError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error("{path}: {source}")]
    Features { path: String, source: FormatError },
    #[error("samples.jsonl line {line}: {reason}")]
    SampleLine { line: usize, reason: String },
    #[error("sample `{0}` has no tree")]
    MissingTree(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sentence_id: String,
    pub image_features: String,
}

/// One training pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub caption: Caption,
    pub visual: VisualFeatures,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub vocab: Vocab,
    pub samples: Vec<Sample>,
}

impl Dataset {
    /// Tokenize trees and pair them with features by position.
    pub fn from_trees(vocab: Vocab, trees: &[DependencyTree], visuals: Vec<VisualFeatures>) -> Self {
        let samples = trees
            .iter()
            .zip(visuals)
            .map(|(t, visual)| Sample {
                id: t.sentence_id().to_string(),
                caption: tokenize_tree(t, &vocab).caption(),
                visual,
            })
            .collect();
        Dataset { vocab, samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

pub fn feature_path(id: &str) -> String {
    format!("{FEATURES_DIR}/{id}.cogtvis")
}

pub fn write_features(dir: &Path, rel: &str, v: &VisualFeatures) -> Result<(), DatasetError> {
    let path = dir.join(rel);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut w = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
    write_visual_features(&mut w, v).map_err(|source| DatasetError::Features {
        path: path.display().to_string(),
        source,
    })?;
    w.flush().map_err(io_err(&path))
}

pub fn read_features(dir: &Path, rel: &str) -> Result<VisualFeatures, DatasetError> {
    let path = dir.join(rel);
    let mut r = BufReader::new(File::open(&path).map_err(io_err(&path))?);
    read_visual_features(&mut r, rel).map_err(|source| DatasetError::Features {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<(), DatasetError> {
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_text(path: &Path) -> Result<String, DatasetError> {
    fs::read_to_string(path).map_err(io_err(path))
}

pub fn write_jsonl<R: Serialize>(path: &Path, records: &[R]) -> Result<(), DatasetError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for r in records {
        let line = serde_json::to_string(r).expect("serializable record");
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Write a full dataset directory. Features go to `features/<id>.cogtvis`.
pub fn write_dataset(
    dir: &Path,
    vocab: &Vocab,
    trees: &[DependencyTree],
    visuals: &[VisualFeatures],
) -> Result<(), DatasetError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_text(&dir.join(VOCAB_FILE), &vocab.to_text())?;
    write_text(&dir.join(TREES_FILE), &serialize_conllu(trees))?;
    let mut records = Vec::with_capacity(trees.len());
    for (t, v) in trees.iter().zip(visuals) {
        let rel = feature_path(t.sentence_id());
        write_features(dir, &rel, v)?;
        records.push(SampleRecord {
            sentence_id: t.sentence_id().to_string(),
            image_features: rel,
        });
    }
    write_jsonl(&dir.join(SAMPLES_FILE), &records)
}

pub fn load_vocab(path: &Path) -> Result<Vocab, DatasetError> {
    Ok(Vocab::from_text(&read_text(path)?)?)
}

pub fn load_trees(path: &Path) -> Result<Vec<DependencyTree>, DatasetError> {
    Ok(parse_conllu(&read_text(path)?)?)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, DatasetError> {
    let vocab = load_vocab(&dir.join(VOCAB_FILE))?;
    let trees = load_trees(&dir.join(TREES_FILE))?;
    let by_id: HashMap<&str, &DependencyTree> =
        trees.iter().map(|t| (t.sentence_id(), t)).collect();
    let spath = dir.join(SAMPLES_FILE);
    let reader = BufReader::new(File::open(&spath).map_err(io_err(&spath))?);
    let mut samples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(&spath))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SampleRecord =
            serde_json::from_str(&line).map_err(|e| DatasetError::SampleLine {
                line: i + 1,
                reason: e.to_string(),
            })?;
        let tree = by_id
            .get(rec.sentence_id.as_str())
            .ok_or_else(|| DatasetError::MissingTree(rec.sentence_id.clone()))?;
        samples.push(Sample {
            caption: tokenize_tree(tree, &vocab).caption(),
            visual: read_features(dir, &rec.image_features)?,
            id: rec.sentence_id,
        });
    }
    Ok(Dataset { vocab, samples })
}
