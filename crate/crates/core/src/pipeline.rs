//! End-to-end steps shared by the command line and the examples.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::conllu::DependencyTree;
use crate::dataset::{
    feature_path, write_dataset, write_features, write_jsonl, DatasetError,
};
use crate::decoder::{read_checkpoint, write_checkpoint, Checkpoint, FormatError};
use crate::scorer::{write_task_records, ScoreError, TaskRecord};
use crate::seed::derive_seed;
use crate::subword::{build_vocab, Vocab, VocabError};
use crate::synthbench::{
    generate, make_tasks, SceneEncoder, DEFAULT_NOISE_SIGMA, DEFAULT_VISUAL_DIM,
};
use crate::trainer::{StepMetrics, TrainError};

pub const TASKS_FILE: &str = "tasks.jsonl";
pub const SYNTH_VOCAB_SIZE: usize = 64;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthOptions {
    pub train_scenes: usize,
    pub heldout_scenes: usize,
    pub seed: u64,
    pub noise_sigma: f64,
    pub visual_dim: usize,
}

impl SynthOptions {
    pub fn new(train_scenes: usize, seed: u64) -> Self {
        SynthOptions {
            train_scenes,
            heldout_scenes: (train_scenes / 10).max(1),
            seed,
            noise_sigma: DEFAULT_NOISE_SIGMA,
            visual_dim: DEFAULT_VISUAL_DIM,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSummary {
    pub train_samples: usize,
    pub tasks: usize,
    pub vocab_size: usize,
}

/// Write a synthetic training dataset plus held-out retrieval tasks to `dir`.
pub fn synthesize(dir: &Path, opts: &SynthOptions) -> Result<SynthSummary, PipelineError> {
    let encoder = SceneEncoder::new(
        derive_seed(opts.seed, "encoder"),
        opts.visual_dim,
        opts.noise_sigma,
    );
    let train = generate(opts.train_scenes, derive_seed(opts.seed, "train"), "train-");
    let captions: Vec<&str> = train.iter().map(|i| i.caption.as_str()).collect();
    let vocab = build_vocab(&captions, SYNTH_VOCAB_SIZE)?;
    let trees: Vec<DependencyTree> = train.iter().map(|i| i.tree.clone()).collect();
    let visuals: Vec<_> = train.iter().map(|i| encoder.encode(&i.scene, &i.id)).collect();
    write_dataset(dir, &vocab, &trees, &visuals)?;

    let heldout = generate(opts.heldout_scenes, derive_seed(opts.seed, "heldout"), "heldout-");
    for item in &heldout {
        write_features(dir, &feature_path(&item.id), &encoder.encode(&item.scene, &item.id))?;
    }
    let tasks = make_tasks(&heldout, derive_seed(opts.seed, "tasks"));
    let records: Vec<TaskRecord> = tasks
        .iter()
        .map(|t| TaskRecord {
            image_features: feature_path(&heldout[t.item].id),
            candidates: t.candidates.clone(),
            positive_index: t.positive_index,
            tier: Some(t.tier),
        })
        .collect();
    write_task_records(&dir.join(TASKS_FILE), &records)?;
    Ok(SynthSummary {
        train_samples: train.len(),
        tasks: records.len(),
        vocab_size: vocab.len(),
    })
}

/// Files written next to a checkpoint `path`: `<stem>.vocab.txt`,
/// `<stem>.metrics.jsonl`.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "cogt".into());
    path.with_file_name(format!("{stem}.{suffix}"))
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint, vocab: &Vocab) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    write_checkpoint(&mut w, ckpt)?;
    w.flush().map_err(io_err(path))?;
    let vpath = sidecar(path, "vocab.txt");
    fs::write(&vpath, vocab.to_text()).map_err(io_err(&vpath))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Checkpoint, Vocab), PipelineError> {
    let mut r = BufReader::new(File::open(path).map_err(io_err(path))?);
    let ckpt = read_checkpoint(&mut r)?;
    let vpath = sidecar(path, "vocab.txt");
    let text = fs::read_to_string(&vpath).map_err(io_err(&vpath))?;
    Ok((ckpt, Vocab::from_text(&text)?))
}

pub fn save_metrics(path: &Path, metrics: &[StepMetrics]) -> Result<(), PipelineError> {
    Ok(write_jsonl(path, metrics)?)
}
