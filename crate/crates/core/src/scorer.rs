//! Caption scoring and image-to-text retrieval.
//!
//! A caption's score is `sum_j log P(w_j | ancestors, category, image)`. The
//! level-order path generates the tree one depth at a time, feeding only
//! already-generated tokens as visible context. The single-pass path
//! teacher-forces the whole caption at once; the attention plan already hides
//! everything a token may not see, so both paths agree.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cgm::{schedule_for, Cgm, PredictionMode};
use crate::conllu::DependencyTree;
use crate::decoder::{read_visual_features, Decoder, DecoderError, FormatError, VisualFeatures};
use crate::mask::{compile, MaskError};
use crate::subword::{tokenize_tree, Caption, Vocab, PAD_ID};
use crate::tensor::Real;
use crate::threads::worker_pool;

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("candidate {index} could not be parsed into a dependency tree")]
    UnparseableCandidate { index: usize },
    #[error("task has no candidates")]
    EmptyCandidates,
    #[error("positive index {index} outside {len} candidates")]
    PositiveOutOfRange { index: usize, len: usize },
    #[error("no tasks to evaluate")]
    EmptyTasks,
    #[error(transparent)]
    Decoder(#[from] DecoderError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("tasks file line {line}: {reason}")]
    TaskFile { line: usize, reason: String },
}

/// Negative-difficulty tier of a retrieval task.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Trivial,
    Easy,
    Medium,
    Hard,
    Swap,
}

impl Tier {
    pub const ALL: [Tier; 5] = [Tier::Trivial, Tier::Easy, Tier::Medium, Tier::Hard, Tier::Swap];

    pub fn label(self) -> &'static str {
        match self {
            Tier::Trivial => "trivial",
            Tier::Easy => "easy",
            Tier::Medium => "medium",
            Tier::Hard => "hard",
            Tier::Swap => "swap",
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Tier {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Tier::ALL
            .into_iter()
            .find(|t| t.label() == s.to_ascii_lowercase())
            .ok_or_else(|| format!("unknown tier `{s}`"))
    }
}

/// Turns candidate caption text into a dependency tree.
pub trait CaptionParser: Sync {
    fn parse(&self, text: &str) -> Option<DependencyTree>;
}

/// Parser backed by pre-parsed trees, keyed by their surface text.
#[derive(Clone, Debug, Default)]
pub struct TreeLookup {
    trees: HashMap<String, DependencyTree>,
}

impl TreeLookup {
    pub fn new(trees: impl IntoIterator<Item = DependencyTree>) -> Self {
        TreeLookup {
            trees: trees.into_iter().map(|t| (normalize(&t.text()), t)).collect(),
        }
    }
}

fn normalize(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

impl CaptionParser for TreeLookup {
    fn parse(&self, text: &str) -> Option<DependencyTree> {
        self.trees.get(&normalize(text)).cloned()
    }
}

/// Which of the two equivalent scoring computations to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ScorePath {
    LevelOrder,
    #[default]
    SinglePass,
}

/// Per-token log-probabilities by level-order generation.
pub fn level_order_logprobs<T: Real>(
    decoder: &Decoder<T>,
    caption: &Caption,
    visual: &VisualFeatures,
    mode: PredictionMode,
) -> Result<Vec<T>, ScoreError> {
    let regime = mode.scoring_regime();
    let cgm = Cgm::from_caption(caption);
    let plan = compile(&cgm, regime)?;
    let levels = schedule_for(&cgm, regime);
    let mut generated = vec![false; caption.len()];
    let mut out = vec![T::zero(); caption.len()];
    for level in &levels {
        let ids = caption
            .ids
            .iter()
            .zip(&generated)
            .map(|(&id, &g)| if g { id } else { PAD_ID })
            .collect();
        let partial = caption.with_ids(ids);
        let logits = decoder.forward(&partial, &plan, visual, false, 0)?;
        let vocab = decoder.config().vocab_size;
        for &j in level {
            out[j] = log_softmax_at(&logits.data()[j * vocab..(j + 1) * vocab], caption.ids[j]);
        }
        for &j in level {
            generated[j] = true;
        }
    }
    Ok(out)
}

/// Per-token log-probabilities from one teacher-forced pass.
pub fn single_pass_logprobs<T: Real>(
    decoder: &Decoder<T>,
    caption: &Caption,
    visual: &VisualFeatures,
    mode: PredictionMode,
) -> Result<Vec<T>, ScoreError> {
    let cgm = Cgm::from_caption(caption);
    let plan = compile(&cgm, mode.scoring_regime())?;
    Ok(decoder.conditional_logprob(caption, &plan, visual)?)
}

fn log_softmax_at<T: Real>(row: &[T], target: usize) -> T {
    let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
    let z = row.iter().fold(T::zero(), |acc, &v| acc + (v - max).exp());
    row[target] - max - z.ln()
}

/// Caption log-likelihood by the level-order schedule.
pub fn score_caption<T: Real>(
    decoder: &Decoder<T>,
    caption: &Caption,
    visual: &VisualFeatures,
    mode: PredictionMode,
) -> Result<f64, ScoreError> {
    let lp = level_order_logprobs(decoder, caption, visual, mode)?;
    Ok(lp.iter().map(|v| v.to_f64_lossy()).sum())
}

/// Caption log-likelihood from a single teacher-forced pass.
pub fn score_caption_single_pass<T: Real>(
    decoder: &Decoder<T>,
    caption: &Caption,
    visual: &VisualFeatures,
    mode: PredictionMode,
) -> Result<f64, ScoreError> {
    let lp = single_pass_logprobs(decoder, caption, visual, mode)?;
    Ok(lp.iter().map(|v| v.to_f64_lossy()).sum())
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalTask {
    pub visual: VisualFeatures,
    pub candidates: Vec<String>,
    pub positive_index: usize,
    pub tier: Option<Tier>,
}

impl RetrievalTask {
    pub fn validate(&self) -> Result<(), ScoreError> {
        if self.candidates.is_empty() {
            return Err(ScoreError::EmptyCandidates);
        }
        if self.positive_index >= self.candidates.len() {
            return Err(ScoreError::PositiveOutOfRange {
                index: self.positive_index,
                len: self.candidates.len(),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Retrieval {
    pub chosen: usize,
    pub scores: Vec<f64>,
}

/// Index of the highest score; the lowest index wins ties.
pub fn argmax_lowest(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Ranks candidate captions for an image with a trained decoder.
pub struct Scorer<'a, T> {
    pub decoder: &'a Decoder<T>,
    pub vocab: &'a Vocab,
    pub parser: &'a dyn CaptionParser,
    pub mode: PredictionMode,
    pub length_normalize: bool,
    pub path: ScorePath,
}

impl<'a, T: Real + Send + Sync> Scorer<'a, T> {
    pub fn new(
        decoder: &'a Decoder<T>,
        vocab: &'a Vocab,
        parser: &'a dyn CaptionParser,
        mode: PredictionMode,
    ) -> Self {
        Scorer {
            decoder,
            vocab,
            parser,
            mode,
            length_normalize: false,
            path: ScorePath::default(),
        }
    }

    pub fn caption_for(&self, text: &str) -> Option<Caption> {
        self.parser
            .parse(text)
            .map(|tree| tokenize_tree(&tree, self.vocab).caption())
    }

    pub fn score(&self, caption: &Caption, visual: &VisualFeatures) -> Result<f64, ScoreError> {
        let raw = match self.path {
            ScorePath::LevelOrder => score_caption(self.decoder, caption, visual, self.mode)?,
            ScorePath::SinglePass => {
                score_caption_single_pass(self.decoder, caption, visual, self.mode)?
            }
        };
        Ok(if self.length_normalize {
            raw / caption.len() as f64
        } else {
            raw
        })
    }

    pub fn retrieve(&self, task: &RetrievalTask) -> Result<Retrieval, ScoreError> {
        task.validate()?;
        let captions = task
            .candidates
            .iter()
            .enumerate()
            .map(|(index, text)| {
                self.caption_for(text)
                    .ok_or(ScoreError::UnparseableCandidate { index })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let scores = captions
            .par_iter()
            .map(|c| self.score(c, &task.visual))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Retrieval {
            chosen: argmax_lowest(&scores),
            scores,
        })
    }

    /// Retrieve every task on the worker pool; results keep task order.
    pub fn retrieve_all(&self, tasks: &[RetrievalTask]) -> Result<Vec<Retrieval>, ScoreError> {
        worker_pool().install(|| {
            tasks
                .par_iter()
                .map(|t| self.retrieve(t))
                .collect::<Result<Vec<_>, _>>()
        })
    }

    pub fn evaluate(&self, tasks: &[RetrievalTask]) -> Result<EvalReport, ScoreError> {
        let results = self.retrieve_all(tasks)?;
        EvalReport::from_results(tasks, &results)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TierAccuracy {
    pub tier: String,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

/// Accuracy per tier plus the unweighted mean over tiers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tiers: Vec<TierAccuracy>,
    pub macro_average: f64,
    pub tasks: usize,
}

impl EvalReport {
    pub fn from_results(
        tasks: &[RetrievalTask],
        results: &[Retrieval],
    ) -> Result<EvalReport, ScoreError> {
        if tasks.is_empty() {
            return Err(ScoreError::EmptyTasks);
        }
        let mut groups: BTreeMap<Option<Tier>, (usize, usize)> = BTreeMap::new();
        for (t, r) in tasks.iter().zip(results) {
            let e = groups.entry(t.tier).or_default();
            e.1 += 1;
            if r.chosen == t.positive_index {
                e.0 += 1;
            }
        }
        let tiers: Vec<TierAccuracy> = groups
            .into_iter()
            .map(|(tier, (correct, total))| TierAccuracy {
                tier: tier.map_or("none".to_string(), |t| t.label().to_string()),
                correct,
                total,
                accuracy: correct as f64 / total as f64,
            })
            .collect();
        let macro_average = tiers.iter().map(|t| t.accuracy).sum::<f64>() / tiers.len() as f64;
        Ok(EvalReport {
            tiers,
            macro_average,
            tasks: tasks.len(),
        })
    }

    pub fn accuracy(&self, tier: Tier) -> Option<f64> {
        self.tiers
            .iter()
            .find(|t| t.tier == tier.label())
            .map(|t| t.accuracy)
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{:<8} {:>8} {:>7} {:>9}\n", "tier", "correct", "total", "accuracy");
        for t in &self.tiers {
            s.push_str(&format!(
                "{:<8} {:>8} {:>7} {:>9.4}\n",
                t.tier, t.correct, t.total, t.accuracy
            ));
        }
        s.push_str(&format!("{:<8} {:>8} {:>7} {:>9.4}\n", "macro", "", self.tasks, self.macro_average));
        s
    }
}

/// One line of a tasks file. `image_features` is relative to the file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub image_features: String,
    pub candidates: Vec<String>,
    pub positive_index: usize,
    pub tier: Option<Tier>,
}

pub fn read_task_records(path: &Path) -> Result<Vec<TaskRecord>, ScoreError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TaskRecord = serde_json::from_str(&line).map_err(|e| ScoreError::TaskFile {
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_task_records(path: &Path, records: &[TaskRecord]) -> Result<(), ScoreError> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Read a tasks file and the feature files it references.
pub fn load_tasks(path: &Path) -> Result<Vec<RetrievalTask>, ScoreError> {
    let base: PathBuf = path.parent().map(Path::to_path_buf).unwrap_or_default();
    read_task_records(path)?
        .into_iter()
        .enumerate()
        .map(|(i, rec)| {
            let fpath = base.join(&rec.image_features);
            let mut f = BufReader::new(File::open(&fpath).map_err(|e| ScoreError::TaskFile {
                line: i + 1,
                reason: format!("{}: {e}", fpath.display()),
            })?);
            let visual = read_visual_features(&mut f, rec.image_features.clone())?;
            let task = RetrievalTask {
                visual,
                candidates: rec.candidates,
                positive_index: rec.positive_index,
                tier: rec.tier,
            };
            task.validate().map_err(|e| ScoreError::TaskFile {
                line: i + 1,
                reason: e.to_string(),
            })?;
            Ok(task)
        })
        .collect()
}
