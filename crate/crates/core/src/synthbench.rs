//! Synthetic compositional scenes with known visual features, template
//! captions, gold dependency trees and tiered hard negatives.
//!
//! A caption mentions objects 0 and 1 of a scene and their relation, in
//! either order: "a big red cube above a small blue ball" and "a small blue
//! ball below a big red cube" describe the same scene. Because the mention
//! order is a coin flip, which feature slot a caption word refers to can only
//! be recovered through the words it depends on. A third scene object, when
//! present, is never mentioned.

use std::collections::HashSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::category::SyntacticCategory;
use crate::conllu::{DependencyTree, TreeNode};
use crate::decoder::VisualFeatures;
use crate::scorer::{CaptionParser, Tier};
use crate::seed::{derive_seed, rng_for};
use crate::tensor::Tensor;

pub const SHAPES: [&str; 8] = ["cube", "ball", "cone", "ring", "star", "cylinder", "pyramid", "disk"];
pub const COLORS: [&str; 8] = ["red", "green", "blue", "yellow", "black", "white", "purple", "orange"];
pub const SIZES: [&str; 3] = ["small", "medium", "big"];
pub const RELATIONS: [&str; 6] = ["above", "below", "behind", "before", "near", "beside"];

/// Feature slots per pseudo-layer for objects; `m = 2 * PATCHES + 2`.
pub const PATCHES: usize = 3;
pub const VISUAL_SLOTS: usize = 2 * PATCHES + 2;
pub const DEFAULT_VISUAL_DIM: usize = 32;
pub const DEFAULT_NOISE_SIGMA: f64 = 0.05;
pub const NEGATIVES_PER_TASK: usize = 10;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SynthError {
    #[error("tier {tier} needs {needed} attributes, caption has {available}")]
    TierInapplicable {
        tier: Tier,
        needed: usize,
        available: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Object {
    pub shape: usize,
    pub color: usize,
    pub size: usize,
}

impl Object {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        Object {
            shape: rng.gen_range(0..SHAPES.len()),
            color: rng.gen_range(0..COLORS.len()),
            size: rng.gen_range(0..SIZES.len()),
        }
    }

    fn words(&self) -> [&'static str; 4] {
        ["a", SIZES[self.size], COLORS[self.color], SHAPES[self.shape]]
    }
}

/// Converse of a relation index: "x above y" iff "y below x".
pub fn converse(relation: usize) -> usize {
    match relation {
        0 => 1,
        1 => 0,
        2 => 3,
        3 => 2,
        r => r,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Scene {
    pub objects: Vec<Object>,
    /// Relation of object 0 to object 1; present iff there are 2+ objects.
    pub relation: Option<usize>,
    pub seed: u64,
}

impl Scene {
    pub fn random(seed: u64) -> Self {
        let mut rng = rng_for(seed, "scene");
        let count = match rng.gen_range(0..5) {
            0 => 1,
            1 | 2 => 2,
            _ => 3,
        };
        let mut objects: Vec<Object> = Vec::with_capacity(count);
        while objects.len() < count {
            let o = Object::random(&mut rng);
            if objects.iter().all(|p| (p.shape, p.color) != (o.shape, o.color)) {
                objects.push(o);
            }
        }
        let relation = (count >= 2).then(|| rng.gen_range(0..RELATIONS.len()));
        Scene {
            objects,
            relation,
            seed,
        }
    }

    /// Whether the described configuration holds in this scene.
    pub fn satisfies(&self, d: &Description) -> bool {
        match d.rest {
            None => self.objects.contains(&d.first),
            Some((rel, second)) => match (self.relation, self.objects.get(1)) {
                (Some(r), Some(&o1)) => {
                    let o0 = self.objects[0];
                    (d.first == o0 && second == o1 && rel == r)
                        || (d.first == o1 && second == o0 && rel == converse(r))
                }
                _ => false,
            },
        }
    }

    fn pairs(&self) -> HashSet<(usize, usize)> {
        self.objects.iter().map(|o| (o.shape, o.color)).collect()
    }
}

/// Symbolic content of a caption: one mention, or two joined by a relation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Description {
    pub first: Object,
    pub rest: Option<(usize, Object)>,
}

impl Description {
    pub fn mentions(&self) -> usize {
        1 + self.rest.is_some() as usize
    }

    fn mention(&self, m: usize) -> Object {
        if m == 0 {
            self.first
        } else {
            self.rest.expect("second mention").1
        }
    }

    fn mention_mut(&mut self, m: usize) -> &mut Object {
        if m == 0 {
            &mut self.first
        } else {
            &mut self.rest.as_mut().expect("second mention").1
        }
    }

    pub fn words(&self) -> Vec<&'static str> {
        let mut w = self.first.words().to_vec();
        if let Some((rel, second)) = self.rest {
            w.push(RELATIONS[rel]);
            w.extend(second.words());
        }
        w
    }

    pub fn text(&self) -> String {
        self.words().join(" ")
    }

    /// Gold tree: determiner and adjectives attach to their noun, the first
    /// noun is the root, the relation word attaches to it and the second
    /// noun is the relation's object.
    pub fn tree(&self, sentence_id: &str) -> DependencyTree {
        use SyntacticCategory::*;
        let words = self.words();
        let mut cats = vec![Det, Amod, Amod, Root];
        let mut heads = vec![Some(3), Some(3), Some(3), None];
        if self.rest.is_some() {
            cats.extend([Prep, Det, Amod, Amod, Pobj]);
            heads.extend([Some(3), Some(8), Some(8), Some(8), Some(4)]);
        }
        let nodes = words
            .iter()
            .zip(cats)
            .map(|(w, category)| TreeNode {
                form: w.to_string(),
                category,
            })
            .collect();
        DependencyTree::new(sentence_id, nodes, heads).expect("template tree is valid")
    }

    /// Inverse of [`Description::text`].
    pub fn parse(text: &str) -> Option<Description> {
        let words: Vec<String> = text.split_whitespace().map(str::to_lowercase).collect();
        let find = |table: &[&str], w: &str| table.iter().position(|t| *t == w);
        let mention = |w: &[String]| -> Option<Object> {
            if w.len() != 4 || w[0] != "a" {
                return None;
            }
            Some(Object {
                size: find(&SIZES, &w[1])?,
                color: find(&COLORS, &w[2])?,
                shape: find(&SHAPES, &w[3])?,
            })
        };
        match words.len() {
            4 => Some(Description {
                first: mention(&words)?,
                rest: None,
            }),
            9 => Some(Description {
                first: mention(&words[..4])?,
                rest: Some((find(&RELATIONS, &words[4])?, mention(&words[5..])?)),
            }),
            _ => None,
        }
    }

    fn pairs(&self) -> HashSet<(usize, usize)> {
        (0..self.mentions())
            .map(|m| {
                let o = self.mention(m);
                (o.shape, o.color)
            })
            .collect()
    }
}

/// Parses exactly the template grammar, producing gold-shaped trees.
#[derive(Clone, Copy, Debug, Default)]
pub struct TemplateParser;

impl CaptionParser for TemplateParser {
    fn parse(&self, text: &str) -> Option<DependencyTree> {
        Description::parse(text).map(|d| d.tree("candidate"))
    }
}

/// The positive description of a scene, with a seeded choice of which
/// mentioned object comes first.
pub fn describe(scene: &Scene) -> Description {
    let mut rng = rng_for(scene.seed, "describe");
    match scene.relation {
        None => Description {
            first: scene.objects[0],
            rest: None,
        },
        Some(r) => {
            let (o0, o1) = (scene.objects[0], scene.objects[1]);
            if rng.gen_bool(0.5) {
                Description {
                    first: o1,
                    rest: Some((converse(r), o0)),
                }
            } else {
                Description {
                    first: o0,
                    rest: Some((r, o1)),
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthItem {
    pub id: String,
    pub scene: Scene,
    pub description: Description,
    pub caption: String,
    pub tree: DependencyTree,
}

/// `n_scenes` scenes with captions and gold trees; ids are `{prefix}{i}`.
pub fn generate(n_scenes: usize, grammar_seed: u64, prefix: &str) -> Vec<SynthItem> {
    (0..n_scenes)
        .map(|i| {
            let id = format!("{prefix}{i:06}");
            let scene = Scene::random(derive_seed(grammar_seed, &format!("scene/{i}")));
            let description = describe(&scene);
            SynthItem {
                caption: description.text(),
                tree: description.tree(&id),
                id,
                scene,
                description,
            }
        })
        .collect()
}

#[derive(Clone, Copy)]
enum Attr {
    Size,
    Color,
}

/// Negative descriptions for one tier, each false in `scene`.
///
/// Replacement tiers change 3 (Easy), 2 (Medium) or 1 (Hard) size or color
/// adjectives. Swap exchanges a proper subset of {size, color, shape}
/// between the two mentioned objects, color first. Trivial draws
/// descriptions of unrelated scenes sharing no (shape, color) pair with this
/// one. Fewer than [`NEGATIVES_PER_TASK`] come back when the tier's space is
/// exhausted.
pub fn make_negatives(
    scene: &Scene,
    positive: &Description,
    tier: Tier,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Description>, SynthError> {
    let attributes = 2 * positive.mentions();
    let inapplicable = |needed| SynthError::TierInapplicable {
        tier,
        needed,
        available: attributes,
    };
    let mut out: Vec<Description> = Vec::new();
    let accept = |d: Description, out: &mut Vec<Description>| {
        if d != *positive && !scene.satisfies(&d) && !out.contains(&d) {
            out.push(d);
        }
    };
    match tier {
        Tier::Easy | Tier::Medium | Tier::Hard => {
            let k = match tier {
                Tier::Easy => 3,
                Tier::Medium => 2,
                _ => 1,
            };
            if attributes < k {
                return Err(inapplicable(k));
            }
            let slots: Vec<(usize, Attr)> = (0..positive.mentions())
                .flat_map(|m| [(m, Attr::Size), (m, Attr::Color)])
                .collect();
            for _ in 0..50 * NEGATIVES_PER_TASK {
                if out.len() == NEGATIVES_PER_TASK {
                    break;
                }
                let mut chosen: Vec<usize> = (0..slots.len()).collect();
                for i in 0..k {
                    let j = rng.gen_range(i..chosen.len());
                    chosen.swap(i, j);
                }
                let mut d = *positive;
                for &s in &chosen[..k] {
                    let (m, attr) = slots[s];
                    let o = d.mention_mut(m);
                    match attr {
                        Attr::Size => o.size = other_value(rng, o.size, SIZES.len()),
                        Attr::Color => o.color = other_value(rng, o.color, COLORS.len()),
                    }
                }
                accept(d, &mut out);
            }
        }
        Tier::Swap => {
            if positive.mentions() < 2 {
                return Err(inapplicable(2 * 2));
            }
            let subsets: [&[usize]; 6] = [&[1], &[0], &[2], &[0, 1], &[1, 2], &[0, 2]];
            for subset in subsets {
                let mut d = *positive;
                let (a, b) = (d.mention(0), d.mention(1));
                let (mut na, mut nb) = (a, b);
                for &f in subset {
                    match f {
                        0 => std::mem::swap(&mut na.size, &mut nb.size),
                        1 => std::mem::swap(&mut na.color, &mut nb.color),
                        _ => std::mem::swap(&mut na.shape, &mut nb.shape),
                    }
                }
                *d.mention_mut(0) = na;
                *d.mention_mut(1) = nb;
                accept(d, &mut out);
            }
        }
        Tier::Trivial => {
            let taken = scene.pairs();
            let mut draw = 0u64;
            while out.len() < NEGATIVES_PER_TASK && draw < 1000 {
                let other = Scene::random(derive_seed(rng.gen(), &format!("trivial/{draw}")));
                draw += 1;
                if other.objects.len() < positive.mentions() {
                    continue;
                }
                let mut d = describe(&other);
                if positive.mentions() == 1 {
                    d.rest = None;
                }
                if d.pairs().is_disjoint(&taken) {
                    accept(d, &mut out);
                }
            }
        }
    }
    Ok(out)
}

fn other_value(rng: &mut ChaCha8Rng, current: usize, n: usize) -> usize {
    let v = rng.gen_range(0..n - 1);
    if v >= current {
        v + 1
    } else {
        v
    }
}

/// Fixed random map from symbolic scenes to visual feature sets.
///
/// Patch slot `k` of a pseudo-layer is a projection of the summed
/// embeddings of object `k`'s shape, color, size and slot role, so
/// attributes stay bound to their object. The CLS slot carries the relation
/// and the mean of the patch latents. The penultimate layer uses a second
/// projection followed by `tanh`.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneEncoder {
    seed: u64,
    dim: usize,
    latent: usize,
    noise_sigma: f64,
    shape: Vec<Vec<f64>>,
    color: Vec<Vec<f64>>,
    size: Vec<Vec<f64>>,
    role: Vec<Vec<f64>>,
    relation: Vec<Vec<f64>>,
    empty: Vec<f64>,
    cls: Vec<f64>,
    proj_last: Vec<f64>,
    proj_penultimate: Vec<f64>,
}

impl SceneEncoder {
    pub fn new(seed: u64, dim: usize, noise_sigma: f64) -> Self {
        let latent = 32;
        let mut rng = rng_for(seed, "scene-encoder");
        let mut table = |rows: usize, scale: f64| -> Vec<Vec<f64>> {
            (0..rows)
                .map(|_| {
                    (0..latent)
                        .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                        .collect::<Vec<f64>>()
                })
                .collect()
        };
        let shape = table(SHAPES.len(), 1.0);
        let color = table(COLORS.len(), 1.0);
        let size = table(SIZES.len(), 1.0);
        let role = table(PATCHES, 1.0);
        let relation = table(RELATIONS.len() + 1, 1.0);
        let empty = table(1, 1.0).remove(0);
        let cls = table(1, 1.0).remove(0);
        let proj_scale = 1.0 / (latent as f64).sqrt();
        let mut proj = || -> Vec<f64> {
            (0..latent * dim)
                .map(|_| proj_scale * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                .collect::<Vec<f64>>()
        };
        let proj_last = proj();
        let proj_penultimate = proj();
        SceneEncoder {
            seed,
            dim,
            latent,
            noise_sigma,
            shape,
            color,
            size,
            role,
            relation,
            empty,
            cls,
            proj_last,
            proj_penultimate,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    fn latents(&self, scene: &Scene) -> Vec<Vec<f64>> {
        let add = |acc: &mut Vec<f64>, v: &[f64]| {
            for (a, b) in acc.iter_mut().zip(v) {
                *a += b;
            }
        };
        let mut patches = Vec::with_capacity(PATCHES);
        for k in 0..PATCHES {
            let mut z = self.role[k].clone();
            match scene.objects.get(k) {
                Some(o) => {
                    add(&mut z, &self.shape[o.shape]);
                    add(&mut z, &self.color[o.color]);
                    add(&mut z, &self.size[o.size]);
                }
                None => add(&mut z, &self.empty),
            }
            patches.push(z);
        }
        let mut cls = self.cls.clone();
        add(&mut cls, &self.relation[scene.relation.unwrap_or(RELATIONS.len())]);
        for p in &patches {
            let scaled: Vec<f64> = p.iter().map(|v| v / PATCHES as f64).collect();
            add(&mut cls, &scaled);
        }
        let mut out = vec![cls];
        out.extend(patches);
        out
    }

    fn project(&self, z: &[f64], proj: &[f64], squash: bool) -> Vec<f64> {
        (0..self.dim)
            .map(|c| {
                let v: f64 = (0..self.latent).map(|r| z[r] * proj[r * self.dim + c]).sum();
                if squash {
                    v.tanh()
                } else {
                    v
                }
            })
            .collect()
    }

    /// Features for `scene`; the noise draw is keyed by `noise_key`.
    pub fn encode(&self, scene: &Scene, noise_key: &str) -> VisualFeatures {
        let latents = self.latents(scene);
        let mut rows: Vec<f64> = Vec::with_capacity(VISUAL_SLOTS * self.dim);
        for z in &latents {
            rows.extend(self.project(z, &self.proj_last, false));
        }
        for z in &latents {
            rows.extend(self.project(z, &self.proj_penultimate, true));
        }
        if self.noise_sigma > 0.0 {
            let mut rng = rng_for(self.seed, &format!("noise/{noise_key}"));
            for v in &mut rows {
                let e: f64 = StandardNormal.sample(&mut rng);
                *v += self.noise_sigma * e;
            }
        }
        let data = rows.into_iter().map(|v| v as f32).collect();
        let t = Tensor::matrix(VISUAL_SLOTS, self.dim, data).expect("feature shape");
        VisualFeatures::new(t, noise_key).expect("finite features")
    }
}

/// One held-out retrieval task in symbolic form.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthTask {
    pub item: usize,
    pub tier: Tier,
    pub candidates: Vec<String>,
    pub positive_index: usize,
}

/// Tasks for every tier applicable to each item, positive placed at a
/// seeded random position among its negatives.
pub fn make_tasks(items: &[SynthItem], seed: u64) -> Vec<SynthTask> {
    let mut tasks = Vec::new();
    for (i, item) in items.iter().enumerate() {
        for tier in Tier::ALL {
            let mut rng = rng_for(seed, &format!("negatives/{}/{tier}", item.id));
            let Ok(negs) = make_negatives(&item.scene, &item.description, tier, &mut rng) else {
                continue;
            };
            if negs.is_empty() {
                continue;
            }
            let positive_index = rng.gen_range(0..=negs.len());
            let mut candidates: Vec<String> = negs.iter().map(Description::text).collect();
            candidates.insert(positive_index, item.caption.clone());
            tasks.push(SynthTask {
                item: i,
                tier,
                candidates,
                positive_index,
            });
        }
    }
    tasks
}
