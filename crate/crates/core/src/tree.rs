//! Greedy induction and traversal of the fuzzy decision tree.
//!
//! Each internal node holds a fuzzy predicate `(S, φ, τ)`: the scores of the
//! detector subset `S` are fused with the operator `φ` into a local
//! prediction, and samples whose local prediction exceeds `τ` go right
//! (fake-ward) while the rest go left (real-ward).
//!
//! A node is split with the candidate that maximizes
//! `gain = accuracy_split - accuracy_majority`, searched exhaustively over
//! every subset of at most `max_split_models` detectors, every operator and
//! every threshold of the grid `{k / (g + 1) : k = 1..g}`. Splits must have
//! positive gain and leave more than `min_samples` records on each side.

use std::cmp::Ordering;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FuseError, Result};
use crate::ops::EnsembleOperator;
use crate::score::{Label, ScoreMatrix};

/// The fuzzy predicate of one internal node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeConfig {
    detectors: Vec<usize>,
    operator: EnsembleOperator,
    threshold: f64,
}

impl NodeConfig {
    /// `detectors` must be non-empty and strictly increasing; the threshold
    /// must lie strictly inside (0, 1).
    pub fn new(detectors: Vec<usize>, operator: EnsembleOperator, threshold: f64) -> Result<Self> {
        if detectors.is_empty() {
            return Err(FuseError::Precondition(
                "node detector subset is empty".into(),
            ));
        }
        if detectors.windows(2).any(|w| w[0] >= w[1]) {
            return Err(FuseError::Precondition(format!(
                "node detector indices must be strictly increasing, got {detectors:?}"
            )));
        }
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(FuseError::Precondition(format!(
                "node threshold {threshold} outside (0, 1)"
            )));
        }
        Ok(NodeConfig {
            detectors,
            operator,
            threshold,
        })
    }

    pub fn detectors(&self) -> &[usize] {
        &self.detectors
    }

    pub fn operator(&self) -> EnsembleOperator {
        self.operator
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Fused score of the node's detectors for one sample.
    pub fn local_prediction(&self, features: &[f64]) -> Result<f64> {
        if let Some(&bad) = self.detectors.iter().find(|&&i| i >= features.len()) {
            return Err(FuseError::Registry(format!(
                "detector index {bad} out of range for {} scores",
                features.len()
            )));
        }
        let mut gathered = Vec::with_capacity(self.detectors.len());
        let mut scratch = Vec::with_capacity(self.detectors.len());
        Ok(self.fused(features, &mut gathered, &mut scratch))
    }

    fn fused(&self, features: &[f64], gathered: &mut Vec<f64>, scratch: &mut Vec<f64>) -> f64 {
        gathered.clear();
        gathered.extend(self.detectors.iter().map(|&i| features[i]));
        self.operator.fuse(gathered, scratch)
    }

    /// Right (fake-ward) iff the local prediction strictly exceeds the threshold.
    pub fn route(&self, features: &[f64]) -> Result<Branch> {
        Ok(Branch::of(
            self.local_prediction(features)? > self.threshold,
        ))
    }

    /// Total order used to break gain ties: subset size, subset indices,
    /// operator, threshold.
    pub fn canonical_cmp(&self, other: &NodeConfig) -> Ordering {
        self.detectors
            .len()
            .cmp(&other.detectors.len())
            .then_with(|| self.detectors.cmp(&other.detectors))
            .then_with(|| self.operator.cmp(&other.operator))
            .then_with(|| self.threshold.total_cmp(&other.threshold))
    }
}

impl fmt::Display for NodeConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({:?}, {}, {})",
            self.detectors, self.operator, self.threshold
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Left,
    Right,
}

impl Branch {
    fn of(goes_right: bool) -> Branch {
        if goes_right {
            Branch::Right
        } else {
            Branch::Left
        }
    }
}

/// How children are labeled when scoring a split.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitLabeling {
    /// Each child predicts its own majority class (tie → fake).
    #[default]
    Majority,
    /// Left child predicts real, right child predicts fake.
    Fixed,
}

impl std::str::FromStr for SplitLabeling {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "majority" => Ok(SplitLabeling::Majority),
            "fixed" => Ok(SplitLabeling::Fixed),
            other => Err(format!("unknown split labeling `{other}`")),
        }
    }
}

impl fmt::Display for SplitLabeling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitLabeling::Majority => "majority",
            SplitLabeling::Fixed => "fixed",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Largest detector subset a node may fuse (`s`).
    pub max_split_models: usize,
    /// Both children of a split must hold more than this many samples (`m`).
    pub min_samples: usize,
    /// Maximum number of internal nodes on a root-to-leaf path (`d`).
    pub max_depth: usize,
    /// Number of thresholds searched per subset and operator (`g`).
    pub thr_grid_size: usize,
    #[serde(default)]
    pub split_labeling: SplitLabeling,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            max_split_models: 3,
            min_samples: 0,
            max_depth: 4,
            thr_grid_size: 10,
            split_labeling: SplitLabeling::Majority,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.max_split_models < 1 {
            return Err(FuseError::Precondition(
                "max_split_models must be at least 1".into(),
            ));
        }
        if self.max_depth < 1 {
            return Err(FuseError::Precondition(
                "max_depth must be at least 1".into(),
            ));
        }
        if self.thr_grid_size < 2 {
            return Err(FuseError::Precondition(
                "thr_grid_size must be at least 2".into(),
            ));
        }
        Ok(())
    }

    pub fn threshold_grid(&self) -> Vec<f64> {
        threshold_grid(self.thr_grid_size)
    }
}

/// `g` uniformly spaced thresholds strictly inside (0, 1).
pub fn threshold_grid(g: usize) -> Vec<f64> {
    (1..=g).map(|k| k as f64 / (g + 1) as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassCounts {
    pub real: usize,
    pub fake: usize,
}

impl ClassCounts {
    pub fn of(matrix: &ScoreMatrix, samples: &[usize]) -> ClassCounts {
        let fake = samples
            .iter()
            .filter(|&&i| matrix.label(i) == Label::Fake)
            .count();
        ClassCounts {
            real: samples.len() - fake,
            fake,
        }
    }

    pub fn total(&self) -> usize {
        self.real + self.fake
    }

    pub fn majority(&self) -> Label {
        Label::majority(self.real, self.fake)
    }
}

/// Accuracy of predicting the dominant class for every label.
pub fn majority_accuracy(labels: &[Label]) -> Result<f64> {
    if labels.is_empty() {
        return Err(FuseError::Precondition(
            "majority accuracy of no labels".into(),
        ));
    }
    let fake = labels.iter().filter(|&&l| l == Label::Fake).count();
    let real = labels.len() - fake;
    Ok(real.max(fake) as f64 / labels.len() as f64)
}

fn split_gain(node: ClassCounts, left: ClassCounts, labeling: SplitLabeling) -> f64 {
    let right = ClassCounts {
        real: node.real - left.real,
        fake: node.fake - left.fake,
    };
    let correct = match labeling {
        SplitLabeling::Majority => left.real.max(left.fake) + right.real.max(right.fake),
        SplitLabeling::Fixed => left.real + right.fake,
    };
    let n = node.total() as f64;
    correct as f64 / n - node.real.max(node.fake) as f64 / n
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitOutcome {
    pub gain: f64,
    pub left: Vec<usize>,
    pub right: Vec<usize>,
}

/// Partitions `samples` by `config` and scores the partition.
pub fn evaluate_split(
    config: &NodeConfig,
    matrix: &ScoreMatrix,
    samples: &[usize],
    labeling: SplitLabeling,
) -> Result<SplitOutcome> {
    if samples.is_empty() {
        return Err(FuseError::Precondition("cannot split an empty node".into()));
    }
    let mut left = Vec::new();
    let mut right = Vec::new();
    for &i in samples {
        match config.route(matrix.scores(i))? {
            Branch::Left => left.push(i),
            Branch::Right => right.push(i),
        }
    }
    let gain = split_gain(
        ClassCounts::of(matrix, samples),
        ClassCounts::of(matrix, &left),
        labeling,
    );
    Ok(SplitOutcome { gain, left, right })
}

/// Every non-empty subset of `0..m` with at most `s` members, ordered by
/// size and then lexicographically.
pub fn detector_subsets(m: usize, s: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for k in 1..=s.min(m) {
        let mut combo: Vec<usize> = (0..k).collect();
        loop {
            out.push(combo.clone());
            // Advance to the next combination in lexicographic order.
            let Some(pos) = (0..k).rev().find(|&p| combo[p] < m - k + p) else {
                break;
            };
            combo[pos] += 1;
            for q in pos + 1..k {
                combo[q] = combo[q - 1] + 1;
            }
        }
    }
    out
}

/// Result of one exhaustive search at a node.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSearch {
    pub best: Option<(NodeConfig, f64)>,
    pub candidates_evaluated: usize,
}

#[derive(Clone, Copy)]
struct GroupBest {
    group: usize,
    tau: usize,
    gain: f64,
}

fn better(a: GroupBest, b: GroupBest) -> GroupBest {
    match a.gain.partial_cmp(&b.gain) {
        Some(Ordering::Greater) => a,
        Some(Ordering::Less) => b,
        _ => {
            if (a.group, a.tau) <= (b.group, b.tau) {
                a
            } else {
                b
            }
        }
    }
}

/// Exhaustive split search at one node. Candidates are scored in parallel
/// and reduced with the canonical order, so the result matches a
/// sequential scan.
pub fn search_splits(
    matrix: &ScoreMatrix,
    samples: &[usize],
    hp: &Hyperparams,
) -> Result<SplitSearch> {
    if samples.is_empty() {
        return Err(FuseError::Precondition("cannot split an empty node".into()));
    }
    hp.validate()?;
    let grid = hp.threshold_grid();
    let groups: Vec<(Vec<usize>, EnsembleOperator)> =
        detector_subsets(matrix.n_detectors(), hp.max_split_models)
            .into_iter()
            .flat_map(|s| {
                EnsembleOperator::ALL
                    .into_iter()
                    .map(move |op| (s.clone(), op))
            })
            .collect();
    let node = ClassCounts::of(matrix, samples);
    let labels: Vec<Label> = samples.iter().map(|&i| matrix.label(i)).collect();

    let best = groups
        .par_iter()
        .enumerate()
        .map_init(
            || {
                (
                    Vec::new(),
                    Vec::new(),
                    vec![ClassCounts::default(); grid.len()],
                )
            },
            |(gathered, scratch, left_counts), (g, (subset, op))| {
                let config = NodeConfig {
                    detectors: subset.clone(),
                    operator: *op,
                    threshold: 0.5,
                };
                left_counts.fill(ClassCounts::default());
                for (&i, &label) in samples.iter().zip(&labels) {
                    let p = config.fused(matrix.scores(i), gathered, scratch);
                    for (tau, counts) in grid.iter().zip(left_counts.iter_mut()) {
                        if p <= *tau {
                            match label {
                                Label::Real => counts.real += 1,
                                Label::Fake => counts.fake += 1,
                            }
                        }
                    }
                }
                let mut best: Option<GroupBest> = None;
                for (k, left) in left_counts.iter().enumerate() {
                    let n_left = left.total();
                    let n_right = node.total() - n_left;
                    if n_left <= hp.min_samples || n_right <= hp.min_samples {
                        continue;
                    }
                    let gain = split_gain(node, *left, hp.split_labeling);
                    if gain <= 0.0 {
                        continue;
                    }
                    let cand = GroupBest {
                        group: g,
                        tau: k,
                        gain,
                    };
                    best = Some(best.map_or(cand, |b| better(b, cand)));
                }
                best
            },
        )
        .flatten()
        .reduce_with(better);

    let best = best.map(|b| {
        let (subset, op) = &groups[b.group];
        (
            NodeConfig {
                detectors: subset.clone(),
                operator: *op,
                threshold: grid[b.tau],
            },
            b.gain,
        )
    });
    Ok(SplitSearch {
        best,
        candidates_evaluated: groups.len() * grid.len(),
    })
}

/// The best qualifying split of `samples`, if any.
pub fn best_split(
    matrix: &ScoreMatrix,
    samples: &[usize],
    hp: &Hyperparams,
) -> Result<Option<(NodeConfig, f64)>> {
    Ok(search_splits(matrix, samples, hp)?.best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Internal {
        config: NodeConfig,
        gain: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        label: Label,
        train_counts: ClassCounts,
    },
}

impl TreeNode {
    /// Number of internal nodes on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Internal { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn n_internal(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Internal { left, right, .. } => 1 + left.n_internal() + right.n_internal(),
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Internal { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathStep {
    pub config: NodeConfig,
    pub branch: Branch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: Label,
    pub path: Vec<PathStep>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuzzyTree {
    pub detectors: Vec<String>,
    pub hyperparams: Hyperparams,
    pub root: TreeNode,
}

/// Per-node bookkeeping collected while growing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GrowStats {
    /// Candidates scored at each searched node, in pre-order.
    pub candidates_per_node: Vec<usize>,
}

impl FuzzyTree {
    pub fn grow(matrix: &ScoreMatrix, hp: &Hyperparams) -> Result<FuzzyTree> {
        Ok(Self::grow_with_stats(matrix, hp)?.0)
    }

    pub fn grow_with_stats(
        matrix: &ScoreMatrix,
        hp: &Hyperparams,
    ) -> Result<(FuzzyTree, GrowStats)> {
        hp.validate()?;
        if matrix.is_empty() {
            return Err(FuseError::Precondition(
                "cannot train on an empty score matrix".into(),
            ));
        }
        let all: Vec<usize> = (0..matrix.n_samples()).collect();
        let mut stats = GrowStats::default();
        let root = grow_node(matrix, &all, hp, 0, &mut stats)?;
        let tree = FuzzyTree {
            detectors: matrix.detector_names(),
            hyperparams: *hp,
            root,
        };
        Ok((tree, stats))
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    pub fn n_nodes(&self) -> usize {
        self.root.n_internal() + self.root.n_leaves()
    }

    /// Traverses from the root to a leaf, recording every decision.
    pub fn predict(&self, features: &[f64]) -> Result<Prediction> {
        if features.len() != self.detectors.len() {
            return Err(FuseError::Registry(format!(
                "tree expects {} scores, got {}",
                self.detectors.len(),
                features.len()
            )));
        }
        let mut node = &self.root;
        let mut path = Vec::new();
        loop {
            match node {
                TreeNode::Leaf { label, .. } => {
                    return Ok(Prediction {
                        label: *label,
                        path,
                    })
                }
                TreeNode::Internal {
                    config,
                    left,
                    right,
                    ..
                } => {
                    let branch = config.route(features)?;
                    path.push(PathStep {
                        config: config.clone(),
                        branch,
                    });
                    node = match branch {
                        Branch::Left => left,
                        Branch::Right => right,
                    };
                }
            }
        }
    }

    /// Fails unless `matrix` carries the detectors the tree was trained on.
    pub fn check_matrix(&self, matrix: &ScoreMatrix) -> Result<()> {
        let names = matrix.detector_names();
        if names != self.detectors {
            return Err(FuseError::Registry(format!(
                "tree was trained on {:?}, scores provide {:?}",
                self.detectors, names
            )));
        }
        Ok(())
    }

    pub fn predict_matrix(&self, matrix: &ScoreMatrix) -> Result<Vec<Prediction>> {
        self.check_matrix(matrix)?;
        (0..matrix.n_samples())
            .map(|i| self.predict(matrix.scores(i)))
            .collect()
    }

    pub fn accuracy(&self, matrix: &ScoreMatrix) -> Result<f64> {
        let preds = self.predict_matrix(matrix)?;
        if preds.is_empty() {
            return Err(FuseError::Precondition(
                "accuracy of an empty matrix".into(),
            ));
        }
        let correct = preds
            .iter()
            .enumerate()
            .filter(|(i, p)| p.label == matrix.label(*i))
            .count();
        Ok(correct as f64 / preds.len() as f64)
    }
}

fn grow_node(
    matrix: &ScoreMatrix,
    samples: &[usize],
    hp: &Hyperparams,
    depth: usize,
    stats: &mut GrowStats,
) -> Result<TreeNode> {
    let counts = ClassCounts::of(matrix, samples);
    let leaf = TreeNode::Leaf {
        label: counts.majority(),
        train_counts: counts,
    };
    if depth >= hp.max_depth {
        return Ok(leaf);
    }
    let search = search_splits(matrix, samples, hp)?;
    stats.candidates_per_node.push(search.candidates_evaluated);
    let Some((config, gain)) = search.best else {
        return Ok(leaf);
    };
    let outcome = evaluate_split(&config, matrix, samples, hp.split_labeling)?;
    debug_assert_eq!(outcome.gain.to_bits(), gain.to_bits());
    let left = grow_node(matrix, &outcome.left, hp, depth + 1, stats)?;
    let right = grow_node(matrix, &outcome.right, hp, depth + 1, stats)?;
    Ok(TreeNode::Internal {
        config,
        gain,
        left: Box::new(left),
        right: Box::new(right),
    })
}
