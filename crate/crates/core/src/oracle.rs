//! Brute-force reference for the split search.
//!
//! Everything here is recomputed from scratch with straightforward loops:
//! subsets come from bitmasks, operators are evaluated with explicit
//! loops and a full sort, and each threshold is routed separately. It is
//! slow on purpose and shares no scoring code with [`crate::tree`].

use std::cmp::Ordering;
use std::io::Write;

use crate::error::{FuseError, Result};
use crate::ops::EnsembleOperator;
use crate::score::{Label, ScoreMatrix};
use crate::tree::{FuzzyTree, Hyperparams, NodeConfig, SplitLabeling, TreeNode};

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub config: NodeConfig,
    pub gain: f64,
    pub left_count: usize,
    pub right_count: usize,
}

/// Every candidate split of a node, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateReport {
    pub candidates: Vec<Candidate>,
}

impl CandidateReport {
    /// Highest-ranked candidate with positive gain and more than
    /// `min_samples` records on each side.
    pub fn top_qualifying(&self, min_samples: usize) -> Option<&Candidate> {
        self.candidates
            .iter()
            .find(|c| c.gain > 0.0 && c.left_count > min_samples && c.right_count > min_samples)
    }

    /// CSV dump: `subset,operator,threshold,gain,left_count,right_count`,
    /// with subset members joined by `+`.
    pub fn write_csv<W: Write>(&self, names: &[String], writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record([
            "subset",
            "operator",
            "threshold",
            "gain",
            "left_count",
            "right_count",
        ])?;
        for c in &self.candidates {
            let subset: Vec<&str> = c
                .config
                .detectors()
                .iter()
                .map(|&i| names.get(i).map_or("?", String::as_str))
                .collect();
            wtr.write_record([
                subset.join("+"),
                c.config.operator().name().to_string(),
                c.config.threshold().to_string(),
                c.gain.to_string(),
                c.left_count.to_string(),
                c.right_count.to_string(),
            ])?;
        }
        wtr.flush()
            .map_err(|e| FuseError::io("<oracle report>", e))?;
        Ok(())
    }
}

/// ∑_{k=1..s} C(m, k) · 4 · g.
pub fn expected_candidate_count(m: usize, s: usize, g: usize) -> usize {
    let mut subsets = 0usize;
    let mut binom = 1usize;
    for k in 1..=s.min(m) {
        binom = binom * (m - k + 1) / k;
        subsets += binom;
    }
    subsets * 4 * g
}

fn naive_fuse(op: EnsembleOperator, values: &[f64]) -> f64 {
    match op {
        EnsembleOperator::Mean => {
            let mut total = 0.0;
            for v in values {
                total += v;
            }
            total / values.len() as f64
        }
        EnsembleOperator::Min => {
            let mut best = values[0];
            for &v in &values[1..] {
                if v < best {
                    best = v;
                }
            }
            best
        }
        EnsembleOperator::Max => {
            let mut best = values[0];
            for &v in &values[1..] {
                if v > best {
                    best = v;
                }
            }
            best
        }
        EnsembleOperator::Median => {
            let mut sorted = values.to_vec();
            sorted.sort_by(|a, b| a.partial_cmp(b).expect("scores are finite"));
            let n = sorted.len();
            if n.is_multiple_of(2) {
                (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
            } else {
                sorted[n / 2]
            }
        }
    }
}

fn operator_rank(op: EnsembleOperator) -> usize {
    match op {
        EnsembleOperator::Mean => 0,
        EnsembleOperator::Min => 1,
        EnsembleOperator::Max => 2,
        EnsembleOperator::Median => 3,
    }
}

fn rank_key(c: &NodeConfig) -> (usize, Vec<usize>, usize) {
    (
        c.detectors().len(),
        c.detectors().to_vec(),
        operator_rank(c.operator()),
    )
}

struct Routed {
    gain: f64,
    left: Vec<usize>,
    right: Vec<usize>,
}

fn route_naive(
    matrix: &ScoreMatrix,
    samples: &[usize],
    subset: &[usize],
    op: EnsembleOperator,
    threshold: f64,
    labeling: SplitLabeling,
) -> Routed {
    let mut left = Vec::new();
    let mut right = Vec::new();
    let mut values = Vec::with_capacity(subset.len());
    let (mut lr, mut lf, mut rr, mut rf) = (0usize, 0usize, 0usize, 0usize);
    for &i in samples {
        values.clear();
        for &d in subset {
            values.push(matrix.scores(i)[d]);
        }
        let p = naive_fuse(op, &values);
        let is_fake = matrix.label(i) == Label::Fake;
        if p > threshold {
            right.push(i);
            if is_fake {
                rf += 1
            } else {
                rr += 1
            }
        } else {
            left.push(i);
            if is_fake {
                lf += 1
            } else {
                lr += 1
            }
        }
    }
    let correct = match labeling {
        SplitLabeling::Majority => lr.max(lf) + rr.max(rf),
        SplitLabeling::Fixed => lr + rf,
    };
    let n = samples.len() as f64;
    let majority = (lr + rr).max(lf + rf);
    Routed {
        gain: correct as f64 / n - majority as f64 / n,
        left,
        right,
    }
}

/// Scores every `(S, φ, τ)` candidate on `samples`.
pub fn enumerate_all(
    matrix: &ScoreMatrix,
    samples: &[usize],
    hp: &Hyperparams,
) -> Result<CandidateReport> {
    if samples.is_empty() {
        return Err(FuseError::Precondition(
            "oracle needs a non-empty node".into(),
        ));
    }
    let m = matrix.n_detectors();
    if m >= usize::BITS as usize {
        return Err(FuseError::Precondition(format!(
            "too many detectors ({m}) for the oracle"
        )));
    }
    let g = hp.thr_grid_size;
    let mut candidates = Vec::new();
    for mask in 1usize..(1 << m) {
        if mask.count_ones() as usize > hp.max_split_models {
            continue;
        }
        let subset: Vec<usize> = (0..m).filter(|d| mask & (1 << d) != 0).collect();
        for op in EnsembleOperator::ALL {
            for k in 1..=g {
                let threshold = k as f64 / (g + 1) as f64;
                let routed =
                    route_naive(matrix, samples, &subset, op, threshold, hp.split_labeling);
                candidates.push(Candidate {
                    config: NodeConfig::new(subset.clone(), op, threshold)?,
                    gain: routed.gain,
                    left_count: routed.left.len(),
                    right_count: routed.right.len(),
                });
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.gain
            .partial_cmp(&a.gain)
            .unwrap_or(Ordering::Equal)
            .then_with(|| rank_key(&a.config).cmp(&rank_key(&b.config)))
            .then_with(|| {
                a.config
                    .threshold()
                    .partial_cmp(&b.config.threshold())
                    .unwrap_or(Ordering::Equal)
            })
    });
    Ok(CandidateReport { candidates })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    /// Node address such as `root`, `root.L` or `root.R.L`.
    pub path: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Certification {
    pub nodes_checked: usize,
    pub mismatches: Vec<Mismatch>,
}

impl Certification {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }

    fn flag(&mut self, path: &str, detail: impl Into<String>) {
        self.mismatches.push(Mismatch {
            path: path.to_string(),
            detail: detail.into(),
        });
    }
}

/// Replays training top-down and checks every node against the oracle:
/// internal nodes must hold the top qualifying candidate with its exact
/// gain, and leaves must be unsplittable (or at the depth limit) with
/// correct counts and majority label.
pub fn certify_tree(
    tree: &FuzzyTree,
    matrix: &ScoreMatrix,
    hp: &Hyperparams,
) -> Result<Certification> {
    let names = matrix.detector_names();
    if names != tree.detectors {
        return Err(FuseError::Registry(format!(
            "tree was trained on {:?}, scores provide {:?}",
            tree.detectors, names
        )));
    }
    let mut verdict = Certification::default();
    let all: Vec<usize> = (0..matrix.n_samples()).collect();
    certify_node(&tree.root, matrix, &all, hp, 0, "root", &mut verdict)?;
    Ok(verdict)
}

fn certify_node(
    node: &TreeNode,
    matrix: &ScoreMatrix,
    samples: &[usize],
    hp: &Hyperparams,
    depth: usize,
    path: &str,
    verdict: &mut Certification,
) -> Result<()> {
    verdict.nodes_checked += 1;
    if samples.is_empty() {
        verdict.flag(path, "node received no training samples");
        return Ok(());
    }
    let real = samples
        .iter()
        .filter(|&&i| matrix.label(i) == Label::Real)
        .count();
    let fake = samples.len() - real;
    let report = if depth < hp.max_depth {
        Some(enumerate_all(matrix, samples, hp)?)
    } else {
        None
    };
    let top = report
        .as_ref()
        .and_then(|r| r.top_qualifying(hp.min_samples));

    match node {
        TreeNode::Leaf {
            label,
            train_counts,
        } => {
            if train_counts.real != real || train_counts.fake != fake {
                verdict.flag(
                    path,
                    format!(
                        "leaf counts ({}, {}) differ from replayed ({real}, {fake})",
                        train_counts.real, train_counts.fake
                    ),
                );
            }
            let majority = if fake >= real {
                Label::Fake
            } else {
                Label::Real
            };
            if *label != majority {
                verdict.flag(
                    path,
                    format!("leaf label {label} is not the majority {majority}"),
                );
            }
            if let Some(c) = top {
                verdict.flag(
                    path,
                    format!("leaf could be split by {} with gain {}", c.config, c.gain),
                );
            }
        }
        TreeNode::Internal {
            config,
            gain,
            left,
            right,
        } => {
            if depth >= hp.max_depth {
                verdict.flag(
                    path,
                    format!("internal node below the depth limit {}", hp.max_depth),
                );
            }
            if gain.is_nan() || *gain <= 0.0 {
                verdict.flag(path, format!("stored gain {gain} is not positive"));
            }
            let routed = route_naive(
                matrix,
                samples,
                config.detectors(),
                config.operator(),
                config.threshold(),
                hp.split_labeling,
            );
            if routed.gain.to_bits() != gain.to_bits() {
                verdict.flag(
                    path,
                    format!("stored gain {gain} but replayed gain is {}", routed.gain),
                );
            }
            if routed.left.len() <= hp.min_samples || routed.right.len() <= hp.min_samples {
                verdict.flag(
                    path,
                    format!(
                        "children hold {} and {} samples, need more than {}",
                        routed.left.len(),
                        routed.right.len(),
                        hp.min_samples
                    ),
                );
            }
            match top {
                None if depth < hp.max_depth => {
                    verdict.flag(path, "oracle finds no qualifying split")
                }
                Some(c) if c.config != *config => verdict.flag(
                    path,
                    format!(
                        "stored split {config} is not the optimum {} (gain {} vs {})",
                        c.config, routed.gain, c.gain
                    ),
                ),
                _ => {}
            }
            certify_node(
                left,
                matrix,
                &routed.left,
                hp,
                depth + 1,
                &format!("{path}.L"),
                verdict,
            )?;
            certify_node(
                right,
                matrix,
                &routed.right,
                hp,
                depth + 1,
                &format!("{path}.R"),
                verdict,
            )?;
        }
    }
    Ok(())
}
