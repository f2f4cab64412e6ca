//! Rendering of tree paths as IF/THEN fuzzy-logic rules.
//!
//! A `max` node over `{f1, f2, f3}` taken on its right branch reads
//! "f1 suggests that x is fake OR f2 suggests that x is fake OR f3 suggests
//! that x is fake"; `min` joins the same clauses with AND. `mean` and
//! `median` nodes read as a pooled opinion exceeding the threshold. Left
//! branches negate the predicate.

use std::fmt;

use crate::error::{FuseError, Result};
use crate::ops::{apply_operator, EnsembleOperator};
use crate::score::Label;
use crate::tree::{Branch, FuzzyTree, NodeConfig, PathStep, TreeNode};

#[derive(Debug, Clone, PartialEq)]
pub struct FuzzyRule {
    pub conditions: Vec<String>,
    pub conclusion: Label,
    pub path: Vec<PathStep>,
}

impl FuzzyRule {
    /// Whether every predicate on the rule's path holds for `features`.
    pub fn matches(&self, features: &[f64]) -> Result<bool> {
        for step in &self.path {
            let values = step
                .config
                .detectors()
                .iter()
                .map(|&i| {
                    features.get(i).copied().ok_or_else(|| {
                        FuseError::Registry(format!("detector index {i} out of range"))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            let exceeds =
                apply_operator(step.config.operator(), &values)? > step.config.threshold();
            if exceeds != (step.branch == Branch::Right) {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

impl fmt::Display for FuzzyRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.conditions.is_empty() {
            return write!(f, "x is {}", self.conclusion);
        }
        let joined = if self.conditions.len() == 1 {
            self.conditions[0].clone()
        } else {
            self.conditions
                .iter()
                .map(|c| format!("({c})"))
                .collect::<Vec<_>>()
                .join(" AND ")
        };
        write!(f, "IF {joined} THEN x is {}", self.conclusion)
    }
}

fn format_threshold(t: f64) -> String {
    format!("{t:.4}")
}

/// Text of the predicate "local prediction > τ" for a node.
pub fn predicate_text(config: &NodeConfig, names: &[String]) -> String {
    let dets: Vec<&str> = config
        .detectors()
        .iter()
        .map(|&i| names.get(i).map_or("?", String::as_str))
        .collect();
    let tau = format_threshold(config.threshold());
    match config.operator() {
        EnsembleOperator::Max | EnsembleOperator::Min if dets.len() > 1 => {
            let joiner = if config.operator() == EnsembleOperator::Max {
                " OR "
            } else {
                " AND "
            };
            let clauses: Vec<String> = dets
                .iter()
                .map(|d| format!("{d} suggests that x is fake"))
                .collect();
            format!("{} (threshold {tau})", clauses.join(joiner))
        }
        _ if dets.len() == 1 => format!("{} suggests that x is fake (threshold {tau})", dets[0]),
        op => format!("the {op} opinion of {{{}}} exceeds {tau}", dets.join(", ")),
    }
}

fn condition_text(step: &PathStep, names: &[String]) -> String {
    let predicate = predicate_text(&step.config, names);
    match step.branch {
        Branch::Right => predicate,
        Branch::Left => format!("NOT ({predicate})"),
    }
}

/// One rule per leaf, left subtrees first.
pub fn extract_rules(tree: &FuzzyTree) -> Vec<FuzzyRule> {
    let mut rules = Vec::new();
    let mut path = Vec::new();
    collect(&tree.root, &tree.detectors, &mut path, &mut rules);
    rules
}

fn collect(node: &TreeNode, names: &[String], path: &mut Vec<PathStep>, out: &mut Vec<FuzzyRule>) {
    match node {
        TreeNode::Leaf { label, .. } => out.push(FuzzyRule {
            conditions: path.iter().map(|s| condition_text(s, names)).collect(),
            conclusion: *label,
            path: path.clone(),
        }),
        TreeNode::Internal {
            config,
            left,
            right,
            ..
        } => {
            for (branch, child) in [(Branch::Left, left), (Branch::Right, right)] {
                path.push(PathStep {
                    config: config.clone(),
                    branch,
                });
                collect(child, names, path, out);
                path.pop();
            }
        }
    }
}

/// Label implied by the unique rule matching `features`.
pub fn rule_label(rules: &[FuzzyRule], features: &[f64]) -> Result<Label> {
    let mut found = None;
    for rule in rules {
        if rule.matches(features)? {
            if found.is_some() {
                return Err(FuseError::Precondition("more than one rule matches".into()));
            }
            found = Some(rule.conclusion);
        }
    }
    found.ok_or_else(|| FuseError::Precondition("no rule matches".into()))
}
