//! Fuzzy decision tree fusion of AI-generated image detectors.
//!
//! Detector outputs are treated as fuzzy memberships of "this image is
//! fake". A tree of fuzzy predicates, each fusing a small subset of
//! detectors with `mean`, `min`, `max` or `median` and comparing against a
//! threshold, is grown greedily on a labeled score matrix. Every
//! root-to-leaf path reads as an IF/THEN rule.
//!
//! Modules:
//! - [`score`]: score matrices, file ingestion, balanced sampling
//! - [`ops`], [`tree`], [`rules`], [`document`]: the fusion model
//! - [`oracle`]: brute-force split enumeration and tree certification
//! - [`baseline`]: majority voting and logistic regression
//! - [`simulate`]: synthetic detector benchmarks and perturbations
//! - [`eval`]: accuracy reports and prompt-grid selection

pub mod baseline;
pub mod document;
pub mod error;
pub mod eval;
pub mod ops;
pub mod oracle;
pub mod rules;
pub mod score;
pub mod simulate;
pub mod tree;

pub use error::{FuseError, Result};
pub use ops::{apply_operator, EnsembleOperator};
pub use score::{DetectorKind, DetectorMeta, Label, SampleRecord, ScoreMatrix};
pub use tree::{FuzzyTree, Hyperparams, NodeConfig, SplitLabeling, TreeNode};
