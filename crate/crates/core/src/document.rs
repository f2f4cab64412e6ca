//! Versioned JSON documents for trained trees.
//!
//! ```json
//! {"version":1,"detectors":["a","b"],"hyperparams":{...},
//!  "root":{"kind":"internal","detectors":["a"],"operator":"max",
//!          "threshold":0.5,"gain":0.12,"left":{...},"right":{...}}}
//! ```
//!
//! Node detector subsets are stored by name. Loading validates the whole
//! document and reports the JSON path of the first offending field.

use serde_json::{json, Map, Value};

use crate::error::{FuseError, Result};
use crate::ops::EnsembleOperator;
use crate::score::Label;
use crate::tree::{ClassCounts, FuzzyTree, Hyperparams, NodeConfig, SplitLabeling, TreeNode};

pub const TREE_DOCUMENT_VERSION: u64 = 1;

pub fn tree_to_value(tree: &FuzzyTree) -> Value {
    json!({
        "version": TREE_DOCUMENT_VERSION,
        "detectors": tree.detectors,
        "hyperparams": {
            "max_split_models": tree.hyperparams.max_split_models,
            "min_samples": tree.hyperparams.min_samples,
            "max_depth": tree.hyperparams.max_depth,
            "thr_grid_size": tree.hyperparams.thr_grid_size,
            "split_labeling": tree.hyperparams.split_labeling.to_string(),
        },
        "root": node_to_value(&tree.root, &tree.detectors),
    })
}

fn node_to_value(node: &TreeNode, names: &[String]) -> Value {
    match node {
        TreeNode::Leaf {
            label,
            train_counts,
        } => json!({
            "kind": "leaf",
            "label": label.as_str(),
            "train_counts": {"real": train_counts.real, "fake": train_counts.fake},
        }),
        TreeNode::Internal {
            config,
            gain,
            left,
            right,
        } => json!({
            "kind": "internal",
            "detectors": config.detectors().iter().map(|&i| names[i].clone()).collect::<Vec<_>>(),
            "operator": config.operator().name(),
            "threshold": config.threshold(),
            "gain": gain,
            "left": node_to_value(left, names),
            "right": node_to_value(right, names),
        }),
    }
}

/// Pretty-printed tree document with a trailing newline.
pub fn serialize_tree(tree: &FuzzyTree) -> String {
    let mut text = serde_json::to_string_pretty(&tree_to_value(tree))
        .expect("tree documents contain only finite numbers");
    text.push('\n');
    text
}

pub fn deserialize_tree(text: &str) -> Result<FuzzyTree> {
    let value: Value = serde_json::from_str(text)?;
    tree_from_value(&value)
}

pub fn tree_from_value(value: &Value) -> Result<FuzzyTree> {
    let obj = object(value, "$")?;
    let version = field(obj, "$", "version")?
        .as_u64()
        .ok_or_else(|| FuseError::document("$.version", "expected an unsigned integer"))?;
    if version != TREE_DOCUMENT_VERSION {
        return Err(FuseError::document(
            "$.version",
            format!("unsupported version {version}, expected {TREE_DOCUMENT_VERSION}"),
        ));
    }
    let detectors = string_list(field(obj, "$", "detectors")?, "$.detectors")?;
    for (i, name) in detectors.iter().enumerate() {
        if name.is_empty() || detectors[..i].contains(name) {
            return Err(FuseError::document(
                format!("$.detectors[{i}]"),
                format!("detector names must be unique and non-empty, got `{name}`"),
            ));
        }
    }
    let hyperparams = hyperparams_from_value(field(obj, "$", "hyperparams")?)?;
    let root = node_from_value(field(obj, "$", "root")?, "$.root", &detectors)?;
    Ok(FuzzyTree {
        detectors,
        hyperparams,
        root,
    })
}

fn object<'a>(value: &'a Value, path: &str) -> Result<&'a Map<String, Value>> {
    value
        .as_object()
        .ok_or_else(|| FuseError::document(path, "expected an object"))
}

fn field<'a>(obj: &'a Map<String, Value>, path: &str, key: &str) -> Result<&'a Value> {
    obj.get(key)
        .ok_or_else(|| FuseError::document(format!("{path}.{key}"), "missing field"))
}

fn count(obj: &Map<String, Value>, path: &str, key: &str) -> Result<usize> {
    field(obj, path, key)?
        .as_u64()
        .map(|v| v as usize)
        .ok_or_else(|| FuseError::document(format!("{path}.{key}"), "expected an unsigned integer"))
}

fn number(obj: &Map<String, Value>, path: &str, key: &str) -> Result<f64> {
    field(obj, path, key)?
        .as_f64()
        .ok_or_else(|| FuseError::document(format!("{path}.{key}"), "expected a number"))
}

fn string<'a>(obj: &'a Map<String, Value>, path: &str, key: &str) -> Result<&'a str> {
    field(obj, path, key)?
        .as_str()
        .ok_or_else(|| FuseError::document(format!("{path}.{key}"), "expected a string"))
}

fn string_list(value: &Value, path: &str) -> Result<Vec<String>> {
    let items = value
        .as_array()
        .ok_or_else(|| FuseError::document(path, "expected an array"))?;
    items
        .iter()
        .enumerate()
        .map(|(i, v)| {
            v.as_str()
                .map(str::to_string)
                .ok_or_else(|| FuseError::document(format!("{path}[{i}]"), "expected a string"))
        })
        .collect()
}

fn hyperparams_from_value(value: &Value) -> Result<Hyperparams> {
    let path = "$.hyperparams";
    let obj = object(value, path)?;
    let split_labeling = match obj.get("split_labeling") {
        None => SplitLabeling::default(),
        Some(v) => v
            .as_str()
            .ok_or_else(|| {
                FuseError::document(format!("{path}.split_labeling"), "expected a string")
            })?
            .parse()
            .map_err(|e: String| FuseError::document(format!("{path}.split_labeling"), e))?,
    };
    let hp = Hyperparams {
        max_split_models: count(obj, path, "max_split_models")?,
        min_samples: count(obj, path, "min_samples")?,
        max_depth: count(obj, path, "max_depth")?,
        thr_grid_size: count(obj, path, "thr_grid_size")?,
        split_labeling,
    };
    hp.validate()
        .map_err(|e| FuseError::document(path, e.to_string()))?;
    Ok(hp)
}

fn node_from_value(value: &Value, path: &str, names: &[String]) -> Result<TreeNode> {
    let obj = object(value, path)?;
    match string(obj, path, "kind")? {
        "leaf" => {
            let label = string(obj, path, "label")?;
            let label = Label::from_token(label).ok_or_else(|| {
                FuseError::document(format!("{path}.label"), format!("unknown label `{label}`"))
            })?;
            let counts_path = format!("{path}.train_counts");
            let counts = object(field(obj, path, "train_counts")?, &counts_path)?;
            let train_counts = ClassCounts {
                real: count(counts, &counts_path, "real")?,
                fake: count(counts, &counts_path, "fake")?,
            };
            Ok(TreeNode::Leaf {
                label,
                train_counts,
            })
        }
        "internal" => {
            let det_path = format!("{path}.detectors");
            let mut indices = Vec::new();
            for (i, name) in string_list(field(obj, path, "detectors")?, &det_path)?
                .iter()
                .enumerate()
            {
                let idx = names.iter().position(|n| n == name).ok_or_else(|| {
                    FuseError::document(
                        format!("{det_path}[{i}]"),
                        format!("unknown detector `{name}`"),
                    )
                })?;
                indices.push(idx);
            }
            let operator = string(obj, path, "operator")?;
            let operator: EnsembleOperator = operator
                .parse()
                .map_err(|e: String| FuseError::document(format!("{path}.operator"), e))?;
            let threshold = number(obj, path, "threshold")?;
            let config = NodeConfig::new(indices, operator, threshold)
                .map_err(|e| FuseError::document(path, e.to_string()))?;
            let gain = number(obj, path, "gain")?;
            let left = node_from_value(field(obj, path, "left")?, &format!("{path}.left"), names)?;
            let right =
                node_from_value(field(obj, path, "right")?, &format!("{path}.right"), names)?;
            Ok(TreeNode::Internal {
                config,
                gain,
                left: Box::new(left),
                right: Box::new(right),
            })
        }
        other => Err(FuseError::document(
            format!("{path}.kind"),
            format!("unknown node kind `{other}`"),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const STUMP: &str = r#"{
      "version": 1,
      "detectors": ["npr", "qwen"],
      "hyperparams": {"max_split_models": 3, "min_samples": 0, "max_depth": 4, "thr_grid_size": 10},
      "root": {
        "kind": "internal", "detectors": ["npr", "qwen"], "operator": "max",
        "threshold": 0.5, "gain": 0.25,
        "left": {"kind": "leaf", "label": "real", "train_counts": {"real": 10, "fake": 2}},
        "right": {"kind": "leaf", "label": "fake", "train_counts": {"real": 1, "fake": 9}}
      }
    }"#;

    #[test]
    fn hand_written_document_loads_and_predicts() {
        let tree = deserialize_tree(STUMP).unwrap();
        assert_eq!(tree.depth(), 1);
        assert_eq!(tree.hyperparams, Hyperparams::default());
        assert_eq!(tree.predict(&[0.2, 0.7]).unwrap().label, Label::Fake);
        assert_eq!(tree.predict(&[0.2, 0.5]).unwrap().label, Label::Real);
    }

    #[test]
    fn round_trip_is_identity() {
        let tree = deserialize_tree(STUMP).unwrap();
        let text = serialize_tree(&tree);
        let back = deserialize_tree(&text).unwrap();
        assert_eq!(back, tree);
        assert_eq!(serialize_tree(&back), text);
    }

    #[test]
    fn unknown_operator_names_the_node() {
        let doc = STUMP.replace("\"max\"", "\"softmax\"");
        match deserialize_tree(&doc).unwrap_err() {
            FuseError::Document { path, message } => {
                assert_eq!(path, "$.root.operator");
                assert!(message.contains("softmax"));
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let doc = STUMP.replace("\"version\": 1", "\"version\": 2");
        match deserialize_tree(&doc).unwrap_err() {
            FuseError::Document { path, .. } => assert_eq!(path, "$.version"),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn malformed_fields_report_paths() {
        let cases = [
            (
                STUMP.replace(
                    "\"internal\", \"detectors\": [\"npr\", \"qwen\"]",
                    "\"internal\", \"detectors\": [\"npr\", \"llava\"]",
                ),
                "$.root.detectors[1]",
            ),
            (
                STUMP.replace("\"fake\", \"train", "\"maybe\", \"train"),
                "$.root.right.label",
            ),
            (
                STUMP.replace("\"threshold\": 0.5", "\"threshold\": 1.5"),
                "$.root",
            ),
            (
                STUMP.replace(
                    "\"kind\": \"leaf\", \"label\": \"real\"",
                    "\"kind\": \"twig\", \"label\": \"real\"",
                ),
                "$.root.left.kind",
            ),
            (
                STUMP.replace("\"max_depth\": 4", "\"max_depth\": 0"),
                "$.hyperparams",
            ),
        ];
        for (doc, expected) in cases {
            match deserialize_tree(&doc).unwrap_err() {
                FuseError::Document { path, .. } => assert_eq!(path, expected),
                other => panic!("unexpected error {other}"),
            }
        }
        assert!(matches!(
            deserialize_tree("{not json"),
            Err(FuseError::Json(_))
        ));
    }
}
