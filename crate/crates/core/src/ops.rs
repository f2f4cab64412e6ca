use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{FuseError, Result};

/// How a node fuses the scores of its detector subset.
///
/// `Max` and `Min` are the Gödel t-conorm and t-norm, i.e. fuzzy OR and AND
/// over the detectors' fake-memberships. Variant order is the tie-break
/// order used by the split search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnsembleOperator {
    Mean,
    Min,
    Max,
    Median,
}

impl EnsembleOperator {
    pub const ALL: [EnsembleOperator; 4] = [
        EnsembleOperator::Mean,
        EnsembleOperator::Min,
        EnsembleOperator::Max,
        EnsembleOperator::Median,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EnsembleOperator::Mean => "mean",
            EnsembleOperator::Min => "min",
            EnsembleOperator::Max => "max",
            EnsembleOperator::Median => "median",
        }
    }

    /// Fuses a non-empty slice. `scratch` is reused for the median sort.
    pub(crate) fn fuse(self, values: &[f64], scratch: &mut Vec<f64>) -> f64 {
        debug_assert!(!values.is_empty());
        match self {
            EnsembleOperator::Mean => values.iter().sum::<f64>() / values.len() as f64,
            EnsembleOperator::Min => values.iter().copied().fold(f64::INFINITY, f64::min),
            EnsembleOperator::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            EnsembleOperator::Median => {
                scratch.clear();
                scratch.extend_from_slice(values);
                scratch.sort_unstable_by(f64::total_cmp);
                let n = scratch.len();
                if n % 2 == 1 {
                    scratch[n / 2]
                } else {
                    (scratch[n / 2 - 1] + scratch[n / 2]) / 2.0
                }
            }
        }
    }
}

impl fmt::Display for EnsembleOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnsembleOperator {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        EnsembleOperator::ALL
            .into_iter()
            .find(|op| op.name() == s)
            .ok_or_else(|| format!("unknown operator `{s}`"))
    }
}

/// Mean, minimum, maximum or median of `values`. An even-length median is
/// the mean of the two middle order statistics.
pub fn apply_operator(op: EnsembleOperator, values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(FuseError::Precondition(format!(
            "{op} of an empty score list"
        )));
    }
    Ok(op.fuse(values, &mut Vec::with_capacity(values.len())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn operator_examples() {
        assert_eq!(
            apply_operator(EnsembleOperator::Max, &[0.2, 0.9, 0.4]).unwrap(),
            0.9
        );
        assert_eq!(
            apply_operator(EnsembleOperator::Mean, &[0.0, 1.0]).unwrap(),
            0.5
        );
        assert_eq!(
            apply_operator(EnsembleOperator::Median, &[0.1, 0.7, 0.3, 0.9]).unwrap(),
            0.5
        );
        assert_eq!(apply_operator(EnsembleOperator::Min, &[0.3]).unwrap(), 0.3);
    }

    #[test]
    fn empty_input_is_rejected() {
        for op in EnsembleOperator::ALL {
            assert!(matches!(
                apply_operator(op, &[]),
                Err(FuseError::Precondition(_))
            ));
        }
    }

    #[test]
    fn names_round_trip() {
        for op in EnsembleOperator::ALL {
            assert_eq!(op.name().parse::<EnsembleOperator>().unwrap(), op);
        }
        assert!("avg".parse::<EnsembleOperator>().is_err());
    }

    proptest! {
        #[test]
        fn max_and_min_are_goedel_or_and(values in prop::collection::vec(0.0f64..=1.0, 1..8)) {
            // Gödel t-conorm / t-norm folded pairwise.
            let or = values.iter().skip(1).fold(values[0], |a, &b| if a >= b { a } else { b });
            let and = values.iter().skip(1).fold(values[0], |a, &b| if a <= b { a } else { b });
            prop_assert_eq!(apply_operator(EnsembleOperator::Max, &values).unwrap(), or);
            prop_assert_eq!(apply_operator(EnsembleOperator::Min, &values).unwrap(), and);
        }

        #[test]
        fn fused_value_stays_within_bounds(values in prop::collection::vec(0.0f64..=1.0, 1..8)) {
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for op in EnsembleOperator::ALL {
                let v = apply_operator(op, &values).unwrap();
                prop_assert!(lo <= v && v <= hi, "{} gave {}", op, v);
            }
        }
    }
}
