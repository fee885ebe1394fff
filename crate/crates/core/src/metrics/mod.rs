//! Evaluation metrics: POPE binary scores, MME accuracy / accuracy+, and
//! CHAIR / RECALL caption scores.
//!
//! Every ratio is reported together with its numerator and denominator so
//! reports can be audited and re-aggregated. Values stay in `[0, 1]`; scaling
//! to percent happens only at presentation time.

mod chair;
mod mme;
mod pope;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use chair::{
    chair_scores, extract_objects, CaptionRecord, ChairAnnotation, ObjectMatcher, SynonymMap,
};
pub use mme::{mme_scores, MmeAnswer, MmeCase};
pub use pope::{pope_scores, PopeRecord};

/// Binary answer; "yes" is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Answer {
    Yes,
    No,
}

impl Answer {
    pub fn flip(self) -> Self {
        match self {
            Answer::Yes => Answer::No,
            Answer::No => Answer::Yes,
        }
    }
}

/// Reads a leading "yes" / "no" word, case-insensitively.
pub fn parse_yes_no(text: &str) -> Option<Answer> {
    let first = text
        .split(|c: char| !c.is_alphanumeric())
        .find(|w| !w.is_empty())?;
    match first.to_lowercase().as_str() {
        "yes" => Some(Answer::Yes),
        "no" => Some(Answer::No),
        _ => None,
    }
}

/// A ratio with the counts that produced it. An empty denominator yields 0
/// and sets `degenerate`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub value: f64,
    pub numerator: f64,
    pub denominator: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
}

impl Ratio {
    pub fn new(numerator: f64, denominator: f64) -> Self {
        if denominator == 0.0 {
            Self {
                value: 0.0,
                numerator,
                denominator,
                degenerate: true,
            }
        } else {
            Self {
                value: numerator / denominator,
                numerator,
                denominator,
                degenerate: false,
            }
        }
    }

    pub fn from_counts(numerator: u64, denominator: u64) -> Self {
        Self::new(numerator as f64, denominator as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub metrics: BTreeMap<String, Ratio>,
    pub counts: BTreeMap<String, u64>,
    /// Derived scores that are not plain ratios (e.g. MME's percent score).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub scores: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl MetricReport {
    pub fn value(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).map(|r| r.value)
    }

    pub fn count(&self, name: &str) -> Option<u64> {
        self.counts.get(name).copied()
    }

    pub(crate) fn ratio(&mut self, name: &str, ratio: Ratio) {
        self.metrics.insert(name.to_string(), ratio);
    }

    pub(crate) fn set_count(&mut self, name: &str, value: u64) {
        self.counts.insert(name.to_string(), value);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_leading_answer() {
        assert_eq!(parse_yes_no("Yes, there is a dog."), Some(Answer::Yes));
        assert_eq!(parse_yes_no("  no"), Some(Answer::No));
        assert_eq!(parse_yes_no("NO."), Some(Answer::No));
        assert_eq!(parse_yes_no("There is no dog"), None);
        assert_eq!(parse_yes_no("yesterday"), None);
        assert_eq!(parse_yes_no(""), None);
    }

    #[test]
    fn ratio_degenerate_on_zero_denominator() {
        let r = Ratio::from_counts(0, 0);
        assert!(r.degenerate);
        assert_eq!(r.value, 0.0);
        let r = Ratio::from_counts(1, 4);
        assert_eq!(r.value, 0.25);
        assert!(!r.degenerate);
    }
}
