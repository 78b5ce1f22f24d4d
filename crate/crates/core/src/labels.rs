//! Inlier/outlier/unlabeled partition of a match set.

use serde::{Deserialize, Serialize};

use crate::descriptor::{Match, MatchSet};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Inlier,
    Outlier,
    Unlabeled,
}

/// A match set with exactly one label per match, so the three subsets are
/// disjoint and cover the originating set by construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledMatches {
    matches: MatchSet,
    labels: Vec<Label>,
}

impl LabeledMatches {
    pub fn new(matches: MatchSet, labels: Vec<Label>) -> Result<Self> {
        if matches.len() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} labels for {} matches",
                labels.len(),
                matches.len()
            )));
        }
        Ok(Self { matches, labels })
    }

    pub fn unlabeled(matches: MatchSet) -> Self {
        let labels = vec![Label::Unlabeled; matches.len()];
        Self { matches, labels }
    }

    pub fn matches(&self) -> &[Match] {
        &self.matches
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Match, Label)> {
        self.matches.iter().zip(self.labels.iter().copied())
    }

    pub fn with_label(&self, label: Label) -> impl Iterator<Item = &Match> {
        self.iter().filter(move |(_, l)| *l == label).map(|(m, _)| m)
    }

    pub fn inliers(&self) -> Vec<Match> {
        self.with_label(Label::Inlier).copied().collect()
    }

    pub fn outliers(&self) -> Vec<Match> {
        self.with_label(Label::Outlier).copied().collect()
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn num_inliers(&self) -> usize {
        self.count(Label::Inlier)
    }

    pub fn num_outliers(&self) -> usize {
        self.count(Label::Outlier)
    }
}
