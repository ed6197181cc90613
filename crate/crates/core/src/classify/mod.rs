//! Subject-level cohort classification: Gaussian naive Bayes and a linear
//! SVM evaluated with subject-disjoint stratified cross-validation and AUC.

mod auc;
mod cv;
mod gnb;
mod svm;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub use auc::auc;
pub use cv::{
    cross_validate, permutation_null, write_summary, CvOptions, CvReport, FoldAssignment,
    FoldResult, Standardizer, SummaryRow,
};
pub use gnb::{gnb_fit, gnb_score, ClassGaussians, GnbModel, VAR_FLOOR};
pub use svm::{svm_fit, svm_objective, svm_score, SvmModel, SvmOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "CN")]
    Cn,
    #[serde(rename = "MCI")]
    Mci,
    #[serde(rename = "AD")]
    Ad,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Cn, Label::Mci, Label::Ad];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Cn => "CN",
            Label::Mci => "MCI",
            Label::Ad => "AD",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "CN" => Ok(Label::Cn),
            "MCI" => Ok(Label::Mci),
            "AD" => Ok(Label::Ad),
            other => Err(invalid(format!(
                "unknown label {other:?}; expected CN, MCI or AD"
            ))),
        }
    }
}

/// Binary tasks; cognitively normal is always the negative class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "CNvsMCI")]
    CnVsMci,
    #[serde(rename = "CNvsAD")]
    CnVsAd,
}

impl Task {
    pub const ALL: [Task; 2] = [Task::CnVsMci, Task::CnVsAd];

    pub fn positive(self) -> Label {
        match self {
            Task::CnVsMci => Label::Mci,
            Task::CnVsAd => Label::Ad,
        }
    }

    pub fn negative(self) -> Label {
        Label::Cn
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::CnVsMci => "CNvsMCI",
            Task::CnVsAd => "CNvsAD",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Model {
    #[serde(rename = "GNB")]
    Gnb,
    #[serde(rename = "SVM")]
    Svm,
}

impl Model {
    pub const ALL: [Model; 2] = [Model::Gnb, Model::Svm];

    pub fn as_str(self) -> &'static str {
        match self {
            Model::Gnb => "GNB",
            Model::Svm => "SVM",
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortRow {
    pub features: Vec<f64>,
    pub subject_id: String,
    pub label: Label,
}

/// Epoch-level feature rows with a single label per subject.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortDataset {
    rows: Vec<CohortRow>,
    feature_dim: usize,
}

impl CohortDataset {
    pub fn new(rows: Vec<CohortRow>) -> Result<Self> {
        let feature_dim = rows.first().map_or(0, |r| r.features.len());
        if feature_dim == 0 {
            return Err(invalid("dataset needs at least one row with features"));
        }
        let mut labels: BTreeMap<&str, Label> = BTreeMap::new();
        for r in &rows {
            if r.features.len() != feature_dim {
                return Err(invalid("all rows must have the same feature dimension"));
            }
            if r.features.iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!(
                    "subject {} has non-finite features",
                    r.subject_id
                )));
            }
            if let Some(prev) = labels.insert(&r.subject_id, r.label) {
                if prev != r.label {
                    return Err(invalid(format!(
                        "subject {} is labeled both {prev} and {}",
                        r.subject_id, r.label
                    )));
                }
            }
        }
        Ok(Self { rows, feature_dim })
    }

    pub fn rows(&self) -> &[CohortRow] {
        &self.rows
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Subjects in order of first appearance, with their labels.
    pub fn subjects(&self) -> Vec<(String, Label)> {
        let mut seen = std::collections::HashSet::new();
        self.rows
            .iter()
            .filter(|r| seen.insert(r.subject_id.as_str()))
            .map(|r| (r.subject_id.clone(), r.label))
            .collect()
    }

    /// Same rows with subject labels replaced through `relabel`.
    pub fn relabeled(&self, relabel: &BTreeMap<String, Label>) -> Result<Self> {
        let rows = self
            .rows
            .iter()
            .map(|r| CohortRow {
                label: relabel.get(&r.subject_id).copied().unwrap_or(r.label),
                ..r.clone()
            })
            .collect();
        Self::new(rows)
    }
}

/// Validates a binary training set and returns its feature dimension.
pub(crate) fn check_training(x: &[Vec<f64>], y: &[bool]) -> Result<usize> {
    if x.len() != y.len() {
        return Err(invalid("feature rows and labels differ in length"));
    }
    if !(y.iter().any(|l| *l) && y.iter().any(|l| !*l)) {
        return Err(invalid("training set must contain both classes"));
    }
    let dim = x[0].len();
    if x.iter().any(|r| r.len() != dim) {
        return Err(invalid("feature rows differ in length"));
    }
    Ok(dim)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_round_trip() {
        for l in Label::ALL {
            assert_eq!(l.as_str().parse::<Label>().unwrap(), l);
            assert_eq!(serde_json::to_string(&l).unwrap(), format!("\"{l}\""));
        }
        assert!("XX".parse::<Label>().is_err());
    }

    #[test]
    fn conflicting_subject_labels_rejected() {
        let row = |s: &str, l| CohortRow {
            features: vec![1.0],
            subject_id: s.into(),
            label: l,
        };
        assert!(CohortDataset::new(vec![row("a", Label::Cn), row("a", Label::Ad)]).is_err());
        let ds = CohortDataset::new(vec![
            row("a", Label::Cn),
            row("b", Label::Ad),
            row("a", Label::Cn),
        ])
        .unwrap();
        assert_eq!(ds.subjects().len(), 2);
    }
}
