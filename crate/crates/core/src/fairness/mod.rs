//! Group-fairness metrics, ROC geometry and the differentiable parity
//! penalty. Every difference is signed `unprivileged - privileged`, with
//! `z = 0` the unprivileged group.

mod penalty;
mod report;
mod roc;

pub use penalty::parity_penalty;
pub use report::{ConfigEcho, FairnessReport};
pub use roc::{abroca, roc_curve, roc_svg, RocCurve};

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    Unprivileged,
    Privileged,
}

impl Group {
    fn of(z: u8) -> Group {
        if z == 0 {
            Group::Unprivileged
        } else {
            Group::Privileged
        }
    }
}

impl std::fmt::Display for Group {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Group::Unprivileged => "unprivileged (z=0)",
            Group::Privileged => "privileged (z=1)",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FairnessError {
    #[error("scores, labels and groups differ in length ({0}, {1}, {2})")]
    LengthMismatch(usize, usize, usize),
    #[error("score {0} is outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("labels and groups must be 0 or 1")]
    NotBinary,
    #[error("the {0} group is empty")]
    EmptyGroup(Group),
    #[error("the {0} group has no rows with label {1}, so the rate is undefined")]
    MissingClass(Group, u8),
    #[error("no disparate-mistreatment component is defined")]
    AllUndefined,
    #[error("ROC needs both classes among the labels")]
    SingleClass,
    #[error("invalid ROC curve: {0}")]
    InvalidCurve(String),
}

/// Scores, true labels and sensitive groups of one evaluation, with the
/// decision threshold (`score >= threshold` predicts 1).
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedPredictions {
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
    pub groups: Vec<u8>,
    pub threshold: f64,
}

/// Confusion counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn positives(&self) -> usize {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> usize {
        self.fp + self.tn
    }

    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / self.total() as f64
    }

    /// F1 on class 1; zero when there are no true positives.
    pub fn f1(&self) -> f64 {
        if self.tp == 0 {
            return 0.0;
        }
        let tp = self.tp as f64;
        2.0 * tp / (2.0 * tp + self.fp as f64 + self.fn_ as f64)
    }

    fn positive_prediction_rate(&self) -> f64 {
        (self.tp + self.fp) as f64 / self.total() as f64
    }

    fn tpr(&self) -> Option<f64> {
        (self.positives() > 0).then(|| self.tp as f64 / self.positives() as f64)
    }

    fn fpr(&self) -> Option<f64> {
        (self.negatives() > 0).then(|| self.fp as f64 / self.negatives() as f64)
    }

    fn fnr(&self) -> Option<f64> {
        (self.positives() > 0).then(|| self.fn_ as f64 / self.positives() as f64)
    }

    fn error_rate(&self) -> Option<f64> {
        (self.total() > 0).then(|| (self.fp + self.fn_) as f64 / self.total() as f64)
    }
}

impl GroupedPredictions {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>, groups: Vec<u8>, threshold: f64) -> Result<Self, FairnessError> {
        if scores.len() != labels.len() || labels.len() != groups.len() {
            return Err(FairnessError::LengthMismatch(scores.len(), labels.len(), groups.len()));
        }
        if let Some(&s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(FairnessError::ScoreOutOfRange(s));
        }
        if labels.iter().chain(&groups).any(|&v| v > 1) {
            return Err(FairnessError::NotBinary);
        }
        Ok(GroupedPredictions { scores, labels, groups, threshold })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn predictions(&self) -> Vec<u8> {
        crate::models::predict_labels(&self.scores, self.threshold)
    }

    /// Confusion counts over all rows (`None`) or one group.
    pub fn confusion(&self, group: Option<Group>) -> Confusion {
        let mut c = Confusion::default();
        for ((&s, &y), &z) in self.scores.iter().zip(&self.labels).zip(&self.groups) {
            if group.is_some_and(|g| g != Group::of(z)) {
                continue;
            }
            match (s >= self.threshold, y == 1) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    fn group_confusions(&self) -> Result<(Confusion, Confusion), FairnessError> {
        let u = self.confusion(Some(Group::Unprivileged));
        let p = self.confusion(Some(Group::Privileged));
        for (c, g) in [(u, Group::Unprivileged), (p, Group::Privileged)] {
            if c.total() == 0 {
                return Err(FairnessError::EmptyGroup(g));
            }
        }
        Ok((u, p))
    }

    /// Rows and scores of one group.
    pub fn group(&self, group: Group) -> (Vec<f64>, Vec<u8>) {
        self.scores
            .iter()
            .zip(&self.labels)
            .zip(&self.groups)
            .filter(|(_, &z)| Group::of(z) == group)
            .map(|((&s, &y), _)| (s, y))
            .unzip()
    }
}

/// Statistical parity difference: `P(ŷ=1 | z=0) - P(ŷ=1 | z=1)`.
pub fn spd(gp: &GroupedPredictions) -> Result<f64, FairnessError> {
    let (u, p) = gp.group_confusions()?;
    Ok(u.positive_prediction_rate() - p.positive_prediction_rate())
}

/// Equal opportunity difference: `TPR(z=0) - TPR(z=1)`.
pub fn eod(gp: &GroupedPredictions) -> Result<f64, FairnessError> {
    let (u, p) = gp.group_confusions()?;
    let tu = u.tpr().ok_or(FairnessError::MissingClass(Group::Unprivileged, 1))?;
    let tp = p.tpr().ok_or(FairnessError::MissingClass(Group::Privileged, 1))?;
    Ok(tu - tp)
}

/// Group differences of overall error, false-positive and false-negative
/// rates. A component is `None` when either group lacks its denominator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mistreatment {
    pub error_rate_diff: Option<f64>,
    pub fpr_diff: Option<f64>,
    pub fnr_diff: Option<f64>,
}

pub fn disparate_mistreatment(gp: &GroupedPredictions) -> Result<Mistreatment, FairnessError> {
    let (u, p) = gp.group_confusions()?;
    let diff = |f: fn(&Confusion) -> Option<f64>| Some(f(&u)? - f(&p)?);
    let m = Mistreatment {
        error_rate_diff: diff(Confusion::error_rate),
        fpr_diff: diff(Confusion::fpr),
        fnr_diff: diff(Confusion::fnr),
    };
    if m.error_rate_diff.is_none() && m.fpr_diff.is_none() && m.fnr_diff.is_none() {
        return Err(FairnessError::AllUndefined);
    }
    Ok(m)
}

/// ABROCA between the privileged (baseline) and unprivileged groups.
pub fn group_abroca(gp: &GroupedPredictions) -> Result<f64, FairnessError> {
    let (s_p, y_p) = gp.group(Group::Privileged);
    let (s_u, y_u) = gp.group(Group::Unprivileged);
    if s_p.is_empty() {
        return Err(FairnessError::EmptyGroup(Group::Privileged));
    }
    if s_u.is_empty() {
        return Err(FairnessError::EmptyGroup(Group::Unprivileged));
    }
    Ok(abroca(&roc_curve(&s_p, &y_p)?, &roc_curve(&s_u, &y_u)?))
}
