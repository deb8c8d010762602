use serde::{Deserialize, Serialize};

use super::{disparate_mistreatment, eod, group_abroca, spd, FairnessError, Group, GroupedPredictions};

/// Run settings copied into every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub model: String,
    pub dataset: String,
    pub seed: u64,
    pub lambda: f64,
    pub sensitive_mapping: String,
    pub sensitive_feature_included: bool,
    pub threshold: f64,
}

/// Test-set quality and fairness of one run. Serializes to flat JSON.
/// Metrics that are undefined for the data (for instance a group without
/// positive labels) are `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub accuracy: f64,
    pub f1: f64,
    pub spd: f64,
    pub eod: Option<f64>,
    pub error_rate_diff: Option<f64>,
    pub fpr_diff: Option<f64>,
    pub fnr_diff: Option<f64>,
    pub abroca: Option<f64>,
    pub n_unprivileged: usize,
    pub n_privileged: usize,
    pub positive_rate_unprivileged: f64,
    pub positive_rate_privileged: f64,
    /// Share of rows predicted 1, and whether every row got the same
    /// prediction. A constant predictor has SPD 0 for trivial reasons.
    pub positive_prediction_rate: f64,
    pub degenerate_predictor: bool,
    #[serde(flatten)]
    pub config: ConfigEcho,
}

impl FairnessReport {
    pub fn compute(gp: &GroupedPredictions, config: ConfigEcho) -> Result<Self, FairnessError> {
        let all = gp.confusion(None);
        let u = gp.confusion(Some(Group::Unprivileged));
        let p = gp.confusion(Some(Group::Privileged));
        let spd = spd(gp)?;
        let eod = match eod(gp) {
            Ok(v) => Some(v),
            Err(FairnessError::MissingClass(..)) => None,
            Err(e) => return Err(e),
        };
        let m = disparate_mistreatment(gp)?;
        let abroca = match group_abroca(gp) {
            Ok(v) => Some(v),
            Err(FairnessError::SingleClass) => None,
            Err(e) => return Err(e),
        };
        let predicted = all.tp + all.fp;
        let rate = |c: super::Confusion| (c.tp + c.fp) as f64 / c.total() as f64;
        Ok(FairnessReport {
            accuracy: all.accuracy(),
            f1: all.f1(),
            spd,
            eod,
            error_rate_diff: m.error_rate_diff,
            fpr_diff: m.fpr_diff,
            fnr_diff: m.fnr_diff,
            abroca,
            n_unprivileged: u.total(),
            n_privileged: p.total(),
            positive_rate_unprivileged: rate(u),
            positive_rate_privileged: rate(p),
            positive_prediction_rate: predicted as f64 / all.total() as f64,
            degenerate_predictor: predicted == 0 || predicted == all.total(),
            config,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
