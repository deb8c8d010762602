//! WebAssembly bindings for the browser demo in `www/`.
//!
//! The page exchanges plain strings with this module: predictions travel as
//! `score,label,group` CSV and results come back as JSON or SVG. Each export
//! is a thin wrapper over a native function so the logic is testable
//! without a browser.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use fairtab::data::{encode_and_split, parse_csv, synthetic, SchemaConfig, SplitSpec};
use fairtab::fairness::{abroca, roc_curve, roc_svg, ConfigEcho, FairnessReport, Group, GroupedPredictions};
use fairtab::models::{Classifier, FeatureLayout, ModelKind, ModelSpec};
use fairtab::trainer::{self, TrainConfig};

#[derive(Deserialize)]
struct Row {
    score: f64,
    label: u8,
    group: u8,
}

pub fn parse_predictions(csv_text: &str, threshold: f64) -> Result<GroupedPredictions, String> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(csv_text.as_bytes());
    let (mut scores, mut labels, mut groups) = (Vec::new(), Vec::new(), Vec::new());
    for (i, row) in reader.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| format!("line {}: {e}", i + 2))?;
        scores.push(row.score);
        labels.push(row.label);
        groups.push(row.group);
    }
    GroupedPredictions::new(scores, labels, groups, threshold).map_err(|e| e.to_string())
}

/// Fairness report of a predictions CSV at `threshold`, as JSON.
pub fn audit_json(csv_text: &str, threshold: f64) -> Result<String, String> {
    let gp = parse_predictions(csv_text, threshold)?;
    let echo = ConfigEcho {
        model: "browser".into(),
        dataset: "pasted".into(),
        seed: 0,
        lambda: 0.0,
        sensitive_mapping: "group column".into(),
        sensitive_feature_included: false,
        threshold,
    };
    FairnessReport::compute(&gp, echo).map(|r| r.to_json()).map_err(|e| e.to_string())
}

/// ROC curves of both groups with the gap between them shaded.
pub fn roc_panel_svg(csv_text: &str) -> Result<String, String> {
    let gp = parse_predictions(csv_text, 0.5)?;
    let curve = |g: Group| {
        let (s, y) = gp.group(g);
        roc_curve(&s, &y).map_err(|e| format!("{g:?} group: {e}"))
    };
    let (base, comp) = (curve(Group::Privileged)?, curve(Group::Unprivileged)?);
    let value = abroca(&base, &comp);
    Ok(roc_svg("ROC by group", ("privileged (z=1)", &base), ("unprivileged (z=0)", &comp), value))
}

#[derive(Debug, Serialize)]
pub struct SweepPoint {
    pub lambda: f64,
    pub accuracy: f64,
    pub spd: f64,
    pub eod: Option<f64>,
    pub abroca: Option<f64>,
}

fn lr_run(rows: usize, seed: u64, lambda: f64, epochs: usize) -> Result<(FairnessReport, GroupedPredictions), String> {
    let schema = SchemaConfig::law_school();
    let raw = parse_csv(&synthetic::law_school_csv(rows, seed), &schema).map_err(|e| e.to_string())?;
    let split =
        encode_and_split(&raw, SplitSpec::new(SplitSpec::DEFAULT_TEST_FRACTION, seed)).map_err(|e| e.to_string())?;
    let cfg = TrainConfig { epochs, seed, batch_size: 128, learning_rate: 1e-2, ..TrainConfig::default() }
        .constrained(lambda);
    let spec = ModelSpec::new(ModelKind::Lr, seed);
    let train_view = split.train.feature_view(cfg.include_sensitive);
    let test_view = split.test.feature_view(cfg.include_sensitive);
    let mut model = Classifier::new(spec, FeatureLayout::from_meta(&train_view.meta)).map_err(|e| e.to_string())?;
    trainer::train(&mut model, &train_view, &cfg).map_err(|e| e.to_string())?;
    let meta = &split.train.meta;
    let echo = trainer::echo(&meta.name, &spec, &cfg, &meta.sensitive_mapping);
    trainer::evaluate(&model, &test_view, &cfg, echo).map_err(|e| e.to_string())
}

/// Trains logistic regression on synthetic law-school rows once per
/// penalty weight and reports accuracy against the group gaps, as JSON.
pub fn lambda_sweep_json(rows: usize, seed: u64, lambdas: &[f64], epochs: usize) -> Result<String, String> {
    let mut points = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let (r, _) = lr_run(rows, seed, lambda, epochs)?;
        points.push(SweepPoint { lambda, accuracy: r.accuracy, spd: r.spd, eod: r.eod, abroca: r.abroca });
    }
    serde_json::to_string(&points).map_err(|e| e.to_string())
}

/// Test-set predictions of one synthetic logistic-regression run.
pub fn sample_predictions_csv(rows: usize, seed: u64, lambda: f64, epochs: usize) -> Result<String, String> {
    let (_, gp) = lr_run(rows, seed, lambda, epochs)?;
    let mut s = String::from("score,label,group\n");
    for ((score, label), group) in gp.scores.iter().zip(&gp.labels).zip(&gp.groups) {
        s.push_str(&format!("{score:.6},{label},{group}\n"));
    }
    Ok(s)
}

fn js(r: Result<String, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn audit(csv_text: &str, threshold: f64) -> Result<String, JsError> {
    js(audit_json(csv_text, threshold))
}

#[wasm_bindgen]
pub fn roc_panel(csv_text: &str) -> Result<String, JsError> {
    js(roc_panel_svg(csv_text))
}

// seeds are u32 on this side so JavaScript can pass plain numbers
#[wasm_bindgen]
pub fn lambda_sweep(rows: usize, seed: u32, lambdas: Vec<f64>, epochs: usize) -> Result<String, JsError> {
    js(lambda_sweep_json(rows, seed.into(), &lambdas, epochs))
}

#[wasm_bindgen]
pub fn sample_predictions(rows: usize, seed: u32, lambda: f64, epochs: usize) -> Result<String, JsError> {
    js(sample_predictions_csv(rows, seed.into(), lambda, epochs))
}
