//! Runs every model over several seeds and tabulates the results beside
//! published reference numbers.

use std::fmt::Write as _;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{run, RunOutput, TrainConfig, TrainError};
use crate::data::{encode_and_split, RawDataset, SchemaConfig, Split, SplitSpec};
use crate::fairness::{roc_curve, roc_svg, Group};
use crate::models::{ModelKind, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetId {
    Law,
    StudentMath,
}

impl DatasetId {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetId::Law => "law",
            DatasetId::StudentMath => "student-math",
        }
    }

    pub fn schema(self) -> SchemaConfig {
        match self {
            DatasetId::Law => SchemaConfig::law_school(),
            DatasetId::StudentMath => SchemaConfig::student_math(),
        }
    }

    pub fn default_batch_size(self) -> usize {
        match self {
            DatasetId::Law => 256,
            DatasetId::StudentMath => 64,
        }
    }

    /// Models with published results for this dataset.
    pub fn published_models(self) -> Vec<ModelKind> {
        match self {
            DatasetId::Law => {
                vec![ModelKind::Lr, ModelKind::Ft, ModelKind::Tab, ModelKind::Perceiver, ModelKind::Saint]
            }
            DatasetId::StudentMath => vec![ModelKind::Lr, ModelKind::Saint],
        }
    }
}

impl FromStr for DatasetId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "law" | "law-school" | "law_school" => Ok(DatasetId::Law),
            "student-math" | "student_math" | "student" => Ok(DatasetId::StudentMath),
            other => Err(format!("unknown dataset `{other}` (expected law or student-math)")),
        }
    }
}

/// One row of a published results table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub model: ModelKind,
    pub f1: f64,
    pub accuracy: f64,
    pub spd: f64,
    pub eod: f64,
}

const fn row(model: ModelKind, f1: f64, accuracy: f64, spd: f64, eod: f64) -> ReferenceRow {
    ReferenceRow { model, f1, accuracy, spd, eod }
}

const LAW_UNCONSTRAINED: [ReferenceRow; 5] = [
    row(ModelKind::Lr, 0.94984, 0.90721, 0.189538, 0.082670),
    row(ModelKind::Ft, 0.94504, 0.89839, -0.215906, -0.124452),
    row(ModelKind::Tab, 0.94664, 0.90016, -0.112048, -0.049809),
    row(ModelKind::Perceiver, 0.94590, 0.89919, -0.151387, -0.081128),
    row(ModelKind::Saint, 0.94299, 0.89214, 0.0, 0.0),
];

const LAW_CONSTRAINED: [ReferenceRow; 5] = [
    row(ModelKind::Lr, 0.94643, 0.89983, -0.100764, -0.043942),
    row(ModelKind::Ft, 0.94305, 0.89230, 0.001328, 0.000617),
    row(ModelKind::Tab, 0.94371, 0.89342, 0.0, 0.0),
    row(ModelKind::Perceiver, 0.94237, 0.89102, 0.0, 0.0),
    row(ModelKind::Saint, 0.94012, 0.88701, 0.0, 0.0),
];

const STUDENT_UNCONSTRAINED: [ReferenceRow; 2] =
    [row(ModelKind::Lr, 0.91111, 0.93277, 0.153193, -0.005847), row(ModelKind::Saint, 0.76041, 0.61344, 0.0, 0.0)];

/// Published ABROCA of the logistic-regression model on the law data,
/// unconstrained and constrained.
pub const LAW_LR_ABROCA: (f64, f64) = (0.171, 0.0889);

pub fn reference(dataset: DatasetId, constrained: bool, model: ModelKind) -> Option<ReferenceRow> {
    let table: &[ReferenceRow] = match (dataset, constrained) {
        (DatasetId::Law, false) => &LAW_UNCONSTRAINED,
        (DatasetId::Law, true) => &LAW_CONSTRAINED,
        (DatasetId::StudentMath, false) => &STUDENT_UNCONSTRAINED,
        (DatasetId::StudentMath, true) => &[],
    };
    table.iter().find(|r| r.model == model).copied()
}

#[derive(Debug, Clone)]
pub struct ReproduceOptions {
    pub dataset: DatasetId,
    pub constrained: bool,
    pub seeds: Vec<u64>,
    pub models: Vec<ModelKind>,
    pub test_fraction: f64,
    /// Architecture hyperparameters; `kind` and `seed` are set per run.
    pub spec: ModelSpec,
    /// Training settings; `seed`, `lambda` and `include_sensitive` are set
    /// per run from `constrained` and `lambda`.
    pub train: TrainConfig,
    pub lambda: f64,
    pub jobs: usize,
}

impl ReproduceOptions {
    pub fn new(dataset: DatasetId, constrained: bool, seeds: Vec<u64>) -> Self {
        ReproduceOptions {
            dataset,
            constrained,
            seeds,
            models: dataset.published_models(),
            test_fraction: SplitSpec::DEFAULT_TEST_FRACTION,
            spec: ModelSpec::new(ModelKind::Lr, 0),
            train: TrainConfig { batch_size: dataset.default_batch_size(), ..TrainConfig::default() },
            lambda: TrainConfig::DEFAULT_LAMBDA,
            jobs: 1,
        }
    }

    pub fn config_for(&self, seed: u64) -> TrainConfig {
        let base = TrainConfig { seed, ..self.train.clone() };
        if self.constrained {
            base.constrained(self.lambda)
        } else {
            TrainConfig { lambda: 0.0, include_sensitive: true, ..base }
        }
    }
}

/// Mean and sample standard deviation (0 for a single value).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std =
            if n < 2 { 0.0 } else { (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() };
        Some(Summary { mean, std, n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub model: ModelKind,
    pub runs: usize,
    pub accuracy: Summary,
    pub f1: Summary,
    pub spd: Summary,
    pub eod: Option<Summary>,
    pub abroca: Option<Summary>,
    /// Runs whose predictions were all 0 or all 1.
    pub degenerate_runs: usize,
    pub mean_duration_secs: f64,
    pub reference: Option<ReferenceRow>,
}

/// A finished run with the data needed for its ROC panel.
pub struct CompletedRun {
    pub output: RunOutput,
    pub seed: u64,
}

impl CompletedRun {
    /// ROC curves of both groups and their ABROCA, drawn as an SVG panel.
    pub fn abroca_svg(&self, title: &str) -> Option<String> {
        let gp = &self.output.predictions;
        let (sp, yp) = gp.group(Group::Privileged);
        let (su, yu) = gp.group(Group::Unprivileged);
        let base = roc_curve(&sp, &yp).ok()?;
        let comp = roc_curve(&su, &yu).ok()?;
        let value = crate::fairness::abroca(&base, &comp);
        Some(roc_svg(title, ("privileged (z=1)", &base), ("unprivileged (z=0)", &comp), value))
    }
}

pub struct ReproduceResult {
    pub options_dataset: DatasetId,
    pub constrained: bool,
    pub rows: Vec<AggregateRow>,
    pub runs: Vec<CompletedRun>,
}

/// Splits `raw` once per seed, then trains every requested model on every
/// split, using up to `opts.jobs` threads.
pub fn reproduce(raw: &RawDataset, opts: &ReproduceOptions) -> Result<ReproduceResult, TrainError> {
    if opts.seeds.is_empty() || opts.models.is_empty() {
        return Err(TrainError::Config("at least one seed and one model are required".into()));
    }
    let splits: Vec<Split> = opts
        .seeds
        .iter()
        .map(|&s| encode_and_split(raw, SplitSpec::new(opts.test_fraction, s)))
        .collect::<Result<_, _>>()?;
    let tasks: Vec<(ModelKind, usize)> =
        opts.models.iter().flat_map(|&m| (0..opts.seeds.len()).map(move |i| (m, i))).collect();
    let results: Mutex<Vec<Option<Result<RunOutput, TrainError>>>> =
        Mutex::new((0..tasks.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..opts.jobs.clamp(1, tasks.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(kind, si)) = tasks.get(i) else {
                    break;
                };
                let spec = ModelSpec { kind, ..opts.spec };
                let out = run(spec, &splits[si], &opts.config_for(opts.seeds[si]));
                results.lock().expect("no panics while holding the lock")[i] = Some(out);
            });
        }
    });
    let mut runs = Vec::with_capacity(tasks.len());
    for ((_, si), r) in tasks.iter().zip(results.into_inner().expect("threads joined")) {
        runs.push(CompletedRun { output: r.expect("every task ran")?, seed: opts.seeds[*si] });
    }
    let rows = opts
        .models
        .iter()
        .map(|&m| aggregate(m, runs.iter().filter(|r| r.output.record.model.kind == m), opts))
        .collect();
    Ok(ReproduceResult { options_dataset: opts.dataset, constrained: opts.constrained, rows, runs })
}

fn aggregate<'a>(
    model: ModelKind,
    runs: impl Iterator<Item = &'a CompletedRun>,
    opts: &ReproduceOptions,
) -> AggregateRow {
    let reports: Vec<_> =
        runs.filter_map(|r| Some((r.output.record.report.as_ref()?, r.output.record.duration_secs))).collect();
    let col = |f: &dyn Fn(&crate::fairness::FairnessReport) -> Option<f64>| {
        Summary::of(&reports.iter().filter_map(|(r, _)| f(r)).collect::<Vec<_>>())
    };
    AggregateRow {
        model,
        runs: reports.len(),
        accuracy: col(&|r| Some(r.accuracy)).expect("runs exist"),
        f1: col(&|r| Some(r.f1)).expect("runs exist"),
        spd: col(&|r| Some(r.spd)).expect("runs exist"),
        eod: col(&|r| r.eod),
        abroca: col(&|r| r.abroca),
        degenerate_runs: reports.iter().filter(|(r, _)| r.degenerate_predictor).count(),
        mean_duration_secs: reports.iter().map(|(_, d)| d).sum::<f64>() / reports.len().max(1) as f64,
        reference: reference(opts.dataset, opts.constrained, model),
    }
}

fn fmt_summary(s: Option<Summary>) -> String {
    s.map_or_else(|| "n/a".to_string(), |s| format!("{:.5} ± {:.5}", s.mean, s.std))
}

fn fmt_ref(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.5}"))
}

impl ReproduceResult {
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "dataset: {}   fairness constraint: {}   seeds per model: {}",
            self.options_dataset.as_str(),
            if self.constrained { "on" } else { "off" },
            self.rows.first().map_or(0, |r| r.runs)
        );
        let _ = writeln!(
            s,
            "{:<15} {:>19} {:>9} {:>19} {:>9} {:>21} {:>10} {:>21} {:>10} {:>19} {:>5}",
            "model", "accuracy", "(ref)", "f1", "(ref)", "spd", "(ref)", "eod", "(ref)", "abroca", "degen"
        );
        for r in &self.rows {
            let rf = r.reference;
            let _ = writeln!(
                s,
                "{:<15} {:>19} {:>9} {:>19} {:>9} {:>21} {:>10} {:>21} {:>10} {:>19} {:>5}",
                r.model.label(),
                fmt_summary(Some(r.accuracy)),
                fmt_ref(rf.map(|x| x.accuracy)),
                fmt_summary(Some(r.f1)),
                fmt_ref(rf.map(|x| x.f1)),
                fmt_summary(Some(r.spd)),
                fmt_ref(rf.map(|x| x.spd)),
                fmt_summary(r.eod),
                fmt_ref(rf.map(|x| x.eod)),
                fmt_summary(r.abroca),
                r.degenerate_runs
            );
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "model,runs,accuracy_mean,accuracy_std,accuracy_ref,f1_mean,f1_std,f1_ref,spd_mean,spd_std,spd_ref,eod_mean,eod_std,eod_ref,abroca_mean,abroca_std,degenerate_runs,mean_duration_secs\n",
        );
        let opt = |v: Option<f64>| v.map_or_else(String::new, |v| v.to_string());
        for r in &self.rows {
            let rf = r.reference;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.model.as_str(),
                r.runs,
                r.accuracy.mean,
                r.accuracy.std,
                opt(rf.map(|x| x.accuracy)),
                r.f1.mean,
                r.f1.std,
                opt(rf.map(|x| x.f1)),
                r.spd.mean,
                r.spd.std,
                opt(rf.map(|x| x.spd)),
                opt(r.eod.map(|x| x.mean)),
                opt(r.eod.map(|x| x.std)),
                opt(rf.map(|x| x.eod)),
                opt(r.abroca.map(|x| x.mean)),
                opt(r.abroca.map(|x| x.std)),
                r.degenerate_runs,
                r.mean_duration_secs
            );
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.rows).expect("rows serialize")
    }
}
