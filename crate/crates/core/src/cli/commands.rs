use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CliError, Command, Hyper};
use crate::data::{self, encode_and_split, Dataset, Encoder, GroupStats, SchemaConfig, Split, SplitSpec};
use crate::fairness::{
    abroca, roc_curve, roc_svg, ConfigEcho, FairnessError, FairnessReport, Group, GroupedPredictions,
};
use crate::models::ModelKind;
use crate::trainer::reproduce::{reproduce, DatasetId, ReproduceOptions};
use crate::trainer::{run, TrainConfig};

const MANIFEST: &str = "manifest.json";
const TRAIN_CSV: &str = "train.csv";
const TEST_CSV: &str = "test.csv";

/// Everything `prep` decided, enough to rebuild both splits from the raw
/// file. Contains no timestamps or absolute paths, so the same inputs give
/// the same bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dataset: String,
    pub source_sha256: String,
    pub rows: usize,
    pub seed: u64,
    pub test_fraction: f64,
    pub sensitive_mapping: String,
    pub train_count: usize,
    pub test_count: usize,
    pub train_stats: GroupStats,
    pub test_stats: GroupStats,
    pub encoder: Encoder,
    /// Zero-based data-row indices of the raw file, in split order.
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Manifest, CliError> {
        let path = dir.join(MANIFEST);
        let text = read_text(&path)?;
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }

    /// Reloads the encoded splits written next to the manifest.
    pub fn load_split(self, dir: &Path) -> Result<Split, CliError> {
        let train = Dataset::read_csv(&dir.join(TRAIN_CSV), self.encoder.meta.clone())?;
        let test = Dataset::read_csv(&dir.join(TEST_CSV), self.encoder.meta.clone())?;
        if train.row_count != self.train_count || test.row_count != self.test_count {
            return Err(CliError::Data(format!("{}: split sizes disagree with the manifest", dir.display())));
        }
        Ok(Split { train, test, encoder: self.encoder, train_rows: self.train_rows, test_rows: self.test_rows })
    }
}

pub(super) fn execute(command: Command, out: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Prep { data, schema, dataset, out: dir, seed, test_fraction, invert_sensitive } => {
            let schema = match (schema, dataset) {
                (Some(path), _) => {
                    if !path.is_file() {
                        return Err(CliError::Usage(format!("--schema {}: no such file", path.display())));
                    }
                    SchemaConfig::from_file(&path)?
                }
                (None, Some(name)) => dataset_id(&name)?.schema(),
                (None, None) => return Err(CliError::Usage("one of --schema or --dataset is required".into())),
            };
            prep(
                &data,
                &schema.with_inverted_sensitive(invert_sensitive),
                &dir,
                SplitSpec::new(test_fraction, seed),
                out,
            )
        }
        Command::Train { split, config, hyper, out: dir } => {
            train(&split, hyper.with_config(config.as_deref())?, &dir, out)
        }
        Command::Audit { predictions, threshold, model, out: dest } => {
            let gp = read_predictions(&predictions, threshold)?;
            let dataset = predictions.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
            let echo = ConfigEcho {
                model,
                dataset,
                seed: 0,
                lambda: 0.0,
                sensitive_mapping: "group column: 0 = unprivileged, 1 = privileged".into(),
                sensitive_feature_included: false,
                threshold,
            };
            let report = FairnessReport::compute(&gp, echo).map_err(contract)?;
            match dest {
                Some(p) => write(&p, report.to_json().as_bytes()),
                None => emit(out, &report.to_json()),
            }
        }
        Command::Reproduce {
            dataset,
            data,
            constrained,
            seeds,
            models,
            test_fraction,
            invert_sensitive,
            jobs,
            config,
            hyper,
            out: dir,
        } => {
            let hyper = hyper.with_config(config.as_deref())?;
            if hyper.include_sensitive.is_some() {
                return Err(CliError::Usage(
                    "--constrained decides whether the sensitive attribute is an input".into(),
                ));
            }
            if hyper.model.is_some() {
                return Err(CliError::Usage("reproduce takes --models (a list), not --model".into()));
            }
            if seeds == 0 {
                return Err(CliError::Usage("--seeds must be at least 1".into()));
            }
            let id = dataset_id(&dataset)?;
            let raw = data::load_csv(&data, &id.schema().with_inverted_sensitive(invert_sensitive))?;
            let first = hyper.seed.unwrap_or(0);
            let mut opts = ReproduceOptions::new(id, constrained, (first..first + seeds as u64).collect());
            if let Some(m) = models {
                opts.models = m;
            }
            opts.test_fraction = test_fraction;
            opts.train = hyper.train_config(opts.train.clone());
            opts.spec = hyper.model_spec(ModelKind::Lr, first);
            opts.lambda = hyper.lambda.unwrap_or(TrainConfig::DEFAULT_LAMBDA);
            opts.jobs = jobs.max(1);
            let result = reproduce(&raw, &opts)?;
            emit(out, &result.render_text())?;
            if let Some(dir) = dir {
                create_dir(&dir)?;
                write(&dir.join("table.txt"), result.render_text().as_bytes())?;
                write(&dir.join("table.csv"), result.to_csv().as_bytes())?;
                write(&dir.join("summary.json"), result.to_json().as_bytes())?;
                let records: Vec<_> = result.runs.iter().map(|r| &r.output.record).collect();
                write(
                    &dir.join("runs.json"),
                    serde_json::to_string_pretty(&records).expect("records serialize").as_bytes(),
                )?;
                for &kind in &opts.models {
                    let first_run = result.runs.iter().find(|r| r.output.record.model.kind == kind && r.seed == first);
                    let title = format!("{} on {} (seed {first})", kind.label(), id.as_str());
                    if let Some(svg) = first_run.and_then(|r| r.abroca_svg(&title)) {
                        write(&dir.join(format!("abroca_{}.svg", kind.as_str())), svg.as_bytes())?;
                    }
                }
                emit(out, &format!("wrote table, run records and ABROCA panels to {}\n", dir.display()))?;
            }
            Ok(())
        }
        Command::Roc { predictions, out: dest, title, curves } => {
            let gp = read_predictions(&predictions, 0.5)?;
            let curve = |g: Group| {
                let (s, y) = gp.group(g);
                if s.is_empty() {
                    return Err(contract(FairnessError::EmptyGroup(g)));
                }
                roc_curve(&s, &y).map_err(|e| CliError::Data(format!("{g} group: {e}")))
            };
            let (base, comp) = (curve(Group::Privileged)?, curve(Group::Unprivileged)?);
            let value = abroca(&base, &comp);
            let svg = roc_svg(&title, ("privileged (z=1)", &base), ("unprivileged (z=0)", &comp), value);
            write(&dest, svg.as_bytes())?;
            if let Some(path) = curves {
                let mut csv = String::from("group,fpr,tpr\n");
                for (g, c) in [(1, &base), (0, &comp)] {
                    for (x, y) in c.points() {
                        csv.push_str(&format!("{g},{x:?},{y:?}\n"));
                    }
                }
                write(&path, csv.as_bytes())?;
            }
            emit(out, &format!("abroca={value:.6}\n"))
        }
        Command::Synth { dataset, rows, seed, out: dest } => {
            let text = match dataset_id(&dataset)? {
                DatasetId::Law => data::synthetic::law_school_csv(rows, seed),
                DatasetId::StudentMath => data::synthetic::student_math_csv(rows, seed),
            };
            write(&dest, text.as_bytes())?;
            emit(out, &format!("wrote {rows} synthetic rows to {}\n", dest.display()))
        }
    }
}

fn prep(data: &Path, schema: &SchemaConfig, dir: &Path, spec: SplitSpec, out: &mut dyn Write) -> Result<(), CliError> {
    let text = read_text(data)?;
    let raw = data::parse_csv(&text, schema)?;
    let split = encode_and_split(&raw, spec)?;
    create_dir(dir)?;
    split.train.write_csv(&dir.join(TRAIN_CSV))?;
    split.test.write_csv(&dir.join(TEST_CSV))?;
    let manifest = Manifest {
        dataset: schema.name.clone(),
        source_sha256: Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect(),
        rows: raw.row_count(),
        seed: spec.seed,
        test_fraction: spec.test_fraction,
        sensitive_mapping: split.train.meta.sensitive_mapping.clone(),
        train_count: split.train.row_count,
        test_count: split.test.row_count,
        train_stats: split.train.group_stats(),
        test_stats: split.test.group_stats(),
        encoder: split.encoder,
        train_rows: split.train_rows,
        test_rows: split.test_rows,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write(&dir.join(MANIFEST), json.as_bytes())?;
    let mut s = format!(
        "{}: {} rows -> {} train / {} test (seed {}, test fraction {})\nsensitive: {}\n",
        manifest.dataset,
        manifest.rows,
        manifest.train_count,
        manifest.test_count,
        spec.seed,
        spec.test_fraction,
        manifest.sensitive_mapping
    );
    for (name, st) in [("train", &manifest.train_stats), ("test", &manifest.test_stats)] {
        let rate = |r: Option<f64>| r.map_or_else(|| "n/a".into(), |r| format!("{r:.4}"));
        s.push_str(&format!(
            "{name:>5}: unprivileged {} ({:.2}%), privileged {}, P(y=1|z=0) {}, P(y=1|z=1) {}\n",
            st.unprivileged_rows,
            100.0 * st.unprivileged_fraction,
            st.privileged_rows,
            rate(st.base_rate_unprivileged),
            rate(st.base_rate_privileged)
        ));
    }
    emit(out, &s)
}

fn train(split_dir: &Path, hyper: Hyper, dir: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let kind =
        hyper.model.ok_or_else(|| CliError::Usage("--model is required (lr, tab, ft, saint or perceiver)".into()))?;
    let split = Manifest::read(split_dir)?.load_split(split_dir)?;
    let batch_size = DatasetId::from_str(&split.train.meta.name)
        .map_or(TrainConfig::default().batch_size, |d| d.default_batch_size());
    let cfg = hyper.train_config(TrainConfig { batch_size, ..TrainConfig::default() });
    let spec = hyper.model_spec(kind, cfg.seed);
    spec.validate()?;
    let result = run(spec, &split, &cfg)?;
    create_dir(dir)?;
    let record = &result.record;
    write(&dir.join("run.json"), serde_json::to_string_pretty(record).expect("record serializes").as_bytes())?;
    write(&dir.join("config.toml"), Hyper::resolved(&record.model, &record.config).to_toml().as_bytes())?;
    result.model.save(&dir.join("model.bin"))?;
    write(&dir.join("predictions.csv"), predictions_csv(&result.predictions).as_bytes())?;
    let report = record.report.as_ref().expect("run always evaluates");
    let opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.5}"));
    let mut line = format!(
        "{} {} seed={} lambda={} accuracy={:.5} f1={:.5} spd={:.5} eod={} abroca={}",
        kind.as_str(),
        record.dataset,
        cfg.seed,
        cfg.lambda,
        report.accuracy,
        report.f1,
        report.spd,
        opt(report.eod),
        opt(report.abroca)
    );
    if report.degenerate_predictor {
        line.push_str(" degenerate_predictor=true");
    }
    line.push('\n');
    emit(out, &line)
}

/// `score,label,group` rows, with scores written to round-trip exactly.
pub fn predictions_csv(gp: &GroupedPredictions) -> String {
    let mut s = String::from("score,label,group\n");
    for ((score, label), group) in gp.scores.iter().zip(&gp.labels).zip(&gp.groups) {
        s.push_str(&format!("{score:?},{label},{group}\n"));
    }
    s
}

/// Reads a predictions CSV. Columns are found by header name; others are
/// ignored.
pub fn read_predictions(path: &Path, threshold: f64) -> Result<GroupedPredictions, CliError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(CliError::Usage(format!("--threshold must be in [0, 1], got {threshold}")));
    }
    let io = |e: csv::Error| CliError::Data(format!("{}: {e}", path.display()));
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(io)?;
    let header = r.headers().map_err(io)?.clone();
    let col = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| {
            CliError::Data(format!("{}: missing column `{name}` (need score,label,group)", path.display()))
        })
    };
    let (si, li, gi) = (col("score")?, col("label")?, col("group")?);
    let (mut scores, mut labels, mut groups) = (Vec::new(), Vec::new(), Vec::new());
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(io)?;
        let bad = |j: usize| {
            CliError::Data(format!("{} line {}: bad value `{}` in `{}`", path.display(), i + 2, &rec[j], &header[j]))
        };
        scores.push(rec[si].parse::<f64>().map_err(|_| bad(si))?);
        labels.push(rec[li].parse::<u8>().map_err(|_| bad(li))?);
        groups.push(rec[gi].parse::<u8>().map_err(|_| bad(gi))?);
    }
    if scores.is_empty() {
        return Err(CliError::Data(format!("{}: no rows", path.display())));
    }
    Ok(GroupedPredictions::new(scores, labels, groups, threshold)?)
}

/// Explains a missing group in terms of what the metrics compare.
fn contract(e: FairnessError) -> CliError {
    match e {
        FairnessError::EmptyGroup(_) => CliError::Data(format!(
            "{e}; every group metric compares group 0 (unprivileged) with group 1 (privileged), so both need rows"
        )),
        other => other.into(),
    }
}

fn dataset_id(name: &str) -> Result<DatasetId, CliError> {
    DatasetId::from_str(name).map_err(CliError::Usage)
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))
}

fn emit(out: &mut dyn Write, s: &str) -> Result<(), CliError> {
    out.write_all(s.as_bytes()).map_err(|e| CliError::Data(format!("stdout: {e}")))
}
