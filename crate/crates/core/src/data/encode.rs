use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

use super::raw::{RawColumn, RawDataset};
use super::schema::{ColumnKind, ColumnSchema};
use super::DataError;
use crate::seed::{self, Stream};

/// Numerical columns whose training standard deviation falls below this
/// are centered but not scaled.
const MIN_STD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub const DEFAULT_TEST_FRACTION: f64 = 0.30;

    pub fn new(test_fraction: f64, seed: u64) -> Self {
        Self { test_fraction, seed }
    }

    /// `(train, test)` sizes for `n` rows.
    pub fn sizes(&self, n: usize) -> (usize, usize) {
        let test = (self.test_fraction * n as f64).floor() as usize;
        (n - test, test)
    }
}

/// Column metadata shared by every split of one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    /// All columns, including the target.
    pub schema: Vec<ColumnSchema>,
    /// Schema indices of the categorical-code matrix columns, in order.
    pub cat_columns: Vec<usize>,
    /// Schema indices of the numerical matrix columns, in order.
    pub num_columns: Vec<usize>,
    pub sensitive_mapping: String,
}

impl DatasetMeta {
    pub fn sensitive_index(&self) -> usize {
        self.schema.iter().position(|c| c.is_sensitive).expect("one sensitive column")
    }

    pub fn sensitive_is_feature(&self) -> bool {
        self.cat_columns.contains(&self.sensitive_index())
    }

    /// Known categories per categorical column; embedding tables hold one
    /// extra row for unseen values.
    pub fn cat_cardinalities(&self) -> Vec<usize> {
        self.cat_columns.iter().map(|&i| self.schema[i].cardinality.unwrap_or(2)).collect()
    }

    pub fn feature_names(&self) -> Vec<&str> {
        self.cat_columns.iter().chain(&self.num_columns).map(|&i| self.schema[i].name.as_str()).collect()
    }
}

/// An encoded split: integer category codes, standardized numerical
/// values, labels (1 = favorable) and sensitive groups (0 = unprivileged).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    /// Row-major, `row_count x meta.cat_columns.len()`.
    pub categorical_codes: Vec<usize>,
    /// Row-major, `row_count x meta.num_columns.len()`.
    pub numerical_values: Vec<f64>,
    pub labels: Vec<u8>,
    pub sensitive: Vec<u8>,
    pub row_count: usize,
}

impl Dataset {
    pub fn n_cat(&self) -> usize {
        self.meta.cat_columns.len()
    }

    pub fn n_num(&self) -> usize {
        self.meta.num_columns.len()
    }

    pub fn cat_row(&self, r: usize) -> &[usize] {
        let w = self.n_cat();
        &self.categorical_codes[r * w..(r + 1) * w]
    }

    pub fn num_row(&self, r: usize) -> &[f64] {
        let w = self.n_num();
        &self.numerical_values[r * w..(r + 1) * w]
    }

    pub fn select(&self, rows: &[usize]) -> Dataset {
        let mut codes = Vec::with_capacity(rows.len() * self.n_cat());
        let mut nums = Vec::with_capacity(rows.len() * self.n_num());
        for &r in rows {
            codes.extend_from_slice(self.cat_row(r));
            nums.extend_from_slice(self.num_row(r));
        }
        Dataset {
            meta: self.meta.clone(),
            categorical_codes: codes,
            numerical_values: nums,
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            sensitive: rows.iter().map(|&r| self.sensitive[r]).collect(),
            row_count: rows.len(),
        }
    }

    /// Drops the sensitive attribute from the model inputs. It stays in the
    /// schema and in `sensitive`, where the metrics read it.
    pub fn exclude_sensitive(&self) -> Dataset {
        let sidx = self.meta.sensitive_index();
        let Some(pos) = self.meta.cat_columns.iter().position(|&i| i == sidx) else {
            return self.clone();
        };
        let w = self.n_cat();
        let codes = self
            .categorical_codes
            .chunks(w)
            .flat_map(|row| row.iter().enumerate().filter(|(j, _)| *j != pos).map(|(_, c)| *c))
            .collect();
        let mut meta = self.meta.clone();
        meta.cat_columns.remove(pos);
        Dataset { meta, categorical_codes: codes, ..self.clone() }
    }

    pub fn feature_view(&self, include_sensitive: bool) -> Dataset {
        if include_sensitive {
            self.clone()
        } else {
            self.exclude_sensitive()
        }
    }

    /// Checks the structural invariants: matching row counts, codes within
    /// `cardinality` (inclusive, the last code is the unseen slot) and 0/1
    /// labels and groups.
    pub fn validate(&self) -> Result<(), DataError> {
        let n = self.row_count;
        if self.categorical_codes.len() != n * self.n_cat()
            || self.numerical_values.len() != n * self.n_num()
            || self.labels.len() != n
            || self.sensitive.len() != n
        {
            return Err(DataError::Invariant("matrix sizes disagree with row_count".into()));
        }
        let cards = self.meta.cat_cardinalities();
        for row in self.categorical_codes.chunks(self.n_cat().max(1)) {
            for (c, card) in row.iter().zip(&cards) {
                if c > card {
                    return Err(DataError::Invariant(format!("code {c} exceeds cardinality {card}")));
                }
            }
        }
        if self.labels.iter().chain(&self.sensitive).any(|&v| v > 1) {
            return Err(DataError::Invariant("labels and groups must be 0/1".into()));
        }
        let targets = self.meta.schema.iter().filter(|c| c.is_target).count();
        let sensitives = self.meta.schema.iter().filter(|c| c.is_sensitive).count();
        if targets != 1 || sensitives != 1 {
            return Err(DataError::Invariant("need exactly one target and one sensitive column".into()));
        }
        Ok(())
    }

    /// Writes codes, standardized values, label and group as CSV.
    pub fn write_csv(&self, path: &Path) -> Result<(), DataError> {
        let io = |e: csv::Error| DataError::Io { path: path.display().to_string(), message: e.to_string() };
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        let mut header: Vec<&str> = self.meta.feature_names();
        header.extend(["label", "group"]);
        w.write_record(&header).map_err(io)?;
        for r in 0..self.row_count {
            let mut rec: Vec<String> = self.cat_row(r).iter().map(|c| c.to_string()).collect();
            rec.extend(self.num_row(r).iter().map(|v| format!("{v:?}")));
            rec.push(self.labels[r].to_string());
            rec.push(self.sensitive[r].to_string());
            w.write_record(&rec).map_err(io)?;
        }
        w.flush().map_err(|e| DataError::Io { path: path.display().to_string(), message: e.to_string() })
    }

    /// Reads a file produced by [`Dataset::write_csv`].
    pub fn read_csv(path: &Path, meta: DatasetMeta) -> Result<Dataset, DataError> {
        let io = |e: csv::Error| DataError::Io { path: path.display().to_string(), message: e.to_string() };
        let mut r = csv::Reader::from_path(path).map_err(io)?;
        let n_cat = meta.cat_columns.len();
        let n_num = meta.num_columns.len();
        let expected: Vec<String> =
            meta.feature_names().into_iter().map(str::to_string).chain(["label".into(), "group".into()]).collect();
        let header: Vec<String> = r.headers().map_err(io)?.iter().map(str::to_string).collect();
        if header != expected {
            return Err(DataError::Csv(format!("{}: header {header:?} does not match {expected:?}", path.display())));
        }
        let mut ds = Dataset {
            meta,
            categorical_codes: Vec::new(),
            numerical_values: Vec::new(),
            labels: Vec::new(),
            sensitive: Vec::new(),
            row_count: 0,
        };
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(io)?;
            let line = i + 2;
            let field = |j: usize| rec.get(j).unwrap_or("");
            let bad = |j: usize| DataError::Parse { line, column: expected[j].clone(), value: field(j).to_string() };
            for j in 0..n_cat {
                ds.categorical_codes.push(field(j).parse().map_err(|_| bad(j))?);
            }
            for j in n_cat..n_cat + n_num {
                ds.numerical_values.push(field(j).parse().map_err(|_| bad(j))?);
            }
            ds.labels.push(field(n_cat + n_num).parse().map_err(|_| bad(n_cat + n_num))?);
            ds.sensitive.push(field(n_cat + n_num + 1).parse().map_err(|_| bad(n_cat + n_num + 1))?);
            ds.row_count += 1;
        }
        ds.validate()?;
        Ok(ds)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum EncodedColumn {
    Discrete { name: String, kind: ColumnKind, vocab: Vec<String> },
    Numerical { name: String, mean: f64, std: f64 },
}

/// Category tables and standardization statistics fitted on a training
/// split, applied unchanged to every other split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub meta: DatasetMeta,
    pub columns: Vec<EncodedColumn>,
}

impl Encoder {
    pub fn fit(train: &RawDataset) -> Result<Self, DataError> {
        if train.row_count() == 0 {
            return Err(DataError::Empty("cannot fit an encoder on zero rows".into()));
        }
        let schema_cfg = &train.schema;
        let mut columns = Vec::with_capacity(train.columns.len());
        for col in &train.columns {
            match col {
                RawColumn::Discrete { name, kind, vocab, codes } => {
                    let mut present = vec![false; vocab.len()];
                    codes.iter().for_each(|&c| present[c] = true);
                    let kept = vocab.iter().zip(&present).filter(|(_, p)| **p).map(|(v, _)| v.clone()).collect();
                    columns.push(EncodedColumn::Discrete { name: name.clone(), kind: *kind, vocab: kept });
                }
                RawColumn::Numerical { name, values } => {
                    let n = values.len() as f64;
                    let mean = values.iter().sum::<f64>() / n;
                    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                    let std = if var.sqrt() < MIN_STD { 1.0 } else { var.sqrt() };
                    columns.push(EncodedColumn::Numerical { name: name.clone(), mean, std });
                }
            }
        }

        let mut schema = Vec::new();
        let mut cat_columns = Vec::new();
        let mut num_columns = Vec::new();
        let mut feature_iter = columns.iter();
        for decl in &schema_cfg.columns {
            let is_target = decl.name == schema_cfg.target.column;
            let is_sensitive = decl.name == schema_cfg.sensitive.column;
            let cardinality = if is_target {
                decl.kind.is_discrete().then_some(2)
            } else {
                match feature_iter.next().expect("one encoded column per feature") {
                    EncodedColumn::Discrete { kind, vocab, .. } => {
                        cat_columns.push(schema.len());
                        let min = if *kind == ColumnKind::Binary { 2 } else { 1 };
                        Some(vocab.len().max(min))
                    }
                    EncodedColumn::Numerical { .. } => {
                        num_columns.push(schema.len());
                        None
                    }
                }
            };
            schema.push(ColumnSchema {
                name: decl.name.clone(),
                kind: decl.kind,
                cardinality,
                is_sensitive,
                is_target,
            });
        }
        let meta = DatasetMeta {
            name: schema_cfg.name.clone(),
            schema,
            cat_columns,
            num_columns,
            sensitive_mapping: schema_cfg.sensitive.describe(),
        };
        Ok(Self { meta, columns })
    }

    pub fn transform(&self, raw: &RawDataset) -> Result<Dataset, DataError> {
        if raw.columns.len() != self.columns.len() {
            return Err(DataError::Invariant("raw columns do not match the encoder".into()));
        }
        let n = raw.row_count();
        let n_cat = self.meta.cat_columns.len();
        let n_num = self.meta.num_columns.len();
        let mut codes = vec![0usize; n * n_cat];
        let mut nums = vec![0.0; n * n_num];
        let (mut ci, mut ni) = (0, 0);
        for (enc, col) in self.columns.iter().zip(&raw.columns) {
            if enc_name(enc) != col.name() {
                return Err(DataError::UnknownColumn(col.name().to_string()));
            }
            match (enc, col) {
                (
                    EncodedColumn::Discrete { vocab, kind, .. },
                    RawColumn::Discrete { vocab: raw_vocab, codes: raw_codes, .. },
                ) => {
                    let table: HashMap<&str, usize> = vocab.iter().enumerate().map(|(i, v)| (v.as_str(), i)).collect();
                    let min = if *kind == ColumnKind::Binary { 2 } else { 1 };
                    let unseen = vocab.len().max(min);
                    let remap: Vec<usize> =
                        raw_vocab.iter().map(|v| table.get(v.as_str()).copied().unwrap_or(unseen)).collect();
                    for (r, &c) in raw_codes.iter().enumerate() {
                        codes[r * n_cat + ci] = remap[c];
                    }
                    ci += 1;
                }
                (EncodedColumn::Numerical { mean, std, .. }, RawColumn::Numerical { values, .. }) => {
                    for (r, v) in values.iter().enumerate() {
                        nums[r * n_num + ni] = (v - mean) / std;
                    }
                    ni += 1;
                }
                _ => return Err(DataError::Invariant(format!("column `{}` changed kind", col.name()))),
            }
        }
        let ds = Dataset {
            meta: self.meta.clone(),
            categorical_codes: codes,
            numerical_values: nums,
            labels: raw.labels.clone(),
            sensitive: raw.sensitive.clone(),
            row_count: n,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Maps codes of an encoded dataset back to category strings; unseen
    /// codes become `None`.
    pub fn decode_categories(&self, ds: &Dataset) -> Vec<Vec<Option<String>>> {
        let vocabs: Vec<&Vec<String>> = self
            .columns
            .iter()
            .filter_map(|c| match c {
                EncodedColumn::Discrete { vocab, .. } => Some(vocab),
                EncodedColumn::Numerical { .. } => None,
            })
            .collect();
        (0..ds.row_count)
            .map(|r| ds.cat_row(r).iter().zip(&vocabs).map(|(&c, v)| v.get(c).cloned()).collect())
            .collect()
    }
}

fn enc_name(c: &EncodedColumn) -> &str {
    match c {
        EncodedColumn::Discrete { name, .. } | EncodedColumn::Numerical { name, .. } => name,
    }
}

/// Result of [`encode_and_split`]: both splits, the fitted encoder and the
/// original row indices of each split (in split order).
#[derive(Debug, Clone)]
pub struct Split {
    pub train: Dataset,
    pub test: Dataset,
    pub encoder: Encoder,
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
}

/// Seeded permutation, the first `floor(test_fraction * n)` rows go to the
/// test split and the rest to training. Category tables and
/// standardization statistics come from the training rows only.
pub fn encode_and_split(raw: &RawDataset, spec: SplitSpec) -> Result<Split, DataError> {
    if !(spec.test_fraction > 0.0 && spec.test_fraction < 1.0) {
        return Err(DataError::InvalidSplit(format!("test fraction {} not in (0, 1)", spec.test_fraction)));
    }
    let n = raw.row_count();
    let (n_train, n_test) = spec.sizes(n);
    if n_train == 0 || n_test == 0 {
        return Err(DataError::InvalidSplit(format!("{n} rows give an empty split ({n_train} train / {n_test} test)")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(spec.seed, Stream::Split));
    let test_rows = order[..n_test].to_vec();
    let train_rows = order[n_test..].to_vec();
    let raw_train = raw.select(&train_rows);
    let raw_test = raw.select(&test_rows);
    let encoder = Encoder::fit(&raw_train)?;
    let train = encoder.transform(&raw_train)?;
    let test = encoder.transform(&raw_test)?;
    Ok(Split { train, test, encoder, train_rows, test_rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub rows: usize,
    pub unprivileged_rows: usize,
    pub privileged_rows: usize,
    pub unprivileged_fraction: f64,
    /// `P(y = 1 | z = 0)`, absent for an empty group.
    pub base_rate_unprivileged: Option<f64>,
    /// `P(y = 1 | z = 1)`, absent for an empty group.
    pub base_rate_privileged: Option<f64>,
    pub base_rate: f64,
}

pub fn group_stats(labels: &[u8], sensitive: &[u8]) -> GroupStats {
    let rows = labels.len();
    let count = |z: u8| sensitive.iter().filter(|&&s| s == z).count();
    let pos = |z: u8| labels.iter().zip(sensitive).filter(|(&y, &s)| s == z && y == 1).count();
    let rate = |z: u8| {
        let n = count(z);
        (n > 0).then(|| pos(z) as f64 / n as f64)
    };
    GroupStats {
        rows,
        unprivileged_rows: count(0),
        privileged_rows: count(1),
        unprivileged_fraction: if rows == 0 { 0.0 } else { count(0) as f64 / rows as f64 },
        base_rate_unprivileged: rate(0),
        base_rate_privileged: rate(1),
        base_rate: if rows == 0 { 0.0 } else { labels.iter().filter(|&&y| y == 1).count() as f64 / rows as f64 },
    }
}

impl Dataset {
    pub fn group_stats(&self) -> GroupStats {
        group_stats(&self.labels, &self.sensitive)
    }
}
