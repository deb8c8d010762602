use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use super::schema::{ColumnKind, SchemaConfig};
use super::DataError;

/// A parsed but not yet standardized feature column.
#[derive(Debug, Clone, PartialEq)]
pub enum RawColumn {
    /// Categorical or binary: codes index `vocab`, which is in
    /// first-appearance order.
    Discrete {
        name: String,
        kind: ColumnKind,
        vocab: Vec<String>,
        codes: Vec<usize>,
    },
    Numerical {
        name: String,
        values: Vec<f64>,
    },
}

impl RawColumn {
    pub fn name(&self) -> &str {
        match self {
            RawColumn::Discrete { name, .. } | RawColumn::Numerical { name, .. } => name,
        }
    }

    fn select(&self, rows: &[usize]) -> RawColumn {
        match self {
            RawColumn::Discrete { name, kind, vocab, codes } => RawColumn::Discrete {
                name: name.clone(),
                kind: *kind,
                vocab: vocab.clone(),
                codes: rows.iter().map(|&r| codes[r]).collect(),
            },
            RawColumn::Numerical { name, values } => {
                RawColumn::Numerical { name: name.clone(), values: rows.iter().map(|&r| values[r]).collect() }
            }
        }
    }
}

/// Rows of a CSV file after cleaning, with labels and sensitive groups
/// already mapped to 0/1.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub schema: SchemaConfig,
    /// Feature columns (everything but the target) in declaration order.
    pub columns: Vec<RawColumn>,
    pub labels: Vec<u8>,
    pub sensitive: Vec<u8>,
    /// Number of data rows dropped for missing values.
    pub dropped_rows: usize,
}

impl RawDataset {
    pub fn row_count(&self) -> usize {
        self.labels.len()
    }

    pub fn select(&self, rows: &[usize]) -> RawDataset {
        RawDataset {
            schema: self.schema.clone(),
            columns: self.columns.iter().map(|c| c.select(rows)).collect(),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            sensitive: rows.iter().map(|&r| self.sensitive[r]).collect(),
            dropped_rows: 0,
        }
    }
}

fn is_missing(cell: &str) -> bool {
    matches!(cell, "" | "NA" | "N/A" | "na" | "?" | "NaN" | "nan" | "null")
}

fn detect_delimiter(text: &str) -> u8 {
    let header = text.lines().next().unwrap_or("");
    if !header.contains(',') && header.contains(';') {
        b';'
    } else {
        b','
    }
}

pub fn load_csv(path: &Path, schema: &SchemaConfig) -> Result<RawDataset, DataError> {
    let mut file = std::fs::File::open(path)
        .map_err(|e| DataError::Io { path: path.display().to_string(), message: e.to_string() })?;
    let mut text = String::new();
    file.read_to_string(&mut text)
        .map_err(|e| DataError::Io { path: path.display().to_string(), message: e.to_string() })?;
    parse_csv(&text, schema)
}

/// Parses CSV text with a header row against `schema`. Rows with a
/// missing value in any declared column are dropped.
pub fn parse_csv(text: &str, schema: &SchemaConfig) -> Result<RawDataset, DataError> {
    schema.validate()?;
    let delimiter = schema.delimiter.map(|c| c as u8).unwrap_or_else(|| detect_delimiter(text));
    let mut reader = csv::ReaderBuilder::new().delimiter(delimiter).trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| DataError::Csv(e.to_string()))?.clone();
    let position: HashMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h.trim_matches('"'), i)).collect();
    let index_of = |name: &str| position.get(name).copied().ok_or_else(|| DataError::UnknownColumn(name.to_string()));

    let target_idx = index_of(&schema.target.column)?;
    let sensitive_idx = index_of(&schema.sensitive.column)?;
    let features: Vec<(usize, &super::schema::ColumnDecl)> =
        schema.feature_columns().map(|c| Ok((index_of(&c.name)?, c))).collect::<Result<_, DataError>>()?;
    let used: Vec<usize> = features.iter().map(|(i, _)| *i).chain([target_idx]).collect();

    let mut vocabs: Vec<HashMap<String, usize>> = vec![HashMap::new(); features.len()];
    let mut columns: Vec<RawColumn> = features
        .iter()
        .map(|(_, c)| match c.kind {
            ColumnKind::Numerical => RawColumn::Numerical { name: c.name.clone(), values: Vec::new() },
            kind => RawColumn::Discrete { name: c.name.clone(), kind, vocab: Vec::new(), codes: Vec::new() },
        })
        .collect();
    let mut labels = Vec::new();
    let mut sensitive = Vec::new();
    let mut dropped_rows = 0;

    for (row_no, record) in reader.records().enumerate() {
        // line 1 is the header
        let line = row_no + 2;
        let record = record.map_err(|e| DataError::Csv(format!("line {line}: {e}")))?;
        let cell = |i: usize| record.get(i).unwrap_or("").trim();
        if used.iter().any(|&i| is_missing(cell(i))) {
            dropped_rows += 1;
            continue;
        }
        let parse_num = |i: usize, name: &str| {
            cell(i).parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| DataError::Parse {
                line,
                column: name.to_string(),
                value: cell(i).to_string(),
            })
        };
        let label = match (&schema.target.favorable, schema.target.threshold) {
            (Some(fav), _) => u8::from(fav.iter().any(|f| f == cell(target_idx))),
            (None, Some(t)) => u8::from(parse_num(target_idx, &schema.target.column)? >= t),
            (None, None) => unreachable!("validated schema"),
        };
        // Parse the whole row before committing so a failing row leaves no
        // partial state behind.
        let mut nums = Vec::with_capacity(features.len());
        for (i, c) in &features {
            if c.kind == ColumnKind::Numerical {
                nums.push(parse_num(*i, &c.name)?);
            }
        }
        let mut nums = nums.into_iter();
        for ((col, (i, decl)), vocab) in columns.iter_mut().zip(&features).zip(&mut vocabs) {
            match col {
                RawColumn::Numerical { values, .. } => values.push(nums.next().expect("parsed above")),
                RawColumn::Discrete { vocab: words, codes, kind, .. } => {
                    let value = cell(*i);
                    let next = vocab.len();
                    let code = *vocab.entry(value.to_string()).or_insert_with(|| {
                        words.push(value.to_string());
                        next
                    });
                    if *kind == ColumnKind::Binary && words.len() > 2 {
                        return Err(DataError::NotBinary { column: decl.name.clone(), values: words.clone() });
                    }
                    codes.push(code);
                }
            }
        }
        labels.push(label);
        sensitive.push(schema.sensitive.group_of(cell(sensitive_idx)));
    }
    if labels.is_empty() {
        return Err(DataError::Empty("no complete rows in the input".into()));
    }
    Ok(RawDataset { schema: schema.clone(), columns, labels, sensitive, dropped_rows })
}
