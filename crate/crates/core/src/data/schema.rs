use serde::{Deserialize, Serialize};
use std::path::Path;

use super::DataError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Categorical,
    Binary,
    Numerical,
}

impl ColumnKind {
    pub fn is_discrete(self) -> bool {
        !matches!(self, ColumnKind::Numerical)
    }
}

/// One column of an encoded dataset.
///
/// `cardinality` counts the categories seen in the training split (2 for
/// binary columns). Encoders reserve one extra code, equal to
/// `cardinality`, for categories that only appear at test time.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub kind: ColumnKind,
    pub cardinality: Option<usize>,
    pub is_sensitive: bool,
    pub is_target: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnDecl {
    pub name: String,
    pub kind: ColumnKind,
}

/// How the target column becomes a favorable (1) / unfavorable (0) label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub column: String,
    /// Raw values mapped to the favorable label.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub favorable: Option<Vec<String>>,
    /// Numeric values `>= threshold` are favorable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitiveSpec {
    pub column: String,
    /// Raw values that make up the unprivileged group (z = 0).
    pub unprivileged: Vec<String>,
    /// Swap the two groups.
    #[serde(default)]
    pub invert: bool,
}

impl SensitiveSpec {
    pub fn group_of(&self, raw: &str) -> u8 {
        let unpriv = self.unprivileged.iter().any(|u| u == raw);
        u8::from(unpriv == self.invert)
    }

    /// Human-readable mapping echoed into reports.
    pub fn describe(&self) -> String {
        let values = self.unprivileged.join("|");
        if self.invert {
            format!("{}: not in {{{values}}} -> z=0 (inverted)", self.column)
        } else {
            format!("{}: {{{values}}} -> z=0", self.column)
        }
    }
}

/// Declarative description of a CSV file: its columns, the target rule and
/// the sensitive-group rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaConfig {
    pub name: String,
    /// Field delimiter. Detected from the header line when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delimiter: Option<char>,
    pub target: TargetSpec,
    pub sensitive: SensitiveSpec,
    pub columns: Vec<ColumnDecl>,
}

pub const LAW_SCHOOL_SCHEMA: &str = include_str!("../../schemas/law_school.toml");
pub const STUDENT_MATH_SCHEMA: &str = include_str!("../../schemas/student_math.toml");

impl SchemaConfig {
    pub fn from_toml(text: &str) -> Result<Self, DataError> {
        let schema: SchemaConfig = toml::from_str(text).map_err(|e| DataError::Schema(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_file(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DataError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_toml(&text)
    }

    pub fn law_school() -> Self {
        Self::from_toml(LAW_SCHOOL_SCHEMA).expect("bundled schema is valid")
    }

    pub fn student_math() -> Self {
        Self::from_toml(STUDENT_MATH_SCHEMA).expect("bundled schema is valid")
    }

    pub fn with_inverted_sensitive(mut self, invert: bool) -> Self {
        self.sensitive.invert = invert;
        self
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let err = |m: String| Err(DataError::Schema(m));
        let mut seen = std::collections::HashSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.as_str()) {
                return err(format!("column `{}` declared twice", c.name));
            }
        }
        let target = self.column(&self.target.column);
        let Some(target) = target else {
            return err(format!("target column `{}` is not declared", self.target.column));
        };
        match (&self.target.favorable, self.target.threshold) {
            (Some(_), None) => {}
            (None, Some(_)) if target.kind == ColumnKind::Numerical => {}
            (None, Some(_)) => return err("a target threshold needs a numerical target column".into()),
            _ => return err("target needs exactly one of `favorable` or `threshold`".into()),
        }
        let Some(sensitive) = self.column(&self.sensitive.column) else {
            return err(format!("sensitive column `{}` is not declared", self.sensitive.column));
        };
        if !sensitive.kind.is_discrete() {
            return err("the sensitive column must be categorical or binary".into());
        }
        if self.sensitive.column == self.target.column {
            return err("the sensitive column cannot be the target".into());
        }
        if self.sensitive.unprivileged.is_empty() {
            return err("at least one unprivileged value is required".into());
        }
        if self.feature_columns().next().is_none() {
            return err("no feature columns".into());
        }
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<&ColumnDecl> {
        self.columns.iter().find(|c| c.name == name)
    }

    /// Every declared column except the target, in declaration order.
    pub fn feature_columns(&self) -> impl Iterator<Item = &ColumnDecl> {
        self.columns.iter().filter(move |c| c.name != self.target.column)
    }

    /// Attribute counts (categorical, binary, numerical) over all declared
    /// columns, target included.
    pub fn kind_counts(&self) -> (usize, usize, usize) {
        let count = |k| self.columns.iter().filter(|c| c.kind == k).count();
        (count(ColumnKind::Categorical), count(ColumnKind::Binary), count(ColumnKind::Numerical))
    }
}
