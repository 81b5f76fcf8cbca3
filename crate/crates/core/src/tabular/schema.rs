//! Attribute schema and samples with a variable set of present attributes.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::hash::Hasher;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Categorical,
    Continuous,
}

impl ColumnKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ColumnKind::Categorical => "categorical",
            ColumnKind::Continuous => "continuous",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
    /// Level names; empty for continuous columns.
    pub levels: Vec<String>,
}

impl Column {
    pub fn continuous(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Continuous,
            levels: Vec::new(),
        }
    }

    pub fn categorical<S: Into<String>>(name: impl Into<String>, levels: impl IntoIterator<Item = S>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Categorical,
            levels: levels.into_iter().map(Into::into).collect(),
        }
    }
}

/// Ordered, validated list of columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSchema {
    columns: Vec<Column>,
}

fn valid_token(s: &str) -> bool {
    !s.is_empty() && !s.contains([',', '|', '\n', '\r', '"'])
}

impl AttributeSchema {
    pub fn new(columns: Vec<Column>) -> Result<Self> {
        let mut names = HashSet::new();
        for col in &columns {
            if !valid_token(&col.name) {
                return Err(CoreError::Schema(format!("invalid column name {:?}", col.name)));
            }
            if !names.insert(col.name.as_str()) {
                return Err(CoreError::Schema(format!("duplicate column {}", col.name)));
            }
            match col.kind {
                ColumnKind::Categorical => {
                    if col.levels.is_empty() {
                        return Err(CoreError::Schema(format!("{} has an empty vocabulary", col.name)));
                    }
                    let mut seen = HashSet::new();
                    for level in &col.levels {
                        if !valid_token(level) || !seen.insert(level) {
                            return Err(CoreError::Schema(format!("{}: bad level {level:?}", col.name)));
                        }
                    }
                }
                ColumnKind::Continuous => {
                    if !col.levels.is_empty() {
                        return Err(CoreError::Schema(format!("continuous {} has levels", col.name)));
                    }
                }
            }
        }
        Ok(Self { columns })
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, index: usize) -> &Column {
        &self.columns[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// Sidecar text form: one `name,kind[,level|level|...]` line per column.
    pub fn to_sidecar(&self) -> String {
        let mut out = String::new();
        for col in &self.columns {
            let _ = write!(out, "{},{}", col.name, col.kind.as_str());
            if col.kind == ColumnKind::Categorical {
                let _ = write!(out, ",{}", col.levels.join("|"));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_sidecar(text: &str) -> Result<Self> {
        let mut columns = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            let bad = || CoreError::Schema(format!("line {}: {line:?}", lineno + 1));
            let column = match parts.as_slice() {
                [name, "continuous"] => Column::continuous(*name),
                [name, "categorical", levels] => Column::categorical(*name, levels.split('|')),
                _ => return Err(bad()),
            };
            columns.push(column);
        }
        Self::new(columns)
    }

    /// Stable 64-bit FNV-1a digest of the sidecar form, as hex.
    pub fn fingerprint(&self) -> String {
        let mut h = fnv::FnvHasher::default();
        h.write(self.to_sidecar().as_bytes());
        format!("{:016x}", h.finish())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Value {
    /// Index into the column's level list.
    Level(usize),
    Real(f64),
}

impl Value {
    pub fn as_real(self) -> Option<f64> {
        match self {
            Value::Real(x) => Some(x),
            Value::Level(_) => None,
        }
    }

    pub fn as_level(self) -> Option<usize> {
        match self {
            Value::Level(l) => Some(l),
            Value::Real(_) => None,
        }
    }
}

/// A record over a fixed schema holding any subset of its attributes.
///
/// Entries keep the order they were given in; the encoder treats them as a
/// set, so order only matters for reporting.
#[derive(Debug, Clone)]
pub struct TabularSample {
    schema: Arc<AttributeSchema>,
    entries: Vec<(usize, Value)>,
}

impl PartialEq for TabularSample {
    fn eq(&self, other: &Self) -> bool {
        (Arc::ptr_eq(&self.schema, &other.schema) || self.schema == other.schema)
            && self.entries == other.entries
    }
}

impl TabularSample {
    pub fn new(schema: Arc<AttributeSchema>, entries: Vec<(usize, Value)>) -> Result<Self> {
        let mut seen = vec![false; schema.len()];
        for &(col, value) in &entries {
            let column = schema
                .columns
                .get(col)
                .ok_or_else(|| CoreError::Sample(format!("column index {col} out of range")))?;
            if std::mem::replace(&mut seen[col], true) {
                return Err(CoreError::Sample(format!("column {} present twice", column.name)));
            }
            match (column.kind, value) {
                (ColumnKind::Continuous, Value::Real(x)) if x.is_finite() => {}
                (ColumnKind::Continuous, Value::Real(_)) => {
                    return Err(CoreError::Sample(format!("{} is not finite", column.name)))
                }
                (ColumnKind::Categorical, Value::Level(l)) if l < column.levels.len() => {}
                _ => {
                    return Err(CoreError::Sample(format!(
                        "value {value:?} invalid for {} column {}",
                        column.kind.as_str(),
                        column.name
                    )))
                }
            }
        }
        Ok(Self { schema, entries })
    }

    pub fn empty(schema: Arc<AttributeSchema>) -> Self {
        Self {
            schema,
            entries: Vec::new(),
        }
    }

    pub fn schema(&self) -> &Arc<AttributeSchema> {
        &self.schema
    }

    pub fn entries(&self) -> &[(usize, Value)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn present(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|&(c, _)| c)
    }

    pub fn get(&self, column: usize) -> Option<Value> {
        self.entries.iter().find(|&&(c, _)| c == column).map(|&(_, v)| v)
    }

    pub fn contains(&self, column: usize) -> bool {
        self.get(column).is_some()
    }

    /// Keeps the entries at the given positions (indices into `entries()`),
    /// preserving their relative order.
    pub fn keep_positions(&self, positions: &[usize]) -> Self {
        let mut positions = positions.to_vec();
        positions.sort_unstable();
        positions.dedup();
        Self {
            schema: Arc::clone(&self.schema),
            entries: positions.into_iter().map(|p| self.entries[p]).collect(),
        }
    }

    /// Keeps only the given columns, preserving entry order.
    pub fn restrict_to(&self, columns: &[usize]) -> Self {
        Self {
            schema: Arc::clone(&self.schema),
            entries: self
                .entries
                .iter()
                .copied()
                .filter(|(c, _)| columns.contains(c))
                .collect(),
        }
    }

    /// Same schema, replaced values; presence is left to the caller.
    pub(crate) fn with_entries(&self, entries: Vec<(usize, Value)>) -> Self {
        Self {
            schema: Arc::clone(&self.schema),
            entries,
        }
    }

    /// Every present attribute of `self` is present in `other` with the same value.
    pub fn is_subset_of(&self, other: &TabularSample) -> bool {
        self.entries.iter().all(|&(c, v)| other.get(c) == Some(v))
    }

    /// Entries reordered by the given permutation of positions.
    pub fn permuted(&self, order: &[usize]) -> Self {
        assert_eq!(order.len(), self.entries.len());
        Self {
            schema: Arc::clone(&self.schema),
            entries: order.iter().map(|&p| self.entries[p]).collect(),
        }
    }
}
