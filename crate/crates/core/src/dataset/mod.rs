//! Tabular data: the raw two-visit records and the difference table the
//! networks are learned from.

mod atlas;
mod longitudinal;

pub use atlas::{adjust_with_atlas, ReferenceAtlas};
pub use longitudinal::{
    compute_deltas, load_table, write_table, Growth, LongitudinalTable, Subject, TableSchema,
    Treatment, TreatmentCoding,
};

use std::collections::HashSet;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Name of the elapsed-time column in a difference table.
pub const INTERVAL: &str = "dT";
pub const TREATMENT: &str = "Treatment";
pub const GROWTH: &str = "Growth";

/// Prefix turning a feature name into the name of its difference column.
pub const DELTA_PREFIX: &str = "d";

#[derive(Clone, Debug, PartialEq)]
pub enum Column {
    Continuous(Vec<f64>),
    /// Level codes index into `levels`.
    Discrete { levels: Vec<String>, codes: Vec<usize> },
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Continuous(v) => v.len(),
            Column::Discrete { codes, .. } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn select(&self, rows: &[usize]) -> Column {
        match self {
            Column::Continuous(v) => Column::Continuous(rows.iter().map(|&r| v[r]).collect()),
            Column::Discrete { levels, codes } => Column::Discrete {
                levels: levels.clone(),
                codes: rows.iter().map(|&r| codes[r]).collect(),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Variable {
    pub name: String,
    pub column: Column,
}

impl Variable {
    pub fn continuous(name: impl Into<String>, values: Vec<f64>) -> Self {
        Variable {
            name: name.into(),
            column: Column::Continuous(values),
        }
    }

    pub fn discrete(name: impl Into<String>, levels: Vec<String>, codes: Vec<usize>) -> Self {
        Variable {
            name: name.into(),
            column: Column::Discrete { levels, codes },
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self.column, Column::Discrete { .. })
    }
}

/// Kind and level set of one variable, without its values.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub name: String,
    /// `None` for continuous variables.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<String>>,
}

/// A complete (no missing values) table of named continuous and discrete columns.
///
/// Rows of a [`Dataset`] are exchangeable observations; the column set is fixed at
/// construction. Discrete columns keep their full level set even when a row subset
/// no longer observes some level, so bootstrap samples and folds share one schema.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    variables: Vec<Variable>,
    nrows: usize,
}

/// The modelling table of difference variables.
pub type DeltaDataset = Dataset;

impl Dataset {
    pub fn new(variables: Vec<Variable>) -> Result<Self> {
        let nrows = variables.first().map_or(0, |v| v.column.len());
        let mut seen = HashSet::new();
        for var in &variables {
            if !seen.insert(var.name.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate column `{}`",
                    var.name
                )));
            }
            if var.column.len() != nrows {
                return Err(Error::InvalidArgument(format!(
                    "column `{}` has {} rows, expected {nrows}",
                    var.name,
                    var.column.len()
                )));
            }
            match &var.column {
                Column::Continuous(values) => {
                    if let Some(row) = values.iter().position(|v| !v.is_finite()) {
                        return Err(Error::InvalidRow {
                            row: row + 1,
                            message: format!("non-finite value in `{}`", var.name),
                        });
                    }
                }
                Column::Discrete { levels, codes } => {
                    if levels.is_empty() {
                        return Err(Error::InvalidArgument(format!(
                            "discrete column `{}` has no levels",
                            var.name
                        )));
                    }
                    if let Some(row) = codes.iter().position(|&c| c >= levels.len()) {
                        return Err(Error::InvalidRow {
                            row: row + 1,
                            message: format!("level code out of range in `{}`", var.name),
                        });
                    }
                }
            }
        }
        Ok(Dataset { variables, nrows })
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.variables.len()
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn variable(&self, index: usize) -> &Variable {
        &self.variables[index]
    }

    pub fn names(&self) -> Vec<String> {
        self.variables.iter().map(|v| v.name.clone()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    pub fn require(&self, name: &str) -> Result<usize> {
        self.index_of(name)
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))
    }

    pub fn is_discrete(&self, index: usize) -> bool {
        self.variables[index].is_discrete()
    }

    pub fn continuous(&self, index: usize) -> Option<&[f64]> {
        match &self.variables[index].column {
            Column::Continuous(v) => Some(v),
            Column::Discrete { .. } => None,
        }
    }

    pub fn codes(&self, index: usize) -> Option<&[usize]> {
        match &self.variables[index].column {
            Column::Discrete { codes, .. } => Some(codes),
            Column::Continuous(_) => None,
        }
    }

    pub fn levels(&self, index: usize) -> Option<&[String]> {
        match &self.variables[index].column {
            Column::Discrete { levels, .. } => Some(levels),
            Column::Continuous(_) => None,
        }
    }

    pub fn specs(&self) -> Vec<VariableSpec> {
        self.variables
            .iter()
            .map(|v| VariableSpec {
                name: v.name.clone(),
                levels: match &v.column {
                    Column::Discrete { levels, .. } => Some(levels.clone()),
                    Column::Continuous(_) => None,
                },
            })
            .collect()
    }

    /// Value of cell (`row`, `col`); discrete cells yield their level code as `f64`.
    pub fn value(&self, row: usize, col: usize) -> f64 {
        match &self.variables[col].column {
            Column::Continuous(v) => v[row],
            Column::Discrete { codes, .. } => codes[row] as f64,
        }
    }

    /// One row in the encoding of [`Dataset::value`].
    pub fn row(&self, row: usize) -> Vec<f64> {
        (0..self.ncols()).map(|c| self.value(row, c)).collect()
    }

    /// Rows in the given order; repeated indices are allowed (bootstrap).
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            variables: self
                .variables
                .iter()
                .map(|v| Variable {
                    name: v.name.clone(),
                    column: v.column.select(rows),
                })
                .collect(),
            nrows: rows.len(),
        }
    }

    pub fn without(&self, name: &str) -> Result<Dataset> {
        let idx = self.require(name)?;
        let mut variables = self.variables.clone();
        variables.remove(idx);
        Ok(Dataset {
            variables,
            nrows: self.nrows,
        })
    }

    /// Keeps only the named columns, in the given order.
    pub fn project(&self, names: &[String]) -> Result<Dataset> {
        let variables = names
            .iter()
            .map(|n| self.require(n).map(|i| self.variables[i].clone()))
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(variables)
    }

    /// Builds a dataset from rows encoded as in [`Dataset::value`].
    pub fn from_rows(specs: &[VariableSpec], rows: &[Vec<f64>]) -> Result<Dataset> {
        let variables = specs
            .iter()
            .enumerate()
            .map(|(c, spec)| match &spec.levels {
                None => Variable::continuous(&spec.name, rows.iter().map(|r| r[c]).collect()),
                Some(levels) => Variable::discrete(
                    &spec.name,
                    levels.clone(),
                    rows.iter().map(|r| r[c] as usize).collect(),
                ),
            })
            .collect();
        Dataset::new(variables)
    }

    /// Reads a delimited table with a header row.
    ///
    /// With `schema`, column kinds and level orders come from the schema (extra columns
    /// are ignored). Without one, a column is continuous when every cell parses as a
    /// number and discrete otherwise, with levels sorted lexicographically.
    pub fn read_csv<R: Read>(
        reader: R,
        delimiter: u8,
        schema: Option<&[VariableSpec]>,
    ) -> Result<Dataset> {
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(delimiter)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut cells: Vec<Vec<String>> = vec![Vec::new(); header.len()];
        for (i, record) in rdr.records().enumerate() {
            let record = record?;
            if record.len() != header.len() {
                return Err(Error::InvalidRow {
                    row: i + 1,
                    message: format!("expected {} fields, found {}", header.len(), record.len()),
                });
            }
            for (c, field) in record.iter().enumerate() {
                if field.is_empty() {
                    return Err(Error::InvalidRow {
                        row: i + 1,
                        message: format!("missing value in `{}`", header[c]),
                    });
                }
                cells[c].push(field.to_string());
            }
        }

        let specs: Vec<VariableSpec> = match schema {
            Some(s) => s.to_vec(),
            None => header
                .iter()
                .zip(&cells)
                .map(|(name, col)| {
                    let numeric = col.iter().all(|f| f.parse::<f64>().is_ok());
                    VariableSpec {
                        name: name.clone(),
                        levels: if numeric && !col.is_empty() {
                            None
                        } else {
                            let mut levels: Vec<String> = col.clone();
                            levels.sort();
                            levels.dedup();
                            Some(levels)
                        },
                    }
                })
                .collect(),
        };

        let mut variables = Vec::with_capacity(specs.len());
        for spec in &specs {
            let c = header
                .iter()
                .position(|h| *h == spec.name)
                .ok_or_else(|| Error::MissingColumn(spec.name.clone()))?;
            let col = &cells[c];
            variables.push(match &spec.levels {
                None => {
                    let mut values = Vec::with_capacity(col.len());
                    for (i, f) in col.iter().enumerate() {
                        let v = f.parse::<f64>().map_err(|_| Error::InvalidRow {
                            row: i + 1,
                            message: format!("non-numeric value `{f}` in `{}`", spec.name),
                        })?;
                        values.push(v);
                    }
                    Variable::continuous(&spec.name, values)
                }
                Some(levels) => {
                    let mut codes = Vec::with_capacity(col.len());
                    for (i, f) in col.iter().enumerate() {
                        let code = levels.iter().position(|l| l == f).ok_or_else(|| {
                            Error::UnknownLevel {
                                row: i + 1,
                                column: spec.name.clone(),
                                level: f.clone(),
                            }
                        })?;
                        codes.push(code);
                    }
                    Variable::discrete(&spec.name, levels.clone(), codes)
                }
            });
        }
        Dataset::new(variables)
    }

    pub fn write_csv<W: Write>(&self, writer: W, delimiter: u8) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new()
            .delimiter(delimiter)
            .from_writer(writer);
        wtr.write_record(self.variables.iter().map(|v| v.name.as_str()))?;
        for r in 0..self.nrows {
            let record: Vec<String> = self
                .variables
                .iter()
                .map(|v| match &v.column {
                    Column::Continuous(x) => x[r].to_string(),
                    Column::Discrete { levels, codes } => levels[codes[r]].clone(),
                })
                .collect();
            wtr.write_record(&record)?;
        }
        wtr.flush()?;
        Ok(())
    }
}
