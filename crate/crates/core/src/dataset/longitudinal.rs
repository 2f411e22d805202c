use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Dataset, Variable, DELTA_PREFIX, GROWTH, INTERVAL, TREATMENT};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Treatment {
    /// Untreated.
    NT,
    /// Treated, bad outcome.
    TB,
    /// Treated, good outcome.
    TG,
}

impl Treatment {
    pub fn is_treated(self) -> bool {
        !matches!(self, Treatment::NT)
    }
}

impl FromStr for Treatment {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s.to_ascii_uppercase().as_str() {
            "NT" => Ok(Treatment::NT),
            "TB" => Ok(Treatment::TB),
            "TG" => Ok(Treatment::TG),
            _ => Err(()),
        }
    }
}

impl std::fmt::Display for Treatment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Growth {
    Good,
    Bad,
}

impl FromStr for Growth {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s.to_ascii_lowercase().as_str() {
            "good" => Ok(Growth::Good),
            "bad" => Ok(Growth::Bad),
            _ => Err(()),
        }
    }
}

impl std::fmt::Display for Growth {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

/// How the raw NT/TB/TG labels enter the difference table.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TreatmentCoding {
    /// `untreated` vs `treated` (TB and TG merged).
    #[default]
    Binary,
    ThreeLevel,
}

impl TreatmentCoding {
    pub fn levels(self) -> Vec<String> {
        match self {
            TreatmentCoding::Binary => vec!["untreated".into(), "treated".into()],
            TreatmentCoding::ThreeLevel => vec!["NT".into(), "TB".into(), "TG".into()],
        }
    }

    fn code(self, t: Treatment) -> usize {
        match self {
            TreatmentCoding::Binary => usize::from(t.is_treated()),
            TreatmentCoding::ThreeLevel => t as usize,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Subject {
    pub id: String,
    /// Age at first visit, years.
    pub t1: f64,
    /// Age at second visit, years.
    pub t2: f64,
    /// Measurements at the first visit, aligned with [`LongitudinalTable::features`].
    pub m1: Vec<f64>,
    pub m2: Vec<f64>,
    pub treatment: Treatment,
    pub growth: Growth,
}

/// Paired measurements at two visits per subject.
#[derive(Clone, Debug, PartialEq)]
pub struct LongitudinalTable {
    features: Vec<String>,
    subjects: Vec<Subject>,
}

impl LongitudinalTable {
    pub fn new(features: Vec<String>, subjects: Vec<Subject>) -> Result<Self> {
        for (i, s) in subjects.iter().enumerate() {
            let row = i + 1;
            if s.m1.len() != features.len() || s.m2.len() != features.len() {
                return Err(Error::InvalidRow {
                    row,
                    message: "measurement count does not match feature list".into(),
                });
            }
            if !(s.t1.is_finite() && s.t2.is_finite()) {
                return Err(Error::InvalidRow {
                    row,
                    message: "non-finite age".into(),
                });
            }
            if s.t2 <= s.t1 {
                return Err(Error::NonPositiveInterval(row));
            }
            if s.m1.iter().chain(&s.m2).any(|v| !v.is_finite()) {
                return Err(Error::InvalidRow {
                    row,
                    message: "non-finite measurement".into(),
                });
            }
        }
        Ok(LongitudinalTable { features, subjects })
    }

    pub fn features(&self) -> &[String] {
        &self.features
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }
}

/// Column mapping for [`load_table`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableSchema {
    pub delimiter: u8,
    pub id: String,
    pub t1: String,
    pub t2: String,
    pub treatment: String,
    pub growth: String,
    pub first_suffix: String,
    pub second_suffix: String,
    /// Features to read; `None` takes every `<name><first_suffix>` column that has a
    /// matching `<name><second_suffix>` column, in header order.
    pub features: Option<Vec<String>>,
}

impl Default for TableSchema {
    fn default() -> Self {
        TableSchema {
            delimiter: b',',
            id: "id".into(),
            t1: "t1".into(),
            t2: "t2".into(),
            treatment: "treatment".into(),
            growth: "growth".into(),
            first_suffix: "_t1".into(),
            second_suffix: "_t2".into(),
            features: None,
        }
    }
}

/// Reads and validates a longitudinal table. Any malformed row rejects the whole input.
pub fn load_table<R: Read>(source: R, schema: &TableSchema) -> Result<LongitudinalTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .trim(csv::Trim::All)
        .from_reader(source);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };

    let features: Vec<String> = match &schema.features {
        Some(f) => f.clone(),
        None => header
            .iter()
            .filter_map(|h| h.strip_suffix(schema.first_suffix.as_str()))
            .filter(|f| {
                let second = format!("{f}{}", schema.second_suffix);
                header.contains(&second)
            })
            .map(str::to_string)
            .collect(),
    };
    if features.is_empty() {
        return Err(Error::MissingColumn(format!(
            "<feature>{}",
            schema.first_suffix
        )));
    }
    let first_cols = features
        .iter()
        .map(|f| col(&format!("{f}{}", schema.first_suffix)))
        .collect::<Result<Vec<_>>>()?;
    let second_cols = features
        .iter()
        .map(|f| col(&format!("{f}{}", schema.second_suffix)))
        .collect::<Result<Vec<_>>>()?;
    let (id_c, t1_c, t2_c) = (col(&schema.id)?, col(&schema.t1)?, col(&schema.t2)?);
    let (tr_c, gr_c) = (col(&schema.treatment)?, col(&schema.growth)?);

    let mut subjects = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let field = |c: usize| -> Result<&str> {
            match record.get(c) {
                Some(f) if !f.is_empty() => Ok(f),
                _ => Err(Error::InvalidRow {
                    row,
                    message: format!("missing value in `{}`", header[c]),
                }),
            }
        };
        let number = |c: usize| -> Result<f64> {
            let f = field(c)?;
            match f.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::InvalidRow {
                    row,
                    message: format!("non-numeric value `{f}` in `{}`", header[c]),
                }),
            }
        };
        let t1 = number(t1_c)?;
        let t2 = number(t2_c)?;
        if t2 <= t1 {
            return Err(Error::NonPositiveInterval(row));
        }
        let treatment = field(tr_c)?;
        let treatment = treatment.parse().map_err(|_| Error::UnknownLevel {
            row,
            column: schema.treatment.clone(),
            level: treatment.to_string(),
        })?;
        let growth = field(gr_c)?;
        let growth = growth.parse().map_err(|_| Error::UnknownLevel {
            row,
            column: schema.growth.clone(),
            level: growth.to_string(),
        })?;
        subjects.push(Subject {
            id: field(id_c)?.to_string(),
            t1,
            t2,
            m1: first_cols.iter().map(|&c| number(c)).collect::<Result<_>>()?,
            m2: second_cols.iter().map(|&c| number(c)).collect::<Result<_>>()?,
            treatment,
            growth,
        });
    }
    LongitudinalTable::new(features, subjects)
}

/// Writes a table in the layout [`load_table`] reads with the default schema.
pub fn write_table<W: Write>(table: &LongitudinalTable, writer: W, delimiter: u8) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new()
        .delimiter(delimiter)
        .from_writer(writer);
    let mut header = vec!["id".to_string(), "t1".into(), "t2".into()];
    for f in &table.features {
        header.push(format!("{f}_t1"));
        header.push(format!("{f}_t2"));
    }
    header.push("treatment".into());
    header.push("growth".into());
    wtr.write_record(&header)?;
    for s in &table.subjects {
        let mut rec = vec![s.id.clone(), s.t1.to_string(), s.t2.to_string()];
        for (a, b) in s.m1.iter().zip(&s.m2) {
            rec.push(a.to_string());
            rec.push(b.to_string());
        }
        rec.push(s.treatment.to_string());
        rec.push(s.growth.to_string());
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Difference table: one `d<feature>` column per feature, then `dT`, `Treatment`, `Growth`.
pub fn compute_deltas(table: &LongitudinalTable, coding: TreatmentCoding) -> Dataset {
    let subjects = &table.subjects;
    let mut variables: Vec<Variable> = table
        .features
        .iter()
        .enumerate()
        .map(|(f, name)| {
            Variable::continuous(
                format!("{DELTA_PREFIX}{name}"),
                subjects.iter().map(|s| s.m2[f] - s.m1[f]).collect(),
            )
        })
        .collect();
    variables.push(Variable::continuous(
        INTERVAL,
        subjects.iter().map(|s| s.t2 - s.t1).collect(),
    ));
    variables.push(Variable::discrete(
        TREATMENT,
        coding.levels(),
        subjects.iter().map(|s| coding.code(s.treatment)).collect(),
    ));
    variables.push(Variable::discrete(
        GROWTH,
        vec!["Good".into(), "Bad".into()],
        subjects
            .iter()
            .map(|s| match s.growth {
                Growth::Good => 0,
                Growth::Bad => 1,
            })
            .collect(),
    ));
    Dataset::new(variables).expect("validated table yields a consistent dataset")
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "id,t1,t2,ANB_t1,ANB_t2,IMPA_t1,IMPA_t2,treatment,growth\n";

    #[test]
    fn single_valid_row() {
        let text = format!("{HEADER}p1,8,14,4,2,90,91,TG,Good\n");
        let t = load_table(text.as_bytes(), &TableSchema::default()).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.features(), ["ANB", "IMPA"]);
    }

    #[test]
    fn equal_ages_rejected_with_row() {
        let text = format!("{HEADER}p1,8,14,4,2,90,91,TG,Good\np2,9,9,4,2,90,91,NT,Bad\n");
        let err = load_table(text.as_bytes(), &TableSchema::default()).unwrap_err();
        assert_eq!(err.to_string(), "non-positive ΔT at row 2");
    }

    #[test]
    fn malformed_inputs_are_diagnosed() {
        let bad_number = format!("{HEADER}p1,8,14,4,x,90,91,TG,Good\n");
        assert!(matches!(
            load_table(bad_number.as_bytes(), &TableSchema::default()),
            Err(Error::InvalidRow { row: 1, .. })
        ));
        let bad_level = format!("{HEADER}p1,8,14,4,2,90,91,TX,Good\n");
        assert!(matches!(
            load_table(bad_level.as_bytes(), &TableSchema::default()),
            Err(Error::UnknownLevel { row: 1, .. })
        ));
        let no_growth = "id,t1,t2,ANB_t1,ANB_t2,treatment\np1,8,14,4,2,NT\n";
        assert!(matches!(
            load_table(no_growth.as_bytes(), &TableSchema::default()),
            Err(Error::MissingColumn(c)) if c == "growth"
        ));
        let missing = format!("{HEADER}p1,8,14,4,,90,91,TG,Good\n");
        assert!(load_table(missing.as_bytes(), &TableSchema::default()).is_err());
    }

    #[test]
    fn deltas_are_direct_differences() {
        let text = format!("{HEADER}p1,8,14,4,2,90,90,TG,Good\n");
        let t = load_table(text.as_bytes(), &TableSchema::default()).unwrap();
        let d = compute_deltas(&t, TreatmentCoding::Binary);
        assert_eq!(d.names(), ["dANB", "dIMPA", "dT", "Treatment", "Growth"]);
        assert_eq!(d.value(0, 0), -2.0);
        assert_eq!(d.value(0, 1), 0.0);
        assert_eq!(d.value(0, 2), 6.0);
        let tr = d.index_of("Treatment").unwrap();
        assert_eq!(d.levels(tr).unwrap()[d.codes(tr).unwrap()[0]], "treated");

        let three = compute_deltas(&t, TreatmentCoding::ThreeLevel);
        assert_eq!(three.levels(tr).unwrap()[three.codes(tr).unwrap()[0]], "TG");
    }

    #[test]
    fn write_then_load_is_identity() {
        let text = format!("{HEADER}p1,8.25,14,4,2.5,90,91,TB,Bad\np2,7,12,1,0,88,87,NT,Good\n");
        let t = load_table(text.as_bytes(), &TableSchema::default()).unwrap();
        let mut buf = Vec::new();
        write_table(&t, &mut buf, b',').unwrap();
        let back = load_table(buf.as_slice(), &TableSchema::default()).unwrap();
        assert_eq!(back, t);
    }
}
