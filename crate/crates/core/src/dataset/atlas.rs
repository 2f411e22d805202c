use std::collections::BTreeMap;
use std::io::Read;

use serde::Deserialize;

use super::{LongitudinalTable, Subject};
use crate::error::{Error, Result};

/// Population reference values per feature and age.
///
/// Between tabulated ages the reference is interpolated linearly; outside the
/// tabulated range it is clamped to the nearest endpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceAtlas {
    /// feature -> (age, value), ages strictly increasing.
    table: BTreeMap<String, Vec<(f64, f64)>>,
}

#[derive(Deserialize)]
struct AtlasRecord {
    feature: String,
    age: f64,
    value: f64,
}

impl ReferenceAtlas {
    pub fn new(entries: impl IntoIterator<Item = (String, f64, f64)>) -> Result<Self> {
        let mut table: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
        for (feature, age, value) in entries {
            if !(age.is_finite() && value.is_finite()) {
                return Err(Error::InvalidAtlas(format!(
                    "non-finite entry for `{feature}`"
                )));
            }
            table.entry(feature).or_default().push((age, value));
        }
        for (feature, rows) in table.iter_mut() {
            rows.sort_by(|a, b| a.0.total_cmp(&b.0));
            if rows.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(Error::InvalidAtlas(format!(
                    "duplicate age for `{feature}`"
                )));
            }
        }
        Ok(ReferenceAtlas { table })
    }

    /// Reads `feature,age,value` rows.
    pub fn read_csv<R: Read>(source: R, delimiter: u8) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(delimiter)
            .trim(csv::Trim::All)
            .from_reader(source);
        let mut entries = Vec::new();
        for (i, rec) in rdr.deserialize::<AtlasRecord>().enumerate() {
            let rec = rec.map_err(|e| Error::InvalidRow {
                row: i + 1,
                message: e.to_string(),
            })?;
            entries.push((rec.feature, rec.age, rec.value));
        }
        Self::new(entries)
    }

    pub fn covers(&self, feature: &str) -> bool {
        self.table.contains_key(feature)
    }

    pub fn reference(&self, feature: &str, age: f64) -> Result<f64> {
        let rows = self
            .table
            .get(feature)
            .ok_or_else(|| Error::AtlasCoverage(feature.to_string()))?;
        let (first, last) = (rows[0], rows[rows.len() - 1]);
        if age <= first.0 {
            return Ok(first.1);
        }
        if age >= last.0 {
            return Ok(last.1);
        }
        let hi = rows.partition_point(|&(a, _)| a < age);
        let (a1, v1) = rows[hi];
        if a1 == age {
            return Ok(v1);
        }
        let (a0, v0) = rows[hi - 1];
        Ok(v0 + (v1 - v0) * (age - a0) / (a1 - a0))
    }
}

/// Replaces every measurement with its deviation from the age-matched reference.
pub fn adjust_with_atlas(
    table: &LongitudinalTable,
    atlas: &ReferenceAtlas,
) -> Result<LongitudinalTable> {
    if let Some(f) = table.features().iter().find(|f| !atlas.covers(f)) {
        return Err(Error::AtlasCoverage(f.clone()));
    }
    let subjects = table
        .subjects()
        .iter()
        .map(|s| {
            let adjust = |values: &[f64], age: f64| -> Result<Vec<f64>> {
                table
                    .features()
                    .iter()
                    .zip(values)
                    .map(|(f, v)| Ok(v - atlas.reference(f, age)?))
                    .collect()
            };
            Ok(Subject {
                m1: adjust(&s.m1, s.t1)?,
                m2: adjust(&s.m2, s.t2)?,
                ..s.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    LongitudinalTable::new(table.features().to_vec(), subjects)
}
