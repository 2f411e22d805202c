//! Pearson correlation matrix and thresholded correlation network.

use std::fmt::Write as _;
use std::io::Write;

use serde::Serialize;

use crate::dataset::{Column, Dataset};
use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.4;

#[derive(Debug)]
pub struct ZeroVariance;

/// Sample Pearson correlation of two equal-length vectors.
pub fn pearson(xa: &[f64], xb: &[f64]) -> std::result::Result<f64, ZeroVariance> {
    assert_eq!(xa.len(), xb.len(), "pearson: length mismatch");
    let n = xa.len() as f64;
    let ma = xa.iter().sum::<f64>() / n;
    let mb = xb.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (a, b) in xa.iter().zip(xb) {
        let (da, db) = (a - ma, b - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return Err(ZeroVariance);
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorrelationMatrix {
    pub labels: Vec<String>,
    /// Row-major, `labels.len()` squared.
    pub values: Vec<Vec<f64>>,
}

impl CorrelationMatrix {
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.values[a][b]
    }

    pub fn write_csv<W: Write>(&self, writer: W, delimiter: u8) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new()
            .delimiter(delimiter)
            .from_writer(writer);
        let mut header = vec![String::new()];
        header.extend(self.labels.iter().cloned());
        wtr.write_record(&header)?;
        for (label, row) in self.labels.iter().zip(&self.values) {
            let mut rec = vec![label.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorrelationEdge {
    pub a: String,
    pub b: String,
    pub r: f64,
}

impl CorrelationEdge {
    pub fn weight(&self) -> f64 {
        self.r.abs()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UndirectedGraph {
    pub nodes: Vec<String>,
    pub edges: Vec<CorrelationEdge>,
}

impl UndirectedGraph {
    /// Undirected DOT, edges labelled with `r` to two decimals.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("graph correlation {\n");
        for n in &self.nodes {
            let _ = writeln!(out, "  \"{n}\";");
        }
        for e in &self.edges {
            let _ = writeln!(
                out,
                "  \"{}\" -- \"{}\" [label=\"{:.2}\", penwidth={:.3}];",
                e.a,
                e.b,
                e.r,
                4.0 * e.weight()
            );
        }
        out.push_str("}\n");
        out
    }
}

/// Correlates every continuous column and every binary discrete column (coded 0/1);
/// discrete columns with more than two levels are left out. An edge joins two
/// columns when `|r|` is strictly above `threshold`.
pub fn correlation_network(
    d: &Dataset,
    threshold: f64,
) -> Result<(UndirectedGraph, CorrelationMatrix)> {
    if d.nrows() < 2 {
        return Err(Error::InsufficientData {
            node: "<all>".into(),
            message: "correlation needs at least two rows".into(),
        });
    }
    let mut labels = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for v in d.variables() {
        match &v.column {
            Column::Continuous(x) => {
                labels.push(v.name.clone());
                columns.push(x.clone());
            }
            Column::Discrete { levels, codes } if levels.len() == 2 => {
                labels.push(v.name.clone());
                columns.push(codes.iter().map(|&c| c as f64).collect());
            }
            Column::Discrete { .. } => {}
        }
    }
    let k = labels.len();
    let mut values = vec![vec![0.0; k]; k];
    for a in 0..k {
        values[a][a] = 1.0;
        for b in (a + 1)..k {
            let r = pearson(&columns[a], &columns[b]).map_err(|_| {
                let constant = if pearson(&columns[a], &columns[a]).is_err() {
                    a
                } else {
                    b
                };
                Error::ZeroVariance(labels[constant].clone())
            })?;
            values[a][b] = r;
            values[b][a] = r;
        }
    }
    if k == 1 && pearson(&columns[0], &columns[0]).is_err() {
        return Err(Error::ZeroVariance(labels[0].clone()));
    }
    let mut edges = Vec::new();
    for a in 0..k {
        for b in (a + 1)..k {
            if values[a][b].abs() > threshold {
                edges.push(CorrelationEdge {
                    a: labels[a].clone(),
                    b: labels[b].clone(),
                    r: values[a][b],
                });
            }
        }
    }
    Ok((
        UndirectedGraph {
            nodes: labels.clone(),
            edges,
        },
        CorrelationMatrix { labels, values },
    ))
}
