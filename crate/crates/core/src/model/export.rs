use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::local::config_codes;
use super::{ClgNetwork, DiscreteBlock, GaussianBlock, Local, LocalDiscrete, LocalGaussian, RegimeCoding};
use crate::dataset::VariableSpec;
use crate::error::{Error, Result};
use crate::graph::{Arc, ArcJson, Dag};

const INTERCEPT: &str = "(intercept)";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianConfigJson {
    pub parents: BTreeMap<String, String>,
    pub intercept: f64,
    pub coefficients: BTreeMap<String, f64>,
    pub sd: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unbiased_sd: Option<f64>,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(default)]
    pub inherited: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteConfigJson {
    pub parents: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probabilities: Option<BTreeMap<String, f64>>,
    /// state -> term -> weight, for logit blocks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logit: Option<BTreeMap<String, BTreeMap<String, f64>>>,
    pub n: usize,
    #[serde(default)]
    pub inherited: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LocalJson {
    Gaussian {
        node: String,
        discrete_parents: Vec<String>,
        continuous_parents: Vec<String>,
        coding: RegimeCoding,
        configs: Vec<GaussianConfigJson>,
    },
    Discrete {
        node: String,
        states: Vec<String>,
        discrete_parents: Vec<String>,
        continuous_parents: Vec<String>,
        configs: Vec<DiscreteConfigJson>,
    },
}

/// Serialized [`ClgNetwork`]. Floats round-trip exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelJson {
    pub variables: Vec<VariableSpec>,
    pub arcs: Vec<ArcJson>,
    pub fitted_n: usize,
    pub locals: Vec<LocalJson>,
}

fn config_labels(m: &ClgNetwork, node: usize, config: usize) -> BTreeMap<String, String> {
    let plan = m.plan(node);
    config_codes(config, &plan.radices)
        .into_iter()
        .zip(&plan.discrete)
        .map(|(code, &p)| (m.nodes()[p].clone(), m.levels(p).unwrap()[code].clone()))
        .collect()
}

impl ModelJson {
    pub fn from_network(m: &ClgNetwork) -> Self {
        let locals = m
            .locals()
            .iter()
            .enumerate()
            .map(|(i, local)| match local {
                Local::Gaussian(g) => LocalJson::Gaussian {
                    node: g.node.clone(),
                    discrete_parents: g.discrete_parents.clone(),
                    continuous_parents: g.continuous_parents.clone(),
                    coding: g.coding,
                    configs: g
                        .blocks
                        .iter()
                        .enumerate()
                        .map(|(c, b)| GaussianConfigJson {
                            parents: config_labels(m, i, c),
                            intercept: b.intercept,
                            coefficients: g
                                .continuous_parents
                                .iter()
                                .cloned()
                                .zip(b.coefficients.iter().copied())
                                .collect(),
                            sd: b.sd,
                            unbiased_sd: b.unbiased_sd,
                            n: b.n,
                            tolerance: b.tolerance,
                            inherited: b.inherited,
                        })
                        .collect(),
                },
                Local::Discrete(d) => LocalJson::Discrete {
                    node: d.node.clone(),
                    states: d.states.clone(),
                    discrete_parents: d.discrete_parents.clone(),
                    continuous_parents: d.continuous_parents.clone(),
                    configs: d
                        .blocks
                        .iter()
                        .enumerate()
                        .map(|(c, b)| {
                            let (probabilities, logit) = match b {
                                DiscreteBlock::Table { probabilities, .. } => (
                                    Some(d.states.iter().cloned().zip(probabilities.iter().copied()).collect()),
                                    None,
                                ),
                                DiscreteBlock::Softmax { weights, .. } => (
                                    None,
                                    Some(
                                        d.states[1..]
                                            .iter()
                                            .zip(weights)
                                            .map(|(s, w)| {
                                                let terms = std::iter::once(INTERCEPT.to_string())
                                                    .chain(d.continuous_parents.iter().cloned())
                                                    .zip(w.iter().copied())
                                                    .collect();
                                                (s.clone(), terms)
                                            })
                                            .collect(),
                                    ),
                                ),
                            };
                            DiscreteConfigJson {
                                parents: config_labels(m, i, c),
                                probabilities,
                                logit,
                                n: b.n(),
                                inherited: b.is_inherited(),
                            }
                        })
                        .collect(),
                },
            })
            .collect();
        ModelJson {
            variables: m.variables().to_vec(),
            arcs: m.dag().to_json(None).arcs,
            fitted_n: m.fitted_n(),
            locals,
        }
    }

    pub fn into_network(self) -> Result<ClgNetwork> {
        let nodes: Vec<String> = self.variables.iter().map(|v| v.name.clone()).collect();
        let dag = Dag::new(nodes, self.arcs.iter().map(|a| Arc::new(&a.from, &a.to)))?;
        let missing = |what: &str, node: &str| {
            Error::InvalidModel(format!("missing {what} in local of `{node}`"))
        };
        let locals = self
            .locals
            .into_iter()
            .map(|l| match l {
                LocalJson::Gaussian {
                    node,
                    discrete_parents,
                    continuous_parents,
                    coding,
                    configs,
                } => {
                    let blocks = configs
                        .into_iter()
                        .map(|c| {
                            let coefficients = continuous_parents
                                .iter()
                                .map(|p| c.coefficients.get(p).copied().ok_or_else(|| missing(p, &node)))
                                .collect::<Result<_>>()?;
                            Ok(GaussianBlock {
                                intercept: c.intercept,
                                coefficients,
                                sd: c.sd,
                                unbiased_sd: c.unbiased_sd,
                                n: c.n,
                                tolerance: c.tolerance,
                                inherited: c.inherited,
                            })
                        })
                        .collect::<Result<_>>()?;
                    Ok(Local::Gaussian(LocalGaussian {
                        node,
                        discrete_parents,
                        continuous_parents,
                        coding,
                        blocks,
                    }))
                }
                LocalJson::Discrete {
                    node,
                    states,
                    discrete_parents,
                    continuous_parents,
                    configs,
                } => {
                    let blocks = configs
                        .into_iter()
                        .map(|c| match (c.probabilities, c.logit) {
                            (Some(p), None) => Ok(DiscreteBlock::Table {
                                probabilities: states
                                    .iter()
                                    .map(|s| p.get(s).copied().ok_or_else(|| missing(s, &node)))
                                    .collect::<Result<_>>()?,
                                n: c.n,
                                inherited: c.inherited,
                            }),
                            (None, Some(w)) => Ok(DiscreteBlock::Softmax {
                                weights: states
                                    .iter()
                                    .skip(1)
                                    .map(|s| {
                                        let terms = w.get(s).ok_or_else(|| missing(s, &node))?;
                                        std::iter::once(INTERCEPT)
                                            .chain(continuous_parents.iter().map(String::as_str))
                                            .map(|t| terms.get(t).copied().ok_or_else(|| missing(t, &node)))
                                            .collect::<Result<Vec<_>>>()
                                    })
                                    .collect::<Result<_>>()?,
                                n: c.n,
                                inherited: c.inherited,
                            }),
                            _ => Err(Error::InvalidModel(format!(
                                "config of `{node}` needs exactly one of probabilities/logit"
                            ))),
                        })
                        .collect::<Result<_>>()?;
                    Ok(Local::Discrete(LocalDiscrete {
                        node,
                        states,
                        discrete_parents,
                        continuous_parents,
                        blocks,
                    }))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        ClgNetwork::new(dag, self.variables, locals, self.fitted_n)
    }
}

impl ClgNetwork {
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&ModelJson::from_network(self))
            .expect("model serialization cannot fail")
    }

    pub fn from_json_str(s: &str) -> Result<ClgNetwork> {
        serde_json::from_str::<ModelJson>(s)?.into_network()
    }
}

/// One line of a fitted-regression table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegressionRow {
    pub node: String,
    pub configuration: String,
    pub term: String,
    pub value: f64,
}

/// Flat listing of every continuous node's coefficients, ML sd, unbiased sd and n.
pub fn regression_table(m: &ClgNetwork) -> Vec<RegressionRow> {
    let mut rows = Vec::new();
    for (i, local) in m.locals().iter().enumerate() {
        let Local::Gaussian(g) = local else { continue };
        for (c, b) in g.blocks.iter().enumerate() {
            let labels = config_labels(m, i, c);
            let configuration = if labels.is_empty() {
                "all".to_string()
            } else {
                labels
                    .iter()
                    .map(|(k, v)| format!("{k}={v}"))
                    .collect::<Vec<_>>()
                    .join(";")
            };
            let mut push = |term: &str, value: f64| {
                rows.push(RegressionRow {
                    node: g.node.clone(),
                    configuration: configuration.clone(),
                    term: term.to_string(),
                    value,
                })
            };
            push(INTERCEPT, b.intercept);
            for (p, v) in g.continuous_parents.iter().zip(&b.coefficients) {
                push(p, *v);
            }
            push("sd", b.sd);
            if let Some(u) = b.unbiased_sd {
                push("sd_unbiased", u);
            }
            push("n", b.n as f64);
        }
    }
    rows
}

pub fn write_regression_table<W: Write>(m: &ClgNetwork, writer: W, delimiter: u8) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new()
        .delimiter(delimiter)
        .from_writer(writer);
    for row in regression_table(m) {
        wtr.serialize(row)?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Dataset, Variable};
    use crate::model::{fit_parameters, FitOptions};

    #[test]
    fn json_round_trip_is_lossless() {
        let g: Vec<usize> = (0..30).map(|i| i % 2).collect();
        let x: Vec<f64> = (0..30).map(|i| (f64::from(i) * 0.37).sin()).collect();
        let y: Vec<f64> = x
            .iter()
            .zip(&g)
            .enumerate()
            .map(|(i, (v, &gi))| 0.3 + 1.7 * v - gi as f64 + 0.1 * (f64::from(i as u32) * 1.3).cos())
            .collect();
        let h: Vec<usize> = (0..30).map(|i| usize::from(x[i] > 0.2)).collect();
        let d = Dataset::new(vec![
            Variable::discrete("g", vec!["a".into(), "b".into()], g),
            Variable::continuous("x", x),
            Variable::continuous("y", y),
            Variable::discrete("h", vec!["lo".into(), "hi".into()], h),
        ])
        .unwrap();
        let dag = Dag::new(
            d.names(),
            [Arc::new("g", "y"), Arc::new("x", "y"), Arc::new("g", "h"), Arc::new("x", "h")],
        )
        .unwrap();
        let m = fit_parameters(&dag, &d, &FitOptions::default()).unwrap();
        let text = m.to_json_string();
        let back = ClgNetwork::from_json_str(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json_string(), text);

        let table = regression_table(&m);
        assert!(table.iter().any(|r| r.node == "y" && r.term == "x" && r.configuration == "g=b"));
    }
}
