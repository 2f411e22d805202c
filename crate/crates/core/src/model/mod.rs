//! Conditional linear-Gaussian networks: parameter fitting, likelihood and BIC.
//!
//! Continuous nodes regress on their continuous parents with one parameter block per
//! configuration of their discrete parents. Discrete nodes carry a probability table
//! per discrete-parent configuration; a discrete node may only have continuous
//! parents through a whitelisted arc, in which case each configuration holds a
//! multinomial logit instead of a table.

mod export;
mod fit;
mod local;

pub use export::{
    regression_table, write_regression_table, DiscreteConfigJson, GaussianConfigJson, LocalJson,
    ModelJson, RegressionRow,
};
pub use fit::FitOptions;
pub use local::{
    DiscreteBlock, GaussianBlock, Local, LocalDiscrete, LocalGaussian, RegimeCoding,
};

pub(crate) use fit::fit_local;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::dataset::{Dataset, VariableSpec};
use crate::error::{Error, Result};
use crate::graph::{topological_indices, Dag};
use local::config_index;

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct NodePlan {
    pub discrete: Vec<usize>,
    pub continuous: Vec<usize>,
    pub radices: Vec<usize>,
}

/// A DAG with one fitted local distribution per node.
#[derive(Clone, Debug, PartialEq)]
pub struct ClgNetwork {
    dag: Dag,
    variables: Vec<VariableSpec>,
    locals: Vec<Local>,
    fitted_n: usize,
    plan: Vec<NodePlan>,
    order: Vec<usize>,
}

const PROBABILITY_TOL: f64 = 1e-9;

impl ClgNetwork {
    /// Assembles a network, checking that every local matches the DAG and the schema.
    pub fn new(
        dag: Dag,
        variables: Vec<VariableSpec>,
        locals: Vec<Local>,
        fitted_n: usize,
    ) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidModel(m));
        let nodes = dag.nodes();
        if variables.len() != nodes.len() || locals.len() != nodes.len() {
            return bad("variables and locals must align with the DAG nodes".into());
        }
        let index = |name: &str| nodes.iter().position(|n| n == name);
        let mut plan = Vec::with_capacity(nodes.len());
        for (i, name) in nodes.iter().enumerate() {
            let (var, local) = (&variables[i], &locals[i]);
            if var.name != *name || local.node() != name {
                return bad(format!("node `{name}` is out of order"));
            }
            let mut declared: Vec<&str> = local
                .discrete_parents()
                .iter()
                .chain(local.continuous_parents())
                .map(String::as_str)
                .collect();
            declared.sort_unstable();
            let mut actual = dag.parents(name);
            actual.sort_unstable();
            if declared != actual {
                return bad(format!("parents of `{name}` do not match the DAG"));
            }
            let mut np = NodePlan {
                discrete: Vec::new(),
                continuous: Vec::new(),
                radices: Vec::new(),
            };
            for p in local.discrete_parents() {
                let j = index(p).unwrap();
                match &variables[j].levels {
                    Some(levels) => np.radices.push(levels.len()),
                    None => return bad(format!("`{p}` is listed as a discrete parent of `{name}`")),
                }
                np.discrete.push(j);
            }
            for p in local.continuous_parents() {
                let j = index(p).unwrap();
                if variables[j].levels.is_some() {
                    return bad(format!("`{p}` is listed as a continuous parent of `{name}`"));
                }
                np.continuous.push(j);
            }
            let configs: usize = np.radices.iter().product();
            if local.config_count() != configs {
                return bad(format!("`{name}` needs {configs} parameter blocks"));
            }
            let p = np.continuous.len();
            match (local, &var.levels) {
                (Local::Gaussian(g), None) => {
                    for b in &g.blocks {
                        if b.coefficients.len() != p || !(b.sd >= 0.0) || !b.intercept.is_finite() {
                            return bad(format!("malformed regression block for `{name}`"));
                        }
                        if b.sd == 0.0 && b.tolerance.is_none() {
                            return bad(format!("zero sd without tolerance for `{name}`"));
                        }
                    }
                }
                (Local::Discrete(d), Some(levels)) => {
                    if d.states != *levels {
                        return bad(format!("states of `{name}` do not match its levels"));
                    }
                    for b in &d.blocks {
                        match b {
                            DiscreteBlock::Table { probabilities, .. } => {
                                if p > 0 || probabilities.len() != levels.len() {
                                    return bad(format!("malformed table for `{name}`"));
                                }
                                let total: f64 = probabilities.iter().sum();
                                if probabilities.iter().any(|&q| !(q >= 0.0))
                                    || (total - 1.0).abs() > PROBABILITY_TOL
                                {
                                    return bad(format!("probabilities of `{name}` must sum to 1"));
                                }
                            }
                            DiscreteBlock::Softmax { weights, .. } => {
                                if weights.len() + 1 != levels.len()
                                    || weights.iter().any(|w| w.len() != p + 1)
                                {
                                    return bad(format!("malformed logit block for `{name}`"));
                                }
                            }
                        }
                    }
                }
                _ => return bad(format!("local kind of `{name}` does not match its variable")),
            }
            plan.push(np);
        }
        let order = topological_indices(nodes.len(), &dag.index_pairs()).ok_or(Error::Cycle)?;
        Ok(ClgNetwork {
            dag,
            variables,
            locals,
            fitted_n,
            plan,
            order,
        })
    }

    pub fn dag(&self) -> &Dag {
        &self.dag
    }

    pub fn nodes(&self) -> &[String] {
        self.dag.nodes()
    }

    pub fn variables(&self) -> &[VariableSpec] {
        &self.variables
    }

    pub fn locals(&self) -> &[Local] {
        &self.locals
    }

    pub fn fitted_n(&self) -> usize {
        self.fitted_n
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.dag.index_of(name)
    }

    pub fn require(&self, name: &str) -> Result<usize> {
        self.node_index(name)
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))
    }

    pub fn local(&self, name: &str) -> Option<&Local> {
        self.node_index(name).map(|i| &self.locals[i])
    }

    pub fn is_discrete(&self, node: usize) -> bool {
        self.variables[node].levels.is_some()
    }

    pub fn levels(&self, node: usize) -> Option<&[String]> {
        self.variables[node].levels.as_deref()
    }

    /// Node indices in ancestral order.
    pub fn ancestral_order(&self) -> &[usize] {
        &self.order
    }

    pub(crate) fn plan(&self, node: usize) -> &NodePlan {
        &self.plan[node]
    }

    /// Children of `node` as indices.
    pub(crate) fn children(&self, node: usize) -> Vec<usize> {
        (0..self.plan.len())
            .filter(|&c| {
                self.plan[c].discrete.contains(&node) || self.plan[c].continuous.contains(&node)
            })
            .collect()
    }

    #[inline]
    pub(crate) fn config(&self, node: usize, row: &[f64]) -> usize {
        let p = &self.plan[node];
        config_index(p.discrete.iter().map(|&j| row[j] as usize), &p.radices)
    }

    /// Log density (or log probability) of `row[node]` given its parents in `row`.
    /// `None` when the value is impossible under the model. Rows hold discrete
    /// values as level codes.
    pub fn log_density(&self, node: usize, row: &[f64]) -> Option<f64> {
        let p = &self.plan[node];
        let c = self.config(node, row);
        match &self.locals[node] {
            Local::Gaussian(g) => {
                let b = &g.blocks[c];
                let mean = b.mean(p.continuous.iter().map(|&j| row[j]));
                b.log_density(row[node] - mean)
            }
            Local::Discrete(d) => {
                let parents: Vec<f64> = p.continuous.iter().map(|&j| row[j]).collect();
                let prob = d.blocks[c].probabilities(&parents)[row[node] as usize];
                (prob > 0.0).then(|| prob.ln())
            }
        }
    }

    /// Draws `row[node]` given the parent values already in `row`.
    pub(crate) fn sample_node<R: Rng + ?Sized>(
        &self,
        node: usize,
        row: &mut [f64],
        rng: &mut R,
        scratch: &mut Vec<f64>,
    ) {
        let p = &self.plan[node];
        let c = self.config(node, row);
        row[node] = match &self.locals[node] {
            Local::Gaussian(g) => {
                let b = &g.blocks[c];
                let mean = b.mean(p.continuous.iter().map(|&j| row[j]));
                if b.sd > 0.0 {
                    mean + b.sd * rng.sample::<f64, _>(StandardNormal)
                } else {
                    mean
                }
            }
            Local::Discrete(d) => {
                let parents: Vec<f64> = p.continuous.iter().map(|&j| row[j]).collect();
                d.blocks[c].probabilities_into(&parents, scratch);
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut state = scratch.len() - 1;
                for (k, q) in scratch.iter().enumerate() {
                    acc += q;
                    if u < acc {
                        state = k;
                        break;
                    }
                }
                state as f64
            }
        };
    }

    /// Rows of `d` re-encoded in this network's node order.
    pub fn rows_of(&self, d: &Dataset) -> Result<Vec<Vec<f64>>> {
        let cols = self.columns_in(d)?;
        Ok((0..d.nrows())
            .map(|r| cols.iter().map(|&c| d.value(r, c)).collect())
            .collect())
    }

    /// Dataset column index for each network node, checking kinds and levels.
    pub(crate) fn columns_in(&self, d: &Dataset) -> Result<Vec<usize>> {
        self.variables
            .iter()
            .map(|v| {
                let c = d.require(&v.name)?;
                let levels = d.levels(c).map(<[String]>::to_vec);
                if levels != v.levels {
                    return Err(Error::InvalidModel(format!(
                        "column `{}` does not match the model's variable",
                        v.name
                    )));
                }
                Ok(c)
            })
            .collect()
    }

    /// Copy with one node's local distribution replaced and its incoming arcs removed.
    pub(crate) fn with_root_local(&self, node: usize, local: Local) -> Result<ClgNetwork> {
        let name = &self.nodes()[node];
        let mut locals = self.locals.clone();
        locals[node] = local;
        ClgNetwork::new(
            self.dag.mutilated(name),
            self.variables.clone(),
            locals,
            self.fitted_n,
        )
    }
}

/// Fits every local distribution of `g` by maximum likelihood on `d`.
pub fn fit_parameters(g: &Dag, d: &Dataset, opts: &FitOptions) -> Result<ClgNetwork> {
    let cols: Vec<usize> = g
        .nodes()
        .iter()
        .map(|n| d.require(n))
        .collect::<Result<_>>()?;
    let mut locals = Vec::with_capacity(cols.len());
    for (name, &col) in g.nodes().iter().zip(&cols) {
        let parents: Vec<usize> = g
            .parents(name)
            .into_iter()
            .map(|p| d.require(p))
            .collect::<Result<_>>()?;
        locals.push(fit_local(d, col, &parents, opts)?.local);
    }
    let variables = cols
        .iter()
        .map(|&c| {
            let v = d.variable(c);
            VariableSpec {
                name: v.name.clone(),
                levels: d.levels(c).map(<[String]>::to_vec),
            }
        })
        .collect();
    ClgNetwork::new(g.clone(), variables, locals, d.nrows())
}

/// Total log-likelihood of a dataset, or the first impossible observation.
#[derive(Clone, Debug, PartialEq)]
pub enum LogLikelihood {
    Finite(f64),
    /// An observation has zero density (deterministic node off its line, or a
    /// discrete state with probability 0). `row` is 1-based.
    Impossible { node: String, row: usize },
}

impl LogLikelihood {
    /// The log-likelihood with impossibility mapped to negative infinity.
    pub fn value(&self) -> f64 {
        match self {
            LogLikelihood::Finite(v) => *v,
            LogLikelihood::Impossible { .. } => f64::NEG_INFINITY,
        }
    }
}

/// Sum over rows and nodes of the local log densities.
pub fn log_likelihood(m: &ClgNetwork, d: &Dataset) -> Result<LogLikelihood> {
    let rows = m.rows_of(d)?;
    let mut total = 0.0;
    for (r, row) in rows.iter().enumerate() {
        for node in 0..m.nodes().len() {
            match m.log_density(node, row) {
                Some(v) => total += v,
                None => {
                    return Ok(LogLikelihood::Impossible {
                        node: m.nodes()[node].clone(),
                        row: r + 1,
                    })
                }
            }
        }
    }
    Ok(LogLikelihood::Finite(total))
}

/// BIC term of one node: maximised log-likelihood minus `k/2 log n`.
pub fn local_score(
    d: &Dataset,
    node: &str,
    parents: &[&str],
    opts: &FitOptions,
) -> Result<f64> {
    let node = d.require(node)?;
    let parents: Vec<usize> = parents.iter().map(|p| d.require(p)).collect::<Result<_>>()?;
    Ok(fit_local(d, node, &parents, opts)?.bic(d.nrows()))
}

/// Network BIC (higher is better), the sum of the per-node [`local_score`]s in node order.
pub fn bic_score(g: &Dag, d: &Dataset, opts: &FitOptions) -> Result<f64> {
    let mut total = 0.0;
    for name in g.nodes() {
        total += local_score(d, name, &g.parents(name), opts)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Variable;
    use crate::graph::Arc;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn single_row_at_mean() {
        let d = Dataset::new(vec![Variable::continuous("y", vec![1.0, 2.0, 3.0])]).unwrap();
        let g = Dag::empty(names(&["y"]));
        let m = fit_parameters(&g, &d, &FitOptions::default()).unwrap();
        let at_mean = Dataset::new(vec![Variable::continuous("y", vec![2.0])]).unwrap();
        let ll = log_likelihood(&m, &at_mean).unwrap().value();
        let var = 2.0 / 3.0;
        assert!((ll + 0.5 * (2.0 * std::f64::consts::PI * var).ln()).abs() < 1e-14);
    }

    #[test]
    fn deterministic_child_rejects_off_line_rows() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let d = Dataset::new(vec![
            Variable::continuous("x", x.clone()),
            Variable::continuous("y", x.iter().map(|v| 2.0 * v).collect()),
        ])
        .unwrap();
        let g = Dag::new(names(&["x", "y"]), [Arc::new("x", "y")]).unwrap();
        let m = fit_parameters(&g, &d, &FitOptions::default()).unwrap();
        assert!(matches!(log_likelihood(&m, &d).unwrap(), LogLikelihood::Finite(_)));
        let off = Dataset::new(vec![
            Variable::continuous("x", vec![1.0]),
            Variable::continuous("y", vec![2.5]),
        ])
        .unwrap();
        assert_eq!(
            log_likelihood(&m, &off).unwrap(),
            LogLikelihood::Impossible { node: "y".into(), row: 1 }
        );
    }

    #[test]
    fn parents_must_match_dag() {
        let d = Dataset::new(vec![
            Variable::continuous("x", vec![0.0, 1.0, 2.0, 4.0]),
            Variable::continuous("y", vec![1.0, 0.0, 2.0, 1.0]),
        ])
        .unwrap();
        let g = Dag::new(names(&["x", "y"]), [Arc::new("x", "y")]).unwrap();
        let m = fit_parameters(&g, &d, &FitOptions::default()).unwrap();
        let err = ClgNetwork::new(
            Dag::empty(names(&["x", "y"])),
            m.variables().to_vec(),
            m.locals().to_vec(),
            4,
        );
        assert!(err.is_err());
    }
}
