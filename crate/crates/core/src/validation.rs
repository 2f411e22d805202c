//! k-fold cross-validation of the learn-fit-predict pipeline, and per-subgroup
//! consensus networks.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::averaging::{average, AveragedNetwork, AveragingOptions, ThresholdRule};
use crate::corrnet::pearson;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::graph::{ArcConstraints, Dag};
use crate::inference::predict_node;
use crate::model::fit_parameters;
use crate::rng::substream;
use crate::search::{hill_climb, SearchOptions};

pub const DEFAULT_FOLDS: usize = 10;
/// Bootstrap replicates per fold for the averaged learner.
pub const CV_REPLICATES: usize = 50;

/// How each fold obtains its structure.
#[derive(Clone, Debug, PartialEq)]
pub enum Learner {
    /// One hill-climbing run on the training rows.
    Single,
    /// Bootstrap consensus on the training rows.
    Averaged {
        replicates: usize,
        threshold: ThresholdRule,
    },
    /// A given structure; only parameters are refitted per fold.
    Fixed(Dag),
}

impl Learner {
    pub fn averaged() -> Self {
        Learner::Averaged {
            replicates: CV_REPLICATES,
            threshold: ThresholdRule::Auto,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Learner::Single => "single".into(),
            Learner::Averaged { replicates, .. } => format!("averaged(B={replicates})"),
            Learner::Fixed(_) => "fixed-structure".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvOptions {
    pub folds: usize,
    pub seed: u64,
    pub learner: Learner,
    pub search: SearchOptions,
}

impl Default for CvOptions {
    fn default() -> Self {
        CvOptions {
            folds: DEFAULT_FOLDS,
            seed: 0,
            learner: Learner::averaged(),
            search: SearchOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// Pearson correlation of observed and predicted values.
    Correlation,
    /// Fraction of misclassified rows.
    Error,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariableReport {
    pub variable: String,
    pub metric: Metric,
    /// Over all pooled rows; `None` when a correlation is undefined.
    pub value: Option<f64>,
    pub per_fold: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub train_rows: usize,
    pub test_rows: Vec<usize>,
    pub arcs: Vec<String>,
    pub threshold: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: usize,
    pub rows: usize,
    pub seed: u64,
    pub learner: String,
    /// Fold of every row, in data order.
    pub assignment: Vec<usize>,
    pub variables: Vec<VariableReport>,
    pub fold_summaries: Vec<FoldSummary>,
    /// Out-of-fold prediction per variable (level codes for discrete variables).
    pub predictions: BTreeMap<String, Vec<f64>>,
}

impl CvReport {
    pub fn variable(&self, name: &str) -> Option<&VariableReport> {
        self.variables.iter().find(|v| v.variable == name)
    }

    /// Columns `variable, metric, value` (empty when undefined).
    pub fn write_summary<W: Write>(&self, writer: W, delimiter: u8) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .delimiter(delimiter)
            .from_writer(writer);
        w.write_record(["variable", "metric", "value"])?;
        for v in &self.variables {
            let metric = match v.metric {
                Metric::Correlation => "predictive_correlation",
                Metric::Error => "classification_error",
            };
            let value = v.value.map(|x| x.to_string()).unwrap_or_default();
            w.write_record([v.variable.as_str(), metric, value.as_str()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Shuffles rows with `seed` and deals them round-robin into `k` folds, so fold
/// sizes differ by at most one.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(seed, 0));
    let mut fold = vec![0; n];
    for (pos, &row) in order.iter().enumerate() {
        fold[row] = pos % k;
    }
    fold
}

fn check_partition(assignment: &[usize], k: usize) {
    let n = assignment.len();
    let mut sizes = vec![0usize; k];
    for &f in assignment {
        sizes[f] += 1;
    }
    assert_eq!(sizes.iter().sum::<usize>(), n, "folds must cover every row");
    assert!(
        sizes.iter().all(|&s| s == n / k || s == n.div_ceil(k)),
        "unbalanced folds {sizes:?}"
    );
}

fn tag_fold(e: Error, fold: usize) -> Error {
    match e {
        Error::InsufficientData { node, message } => Error::InsufficientData {
            node,
            message: format!("fold {fold}: {message}"),
        },
        Error::Collinear(node) => Error::InsufficientData {
            node,
            message: format!("fold {fold}: collinear design on the training rows"),
        },
        other => other,
    }
}

struct FoldOutput {
    summary: FoldSummary,
    /// `(row, node, prediction)`.
    predictions: Vec<(usize, usize, f64)>,
}

fn run_fold(
    d: &Dataset,
    c: &ArcConstraints,
    opts: &CvOptions,
    assignment: &[usize],
    fold: usize,
) -> Result<FoldOutput> {
    let train: Vec<usize> = (0..d.nrows()).filter(|&r| assignment[r] != fold).collect();
    let test: Vec<usize> = (0..d.nrows()).filter(|&r| assignment[r] == fold).collect();
    let train_d = d.select_rows(&train);
    let (dag, threshold) = match &opts.learner {
        Learner::Single => (hill_climb(&train_d, c, &opts.search)?.0, None),
        Learner::Averaged {
            replicates,
            threshold,
        } => {
            let seed = substream(opts.seed, 1 + fold as u64).next_u64();
            let avg = average(
                &train_d,
                c,
                &AveragingOptions {
                    replicates: *replicates,
                    seed,
                    threshold: *threshold,
                    search: opts.search,
                },
            )?;
            (avg.dag, Some(avg.threshold))
        }
        Learner::Fixed(g) => (g.clone(), None),
    };
    let m = fit_parameters(&dag, &train_d, &opts.search.fit).map_err(|e| tag_fold(e, fold))?;
    let rows = m.rows_of(&d.select_rows(&test))?;
    let mut predictions = Vec::with_capacity(test.len() * m.nodes().len());
    for (row, &r) in rows.iter().zip(&test) {
        for node in 0..m.nodes().len() {
            let p = predict_node(&m, &m.nodes()[node], row).map_err(|e| match e {
                Error::Infeasible(v) => Error::Infeasible(format!("{v} (fold {fold}, row {})", r + 1)),
                other => other,
            })?;
            predictions.push((r, node, p));
        }
    }
    Ok(FoldOutput {
        summary: FoldSummary {
            fold,
            train_rows: train.len(),
            test_rows: test,
            arcs: dag.arcs().iter().map(ToString::to_string).collect(),
            threshold,
        },
        predictions,
    })
}

fn correlation(obs: &[f64], pred: &[f64]) -> Option<f64> {
    pearson(obs, pred).ok()
}

fn error_rate(obs: &[f64], pred: &[f64]) -> Option<f64> {
    (!obs.is_empty()).then(|| {
        obs.iter().zip(pred).filter(|(o, p)| o != p).count() as f64 / obs.len() as f64
    })
}

/// Cross-validates structure learning plus parameter fitting on `d`: each row is
/// predicted once, from a model that never saw it, for every variable in turn.
pub fn cross_validate(d: &Dataset, c: &ArcConstraints, opts: &CvOptions) -> Result<CvReport> {
    let (n, k) = (d.nrows(), opts.folds);
    if k < 2 || n < k {
        return Err(Error::InvalidArgument(format!(
            "cross-validation needs n >= k >= 2 (n = {n}, k = {k})"
        )));
    }
    c.validate(&d.names())?;
    if let Learner::Fixed(g) = &opts.learner {
        for name in g.nodes() {
            d.require(name)?;
        }
    }
    let assignment = fold_assignment(n, k, opts.seed);
    check_partition(&assignment, k);
    let outputs: Vec<FoldOutput> = (0..k)
        .into_par_iter()
        .map(|f| run_fold(d, c, opts, &assignment, f))
        .collect::<Result<_>>()?;

    let names: Vec<String> = match &opts.learner {
        Learner::Fixed(g) => g.nodes().to_vec(),
        _ => d.names(),
    };
    let mut pred = vec![vec![f64::NAN; n]; names.len()];
    for out in &outputs {
        for &(r, node, p) in &out.predictions {
            pred[node][r] = p;
        }
    }
    let mut variables = Vec::with_capacity(names.len());
    for (node, name) in names.iter().enumerate() {
        let col = d.require(name)?;
        let observed: Vec<f64> = (0..n).map(|r| d.value(r, col)).collect();
        let (metric, score): (Metric, fn(&[f64], &[f64]) -> Option<f64>) = if d.is_discrete(col) {
            (Metric::Error, error_rate)
        } else {
            (Metric::Correlation, correlation)
        };
        let per_fold = outputs
            .iter()
            .map(|o| {
                let rows = &o.summary.test_rows;
                let obs: Vec<f64> = rows.iter().map(|&r| observed[r]).collect();
                let p: Vec<f64> = rows.iter().map(|&r| pred[node][r]).collect();
                score(&obs, &p)
            })
            .collect();
        variables.push(VariableReport {
            variable: name.clone(),
            metric,
            value: score(&observed, &pred[node]),
            per_fold,
        });
    }
    Ok(CvReport {
        folds: k,
        rows: n,
        seed: opts.seed,
        learner: opts.learner.label(),
        assignment,
        variables,
        fold_summaries: outputs.into_iter().map(|o| o.summary).collect(),
        predictions: names.into_iter().zip(pred).collect(),
    })
}

/// Reruns the averaging pipeline separately on the rows of each level of `by`,
/// with `by` dropped and the constraints restricted to the remaining columns.
pub fn subgroup_networks(
    d: &Dataset,
    by: &str,
    c: &ArcConstraints,
    opts: &AveragingOptions,
) -> Result<BTreeMap<String, AveragedNetwork>> {
    let col = d.require(by)?;
    let (levels, codes) = match (d.levels(col), d.codes(col)) {
        (Some(l), Some(c)) => (l.to_vec(), c.to_vec()),
        _ => {
            return Err(Error::InvalidArgument(format!(
                "`{by}` is continuous; subgroups need a discrete column"
            )))
        }
    };
    let mut out = BTreeMap::new();
    for (code, level) in levels.iter().enumerate() {
        let rows: Vec<usize> = (0..d.nrows()).filter(|&r| codes[r] == code).collect();
        if rows.is_empty() {
            continue;
        }
        let sub = d.select_rows(&rows).without(by)?;
        if sub.nrows() < sub.ncols() + 2 {
            return Err(Error::InsufficientData {
                node: by.to_string(),
                message: format!(
                    "subgroup `{level}` has {} rows, needs at least {}",
                    sub.nrows(),
                    sub.ncols() + 2
                ),
            });
        }
        let sc = c.restricted(&sub.names());
        out.insert(level.clone(), average(&sub, &sc, opts)?);
    }
    Ok(out)
}
