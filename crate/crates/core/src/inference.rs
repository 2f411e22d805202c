//! Ancestral simulation, logic-sampling queries, interventions and
//! closed-form prediction of one node from all the others.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{ClgNetwork, DiscreteBlock, GaussianBlock, Local, LocalDiscrete, LocalGaussian};
use crate::rng::{substream, StreamRng};

/// Half-width of `X~v` intervals when none is given.
pub const DEFAULT_EPSILON: f64 = 0.5;
pub const DEFAULT_SAMPLES: usize = 10_000;

const POINT_MASS_RTOL: f64 = 1e-7;
const SIMPSON_INTERVALS: usize = 2000;
const SIMPSON_HALF_WIDTH: f64 = 12.0;

/// Condition on one variable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    /// A discrete level, or an exact value for a continuous variable.
    Equals(String),
    /// Closed interval; infinite ends allowed.
    Interval { lo: f64, hi: f64 },
}

/// A conjunction of per-variable conditions.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub conditions: Vec<(String, Condition)>,
}

fn split_top_level(s: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, ch) in s.char_indices() {
        match ch {
            '[' | '(' => depth += 1,
            ']' | ')' => depth -= 1,
            ',' if depth == 0 => {
                out.push(&s[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push(&s[start..]);
    out
}

fn number(s: &str, term: &str) -> Result<f64> {
    let s = s.trim();
    let v = match s {
        "inf" | "+inf" | "Inf" => f64::INFINITY,
        "-inf" | "-Inf" => f64::NEG_INFINITY,
        _ => s
            .parse()
            .map_err(|_| Error::InvalidEvidence(format!("`{s}` is not a number in `{term}`")))?,
    };
    if v.is_nan() {
        return Err(Error::InvalidEvidence(format!("NaN in `{term}`")));
    }
    Ok(v)
}

fn interval(lo: f64, hi: f64, term: &str) -> Result<Condition> {
    if lo > hi {
        return Err(Error::InvalidEvidence(format!("empty interval in `{term}`")));
    }
    Ok(Condition::Interval { lo, hi })
}

impl Evidence {
    pub fn new() -> Self {
        Evidence::default()
    }

    pub fn with(mut self, name: impl Into<String>, c: Condition) -> Self {
        self.conditions.push((name.into(), c));
        self
    }

    pub fn is_empty(&self) -> bool {
        self.conditions.is_empty()
    }

    /// Parses comma-separated terms:
    /// `X=level`, `X in [lo,hi]`, `X~v` or `X≈v` (meaning `[v-eps, v+eps]`),
    /// and `X>=v`, `X>v`, `X<=v`, `X<v` (all closed).
    pub fn parse(s: &str, eps: f64) -> Result<Evidence> {
        if !(eps >= 0.0) {
            return Err(Error::InvalidEvidence(format!("negative epsilon {eps}")));
        }
        let mut ev = Evidence::new();
        if s.trim().is_empty() {
            return Ok(ev);
        }
        for raw in split_top_level(s) {
            let term = raw.trim();
            let named = |name: &str| -> Result<String> {
                let name = name.trim();
                if name.is_empty() {
                    return Err(Error::InvalidEvidence(format!("missing variable in `{term}`")));
                }
                Ok(name.to_string())
            };
            if let Some((name, rest)) = term.split_once(" in ") {
                let rest = rest.trim();
                let inner = rest
                    .strip_prefix('[')
                    .and_then(|r| r.strip_suffix(']'))
                    .ok_or_else(|| Error::InvalidEvidence(format!("expected `[lo,hi]` in `{term}`")))?;
                let (lo, hi) = inner
                    .split_once(',')
                    .ok_or_else(|| Error::InvalidEvidence(format!("expected `[lo,hi]` in `{term}`")))?;
                ev.conditions
                    .push((named(name)?, interval(number(lo, term)?, number(hi, term)?, term)?));
            } else if let Some((name, v)) = term.split_once('~').or_else(|| term.split_once('≈')) {
                let v = number(v, term)?;
                ev.conditions.push((named(name)?, interval(v - eps, v + eps, term)?));
            } else if let Some((name, v)) = term.split_once(">=") {
                ev.conditions
                    .push((named(name)?, interval(number(v, term)?, f64::INFINITY, term)?));
            } else if let Some((name, v)) = term.split_once("<=") {
                ev.conditions
                    .push((named(name)?, interval(f64::NEG_INFINITY, number(v, term)?, term)?));
            } else if let Some((name, v)) = term.split_once('>') {
                ev.conditions
                    .push((named(name)?, interval(number(v, term)?, f64::INFINITY, term)?));
            } else if let Some((name, v)) = term.split_once('<') {
                ev.conditions
                    .push((named(name)?, interval(f64::NEG_INFINITY, number(v, term)?, term)?));
            } else if let Some((name, v)) = term.split_once('=') {
                let v = v.trim();
                if v.is_empty() {
                    return Err(Error::InvalidEvidence(format!("missing value in `{term}`")));
                }
                ev.conditions.push((named(name)?, Condition::Equals(v.to_string())));
            } else {
                return Err(Error::InvalidEvidence(format!("cannot parse `{term}`")));
            }
        }
        Ok(ev)
    }

    fn resolve(&self, m: &ClgNetwork) -> Result<Vec<(usize, Check)>> {
        self.conditions
            .iter()
            .map(|(name, c)| {
                let i = m
                    .node_index(name)
                    .ok_or_else(|| Error::InvalidEvidence(format!("unknown variable `{name}`")))?;
                let check = match (c, m.levels(i)) {
                    (Condition::Equals(v), Some(levels)) => {
                        let code = levels.iter().position(|l| l == v).ok_or_else(|| {
                            Error::InvalidEvidence(format!("`{v}` is not a level of `{name}`"))
                        })?;
                        Check::Code(code)
                    }
                    (Condition::Equals(v), None) => {
                        let x = number(v, v)?;
                        Check::Range(x, x)
                    }
                    (Condition::Interval { lo, hi }, None) => {
                        if lo > hi {
                            return Err(Error::InvalidEvidence(format!("empty interval on `{name}`")));
                        }
                        Check::Range(*lo, *hi)
                    }
                    (Condition::Interval { .. }, Some(_)) => {
                        return Err(Error::InvalidEvidence(format!(
                            "interval given for discrete variable `{name}`"
                        )))
                    }
                };
                Ok((i, check))
            })
            .collect()
    }
}

impl fmt::Display for Evidence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, (name, c)) in self.conditions.iter().enumerate() {
            if k > 0 {
                f.write_str(",")?;
            }
            match c {
                Condition::Equals(v) => write!(f, "{name}={v}")?,
                Condition::Interval { lo, hi } => write!(f, "{name} in [{lo},{hi}]")?,
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
enum Check {
    Code(usize),
    Range(f64, f64),
}

fn matches(checks: &[(usize, Check)], row: &[f64]) -> bool {
    checks.iter().all(|&(i, c)| match c {
        Check::Code(code) => row[i] as usize == code,
        Check::Range(lo, hi) => row[i] >= lo && row[i] <= hi,
    })
}

/// Streams `n` ancestral samples through `visit`, reusing one row buffer.
fn for_each_sample(m: &ClgNetwork, n: usize, rng: &mut StreamRng, mut visit: impl FnMut(&[f64])) {
    let mut row = vec![0.0; m.nodes().len()];
    let mut scratch = Vec::new();
    for _ in 0..n {
        for &node in m.ancestral_order() {
            m.sample_node(node, &mut row, rng, &mut scratch);
        }
        visit(&row);
    }
}

/// `n` rows drawn in ancestral order from stream 0 of `seed`.
pub fn simulate(m: &ClgNetwork, n: usize, seed: u64) -> Result<Dataset> {
    let mut rng = substream(seed, 0);
    let mut rows = Vec::with_capacity(n);
    for_each_sample(m, n, &mut rng, |r| rows.push(r.to_vec()));
    Dataset::from_rows(m.variables(), &rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Estimated,
    /// No sample matched the evidence, so nothing can be estimated.
    NoMatches,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub outcome: Outcome,
    pub estimate: Option<f64>,
    pub standard_error: Option<f64>,
    pub matched_evidence: usize,
    pub matched_event: usize,
    pub samples: usize,
}

/// Logic sampling estimate of `P(event | evidence)` from `n` samples.
pub fn query(
    m: &ClgNetwork,
    event: &Evidence,
    evidence: &Evidence,
    n: usize,
    seed: u64,
) -> Result<QueryResult> {
    let ev = evidence.resolve(m)?;
    let q = event.resolve(m)?;
    let (mut n_e, mut n_q) = (0usize, 0usize);
    let mut rng = substream(seed, 0);
    for_each_sample(m, n, &mut rng, |row| {
        if matches(&ev, row) {
            n_e += 1;
            if matches(&q, row) {
                n_q += 1;
            }
        }
    });
    if n_e == 0 {
        return Ok(QueryResult {
            outcome: Outcome::NoMatches,
            estimate: None,
            standard_error: None,
            matched_evidence: 0,
            matched_event: 0,
            samples: n,
        });
    }
    let p = n_q as f64 / n_e as f64;
    Ok(QueryResult {
        outcome: Outcome::Estimated,
        estimate: Some(p),
        standard_error: Some((p * (1.0 - p) / n_e as f64).sqrt()),
        matched_evidence: n_e,
        matched_event: n_q,
        samples: n,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpectationResult {
    pub target: String,
    pub outcome: Outcome,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub standard_error: Option<f64>,
    pub matched_evidence: usize,
    pub samples: usize,
}

/// Mean of a continuous `target` over logic samples matching `evidence`.
pub fn expectation(
    m: &ClgNetwork,
    target: &str,
    evidence: &Evidence,
    n: usize,
    seed: u64,
) -> Result<ExpectationResult> {
    let t = m.require(target)?;
    if m.is_discrete(t) {
        return Err(Error::InvalidArgument(format!("`{target}` is discrete; expectations need a continuous target")));
    }
    let ev = evidence.resolve(m)?;
    let (mut k, mut mean, mut m2) = (0usize, 0.0, 0.0);
    let mut rng = substream(seed, 0);
    for_each_sample(m, n, &mut rng, |row| {
        if matches(&ev, row) {
            k += 1;
            let delta = row[t] - mean;
            mean += delta / k as f64;
            m2 += delta * (row[t] - mean);
        }
    });
    let (mean, sd, se) = match k {
        0 => (None, None, None),
        1 => (Some(mean), None, None),
        _ => {
            let sd = (m2 / (k - 1) as f64).sqrt();
            (Some(mean), Some(sd), Some(sd / (k as f64).sqrt()))
        }
    };
    Ok(ExpectationResult {
        target: target.to_string(),
        outcome: if k == 0 { Outcome::NoMatches } else { Outcome::Estimated },
        mean,
        sd,
        standard_error: se,
        matched_evidence: k,
        samples: n,
    })
}

/// What an intervention sets a node to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Intervention {
    /// Point mass at a value (continuous nodes).
    Value(f64),
    Gaussian { mean: f64, sd: f64 },
    /// Point mass on a level (discrete nodes).
    Level(String),
    /// Probability per level, in level order (discrete nodes).
    Distribution(Vec<f64>),
}

/// The mutilated network: arcs into `node` removed and its local replaced by the
/// intervention distribution. Every other local is unchanged.
pub fn intervene(m: &ClgNetwork, node: &str, iv: &Intervention) -> Result<ClgNetwork> {
    let i = m.require(node)?;
    let gaussian = |intercept: f64, sd: f64, tolerance: Option<f64>| {
        Local::Gaussian(LocalGaussian {
            node: node.to_string(),
            discrete_parents: Vec::new(),
            continuous_parents: Vec::new(),
            coding: Default::default(),
            blocks: vec![GaussianBlock {
                intercept,
                coefficients: Vec::new(),
                sd,
                unbiased_sd: None,
                n: 0,
                tolerance,
                inherited: false,
            }],
        })
    };
    let table = |probabilities: Vec<f64>| {
        Local::Discrete(LocalDiscrete {
            node: node.to_string(),
            states: m.levels(i).unwrap().to_vec(),
            discrete_parents: Vec::new(),
            continuous_parents: Vec::new(),
            blocks: vec![DiscreteBlock::Table {
                probabilities,
                n: 0,
                inherited: false,
            }],
        })
    };
    let wrong = |what: &str| {
        Err(Error::InvalidArgument(format!("cannot set {what} on `{node}`")))
    };
    let local = match (iv, m.levels(i)) {
        (Intervention::Value(v), None) if v.is_finite() => {
            gaussian(*v, 0.0, Some(POINT_MASS_RTOL * v.abs().max(1.0)))
        }
        (Intervention::Gaussian { mean, sd }, None) if mean.is_finite() && *sd > 0.0 => {
            gaussian(*mean, *sd, None)
        }
        (Intervention::Level(l), Some(levels)) => {
            let k = levels
                .iter()
                .position(|x| x == l)
                .ok_or_else(|| Error::InvalidArgument(format!("`{l}` is not a level of `{node}`")))?;
            let mut p = vec![0.0; levels.len()];
            p[k] = 1.0;
            table(p)
        }
        (Intervention::Distribution(p), Some(levels)) if p.len() == levels.len() => table(p.clone()),
        (Intervention::Value(_) | Intervention::Gaussian { .. }, _) => return wrong("a continuous value"),
        (Intervention::Level(_) | Intervention::Distribution(_), _) => {
            return wrong("a discrete distribution")
        }
    };
    m.with_root_local(i, local)
}

fn simpson_weight(k: usize, last: usize) -> f64 {
    if k == 0 || k == last {
        1.0
    } else if k % 2 == 1 {
        4.0
    } else {
        2.0
    }
}

/// Predicts node `target` from the other entries of `row` (network node order,
/// discrete values as level codes; `row[target]` is ignored).
///
/// Continuous targets get the posterior mean. Gaussian terms from the target's own
/// local and from its continuous children combine in closed form; logit children
/// that depend on the target are folded in by numerical integration. Discrete
/// targets get the most probable state, ties to the lowest level.
pub fn predict_node(m: &ClgNetwork, target: &str, row: &[f64]) -> Result<f64> {
    let t = m.require(target)?;
    if row.len() != m.nodes().len() {
        return Err(Error::InvalidArgument(format!(
            "row has {} values, network has {} nodes",
            row.len(),
            m.nodes().len()
        )));
    }
    let mut row = row.to_vec();
    if let Some(levels) = m.levels(t) {
        return predict_discrete(m, t, levels.len(), &mut row);
    }
    predict_continuous(m, t, &mut row)
}

fn predict_discrete(m: &ClgNetwork, t: usize, states: usize, row: &mut [f64]) -> Result<f64> {
    let children = m.children(t);
    let mut best: Option<(usize, f64)> = None;
    for s in 0..states {
        row[t] = s as f64;
        let mut total = match m.log_density(t, row) {
            Some(v) => v,
            None => continue,
        };
        for &c in &children {
            match m.log_density(c, row) {
                Some(v) => total += v,
                None => {
                    total = f64::NEG_INFINITY;
                    break;
                }
            }
        }
        if total > f64::NEG_INFINITY && best.is_none_or(|(_, b)| total > b) {
            best = Some((s, total));
        }
    }
    best.map(|(s, _)| s as f64)
        .ok_or_else(|| Error::Infeasible(m.nodes()[t].clone()))
}

fn block_of<'m>(m: &'m ClgNetwork, node: usize, row: &[f64]) -> &'m GaussianBlock {
    match &m.locals()[node] {
        Local::Gaussian(g) => &g.blocks[m.config(node, row)],
        Local::Discrete(_) => unreachable!("continuous node with a discrete local"),
    }
}

fn predict_continuous(m: &ClgNetwork, t: usize, row: &mut [f64]) -> Result<f64> {
    let infeasible = || Error::Infeasible(m.nodes()[t].clone());
    let own = block_of(m, t, row);
    let mu = own.mean(m.plan(t).continuous.iter().map(|&j| row[j]));
    // Exact constraints `x = value` with an absolute tolerance on the child scale.
    let mut exact: Vec<(f64, f64, f64)> = Vec::new(); // (beta, r, tol)
    let (mut a, mut b) = if own.is_degenerate() {
        exact.push((1.0, mu, own.tolerance.unwrap()));
        (0.0, 0.0)
    } else {
        let prec = 1.0 / (own.sd * own.sd);
        (prec, mu * prec)
    };
    let mut logits = Vec::new();
    for c in m.children(t) {
        let plan = m.plan(c);
        let Some(pos) = plan.continuous.iter().position(|&j| j == t) else {
            // Only discrete children list the target among their discrete parents,
            // which a continuous target cannot be.
            continue;
        };
        match &m.locals()[c] {
            Local::Gaussian(_) => {
                let blk = block_of(m, c, row);
                let beta = blk.coefficients[pos];
                let rest: f64 = blk.intercept
                    + plan
                        .continuous
                        .iter()
                        .zip(&blk.coefficients)
                        .filter(|(&j, _)| j != t)
                        .map(|(&j, w)| w * row[j])
                        .sum::<f64>();
                let r = row[c] - rest;
                match blk.tolerance {
                    Some(tol) => exact.push((beta, r, tol)),
                    None if beta != 0.0 => {
                        let prec = 1.0 / (blk.sd * blk.sd);
                        a += beta * beta * prec;
                        b += beta * r * prec;
                    }
                    None => {}
                }
            }
            Local::Discrete(_) => logits.push(c),
        }
    }
    if !exact.is_empty() {
        let anchor = exact.iter().find(|(beta, _, _)| *beta != 0.0).copied();
        let x = match anchor {
            Some((beta, r, _)) => r / beta,
            None => {
                // Only zero-slope constraints: they do not involve the target.
                if exact.iter().any(|(_, r, tol)| r.abs() > *tol) {
                    return Err(infeasible());
                }
                return finish_gaussian(m, t, row, a, b, &logits);
            }
        };
        if exact.iter().any(|&(beta, r, tol)| (beta * x - r).abs() > tol) {
            return Err(infeasible());
        }
        return Ok(x);
    }
    finish_gaussian(m, t, row, a, b, &logits)
}

fn finish_gaussian(
    m: &ClgNetwork,
    t: usize,
    row: &mut [f64],
    a: f64,
    b: f64,
    logits: &[usize],
) -> Result<f64> {
    if !(a > 0.0) {
        return Err(Error::Infeasible(m.nodes()[t].clone()));
    }
    let mean = b / a;
    if logits.is_empty() {
        return Ok(mean);
    }
    let half = SIMPSON_HALF_WIDTH / a.sqrt();
    let h = 2.0 * half / SIMPSON_INTERVALS as f64;
    let mut xs = Vec::with_capacity(SIMPSON_INTERVALS + 1);
    let mut logf = Vec::with_capacity(SIMPSON_INTERVALS + 1);
    for k in 0..=SIMPSON_INTERVALS {
        let x = mean - half + h * k as f64;
        row[t] = x;
        let mut lf = -0.5 * a * (x - mean) * (x - mean);
        for &c in logits {
            lf += m.log_density(c, row).unwrap_or(f64::NEG_INFINITY);
        }
        xs.push(x);
        logf.push(lf);
    }
    let top = logf.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return Err(Error::Infeasible(m.nodes()[t].clone()));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (k, (x, lf)) in xs.iter().zip(&logf).enumerate() {
        let w = simpson_weight(k, SIMPSON_INTERVALS) * (lf - top).exp();
        num += w * x;
        den += w;
    }
    Ok(num / den)
}
