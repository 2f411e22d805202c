//! Bootstrap model averaging: replicate structure searches, arc strengths,
//! the inclusion threshold, and the consensus DAG.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::graph::{topological_indices, Arc, ArcConstraints, Dag};
use crate::rng::substream;
use crate::search::{hill_climb, SearchOptions};

pub const DEFAULT_REPLICATES: usize = 200;
/// Label of the threshold estimator recorded in outputs.
pub const THRESHOLD_ESTIMATOR: &str = "l1-step-cdf";

const THRESHOLD_TIE: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct Bootstrap {
    pub dags: Vec<Dag>,
    pub requested: usize,
    /// `(replicate, diagnostic)` for every replicate whose search failed.
    pub failures: Vec<(usize, String)>,
}

/// Resamples `d` with replacement `replicates` times and hill-climbs on each copy.
///
/// Replicate `r` draws from stream `r` of `seed`, so the result does not depend on
/// scheduling. Failed replicates are skipped with a warning.
pub fn bootstrap_dags(
    d: &Dataset,
    c: &ArcConstraints,
    replicates: usize,
    seed: u64,
    opts: &SearchOptions,
) -> Result<Bootstrap> {
    if replicates == 0 {
        return Err(Error::InvalidArgument("at least one replicate is required".into()));
    }
    let n = d.nrows();
    if n < 2 {
        return Err(Error::InsufficientData {
            node: "*".into(),
            message: format!("bootstrap needs at least 2 rows, got {n}"),
        });
    }
    c.validate(&d.names())?;
    let results: Vec<Result<Dag>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = substream(seed, r as u64);
            let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            hill_climb(&d.select_rows(&rows), c, opts).map(|(g, _)| g)
        })
        .collect();
    let mut dags = Vec::with_capacity(replicates);
    let mut failures = Vec::new();
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(g) => dags.push(g),
            Err(e) => {
                log::warn!("bootstrap replicate {r} skipped: {e}");
                failures.push((r, e.to_string()));
            }
        }
    }
    if dags.is_empty() {
        return Err(Error::NoReplicates);
    }
    Ok(Bootstrap {
        dags,
        requested: replicates,
        failures,
    })
}

/// One row of the strength table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArcStrength {
    pub from: String,
    pub to: String,
    /// Fraction of DAGs linking the pair in either direction.
    pub strength: f64,
    /// Fraction of those DAGs using this direction.
    pub direction: f64,
}

/// Directed arc counts over a set of DAGs sharing one node set.
#[derive(Clone, Debug, PartialEq)]
pub struct ArcStrengthTable {
    nodes: Vec<String>,
    replicates: usize,
    /// Row-major `counts[from * n + to]`.
    counts: Vec<usize>,
}

pub fn arc_strengths(dags: &[Dag]) -> Result<ArcStrengthTable> {
    let first = dags.first().ok_or(Error::NoReplicates)?;
    let nodes = first.nodes().to_vec();
    let n = nodes.len();
    let mut counts = vec![0; n * n];
    let sorted: BTreeSet<&String> = nodes.iter().collect();
    for g in dags {
        if g.nodes().iter().collect::<BTreeSet<_>>() != sorted {
            return Err(Error::InvalidGraph("bootstrap DAGs have different node sets".into()));
        }
        for a in g.arcs() {
            let f = first.index_of(&a.from).unwrap();
            let t = first.index_of(&a.to).unwrap();
            counts[f * n + t] += 1;
        }
    }
    Ok(ArcStrengthTable {
        nodes,
        replicates: dags.len(),
        counts,
    })
}

impl ArcStrengthTable {
    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    /// Number of DAGs the strengths are computed from.
    pub fn replicates(&self) -> usize {
        self.replicates
    }

    fn idx(&self, name: &str) -> Result<usize> {
        self.nodes
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))
    }

    fn count(&self, a: usize, b: usize) -> usize {
        self.counts[a * self.nodes.len() + b]
    }

    fn pair_count(&self, a: usize, b: usize) -> usize {
        self.count(a, b) + self.count(b, a)
    }

    pub fn skeleton_strength(&self, a: &str, b: &str) -> Result<f64> {
        let (a, b) = (self.idx(a)?, self.idx(b)?);
        Ok(self.pair_count(a, b) as f64 / self.replicates as f64)
    }

    /// Probability of `a -> b` given that the pair is linked; 0 when never linked.
    pub fn direction_probability(&self, a: &str, b: &str) -> Result<f64> {
        let (a, b) = (self.idx(a)?, self.idx(b)?);
        let total = self.pair_count(a, b);
        Ok(if total == 0 {
            0.0
        } else {
            self.count(a, b) as f64 / total as f64
        })
    }

    /// Strength of every unordered pair, zeros included, in node order.
    pub fn pair_strengths(&self) -> Vec<f64> {
        let n = self.nodes.len();
        let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for a in 0..n {
            for b in (a + 1)..n {
                out.push(self.pair_count(a, b) as f64 / self.replicates as f64);
            }
        }
        out
    }

    /// Both directions of every pair linked at least once, sorted by (from, to).
    pub fn entries(&self) -> Vec<ArcStrength> {
        let n = self.nodes.len();
        let mut out = Vec::new();
        for a in 0..n {
            for b in 0..n {
                let total = if a == b { 0 } else { self.pair_count(a, b) };
                if total > 0 {
                    out.push(ArcStrength {
                        from: self.nodes[a].clone(),
                        to: self.nodes[b].clone(),
                        strength: total as f64 / self.replicates as f64,
                        direction: self.count(a, b) as f64 / total as f64,
                    });
                }
            }
        }
        out.sort_by(|x, y| (&x.from, &x.to).cmp(&(&y.from, &y.to)));
        out
    }

    /// Skeleton strength of each arc of `g`, for pen widths.
    pub fn weights_for(&self, g: &Dag) -> BTreeMap<Arc, f64> {
        g.arcs()
            .iter()
            .filter_map(|a| Some((a.clone(), self.skeleton_strength(&a.from, &a.to).ok()?)))
            .collect()
    }

    /// Columns `from, to, strength, direction`.
    pub fn write_csv<W: Write>(&self, writer: W, delimiter: u8) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .delimiter(delimiter)
            .from_writer(writer);
        for e in self.entries() {
            w.serialize(e)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// L1 distance on `[0, 1)` between the empirical CDF of `sorted` and the step
/// `1 - p(t)`, where `p(t)` is the fraction of values `>= t`.
fn threshold_objective(sorted: &[f64], t: f64) -> f64 {
    let m = sorted.len() as f64;
    let above = sorted.iter().filter(|&&s| s >= t).count() as f64;
    let level = 1.0 - above / m;
    let mut i = sorted.iter().take_while(|&&s| s <= 0.0).count();
    let mut prev = 0.0;
    let mut total = 0.0;
    while i < sorted.len() && sorted[i] < 1.0 {
        let v = sorted[i];
        total += (v - prev) * (i as f64 / m - level).abs();
        while i < sorted.len() && sorted[i] == v {
            i += 1;
        }
        prev = v;
    }
    total + (1.0 - prev) * (i as f64 / m - level).abs()
}

/// Picks the inclusion threshold among the observed strengths of all node pairs
/// (unlinked pairs count as 0), minimising [`threshold_objective`]. Ties go to the
/// smallest candidate.
pub fn estimate_threshold(t: &ArcStrengthTable) -> Result<f64> {
    threshold_from_strengths(&t.pair_strengths())
}

/// [`estimate_threshold`] on a bare list of strengths in `[0, 1]`.
pub fn threshold_from_strengths(strengths: &[f64]) -> Result<f64> {
    if strengths.is_empty() {
        return Err(Error::InvalidArgument("no candidate arcs for the threshold".into()));
    }
    let mut sorted = strengths.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut best: Option<(f64, f64)> = None;
    let mut last = f64::NAN;
    for &t in &sorted {
        if t == last {
            continue;
        }
        last = t;
        let obj = threshold_objective(&sorted, t);
        if best.is_none_or(|(_, b)| obj < b - THRESHOLD_TIE) {
            best = Some((t, obj));
        }
    }
    Ok(best.unwrap().0)
}

/// How the consensus threshold is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdRule {
    Auto,
    Fixed(f64),
}

impl ThresholdRule {
    pub fn resolve(self, t: &ArcStrengthTable) -> Result<f64> {
        match self {
            ThresholdRule::Auto => estimate_threshold(t),
            ThresholdRule::Fixed(v) => Ok(v),
        }
    }
}

impl FromStr for ThresholdRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(ThresholdRule::Auto);
        }
        let v: f64 = s
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("threshold must be `auto` or a number, got `{s}`")))?;
        if !(v >= 0.0) {
            return Err(Error::InvalidArgument(format!("threshold must be non-negative, got {v}")));
        }
        Ok(ThresholdRule::Fixed(v))
    }
}

/// Finds one directed cycle among `arcs`, as arc indices.
fn find_cycle(n: usize, arcs: &[(usize, usize)]) -> Option<Vec<usize>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Open,
        Done,
    }
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (k, &(a, _)) in arcs.iter().enumerate() {
        out[a].push(k);
    }
    let mut mark = vec![Mark::New; n];
    for start in 0..n {
        if mark[start] != Mark::New {
            continue;
        }
        // Stack of (node, next outgoing position); `path` holds arcs taken.
        let mut stack = vec![(start, 0usize)];
        let mut path: Vec<usize> = Vec::new();
        mark[start] = Mark::Open;
        while let Some(&mut (v, ref mut pos)) = stack.last_mut() {
            if *pos < out[v].len() {
                let k = out[v][*pos];
                *pos += 1;
                let w = arcs[k].1;
                match mark[w] {
                    Mark::Open => {
                        let from = path
                            .iter()
                            .position(|&p| arcs[p].0 == w)
                            .unwrap_or(path.len());
                        let mut cycle = path[from..].to_vec();
                        cycle.push(k);
                        return Some(cycle);
                    }
                    Mark::New => {
                        mark[w] = Mark::Open;
                        path.push(k);
                        stack.push((w, 0));
                    }
                    Mark::Done => {}
                }
            } else {
                mark[v] = Mark::Done;
                stack.pop();
                path.pop();
            }
        }
    }
    None
}

/// Consensus DAG: every pair with strength `>= threshold` (and linked at least
/// once), oriented by majority direction with ties going to the lexicographically
/// smaller tail, plus every whitelisted arc. Cycles are broken by repeatedly
/// dropping the non-whitelisted arc with the lowest (strength, from, to) on a cycle.
pub fn consensus(t: &ArcStrengthTable, threshold: f64, c: &ArcConstraints) -> Result<Dag> {
    let nodes = &t.nodes;
    let n = nodes.len();
    let mut arcs: BTreeSet<Arc> = BTreeSet::new();
    for a in 0..n {
        for b in (a + 1)..n {
            let total = t.pair_count(a, b);
            if total == 0 || (total as f64 / t.replicates as f64) < threshold {
                continue;
            }
            let (ab, ba) = (t.count(a, b), t.count(b, a));
            let forward = match ab.cmp(&ba) {
                std::cmp::Ordering::Greater => true,
                std::cmp::Ordering::Less => false,
                std::cmp::Ordering::Equal => nodes[a] < nodes[b],
            };
            let arc = if forward {
                Arc::new(nodes[a].clone(), nodes[b].clone())
            } else {
                Arc::new(nodes[b].clone(), nodes[a].clone())
            };
            if c.is_whitelisted(&arc.to, &arc.from) {
                continue;
            }
            arcs.insert(arc);
        }
    }
    for w in &c.whitelist {
        t.idx(&w.from)?;
        t.idx(&w.to)?;
        arcs.insert(w.clone());
    }
    loop {
        let list: Vec<Arc> = arcs.iter().cloned().collect();
        let pairs: Vec<(usize, usize)> = list
            .iter()
            .map(|a| (t.idx(&a.from).unwrap(), t.idx(&a.to).unwrap()))
            .collect();
        if topological_indices(n, &pairs).is_some() {
            break;
        }
        let cycle = find_cycle(n, &pairs).expect("cyclic graph has a cycle");
        let victim = cycle
            .iter()
            .map(|&k| &list[k])
            .filter(|a| !c.whitelist.contains(*a))
            .min_by(|x, y| {
                let sx = t.skeleton_strength(&x.from, &x.to).unwrap();
                let sy = t.skeleton_strength(&y.from, &y.to).unwrap();
                sx.total_cmp(&sy).then_with(|| (&x.from, &x.to).cmp(&(&y.from, &y.to)))
            })
            .ok_or_else(|| Error::InvalidGraph("whitelist contains a cycle".into()))?
            .clone();
        log::info!("consensus: dropping {victim} to break a cycle");
        arcs.remove(&victim);
    }
    Dag::new(nodes.clone(), arcs)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AveragingOptions {
    pub replicates: usize,
    pub seed: u64,
    pub threshold: ThresholdRule,
    pub search: SearchOptions,
}

impl Default for AveragingOptions {
    fn default() -> Self {
        AveragingOptions {
            replicates: DEFAULT_REPLICATES,
            seed: 0,
            threshold: ThresholdRule::Auto,
            search: SearchOptions::default(),
        }
    }
}

/// Outcome of the full bootstrap-average-threshold pipeline.
#[derive(Clone, Debug)]
pub struct AveragedNetwork {
    pub dag: Dag,
    pub strengths: ArcStrengthTable,
    pub threshold: f64,
    pub rule: ThresholdRule,
    pub requested: usize,
    pub failures: Vec<(usize, String)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsensusArcJson {
    pub from: String,
    pub to: String,
    pub strength: f64,
    pub direction: f64,
}

/// JSON form of an [`AveragedNetwork`]; key order is stable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsensusJson {
    pub nodes: Vec<String>,
    pub arcs: Vec<ConsensusArcJson>,
    pub threshold: f64,
    pub threshold_rule: ThresholdRule,
    pub threshold_estimator: Option<String>,
    pub replicates_requested: usize,
    pub replicates_used: usize,
}

impl AveragedNetwork {
    pub fn to_json(&self) -> ConsensusJson {
        let arcs = self
            .dag
            .arcs()
            .iter()
            .map(|a| ConsensusArcJson {
                from: a.from.clone(),
                to: a.to.clone(),
                strength: self.strengths.skeleton_strength(&a.from, &a.to).unwrap(),
                direction: self.strengths.direction_probability(&a.from, &a.to).unwrap(),
            })
            .collect();
        ConsensusJson {
            nodes: self.dag.nodes().to_vec(),
            arcs,
            threshold: self.threshold,
            threshold_rule: self.rule,
            threshold_estimator: matches!(self.rule, ThresholdRule::Auto)
                .then(|| THRESHOLD_ESTIMATOR.to_string()),
            replicates_requested: self.requested,
            replicates_used: self.strengths.replicates(),
        }
    }
}

/// Bootstrap, strengths, threshold and consensus in one call.
pub fn average(d: &Dataset, c: &ArcConstraints, opts: &AveragingOptions) -> Result<AveragedNetwork> {
    let boot = bootstrap_dags(d, c, opts.replicates, opts.seed, &opts.search)?;
    let strengths = arc_strengths(&boot.dags)?;
    let threshold = opts.threshold.resolve(&strengths)?;
    let dag = consensus(&strengths, threshold, c)?;
    Ok(AveragedNetwork {
        dag,
        strengths,
        threshold,
        rule: opts.threshold,
        requested: boot.requested,
        failures: boot.failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn dag(nodes: &[&str], arcs: &[(&str, &str)]) -> Dag {
        Dag::new(names(nodes), arcs.iter().map(|(a, b)| Arc::new(*a, *b))).unwrap()
    }

    #[test]
    fn opposite_directions_split_evenly() {
        let t = arc_strengths(&[dag(&["A", "B"], &[("A", "B")]), dag(&["A", "B"], &[("B", "A")])]).unwrap();
        assert_eq!(t.skeleton_strength("A", "B").unwrap(), 1.0);
        assert_eq!(t.direction_probability("A", "B").unwrap(), 0.5);
        assert_eq!(t.direction_probability("B", "A").unwrap(), 0.5);
    }

    #[test]
    fn three_of_four() {
        let with = dag(&["A", "B"], &[("A", "B")]);
        let without = dag(&["A", "B"], &[]);
        let t = arc_strengths(&[with.clone(), with.clone(), without, with]).unwrap();
        assert_eq!(t.skeleton_strength("B", "A").unwrap(), 0.75);
        assert_eq!(t.direction_probability("A", "B").unwrap(), 1.0);
    }

    #[test]
    fn mismatched_nodes_rejected() {
        assert!(arc_strengths(&[dag(&["A", "B"], &[]), dag(&["A", "C"], &[])]).is_err());
    }

    #[test]
    fn threshold_splits_bimodal_strengths() {
        // Objectives for candidates .05, .1, .9, 1: .4875, .2625, .0625, .2625.
        let s = [0.05, 0.1, 0.9, 1.0];
        let sorted = s.to_vec();
        let objs: Vec<f64> = s.iter().map(|&t| threshold_objective(&sorted, t)).collect();
        for (o, want) in objs.iter().zip([0.4875, 0.2625, 0.0625, 0.2625]) {
            assert!((o - want).abs() < 1e-12, "{objs:?}");
        }
        assert_eq!(threshold_from_strengths(&s).unwrap(), 0.9);
        assert_eq!(threshold_from_strengths(&[1.0, 1.0]).unwrap(), 1.0);
    }

    #[test]
    fn consensus_keeps_strong_arcs_and_whitelist() {
        let g = dag(&["A", "B", "C"], &[("A", "B")]);
        let t = arc_strengths(&vec![g; 200]).unwrap();
        let none = ArcConstraints::default();
        assert_eq!(consensus(&t, 0.85, &none).unwrap().arcs().len(), 1);
        let wl = ArcConstraints::new([Arc::new("C", "B")], []).unwrap();
        let only = consensus(&t, 1.01, &wl).unwrap();
        assert_eq!(only.arcs().iter().cloned().collect::<Vec<_>>(), vec![Arc::new("C", "B")]);
    }

    #[test]
    fn cycles_are_broken_at_the_weakest_arc() {
        let nodes = ["A", "B", "C"];
        let mut dags = Vec::new();
        dags.extend(std::iter::repeat_n(dag(&nodes, &[("A", "B"), ("B", "C")]), 4));
        dags.extend(std::iter::repeat_n(dag(&nodes, &[("C", "A")]), 3));
        let t = arc_strengths(&dags).unwrap();
        let g = consensus(&t, 0.0, &ArcConstraints::default()).unwrap();
        assert!(g.contains("A", "B") && g.contains("B", "C"));
        assert!(!g.contains("C", "A"));
    }

    #[test]
    fn threshold_rule_parses() {
        assert_eq!("auto".parse::<ThresholdRule>().unwrap(), ThresholdRule::Auto);
        assert_eq!("0.85".parse::<ThresholdRule>().unwrap(), ThresholdRule::Fixed(0.85));
        assert!("x".parse::<ThresholdRule>().is_err());
    }
}
