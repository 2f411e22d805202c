//! Greedy hill-climbing over DAGs, maximising BIC under arc constraints.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::graph::{Arc, ArcConstraints, Dag};
use crate::model::{fit_local, FitOptions};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MoveKind {
    Add,
    Delete,
    Reverse,
}

/// A single-arc change. For reversals `arc` is the arc as it exists before the move.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Move {
    pub kind: MoveKind,
    pub arc: Arc,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub iteration: usize,
    #[serde(rename = "move")]
    pub kind: MoveKind,
    pub from: String,
    pub to: String,
    pub delta: f64,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub initial_score: f64,
    pub steps: Vec<TraceStep>,
    pub final_score: f64,
    pub iterations: usize,
}

impl SearchTrace {
    /// One JSON object per applied move, then a summary line.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for s in &self.steps {
            writeln!(out, "{}", serde_json::to_string(s).unwrap()).unwrap();
        }
        let summary = serde_json::json!({
            "initial_score": self.initial_score,
            "final_score": self.final_score,
            "iterations": self.iterations,
        });
        writeln!(out, "{summary}").unwrap();
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SearchOptions {
    pub allow_reversals: bool,
    pub fit: FitOptions,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            allow_reversals: true,
            fit: FitOptions::default(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Candidate {
    kind: MoveKind,
    from: usize,
    to: usize,
    delta: f64,
}

struct Searcher<'a> {
    d: &'a Dataset,
    opts: SearchOptions,
    names: Vec<String>,
    n: usize,
    allowed: Vec<bool>,
    whitelisted: Vec<bool>,
    parents: Vec<Vec<usize>>,
    scores: Vec<f64>,
    cache: HashMap<(usize, Vec<usize>), Option<f64>>,
}

impl<'a> Searcher<'a> {
    fn new(d: &'a Dataset, c: &ArcConstraints, opts: &SearchOptions) -> Result<Self> {
        let names = d.names();
        c.validate(&names)?;
        let n = names.len();
        let mut allowed = vec![false; n * n];
        let mut whitelisted = vec![false; n * n];
        for a in 0..n {
            for b in 0..n {
                if a == b {
                    continue;
                }
                let w = c.is_whitelisted(&names[a], &names[b]);
                whitelisted[a * n + b] = w;
                // Discrete nodes only take continuous parents through the whitelist.
                let clg = !(d.is_discrete(b) && !d.is_discrete(a));
                allowed[a * n + b] = w || (clg && !c.is_blacklisted(&names[a], &names[b]));
            }
        }
        Ok(Searcher {
            d,
            opts: *opts,
            names,
            n,
            allowed,
            whitelisted,
            parents: vec![Vec::new(); n],
            scores: vec![0.0; n],
            cache: HashMap::new(),
        })
    }

    /// Installs `arcs` as the current graph and scores every node, propagating fit errors.
    fn set_graph(&mut self, arcs: impl IntoIterator<Item = (usize, usize)>) -> Result<()> {
        self.parents = vec![Vec::new(); self.n];
        for (a, b) in arcs {
            self.parents[b].push(a);
        }
        for node in 0..self.n {
            self.parents[node].sort_unstable();
            let ps = self.parents[node].clone();
            let s = fit_local(self.d, node, &ps, &self.opts.fit)?.bic(self.d.nrows());
            self.cache.insert((node, ps), Some(s));
            self.scores[node] = s;
        }
        Ok(())
    }

    fn score(&mut self, node: usize, parents: &[usize]) -> Result<Option<f64>> {
        let key = (node, parents.to_vec());
        if let Some(&s) = self.cache.get(&key) {
            return Ok(s);
        }
        let s = match fit_local(self.d, node, parents, &self.opts.fit) {
            Ok(fit) => Some(fit.bic(self.d.nrows())),
            Err(Error::Collinear(_) | Error::InsufficientData { .. }) => {
                log::debug!("skipping parent set {parents:?} of `{}`", self.names[node]);
                None
            }
            Err(e) => return Err(e),
        };
        self.cache.insert(key, s);
        Ok(s)
    }

    fn has_arc(&self, a: usize, b: usize) -> bool {
        self.parents[b].binary_search(&a).is_ok()
    }

    /// Whether `to` is reachable from `from`, optionally ignoring the arc `skip`.
    fn reachable(&self, from: usize, to: usize, skip: Option<(usize, usize)>) -> bool {
        let mut seen = vec![false; self.n];
        let mut stack = vec![from];
        seen[from] = true;
        while let Some(v) = stack.pop() {
            if v == to {
                return true;
            }
            for child in 0..self.n {
                if !seen[child] && self.has_arc(v, child) && skip != Some((v, child)) {
                    seen[child] = true;
                    stack.push(child);
                }
            }
        }
        false
    }

    fn with(ps: &[usize], extra: usize) -> Vec<usize> {
        let mut v = ps.to_vec();
        let at = v.binary_search(&extra).unwrap_err();
        v.insert(at, extra);
        v
    }

    fn without(ps: &[usize], gone: usize) -> Vec<usize> {
        ps.iter().copied().filter(|&p| p != gone).collect()
    }

    fn key<'s>(&'s self, c: &Candidate) -> (&'s str, &'s str, MoveKind) {
        (&self.names[c.from], &self.names[c.to], c.kind)
    }

    fn consider(&self, best: &mut Option<Candidate>, c: Candidate) {
        if !(c.delta > 0.0) {
            return;
        }
        let better = match best {
            None => true,
            Some(b) => c.delta > b.delta || (c.delta == b.delta && self.key(&c) < self.key(b)),
        };
        if better {
            *best = Some(c);
        }
    }

    fn best_move(&mut self) -> Result<Option<Candidate>> {
        let mut best = None;
        for a in 0..self.n {
            for b in 0..self.n {
                if a == b {
                    continue;
                }
                if self.has_arc(a, b) {
                    if self.whitelisted[a * self.n + b] {
                        continue;
                    }
                    let pb = Self::without(&self.parents[b], a);
                    let Some(sb) = self.score(b, &pb)? else { continue };
                    let del = sb - self.scores[b];
                    self.consider(&mut best, Candidate { kind: MoveKind::Delete, from: a, to: b, delta: del });
                    if self.opts.allow_reversals
                        && self.allowed[b * self.n + a]
                        && !self.reachable(a, b, Some((a, b)))
                    {
                        let pa = Self::with(&self.parents[a], b);
                        if let Some(sa) = self.score(a, &pa)? {
                            let delta = del + (sa - self.scores[a]);
                            self.consider(&mut best, Candidate { kind: MoveKind::Reverse, from: a, to: b, delta });
                        }
                    }
                } else if !self.has_arc(b, a)
                    && self.allowed[a * self.n + b]
                    && !self.reachable(b, a, None)
                {
                    let pb = Self::with(&self.parents[b], a);
                    if let Some(sb) = self.score(b, &pb)? {
                        let delta = sb - self.scores[b];
                        self.consider(&mut best, Candidate { kind: MoveKind::Add, from: a, to: b, delta });
                    }
                }
            }
        }
        Ok(best)
    }

    fn apply(&mut self, c: &Candidate) -> Result<()> {
        let (a, b) = (c.from, c.to);
        match c.kind {
            MoveKind::Add => self.parents[b] = Self::with(&self.parents[b], a),
            MoveKind::Delete => self.parents[b] = Self::without(&self.parents[b], a),
            MoveKind::Reverse => {
                self.parents[b] = Self::without(&self.parents[b], a);
                self.parents[a] = Self::with(&self.parents[a], b);
            }
        }
        for node in [a, b] {
            let ps = self.parents[node].clone();
            self.scores[node] = self.score(node, &ps)?.expect("applied moves are scored");
        }
        Ok(())
    }

    fn total(&self) -> f64 {
        self.scores.iter().sum()
    }

    fn dag(&self) -> Dag {
        let arcs = (0..self.n).flat_map(|b| {
            self.parents[b]
                .iter()
                .map(move |&a| Arc::new(self.names[a].clone(), self.names[b].clone()))
        });
        Dag::new(self.names.clone(), arcs).expect("search preserves acyclicity")
    }

    fn to_move(&self, c: &Candidate) -> Move {
        Move {
            kind: c.kind,
            arc: Arc::new(self.names[c.from].clone(), self.names[c.to].clone()),
            delta: c.delta,
        }
    }
}

fn index_arcs<'g>(
    d: &Dataset,
    arcs: impl IntoIterator<Item = &'g Arc>,
) -> Result<Vec<(usize, usize)>> {
    arcs.into_iter()
        .map(|a| Ok((d.require(&a.from)?, d.require(&a.to)?)))
        .collect()
}

/// Hill-climbs from the whitelist-only graph over all columns of `d`.
///
/// Each step applies the single add, delete or reverse with the largest strictly
/// positive BIC gain; equal gains go to the lexicographically smallest
/// `(from, to, kind)`. Whitelisted arcs are never removed or reversed, blacklisted
/// arcs are never added, and a discrete node never gains a continuous parent
/// unless that arc is whitelisted. Candidate parent sets whose fit is collinear
/// or short of rows are skipped.
pub fn hill_climb(
    d: &Dataset,
    c: &ArcConstraints,
    opts: &SearchOptions,
) -> Result<(Dag, SearchTrace)> {
    let mut s = Searcher::new(d, c, opts)?;
    s.set_graph(index_arcs(d, &c.whitelist)?)?;
    let initial_score = s.total();
    let cap = s.n * s.n * 10;
    let mut steps = Vec::new();
    while let Some(m) = s.best_move()? {
        if steps.len() == cap {
            return Err(Error::IterationCap(cap));
        }
        s.apply(&m)?;
        steps.push(TraceStep {
            iteration: steps.len() + 1,
            kind: m.kind,
            from: s.names[m.from].clone(),
            to: s.names[m.to].clone(),
            delta: m.delta,
            score: s.total(),
        });
    }
    let trace = SearchTrace {
        initial_score,
        final_score: s.total(),
        iterations: steps.len(),
        steps,
    };
    Ok((s.dag(), trace))
}

/// The move [`hill_climb`] would take from `g`, or `None` at a local optimum.
pub fn best_move_oracle(
    d: &Dataset,
    g: &Dag,
    c: &ArcConstraints,
    opts: &SearchOptions,
) -> Result<Option<Move>> {
    let mut s = Searcher::new(d, c, opts)?;
    if g.nodes().len() != s.n {
        return Err(Error::InvalidGraph("graph and data have different nodes".into()));
    }
    s.set_graph(index_arcs(d, g.arcs())?)?;
    Ok(s.best_move()?.map(|m| s.to_move(&m)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Variable;
    use crate::model::bic_score;
    use crate::rng::substream;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = substream(seed, 0);
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    fn chain(n: usize) -> Dataset {
        let x = noise(n, 1);
        let y: Vec<f64> = x.iter().zip(noise(n, 2)).map(|(x, e)| 2.0 * x + e).collect();
        let z: Vec<f64> = y.iter().zip(noise(n, 3)).map(|(y, e)| -1.5 * y + e).collect();
        Dataset::new(vec![
            Variable::continuous("X", x),
            Variable::continuous("Y", y),
            Variable::continuous("Z", z),
        ])
        .unwrap()
    }

    #[test]
    fn independent_columns_give_empty_graph() {
        let d = Dataset::new(
            (0..4)
                .map(|i| Variable::continuous(format!("V{i}"), noise(10_000, 10 + i)))
                .collect(),
        )
        .unwrap();
        let (g, trace) = hill_climb(&d, &ArcConstraints::default(), &SearchOptions::default()).unwrap();
        assert!(g.arcs().is_empty());
        assert!(trace.steps.is_empty());
    }

    #[test]
    fn chain_skeleton_recovered_and_trace_consistent() {
        let d = chain(10_000);
        let (g, trace) = hill_climb(&d, &ArcConstraints::default(), &SearchOptions::default()).unwrap();
        let skel: Vec<(String, String)> = g.skeleton().into_iter().collect();
        assert_eq!(skel, vec![("X".into(), "Y".into()), ("Y".into(), "Z".into())]);
        assert!(trace.steps.iter().all(|s| s.delta > 0.0));
        let sum: f64 = trace.steps.iter().map(|s| s.delta).sum();
        assert!((trace.final_score - trace.initial_score - sum).abs() < 1e-6);
        let direct = bic_score(&g, &d, &FitOptions::default()).unwrap();
        assert!((direct - trace.final_score).abs() < 1e-6 * direct.abs());
        assert!(best_move_oracle(&d, &g, &ArcConstraints::default(), &SearchOptions::default())
            .unwrap()
            .is_none());
        assert_eq!(trace.to_json_lines().lines().count(), trace.steps.len() + 1);
    }

    #[test]
    fn constraints_respected() {
        let d = chain(2_000);
        let c = ArcConstraints::new([Arc::new("Z", "X")], [Arc::new("X", "Y"), Arc::new("Y", "X")]).unwrap();
        let (g, _) = hill_climb(&d, &c, &SearchOptions::default()).unwrap();
        assert!(g.contains("Z", "X"));
        assert!(!g.contains("X", "Y") && !g.contains("Y", "X"));
    }

    #[test]
    fn discrete_node_gets_no_continuous_parent() {
        let x = noise(500, 4);
        let codes: Vec<usize> = x.iter().map(|&v| usize::from(v > 0.0)).collect();
        let d = Dataset::new(vec![
            Variable::continuous("x", x),
            Variable::discrete("s", vec!["a".into(), "b".into()], codes),
        ])
        .unwrap();
        let (g, _) = hill_climb(&d, &ArcConstraints::default(), &SearchOptions::default()).unwrap();
        assert_eq!(g.arcs().iter().cloned().collect::<Vec<_>>(), vec![Arc::new("s", "x")]);
    }
}
