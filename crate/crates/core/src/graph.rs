//! Directed acyclic graphs over named nodes, arc constraints, and their
//! DOT/JSON serializations.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::{DELTA_PREFIX, GROWTH, INTERVAL, TREATMENT};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Arc {
    pub from: String,
    pub to: String,
}

impl Arc {
    pub fn new(from: impl Into<String>, to: impl Into<String>) -> Self {
        Arc {
            from: from.into(),
            to: to.into(),
        }
    }

    pub fn reversed(&self) -> Arc {
        Arc::new(self.to.clone(), self.from.clone())
    }
}

impl std::fmt::Display for Arc {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} -> {}", self.from, self.to)
    }
}

/// Parses `A->B` (whitespace tolerant).
impl std::str::FromStr for Arc {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (from, to) = s
            .split_once("->")
            .ok_or_else(|| Error::InvalidArgument(format!("expected `from->to`, got `{s}`")))?;
        let (from, to) = (from.trim(), to.trim());
        if from.is_empty() || to.is_empty() {
            return Err(Error::InvalidArgument(format!("empty node name in `{s}`")));
        }
        Ok(Arc::new(from, to))
    }
}

/// Kahn's algorithm over index pairs; `None` when a cycle exists.
///
/// Ties are broken by node index, so the order is deterministic.
pub(crate) fn topological_indices(n: usize, arcs: &[(usize, usize)]) -> Option<Vec<usize>> {
    let mut indegree = vec![0usize; n];
    let mut children = vec![Vec::new(); n];
    for &(a, b) in arcs {
        indegree[b] += 1;
        children[a].push(b);
    }
    let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(v) = ready.pop_first() {
        order.push(v);
        for &c in &children[v] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.insert(c);
            }
        }
    }
    (order.len() == n).then_some(order)
}

/// True iff the arc set over `nodes` admits a topological order. Arcs naming
/// unknown nodes make the candidate invalid and yield `false`.
pub fn is_acyclic(nodes: &[String], arcs: &[Arc]) -> bool {
    let index: HashMap<&str, usize> = nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let mut pairs = Vec::with_capacity(arcs.len());
    for a in arcs {
        match (index.get(a.from.as_str()), index.get(a.to.as_str())) {
            (Some(&f), Some(&t)) => pairs.push((f, t)),
            _ => return false,
        }
    }
    topological_indices(nodes.len(), &pairs).is_some()
}

/// An immutable directed acyclic graph whose nodes are identified by name.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dag {
    nodes: Vec<String>,
    arcs: BTreeSet<Arc>,
}

impl Dag {
    pub fn new(nodes: Vec<String>, arcs: impl IntoIterator<Item = Arc>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for n in &nodes {
            if !seen.insert(n.as_str()) {
                return Err(Error::InvalidGraph(format!("duplicate node `{n}`")));
            }
        }
        let mut set = BTreeSet::new();
        for a in arcs {
            if a.from == a.to {
                return Err(Error::InvalidGraph(format!("self-arc on `{}`", a.from)));
            }
            for end in [&a.from, &a.to] {
                if !seen.contains(end.as_str()) {
                    return Err(Error::UnknownVariable(end.clone()));
                }
            }
            if !set.insert(a.clone()) {
                return Err(Error::InvalidGraph(format!("duplicate arc {a}")));
            }
        }
        let dag = Dag { nodes, arcs: set };
        if dag.topological_order().is_none() {
            return Err(Error::Cycle);
        }
        Ok(dag)
    }

    pub fn empty(nodes: Vec<String>) -> Self {
        Dag {
            nodes,
            arcs: BTreeSet::new(),
        }
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn arcs(&self) -> &BTreeSet<Arc> {
        &self.arcs
    }

    pub fn contains(&self, from: &str, to: &str) -> bool {
        self.arcs.contains(&Arc::new(from, to))
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n == name)
    }

    /// Parents of `node` in node order.
    pub fn parents(&self, node: &str) -> Vec<&str> {
        self.nodes
            .iter()
            .filter(|p| self.contains(p, node))
            .map(String::as_str)
            .collect()
    }

    pub fn children(&self, node: &str) -> Vec<&str> {
        self.nodes
            .iter()
            .filter(|c| self.contains(node, c))
            .map(String::as_str)
            .collect()
    }

    /// Unordered adjacent pairs, each as (lexicographically smaller, larger).
    pub fn skeleton(&self) -> BTreeSet<(String, String)> {
        self.arcs
            .iter()
            .map(|a| {
                if a.from < a.to {
                    (a.from.clone(), a.to.clone())
                } else {
                    (a.to.clone(), a.from.clone())
                }
            })
            .collect()
    }

    pub(crate) fn index_pairs(&self) -> Vec<(usize, usize)> {
        let index: HashMap<&str, usize> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i))
            .collect();
        self.arcs
            .iter()
            .map(|a| (index[a.from.as_str()], index[a.to.as_str()]))
            .collect()
    }

    /// Node names in an order placing every arc forward (ties by node order).
    pub fn topological_order(&self) -> Option<Vec<&str>> {
        topological_indices(self.nodes.len(), &self.index_pairs())
            .map(|o| o.into_iter().map(|i| self.nodes[i].as_str()).collect())
    }

    pub fn with_arc(&self, arc: Arc) -> Result<Dag> {
        let mut arcs = self.arcs.clone();
        arcs.insert(arc);
        Dag::new(self.nodes.clone(), arcs)
    }

    pub fn without_arc(&self, arc: &Arc) -> Dag {
        let mut out = self.clone();
        out.arcs.remove(arc);
        out
    }

    /// All arcs into `node` removed.
    pub fn mutilated(&self, node: &str) -> Dag {
        Dag {
            nodes: self.nodes.clone(),
            arcs: self.arcs.iter().filter(|a| a.to != node).cloned().collect(),
        }
    }

    /// The induced subgraph on `nodes`.
    pub fn restricted(&self, nodes: &[String]) -> Dag {
        Dag {
            nodes: nodes.to_vec(),
            arcs: self
                .arcs
                .iter()
                .filter(|a| nodes.contains(&a.from) && nodes.contains(&a.to))
                .cloned()
                .collect(),
        }
    }

    /// Structural Hamming distance between skeletons (undirected edge symmetric difference).
    pub fn skeleton_distance(&self, other: &Dag) -> usize {
        self.skeleton()
            .symmetric_difference(&other.skeleton())
            .count()
    }

    pub fn to_json(&self, strengths: Option<&BTreeMap<Arc, f64>>) -> GraphJson {
        GraphJson {
            nodes: self.nodes.clone(),
            arcs: self
                .arcs
                .iter()
                .map(|a| ArcJson {
                    from: a.from.clone(),
                    to: a.to.clone(),
                    strength: strengths.and_then(|s| s.get(a).copied()),
                })
                .collect(),
        }
    }

    pub fn from_json(json: &GraphJson) -> Result<Dag> {
        Dag::new(
            json.nodes.clone(),
            json.arcs.iter().map(|a| Arc::new(&a.from, &a.to)),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArcJson {
    pub from: String,
    pub to: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strength: Option<f64>,
}

/// JSON form of a [`Dag`]; arcs in lexicographic order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphJson {
    pub nodes: Vec<String>,
    pub arcs: Vec<ArcJson>,
}

/// Pen width of an arc with strength 1.
pub const FULL_PEN_WIDTH: f64 = 4.0;

/// Deterministic DOT rendering: nodes and arcs sorted lexicographically, pen width
/// proportional to arc strength, whitelisted arcs drawn in red.
pub fn to_dot(
    g: &Dag,
    strengths: Option<&BTreeMap<Arc, f64>>,
    whitelist: Option<&BTreeSet<Arc>>,
) -> String {
    let mut nodes: Vec<&String> = g.nodes.iter().collect();
    nodes.sort();
    let mut out = String::from("digraph {\n");
    for n in nodes {
        let _ = writeln!(out, "  \"{n}\";");
    }
    for a in &g.arcs {
        let mut attrs = Vec::new();
        if let Some(s) = strengths.and_then(|s| s.get(a)) {
            attrs.push(format!("penwidth={}", FULL_PEN_WIDTH * s));
            attrs.push(format!("label=\"{s:.2}\""));
        }
        if whitelist.is_some_and(|w| w.contains(a)) {
            attrs.push("color=red".to_string());
        }
        if attrs.is_empty() {
            let _ = writeln!(out, "  \"{}\" -> \"{}\";", a.from, a.to);
        } else {
            let _ = writeln!(
                out,
                "  \"{}\" -> \"{}\" [{}];",
                a.from,
                a.to,
                attrs.join(", ")
            );
        }
    }
    out.push_str("}\n");
    out
}

/// Arcs forced present (whitelist) and forbidden (blacklist) during structure learning.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArcConstraints {
    pub whitelist: BTreeSet<Arc>,
    pub blacklist: BTreeSet<Arc>,
}

impl ArcConstraints {
    pub fn new(
        whitelist: impl IntoIterator<Item = Arc>,
        blacklist: impl IntoIterator<Item = Arc>,
    ) -> Result<Self> {
        let c = ArcConstraints {
            whitelist: whitelist.into_iter().collect(),
            blacklist: blacklist.into_iter().collect(),
        };
        if let Some(a) = c.whitelist.intersection(&c.blacklist).next() {
            return Err(Error::ConstraintConflict {
                from: a.from.clone(),
                to: a.to.clone(),
            });
        }
        Ok(c)
    }

    /// Checks consistency against a node set: known names, disjoint lists, acyclic whitelist.
    pub fn validate(&self, nodes: &[String]) -> Result<()> {
        for a in self.whitelist.iter().chain(&self.blacklist) {
            for end in [&a.from, &a.to] {
                if !nodes.contains(end) {
                    return Err(Error::UnknownVariable(end.clone()));
                }
            }
        }
        if let Some(a) = self.whitelist.intersection(&self.blacklist).next() {
            return Err(Error::ConstraintConflict {
                from: a.from.clone(),
                to: a.to.clone(),
            });
        }
        let wl: Vec<Arc> = self.whitelist.iter().cloned().collect();
        if !is_acyclic(nodes, &wl) {
            return Err(Error::InvalidGraph("whitelist contains a cycle".into()));
        }
        Ok(())
    }

    pub fn is_whitelisted(&self, from: &str, to: &str) -> bool {
        self.whitelist.contains(&Arc::new(from, to))
    }

    pub fn is_blacklisted(&self, from: &str, to: &str) -> bool {
        self.blacklist.contains(&Arc::new(from, to))
    }

    /// Adds caller-supplied arcs; fails if the result lists an arc in both sets.
    pub fn extended(
        &self,
        whitelist: impl IntoIterator<Item = Arc>,
        blacklist: impl IntoIterator<Item = Arc>,
    ) -> Result<Self> {
        ArcConstraints::new(
            self.whitelist.iter().cloned().chain(whitelist),
            self.blacklist.iter().cloned().chain(blacklist),
        )
    }

    /// Constraints restricted to arcs whose endpoints are both in `nodes`.
    pub fn restricted(&self, nodes: &[String]) -> Self {
        let keep = |a: &&Arc| nodes.contains(&a.from) && nodes.contains(&a.to);
        ArcConstraints {
            whitelist: self.whitelist.iter().filter(keep).cloned().collect(),
            blacklist: self.blacklist.iter().filter(keep).cloned().collect(),
        }
    }
}

/// Prior-knowledge constraints for a difference table with the clinical layout.
///
/// Every node other than `dT`, `Treatment` and `Growth` is a craniofacial feature.
/// Nothing may point into `dT` or `Treatment`; features may not point into `Growth`.
/// `dANB -> dIMPA`, `dPPPM -> dIMPA` and `dT -> Growth` are whitelisted. The
/// "no arcs from dT and Treatment" rule is read as "no arcs into them", which is the
/// only reading compatible with the `dT -> Growth` whitelist entry.
pub fn default_constraints(nodes: &[String]) -> Result<ArcConstraints> {
    let feature = |f: &str| format!("{DELTA_PREFIX}{f}");
    let required = [
        INTERVAL.to_string(),
        GROWTH.to_string(),
        feature("ANB"),
        feature("IMPA"),
        feature("PPPM"),
    ];
    for r in &required {
        if !nodes.contains(r) {
            return Err(Error::UnknownVariable(r.clone()));
        }
    }
    let sinks_closed: Vec<&str> = [INTERVAL, TREATMENT]
        .into_iter()
        .filter(|n| nodes.iter().any(|m| m == n))
        .collect();
    let is_feature = |n: &str| n != INTERVAL && n != TREATMENT && n != GROWTH;

    let mut blacklist = BTreeSet::new();
    for from in nodes {
        for &to in &sinks_closed {
            if from != to {
                blacklist.insert(Arc::new(from.as_str(), to));
            }
        }
        if is_feature(from) {
            blacklist.insert(Arc::new(from.as_str(), GROWTH));
        }
    }
    let whitelist = [
        Arc::new(feature("ANB"), feature("IMPA")),
        Arc::new(feature("PPPM"), feature("IMPA")),
        Arc::new(INTERVAL, GROWTH),
    ];
    ArcConstraints::new(whitelist, blacklist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn clinical_nodes(with_treatment: bool) -> Vec<String> {
        let mut v = names(&["dANB", "dIMPA", "dPPPM", "dCoA", "dGoPg", "dCoGo", "dT"]);
        if with_treatment {
            v.push("Treatment".into());
        }
        v.push("Growth".into());
        v
    }

    #[test]
    fn acyclicity_basics() {
        assert!(is_acyclic(&[], &[]));
        let n = names(&["A", "B"]);
        assert!(!is_acyclic(&n, &[Arc::new("A", "B"), Arc::new("B", "A")]));
        assert!(is_acyclic(&n, &[Arc::new("A", "B")]));
        assert!(matches!(
            Dag::new(n, [Arc::new("A", "B"), Arc::new("B", "A")]),
            Err(Error::Cycle)
        ));
    }

    #[test]
    fn back_arc_along_topological_order_creates_cycle() {
        let nodes: Vec<String> = (0..9).map(|i| format!("n{i}")).collect();
        // chain plus skips, all forward in index order
        let mut arcs = Vec::new();
        for i in 0..8 {
            arcs.push(Arc::new(&nodes[i], &nodes[i + 1]));
            if i + 3 < 9 {
                arcs.push(Arc::new(&nodes[i], &nodes[i + 3]));
            }
        }
        let dag = Dag::new(nodes.clone(), arcs.clone()).unwrap();
        let order = dag.topological_order().unwrap();
        arcs.push(Arc::new(order[7], order[2]));
        assert!(!is_acyclic(&nodes, &arcs));
    }

    #[test]
    fn default_constraint_set() {
        let c = default_constraints(&clinical_nodes(true)).unwrap();
        assert_eq!(c.whitelist.len(), 3);
        assert!(c.is_blacklisted("dCoA", "Growth"));
        assert!(c.is_blacklisted("dCoA", "dT"));
        assert!(c.is_blacklisted("dCoA", "Treatment"));
        assert!(c.is_blacklisted("Growth", "dT"));
        assert!(c.is_blacklisted("Growth", "Treatment"));
        assert!(c.is_blacklisted("dT", "Treatment"));
        assert!(!c.is_blacklisted("Treatment", "Growth"));
        assert!(!c.is_blacklisted("dT", "dANB"));
        assert!(c.whitelist.is_disjoint(&c.blacklist));
        c.validate(&clinical_nodes(true)).unwrap();

        let sub = default_constraints(&clinical_nodes(false)).unwrap();
        assert!(sub
            .whitelist
            .iter()
            .chain(&sub.blacklist)
            .all(|a| a.from != "Treatment" && a.to != "Treatment"));
        let expected: BTreeSet<Arc> = c
            .blacklist
            .iter()
            .filter(|a| a.from != "Treatment" && a.to != "Treatment")
            .cloned()
            .collect();
        assert_eq!(sub.blacklist, expected);
    }

    #[test]
    fn caller_override_conflict() {
        let c = default_constraints(&clinical_nodes(true)).unwrap();
        let err = c.extended([], [Arc::new("dT", "Growth")]).unwrap_err();
        assert!(matches!(err, Error::ConstraintConflict { .. }));
        assert!(default_constraints(&names(&["x", "y"])).is_err());
    }

    #[test]
    fn dot_output() {
        let g = Dag::new(names(&["B", "A"]), [Arc::new("A", "B")]).unwrap();
        let dot = to_dot(&g, None, None);
        assert!(dot.contains("\"A\" -> \"B\""));
        assert_eq!(dot, to_dot(&g.clone(), None, None));
        assert!(dot.find("\"A\";").unwrap() < dot.find("\"B\";").unwrap());

        let g = Dag::new(
            names(&["A", "B", "C"]),
            [Arc::new("A", "B"), Arc::new("B", "C")],
        )
        .unwrap();
        let strengths: BTreeMap<Arc, f64> =
            [(Arc::new("A", "B"), 1.0), (Arc::new("B", "C"), 0.5)].into();
        let wl: BTreeSet<Arc> = [Arc::new("A", "B")].into();
        let dot = to_dot(&g, Some(&strengths), Some(&wl));
        assert!(dot.contains("penwidth=4,"));
        assert!(dot.contains("penwidth=2,"));
        assert!(dot.contains("color=red"));
    }

    #[test]
    fn json_round_trip() {
        let g = Dag::new(names(&["A", "B"]), [Arc::new("B", "A")]).unwrap();
        let text = serde_json::to_string(&g.to_json(None)).unwrap();
        assert_eq!(text, r#"{"nodes":["A","B"],"arcs":[{"from":"B","to":"A"}]}"#);
        let back = Dag::from_json(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, g);
    }

    proptest! {
        #[test]
        fn topological_order_places_arcs_forward(
            n in 1usize..10,
            raw in prop::collection::vec((0usize..10, 0usize..10), 0..30),
        ) {
            let nodes: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();
            let arcs: Vec<Arc> = raw
                .into_iter()
                .filter(|&(a, b)| a < n && b < n && a != b)
                .map(|(a, b)| Arc::new(&nodes[a], &nodes[b]))
                .collect();
            match topological_indices(n, &arcs.iter().map(|a| (
                nodes.iter().position(|x| *x == a.from).unwrap(),
                nodes.iter().position(|x| *x == a.to).unwrap(),
            )).collect::<Vec<_>>()) {
                Some(order) => {
                    prop_assert!(is_acyclic(&nodes, &arcs));
                    let pos: HashMap<usize, usize> = order.iter().enumerate().map(|(p, &v)| (v, p)).collect();
                    for a in &arcs {
                        let f = nodes.iter().position(|x| *x == a.from).unwrap();
                        let t = nodes.iter().position(|x| *x == a.to).unwrap();
                        prop_assert!(pos[&f] < pos[&t]);
                    }
                }
                None => prop_assert!(!is_acyclic(&nodes, &arcs)),
            }
        }
    }
}
