//! A hand-built reference network with the clinical layout, and synthetic
//! two-visit tables drawn from it. Used for demos, tests and benchmarks.

use rand::Rng;

use crate::dataset::{
    Growth, LongitudinalTable, Subject, Treatment, TreatmentCoding, VariableSpec, DELTA_PREFIX,
    GROWTH, INTERVAL, TREATMENT,
};
use crate::error::{Error, Result};
use crate::graph::{Arc, Dag};
use crate::inference::simulate;
use crate::model::{ClgNetwork, DiscreteBlock, GaussianBlock, Local, LocalDiscrete, LocalGaussian};
use crate::rng::substream;

pub const FEATURES: [&str; 6] = ["ANB", "IMPA", "PPPM", "CoA", "GoPg", "CoGo"];

fn d(f: &str) -> String {
    format!("{DELTA_PREFIX}{f}")
}

/// Node order of the reference network, matching a difference table built from
/// [`FEATURES`].
pub fn reference_nodes() -> Vec<String> {
    FEATURES
        .iter()
        .map(|f| d(f))
        .chain([INTERVAL, TREATMENT, GROWTH].map(String::from))
        .collect()
}

/// Arcs of the reference network. `Treatment` and `Growth` are discrete roots and
/// `dT` is a continuous root.
pub fn reference_arcs() -> Vec<Arc> {
    [
        (TREATMENT.into(), d("ANB")),
        (GROWTH.into(), d("ANB")),
        (d("CoA"), d("ANB")),
        (TREATMENT.into(), d("CoA")),
        (INTERVAL.into(), d("CoA")),
        (GROWTH.into(), d("CoGo")),
        (INTERVAL.into(), d("CoGo")),
        (d("CoA"), d("GoPg")),
        (d("CoGo"), d("GoPg")),
        (d("CoGo"), d("PPPM")),
        (d("ANB"), d("IMPA")),
        (d("PPPM"), d("IMPA")),
    ]
    .into_iter()
    .map(|(a, b): (String, String)| Arc::new(a, b))
    .collect()
}

pub fn reference_dag() -> Dag {
    Dag::new(reference_nodes(), reference_arcs()).expect("reference arcs form a DAG")
}

fn block(intercept: f64, coefficients: &[f64]) -> GaussianBlock {
    GaussianBlock {
        intercept,
        coefficients: coefficients.to_vec(),
        sd: 1.0,
        unbiased_sd: None,
        n: 0,
        tolerance: None,
        inherited: false,
    }
}

fn gaussian(node: &str, discrete: &[&str], continuous: &[&str], blocks: Vec<GaussianBlock>) -> Local {
    Local::Gaussian(LocalGaussian {
        node: node.into(),
        discrete_parents: discrete.iter().map(|s| s.to_string()).collect(),
        continuous_parents: continuous.iter().map(|s| s.to_string()).collect(),
        coding: Default::default(),
        blocks,
    })
}

fn root_table(node: &str, states: Vec<String>, probabilities: Vec<f64>) -> Local {
    Local::Discrete(LocalDiscrete {
        node: node.into(),
        states,
        discrete_parents: vec![],
        continuous_parents: vec![],
        blocks: vec![DiscreteBlock::Table {
            probabilities,
            n: 0,
            inherited: false,
        }],
    })
}

/// The reference network: every slope has magnitude 1 and every residual sd is 1.
///
/// `dANB` shifts with both discrete roots (treated patients and good growers have
/// larger changes), so conditioning on `dANB` couples `Treatment` and `Growth`
/// while intervening on it does not.
pub fn reference_network() -> ClgNetwork {
    let treatment = TreatmentCoding::Binary.levels();
    let growth = vec!["Good".to_string(), "Bad".to_string()];
    let (anb, impa, pppm, coa, gopg, cogo) =
        (d("ANB"), d("IMPA"), d("PPPM"), d("CoA"), d("GoPg"), d("CoGo"));
    let locals = vec![
        // Configurations: (untreated, Good), (untreated, Bad), (treated, Good), (treated, Bad).
        gaussian(
            &anb,
            &[TREATMENT, GROWTH],
            &[&coa],
            vec![block(5.0, &[-1.0]), block(3.0, &[-1.0]), block(9.0, &[-1.0]), block(7.0, &[-1.0])],
        ),
        gaussian(&impa, &[], &[&anb, &pppm], vec![block(0.0, &[1.0, -1.0])]),
        gaussian(&pppm, &[], &[&cogo], vec![block(1.0, &[-1.0])]),
        gaussian(&coa, &[TREATMENT], &[INTERVAL], vec![block(0.0, &[1.0]), block(2.0, &[1.0])]),
        gaussian(&gopg, &[], &[&coa, &cogo], vec![block(0.0, &[1.0, 1.0])]),
        gaussian(&cogo, &[GROWTH], &[INTERVAL], vec![block(2.0, &[1.0]), block(0.0, &[1.0])]),
        gaussian(INTERVAL, &[], &[], vec![block(5.0, &[])]),
        root_table(TREATMENT, treatment.clone(), vec![0.5, 0.5]),
        root_table(GROWTH, growth.clone(), vec![0.5, 0.5]),
    ];
    let variables = reference_nodes()
        .into_iter()
        .map(|name| {
            let levels = match name.as_str() {
                TREATMENT => Some(treatment.clone()),
                GROWTH => Some(growth.clone()),
                _ => None,
            };
            VariableSpec { name, levels }
        })
        .collect();
    ClgNetwork::new(reference_dag(), variables, locals, 0).expect("reference network is valid")
}

/// Two-visit records whose differences follow `m`, which must have the layout of
/// [`reference_network`]. Rows with a non-positive interval are redrawn.
pub fn synthetic_table(m: &ClgNetwork, n: usize, seed: u64) -> Result<LongitudinalTable> {
    let dt = m.require(INTERVAL)?;
    let tr = m.require(TREATMENT)?;
    let gr = m.require(GROWTH)?;
    let cols: Vec<usize> = FEATURES.iter().map(|f| m.require(&d(f))).collect::<Result<_>>()?;
    let mut baseline = substream(seed, 1);
    let mut subjects = Vec::with_capacity(n);
    let mut round = 0u64;
    while subjects.len() < n {
        if round == 8 {
            return Err(Error::InvalidModel("the interval node rarely yields positive values".into()));
        }
        let sample = simulate(m, n - subjects.len(), seed.wrapping_add(round))?;
        round += 1;
        for r in 0..sample.nrows() {
            let interval = sample.value(r, dt);
            if !(interval > 0.0) {
                continue;
            }
            let t1 = baseline.random_range(6.0..10.0);
            let m1: Vec<f64> = cols.iter().map(|_| baseline.random_range(20.0..80.0)).collect();
            let m2 = m1.iter().zip(&cols).map(|(a, &c)| a + sample.value(r, c)).collect();
            let treatment = if sample.value(r, tr) == 0.0 {
                Treatment::NT
            } else if baseline.random::<bool>() {
                Treatment::TB
            } else {
                Treatment::TG
            };
            let growth = if sample.value(r, gr) == 0.0 { Growth::Good } else { Growth::Bad };
            subjects.push(Subject {
                id: format!("S{:04}", subjects.len() + 1),
                t1,
                t2: t1 + interval,
                m1,
                m2,
                treatment,
                growth,
            });
        }
    }
    LongitudinalTable::new(FEATURES.iter().map(|f| f.to_string()).collect(), subjects)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::compute_deltas;
    use crate::graph::default_constraints;

    #[test]
    fn reference_network_respects_default_constraints() {
        let c = default_constraints(&reference_nodes()).unwrap();
        let g = reference_dag();
        for a in g.arcs() {
            assert!(!c.blacklist.contains(a), "{a}");
        }
        for w in &c.whitelist {
            if w.to != GROWTH {
                assert!(g.arcs().contains(w), "{w}");
            }
        }
    }

    #[test]
    fn synthetic_table_round_trips_through_deltas() {
        let m = reference_network();
        let t = synthetic_table(&m, 50, 3).unwrap();
        let d = compute_deltas(&t, TreatmentCoding::Binary);
        assert_eq!(d.names(), reference_nodes());
        assert_eq!(d.nrows(), 50);
    }
}
