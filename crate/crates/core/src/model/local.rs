//! Local (per-node) distributions of a conditional linear-Gaussian network.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// How discrete parents enter a continuous node's regression.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegimeCoding {
    /// A separate (intercept, slopes, sd) block per discrete-parent configuration.
    #[default]
    Blocks,
    /// Discrete parents as 0/1 indicator regressors sharing slopes and sd.
    Indicators,
}

/// Linear-Gaussian regression of one discrete-parent configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianBlock {
    pub intercept: f64,
    /// Aligned with [`LocalGaussian::continuous_parents`].
    pub coefficients: Vec<f64>,
    /// Maximum-likelihood residual sd; 0 for degenerate fits.
    pub sd: f64,
    /// Residual sd with the `n - p - 1` divisor, when defined.
    pub unbiased_sd: Option<f64>,
    pub n: usize,
    /// Set for point masses: residuals within this bound count as exact.
    pub tolerance: Option<f64>,
    /// No training rows had this configuration; parameters are the pooled fit.
    pub inherited: bool,
}

impl GaussianBlock {
    pub fn is_degenerate(&self) -> bool {
        self.tolerance.is_some()
    }

    #[inline]
    pub fn mean(&self, parents: impl Iterator<Item = f64>) -> f64 {
        self.intercept
            + self
                .coefficients
                .iter()
                .zip(parents)
                .map(|(b, x)| b * x)
                .sum::<f64>()
    }

    /// Log density of `residual`; `None` when a point mass excludes it.
    #[inline]
    pub fn log_density(&self, residual: f64) -> Option<f64> {
        match self.tolerance {
            Some(tol) => {
                (residual.abs() <= tol).then(|| normal_log_density(residual, tol))
            }
            None => Some(normal_log_density(residual, self.sd)),
        }
    }
}

#[inline]
pub(crate) fn normal_log_density(residual: f64, sd: f64) -> f64 {
    let z = residual / sd;
    -0.5 * (2.0 * PI * sd * sd).ln() - 0.5 * z * z
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalGaussian {
    pub node: String,
    pub discrete_parents: Vec<String>,
    pub continuous_parents: Vec<String>,
    pub coding: RegimeCoding,
    /// One block per discrete-parent configuration, first parent varying slowest.
    pub blocks: Vec<GaussianBlock>,
}

/// Distribution of a discrete node within one discrete-parent configuration.
#[derive(Clone, Debug, PartialEq)]
pub enum DiscreteBlock {
    /// Probability per state.
    Table {
        probabilities: Vec<f64>,
        n: usize,
        inherited: bool,
    },
    /// Multinomial logit on continuous parents, first state as reference.
    /// `weights[k - 1]` holds `[intercept, slope per continuous parent]` for state `k`.
    Softmax {
        weights: Vec<Vec<f64>>,
        n: usize,
        inherited: bool,
    },
}

impl DiscreteBlock {
    pub fn n(&self) -> usize {
        match self {
            DiscreteBlock::Table { n, .. } | DiscreteBlock::Softmax { n, .. } => *n,
        }
    }

    pub fn is_inherited(&self) -> bool {
        match self {
            DiscreteBlock::Table { inherited, .. } | DiscreteBlock::Softmax { inherited, .. } => {
                *inherited
            }
        }
    }

    /// State probabilities given continuous parent values (ignored for tables).
    pub fn probabilities_into(&self, parents: &[f64], out: &mut Vec<f64>) {
        out.clear();
        match self {
            DiscreteBlock::Table { probabilities, .. } => out.extend_from_slice(probabilities),
            DiscreteBlock::Softmax { weights, .. } => {
                out.push(0.0);
                for w in weights {
                    out.push(w[0] + w[1..].iter().zip(parents).map(|(b, x)| b * x).sum::<f64>());
                }
                let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for v in out.iter_mut() {
                    *v = (*v - max).exp();
                    total += *v;
                }
                for v in out.iter_mut() {
                    *v /= total;
                }
            }
        }
    }

    pub fn probabilities(&self, parents: &[f64]) -> Vec<f64> {
        let mut out = Vec::new();
        self.probabilities_into(parents, &mut out);
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalDiscrete {
    pub node: String,
    pub states: Vec<String>,
    pub discrete_parents: Vec<String>,
    /// Non-empty only for whitelisted continuous-to-discrete arcs (softmax blocks).
    pub continuous_parents: Vec<String>,
    pub blocks: Vec<DiscreteBlock>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Local {
    Gaussian(LocalGaussian),
    Discrete(LocalDiscrete),
}

impl Local {
    pub fn node(&self) -> &str {
        match self {
            Local::Gaussian(g) => &g.node,
            Local::Discrete(d) => &d.node,
        }
    }

    pub fn discrete_parents(&self) -> &[String] {
        match self {
            Local::Gaussian(g) => &g.discrete_parents,
            Local::Discrete(d) => &d.discrete_parents,
        }
    }

    pub fn continuous_parents(&self) -> &[String] {
        match self {
            Local::Gaussian(g) => &g.continuous_parents,
            Local::Discrete(d) => &d.continuous_parents,
        }
    }

    pub fn config_count(&self) -> usize {
        match self {
            Local::Gaussian(g) => g.blocks.len(),
            Local::Discrete(d) => d.blocks.len(),
        }
    }

    /// Free parameters counted by BIC.
    pub fn parameter_count(&self, discrete_radices: &[usize]) -> usize {
        match self {
            Local::Gaussian(g) => {
                let p = g.continuous_parents.len();
                match g.coding {
                    RegimeCoding::Blocks => g.blocks.len() * (p + 2),
                    RegimeCoding::Indicators => {
                        1 + discrete_radices.iter().map(|r| r - 1).sum::<usize>() + p + 1
                    }
                }
            }
            Local::Discrete(d) => {
                let k = d.states.len() - 1;
                d.blocks.len() * k * (d.continuous_parents.len() + 1)
            }
        }
    }
}

/// Mixed-radix index of a discrete-parent configuration, first parent slowest.
#[inline]
pub(crate) fn config_index(codes: impl Iterator<Item = usize>, radices: &[usize]) -> usize {
    codes
        .zip(radices)
        .fold(0, |acc, (c, r)| acc * r + c)
}

/// Inverse of [`config_index`].
pub(crate) fn config_codes(mut index: usize, radices: &[usize]) -> Vec<usize> {
    let mut codes = vec![0; radices.len()];
    for (slot, r) in codes.iter_mut().zip(radices).rev() {
        *slot = index % r;
        index /= r;
    }
    codes
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_indexing_round_trips() {
        let radices = [2, 3, 2];
        for i in 0..12 {
            let codes = config_codes(i, &radices);
            assert_eq!(config_index(codes.iter().copied(), &radices), i);
        }
        assert_eq!(config_codes(5, &radices), [0, 2, 1]);
    }

    #[test]
    fn softmax_block_probabilities_sum_to_one() {
        let b = DiscreteBlock::Softmax {
            weights: vec![vec![0.5, -1.0], vec![-0.2, 2.0]],
            n: 10,
            inherited: false,
        };
        let p = b.probabilities(&[0.7]);
        assert_eq!(p.len(), 3);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let e1 = (0.5f64 - 0.7).exp();
        let e2 = (-0.2f64 + 1.4).exp();
        assert!((p[0] - 1.0 / (1.0 + e1 + e2)).abs() < 1e-12);
    }

    #[test]
    fn point_mass_density() {
        let b = GaussianBlock {
            intercept: 0.0,
            coefficients: vec![],
            sd: 0.0,
            unbiased_sd: None,
            n: 3,
            tolerance: Some(1e-10),
            inherited: false,
        };
        assert!(b.log_density(0.0).is_some());
        assert!(b.log_density(1e-3).is_none());
    }
}
