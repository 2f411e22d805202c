//! Maximum-likelihood fitting of local distributions and their BIC terms.

use super::local::{
    config_codes, config_index, DiscreteBlock, GaussianBlock, Local, LocalDiscrete,
    LocalGaussian, RegimeCoding,
};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{Cholesky, SymMatrix};

/// Residuals below this fraction of the response scale make a fit deterministic.
pub(crate) const DEGENERATE_RTOL: f64 = 1e-9;
/// Residual tolerance (relative to response scale) recorded on deterministic fits.
pub(crate) const POINT_MASS_RTOL: f64 = 1e-7;
const COLLINEAR_RTOL: f64 = 1e-10;
const SOFTMAX_MAX_ITER: usize = 100;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FitOptions {
    pub coding: RegimeCoding,
}

#[derive(Debug)]
enum Failure {
    Collinear,
    TooFewRows(usize, usize),
}

#[derive(Debug)]
pub(crate) struct OlsFit {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub rss: f64,
    pub max_abs_residual: f64,
    /// `max(1, rms(y))`.
    pub scale: f64,
    pub n: usize,
}

impl OlsFit {
    fn is_degenerate(&self) -> bool {
        self.max_abs_residual <= DEGENERATE_RTOL * self.scale
    }

    fn tolerance(&self) -> f64 {
        POINT_MASS_RTOL * self.scale
    }

    fn block(&self) -> GaussianBlock {
        let p = self.coefficients.len();
        let degenerate = self.is_degenerate();
        GaussianBlock {
            intercept: self.intercept,
            coefficients: self.coefficients.clone(),
            sd: if degenerate {
                0.0
            } else {
                (self.rss / self.n as f64).sqrt()
            },
            unbiased_sd: (self.n > p + 1)
                .then(|| if degenerate { 0.0 } else { (self.rss / (self.n - p - 1) as f64).sqrt() }),
            n: self.n,
            tolerance: degenerate.then(|| self.tolerance()),
            inherited: false,
        }
    }

    /// Maximised log-likelihood of the fit on its own rows.
    fn log_likelihood(&self) -> f64 {
        let n = self.n as f64;
        if self.is_degenerate() {
            let tol = self.tolerance();
            -0.5 * n * (2.0 * std::f64::consts::PI * tol * tol).ln() - self.rss / (2.0 * tol * tol)
        } else {
            -0.5 * n * ((2.0 * std::f64::consts::PI * self.rss / n).ln() + 1.0)
        }
    }
}

/// Least squares of `y` on an intercept and `xs`, over `rows`.
///
/// Coefficients come from the centred normal equations; the residual sum of squares
/// is accumulated directly from the residuals.
fn ols(rows: &[usize], y: &[f64], xs: &[&[f64]]) -> std::result::Result<OlsFit, Failure> {
    let n = rows.len();
    let p = xs.len();
    if n < p + 2 {
        return Err(Failure::TooFewRows(n, p + 2));
    }
    let nf = n as f64;
    let y_mean = rows.iter().map(|&r| y[r]).sum::<f64>() / nf;
    let x_mean: Vec<f64> = xs
        .iter()
        .map(|x| rows.iter().map(|&r| x[r]).sum::<f64>() / nf)
        .collect();

    let coefficients = if p == 0 {
        Vec::new()
    } else {
        let mut sxx = SymMatrix::zeros(p);
        let mut sxy = vec![0.0; p];
        let mut centred = vec![0.0; p];
        for &r in rows {
            for j in 0..p {
                centred[j] = xs[j][r] - x_mean[j];
            }
            let dy = y[r] - y_mean;
            for j in 0..p {
                sxy[j] += centred[j] * dy;
                for k in 0..=j {
                    sxx.add(j, k, centred[j] * centred[k]);
                }
            }
        }
        for j in 0..p {
            for k in 0..j {
                let v = sxx.get(j, k);
                sxx.data[k * p + j] = v;
            }
        }
        let chol = Cholesky::factor(&sxx, COLLINEAR_RTOL).ok_or(Failure::Collinear)?;
        chol.solve(&sxy)
    };
    let intercept = y_mean
        - coefficients
            .iter()
            .zip(&x_mean)
            .map(|(b, m)| b * m)
            .sum::<f64>();

    let (mut rss, mut max_abs, mut ss_y) = (0.0, 0.0f64, 0.0);
    for &r in rows {
        let mut fitted = intercept;
        for j in 0..p {
            fitted += coefficients[j] * xs[j][r];
        }
        let e = y[r] - fitted;
        rss += e * e;
        max_abs = max_abs.max(e.abs());
        ss_y += y[r] * y[r];
    }
    Ok(OlsFit {
        intercept,
        coefficients,
        rss,
        max_abs_residual: max_abs,
        scale: (ss_y / nf).sqrt().max(1.0),
        n,
    })
}

/// Maximum-likelihood multinomial logit of `codes` (values `0..k`) on `xs`.
/// Returns the weights (first state as reference) and the maximised log-likelihood.
fn softmax(
    rows: &[usize],
    codes: &[usize],
    k: usize,
    xs: &[&[f64]],
) -> std::result::Result<(Vec<Vec<f64>>, f64), Failure> {
    let n = rows.len();
    let p = xs.len();
    if n < p + 2 {
        return Err(Failure::TooFewRows(n, p + 2));
    }
    let nf = n as f64;
    // standardize predictors for conditioning, map back at the end
    let mean: Vec<f64> = xs
        .iter()
        .map(|x| rows.iter().map(|&r| x[r]).sum::<f64>() / nf)
        .collect();
    let sd: Vec<f64> = xs
        .iter()
        .zip(&mean)
        .map(|(x, m)| (rows.iter().map(|&r| (x[r] - m).powi(2)).sum::<f64>() / nf).sqrt())
        .collect();
    if sd.iter().zip(&mean).any(|(s, m)| *s <= COLLINEAR_RTOL * m.abs().max(1.0)) {
        return Err(Failure::Collinear);
    }
    if p > 1 {
        let mut corr = SymMatrix::zeros(p);
        for &r in rows {
            for a in 0..p {
                for b in 0..p {
                    corr.add(
                        a,
                        b,
                        (xs[a][r] - mean[a]) / sd[a] * (xs[b][r] - mean[b]) / sd[b],
                    );
                }
            }
        }
        Cholesky::factor(&corr, COLLINEAR_RTOL).ok_or(Failure::Collinear)?;
    }
    let z: Vec<Vec<f64>> = rows
        .iter()
        .map(|&r| {
            std::iter::once(1.0)
                .chain((0..p).map(|j| (xs[j][r] - mean[j]) / sd[j]))
                .collect()
        })
        .collect();
    let y: Vec<usize> = rows.iter().map(|&r| codes[r]).collect();

    let q = p + 1;
    let dim = (k - 1) * q;
    let mut counts = vec![0.0f64; k];
    for &c in &y {
        counts[c] += 1.0;
    }
    let mut w = vec![0.0; dim];
    for s in 1..k {
        w[(s - 1) * q] = ((counts[s] + 0.5) / (counts[0] + 0.5)).ln();
    }

    let log_lik = |w: &[f64]| -> f64 {
        let mut ll = 0.0;
        let mut eta = vec![0.0; k];
        for (zi, &yi) in z.iter().zip(&y) {
            for s in 1..k {
                eta[s] = (0..q).map(|j| w[(s - 1) * q + j] * zi[j]).sum();
            }
            let max = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + eta.iter().map(|e| (e - max).exp()).sum::<f64>().ln();
            ll += eta[yi] - lse;
        }
        ll
    };

    let mut ll = log_lik(&w);
    let mut pi = vec![0.0; k];
    for _ in 0..SOFTMAX_MAX_ITER {
        let mut grad = vec![0.0; dim];
        let mut neg_hess = SymMatrix::zeros(dim);
        for (zi, &yi) in z.iter().zip(&y) {
            pi[0] = 0.0;
            for s in 1..k {
                pi[s] = (0..q).map(|j| w[(s - 1) * q + j] * zi[j]).sum();
            }
            let max = pi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in pi.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in pi.iter_mut() {
                *v /= total;
            }
            for s in 1..k {
                let resid = f64::from(u8::from(yi == s)) - pi[s];
                for j in 0..q {
                    grad[(s - 1) * q + j] += resid * zi[j];
                }
                for t in 1..k {
                    let wst = pi[s] * (f64::from(u8::from(s == t)) - pi[t]);
                    for j in 0..q {
                        for l in 0..q {
                            neg_hess.add((s - 1) * q + j, (t - 1) * q + l, wst * zi[j] * zi[l]);
                        }
                    }
                }
            }
        }
        // small ridge keeps the Newton system solvable under (quasi-)separation
        for i in 0..dim {
            neg_hess.add(i, i, 1e-9 * nf);
        }
        let Some(chol) = Cholesky::factor(&neg_hess, 0.0) else {
            break;
        };
        let step = chol.solve(&grad);
        let mut scale = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let cand: Vec<f64> = w.iter().zip(&step).map(|(a, s)| a + scale * s).collect();
            let cand_ll = log_lik(&cand);
            if cand_ll >= ll {
                let gain = cand_ll - ll;
                w = cand;
                ll = cand_ll;
                improved = gain > 1e-12 * (1.0 + ll.abs());
                break;
            }
            scale *= 0.5;
        }
        if !improved {
            break;
        }
    }

    let weights = (1..k)
        .map(|s| {
            let ws = &w[(s - 1) * q..s * q];
            let mut raw = vec![0.0; q];
            raw[0] = ws[0];
            for j in 0..p {
                raw[j + 1] = ws[j + 1] / sd[j];
                raw[0] -= ws[j + 1] * mean[j] / sd[j];
            }
            raw
        })
        .collect();
    Ok((weights, ll))
}

/// Fitted local distribution together with its maximised log-likelihood.
#[derive(Debug)]
pub(crate) struct LocalFit {
    pub local: Local,
    pub log_likelihood: f64,
    pub radices: Vec<usize>,
}

impl LocalFit {
    pub fn bic(&self, n: usize) -> f64 {
        let k = self.local.parameter_count(&self.radices) as f64;
        self.log_likelihood - 0.5 * k * (n as f64).ln()
    }
}

fn describe_config(d: &Dataset, discrete: &[usize], radices: &[usize], config: usize) -> String {
    if discrete.is_empty() {
        return "all rows".into();
    }
    config_codes(config, radices)
        .iter()
        .zip(discrete)
        .map(|(&c, &p)| format!("{}={}", d.variable(p).name, d.levels(p).unwrap()[c]))
        .collect::<Vec<_>>()
        .join(",")
}

fn map_failure(d: &Dataset, node: usize, what: String, f: Failure) -> Error {
    let name = d.variable(node).name.clone();
    match f {
        Failure::Collinear => Error::Collinear(name),
        Failure::TooFewRows(have, need) => Error::InsufficientData {
            node: name,
            message: format!("{what} has {have} rows, needs at least {need}"),
        },
    }
}

/// Fits the local distribution of column `node` given parent columns `parents`.
pub(crate) fn fit_local(
    d: &Dataset,
    node: usize,
    parents: &[usize],
    opts: &FitOptions,
) -> Result<LocalFit> {
    let discrete: Vec<usize> = parents.iter().copied().filter(|&p| d.is_discrete(p)).collect();
    let continuous: Vec<usize> = parents.iter().copied().filter(|&p| !d.is_discrete(p)).collect();
    let radices: Vec<usize> = discrete.iter().map(|&p| d.levels(p).unwrap().len()).collect();
    let configs: usize = radices.iter().product();
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); configs];
    for r in 0..d.nrows() {
        let c = config_index(discrete.iter().map(|&p| d.codes(p).unwrap()[r]), &radices);
        buckets[c].push(r);
    }
    let all_rows: Vec<usize> = (0..d.nrows()).collect();
    let xs: Vec<&[f64]> = continuous.iter().map(|&p| d.continuous(p).unwrap()).collect();
    let names = |idx: &[usize]| -> Vec<String> {
        idx.iter().map(|&p| d.variable(p).name.clone()).collect()
    };
    let node_name = d.variable(node).name.clone();

    if let Some(y) = d.continuous(node) {
        let (blocks, log_likelihood) = match opts.coding {
            RegimeCoding::Blocks => {
                let mut pooled: Option<GaussianBlock> = None;
                let mut blocks = Vec::with_capacity(configs);
                let mut ll = 0.0;
                for (c, rows) in buckets.iter().enumerate() {
                    if rows.is_empty() {
                        if pooled.is_none() {
                            let fit = ols(&all_rows, y, &xs).map_err(|f| {
                                map_failure(d, node, "pooled fit".into(), f)
                            })?;
                            pooled = Some(fit.block());
                        }
                        let mut b = pooled.clone().unwrap();
                        b.n = 0;
                        b.unbiased_sd = None;
                        b.inherited = true;
                        log::warn!(
                            "`{node_name}`: no rows for configuration {}; using the pooled fit",
                            describe_config(d, &discrete, &radices, c)
                        );
                        blocks.push(b);
                        continue;
                    }
                    let fit = ols(rows, y, &xs).map_err(|f| {
                        map_failure(
                            d,
                            node,
                            format!("configuration {}", describe_config(d, &discrete, &radices, c)),
                            f,
                        )
                    })?;
                    ll += fit.log_likelihood();
                    blocks.push(fit.block());
                }
                (blocks, ll)
            }
            RegimeCoding::Indicators => {
                let mut dummies: Vec<Vec<f64>> = Vec::new();
                for &p in &discrete {
                    let codes = d.codes(p).unwrap();
                    for level in 1..d.levels(p).unwrap().len() {
                        dummies.push(codes.iter().map(|&c| f64::from(u8::from(c == level))).collect());
                    }
                }
                let mut design: Vec<&[f64]> = dummies.iter().map(Vec::as_slice).collect();
                design.extend(xs.iter().copied());
                let fit = ols(&all_rows, y, &design)
                    .map_err(|f| map_failure(d, node, "indicator regression".into(), f))?;
                let shared = fit.block();
                let nd = dummies.len();
                let blocks = buckets
                    .iter()
                    .enumerate()
                    .map(|(c, rows)| {
                        let codes = config_codes(c, &radices);
                        let mut offset = 0;
                        let mut intercept = shared.intercept;
                        for (&code, &r) in codes.iter().zip(&radices) {
                            if code > 0 {
                                intercept += shared.coefficients[offset + code - 1];
                            }
                            offset += r - 1;
                        }
                        GaussianBlock {
                            intercept,
                            coefficients: shared.coefficients[nd..].to_vec(),
                            n: rows.len(),
                            ..shared.clone()
                        }
                    })
                    .collect();
                (blocks, fit.log_likelihood())
            }
        };
        return Ok(LocalFit {
            local: Local::Gaussian(LocalGaussian {
                node: node_name,
                discrete_parents: names(&discrete),
                continuous_parents: names(&continuous),
                coding: opts.coding,
                blocks,
            }),
            log_likelihood,
            radices,
        });
    }

    let codes = d.codes(node).unwrap();
    let states = d.levels(node).unwrap().to_vec();
    let k = states.len();
    let mut blocks = Vec::with_capacity(configs);
    let mut ll = 0.0;
    if continuous.is_empty() {
        let count = |rows: &[usize]| {
            let mut counts = vec![0usize; k];
            for &r in rows {
                counts[codes[r]] += 1;
            }
            counts
        };
        let table = |counts: &[usize], n: usize| -> Vec<f64> {
            counts.iter().map(|&c| c as f64 / n as f64).collect()
        };
        for (c, rows) in buckets.iter().enumerate() {
            if rows.is_empty() {
                let counts = count(&all_rows);
                if d.nrows() == 0 {
                    return Err(map_failure(d, node, "table".into(), Failure::TooFewRows(0, 1)));
                }
                log::warn!(
                    "`{node_name}`: no rows for configuration {}; using the marginal table",
                    describe_config(d, &discrete, &radices, c)
                );
                blocks.push(DiscreteBlock::Table {
                    probabilities: table(&counts, d.nrows()),
                    n: 0,
                    inherited: true,
                });
                continue;
            }
            let counts = count(rows);
            let probabilities = table(&counts, rows.len());
            ll += counts
                .iter()
                .zip(&probabilities)
                .filter(|(&c, _)| c > 0)
                .map(|(&c, p)| c as f64 * p.ln())
                .sum::<f64>();
            blocks.push(DiscreteBlock::Table {
                probabilities,
                n: rows.len(),
                inherited: false,
            });
        }
    } else {
        let mut pooled: Option<Vec<Vec<f64>>> = None;
        for (c, rows) in buckets.iter().enumerate() {
            if rows.is_empty() {
                if pooled.is_none() {
                    let (w, _) = softmax(&all_rows, codes, k, &xs)
                        .map_err(|f| map_failure(d, node, "pooled fit".into(), f))?;
                    pooled = Some(w);
                }
                blocks.push(DiscreteBlock::Softmax {
                    weights: pooled.clone().unwrap(),
                    n: 0,
                    inherited: true,
                });
                continue;
            }
            let (weights, block_ll) = softmax(rows, codes, k, &xs).map_err(|f| {
                map_failure(
                    d,
                    node,
                    format!("configuration {}", describe_config(d, &discrete, &radices, c)),
                    f,
                )
            })?;
            ll += block_ll;
            blocks.push(DiscreteBlock::Softmax {
                weights,
                n: rows.len(),
                inherited: false,
            });
        }
    }
    Ok(LocalFit {
        local: Local::Discrete(LocalDiscrete {
            node: node_name,
            states,
            discrete_parents: names(&discrete),
            continuous_parents: names(&continuous),
            blocks,
        }),
        log_likelihood: ll,
        radices,
    })
}
