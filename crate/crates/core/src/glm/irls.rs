//! Maximum likelihood fitting by iteratively reweighted least squares.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::glm::FamilyLink;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IrlsOptions {
    /// Convergence when max |score_j| <= tol_per_obs * n.
    pub tol_per_obs: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    /// Divergence sentinel: every |beta_j| must stay below this bound.
    pub bound_b: f64,
}

impl Default for IrlsOptions {
    fn default() -> Self {
        IrlsOptions {
            tol_per_obs: 1e-8,
            max_iter: 100,
            max_halvings: 20,
            bound_b: 30.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IrlsOutput {
    pub beta: Vec<f64>,
    pub iterations: usize,
    pub score_norm: f64,
    pub log_likelihood: f64,
    /// Log-likelihood after each accepted iteration.
    pub path: Vec<f64>,
}

/// Relative pivot below which a column counts as collinear.
const RANK_TOL: f64 = 1e-10;

/// Detects exact or near collinearity by a Cholesky factorization of the
/// column-normalized Gram matrix.
pub fn check_rank(x: &DMatrix<f64>) -> Result<()> {
    let q = x.ncols();
    let gram = x.transpose() * x;
    let mut scale = vec![0.0; q];
    for j in 0..q {
        if !(gram[(j, j)] > 0.0) {
            return Err(Error::SingularDesign { column: j });
        }
        scale[j] = 1.0 / gram[(j, j)].sqrt();
    }
    let mut l = DMatrix::<f64>::zeros(q, q);
    for j in 0..q {
        let mut d = gram[(j, j)] * scale[j] * scale[j];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d < RANK_TOL {
            return Err(Error::SingularDesign { column: j });
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..q {
            let mut s = gram[(i, j)] * scale[i] * scale[j];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(())
}

fn log_likelihood(fl: &FamilyLink, y: &[f64], mu: &[f64]) -> f64 {
    y.iter().zip(mu).map(|(&yi, &mi)| fl.log_likelihood(yi, mi)).sum()
}

/// Score vector X^T [(y - mu) * (dmu/deta) / V(mu)].
pub fn score(fl: &FamilyLink, x: &DMatrix<f64>, y: &[f64], mu: &[f64]) -> DVector<f64> {
    let u = DVector::from_iterator(
        y.len(),
        y.iter()
            .zip(mu)
            .map(|(&yi, &mi)| (yi - mi) * fl.mu_eta(mi) / fl.variance(mi)),
    );
    x.tr_mul(&u)
}

fn weighted_normal_equations(
    x: &DMatrix<f64>,
    w: &[f64],
    z: &[f64],
) -> (DMatrix<f64>, DVector<f64>) {
    let q = x.ncols();
    let mut xtwx = DMatrix::<f64>::zeros(q, q);
    let mut xtwz = DVector::<f64>::zeros(q);
    for i in 0..x.nrows() {
        let wi = w[i];
        if wi == 0.0 {
            continue;
        }
        for a in 0..q {
            let xa = x[(i, a)] * wi;
            xtwz[a] += xa * z[i];
            for b in 0..=a {
                xtwx[(a, b)] += xa * x[(i, b)];
            }
        }
    }
    for a in 0..q {
        for b in 0..a {
            xtwx[(b, a)] = xtwx[(a, b)];
        }
    }
    (xtwx, xtwz)
}

fn linear_predictor(x: &DMatrix<f64>, beta: &DVector<f64>) -> Vec<f64> {
    (x * beta).iter().copied().collect()
}

/// Fisher information X^T W X at the given means.
pub fn information(fl: &FamilyLink, x: &DMatrix<f64>, mu: &[f64]) -> DMatrix<f64> {
    let w: Vec<f64> = mu
        .iter()
        .map(|&m| {
            let d = fl.mu_eta(m);
            d * d / fl.variance(m)
        })
        .collect();
    weighted_normal_equations(x, &w, &vec![0.0; mu.len()]).0
}

pub fn irls(fl: &FamilyLink, x: &DMatrix<f64>, y: &[f64], opts: &IrlsOptions) -> Result<IrlsOutput> {
    let n = x.nrows();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: y.len(),
        });
    }
    if n == 0 {
        return Err(Error::Degenerate("cannot fit a GLM to zero rows".into()));
    }
    for (i, &yi) in y.iter().enumerate() {
        fl.check_outcome(yi, i + 1)?;
    }
    check_rank(x)?;

    let ybar = y.iter().sum::<f64>() / n as f64;
    let mut mu: Vec<f64> = y.iter().map(|&yi| fl.initial_mean(yi, ybar)).collect();
    let mut eta: Vec<f64> = mu.iter().map(|&m| fl.link(m)).collect::<Result<_>>()?;
    let mut beta: Option<DVector<f64>> = None;
    let mut ll = f64::NEG_INFINITY;
    let mut path = Vec::new();
    let tol = opts.tol_per_obs * n as f64;
    let mut score_norm = f64::INFINITY;

    for iter in 1..=opts.max_iter {
        let mut w = Vec::with_capacity(n);
        let mut z = Vec::with_capacity(n);
        for i in 0..n {
            let d = fl.mu_eta(mu[i]);
            let v = fl.variance(mu[i]);
            w.push(d * d / v);
            z.push(eta[i] + (y[i] - mu[i]) / d);
        }
        let (xtwx, xtwz) = weighted_normal_equations(x, &w, &z);
        let chol = match Cholesky::<f64, Dyn>::new(xtwx) {
            Some(c) => c,
            // Weights collapsing mid-fit means the fitted means ran to the
            // boundary of the mean space.
            None => {
                return Err(match &beta {
                    Some(b) => divergence_at_max(b, opts.bound_b),
                    None => Error::SingularDesign {
                        column: x.ncols().saturating_sub(1),
                    },
                })
            }
        };
        let mut candidate = chol.solve(&xtwz);

        let mut eta_new = linear_predictor(x, &candidate);
        let mut mu_new: Vec<f64> = eta_new.iter().map(|&e| fl.inverse_link(e)).collect();
        let mut ll_new = log_likelihood(fl, y, &mu_new);
        if let Some(prev) = &beta {
            let mut halvings = 0;
            while (!ll_new.is_finite() || ll_new < ll - 1e-12 * ll.abs().max(1.0))
                && halvings < opts.max_halvings
            {
                candidate = (prev + &candidate) * 0.5;
                eta_new = linear_predictor(x, &candidate);
                mu_new = eta_new.iter().map(|&e| fl.inverse_link(e)).collect();
                ll_new = log_likelihood(fl, y, &mu_new);
                halvings += 1;
            }
        }
        if candidate.iter().any(|b| !b.is_finite()) || !ll_new.is_finite() {
            let (index, value) = candidate
                .iter()
                .enumerate()
                .find(|(_, b)| !b.is_finite())
                .map(|(j, b)| (j, *b))
                .unwrap_or((0, f64::NAN));
            return Err(Error::Divergence {
                index,
                value,
                bound: opts.bound_b,
            });
        }
        check_bound(&candidate, opts.bound_b)?;
        beta = Some(candidate);
        eta = eta_new;
        mu = mu_new;
        ll = ll_new;
        path.push(ll);

        let s = score(fl, x, y, &mu);
        score_norm = s.amax();
        if score_norm <= tol {
            let beta = beta.expect("set above");
            check_bound(&beta, opts.bound_b)?;
            return Ok(IrlsOutput {
                beta: beta.iter().copied().collect(),
                iterations: iter,
                score_norm,
                log_likelihood: ll,
                path,
            });
        }
    }
    if let Some(b) = &beta {
        check_bound(b, opts.bound_b)?;
    }
    Err(Error::Convergence {
        iterations: opts.max_iter,
        score_norm,
    })
}

fn divergence_at_max(beta: &DVector<f64>, bound: f64) -> Error {
    let (index, value) = beta
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(j, b)| (j, *b))
        .unwrap_or((0, f64::NAN));
    Error::Divergence { index, value, bound }
}

fn check_bound(beta: &DVector<f64>, bound: f64) -> Result<()> {
    for (index, &value) in beta.iter().enumerate() {
        if value.abs() > bound {
            return Err(Error::Divergence {
                index,
                value,
                bound,
            });
        }
    }
    Ok(())
}
