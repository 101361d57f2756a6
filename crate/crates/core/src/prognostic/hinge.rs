//! Hinge-basis regression (adaptive regression splines).
//!
//! Forward pass: starting from the intercept, repeatedly add the mirrored
//! hinge pair `B * h(x_v - t)`, `B * h(t - x_v)` that most reduces the
//! residual sum of squares, where `B` is an existing term of degree below
//! `max_degree`, `x_v` a covariate not already in `B`, and `t` a decile knot
//! of `x_v`. Backward pass: delete terms one at a time (smallest RSS increase
//! first) and keep the subset with the lowest generalized cross-validation
//! score.
//!
//! Candidate scoring is incremental. The basis is kept orthonormal and every
//! candidate caches the squared norm of its projection onto it, so scoring
//! only needs inner products with the residual. Inner products of all knots
//! of one (parent, covariate) group with a vector come from a single sweep
//! over the covariate's sorted order using prefix sums.

use nalgebra::{DMatrix, DVector};

use super::{BasisTerm, Factor};

/// Smoothing penalty per knot in the GCV criterion.
pub const GCV_PENALTY: f64 = 3.0;
/// Forward pass stops when a step raises R^2 by less than this.
const MIN_RSQ_GAIN: f64 = 1e-3;
const MAX_RSQ: f64 = 0.999;
/// Relative squared norm below which a candidate column is collinear with
/// the current basis.
const COLLINEAR_TOL: f64 = 1e-7;
const KNOT_QUANTILES: usize = 10;

#[derive(Debug, Clone)]
pub struct HingeFit {
    pub terms: Vec<BasisTerm>,
    pub weights: Vec<f64>,
}

struct SortedCovariate {
    order: Vec<usize>,
    x: Vec<f64>,
    knots: Vec<f64>,
    /// `split[k]` = number of sorted values <= knots[k].
    split: Vec<usize>,
}

fn sorted_covariate(values: &[f64]) -> Option<SortedCovariate> {
    let n = values.len();
    if n < 2 {
        return None;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let x: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    if x[0] == x[n - 1] {
        return None;
    }
    let mut knots: Vec<f64> = Vec::new();
    for q in 1..KNOT_QUANTILES {
        let pos = ((q as f64 / KNOT_QUANTILES as f64) * (n - 1) as f64).round() as usize;
        let t = x[pos];
        // A knot at the maximum gives an all-zero positive hinge.
        if t < x[n - 1] && knots.last().is_none_or(|&last| t > last) {
            knots.push(t);
        }
    }
    let split = knots.iter().map(|&t| x.partition_point(|&v| v <= t)).collect();
    Some(SortedCovariate {
        order,
        x,
        knots,
        split,
    })
}

impl SortedCovariate {
    fn permute(&self, v: &[f64]) -> Vec<f64> {
        self.order.iter().map(|&i| v[i]).collect()
    }

    /// Inner products of `z` with `B * h(x - t)` and `B * h(t - x)` for every
    /// knot, given `z` and `B` already in sorted order.
    fn knot_products(&self, z: &[f64], b: &[f64], pos: &mut [f64], neg: &mut [f64]) {
        let m = self.knots.len();
        let (mut s0, mut s1) = (0.0, 0.0);
        let mut start = 0;
        for k in 0..m {
            let end = self.split[k];
            for i in start..end {
                let zb = z[i] * b[i];
                s0 += zb;
                s1 += zb * self.x[i];
            }
            start = end;
            pos[k] = s0;
            neg[k] = s1;
        }
        let (mut t0, mut t1) = (s0, s1);
        for i in start..self.x.len() {
            let zb = z[i] * b[i];
            t0 += zb;
            t1 += zb * self.x[i];
        }
        for (k, &t) in self.knots.iter().enumerate() {
            let (p0, p1) = (pos[k], neg[k]);
            pos[k] = (t1 - p1) - t * (t0 - p0);
            neg[k] = t * p0 - p1;
        }
    }
}

/// Candidate pairs sharing a parent term and a covariate.
struct Group {
    parent: usize,
    var: usize,
    /// Parent column in the covariate's sorted order.
    parent_sorted: Vec<f64>,
    cc_pos: Vec<f64>,
    cc_neg: Vec<f64>,
    /// Squared norms of the candidates' projections onto the basis, and the
    /// inner product of the two projections.
    ss_pos: Vec<f64>,
    ss_neg: Vec<f64>,
    cross: Vec<f64>,
}

#[derive(Clone, Copy)]
enum Pick {
    Pair,
    Pos,
    Neg,
}

struct Forward<'a> {
    raw: &'a [Vec<f64>],
    sorted: Vec<Option<SortedCovariate>>,
    max_degree: usize,
    columns: Vec<Vec<f64>>,
    terms: Vec<BasisTerm>,
    q: Vec<Vec<f64>>,
    resid: Vec<f64>,
    groups: Vec<Group>,
    pos: Vec<f64>,
    neg: Vec<f64>,
}

impl<'a> Forward<'a> {
    fn new(raw: &'a [Vec<f64>], y: &[f64], max_degree: usize) -> Self {
        let n = y.len();
        let sorted = raw.iter().map(|c| sorted_covariate(c)).collect();
        let mean = y.iter().sum::<f64>() / n as f64;
        let mut fw = Forward {
            raw,
            sorted,
            max_degree,
            columns: vec![vec![1.0; n]],
            terms: vec![BasisTerm::intercept()],
            q: vec![vec![1.0 / (n as f64).sqrt(); n]],
            resid: y.iter().map(|v| v - mean).collect(),
            groups: Vec::new(),
            pos: vec![0.0; KNOT_QUANTILES],
            neg: vec![0.0; KNOT_QUANTILES],
        };
        fw.open_groups(0);
        fw
    }

    fn rss(&self) -> f64 {
        self.resid.iter().map(|r| r * r).sum()
    }

    /// Registers the candidate groups whose parent is term `t`.
    fn open_groups(&mut self, t: usize) {
        if self.terms[t].degree() >= self.max_degree {
            return;
        }
        for var in 0..self.sorted.len() {
            let Some(sc) = self.sorted[var].as_ref() else {
                continue;
            };
            if self.terms[t].uses_var(var) {
                continue;
            }
            let parent_sorted = sc.permute(&self.columns[t]);
            if parent_sorted.iter().all(|&b| b == 0.0) {
                continue;
            }
            let m = sc.knots.len();
            let b2: Vec<f64> = parent_sorted.iter().map(|b| b * b).collect();
            // <B h, B h> = sum B^2 (x - t)^2 over the hinge's support.
            let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
            let mut pre = Vec::with_capacity(m);
            let mut start = 0;
            for k in 0..m {
                for i in start..sc.split[k] {
                    let x = sc.x[i];
                    s0 += b2[i];
                    s1 += b2[i] * x;
                    s2 += b2[i] * x * x;
                }
                start = sc.split[k];
                pre.push((s0, s1, s2));
            }
            for i in start..sc.x.len() {
                let x = sc.x[i];
                s0 += b2[i];
                s1 += b2[i] * x;
                s2 += b2[i] * x * x;
            }
            let mut cc_pos = vec![0.0; m];
            let mut cc_neg = vec![0.0; m];
            for (k, &t) in sc.knots.iter().enumerate() {
                let (p0, p1, p2) = pre[k];
                let (u0, u1, u2) = (s0 - p0, s1 - p1, s2 - p2);
                cc_pos[k] = (u2 - 2.0 * t * u1 + t * t * u0).max(0.0);
                cc_neg[k] = (p2 - 2.0 * t * p1 + t * t * p0).max(0.0);
            }
            let mut g = Group {
                parent: t,
                var,
                parent_sorted,
                cc_pos,
                cc_neg,
                ss_pos: vec![0.0; m],
                ss_neg: vec![0.0; m],
                cross: vec![0.0; m],
            };
            for q in &self.q {
                let qs = sc.permute(q);
                accumulate(sc, &mut g, &qs, &mut self.pos, &mut self.neg);
            }
            self.groups.push(g);
        }
    }

    /// Best candidate as (RSS reduction, group, knot, pick).
    fn best_candidate(&mut self) -> Option<(f64, usize, usize, Pick)> {
        let resid_sorted: Vec<Option<Vec<f64>>> = self
            .sorted
            .iter()
            .map(|s| s.as_ref().map(|sc| sc.permute(&self.resid)))
            .collect();
        let mut best: Option<(f64, usize, usize, Pick)> = None;
        for (gi, g) in self.groups.iter().enumerate() {
            let sc = self.sorted[g.var].as_ref().expect("group covariate is usable");
            let rs = resid_sorted[g.var].as_ref().expect("group covariate is usable");
            let m = sc.knots.len();
            sc.knot_products(rs, &g.parent_sorted, &mut self.pos[..m], &mut self.neg[..m]);
            for k in 0..m {
                let (a, b) = (self.pos[k], self.neg[k]);
                let p = g.cc_pos[k] - g.ss_pos[k];
                let q = g.cc_neg[k] - g.ss_neg[k];
                let x = -g.cross[k];
                let p_ok = p > COLLINEAR_TOL * g.cc_pos[k] && g.cc_pos[k] > 0.0;
                let q_ok = q > COLLINEAR_TOL * g.cc_neg[k] && g.cc_neg[k] > 0.0;
                let det = p * q - x * x;
                let cand = if p_ok && q_ok && det > COLLINEAR_TOL * p * q {
                    ((q * a * a - 2.0 * x * a * b + p * b * b) / det, Pick::Pair)
                } else {
                    let rp = if p_ok { a * a / p } else { f64::NEG_INFINITY };
                    let rn = if q_ok { b * b / q } else { f64::NEG_INFINITY };
                    if rp >= rn {
                        (rp, Pick::Pos)
                    } else {
                        (rn, Pick::Neg)
                    }
                };
                if cand.0.is_finite() && best.is_none_or(|(r, ..)| cand.0 > r) {
                    best = Some((cand.0, gi, k, cand.1));
                }
            }
        }
        best
    }

    fn add_term(&mut self, term: BasisTerm, parent: usize) -> bool {
        let col: Vec<f64> = {
            let f = term.factors.last().expect("hinge term has a factor");
            self.columns[parent]
                .iter()
                .enumerate()
                .map(|(i, b)| b * f.eval_column(self.raw, i))
                .collect()
        };
        let Some(q_new) = orthonormalize(&self.q, &col) else {
            return false;
        };
        let d: f64 = self.resid.iter().zip(&q_new).map(|(r, q)| r * q).sum();
        for (r, q) in self.resid.iter_mut().zip(&q_new) {
            *r -= d * q;
        }
        let permuted: Vec<Option<Vec<f64>>> = self
            .sorted
            .iter()
            .map(|s| s.as_ref().map(|sc| sc.permute(&q_new)))
            .collect();
        for g in self.groups.iter_mut() {
            let sc = self.sorted[g.var].as_ref().expect("group covariate is usable");
            let qs = permuted[g.var].as_ref().expect("group covariate is usable");
            accumulate(sc, g, qs, &mut self.pos, &mut self.neg);
        }
        self.q.push(q_new);
        self.terms.push(term);
        self.columns.push(col);
        let t = self.terms.len() - 1;
        self.open_groups(t);
        true
    }
}

fn accumulate(sc: &SortedCovariate, g: &mut Group, q_sorted: &[f64], pos: &mut [f64], neg: &mut [f64]) {
    let m = sc.knots.len();
    sc.knot_products(q_sorted, &g.parent_sorted, &mut pos[..m], &mut neg[..m]);
    for k in 0..m {
        g.ss_pos[k] += pos[k] * pos[k];
        g.ss_neg[k] += neg[k] * neg[k];
        g.cross[k] += pos[k] * neg[k];
    }
}

/// Gram-Schmidt (twice) against an orthonormal basis; None when collinear.
fn orthonormalize(basis: &[Vec<f64>], col: &[f64]) -> Option<Vec<f64>> {
    let norm0: f64 = col.iter().map(|v| v * v).sum();
    if !(norm0 > 0.0) {
        return None;
    }
    let mut v = col.to_vec();
    for _ in 0..2 {
        for q in basis {
            let d: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            for (vi, qi) in v.iter_mut().zip(q) {
                *vi -= d * qi;
            }
        }
    }
    let norm: f64 = v.iter().map(|x| x * x).sum();
    if norm < COLLINEAR_TOL * norm0 {
        return None;
    }
    let s = 1.0 / norm.sqrt();
    v.iter_mut().for_each(|x| *x *= s);
    Some(v)
}

/// GCV = (RSS / n) / (1 - C / n)^2 with C = M + penalty * (M - 1) / 2.
pub fn gcv(rss: f64, n: usize, n_terms: usize) -> f64 {
    let m = n_terms as f64;
    let c = m + GCV_PENALTY * (m - 1.0) / 2.0;
    let nf = n as f64;
    let denom = 1.0 - c / nf;
    if denom <= 0.0 {
        return f64::INFINITY;
    }
    (rss / nf) / (denom * denom)
}

/// Least squares on the selected columns via the (scaled) Gram matrix.
/// Returns the coefficients, the diagonal of the inverse Gram matrix and the
/// explained sum of squares.
fn gram_solve(gram: &DMatrix<f64>, xty: &DVector<f64>, active: &[usize]) -> Option<(Vec<f64>, Vec<f64>, f64)> {
    let m = active.len();
    let scale: Vec<f64> = active.iter().map(|&j| 1.0 / gram[(j, j)].sqrt()).collect();
    let g = DMatrix::from_fn(m, m, |a, b| gram[(active[a], active[b])] * scale[a] * scale[b]);
    let r = DVector::from_fn(m, |a, _| xty[active[a]] * scale[a]);
    let inv = g.cholesky()?.inverse();
    let beta_s = &inv * &r;
    let explained = beta_s.dot(&r);
    let beta = (0..m).map(|a| beta_s[a] * scale[a]).collect();
    let diag = (0..m).map(|a| inv[(a, a)] * scale[a] * scale[a]).collect();
    Some((beta, diag, explained))
}

/// Default forward-pass size for `p` covariates: min(200, max(20, 2p)) + 1.
pub fn default_forward_terms(p: usize) -> usize {
    (2 * p).clamp(20, 200) + 1
}

/// Fits the hinge model. `raw` holds the covariate columns. The forward pass
/// grows at most `forward_terms` terms; the pruned model keeps at most
/// `num_terms`.
pub fn fit(raw: &[Vec<f64>], y: &[f64], max_degree: usize, forward_terms: usize, num_terms: usize) -> HingeFit {
    let n = y.len();
    let mean = y.iter().sum::<f64>() / n as f64;
    let tss: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    let intercept_only = HingeFit {
        terms: vec![BasisTerm::intercept()],
        weights: vec![mean],
    };
    if !(tss > 1e-12 * (1.0 + mean * mean) * n as f64) || num_terms < 2 || forward_terms < 2 {
        return intercept_only;
    }

    let mut fw = Forward::new(raw, y, max_degree.max(1));
    let mut rss = fw.rss();
    while fw.terms.len() < forward_terms {
        let Some((_, gi, k, mut pick)) = fw.best_candidate() else {
            break;
        };
        if fw.terms.len() + 1 == forward_terms {
            if let Pick::Pair = pick {
                pick = Pick::Pos;
            }
        }
        let (parent, var) = (fw.groups[gi].parent, fw.groups[gi].var);
        let knot = fw.sorted[var].as_ref().expect("usable").knots[k];
        let parent_term = fw.terms[parent].clone();
        let make = |sign: i8| parent_term.with(Factor::Hinge { var, knot, sign });
        let added = match pick {
            Pick::Pair => {
                let a = fw.add_term(make(1), parent);
                let b = fw.add_term(make(-1), parent);
                a || b
            }
            Pick::Pos => fw.add_term(make(1), parent),
            Pick::Neg => fw.add_term(make(-1), parent),
        };
        if !added {
            break;
        }
        let new_rss = fw.rss();
        let gain = (rss - new_rss) / tss;
        rss = new_rss;
        if gain < MIN_RSQ_GAIN || 1.0 - rss / tss > MAX_RSQ {
            break;
        }
    }

    // Backward pass on the Gram matrix of the forward basis.
    let m = fw.columns.len();
    let gram = DMatrix::from_fn(m, m, |a, b| {
        fw.columns[a].iter().zip(&fw.columns[b]).map(|(u, v)| u * v).sum::<f64>()
    });
    let xty = DVector::from_fn(m, |a, _| {
        fw.columns[a].iter().zip(y).map(|(u, v)| u * v).sum::<f64>()
    });
    let yty: f64 = y.iter().map(|v| v * v).sum();
    let mut active: Vec<usize> = (0..m).collect();
    let mut best: Option<(f64, Vec<usize>, Vec<f64>)> = None;
    loop {
        let Some((beta, diag, explained)) = gram_solve(&gram, &xty, &active) else {
            break;
        };
        let sub_rss = (yty - explained).max(0.0);
        let score = gcv(sub_rss, n, active.len());
        if active.len() <= num_terms && best.as_ref().is_none_or(|(s, ..)| score < *s) {
            best = Some((score, active.clone(), beta.clone()));
        }
        if active.len() == 1 {
            break;
        }
        // Position 0 is the intercept and is never deleted.
        let drop = (1..active.len())
            .min_by(|&a, &b| {
                let da = beta[a] * beta[a] / diag[a];
                let db = beta[b] * beta[b] / diag[b];
                da.total_cmp(&db)
            })
            .expect("at least two active terms");
        active.remove(drop);
    }
    match best {
        Some((_, active, weights)) => HingeFit {
            terms: active.iter().map(|&j| fw.terms[j].clone()).collect(),
            weights,
        },
        None => intercept_only,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    fn predict(fit: &HingeFit, raw: &[Vec<f64>], i: usize) -> f64 {
        let row: Vec<f64> = raw.iter().map(|c| c[i]).collect();
        fit.terms.iter().zip(&fit.weights).map(|(t, w)| w * t.eval(&row)).sum()
    }

    #[test]
    fn knot_products_match_direct_sums() {
        let mut r = rng::seeded(1);
        let x: Vec<f64> = (0..50).map(|_| r.sample(StandardNormal)).collect();
        let b: Vec<f64> = (0..50).map(|_| r.random::<f64>()).collect();
        let z: Vec<f64> = (0..50).map(|_| r.sample(StandardNormal)).collect();
        let sc = sorted_covariate(&x).unwrap();
        let m = sc.knots.len();
        let (mut pos, mut neg) = (vec![0.0; m], vec![0.0; m]);
        sc.knot_products(&sc.permute(&z), &sc.permute(&b), &mut pos, &mut neg);
        for (k, &t) in sc.knots.iter().enumerate() {
            let dp: f64 = (0..50).map(|i| z[i] * b[i] * (x[i] - t).max(0.0)).sum();
            let dn: f64 = (0..50).map(|i| z[i] * b[i] * (t - x[i]).max(0.0)).sum();
            assert!((pos[k] - dp).abs() < 1e-10 && (neg[k] - dn).abs() < 1e-10);
        }
    }

    #[test]
    fn recovers_single_hinge() {
        let mut r = rng::seeded(3);
        let n = 1000;
        let w1: Vec<f64> = (0..n).map(|_| r.sample(StandardNormal)).collect();
        let w2: Vec<f64> = (0..n).map(|_| r.sample(StandardNormal)).collect();
        let y: Vec<f64> = w1.iter().map(|&w| 2.0 * (w + 1.0).max(0.0)).collect();
        let raw = vec![w1, w2];
        let fit = fit(&raw, &y, 3, 21, 50);
        let rmse = ((0..n).map(|i| (predict(&fit, &raw, i) - y[i]).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!(rmse < 0.05, "rmse {rmse}, terms {}", fit.terms.len());
    }

    #[test]
    fn constant_outcome_gives_intercept() {
        let raw = vec![(0..30).map(|i| i as f64).collect::<Vec<_>>()];
        let fit = fit(&raw, &[5.0; 30], 3, 21, 50);
        assert_eq!(fit.terms.len(), 1);
        assert_eq!(fit.weights, vec![5.0]);
    }

    #[test]
    fn zero_variance_covariate_is_skipped() {
        let raw = vec![vec![1.0; 40], (0..40).map(|i| i as f64).collect()];
        let y: Vec<f64> = (0..40).map(|i| ((i as f64) - 20.0).abs()).collect();
        let fit = fit(&raw, &y, 2, 21, 20);
        assert!(fit.terms.iter().all(|t| !t.uses_var(0)));
    }

    #[test]
    fn gcv_penalizes_terms() {
        assert!(gcv(10.0, 100, 5) > gcv(10.0, 100, 3));
        assert!((gcv(10.0, 100, 1) - 0.1 / 0.99f64.powi(2)).abs() < 1e-15);
    }

    #[test]
    fn term_limits() {
        assert_eq!(default_forward_terms(5), 21);
        assert_eq!(default_forward_terms(30), 61);
        assert_eq!(default_forward_terms(500), 201);
        let mut r = rng::seeded(8);
        let raw: Vec<Vec<f64>> = (0..3).map(|_| (0..400).map(|_| r.sample(StandardNormal)).collect()).collect();
        let y: Vec<f64> = (0..400).map(|i| (raw[0][i] * 3.0).sin() + raw[1][i].abs() * raw[2][i]).collect();
        for (forward, prune) in [(21, 50), (21, 4), (7, 50)] {
            let f = fit(&raw, &y, 3, forward, prune);
            assert!(f.terms.len() <= prune.min(forward), "{forward} {prune}: {}", f.terms.len());
        }
    }
}
