//! Ordered probit for the bucket a transaction lands in.
//!
//! With latent index `x'β` and cutpoints `κ_1 < … < κ_{K-1}`,
//!
//! ```text
//! P(y = j | x) = Φ(κ_j − x'β) − Φ(κ_{j−1} − x'β),   κ_0 = −∞, κ_K = +∞.
//! ```
//!
//! A negative coefficient moves probability mass toward the early buckets.
//! There is no intercept; the cutpoints carry the location.
//!
//! Estimation is Newton–Raphson with analytic first and second derivatives.
//! Cutpoint ordering is enforced by iterating on `α_1 = κ_1`,
//! `α_m = ln(κ_m − κ_{m−1})`, and every step is guarded by step-halving so the
//! log-likelihood never decreases.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal;
use crate::position::{DesignRow, DesignSpec};
use crate::reduce::{chunked_fold, Accumulate};

/// Probabilities below this are clamped before taking logs.
pub const PROB_FLOOR: f64 = 1e-300;

/// Estimation sample: row-major regressors and 1-based categories.
#[derive(Debug, Clone)]
pub struct ProbitData {
    names: Vec<String>,
    categories: u8,
    x: Vec<f64>,
    y: Vec<u8>,
}

impl ProbitData {
    pub fn new(names: Vec<String>, categories: u8, x: Vec<f64>, y: Vec<u8>) -> Result<Self> {
        let p = names.len();
        if categories < 2 {
            return Err(Error::Input("need at least two categories".into()));
        }
        if x.len() != p * y.len() {
            return Err(Error::Input(format!(
                "regressor matrix has {} values, expected {} x {}",
                x.len(),
                y.len(),
                p
            )));
        }
        if let Some(bad) = y.iter().find(|j| **j == 0 || **j > categories) {
            return Err(Error::Input(format!(
                "category {bad} outside 1..={categories}"
            )));
        }
        Ok(Self {
            names,
            categories,
            x,
            y,
        })
    }

    pub fn from_design(rows: &[DesignRow], spec: DesignSpec) -> Self {
        let p = spec.width();
        let mut x = vec![0.0; rows.len() * p];
        for (r, chunk) in rows.iter().zip(x.chunks_mut(p)) {
            spec.fill(r, chunk);
        }
        Self {
            names: spec.names(),
            categories: spec.bucketing.count(),
            x,
            y: rows.iter().map(|r| r.block_bucket).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.names.len()
    }

    pub fn categories(&self) -> u8 {
        self.categories
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.p();
        &self.x[i * p..(i + 1) * p]
    }

    pub fn category(&self, i: usize) -> u8 {
        self.y[i]
    }

    fn obs(&self) -> Vec<(&[f64], u8)> {
        let p = self.p();
        if p == 0 {
            return self.y.iter().map(|y| (&[][..], *y)).collect();
        }
        self.x.chunks(p).zip(self.y.iter().copied()).collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_cutpoints(cutpoints: &[f64]) -> Result<()> {
    if cutpoints.iter().any(|c| !c.is_finite()) {
        return Err(Error::Domain("cutpoints must be finite".into()));
    }
    if cutpoints.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Domain(format!(
            "cutpoints must be strictly increasing: {cutpoints:?}"
        )));
    }
    Ok(())
}

/// Cell edges `(κ_{j−1} − η, κ_j − η)` for category `j`.
fn edges(cutpoints: &[f64], j: u8, eta: f64) -> (f64, f64) {
    let j = j as usize;
    let lo = if j == 1 {
        f64::NEG_INFINITY
    } else {
        cutpoints[j - 2] - eta
    };
    let hi = if j == cutpoints.len() + 1 {
        f64::INFINITY
    } else {
        cutpoints[j - 1] - eta
    };
    (lo, hi)
}

/// Probability of each category `1..=K` at latent index `eta`.
pub fn cell_probabilities(cutpoints: &[f64], eta: f64) -> Vec<f64> {
    (1..=cutpoints.len() as u8 + 1)
        .map(|j| {
            let (lo, hi) = edges(cutpoints, j, eta);
            normal::interval_prob(lo, hi)
        })
        .collect()
}

#[derive(Debug, Clone, Default)]
struct LikAcc {
    ll: f64,
    clamped: usize,
}

impl Accumulate for LikAcc {
    fn merge(&mut self, o: Self) {
        self.ll += o.ll;
        self.clamped += o.clamped;
    }
}

fn loglik_acc(beta: &[f64], cutpoints: &[f64], data: &ProbitData) -> LikAcc {
    chunked_fold(&data.obs(), LikAcc::default, |acc, (x, y)| {
        let eta = dot(x, beta);
        let (lo, hi) = edges(cutpoints, *y, eta);
        let mut p = normal::interval_prob(lo, hi);
        if !(p >= PROB_FLOOR) {
            p = PROB_FLOOR;
            acc.clamped += 1;
        }
        acc.ll += p.ln();
    })
}

/// Σ_i log P(y_i | x_i) at `(beta, cutpoints)`.
pub fn log_likelihood(beta: &[f64], cutpoints: &[f64], data: &ProbitData) -> Result<f64> {
    check_params(beta, cutpoints, data)?;
    Ok(loglik_acc(beta, cutpoints, data).ll)
}

fn check_params(beta: &[f64], cutpoints: &[f64], data: &ProbitData) -> Result<()> {
    if beta.len() != data.p() {
        return Err(Error::Input(format!(
            "beta has {} entries for {} regressors",
            beta.len(),
            data.p()
        )));
    }
    if cutpoints.len() + 1 != data.categories() as usize {
        return Err(Error::Input(format!(
            "{} cutpoints for {} categories",
            cutpoints.len(),
            data.categories()
        )));
    }
    check_cutpoints(cutpoints)
}

#[derive(Debug, Clone)]
struct DerivAcc {
    ll: f64,
    clamped: usize,
    grad: Vec<f64>,
    /// Row-major full Hessian; only the upper triangle is accumulated.
    hess: Vec<f64>,
}

impl DerivAcc {
    fn new(d: usize) -> Self {
        Self {
            ll: 0.0,
            clamped: 0,
            grad: vec![0.0; d],
            hess: vec![0.0; d * d],
        }
    }
}

impl Accumulate for DerivAcc {
    fn merge(&mut self, o: Self) {
        self.ll += o.ll;
        self.clamped += o.clamped;
        self.grad.iter_mut().zip(o.grad).for_each(|(a, b)| *a += b);
        self.hess.iter_mut().zip(o.hess).for_each(|(a, b)| *a += b);
    }
}

/// Log-likelihood, gradient and Hessian in `(β, κ)` coordinates.
struct Derivatives {
    ll: f64,
    clamped: usize,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
}

fn derivatives(beta: &[f64], cutpoints: &[f64], data: &ProbitData) -> Derivatives {
    let p = data.p();
    let d = p + cutpoints.len();
    let acc = chunked_fold(&data.obs(), || DerivAcc::new(d), |acc, (x, y)| {
        let eta = dot(x, beta);
        let (a, b) = edges(cutpoints, *y, eta);
        let mut prob = normal::interval_prob(a, b);
        if !(prob >= PROB_FLOOR) {
            prob = PROB_FLOOR;
            acc.clamped += 1;
        }
        acc.ll += prob.ln();
        let (pa, pb) = (normal::pdf(a), normal::pdf(b));
        let apa = if a.is_finite() { a * pa } else { 0.0 };
        let bpb = if b.is_finite() { b * pb } else { 0.0 };
        // d log P / d(upper edge), d log P / d(lower edge) and second derivatives.
        let gb = pb / prob;
        let ga = -pa / prob;
        let hbb = -bpb / prob - gb * gb;
        let haa = apa / prob - ga * ga;
        let hab = -ga * gb;

        let j = *y as usize;
        let upper = (j <= cutpoints.len()).then(|| p + j - 1);
        let lower = (j >= 2).then(|| p + j - 2);

        // Edges move with −x through β and +1 through their own cutpoint.
        let gx = -(gb + ga);
        let sxx = hbb + haa + 2.0 * hab;
        let xu = -(hbb + hab);
        let xl = -(haa + hab);
        for r in 0..p {
            acc.grad[r] += gx * x[r];
            let row = r * d;
            for c in r..p {
                acc.hess[row + c] += sxx * x[r] * x[c];
            }
            if let Some(u) = upper {
                acc.hess[row + u] += xu * x[r];
            }
            if let Some(l) = lower {
                acc.hess[row + l] += xl * x[r];
            }
        }
        if let Some(u) = upper {
            acc.grad[u] += gb;
            acc.hess[u * d + u] += hbb;
        }
        if let Some(l) = lower {
            acc.grad[l] += ga;
            acc.hess[l * d + l] += haa;
        }
        if let (Some(u), Some(l)) = (upper, lower) {
            acc.hess[l * d + u] += hab;
        }
    });
    let mut hess = DMatrix::from_row_slice(d, d, &acc.hess);
    for r in 0..d {
        for c in 0..r {
            hess[(r, c)] = hess[(c, r)];
        }
    }
    Derivatives {
        ll: acc.ll,
        clamped: acc.clamped,
        grad: DVector::from_vec(acc.grad),
        hess,
    }
}

/// Analytic gradient and observed information (negative Hessian) of the
/// log-likelihood, over `(β, κ)` in that order.
pub fn score_and_information(
    beta: &[f64],
    cutpoints: &[f64],
    data: &ProbitData,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_params(beta, cutpoints, data)?;
    let d = derivatives(beta, cutpoints, data);
    Ok((d.grad, -d.hess))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    /// Convergence threshold on the ∞-norm of the per-observation gradient.
    pub gradient_tol: f64,
    pub max_iterations: usize,
    pub max_halvings: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            gradient_tol: 1e-8,
            max_iterations: 200,
            max_halvings: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbitFit {
    pub names: Vec<String>,
    pub beta: Vec<f64>,
    pub cutpoints: Vec<f64>,
    /// Covariance of `(β, κ)`, the inverse observed information.
    pub covariance: DMatrix<f64>,
    pub log_likelihood: f64,
    pub n_obs: usize,
    pub converged: bool,
    pub iterations: usize,
    /// ∞-norm of the per-observation gradient at the returned estimate.
    pub gradient_norm: f64,
    /// Observations whose probability hit [`PROB_FLOOR`] at the estimate.
    pub clamped_cells: usize,
}

impl ProbitFit {
    pub fn index(&self, x: &[f64]) -> f64 {
        dot(x, &self.beta)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn coef(&self, name: &str) -> Option<f64> {
        self.position(name).map(|i| self.beta[i])
    }

    pub fn std_errors(&self) -> Vec<f64> {
        self.covariance.diagonal().iter().map(|v| v.sqrt()).collect()
    }

    pub fn cell_probabilities(&self, x: &[f64]) -> Vec<f64> {
        cell_probabilities(&self.cutpoints, self.index(x))
    }
}

fn cutpoints_to_alpha(k: &[f64]) -> Vec<f64> {
    let mut a = Vec::with_capacity(k.len());
    for (m, v) in k.iter().enumerate() {
        a.push(if m == 0 { *v } else { (v - k[m - 1]).ln() });
    }
    a
}

fn alpha_to_cutpoints(a: &[f64]) -> Vec<f64> {
    let mut k = Vec::with_capacity(a.len());
    for (m, v) in a.iter().enumerate() {
        k.push(if m == 0 { *v } else { k[m - 1] + v.exp() });
    }
    k
}

/// Solves `info · δ = g` for a symmetric `info`, adding ridge damping when it
/// is not positive definite.
fn damped_solve(info: &DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = info.clone().cholesky() {
        return Some(ch.solve(g));
    }
    let scale = info
        .diagonal()
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-12);
    let mut lambda = 1e-8 * scale;
    for _ in 0..40 {
        let mut m = info.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += lambda;
        }
        if let Some(ch) = m.cholesky() {
            return Some(ch.solve(g));
        }
        lambda *= 10.0;
    }
    None
}

fn invert_symmetric(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if let Some(ch) = m.clone().cholesky() {
        return Some(ch.inverse());
    }
    m.clone().try_inverse()
}

/// Checks the sample can identify the model: every category observed and
/// no regressor constant.
pub fn check_sample(data: &ProbitData) -> Result<()> {
    let k = data.categories();
    let mut counts = vec![0usize; k as usize];
    for i in 0..data.n() {
        counts[data.category(i) as usize - 1] += 1;
    }
    if let Some(j) = counts.iter().position(|c| *c == 0) {
        return Err(Error::Input(format!(
            "no observations in category {} of {k}",
            j + 1
        )));
    }
    for (c, name) in data.names().iter().enumerate() {
        let first = data.row(0)[c];
        if (1..data.n()).all(|i| data.row(i)[c] == first) {
            return Err(Error::Input(format!("regressor {name} is constant in the sample")));
        }
    }
    Ok(())
}

/// Maximum-likelihood fit.
///
/// A sample that separates the categories (estimates running off to
/// infinity) is not an error: the fit comes back with `converged == false`.
pub fn fit_ordered_probit(data: &ProbitData, opts: &FitOptions) -> Result<ProbitFit> {
    check_sample(data)?;
    let n = data.n();
    let p = data.p();
    let k = data.categories() as usize;

    // β = 0 with cutpoints at the normal quantiles of the cumulative shares.
    let mut counts = vec![0usize; k];
    for i in 0..n {
        counts[data.category(i) as usize - 1] += 1;
    }
    let mut cum = 0usize;
    let cut0: Vec<f64> = counts[..k - 1]
        .iter()
        .map(|c| {
            cum += c;
            normal::quantile(cum as f64 / n as f64)
        })
        .collect();
    let mut beta = vec![0.0; p];
    let mut alpha = cutpoints_to_alpha(&cut0);

    let grad_norm = |g: &DVector<f64>| g.amax() / n as f64;
    let mut iterations = 0;
    let mut current = derivatives(&beta, &alpha_to_cutpoints(&alpha), data);
    while iterations < opts.max_iterations {
        if grad_norm(&current.grad) < opts.gradient_tol {
            break;
        }
        iterations += 1;

        // Chain rule into α coordinates: κ_j = α_1 + Σ_{2≤m≤j} exp(α_m).
        let nk = alpha.len();
        let d = p + nk;
        let mut jac = DMatrix::<f64>::identity(d, d);
        for j in 0..nk {
            for m in 0..=j {
                jac[(p + j, p + m)] = if m == 0 { 1.0 } else { alpha[m].exp() };
            }
        }
        let grad_a = jac.transpose() * &current.grad;
        let mut hess_a = jac.transpose() * &current.hess * &jac;
        for m in 1..nk {
            let tail: f64 = (m..nk).map(|j| current.grad[p + j]).sum();
            hess_a[(p + m, p + m)] += alpha[m].exp() * tail;
        }
        let info_a = -hess_a;
        let Some(step) = damped_solve(&info_a, &grad_a) else {
            break;
        };

        // Near the optimum the Newton gain falls below the rounding noise of
        // the summed log-likelihood, so ties within that noise are accepted.
        let slack = 1e-12 * current.ll.abs().max(1.0);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let nb: Vec<f64> = (0..p).map(|i| beta[i] + t * step[i]).collect();
            let na: Vec<f64> = (0..nk).map(|i| alpha[i] + t * step[p + i]).collect();
            let nc = alpha_to_cutpoints(&na);
            if check_cutpoints(&nc).is_ok() {
                let ll = loglik_acc(&nb, &nc, data).ll;
                if ll.is_finite() && ll >= current.ll - slack {
                    accepted = Some((nb, na));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((nb, na)) = accepted else {
            break;
        };
        beta = nb;
        alpha = na;
        current = derivatives(&beta, &alpha_to_cutpoints(&alpha), data);
    }

    let cutpoints = alpha_to_cutpoints(&alpha);
    let gradient_norm = grad_norm(&current.grad);
    let info = -current.hess.clone();
    let covariance = invert_symmetric(&info);
    let converged = gradient_norm < opts.gradient_tol
        && covariance
            .as_ref()
            .is_some_and(|c| c.diagonal().iter().all(|v| v.is_finite() && *v >= 0.0));
    let d = p + cutpoints.len();
    Ok(ProbitFit {
        names: data.names().to_vec(),
        beta,
        cutpoints,
        covariance: covariance.unwrap_or_else(|| DMatrix::from_element(d, d, f64::NAN)),
        log_likelihood: current.ll,
        n_obs: n,
        converged,
        iterations,
        gradient_norm,
        clamped_cells: current.clamped,
    })
}

/// Significance marker: `***` p < 0.001, `**` p < 0.01, `*` p < 0.1.
pub fn significance_stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.1 {
        "*"
    } else {
        ""
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefRow {
    pub name: String,
    pub coef: f64,
    pub se: f64,
    pub z: f64,
    pub p: f64,
    pub stars: &'static str,
}

impl CoefRow {
    pub fn new(name: impl Into<String>, coef: f64, se: f64) -> Self {
        let z = coef / se;
        let p = normal::two_sided_p(z);
        Self {
            name: name.into(),
            coef,
            se,
            z,
            p,
            stars: significance_stars(p),
        }
    }
}

/// Coefficient table for β followed by the cutpoints (`cut1`, `cut2`, …).
pub fn standard_errors(fit: &ProbitFit) -> Vec<CoefRow> {
    let se = fit.std_errors();
    let names = fit
        .names
        .iter()
        .cloned()
        .chain((1..=fit.cutpoints.len()).map(|j| format!("cut{j}")));
    names
        .zip(fit.beta.iter().chain(&fit.cutpoints))
        .zip(se)
        .map(|((name, coef), se)| CoefRow::new(name, *coef, se))
        .collect()
}

/// Writes the plain-text fit report.
pub fn write_fit_report<W: Write>(fit: &ProbitFit, header: &[(&str, String)], mut out: W) -> std::io::Result<()> {
    writeln!(out, "# ordered probit fit")?;
    writeln!(out, "# negative coefficients move transactions earlier in the block")?;
    for (k, v) in header {
        writeln!(out, "{k} = {v}")?;
    }
    writeln!(out, "n_obs = {}", fit.n_obs)?;
    writeln!(out, "converged = {}", fit.converged)?;
    writeln!(out, "iterations = {}", fit.iterations)?;
    writeln!(out, "log_likelihood = {:.6}", fit.log_likelihood)?;
    writeln!(out, "gradient_norm = {:.3e}", fit.gradient_norm)?;
    writeln!(out, "clamped_cells = {}", fit.clamped_cells)?;
    writeln!(out)?;
    writeln!(out, "variable,coef,se,z,p,stars")?;
    for r in standard_errors(fit) {
        writeln!(
            out,
            "{},{:.6e},{:.4e},{:.4},{:.6},{}",
            r.name, r.coef, r.se, r.z, r.p, r.stars
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_row(y: u8, x: f64) -> ProbitData {
        ProbitData::new(vec!["x".into()], 4, vec![x], vec![y]).unwrap()
    }

    #[test]
    fn symmetric_cell() {
        let d = one_row(1, 0.0);
        let ll = log_likelihood(&[0.0], &[0.0, 1.0, 2.0], &d).unwrap();
        assert!((ll - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn uniform_cells() {
        let d = ProbitData::new(vec!["x".into()], 4, vec![0.0; 4], vec![1, 2, 3, 4]).unwrap();
        let k = [normal::quantile(0.25), normal::quantile(0.5), normal::quantile(0.75)];
        let ll = log_likelihood(&[0.0], &k, &d).unwrap();
        assert!((ll - 4.0 * 0.25f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn non_increasing_cutpoints_rejected() {
        let d = one_row(2, 0.0);
        assert!(matches!(
            log_likelihood(&[0.0], &[0.0, 0.0, 1.0], &d),
            Err(Error::Domain(_))
        ));
        assert!(score_and_information(&[0.0], &[1.0, 0.5, 2.0], &d).is_err());
    }

    #[test]
    fn extreme_rows_are_clamped_not_infinite() {
        let d = one_row(4, -1e6);
        let ll = log_likelihood(&[1.0], &[0.0, 1.0, 2.0], &d).unwrap();
        assert!(ll.is_finite());
        assert!((ll - PROB_FLOOR.ln()).abs() < 1e-9);
    }

    #[test]
    fn stars_and_z() {
        let r = CoefRow::new("x", 0.0, 1.0);
        assert_eq!((r.z, r.p, r.stars), (0.0, 1.0, ""));
        let r = CoefRow::new("max_fee_per_gas", -8.578e-4, 3.117e-5);
        assert!((r.z.abs() - 27.52).abs() < 0.01);
        assert_eq!(r.stars, "***");
        let r = CoefRow::new("sandwich_profit", -1.053e-4, 5.623e-5);
        assert!((r.z.abs() - 1.873).abs() < 0.001);
        assert_eq!(r.stars, "*");
        assert_eq!(significance_stars(0.005), "**");
    }

    #[test]
    fn alpha_roundtrip() {
        let k = vec![-0.6, 0.1, 0.8];
        let back = alpha_to_cutpoints(&cutpoints_to_alpha(&k));
        for (a, b) in k.iter().zip(back) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn coverage_and_constant_checks() {
        let d = ProbitData::new(vec!["x".into()], 4, vec![0.0, 1.0, 2.0], vec![1, 2, 3]).unwrap();
        assert!(matches!(fit_ordered_probit(&d, &FitOptions::default()), Err(Error::Input(_))));
        let d = ProbitData::new(vec!["x".into()], 4, vec![1.0; 4], vec![1, 2, 3, 4]).unwrap();
        assert!(matches!(fit_ordered_probit(&d, &FitOptions::default()), Err(Error::Input(_))));
    }

    #[test]
    fn separation_is_flagged_not_fatal() {
        // x = 1 always in category 1, x = 0 spread over the rest.
        let mut x = vec![];
        let mut y = vec![];
        for i in 0..40 {
            x.push(1.0);
            y.push(1);
            x.push(0.0);
            y.push(2 + (i % 3) as u8);
        }
        let d = ProbitData::new(vec!["x".into()], 4, x, y).unwrap();
        let fit = fit_ordered_probit(&d, &FitOptions::default()).unwrap();
        assert!(!fit.converged);
        assert!(fit.beta[0] < -3.0);
    }

    #[test]
    fn null_model_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 20_000;
        let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let y: Vec<u8> = (0..n).map(|i| (i % 4) as u8 + 1).collect();
        let d = ProbitData::new(vec!["x".into()], 4, x, y).unwrap();
        let fit = fit_ordered_probit(&d, &FitOptions::default()).unwrap();
        assert!(fit.converged);
        let se = fit.std_errors();
        assert!(fit.beta[0].abs() < 3.0 * se[0]);
        let q = [0.25, 0.5, 0.75].map(normal::quantile);
        for j in 0..3 {
            assert!((fit.cutpoints[j] - q[j]).abs() < 3.0 * se[1 + j] + 0.05);
        }
    }

    fn random_data(seed: u64, n: usize, k: u8) -> ProbitData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = 3;
        let mut x = Vec::with_capacity(n * p);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            x.push(rng.random::<f64>() * 2.0 - 1.0);
            x.push(if rng.random::<f64>() < 0.3 { 1.0 } else { 0.0 });
            x.push(rng.random::<f64>() * 50.0);
            y.push((i % k as usize) as u8 + 1);
        }
        ProbitData::new(vec!["a".into(), "b".into(), "c".into()], k, x, y).unwrap()
    }

    fn direct_loglik(beta: &[f64], cut: &[f64], d: &ProbitData) -> f64 {
        let mut ll = 0.0;
        for i in 0..d.n() {
            let eta: f64 = d.row(i).iter().zip(beta).map(|(a, b)| a * b).sum();
            let j = d.category(i) as usize;
            let hi = if j <= cut.len() { normal::cdf(cut[j - 1] - eta) } else { 1.0 };
            let lo = if j >= 2 { normal::cdf(cut[j - 2] - eta) } else { 0.0 };
            ll += (hi - lo).ln();
        }
        ll
    }

    #[test]
    fn loglik_matches_direct_sum() {
        let d = random_data(3, 500, 4);
        let beta = [0.4, -0.7, 0.01];
        let cut = [-0.5, 0.2, 0.9];
        let a = log_likelihood(&beta, &cut, &d).unwrap();
        let b = direct_loglik(&beta, &cut, &d);
        assert!((a - b).abs() < 1e-9 * b.abs());
    }

    #[test]
    fn score_and_information_match_finite_differences() {
        for k in [4u8, 10] {
            let d = random_data(5, 300, k);
            let beta = vec![0.3, -0.4, 0.02];
            let cut: Vec<f64> = (0..k - 1).map(|j| -1.0 + 0.3 * j as f64).collect();
            let (g, info) = score_and_information(&beta, &cut, &d).unwrap();
            let theta: Vec<f64> = beta.iter().chain(&cut).copied().collect();
            let ll = |t: &[f64]| direct_loglik(&t[..3], &t[3..], &d);
            let h = 1e-5;
            let dim = theta.len();
            let fd_grad = |t: &[f64], i: usize| {
                let (mut up, mut dn) = (t.to_vec(), t.to_vec());
                up[i] += h;
                dn[i] -= h;
                (ll(&up) - ll(&dn)) / (2.0 * h)
            };
            for i in 0..dim {
                let fd = fd_grad(&theta, i);
                assert!((fd - g[i]).abs() < 1e-5 * (1.0 + fd.abs()), "grad {i}: {fd} vs {}", g[i]);
                for j in 0..dim {
                    let (mut up, mut dn) = (theta.clone(), theta.clone());
                    up[j] += h;
                    dn[j] -= h;
                    let fd2 = (fd_grad(&up, i) - fd_grad(&dn, i)) / (2.0 * h);
                    let an = -info[(i, j)];
                    assert!((fd2 - an).abs() < 1e-3 * (1.0 + fd2.abs()), "hess {i},{j}: {fd2} vs {an}");
                }
            }
            assert!(info.clone().cholesky().is_some());
        }
    }

    #[test]
    fn recovers_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let beta = [0.5, -0.8];
        let cut = [-0.6, 0.1, 0.8];
        let n = 40_000;
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let r = [rng.random::<f64>() * 2.0 - 1.0, (rng.random::<f64>() < 0.4) as u8 as f64];
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            let latent = r[0] * beta[0] + r[1] * beta[1] + z;
            y.push(1 + cut.iter().filter(|c| latent > **c).count() as u8);
            x.extend(r);
        }
        let d = ProbitData::new(vec!["u".into(), "d".into()], 4, x, y).unwrap();
        let fit = fit_ordered_probit(&d, &FitOptions::default()).unwrap();
        assert!(fit.converged);
        let se = fit.std_errors();
        for (i, b) in beta.iter().chain(&cut).enumerate() {
            let est = if i < 2 { fit.beta[i] } else { fit.cutpoints[i - 2] };
            assert!((est - b).abs() < 4.0 * se[i], "param {i}: {est} vs {b}");
        }
        // The covariance inverts the observed information at the estimate.
        let (_, info) = score_and_information(&fit.beta, &fit.cutpoints, &d).unwrap();
        let eye = &info * &fit.covariance;
        for i in 0..eye.nrows() {
            for j in 0..eye.ncols() {
                let t = if i == j { 1.0 } else { 0.0 };
                assert!((eye[(i, j)] - t).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn location_shift_absorbed_by_cutpoints() {
        let d = random_data(9, 4000, 4);
        let fit = fit_ordered_probit(&d, &FitOptions::default()).unwrap();
        let shift = 2.5;
        let mut x = Vec::new();
        for i in 0..d.n() {
            let r = d.row(i);
            x.extend([r[0] + shift, r[1], r[2]]);
        }
        let y: Vec<u8> = (0..d.n()).map(|i| d.category(i)).collect();
        let d2 = ProbitData::new(d.names().to_vec(), 4, x, y).unwrap();
        let fit2 = fit_ordered_probit(&d2, &FitOptions::default()).unwrap();
        for i in 0..d.n() {
            let p1 = fit.cell_probabilities(d.row(i));
            let p2 = fit2.cell_probabilities(d2.row(i));
            for (a, b) in p1.iter().zip(&p2) {
                assert!((a - b).abs() < 1e-8);
            }
        }
        for (c1, c2) in fit.cutpoints.iter().zip(&fit2.cutpoints) {
            assert!((c2 - c1 - fit.beta[0] * shift).abs() < 1e-6);
        }
    }

    #[test]
    fn report_has_table() {
        let d = random_data(2, 2000, 4);
        let fit = fit_ordered_probit(&d, &FitOptions::default()).unwrap();
        let mut buf = Vec::new();
        write_fit_report(&fit, &[("date", "2024-10-01".into())], &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.contains("variable,coef,se,z,p,stars"));
        assert!(s.contains("\ncut3,"));
    }
}
