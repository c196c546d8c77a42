//! Two-sample and paired t-tests, least squares with classical and HC1
//! errors, and bootstrap skewness tools.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::effects::nearest_rank;
use crate::error::{Error, Result};
use crate::normal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alternative {
    #[default]
    TwoSided,
    /// Mean of the first sample is larger.
    Greater,
    Less,
}

impl Alternative {
    pub fn as_str(self) -> &'static str {
        match self {
            Alternative::TwoSided => "two-sided",
            Alternative::Greater => "greater",
            Alternative::Less => "less",
        }
    }
}

fn t_sf(t: f64, df: f64) -> f64 {
    if t == f64::INFINITY {
        return 0.0;
    }
    if t == f64::NEG_INFINITY {
        return 1.0;
    }
    if !df.is_finite() || df > 1e7 {
        return normal::sf(t);
    }
    let d = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    if t > 0.0 {
        d.sf(t)
    } else {
        1.0 - d.sf(-t)
    }
}

fn p_value(t: f64, df: f64, alt: Alternative) -> f64 {
    let p = match alt {
        Alternative::TwoSided => {
            if t == 0.0 {
                1.0
            } else {
                2.0 * t_sf(t.abs(), df)
            }
        }
        Alternative::Greater => t_sf(t, df),
        Alternative::Less => t_sf(-t, df),
    };
    p.clamp(0.0, 1.0)
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample variance with the `n − 1` divisor.
pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TTestResult {
    pub mean_a: f64,
    pub mean_b: f64,
    pub sd_a: f64,
    pub sd_b: f64,
    pub n_a: usize,
    pub n_b: usize,
    pub t_stat: f64,
    pub df: f64,
    pub p_value: f64,
    pub alternative: Alternative,
}

/// Welch unequal-variance t-test of `mean(a) − mean(b)` with
/// Welch–Satterthwaite degrees of freedom.
pub fn welch_t_test(a: &[f64], b: &[f64], alt: Alternative) -> Result<TTestResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Input(format!(
            "t-test needs two observations per group, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (variance(a), variance(b));
    let (qa, qb) = (va / na, vb / nb);
    let se2 = qa + qb;
    let diff = ma - mb;
    let (t, df) = if se2 == 0.0 {
        let t = if diff == 0.0 { 0.0 } else { diff.signum() * f64::INFINITY };
        (t, na + nb - 2.0)
    } else {
        let df = se2 * se2 / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
        (diff / se2.sqrt(), df)
    };
    Ok(TTestResult {
        mean_a: ma,
        mean_b: mb,
        sd_a: va.sqrt(),
        sd_b: vb.sqrt(),
        n_a: a.len(),
        n_b: b.len(),
        t_stat: t,
        df,
        p_value: p_value(t, df, alt),
        alternative: alt,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedTest {
    pub n: usize,
    pub mean_a: f64,
    pub mean_b: f64,
    pub mean_diff: f64,
    pub sd_diff: f64,
    pub t_stat: f64,
    pub p_value: f64,
}

/// Paired t-test of `mean(a − b) = 0`.
pub fn paired_t_test(a: &[f64], b: &[f64], alt: Alternative) -> Result<PairedTest> {
    if a.len() != b.len() {
        return Err(Error::Input("paired samples differ in length".into()));
    }
    if a.len() < 2 {
        return Err(Error::Input("paired t-test needs two pairs".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let md = mean(&d);
    let sd = variance(&d).sqrt();
    let n = d.len() as f64;
    let t = if sd == 0.0 {
        if md == 0.0 {
            0.0
        } else {
            md.signum() * f64::INFINITY
        }
    } else {
        md / (sd / n.sqrt())
    };
    Ok(PairedTest {
        n: d.len(),
        mean_a: mean(a),
        mean_b: mean(b),
        mean_diff: md,
        sd_diff: sd,
        t_stat: t,
        p_value: p_value(t, n - 1.0, alt),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    /// Column names, `intercept` first.
    pub names: Vec<String>,
    pub coef: Vec<f64>,
    pub se: Vec<f64>,
    /// Heteroskedasticity-consistent (HC1) standard errors.
    pub robust_se: Vec<f64>,
    pub residuals: Vec<f64>,
    pub r_squared: f64,
    pub n: usize,
}

impl OlsFit {
    pub fn coef(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.coef[i])
    }

    /// Two-sided t interval at `level` using the classical errors.
    pub fn confidence_interval(&self, i: usize, level: f64) -> (f64, f64) {
        self.interval(i, level, self.se[i])
    }

    /// Same interval with the HC1 errors.
    pub fn robust_confidence_interval(&self, i: usize, level: f64) -> (f64, f64) {
        self.interval(i, level, self.robust_se[i])
    }

    fn interval(&self, i: usize, level: f64, se: f64) -> (f64, f64) {
        let df = (self.n - self.coef.len()) as f64;
        let q = StudentsT::new(0.0, 1.0, df)
            .expect("positive degrees of freedom")
            .inverse_cdf(0.5 + level / 2.0);
        (self.coef[i] - q * se, self.coef[i] + q * se)
    }
}

/// Finds columns that are linear combinations of earlier ones. Returns the
/// names involved in the first dependency found.
fn collinear_columns(x: &DMatrix<f64>, names: &[String]) -> Option<Vec<String>> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut kept: Vec<usize> = Vec::new();
    for j in 0..x.ncols() {
        let col = x.column(j).into_owned();
        let norm = col.norm();
        let mut r = col.clone();
        for q in &basis {
            let c = q.dot(&r);
            r -= q * c;
        }
        if norm == 0.0 || r.norm() <= 1e-10 * norm {
            let mut involved = vec![names[j].clone()];
            if !kept.is_empty() && norm > 0.0 {
                let sub = DMatrix::from_columns(&kept.iter().map(|k| x.column(*k)).collect::<Vec<_>>());
                if let Ok(c) = sub.svd(true, true).solve(&col, 1e-12) {
                    let scale = c.amax().max(1e-300);
                    for (k, v) in kept.iter().zip(c.iter()) {
                        if v.abs() > 1e-8 * scale {
                            involved.push(names[*k].clone());
                        }
                    }
                }
            }
            return Some(involved);
        }
        basis.push(&r / r.norm());
        kept.push(j);
    }
    None
}

/// Least squares of `y` on an intercept plus the columns of `rows`
/// (row-major, `names.len()` wide).
pub fn ols(names: &[&str], rows: &[f64], y: &[f64]) -> Result<OlsFit> {
    let n = y.len();
    let k = names.len() + 1;
    if rows.len() != n * names.len() {
        return Err(Error::Input("regressor matrix size mismatch".into()));
    }
    if n <= k {
        return Err(Error::Input(format!("{n} observations for {k} coefficients")));
    }
    let all: Vec<String> = std::iter::once("intercept".to_string())
        .chain(names.iter().map(|s| s.to_string()))
        .collect();
    let x = DMatrix::from_fn(n, k, |i, j| if j == 0 { 1.0 } else { rows[i * names.len() + j - 1] });
    if let Some(cols) = collinear_columns(&x, &all) {
        return Err(Error::RankDeficient(cols));
    }
    let yv = DVector::from_column_slice(y);
    let qr = x.clone().qr();
    let r = qr.r();
    let qty = qr.q().transpose() * &yv;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::RankDeficient(all.clone()))?;
    let resid = &yv - &x * &beta;
    let rinv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| Error::RankDeficient(all.clone()))?;
    let xtx_inv = &rinv * rinv.transpose();
    let rss = resid.norm_squared();
    let dof = (n - k) as f64;
    let s2 = rss / dof;
    let se: Vec<f64> = xtx_inv.diagonal().iter().map(|v| (v * s2).sqrt()).collect();

    let mut meat = DMatrix::<f64>::zeros(k, k);
    for i in 0..n {
        let xi = x.row(i).transpose();
        meat += (&xi * xi.transpose()) * (resid[i] * resid[i]);
    }
    let hc = (&xtx_inv * meat * &xtx_inv) * (n as f64 / dof);
    let robust_se: Vec<f64> = hc.diagonal().iter().map(|v| v.sqrt()).collect();

    let ym = mean(y);
    let tss: f64 = y.iter().map(|v| (v - ym).powi(2)).sum();
    let r_squared = if tss > 0.0 { 1.0 - rss / tss } else { f64::NAN };
    Ok(OlsFit {
        names: all,
        coef: beta.iter().copied().collect(),
        se,
        robust_se,
        residuals: resid.iter().copied().collect(),
        r_squared,
        n,
    })
}

/// Sample skewness `g1 = m3 / m2^{3/2}` with population moments.
pub fn skewness(x: &[f64]) -> Result<f64> {
    if x.len() < 3 {
        return Err(Error::Input(format!("skewness needs 3 values, got {}", x.len())));
    }
    let m = mean(x);
    let n = x.len() as f64;
    let (mut m2, mut m3) = (0.0, 0.0);
    for v in x {
        let d = v - m;
        m2 += d * d;
        m3 += d * d * d;
    }
    m2 /= n;
    m3 /= n;
    if !(m2 > 0.0) {
        return Err(Error::Domain("skewness undefined for a constant sample".into()));
    }
    Ok(m3 / m2.powf(1.5))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkewnessCi {
    pub skewness: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    /// Resamples that were constant and had no skewness.
    pub degenerate: usize,
}

/// Percentile-bootstrap interval for the skewness.
pub fn skewness_ci(sample: &[f64], level: f64, resamples: usize, seed: u64) -> Result<SkewnessCi> {
    if !(0.0 < level && level < 1.0) {
        return Err(Error::Config(format!("confidence level {level} outside (0, 1)")));
    }
    let g = skewness(sample)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = sample.len();
    let mut buf = vec![0.0; n];
    let mut stats = Vec::with_capacity(resamples);
    let mut degenerate = 0;
    for _ in 0..resamples {
        for b in buf.iter_mut() {
            *b = sample[rng.random_range(0..n)];
        }
        match skewness(&buf) {
            Ok(s) => stats.push(s),
            Err(_) => degenerate += 1,
        }
    }
    if stats.is_empty() {
        return Err(Error::Domain("no usable bootstrap resamples".into()));
    }
    stats.sort_by(f64::total_cmp);
    let a = (1.0 - level) / 2.0;
    Ok(SkewnessCi {
        skewness: g,
        lower: nearest_rank(&stats, a).unwrap_or(f64::NAN),
        upper: nearest_rank(&stats, 1.0 - a).unwrap_or(f64::NAN),
        level,
        degenerate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkewnessReduction {
    pub skew_raw: f64,
    pub skew_residual: f64,
    /// One-sided p-value for "residuals are less skewed than the raw values".
    pub p_value: f64,
    pub resamples: usize,
}

/// Paired bootstrap of `Δ = skew(raw) − skew(residuals)`. The p-value is the
/// share of resamples with `Δ < 0`, ties counted one half.
pub fn skewness_reduction_test(
    raw: &[f64],
    residuals: &[f64],
    resamples: usize,
    seed: u64,
) -> Result<SkewnessReduction> {
    if raw.len() != residuals.len() {
        return Err(Error::Input("raw and residual samples differ in length".into()));
    }
    let skew_raw = skewness(raw)?;
    let skew_residual = skewness(residuals)?;
    let n = raw.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut a, mut b) = (vec![0.0; n], vec![0.0; n]);
    let (mut below, mut ties, mut used) = (0usize, 0usize, 0usize);
    for _ in 0..resamples {
        for i in 0..n {
            let j = rng.random_range(0..n);
            a[i] = raw[j];
            b[i] = residuals[j];
        }
        let (Ok(sa), Ok(sb)) = (skewness(&a), skewness(&b)) else {
            continue;
        };
        used += 1;
        let d = sa - sb;
        if d < 0.0 {
            below += 1;
        } else if d == 0.0 {
            ties += 1;
        }
    }
    if used == 0 {
        return Err(Error::Domain("no usable bootstrap resamples".into()));
    }
    Ok(SkewnessReduction {
        skew_raw,
        skew_residual,
        p_value: (below as f64 + 0.5 * ties as f64) / used as f64,
        resamples: used,
    })
}
