//! Marginal effects on the probability of landing in the first bucket, and
//! their conversion to gas and dollars.
//!
//! Effects are reported as the change in `P(bucket = 1)`, so a regressor
//! that pulls transactions forward (negative coefficient) has a positive
//! effect. No separate sign flip is applied anywhere.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal;
use crate::position::MAX_FEE;
use crate::probit::{cell_probabilities, ProbitData, ProbitFit};
use crate::reduce::{par_map, sum_by};
use crate::types::{PriceRow, PriceTable};
use chrono::NaiveDate;

/// Below this |β_max_fee| the gas-equivalent ratio is undefined.
pub const RATIO_FLOOR: f64 = 1e-12;

/// `Φ(κ_1 − x'β)`.
pub fn first_quartile_prob(fit: &ProbitFit, x: &[f64]) -> f64 {
    normal::cdf(fit.cutpoints[0] - fit.index(x))
}

/// `∂P(bucket = 1)/∂x_var = −β_var φ(κ_1 − x'β)`.
pub fn marginal_effect_continuous(fit: &ProbitFit, x: &[f64], var: usize) -> f64 {
    -fit.beta[var] * normal::pdf(fit.cutpoints[0] - fit.index(x))
}

/// `P(bucket = 1 | x_var = 1) − P(bucket = 1 | x_var = 0)`, others held.
pub fn marginal_effect_discrete(fit: &ProbitFit, x: &[f64], var: usize) -> f64 {
    let base = fit.index(x) - fit.beta[var] * x[var];
    let k1 = fit.cutpoints[0];
    let p1 = normal::cdf(k1 - base - fit.beta[var]);
    let p0 = normal::cdf(k1 - base);
    p1 - p0
}

/// Whether a regressor gets the derivative (continuous) or the 0→1 change.
pub fn is_continuous(name: &str) -> bool {
    name == MAX_FEE
}

pub fn marginal_effect(fit: &ProbitFit, x: &[f64], var: usize) -> f64 {
    if is_continuous(&fit.names[var]) {
        marginal_effect_continuous(fit, x, var)
    } else {
        marginal_effect_discrete(fit, x, var)
    }
}

/// Effect of `var` on every bucket probability. The entries sum to zero.
pub fn category_effects(fit: &ProbitFit, x: &[f64], var: usize) -> Vec<f64> {
    if is_continuous(&fit.names[var]) {
        let eta = fit.index(x);
        let k = &fit.cutpoints;
        (0..=k.len())
            .map(|j| {
                let hi = if j < k.len() { normal::pdf(k[j] - eta) } else { 0.0 };
                let lo = if j > 0 { normal::pdf(k[j - 1] - eta) } else { 0.0 };
                -fit.beta[var] * (hi - lo)
            })
            .collect()
    } else {
        let base = fit.index(x) - fit.beta[var] * x[var];
        let on = cell_probabilities(&fit.cutpoints, base + fit.beta[var]);
        let off = cell_probabilities(&fit.cutpoints, base);
        on.iter().zip(off).map(|(a, b)| a - b).collect()
    }
}

/// `|β_var| / |β_max_fee|`: the gas price change with the same effect.
pub fn gas_equivalent(fit: &ProbitFit, var: &str) -> Result<f64> {
    let b = fit
        .coef(var)
        .ok_or_else(|| Error::Input(format!("no regressor named {var}")))?;
    let g = fit
        .coef(MAX_FEE)
        .ok_or_else(|| Error::Input(format!("no regressor named {MAX_FEE}")))?;
    gas_ratio(b, g)
}

/// `|b| / |b_gas|` with the undefined case reported.
pub fn gas_ratio(b: f64, b_gas: f64) -> Result<f64> {
    if !(b_gas.abs() >= RATIO_FLOOR) {
        return Err(Error::UndefinedRatio(MAX_FEE.into()));
    }
    Ok(b.abs() / b_gas.abs())
}

/// `gas × gas_price × 1e-9 × eth_usd`.
pub fn usd_cost(gas_units: f64, price: &PriceRow) -> f64 {
    gas_units * price.usd_per_gas()
}

pub fn usd_cost_on(gas_units: f64, prices: &PriceTable, date: NaiveDate) -> Result<f64> {
    Ok(usd_cost(gas_units, &prices.get(date)?))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectRow {
    pub variable: String,
    /// Mean change in `P(bucket = 1)`.
    pub ame: f64,
    /// Gas units; `None` when the max-fee coefficient is degenerate.
    pub gas_equivalent: Option<f64>,
    pub usd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectsTable {
    pub rows: Vec<EffectRow>,
    /// `per_obs[v][i]`: effect of variable `v` on observation `i`.
    pub per_obs: Vec<Vec<f64>>,
}

impl EffectsTable {
    pub fn get(&self, name: &str) -> Option<&EffectRow> {
        self.rows.iter().find(|r| r.variable == name)
    }

    pub fn per_obs(&self, name: &str) -> Option<&[f64]> {
        let i = self.rows.iter().position(|r| r.variable == name)?;
        Some(&self.per_obs[i])
    }

    /// Gas needed to move `P(bucket = 1)` by `delta` at the average max-fee
    /// effect, `delta / |AME_max_fee|`.
    pub fn gas_per_probability(&self, delta: f64) -> Option<f64> {
        let g = self.get(MAX_FEE)?.ame;
        (g.abs() >= RATIO_FLOOR).then(|| delta / g.abs())
    }
}

/// Average marginal effects over `data`, with gas and USD equivalents when a
/// price row is given.
pub fn average_marginal_effects(
    fit: &ProbitFit,
    data: &ProbitData,
    price: Option<&PriceRow>,
) -> Result<EffectsTable> {
    if data.p() != fit.beta.len() {
        return Err(Error::Input(format!(
            "data has {} regressors, fit has {}",
            data.p(),
            fit.beta.len()
        )));
    }
    let idx: Vec<usize> = (0..data.n()).collect();
    let per_row: Vec<Vec<f64>> = par_map(&idx, |i| {
        let x = data.row(*i);
        (0..fit.beta.len()).map(|v| marginal_effect(fit, x, v)).collect()
    });
    let per_obs: Vec<Vec<f64>> = (0..fit.beta.len())
        .map(|v| per_row.iter().map(|r| r[v]).collect())
        .collect();
    let n = data.n().max(1) as f64;
    let rows = fit
        .names
        .iter()
        .enumerate()
        .map(|(v, name)| {
            let ame = sum_by(&per_obs[v], |e| *e) / n;
            let gas = gas_equivalent(fit, name).ok();
            EffectRow {
                variable: name.clone(),
                ame,
                gas_equivalent: gas,
                usd: gas.zip(price).map(|(g, p)| usd_cost(g, p)),
            }
        })
        .collect();
    Ok(EffectsTable { rows, per_obs })
}

/// Nearest-rank quantile of an ascending slice: the value at rank
/// `ceil(q·n)`, with `q = 0` giving the minimum.
pub fn nearest_rank(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() || !(0.0..=1.0).contains(&q) {
        return None;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantileRow {
    pub variable: String,
    pub quantiles: Vec<(f64, f64)>,
}

pub fn quantile_marginal_effects(table: &EffectsTable, quantiles: &[f64]) -> Vec<QuantileRow> {
    table
        .rows
        .iter()
        .zip(&table.per_obs)
        .map(|(r, v)| {
            let mut s = v.clone();
            s.sort_by(f64::total_cmp);
            QuantileRow {
                variable: r.variable.clone(),
                quantiles: quantiles
                    .iter()
                    .map(|q| (*q, nearest_rank(&s, *q).unwrap_or(f64::NAN)))
                    .collect(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InsuranceRule {
    /// Gas to close the remaining gap: `(1 − P̂) / |ME_gas|`.
    #[default]
    Linear,
    /// Gas for a full unit of probability: `1 / |ME_gas|`.
    FullPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Insurance {
    pub per_tx_gas: Vec<f64>,
    pub per_tx_usd: Vec<f64>,
    pub aggregate_gas: f64,
    pub aggregate_usd: f64,
    /// Rows dropped because `|ME_gas|` fell below the floor.
    pub excluded: usize,
}

impl Insurance {
    pub fn mean_gas(&self) -> f64 {
        if self.per_tx_gas.is_empty() {
            f64::NAN
        } else {
            self.aggregate_gas / self.per_tx_gas.len() as f64
        }
    }
}

/// Extra gas each transaction would need to be sure of a first-bucket slot.
pub fn reordering_insurance(
    fit: &ProbitFit,
    data: &ProbitData,
    price: &PriceRow,
    rule: InsuranceRule,
    me_floor: f64,
) -> Result<Insurance> {
    let g = fit
        .position(MAX_FEE)
        .ok_or_else(|| Error::Input(format!("no regressor named {MAX_FEE}")))?;
    let idx: Vec<usize> = (0..data.n()).collect();
    let per: Vec<Option<f64>> = par_map(&idx, |i| {
        let x = data.row(*i);
        let me = marginal_effect_continuous(fit, x, g).abs();
        if !(me >= me_floor) || me == 0.0 {
            return None;
        }
        Some(match rule {
            InsuranceRule::Linear => (1.0 - first_quartile_prob(fit, x)) / me,
            InsuranceRule::FullPoint => 1.0 / me,
        })
    });
    let excluded = per.iter().filter(|v| v.is_none()).count();
    let per_tx_gas: Vec<f64> = per.into_iter().flatten().collect();
    let per_tx_usd: Vec<f64> = per_tx_gas.iter().map(|g| usd_cost(*g, price)).collect();
    let aggregate_gas = sum_by(&per_tx_gas, |v| *v);
    Ok(Insurance {
        aggregate_usd: usd_cost(aggregate_gas, price),
        per_tx_gas,
        per_tx_usd,
        aggregate_gas,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::Gwei;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn fit_with(names: &[&str], beta: &[f64], cut: &[f64]) -> ProbitFit {
        let d = beta.len() + cut.len();
        ProbitFit {
            names: names.iter().map(|s| s.to_string()).collect(),
            beta: beta.to_vec(),
            cutpoints: cut.to_vec(),
            covariance: DMatrix::identity(d, d),
            log_likelihood: 0.0,
            n_obs: 0,
            converged: true,
            iterations: 0,
            gradient_norm: 0.0,
            clamped_cells: 0,
        }
    }

    fn price() -> PriceRow {
        PriceRow {
            avg_gas_price: Gwei(22.45),
            eth_close_usd: 2597.34,
        }
    }

    #[test]
    fn first_bucket_probability() {
        let f = fit_with(&[MAX_FEE], &[0.5], &[1.0, 2.0, 3.0]);
        assert!((first_quartile_prob(&f, &[2.0]) - 0.5).abs() < 1e-15);
        let f = fit_with(&[MAX_FEE], &[0.0], &[normal::quantile(0.25), 0.0, 1.0]);
        assert!((first_quartile_prob(&f, &[7.0]) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn continuous_effect_at_centre() {
        let f = fit_with(&[MAX_FEE], &[1.0], &[0.0, 1.0, 2.0]);
        assert!((marginal_effect_continuous(&f, &[0.0], 0) + 0.398_942_280_401_432_7).abs() < 1e-15);
        let f = fit_with(&[MAX_FEE], &[0.0], &[0.0, 1.0, 2.0]);
        assert_eq!(marginal_effect_continuous(&f, &[3.0], 0), 0.0);
    }

    #[test]
    fn discrete_effect_arithmetic() {
        // κ1 − x'β = −0.6 with the dummy off.
        let f = fit_with(&[MAX_FEE, "to_mev"], &[0.0, -1.7074], &[-0.6, 0.1, 0.8]);
        let e = marginal_effect_discrete(&f, &[0.0, 0.0], 1);
        let want = normal::cdf(1.1074) - normal::cdf(-0.6);
        assert!((e - want).abs() < 1e-15);
        assert!((e - 0.5914).abs() < 5e-4);
        // Same answer whether the row has the dummy on or off.
        assert_eq!(e, marginal_effect_discrete(&f, &[0.0, 1.0], 1));
    }

    #[test]
    fn gas_equivalents() {
        let f = fit_with(
            &[MAX_FEE, "to_dex", "to_mev"],
            &[-8.578e-4, -0.77121, -1.7074],
            &[-0.6, 0.1, 0.8],
        );
        assert_eq!(gas_equivalent(&f, MAX_FEE).unwrap(), 1.0);
        assert!((gas_equivalent(&f, "to_dex").unwrap() - 899.06).abs() < 0.01);
        assert!((gas_equivalent(&f, "to_mev").unwrap() - 1990.44).abs() < 0.01);
        let z = fit_with(&[MAX_FEE, "to_dex"], &[1e-13, -0.7], &[0.0, 1.0, 2.0]);
        assert!(matches!(gas_equivalent(&z, "to_dex"), Err(Error::UndefinedRatio(_))));
    }

    #[test]
    fn dollar_conversion() {
        assert!((usd_cost(2321.0, &price()) - 0.1353).abs() < 1e-4);
        assert!((usd_cost(4575.0, &price()) - 0.2668).abs() < 1e-4);
        assert_eq!(usd_cost(0.0, &price()), 0.0);
    }

    #[test]
    fn nearest_rank_rules() {
        let v: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        assert_eq!(nearest_rank(&v, 0.1), Some(0.1));
        assert_eq!(nearest_rank(&v, 0.5), Some(0.5));
        assert_eq!(nearest_rank(&v, 0.0), Some(0.0));
        assert_eq!(nearest_rank(&v, 1.0), Some(1.0));
        assert_eq!(nearest_rank(&[], 0.5), None);
    }

    fn small_data() -> ProbitData {
        let x = vec![10.0, 1.0, 40.0, 0.0, 25.0, 1.0, 5.0, 0.0];
        ProbitData::new(vec![MAX_FEE.into(), "to_mev".into()], 4, x, vec![1, 2, 3, 4]).unwrap()
    }

    #[test]
    fn zero_coefficients_zero_effects() {
        let f = fit_with(&[MAX_FEE, "to_mev"], &[0.0, 0.0], &[-0.6, 0.1, 0.8]);
        let t = average_marginal_effects(&f, &small_data(), None).unwrap();
        assert!(t.rows.iter().all(|r| r.ame == 0.0));
    }

    #[test]
    fn ame_is_mean_of_loop() {
        let f = fit_with(&[MAX_FEE, "to_mev"], &[-8.6e-4, -1.7], &[-0.6, 0.1, 0.8]);
        let d = small_data();
        let t = average_marginal_effects(&f, &d, Some(&price())).unwrap();
        for v in 0..2 {
            let mut s = 0.0;
            for i in 0..d.n() {
                s += marginal_effect(&f, d.row(i), v);
            }
            assert!((t.rows[v].ame - s / 4.0).abs() < 1e-12);
        }
        assert_eq!(t.get(MAX_FEE).unwrap().gas_equivalent, Some(1.0));
        assert!(t.get("to_mev").unwrap().usd.unwrap() > 0.0);
        let q = quantile_marginal_effects(&t, &[0.1, 0.5, 0.9]);
        assert_eq!(q.len(), 2);
    }

    #[test]
    fn insurance_hand_arithmetic() {
        // Two rows at P = 0.5 and |ME| = 1e-4 need 5,000 gas each.
        let b = -1e-4 / normal::pdf(0.0);
        let f = fit_with(&[MAX_FEE], &[b], &[0.0, 1.0, 2.0]);
        let d = ProbitData::new(vec![MAX_FEE.into()], 4, vec![0.0, 0.0], vec![1, 2]).unwrap();
        let ins = reordering_insurance(&f, &d, &price(), InsuranceRule::Linear, 1e-15).unwrap();
        assert!((ins.aggregate_gas - 10_000.0).abs() < 1e-8);
        assert_eq!(ins.excluded, 0);
        let full = reordering_insurance(&f, &d, &price(), InsuranceRule::FullPoint, 1e-15).unwrap();
        assert!((full.aggregate_gas - 20_000.0).abs() < 1e-8);
    }

    #[test]
    fn insurance_zero_when_certain_and_floor_excludes() {
        let f = fit_with(&[MAX_FEE], &[-0.5], &[0.0, 1.0, 2.0]);
        let d = ProbitData::new(vec![MAX_FEE.into()], 4, vec![80.0, 0.0], vec![1, 2]).unwrap();
        let ins = reordering_insurance(&f, &d, &price(), InsuranceRule::Linear, 1e-12).unwrap();
        assert_eq!(ins.excluded, 1);
        assert_eq!(ins.per_tx_gas.len(), 1);
        let d = ProbitData::new(vec![MAX_FEE.into()], 4, vec![18.0], vec![1]).unwrap();
        let ins = reordering_insurance(&f, &d, &price(), InsuranceRule::Linear, 0.0).unwrap();
        assert_eq!((ins.excluded, ins.aggregate_gas), (0, 0.0));
    }

    proptest! {
        #[test]
        fn continuous_matches_finite_difference(b in -2.0f64..2.0, x in -3.0f64..3.0, k1 in -1.0f64..1.0) {
            let f = fit_with(&[MAX_FEE], &[b], &[k1, k1 + 0.5, k1 + 1.0]);
            let h = 1e-5;
            let fd = (first_quartile_prob(&f, &[x + h]) - first_quartile_prob(&f, &[x - h])) / (2.0 * h);
            prop_assert!((fd - marginal_effect_continuous(&f, &[x], 0)).abs() < 1e-8);
        }

        #[test]
        fn discrete_meets_continuous_for_small_beta(b in -1e-4f64..1e-4, x in -2.0f64..2.0) {
            let f = fit_with(&[MAX_FEE, "d"], &[x, b], &[-0.6, 0.1, 0.8]);
            let row = [1.0, 0.0];
            let disc = marginal_effect_discrete(&f, &row, 1);
            let cont = marginal_effect_continuous(&f, &row, 1);
            prop_assert!((disc - cont).abs() < 1e-6);
        }

        #[test]
        fn category_effects_sum_to_zero(b in -2.0f64..2.0, x in -3.0f64..3.0, dummy in 0u8..2) {
            let f = fit_with(&[MAX_FEE, "d"], &[0.3, b], &[-0.6, 0.1, 0.8]);
            let row = [x, dummy as f64];
            for v in 0..2 {
                let s: f64 = category_effects(&f, &row, v).iter().sum();
                prop_assert!(s.abs() < 1e-10);
            }
            let c = category_effects(&f, &row, 0);
            prop_assert!((c[0] - marginal_effect_continuous(&f, &row, 0)).abs() < 1e-15);
        }

        #[test]
        fn usd_is_linear(a in 0.0f64..1e6, b in 0.0f64..1e6) {
            let p = price();
            let lhs = usd_cost(a + b, &p);
            prop_assert!((lhs - usd_cost(a, &p) - usd_cost(b, &p)).abs() < 1e-9 * (1.0 + lhs));
        }

        #[test]
        fn gas_equivalent_scales_with_units(c in 0.01f64..100.0) {
            let f = fit_with(&[MAX_FEE, "to_dex"], &[-8.578e-4, -0.77121], &[-0.6, 0.1, 0.8]);
            let g = fit_with(&[MAX_FEE, "to_dex"], &[-8.578e-4 / c, -0.77121], &[-0.6, 0.1, 0.8]);
            let a = gas_equivalent(&f, "to_dex").unwrap();
            let b = gas_equivalent(&g, "to_dex").unwrap();
            prop_assert!((b / c - a).abs() < 1e-9 * a);
        }
    }
}
