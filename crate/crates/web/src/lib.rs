//! Browser bindings for three small calculations: the harm a sandwich does
//! to its victim in a constant-product pool, the probability of a
//! first-quartile block position as the fee cap rises, and the Herfindahl
//! index of builder block counts.
//!
//! Each export has a plain Rust twin so the arithmetic is testable natively.

use reorder_core::concentration::herfindahl_from_counts;
use reorder_core::normal;
use reorder_core::sandwich::{amm_counterfactual, CounterfactualRule};
use wasm_bindgen::prelude::*;

#[wasm_bindgen]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Harm {
    /// Pre-front pool reserves; NaN when there was no front run.
    pub reserve_in: f64,
    pub reserve_out: f64,
    pub counterfactual_out: f64,
    pub harm: f64,
    pub fit_error: f64,
}

pub fn harm(
    front_in: f64,
    front_out: f64,
    victim_in: f64,
    victim_out: f64,
    fee: f64,
    replay: bool,
) -> reorder_core::Result<Harm> {
    let rule = if replay {
        CounterfactualRule::PreFrontReserves
    } else {
        CounterfactualRule::FrontExecutionPrice
    };
    let a = amm_counterfactual(front_in, front_out, victim_in, victim_out, fee, rule)?;
    let (x, y) = a.reserves.unwrap_or((f64::NAN, f64::NAN));
    Ok(Harm {
        reserve_in: x,
        reserve_out: y,
        counterfactual_out: a.counterfactual_out,
        harm: a.harm,
        fit_error: a.fit_error,
    })
}

/// Victim harm in output tokens. `replay` re-runs the victim's swap against
/// the inferred pre-front reserves instead of pricing it at the front run's
/// average price.
#[wasm_bindgen(js_name = sandwichHarm)]
pub fn sandwich_harm(
    front_in: f64,
    front_out: f64,
    victim_in: f64,
    victim_out: f64,
    fee: f64,
    replay: bool,
) -> Result<Harm, JsError> {
    harm(front_in, front_out, victim_in, victim_out, fee, replay).map_err(|e| JsError::new(&e.to_string()))
}

/// `P(first bucket) = Φ(cut1 − index − coef·fee)` at `points` evenly spaced
/// fee caps from `fee_lo` to `fee_hi` Gwei.
#[wasm_bindgen(js_name = firstBucketCurve)]
pub fn first_bucket_curve(cut1: f64, index: f64, coef: f64, fee_lo: f64, fee_hi: f64, points: usize) -> Vec<f64> {
    let step = if points > 1 {
        (fee_hi - fee_lo) / (points - 1) as f64
    } else {
        0.0
    };
    (0..points)
        .map(|i| normal::cdf(cut1 - index - coef * (fee_lo + step * i as f64)))
        .collect()
}

/// Extra fee cap in Gwei that lifts the first-bucket probability by `delta`
/// at `fee`, from the local slope. NaN when the slope vanishes.
#[wasm_bindgen(js_name = feeForProbability)]
pub fn fee_for_probability(cut1: f64, index: f64, coef: f64, fee: f64, delta: f64) -> f64 {
    let slope = (-coef * normal::pdf(cut1 - index - coef * fee)).abs();
    if slope < 1e-300 {
        f64::NAN
    } else {
        delta / slope
    }
}

/// Herfindahl index on the 0 to 10,000 scale of block counts per builder.
#[wasm_bindgen]
pub fn hhi(counts: Vec<u32>) -> f64 {
    let c: Vec<usize> = counts.iter().map(|c| *c as usize).collect();
    herfindahl_from_counts(&c, c.iter().sum())
}
