//! Constant-product pool arithmetic for sandwich harm.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Output of swapping `amount_in` into a pool holding `(reserve_in,
/// reserve_out)`: `y·Δ(1−f) / (x + Δ(1−f))`.
pub fn swap_out(reserve_in: f64, reserve_out: f64, amount_in: f64, fee: f64) -> f64 {
    let a = amount_in * (1.0 - fee);
    reserve_out * a / (reserve_in + a)
}

/// How the victim's undisturbed output is priced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CounterfactualRule {
    /// The victim's input at the front run's average execution price,
    /// `victim_in · front_out / front_in`.
    #[default]
    FrontExecutionPrice,
    /// The victim's swap replayed against the inferred pre-front reserves.
    PreFrontReserves,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AmmCounterfactual {
    /// Inferred `(x, y)` before the front run; `None` when there was no front run.
    pub reserves: Option<(f64, f64)>,
    pub counterfactual_out: f64,
    /// `counterfactual_out − victim_out`, in output tokens.
    pub harm: f64,
    /// Largest relative error of the inferred reserves against the two
    /// observed outputs.
    pub fit_error: f64,
}

/// Relative tolerance for the reserve search.
pub const RESERVE_TOL: f64 = 1e-9;
/// Inferred reserves must reproduce both observed swaps this closely.
pub const REPRODUCE_TOL: f64 = 1e-6;

/// Infers the pre-front reserves from two sequential swaps in the same
/// direction and prices the victim's swap without the front run.
///
/// With `a = front_in(1−f)` the front swap pins `y = front_out(x + a)/a`, so
/// after it the pool holds `x + front_in` and `front_out·x/a`. The victim's
/// output is then increasing in `x` alone, and `x` is found by bisection.
pub fn amm_counterfactual(
    front_in: f64,
    front_out: f64,
    victim_in: f64,
    victim_out: f64,
    fee: f64,
    rule: CounterfactualRule,
) -> Result<AmmCounterfactual> {
    if !(0.0..=0.01).contains(&fee) {
        return Err(Error::Domain(format!("fee rate {fee} outside [0, 0.01]")));
    }
    for (name, v) in [
        ("front_in", front_in),
        ("front_out", front_out),
        ("victim_in", victim_in),
        ("victim_out", victim_out),
    ] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::Domain(format!("{name} = {v} must be finite and non-negative")));
        }
    }
    if front_in == 0.0 {
        return Ok(AmmCounterfactual {
            reserves: None,
            counterfactual_out: victim_out,
            harm: 0.0,
            fit_error: 0.0,
        });
    }
    if front_out <= 0.0 || victim_in <= 0.0 || victim_out <= 0.0 {
        return Err(Error::Inference("swap amounts must be positive".into()));
    }
    let a = front_in * (1.0 - fee);
    let v = victim_in * (1.0 - fee);
    let victim_at = |x: f64| swap_out(x + front_in, front_out * x / a, victim_in, fee);
    // victim_at rises from 0 towards front_out·v/a.
    if victim_out >= front_out * v / a {
        return Err(Error::Inference(
            "victim price is not worse than the front run's; no positive reserves fit".into(),
        ));
    }
    let mut hi = front_in.max(victim_in).max(1.0);
    while victim_at(hi) < victim_out {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::Inference("reserve search diverged".into()));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if victim_at(mid) < victim_out {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= RESERVE_TOL * 1e-3 * hi {
            break;
        }
    }
    let x = 0.5 * (lo + hi);
    let y = front_out * (x + a) / a;

    let rel = |got: f64, want: f64| ((got - want) / want).abs();
    let front_check = swap_out(x, y, front_in, fee);
    let victim_check = swap_out(x + front_in, y - front_check, victim_in, fee);
    let fit_error = rel(front_check, front_out).max(rel(victim_check, victim_out));
    if !(fit_error <= REPRODUCE_TOL) {
        return Err(Error::Inference(format!(
            "inferred reserves miss the observed swaps by {fit_error:e}"
        )));
    }
    let counterfactual_out = match rule {
        CounterfactualRule::FrontExecutionPrice => victim_in * front_out / front_in,
        CounterfactualRule::PreFrontReserves => swap_out(x, y, victim_in, fee),
    };
    Ok(AmmCounterfactual {
        reserves: Some((x, y)),
        counterfactual_out,
        harm: counterfactual_out - victim_out,
        fit_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn no_front_run_no_harm() {
        let r = amm_counterfactual(0.0, 0.0, 0.83, 157e6, 0.003, CounterfactualRule::default()).unwrap();
        assert_eq!((r.counterfactual_out, r.harm, r.reserves), (157e6, 0.0, None));
    }

    #[test]
    fn observed_sandwich() {
        let (fi, fo, vi, vo) = (1.586925, 319_495_865.86, 0.83, 157_358_171.48);
        let r = amm_counterfactual(fi, fo, vi, vo, 0.003, CounterfactualRule::FrontExecutionPrice).unwrap();
        assert!(r.fit_error < 1e-6);
        assert!(((r.counterfactual_out - 167_104_025.0) / 167_104_025.0).abs() < 1e-3);
        assert!((r.harm - 9.7e6).abs() < 0.1e6);
        // Closed-form reserves as an oracle for the bisection.
        let a = fi * 0.997;
        let v = vi * 0.997;
        let x = vo * a * (fi + v) / (fo * v - vo * a);
        let (bx, _) = r.reserves.unwrap();
        assert!(((bx - x) / x).abs() < 1e-9);
        let pre = amm_counterfactual(fi, fo, vi, vo, 0.003, CounterfactualRule::PreFrontReserves).unwrap();
        assert!(pre.harm > 0.0);
    }

    #[test]
    fn synthetic_pool_matches_formula() {
        let (x, y) = (100.0, 1e9);
        let (fi, vi) = (3.0, 1.5);
        let fo = y * fi / (x + fi);
        let vo = (y - fo) * vi / (x + fi + vi);
        assert!((swap_out(x, y, fi, 0.0) - fo).abs() / fo < 1e-12);
        let r = amm_counterfactual(fi, fo, vi, vo, 0.0, CounterfactualRule::PreFrontReserves).unwrap();
        let (rx, ry) = r.reserves.unwrap();
        assert!(((rx - x) / x).abs() < 1e-9 && ((ry - y) / y).abs() < 1e-9);
        let cf = y * vi / (x + vi);
        assert!(((r.counterfactual_out - cf) / cf).abs() < 1e-9);
    }

    #[test]
    fn infeasible_inputs() {
        // Victim got a better price than the front run.
        assert!(matches!(
            amm_counterfactual(1.0, 100.0, 1.0, 150.0, 0.003, CounterfactualRule::default()),
            Err(Error::Inference(_))
        ));
        assert!(matches!(
            amm_counterfactual(1.0, 100.0, 1.0, 50.0, 0.02, CounterfactualRule::default()),
            Err(Error::Domain(_))
        ));
    }

    proptest! {
        #[test]
        fn harm_vanishes_with_front_size(
            x in 10.0f64..1000.0,
            y in 1e6f64..1e10,
            vi in 0.1f64..5.0,
            fee in 0.0f64..0.01,
        ) {
            let mut last = f64::INFINITY;
            for eps in [1e-1, 1e-3, 1e-5] {
                let fo = swap_out(x, y, eps, fee);
                let vo = swap_out(x + eps, y - fo, vi, fee);
                let r = amm_counterfactual(eps, fo, vi, vo, fee, CounterfactualRule::PreFrontReserves).unwrap();
                prop_assert!(r.fit_error <= REPRODUCE_TOL);
                let rel = r.harm / vo;
                prop_assert!(rel >= -1e-9 && rel <= last + 1e-9);
                last = rel;
            }
            prop_assert!(last < 1e-4);
        }
    }
}
