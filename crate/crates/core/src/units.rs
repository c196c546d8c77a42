//! Monetary units. ETH, Gwei and Wei are kept apart at the type level so a
//! fee in Gwei cannot silently be added to a payment in ETH.
//!
//! Arithmetic is `f64` for ETH and Gwei: every downstream quantity is a
//! statistical estimate, not a ledger balance. Wei stays integral because raw
//! transfer values routinely exceed 2^53.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

pub const GWEI_PER_ETH: f64 = 1e9;
pub const WEI_PER_GWEI: f64 = 1e9;
pub const WEI_PER_ETH: f64 = 1e18;

#[derive(Debug, Clone, Copy, Default, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Eth(pub f64);

#[derive(Debug, Clone, Copy, Default, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Gwei(pub f64);

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Wei(pub u128);

impl Eth {
    pub fn to_gwei(self) -> Gwei {
        Gwei(self.0 * GWEI_PER_ETH)
    }

    pub fn to_usd(self, eth_usd: f64) -> f64 {
        self.0 * eth_usd
    }
}

impl Gwei {
    pub fn to_eth(self) -> Eth {
        Eth(self.0 / GWEI_PER_ETH)
    }

    /// Total fee for `gas` units at this per-gas price.
    pub fn for_gas(self, gas: u64) -> Eth {
        Gwei(self.0 * gas as f64).to_eth()
    }
}

impl Wei {
    pub fn to_eth(self) -> Eth {
        Eth(self.0 as f64 / WEI_PER_ETH)
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }
}

macro_rules! float_unit_ops {
    ($t:ident, $suffix:literal) => {
        impl Add for $t {
            type Output = $t;
            fn add(self, rhs: $t) -> $t {
                $t(self.0 + rhs.0)
            }
        }

        impl Sub for $t {
            type Output = $t;
            fn sub(self, rhs: $t) -> $t {
                $t(self.0 - rhs.0)
            }
        }

        impl Mul<f64> for $t {
            type Output = $t;
            fn mul(self, rhs: f64) -> $t {
                $t(self.0 * rhs)
            }
        }

        impl Sum for $t {
            fn sum<I: Iterator<Item = $t>>(iter: I) -> $t {
                $t(iter.map(|v| v.0).sum())
            }
        }

        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{} {}", self.0, $suffix)
            }
        }
    };
}

float_unit_ops!(Eth, "ETH");
float_unit_ops!(Gwei, "Gwei");
