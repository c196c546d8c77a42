//! Builder market shares, Herfindahl indices, MEV block share and daily
//! validator revenue.
//!
//! A block counts as MEV-built when it carries a builder address.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use chrono::NaiveDate;
use serde::Serialize;

use crate::labels::{Label, LabelRegistry};
use crate::types::{Address, BlockMeta, DateWindow, TxRecord};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BuilderShare {
    /// `None` is the bucket of blocks without a builder.
    pub builder: Option<Address>,
    pub name: Option<String>,
    /// Whether the registry labels the address as an MEV builder.
    pub labeled: bool,
    pub blocks: usize,
    pub share: f64,
    pub mev_eth: f64,
}

/// Shares of blocks in `window`, largest builder first, with the non-MEV
/// bucket last.
pub fn builder_shares(blocks: &[BlockMeta], registry: &LabelRegistry, window: &DateWindow) -> Vec<BuilderShare> {
    let mut tally: BTreeMap<Option<Address>, (usize, f64)> = BTreeMap::new();
    let mut total = 0usize;
    for b in blocks.iter().filter(|b| window.contains(b.utc_date())) {
        let e = tally.entry(b.builder_addr).or_default();
        e.0 += 1;
        e.1 += b.mev_payment.0;
        total += 1;
    }
    let mut out: Vec<BuilderShare> = tally
        .into_iter()
        .map(|(builder, (n, eth))| BuilderShare {
            builder,
            name: builder.and_then(|a| registry.name(&a).map(str::to_string)),
            labeled: builder.is_some_and(|a| registry.has(&a, Label::MevBuilder)),
            blocks: n,
            share: n as f64 / total as f64,
            mev_eth: eth,
        })
        .collect();
    out.sort_by(|a, b| {
        a.builder
            .is_none()
            .cmp(&b.builder.is_none())
            .then(b.blocks.cmp(&a.blocks))
            .then(a.builder.cmp(&b.builder))
    });
    out
}

/// `Σ (100·s_i)²` on the 0–10,000 scale.
pub fn herfindahl(shares: &[f64]) -> f64 {
    shares.iter().map(|s| (100.0 * s).powi(2)).sum()
}

/// Herfindahl index of `counts` out of `total` units, computed in integers
/// so that equal splits give exactly `10,000 / n`.
pub fn herfindahl_from_counts(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return f64::NAN;
    }
    let sq: u128 = counts.iter().map(|c| (*c as u128) * (*c as u128)).sum();
    (10_000u128 * sq) as f64 / ((total as u128) * (total as u128)) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HhiVariants {
    /// Builders' shares of all blocks; builder-less blocks count in the
    /// denominator only.
    pub all_blocks: f64,
    /// Shares among builder-tagged blocks only.
    pub mev_only: f64,
    pub blocks: usize,
    pub mev_blocks: usize,
}

pub fn herfindahl_variants(shares: &[BuilderShare]) -> HhiVariants {
    let counts: Vec<usize> = shares.iter().filter(|s| s.builder.is_some()).map(|s| s.blocks).collect();
    let mev: usize = counts.iter().sum();
    let all: usize = shares.iter().map(|s| s.blocks).sum();
    HhiVariants {
        all_blocks: herfindahl_from_counts(&counts, all),
        mev_only: herfindahl_from_counts(&counts, mev),
        blocks: all,
        mev_blocks: mev,
    }
}

/// Fraction of blocks in `window` with a builder; NaN when there are none.
pub fn mev_block_share(blocks: &[BlockMeta], window: &DateWindow) -> f64 {
    let (n, m) = blocks
        .iter()
        .filter(|b| window.contains(b.utc_date()))
        .fold((0usize, 0usize), |(n, m), b| (n + 1, m + b.builder_addr.is_some() as usize));
    if n == 0 {
        f64::NAN
    } else {
        m as f64 / n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MevShareDay {
    pub date: NaiveDate,
    pub blocks: usize,
    pub mev_blocks: usize,
    pub share: f64,
}

pub fn mev_share_daily(blocks: &[BlockMeta], window: &DateWindow) -> Vec<MevShareDay> {
    let mut days: BTreeMap<NaiveDate, (usize, usize)> = BTreeMap::new();
    for b in blocks.iter().filter(|b| window.contains(b.utc_date())) {
        let e = days.entry(b.utc_date()).or_default();
        e.0 += 1;
        e.1 += b.builder_addr.is_some() as usize;
    }
    days.into_iter()
        .map(|(date, (n, m))| MevShareDay {
            date,
            blocks: n,
            mev_blocks: m,
            share: m as f64 / n as f64,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RevenueDay {
    pub date: NaiveDate,
    /// Priority fees: `Σ gas_used × (effective − base fee)`, in ETH.
    pub net_gas_eth: f64,
    pub mev_payments_eth: f64,
    pub blocks: usize,
}

impl RevenueDay {
    pub fn total_eth(&self) -> f64 {
        self.net_gas_eth + self.mev_payments_eth
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct RevenueSeries {
    pub days: Vec<RevenueDay>,
    /// Dates in the window left out on request.
    pub excluded: Vec<NaiveDate>,
    /// Transactions whose block has no metadata.
    pub orphan_txs: usize,
}

pub fn validator_revenue(
    blocks: &[BlockMeta],
    txs: &[TxRecord],
    window: &DateWindow,
    exclusions: &BTreeSet<NaiveDate>,
) -> RevenueSeries {
    let meta: HashMap<u64, &BlockMeta> = blocks.iter().map(|b| (b.block_number, b)).collect();
    let mut days: BTreeMap<NaiveDate, RevenueDay> = BTreeMap::new();
    let mut excluded = BTreeSet::new();
    let mut keep = |date: NaiveDate| {
        if !window.contains(date) {
            return false;
        }
        if exclusions.contains(&date) {
            excluded.insert(date);
            return false;
        }
        true
    };
    let blank = |date| RevenueDay {
        date,
        net_gas_eth: 0.0,
        mev_payments_eth: 0.0,
        blocks: 0,
    };
    for b in blocks {
        let d = b.utc_date();
        if keep(d) {
            let e = days.entry(d).or_insert_with(|| blank(d));
            e.mev_payments_eth += b.mev_payment.0;
            e.blocks += 1;
        }
    }
    let mut orphan_txs = 0;
    for t in txs {
        let Some(b) = meta.get(&t.block_number) else {
            orphan_txs += 1;
            continue;
        };
        let d = b.utc_date();
        if keep(d) {
            let tip = t.effective_gas_price.0 - b.base_fee_per_gas.0;
            days.entry(d).or_insert_with(|| blank(d)).net_gas_eth += t.gas_used as f64 * tip * 1e-9;
        }
    }
    RevenueSeries {
        days: days.into_values().collect(),
        excluded: excluded.into_iter().collect(),
        orphan_txs,
    }
}
