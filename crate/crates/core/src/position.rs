//! Position of each transaction in the mempool and in the finished block,
//! both mapped onto [0, 1], and the per-day estimation design.

use std::collections::{HashMap, HashSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dataset::DayData;
use crate::error::{Error, Result};
use crate::labels::{Label, LabelRegistry};
use crate::types::{SandwichRecord, TxHash, TxRecord};

/// How [0, 1] positions are cut into ordered buckets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bucketing {
    #[default]
    Quartiles,
    Deciles,
}

impl Bucketing {
    pub fn count(self) -> u8 {
        match self {
            Bucketing::Quartiles => 4,
            Bucketing::Deciles => 10,
        }
    }

    fn prefix(self) -> &'static str {
        match self {
            Bucketing::Quartiles => "q",
            Bucketing::Deciles => "d",
        }
    }
}

/// Maps `i / (n - 1)` for `i in 0..n`; a single-transaction block sits at 0.
fn rank_position(rank: usize, n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        rank as f64 / (n - 1) as f64
    }
}

/// Block position of every transaction: `block_index / (n - 1)`.
///
/// Fails unless the indices are exactly `0..n`.
pub fn normalize_block_positions(block: &[TxRecord]) -> Result<HashMap<TxHash, f64>> {
    let n = block.len();
    let mut seen = vec![false; n];
    for tx in block {
        let i = tx.block_index as usize;
        if i >= n || seen[i] {
            return Err(Error::Data(format!(
                "block {}: index {} duplicated or out of range for {} transactions",
                tx.block_number, tx.block_index, n
            )));
        }
        seen[i] = true;
    }
    Ok(block
        .iter()
        .map(|t| (t.tx_hash, rank_position(t.block_index as usize, n)))
        .collect())
}

/// Mempool position of every transaction in `block`, ranked by first
/// sighting among the block's transactions that were seen at all. Ties are
/// broken by hash. Unseen transactions map to `None`.
pub fn mempool_positions(
    block: &[TxRecord],
    first_seen: &HashMap<TxHash, i64>,
) -> HashMap<TxHash, Option<f64>> {
    let mut seen: Vec<(i64, TxHash)> = block
        .iter()
        .filter_map(|t| first_seen.get(&t.tx_hash).map(|ts| (*ts, t.tx_hash)))
        .collect();
    seen.sort_unstable();
    seen.dedup_by_key(|(_, h)| *h);
    let n = seen.len();
    let mut out: HashMap<TxHash, Option<f64>> = block.iter().map(|t| (t.tx_hash, None)).collect();
    for (rank, (_, h)) in seen.into_iter().enumerate() {
        out.insert(h, Some(rank_position(rank, n)));
    }
    out
}

/// Bucket `1..=k` of a [0, 1] position with closed upper edges at `j / k`.
pub fn bucket(position: f64, k: u8) -> u8 {
    let k = k.max(1);
    for j in 1..k {
        if position <= j as f64 / k as f64 {
            return j;
        }
    }
    k
}

/// Quartile `1..=4`: 1 if p ≤ 0.25, 2 if p ≤ 0.5, 3 if p ≤ 0.75, else 4.
pub fn quartile(position: f64) -> u8 {
    bucket(position, 4)
}

/// One estimation observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignRow {
    pub tx_hash: TxHash,
    pub block_number: u64,
    /// Dependent variable, `1..=k`.
    pub block_bucket: u8,
    /// Bucket of the mempool position, `None` when never seen.
    pub mempool_bucket: Option<u8>,
    /// Gwei per gas, raw units.
    pub max_fee_per_gas: f64,
    pub to_dex: bool,
    pub from_dex: bool,
    pub to_mev: bool,
    pub from_mev: bool,
    pub front_run: bool,
    pub back_run: bool,
    pub block_position: f64,
    pub mempool_position: Option<f64>,
}

impl DesignRow {
    pub fn in_mempool(&self) -> bool {
        self.mempool_bucket.is_some()
    }

    /// Mempool bucket dummy `j` (1-based).
    pub fn mempool_dummy(&self, j: u8) -> bool {
        self.mempool_bucket == Some(j)
    }
}

/// Regressor layout of the placement model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DesignSpec {
    pub bucketing: Bucketing,
    /// Adds the front-run and back-run indicators.
    pub extended: bool,
}

pub const MAX_FEE: &str = "max_fee_per_gas";

impl DesignSpec {
    /// Regressor names in column order. The last mempool bucket is the
    /// omitted baseline.
    pub fn names(&self) -> Vec<String> {
        let k = self.bucketing.count();
        let mut names: Vec<String> = (1..k)
            .map(|j| format!("mempool_{}{j}", self.bucketing.prefix()))
            .collect();
        names.extend(
            [MAX_FEE, "to_dex", "to_mev", "from_dex", "from_mev"]
                .iter()
                .map(|s| s.to_string()),
        );
        if self.extended {
            names.push("front_run".into());
            names.push("back_run".into());
        }
        names
    }

    pub fn width(&self) -> usize {
        self.bucketing.count() as usize - 1 + 5 + if self.extended { 2 } else { 0 }
    }

    /// Writes the regressor vector of `row` into `out` (length `width()`).
    pub fn fill(&self, row: &DesignRow, out: &mut [f64]) {
        let k = self.bucketing.count();
        let b = |v: bool| if v { 1.0 } else { 0.0 };
        let mut i = 0;
        for j in 1..k {
            out[i] = b(row.mempool_dummy(j));
            i += 1;
        }
        for v in [
            row.max_fee_per_gas,
            b(row.to_dex),
            b(row.to_mev),
            b(row.from_dex),
            b(row.from_mev),
        ] {
            out[i] = v;
            i += 1;
        }
        if self.extended {
            out[i] = b(row.front_run);
            out[i + 1] = b(row.back_run);
        }
    }

    pub fn regressors(&self, row: &DesignRow) -> Vec<f64> {
        let mut v = vec![0.0; self.width()];
        self.fill(row, &mut v);
        v
    }
}

#[derive(Debug, Clone, Default)]
pub struct DesignRows {
    pub rows: Vec<DesignRow>,
    /// Blocks left out because their indices were not `0..n`.
    pub skipped_blocks: Vec<u64>,
    /// Hashes listed as both a front and a back leg; kept as front runs.
    pub leg_conflicts: usize,
}

/// Builds one design row per transaction of the day.
///
/// DEX and MEV indicators come from the label registry applied to the
/// sender and recipient. A contract creation (no recipient) has all four
/// indicators at zero. Transactions never seen in the mempool keep all
/// mempool dummies at zero. With `spec.extended`, the front/back-run flags
/// come from `sandwiches`.
pub fn build_design_rows(
    day: &DayData,
    first_seen: &HashMap<TxHash, i64>,
    registry: &LabelRegistry,
    sandwiches: &[SandwichRecord],
    spec: DesignSpec,
) -> DesignRows {
    if day.blocks.is_empty() {
        log::warn!("{}: no blocks for this day", day.date);
        return DesignRows::default();
    }
    let (fronts, backs): (HashSet<TxHash>, HashSet<TxHash>) = if spec.extended {
        (
            sandwiches.iter().map(|s| s.front_hash).collect(),
            sandwiches.iter().map(|s| s.back_hash).collect(),
        )
    } else {
        (HashSet::new(), HashSet::new())
    };
    let k = spec.bucketing.count();

    let per_block = |block: &crate::dataset::BlockTxs| -> std::result::Result<(Vec<DesignRow>, usize), u64> {
        let block_pos = normalize_block_positions(&block.txs).map_err(|e| {
            log::warn!("{}: {e}", day.date);
            block.block_number
        })?;
        let mem_pos = mempool_positions(&block.txs, first_seen);
        let mut conflicts = 0;
        let mut rows = Vec::with_capacity(block.txs.len());
        for tx in &block.txs {
            let bp = block_pos[&tx.tx_hash];
            let mp = mem_pos[&tx.tx_hash];
            let (to_dex, to_mev, from_dex, from_mev) = match tx.to_addr {
                None => (false, false, false, false),
                Some(to) => (
                    registry.has(&to, Label::Dex),
                    registry.has(&to, Label::MevBuilder),
                    registry.has(&tx.from_addr, Label::Dex),
                    registry.has(&tx.from_addr, Label::MevBuilder),
                ),
            };
            let front_run = fronts.contains(&tx.tx_hash);
            let mut back_run = backs.contains(&tx.tx_hash);
            if front_run && back_run {
                conflicts += 1;
                back_run = false;
            }
            rows.push(DesignRow {
                tx_hash: tx.tx_hash,
                block_number: tx.block_number,
                block_bucket: bucket(bp, k),
                mempool_bucket: mp.map(|p| bucket(p, k)),
                max_fee_per_gas: tx.max_fee_per_gas.0,
                to_dex,
                from_dex,
                to_mev,
                from_mev,
                front_run,
                back_run,
                block_position: bp,
                mempool_position: mp,
            });
        }
        Ok((rows, conflicts))
    };

    #[cfg(feature = "parallel")]
    let results: Vec<_> = {
        use rayon::prelude::*;
        day.blocks.par_iter().map(per_block).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<_> = day.blocks.iter().map(per_block).collect();

    let mut out = DesignRows::default();
    for r in results {
        match r {
            Ok((rows, c)) => {
                out.rows.extend(rows);
                out.leg_conflicts += c;
            }
            Err(bn) => out.skipped_blocks.push(bn),
        }
    }
    if out.leg_conflicts > 0 {
        log::warn!(
            "{}: {} hashes are both front and back legs; treated as front runs",
            day.date,
            out.leg_conflicts
        );
    }
    out
}

/// Audit dump of design rows as CSV.
pub fn write_design_rows<W: Write>(rows: &[DesignRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "tx_hash",
        "block_number",
        "block_bucket",
        "mempool_bucket",
        "max_fee_per_gas",
        "to_dex",
        "from_dex",
        "to_mev",
        "from_mev",
        "front_run",
        "back_run",
        "block_position",
        "mempool_position",
        "in_mempool",
    ])?;
    let b = |v: bool| if v { "1" } else { "0" };
    for r in rows {
        w.write_record([
            r.tx_hash.to_string(),
            r.block_number.to_string(),
            r.block_bucket.to_string(),
            r.mempool_bucket.map(|m| m.to_string()).unwrap_or_default(),
            format!("{:.9}", r.max_fee_per_gas),
            b(r.to_dex).into(),
            b(r.from_dex).into(),
            b(r.to_mev).into(),
            b(r.from_mev).into(),
            b(r.front_run).into(),
            b(r.back_run).into(),
            format!("{:.9}", r.block_position),
            r.mempool_position.map(|p| format!("{p:.9}")).unwrap_or_default(),
            b(r.in_mempool()).into(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("design rows", e))?;
    Ok(())
}
