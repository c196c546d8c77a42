//! Sandwich-attack analytics: joining vendor records to block data, the
//! back-run fee test, position displacement, harm, profit and the daily
//! regression of the placement effect on attack characteristics.

pub mod amm;

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::Serialize;

use crate::error::Result;
use crate::position::{mempool_positions, normalize_block_positions};
use crate::stats::{self, Alternative, OlsFit, PairedTest, TTestResult};
use crate::types::{BlockMeta, SandwichRecord, TxHash, TxRecord};
use crate::units::Eth;

pub use amm::{amm_counterfactual, swap_out, AmmCounterfactual, CounterfactualRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Leg {
    Front,
    Victim,
    Back,
}

impl Leg {
    pub const ALL: [Leg; 3] = [Leg::Front, Leg::Victim, Leg::Back];

    pub fn as_str(self) -> &'static str {
        match self {
            Leg::Front => "front_run",
            Leg::Victim => "victim",
            Leg::Back => "back_run",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnrichedSandwich {
    pub record: SandwichRecord,
    /// Front, victim, back.
    pub legs: [TxRecord; 3],
    pub block_positions: [f64; 3],
    pub mempool_positions: [Option<f64>; 3],
    pub gas_fees: [Eth; 3],
    /// Sandwich records naming this block, including this one.
    pub block_sandwiches: usize,
    pub mev_payment: Eth,
}

impl EnrichedSandwich {
    pub fn leg(&self, leg: Leg) -> &TxRecord {
        &self.legs[leg as usize]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct JoinDrops {
    pub missing_leg: usize,
    pub wrong_block: usize,
    pub out_of_order: usize,
    pub bad_block: usize,
}

impl JoinDrops {
    pub fn total(&self) -> usize {
        self.missing_leg + self.wrong_block + self.out_of_order + self.bad_block
    }
}

#[derive(Debug, Clone, Default)]
pub struct JoinResult {
    pub enriched: Vec<EnrichedSandwich>,
    pub drops: JoinDrops,
}

/// Resolves each record's three hashes to transactions in its block.
/// Records with a missing leg, a leg in another block, or legs not in
/// front < victim < back order are dropped and counted.
pub fn join_sandwiches(
    sandwiches: &[SandwichRecord],
    txs: &[TxRecord],
    blocks: &[BlockMeta],
    first_seen: &HashMap<TxHash, i64>,
) -> JoinResult {
    let by_hash: HashMap<TxHash, &TxRecord> = txs.iter().map(|t| (t.tx_hash, t)).collect();
    let wanted: HashSet<u64> = sandwiches.iter().map(|s| s.block_number).collect();
    let mut by_block: BTreeMap<u64, Vec<TxRecord>> = BTreeMap::new();
    for t in txs.iter().filter(|t| wanted.contains(&t.block_number)) {
        by_block.entry(t.block_number).or_default().push(t.clone());
    }
    let meta: HashMap<u64, &BlockMeta> = blocks.iter().map(|b| (b.block_number, b)).collect();
    let mut counts: HashMap<u64, usize> = HashMap::new();
    for s in sandwiches {
        *counts.entry(s.block_number).or_default() += 1;
    }
    let mut positions: HashMap<u64, Option<(HashMap<TxHash, f64>, HashMap<TxHash, Option<f64>>)>> =
        HashMap::new();

    let mut out = JoinResult::default();
    for s in sandwiches {
        let hashes = [s.front_hash, s.victim_hash, s.back_hash];
        let found: Option<Vec<&TxRecord>> = hashes.iter().map(|h| by_hash.get(h).copied()).collect();
        let Some(legs) = found else {
            out.drops.missing_leg += 1;
            continue;
        };
        if legs.iter().any(|t| t.block_number != s.block_number) {
            out.drops.wrong_block += 1;
            continue;
        }
        if !(legs[0].block_index < legs[1].block_index && legs[1].block_index < legs[2].block_index) {
            out.drops.out_of_order += 1;
            continue;
        }
        let pos = positions.entry(s.block_number).or_insert_with(|| {
            let block = &by_block[&s.block_number];
            normalize_block_positions(block)
                .ok()
                .map(|bp| (bp, mempool_positions(block, first_seen)))
        });
        let Some((bp, mp)) = pos.as_ref() else {
            out.drops.bad_block += 1;
            continue;
        };
        out.enriched.push(EnrichedSandwich {
            record: s.clone(),
            legs: [legs[0].clone(), legs[1].clone(), legs[2].clone()],
            block_positions: hashes.map(|h| bp[&h]),
            mempool_positions: hashes.map(|h| mp[&h]),
            gas_fees: [legs[0].gas_fee(), legs[1].gas_fee(), legs[2].gas_fee()],
            block_sandwiches: counts[&s.block_number],
            mev_payment: meta.get(&s.block_number).map(|b| b.mev_payment).unwrap_or_default(),
        });
    }
    if out.drops.total() > 0 {
        log::warn!("dropped {} sandwich records: {:?}", out.drops.total(), out.drops);
    }
    out
}

/// Welch test of back-run gas fees (ETH) against every other transaction.
pub fn backrun_gas_test(
    enriched: &[EnrichedSandwich],
    all_txs: &[TxRecord],
    alt: Alternative,
) -> Result<TTestResult> {
    let backs: HashSet<TxHash> = enriched.iter().map(|e| e.record.back_hash).collect();
    let a: Vec<f64> = enriched.iter().map(|e| e.gas_fees[Leg::Back as usize].0).collect();
    let b: Vec<f64> = all_txs
        .iter()
        .filter(|t| !backs.contains(&t.tx_hash))
        .map(|t| t.gas_fee().0)
        .collect();
    stats::welch_t_test(&a, &b, alt)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DisplacementRow {
    pub leg: Leg,
    pub n: usize,
    pub mempool_mean: f64,
    pub block_mean: f64,
    pub t_stat: f64,
    pub p_value: f64,
}

/// Paired comparison of mempool and block positions for each leg, over legs
/// that were seen in the mempool.
pub fn position_displacement(enriched: &[EnrichedSandwich]) -> Vec<DisplacementRow> {
    Leg::ALL
        .iter()
        .map(|leg| {
            let i = *leg as usize;
            let (mem, blk): (Vec<f64>, Vec<f64>) = enriched
                .iter()
                .filter_map(|e| e.mempool_positions[i].map(|m| (m, e.block_positions[i])))
                .unzip();
            match stats::paired_t_test(&mem, &blk, Alternative::TwoSided) {
                Ok(PairedTest {
                    n,
                    mean_a,
                    mean_b,
                    t_stat,
                    p_value,
                    ..
                }) => DisplacementRow {
                    leg: *leg,
                    n,
                    mempool_mean: mean_a,
                    block_mean: mean_b,
                    t_stat,
                    p_value,
                },
                Err(_) => DisplacementRow {
                    leg: *leg,
                    n: mem.len(),
                    mempool_mean: if mem.is_empty() { f64::NAN } else { stats::mean(&mem) },
                    block_mean: if blk.is_empty() { f64::NAN } else { stats::mean(&blk) },
                    t_stat: f64::NAN,
                    p_value: f64::NAN,
                },
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub record: SandwichRecord,
    pub note: String,
}

/// Flags likely sandwiches inside one block: a sender calls the same
/// contract twice within `window` positions, once paying value and once
/// not, around a third party's call to that contract.
///
/// Advisory only; cost and profit are left at zero.
pub fn detect_sandwiches_heuristic(block: &[TxRecord], window: usize) -> Vec<Candidate> {
    let mut txs: Vec<&TxRecord> = block.iter().collect();
    txs.sort_by_key(|t| t.block_index);
    let mut pairs = Vec::new();
    let mut used = HashSet::new();
    for i in 0..txs.len() {
        if used.contains(&i) {
            continue;
        }
        let Some(dex) = txs[i].to_addr else { continue };
        let upper = (i + window).min(txs.len().saturating_sub(1));
        for k in i + 2..=upper {
            let t = txs[k];
            if used.contains(&k)
                || t.from_addr != txs[i].from_addr
                || t.to_addr != Some(dex)
                || t.value.is_zero() == txs[i].value.is_zero()
            {
                continue;
            }
            pairs.push((i, k));
            used.insert(i);
            used.insert(k);
            break;
        }
    }
    let mut out = Vec::new();
    for (i, k) in pairs {
        let front = txs[i];
        let victims: Vec<usize> = (i + 1..k)
            .filter(|j| {
                !used.contains(j) && txs[*j].to_addr == front.to_addr && txs[*j].from_addr != front.from_addr
            })
            .collect();
        let Some(&j) = victims.first() else { continue };
        used.insert(j);
        out.push(Candidate {
            record: SandwichRecord {
                block_number: front.block_number,
                front_hash: front.tx_hash,
                victim_hash: txs[j].tx_hash,
                back_hash: txs[k].tx_hash,
                cost_usd: 0.0,
                profit_usd: 0.0,
            },
            note: format!(
                "span {}, {} candidate victim{}",
                k - i,
                victims.len(),
                if victims.len() == 1 { "" } else { "s" }
            ),
        });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Profit {
    pub revenue_eth: f64,
    pub costs_usd: f64,
    pub net_usd: f64,
}

/// Revenue `back_out − front_in` in ETH; costs are the legs' gas fees at
/// `eth_usd` plus any other costs already in USD.
pub fn sandwich_profit(front_in: Eth, back_out: Eth, leg_fees: &[Eth], eth_usd: f64, other_costs_usd: f64) -> Profit {
    let revenue_eth = back_out.0 - front_in.0;
    let costs_usd = leg_fees.iter().map(|f| f.0).sum::<f64>() * eth_usd + other_costs_usd;
    Profit {
        revenue_eth,
        costs_usd,
        net_usd: revenue_eth * eth_usd - costs_usd,
    }
}

/// Indices with `effect ≥ threshold`, and the retained share.
pub fn filter_high_effects(effects: &[f64], threshold: f64) -> (Vec<usize>, f64) {
    let kept: Vec<usize> = (0..effects.len()).filter(|i| effects[*i] >= threshold).collect();
    let rate = if effects.is_empty() {
        f64::NAN
    } else {
        kept.len() as f64 / effects.len() as f64
    };
    (kept, rate)
}

/// Regressors of the daily effect regression, after the intercept.
pub const EFFECT_REGRESSORS: [&str; 6] = [
    "cost_usd",
    "gas_fee_eth",
    "block_sandwiches",
    "max_priority_fee_gwei",
    "profit_usd",
    "mev_payment_eth",
];

/// One front- or back-run leg with its estimated placement effect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EffectObservation {
    pub effect: f64,
    pub cost_usd: f64,
    /// Gas used times the price paid, not the fee cap.
    pub gas_fee_eth: f64,
    pub block_sandwiches: f64,
    pub max_priority_fee_gwei: f64,
    pub profit_usd: f64,
    pub mev_payment_eth: f64,
}

impl EffectObservation {
    pub fn from_leg(e: &EnrichedSandwich, leg: Leg, effect: f64) -> Self {
        let t = e.leg(leg);
        Self {
            effect,
            cost_usd: e.record.cost_usd,
            gas_fee_eth: e.gas_fees[leg as usize].0,
            block_sandwiches: e.block_sandwiches as f64,
            max_priority_fee_gwei: t.max_priority_fee_per_gas.0,
            profit_usd: e.record.profit_usd,
            mev_payment_eth: e.mev_payment.0,
        }
    }

    fn regressors(&self) -> [f64; 6] {
        [
            self.cost_usd,
            self.gas_fee_eth,
            self.block_sandwiches,
            self.max_priority_fee_gwei,
            self.profit_usd,
            self.mev_payment_eth,
        ]
    }
}

/// OLS of the placement effect on an intercept and [`EFFECT_REGRESSORS`].
pub fn fit_effect_regression(obs: &[EffectObservation]) -> Result<OlsFit> {
    let rows: Vec<f64> = obs.iter().flat_map(|o| o.regressors()).collect();
    let y: Vec<f64> = obs.iter().map(|o| o.effect).collect();
    stats::ols(&EFFECT_REGRESSORS, &rows, &y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::testutil::{addr, block, hash, tx};
    use crate::units::{Gwei, Wei};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn record(block: u64, f: u64, v: u64, b: u64) -> SandwichRecord {
        SandwichRecord {
            block_number: block,
            front_hash: hash(f),
            victim_hash: hash(v),
            back_hash: hash(b),
            cost_usd: 10.0,
            profit_usd: 2.0,
        }
    }

    fn block_txs(number: u64, n: u32) -> Vec<TxRecord> {
        (0..n).map(|i| tx(number * 100 + i as u64, number, i)).collect()
    }

    #[test]
    fn join_counts_and_drops() {
        let txs = block_txs(1, 12);
        let blocks = vec![block(1, 12)];
        let recs = vec![record(1, 100, 101, 102), record(1, 103, 104, 105), record(1, 106, 107, 108)];
        let j = join_sandwiches(&recs, &txs, &blocks, &HashMap::new());
        assert_eq!(j.enriched.len(), 3);
        assert!(j.enriched.iter().all(|e| e.block_sandwiches == 3));
        assert_eq!(j.enriched[0].block_positions[2], 2.0 / 11.0);
        assert_eq!(j.enriched[0].mempool_positions, [None; 3]);

        let j = join_sandwiches(&[record(1, 100, 999, 102)], &txs, &blocks, &HashMap::new());
        assert_eq!((j.enriched.len(), j.drops.missing_leg), (0, 1));
        let j = join_sandwiches(&[record(1, 102, 101, 100)], &txs, &blocks, &HashMap::new());
        assert_eq!(j.drops.out_of_order, 1);
    }

    #[test]
    fn backrun_fee_difference() {
        let mut txs = block_txs(1, 30);
        for t in txs.iter_mut().step_by(3).skip(1) {
            t.effective_gas_price = Gwei(200.0 + t.block_index as f64);
        }
        let recs: Vec<SandwichRecord> = (0..9)
            .map(|k| record(1, 100 + 3 * k + 1, 100 + 3 * k + 2, 100 + 3 * k + 3))
            .collect();
        let j = join_sandwiches(&recs, &txs, &[block(1, 30)], &HashMap::new());
        let r = backrun_gas_test(&j.enriched, &txs, Alternative::TwoSided).unwrap();
        assert_eq!(r.n_a, 9);
        assert_eq!(r.n_b, 21);
        assert!(r.mean_a > r.mean_b && r.p_value < 1e-6);
    }

    #[test]
    fn displacement_zero_when_placed_as_seen() {
        let txs = block_txs(1, 30);
        let seen: HashMap<TxHash, i64> = txs.iter().map(|t| (t.tx_hash, t.block_index as i64)).collect();
        let recs: Vec<SandwichRecord> = (0..9)
            .map(|k| record(1, 100 + 3 * k, 100 + 3 * k + 1, 100 + 3 * k + 2))
            .collect();
        let j = join_sandwiches(&recs, &txs, &[block(1, 30)], &seen);
        for row in position_displacement(&j.enriched) {
            assert_eq!(row.mempool_mean, row.block_mean);
            assert_eq!(row.p_value, 1.0);
        }
    }

    fn dex_block(layout: &[(u8, Option<u8>, u128)]) -> Vec<TxRecord> {
        layout
            .iter()
            .enumerate()
            .map(|(i, (from, to, value))| {
                let mut t = tx(i as u64 + 1, 7, i as u32);
                t.from_addr = addr(*from);
                t.to_addr = to.map(addr);
                t.value = Wei(*value);
                t
            })
            .collect()
    }

    #[test]
    fn heuristic_textbook_triple() {
        let mut layout: Vec<(u8, Option<u8>, u128)> = (0..15u8).map(|i| (100 + i, Some(150 + i), 0)).collect();
        layout[10] = (1, Some(250), 1_000);
        layout[11] = (2, Some(250), 500);
        layout[12] = (1, Some(250), 0);
        let c = detect_sandwiches_heuristic(&dex_block(&layout), 8);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].record.front_hash, hash(11));
        assert_eq!(c[0].record.victim_hash, hash(12));
        assert_eq!(c[0].record.back_hash, hash(13));
    }

    #[test]
    fn heuristic_no_repeat_senders() {
        let layout: Vec<(u8, Option<u8>, u128)> = (0..10u8).map(|i| (i, Some(250), 5)).collect();
        assert!(detect_sandwiches_heuristic(&dex_block(&layout), 8).is_empty());
    }

    #[test]
    fn heuristic_interleaved() {
        let layout = vec![
            (1, Some(250), 10),
            (2, Some(250), 10),
            (3, Some(250), 4),
            (4, Some(250), 4),
            (1, Some(250), 0),
            (2, Some(250), 0),
        ];
        let c = detect_sandwiches_heuristic(&dex_block(&layout), 8);
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].record.victim_hash, hash(3));
        assert_eq!(c[1].record.victim_hash, hash(4));
    }

    #[test]
    fn profit_arithmetic() {
        let p = sandwich_profit(Eth(1.586925), Eth(1.641604), &[], 2370.65, 124.026572);
        assert!((p.revenue_eth - 0.054679).abs() < 1e-12);
        assert!((p.net_usd - (0.054679 * 2370.65 - 124.026572)).abs() < 1e-9);
        let flat = sandwich_profit(Eth(1.0), Eth(1.0), &[Eth(0.01), Eth(0.02)], 2000.0, 0.0);
        assert_eq!(flat.revenue_eth, 0.0);
        assert!((flat.net_usd + 60.0).abs() < 1e-9);
    }

    #[test]
    fn filter_rates() {
        assert_eq!(filter_high_effects(&[0.9; 5], 0.5).1, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let e: Vec<f64> = (0..20_000).map(|_| rng.random::<f64>()).collect();
        let (_, r) = filter_high_effects(&e, 0.5);
        assert!((r - 0.5).abs() < 0.02);
    }

    fn effect_data(seed: u64, n: usize, signal: bool) -> Vec<EffectObservation> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.05).unwrap();
        (0..n)
            .map(|_| {
                let cost = rng.random::<f64>() * 400.0;
                let count = rng.random_range(1..6) as f64;
                let effect = if signal { 0.146 + 5.264e-5 * cost + 4.075e-2 * count } else { 0.5 }
                    + noise.sample(&mut rng);
                EffectObservation {
                    effect,
                    cost_usd: cost,
                    gas_fee_eth: rng.random::<f64>() * 0.05,
                    block_sandwiches: count,
                    max_priority_fee_gwei: rng.random::<f64>() * 20.0,
                    profit_usd: rng.random::<f64>() * 50.0 - 10.0,
                    mev_payment_eth: rng.random::<f64>() * 0.2,
                }
            })
            .collect()
    }

    #[test]
    fn effect_regression_null_and_signal() {
        let fit = fit_effect_regression(&effect_data(1, 2000, false)).unwrap();
        for i in 1..fit.coef.len() {
            assert!(fit.coef[i].abs() < 3.0 * fit.se[i], "{}", fit.names[i]);
        }
        let fit = fit_effect_regression(&effect_data(2, 4000, true)).unwrap();
        for (name, truth) in [("intercept", 0.146), ("cost_usd", 5.264e-5), ("block_sandwiches", 4.075e-2)] {
            let i = fit.names.iter().position(|n| n == name).unwrap();
            assert!((fit.coef[i] - truth).abs() < 3.0 * fit.se[i], "{name}");
        }
    }

    #[test]
    fn effect_regression_names_collinear_columns() {
        let mut d = effect_data(3, 100, true);
        for o in d.iter_mut() {
            o.profit_usd = 2.0 * o.cost_usd;
        }
        match fit_effect_regression(&d) {
            Err(Error::RankDeficient(cols)) => {
                assert_eq!(cols, vec!["profit_usd".to_string(), "cost_usd".to_string()])
            }
            other => panic!("{other:?}"),
        }
    }
}
