//! Seeded synthetic data.
//!
//! [`generate_design_rows`] draws estimation rows directly from the
//! ordered-probit law and is the ground truth for estimator recovery.
//! [`generate_synthetic_day`] builds a complete day of blocks, mempool
//! sightings, labels, sandwiches and prices that round-trips through the
//! loaders. Inside a block each transaction draws a bucket label from the
//! law and the block is sorted by that label, so bucket shares within a block
//! are fixed by the block size and the labels only rank transactions.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{Days, NaiveDate, NaiveTime};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{
    IngestConfig, SourceFormat, SourceSpec, BLOCK_COLUMNS, MEMPOOL_COLUMNS, PRICE_COLUMNS,
    SANDWICH_COLUMNS, TX_COLUMNS,
};
use crate::labels::Label;
use crate::position::{bucket, Bucketing, DesignRow, DesignSpec};
use crate::types::{
    Address, BlockMeta, DateWindow, MempoolObs, PriceRow, SandwichRecord, TxHash, TxRecord,
};
use crate::units::{Eth, Gwei, Wei};

/// Placement-model parameters in the order of [`DesignSpec::names`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Truth {
    /// One coefficient per non-baseline mempool bucket; missing entries are 0.
    pub mempool: Vec<f64>,
    pub max_fee_per_gas: f64,
    pub to_dex: f64,
    pub to_mev: f64,
    pub from_dex: f64,
    pub from_mev: f64,
    pub front_run: f64,
    pub back_run: f64,
    pub cutpoints: Vec<f64>,
}

impl Default for Truth {
    fn default() -> Self {
        Self {
            mempool: vec![],
            max_fee_per_gas: -8.6e-4,
            to_dex: -0.77,
            to_mev: -1.7,
            from_dex: -1.4,
            from_mev: 1.99,
            front_run: -3.95,
            back_run: -3.2,
            cutpoints: vec![-0.6, 0.1, 0.8],
        }
    }
}

impl Truth {
    pub fn null(k: u8) -> Self {
        Self {
            mempool: vec![],
            max_fee_per_gas: 0.0,
            to_dex: 0.0,
            to_mev: 0.0,
            from_dex: 0.0,
            from_mev: 0.0,
            front_run: 0.0,
            back_run: 0.0,
            cutpoints: (1..k).map(|j| crate::normal::quantile(j as f64 / k as f64)).collect(),
        }
    }

    pub fn beta(&self, spec: DesignSpec) -> Vec<f64> {
        let k = spec.bucketing.count() as usize;
        let mut b: Vec<f64> = (0..k - 1).map(|j| self.mempool.get(j).copied().unwrap_or(0.0)).collect();
        b.extend([self.max_fee_per_gas, self.to_dex, self.to_mev, self.from_dex, self.from_mev]);
        if spec.extended {
            b.extend([self.front_run, self.back_run]);
        }
        b
    }

    fn check(&self, k: u8) -> Result<()> {
        if self.cutpoints.len() + 1 != k as usize {
            return Err(Error::Config(format!(
                "{} cutpoints given for {k} buckets",
                self.cutpoints.len()
            )));
        }
        if self.cutpoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("true cutpoints must increase".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelMix {
    pub dex_addresses: usize,
    pub mev_addresses: usize,
    pub builders: usize,
    pub senders: usize,
    pub attackers: usize,
    pub p_to_dex: f64,
    pub p_to_mev: f64,
    pub p_from_dex: f64,
    pub p_from_mev: f64,
    pub p_contract_creation: f64,
}

impl Default for LabelMix {
    fn default() -> Self {
        Self {
            dex_addresses: 20,
            mev_addresses: 10,
            builders: 6,
            senders: 5000,
            attackers: 40,
            p_to_dex: 0.15,
            p_to_mev: 0.03,
            p_from_dex: 0.01,
            p_from_mev: 0.03,
            p_contract_creation: 0.005,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeeMix {
    pub base_fee_gwei: f64,
    /// Median of the log-normal fee cap.
    pub max_fee_median_gwei: f64,
    pub max_fee_sigma: f64,
    pub priority_mean_gwei: f64,
    /// Back-run price as a multiple of the ordinary effective price.
    pub backrun_multiplier: f64,
    pub mev_payment_mean_eth: f64,
}

impl Default for FeeMix {
    fn default() -> Self {
        Self {
            base_fee_gwei: 20.0,
            max_fee_median_gwei: 40.0,
            max_fee_sigma: 0.6,
            priority_mean_gwei: 2.0,
            backrun_multiplier: 10.0,
            mev_payment_mean_eth: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub start_date: NaiveDate,
    pub days: u32,
    pub blocks_per_day: usize,
    pub min_txs_per_block: usize,
    pub max_txs_per_block: usize,
    pub bucketing: Bucketing,
    pub truth: Truth,
    pub labels: LabelMix,
    pub fees: FeeMix,
    /// Share of ordinary transactions sighted in the mempool.
    pub mempool_coverage: f64,
    /// Mean sandwiches per block (Poisson).
    pub sandwich_rate: f64,
    /// Share of sandwiches placed in the first decile of the block; the
    /// rest land at a uniformly random point.
    pub sandwich_front_share: f64,
    /// Share of blocks built by a tagged builder.
    pub mev_block_share: f64,
    pub price: PriceRow,
    pub first_block: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            start_date: NaiveDate::from_ymd_opt(2024, 10, 1).expect("valid date"),
            days: 1,
            blocks_per_day: 200,
            min_txs_per_block: 100,
            max_txs_per_block: 200,
            bucketing: Bucketing::Quartiles,
            truth: Truth::default(),
            labels: LabelMix::default(),
            fees: FeeMix::default(),
            mempool_coverage: 0.7,
            sandwich_rate: 1.2,
            sandwich_front_share: 0.95,
            mev_block_share: 0.9,
            price: PriceRow {
                avg_gas_price: Gwei(22.45),
                eth_close_usd: 2597.34,
            },
            first_block: 20_870_000,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let l = &self.labels;
        let probs = [
            ("mempool_coverage", self.mempool_coverage),
            ("sandwich_front_share", self.sandwich_front_share),
            ("mev_block_share", self.mev_block_share),
            ("p_to_dex", l.p_to_dex),
            ("p_to_mev", l.p_to_mev),
            ("p_from_dex", l.p_from_dex),
            ("p_from_mev", l.p_from_mev),
            ("p_contract_creation", l.p_contract_creation),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} is not a probability")));
            }
        }
        if l.p_to_dex + l.p_to_mev + l.p_contract_creation > 1.0 {
            return Err(Error::Config("recipient probabilities exceed 1".into()));
        }
        if l.p_from_dex + l.p_from_mev > 1.0 {
            return Err(Error::Config("sender probabilities exceed 1".into()));
        }
        if l.dex_addresses == 0 || l.senders == 0 || l.attackers == 0 {
            return Err(Error::Config("address pools must be non-empty".into()));
        }
        if (l.p_to_mev > 0.0 || l.p_from_mev > 0.0) && l.mev_addresses == 0 {
            return Err(Error::Config("MEV probabilities need MEV addresses".into()));
        }
        if self.mev_block_share > 0.0 && l.builders == 0 {
            return Err(Error::Config("MEV blocks need at least one builder".into()));
        }
        if self.min_txs_per_block == 0 || self.min_txs_per_block > self.max_txs_per_block {
            return Err(Error::Config(format!(
                "transactions per block range {}..={} is empty",
                self.min_txs_per_block, self.max_txs_per_block
            )));
        }
        if !(self.sandwich_rate >= 0.0) || self.sandwich_rate * 3.0 > self.min_txs_per_block as f64 {
            return Err(Error::Config(format!(
                "sandwich rate {} per block cannot fit in {} transactions",
                self.sandwich_rate, self.min_txs_per_block
            )));
        }
        let f = &self.fees;
        for (name, v) in [
            ("base_fee_gwei", f.base_fee_gwei),
            ("max_fee_median_gwei", f.max_fee_median_gwei),
            ("priority_mean_gwei", f.priority_mean_gwei),
            ("backrun_multiplier", f.backrun_multiplier),
            ("mev_payment_mean_eth", f.mev_payment_mean_eth),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(f.max_fee_sigma >= 0.0) {
            return Err(Error::Config("max_fee_sigma must be non-negative".into()));
        }
        if !(self.price.avg_gas_price.0 > 0.0 && self.price.eth_close_usd > 0.0) {
            return Err(Error::Config("prices must be positive".into()));
        }
        self.truth.check(self.bucketing.count())
    }
}

/// SplitMix64 finalizer, used to derive independent stream seeds.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for a given calendar day.
pub fn day_seed(seed: u64, date: NaiveDate) -> u64 {
    splitmix64(seed ^ splitmix64(date.to_epoch_days() as u64))
}

fn draw_bucket(eta: f64, cutpoints: &[f64], rng: &mut ChaCha8Rng) -> u8 {
    let z: f64 = rng.sample(StandardNormal);
    1 + cutpoints.iter().filter(|c| eta + z > **c).count() as u8
}

/// Row-level draws from the placement law: covariates from `mix`, a latent
/// index `x'β + ε`, and the bucket it lands in.
pub fn generate_design_rows(
    truth: &Truth,
    spec: DesignSpec,
    mix: &LabelMix,
    fees: &FeeMix,
    mempool_coverage: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<DesignRow>> {
    let k = spec.bucketing.count();
    truth.check(k)?;
    let beta = truth.beta(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fee = LogNormal::new(fees.max_fee_median_gwei.ln(), fees.max_fee_sigma)
        .map_err(|e| Error::Config(e.to_string()))?;
    let mut x = vec![0.0; spec.width()];
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let mempool_position = rng.random_bool(mempool_coverage).then(|| rng.random::<f64>());
        let u = rng.random::<f64>();
        let to_dex = u < mix.p_to_dex;
        let to_mev = !to_dex && u < mix.p_to_dex + mix.p_to_mev;
        let v = rng.random::<f64>();
        let from_dex = v < mix.p_from_dex;
        let from_mev = !from_dex && v < mix.p_from_dex + mix.p_from_mev;
        let (front_run, back_run) = if spec.extended {
            let s = rng.random::<f64>();
            (s < 0.01, (0.01..0.02).contains(&s))
        } else {
            (false, false)
        };
        let mut row = DesignRow {
            tx_hash: TxHash({
                let mut h = [0u8; 32];
                h[24..].copy_from_slice(&(i as u64).to_be_bytes());
                h
            }),
            block_number: (i / 150) as u64,
            block_bucket: 1,
            mempool_bucket: mempool_position.map(|p| bucket(p, k)),
            max_fee_per_gas: fee.sample(&mut rng),
            to_dex,
            from_dex,
            to_mev,
            from_mev,
            front_run,
            back_run,
            block_position: 0.0,
            mempool_position,
        };
        spec.fill(&row, &mut x);
        let eta: f64 = x.iter().zip(&beta).map(|(a, b)| a * b).sum();
        let j = draw_bucket(eta, &truth.cutpoints, &mut rng);
        row.block_bucket = j;
        row.block_position = (j as f64 - 1.0 + rng.random::<f64>()) / k as f64;
        rows.push(row);
    }
    Ok(rows)
}

/// One generated day in loader-ready form.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthDay {
    pub date: NaiveDate,
    pub txs: Vec<TxRecord>,
    pub blocks: Vec<BlockMeta>,
    pub mempool: Vec<MempoolObs>,
    pub sandwiches: Vec<SandwichRecord>,
    pub price: PriceRow,
}

/// Address pools shared by every day of a configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct AddressBook {
    pub dex: Vec<Address>,
    pub mev: Vec<Address>,
    pub builders: Vec<Address>,
    pub senders: Vec<Address>,
    pub attackers: Vec<Address>,
}

fn random_address(rng: &mut ChaCha8Rng) -> Address {
    let mut a = [0u8; 20];
    rng.fill(&mut a);
    Address(a)
}

impl AddressBook {
    pub fn new(mix: &LabelMix, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0x0add_7e55));
        let mut pool = |n: usize| (0..n).map(|_| random_address(&mut rng)).collect::<Vec<_>>();
        Self {
            dex: pool(mix.dex_addresses),
            mev: pool(mix.mev_addresses),
            builders: pool(mix.builders),
            senders: pool(mix.senders),
            attackers: pool(mix.attackers),
        }
    }

    /// Entries for the label file: `(address, labels, name)`.
    pub fn label_entries(&self) -> Vec<(Address, Vec<Label>, String)> {
        let mut out = Vec::new();
        for (i, a) in self.dex.iter().enumerate() {
            out.push((*a, vec![Label::Dex], format!("dex-{i}")));
        }
        for (i, a) in self.mev.iter().enumerate() {
            out.push((*a, vec![Label::MevBuilder], format!("mev-agent-{i}")));
        }
        for (i, a) in self.builders.iter().enumerate() {
            out.push((*a, vec![Label::MevBuilder], format!("builder-{i}")));
        }
        // Sandwich bots are known MEV senders.
        for (i, a) in self.attackers.iter().enumerate() {
            out.push((*a, vec![Label::MevBuilder], format!("mev-bot-{i}")));
        }
        out
    }
}

struct Pending {
    tx: TxRecord,
    seen: bool,
    /// Mempool dummies and labels known before ordering.
    to_dex: bool,
    to_mev: bool,
    from_dex: bool,
    from_mev: bool,
}

/// Generates day `date` of the configuration.
pub fn generate_synthetic_day(cfg: &SynthConfig, book: &AddressBook, date: NaiveDate) -> Result<SynthDay> {
    cfg.validate()?;
    let day_index = (date - cfg.start_date).num_days();
    if day_index < 0 {
        return Err(Error::Config(format!("{date} is before the start date {}", cfg.start_date)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(day_seed(cfg.seed, date));
    let spec = DesignSpec {
        bucketing: cfg.bucketing,
        extended: false,
    };
    let k = spec.bucketing.count();
    let beta = cfg.truth.beta(spec);
    let f = &cfg.fees;
    let mix = &cfg.labels;
    let max_fee = LogNormal::new(f.max_fee_median_gwei.ln(), f.max_fee_sigma)
        .map_err(|e| Error::Config(e.to_string()))?;
    let tip = Exp::new(1.0 / f.priority_mean_gwei).map_err(|e| Error::Config(e.to_string()))?;
    let mev_pay = Exp::new(1.0 / f.mev_payment_mean_eth).map_err(|e| Error::Config(e.to_string()))?;
    let sandwiches_per_block = (cfg.sandwich_rate > 0.0)
        .then(|| Poisson::new(cfg.sandwich_rate).map_err(|e| Error::Config(e.to_string())))
        .transpose()?;
    let midnight = date.and_time(NaiveTime::MIN).and_utc().timestamp();
    let slot = 86_400 / cfg.blocks_per_day.max(1) as i64;
    let regions = ["us-east", "eu-west", "ap-south"];

    let mut day = SynthDay {
        date,
        txs: Vec::new(),
        blocks: Vec::new(),
        mempool: Vec::new(),
        sandwiches: Vec::new(),
        price: cfg.price,
    };
    let pick = |rng: &mut ChaCha8Rng, pool: &[Address]| pool[rng.random_range(0..pool.len())];
    let fresh_hash = |rng: &mut ChaCha8Rng| {
        let mut h = [0u8; 32];
        rng.fill(&mut h);
        TxHash(h)
    };

    for b in 0..cfg.blocks_per_day {
        let number = cfg.first_block + day_index as u64 * cfg.blocks_per_day as u64 + b as u64;
        let ts = midnight + slot * b as i64 + slot.min(12) - 1;
        let n = rng.random_range(cfg.min_txs_per_block..=cfg.max_txs_per_block);
        let base_fee = f.base_fee_gwei * (0.1 * rng.sample::<f64, _>(StandardNormal)).exp();
        let n_sw = sandwiches_per_block
            .as_ref()
            .map_or(0, |p| p.sample(&mut rng) as usize)
            .min(n / 3);
        let ordinary = n - 3 * n_sw;

        let tx_template = |rng: &mut ChaCha8Rng, from: Address, to: Option<Address>, value: u128, gas_used: u64| {
            let cap = max_fee.sample(rng).max(base_fee + 0.01);
            let prio = tip.sample(rng).min(cap - base_fee);
            TxRecord {
                tx_hash: fresh_hash(rng),
                block_number: number,
                block_index: 0,
                from_addr: from,
                to_addr: to,
                max_fee_per_gas: Gwei(cap),
                max_priority_fee_per_gas: Gwei(prio),
                effective_gas_price: Gwei(base_fee + prio),
                gas_used,
                value: Wei(value),
                block_timestamp: ts,
            }
        };

        let mut pending: Vec<Pending> = Vec::with_capacity(ordinary);
        for _ in 0..ordinary {
            let u = rng.random::<f64>();
            let (to, to_dex, to_mev) = if u < mix.p_to_dex {
                (Some(pick(&mut rng, &book.dex)), true, false)
            } else if u < mix.p_to_dex + mix.p_to_mev {
                (Some(pick(&mut rng, &book.mev)), false, true)
            } else if u < mix.p_to_dex + mix.p_to_mev + mix.p_contract_creation {
                (None, false, false)
            } else {
                (Some(pick(&mut rng, &book.senders)), false, false)
            };
            let v = rng.random::<f64>();
            let (from, from_dex, from_mev) = if v < mix.p_from_dex {
                (pick(&mut rng, &book.dex), true, false)
            } else if v < mix.p_from_dex + mix.p_from_mev {
                (pick(&mut rng, &book.mev), false, true)
            } else {
                (pick(&mut rng, &book.senders), false, false)
            };
            let gas = if to_dex { rng.random_range(100_000..250_000) } else if to.is_none() { rng.random_range(200_000..1_500_000) } else { 21_000 };
            let value = if rng.random_bool(0.5) { rng.random_range(1..5_000_000u128) * 1_000_000_000_000 } else { 0 };
            let tx = tx_template(&mut rng, from, to, value, gas);
            let creation = to.is_none();
            pending.push(Pending {
                tx,
                seen: rng.random_bool(cfg.mempool_coverage),
                to_dex: to_dex && !creation,
                to_mev: to_mev && !creation,
                from_dex: from_dex && !creation,
                from_mev: from_mev && !creation,
            });
        }

        let mut triples: Vec<[TxRecord; 3]> = Vec::with_capacity(n_sw);
        for _ in 0..n_sw {
            let attacker = pick(&mut rng, &book.attackers);
            let dex = pick(&mut rng, &book.dex);
            let victim_from = pick(&mut rng, &book.senders);
            let front_value = rng.random_range(100_000..3_000_000u128) * 1_000_000_000_000;
            let victim_value = rng.random_range(10_000..1_000_000u128) * 1_000_000_000_000;
            let gas: [u64; 3] = std::array::from_fn(|_| rng.random_range(100_000..200_000));
            let front = tx_template(&mut rng, attacker, Some(dex), front_value, gas[0]);
            let victim = tx_template(&mut rng, victim_from, Some(dex), victim_value, gas[1]);
            let mut back = tx_template(&mut rng, attacker, Some(dex), 0, gas[2]);
            let price = back.effective_gas_price.0 * f.backrun_multiplier;
            back.max_priority_fee_per_gas = Gwei(price - base_fee);
            back.effective_gas_price = Gwei(price);
            back.max_fee_per_gas = Gwei(back.max_fee_per_gas.0.max(price));
            triples.push([front, victim, back]);
        }

        // Mempool sightings: a uniform random order over the sighted set.
        let mut seen: Vec<TxHash> = pending.iter().filter(|p| p.seen).map(|p| p.tx.tx_hash).collect();
        for t in &triples {
            seen.extend(t.iter().map(|x| x.tx_hash));
        }
        seen.shuffle(&mut rng);
        let m = seen.len();
        let mut rank_of = std::collections::HashMap::with_capacity(m);
        for (r, h) in seen.iter().enumerate() {
            rank_of.insert(*h, r);
            let first = ts * 1000 - 12_000 + (r as i64 * 11_000) / m.max(1) as i64;
            day.mempool.push(MempoolObs {
                tx_hash: *h,
                first_seen: first,
                region: regions[rng.random_range(0..regions.len())].to_string(),
            });
            if rng.random_bool(0.2) {
                day.mempool.push(MempoolObs {
                    tx_hash: *h,
                    first_seen: first + rng.random_range(50..900),
                    region: regions[rng.random_range(0..regions.len())].to_string(),
                });
            }
        }
        let mem_pos = |h: &TxHash| {
            rank_of
                .get(h)
                .map(|r| if m <= 1 { 0.0 } else { *r as f64 / (m - 1) as f64 })
        };

        // Ordinary transactions: bucket label from the law, then sort.
        let mut x = vec![0.0; spec.width()];
        let mut keyed: Vec<(u8, f64, usize)> = Vec::with_capacity(ordinary);
        for (i, p) in pending.iter().enumerate() {
            let mp = mem_pos(&p.tx.tx_hash);
            let row = DesignRow {
                tx_hash: p.tx.tx_hash,
                block_number: number,
                block_bucket: 1,
                mempool_bucket: mp.map(|v| bucket(v, k)),
                max_fee_per_gas: p.tx.max_fee_per_gas.0,
                to_dex: p.to_dex,
                from_dex: p.from_dex,
                to_mev: p.to_mev,
                from_mev: p.from_mev,
                front_run: false,
                back_run: false,
                block_position: 0.0,
                mempool_position: mp,
            };
            spec.fill(&row, &mut x);
            let eta: f64 = x.iter().zip(&beta).map(|(a, b)| a * b).sum();
            keyed.push((draw_bucket(eta, &cfg.truth.cutpoints, &mut rng), rng.random::<f64>(), i));
        }
        keyed.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));

        // Early sandwiches take three adjacent slots each in the first
        // decile, in random order among the leading ordinary transactions.
        // Late ones are dropped in as a unit anywhere after that.
        let early: Vec<usize> = (0..n_sw).filter(|_| rng.random_bool(cfg.sandwich_front_share)).collect();
        let late: Vec<usize> = (0..n_sw).filter(|s| !early.contains(s)).collect();
        let decile = n.div_ceil(10).max(3 * early.len());
        let fillers = (decile - 3 * early.len()).min(ordinary);
        let mut units: Vec<Option<usize>> = early.iter().map(|s| Some(*s)).chain((0..fillers).map(|_| None)).collect();
        units.shuffle(&mut rng);
        let mut rest = keyed.iter().map(|(_, _, i)| pending[*i].tx.clone());
        let mut tail: Vec<Option<usize>> = Vec::new();
        let mut order: Vec<TxRecord> = Vec::with_capacity(n);
        for u in units {
            match u {
                Some(s) => order.extend(triples[s].iter().cloned()),
                None => order.extend(rest.next()),
            }
        }
        let rest: Vec<TxRecord> = rest.collect();
        tail.extend((0..rest.len()).map(|_| None));
        for s in late {
            let at = rng.random_range(0..=tail.len());
            tail.insert(at, Some(s));
        }
        let mut rest = rest.into_iter();
        for u in tail {
            match u {
                Some(s) => order.extend(triples[s].iter().cloned()),
                None => order.extend(rest.next()),
            }
        }
        for (i, t) in order.iter_mut().enumerate() {
            t.block_index = i as u32;
        }

        let builder = rng.random_bool(cfg.mev_block_share).then(|| pick(&mut rng, &book.builders));
        day.blocks.push(BlockMeta {
            block_number: number,
            timestamp: ts,
            tx_count: n as u32,
            builder_addr: builder,
            base_fee_per_gas: Gwei(base_fee),
            mev_payment: Eth(if builder.is_some() { mev_pay.sample(&mut rng) } else { 0.0 }),
        });
        let eth_usd = cfg.price.eth_close_usd;
        for t in &triples {
            let fees: f64 = t.iter().map(|x| x.gas_fee().0).sum();
            let cost = fees * eth_usd * (1.0 + rng.random::<f64>() * 0.2);
            day.sandwiches.push(SandwichRecord {
                block_number: number,
                front_hash: t[0].tx_hash,
                victim_hash: t[1].tx_hash,
                back_hash: t[2].tx_hash,
                cost_usd: cost,
                profit_usd: rng.sample::<f64, _>(StandardNormal) * 20.0 + 5.0,
            });
        }
        day.txs.extend(order);
    }
    Ok(day)
}

/// Every day of the configuration, generated in parallel and returned in
/// date order.
pub fn generate_days(cfg: &SynthConfig) -> Result<(AddressBook, Vec<SynthDay>)> {
    cfg.validate()?;
    let book = AddressBook::new(&cfg.labels, cfg.seed);
    let dates: Vec<NaiveDate> = (0..cfg.days)
        .map(|d| cfg.start_date + Days::new(d as u64))
        .collect();
    let days: Vec<Result<SynthDay>> =
        crate::reduce::par_map(&dates, |d| generate_synthetic_day(cfg, &book, *d));
    let days = days.into_iter().collect::<Result<Vec<_>>>()?;
    Ok((book, days))
}

/// File locations of a written bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub dir: PathBuf,
    pub ingest: IngestConfig,
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

fn fmt_f(v: f64) -> String {
    format!("{v}")
}

/// Writes every generated file into `dir` in the loader formats and returns
/// a matching ingest configuration.
pub fn write_bundle(cfg: &SynthConfig, dir: &Path) -> Result<Bundle> {
    let (book, days) = generate_days(cfg)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p = |name: &str| dir.join(name);

    let mut w = csv_writer(&p("transactions.csv"))?;
    w.write_record(TX_COLUMNS)?;
    for t in days.iter().flat_map(|d| &d.txs) {
        w.write_record([
            t.tx_hash.to_string(),
            t.block_number.to_string(),
            t.block_index.to_string(),
            t.from_addr.to_string(),
            t.to_addr.map(|a| a.to_string()).unwrap_or_default(),
            fmt_f(t.max_fee_per_gas.0),
            fmt_f(t.max_priority_fee_per_gas.0),
            fmt_f(t.effective_gas_price.0),
            t.gas_used.to_string(),
            t.value.0.to_string(),
            t.block_timestamp.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(p("transactions.csv"), e))?;

    let mut w = csv_writer(&p("blocks.csv"))?;
    w.write_record(BLOCK_COLUMNS)?;
    for b in days.iter().flat_map(|d| &d.blocks) {
        w.write_record([
            b.block_number.to_string(),
            b.timestamp.to_string(),
            b.tx_count.to_string(),
            b.builder_addr.map(|a| a.to_string()).unwrap_or_default(),
            fmt_f(b.base_fee_per_gas.0),
            fmt_f(b.mev_payment.0),
        ])?;
    }
    w.flush().map_err(|e| Error::io(p("blocks.csv"), e))?;

    // Mempool sightings go out as JSON lines so both source formats are exercised.
    let mp = p("mempool.jsonl");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&mp).map_err(|e| Error::io(&mp, e))?);
    for o in days.iter().flat_map(|d| &d.mempool) {
        let line = serde_json::json!({
            MEMPOOL_COLUMNS[0]: o.tx_hash.to_string(),
            MEMPOOL_COLUMNS[1]: o.first_seen,
            MEMPOOL_COLUMNS[2]: o.region,
        });
        writeln!(f, "{line}").map_err(|e| Error::io(&mp, e))?;
    }
    f.flush().map_err(|e| Error::io(&mp, e))?;

    let mut w = csv_writer(&p("sandwiches.csv"))?;
    w.write_record(SANDWICH_COLUMNS)?;
    for s in days.iter().flat_map(|d| &d.sandwiches) {
        w.write_record([
            s.block_number.to_string(),
            s.front_hash.to_string(),
            s.victim_hash.to_string(),
            s.back_hash.to_string(),
            fmt_f(s.cost_usd),
            fmt_f(s.profit_usd),
        ])?;
    }
    w.flush().map_err(|e| Error::io(p("sandwiches.csv"), e))?;

    let mut w = csv_writer(&p("prices.csv"))?;
    w.write_record(PRICE_COLUMNS)?;
    for d in &days {
        w.write_record([
            d.date.format("%Y-%m-%d").to_string(),
            fmt_f(d.price.avg_gas_price.0),
            fmt_f(d.price.eth_close_usd),
        ])?;
    }
    w.flush().map_err(|e| Error::io(p("prices.csv"), e))?;

    let labels: Vec<serde_json::Value> = book
        .label_entries()
        .into_iter()
        .map(|(a, l, name)| serde_json::json!({ "address": a.to_string(), "labels": l, "name": name }))
        .collect();
    let lp = p("labels.json");
    std::fs::write(&lp, serde_json::to_string_pretty(&labels)? + "\n").map_err(|e| Error::io(&lp, e))?;

    let end = cfg.start_date + Days::new(cfg.days.saturating_sub(1) as u64);
    Ok(Bundle {
        dir: dir.to_path_buf(),
        ingest: IngestConfig {
            transactions: SourceSpec::new(p("transactions.csv")),
            blocks: SourceSpec::new(p("blocks.csv")),
            mempool: Some(SourceSpec {
                path: mp,
                format: Some(SourceFormat::JsonLines),
            }),
            labels: Some(lp),
            sandwiches: Some(SourceSpec::new(p("sandwiches.csv"))),
            prices: Some(SourceSpec::new(p("prices.csv"))),
            window: DateWindow::new(cfg.start_date, end)?,
            exclusions: BTreeSet::new(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::load_dataset;
    use crate::position::{build_design_rows, quartile};
    use crate::probit::{fit_ordered_probit, FitOptions, ProbitData};
    use crate::sandwich::{detect_sandwiches_heuristic, join_sandwiches};
    use crate::validate::validate_dataset;

    fn small() -> SynthConfig {
        SynthConfig {
            sandwich_front_share: 1.0,
            blocks_per_day: 40,
            min_txs_per_block: 40,
            max_txs_per_block: 80,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn config_checks() {
        assert!(SynthConfig::default().validate().is_ok());
        let bad = SynthConfig {
            sandwich_rate: 20.0,
            min_txs_per_block: 50,
            ..SynthConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = SynthConfig {
            mempool_coverage: 1.5,
            ..SynthConfig::default()
        };
        assert!(bad.validate().is_err());
        let mut bad = SynthConfig::default();
        bad.truth.cutpoints = vec![0.5, 0.1, 0.8];
        assert!(bad.validate().is_err());
    }

    #[test]
    fn reproducible() {
        let cfg = small();
        let (_, a) = generate_days(&cfg).unwrap();
        let (_, b) = generate_days(&cfg).unwrap();
        assert_eq!(a, b);
        let other = SynthConfig { seed: 2, ..small() };
        assert_ne!(a, generate_days(&other).unwrap().1);
    }

    #[test]
    fn blocks_are_well_formed() {
        let (_, days) = generate_days(&small()).unwrap();
        let d = &days[0];
        let report = validate_dataset(&d.txs, &d.blocks);
        assert!(report.is_clean(), "{report:?}");
        assert!(d.txs.iter().all(|t| t.utc_date() == d.date));
    }

    #[test]
    fn bundle_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig { days: 2, ..small() };
        let bundle = write_bundle(&cfg, dir.path()).unwrap();
        let ds = load_dataset(&bundle.ingest).unwrap();
        for (name, s) in &ds.stats {
            assert_eq!(s.skipped, 0, "{name}");
        }
        let (_, days) = generate_days(&cfg).unwrap();
        let n: usize = days.iter().map(|d| d.txs.len()).sum();
        assert_eq!(ds.txs.len(), n);
        assert_eq!(ds.sandwiches.len(), days.iter().map(|d| d.sandwiches.len()).sum::<usize>());
        let mut want: Vec<TxRecord> = days.iter().flat_map(|d| d.txs.clone()).collect();
        want.sort_by_key(|t| (t.block_number, t.block_index));
        assert_eq!(ds.txs, want);
        assert_eq!(ds.labels.count_with(Label::Dex), cfg.labels.dex_addresses);
    }

    #[test]
    fn planted_sandwiches_recovered() {
        let (_, days) = generate_days(&small()).unwrap();
        let d = &days[0];
        assert!(!d.sandwiches.is_empty());
        let first_seen = crate::dataset::Dataset::mempool_from(&d.mempool);
        let j = join_sandwiches(&d.sandwiches, &d.txs, &d.blocks, &first_seen);
        assert_eq!((j.enriched.len(), j.drops.total()), (d.sandwiches.len(), 0));
        let sizes: std::collections::HashMap<u64, usize> =
            d.blocks.iter().map(|b| (b.block_number, b.tx_count as usize)).collect();
        for e in &j.enriched {
            let n = sizes[&e.record.block_number];
            if 3 * e.block_sandwiches <= n.div_ceil(10) {
                assert!(e.block_positions.iter().all(|p| *p <= 0.1 + 1e-12));
            }
            assert!(e.mempool_positions.iter().all(|p| p.is_some()));
            assert!(e.gas_fees[2].0 > e.gas_fees[0].0);
        }
        let mut found = Vec::new();
        for b in &d.blocks {
            let txs: Vec<TxRecord> = d.txs.iter().filter(|t| t.block_number == b.block_number).cloned().collect();
            found.extend(detect_sandwiches_heuristic(&txs, 2).into_iter().map(|c| c.record));
        }
        let key = |s: &SandwichRecord| (s.front_hash, s.victim_hash, s.back_hash);
        let mut a: Vec<_> = found.iter().map(key).collect();
        let mut b: Vec<_> = d.sandwiches.iter().map(key).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    #[test]
    fn null_truth_independent_positions() {
        let cfg = SynthConfig {
            truth: Truth::null(4),
            sandwich_rate: 0.0,
            blocks_per_day: 300,
            ..small()
        };
        let (book, days) = generate_days(&cfg).unwrap();
        let mut reg = crate::labels::LabelRegistry::new();
        for (a, l, n) in book.label_entries() {
            reg.add(a, l.into_iter().collect(), Some(n));
        }
        let first_seen = crate::dataset::Dataset::mempool_from(&days[0].mempool);
        let day = crate::dataset::DayData {
            date: days[0].date,
            blocks: days[0]
                .blocks
                .iter()
                .map(|b| crate::dataset::BlockTxs {
                    block_number: b.block_number,
                    meta: Some(b.clone()),
                    txs: days[0].txs.iter().filter(|t| t.block_number == b.block_number).cloned().collect(),
                })
                .collect(),
        };
        let rows = build_design_rows(&day, &first_seen, &reg, &[], DesignSpec::default()).rows;
        let mut table = [[0usize; 4]; 4];
        let mut n = 0;
        for r in &rows {
            if let Some(m) = r.mempool_bucket {
                table[m as usize - 1][quartile(r.block_position) as usize - 1] += 1;
                n += 1;
            }
        }
        // Pearson chi-square against independence, 9 degrees of freedom.
        let rs: Vec<f64> = table.iter().map(|r| r.iter().sum::<usize>() as f64).collect();
        let cs: Vec<f64> = (0..4).map(|c| table.iter().map(|r| r[c]).sum::<usize>() as f64).collect();
        let mut chi = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                let e = rs[i] * cs[j] / n as f64;
                chi += (table[i][j] as f64 - e).powi(2) / e;
            }
        }
        assert!(chi < 27.88, "chi-square {chi}");
    }

    #[test]
    fn row_generator_recovers_truth() {
        let spec = DesignSpec::default();
        let truth = Truth::default();
        let rows = generate_design_rows(&truth, spec, &LabelMix::default(), &FeeMix::default(), 0.7, 50_000, 3).unwrap();
        let fit = fit_ordered_probit(&ProbitData::from_design(&rows, spec), &FitOptions::default()).unwrap();
        assert!(fit.converged);
        let se = fit.std_errors();
        for (i, b) in truth.beta(spec).iter().enumerate() {
            assert!((fit.beta[i] - b).abs() < 4.0 * se[i], "{}: {} vs {b}", fit.names[i], fit.beta[i]);
        }
    }
}
