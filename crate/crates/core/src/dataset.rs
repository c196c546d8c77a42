//! In-memory bundle of every source, sliced into UTC days for estimation.

use std::collections::{BTreeMap, HashMap};

use chrono::NaiveDate;

use crate::error::Result;
use crate::ingest::{self, IngestConfig, Loaded};
use crate::labels::LabelRegistry;
use crate::types::{BlockMeta, MempoolObs, PriceTable, SandwichRecord, TxHash, TxRecord};

/// Row accounting for one loaded source.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub rows: usize,
    pub emitted: usize,
    pub skipped: usize,
    pub merged: usize,
}

impl<T> From<&Loaded<T>> for LoadStats {
    fn from(l: &Loaded<T>) -> Self {
        LoadStats {
            rows: l.rows,
            emitted: l.emitted(),
            skipped: l.skipped,
            merged: l.merged,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub txs: Vec<TxRecord>,
    pub blocks: Vec<BlockMeta>,
    /// Earliest sighting per hash, in UTC milliseconds.
    pub mempool: HashMap<TxHash, i64>,
    pub labels: LabelRegistry,
    pub sandwiches: Vec<SandwichRecord>,
    pub prices: PriceTable,
    pub stats: BTreeMap<&'static str, LoadStats>,
}

/// One block with its transactions in `block_index` order.
#[derive(Debug, Clone)]
pub struct BlockTxs {
    pub block_number: u64,
    pub meta: Option<BlockMeta>,
    pub txs: Vec<TxRecord>,
}

/// All complete blocks stamped with one UTC date.
#[derive(Debug, Clone)]
pub struct DayData {
    pub date: NaiveDate,
    pub blocks: Vec<BlockTxs>,
}

impl DayData {
    pub fn tx_count(&self) -> usize {
        self.blocks.iter().map(|b| b.txs.len()).sum()
    }

    pub fn txs(&self) -> impl Iterator<Item = &TxRecord> {
        self.blocks.iter().flat_map(|b| b.txs.iter())
    }
}

impl Dataset {
    pub fn mempool_from(obs: &[MempoolObs]) -> HashMap<TxHash, i64> {
        let mut map = HashMap::with_capacity(obs.len());
        for o in obs {
            map.entry(o.tx_hash)
                .and_modify(|t: &mut i64| *t = (*t).min(o.first_seen))
                .or_insert(o.first_seen);
        }
        map
    }

    /// Groups transactions into blocks and blocks into UTC days, restricted
    /// to dates accepted by `include`. Days come back in date order.
    pub fn days(&self, include: impl Fn(NaiveDate) -> bool) -> Vec<DayData> {
        let meta: HashMap<u64, &BlockMeta> =
            self.blocks.iter().map(|b| (b.block_number, b)).collect();
        let mut by_block: BTreeMap<u64, Vec<TxRecord>> = BTreeMap::new();
        for tx in &self.txs {
            by_block.entry(tx.block_number).or_default().push(tx.clone());
        }
        let mut days: BTreeMap<NaiveDate, Vec<BlockTxs>> = BTreeMap::new();
        for (bn, mut txs) in by_block {
            txs.sort_by_key(|t| t.block_index);
            let m = meta.get(&bn).map(|m| (*m).clone());
            let date = m
                .as_ref()
                .map(BlockMeta::utc_date)
                .unwrap_or_else(|| txs[0].utc_date());
            if !include(date) {
                continue;
            }
            days.entry(date).or_default().push(BlockTxs {
                block_number: bn,
                meta: m,
                txs,
            });
        }
        days.into_iter()
            .map(|(date, blocks)| DayData { date, blocks })
            .collect()
    }

    /// Share of transactions with a mempool sighting.
    pub fn mempool_join_rate(&self) -> f64 {
        if self.txs.is_empty() {
            return 0.0;
        }
        let hit = self
            .txs
            .iter()
            .filter(|t| self.mempool.contains_key(&t.tx_hash))
            .count();
        hit as f64 / self.txs.len() as f64
    }
}

fn join<T>(h: std::thread::ScopedJoinHandle<'_, T>) -> T {
    h.join().expect("loader panicked")
}

/// Loads every configured source. Loaders run on separate threads.
pub fn load_dataset(cfg: &IngestConfig) -> Result<Dataset> {
    cfg.check()?;
    std::thread::scope(|s| {
        let txs = s.spawn(|| ingest::load_transactions(&cfg.transactions.path, cfg.transactions.format()));
        let blocks = s.spawn(|| ingest::load_blocks(&cfg.blocks.path, cfg.blocks.format()));
        let mempool = s.spawn(|| {
            cfg.mempool
                .as_ref()
                .map(|m| ingest::load_mempool(&m.path, m.format()))
                .transpose()
        });
        let labels = s.spawn(|| cfg.labels.as_ref().map(|p| ingest::load_labels(p)).transpose());
        let sandwiches = s.spawn(|| {
            cfg.sandwiches
                .as_ref()
                .map(|m| ingest::load_sandwiches(&m.path, m.format()))
                .transpose()
        });
        let prices = s.spawn(|| {
            cfg.prices
                .as_ref()
                .map(|m| ingest::load_prices(&m.path, m.format()))
                .transpose()
        });

        let txs: Loaded<Vec<TxRecord>> = join(txs)?;
        let blocks: Loaded<Vec<BlockMeta>> = join(blocks)?;
        let mempool: Option<Loaded<Vec<MempoolObs>>> = join(mempool)?;
        let labels: Option<Loaded<LabelRegistry>> = join(labels)?;
        let sandwiches: Option<Loaded<Vec<SandwichRecord>>> = join(sandwiches)?;
        let prices: Option<Loaded<PriceTable>> = join(prices)?;

        let mut ds = Dataset::default();
        ds.stats.insert("transactions", (&txs).into());
        ds.stats.insert("blocks", (&blocks).into());
        ds.txs = txs.data;
        ds.blocks = blocks.data;
        if let Some(m) = mempool {
            ds.stats.insert("mempool", (&m).into());
            ds.mempool = Dataset::mempool_from(&m.data);
        }
        if let Some(l) = labels {
            ds.stats.insert("labels", (&l).into());
            ds.labels = l.data;
        }
        if let Some(sw) = sandwiches {
            ds.stats.insert("sandwiches", (&sw).into());
            ds.sandwiches = sw.data;
        }
        if let Some(p) = prices {
            ds.stats.insert("prices", (&p).into());
            ds.prices = p.data;
        }
        Ok(ds)
    })
}
