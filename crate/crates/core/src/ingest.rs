//! Loaders for the offline source files.
//!
//! Every tabular source can be read either as delimiter-separated text with a
//! header row or as line-delimited JSON objects whose keys are the same column
//! names. Rows that fail to parse are counted and skipped; nothing is dropped
//! silently.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{Label, LabelRegistry, LabelSet};
use crate::types::{
    Address, BlockMeta, DateWindow, MempoolObs, PriceRow, PriceTable, SandwichRecord, TxHash,
    TxRecord,
};
use crate::units::{Eth, Gwei, Wei};

pub const TX_COLUMNS: [&str; 11] = [
    "tx_hash",
    "block_number",
    "block_index",
    "from_addr",
    "to_addr",
    "max_fee_per_gas_gwei",
    "max_priority_fee_per_gas_gwei",
    "effective_gas_price_gwei",
    "gas_used",
    "value_wei",
    "block_timestamp",
];
pub const BLOCK_COLUMNS: [&str; 6] = [
    "block_number",
    "timestamp",
    "tx_count",
    "builder_addr",
    "base_fee_per_gas_gwei",
    "mev_payment_eth",
];
pub const MEMPOOL_COLUMNS: [&str; 3] = ["tx_hash", "first_seen_ms", "region"];
pub const SANDWICH_COLUMNS: [&str; 6] = [
    "block_number",
    "front_hash",
    "victim_hash",
    "back_hash",
    "cost_usd",
    "profit_usd",
];
pub const PRICE_COLUMNS: [&str; 3] = ["date", "avg_gas_price_gwei", "eth_close_usd"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceFormat {
    /// Comma-separated with a header row.
    #[default]
    Csv,
    /// One JSON object per line.
    JsonLines,
}

impl SourceFormat {
    /// Guesses from the file extension: `.jsonl`/`.ndjson` are JSON lines,
    /// everything else is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("ndjson") => SourceFormat::JsonLines,
            _ => SourceFormat::Csv,
        }
    }
}

/// Output of a loader together with its row accounting:
/// `rows == emitted + skipped + merged`.
#[derive(Debug, Clone)]
pub struct Loaded<T> {
    pub data: T,
    /// Non-empty input rows.
    pub rows: usize,
    /// Rows rejected by parsing or invariant checks.
    pub skipped: usize,
    /// Rows folded into another record (deduplication, last-wins).
    pub merged: usize,
}

impl<T> Loaded<T> {
    pub fn emitted(&self) -> usize {
        self.rows - self.skipped - self.merged
    }
}

/// Streams rows from a source, handing each to `on_row` with fields aligned
/// to `columns`. Empty cells and absent keys arrive as `None`; an unparseable
/// line arrives as `Err(())`.
fn scan_rows(
    path: &Path,
    format: SourceFormat,
    columns: &[&str],
    required: &[&str],
    mut on_row: impl FnMut(std::result::Result<&[Option<&str>], ()>),
) -> Result<usize> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = 0usize;
    match format {
        SourceFormat::Csv => {
            let mut rdr = csv::ReaderBuilder::new()
                .flexible(true)
                .trim(csv::Trim::All)
                .from_reader(BufReader::new(file));
            let headers = rdr.headers()?.clone();
            if headers.is_empty() {
                return Ok(0);
            }
            let pos: Vec<Option<usize>> = columns
                .iter()
                .map(|c| headers.iter().position(|h| h == *c))
                .collect();
            for (c, p) in columns.iter().zip(&pos) {
                if p.is_none() && required.contains(c) {
                    return Err(Error::Config(format!(
                        "{}: missing required column {c:?}",
                        path.display()
                    )));
                }
            }
            for rec in rdr.records() {
                rows += 1;
                match rec {
                    Ok(rec) => {
                        let fields: Vec<Option<&str>> = pos
                            .iter()
                            .map(|p| p.and_then(|i| rec.get(i)).filter(|s| !s.is_empty()))
                            .collect();
                        on_row(Ok(&fields));
                    }
                    Err(_) => on_row(Err(())),
                }
            }
        }
        SourceFormat::JsonLines => {
            let reader = BufReader::new(file);
            let mut owned: Vec<Option<String>> = Vec::with_capacity(columns.len());
            for line in reader.lines() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                rows += 1;
                let obj: serde_json::Map<String, serde_json::Value> =
                    match serde_json::from_str(&line) {
                        Ok(o) => o,
                        Err(_) => {
                            on_row(Err(()));
                            continue;
                        }
                    };
                owned.clear();
                owned.extend(columns.iter().map(|c| match obj.get(*c) {
                    None | Some(serde_json::Value::Null) => None,
                    Some(serde_json::Value::String(s)) if s.is_empty() => None,
                    Some(serde_json::Value::String(s)) => Some(s.clone()),
                    Some(v) => Some(v.to_string()),
                }));
                let fields: Vec<Option<&str>> = owned.iter().map(|o| o.as_deref()).collect();
                on_row(Ok(&fields));
            }
        }
    }
    Ok(rows)
}

fn get<T: std::str::FromStr>(fields: &[Option<&str>], i: usize) -> Option<T> {
    fields[i]?.parse().ok()
}

fn nonneg(fields: &[Option<&str>], i: usize) -> Option<f64> {
    get::<f64>(fields, i).filter(|v| v.is_finite() && *v >= 0.0)
}

fn parse_tx(f: &[Option<&str>]) -> Option<TxRecord> {
    let to_addr = match f[4] {
        None => None,
        Some(s) => Some(s.parse::<Address>().ok()?),
    };
    Some(TxRecord {
        tx_hash: get(f, 0)?,
        block_number: get(f, 1)?,
        block_index: get(f, 2)?,
        from_addr: get(f, 3)?,
        to_addr,
        max_fee_per_gas: Gwei(nonneg(f, 5)?),
        max_priority_fee_per_gas: Gwei(nonneg(f, 6)?),
        effective_gas_price: Gwei(nonneg(f, 7)?),
        gas_used: get(f, 8)?,
        value: Wei(get(f, 9)?),
        block_timestamp: get(f, 10)?,
    })
}

/// Loads finalized transactions, sorted by `(block_number, block_index)`.
pub fn load_transactions(path: &Path, format: SourceFormat) -> Result<Loaded<Vec<TxRecord>>> {
    let required: Vec<&str> = TX_COLUMNS.iter().copied().filter(|c| *c != "to_addr").collect();
    let mut out = Vec::new();
    let mut skipped = 0;
    let rows = scan_rows(path, format, &TX_COLUMNS, &required, |row| {
        match row.ok().and_then(parse_tx) {
            Some(t) => out.push(t),
            None => skipped += 1,
        }
    })?;
    out.sort_by_key(|t| (t.block_number, t.block_index));
    Ok(Loaded {
        data: out,
        rows,
        skipped,
        merged: 0,
    })
}

fn parse_block(f: &[Option<&str>]) -> Option<BlockMeta> {
    let builder_addr = match f[3] {
        None => None,
        Some(s) => Some(s.parse::<Address>().ok()?),
    };
    Some(BlockMeta {
        block_number: get(f, 0)?,
        timestamp: get(f, 1)?,
        tx_count: get(f, 2)?,
        builder_addr,
        base_fee_per_gas: Gwei(nonneg(f, 4)?),
        mev_payment: Eth(match f[5] {
            None => 0.0,
            Some(_) => nonneg(f, 5)?,
        }),
    })
}

/// Loads block metadata, sorted by block number.
pub fn load_blocks(path: &Path, format: SourceFormat) -> Result<Loaded<Vec<BlockMeta>>> {
    let required = ["block_number", "timestamp", "tx_count", "base_fee_per_gas_gwei"];
    let mut out = Vec::new();
    let mut skipped = 0;
    let rows = scan_rows(path, format, &BLOCK_COLUMNS, &required, |row| {
        match row.ok().and_then(parse_block) {
            Some(b) => out.push(b),
            None => skipped += 1,
        }
    })?;
    out.sort_by_key(|b| b.block_number);
    Ok(Loaded {
        data: out,
        rows,
        skipped,
        merged: 0,
    })
}

/// Loads mempool sightings, keeping the earliest `first_seen` per hash across
/// all regions. Output is sorted by hash.
pub fn load_mempool(path: &Path, format: SourceFormat) -> Result<Loaded<Vec<MempoolObs>>> {
    let required = ["tx_hash", "first_seen_ms"];
    let mut best: HashMap<TxHash, MempoolObs> = HashMap::new();
    let mut skipped = 0;
    let mut merged = 0;
    let rows = scan_rows(path, format, &MEMPOOL_COLUMNS, &required, |row| {
        let parsed = row.ok().and_then(|f| {
            let first_seen: i64 = get(f, 1)?;
            (first_seen > 0).then_some(())?;
            Some(MempoolObs {
                tx_hash: get(f, 0)?,
                first_seen,
                region: f[2].unwrap_or("").to_string(),
            })
        });
        let Some(obs) = parsed else {
            skipped += 1;
            return;
        };
        match best.get_mut(&obs.tx_hash) {
            Some(cur) => {
                merged += 1;
                // Ties keep the lexically smaller region so the result does not
                // depend on row order.
                if (obs.first_seen, &obs.region) < (cur.first_seen, &cur.region) {
                    *cur = obs;
                }
            }
            None => {
                best.insert(obs.tx_hash, obs);
            }
        }
    })?;
    let mut out: Vec<MempoolObs> = best.into_values().collect();
    out.sort_by_key(|o| o.tx_hash);
    Ok(Loaded {
        data: out,
        rows,
        skipped,
        merged,
    })
}

#[derive(Debug, Deserialize)]
struct LabelEntry {
    address: String,
    labels: Vec<Label>,
    #[serde(default)]
    name: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum LabelFile {
    List(Vec<LabelEntry>),
    Map(BTreeMap<String, Vec<Label>>),
}

/// Loads an address label file.
///
/// Two JSON layouts are accepted: a list of
/// `{"address": "0x..", "labels": ["DEX"], "name": "optional"}` entries, or an
/// object mapping address to label list. Repeated addresses merge their
/// label sets.
pub fn load_labels(path: &Path) -> Result<Loaded<LabelRegistry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: LabelFile = serde_json::from_str(&text)?;
    let entries: Vec<LabelEntry> = match file {
        LabelFile::List(v) => v,
        LabelFile::Map(m) => m
            .into_iter()
            .map(|(address, labels)| LabelEntry {
                address,
                labels,
                name: None,
            })
            .collect(),
    };
    let mut reg = LabelRegistry::new();
    let rows = entries.len();
    let mut skipped = 0;
    let mut merged = 0;
    for e in entries {
        let Ok(addr) = e.address.parse::<Address>() else {
            skipped += 1;
            continue;
        };
        if !reg.labels(&addr).is_empty() || reg.name(&addr).is_some() {
            merged += 1;
        }
        let set: LabelSet = e.labels.into_iter().collect();
        reg.add(addr, set, e.name);
    }
    Ok(Loaded {
        data: reg,
        rows,
        skipped,
        merged,
    })
}

/// Loads labelled sandwich triples. Rows whose three legs are not distinct
/// are rejected.
pub fn load_sandwiches(path: &Path, format: SourceFormat) -> Result<Loaded<Vec<SandwichRecord>>> {
    let mut out = Vec::new();
    let mut skipped = 0;
    let rows = scan_rows(path, format, &SANDWICH_COLUMNS, &SANDWICH_COLUMNS, |row| {
        let parsed = row.ok().and_then(|f| {
            let rec = SandwichRecord {
                block_number: get(f, 0)?,
                front_hash: get(f, 1)?,
                victim_hash: get(f, 2)?,
                back_hash: get(f, 3)?,
                cost_usd: get::<f64>(f, 4).filter(|v| v.is_finite())?,
                profit_usd: get::<f64>(f, 5).filter(|v| v.is_finite())?,
            };
            rec.legs_distinct().then_some(rec)
        });
        match parsed {
            Some(r) => out.push(r),
            None => skipped += 1,
        }
    })?;
    out.sort_by_key(|s| (s.block_number, s.front_hash));
    Ok(Loaded {
        data: out,
        rows,
        skipped,
        merged: 0,
    })
}

/// Loads the daily price table. A repeated date replaces the earlier row and
/// logs a warning.
pub fn load_prices(path: &Path, format: SourceFormat) -> Result<Loaded<PriceTable>> {
    let mut table = PriceTable::new();
    let mut skipped = 0;
    let mut merged = 0;
    let rows = scan_rows(path, format, &PRICE_COLUMNS, &PRICE_COLUMNS, |row| {
        let parsed = row.ok().and_then(|f| {
            let date = NaiveDate::parse_from_str(f[0]?, "%Y-%m-%d").ok()?;
            let r = PriceRow {
                avg_gas_price: Gwei(get(f, 1)?),
                eth_close_usd: get(f, 2)?,
            };
            Some((date, r))
        });
        let Some((date, r)) = parsed else {
            skipped += 1;
            return;
        };
        match table.insert(date, r) {
            Ok(Some(_)) => {
                log::warn!("{}: duplicate price row for {date}; keeping the last", path.display());
                merged += 1;
            }
            Ok(None) => {}
            Err(_) => skipped += 1,
        }
    })?;
    Ok(Loaded {
        data: table,
        rows,
        skipped,
        merged,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub path: PathBuf,
    #[serde(default)]
    pub format: Option<SourceFormat>,
}

impl SourceSpec {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self {
            path: path.into(),
            format: None,
        }
    }

    pub fn format(&self) -> SourceFormat {
        self.format
            .unwrap_or_else(|| SourceFormat::from_path(&self.path))
    }
}

/// Locations of every source plus the analysis window.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestConfig {
    pub transactions: SourceSpec,
    pub blocks: SourceSpec,
    pub mempool: Option<SourceSpec>,
    pub labels: Option<PathBuf>,
    pub sandwiches: Option<SourceSpec>,
    pub prices: Option<SourceSpec>,
    pub window: DateWindow,
    pub exclusions: BTreeSet<NaiveDate>,
}

impl IngestConfig {
    pub fn check(&self) -> Result<()> {
        if self.window.start > self.window.end {
            return Err(Error::Config(format!(
                "window start {} is after end {}",
                self.window.start, self.window.end
            )));
        }
        let mut paths: Vec<(&str, &Path)> = vec![
            ("transactions", &self.transactions.path),
            ("blocks", &self.blocks.path),
        ];
        if let Some(s) = &self.mempool {
            paths.push(("mempool", &s.path));
        }
        if let Some(p) = &self.labels {
            paths.push(("labels", p));
        }
        if let Some(s) = &self.sandwiches {
            paths.push(("sandwiches", &s.path));
        }
        if let Some(s) = &self.prices {
            paths.push(("prices", &s.path));
        }
        for (what, p) in paths {
            if !p.exists() {
                return Err(Error::Config(format!(
                    "{what} input {} does not exist",
                    p.display()
                )));
            }
        }
        Ok(())
    }

    pub fn includes(&self, date: NaiveDate) -> bool {
        self.window.contains(date) && !self.exclusions.contains(&date)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> PathBuf {
        let p = dir.path().join(name);
        std::fs::File::create(&p)
            .unwrap()
            .write_all(body.as_bytes())
            .unwrap();
        p
    }

    fn h(n: u8) -> String {
        format!("0x{}", hex::encode([n; 32]))
    }

    fn a(n: u8) -> String {
        format!("0x{}", hex::encode([n; 20]))
    }

    fn tx_line(hash: u8, block: u64, idx: i64, gas_used: i64) -> String {
        format!(
            "{},{block},{idx},{},{},30.5,1.5,20.0,{gas_used},0,1727740800\n",
            h(hash),
            a(1),
            a(2)
        )
    }

    #[test]
    fn transactions_are_sorted_and_bad_rows_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = TX_COLUMNS.join(",") + "\n";
        body += &tx_line(1, 5, 2, 21000);
        body += &tx_line(2, 5, 0, 21000);
        body += &tx_line(3, 5, 1, 21000);
        body += &tx_line(4, 5, 3, -5);
        let p = write(&dir, "txs.csv", &body);
        let l = load_transactions(&p, SourceFormat::Csv).unwrap();
        let idx: Vec<u32> = l.data.iter().map(|t| t.block_index).collect();
        assert_eq!(idx, vec![0, 1, 2]);
        assert_eq!(l.skipped, 1);
        assert_eq!(l.rows, l.emitted() + l.skipped);
    }

    #[test]
    fn contract_creation_has_no_recipient() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!(
            "{}\n{},1,0,{},,30,1,20,53000,0,1727740800\n",
            TX_COLUMNS.join(","),
            h(9),
            a(1)
        );
        let p = write(&dir, "txs.csv", &body);
        let l = load_transactions(&p, SourceFormat::Csv).unwrap();
        assert_eq!(l.data[0].to_addr, None);
    }

    #[test]
    fn missing_column_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "txs.csv", "tx_hash,block_number\n");
        assert!(matches!(
            load_transactions(&p, SourceFormat::Csv),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn unreadable_file_is_io_error() {
        let p = Path::new("/definitely/not/here.csv");
        assert!(matches!(
            load_transactions(p, SourceFormat::Csv),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn mempool_keeps_earliest() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!(
            "{{\"tx_hash\":\"{0}\",\"first_seen_ms\":100,\"region\":\"us-east\"}}\n\
             {{\"tx_hash\":\"{0}\",\"first_seen_ms\":90,\"region\":\"eu\"}}\n",
            h(1)
        );
        let p = write(&dir, "m.jsonl", &body);
        let l = load_mempool(&p, SourceFormat::JsonLines).unwrap();
        assert_eq!(l.data.len(), 1);
        assert_eq!(l.data[0].first_seen, 90);
        assert_eq!(l.data[0].region, "eu");
        assert_eq!(l.merged, 1);
    }

    #[test]
    fn mempool_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "m.jsonl", "");
        let l = load_mempool(&p, SourceFormat::JsonLines).unwrap();
        assert!(l.data.is_empty());
        assert_eq!(l.rows, 0);
    }

    #[test]
    fn mempool_five_hashes_three_regions() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::new();
        for n in 1..=5u8 {
            for (k, region) in ["us-east", "eu", "asia"].iter().enumerate() {
                body += &format!(
                    "{{\"tx_hash\":\"{}\",\"first_seen_ms\":{},\"region\":\"{region}\"}}\n",
                    h(n),
                    1000 + 10 * n as i64 + k as i64
                );
            }
        }
        let p = write(&dir, "m.jsonl", &body);
        let l = load_mempool(&p, SourceFormat::JsonLines).unwrap();
        assert_eq!(l.data.len(), 5);
        assert_eq!(l.rows, 15);
        assert_eq!(l.merged, 10);
        assert!(l.data.iter().all(|o| o.region == "us-east"));
    }

    #[test]
    fn labels_merge() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!(
            r#"[{{"address":"{0}","labels":["DEX"]}},{{"address":"{0}","labels":["CEX"]}}]"#,
            a(3)
        );
        let p = write(&dir, "labels.json", &body);
        let l = load_labels(&p).unwrap();
        assert_eq!(l.data.len(), 1);
        let set = l.data.labels(&a(3).parse().unwrap());
        assert!(set.contains(Label::Dex) && set.contains(Label::Cex));
    }

    #[test]
    fn labels_map_layout() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!(r#"{{"{}": ["DEX"]}}"#, a(3).to_uppercase().replace("0X", "0x"));
        let p = write(&dir, "labels.json", &body);
        let l = load_labels(&p).unwrap();
        assert_eq!(l.data.count_with(Label::Dex), 1);
    }

    #[test]
    fn sandwich_rows() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!(
            "{}\n7,{},{},{},100.5,4.2\n7,{},{},{},1,1\n",
            SANDWICH_COLUMNS.join(","),
            h(1),
            h(2),
            h(3),
            h(4),
            h(5),
            h(4)
        );
        let p = write(&dir, "s.csv", &body);
        let l = load_sandwiches(&p, SourceFormat::Csv).unwrap();
        assert_eq!(l.data.len(), 1);
        assert_eq!(l.skipped, 1);
    }

    #[test]
    fn prices_last_wins() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "p.csv",
            "date,avg_gas_price_gwei,eth_close_usd\n2024-10-01,10,1000\n2024-10-01,22.45,2597.34\n",
        );
        let l = load_prices(&p, SourceFormat::Csv).unwrap();
        let d = NaiveDate::from_ymd_opt(2024, 10, 1).unwrap();
        let row = l.data.get(d).unwrap();
        assert_eq!(row.avg_gas_price, Gwei(22.45));
        assert_eq!(row.eth_close_usd, 2597.34);
        assert_eq!(l.merged, 1);
        assert!(l.data.get(d.succ_opt().unwrap()).is_err());
    }

    #[test]
    fn jsonl_transactions() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!(
            "{{\"tx_hash\":\"{}\",\"block_number\":3,\"block_index\":0,\"from_addr\":\"{}\",\"to_addr\":null,\
             \"max_fee_per_gas_gwei\":1.5,\"max_priority_fee_per_gas_gwei\":0.5,\"effective_gas_price_gwei\":1.2,\
             \"gas_used\":21000,\"value_wei\":\"1000000000000000000000\",\"block_timestamp\":1727740800}}\nnot json\n",
            h(1),
            a(1)
        );
        let p = write(&dir, "t.jsonl", &body);
        let l = load_transactions(&p, SourceFormat::JsonLines).unwrap();
        assert_eq!(l.data.len(), 1);
        assert_eq!(l.skipped, 1);
        assert_eq!(l.data[0].value, Wei(1_000_000_000_000_000_000_000));
    }

    #[test]
    fn config_check() {
        let d = NaiveDate::from_ymd_opt(2024, 10, 1).unwrap();
        let cfg = IngestConfig {
            transactions: SourceSpec::new("/nope/t.csv"),
            blocks: SourceSpec::new("/nope/b.csv"),
            mempool: None,
            labels: None,
            sandwiches: None,
            prices: None,
            window: DateWindow { start: d, end: d },
            exclusions: BTreeSet::new(),
        };
        assert!(matches!(cfg.check(), Err(Error::Config(_))));
        let bad = IngestConfig {
            window: DateWindow {
                start: d.succ_opt().unwrap(),
                end: d,
            },
            ..cfg
        };
        assert!(matches!(bad.check(), Err(Error::Config(_))));
    }
}
