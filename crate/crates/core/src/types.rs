//! Records shared by every stage: finalized transactions, block metadata,
//! mempool sightings, labelled sandwiches and daily prices.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::units::{Eth, Gwei, Wei};

fn parse_hex<const N: usize>(s: &str, what: &str) -> Result<[u8; N]> {
    let body = s.trim();
    let body = body
        .strip_prefix("0x")
        .or_else(|| body.strip_prefix("0X"))
        .unwrap_or(body);
    if body.len() != 2 * N {
        return Err(Error::Input(format!(
            "{what} must be {} hex digits, got {:?}",
            2 * N,
            s
        )));
    }
    let mut out = [0u8; N];
    hex::decode_to_slice(body, &mut out)
        .map_err(|e| Error::Input(format!("{what} {s:?}: {e}")))?;
    Ok(out)
}

macro_rules! hex_id {
    ($(#[$m:meta])* $name:ident, $len:expr, $what:literal) => {
        $(#[$m])*
        #[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub [u8; $len]);

        impl FromStr for $name {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                parse_hex::<$len>(s, $what).map($name)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "0x{}", hex::encode(self.0))
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({})", stringify!($name), self)
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

hex_id!(
    /// 32-byte transaction hash.
    TxHash, 32, "transaction hash"
);
hex_id!(
    /// 20-byte account address. Parsing accepts any hex case; display is
    /// always lowercase, which makes it the canonical join key.
    Address, 20, "address"
);

/// One finalized transaction.
#[derive(Debug, Clone, PartialEq)]
pub struct TxRecord {
    pub tx_hash: TxHash,
    pub block_number: u64,
    /// 0-based position inside the block.
    pub block_index: u32,
    pub from_addr: Address,
    /// `None` for contract creation.
    pub to_addr: Option<Address>,
    pub max_fee_per_gas: Gwei,
    pub max_priority_fee_per_gas: Gwei,
    pub effective_gas_price: Gwei,
    pub gas_used: u64,
    pub value: Wei,
    /// UTC seconds.
    pub block_timestamp: i64,
}

impl TxRecord {
    /// Fee actually paid: gas used times effective price.
    pub fn gas_fee(&self) -> Eth {
        self.effective_gas_price.for_gas(self.gas_used)
    }

    pub fn utc_date(&self) -> NaiveDate {
        utc_date(self.block_timestamp)
    }

    pub fn fee_fields_valid(&self) -> bool {
        let fees = [
            self.max_fee_per_gas.0,
            self.max_priority_fee_per_gas.0,
            self.effective_gas_price.0,
        ];
        fees.iter().all(|f| f.is_finite() && *f >= 0.0)
            && self.max_priority_fee_per_gas.0 <= self.max_fee_per_gas.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockMeta {
    pub block_number: u64,
    /// UTC seconds.
    pub timestamp: i64,
    pub tx_count: u32,
    /// Fee recipient when the block came through an MEV builder.
    pub builder_addr: Option<Address>,
    pub base_fee_per_gas: Gwei,
    /// Builder-to-validator payment, zero if none.
    pub mev_payment: Eth,
}

impl BlockMeta {
    pub fn utc_date(&self) -> NaiveDate {
        utc_date(self.timestamp)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MempoolObs {
    pub tx_hash: TxHash,
    /// UTC milliseconds.
    pub first_seen: i64,
    pub region: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SandwichRecord {
    pub block_number: u64,
    pub front_hash: TxHash,
    pub victim_hash: TxHash,
    pub back_hash: TxHash,
    pub cost_usd: f64,
    pub profit_usd: f64,
}

impl SandwichRecord {
    pub fn legs_distinct(&self) -> bool {
        self.front_hash != self.victim_hash
            && self.front_hash != self.back_hash
            && self.victim_hash != self.back_hash
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceRow {
    pub avg_gas_price: Gwei,
    pub eth_close_usd: f64,
}

impl PriceRow {
    /// USD value of one unit of gas at this row's average price.
    pub fn usd_per_gas(&self) -> f64 {
        Gwei(self.avg_gas_price.0).to_eth().to_usd(self.eth_close_usd)
    }
}

/// Daily average gas price and ETH close, keyed by UTC date.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PriceTable {
    rows: BTreeMap<NaiveDate, PriceRow>,
}

impl PriceTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a row, returning the previous one for that date if any.
    pub fn insert(&mut self, date: NaiveDate, row: PriceRow) -> Result<Option<PriceRow>> {
        if !(row.avg_gas_price.0 > 0.0 && row.eth_close_usd > 0.0) {
            return Err(Error::Input(format!(
                "price row for {date} must be strictly positive"
            )));
        }
        Ok(self.rows.insert(date, row))
    }

    pub fn get(&self, date: NaiveDate) -> Result<PriceRow> {
        self.rows.get(&date).copied().ok_or(Error::MissingPrice(date))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&NaiveDate, &PriceRow)> {
        self.rows.iter()
    }

    /// Mean ETH close over the table, used for month-level conversions.
    pub fn mean_eth_close(&self) -> Option<f64> {
        if self.rows.is_empty() {
            return None;
        }
        Some(self.rows.values().map(|r| r.eth_close_usd).sum::<f64>() / self.rows.len() as f64)
    }
}

pub fn utc_date(ts_seconds: i64) -> NaiveDate {
    DateTime::from_timestamp(ts_seconds.div_euclid(86_400) * 86_400, 0)
        .expect("timestamp within chrono range")
        .date_naive()
}

/// Inclusive UTC date window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateWindow {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateWindow {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self> {
        if start > end {
            return Err(Error::Config(format!(
                "window start {start} is after end {end}"
            )));
        }
        Ok(Self { start, end })
    }

    pub fn all() -> Self {
        Self {
            start: NaiveDate::MIN,
            end: NaiveDate::MAX,
        }
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        self.start <= date && date <= self.end
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn address_parsing_is_case_insensitive_and_displays_lowercase() {
        let a: Address = "0x95222290DD7278Aa3Ddd389Cc1E1d165CC4BAfe5".parse().unwrap();
        let b: Address = "95222290dd7278aa3ddd389cc1e1d165cc4bafe5".parse().unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_string(), "0x95222290dd7278aa3ddd389cc1e1d165cc4bafe5");
    }

    #[test]
    fn malformed_ids_are_rejected() {
        assert!("0x1234".parse::<Address>().is_err());
        assert!("0xzz222290dd7278aa3ddd389cc1e1d165cc4bafe5"
            .parse::<Address>()
            .is_err());
        assert!("0x95222290dd7278aa3ddd389cc1e1d165cc4bafe5"
            .parse::<TxHash>()
            .is_err());
    }

    #[test]
    fn utc_date_floors_negative_and_positive() {
        let d = NaiveDate::from_ymd_opt(2024, 10, 1).unwrap();
        let midnight = 1_727_740_800; // 2024-10-01T00:00:00Z
        assert_eq!(utc_date(midnight), d);
        assert_eq!(utc_date(midnight + 86_399), d);
        assert_eq!(utc_date(midnight - 1), d.pred_opt().unwrap());
    }

    #[test]
    fn price_table_missing_date_is_an_error() {
        let mut t = PriceTable::new();
        let d = NaiveDate::from_ymd_opt(2024, 10, 1).unwrap();
        t.insert(
            d,
            PriceRow {
                avg_gas_price: Gwei(22.45),
                eth_close_usd: 2597.34,
            },
        )
        .unwrap();
        assert!(t.get(d).is_ok());
        assert!(matches!(
            t.get(d.succ_opt().unwrap()),
            Err(Error::MissingPrice(_))
        ));
        assert!(t
            .insert(
                d,
                PriceRow {
                    avg_gas_price: Gwei(0.0),
                    eth_close_usd: 1.0
                }
            )
            .is_err());
    }
}
