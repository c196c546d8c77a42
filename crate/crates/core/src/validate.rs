use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::types::{BlockMeta, TxHash, TxRecord};

/// A block whose transaction indices are not exactly `0..tx_count`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexGap {
    pub block_number: u64,
    /// `tx_count` from block metadata, or the observed maximum index + 1 when
    /// the block has no metadata row.
    pub expected: u32,
    pub present: u32,
    pub missing: Vec<u32>,
    pub duplicated: Vec<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub n_txs: usize,
    pub n_blocks: usize,
    pub index_gaps: Vec<IndexGap>,
    pub duplicate_hashes: Vec<TxHash>,
    pub fee_violations: Vec<TxHash>,
    /// Transactions pointing at a block with no metadata row.
    pub orphan_txs: usize,
    pub clean_txs: usize,
    pub clean_blocks: usize,
}

impl ValidationReport {
    pub fn violation_count(&self) -> usize {
        self.index_gaps.len() + self.duplicate_hashes.len() + self.fee_violations.len()
    }

    pub fn is_clean(&self) -> bool {
        self.violation_count() == 0 && self.orphan_txs == 0
    }
}

/// Checks structural invariants of a transaction/block pair. Problems are
/// reported, never raised.
pub fn validate_dataset(txs: &[TxRecord], blocks: &[BlockMeta]) -> ValidationReport {
    let mut report = ValidationReport {
        n_txs: txs.len(),
        n_blocks: blocks.len(),
        ..Default::default()
    };

    let mut seen: HashMap<TxHash, usize> = HashMap::with_capacity(txs.len());
    for tx in txs {
        *seen.entry(tx.tx_hash).or_default() += 1;
    }
    let mut dups: Vec<TxHash> = seen
        .iter()
        .filter(|(_, n)| **n > 1)
        .map(|(h, _)| *h)
        .collect();
    dups.sort();
    let dup_set: BTreeSet<TxHash> = dups.iter().copied().collect();
    report.duplicate_hashes = dups;

    let meta: HashMap<u64, &BlockMeta> = blocks.iter().map(|b| (b.block_number, b)).collect();
    let mut by_block: BTreeMap<u64, Vec<&TxRecord>> = BTreeMap::new();
    for tx in txs {
        by_block.entry(tx.block_number).or_default().push(tx);
        if !tx.fee_fields_valid() {
            report.fee_violations.push(tx.tx_hash);
        }
        if !meta.contains_key(&tx.block_number) {
            report.orphan_txs += 1;
        }
    }

    let mut bad_blocks = BTreeSet::new();
    let block_numbers: BTreeSet<u64> = by_block
        .keys()
        .copied()
        .chain(blocks.iter().map(|b| b.block_number))
        .collect();
    for bn in block_numbers {
        let members = by_block.get(&bn).map(Vec::as_slice).unwrap_or(&[]);
        let expected = match meta.get(&bn) {
            Some(m) => m.tx_count,
            None => members.iter().map(|t| t.block_index + 1).max().unwrap_or(0),
        };
        let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
        for t in members {
            *counts.entry(t.block_index).or_default() += 1;
        }
        let missing: Vec<u32> = (0..expected).filter(|i| !counts.contains_key(i)).collect();
        let duplicated: Vec<u32> = counts
            .iter()
            .filter(|(i, n)| **n > 1 || **i >= expected)
            .map(|(i, _)| *i)
            .collect();
        if !missing.is_empty() || !duplicated.is_empty() {
            bad_blocks.insert(bn);
            report.index_gaps.push(IndexGap {
                block_number: bn,
                expected,
                present: members.len() as u32,
                missing,
                duplicated,
            });
        }
    }

    report.clean_txs = txs
        .iter()
        .filter(|t| {
            t.fee_fields_valid()
                && !dup_set.contains(&t.tx_hash)
                && !bad_blocks.contains(&t.block_number)
                && meta.contains_key(&t.block_number)
        })
        .count();
    report.clean_blocks = blocks
        .iter()
        .filter(|b| !bad_blocks.contains(&b.block_number))
        .count();
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{block, tx};

    #[test]
    fn empty_input() {
        let r = validate_dataset(&[], &[]);
        assert_eq!(r.n_txs, 0);
        assert_eq!(r.violation_count(), 0);
        assert!(r.is_clean());
    }

    #[test]
    fn duplicate_hash_flagged_once() {
        let a = tx(1, 100, 0);
        let mut b = tx(1, 100, 1);
        b.tx_hash = a.tx_hash;
        let r = validate_dataset(&[a, b], &[block(100, 2)]);
        assert_eq!(r.duplicate_hashes.len(), 1);
        assert!(r.index_gaps.is_empty());
    }

    #[test]
    fn short_block_flags_one_gap() {
        let txs = [tx(1, 7, 0), tx(2, 7, 1)];
        let r = validate_dataset(&txs, &[block(7, 3)]);
        assert_eq!(r.index_gaps.len(), 1);
        let gap = &r.index_gaps[0];
        assert_eq!((gap.expected, gap.present), (3, 2));
        assert_eq!(gap.missing, vec![2]);
        assert_eq!(r.clean_txs, 0);
    }

    #[test]
    fn fee_invariant_violations() {
        let mut t = tx(1, 7, 0);
        t.max_priority_fee_per_gas = crate::units::Gwei(t.max_fee_per_gas.0 + 1.0);
        let mut u = tx(2, 7, 1);
        u.effective_gas_price = crate::units::Gwei(-1.0);
        let r = validate_dataset(&[t, u], &[block(7, 2)]);
        assert_eq!(r.fee_violations.len(), 2);
        assert_eq!(r.clean_txs, 0);
    }

    #[test]
    fn orphans_counted() {
        let r = validate_dataset(&[tx(1, 9, 0)], &[]);
        assert_eq!(r.orphan_txs, 1);
        assert!(!r.is_clean());
    }
}
