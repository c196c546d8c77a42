use crate::types::{Address, BlockMeta, TxHash, TxRecord};
use crate::units::{Eth, Gwei, Wei};

pub fn hash(n: u64) -> TxHash {
    let mut b = [0u8; 32];
    b[24..].copy_from_slice(&n.to_be_bytes());
    b[0] = 0xab;
    TxHash(b)
}

pub fn addr(n: u8) -> Address {
    Address([n; 20])
}

pub fn tx(id: u64, block: u64, index: u32) -> TxRecord {
    TxRecord {
        tx_hash: hash(id),
        block_number: block,
        block_index: index,
        from_addr: addr(1),
        to_addr: Some(addr(2)),
        max_fee_per_gas: Gwei(30.0),
        max_priority_fee_per_gas: Gwei(1.0),
        effective_gas_price: Gwei(20.0),
        gas_used: 21_000,
        value: Wei(0),
        block_timestamp: 1_727_740_800 + block as i64 * 12,
    }
}

pub fn block(number: u64, tx_count: u32) -> BlockMeta {
    BlockMeta {
        block_number: number,
        timestamp: 1_727_740_800 + number as i64 * 12,
        tx_count,
        builder_addr: None,
        base_fee_per_gas: Gwei(19.0),
        mev_payment: Eth(0.0),
    }
}
