//! Address labels: which accounts are DEX contracts, centralized exchange
//! wallets or MEV builders.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::types::Address;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Label {
    Dex,
    Cex,
    MevBuilder,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Dex, Label::Cex, Label::MevBuilder];

    fn bit(self) -> u8 {
        match self {
            Label::Dex => 1,
            Label::Cex => 2,
            Label::MevBuilder => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Dex => "DEX",
            Label::Cex => "CEX",
            Label::MevBuilder => "MEV_BUILDER",
        }
    }
}

/// Small set of [`Label`]s.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct LabelSet(u8);

impl LabelSet {
    pub const EMPTY: LabelSet = LabelSet(0);

    pub fn contains(self, label: Label) -> bool {
        self.0 & label.bit() != 0
    }

    pub fn insert(&mut self, label: Label) {
        self.0 |= label.bit();
    }

    pub fn union(self, other: LabelSet) -> LabelSet {
        LabelSet(self.0 | other.0)
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Label> {
        Label::ALL.into_iter().filter(move |l| self.contains(*l))
    }
}

impl FromIterator<Label> for LabelSet {
    fn from_iter<I: IntoIterator<Item = Label>>(iter: I) -> Self {
        let mut set = LabelSet::EMPTY;
        for l in iter {
            set.insert(l);
        }
        set
    }
}

impl fmt::Debug for LabelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter().map(Label::as_str)).finish()
    }
}

#[derive(Debug, Clone, Default)]
struct Entry {
    labels: LabelSet,
    name: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct LabelRegistry {
    entries: HashMap<Address, Entry>,
}

impl LabelRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds labels for an address, merging with anything already present.
    /// A later non-empty name replaces an earlier one.
    pub fn add(&mut self, addr: Address, labels: LabelSet, name: Option<String>) {
        let entry = self.entries.entry(addr).or_default();
        entry.labels = entry.labels.union(labels);
        if name.is_some() {
            entry.name = name;
        }
    }

    pub fn labels(&self, addr: &Address) -> LabelSet {
        self.entries
            .get(addr)
            .map(|e| e.labels)
            .unwrap_or(LabelSet::EMPTY)
    }

    pub fn has(&self, addr: &Address, label: Label) -> bool {
        self.labels(addr).contains(label)
    }

    pub fn name(&self, addr: &Address) -> Option<&str> {
        self.entries.get(addr).and_then(|e| e.name.as_deref())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count_with(&self, label: Label) -> usize {
        self.entries
            .values()
            .filter(|e| e.labels.contains(label))
            .count()
    }

    /// Addresses carrying `label`, sorted.
    pub fn addresses_with(&self, label: Label) -> Vec<Address> {
        let mut out: Vec<Address> = self
            .entries
            .iter()
            .filter(|(_, e)| e.labels.contains(label))
            .map(|(a, _)| *a)
            .collect();
        out.sort();
        out
    }
}

/// Looks up the labels of a hex address string.
pub fn classify_address(registry: &LabelRegistry, addr: &str) -> Result<LabelSet> {
    let addr: Address = addr.parse()?;
    Ok(registry.labels(&addr))
}
