//! Two-bit-per-slot whitelist with second-chance aging.
//!
//! Each slot is one of three states:
//!
//! | bits | meaning                               |
//! |------|---------------------------------------|
//! | `00` | absent                                |
//! | `11` | fresh: admitted or checked since the last sweep |
//! | `10` | aging: survived one sweep untouched   |
//!
//! A sweep moves `11 -> 10` and `10 -> 00`. A successful check moves the
//! slot back to `11`. An entry idle for more than two sweep periods is
//! therefore gone, and an entry checked at least once per period never is.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::packet::FlowKey;
use crate::siphash::SipKey;

const SLOTS_PER_WORD: u64 = 32;
const LOW_BITS: u64 = 0x5555_5555_5555_5555;
const FRESH: u64 = 0b11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    /// One slot per source address, indexed directly by its low `mask_bits`.
    #[default]
    SourceIp,
    /// One slot per directed 4-tuple, indexed by a keyed hash.
    Flow,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WhitelistError {
    #[error("whitelist mask_bits must be between 1 and 32, got {0}")]
    BadMaskBits(u8),
}

#[derive(Debug, Clone)]
pub struct Whitelist {
    granularity: Granularity,
    mask_bits: u8,
    words: Vec<u64>,
    index_key: SipKey,
    live: usize,
}

impl Whitelist {
    pub fn new(
        granularity: Granularity,
        mask_bits: u8,
        index_key: [u8; 16],
    ) -> Result<Self, WhitelistError> {
        if !(1..=32).contains(&mask_bits) {
            return Err(WhitelistError::BadMaskBits(mask_bits));
        }
        let slots = 1u64 << mask_bits;
        let words = slots.div_ceil(SLOTS_PER_WORD) as usize;
        Ok(Whitelist {
            granularity,
            mask_bits,
            words: vec![0; words],
            index_key: SipKey::from_bytes(&index_key),
            live: 0,
        })
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    pub fn mask_bits(&self) -> u8 {
        self.mask_bits
    }

    pub fn slot_count(&self) -> u64 {
        1u64 << self.mask_bits
    }

    /// Bytes held by the bitmap; fixed at construction.
    pub fn memory_bytes(&self) -> usize {
        self.words.len() * std::mem::size_of::<u64>()
    }

    /// Number of non-empty slots.
    pub fn len(&self) -> usize {
        self.live
    }

    pub fn is_empty(&self) -> bool {
        self.live == 0
    }

    pub fn slot_of(&self, k: &FlowKey) -> u64 {
        let mask = self.slot_count() - 1;
        match self.granularity {
            Granularity::SourceIp => u64::from(u32::from(k.src_ip)) & mask,
            Granularity::Flow => self.index_key.hash(&k.to_bytes()) & mask,
        }
    }

    fn get(&self, slot: u64) -> u64 {
        let word = self.words[(slot / SLOTS_PER_WORD) as usize];
        (word >> (2 * (slot % SLOTS_PER_WORD))) & 0b11
    }

    fn set(&mut self, slot: u64, value: u64) {
        let shift = 2 * (slot % SLOTS_PER_WORD);
        let word = &mut self.words[(slot / SLOTS_PER_WORD) as usize];
        *word = (*word & !(0b11 << shift)) | (value << shift);
    }

    /// Marks the source of `k` as authenticated.
    pub fn admit(&mut self, k: &FlowKey) {
        let slot = self.slot_of(k);
        if self.get(slot) == 0 {
            self.live += 1;
        }
        self.set(slot, FRESH);
    }

    /// Looks up the source of `k`, refreshing it on a hit.
    pub fn check(&mut self, k: &FlowKey) -> bool {
        let slot = self.slot_of(k);
        if self.get(slot) == 0 {
            return false;
        }
        self.set(slot, FRESH);
        true
    }

    /// Lookup without refresh.
    pub fn contains(&self, k: &FlowKey) -> bool {
        self.get(self.slot_of(k)) != 0
    }

    /// Ages every slot by one step; returns how many were evicted.
    pub fn sweep(&mut self) -> u64 {
        let mut evicted = 0u64;
        for w in &mut self.words {
            if *w == 0 {
                continue;
            }
            let hi = (*w >> 1) & LOW_BITS;
            let lo = *w & LOW_BITS;
            evicted += u64::from((hi & !lo).count_ones());
            *w = (hi & lo) << 1;
        }
        self.live -= evicted as usize;
        evicted
    }
}
