//! Branch predictors: a table of 2-bit saturating counters for conditional
//! branches and a small direct-mapped branch target buffer.

use alloc::vec;
use alloc::vec::Vec;

use crate::trace::{PredTable, PredUpdate};

pub const PHT_ENTRIES: usize = 64;
pub const BTB_ENTRIES: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Predictor {
    pht: Vec<u8>,
    /// `(branch pc, target)`
    btb: Vec<Option<(u64, u64)>>,
}

impl Default for Predictor {
    fn default() -> Self {
        Predictor::new(PHT_ENTRIES, BTB_ENTRIES)
    }
}

impl Predictor {
    /// Counters start weakly not-taken.
    pub fn new(pht_entries: usize, btb_entries: usize) -> Predictor {
        assert!(pht_entries > 0 && btb_entries > 0);
        Predictor { pht: vec![1; pht_entries], btb: vec![None; btb_entries] }
    }

    pub fn pht_index(&self, pc: u64) -> usize {
        ((pc / 4) % self.pht.len() as u64) as usize
    }

    pub fn btb_index(&self, pc: u64) -> usize {
        ((pc / 4) % self.btb.len() as u64) as usize
    }

    pub fn counter(&self, pc: u64) -> u8 {
        self.pht[self.pht_index(pc)]
    }

    pub fn counters(&self) -> &[u8] {
        &self.pht
    }

    pub fn predict_taken(&self, pc: u64) -> bool {
        self.counter(pc) >= 2
    }

    /// Predicted target of an indirect jump at `pc`; `None` means
    /// fall-through.
    pub fn predict_target(&self, pc: u64) -> Option<u64> {
        match self.btb[self.btb_index(pc)] {
            Some((tag, target)) if tag == pc => Some(target),
            _ => None,
        }
    }

    /// Trains the direction predictor. A blinded outcome is replaced by
    /// not-taken so the counters never depend on secret data.
    pub fn update_cond(&mut self, pc: u64, taken: bool, blinded: bool) -> PredUpdate {
        let taken = taken && !blinded;
        let i = self.pht_index(pc);
        let old = self.pht[i];
        let new = if taken { (old + 1).min(3) } else { old.saturating_sub(1) };
        self.pht[i] = new;
        PredUpdate { table: PredTable::Pht, index: i as u16, old: old.into(), new: new.into() }
    }

    /// Trains the target buffer. A blinded target is replaced by "no
    /// target", which clears the entry.
    pub fn update_target(&mut self, pc: u64, target: u64, blinded: bool) -> PredUpdate {
        let i = self.btb_index(pc);
        let old = self.btb[i].map_or(0, |(_, t)| t);
        self.btb[i] = (!blinded).then_some((pc, target));
        let new = if blinded { 0 } else { target };
        PredUpdate { table: PredTable::Btb, index: i as u16, old, new }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_table_predicts_not_taken() {
        let p = Predictor::default();
        assert!(!p.predict_taken(0x1000));
        assert_eq!(p.predict_target(0x1000), None);
    }

    #[test]
    fn counters_saturate() {
        let mut p = Predictor::default();
        p.update_cond(0x1000, true, false);
        assert!(p.predict_taken(0x1000));
        for _ in 0..5 {
            p.update_cond(0x1000, true, false);
        }
        assert_eq!(p.counter(0x1000), 3);
        for _ in 0..5 {
            p.update_cond(0x1000, false, false);
        }
        assert_eq!(p.counter(0x1000), 0);
    }

    #[test]
    fn blinded_outcomes_train_as_not_taken() {
        for start in 0..4u8 {
            let mut a = Predictor::default();
            let mut b = Predictor::default();
            for _ in 0..start {
                a.update_cond(0x40, true, false);
                b.update_cond(0x40, true, false);
            }
            let ua = a.update_cond(0x40, true, true);
            let ub = b.update_cond(0x40, false, false);
            assert_eq!(a, b);
            assert_eq!(ua, ub);
        }
    }

    #[test]
    fn btb_tags_and_clears() {
        let mut p = Predictor::default();
        p.update_target(0x1000, 0x2000, false);
        assert_eq!(p.predict_target(0x1000), Some(0x2000));
        // Same slot, different pc.
        assert_eq!(p.predict_target(0x1000 + 4 * 16), None);
        p.update_target(0x1000, 0x3000, true);
        assert_eq!(p.predict_target(0x1000), None);
    }
}
