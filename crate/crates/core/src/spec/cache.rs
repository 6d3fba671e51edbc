//! Direct-mapped data cache observer.

use alloc::vec::Vec;

use crate::trace::{line_of, CACHE_LINES};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cache {
    valid: Vec<bool>,
    /// `(line, hit)` for every access in order.
    log: Vec<(u16, bool)>,
}

impl Default for Cache {
    fn default() -> Self {
        Cache { valid: alloc::vec![false; CACHE_LINES as usize], log: Vec::new() }
    }
}

impl Cache {
    /// Touches the line holding `addr`; returns whether it was already
    /// present.
    pub fn access(&mut self, addr: u64) -> bool {
        let line = line_of(addr);
        let hit = self.valid[line as usize];
        self.valid[line as usize] = true;
        self.log.push((line, hit));
        hit
    }

    pub fn is_cached(&self, addr: u64) -> bool {
        self.valid[line_of(addr) as usize]
    }

    pub fn log(&self) -> &[(u16, bool)] {
        &self.log
    }

    /// Lines currently valid.
    pub fn lines(&self) -> impl Iterator<Item = u16> + '_ {
        self.valid.iter().enumerate().filter(|(_, v)| **v).map(|(i, _)| i as u16)
    }

    pub fn flush(&mut self) {
        self.valid.fill(false);
    }
}
