//! Heap allocator with blinded allocations, erase-on-free and revocation.
//!
//! Live regions never overlap. Blinded allocations hand out capabilities
//! without `NON_OBLIVIOUS`; result allocations hand out a blinded write-only
//! capability plus a non-blinded read-only one over the same bytes, which is
//! the only sanctioned way to move data out of blinded memory. Freeing a
//! blinded or result region zeroes it, and every free runs a stop-the-world
//! sweep that clears the tag of each capability still pointing into the
//! region.

use alloc::vec::Vec;

use thiserror::Error;

use crate::cap::{Capability, Perms};
use crate::machine::{Cell, Value};
use crate::memory::{Granule, Memory, GRANULE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum HeapError {
    #[error("heap exhausted")]
    OutOfHeap,
    #[error("zero-sized allocation")]
    ZeroSize,
    #[error("capability does not match a live allocation")]
    UnknownRegion,
    #[error("region already freed")]
    DoubleFree,
    #[error("static region cannot be freed")]
    StaticRegion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegionKind {
    Normal,
    Blinded,
    Result,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegionState {
    Live,
    Quarantined,
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub id: u64,
    pub base: u64,
    /// Requested size; capability bounds use this.
    pub length: u64,
    /// Reserved size, rounded up to a granule.
    pub reserved: u64,
    pub kind: RegionKind,
    pub state: RegionState,
    /// Loader-created region (blinded data section); never freed.
    pub is_static: bool,
}

impl Region {
    pub fn end(&self) -> u64 {
        self.base + self.reserved
    }
}

/// Capabilities returned by [`Heap::result_alloc`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResultPair {
    pub write: Capability,
    pub read: Capability,
}

#[derive(Debug, Clone)]
pub struct Heap {
    root: Capability,
    /// Live and quarantined regions sorted by base, plus static regions.
    regions: Vec<Region>,
    /// Freed regions kept for double-free detection until reused.
    freed: Vec<Region>,
    next_id: u64,
}

impl Heap {
    /// A heap over `[base, base+size)`.
    pub fn new(base: u64, size: u64) -> Heap {
        let root = Capability::root(base, size, Perms::LOAD | Perms::STORE | Perms::LOAD_CAP | Perms::STORE_CAP)
            .expect("heap range fits the address space");
        Heap { root, regions: Vec::new(), freed: Vec::new(), next_id: 1 }
    }

    pub fn bounds(&self) -> (u64, u64) {
        (self.root.base, self.root.length)
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    /// Records a loader-created region outside the heap range.
    pub fn register_static(&mut self, base: u64, length: u64, kind: RegionKind) -> Region {
        let region = Region {
            id: self.bump_id(),
            base,
            length,
            reserved: length.div_ceil(GRANULE) * GRANULE,
            kind,
            state: RegionState::Live,
            is_static: true,
        };
        let at = self.regions.partition_point(|r| r.base < base);
        self.regions.insert(at, region);
        region
    }

    fn bump_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    /// First fit over the gaps between reserved regions.
    fn find_gap(&self, reserved: u64) -> Option<u64> {
        let (lo, len) = self.bounds();
        let hi = lo + len;
        let mut cursor = lo;
        for r in self.regions.iter().filter(|r| !r.is_static && r.end() > lo && r.base < hi) {
            if r.base >= cursor && r.base - cursor >= reserved {
                return Some(cursor);
            }
            cursor = cursor.max(r.end());
        }
        (hi.saturating_sub(cursor) >= reserved).then_some(cursor)
    }

    fn reserve(&mut self, size: u64, kind: RegionKind) -> Result<Region, HeapError> {
        if size == 0 {
            return Err(HeapError::ZeroSize);
        }
        let reserved = size.checked_next_multiple_of(GRANULE).ok_or(HeapError::OutOfHeap)?;
        let base = self.find_gap(reserved).ok_or(HeapError::OutOfHeap)?;
        self.freed.retain(|f| f.end() <= base || f.base >= base + reserved);
        let region = Region {
            id: self.bump_id(),
            base,
            length: size,
            reserved,
            kind,
            state: RegionState::Live,
            is_static: false,
        };
        let at = self.regions.partition_point(|r| r.base < base);
        self.regions.insert(at, region);
        Ok(region)
    }

    fn derive(&self, region: &Region, perms: Perms) -> Capability {
        self.root
            .set_bounds(region.base, region.length)
            .and_then(|c| c.and_perms(perms))
            .expect("regions lie inside the heap root")
    }

    /// Blinded allocation: `LOAD|STORE`, no `NON_OBLIVIOUS`, zeroed contents.
    pub fn bmalloc(&mut self, mem: &mut Memory, size: u64) -> Result<Capability, HeapError> {
        let region = self.reserve(size, RegionKind::Blinded)?;
        scrub_if_dirty(mem, &region);
        Ok(self.derive(&region, Perms::LOAD | Perms::STORE))
    }

    /// Ordinary allocation with full data and capability permissions.
    pub fn malloc(&mut self, size: u64) -> Result<Capability, HeapError> {
        let region = self.reserve(size, RegionKind::Normal)?;
        Ok(self.derive(
            &region,
            Perms::LOAD | Perms::STORE | Perms::LOAD_CAP | Perms::STORE_CAP | Perms::NON_OBLIVIOUS,
        ))
    }

    /// Declassification buffer: blinded store-only + non-blinded load-only.
    pub fn result_alloc(&mut self, mem: &mut Memory, size: u64) -> Result<ResultPair, HeapError> {
        let region = self.reserve(size, RegionKind::Result)?;
        scrub_if_dirty(mem, &region);
        Ok(ResultPair {
            write: self.derive(&region, Perms::STORE),
            read: self.derive(&region, Perms::LOAD | Perms::NON_OBLIVIOUS),
        })
    }

    /// Frees the live region whose bounds equal `cap`'s. Blinded and result
    /// regions are zeroed before the revocation sweep. Returns the number of
    /// revoked capabilities.
    pub fn dealloc(&mut self, mem: &mut Memory, regs: &mut [Cell], cap: &Capability) -> Result<usize, HeapError> {
        let pos = self
            .regions
            .iter()
            .position(|r| r.base == cap.base && r.length == cap.length && r.state == RegionState::Live);
        let Some(pos) = pos.filter(|_| cap.valid) else {
            if self.freed.iter().any(|r| r.base == cap.base && r.length == cap.length) {
                return Err(HeapError::DoubleFree);
            }
            return Err(HeapError::UnknownRegion);
        };
        if self.regions[pos].is_static {
            return Err(HeapError::StaticRegion);
        }
        self.regions[pos].state = RegionState::Quarantined;
        let region = self.regions[pos];
        if region.kind != RegionKind::Normal {
            mem.zero_range(region.base, region.reserved).expect("heap lies inside memory");
        }
        let revoked = revoke_sweep(mem, regs, &region);
        let mut region = self.regions.remove(pos);
        region.state = RegionState::Free;
        self.freed.push(region);
        Ok(revoked)
    }

    /// The live heap region starting at `base`.
    pub fn live_at(&self, base: u64) -> Option<Region> {
        self.regions.iter().find(|r| r.base == base && r.state == RegionState::Live && !r.is_static).copied()
    }

    /// Live regions of `kind`.
    pub fn live(&self, kind: RegionKind) -> impl Iterator<Item = &Region> {
        self.regions.iter().filter(move |r| r.kind == kind && r.state == RegionState::Live)
    }

    /// Pairwise disjointness of live regions.
    pub fn regions_disjoint(&self) -> bool {
        let mut live: Vec<&Region> = self.regions.iter().filter(|r| r.state == RegionState::Live).collect();
        live.sort_by_key(|r| r.base);
        live.windows(2).all(|w| w[0].end() <= w[1].base)
    }
}

fn scrub_if_dirty(mem: &mut Memory, region: &Region) {
    let range = region.base as usize..region.end() as usize;
    let dirty = mem.bytes()[range].iter().any(|&b| b != 0)
        || (region.base..region.end()).step_by(GRANULE as usize).any(|g| mem.tag(g));
    if dirty {
        mem.zero_range(region.base, region.reserved).expect("heap lies inside memory");
    }
}

/// Clears the tag of every capability, in `regs` or in memory, whose bounds
/// intersect `region`. Returns how many were revoked.
pub fn revoke_sweep(mem: &mut Memory, regs: &mut [Cell], region: &Region) -> usize {
    let mut revoked = 0;
    for cell in regs.iter_mut() {
        if let Value::Cap(c) = &mut cell.value {
            if c.valid && c.bounds_intersect(region.base, region.reserved) {
                c.valid = false;
                revoked += 1;
            }
        }
    }
    let stale: Vec<u64> = mem
        .tagged_granules()
        .filter(|&g| matches!(mem.read_granule(g), Ok(Granule::Cap(c)) if c.bounds_intersect(region.base, region.reserved)))
        .collect();
    for g in stale {
        mem.clear_tag(g);
        revoked += 1;
    }
    revoked
}
