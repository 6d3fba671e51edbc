//! Capabilities: bounded, permission-carrying references to memory.
//!
//! A [`Capability`] is a plain value. Every derivation operation returns a new
//! capability whose bounds and permissions are a subset of the source, so
//! authority can only shrink along a derivation chain. Clearing
//! [`Perms::NON_OBLIVIOUS`] turns a capability into a *blinded* capability;
//! since no operation can set a bit that is already clear, blindedness is
//! absorbing.

use core::fmt;

use bitflags::bitflags;
use thiserror::Error;

bitflags! {
    /// Permission bits carried by a capability.
    #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
    pub struct Perms: u8 {
        const LOAD = 1 << 0;
        const STORE = 1 << 1;
        const EXECUTE = 1 << 2;
        const LOAD_CAP = 1 << 3;
        const STORE_CAP = 1 << 4;
        /// Set in freshly created capabilities. A capability without it is blinded.
        const NON_OBLIVIOUS = 1 << 5;
    }
}

impl Perms {
    /// Letters in rendering order, one per bit from LSB up.
    const LETTERS: [(Perms, char); 6] = [
        (Perms::LOAD, 'L'),
        (Perms::STORE, 'S'),
        (Perms::EXECUTE, 'X'),
        (Perms::LOAD_CAP, 'l'),
        (Perms::STORE_CAP, 's'),
        (Perms::NON_OBLIVIOUS, 'N'),
    ];

    /// Data-only read/write access, not blinded.
    pub const DATA_RW: Perms = Perms::LOAD.union(Perms::STORE).union(Perms::NON_OBLIVIOUS);

    /// `true` if every bit of `self` is also set in `parent`.
    pub fn is_subset_of(self, parent: Perms) -> bool {
        parent.contains(self)
    }
}

impl fmt::Display for Perms {
    /// Fixed-width letter string, `-` for a clear bit: `LSXlsN`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (bit, letter) in Self::LETTERS {
            let c = if self.contains(bit) { letter } else { '-' };
            fmt::Write::write_char(f, c)?;
        }
        Ok(())
    }
}

/// Errors raised by capability derivation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum CapError {
    #[error("bounds overflow the address space")]
    OutOfAddressSpace,
    #[error("derived bounds exceed the parent's bounds")]
    MonotonicityViolation,
    #[error("capability tag is clear")]
    InvalidCapability,
}

/// Kind of memory access being authorised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AccessKind {
    Load,
    Store,
    LoadCap,
    StoreCap,
    Execute,
}

impl AccessKind {
    pub fn required_perm(self) -> Perms {
        match self {
            AccessKind::Load => Perms::LOAD,
            AccessKind::Store => Perms::STORE,
            AccessKind::LoadCap => Perms::LOAD_CAP,
            AccessKind::StoreCap => Perms::STORE_CAP,
            AccessKind::Execute => Perms::EXECUTE,
        }
    }
}

/// Why an access was refused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Error)]
pub enum AccessFault {
    #[error("tag violation")]
    Tag,
    #[error("bounds violation")]
    Bounds,
    #[error("permission violation")]
    Permission,
}

/// A capability with exact (uncompressed) bounds.
///
/// `addr` is a cursor and may sit outside `[base, base + length)`; that is
/// only an error once the capability is dereferenced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Capability {
    pub valid: bool,
    pub perms: Perms,
    pub base: u64,
    pub length: u64,
    pub addr: u64,
}

impl Capability {
    /// A tag-clear all-zero value, the capability equivalent of NULL.
    pub const NULL: Capability = Capability {
        valid: false,
        perms: Perms::empty(),
        base: 0,
        length: 0,
        addr: 0,
    };

    /// Creates a root capability. `NON_OBLIVIOUS` is always added to `perms`.
    pub fn root(base: u64, length: u64, perms: Perms) -> Result<Capability, CapError> {
        base.checked_add(length).ok_or(CapError::OutOfAddressSpace)?;
        Ok(Capability {
            valid: true,
            perms: perms | Perms::NON_OBLIVIOUS,
            base,
            length,
            addr: base,
        })
    }

    /// Exclusive upper bound. Cannot overflow for capabilities built through
    /// this module.
    pub fn top(&self) -> u64 {
        self.base.saturating_add(self.length)
    }

    /// Valid and missing `NON_OBLIVIOUS`.
    pub fn is_blinded(&self) -> bool {
        self.valid && !self.perms.contains(Perms::NON_OBLIVIOUS)
    }

    fn require_valid(&self) -> Result<(), CapError> {
        if self.valid {
            Ok(())
        } else {
            Err(CapError::InvalidCapability)
        }
    }

    /// Narrows bounds to `[new_base, new_base + new_length)`; the cursor moves to `new_base`.
    pub fn set_bounds(&self, new_base: u64, new_length: u64) -> Result<Capability, CapError> {
        self.require_valid()?;
        let new_top = new_base
            .checked_add(new_length)
            .ok_or(CapError::MonotonicityViolation)?;
        if new_base < self.base || new_top > self.top() {
            return Err(CapError::MonotonicityViolation);
        }
        Ok(Capability {
            base: new_base,
            length: new_length,
            addr: new_base,
            ..*self
        })
    }

    /// Intersects the permission set with `mask`.
    pub fn and_perms(&self, mask: Perms) -> Result<Capability, CapError> {
        self.require_valid()?;
        Ok(Capability {
            perms: self.perms & mask,
            ..*self
        })
    }

    pub fn with_address(&self, new_addr: u64) -> Result<Capability, CapError> {
        self.require_valid()?;
        Ok(Capability {
            addr: new_addr,
            ..*self
        })
    }

    /// Checks an access of `width` bytes at `addr`. Pure.
    pub fn check_access(&self, addr: u64, width: u64, kind: AccessKind) -> Result<(), AccessFault> {
        if !self.valid {
            return Err(AccessFault::Tag);
        }
        let end = addr.checked_add(width).ok_or(AccessFault::Bounds)?;
        if addr < self.base || end > self.top() {
            return Err(AccessFault::Bounds);
        }
        if !self.perms.contains(kind.required_perm()) {
            return Err(AccessFault::Permission);
        }
        Ok(())
    }

    /// Both valid and the half-open bound intervals intersect.
    pub fn overlaps(&self, other: &Capability) -> bool {
        self.valid && other.valid && intervals_overlap(self.base, self.top(), other.base, other.top())
    }

    /// Bounds intersect `[base, base+length)`, ignoring the tag.
    pub fn bounds_intersect(&self, base: u64, length: u64) -> bool {
        intervals_overlap(self.base, self.top(), base, base.saturating_add(length))
    }

    /// `true` if `self` could have been derived from `parent`.
    pub fn is_derivable_from(&self, parent: &Capability) -> bool {
        self.perms.is_subset_of(parent.perms) && self.base >= parent.base && self.top() <= parent.top()
    }
}

fn intervals_overlap(a_lo: u64, a_hi: u64, b_lo: u64, b_hi: u64) -> bool {
    a_lo < b_hi && b_lo < a_hi && a_lo < a_hi && b_lo < b_hi
}

impl fmt::Display for Capability {
    /// `cap{tag,perms,base,len,addr}`, e.g. `cap{1,LS---N,0x1000,0x100,0x1000}`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "cap{{{},{},{:#x},{:#x},{:#x}}}",
            u8::from(self.valid),
            self.perms,
            self.base,
            self.length,
            self.addr
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use proptest::prelude::*;

    fn cap(base: u64, len: u64) -> Capability {
        Capability::root(base, len, Perms::all()).unwrap()
    }

    #[test]
    fn root_echoes_fields() {
        let c = cap(0x1000, 0x100);
        assert!(c.valid);
        assert_eq!((c.base, c.length, c.addr), (0x1000, 0x100, 0x1000));
        assert!(!c.is_blinded());
        let boot = Capability::root(0, 1 << 24, Perms::all()).unwrap();
        assert_eq!(boot.top(), 1 << 24);
    }

    #[test]
    fn root_forces_non_oblivious() {
        let c = Capability::root(0, 16, Perms::LOAD).unwrap();
        assert!(c.perms.contains(Perms::NON_OBLIVIOUS));
    }

    #[test]
    fn root_overflow() {
        assert_eq!(
            Capability::root(u64::MAX - 8, 0x100, Perms::all()),
            Err(CapError::OutOfAddressSpace)
        );
    }

    #[test]
    fn set_bounds_cases() {
        let p = cap(0x1000, 0x100);
        let c = p.set_bounds(0x1020, 0x10).unwrap();
        assert_eq!((c.base, c.top(), c.addr), (0x1020, 0x1030, 0x1020));
        assert_eq!(p.set_bounds(0x0F00, 0x10), Err(CapError::MonotonicityViolation));
        assert_eq!(p.set_bounds(0x10F8, 0x10), Err(CapError::MonotonicityViolation));
        let dead = Capability { valid: false, ..p };
        assert_eq!(dead.set_bounds(0x1000, 1), Err(CapError::InvalidCapability));
    }

    #[test]
    fn and_perms_blinds_and_never_unblinds() {
        let c = cap(0x1000, 0x100);
        let b = c.and_perms(Perms::all() - Perms::NON_OBLIVIOUS).unwrap();
        assert!(b.is_blinded());
        let still = b.and_perms(Perms::all()).unwrap();
        assert!(still.is_blinded());
        assert_eq!(c.and_perms(Perms::all()).unwrap().perms, c.perms);
        assert_eq!(Capability::NULL.and_perms(Perms::all()), Err(CapError::InvalidCapability));
    }

    #[test]
    fn with_address_is_total_for_valid_caps() {
        let c = cap(0x1000, 0x100);
        let moved = c.with_address(0x1008).unwrap();
        assert_eq!((moved.addr, moved.base, moved.length), (0x1008, 0x1000, 0x100));
        let outside = c.with_address(0x9000).unwrap();
        assert!(outside.valid);
        assert_eq!(Capability::NULL.with_address(8), Err(CapError::InvalidCapability));
    }

    #[test]
    fn check_access_cases() {
        let c = Capability::root(0x1000, 0x100, Perms::LOAD).unwrap();
        assert_eq!(c.check_access(0x10F8, 8, AccessKind::Load), Ok(()));
        assert_eq!(c.check_access(0x10FC, 8, AccessKind::Load), Err(AccessFault::Bounds));
        assert_eq!(c.check_access(0x1000, 8, AccessKind::Store), Err(AccessFault::Permission));
        assert_eq!(c.check_access(0x0FF8, 8, AccessKind::Load), Err(AccessFault::Bounds));
        assert_eq!(Capability::NULL.check_access(0, 8, AccessKind::Load), Err(AccessFault::Tag));
        assert_eq!(c.check_access(u64::MAX, 8, AccessKind::Load), Err(AccessFault::Bounds));
    }

    #[test]
    fn overlap_cases() {
        let a = cap(0x1000, 0x100);
        assert!(a.overlaps(&cap(0x10F0, 0x110)));
        assert!(!a.overlaps(&cap(0x1100, 0x100)));
        assert!(!a.overlaps(&Capability { valid: false, ..a }));
        assert!(!a.overlaps(&cap(0x1050, 0)));
    }

    #[test]
    fn rendering_is_fixed_order() {
        let c = Capability::root(0x1000, 0x100, Perms::LOAD | Perms::STORE).unwrap();
        assert_eq!(c.to_string(), "cap{1,LS---N,0x1000,0x100,0x1000}");
        assert_eq!(Capability::NULL.to_string(), "cap{0,------,0x0,0x0,0x0}");
        assert_eq!(Perms::all().to_string(), "LSXlsN");
    }

    #[derive(Debug, Clone)]
    enum Step {
        Bounds(u64, u64),
        Mask(u8),
        Addr(u64),
    }

    fn step() -> impl Strategy<Value = Step> {
        prop_oneof![
            (0u64..0x2000, 0u64..0x2000).prop_map(|(b, l)| Step::Bounds(b, l)),
            any::<u8>().prop_map(Step::Mask),
            any::<u64>().prop_map(Step::Addr),
        ]
    }

    proptest! {
        #[test]
        fn derivation_is_monotone(start_mask in any::<u8>(), steps in proptest::collection::vec(step(), 0..24)) {
            let root = Capability::root(0x400, 0x1000, Perms::from_bits_truncate(start_mask)).unwrap();
            let mut cur = root;
            let mut blinded = cur.is_blinded();
            for s in steps {
                let next = match s {
                    Step::Bounds(b, l) => cur.set_bounds(b, l),
                    Step::Mask(m) => cur.and_perms(Perms::from_bits_truncate(m)),
                    Step::Addr(a) => cur.with_address(a),
                };
                if let Ok(next) = next {
                    prop_assert!(next.is_derivable_from(&cur));
                    prop_assert!(next.is_derivable_from(&root));
                    prop_assert!(!(blinded && !next.is_blinded()));
                    blinded = next.is_blinded();
                    cur = next;
                }
            }
        }

        #[test]
        fn check_access_is_pure(base in 0u64..0x1000, len in 0u64..0x1000, addr in 0u64..0x3000, w in 1u64..17) {
            let c = Capability::root(base, len, Perms::LOAD).unwrap();
            prop_assert_eq!(c.check_access(addr, w, AccessKind::Load), c.check_access(addr, w, AccessKind::Load));
        }
    }
}
