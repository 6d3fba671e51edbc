//! Tagged, byte-addressable memory.
//!
//! Memory is split into 16-byte granules, each with a validity tag. A tagged
//! granule holds either a serialized [`Capability`] or a blinded register
//! restore record (BRR). Untagged granules are plain bytes. Any data write
//! clears the tag of every granule it touches, so capabilities cannot be
//! forged from data.
//!
//! Capability image (little-endian):
//!
//! ```text
//! bytes 0..8   addr
//! byte  8      perms (bits 0..6) | 0x80 format bit
//! bytes 9..16  base (28 bits) | length (28 bits) << 28
//! ```
//!
//! A BRR image is the spilled word in bytes 0..8 followed by [`BRR_MARK`].
//! The low byte of `BRR_MARK` is `0x01`, which has the format bit clear, so
//! the two encodings can never collide.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::cap::{Capability, Perms};

pub const GRANULE: u64 = 16;
pub const BRR_MARK: u64 = 0xB11D_EDCA_FE00_0001;
pub const DEFAULT_SIZE: u64 = 1 << 24;
/// Largest memory whose addresses and lengths fit the 28-bit image fields.
pub const MAX_SIZE: u64 = 1 << 27;
pub const MIN_SIZE: u64 = 1 << 12;

const CAP_FORMAT_BIT: u64 = 0x80;
const FIELD_BITS: u32 = 28;
const FIELD_MASK: u64 = (1 << FIELD_BITS) - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum MemError {
    #[error("access at {addr:#x} outside memory")]
    OutOfMemoryRange { addr: u64 },
    #[error("misaligned access at {addr:#x}")]
    MisalignedAccess { addr: u64 },
    #[error("memory size must be a power of two in [2^12, 2^27]")]
    BadSize,
    #[error("capability bounds do not fit the memory image")]
    Unencodable,
}

/// Decoded content of one granule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Granule {
    Raw([u8; 16]),
    Cap(Capability),
    Brr(u64),
}

impl Granule {
    /// Interprets a 16-byte image and its tag.
    pub fn decode(image: [u8; 16], tag: bool) -> Granule {
        if !tag {
            return Granule::Raw(image);
        }
        let (lo, hi) = unpack(&image);
        if hi == BRR_MARK {
            return Granule::Brr(lo);
        }
        decode_cap(&image, true).map_or(Granule::Raw(image), Granule::Cap)
    }

    /// Image and tag as stored in memory.
    pub fn encode(&self) -> Result<([u8; 16], bool), MemError> {
        Ok(match *self {
            Granule::Raw(bytes) => (bytes, false),
            Granule::Cap(cap) => (encode_cap(&cap)?, cap.valid),
            Granule::Brr(payload) => (encode_brr(payload), true),
        })
    }
}

/// Serializes a capability into its 16-byte image. The tag is not part of
/// the image.
pub fn encode_cap(cap: &Capability) -> Result<[u8; 16], MemError> {
    if cap.base > FIELD_MASK || cap.length > FIELD_MASK {
        return Err(MemError::Unencodable);
    }
    let upper = (u64::from(cap.perms.bits()) | CAP_FORMAT_BIT)
        | (cap.base << 8)
        | (cap.length << (8 + FIELD_BITS));
    Ok(pack(cap.addr, upper))
}

/// Inverse of [`encode_cap`] for an image known to carry a capability.
pub fn decode_cap(image: &[u8; 16], valid: bool) -> Option<Capability> {
    let (addr, upper) = unpack(image);
    if upper & CAP_FORMAT_BIT == 0 {
        return None;
    }
    let perms = Perms::from_bits((upper & 0x7F) as u8)?;
    Some(Capability {
        valid,
        perms,
        base: (upper >> 8) & FIELD_MASK,
        length: (upper >> (8 + FIELD_BITS)) & FIELD_MASK,
        addr,
    })
}

pub fn encode_brr(payload: u64) -> [u8; 16] {
    pack(payload, BRR_MARK)
}

fn pack(lo: u64, hi: u64) -> [u8; 16] {
    let mut out = [0u8; 16];
    out[..8].copy_from_slice(&lo.to_le_bytes());
    out[8..].copy_from_slice(&hi.to_le_bytes());
    out
}

fn unpack(image: &[u8; 16]) -> (u64, u64) {
    let lo = u64::from_le_bytes(image[..8].try_into().unwrap());
    let hi = u64::from_le_bytes(image[8..].try_into().unwrap());
    (lo, hi)
}

/// Byte memory with one validity tag per granule. Zero-initialized.
#[derive(Clone)]
pub struct Memory {
    bytes: Vec<u8>,
    tags: Vec<u64>,
    zeroized: u64,
}

impl core::fmt::Debug for Memory {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Memory")
            .field("size", &self.size())
            .field("tagged", &self.tagged_granules().count())
            .finish()
    }
}

impl Memory {
    pub fn new(size: u64) -> Result<Memory, MemError> {
        if !size.is_power_of_two() || !(MIN_SIZE..=MAX_SIZE).contains(&size) {
            return Err(MemError::BadSize);
        }
        let granules = (size / GRANULE) as usize;
        Ok(Memory {
            bytes: vec![0; size as usize],
            tags: vec![0; granules.div_ceil(64)],
            zeroized: 0,
        })
    }

    pub fn size(&self) -> u64 {
        self.bytes.len() as u64
    }

    /// Total bytes cleared through [`Memory::zero_range`].
    pub fn zeroized_bytes(&self) -> u64 {
        self.zeroized
    }

    fn check_range(&self, addr: u64, len: u64) -> Result<(), MemError> {
        match addr.checked_add(len) {
            Some(end) if end <= self.size() => Ok(()),
            _ => Err(MemError::OutOfMemoryRange { addr }),
        }
    }

    fn check_granule(&self, addr: u64) -> Result<(), MemError> {
        if !addr.is_multiple_of(GRANULE) {
            return Err(MemError::MisalignedAccess { addr });
        }
        self.check_range(addr, GRANULE)
    }

    pub fn tag(&self, addr: u64) -> bool {
        let g = (addr / GRANULE) as usize;
        self.tags.get(g / 64).is_some_and(|w| w >> (g % 64) & 1 == 1)
    }

    fn set_tag(&mut self, addr: u64, on: bool) {
        let g = (addr / GRANULE) as usize;
        let bit = 1u64 << (g % 64);
        if on {
            self.tags[g / 64] |= bit;
        } else {
            self.tags[g / 64] &= !bit;
        }
    }

    fn image(&self, addr16: u64) -> [u8; 16] {
        let a = addr16 as usize;
        self.bytes[a..a + 16].try_into().unwrap()
    }

    /// `true` if the granule containing `addr` is a tagged BRR.
    pub fn is_brr(&self, addr: u64) -> bool {
        let g = addr & !(GRANULE - 1);
        g < self.size() && self.tag(g) && unpack(&self.image(g)).1 == BRR_MARK
    }

    /// Little-endian read of 1, 2, 4 or 8 bytes. Tags are not consulted.
    pub fn read_data(&self, addr: u64, width: u64) -> Result<u64, MemError> {
        debug_assert!(matches!(width, 1 | 2 | 4 | 8));
        self.check_range(addr, width)?;
        let mut buf = [0u8; 8];
        let a = addr as usize;
        buf[..width as usize].copy_from_slice(&self.bytes[a..a + width as usize]);
        Ok(u64::from_le_bytes(buf))
    }

    /// Little-endian write; clears the tag of every touched granule. A
    /// touched BRR granule is wiped first so no stale spilled bytes survive
    /// as untagged data.
    pub fn write_data(&mut self, addr: u64, width: u64, value: u64) -> Result<(), MemError> {
        debug_assert!(matches!(width, 1 | 2 | 4 | 8));
        self.check_range(addr, width)?;
        let first = addr & !(GRANULE - 1);
        let last = (addr + width - 1) & !(GRANULE - 1);
        let mut g = first;
        while g <= last {
            if self.is_brr(g) {
                self.bytes[g as usize..(g + GRANULE) as usize].fill(0);
            }
            self.set_tag(g, false);
            g += GRANULE;
        }
        let a = addr as usize;
        self.bytes[a..a + width as usize].copy_from_slice(&value.to_le_bytes()[..width as usize]);
        Ok(())
    }

    pub fn read_granule(&self, addr16: u64) -> Result<Granule, MemError> {
        self.check_granule(addr16)?;
        Ok(Granule::decode(self.image(addr16), self.tag(addr16)))
    }

    /// Capability-width store. Valid capabilities and BRRs set the tag;
    /// raw bytes and invalid capabilities store their image untagged.
    pub fn write_granule(&mut self, addr16: u64, content: Granule) -> Result<(), MemError> {
        self.check_granule(addr16)?;
        let (image, tag) = content.encode()?;
        let a = addr16 as usize;
        self.bytes[a..a + 16].copy_from_slice(&image);
        self.set_tag(addr16, tag);
        Ok(())
    }

    /// Clears `[base, base+length)` and every overlapped tag.
    pub fn zero_range(&mut self, base: u64, length: u64) -> Result<(), MemError> {
        self.check_range(base, length)?;
        if length == 0 {
            return Ok(());
        }
        self.bytes[base as usize..(base + length) as usize].fill(0);
        let mut g = base & !(GRANULE - 1);
        while g < base + length {
            if self.is_brr(g) {
                self.bytes[g as usize..(g + GRANULE) as usize].fill(0);
            }
            self.set_tag(g, false);
            g += GRANULE;
        }
        self.zeroized += length;
        Ok(())
    }

    /// Addresses of all tagged granules, ascending.
    pub fn tagged_granules(&self) -> impl Iterator<Item = u64> + '_ {
        self.tags.iter().enumerate().flat_map(|(w, &bits)| {
            let mut rest = bits;
            core::iter::from_fn(move || {
                if rest == 0 {
                    return None;
                }
                let b = rest.trailing_zeros() as u64;
                rest &= rest - 1;
                Some((w as u64 * 64 + b) * GRANULE)
            })
        })
    }

    /// Clears the tag of a granule without touching its bytes.
    pub fn clear_tag(&mut self, addr16: u64) {
        if addr16 < self.size() {
            self.set_tag(addr16 & !(GRANULE - 1), false);
        }
    }

    /// Raw image and tag, for snapshots.
    pub fn raw_granule(&self, addr16: u64) -> Result<([u8; 16], bool), MemError> {
        self.check_granule(addr16)?;
        Ok((self.image(addr16), self.tag(addr16)))
    }

    /// Restores a raw image and tag, for snapshots. A tagged image must
    /// decode as a capability or BRR.
    pub fn set_raw_granule(&mut self, addr16: u64, image: [u8; 16], tag: bool) -> Result<(), MemError> {
        self.check_granule(addr16)?;
        if tag {
            let (_, hi) = unpack(&image);
            if hi != BRR_MARK && decode_cap(&image, true).is_none() {
                return Err(MemError::Unencodable);
            }
        }
        let a = addr16 as usize;
        self.bytes[a..a + 16].copy_from_slice(&image);
        self.set_tag(addr16, tag);
        Ok(())
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mem() -> Memory {
        Memory::new(1 << 16).unwrap()
    }

    fn sample_cap() -> Capability {
        Capability::root(0x1000, 0x100, Perms::all()).unwrap().with_address(0x1010).unwrap()
    }

    #[test]
    fn data_round_trip_and_init() {
        let mut m = mem();
        assert_eq!(m.read_data(0x200, 8), Ok(0));
        m.write_data(0x100, 8, 42).unwrap();
        assert_eq!(m.read_data(0x100, 8), Ok(42));
        m.write_data(0x101, 2, 0xBEEF).unwrap();
        assert_eq!(m.read_data(0x101, 2), Ok(0xBEEF));
        assert!(matches!(m.read_data(m.size() - 4, 8), Err(MemError::OutOfMemoryRange { .. })));
    }

    #[test]
    fn bad_sizes_rejected() {
        assert_eq!(Memory::new(3000).unwrap_err(), MemError::BadSize);
        assert_eq!(Memory::new(1 << 28).unwrap_err(), MemError::BadSize);
    }

    #[test]
    fn data_write_clears_tag() {
        let mut m = mem();
        m.write_granule(0x100, Granule::Cap(sample_cap())).unwrap();
        assert!(m.tag(0x100));
        m.write_data(0x108, 8, 0).unwrap();
        assert!(!m.tag(0x100));
        assert!(matches!(m.read_granule(0x100), Ok(Granule::Raw(_))));
        m.write_data(0x200, 8, 5).unwrap();
        assert!(!m.tag(0x200));
    }

    #[test]
    fn granule_round_trips() {
        let mut m = mem();
        m.write_granule(0x100, Granule::Cap(sample_cap())).unwrap();
        assert_eq!(m.read_granule(0x100), Ok(Granule::Cap(sample_cap())));
        m.write_granule(0x110, Granule::Brr(7)).unwrap();
        assert_eq!(m.read_granule(0x110), Ok(Granule::Brr(7)));
        m.write_granule(0x120, Granule::Brr(0xDEAD)).unwrap();
        assert_eq!(m.read_granule(0x120), Ok(Granule::Brr(0xDEAD)));
        assert!(matches!(m.read_granule(0x108), Err(MemError::MisalignedAccess { .. })));
    }

    #[test]
    fn invalid_cap_stores_untagged() {
        let mut m = mem();
        let dead = Capability { valid: false, ..sample_cap() };
        m.write_granule(0x100, Granule::Cap(dead)).unwrap();
        assert!(!m.tag(0x100));
        assert!(matches!(m.read_granule(0x100), Ok(Granule::Raw(_))));
    }

    #[test]
    fn brr_partial_overwrite_scrubs_payload() {
        let mut m = mem();
        m.write_granule(0x100, Granule::Brr(0x1234_5678)).unwrap();
        m.write_data(0x108, 8, 1).unwrap();
        assert_eq!(m.read_data(0x100, 8), Ok(0));
        assert!(!m.tag(0x100));
    }

    #[test]
    fn zero_range_cases() {
        let mut m = mem();
        m.write_data(0x300, 8, 99).unwrap();
        m.write_granule(0x320, Granule::Cap(sample_cap())).unwrap();
        m.zero_range(0x300, 0x40).unwrap();
        for a in (0x300..0x340).step_by(8) {
            assert_eq!(m.read_data(a, 8), Ok(0));
        }
        assert!(!m.tag(0x320));
        assert_eq!(m.zeroized_bytes(), 0x40);
        m.zero_range(0x500, 0).unwrap();
        assert_eq!(m.zeroized_bytes(), 0x40);
        assert!(m.zero_range(m.size() - 8, 16).is_err());
    }

    #[test]
    fn tagged_granule_iteration() {
        let mut m = mem();
        m.write_granule(0x40, Granule::Brr(1)).unwrap();
        m.write_granule(0x4000, Granule::Cap(sample_cap())).unwrap();
        let v: Vec<u64> = m.tagged_granules().collect();
        assert_eq!(v, vec![0x40, 0x4000]);
    }

    #[test]
    fn marker_disjoint_over_every_permission_set() {
        for bits in 0u8..64 {
            let perms = Perms::from_bits(bits).unwrap();
            for (base, len) in [(0, 0), (0x1000, 0x100), (FIELD_MASK, 0), (0, FIELD_MASK), (0xFE_0000, 0x1D)] {
                let cap = Capability { valid: true, perms, base, length: len, addr: u64::MAX };
                let image = encode_cap(&cap).unwrap();
                assert_ne!(unpack(&image).1, BRR_MARK, "perms {bits:#x}");
                assert_eq!(decode_cap(&image, true), Some(cap));
            }
        }
    }

    #[test]
    fn oversized_bounds_unencodable() {
        let cap = Capability::root(0, 1 << 28, Perms::all()).unwrap();
        assert_eq!(encode_cap(&cap), Err(MemError::Unencodable));
    }

    proptest! {
        #[test]
        fn data_writes_never_create_tags(writes in proptest::collection::vec((0u64..0x1000, prop_oneof![Just(1u64), Just(2), Just(4), Just(8)], any::<u64>()), 1..64)) {
            let mut m = Memory::new(1 << 12).unwrap();
            for (addr, w, v) in writes {
                let _ = m.write_data(addr, w, v);
            }
            prop_assert_eq!(m.tagged_granules().count(), 0);
        }

        #[test]
        fn tagged_granules_round_trip(ops in proptest::collection::vec((0u64..256, any::<u64>(), any::<bool>()), 1..64)) {
            let mut m = Memory::new(1 << 12).unwrap();
            for (g, v, as_cap) in ops {
                let addr = g * 16;
                let content = if as_cap {
                    let c = Capability::root(v & 0xFFF, (v >> 12) & 0xFFF, Perms::from_bits_truncate((v >> 24) as u8)).unwrap();
                    Granule::Cap(c.with_address(v).unwrap())
                } else {
                    Granule::Brr(v)
                };
                m.write_granule(addr, content).unwrap();
                prop_assert_eq!(m.read_granule(addr).unwrap(), content);
            }
            for addr in m.tagged_granules().collect::<Vec<_>>() {
                let g = m.read_granule(addr).unwrap();
                prop_assert!(!matches!(g, Granule::Raw(_)));
            }
        }
    }
}
