//! Memory snapshots in the BLSM1 format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "BLSM1"  size:u64  { offset:u64  count:u32  count * (tag:u8  image:[u8;16]) }*
//! ```
//!
//! Each run covers `count` consecutive granules starting at byte `offset`.
//! Granules that are all zero and untagged are left out.

use blindcap::memory::{MemError, Memory, GRANULE};
use thiserror::Error;

pub const MAGIC: &[u8; 5] = b"BLSM1";

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("not a BLSM1 snapshot")]
    BadMagic,
    #[error("snapshot truncated at byte {0}")]
    Truncated(usize),
    #[error("bad tag byte {0:#x}")]
    BadTag(u8),
    #[error("run at {offset:#x} is not granule aligned")]
    Misaligned { offset: u64 },
    #[error("snapshot of {found} bytes does not fit memory of {expected} bytes")]
    SizeMismatch { expected: u64, found: u64 },
    #[error(transparent)]
    Memory(#[from] MemError),
}

/// Start offset and (image, tag) pairs of consecutive granules.
type Run = (u64, Vec<([u8; 16], bool)>);

pub fn dump(mem: &Memory) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&mem.size().to_le_bytes());
    let mut run: Option<Run> = None;
    let flush = |run: &mut Option<Run>, out: &mut Vec<u8>| {
        if let Some((offset, gs)) = run.take() {
            out.extend_from_slice(&offset.to_le_bytes());
            out.extend_from_slice(&(gs.len() as u32).to_le_bytes());
            for (image, tag) in gs {
                out.push(tag as u8);
                out.extend_from_slice(&image);
            }
        }
    };
    for addr in (0..mem.size()).step_by(GRANULE as usize) {
        let (image, tag) = mem.raw_granule(addr).expect("in range");
        if !tag && image == [0; 16] {
            flush(&mut run, &mut out);
            continue;
        }
        match &mut run {
            Some((_, gs)) if gs.len() < u32::MAX as usize => gs.push((image, tag)),
            _ => {
                flush(&mut run, &mut out);
                run = Some((addr, vec![(image, tag)]));
            }
        }
    }
    flush(&mut run, &mut out);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], SnapshotError> {
        let s = self.buf.get(self.pos..self.pos + n).ok_or(SnapshotError::Truncated(self.pos))?;
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64, SnapshotError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, SnapshotError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Decodes a snapshot into a fresh memory of the recorded size.
pub fn load(buf: &[u8]) -> Result<Memory, SnapshotError> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(MAGIC.len()).ok() != Some(&MAGIC[..]) {
        return Err(SnapshotError::BadMagic);
    }
    let size = r.u64()?;
    let mut mem = Memory::new(size)?;
    while r.pos < buf.len() {
        let offset = r.u64()?;
        if offset % GRANULE != 0 {
            return Err(SnapshotError::Misaligned { offset });
        }
        let count = r.u32()?;
        for i in 0..u64::from(count) {
            let tag = match r.take(1)?[0] {
                0 => false,
                1 => true,
                t => return Err(SnapshotError::BadTag(t)),
            };
            let image: [u8; 16] = r.take(16)?.try_into().unwrap();
            mem.set_raw_granule(offset + i * GRANULE, image, tag)?;
        }
    }
    Ok(mem)
}

/// Replaces `mem` with the snapshot contents. Sizes must agree.
pub fn restore(mem: &mut Memory, buf: &[u8]) -> Result<(), SnapshotError> {
    let loaded = load(buf)?;
    if loaded.size() != mem.size() {
        return Err(SnapshotError::SizeMismatch { expected: mem.size(), found: loaded.size() });
    }
    *mem = loaded;
    Ok(())
}
