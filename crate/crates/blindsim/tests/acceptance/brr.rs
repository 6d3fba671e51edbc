//! Spill and restore through the stack capability.

use blindcap::cap::{Capability, Perms};
use blindcap::machine::asm::assemble;
use blindcap::machine::{Cell, Machine, MachineConfig, RunOutcome, Value};
use blindcap::memory::{encode_brr, Granule, Memory, BRR_MARK};
use blindcap::trace::NoTrace;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn spill(mask: u8, secret: u64) -> Result<(), String> {
    let src = format!(
        "LI x3, -32
        CINCOFFSET x2, x2, x3
        LI x10, 7
        ECALL
        CSC x10, 0(x2)
        LI x5, {mask}
        CANDPERM x6, x2, x5
        CSC x6, 16(x2)
        LI x10, 0
        CLC x7, 0(x2)
        CLC x8, 16(x2)
        HALT"
    );
    let mut m = Machine::from_program(assemble(&src).unwrap(), MachineConfig::default()).unwrap();
    m.push_secret([secret]);
    if m.run(100, &mut NoTrace) != RunOutcome::Halted {
        return Err(format!("mask {mask}: {:?}", m.fault()));
    }
    let r = m.regs();
    if r[7] != Cell::with_taint(secret, true) {
        return Err(format!("mask {mask}: restored {:?}", r[7]));
    }
    if r[8] != r[6] || !matches!(r[8].value, Value::Cap(c) if c.valid) || r[8].blinded {
        return Err(format!("mask {mask}: capability {:?} came back as {:?}", r[6], r[8]));
    }
    let sp = m.regs()[2].word();
    if !m.mem().is_brr(sp) || m.mem().is_brr(sp + 16) {
        return Err(format!("mask {mask}: wrong granule kinds"));
    }
    Ok(())
}

/// Every permission set, every bound shape in a small grid: a capability
/// image never carries the BRR marker and a BRR never decodes as a
/// capability.
fn marker_disjoint(rng: &mut ChaCha8Rng) -> Result<u32, String> {
    let mut mem = Memory::new(1 << 12).unwrap();
    let mut n = 0;
    for bits in 0u8..64 {
        let perms = Perms::from_bits(bits).ok_or(format!("perm bits {bits} rejected"))?;
        for (base, len) in [(0, 0), (0x100, 0x40), (0xFFF_FFF0, 0x10), (0x123_4560, 0x0ABC_DEF0)] {
            let root = Capability::root(base, len, Perms::from_bits(63).unwrap()).map_err(|e| format!("{e:?}"))?;
            let mut cap = root.and_perms(perms).map_err(|e| format!("{e:?}"))?;
            cap = cap.with_address(base + len / 2).map_err(|e| format!("{e:?}"))?;
            mem.write_granule(0x40, Granule::Cap(cap)).map_err(|e| format!("{e:?}"))?;
            let (img, tag) = mem.raw_granule(0x40).unwrap();
            if !tag || u64::from_le_bytes(img[8..].try_into().unwrap()) == BRR_MARK || mem.is_brr(0x40) {
                return Err(format!("capability with perms {bits:#x} looks like a BRR"));
            }
            if mem.read_granule(0x40).unwrap() != Granule::Cap(cap) {
                return Err(format!("capability with perms {bits:#x} did not round trip"));
            }
            n += 1;
        }
        let payload = if bits % 2 == 0 { rng.gen() } else { u64::from(bits) << 56 | 0x80 };
        if !matches!(Granule::decode(encode_brr(payload), true), Granule::Brr(p) if p == payload) {
            return Err(format!("BRR payload {payload:#x} decodes as something else"));
        }
    }
    Ok(n)
}

pub fn run(seed: u64) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7);
    for mask in 0u8..64 {
        let secret = if mask < 4 { [0, u64::MAX, BRR_MARK, 1 << 63][mask as usize] } else { rng.gen() };
        spill(mask, secret)?;
    }
    let n = marker_disjoint(&mut rng)?;
    Ok(format!("64 spill/restore masks, {n} capability images disjoint from the marker"))
}
