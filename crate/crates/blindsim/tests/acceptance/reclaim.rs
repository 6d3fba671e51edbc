//! Erase-on-free and revocation over random allocation histories.

use blindcap::cap::Capability;
use blindcap::heap::Heap;
use blindcap::machine::{Cell, Value};
use blindcap::memory::{Granule, Memory, GRANULE};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MEM: u64 = 1 << 18;
const HEAP: (u64, u64) = (0x10000, 0x20000);

fn intersects(c: &Capability, base: u64, len: u64) -> bool {
    c.length > 0 && c.base < base + len && base < c.base + c.length
}

/// Tagged capabilities anywhere in memory or in a register that still
/// reach `[base, base+len)`.
fn surviving(mem: &Memory, regs: &[Cell], base: u64, len: u64) -> usize {
    let in_mem = (0..mem.size())
        .step_by(GRANULE as usize)
        .filter(|&a| {
            let (img, tag) = mem.raw_granule(a).unwrap();
            matches!(Granule::decode(img, tag), Granule::Cap(c) if c.valid && intersects(&c, base, len))
        })
        .count();
    let in_regs = regs.iter().filter(|r| matches!(r.value, Value::Cap(c) if c.valid && intersects(&c, base, len))).count();
    in_mem + in_regs
}

struct Live {
    cap: Capability,
    blinded: bool,
}

fn scenario(rng: &mut ChaCha8Rng, stats: &mut [u64; 3]) -> Result<(), String> {
    let mut mem = Memory::new(MEM).unwrap();
    let mut heap = Heap::new(HEAP.0, HEAP.1);
    let mut regs = vec![Cell::ZERO; 32];
    let mut live: Vec<Live> = Vec::new();
    // Bytes erased by a blinded free and not written since.
    let mut erased = vec![false; MEM as usize];
    for _ in 0..rng.gen_range(10..40) {
        match rng.gen_range(0..6) {
            0 | 1 => {
                let size = rng.gen_range(1..=32) * 8;
                let blinded = rng.gen_bool(0.5);
                let cap = if blinded { heap.bmalloc(&mut mem, size) } else { heap.malloc(size) };
                let Ok(cap) = cap else { continue };
                for a in cap.base..cap.base + cap.length {
                    if erased[a as usize] && mem.read_data(a, 1).unwrap() != 0 {
                        return Err(format!("reused byte {a:#x} is not zero"));
                    }
                }
                for w in (cap.base..cap.base + cap.length).step_by(8) {
                    mem.write_data(w, 8, rng.gen::<u64>() | 1).unwrap();
                    erased[w as usize..w as usize + 8].fill(false);
                }
                stats[0] += 1;
                live.push(Live { cap, blinded });
            }
            2 => {
                // Spread a capability into a register and into normal memory.
                let targets: Vec<&Live> = live.iter().filter(|l| !l.blinded && l.cap.length >= 16).collect();
                let (Some(src), Some(dst)) = (live.choose(rng), targets.choose(rng)) else {
                    continue;
                };
                regs[rng.gen_range(1..32)] = Cell::cap(src.cap);
                let slot = dst.cap.base + GRANULE * rng.gen_range(0..dst.cap.length / GRANULE);
                mem.write_granule(slot, Granule::Cap(src.cap)).unwrap();
                erased[slot as usize..(slot + GRANULE) as usize].fill(false);
            }
            _ => {
                if live.is_empty() {
                    continue;
                }
                let l = live.swap_remove(rng.gen_range(0..live.len()));
                heap.dealloc(&mut mem, &mut regs, &l.cap).map_err(|e| format!("free: {e:?}"))?;
                let reserved = l.cap.length.div_ceil(GRANULE) * GRANULE;
                if l.blinded {
                    stats[1] += 1;
                    for a in l.cap.base..l.cap.base + reserved {
                        if mem.read_data(a, 1).unwrap() != 0 {
                            return Err(format!("byte {a:#x} of a freed blinded region is not zero"));
                        }
                        erased[a as usize] = true;
                    }
                }
                let n = surviving(&mem, &regs, l.cap.base, reserved);
                if n != 0 {
                    return Err(format!("{n} capabilities survive a free at {:#x}", l.cap.base));
                }
                stats[2] += 1;
            }
        }
        if !heap.regions_disjoint() {
            return Err("live regions overlap".into());
        }
    }
    Ok(())
}

pub fn run(seed: u64) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6);
    let mut stats = [0u64; 3];
    for i in 0..500 {
        scenario(&mut rng, &mut stats).map_err(|e| format!("interleaving {i}: {e}"))?;
    }
    Ok(format!("500 interleavings: {} allocations, {} blinded frees, {} frees scanned", stats[0], stats[1], stats[2]))
}
