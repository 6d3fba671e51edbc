//! Instruction semantics.
//!
//! [`execute`] computes the effect of one instruction without mutating
//! anything, so the same code drives architectural steps and transient
//! (shadow) execution. Blindedness rules are applied before capability
//! checks; a fault means no part of the effect happens.

use crate::cap::{AccessFault, AccessKind, CapError, Capability, Perms};
use crate::memory::{Granule, MemError, Memory};

use super::isa::{CapModOp, Instruction, Reg, SymbolKind};
use super::rules::{alu_taint, branch_rule, load_rule, store_rule, FaultKind};
use super::{Cell, Mode, Value};

/// Read-only view of memory used by the executor.
pub trait MemView {
    fn size(&self) -> u64;
    fn read_word(&self, addr: u64) -> Result<u64, MemError>;
    fn is_brr(&self, addr: u64) -> bool;
    fn read_granule(&self, addr16: u64) -> Result<Granule, MemError>;
}

impl MemView for Memory {
    fn size(&self) -> u64 {
        Memory::size(self)
    }
    fn read_word(&self, addr: u64) -> Result<u64, MemError> {
        self.read_data(addr, 8)
    }
    fn is_brr(&self, addr: u64) -> bool {
        Memory::is_brr(self, addr)
    }
    fn read_granule(&self, addr16: u64) -> Result<Granule, MemError> {
        Memory::read_granule(self, addr16)
    }
}

/// Per-step execution context.
#[derive(Debug, Clone, Copy)]
pub struct Env {
    pub mode: Mode,
    pub enforce: bool,
    pub code_base: u64,
    pub code_len: usize,
    pub pcc: Capability,
    pub code_root: Capability,
    pub globals_root: Capability,
}

impl Env {
    pub fn pc_of(&self, index: usize) -> u64 {
        self.code_base + 4 * index as u64
    }

    pub fn index_of(&self, pc: u64) -> Option<usize> {
        let off = pc.checked_sub(self.code_base)?;
        if off % 4 != 0 {
            return None;
        }
        let idx = (off / 4) as usize;
        (idx < self.code_len).then_some(idx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoreOp {
    Word { addr: u64, value: u64 },
    Granule { addr: u64, content: Granule },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Next {
    Seq,
    /// Jump to a pc; indirect jumps also install a new PCC.
    Jump { pc: u64, pcc: Option<Capability> },
    Halt,
    Ecall,
    Out(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchInfo {
    Cond { taken: bool, target: u64, blinded: bool },
    Indirect { target: u64, blinded: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Effect {
    pub write: Option<(Reg, Cell)>,
    pub store: Option<StoreOp>,
    /// Address touched by a load or store.
    pub access: Option<u64>,
    pub next: Next,
    pub branch: Option<BranchInfo>,
}

impl Effect {
    fn seq() -> Effect {
        Effect { write: None, store: None, access: None, next: Next::Seq, branch: None }
    }

    fn write(rd: Reg, cell: Cell) -> Effect {
        Effect { write: Some((rd, cell)), ..Effect::seq() }
    }
}

fn access_fault(f: AccessFault) -> FaultKind {
    match f {
        AccessFault::Tag => FaultKind::TagViolation,
        AccessFault::Bounds => FaultKind::BoundsViolation,
        AccessFault::Permission => FaultKind::PermissionViolation,
    }
}

fn cap_fault(e: CapError) -> FaultKind {
    match e {
        CapError::InvalidCapability => FaultKind::TagViolation,
        CapError::MonotonicityViolation | CapError::OutOfAddressSpace => FaultKind::BoundsViolation,
    }
}

fn mem_fault(e: MemError) -> FaultKind {
    match e {
        MemError::MisalignedAccess { .. } => FaultKind::MisalignedAccess,
        _ => FaultKind::BoundsViolation,
    }
}

/// Register holds a valid blinded capability.
fn holds_blinded_cap(c: &Cell) -> bool {
    matches!(c.value, Value::Cap(cap) if cap.is_blinded())
}

/// Authorises a `width`-byte access at `base + offset`.
fn resolve(env: &Env, mem_size: u64, base: &Cell, offset: u64, width: u64, kind: AccessKind) -> Result<u64, FaultKind> {
    let addr = match (env.mode, base.value) {
        (Mode::Purecap, Value::Data(_)) => return Err(FaultKind::TagViolation),
        (Mode::Purecap, Value::Cap(cap)) => {
            let addr = cap.addr.wrapping_add(offset);
            cap.check_access(addr, width, kind).map_err(access_fault)?;
            addr
        }
        (Mode::Bare, v) => {
            let addr = match v {
                Value::Data(w) => w,
                Value::Cap(c) => c.addr,
            }
            .wrapping_add(offset);
            if addr.checked_add(width).is_none_or(|end| end > mem_size) {
                return Err(FaultKind::BoundsViolation);
            }
            addr
        }
    };
    if addr % width != 0 {
        return Err(FaultKind::MisalignedAccess);
    }
    Ok(addr)
}

/// Computes the effect of `inst` at `pc`.
pub fn execute<M: MemView + ?Sized>(
    inst: &Instruction,
    pc: u64,
    regs: &[Cell; 32],
    mem: &M,
    env: &Env,
) -> Result<Effect, FaultKind> {
    use Instruction as I;
    let r = |reg: Reg| regs[reg.idx()];
    match *inst {
        I::Alu { op, rd, rs1, rs2 } => {
            let (a, b) = (r(rs1), r(rs2));
            let v = op.eval(a.word(), b.word());
            Ok(Effect::write(rd, Cell::with_taint(v, alu_taint(a.blinded, b.blinded))))
        }
        I::AluImm { op, rd, rs1, imm } => {
            let a = r(rs1);
            let v = op.alu().eval(a.word(), imm as u64);
            Ok(Effect::write(rd, Cell::with_taint(v, alu_taint(a.blinded, false))))
        }
        I::Li { rd, imm } => Ok(Effect::write(rd, Cell::data(imm as u64))),
        I::Mv { rd, rs } => Ok(Effect::write(rd, r(rs))),
        I::Ld { rd, cs, imm } => load_word(env, mem, rd, r(cs), None, imm as u64),
        I::Ldx { rd, rx, cs } => {
            let idx = r(rx);
            load_word(env, mem, rd, r(cs), Some(idx), idx.word().wrapping_mul(8))
        }
        I::Sd { rs, cs, imm } => store_word(env, mem, r(rs), r(cs), None, imm as u64),
        I::Sdx { rs, rx, cs } => {
            let idx = r(rx);
            store_word(env, mem, r(rs), r(cs), Some(idx), idx.word().wrapping_mul(8))
        }
        I::Csc { rs, cs, imm } => store_granule(env, mem, r(rs), cs, r(cs), imm as u64),
        I::Clc { rd, cs, imm } => load_granule(env, mem, rd, r(cs), imm as u64),
        I::CapMod { op, cd, cs, rs } => cap_modify(env, op, cd, r(cs), r(rs)),
        I::CGetAddr { rd, cs } => {
            let c = r(cs);
            Ok(Effect::write(rd, Cell::with_taint(c.word(), c.blinded)))
        }
        I::CGetTag { rd, cs } => {
            let tag = matches!(r(cs).value, Value::Cap(c) if c.valid);
            Ok(Effect::write(rd, Cell::data(u64::from(tag))))
        }
        I::Cllc { cd, sym } => {
            let value = match env.mode {
                Mode::Bare => Value::Data(sym.addr),
                Mode::Purecap => Value::Cap(symbol_cap(env, sym.kind, sym.addr, sym.length)?),
            };
            Ok(Effect::write(cd, Cell { value, blinded: false }))
        }
        I::Branch { cond, rs1, rs2, target } => {
            let (a, b) = (r(rs1), r(rs2));
            let blinded = alu_taint(a.blinded, b.blinded);
            if env.enforce {
                branch_rule(blinded, false, false)?;
            }
            let taken = cond.taken(a.word(), b.word());
            let target = env.pc_of(target);
            let next = if taken { Next::Jump { pc: target, pcc: None } } else { Next::Seq };
            Ok(Effect { next, branch: Some(BranchInfo::Cond { taken, target, blinded }), ..Effect::seq() })
        }
        I::J { target } => Ok(Effect { next: Next::Jump { pc: env.pc_of(target), pcc: None }, ..Effect::seq() }),
        I::Cjalr { cd, cs } => {
            let t = r(cs);
            let cap_blinded = holds_blinded_cap(&t);
            if env.enforce {
                branch_rule(false, t.blinded, cap_blinded)?;
            }
            let (target, new_pcc) = match (env.mode, t.value) {
                (Mode::Purecap, Value::Data(_)) => return Err(FaultKind::TagViolation),
                (Mode::Purecap, Value::Cap(c)) => {
                    c.check_access(c.addr, 4, AccessKind::Execute).map_err(access_fault)?;
                    (c.addr, c)
                }
                (Mode::Bare, v) => {
                    let target = match v {
                        Value::Data(w) => w,
                        Value::Cap(c) => c.addr,
                    };
                    (target, Capability { addr: target, ..env.code_root })
                }
            };
            if env.index_of(target).is_none() {
                return Err(FaultKind::IllegalInstruction);
            }
            let link = match env.mode {
                Mode::Purecap => Value::Cap(Capability { addr: pc + 4, ..env.pcc }),
                Mode::Bare => Value::Data(pc + 4),
            };
            Ok(Effect {
                write: Some((cd, Cell { value: link, blinded: false })),
                next: Next::Jump { pc: target, pcc: Some(new_pcc) },
                branch: Some(BranchInfo::Indirect { target, blinded: t.blinded || cap_blinded }),
                ..Effect::seq()
            })
        }
        I::Ecall => Ok(Effect { next: Next::Ecall, ..Effect::seq() }),
        I::Out { rs } => {
            let v = r(rs);
            if env.enforce && v.blinded {
                return Err(FaultKind::BlindedOutput);
            }
            Ok(Effect { next: Next::Out(v.word()), ..Effect::seq() })
        }
        I::Halt => Ok(Effect { next: Next::Halt, ..Effect::seq() }),
    }
}

fn symbol_cap(env: &Env, kind: SymbolKind, addr: u64, length: u64) -> Result<Capability, FaultKind> {
    match kind {
        SymbolKind::Code => env.code_root.with_address(addr).map_err(cap_fault),
        SymbolKind::Data => env.globals_root.set_bounds(addr, length).map_err(cap_fault),
        SymbolKind::Blinded => env
            .globals_root
            .set_bounds(addr, length)
            .and_then(|c| c.and_perms(Perms::LOAD | Perms::STORE))
            .map_err(cap_fault),
    }
}

fn load_word<M: MemView + ?Sized>(
    env: &Env,
    mem: &M,
    rd: Reg,
    base: Cell,
    index: Option<Cell>,
    offset: u64,
) -> Result<Effect, FaultKind> {
    let cap_blinded = holds_blinded_cap(&base);
    let addr_blinded = base.blinded || index.is_some_and(|i| i.blinded);
    let blinded = if env.enforce {
        load_rule(cap_blinded, addr_blinded)?
    } else {
        cap_blinded || addr_blinded
    };
    let addr = resolve(env, mem.size(), &base, offset, 8, AccessKind::Load)?;
    let value = mem.read_word(addr).map_err(mem_fault)?;
    // A spilled blinded register stays blinded even when read as plain data.
    let blinded = blinded || mem.is_brr(addr);
    Ok(Effect { access: Some(addr), ..Effect::write(rd, Cell::with_taint(value, blinded)) })
}

fn store_word<M: MemView + ?Sized>(
    env: &Env,
    mem: &M,
    data: Cell,
    base: Cell,
    index: Option<Cell>,
    offset: u64,
) -> Result<Effect, FaultKind> {
    let addr_blinded = base.blinded || index.is_some_and(|i| i.blinded);
    if env.enforce {
        store_rule(holds_blinded_cap(&base), addr_blinded, data.blinded)?;
    }
    let addr = resolve(env, mem.size(), &base, offset, 8, AccessKind::Store)?;
    Ok(Effect {
        store: Some(StoreOp::Word { addr, value: data.word() }),
        access: Some(addr),
        ..Effect::seq()
    })
}

fn word_image(v: u64) -> [u8; 16] {
    let mut img = [0u8; 16];
    img[..8].copy_from_slice(&v.to_le_bytes());
    img
}

fn store_granule<M: MemView + ?Sized>(
    env: &Env,
    mem: &M,
    src: Cell,
    cs: Reg,
    base: Cell,
    offset: u64,
) -> Result<Effect, FaultKind> {
    let target_blinded = holds_blinded_cap(&base);
    let src_cap = match src.value {
        Value::Cap(c) if c.valid => Some(c),
        _ => None,
    };
    let via_csp = cs == Reg::CSP;
    if env.enforce {
        if base.blinded {
            return Err(FaultKind::BlindedAddress);
        }
        if src_cap.is_some() && target_blinded {
            return Err(FaultKind::CapStoreToBlinded);
        }
        if src_cap.is_none() && src.blinded && !target_blinded && !via_csp {
            return Err(FaultKind::BlindedStore);
        }
    }
    let kind = if src_cap.is_some() { AccessKind::StoreCap } else { AccessKind::Store };
    let addr = resolve(env, mem.size(), &base, offset, 16, kind)?;
    let content = match (src_cap, src.value) {
        (Some(c), _) => Granule::Cap(c),
        (None, _) if src.blinded && !target_blinded && via_csp => Granule::Brr(src.word()),
        (None, Value::Cap(dead)) if !src.blinded => Granule::Cap(dead),
        (None, _) => Granule::Raw(word_image(src.word())),
    };
    Ok(Effect {
        store: Some(StoreOp::Granule { addr, content }),
        access: Some(addr),
        ..Effect::seq()
    })
}

fn load_granule<M: MemView + ?Sized>(
    env: &Env,
    mem: &M,
    rd: Reg,
    base: Cell,
    offset: u64,
) -> Result<Effect, FaultKind> {
    let cap_blinded = holds_blinded_cap(&base);
    let raw_blinded = if env.enforce {
        load_rule(cap_blinded, base.blinded)?
    } else {
        cap_blinded || base.blinded
    };
    let addr = resolve(env, mem.size(), &base, offset, 16, AccessKind::Load)?;
    let cell = match mem.read_granule(addr).map_err(mem_fault)? {
        Granule::Brr(payload) => Cell::with_taint(payload, true),
        Granule::Cap(c) => {
            let may_load_caps = match base.value {
                Value::Cap(b) => b.perms.contains(Perms::LOAD_CAP),
                Value::Data(_) => env.mode == Mode::Bare,
            };
            // Loading through a capability without LOAD_CAP strips the tag.
            Cell { value: Value::Cap(Capability { valid: may_load_caps, ..c }), blinded: false }
        }
        Granule::Raw(img) => {
            let lo = u64::from_le_bytes(img[..8].try_into().unwrap());
            Cell::with_taint(lo, raw_blinded)
        }
    };
    Ok(Effect { access: Some(addr), ..Effect::write(rd, cell) })
}

fn cap_modify(env: &Env, op: CapModOp, cd: Reg, src: Cell, operand: Cell) -> Result<Effect, FaultKind> {
    if env.enforce && (src.blinded || operand.blinded) {
        return Err(FaultKind::BlindedCapForgery);
    }
    let w = operand.word();
    let value = match (src.value, op) {
        (Value::Cap(c), CapModOp::AndPerm) => Value::Cap(c.and_perms(Perms::from_bits_truncate(w as u8)).map_err(cap_fault)?),
        (Value::Cap(c), CapModOp::SetBounds) => Value::Cap(c.set_bounds(c.addr, w).map_err(cap_fault)?),
        (Value::Cap(c), CapModOp::IncOffset) => Value::Cap(c.with_address(c.addr.wrapping_add(w)).map_err(cap_fault)?),
        (Value::Data(v), CapModOp::IncOffset) => {
            return Ok(Effect::write(cd, Cell::with_taint(v.wrapping_add(w), src.blinded || operand.blinded)));
        }
        (Value::Data(_), _) => return Err(FaultKind::TagViolation),
    };
    Ok(Effect::write(cd, Cell { value, blinded: false }))
}
