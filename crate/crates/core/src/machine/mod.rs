//! The capability machine: registers with blindedness bits, a program
//! counter capability, tagged memory and an allocator reachable through
//! `ECALL`.
//!
//! Runtime services (function code in `x10`, arguments in `x11..x13`,
//! results in `x10..x11`):
//!
//! | code | service |
//! |---|---|
//! | 1 | `malloc(x11 bytes)` |
//! | 2 | `bmalloc(x11 bytes)`, blinded capability |
//! | 3 | `dealloc(x11 cap)` |
//! | 4 | `result_alloc(x11 bytes)`: `x10` blinded write cap, `x11` read cap |
//! | 5 | next public input into `x10` |
//! | 6 | `input_blinded(x11 cap, x12 count)`: next `count` secrets stored as words |
//! | 7 | next secret input into `x10`, blinded |

pub mod asm;
pub mod exec;
pub mod isa;
pub mod rules;

use alloc::collections::VecDeque;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

use crate::cap::{AccessKind, Capability, Perms};
use crate::heap::{Heap, RegionKind};
use crate::memory::{MemError, Memory, DEFAULT_SIZE};
use crate::trace::{line_of, FaultRecord, Phase, TraceEvent, TraceSink};

use self::asm::Program;
use self::exec::{BranchInfo, Effect, Env, Next, StoreOp};
use self::isa::{Instruction, Opcode, Reg};
use self::rules::FaultKind;

/// Contents of a register.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Value {
    Data(u64),
    Cap(Capability),
}

/// A register: a value plus its blindedness bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub value: Value,
    pub blinded: bool,
}

impl Cell {
    pub const ZERO: Cell = Cell { value: Value::Data(0), blinded: false };

    pub fn data(v: u64) -> Cell {
        Cell { value: Value::Data(v), blinded: false }
    }

    pub fn with_taint(v: u64, blinded: bool) -> Cell {
        Cell { value: Value::Data(v), blinded }
    }

    pub fn cap(c: Capability) -> Cell {
        Cell { value: Value::Cap(c), blinded: false }
    }

    /// The integer view: data words as-is, capabilities by address.
    pub fn word(&self) -> u64 {
        match self.value {
            Value::Data(v) => v,
            Value::Cap(c) => c.addr,
        }
    }

    pub fn valid_cap(&self) -> Option<Capability> {
        match self.value {
            Value::Cap(c) if c.valid => Some(c),
            _ => None,
        }
    }
}

impl Default for Cell {
    fn default() -> Cell {
        Cell::ZERO
    }
}

/// `Bare` treats address registers as raw integers and skips capability
/// checks; blindedness rules apply in both modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Bare,
    Purecap,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Bare => "bare",
            Mode::Purecap => "purecap",
        })
    }
}

impl core::str::FromStr for Mode {
    type Err = ();
    fn from_str(s: &str) -> Result<Mode, ()> {
        match s {
            "bare" => Ok(Mode::Bare),
            "purecap" => Ok(Mode::Purecap),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MachineConfig {
    pub mem_size: u64,
    pub mode: Mode,
    /// Blindedness fault rules. Only turned off to demonstrate leaks.
    pub enforce: bool,
    /// Heap `(base, size)`; by default the space between the program and
    /// the stack.
    pub heap: Option<(u64, u64)>,
    pub stack_size: Option<u64>,
}

impl Default for MachineConfig {
    fn default() -> Self {
        MachineConfig { mem_size: DEFAULT_SIZE, mode: Mode::Purecap, enforce: true, heap: None, stack_size: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LoadError {
    #[error("memory: {0}")]
    Memory(#[from] MemError),
    #[error("program does not fit in memory")]
    TooLarge,
    #[error("heap range invalid or overlaps program/stack")]
    BadHeap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Fault {
    pub kind: FaultKind,
    pub pc: u64,
    pub index: usize,
}

impl fmt::Display for Fault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at pc {:#x} (instruction {})", self.kind, self.pc, self.index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Continue,
    Halted,
    Fault(Fault),
}

/// What one architectural step did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepInfo {
    pub pc: u64,
    pub index: usize,
    pub opcode: Option<Opcode>,
    pub access: Option<u64>,
    pub branch: Option<BranchInfo>,
    pub outcome: StepOutcome,
}

impl StepInfo {
    pub fn event(&self, step: u64) -> Option<TraceEvent> {
        Some(TraceEvent {
            step,
            phase: Phase::Arch,
            pc: self.pc,
            opcode: self.opcode?,
            mem_line: self.access.map(line_of),
            pred: None,
            fault: match self.outcome {
                StepOutcome::Fault(f) => Some(FaultRecord { kind: f.kind, suppressed: false }),
                _ => None,
            },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunOutcome {
    Halted,
    Fault(Fault),
    StepLimitExceeded,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    pub retired: u64,
    pub mem_accesses: u64,
}

#[derive(Debug, Clone)]
pub struct Machine {
    regs: [Cell; 32],
    pcc: Capability,
    mem: Memory,
    heap: Heap,
    program: Arc<Program>,
    mode: Mode,
    enforce: bool,
    code_root: Capability,
    globals_root: Capability,
    stack: (u64, u64),
    halted: bool,
    fault: Option<Fault>,
    counters: Counters,
    public_in: VecDeque<u64>,
    secret_in: VecDeque<u64>,
    output: Vec<u64>,
}

fn align_up(v: u64, a: u64) -> u64 {
    v.div_ceil(a) * a
}

impl Machine {
    /// Loads `program` into a fresh machine.
    pub fn new(program: Arc<Program>, config: MachineConfig) -> Result<Machine, LoadError> {
        let mut mem = Memory::new(config.mem_size)?;
        let size = mem.size();
        let layout = program.layout;
        let stack_size = config.stack_size.unwrap_or((size / 4).min(1 << 20));
        let stack_base = size.checked_sub(stack_size).ok_or(LoadError::TooLarge)?;
        if layout.end() > stack_base || !stack_size.is_multiple_of(16) {
            return Err(LoadError::TooLarge);
        }
        let (heap_base, heap_size) = match config.heap {
            Some((b, s)) => {
                let ok = b % 16 == 0 && s > 0 && b >= layout.end() && b.checked_add(s).is_some_and(|e| e <= stack_base);
                if !ok {
                    return Err(LoadError::BadHeap);
                }
                (b, s)
            }
            None => {
                let b = align_up(layout.end(), 4096);
                (b, stack_base.checked_sub(b).filter(|&s| s > 0).ok_or(LoadError::TooLarge)?)
            }
        };
        for (i, chunk) in program.data.chunks(8).enumerate() {
            let mut w = [0u8; 8];
            w[..chunk.len()].copy_from_slice(chunk);
            mem.write_data(layout.data_base + 8 * i as u64, 8, u64::from_le_bytes(w))?;
        }
        for (i, chunk) in program.blinded.chunks(8).enumerate() {
            let mut w = [0u8; 8];
            w[..chunk.len()].copy_from_slice(chunk);
            mem.write_data(layout.blinded_base + 8 * i as u64, 8, u64::from_le_bytes(w))?;
        }
        let mut heap = Heap::new(heap_base, heap_size);
        if layout.blinded_len > 0 {
            heap.register_static(layout.blinded_base, layout.blinded_len, RegionKind::Blinded);
        }
        let code_len_bytes = (4 * layout.code_len as u64).max(4);
        let code_root = Capability::root(layout.code_base, code_len_bytes, Perms::EXECUTE | Perms::LOAD)
            .map_err(|_| LoadError::TooLarge)?;
        let globals_len = (layout.end() - layout.data_base).max(16);
        let globals_root = Capability::root(
            layout.data_base,
            globals_len,
            Perms::LOAD | Perms::STORE | Perms::LOAD_CAP | Perms::STORE_CAP,
        )
        .map_err(|_| LoadError::TooLarge)?;
        let mut regs = [Cell::ZERO; 32];
        let stack_root = Capability::root(
            stack_base,
            stack_size,
            Perms::LOAD | Perms::STORE | Perms::LOAD_CAP | Perms::STORE_CAP,
        )
        .map_err(|_| LoadError::TooLarge)?;
        regs[Reg::CSP.idx()] = match config.mode {
            Mode::Purecap => Cell::cap(Capability { addr: size, ..stack_root }),
            Mode::Bare => Cell::data(size),
        };
        Ok(Machine {
            regs,
            pcc: code_root,
            mem,
            heap,
            program,
            mode: config.mode,
            enforce: config.enforce,
            code_root,
            globals_root,
            stack: (stack_base, stack_size),
            halted: false,
            fault: None,
            counters: Counters::default(),
            public_in: VecDeque::new(),
            secret_in: VecDeque::new(),
            output: Vec::new(),
        })
    }

    pub fn from_program(program: Program, config: MachineConfig) -> Result<Machine, LoadError> {
        Machine::new(Arc::new(program), config)
    }

    pub fn push_public(&mut self, values: impl IntoIterator<Item = u64>) {
        self.public_in.extend(values);
    }

    pub fn push_secret(&mut self, values: impl IntoIterator<Item = u64>) {
        self.secret_in.extend(values);
    }

    pub fn regs(&self) -> &[Cell; 32] {
        &self.regs
    }

    pub fn reg(&self, r: Reg) -> Cell {
        self.regs[r.idx()]
    }

    /// Test hook; writes to `x0` are dropped.
    pub fn set_reg(&mut self, r: Reg, cell: Cell) {
        if r != Reg::ZERO {
            self.regs[r.idx()] = cell;
        }
    }

    pub fn mem(&self) -> &Memory {
        &self.mem
    }

    pub fn mem_mut(&mut self) -> &mut Memory {
        &mut self.mem
    }

    pub fn heap(&self) -> &Heap {
        &self.heap
    }

    pub fn program(&self) -> &Arc<Program> {
        &self.program
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn enforcing(&self) -> bool {
        self.enforce
    }

    pub fn pc(&self) -> u64 {
        self.pcc.addr
    }

    pub fn pcc(&self) -> Capability {
        self.pcc
    }

    pub fn stack_range(&self) -> (u64, u64) {
        self.stack
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    pub fn zeroized_bytes(&self) -> u64 {
        self.mem.zeroized_bytes()
    }

    pub fn output(&self) -> &[u64] {
        &self.output
    }

    pub fn fault(&self) -> Option<Fault> {
        self.fault
    }

    pub fn is_halted(&self) -> bool {
        self.halted
    }

    pub fn is_stopped(&self) -> bool {
        self.halted || self.fault.is_some()
    }

    pub fn env(&self) -> Env {
        Env {
            mode: self.mode,
            enforce: self.enforce,
            code_base: self.program.layout.code_base,
            code_len: self.program.code.len(),
            pcc: self.pcc,
            code_root: self.code_root,
            globals_root: self.globals_root,
        }
    }

    /// The instruction at the current pc, if there is one.
    pub fn current(&self) -> Option<(usize, Instruction)> {
        let idx = self.env().index_of(self.pc())?;
        Some((idx, self.program.code[idx]))
    }

    /// No register holds a valid capability with its blindedness bit set.
    pub fn register_invariant_holds(&self) -> bool {
        self.regs.iter().all(|c| !(c.blinded && c.valid_cap().is_some()))
    }

    fn stop(&mut self, kind: FaultKind, pc: u64, index: usize) -> StepOutcome {
        let f = Fault { kind, pc, index };
        self.fault = Some(f);
        StepOutcome::Fault(f)
    }

    /// Executes one instruction. A stopped machine stays stopped.
    pub fn step(&mut self) -> StepInfo {
        let pc = self.pc();
        let mut info = StepInfo { pc, index: 0, opcode: None, access: None, branch: None, outcome: StepOutcome::Halted };
        if let Some(f) = self.fault {
            info.outcome = StepOutcome::Fault(f);
            return info;
        }
        if self.halted {
            return info;
        }
        let env = self.env();
        let Some(index) = env.index_of(pc) else {
            info.outcome = self.stop(FaultKind::IllegalInstruction, pc, 0);
            return info;
        };
        info.index = index;
        let inst = self.program.code[index];
        info.opcode = Some(inst.opcode());
        if self.mode == Mode::Purecap {
            if let Err(e) = self.pcc.check_access(pc, 4, AccessKind::Execute) {
                let kind = match e {
                    crate::cap::AccessFault::Tag => FaultKind::TagViolation,
                    crate::cap::AccessFault::Bounds => FaultKind::BoundsViolation,
                    crate::cap::AccessFault::Permission => FaultKind::PermissionViolation,
                };
                info.outcome = self.stop(kind, pc, index);
                return info;
            }
        }
        let effect = match exec::execute(&inst, pc, &self.regs, &self.mem, &env) {
            Ok(e) => e,
            Err(kind) => {
                info.outcome = self.stop(kind, pc, index);
                return info;
            }
        };
        info.access = effect.access;
        info.branch = effect.branch;
        info.outcome = match self.apply(effect, pc, index) {
            Ok(outcome) => outcome,
            Err(kind) => self.stop(kind, pc, index),
        };
        info
    }

    fn apply(&mut self, effect: Effect, pc: u64, _index: usize) -> Result<StepOutcome, FaultKind> {
        // Runtime services run before any state changes so that a failing
        // call leaves the machine as it was.
        if effect.next == Next::Ecall {
            self.ecall()?;
        }
        match effect.store {
            Some(StoreOp::Word { addr, value }) => self.mem.write_data(addr, 8, value),
            Some(StoreOp::Granule { addr, content }) => self.mem.write_granule(addr, content),
            None => Ok(()),
        }
        .map_err(|_| FaultKind::BoundsViolation)?;
        if effect.access.is_some() {
            self.counters.mem_accesses += 1;
        }
        if let Some((rd, cell)) = effect.write {
            self.set_reg(rd, cell);
        }
        self.counters.retired += 1;
        let mut outcome = StepOutcome::Continue;
        match effect.next {
            Next::Seq | Next::Ecall => self.pcc.addr = pc + 4,
            Next::Out(v) => {
                self.output.push(v);
                self.pcc.addr = pc + 4;
            }
            Next::Jump { pc: target, pcc } => {
                if let Some(c) = pcc {
                    self.pcc = c;
                }
                self.pcc.addr = target;
            }
            Next::Halt => {
                self.halted = true;
                outcome = StepOutcome::Halted;
            }
        }
        Ok(outcome)
    }

    fn ecall(&mut self) -> Result<(), FaultKind> {
        let code = self.regs[Reg::A0.idx()];
        let a1 = self.regs[Reg::A1.idx()];
        let a2 = self.regs[Reg::A2.idx()];
        let used: &[Cell] = match code.word() {
            1..=4 => &[code, a1],
            6 => &[code, a1, a2],
            _ => &[code],
        };
        if self.enforce && used.iter().any(|c| c.blinded) {
            return Err(FaultKind::BlindedOutput);
        }
        let err = |_| FaultKind::SyscallError;
        match code.word() {
            1 => {
                let c = self.heap.malloc(a1.word()).map_err(err)?;
                self.regs[10] = self.handle(c);
            }
            2 => {
                let c = self.heap.bmalloc(&mut self.mem, a1.word()).map_err(err)?;
                self.regs[10] = self.handle(c);
            }
            3 => {
                let cap = match (self.mode, a1.value) {
                    (Mode::Purecap, Value::Cap(c)) => c,
                    (Mode::Purecap, Value::Data(_)) => return Err(FaultKind::SyscallError),
                    (Mode::Bare, _) => {
                        let r = self.heap.live_at(a1.word()).ok_or(FaultKind::SyscallError)?;
                        Capability::root(r.base, r.length, Perms::LOAD).map_err(|_| FaultKind::SyscallError)?
                    }
                };
                self.heap.dealloc(&mut self.mem, &mut self.regs, &cap).map_err(err)?;
                self.regs[10] = Cell::ZERO;
            }
            4 => {
                let pair = self.heap.result_alloc(&mut self.mem, a1.word()).map_err(err)?;
                self.regs[10] = self.handle(pair.write);
                self.regs[11] = self.handle(pair.read);
            }
            5 => {
                let v = self.public_in.pop_front().ok_or(FaultKind::SyscallError)?;
                self.regs[10] = Cell::data(v);
            }
            6 => {
                let n = a2.word();
                if n > self.secret_in.len() as u64 {
                    return Err(FaultKind::SyscallError);
                }
                let bytes = n.checked_mul(8).ok_or(FaultKind::SyscallError)?;
                let base = match (self.mode, a1.value) {
                    (Mode::Purecap, Value::Cap(c)) => {
                        c.check_access(c.addr, bytes, AccessKind::Store).map_err(|_| FaultKind::SyscallError)?;
                        c.addr
                    }
                    (Mode::Purecap, Value::Data(_)) => return Err(FaultKind::SyscallError),
                    (Mode::Bare, _) => a1.word(),
                };
                if base % 8 != 0 || base.checked_add(bytes).is_none_or(|e| e > self.mem.size()) {
                    return Err(FaultKind::SyscallError);
                }
                for i in 0..n {
                    let v = self.secret_in.pop_front().expect("length checked");
                    self.mem.write_data(base + 8 * i, 8, v).map_err(|_| FaultKind::SyscallError)?;
                }
                self.counters.mem_accesses += n;
            }
            7 => {
                let v = self.secret_in.pop_front().ok_or(FaultKind::SyscallError)?;
                self.regs[10] = Cell::with_taint(v, true);
            }
            _ => return Err(FaultKind::SyscallError),
        }
        Ok(())
    }

    /// How an allocation is handed to the program in this mode.
    fn handle(&self, c: Capability) -> Cell {
        match self.mode {
            Mode::Purecap => Cell::cap(c),
            Mode::Bare => Cell::data(c.base),
        }
    }

    /// Runs until halt, fault or `max_steps` further steps.
    pub fn run(&mut self, max_steps: u64, sink: &mut impl TraceSink) -> RunOutcome {
        for _ in 0..max_steps {
            let step = self.counters.retired;
            let info = self.step();
            if let Some(ev) = info.event(step) {
                sink.event(&ev);
            }
            match info.outcome {
                StepOutcome::Continue => {}
                StepOutcome::Halted => return RunOutcome::Halted,
                StepOutcome::Fault(f) => return RunOutcome::Fault(f),
            }
        }
        match (self.halted, self.fault) {
            (_, Some(f)) => RunOutcome::Fault(f),
            (true, _) => RunOutcome::Halted,
            _ => RunOutcome::StepLimitExceeded,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::asm::assemble;
    use super::*;
    use crate::trace::NoTrace;

    fn boot(src: &str, mode: Mode) -> Machine {
        let p = assemble(src).unwrap();
        Machine::from_program(p, MachineConfig { mode, ..MachineConfig::default() }).unwrap()
    }

    #[test]
    fn halt_first() {
        let mut m = boot("HALT", Mode::Purecap);
        let mut trace = Vec::new();
        assert_eq!(m.run(10, &mut trace), RunOutcome::Halted);
        assert_eq!(trace.len(), 1);
        assert_eq!(trace[0].step, 0);
        assert_eq!(m.counters().retired, 1);
    }

    #[test]
    fn x0_is_hardwired() {
        let mut m = boot("LI x0, 5\nADDI x5, x0, 1\nHALT", Mode::Purecap);
        m.run(10, &mut NoTrace);
        assert_eq!(m.reg(Reg(0)), Cell::ZERO);
        assert_eq!(m.reg(Reg(5)), Cell::data(1));
    }

    #[test]
    fn secret_taints_alu() {
        let mut m = boot("LI x10, 7\nECALL\nLI x6, 3\nADD x7, x10, x6\nOUT x6\nHALT", Mode::Purecap);
        m.push_secret([11]);
        assert_eq!(m.run(100, &mut NoTrace), RunOutcome::Halted);
        assert_eq!(m.reg(Reg(7)), Cell::with_taint(14, true));
        assert_eq!(m.output(), &[3]);
    }

    #[test]
    fn blinded_branch_faults() {
        let mut m = boot("LI x10, 7\nECALL\nBEQ x10, x0, end\nend: HALT", Mode::Purecap);
        m.push_secret([0]);
        let out = m.run(100, &mut NoTrace);
        assert!(matches!(out, RunOutcome::Fault(f) if f.kind == FaultKind::BlindedBranchCondition && f.index == 2));
        // Frozen.
        let pc = m.pc();
        m.step();
        assert_eq!(m.pc(), pc);
    }

    #[test]
    fn step_limit() {
        let mut m = boot("loop: J loop", Mode::Purecap);
        assert_eq!(m.run(10, &mut NoTrace), RunOutcome::StepLimitExceeded);
        assert_eq!(m.counters().retired, 10);
    }

    #[test]
    fn result_buffer_declassifies() {
        let src = "
            LI x10, 4
            LI x11, 8
            ECALL
            MV x20, x10
            MV x21, x11
            LI x10, 7
            ECALL
            SD x10, 0(x20)
            LD x5, 0(x21)
            OUT x5
            HALT
        ";
        let mut m = boot(src, Mode::Purecap);
        m.push_secret([42]);
        assert_eq!(m.run(100, &mut NoTrace), RunOutcome::Halted);
        assert_eq!(m.output(), &[42]);
    }

    #[test]
    fn spill_and_restore_through_csp() {
        let src = "
            LI x3, -16
            CINCOFFSET x2, x2, x3
            LI x10, 7
            ECALL
            CSC x10, 0(x2)
            LI x10, 0
            CLC x6, 0(x2)
            HALT
        ";
        let mut m = boot(src, Mode::Purecap);
        m.push_secret([99]);
        assert_eq!(m.run(100, &mut NoTrace), RunOutcome::Halted);
        assert_eq!(m.reg(Reg(6)), Cell::with_taint(99, true));
        let sp = m.reg(Reg::CSP).word();
        assert!(m.mem().is_brr(sp));
    }

    #[test]
    fn bare_mode_uses_raw_addresses() {
        let src = "
            CLLC x5, arr
            LD x6, 8(x5)
            OUT x6
            HALT
            .data
            arr: .word 1, 2
        ";
        let mut m = boot(src, Mode::Bare);
        assert_eq!(m.run(100, &mut NoTrace), RunOutcome::Halted);
        assert_eq!(m.output(), &[2]);
        let mut p = boot(src, Mode::Purecap);
        assert_eq!(p.run(100, &mut NoTrace), RunOutcome::Halted);
        assert_eq!(p.output(), &[2]);
    }

    #[test]
    fn falling_off_the_end() {
        let mut m = boot("LI x5, 1", Mode::Purecap);
        assert!(matches!(m.run(10, &mut NoTrace), RunOutcome::Fault(f) if f.kind == FaultKind::IllegalInstruction));
    }

    #[test]
    fn blinded_section_is_registered() {
        let mut m = boot("CLLC x5, s\nLD x6, 0(x5)\nHALT\n.blinded\ns: .word 3", Mode::Purecap);
        assert_eq!(m.heap().live(RegionKind::Blinded).count(), 1);
        m.run(10, &mut NoTrace);
        assert_eq!(m.reg(Reg(6)), Cell::with_taint(3, true));
    }
}
