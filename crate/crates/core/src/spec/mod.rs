//! Speculative execution on top of the architectural machine.
//!
//! The machine always retires the correct path. At every conditional or
//! indirect branch the engine asks the predictor where execution would
//! have gone; on a misprediction it runs up to `window` instructions from
//! the predicted pc on a shadow copy of the registers and a write overlay
//! of memory, then throws the shadow away. Only the cache and the
//! predictor keep what the transient path did.
//!
//! A transient instruction that breaks a blindedness or capability rule is
//! blocked: it records a suppressed fault, has no observable effect, and
//! every value depending on it is poisoned so its dependents are blocked
//! too.

pub mod cache;
pub mod predictor;

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::machine::exec::{self, BranchInfo, Env, MemView, Next, StoreOp};
use crate::machine::isa::{Instruction, Reg};
use crate::machine::rules::FaultKind;
use crate::machine::{Cell, Machine, Mode, RunOutcome, StepOutcome};
use crate::memory::{Granule, MemError, Memory, GRANULE};
use crate::trace::{line_of, FaultRecord, Phase, PredUpdate, TraceEvent, TraceSink};

pub use cache::Cache;
pub use predictor::Predictor;

pub const DEFAULT_WINDOW: usize = 16;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SpecStats {
    pub branches: u64,
    pub mispredictions: u64,
    pub transient: u64,
    pub suppressed: u64,
}

#[derive(Debug, Clone)]
pub struct SpecEngine {
    pub predictor: Predictor,
    pub cache: Cache,
    pub window: usize,
    pub stats: SpecStats,
}

impl Default for SpecEngine {
    fn default() -> Self {
        SpecEngine::new(DEFAULT_WINDOW)
    }
}

/// Transient stores land here instead of in memory.
struct Overlay<'a> {
    base: &'a Memory,
    granules: BTreeMap<u64, ([u8; 16], bool)>,
}

impl Overlay<'_> {
    fn image(&self, g: u64) -> Result<([u8; 16], bool), MemError> {
        match self.granules.get(&g) {
            Some(v) => Ok(*v),
            None => self.base.raw_granule(g),
        }
    }

    fn store(&mut self, op: StoreOp) -> Result<(), MemError> {
        match op {
            StoreOp::Granule { addr, content } => {
                self.granules.insert(addr, content.encode()?);
            }
            StoreOp::Word { addr, value } => {
                let g = addr & !(GRANULE - 1);
                let (mut img, _) = self.image(g)?;
                if self.is_brr(g) {
                    img = [0; 16];
                }
                let off = (addr - g) as usize;
                img[off..off + 8].copy_from_slice(&value.to_le_bytes());
                self.granules.insert(g, (img, false));
            }
        }
        Ok(())
    }
}

impl MemView for Overlay<'_> {
    fn size(&self) -> u64 {
        self.base.size()
    }

    fn read_word(&self, addr: u64) -> Result<u64, MemError> {
        let g = addr & !(GRANULE - 1);
        if !self.granules.contains_key(&g) {
            return self.base.read_data(addr, 8);
        }
        let (img, _) = self.image(g)?;
        let off = (addr - g) as usize;
        Ok(u64::from_le_bytes(img[off..off + 8].try_into().unwrap()))
    }

    fn is_brr(&self, addr: u64) -> bool {
        let g = addr & !(GRANULE - 1);
        match self.granules.get(&g) {
            Some(&(img, tag)) => matches!(Granule::decode(img, tag), Granule::Brr(_)),
            None => self.base.is_brr(addr),
        }
    }

    fn read_granule(&self, addr16: u64) -> Result<Granule, MemError> {
        match self.granules.get(&addr16) {
            Some(&(img, tag)) => Ok(Granule::decode(img, tag)),
            None => self.base.read_granule(addr16),
        }
    }
}

impl SpecEngine {
    pub fn new(window: usize) -> SpecEngine {
        SpecEngine { predictor: Predictor::default(), cache: Cache::default(), window, stats: SpecStats::default() }
    }

    /// One architectural step, preceded by a transient window when the
    /// step is a mispredicted branch.
    pub fn step(&mut self, m: &mut Machine, sink: &mut impl TraceSink) -> StepOutcome {
        let step = m.counters().retired;
        let pc = m.pc();
        let inst = m.current().map(|(_, i)| i);
        let predicted = match inst {
            Some(Instruction::Branch { target, .. }) if !m.is_stopped() => {
                let taken = self.predictor.predict_taken(pc);
                Some(if taken { m.env().pc_of(target) } else { pc + 4 })
            }
            Some(Instruction::Cjalr { .. }) if !m.is_stopped() => {
                Some(self.predictor.predict_target(pc).unwrap_or(pc + 4))
            }
            _ => None,
        };
        let info = m.step();
        let Some(mut ev) = info.event(step) else { return info.outcome };
        if let Some(addr) = info.access {
            self.cache.access(addr);
        }
        if let (Some(branch), Some(predicted)) = (info.branch, predicted) {
            self.stats.branches += 1;
            let actual = m.pc();
            if predicted != actual {
                self.stats.mispredictions += 1;
                self.transient(m, predicted, step, sink);
            }
            let zero = m.enforcing();
            ev.pred = Some(match branch {
                BranchInfo::Cond { taken, blinded, .. } => self.predictor.update_cond(pc, taken, blinded && zero),
                BranchInfo::Indirect { target, blinded } => self.predictor.update_target(pc, target, blinded && zero),
            });
        }
        sink.event(&ev);
        info.outcome
    }

    pub fn run(&mut self, m: &mut Machine, max_steps: u64, sink: &mut impl TraceSink) -> RunOutcome {
        for _ in 0..max_steps {
            match self.step(m, sink) {
                StepOutcome::Continue => {}
                StepOutcome::Halted => return RunOutcome::Halted,
                StepOutcome::Fault(f) => return RunOutcome::Fault(f),
            }
        }
        match (m.is_halted(), m.fault()) {
            (_, Some(f)) => RunOutcome::Fault(f),
            (true, _) => RunOutcome::Halted,
            _ => RunOutcome::StepLimitExceeded,
        }
    }

    fn transient(&mut self, m: &Machine, start: u64, step: u64, sink: &mut impl TraceSink) {
        let mut regs = *m.regs();
        let mut poison = [false; 32];
        let mut mem = Overlay { base: m.mem(), granules: BTreeMap::new() };
        let mut poisoned_granules: Vec<u64> = Vec::new();
        let base_env = m.env();
        let mut pcc = base_env.pcc;
        let mut pc = start;
        for _ in 0..self.window {
            let env = Env { pcc, ..base_env };
            let Some(index) = env.index_of(pc) else { break };
            if m.mode() == Mode::Purecap && pcc.check_access(pc, 4, crate::cap::AccessKind::Execute).is_err() {
                break;
            }
            let inst = m.program().code[index];
            self.stats.transient += 1;
            let mut ev = TraceEvent {
                step,
                phase: Phase::Transient,
                pc,
                opcode: inst.opcode(),
                mem_line: None,
                pred: None,
                fault: None,
            };
            let (srcs, _) = inst.sources();
            let tainted = srcs.iter().flatten().any(|r| poison[r.idx()]);
            let mut next = pc + 4;
            let mut stop = false;
            let dest = inst.dest();
            match inst {
                Instruction::Branch { cond, rs1, rs2, target } => {
                    let taken_pred = self.predictor.predict_taken(pc);
                    if taken_pred {
                        next = env.pc_of(target);
                    }
                    if !tainted {
                        let (a, b) = (regs[rs1.idx()], regs[rs2.idx()]);
                        let blinded = a.blinded || b.blinded;
                        if blinded && env.enforce {
                            ev.fault = Some(self.suppress(FaultKind::BlindedBranchCondition));
                        }
                        let taken = cond.taken(a.word(), b.word());
                        ev.pred = Some(self.predictor.update_cond(pc, taken, blinded && env.enforce));
                    }
                }
                Instruction::Ecall | Instruction::Out { .. } | Instruction::Halt => stop = true,
                _ if tainted => {
                    if let Some(d) = dest {
                        poison[d.idx()] = true;
                    }
                    if let Instruction::Cjalr { .. } = inst {
                        stop = true;
                    }
                }
                _ => match exec::execute(&inst, pc, &regs, &mem, &env) {
                    Err(kind) => {
                        ev.fault = Some(self.suppress(kind));
                        if let Some(d) = dest {
                            poison[d.idx()] = true;
                        }
                        if let Instruction::Cjalr { .. } = inst {
                            stop = true;
                        }
                    }
                    Ok(effect) => {
                        if let Some(addr) = effect.access {
                            let g = addr & !(GRANULE - 1);
                            if effect.store.is_none() {
                                self.cache.access(addr);
                                ev.mem_line = Some(line_of(addr));
                            }
                            if effect.store.is_none() && poisoned_granules.contains(&g) {
                                if let Some(d) = dest {
                                    poison[d.idx()] = true;
                                }
                            }
                        }
                        if let Some(op) = effect.store {
                            if mem.store(op).is_err() {
                                break;
                            }
                        }
                        if let Some((rd, cell)) = effect.write {
                            if rd != Reg::ZERO {
                                regs[rd.idx()] = cell;
                                poison[rd.idx()] = false;
                            }
                        }
                        match (effect.next, effect.branch) {
                            (Next::Jump { .. }, Some(BranchInfo::Indirect { target, blinded })) => {
                                let blinded = blinded && env.enforce;
                                ev.pred = Some(self.predictor.update_target(pc, target, blinded));
                                next = self.predictor.predict_target(pc).unwrap_or(pc + 4);
                                if let Next::Jump { pcc: Some(c), .. } = effect.next {
                                    pcc = c;
                                }
                            }
                            (Next::Jump { pc: t, .. }, _) => next = t,
                            _ => {}
                        }
                    }
                },
            }
            // A blocked store leaves its target unknown to later loads.
            if tainted && !stop {
                if let Instruction::Sd { cs, imm, .. } | Instruction::Csc { cs, imm, .. } = inst {
                    if !poison[cs.idx()] {
                        poisoned_granules.push(regs[cs.idx()].word().wrapping_add(imm as u64) & !(GRANULE - 1));
                    }
                }
                if let Instruction::Sdx { rx, cs, .. } = inst {
                    if !poison[cs.idx()] && !poison[rx.idx()] {
                        let a = regs[cs.idx()].word().wrapping_add(regs[rx.idx()].word().wrapping_mul(8));
                        poisoned_granules.push(a & !(GRANULE - 1));
                    }
                }
            }
            pcc.addr = next;
            sink.event(&ev);
            if stop {
                break;
            }
            pc = next;
        }
    }

    fn suppress(&mut self, kind: FaultKind) -> FaultRecord {
        self.stats.suppressed += 1;
        FaultRecord { kind, suppressed: true }
    }
}

/// Runs `m` under a fresh speculative engine, collecting the trace.
pub fn speculative_run(m: &mut Machine, window: usize, max_steps: u64) -> (RunOutcome, Vec<TraceEvent>, SpecEngine) {
    let mut engine = SpecEngine::new(window);
    let mut trace = Vec::new();
    let outcome = engine.run(m, max_steps, &mut trace);
    (outcome, trace, engine)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NiVerdict {
    Identical,
    /// First event index at which the projections differ.
    Diverged { index: usize, a: Option<TraceEvent>, b: Option<TraceEvent> },
}

impl NiVerdict {
    pub fn is_identical(&self) -> bool {
        *self == NiVerdict::Identical
    }
}

/// Compares the observable projection of two traces.
pub fn ni_compare(a: &[TraceEvent], b: &[TraceEvent]) -> NiVerdict {
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        if x.projection() != y.projection() {
            return NiVerdict::Diverged { index: i, a: Some(*x), b: Some(*y) };
        }
    }
    if a.len() != b.len() {
        let i = a.len().min(b.len());
        return NiVerdict::Diverged { index: i, a: a.get(i).copied(), b: b.get(i).copied() };
    }
    NiVerdict::Identical
}

/// Predictor updates as seen in a trace.
pub fn pred_updates(trace: &[TraceEvent]) -> impl Iterator<Item = PredUpdate> + '_ {
    trace.iter().filter_map(|e| e.pred)
}

/// Registers, memory, pc and output agree.
pub fn same_arch_state(a: &Machine, b: &Machine) -> bool {
    let regs = |m: &Machine| -> [Cell; 32] { *m.regs() };
    regs(a) == regs(b) && a.mem().bytes() == b.mem().bytes() && a.pc() == b.pc() && a.output() == b.output()
}
