//! Observable trace records.
//!
//! A [`TraceEvent`] carries only what a microarchitectural observer could
//! see: where execution is, which cache line a memory access touched, how
//! predictor state changed and whether a fault fired. Register values are
//! never recorded.

use alloc::vec::Vec;

use crate::machine::isa::Opcode;
use crate::machine::rules::FaultKind;

pub const CACHE_LINE: u64 = 64;
pub const CACHE_LINES: u64 = 256;

/// Direct-mapped line index of an address.
pub fn line_of(addr: u64) -> u16 {
    ((addr / CACHE_LINE) % CACHE_LINES) as u16
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Arch,
    Transient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PredTable {
    Pht,
    Btb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PredUpdate {
    pub table: PredTable,
    pub index: u16,
    pub old: u64,
    pub new: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FaultRecord {
    pub kind: FaultKind,
    pub suppressed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TraceEvent {
    /// Architectural instructions retired before this event.
    pub step: u64,
    pub phase: Phase,
    pub pc: u64,
    pub opcode: Opcode,
    pub mem_line: Option<u16>,
    pub pred: Option<PredUpdate>,
    pub fault: Option<FaultRecord>,
}

impl TraceEvent {
    /// The part of an event compared for non-interference. `step` is
    /// excluded since it only restates position.
    pub fn projection(&self) -> (Phase, u64, Opcode, Option<u16>, Option<PredUpdate>, Option<FaultKind>) {
        (
            self.phase,
            self.pc,
            self.opcode,
            self.mem_line,
            self.pred,
            self.fault.map(|f| f.kind),
        )
    }
}

/// Receiver for trace events.
pub trait TraceSink {
    fn event(&mut self, ev: &TraceEvent);
}

impl TraceSink for Vec<TraceEvent> {
    fn event(&mut self, ev: &TraceEvent) {
        self.push(*ev);
    }
}

/// Discards events.
pub struct NoTrace;

impl TraceSink for NoTrace {
    fn event(&mut self, _: &TraceEvent) {}
}

/// Adapts a closure into a sink.
pub struct FnSink<F>(pub F);

impl<F: FnMut(&TraceEvent)> TraceSink for FnSink<F> {
    fn event(&mut self, ev: &TraceEvent) {
        (self.0)(ev)
    }
}

impl<T: TraceSink + ?Sized> TraceSink for &mut T {
    fn event(&mut self, ev: &TraceEvent) {
        (**self).event(ev)
    }
}
