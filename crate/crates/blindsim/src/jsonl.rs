//! JSON Lines trace output, one event per line.
//!
//! Field order is fixed: `step`, `phase`, `pc`, `opcode`, `mem_line`,
//! `pred`, `fault`. Absent values are `null`.

use std::io::{self, Write};

use blindcap::trace::{Phase, PredTable, TraceEvent, TraceSink};
use serde::Serialize;

#[derive(Serialize)]
struct Pred {
    table: &'static str,
    index: u16,
    old: u64,
    new: u64,
}

#[derive(Serialize)]
struct Fault {
    kind: &'static str,
    suppressed: bool,
}

#[derive(Serialize)]
struct Line {
    step: u64,
    phase: &'static str,
    pc: u64,
    opcode: &'static str,
    mem_line: Option<u16>,
    pred: Option<Pred>,
    fault: Option<Fault>,
}

impl From<&TraceEvent> for Line {
    fn from(e: &TraceEvent) -> Line {
        Line {
            step: e.step,
            phase: match e.phase {
                Phase::Arch => "arch",
                Phase::Transient => "transient",
            },
            pc: e.pc,
            opcode: e.opcode.mnemonic(),
            mem_line: e.mem_line,
            pred: e.pred.map(|p| Pred {
                table: match p.table {
                    PredTable::Pht => "pht",
                    PredTable::Btb => "btb",
                },
                index: p.index,
                old: p.old,
                new: p.new,
            }),
            fault: e.fault.map(|f| Fault { kind: f.kind.name(), suppressed: f.suppressed }),
        }
    }
}

pub fn to_line(e: &TraceEvent) -> String {
    serde_json::to_string(&Line::from(e)).expect("plain struct serializes")
}

/// Writes events as they arrive. The first I/O error is kept and later
/// events are dropped.
pub struct JsonlSink<W: Write> {
    out: W,
    error: Option<io::Error>,
}

impl<W: Write> JsonlSink<W> {
    pub fn new(out: W) -> Self {
        JsonlSink { out, error: None }
    }

    pub fn finish(mut self) -> io::Result<W> {
        if let Some(e) = self.error {
            return Err(e);
        }
        self.out.flush()?;
        Ok(self.out)
    }
}

impl<W: Write> TraceSink for JsonlSink<W> {
    fn event(&mut self, ev: &TraceEvent) {
        if self.error.is_none() {
            if let Err(e) = writeln!(self.out, "{}", to_line(ev)) {
                self.error = Some(e);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use blindcap::machine::isa::Opcode;
    use blindcap::machine::rules::FaultKind;
    use blindcap::trace::{FaultRecord, PredUpdate};

    #[test]
    fn field_order_and_nulls() {
        let e = TraceEvent {
            step: 3,
            phase: Phase::Transient,
            pc: 0x1010,
            opcode: Opcode::Ldx,
            mem_line: Some(12),
            pred: None,
            fault: Some(FaultRecord { kind: FaultKind::BlindedAddress, suppressed: true }),
        };
        assert_eq!(
            to_line(&e),
            r#"{"step":3,"phase":"transient","pc":4112,"opcode":"LDX","mem_line":12,"pred":null,"fault":{"kind":"BlindedAddress","suppressed":true}}"#
        );
        let e = TraceEvent {
            step: 0,
            phase: Phase::Arch,
            pc: 0x1000,
            opcode: Opcode::Beq,
            mem_line: None,
            pred: Some(PredUpdate { table: PredTable::Pht, index: 0, old: 1, new: 2 }),
            fault: None,
        };
        assert_eq!(
            to_line(&e),
            r#"{"step":0,"phase":"arch","pc":4096,"opcode":"BEQ","mem_line":null,"pred":{"table":"pht","index":0,"old":1,"new":2},"fault":null}"#
        );
    }
}
