//! Spectre gadgets for the speculative engine.
//!
//! Each gadget trains a predictor on a public path for six iterations and
//! then runs once on the attack path, where the trained prediction sends
//! transient execution into code that indexes a probe array with the
//! secret. The attack counts as a leak when the transient cache lines
//! differ between two secret values.

use std::fmt;
use std::str::FromStr;

use blindcap::machine::asm::assemble;
use blindcap::machine::{Machine, MachineConfig, Mode, RunOutcome};
use blindcap::spec::{SpecEngine, SpecStats};
use blindcap::trace::{Phase, TraceEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Mispredicted branch into an in-bounds load of blinded data.
    Pht,
    /// Bounds-check bypass: out-of-bounds load of plain data.
    PhtOob,
    /// Mistrained indirect jump into a gadget reading blinded data.
    Btb,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Pht, Variant::PhtOob, Variant::Btb];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Pht => "pht",
            Variant::PhtOob => "pht-oob",
            Variant::Btb => "btb",
        }
    }

    pub fn source(self) -> &'static str {
        match self {
            Variant::Pht => PHT,
            Variant::PhtOob => PHT_OOB,
            Variant::Btb => BTB,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Variant, String> {
        Variant::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| format!("unknown gadget `{s}`"))
    }
}

const PHT: &str = "
; secret lives in the blinded section, reached through a blinded capability
    CLLC x20, public
    CLLC x21, secret
    CLLC x22, probe
    LI x10, 6
    MV x11, x21
    LI x12, 1
    ECALL
    LI x27, 8
    LI x23, 7
loop:
    ADDI x23, x23, -1
    LI x24, 1
    MV x25, x20
    BNE x23, x0, victim
    LI x24, 0
    MV x25, x21
victim:
    BEQ x24, x0, skip
    LD x26, 0(x25)
    MUL x28, x26, x27
    LDX x29, x28(x22)
skip:
    BNE x23, x0, loop
    HALT
.data
public: .word 2
    .align 16
probe: .zero 1024
.blinded
secret: .word 0
";

const PHT_OOB: &str = "
; key sits right after arr; only the bounds check keeps it out of reach
    CLLC x20, arr
    CLLC x21, key
    CLLC x22, probe
    LI x10, 6
    MV x11, x21
    LI x12, 1
    ECALL
    LI x27, 8
    LI x30, 4
    LI x23, 7
loop:
    ADDI x23, x23, -1
    LI x24, 1
    BNE x23, x0, victim
    LI x24, 4
victim:
    BGE x24, x30, skip
    LDX x26, x24(x20)
    MUL x28, x26, x27
    LDX x29, x28(x22)
skip:
    BNE x23, x0, loop
    HALT
.data
arr: .word 1, 2, 3, 0
key: .word 0, 0
probe: .zero 1024
";

const BTB: &str = "
    CLLC x20, public
    CLLC x21, secret
    CLLC x22, probe
    LI x10, 6
    MV x11, x21
    LI x12, 1
    ECALL
    LI x27, 8
    CLLC x15, gadget
    CLLC x16, benign
    LI x23, 7
loop:
    ADDI x23, x23, -1
    MV x14, x15
    MV x25, x20
    BNE x23, x0, victim
    MV x14, x16
    MV x25, x21
victim:
    CJALR x1, x14
    BNE x23, x0, loop
    HALT
gadget:
    LD x26, 0(x25)
    MUL x28, x26, x27
    LDX x29, x28(x22)
    CJALR x0, x1
benign:
    CJALR x0, x1
.data
public: .word 2
    .align 16
probe: .zero 1024
.blinded
secret: .word 0
";

/// One gadget run.
#[derive(Debug, Clone)]
pub struct GadgetRun {
    pub outcome: RunOutcome,
    pub trace: Vec<TraceEvent>,
    pub stats: SpecStats,
}

impl GadgetRun {
    /// Cache lines touched by transient loads, in order.
    pub fn transient_lines(&self) -> Vec<u16> {
        self.trace.iter().filter(|e| e.phase == Phase::Transient).filter_map(|e| e.mem_line).collect()
    }
}

pub fn run_gadget(variant: Variant, secret: u64, enforce: bool, mode: Mode, window: usize) -> GadgetRun {
    let program = assemble(variant.source()).expect("gadget assembles");
    let cfg = MachineConfig { mode, enforce, ..MachineConfig::default() };
    let mut m = Machine::from_program(program, cfg).expect("gadget loads");
    m.push_secret([secret]);
    let mut engine = SpecEngine::new(window);
    let mut trace = Vec::new();
    let outcome = engine.run(&mut m, 10_000, &mut trace);
    GadgetRun { outcome, trace, stats: engine.stats }
}

#[derive(Debug, Clone)]
pub struct SpectreReport {
    pub variant: Variant,
    pub enforce: bool,
    pub mode: Mode,
    pub secrets: (u64, u64),
    pub runs: (GadgetRun, GadgetRun),
    pub leaked: bool,
}

impl fmt::Display for SpectreReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (a, b) = &self.runs;
        writeln!(
            f,
            "gadget={} mode={} enforce={} leaked={}",
            self.variant,
            self.mode,
            if self.enforce { "on" } else { "off" },
            self.leaked
        )?;
        for (s, r) in [(self.secrets.0, a), (self.secrets.1, b)] {
            writeln!(
                f,
                "  secret={s}: outcome={:?} mispredictions={} transient={} suppressed={} lines={:?}",
                r.outcome,
                r.stats.mispredictions,
                r.stats.transient,
                r.stats.suppressed,
                r.transient_lines()
            )?;
        }
        Ok(())
    }
}

/// Runs the gadget with two secret values and compares the transient
/// cache lines.
pub fn spectre(variant: Variant, enforce: bool, mode: Mode) -> SpectreReport {
    let secrets = (3, 11);
    let a = run_gadget(variant, secrets.0, enforce, mode, blindcap::spec::DEFAULT_WINDOW);
    let b = run_gadget(variant, secrets.1, enforce, mode, blindcap::spec::DEFAULT_WINDOW);
    let leaked = a.transient_lines() != b.transient_lines();
    SpectreReport { variant, enforce, mode, secrets, runs: (a, b), leaked }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gadgets_halt_and_mispredict() {
        for v in Variant::ALL {
            for enforce in [true, false] {
                let r = run_gadget(v, 5, enforce, Mode::Purecap, 16);
                assert_eq!(r.outcome, RunOutcome::Halted, "{v} {enforce}");
                assert!(r.stats.mispredictions >= 1, "{v}");
            }
        }
    }

    #[test]
    fn leak_only_without_protection() {
        assert!(!spectre(Variant::Pht, true, Mode::Purecap).leaked);
        assert!(spectre(Variant::Pht, false, Mode::Purecap).leaked);
        assert!(!spectre(Variant::Btb, true, Mode::Purecap).leaked);
        assert!(spectre(Variant::Btb, false, Mode::Purecap).leaked);
        assert!(!spectre(Variant::PhtOob, false, Mode::Purecap).leaked);
        assert!(spectre(Variant::PhtOob, false, Mode::Bare).leaked);
    }
}
