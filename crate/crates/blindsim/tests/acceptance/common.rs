use blindcap::machine::asm::assemble;
use blindcap::machine::rules::FaultKind;
use blindcap::machine::{Machine, MachineConfig, RunOutcome, StepOutcome};

/// Blinded region in x20, normal region in x21, a secret (1) in x5, the
/// public value 1 in x6, a code capability to `t` in x22 and a stack
/// pointer with 16 bytes of room.
pub const PROLOGUE: &str = "
    LI x10, 2
    LI x11, 64
    ECALL
    MV x20, x10
    LI x10, 1
    LI x11, 64
    ECALL
    MV x21, x10
    LI x10, 7
    ECALL
    MV x5, x10
    LI x6, 1
    CLLC x22, t
    LI x3, -32
    CINCOFFSET x2, x2, x3
";

pub const PROLOGUE_LEN: usize = 15;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expect {
    /// Halts; `x7` blindedness checked when given.
    Halt { x7_blinded: Option<bool>, output: Option<Vec<u64>> },
    /// Faults with this kind on the last instruction of the body.
    Fault(FaultKind),
}

pub fn halts() -> Expect {
    Expect::Halt { x7_blinded: None, output: None }
}

pub fn halts_with(output: &[u64]) -> Expect {
    Expect::Halt { x7_blinded: None, output: Some(output.to_vec()) }
}

pub fn blinds(b: bool) -> Expect {
    Expect::Halt { x7_blinded: Some(b), output: None }
}

fn body_len(body: &str) -> usize {
    body.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with(';')).count()
}

/// Runs `PROLOGUE + body + "t: HALT" + data` and checks the outcome.
/// The register invariant is checked after every step.
pub fn check(body: &str, data: &str, expect: &Expect) -> Result<(), String> {
    let src = format!("{PROLOGUE}\n{body}\nt: HALT\n{data}\n");
    let p = assemble(&src).map_err(|e| format!("assembly: {e:?}"))?;
    let mut m = Machine::from_program(p, MachineConfig::default()).map_err(|e| e.to_string())?;
    m.push_secret([1, 2, 3, 4, 5, 6, 7, 8]);
    let mut outcome = RunOutcome::StepLimitExceeded;
    for _ in 0..1000 {
        let info = m.step();
        if !m.register_invariant_holds() {
            return Err("register holds a blinded valid capability".into());
        }
        match info.outcome {
            StepOutcome::Continue => continue,
            StepOutcome::Halted => outcome = RunOutcome::Halted,
            StepOutcome::Fault(f) => outcome = RunOutcome::Fault(f),
        }
        break;
    }
    let last = PROLOGUE_LEN + body_len(body) - 1;
    match (expect, outcome) {
        (Expect::Fault(k), RunOutcome::Fault(f)) if f.kind == *k && f.index == last => Ok(()),
        (Expect::Halt { x7_blinded, output }, RunOutcome::Halted) => {
            let x7 = m.regs()[7].blinded;
            if x7_blinded.is_some_and(|b| b != x7) {
                return Err(format!("x7 blinded={x7}"));
            }
            if output.as_ref().is_some_and(|o| o.as_slice() != m.output()) {
                return Err(format!("output {:?}", m.output()));
            }
            Ok(())
        }
        (_, o) => Err(format!("got {o:?}, expected {expect:?}")),
    }
}
