//! Dynamic soundness check for the blindedness analysis.
//!
//! Every lowered value carries the level the analysis gave it. While the
//! program runs, each register written at such a site is compared with
//! that level: a blinded register where the analysis said `Unblinded` is a
//! violation. The converse is allowed since the analysis may
//! over-approximate.

use blindcap::ir::{Level, Site};
use blindcap::machine::{Fault, RunOutcome, StepOutcome};

use crate::toolchain::Build;

#[derive(Debug, Clone)]
pub struct Violation {
    pub step: u64,
    pub site: Site,
}

#[derive(Debug, Clone)]
pub struct SoundnessReport {
    pub outcome: RunOutcome,
    pub sites_checked: u64,
    pub violations: Vec<Violation>,
}

impl SoundnessReport {
    pub fn sound(&self) -> bool {
        self.violations.is_empty()
    }

    /// A fault raised by a blindedness rule, if the run ended in one.
    pub fn blindedness_fault(&self) -> Option<Fault> {
        match self.outcome {
            RunOutcome::Fault(f) if f.kind.is_blindedness() => Some(f),
            _ => None,
        }
    }
}

pub fn check(build: &Build, public: &[u64], secrets: &[u64], max_steps: u64) -> SoundnessReport {
    let mut m = build.boot();
    m.push_public(public.iter().copied());
    m.push_secret(secrets.iter().copied());
    let mut at: Vec<Vec<&Site>> = vec![Vec::new(); build.program.code.len()];
    for s in &build.compiled.lowered.sites {
        at[s.index].push(s);
    }
    let mut report = SoundnessReport { outcome: RunOutcome::StepLimitExceeded, sites_checked: 0, violations: Vec::new() };
    for step in 0..max_steps {
        let info = m.step();
        match info.outcome {
            StepOutcome::Continue => {}
            StepOutcome::Halted => {
                report.outcome = RunOutcome::Halted;
                break;
            }
            StepOutcome::Fault(f) => {
                report.outcome = RunOutcome::Fault(f);
                break;
            }
        }
        for s in at.get(info.index).into_iter().flatten() {
            report.sites_checked += 1;
            if s.level == Level::Unblinded && m.regs()[usize::from(s.reg)].blinded {
                report.violations.push(Violation { step, site: (*s).clone() });
            }
        }
    }
    report
}
