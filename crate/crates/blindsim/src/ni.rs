//! Non-interference checks: run one program on two secret inputs and
//! compare the observable traces.
//!
//! Traces of the larger corpus sizes run to millions of events, so the two
//! machines advance in lockstep and only the not-yet-matched tail is kept.

use std::collections::VecDeque;

use blindcap::machine::{Machine, RunOutcome, StepOutcome};
use blindcap::spec::{NiVerdict, SpecEngine};
use blindcap::trace::{FnSink, TraceEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NiReport {
    pub verdict: NiVerdict,
    pub outcome_a: RunOutcome,
    pub outcome_b: RunOutcome,
    /// Events compared.
    pub events: u64,
}

struct Side {
    m: Machine,
    engine: SpecEngine,
    pending: VecDeque<TraceEvent>,
    outcome: Option<RunOutcome>,
    steps: u64,
}

impl Side {
    fn new(m: Machine, window: usize) -> Side {
        Side { m, engine: SpecEngine::new(window), pending: VecDeque::new(), outcome: None, steps: 0 }
    }

    fn advance(&mut self, max_steps: u64) {
        if self.outcome.is_some() {
            return;
        }
        if self.steps == max_steps {
            self.outcome = Some(RunOutcome::StepLimitExceeded);
            return;
        }
        self.steps += 1;
        let q = &mut self.pending;
        let r = self.engine.step(&mut self.m, &mut FnSink(|e: &TraceEvent| q.push_back(*e)));
        self.outcome = match r {
            StepOutcome::Continue => None,
            StepOutcome::Halted => Some(RunOutcome::Halted),
            StepOutcome::Fault(f) => Some(RunOutcome::Fault(f)),
        };
    }
}

/// Runs `a` and `b` under fresh speculative engines and compares their
/// observable projections event by event.
pub fn compare_runs(a: Machine, b: Machine, window: usize, max_steps: u64) -> NiReport {
    let mut sa = Side::new(a, window);
    let mut sb = Side::new(b, window);
    let mut index = 0u64;
    loop {
        sa.advance(max_steps);
        sb.advance(max_steps);
        while let (Some(x), Some(y)) = (sa.pending.front(), sb.pending.front()) {
            if x.projection() != y.projection() {
                let verdict = NiVerdict::Diverged { index: index as usize, a: Some(*x), b: Some(*y) };
                return finish(verdict, &mut sa, &mut sb, index, max_steps);
            }
            sa.pending.pop_front();
            sb.pending.pop_front();
            index += 1;
        }
        if sa.outcome.is_some() && sb.outcome.is_some() {
            let verdict = if sa.pending.is_empty() && sb.pending.is_empty() {
                NiVerdict::Identical
            } else {
                NiVerdict::Diverged { index: index as usize, a: sa.pending.front().copied(), b: sb.pending.front().copied() }
            };
            return finish(verdict, &mut sa, &mut sb, index, max_steps);
        }
    }
}

fn finish(verdict: NiVerdict, sa: &mut Side, sb: &mut Side, events: u64, max_steps: u64) -> NiReport {
    // Let both sides reach their own end so the outcomes are meaningful.
    while sa.outcome.is_none() {
        sa.advance(max_steps);
    }
    while sb.outcome.is_none() {
        sb.advance(max_steps);
    }
    NiReport { verdict, outcome_a: sa.outcome.unwrap(), outcome_b: sb.outcome.unwrap(), events }
}
