//! Instruction-count benchmarks over the corpus.
//!
//! Counters are retired instructions, memory accesses and bytes zeroed on
//! reclaim. They are not wall-clock times and ratios between them say
//! nothing about cycles on real hardware.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;

use blindcap::ir::Plan;
use blindcap::machine::RunOutcome;
use serde::Serialize;

use crate::corpus::Bench;
use crate::toolchain::{build, Config};

pub const MAX_STEPS: u64 = 2_000_000_000;

#[derive(Debug, Clone)]
pub struct Measurement {
    pub bench: Bench,
    pub config: Config,
    pub n: u32,
    pub outcome: RunOutcome,
    pub output: Vec<u64>,
    pub retired: u64,
    pub mem_accesses: u64,
    pub zeroized_bytes: u64,
    /// Calls of each function, counted at its first instruction.
    pub entries: BTreeMap<String, u64>,
    pub plan: Plan,
}

#[derive(Debug, Serialize)]
pub struct Row<'a> {
    pub program: &'a str,
    pub config: &'a str,
    #[serde(rename = "N")]
    pub n: u32,
    pub retired: u64,
    pub mem_accesses: u64,
    pub zeroized_bytes: u64,
}

impl Measurement {
    pub fn row(&self) -> Row<'_> {
        Row {
            program: self.bench.name(),
            config: self.config.name(),
            n: self.n,
            retired: self.retired,
            mem_accesses: self.mem_accesses,
            zeroized_bytes: self.zeroized_bytes,
        }
    }
}

/// Builds and runs one program, counting function entries on the way.
pub fn measure(bench: Bench, n: u32, config: Config, secrets: &[u64]) -> anyhow::Result<Measurement> {
    let b = build(&bench.source(n), config.options()).map_err(|d| {
        anyhow::anyhow!("{} failed to build: {}", bench.name(), d.iter().map(|d| d.render("<corpus>")).collect::<Vec<_>>().join("; "))
    })?;
    let mut m = b.boot();
    m.push_secret(secrets.iter().copied());
    let mut hits = vec![0u64; b.program.code.len()];
    let mut outcome = RunOutcome::StepLimitExceeded;
    for _ in 0..MAX_STEPS {
        let info = m.step();
        if let Some(h) = hits.get_mut(info.index) {
            *h += 1;
        }
        match info.outcome {
            blindcap::machine::StepOutcome::Continue => continue,
            blindcap::machine::StepOutcome::Halted => outcome = RunOutcome::Halted,
            blindcap::machine::StepOutcome::Fault(f) => outcome = RunOutcome::Fault(f),
        }
        break;
    }
    let entries = b.compiled.lowered.entries.iter().map(|(f, &i)| (f.clone(), hits[i])).collect();
    let c = m.counters();
    Ok(Measurement {
        bench,
        config,
        n,
        outcome,
        output: m.output().to_vec(),
        retired: c.retired,
        mem_accesses: c.mem_accesses,
        zeroized_bytes: m.zeroized_bytes(),
        entries,
        plan: b.compiled.plan,
    })
}

/// Extra instructions a blinded build should retire: per-call blinding
/// cost times calls, summed over functions.
pub fn predicted_overhead(plan: &Plan, entries: &BTreeMap<String, u64>) -> u64 {
    plan.functions.iter().map(|(f, p)| entries.get(f).copied().unwrap_or(0) * p.blinding_cost()).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OverheadCheck {
    pub predicted: u64,
    pub measured: i128,
}

impl OverheadCheck {
    pub fn exact(&self) -> bool {
        self.measured == i128::from(self.predicted)
    }
}

/// Compares the retired-instruction gap between the blinded and the plain
/// capability build with the prediction from the blinded build's plan.
pub fn overhead(blinded: &Measurement, plain: &Measurement) -> OverheadCheck {
    OverheadCheck {
        predicted: predicted_overhead(&blinded.plan, &blinded.entries),
        measured: i128::from(blinded.retired) - i128::from(plain.retired),
    }
}

pub fn write_csv<W: io::Write>(rows: &[Measurement], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for m in rows {
        w.serialize(m.row())?;
    }
    w.flush()?;
    Ok(())
}

pub fn geomean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    (xs.iter().map(|x| x.ln()).sum::<f64>() / xs.len() as f64).exp()
}

/// Per-program counter ratios against the bare build, with geometric means
/// over programs. Measurements for one N only.
pub fn ratio_table(rows: &[Measurement]) -> String {
    let find = |b: Bench, c: Config| rows.iter().find(|m| m.bench == b && m.config == c);
    let mut cols: Vec<(&str, Vec<f64>)> = vec![
        ("purecap/bare retired", vec![]),
        ("blinded/bare retired", vec![]),
        ("purecap/bare mem", vec![]),
        ("blinded/bare mem", vec![]),
    ];
    let mut s = String::new();
    let _ = writeln!(s, "{:<14} {:>22} {:>22} {:>18} {:>18}", "program", cols[0].0, cols[1].0, cols[2].0, cols[3].0);
    for b in Bench::ALL {
        let (Some(bare), Some(pc), Some(bl)) = (find(b, Config::Bare), find(b, Config::Purecap), find(b, Config::PurecapBlinded)) else {
            continue;
        };
        let r = [
            pc.retired as f64 / bare.retired as f64,
            bl.retired as f64 / bare.retired as f64,
            pc.mem_accesses as f64 / bare.mem_accesses.max(1) as f64,
            bl.mem_accesses as f64 / bare.mem_accesses.max(1) as f64,
        ];
        for (c, v) in cols.iter_mut().zip(r) {
            c.1.push(v);
        }
        let _ = writeln!(s, "{:<14} {:>22.4} {:>22.4} {:>18.4} {:>18.4}", b.name(), r[0], r[1], r[2], r[3]);
    }
    let g: Vec<f64> = cols.iter().map(|c| geomean(&c.1)).collect();
    let _ = writeln!(s, "{:<14} {:>22.4} {:>22.4} {:>18.4} {:>18.4}", "geomean", g[0], g[1], g[2], g[3]);
    let _ = writeln!(s, "note: ratios of emulator counters, not of wall-clock time");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geomean_of_powers() {
        assert!((geomean(&[2.0, 8.0]) - 4.0).abs() < 1e-12);
        assert!(geomean(&[]).is_nan());
    }
}
