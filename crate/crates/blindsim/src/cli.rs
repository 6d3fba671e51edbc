//! Command-line interface.
//!
//! Exit status: 0 on success, 1 on usage, I/O or build errors. `run`
//! returns 2 when the step limit is hit and `10 + code` when the program
//! faults. `ni` returns 3 when the traces diverge.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use blindcap::ir::{self, Diagnostic, LowerOptions};
use blindcap::machine::asm::{assemble, Program};
use blindcap::machine::{Machine, MachineConfig, Mode, RunOutcome};
use blindcap::spec::{SpecEngine, DEFAULT_WINDOW};
use blindcap::trace::{NoTrace, TraceSink};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bench::{self, Measurement};
use crate::corpus::Bench;
use crate::gadgets::{self, Variant};
use crate::jsonl::JsonlSink;
use crate::ni::compare_runs;
use crate::snapshot;
use crate::toolchain::Config;

pub const EXIT_ERROR: i32 = 1;
pub const EXIT_STEP_LIMIT: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_FAULT_BASE: i32 = 10;

/// Seed for anything randomized, overridable with `BLINDSIM_SEED`.
pub fn seed() -> u64 {
    std::env::var("BLINDSIM_SEED").ok().and_then(|s| s.parse().ok()).unwrap_or(0x5EED)
}

#[derive(Parser, Debug)]
#[command(name = "blindsim", version, about = "Blinded-capability machine, compiler and test driver")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Compile annotated IR to assembly.
    Build(BuildArgs),
    /// Run the blindedness analysis and print diagnostics.
    Check(CheckArgs),
    /// Run an assembly (or IR) program.
    Run(RunArgs),
    /// Compare observable traces of one program under two secret inputs.
    Ni(NiArgs),
    /// Run a built-in Spectre gadget against two secrets.
    Spectre(SpectreArgs),
    /// Instruction-count benchmarks over the corpus.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

impl Switch {
    fn on(self) -> bool {
        self == Switch::On
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Bare,
    Purecap,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Bare => Mode::Bare,
            ModeArg::Purecap => Mode::Purecap,
        }
    }
}

#[derive(Args, Debug)]
pub struct BuildArgs {
    pub source: PathBuf,
    #[arg(long, value_enum, default_value = "on")]
    pub blinding: Switch,
    #[arg(long, value_enum, default_value = "purecap")]
    pub mode: ModeArg,
    /// Output file; stdout when absent.
    #[arg(short = 'o', long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CheckArgs {
    pub source: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct MachineArgs {
    #[arg(long, value_enum, default_value = "purecap")]
    pub mode: ModeArg,
    /// Blindedness fault rules. Turning them off is for demonstrations.
    #[arg(long, value_enum, default_value = "on")]
    pub enforce: Switch,
    #[arg(long, default_value_t = 10_000_000)]
    pub max_steps: u64,
    /// Heap placement as `base:size`, hex with `0x` or decimal.
    #[arg(long, value_parser = parse_heap)]
    pub heap: Option<(u64, u64)>,
    /// Public input stream, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, value_parser = parse_word)]
    pub public: Vec<u64>,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// Assembly file, or IR when the extension is `.ir`.
    pub program: PathBuf,
    #[command(flatten)]
    pub machine: MachineArgs,
    /// Speculative engine.
    #[arg(long, value_enum, default_value = "off")]
    pub spec: Switch,
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    pub window: usize,
    /// Secret input stream, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, value_parser = parse_word)]
    pub secret: Vec<u64>,
    /// Write the trace as JSON Lines.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Write a memory snapshot after the run.
    #[arg(long)]
    pub dump_mem: Option<PathBuf>,
    /// Replace memory with a snapshot before the run.
    #[arg(long)]
    pub load_mem: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct NiArgs {
    pub program: PathBuf,
    #[command(flatten)]
    pub machine: MachineArgs,
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    pub window: usize,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, value_parser = parse_word)]
    pub secret_a: Vec<u64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, value_parser = parse_word)]
    pub secret_b: Vec<u64>,
}

#[derive(Args, Debug)]
pub struct SpectreArgs {
    #[arg(long, default_value = "pht", value_parser = parse_variant)]
    pub variant: Variant,
    #[arg(long, value_enum, default_value = "on")]
    pub enforcement: Switch,
    #[arg(long, value_enum, default_value = "purecap")]
    pub mode: ModeArg,
    /// Print the full traces as JSON Lines after the report.
    #[arg(long)]
    pub verbose: bool,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Programs to run; all when absent.
    #[arg(long, value_delimiter = ',', value_parser = parse_bench)]
    pub programs: Vec<Bench>,
    #[arg(long, value_delimiter = ',', default_values_t = [8u32])]
    pub sizes: Vec<u32>,
    /// Write the rows as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

fn parse_word(s: &str) -> Result<u64, String> {
    let s = s.trim();
    if let Some(h) = s.strip_prefix("0x") {
        return u64::from_str_radix(h, 16).map_err(|e| e.to_string());
    }
    s.parse::<u64>().or_else(|_| s.parse::<i64>().map(|v| v as u64)).map_err(|e| e.to_string())
}

fn parse_heap(s: &str) -> Result<(u64, u64), String> {
    let (a, b) = s.split_once(':').ok_or("expected base:size")?;
    Ok((parse_word(a)?, parse_word(b)?))
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse()
}

fn parse_bench(s: &str) -> Result<Bench, String> {
    Bench::from_name(s).ok_or_else(|| format!("unknown program `{s}`"))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn print_diagnostics(err: &mut dyn Write, file: &Path, ds: &[Diagnostic]) -> io::Result<()> {
    for d in ds {
        writeln!(err, "{}", d.render(&file.display().to_string()))?;
    }
    Ok(())
}

/// Assembles `path`, compiling it first when it is IR.
fn load_program(path: &Path, mode: Mode, err: &mut dyn Write) -> Result<Option<Program>> {
    let src = read(path)?;
    let asm = if path.extension().is_some_and(|e| e == "ir") {
        let opts = LowerOptions { blinding: mode == Mode::Purecap, mode };
        match ir::compile(&src, opts) {
            Ok(c) => {
                print_diagnostics(err, path, &c.analysis.diagnostics)?;
                c.lowered.asm
            }
            Err(ds) => {
                print_diagnostics(err, path, &ds)?;
                return Ok(None);
            }
        }
    } else {
        src
    };
    match assemble(&asm) {
        Ok(p) => Ok(Some(p)),
        Err(es) => {
            for e in es {
                writeln!(err, "{}:{}: error {}", path.display(), e.line, e.message)?;
            }
            Ok(None)
        }
    }
}

fn machine(program: Arc<Program>, a: &MachineArgs) -> Result<Machine> {
    let cfg = MachineConfig { mode: a.mode.into(), enforce: a.enforce.on(), heap: a.heap, ..MachineConfig::default() };
    let mut m = Machine::new(program, cfg).map_err(|e| anyhow!("loading program: {e}"))?;
    m.push_public(a.public.iter().copied());
    Ok(m)
}

pub fn exit_code(outcome: RunOutcome) -> i32 {
    match outcome {
        RunOutcome::Halted => 0,
        RunOutcome::StepLimitExceeded => EXIT_STEP_LIMIT,
        RunOutcome::Fault(f) => EXIT_FAULT_BASE + i32::from(f.kind.code()),
    }
}

/// Runs a parsed command line, writing to the given streams.
pub fn execute(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    match cli.command {
        Command::Build(a) => cmd_build(a, out, err),
        Command::Check(a) => cmd_check(a, out),
        Command::Run(a) => cmd_run(a, out, err),
        Command::Ni(a) => cmd_ni(a, out, err),
        Command::Spectre(a) => cmd_spectre(a, out),
        Command::Bench(a) => cmd_bench(a, out),
    }
}

fn cmd_build(a: BuildArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let src = read(&a.source)?;
    let opts = LowerOptions { blinding: a.blinding.on(), mode: a.mode.into() };
    match ir::compile(&src, opts) {
        Ok(c) => {
            print_diagnostics(err, &a.source, &c.analysis.diagnostics)?;
            match a.output {
                Some(p) => fs::write(&p, &c.lowered.asm).with_context(|| format!("writing {}", p.display()))?,
                None => out.write_all(c.lowered.asm.as_bytes())?,
            }
            Ok(0)
        }
        Err(ds) => {
            print_diagnostics(err, &a.source, &ds)?;
            Ok(EXIT_ERROR)
        }
    }
}

fn cmd_check(a: CheckArgs, out: &mut dyn Write) -> Result<i32> {
    let src = read(&a.source)?;
    let ds = match ir::parse(&src) {
        Ok(p) => ir::analyze(&p).diagnostics,
        Err(ds) => ds,
    };
    print_diagnostics(out, &a.source, &ds)?;
    let errors = ds.iter().filter(|d| d.is_error()).count();
    writeln!(out, "{} error(s), {} warning(s)", errors, ds.len() - errors)?;
    Ok(if errors > 0 { EXIT_ERROR } else { 0 })
}

fn cmd_run(a: RunArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let Some(program) = load_program(&a.program, a.machine.mode.into(), err)? else {
        return Ok(EXIT_ERROR);
    };
    let mut m = machine(Arc::new(program), &a.machine)?;
    m.push_secret(a.secret.iter().copied());
    if let Some(p) = &a.load_mem {
        let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
        snapshot::restore(m.mem_mut(), &bytes).with_context(|| format!("loading {}", p.display()))?;
    }
    let mut trace = match &a.trace {
        Some(p) => {
            let f = fs::File::create(p).with_context(|| format!("creating {}", p.display()))?;
            Some(JsonlSink::new(BufWriter::new(f)))
        }
        None => None,
    };
    let sink: &mut dyn TraceSink = match &mut trace {
        Some(t) => t,
        None => &mut NoTrace,
    };
    let mut sink = DynSink(sink);
    let outcome = if a.spec.on() {
        let mut engine = SpecEngine::new(a.window);
        let o = engine.run(&mut m, a.machine.max_steps, &mut sink);
        let s = engine.stats;
        writeln!(
            err,
            "speculation: branches={} mispredictions={} transient={} suppressed={}",
            s.branches, s.mispredictions, s.transient, s.suppressed
        )?;
        o
    } else {
        m.run(a.machine.max_steps, &mut sink)
    };
    if let Some(t) = trace {
        t.finish().context("writing trace")?;
    }
    for v in m.output() {
        writeln!(out, "{}", *v as i64)?;
    }
    match outcome {
        RunOutcome::Halted => {}
        RunOutcome::Fault(f) => writeln!(err, "fault: {f}")?,
        RunOutcome::StepLimitExceeded => writeln!(err, "step limit of {} reached", a.machine.max_steps)?,
    }
    if let Some(p) = &a.dump_mem {
        fs::write(p, snapshot::dump(m.mem())).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(exit_code(outcome))
}

struct DynSink<'a>(&'a mut dyn TraceSink);

impl TraceSink for DynSink<'_> {
    fn event(&mut self, ev: &blindcap::trace::TraceEvent) {
        self.0.event(ev)
    }
}

fn cmd_ni(a: NiArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let Some(program) = load_program(&a.program, a.machine.mode.into(), err)? else {
        return Ok(EXIT_ERROR);
    };
    let program = Arc::new(program);
    let mut ma = machine(program.clone(), &a.machine)?;
    let mut mb = machine(program, &a.machine)?;
    ma.push_secret(a.secret_a.iter().copied());
    mb.push_secret(a.secret_b.iter().copied());
    let r = compare_runs(ma, mb, a.window, a.machine.max_steps);
    writeln!(out, "outcome a: {:?}", r.outcome_a)?;
    writeln!(out, "outcome b: {:?}", r.outcome_b)?;
    match r.verdict {
        blindcap::spec::NiVerdict::Identical => {
            writeln!(out, "identical ({} events)", r.events)?;
            Ok(0)
        }
        blindcap::spec::NiVerdict::Diverged { index, a, b } => {
            writeln!(out, "diverged at event {index}")?;
            let show = |e: Option<blindcap::trace::TraceEvent>| e.map_or("end of trace".to_string(), |e| crate::jsonl::to_line(&e));
            writeln!(out, "  a: {}", show(a))?;
            writeln!(out, "  b: {}", show(b))?;
            if let Some(e) = a.or(b) {
                writeln!(out, "  pc: {:#x}", e.pc)?;
            }
            Ok(EXIT_DIVERGED)
        }
    }
}

fn cmd_spectre(a: SpectreArgs, out: &mut dyn Write) -> Result<i32> {
    let r = gadgets::spectre(a.variant, a.enforcement.on(), a.mode.into());
    write!(out, "{r}")?;
    writeln!(out, "{}", serde_json::json!({ "variant": a.variant.name(), "enforcement": a.enforcement.on(), "leaked": r.leaked }))?;
    if a.verbose {
        for (label, run) in [("a", &r.runs.0), ("b", &r.runs.1)] {
            writeln!(out, "-- trace {label}")?;
            for e in &run.trace {
                writeln!(out, "{}", crate::jsonl::to_line(e))?;
            }
        }
    }
    Ok(0)
}

fn cmd_bench(a: BenchArgs, out: &mut dyn Write) -> Result<i32> {
    let programs = if a.programs.is_empty() { Bench::ALL.to_vec() } else { a.programs };
    let mut rng = ChaCha8Rng::seed_from_u64(seed());
    let mut all: Vec<Measurement> = Vec::new();
    for &n in &a.sizes {
        let jobs: Vec<(Bench, Vec<u64>)> = programs.iter().map(|&b| (b, b.secrets(n, &mut rng))).collect();
        // One worker per program; reporting stays on this thread.
        let rows: Vec<Result<Vec<Measurement>>> = std::thread::scope(|s| {
            let handles: Vec<_> = jobs
                .iter()
                .map(|(b, secrets)| {
                    s.spawn(move || Config::ALL.iter().map(|&c| bench::measure(*b, n, c, secrets)).collect::<Result<Vec<_>>>())
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("bench worker panicked")).collect()
        });
        let mut sized = Vec::new();
        for (r, (b, secrets)) in rows.into_iter().zip(&jobs) {
            let ms = r?;
            let expected = b.expected(n, secrets);
            for m in &ms {
                if m.outcome != RunOutcome::Halted || m.output != expected {
                    bail!("{} ({}, N={n}) produced a wrong result: {:?}", b.name(), m.config.name(), m.outcome);
                }
            }
            sized.extend(ms);
        }
        writeln!(out, "N={n}")?;
        writeln!(out, "{:<14} {:>16} {:>14} {:>14} {:>12}", "program", "config", "retired", "mem_accesses", "zeroized")?;
        for m in &sized {
            writeln!(out, "{:<14} {:>16} {:>14} {:>14} {:>12}", m.bench.name(), m.config.name(), m.retired, m.mem_accesses, m.zeroized_bytes)?;
        }
        writeln!(out)?;
        writeln!(out, "{:<14} {:>12} {:>12} {:>10} {:>10}", "program", "predicted", "measured", "exact", "overhead")?;
        for b in &programs {
            let get = |c| sized.iter().find(|m| m.bench == *b && m.config == c).expect("measured");
            let (bl, pc) = (get(Config::PurecapBlinded), get(Config::Purecap));
            let o = bench::overhead(bl, pc);
            let pct = 100.0 * (bl.retired as f64 / pc.retired as f64 - 1.0);
            writeln!(out, "{:<14} {:>12} {:>12} {:>10} {:>9.3}%", b.name(), o.predicted, o.measured, o.exact(), pct)?;
        }
        writeln!(out)?;
        write!(out, "{}", bench::ratio_table(&sized))?;
        writeln!(out)?;
        all.extend(sized);
    }
    if let Some(p) = &a.csv {
        let f = fs::File::create(p).with_context(|| format!("creating {}", p.display()))?;
        bench::write_csv(&all, f)?;
    }
    Ok(0)
}
