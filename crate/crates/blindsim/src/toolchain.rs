//! Compile, assemble and boot in one place.

use std::sync::Arc;

use blindcap::ir::{compile, Compiled, Diagnostic, LowerOptions, Pos};
use blindcap::machine::asm::{assemble, Program};
use blindcap::machine::{Machine, MachineConfig, Mode};

/// The three build configurations compared by the benchmarks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Config {
    Bare,
    Purecap,
    PurecapBlinded,
}

impl Config {
    pub const ALL: [Config; 3] = [Config::Bare, Config::Purecap, Config::PurecapBlinded];

    pub fn name(self) -> &'static str {
        match self {
            Config::Bare => "bare",
            Config::Purecap => "purecap",
            Config::PurecapBlinded => "purecap+blinded",
        }
    }

    pub fn options(self) -> LowerOptions {
        match self {
            Config::Bare => LowerOptions { blinding: false, mode: Mode::Bare },
            Config::Purecap => LowerOptions { blinding: false, mode: Mode::Purecap },
            Config::PurecapBlinded => LowerOptions { blinding: true, mode: Mode::Purecap },
        }
    }
}

#[derive(Debug, Clone)]
pub struct Build {
    pub compiled: Compiled,
    pub program: Arc<Program>,
    pub options: LowerOptions,
}

impl Build {
    pub fn warnings(&self) -> impl Iterator<Item = &Diagnostic> {
        self.compiled.analysis.diagnostics.iter().filter(|d| !d.is_error())
    }

    /// A machine loaded with this program. Blindedness rules are enforced
    /// exactly when the program was built with blinding.
    pub fn boot(&self) -> Machine {
        self.boot_with(self.options.blinding)
    }

    pub fn boot_with(&self, enforce: bool) -> Machine {
        let cfg = MachineConfig { mode: self.options.mode, enforce, ..MachineConfig::default() };
        Machine::new(self.program.clone(), cfg).expect("compiled programs fit the default memory")
    }
}

/// Compiles IR source and assembles the result.
pub fn build(src: &str, options: LowerOptions) -> Result<Build, Vec<Diagnostic>> {
    let compiled = compile(src, options)?;
    let program = assemble(&compiled.lowered.asm).map_err(|errs| {
        errs.into_iter()
            .map(|e| Diagnostic::error("E_INTERNAL", Pos { line: e.line as u32, col: 1 }, format!("generated assembly: {}", e.message)))
            .collect::<Vec<_>>()
    })?;
    Ok(Build { compiled, program: Arc::new(program), options })
}
