//! Compiler for the annotated mini-IR (`.bir`).
//!
//! Pipeline: [`parse`] → [`analyze`] → [`instrument`] → [`lower`], or all
//! at once through [`compile`]. The analysis assigns every value a level in
//! the three-point lattice `Unblinded < May < Must` and reports values that
//! would reach a branch condition, an address, the output channel or
//! non-blinded memory.

pub mod analysis;
pub mod ast;
pub mod lexer;
pub mod lower;
pub mod parser;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub use analysis::{analyze, Analysis, FnFacts, PtrClass, Storage, VarFacts};
pub use lower::{instrument, lower, zero_loop_len, FnPlan, LowerError, LowerOptions, Lowered, Object, ObjectKind, Plan, Site, SiteKind};
pub use parser::parse;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Pos {
    pub line: u32,
    pub col: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub severity: Severity,
    pub code: &'static str,
    pub pos: Pos,
    pub message: String,
}

impl Diagnostic {
    pub fn error(code: &'static str, pos: Pos, message: String) -> Diagnostic {
        Diagnostic { severity: Severity::Error, code, pos, message }
    }

    pub fn warning(code: &'static str, pos: Pos, message: String) -> Diagnostic {
        Diagnostic { severity: Severity::Warning, code, pos, message }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }

    /// `file:line:col: severity CODE message`
    pub fn render(&self, file: &str) -> String {
        format!("{file}:{self}")
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{}:{}: {} {} {}", self.pos.line, self.pos.col, sev, self.code, self.message)
    }
}

/// How blinded a value is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum Level {
    #[default]
    Unblinded,
    /// Blinded on some paths.
    May,
    /// Blinded on every path.
    Must,
}

impl Level {
    /// Combination of operands: the result is at least as blinded as
    /// either input.
    pub fn join(self, other: Level) -> Level {
        self.max(other)
    }

    /// Confluence of two control-flow paths.
    pub fn merge(self, other: Level) -> Level {
        if self == other {
            self
        } else {
            Level::May
        }
    }

    pub fn is_blinded(self) -> bool {
        self != Level::Unblinded
    }

    pub fn name(self) -> &'static str {
        match self {
            Level::Unblinded => "unblinded",
            Level::May => "may",
            Level::Must => "must",
        }
    }
}

/// Output of [`compile`].
#[derive(Debug, Clone)]
pub struct Compiled {
    pub analysis: Analysis,
    pub plan: Plan,
    pub lowered: Lowered,
}

/// Parses, analyzes, instruments and lowers `src`. Warnings are returned
/// alongside the result; any error aborts.
pub fn compile(src: &str, opts: LowerOptions) -> Result<Compiled, Vec<Diagnostic>> {
    let prog = parse(src)?;
    let analysis = analyze(&prog);
    if analysis.diagnostics.iter().any(Diagnostic::is_error) {
        return Err(analysis.diagnostics);
    }
    let plan = instrument(&prog, &analysis);
    let lowered = lower(&prog, &analysis, &plan, opts).map_err(|e| {
        let mut d = analysis.diagnostics.clone();
        d.push(Diagnostic::error(e.code(), e.pos(), format!("{e}")));
        d
    })?;
    Ok(Compiled { analysis, plan, lowered })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_laws() {
        use Level::*;
        assert_eq!(May.join(Must), Must);
        assert_eq!(Unblinded.join(May), May);
        assert_eq!(Unblinded.merge(Must), May);
        assert_eq!(Must.merge(Must), Must);
        for a in [Unblinded, May, Must] {
            for b in [Unblinded, May, Must] {
                assert_eq!(a.join(b), b.join(a));
                assert_eq!(a.merge(b), b.merge(a));
                assert!(a.join(b) >= a);
            }
        }
    }

    #[test]
    fn render_format() {
        let d = Diagnostic::error("E_BLINDED_BRANCH", Pos { line: 3, col: 5 }, "x".into());
        assert_eq!(d.render("a.bir"), "a.bir:3:5: error E_BLINDED_BRANCH x");
    }
}
