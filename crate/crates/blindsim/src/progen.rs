//! Random program generators for the property suites.
//!
//! [`ir_program`] writes annotated IR with a mix of secret and public data
//! so that some programs build clean, some with warnings and some fail.
//! [`asm_sequence`] writes short straight-line-ish assembly over a blinded
//! region, a normal region, the stack and two secret scalars; the
//! differential runner [`differential`] executes it on two secret inputs
//! and reports any place a secret became visible outside blinded storage.

use std::fmt::Write as _;

use blindcap::heap::RegionKind;
use blindcap::machine::asm::assemble;
use blindcap::machine::isa::Opcode;
use blindcap::machine::{Machine, MachineConfig, Mode, StepOutcome, Value};
use blindcap::memory::GRANULE;
use rand::seq::SliceRandom;
use rand::Rng;

/// Elements in every generated array; a power of two so indices can be
/// masked into range.
pub const ARRAY_LEN: u64 = 8;

struct IrGen<'a, R: Rng> {
    rng: &'a mut R,
    out: String,
    indent: usize,
    scalars: Vec<String>,
    /// Scalars that may hold a secret, tracked conservatively.
    tainted: Vec<String>,
    arr_tainted: bool,
    loop_vars: Vec<String>,
    loops: usize,
    depth: usize,
    /// `Some(true)` when the helper takes or returns blinded values.
    helper: Option<bool>,
}

/// Chance that a context needing a public value gets one.
const CAREFUL: f64 = 0.92;

impl<R: Rng> IrGen<'_, R> {
    fn line(&mut self, s: &str) {
        for _ in 0..self.indent {
            self.out.push_str("    ");
        }
        self.out.push_str(s);
        self.out.push('\n');
    }

    fn scalar(&mut self, public: bool) -> Option<String> {
        let pool: Vec<&String> = self.scalars.iter().filter(|v| !public || !self.tainted.contains(v)).collect();
        pool.choose(self.rng).map(|v| (*v).clone())
    }

    /// An expression and whether it may carry a secret. With `public` set
    /// only public sources are used.
    fn atom(&mut self, public: bool) -> (String, bool) {
        loop {
            match self.rng.gen_range(0..10) {
                0 | 1 => return (self.rng.gen_range(-4i64..20).to_string(), false),
                2 | 3 if !self.loop_vars.is_empty() => return (self.loop_vars.choose(self.rng).unwrap().clone(), false),
                4 if !public => return (format!("s[{}]", self.index()), true),
                5 => return (format!("p[{}]", self.index()), false),
                6 if !public || !self.arr_tainted => return (format!("arr[{}]", self.index()), self.arr_tainted),
                7 if self.rng.gen_bool(0.3) => return ("input()".into(), false),
                _ => {
                    if let Some(v) = self.scalar(public) {
                        let t = self.tainted.contains(&v);
                        return (v, t);
                    }
                }
            }
        }
    }

    fn public_context(&mut self) -> bool {
        self.rng.gen_bool(CAREFUL)
    }

    fn index(&mut self) -> String {
        let public = self.public_context();
        match self.rng.gen_range(0..6) {
            0 | 1 => self.rng.gen_range(0..ARRAY_LEN).to_string(),
            2 | 3 if !self.loop_vars.is_empty() => self.loop_vars.choose(self.rng).unwrap().clone(),
            _ => match self.scalar(public) {
                Some(v) => format!("{v} & {}", ARRAY_LEN - 1),
                None => "0".into(),
            },
        }
    }

    fn expr(&mut self, depth: u32, public: bool) -> (String, bool) {
        if depth == 0 || self.rng.gen_bool(0.35) {
            return self.atom(public);
        }
        match self.rng.gen_range(0..8) {
            0 => {
                let (c, tc) = self.expr(depth - 1, public);
                let (a, ta) = self.expr(depth - 1, public);
                let (b, tb) = self.expr(depth - 1, public);
                (format!("select({c}, {a}, {b})"), tc || ta || tb)
            }
            1 if self.helper.is_some() && !(public && self.helper == Some(true)) => {
                let (a, ta) = self.expr(depth - 1, public);
                let (b, tb) = self.expr(depth - 1, public);
                (format!("mix({a}, {b})"), ta || tb || self.helper == Some(true))
            }
            _ => {
                let op = *["+", "-", "*", "&", "|", "^", "<", "==", ">>", "!=", ">="].choose(self.rng).unwrap();
                let (a, ta) = self.expr(depth - 1, public);
                let (b, tb) = self.expr(depth - 1, public);
                (format!("({a} {op} {b})"), ta || tb)
            }
        }
    }

    fn assign(&mut self) {
        let v = self.scalars.choose(self.rng).unwrap().clone();
        let (e, t) = self.expr(2, false);
        if t && !self.tainted.contains(&v) {
            self.tainted.push(v.clone());
        }
        self.line(&format!("{v} = {e};"));
    }

    fn stmt(&mut self) {
        let depth = self.depth;
        match self.rng.gen_range(0..12) {
            0..=3 => self.assign(),
            4 => {
                let i = self.index();
                let (e, t) = self.expr(2, false);
                self.arr_tainted |= t;
                self.line(&format!("arr[{i}] = {e};"));
            }
            5 => {
                let i = self.index();
                let (e, _) = self.expr(2, false);
                self.line(&format!("s[{i}] = {e};"));
            }
            6 => {
                let i = self.index();
                let public = self.public_context();
                let (e, _) = self.expr(1, public);
                self.line(&format!("p[{i}] = {e};"));
            }
            7 if self.rng.gen_bool(0.3) => {
                let public = self.public_context();
                let (e, _) = self.expr(1, public);
                self.line(&format!("out({e});"));
            }
            8 | 9 if depth < 2 => {
                let public = self.public_context();
                let (c, _) = self.expr(1, public);
                self.line(&format!("if ({c}) {{"));
                self.block();
                if self.rng.gen_bool(0.5) {
                    self.line("} else {");
                    self.block();
                }
                self.line("}");
            }
            10 | 11 if depth < 2 => {
                let v = format!("i{}", self.loops);
                self.loops += 1;
                let n = self.rng.gen_range(1..=4);
                self.line(&format!("for (int {v} = 0; {v} < {n}; {v} = {v} + 1) {{"));
                self.loop_vars.push(v);
                self.block();
                self.loop_vars.pop();
                self.line("}");
            }
            _ => {
                let v = self.scalars.choose(self.rng).unwrap().clone();
                self.line(&format!("{v} = {v} + 1;"));
            }
        }
    }

    fn block(&mut self) {
        self.indent += 1;
        self.depth += 1;
        for _ in 0..self.rng.gen_range(1..=3) {
            self.stmt();
        }
        self.depth -= 1;
        self.indent -= 1;
    }
}

/// A random IR program. Public input is read with `input()`; secrets come
/// from `input_blinded` into an 8-element array. Most contexts that need a
/// public value get one, so a good share of programs build.
pub fn ir_program(rng: &mut impl Rng) -> String {
    let helper = rng.gen_bool(0.5).then(|| rng.gen_bool(0.5));
    let mut g = IrGen {
        rng,
        out: String::new(),
        indent: 0,
        scalars: Vec::new(),
        tainted: Vec::new(),
        arr_tainted: false,
        loop_vars: Vec::new(),
        loops: 0,
        depth: 0,
        helper,
    };
    match helper {
        Some(true) => g.line("fn mix(int a, @blinded int b) @blinded {"),
        Some(false) => g.line("fn mix(int a, int b) {"),
        None => {}
    }
    if helper.is_some() {
        g.line("    return select(a < b, b - a, a - b) + (a ^ b);");
        g.line("}");
        g.line("");
    }
    g.line("fn main() {");
    g.indent = 1;
    g.line(&format!("int* s = bmalloc({ARRAY_LEN});"));
    g.line(&format!("input_blinded(s, {ARRAY_LEN});"));
    g.line(&format!("int* p = malloc({ARRAY_LEN});"));
    g.line(&format!("int arr[{ARRAY_LEN}];"));
    let n = g.rng.gen_range(2..=4);
    for k in 0..n {
        let name = format!("v{k}");
        let blinded = g.rng.gen_bool(0.3);
        let init = g.rng.gen_range(0..10);
        g.line(&format!("{}int {name} = {init};", if blinded { "@blinded " } else { "" }));
        if blinded {
            g.tainted.push(name.clone());
        }
        g.scalars.push(name);
    }
    for _ in 0..g.rng.gen_range(3..=8) {
        g.stmt();
    }
    g.line("@result int r[1];");
    let (e, _) = g.expr(2, false);
    g.line(&format!("r[0] = {e};"));
    g.line("out(r[0]);");
    g.line("free(p);");
    g.line("free(s);");
    g.indent = 0;
    g.line("}");
    g.out
}

/// Secret input words consumed by an [`asm_sequence`] program: the
/// blinded array followed by two scalars.
pub const ASM_SECRETS: usize = ARRAY_LEN as usize + 2;

const DATA: [&str; 5] = ["x5", "x6", "x7", "x8", "x9"];
const CAPS: [&str; 5] = ["x20", "x21", "x22", "x23", "x2"];
const ANY: [&str; 10] = ["x5", "x6", "x7", "x8", "x9", "x20", "x21", "x22", "x23", "x2"];

/// A random instruction sequence of `len` body instructions after a fixed
/// prologue. Control flow only moves forward so every run terminates.
pub fn asm_sequence(rng: &mut impl Rng, len: usize) -> String {
    let mut s = String::new();
    let bytes = ARRAY_LEN * 8;
    // Blinded array in x20, normal array in x21, secret scalars in x5/x6.
    let _ = write!(
        s,
        "LI x10, 2\nLI x11, {bytes}\nECALL\nMV x20, x10\n\
         LI x10, 6\nMV x11, x20\nLI x12, {ARRAY_LEN}\nECALL\n\
         LI x10, 1\nLI x11, {bytes}\nECALL\nMV x21, x10\n\
         LI x10, 7\nECALL\nMV x5, x10\nLI x10, 7\nECALL\nMV x6, x10\n\
         LI x3, -64\nCINCOFFSET x2, x2, x3\n\
         CLLC x22, L{}\nMV x23, x21\n",
        rng.gen_range(0..len)
    );
    for r in ["x7", "x8", "x9"] {
        let v: i64 = *[0, 1, 8, 16, 31, 63, -8, rng.gen_range(-100..100)].choose(rng).unwrap();
        let _ = writeln!(s, "LI {r}, {v}");
    }
    let pick = |rng: &mut dyn rand::RngCore, set: &[&'static str]| -> &'static str { set[rng.gen_range(0..set.len())] };
    for i in 0..len {
        let _ = write!(s, "L{i}: ");
        let fwd = |rng: &mut dyn rand::RngCore| format!("L{}", rng.gen_range(i + 1..=len));
        let line = match rng.gen_range(0..22) {
            0..=2 => {
                let op = *["ADD", "SUB", "MUL", "AND", "OR", "XOR", "SLL", "SRL", "SRA", "SLT", "SLTU"].choose(rng).unwrap();
                format!("{op} {}, {}, {}", pick(rng, &DATA), pick(rng, &ANY), pick(rng, &ANY))
            }
            3 => {
                let op = *["ADDI", "ANDI", "ORI", "XORI", "SLTI"].choose(rng).unwrap();
                format!("{op} {}, {}, {}", pick(rng, &DATA), pick(rng, &ANY), rng.gen_range(-16..64))
            }
            4 => format!("LI {}, {}", pick(rng, &DATA), *[0i64, 1, 8, 31, 63].choose(rng).unwrap()),
            5 => format!("MV {}, {}", pick(rng, &ANY), pick(rng, &ANY)),
            6 | 7 => format!("LD {}, {}({})", pick(rng, &DATA), 8 * rng.gen_range(0..8), pick(rng, &CAPS)),
            8 | 9 => format!("SD {}, {}({})", pick(rng, &ANY), 8 * rng.gen_range(0..8), pick(rng, &CAPS)),
            10 => format!("LDX {}, {}({})", pick(rng, &DATA), pick(rng, &DATA), pick(rng, &CAPS)),
            11 => format!("SDX {}, {}({})", pick(rng, &ANY), pick(rng, &DATA), pick(rng, &CAPS)),
            12 => format!("CSC {}, {}({})", pick(rng, &ANY), 16 * rng.gen_range(0..4), pick(rng, &CAPS)),
            13 => format!("CLC {}, {}({})", pick(rng, &ANY), 16 * rng.gen_range(0..4), pick(rng, &CAPS)),
            14 => {
                let op = *["CANDPERM", "CSETBOUNDS", "CINCOFFSET"].choose(rng).unwrap();
                format!("{op} {}, {}, {}", pick(rng, &CAPS[..4]), pick(rng, &CAPS), pick(rng, &DATA))
            }
            15 => {
                let op = *["CGETADDR", "CGETTAG"].choose(rng).unwrap();
                format!("{op} {}, {}", pick(rng, &DATA), pick(rng, &ANY))
            }
            16 | 17 => {
                let op = *["BEQ", "BNE", "BLT", "BGE"].choose(rng).unwrap();
                format!("{op} {}, {}, {}", pick(rng, &ANY), pick(rng, &ANY), fwd(rng))
            }
            18 => format!("J {}", fwd(rng)),
            19 => format!("OUT {}", pick(rng, &ANY)),
            20 => format!("CJALR x1, {}", pick(rng, &ANY)),
            _ => format!("CGETTAG {}, {}", pick(rng, &DATA), pick(rng, &CAPS)),
        };
        s.push_str(&line);
        s.push('\n');
    }
    let _ = writeln!(s, "L{len}: HALT");
    s
}

/// First point where two runs that differ only in secrets disagree on
/// something a non-blinded observer can see.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Leak {
    pub step: u64,
    pub what: String,
}

fn visible_state(m: &Machine) -> Vec<String> {
    let mut v = Vec::new();
    v.push(format!("pc={:#x} fault={:?} halted={}", m.pc(), m.fault(), m.is_halted()));
    v.push(format!("out={:?}", m.output()));
    for (i, c) in m.regs().iter().enumerate() {
        let shown = match (c.blinded, c.value) {
            (true, _) => "blinded".to_string(),
            (false, Value::Data(d)) => format!("{d:#x}"),
            (false, Value::Cap(cap)) => format!("{cap:?}"),
        };
        v.push(format!("x{i}={shown}"));
    }
    v
}

fn blinded_ranges(m: &Machine) -> Vec<(u64, u64)> {
    m.heap().live(RegionKind::Blinded).map(|r| (r.base, r.end())).collect()
}

fn visible_memory_diff(a: &Machine, b: &Machine) -> Option<String> {
    let (ma, mb) = (a.mem(), b.mem());
    let ranges = blinded_ranges(a);
    if ranges != blinded_ranges(b) {
        return Some("blinded region layout differs".into());
    }
    for addr in (0..ma.size()).step_by(GRANULE as usize) {
        if ranges.iter().any(|&(lo, hi)| addr >= lo && addr < hi) {
            continue;
        }
        let (ia, ta) = ma.raw_granule(addr).unwrap();
        let (ib, tb) = mb.raw_granule(addr).unwrap();
        let (brr_a, brr_b) = (ma.is_brr(addr), mb.is_brr(addr));
        if brr_a != brr_b || ta != tb || (!brr_a && ia != ib) {
            return Some(format!("granule {addr:#x} differs"));
        }
    }
    None
}

/// Runs `src` on two secret inputs in lockstep under enforcement and
/// compares everything a non-blinded observer can see after every step:
/// control flow, faults, output, the value of every non-blinded register
/// and all memory outside blinded regions (BRR payloads excluded).
/// Also checks the register invariant and region disjointness.
pub fn differential(src: &str, secrets_a: &[u64], secrets_b: &[u64], max_steps: u64) -> Result<(), Leak> {
    let program = assemble(src).map_err(|e| Leak { step: 0, what: format!("assembly failed: {e:?}") })?;
    let cfg = MachineConfig { mode: Mode::Purecap, enforce: true, mem_size: 1 << 16, ..MachineConfig::default() };
    let boot = |secrets: &[u64]| {
        let mut m = Machine::from_program(program.clone(), cfg).expect("fits");
        m.push_secret(secrets.iter().copied());
        m
    };
    let (mut a, mut b) = (boot(secrets_a), boot(secrets_b));
    for step in 0..max_steps {
        let (ia, ib) = (a.step(), b.step());
        let (oa, ob) = (ia.outcome, ib.outcome);
        let stopped = oa != StepOutcome::Continue || ob != StepOutcome::Continue;
        let leak = |what: String| Err(Leak { step, what });
        for m in [&a, &b] {
            if !m.register_invariant_holds() {
                return leak("blinded register holds a valid capability".into());
            }
            if !m.heap().regions_disjoint() {
                return leak("blinded and normal regions overlap".into());
            }
        }
        let (va, vb) = (visible_state(&a), visible_state(&b));
        if let Some((x, y)) = va.iter().zip(&vb).find(|(x, y)| x != y) {
            return leak(format!("{x} vs {y}"));
        }
        // Memory only changes on stores and system calls.
        let writes = |o: Option<Opcode>| matches!(o, Some(Opcode::Sd | Opcode::Sdx | Opcode::Csc | Opcode::Ecall));
        if stopped || writes(ia.opcode) || writes(ib.opcode) {
            if let Some(d) = visible_memory_diff(&a, &b) {
                return leak(d);
            }
        }
        if stopped {
            break;
        }
    }
    Ok(())
}
