//! Storage planning and lowering to machine assembly.
//!
//! Every function gets a frame below `csp`:
//!
//! ```text
//!   0            saved return capability
//!   16 * k       scalar and pointer slots
//!   ...          object capabilities (two per result array)
//!   ...          temporary spill area, if the function calls
//!   ...          object storage
//! ```
//!
//! Objects are arrays and blinded scalars. Each one is reached through a
//! capability derived from `csp` in the prologue. With blinding enabled a
//! blinded object's capability drops `NON_OBLIVIOUS`, and the epilogue
//! zeroes the object before returning.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::{self, Write};

use super::analysis::{Analysis, Storage};
use super::ast::*;
use super::{Level, Pos};
use crate::cap::Perms;
use crate::machine::Mode;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LowerOptions {
    pub blinding: bool,
    pub mode: Mode,
}

impl Default for LowerOptions {
    fn default() -> Self {
        LowerOptions { blinding: true, mode: Mode::Purecap }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LowerError {
    RegisterPressure(Pos),
    BlindingNeedsCapabilities,
}

impl LowerError {
    pub fn code(&self) -> &'static str {
        match self {
            LowerError::RegisterPressure(_) => "E_REGISTER_PRESSURE",
            LowerError::BlindingNeedsCapabilities => "E_UNSUPPORTED",
        }
    }

    pub fn pos(&self) -> Pos {
        match self {
            LowerError::RegisterPressure(p) => *p,
            LowerError::BlindingNeedsCapabilities => Pos { line: 1, col: 1 },
        }
    }
}

impl fmt::Display for LowerError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LowerError::RegisterPressure(_) => f.write_str("expression needs more temporary registers than available"),
            LowerError::BlindingNeedsCapabilities => f.write_str("blinding requires purecap mode"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectKind {
    Plain,
    Blinded,
    Result,
}

/// A stack object reached through its own capability.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Object {
    pub name: String,
    pub words: u64,
    pub kind: ObjectKind,
    /// A blinded scalar parameter, stored on entry instead of zeroed.
    pub param: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FnPlan {
    pub name: String,
    /// Scalars and pointers kept in plain frame slots.
    pub slots: Vec<String>,
    pub objects: Vec<Object>,
}

impl FnPlan {
    pub fn blinded_objects(&self) -> impl Iterator<Item = &Object> {
        self.objects.iter().filter(|o| o.kind == ObjectKind::Blinded)
    }

    /// Instructions retired per call on top of an unblinded build: one
    /// `LI`/`CANDPERM` pair and one exit zeroing loop per blinded object.
    pub fn blinding_cost(&self) -> u64 {
        self.blinded_objects().map(|o| 2 + zero_loop_len(o.words)).sum()
    }
}

/// Instructions retired by the loop that zeroes `words` words.
pub fn zero_loop_len(words: u64) -> u64 {
    3 + 3 * words
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Plan {
    pub functions: BTreeMap<String, FnPlan>,
}

/// Decides the storage of every variable.
pub fn instrument(prog: &Program, analysis: &Analysis) -> Plan {
    let mut plan = Plan::default();
    for f in &prog.functions {
        let mut fp = FnPlan { name: f.name.clone(), ..FnPlan::default() };
        let Some(facts) = analysis.functions.get(&f.name) else { continue };
        for (name, v) in &facts.vars {
            let kind = match (v.shape, v.storage) {
                (_, Storage::Result) => ObjectKind::Result,
                (_, Storage::Blinded) => ObjectKind::Blinded,
                (Shape::Array(_), _) => ObjectKind::Plain,
                _ => {
                    fp.slots.push(name.clone());
                    continue;
                }
            };
            fp.objects.push(Object { name: name.clone(), words: v.words(), kind, param: v.param });
        }
        plan.functions.insert(f.name.clone(), fp);
    }
    plan
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SiteKind {
    /// Value of the expression with this id.
    Value(u32),
    /// Data stored into a local variable or array.
    Store(String),
}

/// An instruction after which register `reg` holds a value whose
/// analysed level is `level`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Site {
    pub index: usize,
    pub reg: u8,
    pub func: String,
    pub kind: SiteKind,
    pub level: Level,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Lowered {
    pub asm: String,
    pub sites: Vec<Site>,
    /// Instruction index of each function's first instruction.
    pub entries: BTreeMap<String, usize>,
}

const TEMPS: [u8; 19] = [5, 6, 7, 8, 9, 18, 19, 20, 21, 22, 23, 24, 25, 26, 27, 28, 29, 30, 31];
const CSP: &str = "x2";

#[derive(Debug, Clone, Copy)]
enum Home {
    Slot(i64),
    /// Object capability slot(s): write, read.
    Object(i64, i64),
    Global,
}

struct Frame {
    homes: BTreeMap<String, Home>,
    spill: i64,
    size: i64,
}

fn frame_for(fp: &FnPlan, has_calls: bool) -> (Frame, Vec<(Object, i64)>) {
    let mut homes = BTreeMap::new();
    let mut off = 16;
    for s in &fp.slots {
        homes.insert(s.clone(), Home::Slot(off));
        off += 16;
    }
    for o in &fp.objects {
        if o.kind == ObjectKind::Result {
            homes.insert(o.name.clone(), Home::Object(off, off + 16));
            off += 32;
        } else {
            homes.insert(o.name.clone(), Home::Object(off, off));
            off += 16;
        }
    }
    let spill = off;
    if has_calls {
        off += 16 * TEMPS.len() as i64;
    }
    let mut storage = Vec::new();
    for o in &fp.objects {
        if o.kind != ObjectKind::Result {
            storage.push((o.clone(), off));
            off += (8 * o.words as i64 + 15) & !15;
        }
    }
    (Frame { homes, spill, size: off }, storage)
}

fn has_calls(ss: &[Stmt]) -> bool {
    fn e(x: &Expr) -> bool {
        match &x.kind {
            ExprKind::Call(..) => true,
            ExprKind::Index(_, a) | ExprKind::Unary(_, a) | ExprKind::Bmalloc(a) | ExprKind::Malloc(a) => e(a),
            ExprKind::Binary(_, a, b) => e(a) || e(b),
            ExprKind::Select(a, b, c) => e(a) || e(b) || e(c),
            _ => false,
        }
    }
    ss.iter().any(|s| match &s.kind {
        StmtKind::Decl(d) => d.init.as_ref().is_some_and(e),
        StmtKind::Assign(LValue::Index(_, i), x) => e(i) || e(x),
        StmtKind::Assign(_, x) | StmtKind::Out(x) | StmtKind::Free(x) | StmtKind::Expr(x) => e(x),
        StmtKind::If(c, a, b) => e(c) || has_calls(a) || has_calls(b),
        StmtKind::While(c, b) => e(c) || has_calls(b),
        StmtKind::Return(x) => x.as_ref().is_some_and(e),
        StmtKind::InputBlinded(a, n) => e(a) || e(n),
    })
}

struct Gen<'a> {
    prog: &'a Program,
    analysis: &'a Analysis,
    opts: LowerOptions,
    text: String,
    count: usize,
    next_label: usize,
    sites: Vec<Site>,
    // per function
    func: String,
    frame: Frame,
    busy: Vec<u8>,
    ret_label: String,
}

type R<T> = Result<T, LowerError>;

impl Gen<'_> {
    fn emit(&mut self, inst: &str) {
        let _ = writeln!(self.text, "    {inst}");
        self.count += 1;
    }

    fn label(&mut self, l: &str) {
        let _ = writeln!(self.text, "{l}:");
    }

    fn fresh(&mut self) -> String {
        self.next_label += 1;
        format!(".L{}", self.next_label)
    }

    fn alloc(&mut self, pos: Pos) -> R<u8> {
        let r = TEMPS.iter().copied().find(|r| !self.busy.contains(r)).ok_or(LowerError::RegisterPressure(pos))?;
        self.busy.push(r);
        Ok(r)
    }

    fn free(&mut self, r: u8) {
        self.busy.retain(|&b| b != r);
    }

    fn home(&self, name: &str) -> Home {
        self.frame.homes.get(name).copied().unwrap_or(Home::Global)
    }


    fn shape(&self, name: &str) -> Shape {
        match self.analysis.var(&self.func, name) {
            Some(v) => v.shape,
            None => self.prog.globals.iter().find(|g| g.name == name).expect("resolved").shape,
        }
    }

    /// Loads into `rd` the capability used to access `name`'s elements.
    fn base_cap(&mut self, rd: &str, name: &str, write: bool) {
        match self.home(name) {
            Home::Global => self.emit(&format!("CLLC {rd}, {name}")),
            Home::Object(w, r) => self.emit(&format!("CLC {rd}, {}({CSP})", if write { w } else { r })),
            Home::Slot(off) => self.emit(&format!("CLC {rd}, {off}({CSP})")),
        }
    }

    fn zero_loop(&mut self, cap_off: i64, words: u64) {
        let l = self.fresh();
        self.emit(&format!("CLC x3, {cap_off}({CSP})"));
        self.emit("LI x4, 0");
        self.emit(&format!("LI x17, {words}"));
        self.label(&l);
        self.emit("SDX x0, x4(x3)");
        self.emit("ADDI x4, x4, 1");
        self.emit(&format!("BLT x4, x17, {l}"));
    }

    fn site(&mut self, e: &Expr, r: u8) {
        let level = self.analysis.level(e);
        self.sites.push(Site { index: self.count - 1, reg: r, func: self.func.clone(), kind: SiteKind::Value(e.id), level });
    }

    fn store_site(&mut self, name: &str, r: u8) {
        if let Some(v) = self.analysis.var(&self.func, name) {
            if v.shape != Shape::Pointer {
                let kind = SiteKind::Store(name.to_string());
                self.sites.push(Site { index: self.count - 1, reg: r, func: self.func.clone(), kind, level: v.level });
            }
        }
    }

    fn int(&mut self, e: &Expr) -> R<u8> {
        let r = self.int_inner(e)?;
        self.site(e, r);
        Ok(r)
    }

    fn int_inner(&mut self, e: &Expr) -> R<u8> {
        match &e.kind {
            ExprKind::Int(v) => {
                let t = self.alloc(e.pos)?;
                self.emit(&format!("LI x{t}, {v}"));
                Ok(t)
            }
            ExprKind::Var(n) => {
                let t = self.alloc(e.pos)?;
                match self.home(n) {
                    Home::Slot(off) => self.emit(&format!("CLC x{t}, {off}({CSP})")),
                    _ => {
                        self.base_cap("x3", n, false);
                        self.emit(&format!("LD x{t}, 0(x3)"));
                    }
                }
                Ok(t)
            }
            ExprKind::Index(n, i) => {
                let t = self.int(i)?;
                self.base_cap("x3", n, false);
                self.emit(&format!("LDX x{t}, x{t}(x3)"));
                Ok(t)
            }
            ExprKind::Deref(n) => {
                let t = self.alloc(e.pos)?;
                self.base_cap("x3", n, false);
                self.emit(&format!("LD x{t}, 0(x3)"));
                Ok(t)
            }
            ExprKind::Unary(op, a) => {
                let t = self.int(a)?;
                match op {
                    UnOp::Neg => self.emit(&format!("SUB x{t}, x0, x{t}")),
                    UnOp::Not => {
                        self.emit(&format!("SLTU x{t}, x0, x{t}"));
                        self.emit(&format!("XORI x{t}, x{t}, 1"));
                    }
                    UnOp::BitNot => self.emit(&format!("XORI x{t}, x{t}, -1")),
                }
                Ok(t)
            }
            ExprKind::Binary(op, a, b) => {
                let x = self.int(a)?;
                let y = self.int(b)?;
                let simple = |m: &str| format!("{m} x{x}, x{x}, x{y}");
                match op {
                    BinOp::Mul => self.emit(&simple("MUL")),
                    BinOp::Add => self.emit(&simple("ADD")),
                    BinOp::Sub => self.emit(&simple("SUB")),
                    BinOp::Shl => self.emit(&simple("SLL")),
                    BinOp::Shr => self.emit(&simple("SRA")),
                    BinOp::BitAnd => self.emit(&simple("AND")),
                    BinOp::BitOr => self.emit(&simple("OR")),
                    BinOp::BitXor => self.emit(&simple("XOR")),
                    BinOp::Lt => self.emit(&simple("SLT")),
                    BinOp::Gt => self.emit(&format!("SLT x{x}, x{y}, x{x}")),
                    BinOp::Le => {
                        self.emit(&format!("SLT x{x}, x{y}, x{x}"));
                        self.emit(&format!("XORI x{x}, x{x}, 1"));
                    }
                    BinOp::Ge => {
                        self.emit(&simple("SLT"));
                        self.emit(&format!("XORI x{x}, x{x}, 1"));
                    }
                    BinOp::Eq | BinOp::Ne => {
                        self.emit(&simple("XOR"));
                        self.emit(&format!("SLTU x{x}, x0, x{x}"));
                        if *op == BinOp::Eq {
                            self.emit(&format!("XORI x{x}, x{x}, 1"));
                        }
                    }
                    BinOp::And => {
                        self.emit(&format!("SLTU x{x}, x0, x{x}"));
                        self.emit(&format!("SLTU x{y}, x0, x{y}"));
                        self.emit(&simple("AND"));
                    }
                    BinOp::Or => {
                        self.emit(&simple("OR"));
                        self.emit(&format!("SLTU x{x}, x0, x{x}"));
                    }
                }
                self.free(y);
                Ok(x)
            }
            ExprKind::Select(c, a, b) => {
                let m = self.int(c)?;
                self.emit(&format!("SLTU x{m}, x0, x{m}"));
                self.emit(&format!("SUB x{m}, x0, x{m}"));
                let x = self.int(a)?;
                let y = self.int(b)?;
                self.emit(&format!("AND x{x}, x{x}, x{m}"));
                self.emit(&format!("XORI x{m}, x{m}, -1"));
                self.emit(&format!("AND x{y}, x{y}, x{m}"));
                self.emit(&format!("OR x{x}, x{x}, x{y}"));
                self.free(y);
                self.free(m);
                Ok(x)
            }
            ExprKind::Input => {
                let t = self.alloc(e.pos)?;
                self.emit("LI x10, 5");
                self.emit("ECALL");
                self.emit(&format!("MV x{t}, x10"));
                Ok(t)
            }
            ExprKind::Call(f, args) => self.call(f, args, e.pos),
            ExprKind::Bmalloc(_) | ExprKind::Malloc(_) => self.ptr(e),
        }
    }

    fn ptr(&mut self, e: &Expr) -> R<u8> {
        match &e.kind {
            ExprKind::Var(n) => {
                let t = self.alloc(e.pos)?;
                self.base_cap(&format!("x{t}"), n, false);
                Ok(t)
            }
            ExprKind::Bmalloc(n) | ExprKind::Malloc(n) => {
                let t = self.int(n)?;
                let code = if matches!(e.kind, ExprKind::Bmalloc(_)) && self.opts.blinding { 2 } else { 1 };
                self.emit("LI x3, 8");
                self.emit(&format!("MUL x{t}, x{t}, x3"));
                self.emit(&format!("LI x10, {code}"));
                self.emit(&format!("MV x11, x{t}"));
                self.emit("ECALL");
                self.emit(&format!("MV x{t}, x10"));
                Ok(t)
            }
            _ => unreachable!("type checked"),
        }
    }

    fn call(&mut self, f: &str, args: &[Expr], pos: Pos) -> R<u8> {
        let callee = self.prog.function(f).expect("resolved");
        let live: Vec<u8> = self.busy.clone();
        let mut regs = Vec::new();
        for (a, p) in args.iter().zip(&callee.params) {
            regs.push(if p.shape == Shape::Pointer { self.ptr(a)? } else { self.int(a)? });
        }
        for &t in &live {
            let slot = self.spill_slot(t);
            self.emit(&format!("CSC x{t}, {slot}({CSP})"));
        }
        for (i, &t) in regs.iter().enumerate() {
            self.emit(&format!("MV x{}, x{t}", 10 + i));
            self.free(t);
        }
        self.emit(&format!("CLLC x3, {f}"));
        self.emit("CJALR x1, x3");
        let t = self.alloc(pos)?;
        self.emit(&format!("MV x{t}, x10"));
        for &s in &live {
            let slot = self.spill_slot(s);
            self.emit(&format!("CLC x{s}, {slot}({CSP})"));
        }
        Ok(t)
    }

    fn spill_slot(&self, t: u8) -> i64 {
        let k = TEMPS.iter().position(|&r| r == t).expect("temp register") as i64;
        self.frame.spill + 16 * k
    }

    fn assign_var(&mut self, name: &str, e: &Expr) -> R<()> {
        let t = if self.shape(name) == Shape::Pointer { self.ptr(e)? } else { self.int(e)? };
        match self.home(name) {
            Home::Slot(off) => self.emit(&format!("CSC x{t}, {off}({CSP})")),
            _ => {
                self.base_cap("x3", name, true);
                self.emit(&format!("SD x{t}, 0(x3)"));
            }
        }
        self.store_site(name, t);
        self.free(t);
        Ok(())
    }

    fn stmts(&mut self, ss: &[Stmt]) -> R<()> {
        for s in ss {
            self.stmt(s)?;
        }
        Ok(())
    }

    fn stmt(&mut self, s: &Stmt) -> R<()> {
        match &s.kind {
            StmtKind::Decl(d) => {
                if let Some(init) = &d.init {
                    self.assign_var(&d.name, init)?;
                }
            }
            StmtKind::Assign(LValue::Var(n), e) => self.assign_var(n, e)?,
            StmtKind::Assign(LValue::Index(n, i), e) => {
                let v = self.int(e)?;
                let t = self.int(i)?;
                self.base_cap("x3", n, true);
                self.emit(&format!("SDX x{v}, x{t}(x3)"));
                self.store_site(n, v);
                self.free(t);
                self.free(v);
            }
            StmtKind::Assign(LValue::Deref(n), e) => {
                let v = self.int(e)?;
                self.base_cap("x3", n, true);
                self.emit(&format!("SD x{v}, 0(x3)"));
                self.free(v);
            }
            StmtKind::If(c, a, b) => {
                let (l_else, l_end) = (self.fresh(), self.fresh());
                let t = self.int(c)?;
                self.emit(&format!("BEQ x{t}, x0, {l_else}"));
                self.free(t);
                self.stmts(a)?;
                self.emit(&format!("J {l_end}"));
                self.label(&l_else);
                self.stmts(b)?;
                self.label(&l_end);
            }
            StmtKind::While(c, body) => {
                let (l_top, l_end) = (self.fresh(), self.fresh());
                self.label(&l_top);
                let t = self.int(c)?;
                self.emit(&format!("BEQ x{t}, x0, {l_end}"));
                self.free(t);
                self.stmts(body)?;
                self.emit(&format!("J {l_top}"));
                self.label(&l_end);
            }
            StmtKind::Return(e) => {
                match e {
                    Some(e) => {
                        let t = self.int(e)?;
                        self.emit(&format!("MV x10, x{t}"));
                        self.free(t);
                    }
                    None => self.emit("LI x10, 0"),
                }
                let l = self.ret_label.clone();
                self.emit(&format!("J {l}"));
            }
            StmtKind::Out(e) => {
                let t = self.int(e)?;
                self.emit(&format!("OUT x{t}"));
                self.free(t);
            }
            StmtKind::Free(e) => {
                let t = self.ptr(e)?;
                self.emit("LI x10, 3");
                self.emit(&format!("MV x11, x{t}"));
                self.emit("ECALL");
                self.free(t);
            }
            StmtKind::InputBlinded(a, n) => {
                let p = self.ptr(a)?;
                let k = self.int(n)?;
                self.emit("LI x10, 6");
                self.emit(&format!("MV x11, x{p}"));
                self.emit(&format!("MV x12, x{k}"));
                self.emit("ECALL");
                self.free(k);
                self.free(p);
            }
            StmtKind::Expr(e) => {
                let t = match e.kind {
                    ExprKind::Bmalloc(_) | ExprKind::Malloc(_) | ExprKind::Var(_)
                        if !matches!(&e.kind, ExprKind::Var(n) if self.shape(n) == Shape::Scalar) =>
                    {
                        self.ptr(e)?
                    }
                    _ => self.int(e)?,
                };
                self.free(t);
            }
        }
        Ok(())
    }

    fn function(&mut self, f: &Function, fp: &FnPlan) -> R<()> {
        let (frame, storage) = frame_for(fp, has_calls(&f.body));
        self.frame = frame;
        self.func = f.name.clone();
        self.busy.clear();
        self.ret_label = self.fresh();
        let size = self.frame.size;
        let purecap = self.opts.mode == Mode::Purecap;
        let blind_mask = (Perms::LOAD | Perms::STORE).bits();

        self.label(&f.name);
        self.emit(&format!("LI x3, {}", -size));
        self.emit(&format!("CINCOFFSET {CSP}, {CSP}, x3"));
        self.emit(&format!("CSC x1, 0({CSP})"));
        for (i, p) in f.params.iter().enumerate() {
            if let Home::Slot(off) = self.home(&p.name) {
                self.emit(&format!("CSC x{}, {off}({CSP})", 10 + i));
            }
        }
        for (o, off) in &storage {
            let Home::Object(slot, _) = self.home(&o.name) else { unreachable!() };
            self.emit(&format!("LI x3, {off}"));
            self.emit(&format!("CINCOFFSET x4, {CSP}, x3"));
            if purecap {
                self.emit(&format!("LI x3, {}", 8 * o.words));
                self.emit("CSETBOUNDS x4, x4, x3");
                if self.opts.blinding && o.kind == ObjectKind::Blinded {
                    self.emit(&format!("LI x3, {blind_mask}"));
                    self.emit("CANDPERM x4, x4, x3");
                }
            }
            self.emit(&format!("CSC x4, {slot}({CSP})"));
        }
        for (o, _) in &storage {
            if let (Some(i), Home::Object(slot, _)) = (o.param, self.home(&o.name)) {
                self.emit(&format!("CLC x3, {slot}({CSP})"));
                self.emit(&format!("SD x{}, 0(x3)", 10 + i));
            }
        }
        for s in &fp.slots {
            let is_param = f.params.iter().any(|p| &p.name == s);
            if let (false, Home::Slot(off)) = (is_param, self.home(s)) {
                self.emit(&format!("CSC x0, {off}({CSP})"));
            }
        }
        for (o, _) in &storage {
            if o.param.is_none() {
                let Home::Object(slot, _) = self.home(&o.name) else { unreachable!() };
                self.zero_loop(slot, o.words);
            }
        }
        for o in fp.objects.iter().filter(|o| o.kind == ObjectKind::Result) {
            let Home::Object(w, r) = self.home(&o.name) else { unreachable!() };
            self.emit("LI x10, 4");
            self.emit(&format!("LI x11, {}", 8 * o.words));
            self.emit("ECALL");
            self.emit(&format!("CSC x10, {w}({CSP})"));
            self.emit(&format!("CSC x11, {r}({CSP})"));
            self.zero_loop(w, o.words);
        }

        self.stmts(&f.body)?;
        self.emit("LI x10, 0");
        let l = self.ret_label.clone();
        self.label(&l);
        if self.opts.blinding {
            for o in fp.blinded_objects() {
                let Home::Object(slot, _) = self.home(&o.name) else { unreachable!() };
                self.zero_loop(slot, o.words);
            }
        }
        self.emit(&format!("CLC x1, 0({CSP})"));
        self.emit(&format!("LI x3, {size}"));
        self.emit(&format!("CINCOFFSET {CSP}, {CSP}, x3"));
        self.emit("CJALR x0, x1");
        Ok(())
    }
}

/// Lowers an analysed program to assembly text.
pub fn lower(prog: &Program, analysis: &Analysis, plan: &Plan, opts: LowerOptions) -> Result<Lowered, LowerError> {
    if opts.blinding && opts.mode == Mode::Bare {
        return Err(LowerError::BlindingNeedsCapabilities);
    }
    let mut g = Gen {
        prog,
        analysis,
        opts,
        text: String::new(),
        count: 0,
        next_label: 0,
        sites: Vec::new(),
        func: String::new(),
        frame: Frame { homes: BTreeMap::new(), spill: 0, size: 0 },
        busy: Vec::new(),
        ret_label: String::new(),
    };
    g.text.push_str(".text\n");
    g.emit("CLLC x3, main");
    g.emit("CJALR x1, x3");
    g.emit("HALT");
    let mut entries = BTreeMap::new();
    for f in &prog.functions {
        entries.insert(f.name.clone(), g.count);
        g.function(f, &plan.functions[&f.name])?;
    }
    let (plain, blinded): (Vec<&Global>, Vec<&Global>) =
        prog.globals.iter().partition(|gl| !(gl.blinded && opts.blinding));
    for (section, list) in [(".data", plain), (".blinded", blinded)] {
        if list.is_empty() {
            continue;
        }
        g.text.push_str(section);
        g.text.push('\n');
        for gl in list {
            let words = match gl.shape {
                Shape::Array(n) => n,
                _ => 1,
            };
            let mut vals: Vec<String> = gl.init.iter().map(|v| v.to_string()).collect();
            vals.resize(words as usize, "0".to_string());
            let _ = writeln!(g.text, "{}: .word {}", gl.name, vals.join(", "));
            g.text.push_str("    .align 16\n");
        }
    }
    Ok(Lowered { asm: g.text, sites: g.sites, entries })
}
