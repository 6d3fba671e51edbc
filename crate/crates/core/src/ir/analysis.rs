//! Name resolution, type checking and the blindedness dataflow analysis.
//!
//! Scalars held in ordinary stack slots are tracked flow-sensitively: each
//! assignment sets the variable's level and control-flow joins use
//! [`Level::merge`]. Storage classes are whole-function facts: an array
//! that ever receives a possibly blinded value becomes a blinded object, and
//! a scalar whose every read is `Must` is given blinded storage. Calls are
//! summarised by parameter and return levels iterated to a fixed point over
//! the whole program.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::ast::*;
use super::{Diagnostic, Level, Pos};

/// What a pointer may point to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PtrClass {
    Plain,
    Blinded,
    Unknown,
}

impl PtrClass {
    fn merge(self, other: PtrClass) -> PtrClass {
        if self == other {
            self
        } else {
            PtrClass::Unknown
        }
    }
}

/// Where a variable lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Storage {
    /// Ordinary stack storage (scalars spill with CSC/CLC through CSP).
    Slot,
    /// Stack object reached only through its own blinded capability.
    Blinded,
    /// Declassification buffer: blinded write capability, plain read one.
    Result,
    Global,
    BlindedGlobal,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarFacts {
    pub shape: Shape,
    pub storage: Storage,
    pub param: Option<usize>,
    /// Highest level stored into or read from the variable.
    pub level: Level,
    pub pos: Pos,
}

impl VarFacts {
    pub fn words(&self) -> u64 {
        match self.shape {
            Shape::Array(n) => n,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FnFacts {
    /// Level of each parameter on entry.
    pub params: Vec<Level>,
    pub ret: Level,
    /// Locals and parameters.
    pub vars: BTreeMap<String, VarFacts>,
}

#[derive(Debug, Clone, Default)]
pub struct Analysis {
    pub diagnostics: Vec<Diagnostic>,
    pub functions: BTreeMap<String, FnFacts>,
    /// Level of every analysed expression, by expression id.
    pub exprs: BTreeMap<u32, Level>,
}

impl Analysis {
    pub fn has_errors(&self) -> bool {
        self.diagnostics.iter().any(Diagnostic::is_error)
    }

    pub fn level(&self, expr: &Expr) -> Level {
        self.exprs.get(&expr.id).copied().unwrap_or_default()
    }

    pub fn var(&self, func: &str, name: &str) -> Option<&VarFacts> {
        self.functions.get(func)?.vars.get(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ty {
    Int,
    Ptr,
}

#[derive(Debug, Clone)]
struct Local {
    shape: Shape,
    annot: Option<Annot>,
    param: Option<usize>,
    pos: Pos,
}

/// Declarations of one function, in source order.
fn collect_locals(f: &Function, diags: &mut Vec<Diagnostic>) -> BTreeMap<String, Local> {
    let mut locals = BTreeMap::new();
    for (i, p) in f.params.iter().enumerate() {
        let annot = p.blinded.then_some(Annot::Blinded);
        if locals
            .insert(p.name.clone(), Local { shape: p.shape, annot, param: Some(i), pos: p.pos })
            .is_some()
        {
            diags.push(Diagnostic::error("E_REDECLARED", p.pos, format!("parameter `{}` declared twice", p.name)));
        }
    }
    fn walk(ss: &[Stmt], locals: &mut BTreeMap<String, Local>, diags: &mut Vec<Diagnostic>) {
        for s in ss {
            match &s.kind {
                StmtKind::Decl(d) => {
                    if d.annot == Some(Annot::Blinded) && d.shape == Shape::Pointer {
                        diags.push(Diagnostic::error(
                            "E_ANNOTATION",
                            d.pos,
                            "`@blinded` on a local pointer; annotate the allocation or the parameter instead".into(),
                        ));
                    }
                    let l = Local { shape: d.shape, annot: d.annot, param: None, pos: d.pos };
                    if locals.insert(d.name.clone(), l).is_some() {
                        diags.push(Diagnostic::error("E_REDECLARED", d.pos, format!("`{}` declared twice", d.name)));
                    }
                }
                StmtKind::If(_, a, b) => {
                    walk(a, locals, diags);
                    walk(b, locals, diags);
                }
                StmtKind::While(_, b) => walk(b, locals, diags),
                _ => {}
            }
        }
    }
    walk(&f.body, &mut locals, diags);
    locals
}

struct Checker<'a> {
    prog: &'a Program,
    locals: &'a BTreeMap<String, Local>,
    declared: BTreeSet<String>,
    diags: &'a mut Vec<Diagnostic>,
}

impl Checker<'_> {
    fn err(&mut self, code: &'static str, pos: Pos, msg: String) {
        self.diags.push(Diagnostic::error(code, pos, msg));
    }

    fn shape_of(&mut self, name: &str, pos: Pos) -> Option<(Shape, bool)> {
        if let Some(l) = self.locals.get(name) {
            if l.param.is_none() && !self.declared.contains(name) {
                self.err("E_UNDECLARED", pos, format!("`{name}` used before its declaration"));
                return None;
            }
            return Some((l.shape, l.annot == Some(Annot::Result)));
        }
        if let Some(g) = self.prog.globals.iter().find(|g| g.name == name) {
            return Some((g.shape, false));
        }
        self.err("E_UNDECLARED", pos, format!("undeclared variable `{name}`"));
        None
    }

    fn want(&mut self, e: &Expr, ty: Ty) {
        if let Some(got) = self.expr(e) {
            if got != ty {
                let (w, g) = if ty == Ty::Int { ("an integer", "a pointer") } else { ("a pointer", "an integer") };
                self.err("E_TYPE", e.pos, format!("expected {w}, found {g}"));
            }
        }
    }

    fn indexable(&mut self, name: &str, pos: Pos) {
        if let Some((Shape::Scalar, _)) = self.shape_of(name, pos) {
            self.err("E_TYPE", pos, format!("`{name}` is not an array or pointer"));
        }
    }

    fn expr(&mut self, e: &Expr) -> Option<Ty> {
        match &e.kind {
            ExprKind::Int(_) | ExprKind::Input => Some(Ty::Int),
            ExprKind::Var(n) => match self.shape_of(n, e.pos)? {
                (Shape::Scalar, _) => Some(Ty::Int),
                (Shape::Array(_), true) => {
                    self.err("E_TYPE", e.pos, format!("result array `{n}` can only be indexed"));
                    None
                }
                _ => Some(Ty::Ptr),
            },
            ExprKind::Index(n, i) => {
                self.indexable(n, e.pos);
                self.want(i, Ty::Int);
                Some(Ty::Int)
            }
            ExprKind::Deref(n) => {
                if let Some((s, _)) = self.shape_of(n, e.pos) {
                    if s != Shape::Pointer {
                        self.err("E_TYPE", e.pos, format!("`{n}` is not a pointer"));
                    }
                }
                Some(Ty::Int)
            }
            ExprKind::Unary(_, a) => {
                self.want(a, Ty::Int);
                Some(Ty::Int)
            }
            ExprKind::Binary(_, a, b) => {
                self.want(a, Ty::Int);
                self.want(b, Ty::Int);
                Some(Ty::Int)
            }
            ExprKind::Select(c, x, y) => {
                self.want(c, Ty::Int);
                self.want(x, Ty::Int);
                self.want(y, Ty::Int);
                Some(Ty::Int)
            }
            ExprKind::Bmalloc(n) | ExprKind::Malloc(n) => {
                self.want(n, Ty::Int);
                Some(Ty::Ptr)
            }
            ExprKind::Call(f, args) => {
                let Some(callee) = self.prog.function(f) else {
                    self.err("E_UNKNOWN_FN", e.pos, format!("unknown function `{f}`"));
                    return Some(Ty::Int);
                };
                if callee.params.len() != args.len() {
                    self.err(
                        "E_ARITY",
                        e.pos,
                        format!("`{f}` takes {} argument(s), {} given", callee.params.len(), args.len()),
                    );
                    return Some(Ty::Int);
                }
                if args.len() > 8 {
                    self.err("E_ARITY", e.pos, "at most 8 arguments are supported".into());
                }
                let shapes: Vec<Shape> = callee.params.iter().map(|p| p.shape).collect();
                for (a, s) in args.iter().zip(shapes) {
                    self.want(a, if s == Shape::Pointer { Ty::Ptr } else { Ty::Int });
                }
                Some(Ty::Int)
            }
        }
    }

    fn stmts(&mut self, ss: &[Stmt]) {
        for s in ss {
            self.stmt(s);
        }
    }

    fn stmt(&mut self, s: &Stmt) {
        match &s.kind {
            StmtKind::Decl(d) => {
                self.declared.insert(d.name.clone());
                if let Some(init) = &d.init {
                    self.want(init, if d.shape == Shape::Pointer { Ty::Ptr } else { Ty::Int });
                }
            }
            StmtKind::Assign(lv, e) => match lv {
                LValue::Var(n) => match self.shape_of(n, s.pos) {
                    Some((Shape::Array(_), _)) => self.err("E_TYPE", s.pos, format!("cannot assign to array `{n}`")),
                    Some((Shape::Pointer, _)) => self.want(e, Ty::Ptr),
                    Some((Shape::Scalar, _)) => self.want(e, Ty::Int),
                    None => {}
                },
                LValue::Index(n, i) => {
                    self.indexable(n, s.pos);
                    self.want(i, Ty::Int);
                    self.want(e, Ty::Int);
                }
                LValue::Deref(n) => {
                    if let Some((sh, _)) = self.shape_of(n, s.pos) {
                        if sh != Shape::Pointer {
                            self.err("E_TYPE", s.pos, format!("`{n}` is not a pointer"));
                        }
                    }
                    self.want(e, Ty::Int);
                }
            },
            StmtKind::If(c, a, b) => {
                self.want(c, Ty::Int);
                self.stmts(a);
                self.stmts(b);
            }
            StmtKind::While(c, b) => {
                self.want(c, Ty::Int);
                self.stmts(b);
            }
            StmtKind::Return(e) => {
                if let Some(e) = e {
                    self.want(e, Ty::Int);
                }
            }
            StmtKind::Out(e) => self.want(e, Ty::Int),
            StmtKind::Free(e) => self.want(e, Ty::Ptr),
            StmtKind::InputBlinded(a, n) => {
                if let ExprKind::Var(name) = &a.kind {
                    if let Some((Shape::Array(_), true)) = self.shape_of(name, a.pos) {
                        self.err("E_BLINDED_STORE", a.pos, format!("secret input into result array `{name}`"));
                        return;
                    }
                }
                self.want(a, Ty::Ptr);
                self.want(n, Ty::Int);
            }
            StmtKind::Expr(e) => {
                self.expr(e);
            }
        }
    }
}

fn resolve(prog: &Program) -> (Vec<Diagnostic>, BTreeMap<String, BTreeMap<String, Local>>) {
    let mut diags = Vec::new();
    let mut names = BTreeSet::new();
    for g in &prog.globals {
        if !names.insert(g.name.as_str()) {
            diags.push(Diagnostic::error("E_REDECLARED", g.pos, format!("global `{}` declared twice", g.name)));
        }
        if g.shape == Shape::Pointer {
            diags.push(Diagnostic::error("E_TYPE", g.pos, "global pointers are not supported".into()));
        }
    }
    let mut fnames = BTreeSet::new();
    for f in &prog.functions {
        if !fnames.insert(f.name.as_str()) {
            diags.push(Diagnostic::error("E_REDECLARED", f.pos, format!("function `{}` defined twice", f.name)));
        }
        if names.contains(f.name.as_str()) {
            diags.push(Diagnostic::error("E_REDECLARED", f.pos, format!("`{}` is both a global and a function", f.name)));
        }
    }
    match prog.function("main") {
        None => diags.push(Diagnostic::error("E_NO_MAIN", Pos { line: 1, col: 1 }, "no `main` function".into())),
        Some(m) if !m.params.is_empty() => {
            diags.push(Diagnostic::error("E_ARITY", m.pos, "`main` takes no parameters".into()))
        }
        _ => {}
    }
    let mut all = BTreeMap::new();
    for f in &prog.functions {
        let locals = collect_locals(f, &mut diags);
        let mut c = Checker { prog, locals: &locals, declared: BTreeSet::new(), diags: &mut diags };
        c.stmts(&f.body);
        all.insert(f.name.clone(), locals);
    }
    (diags, all)
}

/// Whole-program facts iterated to a fixed point.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
struct Facts {
    params: BTreeMap<String, Vec<Level>>,
    rets: BTreeMap<String, Level>,
    blinded_arrays: BTreeSet<(String, String)>,
    blinded_scalars: BTreeSet<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct State {
    levels: BTreeMap<String, Level>,
    ptrs: BTreeMap<String, PtrClass>,
}

impl State {
    fn merge(&self, other: &State) -> State {
        State {
            levels: self.levels.iter().map(|(k, v)| (k.clone(), v.merge(other.levels[k]))).collect(),
            ptrs: self.ptrs.iter().map(|(k, v)| (k.clone(), v.merge(other.ptrs[k]))).collect(),
        }
    }
}

#[derive(Default)]
struct PassOut {
    diags: Vec<Diagnostic>,
    exprs: BTreeMap<u32, Level>,
    var_levels: BTreeMap<String, Level>,
    /// For each slot scalar: (reads, all reads were `Must`).
    reads: BTreeMap<String, (usize, bool)>,
    promote: BTreeSet<String>,
    call_args: Vec<(String, usize, Level)>,
    returns: Vec<Level>,
}

struct Pass<'a> {
    prog: &'a Program,
    func: &'a Function,
    facts: &'a Facts,
    storage: BTreeMap<String, Storage>,
    locals: &'a BTreeMap<String, Local>,
    out: PassOut,
}

fn storage_of(fname: &str, name: &str, l: &Local, facts: &Facts) -> Storage {
    let key = (fname.to_string(), name.to_string());
    match (l.shape, l.annot) {
        (Shape::Pointer, _) => Storage::Slot,
        (Shape::Array(_), Some(Annot::Result)) => Storage::Result,
        (_, Some(Annot::Blinded)) => Storage::Blinded,
        (Shape::Array(_), _) if facts.blinded_arrays.contains(&key) => Storage::Blinded,
        (Shape::Scalar, _) if l.param.is_none() && facts.blinded_scalars.contains(&key) => Storage::Blinded,
        _ => Storage::Slot,
    }
}

impl Pass<'_> {
    fn diag(&mut self, report: bool, d: Diagnostic) {
        if report {
            self.out.diags.push(d);
        }
    }

    /// Storage and shape of a name visible in this function.
    fn lookup(&self, name: &str) -> (Shape, Storage) {
        if let Some(l) = self.locals.get(name) {
            return (l.shape, self.storage[name]);
        }
        let g = self.prog.globals.iter().find(|g| g.name == name).expect("resolved");
        (g.shape, if g.blinded { Storage::BlindedGlobal } else { Storage::Global })
    }

    fn note_var(&mut self, report: bool, name: &str, lvl: Level) {
        if report && self.locals.contains_key(name) {
            let e = self.out.var_levels.entry(name.to_string()).or_default();
            *e = (*e).max(lvl);
        }
    }

    fn graded(
        &mut self,
        report: bool,
        lvl: Level,
        pos: Pos,
        codes: (&'static str, &'static str),
        what: impl FnOnce() -> String,
    ) {
        match lvl {
            Level::Must => self.diag(report, Diagnostic::error(codes.0, pos, what())),
            Level::May => self.diag(report, Diagnostic::warning(codes.1, pos, what())),
            Level::Unblinded => {}
        }
    }

    fn check_index(&mut self, report: bool, idx: &Expr, st: &State) {
        let lvl = self.eval(report, idx, st);
        self.graded(report, lvl, idx.pos, ("E_BLINDED_INDEX", "W_MAYBE_BLINDED_INDEX"), || match lvl {
            Level::Must => "blinded value used as a memory index".into(),
            _ => "value used as a memory index may be blinded".into(),
        });
    }

    fn element_level(&self, name: &str, st: &State) -> Level {
        match self.lookup(name) {
            (Shape::Pointer, _) => match st.ptrs[name] {
                PtrClass::Blinded => Level::Must,
                PtrClass::Plain => Level::Unblinded,
                PtrClass::Unknown => Level::May,
            },
            (_, Storage::Blinded | Storage::BlindedGlobal) => Level::Must,
            _ => Level::Unblinded,
        }
    }

    fn ptr_class(&mut self, report: bool, e: &Expr, st: &State) -> PtrClass {
        match &e.kind {
            ExprKind::Var(n) => match self.lookup(n) {
                (Shape::Pointer, _) => st.ptrs[n],
                (_, Storage::Blinded | Storage::BlindedGlobal) => PtrClass::Blinded,
                _ => PtrClass::Plain,
            },
            ExprKind::Bmalloc(n) => {
                self.size_arg(report, n, st);
                PtrClass::Blinded
            }
            ExprKind::Malloc(n) => {
                self.size_arg(report, n, st);
                PtrClass::Plain
            }
            _ => PtrClass::Unknown,
        }
    }

    fn size_arg(&mut self, report: bool, n: &Expr, st: &State) {
        let lvl = self.eval(report, n, st);
        self.graded(report, lvl, n.pos, ("E_BLINDED_ARG", "W_MAYBE_BLINDED_ARG"), || {
            "allocation size may be blinded".into()
        });
    }

    fn eval(&mut self, report: bool, e: &Expr, st: &State) -> Level {
        let lvl = match &e.kind {
            ExprKind::Int(_) | ExprKind::Input => Level::Unblinded,
            ExprKind::Var(n) => match self.lookup(n) {
                (Shape::Scalar, Storage::Slot) => {
                    let l = st.levels[n];
                    if report && self.locals[n].param.is_none() {
                        let r = self.out.reads.entry(n.clone()).or_insert((0, true));
                        r.0 += 1;
                        r.1 &= l == Level::Must;
                    }
                    l
                }
                (Shape::Scalar, Storage::Blinded | Storage::BlindedGlobal) => Level::Must,
                _ => Level::Unblinded,
            },
            ExprKind::Index(n, i) => {
                self.check_index(report, i, st);
                self.element_level(n, st)
            }
            ExprKind::Deref(n) => self.element_level(n, st),
            ExprKind::Unary(_, a) => self.eval(report, a, st),
            ExprKind::Binary(_, a, b) => {
                let (x, y) = (self.eval(report, a, st), self.eval(report, b, st));
                x.join(y)
            }
            ExprKind::Select(c, x, y) => {
                let l = self.eval(report, c, st);
                l.join(self.eval(report, x, st)).join(self.eval(report, y, st))
            }
            ExprKind::Bmalloc(_) | ExprKind::Malloc(_) => {
                self.ptr_class(report, e, st);
                Level::Unblinded
            }
            ExprKind::Call(f, args) => {
                let callee = self.prog.function(f).expect("resolved");
                for (i, (a, p)) in args.iter().zip(&callee.params).enumerate() {
                    if p.shape == Shape::Pointer {
                        let class = self.ptr_class(report, a, st);
                        if p.blinded {
                            match class {
                                PtrClass::Plain => self.diag(
                                    report,
                                    Diagnostic::error(
                                        "E_BLINDED_ARG",
                                        a.pos,
                                        format!("non-blinded memory passed to blinded parameter `{}`", p.name),
                                    ),
                                ),
                                PtrClass::Unknown => self.diag(
                                    report,
                                    Diagnostic::warning(
                                        "W_MAYBE_BLINDED_ARG",
                                        a.pos,
                                        format!("memory passed to blinded parameter `{}` may not be blinded", p.name),
                                    ),
                                ),
                                PtrClass::Blinded => {}
                            }
                        }
                    } else {
                        let lvl = self.eval(report, a, st);
                        if !p.blinded && lvl.is_blinded() {
                            self.diag(
                                report,
                                Diagnostic::warning(
                                    "W_MAYBE_BLINDED_ARG",
                                    a.pos,
                                    format!("possibly blinded value passed to unannotated parameter `{}` of `{f}`", p.name),
                                ),
                            );
                            if report {
                                self.out.call_args.push((f.clone(), i, lvl));
                            }
                        }
                    }
                }
                if callee.blinded {
                    Level::Must
                } else {
                    self.facts.rets.get(f).copied().unwrap_or_default()
                }
            }
        };
        if report {
            self.out.exprs.insert(e.id, lvl);
        }
        lvl
    }

    fn store_element(&mut self, report: bool, name: &str, lvl: Level, st: &State, pos: Pos) {
        match self.lookup(name) {
            (Shape::Pointer, _) => match st.ptrs[name] {
                PtrClass::Blinded => {}
                PtrClass::Plain => self.graded(report, lvl, pos, ("E_BLINDED_STORE", "W_MAYBE_BLINDED_STORE"), || {
                    format!("possibly blinded value stored through non-blinded pointer `{name}`")
                }),
                PtrClass::Unknown => {
                    if lvl.is_blinded() {
                        self.diag(
                            report,
                            Diagnostic::warning(
                                "W_MAYBE_BLINDED_STORE",
                                pos,
                                format!("blinded value stored through `{name}`, which may point to non-blinded memory"),
                            ),
                        );
                    }
                }
            },
            (_, Storage::Slot) => {
                if lvl.is_blinded() && report {
                    self.out.promote.insert(name.to_string());
                }
                self.note_var(report, name, lvl);
            }
            (_, Storage::Global) => self.graded(report, lvl, pos, ("E_BLINDED_STORE", "W_MAYBE_BLINDED_STORE"), || {
                format!("blinded value stored into non-blinded global `{name}`")
            }),
            (_, Storage::Blinded) => self.note_var(report, name, Level::Must),
            _ => self.note_var(report, name, lvl),
        }
    }

    fn stmts(&mut self, report: bool, ss: &[Stmt], st: &mut State) {
        for s in ss {
            self.stmt(report, s, st);
        }
    }

    fn assign_var(&mut self, report: bool, name: &str, e: &Expr, st: &mut State, pos: Pos) {
        match self.lookup(name) {
            (Shape::Pointer, _) => {
                let c = self.ptr_class(report, e, st);
                if report {
                    self.out.exprs.insert(e.id, Level::Unblinded);
                }
                st.ptrs.insert(name.to_string(), c);
            }
            (_, Storage::Slot) => {
                let lvl = self.eval(report, e, st);
                st.levels.insert(name.to_string(), lvl);
                self.note_var(report, name, lvl);
            }
            (_, Storage::Global) => {
                let lvl = self.eval(report, e, st);
                self.graded(report, lvl, pos, ("E_BLINDED_STORE", "W_MAYBE_BLINDED_STORE"), || {
                    format!("blinded value stored into non-blinded global `{name}`")
                });
            }
            _ => {
                self.eval(report, e, st);
                self.note_var(report, name, Level::Must);
            }
        }
    }

    fn branch(&mut self, report: bool, c: &Expr, st: &State) {
        let lvl = self.eval(report, c, st);
        self.graded(report, lvl, c.pos, ("E_BLINDED_BRANCH", "W_MAYBE_BLINDED_BRANCH"), || match lvl {
            Level::Must => "blinded value used in a control-flow decision".into(),
            _ => "control-flow decision on a value that may be blinded; faults at run time if it is".into(),
        });
    }

    fn stmt(&mut self, report: bool, s: &Stmt, st: &mut State) {
        match &s.kind {
            StmtKind::Decl(d) => {
                if let Some(init) = &d.init {
                    self.assign_var(report, &d.name, init, st, d.pos);
                }
            }
            StmtKind::Assign(lv, e) => match lv {
                LValue::Var(n) => self.assign_var(report, n, e, st, s.pos),
                LValue::Index(n, i) => {
                    let v = self.eval(report, e, st);
                    self.check_index(report, i, st);
                    self.store_element(report, n, v, st, s.pos);
                }
                LValue::Deref(n) => {
                    let v = self.eval(report, e, st);
                    self.store_element(report, n, v, st, s.pos);
                }
            },
            StmtKind::If(c, a, b) => {
                self.branch(report, c, st);
                let mut sa = st.clone();
                self.stmts(report, a, &mut sa);
                let mut sb = st.clone();
                self.stmts(report, b, &mut sb);
                *st = sa.merge(&sb);
            }
            StmtKind::While(c, body) => {
                loop {
                    let mut sb = st.clone();
                    self.eval(false, c, st);
                    self.stmts(false, body, &mut sb);
                    let m = st.merge(&sb);
                    if m == *st {
                        break;
                    }
                    *st = m;
                }
                self.branch(report, c, st);
                let mut sb = st.clone();
                self.stmts(report, body, &mut sb);
            }
            StmtKind::Return(e) => {
                let lvl = match e {
                    Some(e) => self.eval(report, e, st),
                    None => Level::Unblinded,
                };
                if report {
                    self.out.returns.push(lvl);
                }
                if !self.func.blinded && lvl.is_blinded() {
                    self.diag(
                        report,
                        Diagnostic::warning(
                            "W_BLINDED_RETURN",
                            s.pos,
                            format!("`{}` returns a possibly blinded value but is not declared `@blinded`", self.func.name),
                        ),
                    );
                }
            }
            StmtKind::Out(e) => {
                let lvl = self.eval(report, e, st);
                self.graded(report, lvl, e.pos, ("E_BLINDED_OUT", "W_MAYBE_BLINDED_OUT"), || match lvl {
                    Level::Must => "blinded value sent to the output channel".into(),
                    _ => "value sent to the output channel may be blinded".into(),
                });
            }
            StmtKind::Free(e) => {
                self.ptr_class(report, e, st);
            }
            StmtKind::InputBlinded(a, n) => {
                self.size_arg(report, n, st);
                match &a.kind {
                    ExprKind::Var(name) if self.lookup(name).0 != Shape::Pointer => {
                        self.store_element(report, name, Level::Must, st, a.pos)
                    }
                    ExprKind::Var(name) => self.store_element(report, name, Level::Must, st, a.pos),
                    _ => match self.ptr_class(report, a, st) {
                        PtrClass::Plain => self.diag(
                            report,
                            Diagnostic::error("E_BLINDED_STORE", a.pos, "secret input into non-blinded memory".into()),
                        ),
                        PtrClass::Unknown => self.diag(
                            report,
                            Diagnostic::warning(
                                "W_MAYBE_BLINDED_STORE",
                                a.pos,
                                "secret input into memory that may not be blinded".into(),
                            ),
                        ),
                        PtrClass::Blinded => {}
                    },
                }
            }
            StmtKind::Expr(e) => {
                self.eval(report, e, st);
            }
        }
    }
}

fn run_function(prog: &Program, f: &Function, locals: &BTreeMap<String, Local>, facts: &Facts) -> (PassOut, FnFacts) {
    let storage: BTreeMap<String, Storage> =
        locals.iter().map(|(n, l)| (n.clone(), storage_of(&f.name, n, l, facts))).collect();
    let params = facts.params.get(&f.name).cloned().unwrap_or_else(|| vec_of(f.params.len()));
    let mut st = State { levels: BTreeMap::new(), ptrs: BTreeMap::new() };
    for (n, l) in locals {
        match (l.shape, l.param) {
            (Shape::Pointer, Some(i)) => {
                st.ptrs.insert(n.clone(), if f.params[i].blinded { PtrClass::Blinded } else { PtrClass::Unknown });
            }
            (Shape::Pointer, None) => {
                st.ptrs.insert(n.clone(), PtrClass::Plain);
            }
            (Shape::Scalar, Some(i)) => {
                st.levels.insert(n.clone(), params[i]);
            }
            (Shape::Scalar, None) => {
                st.levels.insert(n.clone(), Level::Unblinded);
            }
            _ => {}
        }
    }
    let mut pass = Pass { prog, func: f, facts, storage, locals, out: PassOut::default() };
    for (n, l) in locals {
        if let Some(i) = l.param {
            if l.shape == Shape::Scalar {
                let lvl = if pass.storage[n] == Storage::Blinded { Level::Must } else { params[i] };
                pass.note_var(true, n, lvl);
            }
        }
    }
    pass.stmts(true, &f.body, &mut st);
    let ends_with_return = matches!(f.body.last(), Some(Stmt { kind: StmtKind::Return(_), .. }));
    if !ends_with_return {
        pass.out.returns.push(Level::Unblinded);
    }
    let ret = if f.blinded {
        Level::Must
    } else {
        pass.out.returns.iter().copied().reduce(Level::merge).unwrap_or_default()
    };
    let vars = locals
        .iter()
        .map(|(n, l)| {
            let facts = VarFacts {
                shape: l.shape,
                storage: pass.storage[n],
                param: l.param,
                level: pass.out.var_levels.get(n).copied().unwrap_or_default(),
                pos: l.pos,
            };
            (n.clone(), facts)
        })
        .collect();
    let out = pass.out;
    (out, FnFacts { params, ret, vars })
}

fn vec_of(n: usize) -> Vec<Level> {
    alloc::vec![Level::Unblinded; n]
}

/// Runs name resolution and the blindedness analysis.
pub fn analyze(prog: &Program) -> Analysis {
    let (diags, locals) = resolve(prog);
    if diags.iter().any(Diagnostic::is_error) {
        return Analysis { diagnostics: diags, ..Analysis::default() };
    }
    let mut facts = Facts::default();
    for f in &prog.functions {
        let lv = f.params.iter().map(|p| if p.blinded { Level::Must } else { Level::Unblinded }).collect();
        facts.params.insert(f.name.clone(), lv);
    }
    for _round in 0..64 {
        let mut next = facts.clone();
        let mut result = Analysis::default();
        for f in &prog.functions {
            let (out, ff) = run_function(prog, f, &locals[&f.name], &facts);
            for (callee, i, lvl) in &out.call_args {
                let slot = &mut next.params.get_mut(callee).expect("known")[*i];
                if lvl.is_blinded() && *slot == Level::Unblinded {
                    *slot = Level::May;
                }
            }
            let r = next.rets.entry(f.name.clone()).or_default();
            *r = (*r).max(ff.ret);
            for a in &out.promote {
                next.blinded_arrays.insert((f.name.clone(), a.clone()));
            }
            for (v, &(n, all_must)) in &out.reads {
                if n > 0 && all_must && locals[&f.name][v].shape == Shape::Scalar {
                    next.blinded_scalars.insert((f.name.clone(), v.clone()));
                }
            }
            result.diagnostics.extend(out.diags);
            result.exprs.extend(out.exprs);
            result.functions.insert(f.name.clone(), ff);
        }
        if next == facts {
            result.diagnostics.extend(diags);
            result.diagnostics.sort_by_key(|d| d.pos);
            return result;
        }
        facts = next;
    }
    unreachable!("blindedness facts only grow and the lattice is finite")
}

#[cfg(test)]
mod tests {
    use super::super::parse;
    use super::*;

    fn run(src: &str) -> Analysis {
        analyze(&parse(src).unwrap())
    }

    fn codes(a: &Analysis) -> Vec<&'static str> {
        a.diagnostics.iter().map(|d| d.code).collect()
    }

    const SELECT: &str = "
        fn select(int cond, int x, int y) @blinded {
            @blinded int c;
            int res;
            c = cond;
            res = (x * c) + (y * (!c));
            return res;
        }
        fn main() {
            int cond = input();
            int x = input();
            int y = input();
            @result int r[1];
            r[0] = select(cond, x, y);
            out(r[0]);
        }";

    #[test]
    fn select_is_clean_and_res_inferred() {
        let a = run(SELECT);
        assert!(a.diagnostics.is_empty(), "{:?}", a.diagnostics);
        let res = a.var("select", "res").unwrap();
        assert_eq!(res.level, Level::Must);
        assert_eq!(res.storage, Storage::Blinded);
        assert_eq!(a.var("select", "c").unwrap().storage, Storage::Blinded);
        assert_eq!(a.var("main", "r").unwrap().storage, Storage::Result);
    }

    const BAD_FUNC: &str = "
        fn bad_func(int cond, int x, int* dst) {
            @blinded int a = x;
            int b;
            if (cond)
                b = a;
            *dst = a;
            if (a != 0)
                b = a;
            else
                return;
            if (b != 0)
                *dst = a;
        }
        fn main() { int* p = bmalloc(1); bad_func(1, 2, p); }";

    #[test]
    fn bad_func_diagnostics() {
        let a = run(BAD_FUNC);
        let branch: Vec<_> = a.diagnostics.iter().filter(|d| d.code.contains("BRANCH")).collect();
        assert_eq!(branch.len(), 2);
        assert_eq!((branch[0].code, branch[0].pos.line), ("E_BLINDED_BRANCH", 8));
        assert_eq!((branch[1].code, branch[1].pos.line), ("W_MAYBE_BLINDED_BRANCH", 12));
        assert_eq!(a.var("bad_func", "b").unwrap().level, Level::Must);
        assert_eq!(a.var("bad_func", "b").unwrap().storage, Storage::Slot);
        assert!(codes(&a).contains(&"W_MAYBE_BLINDED_STORE"));
    }

    #[test]
    fn index_and_out() {
        let a = run("fn main() { @blinded int s; int t[4]; t[s] = 1; out(s); out(t[0]); }");
        assert_eq!(codes(&a), ["E_BLINDED_INDEX", "E_BLINDED_OUT"]);
    }

    #[test]
    fn array_promotion() {
        let a = run("fn main() { int t[4]; int u[4]; int* p = bmalloc(4); t[0] = p[1]; u[1] = t[0]; out(u[1]); }");
        assert_eq!(a.var("main", "t").unwrap().storage, Storage::Blinded);
        assert_eq!(a.var("main", "u").unwrap().storage, Storage::Blinded);
        assert_eq!(codes(&a), ["E_BLINDED_OUT"]);
    }

    #[test]
    fn loop_merges_to_may() {
        let a = run("
            fn main() {
                int* p = bmalloc(2);
                int x = 0;
                int i = 0;
                while (i < 2) {
                    out(x);
                    x = p[i];
                    i = i + 1;
                }
            }");
        assert_eq!(codes(&a), ["W_MAYBE_BLINDED_OUT"]);
    }

    #[test]
    fn interprocedural_params_and_returns() {
        let a = run("
            fn id(int v) { return v; }
            fn main() {
                int* p = bmalloc(1);
                int y = id(p[0]);
                if (y) { out(1); }
            }");
        assert_eq!(a.functions["id"].params, vec![Level::May]);
        let c = codes(&a);
        assert!(c.contains(&"W_MAYBE_BLINDED_ARG"));
        assert!(c.contains(&"W_BLINDED_RETURN"));
        assert!(c.contains(&"W_MAYBE_BLINDED_BRANCH"));
    }

    #[test]
    fn resolution_errors() {
        let a = run("fn main() { x = 1; int y; int y; f(); }");
        assert_eq!(codes(&a), ["E_REDECLARED", "E_UNDECLARED", "E_UNKNOWN_FN"]);
        let b = run("fn f() {}");
        assert_eq!(codes(&b), ["E_NO_MAIN"]);
        let c = run("fn main() { int a[2]; int x = a; }");
        assert_eq!(codes(&c), ["E_TYPE"]);
    }

    #[test]
    fn no_blinded_values_no_diagnostics() {
        let a = run("fn main() { int a[4]; for (int i = 0; i < 4; i = i + 1) a[i] = i * 2; out(a[3]); }");
        assert!(a.diagnostics.is_empty());
        assert!(a.exprs.values().all(|l| *l == Level::Unblinded));
    }

    #[test]
    fn globals() {
        let a = run("@blinded int k[2]; int g; fn main() { g = k[0]; k[1] = g; }");
        assert_eq!(codes(&a), ["E_BLINDED_STORE"]);
    }
}
