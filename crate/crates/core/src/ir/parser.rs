//! Recursive-descent parser.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use super::ast::*;
use super::lexer::{lex, Tok, Token};
use super::{Diagnostic, Pos};

type PResult<T> = Result<T, Diagnostic>;

struct Parser {
    toks: Vec<Token>,
    at: usize,
    next_id: u32,
}

/// Parses a whole source file.
pub fn parse(src: &str) -> Result<Program, Vec<Diagnostic>> {
    let toks = lex(src).map_err(|d| vec![d])?;
    let mut p = Parser { toks, at: 0, next_id: 0 };
    p.program().map_err(|d| vec![d])
}

const KEYWORDS: [&str; 13] = [
    "fn",
    "int",
    "if",
    "else",
    "while",
    "for",
    "return",
    "out",
    "free",
    "input",
    "input_blinded",
    "bmalloc",
    "malloc",
];

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.at + k).min(self.toks.len() - 1)].tok
    }

    fn pos(&self) -> Pos {
        self.toks[self.at].pos
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn err<T>(&self, msg: impl Into<String>) -> PResult<T> {
        Err(Diagnostic::error("E_SYNTAX", self.pos(), msg.into()))
    }

    fn describe(&self) -> String {
        match self.peek() {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Int(v) => format!("`{v}`"),
            Tok::Annot(a) => format!("`@{a}`"),
            Tok::Punct(p) => format!("`{p}`"),
            Tok::Eof => "end of file".to_string(),
        }
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(self.peek(), Tok::Punct(q) if *q == p)
    }

    fn is_kw(&self, k: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == k)
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        if self.is_punct(p) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_punct(&mut self, p: &str) -> PResult<()> {
        if self.eat_punct(p) {
            Ok(())
        } else {
            self.err(format!("expected `{p}`, found {}", self.describe()))
        }
    }

    fn expect_kw(&mut self, k: &str) -> PResult<()> {
        if self.is_kw(k) {
            self.bump();
            Ok(())
        } else {
            self.err(format!("expected `{k}`, found {}", self.describe()))
        }
    }

    fn ident(&mut self) -> PResult<String> {
        match self.peek().clone() {
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                self.bump();
                Ok(s)
            }
            _ => self.err(format!("expected identifier, found {}", self.describe())),
        }
    }

    fn int_lit(&mut self) -> PResult<i64> {
        let neg = self.eat_punct("-");
        match *self.peek() {
            Tok::Int(v) => {
                self.bump();
                Ok(if neg { v.wrapping_neg() } else { v })
            }
            _ => self.err(format!("expected integer, found {}", self.describe())),
        }
    }

    fn annot(&mut self) -> PResult<Option<Annot>> {
        let Tok::Annot(word) = self.peek().clone() else {
            return Ok(None);
        };
        let a = match word.as_str() {
            "blinded" => Annot::Blinded,
            "result" => Annot::Result,
            _ => return self.err(format!("unknown annotation `@{word}`")),
        };
        self.bump();
        Ok(Some(a))
    }

    fn program(&mut self) -> PResult<Program> {
        let mut prog = Program { globals: Vec::new(), functions: Vec::new() };
        if *self.peek() == Tok::Eof {
            return self.err("empty program");
        }
        while *self.peek() != Tok::Eof {
            if self.is_kw("fn") {
                prog.functions.push(self.function()?);
            } else {
                prog.globals.push(self.global()?);
            }
        }
        Ok(prog)
    }

    fn function(&mut self) -> PResult<Function> {
        let pos = self.pos();
        self.expect_kw("fn")?;
        let name = self.ident()?;
        self.expect_punct("(")?;
        let mut params = Vec::new();
        if !self.is_punct(")") {
            loop {
                let ppos = self.pos();
                let annot = self.annot()?;
                if annot == Some(Annot::Result) {
                    return Err(Diagnostic::error("E_SYNTAX", ppos, "`@result` is not allowed on parameters".into()));
                }
                self.expect_kw("int")?;
                let shape = if self.eat_punct("*") { Shape::Pointer } else { Shape::Scalar };
                let name = self.ident()?;
                params.push(Param { name, shape, blinded: annot.is_some(), pos: ppos });
                if !self.eat_punct(",") {
                    break;
                }
            }
        }
        self.expect_punct(")")?;
        let apos = self.pos();
        let blinded = match self.annot()? {
            None => false,
            Some(Annot::Blinded) => true,
            Some(Annot::Result) => {
                return Err(Diagnostic::error("E_SYNTAX", apos, "`@result` is not a function attribute".into()))
            }
        };
        let body = self.block()?;
        Ok(Function { name, params, blinded, body, pos })
    }

    fn global(&mut self) -> PResult<Global> {
        let pos = self.pos();
        let annot = self.annot()?;
        if annot == Some(Annot::Result) {
            return self.err("`@result` arrays must be locals");
        }
        self.expect_kw("int")?;
        let name = self.ident()?;
        let shape = self.array_suffix()?;
        let mut init = Vec::new();
        if self.eat_punct("=") {
            if self.eat_punct("{") {
                if !self.is_punct("}") {
                    loop {
                        init.push(self.int_lit()?);
                        if !self.eat_punct(",") {
                            break;
                        }
                    }
                }
                self.expect_punct("}")?;
            } else {
                init.push(self.int_lit()?);
            }
        }
        self.expect_punct(";")?;
        let cap = match shape {
            Shape::Array(n) => n as usize,
            _ => 1,
        };
        if init.len() > cap {
            return Err(Diagnostic::error("E_SYNTAX", pos, format!("too many initializers for `{name}`")));
        }
        Ok(Global { name, shape, blinded: annot.is_some(), init, pos })
    }

    fn array_suffix(&mut self) -> PResult<Shape> {
        if !self.eat_punct("[") {
            return Ok(Shape::Scalar);
        }
        let n = self.int_lit()?;
        if n <= 0 {
            return self.err("array length must be positive");
        }
        self.expect_punct("]")?;
        Ok(Shape::Array(n as u64))
    }

    fn block(&mut self) -> PResult<Vec<Stmt>> {
        self.expect_punct("{")?;
        let mut out = Vec::new();
        while !self.is_punct("}") {
            if *self.peek() == Tok::Eof {
                return self.err("unexpected end of file, expected `}`");
            }
            out.extend(self.stmt()?);
        }
        self.bump();
        Ok(out)
    }

    /// A statement or a braced block, flattened.
    fn body(&mut self) -> PResult<Vec<Stmt>> {
        if self.is_punct("{") {
            self.block()
        } else {
            self.stmt()
        }
    }

    fn decl(&mut self) -> PResult<Stmt> {
        let pos = self.pos();
        let annot = self.annot()?;
        self.expect_kw("int")?;
        let pointer = self.eat_punct("*");
        let name = self.ident()?;
        let mut shape = self.array_suffix()?;
        if pointer {
            if shape != Shape::Scalar {
                return self.err("arrays of pointers are not supported");
            }
            shape = Shape::Pointer;
        }
        if annot == Some(Annot::Result) && !matches!(shape, Shape::Array(_)) {
            return Err(Diagnostic::error("E_SYNTAX", pos, "`@result` applies to arrays only".into()));
        }
        let init = if self.eat_punct("=") {
            if matches!(shape, Shape::Array(_)) {
                return self.err("array initializers are not supported for locals");
            }
            Some(self.expr()?)
        } else {
            None
        };
        Ok(Stmt { kind: StmtKind::Decl(Decl { name, shape, annot, init, pos }), pos })
    }

    fn starts_decl(&self) -> bool {
        self.is_kw("int") || matches!(self.peek(), Tok::Annot(_))
    }

    /// Assignment or call, without the trailing `;`.
    fn simple(&mut self) -> PResult<Stmt> {
        let pos = self.pos();
        if self.eat_punct("*") {
            let name = self.ident()?;
            self.expect_punct("=")?;
            let e = self.expr()?;
            return Ok(Stmt { kind: StmtKind::Assign(LValue::Deref(name), e), pos });
        }
        if matches!(self.peek(), Tok::Ident(_)) && *self.peek_at(1) == Tok::Punct("(") {
            let e = self.expr()?;
            if !matches!(e.kind, ExprKind::Call(..)) {
                return Err(Diagnostic::error("E_SYNTAX", pos, "expression result unused".into()));
            }
            return Ok(Stmt { kind: StmtKind::Expr(e), pos });
        }
        let name = self.ident()?;
        let lv = if self.eat_punct("[") {
            let idx = self.expr()?;
            self.expect_punct("]")?;
            LValue::Index(name, Box::new(idx))
        } else {
            LValue::Var(name)
        };
        self.expect_punct("=")?;
        let e = self.expr()?;
        Ok(Stmt { kind: StmtKind::Assign(lv, e), pos })
    }

    fn stmt(&mut self) -> PResult<Vec<Stmt>> {
        let pos = self.pos();
        if self.is_punct("{") {
            return self.block();
        }
        if self.starts_decl() {
            let d = self.decl()?;
            self.expect_punct(";")?;
            return Ok(vec![d]);
        }
        let kw = match self.peek() {
            Tok::Ident(s) => s.clone(),
            _ => String::new(),
        };
        let kind = match kw.as_str() {
            "if" => {
                self.bump();
                self.expect_punct("(")?;
                let c = self.expr()?;
                self.expect_punct(")")?;
                let then = self.body()?;
                let els = if self.is_kw("else") {
                    self.bump();
                    self.body()?
                } else {
                    Vec::new()
                };
                StmtKind::If(c, then, els)
            }
            "while" => {
                self.bump();
                self.expect_punct("(")?;
                let c = self.expr()?;
                self.expect_punct(")")?;
                StmtKind::While(c, self.body()?)
            }
            "for" => {
                self.bump();
                self.expect_punct("(")?;
                let mut out = Vec::new();
                if !self.is_punct(";") {
                    out.push(if self.starts_decl() { self.decl()? } else { self.simple()? });
                }
                self.expect_punct(";")?;
                let c = self.expr()?;
                self.expect_punct(";")?;
                let step = if self.is_punct(")") { None } else { Some(self.simple()?) };
                self.expect_punct(")")?;
                let mut body = self.body()?;
                body.extend(step);
                out.push(Stmt { kind: StmtKind::While(c, body), pos });
                return Ok(out);
            }
            "return" => {
                self.bump();
                let e = if self.is_punct(";") { None } else { Some(self.expr()?) };
                StmtKind::Return(e)
            }
            "out" | "free" => {
                self.bump();
                self.expect_punct("(")?;
                let e = self.expr()?;
                self.expect_punct(")")?;
                if kw == "out" {
                    StmtKind::Out(e)
                } else {
                    StmtKind::Free(e)
                }
            }
            "input_blinded" => {
                self.bump();
                self.expect_punct("(")?;
                let a = self.expr()?;
                self.expect_punct(",")?;
                let n = self.expr()?;
                self.expect_punct(")")?;
                StmtKind::InputBlinded(a, n)
            }
            "else" => return self.err("`else` without `if`"),
            _ => {
                let s = self.simple()?;
                self.expect_punct(";")?;
                return Ok(vec![s]);
            }
        };
        if !matches!(kind, StmtKind::If(..) | StmtKind::While(..)) {
            self.expect_punct(";")?;
        }
        Ok(vec![Stmt { kind, pos }])
    }

    fn mk(&mut self, kind: ExprKind, pos: Pos) -> Expr {
        let id = self.next_id;
        self.next_id += 1;
        Expr { id, kind, pos }
    }

    fn expr(&mut self) -> PResult<Expr> {
        self.binary(0)
    }

    fn binop(&self, level: usize) -> Option<BinOp> {
        let Tok::Punct(p) = self.peek() else { return None };
        let op = match (level, *p) {
            (0, "||") => BinOp::Or,
            (1, "&&") => BinOp::And,
            (2, "|") => BinOp::BitOr,
            (3, "^") => BinOp::BitXor,
            (4, "&") => BinOp::BitAnd,
            (5, "==") => BinOp::Eq,
            (5, "!=") => BinOp::Ne,
            (6, "<") => BinOp::Lt,
            (6, "<=") => BinOp::Le,
            (6, ">") => BinOp::Gt,
            (6, ">=") => BinOp::Ge,
            (7, "<<") => BinOp::Shl,
            (7, ">>") => BinOp::Shr,
            (8, "+") => BinOp::Add,
            (8, "-") => BinOp::Sub,
            (9, "*") => BinOp::Mul,
            _ => return None,
        };
        Some(op)
    }

    fn binary(&mut self, level: usize) -> PResult<Expr> {
        if level == 10 {
            return self.unary();
        }
        let mut lhs = self.binary(level + 1)?;
        while let Some(op) = self.binop(level) {
            let pos = self.pos();
            self.bump();
            let rhs = self.binary(level + 1)?;
            lhs = self.mk(ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)), pos);
        }
        if level == 9 && (self.is_punct("/") || self.is_punct("%")) {
            return self.err("division is not supported");
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> PResult<Expr> {
        let pos = self.pos();
        let op = match self.peek() {
            Tok::Punct("-") => UnOp::Neg,
            Tok::Punct("!") => UnOp::Not,
            Tok::Punct("~") => UnOp::BitNot,
            Tok::Punct("*") => {
                self.bump();
                let name = self.ident()?;
                return Ok(self.mk(ExprKind::Deref(name), pos));
            }
            _ => return self.primary(),
        };
        self.bump();
        let inner = self.unary()?;
        if let (UnOp::Neg, ExprKind::Int(v)) = (op, &inner.kind) {
            return Ok(self.mk(ExprKind::Int(v.wrapping_neg()), pos));
        }
        Ok(self.mk(ExprKind::Unary(op, Box::new(inner)), pos))
    }

    fn args(&mut self) -> PResult<Vec<Expr>> {
        self.expect_punct("(")?;
        let mut args = Vec::new();
        if !self.is_punct(")") {
            loop {
                args.push(self.expr()?);
                if !self.eat_punct(",") {
                    break;
                }
            }
        }
        self.expect_punct(")")?;
        Ok(args)
    }

    fn primary(&mut self) -> PResult<Expr> {
        let pos = self.pos();
        match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                Ok(self.mk(ExprKind::Int(v), pos))
            }
            Tok::Punct("(") => {
                self.bump();
                let e = self.expr()?;
                self.expect_punct(")")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                let builtin_arity = match name.as_str() {
                    "input" => Some(0),
                    "bmalloc" | "malloc" => Some(1),
                    "select" => Some(3),
                    _ => None,
                };
                if let Some(arity) = builtin_arity {
                    if *self.peek_at(1) == Tok::Punct("(") {
                        self.bump();
                        let mut args = self.args()?;
                        if args.len() != arity {
                            return Err(Diagnostic::error(
                                "E_SYNTAX",
                                pos,
                                format!("`{name}` takes {arity} argument(s)"),
                            ));
                        }
                        let kind = match name.as_str() {
                            "input" => ExprKind::Input,
                            "bmalloc" => ExprKind::Bmalloc(Box::new(args.remove(0))),
                            "malloc" => ExprKind::Malloc(Box::new(args.remove(0))),
                            _ => {
                                let c = args.remove(0);
                                let x = args.remove(0);
                                ExprKind::Select(Box::new(c), Box::new(x), Box::new(args.remove(0)))
                            }
                        };
                        return Ok(self.mk(kind, pos));
                    }
                }
                let name = self.ident()?;
                if self.is_punct("(") {
                    let args = self.args()?;
                    return Ok(self.mk(ExprKind::Call(name, args), pos));
                }
                if self.eat_punct("[") {
                    let idx = self.expr()?;
                    self.expect_punct("]")?;
                    return Ok(self.mk(ExprKind::Index(name, Box::new(idx)), pos));
                }
                Ok(self.mk(ExprKind::Var(name), pos))
            }
            _ => self.err(format!("expected expression, found {}", self.describe())),
        }
    }
}
