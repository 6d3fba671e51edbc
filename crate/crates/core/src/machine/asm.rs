//! Two-pass assembler for the text format.
//!
//! One instruction per line, `;` starts a comment, `name:` defines a label
//! (optionally followed by an instruction on the same line). Sections are
//! selected with `.text`, `.data` and `.blinded`; data sections accept
//! `.word v, ...` (8 bytes each), `.zero n` and `.align n`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use super::isa::{AluImmOp, AluOp, BranchCond, CapModOp, Instruction, Reg, SymbolKind, SymbolRef};

/// First instruction address.
pub const CODE_BASE: u64 = 0x1000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AsmError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for AsmError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

/// Addresses of each program section.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub code_base: u64,
    pub code_len: usize,
    pub data_base: u64,
    pub data_len: u64,
    pub blinded_base: u64,
    pub blinded_len: u64,
}

impl Layout {
    pub fn code_end(&self) -> u64 {
        self.code_base + 4 * self.code_len as u64
    }

    /// First address past every section.
    pub fn end(&self) -> u64 {
        self.blinded_base + self.blinded_len
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    pub code: Vec<Instruction>,
    /// Source line of each instruction.
    pub lines: Vec<usize>,
    pub data: Vec<u8>,
    pub blinded: Vec<u8>,
    /// Code labels by instruction index.
    pub labels: BTreeMap<String, usize>,
    /// Data and blinded-section symbols.
    pub symbols: BTreeMap<String, SymbolRef>,
    pub layout: Layout,
}

impl Program {
    pub fn pc_of(&self, index: usize) -> u64 {
        self.layout.code_base + 4 * index as u64
    }

    pub fn label_pc(&self, name: &str) -> Option<u64> {
        self.labels.get(name).map(|&i| self.pc_of(i))
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Section {
    Text,
    Data,
    Blinded,
}

struct PendingInst<'a> {
    line: usize,
    mnemonic: String,
    operands: Vec<&'a str>,
}

fn align_up(v: u64, a: u64) -> u64 {
    v.div_ceil(a) * a
}

pub fn parse_int(s: &str) -> Option<i64> {
    let s = s.trim();
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let body = body.replace('_', "");
    let v = if let Some(hex) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        u64::from_str_radix(hex, 16).ok()? as i64
    } else {
        body.parse::<u64>().ok()? as i64
    };
    Some(if neg { v.wrapping_neg() } else { v })
}

fn is_label_name(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_' || c == '.')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

/// Assembles `text`, returning every error found.
pub fn assemble(text: &str) -> Result<Program, Vec<AsmError>> {
    let mut errors = Vec::new();
    let mut section = Section::Text;
    let mut pending: Vec<PendingInst> = Vec::new();
    let mut labels = BTreeMap::new();
    // (name, section, offset, line)
    let mut data_labels: Vec<(String, Section, u64, usize)> = Vec::new();
    let mut data = Vec::new();
    let mut blinded = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let mut rest = raw.split(';').next().unwrap_or("").trim();
        while let Some(colon) = rest.find(':') {
            let name = rest[..colon].trim();
            if !is_label_name(name) {
                break;
            }
            let taken = labels.contains_key(name) || data_labels.iter().any(|(n, ..)| n == name);
            if taken {
                errors.push(AsmError { line, message: format!("duplicate label `{name}`") });
            } else if section == Section::Text {
                labels.insert(name.to_string(), pending.len());
            } else {
                let buf = if section == Section::Data { &data } else { &blinded };
                data_labels.push((name.to_string(), section, buf.len() as u64, line));
            }
            rest = rest[colon + 1..].trim();
        }
        if rest.is_empty() {
            continue;
        }
        let (head, tail) = match rest.find(char::is_whitespace) {
            Some(p) => (&rest[..p], rest[p..].trim()),
            None => (rest, ""),
        };
        let operands: Vec<&str> = if tail.is_empty() { Vec::new() } else { tail.split(',').map(str::trim).collect() };
        let directive = head.to_ascii_lowercase();
        match directive.as_str() {
            ".text" => section = Section::Text,
            ".data" => section = Section::Data,
            ".blinded" => section = Section::Blinded,
            ".word" | ".zero" | ".align" => {
                let buf = match section {
                    Section::Text => {
                        errors.push(AsmError { line, message: format!("`{head}` outside a data section") });
                        continue;
                    }
                    Section::Data => &mut data,
                    Section::Blinded => &mut blinded,
                };
                let values: Option<Vec<i64>> = operands.iter().map(|o| parse_int(o)).collect();
                match (directive.as_str(), values) {
                    (".word", Some(vals)) if !vals.is_empty() => {
                        for v in vals {
                            buf.extend_from_slice(&v.to_le_bytes());
                        }
                    }
                    (".zero", Some(vals)) if vals.len() == 1 && vals[0] >= 0 => {
                        buf.resize(buf.len() + vals[0] as usize, 0);
                    }
                    (".align", Some(vals)) if vals.len() == 1 && vals[0] > 0 && (vals[0] as u64).is_power_of_two() => {
                        let n = align_up(buf.len() as u64, vals[0] as u64) as usize;
                        buf.resize(n, 0);
                    }
                    _ => errors.push(AsmError { line, message: format!("bad operands for `{head}`") }),
                }
            }
            d if d.starts_with('.') => errors.push(AsmError { line, message: format!("unknown directive `{head}`") }),
            _ => {
                if section != Section::Text {
                    errors.push(AsmError { line, message: "instruction outside .text".to_string() });
                    continue;
                }
                pending.push(PendingInst { line, mnemonic: directive, operands });
            }
        }
    }

    let code_len = pending.len();
    let code_end = CODE_BASE + 4 * code_len as u64;
    let data_base = align_up(code_end, 0x100);
    let data_len = align_up(data.len() as u64, 16);
    let blinded_base = data_base + data_len;
    let blinded_len = align_up(blinded.len() as u64, 16);
    data.resize(data_len as usize, 0);
    blinded.resize(blinded_len as usize, 0);
    let layout = Layout { code_base: CODE_BASE, code_len, data_base, data_len, blinded_base, blinded_len };

    let mut symbols = BTreeMap::new();
    for (k, (name, sec, off, _)) in data_labels.iter().enumerate() {
        let (base, sec_len, kind) = match sec {
            Section::Data => (data_base, data_len, SymbolKind::Data),
            _ => (blinded_base, blinded_len, SymbolKind::Blinded),
        };
        let next = data_labels[k + 1..].iter().find(|(_, s, o, _)| s == sec && o > off).map_or(sec_len, |l| l.2);
        symbols.insert(name.clone(), SymbolRef { kind, addr: base + off, length: next - off });
    }

    let ctx = Ctx { labels: &labels, symbols: &symbols, code_len };
    let mut code = Vec::with_capacity(code_len);
    let mut lines = Vec::with_capacity(code_len);
    for p in &pending {
        match ctx.instruction(&p.mnemonic, &p.operands) {
            Ok(inst) => {
                code.push(inst);
                lines.push(p.line);
            }
            Err(message) => errors.push(AsmError { line: p.line, message }),
        }
    }
    if errors.is_empty() {
        Ok(Program { code, lines, data, blinded, labels, symbols, layout })
    } else {
        errors.sort_by_key(|e| e.line);
        Err(errors)
    }
}

struct Ctx<'a> {
    labels: &'a BTreeMap<String, usize>,
    symbols: &'a BTreeMap<String, SymbolRef>,
    code_len: usize,
}

impl Ctx<'_> {
    fn reg(&self, s: &str) -> Result<Reg, String> {
        Reg::parse(&s.to_ascii_lowercase()).ok_or_else(|| format!("bad register `{s}`"))
    }

    fn imm(&self, s: &str) -> Result<i64, String> {
        parse_int(s).ok_or_else(|| format!("bad immediate `{s}`"))
    }

    fn target(&self, s: &str) -> Result<usize, String> {
        self.labels.get(s).copied().ok_or_else(|| format!("undefined label `{s}`"))
    }

    /// `imm(reg)`; a bare `(reg)` means offset 0.
    fn mem_operand<'s>(&self, s: &'s str) -> Result<(&'s str, Reg), String> {
        let open = s.find('(').ok_or_else(|| format!("expected `off(reg)`, got `{s}`"))?;
        let inner = s[open + 1..].strip_suffix(')').ok_or_else(|| format!("unclosed `(` in `{s}`"))?;
        Ok((s[..open].trim(), self.reg(inner)?))
    }

    fn instruction(&self, m: &str, ops: &[&str]) -> Result<Instruction, String> {
        use Instruction as I;
        let want = |n: usize| {
            if ops.len() == n {
                Ok(())
            } else {
                Err(format!("`{}` takes {n} operand(s), got {}", m.to_ascii_uppercase(), ops.len()))
            }
        };
        let alu = |op| -> Result<Instruction, String> {
            want(3)?;
            Ok(I::Alu { op, rd: self.reg(ops[0])?, rs1: self.reg(ops[1])?, rs2: self.reg(ops[2])? })
        };
        let alui = |op| -> Result<Instruction, String> {
            want(3)?;
            Ok(I::AluImm { op, rd: self.reg(ops[0])?, rs1: self.reg(ops[1])?, imm: self.imm(ops[2])? })
        };
        let capmod = |op| -> Result<Instruction, String> {
            want(3)?;
            Ok(I::CapMod { op, cd: self.reg(ops[0])?, cs: self.reg(ops[1])?, rs: self.reg(ops[2])? })
        };
        let branch = |cond| -> Result<Instruction, String> {
            want(3)?;
            Ok(I::Branch { cond, rs1: self.reg(ops[0])?, rs2: self.reg(ops[1])?, target: self.target(ops[2])? })
        };
        let offset_form = |first: Reg| -> Result<(Reg, Reg, i64), String> {
            let (off, cs) = self.mem_operand(ops[1])?;
            let imm = if off.is_empty() { 0 } else { self.imm(off)? };
            Ok((first, cs, imm))
        };
        let index_form = || -> Result<(Reg, Reg, Reg), String> {
            let (rx, cs) = self.mem_operand(ops[1])?;
            Ok((self.reg(ops[0])?, self.reg(rx)?, cs))
        };
        match m {
            "add" => alu(AluOp::Add),
            "sub" => alu(AluOp::Sub),
            "mul" => alu(AluOp::Mul),
            "and" => alu(AluOp::And),
            "or" => alu(AluOp::Or),
            "xor" => alu(AluOp::Xor),
            "sll" => alu(AluOp::Sll),
            "srl" => alu(AluOp::Srl),
            "sra" => alu(AluOp::Sra),
            "slt" => alu(AluOp::Slt),
            "sltu" => alu(AluOp::Sltu),
            "addi" => alui(AluImmOp::Addi),
            "andi" => alui(AluImmOp::Andi),
            "ori" => alui(AluImmOp::Ori),
            "xori" => alui(AluImmOp::Xori),
            "slti" => alui(AluImmOp::Slti),
            "li" => {
                want(2)?;
                Ok(I::Li { rd: self.reg(ops[0])?, imm: self.imm(ops[1])? })
            }
            "mv" => {
                want(2)?;
                Ok(I::Mv { rd: self.reg(ops[0])?, rs: self.reg(ops[1])? })
            }
            "ld" | "sd" | "csc" | "clc" => {
                want(2)?;
                let (r, cs, imm) = offset_form(self.reg(ops[0])?)?;
                Ok(match m {
                    "ld" => I::Ld { rd: r, cs, imm },
                    "sd" => I::Sd { rs: r, cs, imm },
                    "csc" => I::Csc { rs: r, cs, imm },
                    _ => I::Clc { rd: r, cs, imm },
                })
            }
            "ldx" | "sdx" => {
                want(2)?;
                let (r, rx, cs) = index_form()?;
                Ok(if m == "ldx" { I::Ldx { rd: r, rx, cs } } else { I::Sdx { rs: r, rx, cs } })
            }
            "candperm" => capmod(CapModOp::AndPerm),
            "csetbounds" => capmod(CapModOp::SetBounds),
            "cincoffset" => capmod(CapModOp::IncOffset),
            "cgetaddr" | "cgettag" => {
                want(2)?;
                let (rd, cs) = (self.reg(ops[0])?, self.reg(ops[1])?);
                Ok(if m == "cgetaddr" { I::CGetAddr { rd, cs } } else { I::CGetTag { rd, cs } })
            }
            "cllc" => {
                want(2)?;
                let cd = self.reg(ops[0])?;
                let sym = if let Some(&idx) = self.labels.get(ops[1]) {
                    SymbolRef { kind: SymbolKind::Code, addr: CODE_BASE + 4 * idx as u64, length: 4 * self.code_len as u64 }
                } else {
                    *self.symbols.get(ops[1]).ok_or_else(|| format!("undefined label `{}`", ops[1]))?
                };
                Ok(I::Cllc { cd, sym })
            }
            "beq" => branch(BranchCond::Eq),
            "bne" => branch(BranchCond::Ne),
            "blt" => branch(BranchCond::Lt),
            "bge" => branch(BranchCond::Ge),
            "j" => {
                want(1)?;
                Ok(I::J { target: self.target(ops[0])? })
            }
            "cjalr" => {
                want(2)?;
                Ok(I::Cjalr { cd: self.reg(ops[0])?, cs: self.reg(ops[1])? })
            }
            "ecall" | "halt" => {
                want(0)?;
                Ok(if m == "ecall" { I::Ecall } else { I::Halt })
            }
            "out" => {
                want(1)?;
                Ok(I::Out { rs: self.reg(ops[0])? })
            }
            _ => Err(format!("unknown mnemonic `{m}`")),
        }
    }
}
