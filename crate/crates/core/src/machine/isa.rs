//! Instruction set.

use core::fmt;

/// Architectural register index, `x0`..`x31`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Reg(pub u8);

impl Reg {
    pub const ZERO: Reg = Reg(0);
    pub const RA: Reg = Reg(1);
    /// Stack capability register.
    pub const CSP: Reg = Reg(2);
    /// ECALL function code / first result.
    pub const A0: Reg = Reg(10);
    pub const A1: Reg = Reg(11);
    pub const A2: Reg = Reg(12);
    pub const A3: Reg = Reg(13);

    pub fn idx(self) -> usize {
        self.0 as usize
    }

    /// Parses `x5`, `t0`, `csp`, `a1`, ...
    pub fn parse(s: &str) -> Option<Reg> {
        let s = s.trim();
        if let Some(n) = s.strip_prefix('x') {
            return n.parse::<u8>().ok().filter(|&n| n < 32).map(Reg);
        }
        let abi = match s {
            "zero" => 0,
            "ra" => 1,
            "sp" | "csp" => 2,
            "gp" => 3,
            "tp" => 4,
            "fp" => 8,
            _ => {
                let (prefix, n) = s.split_at(1.min(s.len()));
                let n: u8 = n.parse().ok()?;
                match (prefix, n) {
                    ("t", 0..=2) => 5 + n,
                    ("t", 3..=6) => 25 + n,
                    ("s", 0..=1) => 8 + n,
                    ("s", 2..=11) => 16 + n,
                    ("a", 0..=7) => 10 + n,
                    _ => return None,
                }
            }
        };
        Some(Reg(abi))
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AluOp {
    Add,
    Sub,
    Mul,
    And,
    Or,
    Xor,
    Sll,
    Srl,
    Sra,
    Slt,
    Sltu,
}

impl AluOp {
    pub fn eval(self, a: u64, b: u64) -> u64 {
        match self {
            AluOp::Add => a.wrapping_add(b),
            AluOp::Sub => a.wrapping_sub(b),
            AluOp::Mul => a.wrapping_mul(b),
            AluOp::And => a & b,
            AluOp::Or => a | b,
            AluOp::Xor => a ^ b,
            AluOp::Sll => a << (b & 63),
            AluOp::Srl => a >> (b & 63),
            AluOp::Sra => ((a as i64) >> (b & 63)) as u64,
            AluOp::Slt => u64::from((a as i64) < (b as i64)),
            AluOp::Sltu => u64::from(a < b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AluImmOp {
    Addi,
    Andi,
    Ori,
    Xori,
    Slti,
}

impl AluImmOp {
    pub fn alu(self) -> AluOp {
        match self {
            AluImmOp::Addi => AluOp::Add,
            AluImmOp::Andi => AluOp::And,
            AluImmOp::Ori => AluOp::Or,
            AluImmOp::Xori => AluOp::Xor,
            AluImmOp::Slti => AluOp::Slt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BranchCond {
    Eq,
    Ne,
    Lt,
    Ge,
}

impl BranchCond {
    pub fn taken(self, a: u64, b: u64) -> bool {
        match self {
            BranchCond::Eq => a == b,
            BranchCond::Ne => a != b,
            BranchCond::Lt => (a as i64) < (b as i64),
            BranchCond::Ge => (a as i64) >= (b as i64),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CapModOp {
    AndPerm,
    SetBounds,
    IncOffset,
}

/// Which section a `CLLC` symbol lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SymbolKind {
    Code,
    Data,
    Blinded,
}

/// A resolved `CLLC` operand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SymbolRef {
    pub kind: SymbolKind,
    pub addr: u64,
    pub length: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Instruction {
    Alu { op: AluOp, rd: Reg, rs1: Reg, rs2: Reg },
    AluImm { op: AluImmOp, rd: Reg, rs1: Reg, imm: i64 },
    Li { rd: Reg, imm: i64 },
    Mv { rd: Reg, rs: Reg },
    Ld { rd: Reg, cs: Reg, imm: i64 },
    Sd { rs: Reg, cs: Reg, imm: i64 },
    Ldx { rd: Reg, rx: Reg, cs: Reg },
    Sdx { rs: Reg, rx: Reg, cs: Reg },
    Csc { rs: Reg, cs: Reg, imm: i64 },
    Clc { rd: Reg, cs: Reg, imm: i64 },
    CapMod { op: CapModOp, cd: Reg, cs: Reg, rs: Reg },
    CGetAddr { rd: Reg, cs: Reg },
    CGetTag { rd: Reg, cs: Reg },
    /// Capability for a code or data label.
    Cllc { cd: Reg, sym: SymbolRef },
    /// `target` is an instruction index.
    Branch { cond: BranchCond, rs1: Reg, rs2: Reg, target: usize },
    J { target: usize },
    Cjalr { cd: Reg, cs: Reg },
    Ecall,
    Out { rs: Reg },
    Halt,
}

/// Opcode identity, used in traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Opcode {
    Add,
    Sub,
    Mul,
    And,
    Or,
    Xor,
    Sll,
    Srl,
    Sra,
    Slt,
    Sltu,
    Addi,
    Andi,
    Ori,
    Xori,
    Slti,
    Li,
    Mv,
    Ld,
    Sd,
    Ldx,
    Sdx,
    Csc,
    Clc,
    Candperm,
    Csetbounds,
    Cincoffset,
    Cgetaddr,
    Cgettag,
    Cllc,
    Beq,
    Bne,
    Blt,
    Bge,
    J,
    Cjalr,
    Ecall,
    Out,
    Halt,
}

impl Opcode {
    pub fn mnemonic(self) -> &'static str {
        use Opcode::*;
        match self {
            Add => "ADD",
            Sub => "SUB",
            Mul => "MUL",
            And => "AND",
            Or => "OR",
            Xor => "XOR",
            Sll => "SLL",
            Srl => "SRL",
            Sra => "SRA",
            Slt => "SLT",
            Sltu => "SLTU",
            Addi => "ADDI",
            Andi => "ANDI",
            Ori => "ORI",
            Xori => "XORI",
            Slti => "SLTI",
            Li => "LI",
            Mv => "MV",
            Ld => "LD",
            Sd => "SD",
            Ldx => "LDX",
            Sdx => "SDX",
            Csc => "CSC",
            Clc => "CLC",
            Candperm => "CANDPERM",
            Csetbounds => "CSETBOUNDS",
            Cincoffset => "CINCOFFSET",
            Cgetaddr => "CGETADDR",
            Cgettag => "CGETTAG",
            Cllc => "CLLC",
            Beq => "BEQ",
            Bne => "BNE",
            Blt => "BLT",
            Bge => "BGE",
            J => "J",
            Cjalr => "CJALR",
            Ecall => "ECALL",
            Out => "OUT",
            Halt => "HALT",
        }
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

impl Instruction {
    pub fn opcode(&self) -> Opcode {
        use Instruction as I;
        match *self {
            I::Alu { op, .. } => match op {
                AluOp::Add => Opcode::Add,
                AluOp::Sub => Opcode::Sub,
                AluOp::Mul => Opcode::Mul,
                AluOp::And => Opcode::And,
                AluOp::Or => Opcode::Or,
                AluOp::Xor => Opcode::Xor,
                AluOp::Sll => Opcode::Sll,
                AluOp::Srl => Opcode::Srl,
                AluOp::Sra => Opcode::Sra,
                AluOp::Slt => Opcode::Slt,
                AluOp::Sltu => Opcode::Sltu,
            },
            I::AluImm { op, .. } => match op {
                AluImmOp::Addi => Opcode::Addi,
                AluImmOp::Andi => Opcode::Andi,
                AluImmOp::Ori => Opcode::Ori,
                AluImmOp::Xori => Opcode::Xori,
                AluImmOp::Slti => Opcode::Slti,
            },
            I::Li { .. } => Opcode::Li,
            I::Mv { .. } => Opcode::Mv,
            I::Ld { .. } => Opcode::Ld,
            I::Sd { .. } => Opcode::Sd,
            I::Ldx { .. } => Opcode::Ldx,
            I::Sdx { .. } => Opcode::Sdx,
            I::Csc { .. } => Opcode::Csc,
            I::Clc { .. } => Opcode::Clc,
            I::CapMod { op, .. } => match op {
                CapModOp::AndPerm => Opcode::Candperm,
                CapModOp::SetBounds => Opcode::Csetbounds,
                CapModOp::IncOffset => Opcode::Cincoffset,
            },
            I::CGetAddr { .. } => Opcode::Cgetaddr,
            I::CGetTag { .. } => Opcode::Cgettag,
            I::Cllc { .. } => Opcode::Cllc,
            I::Branch { cond, .. } => match cond {
                BranchCond::Eq => Opcode::Beq,
                BranchCond::Ne => Opcode::Bne,
                BranchCond::Lt => Opcode::Blt,
                BranchCond::Ge => Opcode::Bge,
            },
            I::J { .. } => Opcode::J,
            I::Cjalr { .. } => Opcode::Cjalr,
            I::Ecall => Opcode::Ecall,
            I::Out { .. } => Opcode::Out,
            I::Halt => Opcode::Halt,
        }
    }

    /// Registers read by the instruction (x0 included when named).
    pub fn sources(&self) -> ([Option<Reg>; 3], usize) {
        use Instruction as I;
        let v: [Option<Reg>; 3] = match *self {
            I::Alu { rs1, rs2, .. } => [Some(rs1), Some(rs2), None],
            I::AluImm { rs1, .. } => [Some(rs1), None, None],
            I::Mv { rs, .. } => [Some(rs), None, None],
            I::Ld { cs, .. } | I::Clc { cs, .. } => [Some(cs), None, None],
            I::Sd { rs, cs, .. } | I::Csc { rs, cs, .. } => [Some(rs), Some(cs), None],
            I::Ldx { rx, cs, .. } => [Some(rx), Some(cs), None],
            I::Sdx { rs, rx, cs } => [Some(rs), Some(rx), Some(cs)],
            I::CapMod { cs, rs, .. } => [Some(cs), Some(rs), None],
            I::CGetAddr { cs, .. } | I::CGetTag { cs, .. } => [Some(cs), None, None],
            I::Branch { rs1, rs2, .. } => [Some(rs1), Some(rs2), None],
            I::Cjalr { cs, .. } => [Some(cs), None, None],
            I::Out { rs } => [Some(rs), None, None],
            I::Ecall => [Some(Reg::A0), Some(Reg::A1), Some(Reg::A2)],
            I::Li { .. } | I::Cllc { .. } | I::J { .. } | I::Halt => [None, None, None],
        };
        let n = v.iter().filter(|r| r.is_some()).count();
        (v, n)
    }

    /// Register written, if any.
    pub fn dest(&self) -> Option<Reg> {
        use Instruction as I;
        match *self {
            I::Alu { rd, .. }
            | I::AluImm { rd, .. }
            | I::Li { rd, .. }
            | I::Mv { rd, .. }
            | I::Ld { rd, .. }
            | I::Ldx { rd, .. }
            | I::Clc { rd, .. }
            | I::CGetAddr { rd, .. }
            | I::CGetTag { rd, .. } => Some(rd),
            I::CapMod { cd, .. } | I::Cllc { cd, .. } | I::Cjalr { cd, .. } => Some(cd),
            _ => None,
        }
    }

    pub fn is_memory_access(&self) -> bool {
        matches!(
            self,
            Instruction::Ld { .. }
                | Instruction::Sd { .. }
                | Instruction::Ldx { .. }
                | Instruction::Sdx { .. }
                | Instruction::Csc { .. }
                | Instruction::Clc { .. }
        )
    }
}
