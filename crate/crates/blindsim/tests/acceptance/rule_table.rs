//! Blindedness propagation and fault rules, row by row. Each row is checked
//! against the rule functions and by running real instructions.

use blindcap::machine::rules::{alu_taint, branch_rule, load_rule, store_rule, FaultKind};

use super::common::{blinds, check, halts, Expect};

const ALU_RR: [&str; 11] = ["ADD", "SUB", "MUL", "AND", "OR", "XOR", "SLL", "SRL", "SRA", "SLT", "SLTU"];
const ALU_RI: [&str; 5] = ["ADDI", "ANDI", "ORI", "XORI", "SLTI"];

fn reg(blinded: bool) -> &'static str {
    if blinded {
        "x5"
    } else {
        "x6"
    }
}

struct Row {
    name: &'static str,
    rule: Result<Option<bool>, FaultKind>,
    expect: Expect,
    programs: Vec<String>,
}

fn fault(k: FaultKind) -> Expect {
    Expect::Fault(k)
}

fn rows() -> Vec<Row> {
    use FaultKind::*;
    let mut rows = Vec::new();
    for (a, b) in [(false, false), (false, true), (true, false), (true, true)] {
        let want = a || b;
        let mut programs: Vec<String> = ALU_RR.iter().map(|op| format!("{op} x7, {}, {}", reg(a), reg(b))).collect();
        if a == b {
            programs.extend(ALU_RI.iter().map(|op| format!("{op} x7, {}, 3", reg(a))));
            programs.push(format!("MV x7, {}", reg(a)));
        }
        rows.push(Row { name: "arithmetic", rule: Ok(Some(alu_taint(a, b))), expect: blinds(want), programs });
    }
    rows.push(Row {
        name: "branch: nothing blinded",
        rule: branch_rule(false, false, false).map(|_| None),
        expect: halts(),
        programs: vec!["BEQ x6, x6, t".into(), "BLT x0, x6, t".into(), "CJALR x1, x22".into(), "J t".into()],
    });
    rows.push(Row {
        name: "branch: blinded condition",
        rule: branch_rule(true, false, false).map(|_| None),
        expect: fault(BlindedBranchCondition),
        programs: vec!["BEQ x5, x6, t".into(), "BNE x6, x5, t".into(), "BLT x5, x0, t".into(), "BGE x6, x5, t".into()],
    });
    rows.push(Row {
        name: "branch: blinded target register",
        rule: branch_rule(false, true, false).map(|_| None),
        expect: fault(BlindedJumpTarget),
        programs: vec!["CJALR x1, x5".into(), "CJALR x0, x5".into(), "ADD x9, x5, x6\nCJALR x1, x9".into()],
    });
    rows.push(Row {
        name: "branch: blinded target capability",
        rule: branch_rule(false, false, true).map(|_| None),
        expect: fault(BlindedJumpTarget),
        programs: vec!["LI x9, 5\nCANDPERM x8, x22, x9\nCJALR x1, x8".into(), "LI x9, 4\nCANDPERM x8, x22, x9\nCJALR x0, x8".into()],
    });
    rows.push(Row {
        name: "load: plain cap, public index",
        rule: load_rule(false, false).map(Some),
        expect: blinds(false),
        programs: vec!["LD x7, 8(x21)".into(), "LDX x7, x6(x21)".into(), "CLC x7, 16(x21)".into()],
    });
    rows.push(Row {
        name: "load: blinded cap, public index",
        rule: load_rule(true, false).map(Some),
        expect: blinds(true),
        programs: vec!["LD x7, 8(x20)".into(), "LDX x7, x6(x20)".into(), "CLC x7, 16(x20)".into()],
    });
    for cap in [false, true] {
        rows.push(Row {
            name: "load: blinded index",
            rule: load_rule(cap, true).map(Some),
            expect: fault(BlindedAddress),
            programs: vec![format!("LDX x7, x5({})", if cap { "x20" } else { "x21" })],
        });
    }
    rows.push(Row {
        name: "store: plain cap, public data",
        rule: store_rule(false, false, false).map(|_| None),
        expect: halts(),
        programs: vec!["SD x6, 0(x21)".into(), "SDX x6, x6(x21)".into(), "CSC x6, 16(x21)".into()],
    });
    rows.push(Row {
        name: "store: plain cap, blinded data",
        rule: store_rule(false, false, true).map(|_| None),
        expect: fault(BlindedStore),
        programs: vec!["SD x5, 0(x21)".into(), "SDX x5, x6(x21)".into(), "CSC x5, 16(x21)".into()],
    });
    for data in [false, true] {
        rows.push(Row {
            name: "store: blinded cap",
            rule: store_rule(true, false, data).map(|_| None),
            expect: halts(),
            programs: vec![format!("SD {}, 0(x20)", reg(data)), format!("SDX {}, x6(x20)", reg(data)), format!("CSC {}, 16(x20)", reg(data))],
        });
    }
    for (cap, data) in [(false, false), (false, true), (true, false), (true, true)] {
        rows.push(Row {
            name: "store: blinded index",
            rule: store_rule(cap, true, data).map(|_| None),
            expect: fault(BlindedAddress),
            programs: vec![format!("SDX {}, x5({})", reg(data), if cap { "x20" } else { "x21" })],
        });
    }
    rows
}

fn rule_matches(rule: &Result<Option<bool>, FaultKind>, expect: &Expect) -> bool {
    match (rule, expect) {
        (Ok(Some(b)), Expect::Halt { x7_blinded: Some(e), .. }) => b == e,
        (Ok(None), Expect::Halt { x7_blinded: None, .. }) => true,
        (Err(k), Expect::Fault(e)) => k == e,
        _ => false,
    }
}

/// Rows are grouped as in the decision table: 4 arithmetic, 4 branching,
/// 3 load and 4 store rows. Rows with a don't-care input are expanded.
pub fn run() -> Result<String, String> {
    let rows = rows();
    let mut programs = 0;
    for r in &rows {
        if !rule_matches(&r.rule, &r.expect) {
            return Err(format!("rule function disagrees on `{}`: {:?} vs {:?}", r.name, r.rule, r.expect));
        }
        for p in &r.programs {
            check(p, "", &r.expect).map_err(|e| format!("`{}` / `{}`: {e}", r.name, p.replace('\n', "; ")))?;
            programs += 1;
        }
    }
    Ok(format!("{} expanded rows, {programs} instruction checks", rows.len()))
}
