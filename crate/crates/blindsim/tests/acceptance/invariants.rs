//! Hand-written programs for each invariant, plus randomized sequences
//! checked differentially.

use blindcap::machine::rules::FaultKind::*;
use blindsim::progen::{asm_sequence, differential, ASM_SECRETS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::common::{check, halts, halts_with, Expect};

const BLINDED_DATA: &str = ".blinded\nsec: .word 0, 0";

fn cases() -> Vec<(&'static str, Expect, &'static str, &'static str)> {
    let f = Expect::Fault;
    vec![
        // I1: blinded data never reaches memory through a non-blinded capability.
        ("I1", f(BlindedStore), "SD x5, 0(x21)", ""),
        ("I1", f(BlindedStore), "SDX x5, x6(x21)", ""),
        ("I1", f(BlindedStore), "CSC x5, 0(x21)", ""),
        ("I1", f(BlindedStore), "SD x5, 0(x2)", ""),
        ("I1", halts(), "SD x5, 0(x20)", ""),
        ("I1", halts(), "CSC x5, 0(x2)\nCLC x7, 0(x2)", ""),
        ("I1", halts(), "ADD x7, x5, x6\nLI x7, 3\nSD x7, 0(x21)", ""),
        ("I1", halts_with(&[1]), "LI x10, 4\nLI x11, 8\nECALL\nSD x5, 0(x10)\nLD x7, 0(x11)\nOUT x7", ""),
        // I2: no capability is ever stored into blinded memory.
        ("I2", f(CapStoreToBlinded), "CSC x21, 0(x20)", ""),
        ("I2", f(CapStoreToBlinded), "CSC x2, 16(x20)", ""),
        ("I2", f(CapStoreToBlinded), "CSC x22, 0(x20)", ""),
        ("I2", f(CapStoreToBlinded), "CLLC x8, sec\nCSC x21, 0(x8)", BLINDED_DATA),
        ("I2", halts(), "CSC x20, 0(x21)\nCLC x8, 0(x21)\nLD x7, 0(x8)", ""),
        ("I2", halts(), "CSC x6, 0(x20)", ""),
        ("I2", halts(), "CSC x21, 0(x2)\nCLC x8, 0(x2)\nLD x7, 0(x8)", ""),
        // I3: blinded and normal allocations never overlap; memory is reused
        // only after it is erased and every capability to it revoked.
        ("I3", f(TagViolation), "MV x8, x20\nLI x10, 3\nMV x11, x20\nECALL\nLD x7, 0(x8)", ""),
        ("I3", f(BoundsViolation), "CGETADDR x7, x20\nCGETADDR x8, x21\nSUB x9, x7, x8\nCINCOFFSET x23, x21, x9\nLD x7, 0(x23)", ""),
        ("I3", f(BoundsViolation), "LI x9, 4096\nCSETBOUNDS x23, x21, x9", ""),
        ("I3", f(TagViolation), "CSC x20, 0(x21)\nLI x10, 3\nMV x11, x20\nECALL\nCLC x8, 0(x21)\nLD x7, 0(x8)", ""),
        ("I3", halts_with(&[1, 1]), "SD x6, 0(x21)\nSD x5, 0(x20)\nLD x7, 0(x21)\nOUT x7\nLD x7, 0(x20)\nCGETTAG x7, x20\nOUT x7", ""),
        (
            "I3",
            halts_with(&[0, 0]),
            "SD x5, 8(x20)\nCGETADDR x9, x20\nLI x10, 3\nMV x11, x20\nECALL\nLI x10, 1\nLI x11, 64\nECALL\nCGETADDR x8, x10\nSUB x8, x8, x9\nOUT x8\nLD x7, 8(x10)\nOUT x7",
            "",
        ),
        ("I3", halts_with(&[1]), "LI x10, 4\nLI x11, 8\nECALL\nSD x5, 0(x10)\nLD x7, 0(x11)\nOUT x7", ""),
        // I4: no blinded branch condition or jump target.
        ("I4", f(BlindedBranchCondition), "BEQ x5, x0, t", ""),
        ("I4", f(BlindedBranchCondition), "BGE x6, x5, t", ""),
        ("I4", f(BlindedJumpTarget), "CJALR x1, x5", ""),
        ("I4", f(BlindedJumpTarget), "LI x9, 5\nCANDPERM x8, x22, x9\nCJALR x1, x8", ""),
        ("I4", halts(), "BEQ x6, x0, t", ""),
        ("I4", halts(), "CGETTAG x7, x20\nBNE x7, x0, t", ""),
        ("I4", halts(), "MV x7, x5\nLI x7, 0\nBEQ x7, x0, t", ""),
        ("I4", halts(), "CJALR x1, x22", ""),
        // I5: no blinded value is used as an address.
        ("I5", f(BlindedAddress), "LDX x7, x5(x21)", ""),
        ("I5", f(BlindedAddress), "SDX x6, x5(x21)", ""),
        ("I5", f(BlindedAddress), "LDX x7, x5(x20)", ""),
        ("I5", f(BlindedAddress), "ADD x9, x5, x6\nSDX x6, x9(x20)", ""),
        ("I5", f(BlindedCapForgery), "CINCOFFSET x8, x21, x5", ""),
        ("I5", halts(), "LDX x7, x6(x20)", ""),
        ("I5", halts(), "SDX x5, x6(x20)", ""),
        ("I5", halts(), "LD x7, 8(x20)\nLDX x8, x6(x21)", ""),
    ]
}

pub fn run(seed: u64) -> Result<String, String> {
    let cases = cases();
    let mut summary = Vec::new();
    for inv in ["I1", "I2", "I3", "I4", "I5"] {
        let mine: Vec<_> = cases.iter().filter(|c| c.0 == inv).collect();
        let pos = mine.iter().filter(|c| matches!(c.1, Expect::Fault(_))).count();
        let neg = mine.len() - pos;
        if pos < 3 || neg < 3 {
            return Err(format!("{inv} has {pos} positive and {neg} negative programs"));
        }
        for (_, expect, body, data) in &mine {
            check(body, data, expect).map_err(|e| format!("{inv} `{}`: {e}", body.replace('\n', "; ")))?;
        }
        summary.push(format!("{inv} {pos}+/{neg}-"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut steps_run = 0;
    for i in 0..1000 {
        let src = asm_sequence(&mut rng, 32);
        let a: Vec<u64> = (0..ASM_SECRETS).map(|_| rng.gen()).collect();
        let b: Vec<u64> = (0..ASM_SECRETS).map(|_| rng.gen()).collect();
        differential(&src, &a, &b, 300).map_err(|l| format!("random sequence {i} leaks at step {}: {}\n{src}", l.step, l.what))?;
        steps_run += 1;
    }
    Ok(format!("{}; {steps_run} random sequences, 0 violations", summary.join(", ")))
}
