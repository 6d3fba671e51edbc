//! Blindedness propagation and side-channel fault rules.
//!
//! These are the per-instruction-class decisions the executor applies before
//! any capability check. Each function takes only blindedness bits so the
//! full decision table can be enumerated in tests.

use core::fmt;

/// Everything that can stop a machine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FaultKind {
    /// Blinded data stored through a non-blinded capability.
    BlindedStore,
    /// A valid capability stored through a blinded capability.
    CapStoreToBlinded,
    BlindedBranchCondition,
    BlindedJumpTarget,
    /// Blinded operand used to form a memory address.
    BlindedAddress,
    /// Capability-modifying instruction with a blinded operand.
    BlindedCapForgery,
    TagViolation,
    BoundsViolation,
    PermissionViolation,
    MisalignedAccess,
    IllegalInstruction,
    /// Blinded value sent to the output channel or to the runtime.
    BlindedOutput,
    /// Runtime service rejected its arguments (allocator error, exhausted input).
    SyscallError,
}

impl FaultKind {
    pub const ALL: [FaultKind; 13] = [
        FaultKind::BlindedStore,
        FaultKind::CapStoreToBlinded,
        FaultKind::BlindedBranchCondition,
        FaultKind::BlindedJumpTarget,
        FaultKind::BlindedAddress,
        FaultKind::BlindedCapForgery,
        FaultKind::TagViolation,
        FaultKind::BoundsViolation,
        FaultKind::PermissionViolation,
        FaultKind::MisalignedAccess,
        FaultKind::IllegalInstruction,
        FaultKind::BlindedOutput,
        FaultKind::SyscallError,
    ];

    /// Stable numeric code, 1-based. CLI exit status is `10 + code`.
    pub fn code(self) -> u8 {
        FaultKind::ALL.iter().position(|&k| k == self).unwrap() as u8 + 1
    }

    pub fn from_code(code: u8) -> Option<FaultKind> {
        FaultKind::ALL.get(usize::from(code).checked_sub(1)?).copied()
    }

    /// Faults raised by the blindedness rules (as opposed to ordinary
    /// capability or decode faults).
    pub fn is_blindedness(self) -> bool {
        matches!(
            self,
            FaultKind::BlindedStore
                | FaultKind::CapStoreToBlinded
                | FaultKind::BlindedBranchCondition
                | FaultKind::BlindedJumpTarget
                | FaultKind::BlindedAddress
                | FaultKind::BlindedCapForgery
                | FaultKind::BlindedOutput
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            FaultKind::BlindedStore => "BlindedStore",
            FaultKind::CapStoreToBlinded => "CapStoreToBlinded",
            FaultKind::BlindedBranchCondition => "BlindedBranchCondition",
            FaultKind::BlindedJumpTarget => "BlindedJumpTarget",
            FaultKind::BlindedAddress => "BlindedAddress",
            FaultKind::BlindedCapForgery => "BlindedCapForgery",
            FaultKind::TagViolation => "TagViolation",
            FaultKind::BoundsViolation => "BoundsViolation",
            FaultKind::PermissionViolation => "PermissionViolation",
            FaultKind::MisalignedAccess => "MisalignedAccess",
            FaultKind::IllegalInstruction => "IllegalInstruction",
            FaultKind::BlindedOutput => "BlindedOutput",
            FaultKind::SyscallError => "SyscallError",
        }
    }
}

impl fmt::Display for FaultKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Register-to-register result blindedness.
pub fn alu_taint(a: bool, b: bool) -> bool {
    a || b
}

/// Control flow: condition operands, target register, target capability.
pub fn branch_rule(cond_blinded: bool, target_reg_blinded: bool, target_cap_blinded: bool) -> Result<(), FaultKind> {
    if cond_blinded {
        Err(FaultKind::BlindedBranchCondition)
    } else if target_reg_blinded || target_cap_blinded {
        Err(FaultKind::BlindedJumpTarget)
    } else {
        Ok(())
    }
}

/// Loads: returns the destination blindedness.
pub fn load_rule(cap_blinded: bool, addr_reg_blinded: bool) -> Result<bool, FaultKind> {
    if addr_reg_blinded {
        Err(FaultKind::BlindedAddress)
    } else {
        Ok(cap_blinded)
    }
}

/// Stores. The blindedness bit itself is never written to memory.
pub fn store_rule(cap_blinded: bool, addr_reg_blinded: bool, data_blinded: bool) -> Result<(), FaultKind> {
    if addr_reg_blinded {
        Err(FaultKind::BlindedAddress)
    } else if data_blinded && !cap_blinded {
        Err(FaultKind::BlindedStore)
    } else {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_round_trip() {
        for k in FaultKind::ALL {
            assert_eq!(FaultKind::from_code(k.code()), Some(k));
        }
        assert_eq!(FaultKind::from_code(0), None);
        assert_eq!(FaultKind::BlindedBranchCondition.code(), 3);
    }

    #[test]
    fn spot_checks() {
        assert!(alu_taint(true, false));
        assert!(!alu_taint(false, false));
        assert_eq!(branch_rule(false, false, true), Err(FaultKind::BlindedJumpTarget));
        assert_eq!(load_rule(true, false), Ok(true));
        assert_eq!(store_rule(true, false, true), Ok(()));
    }
}
