//! Host instruction set.
//!
//! Translated code runs on a small register machine with sixteen registers
//! and a packed four-bit flags word. The register file has a fixed role
//! assignment: `h0` through `h11` cache guest `r0` through `r11`, `h12`
//! through `h14` are scratch, and `h15` holds the base address of the
//! emulated state area so that loads and stores relative to it address
//! individual state slots. Guest `r12` through `r14` stay memory resident
//! and are spilled through scratch registers when an instruction touches
//! them.
//!
//! ALU instructions are three-operand and exist in a plain and a flagged
//! form; the flagged form and `hcmp` write the host flags with the same
//! per-operation semantics as the guest (additive operations define all
//! four flags, logical ones define N and Z, shifts define N, Z and C).
//! `hflags2reg`, `hreg2flags` and `hflagext` move the packed flags word, or
//! a single named flag, between the flags register and a general register.

use std::fmt;

use crate::guest::{Cond, Flag};

/// Host register name, `h0` through `h15`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HReg(pub u8);

impl HReg {
    /// First scratch register, also the argument and result register of the
    /// address-translation helper.
    pub const S0: HReg = HReg(12);
    /// Second scratch register.
    pub const S1: HReg = HReg(13);
    /// Third scratch register.
    pub const S2: HReg = HReg(14);
    /// Base address of the emulated state area.
    pub const ENV: HReg = HReg(15);

    /// The host register that caches a guest register, if it has one.
    pub fn for_guest(index: usize) -> Option<HReg> {
        if index < 12 { Some(HReg(index as u8)) } else { None }
    }
}

impl fmt::Display for HReg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "h{}", self.0)
    }
}

/// Second source operand of an ALU instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HOperand {
    Reg(HReg),
    Imm(u32),
}

impl fmt::Display for HOperand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HOperand::Reg(r) => write!(f, "{r}"),
            HOperand::Imm(v) => write!(f, "#{:#x}", v),
        }
    }
}

/// Memory operand, a base register plus a byte displacement. When the base
/// is [`HReg::ENV`] the access addresses a slot of the emulated state area;
/// any other base addresses guest physical memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HAddr {
    pub base: HReg,
    pub offset: i32,
}

impl HAddr {
    pub fn env(offset: i32) -> HAddr {
        HAddr { base: HReg::ENV, offset }
    }
}

impl fmt::Display for HAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.offset == 0 {
            write!(f, "[{}]", self.base)
        } else {
            write!(f, "[{}, #{}]", self.base, self.offset)
        }
    }
}

/// ALU operation selector shared by the plain and flagged instruction forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HAluOp {
    Add,
    Sub,
    And,
    Or,
    Xor,
    Shl,
    Shr,
}

impl HAluOp {
    fn mnemonic(self) -> &'static str {
        match self {
            HAluOp::Add => "hadd",
            HAluOp::Sub => "hsub",
            HAluOp::And => "hand",
            HAluOp::Or => "hor",
            HAluOp::Xor => "hxor",
            HAluOp::Shl => "hshl",
            HAluOp::Shr => "hshr",
        }
    }
}

/// Branch condition of `hjcc`, evaluated against the host flags with the
/// same encoding the guest uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HCond {
    Eq,
    Ne,
    Ge,
    Lt,
}

impl HCond {
    /// The condition that accepts exactly the flag states this one rejects.
    pub fn negated(self) -> HCond {
        match self {
            HCond::Eq => HCond::Ne,
            HCond::Ne => HCond::Eq,
            HCond::Ge => HCond::Lt,
            HCond::Lt => HCond::Ge,
        }
    }

    /// The host condition that mirrors a guest condition. `AL` has no
    /// mirror because an always-taken branch is emitted as `hjmp`.
    pub fn from_guest(cond: Cond) -> Option<HCond> {
        match cond {
            Cond::Eq => Some(HCond::Eq),
            Cond::Ne => Some(HCond::Ne),
            Cond::Ge => Some(HCond::Ge),
            Cond::Lt => Some(HCond::Lt),
            Cond::Al => None,
        }
    }
}

impl fmt::Display for HCond {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let text = match self {
            HCond::Eq => "eq",
            HCond::Ne => "ne",
            HCond::Ge => "ge",
            HCond::Lt => "lt",
        };
        f.write_str(text)
    }
}

/// Branch label, unique within one translated block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Label(pub u32);

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}", self.0)
    }
}

/// Target of `hjmp`: a label inside the current block, or the entry of
/// another translated block once the edge has been chained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JumpTarget {
    Local(Label),
    Chain(u32),
}

impl fmt::Display for JumpTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            JumpTarget::Local(label) => write!(f, "{label}"),
            JumpTarget::Chain(tb) => write!(f, "@tb{tb}"),
        }
    }
}

/// Which runtime helper an `hcall` invokes. The per-site details (guest
/// program counter, operand registers, deferred work) live in the block's
/// call-site table, not in the instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HelperKind {
    /// Translate a guest virtual address for a read. Takes the address in
    /// `h12`, returns the physical address in `h12`, clobbers `h13`, `h14`
    /// and the flags.
    MmuRead,
    /// Same as [`HelperKind::MmuRead`] but checks write permission.
    MmuWrite,
    /// Execute a system-level guest instruction against the state area.
    /// Clobbers `h13`, `h14` and the flags; `h12` is not meaningful
    /// afterwards.
    System,
}

impl fmt::Display for HelperKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let text = match self {
            HelperKind::MmuRead => "mmu_read",
            HelperKind::MmuWrite => "mmu_write",
            HelperKind::System => "system",
        };
        f.write_str(text)
    }
}

/// One host instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HostInstr {
    /// `rd := src`. Does not touch the flags.
    HMov { rd: HReg, src: HOperand },
    /// `rd := rn <op> src`, optionally updating the flags.
    HAlu { op: HAluOp, rd: HReg, rn: HReg, src: HOperand, set_flags: bool },
    /// Compare: flags of `rn - src`, no register result.
    HCmp { rn: HReg, src: HOperand },
    /// Conditional branch on the host flags.
    HJcc { cond: HCond, target: Label },
    /// Unconditional branch.
    HJmp { target: JumpTarget },
    /// Load a word from memory into `rd`.
    HLd { rd: HReg, addr: HAddr },
    /// Store the word in `rs` to memory.
    HSt { rs: HReg, addr: HAddr },
    /// `rd := flags`, the packed four-bit word.
    HFlags2Reg { rd: HReg },
    /// `flags := rn & 0xf`.
    HReg2Flags { rn: HReg },
    /// `rd := flags[flag]`, a single bit as 0 or 1.
    HFlagExt { rd: HReg, flag: Flag },
    /// Call a runtime helper; `site` indexes the block's call-site table.
    HCall { helper: HelperKind, site: u32 },
    /// Leave translated code; `edge` indexes the block's exit table.
    HExit { edge: u32 },
}

impl fmt::Display for HostInstr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            HostInstr::HMov { rd, src } => write!(f, "hmov {rd}, {src}"),
            HostInstr::HAlu { op, rd, rn, src, set_flags } => {
                let s = if set_flags { "s" } else { "" };
                write!(f, "{}{s} {rd}, {rn}, {src}", op.mnemonic())
            }
            HostInstr::HCmp { rn, src } => write!(f, "hcmp {rn}, {src}"),
            HostInstr::HJcc { cond, target } => write!(f, "hjcc {cond}, {target}"),
            HostInstr::HJmp { target } => write!(f, "hjmp {target}"),
            HostInstr::HLd { rd, addr } => write!(f, "hld {rd}, {addr}"),
            HostInstr::HSt { rs, addr } => write!(f, "hst {rs}, {addr}"),
            HostInstr::HFlags2Reg { rd } => write!(f, "hflags2reg {rd}"),
            HostInstr::HReg2Flags { rn } => write!(f, "hreg2flags {rn}"),
            HostInstr::HFlagExt { rd, flag } => write!(f, "hflagext {rd}, {flag}"),
            HostInstr::HCall { helper, site } => write!(f, "hcall {helper} @{site}"),
            HostInstr::HExit { edge } => write!(f, "hexit e{edge}"),
        }
    }
}

/// Accounting category of one emitted host instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tag {
    /// Carries the guest instruction's own semantics.
    Translated,
    /// Part of a state coordination sequence.
    Sync,
    /// A helper call, charged with the helper's modeled cost.
    Helper,
    /// Part of an interrupt check.
    Check,
    /// The direct jump of a chained block edge.
    Chain,
}

impl Tag {
    pub const ALL: [Tag; 5] = [Tag::Translated, Tag::Sync, Tag::Helper, Tag::Check, Tag::Chain];

    pub fn name(self) -> &'static str {
        match self {
            Tag::Translated => "translated",
            Tag::Sync => "sync",
            Tag::Helper => "helper",
            Tag::Check => "check",
            Tag::Chain => "chain",
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
