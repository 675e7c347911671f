//! Guest instruction set: decoded instruction forms, condition codes, and
//! the flag algebra shared by everything that reasons about guest code.
//!
//! The ISA is a small ARM-flavored subset. Instructions are 4 bytes wide and
//! live in an instruction store separate from data memory; `pc` is always a
//! multiple of 4. Only ALU instructions and plain branches accept a condition
//! suffix, and only ALU instructions accept an `s` suffix. `cmp` always sets
//! flags and is always unconditional, which keeps every flag write in a block
//! statically known.

pub mod asm;

use std::fmt;

use serde::{Deserialize, Serialize};

/// Width of one guest instruction slot in the instruction store.
pub const INSTR_SIZE: u32 = 4;

/// Guest general register name, `r0` through `r14`. `r13` is conventionally
/// the stack pointer and `r14` the link register, but nothing enforces that.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Reg(pub u8);

impl Reg {
    pub const LR: Reg = Reg(14);

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

/// Condition codes. The subset covers equality and signed comparison, which
/// is enough to express loops and guarded arithmetic while keeping the
/// flag-use analysis small.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cond {
    /// Z set.
    Eq,
    /// Z clear.
    Ne,
    /// N equal to V.
    Ge,
    /// N not equal to V.
    Lt,
    /// Always.
    Al,
}

impl Cond {
    pub fn suffix(self) -> &'static str {
        match self {
            Cond::Eq => "eq",
            Cond::Ne => "ne",
            Cond::Ge => "ge",
            Cond::Lt => "lt",
            Cond::Al => "",
        }
    }

    /// Flags read when evaluating this condition.
    pub fn flags_read(self) -> FlagSet {
        match self {
            Cond::Eq | Cond::Ne => FlagSet::Z,
            Cond::Ge | Cond::Lt => FlagSet::N.union(FlagSet::V),
            Cond::Al => FlagSet::EMPTY,
        }
    }

    pub fn holds(self, ccr: Ccr) -> bool {
        match self {
            Cond::Eq => ccr.z(),
            Cond::Ne => !ccr.z(),
            Cond::Ge => ccr.n() == ccr.v(),
            Cond::Lt => ccr.n() != ccr.v(),
            Cond::Al => true,
        }
    }
}

/// One condition flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Flag {
    N,
    Z,
    C,
    V,
}

impl Flag {
    pub const ALL: [Flag; 4] = [Flag::N, Flag::Z, Flag::C, Flag::V];

    /// Bit position inside the packed condition-code word.
    pub fn bit(self) -> u32 {
        match self {
            Flag::N => 3,
            Flag::Z => 2,
            Flag::C => 1,
            Flag::V => 0,
        }
    }
}

impl fmt::Display for Flag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Flag::N => "N",
            Flag::Z => "Z",
            Flag::C => "C",
            Flag::V => "V",
        };
        f.write_str(s)
    }
}

/// Set of condition flags, packed into the low four bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct FlagSet(pub u8);

impl FlagSet {
    pub const EMPTY: FlagSet = FlagSet(0);
    pub const N: FlagSet = FlagSet(1 << 3);
    pub const Z: FlagSet = FlagSet(1 << 2);
    pub const C: FlagSet = FlagSet(1 << 1);
    pub const V: FlagSet = FlagSet(1 << 0);
    pub const NZCV: FlagSet = FlagSet(0b1111);

    pub fn union(self, other: FlagSet) -> FlagSet {
        FlagSet(self.0 | other.0)
    }

    pub fn contains(self, flag: Flag) -> bool {
        self.0 & (1 << flag.bit()) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }
}

/// Packed guest condition-code register: N, Z, C, V in bits 3..0.
///
/// The packing is the one sync operations store into the `ccr_packed` slot of
/// the emulator state area, so the same layout is visible to guest code
/// through `getcpsr`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Ccr(pub u8);

impl Ccr {
    pub fn n(self) -> bool {
        self.0 & (1 << 3) != 0
    }
    pub fn z(self) -> bool {
        self.0 & (1 << 2) != 0
    }
    pub fn c(self) -> bool {
        self.0 & (1 << 1) != 0
    }
    pub fn v(self) -> bool {
        self.0 & (1 << 0) != 0
    }

    pub fn get(self, flag: Flag) -> bool {
        self.0 & (1 << flag.bit()) != 0
    }

    pub fn with(self, flag: Flag, value: bool) -> Ccr {
        let mask = 1 << flag.bit();
        Ccr(if value { self.0 | mask } else { self.0 & !mask })
    }

    pub fn from_bits(n: bool, z: bool, c: bool, v: bool) -> Ccr {
        Ccr((u8::from(n) << 3) | (u8::from(z) << 2) | (u8::from(c) << 1) | u8::from(v))
    }

    /// Merge `new` into `self` for the flags named in `defined`, leaving the
    /// rest untouched. Logical and shift instructions update N and Z but
    /// preserve C and V, so partial writes are the common case.
    pub fn merge(self, new: Ccr, defined: FlagSet) -> Ccr {
        Ccr((self.0 & !defined.0) | (new.0 & defined.0))
    }
}

impl fmt::Display for Ccr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}{}{}{}",
            if self.n() { 'N' } else { 'n' },
            if self.z() { 'Z' } else { 'z' },
            if self.c() { 'C' } else { 'c' },
            if self.v() { 'V' } else { 'v' }
        )
    }
}

/// Two-operand ALU group: `mov`/`mvn`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MoveOp {
    Mov,
    Mvn,
}

/// Three-operand ALU group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AluOp {
    Add,
    Sub,
    And,
    Orr,
    Eor,
    Lsl,
    Lsr,
}

impl AluOp {
    pub fn name(self) -> &'static str {
        match self {
            AluOp::Add => "add",
            AluOp::Sub => "sub",
            AluOp::And => "and",
            AluOp::Orr => "orr",
            AluOp::Eor => "eor",
            AluOp::Lsl => "lsl",
            AluOp::Lsr => "lsr",
        }
    }

    /// Flags an `s`-suffixed instance defines. Add and subtract produce the
    /// full NZCV set; logical and shift forms define N and Z, and shifts also
    /// produce a carry-out.
    pub fn flags_defined(self) -> FlagSet {
        match self {
            AluOp::Add | AluOp::Sub => FlagSet::NZCV,
            AluOp::And | AluOp::Orr | AluOp::Eor => FlagSet::N.union(FlagSet::Z),
            AluOp::Lsl | AluOp::Lsr => FlagSet::N.union(FlagSet::Z).union(FlagSet::C),
        }
    }
}

/// Named system registers reachable through `vmsr`/`vmrs`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SysReg {
    /// Scratch control register with no architectural side effects.
    Fpscr,
    /// Exception link register: return address captured at delivery.
    Elr,
    /// Saved program status: packed flags and mode captured at delivery.
    Spsr,
}

impl SysReg {
    pub fn name(self) -> &'static str {
        match self {
            SysReg::Fpscr => "fpscr",
            SysReg::Elr => "elr",
            SysReg::Spsr => "spsr",
        }
    }
}

/// Second operand of an ALU or compare instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Operand {
    Reg(Reg),
    Imm(i64),
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Reg(r) => write!(f, "{r}"),
            Operand::Imm(v) => write!(f, "#{v}"),
        }
    }
}

/// A decoded guest instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Instr {
    /// `mov`/`mvn`, optionally flag-setting, optionally conditional.
    Move {
        op: MoveOp,
        cond: Cond,
        set_flags: bool,
        rd: Reg,
        src: Operand,
    },
    /// Three-operand ALU, optionally flag-setting, optionally conditional.
    Alu {
        op: AluOp,
        cond: Cond,
        set_flags: bool,
        rd: Reg,
        rn: Reg,
        src: Operand,
    },
    /// Compare: subtract and set flags, result discarded. Unconditional.
    Cmp { rn: Reg, src: Operand },
    /// Word load, `ldr rd, [rn, #off]`.
    Ldr { rd: Reg, rn: Reg, off: i32 },
    /// Word store, `str rs, [rn, #off]`.
    Str { rs: Reg, rn: Reg, off: i32 },
    /// Branch to a fixed address, optionally conditional.
    B { cond: Cond, target: u32 },
    /// Branch and link: `r14 := pc + 4`, then jump.
    Bl { target: u32 },
    /// Branch to a register value.
    Bx { rm: Reg },
    /// Write a system register from a general register.
    Vmsr { sysreg: SysReg, rn: Reg },
    /// Read a system register into a general register.
    Vmrs { rd: Reg, sysreg: SysReg },
    /// Write packed flags and mode from a register.
    SetCpsr { rn: Reg },
    /// Read packed flags and mode into a register.
    GetCpsr { rd: Reg },
    /// Invalidate TLB and discard block chaining.
    Tlbi,
    /// Software interrupt with an immediate vector number.
    Svc { vector: u32 },
    /// Stop the machine.
    Halt,
}

/// Coarse translation category of an instruction. The category decides which
/// lowering path the translator takes and which coordination trigger the
/// instruction is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Category {
    /// Register-to-register compute, candidate for pattern rules.
    RuleEligible,
    /// Goes through the software MMU.
    MemoryAccess,
    /// Needs a runtime helper with emulator-visible state.
    SystemLevel,
    /// Ends a block with a control transfer.
    Branch,
    /// Ends the program.
    Halt,
}

impl Instr {
    pub fn category(&self) -> Category {
        match self {
            Instr::Move { .. } | Instr::Alu { .. } | Instr::Cmp { .. } => Category::RuleEligible,
            Instr::Ldr { .. } | Instr::Str { .. } => Category::MemoryAccess,
            Instr::Vmsr { .. }
            | Instr::Vmrs { .. }
            | Instr::SetCpsr { .. }
            | Instr::GetCpsr { .. }
            | Instr::Tlbi
            | Instr::Svc { .. } => Category::SystemLevel,
            Instr::B { .. } | Instr::Bl { .. } | Instr::Bx { .. } => Category::Branch,
            Instr::Halt => Category::Halt,
        }
    }

    pub fn cond(&self) -> Cond {
        match self {
            Instr::Move { cond, .. } | Instr::Alu { cond, .. } | Instr::B { cond, .. } => *cond,
            _ => Cond::Al,
        }
    }

    /// Flags this instruction defines. `setcpsr` rewrites the whole set
    /// through its helper; everything else is a plain ALU write.
    pub fn flags_defined(&self) -> FlagSet {
        match self {
            Instr::Move { set_flags: true, .. } => FlagSet::N.union(FlagSet::Z),
            Instr::Alu { op, set_flags: true, .. } => op.flags_defined(),
            Instr::Cmp { .. } => FlagSet::NZCV,
            Instr::SetCpsr { .. } => FlagSet::NZCV,
            _ => FlagSet::EMPTY,
        }
    }

    /// Flags this instruction reads: its condition, plus the whole set for
    /// instructions that capture the flags as data.
    pub fn flags_used(&self) -> FlagSet {
        let cond = self.cond().flags_read();
        match self {
            Instr::GetCpsr { .. } => cond.union(FlagSet::NZCV),
            // Partial flag writers merge into the current set, so the
            // preserved bits count as read.
            Instr::Move { set_flags: true, .. } => cond.union(FlagSet::C).union(FlagSet::V),
            Instr::Alu { op, set_flags: true, .. } => {
                cond.union(FlagSet(FlagSet::NZCV.0 & !op.flags_defined().0))
            }
            _ => cond,
        }
    }

    /// General registers read, including address bases and stored data.
    pub fn regs_read(&self) -> Vec<Reg> {
        let mut out = Vec::new();
        let op_reg = |op: &Operand, out: &mut Vec<Reg>| {
            if let Operand::Reg(r) = op {
                out.push(*r);
            }
        };
        match self {
            Instr::Move { src, .. } => op_reg(src, &mut out),
            Instr::Alu { rn, src, .. } => {
                out.push(*rn);
                op_reg(src, &mut out);
            }
            Instr::Cmp { rn, src } => {
                out.push(*rn);
                op_reg(src, &mut out);
            }
            Instr::Ldr { rn, .. } => out.push(*rn),
            Instr::Str { rs, rn, .. } => {
                out.push(*rs);
                out.push(*rn);
            }
            Instr::Bx { rm } => out.push(*rm),
            Instr::Vmsr { rn, .. } | Instr::SetCpsr { rn } => out.push(*rn),
            _ => {}
        }
        out
    }

    /// General registers written.
    pub fn regs_written(&self) -> Vec<Reg> {
        match self {
            Instr::Move { rd, .. }
            | Instr::Alu { rd, .. }
            | Instr::Ldr { rd, .. }
            | Instr::Vmrs { rd, .. }
            | Instr::GetCpsr { rd } => vec![*rd],
            Instr::Bl { .. } => vec![Reg::LR],
            _ => Vec::new(),
        }
    }
}

/// An assembled program: decoded instructions and initial data keyed by
/// address, plus the entry point.
#[derive(Debug, Clone, Default)]
pub struct Program {
    /// Instruction store, keyed by virtual address. Harvard-style: data
    /// accesses never see these.
    pub instrs: std::collections::BTreeMap<u32, Instr>,
    /// Initial data words, keyed by physical address.
    pub data: std::collections::BTreeMap<u32, u32>,
    /// Address of the first instruction to execute.
    pub entry: u32,
    /// Label table kept for diagnostics and workload files.
    pub labels: std::collections::BTreeMap<String, u32>,
}

impl Program {
    pub fn fetch(&self, pc: u32) -> Option<&Instr> {
        self.instrs.get(&pc)
    }
}
