//! Translated block representations.
//!
//! Translation produces a block in *marked* form: a sequence of groups, one
//! per guest instruction plus entry and exit groups, whose items keep state
//! coordination, guards, helper calls and interrupt checks as symbolic
//! markers. Optimization passes edit this form. Lowering then expands every
//! marker into concrete host instructions, producing the flat form the host
//! interpreter executes.

use std::collections::BTreeSet;
use std::fmt;

use crate::guest::{Cond, Instr, Reg};
use crate::host::isa::{HelperKind, HostInstr, Label};

/// Direction of a state coordination operation. A save uploads cached
/// state from host registers into the state area; a restore downloads it
/// back.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyncKind {
    Save,
    Restore,
}

/// One piece of guest CPU state named by a coordination operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Component {
    /// A general register cached in a host register, so `r0` through `r11`.
    Gpr(u8),
    /// The condition code register, cached in the host flags.
    Ccr,
    /// The guest program counter.
    Pc,
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Component::Gpr(i) => write!(f, "r{i}"),
            Component::Ccr => f.write_str("ccr"),
            Component::Pc => f.write_str("pc"),
        }
    }
}

/// How the condition code register component is moved. The full form keeps
/// the four per-flag slots coherent; the packed form touches only the
/// single packed word.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyncMode {
    Full,
    Packed,
}

/// Why a coordination operation exists. The cause decides which
/// optimizations may rewrite the operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SyncCause {
    /// Bracketing a system-level helper call.
    SystemLevel,
    /// Bracketing an address-translation helper call.
    MemoryAccess,
    /// Bracketing an interrupt check.
    InterruptCheck,
    /// The upload at a block exit.
    TbBoundary,
    /// Demanded by a translation rule that reads or clobbers the flags,
    /// such as the guard of a conditional instruction.
    ConstrainedRule,
}

impl fmt::Display for SyncCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let text = match self {
            SyncCause::SystemLevel => "system-level",
            SyncCause::MemoryAccess => "memory-access",
            SyncCause::InterruptCheck => "interrupt-check",
            SyncCause::TbBoundary => "tb-boundary",
            SyncCause::ConstrainedRule => "constrained-rule",
        };
        f.write_str(text)
    }
}

/// A state coordination marker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyncOp {
    pub kind: SyncKind,
    pub components: BTreeSet<Component>,
    pub mode: SyncMode,
    pub cause: SyncCause,
}

impl SyncOp {
    pub fn save(components: impl IntoIterator<Item = Component>, cause: SyncCause) -> SyncOp {
        SyncOp { kind: SyncKind::Save, components: components.into_iter().collect(), mode: SyncMode::Full, cause }
    }

    pub fn restore(components: impl IntoIterator<Item = Component>, cause: SyncCause) -> SyncOp {
        SyncOp { kind: SyncKind::Restore, components: components.into_iter().collect(), mode: SyncMode::Full, cause }
    }

    pub fn has_ccr(&self) -> bool {
        self.components.contains(&Component::Ccr)
    }
}

impl fmt::Display for SyncOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            SyncKind::Save => "save",
            SyncKind::Restore => "restore",
        };
        let mode = match self.mode {
            SyncMode::Full => "full",
            SyncMode::Packed => "packed",
        };
        write!(f, "sync-{kind}[{mode}, {}]{{", self.cause)?;
        for (i, c) in self.components.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{c}")?;
        }
        f.write_str("}")
    }
}

/// How a conditional instruction's skip decision is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuardForm {
    /// Load the packed condition code word from the state area and compare
    /// the relevant bits. Clobbers the host flags.
    MemCompare,
    /// A single conditional branch on the live host flags. Used after
    /// restore elimination has established that the flags are valid here.
    DirectFlags,
    /// Load individual flag slots from the state area and compare them.
    /// The form the memory-resident pipeline uses.
    SlotCompare,
}

/// The skip sequence in front of a conditional instruction's payload.
/// Jumps to `skip` when `cond` does not hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Guard {
    pub cond: Cond,
    pub form: GuardForm,
    pub skip: Label,
}

/// Where an exit's program counter value comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcValue {
    Imm(u32),
    FromGuestReg(Reg),
}

/// One element of a group in marked form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Item {
    /// A coordination marker.
    Sync(SyncOp),
    /// Concrete host instructions carrying guest semantics.
    Code(Vec<HostInstr>),
    /// Conditional skip sequence.
    Guard(Guard),
    /// Branch target for guards and checks.
    SetLabel(Label),
    /// Pending-interrupt check; three host instructions that branch to the
    /// block's interrupt exit when an interrupt is pending.
    Check { irq: Label },
    /// A helper call; `site` indexes the block's call-site table.
    Call { helper: HelperKind, site: u32 },
    /// Store the program counter as part of exit coordination.
    PcSave(PcValue),
    /// Store the program counter as an ordinary translated state update.
    PcUpdate(PcValue),
    /// Leave translated code through the numbered exit.
    Exit { edge: u32 },
}

impl Item {
    pub fn as_sync(&self) -> Option<&SyncOp> {
        match self {
            Item::Sync(op) => Some(op),
            _ => None,
        }
    }

    pub fn as_sync_mut(&mut self) -> Option<&mut SyncOp> {
        match self {
            Item::Sync(op) => Some(op),
            _ => None,
        }
    }
}

/// What a group contributes to the block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupRole {
    /// The interrupt check region at the block entry.
    EntryCheck,
    /// The translation of one guest instruction.
    Guest,
    /// The exit sequence for one edge.
    Epilogue(u32),
    /// The interrupt-taken exit shared by all checks of the block.
    IrqExit,
}

/// A run of items with one provenance: the guest instruction they
/// translate, or the structural role they play.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Group {
    pub role: GroupRole,
    /// Guest address of the instruction this group translates; for
    /// structural groups, the address the group acts for.
    pub gpc: u32,
    pub instr: Option<Instr>,
    /// Guest instructions this group retires: one normally, more when a
    /// multi-instruction rule fused them, zero for structural groups.
    pub guest_count: u32,
    pub items: Vec<Item>,
    /// Set when scheduling moved this group past helper calls; names every
    /// call site that must materialize these instructions before a trap is
    /// allowed to surface.
    pub deferred_for_sites: Vec<u32>,
}

impl Group {
    pub fn structural(role: GroupRole, gpc: u32) -> Group {
        Group { role, gpc, instr: None, guest_count: 0, items: Vec::new(), deferred_for_sites: Vec::new() }
    }

    pub fn guest(gpc: u32, instr: Instr) -> Group {
        Group {
            role: GroupRole::Guest,
            gpc,
            instr: Some(instr),
            guest_count: 1,
            items: Vec::new(),
            deferred_for_sites: Vec::new(),
        }
    }

    /// True when any item defines the host flags with guest meaning, so a
    /// flagged ALU payload. Guards also write the host flags but carry no
    /// guest value; they are not definitions.
    pub fn defines_ccr(&self) -> bool {
        self.items.iter().any(|item| match item {
            Item::Code(instrs) => instrs.iter().any(|i| {
                matches!(i, HostInstr::HAlu { set_flags: true, .. } | HostInstr::HCmp { .. })
            }),
            _ => false,
        })
    }
}

/// Reason and target of one block exit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeKind {
    /// Sequential successor: the scan window closed or a conditional
    /// branch fell through.
    Fallthrough { gva: u32 },
    /// Direct branch target.
    Taken { gva: u32 },
    /// Register-indirect branch; the successor is only known at run time.
    Indirect { reg: Reg },
    /// The block ended at a halt instruction.
    Halt { gpc: u32 },
    /// The block ended at a software interrupt.
    Svc { vector: u32, gpc: u32 },
    /// An interrupt check found a pending interrupt. Execution resumes at
    /// `resume_gva` after delivery.
    IrqAtCheck { resume_gva: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub kind: EdgeKind,
}

impl Edge {
    /// The statically known successor address, for edges that can be
    /// chained to another block.
    pub fn chain_target(&self) -> Option<u32> {
        match self.kind {
            EdgeKind::Fallthrough { gva } | EdgeKind::Taken { gva } => Some(gva),
            _ => None,
        }
    }
}

/// Per-call-site details the runtime needs when a helper traps or when a
/// system-level helper executes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallSite {
    pub helper: HelperKind,
    /// Guest address of the instruction containing this call.
    pub gpc: u32,
    /// Guest instructions of this block that are architecturally complete
    /// when the call traps, counting any deferred work the trap
    /// materializes first.
    pub retired_before: u32,
    /// The guest instruction a system-level call executes.
    pub instr: Option<Instr>,
    /// Lowered code range to run before surfacing a trap from this site;
    /// filled in by lowering from group deferral annotations.
    pub deferred: Option<(u32, u32)>,
}

/// A translated block in marked form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HostBlock {
    /// Guest address of the first instruction.
    pub entry: u32,
    pub groups: Vec<Group>,
    pub edges: Vec<Edge>,
    pub call_sites: Vec<CallSite>,
    /// Number of guest instructions the block translates.
    pub guest_len: u32,
    /// True when the block overwrites the live flags before any code reads
    /// them or their memory copy, so entering with a stale saved copy is
    /// harmless. Predecessors chained to this block may then skip their
    /// boundary flag upload.
    pub entry_flags_def_first: bool,
    next_label: u32,
}

impl HostBlock {
    pub fn new(entry: u32) -> HostBlock {
        HostBlock {
            entry,
            groups: Vec::new(),
            edges: Vec::new(),
            call_sites: Vec::new(),
            guest_len: 0,
            entry_flags_def_first: false,
            next_label: 0,
        }
    }

    pub fn fresh_label(&mut self) -> Label {
        let label = Label(self.next_label);
        self.next_label += 1;
        label
    }

    pub fn add_edge(&mut self, kind: EdgeKind) -> u32 {
        self.edges.push(Edge { kind });
        (self.edges.len() - 1) as u32
    }

    pub fn add_call_site(&mut self, site: CallSite) -> u32 {
        self.call_sites.push(site);
        (self.call_sites.len() - 1) as u32
    }

    /// Iterator over all sync markers with their group and item position.
    pub fn sync_ops(&self) -> impl Iterator<Item = (usize, usize, &SyncOp)> {
        self.groups.iter().enumerate().flat_map(|(gi, group)| {
            group.items.iter().enumerate().filter_map(move |(ii, item)| {
                item.as_sync().map(|op| (gi, ii, op))
            })
        })
    }

    /// Render the marked form one item per line, for fixture tests and
    /// debugging.
    pub fn listing(&self) -> String {
        use fmt::Write;
        let mut out = String::new();
        for group in &self.groups {
            match (group.role, &group.instr) {
                (GroupRole::EntryCheck, _) => writeln!(out, "-- entry check @{:#x}", group.gpc),
                (GroupRole::Guest, Some(instr)) => writeln!(out, "-- {:#x}: {instr}", group.gpc),
                (GroupRole::Guest, None) => writeln!(out, "-- {:#x}", group.gpc),
                (GroupRole::Epilogue(edge), _) => writeln!(out, "-- epilogue e{edge}"),
                (GroupRole::IrqExit, _) => writeln!(out, "-- interrupt exit"),
            }
            .unwrap();
            for item in &group.items {
                match item {
                    Item::Sync(op) => writeln!(out, "  {op}"),
                    Item::Code(instrs) => {
                        for i in instrs {
                            writeln!(out, "  {i}").unwrap();
                        }
                        Ok(())
                    }
                    Item::Guard(g) => {
                        let form = match g.form {
                            GuardForm::MemCompare => "mem",
                            GuardForm::DirectFlags => "flags",
                            GuardForm::SlotCompare => "slots",
                        };
                        writeln!(out, "  guard[{form}] {} -> {}", g.cond.suffix(), g.skip)
                    }
                    Item::SetLabel(label) => writeln!(out, "{label}:"),
                    Item::Check { irq } => writeln!(out, "  check -> {irq}"),
                    Item::Call { helper, site } => writeln!(out, "  hcall {helper} @{site}"),
                    Item::PcSave(v) => writeln!(out, "  pc-save {v:?}"),
                    Item::PcUpdate(v) => writeln!(out, "  pc-update {v:?}"),
                    Item::Exit { edge } => writeln!(out, "  hexit e{edge}"),
                }
                .unwrap();
            }
        }
        out
    }
}
