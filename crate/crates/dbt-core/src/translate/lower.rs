//! Lowering from marked blocks to executable host code.
//!
//! Every symbolic marker expands to a fixed host instruction sequence. The
//! condition code sequences are canonical: the full form moves the packed
//! word plus all four per-flag slots in fourteen instructions, the packed
//! form moves only the packed word in three. Their lengths are observable
//! through the instruction counters, so tests pin them exactly.

use std::collections::BTreeMap;
use std::fmt;

use crate::guest::{Cond, Flag};
use crate::host::isa::{HAddr, HAluOp, HCond, HOperand, HReg, HostInstr, Label, Tag};
use crate::machine::area::offsets;

use super::block::{
    CallSite, Component, Edge, GroupRole, Guard, GuardForm, HostBlock, Item, PcValue, SyncKind,
    SyncMode, SyncOp,
};

/// A host instruction together with its accounting category.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LInstr {
    pub instr: HostInstr,
    pub tag: Tag,
    /// True on the first instruction lowered from a coordination marker.
    /// The executor counts one coordination operation per head it crosses.
    pub sync_head: bool,
}

/// Code range of one exit sequence. When the edge is chained, execution
/// runs `start..tail_start` and then jumps to the successor block instead
/// of executing the tail, which holds the program counter store and the
/// exit instruction. A chain that also skips the boundary flag save stops
/// earlier, at `save_start`; anything before that point still runs, so an
/// exit that reloads the flags after a guard clobbered them hands the
/// successor live flags either way.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpilogueSpan {
    pub edge: u32,
    pub start: usize,
    pub save_start: usize,
    pub tail_start: usize,
}

/// A translated block in executable form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoweredBlock {
    pub entry: u32,
    pub code: Vec<LInstr>,
    pub labels: BTreeMap<Label, usize>,
    pub edges: Vec<Edge>,
    pub call_sites: Vec<CallSite>,
    pub epilogues: Vec<EpilogueSpan>,
    pub guest_len: u32,
}

impl LoweredBlock {
    /// The exit sequence starting at `index`, if any.
    pub fn epilogue_at(&self, index: usize) -> Option<&EpilogueSpan> {
        self.epilogues.iter().find(|e| e.start == index)
    }

    pub fn resolve(&self, label: Label) -> usize {
        self.labels[&label]
    }

    /// Static instruction count per accounting category, in the order of
    /// [`Tag::ALL`].
    pub fn tag_counts(&self) -> [u64; 5] {
        let mut counts = [0u64; 5];
        for li in &self.code {
            let slot = Tag::ALL.iter().position(|t| *t == li.tag).unwrap();
            counts[slot] += 1;
        }
        counts
    }

    /// Static number of coordination operations in the block body.
    pub fn sync_op_count(&self) -> u64 {
        self.code.iter().filter(|li| li.sync_head).count() as u64
    }

    /// One instruction per line with its category, for fixture tests.
    pub fn listing(&self) -> String {
        use fmt::Write;
        let mut by_index: BTreeMap<usize, Vec<Label>> = BTreeMap::new();
        for (label, index) in &self.labels {
            by_index.entry(*index).or_default().push(*label);
        }
        let mut out = String::new();
        for (i, li) in self.code.iter().enumerate() {
            if let Some(labels) = by_index.get(&i) {
                for label in labels {
                    writeln!(out, "{label}:").unwrap();
                }
            }
            writeln!(out, "  {:<40} ; {}", li.instr.to_string(), li.tag).unwrap();
        }
        out
    }
}

/// Lowering failure. Coordination markers must name at least one component,
/// and every component must have a host-register or state-slot home the
/// sequence can address.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LowerError {
    UnknownComponent { detail: String },
}

impl fmt::Display for LowerError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LowerError::UnknownComponent { detail } => {
                write!(f, "cannot lower sync operation: {detail}")
            }
        }
    }
}

impl std::error::Error for LowerError {}

fn env(offset: i32) -> HAddr {
    HAddr::env(offset)
}

fn alu(op: HAluOp, rd: HReg, rn: HReg, src: HOperand) -> HostInstr {
    HostInstr::HAlu { op, rd, rn, src, set_flags: false }
}

/// The canonical full save of the condition code register: pack the flags
/// into a scratch register, store the packed word, then extract and store
/// each of the four flags into its own slot. Fourteen instructions.
fn full_ccr_save(out: &mut Vec<HostInstr>) {
    let (s0, s1) = (HReg::S0, HReg::S1);
    out.push(HostInstr::HFlags2Reg { rd: s0 });
    out.push(HostInstr::HSt { rs: s0, addr: env(offsets::CCR_PACKED) });
    for flag in [Flag::N, Flag::Z, Flag::C] {
        out.push(alu(HAluOp::Shr, s1, s0, HOperand::Imm(flag.bit())));
        out.push(alu(HAluOp::And, s1, s1, HOperand::Imm(1)));
        out.push(HostInstr::HSt { rs: s1, addr: env(offsets::flag(flag)) });
    }
    out.push(HostInstr::HMov { rd: s1, src: HOperand::Reg(s0) });
    out.push(alu(HAluOp::And, s1, s1, HOperand::Imm(1)));
    out.push(HostInstr::HSt { rs: s1, addr: env(offsets::flag(Flag::V)) });
}

/// The canonical full restore: load each per-flag slot, reassemble the
/// packed word, and move it into the host flags. Fourteen instructions.
/// The V slot needs no masking because every writer of the per-flag slots
/// stores the bit already isolated.
fn full_ccr_restore(out: &mut Vec<HostInstr>) {
    let (s0, s1) = (HReg::S0, HReg::S1);
    out.push(HostInstr::HLd { rd: s1, addr: env(offsets::flag(Flag::N)) });
    out.push(alu(HAluOp::And, s1, s1, HOperand::Imm(1)));
    out.push(alu(HAluOp::Shl, s0, s1, HOperand::Imm(Flag::N.bit())));
    for flag in [Flag::Z, Flag::C] {
        out.push(HostInstr::HLd { rd: s1, addr: env(offsets::flag(flag)) });
        out.push(alu(HAluOp::And, s1, s1, HOperand::Imm(1)));
        out.push(alu(HAluOp::Shl, s1, s1, HOperand::Imm(flag.bit())));
        out.push(alu(HAluOp::Or, s0, s0, HOperand::Reg(s1)));
    }
    out.push(HostInstr::HLd { rd: s1, addr: env(offsets::flag(Flag::V)) });
    out.push(alu(HAluOp::Or, s0, s0, HOperand::Reg(s1)));
    out.push(HostInstr::HReg2Flags { rn: s0 });
}

/// The packed save: one flags read, one store, one scratch move.
fn packed_ccr_save(out: &mut Vec<HostInstr>) {
    out.push(HostInstr::HFlags2Reg { rd: HReg::S0 });
    out.push(HostInstr::HSt { rs: HReg::S0, addr: env(offsets::CCR_PACKED) });
    out.push(HostInstr::HMov { rd: HReg::S1, src: HOperand::Reg(HReg::S0) });
}

/// The packed restore: one load, one flags write, one scratch move.
fn packed_ccr_restore(out: &mut Vec<HostInstr>) {
    out.push(HostInstr::HLd { rd: HReg::S0, addr: env(offsets::CCR_PACKED) });
    out.push(HostInstr::HReg2Flags { rn: HReg::S0 });
    out.push(HostInstr::HMov { rd: HReg::S1, src: HOperand::Reg(HReg::S0) });
}

/// Spread the packed condition code word into the four per-flag slots,
/// without touching the host flags. Thirteen instructions; the runtime
/// executes this before delivering an interrupt while the slots are stale.
pub fn lower_deferred_unpack() -> Vec<LInstr> {
    let (s0, s1) = (HReg::S0, HReg::S1);
    let mut out = Vec::new();
    out.push(HostInstr::HLd { rd: s0, addr: env(offsets::CCR_PACKED) });
    for flag in [Flag::N, Flag::Z, Flag::C] {
        out.push(alu(HAluOp::Shr, s1, s0, HOperand::Imm(flag.bit())));
        out.push(alu(HAluOp::And, s1, s1, HOperand::Imm(1)));
        out.push(HostInstr::HSt { rs: s1, addr: env(offsets::flag(flag)) });
    }
    out.push(HostInstr::HMov { rd: s1, src: HOperand::Reg(s0) });
    out.push(alu(HAluOp::And, s1, s1, HOperand::Imm(1)));
    out.push(HostInstr::HSt { rs: s1, addr: env(offsets::flag(Flag::V)) });
    mark_sync(out)
}

fn mark_sync(instrs: Vec<HostInstr>) -> Vec<LInstr> {
    instrs
        .into_iter()
        .enumerate()
        .map(|(i, instr)| LInstr { instr, tag: Tag::Sync, sync_head: i == 0 })
        .collect()
}

/// Expand one coordination marker. `pc_value` supplies the program counter
/// immediate when the marker's components include the program counter.
pub fn lower_sync(op: &SyncOp, pc_value: u32) -> Result<Vec<HostInstr>, LowerError> {
    if op.components.is_empty() {
        return Err(LowerError::UnknownComponent { detail: "component set is empty".into() });
    }
    if op.mode == SyncMode::Packed && !op.has_ccr() {
        return Err(LowerError::UnknownComponent {
            detail: "packed mode without a condition code component".into(),
        });
    }
    let mut out = Vec::new();
    for component in &op.components {
        match (*component, op.kind) {
            (Component::Gpr(i), kind) => {
                let Some(hreg) = HReg::for_guest(i as usize) else {
                    return Err(LowerError::UnknownComponent {
                        detail: format!("r{i} is not register resident"),
                    });
                };
                let addr = env(offsets::gpr(i as usize));
                out.push(match kind {
                    SyncKind::Save => HostInstr::HSt { rs: hreg, addr },
                    SyncKind::Restore => HostInstr::HLd { rd: hreg, addr },
                });
            }
            (Component::Ccr, SyncKind::Save) => match op.mode {
                SyncMode::Full => full_ccr_save(&mut out),
                SyncMode::Packed => packed_ccr_save(&mut out),
            },
            (Component::Ccr, SyncKind::Restore) => match op.mode {
                SyncMode::Full => full_ccr_restore(&mut out),
                SyncMode::Packed => packed_ccr_restore(&mut out),
            },
            (Component::Pc, SyncKind::Save) => {
                out.push(HostInstr::HMov { rd: HReg::S0, src: HOperand::Imm(pc_value) });
                out.push(HostInstr::HSt { rs: HReg::S0, addr: env(offsets::PC) });
            }
            (Component::Pc, SyncKind::Restore) => {
                return Err(LowerError::UnknownComponent {
                    detail: "the program counter has no host-register home to restore into".into(),
                });
            }
        }
    }
    Ok(out)
}

/// Expand a conditional skip sequence. Returns the instructions and their
/// category; guards carry guest branch semantics, so they are translated
/// code.
pub fn lower_guard(guard: &Guard) -> Vec<HostInstr> {
    let (s0, s1) = (HReg::S0, HReg::S1);
    let mut out = Vec::new();
    match (guard.form, guard.cond) {
        (_, Cond::Al) => {}
        (GuardForm::DirectFlags, cond) => {
            let skip_when = HCond::from_guest(cond).unwrap().negated();
            out.push(HostInstr::HJcc { cond: skip_when, target: guard.skip });
        }
        (GuardForm::MemCompare, cond @ (Cond::Eq | Cond::Ne)) => {
            out.push(HostInstr::HLd { rd: s0, addr: env(offsets::CCR_PACKED) });
            out.push(alu(HAluOp::And, s0, s0, HOperand::Imm(1 << Flag::Z.bit())));
            out.push(HostInstr::HCmp { rn: s0, src: HOperand::Imm(0) });
            let skip_when = if cond == Cond::Eq { HCond::Eq } else { HCond::Ne };
            out.push(HostInstr::HJcc { cond: skip_when, target: guard.skip });
        }
        (GuardForm::MemCompare, cond @ (Cond::Ge | Cond::Lt)) => {
            out.push(HostInstr::HLd { rd: s0, addr: env(offsets::CCR_PACKED) });
            out.push(alu(HAluOp::Shr, s1, s0, HOperand::Imm(Flag::N.bit())));
            out.push(alu(HAluOp::And, s1, s1, HOperand::Imm(1)));
            out.push(alu(HAluOp::And, s0, s0, HOperand::Imm(1)));
            out.push(HostInstr::HCmp { rn: s1, src: HOperand::Reg(s0) });
            let skip_when = if cond == Cond::Ge { HCond::Ne } else { HCond::Eq };
            out.push(HostInstr::HJcc { cond: skip_when, target: guard.skip });
        }
        (GuardForm::SlotCompare, cond @ (Cond::Eq | Cond::Ne)) => {
            out.push(HostInstr::HLd { rd: s0, addr: env(offsets::flag(Flag::Z)) });
            out.push(HostInstr::HCmp { rn: s0, src: HOperand::Imm(0) });
            let skip_when = if cond == Cond::Eq { HCond::Eq } else { HCond::Ne };
            out.push(HostInstr::HJcc { cond: skip_when, target: guard.skip });
        }
        (GuardForm::SlotCompare, cond @ (Cond::Ge | Cond::Lt)) => {
            out.push(HostInstr::HLd { rd: s0, addr: env(offsets::flag(Flag::N)) });
            out.push(HostInstr::HLd { rd: s1, addr: env(offsets::flag(Flag::V)) });
            out.push(HostInstr::HCmp { rn: s0, src: HOperand::Reg(s1) });
            let skip_when = if cond == Cond::Ge { HCond::Ne } else { HCond::Eq };
            out.push(HostInstr::HJcc { cond: skip_when, target: guard.skip });
        }
    }
    out
}

/// Expand the pending-interrupt check: load the pending word, test it,
/// branch to the interrupt exit when it is set.
pub fn lower_check(irq: Label) -> Vec<HostInstr> {
    vec![
        HostInstr::HLd { rd: HReg::S0, addr: env(offsets::IRQ_PENDING) },
        HostInstr::HCmp { rn: HReg::S0, src: HOperand::Imm(0) },
        HostInstr::HJcc { cond: HCond::Ne, target: irq },
    ]
}

fn lower_pc_write(value: PcValue, out: &mut Vec<HostInstr>) {
    match value {
        PcValue::Imm(v) => {
            out.push(HostInstr::HMov { rd: HReg::S0, src: HOperand::Imm(v) });
        }
        PcValue::FromGuestReg(reg) => match HReg::for_guest(reg.index()) {
            Some(hreg) => {
                out.push(HostInstr::HMov { rd: HReg::S0, src: HOperand::Reg(hreg) });
            }
            None => {
                out.push(HostInstr::HLd { rd: HReg::S0, addr: env(offsets::gpr(reg.index())) });
            }
        },
    }
    out.push(HostInstr::HSt { rs: HReg::S0, addr: env(offsets::PC) });
}

/// Expand a whole marked block into executable form.
pub fn lower_block(block: &HostBlock) -> Result<LoweredBlock, LowerError> {
    let mut code: Vec<LInstr> = Vec::new();
    let mut labels = BTreeMap::new();
    let mut epilogues = Vec::new();
    let mut call_sites = block.call_sites.clone();

    for group in &block.groups {
        let group_start = code.len();
        let mut save_start: Option<usize> = None;
        let mut tail_start: Option<usize> = None;
        for item in &group.items {
            match item {
                Item::Sync(op) => {
                    if op.kind == SyncKind::Save && save_start.is_none() {
                        save_start = Some(code.len());
                    }
                    let instrs = lower_sync(op, group.gpc)?;
                    code.extend(mark_sync(instrs));
                }
                Item::Code(instrs) => {
                    code.extend(instrs.iter().map(|i| LInstr {
                        instr: *i,
                        tag: Tag::Translated,
                        sync_head: false,
                    }));
                }
                Item::Guard(guard) => {
                    code.extend(lower_guard(guard).into_iter().map(|i| LInstr {
                        instr: i,
                        tag: Tag::Translated,
                        sync_head: false,
                    }));
                }
                Item::SetLabel(label) => {
                    labels.insert(*label, code.len());
                }
                Item::Check { irq } => {
                    code.extend(lower_check(*irq).into_iter().map(|i| LInstr {
                        instr: i,
                        tag: Tag::Check,
                        sync_head: false,
                    }));
                }
                Item::Call { helper, site } => {
                    code.push(LInstr {
                        instr: HostInstr::HCall { helper: *helper, site: *site },
                        tag: Tag::Helper,
                        sync_head: false,
                    });
                }
                Item::PcSave(value) => {
                    if tail_start.is_none() {
                        tail_start = Some(code.len());
                    }
                    let mut instrs = Vec::new();
                    lower_pc_write(*value, &mut instrs);
                    code.extend(instrs.into_iter().map(|i| LInstr {
                        instr: i,
                        tag: Tag::Sync,
                        sync_head: false,
                    }));
                }
                Item::PcUpdate(value) => {
                    let mut instrs = Vec::new();
                    lower_pc_write(*value, &mut instrs);
                    code.extend(instrs.into_iter().map(|i| LInstr {
                        instr: i,
                        tag: Tag::Translated,
                        sync_head: false,
                    }));
                }
                Item::Exit { edge } => {
                    if tail_start.is_none() {
                        tail_start = Some(code.len());
                    }
                    code.push(LInstr {
                        instr: HostInstr::HExit { edge: *edge },
                        tag: Tag::Translated,
                        sync_head: false,
                    });
                }
            }
        }
        if let GroupRole::Epilogue(edge) = group.role {
            let tail_start = tail_start.unwrap_or(code.len());
            epilogues.push(EpilogueSpan {
                edge,
                start: group_start,
                save_start: save_start.unwrap_or(tail_start),
                tail_start,
            });
        }
        for site in &group.deferred_for_sites {
            call_sites[*site as usize].deferred = Some((group_start as u32, code.len() as u32));
        }
    }

    for li in &code {
        let target = match li.instr {
            HostInstr::HJcc { target, .. } => Some(target),
            HostInstr::HJmp { target: crate::host::isa::JumpTarget::Local(l) } => Some(l),
            _ => None,
        };
        if let Some(label) = target {
            assert!(labels.contains_key(&label), "branch to undefined label {label}");
        }
    }

    Ok(LoweredBlock {
        entry: block.entry,
        code,
        labels,
        edges: block.edges.clone(),
        call_sites,
        epilogues,
        guest_len: block.guest_len,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::translate::block::SyncCause;

    fn save(components: Vec<Component>, mode: SyncMode) -> SyncOp {
        let mut op = SyncOp::save(components, SyncCause::TbBoundary);
        op.mode = mode;
        op
    }

    fn restore(components: Vec<Component>, mode: SyncMode) -> SyncOp {
        let mut op = SyncOp::restore(components, SyncCause::TbBoundary);
        op.mode = mode;
        op
    }

    fn render(instrs: &[HostInstr]) -> Vec<String> {
        instrs.iter().map(|i| i.to_string()).collect()
    }

    #[test]
    fn full_ccr_save_is_fourteen_instructions() {
        let instrs = lower_sync(&save(vec![Component::Ccr], SyncMode::Full), 0).unwrap();
        assert_eq!(instrs.len(), 14);
        assert_eq!(
            render(&instrs),
            vec![
                "hflags2reg h12",
                "hst h12, [h15, #80]",
                "hshr h13, h12, #0x3",
                "hand h13, h13, #0x1",
                "hst h13, [h15, #64]",
                "hshr h13, h12, #0x2",
                "hand h13, h13, #0x1",
                "hst h13, [h15, #68]",
                "hshr h13, h12, #0x1",
                "hand h13, h13, #0x1",
                "hst h13, [h15, #72]",
                "hmov h13, h12",
                "hand h13, h13, #0x1",
                "hst h13, [h15, #76]",
            ]
        );
    }

    #[test]
    fn full_ccr_restore_is_fourteen_instructions_and_reads_only_slots() {
        let instrs = lower_sync(&restore(vec![Component::Ccr], SyncMode::Full), 0).unwrap();
        assert_eq!(instrs.len(), 14);
        for i in &instrs {
            if let HostInstr::HLd { addr, .. } = i {
                assert_ne!(addr.offset, offsets::CCR_PACKED);
            }
            assert!(!matches!(i, HostInstr::HSt { .. }));
        }
        assert!(matches!(instrs.last(), Some(HostInstr::HReg2Flags { .. })));
    }

    #[test]
    fn packed_forms_are_three_instructions() {
        let s = lower_sync(&save(vec![Component::Ccr], SyncMode::Packed), 0).unwrap();
        let r = lower_sync(&restore(vec![Component::Ccr], SyncMode::Packed), 0).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(r.len(), 3);
        assert_eq!(
            render(&s),
            vec!["hflags2reg h12", "hst h12, [h15, #80]", "hmov h13, h12"]
        );
        assert_eq!(
            render(&r),
            vec!["hld h12, [h15, #80]", "hreg2flags h12", "hmov h13, h12"]
        );
    }

    #[test]
    fn both_save_modes_write_the_packed_slot() {
        for mode in [SyncMode::Full, SyncMode::Packed] {
            let instrs = lower_sync(&save(vec![Component::Ccr], mode), 0).unwrap();
            let writes_packed = instrs.iter().any(|i| {
                matches!(i, HostInstr::HSt { addr, .. } if addr.offset == offsets::CCR_PACKED)
            });
            assert!(writes_packed);
        }
    }

    #[test]
    fn register_components_cost_one_instruction_each() {
        let op = save(vec![Component::Gpr(0), Component::Gpr(5), Component::Ccr], SyncMode::Packed);
        let instrs = lower_sync(&op, 0).unwrap();
        assert_eq!(instrs.len(), 2 + 3);
        assert_eq!(render(&instrs[..2]), vec!["hst h0, [h15]", "hst h5, [h15, #20]"]);
    }

    #[test]
    fn pc_component_saves_the_supplied_address() {
        let op = save(vec![Component::Ccr, Component::Pc], SyncMode::Packed);
        let instrs = lower_sync(&op, 0x1234).unwrap();
        assert_eq!(instrs.len(), 5);
        assert_eq!(
            render(&instrs[3..]),
            vec!["hmov h12, #0x1234", "hst h12, [h15, #60]"]
        );
    }

    #[test]
    fn rejected_component_sets() {
        let empty = SyncOp { kind: SyncKind::Save, components: Default::default(), mode: SyncMode::Full, cause: SyncCause::TbBoundary };
        assert!(lower_sync(&empty, 0).is_err());
        let spilled = save(vec![Component::Gpr(13)], SyncMode::Full);
        assert!(lower_sync(&spilled, 0).is_err());
        let pc_restore = restore(vec![Component::Pc], SyncMode::Full);
        assert!(lower_sync(&pc_restore, 0).is_err());
        let packed_no_ccr = save(vec![Component::Gpr(1)], SyncMode::Packed);
        assert!(lower_sync(&packed_no_ccr, 0).is_err());
    }

    #[test]
    fn reduction_removes_eleven_of_fourteen_instructions() {
        let full = lower_sync(&save(vec![Component::Ccr], SyncMode::Full), 0).unwrap();
        let packed = lower_sync(&save(vec![Component::Ccr], SyncMode::Packed), 0).unwrap();
        let ratio = (full.len() - packed.len()) as f64 / full.len() as f64;
        assert!((ratio - 11.0 / 14.0).abs() < 1e-12);
    }

    #[test]
    fn deferred_unpack_is_thirteen_sync_instructions() {
        let instrs = lower_deferred_unpack();
        assert_eq!(instrs.len(), 13);
        assert!(instrs[0].sync_head);
        assert!(instrs.iter().all(|li| li.tag == Tag::Sync));
        assert!(instrs.iter().skip(1).all(|li| !li.sync_head));
        let slot_stores: Vec<i32> = instrs
            .iter()
            .filter_map(|li| match li.instr {
                HostInstr::HSt { addr, .. } => Some(addr.offset),
                _ => None,
            })
            .collect();
        assert_eq!(slot_stores, vec![64, 68, 72, 76]);
    }

    #[test]
    fn guard_lengths_match_their_forms() {
        let skip = Label(0);
        let len = |form, cond| lower_guard(&Guard { cond, form, skip }).len();
        assert_eq!(len(GuardForm::MemCompare, Cond::Eq), 4);
        assert_eq!(len(GuardForm::MemCompare, Cond::Ne), 4);
        assert_eq!(len(GuardForm::MemCompare, Cond::Ge), 6);
        assert_eq!(len(GuardForm::MemCompare, Cond::Lt), 6);
        assert_eq!(len(GuardForm::DirectFlags, Cond::Eq), 1);
        assert_eq!(len(GuardForm::SlotCompare, Cond::Eq), 3);
        assert_eq!(len(GuardForm::SlotCompare, Cond::Ge), 4);
        assert_eq!(len(GuardForm::MemCompare, Cond::Al), 0);
    }

    #[test]
    fn direct_flags_guard_skips_on_the_negated_condition() {
        let g = Guard { cond: Cond::Eq, form: GuardForm::DirectFlags, skip: Label(7) };
        assert_eq!(render(&lower_guard(&g)), vec!["hjcc ne, L7"]);
        let g = Guard { cond: Cond::Lt, form: GuardForm::DirectFlags, skip: Label(7) };
        assert_eq!(render(&lower_guard(&g)), vec!["hjcc ge, L7"]);
    }

    #[test]
    fn check_is_three_instructions_reading_the_pending_word() {
        let instrs = lower_check(Label(3));
        assert_eq!(
            render(&instrs),
            vec!["hld h12, [h15, #84]", "hcmp h12, #0x0", "hjcc ne, L3"]
        );
    }
}
