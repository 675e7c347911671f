//! Block emitters: from a scanned window to marked form.
//!
//! Two pipelines share the scanner. The rule pipeline keeps guest registers
//! and flags in host registers, so every departure from translated code is
//! bracketed by the coordination the plan names, and conditional
//! instructions guard on the packed flags word kept fresh by those saves.
//! The memory-resident pipeline reads and writes the state area directly;
//! it needs no coordination at all, paying instead with a longer expansion
//! of every instruction.
//!
//! Both emitters produce the same marked form, the same edge table and the
//! same call-site accounting, so the rest of the system treats their output
//! identically.

use std::collections::BTreeSet;

use crate::guest::{AluOp, Category, Cond, Flag, Instr, MoveOp, Operand, Reg};
use crate::host::isa::{HAddr, HAluOp, HOperand, HReg, HelperKind, HostInstr};
use crate::machine::area::offsets;
use crate::translate::block::{
    CallSite, Component, EdgeKind, Group, GroupRole, Guard, GuardForm, HostBlock, Item, PcValue,
    SyncCause, SyncOp,
};
use crate::translate::rules::RuleSet;
use crate::translate::scan::{CoordPlan, ScannedTb};

fn gpr_slot(r: Reg) -> HAddr {
    HAddr::env(offsets::gpr(r.index()))
}

fn flag_slot(f: Flag) -> HAddr {
    HAddr::env(offsets::flag(f))
}

fn halu(op: HAluOp, rd: HReg, rn: HReg, src: HOperand, set_flags: bool) -> HostInstr {
    HostInstr::HAlu { op, rd, rn, src, set_flags }
}

fn host_alu_op(op: AluOp) -> HAluOp {
    match op {
        AluOp::Add => HAluOp::Add,
        AluOp::Sub => HAluOp::Sub,
        AluOp::And => HAluOp::And,
        AluOp::Orr => HAluOp::Or,
        AluOp::Eor => HAluOp::Xor,
        AluOp::Lsl => HAluOp::Shl,
        AluOp::Lsr => HAluOp::Shr,
    }
}

/// Registers an instruction touches that live in host registers, as state
/// components. Memory-resident registers need no coordination.
fn resident(regs: impl IntoIterator<Item = Reg>) -> impl Iterator<Item = Component> {
    regs.into_iter().filter(|r| r.index() < 12).map(|r| Component::Gpr(r.index() as u8))
}

/// Append the per-flag extraction stores for every flag in `defined`,
/// reading the just-computed host flags.
fn push_flag_stores(out: &mut Vec<HostInstr>, instr: &Instr) {
    let defined = instr.flags_defined();
    for flag in Flag::ALL {
        if defined.contains(flag) {
            out.push(HostInstr::HFlagExt { rd: HReg::S2, flag });
            out.push(HostInstr::HSt { rs: HReg::S2, addr: flag_slot(flag) });
        }
    }
}

/// The memory-resident expansion of one register-compute instruction:
/// operands loaded from their slots, the result stored back, defined flags
/// extracted one by one. This is the whole translation in the baseline
/// pipeline and the no-rule fallback body in the rule pipeline.
fn mini_ir_payload(instr: &Instr) -> Vec<HostInstr> {
    let mut out = Vec::new();
    match *instr {
        Instr::Move { op, set_flags, rd, src, .. } => {
            match src {
                Operand::Reg(rm) => out.push(HostInstr::HLd { rd: HReg::S0, addr: gpr_slot(rm) }),
                Operand::Imm(v) => {
                    out.push(HostInstr::HMov { rd: HReg::S0, src: HOperand::Imm(v as u32) })
                }
            }
            match op {
                MoveOp::Mov if set_flags => {
                    out.push(halu(HAluOp::Or, HReg::S0, HReg::S0, HOperand::Imm(0), true));
                }
                MoveOp::Mov => {}
                MoveOp::Mvn => {
                    out.push(halu(HAluOp::Xor, HReg::S0, HReg::S0, HOperand::Imm(u32::MAX), set_flags));
                }
            }
            out.push(HostInstr::HSt { rs: HReg::S0, addr: gpr_slot(rd) });
            push_flag_stores(&mut out, instr);
        }
        Instr::Alu { op, set_flags, rd, rn, src, .. } => {
            out.push(HostInstr::HLd { rd: HReg::S0, addr: gpr_slot(rn) });
            let operand = match src {
                Operand::Reg(rm) => {
                    out.push(HostInstr::HLd { rd: HReg::S1, addr: gpr_slot(rm) });
                    HOperand::Reg(HReg::S1)
                }
                Operand::Imm(v) => HOperand::Imm(v as u32),
            };
            out.push(halu(host_alu_op(op), HReg::S0, HReg::S0, operand, set_flags));
            out.push(HostInstr::HMov { rd: HReg::S2, src: HOperand::Reg(HReg::S0) });
            out.push(HostInstr::HSt { rs: HReg::S2, addr: gpr_slot(rd) });
            push_flag_stores(&mut out, instr);
        }
        Instr::Cmp { rn, src } => {
            out.push(HostInstr::HLd { rd: HReg::S0, addr: gpr_slot(rn) });
            let operand = match src {
                Operand::Reg(rm) => {
                    out.push(HostInstr::HLd { rd: HReg::S1, addr: gpr_slot(rm) });
                    HOperand::Reg(HReg::S1)
                }
                Operand::Imm(v) => HOperand::Imm(v as u32),
            };
            out.push(HostInstr::HCmp { rn: HReg::S0, src: operand });
            push_flag_stores(&mut out, instr);
        }
        _ => unreachable!("mini-IR covers register-compute instructions only"),
    }
    out
}

/// The mini-IR form of a compute instruction with its skip guard when
/// conditional. The guard compares individual flag slots, so it works
/// wherever the slots are current.
fn mini_ir_items(block: &mut HostBlock, instr: &Instr) -> Vec<Item> {
    let payload = Item::Code(mini_ir_payload(instr));
    if instr.cond() == Cond::Al {
        vec![payload]
    } else {
        let skip = block.fresh_label();
        vec![
            Item::Guard(Guard { cond: instr.cond(), form: GuardForm::SlotCompare, skip }),
            payload,
            Item::SetLabel(skip),
        ]
    }
}

/// Append an exit group for `kind`. `lead` holds items that must run first:
/// the skip-target label of a conditional branch, or the flags reload the
/// rule pipeline owes after a guard clobbered them.
fn push_exit(
    block: &mut HostBlock,
    kind: EdgeKind,
    gpc: u32,
    pc: PcValue,
    lead: Vec<Item>,
    coordinated: bool,
) -> u32 {
    let edge = block.add_edge(kind);
    let mut group = Group::structural(GroupRole::Epilogue(edge), gpc);
    group.items = lead;
    if coordinated {
        group.items.push(Item::Sync(SyncOp::save([Component::Ccr], SyncCause::TbBoundary)));
        group.items.push(Item::PcSave(pc));
    } else {
        group.items.push(Item::PcUpdate(pc));
    }
    group.items.push(Item::Exit { edge });
    block.groups.push(group);
    edge
}

/// Append the shared interrupt-taken exit that every check of the block
/// branches to.
fn push_irq_exit(block: &mut HostBlock, irq: crate::host::isa::Label, entry: u32) {
    let edge = block.add_edge(EdgeKind::IrqAtCheck { resume_gva: entry });
    let mut group = Group::structural(GroupRole::IrqExit, entry);
    group.items.push(Item::SetLabel(irq));
    group.items.push(Item::Exit { edge });
    block.groups.push(group);
}

/// The block-ending edges and exit groups for a terminator instruction.
/// Returns nothing; all output goes into the block. `coordinated` selects
/// between the rule pipeline's save-based exits and the baseline's plain
/// state update. `fresh` only matters for the rule pipeline's conditional
/// branch guard.
fn emit_terminator(block: &mut HostBlock, gpc: u32, instr: &Instr, coordinated: bool, fresh: &mut bool) {
    match *instr {
        Instr::B { cond: Cond::Al, target } => {
            block.groups.push(Group::guest(gpc, *instr));
            push_exit(block, EdgeKind::Taken { gva: target }, gpc, PcValue::Imm(target), vec![], coordinated);
        }
        Instr::B { cond, target } => {
            let mut group = Group::guest(gpc, *instr);
            let form = if coordinated {
                if !*fresh {
                    group.items.push(Item::Sync(SyncOp::save([Component::Ccr], SyncCause::ConstrainedRule)));
                    *fresh = true;
                }
                GuardForm::MemCompare
            } else {
                GuardForm::SlotCompare
            };
            let skip = block.fresh_label();
            group.items.push(Item::Guard(Guard { cond, form, skip }));
            block.groups.push(group);
            // The guard decided on stale flags; both exits reload them
            // before the boundary save reads the live set.
            let dance = || {
                if coordinated {
                    vec![Item::Sync(SyncOp::restore([Component::Ccr], SyncCause::ConstrainedRule))]
                } else {
                    vec![]
                }
            };
            push_exit(block, EdgeKind::Taken { gva: target }, gpc, PcValue::Imm(target), dance(), coordinated);
            let mut lead = vec![Item::SetLabel(skip)];
            lead.extend(dance());
            push_exit(
                block,
                EdgeKind::Fallthrough { gva: gpc + 4 },
                gpc,
                PcValue::Imm(gpc + 4),
                lead,
                coordinated,
            );
        }
        Instr::Bl { target } => {
            let mut group = Group::guest(gpc, *instr);
            let ret = gpc + 4;
            group.items.push(Item::Code(vec![
                HostInstr::HMov { rd: HReg::S0, src: HOperand::Imm(ret) },
                HostInstr::HSt { rs: HReg::S0, addr: gpr_slot(Reg::LR) },
            ]));
            block.groups.push(group);
            push_exit(block, EdgeKind::Taken { gva: target }, gpc, PcValue::Imm(target), vec![], coordinated);
        }
        Instr::Bx { rm } => {
            block.groups.push(Group::guest(gpc, *instr));
            push_exit(
                block,
                EdgeKind::Indirect { reg: rm },
                gpc,
                PcValue::FromGuestReg(rm),
                vec![],
                coordinated,
            );
        }
        Instr::Svc { vector } => {
            block.groups.push(Group::guest(gpc, *instr));
            push_exit(block, EdgeKind::Svc { vector, gpc }, gpc, PcValue::Imm(gpc), vec![], coordinated);
        }
        Instr::Halt => {
            block.groups.push(Group::guest(gpc, *instr));
            push_exit(block, EdgeKind::Halt { gpc }, gpc, PcValue::Imm(gpc), vec![], coordinated);
        }
        _ => unreachable!("not a terminator"),
    }
}

/// Translate a scanned window with the rule pipeline.
///
/// Layout: an entry group that saves the flags and program counter, checks
/// for a pending interrupt and reloads the flags; one group per guest
/// instruction (or per fused run); one exit group per edge, each uploading
/// the flags and the successor address; and the shared interrupt exit.
///
/// The emitter tracks whether the packed flags word in the state area is as
/// new as the live host flags. Every full save refreshes it; a flag-setting
/// instruction that runs without one leaves it behind. A conditional
/// payload's guard reads the packed word, so a stale word forces an extra
/// save in front of the guard, and that is the only place coordination is
/// invented rather than copied from the plan or the layout.
pub fn translate_tb_rules(tb: &ScannedTb, plan: &CoordPlan, rules: &RuleSet) -> HostBlock {
    let mut block = HostBlock::new(tb.entry);
    block.guest_len = tb.instrs.len() as u32;
    let irq_label = block.fresh_label();

    let mut entry = Group::structural(GroupRole::EntryCheck, tb.entry);
    entry.items.push(Item::Sync(SyncOp::save(
        [Component::Ccr, Component::Pc],
        SyncCause::InterruptCheck,
    )));
    entry.items.push(Item::Check { irq: irq_label });
    entry.items.push(Item::Sync(SyncOp::restore([Component::Ccr], SyncCause::InterruptCheck)));
    block.groups.push(entry);

    let window: Vec<Instr> = tb.instrs.iter().map(|&(_, i)| i).collect();
    let mut fresh = true;
    let mut retired: u32 = 0;
    let mut terminated = false;
    let mut i = 0;
    while i < window.len() {
        let (gpc, instr) = tb.instrs[i];
        match instr {
            Instr::B { .. } | Instr::Bl { .. } | Instr::Bx { .. } | Instr::Svc { .. } | Instr::Halt => {
                emit_terminator(&mut block, gpc, &instr, true, &mut fresh);
                terminated = true;
                i += 1;
                continue;
            }
            _ => {}
        }
        match instr.category() {
            Category::RuleEligible => {
                if let Some(binding) = crate::translate::rules::match_rule(rules, &window[i..]) {
                    let span = binding.span();
                    let constrained = binding.rule.constrained;
                    let mut group = Group::guest(gpc, instr);
                    group.guest_count = span as u32;
                    if constrained && !fresh {
                        group.items.push(Item::Sync(SyncOp::save([Component::Ccr], SyncCause::ConstrainedRule)));
                        fresh = true;
                    }
                    let tail = if constrained && !instr.flags_defined().is_empty() {
                        vec![Item::Sync(SyncOp::save([Component::Ccr], SyncCause::ConstrainedRule))]
                    } else {
                        vec![]
                    };
                    group.items.extend(binding.instantiate(&mut block, tail));
                    if constrained {
                        group.items.push(Item::Sync(SyncOp::restore([Component::Ccr], SyncCause::ConstrainedRule)));
                    } else if window[i..i + span].iter().any(|w| !w.flags_defined().is_empty()) {
                        fresh = false;
                    }
                    block.groups.push(group);
                    retired += span as u32;
                    i += span;
                } else {
                    // No rule covers this instruction. Run its
                    // memory-resident expansion against the state area,
                    // bracketed like any other departure from translated
                    // code: reads and the old value of the destination go
                    // up front, the flags and the destination come back
                    // down after.
                    let mut up: BTreeSet<Component> = resident(instr.regs_read()).collect();
                    up.extend(resident(instr.regs_written()));
                    up.insert(Component::Ccr);
                    let down: BTreeSet<Component> =
                        resident(instr.regs_written()).chain([Component::Ccr]).collect();
                    let mut group = Group::guest(gpc, instr);
                    group.items.push(Item::Sync(SyncOp::save(up, SyncCause::SystemLevel)));
                    let body = mini_ir_items(&mut block, &instr);
                    group.items.extend(body);
                    group.items.push(Item::Sync(SyncOp::restore(down, SyncCause::SystemLevel)));
                    block.groups.push(group);
                    fresh = true;
                    retired += 1;
                    i += 1;
                }
            }
            Category::MemoryAccess => {
                let entry_plan = &plan.per_instr[i];
                let mut group = Group::guest(gpc, instr);
                group.items.push(Item::Sync(entry_plan.pre.clone().unwrap()));
                let (helper, rn, off) = match instr {
                    Instr::Ldr { rn, off, .. } => (HelperKind::MmuRead, rn, off),
                    Instr::Str { rn, off, .. } => (HelperKind::MmuWrite, rn, off),
                    _ => unreachable!(),
                };
                let mut addr = Vec::new();
                match HReg::for_guest(rn.index()) {
                    Some(h) => addr.push(halu(HAluOp::Add, HReg::S0, h, HOperand::Imm(off as u32), false)),
                    None => {
                        addr.push(HostInstr::HLd { rd: HReg::S0, addr: gpr_slot(rn) });
                        addr.push(halu(HAluOp::Add, HReg::S0, HReg::S0, HOperand::Imm(off as u32), false));
                    }
                }
                group.items.push(Item::Code(addr));
                let site = block.add_call_site(CallSite {
                    helper,
                    gpc,
                    retired_before: retired,
                    instr: Some(instr),
                    deferred: None,
                });
                group.items.push(Item::Call { helper, site });
                let phys = HAddr { base: HReg::S0, offset: 0 };
                let data = match instr {
                    Instr::Ldr { rd, .. } => match HReg::for_guest(rd.index()) {
                        Some(h) => vec![HostInstr::HLd { rd: h, addr: phys }],
                        None => vec![
                            HostInstr::HLd { rd: HReg::S1, addr: phys },
                            HostInstr::HSt { rs: HReg::S1, addr: gpr_slot(rd) },
                        ],
                    },
                    Instr::Str { rs, .. } => match HReg::for_guest(rs.index()) {
                        Some(h) => vec![HostInstr::HSt { rs: h, addr: phys }],
                        None => vec![
                            HostInstr::HLd { rd: HReg::S1, addr: gpr_slot(rs) },
                            HostInstr::HSt { rs: HReg::S1, addr: phys },
                        ],
                    },
                    _ => unreachable!(),
                };
                group.items.push(Item::Code(data));
                group.items.push(Item::Sync(entry_plan.post.clone().unwrap()));
                block.groups.push(group);
                fresh = true;
                retired += 1;
                i += 1;
            }
            Category::SystemLevel => {
                let entry_plan = &plan.per_instr[i];
                let mut group = Group::guest(gpc, instr);
                group.items.push(Item::Sync(entry_plan.pre.clone().unwrap()));
                let site = block.add_call_site(CallSite {
                    helper: HelperKind::System,
                    gpc,
                    retired_before: retired,
                    instr: Some(instr),
                    deferred: None,
                });
                group.items.push(Item::Call { helper: HelperKind::System, site });
                group.items.push(Item::Sync(entry_plan.post.clone().unwrap()));
                block.groups.push(group);
                fresh = true;
                retired += 1;
                i += 1;
            }
            Category::Branch | Category::Halt => unreachable!("handled as terminators"),
        }
    }
    if !terminated {
        let gva = tb.end_gva();
        push_exit(&mut block, EdgeKind::Fallthrough { gva }, gva, PcValue::Imm(gva), vec![], true);
    }
    push_irq_exit(&mut block, irq_label, tb.entry);
    block
}

/// Translate a scanned window with the memory-resident pipeline.
///
/// Every guest register and flag lives in its state-area slot at every
/// instruction boundary, so there is no state to coordinate: the entry
/// check is bare, helpers run without brackets, and exits store the
/// successor address as an ordinary state update.
pub fn translate_tb_baseline(tb: &ScannedTb) -> HostBlock {
    let mut block = HostBlock::new(tb.entry);
    block.guest_len = tb.instrs.len() as u32;
    let irq_label = block.fresh_label();

    let mut entry = Group::structural(GroupRole::EntryCheck, tb.entry);
    entry.items.push(Item::Check { irq: irq_label });
    block.groups.push(entry);

    let mut retired: u32 = 0;
    let mut terminated = false;
    let mut fresh = true;
    for &(gpc, instr) in &tb.instrs {
        match instr {
            Instr::B { .. } | Instr::Bl { .. } | Instr::Bx { .. } | Instr::Svc { .. } | Instr::Halt => {
                emit_terminator(&mut block, gpc, &instr, false, &mut fresh);
                terminated = true;
                continue;
            }
            _ => {}
        }
        match instr.category() {
            Category::RuleEligible => {
                let mut group = Group::guest(gpc, instr);
                let body = mini_ir_items(&mut block, &instr);
                group.items.extend(body);
                block.groups.push(group);
            }
            Category::MemoryAccess => {
                let (helper, rn, off) = match instr {
                    Instr::Ldr { rn, off, .. } => (HelperKind::MmuRead, rn, off),
                    Instr::Str { rn, off, .. } => (HelperKind::MmuWrite, rn, off),
                    _ => unreachable!(),
                };
                let mut group = Group::guest(gpc, instr);
                group.items.push(Item::Code(vec![
                    HostInstr::HLd { rd: HReg::S0, addr: gpr_slot(rn) },
                    halu(HAluOp::Add, HReg::S0, HReg::S0, HOperand::Imm(off as u32), false),
                ]));
                let site = block.add_call_site(CallSite {
                    helper,
                    gpc,
                    retired_before: retired,
                    instr: Some(instr),
                    deferred: None,
                });
                group.items.push(Item::Call { helper, site });
                let phys = HAddr { base: HReg::S0, offset: 0 };
                let data = match instr {
                    Instr::Ldr { rd, .. } => vec![
                        HostInstr::HLd { rd: HReg::S1, addr: phys },
                        HostInstr::HSt { rs: HReg::S1, addr: gpr_slot(rd) },
                    ],
                    Instr::Str { rs, .. } => vec![
                        HostInstr::HLd { rd: HReg::S1, addr: gpr_slot(rs) },
                        HostInstr::HSt { rs: HReg::S1, addr: phys },
                    ],
                    _ => unreachable!(),
                };
                group.items.push(Item::Code(data));
                block.groups.push(group);
            }
            Category::SystemLevel => {
                let mut group = Group::guest(gpc, instr);
                let site = block.add_call_site(CallSite {
                    helper: HelperKind::System,
                    gpc,
                    retired_before: retired,
                    instr: Some(instr),
                    deferred: None,
                });
                group.items.push(Item::Call { helper: HelperKind::System, site });
                block.groups.push(group);
            }
            Category::Branch | Category::Halt => unreachable!("handled as terminators"),
        }
        retired += 1;
    }
    if !terminated {
        let gva = tb.end_gva();
        push_exit(&mut block, EdgeKind::Fallthrough { gva }, gva, PcValue::Imm(gva), vec![], false);
    }
    push_irq_exit(&mut block, irq_label, tb.entry);
    block
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guest::asm::parse_program;
    use crate::translate::block::SyncKind;
    use crate::translate::lower::lower_block;
    use crate::translate::scan::scan_tb;

    fn rules_block(src: &str) -> HostBlock {
        let program = parse_program(src).unwrap();
        let (tb, plan) = scan_tb(&program, program.entry).unwrap();
        translate_tb_rules(&tb, &plan, &RuleSet::starter())
    }

    fn baseline_block(src: &str) -> HostBlock {
        let program = parse_program(src).unwrap();
        let (tb, _) = scan_tb(&program, program.entry).unwrap();
        translate_tb_baseline(&tb)
    }

    fn sync_lines(block: &HostBlock) -> Vec<String> {
        block.sync_ops().map(|(_, _, op)| op.to_string()).collect()
    }

    #[test]
    fn entry_group_saves_checks_and_reloads() {
        let block = rules_block("add r0, r1, r2\nhalt\n");
        let entry = &block.groups[0];
        assert_eq!(entry.role, GroupRole::EntryCheck);
        assert_eq!(entry.items.len(), 3);
        let save = entry.items[0].as_sync().unwrap();
        assert_eq!(save.kind, SyncKind::Save);
        assert_eq!(save.cause, SyncCause::InterruptCheck);
        assert!(save.components.contains(&Component::Pc));
        assert!(matches!(entry.items[1], Item::Check { .. }));
        let restore = entry.items[2].as_sync().unwrap();
        assert_eq!(restore.kind, SyncKind::Restore);
        assert!(!restore.components.contains(&Component::Pc));
    }

    #[test]
    fn baseline_entry_check_is_bare() {
        let block = baseline_block("add r0, r1, r2\nhalt\n");
        let entry = &block.groups[0];
        assert_eq!(entry.items.len(), 1);
        assert!(matches!(entry.items[0], Item::Check { .. }));
        assert_eq!(sync_lines(&block), Vec::<String>::new());
    }

    #[test]
    fn stale_flags_force_a_save_before_a_guard() {
        // The compare leaves the packed word behind; the conditional's
        // guard needs it, so a save appears in front.
        let block = rules_block("cmp r0, #0\naddeq r1, r1, #1\nhalt\n");
        let cond_group = &block.groups[2];
        let first = cond_group.items[0].as_sync().unwrap();
        assert_eq!(first.kind, SyncKind::Save);
        assert_eq!(first.cause, SyncCause::ConstrainedRule);
        assert!(matches!(cond_group.items[1], Item::Guard(_)));
    }

    #[test]
    fn helper_save_between_compare_and_conditional_subsumes_the_eager_save() {
        // The system helper's bracket already refreshed the packed word
        // after the compare, so the conditional guard needs nothing extra.
        let block = rules_block("cmp r0, #0\nvmsr fpscr, r1\naddeq r2, r2, #1\nhalt\n");
        let cond_group = &block.groups[3];
        assert!(
            matches!(cond_group.items[0], Item::Guard(_)),
            "expected no save before the guard, got:\n{}",
            block.listing()
        );
    }

    #[test]
    fn conditional_instruction_ends_with_a_flags_reload() {
        let block = rules_block("addeq r1, r1, #1\nhalt\n");
        let group = &block.groups[1];
        let last = group.items.last().unwrap().as_sync().unwrap();
        assert_eq!(last.kind, SyncKind::Restore);
        assert_eq!(last.cause, SyncCause::ConstrainedRule);
        assert!(last.has_ccr());
    }

    #[test]
    fn conditional_flag_setter_saves_inside_the_guard() {
        let block = rules_block("addeqs r1, r1, #1\nhalt\n");
        let group = &block.groups[1];
        // Expected order: guard, payload, in-guard save, skip label,
        // trailing reload.
        let kinds: Vec<&str> = group
            .items
            .iter()
            .map(|item| match item {
                Item::Guard(_) => "guard",
                Item::Code(_) => "code",
                Item::Sync(op) if op.kind == SyncKind::Save => "save",
                Item::Sync(_) => "restore",
                Item::SetLabel(_) => "label",
                _ => "other",
            })
            .collect();
        assert_eq!(kinds, vec!["guard", "code", "save", "label", "restore"]);
    }

    #[test]
    fn memory_access_is_bracketed_and_recorded() {
        let block = rules_block("ldr r1, [r2, #4]\nhalt\n");
        let group = &block.groups[1];
        let pre = group.items[0].as_sync().unwrap();
        assert_eq!(pre.cause, SyncCause::MemoryAccess);
        assert_eq!(pre.kind, SyncKind::Save);
        assert!(matches!(group.items[2], Item::Call { helper: HelperKind::MmuRead, .. }));
        let post = group.items[4].as_sync().unwrap();
        assert_eq!(post.kind, SyncKind::Restore);
        assert_eq!(block.call_sites.len(), 1);
        assert_eq!(block.call_sites[0].gpc, 0);
        assert_eq!(block.call_sites[0].retired_before, 0);
        match &group.items[1] {
            Item::Code(code) => assert_eq!(code[0].to_string(), "hadd h12, h2, #0x4"),
            other => panic!("expected address code, got {other:?}"),
        }
        match &group.items[3] {
            Item::Code(code) => assert_eq!(code[0].to_string(), "hld h1, [h12]"),
            other => panic!("expected data code, got {other:?}"),
        }
    }

    #[test]
    fn unmatched_compute_falls_back_to_a_bracketed_expansion() {
        // The starter rule file has no mvn-immediate rule on purpose.
        let block = rules_block("mvn r0, #5\nhalt\n");
        let group = &block.groups[1];
        let pre = group.items[0].as_sync().unwrap();
        assert_eq!(pre.cause, SyncCause::SystemLevel);
        assert!(pre.components.contains(&Component::Gpr(0)), "destination uploaded too");
        assert!(pre.has_ccr());
        let post = group.items.last().unwrap().as_sync().unwrap();
        assert_eq!(post.kind, SyncKind::Restore);
        assert!(post.components.contains(&Component::Gpr(0)));
        assert!(matches!(group.items[1], Item::Code(_)));
    }

    #[test]
    fn fused_rule_advances_retired_accounting() {
        let block = rules_block("mov r0, r1\nadd r0, r0, r2\nldr r3, [r4]\nhalt\n");
        assert_eq!(block.groups[1].guest_count, 2, "fusion expected:\n{}", block.listing());
        assert_eq!(block.call_sites[0].retired_before, 2);
        assert_eq!(block.guest_len, 4);
    }

    #[test]
    fn conditional_branch_reloads_flags_on_both_exits() {
        let block = rules_block("cmp r0, #0\nbeq 0x40\n");
        let lines = sync_lines(&block);
        let reloads = lines
            .iter()
            .filter(|l| l.contains("restore") && l.contains("constrained-rule"))
            .count();
        assert_eq!(reloads, 2, "one reload per exit:\n{}", block.listing());
        assert_eq!(block.edges.len(), 3);
        assert!(matches!(block.edges[0].kind, EdgeKind::Taken { gva: 0x40 }));
        assert!(matches!(block.edges[1].kind, EdgeKind::Fallthrough { gva: 8 }));
        assert!(matches!(block.edges[2].kind, EdgeKind::IrqAtCheck { resume_gva: 0 }));
    }

    #[test]
    fn exits_upload_flags_then_the_program_counter() {
        let block = rules_block("add r0, r1, r2\nb 0x40\n");
        let epilogue = block
            .groups
            .iter()
            .find(|g| matches!(g.role, GroupRole::Epilogue(_)))
            .unwrap();
        let save = epilogue.items[0].as_sync().unwrap();
        assert_eq!(save.cause, SyncCause::TbBoundary);
        assert!(matches!(epilogue.items[1], Item::PcSave(PcValue::Imm(0x40))));
        assert!(matches!(epilogue.items[2], Item::Exit { .. }));
    }

    #[test]
    fn baseline_exit_is_a_plain_state_update() {
        let block = baseline_block("add r0, r1, r2\nb 0x40\n");
        let epilogue = block
            .groups
            .iter()
            .find(|g| matches!(g.role, GroupRole::Epilogue(_)))
            .unwrap();
        assert!(matches!(epilogue.items[0], Item::PcUpdate(PcValue::Imm(0x40))));
        assert!(matches!(epilogue.items[1], Item::Exit { .. }));
    }

    #[test]
    fn link_register_write_precedes_the_call_exit() {
        let block = rules_block("bl 0x80\n");
        let group = &block.groups[1];
        match &group.items[0] {
            Item::Code(code) => {
                assert_eq!(code[0].to_string(), "hmov h12, #0x4");
                assert_eq!(code[1].to_string(), "hst h12, [h15, #56]");
            }
            other => panic!("expected link code, got {other:?}"),
        }
        assert!(matches!(block.edges[0].kind, EdgeKind::Taken { gva: 0x80 }));
    }

    #[test]
    fn register_branch_exits_indirect() {
        let block = rules_block("bx r3\n");
        assert!(matches!(block.edges[0].kind, EdgeKind::Indirect { reg: Reg(3) }));
        let epilogue = block
            .groups
            .iter()
            .find(|g| matches!(g.role, GroupRole::Epilogue(_)))
            .unwrap();
        assert!(matches!(epilogue.items[1], Item::PcSave(PcValue::FromGuestReg(Reg(3)))));
    }

    #[test]
    fn trap_and_halt_edges_keep_their_address() {
        let block = rules_block("mov r0, #1\nsvc #2\n");
        assert!(matches!(block.edges[0].kind, EdgeKind::Svc { vector: 2, gpc: 4 }));
        let block = rules_block("mov r0, #1\nhalt\n");
        assert!(matches!(block.edges[0].kind, EdgeKind::Halt { gpc: 4 }));
    }

    #[test]
    fn open_window_falls_through_to_the_next_address() {
        let block = rules_block("mov r0, #1\nmov r1, #2\n");
        assert!(matches!(block.edges[0].kind, EdgeKind::Fallthrough { gva: 8 }));
    }

    #[test]
    fn baseline_expansion_lengths_are_fixed() {
        let cases = [
            ("mov r0, #7", 2),
            ("mov r0, r1", 2),
            ("mvn r0, r1", 3),
            ("movs r0, r1", 7),
            ("mvns r0, r1", 7),
            ("add r0, r1, r2", 5),
            ("add r0, r1, #9", 4),
            ("adds r0, r1, r2", 13),
            ("ands r0, r1, r2", 9),
            ("lsls r0, r1, r2", 11),
            ("cmp r0, r1", 11),
            ("cmp r0, #5", 10),
        ];
        for (src, expected) in cases {
            let block = baseline_block(&format!("{src}\nhalt\n"));
            let group = &block.groups[1];
            let count: usize = group
                .items
                .iter()
                .map(|item| match item {
                    Item::Code(code) => code.len(),
                    _ => 0,
                })
                .sum();
            assert_eq!(count, expected, "expansion of {src}");
        }
    }

    #[test]
    fn baseline_conditional_guards_on_flag_slots() {
        let block = baseline_block("addeq r0, r1, r2\nhalt\n");
        let group = &block.groups[1];
        match &group.items[0] {
            Item::Guard(g) => assert_eq!(g.form, GuardForm::SlotCompare),
            other => panic!("expected guard, got {other:?}"),
        }
        assert!(matches!(group.items.last().unwrap(), Item::SetLabel(_)));
    }

    #[test]
    fn both_pipelines_lower_cleanly() {
        let src = "cmp r0, #0\n\
                   addeq r1, r1, #1\n\
                   ldr r2, [r13, #8]\n\
                   str r2, [r1]\n\
                   vmrs r12, fpscr\n\
                   movs r3, r2\n\
                   mvn r4, #1\n\
                   bne 0x100\n";
        let program = parse_program(src).unwrap();
        let (tb, plan) = scan_tb(&program, program.entry).unwrap();
        let rules = translate_tb_rules(&tb, &plan, &RuleSet::starter());
        let lowered = lower_block(&rules).unwrap();
        assert!(lowered.code.len() > 40);
        assert_eq!(lowered.edges.len(), 3);
        let baseline = translate_tb_baseline(&tb);
        let lowered = lower_block(&baseline).unwrap();
        assert!(lowered.code.len() > 30);
    }

    #[test]
    fn rule_pipeline_emits_fewer_instructions_for_covered_code() {
        let src = "mov r0, #10\nadd r1, r0, r0\nsubs r2, r1, #3\ncmp r2, r0\nhalt\n";
        let program = parse_program(src).unwrap();
        let (tb, plan) = scan_tb(&program, program.entry).unwrap();
        let rules = lower_block(&translate_tb_rules(&tb, &plan, &RuleSet::starter())).unwrap();
        let baseline = lower_block(&translate_tb_baseline(&tb)).unwrap();
        let body = |code: &[crate::translate::lower::LInstr]| {
            code.iter()
                .filter(|l| l.tag == crate::host::isa::Tag::Translated)
                .count()
        };
        assert!(
            body(&rules.code) < body(&baseline.code),
            "rule body {} vs baseline body {}",
            body(&rules.code),
            body(&baseline.code)
        );
    }
}
