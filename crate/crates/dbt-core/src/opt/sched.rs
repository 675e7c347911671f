//! Scheduling: reorder work so that coordination disappears.
//!
//! Two movers. `DelayByUse` postpones a flag-defining instruction until
//! just before its flags are consumed. Memory-access brackets in between
//! then carry no live flag state and drop their saves and restores; a
//! helper trap inside the moved-over span replays the delayed instruction
//! before it surfaces, so the trap still observes architectural state.
//! `RelocateCheck` folds the entry interrupt check into the first memory
//! bracket, whose save then stands in for the check site's own at the
//! price of a coarser delivery point.

use std::collections::BTreeSet;

use crate::guest::{Category, FlagSet, Reg};
use crate::host::isa::HostInstr;
use crate::translate::block::{
    Component, EdgeKind, Group, GroupRole, GuardForm, HostBlock, Item, SyncCause, SyncKind,
    SyncOp,
};

use super::{BlockPass, OptLevel, PassReport};

pub struct DelayByUse;

pub struct RelocateCheck;

fn is_flagged(i: &HostInstr) -> bool {
    matches!(i, HostInstr::HAlu { set_flags: true, .. } | HostInstr::HCmp { .. })
}

fn touches_flags(i: &HostInstr) -> bool {
    is_flagged(i)
        || matches!(
            i,
            HostInstr::HFlagExt { .. }
                | HostInstr::HFlags2Reg { .. }
                | HostInstr::HReg2Flags { .. }
                | HostInstr::HJcc { .. }
        )
}

/// A movable definition: one guest instruction, pure code, rewriting the
/// whole flag set. Full redefinition matters because a replay at a trap
/// site must not depend on the flag state it finds there.
fn movable_def(group: &Group) -> bool {
    group.role == GroupRole::Guest
        && group.deferred_for_sites.is_empty()
        && group.guest_count == 1
        && !group.items.is_empty()
        && group.items.iter().all(|i| matches!(i, Item::Code(_)))
        && group.defines_ccr()
        && group.instr.as_ref().is_some_and(|i| i.flags_defined() == FlagSet::NZCV)
}

/// Flag traffic a delayed definition makes dead: the plain memory-access
/// bracket operations.
fn droppable_sync(op: &SyncOp) -> bool {
    op.cause == SyncCause::MemoryAccess && op.components.len() == 1 && op.has_ccr()
}

fn region_item(item: &Item) -> bool {
    match item {
        Item::Code(instrs) => !instrs.iter().any(touches_flags),
        Item::Call { .. } => true,
        Item::Sync(op) => droppable_sync(op),
        _ => false,
    }
}

/// A group the definition may move past: guest work that neither touches
/// flags beyond droppable bracket traffic nor overlaps the definition's
/// registers.
fn region_group(group: &Group, def_reads: &BTreeSet<Reg>, def_writes: &BTreeSet<Reg>) -> bool {
    if group.role != GroupRole::Guest
        || group.guest_count != 1
        || !group.deferred_for_sites.is_empty()
        || !group.items.iter().all(region_item)
    {
        return false;
    }
    group.instr.as_ref().is_some_and(|i| {
        let reads: BTreeSet<Reg> = i.regs_read().into_iter().collect();
        let writes: BTreeSet<Reg> = i.regs_written().into_iter().collect();
        reads.is_disjoint(def_writes)
            && writes.is_disjoint(def_reads)
            && writes.is_disjoint(def_writes)
    })
}

enum UseKind {
    /// The first consumer opens with a flag save, which will capture the
    /// delayed definition's output; nothing else changes.
    SaveLeads,
    /// The first consumer is a guard. It switches to testing the live
    /// flags, and the restores that would have reloaded the now-stale
    /// packed word go away.
    GuardLeads,
}

struct Move {
    def: usize,
    use_at: usize,
    kind: UseKind,
    sites: Vec<u32>,
    drops: u32,
}

fn find_move(block: &HostBlock) -> Option<Move> {
    for def in 0..block.groups.len() {
        if !movable_def(&block.groups[def]) {
            continue;
        }
        let instr = block.groups[def].instr.as_ref().unwrap();
        let def_reads: BTreeSet<Reg> = instr.regs_read().into_iter().collect();
        let def_writes: BTreeSet<Reg> = instr.regs_written().into_iter().collect();
        let mut sites = Vec::new();
        let mut drops = 0u32;
        let mut j = def + 1;
        while j < block.groups.len() && region_group(&block.groups[j], &def_reads, &def_writes) {
            for item in &block.groups[j].items {
                match item {
                    Item::Sync(_) => drops += 1,
                    Item::Call { site, .. } => sites.push(*site),
                    _ => {}
                }
            }
            j += 1;
        }
        if drops == 0 || j == block.groups.len() {
            continue;
        }
        let kind = match block.groups[j].items.first() {
            Some(Item::Sync(op)) if op.kind == SyncKind::Save && op.has_ccr() => UseKind::SaveLeads,
            Some(Item::Guard(g))
                if matches!(g.form, GuardForm::MemCompare | GuardForm::DirectFlags) =>
            {
                // A guarded consumer leaves the packed word stale behind
                // it, so nothing that could read it may follow.
                let guest_after = block.groups[j + 1..]
                    .iter()
                    .any(|g| g.role == GroupRole::Guest && !g.items.is_empty());
                if guest_after {
                    continue;
                }
                UseKind::GuardLeads
            }
            _ => continue,
        };
        return Some(Move { def, use_at: j, kind, sites, drops });
    }
    None
}

fn sweep_exit_restores(block: &mut HostBlock, report: &mut PassReport) {
    for gi in 0..block.groups.len() {
        let group = &mut block.groups[gi];
        if !matches!(group.role, GroupRole::Epilogue(_)) {
            continue;
        }
        let before = group.items.len();
        group.items.retain(|item| {
            !item.as_sync().is_some_and(|op| {
                op.kind == SyncKind::Restore && op.cause == SyncCause::ConstrainedRule
            })
        });
        let removed = before - group.items.len();
        if removed > 0 {
            report.removed_syncs += removed as u32;
            report.touch(gi);
        }
    }
}

fn apply_move(block: &mut HostBlock, mv: Move, report: &mut PassReport) {
    for j in mv.def + 1..mv.use_at {
        let group = &mut block.groups[j];
        let before = group.items.len();
        group.items.retain(|i| !matches!(i, Item::Sync(_)));
        if group.items.len() < before {
            report.touch(j);
        }
    }
    report.removed_syncs += mv.drops;
    if matches!(mv.kind, UseKind::GuardLeads) {
        let consumer = &mut block.groups[mv.use_at];
        if let Some(Item::Guard(g)) = consumer.items.first_mut() {
            if g.form == GuardForm::MemCompare {
                g.form = GuardForm::DirectFlags;
                report.converted_guards += 1;
            }
        }
        let trailing_restore = consumer.items.last().is_some_and(|i| {
            i.as_sync().is_some_and(|op| {
                op.kind == SyncKind::Restore && op.cause == SyncCause::ConstrainedRule
            })
        });
        if trailing_restore {
            consumer.items.pop();
            report.removed_syncs += 1;
        } else if consumer.items.len() == 1 {
            sweep_exit_restores(block, report);
        }
        report.touch(mv.use_at);
    }
    let mut moved = block.groups.remove(mv.def);
    moved.deferred_for_sites = mv.sites;
    let dest = mv.use_at - 1;
    block.groups.insert(dest, moved);
    report.touch(mv.def);
    report.touch(dest);
}

impl BlockPass for DelayByUse {
    fn name(&self) -> &'static str {
        "delay-by-use"
    }

    fn level(&self) -> OptLevel {
        OptLevel::Scheduling
    }

    fn run(&self, block: &mut HostBlock) -> PassReport {
        let mut report = PassReport::default();
        while let Some(mv) = find_move(block) {
            apply_move(block, mv, &mut report);
        }
        report
    }
}

impl BlockPass for RelocateCheck {
    fn name(&self) -> &'static str {
        "relocate-check"
    }

    fn level(&self) -> OptLevel {
        OptLevel::Scheduling
    }

    fn run(&self, block: &mut HostBlock) -> PassReport {
        let mut report = PassReport::default();
        let Some(check_pos) =
            block.groups[0].items.iter().position(|i| matches!(i, Item::Check { .. }))
        else {
            return report;
        };
        let mut candidate = None;
        for (gi, group) in block.groups.iter().enumerate().skip(1) {
            if group.role != GroupRole::Guest {
                break;
            }
            // Guards before the new check site read the packed word the
            // entry save would have written; leave such blocks alone.
            if group.items.iter().any(|i| matches!(i, Item::Guard(_))) {
                return report;
            }
            let memory = group
                .instr
                .as_ref()
                .is_some_and(|i| i.category() == Category::MemoryAccess);
            let save_leads = group.items.first().is_some_and(|i| {
                i.as_sync().is_some_and(|op| {
                    op.kind == SyncKind::Save
                        && op.cause == SyncCause::MemoryAccess
                        && op.has_ccr()
                })
            });
            if memory && save_leads {
                candidate = Some(gi);
                break;
            }
        }
        let Some(ci) = candidate else { return report };
        debug_assert!(
            block.groups.iter().enumerate().all(|(p, g)| {
                p <= ci
                    || g.deferred_for_sites.iter().all(|s| {
                        !block.groups[..=ci].iter().any(|gg| {
                            gg.items
                                .iter()
                                .any(|it| matches!(it, Item::Call { site, .. } if site == s))
                        })
                    })
            }),
            "a deferred span may not cover the relocated check"
        );
        let irq = match &block.groups[0].items[check_pos] {
            Item::Check { irq } => *irq,
            _ => unreachable!(),
        };
        let entry = &mut block.groups[0];
        let entry_syncs = entry.items.iter().filter(|i| i.as_sync().is_some()).count() as u32;
        entry.items.clear();
        report.removed_syncs += entry_syncs;
        report.touch(0);
        let resume = block.groups[ci].gpc;
        let bracket = &mut block.groups[ci];
        if let Some(op) = bracket.items[0].as_sync_mut() {
            op.components.insert(Component::Pc);
            report.rewritten_syncs += 1;
        }
        bracket.items.insert(1, Item::Check { irq });
        report.touch(ci);
        for edge in &mut block.edges {
            if let EdgeKind::IrqAtCheck { resume_gva } = &mut edge.kind {
                *resume_gva = resume;
            }
        }
        report
    }
}
