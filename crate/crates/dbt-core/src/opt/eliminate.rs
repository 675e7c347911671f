//! Elimination: drop flag restores inside a run of same-condition
//! instructions.
//!
//! A guarded instruction ends by restoring the guest flags into the host
//! flags, so after the first instruction of a run the flags are already
//! live. Every later instruction of the run that is guarded on the same
//! condition, runs an unflagged payload, and ends with the usual restore
//! can instead test the live flags directly: its guard shrinks to one
//! conditional branch and its trailing restore disappears. A conditional
//! branch closing the run converts the same way, which also makes the
//! restore at the head of each exit sequence pointless.
//!
//! The first instruction of a run keeps its full coordination, and
//! anything that defines flags, goes through a helper, or is guarded on a
//! different condition ends the run. The analysis is per block and walks
//! the guest groups once.

use crate::guest::Cond;
use crate::host::isa::HostInstr;
use crate::translate::block::{
    Group, GroupRole, GuardForm, HostBlock, Item, SyncCause, SyncKind,
};

use super::{BlockPass, OptLevel, PassReport};

pub struct EliminateRestores;

enum Shape {
    /// Guarded payload with the standard trailing restore, optionally led
    /// by a save that refreshed a stale packed word.
    Simple { cond: Cond, eager: bool },
    /// A bare conditional-branch guard; its restores live in the exit
    /// sequences.
    Branch { cond: Cond },
    /// Plain code that neither reads nor writes flags.
    Neutral,
    /// Anything else ends the run.
    Breaker,
}

fn unflagged_code(item: &Item) -> bool {
    match item {
        Item::Code(instrs) => !instrs.iter().any(|i| {
            matches!(i, HostInstr::HAlu { set_flags: true, .. } | HostInstr::HCmp { .. })
        }),
        _ => false,
    }
}

fn classify(group: &Group) -> Shape {
    let mut items = group.items.as_slice();
    let mut eager = false;
    if let Some(Item::Sync(op)) = items.first() {
        if op.kind == SyncKind::Save && op.cause == SyncCause::ConstrainedRule && op.has_ccr() {
            eager = true;
            items = &items[1..];
        } else {
            return Shape::Breaker;
        }
    }
    match items {
        [Item::Guard(g)] if g.form == GuardForm::MemCompare => {
            if eager {
                Shape::Breaker
            } else {
                Shape::Branch { cond: g.cond }
            }
        }
        [Item::Guard(g), mid @ .., Item::SetLabel(_), Item::Sync(tail)]
            if g.form == GuardForm::MemCompare
                && tail.kind == SyncKind::Restore
                && tail.cause == SyncCause::ConstrainedRule
                && tail.has_ccr()
                && mid.iter().all(unflagged_code) =>
        {
            Shape::Simple { cond: g.cond, eager }
        }
        _ if !eager && items.iter().all(unflagged_code) => Shape::Neutral,
        _ => Shape::Breaker,
    }
}

impl BlockPass for EliminateRestores {
    fn name(&self) -> &'static str {
        "eliminate-restores"
    }

    fn level(&self) -> OptLevel {
        OptLevel::Elimination
    }

    fn run(&self, block: &mut HostBlock) -> PassReport {
        let mut report = PassReport::default();
        let mut run_cond: Option<Cond> = None;
        let mut branch_converted = false;
        for gi in 0..block.groups.len() {
            let group = &block.groups[gi];
            if group.role != GroupRole::Guest {
                continue;
            }
            match classify(group) {
                Shape::Simple { cond, eager } => {
                    if !eager && run_cond == Some(cond) {
                        let group = &mut block.groups[gi];
                        if let Item::Guard(g) = &mut group.items[0] {
                            g.form = GuardForm::DirectFlags;
                        }
                        group.items.pop();
                        report.converted_guards += 1;
                        report.removed_syncs += 1;
                        report.touch(gi);
                    } else {
                        run_cond = Some(cond);
                    }
                }
                Shape::Branch { cond } => {
                    if run_cond == Some(cond) {
                        if let Item::Guard(g) = &mut block.groups[gi].items[0] {
                            g.form = GuardForm::DirectFlags;
                        }
                        report.converted_guards += 1;
                        report.touch(gi);
                        branch_converted = true;
                    }
                }
                Shape::Neutral => {}
                Shape::Breaker => run_cond = None,
            }
        }
        if branch_converted {
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
        report
    }
}
