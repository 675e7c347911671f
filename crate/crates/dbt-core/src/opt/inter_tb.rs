//! Elimination across block boundaries.
//!
//! A block that overwrites the flags before it reads them, or reads their
//! memory copy, does not care what its predecessor left behind. Such a
//! block is marked so that predecessors chaining into it may skip their
//! boundary flag save, and its own post-check restore is dropped: the
//! entry save still runs, so the packed word is fresh for any guard that
//! wants it, and the pending-interrupt check may clobber the host flags
//! freely because the block redefines them before the next read.
//!
//! The analysis walks the items after the entry group in order and stops
//! at the first event that touches flags. A flagged payload or a restore
//! decides for the block; a save, a direct-flags guard, or anything that
//! reads the slots decides against it. A packed-word guard is neutral,
//! the entry save having just refreshed the word it reads.

use crate::host::isa::HostInstr;
use crate::translate::block::{GuardForm, HostBlock, Item, SyncCause, SyncKind};

use super::{BlockPass, OptLevel, PassReport};

pub struct InterBlockElimination;

fn defines_host_flags(i: &HostInstr) -> bool {
    matches!(
        i,
        HostInstr::HAlu { set_flags: true, .. } | HostInstr::HCmp { .. } | HostInstr::HReg2Flags { .. }
    )
}

fn reads_host_flags(i: &HostInstr) -> bool {
    matches!(
        i,
        HostInstr::HFlagExt { .. } | HostInstr::HFlags2Reg { .. } | HostInstr::HJcc { .. }
    )
}

/// True when the block's first flag event after the entry check is a
/// definition, so live flags at entry are never consumed.
pub fn entry_defines_flags_first(block: &HostBlock) -> bool {
    for group in block.groups.iter().skip(1) {
        for item in &group.items {
            match item {
                Item::Code(instrs) => {
                    for i in instrs {
                        if defines_host_flags(i) {
                            return true;
                        }
                        if reads_host_flags(i) {
                            return false;
                        }
                    }
                }
                Item::Sync(op) if op.has_ccr() => return op.kind == SyncKind::Restore,
                Item::Sync(_) => {}
                Item::Guard(g) => match g.form {
                    GuardForm::MemCompare => {}
                    GuardForm::DirectFlags | GuardForm::SlotCompare => return false,
                },
                _ => {}
            }
        }
    }
    false
}

impl BlockPass for InterBlockElimination {
    fn name(&self) -> &'static str {
        "inter-block"
    }

    fn level(&self) -> OptLevel {
        OptLevel::Elimination
    }

    fn run(&self, block: &mut HostBlock) -> PassReport {
        let mut report = PassReport::default();
        block.entry_flags_def_first = entry_defines_flags_first(block);
        if !block.entry_flags_def_first {
            return report;
        }
        let entry = &mut block.groups[0];
        let trailing_restore = entry.items.last().is_some_and(|item| {
            item.as_sync().is_some_and(|op| {
                op.kind == SyncKind::Restore
                    && op.cause == SyncCause::InterruptCheck
                    && op.has_ccr()
            })
        });
        if trailing_restore {
            entry.items.pop();
            report.removed_syncs += 1;
            report.touch(0);
        }
        report
    }
}
