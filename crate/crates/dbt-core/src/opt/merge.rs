//! Elimination: fuse adjacent memory-access coordination brackets.
//!
//! Every memory access is bracketed by a flag save before the helper call
//! and a restore after it. When two accesses sit back to back, the inner
//! restore/save pair cancels: the address and data moves between the calls
//! never read host flags, the helpers preserve the guest registers, and a
//! fault inside the widened bracket still finds the flag state that the
//! opening save wrote. Runs of accesses collapse pairwise, leaving one
//! bracket around the whole run.

use crate::guest::Category;
use crate::translate::block::{GroupRole, HostBlock, SyncCause, SyncKind};

use super::{BlockPass, OptLevel, PassReport};

pub struct MergeMemoryBrackets;

fn memory_group(block: &HostBlock, index: usize) -> bool {
    let group = &block.groups[index];
    group.role == GroupRole::Guest
        && group.instr.as_ref().is_some_and(|i| i.category() == Category::MemoryAccess)
}

fn inner_pair(block: &HostBlock, left: usize, right: usize) -> bool {
    let tail = block.groups[left].items.last().and_then(|i| i.as_sync());
    let head = block.groups[right].items.first().and_then(|i| i.as_sync());
    match (tail, head) {
        (Some(restore), Some(save)) => {
            restore.kind == SyncKind::Restore
                && restore.cause == SyncCause::MemoryAccess
                && restore.has_ccr()
                && save.kind == SyncKind::Save
                && save.cause == SyncCause::MemoryAccess
                && save.has_ccr()
        }
        _ => false,
    }
}

impl BlockPass for MergeMemoryBrackets {
    fn name(&self) -> &'static str {
        "merge-memory-brackets"
    }

    fn level(&self) -> OptLevel {
        OptLevel::Elimination
    }

    fn run(&self, block: &mut HostBlock) -> PassReport {
        let mut report = PassReport::default();
        let mut i = 0;
        while i + 1 < block.groups.len() {
            if memory_group(block, i) && memory_group(block, i + 1) && inner_pair(block, i, i + 1) {
                block.groups[i].items.pop();
                block.groups[i + 1].items.remove(0);
                report.removed_syncs += 2;
                report.touch(i);
                report.touch(i + 1);
            }
            i += 1;
        }
        report
    }
}
