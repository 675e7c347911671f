//! Reduction: shorten flag coordination to its packed form.
//!
//! The full form of a flag save or restore keeps the four per-flag slots
//! coherent alongside the packed word, fourteen instructions either way.
//! Most operations exist only to carry the flags across a helper call or a
//! block boundary and back; nothing in between looks at the individual
//! slots, so the three-instruction packed form suffices. System-level
//! brackets are the exception: their helpers consume and produce individual
//! flag values through the slots, so they keep the full form. The runtime
//! tracks slot staleness and unpacks on demand when an interrupt delivery
//! needs the individual values.

use crate::translate::block::{HostBlock, SyncCause, SyncMode};

use super::{BlockPass, OptLevel, PassReport};

pub struct ReduceToPacked;

fn packable(cause: SyncCause) -> bool {
    !matches!(cause, SyncCause::SystemLevel)
}

impl BlockPass for ReduceToPacked {
    fn name(&self) -> &'static str {
        "reduce-to-packed"
    }

    fn level(&self) -> OptLevel {
        OptLevel::Reduction
    }

    fn run(&self, block: &mut HostBlock) -> PassReport {
        let mut report = PassReport::default();
        for (gi, group) in block.groups.iter_mut().enumerate() {
            for item in &mut group.items {
                let Some(op) = item.as_sync_mut() else { continue };
                if op.has_ccr() && op.mode == SyncMode::Full && packable(op.cause) {
                    op.mode = SyncMode::Packed;
                    report.rewritten_syncs += 1;
                    report.touch(gi);
                }
            }
        }
        report
    }
}
