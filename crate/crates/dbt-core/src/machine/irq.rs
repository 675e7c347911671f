//! Instruction-count interrupt controller.
//!
//! Workloads schedule interrupts as (retired-count, vector) pairs: once the
//! machine has retired at least that many guest instructions, the vector is
//! pending until it is serviced. Triggers fire in schedule order and each
//! fires once. Counting retired instructions rather than wall time keeps
//! runs bit-for-bit reproducible across both execution engines.

use serde::{Deserialize, Serialize};

/// One scheduled interrupt: pend `vector` once `after` instructions retired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IrqTrigger {
    pub after: u64,
    pub vector: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterruptController {
    triggers: Vec<IrqTrigger>,
    next: usize,
}

impl InterruptController {
    pub fn new(mut triggers: Vec<IrqTrigger>) -> Self {
        triggers.sort_by_key(|t| t.after);
        InterruptController { triggers, next: 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.triggers.is_empty()
    }

    /// Whether any trigger has matured at `retired` and not yet been
    /// serviced. Cheap enough to call after every instruction.
    pub fn pending(&self, retired: u64) -> bool {
        self.peek(retired).is_some()
    }

    pub fn peek(&self, retired: u64) -> Option<IrqTrigger> {
        self.triggers
            .get(self.next)
            .copied()
            .filter(|t| retired >= t.after)
    }

    /// Consume the matured trigger being serviced and return its vector.
    pub fn acknowledge(&mut self, retired: u64) -> Option<u32> {
        let trigger = self.peek(retired)?;
        self.next += 1;
        Some(trigger.vector)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triggers_mature_in_order_and_fire_once() {
        let mut irq = InterruptController::new(vec![
            IrqTrigger { after: 10, vector: 0x20 },
            IrqTrigger { after: 3, vector: 0x24 },
        ]);
        assert!(!irq.pending(2));
        assert!(irq.pending(3));
        // Both matured by 50, but the earlier trigger is serviced first.
        assert_eq!(irq.acknowledge(50), Some(0x24));
        assert!(irq.pending(50));
        assert_eq!(irq.acknowledge(50), Some(0x20));
        assert!(!irq.pending(u64::MAX));
        assert_eq!(irq.acknowledge(u64::MAX), None);
    }

    #[test]
    fn empty_schedule_never_pends() {
        let irq = InterruptController::default();
        assert!(!irq.pending(0));
        assert!(!irq.pending(u64::MAX));
    }
}
