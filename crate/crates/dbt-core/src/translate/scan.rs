//! Block scanning and the per-instruction coordination plan.
//!
//! Translation starts by scanning ahead from the entry address, collecting
//! the straight-line window the block will cover. Alongside the window the
//! scanner computes a coordination plan: for every instruction that leaves
//! translated code (a software MMU call or a system helper), which pieces of
//! CPU state must be uploaded before the call and downloaded after it. The
//! emitter inserts exactly the operations the plan names.

use std::fmt;

use crate::guest::{Category, Instr, Program, Reg};
use crate::translate::block::{Component, SyncCause, SyncOp};

/// Scanning found no decodable instruction at the entry address.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodeError {
    pub pc: u32,
}

impl fmt::Display for DecodeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "no instruction at {:#010x}", self.pc)
    }
}

impl std::error::Error for DecodeError {}

/// Why the scan window closed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockEnd {
    /// Last instruction is a control transfer.
    Branch,
    /// Last instruction stops the machine.
    Halt,
    /// Last instruction raises a software interrupt.
    Svc,
    /// Size cap reached, or the next address holds no instruction.
    Window,
}

/// The largest number of guest instructions a single block may cover.
pub const MAX_BLOCK_INSTRS: usize = 32;

/// A scanned translation window: the instructions one block will cover, in
/// guest order, each with its address.
#[derive(Debug, Clone)]
pub struct ScannedTb {
    pub entry: u32,
    pub instrs: Vec<(u32, Instr)>,
    pub end: BlockEnd,
}

impl ScannedTb {
    /// Guest address of the first instruction past the window.
    pub fn end_gva(&self) -> u32 {
        match self.instrs.last() {
            Some((gpc, _)) => gpc + 4,
            None => self.entry,
        }
    }
}

/// Coordination work one instruction requires: state uploaded before its
/// helper runs and state downloaded after. Instructions that stay inside
/// translated code need neither.
#[derive(Debug, Clone, Default)]
pub struct InstrPlan {
    pub pre: Option<SyncOp>,
    pub post: Option<SyncOp>,
}

/// The block's coordination plan, indexed like `ScannedTb::instrs`.
#[derive(Debug, Clone, Default)]
pub struct CoordPlan {
    pub per_instr: Vec<InstrPlan>,
}

fn resident_components(regs: &[Reg]) -> impl Iterator<Item = Component> + '_ {
    regs.iter().filter(|r| r.index() < 12).map(|r| Component::Gpr(r.index() as u8))
}

fn plan_for(instr: &Instr) -> InstrPlan {
    match instr.category() {
        Category::MemoryAccess => InstrPlan {
            pre: Some(SyncOp::save([Component::Ccr], SyncCause::MemoryAccess)),
            post: Some(SyncOp::restore([Component::Ccr], SyncCause::MemoryAccess)),
        },
        // A software interrupt leaves through the block edge, not a helper
        // call, so it carries no plan of its own.
        Category::SystemLevel if !matches!(instr, Instr::Svc { .. }) => {
            let mut pre: Vec<Component> = vec![Component::Ccr];
            pre.extend(resident_components(&instr.regs_read()));
            let mut post: Vec<Component> = vec![Component::Ccr];
            post.extend(resident_components(&instr.regs_written()));
            InstrPlan {
                pre: Some(SyncOp::save(pre, SyncCause::SystemLevel)),
                post: Some(SyncOp::restore(post, SyncCause::SystemLevel)),
            }
        }
        _ => InstrPlan::default(),
    }
}

/// Scan a translation window starting at `entry` and compute its
/// coordination plan.
///
/// The window extends over straight-line code: it closes after a branch, a
/// halt, a software interrupt, or [`MAX_BLOCK_INSTRS`] instructions,
/// whichever comes first. Running into an address with no instruction closes
/// the window early; execution reaching that address is the runtime's
/// problem, not the scanner's. An entry address with no instruction is an
/// error.
pub fn scan_tb(program: &Program, entry: u32) -> Result<(ScannedTb, CoordPlan), DecodeError> {
    let mut instrs = Vec::new();
    let mut plan = CoordPlan::default();
    let mut pc = entry;
    let end = loop {
        let Some(instr) = program.fetch(pc) else {
            if instrs.is_empty() {
                return Err(DecodeError { pc });
            }
            break BlockEnd::Window;
        };
        instrs.push((pc, *instr));
        plan.per_instr.push(plan_for(instr));
        pc += 4;
        match instr.category() {
            Category::Branch => break BlockEnd::Branch,
            Category::Halt => break BlockEnd::Halt,
            _ if matches!(instr, Instr::Svc { .. }) => break BlockEnd::Svc,
            _ => {}
        }
        if instrs.len() == MAX_BLOCK_INSTRS {
            break BlockEnd::Window;
        }
    };
    Ok((ScannedTb { entry, instrs, end }, plan))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guest::asm::parse_program;
    use crate::translate::block::SyncKind;

    fn scan(src: &str) -> (ScannedTb, CoordPlan) {
        let program = parse_program(src).unwrap();
        scan_tb(&program, program.entry).unwrap()
    }

    #[test]
    fn window_closes_at_branch() {
        let (tb, _) = scan("mov r0, #1\nadd r0, r0, #1\nb 0x40\nmov r1, #2\n");
        assert_eq!(tb.instrs.len(), 3);
        assert_eq!(tb.end, BlockEnd::Branch);
        assert_eq!(tb.end_gva(), 12);
    }

    #[test]
    fn window_closes_at_svc_and_halt() {
        let (tb, _) = scan("mov r0, #1\nsvc #3\nmov r1, #2\n");
        assert_eq!(tb.instrs.len(), 2);
        assert_eq!(tb.end, BlockEnd::Svc);

        let (tb, _) = scan("halt\n");
        assert_eq!(tb.instrs.len(), 1);
        assert_eq!(tb.end, BlockEnd::Halt);
    }

    #[test]
    fn window_caps_at_limit() {
        let mut src = String::new();
        for _ in 0..40 {
            src.push_str("add r0, r0, #1\n");
        }
        let (tb, plan) = scan(&src);
        assert_eq!(tb.instrs.len(), MAX_BLOCK_INSTRS);
        assert_eq!(tb.end, BlockEnd::Window);
        assert_eq!(plan.per_instr.len(), MAX_BLOCK_INSTRS);
    }

    #[test]
    fn window_closes_before_a_gap() {
        let program = parse_program("mov r0, #1\nmov r1, #2\n").unwrap();
        let (tb, _) = scan_tb(&program, program.entry).unwrap();
        assert_eq!(tb.instrs.len(), 2);
        assert_eq!(tb.end, BlockEnd::Window);

        let err = scan_tb(&program, 0x1000).unwrap_err();
        assert_eq!(err.pc, 0x1000);
    }

    #[test]
    fn memory_access_plans_ccr_round_trip() {
        let (_, plan) = scan("ldr r1, [r2]\nhalt\n");
        let pre = plan.per_instr[0].pre.as_ref().unwrap();
        assert_eq!(pre.kind, SyncKind::Save);
        assert_eq!(pre.cause, SyncCause::MemoryAccess);
        assert!(pre.has_ccr());
        assert_eq!(pre.components.len(), 1);
        let post = plan.per_instr[0].post.as_ref().unwrap();
        assert_eq!(post.kind, SyncKind::Restore);
        assert!(post.has_ccr());
    }

    #[test]
    fn system_helper_plans_registers_it_touches() {
        let (_, plan) = scan("vmsr fpscr, r3\nvmrs r4, fpscr\nhalt\n");
        let pre = plan.per_instr[0].pre.as_ref().unwrap();
        assert!(pre.components.contains(&Component::Gpr(3)));
        assert!(pre.has_ccr());
        let post = plan.per_instr[0].post.as_ref().unwrap();
        assert_eq!(post.components.len(), 1, "vmsr writes no general register");

        let pre = plan.per_instr[1].pre.as_ref().unwrap();
        assert_eq!(pre.components.len(), 1, "vmrs reads no general register");
        let post = plan.per_instr[1].post.as_ref().unwrap();
        assert!(post.components.contains(&Component::Gpr(4)));
    }

    #[test]
    fn resident_plan_skips_memory_backed_registers() {
        let (_, plan) = scan("vmsr fpscr, r13\nhalt\n");
        let pre = plan.per_instr[0].pre.as_ref().unwrap();
        assert_eq!(pre.components.len(), 1, "r13 lives in memory already");
    }

    #[test]
    fn compute_carries_no_plan() {
        let (_, plan) = scan("add r0, r1, r2\ncmp r0, #3\nbeq 0\n");
        for entry in &plan.per_instr {
            assert!(entry.pre.is_none());
            assert!(entry.post.is_none());
        }
    }
}
