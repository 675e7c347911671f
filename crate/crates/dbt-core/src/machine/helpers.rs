//! Emulator-side helper routines invoked from translated code, plus their
//! modeled costs.
//!
//! Helpers read and write guest state exclusively through the state area
//! and the runtime-side system register file; they never touch the host
//! registers that carry guest state inside translated code. That is the
//! contract the surrounding sync operations uphold: a save has deposited
//! everything the helper may read before the call, and a restore picks up
//! everything it may have written afterwards.
//!
//! Helper bodies are runtime code, not translated code, so their expense is
//! modeled as a fixed instruction-count charge per call rather than
//! executed instruction by instruction.

use crate::guest::{Ccr, Instr};
use crate::machine::area::EmuStateArea;
use crate::machine::mmu::{tlb_lookup_or_fill, PageTable, Tlb, TlbOutcome};
use crate::machine::{Access, Fault, GuestState, Mode, PhysMem};

/// Modeled helper-body costs, in host instructions. Charged to the Helper
/// tag by the caller.
pub mod cost {
    /// Address translation that hits the TLB.
    pub const MMU_HIT: u64 = 8;
    /// Address translation that misses and walks the page table.
    pub const MMU_MISS: u64 = 20;
    /// Address translation that faults (walk fails or protection denies).
    pub const MMU_FAULT: u64 = 6;
    /// System-register transfers and mode changes.
    pub const SYSTEM: u64 = 6;
    /// TLB invalidation, including the chain flush it forces.
    pub const TLBI: u64 = 4;
    /// Interrupt or fault delivery performed by the runtime.
    pub const DELIVER: u64 = 10;
}

/// What the runtime must do after a system helper returns normally.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SystemOutcome {
    Done,
    /// TLB was flushed; cached translation chains are no longer valid.
    TlbFlushed,
    /// A software interrupt was raised; deliver `vector` with a return
    /// address past the trapping instruction.
    SoftwareInterrupt { vector: u32 },
}

/// Emulate one system-level instruction against the state area. The guest
/// state argument supplies only the execution mode and system registers;
/// all general-register and flag traffic goes through the area. `gpc` is
/// the guest address of the instruction, used for fault reporting.
pub fn helper_system(
    instr: &Instr,
    gpc: u32,
    cpu: &mut GuestState,
    area: &mut EmuStateArea,
    tlb: &mut Tlb,
) -> Result<SystemOutcome, Fault> {
    let privileged = |cpu: &GuestState| {
        if cpu.mode == Mode::User {
            Err(Fault::Privilege { pc: gpc })
        } else {
            Ok(())
        }
    };
    match *instr {
        Instr::Vmsr { sysreg, rn } => {
            privileged(cpu)?;
            cpu.sysregs.insert(sysreg, area.gpr(rn));
            Ok(SystemOutcome::Done)
        }
        Instr::Vmrs { rd, sysreg } => {
            privileged(cpu)?;
            area.set_gpr(rd, cpu.sysreg(sysreg));
            Ok(SystemOutcome::Done)
        }
        Instr::SetCpsr { rn } => {
            privileged(cpu)?;
            let value = area.gpr(rn);
            area.write_flags_coherent(Ccr((value & 0xf) as u8));
            cpu.mode = Mode::from_bit((value >> 4) & 1);
            Ok(SystemOutcome::Done)
        }
        Instr::GetCpsr { rd } => {
            privileged(cpu)?;
            // Reads the four separate flag slots, not the packed word;
            // this helper is the reason its save keeps the full form.
            let nzcv = area.flags_from_slots();
            area.set_gpr(rd, u32::from(nzcv.0) | (cpu.mode.bit() << 4));
            Ok(SystemOutcome::Done)
        }
        Instr::Tlbi => {
            privileged(cpu)?;
            tlb.invalidate_all();
            Ok(SystemOutcome::TlbFlushed)
        }
        Instr::Svc { vector } => Ok(SystemOutcome::SoftwareInterrupt { vector }),
        _ => panic!("helper_system on non-system instruction {instr}"),
    }
}

/// Translate a guest virtual address on behalf of a guest load or store.
/// Returns the physical address and the modeled cost of the translation.
pub fn helper_translate(
    access: Access,
    gva: u32,
    pt: &PageTable,
    tlb: &mut Tlb,
    mem: &PhysMem,
) -> Result<(u32, u64), Fault> {
    if gva % 4 != 0 {
        return Err(Fault::Alignment { gva, access });
    }
    match tlb_lookup_or_fill(gva, access, tlb, pt, mem)? {
        TlbOutcome::Hit(gpa) => Ok((gpa, cost::MMU_HIT)),
        TlbOutcome::Filled(gpa) => Ok((gpa, cost::MMU_MISS)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guest::{Flag, Reg, SysReg};
    use crate::machine::area::offsets;
    use crate::machine::PageFaultKind;

    fn fixture() -> (GuestState, EmuStateArea, Tlb) {
        (GuestState::default(), EmuStateArea::default(), Tlb::default())
    }

    #[test]
    fn vmsr_moves_register_slot_into_sysreg() {
        let (mut cpu, mut area, mut tlb) = fixture();
        area.set_gpr(Reg(3), 0x55);
        let out = helper_system(
            &Instr::Vmsr { sysreg: SysReg::Fpscr, rn: Reg(3) },
            0x100,
            &mut cpu,
            &mut area,
            &mut tlb,
        )
        .unwrap();
        assert_eq!(out, SystemOutcome::Done);
        assert_eq!(cpu.sysreg(SysReg::Fpscr), 0x55);
    }

    #[test]
    fn privileged_mnemonics_fault_in_user_mode() {
        let (mut cpu, mut area, mut tlb) = fixture();
        cpu.mode = Mode::User;
        for instr in [
            Instr::Vmsr { sysreg: SysReg::Fpscr, rn: Reg(0) },
            Instr::Vmrs { rd: Reg(0), sysreg: SysReg::Fpscr },
            Instr::SetCpsr { rn: Reg(0) },
            Instr::GetCpsr { rd: Reg(0) },
            Instr::Tlbi,
        ] {
            let err = helper_system(&instr, 0x40, &mut cpu, &mut area, &mut tlb);
            assert_eq!(err.unwrap_err(), Fault::Privilege { pc: 0x40 });
        }
    }

    #[test]
    fn svc_is_unprivileged_and_raises() {
        let (mut cpu, mut area, mut tlb) = fixture();
        cpu.mode = Mode::User;
        let out = helper_system(
            &Instr::Svc { vector: 0x20 },
            0x40,
            &mut cpu,
            &mut area,
            &mut tlb,
        )
        .unwrap();
        assert_eq!(out, SystemOutcome::SoftwareInterrupt { vector: 0x20 });
    }

    #[test]
    fn setcpsr_writes_flags_coherently_and_switches_mode() {
        let (mut cpu, mut area, mut tlb) = fixture();
        area.set_gpr(Reg(1), 0b0_1010);
        area.flag_slots_stale = true;
        helper_system(&Instr::SetCpsr { rn: Reg(1) }, 0, &mut cpu, &mut area, &mut tlb)
            .unwrap();
        assert_eq!(cpu.mode, Mode::User);
        assert_eq!(area.ccr_packed(), Ccr(0b1010));
        assert_eq!(area.flags_from_slots(), Ccr(0b1010));
        assert!(!area.flag_slots_stale);
    }

    #[test]
    fn getcpsr_reads_the_separate_slots() {
        let (mut cpu, mut area, mut tlb) = fixture();
        // Slots and packed word deliberately disagree; the helper must
        // report the slots.
        area.store(offsets::flag(Flag::N), 1);
        area.store(offsets::CCR_PACKED, 0);
        helper_system(&Instr::GetCpsr { rd: Reg(5) }, 0, &mut cpu, &mut area, &mut tlb)
            .unwrap();
        assert_eq!(area.gpr(Reg(5)), 0b1_1000);
    }

    #[test]
    fn translate_costs_follow_hit_and_miss() {
        let pt = PageTable::disabled();
        let mut tlb = Tlb::default();
        let mem = PhysMem::default();
        let (gpa, c) = helper_translate(Access::Read, 0x1000, &pt, &mut tlb, &mem).unwrap();
        assert_eq!((gpa, c), (0x1000, cost::MMU_MISS));
        let (_, c) = helper_translate(Access::Read, 0x1004, &pt, &mut tlb, &mem).unwrap();
        assert_eq!(c, cost::MMU_HIT);
        let err = helper_translate(Access::Read, 0x1001, &pt, &mut tlb, &mem);
        assert_eq!(
            err.unwrap_err(),
            Fault::Alignment { gva: 0x1001, access: Access::Read }
        );
    }

    #[test]
    fn tlbi_reports_a_chain_flush() {
        let (mut sys, mut area, mut tlb) = fixture();
        let pt = PageTable::disabled();
        let mem = PhysMem::default();
        tlb_lookup_or_fill(0x2000, Access::Read, &mut tlb, &pt, &mem).unwrap();
        let out =
            helper_system(&Instr::Tlbi, 0, &mut sys, &mut area, &mut tlb).unwrap();
        assert_eq!(out, SystemOutcome::TlbFlushed);
        let refill = tlb_lookup_or_fill(0x2000, Access::Read, &mut tlb, &pt, &mem);
        assert!(matches!(refill.unwrap(), TlbOutcome::Filled(0x2000)));
    }

    #[test]
    fn unmapped_translation_faults() {
        let mut mem = PhysMem::default();
        let pt = PageTable::rooted_at(0x8000);
        mem.write_word(0x8000, 0);
        let mut tlb = Tlb::default();
        let err = helper_translate(Access::Read, 0x4000, &pt, &mut tlb, &mem);
        assert_eq!(
            err.unwrap_err(),
            Fault::Page { gva: 0x4000, access: Access::Read, kind: PageFaultKind::NotMapped }
        );
    }
}
