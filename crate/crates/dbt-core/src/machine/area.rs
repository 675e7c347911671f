//! The emulator-side state area: the memory block where the runtime keeps
//! its copy of the guest CPU state.
//!
//! Translated code addresses the area with base-plus-offset loads and stores
//! against a dedicated base register, one 32-bit slot per item. Each
//! condition flag has its own slot because the runtime consumes flags
//! one-by-one, while translated code keeps all four packed in the host flags
//! register; the extra `ccr_packed` slot lets a save dump the packed word in
//! one store and defer the per-flag parse until someone actually needs it.

use serde::{Deserialize, Serialize};

use crate::guest::{Ccr, Flag, Reg};

/// Byte offsets of the slots, as seen by translated code.
pub mod offsets {
    /// `r0` through `r14`, 4 bytes apart.
    pub const fn gpr(index: usize) -> i32 {
        (index * 4) as i32
    }
    pub const PC: i32 = 60;
    pub const FLAG_N: i32 = 64;
    pub const FLAG_Z: i32 = 68;
    pub const FLAG_C: i32 = 72;
    pub const FLAG_V: i32 = 76;
    pub const CCR_PACKED: i32 = 80;
    pub const IRQ_PENDING: i32 = 84;

    pub const fn flag(f: crate::guest::Flag) -> i32 {
        match f {
            crate::guest::Flag::N => FLAG_N,
            crate::guest::Flag::Z => FLAG_Z,
            crate::guest::Flag::C => FLAG_C,
            crate::guest::Flag::V => FLAG_V,
        }
    }
}

const WORDS: usize = 22;

/// The state area itself plus the freshness bit the runtime keeps about the
/// per-flag slots. `flag_slots_stale` is runtime bookkeeping, not memory
/// translated code can see: it records that the last flag save was packed,
/// so the per-flag slots lag behind `ccr_packed` until an unpack runs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmuStateArea {
    words: [u32; WORDS],
    pub flag_slots_stale: bool,
}

impl Default for EmuStateArea {
    fn default() -> Self {
        EmuStateArea { words: [0; WORDS], flag_slots_stale: false }
    }
}

impl EmuStateArea {
    /// Raw slot access by byte offset, the path host loads and stores take.
    pub fn load(&self, offset: i32) -> u32 {
        self.words[Self::index(offset)]
    }

    pub fn store(&mut self, offset: i32, value: u32) {
        self.words[Self::index(offset)] = value;
    }

    fn index(offset: i32) -> usize {
        assert!(
            offset >= 0 && offset % 4 == 0 && (offset as usize) < WORDS * 4,
            "state area offset {offset} out of range"
        );
        offset as usize / 4
    }

    pub fn gpr(&self, r: Reg) -> u32 {
        self.load(offsets::gpr(r.index()))
    }

    pub fn set_gpr(&mut self, r: Reg, value: u32) {
        self.store(offsets::gpr(r.index()), value);
    }

    pub fn pc(&self) -> u32 {
        self.load(offsets::PC)
    }

    pub fn set_pc(&mut self, value: u32) {
        self.store(offsets::PC, value);
    }

    pub fn flag(&self, f: Flag) -> bool {
        self.load(offsets::flag(f)) != 0
    }

    pub fn ccr_packed(&self) -> Ccr {
        Ccr((self.load(offsets::CCR_PACKED) & 0xf) as u8)
    }

    /// Flags as the runtime sees them: straight from the per-flag slots.
    /// Callers must unpack first if the slots are stale.
    pub fn flags_from_slots(&self) -> Ccr {
        Ccr::from_bits(
            self.flag(Flag::N),
            self.flag(Flag::Z),
            self.flag(Flag::C),
            self.flag(Flag::V),
        )
    }

    /// Runtime-side coherent flag write: fills the per-flag slots and the
    /// packed slot together, leaving nothing stale. Helpers that define
    /// flags use this, so translated code may read either representation
    /// afterwards.
    pub fn write_flags_coherent(&mut self, ccr: Ccr) {
        for f in Flag::ALL {
            self.store(offsets::flag(f), u32::from(ccr.get(f)));
        }
        self.store(offsets::CCR_PACKED, u32::from(ccr.0));
        self.flag_slots_stale = false;
    }

    /// Spread `ccr_packed` into the per-flag slots. The deferred half of a
    /// packed save, run by the runtime when an interrupt actually fires.
    pub fn unpack_flags(&mut self) {
        let ccr = self.ccr_packed();
        for f in Flag::ALL {
            self.store(offsets::flag(f), u32::from(ccr.get(f)));
        }
        self.flag_slots_stale = false;
    }

    pub fn irq_pending(&self) -> bool {
        self.load(offsets::IRQ_PENDING) != 0
    }

    pub fn set_irq_pending(&mut self, pending: bool) {
        self.store(offsets::IRQ_PENDING, u32::from(pending));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slots_do_not_alias() {
        let mut area = EmuStateArea::default();
        for i in 0..15 {
            area.set_gpr(Reg(i), 0x100 + u32::from(i));
        }
        area.set_pc(0xabcd);
        area.store(offsets::CCR_PACKED, 0xf);
        for i in 0..15 {
            assert_eq!(area.gpr(Reg(i)), 0x100 + u32::from(i));
        }
        assert_eq!(area.pc(), 0xabcd);
        assert_eq!(area.ccr_packed(), Ccr(0xf));
    }

    #[test]
    fn coherent_write_fills_both_representations() {
        let mut area = EmuStateArea::default();
        area.flag_slots_stale = true;
        let ccr = Ccr::from_bits(true, false, true, true);
        area.write_flags_coherent(ccr);
        assert_eq!(area.flags_from_slots(), ccr);
        assert_eq!(area.ccr_packed(), ccr);
        assert!(!area.flag_slots_stale);
    }

    #[test]
    fn unpack_spreads_the_packed_word() {
        let mut area = EmuStateArea::default();
        // A packed save stored only the packed word; per-flag slots stale.
        area.store(offsets::CCR_PACKED, 0b1010);
        area.store(offsets::FLAG_N, 0);
        area.flag_slots_stale = true;
        area.unpack_flags();
        assert!(area.flag(Flag::N));
        assert!(!area.flag(Flag::Z));
        assert!(area.flag(Flag::C));
        assert!(!area.flag(Flag::V));
        assert!(!area.flag_slots_stale);
    }

    #[test]
    #[should_panic(expected = "out of range")]
    fn out_of_range_offset_is_rejected() {
        EmuStateArea::default().load(1024);
    }
}
