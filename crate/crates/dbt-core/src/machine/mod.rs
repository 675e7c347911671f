//! Guest machine model: architectural state, physical memory, software MMU,
//! interrupt controller, and the emulator-side state area that translated
//! code synchronizes against.

pub mod area;
pub mod helpers;
pub mod irq;
pub mod mmu;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::guest::{Ccr, Program, Reg, SysReg};
pub use area::EmuStateArea;
pub use irq::InterruptController;
pub use mmu::{PageTable, Tlb};

/// Privilege level. `Privileged` unlocks the system-register instructions;
/// handlers always enter privileged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    User,
    Privileged,
}

impl Mode {
    /// Encoding used in `spsr` and `getcpsr` results, bit 4.
    pub fn bit(self) -> u32 {
        match self {
            Mode::User => 0,
            Mode::Privileged => 1,
        }
    }

    pub fn from_bit(v: u32) -> Mode {
        if v & 1 != 0 {
            Mode::Privileged
        } else {
            Mode::User
        }
    }
}

/// Architectural guest CPU state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuestState {
    pub regs: [u32; 15],
    pub pc: u32,
    pub nzcv: Ccr,
    pub mode: Mode,
    pub sysregs: BTreeMap<SysReg, u32>,
}

impl Default for GuestState {
    fn default() -> Self {
        GuestState {
            regs: [0; 15],
            pc: 0,
            nzcv: Ccr(0),
            mode: Mode::Privileged,
            sysregs: BTreeMap::new(),
        }
    }
}

impl GuestState {
    pub fn reg(&self, r: Reg) -> u32 {
        self.regs[r.index()]
    }

    pub fn set_reg(&mut self, r: Reg, v: u32) {
        self.regs[r.index()] = v;
    }

    pub fn sysreg(&self, sr: SysReg) -> u32 {
        self.sysregs.get(&sr).copied().unwrap_or(0)
    }

    /// Packed flags-and-mode word as `getcpsr` reads it.
    pub fn cpsr(&self) -> u32 {
        u32::from(self.nzcv.0) | (self.mode.bit() << 4)
    }
}

/// Memory access intent, used for permission checks and fault reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Access {
    Read,
    Write,
}

/// Guest-visible exception causes. Each maps to a fixed delivery vector; a
/// workload that wants to survive one installs a handler for that vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Error, Serialize, Deserialize)]
pub enum Fault {
    #[error("page fault ({kind:?}) on {access:?} at {gva:#010x}")]
    Page { gva: u32, access: Access, kind: PageFaultKind },
    #[error("misaligned {access:?} at {gva:#010x}")]
    Alignment { gva: u32, access: Access },
    #[error("privileged instruction at {pc:#010x} in user mode")]
    Privilege { pc: u32 },
    #[error("no instruction at {pc:#010x}")]
    Undefined { pc: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PageFaultKind {
    NotMapped,
    Protection,
}

impl Fault {
    /// Delivery vector for this fault class.
    pub fn vector(self) -> u32 {
        match self {
            Fault::Page { .. } => vectors::PAGE_FAULT,
            Fault::Alignment { .. } => vectors::ALIGNMENT,
            Fault::Privilege { .. } => vectors::PRIVILEGE,
            Fault::Undefined { .. } => vectors::UNDEFINED,
        }
    }

    /// Address the handler returns to. Faults re-execute the faulting
    /// instruction, so the link is the faulting pc itself.
    pub fn link(self, pc: u32) -> u32 {
        let _ = self;
        pc
    }
}

/// Fixed vector numbers for synchronous exceptions. Interrupt schedules and
/// `svc` use small vector numbers by convention; these sit far above them.
pub mod vectors {
    pub const PAGE_FAULT: u32 = 0xf0;
    pub const ALIGNMENT: u32 = 0xf1;
    pub const PRIVILEGE: u32 = 0xf2;
    pub const UNDEFINED: u32 = 0xf3;
}

/// Sparse physical memory, allocated in page-sized chunks on first touch.
#[derive(Debug, Clone, Default)]
pub struct PhysMem {
    pages: BTreeMap<u32, Box<[u8; 4096]>>,
}

impl PhysMem {
    pub fn read_word(&self, gpa: u32) -> u32 {
        let page = gpa >> 12;
        let off = (gpa & 0xfff) as usize;
        match self.pages.get(&page) {
            Some(p) => u32::from_le_bytes([p[off], p[off + 1], p[off + 2], p[off + 3]]),
            None => 0,
        }
    }

    pub fn write_word(&mut self, gpa: u32, value: u32) {
        let page = gpa >> 12;
        let off = (gpa & 0xfff) as usize;
        let p = self.pages.entry(page).or_insert_with(|| Box::new([0; 4096]));
        p[off..off + 4].copy_from_slice(&value.to_le_bytes());
    }

    /// Snapshot of every allocated word that is non-zero, for state compares.
    pub fn nonzero_words(&self) -> BTreeMap<u32, u32> {
        let mut out = BTreeMap::new();
        for (&page, data) in &self.pages {
            for off in (0..4096).step_by(4) {
                let w = u32::from_le_bytes([
                    data[off],
                    data[off + 1],
                    data[off + 2],
                    data[off + 3],
                ]);
                if w != 0 {
                    out.insert((page << 12) | off as u32, w);
                }
            }
        }
        out
    }
}

/// The whole modeled machine: guest architectural state plus the emulator
/// structures (state area, TLB, interrupt controller) that the translated
/// path reads and writes.
#[derive(Debug, Clone)]
pub struct Machine {
    pub program: Program,
    pub cpu: GuestState,
    pub mem: PhysMem,
    pub page_table: PageTable,
    pub tlb: Tlb,
    pub irq: InterruptController,
    pub area: EmuStateArea,
    /// Handler entry point per vector.
    pub handlers: BTreeMap<u32, u32>,
    /// Guest instructions retired so far.
    pub retired: u64,
}

impl Machine {
    pub fn new(program: Program) -> Machine {
        let mut mem = PhysMem::default();
        for (&addr, &word) in &program.data {
            mem.write_word(addr, word);
        }
        let entry = program.entry;
        Machine {
            program,
            cpu: GuestState { pc: entry, ..GuestState::default() },
            mem,
            page_table: PageTable::disabled(),
            tlb: Tlb::new(),
            irq: InterruptController::default(),
            area: EmuStateArea::default(),
            handlers: BTreeMap::new(),
            retired: 0,
        }
    }

    /// Translate and read one data word on the architectural path (no TLB).
    pub fn load(&self, gva: u32) -> Result<u32, Fault> {
        if gva % 4 != 0 {
            return Err(Fault::Alignment { gva, access: Access::Read });
        }
        let gpa = mmu::page_walk(gva, Access::Read, &self.page_table, &self.mem)?;
        Ok(self.mem.read_word(gpa))
    }

    /// Translate and write one data word on the architectural path (no TLB).
    pub fn store(&mut self, gva: u32, value: u32) -> Result<(), Fault> {
        if gva % 4 != 0 {
            return Err(Fault::Alignment { gva, access: Access::Write });
        }
        let gpa = mmu::page_walk(gva, Access::Write, &self.page_table, &self.mem)?;
        self.mem.write_word(gpa, value);
        Ok(())
    }

    /// Deliver an interrupt or exception: capture return and status into the
    /// banked sysregs, switch privileged, and jump to the configured handler.
    /// `link` is the address the handler should come back to.
    pub fn deliver(&mut self, vector: u32, link: u32) -> Result<(), DeliveryError> {
        let entry = *self
            .handlers
            .get(&vector)
            .ok_or(DeliveryError::UnconfiguredVector { vector })?;
        self.cpu.sysregs.insert(SysReg::Elr, link);
        self.cpu
            .sysregs
            .insert(SysReg::Spsr, u32::from(self.cpu.nzcv.0) | (self.cpu.mode.bit() << 4));
        self.cpu.mode = Mode::Privileged;
        self.cpu.pc = entry;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum DeliveryError {
    #[error("no handler configured for vector {vector:#x}")]
    UnconfiguredVector { vector: u32 },
}
