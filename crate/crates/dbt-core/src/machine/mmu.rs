//! Two-level page table and the direct-mapped software TLB in front of it.
//!
//! A virtual address splits into 10 bits of level-1 index, 10 bits of
//! level-2 index, and a 12-bit page offset. Both table levels live in guest
//! physical memory as 1024-entry arrays of 32-bit descriptors, so one walk
//! costs exactly two memory reads. Descriptor layout:
//!
//! ```text
//! bits 31..12   frame number (level 1: frame of the level-2 table)
//! bit  1        writable (leaf only)
//! bit  0        valid
//! ```

use serde::{Deserialize, Serialize};

use super::{Access, Fault, PageFaultKind, PhysMem};

pub const PAGE_SHIFT: u32 = 12;
pub const PAGE_SIZE: u32 = 1 << PAGE_SHIFT;

const VALID: u32 = 1 << 0;
const WRITABLE: u32 = 1 << 1;

/// Pack a leaf descriptor.
pub fn leaf_entry(frame: u32, writable: bool) -> u32 {
    (frame << PAGE_SHIFT) | if writable { WRITABLE | VALID } else { VALID }
}

/// Pack a level-1 descriptor pointing at a level-2 table frame.
pub fn table_entry(frame: u32) -> u32 {
    (frame << PAGE_SHIFT) | VALID
}

/// Root pointer of the active page table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageTable {
    pub root: u32,
    /// When false every address translates to itself. Covers workloads that
    /// run without paging configured.
    pub enabled: bool,
}

impl PageTable {
    pub fn disabled() -> PageTable {
        PageTable { root: 0, enabled: false }
    }

    pub fn rooted_at(root: u32) -> PageTable {
        PageTable { root, enabled: true }
    }
}

/// Walk the table for one access. Exactly two descriptor reads; an invalid
/// descriptor at either level faults, and a write to a read-only leaf faults
/// with `Protection`.
pub fn page_walk(gva: u32, access: Access, pt: &PageTable, mem: &PhysMem) -> Result<u32, Fault> {
    if !pt.enabled {
        return Ok(gva);
    }
    let fault = |kind| Fault::Page { gva, access, kind };
    let l1_index = gva >> 22;
    let l1 = mem.read_word(pt.root + l1_index * 4);
    if l1 & VALID == 0 {
        return Err(fault(PageFaultKind::NotMapped));
    }
    let l2_base = l1 >> PAGE_SHIFT << PAGE_SHIFT;
    let l2_index = (gva >> PAGE_SHIFT) & 0x3ff;
    let l2 = mem.read_word(l2_base + l2_index * 4);
    if l2 & VALID == 0 {
        return Err(fault(PageFaultKind::NotMapped));
    }
    if access == Access::Write && l2 & WRITABLE == 0 {
        return Err(fault(PageFaultKind::Protection));
    }
    Ok((l2 >> PAGE_SHIFT << PAGE_SHIFT) | (gva & (PAGE_SIZE - 1)))
}

pub const TLB_ENTRIES: usize = 64;

#[derive(Debug, Clone, Copy, Default)]
struct TlbEntry {
    valid: bool,
    gva_page: u32,
    frame: u32,
    writable: bool,
}

/// Direct-mapped translation cache indexed by the low bits of the page
/// number. Transparent: a hit always agrees with a fresh walk because every
/// table update in this model is followed by `tlbi`.
#[derive(Debug, Clone)]
pub struct Tlb {
    entries: [TlbEntry; TLB_ENTRIES],
    pub hits: u64,
    pub misses: u64,
}

impl Default for Tlb {
    fn default() -> Self {
        Tlb::new()
    }
}

impl Tlb {
    pub fn new() -> Tlb {
        Tlb { entries: [TlbEntry::default(); TLB_ENTRIES], hits: 0, misses: 0 }
    }

    pub fn invalidate_all(&mut self) {
        self.entries = [TlbEntry::default(); TLB_ENTRIES];
    }
}

/// Result of a translation through the TLB, distinguishing hit from fill so
/// callers can charge the right cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TlbOutcome {
    Hit(u32),
    Filled(u32),
}

impl TlbOutcome {
    pub fn gpa(self) -> u32 {
        match self {
            TlbOutcome::Hit(g) | TlbOutcome::Filled(g) => g,
        }
    }
}

/// Translate via the TLB, walking and filling on a miss. Faulting accesses
/// never install an entry. A write hit on a read-only entry is a protection
/// fault reported without consulting the table again.
pub fn tlb_lookup_or_fill(
    gva: u32,
    access: Access,
    tlb: &mut Tlb,
    pt: &PageTable,
    mem: &PhysMem,
) -> Result<TlbOutcome, Fault> {
    let page = gva >> PAGE_SHIFT;
    let index = (page as usize) % TLB_ENTRIES;
    let entry = &tlb.entries[index];
    if entry.valid && entry.gva_page == page {
        if access == Access::Write && !entry.writable {
            return Err(Fault::Page { gva, access, kind: PageFaultKind::Protection });
        }
        tlb.hits += 1;
        return Ok(TlbOutcome::Hit((entry.frame << PAGE_SHIFT) | (gva & (PAGE_SIZE - 1))));
    }
    tlb.misses += 1;
    // Probe writability with a separate read-walk so a read access can cache
    // the permission bit without tripping a protection fault.
    let gpa = page_walk(gva, access, pt, mem)?;
    let writable = page_walk(gva, Access::Write, pt, mem).is_ok();
    tlb.entries[index] =
        TlbEntry { valid: true, gva_page: page, frame: gpa >> PAGE_SHIFT, writable };
    Ok(TlbOutcome::Filled(gpa))
}

/// Helper for building page tables in physical memory. Level-2 tables are
/// allocated from a bump pointer in frame units.
pub struct PageTableBuilder {
    root: u32,
    next_table: u32,
}

impl PageTableBuilder {
    /// Lay the root at `base` (must be page-aligned); level-2 tables follow.
    pub fn new(base: u32) -> PageTableBuilder {
        assert_eq!(base % PAGE_SIZE, 0);
        PageTableBuilder { root: base, next_table: base + PAGE_SIZE }
    }

    pub fn map(&mut self, mem: &mut PhysMem, gva_page: u32, frame: u32, writable: bool) {
        let l1_index = gva_page >> 10;
        let l1_addr = self.root + l1_index * 4;
        let mut l1 = mem.read_word(l1_addr);
        if l1 & VALID == 0 {
            l1 = table_entry(self.next_table >> PAGE_SHIFT);
            mem.write_word(l1_addr, l1);
            self.next_table += PAGE_SIZE;
        }
        let l2_base = l1 >> PAGE_SHIFT << PAGE_SHIFT;
        mem.write_word(l2_base + (gva_page & 0x3ff) * 4, leaf_entry(frame, writable));
    }

    pub fn finish(self) -> PageTable {
        PageTable::rooted_at(self.root)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn build(mappings: &[(u32, u32, bool)]) -> (PageTable, PhysMem) {
        let mut mem = PhysMem::default();
        let mut builder = PageTableBuilder::new(0x0100_0000);
        for &(page, frame, writable) in mappings {
            builder.map(&mut mem, page, frame, writable);
        }
        (builder.finish(), mem)
    }

    #[test]
    fn identity_mapping_translates_to_itself() {
        let (pt, mem) = build(&[(0x1, 0x1, true)]);
        assert_eq!(page_walk(0x1000, Access::Read, &pt, &mem), Ok(0x1000));
    }

    #[test]
    fn unmapped_address_faults() {
        let (pt, mem) = build(&[(0x1, 0x1, true)]);
        assert_eq!(
            page_walk(0xdead_0000, Access::Read, &pt, &mem),
            Err(Fault::Page {
                gva: 0xdead_0000,
                access: Access::Read,
                kind: PageFaultKind::NotMapped
            })
        );
    }

    // Expected value derived by hand: gva 0x40010 has L1 index 0, L2 index
    // 0x40, offset 0x10; mapping page 0x40 to frame 7 must produce
    // 7 * 0x1000 + 0x10 = 0x7010.
    #[test]
    fn hand_walked_two_level_mapping() {
        let (pt, mem) = build(&[(0x40, 0x7, true)]);
        assert_eq!(page_walk(0x40010, Access::Read, &pt, &mem), Ok(0x7010));

        // The walk reads exactly the two descriptors the manual walk visits.
        let l1 = mem.read_word(0x0100_0000);
        assert_eq!(l1 & 1, 1);
        let l2_base = l1 >> 12 << 12;
        let l2 = mem.read_word(l2_base + 0x40 * 4);
        assert_eq!(l2 >> 12, 0x7);
    }

    #[test]
    fn write_to_readonly_page_is_protection_fault() {
        let (pt, mem) = build(&[(0x2, 0x9, false)]);
        assert_eq!(page_walk(0x2000, Access::Read, &pt, &mem), Ok(0x9000));
        assert_eq!(
            page_walk(0x2004, Access::Write, &pt, &mem),
            Err(Fault::Page {
                gva: 0x2004,
                access: Access::Write,
                kind: PageFaultKind::Protection
            })
        );
    }

    #[test]
    fn tlb_hit_matches_walk_and_invalidate_forces_refill() {
        let (pt, mem) = build(&[(0x40, 0x7, true)]);
        let mut tlb = Tlb::new();
        let first = tlb_lookup_or_fill(0x40010, Access::Read, &mut tlb, &pt, &mem).unwrap();
        assert_eq!(first, TlbOutcome::Filled(0x7010));
        let second = tlb_lookup_or_fill(0x40014, Access::Read, &mut tlb, &pt, &mem).unwrap();
        assert_eq!(second, TlbOutcome::Hit(0x7014));
        assert_eq!((tlb.hits, tlb.misses), (1, 1));

        tlb.invalidate_all();
        let third = tlb_lookup_or_fill(0x40010, Access::Read, &mut tlb, &pt, &mem).unwrap();
        assert_eq!(third, TlbOutcome::Filled(0x7010));
    }

    #[test]
    fn faulting_lookup_never_fills() {
        let (pt, mem) = build(&[(0x2, 0x9, false)]);
        let mut tlb = Tlb::new();
        assert!(tlb_lookup_or_fill(0x3000, Access::Read, &mut tlb, &pt, &mem).is_err());
        // Same index, still a miss afterwards.
        assert!(matches!(
            tlb_lookup_or_fill(0x2000, Access::Read, &mut tlb, &pt, &mem),
            Ok(TlbOutcome::Filled(_))
        ));
        // Write through a cached read-only entry faults on the hit path.
        assert!(matches!(
            tlb_lookup_or_fill(0x2000, Access::Write, &mut tlb, &pt, &mem),
            Err(Fault::Page { kind: PageFaultKind::Protection, .. })
        ));
    }

    // The TLB must be invisible: any mix of lookups over random addresses
    // gives exactly the walk results, fault for fault.
    #[test]
    fn randomized_stream_is_transparent() {
        let (pt, mem) = build(&[
            (0x10, 0x21, true),
            (0x11, 0x22, false),
            (0x50, 0x23, true),
            (0x4010, 0x24, true),
        ]);
        let mut tlb = Tlb::new();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x715b);
        for _ in 0..4000 {
            let page = [0x10u32, 0x11, 0x50, 0x4010, 0x9999][rng.gen_range(0..5)];
            let gva = (page << 12) | (rng.gen_range(0..1024u32) * 4);
            let access = if rng.gen_bool(0.3) { Access::Write } else { Access::Read };
            let walked = page_walk(gva, access, &pt, &mem);
            let cached = tlb_lookup_or_fill(gva, access, &mut tlb, &pt, &mem);
            assert_eq!(cached.map(TlbOutcome::gpa), walked, "diverged at {gva:#x} {access:?}");
        }
    }
}
