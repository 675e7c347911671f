//! A desk-scale system-level dynamic binary translator.
//!
//! A small ARM-flavored guest ISA is executed two ways: a reference
//! interpreter that is the ground truth, and a translator that compiles guest
//! basic blocks into an invented host ISA and runs them out of a code cache.
//! Guest state lives in host registers while translated code runs, so every
//! switch between translated code and the runtime (helper calls, software MMU
//! walks, interrupt checks, block boundaries) has to upload or download CPU
//! state between host registers and the emulator's per-register memory area.
//! Those upload/download sequences are modeled explicitly as sync operations,
//! and a pass pipeline shrinks, merges, eliminates, and reschedules them.
//!
//! Instrumentation counts every executed host instruction by tag so the cost
//! of state coordination can be measured per workload and per optimization
//! level against the memory-resident baseline translator.

pub mod guest;
pub mod host;
pub mod interp;
pub mod machine;
pub mod opt;
pub mod translate;
