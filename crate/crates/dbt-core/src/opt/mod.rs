//! Optimization passes over marked blocks.
//!
//! Each pass is a rewrite of the marked form behind the [`BlockPass`]
//! trait, registered by name so configurations and the command line can
//! select them individually. [`registry`] lists them in application order;
//! [`run_pipeline`] applies the ones enabled at a requested level. The
//! order encodes priority where passes compete for the same operation:
//! eliminations run before reduction, so an operation that can be removed
//! outright is never merely shortened, and scheduling runs last so it sees
//! which operations actually survived.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::translate::block::HostBlock;

mod eliminate;
mod inter_tb;
mod merge;
mod reduce;
mod sched;

pub use inter_tb::entry_defines_flags_first;

/// How much of the optimization stack is enabled. Levels are cumulative:
/// each one includes everything below it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OptLevel {
    /// The plain coordinated translation, no rewriting.
    Base,
    /// Shorten surviving flag operations to their packed form.
    Reduction,
    /// Remove operations that are redundant within or between blocks.
    Elimination,
    /// Move work so that fewer operations are needed at all.
    Scheduling,
}

impl OptLevel {
    pub const ALL: [OptLevel; 4] =
        [OptLevel::Base, OptLevel::Reduction, OptLevel::Elimination, OptLevel::Scheduling];

    pub fn name(self) -> &'static str {
        match self {
            OptLevel::Base => "base",
            OptLevel::Reduction => "reduction",
            OptLevel::Elimination => "elimination",
            OptLevel::Scheduling => "scheduling",
        }
    }
}

impl fmt::Display for OptLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<OptLevel, String> {
        OptLevel::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| format!("unknown optimization level {s:?} (base, reduction, elimination, scheduling)"))
    }
}

/// What one pass did to one block.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PassReport {
    /// Indices of the groups the pass modified, moved or deleted items in.
    pub touched_groups: BTreeSet<usize>,
    /// Coordination markers deleted outright.
    pub removed_syncs: u32,
    /// Guards rewritten to a cheaper form.
    pub converted_guards: u32,
    /// Markers rewritten in place, such as a mode change or a grown
    /// component set.
    pub rewritten_syncs: u32,
}

impl PassReport {
    pub fn changed(&self) -> bool {
        !self.touched_groups.is_empty()
    }

    fn touch(&mut self, group: usize) {
        self.touched_groups.insert(group);
    }
}

/// One rewrite of the marked form.
pub trait BlockPass {
    /// The name the pass is registered and selected under.
    fn name(&self) -> &'static str;

    /// The lowest level at which the pass is enabled.
    fn level(&self) -> OptLevel;

    /// Apply the rewrite. Must be idempotent: running twice leaves the
    /// block exactly as after the first run.
    fn run(&self, block: &mut HostBlock) -> PassReport;
}

/// All passes in application order.
pub fn registry() -> Vec<Box<dyn BlockPass>> {
    vec![
        Box::new(eliminate::EliminateRestores),
        Box::new(merge::MergeMemoryBrackets),
        Box::new(inter_tb::InterBlockElimination),
        Box::new(reduce::ReduceToPacked),
        Box::new(sched::DelayByUse),
        Box::new(sched::RelocateCheck),
    ]
}

/// Look a pass up by its registered name.
pub fn pass_named(name: &str) -> Option<Box<dyn BlockPass>> {
    registry().into_iter().find(|p| p.name() == name)
}

/// Apply every pass enabled at `level`, in registry order. Returns the
/// per-pass reports in the order the passes ran.
pub fn run_pipeline(block: &mut HostBlock, level: OptLevel) -> Vec<(&'static str, PassReport)> {
    registry()
        .into_iter()
        .filter(|pass| pass.level() <= level)
        .map(|pass| (pass.name(), pass.run(block)))
        .collect()
}
