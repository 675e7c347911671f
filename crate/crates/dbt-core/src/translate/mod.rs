//! Guest-to-host translation: block scanning, the rule engine, code
//! emission for both translation pipelines, and the lowering of state
//! coordination markers into host instruction sequences.

pub mod block;
pub mod emit;
pub mod lower;
pub mod rules;
pub mod scan;
