//! The abstract host machine: its instruction set, interpreter, code cache,
//! and the execution loop that switches between translated code and the
//! runtime.

pub mod isa;
