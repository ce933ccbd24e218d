pub mod exec;
pub mod harness;
pub mod io;
pub mod synthgen;
