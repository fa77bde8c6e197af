//! Library surface of the solver CLI: demo model construction and
//! output formatting, kept callable so integration tests can drive the
//! same code paths the binary does.

pub mod demos;
pub mod output;
pub mod tables;
