//! Scenario files, output artifacts and the command implementations behind
//! the `mcdta` binary.

pub mod artifacts;
pub mod commands;
pub mod lpdump;
pub mod plot;
pub mod scenario;
