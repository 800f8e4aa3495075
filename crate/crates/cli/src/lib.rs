//! Command-line front end for the `lvcert` toolkit: system files, report
//! files and the subcommands behind the `lvcert` binary.

pub mod commands;
pub mod report;
pub mod system;
