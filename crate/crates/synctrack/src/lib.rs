//! Std companion of `synctrack-core`: case and scenario documents, CSV and
//! JSON exports, the contingency sweep harness and the command line.

pub mod cli;
pub mod export;
pub mod io;
pub mod sweep;
