//! File formats, scenario parsing and the command-line front end over
//! `localcoin-core`.

pub mod cli;
pub mod files;
pub mod inspect;
pub mod scenario;

pub use scenario::{parse_scenario, ParseError};
