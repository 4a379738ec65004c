//! Core of a desk-scale grid workload management system.

pub mod classad;
pub mod jdl;
pub mod fault;
pub mod fsq;
pub mod util;
pub mod lb;
pub mod broker;
pub mod helper;
pub mod accounting;
pub mod interactive;
pub mod spool;
pub mod wm;
pub mod executor;
pub mod gateway;
pub mod system;
