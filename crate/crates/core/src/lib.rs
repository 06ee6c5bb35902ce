//! Temporal multiscale simulation of stent-edge restenosis: pulsatile flow
//! on a frozen deformed vessel, cycle-averaged wall growth and the macro
//! driver coupling the two.

#[cfg(feature = "cli")]
pub mod cli;
pub mod config;
pub mod geometry;
pub mod grid;
pub mod growth;
pub mod microflow;
pub mod multiscale;
pub mod oracle;
pub mod periodic;
pub mod report;
