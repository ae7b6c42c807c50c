//! Phasor-domain simulation of three-phase microgrids joined by a
//! back-to-back converter.

pub mod btb;
pub mod devices;
pub mod engine;
pub mod netmodel;
pub mod phase;
pub mod scenario;

/// System power base, VA.
pub const SYSTEM_BASE_VA: f64 = 1.0e6;
