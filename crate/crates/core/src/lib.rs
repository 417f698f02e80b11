//! Channel models, metrics and the robust alternating-optimization design
//! for a STAR-RIS assisted near-field ISAC system.

pub mod config;
pub mod geometry;
pub mod metrics;
pub mod robust;
pub mod active;
pub mod passive;
pub mod ao;

pub use nfstar_conic::{CMatrix, CVector, C64};
