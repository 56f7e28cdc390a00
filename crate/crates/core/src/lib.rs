//! Polynomial optimization over non-commuting (operator) variables.

pub mod algebra;
pub mod certify;
pub mod format;
pub mod problems;
pub mod relaxation;
pub mod report;
pub mod sdp;
pub mod sdpa;
