pub mod ablate;
pub mod common;
pub mod eval;
pub mod predict;
pub mod synth;
pub mod train;
