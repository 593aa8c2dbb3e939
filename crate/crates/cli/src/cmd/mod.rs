pub mod bench;
pub mod eval;
pub mod features;
pub mod gradcheck;
pub mod infer;
pub mod synth;
pub mod train;
