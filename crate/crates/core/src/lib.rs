pub mod bc;
pub mod classifier;
pub mod data;
pub mod filter;
pub mod negatives;
pub mod nn;
pub mod synth;
