pub mod align;
pub mod captions;
pub mod config;
pub mod corpus;
pub mod dsp;
pub mod harness;
pub mod nn;
pub mod parallel;
pub mod prior;
pub mod seed;
pub mod synth;

pub use harness::HarnessError as Error;
