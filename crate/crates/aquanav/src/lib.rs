//! Aquatic-navigation training, verification and runtime shielding toolkit.
//!
//! The pipeline: train a feedforward policy on a 2D aquatic navigation task
//! (optionally enhanced with a mutation/crossover population phase), verify the
//! trained network against decision properties with parallel interval analysis,
//! and shield the deployed policy using the verifier's counterexample regions.

pub mod bounds;
pub mod buffer;
pub mod cli;
pub mod dqn;
pub mod env;
pub mod error;
pub mod evo;
pub mod grad;
pub mod interval;
pub mod nn;
pub mod ppo;
pub mod property;
pub mod shield;
pub mod train;
pub mod verify;

pub use cli::cli_main;
pub use error::{Error, Result};
