//! Lévy approximation laboratory for impulsive processes driven by a
//! semi-Markov switching environment.
//!
//! The crate builds the switching model and its potential, the impulse
//! family and its characteristic expansions, simulates the pre-limit process
//! and its Lévy limit, and compares the two.

pub mod error;
pub mod harness;
pub mod impulse;
pub mod limit_model;
pub mod limit_sim;
pub mod linalg;
pub mod prelimit;
pub mod rng;
pub mod scenario;
pub mod stats;
pub mod switching;

pub use error::{LevyxError, Result};
pub use impulse::{BigLaw, CoefFn, Convention, ImpulseComponents, ImpulseFamily, PerState, SmallLaw};
pub use prelimit::{simulate_prelimit, GridPath, PrelimitPath, SimOptions};
pub use rng::{path_stream, StreamDomain};
pub use switching::{potential, stationary, PotentialOperator, StationaryPair, SwitchingModel};
