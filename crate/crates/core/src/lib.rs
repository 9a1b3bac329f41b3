//! SensorDrop: a desk-scale simulator of RL-driven sensor selection at an
//! edge aggregator.
//!
//! An advantage actor-critic controller learns which of N distributed sensors
//! should forward features to a cloud classifier, trading communication
//! overhead against classification accuracy on a synthetic multi-view
//! dataset. The crate is self-contained: it carries its own tiny neural
//! network engine (with finite-difference gradient verification), the
//! synthetic dataset generator, the environment and agent, and an experiment
//! harness with baselines and a reward-parameter sweep.

pub mod agent;
pub mod checkpoint;
pub mod data;
pub mod env;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod layers;
pub mod network;
pub mod optim;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
