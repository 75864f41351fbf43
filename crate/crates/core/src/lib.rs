//! Step-level credit assignment for reinforcement learning with verifiable
//! rewards.
//!
//! The crate covers the whole pipeline on a synthetic modular-arithmetic
//! task: step segmentation of sampled trajectories, training-free probes of
//! confidence and correctness after every step, the Step Potential built
//! from them, over-checking and right-to-wrong diagnostics, and advantage
//! estimators (GRPO, DAPO, RF-B and the potential-aware estimator SPAE)
//! driving a clipped policy-gradient trainer over a tabular softmax policy.
//!
//! ## Examples
//!
//! Each capability has a runnable example:
//!
//! - **`segmentation`** - split an output into steps and map tokens to steps
//! - **`probing`** - probe every step of a sampled output and print Φ
//! - **`potential`** - phases, saturation counts and right-to-wrong on hand-made series
//! - **`advantages`** - group, RF-B and SPAE advantages for one rollout group, dumped as JSONL
//! - **`training`** - train RF-B and SPAE side by side and compare behavior
//! - **`truncation`** - standard versus probe-truncated decoding
//! - **`diagnostics`** - the CSV reports written by `spae diagnose`
//!
//! ```bash
//! cargo run --release -p spae --example probing
//! cargo run --release -p spae --example training -- 300 0
//! ```

pub mod advantage;
pub mod cli;
pub mod diagnostics;
pub mod env;
pub mod error;
pub mod model;
pub mod policy;
pub mod potential;
pub mod probe;
pub mod records;
pub mod seeds;
pub mod trainer;

pub use error::{Error, Result};
