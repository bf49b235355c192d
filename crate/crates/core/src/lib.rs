//! Ensemble free-energy workflows on a simulated pilot.
//!
//! Protocols compile into pipelines of stages of tasks, which a virtual-clock
//! engine executes with generation scheduling, failure injection and overhead
//! accounting. Adaptive λ-window quadrature and adaptive termination run on top
//! of a synthetic ∂U/∂λ kernel whose ground truth is known.

pub mod lambda;
pub mod protocol;
pub mod quadrature;
pub mod stats;
pub mod synth;
pub mod systems;

pub use lambda::{Lambda, LambdaError};
pub mod engine;
pub mod adaptive;
pub mod campaign;
