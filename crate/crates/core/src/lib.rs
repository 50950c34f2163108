//! Additive neural networks built on the ef-operator.
//!
//! The ef-operator replaces the inner product `Σ x_i y_i` with
//! `Σ sign(x_i y_i) (|x_i| + |y_i|)`, which needs no multiplications. An
//! additive layer computes `f(a ⊙ (x ◇ W) + b)`, so its only
//! multiplications are the `M` scalings by `a`, against the `d·M` of a
//! classic affine layer.
//!
//! Modules:
//! - [`tensor`]: dense containers and the seeded generator.
//! - [`ef`]: the operator itself.
//! - [`layers`]: additive/classic dense and conv layers, pooling, losses.
//! - [`network`]: layer stacks, forward/backward.
//! - [`training`]: SGD, evaluation and the experiment builders.
//! - [`constructions`]: exact sign networks, ReLU conversion, superpositions.
//! - [`ops`]: operation accounting.
//! - [`data`]: IDX loading, checkpoints, metrics logs.

pub mod cli;
pub mod constructions;
pub mod data;
pub mod ef;
pub mod error;
pub mod layers;
pub mod network;
pub mod ops;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{Matrix, Rng, Vector};
