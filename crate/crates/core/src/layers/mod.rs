//! Forward and backward passes for additive (ef) and classic layers.

mod activation;
mod conv;
mod dense;
mod loss;
mod pool;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Matrix, Rng, Vector};

pub use activation::Activation;
pub use conv::{AdditiveConv, ClassicConv, ConvCache, ConvGeometry};
pub use dense::{AdditiveDense, ClassicDense, DenseCache};
pub use loss::{mse_loss, softmax_cross_entropy};
pub use pool::{MaxPool2, PoolCache};

/// Weight-gradient rule for additive layers.
///
/// The exact partial of `sign(x)*w + sign(w)*x` with respect to `w` is
/// `sign(x)` away from zero, which is what `SignConsistent` uses.
/// `PaperLiteral` uses `x` instead, the rule printed alongside the original
/// method; it is not the derivative of the forward map but it is the
/// default for training runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradMode {
    #[default]
    PaperLiteral,
    SignConsistent,
}

impl GradMode {
    pub fn name(self) -> &'static str {
        match self {
            GradMode::PaperLiteral => "paper-literal",
            GradMode::SignConsistent => "sign-consistent",
        }
    }
}

impl fmt::Display for GradMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GradMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "paper-literal" | "literal" => Ok(GradMode::PaperLiteral),
            "sign-consistent" | "sign" => Ok(GradMode::SignConsistent),
            other => Err(Error::param(format!("unknown gradient mode `{other}`"))),
        }
    }
}

/// Parameter gradients of one layer. `a` is empty for classic layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub w: Matrix,
    pub a: Vector,
    pub b: Vector,
}

impl ParamGrads {
    pub(crate) fn zeros(rows: usize, cols: usize, scaled: bool) -> Self {
        ParamGrads {
            w: Matrix::zeros(rows, cols),
            a: Vector::zeros(if scaled { cols } else { 0 }),
            b: Vector::zeros(cols),
        }
    }

    pub(crate) fn clear(&mut self) {
        self.w.as_mut_slice().fill(0.0);
        self.a.as_mut_slice().fill(0.0);
        self.b.as_mut_slice().fill(0.0);
    }

    pub(crate) fn scale(&mut self, k: f64) {
        self.w.as_mut_slice().iter_mut().for_each(|v| *v *= k);
        self.a.as_mut_slice().iter_mut().for_each(|v| *v *= k);
        self.b.as_mut_slice().iter_mut().for_each(|v| *v *= k);
    }
}

/// Uniform init half-width `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_range(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

pub(crate) fn glorot(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let r = glorot_range(rows, cols);
    crate::tensor::uniform_init(rows, cols, -r, r, rng).expect("non-empty range")
}

pub(crate) fn check_params(w: &Matrix, a: Option<&Vector>, b: &Vector) -> Result<()> {
    if b.len() != w.cols() {
        return Err(Error::shape(format!(
            "bias of length {} for {} outputs",
            b.len(),
            w.cols()
        )));
    }
    if let Some(a) = a {
        if a.len() != w.cols() {
            return Err(Error::shape(format!(
                "scale vector of length {} for {} outputs",
                a.len(),
                w.cols()
            )));
        }
        if !a.is_finite() {
            return Err(Error::param("non-finite scale coefficients"));
        }
    }
    if !w.is_finite() || !b.is_finite() {
        return Err(Error::param("non-finite layer parameters"));
    }
    Ok(())
}
