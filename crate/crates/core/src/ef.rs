//! The ef-operator.
//!
//! For reals `x` and `y` the ef "product" is `sign(x*y) * (|x| + |y|)`: the
//! magnitude is the sum of magnitudes and the sign is the sign of the
//! ordinary product. Summed over coordinates it gives a vector product that
//! induces `2 * ||x||_1` on the diagonal. Nothing here multiplies two
//! floats; applying a sign is a conditional negation.
//!
//! `sign(0) = 0` throughout, so a zero coordinate contributes nothing.

use crate::error::{Error, Result};
use crate::ops::{self, OpCounter};
use crate::tensor::{Matrix, Vector};

/// `+1`, `-1` or `0`.
#[inline]
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `v` with the sign `s` applied, where `s` is `-1`, `0` or `+1`.
#[inline]
pub fn apply_sign(s: f64, v: f64) -> f64 {
    if s > 0.0 {
        v
    } else if s < 0.0 {
        -v
    } else {
        0.0
    }
}

#[inline(always)]
pub(crate) fn term_raw(x: f64, y: f64) -> f64 {
    if x == 0.0 || y == 0.0 {
        return 0.0;
    }
    let m = x.abs() + y.abs();
    if (x > 0.0) == (y > 0.0) {
        m
    } else {
        -m
    }
}

/// Single ef term `sign(x*y) * (|x| + |y|)`.
pub fn ef_term(x: f64, y: f64) -> f64 {
    ops::record_counts(OpCounter::ef_terms(1));
    term_raw(x, y)
}

/// Same value written as `sign(x)*y + sign(y)*x`.
pub fn ef_term_alt(x: f64, y: f64) -> f64 {
    ops::record(|c| {
        c.signs += 2;
        c.negations += 2;
        c.adds += 1;
    });
    apply_sign(sign(x), y) + apply_sign(sign(y), x)
}

#[inline]
pub(crate) fn dot_raw(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        acc += term_raw(a, b);
    }
    acc
}

/// Tally for one ef dot product of length `n`: the per-term work plus one
/// accumulation per term.
#[inline]
pub(crate) fn dot_counts(n: u64) -> OpCounter {
    let mut c = OpCounter::ef_terms(n);
    c.adds += n;
    c
}

/// ef vector product `x ◇ y`.
pub fn ef_dot(x: &Vector, y: &Vector) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::shape(format!(
            "ef_dot: lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    ops::record_counts(dot_counts(x.len() as u64));
    Ok(dot_raw(x.as_slice(), y.as_slice()))
}

/// Accumulates `x ◇ W` into `out`, row by row. Each output is summed in
/// ascending input order, so the result is bitwise what per-column
/// [`ef_dot`] produces.
#[inline]
pub(crate) fn matprod_into(x: &[f64], w: &Matrix, out: &mut [f64]) {
    debug_assert_eq!(x.len(), w.rows());
    debug_assert_eq!(out.len(), w.cols());
    out.iter_mut().for_each(|o| *o = 0.0);
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            // Every term in this row is sign(0) * (...) = 0.
            continue;
        }
        let ax = xi.abs();
        let pos = xi > 0.0;
        for (o, &wij) in out.iter_mut().zip(w.row(i)) {
            if wij != 0.0 {
                let m = ax + wij.abs();
                *o += if pos == (wij > 0.0) { m } else { -m };
            }
        }
    }
    ops::record_counts(dot_counts((w.rows() * w.cols()) as u64));
}

/// `x ◇ W`: the ef product of `x` with each column of `W`.
pub fn ef_matprod(x: &Vector, w: &Matrix) -> Result<Vector> {
    if x.len() != w.rows() {
        return Err(Error::shape(format!(
            "ef_matprod: vector of length {} against {}x{} matrix",
            x.len(),
            w.rows(),
            w.cols()
        )));
    }
    let mut out = vec![0.0; w.cols()];
    matprod_into(x.as_slice(), w, &mut out);
    Ok(out.into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::scoped_count;
    use crate::tensor::{uniform_init, Rng};
    use proptest::prelude::*;

    #[test]
    fn term_examples() {
        assert_eq!(ef_term(3.0, -2.0), -5.0);
        assert_eq!(ef_term(0.0, 7.0), 0.0);
        assert_eq!(ef_term(-1.5, -0.5), 2.0);
    }

    #[test]
    fn term_alt_examples() {
        assert_eq!(ef_term_alt(3.0, -2.0), -5.0);
        assert_eq!(ef_term_alt(0.0, 7.0), 0.0);
        assert_eq!(ef_term_alt(2.0, 2.0), 4.0);
    }

    #[test]
    fn dot_examples() {
        assert_eq!(
            ef_dot(&[1.0, 2.0].into(), &[3.0, -4.0].into()).unwrap(),
            -2.0
        );
        assert_eq!(
            ef_dot(&[2.0, -3.0].into(), &[2.0, -3.0].into()).unwrap(),
            10.0
        );
        assert_eq!(
            ef_dot(&[0.0, 0.0].into(), &[5.0, -5.0].into()).unwrap(),
            0.0
        );
    }

    #[test]
    fn dot_shape_error() {
        assert!(matches!(
            ef_dot(&[1.0].into(), &[1.0, 2.0].into()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn matprod_examples() {
        let w = Matrix::from_rows(&[[3.0, 0.0], [-4.0, 1.0]]);
        assert_eq!(
            ef_matprod(&[1.0, 2.0].into(), &w).unwrap(),
            Vector::from([-2.0, 3.0])
        );
        let z = Matrix::zeros(3, 4);
        assert_eq!(
            ef_matprod(&[1.5, -2.0, 0.3].into(), &z).unwrap(),
            Vector::zeros(4)
        );
        assert!(ef_matprod(&[1.0].into(), &z).is_err());
    }

    #[test]
    fn matprod_single_input_row() {
        // Rows of the first sign-network layer before scaling.
        let w = Matrix::from_rows(&[[1.0, 1.0, 2.0]]);
        for x1 in [-2.5, -0.25, 0.0, 0.75, 3.0] {
            let s = sign(x1);
            let out = ef_matprod(&[x1].into(), &w).unwrap();
            assert_eq!(out, Vector::from([x1 + s, x1 + s, x1 + 2.0 * s]));
        }
    }

    #[test]
    fn ef_kernels_never_multiply() {
        let mut rng = Rng::new(5);
        let x = rng.vector(10, -1.0, 1.0);
        let y = rng.vector(10, -1.0, 1.0);
        let w = uniform_init(10, 7, -1.0, 1.0, &mut rng).unwrap();
        let (_, c) = scoped_count(|| {
            ef_term(1.0, -2.0);
            ef_term_alt(1.0, -2.0);
            ef_dot(&x, &y).unwrap();
            ef_matprod(&x, &w).unwrap();
        });
        assert_eq!(c.mults, 0);
        assert!(c.adds > 0);
    }

    #[test]
    fn matprod_matches_columnwise_dot_bitwise() {
        let mut rng = Rng::new(17);
        let w = uniform_init(13, 5, -2.0, 2.0, &mut rng).unwrap();
        let mut x = rng.vector(13, -2.0, 2.0);
        x[4] = 0.0;
        let out = ef_matprod(&x, &w).unwrap();
        for j in 0..5 {
            assert_eq!(
                out[j].to_bits(),
                ef_dot(&x, &w.column(j)).unwrap().to_bits()
            );
        }
    }

    #[test]
    fn sign_scaling_fact_includes_zero() {
        // sign(a(u + b sign(u))) = sign(a u) for b > 0.
        let mut rng = Rng::new(99);
        for k in 0..10_000 {
            let a = rng.uniform(-10.0, 10.0);
            let u = if k % 10 == 0 {
                0.0
            } else {
                rng.uniform(-10.0, 10.0)
            };
            let b = rng.uniform(1e-6, 10.0);
            assert_eq!(sign(a * (u + b * sign(u))), sign(a * u));
        }
    }

    fn finite() -> impl Strategy<Value = f64> {
        prop_oneof![Just(0.0), -1e6f64..1e6, -1.0f64..1.0]
    }

    proptest! {
        #[test]
        fn forms_agree(x in finite(), y in finite()) {
            prop_assert_eq!(ef_term(x, y).to_bits(), ef_term_alt(x, y).to_bits());
        }

        #[test]
        fn induces_l1(xs in prop::collection::vec(finite(), 0..64)) {
            let x = Vector::from(xs);
            let l1: f64 = x.iter().map(|v| v.abs()).sum();
            prop_assert_eq!(ef_dot(&x, &x).unwrap(), 2.0 * l1);
        }

        #[test]
        fn symmetric_and_odd(pairs in prop::collection::vec((finite(), finite()), 0..64)) {
            let x: Vector = pairs.iter().map(|p| p.0).collect();
            let y: Vector = pairs.iter().map(|p| p.1).collect();
            let xy = ef_dot(&x, &y).unwrap();
            prop_assert_eq!(xy, ef_dot(&y, &x).unwrap());
            prop_assert_eq!(-xy, ef_dot(&x.map(|v| -v), &y).unwrap());
        }
    }
}
