use serde::{Deserialize, Serialize};

use super::{check_params, glorot, Activation, GradMode, ParamGrads};
use crate::ef::{self, apply_sign, sign};
use crate::error::{Error, Result};
use crate::ops::{self, OpCounter};
use crate::tensor::{Matrix, Rng, Vector};

/// Additive layer `f(a ⊙ (x ◇ W) + b)` with `W` of shape `d x M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdditiveDense {
    pub w: Matrix,
    pub a: Vector,
    pub b: Vector,
    pub activation: Activation,
    /// Skip the scaling when every `a[j] == 1`, leaving the layer with no
    /// multiplications at all. Off by default.
    #[serde(default)]
    pub unit_scale_fast_path: bool,
}

/// Classic affine layer `f(xW + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicDense {
    pub w: Matrix,
    pub b: Vector,
    pub activation: Activation,
}

/// Values recorded by a dense forward pass. `u` is `x ◇ W` for additive
/// layers and empty for classic ones; `s` is the pre-activation.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseCache {
    pub x: Vector,
    pub u: Vector,
    pub s: Vector,
}

fn check_input(w: &Matrix, x: &Vector) -> Result<()> {
    if x.len() != w.rows() {
        return Err(Error::shape(format!(
            "dense layer expects {} inputs, got {}",
            w.rows(),
            x.len()
        )));
    }
    Ok(())
}

fn check_upstream(m: usize, cache: &DenseCache, upstream: &Vector) -> Result<()> {
    if upstream.len() != m || cache.s.len() != m {
        return Err(Error::shape(format!(
            "dense backward: {} outputs, upstream {}, cache {}",
            m,
            upstream.len(),
            cache.s.len()
        )));
    }
    Ok(())
}

impl AdditiveDense {
    pub fn new(w: Matrix, a: Vector, b: Vector, activation: Activation) -> Result<Self> {
        check_params(&w, Some(&a), &b)?;
        Ok(AdditiveDense {
            w,
            a,
            b,
            activation,
            unit_scale_fast_path: false,
        })
    }

    /// `W` uniform on `±sqrt(6/(d+M))`, `a = 1`, `b = 0`.
    pub fn init(inputs: usize, outputs: usize, activation: Activation, rng: &mut Rng) -> Self {
        AdditiveDense {
            w: glorot(inputs, outputs, rng),
            a: Vector::filled(outputs, 1.0),
            b: Vector::zeros(outputs),
            activation,
            unit_scale_fast_path: false,
        }
    }

    pub fn inputs(&self) -> usize {
        self.w.rows()
    }

    pub fn outputs(&self) -> usize {
        self.w.cols()
    }

    pub fn validate(&self) -> Result<()> {
        check_params(&self.w, Some(&self.a), &self.b)
    }

    fn uses_fast_path(&self) -> bool {
        self.unit_scale_fast_path && self.a.iter().all(|&v| v == 1.0)
    }

    /// Returns `(u, s)`.
    fn scores(&self, x: &Vector) -> (Vector, Vector) {
        let m = self.outputs();
        let mut u = vec![0.0; m];
        ef::matprod_into(x.as_slice(), &self.w, &mut u);
        let s: Vec<f64> = if self.uses_fast_path() {
            u.iter().zip(self.b.iter()).map(|(u, b)| u + b).collect()
        } else {
            u.iter()
                .zip(self.a.iter())
                .zip(self.b.iter())
                .map(|((u, a), b)| a * u + b)
                .collect()
        };
        let mults = if self.uses_fast_path() { 0 } else { m as u64 };
        ops::record(|c| {
            c.mults += mults;
            c.adds += m as u64;
        });
        (u.into(), s.into())
    }

    pub fn predict(&self, x: &Vector) -> Result<Vector> {
        check_input(&self.w, x)?;
        let (_, s) = self.scores(x);
        Ok(s.map(|v| self.activation.apply(v)))
    }

    pub fn forward(&self, x: &Vector) -> Result<(Vector, DenseCache)> {
        check_input(&self.w, x)?;
        let (u, s) = self.scores(x);
        let y = s.map(|v| self.activation.apply(v));
        Ok((y, DenseCache { x: x.clone(), u, s }))
    }

    /// Gradients of a scalar objective given its gradient `upstream` with
    /// respect to this layer's output.
    pub fn backward(
        &self,
        cache: &DenseCache,
        upstream: &Vector,
        mode: GradMode,
    ) -> Result<(ParamGrads, Vector)> {
        let mut grads = ParamGrads::zeros(self.inputs(), self.outputs(), true);
        let gx = self.backward_into(cache, upstream, mode, &mut grads, true)?;
        Ok((grads, gx))
    }

    /// Adds this sample's parameter gradients into `grads`. Returns the input
    /// gradient, or an empty vector when `want_gx` is false.
    pub(crate) fn backward_into(
        &self,
        cache: &DenseCache,
        upstream: &Vector,
        mode: GradMode,
        grads: &mut ParamGrads,
        want_gx: bool,
    ) -> Result<Vector> {
        let (d, m) = (self.inputs(), self.outputs());
        check_upstream(m, cache, upstream)?;
        if cache.x.len() != d || cache.u.len() != m {
            return Err(Error::shape("dense backward: cache does not match layer"));
        }
        let mut coef = vec![0.0; m];
        for j in 0..m {
            let delta = upstream[j] * self.activation.derivative(cache.s[j]);
            grads.b[j] += delta;
            grads.a[j] += delta * cache.u[j];
            coef[j] = delta * self.a[j];
        }
        let mut gx = vec![0.0; if want_gx { d } else { 0 }];
        for i in 0..d {
            let xi = cache.x[i];
            let grow = grads.w.row_mut(i);
            match mode {
                GradMode::PaperLiteral => {
                    for (g, c) in grow.iter_mut().zip(&coef) {
                        *g += c * xi;
                    }
                }
                GradMode::SignConsistent => {
                    let sx = sign(xi);
                    for (g, &c) in grow.iter_mut().zip(&coef) {
                        *g += apply_sign(sx, c);
                    }
                }
            }
            if want_gx {
                let mut acc = 0.0;
                for (&wij, &c) in self.w.row(i).iter().zip(&coef) {
                    acc += apply_sign(sign(wij), c);
                }
                gx[i] = acc;
            }
        }
        let (dm, m64) = ((d * m) as u64, m as u64);
        ops::record_counts(OpCounter {
            mults: 3 * m64
                + if mode == GradMode::PaperLiteral {
                    dm
                } else {
                    0
                },
            adds: 2 * m64 + dm + if want_gx { dm } else { 0 },
            signs: if want_gx { dm } else { 0 }
                + if mode == GradMode::SignConsistent {
                    d as u64
                } else {
                    0
                },
            negations: if want_gx { dm } else { 0 }
                + if mode == GradMode::SignConsistent {
                    dm
                } else {
                    0
                },
            ..OpCounter::default()
        });
        Ok(gx.into())
    }

    pub(crate) fn apply_update(&mut self, grads: &ParamGrads, lr: f64) {
        self.w.axpy(-lr, &grads.w);
        for (p, g) in self.a.as_mut_slice().iter_mut().zip(grads.a.iter()) {
            *p -= lr * g;
        }
        for (p, g) in self.b.as_mut_slice().iter_mut().zip(grads.b.iter()) {
            *p -= lr * g;
        }
    }
}

impl ClassicDense {
    pub fn new(w: Matrix, b: Vector, activation: Activation) -> Result<Self> {
        check_params(&w, None, &b)?;
        Ok(ClassicDense { w, b, activation })
    }

    pub fn init(inputs: usize, outputs: usize, activation: Activation, rng: &mut Rng) -> Self {
        ClassicDense {
            w: glorot(inputs, outputs, rng),
            b: Vector::zeros(outputs),
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.w.rows()
    }

    pub fn outputs(&self) -> usize {
        self.w.cols()
    }

    pub fn validate(&self) -> Result<()> {
        check_params(&self.w, None, &self.b)
    }

    fn scores(&self, x: &Vector) -> Vector {
        let mut s = self.b.clone().into_vec();
        for (i, &xi) in x.iter().enumerate() {
            for (o, &wij) in s.iter_mut().zip(self.w.row(i)) {
                *o += xi * wij;
            }
        }
        let n = (self.inputs() * self.outputs()) as u64;
        ops::record(|c| {
            c.mults += n;
            c.adds += n;
        });
        s.into()
    }

    pub fn predict(&self, x: &Vector) -> Result<Vector> {
        check_input(&self.w, x)?;
        Ok(self.scores(x).map(|v| self.activation.apply(v)))
    }

    pub fn forward(&self, x: &Vector) -> Result<(Vector, DenseCache)> {
        check_input(&self.w, x)?;
        let s = self.scores(x);
        let y = s.map(|v| self.activation.apply(v));
        Ok((
            y,
            DenseCache {
                x: x.clone(),
                u: Vector::zeros(0),
                s,
            },
        ))
    }

    /// Exact gradients; `grads.a` is empty.
    pub fn backward(&self, cache: &DenseCache, upstream: &Vector) -> Result<(ParamGrads, Vector)> {
        let mut grads = ParamGrads::zeros(self.inputs(), self.outputs(), false);
        let gx = self.backward_into(cache, upstream, &mut grads, true)?;
        Ok((grads, gx))
    }

    pub(crate) fn backward_into(
        &self,
        cache: &DenseCache,
        upstream: &Vector,
        grads: &mut ParamGrads,
        want_gx: bool,
    ) -> Result<Vector> {
        let (d, m) = (self.inputs(), self.outputs());
        check_upstream(m, cache, upstream)?;
        if cache.x.len() != d {
            return Err(Error::shape("dense backward: cache does not match layer"));
        }
        let delta: Vec<f64> = (0..m)
            .map(|j| upstream[j] * self.activation.derivative(cache.s[j]))
            .collect();
        for (g, dj) in grads.b.as_mut_slice().iter_mut().zip(&delta) {
            *g += dj;
        }
        let mut gx = vec![0.0; if want_gx { d } else { 0 }];
        for i in 0..d {
            let xi = cache.x[i];
            for (g, dj) in grads.w.row_mut(i).iter_mut().zip(&delta) {
                *g += xi * dj;
            }
            if want_gx {
                let mut acc = 0.0;
                for (&wij, dj) in self.w.row(i).iter().zip(&delta) {
                    acc += wij * dj;
                }
                gx[i] = acc;
            }
        }
        let dm = (d * m) as u64;
        let gx_ops = if want_gx { dm } else { 0 };
        ops::record_counts(OpCounter {
            mults: m as u64 + dm + gx_ops,
            adds: m as u64 + dm + gx_ops,
            ..OpCounter::default()
        });
        Ok(gx.into())
    }

    pub(crate) fn apply_update(&mut self, grads: &ParamGrads, lr: f64) {
        self.w.axpy(-lr, &grads.w);
        for (p, g) in self.b.as_mut_slice().iter_mut().zip(grads.b.iter()) {
            *p -= lr * g;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::scoped_count;
    use crate::tensor::uniform_init;

    fn additive(w: Matrix, a: Vec<f64>, b: Vec<f64>, act: Activation) -> AdditiveDense {
        AdditiveDense::new(w, a.into(), b.into(), act).unwrap()
    }

    #[test]
    fn additive_forward_examples() {
        let l = additive(
            Matrix::from_rows(&[[1.0], [1.0]]),
            vec![1.0],
            vec![0.0],
            Activation::Identity,
        );
        assert_eq!(l.predict(&[1.0, 1.0].into()).unwrap(), Vector::from([4.0]));

        let mut rng = Rng::new(2);
        let w = uniform_init(4, 3, -1.0, 1.0, &mut rng).unwrap();
        let l = additive(w, vec![0.0; 3], vec![1.5, -2.0, 0.25], Activation::Identity);
        let y = l.predict(&rng.vector(4, -1.0, 1.0)).unwrap();
        assert_eq!(y, Vector::from([1.5, -2.0, 0.25]));
    }

    #[test]
    fn additive_forward_counts_m_mults() {
        let mut rng = Rng::new(3);
        let l = AdditiveDense::init(784, 300, Activation::Relu, &mut rng);
        let x = rng.vector(784, 0.0, 1.0);
        let (_, c) = scoped_count(|| l.forward(&x).unwrap());
        assert_eq!(c.mults, 300);
        let classic = ClassicDense::init(784, 300, Activation::Relu, &mut rng);
        let (_, c) = scoped_count(|| classic.forward(&x).unwrap());
        assert_eq!(c.mults, 235_200);
    }

    #[test]
    fn fast_path_removes_mults_only_for_unit_scale() {
        let mut rng = Rng::new(4);
        let mut l = AdditiveDense::init(5, 3, Activation::Identity, &mut rng);
        let x = rng.vector(5, -1.0, 1.0);
        let slow = l.predict(&x).unwrap();
        l.unit_scale_fast_path = true;
        let (fast, c) = scoped_count(|| l.predict(&x).unwrap());
        assert_eq!(c.mults, 0);
        assert_eq!(slow, fast);
        l.a[0] = 2.0;
        let (_, c) = scoped_count(|| l.predict(&x).unwrap());
        assert_eq!(c.mults, 3);
    }

    #[test]
    fn additive_backward_examples() {
        let l = additive(
            Matrix::from_rows(&[[1.0], [-1.0]]),
            vec![1.0],
            vec![0.0],
            Activation::Identity,
        );
        let x = Vector::from([2.0, -3.0]);
        let (_, cache) = l.forward(&x).unwrap();
        let up = Vector::from([1.0]);

        let (g, gx) = l.backward(&cache, &up, GradMode::SignConsistent).unwrap();
        assert_eq!(g.b, Vector::from([1.0]));
        assert_eq!(gx, Vector::from([1.0, -1.0]));
        assert_eq!(g.w, Matrix::from_rows(&[[1.0], [-1.0]]));

        let (g, gx) = l.backward(&cache, &up, GradMode::PaperLiteral).unwrap();
        assert_eq!(gx, Vector::from([1.0, -1.0]));
        assert_eq!(g.w, Matrix::from_rows(&[[2.0], [-3.0]]));
        // u = ef(2,1) + ef(-3,-1) = 3 + 4
        assert_eq!(g.a, Vector::from([7.0]));
    }

    #[test]
    fn backward_rejects_bad_upstream() {
        let l = additive(
            Matrix::from_rows(&[[1.0], [-1.0]]),
            vec![1.0],
            vec![0.0],
            Activation::Identity,
        );
        let (_, cache) = l.forward(&[1.0, 1.0].into()).unwrap();
        assert!(matches!(
            l.backward(&cache, &[1.0, 2.0].into(), GradMode::PaperLiteral),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn classic_identity_and_bias_grad() {
        let l =
            ClassicDense::new(Matrix::identity(3), Vector::zeros(3), Activation::Identity).unwrap();
        let x = Vector::from([0.5, -1.0, 2.0]);
        let (y, cache) = l.forward(&x).unwrap();
        assert_eq!(y, x);
        let up = Vector::from([0.1, -0.2, 0.3]);
        let (g, _) = l.backward(&cache, &up).unwrap();
        assert_eq!(g.b, up);
    }

    #[test]
    fn classic_weight_grad_matches_finite_differences() {
        let mut rng = Rng::new(21);
        let l = ClassicDense::init(3, 4, Activation::Tanh, &mut rng);
        let x = rng.vector(3, -1.0, 1.0);
        let c = rng.vector(4, -1.0, 1.0);
        let objective = |l: &ClassicDense| -> f64 {
            l.predict(&x)
                .unwrap()
                .iter()
                .zip(c.iter())
                .map(|(y, c)| y * c)
                .sum()
        };
        let (_, cache) = l.forward(&x).unwrap();
        let (g, gx) = l.backward(&cache, &c).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            for j in 0..4 {
                let mut p = l.clone();
                p.w.set(i, j, l.w.get(i, j) + h);
                let mut q = l.clone();
                q.w.set(i, j, l.w.get(i, j) - h);
                let fd = (objective(&p) - objective(&q)) / (2.0 * h);
                assert!((fd - g.w.get(i, j)).abs() < 1e-6);
            }
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let f = |x: &Vector| -> f64 {
                l.predict(x)
                    .unwrap()
                    .iter()
                    .zip(c.iter())
                    .map(|(y, c)| y * c)
                    .sum()
            };
            assert!(((f(&xp) - f(&xm)) / (2.0 * h) - gx[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_inconsistent_shapes() {
        assert!(AdditiveDense::new(
            Matrix::zeros(2, 3),
            Vector::zeros(2),
            Vector::zeros(3),
            Activation::Relu
        )
        .is_err());
        assert!(
            ClassicDense::new(Matrix::zeros(2, 3), Vector::zeros(1), Activation::Relu).is_err()
        );
        let l = AdditiveDense::init(2, 3, Activation::Relu, &mut Rng::new(0));
        assert!(matches!(l.forward(&[1.0].into()), Err(Error::Shape(_))));
    }
}
