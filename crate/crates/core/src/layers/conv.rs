//! Convolutions over channel-major feature maps stored as flat vectors.
//!
//! A receptive field is flattened in `(channel, row, col)` order and scored
//! against each filter column of `kernels` (`C*k*k x K`). The output map is
//! `K x OH x OW`, again channel-major. The additive variant scores a field
//! with the ef product, so each output position costs one multiplication per
//! filter (the scaling by `a`).

use serde::{Deserialize, Serialize};

use super::{check_params, glorot, Activation, GradMode, ParamGrads};
use crate::ef::{self, apply_sign, sign};
use crate::error::{Error, Result};
use crate::ops::{self, ConvDesc, OpCounter};
use crate::tensor::{Matrix, Rng, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvGeometry {
    pub fn new(
        in_channels: usize,
        height: usize,
        width: usize,
        kernel: usize,
        stride: usize,
    ) -> Result<Self> {
        let g = ConvGeometry {
            in_channels,
            height,
            width,
            kernel,
            stride,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.kernel == 0 || self.stride == 0 {
            return Err(Error::param(
                "conv geometry needs non-zero channels, kernel and stride",
            ));
        }
        if self.height < self.kernel || self.width < self.kernel {
            return Err(Error::shape(format!(
                "{}x{} input is smaller than {}x{} kernel",
                self.height, self.width, self.kernel, self.kernel
            )));
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.in_channels * self.height * self.width
    }

    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn output_hw(&self) -> (usize, usize) {
        (
            (self.height - self.kernel) / self.stride + 1,
            (self.width - self.kernel) / self.stride + 1,
        )
    }

    pub fn positions(&self) -> usize {
        let (oh, ow) = self.output_hw();
        oh * ow
    }

    pub fn desc(&self, filters: usize) -> ConvDesc {
        ConvDesc {
            in_channels: self.in_channels,
            height: self.height,
            width: self.width,
            filters,
            kernel: self.kernel,
            stride: self.stride,
        }
    }

    /// Input index of element `i` of the receptive field at position `p`.
    #[inline]
    fn source(&self, p: usize, i: usize) -> usize {
        let k = self.kernel;
        let (_, ow) = self.output_hw();
        let (oy, ox) = (p / ow, p % ow);
        let c = i / (k * k);
        let r = (i / k) % k;
        let q = i % k;
        c * self.height * self.width + (oy * self.stride + r) * self.width + ox * self.stride + q
    }

    fn im2col(&self, x: &Vector) -> Matrix {
        let (p_count, n) = (self.positions(), self.patch_len());
        let mut m = Matrix::zeros(p_count, n);
        for p in 0..p_count {
            let row = m.row_mut(p);
            for (i, v) in row.iter_mut().enumerate() {
                *v = x[self.source(p, i)];
            }
        }
        m
    }

    fn check_input(&self, x: &Vector) -> Result<()> {
        if x.len() != self.input_len() {
            return Err(Error::shape(format!(
                "conv layer expects {}x{}x{} = {} inputs, got {}",
                self.in_channels,
                self.height,
                self.width,
                self.input_len(),
                x.len()
            )));
        }
        Ok(())
    }
}

/// Additive convolution: `out[j][p] = f(a[j] * (field(p) ◇ k_j) + b[j])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdditiveConv {
    pub geometry: ConvGeometry,
    pub kernels: Matrix,
    pub a: Vector,
    pub b: Vector,
    pub activation: Activation,
}

/// Classic convolution: `out[j][p] = f(field(p) · k_j + b[j])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicConv {
    pub geometry: ConvGeometry,
    pub kernels: Matrix,
    pub b: Vector,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvCache {
    /// One receptive field per row.
    pub patches: Matrix,
    pub u: Vector,
    pub s: Vector,
}

fn check_kernels(g: &ConvGeometry, kernels: &Matrix) -> Result<()> {
    g.validate()?;
    if kernels.rows() != g.patch_len() {
        return Err(Error::shape(format!(
            "kernel matrix has {} rows, receptive field has {}",
            kernels.rows(),
            g.patch_len()
        )));
    }
    Ok(())
}

fn check_backward(
    g: &ConvGeometry,
    filters: usize,
    cache: &ConvCache,
    upstream: &Vector,
) -> Result<()> {
    let n = g.positions() * filters;
    if upstream.len() != n || cache.s.len() != n || cache.patches.rows() != g.positions() {
        return Err(Error::shape(format!(
            "conv backward: expected {n} upstream values, got {}",
            upstream.len()
        )));
    }
    Ok(())
}

impl AdditiveConv {
    pub fn new(
        geometry: ConvGeometry,
        kernels: Matrix,
        a: Vector,
        b: Vector,
        activation: Activation,
    ) -> Result<Self> {
        check_kernels(&geometry, &kernels)?;
        check_params(&kernels, Some(&a), &b)?;
        Ok(AdditiveConv {
            geometry,
            kernels,
            a,
            b,
            activation,
        })
    }

    pub fn init(
        geometry: ConvGeometry,
        filters: usize,
        activation: Activation,
        rng: &mut Rng,
    ) -> Result<Self> {
        geometry.validate()?;
        Ok(AdditiveConv {
            kernels: glorot(geometry.patch_len(), filters, rng),
            a: Vector::filled(filters, 1.0),
            b: Vector::zeros(filters),
            geometry,
            activation,
        })
    }

    pub fn filters(&self) -> usize {
        self.kernels.cols()
    }

    pub fn input_len(&self) -> usize {
        self.geometry.input_len()
    }

    pub fn output_len(&self) -> usize {
        self.geometry.positions() * self.filters()
    }

    pub fn validate(&self) -> Result<()> {
        check_kernels(&self.geometry, &self.kernels)?;
        check_params(&self.kernels, Some(&self.a), &self.b)
    }

    fn scores(&self, patches: &Matrix) -> (Vector, Vector) {
        let (pc, k) = (self.geometry.positions(), self.filters());
        let mut u = vec![0.0; k * pc];
        let mut s = vec![0.0; k * pc];
        let mut tmp = vec![0.0; k];
        for p in 0..pc {
            ef::matprod_into(patches.row(p), &self.kernels, &mut tmp);
            for j in 0..k {
                u[j * pc + p] = tmp[j];
                s[j * pc + p] = self.a[j] * tmp[j] + self.b[j];
            }
        }
        let units = (pc * k) as u64;
        ops::record(|c| {
            c.mults += units;
            c.adds += units;
        });
        (u.into(), s.into())
    }

    pub fn predict(&self, x: &Vector) -> Result<Vector> {
        Ok(self.forward(x)?.0)
    }

    pub fn forward(&self, x: &Vector) -> Result<(Vector, ConvCache)> {
        self.geometry.check_input(x)?;
        let patches = self.geometry.im2col(x);
        let (u, s) = self.scores(&patches);
        let y = s.map(|v| self.activation.apply(v));
        Ok((y, ConvCache { patches, u, s }))
    }

    pub fn backward(
        &self,
        cache: &ConvCache,
        upstream: &Vector,
        mode: GradMode,
    ) -> Result<(ParamGrads, Vector)> {
        let mut grads = ParamGrads::zeros(self.geometry.patch_len(), self.filters(), true);
        let gx = self.backward_into(cache, upstream, mode, &mut grads, true)?;
        Ok((grads, gx))
    }

    /// Dense-layer gradient rules applied per receptive field and summed
    /// over positions.
    pub(crate) fn backward_into(
        &self,
        cache: &ConvCache,
        upstream: &Vector,
        mode: GradMode,
        grads: &mut ParamGrads,
        want_gx: bool,
    ) -> Result<Vector> {
        let g = &self.geometry;
        let (pc, k, n) = (g.positions(), self.filters(), g.patch_len());
        check_backward(g, k, cache, upstream)?;
        let mut gx = vec![0.0; if want_gx { g.input_len() } else { 0 }];
        let mut coef = vec![0.0; k];
        for p in 0..pc {
            for j in 0..k {
                let idx = j * pc + p;
                let delta = upstream[idx] * self.activation.derivative(cache.s[idx]);
                grads.b[j] += delta;
                grads.a[j] += delta * cache.u[idx];
                coef[j] = delta * self.a[j];
            }
            let patch = cache.patches.row(p);
            for (i, &xi) in patch.iter().enumerate() {
                let grow = grads.w.row_mut(i);
                match mode {
                    GradMode::PaperLiteral => {
                        for (gw, c) in grow.iter_mut().zip(&coef) {
                            *gw += c * xi;
                        }
                    }
                    GradMode::SignConsistent => {
                        let sx = sign(xi);
                        for (gw, &c) in grow.iter_mut().zip(&coef) {
                            *gw += apply_sign(sx, c);
                        }
                    }
                }
                if want_gx {
                    let mut acc = 0.0;
                    for (&wij, &c) in self.kernels.row(i).iter().zip(&coef) {
                        acc += apply_sign(sign(wij), c);
                    }
                    gx[g.source(p, i)] += acc;
                }
            }
        }
        let units = (pc * k) as u64;
        let terms = units * n as u64;
        let gx_terms = if want_gx { terms } else { 0 };
        ops::record_counts(OpCounter {
            mults: 3 * units
                + if mode == GradMode::PaperLiteral {
                    terms
                } else {
                    0
                },
            adds: 2 * units + terms + gx_terms,
            signs: gx_terms,
            negations: gx_terms
                + if mode == GradMode::SignConsistent {
                    terms
                } else {
                    0
                },
            ..OpCounter::default()
        });
        Ok(gx.into())
    }

    pub(crate) fn apply_update(&mut self, grads: &ParamGrads, lr: f64) {
        self.kernels.axpy(-lr, &grads.w);
        for (p, g) in self.a.as_mut_slice().iter_mut().zip(grads.a.iter()) {
            *p -= lr * g;
        }
        for (p, g) in self.b.as_mut_slice().iter_mut().zip(grads.b.iter()) {
            *p -= lr * g;
        }
    }
}

impl ClassicConv {
    pub fn new(
        geometry: ConvGeometry,
        kernels: Matrix,
        b: Vector,
        activation: Activation,
    ) -> Result<Self> {
        check_kernels(&geometry, &kernels)?;
        check_params(&kernels, None, &b)?;
        Ok(ClassicConv {
            geometry,
            kernels,
            b,
            activation,
        })
    }

    pub fn init(
        geometry: ConvGeometry,
        filters: usize,
        activation: Activation,
        rng: &mut Rng,
    ) -> Result<Self> {
        geometry.validate()?;
        Ok(ClassicConv {
            kernels: glorot(geometry.patch_len(), filters, rng),
            b: Vector::zeros(filters),
            geometry,
            activation,
        })
    }

    pub fn filters(&self) -> usize {
        self.kernels.cols()
    }

    pub fn input_len(&self) -> usize {
        self.geometry.input_len()
    }

    pub fn output_len(&self) -> usize {
        self.geometry.positions() * self.filters()
    }

    pub fn validate(&self) -> Result<()> {
        check_kernels(&self.geometry, &self.kernels)?;
        check_params(&self.kernels, None, &self.b)
    }

    pub fn predict(&self, x: &Vector) -> Result<Vector> {
        Ok(self.forward(x)?.0)
    }

    pub fn forward(&self, x: &Vector) -> Result<(Vector, ConvCache)> {
        self.geometry.check_input(x)?;
        let patches = self.geometry.im2col(x);
        let (pc, k) = (self.geometry.positions(), self.filters());
        let mut s = vec![0.0; k * pc];
        let mut tmp = vec![0.0; k];
        for p in 0..pc {
            tmp.copy_from_slice(self.b.as_slice());
            for (i, &xi) in patches.row(p).iter().enumerate() {
                for (o, &wij) in tmp.iter_mut().zip(self.kernels.row(i)) {
                    *o += xi * wij;
                }
            }
            for j in 0..k {
                s[j * pc + p] = tmp[j];
            }
        }
        let n = (pc * k * self.geometry.patch_len()) as u64;
        ops::record(|c| {
            c.mults += n;
            c.adds += n;
        });
        let s = Vector::from(s);
        let y = s.map(|v| self.activation.apply(v));
        Ok((
            y,
            ConvCache {
                patches,
                u: Vector::zeros(0),
                s,
            },
        ))
    }

    pub fn backward(&self, cache: &ConvCache, upstream: &Vector) -> Result<(ParamGrads, Vector)> {
        let mut grads = ParamGrads::zeros(self.geometry.patch_len(), self.filters(), false);
        let gx = self.backward_into(cache, upstream, &mut grads, true)?;
        Ok((grads, gx))
    }

    pub(crate) fn backward_into(
        &self,
        cache: &ConvCache,
        upstream: &Vector,
        grads: &mut ParamGrads,
        want_gx: bool,
    ) -> Result<Vector> {
        let g = &self.geometry;
        let (pc, k, n) = (g.positions(), self.filters(), g.patch_len());
        check_backward(g, k, cache, upstream)?;
        let mut gx = vec![0.0; if want_gx { g.input_len() } else { 0 }];
        let mut delta = vec![0.0; k];
        for p in 0..pc {
            for j in 0..k {
                let idx = j * pc + p;
                delta[j] = upstream[idx] * self.activation.derivative(cache.s[idx]);
                grads.b[j] += delta[j];
            }
            for (i, &xi) in cache.patches.row(p).iter().enumerate() {
                for (gw, dj) in grads.w.row_mut(i).iter_mut().zip(&delta) {
                    *gw += xi * dj;
                }
                if want_gx {
                    let mut acc = 0.0;
                    for (&wij, dj) in self.kernels.row(i).iter().zip(&delta) {
                        acc += wij * dj;
                    }
                    gx[g.source(p, i)] += acc;
                }
            }
        }
        let units = (pc * k) as u64;
        let terms = units * n as u64;
        let gx_terms = if want_gx { terms } else { 0 };
        ops::record_counts(OpCounter {
            mults: units + terms + gx_terms,
            adds: units + terms + gx_terms,
            ..OpCounter::default()
        });
        Ok(gx.into())
    }

    pub(crate) fn apply_update(&mut self, grads: &ParamGrads, lr: f64) {
        self.kernels.axpy(-lr, &grads.w);
        for (p, g) in self.b.as_mut_slice().iter_mut().zip(grads.b.iter()) {
            *p -= lr * g;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ef::ef_term;
    use crate::layers::AdditiveDense;
    use crate::ops::{scoped_count, theoretical_counts, LayerDesc};
    use crate::tensor::uniform_init;

    #[test]
    fn zero_input_gives_zero_output() {
        let g = ConvGeometry::new(1, 3, 3, 2, 1).unwrap();
        let l = AdditiveConv::init(g, 4, Activation::Identity, &mut Rng::new(1)).unwrap();
        let y = l.predict(&Vector::zeros(9)).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
        assert_eq!(y.len(), 4 * 4);
    }

    #[test]
    fn unit_kernel_reduces_to_scalar_term() {
        let g = ConvGeometry::new(1, 3, 3, 1, 1).unwrap();
        let w = -0.75;
        let l = AdditiveConv::new(
            g,
            Matrix::from_rows(&[[w]]),
            [1.0].into(),
            [0.0].into(),
            Activation::Identity,
        )
        .unwrap();
        let img: Vector = (0..9).map(|i| i as f64 - 4.0).collect();
        let y = l.predict(&img).unwrap();
        for p in 0..9 {
            assert_eq!(y[p], ef_term(img[p], w));
        }
    }

    #[test]
    fn two_by_two_ones_kernel() {
        let g = ConvGeometry::new(1, 2, 2, 2, 1).unwrap();
        let l = AdditiveConv::new(
            g,
            Matrix::from_rows(&[[1.0], [1.0], [1.0], [1.0]]),
            [1.0].into(),
            [0.0].into(),
            Activation::Identity,
        )
        .unwrap();
        assert_eq!(
            l.predict(&[1.0, 2.0, 3.0, 4.0].into()).unwrap(),
            Vector::from([14.0])
        );
    }

    #[test]
    fn full_size_kernel_equals_dense_layer() {
        let mut rng = Rng::new(8);
        let g = ConvGeometry::new(2, 3, 3, 3, 1).unwrap();
        let conv = AdditiveConv::init(g, 5, Activation::Tanh, &mut rng).unwrap();
        let dense = AdditiveDense::new(
            conv.kernels.clone(),
            conv.a.clone(),
            conv.b.clone(),
            Activation::Tanh,
        )
        .unwrap();
        let x = rng.vector(18, -1.0, 1.0);
        assert_eq!(conv.predict(&x).unwrap(), dense.predict(&x).unwrap());

        let up = rng.vector(5, -1.0, 1.0);
        let (_, cc) = conv.forward(&x).unwrap();
        let (_, dc) = dense.forward(&x).unwrap();
        for mode in [GradMode::PaperLiteral, GradMode::SignConsistent] {
            let (gc, gxc) = conv.backward(&cc, &up, mode).unwrap();
            let (gd, gxd) = dense.backward(&dc, &up, mode).unwrap();
            assert_eq!(gc, gd);
            assert_eq!(gxc, gxd);
        }
    }

    #[test]
    fn unit_kernel_gradients_match_dense_formulas() {
        // A 1x1 kernel over a 1x1 map is a single-input dense layer.
        let g = ConvGeometry::new(1, 1, 1, 1, 1).unwrap();
        let conv = AdditiveConv::new(
            g,
            Matrix::from_rows(&[[-0.5, 2.0]]),
            [1.5, -1.0].into(),
            [0.1, 0.0].into(),
            Activation::Identity,
        )
        .unwrap();
        let x = Vector::from([0.8]);
        let up = Vector::from([1.0, -2.0]);
        let (_, cache) = conv.forward(&x).unwrap();
        let (g, gx) = conv
            .backward(&cache, &up, GradMode::SignConsistent)
            .unwrap();
        // gb = upstream, ga = upstream * u, gW = upstream * a * sign(x), gx = Σ upstream * a * sign(w)
        assert_eq!(g.b, up);
        assert_eq!(
            g.a,
            Vector::from([1.0 * ef_term(0.8, -0.5), -2.0 * ef_term(0.8, 2.0)])
        );
        assert_eq!(g.w, Matrix::from_rows(&[[1.5, 2.0]]));
        assert_eq!(gx, Vector::from([1.0 * 1.5 * -1.0 + -2.0 * -1.0 * 1.0]));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = Rng::new(3);
        let g = ConvGeometry::new(2, 6, 6, 3, 1).unwrap();
        let l = AdditiveConv::init(g, 3, Activation::Relu, &mut rng).unwrap();
        let (_, cache) = l.forward(&rng.vector(72, -1.0, 1.0)).unwrap();
        let (gr, gx) = l
            .backward(
                &cache,
                &Vector::zeros(l.output_len()),
                GradMode::PaperLiteral,
            )
            .unwrap();
        assert!(gr
            .w
            .as_slice()
            .iter()
            .chain(gr.a.iter())
            .chain(gr.b.iter())
            .all(|&v| v == 0.0));
        assert!(gx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_mult_per_position_and_filter() {
        let mut rng = Rng::new(4);
        let g = ConvGeometry::new(1, 28, 28, 5, 1).unwrap();
        let l = AdditiveConv::init(g, 6, Activation::Relu, &mut rng).unwrap();
        let x = rng.vector(784, 0.0, 1.0);
        let (_, c) = scoped_count(|| l.forward(&x).unwrap());
        assert_eq!(c.mults, 24 * 24 * 6);
        assert_eq!(
            c,
            theoretical_counts(&LayerDesc::AdditiveConv(g.desc(6))).unwrap()
        );
    }

    #[test]
    fn classic_conv_gradient_matches_finite_differences() {
        let mut rng = Rng::new(12);
        let g = ConvGeometry::new(2, 5, 4, 2, 2).unwrap();
        let l = ClassicConv::new(
            g,
            uniform_init(8, 3, -1.0, 1.0, &mut rng).unwrap(),
            rng.vector(3, -0.1, 0.1),
            Activation::Tanh,
        )
        .unwrap();
        let x = rng.vector(40, -1.0, 1.0);
        let c = rng.vector(l.output_len(), -1.0, 1.0);
        let f = |l: &ClassicConv, x: &Vector| -> f64 {
            l.predict(x)
                .unwrap()
                .iter()
                .zip(c.iter())
                .map(|(y, c)| y * c)
                .sum()
        };
        let (_, cache) = l.forward(&x).unwrap();
        let (gr, gx) = l.backward(&cache, &c).unwrap();
        let h = 1e-6;
        for i in 0..8 {
            for j in 0..3 {
                let mut p = l.clone();
                p.kernels.set(i, j, l.kernels.get(i, j) + h);
                let mut q = l.clone();
                q.kernels.set(i, j, l.kernels.get(i, j) - h);
                let fd = (f(&p, &x) - f(&q, &x)) / (2.0 * h);
                assert!((fd - gr.w.get(i, j)).abs() < 1e-6);
            }
        }
        for i in 0..40 {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let fd = (f(&l, &xp) - f(&l, &xm)) / (2.0 * h);
            assert!((fd - gx[i]).abs() < 1e-6, "gx[{i}]");
        }
    }

    #[test]
    fn rejects_small_input() {
        assert!(ConvGeometry::new(1, 3, 3, 4, 1).is_err());
        let g = ConvGeometry::new(1, 4, 4, 2, 1).unwrap();
        let l = AdditiveConv::init(g, 1, Activation::Relu, &mut Rng::new(0)).unwrap();
        assert!(matches!(
            l.forward(&Vector::zeros(15)),
            Err(Error::Shape(_))
        ));
    }
}
