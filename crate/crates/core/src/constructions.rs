//! Explicit additive networks with known outputs: the four-layer sign
//! network, the identity-to-ReLU width doubling, and finite superpositions
//! `G(x) = Σ α_i sign(y_iᵀx + θ_i)`. The `verify_*` functions fuzz each
//! construction against a direct evaluation.
//!
//! The sign network telescopes exactly in real arithmetic. In binary
//! floating point its last two layers round, so for arbitrary real inputs
//! the output is `±1` up to a few ulp. Inputs on a dyadic grid keep every
//! intermediate exact, and there the output is exactly `±1` (or `0` on the
//! boundary).

use std::fmt;

use crate::ef::sign;
use crate::error::{Error, Result};
use crate::layers::{Activation, AdditiveDense, ClassicDense};
use crate::network::{Layer, LossKind, Network};
use crate::ops;
use crate::tensor::{Matrix, Rng, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct SignNetSpec {
    pub y: Vector,
    pub bias: f64,
}

impl SignNetSpec {
    pub fn new(y: impl Into<Vector>, bias: f64) -> Result<Self> {
        let spec = SignNetSpec { y: y.into(), bias };
        spec.validate()?;
        Ok(spec)
    }

    pub fn dim(&self) -> usize {
        self.y.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.y.is_empty() {
            return Err(Error::param("sign network needs d >= 1"));
        }
        if !self.y.is_finite() || !self.bias.is_finite() {
            return Err(Error::param("sign network parameters must be finite"));
        }
        Ok(())
    }

    /// `yᵀx + bias`, summed left to right.
    pub fn affine(&self, x: &Vector) -> f64 {
        self.y.iter().zip(x.iter()).map(|(y, x)| y * x).sum::<f64>() + self.bias
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuperpositionTerm {
    pub alpha: f64,
    pub y: Vector,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuperpositionSpec {
    pub terms: Vec<SuperpositionTerm>,
}

impl SuperpositionSpec {
    pub fn validate(&self) -> Result<()> {
        let first = self
            .terms
            .first()
            .ok_or_else(|| Error::param("superposition needs at least one term"))?;
        for (i, t) in self.terms.iter().enumerate() {
            if t.y.len() != first.y.len() {
                return Err(Error::param(format!(
                    "term {i} has dimension {}, term 0 has {}",
                    t.y.len(),
                    first.y.len()
                )));
            }
            if !t.alpha.is_finite() {
                return Err(Error::param(format!("term {i} has a non-finite alpha")));
            }
            SignNetSpec {
                y: t.y.clone(),
                bias: t.theta,
            }
            .validate()?;
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.terms.first().map_or(0, |t| t.y.len())
    }

    /// Direct evaluation, summed in term order.
    pub fn evaluate(&self, x: &Vector) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let z = t.y.iter().zip(x.iter()).map(|(y, x)| y * x).sum::<f64>() + t.theta;
                t.alpha * sign(z)
            })
            .sum()
    }
}

fn additive(w: Matrix, a: Vector, b: Vector, activation: Activation) -> AdditiveDense {
    AdditiveDense::new(w, a, b, activation).expect("construction shapes are consistent")
}

/// The four sign-network layers for one `(y, bias)`.
fn sign_layers(spec: &SignNetSpec) -> [AdditiveDense; 4] {
    let d = spec.dim();
    let mut w1 = Matrix::zeros(d, 3 * d);
    let mut a1 = Vector::zeros(3 * d);
    let mut w2 = Matrix::zeros(3 * d, 1);
    for i in 0..d {
        for (k, (&w, &v)) in [1.0, 1.0, 2.0].iter().zip(&[1.0, 1.0, -2.0]).enumerate() {
            w1.set(i, 3 * i + k, w);
            a1[3 * i + k] = spec.y[i];
            w2.set(3 * i + k, 0, v);
        }
    }
    let id = Activation::Identity;
    [
        additive(w1, a1, Vector::zeros(3 * d), id),
        additive(w2, Vector::filled(1, 1.0), Vector::from([spec.bias]), id),
        additive(
            Matrix::from_rows(&[[2.0, 1.0]]),
            Vector::filled(2, 1.0),
            Vector::zeros(2),
            id,
        ),
        additive(
            Matrix::from_rows(&[[1.0], [-1.0]]),
            Vector::filled(1, 1.0),
            Vector::zeros(1),
            id,
        ),
    ]
}

/// Four additive identity layers computing `sign(yᵀx + bias)`:
/// d → 3d → 1 → 2 → 1.
pub fn build_sign_network(spec: &SignNetSpec) -> Result<Network> {
    spec.validate()?;
    let layers = sign_layers(spec)
        .into_iter()
        .map(Layer::AdditiveDense)
        .collect();
    Network::new(layers, LossKind::Mse)
}

/// `W → -W`, `b → -b`: the identity-activation output flips sign.
pub fn negate_layer(layer: &AdditiveDense) -> AdditiveDense {
    AdditiveDense {
        w: layer.w.map(|v| -v),
        b: layer.b.map(|v| -v),
        ..layer.clone()
    }
}

/// `W → -W`: the new layer applied to `-x` equals the old one applied to `x`.
pub fn input_negation_layer(layer: &AdditiveDense) -> AdditiveDense {
    AdditiveDense {
        w: layer.w.map(|v| -v),
        ..layer.clone()
    }
}

/// Both sides of `a⊙(relu(x)◇W) + a⊙(relu(-x)◇(-W)) + b = a⊙(x◇W) + b`,
/// as `(split, direct)`.
pub fn relu_split_identity(layer: &AdditiveDense, x: &Vector) -> Result<(Vector, Vector)> {
    if layer.activation != Activation::Identity {
        return Err(Error::param(
            "relu split identity needs an identity-activation layer",
        ));
    }
    let pos = x.map(|v| v.max(0.0));
    let neg = x.map(|v| (-v).max(0.0));
    let scaled = |l: &AdditiveDense, v: &Vector| -> Result<Vector> {
        let u = crate::ef::ef_matprod(v, &l.w)?;
        Ok(u.iter().zip(l.a.iter()).map(|(u, a)| a * u).collect())
    };
    let p = scaled(layer, &pos)?;
    let n = scaled(&input_negation_layer(layer), &neg)?;
    let split = p
        .iter()
        .zip(n.iter())
        .zip(layer.b.iter())
        .map(|((p, n), b)| p + n + b)
        .collect();
    Ok((split, layer.predict(x)?))
}

fn hstack(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.rows(), a.cols() + b.cols());
    for i in 0..a.rows() {
        out.row_mut(i)[..a.cols()].copy_from_slice(a.row(i));
        out.row_mut(i)[a.cols()..].copy_from_slice(b.row(i));
    }
    out
}

fn vstack(a: &Matrix, b: &Matrix) -> Matrix {
    let mut data = a.as_slice().to_vec();
    data.extend_from_slice(b.as_slice());
    Matrix::from_vec(a.rows() + b.rows(), a.cols(), data).expect("equal widths")
}

fn concat(a: &Vector, b: &Vector) -> Vector {
    a.iter().chain(b.iter()).copied().collect()
}

/// The width-doubled ReLU layers. Each outputs `[relu(g), relu(-g)]` of the
/// corresponding original layer `g`; no readout is appended.
fn doubled_layers(layers: &[AdditiveDense]) -> Vec<AdditiveDense> {
    layers
        .iter()
        .enumerate()
        .map(|(k, l)| {
            let neg = l.w.map(|v| -v);
            let w = if k == 0 {
                hstack(&l.w, &neg)
            } else {
                vstack(&hstack(&l.w, &neg), &hstack(&neg, &l.w))
            };
            additive(
                w,
                concat(&l.a, &l.a),
                concat(&l.b, &l.b.map(|v| -v)),
                Activation::Relu,
            )
        })
        .collect()
}

fn identity_additive_layers(net: &Network) -> Result<Vec<AdditiveDense>> {
    net.layers
        .iter()
        .enumerate()
        .map(|(i, l)| match l {
            Layer::AdditiveDense(d) if d.activation == Activation::Identity => Ok(d.clone()),
            Layer::AdditiveDense(d) => Err(Error::param(format!(
                "layer {i} has {} activation, conversion needs identity",
                d.activation
            ))),
            other => Err(Error::param(format!(
                "layer {i} is {}, conversion needs additive dense layers",
                other.kind_name()
            ))),
        })
        .collect()
}

/// `[relu(g), relu(-g)] → g` as a classic linear layer with weights `[I; -I]`.
fn readout(m: usize) -> ClassicDense {
    let w = vstack(&Matrix::identity(m), &Matrix::identity(m).map(|v| -v));
    ClassicDense::new(w, Vector::zeros(m), Activation::Identity).expect("readout shape")
}

/// Rebuilds an identity-activation additive network with ReLU activations.
/// Every layer doubles in width and carries `(g, -g)`; a final linear layer
/// `[I; -I]` recovers the original output.
pub fn convert_to_relu_network(net: &Network) -> Result<Network> {
    let originals = identity_additive_layers(net)?;
    let out = net.output_len();
    let mut layers: Vec<Layer> = doubled_layers(&originals)
        .into_iter()
        .map(Layer::AdditiveDense)
        .collect();
    layers.push(Layer::ClassicDense(readout(out)));
    Network::new(layers, net.loss)
}

fn block_diag(blocks: &[&Matrix]) -> Matrix {
    let rows = blocks.iter().map(|m| m.rows()).sum();
    let cols = blocks.iter().map(|m| m.cols()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let (mut r0, mut c0) = (0, 0);
    for m in blocks {
        for i in 0..m.rows() {
            out.row_mut(r0 + i)[c0..c0 + m.cols()].copy_from_slice(m.row(i));
        }
        r0 += m.rows();
        c0 += m.cols();
    }
    out
}

/// Sign subnetworks side by side, then a classic linear layer with weights
/// `α` (or `[α; -α]` in ReLU mode). That output layer is the only one with
/// general multiplications.
pub fn build_superposition(spec: &SuperpositionSpec, relu: bool) -> Result<Network> {
    spec.validate()?;
    let subnets: Vec<[AdditiveDense; 4]> = spec
        .terms
        .iter()
        .map(|t| {
            sign_layers(&SignNetSpec {
                y: t.y.clone(),
                bias: t.theta,
            })
        })
        .collect();
    let mut parallel = Vec::with_capacity(4);
    for k in 0..4 {
        let parts: Vec<&AdditiveDense> = subnets.iter().map(|s| &s[k]).collect();
        let w = if k == 0 {
            parts
                .iter()
                .skip(1)
                .fold(parts[0].w.clone(), |acc, p| hstack(&acc, &p.w))
        } else {
            block_diag(&parts.iter().map(|p| &p.w).collect::<Vec<_>>())
        };
        let a = parts.iter().flat_map(|p| p.a.iter().copied()).collect();
        let b = parts.iter().flat_map(|p| p.b.iter().copied()).collect();
        parallel.push(additive(w, a, b, Activation::Identity));
    }
    let alpha = Matrix::from_vec(
        spec.terms.len(),
        1,
        spec.terms.iter().map(|t| t.alpha).collect(),
    )?;
    let (hidden, out_w) = if relu {
        (
            doubled_layers(&parallel),
            vstack(&alpha, &alpha.map(|v| -v)),
        )
    } else {
        (parallel, alpha)
    };
    let mut layers: Vec<Layer> = hidden.into_iter().map(Layer::AdditiveDense).collect();
    layers.push(Layer::ClassicDense(ClassicDense::new(
        out_w,
        Vector::zeros(1),
        Activation::Identity,
    )?));
    Network::new(layers, LossKind::Mse)
}

/// Uniform draw from `{k / denom : |k / denom| <= bound}`. Sums and
/// products of a few such values are exact in `f64`.
pub fn dyadic(rng: &mut Rng, bound: f64, denom: u32) -> f64 {
    let steps = (bound * denom as f64) as u64;
    (rng.below(2 * steps as usize + 1) as f64 - steps as f64) / denom as f64
}

fn dyadic_vector(rng: &mut Rng, len: usize) -> Vector {
    (0..len).map(|_| dyadic(rng, 4.0, 16)).collect()
}

/// Outcome of one fuzz suite.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub dims: Vec<usize>,
    pub cases: usize,
    pub passed: usize,
    /// Cases exactly on a sign boundary, where the expected output is 0.
    pub boundary_cases: usize,
    pub boundary_passed: usize,
    /// Off-grid real-valued cases, checked for the correct sign and a
    /// magnitude within [`ULP_TOLERANCE`] ulp.
    pub real_cases: usize,
    pub real_passed: usize,
    pub real_exact: usize,
    pub failures: Vec<String>,
}

/// Allowed distance from `±1`, in units of `f64::EPSILON`, for real-valued
/// sign-network inputs.
pub const ULP_TOLERANCE: f64 = 16.0;
const MAX_LOGGED: usize = 5;

impl SuiteReport {
    fn new(name: &'static str, dims: &[usize]) -> Self {
        SuiteReport {
            name,
            dims: dims.to_vec(),
            cases: 0,
            passed: 0,
            boundary_cases: 0,
            boundary_passed: 0,
            real_cases: 0,
            real_passed: 0,
            real_exact: 0,
            failures: Vec::new(),
        }
    }

    pub fn ok(&self) -> bool {
        self.passed == self.cases
            && self.boundary_passed == self.boundary_cases
            && self.real_passed == self.real_cases
    }

    fn fail(&mut self, msg: String) {
        if self.failures.len() < MAX_LOGGED {
            self.failures.push(msg);
        }
    }

    fn grid(&mut self, boundary: bool, ok: bool, msg: impl FnOnce() -> String) {
        if boundary {
            self.boundary_cases += 1;
            self.boundary_passed += usize::from(ok);
        } else {
            self.cases += 1;
            self.passed += usize::from(ok);
        }
        if !ok {
            self.fail(msg());
        }
    }

    fn real(&mut self, got: f64, want: f64, msg: impl FnOnce() -> String) {
        self.real_cases += 1;
        self.real_exact += usize::from(got == want);
        let ok = sign(got) == sign(want)
            && (got - want).abs() <= ULP_TOLERANCE * f64::EPSILON * want.abs().max(1.0);
        self.real_passed += usize::from(ok);
        if !ok {
            self.fail(msg());
        }
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dims: Vec<String> = self.dims.iter().map(|d| d.to_string()).collect();
        writeln!(
            f,
            "{:<14} {}  dims={}  pass {}/{}  boundary(sign(0)=0) {}/{}",
            self.name,
            if self.ok() { "PASS" } else { "FAIL" },
            dims.join(","),
            self.passed,
            self.cases,
            self.boundary_passed,
            self.boundary_cases
        )?;
        if self.real_cases > 0 {
            writeln!(
                f,
                "{:<14}       real-valued inputs: sign and {} ulp bound {}/{}, bitwise exact {}/{}",
                "",
                ULP_TOLERANCE,
                self.real_passed,
                self.real_cases,
                self.real_exact,
                self.real_cases
            )?;
        }
        for msg in &self.failures {
            writeln!(f, "{:<14}       {msg}", "")?;
        }
        Ok(())
    }
}

/// Per dimension: `cases` off-boundary grid samples (random boundary hits
/// are tallied on the side), `cases / 10` constructed boundary cases, and
/// `cases` real-valued samples checked against the ulp bound.
pub fn verify_sign_network(dims: &[usize], cases: usize, seed: u64) -> Result<SuiteReport> {
    let mut report = SuiteReport::new("sign-network", dims);
    let mut rng = Rng::new(seed);
    ops::uncounted(|| -> Result<()> {
        for &d in dims {
            let start = report.cases;
            while report.cases - start < cases {
                let spec = SignNetSpec::new(dyadic_vector(&mut rng, d), dyadic(&mut rng, 4.0, 16))?;
                let x = dyadic_vector(&mut rng, d);
                let want = sign(spec.affine(&x));
                let got = build_sign_network(&spec)?.predict(&x)?[0];
                report.grid(want == 0.0, got == want, || {
                    format!(
                        "d={d} y={:?} bias={} x={:?}: got {got}, want {want}",
                        spec.y.as_slice(),
                        spec.bias,
                        x.as_slice()
                    )
                });
            }
            for _ in 0..cases.div_ceil(10) {
                let y = dyadic_vector(&mut rng, d);
                let x = dyadic_vector(&mut rng, d);
                let spec = SignNetSpec::new(y, 0.0)?;
                let spec = SignNetSpec::new(spec.y.clone(), -spec.affine(&x))?;
                let got = build_sign_network(&spec)?.predict(&x)?[0];
                report.grid(true, got == 0.0, || {
                    format!("d={d} boundary case: got {got}")
                });
            }
            let mut n = 0;
            while n < cases {
                let spec = SignNetSpec::new(rng.vector(d, -2.0, 2.0), rng.uniform(-2.0, 2.0))?;
                let x = rng.vector(d, -2.0, 2.0);
                let z = spec.affine(&x);
                if z.abs() <= 1e-9 {
                    continue;
                }
                n += 1;
                let got = build_sign_network(&spec)?.predict(&x)?[0];
                report.real(got, sign(z), || {
                    format!("d={d} real-valued case: got {got:e}, want {}", sign(z))
                });
            }
        }
        Ok(())
    })?;
    Ok(report)
}

/// Random identity-activation additive nets against their ReLU versions,
/// plus the converted sign network against the sign oracle.
pub fn verify_relu_conversion(dims: &[usize], cases: usize, seed: u64) -> Result<SuiteReport> {
    let mut report = SuiteReport::new("relu-convert", dims);
    let mut rng = Rng::new(seed);
    ops::uncounted(|| -> Result<()> {
        for &d in dims {
            for _ in 0..cases {
                let depth = 1 + rng.below(3);
                let mut layers = Vec::with_capacity(depth);
                let mut width = d;
                for _ in 0..depth {
                    let out = 1 + rng.below(4);
                    layers.push(Layer::AdditiveDense(additive(
                        crate::tensor::uniform_init(width, out, -1.0, 1.0, &mut rng)?,
                        rng.vector(out, -1.0, 1.0),
                        rng.vector(out, -1.0, 1.0),
                        Activation::Identity,
                    )));
                    width = out;
                }
                let net = Network::new(layers, LossKind::Mse)?;
                let relu = convert_to_relu_network(&net)?;
                let x = rng.vector(d, -2.0, 2.0);
                let (a, b) = (net.predict(&x)?, relu.predict(&x)?);
                let ok = a.iter().zip(b.iter()).all(|(a, b)| (a - b).abs() <= 1e-9);
                report.grid(false, ok, || format!("d={d} depth={depth}: {a:?} vs {b:?}"));

                let spec = SignNetSpec::new(dyadic_vector(&mut rng, d), dyadic(&mut rng, 4.0, 16))?;
                let x = dyadic_vector(&mut rng, d);
                let want = sign(spec.affine(&x));
                let got = convert_to_relu_network(&build_sign_network(&spec)?)?.predict(&x)?[0];
                report.grid(want == 0.0, got == want, || {
                    format!("d={d} converted sign net: got {got}, want {want}")
                });
            }
        }
        Ok(())
    })?;
    Ok(report)
}

fn random_superposition(rng: &mut Rng, d: usize, n: usize) -> Result<SuperpositionSpec> {
    let terms = (0..n)
        .map(|_| SuperpositionTerm {
            alpha: dyadic(rng, 4.0, 16),
            y: dyadic_vector(rng, d),
            theta: dyadic(rng, 4.0, 16),
        })
        .collect();
    let spec = SuperpositionSpec { terms };
    spec.validate()?;
    Ok(spec)
}

/// Superpositions of 1..=8 terms, plain and ReLU-converted, against the
/// direct sum. A case is a boundary case if any term sits on its boundary.
pub fn verify_superposition(dims: &[usize], cases: usize, seed: u64) -> Result<SuiteReport> {
    let mut report = SuiteReport::new("superposition", dims);
    let mut rng = Rng::new(seed);
    ops::uncounted(|| -> Result<()> {
        for &d in dims {
            for case in 0..cases {
                let n = 1 + case % 8;
                let spec = random_superposition(&mut rng, d, n)?;
                let x = dyadic_vector(&mut rng, d);
                let want = spec.evaluate(&x);
                let boundary = spec.terms.iter().any(|t| {
                    SignNetSpec {
                        y: t.y.clone(),
                        bias: t.theta,
                    }
                    .affine(&x)
                        == 0.0
                });
                for relu in [false, true] {
                    let got = build_superposition(&spec, relu)?.predict(&x)?[0];
                    report.grid(boundary, got == want, || {
                        format!("d={d} N={n} relu={relu}: got {got}, want {want}")
                    });
                }
            }
        }
        Ok(())
    })?;
    Ok(report)
}
