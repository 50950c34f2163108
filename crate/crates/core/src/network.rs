//! Layer stacks.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{
    mse_loss, softmax_cross_entropy, Activation, AdditiveConv, AdditiveDense, ClassicConv,
    ClassicDense, ConvCache, ConvGeometry, DenseCache, GradMode, MaxPool2, ParamGrads, PoolCache,
};
use crate::ops::{theoretical_counts, ConvDesc, LayerDesc};
use crate::tensor::{Rng, Vector};

/// Which scoring function a layer uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operator {
    /// `a ⊙ (x ◇ W) + b`
    Ef,
    /// `xW + b`
    Classic,
}

impl fmt::Display for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Operator::Ef => "ef",
            Operator::Classic => "classic",
        })
    }
}

impl FromStr for Operator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ef" | "additive" => Ok(Operator::Ef),
            "classic" | "c" => Ok(Operator::Classic),
            other => Err(Error::param(format!("unknown operator `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Mse,
}

/// Marks the point where a feature map is consumed as a plain vector.
/// Maps are already stored flat, so this is the identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flatten {
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    AdditiveDense(AdditiveDense),
    ClassicDense(ClassicDense),
    AdditiveConv(AdditiveConv),
    ClassicConv(ClassicConv),
    MaxPool2(MaxPool2),
    Flatten(Flatten),
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerCache {
    Dense(DenseCache),
    Conv(ConvCache),
    Pool(PoolCache),
    Passthrough,
}

impl Layer {
    pub fn input_len(&self) -> usize {
        match self {
            Layer::AdditiveDense(l) => l.inputs(),
            Layer::ClassicDense(l) => l.inputs(),
            Layer::AdditiveConv(l) => l.input_len(),
            Layer::ClassicConv(l) => l.input_len(),
            Layer::MaxPool2(l) => l.input_len(),
            Layer::Flatten(l) => l.len,
        }
    }

    pub fn output_len(&self) -> usize {
        match self {
            Layer::AdditiveDense(l) => l.outputs(),
            Layer::ClassicDense(l) => l.outputs(),
            Layer::AdditiveConv(l) => l.output_len(),
            Layer::ClassicConv(l) => l.output_len(),
            Layer::MaxPool2(l) => l.output_len(),
            Layer::Flatten(l) => l.len,
        }
    }

    pub fn operator(&self) -> Option<Operator> {
        match self {
            Layer::AdditiveDense(_) | Layer::AdditiveConv(_) => Some(Operator::Ef),
            Layer::ClassicDense(_) | Layer::ClassicConv(_) => Some(Operator::Classic),
            _ => None,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::AdditiveDense(_) => "additive_dense",
            Layer::ClassicDense(_) => "classic_dense",
            Layer::AdditiveConv(_) => "additive_conv",
            Layer::ClassicConv(_) => "classic_conv",
            Layer::MaxPool2(_) => "max_pool2",
            Layer::Flatten(_) => "flatten",
        }
    }

    /// Shape description for op-count predictions. Flatten has none.
    pub fn describe(&self) -> Option<LayerDesc> {
        Some(match self {
            Layer::AdditiveDense(l) => LayerDesc::AdditiveDense {
                inputs: l.inputs(),
                outputs: l.outputs(),
                unit_scale_fast_path: l.unit_scale_fast_path,
            },
            Layer::ClassicDense(l) => LayerDesc::ClassicDense {
                inputs: l.inputs(),
                outputs: l.outputs(),
            },
            Layer::AdditiveConv(l) => LayerDesc::AdditiveConv(l.geometry.desc(l.filters())),
            Layer::ClassicConv(l) => LayerDesc::ClassicConv(l.geometry.desc(l.filters())),
            Layer::MaxPool2(l) => LayerDesc::MaxPool2 {
                channels: l.channels,
                height: l.height,
                width: l.width,
            },
            Layer::Flatten(_) => return None,
        })
    }

    /// A freshly initialized layer of the described shape.
    pub fn from_desc(desc: &LayerDesc, activation: Activation, rng: &mut Rng) -> Result<Layer> {
        theoretical_counts(desc)?;
        let geometry =
            |c: &ConvDesc| ConvGeometry::new(c.in_channels, c.height, c.width, c.kernel, c.stride);
        Ok(match *desc {
            LayerDesc::AdditiveDense {
                inputs,
                outputs,
                unit_scale_fast_path,
            } => {
                let mut l = AdditiveDense::init(inputs, outputs, activation, rng);
                l.unit_scale_fast_path = unit_scale_fast_path;
                Layer::AdditiveDense(l)
            }
            LayerDesc::ClassicDense { inputs, outputs } => {
                Layer::ClassicDense(ClassicDense::init(inputs, outputs, activation, rng))
            }
            LayerDesc::AdditiveConv(c) => Layer::AdditiveConv(AdditiveConv::init(
                geometry(&c)?,
                c.filters,
                activation,
                rng,
            )?),
            LayerDesc::ClassicConv(c) => Layer::ClassicConv(ClassicConv::init(
                geometry(&c)?,
                c.filters,
                activation,
                rng,
            )?),
            LayerDesc::MaxPool2 {
                channels,
                height,
                width,
            } => Layer::MaxPool2(MaxPool2::new(channels, height, width)?),
        })
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::AdditiveDense(l) => l.w.as_slice().len() + l.a.len() + l.b.len(),
            Layer::ClassicDense(l) => l.w.as_slice().len() + l.b.len(),
            Layer::AdditiveConv(l) => l.kernels.as_slice().len() + l.a.len() + l.b.len(),
            Layer::ClassicConv(l) => l.kernels.as_slice().len() + l.b.len(),
            _ => 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Layer::AdditiveDense(l) => l.validate(),
            Layer::ClassicDense(l) => l.validate(),
            Layer::AdditiveConv(l) => l.validate(),
            Layer::ClassicConv(l) => l.validate(),
            Layer::MaxPool2(l) => l.validate(),
            Layer::Flatten(_) => Ok(()),
        }
    }

    pub fn predict(&self, x: &Vector) -> Result<Vector> {
        match self {
            Layer::AdditiveDense(l) => l.predict(x),
            Layer::ClassicDense(l) => l.predict(x),
            Layer::AdditiveConv(l) => l.predict(x),
            Layer::ClassicConv(l) => l.predict(x),
            Layer::MaxPool2(l) => Ok(l.forward(x)?.0),
            Layer::Flatten(l) => flatten_check(l, x).map(|_| x.clone()),
        }
    }

    pub fn forward(&self, x: &Vector) -> Result<(Vector, LayerCache)> {
        Ok(match self {
            Layer::AdditiveDense(l) => {
                let (y, c) = l.forward(x)?;
                (y, LayerCache::Dense(c))
            }
            Layer::ClassicDense(l) => {
                let (y, c) = l.forward(x)?;
                (y, LayerCache::Dense(c))
            }
            Layer::AdditiveConv(l) => {
                let (y, c) = l.forward(x)?;
                (y, LayerCache::Conv(c))
            }
            Layer::ClassicConv(l) => {
                let (y, c) = l.forward(x)?;
                (y, LayerCache::Conv(c))
            }
            Layer::MaxPool2(l) => {
                let (y, c) = l.forward(x)?;
                (y, LayerCache::Pool(c))
            }
            Layer::Flatten(l) => {
                flatten_check(l, x)?;
                (x.clone(), LayerCache::Passthrough)
            }
        })
    }

    fn empty_grads(&self) -> Option<ParamGrads> {
        match self {
            Layer::AdditiveDense(l) => Some(ParamGrads::zeros(l.inputs(), l.outputs(), true)),
            Layer::ClassicDense(l) => Some(ParamGrads::zeros(l.inputs(), l.outputs(), false)),
            Layer::AdditiveConv(l) => Some(ParamGrads::zeros(l.kernels.rows(), l.filters(), true)),
            Layer::ClassicConv(l) => Some(ParamGrads::zeros(l.kernels.rows(), l.filters(), false)),
            _ => None,
        }
    }

    fn backward_into(
        &self,
        cache: &LayerCache,
        upstream: &Vector,
        mode: GradMode,
        grads: Option<&mut ParamGrads>,
        want_gx: bool,
    ) -> Result<Vector> {
        let mismatch = || {
            Error::shape(format!(
                "cache does not belong to a {} layer",
                self.kind_name()
            ))
        };
        match (self, cache) {
            (Layer::AdditiveDense(l), LayerCache::Dense(c)) => {
                l.backward_into(c, upstream, mode, grads.ok_or_else(mismatch)?, want_gx)
            }
            (Layer::ClassicDense(l), LayerCache::Dense(c)) => {
                l.backward_into(c, upstream, grads.ok_or_else(mismatch)?, want_gx)
            }
            (Layer::AdditiveConv(l), LayerCache::Conv(c)) => {
                l.backward_into(c, upstream, mode, grads.ok_or_else(mismatch)?, want_gx)
            }
            (Layer::ClassicConv(l), LayerCache::Conv(c)) => {
                l.backward_into(c, upstream, grads.ok_or_else(mismatch)?, want_gx)
            }
            (Layer::MaxPool2(l), LayerCache::Pool(c)) => {
                if want_gx {
                    l.backward(c, upstream)
                } else {
                    Ok(Vector::zeros(0))
                }
            }
            (Layer::Flatten(_), LayerCache::Passthrough) => Ok(upstream.clone()),
            _ => Err(mismatch()),
        }
    }

    fn apply_update(&mut self, grads: &ParamGrads, lr: f64) {
        match self {
            Layer::AdditiveDense(l) => l.apply_update(grads, lr),
            Layer::ClassicDense(l) => l.apply_update(grads, lr),
            Layer::AdditiveConv(l) => l.apply_update(grads, lr),
            Layer::ClassicConv(l) => l.apply_update(grads, lr),
            _ => {}
        }
    }
}

fn flatten_check(l: &Flatten, x: &Vector) -> Result<()> {
    if x.len() != l.len {
        return Err(Error::shape(format!(
            "flatten expects {} values, got {}",
            l.len,
            x.len()
        )));
    }
    Ok(())
}

/// Per-layer parameter gradients; `None` for parameterless layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Option<ParamGrads>>);

impl Gradients {
    pub fn clear(&mut self) {
        self.0.iter_mut().flatten().for_each(ParamGrads::clear);
    }

    pub fn scale(&mut self, k: f64) {
        self.0.iter_mut().flatten().for_each(|g| g.scale(k));
    }

    /// All gradient entries in layer order.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in self.0.iter().flatten() {
            out.extend_from_slice(g.w.as_slice());
            out.extend_from_slice(g.a.as_slice());
            out.extend_from_slice(g.b.as_slice());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub layers: Vec<Layer>,
    pub loss: LossKind,
}

impl Network {
    pub fn new(layers: Vec<Layer>, loss: LossKind) -> Result<Self> {
        let net = Network { layers, loss };
        net.validate()?;
        Ok(net)
    }

    /// Checks every layer and that consecutive shapes chain.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::param("network has no layers"));
        }
        for l in &self.layers {
            l.validate()?;
        }
        for (k, pair) in self.layers.windows(2).enumerate() {
            if pair[0].output_len() != pair[1].input_len() {
                return Err(Error::shape(format!(
                    "layer {k} ({}) emits {} values but layer {} ({}) expects {}",
                    pair[0].kind_name(),
                    pair[0].output_len(),
                    k + 1,
                    pair[1].kind_name(),
                    pair[1].input_len()
                )));
            }
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.layers.first().map_or(0, Layer::input_len)
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().map_or(0, Layer::output_len)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// The operator of the hidden (non-output) scoring layers, if uniform.
    pub fn hidden_operator(&self) -> Option<Operator> {
        let scoring: Vec<Operator> = self.layers.iter().filter_map(Layer::operator).collect();
        let (_, hidden) = scoring.split_last()?;
        let first = *hidden.first()?;
        hidden.iter().all(|&o| o == first).then_some(first)
    }

    pub fn predict(&self, x: &Vector) -> Result<Vector> {
        let mut h = x.clone();
        for l in &self.layers {
            h = l.predict(&h)?;
        }
        Ok(h)
    }

    pub fn forward(&self, x: &Vector) -> Result<(Vector, Vec<LayerCache>)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for l in &self.layers {
            let (y, c) = l.forward(&h)?;
            caches.push(c);
            h = y;
        }
        Ok((h, caches))
    }

    /// Loss and its gradient with respect to the network output.
    pub fn loss(&self, output: &Vector, target: &Vector) -> Result<(f64, Vector)> {
        match self.loss {
            LossKind::CrossEntropy => softmax_cross_entropy(output, target),
            LossKind::Mse => mse_loss(output, target),
        }
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients(self.layers.iter().map(Layer::empty_grads).collect())
    }

    /// Adds one sample's parameter gradients into `grads`; returns the
    /// gradient with respect to the network input.
    pub fn backward(
        &self,
        caches: &[LayerCache],
        gout: &Vector,
        mode: GradMode,
        grads: &mut Gradients,
    ) -> Result<Vector> {
        self.backward_impl(caches, gout, mode, grads, true)
    }

    fn backward_impl(
        &self,
        caches: &[LayerCache],
        gout: &Vector,
        mode: GradMode,
        grads: &mut Gradients,
        want_input_grad: bool,
    ) -> Result<Vector> {
        if caches.len() != self.layers.len() || grads.0.len() != self.layers.len() {
            return Err(Error::shape(
                "backward: caches or gradients do not match the network",
            ));
        }
        let mut g = gout.clone();
        for k in (0..self.layers.len()).rev() {
            let want_gx = k > 0 || want_input_grad;
            g = self.layers[k].backward_into(&caches[k], &g, mode, grads.0[k].as_mut(), want_gx)?;
        }
        Ok(g)
    }

    /// Loss of one sample, accumulating its gradients into `grads`.
    pub fn accumulate_sample(
        &self,
        x: &Vector,
        target: &Vector,
        mode: GradMode,
        grads: &mut Gradients,
    ) -> Result<(f64, Vector)> {
        let (out, caches) = self.forward(x)?;
        let (loss, gout) = self.loss(&out, target)?;
        self.backward_impl(&caches, &gout, mode, grads, false)?;
        Ok((loss, out))
    }

    /// `p <- p - lr * g` for every parameter.
    pub fn apply_update(&mut self, grads: &Gradients, lr: f64) -> Result<()> {
        if grads.0.len() != self.layers.len() {
            return Err(Error::shape("gradients do not match the network"));
        }
        for (l, g) in self.layers.iter_mut().zip(&grads.0) {
            if let Some(g) = g {
                l.apply_update(g, lr);
            }
        }
        Ok(())
    }

    /// All parameters in layer order (W, a, b).
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                Layer::AdditiveDense(l) => {
                    out.extend_from_slice(l.w.as_slice());
                    out.extend_from_slice(l.a.as_slice());
                    out.extend_from_slice(l.b.as_slice());
                }
                Layer::ClassicDense(l) => {
                    out.extend_from_slice(l.w.as_slice());
                    out.extend_from_slice(l.b.as_slice());
                }
                Layer::AdditiveConv(l) => {
                    out.extend_from_slice(l.kernels.as_slice());
                    out.extend_from_slice(l.a.as_slice());
                    out.extend_from_slice(l.b.as_slice());
                }
                Layer::ClassicConv(l) => {
                    out.extend_from_slice(l.kernels.as_slice());
                    out.extend_from_slice(l.b.as_slice());
                }
                _ => {}
            }
        }
        out
    }
}
