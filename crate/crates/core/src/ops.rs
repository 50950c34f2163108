//! Operation accounting.
//!
//! Every arithmetic kernel in the crate reports what it did, by operation
//! class, to a per-thread tally. Counting happens at the library-call level:
//! one ef term is two sign evaluations, two absolute values, one addition,
//! one sign comparison and one conditional negation, whatever the data.
//! Activation functions and the softmax are not tallied.
//!
//! [`scoped_count`] reports the tally attributable to a closure. Scopes nest
//! and compose additively because they are differences of one monotone
//! per-thread total.

use std::cell::Cell;
use std::fmt;
use std::ops::{Add, AddAssign, Sub};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OpCounter {
    pub mults: u64,
    pub adds: u64,
    pub signs: u64,
    pub compares: u64,
    pub abs_ops: u64,
    pub negations: u64,
}

impl OpCounter {
    pub fn is_zero(&self) -> bool {
        *self == OpCounter::default()
    }

    /// Tally for `n` ef terms.
    pub(crate) fn ef_terms(n: u64) -> OpCounter {
        OpCounter {
            mults: 0,
            adds: n,
            signs: 2 * n,
            compares: n,
            abs_ops: 2 * n,
            negations: n,
        }
    }
}

impl Add for OpCounter {
    type Output = OpCounter;
    fn add(self, o: OpCounter) -> OpCounter {
        OpCounter {
            mults: self.mults + o.mults,
            adds: self.adds + o.adds,
            signs: self.signs + o.signs,
            compares: self.compares + o.compares,
            abs_ops: self.abs_ops + o.abs_ops,
            negations: self.negations + o.negations,
        }
    }
}

impl AddAssign for OpCounter {
    fn add_assign(&mut self, o: OpCounter) {
        *self = *self + o;
    }
}

impl Sub for OpCounter {
    type Output = OpCounter;
    fn sub(self, o: OpCounter) -> OpCounter {
        OpCounter {
            mults: self.mults - o.mults,
            adds: self.adds - o.adds,
            signs: self.signs - o.signs,
            compares: self.compares - o.compares,
            abs_ops: self.abs_ops - o.abs_ops,
            negations: self.negations - o.negations,
        }
    }
}

impl fmt::Display for OpCounter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "mults={} adds={} signs={} compares={} abs={} negations={}",
            self.mults, self.adds, self.signs, self.compares, self.abs_ops, self.negations
        )
    }
}

thread_local! {
    static TOTAL: Cell<OpCounter> = const { Cell::new(OpCounter {
        mults: 0, adds: 0, signs: 0, compares: 0, abs_ops: 0, negations: 0,
    }) };
    static ENABLED: Cell<bool> = const { Cell::new(true) };
}

#[inline]
pub(crate) fn record(f: impl FnOnce(&mut OpCounter)) {
    if ENABLED.with(Cell::get) {
        TOTAL.with(|t| {
            let mut c = t.get();
            f(&mut c);
            t.set(c);
        });
    }
}

#[inline]
pub(crate) fn record_counts(delta: OpCounter) {
    record(|c| *c += delta);
}

/// Running per-thread total since thread start.
pub fn snapshot() -> OpCounter {
    TOTAL.with(Cell::get)
}

/// Runs `f` and returns what it tallied.
pub fn scoped_count<R>(f: impl FnOnce() -> R) -> (R, OpCounter) {
    let before = snapshot();
    let out = f();
    (out, snapshot() - before)
}

/// Runs `f` with counting suspended on this thread.
pub fn uncounted<R>(f: impl FnOnce() -> R) -> R {
    let prev = ENABLED.with(|e| e.replace(false));
    let out = f();
    ENABLED.with(|e| e.set(prev));
    out
}

/// Shape-level description of a layer, used for closed-form op predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerDesc {
    AdditiveDense {
        inputs: usize,
        outputs: usize,
        unit_scale_fast_path: bool,
    },
    ClassicDense {
        inputs: usize,
        outputs: usize,
    },
    AdditiveConv(ConvDesc),
    ClassicConv(ConvDesc),
    MaxPool2 {
        channels: usize,
        height: usize,
        width: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvDesc {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvDesc {
    pub fn output_hw(&self) -> (usize, usize) {
        (
            (self.height - self.kernel) / self.stride + 1,
            (self.width - self.kernel) / self.stride + 1,
        )
    }

    fn positions(&self) -> u64 {
        let (oh, ow) = self.output_hw();
        (oh * ow) as u64
    }

    fn patch_len(&self) -> u64 {
        (self.in_channels * self.kernel * self.kernel) as u64
    }
}

/// Predicted forward-pass tally for one layer.
///
/// Additive dense, `d` inputs, `M` outputs: `M` multiplications (the
/// scaling by `a`, none with the unit-scale fast path), `2dM + M` additions,
/// `2dM` sign evaluations and absolute values, `dM` comparisons and
/// conditional negations. Classic dense: `dM` multiplications and `dM`
/// additions (accumulation starts from the bias).
pub fn theoretical_counts(desc: &LayerDesc) -> Result<OpCounter> {
    match *desc {
        LayerDesc::AdditiveDense {
            inputs,
            outputs,
            unit_scale_fast_path,
        } => {
            if inputs == 0 || outputs == 0 {
                return Err(Error::param("additive dense layer needs non-zero shape"));
            }
            let (d, m) = (inputs as u64, outputs as u64);
            let mut c = OpCounter::ef_terms(d * m);
            c.adds += d * m + m;
            c.mults = if unit_scale_fast_path { 0 } else { m };
            Ok(c)
        }
        LayerDesc::ClassicDense { inputs, outputs } => {
            if inputs == 0 || outputs == 0 {
                return Err(Error::param("classic dense layer needs non-zero shape"));
            }
            let n = (inputs * outputs) as u64;
            Ok(OpCounter {
                mults: n,
                adds: n,
                ..OpCounter::default()
            })
        }
        LayerDesc::AdditiveConv(cd) => {
            check_conv(&cd)?;
            let units = cd.positions() * cd.filters as u64;
            let n = cd.patch_len();
            let mut c = OpCounter::ef_terms(units * n);
            c.adds += units * n + units;
            c.mults = units;
            Ok(c)
        }
        LayerDesc::ClassicConv(cd) => {
            check_conv(&cd)?;
            let n = cd.positions() * cd.filters as u64 * cd.patch_len();
            Ok(OpCounter {
                mults: n,
                adds: n,
                ..OpCounter::default()
            })
        }
        LayerDesc::MaxPool2 {
            channels,
            height,
            width,
        } => {
            if height % 2 != 0 || width % 2 != 0 {
                return Err(Error::param("max pool needs even spatial dims"));
            }
            Ok(OpCounter {
                compares: 3 * (channels * (height / 2) * (width / 2)) as u64,
                ..OpCounter::default()
            })
        }
    }
}

fn check_conv(cd: &ConvDesc) -> Result<()> {
    if cd.kernel == 0 || cd.stride == 0 || cd.filters == 0 || cd.in_channels == 0 {
        return Err(Error::param(
            "conv layer needs non-zero kernel, stride, filters, channels",
        ));
    }
    if cd.kernel > cd.height || cd.kernel > cd.width {
        return Err(Error::param("conv kernel larger than input"));
    }
    Ok(())
}

impl fmt::Display for LayerDesc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let conv = |f: &mut fmt::Formatter<'_>, kind: &str, c: &ConvDesc| {
            write!(
                f,
                "{kind}:{}x{}x{}/{}x{}",
                c.in_channels, c.height, c.width, c.kernel, c.filters
            )?;
            if c.stride != 1 {
                write!(f, "/{}", c.stride)?;
            }
            Ok(())
        };
        match self {
            LayerDesc::AdditiveDense {
                inputs,
                outputs,
                unit_scale_fast_path,
            } => {
                let kind = if *unit_scale_fast_path {
                    "additive1"
                } else {
                    "additive"
                };
                write!(f, "{kind}:{inputs}x{outputs}")
            }
            LayerDesc::ClassicDense { inputs, outputs } => write!(f, "classic:{inputs}x{outputs}"),
            LayerDesc::AdditiveConv(c) => conv(f, "additive-conv", c),
            LayerDesc::ClassicConv(c) => conv(f, "classic-conv", c),
            LayerDesc::MaxPool2 {
                channels,
                height,
                width,
            } => write!(f, "maxpool:{channels}x{height}x{width}"),
        }
    }
}

impl FromStr for LayerDesc {
    type Err = Error;

    /// Parses `additive:DxM`, `additive1:DxM` (unit-scale fast path),
    /// `classic:DxM`, `additive-conv:CxHxW/KxF[/S]`, `classic-conv:...`,
    /// `maxpool:CxHxW`.
    fn from_str(s: &str) -> Result<LayerDesc> {
        let (kind, shape) = s
            .split_once(':')
            .ok_or_else(|| Error::param(format!("layer description `{s}` lacks `kind:`")))?;
        let dims = |t: &str| -> Result<Vec<usize>> {
            t.split('x')
                .map(|p| {
                    p.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::param(format!("bad dimension `{p}` in `{s}`")))
                })
                .collect()
        };
        let pair = |t: &str| -> Result<(usize, usize)> {
            match dims(t)?.as_slice() {
                [a, b] => Ok((*a, *b)),
                _ => Err(Error::param(format!("expected DxM in `{s}`"))),
            }
        };
        let conv = |t: &str| -> Result<ConvDesc> {
            let parts: Vec<&str> = t.split('/').collect();
            if parts.len() < 2 || parts.len() > 3 {
                return Err(Error::param(format!("expected CxHxW/KxF[/S] in `{s}`")));
            }
            let chw = dims(parts[0])?;
            let kf = dims(parts[1])?;
            let stride = match parts.get(2) {
                Some(p) => p
                    .parse()
                    .map_err(|_| Error::param(format!("bad stride in `{s}`")))?,
                None => 1,
            };
            match (chw.as_slice(), kf.as_slice()) {
                ([c, h, w], [k, f]) => Ok(ConvDesc {
                    in_channels: *c,
                    height: *h,
                    width: *w,
                    kernel: *k,
                    filters: *f,
                    stride,
                }),
                _ => Err(Error::param(format!("expected CxHxW/KxF[/S] in `{s}`"))),
            }
        };
        match kind {
            "additive" | "additive1" => {
                let (inputs, outputs) = pair(shape)?;
                Ok(LayerDesc::AdditiveDense {
                    inputs,
                    outputs,
                    unit_scale_fast_path: kind == "additive1",
                })
            }
            "classic" => {
                let (inputs, outputs) = pair(shape)?;
                Ok(LayerDesc::ClassicDense { inputs, outputs })
            }
            "additive-conv" => Ok(LayerDesc::AdditiveConv(conv(shape)?)),
            "classic-conv" => Ok(LayerDesc::ClassicConv(conv(shape)?)),
            "maxpool" => match dims(shape)?.as_slice() {
                [c, h, w] => Ok(LayerDesc::MaxPool2 {
                    channels: *c,
                    height: *h,
                    width: *w,
                }),
                _ => Err(Error::param(format!("expected CxHxW in `{s}`"))),
            },
            other => Err(Error::param(format!("unknown layer kind `{other}`"))),
        }
    }
}
