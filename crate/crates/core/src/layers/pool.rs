use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::Vector;

/// Non-overlapping 2x2 max pooling over a channel-major map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaxPool2 {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

/// Flat input index that won each output window.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolCache {
    pub argmax: Vec<usize>,
}

impl MaxPool2 {
    pub fn new(channels: usize, height: usize, width: usize) -> Result<Self> {
        let p = MaxPool2 {
            channels,
            height,
            width,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.height % 2 != 0 || self.width % 2 != 0 {
            return Err(Error::shape(format!(
                "max pool needs even spatial dims, got {}x{}",
                self.height, self.width
            )));
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn output_len(&self) -> usize {
        self.channels * (self.height / 2) * (self.width / 2)
    }

    pub fn forward(&self, x: &Vector) -> Result<(Vector, PoolCache)> {
        self.validate()?;
        if x.len() != self.input_len() {
            return Err(Error::shape(format!(
                "max pool expects {} inputs, got {}",
                self.input_len(),
                x.len()
            )));
        }
        let (oh, ow) = (self.height / 2, self.width / 2);
        let mut out = Vec::with_capacity(self.output_len());
        let mut argmax = Vec::with_capacity(self.output_len());
        for c in 0..self.channels {
            let base = c * self.height * self.width;
            for oy in 0..oh {
                for ox in 0..ow {
                    let top = base + 2 * oy * self.width + 2 * ox;
                    let cands = [top, top + 1, top + self.width, top + self.width + 1];
                    let mut best = cands[0];
                    for &idx in &cands[1..] {
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        let n = 3 * self.output_len() as u64;
        ops::record(|c| c.compares += n);
        Ok((out.into(), PoolCache { argmax }))
    }

    /// Routes each upstream value to the input that won its window.
    pub fn backward(&self, cache: &PoolCache, upstream: &Vector) -> Result<Vector> {
        if upstream.len() != cache.argmax.len() || upstream.len() != self.output_len() {
            return Err(Error::shape(
                "max pool backward: upstream does not match cache",
            ));
        }
        let mut gx = vec![0.0; self.input_len()];
        for (&idx, &g) in cache.argmax.iter().zip(upstream.iter()) {
            gx[idx] += g;
        }
        Ok(gx.into())
    }
}
