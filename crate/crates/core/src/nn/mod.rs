//! Layer kernels: convolution (2D/3D), max pooling, dense layers, ReLU,
//! softmax cross-entropy, and the Adam optimizer.
//!
//! All kernels are pure functions over tensors in channels-first layout
//! `[batch, channels, spatial...]`; spatial dimensions keep the image order
//! (height, width[, depth]) used by the tile decomposition.

mod activ;
mod adam;
mod conv;
mod dense;
mod loss;
mod pool;

pub use activ::{relu_backward, relu_forward, softmax_backward, softmax_forward};
pub use adam::{adam_step, AdamState};
pub use conv::{conv_backward, conv_forward, ConvGrads};
pub use dense::{dense_backward, dense_forward, DenseGrads};
pub use loss::{softmax_cross_entropy, softmax_cross_entropy_backward};
pub use pool::{maxpool_backward, maxpool_forward};

use crate::error::{Error, Result};

/// Zero-padding strategy of a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Pad by (k-1)/2 on each side; preserves spatial extents at stride 1.
    Same,
    /// No padding; output shrinks by k-1.
    Valid,
}

/// Static description of a convolution layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvSpec {
    /// Kernel extent per spatial dimension (2 or 3 entries).
    pub kernel: Vec<usize>,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Stride per spatial dimension.
    pub stride: Vec<usize>,
    pub padding: Padding,
}

impl ConvSpec {
    /// Cubic kernel of extent `k` over `rank` spatial dimensions, stride 1.
    pub fn new(rank: usize, k: usize, in_channels: usize, out_channels: usize, padding: Padding) -> Result<ConvSpec> {
        ConvSpec {
            kernel: vec![k; rank],
            in_channels,
            out_channels,
            stride: vec![1; rank],
            padding,
        }
        .validated()
    }

    pub fn with_stride(mut self, stride: Vec<usize>) -> Result<ConvSpec> {
        self.stride = stride;
        self.validated()
    }

    fn validated(self) -> Result<ConvSpec> {
        let rank = self.kernel.len();
        if rank != 2 && rank != 3 {
            return Err(Error::Contract(format!("convolution rank must be 2 or 3, got {rank}")));
        }
        if self.stride.len() != rank {
            return Err(Error::Contract("stride rank must match kernel rank".into()));
        }
        if self.stride.iter().any(|&s| s == 0) {
            return Err(Error::Contract("stride must be >= 1".into()));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Contract("channel counts must be >= 1".into()));
        }
        if self.padding == Padding::Same && self.kernel.iter().any(|&k| k % 2 == 0) {
            return Err(Error::Contract(format!(
                "same padding requires odd kernel extents, got {:?}",
                self.kernel
            )));
        }
        Ok(self)
    }

    /// Spatial rank (2 or 3).
    pub fn rank(&self) -> usize {
        self.kernel.len()
    }

    /// Padding per spatial dimension.
    pub fn pad(&self) -> Vec<usize> {
        match self.padding {
            Padding::Same => self.kernel.iter().map(|&k| (k - 1) / 2).collect(),
            Padding::Valid => vec![0; self.kernel.len()],
        }
    }

    /// Expected weight shape `[out, in, kernel...]`.
    pub fn weight_shape(&self) -> Vec<usize> {
        let mut s = vec![self.out_channels, self.in_channels];
        s.extend_from_slice(&self.kernel);
        s
    }

    /// Output spatial extents for the given input extents.
    pub fn out_extents(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.len() != self.rank() {
            return Err(Error::Shape(format!(
                "convolution expects {} spatial dims, input has {:?}",
                self.rank(),
                input
            )));
        }
        let pad = self.pad();
        let mut out = Vec::with_capacity(input.len());
        for d in 0..input.len() {
            let padded = input[d] + 2 * pad[d];
            if padded < self.kernel[d] {
                return Err(Error::Shape(format!(
                    "spatial extent {} too small for kernel {} (valid padding)",
                    input[d], self.kernel[d]
                )));
            }
            out.push((padded - self.kernel[d]) / self.stride[d] + 1);
        }
        Ok(out)
    }
}
