use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub activation: Activation,
    pub followed_by_pool: bool,
}

/// Ordered stack of same-padded convolutions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlockSpec {
    pub layers: Vec<ConvLayer>,
}

/// Channel widths and kernel size shared by all networks of a model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    /// 1 (grayscale) or 3 (RGB).
    pub image_channels: usize,
    pub kernel: usize,
    /// Every hidden width is divided by this (rounded up, at least 1).
    pub width_divisor: usize,
    /// Keep the 1-channel conv7 head on the extractor.
    pub aux_head: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            image_channels: 1,
            kernel: 5,
            width_divisor: 1,
            aux_head: false,
        }
    }
}

pub const EXTRACTOR_WIDTHS: [usize; 6] = [16, 16, 32, 32, 64, 32];
pub const MOTION_WIDTHS: [usize; 5] = [128, 128, 64, 64, 32];
pub const DECODER_WIDTHS: [usize; 2] = [64, 32];

/// Extractor layers whose activations are exposed as per-scale features,
/// finest first (conv2, conv4, conv6).
pub const EXTRACTOR_TAPS: [usize; 3] = [1, 3, 5];

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if !matches!(self.image_channels, 1 | 3) {
            return Err(Error::Config(format!("image_channels must be 1 or 3, got {}", self.image_channels)));
        }
        if self.kernel % 2 == 0 || self.kernel == 0 {
            return Err(Error::Config(format!("kernel must be odd, got {}", self.kernel)));
        }
        if self.width_divisor == 0 {
            return Err(Error::Config("width_divisor must be at least 1".into()));
        }
        Ok(())
    }

    pub fn width(&self, c: usize) -> usize {
        c.div_ceil(self.width_divisor).max(1)
    }

    /// Output channels of extractor layer `layer` (one of `EXTRACTOR_TAPS`).
    pub fn tap_channels(&self, layer: usize) -> usize {
        self.width(EXTRACTOR_WIDTHS[layer])
    }

    pub fn extractor(&self) -> ConvBlockSpec {
        let mut widths: Vec<usize> = EXTRACTOR_WIDTHS.iter().map(|&c| self.width(c)).collect();
        if self.aux_head {
            widths.push(1);
        }
        let mut spec = self.chain(self.image_channels, &widths);
        spec.layers[1].followed_by_pool = true;
        spec.layers[3].followed_by_pool = true;
        if !self.aux_head {
            // conv6 is the feature tap, not an output head.
            spec.layers[5].activation = Activation::Relu;
        }
        spec
    }

    pub fn motion(&self, in_channels: usize) -> ConvBlockSpec {
        let mut widths: Vec<usize> = MOTION_WIDTHS.iter().map(|&c| self.width(c)).collect();
        widths.push(2);
        self.chain(in_channels, &widths)
    }

    pub fn decoder(&self, in_channels: usize) -> ConvBlockSpec {
        let mut widths: Vec<usize> = DECODER_WIDTHS.iter().map(|&c| self.width(c)).collect();
        widths.push(1);
        self.chain(in_channels, &widths)
    }

    fn chain(&self, in_channels: usize, widths: &[usize]) -> ConvBlockSpec {
        let k = self.kernel;
        let mut c_in = in_channels;
        let layers = widths
            .iter()
            .enumerate()
            .map(|(i, &c_out)| {
                let layer = ConvLayer {
                    out_channels: c_out,
                    in_channels: c_in,
                    kernel_h: k,
                    kernel_w: k,
                    activation: if i + 1 == widths.len() { Activation::Linear } else { Activation::Relu },
                    followed_by_pool: false,
                };
                c_in = c_out;
                layer
            })
            .collect();
        ConvBlockSpec { layers }
    }
}

impl ConvBlockSpec {
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("empty conv block".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.kernel_h % 2 == 0 || l.kernel_w % 2 == 0 {
                return Err(Error::Config(format!("layer {i}: kernel sizes must be odd")));
            }
            if l.kernel_h != l.kernel_w {
                return Err(Error::Config(format!("layer {i}: only square kernels are supported")));
            }
            if l.in_channels == 0 || l.out_channels == 0 {
                return Err(Error::Config(format!("layer {i}: zero channels")));
            }
            if i > 0 && self.layers[i - 1].out_channels != l.in_channels {
                return Err(Error::Config(format!(
                    "layer {i}: expects {} input channels but previous layer gives {}",
                    l.in_channels,
                    self.layers[i - 1].out_channels
                )));
            }
        }
        Ok(())
    }

    pub fn in_channels(&self) -> usize {
        self.layers[0].in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_channels)
    }

    pub fn num_pools(&self) -> usize {
        self.layers.iter().filter(|l| l.followed_by_pool).count()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.out_channels * l.in_channels * l.kernel_h * l.kernel_w + l.out_channels)
            .sum()
    }
}
