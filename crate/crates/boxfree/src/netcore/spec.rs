//! Network architecture descriptions.
//!
//! All convolutions are stride-1 with same padding, so every layer preserves
//! spatial dimensions and skip connections can concatenate freely.

use crate::error::{Error, Result};

/// Per-element nonlinearity. `LeakyRelu` uses a fixed 0.2 negative slope.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    LeakyRelu,
    Sigmoid,
    Tanh,
    Linear,
}

pub const LEAKY_SLOPE: f64 = 0.2;

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::LeakyRelu => {
                if z > 0.0 {
                    z
                } else {
                    LEAKY_SLOPE * z
                }
            }
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Tanh => z.tanh(),
            Activation::Linear => z,
        }
    }

    /// Derivative recovered from the activated value alone. Valid for every
    /// supported activation: the ReLU family's sign is preserved by the
    /// activation, and sigmoid/tanh derivatives are functions of the output.
    #[inline]
    pub fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if a > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Tanh => 1.0 - a * a,
            Activation::Linear => 1.0,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::LeakyRelu => 1,
            Activation::Sigmoid => 2,
            Activation::Tanh => 3,
            Activation::Linear => 4,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => Activation::Relu,
            1 => Activation::LeakyRelu,
            2 => Activation::Sigmoid,
            3 => Activation::Tanh,
            4 => Activation::Linear,
            other => return Err(Error::Checkpoint(format!("unknown activation code {other}"))),
        })
    }
}

/// Source of a skip connection: the raw network input or a layer's output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipFrom {
    Input,
    Layer(usize),
}

/// Concatenates the source's channels onto the input of layer `to`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Skip {
    pub from: SkipFrom,
    pub to: usize,
}

/// One stride-1, same-padding convolution followed by its activation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvLayer {
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub activation: Activation,
}

/// Architecture of a small convolutional network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetSpec {
    pub input_channels: usize,
    pub layers: Vec<ConvLayer>,
    pub skips: Vec<Skip>,
}

impl NetSpec {
    /// Plain chain of convolutions: `widths` are hidden channel counts, the
    /// final layer emits `out_channels`.
    pub fn conv_stack(
        input_channels: usize,
        widths: &[usize],
        out_channels: usize,
        kernel: usize,
        hidden: Activation,
        head: Activation,
    ) -> NetSpec {
        let mut layers = Vec::with_capacity(widths.len() + 1);
        let mut prev = input_channels;
        for &w in widths {
            layers.push(ConvLayer {
                kernel,
                in_channels: prev,
                out_channels: w,
                activation: hidden,
            });
            prev = w;
        }
        layers.push(ConvLayer {
            kernel,
            in_channels: prev,
            out_channels,
            activation: head,
        });
        NetSpec { input_channels, layers, skips: Vec::new() }
    }

    /// Adds a skip and widens the target layer's input accordingly.
    pub fn with_skip(mut self, from: SkipFrom, to: usize) -> NetSpec {
        let width = match from {
            SkipFrom::Input => self.input_channels,
            SkipFrom::Layer(i) => self.layers[i].out_channels,
        };
        self.layers[to].in_channels += width;
        self.skips.push(Skip { from, to });
        self
    }

    pub fn output_channels(&self) -> usize {
        self.layers.last().map(|l| l.out_channels).unwrap_or(0)
    }

    pub fn final_activation(&self) -> Option<Activation> {
        self.layers.last().map(|l| l.activation)
    }

    /// True when every activation before the head is ReLU.
    pub fn hidden_activations_all_relu(&self) -> bool {
        let n = self.layers.len();
        self.layers.iter().take(n.saturating_sub(1)).all(|l| l.activation == Activation::Relu)
    }

    pub fn skips_into(&self, layer: usize) -> impl Iterator<Item = &Skip> {
        self.skips.iter().filter(move |s| s.to == layer)
    }

    fn source_width(&self, from: SkipFrom) -> usize {
        match from {
            SkipFrom::Input => self.input_channels,
            SkipFrom::Layer(i) => self.layers[i].out_channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Spec("network needs at least one layer".into()));
        }
        if self.input_channels == 0 {
            return Err(Error::Spec("input channel count must be positive".into()));
        }
        for (j, layer) in self.layers.iter().enumerate() {
            if layer.kernel == 0 || layer.kernel % 2 == 0 {
                return Err(Error::Spec(format!(
                    "layer {j}: kernel size must be odd and positive, got {}",
                    layer.kernel
                )));
            }
            if layer.out_channels == 0 {
                return Err(Error::Spec(format!("layer {j}: zero output channels")));
            }
        }
        for (s_idx, skip) in self.skips.iter().enumerate() {
            if skip.to == 0 || skip.to >= self.layers.len() {
                return Err(Error::Spec(format!(
                    "skip {s_idx}: target layer {} out of range",
                    skip.to
                )));
            }
            if let SkipFrom::Layer(i) = skip.from {
                if i >= self.layers.len() {
                    return Err(Error::Spec(format!("skip {s_idx}: source layer {i} out of range")));
                }
                if i + 1 >= skip.to {
                    return Err(Error::Spec(format!(
                        "skip {s_idx}: source {i} must precede target {} by more than one layer",
                        skip.to
                    )));
                }
            }
            if self.skips[..s_idx].contains(skip) {
                return Err(Error::Spec(format!("skip {s_idx}: duplicate connection")));
            }
        }
        for (j, layer) in self.layers.iter().enumerate() {
            let main = if j == 0 {
                self.input_channels
            } else {
                self.layers[j - 1].out_channels
            };
            let expected: usize =
                main + self.skips_into(j).map(|s| self.source_width(s.from)).sum::<usize>();
            if layer.in_channels != expected {
                return Err(Error::Spec(format!(
                    "layer {j}: declares {} input channels but the chain provides {expected}",
                    layer.in_channels
                )));
            }
        }
        Ok(())
    }

    /// Total parameter count: per layer, `out*in*k*k` weights plus `out` biases.
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.out_channels * l.in_channels * l.kernel * l.kernel + l.out_channels)
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_stack_chains_channels() {
        let spec = NetSpec::conv_stack(1, &[16, 16], 1, 3, Activation::Relu, Activation::Sigmoid);
        assert!(spec.validate().is_ok());
        assert_eq!(spec.layers.len(), 3);
        assert_eq!(spec.param_count(), 16 * 9 + 16 + 16 * 16 * 9 + 16 + 16 * 9 + 1);
    }

    #[test]
    fn skip_widens_target_input() {
        let spec = NetSpec::conv_stack(2, &[8, 8], 1, 3, Activation::LeakyRelu, Activation::Sigmoid)
            .with_skip(SkipFrom::Input, 2);
        assert!(spec.validate().is_ok());
        assert_eq!(spec.layers[2].in_channels, 10);
    }

    #[test]
    fn validation_rejects_inconsistent_channels() {
        let mut spec =
            NetSpec::conv_stack(1, &[8], 1, 3, Activation::Relu, Activation::Sigmoid);
        spec.layers[1].in_channels = 5;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn validation_rejects_bad_skips() {
        let base =
            || NetSpec::conv_stack(1, &[8, 8], 1, 3, Activation::Relu, Activation::Sigmoid);
        let mut s = base();
        s.skips.push(Skip { from: SkipFrom::Layer(1), to: 2 });
        assert!(s.validate().is_err(), "adjacent skip duplicates the main path");
        let mut s = base();
        s.skips.push(Skip { from: SkipFrom::Input, to: 0 });
        assert!(s.validate().is_err(), "skip into layer 0 is redundant");
        let mut s = base();
        s.skips.push(Skip { from: SkipFrom::Input, to: 9 });
        assert!(s.validate().is_err(), "target out of range");
    }

    #[test]
    fn even_kernel_rejected() {
        let spec = NetSpec::conv_stack(1, &[], 1, 4, Activation::Relu, Activation::Sigmoid);
        assert!(spec.validate().is_err());
    }

    #[test]
    fn hidden_relu_detection() {
        let relu = NetSpec::conv_stack(1, &[4, 4], 1, 3, Activation::Relu, Activation::Sigmoid);
        assert!(relu.hidden_activations_all_relu());
        let mixed =
            NetSpec::conv_stack(1, &[4, 4], 1, 3, Activation::LeakyRelu, Activation::Sigmoid);
        assert!(!mixed.hidden_activations_all_relu());
    }
}
