//! Layer descriptions and the shape/parameter arithmetic that goes with them.
//!
//! All convolutions are stride 1 with no padding, so each spatial extent
//! shrinks by `kernel - 1`. Pooling uses a 2-wide window with stride 2 and
//! floors odd extents. Tensors are channels-last: a 1D feature map is
//! `[length, channels]` and a 2D one is `[height, width, channels]`.

use std::fmt;

use crate::error::{NnError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    None,
    Relu,
    Sigmoid,
}

impl Activation {
    #[inline(always)]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::None => z,
            // NaN passes through so corrupt parameters surface in the loss.
            Activation::Relu => {
                if z < 0.0 {
                    0.0
                } else {
                    z
                }
            }
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline(always)]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::None => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::None => 0,
            Activation::Relu => 1,
            Activation::Sigmoid => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::None),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Sigmoid),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    Conv1D {
        kernel: usize,
        filters: usize,
        activation: Activation,
    },
    Conv2D {
        kernel: (usize, usize),
        filters: usize,
        activation: Activation,
    },
    MaxPool1D,
    MaxPool2D,
    Flatten,
    Dense {
        units: usize,
        activation: Activation,
    },
    Dropout {
        rate: f64,
    },
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.kind_name())
    }
}

impl LayerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv1D { .. } => "Conv1D",
            LayerSpec::Conv2D { .. } => "Conv2D",
            LayerSpec::MaxPool1D => "MaxPooling1D",
            LayerSpec::MaxPool2D => "MaxPooling2D",
            LayerSpec::Flatten => "Flatten",
            LayerSpec::Dense { .. } => "Dense",
            LayerSpec::Dropout { .. } => "Dropout",
        }
    }

    pub fn activation(&self) -> Activation {
        match self {
            LayerSpec::Conv1D { activation, .. }
            | LayerSpec::Conv2D { activation, .. }
            | LayerSpec::Dense { activation, .. } => *activation,
            _ => Activation::None,
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(
            self,
            LayerSpec::Conv1D { .. } | LayerSpec::Conv2D { .. } | LayerSpec::Dense { .. }
        )
    }

    /// Output extents (without the batch axis) for the given input extents.
    pub fn output_shape(&self, index: usize, input: &[usize]) -> Result<Vec<usize>> {
        let invalid = |reason: String| NnError::InvalidLayer {
            layer: index,
            kind: self.kind_name(),
            input: input.to_vec(),
            reason,
        };
        match self {
            LayerSpec::Conv1D {
                kernel, filters, ..
            } => {
                let [len, _] = input else {
                    return Err(invalid("expected [length, channels]".into()));
                };
                if *kernel == 0 || *filters == 0 || kernel > len {
                    return Err(invalid(format!("kernel {kernel} does not fit")));
                }
                Ok(vec![len - kernel + 1, *filters])
            }
            LayerSpec::Conv2D {
                kernel: (kh, kw),
                filters,
                ..
            } => {
                let [h, w, _] = input else {
                    return Err(invalid("expected [height, width, channels]".into()));
                };
                if *kh == 0 || *kw == 0 || *filters == 0 || kh > h || kw > w {
                    return Err(invalid(format!("kernel {kh}x{kw} does not fit")));
                }
                Ok(vec![h - kh + 1, w - kw + 1, *filters])
            }
            LayerSpec::MaxPool1D => {
                let [len, c] = input else {
                    return Err(invalid("expected [length, channels]".into()));
                };
                if *len < 2 {
                    return Err(invalid("length below pool window".into()));
                }
                Ok(vec![len / 2, *c])
            }
            LayerSpec::MaxPool2D => {
                let [h, w, c] = input else {
                    return Err(invalid("expected [height, width, channels]".into()));
                };
                if *h < 2 || *w < 2 {
                    return Err(invalid("extent below pool window".into()));
                }
                Ok(vec![h / 2, w / 2, *c])
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Dense { units, .. } => {
                if input.len() != 1 {
                    return Err(invalid("dense layers take a flat vector".into()));
                }
                if *units == 0 {
                    return Err(invalid("zero units".into()));
                }
                Ok(vec![*units])
            }
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(rate) {
                    return Err(NnError::InvalidRate(*rate));
                }
                Ok(input.to_vec())
            }
        }
    }

    /// Weight and bias extents for parameterised layers.
    pub fn param_shapes(&self, input: &[usize]) -> Option<(Vec<usize>, Vec<usize>)> {
        match self {
            LayerSpec::Conv1D {
                kernel, filters, ..
            } => Some((vec![*kernel, input[1], *filters], vec![*filters])),
            LayerSpec::Conv2D {
                kernel: (kh, kw),
                filters,
                ..
            } => Some((vec![*kh, *kw, input[2], *filters], vec![*filters])),
            LayerSpec::Dense { units, .. } => Some((vec![input[0], *units], vec![*units])),
            _ => None,
        }
    }

    /// Weights plus biases.
    pub fn param_count(&self, input: &[usize]) -> usize {
        self.param_shapes(input)
            .map(|(w, b)| w.iter().product::<usize>() + b.iter().product::<usize>())
            .unwrap_or(0)
    }

    /// Glorot fan-in / fan-out for initialisation.
    pub(crate) fn fans(&self, input: &[usize]) -> Option<(usize, usize)> {
        match self {
            LayerSpec::Conv1D {
                kernel, filters, ..
            } => Some((kernel * input[1], kernel * filters)),
            LayerSpec::Conv2D {
                kernel: (kh, kw),
                filters,
                ..
            } => Some((kh * kw * input[2], kh * kw * filters)),
            LayerSpec::Dense { units, .. } => Some((input[0], *units)),
            _ => None,
        }
    }
}
