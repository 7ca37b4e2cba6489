use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Activation shape flowing between layers: `channels` signals of `len` points each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub len: usize,
}

impl Shape {
    pub fn new(channels: usize, len: usize) -> Self {
        Self { channels, len }
    }

    pub fn size(&self) -> usize {
        self.channels * self.len
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.channels, self.len)
    }
}

/// One stage of a feed-forward network.
///
/// Dense layers read their input as a flat vector regardless of its channel
/// layout and emit a single-channel vector of `outputs` values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    Relu,
    Flatten,
    MaxPool1d {
        window: usize,
        stride: usize,
    },
}

impl LayerSpec {
    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        match *self {
            LayerSpec::Dense { inputs, outputs } => {
                if inputs != input.size() {
                    return Err(Error::shape(format!(
                        "dense expects {inputs} inputs, got {input}"
                    )));
                }
                if outputs == 0 {
                    return Err(Error::shape("dense layer with zero outputs"));
                }
                Ok(Shape::new(1, outputs))
            }
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                if in_channels != input.channels {
                    return Err(Error::shape(format!(
                        "conv1d expects {in_channels} channels, got {input}"
                    )));
                }
                if kernel == 0 || stride == 0 || out_channels == 0 {
                    return Err(Error::shape("conv1d with zero kernel, stride or channels"));
                }
                if input.len < kernel {
                    return Err(Error::shape(format!(
                        "conv1d kernel {kernel} longer than input {input}"
                    )));
                }
                Ok(Shape::new(out_channels, (input.len - kernel) / stride + 1))
            }
            LayerSpec::Relu => Ok(input),
            LayerSpec::Flatten => Ok(Shape::new(1, input.size())),
            LayerSpec::MaxPool1d { window, stride } => {
                if window == 0 || stride == 0 {
                    return Err(Error::shape("maxpool1d with zero window or stride"));
                }
                if input.len < window {
                    return Err(Error::shape(format!(
                        "maxpool1d window {window} longer than input {input}"
                    )));
                }
                Ok(Shape::new(input.channels, (input.len - window) / stride + 1))
            }
        }
    }

    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Dense { inputs, outputs } => inputs * outputs + outputs,
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => out_channels * in_channels * kernel + out_channels,
            LayerSpec::Relu | LayerSpec::Flatten | LayerSpec::MaxPool1d { .. } => 0,
        }
    }

    /// Forward FLOPs for one sample given the layer's output shape.
    ///
    /// Multiplies and adds are counted separately; bias adds count once per
    /// output; activation and pooling cost one FLOP per output element;
    /// flatten is free.
    pub fn forward_flops(&self, output: Shape) -> u64 {
        let out = output.size() as u64;
        match *self {
            LayerSpec::Dense { inputs, outputs } => {
                2 * inputs as u64 * outputs as u64 + outputs as u64
            }
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => output.len as u64 * out_channels as u64 * (2 * kernel as u64 * in_channels as u64 + 1),
            LayerSpec::Relu | LayerSpec::MaxPool1d { .. } => out,
            LayerSpec::Flatten => 0,
        }
    }

    /// (fan_in, fan_out) for Glorot initialisation.
    pub(crate) fn fans(&self) -> Option<(usize, usize)> {
        match *self {
            LayerSpec::Dense { inputs, outputs } => Some((inputs, outputs)),
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((in_channels * kernel, out_channels * kernel)),
            _ => None,
        }
    }

    /// Number of weights (excluding biases); weights precede biases in the layer's slice.
    pub(crate) fn weight_count(&self) -> usize {
        match *self {
            LayerSpec::Dense { inputs, outputs } => inputs * outputs,
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => out_channels * in_channels * kernel,
            _ => 0,
        }
    }
}

/// A layer as written in architecture strings: input sizes are left implicit
/// and filled in from the preceding shape.
///
/// Grammar (whitespace or comma separated tokens):
/// `conv1d:<out_ch>:<kernel>:<stride>`, `maxpool:<window>:<stride>`,
/// `dense:<outputs>`, `relu`, `flatten`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerToken {
    Dense(usize),
    Conv1d {
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    Relu,
    Flatten,
    MaxPool1d {
        window: usize,
        stride: usize,
    },
}

impl FromStr for LayerToken {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.trim().split(':');
        let kind = parts.next().unwrap_or_default().to_ascii_lowercase();
        let nums: Vec<usize> = parts
            .map(|p| {
                p.parse::<usize>()
                    .map_err(|_| Error::config(format!("bad number {p:?} in layer {s:?}")))
            })
            .collect::<Result<_>>()?;
        let arity = |n: usize| -> Result<()> {
            if nums.len() == n {
                Ok(())
            } else {
                Err(Error::config(format!(
                    "layer {s:?} takes {n} arguments, got {}",
                    nums.len()
                )))
            }
        };
        match kind.as_str() {
            "dense" => {
                arity(1)?;
                Ok(LayerToken::Dense(nums[0]))
            }
            "conv1d" | "conv" => {
                arity(3)?;
                Ok(LayerToken::Conv1d {
                    out_channels: nums[0],
                    kernel: nums[1],
                    stride: nums[2],
                })
            }
            "maxpool" | "maxpool1d" | "pool" => {
                arity(2)?;
                Ok(LayerToken::MaxPool1d {
                    window: nums[0],
                    stride: nums[1],
                })
            }
            "relu" => {
                arity(0)?;
                Ok(LayerToken::Relu)
            }
            "flatten" => {
                arity(0)?;
                Ok(LayerToken::Flatten)
            }
            _ => Err(Error::config(format!("unknown layer kind {kind:?}"))),
        }
    }
}

impl fmt::Display for LayerToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LayerToken::Dense(n) => write!(f, "dense:{n}"),
            LayerToken::Conv1d {
                out_channels,
                kernel,
                stride,
            } => write!(f, "conv1d:{out_channels}:{kernel}:{stride}"),
            LayerToken::Relu => write!(f, "relu"),
            LayerToken::Flatten => write!(f, "flatten"),
            LayerToken::MaxPool1d { window, stride } => write!(f, "maxpool:{window}:{stride}"),
        }
    }
}

/// Parsed architecture string, e.g. `"conv1d:8:7:2 relu maxpool:2:2 flatten dense:5"`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture(pub Vec<LayerToken>);

impl Architecture {
    /// Resolve implicit input sizes against a single-channel signal of `input_len` points.
    pub fn resolve(&self, input_len: usize) -> Result<Vec<LayerSpec>> {
        let mut shape = Shape::new(1, input_len);
        let mut layers = Vec::with_capacity(self.0.len());
        for token in &self.0 {
            let layer = match *token {
                LayerToken::Dense(outputs) => LayerSpec::Dense {
                    inputs: shape.size(),
                    outputs,
                },
                LayerToken::Conv1d {
                    out_channels,
                    kernel,
                    stride,
                } => LayerSpec::Conv1d {
                    in_channels: shape.channels,
                    out_channels,
                    kernel,
                    stride,
                },
                LayerToken::Relu => LayerSpec::Relu,
                LayerToken::Flatten => LayerSpec::Flatten,
                LayerToken::MaxPool1d { window, stride } => LayerSpec::MaxPool1d { window, stride },
            };
            shape = layer.output_shape(shape)?;
            layers.push(layer);
        }
        Ok(layers)
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let tokens = s
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .map(str::parse)
            .collect::<Result<Vec<_>>>()?;
        if tokens.is_empty() {
            return Err(Error::config("empty architecture"));
        }
        Ok(Architecture(tokens))
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}
