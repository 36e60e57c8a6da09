use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    /// Fully connected; consumes the flattened input.
    Dense { inputs: usize, outputs: usize },
    /// Same-padded 1-D convolution with an odd kernel.
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    },
    MaxPool1d { size: usize },
    Relu,
    Flatten,
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Dense { .. } => "dense",
            Layer::Conv1d { .. } => "conv1d",
            Layer::MaxPool1d { .. } => "maxpool1d",
            Layer::Relu => "relu",
            Layer::Flatten => "flatten",
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, Layer::Dense { .. } | Layer::Conv1d { .. })
    }

    /// `(weight extents, bias extents)` for parameterized layers.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            Layer::Dense { inputs, outputs } => Some((vec![outputs, inputs], vec![outputs])),
            Layer::Conv1d {
                in_channels,
                out_channels,
                kernel,
            } => Some((vec![out_channels, in_channels, kernel], vec![out_channels])),
            _ => None,
        }
    }

    /// Fan-in and fan-out used by the uniform Glorot initializer.
    pub fn fans(&self) -> Option<(usize, usize)> {
        match *self {
            Layer::Dense { inputs, outputs } => Some((inputs, outputs)),
            Layer::Conv1d {
                in_channels,
                out_channels,
                kernel,
            } => Some((in_channels * kernel, out_channels * kernel)),
            _ => None,
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Layer::Dense { inputs, outputs } => write!(f, "Dense({inputs}->{outputs})"),
            Layer::Conv1d {
                in_channels,
                out_channels,
                kernel,
            } => write!(f, "Conv1D({in_channels}->{out_channels}, k{kernel}, same)"),
            Layer::MaxPool1d { size } => write!(f, "MaxPool1D({size})"),
            Layer::Relu => f.write_str("ReLU"),
            Layer::Flatten => f.write_str("Flatten"),
        }
    }
}

/// Activation extent: `channels x length`, stored channel-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Extent {
    pub channels: usize,
    pub length: usize,
}

impl Extent {
    pub fn size(&self) -> usize {
        self.channels * self.length
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    /// Number of sub-bins fed to the network (one input channel).
    pub input_length: usize,
    pub layers: Vec<Layer>,
}

impl NetworkSpec {
    pub fn new(input_length: usize, layers: Vec<Layer>) -> Result<Self> {
        let spec = Self {
            input_length,
            layers,
        };
        spec.extents()?;
        Ok(spec)
    }

    pub fn input_extent(&self) -> Extent {
        Extent {
            channels: 1,
            length: self.input_length,
        }
    }

    /// Extent entering each layer followed by the final output extent.
    pub fn extents(&self) -> Result<Vec<Extent>> {
        if self.input_length == 0 {
            return Err(Error::Spec("input length must be >= 1".into()));
        }
        let mut cur = self.input_extent();
        let mut out = vec![cur];
        for (i, layer) in self.layers.iter().enumerate() {
            let err = |msg: String| Error::Spec(format!("layer {i} ({layer}): {msg}"));
            cur = match *layer {
                Layer::Dense { inputs, outputs } => {
                    if inputs != cur.size() || outputs == 0 {
                        return Err(err(format!("expects {inputs} inputs, receives {}", cur.size())));
                    }
                    Extent {
                        channels: 1,
                        length: outputs,
                    }
                }
                Layer::Conv1d {
                    in_channels,
                    out_channels,
                    kernel,
                } => {
                    if in_channels != cur.channels {
                        return Err(err(format!(
                            "expects {in_channels} channels, receives {}",
                            cur.channels
                        )));
                    }
                    if kernel % 2 == 0 || out_channels == 0 {
                        return Err(err("kernel must be odd and channels positive".into()));
                    }
                    Extent {
                        channels: out_channels,
                        length: cur.length,
                    }
                }
                Layer::MaxPool1d { size } => {
                    if size == 0 || !cur.length.is_multiple_of(size) {
                        return Err(err(format!("pool size {size} does not divide {}", cur.length)));
                    }
                    Extent {
                        channels: cur.channels,
                        length: cur.length / size,
                    }
                }
                Layer::Relu => cur,
                Layer::Flatten => Extent {
                    channels: 1,
                    length: cur.size(),
                },
            };
            out.push(cur);
        }
        if cur.size() != 2 {
            return Err(Error::Spec(format!(
                "final output width must be 2, got {}",
                cur.size()
            )));
        }
        Ok(out)
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .filter_map(Layer::param_shapes)
            .map(|(w, b)| w.iter().product::<usize>() + b.iter().product::<usize>())
            .sum()
    }

    /// Largest activation (per sample) anywhere in the network.
    pub fn max_width(&self) -> usize {
        self.extents()
            .map(|e| e.iter().map(Extent::size).max().unwrap_or(0))
            .unwrap_or(0)
    }
}

impl fmt::Display for NetworkSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Input({})", self.input_length)?;
        for l in &self.layers {
            write!(f, " -> {l}")?;
        }
        Ok(())
    }
}

/// Two conv/pool stages followed by a 240-unit hidden layer.
pub fn build_cnn(n_sub_bins: usize) -> Result<NetworkSpec> {
    if n_sub_bins == 0 || !n_sub_bins.is_multiple_of(4) {
        return Err(Error::Spec(format!(
            "CNN input length must be a positive multiple of 4, got {n_sub_bins}"
        )));
    }
    let flat = 32 * (n_sub_bins / 4);
    NetworkSpec::new(
        n_sub_bins,
        vec![
            Layer::Conv1d {
                in_channels: 1,
                out_channels: 16,
                kernel: 5,
            },
            Layer::Relu,
            Layer::MaxPool1d { size: 2 },
            Layer::Conv1d {
                in_channels: 16,
                out_channels: 32,
                kernel: 5,
            },
            Layer::Relu,
            Layer::MaxPool1d { size: 2 },
            Layer::Flatten,
            Layer::Dense {
                inputs: flat,
                outputs: 240,
            },
            Layer::Relu,
            Layer::Dense {
                inputs: 240,
                outputs: 2,
            },
        ],
    )
}

/// One hidden ReLU layer.
pub fn build_fcnn(inputs: usize, hidden: usize) -> Result<NetworkSpec> {
    NetworkSpec::new(
        inputs,
        vec![
            Layer::Dense {
                inputs,
                outputs: hidden,
            },
            Layer::Relu,
            Layer::Dense {
                inputs: hidden,
                outputs: 2,
            },
        ],
    )
}

/// The 10 -> 20 -> 2 network deployed on the embedded board.
pub fn build_fcnn_onboard() -> NetworkSpec {
    build_fcnn(10, 20).expect("fixed onboard architecture is valid")
}

/// Hidden width of the 100-bin fully connected comparison network.
pub const FCNN_HIDDEN: usize = 64;

/// A single linear layer: the logistic-regression baseline without the
/// output squashing.
pub fn build_linear(inputs: usize) -> Result<NetworkSpec> {
    NetworkSpec::new(inputs, vec![Layer::Dense { inputs, outputs: 2 }])
}
