//! A network together with its input scaling, plus the weight-file format.
//!
//! Weight files use the sectioned key-value format from [`crate::kv`]:
//!
//! ```text
//! [network]
//! format = ionreadout-weights
//! version = 1
//! input_length = 10
//! layers = 3
//! input_shift = 0.0000000000000000e0
//! input_scale = 1.0000000000000000e0
//!
//! [layer.0]
//! kind = dense
//! inputs = 10
//! outputs = 20
//! weight.shape = 20 10
//! weight = <200 values, row-major>
//! bias.shape = 20
//! bias = <20 values>
//!
//! [layer.1]
//! kind = relu
//! ...
//! ```
//!
//! Values are written with 17 significant digits, so a save/load cycle
//! reproduces every parameter bit for bit.

use std::fs;
use std::path::Path;

use super::network::{forward, forward_batch, Affine, Parameters};
use super::spec::{Layer, NetworkSpec};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::kv::{Document, Section};
use crate::physics::{LabeledDataset, State};

pub const WEIGHTS_FORMAT: &str = "ionreadout-weights";

/// `x = (count - shift) / scale`, applied before the first layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputTransform {
    pub shift: f64,
    pub scale: f64,
}

impl Default for InputTransform {
    fn default() -> Self {
        Self {
            shift: 0.0,
            scale: 1.0,
        }
    }
}

impl InputTransform {
    pub fn is_identity(&self) -> bool {
        *self == Self::default()
    }

    /// Mean and standard deviation over every count in the dataset.
    pub fn standardizing(data: &LabeledDataset) -> Self {
        let n = (data.len() * data.n_sub_bins) as f64;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for t in &data.trajectories {
            for &c in &t.counts {
                let c = f64::from(c);
                sum += c;
                sq += c * c;
            }
        }
        let mean = sum / n;
        let var = (sq / n - mean * mean).max(0.0);
        Self {
            shift: mean,
            scale: if var > 0.0 { var.sqrt() } else { 1.0 },
        }
    }

    pub fn apply(&self, counts: &[u32], out: &mut Vec<f64>) {
        out.extend(counts.iter().map(|&c| (f64::from(c) - self.shift) / self.scale));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: NetworkSpec,
    pub params: Parameters,
    pub input: InputTransform,
}

/// Bright iff `y1 > y2`.
pub fn verdict(y: [f64; 2]) -> State {
    State::from_bright(y[0] > y[1])
}

pub fn one_hot(state: State) -> [f64; 2] {
    match state {
        State::Bright => [1.0, 0.0],
        State::Dark => [0.0, 1.0],
    }
}

impl Model {
    pub fn new(spec: NetworkSpec, params: Parameters) -> Result<Self> {
        params.check(&spec)?;
        Ok(Self {
            spec,
            params,
            input: InputTransform::default(),
        })
    }

    pub fn outputs(&self, counts: &[u32]) -> Result<[f64; 2]> {
        let mut x = Vec::with_capacity(counts.len());
        self.input.apply(counts, &mut x);
        forward(&self.spec, &self.params, &x)
    }

    pub fn predict(&self, counts: &[u32]) -> Result<State> {
        self.outputs(counts).map(verdict)
    }

    pub fn predict_dataset(&self, data: &LabeledDataset, exec: Execution) -> Result<Vec<State>> {
        let mut x = Vec::with_capacity(data.len() * self.spec.input_length);
        for t in &data.trajectories {
            if t.counts.len() != self.spec.input_length {
                return Err(Error::Shape(format!(
                    "shot has {} sub-bins, network expects {}",
                    t.counts.len(),
                    self.spec.input_length
                )));
            }
            self.input.apply(&t.counts, &mut x);
        }
        Ok(forward_batch(&self.spec, &self.params, &x, exec)?
            .into_iter()
            .map(verdict)
            .collect())
    }

    /// Fraction of shots whose verdict matches the label.
    pub fn accuracy(&self, data: &LabeledDataset, exec: Execution) -> Result<f64> {
        let preds = self.predict_dataset(data, exec)?;
        let correct = preds
            .iter()
            .zip(data.labels())
            .filter(|(p, l)| *p == l)
            .count();
        Ok(correct as f64 / data.len() as f64)
    }

    pub fn to_document(&self) -> Document {
        let mut doc = Document::new();
        let mut head = Section::new("network");
        head.set("format", WEIGHTS_FORMAT);
        head.set("version", 1);
        head.set("input_length", self.spec.input_length);
        head.set("layers", self.spec.layers.len());
        head.set_floats("input_shift", &[self.input.shift]);
        head.set_floats("input_scale", &[self.input.scale]);
        doc.push(head);
        for (i, (layer, slot)) in self.spec.layers.iter().zip(&self.params.layers).enumerate() {
            let mut s = Section::new(format!("layer.{i}"));
            s.set("kind", layer.kind());
            match *layer {
                Layer::Dense { inputs, outputs } => {
                    s.set("inputs", inputs);
                    s.set("outputs", outputs);
                }
                Layer::Conv1d {
                    in_channels,
                    out_channels,
                    kernel,
                } => {
                    s.set("in_channels", in_channels);
                    s.set("out_channels", out_channels);
                    s.set("kernel", kernel);
                }
                Layer::MaxPool1d { size } => s.set("size", size),
                Layer::Relu | Layer::Flatten => {}
            }
            if let Some(a) = slot {
                s.set_list("weight.shape", a.weight.shape());
                s.set_floats("weight", a.weight.data());
                s.set_list("bias.shape", a.bias.shape());
                s.set_floats("bias", a.bias.data());
            }
            doc.push(s);
        }
        doc
    }

    pub fn from_document(doc: &Document) -> Result<Self> {
        let head = doc.section("network")?;
        let format: String = head.parse("format")?;
        if format != WEIGHTS_FORMAT {
            return Err(head.error(format!("unexpected format `{format}`")));
        }
        let version: u32 = head.parse("version")?;
        if version != 1 {
            return Err(head.error(format!("unsupported version {version}")));
        }
        let input_length: usize = head.parse("input_length")?;
        let n_layers: usize = head.parse("layers")?;
        let input = InputTransform {
            shift: head.parse("input_shift")?,
            scale: head.parse("input_scale")?,
        };
        let mut layers = Vec::with_capacity(n_layers);
        let mut slots = Vec::with_capacity(n_layers);
        for i in 0..n_layers {
            let s = doc.section(&format!("layer.{i}"))?;
            let kind: String = s.parse("kind")?;
            let layer = match kind.as_str() {
                "dense" => Layer::Dense {
                    inputs: s.parse("inputs")?,
                    outputs: s.parse("outputs")?,
                },
                "conv1d" => Layer::Conv1d {
                    in_channels: s.parse("in_channels")?,
                    out_channels: s.parse("out_channels")?,
                    kernel: s.parse("kernel")?,
                },
                "maxpool1d" => Layer::MaxPool1d {
                    size: s.parse("size")?,
                },
                "relu" => Layer::Relu,
                "flatten" => Layer::Flatten,
                other => return Err(s.error(format!("unknown layer kind `{other}`"))),
            };
            let slot = match layer.param_shapes() {
                None => None,
                Some((w_shape, b_shape)) => Some(Affine {
                    weight: read_tensor(s, i, "weight", &w_shape)?,
                    bias: read_tensor(s, i, "bias", &b_shape)?,
                }),
            };
            layers.push(layer);
            slots.push(slot);
        }
        let spec = NetworkSpec::new(input_length, layers).map_err(|e| head.error(e.to_string()))?;
        let model = Model {
            spec,
            params: Parameters { layers: slots },
            input,
        };
        model.params.check(&model.spec)?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_document().to_string()).map_err(|e| Error::io(path, e))
    }
}

fn read_tensor(s: &Section, layer: usize, key: &str, expected: &[usize]) -> Result<Tensor> {
    let shape: Vec<usize> = s.parse_list(&format!("{key}.shape"))?;
    if shape != expected {
        return Err(Error::LayerShape {
            layer,
            message: format!("{key}.shape is {shape:?}, layer descriptor implies {expected:?}"),
        });
    }
    let values: Vec<f64> = s.parse_list(key)?;
    let n: usize = shape.iter().product();
    if values.len() != n {
        return Err(s.error(format!("`{key}` holds {} values, shape needs {n}", values.len())));
    }
    Tensor::from_vec(&shape, values).map_err(|e| s.error(e.to_string()))
}

/// Reads a network from a weight file. Any malformed section aborts the load.
pub fn load_weights(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Model::from_document(&Document::parse(&text)?)
}
