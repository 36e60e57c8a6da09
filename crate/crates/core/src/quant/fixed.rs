//! Q16.16 fixed-point inference for dense ReLU networks.
//!
//! Weights, biases and activations are stored as `i32` with 16 fractional
//! bits. Products accumulate in `i64` (Q32.32) with saturating adds and are
//! rounded back to Q16.16 on writeback, saturating at the `i32` limits.
//! Every clamp is counted as a saturation event.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kv::{Document, Section};
use crate::nn::{Layer, Model};
use crate::physics::State;

pub const FRAC_BITS: u32 = 16;
pub const ONE: i64 = 1 << FRAC_BITS;
/// Magnitude limit for quantizable values (16 integer bits, one of them sign).
pub const RANGE_LIMIT: f64 = 32768.0;

/// Rounds half to even into Q16.16.
pub fn quantize_value(x: f64) -> Result<i32> {
    if !(x.abs() < RANGE_LIMIT) {
        return Err(Error::Range {
            value: x,
            limit: RANGE_LIMIT,
        });
    }
    Ok((x * ONE as f64).round_ties_even() as i32)
}

pub fn dequantize(q: i32) -> f64 {
    f64::from(q) / ONE as f64
}

#[derive(Debug, Clone, PartialEq)]
pub enum FixedLayer {
    Dense {
        inputs: usize,
        outputs: usize,
        /// Row-major `outputs x inputs`.
        weight: Vec<i32>,
        bias: Vec<i32>,
    },
    Relu,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointNet {
    pub input_length: usize,
    pub layers: Vec<FixedLayer>,
    /// Largest `|dequantize(quantize(x)) - x|` over all parameters.
    pub max_quantization_error: f64,
}

/// Converts a trained dense ReLU network. A non-identity input transform is
/// folded into the first dense layer so the runtime consumes raw counts.
pub fn quantize(model: &Model) -> Result<FixedPointNet> {
    let mut layers = Vec::new();
    let mut max_err: f64 = 0.0;
    let mut folded = model.input.is_identity();
    for (i, (layer, slot)) in model.spec.layers.iter().zip(&model.params.layers).enumerate() {
        match *layer {
            Layer::Dense { inputs, outputs } => {
                let a = slot.as_ref().ok_or_else(|| Error::LayerShape {
                    layer: i,
                    message: "dense layer without parameters".into(),
                })?;
                let mut w = a.weight.data().to_vec();
                let mut b = a.bias.data().to_vec();
                if !folded {
                    let t = model.input;
                    for o in 0..outputs {
                        let row = &mut w[o * inputs..(o + 1) * inputs];
                        let row_sum: f64 = row.iter().sum();
                        b[o] -= t.shift / t.scale * row_sum;
                        row.iter_mut().for_each(|v| *v /= t.scale);
                    }
                    folded = true;
                }
                let mut q = |v: &f64| -> Result<i32> {
                    let qv = quantize_value(*v)?;
                    max_err = max_err.max((dequantize(qv) - v).abs());
                    Ok(qv)
                };
                let weight = w.iter().map(&mut q).collect::<Result<Vec<_>>>()?;
                let bias = b.iter().map(&mut q).collect::<Result<Vec<_>>>()?;
                layers.push(FixedLayer::Dense {
                    inputs,
                    outputs,
                    weight,
                    bias,
                });
            }
            Layer::Relu => layers.push(FixedLayer::Relu),
            Layer::Flatten => {}
            Layer::Conv1d { .. } | Layer::MaxPool1d { .. } => {
                return Err(Error::Unsupported(format!("layer {i}: {layer}")));
            }
        }
    }
    if !folded {
        return Err(Error::Unsupported(
            "input transform needs a leading dense layer".into(),
        ));
    }
    Ok(FixedPointNet {
        input_length: model.spec.input_length,
        layers,
        max_quantization_error: max_err,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedInference {
    pub state: State,
    pub outputs: [i32; 2],
    /// Q16.16 activations after every layer, input first.
    pub trace: Vec<Vec<i32>>,
    pub saturation_events: u32,
}

impl FixedInference {
    /// One line per stage: `stage <i> <v0> <v1> ...` with raw Q16.16 integers.
    pub fn trace_text(&self) -> String {
        let mut s = String::new();
        for (i, stage) in self.trace.iter().enumerate() {
            write!(s, "stage {i}").expect("write to String");
            for v in stage {
                write!(s, " {v}").expect("write to String");
            }
            s.push('\n');
        }
        writeln!(
            s,
            "verdict {} saturation_events {}",
            self.state, self.saturation_events
        )
        .expect("write to String");
        s
    }
}

fn writeback(acc: i64, events: &mut u32) -> i32 {
    let rounded = acc.saturating_add(ONE / 2) >> FRAC_BITS;
    if rounded > i64::from(i32::MAX) {
        *events += 1;
        i32::MAX
    } else if rounded < i64::from(i32::MIN) {
        *events += 1;
        i32::MIN
    } else {
        rounded as i32
    }
}

impl FixedPointNet {
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                FixedLayer::Dense { weight, bias, .. } => weight.len() + bias.len(),
                FixedLayer::Relu => 0,
            })
            .sum()
    }

    pub fn infer(&self, counts: &[u32]) -> Result<FixedInference> {
        self.run(counts, true)
    }

    /// Verdict only, without recording the trace.
    pub fn classify(&self, counts: &[u32]) -> Result<(State, u32)> {
        self.run(counts, false).map(|r| (r.state, r.saturation_events))
    }

    fn run(&self, counts: &[u32], keep_trace: bool) -> Result<FixedInference> {
        if counts.len() != self.input_length {
            return Err(Error::Shape(format!(
                "{} counts for a {}-input network",
                counts.len(),
                self.input_length
            )));
        }
        let mut events = 0u32;
        let max_count = (i32::MAX as u32) >> FRAC_BITS;
        let mut cur: Vec<i32> = counts
            .iter()
            .map(|&c| {
                if c > max_count {
                    events += 1;
                    i32::MAX
                } else {
                    (c << FRAC_BITS) as i32
                }
            })
            .collect();
        let mut trace = Vec::new();
        if keep_trace {
            trace.push(cur.clone());
        }
        for layer in &self.layers {
            cur = match layer {
                FixedLayer::Dense {
                    inputs,
                    outputs,
                    weight,
                    bias,
                } => (0..*outputs)
                    .map(|o| {
                        let row = &weight[o * inputs..(o + 1) * inputs];
                        let mut acc = i64::from(bias[o]) << FRAC_BITS;
                        for (w, x) in row.iter().zip(&cur) {
                            let prod = i64::from(*w) * i64::from(*x);
                            acc = match acc.checked_add(prod) {
                                Some(v) => v,
                                None => {
                                    events += 1;
                                    acc.saturating_add(prod)
                                }
                            };
                        }
                        writeback(acc, &mut events)
                    })
                    .collect(),
                FixedLayer::Relu => cur.iter().map(|&v| v.max(0)).collect(),
            };
            if keep_trace {
                trace.push(cur.clone());
            }
        }
        if cur.len() != 2 {
            return Err(Error::Shape(format!("network emits {} outputs", cur.len())));
        }
        Ok(FixedInference {
            state: State::from_bright(cur[0] > cur[1]),
            outputs: [cur[0], cur[1]],
            trace,
            saturation_events: events,
        })
    }

    /// Interval-arithmetic bounds on every activation for inputs whose
    /// counts lie in `0..=max_count`, evaluated on the dequantized weights.
    pub fn activation_bounds(&self, max_count: u32) -> IntervalBound {
        let mut lo = vec![0.0f64; self.input_length];
        let mut hi = vec![f64::from(max_count); self.input_length];
        let mut max_activation: f64 = f64::from(max_count);
        let mut max_accumulator: f64 = 0.0;
        for layer in &self.layers {
            match layer {
                FixedLayer::Dense {
                    inputs,
                    outputs,
                    weight,
                    bias,
                } => {
                    let mut nlo = Vec::with_capacity(*outputs);
                    let mut nhi = Vec::with_capacity(*outputs);
                    for o in 0..*outputs {
                        let b = dequantize(bias[o]);
                        let (mut l, mut h, mut partial) = (b, b, b.abs());
                        for i in 0..*inputs {
                            let w = dequantize(weight[o * inputs + i]);
                            let (a, c) = (w * lo[i], w * hi[i]);
                            l += a.min(c);
                            h += a.max(c);
                            partial += w.abs() * lo[i].abs().max(hi[i].abs());
                            max_accumulator = max_accumulator.max(partial);
                        }
                        nlo.push(l);
                        nhi.push(h);
                    }
                    lo = nlo;
                    hi = nhi;
                }
                FixedLayer::Relu => {
                    lo.iter_mut().for_each(|v| *v = v.max(0.0));
                    hi.iter_mut().for_each(|v| *v = v.max(0.0));
                }
            }
            for (l, h) in lo.iter().zip(&hi) {
                max_activation = max_activation.max(l.abs()).max(h.abs());
            }
        }
        IntervalBound {
            max_count,
            max_activation,
            max_accumulator,
        }
    }
}

pub const FIXED_FORMAT: &str = "ionreadout-fixed";

impl FixedPointNet {
    /// Raw Q16.16 integers, one `[fixed.<i>]` section per layer.
    pub fn to_document(&self) -> Document {
        let mut doc = Document::new();
        let mut head = Section::new("fixed");
        head.set("format", FIXED_FORMAT);
        head.set("version", 1);
        head.set("frac_bits", FRAC_BITS);
        head.set("input_length", self.input_length);
        head.set("layers", self.layers.len());
        head.set_floats("max_quantization_error", &[self.max_quantization_error]);
        doc.push(head);
        for (i, layer) in self.layers.iter().enumerate() {
            let mut s = Section::new(format!("fixed.{i}"));
            match layer {
                FixedLayer::Dense {
                    inputs,
                    outputs,
                    weight,
                    bias,
                } => {
                    s.set("kind", "dense");
                    s.set("inputs", inputs);
                    s.set("outputs", outputs);
                    s.set_list("weight", weight);
                    s.set_list("bias", bias);
                }
                FixedLayer::Relu => s.set("kind", "relu"),
            }
            doc.push(s);
        }
        doc
    }

    pub fn from_document(doc: &Document) -> Result<Self> {
        let head = doc.section("fixed")?;
        if head.require("format")? != FIXED_FORMAT {
            return Err(head.error("not a fixed-point network file"));
        }
        if head.parse::<u32>("frac_bits")? != FRAC_BITS {
            return Err(head.error("unsupported fractional bit count"));
        }
        let n: usize = head.parse("layers")?;
        let mut layers = Vec::with_capacity(n);
        for i in 0..n {
            let s = doc.section(&format!("fixed.{i}"))?;
            layers.push(match s.require("kind")? {
                "relu" => FixedLayer::Relu,
                "dense" => {
                    let inputs: usize = s.parse("inputs")?;
                    let outputs: usize = s.parse("outputs")?;
                    let weight: Vec<i32> = s.parse_list("weight")?;
                    let bias: Vec<i32> = s.parse_list("bias")?;
                    if weight.len() != inputs * outputs || bias.len() != outputs {
                        return Err(Error::LayerShape {
                            layer: i,
                            message: format!(
                                "{} weights and {} biases for {inputs}x{outputs}",
                                weight.len(),
                                bias.len()
                            ),
                        });
                    }
                    FixedLayer::Dense {
                        inputs,
                        outputs,
                        weight,
                        bias,
                    }
                }
                other => return Err(s.error(format!("unknown layer kind `{other}`"))),
            });
        }
        Ok(Self {
            input_length: head.parse("input_length")?,
            layers,
            max_quantization_error: head.parse("max_quantization_error")?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_document().to_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_document(&Document::parse(&text)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalBound {
    pub max_count: u32,
    /// Largest possible `|activation|`, in real units.
    pub max_activation: f64,
    /// Largest possible partial-sum magnitude inside an accumulator.
    pub max_accumulator: f64,
}

impl IntervalBound {
    /// True when no activation or partial sum can leave the Q16.16 range,
    /// leaving one unit of headroom for writeback rounding.
    pub fn saturation_free(&self) -> bool {
        self.max_activation + 1.0 < RANGE_LIMIT && self.max_accumulator + 1.0 < RANGE_LIMIT
    }
}

/// Verdict and integer activation trace for one shot.
pub fn fixed_infer(net: &FixedPointNet, counts: &[u32]) -> Result<FixedInference> {
    net.infer(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_fcnn_onboard, InputTransform, Parameters};

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize_value(0.5).unwrap(), 32768);
        assert_eq!(quantize_value(0.0).unwrap(), 0);
        assert_eq!(quantize_value(-1.0).unwrap(), -65536);
        // Exactly half an LSB rounds to even.
        assert_eq!(quantize_value(0.5 / 65536.0).unwrap(), 0);
        assert_eq!(quantize_value(1.5 / 65536.0).unwrap(), 2);
        assert!(matches!(quantize_value(40000.0), Err(Error::Range { .. })));
        assert!(quantize_value(f64::NAN).is_err());
    }

    #[test]
    fn zero_net_is_dark() {
        let spec = build_fcnn_onboard();
        let model = Model::new(spec.clone(), Parameters::zeros(&spec)).unwrap();
        let net = quantize(&model).unwrap();
        let r = fixed_infer(&net, &[3; 10]).unwrap();
        assert_eq!(r.outputs, [0, 0]);
        assert_eq!(r.state, State::Dark);
        assert_eq!(r.saturation_events, 0);
        assert_eq!(r.trace.len(), 4);
    }

    #[test]
    fn quantization_error_within_half_lsb() {
        let spec = build_fcnn_onboard();
        let model = Model::new(spec.clone(), Parameters::glorot(&spec, 77)).unwrap();
        let net = quantize(&model).unwrap();
        assert!(net.max_quantization_error <= 2f64.powi(-17));
        assert_eq!(net.param_count(), 262);
    }

    #[test]
    fn folded_input_transform_matches_float_path() {
        let spec = build_fcnn_onboard();
        let mut model = Model::new(spec.clone(), Parameters::glorot(&spec, 5)).unwrap();
        model.input = InputTransform {
            shift: 1.25,
            scale: 2.0,
        };
        let net = quantize(&model).unwrap();
        let counts = [0, 1, 4, 2, 0, 7, 3, 0, 1, 2];
        let y = model.outputs(&counts).unwrap();
        let q = fixed_infer(&net, &counts).unwrap().outputs;
        assert!((dequantize(q[0]) - y[0]).abs() < 1e-3);
        assert!((dequantize(q[1]) - y[1]).abs() < 1e-3);
    }

    #[test]
    fn saturation_is_counted() {
        let spec = build_fcnn_onboard();
        let mut params = Parameters::zeros(&spec);
        params.layers[0].as_mut().unwrap().weight.fill(30000.0);
        let model = Model::new(spec, params).unwrap();
        let net = quantize(&model).unwrap();
        let r = fixed_infer(&net, &[100; 10]).unwrap();
        assert!(r.saturation_events > 0);
        assert!(!net.activation_bounds(100).saturation_free());
    }

    #[test]
    fn file_round_trip() {
        let spec = build_fcnn_onboard();
        let model = Model::new(spec.clone(), Parameters::glorot(&spec, 8)).unwrap();
        let net = quantize(&model).unwrap();
        let text = net.to_document().to_string();
        let back = FixedPointNet::from_document(&Document::parse(&text).unwrap()).unwrap();
        assert_eq!(back, net);
        let broken = text.replace("kind = relu", "kind = tanh");
        assert!(FixedPointNet::from_document(&Document::parse(&broken).unwrap()).is_err());
    }

    #[test]
    fn conv_networks_are_unsupported() {
        let spec = crate::nn::build_cnn(8).unwrap();
        let model = Model::new(spec.clone(), Parameters::zeros(&spec)).unwrap();
        assert!(matches!(quantize(&model), Err(Error::Unsupported(_))));
    }
}
