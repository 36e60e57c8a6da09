//! Batched forward pass and reverse-mode gradients for the fixed layer set.
//!
//! Activations are stored sample-major, channel-major within a sample:
//! element `(b, c, l)` lives at `b * C * L + c * L + l`. Dense and
//! convolution layers run through `dgemm`; convolutions use an im2col buffer
//! of shape `L x (C * K)` per sample.

use rand::Rng as _;

use super::spec::{Extent, Layer, NetworkSpec};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::rng::rng_from;

/// Samples per work item when a batch is split for gradient accumulation.
/// Fixed so the reduction order does not depend on the worker count.
pub const CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// One optional weight/bias pair per layer of a [`NetworkSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub layers: Vec<Option<Affine>>,
}

impl Parameters {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        Self {
            layers: spec
                .layers
                .iter()
                .map(|l| {
                    l.param_shapes().map(|(w, b)| Affine {
                        weight: Tensor::zeros(&w),
                        bias: Tensor::zeros(&b),
                    })
                })
                .collect(),
        }
    }

    /// Uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn glorot(spec: &NetworkSpec, seed: u64) -> Self {
        let mut rng = rng_from(seed);
        let mut params = Self::zeros(spec);
        for (layer, slot) in spec.layers.iter().zip(params.layers.iter_mut()) {
            if let (Some((fan_in, fan_out)), Some(affine)) = (layer.fans(), slot.as_mut()) {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                for w in affine.weight.data_mut() {
                    *w = rng.gen_range(-limit..limit);
                }
            }
        }
        params
    }

    /// Weight then bias of every parameterized layer, in layer order.
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers
            .iter()
            .flatten()
            .flat_map(|a| [&a.weight, &a.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers
            .iter_mut()
            .flatten()
            .flat_map(|a| [&mut a.weight, &mut a.bias])
    }

    pub fn count(&self) -> usize {
        self.tensors().map(Tensor::len).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn set_flat(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.count(), "flat parameter length");
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
    }

    pub fn add_assign(&mut self, other: &Parameters) {
        for (a, b) in self.tensors_mut().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors().fold(0.0, |m, t| m.max(t.max_abs()))
    }

    /// Checks that every tensor matches the layer descriptors.
    pub fn check(&self, spec: &NetworkSpec) -> Result<()> {
        if self.layers.len() != spec.layers.len() {
            return Err(Error::Shape(format!(
                "{} parameter slots for {} layers",
                self.layers.len(),
                spec.layers.len()
            )));
        }
        for (i, (layer, slot)) in spec.layers.iter().zip(&self.layers).enumerate() {
            match (layer.param_shapes(), slot) {
                (None, None) => {}
                (Some((w, b)), Some(a)) if a.weight.shape() == w && a.bias.shape() == b => {}
                _ => {
                    return Err(Error::LayerShape {
                        layer: i,
                        message: format!("parameters do not fit {layer}"),
                    })
                }
            }
        }
        Ok(())
    }
}

/// Bounds-checked wrapper over `matrixmultiply::dgemm`:
/// `C = A * B + beta * C` with `A: m x k`, `B: k x n`, strides as
/// `(row, column)` pairs.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs;
    if k > 0 {
        assert!(last(m, k, rsa, csa) < a.len(), "gemm: A out of bounds");
        assert!(last(k, n, rsb, csb) < b.len(), "gemm: B out of bounds");
    }
    assert!(last(m, n, rsc, csc) < c.len(), "gemm: C out of bounds");
    // SAFETY: every index the kernel touches is bounded by the asserts above,
    // and `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

fn im2col(x: &[f64], channels: usize, length: usize, kernel: usize, cols: &mut [f64]) {
    let ck = channels * kernel;
    let pad = kernel / 2;
    for l in 0..length {
        let row = &mut cols[l * ck..(l + 1) * ck];
        for c in 0..channels {
            let src = &x[c * length..(c + 1) * length];
            for k in 0..kernel {
                let pos = l + k;
                row[c * kernel + k] = if pos >= pad && pos - pad < length {
                    src[pos - pad]
                } else {
                    0.0
                };
            }
        }
    }
}

fn col2im_add(cols: &[f64], channels: usize, length: usize, kernel: usize, dx: &mut [f64]) {
    let ck = channels * kernel;
    let pad = kernel / 2;
    for l in 0..length {
        let row = &cols[l * ck..(l + 1) * ck];
        for c in 0..channels {
            for k in 0..kernel {
                let pos = l + k;
                if pos >= pad && pos - pad < length {
                    dx[c * length + pos - pad] += row[c * kernel + k];
                }
            }
        }
    }
}

fn layer_forward(
    layer: &Layer,
    p: Option<&Affine>,
    input: Extent,
    output: Extent,
    x: &[f64],
    batch: usize,
) -> Vec<f64> {
    let (in_size, out_size) = (input.size(), output.size());
    let mut y = vec![0.0; batch * out_size];
    match *layer {
        Layer::Dense { inputs, outputs } => {
            let p = p.expect("dense parameters");
            gemm(
                batch,
                inputs,
                outputs,
                x,
                (inputs, 1),
                p.weight.data(),
                (1, inputs),
                0.0,
                &mut y,
                (outputs, 1),
            );
            let bias = p.bias.data();
            for row in y.chunks_exact_mut(outputs) {
                for (v, b) in row.iter_mut().zip(bias) {
                    *v += b;
                }
            }
        }
        Layer::Conv1d {
            in_channels,
            out_channels,
            kernel,
        } => {
            let p = p.expect("conv parameters");
            let length = input.length;
            let ck = in_channels * kernel;
            let mut cols = vec![0.0; length * ck];
            for b in 0..batch {
                im2col(&x[b * in_size..(b + 1) * in_size], in_channels, length, kernel, &mut cols);
                let yb = &mut y[b * out_size..(b + 1) * out_size];
                gemm(
                    out_channels,
                    ck,
                    length,
                    p.weight.data(),
                    (ck, 1),
                    &cols,
                    (1, ck),
                    0.0,
                    yb,
                    (length, 1),
                );
                for (row, bias) in yb.chunks_exact_mut(length).zip(p.bias.data()) {
                    row.iter_mut().for_each(|v| *v += bias);
                }
            }
        }
        Layer::MaxPool1d { size } => {
            for (xi, yi) in x.chunks_exact(size).zip(y.iter_mut()) {
                *yi = xi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            }
        }
        Layer::Relu => {
            for (xi, yi) in x.iter().zip(y.iter_mut()) {
                *yi = if *xi > 0.0 { *xi } else { 0.0 };
            }
        }
        Layer::Flatten => y.copy_from_slice(x),
    }
    y
}

/// Gradient w.r.t. the layer input (if `want_dx`), accumulating parameter
/// gradients into `g`.
#[allow(clippy::too_many_arguments)]
fn layer_backward(
    layer: &Layer,
    p: Option<&Affine>,
    g: Option<&mut Affine>,
    input: Extent,
    output: Extent,
    x: &[f64],
    dy: &[f64],
    batch: usize,
    want_dx: bool,
) -> Option<Vec<f64>> {
    let (in_size, out_size) = (input.size(), output.size());
    match *layer {
        Layer::Dense { inputs, outputs } => {
            let p = p.expect("dense parameters");
            let g = g.expect("dense gradient slot");
            gemm(
                outputs,
                batch,
                inputs,
                dy,
                (1, outputs),
                x,
                (inputs, 1),
                1.0,
                g.weight.data_mut(),
                (inputs, 1),
            );
            let gb = g.bias.data_mut();
            for row in dy.chunks_exact(outputs) {
                for (acc, d) in gb.iter_mut().zip(row) {
                    *acc += d;
                }
            }
            want_dx.then(|| {
                let mut dx = vec![0.0; batch * inputs];
                gemm(
                    batch,
                    outputs,
                    inputs,
                    dy,
                    (outputs, 1),
                    p.weight.data(),
                    (inputs, 1),
                    0.0,
                    &mut dx,
                    (inputs, 1),
                );
                dx
            })
        }
        Layer::Conv1d {
            in_channels,
            out_channels,
            kernel,
        } => {
            let p = p.expect("conv parameters");
            let g = g.expect("conv gradient slot");
            let length = input.length;
            let ck = in_channels * kernel;
            let mut cols = vec![0.0; length * ck];
            let mut dcols = vec![0.0; length * ck];
            let mut dx = if want_dx {
                vec![0.0; batch * in_size]
            } else {
                Vec::new()
            };
            for b in 0..batch {
                let dyb = &dy[b * out_size..(b + 1) * out_size];
                im2col(&x[b * in_size..(b + 1) * in_size], in_channels, length, kernel, &mut cols);
                gemm(
                    out_channels,
                    length,
                    ck,
                    dyb,
                    (length, 1),
                    &cols,
                    (ck, 1),
                    1.0,
                    g.weight.data_mut(),
                    (ck, 1),
                );
                for (acc, row) in g.bias.data_mut().iter_mut().zip(dyb.chunks_exact(length)) {
                    *acc += row.iter().sum::<f64>();
                }
                if want_dx {
                    gemm(
                        length,
                        out_channels,
                        ck,
                        dyb,
                        (1, length),
                        p.weight.data(),
                        (ck, 1),
                        0.0,
                        &mut dcols,
                        (ck, 1),
                    );
                    col2im_add(
                        &dcols,
                        in_channels,
                        length,
                        kernel,
                        &mut dx[b * in_size..(b + 1) * in_size],
                    );
                }
            }
            want_dx.then_some(dx)
        }
        Layer::MaxPool1d { size } => want_dx.then(|| {
            let mut dx = vec![0.0; batch * in_size];
            for (w, d) in dy.iter().enumerate() {
                let window = &x[w * size..(w + 1) * size];
                // First maximal element takes the gradient.
                let mut best = 0;
                for (j, v) in window.iter().enumerate().skip(1) {
                    if *v > window[best] {
                        best = j;
                    }
                }
                dx[w * size + best] += d;
            }
            dx
        }),
        Layer::Relu => want_dx.then(|| {
            x.iter()
                .zip(dy)
                .map(|(xi, d)| if *xi > 0.0 { *d } else { 0.0 })
                .collect()
        }),
        Layer::Flatten => want_dx.then(|| dy.to_vec()),
    }
}

/// Forward pass over a batch of flattened inputs, keeping every layer input.
fn forward_trace(
    spec: &NetworkSpec,
    extents: &[Extent],
    params: &Parameters,
    inputs: &[f64],
    batch: usize,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut trace = Vec::with_capacity(spec.layers.len());
    let mut cur = inputs.to_vec();
    for (i, layer) in spec.layers.iter().enumerate() {
        let next = layer_forward(
            layer,
            params.layers[i].as_ref(),
            extents[i],
            extents[i + 1],
            &cur,
            batch,
        );
        trace.push(std::mem::replace(&mut cur, next));
    }
    (trace, cur)
}

fn forward_plain(
    spec: &NetworkSpec,
    extents: &[Extent],
    params: &Parameters,
    inputs: &[f64],
    batch: usize,
) -> Vec<f64> {
    let mut cur = inputs.to_vec();
    for (i, layer) in spec.layers.iter().enumerate() {
        cur = layer_forward(
            layer,
            params.layers[i].as_ref(),
            extents[i],
            extents[i + 1],
            &cur,
            batch,
        );
    }
    cur
}

fn check_inputs(spec: &NetworkSpec, params: &Parameters, inputs: &[f64]) -> Result<usize> {
    params.check(spec)?;
    let width = spec.input_length;
    if inputs.is_empty() || !inputs.len().is_multiple_of(width) {
        return Err(Error::Shape(format!(
            "{} input values is not a whole number of length-{width} samples",
            inputs.len()
        )));
    }
    Ok(inputs.len() / width)
}

/// Network outputs `(y1, y2)` for one input.
pub fn forward(spec: &NetworkSpec, params: &Parameters, input: &[f64]) -> Result<[f64; 2]> {
    if input.len() != spec.input_length {
        return Err(Error::Shape(format!(
            "input length {} does not match network input {}",
            input.len(),
            spec.input_length
        )));
    }
    check_inputs(spec, params, input)?;
    let y = forward_plain(spec, &spec.extents()?, params, input, 1);
    Ok([y[0], y[1]])
}

/// Output of every layer for one input, first layer first.
pub fn activations(spec: &NetworkSpec, params: &Parameters, input: &[f64]) -> Result<Vec<Vec<f64>>> {
    if input.len() != spec.input_length {
        return Err(Error::Shape(format!(
            "input length {} does not match network input {}",
            input.len(),
            spec.input_length
        )));
    }
    check_inputs(spec, params, input)?;
    let (mut trace, last) = forward_trace(spec, &spec.extents()?, params, input, 1);
    trace.remove(0);
    trace.push(last);
    Ok(trace)
}

/// Outputs for every sample in a flattened batch, in sample order.
pub fn forward_batch(
    spec: &NetworkSpec,
    params: &Parameters,
    inputs: &[f64],
    exec: Execution,
) -> Result<Vec<[f64; 2]>> {
    let batch = check_inputs(spec, params, inputs)?;
    let extents = spec.extents()?;
    let width = spec.input_length;
    let block = 256;
    let n_blocks = batch.div_ceil(block);
    let parts = exec.map_range(n_blocks, |j| {
        let lo = j * block;
        let hi = (lo + block).min(batch);
        forward_plain(spec, &extents, params, &inputs[lo * width..hi * width], hi - lo)
    });
    Ok(parts
        .into_iter()
        .flat_map(|p| p.chunks_exact(2).map(|c| [c[0], c[1]]).collect::<Vec<_>>())
        .collect())
}

/// `sum_x sum_k |y_k - target_k|` over the batch.
pub fn loss_l1(outputs: &[[f64; 2]], targets: &[[f64; 2]]) -> f64 {
    outputs
        .iter()
        .zip(targets)
        .map(|(y, t)| (y[0] - t[0]).abs() + (y[1] - t[1]).abs())
        .sum()
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn backward_chunk(
    spec: &NetworkSpec,
    extents: &[Extent],
    params: &Parameters,
    inputs: &[f64],
    targets: &[[f64; 2]],
) -> (f64, Parameters) {
    let batch = targets.len();
    let (trace, out) = forward_trace(spec, extents, params, inputs, batch);
    let mut loss = 0.0;
    let mut dy = vec![0.0; batch * 2];
    for (b, t) in targets.iter().enumerate() {
        for k in 0..2 {
            let r = out[b * 2 + k] - t[k];
            loss += r.abs();
            dy[b * 2 + k] = sign(r);
        }
    }
    let mut grads = Parameters::zeros(spec);
    for i in (0..spec.layers.len()).rev() {
        let dx = layer_backward(
            &spec.layers[i],
            params.layers[i].as_ref(),
            grads.layers[i].as_mut(),
            extents[i],
            extents[i + 1],
            &trace[i],
            &dy,
            batch,
            i > 0,
        );
        match dx {
            Some(dx) => dy = dx,
            None => break,
        }
    }
    (loss, grads)
}

/// L1 loss and its exact gradient over a batch, accumulated chunk by chunk in
/// a fixed order.
pub fn backward(
    spec: &NetworkSpec,
    params: &Parameters,
    inputs: &[f64],
    targets: &[[f64; 2]],
    exec: Execution,
) -> Result<(f64, Parameters)> {
    let batch = check_inputs(spec, params, inputs)?;
    if batch != targets.len() {
        return Err(Error::Shape(format!(
            "{batch} inputs but {} targets",
            targets.len()
        )));
    }
    let extents = spec.extents()?;
    let width = spec.input_length;
    let n_chunks = batch.div_ceil(CHUNK);
    let parts = exec.map_range(n_chunks, |j| {
        let lo = j * CHUNK;
        let hi = (lo + CHUNK).min(batch);
        backward_chunk(
            spec,
            &extents,
            params,
            &inputs[lo * width..hi * width],
            &targets[lo..hi],
        )
    });
    let mut iter = parts.into_iter();
    let (mut loss, mut grads) = iter.next().expect("at least one chunk");
    for (l, g) in iter {
        loss += l;
        grads.add_assign(&g);
    }
    Ok((loss, grads))
}
