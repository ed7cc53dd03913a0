use super::params::{Bound, ParamStore};
use super::tape::{Tape, Var};
use crate::rng::StreamRng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayerSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvLayerSpec {
    /// "Same"-style padding for odd kernels.
    pub fn padding(&self) -> usize {
        self.kernel / 2
    }
}

/// Zip channel, kernel and stride lists into a layer plan.
pub fn conv_plan(channels: &[usize], kernels: &[usize], strides: &[usize]) -> Result<Vec<ConvLayerSpec>> {
    if channels.len() != kernels.len() || channels.len() != strides.len() || channels.is_empty() {
        return Err(Error::InvalidInput(format!(
            "conv plan lists differ in length: {} channels, {} kernels, {} strides",
            channels.len(),
            kernels.len(),
            strides.len()
        )));
    }
    Ok(channels
        .iter()
        .zip(kernels)
        .zip(strides)
        .map(|((&out_channels, &kernel), &stride)| ConvLayerSpec {
            out_channels,
            kernel,
            stride,
        })
        .collect())
}

/// Spatial size after each layer of the plan; errors if a layer no longer fits.
pub fn conv_output_dims(mut h: usize, mut w: usize, plan: &[ConvLayerSpec]) -> Result<(usize, usize)> {
    for (i, l) in plan.iter().enumerate() {
        let p = l.padding();
        if l.stride == 0 || h + 2 * p < l.kernel || w + 2 * p < l.kernel {
            return Err(Error::InvalidInput(format!("conv layer {i} does not fit a {h}x{w} input")));
        }
        h = (h + 2 * p - l.kernel) / l.stride + 1;
        w = (w + 2 * p - l.kernel) / l.stride + 1;
    }
    Ok((h, w))
}

pub fn init_conv_stack(
    store: &mut ParamStore,
    prefix: &str,
    in_channels: usize,
    plan: &[ConvLayerSpec],
    rng: &mut StreamRng,
) {
    let mut c = in_channels;
    for (i, l) in plan.iter().enumerate() {
        let fan_in = c * l.kernel * l.kernel;
        store.init_uniform(&format!("{prefix}.conv{i}.w"), &[l.out_channels, c, l.kernel, l.kernel], fan_in, rng);
        store.init_uniform(&format!("{prefix}.conv{i}.b"), &[l.out_channels], fan_in, rng);
        c = l.out_channels;
    }
}

/// Convolution followed by LeakyReLU for every layer of the plan.
pub fn conv_stack_forward(
    tape: &mut Tape,
    bound: &Bound,
    prefix: &str,
    mut x: Var,
    plan: &[ConvLayerSpec],
    slope: f64,
) -> Result<Var> {
    for (i, l) in plan.iter().enumerate() {
        let w = bound.get(&format!("{prefix}.conv{i}.w"))?;
        let b = bound.get(&format!("{prefix}.conv{i}.b"))?;
        x = tape.conv2d(x, w, Some(b), l.stride, l.padding())?;
        x = tape.leaky_relu(x, slope);
    }
    Ok(x)
}

pub fn init_linear(store: &mut ParamStore, prefix: &str, inp: usize, out: usize, rng: &mut StreamRng) {
    store.init_uniform(&format!("{prefix}.w"), &[out, inp], inp, rng);
    store.init_uniform(&format!("{prefix}.b"), &[out], inp, rng);
}

pub fn linear_forward(tape: &mut Tape, bound: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let w = bound.get(&format!("{prefix}.w"))?;
    let b = bound.get(&format!("{prefix}.b"))?;
    tape.linear(x, w, Some(b))
}

/// Weights of one LSTM layer; gate blocks are stacked in the order input, forget, cell, output.
#[derive(Debug, Clone, Copy)]
pub struct LstmLayer {
    /// `[4H, D]`
    pub w_ih: Var,
    /// `[4H, H]`
    pub w_hh: Var,
    /// `[4H]`
    pub b: Var,
}

impl LstmLayer {
    pub fn from_bound(bound: &Bound, prefix: &str) -> Result<Self> {
        Ok(Self {
            w_ih: bound.get(&format!("{prefix}.w_ih"))?,
            w_hh: bound.get(&format!("{prefix}.w_hh"))?,
            b: bound.get(&format!("{prefix}.b"))?,
        })
    }
}

pub fn init_lstm(
    store: &mut ParamStore,
    prefix: &str,
    input: usize,
    hidden: usize,
    layers: usize,
    rng: &mut StreamRng,
) {
    let mut d = input;
    for l in 0..layers {
        let p = format!("{prefix}.l{l}");
        store.init_uniform(&format!("{p}.w_ih"), &[4 * hidden, d], hidden, rng);
        store.init_uniform(&format!("{p}.w_hh"), &[4 * hidden, hidden], hidden, rng);
        store.init_uniform(&format!("{p}.b"), &[4 * hidden], hidden, rng);
        d = hidden;
    }
}

pub fn lstm_layers(bound: &Bound, prefix: &str, layers: usize) -> Result<Vec<LstmLayer>> {
    (0..layers)
        .map(|l| LstmLayer::from_bound(bound, &format!("{prefix}.l{l}")))
        .collect()
}

/// One LSTM step on a batch: returns the new `(h, c)`.
pub fn lstm_cell(tape: &mut Tape, layer: &LstmLayer, x: Var, h: Var, c: Var, hidden: usize) -> Result<(Var, Var)> {
    let xin = tape.linear(x, layer.w_ih, Some(layer.b))?;
    let hin = tape.linear(h, layer.w_hh, None)?;
    let gates = tape.add(xin, hin)?;
    let i = tape.slice_cols(gates, 0, hidden)?;
    let f = tape.slice_cols(gates, hidden, hidden)?;
    let g = tape.slice_cols(gates, 2 * hidden, hidden)?;
    let o = tape.slice_cols(gates, 3 * hidden, hidden)?;
    let i = tape.sigmoid(i);
    let f = tape.sigmoid(f);
    let g = tape.tanh(g);
    let o = tape.sigmoid(o);
    let fc = tape.mul(f, c)?;
    let ig = tape.mul(i, g)?;
    let c_new = tape.add(fc, ig)?;
    let tc = tape.tanh(c_new);
    let h_new = tape.mul(o, tc)?;
    Ok((h_new, c_new))
}

/// Stacked LSTM over a sequence of `[B, D]` inputs from a zero initial state.
/// Returns the top layer's hidden state at every step.
pub fn lstm_forward(tape: &mut Tape, inputs: &[Var], layers: &[LstmLayer], hidden: usize) -> Result<Vec<Var>> {
    let first = *inputs
        .first()
        .ok_or_else(|| Error::Shape("lstm over an empty sequence".into()))?;
    let batch = tape.shape(first)[0];
    let width = tape.shape(first).to_vec();
    if inputs.iter().any(|&x| tape.shape(x) != width.as_slice()) {
        return Err(Error::Shape("lstm inputs differ in shape".into()));
    }
    let mut seq = inputs.to_vec();
    for layer in layers {
        let mut h = tape.zeros(&[batch, hidden]);
        let mut c = tape.zeros(&[batch, hidden]);
        let mut out = Vec::with_capacity(seq.len());
        for &x in &seq {
            (h, c) = lstm_cell(tape, layer, x, h, c, hidden)?;
            out.push(h);
        }
        seq = out;
    }
    Ok(seq)
}
