//! Central finite-difference verification of tape gradients.

use super::attention::{cross_attention_loo, cross_attention_pair, self_attention, GateWeights};
use super::layers::{init_lstm, lstm_forward, lstm_layers};
use super::network::{BatchInput, Mode, Network, NetworkConfig, Profile};
use super::params::{Bound, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::rng;
use crate::Result;
use rand::Rng;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Denominator floor for relative errors, so entries where both gradients vanish
/// are judged by their absolute difference.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// `name[index]` of the entry with the largest relative error.
    pub worst: String,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

fn evaluate<F>(store: &ParamStore, f: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &Bound) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let out = f(&mut tape, &bound)?;
    Ok(tape.value(out).iter().sum())
}

/// Compare the tape gradient of the scalar `f(params)` with central differences
/// for every parameter entry, or `max_per_param` entries spread evenly over each tensor.
pub fn check<F>(store: &ParamStore, f: F, step: f64, max_per_param: Option<usize>) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &Bound) -> Result<Var>,
{
    check_distorted(store, f, step, max_per_param, 0.0)
}

/// [`check`] with every analytic gradient multiplied by `1 + distortion`.
/// A non-zero distortion is a negative control: a correct checker must then fail.
pub fn check_distorted<F>(
    store: &ParamStore,
    f: F,
    step: f64,
    max_per_param: Option<usize>,
    distortion: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &Bound) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let out = f(&mut tape, &bound)?;
    tape.backward(out)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let mut probe = store.clone();
    for (name, t) in store.iter() {
        let analytic = tape
            .grad(bound.get(name)?)
            .map(|g| g.iter().map(|v| v * (1.0 + distortion)).collect::<Vec<_>>())
            .unwrap_or_else(|| vec![0.0; t.numel()]);
        let n = t.numel();
        let limit = max_per_param.unwrap_or(usize::MAX).min(n);
        for i in (0..limit).map(|j| j * n / limit) {
            let original = t.data()[i];
            probe.get_mut(name).expect("cloned").data_mut()[i] = original + step;
            let plus = evaluate(&probe, &f)?;
            probe.get_mut(name).expect("cloned").data_mut()[i] = original - step;
            let minus = evaluate(&probe, &f)?;
            probe.get_mut(name).expect("cloned").data_mut()[i] = original;

            let numeric = (plus - minus) / (2.0 * step);
            let rel = relative_error(analytic[i], numeric);
            report.max_abs_error = report.max_abs_error.max((analytic[i] - numeric).abs());
            if rel > report.max_rel_error || report.worst.is_empty() {
                report.max_rel_error = rel.max(report.max_rel_error);
                report.worst = format!("{name}[{i}]");
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

fn random_tensor(shape: &[usize], r: &mut rng::StreamRng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).expect("shape")
}

/// Linear layer `x·Wᵀ + b` followed by a fixed weighted sum.
pub fn check_linear(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng::stream(seed, "gradcheck.linear");
    let mut store = ParamStore::new();
    store.insert("x", random_tensor(&[3, 4], &mut r));
    store.insert("w", random_tensor(&[5, 4], &mut r));
    store.insert("b", random_tensor(&[5], &mut r));
    let weights: Vec<f64> = (0..15).map(|_| r.random_range(-1.0..1.0)).collect();
    check(
        &store,
        |tape, b| {
            let y = tape.linear(b.get("x")?, b.get("w")?, Some(b.get("b")?))?;
            tape.dot_const(y, weights.clone())
        },
        DEFAULT_STEP,
        None,
    )
}

/// Scalar self-attention `σ(ρz · φz) · z` with random scalars.
pub fn check_self_attention_scalar(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng::stream(seed, "gradcheck.attention");
    let mut store = ParamStore::new();
    for name in ["z", "rho", "phi"] {
        store.insert(name, random_tensor(&[1, 1], &mut r));
    }
    check(
        &store,
        |tape, b| {
            let w = GateWeights {
                rho: b.get("rho")?,
                phi: b.get("phi")?,
            };
            Ok(self_attention(tape, b.get("z")?, &w)?.0)
        },
        DEFAULT_STEP,
        None,
    )
}

fn random_input(net: &Network, pairs: usize, r: &mut rng::StreamRng) -> BatchInput {
    let mut input = BatchInput::zeros(&net.config, pairs);
    for t in [&mut input.radar, &mut input.imu].into_iter().chain(input.depth.as_mut()) {
        for v in t.data_mut() {
            *v = r.random_range(-100.0..100.0);
        }
    }
    for v in input.imu.data_mut() {
        *v /= 100.0;
    }
    input
}

/// Whole network (eval mode, tiny profile unless given) on random inputs, through the pose loss.
pub fn check_network(config: Option<NetworkConfig>, pairs: usize, seed: u64) -> Result<GradCheckReport> {
    network_report(config, pairs, seed, None, 0.0)
}

fn network_report(
    config: Option<NetworkConfig>,
    pairs: usize,
    seed: u64,
    max_per_param: Option<usize>,
    distortion: f64,
) -> Result<GradCheckReport> {
    let config = config.unwrap_or_else(|| NetworkConfig::profile(Profile::Tiny));
    let net = Network::new(config, seed)?;
    let mut r = rng::stream(seed, "gradcheck.network");
    let input = random_input(&net, pairs, &mut r);
    let truth: Vec<f64> = (0..pairs * 6).map(|_| r.random_range(-0.2..0.2)).collect();
    let gamma = net.config.gamma;
    check_distorted(
        &net.params,
        |tape, b| {
            let pred = net.forward(tape, b, &input, Mode::Eval, None)?;
            tape.pose_loss(pred, &truth, gamma)
        },
        DEFAULT_STEP,
        max_per_param,
        distortion,
    )
}

/// One named entry of [`layer_suite`].
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteEntry {
    pub name: &'static str,
    pub tolerance: f64,
    pub report: GradCheckReport,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        self.report.passes(self.tolerance)
    }
}

/// Names of the checks run by [`layer_suite`], in order.
pub const SUITE_OPS: [&str; 11] = [
    "linear",
    "conv2d",
    "leaky_relu",
    "lstm",
    "dropout_off",
    "dropout_fixed_mask",
    "self_attention",
    "cross_attention_pair",
    "cross_attention_loo",
    "pose_loss",
    "network",
];

fn tensor(store: &mut ParamStore, key: &str, shape: &[usize], r: &mut rng::StreamRng) {
    store.insert(key, random_tensor(shape, r));
}

fn weighted_sum(tape: &mut Tape, y: Var, r: &mut rng::StreamRng) -> Result<Var> {
    let n = tape.value(y).len();
    tape.dot_const(y, (0..n).map(|_| r.random_range(-1.0..1.0)).collect())
}

/// Finite-difference checks of every layer type and of the assembled network
/// (`profile`, tiny by default, on two frame pairs).
///
/// `corrupt` names one op whose analytic gradient is deliberately distorted.
pub fn layer_suite(
    seed: u64,
    profile: Option<NetworkConfig>,
    network_max_per_param: Option<usize>,
    corrupt: Option<&str>,
) -> Result<Vec<SuiteEntry>> {
    if let Some(name) = corrupt {
        if !SUITE_OPS.contains(&name) {
            return Err(crate::Error::InvalidInput(format!("unknown op {name:?} to corrupt")));
        }
    }
    let mut out = Vec::with_capacity(SUITE_OPS.len());
    for name in SUITE_OPS {
        let distortion = if corrupt == Some(name) { 1e-2 } else { 0.0 };
        let mut r = rng::stream(seed, &format!("gradcheck.{name}"));
        let mut store = ParamStore::new();
        let tolerance = if name == "linear" { 1e-6 } else { 1e-4 };
        let report = match name {
            "linear" => {
                tensor(&mut store, "x", &[3, 4], &mut r);
                tensor(&mut store, "w", &[5, 4], &mut r);
                tensor(&mut store, "b", &[5], &mut r);
                let wr = r.clone();
                check_distorted(
                    &store,
                    |tape, b| {
                        let y = tape.linear(b.get("x")?, b.get("w")?, Some(b.get("b")?))?;
                        weighted_sum(tape, y, &mut wr.clone())
                    },
                    DEFAULT_STEP,
                    None,
                    distortion,
                )?
            }
            "conv2d" => {
                tensor(&mut store, "x", &[2, 2, 5, 6], &mut r);
                tensor(&mut store, "w", &[3, 2, 3, 3], &mut r);
                tensor(&mut store, "b", &[3], &mut r);
                let wr = r.clone();
                check_distorted(
                    &store,
                    |tape, b| {
                        let y = tape.conv2d(b.get("x")?, b.get("w")?, Some(b.get("b")?), 2, 1)?;
                        weighted_sum(tape, y, &mut wr.clone())
                    },
                    DEFAULT_STEP,
                    None,
                    distortion,
                )?
            }
            "leaky_relu" => {
                // Keep inputs away from the kink so central differences stay on one side.
                let data: Vec<f64> = (0..12)
                    .map(|_| {
                        let v: f64 = r.random_range(0.05..1.0);
                        if r.random::<bool>() {
                            v
                        } else {
                            -v
                        }
                    })
                    .collect();
                store.insert("x", Tensor::new(vec![3, 4], data)?);
                let wr = r.clone();
                check_distorted(
                    &store,
                    |tape, b| {
                        let y = tape.leaky_relu(b.get("x")?, 0.1);
                        weighted_sum(tape, y, &mut wr.clone())
                    },
                    DEFAULT_STEP,
                    None,
                    distortion,
                )?
            }
            "lstm" => {
                init_lstm(&mut store, "rnn", 3, 4, 2, &mut r);
                for k in 0..3 {
                    tensor(&mut store, &format!("x{k}"), &[2, 3], &mut r);
                }
                let wr = r.clone();
                check_distorted(
                    &store,
                    |tape, b| {
                        let xs = (0..3).map(|k| b.get(&format!("x{k}"))).collect::<Result<Vec<_>>>()?;
                        let layers = lstm_layers(b, "rnn", 2)?;
                        let hs = lstm_forward(tape, &xs, &layers, 4)?;
                        let y = tape.concat_rows(&hs)?;
                        weighted_sum(tape, y, &mut wr.clone())
                    },
                    DEFAULT_STEP,
                    None,
                    distortion,
                )?
            }
            "dropout_off" | "dropout_fixed_mask" => {
                let config = NetworkConfig::profile(Profile::Tiny);
                let net = Network::new(config, seed)?;
                let input = random_input(&net, 2, &mut r);
                let truth: Vec<f64> = (0..12).map(|_| r.random_range(-0.2..0.2)).collect();
                let mode = if name == "dropout_off" { Mode::Eval } else { Mode::Train };
                let mask_seed = rng::stream_seed(seed, "gradcheck.mask");
                check_distorted(
                    &net.params,
                    |tape, b| {
                        let mut mask_rng = rng::stream(mask_seed, "mask");
                        let pred = net.forward(tape, b, &input, mode, Some(&mut mask_rng))?;
                        tape.pose_loss(pred, &truth, 0.3)
                    },
                    DEFAULT_STEP,
                    None,
                    distortion,
                )?
            }
            "self_attention" => {
                tensor(&mut store, "z", &[2, 4], &mut r);
                tensor(&mut store, "rho", &[4, 4], &mut r);
                tensor(&mut store, "phi", &[4, 4], &mut r);
                let wr = r.clone();
                check_distorted(
                    &store,
                    |tape, b| {
                        let w = GateWeights {
                            rho: b.get("rho")?,
                            phi: b.get("phi")?,
                        };
                        let (y, _) = self_attention(tape, b.get("z")?, &w)?;
                        weighted_sum(tape, y, &mut wr.clone())
                    },
                    DEFAULT_STEP,
                    None,
                    distortion,
                )?
            }
            "cross_attention_pair" => {
                tensor(&mut store, "m", &[2, 3], &mut r);
                tensor(&mut store, "i", &[2, 2], &mut r);
                tensor(&mut store, "m.rho", &[3, 2], &mut r);
                tensor(&mut store, "m.phi", &[3, 2], &mut r);
                tensor(&mut store, "i.rho", &[2, 3], &mut r);
                tensor(&mut store, "i.phi", &[2, 3], &mut r);
                let wr = r.clone();
                check_distorted(
                    &store,
                    |tape, b| {
                        let gm = GateWeights {
                            rho: b.get("m.rho")?,
                            phi: b.get("m.phi")?,
                        };
                        let gi = GateWeights {
                            rho: b.get("i.rho")?,
                            phi: b.get("i.phi")?,
                        };
                        let y = cross_attention_pair(tape, b.get("m")?, b.get("i")?, &gm, &gi)?;
                        weighted_sum(tape, y, &mut wr.clone())
                    },
                    DEFAULT_STEP,
                    None,
                    distortion,
                )?
            }
            "cross_attention_loo" => {
                let dims = [("i", 2), ("m", 3), ("v", 2)];
                for (n, d) in dims {
                    tensor(&mut store, n, &[2, d], &mut r);
                    tensor(&mut store, &format!("{n}.rho"), &[d, 7 - d], &mut r);
                    tensor(&mut store, &format!("{n}.phi"), &[d, 7 - d], &mut r);
                }
                let wr = r.clone();
                check_distorted(
                    &store,
                    |tape, b| {
                        let feats = dims
                            .iter()
                            .map(|(n, _)| Ok((*n, b.get(n)?)))
                            .collect::<Result<Vec<_>>>()?;
                        let gates = dims
                            .iter()
                            .map(|(n, _)| {
                                Ok(GateWeights {
                                    rho: b.get(&format!("{n}.rho"))?,
                                    phi: b.get(&format!("{n}.phi"))?,
                                })
                            })
                            .collect::<Result<Vec<_>>>()?;
                        let y = cross_attention_loo(tape, &feats, &gates)?;
                        weighted_sum(tape, y, &mut wr.clone())
                    },
                    DEFAULT_STEP,
                    None,
                    distortion,
                )?
            }
            "pose_loss" => {
                tensor(&mut store, "pred", &[3, 6], &mut r);
                let truth: Vec<f64> = (0..18).map(|_| r.random_range(-1.0..1.0)).collect();
                check_distorted(
                    &store,
                    |tape, b| tape.pose_loss(b.get("pred")?, &truth, 0.3),
                    DEFAULT_STEP,
                    None,
                    distortion,
                )?
            }
            "network" => network_report(profile.clone(), 2, seed, network_max_per_param, distortion)?,
            _ => unreachable!("every suite op is handled"),
        };
        out.push(SuiteEntry {
            name,
            tolerance,
            report,
        });
    }
    Ok(out)
}
