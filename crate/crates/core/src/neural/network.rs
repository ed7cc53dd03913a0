//! The fusion odometry network.
//!
//! ```text
//! radar pair  ─ 9×(conv + LeakyReLU) ─ flatten ─ linear ─ z_M ┐
//! IMU window  ─ LSTM encoder ─ last hidden ─ linear ─────── z_I ├─ attention fusion ─ LSTM ×2 ─ FC ─ FC ─ FC(6)
//! depth pair  ─ 9×(conv + LeakyReLU) ─ flatten ─ linear ─ z_V ┘   (optional third modality)
//! ```

use std::collections::BTreeMap;

use rand::Rng;

use super::attention::{cross_attention_loo, cross_attention_pair, self_attention, AttentionMode, GateWeights};
use super::layers::{
    conv_output_dims, conv_plan, conv_stack_forward, init_conv_stack, init_linear, init_lstm, linear_forward,
    lstm_forward, lstm_layers, ConvLayerSpec,
};
use super::params::{Bound, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::rng::{self, StreamRng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// Desk-scale sizes for CPU training.
    Toy,
    /// Full-size layers (2×512 LSTM, 256-d radar features).
    Paper,
    /// 4×4 images and a handful of units, for finite-difference checks.
    Tiny,
}

impl std::str::FromStr for Profile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(Profile::Toy),
            "paper" => Ok(Profile::Paper),
            "tiny" => Ok(Profile::Tiny),
            other => Err(Error::InvalidInput(format!("unknown profile {other:?} (toy|paper|tiny)"))),
        }
    }
}

impl std::fmt::Display for Profile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Profile::Toy => "toy",
            Profile::Paper => "paper",
            Profile::Tiny => "tiny",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub profile: Profile,
    pub image_rows: usize,
    pub image_cols: usize,
    pub conv_channels: Vec<usize>,
    pub conv_kernels: Vec<usize>,
    pub conv_strides: Vec<usize>,
    /// Radar feature length N_M.
    pub feature_m: usize,
    /// Inertial feature length N_I.
    pub feature_i: usize,
    /// Depth feature length N_V (used only with `use_depth`).
    pub feature_v: usize,
    pub imu_hidden: usize,
    /// IMU samples fed to the inertial encoder per frame pair.
    pub imu_window: usize,
    pub use_depth: bool,
    pub attention: AttentionMode,
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    pub fc_sizes: Vec<usize>,
    pub dropout: f64,
    pub gamma: f64,
    pub leaky_slope: f64,
    /// Multiplies image inputs after mean subtraction.
    pub input_scale: f64,
}

impl NetworkConfig {
    pub fn profile(profile: Profile) -> Self {
        let base = NetworkConfig {
            profile,
            image_rows: 32,
            image_cols: 128,
            conv_channels: vec![16, 32, 32, 64, 64, 128, 128, 128, 128],
            conv_kernels: vec![7, 7, 5, 5, 3, 3, 3, 3, 3],
            conv_strides: vec![2, 1, 2, 1, 2, 1, 2, 1, 2],
            feature_m: 256,
            feature_i: 64,
            feature_v: 256,
            imu_hidden: 64,
            imu_window: 10,
            use_depth: false,
            attention: AttentionMode::Mixed,
            lstm_hidden: 512,
            lstm_layers: 2,
            fc_sizes: vec![128, 64, 6],
            dropout: 0.25,
            gamma: 0.001,
            leaky_slope: 0.1,
            input_scale: 1.0 / 255.0,
        };
        match profile {
            Profile::Paper => base,
            Profile::Toy => NetworkConfig {
                conv_channels: vec![4, 8, 8, 8, 8, 8, 8, 8, 8],
                feature_m: 64,
                feature_i: 32,
                feature_v: 64,
                imu_hidden: 16,
                lstm_hidden: 64,
                ..base
            },
            Profile::Tiny => NetworkConfig {
                image_rows: 4,
                image_cols: 4,
                conv_channels: vec![2; 9],
                feature_m: 4,
                feature_i: 3,
                feature_v: 4,
                imu_hidden: 3,
                imu_window: 3,
                lstm_hidden: 4,
                fc_sizes: vec![5, 4, 6],
                ..base
            },
        }
    }

    pub fn plan(&self) -> Result<Vec<ConvLayerSpec>> {
        conv_plan(&self.conv_channels, &self.conv_kernels, &self.conv_strides)
    }

    pub fn validate(&self) -> Result<()> {
        let plan = self.plan()?;
        conv_output_dims(self.image_rows, self.image_cols, &plan)?;
        let positive = [
            self.image_rows,
            self.image_cols,
            self.feature_m,
            self.feature_i,
            self.imu_hidden,
            self.imu_window,
            self.lstm_hidden,
            self.lstm_layers,
        ];
        if positive.contains(&0) || (self.use_depth && self.feature_v == 0) {
            return Err(Error::InvalidInput("network sizes must be positive".into()));
        }
        if self.fc_sizes.last() != Some(&6) {
            return Err(Error::InvalidInput("the last FC layer must have 6 units".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidInput(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.gamma <= 0.0 || !self.gamma.is_finite() {
            return Err(Error::InvalidInput("gamma must be positive".into()));
        }
        Ok(())
    }

    /// Feature lengths in fusion order (inertial, radar, depth).
    fn modalities(&self) -> Vec<(&'static str, usize)> {
        let mut m = vec![("i", self.feature_i), ("m", self.feature_m)];
        if self.use_depth {
            m.push(("v", self.feature_v));
        }
        m
    }

    pub fn fused_len(&self) -> usize {
        self.modalities().iter().map(|(_, n)| n).sum()
    }

    /// Flat `key = value` view, used for checkpoints and run metadata.
    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("profile", self.profile.to_string());
        put("image_rows", self.image_rows.to_string());
        put("image_cols", self.image_cols.to_string());
        put("conv_channels", list(&self.conv_channels));
        put("conv_kernels", list(&self.conv_kernels));
        put("conv_strides", list(&self.conv_strides));
        put("feature_m", self.feature_m.to_string());
        put("feature_i", self.feature_i.to_string());
        put("feature_v", self.feature_v.to_string());
        put("imu_hidden", self.imu_hidden.to_string());
        put("imu_window", self.imu_window.to_string());
        put("use_depth", self.use_depth.to_string());
        put(
            "attention",
            match self.attention {
                AttentionMode::Mixed => "mixed",
                AttentionMode::SingleStage => "single",
            }
            .to_string(),
        );
        put("lstm_hidden", self.lstm_hidden.to_string());
        put("lstm_layers", self.lstm_layers.to_string());
        put("fc_sizes", list(&self.fc_sizes));
        put("dropout", self.dropout.to_string());
        put("gamma", self.gamma.to_string());
        put("leaky_slope", self.leaky_slope.to_string());
        put("input_scale", self.input_scale.to_string());
        m
    }

    /// Start from the named profile (default toy) and override with any recognised keys.
    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<Self> {
        let profile: Profile = kv.get("profile").map(|s| s.parse()).transpose()?.unwrap_or(Profile::Toy);
        let mut c = NetworkConfig::profile(profile);
        let bad = |k: &str, v: &str| Error::InvalidInput(format!("bad value for {k}: {v:?}"));
        let num = |k: &str, v: &str| v.trim().parse::<usize>().map_err(|_| bad(k, v));
        let real = |k: &str, v: &str| v.trim().parse::<f64>().map_err(|_| bad(k, v));
        let list = |k: &str, v: &str| -> Result<Vec<usize>> { v.split(',').map(|x| num(k, x)).collect() };
        for (k, v) in kv {
            match k.as_str() {
                "profile" => {}
                "image_rows" => c.image_rows = num(k, v)?,
                "image_cols" => c.image_cols = num(k, v)?,
                "conv_channels" => c.conv_channels = list(k, v)?,
                "conv_kernels" => c.conv_kernels = list(k, v)?,
                "conv_strides" => c.conv_strides = list(k, v)?,
                "feature_m" => c.feature_m = num(k, v)?,
                "feature_i" => c.feature_i = num(k, v)?,
                "feature_v" => c.feature_v = num(k, v)?,
                "imu_hidden" => c.imu_hidden = num(k, v)?,
                "imu_window" => c.imu_window = num(k, v)?,
                "use_depth" => c.use_depth = v.trim().parse().map_err(|_| bad(k, v))?,
                "attention" => {
                    c.attention = match v.trim() {
                        "mixed" => AttentionMode::Mixed,
                        "single" => AttentionMode::SingleStage,
                        _ => return Err(bad(k, v)),
                    }
                }
                "lstm_hidden" => c.lstm_hidden = num(k, v)?,
                "lstm_layers" => c.lstm_layers = num(k, v)?,
                "fc_sizes" => c.fc_sizes = list(k, v)?,
                "dropout" => c.dropout = real(k, v)?,
                "gamma" => c.gamma = real(k, v)?,
                "leaky_slope" => c.leaky_slope = real(k, v)?,
                "input_scale" => c.input_scale = real(k, v)?,
                _ => {}
            }
        }
        c.validate()?;
        Ok(c)
    }
}

/// One subsequence of `T` consecutive frame pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchInput {
    /// `[T, 2, rows, cols]`, mean-subtracted.
    pub radar: Tensor,
    /// `[L, T, 6]`, time-major IMU windows, mean-subtracted.
    pub imu: Tensor,
    /// `[T, 2, rows, cols]` when the depth modality is enabled.
    pub depth: Option<Tensor>,
}

impl BatchInput {
    pub fn len(&self) -> usize {
        self.radar.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn zeros(config: &NetworkConfig, pairs: usize) -> Self {
        let img = [pairs, 2, config.image_rows, config.image_cols];
        BatchInput {
            radar: Tensor::zeros(&img),
            imu: Tensor::zeros(&[config.imu_window, pairs, 6]),
            depth: config.use_depth.then(|| Tensor::zeros(&img)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub config: NetworkConfig,
    pub params: ParamStore,
}

impl Network {
    /// Build and initialise the network; weights are uniform in ±1/√fan_in from the seed's `init` stream.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(seed, "network.init");
        let mut p = ParamStore::new();
        let plan = config.plan()?;
        let (h, w) = conv_output_dims(config.image_rows, config.image_cols, &plan)?;
        let flat = plan.last().expect("non-empty plan").out_channels * h * w;

        init_conv_stack(&mut p, "mmwave", 2, &plan, &mut rng);
        init_linear(&mut p, "mmwave.proj", flat, config.feature_m, &mut rng);
        init_lstm(&mut p, "imu.rnn", 6, config.imu_hidden, 1, &mut rng);
        init_linear(&mut p, "imu.proj", config.imu_hidden, config.feature_i, &mut rng);
        if config.use_depth {
            init_conv_stack(&mut p, "depth", 2, &plan, &mut rng);
            init_linear(&mut p, "depth.proj", flat, config.feature_v, &mut rng);
        }

        let mods = config.modalities();
        let total: usize = mods.iter().map(|(_, n)| n).sum();
        match config.attention {
            AttentionMode::SingleStage => {
                init_gate(&mut p, "att.single", total, total, &mut rng);
            }
            AttentionMode::Mixed => {
                for &(name, n) in &mods {
                    init_gate(&mut p, &format!("att.self.{name}"), n, n, &mut rng);
                }
                for &(name, n) in &mods {
                    init_gate(&mut p, &format!("att.cross.{name}"), n, total - n, &mut rng);
                }
            }
        }

        init_lstm(&mut p, "temporal", total, config.lstm_hidden, config.lstm_layers, &mut rng);
        let mut d = config.lstm_hidden;
        for (i, &units) in config.fc_sizes.iter().enumerate() {
            init_linear(&mut p, &format!("fc{i}"), d, units, &mut rng);
            d = units;
        }
        Ok(Self { config, params: p })
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// Number of attention weights actually allocated.
    pub fn attention_param_count(&self) -> usize {
        self.params.count_prefix("att.")
    }

    fn validate_input(&self, input: &BatchInput) -> Result<usize> {
        let c = &self.config;
        let t = input.len();
        let img = [t, 2, c.image_rows, c.image_cols];
        if input.radar.shape() != img {
            return Err(Error::Shape(format!("radar input {:?}, expected {img:?}", input.radar.shape())));
        }
        if input.imu.shape() != [c.imu_window, t, 6] {
            return Err(Error::Shape(format!(
                "imu input {:?}, expected {:?}",
                input.imu.shape(),
                [c.imu_window, t, 6]
            )));
        }
        match (&input.depth, c.use_depth) {
            (Some(d), true) if d.shape() == img => {}
            (None, false) => {}
            (Some(_), false) => {}
            _ => return Err(Error::InvalidInput("depth modality missing or misshapen".into())),
        }
        Ok(t)
    }

    fn image_branch(&self, tape: &mut Tape, bound: &Bound, prefix: &str, images: &Tensor) -> Result<Var> {
        let c = &self.config;
        let x = tape.leaf(images);
        let x = tape.scale(x, c.input_scale);
        let plan = c.plan()?;
        let feat = conv_stack_forward(tape, bound, prefix, x, &plan, c.leaky_slope)?;
        let t = tape.shape(feat)[0];
        let flat: usize = tape.shape(feat)[1..].iter().product();
        let feat = tape.reshape(feat, &[t, flat])?;
        linear_forward(tape, bound, &format!("{prefix}.proj"), feat)
    }

    fn imu_branch(&self, tape: &mut Tape, bound: &Bound, imu: &Tensor) -> Result<Var> {
        let x = tape.leaf(imu);
        let steps = (0..self.config.imu_window)
            .map(|l| tape.index0(x, l))
            .collect::<Result<Vec<_>>>()?;
        let layers = lstm_layers(bound, "imu.rnn", 1)?;
        let hs = lstm_forward(tape, &steps, &layers, self.config.imu_hidden)?;
        let last = *hs.last().expect("non-empty window");
        linear_forward(tape, bound, "imu.proj", last)
    }

    fn fuse(&self, tape: &mut Tape, bound: &Bound, feats: &[(&'static str, Var)]) -> Result<Var> {
        let gate = |name: &str| -> Result<GateWeights> {
            Ok(GateWeights {
                rho: bound.get(&format!("{name}.rho"))?,
                phi: bound.get(&format!("{name}.phi"))?,
            })
        };
        match self.config.attention {
            AttentionMode::SingleStage => {
                let parts: Vec<Var> = feats.iter().map(|(_, v)| *v).collect();
                let z = tape.concat_cols(&parts)?;
                Ok(self_attention(tape, z, &gate("att.single")?)?.0)
            }
            AttentionMode::Mixed => {
                let mut attended = Vec::with_capacity(feats.len());
                for &(name, z) in feats {
                    let (za, _) = self_attention(tape, z, &gate(&format!("att.self.{name}"))?)?;
                    attended.push((name, za));
                }
                if attended.len() == 2 {
                    // Pairwise form: output [gated I ; gated M].
                    let (zi, zm) = (attended[0].1, attended[1].1);
                    cross_attention_pair(tape, zm, zi, &gate("att.cross.m")?, &gate("att.cross.i")?)
                } else {
                    let weights = attended
                        .iter()
                        .map(|(n, _)| gate(&format!("att.cross.{n}")))
                        .collect::<Result<Vec<_>>>()?;
                    cross_attention_loo(tape, &attended, &weights)
                }
            }
        }
    }

    /// Predict `[T, 6]` relative poses for a subsequence of frame pairs.
    ///
    /// `dropout_rng` is required in [`Mode::Train`] when dropout is non-zero.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        input: &BatchInput,
        mode: Mode,
        mut dropout_rng: Option<&mut StreamRng>,
    ) -> Result<Var> {
        let c = &self.config;
        let t = self.validate_input(input)?;
        let z_m = self.image_branch(tape, bound, "mmwave", &input.radar)?;
        let z_i = self.imu_branch(tape, bound, &input.imu)?;
        let mut feats = vec![("i", z_i), ("m", z_m)];
        if c.use_depth {
            let d = input.depth.as_ref().expect("validated");
            feats.push(("v", self.image_branch(tape, bound, "depth", d)?));
        }
        let fused = self.fuse(tape, bound, &feats)?;

        let steps = (0..t).map(|k| tape.index0(fused, k)).collect::<Result<Vec<_>>>()?;
        let layers = lstm_layers(bound, "temporal", c.lstm_layers)?;
        let hs = lstm_forward(tape, &steps, &layers, c.lstm_hidden)?;
        let mut x = tape.concat_rows(&hs)?;

        let n_fc = c.fc_sizes.len();
        for i in 0..n_fc {
            x = linear_forward(tape, bound, &format!("fc{i}"), x)?;
            if i + 1 < n_fc {
                x = tape.leaky_relu(x, c.leaky_slope);
                if mode == Mode::Train && c.dropout > 0.0 {
                    let rng = dropout_rng
                        .as_deref_mut()
                        .ok_or_else(|| Error::InvalidInput("training forward needs a dropout rng".into()))?;
                    let keep = 1.0 - c.dropout;
                    let mask = (0..tape.value(x).len())
                        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                        .collect();
                    x = tape.mul_const(x, mask)?;
                }
            }
        }
        Ok(x)
    }

    /// Eval-mode prediction as plain 6-vectors.
    pub fn predict(&self, input: &BatchInput) -> Result<Vec<[f64; 6]>> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let out = self.forward(&mut tape, &bound, input, Mode::Eval, None)?;
        Ok(tape
            .value(out)
            .chunks(6)
            .map(|c| c.try_into().expect("six outputs"))
            .collect())
    }
}

fn init_gate(p: &mut ParamStore, name: &str, target: usize, cond: usize, rng: &mut StreamRng) {
    p.init_uniform(&format!("{name}.rho"), &[target, cond], cond, rng);
    p.init_uniform(&format!("{name}.phi"), &[target, cond], cond, rng);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::attention::attention_param_count;

    #[test]
    fn zero_input_gives_finite_six_vectors() {
        let net = Network::new(NetworkConfig::profile(Profile::Tiny), 1).unwrap();
        for t in [1, 3] {
            let out = net.predict(&BatchInput::zeros(&net.config, t)).unwrap();
            assert_eq!(out.len(), t);
            assert!(out.iter().flatten().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn parameter_count_is_seed_independent_and_matches_arithmetic() {
        let cfg = NetworkConfig::profile(Profile::Tiny);
        let a = Network::new(cfg.clone(), 1).unwrap();
        let b = Network::new(cfg.clone(), 2).unwrap();
        assert_eq!(a.param_count(), b.param_count());
        assert_ne!(a.params, b.params);

        // Tiny: 2-channel 4x4 input, nine 2-channel layers ending at 1x1.
        let conv: usize = [7, 7, 5, 5, 3, 3, 3, 3, 3]
            .iter()
            .enumerate()
            .map(|(i, k)| {
                let cin = if i == 0 { 2 } else { 2 };
                2 * cin * k * k + 2
            })
            .sum();
        let proj_m = 2 * 4 + 4;
        let imu = 4 * 3 * 6 + 4 * 3 * 3 + 4 * 3 + 3 * 3 + 3;
        let att = (2 * 16 + 2 * 9) + (2 * 4 * 3 + 2 * 3 * 4);
        let temporal = (4 * 4 * 7 + 4 * 4 * 4 + 16) + (4 * 4 * 4 + 4 * 4 * 4 + 16);
        let fc = (4 * 5 + 5) + (5 * 4 + 4) + (4 * 6 + 6);
        assert_eq!(a.param_count(), conv + proj_m + imu + att + temporal + fc);
    }

    #[test]
    fn mixed_and_single_stage_allocate_equal_attention_weights() {
        let mut cfg = NetworkConfig::profile(Profile::Tiny);
        cfg.use_depth = true;
        cfg.feature_v = 5;
        let mixed = Network::new(cfg.clone(), 0).unwrap();
        cfg.attention = AttentionMode::SingleStage;
        let single = Network::new(cfg, 0).unwrap();
        let formula = attention_param_count(AttentionMode::Mixed, 4, 3, 5) as usize;
        assert_eq!(mixed.attention_param_count(), formula);
        assert_eq!(single.attention_param_count(), formula);
    }

    #[test]
    fn config_kv_round_trip_and_validation() {
        let mut cfg = NetworkConfig::profile(Profile::Toy);
        cfg.use_depth = true;
        cfg.attention = AttentionMode::SingleStage;
        assert_eq!(NetworkConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
        let mut bad = cfg.to_kv();
        bad.insert("dropout".into(), "1.5".into());
        assert!(NetworkConfig::from_kv(&bad).is_err());
    }

    #[test]
    fn input_shape_is_checked() {
        let net = Network::new(NetworkConfig::profile(Profile::Tiny), 1).unwrap();
        let mut input = BatchInput::zeros(&net.config, 2);
        input.imu = Tensor::zeros(&[2, 2, 6]);
        assert!(net.predict(&input).is_err());
    }

    #[test]
    fn train_mode_requires_rng() {
        let net = Network::new(NetworkConfig::profile(Profile::Tiny), 1).unwrap();
        let mut tape = Tape::new();
        let bound = net.params.bind(&mut tape);
        let input = BatchInput::zeros(&net.config, 2);
        assert!(net.forward(&mut tape, &bound, &input, Mode::Train, None).is_err());
    }
}
