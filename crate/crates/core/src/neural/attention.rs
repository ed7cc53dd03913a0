//! Mixed (two-stage) attention fusion.
//!
//! Each gate embeds a conditioning feature vector twice, `ρ = W^ρ z` and
//! `φ = W^φ z`, and produces the per-element mask `a_i = σ(ρ_i · φ_i)`.
//! The first stage conditions every modality on itself (self-attention);
//! the second stage conditions each modality on the others (cross-attention).
//! Weight matrices have shape `[target length, conditioning length]`.

use super::tape::{Tape, Var};
use crate::{Error, Result};

/// Embedding pair `(W^ρ, W^φ)` of one gate.
#[derive(Debug, Clone, Copy)]
pub struct GateWeights {
    pub rho: Var,
    pub phi: Var,
}

/// `σ((W^ρ z) ⊙ (W^φ z))` for `z: [B, N_cond]`, giving a `[B, N_target]` mask.
pub fn gate_mask(tape: &mut Tape, cond: Var, w: &GateWeights) -> Result<Var> {
    let rho = tape.linear(cond, w.rho, None)?;
    let phi = tape.linear(cond, w.phi, None)?;
    let sim = tape.mul(rho, phi)?;
    Ok(tape.sigmoid(sim))
}

/// Self-attention: returns the attended features and the mask.
pub fn self_attention(tape: &mut Tape, z: Var, w: &GateWeights) -> Result<(Var, Var)> {
    let mask = gate_mask(tape, z, w)?;
    if tape.shape(mask) != tape.shape(z) {
        return Err(Error::Shape(format!(
            "self-attention weights produce {:?} for features {:?}",
            tape.shape(mask),
            tape.shape(z)
        )));
    }
    let attended = tape.mul(mask, z)?;
    Ok((attended, mask))
}

/// Two-modality cross-attention.
///
/// `first_from_second` gates `first` conditioned on `second` and vice versa.
/// The output is `[gated second ; gated first]`.
pub fn cross_attention_pair(
    tape: &mut Tape,
    first: Var,
    second: Var,
    first_from_second: &GateWeights,
    second_from_first: &GateWeights,
) -> Result<Var> {
    let a_first = gate_mask(tape, second, first_from_second)?;
    let a_second = gate_mask(tape, first, second_from_first)?;
    let gated_first = tape.mul(a_first, first)?;
    let gated_second = tape.mul(a_second, second)?;
    tape.concat_cols(&[gated_second, gated_first])
}

/// Leave-one-out cross-attention for three or more modalities.
///
/// The mask of modality `m` is conditioned on the concatenation of all other
/// modalities (in declared order). Gated features are concatenated in declared order.
pub fn cross_attention_loo(tape: &mut Tape, features: &[(&str, Var)], weights: &[GateWeights]) -> Result<Var> {
    if features.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "leave-one-out attention needs at least 3 modalities, got {}; use the pairwise form",
            features.len()
        )));
    }
    if weights.len() != features.len() {
        return Err(Error::Shape("one gate per modality required".into()));
    }
    let mut gated = Vec::with_capacity(features.len());
    for (m, ((_, z), w)) in features.iter().zip(weights).enumerate() {
        let others: Vec<Var> = features
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != m)
            .map(|(_, (_, v))| *v)
            .collect();
        let cond = tape.concat_cols(&others)?;
        let mask = gate_mask(tape, cond, w)?;
        gated.push(tape.mul(mask, *z)?);
    }
    tape.concat_cols(&gated)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionMode {
    /// Self-attention over the concatenation of all modalities.
    SingleStage,
    /// Per-modality self-attention followed by cross-attention.
    Mixed,
}

/// Number of attention weights for three modalities of the given lengths.
pub fn attention_param_count(mode: AttentionMode, n_m: u64, n_i: u64, n_v: u64) -> u64 {
    match mode {
        AttentionMode::SingleStage => 2 * (n_m + n_i + n_v).pow(2),
        AttentionMode::Mixed => 2 * (n_m * n_m + n_i * n_i + n_v * n_v) + 4 * (n_m * n_i + n_v * n_i + n_m * n_v),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::tensor::Tensor;

    fn w(tape: &mut Tape, rows: usize, cols: usize, v: f64) -> GateWeights {
        GateWeights {
            rho: tape.constant(&[rows, cols], vec![v; rows * cols]).unwrap(),
            phi: tape.constant(&[rows, cols], vec![v; rows * cols]).unwrap(),
        }
    }

    #[test]
    fn zero_features_give_half_masks() {
        let mut tape = Tape::new();
        let z = tape.zeros(&[1, 4]);
        let g = w(&mut tape, 4, 4, 0.7);
        let (att, mask) = self_attention(&mut tape, z, &g).unwrap();
        assert!(tape.value(mask).iter().all(|&m| m == 0.5));
        assert!(tape.value(att).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_self_attention_by_hand() {
        let mut tape = Tape::new();
        let z = tape.constant(&[1, 1], vec![2.0]).unwrap();
        let g = w(&mut tape, 1, 1, 1.0);
        let (att, mask) = self_attention(&mut tape, z, &g).unwrap();
        let expected = 1.0 / (1.0 + (-4.0f64).exp());
        assert!((tape.value(mask)[0] - expected).abs() < 1e-15);
        assert!((tape.value(mask)[0] - 0.98201).abs() < 1e-5);
        assert!((tape.value(att)[0] - 1.96403).abs() < 1e-5);
    }

    #[test]
    fn scalar_cross_pair_by_hand() {
        let (zm, zi) = (0.5, -1.5);
        let (wm, wi) = (1.0, 1.0);
        let mut tape = Tape::new();
        let m = tape.constant(&[1, 1], vec![zm]).unwrap();
        let i = tape.constant(&[1, 1], vec![zi]).unwrap();
        let g_m = w(&mut tape, 1, 1, wm);
        let g_i = w(&mut tape, 1, 1, wi);
        let out = cross_attention_pair(&mut tape, m, i, &g_m, &g_i).unwrap();
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let a_i_to_m = sig(wm * zi * wm * zi);
        let a_m_to_i = sig(wi * zm * wi * zm);
        let got = tape.value(out);
        assert!((got[0] - a_m_to_i * zi).abs() < 1e-10);
        assert!((got[1] - a_i_to_m * zm).abs() < 1e-10);
    }

    #[test]
    fn cross_pair_shapes_and_zero_input() {
        let mut tape = Tape::new();
        let m = tape.zeros(&[3, 5]);
        let i = tape.zeros(&[3, 2]);
        let g_m = w(&mut tape, 5, 2, 0.3);
        let g_i = w(&mut tape, 2, 5, 0.3);
        let out = cross_attention_pair(&mut tape, m, i, &g_m, &g_i).unwrap();
        assert_eq!(tape.shape(out), &[3, 7]);
        assert!(tape.value(out).iter().all(|&v| v == 0.0));
        let bad = w(&mut tape, 5, 5, 0.3);
        assert!(cross_attention_pair(&mut tape, m, i, &bad, &g_i).is_err());
    }

    #[test]
    fn loo_requires_three_and_concatenates() {
        let mut tape = Tape::new();
        let feats: Vec<Var> = (0..3).map(|_| tape.zeros(&[1, 8])).collect();
        let ws: Vec<GateWeights> = (0..3).map(|_| w(&mut tape, 8, 16, 0.1)).collect();
        let named = [("m", feats[0]), ("i", feats[1]), ("v", feats[2])];
        let out = cross_attention_loo(&mut tape, &named, &ws).unwrap();
        assert_eq!(tape.shape(out), &[1, 24]);
        assert!(tape.value(out).iter().all(|&v| v == 0.0));
        assert!(cross_attention_loo(&mut tape, &named[..2], &ws[..2]).is_err());
    }

    #[test]
    fn loo_restricted_to_two_modalities_matches_pair() {
        // Declared order (I, M, V) with V ≡ 0: conditioning columns for V drop out,
        // so the I and M blocks must equal the pairwise output [gated I ; gated M].
        let mut tape = Tape::new();
        let zm = tape.constant(&[1, 1], vec![0.8]).unwrap();
        let zi = tape.constant(&[1, 1], vec![-0.6]).unwrap();
        let zv = tape.zeros(&[1, 1]);
        let (rm, pm, ri, pi) = (0.9, -1.3, 0.4, 1.7);
        let c = |tape: &mut Tape, d: Vec<f64>| tape.constant(&[1, d.len()], d).unwrap();
        let m_from_i = GateWeights { rho: c(&mut tape, vec![rm]), phi: c(&mut tape, vec![pm]) };
        let i_from_m = GateWeights { rho: c(&mut tape, vec![ri]), phi: c(&mut tape, vec![pi]) };
        let pair = cross_attention_pair(&mut tape, zm, zi, &m_from_i, &i_from_m).unwrap();

        // I conditioned on [M, V]; M conditioned on [I, V]; V conditioned on [I, M].
        let loo_i = GateWeights { rho: c(&mut tape, vec![ri, 5.0]), phi: c(&mut tape, vec![pi, -2.0]) };
        let loo_m = GateWeights { rho: c(&mut tape, vec![rm, 3.0]), phi: c(&mut tape, vec![pm, 1.0]) };
        let loo_v = GateWeights { rho: c(&mut tape, vec![0.2, 0.3]), phi: c(&mut tape, vec![0.4, 0.5]) };
        let out = cross_attention_loo(&mut tape, &[("i", zi), ("m", zm), ("v", zv)], &[loo_i, loo_m, loo_v]).unwrap();
        let got = tape.value(out);
        let want = tape.value(pair);
        assert!((got[0] - want[0]).abs() < 1e-12);
        assert!((got[1] - want[1]).abs() < 1e-12);
        assert_eq!(got[2], 0.0);
    }

    #[test]
    fn mask_range_is_open_unit_interval() {
        let mut tape = Tape::new();
        let z = tape.leaf(&Tensor::new(vec![1, 3], vec![3.0, -2.0, 0.1]).unwrap());
        let g = w(&mut tape, 3, 3, 0.5);
        let (_, mask) = self_attention(&mut tape, z, &g).unwrap();
        assert!(tape.value(mask).iter().all(|&m| m > 0.0 && m < 1.0));
    }

    #[test]
    fn param_count_examples() {
        assert_eq!(attention_param_count(AttentionMode::SingleStage, 1, 1, 1), 18);
        assert_eq!(attention_param_count(AttentionMode::Mixed, 1, 1, 1), 18);
        assert_eq!(attention_param_count(AttentionMode::SingleStage, 8, 4, 2), 392);
        assert_eq!(attention_param_count(AttentionMode::Mixed, 8, 4, 2), 392);
    }
}
