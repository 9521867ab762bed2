//! Attention-based interaction head: per-factor interaction features,
//! per-factor ratings and attention-weighted fusion.

use crate::error::{Error, Result};
use crate::params::ParameterStore;
use crate::tape::{Tape, Var};

pub mod names {
    pub const MLP_WEIGHT: &str = "ai.mlp.weight";
    pub const MLP_BIAS: &str = "ai.mlp.bias";
    pub const RATING_W: &str = "ai.w";
    pub const ATTN_W: &str = "ai.w_r";
    pub const ATTN_B: &str = "ai.b_r";
}

/// Register head parameters for chunk width `width`.
pub fn register_params(store: &mut ParameterStore, prefix: &str, width: usize) -> Result<()> {
    let n = |s: &str| format!("{prefix}{s}");
    store.xavier(&n(names::MLP_WEIGHT), &[2 * width, width])?;
    store.xavier(&n(names::MLP_BIAS), &[width])?;
    store.xavier(&n(names::RATING_W), &[width, 1])?;
    store.xavier(&n(names::ATTN_W), &[width, 1])?;
    store.xavier(&n(names::ATTN_B), &[1])?;
    Ok(())
}

/// Parameter handles of one interaction head on a tape.
#[derive(Clone, Copy, Debug)]
pub struct Head {
    pub mlp_w: Var,
    pub mlp_b: Var,
    pub w: Var,
    pub w_r: Var,
    pub b_r: Var,
}

impl Head {
    pub fn load(tape: &mut Tape, store: &ParameterStore, prefix: &str) -> Result<Self> {
        let n = |s: &str| format!("{prefix}{s}");
        Ok(Self {
            mlp_w: tape.param(store, &n(names::MLP_WEIGHT))?,
            mlp_b: tape.param(store, &n(names::MLP_BIAS))?,
            w: tape.param(store, &n(names::RATING_W))?,
            w_r: tape.param(store, &n(names::ATTN_W))?,
            b_r: tape.param(store, &n(names::ATTN_B))?,
        })
    }
}

/// `h = relu([u, v] W + b)` row-wise.
pub fn interaction_feature(tape: &mut Tape, head: &Head, u: Var, v: Var) -> Var {
    let cat = tape.hconcat(&[u, v]);
    let lin = tape.matmul(cat, head.mlp_w);
    let aff = tape.add_row(lin, head.mlp_b);
    tape.relu(aff)
}

/// `r^k = w^T h`, one column.
pub fn factor_rating(tape: &mut Tape, head: &Head, h: Var) -> Var {
    tape.matmul(h, head.w)
}

/// Pre-softmax attention logits `a_k = relu(w_r^T h^k + b_r)`, `n x K`.
pub fn attention_logits(tape: &mut Tape, head: &Head, hs: &[Var]) -> Var {
    let cols: Vec<Var> = hs
        .iter()
        .map(|&h| {
            let lin = tape.matmul(h, head.w_r);
            let aff = tape.add_row(lin, head.b_r);
            tape.relu(aff)
        })
        .collect();
    tape.hconcat(&cols)
}

/// `alpha = softmax(a / tau)` over factors.
pub fn attention_weights(tape: &mut Tape, head: &Head, hs: &[Var], tau: f64) -> Result<Var> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::Domain(format!("tau must be positive, got {tau}")));
    }
    let logits = attention_logits(tape, head, hs);
    Ok(tape.softmax_rows(logits, tau))
}

/// `r = sum_k alpha_k r^k`.
pub fn predict_rating(tape: &mut Tape, alpha: Var, factor_ratings: Var) -> Var {
    let weighted = tape.mul(alpha, factor_ratings);
    tape.row_sum(weighted)
}

/// Tape handles for a batch of predictions.
#[derive(Clone, Debug)]
pub struct InteractionOutput {
    /// Per-factor interaction features, `n x d/K` each.
    pub features: Vec<Var>,
    /// `n x K`
    pub factor_ratings: Var,
    /// `n x K`
    pub alpha: Var,
    /// `n x 1`
    pub rating: Var,
}

/// Run the head over per-factor user/item rows already gathered for a batch.
pub fn interact(
    tape: &mut Tape,
    head: &Head,
    user_rows: &[Var],
    item_rows: &[Var],
    tau: f64,
) -> Result<InteractionOutput> {
    let features: Vec<Var> = user_rows
        .iter()
        .zip(item_rows)
        .map(|(&u, &v)| interaction_feature(tape, head, u, v))
        .collect();
    let ratings: Vec<Var> = features
        .iter()
        .map(|&h| factor_rating(tape, head, h))
        .collect();
    let factor_ratings = tape.hconcat(&ratings);
    let alpha = attention_weights(tape, head, &features, tau)?;
    let rating = predict_rating(tape, alpha, factor_ratings);
    Ok(InteractionOutput {
        features,
        factor_ratings,
        alpha,
        rating,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn store(width: usize, seed: u64) -> ParameterStore {
        let mut s = ParameterStore::new(seed);
        register_params(&mut s, "", width).unwrap();
        s
    }

    #[test]
    fn zero_mlp_gives_zero_feature() {
        let mut s = store(3, 1);
        s.get_mut(names::MLP_WEIGHT)
            .unwrap()
            .value
            .data_mut()
            .fill(0.0);
        s.get_mut(names::MLP_BIAS)
            .unwrap()
            .value
            .data_mut()
            .fill(0.0);
        let mut t = Tape::new();
        let head = Head::load(&mut t, &s, "").unwrap();
        let u = t.constant(2, 3, vec![0.3, -1.0, 2.0, 0.1, 0.2, 0.3]);
        let v = t.constant(2, 3, vec![1.0, 1.0, -1.0, 0.5, 0.5, 0.5]);
        let h = interaction_feature(&mut t, &head, u, v);
        assert!(t.value(h).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn zero_inputs_give_relu_bias() {
        let s = store(3, 2);
        let mut t = Tape::new();
        let head = Head::load(&mut t, &s, "").unwrap();
        let z = t.constant(1, 3, vec![0.0; 3]);
        let h = interaction_feature(&mut t, &head, z, z);
        let b = s.value(names::MLP_BIAS).unwrap().data();
        let want: Vec<f64> = b.iter().map(|v| v.max(0.0)).collect();
        assert_eq!(t.value(h), want.as_slice());
    }

    #[test]
    fn feature_matches_scalar_loop() {
        let s = store(4, 3);
        let mut t = Tape::new();
        let head = Head::load(&mut t, &s, "").unwrap();
        let uv: Vec<f64> = (0..8).map(|i| (i as f64 * 0.37).sin()).collect();
        let vv: Vec<f64> = (0..8).map(|i| (i as f64 * 0.91).cos()).collect();
        let u = t.constant(2, 4, uv.clone());
        let v = t.constant(2, 4, vv.clone());
        let h = interaction_feature(&mut t, &head, u, v);
        let w = s.value(names::MLP_WEIGHT).unwrap();
        let b = s.value(names::MLP_BIAS).unwrap().data();
        for row in 0..2 {
            let x: Vec<f64> = uv[row * 4..row * 4 + 4]
                .iter()
                .chain(&vv[row * 4..row * 4 + 4])
                .copied()
                .collect();
            for c in 0..4 {
                let mut acc = b[c];
                for (r, xr) in x.iter().enumerate() {
                    acc += xr * w.get(r, c);
                }
                assert!((t.value(h)[row * 4 + c] - acc.max(0.0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn factor_rating_cases() {
        let mut s = ParameterStore::new(0);
        register_params(&mut s, "", 3).unwrap();
        let w = vec![0.5, -2.0, 1.5];
        s.get_mut(names::RATING_W).unwrap().value = Tensor::matrix(3, 1, w.clone());
        let mut t = Tape::new();
        let head = Head::load(&mut t, &s, "").unwrap();
        let hw = t.constant(1, 3, w.clone());
        let r = factor_rating(&mut t, &head, hw);
        assert!((t.value(r)[0] - 6.5).abs() < 1e-15);
        let e1 = t.constant(1, 3, vec![1.0, 0.0, 0.0]);
        let r1 = factor_rating(&mut t, &head, e1);
        assert_eq!(t.value(r1)[0], 0.5);

        let mut s0 = s.clone();
        s0.get_mut(names::RATING_W)
            .unwrap()
            .value
            .data_mut()
            .fill(0.0);
        let mut t0 = Tape::new();
        let head0 = Head::load(&mut t0, &s0, "").unwrap();
        let h = t0.constant(1, 3, vec![3.0, 1.0, -2.0]);
        let r0 = factor_rating(&mut t0, &head0, h);
        assert_eq!(t0.value(r0)[0], 0.0);
    }

    #[test]
    fn attention_cases() {
        let s = store(2, 4);
        let mut t = Tape::new();
        let head = Head::load(&mut t, &s, "").unwrap();
        let h = t.constant(1, 2, vec![0.4, 0.9]);
        let one = attention_weights(&mut t, &head, &[h], 0.5).unwrap();
        assert_eq!(t.value(one), &[1.0]);
        let same = attention_weights(&mut t, &head, &[h, h, h, h], 0.5).unwrap();
        assert!(t.value(same).iter().all(|&a| (a - 0.25).abs() < 1e-15));
        assert!(attention_weights(&mut t, &head, &[h], 0.0).is_err());
        // a = (1, 0) through the softmax
        let a = t.constant(1, 2, vec![1.0, 0.0]);
        let alpha = t.softmax_rows(a, 1.0);
        assert!((t.value(alpha)[0] - 0.7310585786300049).abs() < 1e-12);
    }

    #[test]
    fn prediction_cases() {
        let mut t = Tape::new();
        let rk = t.constant(1, 2, vec![2.0, 4.0]);
        let deg = t.constant(1, 2, vec![1.0, 0.0]);
        let r = predict_rating(&mut t, deg, rk);
        assert_eq!(t.value(r)[0], 2.0);
        let eq = t.constant(1, 2, vec![0.5, 0.5]);
        let r = predict_rating(&mut t, eq, rk);
        assert_eq!(t.value(r)[0], 3.0);
        let c = t.constant(1, 3, vec![3.5; 3]);
        let a = t.constant(1, 3, vec![0.2, 0.3, 0.5]);
        let r = predict_rating(&mut t, a, c);
        assert!((t.value(r)[0] - 3.5).abs() < 1e-15);
    }
}
