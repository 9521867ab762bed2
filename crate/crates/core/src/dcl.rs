//! Contrastive objectives over factorized representations: edge-dropout
//! views, the bilinear discriminator, node discrimination across views and
//! edge discrimination between interaction features and review factors.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::RatingGraph;
use crate::error::{Error, Result};
use crate::params::ParameterStore;
use crate::tape::{Tape, Var};

/// Discriminator outputs are clamped to `[DISC_EPS, 1 - DISC_EPS]` before logs.
pub const DISC_EPS: f64 = 1e-7;

pub mod names {
    pub const FND_USER: &str = "dcl.fnd_user";
    pub const FND_ITEM: &str = "dcl.fnd_item";
    pub const FED: &str = "dcl.fed";
}

/// Register the three bilinear forms of width `width`.
pub fn register_params(store: &mut ParameterStore, width: usize) -> Result<()> {
    for n in [names::FND_USER, names::FND_ITEM, names::FED] {
        store.xavier(n, &[width, width])?;
    }
    Ok(())
}

/// Drop every edge independently with probability `p`.
pub fn drop_edges(graph: &RatingGraph, p: f64, seed: u64) -> Result<RatingGraph> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!(
            "drop probability must lie in [0,1], got {p}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep: Vec<bool> = (0..graph.num_edges())
        .map(|_| rng.random::<f64>() >= p)
        .collect();
    Ok(graph.subgraph(&keep))
}

/// Two independent dropout views of the same graph.
pub struct ViewPair {
    pub first: RatingGraph,
    pub second: RatingGraph,
    pub p: f64,
}

impl ViewPair {
    pub fn sample(graph: &RatingGraph, p: f64, seed1: u64, seed2: u64) -> Result<Self> {
        Ok(Self {
            first: drop_edges(graph, p, seed1)?,
            second: drop_edges(graph, p, seed2)?,
            p,
        })
    }
}

/// `clamp(sigmoid(a^T W b))` row-wise, `n x 1`.
pub fn discriminate(tape: &mut Tape, a: Var, b: Var, w: Var) -> Var {
    let aw = tape.matmul(a, w);
    let logit = tape.row_dot(aw, b);
    let sig = tape.sigmoid(logit);
    tape.clamp(sig, DISC_EPS, 1.0 - DISC_EPS)
}

/// Scalar discriminator for a single pair.
pub fn discriminate_pair(a: &[f64], b: &[f64], w: &[f64]) -> f64 {
    let n = a.len();
    let mut logit = 0.0;
    for i in 0..n {
        for j in 0..n {
            logit += a[i] * w[i * n + j] * b[j];
        }
    }
    (1.0 / (1.0 + (-logit).exp())).clamp(DISC_EPS, 1.0 - DISC_EPS)
}

/// Form of the negative-pair term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum NegativeTerm {
    /// `+ E[log D(neg)]`, as the objective is usually written.
    #[default]
    Literal,
    /// `- E[log(1 - D(neg))]`, bounded below.
    Stabilized,
}

/// Anchor/negative index pairs for `n` candidates drawn from `pool`.
///
/// For each anchor `a` in `0..n`, a negative is drawn uniformly from `pool`;
/// if it equals `anchor_key(a)` it is redrawn once, and the anchor is skipped
/// if the redraw collides again.
pub fn sample_negatives(
    n: usize,
    pool: &[usize],
    anchor_key: impl Fn(usize) -> usize,
    rng: &mut impl Rng,
) -> (Rc<[usize]>, Rc<[usize]>) {
    let mut anchors = Vec::with_capacity(n);
    let mut negs = Vec::with_capacity(n);
    if pool.is_empty() {
        return (anchors.into(), negs.into());
    }
    for a in 0..n {
        let key = anchor_key(a);
        let mut pick = pool[rng.random_range(0..pool.len())];
        if pick == key {
            pick = pool[rng.random_range(0..pool.len())];
            if pick == key {
                continue;
            }
        }
        anchors.push(a);
        negs.push(pick);
    }
    (anchors.into(), negs.into())
}

/// `-mean log D(pos) + mean log D(neg)` (or the stabilized variant) over
/// per-factor column pairs.
fn contrastive(tape: &mut Tape, pos: &[Var], neg: &[Var], term: NegativeTerm) -> Var {
    let pos_cat = tape.hconcat(pos);
    let pos_log = tape.ln(pos_cat);
    let pos_mean = tape.mean(pos_log);
    let pos_part = tape.scale(pos_mean, -1.0);
    let neg_cat = tape.hconcat(neg);
    let neg_part = match term {
        NegativeTerm::Literal => {
            let l = tape.ln(neg_cat);
            tape.mean(l)
        }
        NegativeTerm::Stabilized => {
            let flip = tape.scale(neg_cat, -1.0);
            let comp = tape.add_scalar(flip, 1.0);
            let l = tape.ln(comp);
            let m = tape.mean(l);
            tape.scale(m, -1.0)
        }
    };
    tape.add(pos_part, neg_part)
}

/// Node discrimination on one node side.
///
/// `first[k]` and `second[k]` are the per-factor final embeddings of the same
/// nodes in the two views. Negatives pair node `i` in the first view with
/// node `negatives[j]` in the second.
pub fn fnd_side(
    tape: &mut Tape,
    w: Var,
    first: &[Var],
    second: &[Var],
    anchors: &Rc<[usize]>,
    negatives: &Rc<[usize]>,
    term: NegativeTerm,
) -> Var {
    let mut pos = Vec::with_capacity(first.len());
    let mut neg = Vec::with_capacity(first.len());
    for (&a, &b) in first.iter().zip(second) {
        pos.push(discriminate(tape, a, b, w));
        let an = tape.gather(a, anchors);
        let bn = tape.gather(b, negatives);
        neg.push(discriminate(tape, an, bn, w));
    }
    contrastive(tape, &pos, &neg, term)
}

/// Edge discrimination: interaction features `features[k]` (`batch x d/K`)
/// against review factors `reviews[k]` (`|E| x d/K`). Row `b` of the batch is
/// edge `batch_edges[b]`; negatives are edge indices into `reviews`.
#[allow(clippy::too_many_arguments)]
pub fn fed_loss(
    tape: &mut Tape,
    w: Var,
    features: &[Var],
    reviews: &[Var],
    batch_edges: &Rc<[usize]>,
    anchors: &Rc<[usize]>,
    negatives: &Rc<[usize]>,
    term: NegativeTerm,
) -> Result<Var> {
    if batch_edges.len() < 2 {
        return Err(Error::Dataset(format!(
            "edge discrimination needs at least 2 training edges, got {}",
            batch_edges.len()
        )));
    }
    let mut pos = Vec::with_capacity(features.len());
    let mut neg = Vec::with_capacity(features.len());
    for (&h, &e) in features.iter().zip(reviews) {
        let e_pos = tape.gather(e, batch_edges);
        pos.push(discriminate(tape, h, e_pos, w));
        let h_anchor = tape.gather(h, anchors);
        let e_neg = tape.gather(e, negatives);
        neg.push(discriminate(tape, h_anchor, e_neg, w));
    }
    Ok(contrastive(tape, &pos, &neg, term))
}
