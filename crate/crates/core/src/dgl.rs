//! Disentangled graph learning: per-factor review projections, edge scores,
//! factorized message passing and layer combination.
//!
//! All per-factor quantities are kept as separate `rows x d/K` matrices, one
//! per channel `k`. Edge scores are `|E| x K` matrices whose rows sum to one.

use std::rc::Rc;

use crate::data::RatingGraph;
use crate::error::{Error, Result};
use crate::params::ParameterStore;
use crate::tape::{Tape, Var};

/// How the per-edge factor coefficients are formed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScoreMode {
    /// `eta * se + (1 - eta) * st`
    Combined,
    /// Every coefficient fixed at `1/K`.
    Uniform,
    /// Semantic scores only.
    SemanticOnly,
    /// Structural scores only.
    StructuralOnly,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DglConfig {
    pub d: usize,
    pub factors: usize,
    pub layers: usize,
    pub tau: f64,
    pub eta: f64,
    pub scores: ScoreMode,
}

impl DglConfig {
    pub fn chunk(&self) -> usize {
        self.d / self.factors
    }

    pub fn validate(&self) -> Result<()> {
        if self.factors == 0 || self.d == 0 || !self.d.is_multiple_of(self.factors) {
            return Err(Error::Config(format!(
                "d={} must be a positive multiple of K={}",
                self.d, self.factors
            )));
        }
        if self.layers == 0 {
            return Err(Error::Config("need at least one propagation layer".into()));
        }
        if self.tau.is_nan() || self.tau <= 0.0 {
            return Err(Error::Domain(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::Domain(format!(
                "eta must lie in [0,1], got {}",
                self.eta
            )));
        }
        Ok(())
    }
}

pub mod names {
    pub const USER_EMB: &str = "dgl.user_emb";
    pub const ITEM_EMB: &str = "dgl.item_emb";

    pub fn proj_weight(k: usize) -> String {
        format!("dgl.proj.{k}.weight")
    }

    pub fn proj_bias(k: usize) -> String {
        format!("dgl.proj.{k}.bias")
    }

    pub fn prototype(k: usize) -> String {
        format!("dgl.proto.{k}")
    }

    pub fn rating_weight(layer: usize, rating: usize, k: usize) -> String {
        format!("dgl.layer.{layer}.rating.{rating}.factor.{k}")
    }

    pub fn aggregate(layer: usize) -> String {
        format!("dgl.layer.{layer}.agg")
    }
}

/// Register every graph-learning parameter (Xavier uniform).
pub fn register_params(
    store: &mut ParameterStore,
    cfg: &DglConfig,
    num_users: usize,
    num_items: usize,
    num_ratings: usize,
) -> Result<()> {
    cfg.validate()?;
    let (d, dk) = (cfg.d, cfg.chunk());
    store.xavier(names::USER_EMB, &[num_users.max(1), d])?;
    store.xavier(names::ITEM_EMB, &[num_items.max(1), d])?;
    for k in 0..cfg.factors {
        store.xavier(&names::proj_weight(k), &[d, dk])?;
        store.xavier(&names::proj_bias(k), &[dk])?;
        store.xavier(&names::prototype(k), &[dk, 1])?;
    }
    for l in 1..=cfg.layers {
        for r in 0..num_ratings {
            for k in 0..cfg.factors {
                store.xavier(&names::rating_weight(l, r, k), &[dk, dk])?;
            }
        }
        store.xavier(&names::aggregate(l), &[dk, dk])?;
    }
    Ok(())
}

/// Column chunks `[k*dk, (k+1)*dk)` of an embedding matrix.
pub fn chunk_embeddings(tape: &mut Tape, emb: Var, factors: usize) -> Vec<Var> {
    let dk = tape.cols(emb) / factors;
    (0..factors)
        .map(|k| tape.col_slice(emb, k * dk, dk))
        .collect()
}

/// `e^k = relu(e W_k + b_k)` for every factor; `reviews` is `|E| x d`.
pub fn project_reviews(
    tape: &mut Tape,
    store: &ParameterStore,
    reviews: Var,
    factors: usize,
) -> Result<Vec<Var>> {
    (0..factors)
        .map(|k| {
            let w = tape.param(store, &names::proj_weight(k))?;
            let b = tape.param(store, &names::proj_bias(k))?;
            let lin = tape.matmul(reviews, w);
            let aff = tape.add_row(lin, b);
            Ok(tape.relu(aff))
        })
        .collect()
}

/// `se = softmax_k(cos(e^k, c_k) / tau)`, `|E| x K`.
pub fn semantic_scores(
    tape: &mut Tape,
    store: &ParameterStore,
    review_factors: &[Var],
    tau: f64,
) -> Result<Var> {
    let mut logits = Vec::with_capacity(review_factors.len());
    for (k, &ek) in review_factors.iter().enumerate() {
        let c = tape.param(store, &names::prototype(k))?;
        logits.push(tape.row_cosine_vec(ek, c));
    }
    let cat = tape.hconcat(&logits);
    Ok(tape.softmax_rows(cat, tau))
}

/// `st = softmax_k(cos(u_i^k, v_j^k) / tau)` from the previous layer's chunks.
pub fn structural_scores(
    tape: &mut Tape,
    graph: &RatingGraph,
    user_chunks: &[Var],
    item_chunks: &[Var],
    tau: f64,
) -> Var {
    let logits: Vec<Var> = user_chunks
        .iter()
        .zip(item_chunks)
        .map(|(&u, &v)| {
            let ue = tape.gather(u, graph.edge_users());
            let ve = tape.gather(v, graph.edge_items());
            tape.row_cosine(ue, ve)
        })
        .collect();
    let cat = tape.hconcat(&logits);
    tape.softmax_rows(cat, tau)
}

/// `s = eta * se + (1 - eta) * st`.
pub fn combine_scores(tape: &mut Tape, se: Var, st: Var, eta: f64) -> Result<Var> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::Domain(format!("eta must lie in [0,1], got {eta}")));
    }
    let a = tape.scale(se, eta);
    let b = tape.scale(st, 1.0 - eta);
    Ok(tape.add(a, b))
}

/// One propagation layer over all channels. Returns new (user, item) chunks.
///
/// Message from item `j` to user `i` in channel `k`:
/// `s_ij (e_ij^k W_r + v_j) / sqrt(D_i D_j)`, summed over ratings and
/// neighbours, then mapped by the layer's shared aggregation matrix.
/// Item updates are symmetric.
#[allow(clippy::too_many_arguments)]
pub fn message_passing_layer(
    tape: &mut Tape,
    store: &ParameterStore,
    graph: &RatingGraph,
    scores: Var,
    user_prev: &[Var],
    item_prev: &[Var],
    review_factors: &[Var],
    layer: usize,
) -> Result<(Vec<Var>, Vec<Var>)> {
    let factors = user_prev.len();
    let (m, n, e) = (graph.num_users(), graph.num_items(), graph.num_edges());
    let users = graph.edge_users();
    let items = graph.edge_items();
    let agg = tape.param(store, &names::aggregate(layer))?;
    let mut user_out = Vec::with_capacity(factors);
    let mut item_out = Vec::with_capacity(factors);
    for k in 0..factors {
        let dk = tape.cols(user_prev[k]);
        let sk = tape.col_slice(scores, k, 1);
        let deg_u = tape.scatter_add(sk, users, m);
        let deg_i = tape.scatter_add(sk, items, n);
        let inv_u = tape.inv_sqrt_guarded(deg_u);
        let inv_i = tape.inv_sqrt_guarded(deg_i);
        let inv_ue = tape.gather(inv_u, users);
        let inv_ie = tape.gather(inv_i, items);
        let coef = tape.mul(sk, inv_ue);
        let coef = tape.mul(coef, inv_ie);

        let mut review_term: Option<Var> = None;
        for r in 0..graph.num_ratings() {
            let idx = graph.edges_with_rating(r);
            if idx.is_empty() {
                continue;
            }
            let w = tape.param(store, &names::rating_weight(layer, r, k))?;
            let er = tape.gather(review_factors[k], idx);
            let proj = tape.matmul(er, w);
            let placed = tape.scatter_add(proj, idx, e);
            review_term = Some(match review_term {
                Some(acc) => tape.add(acc, placed),
                None => placed,
            });
        }
        let review_term = match review_term {
            Some(v) => v,
            None => tape.full(e, dk, 0.0),
        };

        let v_nb = tape.gather(item_prev[k], items);
        let to_user = tape.add(review_term, v_nb);
        let to_user = tape.mul_col(to_user, coef);
        let sum_u = tape.scatter_add(to_user, users, m);
        user_out.push(tape.matmul_bt(sum_u, agg));

        let u_nb = tape.gather(user_prev[k], users);
        let to_item = tape.add(review_term, u_nb);
        let to_item = tape.mul_col(to_item, coef);
        let sum_i = tape.scatter_add(to_item, items, n);
        item_out.push(tape.matmul_bt(sum_i, agg));
    }
    Ok((user_out, item_out))
}

/// Mean over layers `1..=L` per channel.
pub fn layer_combine(tape: &mut Tape, per_layer: &[Vec<Var>]) -> Vec<Var> {
    assert!(
        !per_layer.is_empty(),
        "layer_combine needs at least one layer"
    );
    let factors = per_layer[0].len();
    let inv = 1.0 / per_layer.len() as f64;
    (0..factors)
        .map(|k| {
            let mut acc = per_layer[0][k];
            for layer in &per_layer[1..] {
                acc = tape.add(acc, layer[k]);
            }
            if per_layer.len() == 1 {
                acc
            } else {
                tape.scale(acc, inv)
            }
        })
        .collect()
}

/// Everything produced by one graph-learning pass.
#[derive(Clone, Debug)]
pub struct DglOutput {
    /// Final user chunks, one `M x d/K` matrix per factor.
    pub users: Vec<Var>,
    /// Final item chunks, one `N x d/K` matrix per factor.
    pub items: Vec<Var>,
    /// Layer-0 chunks of the ID embeddings.
    pub user_init: Vec<Var>,
    pub item_init: Vec<Var>,
    /// Review factor projections, one `|E| x d/K` matrix per factor.
    pub review_factors: Vec<Var>,
    /// `|E| x K` semantic scores when computed.
    pub semantic: Option<Var>,
    /// Per layer `|E| x K` structural scores when computed.
    pub structural: Vec<Option<Var>>,
    /// Per layer `|E| x K` combined scores.
    pub combined: Vec<Var>,
}

/// Full graph-learning pipeline over `graph`.
pub fn forward_dgl(
    tape: &mut Tape,
    store: &ParameterStore,
    graph: &RatingGraph,
    cfg: &DglConfig,
) -> Result<DglOutput> {
    cfg.validate()?;
    if graph.d() != cfg.d {
        return Err(Error::Shape(format!(
            "graph review dimension {} differs from model d={}",
            graph.d(),
            cfg.d
        )));
    }
    let factors = cfg.factors;
    let e = graph.num_edges();
    let u_emb = tape.param(store, names::USER_EMB)?;
    let v_emb = tape.param(store, names::ITEM_EMB)?;
    let user_init = chunk_embeddings(tape, u_emb, factors);
    let item_init = chunk_embeddings(tape, v_emb, factors);

    let reviews = tape.constant(e, cfg.d, graph.reviews().to_vec());
    let review_factors = project_reviews(tape, store, reviews, factors)?;

    let need_semantic = matches!(cfg.scores, ScoreMode::Combined | ScoreMode::SemanticOnly);
    let need_structural = matches!(cfg.scores, ScoreMode::Combined | ScoreMode::StructuralOnly);
    let semantic = if need_semantic {
        Some(semantic_scores(tape, store, &review_factors, cfg.tau)?)
    } else {
        None
    };

    let mut user_prev = user_init.clone();
    let mut item_prev = item_init.clone();
    let mut per_layer_users = Vec::with_capacity(cfg.layers);
    let mut per_layer_items = Vec::with_capacity(cfg.layers);
    let mut structural = Vec::with_capacity(cfg.layers);
    let mut combined = Vec::with_capacity(cfg.layers);
    for layer in 1..=cfg.layers {
        let st = if need_structural {
            Some(structural_scores(
                tape, graph, &user_prev, &item_prev, cfg.tau,
            ))
        } else {
            None
        };
        let s = match cfg.scores {
            ScoreMode::Combined => combine_scores(
                tape,
                semantic.expect("semantic"),
                st.expect("structural"),
                cfg.eta,
            )?,
            ScoreMode::SemanticOnly => semantic.expect("semantic"),
            ScoreMode::StructuralOnly => st.expect("structural"),
            ScoreMode::Uniform => tape.full(e, factors, 1.0 / factors as f64),
        };
        let (u, v) = message_passing_layer(
            tape,
            store,
            graph,
            s,
            &user_prev,
            &item_prev,
            &review_factors,
            layer,
        )?;
        structural.push(st);
        combined.push(s);
        per_layer_users.push(u.clone());
        per_layer_items.push(v.clone());
        user_prev = u;
        item_prev = v;
    }
    let users = layer_combine(tape, &per_layer_users);
    let items = layer_combine(tape, &per_layer_items);
    Ok(DglOutput {
        users,
        items,
        user_init,
        item_init,
        review_factors,
        semantic,
        structural,
        combined,
    })
}

/// Shared index helper: `Rc<[usize]>` from any iterator.
pub fn index(iter: impl IntoIterator<Item = usize>) -> Rc<[usize]> {
    iter.into_iter().collect()
}
