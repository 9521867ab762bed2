//! The assembled rating model: graph learning, interaction head and the
//! training objective, plus the ablation variants that rewire them.

use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::RatingGraph;
use crate::dcl::{self, NegativeTerm, ViewPair};
use crate::dgl::{self, DglConfig, DglOutput, ScoreMode};
use crate::error::{Error, Result};
use crate::interact::{self, Head, InteractionOutput};
use crate::params::ParameterStore;
use crate::tape::{Tape, Var};

/// Model variant; `Full` is the complete model, the rest are ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum Variant {
    #[default]
    Full,
    /// Edge coefficients fixed at `1/K`.
    UniformS,
    /// Coefficients from review semantics only.
    SemanticOnly,
    /// Coefficients from graph structure only.
    StructuralOnly,
    /// Node discrimination on concatenated (whole) embeddings.
    HolisticNd,
    /// Edge discrimination on whole interaction features against raw reviews.
    HolisticEd,
    /// Concatenated chunks with a single prediction head.
    NoAi,
    /// Both contrastive weights forced to zero.
    NoDcl,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::Full,
        Variant::UniformS,
        Variant::SemanticOnly,
        Variant::StructuralOnly,
        Variant::HolisticNd,
        Variant::HolisticEd,
        Variant::NoAi,
        Variant::NoDcl,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::UniformS => "uniform_s",
            Variant::SemanticOnly => "semantic_only",
            Variant::StructuralOnly => "structural_only",
            Variant::HolisticNd => "holistic_nd",
            Variant::HolisticEd => "holistic_ed",
            Variant::NoAi => "no_ai",
            Variant::NoDcl => "no_dcl",
        }
    }

    pub fn score_mode(self) -> ScoreMode {
        match self {
            Variant::UniformS => ScoreMode::Uniform,
            Variant::SemanticOnly => ScoreMode::SemanticOnly,
            Variant::StructuralOnly => ScoreMode::StructuralOnly,
            _ => ScoreMode::Combined,
        }
    }

    fn holistic_fnd(self) -> bool {
        self == Variant::HolisticNd
    }

    fn holistic_fed(self) -> bool {
        matches!(self, Variant::HolisticEd | Variant::NoAi)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub d: usize,
    pub factors: usize,
    pub layers: usize,
    pub tau: f64,
    pub eta: f64,
    pub variant: Variant,
    pub negative_term: NegativeTerm,
}

impl ModelConfig {
    pub fn dgl(&self) -> DglConfig {
        DglConfig {
            d: self.d,
            factors: self.factors,
            layers: self.layers,
            tau: self.tau,
            eta: self.eta,
            scores: self.variant.score_mode(),
        }
    }
}

const WHOLE_HEAD: &str = "whole.";
const HOLISTIC_FND_USER: &str = "dcl.holistic.fnd_user";
const HOLISTIC_FND_ITEM: &str = "dcl.holistic.fnd_item";
const HOLISTIC_FED: &str = "dcl.holistic.fed";

/// Model hyperparameters together with every trainable tensor.
#[derive(Clone, Debug)]
pub struct DgclrModel {
    pub config: ModelConfig,
    pub store: ParameterStore,
    pub num_users: usize,
    pub num_items: usize,
    pub num_ratings: usize,
    /// Numeric value of each rating index.
    pub rating_values: Vec<f64>,
}

/// Graph-learning results plus the embeddings used for prediction.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub dgl: DglOutput,
    /// Per-factor user rows used for prediction (isolated users fall back to
    /// their ID chunks).
    pub users: Vec<Var>,
    pub items: Vec<Var>,
}

/// Scalar pieces of the objective on a tape.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub sup: Var,
    pub fnd: Option<Var>,
    pub fed: Option<Var>,
}

/// What one optimization step should compute.
#[derive(Clone, Debug)]
pub struct ObjectiveSpec {
    /// Training edge indices (into the graph) in this batch.
    pub batch: Rc<[usize]>,
    /// Edge pool for edge-discrimination negatives.
    pub negative_pool: Rc<[usize]>,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Edge drop probability for the two views.
    pub drop_p: f64,
    /// Seeds views and negative samples.
    pub seed: u64,
}

/// One prediction with its per-factor breakdown.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub rating: f64,
    pub alpha: Vec<f64>,
    pub factor_ratings: Vec<f64>,
}

/// splitmix64 finalizer used to derive independent stream seeds.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut z = base;
    for &t in tags {
        z = z
            .wrapping_add(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(t.wrapping_mul(0xD1B5_4A32_D192_ED03));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

impl DgclrModel {
    /// Fresh model with Xavier-initialized parameters drawn under `seed`.
    pub fn new(
        config: ModelConfig,
        num_users: usize,
        num_items: usize,
        rating_values: &[f64],
        seed: u64,
    ) -> Result<Self> {
        let num_ratings = rating_values.len();
        let dgl_cfg = config.dgl();
        dgl_cfg.validate()?;
        let mut store = ParameterStore::new(seed);
        dgl::register_params(&mut store, &dgl_cfg, num_users, num_items, num_ratings)?;
        let dk = dgl_cfg.chunk();
        if config.variant == Variant::NoAi {
            interact::register_params(&mut store, WHOLE_HEAD, config.d)?;
        } else {
            interact::register_params(&mut store, "", dk)?;
        }
        dcl::register_params(&mut store, dk)?;
        if config.variant.holistic_fnd() {
            store.xavier(HOLISTIC_FND_USER, &[config.d, config.d])?;
            store.xavier(HOLISTIC_FND_ITEM, &[config.d, config.d])?;
        }
        if config.variant.holistic_fed() {
            store.xavier(HOLISTIC_FED, &[config.d, config.d])?;
        }
        Ok(Self {
            config,
            store,
            num_users,
            num_items,
            num_ratings,
            rating_values: rating_values.to_vec(),
        })
    }

    /// Rebuild around an existing parameter store, checking shapes.
    pub fn from_store(
        config: ModelConfig,
        store: ParameterStore,
        num_users: usize,
        num_items: usize,
        rating_values: &[f64],
    ) -> Result<Self> {
        let fresh = Self::new(
            config,
            num_users,
            num_items,
            rating_values,
            store.rng_seed(),
        )?;
        for (name, p) in fresh.store.iter() {
            let got = store.get(name).map_err(|_| {
                Error::Checkpoint(format!("parameter `{name}` missing for this configuration"))
            })?;
            if got.value.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` has shape {:?}, configuration needs {:?}",
                    got.value.shape(),
                    p.value.shape()
                )));
            }
        }
        if store.len() != fresh.store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} parameters, configuration defines {}",
                store.len(),
                fresh.store.len()
            )));
        }
        Ok(Self { store, ..fresh })
    }

    fn check_graph(&self, graph: &RatingGraph) -> Result<()> {
        if graph.num_users() != self.num_users
            || graph.num_items() != self.num_items
            || graph.num_ratings() != self.num_ratings
        {
            return Err(Error::Shape(format!(
                "graph has {}x{} nodes and {} ratings, model expects {}x{} and {}",
                graph.num_users(),
                graph.num_items(),
                graph.num_ratings(),
                self.num_users,
                self.num_items,
                self.num_ratings
            )));
        }
        Ok(())
    }

    /// Graph learning over `graph` and the prediction embeddings.
    pub fn encode(&self, tape: &mut Tape, graph: &RatingGraph) -> Result<Encoded> {
        self.check_graph(graph)?;
        let out = dgl::forward_dgl(tape, &self.store, graph, &self.config.dgl())?;
        let users = with_fallback(tape, &out.users, &out.user_init, |u| {
            graph.user_degree(u) == 0
        });
        let items = with_fallback(tape, &out.items, &out.item_init, |i| {
            graph.item_degree(i) == 0
        });
        Ok(Encoded {
            dgl: out,
            users,
            items,
        })
    }

    /// Predict for `(users[b], items[b])` pairs from encoded embeddings.
    pub fn interact(
        &self,
        tape: &mut Tape,
        enc: &Encoded,
        users: &Rc<[usize]>,
        items: &Rc<[usize]>,
    ) -> Result<InteractionOutput> {
        let ur: Vec<Var> = enc.users.iter().map(|&u| tape.gather(u, users)).collect();
        let ir: Vec<Var> = enc.items.iter().map(|&v| tape.gather(v, items)).collect();
        if self.config.variant == Variant::NoAi {
            let head = Head::load(tape, &self.store, WHOLE_HEAD)?;
            let u = tape.hconcat(&ur);
            let v = tape.hconcat(&ir);
            let h = interact::interaction_feature(tape, &head, u, v);
            let rating = interact::factor_rating(tape, &head, h);
            let alpha = tape.full(users.len(), 1, 1.0);
            return Ok(InteractionOutput {
                features: vec![h],
                factor_ratings: rating,
                alpha,
                rating,
            });
        }
        let head = Head::load(tape, &self.store, "")?;
        interact::interact(tape, &head, &ur, &ir, self.config.tau)
    }

    /// Full objective `sup + lambda1 * fnd + lambda2 * fed` for one batch.
    pub fn objective(
        &self,
        tape: &mut Tape,
        graph: &RatingGraph,
        spec: &ObjectiveSpec,
    ) -> Result<LossTerms> {
        if spec.batch.is_empty() {
            return Err(Error::Dataset(
                "supervised loss needs a nonempty batch".into(),
            ));
        }
        let enc = self.encode(tape, graph)?;
        let users: Rc<[usize]> = spec.batch.iter().map(|&e| graph.edges()[e].user).collect();
        let items: Rc<[usize]> = spec.batch.iter().map(|&e| graph.edges()[e].item).collect();
        let out = self.interact(tape, &enc, &users, &items)?;
        let targets: Vec<f64> = spec
            .batch
            .iter()
            .map(|&e| self.rating_values[graph.edges()[e].rating_idx])
            .collect();
        let target = tape.constant(targets.len(), 1, targets);
        let sup = supervised_loss(tape, out.rating, target)?;

        let (lambda1, lambda2) = if self.config.variant == Variant::NoDcl {
            (0.0, 0.0)
        } else {
            (spec.lambda1, spec.lambda2)
        };
        let fnd = if lambda1 != 0.0 {
            Some(self.fnd(tape, graph, spec)?)
        } else {
            None
        };
        let fed = if lambda2 != 0.0 {
            Some(self.fed(tape, graph, &enc, &out, spec)?)
        } else {
            None
        };
        let total = total_loss(tape, sup, fnd, fed, lambda1, lambda2);
        Ok(LossTerms {
            total,
            sup,
            fnd,
            fed,
        })
    }

    fn fnd(&self, tape: &mut Tape, graph: &RatingGraph, spec: &ObjectiveSpec) -> Result<Var> {
        let views = ViewPair::sample(
            graph,
            spec.drop_p,
            derive_seed(spec.seed, &[1]),
            derive_seed(spec.seed, &[2]),
        )?;
        let cfg = self.config.dgl();
        let a = dgl::forward_dgl(tape, &self.store, &views.first, &cfg)?;
        let b = dgl::forward_dgl(tape, &self.store, &views.second, &cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[3]));
        let user_pool: Vec<usize> = (0..self.num_users).collect();
        let item_pool: Vec<usize> = (0..self.num_items).collect();
        let (ua, un) = dcl::sample_negatives(self.num_users, &user_pool, |i| i, &mut rng);
        let (ia, inn) = dcl::sample_negatives(self.num_items, &item_pool, |i| i, &mut rng);
        let term = self.config.negative_term;
        let (wu, wi, au, bu, ai, bi) = if self.config.variant.holistic_fnd() {
            (
                tape.param(&self.store, HOLISTIC_FND_USER)?,
                tape.param(&self.store, HOLISTIC_FND_ITEM)?,
                vec![tape.hconcat(&a.users)],
                vec![tape.hconcat(&b.users)],
                vec![tape.hconcat(&a.items)],
                vec![tape.hconcat(&b.items)],
            )
        } else {
            (
                tape.param(&self.store, dcl::names::FND_USER)?,
                tape.param(&self.store, dcl::names::FND_ITEM)?,
                a.users,
                b.users,
                a.items,
                b.items,
            )
        };
        let lu = dcl::fnd_side(tape, wu, &au, &bu, &ua, &un, term);
        let li = dcl::fnd_side(tape, wi, &ai, &bi, &ia, &inn, term);
        Ok(tape.add(lu, li))
    }

    fn fed(
        &self,
        tape: &mut Tape,
        graph: &RatingGraph,
        enc: &Encoded,
        out: &InteractionOutput,
        spec: &ObjectiveSpec,
    ) -> Result<Var> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[4]));
        let batch = &spec.batch;
        let (anchors, negatives) =
            dcl::sample_negatives(batch.len(), &spec.negative_pool, |b| batch[b], &mut rng);
        let term = self.config.negative_term;
        if self.config.variant.holistic_fed() {
            let w = tape.param(&self.store, HOLISTIC_FED)?;
            let h = if out.features.len() == 1 {
                out.features[0]
            } else {
                tape.hconcat(&out.features)
            };
            // unprojected review vectors of all edges
            let raw = tape.constant(graph.num_edges(), graph.d(), graph.reviews().to_vec());
            return dcl::fed_loss(tape, w, &[h], &[raw], batch, &anchors, &negatives, term);
        }
        let w = tape.param(&self.store, dcl::names::FED)?;
        dcl::fed_loss(
            tape,
            w,
            &out.features,
            &enc.dgl.review_factors,
            batch,
            &anchors,
            &negatives,
            term,
        )
    }
}

/// Add the layer-0 chunk for nodes flagged isolated.
fn with_fallback(
    tape: &mut Tape,
    finals: &[Var],
    init: &[Var],
    isolated: impl Fn(usize) -> bool,
) -> Vec<Var> {
    let n = tape.rows(finals[0]);
    let mask: Vec<f64> = (0..n)
        .map(|i| if isolated(i) { 1.0 } else { 0.0 })
        .collect();
    if mask.iter().all(|&m| m == 0.0) {
        return finals.to_vec();
    }
    let mask = tape.constant(n, 1, mask);
    finals
        .iter()
        .zip(init)
        .map(|(&f, &c)| {
            let kept = tape.mul_col(c, mask);
            tape.add(f, kept)
        })
        .collect()
}

/// `mean((pred - target)^2)`.
pub fn supervised_loss(tape: &mut Tape, pred: Var, target: Var) -> Result<Var> {
    if tape.rows(pred) == 0 {
        return Err(Error::Dataset("supervised loss over an empty batch".into()));
    }
    let diff = tape.sub(pred, target);
    let sq = tape.square(diff);
    Ok(tape.mean(sq))
}

/// `sup + lambda1 * fnd + lambda2 * fed`; absent terms contribute nothing.
pub fn total_loss(
    tape: &mut Tape,
    sup: Var,
    fnd: Option<Var>,
    fed: Option<Var>,
    lambda1: f64,
    lambda2: f64,
) -> Var {
    let mut total = sup;
    if let Some(f) = fnd {
        let w = tape.scale(f, lambda1);
        total = tape.add(total, w);
    }
    if let Some(f) = fed {
        let w = tape.scale(f, lambda2);
        total = tape.add(total, w);
    }
    total
}

impl DgclrModel {
    /// Predictions for `(users[b], items[b])` using message passing over
    /// `graph` only.
    pub fn predict(
        &self,
        graph: &RatingGraph,
        users: &[usize],
        items: &[usize],
    ) -> Result<Vec<Prediction>> {
        if users.len() != items.len() {
            return Err(Error::Shape(format!(
                "{} users but {} items in prediction request",
                users.len(),
                items.len()
            )));
        }
        if let Some(&u) = users.iter().find(|&&u| u >= self.num_users) {
            return Err(Error::UnknownId(format!("user index {u}")));
        }
        if let Some(&i) = items.iter().find(|&&i| i >= self.num_items) {
            return Err(Error::UnknownId(format!("item index {i}")));
        }
        if users.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let enc = self.encode(&mut tape, graph)?;
        let u: Rc<[usize]> = users.into();
        let i: Rc<[usize]> = items.into();
        let out = self.interact(&mut tape, &enc, &u, &i)?;
        let k = tape.cols(out.alpha);
        let alpha = tape.value(out.alpha);
        let fr = tape.value(out.factor_ratings);
        let r = tape.value(out.rating);
        Ok((0..users.len())
            .map(|b| Prediction {
                rating: r[b],
                alpha: alpha[b * k..(b + 1) * k].to_vec(),
                factor_ratings: fr[b * k..(b + 1) * k].to_vec(),
            })
            .collect())
    }
}
