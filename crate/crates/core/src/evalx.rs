//! Evaluation: MSE on a split, degree-bucketed reports, ablation runs,
//! explainability exports and the runtime scaling benchmark.

use std::fmt::{self, Write as _};
use std::rc::Rc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{bucket_users_by_degree, InteractionDataset, RatingGraph, Split};
use crate::error::{Error, Result};
use crate::model::{DgclrModel, ObjectiveSpec, Prediction, Variant};
use crate::tape::Tape;
use crate::trainer::{fit, FitResult, TrainConfig};

/// Default user-degree bucket boundaries.
pub const DEFAULT_BOUNDARIES: [usize; 4] = [5, 10, 20, 50];

/// Attention weight an explanation's top factor must exceed to be flagged.
pub const FLAG_THRESHOLD: f64 = 0.5;

/// The (user, item, rating) triples of one split.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitPairs {
    pub indices: Vec<usize>,
    pub users: Vec<usize>,
    pub items: Vec<usize>,
    pub ratings: Vec<f64>,
}

impl SplitPairs {
    pub fn new(ds: &InteractionDataset, split: Split) -> Self {
        let indices = ds.split_indices(split);
        let pick = |f: fn(&crate::data::Interaction) -> f64| {
            indices
                .iter()
                .map(|&i| f(&ds.interactions[i]))
                .collect::<Vec<f64>>()
        };
        Self {
            users: indices.iter().map(|&i| ds.interactions[i].user).collect(),
            items: indices.iter().map(|&i| ds.interactions[i].item).collect(),
            ratings: pick(|x| x.rating),
            indices,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Predictions from embeddings and the interaction head only; the
    /// split's own reviews are never read.
    pub fn predictions(&self, model: &DgclrModel, graph: &RatingGraph) -> Result<Vec<Prediction>> {
        model.predict(graph, &self.users, &self.items)
    }

    pub fn mse(&self, model: &DgclrModel, graph: &RatingGraph, clip: bool) -> Result<f64> {
        if self.is_empty() {
            return Err(Error::Dataset("cannot evaluate an empty split".into()));
        }
        let preds = self.predictions(model, graph)?;
        let range = clip_range(model, clip);
        Ok(mse(preds.iter().map(|p| p.rating), &self.ratings, range))
    }
}

fn clip_range(model: &DgclrModel, clip: bool) -> Option<(f64, f64)> {
    let vals = &model.rating_values;
    if !clip || vals.is_empty() {
        return None;
    }
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Some((lo, hi))
}

/// Mean squared error, optionally clipping predictions into `range`.
pub fn mse(
    preds: impl IntoIterator<Item = f64>,
    targets: &[f64],
    range: Option<(f64, f64)>,
) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (p, &t) in preds.into_iter().zip(targets) {
        let p = match range {
            Some((lo, hi)) => p.clamp(lo, hi),
            None => p,
        };
        sum += (p - t) * (p - t);
        n += 1;
    }
    sum / n as f64
}

/// Fail if `graph` holds an edge that is not a training interaction of `ds`.
pub fn ensure_train_only(graph: &RatingGraph, ds: &InteractionDataset) -> Result<()> {
    let labels = ds
        .splits()
        .ok_or_else(|| Error::Dataset("dataset is not split".into()))?;
    for e in graph.edges() {
        if labels.get(e.interaction) != Some(&Split::Train) {
            return Err(Error::Dataset(format!(
                "graph edge for interaction {} is not a training interaction",
                e.interaction
            )));
        }
    }
    Ok(())
}

/// MSE of `model` on `split`, message passing over training edges only.
pub fn evaluate_mse(
    model: &DgclrModel,
    ds: &InteractionDataset,
    split: Split,
    clip: bool,
) -> Result<f64> {
    let graph = RatingGraph::from_dataset(ds)?;
    ensure_train_only(&graph, ds)?;
    SplitPairs::new(ds, split).mse(model, &graph, clip)
}

/// One degree bucket of an [`EvalReport`].
#[derive(Clone, Debug, PartialEq)]
pub struct BucketReport {
    pub label: String,
    /// Evaluated users falling in the bucket.
    pub users: usize,
    /// Evaluated interactions falling in the bucket.
    pub interactions: usize,
    /// `None` when the bucket holds no interactions.
    pub mse: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub split: Split,
    pub mse: f64,
    pub interactions: usize,
    pub users: usize,
    pub buckets: Vec<BucketReport>,
}

impl EvalReport {
    pub const HEADER: &'static str = "split\tbucket\tusers\tinteractions\tmse";

    pub fn to_tsv(&self) -> String {
        let mut s = format!("{}\n", Self::HEADER);
        let _ = writeln!(
            s,
            "{}\tall\t{}\t{}\t{}",
            self.split, self.users, self.interactions, self.mse
        );
        for b in &self.buckets {
            let m = b.mse.map_or_else(|| "NA".into(), |v| v.to_string());
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}",
                self.split, b.label, b.users, b.interactions, m
            );
        }
        s
    }
}

/// MSE on `split` broken down by each user's training degree.
pub fn sparsity_report(
    model: &DgclrModel,
    ds: &InteractionDataset,
    split: Split,
    boundaries: &[usize],
) -> Result<EvalReport> {
    let buckets = bucket_users_by_degree(ds, boundaries)?;
    let graph = RatingGraph::from_dataset(ds)?;
    ensure_train_only(&graph, ds)?;
    let pairs = SplitPairs::new(ds, split);
    if pairs.is_empty() {
        return Err(Error::Dataset(format!("{split} split is empty")));
    }
    let preds = pairs.predictions(model, &graph)?;
    let nb = buckets.len();
    let mut sums = vec![0.0; nb];
    let mut counts = vec![0usize; nb];
    let mut seen = vec![vec![false; ds.num_users()]; nb];
    let mut total = 0.0;
    for ((p, &u), &r) in preds.iter().zip(&pairs.users).zip(&pairs.ratings) {
        let b = buckets.user_bucket[u];
        let sq = (p.rating - r) * (p.rating - r);
        sums[b] += sq;
        counts[b] += 1;
        seen[b][u] = true;
        total += sq;
    }
    let bucket_reports: Vec<BucketReport> = (0..nb)
        .map(|b| BucketReport {
            label: buckets.label(b),
            users: seen[b].iter().filter(|&&x| x).count(),
            interactions: counts[b],
            mse: (counts[b] > 0).then(|| sums[b] / counts[b] as f64),
        })
        .collect();
    Ok(EvalReport {
        split,
        mse: total / pairs.len() as f64,
        interactions: pairs.len(),
        users: bucket_reports.iter().map(|b| b.users).sum(),
        buckets: bucket_reports,
    })
}

#[derive(Clone, Debug)]
pub struct AblationResult {
    pub variant: Variant,
    pub fit: FitResult,
    pub report: EvalReport,
}

/// Train `variant` under `cfg` and report test MSE with default buckets.
pub fn run_ablation(
    ds: &InteractionDataset,
    cfg: &TrainConfig,
    variant: Variant,
) -> Result<AblationResult> {
    let cfg = TrainConfig {
        variant,
        ..cfg.clone()
    };
    let fitted = fit(ds, &cfg)?;
    let report = sparsity_report(&fitted.model, ds, Split::Test, &DEFAULT_BOUNDARIES)?;
    Ok(AblationResult {
        variant,
        fit: fitted,
        report,
    })
}

/// Per-edge factor scores of every layer, `|E| x K` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorScores {
    pub factors: usize,
    pub semantic: Option<Vec<f64>>,
    pub structural: Vec<Option<Vec<f64>>>,
    pub combined: Vec<Vec<f64>>,
}

/// Run graph learning over the training graph and read out the scores.
pub fn factor_scores(model: &DgclrModel, graph: &RatingGraph) -> Result<FactorScores> {
    let mut tape = Tape::new();
    let enc = model.encode(&mut tape, graph)?;
    let read = |v| tape.value(v).to_vec();
    Ok(FactorScores {
        factors: model.config.factors,
        semantic: enc.dgl.semantic.map(read),
        structural: enc.dgl.structural.iter().map(|s| s.map(read)).collect(),
        combined: enc.dgl.combined.iter().map(|&s| read(s)).collect(),
    })
}

/// Delimited per-edge, per-layer, per-factor score table.
pub fn factor_scores_tsv(
    ds: &InteractionDataset,
    graph: &RatingGraph,
    scores: &FactorScores,
) -> String {
    let k = scores.factors;
    let mut s = String::from("user\titem\trating\tlayer\tfactor\tse\tst\ts\n");
    let na = |v: Option<f64>| v.map_or_else(|| "NA".into(), |x: f64| x.to_string());
    for (l, comb) in scores.combined.iter().enumerate() {
        for (e, edge) in graph.edges().iter().enumerate() {
            let x = &ds.interactions[edge.interaction];
            for f in 0..k {
                let se = scores.semantic.as_ref().map(|v| v[e * k + f]);
                let st = scores.structural[l].as_ref().map(|v| v[e * k + f]);
                let _ = writeln!(
                    s,
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                    ds.users.id(x.user),
                    ds.items.id(x.item),
                    x.rating,
                    l + 1,
                    f,
                    na(se),
                    na(st),
                    comb[e * k + f]
                );
            }
        }
    }
    s
}

/// One cell of the factor/review table.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorReviewRecord {
    pub factor: usize,
    pub rating: f64,
    /// `None` when no edge qualified for this cell.
    pub sample: Option<ReviewSample>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReviewSample {
    pub user_id: String,
    pub item_id: String,
    /// Final-layer combined score of the factor.
    pub score: f64,
    /// Index of the interaction whose review this is.
    pub interaction: usize,
}

/// Sample training edges whose final-layer score for each factor exceeds
/// `threshold`, up to `per_cell` per (factor, rating) cell.
pub fn factor_review_report(
    model: &DgclrModel,
    ds: &InteractionDataset,
    threshold: f64,
    ratings: &[f64],
    per_cell: usize,
    seed: u64,
) -> Result<Vec<FactorReviewRecord>> {
    let graph = RatingGraph::from_dataset(ds)?;
    let scores = factor_scores(model, &graph)?;
    let k = scores.factors;
    let last = scores
        .combined
        .last()
        .ok_or_else(|| Error::Config("model has no layers".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for f in 0..k {
        for &rating in ratings {
            let mut hits: Vec<usize> = (0..graph.num_edges())
                .filter(|&e| {
                    let x = &ds.interactions[graph.edges()[e].interaction];
                    (x.rating - rating).abs() < 1e-9 && last[e * k + f] > threshold
                })
                .collect();
            hits.shuffle(&mut rng);
            hits.truncate(per_cell);
            if hits.is_empty() {
                out.push(FactorReviewRecord {
                    factor: f,
                    rating,
                    sample: None,
                });
            }
            for e in hits {
                let edge = &graph.edges()[e];
                out.push(FactorReviewRecord {
                    factor: f,
                    rating,
                    sample: Some(ReviewSample {
                        user_id: ds.users.id(edge.user).to_string(),
                        item_id: ds.items.id(edge.item).to_string(),
                        score: last[e * k + f],
                        interaction: edge.interaction,
                    }),
                });
            }
        }
    }
    Ok(out)
}

pub fn factor_review_tsv(records: &[FactorReviewRecord]) -> String {
    let mut s = String::from("factor\trating\tuser\titem\tscore\tinteraction\n");
    for r in records {
        match &r.sample {
            Some(x) => {
                let _ = writeln!(
                    s,
                    "{}\t{}\t{}\t{}\t{}\t{}",
                    r.factor, r.rating, x.user_id, x.item_id, x.score, x.interaction
                );
            }
            None => {
                let _ = writeln!(s, "{}\t{}\t\t\t\t", r.factor, r.rating);
            }
        }
    }
    s
}

/// Index of the largest weight if it exceeds [`FLAG_THRESHOLD`].
pub fn flag_factor(alpha: &[f64]) -> Option<usize> {
    let (best, &a) = alpha.iter().enumerate().max_by(|x, y| x.1.total_cmp(y.1))?;
    (a > FLAG_THRESHOLD).then_some(best)
}

/// A single explained prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct Explanation {
    pub user_id: String,
    pub item_id: String,
    pub rating: f64,
    pub alpha: Vec<f64>,
    pub factor_ratings: Vec<f64>,
    pub flagged: Option<usize>,
}

impl Explanation {
    pub const HEADER: &'static str =
        "user\titem\tprediction\tfactor\talpha\tfactor_rating\tflagged";

    pub fn to_tsv(&self) -> String {
        let mut s = format!("{}\n", Self::HEADER);
        for (k, (a, r)) in self.alpha.iter().zip(&self.factor_ratings).enumerate() {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{k}\t{a}\t{r}\t{}",
                self.user_id,
                self.item_id,
                self.rating,
                u8::from(self.flagged == Some(k))
            );
        }
        s
    }
}

impl fmt::Display for Explanation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "user {}  item {}", self.user_id, self.item_id)?;
        writeln!(f, "predicted rating {:.4}", self.rating)?;
        for (k, (a, r)) in self.alpha.iter().zip(&self.factor_ratings).enumerate() {
            let mark = if self.flagged == Some(k) {
                "  <- dominant"
            } else {
                ""
            };
            writeln!(f, "  factor {k}: alpha {a:.4}  rating {r:.4}{mark}")?;
        }
        if self.flagged.is_none() {
            writeln!(f, "  no factor has alpha above {FLAG_THRESHOLD}")?;
        }
        Ok(())
    }
}

/// Explain the prediction for a user/item id pair.
pub fn explain_prediction(
    model: &DgclrModel,
    ds: &InteractionDataset,
    user_id: &str,
    item_id: &str,
) -> Result<Explanation> {
    let u = ds
        .users
        .get(user_id)
        .ok_or_else(|| Error::UnknownId(format!("user `{user_id}`")))?;
    let i = ds
        .items
        .get(item_id)
        .ok_or_else(|| Error::UnknownId(format!("item `{item_id}`")))?;
    let graph = RatingGraph::from_dataset(ds)?;
    let p = model
        .predict(&graph, &[u], &[i])?
        .pop()
        .ok_or_else(|| Error::Shape("no prediction returned".into()))?;
    Ok(Explanation {
        user_id: user_id.to_string(),
        item_id: item_id.to_string(),
        rating: p.rating,
        flagged: flag_factor(&p.alpha),
        alpha: p.alpha,
        factor_ratings: p.factor_ratings,
    })
}

/// Predictions for a split as delimited text.
pub fn predictions_tsv(
    model: &DgclrModel,
    ds: &InteractionDataset,
    split: Split,
) -> Result<String> {
    let graph = RatingGraph::from_dataset(ds)?;
    let pairs = SplitPairs::new(ds, split);
    let preds = pairs.predictions(model, &graph)?;
    let mut s = String::from("index\tuser\titem\trating\tprediction\n");
    for (j, p) in preds.iter().enumerate() {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}",
            pairs.indices[j],
            ds.users.id(pairs.users[j]),
            ds.items.id(pairs.items[j]),
            pairs.ratings[j],
            p.rating
        );
    }
    Ok(s)
}

/// Timing of forward+backward for increasing edge counts.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    /// `(|E|, seconds)` with the fastest of the repetitions.
    pub rows: Vec<(usize, f64)>,
    /// Least-squares slope of log time against log |E| over nonzero sizes.
    pub exponent: Option<f64>,
}

impl BenchReport {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("edges\tseconds\n");
        for (e, t) in &self.rows {
            let _ = writeln!(s, "{e}\t{t}");
        }
        let exp = self.exponent.map_or_else(|| "NA".into(), |v| v.to_string());
        let _ = writeln!(s, "# exponent\t{exp}");
        s
    }
}

/// Slope of the least-squares line through `(ln x, ln y)` for `x > 0`.
pub fn loglog_slope(points: &[(usize, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0 && *y > 0.0)
        .map(|&(x, y)| ((x as f64).ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Forward and backward of the supervised objective once over `graph`.
pub fn forward_backward(model: &mut DgclrModel, graph: &RatingGraph) -> Result<()> {
    let mut tape = Tape::new();
    let edges: Rc<[usize]> = (0..graph.num_edges()).collect();
    if edges.is_empty() {
        let enc = model.encode(&mut tape, graph)?;
        let s = tape.sum(enc.users[0]);
        model.store.zero_grad();
        return tape.backward(s, &mut model.store);
    }
    let spec = ObjectiveSpec {
        batch: edges.clone(),
        negative_pool: edges,
        lambda1: 0.0,
        lambda2: 0.0,
        drop_p: 0.0,
        seed: 0,
    };
    let terms = model.objective(&mut tape, graph, &spec)?;
    model.store.zero_grad();
    tape.backward(terms.total, &mut model.store)
}

/// Time forward+backward on random graphs of each size in `edge_counts`.
pub fn runtime_bench(
    edge_counts: &[usize],
    cfg: &TrainConfig,
    reps: usize,
    seed: u64,
) -> Result<BenchReport> {
    const NUM_RATINGS: usize = 5;
    let values: Vec<f64> = (1..=NUM_RATINGS).map(|r| r as f64).collect();
    let mut rows = Vec::with_capacity(edge_counts.len());
    for &e in edge_counts {
        let graph = crate::synth::random_graph(e, cfg.d, NUM_RATINGS, seed);
        let mut model = DgclrModel::new(
            cfg.model(),
            graph.num_users(),
            graph.num_items(),
            &values,
            seed,
        )?;
        forward_backward(&mut model, &graph)?; // warm-up
        let mut best = f64::INFINITY;
        for _ in 0..reps.max(1) {
            let start = Instant::now();
            forward_backward(&mut model, &graph)?;
            best = best.min(start.elapsed().as_secs_f64());
        }
        rows.push((e, best));
    }
    let exponent = loglog_slope(&rows);
    Ok(BenchReport { rows, exponent })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{planted_dataset, PlantedConfig};

    fn trained(variant: Variant, factors: usize) -> (InteractionDataset, DgclrModel) {
        let ds = planted_dataset(&PlantedConfig {
            users: 12,
            items: 10,
            interactions: 60,
            d: 8,
            ..PlantedConfig::default()
        })
        .unwrap();
        let cfg = TrainConfig {
            d: 8,
            factors,
            layers: 2,
            epochs: 5,
            lambda1: 0.0,
            lambda2: 0.0,
            variant,
            ..TrainConfig::default()
        };
        let model = fit(&ds, &cfg).unwrap().model;
        (ds, model)
    }

    #[test]
    fn mse_cases() {
        assert_eq!(mse([1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], None), 0.0);
        assert_eq!(mse([7.0, 0.0], &[5.0, 1.0], Some((1.0, 5.0))), 0.0);
        // constant predictor over uniform 1..5 is minimized at the mean
        let targets = [1.0, 2.0, 3.0, 4.0, 5.0];
        let grid: Vec<f64> = (0..=400).map(|i| 1.0 + i as f64 * 0.01).collect();
        let best = grid
            .iter()
            .copied()
            .min_by(|&a, &b| {
                let fa = mse(std::iter::repeat_n(a, 5), &targets, None);
                let fb = mse(std::iter::repeat_n(b, 5), &targets, None);
                fa.total_cmp(&fb)
            })
            .unwrap();
        assert!((best - 3.0).abs() < 1e-9);
        assert!((mse(std::iter::repeat_n(3.0, 5), &targets, None) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn bucket_mses_decompose_overall() {
        let (ds, model) = trained(Variant::Full, 2);
        let overall = evaluate_mse(&model, &ds, Split::Test, false).unwrap();
        let single = sparsity_report(&model, &ds, Split::Test, &[]).unwrap();
        assert_eq!(single.buckets.len(), 1);
        assert!((single.buckets[0].mse.unwrap() - overall).abs() < 1e-12);
        let rep = sparsity_report(&model, &ds, Split::Test, &[2, 4, 6]).unwrap();
        assert_eq!(rep.buckets.len(), 4);
        let weighted: f64 = rep
            .buckets
            .iter()
            .filter_map(|b| b.mse.map(|m| m * b.interactions as f64))
            .sum::<f64>()
            / rep.interactions as f64;
        assert!((weighted - overall).abs() < 1e-12);
        let users: usize = rep.buckets.iter().map(|b| b.users).sum();
        let mut distinct = SplitPairs::new(&ds, Split::Test).users;
        distinct.sort_unstable();
        distinct.dedup();
        assert_eq!(users, distinct.len());
        assert!(rep
            .buckets
            .iter()
            .all(|b| b.mse.is_some() == (b.interactions > 0)));
    }

    #[test]
    fn evaluation_ignores_held_out_reviews() {
        let (mut ds, model) = trained(Variant::Full, 2);
        let val = evaluate_mse(&model, &ds, Split::Val, false).unwrap();
        let test = evaluate_mse(&model, &ds, Split::Test, false).unwrap();
        // scramble every non-train review and the val ratings' reviews
        let labels = ds.splits().unwrap().to_vec();
        let d = ds.d();
        let mut reviews = ds.reviews().to_vec();
        for (i, s) in labels.iter().enumerate() {
            if *s != Split::Train {
                reviews[i * d..(i + 1) * d].fill(1e6);
            }
        }
        ds.replace_reviews(d, reviews).unwrap();
        assert_eq!(evaluate_mse(&model, &ds, Split::Val, false).unwrap(), val);
        assert_eq!(evaluate_mse(&model, &ds, Split::Test, false).unwrap(), test);
    }

    #[test]
    fn train_only_guard() {
        let (ds, _) = trained(Variant::Full, 2);
        let g = RatingGraph::from_dataset(&ds).unwrap();
        ensure_train_only(&g, &ds).unwrap();
        let mut bad = g.edges().to_vec();
        bad[0].interaction = ds.split_indices(Split::Test)[0];
        let bad = RatingGraph::from_edges(
            g.num_users(),
            g.num_items(),
            g.num_ratings(),
            g.d(),
            bad,
            g.reviews().to_vec(),
        );
        assert!(ensure_train_only(&bad, &ds).is_err());
    }

    #[test]
    fn empty_split_errors() {
        let (ds, model) = trained(Variant::Full, 2);
        let mut ds2 = ds.clone();
        ds2.set_splits(vec![Split::Train; ds.len()]).unwrap();
        assert!(evaluate_mse(&model, &ds2, Split::Test, false).is_err());
    }

    #[test]
    fn uniform_ablation_scores() {
        let (ds, model) = trained(Variant::UniformS, 2);
        let g = RatingGraph::from_dataset(&ds).unwrap();
        let scores = factor_scores(&model, &g).unwrap();
        assert!(scores.combined.iter().flatten().all(|&s| s == 0.5));
        assert!(scores.semantic.is_none());
    }

    #[test]
    fn semantic_only_exports_se() {
        let (ds, model) = trained(Variant::SemanticOnly, 2);
        let g = RatingGraph::from_dataset(&ds).unwrap();
        let scores = factor_scores(&model, &g).unwrap();
        assert!(scores.structural.iter().all(Option::is_none));
        for comb in &scores.combined {
            assert_eq!(Some(comb), scores.semantic.as_ref());
        }
        let tsv = factor_scores_tsv(&ds, &g, &scores);
        assert!(tsv.starts_with("user\titem\trating\tlayer\tfactor\tse\tst\ts\n"));
        assert_eq!(tsv.lines().count(), 1 + 2 * 2 * g.num_edges());
    }

    #[test]
    fn factor_review_thresholds() {
        let (ds, model) = trained(Variant::Full, 2);
        let none = factor_review_report(&model, &ds, 1.0, &[1.0, 3.0, 5.0], 1, 0).unwrap();
        assert_eq!(none.len(), 6);
        assert!(none.iter().all(|r| r.sample.is_none()));

        let g = RatingGraph::from_dataset(&ds).unwrap();
        let all = factor_review_report(&model, &ds, 0.0, &[1.0, 2.0, 3.0, 4.0, 5.0], usize::MAX, 0)
            .unwrap();
        let hits = all.iter().filter(|r| r.sample.is_some()).count();
        // every edge qualifies for its argmax factor (and here for both)
        assert_eq!(hits, 2 * g.num_edges());
        let tsv = factor_review_tsv(&none);
        assert_eq!(
            tsv.lines().next(),
            Some("factor\trating\tuser\titem\tscore\tinteraction")
        );
        let again = factor_review_report(&model, &ds, 0.4, &[3.0], 2, 9).unwrap();
        assert_eq!(
            again,
            factor_review_report(&model, &ds, 0.4, &[3.0], 2, 9).unwrap()
        );
    }

    #[test]
    fn flag_rule() {
        assert_eq!(flag_factor(&[1.0]), Some(0));
        assert_eq!(flag_factor(&[0.52, 0.48]), Some(0));
        assert_eq!(flag_factor(&[0.4, 0.35, 0.25]), None);
        assert_eq!(flag_factor(&[0.5, 0.5]), None);
    }

    #[test]
    fn explain_records() {
        let (ds, model) = trained(Variant::Full, 1);
        let u = ds.users.id(0).to_string();
        let i = ds.items.id(0).to_string();
        let ex = explain_prediction(&model, &ds, &u, &i).unwrap();
        assert_eq!(ex.alpha, vec![1.0]);
        assert_eq!(ex.flagged, Some(0));
        assert_eq!(ex.factor_ratings[0], ex.rating);
        assert!(ex.to_string().contains("dominant"));
        assert_eq!(ex.to_tsv().lines().count(), 2);
        assert!(matches!(
            explain_prediction(&model, &ds, "nobody", &i),
            Err(Error::UnknownId(_))
        ));
        assert!(matches!(
            explain_prediction(&model, &ds, &u, "nothing"),
            Err(Error::UnknownId(_))
        ));
    }

    #[test]
    fn predictions_export() {
        let (ds, model) = trained(Variant::NoAi, 2);
        let tsv = predictions_tsv(&model, &ds, Split::Test).unwrap();
        assert_eq!(tsv.lines().count(), 1 + ds.split_indices(Split::Test).len());
    }

    #[test]
    fn loglog_slope_cases() {
        let pts: Vec<(usize, f64)> = [10, 100, 1000]
            .iter()
            .map(|&x| (x, 3.0 * (x as f64).powf(1.1)))
            .collect();
        assert!((loglog_slope(&pts).unwrap() - 1.1).abs() < 1e-12);
        assert_eq!(loglog_slope(&[(0, 1.0), (10, 2.0)]), None);
    }

    #[test]
    fn bench_runs_small() {
        let cfg = TrainConfig {
            d: 8,
            factors: 2,
            layers: 1,
            ..TrainConfig::default()
        };
        let rep = runtime_bench(&[0, 50, 100], &cfg, 1, 0).unwrap();
        assert_eq!(rep.rows.len(), 3);
        assert!(rep.exponent.is_some());
        assert!(rep.to_tsv().starts_with("edges\tseconds\n"));
    }
}
