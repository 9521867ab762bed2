//! Objective assembly, the optimization loop, history export and
//! checkpoints.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::atomic::write_atomic;
use crate::data::{InteractionDataset, RatingGraph, Split};
use crate::dcl::NegativeTerm;
use crate::error::{Error, Result};
use crate::evalx;
use crate::model::{derive_seed, DgclrModel, ModelConfig, ObjectiveSpec, Variant};
use crate::optim::Adam;
use crate::params::{Parameter, ParameterStore};
use crate::tape::Tape;
use crate::tensor::Tensor;

pub use crate::model::{supervised_loss, total_loss};

/// Training hyperparameters. Config-file keys are listed in [`TrainConfig::KEYS`].
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub d: usize,
    /// Number of latent factors `K`.
    pub factors: usize,
    /// Number of propagation layers `L`.
    pub layers: usize,
    pub tau: f64,
    pub eta: f64,
    /// Fraction of training edges kept in each contrastive view.
    pub edge_keep_ratio: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lr: f64,
    pub epochs: usize,
    /// Edges per minibatch; 0 trains full batch.
    pub batch_size: usize,
    /// Seeds parameter init, views and negative sampling.
    pub seed: u64,
    /// Seeds the train/val/test split when the dataset has none.
    pub split_seed: u64,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
    pub variant: Variant,
    /// Use `-log(1 - D(neg))` in place of `+log D(neg)`.
    pub cl_stabilized: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            d: 64,
            factors: 4,
            layers: 2,
            tau: 0.5,
            eta: 0.7,
            edge_keep_ratio: 0.8,
            lambda1: 0.1,
            lambda2: 0.1,
            lr: 0.01,
            epochs: 200,
            batch_size: 0,
            seed: 0,
            split_seed: 0,
            patience: 20,
            variant: Variant::Full,
            cl_stabilized: false,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

impl TrainConfig {
    pub const KEYS: [&'static str; 16] = [
        "d",
        "K",
        "L",
        "tau",
        "eta",
        "edge_keep_ratio",
        "lambda1",
        "lambda2",
        "lr",
        "epochs",
        "batch_size",
        "seed",
        "split_seed",
        "patience",
        "variant",
        "cl_stabilized",
    ];

    /// Set one field from its config key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "d" => self.d = parse(key, value)?,
            "K" => self.factors = parse(key, value)?,
            "L" => self.layers = parse(key, value)?,
            "tau" => self.tau = parse(key, value)?,
            "eta" => self.eta = parse(key, value)?,
            "edge_keep_ratio" => self.edge_keep_ratio = parse(key, value)?,
            "lambda1" => self.lambda1 = parse(key, value)?,
            "lambda2" => self.lambda2 = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "split_seed" => self.split_seed = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "variant" => self.variant = value.parse()?,
            "cl_stabilized" => self.cl_stabilized = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Defaults overridden by a flat `key = value` text; `#` starts a comment.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// Canonical text form; reparses to an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "d = {}", self.d);
        let _ = writeln!(s, "K = {}", self.factors);
        let _ = writeln!(s, "L = {}", self.layers);
        let _ = writeln!(s, "tau = {}", self.tau);
        let _ = writeln!(s, "eta = {}", self.eta);
        let _ = writeln!(s, "edge_keep_ratio = {}", self.edge_keep_ratio);
        let _ = writeln!(s, "lambda1 = {}", self.lambda1);
        let _ = writeln!(s, "lambda2 = {}", self.lambda2);
        let _ = writeln!(s, "lr = {}", self.lr);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "split_seed = {}", self.split_seed);
        let _ = writeln!(s, "patience = {}", self.patience);
        let _ = writeln!(s, "variant = {}", self.variant);
        let _ = writeln!(s, "cl_stabilized = {}", self.cl_stabilized);
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.model().dgl().validate()?;
        if !(0.0..=1.0).contains(&self.edge_keep_ratio) {
            return Err(Error::Config(format!(
                "edge_keep_ratio must lie in [0, 1], got {}",
                self.edge_keep_ratio
            )));
        }
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lr", self.lr),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!(
                    "{name} must be a finite value >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            d: self.d,
            factors: self.factors,
            layers: self.layers,
            tau: self.tau,
            eta: self.eta,
            variant: self.variant,
            negative_term: if self.cl_stabilized {
                NegativeTerm::Stabilized
            } else {
                NegativeTerm::Literal
            },
        }
    }

    /// Edge drop probability `p = 1 - edge_keep_ratio`.
    pub fn drop_p(&self) -> f64 {
        1.0 - self.edge_keep_ratio
    }

    /// Contrastive weights after the variant has had its say.
    pub fn effective_lambdas(&self) -> (f64, f64) {
        if self.variant == Variant::NoDcl {
            (0.0, 0.0)
        } else {
            (self.lambda1, self.lambda2)
        }
    }
}

/// One row of the training history.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub sup: f64,
    pub fnd: f64,
    pub fed: f64,
    pub val_mse: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub const HEADER: &'static str = "epoch\ttrain_loss\tsup\tfnd\tfed\tval_mse";

    pub fn to_tsv(&self) -> String {
        let mut s = String::from(Self::HEADER);
        s.push('\n');
        for r in &self.epochs {
            let val = r
                .val_mse
                .map_or_else(|| "NA".to_string(), |v| v.to_string());
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}",
                r.epoch, r.train_loss, r.sup, r.fnd, r.fed, val
            );
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_tsv().as_bytes())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Completed,
    EarlyStopped,
    /// A non-finite loss or gradient ended training.
    Diverged,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Completed => "completed",
            Self::EarlyStopped => "early_stopped",
            Self::Diverged => "diverged",
        })
    }
}

#[derive(Clone, Debug)]
pub struct FitResult {
    /// Parameters of the best validation epoch (or the last epoch when there
    /// is no validation split).
    pub model: DgclrModel,
    pub history: History,
    /// Epoch whose parameters `model` holds; 0 means the initialization.
    pub best_epoch: usize,
    pub best_val: Option<f64>,
    pub stop: StopReason,
}

impl FitResult {
    pub fn checkpoint(&self, config: &TrainConfig) -> Checkpoint {
        Checkpoint {
            config: config.clone(),
            model: self.model.clone(),
            epoch: self.best_epoch,
            best_val: self.best_val,
            meta: BTreeMap::new(),
        }
    }
}

/// Edge batches for one epoch. A trailing single-edge batch is folded into
/// the previous one so edge discrimination always has a negative pool.
fn epoch_batches(num_edges: usize, cfg: &TrainConfig, epoch: usize) -> Vec<Rc<[usize]>> {
    if cfg.batch_size == 0 || cfg.batch_size >= num_edges {
        return vec![(0..num_edges).collect()];
    }
    let mut order: Vec<usize> = (0..num_edges).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[epoch as u64, 0xBA7C]));
    order.shuffle(&mut rng);
    let mut chunks: Vec<Vec<usize>> = order
        .chunks(cfg.batch_size)
        .map(<[usize]>::to_vec)
        .collect();
    if chunks.len() > 1 && chunks.last().is_some_and(|c| c.len() < 2) {
        let tail = chunks.pop().unwrap_or_default();
        if let Some(prev) = chunks.last_mut() {
            prev.extend(tail);
        }
    }
    chunks.into_iter().map(Into::into).collect()
}

/// Scalar values of the loss terms after one optimization step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepLosses {
    pub total: f64,
    pub sup: f64,
    pub fnd: f64,
    pub fed: f64,
}

/// Forward, backward and one Adam step on `batch`.
pub fn train_step(
    model: &mut DgclrModel,
    graph: &RatingGraph,
    adam: &Adam,
    cfg: &TrainConfig,
    batch: Rc<[usize]>,
    negative_pool: Rc<[usize]>,
    seed: u64,
) -> Result<StepLosses> {
    let (lambda1, lambda2) = cfg.effective_lambdas();
    let spec = ObjectiveSpec {
        batch,
        negative_pool,
        lambda1,
        lambda2,
        drop_p: cfg.drop_p(),
        seed,
    };
    let mut tape = Tape::new();
    let terms = model.objective(&mut tape, graph, &spec)?;
    let losses = StepLosses {
        total: tape.scalar_value(terms.total),
        sup: tape.scalar_value(terms.sup),
        fnd: terms.fnd.map_or(0.0, |v| tape.scalar_value(v)),
        fed: terms.fed.map_or(0.0, |v| tape.scalar_value(v)),
    };
    model.store.zero_grad();
    tape.backward(terms.total, &mut model.store)?;
    adam.step(&mut model.store)?;
    Ok(losses)
}

/// Train on the dataset's train split, selecting on validation MSE.
pub fn fit(dataset: &InteractionDataset, cfg: &TrainConfig) -> Result<FitResult> {
    cfg.validate()?;
    let graph = RatingGraph::from_dataset(dataset)?;
    if graph.num_edges() == 0 {
        return Err(Error::Dataset("training split is empty".into()));
    }
    let mut model = DgclrModel::new(
        cfg.model(),
        dataset.num_users(),
        dataset.num_items(),
        dataset.ratings.values(),
        cfg.seed,
    )?;
    let val = evalx::SplitPairs::new(dataset, Split::Val);
    let adam = Adam::new(cfg.lr);
    let all_edges: Rc<[usize]> = (0..graph.num_edges()).collect();

    let mut history = History::default();
    let mut best: Option<(f64, usize, ParameterStore)> = None;
    let mut last_good = model.store.clone();
    let mut last_good_epoch = 0;
    let mut since_best = 0;
    let mut stop = StopReason::Completed;

    'epochs: for epoch in 1..=cfg.epochs {
        let batches = epoch_batches(graph.num_edges(), cfg, epoch);
        let full_batch = batches.len() == 1;
        let mut sums = StepLosses::default();
        for (b, batch) in batches.iter().enumerate() {
            let pool = if full_batch {
                all_edges.clone()
            } else {
                batch.clone()
            };
            let seed = derive_seed(cfg.seed, &[epoch as u64, b as u64]);
            match train_step(&mut model, &graph, &adam, cfg, batch.clone(), pool, seed) {
                Ok(l) => {
                    sums.total += l.total;
                    sums.sup += l.sup;
                    sums.fnd += l.fnd;
                    sums.fed += l.fed;
                }
                Err(Error::NonFinite(_)) => {
                    stop = StopReason::Diverged;
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }
        let nb = batches.len() as f64;
        let val_mse = if val.is_empty() {
            None
        } else {
            Some(val.mse(&model, &graph, false)?)
        };
        if !model.store.iter().all(|(_, p)| p.value.is_finite())
            || val_mse.is_some_and(|v| !v.is_finite())
        {
            stop = StopReason::Diverged;
            break;
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: sums.total / nb,
            sup: sums.sup / nb,
            fnd: sums.fnd / nb,
            fed: sums.fed / nb,
            val_mse,
        });
        last_good = model.store.clone();
        last_good_epoch = epoch;
        if let Some(v) = val_mse {
            if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
                best = Some((v, epoch, model.store.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if cfg.patience > 0 && since_best >= cfg.patience {
                    stop = StopReason::EarlyStopped;
                    break;
                }
            }
        }
    }

    let (best_val, best_epoch) = match best {
        Some((v, e, store)) => {
            model.store = store;
            (Some(v), e)
        }
        None => {
            model.store = last_good;
            (None, last_good_epoch)
        }
    };
    Ok(FitResult {
        model,
        history,
        best_epoch,
        best_val,
        stop,
    })
}

const MAGIC: &[u8; 8] = b"DGCLRCK1";

/// A trained model with the configuration and selection state that produced it.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: DgclrModel,
    pub epoch: usize,
    pub best_val: Option<f64>,
    /// Free-form provenance (data path and the like).
    pub meta: BTreeMap<String, String>,
}

impl Checkpoint {
    /// Fail unless the stored architecture matches `requested`.
    pub fn ensure_compatible(&self, requested: &TrainConfig) -> Result<()> {
        let c = &self.config;
        let checks = [
            ("d", c.d, requested.d),
            ("K", c.factors, requested.factors),
            ("L", c.layers, requested.layers),
        ];
        for (key, have, want) in checks {
            if have != want {
                return Err(Error::Checkpoint(format!(
                    "checkpoint was trained with {key}={have}, requested {key}={want}"
                )));
            }
        }
        if c.variant != requested.variant {
            return Err(Error::Checkpoint(format!(
                "checkpoint variant is {}, requested {}",
                c.variant, requested.variant
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = self.config.to_text();
        let m = &self.model;
        let ratings: Vec<String> = m.rating_values.iter().map(f64::to_string).collect();
        let _ = writeln!(header, "@epoch = {}", self.epoch);
        let _ = writeln!(
            header,
            "@best_val = {}",
            self.best_val.map_or_else(|| "NA".into(), |v| v.to_string())
        );
        let _ = writeln!(header, "@num_users = {}", m.num_users);
        let _ = writeln!(header, "@num_items = {}", m.num_items);
        let _ = writeln!(header, "@ratings = {}", ratings.join(","));
        let _ = writeln!(header, "@param_seed = {}", m.store.rng_seed());
        for (k, v) in &self.meta {
            let _ = writeln!(header, "@meta.{k} = {}", v.replace('\n', " "));
        }

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(&(m.store.len() as u64).to_le_bytes());
        for (name, p) in m.store.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let shape = p.value.shape();
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for &e in shape {
                out.extend_from_slice(&(e as u64).to_le_bytes());
            }
            for t in [&p.value, &p.adam_m, &p.adam_v] {
                for x in t.data() {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
            out.extend_from_slice(&p.step_count.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint(
                "not a checkpoint or unsupported format version".into(),
            ));
        }
        let hlen = r.u64()? as usize;
        let header = std::str::from_utf8(r.take(hlen)?)
            .map_err(|_| Error::Checkpoint("config block is not UTF-8".into()))?;
        let mut config = TrainConfig::default();
        let mut fields = BTreeMap::new();
        let mut meta = BTreeMap::new();
        for line in header.lines() {
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| Error::Checkpoint(format!("bad config line `{line}`")))?;
            if let Some(key) = k.strip_prefix("@meta.") {
                meta.insert(key.to_string(), v.to_string());
            } else if let Some(key) = k.strip_prefix('@') {
                fields.insert(key.to_string(), v.to_string());
            } else {
                config.set(k, v)?;
            }
        }
        let field = |k: &str| {
            fields
                .get(k)
                .ok_or_else(|| Error::Checkpoint(format!("config block lacks `{k}`")))
        };
        let bad = |k: &str| Error::Checkpoint(format!("bad `{k}` in config block"));
        let epoch: usize = field("epoch")?.parse().map_err(|_| bad("epoch"))?;
        let best_val = match field("best_val")?.as_str() {
            "NA" => None,
            v => Some(v.parse().map_err(|_| bad("best_val"))?),
        };
        let num_users: usize = field("num_users")?.parse().map_err(|_| bad("num_users"))?;
        let num_items: usize = field("num_items")?.parse().map_err(|_| bad("num_items"))?;
        let ratings: Vec<f64> = field("ratings")?
            .split(',')
            .map(|v| v.parse().map_err(|_| bad("ratings")))
            .collect::<Result<_>>()?;
        let seed: u64 = field("param_seed")?
            .parse()
            .map_err(|_| bad("param_seed"))?;

        let count = r.u64()? as usize;
        let mut store = ParameterStore::new(seed);
        for _ in 0..count {
            let nlen = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(nlen)?)
                .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            if rank == 0 || rank > 2 {
                return Err(Error::Checkpoint(format!("`{name}` has rank {rank}")));
            }
            let shape: Vec<usize> = (0..rank)
                .map(|_| r.u64().map(|e| e as usize))
                .collect::<Result<_>>()?;
            let n: usize = shape.iter().product();
            let mut tensors = Vec::with_capacity(3);
            for _ in 0..3 {
                let vals = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
                tensors.push(Tensor::new(shape.clone(), vals)?);
            }
            let step_count = r.u64()?;
            let [value, adam_m, adam_v]: [Tensor; 3] =
                tensors.try_into().expect("three tensors per parameter");
            let mut p = Parameter::new(value);
            p.adam_m = adam_m;
            p.adam_v = adam_v;
            p.step_count = step_count;
            store.put(&name, p);
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after the last tensor",
                bytes.len() - r.pos
            )));
        }
        let model = DgclrModel::from_store(config.model(), store, num_users, num_items, &ratings)?;
        Ok(Self {
            config,
            model,
            epoch,
            best_val,
            meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{planted_dataset, PlantedConfig};

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            d: 8,
            factors: 2,
            layers: 1,
            epochs: 3,
            lambda1: 0.0,
            lambda2: 0.0,
            ..TrainConfig::default()
        }
    }

    fn small_data() -> InteractionDataset {
        planted_dataset(&PlantedConfig {
            users: 10,
            items: 8,
            interactions: 40,
            d: 8,
            ..PlantedConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn supervised_loss_cases() {
        let mut t = Tape::new();
        let r = t.constant(2, 1, vec![1.0, 5.0]);
        let p = t.constant(2, 1, vec![2.0, 3.0]);
        let l = supervised_loss(&mut t, p, r).unwrap();
        assert_eq!(t.scalar_value(l), 2.5);
        let same = supervised_loss(&mut t, r, r).unwrap();
        assert_eq!(t.scalar_value(same), 0.0);
        let off = t.add_scalar(r, 0.3);
        let l = supervised_loss(&mut t, off, r).unwrap();
        assert!((t.scalar_value(l) - 0.09).abs() < 1e-15);
        let empty = t.constant(0, 1, vec![]);
        assert!(supervised_loss(&mut t, empty, empty).is_err());
    }

    #[test]
    fn total_loss_cases() {
        let mut t = Tape::new();
        let (sup, fnd, fed) = (
            t.constant_scalar(1.0),
            t.constant_scalar(2.0),
            t.constant_scalar(3.0),
        );
        let l = total_loss(&mut t, sup, Some(fnd), Some(fed), 0.5, 0.1);
        assert!((t.scalar_value(l) - 2.3).abs() < 1e-15);
        let l = total_loss(&mut t, sup, Some(fnd), Some(fed), 0.0, 0.0);
        assert_eq!(t.scalar_value(l), 1.0);
        let z = t.constant_scalar(0.0);
        let l = total_loss(&mut t, sup, Some(z), Some(z), 0.7, 0.9);
        assert_eq!(t.scalar_value(l), 1.0);
    }

    #[test]
    fn config_text_round_trip() {
        let cfg = TrainConfig {
            tau: 0.2,
            eta: 0.65,
            variant: Variant::HolisticEd,
            cl_stabilized: true,
            seed: 99,
            ..TrainConfig::default()
        };
        assert_eq!(TrainConfig::from_text(&cfg.to_text()).unwrap(), cfg);
        let cfg = TrainConfig::from_text("# comment\nK = 2\n\nlr=0.5 # trailing\n").unwrap();
        assert_eq!(cfg.factors, 2);
        assert_eq!(cfg.lr, 0.5);
        assert!(TrainConfig::from_text("bogus = 1").is_err());
        assert!(TrainConfig::from_text("K = two").is_err());
        assert!(TrainConfig::from_text("K").is_err());
    }

    #[test]
    fn validation_rejects_bad_values() {
        let bad = [
            TrainConfig {
                d: 10,
                factors: 4,
                ..TrainConfig::default()
            },
            TrainConfig {
                tau: 0.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                edge_keep_ratio: 1.2,
                ..TrainConfig::default()
            },
            TrainConfig {
                lr: -0.1,
                ..TrainConfig::default()
            },
            TrainConfig {
                lambda1: f64::NAN,
                ..TrainConfig::default()
            },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn zero_lr_leaves_parameters() {
        let data = small_data();
        let cfg = TrainConfig {
            lr: 0.0,
            patience: 0,
            lambda1: 0.3,
            lambda2: 0.3,
            ..small_cfg()
        };
        let fit = fit(&data, &cfg).unwrap();
        let init = DgclrModel::new(
            cfg.model(),
            data.num_users(),
            data.num_items(),
            data.ratings.values(),
            cfg.seed,
        )
        .unwrap();
        for (name, p) in init.store.iter() {
            assert_eq!(fit.model.store.value(name).unwrap(), &p.value, "{name}");
        }
    }

    #[test]
    fn no_dcl_keeps_contrastive_terms_at_zero() {
        let data = small_data();
        let cfg = TrainConfig {
            variant: Variant::NoDcl,
            lambda1: 0.5,
            lambda2: 0.5,
            ..small_cfg()
        };
        let fit = fit(&data, &cfg).unwrap();
        assert!(!fit.history.epochs.is_empty());
        for r in &fit.history.epochs {
            assert_eq!((r.fnd, r.fed), (0.0, 0.0));
            assert_eq!(r.train_loss, r.sup);
        }
    }

    #[test]
    fn minibatches_cover_edges_once() {
        let cfg = TrainConfig {
            batch_size: 4,
            ..small_cfg()
        };
        let batches = epoch_batches(13, &cfg, 1);
        let mut all: Vec<usize> = batches.iter().flat_map(|b| b.iter().copied()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..13).collect::<Vec<_>>());
        assert!(batches.iter().all(|b| b.len() >= 2));
        assert_eq!(epoch_batches(13, &small_cfg(), 1).len(), 1);
    }

    #[test]
    fn minibatch_training_runs() {
        let data = small_data();
        let cfg = TrainConfig {
            batch_size: 8,
            lambda1: 0.2,
            lambda2: 0.2,
            ..small_cfg()
        };
        let fit = fit(&data, &cfg).unwrap();
        assert_eq!(fit.history.epochs.len(), 3);
        assert!(fit.history.epochs.iter().all(|r| r.train_loss.is_finite()));
    }

    #[test]
    fn early_stopping_honours_patience() {
        let data = small_data();
        // a huge step size makes validation error bounce around
        let cfg = TrainConfig {
            lr: 5.0,
            epochs: 200,
            patience: 2,
            ..small_cfg()
        };
        let fit = fit(&data, &cfg).unwrap();
        if fit.stop == StopReason::EarlyStopped {
            let last = fit.history.epochs.last().unwrap().epoch;
            assert_eq!(last, fit.best_epoch + 2);
        }
        let best = fit
            .history
            .epochs
            .iter()
            .filter_map(|r| r.val_mse)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(fit.best_val, Some(best));
    }

    #[test]
    fn history_tsv_layout() {
        let h = History {
            epochs: vec![
                EpochRecord {
                    epoch: 1,
                    train_loss: 1.5,
                    sup: 1.0,
                    fnd: 0.5,
                    fed: 0.0,
                    val_mse: Some(0.25),
                },
                EpochRecord {
                    epoch: 2,
                    train_loss: 1.0,
                    sup: 1.0,
                    fnd: 0.0,
                    fed: 0.0,
                    val_mse: None,
                },
            ],
        };
        let tsv = h.to_tsv();
        let lines: Vec<&str> = tsv.lines().collect();
        assert_eq!(lines[0], "epoch\ttrain_loss\tsup\tfnd\tfed\tval_mse");
        assert_eq!(lines[1], "1\t1.5\t1\t0.5\t0\t0.25");
        assert_eq!(lines[2], "2\t1\t1\t0\t0\tNA");
    }

    #[test]
    fn checkpoint_round_trip_and_guards() {
        let data = small_data();
        let cfg = small_cfg();
        let fit = fit(&data, &cfg).unwrap();
        let mut ck = fit.checkpoint(&cfg);
        ck.meta.insert("data".into(), "x.tsv".into());
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.config, cfg);
        assert_eq!(back.model.store, ck.model.store);
        assert_eq!(back.meta, ck.meta);
        assert_eq!(back.best_val, ck.best_val);
        assert_eq!(back.to_bytes(), bytes);

        for cut in [0, 7, 8, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(
                Checkpoint::from_bytes(&bytes[..cut]).is_err(),
                "cut at {cut}"
            );
        }
        let mut wrong = bytes.clone();
        wrong[7] = b'9';
        assert!(matches!(
            Checkpoint::from_bytes(&wrong),
            Err(Error::Checkpoint(_))
        ));

        let other = TrainConfig {
            factors: 4,
            ..cfg.clone()
        };
        assert!(matches!(
            back.ensure_compatible(&other),
            Err(Error::Checkpoint(_))
        ));
        back.ensure_compatible(&cfg).unwrap();
    }
}
