//! Data resolution, manifests and the output guard shared by the commands.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use dgclr::atomic::write_atomic;
use dgclr::data::{load_interactions, read_split_manifest, split_dataset, InteractionFormat};
use dgclr::{Checkpoint, DgclrModel, InteractionDataset, TrainConfig};

use crate::args::DataArgs;

pub const VERSION: &str = env!("DGCLR_VERSION");

/// A bad invocation the parser could not catch (exit code 1).
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Resolved input files of a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct DataSource {
    pub interactions: PathBuf,
    pub splits: Option<PathBuf>,
    pub vectors: Option<PathBuf>,
}

fn absolute(p: &Path) -> Result<PathBuf> {
    p.canonicalize()
        .with_context(|| format!("cannot open {}", p.display()))
}

impl DataSource {
    /// A directory means the layout written by `ingest`.
    pub fn resolve(args: &DataArgs) -> Result<Self> {
        let Some(data) = &args.data else {
            return Err(usage("--data is required"));
        };
        let data = absolute(data)?;
        let (interactions, found_splits) = if data.is_dir() {
            let splits = data.join("splits.tsv");
            (
                data.join("interactions.tsv"),
                splits.is_file().then_some(splits),
            )
        } else {
            (data, None)
        };
        let splits = match &args.splits {
            Some(p) => Some(absolute(p)?),
            None => found_splits,
        };
        let vectors = args.vectors.as_deref().map(absolute).transpose()?;
        Ok(Self {
            interactions,
            splits,
            vectors,
        })
    }

    /// Recover the source recorded in a checkpoint, with explicit flags winning.
    pub fn for_checkpoint(args: &DataArgs, ck: &Checkpoint) -> Result<Self> {
        if args.data.is_some() {
            return Self::resolve(args);
        }
        let Some(data) = ck.meta.get("data") else {
            return Err(usage("checkpoint records no data path; pass --data"));
        };
        let recorded = |key: &str| ck.meta.get(key).map(PathBuf::from);
        Ok(Self {
            interactions: PathBuf::from(data),
            splits: match &args.splits {
                Some(p) => Some(absolute(p)?),
                None => recorded("splits"),
            },
            vectors: match &args.vectors {
                Some(p) => Some(absolute(p)?),
                None => recorded("vectors"),
            },
        })
    }

    pub fn inputs(&self) -> Vec<&Path> {
        let mut v = vec![self.interactions.as_path()];
        v.extend(self.splits.as_deref());
        v.extend(self.vectors.as_deref());
        v
    }

    /// Load and label; unlabelled data is split with `split_seed`.
    pub fn load(&self, split_seed: u64) -> Result<InteractionDataset> {
        let format = match &self.vectors {
            Some(v) => InteractionFormat::TextWithVectors(v.clone()),
            None => InteractionFormat::Text,
        };
        let mut ds = load_interactions(&self.interactions, &format)?;
        match &self.splits {
            Some(p) => ds.set_splits(read_split_manifest(p)?)?,
            None => {
                split_dataset(&mut ds, split_seed)?;
            }
        }
        Ok(ds)
    }

    pub fn record(&self, meta: &mut BTreeMap<String, String>) {
        meta.insert("data".into(), self.interactions.display().to_string());
        if let Some(s) = &self.splits {
            meta.insert("splits".into(), s.display().to_string());
        }
        if let Some(v) = &self.vectors {
            meta.insert("vectors".into(), v.display().to_string());
        }
    }
}

/// The dataset must be the one the model was trained on.
pub fn check_model_fits(model: &DgclrModel, ds: &InteractionDataset) -> Result<()> {
    if model.num_users != ds.num_users() || model.num_items != ds.num_items() {
        bail!(
            "checkpoint expects {} users and {} items, data has {} and {}",
            model.num_users,
            model.num_items,
            ds.num_users(),
            ds.num_items()
        );
    }
    if model.config.d != ds.d() {
        bail!(
            "checkpoint expects review dimension {}, data has {}",
            model.config.d,
            ds.d()
        );
    }
    Ok(())
}

/// Refuse to write over any input file.
pub fn guard_outputs(inputs: &[&Path], outputs: &[PathBuf]) -> Result<()> {
    let inputs: Vec<PathBuf> = inputs
        .iter()
        .filter_map(|p| p.canonicalize().ok())
        .collect();
    for out in outputs {
        if let Ok(c) = out.canonicalize() {
            if inputs.contains(&c) {
                bail!("refusing to overwrite input file {}", out.display());
            }
        }
    }
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

/// Per-run record: command line, version, seed, config and wall-clock.
pub struct Manifest {
    command: String,
    started: SystemTime,
    clock: Instant,
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn start() -> Self {
        Self {
            command: std::env::args().collect::<Vec<_>>().join(" "),
            started: SystemTime::now(),
            clock: Instant::now(),
            entries: Vec::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn render(&self, config: Option<&TrainConfig>) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "command = {}", self.command);
        let _ = writeln!(s, "version = {VERSION}");
        let started = self
            .started
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        let _ = writeln!(s, "started_unix = {started}");
        let _ = writeln!(
            s,
            "wall_clock_seconds = {:.3}",
            self.clock.elapsed().as_secs_f64()
        );
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k} = {v}");
        }
        if let Some(cfg) = config {
            s.push_str("# config\n");
            s.push_str(&cfg.to_text());
        }
        s
    }

    pub fn write(&self, path: &Path, config: Option<&TrainConfig>) -> Result<()> {
        write_text(path, &self.render(config))
    }
}
