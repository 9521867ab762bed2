use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Child, Command as Process, Stdio};

use anyhow::{anyhow, bail, Context, Result};
use dgclr::data::{write_interactions, write_split_manifest, Whitening};
use dgclr::evalx::{
    evaluate_mse, explain_prediction, factor_review_report, factor_review_tsv, factor_scores,
    factor_scores_tsv, predictions_tsv, run_ablation, runtime_bench, sparsity_report,
};
use dgclr::synth::{planted_dataset, PlantedConfig};
use dgclr::trainer::StopReason;
use dgclr::{fit, Checkpoint, Error, InteractionDataset, RatingGraph, Split, TrainConfig, Variant};

use crate::args::{
    AblateArgs, BenchArgs, ConfigArgs, EvaluateArgs, ExplainArgs, IngestArgs, TrainArgs,
};
use crate::support::{check_model_fits, guard_outputs, usage, write_text, DataSource, Manifest};

fn out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| x.to_string())
}

/// Defaults (with `d` taken from the data), then the config file, then flags.
fn resolve_config(args: &ConfigArgs, data_d: usize) -> Result<TrainConfig> {
    let mut cfg = TrainConfig {
        d: data_d,
        ..TrainConfig::default()
    };
    if let Some(p) = &args.config {
        let text =
            fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
        cfg.apply_text(&text)?;
    }
    for (k, v) in args.overrides() {
        cfg.set(k, &v)?;
    }
    cfg.validate()?;
    if cfg.d != data_d {
        return Err(Error::Config(format!(
            "config d = {} but review vectors have dimension {data_d}",
            cfg.d
        ))
        .into());
    }
    Ok(cfg)
}

/// The split seed must be known before the config, which needs the data.
fn split_seed_hint(args: &ConfigArgs) -> Result<u64> {
    if let Some(s) = args.split_seed {
        return Ok(s);
    }
    if let Some(p) = &args.config {
        let text =
            fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
        let mut cfg = TrainConfig::default();
        cfg.apply_text(&text)?;
        return Ok(cfg.split_seed);
    }
    Ok(TrainConfig::default().split_seed)
}

fn load_for_training(
    data: &crate::args::DataArgs,
    config: &ConfigArgs,
) -> Result<(DataSource, InteractionDataset, TrainConfig)> {
    let src = DataSource::resolve(data)?;
    let ds = src.load(split_seed_hint(config)?)?;
    let cfg = resolve_config(config, ds.d())?;
    Ok((src, ds, cfg))
}

pub fn ingest(args: &IngestArgs) -> Result<()> {
    let mut manifest = Manifest::start();
    manifest.set("verb", "ingest");
    let mut inputs: Vec<&Path> = Vec::new();
    let mut ds = if args.synthetic {
        planted_dataset(&PlantedConfig {
            users: args.users,
            items: args.items,
            interactions: args.interactions,
            d: args.d,
            factors: args.factors,
            seed: args.seed,
            split_seed: args.split_seed,
            ..PlantedConfig::default()
        })?
    } else {
        let input = args
            .input
            .as_deref()
            .ok_or_else(|| usage("--input or --synthetic is required"))?;
        inputs.push(input);
        inputs.extend(args.vectors.as_deref());
        let src = DataSource {
            interactions: input.to_path_buf(),
            splits: None,
            vectors: args.vectors.clone(),
        };
        src.load(args.split_seed)?
    };
    let interactions_path = args.out.join("interactions.tsv");
    let splits_path = args.out.join("splits.tsv");
    let manifest_path = args.out.join("manifest.txt");
    guard_outputs(
        &inputs,
        &[
            interactions_path.clone(),
            splits_path.clone(),
            manifest_path.clone(),
        ],
    )?;

    if let Some(target) = args.whiten_dim {
        let d = ds.d();
        let train: Vec<f64> = ds
            .split_indices(Split::Train)
            .iter()
            .flat_map(|&i| ds.review(i).iter().copied())
            .collect();
        let w = Whitening::fit(&train, d, target)?;
        let whitened = w.apply(ds.reviews());
        ds.replace_reviews(target, whitened)?;
        eprintln!(
            "whitened review vectors {d} -> {target} (fitted on {} train rows)",
            train.len() / d
        );
        manifest.set("whiten_dim", target);
    }

    out_dir(&args.out)?;
    write_interactions(&interactions_path, &ds)?;
    let labels = ds
        .splits()
        .ok_or_else(|| anyhow!("dataset was not split"))?;
    write_split_manifest(&splits_path, labels)?;

    let counts = [Split::Train, Split::Val, Split::Test].map(|s| ds.split_indices(s).len());
    manifest.set("split_seed", args.split_seed);
    if args.synthetic {
        manifest.set("seed", args.seed);
        manifest.set("source", "synthetic");
    } else if let Some(p) = &args.input {
        manifest.set("source", p.display());
    }
    manifest.set("interactions", ds.len());
    manifest.set("users", ds.num_users());
    manifest.set("items", ds.num_items());
    manifest.set("d", ds.d());
    manifest.write(&manifest_path, None)?;
    println!(
        "interactions={} users={} items={} d={} train={} val={} test={}",
        ds.len(),
        ds.num_users(),
        ds.num_items(),
        ds.d(),
        counts[0],
        counts[1],
        counts[2]
    );
    Ok(())
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let mut manifest = Manifest::start();
    manifest.set("verb", "train");
    let (src, ds, cfg) = load_for_training(&args.data, &args.config)?;
    let ck_path = args.out.join("model.ck");
    let history_path = args.out.join("history.tsv");
    let manifest_path = args.out.join("manifest.txt");
    let mut inputs = src.inputs();
    inputs.extend(args.config.config.as_deref());
    guard_outputs(
        &inputs,
        &[ck_path.clone(), history_path.clone(), manifest_path.clone()],
    )?;
    out_dir(&args.out)?;

    eprintln!(
        "training {} on {} interactions (d={} K={} L={} epochs={})",
        cfg.variant,
        ds.len(),
        cfg.d,
        cfg.factors,
        cfg.layers,
        cfg.epochs
    );
    let result = fit(&ds, &cfg)?;
    result.history.write(&history_path)?;
    let mut ck = result.checkpoint(&cfg);
    src.record(&mut ck.meta);
    ck.save(&ck_path)?;

    manifest.set("seed", cfg.seed);
    manifest.set("split_seed", cfg.split_seed);
    manifest.set("data", src.interactions.display());
    manifest.set("epochs_run", result.history.epochs.len());
    manifest.set("best_epoch", result.best_epoch);
    manifest.set("best_val_mse", fmt_opt(result.best_val));
    manifest.set("stop", result.stop);
    manifest.write(&manifest_path, Some(&cfg))?;

    println!(
        "stop={} epochs_run={} best_epoch={} best_val_mse={}",
        result.stop,
        result.history.epochs.len(),
        result.best_epoch,
        fmt_opt(result.best_val)
    );
    if result.stop == StopReason::Diverged {
        bail!(
            "training diverged after {} epochs; saved the last finite parameters (epoch {})",
            result.history.epochs.len(),
            result.best_epoch
        );
    }
    Ok(())
}

fn load_checkpoint(
    path: &Path,
    data: &crate::args::DataArgs,
) -> Result<(Checkpoint, DataSource, InteractionDataset)> {
    let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    let src = DataSource::for_checkpoint(data, &ck)?;
    let ds = src.load(ck.config.split_seed)?;
    check_model_fits(&ck.model, &ds)?;
    Ok((ck, src, ds))
}

fn default_out(out: &Option<PathBuf>, checkpoint: &Path) -> PathBuf {
    out.clone().unwrap_or_else(|| {
        checkpoint
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map_or_else(|| PathBuf::from("."), Path::to_path_buf)
    })
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let mut manifest = Manifest::start();
    manifest.set("verb", "evaluate");
    let split: Split = args.split.parse()?;
    let (ck, src, ds) = load_checkpoint(&args.checkpoint, &args.data)?;
    let out = default_out(&args.out, &args.checkpoint);
    let report_path = out.join(format!("eval_{split}.tsv"));
    let preds_path = out.join(format!("predictions_{split}.tsv"));
    let manifest_path = out.join("manifest_evaluate.txt");
    let mut inputs = src.inputs();
    inputs.push(&args.checkpoint);
    guard_outputs(
        &inputs,
        &[
            report_path.clone(),
            preds_path.clone(),
            manifest_path.clone(),
        ],
    )?;

    let value = evaluate_mse(&ck.model, &ds, split, args.clip)?;
    let report = sparsity_report(&ck.model, &ds, split, &args.boundaries)?;
    out_dir(&out)?;
    write_text(&report_path, &report.to_tsv())?;
    write_text(&preds_path, &predictions_tsv(&ck.model, &ds, split)?)?;

    manifest.set("checkpoint", args.checkpoint.display());
    manifest.set("data", src.interactions.display());
    manifest.set("seed", ck.config.seed);
    manifest.set("split", split);
    manifest.set("clip", args.clip);
    manifest.set("mse", value);
    manifest.write(&manifest_path, Some(&ck.config))?;
    println!("{split}_mse={value}");
    Ok(())
}

pub fn explain(args: &ExplainArgs) -> Result<()> {
    let mut manifest = Manifest::start();
    manifest.set("verb", "explain");
    let (ck, src, ds) = load_checkpoint(&args.checkpoint, &args.data)?;
    let out = default_out(&args.out, &args.checkpoint);
    let record_path = out.join("explanation.tsv");
    let review_path = out.join("factor_review.tsv");
    let scores_path = out.join("factor_scores.tsv");
    let manifest_path = out.join("manifest_explain.txt");
    let mut inputs = src.inputs();
    inputs.push(&args.checkpoint);
    guard_outputs(
        &inputs,
        &[
            record_path.clone(),
            review_path.clone(),
            scores_path.clone(),
            manifest_path.clone(),
        ],
    )?;

    let explanation = explain_prediction(&ck.model, &ds, &args.user, &args.item)?;
    out_dir(&out)?;
    write_text(&record_path, &explanation.to_tsv())?;
    if args.factor_report {
        let records = factor_review_report(
            &ck.model,
            &ds,
            args.threshold,
            &args.ratings,
            args.per_cell,
            args.sample_seed,
        )?;
        write_text(&review_path, &factor_review_tsv(&records))?;
        eprintln!("wrote {}", review_path.display());
    }
    if args.export_scores {
        let graph = RatingGraph::from_dataset(&ds)?;
        let scores = factor_scores(&ck.model, &graph)?;
        write_text(&scores_path, &factor_scores_tsv(&ds, &graph, &scores))?;
        eprintln!("wrote {}", scores_path.display());
    }
    manifest.set("checkpoint", args.checkpoint.display());
    manifest.set("user", &args.user);
    manifest.set("item", &args.item);
    manifest.set("seed", args.sample_seed);
    manifest.write(&manifest_path, Some(&ck.config))?;
    print!("{explanation}");
    Ok(())
}

const ABLATION_HEADER: &str = "variant\tseed\tbest_epoch\tstop\tval_mse\ttest_mse";

fn run_name(variant: Variant, seed: u64) -> String {
    format!("{variant}_s{seed}")
}

/// Train and test one (variant, seed) into `dir`; returns its table row.
fn run_one(
    ds: &InteractionDataset,
    cfg: &TrainConfig,
    variant: Variant,
    seed: u64,
    dir: &Path,
) -> Result<String> {
    let mut manifest = Manifest::start();
    manifest.set("verb", "ablate");
    let cfg = TrainConfig {
        seed,
        variant,
        ..cfg.clone()
    };
    eprintln!("ablation run {}", run_name(variant, seed));
    let res = run_ablation(ds, &cfg, variant)?;
    out_dir(dir)?;
    res.fit.history.write(&dir.join("history.tsv"))?;
    write_text(&dir.join("report.tsv"), &res.report.to_tsv())?;
    let row = format!(
        "{variant}\t{seed}\t{}\t{}\t{}\t{}",
        res.fit.best_epoch,
        res.fit.stop,
        fmt_opt(res.fit.best_val),
        res.report.mse
    );
    write_text(
        &dir.join("ablation.tsv"),
        &format!("{ABLATION_HEADER}\n{row}\n"),
    )?;
    manifest.set("seed", seed);
    manifest.set("variant", variant);
    manifest.set("test_mse", res.report.mse);
    manifest.write(&dir.join("manifest.txt"), Some(&cfg))?;
    Ok(row)
}

fn read_row(dir: &Path) -> Result<String> {
    let path = dir.join("ablation.tsv");
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .nth(1)
        .map(str::to_string)
        .ok_or_else(|| anyhow!("{} has no result row", path.display()))
}

pub fn ablate(args: &AblateArgs) -> Result<()> {
    let mut manifest = Manifest::start();
    manifest.set("verb", "ablate");
    let variants: Vec<Variant> = if args.variants.is_empty() {
        Variant::ALL.to_vec()
    } else {
        args.variants
            .iter()
            .map(|v| v.parse())
            .collect::<Result<_, _>>()?
    };
    if args.seeds.is_empty() {
        return Err(usage("--seeds must name at least one seed"));
    }
    if args.jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    let (src, ds, cfg) = load_for_training(&args.data, &args.config)?;
    let mut inputs = src.inputs();
    inputs.extend(args.config.config.as_deref());

    if args.worker {
        let (&variant, &seed) = match (variants.as_slice(), args.seeds.as_slice()) {
            ([v], [s]) => (v, s),
            _ => return Err(usage("a worker run takes exactly one variant and one seed")),
        };
        guard_outputs(&inputs, &[args.out.join("ablation.tsv")])?;
        run_one(&ds, &cfg, variant, seed, &args.out)?;
        return Ok(());
    }

    let table_path = args.out.join("ablation.tsv");
    let config_path = args.out.join("config.resolved");
    let manifest_path = args.out.join("manifest.txt");
    guard_outputs(
        &inputs,
        &[
            table_path.clone(),
            config_path.clone(),
            manifest_path.clone(),
        ],
    )?;
    out_dir(&args.out)?;
    let runs: Vec<(Variant, u64)> = variants
        .iter()
        .flat_map(|&v| args.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let run_dir = |v: Variant, s: u64| args.out.join("runs").join(run_name(v, s));

    let mut rows = Vec::with_capacity(runs.len());
    if args.jobs == 1 {
        for &(v, s) in &runs {
            rows.push(run_one(&ds, &cfg, v, s, &run_dir(v, s))?);
        }
    } else {
        write_text(&config_path, &cfg.to_text())?;
        let exe = std::env::current_exe().context("locating the dgclr executable")?;
        let spawn = |v: Variant, s: u64| -> Result<Child> {
            let mut cmd = Process::new(&exe);
            cmd.arg("ablate").arg("--data").arg(&src.interactions);
            if let Some(p) = &src.splits {
                cmd.arg("--splits").arg(p);
            }
            if let Some(p) = &src.vectors {
                cmd.arg("--vectors").arg(p);
            }
            cmd.arg("--config")
                .arg(&config_path)
                .arg("--variants")
                .arg(v.as_str())
                .arg("--seeds")
                .arg(s.to_string())
                .arg("--worker")
                .arg("--out")
                .arg(run_dir(v, s))
                .stdout(Stdio::null());
            cmd.spawn().context("spawning an ablation worker")
        };
        let mut pending = runs.iter();
        let mut running: Vec<(Variant, u64, Child)> = Vec::new();
        let mut failed = Vec::new();
        loop {
            while running.len() < args.jobs {
                match pending.next() {
                    Some(&(v, s)) => running.push((v, s, spawn(v, s)?)),
                    None => break,
                }
            }
            if running.is_empty() {
                break;
            }
            let (v, s, mut child) = running.remove(0);
            let status = child.wait().context("waiting for an ablation worker")?;
            if !status.success() {
                failed.push(run_name(v, s));
            }
        }
        if !failed.is_empty() {
            bail!("ablation runs failed: {}", failed.join(", "));
        }
        for &(v, s) in &runs {
            rows.push(read_row(&run_dir(v, s))?);
        }
    }

    let mut table = format!("{ABLATION_HEADER}\n");
    for r in &rows {
        table.push_str(r);
        table.push('\n');
    }
    write_text(&table_path, &table)?;
    manifest.set(
        "variants",
        variants
            .iter()
            .map(|v| v.as_str())
            .collect::<Vec<_>>()
            .join(","),
    );
    manifest.set(
        "seeds",
        args.seeds
            .iter()
            .map(u64::to_string)
            .collect::<Vec<_>>()
            .join(","),
    );
    manifest.set("seed", cfg.seed);
    manifest.set("jobs", args.jobs);
    manifest.set("data", src.interactions.display());
    manifest.write(&manifest_path, Some(&cfg))?;
    for v in &variants {
        let mses: Vec<f64> = rows
            .iter()
            .filter(|r| r.split('\t').next() == Some(v.as_str()))
            .filter_map(|r| r.rsplit('\t').next()?.parse().ok())
            .collect();
        let mean = mses.iter().sum::<f64>() / mses.len().max(1) as f64;
        println!("{v}\tmean_test_mse={mean}\truns={}", mses.len());
    }
    Ok(())
}

pub fn bench(args: &BenchArgs) -> Result<()> {
    let mut manifest = Manifest::start();
    manifest.set("verb", "bench");
    let cfg = TrainConfig {
        d: args.d,
        factors: args.k,
        layers: args.l,
        seed: args.seed,
        ..TrainConfig::default()
    };
    cfg.validate()?;
    let table_path = args.out.join("bench.tsv");
    let manifest_path = args.out.join("manifest.txt");
    out_dir(&args.out)?;
    let report = runtime_bench(&args.edges, &cfg, args.reps, args.seed)?;
    write_text(&table_path, &report.to_tsv())?;
    manifest.set("seed", args.seed);
    manifest.set("reps", args.reps);
    manifest.set("exponent", fmt_opt(report.exponent));
    manifest.write(&manifest_path, Some(&cfg))?;
    for (e, t) in &report.rows {
        eprintln!("|E|={e}: {t:.4} s");
    }
    println!("exponent={}", fmt_opt(report.exponent));
    Ok(())
}
