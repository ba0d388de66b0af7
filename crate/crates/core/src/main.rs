use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use semirank::dataset::synth_generate;
use semirank::harness::{
    apply_split, combined_training_set, emit_report, evaluate_ranker, fit_ranker, load_pseudo, prepare_split,
    pretrain_stage, pseudo_raw_dataset, pseudo_stage, read_report, render_summary_csv, representations, summarize,
    DataSource, ExperimentConfig, PreparedSplit, ReportFormat, ReportRow, SplitRecord, Stages,
};
use semirank::losses::LossKind;
use semirank::pretrain::AutoencoderModel;
use semirank::rff_ranker::{write_cv_curve, Ranker};
use semirank::{Error, Result};

/// Semi-supervised learning-to-rank pipeline.
#[derive(Parser)]
#[command(name = "semirank", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// key=value config file
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override one config key, KEY=VALUE; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    loss: Option<LossKind>,
    #[arg(long)]
    ratio: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic benchmark as SVMLight
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Hold out test queries and split the rest into labeled/unlabeled
    Split {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the committee and write pseudo-labels (SVMLight + JSON sidecar)
    Pseudo {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to <out>.json
        #[arg(long)]
        sidecar: Option<PathBuf>,
    },
    /// Pre-train the encoder and write a checkpoint plus its loss trace
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        pseudo: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to <out>.trace.json
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Train the final ranker
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        pseudo: Option<PathBuf>,
        #[arg(long)]
        encoder: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Cross-validation curve over RFF widths (CSV)
        #[arg(long)]
        cv_out: Option<PathBuf>,
    },
    /// Evaluate a trained ranker on the test queries of a split
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        ranker: PathBuf,
        #[arg(long)]
        encoder: Option<PathBuf>,
        /// Report file (.csv or .json)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every (ratio, loss, seed) cell end to end
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Report file (.csv or .json)
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        format: Option<ReportFormat>,
        /// Directory for per-row CV curves
        #[arg(long)]
        cv_dir: Option<PathBuf>,
    },
    /// Aggregate a JSON row report into mean/std per cell
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        format: Option<ReportFormat>,
    },
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    for kv in &c.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(s) = c.seed {
        cfg.seeds = vec![s];
    }
    if let Some(l) = c.loss {
        cfg.losses = vec![l];
    }
    if let Some(r) = c.ratio {
        cfg.ratios = vec![r];
    }
    cfg.validate()?;
    Ok(cfg)
}

/// The single cell a stage command works on: first ratio, loss and seed.
struct Cell {
    ratio: f64,
    loss: LossKind,
    seed: u64,
}

fn cell(cfg: &ExperimentConfig) -> Cell {
    Cell {
        ratio: cfg.ratios[0],
        loss: cfg.losses[0],
        seed: cfg.seeds[0],
    }
}

fn load_split(cfg: &ExperimentConfig, path: &Path) -> Result<PreparedSplit> {
    let record = SplitRecord::read(path)?;
    apply_split(&cfg.source.load()?, &record)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)
        .map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { common, out } => {
            let cfg = load_config(&common)?;
            let DataSource::Synthetic { queries, docs, features, seed } = cfg.source else {
                return Err(Error::InvalidArgument("synth needs data=synthetic".into()));
            };
            let data = synth_generate(queries, docs, features, seed)?;
            data.write_svmlight(&out)?;
            eprintln!("wrote {} queries, {} documents to {}", data.len(), data.num_docs(), out.display());
        }
        Command::Split { common, out } => {
            let cfg = load_config(&common)?;
            let c = cell(&cfg);
            let split = prepare_split(
                &cfg.source.load()?,
                cfg.test_fraction,
                cfg.split_seed,
                c.ratio,
                c.seed,
                &cfg.source.describe(),
            )?;
            split.record.write(&out)?;
            eprintln!(
                "labeled {} unlabeled {} test {}",
                split.record.manifest.labeled.len(),
                split.record.manifest.unlabeled.len(),
                split.record.test.len()
            );
        }
        Command::Pseudo { common, split, out, sidecar } => {
            let cfg = load_config(&common)?;
            let c = cell(&cfg);
            let raw = cfg.source.load()?;
            let record = SplitRecord::read(&split)?;
            let prepared = apply_split(&raw, &record)?;
            let pseudo = pseudo_stage(&cfg, &prepared, c.seed)?;
            pseudo_raw_dataset(&raw, &pseudo)?.write_svmlight(&out)?;
            let sidecar = sidecar.unwrap_or_else(|| with_suffix(&out, ".json"));
            write_json(&sidecar, &pseudo.sidecar())?;
            eprintln!(
                "kept {} of {} unlabeled queries",
                pseudo.len(),
                record.manifest.unlabeled.len()
            );
        }
        Command::Pretrain { common, split, pseudo, out, trace } => {
            let cfg = load_config(&common)?;
            let c = cell(&cfg);
            let prepared = load_split(&cfg, &split)?;
            let pseudo = pseudo.map(|p| load_pseudo(p, &prepared)).transpose()?;
            let combined = combined_training_set(&prepared, pseudo.as_ref())?;
            let (model, tr) = pretrain_stage(&cfg, &combined, c.loss, c.seed)?;
            model.save(
                &out,
                json!({"seed": c.seed, "ratio": c.ratio, "loss": c.loss, "queries": combined.len()}),
            )?;
            write_json(&trace.unwrap_or_else(|| with_suffix(&out, ".trace.json")), &tr)?;
            if let (Some(a), Some(b)) = (tr.first(), tr.last()) {
                eprintln!(
                    "epoch {}: generative {:?} ranking {:?} -> epoch {}: generative {:?} ranking {:?}",
                    a.epoch, a.generative, a.discriminative, b.epoch, b.generative, b.discriminative
                );
            }
        }
        Command::Train { common, split, pseudo, encoder, out, cv_out } => {
            let cfg = load_config(&common)?;
            let c = cell(&cfg);
            let prepared = load_split(&cfg, &split)?;
            let has_pseudo = pseudo.is_some();
            let pseudo = pseudo.map(|p| load_pseudo(p, &prepared)).transpose()?;
            let combined = combined_training_set(&prepared, pseudo.as_ref())?;
            let encoder = encoder.map(AutoencoderModel::load).transpose()?.map(|(m, _)| m);
            let reps = representations(encoder.as_ref(), &combined)?;
            let fit = fit_ranker(&cfg, &reps, &prepared.labeled().qids(), c.loss, c.seed, cfg.stages.rff)?;
            let method = Stages {
                pseudo: has_pseudo,
                pretrain: encoder.is_some(),
                rff: cfg.stages.rff,
            }
            .method();
            fit.ranker.save(
                &out,
                json!({"method": method, "seed": c.seed, "ratio": c.ratio, "loss": c.loss}),
            )?;
            if let Some(sel) = &fit.selection {
                eprintln!("chose N = {} (sigma {:.4})", sel.chosen, sel.sigma);
                if let Some(p) = cv_out {
                    write_cv_curve(p, &sel.curve)?;
                }
            } else if cv_out.is_some() {
                eprintln!("rff is off; no CV curve written");
            }
        }
        Command::Eval { common, split, ranker, encoder, out } => {
            let cfg = load_config(&common)?;
            let prepared = load_split(&cfg, &split)?;
            let (ranker, meta) = Ranker::load(&ranker)?;
            let encoder = encoder.map(AutoencoderModel::load).transpose()?.map(|(m, _)| m);
            let start = std::time::Instant::now();
            let ndcg = evaluate_ranker(&ranker, encoder.as_ref(), &prepared.test, &cfg.ks)?;
            let run = &meta;
            let c = cell(&cfg);
            let row = ReportRow {
                method: run["method"].as_str().unwrap_or("unknown").to_string(),
                ratio: run["ratio"].as_f64().unwrap_or(c.ratio),
                loss: ranker.loss.kind,
                seed: run["seed"].as_u64().unwrap_or(c.seed),
                ndcg,
                wall_seconds: start.elapsed().as_secs_f64(),
                status: "ok".into(),
                error: None,
            };
            for n in &row.ndcg {
                println!("NDCG@{} {}", n.k, semirank::harness::format_ndcg(n.value));
            }
            if let Some(p) = out {
                let fmt = ReportFormat::from_path(&p);
                emit_report(&[row], &p, fmt)?;
            }
        }
        Command::Sweep { common, out, format, cv_dir } => {
            let cfg = load_config(&common)?;
            let result = semirank::harness::run_experiment_detailed(&cfg)?;
            let fmt = format.unwrap_or_else(|| ReportFormat::from_path(&out));
            emit_report(&result.rows, &out, fmt)?;
            if let Some(dir) = cv_dir {
                std::fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
                for (i, curve) in &result.cv_curves {
                    let r = &result.rows[*i];
                    let name = format!("cv_{}_{}_{}_seed{}.csv", r.method, r.ratio, r.loss, r.seed);
                    write_cv_curve(dir.join(name.replace('+', "-")), curve)?;
                }
            }
            let failed = result.rows.iter().filter(|r| !r.is_ok()).count();
            eprintln!(
                "{} rows ({} failed), {} leakage checks passed",
                result.rows.len(),
                failed,
                result.leakage_checks
            );
            print!("{}", render_summary_csv(&summarize(&result.rows)));
        }
        Command::Report { input, out, format } => {
            let rows = read_report(&input)?;
            let summary = summarize(&rows);
            let text = match format.unwrap_or_else(|| ReportFormat::from_path(&out)) {
                ReportFormat::Csv => render_summary_csv(&summary),
                ReportFormat::Json => serde_json::to_string_pretty(&summary)?,
            };
            std::fs::write(&out, text).map_err(|e| Error::Io { path: out.clone(), source: e })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
