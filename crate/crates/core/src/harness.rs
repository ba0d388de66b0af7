//! Experiment orchestration: configuration, the per-cell pipeline with its
//! ablations, runtime leakage checks, and report emission.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::{parse_svmlight, synth_generate, Dataset, NormStats, Provenance, QueryGroup, SplitManifest};
use crate::error::{Error, Result};
use crate::losses::{LossConfig, LossKind};
use crate::metrics::{shuffled_baseline_ndcg, RankingEval};
use crate::pretrain::{
    extract_representations, pretrain, raw_representations, AttentionAxis, AutoencoderModel, PretrainConfig,
    PretrainTrace, RepresentationSet,
};
use crate::pseudo_label::{
    aggregate_pseudo_labels, combine, score_unlabeled, train_committee, train_member, training_groups,
    validation_indices, AggregationPolicy, CommitteeConfig, PseudoLabeledSet,
};
use crate::numerics::Tensor;
use crate::rff_ranker::{build_rff, rff_seed, select_n, train_ranker, CvPoint, NSelection, Ranker, RankerConfig};
use crate::scorer::{MlpScorer, TrainingGroup};

/// Environment variable naming the directory relative data paths resolve
/// against.
pub const DATA_DIR_ENV: &str = "SEMIRANK_DATA_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DataSource {
    Synthetic {
        queries: usize,
        docs: usize,
        features: usize,
        seed: u64,
    },
    File(PathBuf),
}

/// Resolves a relative path against `$SEMIRANK_DATA_DIR` when set.
pub fn resolve_data_path(path: &Path) -> PathBuf {
    match std::env::var_os(DATA_DIR_ENV) {
        Some(dir) if path.is_relative() => Path::new(&dir).join(path),
        _ => path.to_path_buf(),
    }
}

impl DataSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            Self::Synthetic {
                queries,
                docs,
                features,
                seed,
            } => synth_generate(*queries, *docs, *features, *seed),
            Self::File(p) => parse_svmlight(resolve_data_path(p)),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Self::Synthetic {
                queries,
                docs,
                features,
                seed,
            } => format!("synthetic({queries}x{docs}x{features}, seed {seed})"),
            Self::File(p) => p.display().to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stages {
    pub pseudo: bool,
    pub pretrain: bool,
    pub rff: bool,
}

impl Stages {
    pub const ALL: Self = Self {
        pseudo: true,
        pretrain: true,
        rff: true,
    };
    pub const NONE: Self = Self {
        pseudo: false,
        pretrain: false,
        rff: false,
    };

    pub fn any(self) -> bool {
        self.pseudo || self.pretrain || self.rff
    }

    /// Method label of rows produced with these stages.
    pub fn method(self) -> String {
        if !self.any() {
            return BASELINE_METHOD.to_string();
        }
        let mut parts = Vec::new();
        if self.pseudo {
            parts.push("pseudo");
        }
        if self.pretrain {
            parts.push("pretrain");
        }
        if self.rff {
            parts.push("rff");
        }
        parts.join("+")
    }
}

pub const BASELINE_METHOD: &str = "mlp";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub source: DataSource,
    pub ratios: Vec<f64>,
    pub losses: Vec<LossKind>,
    pub seeds: Vec<u64>,
    pub stages: Stages,
    /// Also emit supervised-only MLP rows for every cell.
    pub baseline: bool,
    pub ks: Vec<usize>,
    /// Fraction of all queries held out for testing before any split.
    pub test_fraction: f64,
    pub split_seed: u64,
    pub tau: f64,
    pub sigma: f64,
    pub loss_k: usize,
    pub committee_losses: Vec<LossKind>,
    pub committee: CommitteeConfig,
    pub confidence_threshold: f64,
    pub pretrain: PretrainConfig,
    pub ranker: RankerConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic {
                queries: 200,
                docs: 25,
                features: 32,
                seed: 7,
            },
            ratios: vec![0.05, 0.10, 0.15, 0.20],
            losses: vec![LossKind::NeuralNdcg],
            seeds: vec![0, 1, 2, 3, 4],
            stages: Stages::ALL,
            baseline: true,
            ks: vec![4, 10],
            test_fraction: 0.2,
            split_seed: 0,
            tau: 1.0,
            sigma: 1.0,
            loss_k: 10,
            committee_losses: LossKind::ALL.to_vec(),
            committee: CommitteeConfig::default(),
            confidence_threshold: AggregationPolicy::DEFAULT_THRESHOLD,
            pretrain: PretrainConfig::default(),
            ranker: RankerConfig::default(),
        }
    }
}

fn parse_list<T>(value: &str, f: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(f)
        .collect()
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::invalid(format!("{key}: cannot parse {value:?}")))
}

fn flag(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "on" | "true" | "1" | "yes" => Ok(true),
        "off" | "false" | "0" | "no" => Ok(false),
        _ => Err(Error::invalid(format!("{key}: expected on|off, got {value:?}"))),
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn on_off(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

impl ExperimentConfig {
    /// Reads `key = value` lines (`#` starts a comment) over the defaults.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected key=value, got {line:?}"),
            })?;
            cfg.set(k.trim(), v.trim()).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_kv_str(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// Applies one setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let loss = |s: &str| s.parse::<LossKind>();
        let widths = |s: &str| parse_list(s, |w| num::<usize>(key, w));
        match key {
            "data" => {
                self.source = if value == "synthetic" {
                    match &self.source {
                        s @ DataSource::Synthetic { .. } => s.clone(),
                        DataSource::File(_) => ExperimentConfig::default().source,
                    }
                } else {
                    DataSource::File(PathBuf::from(value))
                };
            }
            "synth_queries" | "synth_docs" | "synth_features" | "synth_seed" => {
                let DataSource::Synthetic {
                    queries,
                    docs,
                    features,
                    seed,
                } = &mut self.source
                else {
                    return Err(Error::invalid(format!("{key} requires data=synthetic")));
                };
                match key {
                    "synth_queries" => *queries = num(key, value)?,
                    "synth_docs" => *docs = num(key, value)?,
                    "synth_features" => *features = num(key, value)?,
                    _ => *seed = num(key, value)?,
                }
            }
            "ratios" | "ratio" => self.ratios = parse_list(value, |s| num(key, s))?,
            "losses" | "loss" => self.losses = parse_list(value, loss)?,
            "seeds" => self.seeds = parse_list(value, |s| num(key, s))?,
            "seed" => self.seeds = vec![num(key, value)?],
            "ks" => self.ks = parse_list(value, |s| num(key, s))?,
            "test_fraction" => self.test_fraction = num(key, value)?,
            "split_seed" => self.split_seed = num(key, value)?,
            "pseudo" => self.stages.pseudo = flag(key, value)?,
            "pretrain" => self.stages.pretrain = flag(key, value)?,
            "rff" => self.stages.rff = flag(key, value)?,
            "baseline" => self.baseline = flag(key, value)?,
            "tau" => self.tau = num(key, value)?,
            "sigma" => self.sigma = num(key, value)?,
            "loss_k" => self.loss_k = num(key, value)?,
            "committee_losses" => self.committee_losses = parse_list(value, loss)?,
            "committee_hidden" => self.committee.train.hidden = widths(value)?,
            "committee_epochs" => self.committee.train.epochs = num(key, value)?,
            "committee_lr" => self.committee.train.learning_rate = num(key, value)?,
            "committee_weight_decay" => self.committee.train.weight_decay = num(key, value)?,
            "committee_batch" => self.committee.train.batch_queries = num(key, value)?,
            "validation_fraction" => self.committee.validation_fraction = num(key, value)?,
            "confidence_threshold" => self.confidence_threshold = num(key, value)?,
            "blocks" => self.pretrain.encoder.blocks = num(key, value)?,
            "heads" => self.pretrain.encoder.heads = num(key, value)?,
            "d_model" => self.pretrain.encoder.d_model = num(key, value)?,
            "d_ff" => self.pretrain.encoder.d_ff = num(key, value)?,
            "repr_dim" => self.pretrain.encoder.repr_dim = num(key, value)?,
            "corruption" => self.pretrain.encoder.corruption = num(key, value)?,
            "axis" => self.pretrain.encoder.axis = value.parse::<AttentionAxis>()?,
            "decoder_hidden" => self.pretrain.encoder.decoder_hidden = num(key, value)?,
            "alpha" => self.pretrain.alpha = num(key, value)?,
            "beta" => self.pretrain.beta = num(key, value)?,
            "pretrain_epochs" => self.pretrain.epochs = num(key, value)?,
            "pretrain_lr" => self.pretrain.learning_rate = num(key, value)?,
            "pretrain_batch" => self.pretrain.batch_queries = num(key, value)?,
            "ranker_hidden" => self.ranker.hidden = widths(value)?,
            "ranker_epochs" => self.ranker.epochs = num(key, value)?,
            "ranker_lr" => self.ranker.learning_rate = num(key, value)?,
            "ranker_weight_decay" => self.ranker.weight_decay = num(key, value)?,
            "ranker_batch" => self.ranker.batch_queries = num(key, value)?,
            "rff_candidates" => self.ranker.candidates = widths(value)?,
            "cv_folds" => self.ranker.folds = num(key, value)?,
            "rff_sigma_scale" => self.ranker.sigma_scale = num(key, value)?,
            "rff_sigma" => {
                self.ranker.sigma = match value {
                    "auto" | "median" => None,
                    v => Some(num(key, v)?),
                }
            }
            _ => return Err(Error::invalid(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// The effective configuration as `key = value` lines; parsing the
    /// output reproduces `self`.
    pub fn to_kv_string(&self) -> String {
        let mut lines: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: String| lines.push((k.to_string(), v));
        match &self.source {
            DataSource::Synthetic {
                queries,
                docs,
                features,
                seed,
            } => {
                put("data", "synthetic".into());
                put("synth_queries", queries.to_string());
                put("synth_docs", docs.to_string());
                put("synth_features", features.to_string());
                put("synth_seed", seed.to_string());
            }
            DataSource::File(p) => put("data", p.display().to_string()),
        }
        put("ratios", join(&self.ratios));
        put("losses", join(&self.losses));
        put("seeds", join(&self.seeds));
        put("ks", join(&self.ks));
        put("test_fraction", self.test_fraction.to_string());
        put("split_seed", self.split_seed.to_string());
        put("pseudo", on_off(self.stages.pseudo).into());
        put("pretrain", on_off(self.stages.pretrain).into());
        put("rff", on_off(self.stages.rff).into());
        put("baseline", on_off(self.baseline).into());
        put("tau", self.tau.to_string());
        put("sigma", self.sigma.to_string());
        put("loss_k", self.loss_k.to_string());
        put("committee_losses", join(&self.committee_losses));
        let c = &self.committee;
        put("committee_hidden", join(&c.train.hidden));
        put("committee_epochs", c.train.epochs.to_string());
        put("committee_lr", c.train.learning_rate.to_string());
        put("committee_weight_decay", c.train.weight_decay.to_string());
        put("committee_batch", c.train.batch_queries.to_string());
        put("validation_fraction", c.validation_fraction.to_string());
        put("confidence_threshold", self.confidence_threshold.to_string());
        let e = &self.pretrain.encoder;
        put("blocks", e.blocks.to_string());
        put("heads", e.heads.to_string());
        put("d_model", e.d_model.to_string());
        put("d_ff", e.d_ff.to_string());
        put("repr_dim", e.repr_dim.to_string());
        put("corruption", e.corruption.to_string());
        put(
            "axis",
            match e.axis {
                AttentionAxis::Documents => "documents".into(),
                AttentionAxis::Features => "features".into(),
            },
        );
        put("decoder_hidden", e.decoder_hidden.to_string());
        let p = &self.pretrain;
        put("alpha", p.alpha.to_string());
        put("beta", p.beta.to_string());
        put("pretrain_epochs", p.epochs.to_string());
        put("pretrain_lr", p.learning_rate.to_string());
        put("pretrain_batch", p.batch_queries.to_string());
        let r = &self.ranker;
        put("ranker_hidden", join(&r.hidden));
        put("ranker_epochs", r.epochs.to_string());
        put("ranker_lr", r.learning_rate.to_string());
        put("ranker_weight_decay", r.weight_decay.to_string());
        put("ranker_batch", r.batch_queries.to_string());
        put("rff_candidates", join(&r.candidates));
        put("cv_folds", r.folds.to_string());
        put("rff_sigma_scale", r.sigma_scale.to_string());
        put(
            "rff_sigma",
            r.sigma.map_or_else(|| "auto".to_string(), |s| s.to_string()),
        );
        lines.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.ratios.is_empty() || self.losses.is_empty() || self.seeds.is_empty() || self.ks.is_empty() {
            return Err(Error::invalid("ratios, losses, seeds and ks must be non-empty"));
        }
        if let Some(r) = self.ratios.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
            return Err(Error::invalid(format!("ratio {r} outside (0, 1]")));
        }
        if self.ks.contains(&0) {
            return Err(Error::invalid("NDCG cutoffs must be positive"));
        }
        if !(0.0..1.0).contains(&self.test_fraction) || self.test_fraction == 0.0 {
            return Err(Error::invalid("test_fraction must lie in (0, 1)"));
        }
        self.loss(LossKind::Rmse).validate()?;
        if !(self.ranker.sigma_scale > 0.0 && self.ranker.sigma_scale.is_finite()) {
            return Err(Error::invalid("rff_sigma_scale must be positive"));
        }
        if self.stages.pseudo {
            let distinct: HashSet<_> = self.committee_losses.iter().collect();
            if self.committee_losses.len() < 2 || distinct.len() != self.committee_losses.len() {
                return Err(Error::invalid("committee_losses needs at least two distinct kinds"));
            }
        }
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return Err(Error::invalid("confidence_threshold must lie in [0, 1]"));
        }
        let mut p = self.pretrain.clone();
        p.loss = self.loss(LossKind::Rmse);
        p.validate()?;
        if self.stages.pretrain && p.alpha == 0.0 && p.beta == 0.0 {
            return Err(Error::invalid("alpha and beta cannot both be zero"));
        }
        if self.stages.rff && (self.ranker.candidates.is_empty() || self.ranker.candidates.contains(&0)) {
            return Err(Error::invalid("rff_candidates must be positive widths"));
        }
        if self.stages.rff && self.ranker.folds < 2 {
            return Err(Error::invalid("cv_folds must be at least 2"));
        }
        Ok(())
    }

    pub fn loss(&self, kind: LossKind) -> LossConfig {
        LossConfig {
            kind,
            tau: self.tau,
            sigma: self.sigma,
            k: self.loss_k,
        }
    }

    fn committee_config(&self) -> CommitteeConfig {
        CommitteeConfig {
            tau: self.tau,
            sigma: self.sigma,
            k: self.loss_k,
            ..self.committee.clone()
        }
    }
}

/// Split record written by `split` and read by later stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub dataset: String,
    pub test_fraction: f64,
    pub split_seed: u64,
    pub test: Vec<String>,
    #[serde(flatten)]
    pub manifest: SplitManifest,
}

impl SplitRecord {
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Ok(serde_json::from_str(
            &std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?,
        )?)
    }
}

/// Normalized train pool (labeled + unlabeled with hidden grades) and test
/// set of one cell.
#[derive(Debug, Clone)]
pub struct PreparedSplit {
    pub pool: Dataset,
    pub test: Dataset,
    pub record: SplitRecord,
}

impl PreparedSplit {
    pub fn labeled(&self) -> Dataset {
        self.pool.labeled()
    }

    pub fn unlabeled(&self) -> Dataset {
        self.pool.unlabeled()
    }

    pub fn norm_stats(&self) -> &NormStats {
        self.pool.norm_stats().expect("pool is normalized")
    }
}

/// Seed of the labeled/unlabeled split of run seed `seed`.
pub fn labeled_split_seed(seed: u64) -> u64 {
    crate::derive_seed(seed, 0x5917)
}

/// Holds out the test queries (fixed by `split_seed`), splits the rest at
/// `ratio`, and min-max normalizes everything with statistics fitted on the
/// labeled part only.
pub fn prepare_split(
    data: &Dataset,
    test_fraction: f64,
    split_seed: u64,
    ratio: f64,
    seed: u64,
    description: &str,
) -> Result<PreparedSplit> {
    let (rest, test) = data.split_holdout(test_fraction, split_seed)?;
    let (_, manifest) = rest.split_labeled_fraction(ratio, labeled_split_seed(seed))?;
    let record = SplitRecord {
        dataset: description.to_string(),
        test_fraction,
        split_seed,
        test: test.qids(),
        manifest,
    };
    apply_split(data, &record)
}

/// Rebuilds a [`PreparedSplit`] from a recorded split.
pub fn apply_split(data: &Dataset, record: &SplitRecord) -> Result<PreparedSplit> {
    let test = data.select(&record.test)?;
    let mut pool_ids = record.manifest.labeled.clone();
    pool_ids.extend(record.manifest.unlabeled.iter().cloned());
    let pool = data.select(&pool_ids)?.hide_labels(&record.manifest.unlabeled)?;
    assert_disjoint("split", &record.test, &pool_ids)?;
    let stats = NormStats::fit(&pool);
    let pool = stats.apply(&pool)?;
    let test = stats.apply(&test)?;
    Ok(PreparedSplit {
        pool,
        test,
        record: record.clone(),
    })
}

/// Errors when the two id lists share an element.
pub fn assert_disjoint(stage: &str, test_ids: &[String], used: &[String]) -> Result<()> {
    let test: HashSet<&str> = test_ids.iter().map(String::as_str).collect();
    if let Some(leak) = used.iter().find(|id| test.contains(id.as_str())) {
        return Err(Error::Leakage(format!("test query {leak} reached stage {stage}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NdcgAt {
    pub k: usize,
    /// NDCG@k × 100.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub ratio: f64,
    pub loss: LossKind,
    pub seed: u64,
    /// Empty for failed rows.
    pub ndcg: Vec<NdcgAt>,
    pub wall_seconds: f64,
    /// `ok`, or `failed:<stage>`.
    pub status: String,
    pub error: Option<String>,
}

impl ReportRow {
    pub fn ndcg_at(&self, k: usize) -> Option<f64> {
        self.ndcg.iter().find(|n| n.k == k).map(|n| n.value)
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    /// Equality ignoring wall-clock time.
    pub fn same_result(&self, other: &Self) -> bool {
        Self {
            wall_seconds: 0.0,
            ..self.clone()
        } == Self {
            wall_seconds: 0.0,
            ..other.clone()
        }
    }
}

/// NDCG@k on the 0-100 report scale, two decimals.
pub fn format_ndcg(value_x100: f64) -> String {
    format!("{value_x100:.2}")
}

/// Test-set evaluation of per-query scores at each cutoff.
pub fn evaluate_scores(labels: &[Vec<f64>], scores: &[Vec<f64>], ks: &[usize]) -> Result<Vec<NdcgAt>> {
    ks.iter()
        .map(|&k| {
            let eval = RankingEval::compute(
                k,
                labels.iter().zip(scores).map(|(l, s)| (l.as_slice(), s.as_slice())),
            )?;
            Ok(NdcgAt {
                k,
                value: 100.0 * eval.mean,
            })
        })
        .collect()
}

/// Everything a finished cell produced besides its report row.
#[derive(Debug, Clone, Default)]
pub struct CellArtifacts {
    pub pseudo: Option<PseudoLabeledSet>,
    pub pretrain_trace: Option<PretrainTrace>,
    pub encoder: Option<AutoencoderModel>,
    pub cv_curve: Option<Vec<CvPoint>>,
    pub chosen_n: Option<usize>,
    pub ranker: Option<Ranker>,
    pub baseline: Option<MlpScorer>,
    pub leakage_checks: usize,
}

struct StageError {
    stage: &'static str,
    error: Error,
}

trait Staged<T> {
    fn at(self, stage: &'static str) -> std::result::Result<T, StageError>;
}

impl<T> Staged<T> for Result<T> {
    fn at(self, stage: &'static str) -> std::result::Result<T, StageError> {
        self.map_err(|error| StageError { stage, error })
    }
}

fn label_lists(groups: &[TrainingGroup]) -> Vec<Vec<f64>> {
    groups.iter().map(|g| g.labels.clone()).collect()
}

/// Seed of the final ranker's validation split.
fn ranker_seed(seed: u64) -> u64 {
    crate::derive_seed(seed, 0xA7)
}

fn run_baseline(
    cfg: &ExperimentConfig,
    split: &PreparedSplit,
    kind: LossKind,
    seed: u64,
    art: &mut CellArtifacts,
) -> std::result::Result<Vec<NdcgAt>, StageError> {
    let labeled = split.labeled();
    assert_disjoint("baseline training", &split.record.test, &labeled.qids()).at("leakage-check")?;
    art.leakage_checks += 1;
    let train = training_groups(&labeled).at("baseline")?;
    let member = train_member(&train, cfg.loss(kind), &cfg.committee_config(), seed).at("baseline")?;
    let test = training_groups(&split.test).at("evaluate")?;
    let scores = test
        .iter()
        .map(|g| member.scorer.score(&g.features))
        .collect::<Result<Vec<_>>>()
        .at("evaluate")?;
    let ndcg = evaluate_scores(&label_lists(&test), &scores, &cfg.ks).at("evaluate")?;
    art.baseline = Some(member.scorer);
    Ok(ndcg)
}

/// Committee training and pseudo-labeling of the unlabeled pool.
pub fn pseudo_stage(cfg: &ExperimentConfig, split: &PreparedSplit, seed: u64) -> Result<PseudoLabeledSet> {
    let labeled = split.labeled();
    let unlabeled = split.unlabeled();
    assert_disjoint("committee training", &split.record.test, &labeled.qids())?;
    assert_disjoint("pseudo-labeling", &split.record.test, &unlabeled.qids())?;
    let committee = train_committee(&labeled, &cfg.committee_losses, &cfg.committee_config(), seed)?;
    let scores = score_unlabeled(&committee, &unlabeled)?;
    let policy = AggregationPolicy::from_labeled(&labeled, cfg.confidence_threshold);
    aggregate_pseudo_labels(&unlabeled, &scores, &policy)
}

/// Raw (un-normalized) features of the retained pseudo-labeled documents,
/// graded by the committee. This is what `pseudo` writes as SVMLight.
pub fn pseudo_raw_dataset(raw: &Dataset, pseudo: &PseudoLabeledSet) -> Result<Dataset> {
    if pseudo.is_empty() {
        return Ok(Dataset::empty(raw.num_features()));
    }
    let mut groups = Vec::with_capacity(pseudo.len());
    for (g, kept) in pseudo.groups.iter().zip(&pseudo.kept_documents) {
        let src = raw.select(std::slice::from_ref(&g.qid))?.into_groups().remove(0);
        let m = src.num_features();
        let mut data = Vec::with_capacity(kept.len() * m);
        for &d in kept {
            data.extend_from_slice(&src.features.data()[d * m..(d + 1) * m]);
        }
        let mut q = QueryGroup::labeled(
            g.qid.clone(),
            Tensor::matrix(kept.len(), m, data)?,
            g.labels.clone().unwrap_or_default(),
        )?;
        q.provenance = Provenance::Pseudo;
        groups.push(q);
    }
    Dataset::new(groups)
}

/// Reads a pseudo-labeled SVMLight file back, normalized with the split's
/// statistics and marked as pseudo-labeled.
pub fn load_pseudo(path: impl AsRef<Path>, split: &PreparedSplit) -> Result<PseudoLabeledSet> {
    let raw = parse_svmlight(path)?;
    let normalized = split.norm_stats().apply(&raw)?;
    let mut out = PseudoLabeledSet {
        groups: Vec::new(),
        confidence: Vec::new(),
        kept_documents: Vec::new(),
    };
    for mut g in normalized.into_groups() {
        g.provenance = Provenance::Pseudo;
        out.confidence.push(vec![1.0; g.num_docs()]);
        out.kept_documents.push((0..g.num_docs()).collect());
        out.groups.push(g);
    }
    Ok(out)
}

/// Training set of the downstream stages: labeled queries plus the
/// pseudo-labeled ones when given.
pub fn combined_training_set(split: &PreparedSplit, pseudo: Option<&PseudoLabeledSet>) -> Result<Dataset> {
    let combined = match pseudo {
        Some(p) => combine(&split.labeled(), p)?,
        None => split.labeled(),
    };
    assert_disjoint("combined training set", &split.record.test, &combined.qids())?;
    Ok(combined)
}

/// Pre-trains the encoder on `combined` with the cell's ranking loss.
pub fn pretrain_stage(
    cfg: &ExperimentConfig,
    combined: &Dataset,
    kind: LossKind,
    seed: u64,
) -> Result<(AutoencoderModel, PretrainTrace)> {
    let pcfg = PretrainConfig {
        loss: cfg.loss(kind),
        ..cfg.pretrain.clone()
    };
    pretrain(combined, &pcfg, seed)
}

/// Representations through the encoder, or the normalized features.
pub fn representations(encoder: Option<&AutoencoderModel>, data: &Dataset) -> Result<RepresentationSet> {
    match encoder {
        Some(m) => extract_representations(m, data),
        None => raw_representations(data),
    }
}

#[derive(Debug, Clone)]
pub struct RankerFit {
    pub ranker: Ranker,
    pub selection: Option<NSelection>,
}

/// Final ranker. With `use_rff` the width is chosen by cross-validation on
/// the labeled queries of `reps`; those same labeled queries supply the
/// early-stopping validation split. Pseudo-labeled queries are always
/// trained on.
pub fn fit_ranker(
    cfg: &ExperimentConfig,
    reps: &RepresentationSet,
    labeled_ids: &[String],
    kind: LossKind,
    seed: u64,
    use_rff: bool,
) -> Result<RankerFit> {
    let loss = cfg.loss(kind);
    let labeled_reps = reps.select(labeled_ids)?;
    let labeled_train = labeled_reps.training_groups()?;

    let (rff, selection) = if use_rff {
        let sel = select_n(&labeled_train, &loss, &cfg.ranker, seed)?;
        let map = build_rff(reps.dim, sel.chosen, sel.sigma, rff_seed(seed, sel.chosen))?;
        (Some(map), Some(sel))
    } else {
        (None, None)
    };

    let val_idx = validation_indices(labeled_train.len(), cfg.committee.validation_fraction, ranker_seed(seed));
    let val: Vec<TrainingGroup> = val_idx.iter().map(|&i| labeled_train[i].clone()).collect();
    let val_ids: HashSet<&str> = val_idx.iter().map(|&i| labeled_reps.groups[i].qid.as_str()).collect();
    let mut train = Vec::new();
    for g in &reps.groups {
        if val_ids.contains(g.qid.as_str()) {
            continue;
        }
        if let Some(l) = &g.labels {
            train.push(TrainingGroup::new(g.z.clone(), l.iter().map(|&v| f64::from(v)).collect())?);
        }
    }
    let validation = (!val.is_empty()).then_some(val.as_slice());
    let ranker = train_ranker(&train, validation, &loss, rff, &cfg.ranker, seed)?;
    Ok(RankerFit { ranker, selection })
}

/// NDCG of `ranker` on `test` at the configured cutoffs.
pub fn evaluate_ranker(
    ranker: &Ranker,
    encoder: Option<&AutoencoderModel>,
    test: &Dataset,
    ks: &[usize],
) -> Result<Vec<NdcgAt>> {
    let groups = representations(encoder, test)?.training_groups()?;
    let scores = groups.iter().map(|g| ranker.score(&g.features)).collect::<Result<Vec<_>>>()?;
    evaluate_scores(&label_lists(&groups), &scores, ks)
}

fn run_pipeline(
    cfg: &ExperimentConfig,
    split: &PreparedSplit,
    kind: LossKind,
    seed: u64,
    stages: Stages,
    art: &mut CellArtifacts,
) -> std::result::Result<Vec<NdcgAt>, StageError> {
    let test_ids = &split.record.test;
    let labeled_ids = split.labeled().qids();

    let pseudo = if stages.pseudo {
        art.leakage_checks += 2;
        Some(pseudo_stage(cfg, split, seed).at("pseudo-label")?)
    } else {
        None
    };
    let combined = combined_training_set(split, pseudo.as_ref()).at("combine")?;
    art.leakage_checks += 1;
    art.pseudo = pseudo;

    if stages.pretrain {
        let (model, trace) = pretrain_stage(cfg, &combined, kind, seed).at("pretrain")?;
        art.pretrain_trace = Some(trace);
        art.encoder = Some(model);
    }
    let reps = representations(art.encoder.as_ref(), &combined).at("extract")?;
    assert_disjoint("ranker training", test_ids, &reps.qids()).at("leakage-check")?;
    art.leakage_checks += 1;

    let fit = fit_ranker(cfg, &reps, &labeled_ids, kind, seed, stages.rff).at("ranker")?;
    if let Some(sel) = fit.selection {
        art.chosen_n = Some(sel.chosen);
        art.cv_curve = Some(sel.curve);
    }
    let ndcg = evaluate_ranker(&fit.ranker, art.encoder.as_ref(), &split.test, &cfg.ks).at("evaluate")?;
    art.ranker = Some(fit.ranker);
    Ok(ndcg)
}

/// Runs one `(ratio, loss, seed)` cell with the given stages. Stage
/// failures become a failed row; the error is kept in the row.
pub fn run_cell(
    cfg: &ExperimentConfig,
    data: &Dataset,
    ratio: f64,
    kind: LossKind,
    seed: u64,
    stages: Stages,
) -> (ReportRow, CellArtifacts) {
    let start = Instant::now();
    let mut art = CellArtifacts::default();
    let outcome = prepare_split(
        data,
        cfg.test_fraction,
        cfg.split_seed,
        ratio,
        seed,
        &cfg.source.describe(),
    )
    .at("split")
    .and_then(|split| {
        art.leakage_checks += 1;
        if stages.any() {
            run_pipeline(cfg, &split, kind, seed, stages, &mut art)
        } else {
            run_baseline(cfg, &split, kind, seed, &mut art)
        }
    });
    let (ndcg, status, error) = match outcome {
        Ok(ndcg) => (ndcg, "ok".to_string(), None),
        Err(StageError { stage, error }) => (Vec::new(), format!("failed:{stage}"), Some(error.to_string())),
    };
    let row = ReportRow {
        method: stages.method(),
        ratio,
        loss: kind,
        seed,
        ndcg,
        wall_seconds: start.elapsed().as_secs_f64(),
        status,
        error,
    };
    (row, art)
}

/// Sweep result with per-row artifacts summarized.
#[derive(Debug, Clone, Default)]
pub struct ExperimentOutput {
    pub rows: Vec<ReportRow>,
    /// `(row index, curve)` for rows that ran RFF selection.
    pub cv_curves: Vec<(usize, Vec<CvPoint>)>,
    pub leakage_checks: usize,
}

/// Runs every `(ratio, loss, seed)` cell: the configured stages, plus the
/// MLP baseline when `baseline` is on and the stages are not already all off.
pub fn run_experiment_detailed(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let data = cfg.source.load()?;
    let mut out = ExperimentOutput::default();
    for &ratio in &cfg.ratios {
        for &kind in &cfg.losses {
            for &seed in &cfg.seeds {
                let mut variants = vec![cfg.stages];
                if cfg.baseline && cfg.stages.any() {
                    variants.push(Stages::NONE);
                }
                for stages in variants {
                    let (row, art) = run_cell(cfg, &data, ratio, kind, seed, stages);
                    out.leakage_checks += art.leakage_checks;
                    if let Some(curve) = art.cv_curve {
                        out.cv_curves.push((out.rows.len(), curve));
                    }
                    out.rows.push(row);
                }
            }
        }
    }
    Ok(out)
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ReportRow>> {
    Ok(run_experiment_detailed(cfg)?.rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    /// From a file extension; CSV unless it ends in `.json`.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => Self::Json,
            _ => Self::Csv,
        }
    }
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            _ => Err(Error::invalid(format!("unknown report format {s:?}; expected csv|json"))),
        }
    }
}

fn report_ks(rows: &[ReportRow]) -> Vec<usize> {
    let mut ks: Vec<usize> = rows.iter().flat_map(|r| r.ndcg.iter().map(|n| n.k)).collect();
    ks.sort_unstable();
    ks.dedup();
    if ks.is_empty() {
        ks = vec![4, 10];
    }
    ks
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Columns: method, ratio, loss, seed, ndcg@k…, wall_seconds, status, error.
pub fn render_csv(rows: &[ReportRow]) -> String {
    let ks = report_ks(rows);
    let mut out = String::from("method,ratio,loss,seed");
    for k in &ks {
        out.push_str(&format!(",ndcg@{k}"));
    }
    out.push_str(",wall_seconds,status,error\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}", csv_field(&r.method), r.ratio, r.loss, r.seed));
        for &k in &ks {
            out.push(',');
            if let Some(v) = r.ndcg_at(k) {
                out.push_str(&format_ndcg(v));
            }
        }
        out.push_str(&format!(
            ",{:.3},{},{}\n",
            r.wall_seconds,
            r.status,
            csv_field(r.error.as_deref().unwrap_or(""))
        ));
    }
    out
}

pub fn render_json(rows: &[ReportRow]) -> Result<String> {
    Ok(serde_json::to_string_pretty(rows)?)
}

pub fn parse_json_report(text: &str) -> Result<Vec<ReportRow>> {
    Ok(serde_json::from_str(text)?)
}

pub fn emit_report(rows: &[ReportRow], path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::invalid("refusing to write an empty report"));
    }
    let path = path.as_ref();
    let text = match format {
        ReportFormat::Csv => render_csv(rows),
        ReportFormat::Json => render_json(rows)?,
    };
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_report(path: impl AsRef<Path>) -> Result<Vec<ReportRow>> {
    let path = path.as_ref();
    parse_json_report(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

/// Mean ± std over seeds of one `(method, ratio, loss)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub ratio: f64,
    pub loss: LossKind,
    pub runs: usize,
    pub failed: usize,
    /// `(k, mean ×100, std ×100)`
    pub ndcg: Vec<(usize, f64, f64)>,
}

pub fn summarize(rows: &[ReportRow]) -> Vec<SummaryRow> {
    let ks = report_ks(rows);
    let mut cells: BTreeMap<(String, u64, LossKind), Vec<&ReportRow>> = BTreeMap::new();
    let mut order = Vec::new();
    for r in rows {
        let key = (r.method.clone(), r.ratio.to_bits(), r.loss);
        if !cells.contains_key(&key) {
            order.push(key.clone());
        }
        cells.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let runs = &cells[&key];
            let ok: Vec<&&ReportRow> = runs.iter().filter(|r| r.is_ok()).collect();
            let ndcg = ks
                .iter()
                .map(|&k| {
                    let vals: Vec<f64> = ok.iter().filter_map(|r| r.ndcg_at(k)).collect();
                    let n = vals.len().max(1) as f64;
                    let mean = vals.iter().sum::<f64>() / n;
                    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                    (k, mean, var.sqrt())
                })
                .collect();
            SummaryRow {
                method: key.0,
                ratio: f64::from_bits(key.1),
                loss: key.2,
                runs: runs.len(),
                failed: runs.len() - ok.len(),
                ndcg,
            }
        })
        .collect()
}

/// Table-style summary: one line per cell, `mean±std` per cutoff.
pub fn render_summary_csv(summary: &[SummaryRow]) -> String {
    let ks: Vec<usize> = summary.first().map(|s| s.ndcg.iter().map(|n| n.0).collect()).unwrap_or_default();
    let mut out = String::from("method,ratio,loss,runs,failed");
    for k in &ks {
        out.push_str(&format!(",ndcg@{k},std@{k}"));
    }
    out.push('\n');
    for s in summary {
        out.push_str(&format!("{},{},{},{},{}", csv_field(&s.method), s.ratio, s.loss, s.runs, s.failed));
        for (_, mean, std) in &s.ndcg {
            out.push_str(&format!(",{},{}", format_ndcg(*mean), format_ndcg(*std)));
        }
        out.push('\n');
    }
    out
}

/// Mean NDCG@k of uniformly random orderings of the labeled groups.
pub fn shuffled_baseline(dataset: &Dataset, k: usize, seeds: &[u64]) -> Result<f64> {
    let labels: Vec<Vec<f64>> = dataset.groups().iter().filter_map(|g| g.label_values()).collect();
    if labels.is_empty() {
        return Err(Error::invalid("shuffled baseline needs labeled groups"));
    }
    shuffled_baseline_ndcg(&labels, k, seeds)
}

/// Mean NDCG@k×100 over the ok rows matching `method`, `ratio` and `loss`.
pub fn mean_ndcg_of(rows: &[ReportRow], method: &str, ratio: f64, loss: LossKind, k: usize) -> Option<f64> {
    let vals: Vec<f64> = rows
        .iter()
        .filter(|r| r.method == method && r.ratio == ratio && r.loss == loss && r.is_ok())
        .filter_map(|r| r.ndcg_at(k))
        .collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}
