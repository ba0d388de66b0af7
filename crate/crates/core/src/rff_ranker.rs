//! Random Fourier feature expansion `h(z) = √(2/N)·cos(Wz + b)` and the
//! ranker trained on top of it, with N chosen by query-level cross-validation.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::metrics::RankingEval;
use crate::numerics::{Graph, ParamSet, Tensor, Var};
use crate::pretrain::RepresentationSet;
use crate::scorer::{mean_ndcg, train_scorer, MlpScorer, TrainConfig, TrainTrace, TrainingGroup};

/// Frozen random Fourier feature map for the Gaussian kernel
/// `exp(−‖x − y‖² / 2σ²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RffMap {
    pub input_dim: usize,
    pub output_dim: usize,
    pub sigma: f64,
    pub seed: u64,
    /// `N × n`, entries `Normal(0, σ⁻²)`.
    pub w: Tensor,
    /// Length `N`, entries `Uniform[0, 2π)`.
    pub b: Vec<f64>,
}

pub fn build_rff(input_dim: usize, output_dim: usize, sigma: f64, seed: u64) -> Result<RffMap> {
    if output_dim == 0 || input_dim == 0 {
        return Err(Error::invalid("RFF dimensions must be positive"));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("RFF bandwidth must be positive, got {sigma}")));
    }
    let mut rng = crate::rng_from_seed(seed);
    let normal = Normal::new(0.0, 1.0 / sigma).expect("finite positive std");
    let w: Vec<f64> = (0..output_dim * input_dim).map(|_| normal.sample(&mut rng)).collect();
    let b = (0..output_dim).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
    Ok(RffMap {
        input_dim,
        output_dim,
        sigma,
        seed,
        w: Tensor::matrix(output_dim, input_dim, w)?,
        b,
    })
}

impl RffMap {
    fn scale(&self) -> f64 {
        (2.0 / self.output_dim as f64).sqrt()
    }

    /// `|W| × n → |W| × N`.
    pub fn apply(&self, z: &Tensor) -> Result<Tensor> {
        if z.cols() != self.input_dim {
            return Err(Error::invalid(format!(
                "RFF map expects {}-dim inputs, got {}",
                self.input_dim,
                z.cols()
            )));
        }
        let mut h = z.matmul_nt(&self.w);
        let scale = self.scale();
        let n = self.output_dim;
        for row in h.data_mut().chunks_exact_mut(n) {
            for (v, b) in row.iter_mut().zip(&self.b) {
                *v = scale * (*v + b).cos();
            }
        }
        Ok(h)
    }

    /// Same map as [`RffMap::apply`] on the tape, with `W` and `b` as
    /// constants.
    pub fn forward(&self, graph: &mut Graph, z: Var) -> Result<Var> {
        let w = graph.constant(self.w.clone());
        let b = graph.constant(Tensor::row(&self.b)?);
        let pre = graph.matmul_nt(z, w)?;
        let pre = graph.add_row(pre, b)?;
        let c = graph.cos(pre)?;
        graph.scale(c, self.scale())
    }
}

/// Median pairwise Euclidean distance among the rows of `groups`, using at
/// most `max_points` rows sampled with `seed`.
pub fn median_heuristic<'a>(
    groups: impl IntoIterator<Item = &'a Tensor>,
    max_points: usize,
    seed: u64,
) -> Result<f64> {
    let mut rows: Vec<&[f64]> = groups
        .into_iter()
        .flat_map(|t| (0..t.rows()).map(move |r| t.row_slice(r)))
        .collect();
    if rows.len() < 2 {
        return Err(Error::invalid("median heuristic needs at least two points"));
    }
    if rows.len() > max_points.max(2) {
        rows.shuffle(&mut crate::rng_from_seed(seed));
        rows.truncate(max_points.max(2));
    }
    let mut d = Vec::with_capacity(rows.len() * (rows.len() - 1) / 2);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            let sq: f64 = rows[i].iter().zip(rows[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d.push(sq.sqrt());
        }
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    let median = if d.len() % 2 == 0 {
        0.5 * (d[mid - 1] + d[mid])
    } else {
        d[mid]
    };
    if median > 0.0 {
        Ok(median)
    } else {
        Err(Error::invalid("all sampled representations coincide; bandwidth undefined"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankerConfig {
    /// Hidden widths of the score network; empty = linear head on `h`.
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_queries: usize,
    /// Candidate output dimensions for cross-validation.
    pub candidates: Vec<usize>,
    pub folds: usize,
    /// Kernel bandwidth; `None` = median heuristic.
    pub sigma: Option<f64>,
    /// Multiplies the median-heuristic bandwidth.
    pub sigma_scale: f64,
    /// `false` trains the score network on `z` directly.
    pub use_rff: bool,
}

impl Default for RankerConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256],
            epochs: 60,
            learning_rate: 1e-3,
            weight_decay: 0.0,
            batch_queries: 4,
            candidates: (6..=14).map(|p| 1usize << p).collect(),
            folds: 3,
            sigma: None,
            sigma_scale: 4.0,
            use_rff: true,
        }
    }
}

impl RankerConfig {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            hidden: self.hidden.clone(),
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            batch_queries: self.batch_queries,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranker {
    pub rff: Option<RffMap>,
    pub scorer: MlpScorer,
    pub loss: LossConfig,
    pub trace: TrainTrace,
}

impl Ranker {
    pub fn input_dim(&self) -> usize {
        self.rff
            .as_ref()
            .map_or_else(|| self.scorer.input_dim(), |r| r.input_dim)
    }

    fn lift(&self, z: &Tensor) -> Result<Tensor> {
        match &self.rff {
            Some(r) => r.apply(z),
            None => Ok(z.clone()),
        }
    }

    pub fn score(&self, z: &Tensor) -> Result<Vec<f64>> {
        if z.cols() != self.input_dim() {
            return Err(Error::invalid(format!(
                "ranker expects {}-dim representations, got {}",
                self.input_dim(),
                z.cols()
            )));
        }
        self.scorer.score(&self.lift(z)?)
    }

    pub fn save(&self, path: impl AsRef<Path>, meta: serde_json::Value) -> Result<()> {
        let mut params = self.scorer.params.clone();
        if let Some(r) = &self.rff {
            params.insert("rff.w", r.w.clone());
            params.insert("rff.b", Tensor::row(&r.b)?);
        }
        let header = serde_json::json!({
            "rff": self.rff.as_ref().map(|r| serde_json::json!({
                "input_dim": r.input_dim, "output_dim": r.output_dim, "sigma": r.sigma, "seed": r.seed,
            })),
            "mlp": self.scorer.mlp,
            "loss": self.loss,
            "trace": self.trace,
            "run": meta,
        });
        checkpoint::write(path, "ranker", header, &params)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, serde_json::Value)> {
        let (header, params) = checkpoint::read(path)?;
        if header.kind != "ranker" {
            return Err(Error::Checkpoint(format!("expected a ranker checkpoint, found {:?}", header.kind)));
        }
        let meta = header.meta;
        let get = |k: &str| meta.get(k).cloned().unwrap_or(serde_json::Value::Null);
        let rff = match get("rff") {
            serde_json::Value::Null => None,
            r => {
                let dim = |k: &str| -> Result<u64> {
                    r.get(k)
                        .and_then(|v| v.as_u64())
                        .ok_or_else(|| Error::Checkpoint(format!("rff header lacks {k}")))
                };
                let sigma = r
                    .get("sigma")
                    .and_then(|v| v.as_f64())
                    .ok_or_else(|| Error::Checkpoint("rff header lacks sigma".into()))?;
                let w = params
                    .by_name("rff.w")
                    .ok_or_else(|| Error::Checkpoint("missing rff.w".into()))?
                    .clone();
                let b = params
                    .by_name("rff.b")
                    .ok_or_else(|| Error::Checkpoint("missing rff.b".into()))?
                    .data()
                    .to_vec();
                Some(RffMap {
                    input_dim: dim("input_dim")? as usize,
                    output_dim: dim("output_dim")? as usize,
                    sigma,
                    seed: dim("seed")?,
                    w,
                    b,
                })
            }
        };
        let mut scorer_params = ParamSet::new();
        for (name, t) in params.names().iter().zip(params.tensors()) {
            if !name.starts_with("rff.") {
                scorer_params.insert(name.clone(), t.clone());
            }
        }
        let ranker = Self {
            rff,
            scorer: MlpScorer {
                mlp: serde_json::from_value(get("mlp"))?,
                params: scorer_params,
            },
            loss: serde_json::from_value(get("loss"))?,
            trace: serde_json::from_value(get("trace"))?,
        };
        Ok((ranker, get("run")))
    }
}

fn lift_groups(rff: Option<&RffMap>, groups: &[TrainingGroup]) -> Result<Vec<TrainingGroup>> {
    groups
        .iter()
        .map(|g| {
            let features = match rff {
                Some(r) => r.apply(&g.features)?,
                None => g.features.clone(),
            };
            TrainingGroup::new(features, g.labels.clone())
        })
        .collect()
}

/// Trains a score network on `h(z)` (or `z` when `rff` is `None`). The map
/// stays frozen. With `validation`, the best-NDCG@10 epoch is kept.
pub fn train_ranker(
    train: &[TrainingGroup],
    validation: Option<&[TrainingGroup]>,
    loss: &LossConfig,
    rff: Option<RffMap>,
    config: &RankerConfig,
    seed: u64,
) -> Result<Ranker> {
    let Some(first) = train.first() else {
        return Err(Error::invalid("ranker training set is empty"));
    };
    if let Some(r) = &rff {
        if r.input_dim != first.features.cols() {
            return Err(Error::invalid(format!(
                "RFF map expects {}-dim inputs, got {}",
                r.input_dim,
                first.features.cols()
            )));
        }
    }
    let lifted = lift_groups(rff.as_ref(), train)?;
    let lifted_val = validation.map(|v| lift_groups(rff.as_ref(), v)).transpose()?;
    let input_dim = lifted[0].features.cols();
    let mut scorer = MlpScorer::new(input_dim, &config.hidden, crate::derive_seed(seed, 1));
    let trace = train_scorer(
        &mut scorer,
        &lifted,
        lifted_val.as_deref(),
        loss,
        &config.train_config(),
        crate::derive_seed(seed, 2),
    )
    .map_err(|e| match e {
        Error::Diverged { epoch, detail, .. } => Error::Diverged {
            stage: "ranker training".into(),
            epoch,
            detail,
        },
        other => other,
    })?;
    Ok(Ranker {
        rff,
        scorer,
        loss: *loss,
        trace,
    })
}

/// Per-query score vectors, in group order.
pub fn predict(ranker: &Ranker, reps: &RepresentationSet) -> Result<Vec<Vec<f64>>> {
    reps.groups.iter().map(|g| ranker.score(&g.z)).collect()
}

/// Mean NDCG@k of `ranker` on graded groups.
pub fn evaluate(ranker: &Ranker, groups: &[TrainingGroup], k: usize) -> Result<f64> {
    let scored = groups
        .iter()
        .map(|g| Ok((g.labels.clone(), ranker.score(&g.features)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(RankingEval::compute(k, scored.iter().map(|(l, s)| (l.as_slice(), s.as_slice())))?.mean)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvPoint {
    pub n: usize,
    pub mean_ndcg10: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NSelection {
    pub chosen: usize,
    pub sigma: f64,
    pub curve: Vec<CvPoint>,
}

/// Seed of the RFF map of width `n` within a run.
pub fn rff_seed(seed: u64, n: usize) -> u64 {
    crate::derive_seed(crate::derive_seed(seed, 0xFF), n as u64)
}

/// Bandwidth from the config, else the median heuristic on `groups`.
pub fn resolve_sigma(config: &RankerConfig, groups: &[TrainingGroup], seed: u64) -> Result<f64> {
    match config.sigma {
        Some(s) => Ok(s),
        None => Ok(config.sigma_scale
            * median_heuristic(groups.iter().map(|g| &g.features), 500, crate::derive_seed(seed, 0x5D))?),
    }
}

/// Query-level k-fold cross-validation over candidate RFF widths. Picks the
/// best mean validation NDCG@10, ties going to the smaller width.
pub fn select_n(
    labeled: &[TrainingGroup],
    loss: &LossConfig,
    config: &RankerConfig,
    seed: u64,
) -> Result<NSelection> {
    if config.folds < 2 {
        return Err(Error::invalid("cross-validation needs at least two folds"));
    }
    if config.candidates.is_empty() || config.candidates.contains(&0) {
        return Err(Error::invalid("candidate widths must be a non-empty list of positive values"));
    }
    if labeled.len() < config.folds {
        return Err(Error::invalid(format!(
            "{} labeled queries cannot fill {} folds",
            labeled.len(),
            config.folds
        )));
    }
    let sigma = resolve_sigma(config, labeled, seed)?;
    let dim = labeled[0].features.cols();
    let mut order: Vec<usize> = (0..labeled.len()).collect();
    order.shuffle(&mut crate::rng_from_seed(crate::derive_seed(seed, 0xF0)));
    let fold_of: Vec<usize> = {
        let mut f = vec![0; labeled.len()];
        for (pos, &q) in order.iter().enumerate() {
            f[q] = pos % config.folds;
        }
        f
    };

    let mut candidates = config.candidates.clone();
    candidates.sort_unstable();
    candidates.dedup();
    let mut curve = Vec::with_capacity(candidates.len());
    for &n in &candidates {
        let rff = build_rff(dim, n, sigma, rff_seed(seed, n))?;
        let mut scores = Vec::with_capacity(config.folds);
        for fold in 0..config.folds {
            let (train, val): (Vec<_>, Vec<_>) = labeled
                .iter()
                .zip(&fold_of)
                .partition(|(_, &f)| f != fold);
            let train: Vec<TrainingGroup> = train.into_iter().map(|(g, _)| g.clone()).collect();
            let val: Vec<TrainingGroup> = val.into_iter().map(|(g, _)| g.clone()).collect();
            let ranker = train_ranker(
                &train,
                None,
                loss,
                Some(rff.clone()),
                config,
                crate::derive_seed(seed, fold as u64),
            )?;
            let lifted = lift_groups(ranker.rff.as_ref(), &val)?;
            scores.push(mean_ndcg(&ranker.scorer, &lifted, 10)?);
        }
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / scores.len() as f64;
        curve.push(CvPoint {
            n,
            mean_ndcg10: mean,
            std: var.sqrt(),
        });
    }
    let mut best = &curve[0];
    for p in &curve[1..] {
        if p.mean_ndcg10 > best.mean_ndcg10 {
            best = p;
        }
    }
    Ok(NSelection {
        chosen: best.n,
        sigma,
        curve,
    })
}

pub fn cv_curve_csv(curve: &[CvPoint]) -> String {
    let mut out = String::from("N,mean_ndcg@10,std\n");
    for p in curve {
        out.push_str(&format!("{},{},{}\n", p.n, p.mean_ndcg10, p.std));
    }
    out
}

pub fn write_cv_curve(path: impl AsRef<Path>, curve: &[CvPoint]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, cv_curve_csv(curve)).map_err(|e| Error::io(path, e))
}

/// `max |h(x)·h(y) − exp(−‖x − y‖²/2σ²)|` over the given pairs.
pub fn kernel_max_error(map: &RffMap, pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<f64> {
    let mut worst = 0.0f64;
    for (x, y) in pairs {
        let hx = map.apply(&Tensor::row(x)?)?;
        let hy = map.apply(&Tensor::row(y)?)?;
        let approx: f64 = hx.data().iter().zip(hy.data()).map(|(a, b)| a * b).sum();
        let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        let exact = (-sq / (2.0 * map.sigma * map.sigma)).exp();
        worst = worst.max((approx - exact).abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LossKind;
    use crate::numerics::finite_difference_check;

    #[test]
    fn deterministic_and_phase_range() {
        let a = build_rff(32, 4096, 1.0, 0).unwrap();
        assert_eq!(a, build_rff(32, 4096, 1.0, 0).unwrap());
        assert!(a.b.iter().all(|&b| (0.0..2.0 * PI).contains(&b)));
    }

    #[test]
    fn frequency_variance() {
        let sigma = 2.0;
        let m = build_rff(32, 4096, sigma, 1).unwrap();
        let d = m.w.data();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d.len() as f64;
        let target = 1.0 / (sigma * sigma);
        assert!((var - target).abs() <= 0.05 * target, "{var}");
    }

    #[test]
    fn single_output_bound_and_dims() {
        let m = build_rff(3, 1, 0.5, 4).unwrap();
        let h = m.apply(&Tensor::row(&[1.0, -2.0, 0.3]).unwrap()).unwrap();
        assert_eq!(h.len(), 1);
        assert!(h.data()[0].abs() <= 2f64.sqrt());
        assert!(m.apply(&Tensor::row(&[1.0]).unwrap()).is_err());
        assert!(build_rff(3, 0, 1.0, 0).is_err());
        assert!(build_rff(3, 4, 0.0, 0).is_err());
    }

    #[test]
    fn kernel_diagonal() {
        let m = build_rff(8, 4096, 1.0, 2).unwrap();
        let mut rng = crate::rng_from_seed(3);
        for _ in 0..100 {
            let z = Tensor::randn(1, 8, 1.0, &mut rng);
            let h = m.apply(&z).unwrap();
            let dot: f64 = h.data().iter().map(|v| v * v).sum();
            assert!((dot - 1.0).abs() <= 0.05, "{dot}");
        }
    }

    #[test]
    fn graph_forward_matches_apply() {
        let m = build_rff(4, 16, 0.7, 5).unwrap();
        let z = Tensor::randn(3, 4, 1.0, &mut crate::rng_from_seed(6));
        let mut g = Graph::new();
        let v = g.constant(z.clone());
        let h = m.forward(&mut g, v).unwrap();
        let direct = m.apply(&z).unwrap();
        for (a, b) in g.value(h).data().iter().zip(direct.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn composite_gradient() {
        let rff = build_rff(3, 12, 1.0, 7).unwrap();
        let mut rng = crate::rng_from_seed(8);
        let labels = [1.0, 0.0, 3.0, 2.0];
        for kind in LossKind::ALL {
            let mut params = ParamSet::new();
            params.insert("z", Tensor::randn(4, 3, 1.0, &mut rng));
            let mlp = crate::numerics::nn::Mlp::new(&mut params, "mlp", &[12, 5, 1], &mut rng);
            let loss = LossConfig::new(kind);
            let worst = finite_difference_check(&params, 1e-6, |g, v| {
                let h = rff.forward(g, v[0])?;
                let s = mlp.forward(g, v, h)?;
                let out = loss.evaluate(g.value(s).data(), &labels)?;
                g.external(s, out.value, Tensor::column(&out.grad)?)
            })
            .unwrap();
            assert!(worst <= 1e-4, "{kind}: {worst}");
        }
    }

    #[test]
    fn median_heuristic_simple() {
        let t = Tensor::from_rows(&[vec![0.0], vec![1.0], vec![3.0]]).unwrap();
        // distances 1, 3, 2
        assert_eq!(median_heuristic([&t], 100, 0).unwrap(), 2.0);
        let single = Tensor::row(&[1.0]).unwrap();
        assert!(median_heuristic([&single], 100, 0).is_err());
    }

    fn toy(seed: u64, count: usize) -> Vec<TrainingGroup> {
        let mut rng = crate::rng_from_seed(seed);
        (0..count)
            .map(|_| {
                let z = Tensor::randn(8, 4, 1.0, &mut rng);
                let labels = (0..8)
                    .map(|r| ((z.get(r, 0) + 0.5 * z.get(r, 1)).clamp(-1.99, 1.99) + 2.0).floor())
                    .collect();
                TrainingGroup::new(z, labels).unwrap()
            })
            .collect()
    }

    fn small_config() -> RankerConfig {
        RankerConfig {
            hidden: vec![16],
            epochs: 8,
            learning_rate: 5e-3,
            candidates: vec![32, 64],
            ..RankerConfig::default()
        }
    }

    #[test]
    fn training_keeps_map_frozen_and_zero_epochs_is_identity() {
        let groups = toy(1, 10);
        let rff = build_rff(4, 32, 1.0, 0).unwrap();
        let cfg = small_config();
        let loss = LossConfig::new(LossKind::ListNet);
        let r = train_ranker(&groups, None, &loss, Some(rff.clone()), &cfg, 0).unwrap();
        assert_eq!(r.rff.as_ref().unwrap(), &rff);
        assert!(r.trace.final_loss().unwrap() < r.trace.initial_loss().unwrap());

        let zero = RankerConfig { epochs: 0, ..cfg };
        let r0 = train_ranker(&groups, None, &loss, Some(rff), &zero, 0).unwrap();
        let init = MlpScorer::new(32, &zero.hidden, crate::derive_seed(0, 1));
        assert_eq!(r0.scorer, init);
    }

    #[test]
    fn selection_contract() {
        let groups = toy(2, 9);
        let loss = LossConfig::new(LossKind::RankNet);
        let cfg = small_config();
        let a = select_n(&groups, &loss, &cfg, 7).unwrap();
        assert_eq!(a.curve.len(), 2);
        assert!(a.curve.iter().all(|p| (0.0..=1.0).contains(&p.mean_ndcg10)));
        assert_eq!(a, select_n(&groups, &loss, &cfg, 7).unwrap());
        let one = RankerConfig {
            candidates: vec![48],
            ..cfg.clone()
        };
        assert_eq!(select_n(&groups, &loss, &one, 7).unwrap().chosen, 48);
        let folds = RankerConfig { folds: 10, ..cfg };
        assert!(select_n(&groups, &loss, &folds, 7).is_err());
        assert!(cv_curve_csv(&a.curve).starts_with("N,mean_ndcg@10,std\n"));
    }

    #[test]
    fn checkpoint_round_trip() {
        let groups = toy(3, 4);
        let cfg = RankerConfig {
            epochs: 1,
            ..small_config()
        };
        let rff = build_rff(4, 16, 1.0, 0).unwrap();
        let r = train_ranker(&groups, None, &LossConfig::new(LossKind::Rmse), Some(rff), &cfg, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.ckpt");
        r.save(&path, serde_json::json!({"seed": 0})).unwrap();
        let (back, meta) = Ranker::load(&path).unwrap();
        assert_eq!(back, r);
        assert_eq!(meta["seed"], 0);
    }
}
