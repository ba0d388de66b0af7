//! Pointwise MLP scoring networks and the listwise training loop shared by
//! committee members, the supervised baseline and the RFF ranker.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::metrics::RankingEval;
use crate::numerics::nn::Mlp;
use crate::numerics::{Adam, AdamConfig, Graph, ParamSet, Tensor};

/// One query's inputs and target grades.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingGroup {
    pub features: Tensor,
    pub labels: Vec<f64>,
}

impl TrainingGroup {
    pub fn new(features: Tensor, labels: Vec<f64>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::invalid(format!(
                "{} documents vs {} labels",
                features.rows(),
                labels.len()
            )));
        }
        Ok(Self { features, labels })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Hidden layer widths; empty means a linear scorer.
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Queries per minibatch.
    pub batch_queries: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128],
            epochs: 60,
            learning_rate: 1e-3,
            weight_decay: 0.0,
            batch_queries: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpScorer {
    pub mlp: Mlp,
    pub params: ParamSet,
}

impl MlpScorer {
    pub fn new(input_dim: usize, hidden: &[usize], seed: u64) -> Self {
        let mut rng = crate::rng_from_seed(seed);
        let mut params = ParamSet::new();
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let mlp = Mlp::new(&mut params, "scorer", &sizes, &mut rng);
        Self { mlp, params }
    }

    pub fn input_dim(&self) -> usize {
        self.mlp.input_dim(&self.params)
    }

    pub fn score(&self, features: &Tensor) -> Result<Vec<f64>> {
        if features.cols() != self.input_dim() {
            return Err(Error::invalid(format!(
                "scorer expects {} features, got {}",
                self.input_dim(),
                features.cols()
            )));
        }
        Ok(self.mlp.apply(&self.params, features).into_data())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-query training loss after the epoch (epoch 0 = at init).
    pub train_loss: f64,
    pub val_ndcg10: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (validation-selected when a
    /// validation set was given, otherwise the last).
    pub kept_epoch: usize,
}

impl TrainTrace {
    pub fn initial_loss(&self) -> Option<f64> {
        self.epochs.first().map(|e| e.train_loss)
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_loss)
    }
}

/// Mean per-query loss of `scorer` over `groups`.
pub fn mean_loss(scorer: &MlpScorer, groups: &[TrainingGroup], loss: &LossConfig) -> Result<f64> {
    let mut total = 0.0;
    for g in groups {
        total += loss.evaluate(&scorer.score(&g.features)?, &g.labels)?.value;
    }
    Ok(total / groups.len().max(1) as f64)
}

/// Mean NDCG@k of `scorer` over `groups`.
pub fn mean_ndcg(scorer: &MlpScorer, groups: &[TrainingGroup], k: usize) -> Result<f64> {
    let scored = groups
        .iter()
        .map(|g| Ok((g.labels.clone(), scorer.score(&g.features)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(RankingEval::compute(k, scored.iter().map(|(l, s)| (l.as_slice(), s.as_slice())))?.mean)
}

fn stack_rows(groups: &[&TrainingGroup]) -> Result<Tensor> {
    let cols = groups[0].features.cols();
    let rows: usize = groups.iter().map(|g| g.features.rows()).sum();
    let mut data = Vec::with_capacity(rows * cols);
    for g in groups {
        data.extend_from_slice(g.features.data());
    }
    Tensor::matrix(rows, cols, data)
}

/// One optimizer step on a minibatch; returns the mean batch loss.
fn batch_step(
    scorer: &mut MlpScorer,
    adam: &mut Adam,
    batch: &[&TrainingGroup],
    loss: &LossConfig,
) -> Result<f64> {
    let mut graph = Graph::new();
    let vars = scorer.params.bind(&mut graph);
    let x = graph.constant(stack_rows(batch)?);
    let scores = scorer.mlp.forward(&mut graph, &vars, x)?;
    let all = graph.value(scores).data().to_vec();
    let b = batch.len() as f64;
    let mut grad = Vec::with_capacity(all.len());
    let mut value = 0.0;
    let mut offset = 0;
    for g in batch {
        let n = g.labels.len();
        let out = loss.evaluate(&all[offset..offset + n], &g.labels)?;
        value += out.value / b;
        grad.extend(out.grad.iter().map(|v| v / b));
        offset += n;
    }
    let total = graph.external(scores, value, Tensor::column(&grad)?)?;
    let grads = graph.backward(total)?;
    let grads = scorer.params.collect_grads(&grads, &vars);
    adam.step(&mut scorer.params, &grads);
    Ok(value)
}

fn diverged(epoch: usize, err: Error) -> Error {
    match err {
        Error::NonFinite { node } => Error::Diverged {
            stage: "scorer training".into(),
            epoch,
            detail: format!("non-finite value at {node}"),
        },
        other => other,
    }
}

/// Trains `scorer` with minibatches of whole queries. With a validation set
/// the parameters of the epoch with the best validation NDCG@10 are kept.
pub fn train_scorer(
    scorer: &mut MlpScorer,
    train: &[TrainingGroup],
    validation: Option<&[TrainingGroup]>,
    loss: &LossConfig,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainTrace> {
    loss.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if config.batch_queries == 0 {
        return Err(Error::invalid("batch_queries must be positive"));
    }
    let validation = validation.filter(|v| !v.is_empty());
    let mut rng = crate::rng_from_seed(seed);
    let mut adam = Adam::new(
        AdamConfig {
            weight_decay: config.weight_decay,
            ..AdamConfig::with_lr(config.learning_rate)
        },
        &scorer.params,
    );
    let record = |scorer: &MlpScorer, epoch: usize| -> Result<EpochRecord> {
        let train_loss = mean_loss(scorer, train, loss)?;
        if !train_loss.is_finite() {
            return Err(Error::Diverged {
                stage: "scorer training".into(),
                epoch,
                detail: "non-finite training loss".into(),
            });
        }
        let val_ndcg10 = validation.map(|v| mean_ndcg(scorer, v, 10)).transpose()?;
        Ok(EpochRecord {
            epoch,
            train_loss,
            val_ndcg10,
        })
    };

    let mut trace = TrainTrace::default();
    trace.epochs.push(record(scorer, 0)?);
    let mut best = (trace.epochs[0].val_ndcg10, scorer.params.clone(), 0usize);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_queries) {
            let batch: Vec<&TrainingGroup> = chunk.iter().map(|&i| &train[i]).collect();
            batch_step(scorer, &mut adam, &batch, loss).map_err(|e| diverged(epoch, e))?;
        }
        let rec = record(scorer, epoch)?;
        if let (Some(v), Some(b)) = (rec.val_ndcg10, best.0) {
            if v > b {
                best = (Some(v), scorer.params.clone(), epoch);
            }
        }
        trace.epochs.push(rec);
    }
    if validation.is_some() {
        scorer.params = best.1;
        trace.kept_epoch = best.2;
    } else {
        trace.kept_epoch = config.epochs;
    }
    Ok(trace)
}
