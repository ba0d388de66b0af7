//! Denoising self-attentive autoencoder pre-trained with a joint
//! ranking + reconstruction objective `α·L_D + β·L_G`.
//!
//! Each query group is one attention sequence (documents are tokens, no
//! positional encoding), so representations are permutation-equivariant.
//! Feature-axis attention, where each feature of a single document is a
//! token, is available through [`AttentionAxis::Features`].

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::dataset::{Dataset, Provenance, QueryGroup};
use crate::error::{Error, Result};
use crate::losses::{LossConfig, LossKind};
use crate::numerics::nn::{EncoderBlock, Mlp};
use crate::numerics::{Adam, AdamConfig, Graph, Linear, ParamSet, Tensor, Var};
use crate::scorer::TrainingGroup;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionAxis {
    Documents,
    Features,
}

impl std::str::FromStr for AttentionAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "documents" | "docs" => Ok(Self::Documents),
            "features" => Ok(Self::Features),
            _ => Err(Error::invalid(format!(
                "unknown attention axis {s:?}; expected documents|features"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub blocks: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    /// Representation width `n`.
    pub repr_dim: usize,
    /// Masking-noise rate.
    pub corruption: f64,
    pub axis: AttentionAxis,
    /// Hidden width of the `n → m` decoder MLP.
    pub decoder_hidden: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            blocks: 2,
            heads: 4,
            d_model: 64,
            d_ff: 128,
            repr_dim: 32,
            corruption: 0.0,
            axis: AttentionAxis::Documents,
            decoder_hidden: 128,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 {
            return Err(Error::invalid("encoder needs at least one block"));
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(Error::invalid(format!(
                "d_model {} must be divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if self.repr_dim == 0 || self.d_ff == 0 || self.decoder_hidden == 0 {
            return Err(Error::invalid("encoder widths must be positive"));
        }
        if !(0.0..1.0).contains(&self.corruption) {
            return Err(Error::invalid(format!(
                "corruption rate must lie in [0, 1), got {}",
                self.corruption
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub encoder: EncoderConfig,
    pub loss: LossConfig,
    pub alpha: f64,
    pub beta: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_queries: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            loss: LossConfig::new(LossKind::NeuralNdcg),
            alpha: 0.5,
            beta: 0.5,
            epochs: 50,
            learning_rate: 1e-3,
            batch_queries: 4,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.loss.validate()?;
        for (name, w) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1], got {w}")));
            }
        }
        if self.batch_queries == 0 {
            return Err(Error::invalid("batch_queries must be positive"));
        }
        Ok(())
    }
}

/// How raw features become `d_model`-wide tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InputProjection {
    /// One token per document: affine `m → d_model`.
    Documents(Linear),
    /// One token per feature: `x_f · value + embedding_f`.
    Features { value: usize, embedding: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderModel {
    pub config: EncoderConfig,
    pub num_features: usize,
    pub alpha: f64,
    pub beta: f64,
    pub input_projection: InputProjection,
    pub blocks: Vec<EncoderBlock>,
    pub repr_projection: Linear,
    pub decoder: Mlp,
    pub head: Linear,
    pub params: ParamSet,
}

/// Graph nodes of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    pub z: Var,
    pub reconstruction: Option<Var>,
    pub scores: Option<Var>,
}

impl AutoencoderModel {
    pub fn new(config: EncoderConfig, num_features: usize, alpha: f64, beta: f64, seed: u64) -> Result<Self> {
        config.validate()?;
        if num_features == 0 {
            return Err(Error::invalid("autoencoder needs at least one feature"));
        }
        let mut rng = crate::rng_from_seed(seed);
        let mut params = ParamSet::new();
        let d = config.d_model;
        let input_projection = match config.axis {
            AttentionAxis::Documents => {
                InputProjection::Documents(params.insert_linear("input", num_features, d, true, &mut rng))
            }
            AttentionAxis::Features => {
                let value = params.insert("input.value", Tensor::randn(1, d, 1.0, &mut rng));
                let embedding = params.insert(
                    "input.embedding",
                    Tensor::randn(num_features, d, 1.0 / (d as f64).sqrt(), &mut rng),
                );
                InputProjection::Features { value, embedding }
            }
        };
        let blocks = (0..config.blocks)
            .map(|b| EncoderBlock::new(&mut params, &format!("block{b}"), d, config.heads, config.d_ff, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let repr_projection = params.insert_linear("repr", d, config.repr_dim, true, &mut rng);
        let decoder = Mlp::new(
            &mut params,
            "decoder",
            &[config.repr_dim, config.decoder_hidden, num_features],
            &mut rng,
        );
        let head = params.insert_linear("head", config.repr_dim, 1, true, &mut rng);
        let model = Self {
            config,
            num_features,
            alpha,
            beta,
            input_projection,
            blocks,
            repr_projection,
            decoder,
            head,
            params,
        };
        model.check_weights()?;
        Ok(model)
    }

    fn check_weights(&self) -> Result<()> {
        for (name, w) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1], got {w}")));
            }
        }
        Ok(())
    }

    pub fn repr_dim(&self) -> usize {
        self.config.repr_dim
    }

    fn check_input(&self, features: &Tensor) -> Result<()> {
        if features.cols() != self.num_features {
            return Err(Error::invalid(format!(
                "encoder expects {} features, got {}",
                self.num_features,
                features.cols()
            )));
        }
        if features.rows() == 0 {
            return Err(Error::invalid("cannot encode an empty group"));
        }
        Ok(())
    }

    fn tokens(&self, graph: &mut Graph, vars: &[Var], x: Var) -> Result<Var> {
        let mut h = x;
        for block in &self.blocks {
            h = block.forward(graph, vars, h)?;
        }
        Ok(h)
    }

    /// `|W| × m` features → `|W| × n` representations.
    pub fn encode_var(&self, graph: &mut Graph, vars: &[Var], features: &Tensor) -> Result<Var> {
        self.check_input(features)?;
        let pooled = match &self.input_projection {
            InputProjection::Documents(linear) => {
                let x = graph.constant(features.clone());
                let h = linear.forward(graph, vars, x)?;
                self.tokens(graph, vars, h)?
            }
            InputProjection::Features { value, embedding } => {
                let mut rows = Vec::with_capacity(features.rows());
                for r in 0..features.rows() {
                    let col = graph.constant(Tensor::column(features.row_slice(r))?);
                    let t = graph.matmul(col, vars[*value])?;
                    let t = graph.add(t, vars[*embedding])?;
                    let t = self.tokens(graph, vars, t)?;
                    rows.push(graph.mean_rows(t)?);
                }
                graph.concat_rows(&rows)?
            }
        };
        self.repr_projection.forward(graph, vars, pooled)
    }

    pub fn decode_var(&self, graph: &mut Graph, vars: &[Var], z: Var) -> Result<Var> {
        self.decoder.forward(graph, vars, z)
    }

    pub fn head_var(&self, graph: &mut Graph, vars: &[Var], z: Var) -> Result<Var> {
        self.head.forward(graph, vars, z)
    }

    /// Encoder, decoder (when `β > 0`) and head (when `α > 0`) on one group.
    pub fn forward(&self, graph: &mut Graph, vars: &[Var], features: &Tensor) -> Result<ForwardVars> {
        let z = self.encode_var(graph, vars, features)?;
        let reconstruction = if self.beta > 0.0 {
            Some(self.decode_var(graph, vars, z)?)
        } else {
            None
        };
        let scores = if self.alpha > 0.0 {
            Some(self.head_var(graph, vars, z)?)
        } else {
            None
        };
        Ok(ForwardVars {
            z,
            reconstruction,
            scores,
        })
    }

    fn eval<F>(&self, f: F) -> Result<Tensor>
    where
        F: FnOnce(&mut Graph, &[Var]) -> Result<Var>,
    {
        let mut graph = Graph::new();
        let vars = self.params.bind(&mut graph);
        let out = f(&mut graph, &vars)?;
        Ok(graph.value(out).clone())
    }

    pub fn encode(&self, features: &Tensor) -> Result<Tensor> {
        self.eval(|g, v| self.encode_var(g, v, features))
    }

    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        self.check_repr(z)?;
        Ok(self.decoder.apply(&self.params, z))
    }

    pub fn head_scores(&self, z: &Tensor) -> Result<Vec<f64>> {
        self.check_repr(z)?;
        Ok(self.head.apply(&self.params, z).into_data())
    }

    fn check_repr(&self, z: &Tensor) -> Result<()> {
        if z.cols() != self.config.repr_dim {
            return Err(Error::invalid(format!(
                "expected {}-dim representations, got {}",
                self.config.repr_dim,
                z.cols()
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>, meta: serde_json::Value) -> Result<()> {
        let header = serde_json::json!({
            "encoder": self.config,
            "num_features": self.num_features,
            "alpha": self.alpha,
            "beta": self.beta,
            "run": meta,
        });
        checkpoint::write(path, "autoencoder", header, &self.params)
    }

    /// Loads a checkpoint written by [`AutoencoderModel::save`]; returns the
    /// model and the caller's `meta` value.
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, serde_json::Value)> {
        let (header, params) = checkpoint::read(path)?;
        if header.kind != "autoencoder" {
            return Err(Error::Checkpoint(format!(
                "expected an autoencoder checkpoint, found {:?}",
                header.kind
            )));
        }
        let meta = header.meta;
        let field = |k: &str| {
            meta.get(k)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("header lacks {k}")))
        };
        let config: EncoderConfig = serde_json::from_value(field("encoder")?)?;
        let num_features: usize = serde_json::from_value(field("num_features")?)?;
        let alpha: f64 = serde_json::from_value(field("alpha")?)?;
        let beta: f64 = serde_json::from_value(field("beta")?)?;
        let mut model = Self::new(config, num_features, alpha, beta, 0)?;
        checkpoint::restore_into(&mut model.params, &params)?;
        Ok((model, meta.get("run").cloned().unwrap_or(serde_json::Value::Null)))
    }
}

/// Masking noise: every entry independently zeroed with probability `rate`.
pub fn corrupt<R: rand::Rng + ?Sized>(features: &Tensor, rate: f64, rng: &mut R) -> Tensor {
    if rate <= 0.0 {
        return features.clone();
    }
    let mut out = features.clone();
    for v in out.data_mut() {
        if rng.gen::<f64>() < rate {
            *v = 0.0;
        }
    }
    out
}

/// Mean over queries of the mean over documents of `‖x − x′‖²`.
pub fn generative_loss(clean: &[Tensor], reconstructed: &[Tensor]) -> Result<f64> {
    if clean.len() != reconstructed.len() || clean.is_empty() {
        return Err(Error::invalid(format!(
            "{} clean groups vs {} reconstructions",
            clean.len(),
            reconstructed.len()
        )));
    }
    let mut total = 0.0;
    for (x, r) in clean.iter().zip(reconstructed) {
        if x.shape() != r.shape() {
            return Err(Error::invalid(format!("shape {:?} vs {:?}", x.shape(), r.shape())));
        }
        let sq: f64 = x.data().iter().zip(r.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        total += sq / x.rows() as f64;
    }
    Ok(total / clean.len() as f64)
}

/// Adds one group's weighted loss terms to the graph and returns the node
/// of `α·ℓ_D + β·ℓ_G`, each divided by `batch`.
pub fn group_objective(
    model: &AutoencoderModel,
    graph: &mut Graph,
    vars: &[Var],
    clean: &Tensor,
    corrupted: &Tensor,
    labels: Option<&[f64]>,
    loss: &LossConfig,
    batch: usize,
) -> Result<Var> {
    let fwd = model.forward(graph, vars, corrupted)?;
    let b = batch as f64;
    let mut terms = Vec::with_capacity(2);
    if let Some(scores) = fwd.scores {
        let labels = labels.ok_or_else(|| Error::invalid("ranking loss needs graded groups"))?;
        let out = loss.evaluate(graph.value(scores).data(), labels)?;
        let d = graph.external(scores, out.value, Tensor::column(&out.grad)?)?;
        terms.push(graph.scale(d, model.alpha / b)?);
    }
    if let Some(recon) = fwd.reconstruction {
        let target = graph.constant(clean.clone());
        let diff = graph.sub(recon, target)?;
        let sq = graph.square(diff)?;
        let total = graph.sum(sq)?;
        terms.push(graph.scale(total, model.beta / (b * clean.rows() as f64))?);
    }
    match terms.as_slice() {
        [] => Err(Error::invalid("alpha and beta are both zero; nothing to optimize")),
        [t] => Ok(*t),
        [a, c] => graph.add(*a, *c),
        _ => unreachable!(),
    }
}

/// Seed of the corruption mask for `group` in `epoch`.
pub fn corruption_seed(seed: u64, epoch: usize, group: usize) -> u64 {
    crate::derive_seed(crate::derive_seed(seed, 0xC0), ((epoch as u64) << 32) | group as u64)
}

/// Seed of the minibatch shuffling stream.
pub fn order_seed(seed: u64) -> u64 {
    crate::derive_seed(seed, 0x0D)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainEpoch {
    pub epoch: usize,
    /// Mean `ℓ_G` on clean inputs; `None` when `β = 0`.
    pub generative: Option<f64>,
    /// Mean `ℓ_D` on clean inputs; `None` when `α = 0`.
    pub discriminative: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PretrainTrace {
    pub epochs: Vec<PretrainEpoch>,
}

impl PretrainTrace {
    pub fn first(&self) -> Option<&PretrainEpoch> {
        self.epochs.first()
    }

    pub fn last(&self) -> Option<&PretrainEpoch> {
        self.epochs.last()
    }
}

struct PretrainGroup {
    features: Tensor,
    labels: Option<Vec<f64>>,
}

/// Mean `(ℓ_G, ℓ_D)` over the groups on clean inputs.
pub fn monitor(model: &AutoencoderModel, dataset: &Dataset, loss: &LossConfig) -> Result<(Option<f64>, Option<f64>)> {
    let groups = collect(dataset, model.alpha > 0.0)?;
    monitor_groups(model, &groups, loss)
}

fn monitor_groups(
    model: &AutoencoderModel,
    groups: &[PretrainGroup],
    loss: &LossConfig,
) -> Result<(Option<f64>, Option<f64>)> {
    let mut gen = 0.0;
    let mut disc = 0.0;
    for g in groups {
        let z = model.encode(&g.features)?;
        if model.beta > 0.0 {
            gen += generative_loss(std::slice::from_ref(&g.features), &[model.decode(&z)?])?;
        }
        if model.alpha > 0.0 {
            let labels = g.labels.as_deref().expect("checked by collect");
            disc += loss.evaluate(&model.head_scores(&z)?, labels)?.value;
        }
    }
    let n = groups.len() as f64;
    Ok((
        (model.beta > 0.0).then_some(gen / n),
        (model.alpha > 0.0).then_some(disc / n),
    ))
}

fn collect(dataset: &Dataset, need_labels: bool) -> Result<Vec<PretrainGroup>> {
    dataset
        .groups()
        .iter()
        .map(|g| {
            let labels = g.label_values();
            if need_labels && labels.is_none() {
                return Err(Error::invalid(format!(
                    "query {} has no grades but alpha > 0",
                    g.qid
                )));
            }
            Ok(PretrainGroup {
                features: g.features.clone(),
                labels,
            })
        })
        .collect()
}

/// Jointly minimizes `α·L_D + β·L_G` over minibatches of whole queries.
pub fn pretrain(dataset: &Dataset, config: &PretrainConfig, seed: u64) -> Result<(AutoencoderModel, PretrainTrace)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("pre-training set is empty"));
    }
    if config.alpha == 0.0 && config.beta == 0.0 {
        return Err(Error::invalid("alpha and beta are both zero; nothing to optimize"));
    }
    let mut model = AutoencoderModel::new(
        config.encoder.clone(),
        dataset.num_features(),
        config.alpha,
        config.beta,
        seed,
    )?;
    let groups = collect(dataset, config.alpha > 0.0)?;
    let mut adam = Adam::new(AdamConfig::with_lr(config.learning_rate), &model.params);
    let mut order_rng = crate::rng_from_seed(order_seed(seed));
    let mut trace = PretrainTrace::default();

    let record = |model: &AutoencoderModel, trace: &mut PretrainTrace, epoch: usize| -> Result<()> {
        let (generative, discriminative) = monitor_groups(model, &groups, &config.loss)?;
        trace.epochs.push(PretrainEpoch {
            epoch,
            generative,
            discriminative,
        });
        if generative.is_some_and(|v| !v.is_finite()) || discriminative.is_some_and(|v| !v.is_finite()) {
            return Err(diverged(epoch, "non-finite monitored loss", trace));
        }
        Ok(())
    };
    record(&model, &mut trace, 0)?;

    let mut order: Vec<usize> = (0..groups.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut order_rng);
        for chunk in order.chunks(config.batch_queries) {
            let mut graph = Graph::new();
            let vars = model.params.bind(&mut graph);
            let mut total: Option<Var> = None;
            for &gi in chunk {
                let g = &groups[gi];
                let mut rng = crate::rng_from_seed(corruption_seed(seed, epoch, gi));
                let noisy = corrupt(&g.features, config.encoder.corruption, &mut rng);
                let term = group_objective(
                    &model,
                    &mut graph,
                    &vars,
                    &g.features,
                    &noisy,
                    g.labels.as_deref(),
                    &config.loss,
                    chunk.len(),
                )
                .map_err(|e| as_divergence(e, epoch, &trace))?;
                total = Some(match total {
                    None => term,
                    Some(t) => graph.add(t, term)?,
                });
            }
            let total = total.expect("chunks are non-empty");
            let grads = graph.backward(total).map_err(|e| as_divergence(e, epoch, &trace))?;
            let grads = model.params.collect_grads(&grads, &vars);
            adam.step(&mut model.params, &grads);
        }
        record(&model, &mut trace, epoch)?;
    }
    Ok((model, trace))
}

fn diverged(epoch: usize, what: &str, trace: &PretrainTrace) -> Error {
    Error::Diverged {
        stage: "pretrain".into(),
        epoch,
        detail: format!(
            "{what}; trace so far: {}",
            serde_json::to_string(trace).unwrap_or_default()
        ),
    }
}

fn as_divergence(err: Error, epoch: usize, trace: &PretrainTrace) -> Error {
    match err {
        Error::NonFinite { node } => diverged(epoch, &format!("non-finite value at {node}"), trace),
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationGroup {
    pub qid: String,
    /// `|W| × n`
    pub z: Tensor,
    pub labels: Option<Vec<u8>>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationSet {
    pub dim: usize,
    pub groups: Vec<RepresentationGroup>,
}

impl RepresentationSet {
    fn from_groups(dim: usize, source: &[QueryGroup], z: Vec<Tensor>) -> Result<Self> {
        let groups = source
            .iter()
            .zip(z)
            .map(|(g, z)| {
                if !z.is_finite() {
                    return Err(Error::NonFinite {
                        node: format!("representation of query {}", g.qid),
                    });
                }
                Ok(RepresentationGroup {
                    qid: g.qid.clone(),
                    z,
                    labels: g.labels.clone(),
                    provenance: g.provenance,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { dim, groups })
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn qids(&self) -> Vec<String> {
        self.groups.iter().map(|g| g.qid.clone()).collect()
    }

    /// Graded groups as training inputs; ungraded groups are skipped.
    pub fn training_groups(&self) -> Result<Vec<TrainingGroup>> {
        self.groups
            .iter()
            .filter_map(|g| {
                g.labels.as_ref().map(|l| {
                    TrainingGroup::new(g.z.clone(), l.iter().map(|&v| f64::from(v)).collect())
                })
            })
            .collect()
    }

    /// Groups whose qid is in `ids`, in `ids` order.
    pub fn select(&self, ids: &[String]) -> Result<Self> {
        let groups = ids
            .iter()
            .map(|id| {
                self.groups
                    .iter()
                    .find(|g| &g.qid == id)
                    .cloned()
                    .ok_or_else(|| Error::invalid(format!("unknown query {id}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { dim: self.dim, groups })
    }
}

/// Encodes clean features of every group.
pub fn extract_representations(model: &AutoencoderModel, dataset: &Dataset) -> Result<RepresentationSet> {
    let z = dataset
        .groups()
        .iter()
        .map(|g| model.encode(&g.features))
        .collect::<Result<Vec<_>>>()?;
    RepresentationSet::from_groups(model.repr_dim(), dataset.groups(), z)
}

/// Gaussian random projection `x ↦ xP / √m` to `dim` coordinates; the
/// untrained reference point for learned representations.
pub fn random_projection(dataset: &Dataset, dim: usize, seed: u64) -> Result<RepresentationSet> {
    let m = dataset.num_features();
    let mut rng = crate::rng_from_seed(seed);
    let p = Tensor::randn(m, dim, 1.0 / (m.max(1) as f64).sqrt(), &mut rng);
    let z = dataset.groups().iter().map(|g| g.features.matmul(&p)).collect();
    RepresentationSet::from_groups(dim, dataset.groups(), z)
}

/// Identity "representations" (raw features).
pub fn raw_representations(dataset: &Dataset) -> Result<RepresentationSet> {
    let z = dataset.groups().iter().map(|g| g.features.clone()).collect();
    RepresentationSet::from_groups(dataset.num_features(), dataset.groups(), z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_difference_check;

    fn tiny_config() -> EncoderConfig {
        EncoderConfig {
            blocks: 1,
            heads: 2,
            d_model: 8,
            d_ff: 8,
            repr_dim: 4,
            corruption: 0.2,
            axis: AttentionAxis::Documents,
            decoder_hidden: 6,
        }
    }

    fn features(rows: usize, cols: usize, seed: u64) -> Tensor {
        Tensor::randn(rows, cols, 1.0, &mut crate::rng_from_seed(seed))
    }

    #[test]
    fn corruption_rate_and_identity() {
        let x = Tensor::filled(100, 1000, 1.0);
        let mut rng = crate::rng_from_seed(0);
        let c = corrupt(&x, 0.3, &mut rng);
        let zeroed = c.data().iter().filter(|&&v| v == 0.0).count() as f64 / 1e5;
        assert!((zeroed - 0.3).abs() < 0.01, "{zeroed}");
        assert_eq!(corrupt(&x, 0.0, &mut rng), x);
        let a = corrupt(&x, 0.5, &mut crate::rng_from_seed(3));
        let b = corrupt(&x, 0.5, &mut crate::rng_from_seed(3));
        assert_eq!(a, b);
    }

    #[test]
    fn generative_loss_examples() {
        let x = Tensor::row(&[1.0, 0.0]).unwrap();
        let r = Tensor::row(&[0.0, 0.0]).unwrap();
        assert_eq!(generative_loss(&[x.clone()], &[r]).unwrap(), 1.0);
        assert_eq!(generative_loss(&[x.clone()], &[x]).unwrap(), 0.0);

        let mut rng = crate::rng_from_seed(1);
        let clean: Vec<Tensor> = (0..4).map(|i| Tensor::randn(i + 1, 3, 1.0, &mut rng)).collect();
        let recon: Vec<Tensor> = (0..4).map(|i| Tensor::randn(i + 1, 3, 1.0, &mut rng)).collect();
        let mut expected = 0.0;
        for q in 0..4 {
            let mut per_query = 0.0;
            for d in 0..clean[q].rows() {
                let mut sq = 0.0;
                for f in 0..3 {
                    sq += (clean[q].get(d, f) - recon[q].get(d, f)).powi(2);
                }
                per_query += sq;
            }
            expected += per_query / clean[q].rows() as f64;
        }
        expected /= 4.0;
        assert!((generative_loss(&clean, &recon).unwrap() - expected).abs() <= 1e-12);
    }

    #[test]
    fn shapes_and_single_document() {
        let model = AutoencoderModel::new(tiny_config(), 5, 0.5, 0.5, 0).unwrap();
        let z = model.encode(&features(3, 5, 1)).unwrap();
        assert_eq!(z.shape(), &[3, 4]);
        assert_eq!(model.decode(&z).unwrap().shape(), &[3, 5]);
        assert_eq!(model.head_scores(&z).unwrap().len(), 3);
        assert_eq!(model.encode(&features(1, 5, 2)).unwrap().shape(), &[1, 4]);
        assert!(model.encode(&features(2, 4, 2)).is_err());
    }

    #[test]
    fn zero_head_weights_give_bias() {
        let mut model = AutoencoderModel::new(tiny_config(), 5, 0.5, 0.5, 0).unwrap();
        model.params.get_mut(model.head.weight).data_mut().fill(0.0);
        let bias = model.head.bias.unwrap();
        model.params.get_mut(bias).data_mut()[0] = 0.7;
        let z = features(4, 4, 9);
        assert_eq!(model.head_scores(&z).unwrap(), vec![0.7; 4]);
    }

    #[test]
    fn permutation_equivariance() {
        for axis in [AttentionAxis::Documents, AttentionAxis::Features] {
            let cfg = EncoderConfig {
                axis,
                ..tiny_config()
            };
            let model = AutoencoderModel::new(cfg, 5, 0.5, 0.5, 3).unwrap();
            let x = features(5, 5, 4);
            let perm = [3, 0, 4, 1, 2];
            let z = model.encode(&x).unwrap();
            let zp = model.encode(&x.select_rows(&perm)).unwrap();
            let expect = z.select_rows(&perm);
            for (a, b) in zp.data().iter().zip(expect.data()) {
                assert!((a - b).abs() <= 1e-9, "{axis:?}");
            }
        }
    }

    #[test]
    fn joint_objective_gradient() {
        let mut rng = crate::rng_from_seed(5);
        let clean = Tensor::randn(3, 4, 1.0, &mut rng);
        let noisy = corrupt(&clean, 0.3, &mut rng);
        let labels = [2.0, 0.0, 1.0];
        let model = AutoencoderModel::new(tiny_config(), 4, 0.5, 0.5, 6).unwrap();
        let loss = LossConfig::new(LossKind::ListNet);
        let worst = finite_difference_check(&model.params, 1e-5, |g, v| {
            group_objective(&model, g, v, &clean, &noisy, Some(&labels), &loss, 1)
        })
        .unwrap();
        assert!(worst <= 1e-4, "{worst}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ae.ckpt");
        let model = AutoencoderModel::new(tiny_config(), 5, 0.25, 0.75, 11).unwrap();
        model.save(&path, serde_json::json!({"seed": 11, "epochs": 0})).unwrap();
        let (loaded, meta) = AutoencoderModel::load(&path).unwrap();
        assert_eq!(loaded, model);
        assert_eq!(meta["seed"], 11);
    }

    #[test]
    fn weights_validated() {
        assert!(AutoencoderModel::new(tiny_config(), 5, 1.5, 0.5, 0).is_err());
        let cfg = EncoderConfig {
            heads: 3,
            ..tiny_config()
        };
        assert!(AutoencoderModel::new(cfg, 5, 0.5, 0.5, 0).is_err());
    }
}
