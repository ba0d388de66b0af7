//! Ranking objectives over the scores of one query's documents.
//!
//! Every loss returns its value together with the gradient with respect to
//! the scores, so the training loops can attach them to a tape as a single
//! external node.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{discount, gain, ideal_dcg_at_k, rank_order};
use crate::numerics::graph::{log_sum_exp, sigmoid, softmax};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Rmse,
    RankNet,
    LambdaRank,
    ListNet,
    ListMle,
    ApproxNdcg,
    NeuralNdcg,
}

impl LossKind {
    pub const ALL: [LossKind; 7] = [
        LossKind::Rmse,
        LossKind::RankNet,
        LossKind::LambdaRank,
        LossKind::ListNet,
        LossKind::ListMle,
        LossKind::ApproxNdcg,
        LossKind::NeuralNdcg,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Rmse => "rmse",
            LossKind::RankNet => "ranknet",
            LossKind::LambdaRank => "lambdarank",
            LossKind::ListNet => "listnet",
            LossKind::ListMle => "listmle",
            LossKind::ApproxNdcg => "approxndcg",
            LossKind::NeuralNdcg => "neuralndcg",
        }
    }

    /// Display name used in report tables, e.g. `NeuralNDCG`.
    pub fn label(self) -> &'static str {
        match self {
            LossKind::Rmse => "RMSE",
            LossKind::RankNet => "RankNet",
            LossKind::LambdaRank => "LambdaRank",
            LossKind::ListNet => "ListNet",
            LossKind::ListMle => "ListMLE",
            LossKind::ApproxNdcg => "ApproxNDCG",
            LossKind::NeuralNdcg => "NeuralNDCG",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        LossKind::ALL
            .into_iter()
            .find(|k| k.as_str() == lower)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown loss {s:?}; expected one of rmse|ranknet|lambdarank|listnet|listmle|approxndcg|neuralndcg"
                ))
            })
    }
}

/// A loss kind with its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Temperature for ApproxNDCG and NeuralNDCG.
    pub tau: f64,
    /// Sigmoid scale for RankNet and LambdaRank.
    pub sigma: f64,
    /// NDCG cutoff inside LambdaRank and NeuralNDCG.
    pub k: usize,
}

impl LossConfig {
    pub fn new(kind: LossKind) -> Self {
        Self {
            kind,
            tau: 1.0,
            sigma: 1.0,
            k: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !(self.sigma > 0.0) || self.k == 0 {
            return Err(Error::invalid(format!(
                "loss hyperparameters need tau > 0, sigma > 0, k >= 1 (got {self:?})"
            )));
        }
        Ok(())
    }

    /// Value and score gradient for one query.
    ///
    /// LambdaRank reports the lambda-weighted pairwise cost, whose gradient
    /// is exactly the lambdas wherever the score order is locally constant.
    pub fn evaluate(&self, scores: &[f64], labels: &[f64]) -> Result<LossOutput> {
        match self.kind {
            LossKind::Rmse => rmse_loss(scores, labels),
            LossKind::RankNet => ranknet_loss(scores, labels, self.sigma),
            LossKind::LambdaRank => lambdarank_cost(scores, labels, self.k, self.sigma),
            LossKind::ListNet => listnet_loss(scores, labels),
            LossKind::ListMle => listmle_loss(scores, labels),
            LossKind::ApproxNdcg => approx_ndcg_loss(scores, labels, self.tau),
            LossKind::NeuralNdcg => neural_ndcg_loss(scores, labels, self.tau, self.k),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub grad: Vec<f64>,
}

impl LossOutput {
    fn zero(n: usize) -> Self {
        Self {
            value: 0.0,
            grad: vec![0.0; n],
        }
    }
}

fn check_lengths(scores: &[f64], labels: &[f64]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::invalid("ranking loss over an empty list"));
    }
    Ok(())
}

/// `ln(1 + eˣ)`
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Mean squared error between scores and grades.
pub fn rmse_loss(scores: &[f64], labels: &[f64]) -> Result<LossOutput> {
    check_lengths(scores, labels)?;
    let n = scores.len() as f64;
    let value = scores
        .iter()
        .zip(labels)
        .map(|(s, y)| (y - s).powi(2))
        .sum::<f64>()
        / n;
    let grad = scores
        .iter()
        .zip(labels)
        .map(|(s, y)| -2.0 * (y - s) / n)
        .collect();
    Ok(LossOutput { value, grad })
}

/// Mean logistic loss over ordered pairs with `y_i > y_j`.
pub fn ranknet_loss(scores: &[f64], labels: &[f64], sigma: f64) -> Result<LossOutput> {
    check_lengths(scores, labels)?;
    let n = scores.len();
    let mut out = LossOutput::zero(n);
    let mut pairs = 0usize;
    for i in 0..n {
        for j in 0..n {
            if labels[i] > labels[j] {
                let diff = scores[i] - scores[j];
                out.value += softplus(-sigma * diff);
                let g = -sigma * sigmoid(-sigma * diff);
                out.grad[i] += g;
                out.grad[j] -= g;
                pairs += 1;
            }
        }
    }
    if pairs > 0 {
        let p = pairs as f64;
        out.value /= p;
        out.grad.iter_mut().for_each(|g| *g /= p);
    }
    Ok(out)
}

/// `|ΔNDCG@k|` weights for every informative pair under the current order.
fn lambda_pairs(
    scores: &[f64],
    labels: &[f64],
    k: usize,
) -> Result<Vec<(usize, usize, f64)>> {
    let ideal = ideal_dcg_at_k(labels, k)?;
    if ideal <= 0.0 {
        return Ok(Vec::new());
    }
    let n = scores.len();
    let mut position = vec![0usize; n];
    for (p, &doc) in rank_order(scores).iter().enumerate() {
        position[doc] = p + 1;
    }
    let cut = |p: usize| if p <= k { discount(p) } else { 0.0 };
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if labels[i] > labels[j] {
                let delta = ((gain(labels[i]) - gain(labels[j]))
                    * (cut(position[i]) - cut(position[j])))
                .abs()
                    / ideal;
                pairs.push((i, j, delta));
            }
        }
    }
    Ok(pairs)
}

/// LambdaRank pseudo-gradients `∂C/∂s`; descending them raises
/// higher-graded documents.
pub fn lambdarank_lambdas(
    scores: &[f64],
    labels: &[f64],
    k: usize,
    sigma: f64,
) -> Result<Vec<f64>> {
    Ok(lambdarank_cost(scores, labels, k, sigma)?.grad)
}

/// `Σ |ΔNDCG_ij| · ln(1 + exp(−σ(s_i − s_j)))` with the `|ΔNDCG|` weights
/// frozen at the current ordering; its gradient is the lambda vector.
pub fn lambdarank_cost(
    scores: &[f64],
    labels: &[f64],
    k: usize,
    sigma: f64,
) -> Result<LossOutput> {
    check_lengths(scores, labels)?;
    if k == 0 {
        return Err(Error::invalid("NDCG cutoff k must be positive"));
    }
    let mut out = LossOutput::zero(scores.len());
    for (i, j, delta) in lambda_pairs(scores, labels, k)? {
        let diff = scores[i] - scores[j];
        out.value += delta * softplus(-sigma * diff);
        let lambda = sigma * sigmoid(-sigma * diff) * delta;
        out.grad[i] -= lambda;
        out.grad[j] += lambda;
    }
    Ok(out)
}

/// Cross-entropy between the top-one distributions `softmax(y)` and
/// `softmax(s)`.
pub fn listnet_loss(scores: &[f64], labels: &[f64]) -> Result<LossOutput> {
    check_lengths(scores, labels)?;
    let target = softmax(labels);
    let lse = log_sum_exp(scores);
    let predicted = softmax(scores);
    let value = -target
        .iter()
        .zip(scores)
        .map(|(t, s)| t * (s - lse))
        .sum::<f64>();
    let grad = predicted.iter().zip(&target).map(|(p, t)| p - t).collect();
    Ok(LossOutput { value, grad })
}

/// Target permutation for ListMLE: grades descending, ties by index.
pub fn listmle_target(labels: &[f64]) -> Vec<usize> {
    rank_order(labels)
}

/// `log P(perm | scores)` under the Plackett–Luce model.
pub fn plackett_luce_log_prob(scores: &[f64], perm: &[usize]) -> f64 {
    let ordered: Vec<f64> = perm.iter().map(|&d| scores[d]).collect();
    (0..ordered.len())
        .map(|t| ordered[t] - log_sum_exp(&ordered[t..]))
        .sum()
}

/// Negative Plackett–Luce log-likelihood of the grade-sorted permutation.
pub fn listmle_loss(scores: &[f64], labels: &[f64]) -> Result<LossOutput> {
    check_lengths(scores, labels)?;
    let perm = listmle_target(labels);
    let ordered: Vec<f64> = perm.iter().map(|&d| scores[d]).collect();
    let n = ordered.len();
    let mut value = 0.0;
    let mut grad_ordered = vec![0.0; n];
    for t in 0..n {
        let suffix = &ordered[t..];
        value += log_sum_exp(suffix) - ordered[t];
        for (u, p) in softmax(suffix).into_iter().enumerate() {
            grad_ordered[t + u] += p;
        }
        grad_ordered[t] -= 1.0;
    }
    let mut grad = vec![0.0; n];
    for (t, &doc) in perm.iter().enumerate() {
        grad[doc] = grad_ordered[t];
    }
    Ok(LossOutput { value, grad })
}

/// Smooth ranks `r̂_j = 1 + Σ_{i≠j} σ((s_i − s_j)/τ)`.
pub fn approx_ranks(scores: &[f64], tau: f64) -> Vec<f64> {
    (0..scores.len())
        .map(|j| {
            1.0 + (0..scores.len())
                .filter(|&i| i != j)
                .map(|i| sigmoid((scores[i] - scores[j]) / tau))
                .sum::<f64>()
        })
        .collect()
}

/// Negative ApproxNDCG over the full list.
pub fn approx_ndcg_loss(scores: &[f64], labels: &[f64], tau: f64) -> Result<LossOutput> {
    check_lengths(scores, labels)?;
    let n = scores.len();
    let ideal = ideal_dcg_at_k(labels, n)?;
    if ideal <= 0.0 {
        return Ok(LossOutput::zero(n));
    }
    let ranks = approx_ranks(scores, tau);
    let ln2 = std::f64::consts::LN_2;
    let mut value = 0.0;
    // ∂value/∂r̂_j
    let mut d_rank = vec![0.0; n];
    for j in 0..n {
        let g = gain(labels[j]);
        let l = (1.0 + ranks[j]).ln();
        value -= g * ln2 / l / ideal;
        d_rank[j] = g * ln2 / (l * l) / (1.0 + ranks[j]) / ideal;
    }
    let mut grad = vec![0.0; n];
    for j in 0..n {
        if d_rank[j] == 0.0 {
            continue;
        }
        for i in 0..n {
            if i == j {
                continue;
            }
            let p = sigmoid((scores[i] - scores[j]) / tau);
            let t = d_rank[j] * p * (1.0 - p) / tau;
            grad[i] += t;
            grad[j] -= t;
        }
    }
    Ok(LossOutput { value, grad })
}

/// Relaxed permutation matrix from temperature-scaled NeuralSort: row `r`
/// (1-based) is `softmax_j(((n + 1 − 2r)·s_j − Σ_i |s_j − s_i|) / τ)`.
pub fn neural_sort_matrix(scores: &[f64], tau: f64) -> Vec<Vec<f64>> {
    let n = scores.len();
    let abs_sums: Vec<f64> = scores
        .iter()
        .map(|&sj| scores.iter().map(|&si| (sj - si).abs()).sum())
        .collect();
    (1..=n)
        .map(|r| {
            let coef = (n + 1) as f64 - 2.0 * r as f64;
            let logits: Vec<f64> = scores
                .iter()
                .zip(&abs_sums)
                .map(|(&s, &a)| (coef * s - a) / tau)
                .collect();
            softmax(&logits)
        })
        .collect()
}

/// Negative NeuralNDCG@k.
pub fn neural_ndcg_loss(scores: &[f64], labels: &[f64], tau: f64, k: usize) -> Result<LossOutput> {
    check_lengths(scores, labels)?;
    if k == 0 {
        return Err(Error::invalid("NDCG cutoff k must be positive"));
    }
    let n = scores.len();
    let ideal = ideal_dcg_at_k(labels, k)?;
    if ideal <= 0.0 {
        return Ok(LossOutput::zero(n));
    }
    let gains: Vec<f64> = labels.iter().map(|&y| gain(y)).collect();
    let p = neural_sort_matrix(scores, tau);
    let rows = k.min(n);
    let mut value = 0.0;
    // column sums of ∂value/∂logits, and the row-coefficient weighted sums
    let mut col_total = vec![0.0; n];
    let mut coef_total = vec![0.0; n];
    for (r0, row) in p.iter().enumerate().take(rows) {
        let d = discount(r0 + 1);
        let expected_gain: f64 = row.iter().zip(&gains).map(|(a, g)| a * g).sum();
        value -= d * expected_gain / ideal;
        let coef = (n + 1) as f64 - 2.0 * (r0 + 1) as f64;
        for j in 0..n {
            // ∂value/∂logit_rj = P_rj (c_rj − Σ P_rj' c_rj') with c_rj = −d g_j / IDCG
            let e = -d / ideal * row[j] * (gains[j] - expected_gain);
            col_total[j] += e;
            coef_total[j] += e * coef;
        }
    }
    let sign = |x: f64| {
        if x > 0.0 {
            1.0
        } else if x < 0.0 {
            -1.0
        } else {
            0.0
        }
    };
    let mut grad = vec![0.0; n];
    for m in 0..n {
        let own: f64 = (0..n).map(|i| sign(scores[m] - scores[i])).sum();
        let cross: f64 = (0..n)
            .filter(|&j| j != m)
            .map(|j| col_total[j] * sign(scores[j] - scores[m]))
            .sum();
        grad[m] = (coef_total[m] - col_total[m] * own + cross) / tau;
    }
    Ok(LossOutput { value, grad })
}
