//! Loss-diverse committee pseudo-labeling.
//!
//! Each member is an MLP trained on the labeled queries with a different
//! ranking loss. On an unlabeled query every member's scores are turned into
//! grades by rank quantiles that follow the labeled grade distribution; the
//! pseudo grade is the rounded mean over members and the spread across
//! members sets a confidence used for filtering.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Provenance, QueryGroup, MAX_GRADE, NUM_GRADES};
use crate::error::{Error, Result};
use crate::losses::{LossConfig, LossKind};
use crate::metrics::{rank_order, shuffled_baseline_ndcg};
use crate::scorer::{mean_ndcg, train_scorer, MlpScorer, TrainConfig, TrainTrace, TrainingGroup};

/// Largest population variance of grades confined to `[0, 4]`.
pub const MAX_GRADE_VARIANCE: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommitteeConfig {
    pub train: TrainConfig,
    /// Fraction of labeled queries held out for validation inside each member.
    pub validation_fraction: f64,
    pub tau: f64,
    pub sigma: f64,
    pub k: usize,
}

impl Default for CommitteeConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            validation_fraction: 0.2,
            tau: 1.0,
            sigma: 1.0,
            k: 10,
        }
    }
}

impl CommitteeConfig {
    pub fn loss(&self, kind: LossKind) -> LossConfig {
        LossConfig {
            kind,
            tau: self.tau,
            sigma: self.sigma,
            k: self.k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommitteeMember {
    pub loss: LossConfig,
    pub scorer: MlpScorer,
    pub seed: u64,
    pub val_ndcg10: f64,
    /// Mean NDCG@10 of shuffled orderings on the same validation queries.
    pub shuffled_ndcg10: f64,
    pub trace: TrainTrace,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Committee {
    pub members: Vec<CommitteeMember>,
    pub seed: u64,
}

impl Committee {
    pub fn warnings(&self) -> Vec<&str> {
        self.members.iter().filter_map(|m| m.warning.as_deref()).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.members[0].scorer.input_dim()
    }
}

/// Labeled groups as training inputs.
pub fn training_groups(dataset: &Dataset) -> Result<Vec<TrainingGroup>> {
    dataset
        .groups()
        .iter()
        .filter_map(|g| g.label_values().map(|l| (g, l)))
        .map(|(g, l)| TrainingGroup::new(g.features.clone(), l))
        .collect()
}

/// Indices of the validation queries in a query-level split of `n` groups:
/// `round(fraction · n)` of them, at least one and never all.
pub fn validation_indices(n: usize, fraction: f64, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut crate::rng_from_seed(seed));
    let n_val = if n >= 2 {
        ((fraction * n as f64).round() as usize).clamp(1, n - 1)
    } else {
        0
    };
    order.truncate(n_val);
    order
}

/// Query-level train/validation split of labeled groups.
pub fn validation_split(
    groups: &[TrainingGroup],
    fraction: f64,
    seed: u64,
) -> (Vec<TrainingGroup>, Vec<TrainingGroup>) {
    let val_idx = validation_indices(groups.len(), fraction, seed);
    let is_val: HashSet<usize> = val_idx.iter().copied().collect();
    let val = val_idx.iter().map(|&i| groups[i].clone()).collect();
    let train = (0..groups.len())
        .filter(|i| !is_val.contains(i))
        .map(|i| groups[i].clone())
        .collect();
    (train, val)
}

/// Trains one MLP ranker exactly as a committee member is trained. The
/// supervised baseline uses this same path.
pub fn train_member(
    labeled: &[TrainingGroup],
    loss: LossConfig,
    config: &CommitteeConfig,
    seed: u64,
) -> Result<CommitteeMember> {
    if labeled.is_empty() {
        return Err(Error::invalid("committee needs labeled queries"));
    }
    let (train, val) = validation_split(labeled, config.validation_fraction, crate::derive_seed(seed, 1));
    let input_dim = labeled[0].features.cols();
    let mut scorer = MlpScorer::new(input_dim, &config.train.hidden, crate::derive_seed(seed, 2));
    let validation = (!val.is_empty()).then_some(val.as_slice());
    let trace = train_scorer(
        &mut scorer,
        &train,
        validation,
        &loss,
        &config.train,
        crate::derive_seed(seed, 3),
    )?;
    let audit = if val.is_empty() { &train } else { &val };
    let val_ndcg10 = mean_ndcg(&scorer, audit, 10)?;
    let labels: Vec<Vec<f64>> = audit.iter().map(|g| g.labels.clone()).collect();
    let shuffled_ndcg10 = shuffled_baseline_ndcg(&labels, 10, &[0, 1, 2, 3, 4])?;
    let warning = (val_ndcg10 < shuffled_ndcg10).then(|| {
        format!(
            "{} member validation NDCG@10 {val_ndcg10:.4} below shuffled baseline {shuffled_ndcg10:.4}",
            loss.kind
        )
    });
    Ok(CommitteeMember {
        loss,
        scorer,
        seed,
        val_ndcg10,
        shuffled_ndcg10,
        trace,
        warning,
    })
}

/// Seed of the member trained with `kind` under committee seed `seed`.
pub fn member_seed(seed: u64, kind: LossKind) -> u64 {
    crate::derive_seed(seed, 1000 + kind as u64)
}

pub fn train_committee(
    labeled: &Dataset,
    kinds: &[LossKind],
    config: &CommitteeConfig,
    seed: u64,
) -> Result<Committee> {
    if kinds.len() < 2 {
        return Err(Error::invalid("a committee needs at least two loss kinds"));
    }
    let distinct: HashSet<_> = kinds.iter().collect();
    if distinct.len() != kinds.len() {
        return Err(Error::invalid(format!("duplicate loss kinds in {kinds:?}")));
    }
    let groups = training_groups(labeled)?;
    if groups.is_empty() {
        return Err(Error::invalid("committee needs labeled queries"));
    }
    let members = kinds
        .iter()
        .map(|&kind| train_member(&groups, config.loss(kind), config, member_seed(seed, kind)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Committee { members, seed })
}

/// Every member's scores for one unlabeled query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberScores {
    pub qid: String,
    /// One vector per member, each of length `|W|`.
    pub scores: Vec<Vec<f64>>,
}

pub fn score_unlabeled(committee: &Committee, unlabeled: &Dataset) -> Result<Vec<MemberScores>> {
    if !unlabeled.is_empty() && unlabeled.num_features() != committee.input_dim() {
        return Err(Error::invalid(format!(
            "committee trained on {} features, unlabeled data has {}",
            committee.input_dim(),
            unlabeled.num_features()
        )));
    }
    unlabeled
        .groups()
        .iter()
        .map(|g| {
            let scores = committee
                .members
                .iter()
                .map(|m| m.scorer.score(&g.features))
                .collect::<Result<Vec<_>>>()?;
            Ok(MemberScores {
                qid: g.qid.clone(),
                scores,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregationPolicy {
    /// Fraction of labeled documents at each grade 0..=4.
    pub grade_distribution: [f64; NUM_GRADES],
    /// Documents whose confidence falls below this are dropped.
    pub confidence_threshold: f64,
}

impl AggregationPolicy {
    pub const DEFAULT_THRESHOLD: f64 = 0.7;

    pub fn from_labeled(labeled: &Dataset, confidence_threshold: f64) -> Self {
        Self {
            grade_distribution: labeled.grade_distribution(),
            confidence_threshold,
        }
    }
}

/// Grades by rank quantile: the top `round(n·p₄)` documents get 4, the next
/// up to `round(n·(p₄ + p₃))` get 3, and so on.
pub fn quantile_grades(scores: &[f64], distribution: &[f64; NUM_GRADES]) -> Vec<u8> {
    let n = scores.len();
    let order = rank_order(scores);
    let mut grades = vec![0u8; n];
    let mut cumulative = 0.0;
    let mut start = 0usize;
    for grade in (0..NUM_GRADES).rev() {
        cumulative += distribution[grade];
        let end = if grade == 0 {
            n
        } else {
            ((cumulative * n as f64).round() as usize).min(n)
        };
        for &doc in &order[start.min(end)..end] {
            grades[doc] = grade as u8;
        }
        start = start.max(end);
    }
    grades
}

/// Rounded mean grade, population variance and confidence
/// `1 − variance / 4` of one document's member grades.
pub fn consensus(member_grades: &[u8]) -> (u8, f64, f64) {
    let k = member_grades.len() as f64;
    let mean = member_grades.iter().map(|&g| f64::from(g)).sum::<f64>() / k;
    let variance = member_grades
        .iter()
        .map(|&g| (f64::from(g) - mean).powi(2))
        .sum::<f64>()
        / k;
    let grade = (mean.round() as u8).min(MAX_GRADE);
    (grade, variance, 1.0 - variance / MAX_GRADE_VARIANCE)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabeledSet {
    /// Surviving groups with committee grades, provenance `Pseudo`.
    pub groups: Vec<QueryGroup>,
    /// Confidence of every retained document, per group.
    pub confidence: Vec<Vec<f64>>,
    /// Original document indices retained, per group.
    pub kept_documents: Vec<Vec<usize>>,
}

impl PseudoLabeledSet {
    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn to_dataset(&self, num_features: usize) -> Result<Dataset> {
        if self.groups.is_empty() {
            return Ok(Dataset::empty(num_features));
        }
        Dataset::new(self.groups.clone())
    }

    pub fn sidecar(&self) -> PseudoSidecar {
        PseudoSidecar {
            groups: self
                .groups
                .iter()
                .zip(&self.confidence)
                .zip(&self.kept_documents)
                .map(|((g, c), k)| SidecarGroup {
                    qid: g.qid.clone(),
                    provenance: g.provenance,
                    kept_documents: k.clone(),
                    confidence: c.clone(),
                })
                .collect(),
        }
    }
}

/// JSON companion of a pseudo-labeled SVMLight file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoSidecar {
    pub groups: Vec<SidecarGroup>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarGroup {
    pub qid: String,
    pub provenance: Provenance,
    pub kept_documents: Vec<usize>,
    pub confidence: Vec<f64>,
}

pub fn aggregate_pseudo_labels(
    unlabeled: &Dataset,
    member_scores: &[MemberScores],
    policy: &AggregationPolicy,
) -> Result<PseudoLabeledSet> {
    let mut out = PseudoLabeledSet {
        groups: Vec::new(),
        confidence: Vec::new(),
        kept_documents: Vec::new(),
    };
    for ms in member_scores {
        if ms.scores.len() < 2 {
            return Err(Error::invalid(format!(
                "query {}: aggregation needs at least two members",
                ms.qid
            )));
        }
        let group = unlabeled
            .groups()
            .iter()
            .find(|g| g.qid == ms.qid)
            .ok_or_else(|| Error::invalid(format!("unknown query id {}", ms.qid)))?;
        let n = group.num_docs();
        if ms.scores.iter().any(|s| s.len() != n) {
            return Err(Error::invalid(format!(
                "query {}: member score length differs from {n} documents",
                ms.qid
            )));
        }
        let member_grades: Vec<Vec<u8>> = ms
            .scores
            .iter()
            .map(|s| quantile_grades(s, &policy.grade_distribution))
            .collect();
        let mut kept = Vec::new();
        let mut grades = Vec::new();
        let mut conf = Vec::new();
        for doc in 0..n {
            let votes: Vec<u8> = member_grades.iter().map(|g| g[doc]).collect();
            let (grade, _, c) = consensus(&votes);
            if c >= policy.confidence_threshold {
                kept.push(doc);
                grades.push(grade);
                conf.push(c);
            }
        }
        if kept.len() < 2 {
            continue;
        }
        let mut g = QueryGroup::labeled(group.qid.clone(), group.features.select_rows(&kept), grades)?;
        g.provenance = Provenance::Pseudo;
        out.groups.push(g);
        out.confidence.push(conf);
        out.kept_documents.push(kept);
    }
    Ok(out)
}

/// Labeled groups of `labeled` plus the pseudo-labeled groups.
pub fn combine(labeled: &Dataset, pseudo: &PseudoLabeledSet) -> Result<Dataset> {
    let base = labeled.labeled();
    let ids: HashSet<&str> = base.groups().iter().map(|g| g.qid.as_str()).collect();
    if let Some(clash) = pseudo.groups.iter().find(|g| ids.contains(g.qid.as_str())) {
        return Err(Error::invalid(format!(
            "pseudo-labeled query {} collides with a labeled query",
            clash.qid
        )));
    }
    let extra = pseudo.to_dataset(labeled.num_features())?;
    base.concat(&extra)
}

/// Spearman rank correlation with average ranks for ties; 0 when either
/// side is constant.
pub fn spearman_correlation(a: &[f64], b: &[f64]) -> f64 {
    fn average_ranks(v: &[f64]) -> Vec<f64> {
        let mut order: Vec<usize> = (0..v.len()).collect();
        order.sort_by(|&x, &y| v[x].total_cmp(&v[y]));
        let mut ranks = vec![0.0; v.len()];
        let mut i = 0;
        while i < order.len() {
            let mut j = i;
            while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
                j += 1;
            }
            let r = (i + j) as f64 / 2.0;
            for &idx in &order[i..=j] {
                ranks[idx] = r;
            }
            i = j + 1;
        }
        ranks
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}

/// Spearman correlation between pseudo grades and the hidden grades kept by
/// the split that produced `source`. Evaluation only.
pub fn audit_against_hidden(pseudo: &PseudoLabeledSet, source: &Dataset) -> Option<f64> {
    let mut predicted = Vec::new();
    let mut truth = Vec::new();
    for (g, kept) in pseudo.groups.iter().zip(&pseudo.kept_documents) {
        let hidden = source.hidden_labels_for_evaluation(&g.qid)?;
        let labels = g.labels.as_ref()?;
        for (&doc, &grade) in kept.iter().zip(labels) {
            predicted.push(f64::from(grade));
            truth.push(f64::from(hidden[doc]));
        }
    }
    (!predicted.is_empty()).then(|| spearman_correlation(&predicted, &truth))
}
