//! NDCG@k with gain `2^label − 1` and discount `log2(position + 1)`.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Longest list [`brute_force_best_ndcg`] will enumerate.
pub const MAX_BRUTE_FORCE_LEN: usize = 9;

pub fn gain(label: f64) -> f64 {
    2f64.powf(label) - 1.0
}

/// Discount for 1-based `position`.
pub fn discount(position: usize) -> f64 {
    1.0 / ((position + 1) as f64).log2()
}

/// Document indices sorted by descending score; ties keep ascending index.
pub fn rank_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

pub fn dcg_at_k(labels: &[f64], order: &[usize], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("NDCG cutoff k must be positive"));
    }
    if order.len() != labels.len() {
        return Err(Error::invalid(format!(
            "order has {} entries for {} labels",
            order.len(),
            labels.len()
        )));
    }
    Ok(order
        .iter()
        .take(k)
        .enumerate()
        .map(|(p, &doc)| gain(labels[doc]) * discount(p + 1))
        .sum())
}

/// DCG of the label-sorted order.
pub fn ideal_dcg_at_k(labels: &[f64], k: usize) -> Result<f64> {
    dcg_at_k(labels, &rank_order(labels), k)
}

/// NDCG of one query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryNdcg {
    pub value: f64,
    /// Set when the ideal DCG is zero; such queries score 0 and are left out
    /// of reported means.
    pub excluded: bool,
}

pub fn ndcg_at_k(labels: &[f64], scores: &[f64], k: usize) -> Result<QueryNdcg> {
    if labels.len() != scores.len() {
        return Err(Error::invalid(format!(
            "{} labels vs {} scores",
            labels.len(),
            scores.len()
        )));
    }
    let ideal = ideal_dcg_at_k(labels, k)?;
    if ideal <= 0.0 {
        return Ok(QueryNdcg {
            value: 0.0,
            excluded: true,
        });
    }
    let dcg = dcg_at_k(labels, &rank_order(scores), k)?;
    Ok(QueryNdcg {
        value: dcg / ideal,
        excluded: false,
    })
}

/// Best NDCG@k over every permutation, by enumeration.
pub fn brute_force_best_ndcg(labels: &[f64], k: usize) -> Result<f64> {
    if labels.len() > MAX_BRUTE_FORCE_LEN {
        return Err(Error::invalid(format!(
            "brute force limited to {MAX_BRUTE_FORCE_LEN} documents, got {}",
            labels.len()
        )));
    }
    if k == 0 {
        return Err(Error::invalid("NDCG cutoff k must be positive"));
    }
    let mut perm: Vec<usize> = (0..labels.len()).collect();
    let mut best = f64::NEG_INFINITY;
    for_each_permutation(&mut perm, &mut |p| {
        let dcg = dcg_at_k(labels, p, k).expect("valid permutation");
        best = best.max(dcg);
    });
    let ideal = ideal_dcg_at_k(labels, k)?;
    if ideal <= 0.0 {
        return Ok(0.0);
    }
    Ok(best / ideal)
}

/// Heap's algorithm.
pub fn for_each_permutation(items: &mut [usize], visit: &mut impl FnMut(&[usize])) {
    let n = items.len();
    let mut c = vec![0usize; n];
    visit(items);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                items.swap(0, i);
            } else {
                items.swap(c[i], i);
            }
            visit(items);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

/// NDCG@k over a set of queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingEval {
    pub k: usize,
    pub per_query: Vec<QueryNdcg>,
    /// Mean over non-excluded queries (0 when every query is excluded).
    pub mean: f64,
}

impl RankingEval {
    pub fn compute<'a, I>(k: usize, queries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a [f64], &'a [f64])>,
    {
        let per_query = queries
            .into_iter()
            .map(|(labels, scores)| ndcg_at_k(labels, scores, k))
            .collect::<Result<Vec<_>>>()?;
        let included: Vec<f64> = per_query
            .iter()
            .filter(|q| !q.excluded)
            .map(|q| q.value)
            .collect();
        let mean = if included.is_empty() {
            0.0
        } else {
            included.iter().sum::<f64>() / included.len() as f64
        };
        Ok(Self { k, per_query, mean })
    }

    pub fn num_excluded(&self) -> usize {
        self.per_query.iter().filter(|q| q.excluded).count()
    }
}

/// Mean NDCG@k of uniformly random orderings, averaged over `seeds`.
pub fn shuffled_baseline_ndcg(label_lists: &[Vec<f64>], k: usize, seeds: &[u64]) -> Result<f64> {
    if seeds.is_empty() {
        return Err(Error::invalid("shuffled baseline needs at least one seed"));
    }
    let mut total = 0.0;
    for &seed in seeds {
        let mut rng = crate::rng_from_seed(seed);
        let scored: Vec<(Vec<f64>, Vec<f64>)> = label_lists
            .iter()
            .map(|labels| {
                let mut ranks: Vec<f64> = (0..labels.len()).map(|i| i as f64).collect();
                ranks.shuffle(&mut rng);
                (labels.clone(), ranks)
            })
            .collect();
        let eval = RankingEval::compute(
            k,
            scored.iter().map(|(l, s)| (l.as_slice(), s.as_slice())),
        )?;
        total += eval.mean;
    }
    Ok(total / seeds.len() as f64)
}
