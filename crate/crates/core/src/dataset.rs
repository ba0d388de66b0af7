//! Query groups, labeled/unlabeled partitions, SVMLight/LETOR I/O,
//! min-max normalization and the seeded synthetic benchmark.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const MAX_GRADE: u8 = 4;
pub const NUM_GRADES: usize = MAX_GRADE as usize + 1;

/// Where a group's labels came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    /// Human-assigned grades.
    Labeled,
    /// Grades hidden (or never known).
    Unlabeled,
    /// Committee-assigned grades.
    Pseudo,
}

/// One query with its candidate documents.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryGroup {
    pub qid: String,
    /// `|W| × m`, one row per document.
    pub features: Tensor,
    pub labels: Option<Vec<u8>>,
    pub provenance: Provenance,
}

impl QueryGroup {
    pub fn labeled(qid: impl Into<String>, features: Tensor, labels: Vec<u8>) -> Result<Self> {
        let g = Self {
            qid: qid.into(),
            features,
            labels: Some(labels),
            provenance: Provenance::Labeled,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn unlabeled(qid: impl Into<String>, features: Tensor) -> Self {
        Self {
            qid: qid.into(),
            features,
            labels: None,
            provenance: Provenance::Unlabeled,
        }
    }

    pub fn num_docs(&self) -> usize {
        self.features.rows()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    /// Grades as floats, for metrics and losses.
    pub fn label_values(&self) -> Option<Vec<f64>> {
        self.labels
            .as_ref()
            .map(|l| l.iter().map(|&g| f64::from(g)).collect())
    }

    fn validate(&self) -> Result<()> {
        if let Some(labels) = &self.labels {
            if labels.len() != self.num_docs() {
                return Err(Error::invalid(format!(
                    "query {}: {} labels for {} documents",
                    self.qid,
                    labels.len(),
                    self.num_docs()
                )));
            }
            if let Some(bad) = labels.iter().find(|&&g| g > MAX_GRADE) {
                return Err(Error::invalid(format!(
                    "query {}: grade {bad} outside 0..=4",
                    self.qid
                )));
            }
        }
        Ok(())
    }
}

/// Per-feature min/max fitted on labeled training groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormStats {
    /// Fits on the labeled groups, or on every group when none is labeled.
    pub fn fit(dataset: &Dataset) -> Self {
        let m = dataset.num_features;
        let mut min = vec![f64::INFINITY; m];
        let mut max = vec![f64::NEG_INFINITY; m];
        let any_labeled = dataset.groups.iter().any(|g| g.labels.is_some());
        for g in dataset
            .groups
            .iter()
            .filter(|g| !any_labeled || g.labels.is_some())
        {
            for r in 0..g.num_docs() {
                for (c, &v) in g.features.row_slice(r).iter().enumerate() {
                    min[c] = min[c].min(v);
                    max[c] = max[c].max(v);
                }
            }
        }
        Self { min, max }
    }

    /// Min-max scales each column and clips to `[0, 1]`; constant columns
    /// map to 0.
    pub fn apply_value(&self, col: usize, v: f64) -> f64 {
        let (lo, hi) = (self.min[col], self.max[col]);
        if hi > lo {
            ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }

    pub fn apply_tensor(&self, features: &Tensor) -> Tensor {
        let mut out = features.clone();
        let c = out.cols();
        for row in out.data_mut().chunks_mut(c) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.apply_value(j, *v);
            }
        }
        out
    }

    pub fn apply(&self, dataset: &Dataset) -> Result<Dataset> {
        if self.min.len() != dataset.num_features {
            return Err(Error::invalid(format!(
                "normalization stats cover {} features, dataset has {}",
                self.min.len(),
                dataset.num_features
            )));
        }
        let mut out = dataset.clone();
        for g in &mut out.groups {
            g.features = self.apply_tensor(&g.features);
        }
        out.norm_stats = Some(self.clone());
        Ok(out)
    }
}

/// Record of a labeled-fraction split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub ratio: f64,
    pub labeled: Vec<String>,
    pub unlabeled: Vec<String>,
}

/// Collection of query groups sharing one feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    groups: Vec<QueryGroup>,
    num_features: usize,
    /// Ground truth of groups whose labels were hidden by a split.
    hidden: BTreeMap<String, Vec<u8>>,
    norm_stats: Option<NormStats>,
}

impl Dataset {
    pub fn new(groups: Vec<QueryGroup>) -> Result<Self> {
        let num_features = groups.first().map(QueryGroup::num_features).unwrap_or(0);
        let mut seen = HashSet::new();
        for g in &groups {
            g.validate()?;
            if g.num_features() != num_features {
                return Err(Error::invalid(format!(
                    "query {} has {} features, expected {num_features}",
                    g.qid,
                    g.num_features()
                )));
            }
            if !seen.insert(g.qid.as_str()) {
                return Err(Error::invalid(format!("duplicate query id {}", g.qid)));
            }
        }
        Ok(Self {
            groups,
            num_features,
            hidden: BTreeMap::new(),
            norm_stats: None,
        })
    }

    pub fn groups(&self) -> &[QueryGroup] {
        &self.groups
    }

    pub fn into_groups(self) -> Vec<QueryGroup> {
        self.groups
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn num_docs(&self) -> usize {
        self.groups.iter().map(QueryGroup::num_docs).sum()
    }

    pub fn norm_stats(&self) -> Option<&NormStats> {
        self.norm_stats.as_ref()
    }

    pub fn qids(&self) -> Vec<String> {
        self.groups.iter().map(|g| g.qid.clone()).collect()
    }

    pub fn labeled_ids(&self) -> Vec<String> {
        self.groups
            .iter()
            .filter(|g| g.labels.is_some())
            .map(|g| g.qid.clone())
            .collect()
    }

    pub fn unlabeled_ids(&self) -> Vec<String> {
        self.groups
            .iter()
            .filter(|g| g.labels.is_none())
            .map(|g| g.qid.clone())
            .collect()
    }

    pub fn labeled(&self) -> Dataset {
        self.filter(|g| g.labels.is_some())
    }

    pub fn unlabeled(&self) -> Dataset {
        self.filter(|g| g.labels.is_none())
    }

    /// Sub-dataset of groups matching `keep`; hidden labels of kept groups
    /// travel along.
    pub fn filter(&self, keep: impl Fn(&QueryGroup) -> bool) -> Dataset {
        let groups: Vec<QueryGroup> = self.groups.iter().filter(|g| keep(g)).cloned().collect();
        let hidden = groups
            .iter()
            .filter_map(|g| self.hidden.get(&g.qid).map(|h| (g.qid.clone(), h.clone())))
            .collect();
        Dataset {
            groups,
            num_features: self.num_features,
            hidden,
            norm_stats: self.norm_stats.clone(),
        }
    }

    /// Groups with the given ids, in the order given.
    pub fn select(&self, ids: &[String]) -> Result<Dataset> {
        let index: HashMap<&str, usize> = self
            .groups
            .iter()
            .enumerate()
            .map(|(i, g)| (g.qid.as_str(), i))
            .collect();
        let mut groups = Vec::with_capacity(ids.len());
        let mut hidden = BTreeMap::new();
        for id in ids {
            let &i = index
                .get(id.as_str())
                .ok_or_else(|| Error::invalid(format!("unknown query id {id}")))?;
            groups.push(self.groups[i].clone());
            if let Some(h) = self.hidden.get(id) {
                hidden.insert(id.clone(), h.clone());
            }
        }
        Ok(Dataset {
            groups,
            num_features: self.num_features,
            hidden,
            norm_stats: self.norm_stats.clone(),
        })
    }

    /// Ground-truth grades of a group whose labels were hidden by a split.
    /// Evaluation and auditing only; no training path calls this.
    pub fn hidden_labels_for_evaluation(&self, qid: &str) -> Option<&[u8]> {
        self.hidden.get(qid).map(Vec::as_slice)
    }

    /// Pooled fraction of labeled documents at each grade.
    pub fn grade_distribution(&self) -> [f64; NUM_GRADES] {
        let mut counts = [0usize; NUM_GRADES];
        for labels in self.groups.iter().filter_map(|g| g.labels.as_ref()) {
            for &l in labels {
                counts[l as usize] += 1;
            }
        }
        let total: usize = counts.iter().sum();
        let mut dist = [0.0; NUM_GRADES];
        if total > 0 {
            for (d, c) in dist.iter_mut().zip(counts) {
                *d = c as f64 / total as f64;
            }
        }
        dist
    }

    fn shuffled_indices(&self, seed: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.groups.len()).collect();
        order.shuffle(&mut crate::rng_from_seed(seed));
        order
    }

    /// Query-level split: `round(ratio · |groups|)` groups keep their labels,
    /// the rest become unlabeled with their grades retained as hidden
    /// ground truth.
    pub fn split_labeled_fraction(&self, ratio: f64, seed: u64) -> Result<(Dataset, SplitManifest)> {
        if !(ratio > 0.0 && ratio <= 1.0) {
            return Err(Error::invalid(format!("ratio must lie in (0, 1], got {ratio}")));
        }
        if let Some(g) = self.groups.iter().find(|g| g.labels.is_none()) {
            return Err(Error::invalid(format!(
                "split needs a fully labeled dataset; query {} is unlabeled",
                g.qid
            )));
        }
        let num_labeled = (ratio * self.groups.len() as f64).round() as usize;
        if num_labeled == 0 {
            return Err(Error::invalid(format!(
                "ratio {ratio} over {} queries leaves no labeled query",
                self.groups.len()
            )));
        }
        let order = self.shuffled_indices(seed);
        let mut keep = vec![false; self.groups.len()];
        for &i in &order[..num_labeled] {
            keep[i] = true;
        }
        let (mut labeled, mut unlabeled) = (Vec::new(), Vec::new());
        for (g, &k) in self.groups.iter().zip(&keep) {
            if k {
                labeled.push(g.qid.clone());
            } else {
                unlabeled.push(g.qid.clone());
            }
        }
        let out = self.hide_labels(&unlabeled)?;
        Ok((
            out,
            SplitManifest {
                seed,
                ratio,
                labeled,
                unlabeled,
            },
        ))
    }

    /// Turns the listed groups unlabeled, keeping their grades as hidden
    /// ground truth for evaluation-only audits.
    pub fn hide_labels(&self, ids: &[String]) -> Result<Dataset> {
        let wanted: HashSet<&str> = ids.iter().map(String::as_str).collect();
        let mut out = self.clone();
        let mut found = 0;
        for g in out.groups.iter_mut() {
            if !wanted.contains(g.qid.as_str()) {
                continue;
            }
            found += 1;
            if let Some(grades) = g.labels.take() {
                out.hidden.insert(g.qid.clone(), grades);
            }
            g.provenance = Provenance::Unlabeled;
        }
        if found != wanted.len() {
            return Err(Error::invalid(format!(
                "{} of {} ids to hide are not in the dataset",
                wanted.len() - found,
                wanted.len()
            )));
        }
        Ok(out)
    }

    /// Holds out `round(fraction · |groups|)` whole queries: `(rest, held_out)`.
    pub fn split_holdout(&self, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::invalid(format!(
                "holdout fraction must lie in [0, 1), got {fraction}"
            )));
        }
        let n_out = (fraction * self.groups.len() as f64).round() as usize;
        let order = self.shuffled_indices(seed);
        let held: HashSet<usize> = order[..n_out].iter().copied().collect();
        let rest = self.filter_indexed(|i| !held.contains(&i));
        let out = self.filter_indexed(|i| held.contains(&i));
        Ok((rest, out))
    }

    fn filter_indexed(&self, keep: impl Fn(usize) -> bool) -> Dataset {
        let ids: HashSet<&str> = self
            .groups
            .iter()
            .enumerate()
            .filter(|(i, _)| keep(*i))
            .map(|(_, g)| g.qid.as_str())
            .collect();
        self.filter(|g| ids.contains(g.qid.as_str()))
    }

    /// Fits min-max statistics on the labeled groups and applies them to
    /// every group, clipping to `[0, 1]`. A dataset that already carries
    /// statistics is returned unchanged.
    pub fn normalize(&self) -> Dataset {
        if self.norm_stats.is_some() {
            return self.clone();
        }
        NormStats::fit(self)
            .apply(self)
            .expect("stats fitted on this dataset")
    }

    /// Concatenates two datasets with disjoint query ids.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if !self.is_empty() && !other.is_empty() && self.num_features != other.num_features {
            return Err(Error::invalid(format!(
                "feature dimensions differ: {} vs {}",
                self.num_features, other.num_features
            )));
        }
        let mut groups = self.groups.clone();
        groups.extend(other.groups.iter().cloned());
        let mut out = Dataset::new(groups)?;
        if out.groups.is_empty() {
            out.num_features = self.num_features.max(other.num_features);
        }
        out.hidden = self.hidden.clone();
        out.hidden.extend(other.hidden.clone());
        out.norm_stats = self.norm_stats.clone().or_else(|| other.norm_stats.clone());
        Ok(out)
    }

    pub fn with_norm_stats(mut self, stats: Option<NormStats>) -> Self {
        self.norm_stats = stats;
        self
    }

    /// An empty dataset of the given width.
    pub fn empty(num_features: usize) -> Self {
        Self {
            groups: Vec::new(),
            num_features,
            hidden: BTreeMap::new(),
            norm_stats: None,
        }
    }

    pub fn to_svmlight_string(&self) -> Result<String> {
        let mut out = String::new();
        for g in &self.groups {
            let labels = g.labels.as_ref().ok_or_else(|| {
                Error::invalid(format!("query {} has no labels to serialize", g.qid))
            })?;
            for (r, &grade) in labels.iter().enumerate() {
                write!(out, "{grade} qid:{}", g.qid).expect("string write");
                for (c, v) in g.features.row_slice(r).iter().enumerate() {
                    write!(out, " {}:{v}", c + 1).expect("string write");
                }
                out.push('\n');
            }
        }
        Ok(out)
    }

    pub fn write_svmlight(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_svmlight_string()?).map_err(|e| Error::io(path, e))
    }
}

pub fn parse_svmlight(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_svmlight_str(&text)
}

/// Parses `<grade> qid:<id> <idx>:<val> ... [# comment]` lines. Documents
/// are grouped by qid in order of first appearance; absent indices are 0.
pub fn parse_svmlight_str(text: &str) -> Result<Dataset> {
    struct Pending {
        qid: String,
        rows: Vec<Vec<(usize, f64)>>,
        grades: Vec<u8>,
    }
    let mut pending: Vec<Pending> = Vec::new();
    let mut by_qid: HashMap<String, usize> = HashMap::new();
    let mut max_index = 0usize;

    for (lineno, raw) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse { line: line_no, msg };
        let mut tokens = content.split_whitespace();
        let grade_tok = tokens.next().expect("non-empty line");
        let grade: f64 = grade_tok
            .parse()
            .map_err(|_| err(format!("bad grade {grade_tok:?}")))?;
        if grade.fract() != 0.0 || !(0.0..=f64::from(MAX_GRADE)).contains(&grade) {
            return Err(err(format!("grade {grade_tok} outside 0..=4")));
        }
        let qid_tok = tokens
            .next()
            .ok_or_else(|| err("missing qid".into()))?;
        let qid = qid_tok
            .strip_prefix("qid:")
            .filter(|q| !q.is_empty())
            .ok_or_else(|| err(format!("expected qid:<id>, got {qid_tok:?}")))?;
        let mut row = Vec::new();
        let mut seen = HashSet::new();
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| err(format!("expected <index>:<value>, got {tok:?}")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| err(format!("bad feature index in {tok:?}")))?;
            if idx == 0 {
                return Err(err("feature indices are 1-based".into()));
            }
            let val: f64 = val
                .parse()
                .map_err(|_| err(format!("bad feature value in {tok:?}")))?;
            if !val.is_finite() {
                return Err(err(format!("non-finite feature value in {tok:?}")));
            }
            if !seen.insert(idx) {
                return Err(err(format!("feature {idx} repeated")));
            }
            max_index = max_index.max(idx);
            row.push((idx, val));
        }
        let slot = *by_qid.entry(qid.to_string()).or_insert_with(|| {
            pending.push(Pending {
                qid: qid.to_string(),
                rows: Vec::new(),
                grades: Vec::new(),
            });
            pending.len() - 1
        });
        pending[slot].rows.push(row);
        pending[slot].grades.push(grade as u8);
    }

    if pending.is_empty() {
        return Err(Error::Parse {
            line: 0,
            msg: "no documents in input".into(),
        });
    }
    let m = max_index.max(1);
    let groups = pending
        .into_iter()
        .map(|p| {
            let mut data = vec![0.0; p.rows.len() * m];
            for (r, row) in p.rows.iter().enumerate() {
                for &(idx, v) in row {
                    data[r * m + idx - 1] = v;
                }
            }
            QueryGroup::labeled(p.qid, Tensor::matrix(p.rows.len(), m, data)?, p.grades)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(groups)
}

/// Synthetic benchmark together with its latent utilities.
#[derive(Debug, Clone)]
pub struct SyntheticBenchmark {
    pub dataset: Dataset,
    /// Latent utility `u` of every document, per group.
    pub utilities: Vec<Vec<f64>>,
}

/// Standard-normal features; latent utility `u = w·x + 0.1·sin(v·x)` with
/// hidden seeded `w, v`; grades are per-query quintiles of `u`.
pub fn synth_generate(num_queries: usize, docs_per_query: usize, m: usize, seed: u64) -> Result<Dataset> {
    Ok(synth_generate_with_utilities(num_queries, docs_per_query, m, seed)?.dataset)
}

pub fn synth_generate_with_utilities(
    num_queries: usize,
    docs_per_query: usize,
    m: usize,
    seed: u64,
) -> Result<SyntheticBenchmark> {
    if num_queries == 0 || docs_per_query == 0 || m == 0 {
        return Err(Error::invalid("synthetic generator needs positive counts"));
    }
    let mut rng = crate::rng_from_seed(seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let w: Vec<f64> = (0..m).map(|_| normal()).collect();
    let v: Vec<f64> = (0..m).map(|_| normal()).collect();
    let mut groups = Vec::with_capacity(num_queries);
    let mut utilities = Vec::with_capacity(num_queries);
    for q in 0..num_queries {
        let data: Vec<f64> = (0..docs_per_query * m).map(|_| normal()).collect();
        let u: Vec<f64> = data
            .chunks(m)
            .map(|x| {
                let wx: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum();
                let vx: f64 = v.iter().zip(x).map(|(a, b)| a * b).sum();
                wx + 0.1 * vx.sin()
            })
            .collect();
        let grades = quintile_grades(&u);
        groups.push(QueryGroup::labeled(
            (q + 1).to_string(),
            Tensor::matrix(docs_per_query, m, data)?,
            grades,
        )?);
        utilities.push(u);
    }
    Ok(SyntheticBenchmark {
        dataset: Dataset::new(groups)?,
        utilities,
    })
}

/// Grade `⌊5·rank/n⌋` where `rank` is the ascending position of the value.
fn quintile_grades(values: &[f64]) -> Vec<u8> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut grades = vec![0u8; n];
    for (rank, &doc) in order.iter().enumerate() {
        grades[doc] = ((rank * NUM_GRADES) / n) as u8;
    }
    grades
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sparse_line() {
        let d = parse_svmlight_str("2 qid:7 1:0.5 3:-1.2\n").unwrap();
        assert_eq!(d.len(), 1);
        let g = &d.groups()[0];
        assert_eq!(g.qid, "7");
        assert_eq!(g.features.data(), &[0.5, 0.0, -1.2]);
        assert_eq!(g.labels.as_deref(), Some(&[2u8][..]));
    }

    #[test]
    fn groups_by_qid_in_file_order() {
        let d = parse_svmlight_str(
            "1 qid:7 1:1 # first\n0 qid:3 2:1\n# comment only\n\n4 qid:7 1:2\n",
        )
        .unwrap();
        assert_eq!(d.qids(), vec!["7", "3"]);
        assert_eq!(d.groups()[0].num_docs(), 2);
        assert_eq!(d.groups()[0].labels.as_deref(), Some(&[1u8, 4][..]));
        assert_eq!(d.num_features(), 2);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let cases = [
            ("1 qid:1 1:0\n5 qid:1 1:0\n", 2),
            ("1 qid:1 1:0\nx qid:1 1:0\n", 2),
            ("1 1:0\n", 1),
            ("1 qid:1 0:3\n", 1),
            ("1 qid:1 2\n", 1),
            ("1 qid:1 2:a\n", 1),
            ("1.5 qid:1 1:1\n", 1),
            ("1 qid:1 1:1 1:2\n", 1),
        ];
        for (text, line) in cases {
            match parse_svmlight_str(text) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?} gave {other:?}"),
            }
        }
        assert!(parse_svmlight_str("").is_err());
        assert!(parse_svmlight_str("# only a comment\n").is_err());
    }

    #[test]
    fn split_counts_and_determinism() {
        let d = synth_generate(100, 3, 2, 0).unwrap();
        let (s, manifest) = d.split_labeled_fraction(0.05, 1).unwrap();
        assert_eq!(s.labeled_ids().len(), 5);
        assert_eq!(s.unlabeled_ids().len(), 95);
        assert_eq!(manifest.labeled, s.labeled_ids());
        let (again, _) = d.split_labeled_fraction(0.05, 1).unwrap();
        assert_eq!(s, again);
        let (full, m) = d.split_labeled_fraction(1.0, 1).unwrap();
        assert!(full.unlabeled_ids().is_empty());
        assert!(m.unlabeled.is_empty());
        assert!(d.split_labeled_fraction(0.004, 1).is_err());
        assert!(d.split_labeled_fraction(0.0, 1).is_err());
        assert!(d.split_labeled_fraction(1.5, 1).is_err());
        assert!(s.split_labeled_fraction(0.5, 1).is_err());
    }

    #[test]
    fn hidden_labels_only_through_accessor() {
        let d = synth_generate(10, 4, 2, 3).unwrap();
        let (s, _) = d.split_labeled_fraction(0.3, 9).unwrap();
        for g in s.groups() {
            match g.provenance {
                Provenance::Unlabeled => {
                    assert!(g.labels.is_none());
                    let truth = d.select(&[g.qid.clone()]).unwrap().groups()[0].labels.clone();
                    assert_eq!(s.hidden_labels_for_evaluation(&g.qid), truth.as_deref());
                }
                _ => assert!(s.hidden_labels_for_evaluation(&g.qid).is_none()),
            }
        }
    }

    #[test]
    fn min_max_examples() {
        let groups = vec![QueryGroup::labeled(
            "1",
            Tensor::matrix(3, 2, vec![2.0, 3.0, 4.0, 3.0, 6.0, 3.0]).unwrap(),
            vec![0, 1, 2],
        )
        .unwrap()];
        let d = Dataset::new(groups).unwrap();
        let n = d.normalize();
        assert_eq!(n.groups()[0].features.data(), &[0.0, 0.0, 0.5, 0.0, 1.0, 0.0]);
        let stats = n.norm_stats().unwrap();
        assert_eq!(stats.apply_value(0, 8.0), 1.0);
        assert_eq!(stats.apply_value(0, 0.0), 0.0);
        assert_eq!(n.normalize(), n);
    }

    #[test]
    fn stats_ignore_unlabeled_groups() {
        let d = Dataset::new(vec![
            QueryGroup::labeled("a", Tensor::column(&[2.0, 6.0]).unwrap(), vec![0, 1]).unwrap(),
            QueryGroup::unlabeled("b", Tensor::column(&[8.0, 4.0]).unwrap()),
        ])
        .unwrap();
        let n = d.normalize();
        assert_eq!(n.groups()[1].features.data(), &[1.0, 0.5]);
    }

    #[test]
    fn synthetic_shapes() {
        let d = synth_generate(200, 25, 32, 7).unwrap();
        assert_eq!(d.len(), 200);
        for g in d.groups() {
            assert_eq!(g.features.shape(), &[25, 32]);
            assert!(g.labels.as_ref().unwrap().iter().all(|&l| l <= 4));
        }
        assert!(synth_generate(0, 1, 1, 0).is_err());
    }

    #[test]
    fn quintiles() {
        assert_eq!(quintile_grades(&[0.5, 0.1, 0.9, 0.3, 0.7]), vec![2, 0, 4, 1, 3]);
        assert_eq!(quintile_grades(&[1.0]), vec![0]);
    }

    #[test]
    fn holdout_is_disjoint() {
        let d = synth_generate(50, 2, 2, 1).unwrap();
        let (rest, test) = d.split_holdout(0.2, 4).unwrap();
        assert_eq!(test.len(), 10);
        assert_eq!(rest.len(), 40);
        let a: HashSet<_> = rest.qids().into_iter().collect();
        assert!(test.qids().iter().all(|q| !a.contains(q)));
    }

    #[test]
    fn unlabeled_cannot_be_serialized() {
        let d = Dataset::new(vec![QueryGroup::unlabeled("u", Tensor::zeros(1, 2))]).unwrap();
        assert!(d.to_svmlight_string().is_err());
    }

    #[test]
    fn concat_rejects_collisions() {
        let d = synth_generate(3, 2, 2, 1).unwrap();
        assert!(d.concat(&d).is_err());
    }
}
