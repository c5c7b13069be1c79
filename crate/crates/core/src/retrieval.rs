//! Image-to-text retrieval with hub-text contamination.
//!
//! Retrieval is an exhaustive cosine scan. Metrics use binary relevance:
//!
//! * `NDCG@c`: DCG with gain `1 / log2(rank + 1)` over relevant hits in the
//!   top `c`, divided by the ideal DCG for `min(|rel|, c)` hits.
//! * `MAP@c`: sum of precision at each relevant rank `<= c`, divided by
//!   `min(|rel|, c)` (or by `|rel|`, see [`MapDenominator`]).
//! * `Recall@c`, `Precision@c`: `|rel ∩ top-c|` over `|rel|` and `c`.
//! * `MRR@c`: reciprocal rank of the first relevant hit within `c`, else 0.
//!
//! Every metric is averaged over queries in query-id order.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::{check_dims, dot, Embedding, KahanSum, NORM_TOLERANCE};
use crate::encoder::TextEncoder;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Doc {
    pub id: String,
    pub embedding: Embedding,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalIndex {
    docs: Vec<Doc>,
    dim: usize,
}

impl RetrievalIndex {
    pub fn new(docs: Vec<Doc>) -> Result<Self> {
        let dim = docs
            .first()
            .map(|d| d.embedding.dim())
            .ok_or_else(|| Error::InvalidArgument("index has no documents".into()))?;
        let mut seen = HashSet::with_capacity(docs.len());
        for d in &docs {
            check_dims(dim, d.embedding.dim())?;
            if !seen.insert(d.id.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate doc id {:?}",
                    d.id
                )));
            }
            let n = d.embedding.norm();
            if n <= NORM_TOLERANCE {
                return Err(Error::ZeroNorm { norm: n });
            }
        }
        Ok(Self { docs, dim })
    }

    /// Encodes `(id, text)` pairs into an index.
    pub fn from_texts(entries: &[(String, String)], enc: &dyn TextEncoder) -> Result<Self> {
        let texts: Vec<String> = entries.iter().map(|(_, t)| t.clone()).collect();
        let embeddings = enc.encode_texts(&texts)?;
        Self::new(
            entries
                .iter()
                .zip(embeddings)
                .map(|((id, text), embedding)| Doc {
                    id: id.clone(),
                    embedding,
                    text: text.clone(),
                })
                .collect(),
        )
    }

    pub fn docs(&self) -> &[Doc] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn contains(&self, id: &str) -> bool {
        self.docs.iter().any(|d| d.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContaminationConfig {
    pub hub_text: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuerySet {
    pub queries: Vec<(String, Embedding)>,
    pub qrels: BTreeMap<String, BTreeSet<String>>,
}

impl QuerySet {
    /// Checks that every query has judgements and every judged doc exists.
    pub fn validate(&self, index: &RetrievalIndex) -> Result<()> {
        let ids: HashSet<&str> = index.docs().iter().map(|d| d.id.as_str()).collect();
        for (qid, e) in &self.queries {
            check_dims(index.dim(), e.dim())?;
            let rel = self
                .qrels
                .get(qid)
                .filter(|r| !r.is_empty())
                .ok_or_else(|| {
                    Error::InvalidArgument(format!("query {qid:?} has no relevant docs"))
                })?;
            if let Some(missing) = rel.iter().find(|d| !ids.contains(d.as_str())) {
                return Err(Error::InvalidArgument(format!(
                    "relevant doc {missing:?} for query {qid:?} is not in the index"
                )));
            }
        }
        Ok(())
    }
}

/// Appends `count` copies of the hub text, ids `hub#0`, `hub#1`, ...
pub fn contaminate(
    index: &RetrievalIndex,
    cfg: &ContaminationConfig,
    enc: &dyn TextEncoder,
) -> Result<RetrievalIndex> {
    if cfg.count == 0 {
        return Ok(index.clone());
    }
    let hub = enc
        .encode_texts(std::slice::from_ref(&cfg.hub_text))?
        .remove(0);
    check_dims(index.dim(), hub.dim())?;
    let mut docs = index.docs.clone();
    docs.extend((0..cfg.count).map(|i| Doc {
        id: format!("hub#{i}"),
        embedding: hub.clone(),
        text: cfg.hub_text.clone(),
    }));
    RetrievalIndex::new(docs)
}

/// Doc ids by cosine similarity to `query`, best first; ties by id.
pub fn retrieve_topk(index: &RetrievalIndex, query: &Embedding, k: usize) -> Result<Vec<String>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    check_dims(index.dim(), query.dim())?;
    let qn = query.norm();
    if qn <= NORM_TOLERANCE {
        return Err(Error::ZeroNorm { norm: qn });
    }
    let mut scored: Vec<(f64, &str)> = index
        .docs
        .iter()
        .map(|d| {
            let s = dot(query.as_slice(), d.embedding.as_slice()) / (qn * d.embedding.norm());
            (s, d.id.as_str())
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    scored.truncate(k);
    Ok(scored.into_iter().map(|(_, id)| id.to_owned()).collect())
}

/// Normaliser of truncated average precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapDenominator {
    /// `min(|rel|, c)`: a perfect top-`c` ranking scores 1.
    #[default]
    MinRelevantCutoff,
    /// `|rel|`, as in trec_eval's `map_cut`.
    Relevant,
}

impl std::str::FromStr for MapDenominator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min_relevant_cutoff" | "min" => Ok(Self::MinRelevantCutoff),
            "relevant" | "trec" => Ok(Self::Relevant),
            other => Err(Error::InvalidArgument(format!(
                "unknown MAP denominator {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cutoffs {
    pub ndcg: Vec<usize>,
    pub map: Vec<usize>,
    pub recall: Vec<usize>,
    pub precision: Vec<usize>,
    pub mrr: Vec<usize>,
    #[serde(default)]
    pub map_denominator: MapDenominator,
}

impl Default for Cutoffs {
    fn default() -> Self {
        Self {
            ndcg: vec![1, 10],
            map: vec![1, 10],
            recall: vec![1, 1000],
            precision: vec![1, 5],
            mrr: vec![1, 10],
            map_denominator: MapDenominator::default(),
        }
    }
}

impl Cutoffs {
    pub fn depth(&self) -> usize {
        [
            &self.ndcg,
            &self.map,
            &self.recall,
            &self.precision,
            &self.mrr,
        ]
        .into_iter()
        .flatten()
        .copied()
        .max()
        .unwrap_or(1)
    }

    fn validate(&self) -> Result<()> {
        if [
            &self.ndcg,
            &self.map,
            &self.recall,
            &self.precision,
            &self.mrr,
        ]
        .into_iter()
        .flatten()
        .any(|&c| c == 0)
        {
            return Err(Error::InvalidArgument("cutoffs must be at least 1".into()));
        }
        Ok(())
    }
}

/// Metric name (`"NDCG@10"`, `"Recall@1000"`, ...) to value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MetricsReport(pub BTreeMap<String, f64>);

impl MetricsReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.0.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

pub fn ndcg_at(ranking: &[String], relevant: &BTreeSet<String>, c: usize) -> f64 {
    let dcg: f64 = ranking
        .iter()
        .take(c)
        .enumerate()
        .filter(|(_, d)| relevant.contains(*d))
        .map(|(i, _)| 1.0 / ((i + 2) as f64).log2())
        .sum();
    let ideal: f64 = (0..relevant.len().min(c))
        .map(|i| 1.0 / ((i + 2) as f64).log2())
        .sum();
    if ideal == 0.0 {
        0.0
    } else {
        dcg / ideal
    }
}

/// Truncated average precision with the `min(|rel|, c)` denominator.
pub fn average_precision_at(ranking: &[String], relevant: &BTreeSet<String>, c: usize) -> f64 {
    let denom = relevant.len().min(c);
    ap_sum(ranking, relevant, c) / denom.max(1) as f64
}

/// Truncated average precision with the `|rel|` denominator.
pub fn average_precision_full_at(ranking: &[String], relevant: &BTreeSet<String>, c: usize) -> f64 {
    ap_sum(ranking, relevant, c) / relevant.len().max(1) as f64
}

fn ap_sum(ranking: &[String], relevant: &BTreeSet<String>, c: usize) -> f64 {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, d) in ranking.iter().take(c).enumerate() {
        if relevant.contains(d) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum
}

fn hits_at(ranking: &[String], relevant: &BTreeSet<String>, c: usize) -> usize {
    ranking
        .iter()
        .take(c)
        .filter(|d| relevant.contains(*d))
        .count()
}

pub fn recall_at(ranking: &[String], relevant: &BTreeSet<String>, c: usize) -> f64 {
    hits_at(ranking, relevant, c) as f64 / relevant.len() as f64
}

pub fn precision_at(ranking: &[String], relevant: &BTreeSet<String>, c: usize) -> f64 {
    hits_at(ranking, relevant, c) as f64 / c as f64
}

pub fn reciprocal_rank_at(ranking: &[String], relevant: &BTreeSet<String>, c: usize) -> f64 {
    ranking
        .iter()
        .take(c)
        .position(|d| relevant.contains(d))
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

/// Averages each metric over the queries in `qrels`.
pub fn compute_ir_metrics(
    rankings: &BTreeMap<String, Vec<String>>,
    qrels: &BTreeMap<String, BTreeSet<String>>,
    cutoffs: &Cutoffs,
) -> Result<MetricsReport> {
    cutoffs.validate()?;
    if qrels.is_empty() {
        return Err(Error::InvalidArgument("no queries to evaluate".into()));
    }
    type MetricFn = fn(&[String], &BTreeSet<String>, usize) -> f64;
    let metrics: [(&str, &[usize], MetricFn); 5] = [
        ("NDCG", &cutoffs.ndcg, ndcg_at),
        (
            "MAP",
            &cutoffs.map,
            match cutoffs.map_denominator {
                MapDenominator::MinRelevantCutoff => average_precision_at,
                MapDenominator::Relevant => average_precision_full_at,
            },
        ),
        ("Recall", &cutoffs.recall, recall_at),
        ("Precision", &cutoffs.precision, precision_at),
        ("MRR", &cutoffs.mrr, reciprocal_rank_at),
    ];
    let mut sums: BTreeMap<String, KahanSum> = BTreeMap::new();
    for (qid, relevant) in qrels {
        if relevant.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "query {qid:?} has no relevant docs"
            )));
        }
        let ranking = rankings
            .get(qid)
            .ok_or_else(|| Error::MissingRanking(qid.clone()))?;
        for (name, cs, f) in &metrics {
            for &c in cs.iter() {
                sums.entry(format!("{name}@{c}"))
                    .or_default()
                    .add(f(ranking, relevant, c));
            }
        }
    }
    let n = qrels.len() as f64;
    Ok(MetricsReport(
        sums.into_iter().map(|(k, s)| (k, s.value() / n)).collect(),
    ))
}

pub fn rank_queries(
    index: &RetrievalIndex,
    queries: &QuerySet,
    depth: usize,
) -> Result<BTreeMap<String, Vec<String>>> {
    queries
        .queries
        .iter()
        .map(|(qid, e)| Ok((qid.clone(), retrieve_topk(index, e, depth)?)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContaminationRow {
    pub count: usize,
    pub metrics: MetricsReport,
}

/// Metrics at each contamination level in `counts` (ascending).
pub fn run_contamination_experiment(
    index: &RetrievalIndex,
    queries: &QuerySet,
    hub_text: &str,
    counts: &[usize],
    enc: &dyn TextEncoder,
    cutoffs: &Cutoffs,
) -> Result<Vec<ContaminationRow>> {
    if counts.is_empty() || counts.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument(
            "counts must be non-empty and ascending".into(),
        ));
    }
    queries.validate(index)?;
    let depth = cutoffs.depth();
    counts
        .iter()
        .map(|&count| {
            let contaminated = contaminate(
                index,
                &ContaminationConfig {
                    hub_text: hub_text.to_owned(),
                    count,
                },
                enc,
            )?;
            let rankings = rank_queries(&contaminated, queries, depth)?;
            Ok(ContaminationRow {
                count,
                metrics: compute_ir_metrics(&rankings, &queries.qrels, cutoffs)?,
            })
        })
        .collect()
}

/// `query_id\tdoc_id` per line.
pub fn load_qrels(path: impl AsRef<Path>) -> Result<BTreeMap<String, BTreeSet<String>>> {
    let mut out: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (lineno, q, d) in read_pairs(path.as_ref())? {
        if q.is_empty() || d.is_empty() {
            return Err(Error::parse(path.as_ref(), lineno, "empty id"));
        }
        out.entry(q).or_default().insert(d);
    }
    Ok(out)
}

/// `doc_id\ttext` per line.
pub fn load_docs(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    Ok(read_pairs(path.as_ref())?
        .into_iter()
        .map(|(_, a, b)| (a, b))
        .collect())
}

fn read_pairs(path: &Path) -> Result<Vec<(usize, String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (a, b) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, i + 1, "expected two tab-separated fields"))?;
        out.push((i + 1, a.trim().to_owned(), b.trim().to_owned()));
    }
    if out.is_empty() {
        return Err(Error::EmptyFile(path.to_owned()));
    }
    Ok(out)
}
