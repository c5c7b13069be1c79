//! Beam local search over fixed-length token sequences.
//!
//! The boss keeps the beam and the per-member sets of positions not yet
//! tried. Each main-loop iteration picks one untried position per beam
//! member, asks the workers to score every single-token substitution at that
//! position, keeps the top `k` of the union with the current beam, and resets
//! all position sets whenever the beam changes. The loop ends once no beam
//! member has an untried position left.

mod export;
mod pool;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use export::{
    read_trajectory_csv, trajectory_csv, write_metadata, write_trajectory_csv, RunMetadata,
    TRAJECTORY_HEADER,
};
pub use pool::default_workers;

use crate::embedding::{Objective, SimilarityConfig, TuningSet};
use crate::encoder::{require_vocab, TextEncoder, TokenSequence, Vocabulary};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamEntry {
    pub tokens: TokenSequence,
    pub text: String,
    pub score: f64,
}

/// Beam order: score descending, then surface text ascending.
pub fn beam_order(a: &BeamEntry, b: &BeamEntry) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.text.cmp(&b.text))
}

/// Keeps the `k` best entries by [`beam_order`] after collapsing entries
/// with the same surface text to the highest-scoring one.
pub fn topk_select(mut candidates: Vec<BeamEntry>, k: usize) -> Vec<BeamEntry> {
    candidates.sort_by(beam_order);
    let mut seen = HashSet::with_capacity(candidates.len());
    candidates.retain(|c| seen.insert(c.text.clone()));
    candidates.truncate(k);
    candidates
}

/// How the position to substitute is drawn from a member's untried set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionOrder {
    /// Uniformly at random from the seeded run generator.
    #[default]
    Random,
    /// Lowest untried position first (greedy left-to-right baseline when k = 1).
    Sequential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub k: usize,
    pub seed: u64,
    pub workers: usize,
    pub position_order: PositionOrder,
    /// Try every untried position of a member in one iteration instead of one.
    pub sweep_all_positions: bool,
    /// Defaults to `10 * length * k`.
    pub max_iterations: Option<usize>,
    /// Vocabulary shards per worker.
    pub shards_per_worker: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            k: 5,
            seed: 0,
            workers: 1,
            position_order: PositionOrder::Random,
            sweep_all_positions: false,
            max_iterations: None,
            shards_per_worker: 4,
        }
    }
}

impl SearchConfig {
    pub fn with_k(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            ..Self::default()
        }
    }

    /// Greedy left-to-right local search: k = 1, sequential positions.
    pub fn greedy(seed: u64) -> Self {
        Self {
            k: 1,
            seed,
            position_order: PositionOrder::Sequential,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub iteration: usize,
    pub best_score: f64,
    /// Cumulative number of iterations in which the best sequence changed.
    pub substitutions: usize,
    /// Candidate sequences encoded during this iteration.
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub best: BeamEntry,
    pub initial: BeamEntry,
    pub final_beam: Vec<BeamEntry>,
    pub iterations: usize,
    pub substitutions_applied: usize,
    /// Row 0 is the initial state; row `t` is the state after iteration `t`.
    pub trajectory: Vec<TrajectoryPoint>,
    pub evaluations: usize,
    pub wall_time_secs: f64,
    pub k: usize,
    pub seed: u64,
}

/// `(token id, score)` for one substitution at a fixed position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    pub token: u32,
    pub score: f64,
}

/// Worker-side evaluation of one vocabulary shard.
///
/// Scores every sequence `base` with position `position` replaced by a token
/// in `shard`, and returns the `k` best under the beam order.
pub fn score_candidates_parallel(
    base: &TokenSequence,
    position: usize,
    shard: Range<usize>,
    enc: &dyn TextEncoder,
    objective: &Objective,
    k: usize,
) -> Result<Vec<TokenScore>> {
    let vocab = require_vocab(enc)?;
    if position >= base.len() {
        return Err(Error::InvalidArgument(format!(
            "position {position} out of bounds for length {}",
            base.len()
        )));
    }
    if shard.is_empty() || shard.end > vocab.len() {
        return Err(Error::InvalidArgument(format!(
            "shard {shard:?} is empty or exceeds vocabulary of {}",
            vocab.len()
        )));
    }
    let seqs: Vec<TokenSequence> = shard
        .clone()
        .map(|v| base.substitute(position, v as u32))
        .collect();
    let embeddings = enc.encode_sequences(&seqs)?;
    let mut scored = shard
        .zip(&embeddings)
        .map(|(v, e)| {
            Ok(TokenScore {
                token: v as u32,
                score: objective.eval(e)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    sort_token_scores(&mut scored, base, position, vocab);
    scored.truncate(k);
    Ok(scored)
}

fn sort_token_scores(
    scored: &mut [TokenScore],
    base: &TokenSequence,
    position: usize,
    vocab: &Vocabulary,
) {
    scored.sort_by(|a, b| {
        b.score.total_cmp(&a.score).then_with(|| {
            let ta = vocab.render(&base.substitute(position, a.token));
            let tb = vocab.render(&base.substitute(position, b.token));
            ta.cmp(&tb)
        })
    });
}

/// Merges per-shard top-k lists into the top-k of their union.
pub fn merge_shard_results(
    parts: Vec<Vec<TokenScore>>,
    base: &TokenSequence,
    position: usize,
    vocab: &Vocabulary,
    k: usize,
) -> Vec<TokenScore> {
    let mut all: Vec<TokenScore> = parts.into_iter().flatten().collect();
    sort_token_scores(&mut all, base, position, vocab);
    all.truncate(k);
    all
}

/// Splits `0..vocab_size` into at most `count` contiguous non-empty ranges.
pub fn vocab_shards(vocab_size: usize, count: usize) -> Vec<Range<usize>> {
    let count = count.clamp(1, vocab_size.max(1));
    let base = vocab_size / count;
    let extra = vocab_size % count;
    let mut start = 0;
    (0..count)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

/// One substitution job: all tokens at `position` of `base`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub(crate) struct Job {
    pub base: TokenSequence,
    pub position: usize,
}

pub(crate) trait Evaluator {
    /// Top-k substitutions for every job, in job order.
    fn evaluate(&mut self, jobs: &[Job]) -> Result<Vec<Vec<TokenScore>>>;
}

/// Runs the beam local search from `init`.
pub fn beam_local_search(
    init: &TokenSequence,
    tuning: &TuningSet,
    enc: &dyn TextEncoder,
    cfg: &SimilarityConfig,
    search: &SearchConfig,
) -> Result<SearchReport> {
    if search.k == 0 {
        return Err(Error::InvalidBeamSize(0));
    }
    let vocab = require_vocab(enc)?;
    vocab.check(init)?;
    if enc.dim() != tuning.dim() {
        return Err(Error::DimMismatch {
            expected: tuning.dim(),
            actual: enc.dim(),
        });
    }
    let objective = Objective::new(tuning, *cfg)?;
    let shards = vocab_shards(
        vocab.len(),
        search.workers.max(1) * search.shards_per_worker.max(1),
    );
    if search.workers <= 1 {
        let mut eval = pool::InlineEvaluator::new(enc, &objective, vocab, shards, search.k);
        run_boss(init, enc, &objective, vocab, search, &mut eval)
    } else {
        std::thread::scope(|scope| {
            let mut eval = pool::PoolEvaluator::start(
                scope,
                search.workers,
                enc,
                &objective,
                vocab,
                shards,
                search.k,
            );
            run_boss(init, enc, &objective, vocab, search, &mut eval)
        })
    }
}

struct Memo<'e, E: Evaluator> {
    inner: &'e mut E,
    cache: HashMap<Job, Vec<TokenScore>>,
}

impl<E: Evaluator> Memo<'_, E> {
    /// Evaluates `jobs`, reusing results for jobs already seen this run.
    /// Returns the results and how many candidates were freshly encoded.
    fn evaluate(
        &mut self,
        jobs: &[Job],
        vocab_size: usize,
    ) -> Result<(Vec<Vec<TokenScore>>, usize)> {
        let fresh: Vec<Job> = jobs
            .iter()
            .filter(|j| !self.cache.contains_key(*j))
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let results = self.inner.evaluate(&fresh)?;
        let evaluations = fresh.len() * vocab_size;
        for (job, r) in fresh.into_iter().zip(results) {
            self.cache.insert(job, r);
        }
        Ok((
            jobs.iter().map(|j| self.cache[j].clone()).collect(),
            evaluations,
        ))
    }
}

impl PartialOrd for Job {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Job {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.base
            .cmp(&other.base)
            .then(self.position.cmp(&other.position))
    }
}

fn run_boss<E: Evaluator>(
    init: &TokenSequence,
    enc: &dyn TextEncoder,
    objective: &Objective,
    vocab: &Vocabulary,
    search: &SearchConfig,
    evaluator: &mut E,
) -> Result<SearchReport> {
    let started = web_time::Instant::now();
    let k = search.k;
    let length = init.len();
    let max_iterations = search.max_iterations.unwrap_or(10 * length * k);
    let mut rng = ChaCha8Rng::seed_from_u64(search.seed);
    let mut memo = Memo {
        inner: evaluator,
        cache: HashMap::new(),
    };

    let init_score = objective.eval(&enc.encode_sequences(std::slice::from_ref(init))?[0])?;
    let initial = BeamEntry {
        tokens: init.clone(),
        text: vocab.render(init),
        score: init_score,
    };
    let full: BTreeSet<usize> = (0..length).collect();
    let mut beam = vec![initial.clone()];
    let mut remaining: HashMap<TokenSequence, BTreeSet<usize>> = HashMap::new();
    remaining.insert(init.clone(), full.clone());

    let mut t = 0;
    let mut substitutions = 0;
    let mut total_evaluations = 0;
    let mut trajectory = vec![TrajectoryPoint {
        iteration: 0,
        best_score: init_score,
        substitutions: 0,
        evaluations: 1,
    }];

    while beam
        .iter()
        .any(|e| remaining.get(&e.tokens).is_some_and(|p| !p.is_empty()))
    {
        if t >= max_iterations {
            return Err(Error::TimeoutAbort {
                limit: max_iterations,
            });
        }
        t += 1;

        let mut jobs = Vec::new();
        for entry in &beam {
            let Some(untried) = remaining.get_mut(&entry.tokens) else {
                continue;
            };
            if untried.is_empty() {
                continue;
            }
            let picks: Vec<usize> = if search.sweep_all_positions {
                std::mem::take(untried).into_iter().collect()
            } else {
                let i = match search.position_order {
                    PositionOrder::Random => {
                        let n = rng.random_range(0..untried.len());
                        *untried.iter().nth(n).expect("index within set")
                    }
                    PositionOrder::Sequential => *untried.first().expect("non-empty set"),
                };
                untried.remove(&i);
                vec![i]
            };
            jobs.extend(picks.into_iter().map(|position| Job {
                base: entry.tokens.clone(),
                position,
            }));
        }

        let (results, evaluations) = memo.evaluate(&jobs, vocab.len())?;
        total_evaluations += evaluations;

        let mut candidates = beam.clone();
        for (job, hits) in jobs.iter().zip(results) {
            candidates.extend(hits.into_iter().map(|h| {
                let tokens = job.base.substitute(job.position, h.token);
                BeamEntry {
                    text: vocab.render(&tokens),
                    tokens,
                    score: h.score,
                }
            }));
        }
        let next = topk_select(candidates, k);

        let changed =
            next.len() != beam.len() || next.iter().zip(&beam).any(|(a, b)| a.text != b.text);
        if next[0].text != beam[0].text {
            substitutions += 1;
        }
        if changed {
            remaining = next
                .iter()
                .map(|e| (e.tokens.clone(), full.clone()))
                .collect();
        }
        beam = next;
        trajectory.push(TrajectoryPoint {
            iteration: t,
            best_score: beam[0].score,
            substitutions,
            evaluations,
        });
    }

    Ok(SearchReport {
        best: beam[0].clone(),
        initial,
        final_beam: beam,
        iterations: t,
        substitutions_applied: substitutions,
        trajectory,
        evaluations: total_evaluations,
        wall_time_secs: started.elapsed().as_secs_f64(),
        k,
        seed: search.seed,
    })
}

#[cfg(test)]
mod tests;
