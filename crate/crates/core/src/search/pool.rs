//! Boss/worker evaluation of substitution jobs.
//!
//! The boss splits every job into vocabulary shards and pushes one task per
//! shard onto a shared queue. Workers are stateless: they score their shard
//! and send back only its top-k. A failed task is queued once more; a second
//! failure aborts the search.

use std::ops::Range;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::thread::Scope;

use crossbeam_channel::{unbounded, Receiver, Sender};

use super::{merge_shard_results, score_candidates_parallel, Evaluator, Job, TokenScore};
use crate::embedding::Objective;
use crate::encoder::{TextEncoder, Vocabulary};
use crate::error::{Error, Result};

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn run_task(
    enc: &dyn TextEncoder,
    objective: &Objective,
    job: &Job,
    shard: &Range<usize>,
    k: usize,
) -> std::result::Result<Vec<TokenScore>, String> {
    match catch_unwind(AssertUnwindSafe(|| {
        score_candidates_parallel(&job.base, job.position, shard.clone(), enc, objective, k)
    })) {
        Ok(Ok(hits)) => Ok(hits),
        Ok(Err(e)) => Err(e.to_string()),
        Err(panic) => Err(panic
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| panic.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "worker panicked".into())),
    }
}

/// Evaluates shards on the calling thread, in shard order.
pub(crate) struct InlineEvaluator<'a> {
    enc: &'a dyn TextEncoder,
    objective: &'a Objective,
    vocab: &'a Vocabulary,
    shards: Vec<Range<usize>>,
    k: usize,
}

impl<'a> InlineEvaluator<'a> {
    pub fn new(
        enc: &'a dyn TextEncoder,
        objective: &'a Objective,
        vocab: &'a Vocabulary,
        shards: Vec<Range<usize>>,
        k: usize,
    ) -> Self {
        Self {
            enc,
            objective,
            vocab,
            shards,
            k,
        }
    }
}

impl Evaluator for InlineEvaluator<'_> {
    fn evaluate(&mut self, jobs: &[Job]) -> Result<Vec<Vec<TokenScore>>> {
        jobs.iter()
            .map(|job| {
                let parts = self
                    .shards
                    .iter()
                    .map(|shard| {
                        run_task(self.enc, self.objective, job, shard, self.k)
                            .or_else(|_| run_task(self.enc, self.objective, job, shard, self.k))
                            .map_err(|message| Error::WorkerFailure {
                                shard: shard.clone(),
                                position: job.position,
                                message,
                            })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(merge_shard_results(
                    parts,
                    &job.base,
                    job.position,
                    self.vocab,
                    self.k,
                ))
            })
            .collect()
    }
}

struct Task {
    job_index: usize,
    shard_index: usize,
    job: Job,
    shard: Range<usize>,
    attempt: u8,
}

struct Outcome {
    task: Task,
    result: std::result::Result<Vec<TokenScore>, String>,
}

pub(crate) struct PoolEvaluator<'a> {
    tasks: Sender<Task>,
    outcomes: Receiver<Outcome>,
    vocab: &'a Vocabulary,
    shards: Vec<Range<usize>>,
    k: usize,
}

impl<'a> PoolEvaluator<'a> {
    /// Spawns `workers` scoped threads; they exit when the evaluator is dropped.
    pub fn start<'scope, 'env>(
        scope: &'scope Scope<'scope, 'env>,
        workers: usize,
        enc: &'env dyn TextEncoder,
        objective: &'env Objective,
        vocab: &'a Vocabulary,
        shards: Vec<Range<usize>>,
        k: usize,
    ) -> Self
    where
        'env: 'scope,
    {
        let (task_tx, task_rx) = unbounded::<Task>();
        let (out_tx, out_rx) = unbounded::<Outcome>();
        for _ in 0..workers {
            let task_rx = task_rx.clone();
            let out_tx = out_tx.clone();
            scope.spawn(move || {
                for task in task_rx {
                    let result = run_task(enc, objective, &task.job, &task.shard, k);
                    if out_tx.send(Outcome { task, result }).is_err() {
                        break;
                    }
                }
            });
        }
        Self {
            tasks: task_tx,
            outcomes: out_rx,
            vocab,
            shards,
            k,
        }
    }
}

impl Evaluator for PoolEvaluator<'_> {
    fn evaluate(&mut self, jobs: &[Job]) -> Result<Vec<Vec<TokenScore>>> {
        let mut parts: Vec<Vec<Option<Vec<TokenScore>>>> =
            vec![vec![None; self.shards.len()]; jobs.len()];
        let mut pending = 0usize;
        for (job_index, job) in jobs.iter().enumerate() {
            for (shard_index, shard) in self.shards.iter().enumerate() {
                self.tasks
                    .send(Task {
                        job_index,
                        shard_index,
                        job: job.clone(),
                        shard: shard.clone(),
                        attempt: 0,
                    })
                    .map_err(|_| Error::Protocol("worker pool is gone".into()))?;
                pending += 1;
            }
        }
        while pending > 0 {
            let Outcome { task, result } = self
                .outcomes
                .recv()
                .map_err(|_| Error::Protocol("worker pool is gone".into()))?;
            match result {
                Ok(hits) => {
                    parts[task.job_index][task.shard_index] = Some(hits);
                    pending -= 1;
                }
                Err(message) if task.attempt == 0 => {
                    log::warn!(
                        "worker failed on shard {:?} position {}: {message}; retrying",
                        task.shard,
                        task.job.position
                    );
                    self.tasks
                        .send(Task { attempt: 1, ..task })
                        .map_err(|_| Error::Protocol("worker pool is gone".into()))?;
                }
                Err(message) => {
                    return Err(Error::WorkerFailure {
                        shard: task.shard,
                        position: task.job.position,
                        message,
                    })
                }
            }
        }
        Ok(jobs
            .iter()
            .zip(parts)
            .map(|(job, p)| {
                let p = p
                    .into_iter()
                    .map(|x| x.expect("every shard answered"))
                    .collect();
                merge_shard_results(p, &job.base, job.position, self.vocab, self.k)
            })
            .collect())
    }
}
