//! Master-workers execution of independent per-entity block tasks.
//!
//! Entities form one sequence (users first, then items). A [`WorkPartition`]
//! cuts that sequence into contiguous ranges, one per worker, and each worker
//! writes only the output blocks of its own range. Because a block's value
//! depends on nothing but its own task, results are bitwise-identical for
//! every worker count.

use std::ops::Range;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::HdiDataset;
use crate::error::{Error, Result};
use crate::model::{BlockVector, Entity, Layout};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkPartition {
    worker_count: usize,
    assignments: Vec<Range<usize>>,
}

impl WorkPartition {
    /// Equal entity counts per worker. With two or more workers, the first
    /// half of the workers take the user blocks and the rest the item blocks.
    pub fn even(num_users: usize, num_items: usize, workers: usize) -> Result<Self> {
        Self::build(num_users, num_items, workers, |_| 1)
    }

    /// Like [`WorkPartition::even`] but each side is cut so the workers see
    /// roughly equal rating counts (each entity weighs `1 + degree`).
    pub fn balanced(data: &HdiDataset, workers: usize) -> Result<Self> {
        let nu = data.num_users();
        Self::build(nu, data.num_items(), workers, |k| {
            1 + if k < nu {
                data.by_user().degree(k)
            } else {
                data.by_item().degree(k - nu)
            }
        })
    }

    fn build(num_users: usize, num_items: usize, workers: usize, weight: impl Fn(usize) -> usize) -> Result<Self> {
        if workers == 0 {
            return Err(Error::Config("worker count must be at least 1".into()));
        }
        let total = num_users + num_items;
        let mut assignments = Vec::with_capacity(workers);
        if workers == 1 {
            assignments.push(0..total);
        } else {
            let user_workers = workers / 2;
            let item_workers = workers - user_workers;
            cut(0..num_users, user_workers, &weight, &mut assignments);
            cut(num_users..total, item_workers, &weight, &mut assignments);
        }
        Ok(WorkPartition {
            worker_count: workers,
            assignments,
        })
    }

    pub fn worker_count(&self) -> usize {
        self.worker_count
    }

    pub fn assignments(&self) -> &[Range<usize>] {
        &self.assignments
    }

    pub fn num_entities(&self) -> usize {
        self.assignments.last().map_or(0, |r| r.end)
    }
}

/// Splits `span` into `parts` contiguous ranges of near-equal total weight.
fn cut(span: Range<usize>, parts: usize, weight: &impl Fn(usize) -> usize, out: &mut Vec<Range<usize>>) {
    let mut prefix = Vec::with_capacity(span.len() + 1);
    prefix.push(0usize);
    for k in span.clone() {
        prefix.push(prefix[prefix.len() - 1] + weight(k));
    }
    let total = prefix[span.len()];
    let mut start = 0;
    for p in 1..=parts {
        let end = if p == parts {
            span.len()
        } else {
            // first boundary whose prefix weight reaches p/parts of the total
            prefix
                .partition_point(|&s| s * parts < total * p)
                .clamp(start, span.len())
        };
        out.push(span.start + start..span.start + end);
        start = end;
    }
}

/// Per-invocation timing and counters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub worker_seconds: Vec<f64>,
    /// Sum of the per-block counters returned by the task.
    pub counter: u64,
}

/// A long-lived pool plus the static partition it executes.
pub struct Executor {
    partition: WorkPartition,
    pool: Option<rayon::ThreadPool>,
}

impl std::fmt::Debug for Executor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Executor").field("partition", &self.partition).finish()
    }
}

impl Executor {
    /// Runs every block on the calling thread.
    pub fn sequential(layout: Layout) -> Self {
        Executor {
            partition: WorkPartition::even(layout.num_users, layout.num_items, 1).expect("one worker is valid"),
            pool: None,
        }
    }

    pub fn new(partition: WorkPartition) -> Result<Self> {
        let pool = if partition.worker_count() > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(partition.worker_count())
                    .thread_name(|k| format!("minihes-worker-{k}"))
                    .build()
                    .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(Executor { partition, pool })
    }

    pub fn with_threads(layout: Layout, threads: usize) -> Result<Self> {
        Self::new(WorkPartition::even(layout.num_users, layout.num_items, threads)?)
    }

    pub fn partition(&self) -> &WorkPartition {
        &self.partition
    }

    /// Evaluates `task` for every entity and assembles the blocks. The task
    /// receives the entity and its zeroed output block and returns a counter.
    /// On failure the lowest failing entity index is reported.
    pub fn run_blocks<F>(&self, layout: Layout, task: F) -> Result<(BlockVector, RunStats)>
    where
        F: Fn(Entity, &mut [f64]) -> Result<u64> + Sync,
    {
        if self.partition.num_entities() != layout.num_entities() {
            return Err(Error::LengthMismatch {
                expected: self.partition.num_entities(),
                actual: layout.num_entities(),
            });
        }
        let mut out = BlockVector::zeros(layout);
        let f = layout.f;
        let ranges = self.partition.assignments();

        let mut chunks = Vec::with_capacity(ranges.len());
        let mut rest = out.values_mut();
        for r in ranges {
            let (head, tail) = rest.split_at_mut(r.len() * f);
            chunks.push((r.clone(), head));
            rest = tail;
        }

        let work = |range: Range<usize>, chunk: &mut [f64]| -> WorkerOutcome {
            let started = Instant::now();
            let mut counter = 0u64;
            let mut failure = None;
            for (k, block) in range.clone().zip(chunk.chunks_exact_mut(f.max(1))) {
                match task(layout.entity(k), block) {
                    Ok(c) => counter += c,
                    Err(e) => {
                        failure = Some((k, e));
                        break;
                    }
                }
            }
            WorkerOutcome {
                seconds: started.elapsed().as_secs_f64(),
                counter,
                failure,
            }
        };

        let mut outcomes: Vec<Option<WorkerOutcome>> = (0..chunks.len()).map(|_| None).collect();
        match &self.pool {
            Some(pool) => pool.scope(|s| {
                for ((range, chunk), slot) in chunks.into_iter().zip(outcomes.iter_mut()) {
                    let work = &work;
                    s.spawn(move |_| *slot = Some(work(range, chunk)));
                }
            }),
            None => {
                for ((range, chunk), slot) in chunks.into_iter().zip(outcomes.iter_mut()) {
                    *slot = Some(work(range, chunk));
                }
            }
        }

        let mut stats = RunStats::default();
        let mut first_failure: Option<(usize, Error)> = None;
        for o in outcomes.into_iter().flatten() {
            stats.worker_seconds.push(o.seconds);
            stats.counter += o.counter;
            if let Some((k, e)) = o.failure {
                if first_failure.as_ref().is_none_or(|(j, _)| k < *j) {
                    first_failure = Some((k, e));
                }
            }
        }
        match first_failure {
            Some((_, e @ Error::NonFiniteCg { .. })) => Err(e),
            Some((k, e)) => Err(Error::BlockTask {
                index: k,
                reason: e.to_string(),
            }),
            None => Ok((out, stats)),
        }
    }
}

struct WorkerOutcome {
    seconds: f64,
    counter: u64,
    failure: Option<(usize, Error)>,
}
