use std::collections::{HashSet, VecDeque};
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, unbounded, RecvTimeoutError, TrySendError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Requeue policy for failed tasks: attempt `k` (0-based) that fails is
/// retried after `backoff * 2^k`, up to `max_retries` times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_retries: usize,
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 2,
            backoff_ms: 1,
        }
    }
}

/// Transient failures to inject, as `(task id, attempt)` pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FaultPlan {
    faults: HashSet<(usize, usize)>,
}

impl FaultPlan {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn fail(mut self, task: usize, attempt: usize) -> Self {
        self.faults.insert((task, attempt));
        self
    }

    pub fn should_fail(&self, task: usize, attempt: usize) -> bool {
        self.faults.contains(&(task, attempt))
    }
}

/// Worker context handed to the task body.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WorkerCtx {
    pub worker: usize,
    pub device: usize,
}

/// One attempt at one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task: usize,
    pub kind: String,
    pub worker: usize,
    pub device: usize,
    pub attempt: usize,
    /// Seconds since the start of the run.
    pub start_s: f64,
    pub end_s: f64,
    pub ok: bool,
    pub error: Option<String>,
}

pub fn write_jsonl<W: Write>(records: &[TaskRecord], mut out: W) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Worker layout and scheduling knobs of one run.
#[derive(Debug, Clone, Default)]
pub struct SchedulerOptions {
    pub retry: RetryPolicy,
    pub faults: FaultPlan,
    /// When set, each worker sleeps a seeded random few microseconds before
    /// every task to perturb the interleaving.
    pub interleave_seed: Option<u64>,
}

/// Final state of one task after all attempts.
pub type Outcome<T> = std::result::Result<T, String>;

pub struct RunOutput<R> {
    /// Outcome per task, in task order.
    pub outcomes: Vec<Outcome<R>>,
    pub records: Vec<TaskRecord>,
    pub retries: usize,
}

struct Dispatch {
    task: usize,
    attempt: usize,
}

struct Completion<R> {
    task: usize,
    attempt: usize,
    result: Outcome<R>,
    record: TaskRecord,
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = p.downcast_ref::<String>() {
        s.clone()
    } else {
        "worker panicked".into()
    }
}

/// Runs `tasks` on `devices.len()` worker threads, worker `w` bound to device
/// `devices[w]`. The master feeds a bounded queue, workers pull from it, and
/// completions return over a channel. Failed or panicking attempts are
/// requeued per the retry policy; a task that exhausts its retries is
/// recorded as failed and never blocks the rest.
pub fn run_tasks<T, R, F>(tasks: &[T], devices: &[usize], kind: impl Fn(&T) -> String + Sync, opts: &SchedulerOptions, body: F) -> Result<RunOutput<R>>
where
    T: Sync,
    R: Send,
    F: Fn(WorkerCtx, &T) -> Result<R> + Sync,
{
    if devices.is_empty() {
        return Err(Error::InvalidConfig("at least one worker is required".into()));
    }
    let n = tasks.len();
    let start = Instant::now();
    let (task_tx, task_rx) = bounded::<Dispatch>(devices.len());
    let (done_tx, done_rx) = unbounded::<Completion<R>>();
    let mut outcomes: Vec<Option<Outcome<R>>> = (0..n).map(|_| None).collect();
    let mut records = Vec::new();
    let mut retries = 0;

    std::thread::scope(|scope| {
        for (w, &device) in devices.iter().enumerate() {
            let task_rx = task_rx.clone();
            let done_tx = done_tx.clone();
            let (body, kind) = (&body, &kind);
            let ctx = WorkerCtx { worker: w, device };
            scope.spawn(move || {
                let mut rng = opts.interleave_seed.map(|s| ChaCha8Rng::seed_from_u64(s ^ (w as u64 + 1).wrapping_mul(0xA24B_AED4_963E_E407)));
                for d in task_rx.iter() {
                    if let Some(rng) = rng.as_mut() {
                        std::thread::sleep(Duration::from_micros(rng.gen_range(0..50)));
                    }
                    let t0 = start.elapsed().as_secs_f64();
                    let task = &tasks[d.task];
                    let result = if opts.faults.should_fail(d.task, d.attempt) {
                        Err(format!("injected fault on attempt {}", d.attempt))
                    } else {
                        match catch_unwind(AssertUnwindSafe(|| body(ctx, task))) {
                            Ok(Ok(r)) => Ok(r),
                            Ok(Err(e)) => Err(e.to_string()),
                            Err(p) => Err(panic_message(p)),
                        }
                    };
                    let record = TaskRecord {
                        task: d.task,
                        kind: kind(task),
                        worker: w,
                        device,
                        attempt: d.attempt,
                        start_s: t0,
                        end_s: start.elapsed().as_secs_f64(),
                        ok: result.is_ok(),
                        error: result.as_ref().err().cloned(),
                    };
                    let c = Completion {
                        task: d.task,
                        attempt: d.attempt,
                        result,
                        record,
                    };
                    if done_tx.send(c).is_err() {
                        break;
                    }
                }
            });
        }
        drop(task_rx);
        drop(done_tx);

        // (task, attempt, not before)
        let mut pending: VecDeque<(usize, usize, Instant)> = (0..n).map(|t| (t, 0, start)).collect();
        let mut remaining = n;
        while remaining > 0 {
            let now = Instant::now();
            let mut i = 0;
            while i < pending.len() {
                let (task, attempt, at) = pending[i];
                if at > now {
                    i += 1;
                    continue;
                }
                match task_tx.try_send(Dispatch { task, attempt }) {
                    Ok(()) => {
                        pending.remove(i);
                    }
                    Err(TrySendError::Full(_)) => break,
                    Err(TrySendError::Disconnected(_)) => unreachable!("workers outlive the master loop"),
                }
            }
            let c = match done_rx.recv_timeout(Duration::from_millis(1)) {
                Ok(c) => c,
                Err(RecvTimeoutError::Timeout) => continue,
                Err(RecvTimeoutError::Disconnected) => unreachable!("workers outlive the master loop"),
            };
            records.push(c.record);
            match c.result {
                Err(e) if c.attempt < opts.retry.max_retries => {
                    log::warn!("task {} attempt {} failed: {e}; requeued", c.task, c.attempt);
                    retries += 1;
                    let wait = Duration::from_millis(opts.retry.backoff_ms << c.attempt.min(16));
                    pending.push_back((c.task, c.attempt + 1, Instant::now() + wait));
                }
                result => {
                    outcomes[c.task] = Some(result);
                    remaining -= 1;
                }
            }
        }
        drop(task_tx);
    });

    Ok(RunOutput {
        outcomes: outcomes.into_iter().map(|o| o.expect("every task completes")).collect(),
        records,
        retries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> SchedulerOptions {
        SchedulerOptions {
            retry: RetryPolicy {
                max_retries: 2,
                backoff_ms: 0,
            },
            ..Default::default()
        }
    }

    #[test]
    fn every_task_runs_once() {
        let tasks: Vec<u64> = (0..50).collect();
        let out = run_tasks(&tasks, &[0, 0, 1, 1], |_| "sq".into(), &opts(), |_, &t| Ok(t * t)).unwrap();
        assert_eq!(out.outcomes.into_iter().map(|o| o.unwrap()).collect::<Vec<_>>(), tasks.iter().map(|t| t * t).collect::<Vec<_>>());
        let mut seen: Vec<usize> = out.records.iter().map(|r| r.task).collect();
        seen.sort();
        assert_eq!(seen, (0..50).collect::<Vec<_>>());
        assert_eq!(out.retries, 0);
    }

    #[test]
    fn transient_fault_is_retried() {
        let mut o = opts();
        o.faults = FaultPlan::none().fail(3, 0);
        let tasks: Vec<u64> = (0..8).collect();
        let out = run_tasks(&tasks, &[0, 1], |_| "x".into(), &o, |_, &t| Ok(t)).unwrap();
        assert!(out.outcomes.iter().all(|o| o.is_ok()));
        assert_eq!(out.retries, 1);
        assert_eq!(out.records.iter().filter(|r| !r.ok).count(), 1);
    }

    #[test]
    fn exhausted_retries_and_panics_are_recorded() {
        let mut o = opts();
        o.faults = FaultPlan::none().fail(1, 0).fail(1, 1).fail(1, 2);
        let tasks: Vec<u64> = (0..6).collect();
        let out = run_tasks(&tasks, &[0, 0, 0], |_| "x".into(), &o, |_, &t| {
            if t == 4 {
                panic!("boom");
            }
            Ok(t)
        })
        .unwrap();
        assert!(out.outcomes[1].is_err());
        assert_eq!(out.outcomes[4].as_ref().unwrap_err(), "boom");
        assert!(out.outcomes.iter().enumerate().all(|(i, o)| o.is_ok() == (i != 1 && i != 4)));
        assert_eq!(out.retries, 4);
    }

    #[test]
    fn empty_task_list() {
        let out = run_tasks::<u64, u64, _>(&[], &[0], |_| "x".into(), &opts(), |_, &t| Ok(t)).unwrap();
        assert!(out.outcomes.is_empty());
        assert!(run_tasks::<u64, u64, _>(&[1], &[], |_| "x".into(), &opts(), |_, &t| Ok(t)).is_err());
    }
}
