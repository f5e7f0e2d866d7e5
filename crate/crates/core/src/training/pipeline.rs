use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use crossbeam_channel::{bounded, Receiver};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// Seed of one generated item, derived from the run seed and its producer
/// coordinates.
pub fn item_seed(base_seed: u64, worker: usize, seq: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(base_seed.to_le_bytes());
    h.update((worker as u64).to_le_bytes());
    h.update(seq.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PipelineConfig {
    pub workers: usize,
    pub capacity: usize,
    /// Forces one worker and strict sequence order.
    pub deterministic: bool,
    pub base_seed: u64,
    /// Items to produce over the whole run.
    pub total: usize,
    /// Items already consumed by an earlier, interrupted run.
    pub skip: usize,
}

impl PipelineConfig {
    pub fn effective_workers(&self) -> usize {
        if self.deterministic {
            1
        } else {
            self.workers.max(1)
        }
    }

    /// `(first seq, count)` for each worker. Items are dealt round-robin so a
    /// resumed run can skip the consumed prefix.
    pub fn quotas(&self) -> Vec<(u64, usize)> {
        let n = self.effective_workers();
        (0..n)
            .map(|w| {
                let count_of = |upto: usize| upto / n + usize::from(w < upto % n);
                let done = count_of(self.skip.min(self.total));
                let all = count_of(self.total);
                (done as u64, all - done)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Item<T> {
    pub worker: usize,
    pub seq: u64,
    pub value: T,
}

/// Bounded producer/consumer queue. Workers generate items from their own
/// seeded streams; the consumer iterates. Dropping the pipeline stops and
/// joins the workers.
pub struct Pipeline<T> {
    rx: Option<Receiver<Result<Item<T>>>>,
    stop: Arc<AtomicBool>,
    handles: Vec<JoinHandle<()>>,
    remaining: usize,
    failed: bool,
}

fn panic_message(p: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = p.downcast_ref::<String>() {
        s.clone()
    } else {
        "unknown panic".into()
    }
}

impl<T: Send + 'static> Pipeline<T> {
    /// `make(seed, worker, seq)` builds one item.
    pub fn spawn<F>(config: PipelineConfig, make: F) -> Result<Self>
    where
        F: Fn(u64, usize, u64) -> Result<T> + Send + Sync + 'static,
    {
        if config.workers == 0 || config.capacity == 0 {
            return Err(Error::Pipeline("worker count and capacity must be positive".into()));
        }
        let (tx, rx) = bounded(config.capacity);
        let stop = Arc::new(AtomicBool::new(false));
        let make = Arc::new(make);
        let quotas = config.quotas();
        let remaining = quotas.iter().map(|q| q.1).sum();
        let mut handles = Vec::new();
        for (worker, (start, count)) in quotas.into_iter().enumerate() {
            let tx = tx.clone();
            let stop = Arc::clone(&stop);
            let make = Arc::clone(&make);
            let base = config.base_seed;
            let handle = std::thread::Builder::new()
                .name(format!("datagen-{worker}"))
                .spawn(move || {
                    for seq in start..start + count as u64 {
                        if stop.load(Ordering::Relaxed) {
                            return;
                        }
                        let seed = item_seed(base, worker, seq);
                        let out = match catch_unwind(AssertUnwindSafe(|| make(seed, worker, seq))) {
                            Ok(r) => r.map(|value| Item { worker, seq, value }),
                            Err(p) => Err(Error::Pipeline(format!("worker {worker} panicked: {}", panic_message(&*p)))),
                        };
                        let failed = out.is_err();
                        if tx.send(out).is_err() || failed {
                            return;
                        }
                    }
                })
                .map_err(|e| Error::Pipeline(format!("cannot start worker: {e}")))?;
            handles.push(handle);
        }
        Ok(Pipeline { rx: Some(rx), stop, handles, remaining, failed: false })
    }

    /// Items not yet delivered.
    pub fn remaining(&self) -> usize {
        self.remaining
    }
}

impl<T> Iterator for Pipeline<T> {
    type Item = Result<Item<T>>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 || self.failed {
            return None;
        }
        let rx = self.rx.as_ref()?;
        match rx.recv() {
            Ok(Ok(item)) => {
                self.remaining -= 1;
                Some(Ok(item))
            }
            Ok(Err(e)) => {
                self.failed = true;
                self.stop.store(true, Ordering::Relaxed);
                Some(Err(e))
            }
            Err(_) => {
                self.failed = true;
                Some(Err(Error::Pipeline("workers exited before producing every item".into())))
            }
        }
    }
}

impl<T> Drop for Pipeline<T> {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        // dropping the receiver unblocks workers waiting on a full queue
        self.rx.take();
        for h in self.handles.drain(..) {
            let _ = h.join();
        }
    }
}
