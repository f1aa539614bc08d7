//! Data-parallel in-memory WHT for `m = 2^p` workers.
//!
//! Phase 0 runs `m` independent transforms over contiguous chunks of
//! `2^(n-p)` elements. Each remaining stage `k = n-p .. n-1` becomes one
//! phase of `m` equal workloads of `2^(n-1-p)` butterflies. Workers meet at
//! a full barrier after every phase, so a run performs exactly `p + 1`
//! synchronizations.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Barrier;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::signal::{Element, Samples, Signal};
use crate::transform::{butterfly, fwht_slice};

/// A contiguous run of butterflies `(pt, pt + stride)` for
/// `pt in start..start + count`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Workload {
    pub start: usize,
    pub stride: usize,
    pub count: usize,
}

impl Workload {
    /// Index ranges touched by this workload.
    pub fn touched(&self) -> [(usize, usize); 2] {
        [
            (self.start, self.start + self.count),
            (
                self.start + self.stride,
                self.start + self.stride + self.count,
            ),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Subtask {
    /// Serial WHT over `buf[offset..offset + len]`.
    Chunk {
        offset: usize,
        len: usize,
    },
    Workload(Workload),
}

impl Subtask {
    fn touched(&self) -> Vec<(usize, usize)> {
        match self {
            Subtask::Chunk { offset, len } => vec![(*offset, offset + len)],
            Subtask::Workload(w) => w.touched().to_vec(),
        }
    }

    fn butterflies(&self) -> u64 {
        match self {
            Subtask::Chunk { len, .. } => {
                let n = len.trailing_zeros() as u64;
                if n == 0 {
                    0
                } else {
                    n << (n - 1)
                }
            }
            Subtask::Workload(w) => w.count as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PhaseSpec {
    /// Stage handled by this phase; `None` for the chunk phase.
    pub stage: Option<u32>,
    pub subtasks: Vec<Subtask>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParallelPlan {
    pub log2_dim: u32,
    pub log2_workers: u32,
    pub phases: Vec<PhaseSpec>,
}

/// Builds the phase schedule for `2^n` elements on `2^p` workers.
pub fn plan_parallel(n: u32, p: u32) -> Result<ParallelPlan> {
    if p == 0 || n < 2 || p > n - 1 {
        return Err(Error::InvalidWorkerCount(format!(
            "need 1 <= p <= n-1, got n = {n}, p = {p}"
        )));
    }
    let m = 1usize << p;
    let chunk = 1usize << (n - p);
    let count = 1usize << (n - 1 - p);

    let mut phases = Vec::with_capacity(p as usize + 1);
    phases.push(PhaseSpec {
        stage: None,
        subtasks: (0..m)
            .map(|w| Subtask::Chunk {
                offset: w * chunk,
                len: chunk,
            })
            .collect(),
    });
    for k in (n - p)..n {
        let low_mask = (1usize << k) - 1;
        let subtasks = (0..m)
            .map(|w| {
                let t = w * count;
                Subtask::Workload(Workload {
                    start: ((t >> k) << (k + 1)) | (t & low_mask),
                    stride: 1 << k,
                    count,
                })
            })
            .collect();
        phases.push(PhaseSpec {
            stage: Some(k),
            subtasks,
        });
    }
    Ok(ParallelPlan {
        log2_dim: n,
        log2_workers: p,
        phases,
    })
}

/// Plan for a worker count `m`, which must be a power of two with `m >= 2`.
pub fn plan_for_workers(n: u32, workers: usize) -> Result<ParallelPlan> {
    if workers < 2 || !workers.is_power_of_two() {
        return Err(Error::InvalidWorkerCount(format!(
            "worker count must be a power of two >= 2, got {workers}"
        )));
    }
    plan_parallel(n, workers.trailing_zeros())
}

impl ParallelPlan {
    pub fn workers(&self) -> usize {
        1 << self.log2_workers
    }

    pub fn total_butterflies(&self) -> u64 {
        self.phases
            .iter()
            .flat_map(|ph| ph.subtasks.iter())
            .map(Subtask::butterflies)
            .sum()
    }

    /// Proves that within each phase no index is touched by two subtasks,
    /// that every touched index lies inside the buffer, and that every
    /// workload keeps bit `k` clear across its run.
    pub fn check_disjoint(&self) -> Result<()> {
        let len = 1usize << self.log2_dim;
        for (phase_idx, phase) in self.phases.iter().enumerate() {
            if phase.subtasks.len() != self.workers() {
                return Err(Error::InvalidWorkerCount(format!(
                    "phase {phase_idx} has {} subtasks for {} workers",
                    phase.subtasks.len(),
                    self.workers()
                )));
            }
            let mut ranges: Vec<(usize, usize)> = Vec::new();
            for task in &phase.subtasks {
                if let Subtask::Workload(w) = task {
                    let k_bit = w.stride;
                    if w.count > w.stride
                        || (w.start & k_bit) != 0
                        || ((w.start & (k_bit - 1)) + w.count) > k_bit
                    {
                        return Err(Error::InvalidWorkerCount(format!(
                            "phase {phase_idx}: workload {w:?} crosses a stride boundary"
                        )));
                    }
                }
                ranges.extend(task.touched().into_iter().filter(|(a, b)| a < b));
            }
            ranges.sort_unstable();
            for pair in ranges.windows(2) {
                if pair[0].1 > pair[1].0 {
                    return Err(Error::InvalidWorkerCount(format!(
                        "phase {phase_idx}: ranges {:?} and {:?} overlap",
                        pair[0], pair[1]
                    )));
                }
            }
            if let Some(&(_, end)) = ranges.last() {
                if end > len {
                    return Err(Error::InvalidWorkerCount(format!(
                        "phase {phase_idx}: range end {end} exceeds length {len}"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ParallelStats {
    pub barrier_syncs: usize,
    pub butterflies: u64,
}

/// Raw view of the shared buffer. Sound only because the plan checker has
/// established per-phase index disjointness before any worker starts.
#[derive(Clone, Copy)]
struct SharedBuf<T> {
    ptr: *mut T,
    len: usize,
}

unsafe impl<T: Send> Send for SharedBuf<T> {}
unsafe impl<T: Send> Sync for SharedBuf<T> {}

impl<T: Element> SharedBuf<T> {
    /// # Safety
    /// No other thread may access `offset..offset + len` concurrently.
    #[allow(clippy::mut_from_ref)]
    unsafe fn chunk(&self, offset: usize, len: usize) -> &mut [T] {
        debug_assert!(offset + len <= self.len);
        std::slice::from_raw_parts_mut(self.ptr.add(offset), len)
    }

    /// # Safety
    /// No other thread may access the ranges of `w` concurrently.
    unsafe fn run_workload(&self, w: &Workload) {
        debug_assert!(w.start + w.stride + w.count <= self.len);
        let lo = self.ptr.add(w.start);
        let hi = self.ptr.add(w.start + w.stride);
        for i in 0..w.count {
            let (s, d) = butterfly(*lo.add(i), *hi.add(i));
            *lo.add(i) = s;
            *hi.add(i) = d;
        }
    }
}

/// Runs the plan over `sig` with one thread per subtask.
///
/// The signal is consumed; if any worker panics the partially transformed
/// buffer is dropped and [`Error::WorkerPanic`] is returned.
pub fn run_parallel(sig: Signal, plan: &ParallelPlan) -> Result<(Signal, ParallelStats)> {
    run_parallel_hooked(sig, plan, &|_, _| {})
}

pub(crate) fn run_parallel_hooked(
    mut sig: Signal,
    plan: &ParallelPlan,
    hook: &(dyn Fn(usize, usize) + Sync),
) -> Result<(Signal, ParallelStats)> {
    if plan.log2_dim != sig.log2_dim() {
        return Err(Error::DimMismatch(format!(
            "plan is for n = {}, signal has n = {}",
            plan.log2_dim,
            sig.log2_dim()
        )));
    }
    sig.check_overflow_bound()?;
    plan.check_disjoint()?;
    let stats = match sig.samples_mut() {
        Samples::Int(v) => run_slice(v, plan, hook)?,
        Samples::Float(v) => run_slice(v, plan, hook)?,
    };
    let flipped = sig.domain().flipped();
    sig.set_domain(flipped);
    Ok((sig, stats))
}

/// Slice-level entry point; the plan must already be checked.
pub fn run_parallel_slice<T: Element>(buf: &mut [T], plan: &ParallelPlan) -> Result<ParallelStats> {
    if buf.len() != 1usize << plan.log2_dim {
        return Err(Error::DimMismatch(format!(
            "plan is for 2^{} elements, buffer has {}",
            plan.log2_dim,
            buf.len()
        )));
    }
    plan.check_disjoint()?;
    run_slice(buf, plan, &|_, _| {})
}

fn run_slice<T: Element>(
    buf: &mut [T],
    plan: &ParallelPlan,
    hook: &(dyn Fn(usize, usize) + Sync),
) -> Result<ParallelStats> {
    let shared = SharedBuf {
        ptr: buf.as_mut_ptr(),
        len: buf.len(),
    };
    let workers = plan.workers();
    let barrier = Barrier::new(workers);
    let syncs = AtomicUsize::new(0);
    let failed_phase = AtomicUsize::new(usize::MAX);
    let failed = AtomicBool::new(false);

    std::thread::scope(|scope| {
        for w in 0..workers {
            let barrier = &barrier;
            let syncs = &syncs;
            let failed = &failed;
            let failed_phase = &failed_phase;
            scope.spawn(move || {
                for (phase_idx, phase) in plan.phases.iter().enumerate() {
                    let task = &phase.subtasks[w];
                    let outcome = catch_unwind(AssertUnwindSafe(|| {
                        hook(phase_idx, w);
                        // SAFETY: check_disjoint() proved this subtask's
                        // ranges are private to worker `w` within the phase,
                        // and the barrier below orders phases.
                        unsafe {
                            match task {
                                Subtask::Chunk { offset, len } => {
                                    fwht_slice(shared.chunk(*offset, *len))
                                }
                                Subtask::Workload(wl) => shared.run_workload(wl),
                            }
                        }
                    }));
                    if outcome.is_err() {
                        failed_phase.fetch_min(phase_idx, Ordering::SeqCst);
                        failed.store(true, Ordering::SeqCst);
                    }
                    if barrier.wait().is_leader() {
                        syncs.fetch_add(1, Ordering::SeqCst);
                    }
                    if failed.load(Ordering::SeqCst) {
                        break;
                    }
                }
            });
        }
    });

    if failed.load(Ordering::SeqCst) {
        return Err(Error::WorkerPanic {
            phase: failed_phase.load(Ordering::SeqCst),
        });
    }
    Ok(ParallelStats {
        barrier_syncs: syncs.load(Ordering::SeqCst),
        butterflies: plan.total_butterflies(),
    })
}
