//! Out-of-core WHT over a [`DatasetFile`] with a memory budget of `2^B`
//! elements.
//!
//! Pass 0 transforms each contiguous superblock of `2^B` elements in memory,
//! which completes stages `0..B`. Every remaining stage `k = B..n-1` costs one
//! full read+write pass over the dataset, for `q = n - B + 1` passes in all.
//!
//! Two stage executors are provided. [`ExternalMode::EntryWise`] reads and
//! writes one element pair at a time, walking the pointer exactly like the
//! in-memory loop. [`ExternalMode::Blocked`] reads two `S`-element blocks at
//! distance `2^k`, butterflies them element-wise and writes both back.
//!
//! # Restart
//!
//! Progress lives in the dataset sidecar. A pass boundary is committed after
//! the data is synced. If an I/O error surfaces mid-pass, the values of the
//! unit in flight are written to `<path>.journal` and the sidecar records the
//! failed unit; `resume` replays the journal and continues with the next
//! unit. A process killed mid-pass without a chance to record its cursor
//! leaves the sidecar in the `running` state, which `resume` refuses.
//!
//! With [`ExternalOptions::checkpoint_elems`] set, results are journaled in
//! batches before they are applied and a cursor is committed after each
//! batch, so even a killed process can be resumed.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetFile, IoSnapshot, ELEMENT_BYTES};
use crate::error::{Error, Result};
use crate::parallel::{plan_for_workers, run_parallel_slice};
use crate::signal::{check_int_bound, Element, ScalarKind};
use crate::transform::{butterfly, fwht_slice};

/// Preferred transfer block: 128 MiB.
pub const DEFAULT_IO_BLOCK_BYTES: u64 = 128 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExternalMode {
    EntryWise,
    Blocked,
}

impl std::str::FromStr for ExternalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "entrywise" | "entry-wise" => Ok(ExternalMode::EntryWise),
            "blocked" => Ok(ExternalMode::Blocked),
            other => Err(Error::BadArguments(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PassKind {
    /// In-memory transform of `superblocks` contiguous runs of `block_elems`.
    InMemory { superblocks: u64, block_elems: u64 },
    /// Butterflies at stride `2^k` across the whole dataset.
    Stage { k: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PassPlan {
    pub n: u32,
    pub mem_log2: u32,
    pub mode: ExternalMode,
    /// Elements per transfer block in blocked mode; 1 in entry-wise mode.
    pub io_block_elems: u64,
    pub passes: Vec<PassKind>,
}

impl PassPlan {
    pub fn q(&self) -> usize {
        self.passes.len()
    }

    fn units(&self, pass: usize) -> u64 {
        match self.passes[pass] {
            PassKind::InMemory { superblocks, .. } => superblocks,
            PassKind::Stage { .. } => (1u64 << (self.n - 1)) / self.io_block_elems,
        }
    }
}

/// Largest blocked-mode transfer size allowed for a memory budget of `2^B`.
pub fn max_io_block_elems(mem_log2: u32) -> u64 {
    1u64 << mem_log2.saturating_sub(1)
}

/// The default transfer size in bytes, capped by the memory budget.
pub fn default_io_block_bytes(mem_log2: u32) -> u64 {
    DEFAULT_IO_BLOCK_BYTES.min(max_io_block_elems(mem_log2) * ELEMENT_BYTES)
}

pub fn plan_external(
    n: u32,
    mem_log2: u32,
    mode: ExternalMode,
    io_block_bytes: u64,
) -> Result<PassPlan> {
    if mem_log2 == 0 {
        return Err(Error::BadBlockSize(
            "memory budget must be at least 2^1 elements".into(),
        ));
    }
    let io_block_elems = match mode {
        ExternalMode::EntryWise => 1,
        ExternalMode::Blocked => {
            if io_block_bytes < ELEMENT_BYTES
                || !io_block_bytes.is_multiple_of(ELEMENT_BYTES)
                || !(io_block_bytes / ELEMENT_BYTES).is_power_of_two()
            {
                return Err(Error::BadBlockSize(format!(
                    "{io_block_bytes} bytes is not a power-of-two multiple of 8"
                )));
            }
            let s = io_block_bytes / ELEMENT_BYTES;
            if s > max_io_block_elems(mem_log2) {
                return Err(Error::BadBlockSize(format!(
                    "block of {s} elements exceeds half the memory budget 2^{mem_log2}"
                )));
            }
            s
        }
    };
    let passes = if n <= mem_log2 {
        vec![PassKind::InMemory {
            superblocks: 1,
            block_elems: 1 << n,
        }]
    } else {
        std::iter::once(PassKind::InMemory {
            superblocks: 1 << (n - mem_log2),
            block_elems: 1 << mem_log2,
        })
        .chain((mem_log2..n).map(|k| PassKind::Stage { k }))
        .collect()
    };
    Ok(PassPlan {
        n,
        mem_log2,
        mode,
        io_block_elems,
        passes,
    })
}

/// Dataset traffic of a plan: each pass reads and writes every byte once.
pub fn pass_io_volume(plan: &PassPlan) -> u64 {
    plan.q() as u64 * 2 * (ELEMENT_BYTES << plan.n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PassState {
    /// `next_pass` has not started.
    Boundary,
    /// `next_pass` is executing, or was killed without recording a cursor.
    Running,
    /// Units of `next_pass` before `unit` are complete and synced.
    Cursor { unit: u64 },
    /// Units up to and including `unit` are complete once the journal is
    /// replayed.
    Journaled { unit: u64 },
    /// `next_pass` failed at `unit`; units before it are complete and the
    /// unit's pending writes are journaled when `journal` is set.
    Failed { unit: u64, journal: bool },
}

/// Restart marker stored in the dataset sidecar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassProgress {
    pub mode: ExternalMode,
    pub mem_log2: u32,
    pub io_block_elems: u64,
    pub next_pass: usize,
    pub state: PassState,
}

#[derive(Debug, Clone, Copy)]
pub struct ExternalOptions {
    /// Continue an interrupted run recorded in the sidecar.
    pub resume: bool,
    /// Worker threads for pass 0; 1 runs it serially.
    pub threads: usize,
    /// Stop cleanly once this many passes are committed.
    pub stop_after_passes: Option<usize>,
    /// Enables write-ahead checkpoints every this many elements, making a
    /// killed run resumable at the cost of writing each batch twice.
    pub checkpoint_elems: Option<u64>,
}

impl Default for ExternalOptions {
    fn default() -> Self {
        ExternalOptions {
            resume: false,
            threads: 1,
            stop_after_passes: None,
            checkpoint_elems: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PassRecord {
    pub pass: usize,
    pub kind: PassKind,
    pub io: IoSnapshot,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExternalReport {
    pub q: usize,
    pub mode: ExternalMode,
    pub io_block_elems: u64,
    /// Passes executed in this invocation.
    pub passes: Vec<PassRecord>,
    /// `(pass, unit)` the run resumed from, if any.
    pub resumed_at: Option<(usize, u64)>,
    /// False when `stop_after_passes` cut the run short.
    pub complete: bool,
}

pub fn journal_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".journal");
    PathBuf::from(s)
}

/// Entry-wise run with default options.
pub fn run_external_entrywise(ds: &mut DatasetFile, mem_log2: u32) -> Result<ExternalReport> {
    let plan = plan_external(
        ds.log2_dim(),
        mem_log2,
        ExternalMode::EntryWise,
        ELEMENT_BYTES,
    )?;
    run_external(ds, &plan, ExternalOptions::default())
}

/// Blocked run with `io_block_elems` elements per transfer.
pub fn run_external_blocked(
    ds: &mut DatasetFile,
    mem_log2: u32,
    io_block_elems: u64,
) -> Result<ExternalReport> {
    let plan = plan_external(
        ds.log2_dim(),
        mem_log2,
        ExternalMode::Blocked,
        io_block_elems.saturating_mul(ELEMENT_BYTES),
    )?;
    run_external(ds, &plan, ExternalOptions::default())
}

pub fn run_external(
    ds: &mut DatasetFile,
    plan: &PassPlan,
    opts: ExternalOptions,
) -> Result<ExternalReport> {
    if plan.n != ds.log2_dim() {
        return Err(Error::DimMismatch(format!(
            "plan is for n = {}, dataset has n = {}",
            plan.n,
            ds.log2_dim()
        )));
    }
    match ds.kind() {
        ScalarKind::Int64 => Executor::<i64>::new(ds, plan, opts).run(),
        ScalarKind::Float64 => Executor::<f64>::new(ds, plan, opts).run(),
    }
}

/// Writes that belong to one or more units of work.
struct Pending<T> {
    writes: Vec<(u64, Vec<T>)>,
}

impl<T> Pending<T> {
    fn elems(&self) -> u64 {
        self.writes.iter().map(|(_, v)| v.len() as u64).sum()
    }
}

/// First pass, first unit within it, and the (pass, unit) resumed from.
type StartPoint = (usize, u64, Option<(usize, u64)>);

struct Executor<'a, T> {
    ds: &'a mut DatasetFile,
    plan: &'a PassPlan,
    opts: ExternalOptions,
    /// Units of the current pass whose results are on disk.
    flushed: u64,
    _t: std::marker::PhantomData<T>,
}

/// Error raised while working on a unit, with any writes that must still
/// land for the unit to be complete.
struct UnitFailure<T> {
    error: Error,
    pending: Option<Pending<T>>,
}

impl<T> From<Error> for UnitFailure<T> {
    fn from(error: Error) -> Self {
        UnitFailure {
            error,
            pending: None,
        }
    }
}

impl<'a, T: Element> Executor<'a, T> {
    fn new(ds: &'a mut DatasetFile, plan: &'a PassPlan, opts: ExternalOptions) -> Self {
        Executor {
            ds,
            plan,
            opts,
            flushed: 0,
            _t: std::marker::PhantomData,
        }
    }

    fn progress(&self, next_pass: usize, state: PassState) -> PassProgress {
        PassProgress {
            mode: self.plan.mode,
            mem_log2: self.plan.mem_log2,
            io_block_elems: self.plan.io_block_elems,
            next_pass,
            state,
        }
    }

    fn discard_stale_journal(&self) -> Result<()> {
        let path = journal_path(self.ds.path());
        match fs::remove_file(&path) {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(()),
            Err(e) => Err(Error::io(&path, 0, e)),
        }
    }

    /// Determines where to start, replaying a journal if one is recorded.
    fn start_point(&mut self) -> Result<StartPoint> {
        let Some(prog) = self.ds.metadata().pass_progress else {
            return Ok((0, 0, None));
        };
        if !self.opts.resume {
            return Err(Error::Resume(format!(
                "{} has an unfinished run at pass {}; rerun with resume",
                self.ds.path().display(),
                prog.next_pass
            )));
        }
        if prog.mode != self.plan.mode
            || prog.mem_log2 != self.plan.mem_log2
            || prog.io_block_elems != self.plan.io_block_elems
        {
            return Err(Error::Resume(format!(
                "recorded run used mode {:?}, B = {}, S = {}; requested mode {:?}, B = {}, S = {}",
                prog.mode,
                prog.mem_log2,
                prog.io_block_elems,
                self.plan.mode,
                self.plan.mem_log2,
                self.plan.io_block_elems
            )));
        }
        if prog.next_pass >= self.plan.q() {
            return Err(Error::Resume(format!(
                "recorded pass {} is beyond the plan",
                prog.next_pass
            )));
        }
        let pass = prog.next_pass;
        match prog.state {
            PassState::Boundary => {
                self.discard_stale_journal()?;
                Ok((pass, 0, Some((pass, 0))))
            }
            PassState::Cursor { unit } => {
                self.discard_stale_journal()?;
                Ok((pass, unit, Some((pass, unit))))
            }
            PassState::Running => Err(Error::Resume(format!(
                "pass {pass} was interrupted without a recorded cursor; the dataset is inconsistent"
            ))),
            PassState::Journaled { unit } => {
                self.replay_journal()?;
                Ok((pass, unit + 1, Some((pass, unit + 1))))
            }
            PassState::Failed { unit, journal } => {
                // A journaled unit is complete once replayed; otherwise it
                // failed before writing and is redone.
                if journal {
                    self.replay_journal()?;
                } else {
                    self.discard_stale_journal()?;
                }
                Ok((pass, unit + journal as u64, Some((pass, unit))))
            }
        }
    }

    fn run(mut self) -> Result<ExternalReport> {
        let (first_pass, first_unit, resumed_at) = self.start_point()?;
        let mut records = Vec::new();
        let mut complete = true;

        for pass in first_pass..self.plan.q() {
            if let Some(limit) = self.opts.stop_after_passes {
                if pass >= limit {
                    complete = false;
                    break;
                }
            }
            let start_unit = if pass == first_pass { first_unit } else { 0 };
            let state = match self.opts.checkpoint_elems {
                Some(_) => PassState::Cursor { unit: start_unit },
                None => PassState::Running,
            };
            self.ds.set_progress(Some(self.progress(pass, state)))?;
            let before = self.ds.stats().snapshot();
            self.run_pass(pass, start_unit)?;
            self.ds.sync()?;
            let after = self.ds.stats().snapshot();
            records.push(PassRecord {
                pass,
                kind: self.plan.passes[pass],
                io: after.since(&before),
            });
            if pass + 1 < self.plan.q() {
                self.ds
                    .set_progress(Some(self.progress(pass + 1, PassState::Boundary)))?;
            }
        }

        if complete {
            let domain = self.ds.domain().flipped();
            self.ds.set_progress(None)?;
            self.ds.set_domain(domain)?;
        }
        Ok(ExternalReport {
            q: self.plan.q(),
            mode: self.plan.mode,
            io_block_elems: self.plan.io_block_elems,
            passes: records,
            resumed_at,
            complete,
        })
    }

    fn run_pass(&mut self, pass: usize, start_unit: u64) -> Result<()> {
        self.flushed = start_unit;
        let result = match self.opts.checkpoint_elems {
            None => self.run_units(pass, start_unit),
            Some(batch) => self.run_batches(pass, start_unit, batch.max(1)),
        };
        if let Err(Error::Overflow { max_abs, n }) = result {
            if let PassKind::InMemory { block_elems, .. } = self.plan.passes[pass] {
                self.rollback_in_memory(self.flushed, block_elems)?;
            }
            return Err(Error::Overflow { max_abs, n });
        }
        result
    }

    fn run_units(&mut self, pass: usize, start_unit: u64) -> Result<()> {
        for unit in start_unit..self.plan.units(pass) {
            let outcome = self.compute_unit(pass, unit).and_then(|p| self.apply(p));
            if let Err(failure) = outcome {
                return Err(self.record_failure(pass, unit, failure));
            }
            self.flushed = unit + 1;
        }
        Ok(())
    }

    /// Write-ahead mode: results of consecutive units are buffered up to
    /// `batch` elements, journaled, recorded in the sidecar and only then
    /// applied, so a kill at any point leaves a resumable state.
    fn run_batches(&mut self, pass: usize, start_unit: u64, batch: u64) -> Result<()> {
        let units = self.plan.units(pass);
        let mut unit = start_unit;
        while unit < units {
            let mut pending = Pending { writes: Vec::new() };
            while unit < units && (pending.writes.is_empty() || pending.elems() < batch) {
                match self.compute_unit(pass, unit) {
                    Ok(p) => pending.writes.extend(p.writes),
                    Err(failure) => {
                        if failure.error.is_io() {
                            let cursor = PassState::Cursor { unit: self.flushed };
                            let _ = self.ds.set_progress(Some(self.progress(pass, cursor)));
                        }
                        return Err(failure.error);
                    }
                }
                unit += 1;
            }
            self.write_journal(&pending)
                .map_err(|e| Error::io(journal_path(self.ds.path()), 0, e))?;
            self.ds.set_progress(Some(
                self.progress(pass, PassState::Journaled { unit: unit - 1 }),
            ))?;
            for (start, values) in &pending.writes {
                self.ds.write_at(*start, values)?;
            }
            self.ds.sync()?;
            self.flushed = unit;
            self.ds
                .set_progress(Some(self.progress(pass, PassState::Cursor { unit })))?;
            self.discard_stale_journal()?;
        }
        Ok(())
    }

    fn compute_unit(&mut self, pass: usize, unit: u64) -> Result<Pending<T>, UnitFailure<T>> {
        match self.plan.passes[pass] {
            PassKind::InMemory { block_elems, .. } => self.in_memory_unit(unit, block_elems),
            PassKind::Stage { k } => match self.plan.mode {
                ExternalMode::EntryWise => self.entrywise_unit(unit, k),
                ExternalMode::Blocked => self.blocked_unit(unit, k),
            },
        }
    }

    fn apply(&mut self, pending: Pending<T>) -> Result<(), UnitFailure<T>> {
        for (start, values) in &pending.writes {
            if let Err(error) = self.ds.write_at(*start, values) {
                return Err(UnitFailure {
                    error,
                    pending: Some(pending),
                });
            }
        }
        Ok(())
    }

    fn record_failure(&mut self, pass: usize, unit: u64, failure: UnitFailure<T>) -> Error {
        let UnitFailure { error, pending } = failure;
        if !error.is_io() {
            return error;
        }
        let journal = match pending {
            Some(p) if !p.writes.is_empty() => match self.write_journal(&p) {
                Ok(()) => true,
                Err(_) => return error,
            },
            _ => false,
        };
        let _ = self.ds.set_progress(Some(
            self.progress(pass, PassState::Failed { unit, journal }),
        ));
        error
    }

    fn in_memory_unit(
        &mut self,
        unit: u64,
        block_elems: u64,
    ) -> Result<Pending<T>, UnitFailure<T>> {
        let start = unit * block_elems;
        let mut buf = vec![T::default(); block_elems as usize];
        self.ds.read_into(start, &mut buf)?;
        if let Some(max_abs) = buf.iter().map(|v| v.int_abs()).max().flatten() {
            check_int_bound(max_abs, self.plan.n)?;
        }
        let block_n = block_elems.trailing_zeros();
        match plan_for_workers(block_n, self.opts.threads) {
            Ok(plan) if self.opts.threads > 1 => {
                run_parallel_slice(&mut buf, &plan)?;
            }
            _ => fwht_slice(&mut buf),
        }
        Ok(Pending {
            writes: vec![(start, buf)],
        })
    }

    /// Undoes pass 0 on superblocks `0..units` after an overflow bound
    /// violation. WHT twice is `2^B` times the identity, so the division is
    /// exact.
    fn rollback_in_memory(&mut self, units: u64, block_elems: u64) -> Result<()> {
        let shift = block_elems.trailing_zeros();
        for u in 0..units {
            let start = u * block_elems;
            let mut buf = vec![T::default(); block_elems as usize];
            self.ds.read_into(start, &mut buf)?;
            fwht_slice(&mut buf);
            for v in buf.iter_mut() {
                *v = v.div_pow2(shift);
            }
            self.ds.write_at(start, &buf)?;
        }
        self.ds.sync()?;
        self.ds.set_progress(None)?;
        Ok(())
    }

    fn entrywise_unit(&mut self, unit: u64, k: u32) -> Result<Pending<T>, UnitFailure<T>> {
        let pt = pair_start(unit, k);
        let j = 1u64 << k;
        let mut a = [T::default()];
        let mut b = [T::default()];
        self.ds.read_into(pt, &mut a)?;
        self.ds.read_into(pt + j, &mut b)?;
        let (s, d) = butterfly(a[0], b[0]);
        Ok(Pending {
            writes: vec![(pt, vec![s]), (pt + j, vec![d])],
        })
    }

    fn blocked_unit(&mut self, unit: u64, k: u32) -> Result<Pending<T>, UnitFailure<T>> {
        let s = self.plan.io_block_elems;
        let lo = pair_start(unit * s, k);
        let hi = lo + (1u64 << k);
        let mut a = vec![T::default(); s as usize];
        let mut b = vec![T::default(); s as usize];
        self.ds.read_into(lo, &mut a)?;
        self.ds.read_into(hi, &mut b)?;
        for (x, y) in a.iter_mut().zip(b.iter_mut()) {
            let (p, m) = butterfly(*x, *y);
            *x = p;
            *y = m;
        }
        Ok(Pending {
            writes: vec![(lo, a), (hi, b)],
        })
    }

    fn write_journal(&self, pending: &Pending<T>) -> io::Result<()> {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(JOURNAL_MAGIC);
        bytes.extend_from_slice(&(pending.writes.len() as u64).to_le_bytes());
        for (start, values) in &pending.writes {
            bytes.extend_from_slice(&start.to_le_bytes());
            bytes.extend_from_slice(&(values.len() as u64).to_le_bytes());
            for v in values {
                bytes.extend_from_slice(&v.to_le());
            }
        }
        let path = journal_path(self.ds.path());
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        fs::write(&tmp, &bytes)?;
        fs::File::open(&tmp)?.sync_all()?;
        fs::rename(&tmp, &path)
    }

    fn replay_journal(&mut self) -> Result<()> {
        let path = journal_path(self.ds.path());
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, 0, e))?;
        let bad = |reason: &str| Error::Resume(format!("journal {}: {reason}", path.display()));
        let mut cur = bytes.as_slice();
        let mut take = |n: usize| -> Result<&[u8]> {
            if cur.len() < n {
                return Err(bad("truncated"));
            }
            let (head, rest) = cur.split_at(n);
            cur = rest;
            Ok(head)
        };
        if take(JOURNAL_MAGIC.len())? != JOURNAL_MAGIC {
            return Err(bad("bad magic"));
        }
        let word = |b: &[u8]| u64::from_le_bytes(b.try_into().unwrap());
        let segments = word(take(8)?);
        let mut writes = Vec::new();
        for _ in 0..segments {
            let start = word(take(8)?);
            let len = word(take(8)?) as usize;
            let raw = take(len.checked_mul(8).ok_or_else(|| bad("segment too long"))?)?;
            let values: Vec<T> = raw
                .chunks_exact(8)
                .map(|c| T::from_le(c.try_into().unwrap()))
                .collect();
            writes.push((start, values));
        }
        for (start, values) in writes {
            self.ds.write_at(start, &values)?;
        }
        self.ds.sync()?;
        fs::remove_file(&path).map_err(|e| Error::io(&path, 0, e))?;
        Ok(())
    }
}

const JOURNAL_MAGIC: &[u8] = b"TWHTJNL1";

/// Index of the lower element of the `t`-th butterfly of stage `k`.
#[inline]
pub fn pair_start(t: u64, k: u32) -> u64 {
    ((t >> k) << (k + 1)) | (t & ((1u64 << k) - 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Touch;
    use crate::signal::{Domain, Signal};
    use crate::transform::transformed;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_signal(n: u32, seed: u64) -> Signal {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Signal::time_i64((0..1 << n).map(|_| rng.random_range(-100..100)).collect()).unwrap()
    }

    fn dataset(dir: &tempfile::TempDir, name: &str, sig: &Signal) -> DatasetFile {
        DatasetFile::from_signal(dir.path().join(name), sig).unwrap()
    }

    #[test]
    fn pass_counts() {
        let q = |n, b| plan_external(n, b, ExternalMode::EntryWise, 8).unwrap().q();
        assert_eq!(q(32, 30), 3);
        assert_eq!(q(32, 29), 4);
        assert_eq!(q(10, 12), 1);
        assert_eq!(q(10, 10), 1);
        let plan = plan_external(32, 30, ExternalMode::Blocked, 128 << 20).unwrap();
        assert_eq!(pass_io_volume(&plan), 3 * 2 * (32u64 << 30));
    }

    #[test]
    fn block_size_validation() {
        assert!(matches!(
            plan_external(12, 6, ExternalMode::Blocked, 8 << 6),
            Err(Error::BadBlockSize(_))
        ));
        assert!(plan_external(12, 6, ExternalMode::Blocked, 8 << 5).is_ok());
        assert!(plan_external(12, 6, ExternalMode::Blocked, 24).is_err());
        assert!(plan_external(12, 6, ExternalMode::Blocked, 4).is_err());
        assert!(plan_external(12, 0, ExternalMode::EntryWise, 8).is_err());
        assert_eq!(default_io_block_bytes(10), 8 << 9);
        assert_eq!(default_io_block_bytes(40), DEFAULT_IO_BLOCK_BYTES);
    }

    #[test]
    fn pair_start_enumerates_each_stage() {
        for n in 1..9u32 {
            for k in 0..n {
                let mut seen = vec![false; 1 << n];
                for t in 0..1u64 << (n - 1) {
                    let p = pair_start(t, k);
                    assert_eq!(p >> k & 1, 0);
                    assert!(!seen[p as usize] && !seen[(p + (1 << k)) as usize]);
                    seen[p as usize] = true;
                    seen[(p + (1 << k)) as usize] = true;
                }
                assert!(seen.iter().all(|&s| s));
            }
        }
    }

    #[test]
    fn both_modes_match_in_memory() {
        let dir = tempfile::tempdir().unwrap();
        for n in [3u32, 8, 11] {
            let sig = random_signal(n, n as u64);
            let want = transformed(&sig).unwrap();
            for b in 1..=n.min(6) {
                let mut ds = dataset(&dir, &format!("e{n}_{b}"), &sig);
                run_external_entrywise(&mut ds, b).unwrap();
                assert_eq!(ds.read_signal().unwrap(), want, "entrywise n={n} B={b}");
                assert_eq!(ds.domain(), Domain::Walsh);

                for s_log2 in 0..b {
                    let mut ds = dataset(&dir, &format!("b{n}_{b}_{s_log2}"), &sig);
                    run_external_blocked(&mut ds, b, 1 << s_log2).unwrap();
                    assert_eq!(
                        ds.read_signal().unwrap(),
                        want,
                        "blocked n={n} B={b} S={s_log2}"
                    );
                }
            }
        }
    }

    #[test]
    fn float_external_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..1 << 10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut ds = dataset(&dir, "f", &Signal::time_f64(x.clone()).unwrap());
        run_external_blocked(&mut ds, 6, 8).unwrap();
        run_external_blocked(&mut ds, 6, 8).unwrap();
        let y = ds.read_signal().unwrap();
        for (a, b) in y.as_f64().unwrap().iter().zip(&x) {
            assert!((a / 1024.0 - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
        assert_eq!(ds.domain(), Domain::Time);
    }

    #[test]
    fn every_element_read_and_written_once_per_pass() {
        let dir = tempfile::tempdir().unwrap();
        let sig = random_signal(9, 1);
        for mode in [ExternalMode::EntryWise, ExternalMode::Blocked] {
            let mut ds = dataset(&dir, &format!("{mode:?}"), &sig);
            ds.track_touches();
            let plan = plan_external(9, 5, mode, 8 * 4).unwrap();
            for pass in 0..plan.q() {
                let opts = ExternalOptions {
                    resume: pass > 0,
                    stop_after_passes: Some(pass + 1),
                    ..ExternalOptions::default()
                };
                let report = run_external(&mut ds, &plan, opts).unwrap();
                assert_eq!(report.passes.len(), 1);
                let touches = ds.take_touches().unwrap();
                assert!(
                    touches.iter().all(|t| *t
                        == Touch {
                            reads: 1,
                            writes: 1
                        }),
                    "{mode:?} pass {pass}"
                );
                let io = report.passes[0].io;
                assert_eq!(io.bytes_read, 8 << 9);
                assert_eq!(io.bytes_written, 8 << 9);
            }
            assert_eq!(ds.read_signal().unwrap(), transformed(&sig).unwrap());
        }
    }

    #[test]
    fn stopped_run_resumes_at_boundary() {
        let dir = tempfile::tempdir().unwrap();
        let sig = random_signal(10, 2);
        let mut ds = dataset(&dir, "s", &sig);
        let plan = plan_external(10, 6, ExternalMode::Blocked, 8 * 8).unwrap();
        let stop = ExternalOptions {
            stop_after_passes: Some(2),
            ..ExternalOptions::default()
        };
        let r = run_external(&mut ds, &plan, stop).unwrap();
        assert!(!r.complete);
        assert_eq!(ds.domain(), Domain::Time);

        let path = ds.path().to_path_buf();
        drop(ds);
        let mut ds = DatasetFile::open_validated(&path).unwrap();
        assert!(matches!(
            run_external(&mut ds, &plan, ExternalOptions::default()),
            Err(Error::Resume(_))
        ));

        let other = plan_external(10, 6, ExternalMode::Blocked, 8 * 4).unwrap();
        let resume = ExternalOptions {
            resume: true,
            ..ExternalOptions::default()
        };
        assert!(matches!(
            run_external(&mut ds, &other, resume),
            Err(Error::Resume(_))
        ));

        let r = run_external(&mut ds, &plan, resume).unwrap();
        assert_eq!(r.resumed_at, Some((2, 0)));
        assert_eq!(r.passes.len(), plan.q() - 2);
        assert!(r.complete);
        assert_eq!(ds.read_signal().unwrap(), transformed(&sig).unwrap());
        assert!(ds.metadata().pass_progress.is_none());
    }

    #[test]
    fn write_fault_resumes_from_journal() {
        let dir = tempfile::tempdir().unwrap();
        let sig = random_signal(10, 3);
        let want = transformed(&sig).unwrap();
        // faults landing on the first and on the second write of a unit,
        // in pass 0 and in stage passes
        for op in [3u64, 17, 40, 41, 100, 257] {
            for mode in [ExternalMode::EntryWise, ExternalMode::Blocked] {
                let mut ds = dataset(&dir, &format!("j{op}{mode:?}"), &sig);
                let plan = plan_external(10, 5, mode, 8 * 4).unwrap();
                ds.inject_write_fault(op);
                let err = run_external(&mut ds, &plan, ExternalOptions::default()).unwrap_err();
                assert!(err.is_io(), "{err}");
                assert!(matches!(
                    ds.metadata().pass_progress.unwrap().state,
                    PassState::Failed { journal: true, .. }
                ));
                assert!(journal_path(ds.path()).exists());

                let path = ds.path().to_path_buf();
                drop(ds);
                let mut ds = DatasetFile::open_validated(&path).unwrap();
                let resume = ExternalOptions {
                    resume: true,
                    ..ExternalOptions::default()
                };
                let r = run_external(&mut ds, &plan, resume).unwrap();
                assert!(r.resumed_at.is_some());
                assert_eq!(ds.read_signal().unwrap(), want, "op {op} {mode:?}");
                assert!(!journal_path(&path).exists());
            }
        }
    }

    #[test]
    fn killed_run_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let sig = random_signal(6, 4);
        let mut ds = dataset(&dir, "k", &sig);
        let plan = plan_external(6, 3, ExternalMode::Blocked, 16).unwrap();
        ds.set_progress(Some(PassProgress {
            mode: plan.mode,
            mem_log2: 3,
            io_block_elems: 2,
            next_pass: 1,
            state: PassState::Running,
        }))
        .unwrap();
        let resume = ExternalOptions {
            resume: true,
            ..ExternalOptions::default()
        };
        assert!(matches!(
            run_external(&mut ds, &plan, resume),
            Err(Error::Resume(_))
        ));
    }

    #[test]
    fn overflow_in_pass_zero_restores_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut x = vec![1i64; 1 << 8];
        x[200] = 1 << 56;
        let sig = Signal::time_i64(x).unwrap();
        let mut ds = dataset(&dir, "o", &sig);
        let err = run_external_blocked(&mut ds, 5, 4).unwrap_err();
        assert!(matches!(err, Error::Overflow { n: 8, .. }));
        assert_eq!(ds.read_signal().unwrap(), sig);
        assert!(ds.metadata().pass_progress.is_none());
    }

    #[test]
    fn threaded_pass_zero() {
        let dir = tempfile::tempdir().unwrap();
        let sig = random_signal(10, 6);
        let mut ds = dataset(&dir, "t", &sig);
        let plan = plan_external(10, 7, ExternalMode::Blocked, 64).unwrap();
        let opts = ExternalOptions {
            threads: 4,
            ..ExternalOptions::default()
        };
        run_external(&mut ds, &plan, opts).unwrap();
        assert_eq!(ds.read_signal().unwrap(), transformed(&sig).unwrap());
    }

    #[test]
    fn checkpointed_runs_match_and_survive_faults() {
        let dir = tempfile::tempdir().unwrap();
        let sig = random_signal(10, 8);
        let want = transformed(&sig).unwrap();
        for mode in [ExternalMode::EntryWise, ExternalMode::Blocked] {
            let plan = plan_external(10, 5, mode, 8 * 4).unwrap();
            let opts = ExternalOptions {
                checkpoint_elems: Some(96),
                ..ExternalOptions::default()
            };
            let mut ds = dataset(&dir, &format!("c{mode:?}"), &sig);
            run_external(&mut ds, &plan, opts).unwrap();
            assert_eq!(ds.read_signal().unwrap(), want);
            assert!(!journal_path(ds.path()).exists());

            for op in [2u64, 30, 31, 300] {
                let mut ds = dataset(&dir, &format!("cf{op}{mode:?}"), &sig);
                ds.inject_write_fault(op);
                assert!(run_external(&mut ds, &plan, opts).unwrap_err().is_io());
                let state = ds.metadata().pass_progress.unwrap().state;
                assert!(
                    matches!(
                        state,
                        PassState::Journaled { .. } | PassState::Cursor { .. }
                    ),
                    "{state:?}"
                );
                let resume = ExternalOptions {
                    resume: true,
                    ..opts
                };
                run_external(&mut ds, &plan, resume).unwrap();
                assert_eq!(ds.read_signal().unwrap(), want, "op {op} {mode:?}");
            }
        }
    }

    #[test]
    fn stale_journal_behind_a_cursor_is_discarded() {
        let dir = tempfile::tempdir().unwrap();
        let sig = random_signal(8, 9);
        let mut ds = dataset(&dir, "stale", &sig);
        let plan = plan_external(8, 4, ExternalMode::Blocked, 16).unwrap();
        ds.set_progress(Some(PassProgress {
            mode: plan.mode,
            mem_log2: 4,
            io_block_elems: 2,
            next_pass: 0,
            state: PassState::Cursor { unit: 0 },
        }))
        .unwrap();
        fs::write(journal_path(ds.path()), b"partial").unwrap();
        let opts = ExternalOptions {
            resume: true,
            checkpoint_elems: Some(64),
            ..ExternalOptions::default()
        };
        run_external(&mut ds, &plan, opts).unwrap();
        assert_eq!(ds.read_signal().unwrap(), transformed(&sig).unwrap());
        assert!(!journal_path(ds.path()).exists());
    }
}
