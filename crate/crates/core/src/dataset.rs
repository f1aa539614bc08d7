//! On-disk datasets: a raw little-endian array of `2^n` 8-byte elements
//! plus a JSON sidecar at `<path>.meta.json`.

use std::fs::{self, File, OpenOptions};
use std::io;
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::aligned::{self, AlignedBuf};
use crate::error::{Error, Result};
use crate::external::PassProgress;
use crate::signal::{Domain, Element, Samples, ScalarKind, Signal};

pub const FORMAT_VERSION: u32 = 1;
pub const ELEMENT_BYTES: u64 = 8;

/// Sidecar contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub format_version: u32,
    pub log2_dim: u32,
    pub element_kind: ScalarKind,
    pub domain: Domain,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pass_progress: Option<PassProgress>,
}

impl Metadata {
    pub fn new(log2_dim: u32, element_kind: ScalarKind, domain: Domain) -> Self {
        Metadata {
            format_version: FORMAT_VERSION,
            log2_dim,
            element_kind,
            domain,
            pass_progress: None,
        }
    }

    pub fn len(&self) -> u64 {
        1u64 << self.log2_dim
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn byte_len(&self) -> u64 {
        ELEMENT_BYTES << self.log2_dim
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// A contiguous run of elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSpec {
    pub start: u64,
    pub count: u64,
}

impl BlockSpec {
    pub fn new(start: u64, count: u64) -> Self {
        BlockSpec { start, count }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct OpenFlags {
    /// Bypass the page cache where offsets and lengths are aligned.
    pub direct_io: bool,
}

/// Counters maintained by the I/O layer.
#[derive(Debug, Default)]
pub struct IoStats {
    read_ops: AtomicU64,
    write_ops: AtomicU64,
    bytes_read: AtomicU64,
    bytes_written: AtomicU64,
    touches: Mutex<Option<Vec<Touch>>>,
}

/// Per-element access counts, recorded only when tracking is enabled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Touch {
    pub reads: u32,
    pub writes: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct IoSnapshot {
    pub read_ops: u64,
    pub write_ops: u64,
    pub bytes_read: u64,
    pub bytes_written: u64,
}

impl IoSnapshot {
    pub fn since(&self, earlier: &IoSnapshot) -> IoSnapshot {
        IoSnapshot {
            read_ops: self.read_ops - earlier.read_ops,
            write_ops: self.write_ops - earlier.write_ops,
            bytes_read: self.bytes_read - earlier.bytes_read,
            bytes_written: self.bytes_written - earlier.bytes_written,
        }
    }
}

impl IoStats {
    pub fn snapshot(&self) -> IoSnapshot {
        IoSnapshot {
            read_ops: self.read_ops.load(Ordering::Relaxed),
            write_ops: self.write_ops.load(Ordering::Relaxed),
            bytes_read: self.bytes_read.load(Ordering::Relaxed),
            bytes_written: self.bytes_written.load(Ordering::Relaxed),
        }
    }

    fn record(&self, write: bool, start: u64, count: u64) {
        let (ops, bytes) = if write {
            (&self.write_ops, &self.bytes_written)
        } else {
            (&self.read_ops, &self.bytes_read)
        };
        ops.fetch_add(1, Ordering::Relaxed);
        bytes.fetch_add(count * ELEMENT_BYTES, Ordering::Relaxed);
        let mut guard = self.touches.lock().unwrap();
        if let Some(t) = guard.as_mut() {
            for e in &mut t[start as usize..(start + count) as usize] {
                if write {
                    e.writes += 1;
                } else {
                    e.reads += 1;
                }
            }
        }
    }
}

/// Handle to an on-disk dataset.
///
/// Reads take `&self` and may run concurrently on disjoint ranges; writes
/// take `&mut self`.
#[derive(Debug)]
pub struct DatasetFile {
    path: PathBuf,
    meta: Metadata,
    file: File,
    direct: Option<File>,
    align: usize,
    stats: IoStats,
    fail_write_op: AtomicU64,
}

fn map_io(path: &Path, offset: u64, needed: u64, e: io::Error) -> Error {
    if e.raw_os_error() == Some(libc::ENOSPC) {
        Error::DiskFull {
            path: path.to_path_buf(),
            needed,
        }
    } else {
        Error::io(path, offset, e)
    }
}

pub fn read_metadata(path: &Path) -> Result<Metadata> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::BadMetadata {
        path: side.clone(),
        reason: e.to_string(),
    })?;
    let meta: Metadata = serde_json::from_str(&text).map_err(|e| Error::BadMetadata {
        path: side.clone(),
        reason: e.to_string(),
    })?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::BadMetadata {
            path: side,
            reason: format!("unsupported format_version {}", meta.format_version),
        });
    }
    if meta.log2_dim > 60 {
        return Err(Error::BadMetadata {
            path: side,
            reason: format!("log2_dim {} out of range", meta.log2_dim),
        });
    }
    Ok(meta)
}

/// Writes the sidecar via a temporary file and rename.
fn write_metadata(path: &Path, meta: &Metadata) -> Result<()> {
    let side = sidecar_path(path);
    let mut tmp = side.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let text = serde_json::to_string_pretty(meta).expect("metadata serializes");
    let write = || -> io::Result<()> {
        fs::write(&tmp, text.as_bytes())?;
        File::open(&tmp)?.sync_all()?;
        fs::rename(&tmp, &side)
    };
    write().map_err(|e| map_io(&side, 0, text.len() as u64, e))
}

impl DatasetFile {
    /// Allocates a zero-filled time-domain dataset of `2^n` elements.
    pub fn create(path: impl AsRef<Path>, n: u32, kind: ScalarKind) -> Result<Self> {
        Self::create_with(path, n, kind, Domain::Time)
    }

    pub fn create_with(
        path: impl AsRef<Path>,
        n: u32,
        kind: ScalarKind,
        domain: Domain,
    ) -> Result<Self> {
        let path = path.as_ref();
        let meta = Metadata::new(n, kind, domain);
        let bytes = meta.byte_len();
        if path.exists() || sidecar_path(path).exists() {
            return Err(Error::PathExists(path.to_path_buf()));
        }
        let dir = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        if let Some(free) = aligned::free_space(dir) {
            if free < bytes {
                return Err(Error::DiskFull {
                    path: path.to_path_buf(),
                    needed: bytes,
                });
            }
        }
        let file = OpenOptions::new()
            .read(true)
            .write(true)
            .create_new(true)
            .open(path)
            .map_err(|e| {
                if e.kind() == io::ErrorKind::AlreadyExists {
                    Error::PathExists(path.to_path_buf())
                } else {
                    map_io(path, 0, bytes, e)
                }
            })?;
        file.set_len(bytes).map_err(|e| map_io(path, 0, bytes, e))?;
        write_metadata(path, &meta)?;
        Ok(Self::from_parts(path, meta, file, None))
    }

    /// Writes a whole signal to a new dataset.
    pub fn from_signal(path: impl AsRef<Path>, sig: &Signal) -> Result<Self> {
        let mut ds = Self::create_with(path, sig.log2_dim(), sig.kind(), sig.domain())?;
        match sig.samples() {
            Samples::Int(v) => ds.write_at(0, v)?,
            Samples::Float(v) => ds.write_at(0, v)?,
        }
        Ok(ds)
    }

    /// Opens an existing dataset, checking the sidecar against the file size.
    pub fn open_validated(path: impl AsRef<Path>) -> Result<Self> {
        Self::open_with(path, OpenFlags::default())
    }

    pub fn open_with(path: impl AsRef<Path>, flags: OpenFlags) -> Result<Self> {
        let path = path.as_ref();
        let meta = read_metadata(path)?;
        let file = OpenOptions::new()
            .read(true)
            .write(true)
            .open(path)
            .map_err(|e| Error::io(path, 0, e))?;
        let found = file.metadata().map_err(|e| Error::io(path, 0, e))?.len();
        if found != meta.byte_len() {
            return Err(Error::SizeMismatch {
                path: path.to_path_buf(),
                expected: meta.byte_len(),
                found,
            });
        }
        let direct = if flags.direct_io {
            aligned::open_direct(path, OpenOptions::new().read(true).write(true)).ok()
        } else {
            None
        };
        Ok(Self::from_parts(path, meta, file, direct))
    }

    /// Writes a sidecar for a raw file whose size is exactly `8 * 2^n`.
    /// This is the only place where `n` is inferred from the file size.
    pub fn adopt_raw(path: impl AsRef<Path>, kind: ScalarKind, domain: Domain) -> Result<Self> {
        let path = path.as_ref();
        let size = fs::metadata(path).map_err(|e| Error::io(path, 0, e))?.len();
        let elems = size / ELEMENT_BYTES;
        if size % ELEMENT_BYTES != 0 || !elems.is_power_of_two() {
            return Err(Error::SizeMismatch {
                path: path.to_path_buf(),
                expected: (elems.max(1)).next_power_of_two() * ELEMENT_BYTES,
                found: size,
            });
        }
        write_metadata(path, &Metadata::new(elems.trailing_zeros(), kind, domain))?;
        Self::open_validated(path)
    }

    fn from_parts(path: &Path, meta: Metadata, file: File, direct: Option<File>) -> Self {
        DatasetFile {
            path: path.to_path_buf(),
            meta,
            file,
            direct,
            align: aligned::io_alignment(),
            stats: IoStats::default(),
            fail_write_op: AtomicU64::new(0),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn metadata(&self) -> &Metadata {
        &self.meta
    }

    pub fn log2_dim(&self) -> u32 {
        self.meta.log2_dim
    }

    pub fn len(&self) -> u64 {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn kind(&self) -> ScalarKind {
        self.meta.element_kind
    }

    pub fn domain(&self) -> Domain {
        self.meta.domain
    }

    pub fn direct_io_active(&self) -> bool {
        self.direct.is_some()
    }

    pub fn stats(&self) -> &IoStats {
        &self.stats
    }

    /// Starts recording per-element read/write counts.
    pub fn track_touches(&self) {
        *self.stats.touches.lock().unwrap() = Some(vec![Touch::default(); self.len() as usize]);
    }

    /// Returns and resets the per-element counts.
    pub fn take_touches(&self) -> Option<Vec<Touch>> {
        let mut guard = self.stats.touches.lock().unwrap();
        let out = guard.clone();
        if let Some(t) = guard.as_mut() {
            t.iter_mut().for_each(|e| *e = Touch::default());
        }
        out
    }

    /// Makes the write operation with 1-based index `op` (counted from the
    /// handle's creation) fail with an injected I/O error without touching
    /// the file. Fires once.
    pub fn inject_write_fault(&self, op: u64) {
        self.fail_write_op.store(op, Ordering::SeqCst);
    }

    pub fn set_domain(&mut self, domain: Domain) -> Result<()> {
        self.meta.domain = domain;
        self.save_metadata()
    }

    pub fn set_progress(&mut self, progress: Option<PassProgress>) -> Result<()> {
        self.meta.pass_progress = progress;
        self.save_metadata()
    }

    pub fn save_metadata(&self) -> Result<()> {
        write_metadata(&self.path, &self.meta)
    }

    /// Flushes file data to stable storage.
    pub fn sync(&self) -> Result<()> {
        self.file
            .sync_data()
            .map_err(|e| Error::io(&self.path, 0, e))
    }

    fn check_bounds(&self, start: u64, count: u64) -> Result<()> {
        if count == 0 || start.checked_add(count).is_none_or(|end| end > self.len()) {
            return Err(Error::OutOfBounds {
                start,
                count,
                n: self.meta.log2_dim,
            });
        }
        Ok(())
    }

    fn check_kind<T: Element>(&self) -> Result<()> {
        if T::KIND != self.meta.element_kind {
            return Err(Error::KindMismatch {
                expected: self.meta.element_kind.as_str(),
                found: T::KIND.as_str(),
            });
        }
        Ok(())
    }

    fn aligned(&self, offset: u64, len: usize) -> bool {
        self.direct.is_some()
            && offset.is_multiple_of(self.align as u64)
            && len.is_multiple_of(self.align)
    }

    pub fn read_block<T: Element>(&self, spec: BlockSpec) -> Result<Vec<T>> {
        self.check_bounds(spec.start, spec.count)?;
        let mut out = vec![T::default(); spec.count as usize];
        self.read_into(spec.start, &mut out)?;
        Ok(out)
    }

    /// Reads `out.len()` elements starting at element `start`.
    pub fn read_into<T: Element>(&self, start: u64, out: &mut [T]) -> Result<()> {
        self.check_kind::<T>()?;
        self.check_bounds(start, out.len() as u64)?;
        let offset = start * ELEMENT_BYTES;
        let nbytes = out.len() * ELEMENT_BYTES as usize;
        let decode = |bytes: &[u8], out: &mut [T]| {
            for (dst, chunk) in out.iter_mut().zip(bytes.chunks_exact(8)) {
                *dst = T::from_le(chunk.try_into().unwrap());
            }
        };
        if self.aligned(offset, nbytes) {
            let mut buf = AlignedBuf::zeroed(nbytes, self.align);
            self.direct
                .as_ref()
                .unwrap()
                .read_exact_at(&mut buf, offset)
                .map_err(|e| Error::io(&self.path, offset, e))?;
            decode(&buf, out);
        } else {
            let mut buf = vec![0u8; nbytes];
            self.file
                .read_exact_at(&mut buf, offset)
                .map_err(|e| Error::io(&self.path, offset, e))?;
            decode(&buf, out);
        }
        self.stats.record(false, start, out.len() as u64);
        Ok(())
    }

    pub fn write_block<T: Element>(&mut self, spec: BlockSpec, data: &[T]) -> Result<()> {
        if data.len() as u64 != spec.count {
            return Err(Error::DimMismatch(format!(
                "block of {} elements given {} values",
                spec.count,
                data.len()
            )));
        }
        self.write_at(spec.start, data)
    }

    /// Writes `data` starting at element `start`.
    pub fn write_at<T: Element>(&mut self, start: u64, data: &[T]) -> Result<()> {
        self.check_kind::<T>()?;
        self.check_bounds(start, data.len() as u64)?;
        let offset = start * ELEMENT_BYTES;
        let nbytes = data.len() * ELEMENT_BYTES as usize;

        let op = self.stats.write_ops.load(Ordering::Relaxed) + 1;
        if self.fail_write_op.load(Ordering::SeqCst) == op {
            self.fail_write_op.store(0, Ordering::SeqCst);
            return Err(Error::io(
                &self.path,
                offset,
                io::Error::other(format!("injected fault on write op {op}")),
            ));
        }

        let encode = |buf: &mut [u8]| {
            for (chunk, v) in buf.chunks_exact_mut(8).zip(data) {
                chunk.copy_from_slice(&v.to_le());
            }
        };
        if self.aligned(offset, nbytes) {
            let mut buf = AlignedBuf::zeroed(nbytes, self.align);
            encode(&mut buf);
            self.direct
                .as_ref()
                .unwrap()
                .write_all_at(&buf, offset)
                .map_err(|e| map_io(&self.path, offset, nbytes as u64, e))?;
        } else {
            let mut buf = vec![0u8; nbytes];
            encode(&mut buf);
            self.file
                .write_all_at(&buf, offset)
                .map_err(|e| map_io(&self.path, offset, nbytes as u64, e))?;
        }
        self.stats.record(true, start, data.len() as u64);
        Ok(())
    }

    /// Loads the whole dataset into memory.
    pub fn read_signal(&self) -> Result<Signal> {
        let len = self.len();
        let samples = match self.kind() {
            ScalarKind::Int64 => Samples::Int(self.read_block(BlockSpec::new(0, len))?),
            ScalarKind::Float64 => Samples::Float(self.read_block(BlockSpec::new(0, len))?),
        };
        Signal::new(self.domain(), samples)
    }

    /// Overwrites the whole dataset with `sig` and updates the domain tag.
    pub fn write_signal(&mut self, sig: &Signal) -> Result<()> {
        if sig.log2_dim() != self.log2_dim() {
            return Err(Error::DimMismatch(format!(
                "dataset has n = {}, signal has n = {}",
                self.log2_dim(),
                sig.log2_dim()
            )));
        }
        match sig.samples() {
            Samples::Int(v) => self.write_at(0, v)?,
            Samples::Float(v) => self.write_at(0, v)?,
        }
        self.meta.domain = sig.domain();
        self.save_metadata()
    }
}
