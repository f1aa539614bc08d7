//! Block-size copy benchmark.
//!
//! Each measurement writes a fresh random source file, then copies it
//! block by block into a new file with a durability flush at the end, checks
//! the copy byte for byte and deletes both files. Only the copy is timed.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::aligned::{self, AlignedBuf};
use crate::error::{Error, Result};

pub const MIB: u64 = 1 << 20;
/// Single transfers are capped here; larger requested blocks are chunked.
pub const MAX_TRANSFER_BYTES: u64 = 1 << 30;

/// Default sweep in MiB.
pub const DEFAULT_BLOCK_SIZES: [u64; 6] =
    [2 * MIB, 8 * MIB, 32 * MIB, 128 * MIB, 512 * MIB, 1024 * MIB];

/// MiB per second.
pub fn throughput_mbps(bytes: u64, seconds: f64) -> f64 {
    bytes as f64 / MIB as f64 / seconds
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CopyMeasurement {
    pub file_bytes: u64,
    /// Requested block size.
    pub block_bytes: u64,
    /// Size of each transfer actually issued.
    pub transfer_bytes: u64,
    pub transfers: u64,
    pub seconds: f64,
    pub read_seconds: f64,
    pub write_seconds: f64,
    pub mbps: f64,
    pub read_mbps: f64,
    pub write_mbps: f64,
    pub direct_io: bool,
    pub verified: bool,
    pub warnings: Vec<String>,
}

impl CopyMeasurement {
    fn from_timings(
        file_bytes: u64,
        block_bytes: u64,
        transfer_bytes: u64,
        seconds: f64,
        read_seconds: f64,
        write_seconds: f64,
    ) -> Self {
        CopyMeasurement {
            file_bytes,
            block_bytes,
            transfer_bytes,
            transfers: file_bytes.div_ceil(transfer_bytes),
            seconds,
            read_seconds,
            write_seconds,
            mbps: throughput_mbps(file_bytes, seconds),
            read_mbps: throughput_mbps(file_bytes, read_seconds),
            write_mbps: throughput_mbps(file_bytes, write_seconds),
            direct_io: false,
            verified: false,
            warnings: Vec::new(),
        }
    }

    /// A measurement built from a known copy time, for model calibration
    /// from external numbers.
    pub fn synthetic(file_bytes: u64, block_bytes: u64, seconds: f64) -> Self {
        let transfer = block_bytes.clamp(1, MAX_TRANSFER_BYTES);
        Self::from_timings(
            file_bytes,
            block_bytes,
            transfer,
            seconds,
            seconds / 2.0,
            seconds / 2.0,
        )
    }

    /// `mbps * seconds` must reproduce the file size to within 0.1%.
    pub fn is_consistent(&self) -> bool {
        let mib = self.file_bytes as f64 / MIB as f64;
        ((self.mbps * self.seconds - mib) / mib).abs() <= 1e-3
            && self.transfers == self.file_bytes.div_ceil(self.transfer_bytes)
    }
}

/// Removes the listed files when dropped.
struct Scratch(Vec<PathBuf>);

impl Drop for Scratch {
    fn drop(&mut self) {
        for p in &self.0 {
            let _ = fs::remove_file(p);
        }
    }
}

fn write_source(path: &Path, file_bytes: u64, seed: u64) -> io::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = File::create(path)?;
    let mut chunk = vec![0u8; (4 * MIB).min(file_bytes.max(1)) as usize];
    let mut left = file_bytes;
    while left > 0 {
        let n = left.min(chunk.len() as u64) as usize;
        rng.fill_bytes(&mut chunk[..n]);
        f.write_all(&chunk[..n])?;
        left -= n as u64;
    }
    f.sync_all()?;
    aligned::drop_page_cache(&f);
    Ok(())
}

fn files_equal(a: &Path, b: &Path) -> io::Result<bool> {
    let fa = File::open(a)?;
    let fb = File::open(b)?;
    let len = fa.metadata()?.len();
    if fb.metadata()?.len() != len {
        return Ok(false);
    }
    let mut ba = vec![0u8; (8 * MIB) as usize];
    let mut bb = vec![0u8; (8 * MIB) as usize];
    let mut off = 0;
    while off < len {
        let n = (len - off).min(ba.len() as u64) as usize;
        fa.read_exact_at(&mut ba[..n], off)?;
        fb.read_exact_at(&mut bb[..n], off)?;
        if ba[..n] != bb[..n] {
            return Ok(false);
        }
        off += n as u64;
    }
    Ok(true)
}

/// Times a block-by-block copy of a fresh `file_bytes` source in `dir`.
pub fn measure_copy(
    dir: &Path,
    file_bytes: u64,
    block_bytes: u64,
    direct_io: bool,
    seed: u64,
) -> Result<CopyMeasurement> {
    if file_bytes == 0 || block_bytes == 0 {
        return Err(Error::BadArguments(
            "file and block sizes must be positive".into(),
        ));
    }
    if let Some(free) = aligned::free_space(dir) {
        if free < 2 * file_bytes {
            return Err(Error::DiskFull {
                path: dir.to_path_buf(),
                needed: 2 * file_bytes,
            });
        }
    }
    let mut warnings = Vec::new();
    let transfer_bytes = block_bytes.min(MAX_TRANSFER_BYTES);
    if transfer_bytes < block_bytes {
        warnings.push(format!(
            "block of {block_bytes} bytes capped to {transfer_bytes}-byte transfers"
        ));
    }

    let tag = format!("{}-{}-{}", std::process::id(), block_bytes, seed);
    let src = dir.join(format!(".iobench-src-{tag}"));
    let dst = dir.join(format!(".iobench-dst-{tag}"));
    let _scratch = Scratch(vec![src.clone(), dst.clone()]);
    write_source(&src, file_bytes, seed).map_err(|e| Error::io(&src, 0, e))?;

    let align = aligned::io_alignment() as u64;
    let mut use_direct = direct_io;
    if direct_io && (!transfer_bytes.is_multiple_of(align) || !file_bytes.is_multiple_of(align)) {
        warnings.push(format!(
            "direct I/O needs {align}-byte aligned sizes; falling back to buffered I/O"
        ));
        use_direct = false;
    }
    let open_pair = |direct: bool| -> io::Result<(File, File)> {
        let mut ro = OpenOptions::new();
        ro.read(true);
        let mut wo = OpenOptions::new();
        wo.write(true).create_new(true);
        if direct {
            Ok((
                aligned::open_direct(&src, &mut ro)?,
                aligned::open_direct(&dst, &mut wo)?,
            ))
        } else {
            Ok((ro.open(&src)?, wo.open(&dst)?))
        }
    };
    let (reader, writer) = match open_pair(use_direct) {
        Ok(pair) => pair,
        Err(e) if use_direct => {
            let _ = fs::remove_file(&dst);
            warnings.push(
                Error::DirectIoUnsupported(e.to_string()).to_string()
                    + "; fell back to buffered I/O",
            );
            use_direct = false;
            open_pair(false).map_err(|e| Error::io(&dst, 0, e))?
        }
        Err(e) => return Err(Error::io(&dst, 0, e)),
    };

    let buf_len = transfer_bytes.min(file_bytes.next_multiple_of(align)) as usize;
    let mut buf = AlignedBuf::zeroed(buf_len, align as usize);
    let mut read_secs = 0.0;
    let mut write_secs = 0.0;
    let start = Instant::now();
    let mut off = 0u64;
    while off < file_bytes {
        let n = (file_bytes - off).min(buf_len as u64) as usize;
        let t0 = Instant::now();
        reader
            .read_exact_at(&mut buf[..n], off)
            .map_err(|e| Error::io(&src, off, e))?;
        let t1 = Instant::now();
        writer.write_all_at(&buf[..n], off).map_err(|e| {
            if e.raw_os_error() == Some(libc::ENOSPC) {
                Error::DiskFull {
                    path: dst.clone(),
                    needed: file_bytes,
                }
            } else {
                Error::io(&dst, off, e)
            }
        })?;
        read_secs += (t1 - t0).as_secs_f64();
        write_secs += t1.elapsed().as_secs_f64();
        off += n as u64;
    }
    let t_flush = Instant::now();
    writer
        .sync_data()
        .map_err(|e| Error::io(&dst, file_bytes, e))?;
    write_secs += t_flush.elapsed().as_secs_f64();
    let seconds = start.elapsed().as_secs_f64().max(f64::MIN_POSITIVE);
    drop(reader);
    drop(writer);

    let verified = files_equal(&src, &dst).map_err(|e| Error::io(&dst, 0, e))?;
    if !verified {
        return Err(Error::io(
            &dst,
            0,
            io::Error::other("copy differs from source"),
        ));
    }
    let mut m = CopyMeasurement::from_timings(
        file_bytes,
        block_bytes,
        transfer_bytes,
        seconds,
        read_secs.max(f64::MIN_POSITIVE),
        write_secs.max(f64::MIN_POSITIVE),
    );
    m.direct_io = use_direct;
    m.verified = verified;
    m.warnings = warnings;
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub block_bytes: u64,
    pub measurement: Option<CopyMeasurement>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IoBenchReport {
    pub file_bytes: u64,
    pub direct_io: bool,
    pub rows: Vec<SweepRow>,
    /// Observation about the copy-time trend; hardware-dependent.
    pub annotation: String,
}

impl IoBenchReport {
    pub fn new(file_bytes: u64, direct_io: bool, rows: Vec<SweepRow>) -> Self {
        let mut report = IoBenchReport {
            file_bytes,
            direct_io,
            rows,
            annotation: String::new(),
        };
        report.annotation = report.trend_annotation();
        report
    }

    pub fn successful(&self) -> impl Iterator<Item = &CopyMeasurement> {
        self.rows.iter().filter_map(|r| r.measurement.as_ref())
    }

    pub fn check_consistency(&self) -> bool {
        self.successful().all(CopyMeasurement::is_consistent)
    }

    fn trend_annotation(&self) -> String {
        let mut rows: Vec<_> = self.successful().collect();
        if rows.len() < 2 {
            return "too few successful rows to judge the block-size trend".into();
        }
        rows.sort_by_key(|m| m.block_bytes);
        let decreasing = rows.windows(2).all(|w| w[1].seconds <= w[0].seconds);
        let last = rows[rows.len() - 1].seconds;
        let prev = rows[rows.len() - 2].seconds;
        let converged = (prev - last).abs() <= 0.1 * prev;
        match (decreasing, converged) {
            (true, true) => "copy time decreases and converges with increasing block size".into(),
            (true, false) => "copy time decreases with block size but has not converged".into(),
            (false, true) => {
                "copy time is not monotone in block size but the largest sizes agree".into()
            }
            (false, false) => "copy time is not monotone in block size".into(),
        }
    }

    /// `block_bytes,seconds,mbps`, one line per successful row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("block_bytes,seconds,mbps\n");
        for m in self.successful() {
            out.push_str(&format!(
                "{},{:.6},{:.3}\n",
                m.block_bytes, m.seconds, m.mbps
            ));
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "file: {} MiB, direct I/O requested: {}\n{:>12} {:>10} {:>10} {:>10} {:>10}  notes\n",
            self.file_bytes / MIB,
            self.direct_io,
            "block",
            "seconds",
            "MiB/s",
            "read MiB/s",
            "write MiB/s"
        );
        for row in &self.rows {
            let block = human_bytes(row.block_bytes);
            match (&row.measurement, &row.error) {
                (Some(m), _) => out.push_str(&format!(
                    "{:>12} {:>10.3} {:>10.1} {:>10.1} {:>10.1}  {}\n",
                    block,
                    m.seconds,
                    m.mbps,
                    m.read_mbps,
                    m.write_mbps,
                    m.warnings.join("; ")
                )),
                (None, err) => out.push_str(&format!(
                    "{:>12} {:>10} {:>10} {:>10} {:>10}  failed: {}\n",
                    block,
                    "-",
                    "-",
                    "-",
                    "-",
                    err.as_deref().unwrap_or("unknown error")
                )),
            }
        }
        out.push_str(&self.annotation);
        out.push('\n');
        out
    }
}

pub fn human_bytes(b: u64) -> String {
    if b >= 1 << 30 && b.is_multiple_of(1 << 30) {
        format!("{}G", b >> 30)
    } else if b >= MIB && b.is_multiple_of(MIB) {
        format!("{}M", b >> 20)
    } else if b >= 1024 && b.is_multiple_of(1024) {
        format!("{}K", b >> 10)
    } else {
        format!("{b}")
    }
}

/// Parses `512`, `4K`, `2M`, `1G` (binary multiples).
pub fn parse_size(s: &str) -> Result<u64> {
    let s = s.trim();
    let (digits, mult) = match s.chars().last() {
        Some('k' | 'K') => (&s[..s.len() - 1], 1u64 << 10),
        Some('m' | 'M') => (&s[..s.len() - 1], MIB),
        Some('g' | 'G') => (&s[..s.len() - 1], 1 << 30),
        _ => (s, 1),
    };
    digits
        .parse::<u64>()
        .ok()
        .and_then(|v| v.checked_mul(mult))
        .filter(|&v| v > 0)
        .ok_or_else(|| Error::BadArguments(format!("bad size {s:?}")))
}

/// Drops duplicate sizes, keeping first occurrences in order.
pub fn normalize_block_sizes(sizes: &[u64]) -> Vec<u64> {
    let mut seen = std::collections::HashSet::new();
    sizes.iter().copied().filter(|s| seen.insert(*s)).collect()
}

/// Runs [`measure_copy`] for each block size. Failures are recorded per row.
pub fn sweep(
    dir: &Path,
    file_bytes: u64,
    block_sizes: &[u64],
    direct_io: bool,
    seed: u64,
) -> Result<IoBenchReport> {
    let sizes = normalize_block_sizes(block_sizes);
    if sizes.is_empty() {
        return Err(Error::BadArguments("empty block size list".into()));
    }
    let rows = sizes
        .iter()
        .enumerate()
        .map(|(i, &block)| {
            match measure_copy(
                dir,
                file_bytes,
                block,
                direct_io,
                seed.wrapping_add(i as u64),
            ) {
                Ok(m) => SweepRow {
                    block_bytes: block,
                    measurement: Some(m),
                    error: None,
                },
                Err(e) => SweepRow {
                    block_bytes: block,
                    measurement: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    Ok(IoBenchReport::new(file_bytes, direct_io, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn transfer_count_and_throughput() {
        let m = CopyMeasurement::synthetic(16 * MIB, 2 * MIB, 0.2);
        assert_eq!(m.transfers, 8);
        assert!((m.mbps - 80.0).abs() < 1e-9);
        assert!(m.is_consistent());
        assert!((throughput_mbps(16 * MIB, 0.2) - 80.0).abs() < 1e-9);
    }

    #[test]
    fn real_copy_is_verified() {
        let dir = tempdir().unwrap();
        let m = measure_copy(dir.path(), 4 * MIB, MIB, false, 7).unwrap();
        assert_eq!(m.transfers, 4);
        assert!(m.verified);
        assert!(m.is_consistent());
        assert_eq!(
            fs::read_dir(dir.path()).unwrap().count(),
            0,
            "scratch files removed"
        );
    }

    #[test]
    fn direct_copy_falls_back_or_runs() {
        let dir = tempdir().unwrap();
        let m = measure_copy(dir.path(), 2 * MIB, 512 * 1024, true, 3).unwrap();
        assert!(m.verified);
        if !m.direct_io {
            assert!(!m.warnings.is_empty());
        }
    }

    #[test]
    fn oversized_blocks_are_capped() {
        let dir = tempdir().unwrap();
        let m = measure_copy(dir.path(), MIB, 2 << 30, false, 1).unwrap();
        assert_eq!(m.transfer_bytes, MAX_TRANSFER_BYTES);
        assert_eq!(m.transfers, 1);
        assert!(m.warnings.iter().any(|w| w.contains("capped")));
    }

    #[test]
    fn sweep_normalizes_sizes() {
        assert_eq!(normalize_block_sizes(&[8, 2, 8, 4, 2]), vec![8, 2, 4]);
        let dir = tempdir().unwrap();
        assert!(matches!(
            sweep(dir.path(), MIB, &[], false, 0),
            Err(Error::BadArguments(_))
        ));
        let r = sweep(dir.path(), MIB, &[256 << 10, MIB, 256 << 10], false, 0).unwrap();
        assert_eq!(r.rows.len(), 2);
        assert!(r.check_consistency());
        assert_eq!(r.to_csv().lines().count(), 3);
        assert!(r.to_csv().starts_with("block_bytes,seconds,mbps\n"));
    }

    #[test]
    fn sweep_records_failures() {
        let r = sweep(Path::new("/nonexistent/dir"), MIB, &[MIB], false, 0).unwrap();
        assert!(r.rows[0].measurement.is_none());
        assert!(r.rows[0].error.is_some());
        assert!(r.to_table().contains("failed"));
    }

    #[test]
    fn size_parsing() {
        assert_eq!(parse_size("2M").unwrap(), 2 * MIB);
        assert_eq!(parse_size("1G").unwrap(), 1 << 30);
        assert_eq!(parse_size("4k").unwrap(), 4096);
        assert_eq!(parse_size("100").unwrap(), 100);
        assert!(parse_size("x").is_err());
        assert!(parse_size("0").is_err());
        assert_eq!(human_bytes(2 * MIB), "2M");
    }
}
