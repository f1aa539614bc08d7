//! Random linear space reduction over GF(2).
//!
//! A full-rank map `L: GF(2)^d_in -> GF(2)^d_out` folds a signal by summing
//! the samples of each preimage, `x'(j') = sum_{L j = j'} x(j)`. The Walsh
//! coefficients of the folded signal are exactly the original coefficients
//! on the row space of `L`: `WHT(x')(i') = WHT(x)(L^T i')`.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dataset::DatasetFile;
use crate::error::{Error, Result};
use crate::signal::{max_abs_i64, Samples, ScalarKind, Signal};

/// Largest supported input dimension.
pub const MAX_DIM: u32 = 64;
/// Above this `d_in` coverage is estimated by sampling indices.
pub const ENUMERATION_LIMIT: u32 = 24;

/// A `d_out x d_in` binary matrix; row `r` bit `c` multiplies input bit `c`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LinearMap {
    d_in: u32,
    d_out: u32,
    rows: Vec<u64>,
}

fn width_mask(d: u32) -> u64 {
    if d >= 64 {
        u64::MAX
    } else {
        (1u64 << d) - 1
    }
}

/// Rank over GF(2) of a set of row vectors.
pub fn gf2_rank(rows: &[u64]) -> u32 {
    reduced_basis(rows).len() as u32
}

/// Echelon basis kept sorted descending so that `v.min(v ^ b)` reduces by
/// each leading bit in turn.
fn reduced_basis(rows: &[u64]) -> Vec<u64> {
    let mut basis: Vec<u64> = Vec::new();
    for &r in rows {
        let v = reduce(&basis, r);
        if v != 0 {
            basis.push(v);
            basis.sort_unstable_by(|a, b| b.cmp(a));
        }
    }
    basis
}

fn reduce(basis: &[u64], v: u64) -> u64 {
    basis.iter().fold(v, |v, &b| v.min(v ^ b))
}

fn check_dims(d_in: u32, d_out: u32) -> Result<()> {
    if d_in > MAX_DIM || d_out > d_in {
        return Err(Error::BadDims(format!(
            "need d_out <= d_in <= {MAX_DIM}, got d_in = {d_in}, d_out = {d_out}"
        )));
    }
    Ok(())
}

impl LinearMap {
    pub fn new(d_in: u32, rows: Vec<u64>) -> Result<Self> {
        let d_out = rows.len() as u32;
        check_dims(d_in, d_out)?;
        if let Some(r) = rows.iter().find(|&&r| r & !width_mask(d_in) != 0) {
            return Err(Error::BadDims(format!(
                "row {r:#b} is wider than d_in = {d_in}"
            )));
        }
        if gf2_rank(&rows) != d_out {
            return Err(Error::BadDims(format!(
                "map is not full rank ({d_out} rows)"
            )));
        }
        Ok(LinearMap { d_in, d_out, rows })
    }

    pub fn d_in(&self) -> u32 {
        self.d_in
    }

    pub fn d_out(&self) -> u32 {
        self.d_out
    }

    pub fn rows(&self) -> &[u64] {
        &self.rows
    }

    pub fn rank(&self) -> u32 {
        gf2_rank(&self.rows)
    }

    /// `L j`.
    pub fn apply(&self, j: u64) -> u64 {
        self.rows.iter().enumerate().fold(0, |acc, (r, &row)| {
            acc | (((row & j).count_ones() as u64 & 1) << r)
        })
    }

    /// `L^T i'`: XOR of the rows selected by the bits of `i'`.
    pub fn transpose_apply(&self, i_reduced: u64) -> u64 {
        self.rows
            .iter()
            .enumerate()
            .filter(|(r, _)| i_reduced >> r & 1 == 1)
            .fold(0, |acc, (_, &row)| acc ^ row)
    }

    /// Parses `d_out` lines of `d_in` characters `0`/`1`. The rightmost
    /// character of a line is input bit 0. Blank lines and `#` comments
    /// are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        let mut width = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let w = line.len() as u32;
            if *width.get_or_insert(w) != w {
                return Err(Error::BadDims(format!("line {}: ragged row", lineno + 1)));
            }
            if w == 0 || w > MAX_DIM {
                return Err(Error::BadDims(format!(
                    "line {}: width {w} out of range",
                    lineno + 1
                )));
            }
            let mut row = 0u64;
            for ch in line.chars() {
                row = (row << 1)
                    | match ch {
                        '0' => 0,
                        '1' => 1,
                        other => {
                            return Err(Error::BadDims(format!(
                                "line {}: bad character {other:?}",
                                lineno + 1
                            )))
                        }
                    };
            }
            rows.push(row);
        }
        let d_in = width.ok_or_else(|| Error::BadDims("empty matrix".into()))?;
        Self::new(d_in, rows)
    }

    pub fn to_text(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for LinearMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &row in &self.rows {
            for c in (0..self.d_in).rev() {
                f.write_str(if row >> c & 1 == 1 { "1" } else { "0" })?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Uniform full-rank map by rejection sampling.
pub fn random_full_rank(d_in: u32, d_out: u32, seed: u64) -> Result<LinearMap> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_full_rank_with(d_in, d_out, &mut rng)
}

pub fn random_full_rank_with<R: Rng>(d_in: u32, d_out: u32, rng: &mut R) -> Result<LinearMap> {
    check_dims(d_in, d_out)?;
    let mask = width_mask(d_in);
    loop {
        let rows: Vec<u64> = (0..d_out).map(|_| rng.random::<u64>() & mask).collect();
        if gf2_rank(&rows) == d_out {
            return Ok(LinearMap { d_in, d_out, rows });
        }
    }
}

/// `L^T i'`, the original index of folded coefficient `i'`.
pub fn folded_coefficient_index(map: &LinearMap, i_reduced: u64) -> u64 {
    map.transpose_apply(i_reduced)
}

/// Byte-indexed lookup tables for `L j`: the image of `j` is the XOR of
/// `tables[b][byte b of j]`.
struct ImageTables {
    tables: Vec<[u64; 256]>,
}

impl ImageTables {
    fn new(map: &LinearMap) -> Self {
        let columns: Vec<u64> = (0..map.d_in).map(|c| map.apply(1u64 << c)).collect();
        let tables = columns
            .chunks(8)
            .map(|cols| {
                let mut t = [0u64; 256];
                for (byte, slot) in t.iter_mut().enumerate() {
                    *slot = cols
                        .iter()
                        .enumerate()
                        .filter(|(b, _)| byte >> b & 1 == 1)
                        .fold(0, |acc, (_, &c)| acc ^ c);
                }
                t
            })
            .collect();
        ImageTables { tables }
    }

    #[inline]
    fn image(&self, j: u64) -> u64 {
        self.tables
            .iter()
            .enumerate()
            .fold(0, |acc, (b, t)| acc ^ t[(j >> (8 * b)) as usize & 0xff])
    }
}

/// Accumulates a stream of samples into the folded signal.
enum Folder {
    Int { out: Vec<i64>, max_abs: u64 },
    Float(Vec<f64>),
}

impl Folder {
    fn new(kind: ScalarKind, d_out: u32) -> Self {
        let len = 1usize << d_out;
        match kind {
            ScalarKind::Int64 => Folder::Int {
                out: vec![0; len],
                max_abs: 0,
            },
            ScalarKind::Float64 => Folder::Float(vec![0.0; len]),
        }
    }

    fn add_int(&mut self, tables: &ImageTables, base: u64, xs: &[i64], shift: u32) -> Result<()> {
        let Folder::Int { out, max_abs } = self else {
            unreachable!()
        };
        *max_abs = (*max_abs).max(max_abs_i64(xs));
        for (i, &x) in xs.iter().enumerate() {
            let slot = &mut out[tables.image(base + i as u64) as usize];
            *slot = slot.checked_add(x).ok_or(Error::Overflow {
                max_abs: *max_abs,
                n: shift,
            })?;
        }
        Ok(())
    }

    fn add_float(&mut self, tables: &ImageTables, base: u64, xs: &[f64]) {
        let Folder::Float(out) = self else {
            unreachable!()
        };
        for (i, &x) in xs.iter().enumerate() {
            out[tables.image(base + i as u64) as usize] += x;
        }
    }

    fn finish(self, sig_domain: crate::signal::Domain) -> Result<Signal> {
        match self {
            Folder::Int { out, .. } => Signal::from_i64(sig_domain, out),
            Folder::Float(out) => Signal::from_f64(sig_domain, out),
        }
    }
}

fn check_input(dim: u32, map: &LinearMap) -> Result<()> {
    if dim != map.d_in {
        return Err(Error::DimMismatch(format!(
            "signal has dimension 2^{dim}, map expects 2^{}",
            map.d_in
        )));
    }
    if map.d_out > 40 {
        return Err(Error::DimMismatch(format!(
            "folded dimension 2^{} is too large",
            map.d_out
        )));
    }
    Ok(())
}

/// `x'(j') = sum_{L j = j'} x(j)`. Integer sums are checked.
pub fn fold(sig: &Signal, map: &LinearMap) -> Result<Signal> {
    check_input(sig.log2_dim(), map)?;
    let tables = ImageTables::new(map);
    let mut folder = Folder::new(sig.kind(), map.d_out);
    match sig.samples() {
        Samples::Int(x) => folder.add_int(&tables, 0, x, map.d_in - map.d_out)?,
        Samples::Float(x) => folder.add_float(&tables, 0, x),
    }
    folder.finish(sig.domain())
}

/// [`fold`] over a dataset in one sequential scan of `chunk_elems` blocks.
pub fn fold_dataset(ds: &DatasetFile, map: &LinearMap, chunk_elems: u64) -> Result<Signal> {
    check_input(ds.log2_dim(), map)?;
    let tables = ImageTables::new(map);
    let mut folder = Folder::new(ds.kind(), map.d_out);
    let chunk = chunk_elems.clamp(1, ds.len());
    let mut start = 0;
    while start < ds.len() {
        let count = chunk.min(ds.len() - start) as usize;
        match ds.kind() {
            ScalarKind::Int64 => {
                let mut buf = vec![0i64; count];
                ds.read_into(start, &mut buf)?;
                folder.add_int(&tables, start, &buf, map.d_in - map.d_out)?;
            }
            ScalarKind::Float64 => {
                let mut buf = vec![0f64; count];
                ds.read_into(start, &mut buf)?;
                folder.add_float(&tables, start, &buf);
            }
        }
        start += count as u64;
    }
    folder.finish(ds.domain())
}

/// Expected covered fraction for `machines` independent uniform maps.
/// Index 0 is always covered; every nonzero index lies in a random
/// `d_out`-dimensional row space with probability
/// `(2^d_out - 1) / (2^d_in - 1)`.
pub fn coverage_model(d_in: u32, d_out: u32, machines: u32) -> Result<f64> {
    check_dims(d_in, d_out)?;
    if d_in == 0 {
        return Ok(1.0);
    }
    let total = (d_in as f64).exp2();
    let p = ((d_out as f64).exp2() - 1.0) / (total - 1.0);
    let covered = 1.0 - (1.0 - p).powi(machines as i32);
    Ok((1.0 + (total - 1.0) * covered) / total)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageReport {
    pub d_in: u32,
    pub d_out: u32,
    pub machines: u32,
    /// Covered fraction per trial.
    pub per_trial: Vec<f64>,
    pub mean: f64,
    pub model: f64,
    /// True when the fraction was estimated from sampled indices.
    pub sampled: bool,
}

/// Indices drawn per trial in sampling mode.
pub const SAMPLES_PER_TRIAL: u32 = 1 << 16;

/// Empirical coverage over `trials` trials. Trial `t` draws its maps in
/// sequence from a generator seeded with `seed + t`, so a larger fleet
/// always extends a smaller one under the same seed.
pub fn coverage_simulate(
    d_in: u32,
    d_out: u32,
    machines: u32,
    trials: u32,
    seed: u64,
) -> Result<CoverageReport> {
    check_dims(d_in, d_out)?;
    if machines == 0 || trials == 0 {
        return Err(Error::BadDims("machines and trials must be >= 1".into()));
    }
    let sampled = d_in > ENUMERATION_LIMIT;
    let per_trial: Vec<f64> = (0..trials)
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(t as u64));
            let maps: Vec<LinearMap> = (0..machines)
                .map(|_| random_full_rank_with(d_in, d_out, &mut rng))
                .collect::<Result<_>>()?;
            Ok(if sampled {
                sampled_fraction(&maps, &mut rng)
            } else {
                enumerated_fraction(d_in, &maps)
            })
        })
        .collect::<Result<_>>()?;
    let mean = per_trial.iter().sum::<f64>() / trials as f64;
    Ok(CoverageReport {
        d_in,
        d_out,
        machines,
        per_trial,
        mean,
        model: coverage_model(d_in, d_out, machines)?,
        sampled,
    })
}

fn enumerated_fraction(d_in: u32, maps: &[LinearMap]) -> f64 {
    let total = 1usize << d_in;
    let mut covered = vec![false; total];
    for map in maps {
        // Gray-code walk over the row space.
        let mut v = 0u64;
        covered[0] = true;
        for i in 1u64..(1u64 << map.d_out) {
            v ^= map.rows[i.trailing_zeros() as usize];
            covered[v as usize] = true;
        }
    }
    covered.iter().filter(|&&c| c).count() as f64 / total as f64
}

fn sampled_fraction<R: Rng>(maps: &[LinearMap], rng: &mut R) -> f64 {
    let bases: Vec<Vec<u64>> = maps.iter().map(|m| reduced_basis(&m.rows)).collect();
    let mask = width_mask(maps[0].d_in);
    let hits = (0..SAMPLES_PER_TRIAL)
        .filter(|_| {
            let i = rng.random::<u64>() & mask;
            bases.iter().any(|b| reduce(b, i) == 0)
        })
        .count();
    hits as f64 / SAMPLES_PER_TRIAL as f64
}
