//! Runtime model for the external transform: `T = T_cpu + T_io`.
//!
//! In-memory cost scales linearly with the dataset, `T_cpu(n) =
//! 2^(n - n_ref) * t_cpu_ref`. Each of the `q = n - B + 1` passes costs one
//! whole-dataset copy on the same disk, `T_io = q * T_cp(n)`, where `T_cp`
//! is scaled linearly from a reference measurement.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::iobench::IoBenchReport;

pub const SECONDS_PER_DAY: f64 = 86_400.0;
pub const SECONDS_PER_HOUR: f64 = 3_600.0;

/// Calibration constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerfParams {
    /// In-memory transform time at `n_ref`.
    pub t_cpu_ref_seconds: f64,
    pub n_ref: f64,
    /// Time to copy a dataset of `2^unit_log2_dim` elements on the same disk.
    pub t_cp_seconds: f64,
    pub unit_log2_dim: f64,
    /// Multiplier on every pass (observed per-pass time over copy time).
    pub io_overhead: f64,
    /// Multiplier on the copy time for a different storage device.
    pub storage_speed_factor: f64,
}

impl Default for PerfParams {
    fn default() -> Self {
        PerfParams {
            t_cpu_ref_seconds: 2.5,
            n_ref: 26.0,
            t_cp_seconds: 506.0,
            unit_log2_dim: 32.0,
            io_overhead: 1.0,
            storage_speed_factor: 1.0,
        }
    }
}

/// Per-pass overhead observed on the reference rotation disk (577 s real
/// against 506 s copy time).
pub const OBSERVED_IO_OVERHEAD: f64 = 577.0 / 506.0;

impl PerfParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("t_cpu_ref_seconds", self.t_cpu_ref_seconds),
            ("t_cp_seconds", self.t_cp_seconds),
            ("io_overhead", self.io_overhead),
            ("storage_speed_factor", self.storage_speed_factor),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::BadArguments(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.n_ref.is_finite() && self.unit_log2_dim.is_finite()) {
            return Err(Error::BadArguments(
                "reference dimensions must be finite".into(),
            ));
        }
        Ok(())
    }

    pub fn t_cpu(&self, n: u32) -> f64 {
        (n as f64 - self.n_ref).exp2() * self.t_cpu_ref_seconds
    }

    /// Cost of one pass over a dataset of `2^n` elements.
    pub fn t_cp(&self, n: u32) -> f64 {
        (n as f64 - self.unit_log2_dim).exp2()
            * self.t_cp_seconds
            * self.io_overhead
            * self.storage_speed_factor
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PerfEstimate {
    pub n: u32,
    pub mem_log2: u32,
    pub q: u32,
    pub t_cpu_seconds: f64,
    pub t_cp_seconds: f64,
    pub t_io_seconds: f64,
    pub total_seconds: f64,
}

impl PerfEstimate {
    pub fn total_hours(&self) -> f64 {
        self.total_seconds / SECONDS_PER_HOUR
    }

    pub fn total_days(&self) -> f64 {
        self.total_seconds / SECONDS_PER_DAY
    }
}

pub fn estimate(params: &PerfParams, n: u32, mem_log2: u32) -> Result<PerfEstimate> {
    params.validate()?;
    if mem_log2 == 0 || n < mem_log2 {
        return Err(Error::BadArguments(format!(
            "need n >= B >= 1, got n = {n}, B = {mem_log2}"
        )));
    }
    let q = n - mem_log2 + 1;
    let t_cpu = params.t_cpu(n);
    let t_cp = params.t_cp(n);
    let t_io = q as f64 * t_cp;
    Ok(PerfEstimate {
        n,
        mem_log2,
        q,
        t_cpu_seconds: t_cpu,
        t_cp_seconds: t_cp,
        t_io_seconds: t_io,
        total_seconds: t_cpu + t_io,
    })
}

/// Rows for `n` in `ns` at a fixed memory budget.
pub fn runtime_table(
    params: &PerfParams,
    mem_log2: u32,
    ns: impl IntoIterator<Item = u32>,
) -> Result<Vec<PerfEstimate>> {
    ns.into_iter()
        .map(|n| estimate(params, n, mem_log2))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DistributedEstimate {
    pub n_source: u32,
    pub n_reduced: u32,
    pub machines: u32,
    /// In-memory cost of streaming and folding the full `2^n_source` source.
    pub fold_cpu_seconds: f64,
    /// External I/O at the reduced dimension.
    pub io_seconds: f64,
    pub per_machine_seconds: f64,
    /// Expected fraction of Walsh coefficients covered by the fleet.
    pub expected_coverage: f64,
}

/// Fleet estimate: every machine folds the source down to `2^n_reduced`
/// and runs the external transform there.
pub fn estimate_distributed(
    params: &PerfParams,
    n_source: u32,
    n_reduced: u32,
    mem_log2: u32,
    machines: u32,
) -> Result<DistributedEstimate> {
    if n_source < n_reduced || machines == 0 {
        return Err(Error::BadArguments(format!(
            "need n_source >= n_reduced and machines >= 1, got {n_source}, {n_reduced}, {machines}"
        )));
    }
    let reduced = estimate(params, n_reduced, mem_log2)?;
    let fold_cpu = params.t_cpu(n_source);
    let fraction = (-((n_source - n_reduced) as f64)).exp2();
    Ok(DistributedEstimate {
        n_source,
        n_reduced,
        machines,
        fold_cpu_seconds: fold_cpu,
        io_seconds: reduced.t_io_seconds,
        per_machine_seconds: fold_cpu + reduced.t_io_seconds,
        expected_coverage: 1.0 - (1.0 - fraction).powi(machines as i32),
    })
}

/// Relative spread under which block sizes count as converged.
pub const CONVERGENCE_TOLERANCE: f64 = 0.05;

/// Builds model parameters from a copy benchmark and one CPU timing.
///
/// The copy time comes from the largest block size whose time is within
/// [`CONVERGENCE_TOLERANCE`] of the fastest successful row. The CPU timing
/// `(n, seconds)` is rescaled to the default reference dimension.
pub fn calibrate(report: &IoBenchReport, measured_cpu: (u32, f64)) -> Result<PerfParams> {
    let rows: Vec<_> = report.successful().collect();
    let best = rows.iter().map(|m| m.seconds).fold(f64::INFINITY, f64::min);
    let chosen = rows
        .iter()
        .filter(|m| m.seconds <= best * (1.0 + CONVERGENCE_TOLERANCE))
        .max_by_key(|m| m.block_bytes)
        .ok_or(Error::EmptyReport)?;
    let (cpu_n, cpu_seconds) = measured_cpu;
    let defaults = PerfParams::default();
    let params = PerfParams {
        t_cpu_ref_seconds: cpu_seconds * (defaults.n_ref - cpu_n as f64).exp2(),
        t_cp_seconds: chosen.seconds,
        unit_log2_dim: (report.file_bytes as f64 / 8.0).log2(),
        ..defaults
    };
    params.validate()?;
    Ok(params)
}
