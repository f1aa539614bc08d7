use std::fs;
use std::io::Write;
use std::path::Path;

use serde_json::json;
use terawht_core::dataset::{sidecar_path, OpenFlags};
use terawht_core::external::{default_io_block_bytes, pass_io_volume, plan_external, run_external};
use terawht_core::iobench::{parse_size, sweep};
use terawht_core::noisy::{extract_above_dataset, gen, snr, LogBase};
use terawht_core::parallel::{plan_for_workers, run_parallel};
use terawht_core::perf::{estimate, estimate_distributed, runtime_table, PerfParams};
use terawht_core::subspace::{coverage_simulate, fold_dataset, random_full_rank, LinearMap};
use terawht_core::transform::{fwht_inplace, transformed, wht_bruteforce_with_limit};
use terawht_core::{
    DatasetFile, Domain, Error, ExternalMode, ExternalOptions, NoiseKind, NoisySignalSpec, Result,
    ScalarKind,
};

use crate::args::*;
use crate::report::Outcome;

/// Elements per read when streaming a dataset.
const STREAM_CHUNK: u64 = 1 << 20;

pub fn run(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Gen(a) => cmd_gen(a, cli.seed),
        Command::Transform(TransformCommand::Mem(a)) => cmd_mem(a),
        Command::Transform(TransformCommand::Ext(a)) => cmd_ext(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Extract(a) => cmd_extract(a),
        Command::Snr(a) => cmd_snr(a),
        Command::Plan(a) => cmd_plan(a),
        Command::Iobench(a) => cmd_iobench(a, cli.seed),
        Command::Fold(a) => cmd_fold(a, cli.seed),
        Command::Coverage(a) => cmd_coverage(a, cli.seed),
    }
}

fn kind_of(k: KindArg) -> ScalarKind {
    match k {
        KindArg::Int64 => ScalarKind::Int64,
        KindArg::Float64 => ScalarKind::Float64,
    }
}

fn open_input(input: &InputArgs, flags: OpenFlags) -> Result<DatasetFile> {
    let path = &input.input;
    if !path.exists() {
        return Err(io_at(path)(std::io::ErrorKind::NotFound.into()));
    }
    if !sidecar_path(path).exists() {
        if !input.force {
            return Err(Error::BadMetadata {
                path: path.clone(),
                reason: "no sidecar; pass --force to adopt a raw file and infer n from its size"
                    .into(),
            });
        }
        DatasetFile::adopt_raw(path, kind_of(input.kind), Domain::Time)?;
    }
    DatasetFile::open_with(path, flags)
}

fn parse_support(s: &str) -> Result<Vec<(u64, f64)>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            let (i, a) = t.split_once(':').ok_or_else(|| {
                Error::BadArguments(format!("support entry {t:?} is not index:amplitude"))
            })?;
            let i = i
                .trim()
                .parse::<u64>()
                .map_err(|_| Error::BadArguments(format!("bad index in {t:?}")))?;
            let a = a
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::BadArguments(format!("bad amplitude in {t:?}")))?;
            Ok((i, a))
        })
        .collect()
}

fn noise_of(n: NoiseArg) -> NoiseKind {
    match n {
        NoiseArg::None => NoiseKind::None,
        NoiseArg::Uniform => NoiseKind::Uniform,
        NoiseArg::Gaussian => NoiseKind::Gaussian,
        NoiseArg::Rademacher => NoiseKind::Rademacher,
    }
}

fn io_at(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |source| Error::IoFailure {
        path: path.to_path_buf(),
        offset: 0,
        source,
    }
}

fn refuse_existing(path: &Path) -> Result<()> {
    if path.exists() || sidecar_path(path).exists() {
        return Err(Error::PathExists(path.to_path_buf()));
    }
    Ok(())
}

fn cmd_gen(a: &GenArgs, seed: u64) -> Result<Outcome> {
    let spec = NoisySignalSpec {
        n: a.n,
        support: parse_support(&a.support)?,
        noise: noise_of(a.noise),
        sigma: a.sigma,
        seed,
    };
    spec.validate()?;
    refuse_existing(&a.out)?;
    if let Some(p) = &a.clean_out {
        refuse_existing(p)?;
    }
    let (clean, noisy) = gen(&spec)?;
    DatasetFile::from_signal(&a.out, &noisy)?.sync()?;
    if let Some(p) = &a.clean_out {
        DatasetFile::from_signal(p, &clean)?.sync()?;
    }
    let report = snr(&clean, a.sigma)?;
    let mut o = Outcome::new("gen");
    o.set("path", a.out.display().to_string())
        .set("n", a.n)
        .set("kind", noisy.kind().as_str())
        .set("support_size", spec.support.len())
        .set("noise", spec.noise)
        .set("sigma", a.sigma)
        .set("seed", seed)
        .set("snr_db", report.snr_db)
        .set(
            "significance_threshold_db",
            report.significance_threshold_db,
        );
    Ok(o)
}

fn cmd_mem(a: &MemArgs) -> Result<Outcome> {
    if a.threads == 0 || !a.threads.is_power_of_two() {
        return Err(Error::InvalidWorkerCount(format!(
            "{} is not a power of two",
            a.threads
        )));
    }
    if let Some(out) = &a.out {
        refuse_existing(out)?;
    }
    let mut ds = open_input(&a.input, OpenFlags::default())?;
    let n = ds.log2_dim();
    let plan = if a.threads > 1 {
        Some(plan_for_workers(n, a.threads)?)
    } else {
        None
    };
    let sig = ds.read_signal()?;
    let (out_sig, syncs) = match &plan {
        Some(plan) => {
            let (s, stats) = run_parallel(sig, plan)?;
            (s, Some(stats.barrier_syncs))
        }
        None => {
            let mut s = sig;
            fwht_inplace(&mut s)?;
            (s, None)
        }
    };
    let path = match &a.out {
        Some(out) => {
            DatasetFile::from_signal(out, &out_sig)?.sync()?;
            out.clone()
        }
        None => {
            ds.write_signal(&out_sig)?;
            ds.sync()?;
            a.input.input.clone()
        }
    };
    let mut o = Outcome::new("transform-mem");
    o.set("path", path.display().to_string())
        .set("n", n)
        .set("kind", out_sig.kind().as_str())
        .set("domain", out_sig.domain())
        .set("threads", a.threads)
        .set("barrier_syncs", syncs);
    Ok(o)
}

fn cmd_ext(a: &ExtArgs) -> Result<Outcome> {
    let mode = match a.mode {
        ModeArg::Entrywise => ExternalMode::EntryWise,
        ModeArg::Blocked => ExternalMode::Blocked,
    };
    let io_block = a.io_block_bytes.as_deref().map(parse_size).transpose()?;
    let checkpoint = a.checkpoint_bytes.as_deref().map(parse_size).transpose()?;
    if a.threads == 0 || !a.threads.is_power_of_two() {
        return Err(Error::InvalidWorkerCount(format!(
            "{} is not a power of two",
            a.threads
        )));
    }
    let mut ds = open_input(
        &a.input,
        OpenFlags {
            direct_io: a.direct,
        },
    )?;
    let plan = plan_external(
        ds.log2_dim(),
        a.mem_log2,
        mode,
        io_block.unwrap_or_else(|| default_io_block_bytes(a.mem_log2)),
    )?;
    let opts = ExternalOptions {
        resume: a.resume,
        threads: a.threads,
        stop_after_passes: a.stop_after_passes,
        checkpoint_elems: checkpoint.map(|b| (b / 8).max(1)),
    };
    let report = run_external(&mut ds, &plan, opts)?;
    let mut o = Outcome::new("transform-ext");
    o.set("path", a.input.input.display().to_string())
        .set("n", plan.n)
        .set("mem_log2", plan.mem_log2)
        .set("mode", plan.mode)
        .set("io_block_elems", plan.io_block_elems)
        .set("q", report.q)
        .set("passes_run", report.passes.len())
        .set("planned_io_bytes", pass_io_volume(&plan))
        .set(
            "bytes_read",
            report.passes.iter().map(|p| p.io.bytes_read).sum::<u64>(),
        )
        .set(
            "bytes_written",
            report
                .passes
                .iter()
                .map(|p| p.io.bytes_written)
                .sum::<u64>(),
        )
        .set("resumed_at", report.resumed_at)
        .set("complete", report.complete)
        .set("domain", ds.domain())
        .set("direct_io", ds.direct_io_active());
    o.rows = Some(json!(report.passes));
    Ok(o)
}

fn cmd_oracle(a: &OracleArgs) -> Result<Outcome> {
    if let Some(out) = &a.out {
        refuse_existing(out)?;
    }
    let ds = open_input(&a.input, OpenFlags::default())?;
    if ds.log2_dim() > a.limit {
        return Err(Error::OracleTooLarge {
            n: ds.log2_dim(),
            limit: a.limit,
        });
    }
    let sig = ds.read_signal()?;
    let slow = wht_bruteforce_with_limit(&sig, a.limit)?;
    let fast = transformed(&sig)?;
    let matches = match (slow.as_f64(), fast.as_f64()) {
        (Some(s), Some(f)) => s
            .iter()
            .zip(f)
            .all(|(x, y)| (x - y).abs() <= 1e-9 * x.abs().max(y.abs()).max(1.0)),
        _ => slow == fast,
    };
    if let Some(out) = &a.out {
        DatasetFile::from_signal(out, &slow)?.sync()?;
    }
    let mut o = Outcome::new("oracle");
    o.set("n", sig.log2_dim())
        .set("kind", sig.kind().as_str())
        .set("matches_fast", matches)
        .set("out", a.out.as_ref().map(|p| p.display().to_string()));
    if !matches {
        return Err(Error::BadSpec(
            "brute-force and fast transforms disagree".into(),
        ));
    }
    Ok(o)
}

fn cmd_extract(a: &ExtractArgs) -> Result<Outcome> {
    if a.threshold.is_nan() || a.threshold < 0.0 {
        return Err(Error::BadArguments(format!(
            "threshold must be >= 0, got {}",
            a.threshold
        )));
    }
    let ds = open_input(&a.input, OpenFlags::default())?;
    let coeffs = extract_above_dataset(&ds, a.threshold, STREAM_CHUNK)?;
    let mut csv = String::from("index,coefficient\n");
    for c in &coeffs {
        csv.push_str(&format!("{},{}\n", c.index, c.value));
    }
    let mut o = Outcome::new("extract");
    match &a.out {
        Some(p) => {
            let mut f = fs::File::create(p).map_err(io_at(p))?;
            f.write_all(csv.as_bytes()).map_err(io_at(p))?;
            o.set("out", p.display().to_string());
        }
        None => o.csv = Some(csv),
    }
    o.set("n", ds.log2_dim())
        .set("domain", ds.domain())
        .set("threshold", a.threshold)
        .set("count", coeffs.len());
    o.rows = Some(json!(coeffs));
    Ok(o)
}

fn cmd_snr(a: &SnrArgs) -> Result<Outcome> {
    if !(a.sigma.is_finite() && a.sigma >= 0.0) {
        return Err(Error::BadArguments(format!(
            "sigma must be >= 0, got {}",
            a.sigma
        )));
    }
    let ds = open_input(&a.input, OpenFlags::default())?;
    let r = snr(&ds.read_signal()?, a.sigma)?;
    let threshold = match a.log_base {
        LogBaseArg::Natural => r.significance_threshold_db,
        LogBaseArg::Two => r.significance_threshold_db_log2,
    };
    let mut o = Outcome::new("snr");
    o.set("n", r.n)
        .set("sigma", r.sigma)
        .set("signal_energy", r.signal_energy)
        .set("noise_walsh_variance", r.noise_variance)
        .set("snr_linear", r.snr_linear)
        .set("snr_db", r.snr_db)
        .set("zero_noise", r.zero_noise)
        .set(
            "log_base",
            match a.log_base {
                LogBaseArg::Natural => LogBase::Natural,
                LogBaseArg::Two => LogBase::Two,
            },
        )
        .set("threshold_db", threshold)
        .set("threshold_db_natural", r.significance_threshold_db)
        .set("threshold_db_base2", r.significance_threshold_db_log2)
        .set("above_threshold", r.snr_db > threshold);
    Ok(o)
}

fn cmd_plan(a: &PlanArgs) -> Result<Outcome> {
    let d = PerfParams::default();
    let params = PerfParams {
        t_cpu_ref_seconds: a.tcpu_ref.unwrap_or(d.t_cpu_ref_seconds),
        t_cp_seconds: a.tcp.unwrap_or(d.t_cp_seconds),
        unit_log2_dim: a.tcp_n.unwrap_or(d.unit_log2_dim),
        io_overhead: a.io_overhead.unwrap_or(d.io_overhead),
        storage_speed_factor: a.storage_factor.unwrap_or(d.storage_speed_factor),
        ..d
    };
    let e = estimate(&params, a.n, a.b)?;
    let rows = runtime_table(&params, a.b, (32..=40).filter(|&n| n >= a.b))?;
    let mut table = format!(
        "{:>4} {:>4} {:>12} {:>12} {:>12}\n",
        "n", "q", "cpu h", "io h", "total h"
    );
    for r in &rows {
        table.push_str(&format!(
            "{:>4} {:>4} {:>12.2} {:>12.2} {:>12.2}\n",
            r.n,
            r.q,
            r.t_cpu_seconds / 3600.0,
            r.t_io_seconds / 3600.0,
            r.total_hours()
        ));
    }
    let mut o = Outcome::new("plan");
    o.set("n", e.n)
        .set("mem_log2", e.mem_log2)
        .set("q", e.q)
        .set("t_cpu_seconds", e.t_cpu_seconds)
        .set("t_cp_seconds", e.t_cp_seconds)
        .set("t_io_seconds", e.t_io_seconds)
        .set("total_seconds", e.total_seconds)
        .set("total_hours", e.total_hours())
        .set("total_days", e.total_days())
        .set("params", params);
    if let Some(source) = a.source_n {
        let dist = estimate_distributed(&params, source, a.n, a.b, a.machines)?;
        o.set("distributed", dist);
    }
    o.table = Some(table);
    o.rows = Some(json!(rows));
    Ok(o)
}

fn cmd_iobench(a: &IoBenchArgs, seed: u64) -> Result<Outcome> {
    if !(a.file_gb.is_finite() && a.file_gb > 0.0) {
        return Err(Error::BadArguments(format!(
            "file size must be positive, got {}",
            a.file_gb
        )));
    }
    let file_bytes = ((a.file_gb * (1u64 << 30) as f64) as u64 / 8 * 8).max(8);
    let blocks = a
        .blocks
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(parse_size)
        .collect::<Result<Vec<u64>>>()?;
    if blocks.is_empty() {
        return Err(Error::BadArguments("empty block size list".into()));
    }
    if !a.dir.is_dir() {
        return Err(Error::BadArguments(format!(
            "{} is not a directory",
            a.dir.display()
        )));
    }
    let report = sweep(&a.dir, file_bytes, &blocks, a.direct, seed)?;
    let csv = report.to_csv();
    let mut o = Outcome::new("iobench");
    match &a.out {
        Some(p) => {
            fs::write(p, &csv).map_err(io_at(p))?;
            o.set("out", p.display().to_string());
        }
        None => o.csv = Some(csv),
    }
    o.set("file_bytes", report.file_bytes)
        .set("direct_io", report.direct_io)
        .set("successful_rows", report.successful().count())
        .set("consistent", report.check_consistency())
        .set("annotation", &report.annotation);
    o.table = Some(report.to_table());
    o.rows = Some(json!(report.rows));
    Ok(o)
}

fn cmd_fold(a: &FoldArgs, seed: u64) -> Result<Outcome> {
    refuse_existing(&a.out)?;
    let ds = open_input(&a.input, OpenFlags::default())?;
    let map = match a.random_dout {
        Some(d_out) => {
            let map = random_full_rank(ds.log2_dim(), d_out, seed)?;
            let mut f = fs::OpenOptions::new()
                .write(true)
                .create_new(true)
                .open(&a.matrix)
                .map_err(|e| match e.kind() {
                    std::io::ErrorKind::AlreadyExists => Error::PathExists(a.matrix.clone()),
                    _ => io_at(&a.matrix)(e),
                })?;
            f.write_all(map.to_text().as_bytes())
                .map_err(io_at(&a.matrix))?;
            map
        }
        None => {
            let text = fs::read_to_string(&a.matrix).map_err(io_at(&a.matrix))?;
            LinearMap::parse(&text)?
        }
    };
    let folded = fold_dataset(&ds, &map, STREAM_CHUNK)?;
    DatasetFile::from_signal(&a.out, &folded)?.sync()?;
    let mut o = Outcome::new("fold");
    o.set("path", a.out.display().to_string())
        .set("d_in", map.d_in())
        .set("d_out", map.d_out())
        .set("kind", folded.kind().as_str())
        .set("matrix", a.matrix.display().to_string());
    Ok(o)
}

fn cmd_coverage(a: &CoverageArgs, seed: u64) -> Result<Outcome> {
    let r = coverage_simulate(a.din, a.dout, a.machines, a.trials, seed)?;
    let mut csv = String::from("trial,coverage\n");
    for (t, c) in r.per_trial.iter().enumerate() {
        csv.push_str(&format!("{t},{c}\n"));
    }
    let mut o = Outcome::new("coverage");
    match &a.out {
        Some(p) => {
            fs::write(p, &csv).map_err(io_at(p))?;
            o.set("out", p.display().to_string());
        }
        None => o.csv = Some(csv),
    }
    o.set("d_in", r.d_in)
        .set("d_out", r.d_out)
        .set("machines", r.machines)
        .set("trials", r.per_trial.len())
        .set("seed", seed)
        .set("mean_coverage", r.mean)
        .set("model_coverage", r.model)
        .set("sampled", r.sampled);
    o.rows = Some(json!(r.per_trial));
    Ok(o)
}
