//! Acceptance suite: one pass/fail line per criterion, nonzero exit on any
//! failure.

use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::thread;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use terawht_core::dataset::{read_metadata, sidecar_path};
use terawht_core::external::{plan_external, run_external, ExternalMode, ExternalOptions};
use terawht_core::noisy::{noise_walsh_variance_check, snr, NoiseKind};
use terawht_core::parallel::{plan_parallel, run_parallel, Subtask, Workload};
use terawht_core::perf::{estimate, estimate_distributed, PerfParams, OBSERVED_IO_OVERHEAD};
use terawht_core::subspace::{coverage_simulate, fold, folded_coefficient_index, random_full_rank};
use terawht_core::transform::{energy_exact, transformed, wht_bruteforce};
use terawht_core::{fwht_inplace, DatasetFile, Domain, Signal};

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_i64(n: u32, bound: i64, r: &mut ChaCha8Rng) -> Signal {
    Signal::time_i64(
        (0..1usize << n)
            .map(|_| r.random_range(-bound..=bound))
            .collect(),
    )
    .unwrap()
}

fn random_f64(n: u32, r: &mut ChaCha8Rng) -> Signal {
    Signal::time_f64(
        (0..1usize << n)
            .map(|_| r.random_range(-1.0..1.0))
            .collect(),
    )
    .unwrap()
}

fn c1_oracle() -> Result<String, String> {
    let start = Instant::now();
    let mut r = rng(1);
    for n in 0..=10 {
        for trial in 0..200 {
            let x = random_i64(n, 1 << 40, &mut r);
            let mut fast = x.clone();
            fwht_inplace(&mut fast).map_err(|e| e.to_string())?;
            let slow = wht_bruteforce(&x).map_err(|e| e.to_string())?;
            ensure(fast == slow, || format!("n={n} trial {trial} differs"))?;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1} s"))?;
    Ok(format!("2200 signals, {secs:.2} s"))
}

fn c2_involution_parseval() -> Result<String, String> {
    let mut r = rng(2);
    for n in 0..=20 {
        let x = random_i64(n, 1 << 20, &mut r);
        let y = transformed(&x).unwrap();
        let z = transformed(&y).unwrap();
        let scale = 1i64 << n;
        let ok = z
            .as_i64()
            .unwrap()
            .iter()
            .zip(x.as_i64().unwrap())
            .all(|(a, b)| *a == b * scale);
        ensure(ok, || format!("involution fails at n={n}"))?;
        let ex = energy_exact(x.as_i64().unwrap()).unwrap();
        let ey = energy_exact(y.as_i64().unwrap()).unwrap();
        ensure(ey == ex << n, || format!("int Parseval fails at n={n}"))?;

        let xf = random_f64(n, &mut r);
        let yf = transformed(&xf).unwrap();
        let exf: f64 = xf.as_f64().unwrap().iter().map(|v| v * v).sum();
        let eyf: f64 = yf.as_f64().unwrap().iter().map(|v| v * v).sum();
        let rel = (eyf / (exf * scale as f64) - 1.0).abs();
        ensure(rel <= 1e-9, || {
            format!("float Parseval rel err {rel:e} at n={n}")
        })?;
    }
    Ok("n = 0..20".into())
}

fn c3_parallel() -> Result<String, String> {
    let mut r = rng(3);
    let mut runs = 0;
    for p in 1..=3u32 {
        for i in 0..50 {
            let n = [p + 1, 8, 12, 16, 20][i % 5].max(p + 1);
            let x = if i % 2 == 0 {
                random_i64(n, 1 << 30, &mut r)
            } else {
                random_f64(n, &mut r)
            };
            let plan = plan_parallel(n, p).map_err(|e| e.to_string())?;
            let (y, stats) = run_parallel(x.clone(), &plan).map_err(|e| e.to_string())?;
            let want = transformed(&x).unwrap();
            let same = match (y.as_f64(), want.as_f64()) {
                (Some(a), Some(b)) => a.iter().zip(b).all(|(u, v)| u.to_bits() == v.to_bits()),
                _ => y == want,
            };
            ensure(same, || format!("p={p} n={n} differs from serial"))?;
            ensure(stats.barrier_syncs == p as usize + 1, || {
                format!("p={p}: {} syncs", stats.barrier_syncs)
            })?;
            runs += 1;
        }
    }
    for n in 3..=20u32 {
        let plan = plan_parallel(n, 2).unwrap();
        let starts = |phase: usize| -> Vec<(usize, usize)> {
            plan.phases[phase]
                .subtasks
                .iter()
                .map(|s| match s {
                    Subtask::Workload(Workload { start, stride, .. }) => (*start, *stride),
                    Subtask::Chunk { .. } => (usize::MAX, 0),
                })
                .collect()
        };
        let e = 1usize << (n - 3);
        let half = 1usize << (n - 1);
        let want_k2 = vec![(0, 2 * e), (e, 2 * e), (half, 2 * e), (half + e, 2 * e)];
        let want_k1 = (0..4).map(|i| (i * e, half)).collect::<Vec<_>>();
        ensure(starts(1) == want_k2, || {
            format!("n={n} stage n-2 tuples {:?}", starts(1))
        })?;
        ensure(starts(2) == want_k1, || {
            format!("n={n} final tuples {:?}", starts(2))
        })?;
    }
    Ok(format!(
        "{runs} runs byte-identical; m=4 tuples literal for n=3..20"
    ))
}

fn c4_external() -> Result<String, String> {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(4);
    let mut cases = 0;
    let mut id = 0;
    let mut check = |n: u32,
                     b: u32,
                     mode: ExternalMode,
                     s_log2: u32,
                     r: &mut ChaCha8Rng|
     -> Result<(), String> {
        id += 1;
        let x = random_i64(n, 1 << 30, r);
        let want = transformed(&x).unwrap();
        let mut ds = DatasetFile::from_signal(dir.path().join(format!("x{id}.bin")), &x).unwrap();
        let plan = plan_external(n, b, mode, 8 << s_log2).map_err(|e| e.to_string())?;
        let rep =
            run_external(&mut ds, &plan, ExternalOptions::default()).map_err(|e| e.to_string())?;
        let expect_q = if n > b { (n - b + 1) as usize } else { 1 };
        ensure(rep.passes.len() == expect_q, || {
            format!("n={n} B={b}: {} passes, want {expect_q}", rep.passes.len())
        })?;
        let bytes = 8u64 << n;
        ensure(
            rep.passes
                .iter()
                .all(|p| p.io.bytes_read == bytes && p.io.bytes_written == bytes),
            || format!("n={n} B={b}: a pass did not move the whole dataset once"),
        )?;
        ensure(ds.read_signal().unwrap() == want, || {
            format!("n={n} B={b} {mode:?} S=2^{s_log2} differs from in-memory")
        })?;
        fs_remove(ds.path());
        cases += 1;
        Ok(())
    };
    for b in [8u32, 12, 16] {
        for s_log2 in 4..=9u32 {
            if s_log2 >= b {
                // S must not exceed half the memory budget.
                let rejected = plan_external(18, b, ExternalMode::Blocked, 8 << s_log2);
                ensure(rejected.is_err(), || format!("B={b} S=2^{s_log2} accepted"))?;
                continue;
            }
            for n in [b - 2, b + 2, 18] {
                check(n, b, ExternalMode::Blocked, s_log2, &mut r)?;
            }
        }
        check(22, b, ExternalMode::Blocked, 4, &mut r)?;
        check(22, b, ExternalMode::Blocked, 9.min(b - 1), &mut r)?;
        for n in [b - 1, b + 3, 18] {
            check(n, b, ExternalMode::EntryWise, 0, &mut r)?;
        }
    }
    check(22, 16, ExternalMode::EntryWise, 0, &mut r)?;
    let killed = restart_after_kill(dir.path())?;
    Ok(format!(
        "{cases} configurations; restart after {killed} kills identical"
    ))
}

fn fs_remove(p: &Path) {
    let _ = std::fs::remove_file(p);
    let _ = std::fs::remove_file(sidecar_path(p));
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_terawht"))
}

fn run_ok(cmd: &mut Command) -> Result<Output, String> {
    let out = cmd.output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "{cmd:?} exited {:?}: {}",
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(out)
}

/// SIGKILLs a checkpointed external run at increasing delays, resuming
/// after each kill, and compares the final file with the in-memory result.
fn restart_after_kill(dir: &Path) -> Result<usize, String> {
    let n = 20;
    let x = random_i64(n, 1 << 20, &mut rng(44));
    let want = transformed(&x).unwrap();
    let path: PathBuf = dir.join("killed.bin");
    DatasetFile::from_signal(&path, &x).unwrap();
    let ext = |resume: bool| {
        let mut c = bin();
        c.args(["transform", "ext", "--mem-log2", "8", "--mode", "blocked"])
            .args([
                "--io-block-bytes",
                "128",
                "--checkpoint-bytes",
                "64K",
                "--quiet",
                "--in",
            ])
            .arg(&path);
        if resume {
            c.arg("--resume");
        }
        c
    };
    let mut kills = 0;
    let mut delay = Duration::from_millis(150);
    for attempt in 0..6 {
        let resume = read_metadata(&path)
            .map_err(|e| e.to_string())?
            .pass_progress
            .is_some();
        let mut child = ext(resume).spawn().map_err(|e| e.to_string())?;
        thread::sleep(delay);
        match child.try_wait().map_err(|e| e.to_string())? {
            Some(status) => {
                ensure(status.success(), || {
                    format!("attempt {attempt} failed: {status}")
                })?;
                break;
            }
            None => {
                child.kill().map_err(|e| e.to_string())?;
                child.wait().map_err(|e| e.to_string())?;
                kills += 1;
            }
        }
        delay += Duration::from_millis(150);
    }
    ensure(kills > 0, || {
        "run finished before it could be killed".into()
    })?;
    if read_metadata(&path)
        .map_err(|e| e.to_string())?
        .pass_progress
        .is_some()
    {
        run_ok(&mut ext(true))?;
    }
    let ds = DatasetFile::open_validated(&path).map_err(|e| e.to_string())?;
    ensure(ds.read_signal().unwrap() == want, || {
        "output after kill/resume differs".into()
    })?;
    Ok(kills)
}

fn c5_perf_model() -> Result<String, String> {
    let p = PerfParams::default();
    let t = |n, b, p: &PerfParams| estimate(p, n, b).unwrap().total_seconds;
    let a = t(32, 30, &p);
    let b = t(32, 29, &p);
    ensure((a - 1678.0).abs() <= 1.0, || format!("(32,30) = {a}"))?;
    ensure((b - 2184.0).abs() <= 1.0, || format!("(32,29) = {b}"))?;
    let over = PerfParams {
        io_overhead: OBSERVED_IO_OVERHEAD,
        ..p
    };
    let c = t(32, 29, &over);
    ensure((c - 2468.0).abs() <= 10.0, || {
        format!("(32,29) with overhead = {c}")
    })?;
    let days = t(40, 30, &p) / 86_400.0;
    ensure((14.0..=21.0).contains(&days), || {
        format!("(40,30) = {days} days")
    })?;
    Ok(format!("{a} s, {b} s, {c:.1} s, {days:.2} days"))
}

fn c6_distributed() -> Result<String, String> {
    let d =
        estimate_distributed(&PerfParams::default(), 45, 40, 30, 64).map_err(|e| e.to_string())?;
    let cov = 1.0 - (31.0f64 / 32.0).powi(64);
    ensure((d.expected_coverage - cov).abs() <= 0.005, || {
        format!("coverage {}", d.expected_coverage)
    })?;
    let rel = d.per_machine_seconds / 2_718_720.0 - 1.0;
    ensure(rel.abs() <= 0.05, || {
        format!("per machine {} s", d.per_machine_seconds)
    })?;
    Ok(format!(
        "coverage {:.4}, {} s per machine ({:+.2}%)",
        d.expected_coverage,
        d.per_machine_seconds,
        rel * 100.0
    ))
}

fn c7_coverage() -> Result<String, String> {
    let fleet = coverage_simulate(16, 11, 64, 20, 7).map_err(|e| e.to_string())?;
    ensure((fleet.mean - 0.869).abs() <= 0.02, || {
        format!("P=64 mean {}", fleet.mean)
    })?;
    let single = coverage_simulate(16, 11, 1, 20, 7).map_err(|e| e.to_string())?;
    let want = 2047.0 / 65535.0;
    ensure((single.mean / want - 1.0).abs() <= 0.1, || {
        format!("P=1 mean {}", single.mean)
    })?;
    Ok(format!(
        "P=64 mean {:.4}, P=1 mean {:.5}",
        fleet.mean, single.mean
    ))
}

fn c8_fold() -> Result<String, String> {
    let mut r = rng(8);
    for trial in 0..100u64 {
        let d_in = 1 + (trial % 12) as u32;
        let d_out = r.random_range(0..=d_in);
        let map = random_full_rank(d_in, d_out, trial).unwrap();
        let x = random_i64(d_in, 1 << 30, &mut r);
        let y = transformed(&x).unwrap();
        let yf = transformed(&fold(&x, &map).unwrap()).unwrap();
        for i in 0..1u64 << d_out {
            let a = yf.as_i64().unwrap()[i as usize];
            let b = y.as_i64().unwrap()[folded_coefficient_index(&map, i) as usize];
            ensure(a == b, || format!("trial {trial} index {i}: {a} != {b}"))?;
        }
    }
    Ok("100 maps, d_in 1..12".into())
}

fn c9_noise_variance() -> Result<String, String> {
    let mut parts = Vec::new();
    for kind in [NoiseKind::Uniform, NoiseKind::Rademacher] {
        let v = noise_walsh_variance_check(16, 1.0, kind, 50, 9).map_err(|e| e.to_string())?;
        let rel = v / 65536.0 - 1.0;
        ensure(rel.abs() <= 0.1, || format!("{kind:?} variance {v}"))?;
        parts.push(format!("{kind:?} {rel:+.4}"));
    }
    Ok(parts.join(", "))
}

fn c10_snr() -> Result<String, String> {
    let mut spec = vec![0i64; 16];
    spec[5] = 16;
    let walsh = Signal::from_i64(Domain::Walsh, spec).unwrap();
    let r = snr(&walsh, 1.0).map_err(|e| e.to_string())?;
    ensure(r.snr_db == 0.0, || {
        format!("single coefficient SNR {} dB", r.snr_db)
    })?;
    let mut g = rng(10);
    let x = random_f64(8, &mut g);
    let base = snr(&x, 0.7).unwrap().snr_linear;
    for c in [0.5, 3.0, -2.0, 1e3] {
        let scaled = Signal::time_f64(x.as_f64().unwrap().iter().map(|v| v * c).collect()).unwrap();
        let s = snr(&scaled, 0.7).unwrap().snr_linear;
        let rel = (s / (c * c * base) - 1.0).abs();
        ensure(rel <= 1e-12, || format!("c={c}: rel err {rel:e}"))?;
    }
    Ok("0 dB exactly; c^2 scaling within 1e-12".into())
}

fn parse_csv(text: &str, header: &str) -> Result<Vec<Vec<String>>, String> {
    let mut lines = text.lines();
    ensure(lines.next() == Some(header), || {
        format!("bad header in {text:?}")
    })?;
    Ok(lines
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect())
}

fn c11_end_to_end() -> Result<String, String> {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let n = 16u32;
    let sigma = 1.0;
    let support: Vec<(u64, i64)> = [
        (7u64, 1i64),
        (300, -2),
        (4096, 3),
        (5555, -4),
        (12345, 5),
        (30000, -6),
        (40000, 7),
        (65535, -8),
    ]
    .iter()
    .map(|&(i, a)| (i, a << 16))
    .collect();
    let min_amp = support.iter().map(|(_, a)| a.unsigned_abs()).min().unwrap() as f64;
    let sigma_w = (n as f64).exp2().sqrt() * sigma;
    ensure(min_amp >= 6.0 * sigma_w, || {
        "amplitudes too small for the noise".into()
    })?;
    let spec = support
        .iter()
        .map(|(i, a)| format!("{i}:{a}"))
        .collect::<Vec<_>>()
        .join(",");
    let noisy = d.join("noisy.bin");
    let clean = d.join("clean.bin");
    run_ok(
        bin()
            .args([
                "gen", "--n", "16", "--noise", "gaussian", "--sigma", "1", "--seed", "11",
                "--quiet",
            ])
            .args(["--support", &spec, "--out"])
            .arg(&noisy)
            .arg("--clean-out")
            .arg(&clean),
    )?;
    let tau = (min_amp / 2.0).to_string();
    let mut recovered = Vec::new();
    for f in [&noisy, &clean] {
        run_ok(
            bin()
                .args([
                    "transform",
                    "ext",
                    "--mem-log2",
                    "10",
                    "--io-block-bytes",
                    "1K",
                    "--quiet",
                    "--in",
                ])
                .arg(f),
        )?;
        let out = run_ok(
            bin()
                .args(["extract", "--threshold", &tau, "--quiet", "--in"])
                .arg(f),
        )?;
        let rows = parse_csv(&String::from_utf8_lossy(&out.stdout), "index,coefficient")?;
        let mut got: Vec<(u64, f64)> = rows
            .iter()
            .map(|r| (r[0].parse().unwrap(), r[1].parse().unwrap()))
            .collect();
        got.sort_by_key(|(i, _)| *i);
        recovered.push(got);
    }
    let want_idx: Vec<u64> = support.iter().map(|(i, _)| *i).collect();
    for got in &recovered {
        let idx: Vec<u64> = got.iter().map(|(i, _)| *i).collect();
        ensure(idx == want_idx, || format!("support {idx:?}"))?;
    }
    let worst = recovered[0]
        .iter()
        .zip(&support)
        .map(|((_, v), (_, a))| (v - *a as f64).abs())
        .fold(0.0, f64::max);
    ensure(worst <= 6.0 * sigma_w, || {
        format!("noisy amplitude off by {worst}")
    })?;
    let exact = recovered[1]
        .iter()
        .zip(&support)
        .all(|((_, v), (_, a))| *v == *a as f64);
    ensure(exact, || format!("clean amplitudes {:?}", recovered[1]))?;

    let bench_dir = d.join("bench");
    std::fs::create_dir(&bench_dir).unwrap();
    let out = run_ok(
        bin()
            .args([
                "iobench",
                "--file-gb",
                "0.25",
                "--blocks",
                "2M,8M,32M,128M",
                "--quiet",
                "--dir",
            ])
            .arg(&bench_dir),
    )?;
    let rows = parse_csv(
        &String::from_utf8_lossy(&out.stdout),
        "block_bytes,seconds,mbps",
    )?;
    ensure(rows.len() == 4, || format!("{} iobench rows", rows.len()))?;
    for r in &rows {
        let secs: f64 = r[1].parse().map_err(|_| format!("bad seconds {r:?}"))?;
        let mbps: f64 = r[2].parse().map_err(|_| format!("bad mbps {r:?}"))?;
        let implied = 256.0 / secs;
        ensure(secs > 0.0 && (mbps / implied - 1.0).abs() < 0.01, || {
            format!("inconsistent row {r:?}")
        })?;
    }
    ensure(std::fs::read_dir(&bench_dir).unwrap().count() == 0, || {
        "scratch files left".into()
    })?;
    Ok(format!(
        "K=8 recovered; noisy max error {worst:.1} (6 sigma' = {:.0}); iobench 4 rows",
        6.0 * sigma_w
    ))
}

fn main() {
    let criteria: [(&str, Check); 11] = [
        ("oracle equivalence", c1_oracle),
        ("involution and Parseval", c2_involution_parseval),
        ("parallel equivalence", c3_parallel),
        ("external equivalence and restart", c4_external),
        ("runtime model regression", c5_perf_model),
        ("distributed model", c6_distributed),
        ("coverage simulation", c7_coverage),
        ("fold property", c8_fold),
        ("noise variance law", c9_noise_variance),
        ("SNR", c10_snr),
        ("end-to-end CLI", c11_end_to_end),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let label = format!("{}", i + 1);
        if !filter.is_empty() && !filter.contains(&label) {
            continue;
        }
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {label:>2} PASS  {name}: {detail} [{secs:.1}s]"),
            Err(why) => {
                failed += 1;
                println!("criterion {label:>2} FAIL  {name}: {why} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
