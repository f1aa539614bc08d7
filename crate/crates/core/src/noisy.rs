//! Noisy sparse signals: generation, SNR, the significance threshold and
//! threshold extraction of large Walsh coefficients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::dataset::DatasetFile;
use crate::error::{Error, Result};
use crate::signal::{Domain, Element, Samples, Scalar, ScalarKind, Signal};
use crate::transform::{energy_exact, fwht_slice, inverse_wht_inplace, transformed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    None,
    /// Uniform on `[-sigma*sqrt(3), sigma*sqrt(3)]`.
    Uniform,
    Gaussian,
    /// `+sigma` or `-sigma` with equal probability.
    Rademacher,
}

impl std::str::FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(NoiseKind::None),
            "uniform" => Ok(NoiseKind::Uniform),
            "gaussian" | "normal" => Ok(NoiseKind::Gaussian),
            "rademacher" => Ok(NoiseKind::Rademacher),
            other => Err(Error::BadArguments(format!("unknown noise kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisySignalSpec {
    pub n: u32,
    /// Planted Walsh coefficients `(index, amplitude)`.
    pub support: Vec<(u64, f64)>,
    pub noise: NoiseKind,
    /// Per-sample standard deviation.
    pub sigma: f64,
    pub seed: u64,
}

impl NoisySignalSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n > 40 {
            return Err(Error::BadSpec(format!(
                "n = {} is too large for an in-memory signal",
                self.n
            )));
        }
        let len = 1u64 << self.n;
        let mut seen = std::collections::HashSet::new();
        for &(idx, amp) in &self.support {
            if idx >= len {
                return Err(Error::BadSpec(format!("index {idx} >= 2^{}", self.n)));
            }
            if !seen.insert(idx) {
                return Err(Error::BadSpec(format!("duplicate index {idx}")));
            }
            if !amp.is_finite() {
                return Err(Error::BadSpec(format!(
                    "amplitude {amp} at {idx} is not finite"
                )));
            }
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::BadSpec(format!(
                "sigma must be >= 0, got {}",
                self.sigma
            )));
        }
        Ok(())
    }
}

/// Draws `len` i.i.d. zero-mean samples of variance `sigma^2`.
pub fn sample_noise<R: Rng>(kind: NoiseKind, sigma: f64, len: usize, rng: &mut R) -> Vec<f64> {
    if kind == NoiseKind::None || sigma == 0.0 {
        return vec![0.0; len];
    }
    match kind {
        NoiseKind::None => unreachable!(),
        NoiseKind::Uniform => {
            let a = sigma * 3f64.sqrt();
            let d = Uniform::new_inclusive(-a, a).expect("valid uniform bounds");
            (0..len).map(|_| d.sample(rng)).collect()
        }
        NoiseKind::Gaussian => {
            let d = Normal::new(0.0, sigma).expect("valid normal");
            (0..len).map(|_| d.sample(rng)).collect()
        }
        NoiseKind::Rademacher => (0..len)
            .map(|_| if rng.random::<bool>() { sigma } else { -sigma })
            .collect(),
    }
}

fn is_integral(v: f64) -> bool {
    v.fract() == 0.0 && v.abs() < 9.0e15
}

/// Builds the clean signal from its Walsh spectrum and adds noise.
///
/// The clean signal is `Int64` whenever every amplitude is an integer and
/// the inverse transform divides exactly; otherwise it is `Float64`. The
/// noisy signal stays `Int64` only for no noise or integral Rademacher noise.
pub fn gen(spec: &NoisySignalSpec) -> Result<(Signal, Signal)> {
    spec.validate()?;
    let len = 1usize << spec.n;

    let int_amps = spec.support.iter().all(|&(_, a)| is_integral(a));
    let clean = if int_amps {
        let mut walsh = vec![0i64; len];
        for &(i, a) in &spec.support {
            walsh[i as usize] = a as i64;
        }
        let mut sig = Signal::from_i64(Domain::Walsh, walsh)?;
        match inverse_wht_inplace(&mut sig) {
            Ok(()) => Some(sig),
            Err(Error::InexactDivision { .. }) | Err(Error::Overflow { .. }) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    let clean = match clean {
        Some(sig) => sig,
        None => {
            let mut walsh = vec![0f64; len];
            for &(i, a) in &spec.support {
                walsh[i as usize] = a;
            }
            let mut sig = Signal::from_f64(Domain::Walsh, walsh)?;
            inverse_wht_inplace(&mut sig)?;
            sig
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let silent = spec.noise == NoiseKind::None || spec.sigma == 0.0;
    let noisy = match (clean.samples(), silent) {
        (_, true) => clean.clone(),
        (Samples::Int(x), false)
            if spec.noise == NoiseKind::Rademacher && is_integral(spec.sigma) =>
        {
            let s = spec.sigma as i64;
            let data = x
                .iter()
                .map(|&v| if rng.random::<bool>() { v + s } else { v - s })
                .collect();
            Signal::time_i64(data)?
        }
        (samples, false) => {
            let noise = sample_noise(spec.noise, spec.sigma, len, &mut rng);
            let data = match samples {
                Samples::Int(x) => x.iter().zip(&noise).map(|(&v, w)| v as f64 + w).collect(),
                Samples::Float(x) => x.iter().zip(&noise).map(|(v, w)| v + w).collect(),
            };
            Signal::time_f64(data)?
        }
    };
    Ok((clean, noisy))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogBase {
    Natural,
    Two,
}

/// `10 log10(8 log 2 / 2^n)` dB. The base of the inner logarithm is
/// selectable; with base 2 the numerator is 8.
pub fn significance_threshold_db(n: u32, base: LogBase) -> f64 {
    let log2 = match base {
        LogBase::Natural => std::f64::consts::LN_2,
        LogBase::Two => 1.0,
    };
    10.0 * (8.0 * log2).log10() - 10.0 * n as f64 * 2f64.log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SnrReport {
    pub n: u32,
    pub sigma: f64,
    /// `||x^||^2`.
    pub signal_energy: f64,
    /// Walsh-domain noise variance `2^n sigma^2`.
    pub noise_variance: f64,
    /// Infinite when `sigma == 0`.
    pub snr_linear: f64,
    pub snr_db: f64,
    pub zero_noise: bool,
    pub significance_threshold_db: f64,
    pub significance_threshold_db_log2: f64,
    pub above_significance: bool,
}

/// SNR of a clean signal (time or Walsh domain) under per-sample noise
/// `sigma`: `||x^||^2 / (2^n * 2^n sigma^2)`.
pub fn snr(clean: &Signal, sigma: f64) -> Result<SnrReport> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::BadArguments(format!(
            "sigma must be >= 0, got {sigma}"
        )));
    }
    let n = clean.log2_dim();
    let walsh = match clean.domain() {
        Domain::Walsh => clean.clone(),
        Domain::Time => transformed(clean)?,
    };
    let energy = match walsh.samples() {
        Samples::Int(v) => energy_exact(v)? as f64,
        Samples::Float(v) => v.iter().map(|x| x * x).sum(),
    };
    let dim = (n as f64).exp2();
    let noise_variance = dim * sigma * sigma;
    let zero_noise = sigma == 0.0;
    let snr_linear = if zero_noise {
        f64::INFINITY
    } else {
        energy / (dim * noise_variance)
    };
    let snr_db = 10.0 * snr_linear.log10();
    let threshold = significance_threshold_db(n, LogBase::Natural);
    Ok(SnrReport {
        n,
        sigma,
        signal_energy: energy,
        noise_variance,
        snr_linear,
        snr_db,
        zero_noise,
        significance_threshold_db: threshold,
        significance_threshold_db_log2: significance_threshold_db(n, LogBase::Two),
        above_significance: snr_db > threshold,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Coefficient {
    pub index: u64,
    pub value: Scalar,
}

fn check_tau(tau: f64) -> Result<()> {
    if tau.is_nan() || tau < 0.0 {
        return Err(Error::BadArguments(format!(
            "threshold must be >= 0, got {tau}"
        )));
    }
    Ok(())
}

/// Magnitude test exact for integers: `|v| >= tau` iff `|v| >= ceil(tau)`.
fn passes<T: Element>(v: T, tau: f64) -> bool {
    match v.int_abs() {
        Some(m) => tau <= 0.0 || (tau.ceil() <= u64::MAX as f64 && m >= tau.ceil() as u64),
        None => v.abs_f64() >= tau,
    }
}

fn collect_above<T: Element>(values: &[T], base: u64, tau: f64, out: &mut Vec<Coefficient>) {
    out.extend(
        values
            .iter()
            .enumerate()
            .filter(|(_, &v)| passes(v, tau))
            .map(|(i, &v)| Coefficient {
                index: base + i as u64,
                value: v.to_scalar(),
            }),
    );
}

fn order(out: &mut [Coefficient]) {
    out.sort_by(|a, b| {
        let (ma, mb) = (magnitude_key(a.value), magnitude_key(b.value));
        mb.partial_cmp(&ma)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.index.cmp(&b.index))
    });
}

/// Sort key that keeps integer magnitudes exact.
fn magnitude_key(v: Scalar) -> MagKey {
    match v {
        Scalar::Int(x) => MagKey::Int(x.unsigned_abs()),
        Scalar::Float(x) => MagKey::Float(x.abs()),
    }
}

#[derive(PartialEq, PartialOrd)]
enum MagKey {
    Int(u64),
    Float(f64),
}

/// All `(i, y_i)` with `|y_i| >= tau`, by descending magnitude then index.
pub fn extract_above(walsh: &Signal, tau: f64) -> Result<Vec<Coefficient>> {
    check_tau(tau)?;
    let mut out = Vec::new();
    match walsh.samples() {
        Samples::Int(v) => collect_above(v, 0, tau, &mut out),
        Samples::Float(v) => collect_above(v, 0, tau, &mut out),
    }
    order(&mut out);
    Ok(out)
}

/// Streaming variant over a dataset, reading `chunk_elems` at a time.
pub fn extract_above_dataset(
    ds: &DatasetFile,
    tau: f64,
    chunk_elems: u64,
) -> Result<Vec<Coefficient>> {
    check_tau(tau)?;
    let chunk = chunk_elems.clamp(1, ds.len());
    let mut out = Vec::new();
    let mut start = 0;
    while start < ds.len() {
        let count = chunk.min(ds.len() - start);
        match ds.kind() {
            ScalarKind::Int64 => {
                let mut buf = vec![0i64; count as usize];
                ds.read_into(start, &mut buf)?;
                collect_above(&buf, start, tau, &mut out);
            }
            ScalarKind::Float64 => {
                let mut buf = vec![0f64; count as usize];
                ds.read_into(start, &mut buf)?;
                collect_above(&buf, start, tau, &mut out);
            }
        }
        start += count;
    }
    order(&mut out);
    Ok(out)
}

/// Monte Carlo estimate of the per-coefficient variance of the WHT of
/// i.i.d. noise, averaged over `trials` independent seeded vectors.
pub fn noise_walsh_variance_check(
    n: u32,
    sigma: f64,
    kind: NoiseKind,
    trials: u32,
    seed: u64,
) -> Result<f64> {
    if trials == 0 {
        return Err(Error::BadArguments("trials must be >= 1".into()));
    }
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::BadArguments(format!(
            "sigma must be >= 0, got {sigma}"
        )));
    }
    let len = 1usize << n;
    let mut sum_sq = 0.0;
    for t in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(t as u64));
        let mut w = sample_noise(kind, sigma, len, &mut rng);
        fwht_slice(&mut w);
        sum_sq += w.iter().map(|y| y * y).sum::<f64>();
    }
    Ok(sum_sq / (trials as f64 * len as f64))
}
