//! Signals of dimension `2^n` in the time or Walsh domain.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::ops::{Add, Sub};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarKind {
    Int64,
    Float64,
}

impl ScalarKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScalarKind::Int64 => "int64",
            ScalarKind::Float64 => "float64",
        }
    }
}

impl fmt::Display for ScalarKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ScalarKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "int64" | "i64" => Ok(ScalarKind::Int64),
            "float64" | "f64" => Ok(ScalarKind::Float64),
            other => Err(Error::BadArguments(format!(
                "unknown element kind {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Time,
    Walsh,
}

impl Domain {
    pub fn flipped(self) -> Domain {
        match self {
            Domain::Time => Domain::Walsh,
            Domain::Walsh => Domain::Time,
        }
    }
}

/// A single sample value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Int(i64),
    Float(f64),
}

impl Scalar {
    pub fn kind(self) -> ScalarKind {
        match self {
            Scalar::Int(_) => ScalarKind::Int64,
            Scalar::Float(_) => ScalarKind::Float64,
        }
    }

    pub fn as_f64(self) -> f64 {
        match self {
            Scalar::Int(v) => v as f64,
            Scalar::Float(v) => v,
        }
    }

    /// Magnitude as `f64`; exact for integers up to 2^53.
    pub fn abs_f64(self) -> f64 {
        match self {
            Scalar::Int(v) => v.unsigned_abs() as f64,
            Scalar::Float(v) => v.abs(),
        }
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Int(v) => write!(f, "{v}"),
            Scalar::Float(v) => write!(f, "{v}"),
        }
    }
}

/// Element types the transforms and the on-disk format understand.
pub trait Element:
    Copy + Default + PartialEq + Send + Sync + Add<Output = Self> + Sub<Output = Self> + 'static
{
    const KIND: ScalarKind;

    fn to_le(self) -> [u8; 8];
    fn from_le(bytes: [u8; 8]) -> Self;
    fn to_scalar(self) -> Scalar;
    fn abs_f64(self) -> f64;
    /// Magnitude of an integer element; `None` for floats.
    fn int_abs(self) -> Option<u64>;
    /// Division by `2^shift`, exact when the value is a multiple of it.
    fn div_pow2(self, shift: u32) -> Self;
}

impl Element for i64 {
    const KIND: ScalarKind = ScalarKind::Int64;

    #[inline]
    fn to_le(self) -> [u8; 8] {
        self.to_le_bytes()
    }
    #[inline]
    fn from_le(bytes: [u8; 8]) -> Self {
        i64::from_le_bytes(bytes)
    }
    #[inline]
    fn to_scalar(self) -> Scalar {
        Scalar::Int(self)
    }
    #[inline]
    fn abs_f64(self) -> f64 {
        self.unsigned_abs() as f64
    }
    #[inline]
    fn int_abs(self) -> Option<u64> {
        Some(self.unsigned_abs())
    }
    #[inline]
    fn div_pow2(self, shift: u32) -> Self {
        self >> shift
    }
}

impl Element for f64 {
    const KIND: ScalarKind = ScalarKind::Float64;

    #[inline]
    fn to_le(self) -> [u8; 8] {
        self.to_le_bytes()
    }
    #[inline]
    fn from_le(bytes: [u8; 8]) -> Self {
        f64::from_le_bytes(bytes)
    }
    #[inline]
    fn to_scalar(self) -> Scalar {
        Scalar::Float(self)
    }
    #[inline]
    fn abs_f64(self) -> f64 {
        self.abs()
    }
    #[inline]
    fn int_abs(self) -> Option<u64> {
        None
    }
    #[inline]
    fn div_pow2(self, shift: u32) -> Self {
        self / (shift as f64).exp2()
    }
}

/// Sample storage with one uniform kind per signal.
#[derive(Debug, Clone, PartialEq)]
pub enum Samples {
    Int(Vec<i64>),
    Float(Vec<f64>),
}

impl Samples {
    pub fn kind(&self) -> ScalarKind {
        match self {
            Samples::Int(_) => ScalarKind::Int64,
            Samples::Float(_) => ScalarKind::Float64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Samples::Int(v) => v.len(),
            Samples::Float(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, index: usize) -> Option<Scalar> {
        match self {
            Samples::Int(v) => v.get(index).copied().map(Scalar::Int),
            Samples::Float(v) => v.get(index).copied().map(Scalar::Float),
        }
    }
}

/// Largest absolute value in an integer slice.
pub fn max_abs_i64(values: &[i64]) -> u64 {
    values.iter().map(|v| v.unsigned_abs()).max().unwrap_or(0)
}

/// Checks the a-priori overflow bound `M * 2^n < 2^63` for a transform of
/// dimension `2^n` over values bounded by `max_abs`.
pub fn check_int_bound(max_abs: u64, n: u32) -> Result<()> {
    let ok = n < 63 && (max_abs as u128) << n < 1u128 << 63;
    if ok {
        Ok(())
    } else {
        Err(Error::Overflow { max_abs, n })
    }
}

/// A signal of dimension `2^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    log2_dim: u32,
    domain: Domain,
    samples: Samples,
}

impl Signal {
    pub fn new(domain: Domain, samples: Samples) -> Result<Self> {
        let len = samples.len();
        if !len.is_power_of_two() {
            return Err(Error::DimMismatch(format!(
                "signal length {len} is not a power of two"
            )));
        }
        Ok(Signal {
            log2_dim: len.trailing_zeros(),
            domain,
            samples,
        })
    }

    pub fn from_i64(domain: Domain, data: Vec<i64>) -> Result<Self> {
        Self::new(domain, Samples::Int(data))
    }

    pub fn from_f64(domain: Domain, data: Vec<f64>) -> Result<Self> {
        Self::new(domain, Samples::Float(data))
    }

    pub fn time_i64(data: Vec<i64>) -> Result<Self> {
        Self::from_i64(Domain::Time, data)
    }

    pub fn time_f64(data: Vec<f64>) -> Result<Self> {
        Self::from_f64(Domain::Time, data)
    }

    pub fn zeros(log2_dim: u32, kind: ScalarKind, domain: Domain) -> Self {
        let len = 1usize << log2_dim;
        let samples = match kind {
            ScalarKind::Int64 => Samples::Int(vec![0; len]),
            ScalarKind::Float64 => Samples::Float(vec![0.0; len]),
        };
        Signal {
            log2_dim,
            domain,
            samples,
        }
    }

    pub fn log2_dim(&self) -> u32 {
        self.log2_dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn set_domain(&mut self, domain: Domain) {
        self.domain = domain;
    }

    pub fn kind(&self) -> ScalarKind {
        self.samples.kind()
    }

    pub fn samples(&self) -> &Samples {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut Samples {
        &mut self.samples
    }

    pub fn into_samples(self) -> Samples {
        self.samples
    }

    pub fn get(&self, index: usize) -> Option<Scalar> {
        self.samples.get(index)
    }

    pub fn as_i64(&self) -> Option<&[i64]> {
        match &self.samples {
            Samples::Int(v) => Some(v),
            Samples::Float(_) => None,
        }
    }

    pub fn as_f64(&self) -> Option<&[f64]> {
        match &self.samples {
            Samples::Float(v) => Some(v),
            Samples::Int(_) => None,
        }
    }

    /// Converts to a `Float64` signal; integers above 2^53 lose precision.
    pub fn to_float(&self) -> Signal {
        let samples = match &self.samples {
            Samples::Int(v) => Samples::Float(v.iter().map(|&x| x as f64).collect()),
            Samples::Float(v) => Samples::Float(v.clone()),
        };
        Signal {
            log2_dim: self.log2_dim,
            domain: self.domain,
            samples,
        }
    }

    /// Checks the int64 overflow bound for a transform of this signal.
    /// Always succeeds for `Float64` signals.
    pub fn check_overflow_bound(&self) -> Result<()> {
        match &self.samples {
            Samples::Int(v) => check_int_bound(max_abs_i64(v), self.log2_dim),
            Samples::Float(_) => Ok(()),
        }
    }
}
