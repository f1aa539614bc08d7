//! In-place fast Walsh-Hadamard transform and its brute-force oracle.
//!
//! Index bit `b` of `i` is the coefficient of `2^b`, and
//! `<i, j> = popcount(i & j) mod 2`. With that convention the stage order
//! `k = 0..n` (stride `2^k`) yields the natural (Hadamard) ordering
//! `y_i = sum_j (-1)^<i,j> x_j`.

use crate::error::{Error, Result};
use crate::signal::{check_int_bound, max_abs_i64, Element, Samples, Signal};

/// Default dimension limit for [`wht_bruteforce`]; the oracle is `O(4^n)`.
pub const ORACLE_LIMIT: u32 = 14;

/// Observes butterflies as they execute. The unit probe compiles away.
pub trait Probe {
    fn butterfly(&mut self);
}

impl Probe for () {
    #[inline(always)]
    fn butterfly(&mut self) {}
}

/// Counts butterflies.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct ButterflyCounter(pub u64);

impl Probe for ButterflyCounter {
    #[inline(always)]
    fn butterfly(&mut self) {
        self.0 += 1;
    }
}

#[inline(always)]
pub(crate) fn butterfly<T: Element>(a: T, b: T) -> (T, T) {
    (a + b, a - b)
}

/// Applies stage `k` (stride `2^k`) to the whole buffer.
#[inline]
pub(crate) fn stage<T: Element, P: Probe>(buf: &mut [T], k: u32, probe: &mut P) {
    let stride = 1usize << k;
    for group in buf.chunks_exact_mut(stride << 1) {
        let (lo, hi) = group.split_at_mut(stride);
        for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
            let (s, d) = butterfly(*a, *b);
            *a = s;
            *b = d;
            probe.butterfly();
        }
    }
}

/// Transforms `buf` in place. The length must be a power of two.
///
/// No overflow checking happens here; callers working with `i64` data
/// should go through [`fwht_inplace`] or check the bound themselves.
pub fn fwht_slice<T: Element>(buf: &mut [T]) {
    fwht_slice_probed(buf, &mut ());
}

pub fn fwht_slice_probed<T: Element, P: Probe>(buf: &mut [T], probe: &mut P) {
    assert!(
        buf.len().is_power_of_two(),
        "WHT length must be a power of two, got {}",
        buf.len()
    );
    let n = buf.len().trailing_zeros();
    for k in 0..n {
        stage(buf, k, probe);
    }
}

/// Runs the transform and returns the number of butterflies executed.
pub fn fwht_counted<T: Element>(buf: &mut [T]) -> u64 {
    let mut counter = ButterflyCounter::default();
    fwht_slice_probed(buf, &mut counter);
    counter.0
}

/// In-place WHT of a signal. The domain tag flips.
pub fn fwht_inplace(sig: &mut Signal) -> Result<()> {
    sig.check_overflow_bound()?;
    match sig.samples_mut() {
        Samples::Int(v) => fwht_slice(v),
        Samples::Float(v) => fwht_slice(v),
    }
    let flipped = sig.domain().flipped();
    sig.set_domain(flipped);
    Ok(())
}

/// Inverse transform: a forward transform followed by division by `2^n`.
///
/// For `Int64` signals every coefficient of the forward result must be
/// divisible by `2^n`; otherwise the signal is left untouched and
/// [`Error::InexactDivision`] is returned.
pub fn inverse_wht_inplace(sig: &mut Signal) -> Result<()> {
    sig.check_overflow_bound()?;
    let n = sig.log2_dim();
    match sig.samples_mut() {
        Samples::Int(v) => {
            let mut work = v.clone();
            fwht_slice(&mut work);
            let mask = (1i64 << n) - 1;
            if let Some((index, &value)) = work.iter().enumerate().find(|(_, &y)| y & mask != 0) {
                return Err(Error::InexactDivision {
                    index: index as u64,
                    value,
                    n,
                });
            }
            for y in work.iter_mut() {
                *y >>= n;
            }
            *v = work;
        }
        Samples::Float(v) => {
            fwht_slice(v);
            let scale = (n as f64).exp2();
            for y in v.iter_mut() {
                *y /= scale;
            }
        }
    }
    let flipped = sig.domain().flipped();
    sig.set_domain(flipped);
    Ok(())
}

#[inline]
pub fn inner_parity(i: u64, j: u64) -> bool {
    (i & j).count_ones() & 1 == 1
}

/// Direct evaluation of `y_i = sum_j (-1)^<i,j> x_j` over all pairs.
pub fn wht_bruteforce(sig: &Signal) -> Result<Signal> {
    wht_bruteforce_with_limit(sig, ORACLE_LIMIT)
}

pub fn wht_bruteforce_with_limit(sig: &Signal, limit: u32) -> Result<Signal> {
    let n = sig.log2_dim();
    if n > limit {
        return Err(Error::OracleTooLarge { n, limit });
    }
    let samples = match sig.samples() {
        Samples::Int(x) => {
            check_int_bound(max_abs_i64(x), n)?;
            Samples::Int(bruteforce(x))
        }
        Samples::Float(x) => Samples::Float(bruteforce(x)),
    };
    Signal::new(sig.domain().flipped(), samples)
}

fn bruteforce<T: Element>(x: &[T]) -> Vec<T> {
    let len = x.len() as u64;
    (0..len)
        .map(|i| {
            (0..len).fold(T::default(), |acc, j| {
                let xj = x[j as usize];
                if inner_parity(i, j) {
                    acc - xj
                } else {
                    acc + xj
                }
            })
        })
        .collect()
}

/// Exact sum of squares of integer samples.
pub fn energy_exact(values: &[i64]) -> Result<u128> {
    values.iter().try_fold(0u128, |acc, &v| {
        let sq = (v.unsigned_abs() as u128) * (v.unsigned_abs() as u128);
        acc.checked_add(sq).ok_or_else(|| Error::Overflow {
            max_abs: max_abs_i64(values),
            n: values.len().trailing_zeros(),
        })
    })
}

/// `sum x_i^2`. Integer signals accumulate exactly in 128-bit arithmetic
/// before the final conversion.
pub fn parseval_energy(sig: &Signal) -> Result<f64> {
    match sig.samples() {
        Samples::Int(v) => energy_exact(v).map(|e| e as f64),
        Samples::Float(v) => Ok(v.iter().map(|x| x * x).sum()),
    }
}

/// Convenience: transformed copy of a signal.
pub fn transformed(sig: &Signal) -> Result<Signal> {
    let mut out = sig.clone();
    fwht_inplace(&mut out)?;
    Ok(out)
}
