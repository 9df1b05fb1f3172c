//! Seeded, parallel Monte Carlo orchestration with a deterministic reduction
//! contract.
//!
//! Per-path statistics are accumulated into fixed-point integer sums: each
//! summand is quantised onto a power-of-two grid (exactly, for every value of
//! magnitude above ~5e-4) and added with 128-bit integer arithmetic. Integer
//! addition is exact and commutative, so the reduced statistics are
//! bit-identical for any worker count and any batch split. Work is dispatched
//! in fixed-size batches of path indices; each path's randomness is a pure
//! function of `(seed, path index)`.

use rayon::prelude::*;

use crate::error::CoreError;
use crate::filter::VarianceCurve;
use crate::model::{LiabilitySpec, MarketParams, Preferences};
use crate::paths::{walk, Grid, PathCoeffs, RngSpec};

/// Fixed batch size of the dispatch grid. Constant so that batch boundaries
/// never depend on the worker count.
pub const BATCH_SIZE: u64 = 4096;

/// Quantisation scale for first-moment sums (2^64).
const MEAN_SCALE: f64 = 18_446_744_073_709_551_616.0;
/// Quantisation scale for second-moment sums (2^48).
const CROSS_SCALE: f64 = 281_474_976_710_656.0;
/// Per-component magnitude cap. With |x| <= 1e6, cross products reach
/// 1e12 * 2^48 ~ 2.8e26 per push, leaving three orders of magnitude of i128
/// headroom at 1e8 paths.
const PUSH_LIMIT: f64 = 1e6;

#[inline]
fn quantize(x: f64, scale: f64) -> Result<i128, CoreError> {
    if !x.is_finite() || x.abs() > PUSH_LIMIT * PUSH_LIMIT {
        return Err(CoreError::AccumulatorOverflow { value: x });
    }
    Ok((x * scale).round() as i128)
}

/// Point estimate with sampling error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MCEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: u64,
    /// `mean -/+ 1.96 * std_error`.
    pub ci95: (f64, f64),
}

impl MCEstimate {
    pub fn new(mean: f64, std_error: f64, n_paths: u64) -> Self {
        MCEstimate {
            mean,
            std_error,
            n_paths,
            ci95: (mean - 1.96 * std_error, mean + 1.96 * std_error),
        }
    }

    pub fn exact(value: f64, n_paths: u64) -> Self {
        MCEstimate::new(value, 0.0, n_paths)
    }
}

/// Exact, order-independent accumulator of a vector-valued sample's first and
/// second moments.
#[derive(Debug, Clone)]
pub struct VectorAccumulator {
    dim: usize,
    n: u64,
    sums: Vec<i128>,
    /// Upper triangle of the cross-moment matrix, row-major.
    cross: Vec<i128>,
}

impl VectorAccumulator {
    pub fn new(dim: usize) -> Self {
        VectorAccumulator { dim, n: 0, sums: vec![0; dim], cross: vec![0; dim * (dim + 1) / 2] }
    }

    #[inline]
    fn tri(&self, i: usize, j: usize) -> usize {
        debug_assert!(i <= j && j < self.dim);
        i * self.dim - i * (i + 1) / 2 + j
    }

    /// Adds one sample vector. Rejects non-finite or absurdly large values so
    /// the integer sums cannot silently wrap.
    pub fn push(&mut self, x: &[f64]) -> Result<(), CoreError> {
        assert_eq!(x.len(), self.dim);
        for (i, &xi) in x.iter().enumerate() {
            if !xi.is_finite() || xi.abs() > PUSH_LIMIT {
                return Err(CoreError::AccumulatorOverflow { value: xi });
            }
            self.sums[i] = self.sums[i]
                .checked_add(quantize(xi, MEAN_SCALE)?)
                .ok_or(CoreError::AccumulatorOverflow { value: xi })?;
            for (j, &xj) in x.iter().enumerate().skip(i) {
                let idx = self.tri(i, j);
                self.cross[idx] = self.cross[idx]
                    .checked_add(quantize(xi * xj, CROSS_SCALE)?)
                    .ok_or(CoreError::AccumulatorOverflow { value: xi * xj })?;
            }
        }
        self.n += 1;
        Ok(())
    }

    /// Exact merge; commutes and associates bit-for-bit.
    pub fn merge(&mut self, other: &VectorAccumulator) -> Result<(), CoreError> {
        assert_eq!(self.dim, other.dim);
        self.n += other.n;
        for i in 0..self.sums.len() {
            self.sums[i] = self.sums[i]
                .checked_add(other.sums[i])
                .ok_or(CoreError::AccumulatorOverflow { value: f64::INFINITY })?;
        }
        for i in 0..self.cross.len() {
            self.cross[i] = self.cross[i]
                .checked_add(other.cross[i])
                .ok_or(CoreError::AccumulatorOverflow { value: f64::INFINITY })?;
        }
        Ok(())
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn mean(&self, i: usize) -> f64 {
        (self.sums[i] as f64) / MEAN_SCALE / self.n as f64
    }

    /// Unbiased sample covariance of components `i`, `j`.
    pub fn sample_cov(&self, i: usize, j: usize) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let n = self.n as f64;
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        let s2 = (self.cross[self.tri(a, b)] as f64) / CROSS_SCALE;
        let s1i = (self.sums[i] as f64) / MEAN_SCALE;
        let s1j = (self.sums[j] as f64) / MEAN_SCALE;
        ((s2 - s1i * s1j / n) / (n - 1.0)).max(if i == j { 0.0 } else { f64::NEG_INFINITY })
    }

    /// Covariance of the *means* of components `i`, `j` (sample cov / n).
    pub fn cov_of_means(&self, i: usize, j: usize) -> f64 {
        self.sample_cov(i, j) / self.n as f64
    }

    pub fn estimate(&self, i: usize) -> MCEstimate {
        MCEstimate::new(self.mean(i), self.cov_of_means(i, i).max(0.0).sqrt(), self.n)
    }
}

/// Runs `f(start, len)` over fixed `BATCH`-sized index ranges in parallel,
/// returning results in batch order regardless of scheduling.
pub fn par_batched<T: Send>(
    n_items: u64,
    batch_size: u64,
    f: impl Fn(u64, u64) -> T + Sync,
) -> Vec<T> {
    let n_batches = n_items.div_ceil(batch_size);
    (0..n_batches)
        .into_par_iter()
        .map(|b| {
            let start = b * batch_size;
            let len = batch_size.min(n_items - start);
            f(start, len)
        })
        .collect()
}

/// Deterministic fixed-order reduction of per-batch accumulators. Since the
/// accumulators are exact, the result is also independent of the batch split.
pub fn reduce(
    partials: impl IntoIterator<Item = Result<VectorAccumulator, CoreError>>,
) -> Result<VectorAccumulator, CoreError> {
    let mut iter = partials.into_iter();
    let mut total = iter.next().expect("at least one batch")?;
    for p in iter {
        total.merge(&p?)?;
    }
    Ok(total)
}

/// Component order of the per-path sample vector behind a [`TermSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Term {
    /// `H_T e^{-int r}` (liability discount factor under the measure change);
    /// scaled by `K` in the reported `A`.
    A = 0,
    /// `int_0^T H alpha phi ds` (trapezoid).
    B = 1,
    /// Full-information twin of `A`.
    A0 = 2,
    /// Full-information twin of `B`.
    B0 = 3,
    /// `H_T`, the martingale quality gate.
    Ht = 4,
}

/// The four expectation terms driving the optimal solution and welfare loss,
/// with their joint sampling covariance on common paths.
#[derive(Debug, Clone)]
pub struct TermSet {
    pub a: MCEstimate,
    pub b: MCEstimate,
    pub a0: MCEstimate,
    pub b0: MCEstimate,
    /// `E[H_T]` on the same paths; should sit within 3 SE of 1.
    pub eht: MCEstimate,
    pub k: f64,
    pub n_paths: u64,
    pub seed: u64,
    acc: VectorAccumulator,
}

impl TermSet {
    fn from_acc(acc: VectorAccumulator, k: f64, seed: u64) -> Result<TermSet, CoreError> {
        let n = acc.n();
        let scale = |raw: MCEstimate, k: f64| MCEstimate::new(k * raw.mean, k.abs() * raw.std_error, n);
        let ts = TermSet {
            a: scale(acc.estimate(Term::A as usize), k),
            b: acc.estimate(Term::B as usize),
            a0: scale(acc.estimate(Term::A0 as usize), k),
            b0: acc.estimate(Term::B0 as usize),
            eht: acc.estimate(Term::Ht as usize),
            k,
            n_paths: n,
            seed,
            acc,
        };
        ts.certify_positivity()?;
        Ok(ts)
    }

    /// Same raw statistics, different liability level (an x- or K-sweep never
    /// re-simulates).
    pub fn with_k(&self, k: f64) -> Result<TermSet, CoreError> {
        TermSet::from_acc(self.acc.clone(), k, self.seed)
    }

    /// Covariance of the mean estimates `(A, B, A0, B0)`, liability-scaled.
    pub fn cov_of_means(&self, i: Term, j: Term) -> f64 {
        let scale_i = if matches!(i, Term::A | Term::A0) { self.k } else { 1.0 };
        let scale_j = if matches!(j, Term::A | Term::A0) { self.k } else { 1.0 };
        scale_i * scale_j * self.acc.cov_of_means(i as usize, j as usize)
    }

    /// Certifies `1 - B > 0` (and the twin) with a 3-sigma margin; the
    /// downstream solution refuses to build without it.
    pub fn certify_positivity(&self) -> Result<(), CoreError> {
        for (name, est) in [("1 - B", &self.b), ("1 - B0", &self.b0)] {
            let margin = 1.0 - est.mean;
            let three_se = 3.0 * est.std_error;
            if !(margin > three_se) {
                return Err(CoreError::PositivityViolation { term: name, margin, three_se });
            }
        }
        Ok(())
    }
}

/// Estimates the term set over `n_paths` common paths.
///
/// The integrand of `B` is accumulated on the fly (memory stays O(grid) per
/// worker); `A` is estimated through the liability-free discount factor and
/// scaled by `K`, so `K = 0` yields an exactly zero `A` with zero variance.
pub fn estimate_terms(
    p: &MarketParams,
    prefs: &Preferences,
    liab: &LiabilitySpec,
    vc: &VarianceCurve,
    grid: Grid,
    n_paths: u64,
    seed: u64,
) -> Result<TermSet, CoreError> {
    if n_paths < 2 {
        return Err(CoreError::invalid("n_paths", "must be >= 2"));
    }
    let co = PathCoeffs::new(p, prefs, vc, grid);
    let acc = accumulate_terms(&co, n_paths, seed)?;
    TermSet::from_acc(acc, liab.k, seed)
}

fn accumulate_terms(co: &PathCoeffs, n_paths: u64, seed: u64) -> Result<VectorAccumulator, CoreError> {
    let dt = co.grid.dt();
    let n_steps = co.grid.n_steps;
    let partials = par_batched(n_paths, BATCH_SIZE, |start, len| {
        let mut acc = VectorAccumulator::new(5);
        for i in 0..len {
            let path = start + i;
            let mut rng = RngSpec { seed, stream: path }.rng();
            let mut b = 0.0;
            let mut b0 = 0.0;
            let end = walk(co, co.initial_state(), &mut rng, |s| {
                let w = if s.k == 0 || s.k == n_steps { 0.5 * dt } else { dt };
                b += w * s.h_alpha_phi(co);
                b0 += w * s.h0_alpha0_phi0(co);
            })
            .map_err(|step| CoreError::SimulationNan { what: "term integrand", path, step })?;
            let ht = end.h();
            let disc = (-end.int_r).exp();
            acc.push(&[ht * disc, b, end.h0() * disc, b0, ht])?;
        }
        Ok(acc)
    });
    reduce(partials)
}
