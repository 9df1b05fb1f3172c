//! Closed-form optimal controls and value function.
//!
//! Everything scales through one constant: the effective initial surplus
//! `x_tilde = (x - A) / (1 - B)`, with `A` the liability present value under
//! the measure change and `B` the expected discounted resource integral.
//! Optimal consumption is `delta^psi * x_tilde * phi_t`, the optimal exposure
//! is `-e^{int r} Z_t + x_tilde phi_t eta_t / gamma`, and the value function
//! is `x_tilde^{1-gamma} / (1-gamma)`.

use crate::error::CoreError;
use crate::filter::VarianceCurve;
use crate::mc::{par_batched, reduce, MCEstimate, Term, TermSet, VectorAccumulator};
use crate::model::{LiabilitySpec, MarketParams, Preferences};
use crate::paths::{walk, PathBundle, PathCoeffs, RngSpec};

/// Effective initial surplus with a delta-method standard error that accounts
/// for the covariance of `A` and `B` on common paths.
#[derive(Debug, Clone, Copy)]
pub struct XTilde {
    pub value: f64,
    pub std_error: f64,
}

/// `x_tilde = (x - A)/(1 - B)`. Requires the positivity certificate on `1 - B`
/// and the theorem hypothesis `x > A`.
pub fn x_tilde(x: f64, terms: &TermSet) -> Result<XTilde, CoreError> {
    terms.certify_positivity()?;
    let a = terms.a.mean;
    let b = terms.b.mean;
    if !(x > a) {
        return Err(CoreError::HypothesisViolation { x, liability_value: a });
    }
    let denom = 1.0 - b;
    let value = (x - a) / denom;
    // gradient of (x - A)/(1 - B) in (A, B)
    let ga = -1.0 / denom;
    let gb = value / denom;
    let var = ga * ga * terms.cov_of_means(Term::A, Term::A)
        + 2.0 * ga * gb * terms.cov_of_means(Term::A, Term::B)
        + gb * gb * terms.cov_of_means(Term::B, Term::B);
    Ok(XTilde { value, std_error: var.max(0.0).sqrt() })
}

/// `x_tilde^{1-gamma} / (1-gamma)`; negative and increasing in `x_tilde` for
/// `gamma > 1`.
pub fn value_function(x_tilde: f64, prefs: &Preferences) -> f64 {
    x_tilde.powf(1.0 - prefs.gamma) / (1.0 - prefs.gamma)
}

/// `Y_0 = -A + x_tilde B`.
pub fn y_zero(terms: &TermSet, x_tilde: f64) -> f64 {
    -terms.a.mean + x_tilde * terms.b.mean
}

/// Time-0 solution summary.
#[derive(Debug, Clone, Copy)]
pub struct Solution {
    pub x: f64,
    pub x_tilde: XTilde,
    pub value: f64,
    pub y0: f64,
    pub c0: f64,
}

pub fn solve(x: f64, terms: &TermSet, prefs: &Preferences) -> Result<Solution, CoreError> {
    let xt = x_tilde(x, terms)?;
    Ok(Solution {
        x,
        x_tilde: xt,
        value: value_function(xt.value, prefs),
        y0: y_zero(terms, xt.value),
        c0: prefs.delta_pow_psi() * xt.value,
    })
}

/// Optimal consumption at grid index `k`: `delta^psi * x_tilde * phi_k`.
pub fn consumption(prefs: &Preferences, x_tilde: f64, bundle: &PathBundle, k: usize) -> f64 {
    prefs.delta_pow_psi() * x_tilde * bundle.phi[k]
}

/// Optimal exposure vector at grid index `k` given the hedging control `z`:
/// `-e^{int r} z + x_tilde phi eta / gamma`.
pub fn portfolio(
    prefs: &Preferences,
    x_tilde: f64,
    bundle: &PathBundle,
    k: usize,
    z: [f64; 2],
) -> [f64; 2] {
    let growth = bundle.int_r[k].exp();
    let myopic = x_tilde * bundle.phi[k] / prefs.gamma;
    [
        -growth * z[0] + myopic * bundle.eta[k][0],
        -growth * z[1] + myopic * bundle.eta[k][1],
    ]
}

/// Stock/bond amounts `(pi_S, pi_B) = pi^T Sigma^{-1}`; singular at maturity.
pub fn asset_split(
    p: &MarketParams,
    t: f64,
    r: f64,
    pi: [f64; 2],
) -> Result<(f64, f64), CoreError> {
    Ok(p.sigma_matrix(t, r)?.split(pi))
}

/// Optimal wealth along a path given `Y`: `X* = x_tilde phi - e^{int r} Y`.
pub fn wealth(bundle: &PathBundle, k: usize, x_tilde: f64, y: f64) -> f64 {
    x_tilde * bundle.phi[k] - bundle.int_r[k].exp() * y
}

/// Nested Monte Carlo estimator of `Y_t` at grid index `t_idx` of an outer
/// path: continues `inner_paths` fresh sub-paths from the outer state and
/// averages `-(H_T/H_t) K e^{-int_0^T r} + x_tilde int_t^T (H_s/H_t) alpha_s
/// phi_s ds`. At `t_idx = 0` this reduces (in expectation) to `-A + x_tilde B`;
/// at the terminal index it is `-K e^{-int r}` exactly.
#[allow(clippy::too_many_arguments)]
pub fn y_nested(
    p: &MarketParams,
    prefs: &Preferences,
    vc: &VarianceCurve,
    liab: &LiabilitySpec,
    bundle: &PathBundle,
    t_idx: usize,
    x_tilde: f64,
    inner_paths: u64,
    rng_spec: RngSpec,
) -> Result<MCEstimate, CoreError> {
    let grid = bundle.grid;
    let n = grid.n_steps;
    assert!(t_idx <= n);
    if t_idx == n {
        return Ok(MCEstimate::exact(-liab.k * (-bundle.int_r[n]).exp(), 0));
    }
    let co = PathCoeffs::new(p, prefs, vc, grid);
    let dt = grid.dt();
    // inner accumulators restart at zero; outer reference values factor out
    let phi_t = bundle.phi[t_idx];
    let int_r_t = bundle.int_r[t_idx];
    let mut start = bundle.state_at(t_idx);
    start.int_r = 0.0;
    start.int_eta_sq = 0.0;
    start.int_eta_di = 0.0;
    start.log_phi = 0.0;
    let seed = rng_spec.sub_seed(t_idx);

    let partials = par_batched(inner_paths, 4096, |lo, len| {
        let mut acc = VectorAccumulator::new(1);
        for i in 0..len {
            let mut rng = RngSpec { seed, stream: lo + i }.rng();
            let mut integral = 0.0;
            let end = walk(&co, start, &mut rng, |s| {
                let w = if s.k == t_idx || s.k == n { 0.5 * dt } else { dt };
                // (H_s/H_t) alpha_s phi_s with phi_s = phi_t * inner factor
                let eta = co.eta_of_m(s.m);
                let esq = eta[0] * eta[0] + eta[1] * eta[1];
                let alpha_scale = (s.log_h() + s.log_phi - s.int_r - int_r_t).exp();
                integral += w
                    * alpha_scale
                    * (prefs.alpha_const() + s.r + 0.5 / prefs.gamma * esq);
            })
            .map_err(|step| CoreError::SimulationNan { what: "nested Y", path: lo + i, step })?;
            let discount = (-(end.int_r + int_r_t)).exp();
            let weight = end.h();
            acc.push(&[-weight * liab.k * discount + x_tilde * phi_t * integral])?;
        }
        Ok(acc)
    });
    Ok(reduce(partials)?.estimate(0))
}
