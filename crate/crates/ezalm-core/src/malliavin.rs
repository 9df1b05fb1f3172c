//! Explicit Malliavin-derivative kernels along a simulated path and the
//! Clark-Ocone estimator of the hedging control `Z`.
//!
//! All kernels are derivatives with respect to the two innovation Brownian
//! coordinates and vanish for `t > s`. The state kernels are exponentially
//! damped constants; the path-functional kernels (`e^{-int r}`, `alpha_s`,
//! `phi_s`) chain-rule through them, with inner time integrals discretised by
//! the trapezoid rule and inner stochastic integrals by left-point sums on the
//! simulation grid.
//!
//! `Z_t` is recovered from the Clark-Ocone representation under the measure
//! change: `Z_t = E_Q[ D_t(xi) - xi * int_t^T D_t(eta_u) dI^Q_u | F_t ]` with
//! `xi = -K e^{-int_0^T r} + x_tilde int_0^T alpha phi ds`, implemented under
//! the original measure by weighting with the terminal stochastic exponential.

use crate::error::CoreError;
use crate::filter::VarianceCurve;
use crate::mc::{par_batched, reduce, MCEstimate, VectorAccumulator};
use crate::model::{ou_decay_integral, LiabilitySpec, MarketParams, Preferences};
use crate::paths::{
    simulate_observable_from, simulate_observable_with_increments, Grid, PathBundle, PathCoeffs,
    RngSpec,
};

/// Derivative kernels attached to one simulated path.
pub struct MalliavinKernel<'a> {
    pub bundle: &'a PathBundle,
    market: MarketParams,
    prefs: Preferences,
    vc: &'a VarianceCurve,
    /// Unit direction of the rate noise `(rho_rS, sqrt(1 - rho_rS^2))`.
    u_r: [f64; 2],
    /// `e^{-int_0^{t_j} r}` per node.
    disc: Vec<f64>,
    /// `c_alpha + r + ||eta||^2/(2 gamma)` per node.
    a_coef: Vec<f64>,
    /// `(beta^2 m - beta rho_rS phi_B) / (gamma (1 - rho_rS^2))` per node.
    w_alpha: Vec<f64>,
    /// Trapezoid integrand of the `phi` drift sensitivity,
    /// `(gamma-1)/gamma * w_alpha * e^{-kappa_R t}` per node.
    p_integrand: Vec<f64>,
    /// Trapezoid cumulative of `p_integrand`.
    p_cum: Vec<f64>,
    /// Left-point cumulative of `e^{-kappa_R t_j} dJ_j`,
    /// `dJ = grad_eta . dI`.
    q_cum: Vec<f64>,
    /// Same under the changed measure, `dI^Q = dI + eta dt`.
    qq_cum: Vec<f64>,
    /// Trapezoid cumulative of `alpha phi`.
    af_cum: Vec<f64>,
}

impl<'a> MalliavinKernel<'a> {
    pub fn new(
        p: &MarketParams,
        prefs: &Preferences,
        vc: &'a VarianceCurve,
        bundle: &'a PathBundle,
    ) -> Self {
        let grid = bundle.grid;
        let n = grid.n_steps;
        let dt = grid.dt();
        let root = (1.0 - p.rho_rs * p.rho_rs).sqrt();
        let omr = 1.0 - p.rho_rs * p.rho_rs;
        let gamma = prefs.gamma;
        let c_alpha = prefs.alpha_const();

        let mut disc = Vec::with_capacity(n + 1);
        let mut a_coef = Vec::with_capacity(n + 1);
        let mut w_alpha = Vec::with_capacity(n + 1);
        let mut p_integrand = Vec::with_capacity(n + 1);
        for j in 0..=n {
            let m = bundle.m[j];
            let eta = bundle.eta[j];
            let esq = eta[0] * eta[0] + eta[1] * eta[1];
            disc.push((-bundle.int_r[j]).exp());
            a_coef.push(c_alpha + bundle.r[j] + 0.5 / gamma * esq);
            let w = (p.beta * p.beta * m - p.beta * p.rho_rs * p.phi_b) / (gamma * omr);
            w_alpha.push(w);
            p_integrand.push((gamma - 1.0) / gamma * w * (-p.kappa_rp * grid.time(j)).exp());
        }

        let mut p_cum = vec![0.0; n + 1];
        let mut q_cum = vec![0.0; n + 1];
        let mut qq_cum = vec![0.0; n + 1];
        let mut af_cum = vec![0.0; n + 1];
        let grad_eta = [p.beta, -p.beta * p.rho_rs / root];
        for j in 0..n {
            p_cum[j + 1] = p_cum[j] + 0.5 * dt * (p_integrand[j] + p_integrand[j + 1]);
            let inc = bundle.increments[j];
            let eta = bundle.eta[j];
            let dj = grad_eta[0] * inc[0] + grad_eta[1] * inc[1];
            let djq = grad_eta[0] * (inc[0] + eta[0] * dt) + grad_eta[1] * (inc[1] + eta[1] * dt);
            let damp = (-p.kappa_rp * grid.time(j)).exp();
            q_cum[j + 1] = q_cum[j] + damp * dj;
            qq_cum[j + 1] = qq_cum[j] + damp * djq;
            af_cum[j + 1] = af_cum[j]
                + 0.5
                    * dt
                    * (bundle.alpha[j] * bundle.phi[j] + bundle.alpha[j + 1] * bundle.phi[j + 1]);
        }

        MalliavinKernel {
            bundle,
            market: p.clone(),
            prefs: *prefs,
            vc,
            u_r: [p.rho_rs, root],
            disc,
            a_coef,
            w_alpha,
            p_integrand,
            p_cum,
            q_cum,
            qq_cum,
            af_cum,
        }
    }

    fn grid(&self) -> Grid {
        self.bundle.grid
    }

    /// `D_t(r_s) = 1_{t<=s} sigma_r e^{kappa_r (t-s)} (rho_rS, sqrt(1-rho_rS^2))`.
    pub fn d_r(&self, t: f64, s: f64) -> [f64; 2] {
        if t > s {
            return [0.0, 0.0];
        }
        let scale = self.market.sigma_r * (self.market.kappa_r * (t - s)).exp();
        [scale * self.u_r[0], scale * self.u_r[1]]
    }

    /// `D_t(m_s) = 1_{t<=s} e^{kappa_R (t-s)} sigma_m(t)`.
    pub fn d_m(&self, t: f64, s: f64) -> [f64; 2] {
        if t > s {
            return [0.0, 0.0];
        }
        let g = self.vc.filter_gain(t);
        let damp = (self.market.kappa_rp * (t - s)).exp();
        [damp * g[0], damp * g[1]]
    }

    /// `D_t(e^{-int_0^T r}) = -e^{-int_0^T r} sigma_B(t) (rho_rS, sqrt(1-rho_rS^2))`
    /// using the closed-form time integral of `D_t(r_s)`.
    pub fn d_discount(&self, t_idx: usize) -> [f64; 2] {
        self.d_discount_at(self.grid().time(t_idx))
    }

    pub fn d_discount_at(&self, t: f64) -> [f64; 2] {
        let n = self.grid().n_steps;
        let scale = -self.disc[n] * self.market.sigma_b(t);
        [scale * self.u_r[0], scale * self.u_r[1]]
    }

    /// `D_t(alpha_s)` at grid nodes; zero for `t > s`.
    pub fn d_alpha(&self, t_idx: usize, s_idx: usize) -> [f64; 2] {
        if t_idx > s_idx {
            return [0.0, 0.0];
        }
        self.d_alpha_at(self.grid().time(t_idx), s_idx)
    }

    pub fn d_alpha_at(&self, t: f64, s_idx: usize) -> [f64; 2] {
        let p = &self.market;
        let s = self.grid().time(s_idx);
        let disc_s = self.disc[s_idx];
        // D_t(e^{-int_0^s r}) coefficient along u_r
        let ddisc = -disc_s * p.sigma_r * ou_decay_integral(p.kappa_r, s - t);
        let dr = p.sigma_r * (-p.kappa_r * (s - t)).exp();
        let u_scale = self.a_coef[s_idx] * ddisc + disc_s * dr;
        let g = self.vc.filter_gain(t);
        let m_scale = disc_s * self.w_alpha[s_idx] * (-p.kappa_rp * (s - t)).exp();
        [
            u_scale * self.u_r[0] + m_scale * g[0],
            u_scale * self.u_r[1] + m_scale * g[1],
        ]
    }

    /// `D_t(phi_s)` at grid nodes; zero for `t > s`.
    pub fn d_phi(&self, t_idx: usize, s_idx: usize) -> [f64; 2] {
        if t_idx > s_idx {
            return [0.0, 0.0];
        }
        self.d_phi_parts(self.grid().time(t_idx), self.bundle.eta[t_idx], t_idx, s_idx)
    }

    /// Bump-aligned evaluation: the increment of step `k` carries the direct
    /// `eta` sensitivity at the left node while its propagation through `m`
    /// acts from the step midpoint. Used by the finite-difference oracles.
    pub fn d_phi_bump(&self, k: usize, s_idx: usize) -> [f64; 2] {
        if s_idx <= k {
            return [0.0, 0.0];
        }
        let t_mid = self.grid().time(k) + 0.5 * self.grid().dt();
        let mut v = self.d_phi_parts(t_mid, self.bundle.eta[k], k + 1, s_idx);
        // the drift trapezoid gives node k+1 full weight in the response
        let extra = 0.5 * self.grid().dt() * self.p_integrand[k + 1];
        let g = self.vc.filter_gain(t_mid);
        let ekt = (self.market.kappa_rp * t_mid).exp();
        let phi_s = self.bundle.phi[s_idx];
        v[0] += phi_s * g[0] * ekt * extra;
        v[1] += phi_s * g[1] * ekt * extra;
        v
    }

    /// Bump-aligned `D(alpha_s)` (midpoint time).
    pub fn d_alpha_bump(&self, k: usize, s_idx: usize) -> [f64; 2] {
        if s_idx <= k {
            return [0.0, 0.0];
        }
        self.d_alpha_at(self.grid().time(k) + 0.5 * self.grid().dt(), s_idx)
    }

    /// Bump-aligned `D(e^{-int_0^T r})` (midpoint time).
    pub fn d_discount_bump(&self, k: usize) -> [f64; 2] {
        self.d_discount_at(self.grid().time(k) + 0.5 * self.grid().dt())
    }

    fn d_phi_parts(&self, t_eval: f64, eta_t: [f64; 2], from: usize, s_idx: usize) -> [f64; 2] {
        let gamma = self.prefs.gamma;
        let from = from.min(s_idx);
        let pdiff = self.p_cum[s_idx] - self.p_cum[from];
        let qdiff = self.q_cum[s_idx] - self.q_cum[from];
        let g = self.vc.filter_gain(t_eval);
        let ekt = (self.market.kappa_rp * t_eval).exp();
        let m_term = ekt * (pdiff + qdiff / gamma);
        let phi_s = self.bundle.phi[s_idx];
        [
            phi_s * (g[0] * m_term + eta_t[0] / gamma),
            phi_s * (g[1] * m_term + eta_t[1] / gamma),
        ]
    }

    /// Terminal Clark-Ocone functional
    /// `xi = -K e^{-int_0^T r} + x_tilde int_0^T alpha phi ds`.
    pub fn xi(&self, k_liab: f64, x_tilde: f64) -> f64 {
        let n = self.grid().n_steps;
        -k_liab * self.disc[n] + x_tilde * self.af_cum[n]
    }

    /// Integrand of the Clark-Ocone conditional expectation at grid index
    /// `t_idx`: `D_t(xi) - xi * int_t^T D_t(eta_u) dI^Q_u`, plus `xi` itself.
    pub fn z_integrand(&self, t_idx: usize, k_liab: f64, x_tilde: f64) -> ([f64; 2], f64) {
        let grid = self.grid();
        let n = grid.n_steps;
        let dt = grid.dt();
        let b = self.bundle;

        let mut dxi = self.d_discount(t_idx);
        dxi[0] *= -k_liab;
        dxi[1] *= -k_liab;
        // x_tilde * int_t^T [phi D(alpha) + alpha D(phi)] ds, trapezoid in s
        let mut sum = [0.0, 0.0];
        for s_idx in t_idx..=n {
            let w = if s_idx == t_idx || s_idx == n { 0.5 * dt } else { dt };
            let da = self.d_alpha(t_idx, s_idx);
            let dp = self.d_phi(t_idx, s_idx);
            sum[0] += w * (b.phi[s_idx] * da[0] + b.alpha[s_idx] * dp[0]);
            sum[1] += w * (b.phi[s_idx] * da[1] + b.alpha[s_idx] * dp[1]);
        }
        dxi[0] += x_tilde * sum[0];
        dxi[1] += x_tilde * sum[1];

        let xi = self.xi(k_liab, x_tilde);
        let t = grid.time(t_idx);
        let g = self.vc.filter_gain(t);
        let ekt = (self.market.kappa_rp * t).exp();
        let qq = ekt * (self.qq_cum[n] - self.qq_cum[t_idx]);
        ([dxi[0] - xi * g[0] * qq, dxi[1] - xi * g[1] * qq], xi)
    }
}

/// Clark-Ocone estimate of `Z_t` (and, at `t = 0`, of the constant term
/// `Y_0 = E_Q[xi]`).
#[derive(Debug, Clone)]
pub struct ZReport {
    pub t: f64,
    pub z: [MCEstimate; 2],
    /// Constant-term cross-check `E[H_T xi]`; only produced at `t = 0`.
    pub y0_clark: Option<MCEstimate>,
    /// True when the estimate required nested conditioning (`t > 0`), which is
    /// substantially more expensive per reported digit.
    pub nested: bool,
}

/// Estimates `Z` at grid index `t_idx`.
///
/// At `t_idx = 0` the conditional expectation is a plain weighted average over
/// `n_paths` paths. For `t_idx > 0` one outer path (stream 0) is simulated and
/// `n_paths` fresh inner continuations estimate the conditional expectation on
/// that path.
#[allow(clippy::too_many_arguments)]
pub fn z_clark_ocone(
    p: &MarketParams,
    prefs: &Preferences,
    liab: &LiabilitySpec,
    vc: &VarianceCurve,
    grid: Grid,
    x_tilde: f64,
    t_idx: usize,
    n_paths: u64,
    seed: u64,
) -> Result<ZReport, CoreError> {
    assert!(t_idx < grid.n_steps, "Z is estimated strictly before maturity");
    let co = PathCoeffs::new(p, prefs, vc, grid);
    if t_idx == 0 {
        let partials = par_batched(n_paths, 1024, |start, len| {
            let mut acc = VectorAccumulator::new(3);
            for i in 0..len {
                let bundle = simulate_observable_from(&co, RngSpec { seed, stream: start + i })?;
                let kernel = MalliavinKernel::new(p, prefs, vc, &bundle);
                let (v, xi) = kernel.z_integrand(0, liab.k, x_tilde);
                let h_t = bundle.h[grid.n_steps];
                acc.push(&[h_t * v[0], h_t * v[1], h_t * xi])?;
            }
            Ok(acc)
        });
        let acc = reduce(partials)?;
        return Ok(ZReport {
            t: 0.0,
            z: [acc.estimate(0), acc.estimate(1)],
            y0_clark: Some(acc.estimate(2)),
            nested: false,
        });
    }

    // nested estimate on one outer path
    let outer = simulate_observable_from(&co, RngSpec { seed, stream: 0 })?;
    let rep = z_nested_on(&co, p, prefs, liab, vc, &outer, t_idx, x_tilde, n_paths, seed)?;
    Ok(rep)
}

/// Nested conditional estimate of `Z_t` on one given outer path.
#[allow(clippy::too_many_arguments)]
pub fn z_nested_on(
    co: &PathCoeffs,
    p: &MarketParams,
    prefs: &Preferences,
    liab: &LiabilitySpec,
    vc: &VarianceCurve,
    outer: &PathBundle,
    t_idx: usize,
    x_tilde: f64,
    inner_paths: u64,
    seed: u64,
) -> Result<ZReport, CoreError> {
    let grid = co.grid;
    let n = grid.n_steps;
    let prefix: Vec<[f64; 2]> = outer.increments[..t_idx].to_vec();
    let h_t = outer.h[t_idx];
    let sub_seed = RngSpec { seed, stream: 0 }.sub_seed(t_idx);
    let partials = par_batched(inner_paths, 1024, |start, len| {
        let mut acc = VectorAccumulator::new(2);
        for i in 0..len {
            let mut rng = RngSpec { seed: sub_seed, stream: start + i }.rng();
            let mut increments = prefix.clone();
            increments.extend(co.draw_increments(&mut rng, n - t_idx));
            let bundle =
                simulate_observable_with_increments(p, prefs, vc, grid, increments)?;
            let kernel = MalliavinKernel::new(p, prefs, vc, &bundle);
            let (v, _xi) = kernel.z_integrand(t_idx, liab.k, x_tilde);
            let w = bundle.h[n] / h_t;
            acc.push(&[w * v[0], w * v[1]])?;
        }
        Ok(acc)
    });
    let acc = reduce(partials)?;
    Ok(ZReport {
        t: grid.time(t_idx),
        z: [acc.estimate(0), acc.estimate(1)],
        y0_clark: None,
        nested: true,
    })
}
