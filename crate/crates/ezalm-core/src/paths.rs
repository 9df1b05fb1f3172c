//! Seeded simulation of the observable system on a uniform grid.
//!
//! One walker produces, per grid point, the short rate `r`, the filter mean
//! `m`, the accumulators `int r ds`, `int ||eta||^2 ds`, `int eta' dI`,
//! `log phi`, and the full-information twins built from the same Brownian
//! increments with `m` replaced by its long-run mean. Time integrals use the
//! trapezoid rule, stochastic integrals left-point Ito sums. Both mean
//! reversions step with their exact decay factor and a variance-exact noise
//! scale, so the dominant OU dynamics carry no discretisation bias; the filter
//! gain is frozen per step at the closed-form midpoint variance.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::CoreError;
use crate::filter::VarianceCurve;
use crate::mc::{par_batched, reduce, MCEstimate, VectorAccumulator};
use crate::model::{MarketParams, Preferences};

/// Uniform time grid on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub n_steps: usize,
    pub horizon: f64,
}

impl Grid {
    pub fn new(n_steps: usize, horizon: f64) -> Result<Self, CoreError> {
        if n_steps == 0 {
            return Err(CoreError::invalid("n_steps", "must be >= 1"));
        }
        if !(horizon > 0.0) {
            return Err(CoreError::invalid("T", format!("must be > 0, got {horizon}")));
        }
        Ok(Grid { n_steps, horizon })
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    /// `t_k`, with the last node pinned to the horizon exactly.
    pub fn time(&self, k: usize) -> f64 {
        if k >= self.n_steps {
            self.horizon
        } else {
            k as f64 * self.dt()
        }
    }

    pub fn n_points(&self) -> usize {
        self.n_steps + 1
    }
}

/// Identifies one reproducible random stream: the same `(seed, stream)` pair
/// always yields the same path, independent of thread count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngSpec {
    pub seed: u64,
    pub stream: u64,
}

impl RngSpec {
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }

    /// Seed for a nested sub-simulation hanging off this outer path at one
    /// grid index. Distinct from every outer stream by construction.
    pub fn sub_seed(&self, t_idx: usize) -> u64 {
        let tag = self.stream.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (((t_idx as u64) << 1) | 1);
        splitmix64(self.seed ^ splitmix64(tag))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-grid coefficient tables shared by every path of a run.
#[derive(Debug, Clone)]
pub struct PathCoeffs {
    pub grid: Grid,
    pub market: MarketParams,
    pub prefs: Preferences,
    /// `exp(-kappa_r dt)` and `exp(-kappa_R dt)`.
    decay_r: f64,
    decay_m: f64,
    /// Noise loading of the rate step on `(dI1, dI2)`, variance-exact.
    rate_noise: [f64; 2],
    /// Filter gain at the step midpoint times the variance-exact scale,
    /// indexed by step.
    pub gain: Vec<[f64; 2]>,
    /// Constant part of the `alpha` coefficient.
    c_alpha: f64,
    /// Deterministic drift of `log phi`.
    c_phi: f64,
    inv_two_gamma: f64,
    phi_eta_sq_weight: f64,
    inv_gamma: f64,
    /// eta components as affine functions of m: `eta1 = beta m`,
    /// `eta2 = eta2_0 + eta2_m * m`.
    beta: f64,
    eta2_0: f64,
    eta2_m: f64,
    /// Full-information market price of risk (m frozen at mu_R).
    pub eta0: [f64; 2],
    eta0_sq: f64,
    sqrt_dt: f64,
}

impl PathCoeffs {
    pub fn new(p: &MarketParams, prefs: &Preferences, vc: &VarianceCurve, grid: Grid) -> Self {
        let dt = grid.dt();
        let root = (1.0 - p.rho_rs * p.rho_rs).sqrt();
        let rate_scale = p.sigma_r * crate::model::ou_noise_scale(p.kappa_r, dt);
        let gain_scale = crate::model::ou_noise_scale(p.kappa_rp, dt);
        let gain = (0..grid.n_steps)
            .map(|k| {
                let g = vc.filter_gain(grid.time(k) + 0.5 * dt);
                [g[0] * gain_scale, g[1] * gain_scale]
            })
            .collect();
        let gamma = prefs.gamma;
        let eta0 = p.eta(p.mu_rp);
        PathCoeffs {
            grid,
            market: p.clone(),
            prefs: *prefs,
            decay_r: (-p.kappa_r * dt).exp(),
            decay_m: (-p.kappa_rp * dt).exp(),
            rate_noise: [rate_scale * p.rho_rs, rate_scale * root],
            gain,
            c_alpha: prefs.alpha_const(),
            c_phi: prefs.phi_drift_const(),
            inv_two_gamma: 0.5 / gamma,
            phi_eta_sq_weight: (gamma - 1.0) / (2.0 * gamma * gamma),
            inv_gamma: 1.0 / gamma,
            beta: p.beta,
            eta2_0: p.phi_b / root,
            eta2_m: -p.beta * p.rho_rs / root,
            eta0,
            eta0_sq: eta0[0] * eta0[0] + eta0[1] * eta0[1],
            sqrt_dt: dt.sqrt(),
        }
    }

    #[inline]
    pub fn eta_of_m(&self, m: f64) -> [f64; 2] {
        [self.beta * m, self.eta2_0 + self.eta2_m * m]
    }

    /// Initial state of a fresh path.
    pub fn initial_state(&self) -> PathState {
        PathState {
            k: 0,
            r: self.market.r0,
            m: self.market.m0,
            int_r: 0.0,
            int_eta_sq: 0.0,
            int_eta_di: 0.0,
            log_phi: 0.0,
            int_eta0_sq: 0.0,
            int_eta0_di: 0.0,
            log_phi0: 0.0,
        }
    }

    fn draw_increment<R: Rng>(&self, rng: &mut R) -> [f64; 2] {
        let z1: f64 = StandardNormal.sample(rng);
        let z2: f64 = StandardNormal.sample(rng);
        [z1 * self.sqrt_dt, z2 * self.sqrt_dt]
    }

    pub fn draw_increments<R: Rng>(&self, rng: &mut R, count: usize) -> Vec<[f64; 2]> {
        (0..count).map(|_| self.draw_increment(rng)).collect()
    }
}

/// Running state of one path at grid index `k`.
#[derive(Debug, Clone, Copy)]
pub struct PathState {
    pub k: usize,
    pub r: f64,
    pub m: f64,
    pub int_r: f64,
    pub int_eta_sq: f64,
    pub int_eta_di: f64,
    pub log_phi: f64,
    pub int_eta0_sq: f64,
    pub int_eta0_di: f64,
    pub log_phi0: f64,
}

impl PathState {
    #[inline]
    pub fn log_h(&self) -> f64 {
        -0.5 * self.int_eta_sq - self.int_eta_di
    }

    #[inline]
    pub fn log_h0(&self) -> f64 {
        -0.5 * self.int_eta0_sq - self.int_eta0_di
    }

    pub fn h(&self) -> f64 {
        self.log_h().exp()
    }

    pub fn phi(&self) -> f64 {
        self.log_phi.exp()
    }

    pub fn h0(&self) -> f64 {
        self.log_h0().exp()
    }

    pub fn phi0(&self) -> f64 {
        self.log_phi0.exp()
    }

    /// `alpha = exp(-int r) (c_alpha + r + ||eta||^2 / (2 gamma))`.
    pub fn alpha(&self, co: &PathCoeffs) -> f64 {
        let eta = co.eta_of_m(self.m);
        let esq = eta[0] * eta[0] + eta[1] * eta[1];
        (-self.int_r).exp() * (co.c_alpha + self.r + co.inv_two_gamma * esq)
    }

    pub fn alpha0(&self, co: &PathCoeffs) -> f64 {
        (-self.int_r).exp() * (co.c_alpha + self.r + co.inv_two_gamma * co.eta0_sq)
    }

    /// Integrand `H alpha phi` evaluated in one `exp`.
    #[inline]
    pub fn h_alpha_phi(&self, co: &PathCoeffs) -> f64 {
        let eta = co.eta_of_m(self.m);
        let esq = eta[0] * eta[0] + eta[1] * eta[1];
        (self.log_h() + self.log_phi - self.int_r).exp()
            * (co.c_alpha + self.r + co.inv_two_gamma * esq)
    }

    #[inline]
    pub fn h0_alpha0_phi0(&self, co: &PathCoeffs) -> f64 {
        (self.log_h0() + self.log_phi0 - self.int_r).exp()
            * (co.c_alpha + self.r + co.inv_two_gamma * co.eta0_sq)
    }

    #[inline]
    fn advance(&mut self, co: &PathCoeffs, inc: [f64; 2]) {
        let dt = co.grid.dt();
        let half = 0.5 * dt;
        let m = &co.market;

        let eta = co.eta_of_m(self.m);
        let esq = eta[0] * eta[0] + eta[1] * eta[1];
        let di = eta[0] * inc[0] + eta[1] * inc[1];
        let di0 = co.eta0[0] * inc[0] + co.eta0[1] * inc[1];
        let r_prev = self.r;

        self.int_eta_di += di;
        self.int_eta0_di += di0;

        self.r = m.mu_r
            + (self.r - m.mu_r) * co.decay_r
            + co.rate_noise[0] * inc[0]
            + co.rate_noise[1] * inc[1];
        let g = co.gain[self.k];
        self.m = m.mu_rp + (self.m - m.mu_rp) * co.decay_m + g[0] * inc[0] + g[1] * inc[1];

        let eta_next = co.eta_of_m(self.m);
        let esq_next = eta_next[0] * eta_next[0] + eta_next[1] * eta_next[1];

        self.int_r += half * (r_prev + self.r);
        self.int_eta_sq += half * (esq + esq_next);
        self.int_eta0_sq += dt * co.eta0_sq;
        self.log_phi += dt * co.c_phi
            + half * co.phi_eta_sq_weight * (esq + esq_next)
            + co.inv_gamma * di;
        self.log_phi0 += dt * (co.c_phi + co.phi_eta_sq_weight * co.eta0_sq) + co.inv_gamma * di0;
        self.k += 1;
    }

    #[inline]
    fn is_finite(&self) -> bool {
        (self.r + self.m + self.int_r + self.int_eta_sq + self.int_eta_di + self.log_phi
            + self.int_eta0_sq
            + self.int_eta0_di
            + self.log_phi0)
            .is_finite()
    }
}

/// Walks a path from `state`, drawing increments from `rng`, visiting every
/// grid point including the initial one. Returns the terminal state or the
/// step index at which an accumulator became non-finite.
pub fn walk<R: Rng>(
    co: &PathCoeffs,
    state: PathState,
    rng: &mut R,
    mut visit: impl FnMut(&PathState),
) -> Result<PathState, usize> {
    let mut s = state;
    visit(&s);
    while s.k < co.grid.n_steps {
        let inc = co.draw_increment(rng);
        s.advance(co, inc);
        if !s.is_finite() {
            return Err(s.k);
        }
        visit(&s);
    }
    Ok(s)
}

/// Same as [`walk`] but driven by explicit increments (used by bump tests and
/// grid-refinement couplings).
pub fn walk_increments(
    co: &PathCoeffs,
    state: PathState,
    increments: &[[f64; 2]],
    mut visit: impl FnMut(&PathState),
) -> Result<PathState, usize> {
    let mut s = state;
    visit(&s);
    for &inc in increments {
        if s.k >= co.grid.n_steps {
            break;
        }
        s.advance(co, inc);
        if !s.is_finite() {
            return Err(s.k);
        }
        visit(&s);
    }
    Ok(s)
}

/// One stored trajectory of the observable system with its full-information
/// twin, plus the increments that produced it.
#[derive(Debug, Clone)]
pub struct PathBundle {
    pub grid: Grid,
    pub increments: Vec<[f64; 2]>,
    pub r: Vec<f64>,
    pub m: Vec<f64>,
    pub eta: Vec<[f64; 2]>,
    pub int_r: Vec<f64>,
    pub int_eta_sq: Vec<f64>,
    pub int_eta_di: Vec<f64>,
    pub h: Vec<f64>,
    pub alpha: Vec<f64>,
    pub phi: Vec<f64>,
    pub log_phi: Vec<f64>,
    pub h0: Vec<f64>,
    pub alpha0: Vec<f64>,
    pub phi0: Vec<f64>,
}

impl PathBundle {
    fn collect(
        co: &PathCoeffs,
        increments: Vec<[f64; 2]>,
        stream: u64,
    ) -> Result<PathBundle, CoreError> {
        let n = co.grid.n_points();
        let mut b = PathBundle {
            grid: co.grid,
            increments: Vec::new(),
            r: Vec::with_capacity(n),
            m: Vec::with_capacity(n),
            eta: Vec::with_capacity(n),
            int_r: Vec::with_capacity(n),
            int_eta_sq: Vec::with_capacity(n),
            int_eta_di: Vec::with_capacity(n),
            h: Vec::with_capacity(n),
            alpha: Vec::with_capacity(n),
            phi: Vec::with_capacity(n),
            log_phi: Vec::with_capacity(n),
            h0: Vec::with_capacity(n),
            alpha0: Vec::with_capacity(n),
            phi0: Vec::with_capacity(n),
        };
        let res = walk_increments(co, co.initial_state(), &increments, |s| {
            b.r.push(s.r);
            b.m.push(s.m);
            b.eta.push(co.eta_of_m(s.m));
            b.int_r.push(s.int_r);
            b.int_eta_sq.push(s.int_eta_sq);
            b.int_eta_di.push(s.int_eta_di);
            b.h.push(s.h());
            b.alpha.push(s.alpha(co));
            b.phi.push(s.phi());
            b.log_phi.push(s.log_phi);
            b.h0.push(s.h0());
            b.alpha0.push(s.alpha0(co));
            b.phi0.push(s.phi0());
        });
        if let Err(step) = res {
            return Err(CoreError::SimulationNan { what: "path state", path: stream, step });
        }
        b.increments = increments;
        Ok(b)
    }

    /// Reconstructs the walker state at grid index `k` (for nested
    /// continuation estimators).
    pub fn state_at(&self, k: usize) -> PathState {
        PathState {
            k,
            r: self.r[k],
            m: self.m[k],
            int_r: self.int_r[k],
            int_eta_sq: self.int_eta_sq[k],
            int_eta_di: self.int_eta_di[k],
            log_phi: self.log_phi[k],
            // twins are not needed beyond k = 0 by the nested estimators
            int_eta0_sq: 0.0,
            int_eta0_di: 0.0,
            log_phi0: 0.0,
        }
    }
}

/// Simulates one path of the observable system.
pub fn simulate_observable(
    p: &MarketParams,
    prefs: &Preferences,
    vc: &VarianceCurve,
    grid: Grid,
    rng_spec: RngSpec,
) -> Result<PathBundle, CoreError> {
    let co = PathCoeffs::new(p, prefs, vc, grid);
    simulate_observable_from(&co, rng_spec)
}

/// Same, reusing a prepared coefficient table.
pub fn simulate_observable_from(co: &PathCoeffs, rng_spec: RngSpec) -> Result<PathBundle, CoreError> {
    let mut rng = rng_spec.rng();
    let increments: Vec<[f64; 2]> = (0..co.grid.n_steps).map(|_| co.draw_increment(&mut rng)).collect();
    PathBundle::collect(co, increments, rng_spec.stream)
}

/// Simulates one path from explicit increments (deterministic replay).
pub fn simulate_observable_with_increments(
    p: &MarketParams,
    prefs: &Preferences,
    vc: &VarianceCurve,
    grid: Grid,
    increments: Vec<[f64; 2]>,
) -> Result<PathBundle, CoreError> {
    let co = PathCoeffs::new(p, prefs, vc, grid);
    PathBundle::collect(&co, increments, u64::MAX)
}

/// Filter-consistency statistics at one checkpoint.
#[derive(Debug, Clone, Copy)]
pub struct CheckpointStat {
    pub t: f64,
    /// Sample mean of `R_t - m_t` and its standard error.
    pub mean_err: f64,
    pub mean_se: f64,
    /// Sample variance of `R_t - m_t` and the closed-form `v(t)`.
    pub var_err: f64,
    pub v_closed: f64,
}

/// Output of the ground-truth simulation: the filter run on innovation
/// increments constructed from simulated `(R, W1, W2)`.
#[derive(Debug, Clone)]
pub struct FilterConsistency {
    pub checkpoints: Vec<CheckpointStat>,
    /// Mean and SE of `dI1 dI2 / dt` pooled over all steps and paths; zero for
    /// a standard 2-d Brownian innovation.
    pub innov_cross_mean: f64,
    pub innov_cross_se: f64,
}

/// Simulates the true triple under the original measure, constructs innovation
/// increments, runs the filter on them and compares `R - m` moments with the
/// closed-form variance at the requested checkpoint times (grid-aligned).
pub fn simulate_truth_and_filter(
    p: &MarketParams,
    vc: &VarianceCurve,
    grid: Grid,
    seed: u64,
    n_paths: u64,
    checkpoint_times: &[f64],
) -> Result<FilterConsistency, CoreError> {
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let decay_m = (-p.kappa_rp * dt).exp();
    let scale_rp = crate::model::ou_noise_scale(p.kappa_rp, dt);
    let root = (1.0 - p.rho_rs * p.rho_rs).sqrt();
    let cross = p.rho_rs / root * p.beta;
    let rho3 = (1.0 - p.rho_rp_s * p.rho_rp_s - p.rho_rp_r * p.rho_rp_r).max(0.0).sqrt();
    let gain: Vec<[f64; 2]> = (0..grid.n_steps)
        .map(|k| {
            let g = vc.filter_gain(grid.time(k) + 0.5 * dt);
            [g[0] * scale_rp, g[1] * scale_rp]
        })
        .collect();
    let ck_idx: Vec<usize> = checkpoint_times
        .iter()
        .map(|&t| ((t / dt).round() as usize).min(grid.n_steps))
        .collect();
    // per path: err at each checkpoint, err^2 at each checkpoint, then the
    // pooled cross-product of innovation increments
    let dim = 2 * ck_idx.len() + 1;

    let partials = par_batched(n_paths, 4096, |start, len| {
        let mut acc = VectorAccumulator::new(dim);
        let mut row = vec![0.0; dim];
        for i in 0..len {
            let mut rng = RngSpec { seed, stream: start + i }.rng();
            let gauss = |s: &mut ChaCha8Rng| -> f64 {
                let z: f64 = StandardNormal.sample(s);
                z * sqrt_dt
            };
            // v0 > 0 draws the initial signal around m0
            let mut x = p.m0
                + if p.v0 > 0.0 {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * p.v0.sqrt()
                } else {
                    0.0
                };
            let mut m = p.m0;
            let mut cross_sum = 0.0;
            for (slot, &ci) in ck_idx.iter().enumerate() {
                if ci == 0 {
                    row[2 * slot] = x - m;
                    row[2 * slot + 1] = (x - m) * (x - m);
                }
            }
            #[allow(clippy::needless_range_loop)] // k also drives checkpoints
            for k in 0..grid.n_steps {
                let dw1 = gauss(&mut rng);
                let dw2 = gauss(&mut rng);
                let dw3 = gauss(&mut rng);
                let err = x - m;
                let di1 = dw1 + p.beta * err * dt;
                let di2 = dw2 - cross * err * dt;
                cross_sum += di1 * di2;
                x = p.mu_rp
                    + (x - p.mu_rp) * decay_m
                    + p.sigma_rp * scale_rp * (p.rho_rp_s * dw1 + p.rho_rp_r * dw2 + rho3 * dw3);
                m = p.mu_rp + (m - p.mu_rp) * decay_m + gain[k][0] * di1 + gain[k][1] * di2;
                for (slot, &ci) in ck_idx.iter().enumerate() {
                    if ci == k + 1 {
                        row[2 * slot] = x - m;
                        row[2 * slot + 1] = (x - m) * (x - m);
                    }
                }
            }
            row[dim - 1] = cross_sum / (grid.n_steps as f64 * dt);
            acc.push(&row)?;
        }
        Ok(acc)
    });
    let acc = reduce(partials)?;
    let checkpoints = ck_idx
        .iter()
        .enumerate()
        .map(|(slot, &ci)| {
            let mean = acc.estimate(2 * slot);
            let mean_sq = acc.mean(2 * slot + 1);
            CheckpointStat {
                t: grid.time(ci),
                mean_err: mean.mean,
                mean_se: mean.std_error,
                var_err: mean_sq - mean.mean * mean.mean,
                v_closed: vc.value(grid.time(ci)),
            }
        })
        .collect();
    let cross = acc.estimate(dim - 1);
    Ok(FilterConsistency {
        checkpoints,
        innov_cross_mean: cross.mean,
        innov_cross_se: cross.std_error,
    })
}

/// Convenience: `E[H_T]` with standard error over `n_paths` paths, the
/// martingale quality gate.
pub fn expected_terminal_h(
    co: &PathCoeffs,
    seed: u64,
    n_paths: u64,
) -> Result<MCEstimate, CoreError> {
    let partials = par_batched(n_paths, 4096, |start, len| {
        let mut acc = VectorAccumulator::new(1);
        for i in 0..len {
            let mut rng = RngSpec { seed, stream: start + i }.rng();
            let end = walk(co, co.initial_state(), &mut rng, |_| {})
                .map_err(|step| CoreError::SimulationNan { what: "H", path: start + i, step })?;
            acc.push(&[end.h()])?;
        }
        Ok(acc)
    });
    Ok(reduce(partials)?.estimate(0))
}
