//! Market/preference parameters and the pointwise market formulas every other
//! module consumes.
//!
//! The market has a money-market account, one stock and one rolling zero-coupon
//! bond. The short rate `r` and the unobserved risk-premium factor are both
//! mean-reverting Gaussian; the stock's excess return is `beta * sigma_s` times
//! the risk-premium factor. Under the observation filtration all dynamics are
//! driven by a two-dimensional innovation Brownian motion and the market price
//! of risk becomes `eta(m)` with `m` the filtered premium mean.

use crate::error::CoreError;

/// Guard below which a mean-reversion speed is treated as zero and the
/// L'Hopital limit of `(1 - exp(-k*x))/k` is used instead.
const KAPPA_EPS: f64 = 1e-12;

/// Tolerance for the agreement between a directly supplied premium/rate
/// correlation and the one derived from `rho_0`.
const RHO_AGREE_TOL: f64 = 1e-12;

/// `(1 - exp(-kappa * dt)) / kappa`, continuous at `kappa = 0`.
pub fn ou_decay_integral(kappa: f64, dt: f64) -> f64 {
    if kappa.abs() < KAPPA_EPS {
        dt
    } else {
        -(-kappa * dt).exp_m1() / kappa
    }
}

/// `sqrt((1 - exp(-2*kappa*h)) / (2*kappa*h))`: scale that makes a flat
/// Gaussian increment reproduce the exact one-step variance of an OU process.
pub fn ou_noise_scale(kappa: f64, h: f64) -> f64 {
    let x = 2.0 * kappa * h;
    if x.abs() < KAPPA_EPS {
        1.0
    } else {
        (-(-x).exp_m1() / x).sqrt()
    }
}

/// All market and dynamics coefficients.
///
/// The `_rp` group describes the unobserved risk-premium factor; `rho_rp_r` is
/// its correlation with the short-rate noise, either given directly or derived
/// from `rho_0` as `(rho_0 - rho_rs * rho_rp_s) / sqrt(1 - rho_rs^2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketParams {
    /// Mean-reversion speed of the short rate (1/time).
    pub kappa_r: f64,
    /// Long-run mean of the short rate.
    pub mu_r: f64,
    /// Short-rate volatility. Negative values are accepted (they only flip a
    /// Brownian direction) but flagged by validation.
    pub sigma_r: f64,
    /// Correlation between short-rate noise and the stock's Brownian driver,
    /// strictly inside (-1, 1).
    pub rho_rs: f64,
    /// Mean-reversion speed of the risk premium (1/time).
    pub kappa_rp: f64,
    /// Long-run mean of the risk premium.
    pub mu_rp: f64,
    /// Risk-premium volatility (>= 0; 0 is the degenerate no-signal case).
    pub sigma_rp: f64,
    /// Correlation between the risk premium and the stock driver, in [-1, 1].
    pub rho_rp_s: f64,
    /// Scalar from which `rho_rp_r` may be derived; kept for validation.
    pub rho_0: Option<f64>,
    /// Resolved correlation between the risk premium and the rate driver.
    pub rho_rp_r: f64,
    /// Stock risk-premium loading (!= 0).
    pub beta: f64,
    /// Bond market price of risk.
    pub phi_b: f64,
    /// Stock volatility level (> 0).
    pub sigma_s: f64,
    /// Horizon `T` (> 0).
    pub horizon: f64,
    /// Initial short rate.
    pub r0: f64,
    /// Initial filter mean.
    pub m0: f64,
    /// Initial filter variance (>= 0).
    pub v0: f64,
}

impl MarketParams {
    /// `rho_rp_r` implied by a `rho_0` value.
    pub fn derive_rho_rp_r(rho_0: f64, rho_rs: f64, rho_rp_s: f64) -> f64 {
        (rho_0 - rho_rs * rho_rp_s) / (1.0 - rho_rs * rho_rs).sqrt()
    }

    /// Validates every invariant; returns non-fatal warnings (e.g. a negative
    /// short-rate volatility, which only flips a Brownian direction).
    pub fn validate(&self) -> Result<Vec<String>, CoreError> {
        let all = [
            ("kappa_r", self.kappa_r),
            ("mu_r", self.mu_r),
            ("sigma_r", self.sigma_r),
            ("rho_rS", self.rho_rs),
            ("kappa_R", self.kappa_rp),
            ("mu_R", self.mu_rp),
            ("sigma_R", self.sigma_rp),
            ("rho_RS", self.rho_rp_s),
            ("rho_Rr", self.rho_rp_r),
            ("beta", self.beta),
            ("phi_B", self.phi_b),
            ("sigma_S", self.sigma_s),
            ("T", self.horizon),
            ("r0", self.r0),
            ("m0", self.m0),
            ("v0", self.v0),
        ];
        for (name, v) in all {
            if !v.is_finite() {
                return Err(CoreError::InvalidParameter {
                    name: match name {
                        "kappa_r" => "kappa_r",
                        "mu_r" => "mu_r",
                        "sigma_r" => "sigma_r",
                        "rho_rS" => "rho_rS",
                        "kappa_R" => "kappa_R",
                        "mu_R" => "mu_R",
                        "sigma_R" => "sigma_R",
                        "rho_RS" => "rho_RS",
                        "rho_Rr" => "rho_Rr",
                        "beta" => "beta",
                        "phi_B" => "phi_B",
                        "sigma_S" => "sigma_S",
                        "T" => "T",
                        "r0" => "r0",
                        "m0" => "m0",
                        _ => "v0",
                    },
                    msg: format!("must be finite, got {v}"),
                });
            }
        }
        if self.beta == 0.0 {
            return Err(CoreError::invalid("beta", "must be nonzero"));
        }
        if self.sigma_s <= 0.0 {
            return Err(CoreError::invalid("sigma_S", format!("must be > 0, got {}", self.sigma_s)));
        }
        if self.horizon <= 0.0 {
            return Err(CoreError::invalid("T", format!("must be > 0, got {}", self.horizon)));
        }
        if self.v0 < 0.0 {
            return Err(CoreError::invalid("v0", format!("must be >= 0, got {}", self.v0)));
        }
        if self.rho_rs.abs() >= 1.0 {
            return Err(CoreError::invalid("rho_rS", format!("must lie in (-1, 1), got {}", self.rho_rs)));
        }
        if self.sigma_rp < 0.0 {
            return Err(CoreError::invalid("sigma_R", format!("must be >= 0, got {}", self.sigma_rp)));
        }
        if self.rho_rp_s.abs() > 1.0 {
            return Err(CoreError::invalid("rho_RS", format!("must lie in [-1, 1], got {}", self.rho_rp_s)));
        }
        let rho_sq = self.rho_rp_s * self.rho_rp_s + self.rho_rp_r * self.rho_rp_r;
        if rho_sq > 1.0 + 1e-12 {
            return Err(CoreError::invalid(
                "rho_Rr",
                format!("rho_RS^2 + rho_Rr^2 = {rho_sq} exceeds 1"),
            ));
        }
        if let Some(rho_0) = self.rho_0 {
            let derived = Self::derive_rho_rp_r(rho_0, self.rho_rs, self.rho_rp_s);
            if (derived - self.rho_rp_r).abs() > RHO_AGREE_TOL {
                return Err(CoreError::invalid(
                    "rho_Rr",
                    format!(
                        "disagrees with the value {derived} derived from rho_0 = {rho_0} by more than {RHO_AGREE_TOL:e}"
                    ),
                ));
            }
        }

        let mut warnings = Vec::new();
        if self.sigma_r < 0.0 {
            warnings.push(format!(
                "sigma_r = {} is negative; accepted (flips a Brownian direction only)",
                self.sigma_r
            ));
        }
        if self.sigma_r == 0.0 {
            warnings.push(
                "sigma_r = 0: bond volatility vanishes and the stock/bond split is undefined".into(),
            );
        }
        if self.sigma_rp == 0.0 {
            warnings.push("sigma_R = 0: degenerate signal, the filter variance stays at v0".into());
        }
        Ok(warnings)
    }

    /// Bond volatility `sigma_B(t) = sigma_r * (1 - exp(-kappa_r (T - t))) / kappa_r`.
    pub fn sigma_b(&self, t: f64) -> f64 {
        self.sigma_r * ou_decay_integral(self.kappa_r, self.horizon - t)
    }

    /// Bond excess return `mu_B(t) = phi_B * sigma_B(t)`.
    pub fn mu_b(&self, t: f64) -> f64 {
        self.phi_b * self.sigma_b(t)
    }

    /// Market price of risk given the filter mean `m`:
    /// `(beta m, (1 - rho_rS^2)^{-1/2} (-beta rho_rS m + phi_B))`.
    pub fn eta(&self, m: f64) -> [f64; 2] {
        let root = (1.0 - self.rho_rs * self.rho_rs).sqrt();
        [self.beta * m, (-self.beta * self.rho_rs * m + self.phi_b) / root]
    }

    /// `||eta(m)||^2`, computed from the vector itself.
    pub fn eta_norm_sq(&self, m: f64) -> f64 {
        let e = self.eta(m);
        e[0] * e[0] + e[1] * e[1]
    }

    /// Asset volatility matrix at `(t, r)` and its inverse. Errors when the
    /// bond volatility vanishes (always at `t = T`), where the stock/bond
    /// split is undefined.
    pub fn sigma_matrix(&self, t: f64, _r: f64) -> Result<AssetVol, CoreError> {
        let sb = self.sigma_b(t);
        if sb == 0.0 {
            return Err(CoreError::SingularSigma { t, sigma_b: sb });
        }
        let root = (1.0 - self.rho_rs * self.rho_rs).sqrt();
        let a = self.sigma_s;
        let b = sb * self.rho_rs;
        let c = sb * root;
        Ok(AssetVol {
            matrix: [[a, 0.0], [b, c]],
            inverse: [[1.0 / a, 0.0], [-b / (a * c), 1.0 / c]],
        })
    }
}

/// Lower-triangular asset volatility matrix and its inverse.
///
/// Row convention matches the wealth dynamics: row 1 is the stock, row 2 the
/// bond; `pi = (pi_S, pi_B) * matrix` maps asset amounts to exposure.
#[derive(Debug, Clone, Copy)]
pub struct AssetVol {
    pub matrix: [[f64; 2]; 2],
    pub inverse: [[f64; 2]; 2],
}

impl AssetVol {
    /// `(pi_S, pi_B) = pi^T * inverse` (row vector times matrix).
    pub fn split(&self, pi: [f64; 2]) -> (f64, f64) {
        (
            pi[0] * self.inverse[0][0] + pi[1] * self.inverse[1][0],
            pi[0] * self.inverse[0][1] + pi[1] * self.inverse[1][1],
        )
    }

    /// `(pi_S, pi_B) * matrix`, recombining asset amounts into exposure.
    pub fn recombine(&self, pi_s: f64, pi_b: f64) -> [f64; 2] {
        [
            pi_s * self.matrix[0][0] + pi_b * self.matrix[1][0],
            pi_s * self.matrix[0][1] + pi_b * self.matrix[1][1],
        ]
    }
}

/// `theta = (1 - gamma) / (1 - 1/psi)`. Rejects `psi = 1`.
pub fn derive_theta(gamma: f64, psi: f64) -> Result<f64, CoreError> {
    if psi == 1.0 {
        return Err(CoreError::invalid("psi", "psi = 1 is excluded (theta undefined)"));
    }
    Ok((1.0 - gamma) / (1.0 - 1.0 / psi))
}

/// Recursive-preference triple plus the derived aggregator curvature `theta`.
///
/// Only two configurations are admitted: `gamma > 1, psi > 1`, or the
/// time-additive CRRA boundary `gamma * psi = 1, gamma > 1` (where `theta = 1`
/// exactly).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preferences {
    pub delta: f64,
    pub gamma: f64,
    pub psi: f64,
    pub theta: f64,
}

impl Preferences {
    pub fn new(delta: f64, gamma: f64, psi: f64) -> Result<Self, CoreError> {
        if !(delta.is_finite() && gamma.is_finite() && psi.is_finite()) {
            return Err(CoreError::invalid("delta", "preferences must be finite"));
        }
        if delta <= 0.0 {
            return Err(CoreError::invalid("delta", format!("must be > 0, got {delta}")));
        }
        if gamma <= 0.0 || gamma == 1.0 {
            return Err(CoreError::invalid("gamma", format!("must be > 0 and != 1, got {gamma}")));
        }
        if psi <= 0.0 || psi == 1.0 {
            return Err(CoreError::invalid("psi", format!("must be > 0 and != 1, got {psi}")));
        }
        let crra_boundary = (gamma * psi - 1.0).abs() <= 1e-12;
        if !((gamma > 1.0 && psi > 1.0) || (crra_boundary && gamma > 1.0)) {
            return Err(CoreError::invalid(
                "gamma",
                format!("configuration (gamma = {gamma}, psi = {psi}) is outside gamma,psi > 1 or gamma*psi = 1, gamma > 1"),
            ));
        }
        let theta = if crra_boundary { 1.0 } else { derive_theta(gamma, psi)? };
        Ok(Preferences { delta, gamma, psi, theta })
    }

    /// `delta^psi`, the consumption-to-surplus ratio of the optimal plan.
    pub fn delta_pow_psi(&self) -> f64 {
        self.delta.powf(self.psi)
    }

    /// Deterministic part of the `alpha` coefficient:
    /// `delta^psi/(psi-1) - delta*theta/(1-gamma)`.
    pub fn alpha_const(&self) -> f64 {
        self.delta_pow_psi() / (self.psi - 1.0) - self.delta * self.theta / (1.0 - self.gamma)
    }

    /// Deterministic drift of `log phi`:
    /// `-delta^psi * psi/(psi-1) + delta*theta/(1-gamma)`.
    pub fn phi_drift_const(&self) -> f64 {
        -self.delta_pow_psi() * self.psi / (self.psi - 1.0) + self.delta * self.theta / (1.0 - self.gamma)
    }
}

/// Constant terminal liability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiabilitySpec {
    pub k: f64,
}

impl LiabilitySpec {
    pub fn new(k: f64) -> Result<Self, CoreError> {
        if !k.is_finite() || k < 0.0 {
            return Err(CoreError::invalid("K", format!("must be a finite value >= 0, got {k}")));
        }
        Ok(LiabilitySpec { k })
    }
}
