//! Welfare-loss metric and parameter sweeps.
//!
//! `L` is the fraction of initial wealth an investor who filters the risk
//! premium could forfeit and still match the value achieved by an investor who
//! freezes the premium estimate at its long-run mean:
//! `L = 1 - [ ((1-B)/(1-B0)) (x - A0) + A ] / x`, with the `0`-superscripts
//! the full-information twins estimated on common paths.

use crate::error::CoreError;
use crate::filter::VarianceCurve;
use crate::mc::{estimate_terms, Term, TermSet};
use crate::model::{LiabilitySpec, MarketParams, Preferences};
use crate::paths::Grid;

/// Default wealth grid of the loss sweeps: must exceed the liability present
/// value of the bundled configuration at `K = 500`.
pub const DEFAULT_X_GRID: [f64; 8] = [600.0, 800.0, 1000.0, 1200.0, 1400.0, 1600.0, 1800.0, 2000.0];
/// Default elasticity grid (all > 1 to satisfy the preference configuration).
pub const DEFAULT_PSI_GRID: [f64; 4] = [1.1, 1.5, 2.0, 3.0];
/// Default risk-aversion grid.
pub const DEFAULT_GAMMA_GRID: [f64; 4] = [2.0, 5.0, 8.0, 12.0];

/// One sweep result row. `error` records a per-row gate failure without
/// stopping the sweep.
#[derive(Debug, Clone)]
pub struct WelfareRow {
    pub x: f64,
    pub gamma: f64,
    pub psi: f64,
    pub k: f64,
    pub a: f64,
    pub b: f64,
    pub a0: f64,
    pub b0: f64,
    pub l: f64,
    pub l_se: f64,
    pub error: Option<String>,
}

/// `(L, SE(L))` for initial wealth `x` given a term set.
///
/// The standard error is a delta-method propagation through the full
/// covariance of `(A, B, A0, B0)` estimated on common paths.
pub fn welfare_loss(x: f64, terms: &TermSet) -> Result<(f64, f64), CoreError> {
    terms.certify_positivity()?;
    let (a, b, a0, b0) = (terms.a.mean, terms.b.mean, terms.a0.mean, terms.b0.mean);
    if !(x > a.max(a0)) {
        return Err(CoreError::HypothesisViolation { x, liability_value: a.max(a0) });
    }
    let ratio = (1.0 - b) / (1.0 - b0);
    let l = 1.0 - (ratio * (x - a0) + a) / x;

    // gradient of L in (A, B, A0, B0)
    let grad = [
        -1.0 / x,
        (x - a0) / ((1.0 - b0) * x),
        ratio / x,
        -ratio * (x - a0) / ((1.0 - b0) * x),
    ];
    let idx = [Term::A, Term::B, Term::A0, Term::B0];
    let mut var = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            var += grad[i] * grad[j] * terms.cov_of_means(idx[i], idx[j]);
        }
    }
    Ok((l, var.max(0.0).sqrt()))
}

/// Sweep axis of the loss study.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    /// Initial wealth only; one term set is reused across the whole grid.
    X,
    /// Risk aversion; re-simulates per grid value with common random numbers.
    Gamma,
    /// Elasticity of intertemporal substitution; re-simulates per grid value.
    Psi,
}

impl SweepAxis {
    pub fn parse(s: &str) -> Option<SweepAxis> {
        match s {
            "x" => Some(SweepAxis::X),
            "gamma" => Some(SweepAxis::Gamma),
            "psi" => Some(SweepAxis::Psi),
            _ => None,
        }
    }
}

/// Sweep layout: preference grid (ignored for the X axis) times wealth grid
/// times liability levels.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub x_grid: Vec<f64>,
    pub pref_grid: Vec<f64>,
    pub k_values: Vec<f64>,
}

impl SweepSpec {
    pub fn defaults(axis: SweepAxis, k: f64) -> SweepSpec {
        let pref_grid = match axis {
            SweepAxis::X => vec![f64::NAN], // single row group at base preferences
            SweepAxis::Gamma => DEFAULT_GAMMA_GRID.to_vec(),
            SweepAxis::Psi => DEFAULT_PSI_GRID.to_vec(),
        };
        SweepSpec { axis, x_grid: DEFAULT_X_GRID.to_vec(), pref_grid, k_values: vec![0.0, k] }
    }
}

/// Runs the sweep. Rows appear in (preference value, K, x) order. Estimation
/// failures for a whole preference value or a single row are recorded in the
/// affected rows' `error` field and the sweep continues.
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    p: &MarketParams,
    base_prefs: &Preferences,
    vc: &VarianceCurve,
    grid: Grid,
    n_paths: u64,
    seed: u64,
    spec: &SweepSpec,
) -> Vec<WelfareRow> {
    let mut rows = Vec::new();
    for &pref_value in &spec.pref_grid {
        let prefs = match spec.axis {
            SweepAxis::X => Ok(*base_prefs),
            SweepAxis::Gamma => Preferences::new(base_prefs.delta, pref_value, base_prefs.psi),
            SweepAxis::Psi => Preferences::new(base_prefs.delta, base_prefs.gamma, pref_value),
        };
        let prefs = match prefs {
            Ok(pr) => pr,
            Err(e) => {
                rows.extend(error_rows(spec, pref_value, base_prefs, &e));
                continue;
            }
        };
        // common random numbers: same seed for every grid value
        let base_terms = match estimate_terms(
            p,
            &prefs,
            &LiabilitySpec { k: 0.0 },
            vc,
            grid,
            n_paths,
            seed,
        ) {
            Ok(ts) => ts,
            Err(e) => {
                rows.extend(error_rows(spec, pref_value, &prefs, &e));
                continue;
            }
        };
        for &k in &spec.k_values {
            let terms = match base_terms.with_k(k) {
                Ok(ts) => ts,
                Err(e) => {
                    for &x in &spec.x_grid {
                        rows.push(row_with_error(x, &prefs, k, &e));
                    }
                    continue;
                }
            };
            for &x in &spec.x_grid {
                let mut row = WelfareRow {
                    x,
                    gamma: prefs.gamma,
                    psi: prefs.psi,
                    k,
                    a: terms.a.mean,
                    b: terms.b.mean,
                    a0: terms.a0.mean,
                    b0: terms.b0.mean,
                    l: f64::NAN,
                    l_se: f64::NAN,
                    error: None,
                };
                match welfare_loss(x, &terms) {
                    Ok((l, se)) => {
                        row.l = l;
                        row.l_se = se;
                    }
                    Err(e) => row.error = Some(e.to_string()),
                }
                rows.push(row);
            }
        }
    }
    rows
}

fn error_rows(
    spec: &SweepSpec,
    pref_value: f64,
    prefs: &Preferences,
    e: &CoreError,
) -> Vec<WelfareRow> {
    let (gamma, psi) = match spec.axis {
        SweepAxis::X => (prefs.gamma, prefs.psi),
        SweepAxis::Gamma => (pref_value, prefs.psi),
        SweepAxis::Psi => (prefs.gamma, pref_value),
    };
    let mut out = Vec::new();
    for &k in &spec.k_values {
        for &x in &spec.x_grid {
            out.push(WelfareRow {
                x,
                gamma,
                psi,
                k,
                a: f64::NAN,
                b: f64::NAN,
                a0: f64::NAN,
                b0: f64::NAN,
                l: f64::NAN,
                l_se: f64::NAN,
                error: Some(e.to_string()),
            });
        }
    }
    out
}

fn row_with_error(x: f64, prefs: &Preferences, k: f64, e: &CoreError) -> WelfareRow {
    WelfareRow {
        x,
        gamma: prefs.gamma,
        psi: prefs.psi,
        k,
        a: f64::NAN,
        b: f64::NAN,
        a0: f64::NAN,
        b0: f64::NAN,
        l: f64::NAN,
        l_se: f64::NAN,
        error: Some(e.to_string()),
    }
}
