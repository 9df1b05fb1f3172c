//! Acceptance suite: one test per release criterion, each printing a PASS line
//! with its runtime (run with `--nocapture` to see them).

mod common;

use common::{load_config, rk4, Timer};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ezalm_core::config::RunConfig;
use ezalm_core::control::{consumption, x_tilde, y_zero};
use ezalm_core::filter::{comparison_bounds, g2_zero, MomentBound, VarianceCurve};
use ezalm_core::malliavin::{z_clark_ocone, MalliavinKernel};
use ezalm_core::mc::estimate_terms;
use ezalm_core::model::{LiabilitySpec, MarketParams};
use ezalm_core::paths::{
    expected_terminal_h, simulate_observable_from, simulate_truth_and_filter, Grid, PathCoeffs,
    RngSpec,
};
use ezalm_core::welfare::{sweep, welfare_loss, SweepAxis, SweepSpec, WelfareRow};

fn paper() -> RunConfig {
    load_config("paper.cfg")
}

#[test]
fn criterion_01_riccati_closed_form_vs_rk4() {
    let timer = Timer::start("acceptance 01 (Riccati closed form vs RK4)");
    let cfg = paper();
    let vc = VarianceCurve::new(&cfg.market).unwrap();
    let co = vc.coeffs;
    let mut max_err: f64 = 0.0;
    rk4(
        |_, v| co.a * v * v + co.b * v + co.c,
        0.0,
        cfg.market.v0,
        1e-4,
        10_000,
        |t, v| {
            max_err = max_err.max((vc.value(t) - v).abs());
        },
    );
    assert!(max_err < 1e-8, "max |closed - rk4| = {max_err:e}");
    timer.finish(1.0);
}

/// Draws a valid parameter set inside the domain of the discriminant variance
/// bound (`b <= 0`, `v0 = 0`); for `b > 0` only the sharp steady-state bound
/// holds, which the property tests cover separately.
fn sample_bound_domain(rng: &mut ChaCha8Rng) -> MarketParams {
    let mut base = paper().market;
    base.v0 = 0.0;
    loop {
        base.kappa_rp = rng.random_range(0.1..3.0);
        base.sigma_rp = rng.random_range(0.01..0.5);
        let mag: f64 = rng.random_range(0.5..6.0);
        base.beta = if rng.random_bool(0.5) { mag } else { -mag };
        base.rho_rs = rng.random_range(-0.9..0.9);
        let ang = rng.random_range(0.0..std::f64::consts::TAU);
        let rad = rng.random_range(0.0..1.0f64).sqrt();
        base.rho_rp_s = rad * ang.cos();
        base.rho_rp_r = rad * ang.sin();
        base.validate().unwrap();
        let omr = 1.0 - base.rho_rs * base.rho_rs;
        let b = -2.0 * base.kappa_rp - 2.0 * base.beta * base.sigma_rp * base.rho_rp_s
            + 2.0 * base.sigma_rp * base.rho_rp_r * base.beta * base.rho_rs / omr.sqrt();
        if b <= 0.0 {
            return base.clone();
        }
    }
}

#[test]
fn criterion_02_variance_bounds_random_parameters() {
    let timer = Timer::start("acceptance 02 (variance bounds, 100 random parameter sets)");
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_811);
    for _ in 0..100 {
        let p = sample_bound_domain(&mut rng);
        let vc = VarianceCurve::new(&p).unwrap();
        let hi = vc.upper_bound_disc();
        for i in 0..=10_000 {
            let t = p.horizon * i as f64 / 10_000.0;
            let v = vc.value(t);
            assert!(
                (-1e-15..=hi * (1.0 + 1e-12) + 1e-18).contains(&v),
                "v({t}) = {v} outside [0, {hi}] for {p:?}"
            );
        }
    }
    timer.finish(5.0);
}

#[test]
fn criterion_03_comparison_sandwich_and_balanced_branch() {
    let timer = Timer::start("acceptance 03 (comparison sandwich + balanced branch)");
    let cfg = paper();
    let vc = VarianceCurve::new(&cfg.market).unwrap();
    let horizon = cfg.market.horizon;
    let kappa = cfg.market.kappa_rp;
    // one zeta with delta_max < 0 and one with delta_max > 0, T < T_c
    for zeta in [5.0, 44.5] {
        let mb = MomentBound::new(&vc, zeta).unwrap();
        assert!(mb.delta_max <= 0.0 || horizon < mb.t_critical, "pick a finite-bound zeta");
        let n = 4_000;
        let h = horizon / n as f64;
        rk4(
            |t, g| -2.0 * vc.sigma_m_sq(t) * g * g + 2.0 * kappa * g - zeta,
            horizon,
            0.0,
            -h,
            n,
            |t, g1| {
                let (g3, g2) = comparison_bounds(&vc, zeta, t).unwrap();
                assert!(
                    g3 - 1e-8 <= g1 && g1 <= g2 + 1e-8,
                    "zeta={zeta}, t={t}: {g3} <= {g1} <= {g2} fails"
                );
            },
        );
    }
    // balanced-discriminant branch of the reported g2(0)
    let b_max = vc.sigma_m_sq_max();
    let zeta_star = kappa * kappa / (2.0 * b_max);
    let got = g2_zero(&vc, zeta_star).unwrap();
    let expect = zeta_star * horizon / (2.0 * (1.0 + kappa * horizon));
    assert_eq!(got, expect, "balanced branch must match the printed formula exactly");
    timer.finish(10.0);
}

#[test]
fn criterion_04_filter_consistency() {
    let timer = Timer::start("acceptance 04 (filter consistency, 1e5 truth paths)");
    let cfg = paper();
    let vc = VarianceCurve::new(&cfg.market).unwrap();
    let grid = Grid::new(1000, cfg.market.horizon).unwrap();
    let out =
        simulate_truth_and_filter(&cfg.market, &vc, grid, cfg.seed, 100_000, &[0.25, 0.5, 1.0])
            .unwrap();
    for ck in &out.checkpoints {
        assert!(
            ck.mean_err.abs() <= 3.0 * ck.mean_se,
            "t={}: |mean(R - m)| = {} > 3 SE = {}",
            ck.t,
            ck.mean_err.abs(),
            3.0 * ck.mean_se
        );
        let rel = (ck.var_err - ck.v_closed).abs() / ck.v_closed;
        assert!(
            rel <= 0.05,
            "t={}: sample var {} vs closed form {} ({}% off)",
            ck.t,
            ck.var_err,
            ck.v_closed,
            rel * 100.0
        );
    }
    timer.finish(60.0);
}

#[test]
fn criterion_05_martingale_gate() {
    let timer = Timer::start("acceptance 05 (E[H_T] martingale gate)");
    let cfg = paper();
    let vc = VarianceCurve::new(&cfg.market).unwrap();
    let grid = Grid::new(cfg.n_steps, cfg.market.horizon).unwrap();
    let co = PathCoeffs::new(&cfg.market, &cfg.prefs, &vc, grid);
    let eht = expected_terminal_h(&co, cfg.seed, 100_000).unwrap();
    assert!(
        (eht.mean - 1.0).abs() <= 3.0 * eht.std_error,
        "E[H_T] = {} +- {}",
        eht.mean,
        eht.std_error
    );
    timer.finish(30.0);
}

/// Closed forms for the constant-coefficient configurations: `B`, and with
/// `K = 0`, `Y0 = x_tilde B` and `Z0 = eta/gamma * x_tilde B`.
struct ConstCoeffOracle {
    b: f64,
    /// Rigorous trapezoid-error bound for the deterministic `B` integrand.
    b_quadrature_bound: f64,
    x_tilde: f64,
    y0: f64,
    z0: [f64; 2],
}

fn const_coeff_oracle(cfg: &RunConfig, n_steps: usize) -> ConstCoeffOracle {
    let p = &cfg.market;
    let pr = &cfg.prefs;
    assert_eq!(p.sigma_r, 0.0);
    assert_eq!(p.sigma_rp, 0.0);
    assert_eq!(p.r0, p.mu_r);
    assert_eq!(p.m0, p.mu_rp);
    assert_eq!(cfg.liability.k, 0.0);
    let eta = p.eta(p.mu_rp);
    let e2 = eta[0] * eta[0] + eta[1] * eta[1];
    let gamma = pr.gamma;
    let r = p.mu_r;
    let a_bar = pr.alpha_const() + r + e2 / (2.0 * gamma);
    let c_bar = pr.phi_drift_const() + (gamma - 1.0) * e2 / (2.0 * gamma * gamma);
    let lambda = 1.0 / gamma - 1.0;
    // E[H_s phi_s] = exp((c_bar - e2/2 + lambda^2 e2 / 2) s)
    let q = c_bar - r + 0.5 * (lambda * lambda - 1.0) * e2;
    let t = p.horizon;
    let b = if q.abs() < 1e-14 { a_bar * t } else { a_bar * ((q * t).exp() - 1.0) / q };
    let h = t / n_steps as f64;
    let b_quadrature_bound = t * h * h / 12.0 * (a_bar * q * q).abs() * (q.max(0.0) * t).exp();
    let x_tilde = cfg.x0 / (1.0 - b);
    let y0 = x_tilde * b;
    ConstCoeffOracle {
        b,
        b_quadrature_bound,
        x_tilde,
        y0,
        z0: [eta[0] / gamma * x_tilde * b, eta[1] / gamma * x_tilde * b],
    }
}

#[test]
fn criterion_06_constant_coefficient_oracles() {
    let timer = Timer::start("acceptance 06 (constant-coefficient closed-form oracles)");
    for name in ["degenerate.cfg", "constant_eta.cfg"] {
        let cfg = load_config(name);
        let oracle = const_coeff_oracle(&cfg, cfg.n_steps);
        let vc = VarianceCurve::new(&cfg.market).unwrap();
        let grid = Grid::new(cfg.n_steps, cfg.market.horizon).unwrap();
        let ts = estimate_terms(
            &cfg.market,
            &cfg.prefs,
            &cfg.liability,
            &vc,
            grid,
            100_000,
            cfg.seed,
        )
        .unwrap();
        let tol_b = 3.0 * ts.b.std_error + oracle.b_quadrature_bound;
        assert!(
            (ts.b.mean - oracle.b).abs() <= tol_b,
            "{name}: B = {} vs {} (tol {tol_b:e})",
            ts.b.mean,
            oracle.b
        );
        let rep = z_clark_ocone(
            &cfg.market,
            &cfg.prefs,
            &cfg.liability,
            &vc,
            grid,
            oracle.x_tilde,
            0,
            100_000,
            cfg.seed,
        )
        .unwrap();
        let y0 = rep.y0_clark.unwrap();
        let tol_y = 3.0 * y0.std_error + oracle.x_tilde.abs() * oracle.b_quadrature_bound;
        assert!(
            (y0.mean - oracle.y0).abs() <= tol_y,
            "{name}: Y0 = {} vs {} (tol {tol_y:e})",
            y0.mean,
            oracle.y0
        );
        for i in 0..2 {
            let tol_z = 3.0 * rep.z[i].std_error
                + oracle.x_tilde.abs() * oracle.b_quadrature_bound;
            assert!(
                (rep.z[i].mean - oracle.z0[i]).abs() <= tol_z,
                "{name}: Z0[{i}] = {} vs {} (tol {tol_z:e})",
                rep.z[i].mean,
                oracle.z0[i]
            );
        }
    }
    timer.finish(120.0);
}

#[test]
fn criterion_07_budget_identity_and_pathwise_positivity() {
    let timer = Timer::start("acceptance 07 (budget identity + pathwise positivity)");
    let cfg = paper();
    let vc = VarianceCurve::new(&cfg.market).unwrap();
    let grid = Grid::new(cfg.n_steps, cfg.market.horizon).unwrap();
    let ts = estimate_terms(
        &cfg.market,
        &cfg.prefs,
        &cfg.liability,
        &vc,
        grid,
        100_000,
        cfg.seed,
    )
    .unwrap();
    let xt = x_tilde(cfg.x0, &ts).unwrap();
    let back = xt.value * (1.0 - ts.b.mean) + ts.a.mean;
    assert!(
        (back - cfg.x0).abs() <= 1e-12 * cfg.x0.max(1.0),
        "budget identity residual {}",
        back - cfg.x0
    );
    // X*_0 = x_tilde - Y_0 recovers the endowment
    let y0 = y_zero(&ts, xt.value);
    assert!((xt.value - y0 - cfg.x0).abs() <= 1e-9 * cfg.x0);

    let co = PathCoeffs::new(&cfg.market, &cfg.prefs, &vc, grid);
    let dps = cfg.prefs.delta_pow_psi();
    for stream in 0..1000 {
        let b = simulate_observable_from(&co, RngSpec { seed: cfg.seed, stream }).unwrap();
        for k in 0..grid.n_points() {
            let surplus = xt.value * b.phi[k];
            assert!(surplus > 0.0 && surplus.is_finite(), "path {stream}, k={k}");
            let c = consumption(&cfg.prefs, xt.value, &b, k);
            assert!(
                (c - dps * surplus).abs() <= 1e-12 * c.abs(),
                "consumption proportionality failed on path {stream}"
            );
        }
    }
    timer.finish(60.0);
}

#[test]
fn criterion_08_malliavin_finite_differences() {
    let timer = Timer::start("acceptance 08 (Malliavin kernels vs Brownian bumps)");
    let cfg = paper();
    let vc = VarianceCurve::new(&cfg.market).unwrap();
    let grid = Grid::new(252, cfg.market.horizon).unwrap();
    let co = PathCoeffs::new(&cfg.market, &cfg.prefs, &vc, grid);
    let eps = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let bundle = simulate_observable_from(&co, RngSpec { seed: 7, stream: trial }).unwrap();
        let kernel = MalliavinKernel::new(&cfg.market, &cfg.prefs, &vc, &bundle);
        let k = rng.random_range(0..grid.n_steps - 1);
        let s_idx = rng.random_range(k + 1..=grid.n_steps);
        let n = grid.n_steps;

        // bump each innovation coordinate of step k and replay the path map
        let mut fd_disc = [0.0; 2];
        let mut fd_phi = [0.0; 2];
        let base_disc = (-bundle.int_r[n]).exp();
        let base_phi = bundle.phi[s_idx];
        for coord in 0..2 {
            let mut bumped = bundle.increments.clone();
            bumped[k][coord] += eps;
            let nb = ezalm_core::paths::simulate_observable_with_increments(
                &cfg.market,
                &cfg.prefs,
                &vc,
                grid,
                bumped,
            )
            .unwrap();
            fd_disc[coord] = ((-nb.int_r[n]).exp() - base_disc) / eps;
            fd_phi[coord] = (nb.phi[s_idx] - base_phi) / eps;
        }

        let kd = kernel.d_discount_bump(k);
        let kp = kernel.d_phi_bump(k, s_idx);
        for (fd, an, what) in [(fd_disc, kd, "discount"), (fd_phi, kp, "phi")] {
            let err = ((fd[0] - an[0]).powi(2) + (fd[1] - an[1]).powi(2)).sqrt();
            let scale = (an[0] * an[0] + an[1] * an[1])
                .max(fd[0] * fd[0] + fd[1] * fd[1])
                .sqrt();
            let rel = err / scale;
            worst = worst.max(rel);
            assert!(
                rel <= 1e-3,
                "trial {trial} ({what}): k={k}, s={s_idx}: rel err {rel:e} (fd {fd:?} vs kernel {an:?})"
            );
        }
    }
    println!("  worst relative error over 100 triples: {worst:.2e}");
    timer.finish(60.0);
}

fn group(rows: &[WelfareRow], pref: f64, k: f64, axis: SweepAxis) -> Vec<&WelfareRow> {
    rows.iter()
        .filter(|r| {
            let pv = match axis {
                SweepAxis::Gamma => r.gamma,
                SweepAxis::Psi => r.psi,
                SweepAxis::X => f64::NAN,
            };
            pv == pref && r.k == k
        })
        .collect()
}

fn assert_strictly_monotone(vals: &[(f64, f64)], increasing: bool, what: &str) {
    for w in vals.windows(2) {
        let ok = if increasing { w[1].1 > w[0].1 } else { w[1].1 < w[0].1 };
        assert!(
            ok,
            "{what}: L({}) = {} vs L({}) = {} breaks {} order",
            w[0].0,
            w[0].1,
            w[1].0,
            w[1].1,
            if increasing { "increasing" } else { "decreasing" }
        );
    }
}

#[test]
fn criterion_09_welfare_shape_reproduction() {
    let timer = Timer::start("acceptance 09 (welfare-loss shape reproduction at 1e6 paths)");
    let cfg = paper();
    let vc = VarianceCurve::new(&cfg.market).unwrap();
    let grid = Grid::new(cfg.n_steps, cfg.market.horizon).unwrap();
    let n_paths = 1_000_000;

    let psi_rows = sweep(
        &cfg.market,
        &cfg.prefs,
        &vc,
        grid,
        n_paths,
        cfg.seed,
        &SweepSpec::defaults(SweepAxis::Psi, cfg.liability.k),
    );
    let gamma_rows = sweep(
        &cfg.market,
        &cfg.prefs,
        &vc,
        grid,
        n_paths,
        cfg.seed,
        &SweepSpec::defaults(SweepAxis::Gamma, cfg.liability.k),
    );
    for r in psi_rows.iter().chain(gamma_rows.iter()) {
        assert!(r.error.is_none(), "row (gamma={}, psi={}, x={}, K={}): {:?}", r.gamma, r.psi, r.x, r.k, r.error);
    }

    // (a) zero-liability rows are constant in wealth
    for (rows, axis, prefs) in [
        (&psi_rows, SweepAxis::Psi, &[1.1, 1.5, 2.0, 3.0][..]),
        (&gamma_rows, SweepAxis::Gamma, &[2.0, 5.0, 8.0, 12.0][..]),
    ] {
        for &pv in prefs {
            let g0 = group(rows, pv, 0.0, axis);
            assert_eq!(g0.len(), 8);
            for r in &g0 {
                assert!(
                    (r.l - g0[0].l).abs() <= 3.0 * (r.l_se + g0[0].l_se),
                    "K=0 row not constant in x at pref {pv}"
                );
            }
            // (b) liability rows strictly increase in wealth
            let g500 = group(rows, pv, 500.0, axis);
            assert_eq!(g500.len(), 8);
            let vals: Vec<(f64, f64)> = g500.iter().map(|r| (r.x, r.l)).collect();
            assert_strictly_monotone(&vals, true, "K=500 x-grid");
        }
    }

    // (c) loss decreases in risk aversion, (d) increases in elasticity, at the
    // base wealth for both liability levels
    for k in [0.0, 500.0] {
        let by_gamma: Vec<(f64, f64)> = [2.0, 5.0, 8.0, 12.0]
            .iter()
            .map(|&g| {
                let row = gamma_rows
                    .iter()
                    .find(|r| r.gamma == g && r.k == k && r.x == 1000.0)
                    .unwrap();
                (g, row.l)
            })
            .collect();
        assert_strictly_monotone(&by_gamma, false, "gamma axis");
        let by_psi: Vec<(f64, f64)> = [1.1, 1.5, 2.0, 3.0]
            .iter()
            .map(|&ps| {
                let row = psi_rows
                    .iter()
                    .find(|r| r.psi == ps && r.k == k && r.x == 1000.0)
                    .unwrap();
                (ps, row.l)
            })
            .collect();
        assert_strictly_monotone(&by_psi, true, "psi axis");
    }

    // (e) vacuous learning: identical twins make the loss exactly zero
    let mut degenerate = cfg.market.clone();
    degenerate.sigma_rp = 0.0;
    degenerate.m0 = degenerate.mu_rp;
    degenerate.v0 = 0.0;
    let vc0 = VarianceCurve::new(&degenerate).unwrap();
    let ts = estimate_terms(
        &degenerate,
        &cfg.prefs,
        &LiabilitySpec::new(500.0).unwrap(),
        &vc0,
        grid,
        100_000,
        cfg.seed,
    )
    .unwrap();
    let (l, _) = welfare_loss(1000.0, &ts).unwrap();
    assert!(l.abs() <= 1e-12, "vacuous-learning loss {l}");

    timer.finish(900.0);
}
