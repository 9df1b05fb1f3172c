//! Shared fixtures for the integration suites.
#![allow(dead_code)]

use ezalm_core::config::RunConfig;

pub fn load_config(name: &str) -> RunConfig {
    let path = format!("{}/../../configs/{name}", env!("CARGO_MANIFEST_DIR"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"));
    RunConfig::parse(&text).expect("bundled config parses")
}

/// Classic fourth-order Runge-Kutta on a scalar ODE `y' = f(t, y)`; `h` may be
/// negative for backward integration. Visits every node including the start.
pub fn rk4<F: Fn(f64, f64) -> f64>(
    f: F,
    t0: f64,
    y0: f64,
    h: f64,
    n_steps: usize,
    mut visit: impl FnMut(f64, f64),
) -> f64 {
    let mut t = t0;
    let mut y = y0;
    visit(t, y);
    for _ in 0..n_steps {
        let k1 = f(t, y);
        let k2 = f(t + 0.5 * h, y + 0.5 * h * k1);
        let k3 = f(t + 0.5 * h, y + 0.5 * h * k2);
        let k4 = f(t + h, y + h * k3);
        y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        t += h;
        visit(t, y);
    }
    y
}

pub struct Timer {
    start: std::time::Instant,
    label: &'static str,
}

impl Timer {
    pub fn start(label: &'static str) -> Self {
        Timer { start: std::time::Instant::now(), label }
    }

    /// Prints the pass line and asserts the stated runtime budget.
    pub fn finish(self, budget_secs: f64) {
        let elapsed = self.start.elapsed().as_secs_f64();
        println!("{}: PASS ({elapsed:.2} s)", self.label);
        assert!(
            elapsed < budget_secs,
            "{} exceeded its {budget_secs} s budget: {elapsed:.2} s",
            self.label
        );
    }
}
