//! Flat `key = value` run-configuration files.
//!
//! One assignment per line, `#` starts a comment. Keys are fixed; parse errors
//! name the offending key and line. The premium/rate correlation may be given
//! directly (`rho_Rr`), derived from `rho_0`, or both (they must then agree).

use std::collections::HashMap;

use crate::error::CoreError;
use crate::model::{LiabilitySpec, MarketParams, Preferences};

/// Recognised keys, in canonical manifest order.
pub const KEYS: [&str; 25] = [
    "kappa_r", "mu_r", "sigma_r", "rho_rS", "kappa_R", "mu_R", "sigma_R", "rho_RS", "rho_0",
    "rho_Rr", "beta", "phi_B", "sigma_S", "T", "r0", "m0", "v0", "delta", "gamma", "psi", "K",
    "x0", "n_paths", "n_steps", "seed",
];

const DEFAULT_X0: f64 = 1000.0;
const DEFAULT_N_PATHS: u64 = 100_000;
const DEFAULT_N_STEPS: usize = 252;
const DEFAULT_SEED: u64 = 42;

/// A fully resolved, validated run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub market: MarketParams,
    pub prefs: Preferences,
    pub liability: LiabilitySpec,
    pub x0: f64,
    pub n_paths: u64,
    pub n_steps: usize,
    pub seed: u64,
    /// Non-fatal validation warnings (printed, never silently dropped).
    pub warnings: Vec<String>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig, CoreError> {
        let raw = RawConfig::parse(text)?;
        raw.resolve()
    }

    /// Resolved parameter snapshot in canonical key order, for run manifests.
    pub fn snapshot(&self) -> Vec<(&'static str, String)> {
        let m = &self.market;
        let mut out = vec![
            ("kappa_r", fmt(m.kappa_r)),
            ("mu_r", fmt(m.mu_r)),
            ("sigma_r", fmt(m.sigma_r)),
            ("rho_rS", fmt(m.rho_rs)),
            ("kappa_R", fmt(m.kappa_rp)),
            ("mu_R", fmt(m.mu_rp)),
            ("sigma_R", fmt(m.sigma_rp)),
            ("rho_RS", fmt(m.rho_rp_s)),
        ];
        if let Some(rho_0) = m.rho_0 {
            out.push(("rho_0", fmt(rho_0)));
        }
        out.extend([
            ("rho_Rr", fmt(m.rho_rp_r)),
            ("beta", fmt(m.beta)),
            ("phi_B", fmt(m.phi_b)),
            ("sigma_S", fmt(m.sigma_s)),
            ("T", fmt(m.horizon)),
            ("r0", fmt(m.r0)),
            ("m0", fmt(m.m0)),
            ("v0", fmt(m.v0)),
            ("delta", fmt(self.prefs.delta)),
            ("gamma", fmt(self.prefs.gamma)),
            ("psi", fmt(self.prefs.psi)),
            ("K", fmt(self.liability.k)),
            ("x0", fmt(self.x0)),
            ("n_paths", self.n_paths.to_string()),
            ("n_steps", self.n_steps.to_string()),
            ("seed", self.seed.to_string()),
        ]);
        out
    }
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

/// Parsed key/value pairs with their source lines, before resolution.
#[derive(Debug, Default)]
struct RawConfig {
    values: HashMap<&'static str, (f64, usize)>,
    n_paths: Option<u64>,
    n_steps: Option<usize>,
    seed: Option<u64>,
}

impl RawConfig {
    fn parse(text: &str) -> Result<RawConfig, CoreError> {
        let mut cfg = RawConfig::default();
        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw_line.find('#') {
                Some(pos) => &raw_line[..pos],
                None => raw_line,
            };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let Some((key_part, value_part)) = line.split_once('=') else {
                return Err(CoreError::Parse {
                    line: line_no,
                    key: line.chars().take(32).collect(),
                    msg: "expected `key = value`".into(),
                });
            };
            let key = key_part.trim();
            let value = value_part.trim();
            let Some(&canonical) = KEYS.iter().find(|&&k| k == key) else {
                return Err(CoreError::Parse {
                    line: line_no,
                    key: key.to_string(),
                    msg: "unknown key".into(),
                });
            };
            match canonical {
                "n_paths" => {
                    check_dup(cfg.n_paths.is_some(), canonical, line_no)?;
                    cfg.n_paths = Some(parse_int(canonical, value, line_no)?);
                }
                "n_steps" => {
                    check_dup(cfg.n_steps.is_some(), canonical, line_no)?;
                    cfg.n_steps = Some(parse_int::<u64>(canonical, value, line_no)? as usize);
                }
                "seed" => {
                    check_dup(cfg.seed.is_some(), canonical, line_no)?;
                    cfg.seed = Some(parse_int(canonical, value, line_no)?);
                }
                _ => {
                    check_dup(cfg.values.contains_key(canonical), canonical, line_no)?;
                    let v: f64 = value.parse().map_err(|_| CoreError::Parse {
                        line: line_no,
                        key: canonical.to_string(),
                        msg: format!("`{value}` is not a number"),
                    })?;
                    cfg.values.insert(canonical, (v, line_no));
                }
            }
        }
        Ok(cfg)
    }

    fn require(&self, key: &'static str) -> Result<f64, CoreError> {
        self.values.get(key).map(|&(v, _)| v).ok_or(CoreError::Parse {
            line: 0,
            key: key.to_string(),
            msg: "missing required key".into(),
        })
    }

    fn optional(&self, key: &'static str) -> Option<f64> {
        self.values.get(key).map(|&(v, _)| v)
    }

    fn resolve(&self) -> Result<RunConfig, CoreError> {
        let rho_rs = self.require("rho_rS")?;
        let rho_rp_s = self.require("rho_RS")?;
        let rho_0 = self.optional("rho_0");
        let rho_rp_r = match (self.optional("rho_Rr"), rho_0) {
            (Some(direct), _) => direct,
            (None, Some(rho_0)) => {
                if rho_rs.abs() >= 1.0 {
                    return Err(CoreError::invalid("rho_rS", "must lie in (-1, 1)"));
                }
                MarketParams::derive_rho_rp_r(rho_0, rho_rs, rho_rp_s)
            }
            (None, None) => {
                return Err(CoreError::Parse {
                    line: 0,
                    key: "rho_Rr".into(),
                    msg: "either rho_Rr or rho_0 must be given".into(),
                });
            }
        };
        let market = MarketParams {
            kappa_r: self.require("kappa_r")?,
            mu_r: self.require("mu_r")?,
            sigma_r: self.require("sigma_r")?,
            rho_rs,
            kappa_rp: self.require("kappa_R")?,
            mu_rp: self.require("mu_R")?,
            sigma_rp: self.require("sigma_R")?,
            rho_rp_s,
            rho_0,
            rho_rp_r,
            beta: self.require("beta")?,
            phi_b: self.require("phi_B")?,
            sigma_s: self.require("sigma_S")?,
            horizon: self.require("T")?,
            r0: self.require("r0")?,
            m0: self.require("m0")?,
            v0: self.require("v0")?,
        };
        let warnings = market.validate()?;
        let prefs = Preferences::new(self.require("delta")?, self.require("gamma")?, self.require("psi")?)?;
        let liability = LiabilitySpec::new(self.optional("K").unwrap_or(0.0))?;
        let n_steps = self.n_steps.unwrap_or(DEFAULT_N_STEPS);
        if n_steps == 0 {
            return Err(CoreError::invalid("n_steps", "must be >= 1"));
        }
        let n_paths = self.n_paths.unwrap_or(DEFAULT_N_PATHS);
        if n_paths < 2 {
            return Err(CoreError::invalid("n_paths", "must be >= 2"));
        }
        Ok(RunConfig {
            market,
            prefs,
            liability,
            x0: self.optional("x0").unwrap_or(DEFAULT_X0),
            n_paths,
            n_steps,
            seed: self.seed.unwrap_or(DEFAULT_SEED),
            warnings,
        })
    }
}

fn check_dup(already: bool, key: &str, line: usize) -> Result<(), CoreError> {
    if already {
        return Err(CoreError::Parse { line, key: key.to_string(), msg: "duplicate key".into() });
    }
    Ok(())
}

fn parse_int<T: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<T, CoreError> {
    value.parse().map_err(|_| CoreError::Parse {
        line,
        key: key.to_string(),
        msg: format!("`{value}` is not a valid integer"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = "\
# minimal run configuration
kappa_r = 0.5
mu_r = 0.02
sigma_r = -0.03
rho_rS = 0
kappa_R = 1.5
mu_R = 0
sigma_R = 0.2
rho_RS = -0.95
rho_Rr = 0.1
beta = 4
phi_B = 0
sigma_S = 0.2
T = 1
r0 = 0.02
m0 = 0
v0 = 0
delta = 0.08
gamma = 5
psi = 1.5
K = 500
x0 = 1000
n_paths = 1000
n_steps = 64
seed = 7
";

    #[test]
    fn parses_complete_config() {
        let cfg = RunConfig::parse(GOOD).unwrap();
        assert_eq!(cfg.market.beta, 4.0);
        assert_eq!(cfg.liability.k, 500.0);
        assert_eq!(cfg.n_steps, 64);
        assert_eq!(cfg.seed, 7);
        assert!(!cfg.warnings.is_empty()); // negative sigma_r warning
    }

    #[test]
    fn unknown_key_names_key_and_line() {
        let bad = GOOD.replace("beta = 4", "betta = 4");
        let err = RunConfig::parse(&bad).unwrap_err();
        match err {
            CoreError::Parse { line, key, .. } => {
                assert_eq!(key, "betta");
                assert_eq!(line, 11);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn bad_number_names_key_and_line() {
        let bad = GOOD.replace("gamma = 5", "gamma = five");
        let err = RunConfig::parse(&bad).unwrap_err();
        match err {
            CoreError::Parse { key, line, .. } => {
                assert_eq!(key, "gamma");
                assert_eq!(line, 19);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn duplicate_and_missing_keys_rejected() {
        let dup = format!("{GOOD}beta = 4\n");
        assert!(matches!(RunConfig::parse(&dup), Err(CoreError::Parse { .. })));
        let missing = GOOD.replace("T = 1\n", "");
        let err = RunConfig::parse(&missing).unwrap_err();
        match err {
            CoreError::Parse { key, .. } => assert_eq!(key, "T"),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn rho_resolution() {
        // only rho_0: derived value
        let derived = GOOD.replace("rho_Rr = 0.1", "rho_0 = 0.1");
        let cfg = RunConfig::parse(&derived).unwrap();
        assert!((cfg.market.rho_rp_r - 0.1).abs() < 1e-15);
        // both, inconsistent
        let both = GOOD.replace("rho_Rr = 0.1", "rho_Rr = 0.1\nrho_0 = 0.3");
        assert!(RunConfig::parse(&both).is_err());
        // neither
        let neither = GOOD.replace("rho_Rr = 0.1\n", "");
        assert!(RunConfig::parse(&neither).is_err());
    }

    #[test]
    fn preference_configuration_enforced() {
        let bad = GOOD.replace("gamma = 5", "gamma = 0.5");
        assert!(matches!(RunConfig::parse(&bad), Err(CoreError::InvalidParameter { .. })));
    }

    // replay of the fuzz corpus: the parser must never panic on any seed
    #[test]
    fn fuzz_corpus_replays_without_panicking() {
        let dir = format!("{}/../../fuzz/corpus/config_parse", env!("CARGO_MANIFEST_DIR"));
        let mut seen = 0;
        for entry in std::fs::read_dir(dir).unwrap() {
            let bytes = std::fs::read(entry.unwrap().path()).unwrap();
            if let Ok(text) = std::str::from_utf8(&bytes) {
                let _ = RunConfig::parse(text);
            }
            seen += 1;
        }
        assert!(seen >= 8, "corpus seeds missing");
    }
}
