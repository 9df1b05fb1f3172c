//! Command-line front end for the consumption-investment pipeline.
//!
//! Subcommands: `check` (parameter admissibility), `terms` (Monte Carlo term
//! estimation), `value` (optimal value/consumption at time 0), `strategy`
//! (per-grid-point controls along one path), `ztest` (hedging-control
//! diagnostics), `welfare` (loss sweeps) and `dump-paths` (trajectory dump).
//! Every CSV output embeds a `#`-prefixed run manifest; bodies are
//! byte-identical across reruns and thread counts for a fixed manifest.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};

use ezalm_core::config::RunConfig;
use ezalm_core::control;
use ezalm_core::error::CoreError;
use ezalm_core::filter::{check_conditions, ConditionReport, VarianceCurve, ZetaPreset};
use ezalm_core::malliavin::{z_clark_ocone, z_nested_on};
use ezalm_core::mc::{estimate_terms, Term};
use ezalm_core::paths::{simulate_observable_from, Grid, PathCoeffs, RngSpec};
use ezalm_core::welfare::{sweep, SweepAxis, SweepSpec};

#[derive(Parser)]
#[command(
    name = "ezalm",
    version,
    about = "Consumption-investment with a filtered risk premium and terminal liability",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Run configuration file (flat `key = value`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the configured path count.
    #[arg(long = "paths", global = true)]
    paths: Option<u64>,
    /// Override the configured step count.
    #[arg(long = "steps", global = true)]
    steps: Option<usize>,
    /// Output file (default: stdout).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: EZALM_THREADS or all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Admissibility diagnostics for the exponential-moment constants.
    Check {
        /// One of a32 | a36 | b3 or a number; default runs all three presets.
        #[arg(long)]
        zeta: Option<String>,
    },
    /// Estimate the expectation terms A, B and their full-information twins.
    Terms,
    /// Time-0 solution: effective surplus, value function, Y0 and c0.
    Value,
    /// Per-grid-point optimal controls along one simulated path.
    Strategy {
        /// Outer path index.
        #[arg(long, default_value_t = 0)]
        path_index: u64,
        /// Inner paths of the nested hedging-control estimate per grid point.
        #[arg(long, default_value_t = 256)]
        inner_paths: u64,
    },
    /// Hedging-control diagnostics at one grid index.
    Ztest {
        /// Grid index at which Z is estimated (0 = exact conditioning).
        #[arg(long, default_value_t = 0)]
        t_index: usize,
    },
    /// Welfare-loss sweep.
    Welfare {
        /// Sweep axis: x | gamma | psi.
        #[arg(long)]
        axis: String,
        /// Gnuplot-friendly column order (x and L first).
        #[arg(long, default_value_t = false)]
        gnuplot: bool,
    },
    /// Dump simulated trajectories, one CSV per requested path index.
    DumpPaths {
        /// Path index; may be repeated.
        #[arg(long = "path-index", default_values_t = [0u64])]
        path_indices: Vec<u64>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders help/version requests on stdout with success
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

enum CliError {
    Core(CoreError),
    Io(io::Error),
    Usage(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "{e}"),
            CliError::Usage(m) => write!(f, "{m}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_numerical_gate() => 2,
            _ => 1,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::Core(e)
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e)
    }
}

struct Ctx {
    cfg: RunConfig,
    config_path: PathBuf,
    subcommand: &'static str,
}

impl Ctx {
    fn grid(&self) -> Result<Grid, CoreError> {
        Grid::new(self.cfg.n_steps, self.cfg.market.horizon)
    }

    fn manifest(&self, w: &mut dyn Write) -> io::Result<()> {
        let ts = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        writeln!(w, "# ezalm-version: {}", ezalm_core::VERSION)?;
        writeln!(w, "# subcommand: {}", self.subcommand)?;
        writeln!(w, "# config: {}", self.config_path.display())?;
        writeln!(w, "# timestamp: {ts}")?;
        for (k, v) in self.cfg.snapshot() {
            writeln!(w, "# {k} = {v}")?;
        }
        Ok(())
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads(&cli.common)?;
    let config_path = cli
        .common
        .config
        .clone()
        .ok_or_else(|| CliError::Usage("--config PATH is required".into()))?;
    let text = fs::read_to_string(&config_path)
        .map_err(|e| CliError::Usage(format!("cannot read config `{}`: {e}", config_path.display())))?;
    let mut cfg = RunConfig::parse(&text)?;
    if let Some(seed) = cli.common.seed {
        cfg.seed = seed;
    }
    if let Some(paths) = cli.common.paths {
        cfg.n_paths = paths;
    }
    if let Some(steps) = cli.common.steps {
        cfg.n_steps = steps;
    }
    for w in &cfg.warnings {
        eprintln!("warning: {w}");
    }
    let subcommand = match &cli.cmd {
        Cmd::Check { .. } => "check",
        Cmd::Terms => "terms",
        Cmd::Value => "value",
        Cmd::Strategy { .. } => "strategy",
        Cmd::Ztest { .. } => "ztest",
        Cmd::Welfare { .. } => "welfare",
        Cmd::DumpPaths { .. } => "dump-paths",
    };
    let ctx = Ctx { cfg, config_path, subcommand };
    match cli.cmd {
        Cmd::Check { zeta } => cmd_check(&ctx, zeta.as_deref(), &cli.common),
        Cmd::Terms => cmd_terms(&ctx, &cli.common),
        Cmd::Value => cmd_value(&ctx, &cli.common),
        Cmd::Strategy { path_index, inner_paths } => {
            cmd_strategy(&ctx, path_index, inner_paths, &cli.common)
        }
        Cmd::Ztest { t_index } => cmd_ztest(&ctx, t_index, &cli.common),
        Cmd::Welfare { axis, gnuplot } => cmd_welfare(&ctx, &axis, gnuplot, &cli.common),
        Cmd::DumpPaths { path_indices } => cmd_dump_paths(&ctx, &path_indices, &cli.common),
    }
}

fn init_threads(common: &Common) -> Result<(), CliError> {
    let threads = match common.threads {
        Some(n) => Some(n),
        None => match std::env::var("EZALM_THREADS") {
            Ok(v) => Some(v.parse().map_err(|_| {
                CliError::Usage(format!("EZALM_THREADS = `{v}` is not a thread count"))
            })?),
            Err(_) => None,
        },
    };
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn open_out(common: &Common) -> Result<Box<dyn Write>, CliError> {
    Ok(match &common.out {
        Some(path) => Box::new(io::BufWriter::new(fs::File::create(path)?)),
        None => Box::new(io::BufWriter::new(io::stdout())),
    })
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn resolve_zeta(arg: &str, cfg: &RunConfig) -> Result<(String, f64), CliError> {
    let p = &cfg.market;
    match arg {
        "a32" => Ok(("a32".into(), ZetaPreset::A32.value(p))),
        "a36" => Ok(("a36".into(), ZetaPreset::A36.value(p))),
        "b3" => Ok(("b3".into(), ZetaPreset::B3.value(p))),
        other => other
            .parse::<f64>()
            .map(|v| (other.to_string(), v))
            .map_err(|_| {
                CliError::Usage(format!("--zeta must be a32, a36, b3 or a number, got `{other}`"))
            }),
    }
}

fn cmd_check(ctx: &Ctx, zeta: Option<&str>, common: &Common) -> Result<(), CliError> {
    let vc = VarianceCurve::new(&ctx.cfg.market)?;
    let requested: Vec<(String, f64)> = match zeta {
        Some(arg) => vec![resolve_zeta(arg, &ctx.cfg)?],
        None => ["a32", "a36", "b3"]
            .iter()
            .map(|s| resolve_zeta(s, &ctx.cfg))
            .collect::<Result<_, _>>()?,
    };
    let mut out = open_out(common)?;
    ctx.manifest(&mut out)?;
    writeln!(out, "zeta,b_max,delta_max,t_critical,g2_zero,admissible")?;
    for (label, zeta) in requested {
        let rep = check_conditions(&vc, zeta)?;
        print_report(&label, &rep);
        writeln!(
            out,
            "{},{},{},{},{},{}",
            fmt(rep.zeta_used),
            fmt(rep.b_max),
            fmt(rep.delta_max),
            fmt(rep.t_critical),
            rep.g2_zero.map(fmt).unwrap_or_else(|| "inf".into()),
            rep.admissible
        )?;
    }
    out.flush()?;
    Ok(())
}

fn print_report(label: &str, rep: &ConditionReport) {
    eprintln!("condition report ({label}):");
    eprintln!("  zeta:       {}", fmt(rep.zeta_used));
    eprintln!("  b_max:      {}", fmt(rep.b_max));
    eprintln!("  delta_max:  {}", fmt(rep.delta_max));
    eprintln!("  t_critical: {}", fmt(rep.t_critical));
    eprintln!("  g2_zero:    {}", rep.g2_zero.map(fmt).unwrap_or_else(|| "inf".into()));
    eprintln!("  admissible: {}", rep.admissible);
}

fn cmd_terms(ctx: &Ctx, common: &Common) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let vc = VarianceCurve::new(&cfg.market)?;
    let grid = ctx.grid()?;
    let ts =
        estimate_terms(&cfg.market, &cfg.prefs, &cfg.liability, &vc, grid, cfg.n_paths, cfg.seed)?;
    let mut out = open_out(common)?;
    ctx.manifest(&mut out)?;
    writeln!(out, "n_paths,seed,A,A_se,B,B_se,A0,A0_se,B0,B0_se,EHT,EHT_se")?;
    writeln!(
        out,
        "{},{},{},{},{},{},{},{},{},{},{},{}",
        ts.n_paths,
        ts.seed,
        fmt(ts.a.mean),
        fmt(ts.a.std_error),
        fmt(ts.b.mean),
        fmt(ts.b.std_error),
        fmt(ts.a0.mean),
        fmt(ts.a0.std_error),
        fmt(ts.b0.mean),
        fmt(ts.b0.std_error),
        fmt(ts.eht.mean),
        fmt(ts.eht.std_error)
    )?;
    out.flush()?;
    Ok(())
}

fn cmd_value(ctx: &Ctx, common: &Common) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let vc = VarianceCurve::new(&cfg.market)?;
    let grid = ctx.grid()?;
    let ts =
        estimate_terms(&cfg.market, &cfg.prefs, &cfg.liability, &vc, grid, cfg.n_paths, cfg.seed)?;
    let sol = control::solve(cfg.x0, &ts, &cfg.prefs)?;
    let mut out = open_out(common)?;
    ctx.manifest(&mut out)?;
    writeln!(out, "x,x_tilde,x_tilde_se,value,y0,c0")?;
    writeln!(
        out,
        "{},{},{},{},{},{}",
        fmt(sol.x),
        fmt(sol.x_tilde.value),
        fmt(sol.x_tilde.std_error),
        fmt(sol.value),
        fmt(sol.y0),
        fmt(sol.c0)
    )?;
    out.flush()?;
    Ok(())
}

fn cmd_strategy(
    ctx: &Ctx,
    path_index: u64,
    inner_paths: u64,
    common: &Common,
) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let vc = VarianceCurve::new(&cfg.market)?;
    let grid = ctx.grid()?;
    let ts =
        estimate_terms(&cfg.market, &cfg.prefs, &cfg.liability, &vc, grid, cfg.n_paths, cfg.seed)?;
    let xt = control::x_tilde(cfg.x0, &ts)?;
    let co = PathCoeffs::new(&cfg.market, &cfg.prefs, &vc, grid);
    let bundle = simulate_observable_from(&co, RngSpec { seed: cfg.seed, stream: path_index })?;
    eprintln!(
        "note: nested hedging-control estimation at {} grid points x {} inner paths",
        grid.n_steps, inner_paths
    );
    let mut out = open_out(common)?;
    ctx.manifest(&mut out)?;
    writeln!(out, "# path_index: {path_index}")?;
    writeln!(out, "t,c_star,pi1,pi2,pi_S,pi_B")?;
    for k in 0..grid.n_steps {
        let z = if k == 0 {
            let rep = z_clark_ocone(
                &cfg.market,
                &cfg.prefs,
                &cfg.liability,
                &vc,
                grid,
                xt.value,
                0,
                cfg.n_paths,
                cfg.seed,
            )?;
            [rep.z[0].mean, rep.z[1].mean]
        } else {
            let rep = z_nested_on(
                &co,
                &cfg.market,
                &cfg.prefs,
                &cfg.liability,
                &vc,
                &bundle,
                k,
                xt.value,
                inner_paths,
                cfg.seed,
            )?;
            [rep.z[0].mean, rep.z[1].mean]
        };
        let t = grid.time(k);
        let c = control::consumption(&cfg.prefs, xt.value, &bundle, k);
        let pi = control::portfolio(&cfg.prefs, xt.value, &bundle, k, z);
        let (pi_s, pi_b) = control::asset_split(&cfg.market, t, bundle.r[k], pi)?;
        writeln!(
            out,
            "{},{},{},{},{},{}",
            fmt(t),
            fmt(c),
            fmt(pi[0]),
            fmt(pi[1]),
            fmt(pi_s),
            fmt(pi_b)
        )?;
    }
    out.flush()?;
    Ok(())
}

fn cmd_ztest(ctx: &Ctx, t_index: usize, common: &Common) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let vc = VarianceCurve::new(&cfg.market)?;
    let grid = ctx.grid()?;
    if t_index >= grid.n_steps {
        return Err(CliError::Usage(format!(
            "--t-index must be below n_steps = {} (Z is undefined at maturity)",
            grid.n_steps
        )));
    }
    if t_index > 0 {
        eprintln!("warning: t_index > 0 uses nested conditioning, which is markedly more expensive");
    }
    let ts =
        estimate_terms(&cfg.market, &cfg.prefs, &cfg.liability, &vc, grid, cfg.n_paths, cfg.seed)?;
    let xt = control::x_tilde(cfg.x0, &ts)?;
    let rep = z_clark_ocone(
        &cfg.market,
        &cfg.prefs,
        &cfg.liability,
        &vc,
        grid,
        xt.value,
        t_index,
        cfg.n_paths,
        cfg.seed,
    )?;
    // terms-route Y0 = (-A + x B)/(1 - B) with a delta-method SE
    let y0_terms = control::y_zero(&ts, xt.value);
    let denom = 1.0 - ts.b.mean;
    let ga = -1.0 / denom;
    let gb = (cfg.x0 - ts.a.mean) / (denom * denom);
    let var = ga * ga * ts.cov_of_means(Term::A, Term::A)
        + 2.0 * ga * gb * ts.cov_of_means(Term::A, Term::B)
        + gb * gb * ts.cov_of_means(Term::B, Term::B);
    let y0_terms_se = var.max(0.0).sqrt();

    let mut out = open_out(common)?;
    ctx.manifest(&mut out)?;
    writeln!(out, "t,Z1,Z1_se,Z2,Z2_se,y0_clark,y0_clark_se,y0_terms,y0_terms_se")?;
    let (y0c, y0c_se) = rep
        .y0_clark
        .map(|e| (fmt(e.mean), fmt(e.std_error)))
        .unwrap_or_else(|| ("nan".into(), "nan".into()));
    writeln!(
        out,
        "{},{},{},{},{},{},{},{},{}",
        fmt(rep.t),
        fmt(rep.z[0].mean),
        fmt(rep.z[0].std_error),
        fmt(rep.z[1].mean),
        fmt(rep.z[1].std_error),
        y0c,
        y0c_se,
        fmt(y0_terms),
        fmt(y0_terms_se)
    )?;
    out.flush()?;
    Ok(())
}

fn cmd_welfare(ctx: &Ctx, axis: &str, gnuplot: bool, common: &Common) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let axis = SweepAxis::parse(axis)
        .ok_or_else(|| CliError::Usage(format!("--axis must be x, gamma or psi, got `{axis}`")))?;
    let vc = VarianceCurve::new(&cfg.market)?;
    let grid = ctx.grid()?;
    let spec = SweepSpec::defaults(axis, cfg.liability.k);
    let rows = sweep(&cfg.market, &cfg.prefs, &vc, grid, cfg.n_paths, cfg.seed, &spec);
    let mut out = open_out(common)?;
    ctx.manifest(&mut out)?;
    if gnuplot {
        writeln!(out, "x,L,L_se,gamma,psi,K,A,B,A0,B0,seed,n_paths,error")?;
    } else {
        writeln!(out, "x,gamma,psi,K,A,B,A0,B0,L,L_se,seed,n_paths,error")?;
    }
    for r in rows {
        let err = csv_quote(r.error.as_deref().unwrap_or(""));
        if gnuplot {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                fmt(r.x),
                fmt(r.l),
                fmt(r.l_se),
                fmt(r.gamma),
                fmt(r.psi),
                fmt(r.k),
                fmt(r.a),
                fmt(r.b),
                fmt(r.a0),
                fmt(r.b0),
                cfg.seed,
                cfg.n_paths,
                err
            )?;
        } else {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                fmt(r.x),
                fmt(r.gamma),
                fmt(r.psi),
                fmt(r.k),
                fmt(r.a),
                fmt(r.b),
                fmt(r.a0),
                fmt(r.b0),
                fmt(r.l),
                fmt(r.l_se),
                cfg.seed,
                cfg.n_paths,
                err
            )?;
        }
    }
    out.flush()?;
    Ok(())
}

/// RFC-4180 quoting for the one free-text column.
fn csv_quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn cmd_dump_paths(ctx: &Ctx, indices: &[u64], common: &Common) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let vc = VarianceCurve::new(&cfg.market)?;
    let grid = ctx.grid()?;
    let co = PathCoeffs::new(&cfg.market, &cfg.prefs, &vc, grid);
    if indices.len() > 1 && common.out.is_none() {
        return Err(CliError::Usage(
            "--out is required when dumping more than one path index".into(),
        ));
    }
    for &idx in indices {
        let bundle = simulate_observable_from(&co, RngSpec { seed: cfg.seed, stream: idx })?;
        let mut out: Box<dyn Write> = match &common.out {
            Some(base) if indices.len() > 1 => {
                Box::new(io::BufWriter::new(fs::File::create(per_path_name(base, idx))?))
            }
            Some(base) => Box::new(io::BufWriter::new(fs::File::create(base)?)),
            None => Box::new(io::BufWriter::new(io::stdout())),
        };
        ctx.manifest(&mut out)?;
        writeln!(out, "# path_index: {idx}")?;
        writeln!(out, "t,r,m,eta1,eta2,H,alpha,phi,H0,alpha0,phi0")?;
        for k in 0..grid.n_points() {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                fmt(grid.time(k)),
                fmt(bundle.r[k]),
                fmt(bundle.m[k]),
                fmt(bundle.eta[k][0]),
                fmt(bundle.eta[k][1]),
                fmt(bundle.h[k]),
                fmt(bundle.alpha[k]),
                fmt(bundle.phi[k]),
                fmt(bundle.h0[k]),
                fmt(bundle.alpha0[k]),
                fmt(bundle.phi0[k])
            )?;
        }
        out.flush()?;
    }
    Ok(())
}

fn per_path_name(base: &Path, idx: u64) -> PathBuf {
    let stem = base.file_stem().and_then(|s| s.to_str()).unwrap_or("paths");
    let ext = base.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    base.with_file_name(format!("{stem}_p{idx}.{ext}"))
}
