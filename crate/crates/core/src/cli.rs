//! Batch front end: `tabulate`, `solve`, `verify` and `report`.
//!
//! Exit codes: 0 success, 2 configuration or missing input, 3 numerical
//! failure, 4 σ-window or table-range exit, 5 stall or no convergence
//! before `t_max`, 6 verification failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::background::Background;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::flowfn::{FlowTable, WindowReport};
use crate::io::{self, KernelCache};
use crate::nashmoser::{solve, Method, SolveReport, SolveSetup};
use crate::propagators::interacting_retarded_volterra;
use crate::suites::{run_suite, SuiteName, SuiteReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_WINDOW: i32 = 4;
pub const EXIT_STALL: i32 = 5;
pub const EXIT_SUITE: i32 = 6;

/// Largest `|n|` whose kernels go into the on-disk cache.
pub const CACHE_MAX_MODE: i64 = 2;

#[derive(Debug, Parser)]
#[command(name = "csflow", version, about = "Lorentzian Callan-Symanzik flow: tabulate, solve, verify, report")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tabulate 𝒢, σ and A₂ and print the σ-window verdict.
    Tabulate {
        config: PathBuf,
        /// Output directory (overrides `[output] dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the flow problem on the configured grid.
    Solve {
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = MethodArg::NashMoser)]
        method: MethodArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run invariant suites and write verify.json.
    Verify {
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = SuiteArg::All)]
        suite: SuiteArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render plot data and a text summary from an output directory.
    Report { dir: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    NashMoser,
    Newton,
    March,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::NashMoser => Method::NashMoser,
            MethodArg::Newton => Method::Newton,
            MethodArg::March => Method::March,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SuiteArg {
    Propagators,
    Flowfn,
    Graded,
    Linsolve,
    All,
}

impl SuiteArg {
    fn suites(self) -> Vec<SuiteName> {
        match self {
            SuiteArg::Propagators => vec![SuiteName::Propagators],
            SuiteArg::Flowfn => vec![SuiteName::Flowfn],
            SuiteArg::Graded => vec![SuiteName::Graded],
            SuiteArg::Linsolve => vec![SuiteName::Linsolve],
            SuiteArg::All => SuiteName::ALL.to_vec(),
        }
    }
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Io(_) | Error::Format(_) => EXIT_CONFIG,
        Error::SigmaWindow { .. } | Error::Window(_) | Error::TableRange { .. } => EXIT_WINDOW,
        Error::Stalled { .. } => EXIT_STALL,
        _ => EXIT_NUMERIC,
    }
}

/// Parse arguments, run, and return the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    crate::par::init_from_env();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(command: Command) -> Result<i32> {
    match command {
        Command::Tabulate { config, out } => run_tabulate(&config, out.as_deref()),
        Command::Solve { config, method, out } => run_solve(&config, method.into(), out.as_deref()),
        Command::Verify { config, suite, out } => run_verify(&config, suite, out.as_deref()),
        Command::Report { dir } => run_report(&dir),
    }
}

fn load(config: &Path, out: Option<&Path>) -> Result<(RunConfig, PathBuf)> {
    let cfg = RunConfig::from_path(config)?;
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.output_dir());
    fs::create_dir_all(&dir)?;
    Ok((cfg, dir))
}

#[derive(Serialize)]
struct LogEntry<'a> {
    command: &'a str,
    config_hash: &'a str,
    wall_seconds: f64,
    exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    detail: Option<Value>,
}

fn log(dir: &Path, command: &str, cfg: &RunConfig, start: Instant, code: i32, detail: Option<Value>) -> Result<()> {
    io::append_log(
        &dir.join("run_log.jsonl"),
        &LogEntry {
            command,
            config_hash: &cfg.hash(),
            wall_seconds: start.elapsed().as_secs_f64(),
            exit_code: code,
            detail,
        },
    )
}

fn window_summary(w: &WindowReport) -> String {
    let mut s = format!(
        "σ-window [−A, A] = [−{a}, {a}]: σ(0) = {:.6e}, min σ = {:.6e} (c = {}), max|σ'/σ|·A = {:.4} (ε' = {}): {}",
        w.sigma_at_zero,
        w.min_sigma,
        w.c,
        w.log_variation,
        w.eps_prime,
        if w.pass { "pass" } else { "FAIL" },
        a = w.a,
    );
    if let Some(r) = &w.remedy {
        let _ = write!(s, "\n  remedy: {r}");
    }
    s
}

fn tabulate_table(cfg: &RunConfig) -> Result<(Background, FlowTable)> {
    let bg = Background::build(&cfg.background)?;
    let table = FlowTable::tabulate(&bg, cfg.table.m2_points)?;
    Ok((bg, table))
}

fn write_kernel_cache(bg: &Background, cfg: &RunConfig, dir: &Path) -> Result<usize> {
    let cache = KernelCache::new(dir.join("kernels"));
    let a = cfg.solver.window_a.min(bg.m2_max);
    let mut written = 0;
    for (m, mode) in bg.basis.modes.iter().enumerate() {
        if mode.index.abs() > CACHE_MAX_MODE {
            continue;
        }
        for m2 in [-a, 0.0, a] {
            let k = interacting_retarded_volterra(bg, m, m2)?;
            cache.store(bg.hash(), &k)?;
            written += 1;
        }
    }
    Ok(written)
}

pub fn run_tabulate(config: &Path, out: Option<&Path>) -> Result<i32> {
    let start = Instant::now();
    let (cfg, dir) = load(config, out)?;
    let (bg, table) = tabulate_table(&cfg)?;
    io::write_flow_table(&dir.join("flow_table.csv"), &table)?;
    if cfg.output.as_ref().is_some_and(|o| o.kernel_cache) {
        let n = write_kernel_cache(&bg, &cfg, &dir)?;
        println!("kernel cache: {n} kernels in {}", dir.join("kernels").display());
    }
    let s = &cfg.solver;
    let w = crate::flowfn::check_sigma_window(&table, s.window_c, s.window_eps, s.window_a);
    println!("flow table: {} points on [{}, {}]", table.len(), table.lo(), table.hi());
    println!("{}", window_summary(&w));
    log(&dir, "tabulate", &cfg, start, EXIT_OK, Some(json!({ "window_pass": w.pass })))?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct SolveDocument<'a> {
    command: &'static str,
    config_hash: String,
    grid: crate::graded::FlowGrid,
    window: &'a WindowReport,
    report: &'a SolveReport,
}

pub fn run_solve(config: &Path, method: Method, out: Option<&Path>) -> Result<i32> {
    let start = Instant::now();
    let (cfg, dir) = load(config, out)?;
    let (_, table) = tabulate_table(&cfg)?;
    let setup = SolveSetup::new(&cfg, table)?;
    let outcome = match solve(&setup, method) {
        Ok(o) => o,
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("error: {e}");
            if code == EXIT_WINDOW {
                eprintln!("{}", window_summary(&setup.window));
            }
            log(&dir, "solve", &cfg, start, code, Some(json!({ "method": method.name(), "error": e.to_string() })))?;
            return Ok(code);
        }
    };
    io::write_solution(&dir.join("solution.csv"), &outcome.solution)?;
    io::write_residuals(&dir.join("residuals.csv"), &outcome.report.history)?;
    for (t, field) in &outcome.snapshots {
        io::write_solution(&dir.join(format!("snapshot_t{t:.4}.csv")), field)?;
    }
    io::write_json(
        &dir.join("report.json"),
        &SolveDocument {
            command: "solve",
            config_hash: cfg.hash(),
            grid: setup.grid,
            window: &setup.window,
            report: &outcome.report,
        },
    )?;
    let r = &outcome.report;
    println!(
        "{}: {} after {} iterations (t = {:.4}), ‖RG‖₀ {:.3e} → {:.3e} (tolerance {:.3e}), max ‖u‖₄ = {:.4} (A = {})",
        method.name(),
        if r.converged { "converged" } else { "not converged" },
        r.iterations,
        r.final_t,
        r.res0_initial,
        r.res0_final,
        r.tolerance,
        r.u4_max,
        r.window_a,
    );
    let code = if r.converged { EXIT_OK } else { EXIT_STALL };
    log(
        &dir,
        "solve",
        &cfg,
        start,
        code,
        Some(json!({ "method": method.name(), "iterations": r.iterations, "res0_final": r.res0_final })),
    )?;
    Ok(code)
}

#[derive(Serialize)]
struct VerifyDocument<'a> {
    command: &'static str,
    config_hash: String,
    seed: u64,
    pass: bool,
    suites: &'a [SuiteReport],
}

pub fn run_verify(config: &Path, suite: SuiteArg, out: Option<&Path>) -> Result<i32> {
    let start = Instant::now();
    let (cfg, dir) = load(config, out)?;
    let mut reports = Vec::new();
    for s in suite.suites() {
        let r = run_suite(&cfg, s)?;
        println!("{:<12} {}", s.name(), if r.pass { "pass" } else { "FAIL" });
        for c in r.failures() {
            println!("  failed: {} = {:e}{}", c.name, c.value, c.detail.as_deref().map(|d| format!(" ({d})")).unwrap_or_default());
        }
        reports.push(r);
    }
    let pass = reports.iter().all(|r| r.pass);
    io::write_json(
        &dir.join("verify.json"),
        &VerifyDocument {
            command: "verify",
            config_hash: cfg.hash(),
            seed: cfg.verify.seed,
            pass,
            suites: &reports,
        },
    )?;
    let code = if pass { EXIT_OK } else { EXIT_SUITE };
    log(&dir, "verify", &cfg, start, code, None)?;
    Ok(code)
}

/// Number of k-slices written for the solution surface.
pub const REPORT_SLICES: usize = 5;

fn dat(header: &str, rows: &[Vec<f64>]) -> String {
    let mut s = format!("# {header}\n");
    for r in rows {
        let line: Vec<String> = r.iter().map(|v| format!("{v:.16e}")).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

pub fn run_report(dir: &Path) -> Result<i32> {
    let have = |name: &str| dir.join(name).is_file();
    if !["flow_table.csv", "residuals.csv", "solution.csv", "report.json", "verify.json"]
        .iter()
        .any(|n| have(n))
    {
        return Err(Error::Config(format!("{}: no csflow artifacts found", dir.display())));
    }
    let plots = dir.join("plots");
    fs::create_dir_all(&plots)?;
    let mut summary = String::new();
    let _ = writeln!(summary, "csflow report for {}", dir.display());

    if have("flow_table.csv") {
        let (_, rows) = io::read_csv(&dir.join("flow_table.csv"))?;
        fs::write(plots.join("flow.dat"), dat("m2 G sigma A2", &rows))?;
        if let Some(mid) = rows.get(rows.len() / 2) {
            let _ = writeln!(
                summary,
                "flow table: {} points, G({:.3}) = {:.6e}, sigma = {:.6e}, A2 = {:.6e}",
                rows.len(),
                mid[0],
                mid[1],
                mid[2],
                mid[3]
            );
        }
    }
    if have("residuals.csv") {
        let (_, rows) = io::read_csv(&dir.join("residuals.csv"))?;
        fs::write(plots.join("residuals.dat"), dat("t res0 res2", &rows))?;
        let _ = writeln!(summary, "residual history: {} rows", rows.len());
    }
    if have("solution.csv") {
        let (_, rows) = io::read_csv(&dir.join("solution.csv"))?;
        let mut ks: Vec<f64> = rows.iter().map(|r| r[1]).collect();
        ks.sort_by(f64::total_cmp);
        ks.dedup();
        let picks: Vec<f64> = (0..REPORT_SLICES)
            .map(|s| ks[s * (ks.len() - 1) / (REPORT_SLICES - 1).max(1)])
            .collect();
        let mut text = String::from("# phi value, one block per k slice\n");
        for k in &picks {
            let _ = writeln!(text, "# k = {k:.16e}");
            for r in rows.iter().filter(|r| r[1] == *k) {
                let _ = writeln!(text, "{:.16e} {:.16e}", r[0], r[2]);
            }
            text.push_str("\n\n");
        }
        fs::write(plots.join("solution_slices.dat"), text)?;
        fs::write(plots.join("solution_surface.dat"), surface(&rows))?;
    }
    if have("report.json") {
        let doc = io::read_json(&dir.join("report.json"))?;
        let r = &doc["report"];
        let _ = writeln!(
            summary,
            "solve ({}): converged = {}, iterations = {}, final t = {:.4}",
            r["method"].as_str().unwrap_or("?"),
            r["converged"],
            r["iterations"],
            r["final_t"].as_f64().unwrap_or(f64::NAN)
        );
        let _ = writeln!(
            summary,
            "residual ‖RG‖₀: {} → {} (tolerance {})",
            r["res0_initial"], r["res0_final"], r["tolerance"]
        );
        let _ = writeln!(summary, "max ‖u‖₄ = {} (A = {})", r["u4_max"], r["window_a"]);
        if let Some(s) = r["solution_seminorms"].as_array() {
            let list: Vec<String> = s.iter().enumerate().map(|(n, v)| format!("‖ũ‖{n} = {v}")).collect();
            let _ = writeln!(summary, "final seminorms: {}", list.join(", "));
        }
        let _ = writeln!(summary, "config hash: {}", doc["config_hash"].as_str().unwrap_or("?"));
    }
    if have("verify.json") {
        let doc = io::read_json(&dir.join("verify.json"))?;
        let _ = writeln!(summary, "verification: {}", if doc["pass"] == true { "pass" } else { "FAIL" });
        for s in doc["suites"].as_array().into_iter().flatten() {
            let _ = writeln!(
                summary,
                "  {}: {}",
                s["suite"].as_str().unwrap_or("?"),
                if s["pass"] == true { "pass" } else { "FAIL" }
            );
        }
    }
    fs::write(dir.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(EXIT_OK)
}

/// `phi k value` rows grouped by φ with blank lines between groups, the
/// layout `splot` expects for a surface.
fn surface(rows: &[Vec<f64>]) -> String {
    let mut s = String::from("# phi k value\n");
    let mut last: Option<f64> = None;
    for r in rows {
        if last.is_some_and(|p| p != r[0]) {
            s.push('\n');
        }
        last = Some(r[0]);
        let _ = writeln!(s, "{:.16e} {:.16e} {:.16e}", r[0], r[1], r[2]);
    }
    s
}
