//! `fs3a` — command-line harness for the federation testbed.
//!
//! Runs the roaming-journey scenarios over the deterministic virtual-clock
//! simulator (default) or over real localhost sockets (`--transport
//! loopback`, wall-clock numbers, reported only). Results print as tables
//! and, with `--out`, land as CSV files.
//!
//! Exit codes: 0 success, 2 invariant violation during a run, 3 bad
//! configuration or usage.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use fs3a_core::harness::{
    interruption_breakdown, interruption_spec, run_auth_matrix, run_interruption, run_scenario,
    run_scenario_loopback, run_state_sweep, to_csv, HarnessError, LatencyReport, ScenarioConfig,
    ScenarioSpec, StateRoute, SweepRow,
};

#[derive(Parser)]
#[command(name = "fs3a", version, about = "Federation testbed scenario harness")]
struct Cli {
    /// Scenario configuration file (TOML). The embedded calibrated default
    /// is used when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Directory to write CSV results into (created if missing).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Transport: deterministic virtual clock, or real localhost sockets.
    #[arg(long, global = true, value_enum, default_value_t = Transport::Sim)]
    transport: Transport,

    /// Override the configured RNG seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Transport {
    Sim,
    Loopback,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PathArg {
    Cloud,
    Proxy,
    ProxyPrefetch,
}

impl PathArg {
    fn route(self) -> StateRoute {
        match self {
            PathArg::Cloud => StateRoute::Cloud,
            PathArg::Proxy => StateRoute::Proxy,
            PathArg::ProxyPrefetch => StateRoute::ProxyPrefetch,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one authentication scenario (code like MPT: placement C/M,
    /// subscription U/P, auth A/T).
    Auth {
        #[arg(long, value_name = "CODE")]
        scenario: String,
    },
    /// Sweep application-state sizes across transfer paths.
    StateSweep {
        /// Comma-separated sizes; suffixes k and m are decimal.
        #[arg(long, value_delimiter = ',', default_value = "10k,1m,10m")]
        sizes: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "cloud,proxy,proxy-prefetch")]
        paths: Vec<PathArg>,
    },
    /// Stage-timeline comparison: optimizations off vs on.
    Breakdown,
    /// Service-interruption comparison scenario (1 cloud baseline,
    /// 2 federated on-demand, 3 fully optimized).
    Interruption {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        scenario: u8,
    },
    /// Run everything: auth matrix, state sweep, breakdown, interruptions.
    All,
    /// Show the configuration.
    Config {
        /// Print the embedded default instead of the effective config.
        #[arg(long)]
        print_default: bool,
    },
}

/// Usage or configuration problem: exit 3.
struct ConfigFailure(String);
/// An invariant tripped while running: exit 2.
struct RunFailure(String);

enum Failure {
    Config(String),
    Run(String),
}

impl From<ConfigFailure> for Failure {
    fn from(e: ConfigFailure) -> Self {
        Failure::Config(e.0)
    }
}
impl From<RunFailure> for Failure {
    fn from(e: RunFailure) -> Self {
        Failure::Run(e.0)
    }
}
impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(e) => Failure::Config(e.to_string()),
            other => Failure::Run(other.to_string()),
        }
    }
}

fn load_config(cli: &Cli) -> Result<ScenarioConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| ConfigFailure(format!("cannot read {}: {e}", path.display())))?;
            ScenarioConfig::from_toml_str(&text)
                .map_err(|e| ConfigFailure(format!("{}: {e}", path.display())))?
        }
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn parse_size(s: &str) -> Result<usize, Failure> {
    let s = s.trim().to_ascii_lowercase();
    let (digits, mult) = match s.strip_suffix(['k', 'm', 'g']) {
        Some(d) if s.ends_with('k') => (d, 1_000),
        Some(d) if s.ends_with('m') => (d, 1_000_000),
        Some(d) => (d, 1_000_000_000),
        None => (s.as_str(), 1),
    };
    digits
        .parse::<usize>()
        .map(|n| n * mult)
        .map_err(|_| ConfigFailure(format!("bad size {s:?} (expected e.g. 10k, 1m, 4096)")).into())
}

fn write_out(out: &Option<PathBuf>, name: &str, contents: &str) -> Result<(), Failure> {
    let Some(dir) = out else { return Ok(()) };
    std::fs::create_dir_all(dir)
        .map_err(|e| ConfigFailure(format!("cannot create {}: {e}", dir.display())))?;
    let path: &Path = &dir.join(name);
    std::fs::write(path, contents)
        .map_err(|e| ConfigFailure(format!("cannot write {}: {e}", path.display())))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn check_audits(label: &str, audits: &[String]) -> Result<(), Failure> {
    if audits.is_empty() {
        return Ok(());
    }
    let mut msg = format!("invariant violations during {label}:");
    for a in audits {
        write!(msg, "\n  {a}").unwrap();
    }
    Err(RunFailure(msg).into())
}

fn print_report(r: &LatencyReport) {
    println!("scenario {}", r.scenario);
    println!("  {:<14} {:>12} {:>12} {:>12}", "stage", "start_ms", "end_ms", "duration_ms");
    for s in &r.stages {
        println!(
            "  {:<14} {:>12.3} {:>12.3} {:>12.3}",
            s.stage,
            s.start_ms,
            s.end_ms,
            s.duration_ms()
        );
    }
    println!("  {:<14} {:>38} {:>12.3}", "total", "", r.total_ms);
}

/// Run one scenario on the selected transport; returns the report after
/// auditing the run.
fn run_one(
    cli: &Cli,
    cfg: &ScenarioConfig,
    spec: &ScenarioSpec,
    label: &str,
) -> Result<LatencyReport, Failure> {
    match cli.transport {
        Transport::Sim => {
            let out = run_scenario(cfg, spec, label)?;
            check_audits(label, out.sim.audits())?;
            Ok(out.report)
        }
        Transport::Loopback => {
            let out = run_scenario_loopback(cfg, spec, label)?;
            check_audits(label, &out.audits)?;
            eprintln!("(loopback wall clock: {:.1} ms for the whole journey)", out.wall_ms);
            Ok(out.report)
        }
    }
}

fn cmd_auth(cli: &Cli, cfg: &ScenarioConfig, code: &str) -> Result<(), Failure> {
    let spec = ScenarioSpec::from_code(code).map_err(|e| ConfigFailure(e.to_string()))?;
    let report = run_one(cli, cfg, &spec, code)?;
    print_report(&report);
    write_out(&cli.out, "auth.csv", &to_csv(std::slice::from_ref(&report)))
}

fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("path,size_bytes,state_ms,total_ms\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{:.6},{:.6}",
            r.route.label(),
            r.size_bytes,
            r.state_ms,
            r.total_ms
        )
        .unwrap();
    }
    out
}

fn cmd_state_sweep(
    cli: &Cli,
    cfg: &ScenarioConfig,
    sizes: &[String],
    paths: &[PathArg],
) -> Result<(), Failure> {
    let sizes: Vec<usize> = sizes.iter().map(|s| parse_size(s)).collect::<Result<_, _>>()?;
    let routes: Vec<StateRoute> = paths.iter().map(|p| p.route()).collect();

    let rows: Vec<SweepRow> = match cli.transport {
        Transport::Sim => run_state_sweep(cfg, &sizes)?
            .into_iter()
            .filter(|r| routes.contains(&r.route))
            .collect(),
        Transport::Loopback => {
            let mut rows = Vec::new();
            for &size in &sizes {
                for &route in &routes {
                    let mut cfg = cfg.clone();
                    cfg.state_size_bytes = size;
                    let label = format!("{}-{}", route.label(), size);
                    let out = run_scenario_loopback(&cfg, &route.spec(), &label)?;
                    check_audits(&label, &out.audits)?;
                    rows.push(SweepRow {
                        route,
                        size_bytes: size,
                        state_ms: out.report.duration("state").unwrap_or(f64::NAN),
                        total_ms: out.report.total_ms,
                    });
                }
            }
            rows
        }
    };

    println!("{:<16} {:>12} {:>12} {:>12}", "path", "size_bytes", "state_ms", "total_ms");
    for r in &rows {
        println!(
            "{:<16} {:>12} {:>12.3} {:>12.3}",
            r.route.label(),
            r.size_bytes,
            r.state_ms,
            r.total_ms
        );
    }
    write_out(&cli.out, "state_sweep.csv", &sweep_csv(&rows))
}

fn cmd_breakdown(cli: &Cli, cfg: &ScenarioConfig) -> Result<(), Failure> {
    let without = run_one(cli, cfg, &interruption_spec(2)?, "baseline")?;
    let with = run_one(cli, cfg, &ScenarioSpec::from_code("MPT").unwrap(), "optimized")?;
    print_report(&without);
    print_report(&with);
    for stage in ["auth", "resumption"] {
        if let (Some(a), Some(b)) = (without.duration(stage), with.duration(stage)) {
            println!("{stage}: {:.3} -> {:.3} ms ({:.1}% reduction)", a, b, 100.0 * (1.0 - b / a));
        }
    }
    let reports = [without, with];
    write_out(&cli.out, "breakdown.csv", &to_csv(&reports))
}

fn interruption_csv(rows: &[(u8, f64, f64, f64, f64, f64)]) -> String {
    let mut out = String::from("scenario,attach_ms,auth_ms,mec_ue_ms,state_wait_ms,total_ms\n");
    for (n, a, b, c, d, t) in rows {
        writeln!(out, "{n},{a:.6},{b:.6},{c:.6},{d:.6},{t:.6}").unwrap();
    }
    out
}

fn run_interruption_rows(
    cli: &Cli,
    cfg: &ScenarioConfig,
    which: &[u8],
) -> Result<Vec<(u8, f64, f64, f64, f64, f64)>, Failure> {
    let mut rows = Vec::new();
    for &n in which {
        match cli.transport {
            Transport::Sim => {
                let out = run_interruption(cfg, n)?;
                check_audits(&format!("interruption {n}"), out.sim.audits())?;
                let b = interruption_breakdown(out.sim.marks(), out.sim.trace(), out.phase_start_ms);
                rows.push((n, b.attach_ms, b.auth_ms, b.mec_ue_ms, b.state_wait_ms, b.total_ms));
            }
            Transport::Loopback => {
                // No per-leg trace over real sockets: report what the marks
                // give and leave the transmission floor blank.
                let label = format!("interruption-{n}");
                let out = run_scenario_loopback(cfg, &interruption_spec(n)?, &label)?;
                check_audits(&label, &out.audits)?;
                let d = |s: &str| out.report.duration(s).unwrap_or(f64::NAN);
                rows.push((n, d("attach"), d("auth"), f64::NAN, f64::NAN, out.report.total_ms));
            }
        }
    }
    Ok(rows)
}

fn print_interruption(rows: &[(u8, f64, f64, f64, f64, f64)]) {
    println!(
        "{:<9} {:>11} {:>11} {:>11} {:>14} {:>11}",
        "scenario", "attach_ms", "auth_ms", "mec_ue_ms", "state_wait_ms", "total_ms"
    );
    for (n, a, b, c, d, t) in rows {
        println!("{n:<9} {a:>11.3} {b:>11.3} {c:>11.3} {d:>14.3} {t:>11.3}");
    }
}

fn cmd_interruption(cli: &Cli, cfg: &ScenarioConfig, n: u8) -> Result<(), Failure> {
    let rows = run_interruption_rows(cli, cfg, &[n])?;
    print_interruption(&rows);
    write_out(&cli.out, "interruption.csv", &interruption_csv(&rows))
}

fn cmd_all(cli: &Cli, cfg: &ScenarioConfig) -> Result<(), Failure> {
    println!("== authentication matrix ==");
    let reports: Vec<LatencyReport> = match cli.transport {
        Transport::Sim => {
            let outs = run_auth_matrix(cfg)?;
            for o in &outs {
                check_audits(&o.report.scenario, o.sim.audits())?;
            }
            outs.into_iter().map(|o| o.report).collect()
        }
        Transport::Loopback => ScenarioSpec::ALL_AUTH_CODES
            .iter()
            .map(|code| run_one(cli, cfg, &ScenarioSpec::from_code(code).unwrap(), code))
            .collect::<Result<_, _>>()?,
    };
    println!("{:<10} {:>12} {:>12}", "scenario", "auth_ms", "total_ms");
    for r in &reports {
        println!(
            "{:<10} {:>12.3} {:>12.3}",
            r.scenario,
            r.duration("auth").unwrap_or(f64::NAN),
            r.total_ms
        );
    }
    write_out(&cli.out, "auth.csv", &to_csv(&reports))?;

    println!("\n== state sweep ==");
    let sizes = ["10k".to_string(), "1m".to_string(), "10m".to_string()];
    cmd_state_sweep(cli, cfg, &sizes, &[PathArg::Cloud, PathArg::Proxy, PathArg::ProxyPrefetch])?;

    println!("\n== stage breakdown ==");
    cmd_breakdown(cli, cfg)?;

    println!("\n== service interruption ==");
    let rows = run_interruption_rows(cli, cfg, &[1, 2, 3])?;
    print_interruption(&rows);
    write_out(&cli.out, "interruption.csv", &interruption_csv(&rows))
}

fn run(cli: &Cli) -> Result<(), Failure> {
    if let Cmd::Config { print_default } = &cli.cmd {
        let cfg = if *print_default {
            ScenarioConfig::default()
        } else {
            load_config(cli)?
        };
        print!("{}", cfg.to_toml_string());
        return Ok(());
    }

    let cfg = load_config(cli)?;
    match &cli.cmd {
        Cmd::Auth { scenario } => cmd_auth(cli, &cfg, scenario),
        Cmd::StateSweep { sizes, paths } => cmd_state_sweep(cli, &cfg, sizes, paths),
        Cmd::Breakdown => cmd_breakdown(cli, &cfg),
        Cmd::Interruption { scenario } => cmd_interruption(cli, &cfg, *scenario),
        Cmd::All => cmd_all(cli, &cfg),
        Cmd::Config { .. } => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
