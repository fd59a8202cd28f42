//! `misspec-lab`: simulation laboratory for preference learning under a
//! biased feedback channel.
//!
//! Subcommands mirror the library layers: closed-form bounds (`bounds`,
//! `kappa`), protocol simulations (`minimax`, `route`, `sprt`), measure
//! scans (`tilt-scan`, `maps-scan`), the diagnostics suites
//! (`diagnostics`), grid execution (`run-suite`), and theoretical overlays
//! for result files (`emit-overlay`).

mod diagnostics_cmd;
mod overlay;
mod protocols_cmd;
mod scans;
mod suite;

use clap::{Parser, Subcommand};
use misspec_core::bounds::{BoundInputs, BoundReport};
use misspec_core::error::Result;
use std::path::PathBuf;

/// Version string stamped into summaries.
pub const VERSION_STRING: &str = concat!("misspec-lab-v", env!("CARGO_PKG_VERSION"));

#[derive(Parser)]
#[command(name = "misspec-lab", version, about)]
struct Cli {
    /// Config file (flat INI sections).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed for anything stochastic.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads (0 = rayon default). Outputs do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    /// Output directory; the MISSPEC_LAB_OUT environment variable overrides
    /// this flag.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Plan the work and print the cell count without running anything.
    #[arg(long, global = true, default_value_t = false)]
    dry_run: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print every closed-form bound for one parameter tuple as a CSV row.
    Bounds {
        #[arg(long, default_value_t = 100)]
        n: u64,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 0.1)]
        epsilon: f64,
        /// Separation; defaults to alpha (the synthetic identity).
        #[arg(long)]
        gamma: Option<f64>,
        /// Target gap; defaults to gamma/2.
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        tau: f64,
        #[arg(long, default_value_t = 0.0)]
        phi: f64,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
    },
    /// Tabulate kappa and its envelope over a bias grid.
    Kappa {
        /// Comma-separated biases.
        #[arg(long, default_value = "0.05,0.1,0.2")]
        epsilon: String,
    },
    /// Empirical Bayes error of the two-world test against its floor.
    Minimax(protocols_cmd::MinimaxArgs),
    /// Routed majority test: draw cost and error rate.
    Route(protocols_cmd::RouteArgs),
    /// Routed sequential test: stopping hits and error rate.
    Sprt(protocols_cmd::SprtArgs),
    /// Scan log-partition, tilted hard mass, and KL over a lambda grid.
    TiltScan(scans::TiltScanArgs),
    /// Scan a shaped statistic's drift over a lambda grid.
    MapsScan(scans::MapsScanArgs),
    /// Run one diagnostics suite (d1, d2, d3, estimate, tri, divergence).
    Diagnostics(diagnostics_cmd::DiagnosticsArgs),
    /// Execute the configured suites over the parameter grid.
    RunSuite,
    /// Emit a theoretical overlay aligned with an empirical result file.
    EmitOverlay(overlay::OverlayArgs),
}

/// Resolved output directory: environment variable beats the flag.
fn resolve_out(cli_out: &Option<PathBuf>) -> Option<PathBuf> {
    match std::env::var_os("MISSPEC_LAB_OUT") {
        Some(dir) if !dir.is_empty() => Some(PathBuf::from(dir)),
        _ => cli_out.clone(),
    }
}

/// Print a CSV table to stdout and, when an output directory is set, write
/// it to `<out>/<name>.csv` as well.
pub fn deliver(out_dir: &Option<PathBuf>, name: &str, header: &str, rows: &[String]) -> Result<()> {
    let mut text = String::with_capacity(64 * (rows.len() + 1));
    text.push_str(header);
    text.push('\n');
    for row in rows {
        text.push_str(row);
        text.push('\n');
    }
    print!("{text}");
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{name}.csv")), text)?;
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if cli.jobs > 0 {
        // worker count only affects scheduling; all reductions are ordered
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global()
            .expect("thread pool not yet initialized");
    }
    if let Err(err) = run(cli) {
        eprintln!("error: {err}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let out_dir = resolve_out(&cli.out);
    match &cli.command {
        Command::Bounds {
            n,
            alpha,
            epsilon,
            gamma,
            eta,
            tau,
            phi,
            delta,
        } => {
            let gamma = gamma.unwrap_or(*alpha);
            let eta = eta.unwrap_or(gamma / 2.0);
            let report = BoundReport::compute(BoundInputs {
                n: *n,
                alpha: *alpha,
                epsilon: *epsilon,
                gamma,
                eta,
                tau: *tau,
                phi: *phi,
                delta: *delta,
            })?;
            deliver(&out_dir, "bounds", BoundReport::csv_header(), &[report.csv_row()])
        }
        Command::Kappa { epsilon } => {
            let mut rows = Vec::new();
            for item in epsilon.split(',') {
                let eps: f64 = item.trim().parse().map_err(|e| {
                    misspec_core::Error::invalid(format!("bad epsilon `{item}`: {e}"))
                })?;
                rows.push(format!(
                    "{},{},{}",
                    eps,
                    misspec_core::bounds::kappa(eps)?,
                    misspec_core::bounds::kappa_upper(eps)?
                ));
            }
            deliver(&out_dir, "kappa", "epsilon,kappa,kappa_upper", &rows)
        }
        Command::Minimax(args) => protocols_cmd::run_minimax(args, cli.seed, &out_dir),
        Command::Route(args) => protocols_cmd::run_route(args, cli.seed, &out_dir),
        Command::Sprt(args) => protocols_cmd::run_sprt(args, cli.seed, &out_dir),
        Command::TiltScan(args) => scans::run_tilt_scan(args, &out_dir),
        Command::MapsScan(args) => scans::run_maps_scan(args, &out_dir),
        Command::Diagnostics(args) => diagnostics_cmd::run(args, cli.seed, &out_dir),
        Command::RunSuite => {
            let config = suite::ExperimentConfig::load(cli.config.as_deref(), &out_dir)?;
            if cli.dry_run {
                println!("planned cells: {}", config.cell_count());
                return Ok(());
            }
            suite::run_suite(&config)
        }
        Command::EmitOverlay(args) => overlay::run(args, &out_dir),
    }
}
