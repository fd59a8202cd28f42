//! The `diagnostics` subcommand: one CSV per suite.

use crate::{deliver, scans::parse_grid};
use clap::Args;
use misspec_core::channel::ChannelSpec;
use misspec_core::diagnostics::{
    d1_reference_run, diagnostic_d2_shift, diagnostic_d3_routing, estimate_parameters,
    proxy_true_divergence,
};
use misspec_core::env::{EnvironmentSpec, PolicySpec, WorldSign};
use misspec_core::error::{Error, Result};
use misspec_core::measure::DiscreteMeasure;
use misspec_core::multiobjective::{multiobjective_gap_check, random_instance};
use misspec_core::protocols::{FlaggerSpec, DEFAULT_DRAW_CAP};
use misspec_core::rng::RngStream;
use std::path::PathBuf;

#[derive(Args)]
pub struct DiagnosticsArgs {
    /// One of: d1, d2, d3, estimate, tri, divergence.
    #[arg(long)]
    pub suite: String,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.1)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 4)]
    pub d: usize,
    #[arg(long, default_value_t = 100_000)]
    pub trials: u64,
    #[arg(long, default_value = "0,0.5,1")]
    pub shift_grid: String,
    /// Gamma-to-target ratios for d3.
    #[arg(long, default_value = "2,5,10")]
    pub eta_ratios: String,
    #[arg(long, default_value_t = 0.0)]
    pub tau: f64,
    #[arg(long, default_value_t = 0.0)]
    pub phi: f64,
    #[arg(long, default_value_t = 100_000)]
    pub audit_size: u64,
    /// Instances for the tri suite.
    #[arg(long, default_value_t = 1000)]
    pub instances: u64,
    #[arg(long, default_value = "lin:0:2:21")]
    pub lambda_grid: String,
}

pub fn run(args: &DiagnosticsArgs, seed: u64, out_dir: &Option<PathBuf>) -> Result<()> {
    match args.suite.as_str() {
        "d1" => run_d1(seed, out_dir),
        "d2" => run_d2(args, seed, out_dir),
        "d3" => run_d3(args, seed, out_dir),
        "estimate" => run_estimate(args, seed, out_dir),
        "tri" => run_tri(args, seed, out_dir),
        "divergence" => run_divergence(args, seed, out_dir),
        other => Err(Error::invalid(format!("unknown diagnostics suite `{other}`"))),
    }
}

/// The reference temperature sweep for one seed.
fn run_d1(seed: u64, out_dir: &Option<PathBuf>) -> Result<()> {
    let outcome = d1_reference_run(seed)?;
    let curve = &outcome.curve;
    let mut rows = Vec::with_capacity(curve.len());
    for i in 0..curve.len() {
        rows.push(format!(
            "{},{},{},{},{},{},{},{},{}",
            seed,
            curve.grid[i],
            curve.true_value[i].mean,
            curve.true_value[i].se,
            curve.proxy_value[i].mean,
            curve.proxy_value[i].se,
            curve.hard_mass[i],
            curve.true_gap(i),
            curve.proxy_gap(i),
        ));
    }
    deliver(
        out_dir,
        "diagnostics_d1",
        "seed,lambda,true_value,true_se,proxy_value,proxy_se,hard_mass,true_gap,proxy_gap",
        &rows,
    )?;
    println!(
        "# divergence (proxy gap down while true gap up): {}",
        outcome.divergence_found
    );
    Ok(())
}

fn run_d2(args: &DiagnosticsArgs, seed: u64, out_dir: &Option<PathBuf>) -> Result<()> {
    let env = EnvironmentSpec::aligned(args.d, args.alpha, 2.0)?;
    let shift = parse_grid(&args.shift_grid)?;
    let mut rng = RngStream::seed(seed);
    let pi = PolicySpec::Optimal(WorldSign::Minus);
    let report =
        diagnostic_d2_shift(&env, WorldSign::Plus, &pi, &shift, args.trials, &mut rng)?;
    let curve = &report.curve;
    let mut rows = Vec::with_capacity(curve.len());
    for i in 0..curve.len() {
        rows.push(format!(
            "{},{},{},{},{},{},{},{}",
            seed,
            curve.grid[i],
            curve.true_value[i].mean,
            curve.true_value[i].se,
            curve.proxy_value[i].mean,
            curve.proxy_value[i].se,
            curve.hard_mass[i],
            report.slope,
        ));
    }
    deliver(
        out_dir,
        "diagnostics_d2",
        "seed,shift,value,value_se,decomposition,decomposition_se,hard_mass,slope",
        &rows,
    )
}

fn run_d3(args: &DiagnosticsArgs, seed: u64, out_dir: &Option<PathBuf>) -> Result<()> {
    let env = EnvironmentSpec::aligned(args.d, args.alpha, 2.0)?;
    let ch = ChannelSpec::constant(args.epsilon)?;
    let gamma = args.alpha; // synthetic identity
    let ratios = parse_grid(&args.eta_ratios)?;
    let etas: Vec<f64> = ratios.iter().map(|r| gamma / r).collect();
    let flagger = if args.tau > 0.0 {
        FlaggerSpec::noisy(args.tau, args.phi)?
    } else {
        FlaggerSpec::Oracle
    };
    let mut rng = RngStream::seed(seed);
    let rows_data = diagnostic_d3_routing(
        &env,
        &ch,
        &flagger,
        &etas,
        gamma,
        args.trials.min(10_000),
        DEFAULT_DRAW_CAP,
        &mut rng,
    )?;
    let rows: Vec<String> = rows_data
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{},{},{},{}",
                seed,
                r.eta,
                r.t_kept,
                r.queries.mean,
                r.queries.se,
                r.error.mean,
                r.q_overlay,
                r.q_expected.map(|q| q.to_string()).unwrap_or_default(),
            )
        })
        .collect();
    deliver(
        out_dir,
        "diagnostics_d3",
        "seed,eta,T,mean_queries,se_queries,error,q_overlay,q_expected",
        &rows,
    )
}

fn run_estimate(args: &DiagnosticsArgs, seed: u64, out_dir: &Option<PathBuf>) -> Result<()> {
    let env = EnvironmentSpec::aligned(args.d, args.alpha, 2.0)?;
    let ch = ChannelSpec::constant(args.epsilon)?;
    let mut rng = RngStream::seed(seed);
    let report = estimate_parameters(
        &env,
        WorldSign::Plus,
        &ch,
        &FlaggerSpec::Oracle,
        None,
        args.audit_size,
        &mut rng,
    )?;
    let n_grid: Vec<u64> = vec![0, 50, 100, 200, 400, 800, 1600];
    let curve = report.plug_in_lower_bound(&n_grid)?;
    let rows: Vec<String> = curve
        .iter()
        .map(|(n, bound)| {
            format!(
                "{},{},{},{},{},{},{},{},{}",
                seed,
                report.audit_size,
                report.alpha_hat.mean,
                report.alpha_hat.se,
                report.epsilon_hat.mean,
                report.epsilon_hat.se,
                report.gamma_hat.mean,
                n,
                bound
            )
        })
        .collect();
    deliver(
        out_dir,
        "diagnostics_estimate",
        "seed,audit_size,alpha_hat,alpha_se,epsilon_hat,epsilon_se,gamma_hat,n,plug_in_bound",
        &rows,
    )
}

fn run_tri(args: &DiagnosticsArgs, seed: u64, out_dir: &Option<PathBuf>) -> Result<()> {
    let mut rng = RngStream::seed(seed);
    let mut rows = Vec::with_capacity(args.instances as usize);
    for i in 0..args.instances {
        let atoms = 3 + (rng.next_u64() % 8) as usize;
        let subset = 1 + (rng.next_u64() % atoms as u64) as usize;
        let mu = random_instance(atoms, subset.min(atoms), &mut rng);
        let policy: Vec<usize> = (0..atoms).map(|_| (rng.next_u64() % 3) as usize).collect();
        let check = multiobjective_gap_check(&mu, &policy)?;
        rows.push(format!(
            "{},{},{},{},{},{},{}",
            i,
            atoms,
            check.alpha_s,
            check.min_margin,
            check.lhs,
            check.rhs,
            check.rhs_composite
        ));
    }
    deliver(
        out_dir,
        "diagnostics_tri",
        "instance,atoms,alpha_s,min_margin,lhs,rhs,rhs_composite",
        &rows,
    )
}

fn run_divergence(args: &DiagnosticsArgs, seed: u64, out_dir: &Option<PathBuf>) -> Result<()> {
    let mut rng = RngStream::seed(seed);
    let grid = parse_grid(&args.lambda_grid)?;
    let n = 30usize;
    // construct an instance with proxy error positively aligned with the score
    let s: Vec<f64> = (0..n).map(|_| 3.0 * (rng.uniform() - 0.5)).collect();
    let rhat: Vec<f64> = s.iter().map(|si| 0.5 + 0.1 * si + 0.05 * rng.uniform()).collect();
    let rw: Vec<f64> = (0..n).map(|_| 0.5).collect();
    let mu = DiscreteMeasure::uniform([
        ("s".to_string(), s),
        ("rhat".to_string(), rhat),
        ("rw".to_string(), rw),
    ])?;
    let points = proxy_true_divergence(&mu, "s", "rhat", "rw", &grid)?;
    let rows: Vec<String> = points
        .iter()
        .map(|p| format!("{},{},{},{}", p.lambda, p.delta_pv, p.d_delta_fd, p.covariance))
        .collect();
    deliver(
        out_dir,
        "diagnostics_divergence",
        "lambda,delta_pv,d_delta_fd,covariance",
        &rows,
    )
}
