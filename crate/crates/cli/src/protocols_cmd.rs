//! Protocol simulation subcommands: minimax, route, sprt.

use crate::deliver;
use clap::Args;
use misspec_core::bounds;
use misspec_core::channel::ChannelSpec;
use misspec_core::env::EnvironmentSpec;
use misspec_core::error::{Error, Result};
use misspec_core::protocols::{
    majority_batch, simulate_minimax_test, sprt_batch, FlaggerSpec, QueryPolicy, SprtThresholds,
    DEFAULT_DRAW_CAP,
};
use misspec_core::rng::RngStream;
use std::path::PathBuf;

fn cell_env(d: usize, alpha: f64) -> Result<EnvironmentSpec> {
    EnvironmentSpec::aligned(d, alpha, 2.0)
}

fn flagger(tau: f64, phi: f64) -> Result<FlaggerSpec> {
    if tau >= 1.0 && phi <= 0.0 {
        Ok(FlaggerSpec::Oracle)
    } else {
        FlaggerSpec::noisy(tau, phi)
    }
}

#[derive(Args)]
pub struct MinimaxArgs {
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.1)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    /// Interaction rounds per trial.
    #[arg(long, default_value_t = 100)]
    pub n: u64,
    /// Query policy: `always` or `route` (flagger with --tau/--phi).
    #[arg(long, default_value = "always")]
    pub policy: String,
    #[arg(long, default_value_t = 1.0)]
    pub tau: f64,
    #[arg(long, default_value_t = 0.0)]
    pub phi: f64,
    #[arg(long, default_value_t = 10_000)]
    pub trials: u64,
}

pub fn run_minimax(args: &MinimaxArgs, seed: u64, out_dir: &Option<PathBuf>) -> Result<()> {
    let env = cell_env(args.d, args.alpha)?;
    let ch = ChannelSpec::constant(args.epsilon)?;
    let policy = match args.policy.as_str() {
        "always" => QueryPolicy::Always,
        "route" => QueryPolicy::Route(flagger(args.tau, args.phi)?),
        other => return Err(Error::invalid(format!("unknown policy `{other}`"))),
    };
    let mut rng = RngStream::seed(seed);
    let report = simulate_minimax_test(&env, &ch, args.n, &policy, args.trials, &mut rng)?;
    let floor_analytic =
        bounds::bh_bayes_error(args.n as f64 * args.alpha * bounds::kappa(args.epsilon)?)?;
    let floor_realized = bounds::bh_bayes_error(report.mean_kl)?;
    let header =
        "n,alpha,epsilon,d,policy,trials,error,error_se,mean_kl,bh_floor_analytic,bh_floor_realized";
    let row = format!(
        "{},{},{},{},{},{},{},{},{},{},{}",
        args.n,
        args.alpha,
        args.epsilon,
        args.d,
        args.policy,
        report.trials,
        report.error.mean,
        report.error.se,
        report.mean_kl,
        floor_analytic,
        floor_realized
    );
    deliver(out_dir, "minimax", header, &[row])
}

#[derive(Args)]
pub struct RouteArgs {
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.1)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    /// Kept-context count of the majority test.
    #[arg(long = "T", default_value_t = 100)]
    pub t_kept: u64,
    #[arg(long, default_value_t = 1.0)]
    pub tau: f64,
    #[arg(long, default_value_t = 0.0)]
    pub phi: f64,
    #[arg(long, default_value_t = 1_000)]
    pub trials: u64,
}

pub fn run_route(args: &RouteArgs, seed: u64, out_dir: &Option<PathBuf>) -> Result<()> {
    let env = cell_env(args.d, args.alpha)?;
    let ch = ChannelSpec::constant(args.epsilon)?;
    let fl = flagger(args.tau, args.phi)?;
    let mut rng = RngStream::seed(seed);
    let report = majority_batch(
        &env,
        None,
        &ch,
        &fl,
        args.t_kept,
        DEFAULT_DRAW_CAP,
        args.trials,
        &mut rng,
    )?;
    let keep_rate = args.alpha * args.tau + (1.0 - args.alpha) * args.phi;
    let header = "T,alpha,epsilon,d,tau,phi,trials,mean_draws,se_draws,error,error_se,kept_fraction,q_expected";
    let row = format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{}",
        args.t_kept,
        args.alpha,
        args.epsilon,
        args.d,
        args.tau,
        args.phi,
        report.trials,
        report.draws.mean,
        report.draws.se,
        report.error.mean,
        report.error.se,
        report.kept_fraction.mean,
        args.t_kept as f64 / keep_rate
    );
    deliver(out_dir, "route", header, &[row])
}

#[derive(Args)]
pub struct SprtArgs {
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.1)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    /// Symmetric target error probability.
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    #[arg(long, default_value_t = 1.0)]
    pub tau: f64,
    #[arg(long, default_value_t = 0.0)]
    pub phi: f64,
    #[arg(long, default_value_t = 1_000)]
    pub trials: u64,
    #[arg(long, default_value_t = 1_000_000)]
    pub hit_cap: u64,
    /// Use the literal Wald boundaries instead of the exact-level ones.
    #[arg(long, default_value_t = false)]
    pub wald: bool,
}

pub fn run_sprt(args: &SprtArgs, seed: u64, out_dir: &Option<PathBuf>) -> Result<()> {
    let env = cell_env(args.d, args.alpha)?;
    let ch = ChannelSpec::constant(args.epsilon)?;
    let fl = flagger(args.tau, args.phi)?;
    let thresholds = if args.wald {
        SprtThresholds::Wald
    } else {
        SprtThresholds::ExactLevel
    };
    let mut rng = RngStream::seed(seed);
    let report = sprt_batch(
        &env,
        None,
        &ch,
        &fl,
        args.delta,
        thresholds,
        args.hit_cap,
        DEFAULT_DRAW_CAP,
        args.trials,
        &mut rng,
    )?;
    let ceiling = bounds::sprt_expected_hits(args.delta, args.epsilon)?;
    let header = "delta,alpha,epsilon,d,tau,phi,trials,error,error_se,mean_hits,se_hits,mean_draws,hit_ceiling";
    let row = format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{}",
        args.delta,
        args.alpha,
        args.epsilon,
        args.d,
        args.tau,
        args.phi,
        report.trials,
        report.error.mean,
        report.error.se,
        report.hits.mean,
        report.hits.se,
        report.draws.mean,
        ceiling
    );
    deliver(out_dir, "sprt", header, &[row])
}
