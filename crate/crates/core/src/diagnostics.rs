//! The experimental pipeline: transcripts, proxy fitting, temperature
//! sweeps, shift sensitivity, routing cost, and parameter estimation.
//!
//! The three diagnostics:
//!
//! * **D1** sweeps the policy temperature `lambda` and tracks the true value
//!   against the proxy's own account of it. A proxy fitted from biased hard
//!   labels keeps claiming progress while the true value drains.
//! * **D2** reweights the mixture toward more hard mass and checks the
//!   linear value decomposition and its slope.
//! * **D3** measures the draw cost of routed majority testing against the
//!   `log(gamma/eta)/(2·alpha·eps²)` overlay.
//!
//! Sweeps share one context sample and one uniform draw per context across
//! the whole grid (common random numbers), so neighboring grid points are
//! directly comparable.

use crate::bounds;
use crate::channel::{pairwise_label, ChannelSpec};
use crate::env::{
    optimal_action, reward, sample_context, sample_context_conditional, sigmoid, Action,
    EnvironmentSpec, PolicySpec, WorldSign,
};
use crate::error::{Error, Result};
use crate::fit::{fit_preference_score, FitOptions};
use crate::measure::DiscreteMeasure;
use crate::protocols::{majority_batch, run_transcript, FlaggerSpec, QueryPolicy, TranscriptRecord};
use crate::rng::RngStream;
use crate::score::ScoreFunction;
use crate::stats::{kahan_sum, Estimate, Welford};

/// Values along a sweep grid with their references for gap computation.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticCurve {
    pub grid: Vec<f64>,
    pub true_value: Vec<Estimate>,
    pub proxy_value: Vec<Estimate>,
    /// D1: hard mass of the score-tilted context law; D2: the shifted mass.
    pub hard_mass: Vec<f64>,
    /// `V_w(pi^w)` on the shared sample.
    pub true_ref: Estimate,
    /// Proxy value of `pi^w` on the shared sample.
    pub proxy_ref: Estimate,
}

impl DiagnosticCurve {
    /// `G(i) = V_w(pi^w) - V_w(pi_i)`.
    pub fn true_gap(&self, i: usize) -> f64 {
        self.true_ref.mean - self.true_value[i].mean
    }

    /// Proxy analogue of the gap.
    pub fn proxy_gap(&self, i: usize) -> f64 {
        self.proxy_ref.mean - self.proxy_value[i].mean
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }
}

/// Collect an `n`-round transcript under a query policy.
pub fn collect_transcript(
    env: &EnvironmentSpec,
    w_true: WorldSign,
    ch: &ChannelSpec,
    n: u64,
    policy: &QueryPolicy,
    rng: &mut RngStream,
) -> Result<Vec<TranscriptRecord>> {
    if n == 0 {
        return Err(Error::invalid("transcript needs n >= 1"));
    }
    Ok(run_transcript(
        env,
        w_true,
        ch,
        n,
        |c, _, stream| policy.decide(env, c, stream),
        rng,
    ))
}

/// The stochastic temperature policy `P(a1) = sigmoid(lambda·score)`.
pub fn policy_lambda(score: ScoreFunction, lambda: f64) -> Result<PolicySpec> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid(format!("lambda {lambda} must be nonnegative")));
    }
    Ok(PolicySpec::Logistic { score, lambda })
}

/// D1: sweep the temperature and report true value, proxy value (proxy
/// reward convention: `r_hat(x, a1) = s(x)`, `r_hat(x, a0) = 0`), and the
/// hard mass of the context law tilted by the score.
pub fn diagnostic_d1(
    env: &EnvironmentSpec,
    w_true: WorldSign,
    score: &ScoreFunction,
    lambda_grid: &[f64],
    trials: u64,
    rng: &mut RngStream,
) -> Result<DiagnosticCurve> {
    if trials == 0 || lambda_grid.is_empty() {
        return Err(Error::invalid("d1 needs trials >= 1 and a nonempty grid"));
    }
    if lambda_grid.iter().any(|&l| l < 0.0) {
        return Err(Error::invalid("temperature grid must be nonnegative"));
    }

    // shared sample: context, uniform for the action draw, cached per-context
    // quantities
    let n = trials as usize;
    let mut svals = Vec::with_capacity(n);
    let mut us = Vec::with_capacity(n);
    let mut r_a1 = Vec::with_capacity(n);
    let mut r_a0 = Vec::with_capacity(n);
    let mut hard = Vec::with_capacity(n);
    let mut opt_a1 = Vec::with_capacity(n);
    for _ in 0..n {
        let c = sample_context(env, rng);
        svals.push(score.eval(env, &c));
        us.push(rng.uniform());
        r_a1.push(reward(env, w_true, &c, Action::A1));
        r_a0.push(reward(env, w_true, &c, Action::A0));
        hard.push(c.hard);
        opt_a1.push(optimal_action(env, w_true, &c) == Action::A1);
    }

    let mut true_value = Vec::with_capacity(lambda_grid.len());
    let mut proxy_value = Vec::with_capacity(lambda_grid.len());
    let mut hard_mass = Vec::with_capacity(lambda_grid.len());
    for &lambda in lambda_grid {
        let mut tv = Welford::new();
        let mut pv = Welford::new();
        for i in 0..n {
            let take_a1 = us[i] < sigmoid(lambda * svals[i]);
            tv.push(if take_a1 { r_a1[i] } else { r_a0[i] });
            pv.push(if take_a1 { svals[i] } else { 0.0 });
        }
        true_value.push(tv.estimate());
        proxy_value.push(pv.estimate());

        // self-normalized tilt of the empirical context law by the score
        let shift = svals.iter().map(|s| lambda * s).fold(f64::NEG_INFINITY, f64::max);
        let z = kahan_sum(svals.iter().map(|s| (lambda * s - shift).exp()));
        let zh = kahan_sum(
            svals
                .iter()
                .zip(&hard)
                .filter(|(_, &h)| h)
                .map(|(s, _)| (lambda * s - shift).exp()),
        );
        hard_mass.push(zh / z);
    }

    let mut tr = Welford::new();
    let mut pr = Welford::new();
    for i in 0..n {
        tr.push(if opt_a1[i] { r_a1[i] } else { r_a0[i] });
        pr.push(if opt_a1[i] { svals[i] } else { 0.0 });
    }

    Ok(DiagnosticCurve {
        grid: lambda_grid.to_vec(),
        true_value,
        proxy_value,
        hard_mass,
        true_ref: tr.estimate(),
        proxy_ref: pr.estimate(),
    })
}

/// D2 output: the curve plus the conditional means behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct D2Report {
    pub curve: DiagnosticCurve,
    pub cond_easy: Estimate,
    pub cond_hard: Estimate,
    /// Slope `dV/d(shift) = alpha·(E[r|hard] - E[r|easy])`.
    pub slope: f64,
}

/// D2: evaluate a fixed policy under hard mass inflated to
/// `(1+shift)·alpha`, via importance reweighting of the two components.
/// `true_value` carries the reweighted estimator, `proxy_value` the linear
/// decomposition `(1-alpha_s)·E[r|easy] + alpha_s·E[r|hard]` on the same
/// draws.
pub fn diagnostic_d2_shift(
    env: &EnvironmentSpec,
    w: WorldSign,
    pi: &PolicySpec,
    shift_factors: &[f64],
    trials: u64,
    rng: &mut RngStream,
) -> Result<D2Report> {
    if trials == 0 || shift_factors.is_empty() {
        return Err(Error::invalid("d2 needs trials >= 1 and a nonempty grid"));
    }
    let alpha = env.alpha();
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid("d2 reweighting needs alpha strictly inside (0, 1)"));
    }
    for &rho in shift_factors {
        if rho < 0.0 {
            return Err(Error::invalid(format!("shift factor {rho} negative")));
        }
        if (1.0 + rho) * alpha > 1.0 + 1e-12 {
            return Err(Error::invalid(format!(
                "shift factor {rho} pushes hard mass past 1"
            )));
        }
    }

    // one shared sample; actions are policy draws, independent of the shift
    let n = trials as usize;
    let mut rewards = Vec::with_capacity(n);
    let mut hard = Vec::with_capacity(n);
    let mut easy_acc = Welford::new();
    let mut hard_acc = Welford::new();
    let mut plain = Welford::new();
    for _ in 0..n {
        let c = sample_context(env, rng);
        let a = pi.act(env, &c, rng);
        let r = reward(env, w, &c, a);
        rewards.push(r);
        hard.push(c.hard);
        if c.hard {
            hard_acc.push(r);
        } else {
            easy_acc.push(r);
        }
        plain.push(r);
    }
    let cond_easy = easy_acc.estimate();
    let cond_hard = hard_acc.estimate();
    if cond_easy.n == 0 || cond_hard.n == 0 {
        return Err(Error::InsufficientData(
            "d2 needs draws from both mixture components".into(),
        ));
    }

    let mut true_value = Vec::with_capacity(shift_factors.len());
    let mut proxy_value = Vec::with_capacity(shift_factors.len());
    let mut hard_mass = Vec::with_capacity(shift_factors.len());
    for &rho in shift_factors {
        let alpha_s = (1.0 + rho) * alpha;
        let w_hard = alpha_s / alpha;
        let w_easy = (1.0 - alpha_s) / (1.0 - alpha);
        let mut weighted = Welford::new();
        for i in 0..n {
            let wi = if hard[i] { w_hard } else { w_easy };
            weighted.push(wi * rewards[i]);
        }
        true_value.push(weighted.estimate());
        let mean = (1.0 - alpha_s) * cond_easy.mean + alpha_s * cond_hard.mean;
        let se = ((1.0 - alpha_s) * cond_easy.se).hypot(alpha_s * cond_hard.se);
        proxy_value.push(Estimate { mean, se, n: trials });
        hard_mass.push(alpha_s);
    }

    let slope = alpha * (cond_hard.mean - cond_easy.mean);
    Ok(D2Report {
        curve: DiagnosticCurve {
            grid: shift_factors.to_vec(),
            true_value,
            proxy_value,
            hard_mass,
            true_ref: plain.estimate(),
            proxy_ref: plain.estimate(),
        },
        cond_easy,
        cond_hard,
        slope,
    })
}

/// One target row of the routing-cost table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct D3Row {
    pub eta: f64,
    /// Kept-context count the majority test ran to.
    pub t_kept: u64,
    pub queries: Estimate,
    pub error: Estimate,
    /// Theoretical overlay `log(gamma/eta) / (2·alpha·eps²)`.
    pub q_overlay: f64,
    /// `t_kept / keep_rate` for flaggers with known rates.
    pub q_expected: Option<f64>,
}

/// D3: run the routed majority test at each target gap and record realized
/// draw counts against the overlay curve.
#[allow(clippy::too_many_arguments)]
pub fn diagnostic_d3_routing(
    env: &EnvironmentSpec,
    ch: &ChannelSpec,
    flagger: &FlaggerSpec,
    eta_targets: &[f64],
    gamma_known: f64,
    trials: u64,
    draw_cap: u64,
    rng: &mut RngStream,
) -> Result<Vec<D3Row>> {
    if eta_targets.is_empty() {
        return Err(Error::invalid("d3 needs at least one eta target"));
    }
    let alpha = env.alpha();
    let eps = ch.epsilon();
    let mut rows = Vec::with_capacity(eta_targets.len());
    for &eta in eta_targets {
        if !(eta > 0.0 && eta < gamma_known) {
            return Err(Error::invalid(format!(
                "eta {eta} must lie strictly inside (0, gamma={gamma_known})"
            )));
        }
        let (t_real, q_overlay) = bounds::majority_query_budget(alpha, eps, gamma_known, eta)?;
        let t_kept = t_real.ceil().max(1.0) as u64;
        let report = majority_batch(env, None, ch, flagger, t_kept, draw_cap, trials, rng)?;
        let keep_rate = match flagger {
            FlaggerSpec::Oracle => Some(alpha),
            FlaggerSpec::Noisy { tau, phi } => Some(alpha * tau + (1.0 - alpha) * phi),
            FlaggerSpec::ScoreThreshold { .. } => None,
        };
        rows.push(D3Row {
            eta,
            t_kept,
            queries: report.draws,
            error: report.error,
            q_overlay,
            q_expected: keep_rate.map(|k| t_kept as f64 / k),
        });
    }
    Ok(rows)
}

/// Plug-in estimates of the governing parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateReport {
    pub alpha_hat: Estimate,
    pub epsilon_hat: Estimate,
    pub gamma_hat: Estimate,
    pub audit_size: u64,
}

impl EstimateReport {
    /// The plug-in floor `(gamma_hat/4)·exp(-n·alpha_hat·kappa(eps_hat))`
    /// over a grid of round budgets.
    pub fn plug_in_lower_bound(&self, n_grid: &[u64]) -> Result<Vec<(u64, f64)>> {
        let eps = self.epsilon_hat.mean.clamp(0.0, 0.49);
        let alpha = self.alpha_hat.mean.clamp(0.0, 1.0);
        let gamma = self.gamma_hat.mean.max(1e-12);
        n_grid
            .iter()
            .map(|&n| Ok((n, bounds::lower_bound_gap(gamma, n, alpha, eps)?)))
            .collect()
    }
}

/// Estimate `alpha` from the flagged fraction (corrected by known flagger
/// rates when supplied), `epsilon` from the label bias on adjudicated hard
/// comparisons, and `gamma` from the policy margin on flagged contexts.
pub fn estimate_parameters(
    env: &EnvironmentSpec,
    w_true: WorldSign,
    ch: &ChannelSpec,
    flagger: &FlaggerSpec,
    known_rates: Option<(f64, f64)>,
    audit_size: u64,
    rng: &mut RngStream,
) -> Result<EstimateReport> {
    if audit_size == 0 {
        return Err(Error::InsufficientData("audit set is empty".into()));
    }

    // alpha and gamma from one audit pass
    let mut flagged = 0u64;
    let mut margin_acc = Welford::new();
    for _ in 0..audit_size {
        let c = sample_context(env, rng);
        let fired = flagger.fires(env, &c, rng);
        flagged += u64::from(fired);
        let margin = if fired {
            let a_plus = optimal_action(env, WorldSign::Plus, &c);
            let a_minus = optimal_action(env, WorldSign::Minus, &c);
            (reward(env, WorldSign::Plus, &c, a_plus) - reward(env, WorldSign::Plus, &c, a_minus))
                .abs()
        } else {
            0.0
        };
        margin_acc.push(margin);
    }
    let flagged_fraction = Estimate::from_bernoulli(flagged, audit_size);
    let alpha_hat = match known_rates {
        Some((tau, phi)) => {
            if (tau - phi).abs() < 1e-12 {
                return Err(Error::invalid("flagger rates coincide; alpha not identified"));
            }
            Estimate {
                mean: ((flagged_fraction.mean - phi) / (tau - phi)).clamp(0.0, 1.0),
                se: flagged_fraction.se / (tau - phi).abs(),
                n: audit_size,
            }
        }
        None => flagged_fraction,
    };

    // epsilon from adjudicated (ground-truth hard) comparisons
    let mut ones = 0u64;
    for _ in 0..audit_size {
        let c = sample_context_conditional(env, true, rng);
        ones += u64::from(pairwise_label(&c, w_true, ch, rng).0);
    }
    let label_mean = Estimate::from_bernoulli(ones, audit_size);
    let epsilon_hat = Estimate {
        mean: (label_mean.mean - 0.5).abs(),
        se: label_mean.se,
        n: audit_size,
    };

    Ok(EstimateReport {
        alpha_hat,
        epsilon_hat,
        gamma_hat: margin_acc.estimate(),
        audit_size,
    })
}

/// One grid point of the proxy-true divergence scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivergencePoint {
    pub lambda: f64,
    /// `Delta_PV = E_q[r_hat - r_w]`.
    pub delta_pv: f64,
    /// Centered finite difference of `delta_pv` in `lambda`.
    pub d_delta_fd: f64,
    /// `Cov_q(r_hat - r_w, s)`.
    pub covariance: f64,
}

/// Divergence between proxy and true value of a fixed rule under tilting.
/// Atoms must carry the tilting score and both reward attributes.
pub fn proxy_true_divergence(
    mu: &DiscreteMeasure,
    s: &str,
    r_hat: &str,
    r_w: &str,
    lambda_grid: &[f64],
) -> Result<Vec<DivergencePoint>> {
    let diff: Vec<f64> = mu
        .attr(r_hat)?
        .iter()
        .zip(mu.attr(r_w)?)
        .map(|(&a, &b)| a - b)
        .collect();
    let mu = mu.clone().with_attr("__pv_diff", diff)?;
    let h = crate::tilting::FD_STEP;
    lambda_grid
        .iter()
        .map(|&lambda| {
            let delta_pv = crate::tilting::tilt_expectation(&mu, s, "__pv_diff", lambda)?;
            let up = crate::tilting::tilt_expectation(&mu, s, "__pv_diff", lambda + h)?;
            let dn = crate::tilting::tilt_expectation(&mu, s, "__pv_diff", lambda - h)?;
            let covariance = crate::tilting::tilt_derivative(&mu, s, "__pv_diff", lambda)?;
            Ok(DivergencePoint {
                lambda,
                delta_pv,
                d_delta_fd: (up - dn) / (2.0 * h),
                covariance,
            })
        })
        .collect()
}

/// The fixed configuration the temperature-sweep phenomenon is checked on:
/// `d = 10`, `alpha = 0.1`, `eps = 0.1`, hard center `4·upsilon`, transcript
/// of `1e5` always-queried rounds, data world `-1` (the world whose channel
/// systematically favors the wrong action, so the fitted proxy misleads).
pub fn d1_reference_env() -> EnvironmentSpec {
    EnvironmentSpec::aligned(10, 0.1, 4.0).expect("reference environment is valid")
}

pub const D1_REFERENCE_WORLD: WorldSign = WorldSign::Minus;
pub const D1_REFERENCE_EPSILON: f64 = 0.1;
pub const D1_REFERENCE_ROUNDS: u64 = 100_000;
pub const D1_REFERENCE_GRID: [f64; 9] = [0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0];
pub const D1_REFERENCE_TRIALS: u64 = 40_000;

/// One seeded run of the reference configuration.
#[derive(Debug, Clone)]
pub struct D1ReferenceOutcome {
    pub seed: u64,
    pub curve: DiagnosticCurve,
    /// Some adjacent grid pair has the proxy gap shrinking while the true
    /// gap grows.
    pub divergence_found: bool,
}

pub fn d1_reference_run(seed: u64) -> Result<D1ReferenceOutcome> {
    let env = d1_reference_env();
    let ch = ChannelSpec::constant(D1_REFERENCE_EPSILON)?;
    let mut rng = RngStream::substream(seed, &[0xD1]);
    let transcript = collect_transcript(
        &env,
        D1_REFERENCE_WORLD,
        &ch,
        D1_REFERENCE_ROUNDS,
        &QueryPolicy::Always,
        &mut rng,
    )?;
    let score = fit_preference_score(&env, D1_REFERENCE_WORLD, &transcript, FitOptions::default())?;
    let curve = diagnostic_d1(
        &env,
        D1_REFERENCE_WORLD,
        &score,
        &D1_REFERENCE_GRID,
        D1_REFERENCE_TRIALS,
        &mut rng,
    )?;
    let divergence_found = (1..curve.len()).any(|i| {
        curve.proxy_gap(i) < curve.proxy_gap(i - 1) && curve.true_gap(i) > curve.true_gap(i - 1)
    });
    Ok(D1ReferenceOutcome {
        seed,
        curve,
        divergence_found,
    })
}
