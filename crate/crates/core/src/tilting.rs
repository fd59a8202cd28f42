//! Exponential tilting over finite-support measures.
//!
//! For a score attribute `s` and parameter `lambda`, the tilted law is
//! `q_lambda(i) ∝ w_i·exp(lambda·s_i)` with log-partition
//! `A(lambda) = log Σ w_i·exp(lambda·s_i)`. The workhorse identities:
//!
//! ```text
//! A'(lambda)  = E_q[s]            A''(lambda) = Var_q(s) >= 0
//! d/dlambda E_q[f] = Cov_q(f, s)
//! KL(q||mu)   = lambda·A'(lambda) - A(lambda)
//! KL(mu||q)   = A(lambda) - lambda·E_mu[s]
//! ```
//!
//! Tilting to a prescribed score mean is the I-projection: the KL-closest
//! measure to the base among those meeting the moment constraint.

use crate::error::{Error, Result};
use crate::measure::DiscreteMeasure;
use crate::stats::{kahan_sum, weighted_covariance, weighted_mean, weighted_variance};

/// State of a one-parameter tilt: log-partition and the first two
/// derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TiltState {
    pub lambda: f64,
    pub log_z: f64,
    /// `A'(lambda) = E_q[s]`.
    pub mean_s: f64,
    /// `A''(lambda) = Var_q(s)`.
    pub var_s: f64,
}

/// Tilted weights `w_i·exp(lambda·s_i - A)` computed with a max shift.
fn tilted_weights(weights: &[f64], s: &[f64], lambda: f64) -> (Vec<f64>, f64) {
    // Max over atoms with positive weight, so a zero-weight outlier cannot
    // push everything into the underflow range.
    let shift = weights
        .iter()
        .zip(s)
        .filter(|(&w, _)| w > 0.0)
        .map(|(_, &si)| lambda * si)
        .fold(f64::NEG_INFINITY, f64::max);
    let unnorm: Vec<f64> = weights
        .iter()
        .zip(s)
        .map(|(&w, &si)| w * (lambda * si - shift).exp())
        .collect();
    let z = kahan_sum(unnorm.iter().copied());
    let log_z = shift + z.ln();
    let q: Vec<f64> = unnorm.into_iter().map(|u| u / z).collect();
    (q, log_z)
}

/// `A(lambda) = log Σ w_i·exp(lambda·s_i)`; `A(0) = 0`.
pub fn log_partition(mu: &DiscreteMeasure, s: &str, lambda: f64) -> Result<f64> {
    let (_, log_z) = tilted_weights(mu.weights(), mu.attr(s)?, lambda);
    Ok(log_z)
}

/// The tilted law on the same atoms.
pub fn tilt(mu: &DiscreteMeasure, s: &str, lambda: f64) -> Result<DiscreteMeasure> {
    let (q, _) = tilted_weights(mu.weights(), mu.attr(s)?, lambda);
    // renormalize the compensated sum so the constructor's 1e-12 gate holds
    let total = kahan_sum(q.iter().copied());
    mu.reweighted(q.into_iter().map(|w| w / total).collect())
}

/// Log-partition and its first two derivatives at `lambda`.
pub fn tilt_state(mu: &DiscreteMeasure, s: &str, lambda: f64) -> Result<TiltState> {
    let svals = mu.attr(s)?;
    let (q, log_z) = tilted_weights(mu.weights(), svals, lambda);
    let mean_s = weighted_mean(&q, svals);
    let var_s = weighted_variance(&q, svals);
    Ok(TiltState {
        lambda,
        log_z,
        mean_s,
        var_s,
    })
}

/// `E_{q_lambda}[f]`.
pub fn tilt_expectation(mu: &DiscreteMeasure, s: &str, f: &str, lambda: f64) -> Result<f64> {
    let (q, _) = tilted_weights(mu.weights(), mu.attr(s)?, lambda);
    Ok(weighted_mean(&q, mu.attr(f)?))
}

/// `d/dlambda E_{q_lambda}[f] = Cov_{q_lambda}(f, s)`.
pub fn tilt_derivative(mu: &DiscreteMeasure, s: &str, f: &str, lambda: f64) -> Result<f64> {
    let svals = mu.attr(s)?;
    let (q, _) = tilted_weights(mu.weights(), svals, lambda);
    Ok(weighted_covariance(&q, mu.attr(f)?, svals))
}

/// Forward and reverse KL between the tilt and the base.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlPair {
    /// `KL(q_lambda || mu) = lambda·A'(lambda) - A(lambda)`.
    pub forward: f64,
    /// `KL(mu || q_lambda) = A(lambda) - lambda·E_mu[s]`.
    pub reverse: f64,
}

pub fn kl_tilt(mu: &DiscreteMeasure, s: &str, lambda: f64) -> Result<KlPair> {
    let state = tilt_state(mu, s, lambda)?;
    let base_mean = mu.mean(s)?;
    Ok(KlPair {
        forward: lambda * state.mean_s - state.log_z,
        reverse: state.log_z - lambda * base_mean,
    })
}

/// One point of the hard-mass drift curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HardMassPoint {
    pub lambda: f64,
    /// `rho(lambda) = E_q[H]`.
    pub rho: f64,
    /// `rho'(lambda) = Cov_q(H, s)`.
    pub drho: f64,
    /// `d/dlambda log rho = drho / rho`; `None` where `rho = 0`.
    pub dlog_rho: Option<f64>,
}

/// Evaluate `rho` and its derivative along a grid of tilt parameters.
pub fn hard_mass_curve(
    mu: &DiscreteMeasure,
    s: &str,
    h: &str,
    lambda_grid: &[f64],
) -> Result<Vec<HardMassPoint>> {
    let svals = mu.attr(s)?;
    let hvals = mu.attr(h)?;
    if hvals.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::invalid(format!("attribute `{h}` must be a 0/1 indicator")));
    }
    let mut out = Vec::with_capacity(lambda_grid.len());
    for &lambda in lambda_grid {
        let (q, _) = tilted_weights(mu.weights(), svals, lambda);
        let rho = weighted_mean(&q, hvals);
        let drho = weighted_covariance(&q, hvals, svals);
        let dlog_rho = if rho > 0.0 { Some(drho / rho) } else { None };
        out.push(HardMassPoint {
            lambda,
            rho,
            drho,
            dlog_rho,
        });
    }
    Ok(out)
}

/// Result of moment matching by tilting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IProjection {
    pub lambda_star: f64,
    pub achieved_mean: f64,
}

const IPROJ_MAX_ITER: usize = 200;
const IPROJ_BRACKET_CAP: usize = 80;

/// Solve `A'(lambda*) = m` by bisection. `A'` is nondecreasing, so bracket
/// expansion by doubling followed by bisection is globally convergent.
///
/// `m` must lie strictly inside the attainable range, the open interval
/// between the smallest and largest score value carrying positive weight.
pub fn i_projection(mu: &DiscreteMeasure, s: &str, m: f64, tol: f64) -> Result<IProjection> {
    if !(tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let svals = mu.attr(s)?;
    let weights = mu.weights();
    let mut lo_s = f64::INFINITY;
    let mut hi_s = f64::NEG_INFINITY;
    for (&w, &si) in weights.iter().zip(svals) {
        if w > 0.0 {
            lo_s = lo_s.min(si);
            hi_s = hi_s.max(si);
        }
    }
    if lo_s == hi_s {
        // constant score: only its own value is attainable
        if (m - lo_s).abs() <= tol {
            return Ok(IProjection {
                lambda_star: 0.0,
                achieved_mean: lo_s,
            });
        }
        return Err(Error::InfeasibleMoment { target: m, lo: lo_s, hi: hi_s });
    }
    if !(m > lo_s && m < hi_s) {
        return Err(Error::InfeasibleMoment { target: m, lo: lo_s, hi: hi_s });
    }

    let mean_at = |lambda: f64| -> f64 {
        let (q, _) = tilted_weights(weights, svals, lambda);
        weighted_mean(&q, svals)
    };

    // bracket by doubling
    let (mut lo, mut hi) = (-1.0f64, 1.0f64);
    let mut grew = 0;
    while mean_at(lo) > m {
        lo *= 2.0;
        grew += 1;
        if grew > IPROJ_BRACKET_CAP {
            return Err(Error::InfeasibleMoment { target: m, lo: lo_s, hi: hi_s });
        }
    }
    grew = 0;
    while mean_at(hi) < m {
        hi *= 2.0;
        grew += 1;
        if grew > IPROJ_BRACKET_CAP {
            return Err(Error::InfeasibleMoment { target: m, lo: lo_s, hi: hi_s });
        }
    }

    let mut mid = 0.5 * (lo + hi);
    let mut achieved = mean_at(mid);
    for _ in 0..IPROJ_MAX_ITER {
        if (achieved - m).abs() <= tol {
            break;
        }
        if achieved < m {
            lo = mid;
        } else {
            hi = mid;
        }
        mid = 0.5 * (lo + hi);
        achieved = mean_at(mid);
    }
    Ok(IProjection {
        lambda_star: mid,
        achieved_mean: achieved,
    })
}

fn vector_scores<'a>(mu: &'a DiscreteMeasure, names: &[&str]) -> Result<Vec<&'a [f64]>> {
    if names.is_empty() {
        return Err(Error::invalid("vector tilt needs at least one score"));
    }
    names.iter().map(|n| mu.attr(n)).collect()
}

fn vector_tilted_weights(
    weights: &[f64],
    scores: &[&[f64]],
    theta: &[f64],
) -> Result<(Vec<f64>, f64)> {
    if scores.len() != theta.len() {
        return Err(Error::invalid(format!(
            "{} scores but {} tilt coordinates",
            scores.len(),
            theta.len()
        )));
    }
    let n = weights.len();
    let mut combined = vec![0.0f64; n];
    for (coef, col) in theta.iter().zip(scores) {
        for (c, &v) in combined.iter_mut().zip(*col) {
            *c += coef * v;
        }
    }
    let shift = weights
        .iter()
        .zip(&combined)
        .filter(|(&w, _)| w > 0.0)
        .map(|(_, &u)| u)
        .fold(f64::NEG_INFINITY, f64::max);
    let unnorm: Vec<f64> = weights
        .iter()
        .zip(&combined)
        .map(|(&w, &u)| w * (u - shift).exp())
        .collect();
    let z = kahan_sum(unnorm.iter().copied());
    Ok((unnorm.into_iter().map(|u| u / z).collect(), shift + z.ln()))
}

/// `A(theta)` for a vector of score attributes.
pub fn vector_log_partition(mu: &DiscreteMeasure, s_names: &[&str], theta: &[f64]) -> Result<f64> {
    let scores = vector_scores(mu, s_names)?;
    let (_, log_z) = vector_tilted_weights(mu.weights(), &scores, theta)?;
    Ok(log_z)
}

/// The vector-tilted law.
pub fn vector_tilt(mu: &DiscreteMeasure, s_names: &[&str], theta: &[f64]) -> Result<DiscreteMeasure> {
    let scores = vector_scores(mu, s_names)?;
    let (q, _) = vector_tilted_weights(mu.weights(), &scores, theta)?;
    let total = kahan_sum(q.iter().copied());
    mu.reweighted(q.into_iter().map(|w| w / total).collect())
}

/// Gradient `∇_theta E_{q_theta}[f] = Cov_{q_theta}(f, s_j)` per coordinate.
pub fn vector_tilt_gradient(
    mu: &DiscreteMeasure,
    s_names: &[&str],
    f: &str,
    theta: &[f64],
) -> Result<Vec<f64>> {
    let scores = vector_scores(mu, s_names)?;
    let fvals = mu.attr(f)?;
    let (q, _) = vector_tilted_weights(mu.weights(), &scores, theta)?;
    Ok(scores
        .iter()
        .map(|col| weighted_covariance(&q, fvals, col))
        .collect())
}

/// `∇A(theta) = E_{q_theta}[s]` per coordinate.
pub fn vector_tilt_mean(mu: &DiscreteMeasure, s_names: &[&str], theta: &[f64]) -> Result<Vec<f64>> {
    let scores = vector_scores(mu, s_names)?;
    let (q, _) = vector_tilted_weights(mu.weights(), &scores, theta)?;
    Ok(scores.iter().map(|col| weighted_mean(&q, col)).collect())
}

/// `∇²A(theta)`: the covariance matrix of the scores under the tilt.
/// Symmetric positive semidefinite.
pub fn vector_tilt_hessian(
    mu: &DiscreteMeasure,
    s_names: &[&str],
    theta: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let scores = vector_scores(mu, s_names)?;
    let (q, _) = vector_tilted_weights(mu.weights(), &scores, theta)?;
    let k = scores.len();
    let mut h = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in i..k {
            let c = weighted_covariance(&q, scores[i], scores[j]);
            h[i][j] = c;
            h[j][i] = c;
        }
    }
    Ok(h)
}

/// Both readings of the effect of sharpening a logistic policy in `lambda`:
/// the measured slope of `E_mu[r(X, pi_lambda(X))]` and the covariance form.
/// The two are reported side by side; no identity between them is assumed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomizationDerivative {
    /// Centered finite difference of the expected reward in `lambda`.
    pub finite_difference: f64,
    /// `Cov_mu(r(X, pi_lambda(X)), s(X))` with the per-atom expected reward
    /// under the randomized action.
    pub covariance: f64,
}

pub const FD_STEP: f64 = 1e-4;

/// Expected reward of the logistic policy `P(a1) = sigmoid(lambda·s)` given
/// per-atom rewards for both actions, plus the covariance reading.
pub fn policy_randomization_derivative(
    mu: &DiscreteMeasure,
    r_a0: &str,
    r_a1: &str,
    s: &str,
    lambda: f64,
) -> Result<RandomizationDerivative> {
    let r0 = mu.attr(r_a0)?;
    let r1 = mu.attr(r_a1)?;
    let svals = mu.attr(s)?;
    let weights = mu.weights();

    let expected = |lam: f64| -> f64 {
        kahan_sum(weights.iter().enumerate().map(|(i, &w)| {
            let p = 1.0 / (1.0 + (-lam * svals[i]).exp());
            w * (p * r1[i] + (1.0 - p) * r0[i])
        }))
    };

    let fd = (expected(lambda + FD_STEP) - expected(lambda - FD_STEP)) / (2.0 * FD_STEP);

    let mixed: Vec<f64> = (0..mu.len())
        .map(|i| {
            let p = 1.0 / (1.0 + (-lambda * svals[i]).exp());
            p * r1[i] + (1.0 - p) * r0[i]
        })
        .collect();
    let covariance = weighted_covariance(weights, &mixed, svals);

    Ok(RandomizationDerivative {
        finite_difference: fd,
        covariance,
    })
}
