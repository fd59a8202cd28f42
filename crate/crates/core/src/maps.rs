//! Score shaping: build tilting statistics that do not drag mass onto the
//! hard set.
//!
//! A shaped statistic `t = w0·s0 + Σ w_i·s_i - Σ beta_j·g_j` combines a base
//! proxy with auxiliary proxies and penalty signals. Its first-order effect
//! on hard mass is `rho_t'(0) = Cov_mu(H, t)`, linear in every weight, so a
//! penalty correlated with `H` can cancel the drift at the origin:
//!
//! * against a noisy flagger with rates `(tau, phi)`,
//!   `Cov_mu(H, h_hat) = alpha·(1-alpha)·(tau-phi)` and the canceling weight
//!   is `beta* = Cov_mu(H, g) / (alpha·(1-alpha)·(tau-phi))`;
//! * against the indicator itself, projecting a reward surrogate onto the
//!   orthogonal complement of `H` removes the drift while keeping the
//!   reward-aligned component.
//!
//! Cancellation at the origin does not persist at `lambda != 0`;
//! [`drift_limit_report`] measures what remains.

use crate::error::{Error, Result};
use crate::measure::DiscreteMeasure;
use crate::tilting::{kl_tilt, tilt_derivative, tilt_expectation};

/// Recipe for a shaped tilting statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapedScoreSpec {
    pub base_weight: f64,
    /// Attribute name of the base proxy `s0`.
    pub base: String,
    /// Auxiliary proxies `(w_i, s_i)`.
    pub aux: Vec<(f64, String)>,
    /// Penalty signals `(beta_j, g_j)`, entering with a minus sign.
    pub penalties: Vec<(f64, String)>,
}

impl ShapedScoreSpec {
    /// The identity spec `t = s0`.
    pub fn identity(base: impl Into<String>) -> ShapedScoreSpec {
        ShapedScoreSpec {
            base_weight: 1.0,
            base: base.into(),
            aux: Vec::new(),
            penalties: Vec::new(),
        }
    }

    pub fn with_penalty(mut self, beta: f64, attr: impl Into<String>) -> ShapedScoreSpec {
        self.penalties.push((beta, attr.into()));
        self
    }

    pub fn with_aux(mut self, weight: f64, attr: impl Into<String>) -> ShapedScoreSpec {
        self.aux.push((weight, attr.into()));
        self
    }

    fn has_term(&self) -> bool {
        self.base_weight != 0.0
            || self.aux.iter().any(|(w, _)| *w != 0.0)
            || self.penalties.iter().any(|(b, _)| *b != 0.0)
    }
}

/// Per-atom shaped score `t = w0·s0 + Σ w_i·s_i - Σ beta_j·g_j`.
pub fn shaped_score(spec: &ShapedScoreSpec, mu: &DiscreteMeasure) -> Result<Vec<f64>> {
    if !spec.has_term() {
        return Err(Error::invalid("shaped score needs at least one nonzero term"));
    }
    let base = mu.attr(&spec.base)?;
    let mut t: Vec<f64> = base.iter().map(|&v| spec.base_weight * v).collect();
    for (w, name) in &spec.aux {
        for (ti, &v) in t.iter_mut().zip(mu.attr(name)?) {
            *ti += w * v;
        }
    }
    for (beta, name) in &spec.penalties {
        for (ti, &v) in t.iter_mut().zip(mu.attr(name)?) {
            *ti -= beta * v;
        }
    }
    Ok(t)
}

/// `Cov_mu(H, h_hat) = alpha·(1-alpha)·(tau-phi)` for a flagger that is
/// conditionally independent of everything else given `H`.
pub fn flagger_covariance(alpha: f64, tau: f64, phi: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&alpha));
    debug_assert!((0.0..=1.0).contains(&tau));
    debug_assert!((0.0..=1.0).contains(&phi));
    alpha * (1.0 - alpha) * (tau - phi)
}

/// Penalty weight that zeroes the first-order drift:
/// `beta* = cov(H, g) / (alpha·(1-alpha)·(tau-phi))`.
pub fn beta_star(cov_hg: f64, alpha: f64, tau: f64, phi: f64) -> Result<f64> {
    let denom = flagger_covariance(alpha, tau, phi);
    if denom == 0.0 {
        // tau = phi (or a degenerate alpha): the flagger carries nothing
        return Err(Error::NoCancellation);
    }
    Ok(cov_hg / denom)
}

/// First-order drift of hard mass under tilting by `t`:
/// `rho_t'(0) = Cov_mu(H, t)`.
pub fn drift_at_zero(mu: &DiscreteMeasure, t: &str, h: &str) -> Result<f64> {
    mu.covariance(h, t)
}

/// Drift of an assembled spec together with its per-term decomposition
/// `w0·Cov(H,s0) + Σ w_i·Cov(H,s_i) - Σ beta_j·Cov(H,g_j)`.
pub fn drift_decomposition(
    spec: &ShapedScoreSpec,
    mu: &DiscreteMeasure,
    h: &str,
) -> Result<(f64, f64)> {
    let t = shaped_score(spec, mu)?;
    let assembled = mu.clone().with_attr("__t", t)?;
    let total = assembled.covariance(h, "__t")?;
    let mut parts = spec.base_weight * mu.covariance(h, &spec.base)?;
    for (w, name) in &spec.aux {
        parts += w * mu.covariance(h, name)?;
    }
    for (beta, name) in &spec.penalties {
        parts -= beta * mu.covariance(h, name)?;
    }
    Ok((total, parts))
}

/// Result of projecting a reward surrogate off the hard-set indicator.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionShaping {
    /// Shaped statistic `t = (r - r̄) - beta·(H - α)`, centered.
    pub t: Vec<f64>,
    pub beta: f64,
    /// Centering constants removed internally.
    pub r_delta_mean: f64,
    pub h_mean: f64,
}

/// `beta = Cov(H, rΔ) / Var(H)`; the residual `t` is uncorrelated with `H`
/// and keeps the reward component `Var(rΔ) - Cov(H,rΔ)²/Var(H)`.
pub fn orthogonal_projection_shaping(
    mu: &DiscreteMeasure,
    r_delta: &str,
    h: &str,
) -> Result<ProjectionShaping> {
    let var_h = mu.variance(h)?;
    if var_h <= 0.0 {
        return Err(Error::invalid("Var(H) must be positive for the projection"));
    }
    let beta = mu.covariance(h, r_delta)? / var_h;
    let r_mean = mu.mean(r_delta)?;
    let h_mean = mu.mean(h)?;
    let r = mu.attr(r_delta)?;
    let hv = mu.attr(h)?;
    let t: Vec<f64> = r
        .iter()
        .zip(hv)
        .map(|(&ri, &hi)| (ri - r_mean) - beta * (hi - h_mean))
        .collect();
    Ok(ProjectionShaping {
        t,
        beta,
        r_delta_mean: r_mean,
        h_mean,
    })
}

/// Small-`lambda` approximation of the tilt divergence:
/// `KL(q_lambda^t || mu) ≈ lambda²·Var(t)/2`.
pub fn temperature_kl_small(lambda: f64, var_t: f64) -> f64 {
    debug_assert!(var_t >= 0.0);
    0.5 * lambda * lambda * var_t
}

/// One grid point of a drift scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftPoint {
    pub lambda: f64,
    pub rho: f64,
    /// `rho_t'(lambda) = Cov_{q_lambda}(H, t)`.
    pub drift: f64,
    pub kl_forward: f64,
}

/// What survives of a cancellation away from the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftLimitReport {
    pub points: Vec<DriftPoint>,
    pub cov_at_zero: f64,
    /// Cancellation held at the origin but drift reappears on the grid.
    pub first_order_only: bool,
    /// With positive initial covariance: `rho` increased across every grid
    /// step on which the covariance stayed positive.
    pub increasing_while_cov_positive: bool,
}

const DRIFT_ZERO_TOL: f64 = 1e-9;

/// Scan `rho_t` and its drift over a grid and classify the behavior.
pub fn drift_limit_report(
    mu: &DiscreteMeasure,
    t: &str,
    h: &str,
    lambda_grid: &[f64],
) -> Result<DriftLimitReport> {
    let cov_at_zero = mu.covariance(h, t)?;
    let mut points = Vec::with_capacity(lambda_grid.len());
    for &lambda in lambda_grid {
        let rho = tilt_expectation(mu, t, h, lambda)?;
        let drift = tilt_derivative(mu, t, h, lambda)?;
        let kl_forward = kl_tilt(mu, t, lambda)?.forward;
        points.push(DriftPoint {
            lambda,
            rho,
            drift,
            kl_forward,
        });
    }
    let first_order_only = cov_at_zero.abs() <= DRIFT_ZERO_TOL
        && points.iter().any(|p| p.drift.abs() > 1e-6);
    let mut increasing = true;
    for pair in points.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if a.lambda >= 0.0 && b.lambda > a.lambda && a.drift > 0.0 && b.drift > 0.0 && b.rho <= a.rho
        {
            increasing = false;
        }
    }
    Ok(DriftLimitReport {
        points,
        cov_at_zero,
        first_order_only,
        increasing_while_cov_positive: increasing,
    })
}

/// Exact-weight measure enumerating `(H, h_hat)` jointly with a penalty
/// attribute `g` that depends only on `H`. Covariances are then analytic:
/// `Cov(H, g) = alpha·(1-alpha)·(g1-g0)` and `Cov(H, h_hat)` matches
/// [`flagger_covariance`]. Used to test cancellations without sampling noise.
pub fn exact_flagger_measure(
    alpha: f64,
    tau: f64,
    phi: f64,
    g0: f64,
    g1: f64,
) -> Result<DiscreteMeasure> {
    for (name, p) in [("alpha", alpha), ("tau", tau), ("phi", phi)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid(format!("{name} {p} outside [0, 1]")));
        }
    }
    // atoms: (H=1,h=1), (H=1,h=0), (H=0,h=1), (H=0,h=0)
    let weights = vec![
        alpha * tau,
        alpha * (1.0 - tau),
        (1.0 - alpha) * phi,
        (1.0 - alpha) * (1.0 - phi),
    ];
    DiscreteMeasure::new(
        weights,
        [
            ("H".to_string(), vec![1.0, 1.0, 0.0, 0.0]),
            ("hhat".to_string(), vec![1.0, 0.0, 1.0, 0.0]),
            ("g".to_string(), vec![g1, g1, g0, g0]),
        ],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use crate::tilting::tilt_state;
    use approx::assert_abs_diff_eq;

    fn random_measure(atoms: usize, seed: u64) -> DiscreteMeasure {
        let mut rng = RngStream::seed(seed);
        let raw: Vec<f64> = (0..atoms).map(|_| rng.uniform() + 0.05).collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        DiscreteMeasure::new(
            weights,
            [
                ("s0".to_string(), (0..atoms).map(|_| 2.0 * (rng.uniform() - 0.5)).collect()),
                ("s1".to_string(), (0..atoms).map(|_| rng.uniform()).collect()),
                ("g".to_string(), (0..atoms).map(|_| rng.uniform()).collect()),
                (
                    "H".to_string(),
                    (0..atoms).map(|_| if rng.bernoulli(0.4) { 1.0 } else { 0.0 }).collect(),
                ),
                ("rd".to_string(), (0..atoms).map(|_| 2.0 * (rng.uniform() - 0.5)).collect()),
            ],
        )
        .unwrap()
    }

    #[test]
    fn identity_spec_reproduces_the_base() {
        let mu = random_measure(10, 1);
        let t = shaped_score(&ShapedScoreSpec::identity("s0"), &mu).unwrap();
        assert_eq!(t, mu.attr("s0").unwrap());
    }

    #[test]
    fn shaping_is_linear_in_each_weight() {
        let mu = random_measure(12, 2);
        let spec1 = ShapedScoreSpec::identity("s0").with_penalty(0.4, "g");
        let spec2 = ShapedScoreSpec::identity("s0").with_penalty(0.8, "g");
        let t1 = shaped_score(&spec1, &mu).unwrap();
        let t2 = shaped_score(&spec2, &mu).unwrap();
        let g = mu.attr("g").unwrap();
        for i in 0..mu.len() {
            assert_abs_diff_eq!(t2[i] - t1[i], -0.4 * g[i], epsilon = 1e-14);
        }
        // all-zero spec is rejected; missing attribute is rejected
        let zero = ShapedScoreSpec {
            base_weight: 0.0,
            base: "s0".into(),
            aux: vec![],
            penalties: vec![],
        };
        assert!(shaped_score(&zero, &mu).is_err());
        assert!(shaped_score(&ShapedScoreSpec::identity("nope"), &mu).is_err());
    }

    #[test]
    fn flagger_covariance_values() {
        assert_abs_diff_eq!(flagger_covariance(0.3, 0.6, 0.6), 0.0);
        assert_abs_diff_eq!(flagger_covariance(0.5, 1.0, 0.0), 0.25);
        assert_abs_diff_eq!(flagger_covariance(0.1, 0.9, 0.1), 0.072, epsilon = 1e-15);
    }

    #[test]
    fn beta_star_values_and_errors() {
        assert_abs_diff_eq!(beta_star(0.0, 0.1, 0.9, 0.1).unwrap(), 0.0);
        assert_abs_diff_eq!(beta_star(0.036, 0.1, 0.9, 0.1).unwrap(), 0.5, epsilon = 1e-12);
        assert!(matches!(
            beta_star(0.01, 0.1, 0.3, 0.3),
            Err(Error::NoCancellation)
        ));
    }

    #[test]
    fn drift_at_zero_values() {
        let mu = exact_flagger_measure(0.2, 0.8, 0.1, 0.0, 1.0).unwrap();
        // t = H has drift Var(H) = alpha(1-alpha)
        assert_abs_diff_eq!(drift_at_zero(&mu, "H", "H").unwrap(), 0.16, epsilon = 1e-15);
        // constant attribute has none
        let mu = mu.with_attr("c", vec![3.0; 4]).unwrap();
        assert_abs_diff_eq!(drift_at_zero(&mu, "c", "H").unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn beta_star_cancels_on_exact_construction() {
        let (alpha, tau, phi) = (0.1, 0.9, 0.1);
        let mu = exact_flagger_measure(alpha, tau, phi, 0.2, 0.7).unwrap();
        let cov_hg = mu.covariance("H", "g").unwrap();
        // analytic: alpha(1-alpha)(g1-g0)
        assert_abs_diff_eq!(cov_hg, 0.09 * 0.5, epsilon = 1e-15);
        // the flagger covariance realizes its formula exactly
        assert_abs_diff_eq!(
            mu.covariance("H", "hhat").unwrap(),
            flagger_covariance(alpha, tau, phi),
            epsilon = 1e-15
        );
        let beta = beta_star(cov_hg, alpha, tau, phi).unwrap();
        let spec = ShapedScoreSpec {
            base_weight: 1.0,
            base: "g".into(),
            aux: vec![],
            penalties: vec![(beta, "hhat".into())],
        };
        let t = shaped_score(&spec, &mu).unwrap();
        let mu = mu.with_attr("t", t).unwrap();
        let drift = drift_at_zero(&mu, "t", "H").unwrap();
        assert!(drift.abs() <= 1e-10, "drift {drift}");
    }

    #[test]
    fn drift_decomposition_is_exact() {
        let mu = random_measure(40, 3);
        let spec = ShapedScoreSpec::identity("s0")
            .with_aux(0.7, "s1")
            .with_penalty(0.3, "g")
            .with_penalty(-0.2, "H");
        let (total, parts) = drift_decomposition(&spec, &mu, "H").unwrap();
        assert_abs_diff_eq!(total, parts, epsilon = 1e-12);
    }

    #[test]
    fn projection_zeroes_the_indicator_covariance() {
        let mu = random_measure(50, 4);
        let proj = orthogonal_projection_shaping(&mu, "rd", "H").unwrap();
        let mu2 = mu.clone().with_attr("t", proj.t.clone()).unwrap();
        let cov_ht = mu2.covariance("H", "t").unwrap();
        assert!(cov_ht.abs() <= 1e-10, "Cov(H,t) = {cov_ht}");
        // preserved reward component: Var(r) - Cov(H,r)^2/Var(H)
        let var_r = mu.variance("rd").unwrap();
        let cov_hr = mu.covariance("H", "rd").unwrap();
        let var_h = mu.variance("H").unwrap();
        let want = var_r - cov_hr * cov_hr / var_h;
        assert!(want >= 0.0);
        let cov_rt = mu2.covariance("rd", "t").unwrap();
        assert_abs_diff_eq!(cov_rt, want, epsilon = 1e-10);
    }

    #[test]
    fn projection_trivial_cases() {
        // rΔ = H collapses to zero after centering
        let mu = exact_flagger_measure(0.3, 0.9, 0.2, 0.0, 1.0).unwrap();
        let hv = mu.attr("H").unwrap().to_vec();
        let mu = mu.with_attr("rd", hv).unwrap();
        let proj = orthogonal_projection_shaping(&mu, "rd", "H").unwrap();
        assert_abs_diff_eq!(proj.beta, 1.0, epsilon = 1e-12);
        for ti in &proj.t {
            assert_abs_diff_eq!(*ti, 0.0, epsilon = 1e-12);
        }
        // uncorrelated surrogate keeps beta = 0
        let mu2 = DiscreteMeasure::uniform([
            ("H".to_string(), vec![0.0, 0.0, 1.0, 1.0]),
            ("rd".to_string(), vec![-1.0, 1.0, -1.0, 1.0]),
        ])
        .unwrap();
        let proj2 = orthogonal_projection_shaping(&mu2, "rd", "H").unwrap();
        assert_abs_diff_eq!(proj2.beta, 0.0, epsilon = 1e-15);
        // degenerate indicator is rejected
        let flat = DiscreteMeasure::uniform([
            ("H".to_string(), vec![1.0, 1.0]),
            ("rd".to_string(), vec![0.0, 1.0]),
        ])
        .unwrap();
        assert!(orthogonal_projection_shaping(&flat, "rd", "H").is_err());
    }

    #[test]
    fn temperature_approximation_values() {
        assert_abs_diff_eq!(temperature_kl_small(0.0, 4.0), 0.0);
        assert_abs_diff_eq!(temperature_kl_small(0.01, 4.0), 0.0002, epsilon = 1e-18);
    }

    #[test]
    fn temperature_residual_decays_cubically() {
        // skewed scores keep the third cumulant away from zero so the
        // leading residual term is truly cubic
        let mut rng = RngStream::seed(5);
        for _ in 0..5 {
            let n = 12;
            let s: Vec<f64> = (0..n).map(|_| {
                let u = rng.uniform();
                u * u * 3.0 // right-skewed
            }).collect();
            let mu = DiscreteMeasure::uniform([("t".to_string(), s)]).unwrap();
            let var_t = mu.variance("t").unwrap();
            let residual = |lam: f64| {
                (kl_tilt(&mu, "t", lam).unwrap().forward - temperature_kl_small(lam, var_t)).abs()
            };
            let ratio = residual(1e-2) / residual(1e-3);
            assert!(
                (500.0..=2000.0).contains(&ratio),
                "residual ratio {ratio} outside the cubic band"
            );
        }
    }

    #[test]
    fn forward_kl_grows_with_temperature() {
        let mu = random_measure(20, 6);
        let spec = ShapedScoreSpec::identity("s0").with_penalty(0.5, "g");
        let t = shaped_score(&spec, &mu).unwrap();
        let mu = mu.with_attr("t", t).unwrap();
        let mut last = 0.0;
        for k in 0..=8 {
            let lam = k as f64 * 0.25;
            let kl = kl_tilt(&mu, "t", lam).unwrap().forward;
            assert!(kl >= last - 1e-12, "KL not monotone at lambda={lam}");
            last = kl;
        }
    }

    #[test]
    fn drift_report_flags_first_order_only_cancellation() {
        // equal conditional means of t but a wider spread on the hard rows:
        // Cov(H, t) = 0 at the origin, yet tilting re-weights the wide rows
        // faster and the drift reappears
        let mu = DiscreteMeasure::new(
            vec![0.35, 0.35, 0.15, 0.15],
            [
                ("t".to_string(), vec![-1.0, 1.0, -2.0, 2.0]),
                ("H".to_string(), vec![0.0, 0.0, 1.0, 1.0]),
            ],
        )
        .unwrap();
        let cov0 = mu.covariance("H", "t").unwrap();
        assert!(cov0.abs() <= 1e-12, "construction should start uncorrelated, got {cov0}");
        let grid: Vec<f64> = (0..=10).map(|k| k as f64 * 0.2).collect();
        let report = drift_limit_report(&mu, "t", "H", &grid).unwrap();
        assert!(report.first_order_only, "drift should reappear away from 0");
    }

    #[test]
    fn drift_report_positive_and_negative_covariance() {
        let mu = DiscreteMeasure::uniform([
            ("t".to_string(), vec![-1.0, 0.0, 1.0, 2.0]),
            ("H".to_string(), vec![0.0, 0.0, 1.0, 1.0]),
        ])
        .unwrap();
        let grid: Vec<f64> = (0..=10).map(|k| k as f64 * 0.3).collect();
        let report = drift_limit_report(&mu, "t", "H", &grid).unwrap();
        assert!(report.cov_at_zero > 0.0);
        assert!(report.increasing_while_cov_positive);

        // t = -H: hard mass strictly decreasing on positive lambda
        let anti = DiscreteMeasure::uniform([
            ("t".to_string(), vec![0.0, 0.0, -1.0, -1.0]),
            ("H".to_string(), vec![0.0, 0.0, 1.0, 1.0]),
        ])
        .unwrap();
        let report = drift_limit_report(&anti, "t", "H", &grid).unwrap();
        for pair in report.points.windows(2) {
            assert!(pair[1].rho < pair[0].rho);
        }
    }

    #[test]
    fn frozen_conditional_drift_bound() {
        // where E[r|hard] <= E[r|easy] - c and rho' > 0, the frozen-
        // conditional slope of the mixture value is at most -c·rho'
        let mu = DiscreteMeasure::uniform([
            ("s".to_string(), vec![-1.0, 0.0, 1.0, 2.0]),
            ("H".to_string(), vec![0.0, 0.0, 1.0, 1.0]),
            ("r".to_string(), vec![0.9, 0.8, 0.2, 0.1]),
        ])
        .unwrap();
        for &lam in &[0.0, 0.3, 0.8] {
            let q = crate::tilting::tilt(&mu, "s", lam).unwrap();
            let (mut rh, mut wh, mut re, mut we) = (0.0, 0.0, 0.0, 0.0);
            for i in 0..q.len() {
                let w = q.weights()[i];
                let h = q.attr("H").unwrap()[i];
                let r = q.attr("r").unwrap()[i];
                if h > 0.5 {
                    rh += w * r;
                    wh += w;
                } else {
                    re += w * r;
                    we += w;
                }
            }
            let (e_hard, e_easy) = (rh / wh, re / we);
            let c = e_easy - e_hard;
            assert!(c > 0.0);
            let state = tilt_state(&mu, "s", lam).unwrap();
            assert!(state.var_s > 0.0);
            let drho = tilt_derivative(&mu, "s", "H", lam).unwrap();
            assert!(drho > 0.0);
            // frozen conditionals: d/dlambda [(1-rho)E_e + rho E_h] = rho'(E_h - E_e)
            let frozen_slope = drho * (e_hard - e_easy);
            assert!(frozen_slope <= -c * drho + 1e-8);
        }
    }
}
