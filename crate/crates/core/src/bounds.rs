//! Closed-form catalogue: per-hit information rate, testing-error floors, and
//! query budgets.
//!
//! Everything here is deterministic arithmetic in nats. The central quantity
//! is the KL divergence between the two opposite-bias label laws,
//!
//! ```text
//! kappa(eps) = D(Ber(1/2+eps) || Ber(1/2-eps)) = 4·eps·atanh(2·eps),
//! ```
//!
//! which prices one queried hit on the biased slice. `n` rounds at hard mass
//! `alpha` buy at most `n·alpha·kappa(eps)` nats, and the Bayes error for
//! telling the two worlds apart is floored at `(1/4)·exp(-KL)`.

use crate::error::{Error, Result};

/// Largest admissible bias. Keeps `atanh(2·eps)` finite with margin.
pub const EPSILON_MAX: f64 = 0.49;

/// `atanh` with the explicit log form near the boundary, where the builtin
/// loses accuracy.
fn atanh_stable(z: f64) -> f64 {
    if z.abs() > 0.9 {
        0.5 * ((1.0 + z) / (1.0 - z)).ln()
    } else {
        z.atanh()
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(0.0..=EPSILON_MAX).contains(&epsilon) {
        return Err(Error::invalid(format!(
            "epsilon {epsilon} outside [0, {EPSILON_MAX}]"
        )));
    }
    Ok(())
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("{name} {p} outside [0, 1]")));
    }
    Ok(())
}

/// Per-hit KL between the opposite-bias Bernoulli label laws:
/// `kappa(eps) = 4·eps·atanh(2·eps)`.
pub fn kappa(epsilon: f64) -> Result<f64> {
    check_epsilon(epsilon)?;
    Ok(4.0 * epsilon * atanh_stable(2.0 * epsilon))
}

/// Upper envelope `8·eps² / (1 - 4·eps²)`; dominates `kappa` on the whole
/// domain.
pub fn kappa_upper(epsilon: f64) -> Result<f64> {
    if !(0.0..0.5).contains(&epsilon) {
        return Err(Error::invalid(format!("epsilon {epsilon} outside [0, 0.5)")));
    }
    Ok(8.0 * epsilon * epsilon / (1.0 - 4.0 * epsilon * epsilon))
}

/// Minimax value-gap floor after `n` rounds: `(gamma/4)·exp(-n·alpha·kappa)`.
pub fn lower_bound_gap(gamma: f64, n: u64, alpha: f64, epsilon: f64) -> Result<f64> {
    if gamma <= 0.0 {
        return Err(Error::invalid(format!("gamma {gamma} must be positive")));
    }
    check_probability("alpha", alpha)?;
    Ok(gamma / 4.0 * (-(n as f64) * alpha * kappa(epsilon)?).exp())
}

/// Bayes-error floor under equal priors for a KL budget: `(1/4)·exp(-kl)`.
pub fn bh_bayes_error(kl: f64) -> Result<f64> {
    if kl < 0.0 || kl.is_nan() {
        return Err(Error::invalid(format!("kl {kl} must be nonnegative")));
    }
    Ok(0.25 * (-kl).exp())
}

/// Hit and query budgets of the routed majority test:
/// `T = log(gamma/eta) / (2·eps²)`, `Q = T / alpha`.
pub fn majority_query_budget(alpha: f64, epsilon: f64, gamma: f64, eta: f64) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid(format!("alpha {alpha} outside (0, 1]")));
    }
    check_epsilon(epsilon)?;
    if epsilon == 0.0 {
        return Err(Error::invalid("epsilon must be positive for a finite budget"));
    }
    if !(eta > 0.0 && eta < gamma) {
        return Err(Error::invalid(format!(
            "eta {eta} must lie strictly inside (0, gamma={gamma})"
        )));
    }
    let t = (gamma / eta).ln() / (2.0 * epsilon * epsilon);
    Ok((t, t / alpha))
}

/// Query budget when routing through a flagger with true-positive rate `tau`:
/// `log(gamma/eta) / (2·alpha·tau·eps²)`.
pub fn noisy_oracle_budget(alpha: f64, tau: f64, epsilon: f64, gamma: f64, eta: f64) -> Result<f64> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::invalid(format!(
            "tau {tau} outside (0, 1]: flagger never fires"
        )));
    }
    let (_, q) = majority_query_budget(alpha, epsilon, gamma, eta)?;
    Ok(q / tau)
}

/// Floor with a bias profile: `K` is the mean per-hit KL over the hard set.
pub fn hetero_lower_bound(gamma: f64, n: u64, alpha: f64, mean_kappa: f64) -> Result<f64> {
    if gamma <= 0.0 {
        return Err(Error::invalid(format!("gamma {gamma} must be positive")));
    }
    if mean_kappa < 0.0 || mean_kappa.is_nan() {
        return Err(Error::invalid(format!("mean kappa {mean_kappa} negative")));
    }
    check_probability("alpha", alpha)?;
    Ok(gamma / 4.0 * (-(n as f64) * alpha * mean_kappa).exp())
}

/// Transcript KL budget when the hard set splits into components
/// `(alpha_j, eps_j)`: `n · Σ alpha_j · kappa(eps_j)`.
pub fn mixture_kl_budget(n: u64, components: &[(f64, f64)]) -> Result<f64> {
    let mut mass = 0.0;
    let mut rate = 0.0;
    for &(alpha_j, eps_j) in components {
        if alpha_j < 0.0 {
            return Err(Error::invalid(format!("component mass {alpha_j} negative")));
        }
        mass += alpha_j;
        rate += alpha_j * kappa(eps_j)?;
    }
    if mass > 1.0 + 1e-12 {
        return Err(Error::invalid(format!("component masses sum to {mass} > 1")));
    }
    Ok(n as f64 * rate)
}

/// Expected-hit ceiling of the sequential test at symmetric error `delta`:
/// `log((1-delta)/delta) / kappa(eps)`.
pub fn sprt_expected_hits(delta: f64, epsilon: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 0.5) {
        return Err(Error::invalid(format!("delta {delta} outside (0, 0.5)")));
    }
    check_epsilon(epsilon)?;
    if epsilon == 0.0 {
        return Err(Error::invalid("epsilon must be positive for a finite hit count"));
    }
    Ok(((1.0 - delta) / delta).ln() / kappa(epsilon)?)
}

/// Floor on the world-sign error plus the induced hard-set action
/// disagreement floor `alpha · floor`.
pub fn sign_error_floor(n: u64, alpha: f64, epsilon: f64) -> Result<(f64, f64)> {
    check_probability("alpha", alpha)?;
    let floor = bh_bayes_error((n as f64) * alpha * kappa(epsilon)?)?;
    Ok((floor, alpha * floor))
}

/// Expected queries for the routed sequential test:
/// `(1/(alpha·tau)) · log((1-delta)/delta) / kappa(eps)`.
pub fn maps_sequential_cost(alpha: f64, tau: f64, epsilon: f64, delta: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid(format!("alpha {alpha} outside (0, 1]")));
    }
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::invalid(format!(
            "tau {tau} outside (0, 1]: flagger never fires"
        )));
    }
    Ok(sprt_expected_hits(delta, epsilon)? / (alpha * tau))
}

/// Parameter tuple a [`BoundReport`] was computed from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundInputs {
    pub n: u64,
    pub alpha: f64,
    pub epsilon: f64,
    pub gamma: f64,
    pub eta: f64,
    pub tau: f64,
    pub phi: f64,
    pub delta: f64,
}

/// Every closed form evaluated on one parameter tuple.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundReport {
    pub inputs: BoundInputs,
    pub kappa: f64,
    /// Transcript KL budget `n·alpha·kappa`.
    pub kl_budget: f64,
    /// Minimax value-gap floor.
    pub lower_gap: f64,
    /// Majority-test query budget `T/alpha`.
    pub query_budget: f64,
    /// Budget through the noisy flagger, inflated by `1/tau`.
    pub q_noisy: f64,
    /// Expected-hit ceiling of the sequential test.
    pub sprt_hits: f64,
}

impl BoundReport {
    pub fn compute(inputs: BoundInputs) -> Result<BoundReport> {
        let kappa = kappa(inputs.epsilon)?;
        let kl_budget = inputs.n as f64 * inputs.alpha * kappa;
        let lower_gap = lower_bound_gap(inputs.gamma, inputs.n, inputs.alpha, inputs.epsilon)?;
        let (_, query_budget) =
            majority_query_budget(inputs.alpha, inputs.epsilon, inputs.gamma, inputs.eta)?;
        let q_noisy =
            noisy_oracle_budget(inputs.alpha, inputs.tau, inputs.epsilon, inputs.gamma, inputs.eta)?;
        let sprt_hits = sprt_expected_hits(inputs.delta, inputs.epsilon)?;

        debug_assert!(lower_gap <= inputs.gamma / 4.0 + 1e-15);
        debug_assert!((kappa == 0.0) == (inputs.epsilon == 0.0));
        Ok(BoundReport {
            inputs,
            kappa,
            kl_budget,
            lower_gap,
            query_budget,
            q_noisy,
            sprt_hits,
        })
    }

    pub fn csv_header() -> &'static str {
        "n,alpha,epsilon,gamma,eta,tau,delta,kappa,kl_budget,lower_gap,Q_majority,Q_noisy,sprt_hits"
    }

    pub fn csv_row(&self) -> String {
        let i = &self.inputs;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            i.n,
            i.alpha,
            i.epsilon,
            i.gamma,
            i.eta,
            i.tau,
            i.delta,
            self.kappa,
            self.kl_budget,
            self.lower_gap,
            self.query_budget,
            self.q_noisy,
            self.sprt_hits
        )
    }
}
