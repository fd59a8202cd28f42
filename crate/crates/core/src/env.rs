//! Two-world synthetic environment.
//!
//! Contexts are drawn from the mixture `(1-alpha)·N(0, I) + alpha·N(mu_h, I)`
//! in `d` dimensions. The latent component label is the hard-set flag `H`.
//! Rewards are binary: the better of the two actions earns 1, the other 0.
//! On easy contexts the better action is decided by `sign(theta·x)`; on hard
//! contexts it is `w·sign(upsilon·x)`, so the two worlds `w = ±1` agree off
//! the hard set and disagree everywhere on it. That makes the separation
//! between the worlds' optimal policies exactly the hard mass `alpha`.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::score::ScoreFunction;
use crate::stats::{Estimate, Welford};

/// Which of the two environments generated the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WorldSign {
    Plus,
    Minus,
}

impl WorldSign {
    pub fn sign(self) -> f64 {
        match self {
            WorldSign::Plus => 1.0,
            WorldSign::Minus => -1.0,
        }
    }

    pub fn flip(self) -> WorldSign {
        match self {
            WorldSign::Plus => WorldSign::Minus,
            WorldSign::Minus => WorldSign::Plus,
        }
    }

    pub fn uniform(rng: &mut RngStream) -> WorldSign {
        if rng.bernoulli(0.5) {
            WorldSign::Plus
        } else {
            WorldSign::Minus
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            WorldSign::Plus => "+1",
            WorldSign::Minus => "-1",
        }
    }
}

/// Binary action set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    A0,
    A1,
}

/// `sign` with the fixed tie rule `sign(0) = +1`.
pub fn sign_pos(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// The mixture environment: dimension, hard mass, hard-component center, and
/// the two orthonormal decision directions.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentSpec {
    d: usize,
    alpha: f64,
    hard_center: Vec<f64>,
    theta: Vec<f64>,
    upsilon: Vec<f64>,
}

const UNIT_TOL: f64 = 1e-12;

impl EnvironmentSpec {
    /// Validates dimensions, `alpha`, unit norms, and `theta ⟂ upsilon`.
    ///
    /// `alpha` may sit on the closed boundary `{0, 1}`; the degenerate
    /// single-component environments are useful as controls.
    pub fn new(
        alpha: f64,
        hard_center: Vec<f64>,
        theta: Vec<f64>,
        upsilon: Vec<f64>,
    ) -> Result<EnvironmentSpec> {
        let d = hard_center.len();
        if d == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        if theta.len() != d || upsilon.len() != d {
            return Err(Error::invalid(format!(
                "direction lengths ({}, {}) do not match dimension {d}",
                theta.len(),
                upsilon.len()
            )));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::invalid(format!("alpha {alpha} outside [0, 1]")));
        }
        let norm_theta = dot(&theta, &theta).sqrt();
        let norm_upsilon = dot(&upsilon, &upsilon).sqrt();
        if (norm_theta - 1.0).abs() > UNIT_TOL {
            return Err(Error::invalid(format!("theta norm {norm_theta} != 1")));
        }
        if (norm_upsilon - 1.0).abs() > UNIT_TOL {
            return Err(Error::invalid(format!("upsilon norm {norm_upsilon} != 1")));
        }
        let cross = dot(&theta, &upsilon);
        if cross.abs() > UNIT_TOL {
            return Err(Error::invalid(format!("theta·upsilon = {cross} != 0")));
        }
        Ok(EnvironmentSpec {
            d,
            alpha,
            hard_center,
            theta,
            upsilon,
        })
    }

    /// Environment with `hard_center = norm·upsilon`, `upsilon = e1`,
    /// `theta = e2`. Aligning the hard center with the hard decision
    /// direction gives the fitted proxy a positive covariance with the
    /// hard-set flag, which is the regime the drift diagnostics probe.
    pub fn aligned(d: usize, alpha: f64, center_norm: f64) -> Result<EnvironmentSpec> {
        if d < 2 {
            return Err(Error::invalid("aligned environment needs d >= 2"));
        }
        let mut center = vec![0.0; d];
        center[0] = center_norm;
        let mut upsilon = vec![0.0; d];
        upsilon[0] = 1.0;
        let mut theta = vec![0.0; d];
        theta[1] = 1.0;
        EnvironmentSpec::new(alpha, center, theta, upsilon)
    }

    /// Random orthonormal pair `(theta, upsilon)` from a seeded stream.
    pub fn auto_orthonormal(d: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
        if d < 2 {
            return Err(Error::invalid("need d >= 2 for an orthonormal pair"));
        }
        let mut rng = RngStream::seed(seed);
        let theta = random_unit(d, &mut rng);
        // Gram-Schmidt a second draw against the first.
        loop {
            let mut v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
            let proj = dot(&v, &theta);
            for (vi, ti) in v.iter_mut().zip(&theta) {
                *vi -= proj * ti;
            }
            let norm = dot(&v, &v).sqrt();
            if norm > 1e-8 {
                for vi in v.iter_mut() {
                    *vi /= norm;
                }
                // renormalize residual rounding
                let upsilon = renormalize_orthogonal(v, &theta);
                return Ok((theta, upsilon));
            }
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn hard_center(&self) -> &[f64] {
        &self.hard_center
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn upsilon(&self) -> &[f64] {
        &self.upsilon
    }

    pub fn theta_dot(&self, x: &[f64]) -> f64 {
        dot(&self.theta, x)
    }

    pub fn upsilon_dot(&self, x: &[f64]) -> f64 {
        dot(&self.upsilon, x)
    }

    /// Projection of the hard center onto `upsilon`.
    pub fn upsilon_center(&self) -> f64 {
        dot(&self.upsilon, &self.hard_center)
    }
}

fn renormalize_orthogonal(mut v: Vec<f64>, against: &[f64]) -> Vec<f64> {
    // A second pass removes rounding left by the first projection.
    let proj = dot(&v, against);
    for (vi, ai) in v.iter_mut().zip(against) {
        *vi -= proj * ai;
    }
    let norm = dot(&v, &v).sqrt();
    for vi in v.iter_mut() {
        *vi /= norm;
    }
    v
}

fn random_unit(d: usize, rng: &mut RngStream) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-8 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A drawn context together with its latent mixture-component label.
///
/// `hard` is attached at sampling time and never re-inferred from `x`; the
/// Gaussian components overlap, so membership is not a function of `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextSample {
    pub x: Vec<f64>,
    pub hard: bool,
}

/// Draw one context from the mixture.
pub fn sample_context(env: &EnvironmentSpec, rng: &mut RngStream) -> ContextSample {
    let hard = rng.bernoulli(env.alpha);
    sample_context_conditional(env, hard, rng)
}

/// Draw from a single mixture component.
pub fn sample_context_conditional(
    env: &EnvironmentSpec,
    hard: bool,
    rng: &mut RngStream,
) -> ContextSample {
    let mut x: Vec<f64> = (0..env.d).map(|_| rng.normal()).collect();
    if hard {
        for (xi, ci) in x.iter_mut().zip(&env.hard_center) {
            *xi += ci;
        }
    }
    ContextSample { x, hard }
}

/// Reward advantage `r_w(x, a1) - r_w(x, a0) ∈ {-1, +1}`.
pub fn reward_diff(env: &EnvironmentSpec, w: WorldSign, c: &ContextSample) -> f64 {
    if c.hard {
        w.sign() * sign_pos(env.upsilon_dot(&c.x))
    } else {
        sign_pos(env.theta_dot(&c.x))
    }
}

/// The action earning reward 1 under world `w`; ties go to `a1`.
pub fn optimal_action(env: &EnvironmentSpec, w: WorldSign, c: &ContextSample) -> Action {
    if reward_diff(env, w, c) >= 0.0 {
        Action::A1
    } else {
        Action::A0
    }
}

/// Binary reward: 1 for the better action, 0 for the other.
pub fn reward(env: &EnvironmentSpec, w: WorldSign, c: &ContextSample, a: Action) -> f64 {
    let diff = reward_diff(env, w, c);
    match a {
        Action::A1 => 0.5 * (1.0 + diff),
        Action::A0 => 0.5 * (1.0 - diff),
    }
}

/// A policy over the binary action set.
#[derive(Debug, Clone)]
pub enum PolicySpec {
    /// The optimal deterministic policy of world `w`.
    Optimal(WorldSign),
    /// Takes `a1` with probability `sigmoid(lambda·score(x))`.
    Logistic { score: ScoreFunction, lambda: f64 },
    /// Always plays the given action.
    Constant(Action),
}

pub fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

impl PolicySpec {
    /// Sample an action. Deterministic variants ignore the stream.
    pub fn act(&self, env: &EnvironmentSpec, c: &ContextSample, rng: &mut RngStream) -> Action {
        match self {
            PolicySpec::Optimal(w) => optimal_action(env, *w, c),
            PolicySpec::Logistic { score, lambda } => {
                let p = sigmoid(lambda * score.eval(env, c));
                if rng.bernoulli(p) {
                    Action::A1
                } else {
                    Action::A0
                }
            }
            PolicySpec::Constant(a) => *a,
        }
    }

    /// Probability of choosing `a1`.
    pub fn prob_a1(&self, env: &EnvironmentSpec, c: &ContextSample) -> f64 {
        match self {
            PolicySpec::Optimal(w) => match optimal_action(env, *w, c) {
                Action::A1 => 1.0,
                Action::A0 => 0.0,
            },
            PolicySpec::Logistic { score, lambda } => sigmoid(lambda * score.eval(env, c)),
            PolicySpec::Constant(Action::A1) => 1.0,
            PolicySpec::Constant(Action::A0) => 0.0,
        }
    }
}

/// Monte Carlo estimate of `V_w(pi) = E[r_w(x, pi(x))]`.
pub fn value(
    env: &EnvironmentSpec,
    w: WorldSign,
    pi: &PolicySpec,
    trials: u64,
    rng: &mut RngStream,
) -> Result<Estimate> {
    if trials == 0 {
        return Err(Error::invalid("value estimate needs trials >= 1"));
    }
    let mut acc = Welford::new();
    for _ in 0..trials {
        let c = sample_context(env, rng);
        let a = pi.act(env, &c, rng);
        acc.push(reward(env, w, &c, a));
    }
    Ok(acc.estimate())
}

/// Monte Carlo estimate of the separation
/// `gamma = E[|r_+(x, pi^+(x)) - r_+(x, pi^-(x))| · 1{hard}]`.
pub fn separation_gamma(env: &EnvironmentSpec, trials: u64, rng: &mut RngStream) -> Result<Estimate> {
    if trials == 0 {
        return Err(Error::invalid("separation estimate needs trials >= 1"));
    }
    let mut acc = Welford::new();
    for _ in 0..trials {
        let c = sample_context(env, rng);
        let gap = if c.hard {
            let a_plus = optimal_action(env, WorldSign::Plus, &c);
            let a_minus = optimal_action(env, WorldSign::Minus, &c);
            (reward(env, WorldSign::Plus, &c, a_plus) - reward(env, WorldSign::Plus, &c, a_minus))
                .abs()
        } else {
            0.0
        };
        acc.push(gap);
    }
    Ok(acc.estimate())
}
