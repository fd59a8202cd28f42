//! Pairwise preference labels with a bounded bias on the hard set.
//!
//! On easy contexts the label is a fair coin. On hard contexts the label
//! favors the truly better action with probability `1/2 + w·eps`, so under
//! one world the channel is helpfully correlated with the truth and under the
//! other it is systematically misleading — while the transcript law stays the
//! same. The bias magnitude may also vary across the hard set through a
//! quantile profile.

use crate::env::{ContextSample, EnvironmentSpec, WorldSign};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use statrs::function::erf::erfc;

/// Largest admissible bias; keeps `atanh(2·eps)` away from the pole at 1/2.
pub const EPSILON_GUARD: f64 = 0.49;

/// A pairwise label: 1 means "favors the truly better action".
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelBit(pub bool);

impl LabelBit {
    pub fn as_f64(self) -> f64 {
        if self.0 {
            1.0
        } else {
            0.0
        }
    }
}

/// How the bias magnitude varies across hard contexts.
#[derive(Debug, Clone, PartialEq)]
pub enum BiasProfile {
    Constant,
    /// `eps(x) = lo + (hi-lo)·Phi(upsilon·x - upsilon·mu_h)`: linear in the
    /// quantile of the hard-direction projection under the hard component.
    LinearQuantile {
        upsilon: Vec<f64>,
        center_projection: f64,
        lo: f64,
        hi: f64,
    },
}

/// The label channel: bias magnitude and optional per-context profile.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSpec {
    epsilon: f64,
    profile: BiasProfile,
}

fn check_eps(value: f64, what: &str) -> Result<()> {
    if !(value > 0.0 && value <= EPSILON_GUARD) {
        return Err(Error::invalid(format!(
            "{what} {value} outside (0, {EPSILON_GUARD}]"
        )));
    }
    Ok(())
}

/// Standard normal CDF.
fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

impl ChannelSpec {
    pub fn constant(epsilon: f64) -> Result<ChannelSpec> {
        check_eps(epsilon, "epsilon")?;
        Ok(ChannelSpec {
            epsilon,
            profile: BiasProfile::Constant,
        })
    }

    /// Bias varying linearly in the `upsilon·x` quantile of hard contexts,
    /// from `lo` at the left tail to `hi` at the right.
    pub fn linear_quantile(env: &EnvironmentSpec, lo: f64, hi: f64) -> Result<ChannelSpec> {
        check_eps(lo, "epsilon_hetero lo")?;
        check_eps(hi, "epsilon_hetero hi")?;
        Ok(ChannelSpec {
            epsilon: 0.5 * (lo + hi),
            profile: BiasProfile::LinearQuantile {
                upsilon: env.upsilon().to_vec(),
                center_projection: env.upsilon_center(),
                lo,
                hi,
            },
        })
    }

    /// Nominal bias magnitude (the mean of a heterogeneous profile).
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn is_heterogeneous(&self) -> bool {
        !matches!(self.profile, BiasProfile::Constant)
    }

    /// Bias magnitude at a hard context.
    pub fn epsilon_at(&self, c: &ContextSample) -> f64 {
        match &self.profile {
            BiasProfile::Constant => self.epsilon,
            BiasProfile::LinearQuantile {
                upsilon,
                center_projection,
                lo,
                hi,
            } => {
                let proj: f64 = upsilon.iter().zip(&c.x).map(|(u, x)| u * x).sum();
                let q = normal_cdf(proj - center_projection);
                lo + (hi - lo) * q
            }
        }
    }
}

/// Draw one pairwise label. Easy contexts are fair coins; hard contexts favor
/// the truly better action with probability `1/2 + w·eps(x)`.
pub fn pairwise_label(
    c: &ContextSample,
    w: WorldSign,
    ch: &ChannelSpec,
    rng: &mut RngStream,
) -> LabelBit {
    let p = if c.hard {
        0.5 + w.sign() * ch.epsilon_at(c)
    } else {
        0.5
    };
    LabelBit(rng.bernoulli(p))
}

/// Per-hit KL of the subgaussian scalar-rating surrogate: `m² / (2·sigma²)`.
pub fn rating_per_hit_kl(m: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("sigma {sigma} must be finite positive")));
    }
    if m < 0.0 || !m.is_finite() {
        return Err(Error::invalid(format!("mean {m} must be finite nonnegative")));
    }
    Ok(m * m / (2.0 * sigma * sigma))
}
