//! Score functions over contexts: fitted linear scores and oracle margins.

use crate::env::{reward_diff, ContextSample, EnvironmentSpec, WorldSign};

/// A real-valued score of a context, used for logistic policies, routing
/// thresholds, and tilting statistics.
#[derive(Debug, Clone)]
pub enum ScoreFunction {
    /// `weights · [x; 1]` — the last weight is the intercept.
    Linear { weights: Vec<f64> },
    /// The true reward advantage of world `w` at the context (uses the latent
    /// hard flag, so this is an oracle, not a learnable score).
    OracleMargin { w: WorldSign },
}

impl ScoreFunction {
    pub fn linear(weights: Vec<f64>) -> ScoreFunction {
        ScoreFunction::Linear { weights }
    }

    /// Zero score in `d` dimensions (the untrained state).
    pub fn zeros(d: usize) -> ScoreFunction {
        ScoreFunction::Linear {
            weights: vec![0.0; d + 1],
        }
    }

    pub fn eval(&self, env: &EnvironmentSpec, c: &ContextSample) -> f64 {
        match self {
            ScoreFunction::Linear { weights } => {
                debug_assert_eq!(weights.len(), c.x.len() + 1);
                let mut acc = weights[weights.len() - 1];
                for (wi, xi) in weights.iter().zip(&c.x) {
                    acc += wi * xi;
                }
                acc
            }
            ScoreFunction::OracleMargin { w } => reward_diff(env, *w, c),
        }
    }

    /// Weight vector of a linear score, if it is one.
    pub fn weights(&self) -> Option<&[f64]> {
        match self {
            ScoreFunction::Linear { weights } => Some(weights),
            _ => None,
        }
    }
}

/// Log-odds of hard-set membership under the known mixture:
/// `ln(alpha/(1-alpha)) + mu_h·x - |mu_h|²/2`. Linear in `x`, monotone in the
/// likelihood ratio, so thresholding it is the optimal keep rule at any keep
/// rate.
pub fn mixture_posterior_logit(env: &EnvironmentSpec) -> ScoreFunction {
    let alpha = env.alpha();
    let mu = env.hard_center();
    let norm_sq: f64 = mu.iter().map(|m| m * m).sum();
    let mut weights = mu.to_vec();
    weights.push((alpha / (1.0 - alpha)).ln() - 0.5 * norm_sq);
    ScoreFunction::Linear { weights }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::sigmoid;
    use crate::rng::RngStream;
    use approx::assert_abs_diff_eq;

    #[test]
    fn linear_score_includes_intercept() {
        let env = EnvironmentSpec::aligned(2, 0.5, 1.0).unwrap();
        let s = ScoreFunction::linear(vec![2.0, -1.0, 0.5]);
        let c = ContextSample { x: vec![1.0, 3.0], hard: false };
        assert_abs_diff_eq!(s.eval(&env, &c), 2.0 - 3.0 + 0.5);
    }

    #[test]
    fn oracle_margin_is_the_reward_diff() {
        let env = EnvironmentSpec::aligned(2, 0.5, 1.0).unwrap();
        let s = ScoreFunction::OracleMargin { w: WorldSign::Minus };
        let c = ContextSample { x: vec![0.7, 0.0], hard: true };
        assert_abs_diff_eq!(s.eval(&env, &c), -1.0);
    }

    #[test]
    fn posterior_logit_matches_bayes_rule() {
        let env = EnvironmentSpec::aligned(3, 0.1, 2.5).unwrap();
        let logit = mixture_posterior_logit(&env);
        let mut rng = RngStream::seed(5);
        for _ in 0..50 {
            let c = crate::env::sample_context(&env, &mut rng);
            // direct posterior from the two Gaussian densities
            let mu = env.hard_center();
            let d_hard: f64 = c.x.iter().zip(mu).map(|(x, m)| (x - m) * (x - m)).sum();
            let d_easy: f64 = c.x.iter().map(|x| x * x).sum();
            let num = 0.1 * (-0.5 * d_hard).exp();
            let den = num + 0.9 * (-0.5 * d_easy).exp();
            let posterior = num / den;
            assert_abs_diff_eq!(sigmoid(logit.eval(&env, &c)), posterior, epsilon = 1e-10);
        }
    }
}
