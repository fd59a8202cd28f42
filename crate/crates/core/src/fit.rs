//! Logistic preference fitting.
//!
//! Queried rounds become `(features, z)` pairs: features are `[x; 1]` and
//! `z = +1` when the preferred action was `a1`. A label saying "the truly
//! better action won" is recoded through the better action's identity, which
//! is exactly what an annotator's raw choice exposes. Fitting maximizes the
//! L2-regularized mean log-likelihood by deterministic full-batch gradient
//! ascent from zero weights, with step halving so the objective never
//! regresses.

use crate::env::{optimal_action, sigmoid, Action, EnvironmentSpec, WorldSign};
use crate::error::{Error, Result};
use crate::protocols::TranscriptRecord;
use crate::score::ScoreFunction;

/// Gradient-ascent settings. Defaults follow the experiment configuration:
/// 500 iterations, step 0.1, l2 = 1e-4.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub iterations: u32,
    pub step: f64,
    pub l2: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            iterations: 500,
            step: 0.1,
            l2: 1e-4,
        }
    }
}

/// A recoded training example: feature vector `[x; 1]` and the signed
/// preferred-action indicator.
#[derive(Debug, Clone)]
pub struct PreferencePair {
    pub features: Vec<f64>,
    /// `+1` if `a1` was preferred, `-1` otherwise.
    pub z: f64,
}

/// Turn the queried rounds of a transcript into training pairs.
pub fn preference_pairs(
    env: &EnvironmentSpec,
    w_true: WorldSign,
    transcript: &[TranscriptRecord],
) -> Vec<PreferencePair> {
    transcript
        .iter()
        .filter_map(|r| {
            let label = r.label?;
            let better = optimal_action(env, w_true, &r.context);
            let preferred = if label.0 { better } else { flip(better) };
            let mut features = r.context.x.clone();
            features.push(1.0);
            Some(PreferencePair {
                features,
                z: if preferred == Action::A1 { 1.0 } else { -1.0 },
            })
        })
        .collect()
}

fn flip(a: Action) -> Action {
    match a {
        Action::A0 => Action::A1,
        Action::A1 => Action::A0,
    }
}

/// Regularized mean log-likelihood of weights on the pairs.
pub fn log_likelihood(pairs: &[PreferencePair], weights: &[f64], l2: f64) -> f64 {
    let m = pairs.len() as f64;
    let mut ll = 0.0;
    for p in pairs {
        let margin: f64 = weights.iter().zip(&p.features).map(|(w, f)| w * f).sum();
        // log sigmoid(z·margin), stable form
        let u = p.z * margin;
        ll += if u > 0.0 {
            -(1.0 + (-u).exp()).ln()
        } else {
            u - (1.0 + u.exp()).ln()
        };
    }
    let penalty: f64 = weights.iter().map(|w| w * w).sum::<f64>();
    ll / m - 0.5 * l2 * penalty
}

/// Fit a linear preference score on the queried rounds of a transcript.
pub fn fit_preference_score(
    env: &EnvironmentSpec,
    w_true: WorldSign,
    transcript: &[TranscriptRecord],
    opts: FitOptions,
) -> Result<ScoreFunction> {
    let pairs = preference_pairs(env, w_true, transcript);
    fit_pairs(&pairs, env.d(), opts)
}

/// Fit directly on recoded pairs.
pub fn fit_pairs(pairs: &[PreferencePair], d: usize, opts: FitOptions) -> Result<ScoreFunction> {
    if pairs.is_empty() {
        return Err(Error::InsufficientData(
            "no labeled records to fit on".into(),
        ));
    }
    let dim = d + 1;
    if pairs.iter().any(|p| p.features.len() != dim) {
        return Err(Error::invalid("feature length does not match dimension"));
    }
    let m = pairs.len() as f64;
    let mut weights = vec![0.0f64; dim];
    let mut grad = vec![0.0f64; dim];
    let mut current = log_likelihood(pairs, &weights, opts.l2);

    for _ in 0..opts.iterations {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for p in pairs {
            let margin: f64 = weights.iter().zip(&p.features).map(|(w, f)| w * f).sum();
            let slack = sigmoid(-p.z * margin); // 1 - P(observed)
            let coeff = p.z * slack;
            for (g, f) in grad.iter_mut().zip(&p.features) {
                *g += coeff * f;
            }
        }
        for (g, w) in grad.iter_mut().zip(&weights) {
            *g = *g / m - opts.l2 * w;
        }

        // step halving keeps the objective nonincreasing in loss terms
        let mut step = opts.step;
        loop {
            let candidate: Vec<f64> = weights
                .iter()
                .zip(&grad)
                .map(|(w, g)| w + step * g)
                .collect();
            let next = log_likelihood(pairs, &candidate, opts.l2);
            if next >= current || step < 1e-12 {
                weights = candidate;
                current = next;
                break;
            }
            step *= 0.5;
        }
    }
    Ok(ScoreFunction::Linear { weights })
}
