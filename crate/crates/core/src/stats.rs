//! Small statistics helpers shared by the Monte Carlo estimators.

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    pub n: u64,
}

impl Estimate {
    pub fn from_samples<I: IntoIterator<Item = f64>>(samples: I) -> Estimate {
        let mut w = Welford::new();
        for x in samples {
            w.push(x);
        }
        w.estimate()
    }

    /// Estimate of a Bernoulli mean from a success count.
    pub fn from_bernoulli(successes: u64, trials: u64) -> Estimate {
        assert!(trials > 0);
        let p = successes as f64 / trials as f64;
        Estimate {
            mean: p,
            se: (p * (1.0 - p) / trials as f64).sqrt(),
            n: trials,
        }
    }

    /// `mean ± k·se` interval.
    pub fn band(&self, k: f64) -> (f64, f64) {
        (self.mean - k * self.se, self.mean + k * self.se)
    }

    /// |mean - other.mean| measured in combined standard errors.
    pub fn sigma_distance(&self, other: &Estimate) -> f64 {
        let se = (self.se * self.se + other.se * other.se).sqrt();
        if se == 0.0 {
            if self.mean == other.mean {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.mean - other.mean).abs() / se
        }
    }
}

/// Streaming mean and variance (Welford).
#[derive(Debug, Clone, Copy, Default)]
pub struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn new() -> Welford {
        Welford::default()
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Welford) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = (self.n + other.n) as f64;
        let delta = other.mean - self.mean;
        self.mean += delta * other.n as f64 / n;
        self.m2 += other.m2 + delta * delta * self.n as f64 * other.n as f64 / n;
        self.n += other.n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Sample variance (n-1 denominator).
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn estimate(&self) -> Estimate {
        let se = if self.n == 0 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        };
        Estimate {
            mean: self.mean,
            se,
            n: self.n,
        }
    }
}

/// Compensated (Neumaier) summation; keeps weight sums and KL accumulations
/// accurate to a few ulps even over long vectors.
pub fn kahan_sum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Weighted mean under nonnegative weights that sum to one.
pub fn weighted_mean(weights: &[f64], values: &[f64]) -> f64 {
    kahan_sum(weights.iter().zip(values).map(|(&w, &v)| w * v))
}

/// Weighted covariance under a probability vector.
pub fn weighted_covariance(weights: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let ma = weighted_mean(weights, a);
    let mb = weighted_mean(weights, b);
    kahan_sum(
        weights
            .iter()
            .zip(a)
            .zip(b)
            .map(|((&w, &x), &y)| w * (x - ma) * (y - mb)),
    )
}

/// Weighted variance; two-pass form keeps the result nonnegative.
pub fn weighted_variance(weights: &[f64], a: &[f64]) -> f64 {
    let ma = weighted_mean(weights, a);
    kahan_sum(weights.iter().zip(a).map(|(&w, &x)| w * (x - ma) * (x - ma)))
}

/// Percentile with linear interpolation between closest ranks.
/// `q` in [0, 1]; input must be sorted ascending.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    assert!((0.0..=1.0).contains(&q));
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("median over NaN"));
    percentile_sorted(&v, 0.5)
}
