//! Ensemble summaries: moments, bootstrap standard errors, line fits.

use crate::error::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Resamples used for bootstrap standard errors.
pub const BOOTSTRAP_RESAMPLES: usize = 200;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance; zero for fewer than two values.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Standard error of the mean.
pub fn std_error(xs: &[f64]) -> f64 {
    (variance(xs) / xs.len() as f64).sqrt()
}

/// Bootstrap standard error of `stat` over replicas, seeded for
/// reproducibility.
pub fn bootstrap_se<T>(items: &[T], stat: impl Fn(&[&T]) -> f64, resamples: usize, seed: u64) -> f64 {
    let n = items.len();
    if n < 2 || resamples < 2 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks: Vec<&T> = Vec::with_capacity(n);
    let values: Vec<f64> = (0..resamples)
        .map(|_| {
            picks.clear();
            picks.extend((0..n).map(|_| &items[rng.random_range(0..n)]));
            stat(&picks)
        })
        .collect();
    variance(&values).sqrt()
}

/// Bootstrap standard error of the mean of `xs`.
pub fn bootstrap_mean_se(xs: &[f64], seed: u64) -> f64 {
    bootstrap_se(xs, |s| s.iter().copied().sum::<f64>() / s.len() as f64, BOOTSTRAP_RESAMPLES, seed)
}

/// Standard error of the sample variance, `√(Var(X̃²)/n)` with `X̃ = X − x̄`
/// (asymptotic, valid without normality).
pub fn variance_se(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let sq: Vec<f64> = xs.iter().map(|x| (x - m).powi(2)).collect();
    std_error(&sq)
}

/// Least-squares `(slope, intercept)` of `y` on `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidInput(format!("line fit needs ≥ 2 paired points, got {} and {}", x.len(), y.len())));
    }
    let (mx, my) = (mean(x), mean(y));
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidInput("line fit needs distinct abscissae".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}
