//! Tabulated inverse CDF for continuous laws on ℝ known only through an
//! (unnormalized) log-density.

use crate::error::{Error, Result};
use crate::quad::gauss_legendre;
use rand::Rng;
use std::sync::OnceLock;

/// Omitted mass in each tail.
pub const TAIL_MASS: f64 = 1e-12;

const INITIAL_CELLS: usize = 128;
const MAX_DEPTH: u32 = 24;
const MAX_NODES: usize = 200_000;

fn gl5() -> &'static (Vec<f64>, Vec<f64>) {
    static NODES: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    NODES.get_or_init(|| gauss_legendre(5))
}

/// Piecewise-linear CDF on an adaptive grid; sampling inverts it exactly.
#[derive(Debug, Clone)]
pub struct InverseCdfTable {
    xs: Vec<f64>,
    cdf: Vec<f64>,
}

impl InverseCdfTable {
    /// `center` and `scale` locate the bulk of the mass; `ln_p` may be off by
    /// an additive constant.
    pub fn build(ln_p: impl Fn(f64) -> f64, center: f64, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite() && center.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "table needs finite center and positive scale, got ({center}, {scale})"
            )));
        }
        let ln_ref = ln_p(center);
        if !ln_ref.is_finite() {
            return Err(Error::InvalidInput(format!("log-density not finite at center {center}")));
        }
        let p = |x: f64| (ln_p(x) - ln_ref).exp();
        // `p(center) = 1`, so the total mass is of order `scale`.
        let budget = TAIL_MASS * scale;
        let lo = tail_end(&ln_p, ln_ref, center, -scale, budget)?;
        let hi = tail_end(&ln_p, ln_ref, center, scale, budget)?;

        let (gx, gw) = gl5();
        let mass = |a: f64, b: f64| -> f64 {
            let (m, h) = (0.5 * (a + b), 0.5 * (b - a));
            gx.iter().zip(gw).map(|(x, w)| w * p(m + h * x)).sum::<f64>() * h
        };

        let mut xs = vec![lo];
        let mut masses = Vec::new();
        let width = (hi - lo) / INITIAL_CELLS as f64;
        let tol = 2e-8 * scale;
        for c in 0..INITIAL_CELLS {
            let a = lo + c as f64 * width;
            let b = if c + 1 == INITIAL_CELLS { hi } else { a + width };
            // Depth-first bisection keeps `xs` sorted.
            let mut stack = vec![(b, 0u32)];
            let mut left = a;
            while let Some(&(right, depth)) = stack.last() {
                // Deviation of the true CDF from the chord at the midpoint.
                let mid = 0.5 * (left + right);
                let (m1, m2) = (mass(left, mid), mass(mid, right));
                if depth < MAX_DEPTH && 0.5 * (m1 - m2).abs() > tol {
                    stack.push((mid, depth + 1));
                    continue;
                }
                xs.push(right);
                masses.push(m1 + m2);
                left = right;
                stack.pop();
                if xs.len() > MAX_NODES {
                    return Err(Error::InvalidInput("inverse-CDF table exceeded node budget".into()));
                }
            }
        }
        let total: f64 = masses.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::InvalidInput(format!("table mass not positive: {total}")));
        }
        let mut cdf = Vec::with_capacity(xs.len());
        let mut acc = 0.0;
        cdf.push(0.0);
        for m in masses {
            acc += m;
            cdf.push(acc / total);
        }
        *cdf.last_mut().expect("non-empty") = 1.0;
        Ok(Self { xs, cdf })
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn support(&self) -> (f64, f64) {
        (self.xs[0], self.xs[self.xs.len() - 1])
    }

    /// Inverse of the piecewise-linear CDF, `u ∈ [0, 1]`.
    pub fn quantile(&self, u: f64) -> f64 {
        let i = self.cdf.partition_point(|&c| c <= u).clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let (x0, x1) = (self.xs[i - 1], self.xs[i]);
        if c1 > c0 {
            x0 + (u - c0) / (c1 - c0) * (x1 - x0)
        } else {
            x0
        }
    }

    /// Piecewise-linear CDF.
    pub fn cdf(&self, x: f64) -> f64 {
        let i = self.xs.partition_point(|&v| v <= x);
        if i == 0 {
            return 0.0;
        }
        if i >= self.xs.len() {
            return 1.0;
        }
        let (x0, x1) = (self.xs[i - 1], self.xs[i]);
        self.cdf[i - 1] + (x - x0) / (x1 - x0) * (self.cdf[i] - self.cdf[i - 1])
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile(rng.random::<f64>())
    }
}

/// Walks outward from `center` in steps that grow geometrically until the
/// remaining tail mass, estimated as `p(x)/λ(x)` with `λ` the local
/// log-density decay rate, falls below `budget`.
fn tail_end(ln_p: &impl Fn(f64) -> f64, ln_ref: f64, center: f64, step0: f64, budget: f64) -> Result<f64> {
    let mut x = center;
    let mut step = step0;
    for _ in 0..400 {
        x += step;
        let l = ln_p(x) - ln_ref;
        let h = 1e-3 * step0.abs();
        let decay = -(ln_p(x + h * step0.signum()) - ln_ref - l) / h;
        if decay > 0.0 && l.exp() / decay < budget {
            return Ok(x);
        }
        step *= 1.25;
    }
    Err(Error::InvalidInput(format!("density tail does not decay from center {center}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gaussian_table_quantiles() {
        let t = InverseCdfTable::build(|x| -0.5 * x * x, 0.0, 1.0).unwrap();
        let (lo, hi) = t.support();
        assert!(lo < -6.5 && hi > 6.5);
        assert!(t.quantile(0.5).abs() < 1e-6);
        // Φ(1) = 0.841344746...
        assert!((t.cdf(1.0) - 0.841_344_746_068_543).abs() < 1e-6);
        assert!(t.len() < 20_000);
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let t = InverseCdfTable::build(|x| -x.abs(), 0.0, 1.0).unwrap();
        let a: Vec<f64> = (0..10)
            .map({
                let mut r = ChaCha8Rng::seed_from_u64(7);
                move |_| t.sample(&mut r)
            })
            .collect();
        let t2 = InverseCdfTable::build(|x| -x.abs(), 0.0, 1.0).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(7);
        let b: Vec<f64> = (0..10).map(|_| t2.sample(&mut r)).collect();
        assert_eq!(a, b);
    }
}
