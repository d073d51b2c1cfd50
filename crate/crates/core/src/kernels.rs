//! Conditional redistribution kernels on a bond.
//!
//! A redistribution event replaces `(η_x, η_y)` by `(η_x − α, η_y + α)`, where
//! the new value `β = η_x − α` is drawn from the invariant product law
//! conditioned on `s = η_x + η_y`. The tilt parameter cancels in that
//! conditional law, so a kernel depends on the family's shape only.

use crate::error::{Error, Result};
use crate::nef::{ghs_ln_density, NefDistribution, NefFamily, Support};
use crate::quad::{integrate_line, tanh_sinh_gaps, Tolerance};
use crate::special::{ln_beta, ln_binomial};
use crate::table::InverseCdfTable;
use rand::Rng;
use rand_distr::{Beta, Binomial, Distribution, Hypergeometric, Normal};
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

/// Spacing of the bond-sum grid on which GHS conditional tables are cached.
pub const GHS_SUM_STEP: f64 = 1e-3;
const GHS_CACHE_CAP: usize = 1024;

const ORACLE_TOL: Tolerance = Tolerance::new(1e-12, 1e-12);

/// Conditional law of a bond's redistribution.
#[derive(Debug, Clone)]
pub struct BondKernel {
    family: NefFamily,
    ghs: Option<Arc<GhsConditionalCache>>,
}

/// Values the transfer `α` may take from a given pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TransferSupport {
    /// Integers `lo..=hi`.
    Lattice {
        lo: i64,
        hi: i64,
    },
    /// `(lo, hi)`.
    Interval {
        lo: f64,
        hi: f64,
    },
    Real,
    /// Only `α = 0`.
    Point,
}

impl BondKernel {
    pub fn new(family: NefFamily) -> Result<Self> {
        family.validate()?;
        let ghs = match family {
            NefFamily::Ghs { r } => Some(Arc::new(GhsConditionalCache::new(r))),
            _ => None,
        };
        Ok(Self { family, ghs })
    }

    /// The kernel of a distribution's family; the mean plays no role.
    pub fn for_distribution(d: &NefDistribution) -> Result<Self> {
        Self::new(d.family())
    }

    pub fn family(&self) -> NefFamily {
        self.family
    }

    pub fn admissible(&self, ex: f64, ey: f64) -> bool {
        let s = self.family.support();
        s.contains(ex) && s.contains(ey)
    }

    fn check(&self, ex: f64, ey: f64) -> Result<()> {
        if self.admissible(ex, ey) {
            Ok(())
        } else {
            Err(Error::Domain(format!("states ({ex}, {ey}) not admissible for {}", self.family.name())))
        }
    }

    pub fn transfer_support(&self, ex: f64, ey: f64) -> Result<TransferSupport> {
        self.check(ex, ey)?;
        let s = ex + ey;
        Ok(match self.family.support() {
            Support::Real => TransferSupport::Real,
            Support::NonNegReal if s == 0.0 => TransferSupport::Point,
            Support::NonNegReal => TransferSupport::Interval { lo: -ey, hi: ex },
            Support::NonNegInt => TransferSupport::Lattice { lo: -(ey as i64), hi: ex as i64 },
            Support::UpTo(k) => {
                // β = ex − α ∈ [max(0, s − κ), min(s, κ)].
                let (s, k) = (s as i64, k as i64);
                TransferSupport::Lattice { lo: ex as i64 - s.min(k), hi: ex as i64 - (s - k).max(0) }
            }
        })
    }

    /// Density (continuous) or mass (discrete) of the transfer `α`.
    pub fn density(&self, ex: f64, ey: f64, alpha: f64) -> Result<f64> {
        if self.family.is_discrete() {
            self.check(ex, ey)?;
            return Ok(self.mass(ex, ey, alpha));
        }
        Ok(self.ln_density(ex, ey, alpha)?.exp())
    }

    /// Exact mass of a discrete kernel for moderate sums.
    fn mass(&self, ex: f64, ey: f64, alpha: f64) -> f64 {
        let support = self.family.support();
        let (beta, gamma) = (ex - alpha, ey + alpha);
        if !support.contains(beta) || !support.contains(gamma) {
            return 0.0;
        }
        let s = ex + ey;
        match self.family {
            NefFamily::Poisson => binomial(s, beta) / 2f64.powf(s),
            NefFamily::Binomial { kappa } => {
                let k = kappa as f64;
                binomial(k, beta) * binomial(k, gamma) / binomial(2.0 * k, s)
            }
            NefFamily::NegBinomial { two_s: k } if s <= EXACT_LIMIT => {
                binomial(s, beta) * rising(k, beta) * rising(k, gamma) / rising(2.0 * k, s)
            }
            NefFamily::NegBinomial { two_s: k } => {
                (ln_binomial(s, beta) + ln_beta(beta + k, gamma + k) - ln_beta(k, k)).exp()
            }
            _ => unreachable!("continuous family"),
        }
    }

    pub fn ln_density(&self, ex: f64, ey: f64, alpha: f64) -> Result<f64> {
        self.check(ex, ey)?;
        let support = self.family.support();
        let (beta, gamma) = (ex - alpha, ey + alpha);
        if !support.contains(beta) || !support.contains(gamma) {
            return Ok(f64::NEG_INFINITY);
        }
        let s = ex + ey;
        Ok(match self.family {
            NefFamily::Normal { sigma2 } => {
                let var = 0.5 * sigma2;
                let d = alpha - 0.5 * (ex - ey);
                -0.5 * d * d / var - 0.5 * (2.0 * PI * var).ln()
            }
            NefFamily::Gamma { two_s: k } => {
                if s == 0.0 {
                    return Err(Error::Domain("gamma kernel at s = 0 is a point mass".into()));
                }
                (k - 1.0) * (beta.ln() + gamma.ln()) - ln_beta(k, k) - (2.0 * k - 1.0) * s.ln()
            }
            NefFamily::Poisson | NefFamily::Binomial { .. } | NefFamily::NegBinomial { .. } => {
                self.mass(ex, ey, alpha).ln()
            }
            NefFamily::Ghs { r } => {
                ghs_ln_density(r, 0.0, beta) + ghs_ln_density(r, 0.0, gamma) - ghs_ln_density(2.0 * r, 0.0, s)
            }
        })
    }

    /// `E[α] = (η_x − η_y)/2`.
    pub fn m1(&self, ex: f64, ey: f64) -> f64 {
        0.5 * (ex - ey)
    }

    /// Variance of the new value `β` given the pair.
    pub fn conditional_variance(&self, ex: f64, ey: f64) -> f64 {
        let s = ex + ey;
        match self.family {
            NefFamily::Normal { sigma2 } => 0.5 * sigma2,
            NefFamily::Poisson => 0.25 * s,
            NefFamily::Gamma { two_s: k } => s * s / (4.0 * (2.0 * k + 1.0)),
            NefFamily::Binomial { kappa } => {
                let k = kappa as f64;
                s * (2.0 * k - s) / (4.0 * (2.0 * k - 1.0))
            }
            NefFamily::NegBinomial { two_s: k } => s * (2.0 * k + s) / (4.0 * (2.0 * k + 1.0)),
            NefFamily::Ghs { r } => (s * s + 4.0 * r * r) / (4.0 * (2.0 * r + 1.0)),
        }
    }

    /// Closed-form `E[α²]`.
    pub fn m2(&self, ex: f64, ey: f64) -> f64 {
        let m1 = self.m1(ex, ey);
        self.conditional_variance(ex, ey) + m1 * m1
    }

    /// `E[g(β)]` over the new value of the first site, by exact summation
    /// (discrete) or quadrature (continuous).
    pub fn expect_new_value(&self, ex: f64, ey: f64, mut g: impl FnMut(f64) -> f64) -> Result<f64> {
        let support = self.transfer_support(ex, ey)?;
        let s = ex + ey;
        match support {
            TransferSupport::Point => Ok(g(ex)),
            TransferSupport::Lattice { lo, hi } => {
                let mut acc = 0.0;
                for a in lo..=hi {
                    let a = a as f64;
                    acc += g(ex - a) * self.mass(ex, ey, a);
                }
                Ok(acc)
            }
            TransferSupport::Interval { .. } => {
                let NefFamily::Gamma { two_s: k } = self.family else {
                    unreachable!("only gamma has interval transfers")
                };
                let ln_norm = ln_beta(k, k) + (2.0 * k - 1.0) * s.ln();
                // β is the left gap and s − β the right gap, both exact.
                tanh_sinh_gaps(|b, c| g(b) * ((k - 1.0) * (b.ln() + c.ln()) - ln_norm).exp(), 0.0, s, ORACLE_TOL)
            }
            TransferSupport::Real => {
                let sd = self.conditional_variance(ex, ey).sqrt();
                integrate_line(
                    |b| {
                        let ln = self.ln_density(ex, ey, ex - b).expect("admissible pair");
                        if ln == f64::NEG_INFINITY {
                            0.0
                        } else {
                            g(b) * ln.exp()
                        }
                    },
                    0.5 * s,
                    sd,
                    ORACLE_TOL,
                )
            }
        }
    }

    /// `E[α^k]` by summation or quadrature.
    pub fn moment_numeric(&self, ex: f64, ey: f64, k: i32) -> Result<f64> {
        self.expect_new_value(ex, ey, |b| (ex - b).powi(k))
    }

    /// `E[α²]` by summation or quadrature.
    pub fn m2_numeric(&self, ex: f64, ey: f64) -> Result<f64> {
        self.moment_numeric(ex, ey, 2)
    }

    /// Draws the new value `β` of the first site.
    pub fn sample_new_value<R: Rng + ?Sized>(&self, ex: f64, ey: f64, rng: &mut R) -> f64 {
        let s = ex + ey;
        match self.family {
            NefFamily::Normal { sigma2 } => Normal::new(0.5 * s, (0.5 * sigma2).sqrt()).expect("validated").sample(rng),
            NefFamily::Poisson => Binomial::new(s as u64, 0.5).expect("valid").sample(rng) as f64,
            NefFamily::Gamma { two_s: k } => {
                if s == 0.0 {
                    0.0
                } else {
                    s * Beta::new(k, k).expect("validated").sample(rng)
                }
            }
            NefFamily::Binomial { kappa } => {
                let k = kappa as u64;
                Hypergeometric::new(2 * k, k, s as u64).expect("s ≤ 2κ").sample(rng) as f64
            }
            NefFamily::NegBinomial { two_s: k } => {
                let p = Beta::new(k, k).expect("validated").sample(rng);
                Binomial::new(s as u64, p).expect("p in [0,1]").sample(rng) as f64
            }
            NefFamily::Ghs { .. } => self.ghs.as_ref().expect("built for GHS").sample(s, rng),
        }
    }

    /// Draws the transfer `α`.
    pub fn sample_transfer<R: Rng + ?Sized>(&self, ex: f64, ey: f64, rng: &mut R) -> f64 {
        ex - self.sample_new_value(ex, ey, rng)
    }

    /// Resamples the pair; the second value is `s − β`, so the sum is kept
    /// bit-for-bit for integers and up to one rounding for reals.
    pub fn thermalize<R: Rng + ?Sized>(&self, ex: f64, ey: f64, rng: &mut R) -> (f64, f64) {
        let s = ex + ey;
        let beta = self.sample_new_value(ex, ey, rng);
        (beta, s - beta)
    }

    /// Number of GHS conditional tables currently cached.
    pub fn cached_tables(&self) -> usize {
        self.ghs.as_ref().map_or(0, |c| c.len())
    }
}

/// Integer sums up to this size use exact products instead of log-gamma.
const EXACT_LIMIT: f64 = 60.0;

/// `C(n, k)` for non-negative integers; exact while the result fits in 53 bits.
fn binomial(n: f64, k: f64) -> f64 {
    if n > EXACT_LIMIT {
        return ln_binomial(n, k).exp();
    }
    let k = k.min(n - k);
    let mut acc = 1.0;
    let mut j = 0.0;
    while j < k {
        acc = acc * (n - j) / (j + 1.0);
        j += 1.0;
    }
    acc.round()
}

/// Rising factorial `x (x+1) ⋯ (x+n−1)`.
fn rising(x: f64, n: f64) -> f64 {
    let mut acc = 1.0;
    let mut j = 0.0;
    while j < n {
        acc *= x + j;
        j += 1.0;
    }
    acc
}

/// Kernel recomputed from the marginals, `p_ρ(β) p_ρ(s−β) / p^{(2)}_{2ρ}(s)`,
/// with the sum law taken from the same family at doubled shape. Depends on
/// `ρ` only through rounding; used to certify that the kernel does not.
pub fn density_from_marginals(family: NefFamily, rho: f64, ex: f64, ey: f64, alpha: f64) -> Result<f64> {
    let single = crate::nef::make_nef(family, rho)?;
    let doubled = match family {
        NefFamily::Normal { sigma2 } => NefFamily::Normal { sigma2: 2.0 * sigma2 },
        NefFamily::Poisson => NefFamily::Poisson,
        NefFamily::Gamma { two_s } => NefFamily::Gamma { two_s: 2.0 * two_s },
        NefFamily::Binomial { kappa } => NefFamily::Binomial { kappa: 2 * kappa },
        NefFamily::NegBinomial { two_s } => NefFamily::NegBinomial { two_s: 2.0 * two_s },
        NefFamily::Ghs { r } => NefFamily::Ghs { r: 2.0 * r },
    };
    let pair = crate::nef::make_nef(doubled, 2.0 * rho)?;
    let ln = single.ln_density(ex - alpha) + single.ln_density(ey + alpha) - pair.ln_density(ex + ey);
    Ok(ln.exp())
}

/// Inverse-CDF tables of the GHS conditional law keyed by the bond sum on a
/// grid of spacing [`GHS_SUM_STEP`]; draws interpolate quantiles between the
/// two neighbouring grid sums.
#[derive(Debug)]
pub struct GhsConditionalCache {
    r: f64,
    inner: Mutex<CacheInner>,
}

#[derive(Debug, Default)]
struct CacheInner {
    tick: u64,
    tables: HashMap<i64, (u64, Arc<InverseCdfTable>)>,
}

impl GhsConditionalCache {
    pub fn new(r: f64) -> Self {
        Self { r, inner: Mutex::new(CacheInner::default()) }
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("cache lock").tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn table(&self, key: i64) -> Arc<InverseCdfTable> {
        {
            let mut inner = self.inner.lock().expect("cache lock");
            inner.tick += 1;
            let tick = inner.tick;
            if let Some(entry) = inner.tables.get_mut(&key) {
                entry.0 = tick;
                return entry.1.clone();
            }
        }
        // Built outside the lock; a concurrent duplicate build is harmless.
        let s = key as f64 * GHS_SUM_STEP;
        let r = self.r;
        let sd = ((s * s + 4.0 * r * r) / (4.0 * (2.0 * r + 1.0))).sqrt();
        let table = Arc::new(
            InverseCdfTable::build(|b| ghs_ln_density(r, 0.0, b) + ghs_ln_density(r, 0.0, s - b), 0.5 * s, sd)
                .expect("GHS conditional density is smooth with exponential tails"),
        );
        let mut inner = self.inner.lock().expect("cache lock");
        if inner.tables.len() >= GHS_CACHE_CAP {
            let oldest = inner.tables.iter().min_by_key(|(_, (t, _))| *t).map(|(k, _)| *k);
            if let Some(k) = oldest {
                inner.tables.remove(&k);
            }
        }
        let tick = inner.tick;
        inner.tables.insert(key, (tick, table.clone()));
        table
    }

    /// Draws `β` given the bond sum `s`.
    pub fn sample<R: Rng + ?Sized>(&self, s: f64, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let pos = s / GHS_SUM_STEP;
        let k0 = pos.floor();
        let frac = pos - k0;
        let lower = self.table(k0 as i64).quantile(u);
        if frac == 0.0 {
            return lower;
        }
        let upper = self.table(k0 as i64 + 1).quantile(u);
        (1.0 - frac) * lower + frac * upper
    }
}
