//! The six natural exponential families with quadratic variance function,
//! parameterized by their mean `ρ`.

use crate::error::{Error, Result};
use crate::special::{ln_abs_gamma_sq, ln_binomial, ln_gamma};
use crate::table::InverseCdfTable;
use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, Normal, Poisson};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, LN_2, PI};
use std::sync::{Arc, OnceLock};

/// Family tag together with its shape parameter.
///
/// `two_s` is the shape written `2𝔰` elsewhere: the Gamma shape, and the
/// negative-binomial stopping parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum NefFamily {
    Normal { sigma2: f64 },
    Poisson,
    Gamma { two_s: f64 },
    Binomial { kappa: u32 },
    NegBinomial { two_s: f64 },
    Ghs { r: f64 },
}

/// State space of a family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Support {
    Real,
    NonNegReal,
    NonNegInt,
    UpTo(u32),
}

impl Support {
    pub fn is_discrete(self) -> bool {
        matches!(self, Support::NonNegInt | Support::UpTo(_))
    }

    pub fn contains(self, x: f64) -> bool {
        match self {
            Support::Real => x.is_finite(),
            Support::NonNegReal => x >= 0.0 && x.is_finite(),
            Support::NonNegInt => x >= 0.0 && x.fract() == 0.0 && x.is_finite(),
            Support::UpTo(k) => x >= 0.0 && x <= k as f64 && x.fract() == 0.0,
        }
    }

    /// Largest admissible value, if bounded.
    pub fn cap(self) -> Option<u32> {
        match self {
            Support::UpTo(k) => Some(k),
            _ => None,
        }
    }
}

/// `V(ρ) = v2 ρ² + v1 ρ + v0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QvfTriple {
    pub v2: f64,
    pub v1: f64,
    pub v0: f64,
}

impl QvfTriple {
    pub const fn new(v2: f64, v1: f64, v0: f64) -> Self {
        Self { v2, v1, v0 }
    }

    pub fn eval(&self, rho: f64) -> f64 {
        (self.v2 * rho + self.v1) * rho + self.v0
    }

    pub fn max_abs_diff(&self, other: &QvfTriple) -> f64 {
        (self.v2 - other.v2).abs().max((self.v1 - other.v1).abs()).max((self.v0 - other.v0).abs())
    }
}

impl NefFamily {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            NefFamily::Normal { sigma2 } => sigma2 > 0.0 && sigma2.is_finite(),
            NefFamily::Poisson => true,
            NefFamily::Gamma { two_s } | NefFamily::NegBinomial { two_s } => two_s > 0.0 && two_s.is_finite(),
            NefFamily::Binomial { kappa } => kappa >= 1,
            NefFamily::Ghs { r } => r > 0.0 && r.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("invalid shape parameter for {self:?}")))
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            NefFamily::Normal { .. } => "normal",
            NefFamily::Poisson => "poisson",
            NefFamily::Gamma { .. } => "gamma",
            NefFamily::Binomial { .. } => "binomial",
            NefFamily::NegBinomial { .. } => "neg_binomial",
            NefFamily::Ghs { .. } => "ghs",
        }
    }

    pub fn support(&self) -> Support {
        match *self {
            NefFamily::Normal { .. } | NefFamily::Ghs { .. } => Support::Real,
            NefFamily::Gamma { .. } => Support::NonNegReal,
            NefFamily::Poisson | NefFamily::NegBinomial { .. } => Support::NonNegInt,
            NefFamily::Binomial { kappa } => Support::UpTo(kappa),
        }
    }

    pub fn is_discrete(&self) -> bool {
        self.support().is_discrete()
    }

    pub fn qvf(&self) -> QvfTriple {
        match *self {
            NefFamily::Normal { sigma2 } => QvfTriple::new(0.0, 0.0, sigma2),
            NefFamily::Poisson => QvfTriple::new(0.0, 1.0, 0.0),
            NefFamily::Gamma { two_s } => QvfTriple::new(1.0 / two_s, 0.0, 0.0),
            NefFamily::Binomial { kappa } => QvfTriple::new(-1.0 / kappa as f64, 1.0, 0.0),
            NefFamily::NegBinomial { two_s } => QvfTriple::new(1.0 / two_s, 1.0, 0.0),
            NefFamily::Ghs { r } => QvfTriple::new(1.0 / r, 0.0, r),
        }
    }

    /// Open interval of admissible means.
    pub fn mean_domain(&self) -> (f64, f64) {
        match *self {
            NefFamily::Normal { .. } | NefFamily::Ghs { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            NefFamily::Poisson | NefFamily::Gamma { .. } | NefFamily::NegBinomial { .. } => (0.0, f64::INFINITY),
            NefFamily::Binomial { kappa } => (0.0, kappa as f64),
        }
    }

    pub fn in_mean_domain(&self, rho: f64) -> bool {
        let (lo, hi) = self.mean_domain();
        rho.is_finite() && rho > lo && rho < hi
    }

    pub fn variance(&self, rho: f64) -> f64 {
        self.qvf().eval(rho)
    }
}

/// A family at a fixed mean.
#[derive(Debug, Clone)]
pub struct NefDistribution {
    family: NefFamily,
    rho: f64,
    theta: f64,
    table: OnceLock<Arc<InverseCdfTable>>,
}

/// Validates `(family, ρ)` and builds the distribution.
pub fn make_nef(family: NefFamily, rho: f64) -> Result<NefDistribution> {
    family.validate()?;
    if !family.in_mean_domain(rho) {
        let (lo, hi) = family.mean_domain();
        return Err(Error::Domain(format!("mean {rho} outside ({lo}, {hi}) for {}", family.name())));
    }
    let theta = match family {
        NefFamily::Ghs { r } => (rho / r).atan(),
        _ => 0.0,
    };
    Ok(NefDistribution { family, rho, theta, table: OnceLock::new() })
}

impl NefDistribution {
    pub fn family(&self) -> NefFamily {
        self.family
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// GHS tilt `θ = arctan(ρ/r)`; `None` for the other families.
    pub fn theta(&self) -> Option<f64> {
        matches!(self.family, NefFamily::Ghs { .. }).then_some(self.theta)
    }

    pub fn support(&self) -> Support {
        self.family.support()
    }

    /// `(mean, variance)`.
    pub fn moments(&self) -> (f64, f64) {
        (self.rho, self.family.variance(self.rho))
    }

    /// Log density (continuous) or log mass (discrete); `-∞` off the support.
    pub fn ln_density(&self, x: f64) -> f64 {
        if !self.support().contains(x) {
            return f64::NEG_INFINITY;
        }
        let rho = self.rho;
        match self.family {
            NefFamily::Normal { sigma2 } => -0.5 * (x - rho).powi(2) / sigma2 - 0.5 * (2.0 * PI * sigma2).ln(),
            NefFamily::Poisson => x * rho.ln() - rho - ln_gamma(x + 1.0),
            NefFamily::Gamma { two_s: k } => {
                let rate = k / rho;
                if x == 0.0 {
                    return match k.partial_cmp(&1.0) {
                        Some(std::cmp::Ordering::Less) => f64::INFINITY,
                        Some(std::cmp::Ordering::Equal) => rate.ln(),
                        _ => f64::NEG_INFINITY,
                    };
                }
                k * rate.ln() + (k - 1.0) * x.ln() - rate * x - ln_gamma(k)
            }
            NefFamily::Binomial { kappa } => {
                let q = rho / kappa as f64;
                ln_binomial(kappa as f64, x) + x * q.ln() + (kappa as f64 - x) * (-q).ln_1p()
            }
            NefFamily::NegBinomial { two_s: k } => {
                // Success probability `ρ/(ρ+k)` gives mean ρ and variance ρ + ρ²/k.
                let p = rho / (rho + k);
                ln_gamma(x + k) - ln_gamma(k) - ln_gamma(x + 1.0) + x * p.ln() + k * (k / (rho + k)).ln()
            }
            NefFamily::Ghs { r } => ghs_ln_density(r, self.theta, x),
        }
    }

    pub fn density(&self, x: f64) -> f64 {
        self.ln_density(x).exp()
    }

    /// One draw from the law.
    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let rho = self.rho;
        match self.family {
            NefFamily::Normal { sigma2 } => Normal::new(rho, sigma2.sqrt()).expect("validated").sample(rng),
            NefFamily::Poisson => Poisson::new(rho).expect("validated").sample(rng),
            NefFamily::Gamma { two_s: k } => Gamma::new(k, rho / k).expect("validated").sample(rng),
            NefFamily::Binomial { kappa } => {
                Binomial::new(kappa as u64, rho / kappa as f64).expect("validated").sample(rng) as f64
            }
            NefFamily::NegBinomial { two_s: k } => {
                // Gamma-mixed Poisson.
                let lambda = Gamma::new(k, rho / k).expect("validated").sample(rng);
                if lambda > 0.0 {
                    Poisson::new(lambda).expect("positive rate").sample(rng)
                } else {
                    0.0
                }
            }
            NefFamily::Ghs { .. } => self.ghs_table().sample(rng),
        }
    }

    /// `n` i.i.d. draws.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        (0..n).map(|_| self.sample_one(rng)).collect()
    }

    fn ghs_table(&self) -> &InverseCdfTable {
        self.table.get_or_init(|| {
            let NefFamily::Ghs { r } = self.family else { unreachable!("table only for GHS") };
            let theta = self.theta;
            let sd = self.family.variance(self.rho).sqrt();
            Arc::new(
                InverseCdfTable::build(|x| ghs_ln_density(r, theta, x), self.rho, sd)
                    .expect("GHS density is smooth with exponential tails"),
            )
        })
    }
}

/// `ln p_{r,θ}(x)` via the complex log-gamma.
pub fn ghs_ln_density(r: f64, theta: f64, x: f64) -> f64 {
    let lg = ln_abs_gamma_sq(0.5 * r, 0.5 * x);
    let ln_core = if lg.is_finite() { lg - 2.0 * ln_gamma(0.5 * r) } else { ghs_ln_gamma_ratio_product(r, x) };
    theta * x + r * theta.cos().ln() + ghs_ln_const(r) + ln_core
}

/// `ln[2^{r-2} Γ(r/2)² / (π Γ(r))]`, the normalizer once `|Γ(r/2 + ix/2)|²` is
/// divided by `Γ(r/2)²`.
fn ghs_ln_const(r: f64) -> f64 {
    (r - 2.0) * LN_2 - PI.ln() - ln_gamma(r) + 2.0 * ln_gamma(0.5 * r)
}

/// `ln |Γ(r/2 + ix/2) / Γ(r/2)|² = -Σ_{j≥0} ln(1 + x²/(r+2j)²)`, summed
/// directly to a cutoff and closed with an Euler–Maclaurin tail.
pub fn ghs_ln_gamma_ratio_product(r: f64, x: f64) -> f64 {
    let x = x.abs();
    if x == 0.0 {
        return 0.0;
    }
    let cutoff = (1000.0f64).max(10.0 * x).ceil() as usize;
    let term = |j: f64| (x / (r + 2.0 * j)).powi(2).ln_1p();
    let head: f64 = (0..cutoff).map(|j| term(j as f64)).sum();
    let w = r + 2.0 * cutoff as f64;
    // ∫_cutoff^∞ g(j) dj with w = r + 2j.
    let integral = 0.5 * (2.0 * x * (x / w).atan() - w * (x / w).powi(2).ln_1p());
    let g = term(cutoff as f64);
    let dg = -4.0 * x * x / (w * (w * w + x * x));
    -(head + integral + 0.5 * g - dg / 12.0)
}

/// `E[e^{tX}] = (cos θ / cos(θ + t))^r` for `X ~ GHS(r, θ)`.
pub fn ghs_mgf(r: f64, theta: f64, t: f64) -> Result<f64> {
    if r.is_nan() || r <= 0.0 {
        return Err(Error::Domain(format!("GHS shape must be positive, got {r}")));
    }
    if theta.abs() >= FRAC_PI_2 || (theta + t).abs() >= FRAC_PI_2 {
        return Err(Error::Domain(format!("MGF pole: |θ + t| = {} ≥ π/2", (theta + t).abs())));
    }
    Ok((theta.cos() / (theta + t).cos()).powf(r))
}

/// Student-t rejection sampler for GHS draws, kept to cross-check the table.
#[derive(Debug, Clone)]
pub struct GhsRejectionSampler {
    r: f64,
    theta: f64,
    loc: f64,
    scale: f64,
    ln_bound: f64,
}

const T_DOF: f64 = 3.0;

fn student_t_ln_density(z: f64) -> f64 {
    ln_gamma(0.5 * (T_DOF + 1.0))
        - ln_gamma(0.5 * T_DOF)
        - 0.5 * (T_DOF * PI).ln()
        - 0.5 * (T_DOF + 1.0) * (z * z / T_DOF).ln_1p()
}

impl GhsRejectionSampler {
    pub fn new(d: &NefDistribution) -> Result<Self> {
        let NefFamily::Ghs { r } = d.family() else {
            return Err(Error::InvalidInput("rejection sampler is GHS-only".into()));
        };
        let theta = d.theta;
        let loc = d.rho();
        let scale = d.family().variance(loc).sqrt();
        let ln_ratio = |x: f64| {
            let z = (x - loc) / scale;
            ghs_ln_density(r, theta, x) - (student_t_ln_density(z) - scale.ln())
        };
        // The ratio has one interior maximum; its tails vanish since the
        // proposal decays polynomially.
        let mut best = f64::NEG_INFINITY;
        for i in -4000..=4000 {
            best = best.max(ln_ratio(loc + scale * i as f64 * 0.01));
        }
        Ok(Self { r, theta, loc, scale, ln_bound: best + 0.05 })
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let t = rand_distr::StudentT::new(T_DOF).expect("positive dof");
        loop {
            let z: f64 = t.sample(rng);
            let x = self.loc + self.scale * z;
            let ln_acc =
                ghs_ln_density(self.r, self.theta, x) - (student_t_ln_density(z) - self.scale.ln()) - self.ln_bound;
            if rng.random::<f64>().ln() < ln_acc {
                return x;
            }
        }
    }
}

/// Result of [`classify_qvf`]: `η = scale·ξ + shift` with `ξ` from `family`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub family: NefFamily,
    pub scale: f64,
    pub shift: f64,
    pub warnings: Vec<String>,
}

/// Identifies the family of a variance function with the default tolerance.
pub fn classify_qvf(t: QvfTriple) -> Result<Classification> {
    classify_qvf_tol(t, 1e-8)
}

/// Identifies the family by the sign of `v2` and the discriminant of `V`.
///
/// `tol` is the threshold below which `v2`, `v1` and the discriminant are
/// treated as zero, and within which `-1/v2` must be an integer.
pub fn classify_qvf_tol(t: QvfTriple, tol: f64) -> Result<Classification> {
    let QvfTriple { v2, v1, v0 } = t;
    if ![v2, v1, v0].iter().all(|v| v.is_finite()) {
        return Err(Error::Unclassifiable(format!("non-finite triple {t:?}")));
    }
    let plain = |family, scale, shift| Ok(Classification { family, scale, shift, warnings: vec![] });
    let disc = v1 * v1 - 4.0 * v2 * v0;
    let disc_tol = tol * (1.0 + v1 * v1 + (4.0 * v2 * v0).abs());

    if v2.abs() <= tol {
        if v1.abs() <= tol {
            if v0 > tol {
                return plain(NefFamily::Normal { sigma2: v0 }, 1.0, 0.0);
            }
            return Err(Error::Unclassifiable(format!("constant variance {v0} is not positive")));
        }
        return plain(NefFamily::Poisson, v1, -v0 / v1);
    }

    if v2 > 0.0 {
        let shape = 1.0 / v2;
        let vertex = -v1 / (2.0 * v2);
        if disc.abs() <= disc_tol {
            return plain(NefFamily::Gamma { two_s: shape }, 1.0, vertex);
        }
        if disc > 0.0 {
            let root = disc.sqrt() / (2.0 * v2);
            let (large, small) = (vertex + root, vertex - root);
            return plain(NefFamily::NegBinomial { two_s: shape }, (large - small) * v2, large);
        }
        let min_value = v0 - v1 * v1 / (4.0 * v2);
        return plain(NefFamily::Ghs { r: shape }, (min_value * v2).sqrt(), vertex);
    }

    // v2 < 0: V is positive only between two real roots.
    if disc <= disc_tol {
        return Err(Error::Unclassifiable(format!("V = {v2}ρ² + {v1}ρ + {v0} is nowhere positive")));
    }
    let kappa_real = -1.0 / v2;
    let kappa = kappa_real.round();
    if (kappa_real - kappa).abs() > tol * kappa_real.max(1.0) || kappa < 1.0 {
        return Err(Error::Unclassifiable(format!("-1/v2 = {kappa_real} is not a positive integer")));
    }
    let vertex = -v1 / (2.0 * v2);
    let root = (disc.sqrt() / (2.0 * v2)).abs();
    let (small, large) = (vertex - root, vertex + root);
    let mut warnings = vec![];
    if kappa == 1.0 {
        warnings.push("excluded: a=0".to_string());
    }
    Ok(Classification {
        family: NefFamily::Binomial { kappa: kappa as u32 },
        scale: (large - small) / kappa,
        shift: small,
        warnings,
    })
}
