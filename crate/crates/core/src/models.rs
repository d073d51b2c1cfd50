//! Bond generators of every implemented dynamics, extraction of their linear
//! and quadratic actions, and the variance triple those actions imply.
//!
//! All generators use the pair-sum convention: the bond operator is one half
//! of the sum of the two directed operators. Directed particle rates therefore
//! carry a factor `½`, and a redistribution bond is thermalized at rate one.

use crate::error::{Error, Result};
use crate::kernels::BondKernel;
use crate::nef::{make_nef, NefFamily, QvfTriple, Support};
use crate::poly::BivariatePoly;
use crate::quad::gauss_legendre;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Which dynamics runs on each bond. `two_s` is the shape `2𝔰`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    Redistribution { family: NefFamily },
    Irw,
    Pep { kappa: u32 },
    Sip { two_s: f64 },
    Harmonic { two_s: f64 },
    GinzburgLandau { sigma2: f64 },
}

/// A dynamics together with the reference mean of its invariant family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(flatten)]
    pub kind: ModelKind,
    pub rho: f64,
}

impl ModelKind {
    /// Marginal law of the invariant product measures.
    pub fn invariant_family(&self) -> NefFamily {
        match *self {
            ModelKind::Redistribution { family } => family,
            ModelKind::Irw => NefFamily::Poisson,
            ModelKind::Pep { kappa } => NefFamily::Binomial { kappa },
            ModelKind::Sip { two_s } | ModelKind::Harmonic { two_s } => NefFamily::NegBinomial { two_s },
            ModelKind::GinzburgLandau { sigma2 } => NefFamily::Normal { sigma2 },
        }
    }

    pub fn name(&self) -> String {
        match *self {
            ModelKind::Redistribution { family } => match family {
                NefFamily::Normal { sigma2 } => format!("redistribution_normal(sigma2={sigma2})"),
                NefFamily::Poisson => "redistribution_poisson".into(),
                NefFamily::Gamma { two_s } => format!("redistribution_gamma(2s={two_s})"),
                NefFamily::Binomial { kappa } => format!("redistribution_binomial(kappa={kappa})"),
                NefFamily::NegBinomial { two_s } => format!("redistribution_neg_binomial(2s={two_s})"),
                NefFamily::Ghs { r } => format!("redistribution_ghs(r={r})"),
            },
            ModelKind::Irw => "irw".into(),
            ModelKind::Pep { kappa } => format!("pep(kappa={kappa})"),
            ModelKind::Sip { two_s } => format!("sip(2s={two_s})"),
            ModelKind::Harmonic { two_s } => format!("harmonic(2s={two_s})"),
            ModelKind::GinzburgLandau { sigma2 } => format!("ginzburg_landau(sigma2={sigma2})"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.invariant_family().validate()?;
        match *self {
            ModelKind::Pep { kappa: 0 } => Err(Error::Domain("PEP needs κ ≥ 1".into())),
            _ => Ok(()),
        }
    }

    pub fn support(&self) -> Support {
        self.invariant_family().support()
    }

    pub fn is_discrete(&self) -> bool {
        self.support().is_discrete()
    }

    /// Whether bond actions are exact (summation or symbolic) rather than
    /// quadrature.
    pub fn is_exact(&self) -> bool {
        self.is_discrete() || matches!(self, ModelKind::GinzburgLandau { .. })
    }

    /// Default tolerance for closure residuals and gradient checks.
    pub fn default_tolerance(&self) -> f64 {
        if self.is_exact() {
            1e-10
        } else {
            1e-7
        }
    }
}

impl ModelSpec {
    pub fn new(kind: ModelKind, rho: f64) -> Result<Self> {
        let m = Self { kind, rho };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        self.kind.validate()?;
        make_nef(self.kind.invariant_family(), self.rho).map(|_| ())
    }

    pub fn build(&self) -> Result<Model> {
        Model::new(*self)
    }
}

/// `c_α(η)` for `α = 1..=η` in the harmonic model, the total rate of `α`
/// particles leaving a site with `η` before the directed factor `½`:
/// `c_α(η) = (1/α) ∏_{j<α} (η−j)/(η−j−1+k)` with `k = 2𝔰`.
pub fn harmonic_rates(two_s: f64, eta: u32) -> Vec<f64> {
    let mut out = Vec::with_capacity(eta as usize);
    let mut prod = 1.0;
    for alpha in 1..=eta {
        let j = (alpha - 1) as f64;
        prod *= (eta as f64 - j) / (eta as f64 - j - 1.0 + two_s);
        out.push(prod / alpha as f64);
    }
    out
}

/// A validated model with the precomputed pieces its bond action needs.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    kernel: Option<BondKernel>,
}

impl Model {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let kernel = match spec.kind {
            ModelKind::Redistribution { family } => Some(BondKernel::new(family)?),
            _ => None,
        };
        Ok(Self { spec, kernel })
    }

    pub fn spec(&self) -> ModelSpec {
        self.spec
    }

    pub fn kind(&self) -> ModelKind {
        self.spec.kind
    }

    pub fn kernel(&self) -> Option<&BondKernel> {
        self.kernel.as_ref()
    }

    /// Directed jumps out of a site holding `from` towards one holding `to`,
    /// as `(amount, rate)` with the factor `½` included. Particle kinds only.
    pub fn directed_jumps(&self, from: f64, to: f64, out: &mut Vec<(f64, f64)>) {
        out.clear();
        match self.spec.kind {
            ModelKind::Irw => push_positive(out, 1.0, 0.5 * from),
            ModelKind::Pep { kappa } => push_positive(out, 1.0, 0.5 * from * (kappa as f64 - to)),
            ModelKind::Sip { two_s } => push_positive(out, 1.0, 0.5 * from * (two_s + to)),
            ModelKind::Harmonic { two_s } => {
                for (i, c) in harmonic_rates(two_s, from as u32).into_iter().enumerate() {
                    push_positive(out, (i + 1) as f64, 0.5 * c);
                }
            }
            ModelKind::Redistribution { .. } | ModelKind::GinzburgLandau { .. } => {}
        }
    }

    /// All transitions `(η₀', η₁', rate)` of a discrete bond from `(η₀, η₁)`.
    pub fn bond_transitions(&self, e0: f64, e1: f64) -> Result<Vec<(f64, f64, f64)>> {
        let mut out = Vec::new();
        match self.spec.kind {
            ModelKind::Redistribution { family } if family.is_discrete() => {
                let k = self.kernel.as_ref().expect("redistribution kernel");
                let s = e0 + e1;
                // ½∇₀₁ and ½∇₁₀ reach the same pair, with site 0 resp. site 1 as source.
                let crate::kernels::TransferSupport::Lattice { lo, hi } = k.transfer_support(e0, e1)? else {
                    unreachable!("discrete kernel")
                };
                for a in lo..=hi {
                    let beta = e0 - a as f64;
                    if beta == e0 {
                        continue;
                    }
                    let forward = k.density(e0, e1, a as f64)?;
                    let backward = k.density(e1, e0, e1 - (s - beta))?;
                    out.push((beta, s - beta, 0.5 * forward + 0.5 * backward));
                }
            }
            ModelKind::Irw | ModelKind::Pep { .. } | ModelKind::Sip { .. } | ModelKind::Harmonic { .. } => {
                if !(self.spec.kind.support().contains(e0) && self.spec.kind.support().contains(e1)) {
                    return Err(Error::Domain(format!("states ({e0}, {e1}) not admissible")));
                }
                let mut jumps = Vec::new();
                self.directed_jumps(e0, e1, &mut jumps);
                out.extend(jumps.iter().map(|&(n, r)| (e0 - n, e1 + n, r)));
                self.directed_jumps(e1, e0, &mut jumps);
                out.extend(jumps.iter().map(|&(n, r)| (e0 + n, e1 - n, r)));
            }
            _ => return Err(Error::InvalidInput(format!("{} has no finite transition list", self.spec.kind.name()))),
        }
        Ok(out)
    }

    /// `L₀,₁ f` at `(η₀, η₁)` for an arbitrary function; not available for
    /// the diffusion, whose action needs derivatives.
    pub fn bond_action_fn(&self, f: &dyn Fn(f64, f64) -> f64, e0: f64, e1: f64) -> Result<f64> {
        match self.spec.kind {
            ModelKind::GinzburgLandau { .. } => {
                Err(Error::InvalidInput("diffusion bond action needs a polynomial".into()))
            }
            ModelKind::Redistribution { family } if !family.is_discrete() => {
                let k = self.kernel.as_ref().expect("redistribution kernel");
                let s = e0 + e1;
                let here = f(e0, e1);
                let fwd = k.expect_new_value(e0, e1, |b| f(b, s - b))?;
                let bwd = k.expect_new_value(e1, e0, |b| f(s - b, b))?;
                Ok(0.5 * (fwd - here) + 0.5 * (bwd - here))
            }
            _ => {
                let here = f(e0, e1);
                Ok(self.bond_transitions(e0, e1)?.iter().map(|&(a, b, r)| r * (f(a, b) - here)).sum())
            }
        }
    }

    /// `L₀,₁ p` at `(η₀, η₁)`.
    pub fn bond_action(&self, p: &BivariatePoly, e0: f64, e1: f64) -> Result<f64> {
        match self.spec.kind {
            ModelKind::GinzburgLandau { .. } => Ok(self.diffusion_action(p).expect("diffusion").eval(e0, e1)),
            _ => self.bond_action_fn(&|a, b| p.eval(a, b), e0, e1),
        }
    }

    /// Symbolic `L₀,₁ p = ½(∂₁−∂₀)²p − (1/(2σ²))(η₁−η₀)(∂₁−∂₀)p` for the
    /// diffusion; `None` for the other kinds.
    pub fn diffusion_action(&self, p: &BivariatePoly) -> Option<BivariatePoly> {
        let ModelKind::GinzburgLandau { sigma2 } = self.spec.kind else { return None };
        let dir = p.d1() - p.d0();
        let second = dir.d1() - dir.d0();
        let drift = &(BivariatePoly::eta1() - BivariatePoly::eta0()) * &dir;
        Some(second.scale(0.5) - drift.scale(0.5 / sigma2))
    }

    /// State pairs for coefficient extraction: every admissible pair with
    /// entries up to `min(cap, 6)` for discrete kinds, a 5×5 tensor grid of
    /// Gauss nodes mapped into the state space otherwise.
    pub fn evaluation_grid(&self) -> Vec<(f64, f64)> {
        let support = self.spec.kind.support();
        if support.is_discrete() {
            let top = support.cap().unwrap_or(6).min(6);
            let mut out = Vec::new();
            for a in 0..=top {
                for b in 0..=top {
                    out.push((a as f64, b as f64));
                }
            }
            return out;
        }
        let (nodes, _) = gauss_legendre(5);
        let rho = self.spec.rho;
        let sd = self.spec.kind.invariant_family().variance(rho).sqrt();
        let map = |u: f64| match support {
            Support::NonNegReal => 1.5 * rho * (1.0 + u),
            _ => rho + 2.0 * sd * u,
        };
        let mut out = Vec::new();
        for &u in &nodes {
            for &v in &nodes {
                // Offset the second coordinate so no pair sits on the diagonal.
                out.push((map(u), map(0.9 * v + 0.05)));
            }
        }
        out
    }
}

fn push_positive(out: &mut Vec<(f64, f64)>, amount: f64, rate: f64) {
    if rate > 0.0 {
        out.push((amount, rate));
    }
}

/// Linear action `L₀,₁η₀ = p η₀ + q η₁ + r` and `D = −p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearCoeffs {
    pub p: f64,
    pub q: f64,
    pub r: f64,
    #[serde(rename = "D")]
    pub diffusivity: f64,
    pub residual: f64,
}

/// Linear action plus `L₀,₁(η₀η₁) = a(η₀²+η₁²) + bη₀η₁ + c(η₀+η₁) + d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticCoeffs {
    pub p: f64,
    pub q: f64,
    pub r: f64,
    #[serde(rename = "D")]
    pub diffusivity: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub residual: f64,
}

/// Least squares with the largest absolute residual.
fn least_squares(rows: &[Vec<f64>], rhs: &[f64]) -> Result<(Vec<f64>, f64)> {
    let (n, k) = (rows.len(), rows[0].len());
    let a = DMatrix::from_fn(n, k, |i, j| rows[i][j]);
    let b = DVector::from_column_slice(rhs);
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin <= 1e-12 * smax {
        return Err(Error::Degenerate(smin / smax));
    }
    let x = svd.solve(&b, 0.0).map_err(|e| Error::InvalidInput(format!("least squares: {e}")))?;
    let resid = (a * &x - b).amax();
    Ok((x.iter().copied().collect(), resid))
}

/// Fits `L₀,₁η₀` over the evaluation grid and checks the gradient condition.
pub fn extract_linear_coeffs(m: &Model) -> Result<LinearCoeffs> {
    let tol = m.kind().default_tolerance();
    let grid = m.evaluation_grid();
    let eta0 = BivariatePoly::eta0();
    let mut rows = Vec::with_capacity(grid.len());
    let mut rhs = Vec::with_capacity(grid.len());
    for &(a, b) in &grid {
        rows.push(vec![a, b, 1.0]);
        rhs.push(m.bond_action(&eta0, a, b)?);
    }
    let (x, residual) = least_squares(&rows, &rhs)?;
    let (p, q, r) = (x[0], x[1], x[2]);
    if r.abs() > tol || (p + q).abs() > tol || residual > tol {
        return Err(Error::NonGradient(format!("p={p}, q={q}, r={r}, residual={residual}")));
    }
    Ok(LinearCoeffs { p, q, r, diffusivity: -p, residual })
}

/// Fits `L₀,₁(η₀η₁)` by the symmetric quadratic form.
pub fn extract_quadratic_coeffs(m: &Model) -> Result<QuadraticCoeffs> {
    let lin = extract_linear_coeffs(m)?;
    if m.kind().support().cap() == Some(1) {
        // On {0,1} η² = η, so the form cannot separate a from c.
        return Err(Error::Degenerate(0.0));
    }
    let tol = m.kind().default_tolerance();
    let grid = m.evaluation_grid();
    let prod = BivariatePoly::monomial(1, 1, 1.0);
    let mut rows = Vec::with_capacity(grid.len());
    let mut rhs = Vec::with_capacity(grid.len());
    for &(e0, e1) in &grid {
        rows.push(vec![e0 * e0 + e1 * e1, e0 * e1, e0 + e1, 1.0]);
        rhs.push(m.bond_action(&prod, e0, e1)?);
    }
    let (x, residual) = least_squares(&rows, &rhs)?;
    let scale = rhs.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    if residual > tol * scale {
        return Err(Error::NotDegreePreserving(residual));
    }
    let (a, b, c, d) = (x[0], x[1], x[2], x[3]);
    if a.abs() <= tol {
        return Err(Error::Degenerate(a));
    }
    Ok(QuadraticCoeffs { p: lin.p, q: lin.q, r: lin.r, diffusivity: lin.diffusivity, a, b, c, d, residual })
}

/// `(v2, v1, v0) = (−b/(2a) − 1, −c/a, −d/(2a))`.
pub fn qvf_from_coeffs(qc: &QuadraticCoeffs) -> Result<QvfTriple> {
    if qc.a == 0.0 || !qc.a.is_finite() {
        return Err(Error::Degenerate(qc.a));
    }
    Ok(QvfTriple::new(-qc.b / (2.0 * qc.a) - 1.0, -qc.c / qc.a, -qc.d / (2.0 * qc.a)))
}

/// Flat coefficient report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoefficientReport {
    pub model: String,
    pub params: serde_json::Value,
    pub p: f64,
    pub q: f64,
    pub r: f64,
    #[serde(rename = "D")]
    pub diffusivity: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub residual: f64,
    pub v2: f64,
    pub v1: f64,
    pub v0: f64,
}

pub fn coefficient_report(m: &Model) -> Result<CoefficientReport> {
    let qc = extract_quadratic_coeffs(m)?;
    let v = qvf_from_coeffs(&qc)?;
    Ok(CoefficientReport {
        model: m.kind().name(),
        params: serde_json::to_value(m.spec()).expect("spec serializes"),
        p: qc.p,
        q: qc.q,
        r: qc.r,
        diffusivity: qc.diffusivity,
        a: qc.a,
        b: qc.b,
        c: qc.c,
        d: qc.d,
        residual: qc.residual,
        v2: v.v2,
        v1: v.v1,
        v0: v.v0,
    })
}

/// One numeric certification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    /// Worst violation found; for the Dirichlet form, the smallest value.
    pub value: f64,
    pub tol: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub model: String,
    pub checks: Vec<Check>,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.pass).collect()
    }
}

fn random_quadratic(rng: &mut ChaCha8Rng) -> BivariatePoly {
    let mut p = BivariatePoly::zero();
    for (i, j) in [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)] {
        p.set(i, j, rng.random_range(-1.0..1.0));
    }
    p
}

/// Numeric certification of the structural assumptions at the model's
/// reference mean. Every check is recorded; failures do not short-circuit.
pub fn verify_assumptions(m: &Model, tol: f64) -> Result<AssumptionReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let grid = m.evaluation_grid();
    let mut checks = Vec::new();
    let mut push = |name: &str, value: f64, tol: f64, pass: bool| {
        checks.push(Check { name: name.to_string(), value, tol, pass });
    };
    let max_over = |f: &dyn Fn(f64, f64) -> Result<f64>| -> Result<f64> {
        grid.iter().try_fold(0.0f64, |acc, &(a, b)| Ok(acc.max(f(a, b)?.abs())))
    };

    let one = BivariatePoly::constant(1.0);
    let v = max_over(&|a, b| m.bond_action(&one, a, b))?;
    push("constants: L(1) = 0", v, tol, v <= tol);

    let sum = BivariatePoly::bond_sum();
    let v = max_over(&|a, b| m.bond_action(&sum, a, b))?;
    push("conservation: L(η0+η1) = 0", v, tol, v <= tol);

    let prod = BivariatePoly::monomial(1, 1, 1.0);
    let v = max_over(&|a, b| Ok(m.bond_action(&prod, a, b)? - m.bond_action(&prod, b, a)?))?;
    push("symmetry: L(η0η1) is symmetric", v, tol, v <= tol);

    let f = random_quadratic(&mut rng);
    let fs = f.swapped();
    let v = max_over(&|a, b| Ok(m.bond_action(&f, a, b)? - m.bond_action(&fs, b, a)?))?;
    push("symmetry: L01 = L10", v, tol, v <= tol);

    let cubic: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
    let big_f = BivariatePoly::of_bond_sum(&cubic);
    let mut worst = 0.0f64;
    for g in [BivariatePoly::eta0(), BivariatePoly::monomial(2, 0, 1.0)] {
        let fg = &big_f * &g;
        worst =
            worst.max(max_over(&|a, b| Ok(m.bond_action(&fg, a, b)? - big_f.eval(a, b) * m.bond_action(&g, a, b)?))?);
    }
    // The product has degree five, so quadrature error scales with its size.
    let a2_tol = if m.kind().is_exact() { tol } else { tol * 1e3 };
    push("bond-sum factorization: L(F(η0+η1)G) = F(η0+η1)L(G)", worst, a2_tol, worst <= a2_tol);

    let mut least = f64::INFINITY;
    for _ in 0..3 {
        let f = random_quadratic(&mut rng);
        least = least.min(dirichlet_form(m, &f)?);
    }
    push("dissipativity: E[F(-LF)] >= 0", least, 1e-8, least >= -1e-8);

    match extract_linear_coeffs(m) {
        Ok(l) => push("linear closure", l.residual.max(l.r.abs()).max((l.p + l.q).abs()), tol, true),
        Err(e) => push(&format!("linear closure ({e})"), f64::INFINITY, tol, false),
    }
    match extract_quadratic_coeffs(m) {
        Ok(q) => push("quadratic closure", q.residual, tol, true),
        Err(Error::Degenerate(a)) => push("quadratic closure (a = 0, excluded)", a, tol, false),
        Err(e) => push(&format!("quadratic closure ({e})"), f64::INFINITY, tol, false),
    }

    if let Some(k) = m.kernel() {
        let d = make_nef(k.family(), m.spec().rho)?;
        let mut worst = 0.0f64;
        for &(e0, e1) in &grid {
            for frac in [0.2, 0.7] {
                let alpha = match k.transfer_support(e0, e1)? {
                    crate::kernels::TransferSupport::Lattice { lo, hi } => {
                        (lo as f64 + frac * (hi - lo) as f64).round()
                    }
                    crate::kernels::TransferSupport::Interval { lo, hi } => lo + frac * (hi - lo),
                    crate::kernels::TransferSupport::Real => frac - 0.5,
                    crate::kernels::TransferSupport::Point => 0.0,
                };
                let fwd = k.ln_density(e0, e1, alpha)? + d.ln_density(e0) + d.ln_density(e1);
                let bwd =
                    k.ln_density(e0 - alpha, e1 + alpha, -alpha)? + d.ln_density(e0 - alpha) + d.ln_density(e1 + alpha);
                if fwd.is_finite() || bwd.is_finite() {
                    worst = worst.max((fwd.exp() - bwd.exp()).abs() / fwd.exp().max(bwd.exp()));
                }
            }
        }
        push("detailed balance (relative)", worst, 1e-10, worst <= 1e-10);
    }

    Ok(AssumptionReport { model: m.kind().name(), checks })
}

/// `E_ν[F · (−L₀,₁F)]` under the two-site invariant product measure.
pub fn dirichlet_form(m: &Model, f: &BivariatePoly) -> Result<f64> {
    let family = m.kind().invariant_family();
    let d = make_nef(family, m.spec().rho)?;
    let (xs, ws) = marginal_rule(&d);
    let mut acc = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        for (j, &y) in xs.iter().enumerate() {
            let w = ws[i] * ws[j];
            // Negligible pairs only cost time; their share is below 1e-20·poly(η).
            if w < 1e-20 {
                continue;
            }
            acc += w * f.eval(x, y) * -m.bond_action(f, x, y)?;
        }
    }
    Ok(acc)
}

/// Nodes and weights integrating against one marginal: the pmf truncated
/// below `1e-16` for discrete laws, Gauss–Legendre on a wide window for
/// continuous ones (in `w = x^k` for the gamma law to absorb its endpoint).
fn marginal_rule(d: &crate::nef::NefDistribution) -> (Vec<f64>, Vec<f64>) {
    let (mean, var) = d.moments();
    let sd = var.sqrt();
    match d.support() {
        Support::UpTo(k) => ((0..=k).map(f64::from).collect(), (0..=k).map(|x| d.density(x as f64)).collect()),
        Support::NonNegInt => {
            let (mut xs, mut ws, mut acc) = (vec![], vec![], 0.0);
            let mut x = 0.0;
            while acc < 1.0 - 1e-16 && x < mean + 200.0 * sd + 50.0 {
                let p = d.density(x);
                xs.push(x);
                ws.push(p);
                acc += p;
                x += 1.0;
            }
            (xs, ws)
        }
        Support::Real => {
            let (u, w) = gauss_legendre(48);
            let half = 20.0 * sd;
            (
                u.iter().map(|u| mean + half * u).collect(),
                u.iter().zip(&w).map(|(u, w)| w * half * d.density(mean + half * u)).collect(),
            )
        }
        Support::NonNegReal => {
            let NefFamily::Gamma { two_s: k } = d.family() else { unreachable!("gamma is the only ℝ₊ family") };
            let hi = mean * (40.0 + k) / k;
            let wmax = hi.powf(k);
            let (u, w) = gauss_legendre(48);
            let mut xs = Vec::new();
            let mut ws = Vec::new();
            for (u, wt) in u.iter().zip(&w) {
                let wv = 0.5 * wmax * (u + 1.0);
                let x = wv.powf(1.0 / k);
                // p(x) dx = p(x) x^{1−k} dw / k
                xs.push(x);
                ws.push(wt * 0.5 * wmax * d.density(x) * x.powf(1.0 - k) / k);
            }
            (xs, ws)
        }
    }
}

/// The fifteen dynamics exercised by the classification suite.
pub fn reference_models() -> Vec<ModelSpec> {
    let m = |kind, rho| ModelSpec { kind, rho };
    vec![
        m(ModelKind::Redistribution { family: NefFamily::Normal { sigma2: 1.5 } }, 0.3),
        m(ModelKind::Redistribution { family: NefFamily::Poisson }, 1.0),
        m(ModelKind::Redistribution { family: NefFamily::Gamma { two_s: 1.0 } }, 1.0),
        m(ModelKind::Redistribution { family: NefFamily::Binomial { kappa: 2 } }, 1.0),
        m(ModelKind::Redistribution { family: NefFamily::NegBinomial { two_s: 1.5 } }, 1.0),
        m(ModelKind::Redistribution { family: NefFamily::Ghs { r: 1.0 } }, 0.5),
        m(ModelKind::Irw, 1.0),
        m(ModelKind::Pep { kappa: 2 }, 1.0),
        m(ModelKind::Pep { kappa: 3 }, 1.0),
        m(ModelKind::Sip { two_s: 1.0 }, 1.0),
        m(ModelKind::Sip { two_s: 2.0 }, 1.0),
        m(ModelKind::Harmonic { two_s: 1.0 }, 1.0),
        m(ModelKind::Harmonic { two_s: 2.0 }, 1.0),
        m(ModelKind::GinzburgLandau { sigma2: 0.5 }, 0.0),
        m(ModelKind::GinzburgLandau { sigma2: 1.0 }, 0.0),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn build(kind: ModelKind, rho: f64) -> Model {
        ModelSpec::new(kind, rho).unwrap().build().unwrap()
    }

    fn close(x: [f64; 4], y: [f64; 4], tol: f64) -> bool {
        x.iter().zip(&y).all(|(a, b)| (a - b).abs() <= tol)
    }

    #[test]
    fn linear_coefficients_examples() {
        for f in [NefFamily::Poisson, NefFamily::Gamma { two_s: 1.0 }, NefFamily::Ghs { r: 1.0 }] {
            let m = build(ModelKind::Redistribution { family: f }, 1.0);
            assert!((extract_linear_coeffs(&m).unwrap().diffusivity - 0.5).abs() < 1e-7);
        }
        let sip = extract_linear_coeffs(&build(ModelKind::Sip { two_s: 2.0 }, 1.0)).unwrap();
        assert!((sip.diffusivity - 1.0).abs() < 1e-12);
        let pep = extract_linear_coeffs(&build(ModelKind::Pep { kappa: 2 }, 1.0)).unwrap();
        assert!((pep.diffusivity - 1.0).abs() < 1e-12);
        let h = extract_linear_coeffs(&build(ModelKind::Harmonic { two_s: 2.0 }, 1.0)).unwrap();
        assert!((h.diffusivity - 0.25).abs() < 1e-12);
        let gl = extract_linear_coeffs(&build(ModelKind::GinzburgLandau { sigma2: 0.5 }, 0.0)).unwrap();
        assert!((gl.diffusivity - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quadratic_coefficients_examples() {
        let q =
            extract_quadratic_coeffs(&build(ModelKind::Redistribution { family: NefFamily::Poisson }, 1.0)).unwrap();
        assert!(close([q.a, q.b, q.c, q.d], [0.25, -0.5, -0.25, 0.0], 1e-12), "{q:?}");
        let q = extract_quadratic_coeffs(&build(ModelKind::Irw, 1.0)).unwrap();
        assert!(close([q.a, q.b, q.c, q.d], [0.5, -1.0, -0.5, 0.0], 1e-12), "{q:?}");
        let q = extract_quadratic_coeffs(&build(ModelKind::Sip { two_s: 2.0 }, 1.0)).unwrap();
        assert!(close([q.a, q.b, q.c, q.d], [1.0, -3.0, -1.0, 0.0], 1e-12), "{q:?}");
        let q = extract_quadratic_coeffs(&build(ModelKind::Pep { kappa: 2 }, 1.0)).unwrap();
        assert!(close([q.a, q.b, q.c, q.d], [1.0, -1.0, -1.0, 0.0], 1e-12), "{q:?}");
        let q = extract_quadratic_coeffs(&build(ModelKind::GinzburgLandau { sigma2: 2.0 }, 0.0)).unwrap();
        assert!(close([q.a, q.b, q.c, q.d], [0.25, -0.5, 0.0, -1.0], 1e-12), "{q:?}");
    }

    #[test]
    fn qvf_examples() {
        let mk = |a, b, c, d| QuadraticCoeffs { p: 0.0, q: 0.0, r: 0.0, diffusivity: 0.0, a, b, c, d, residual: 0.0 };
        assert_eq!(qvf_from_coeffs(&mk(0.25, -0.5, -0.25, 0.0)).unwrap(), QvfTriple::new(0.0, 1.0, 0.0));
        assert_eq!(qvf_from_coeffs(&mk(1.0, -3.0, -1.0, 0.0)).unwrap(), QvfTriple::new(0.5, 1.0, 0.0));
        assert_eq!(qvf_from_coeffs(&mk(1.0, -1.0, -1.0, 0.0)).unwrap(), QvfTriple::new(-0.5, 1.0, 0.0));
        assert!(qvf_from_coeffs(&mk(0.0, -1.0, -1.0, 0.0)).is_err());
    }

    #[test]
    fn bernoulli_dynamics_are_degenerate() {
        let m = build(ModelKind::Pep { kappa: 1 }, 0.5);
        assert!(matches!(extract_quadratic_coeffs(&m), Err(Error::Degenerate(_))));
        let m = build(ModelKind::Redistribution { family: NefFamily::Binomial { kappa: 1 } }, 0.5);
        assert!(matches!(extract_quadratic_coeffs(&m), Err(Error::Degenerate(_))));
    }

    #[test]
    fn classification_relations_hold_for_reference_models() {
        for spec in reference_models() {
            let m = spec.build().unwrap();
            let qc = extract_quadratic_coeffs(&m).unwrap_or_else(|e| panic!("{}: {e}", spec.kind.name()));
            let v = qvf_from_coeffs(&qc).unwrap();
            let want = spec.kind.invariant_family().qvf();
            let tol = if spec.kind.is_exact() { 1e-8 } else { 1e-6 };
            assert!(v.max_abs_diff(&want) <= tol, "{}: {v:?} vs {want:?}", spec.kind.name());
            assert!(qc.a > 0.0);
        }
    }

    #[test]
    fn harmonic_rates_sum_to_linear_drift() {
        for k in [0.5, 1.0, 2.0, 3.7] {
            for eta in 0..25u32 {
                let c = harmonic_rates(k, eta);
                let s: f64 = c.iter().enumerate().map(|(i, c)| (i + 1) as f64 * c).sum();
                assert!((s - eta as f64 / k).abs() < 1e-12 * (1.0 + s), "k={k} η={eta}");
            }
        }
    }

    #[test]
    fn assumptions_hold_for_reference_models() {
        for spec in reference_models() {
            let m = spec.build().unwrap();
            let report = verify_assumptions(&m, spec.kind.default_tolerance()).unwrap();
            assert!(report.passed(), "{}: {:?}", spec.kind.name(), report.failures());
        }
    }

    #[test]
    fn spec_serde_roundtrip() {
        for spec in reference_models() {
            let json = serde_json::to_string(&spec).unwrap();
            let back: ModelSpec = serde_json::from_str(&json).unwrap();
            assert_eq!(back, spec, "{json}");
        }
        let s: ModelSpec = serde_json::from_str(r#"{"kind":"sip","two_s":2.0,"rho":1.5}"#).unwrap();
        assert_eq!(s.kind, ModelKind::Sip { two_s: 2.0 });
    }

    #[test]
    fn grid_invariance_of_extraction() {
        // The continuous grid moves with the reference mean; the fit must not.
        for rho in [0.7, 2.0] {
            let m = build(ModelKind::Redistribution { family: NefFamily::Gamma { two_s: 1.0 } }, rho);
            let q = extract_quadratic_coeffs(&m).unwrap();
            assert!(close([q.a, q.b, q.c, q.d], [1.0 / 6.0, -2.0 / 3.0, 0.0, 0.0], 1e-7), "{q:?}");
        }
    }
}
