//! Birth–death walk on `I_N = {0, …, ⌊N/2⌋}` that drives the two-point
//! correlations, its occupation time of `{0, 1}`, and the correlation ODE.
//!
//! Walk time is macroscopic: the generator is applied with the factor `N²`.

use crate::error::{Error, Result};
use crate::ode::{dopri5, OdeOptions};
use crate::stats::linear_fit;
use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;
use std::io::Write;

/// Rates of the walk. `right[i]` is the rate `i → i+1`, `left[i]` the rate
/// `i → i−1`; `left[0] = right[m] = 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WalkSpec {
    pub n: usize,
    pub d: f64,
    pub a: f64,
    pub v2: f64,
    pub p_n: f64,
    pub right: Vec<f64>,
    pub left: Vec<f64>,
}

pub fn build_walk(n: usize, d: f64, a: f64, v2: f64) -> Result<WalkSpec> {
    let mut problems = Vec::new();
    if n < 4 {
        problems.push(format!("N = {n} < 4"));
    }
    if !(d > 0.0 && d.is_finite()) {
        problems.push(format!("D = {d} is not positive"));
    }
    if !(a > 0.0 && a.is_finite()) {
        problems.push(format!("a = {a} is not positive"));
    }
    if !(v2 > -1.0 && v2.is_finite()) {
        problems.push(format!("v2 = {v2} is not above -1"));
    }
    if !problems.is_empty() {
        return Err(Error::InvalidWalk(problems.join("; ")));
    }
    let m = n / 2;
    let p_n = if n.is_multiple_of(2) { 4.0 } else { 2.0 };
    let mut right = vec![0.0; m + 1];
    let mut left = vec![0.0; m + 1];
    right[0] = 4.0 * a;
    right[1] = 2.0 * d;
    left[1] = 2.0 * a * (v2 + 1.0);
    for i in 2..m {
        right[i] = 2.0 * d;
        left[i] = 2.0 * d;
    }
    // `m ≥ 2`, so the reflecting end never coincides with site 1.
    left[m] = p_n * d;
    right[m] = 0.0;
    Ok(WalkSpec { n, d, a, v2, p_n, right, left })
}

impl WalkSpec {
    /// `|I_N| = ⌊N/2⌋ + 1`.
    pub fn size(&self) -> usize {
        self.right.len()
    }

    /// Dense generator `Q` (without `N²`), rows summing to zero.
    pub fn generator_matrix(&self) -> DMatrix<f64> {
        let k = self.size();
        let mut q = DMatrix::zeros(k, k);
        for i in 0..k {
            if i + 1 < k {
                q[(i, i + 1)] = self.right[i];
            }
            if i > 0 {
                q[(i, i - 1)] = self.left[i];
            }
            q[(i, i)] = -(self.right[i] + self.left[i]);
        }
        q
    }

    /// `(𝓛 g)(i)` without the factor `N²`.
    pub fn apply(&self, g: &[f64], out: &mut [f64]) {
        let k = self.size();
        for i in 0..k {
            let mut v = 0.0;
            if i + 1 < k {
                v += self.right[i] * (g[i + 1] - g[i]);
            }
            if i > 0 {
                v += self.left[i] * (g[i - 1] - g[i]);
            }
            out[i] = v;
        }
    }

    /// Eigendecomposition of the detailed-balance symmetrization.
    pub fn spectrum(&self) -> WalkSpectrum {
        let k = self.size();
        // Detailed balance: π_{i+1} = π_i · right_i / left_{i+1}.
        let mut ln_pi = vec![0.0; k];
        for i in 0..k - 1 {
            ln_pi[i + 1] = ln_pi[i] + self.right[i].ln() - self.left[i + 1].ln();
        }
        let top = ln_pi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sqrt_pi: Vec<f64> = ln_pi.iter().map(|l| (0.5 * (l - top)).exp()).collect();
        let mut h = DMatrix::zeros(k, k);
        for i in 0..k {
            h[(i, i)] = -(self.right[i] + self.left[i]);
            if i + 1 < k {
                let off = (self.right[i] * self.left[i + 1]).sqrt();
                h[(i, i + 1)] = off;
                h[(i + 1, i)] = off;
            }
        }
        let eig = SymmetricEigen::new(h);
        WalkSpectrum {
            n2: (self.n * self.n) as f64,
            values: eig.eigenvalues.iter().copied().collect(),
            vectors: eig.eigenvectors,
            sqrt_pi,
        }
    }
}

/// `Q = Π^{-1/2} V Λ Vᵀ Π^{1/2}` for the walk generator `Q`.
#[derive(Debug, Clone)]
pub struct WalkSpectrum {
    n2: f64,
    values: Vec<f64>,
    vectors: DMatrix<f64>,
    sqrt_pi: Vec<f64>,
}

/// `∫₀ᵗ e^{μs} ds`, stable for `μ → 0`.
fn exp_integral(mu: f64, t: f64) -> f64 {
    if (mu * t).abs() < 1e-300 {
        t
    } else {
        (mu * t).exp_m1() / mu
    }
}

impl WalkSpectrum {
    /// `P_i(X_{tN²} = j)` for all `(i, j)`.
    pub fn transition(&self, t: f64) -> DMatrix<f64> {
        self.combine(|lambda| (lambda * self.n2 * t).exp())
    }

    /// `∫₀ᵗ P_i(X_{sN²} = j) ds` for all `(i, j)`.
    pub fn integrated_transition(&self, t: f64) -> DMatrix<f64> {
        self.combine(|lambda| exp_integral(lambda * self.n2, t))
    }

    fn combine(&self, weight: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let k = self.values.len();
        let w: Vec<f64> = self.values.iter().map(|&l| weight(l)).collect();
        DMatrix::from_fn(k, k, |i, j| {
            let s: f64 = (0..k).map(|c| self.vectors[(i, c)] * self.vectors[(j, c)] * w[c]).sum();
            s * self.sqrt_pi[j] / self.sqrt_pi[i]
        })
    }
}

/// `𝒯(t, i) = ∫₀ᵗ P_i(X_{sN²} ∈ {0,1}) ds` for every start `i`.
pub fn occupation_times(spec: &WalkSpec, t: f64) -> Result<Vec<f64>> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::IntegrationFailure(format!("time must be finite and ≥ 0, got {t}")));
    }
    let m = spec.spectrum().integrated_transition(t);
    let out: Vec<f64> = (0..spec.size()).map(|i| (m[(i, 0)] + m[(i, 1)]).clamp(0.0, t)).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::IntegrationFailure("non-finite occupation time".into()));
    }
    Ok(out)
}

pub fn occupation_time(spec: &WalkSpec, start: usize, t: f64) -> Result<f64> {
    if start >= spec.size() {
        return Err(Error::InvalidInput(format!("start {start} outside I_N of size {}", spec.size())));
    }
    Ok(occupation_times(spec, t)?[start])
}

/// Occupation time from the forward equation `p' = N² p Q` integrated with
/// Dormand–Prince, carrying `∫(p₀ + p₁)` as an extra component.
pub fn occupation_time_ode(spec: &WalkSpec, start: usize, t: f64) -> Result<f64> {
    let k = spec.size();
    if start >= k {
        return Err(Error::InvalidInput(format!("start {start} outside I_N of size {k}")));
    }
    let n2 = (spec.n * spec.n) as f64;
    let mut y0 = vec![0.0; k + 1];
    y0[start] = 1.0;
    let opts = OdeOptions { rtol: 1e-11, atol: 1e-14, ..OdeOptions::default() };
    let out = dopri5(
        |_, y, dy| {
            dy.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..k {
                let out_rate = spec.right[i] + spec.left[i];
                dy[i] -= n2 * out_rate * y[i];
                if i + 1 < k {
                    dy[i + 1] += n2 * spec.right[i] * y[i];
                }
                if i > 0 {
                    dy[i - 1] += n2 * spec.left[i] * y[i];
                }
            }
            dy[k] = y[0] + y[1];
        },
        0.0,
        &y0,
        &[t],
        opts,
    )?;
    Ok(out[0][k])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingReport {
    pub ns: Vec<usize>,
    /// `max_i 𝒯_N(t, i)` per lattice size.
    pub max_occupation: Vec<f64>,
    /// The same times `N`.
    pub scaled: Vec<f64>,
    pub slope: f64,
    pub pass: bool,
}

/// Slope of `log max_i 𝒯` against `log N`; passes in `[−1.15, −0.85]`.
pub fn verify_scaling(d: f64, a: f64, v2: f64, ns: &[usize], t: f64) -> Result<ScalingReport> {
    let lo = ns.iter().copied().min().unwrap_or(0);
    let hi = ns.iter().copied().max().unwrap_or(0);
    if ns.len() < 3 || lo == 0 || hi < 8 * lo {
        return Err(Error::InvalidInput(format!("need ≥ 3 lattice sizes spanning ≥ 8×, got {ns:?}")));
    }
    let mut max_occupation = Vec::with_capacity(ns.len());
    for &n in ns {
        let spec = build_walk(n, d, a, v2)?;
        max_occupation.push(occupation_times(&spec, t)?.into_iter().fold(0.0, f64::max));
    }
    let x: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let y: Vec<f64> = max_occupation.iter().map(|v| v.ln()).collect();
    let (slope, _) = linear_fit(&x, &y)?;
    let scaled = ns.iter().zip(&max_occupation).map(|(&n, v)| v * n as f64).collect();
    Ok(ScalingReport { ns: ns.to_vec(), max_occupation, scaled, slope, pass: (-1.15..=-0.85).contains(&slope) })
}

/// Integrates `dφ/dt = N²(𝓛φ + 𝔤(t))` with
/// `𝔤(t, 1) = (a(v₂+1) − D) E(t)`, `𝔤(t, 0) = (2D − 2a) E(t)` and `E(t)`
/// the squared `ℓ²` norm of the discrete gradient of the mean profile at
/// macroscopic time `t`. Returns `φ` at each of `times`.
pub fn phi_ode(
    spec: &WalkSpec,
    phi0: &[f64],
    gradient_energy: impl Fn(f64) -> f64,
    times: &[f64],
) -> Result<Vec<Vec<f64>>> {
    phi_ode_with(spec, phi0, gradient_energy, times, OdeOptions { rtol: 1e-10, atol: 1e-13, ..OdeOptions::default() })
}

pub fn phi_ode_with(
    spec: &WalkSpec,
    phi0: &[f64],
    gradient_energy: impl Fn(f64) -> f64,
    times: &[f64],
    opts: OdeOptions,
) -> Result<Vec<Vec<f64>>> {
    if phi0.len() != spec.size() {
        return Err(Error::InvalidInput(format!("φ₀ has {} entries, I_N has {}", phi0.len(), spec.size())));
    }
    let n2 = (spec.n * spec.n) as f64;
    let g1 = spec.a * (spec.v2 + 1.0) - spec.d;
    let g0 = 2.0 * spec.d - 2.0 * spec.a;
    dopri5(
        |t, y, dy| {
            spec.apply(y, dy);
            let e = gradient_energy(t);
            dy[0] += g0 * e;
            dy[1] += g1 * e;
            dy.iter_mut().for_each(|v| *v *= n2);
        },
        0.0,
        phi0,
        times,
        opts,
    )
}

/// `N,D,a,v2,i,t,occupation_time` rows.
pub fn write_walk_csv<W: Write>(w: &mut W, spec: &WalkSpec, times: &[f64]) -> std::io::Result<()> {
    writeln!(w, "N,D,a,v2,i,t,occupation_time")?;
    for &s in times {
        let occ = occupation_times(spec, s).map_err(std::io::Error::other)?;
        for (i, v) in occ.iter().enumerate() {
            writeln!(w, "{},{},{},{},{i},{s},{v}", spec.n, spec.d, spec.a, spec.v2)?;
        }
    }
    Ok(())
}

/// `N,t,i,phi` rows.
pub fn write_phi_csv<W: Write>(w: &mut W, n: usize, times: &[f64], phi: &[Vec<f64>]) -> std::io::Result<()> {
    writeln!(w, "N,t,i,phi")?;
    for (t, row) in times.iter().zip(phi) {
        for (i, v) in row.iter().enumerate() {
            writeln!(w, "{n},{t},{i},{v}")?;
        }
    }
    Ok(())
}
