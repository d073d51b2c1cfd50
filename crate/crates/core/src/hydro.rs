//! Macroscopic observables of ensembles: empirical-measure pairings,
//! Fourier and negative Sobolev norms, the discrete heat flow, two-point
//! correlations, and the Dynkin martingale with its quadratic variation.

use crate::engine::{
    exact_generator, init_profile, initial_weights, run_replicas, simulate, Configuration, InitialLaw, Observer,
    SimOptions,
};
use crate::error::{Error, Result};
use crate::models::{extract_quadratic_coeffs, qvf_from_coeffs, Model, ModelSpec, QuadraticCoeffs};
use crate::nef::{NefFamily, QvfTriple};
use crate::stats::{bootstrap_mean_se, mean, std_error, variance, variance_se};
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;

/// Fourier basis on the torus: `h_0 = 1`, `h_z = √2 cos(2πzu)` for `z > 0`,
/// `h_z = √2 sin(2π|z|u)` for `z < 0`.
pub fn basis(z: i64, u: f64) -> f64 {
    match z.cmp(&0) {
        std::cmp::Ordering::Equal => 1.0,
        std::cmp::Ordering::Greater => 2f64.sqrt() * (2.0 * PI * z as f64 * u).cos(),
        std::cmp::Ordering::Less => 2f64.sqrt() * (2.0 * PI * (-z) as f64 * u).sin(),
    }
}

/// `γ_z = 1 + 4π²z²`.
pub fn sobolev_weight(z: i64) -> f64 {
    1.0 + 4.0 * PI * PI * (z * z) as f64
}

/// Test functions paired with the empirical measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunction {
    Constant,
    /// `h_z`.
    Mode {
        z: i64,
    },
    /// `sin⁴(πu)`, smooth on the torus and peaked at `u = ½`.
    Bump,
}

impl TestFunction {
    pub fn eval(&self, u: f64) -> f64 {
        match *self {
            TestFunction::Constant => 1.0,
            TestFunction::Mode { z } => basis(z, u),
            TestFunction::Bump => (PI * u).sin().powi(4),
        }
    }

    pub fn name(&self) -> String {
        match *self {
            TestFunction::Constant => "one".into(),
            TestFunction::Mode { z } => format!("h{z}"),
            TestFunction::Bump => "bump".into(),
        }
    }

    /// `‖G′‖²` on `[0, 1)`.
    pub fn derivative_norm_sq(&self) -> f64 {
        match *self {
            TestFunction::Constant | TestFunction::Mode { z: 0 } => 0.0,
            TestFunction::Mode { z } => 4.0 * PI * PI * (z * z) as f64,
            // ∫ 16π² sin⁶ cos² = 16π² · 5/128.
            TestFunction::Bump => 5.0 * PI * PI / 8.0,
        }
    }

    /// The default experiment set.
    pub fn standard_set() -> Vec<TestFunction> {
        vec![
            TestFunction::Constant,
            TestFunction::Mode { z: 1 },
            TestFunction::Mode { z: -1 },
            TestFunction::Mode { z: 2 },
            TestFunction::Bump,
        ]
    }
}

/// `⟨π, G⟩ = (1/N) Σ_x η_x G(x/N)`.
pub fn pair_empirical(eta: &[f64], g: impl Fn(f64) -> f64) -> f64 {
    let n = eta.len() as f64;
    eta.iter().enumerate().map(|(x, v)| v * g(x as f64 / n)).sum::<f64>() / n
}

/// `(z, ⟨π, h_z⟩)` for `z = −z_max, …, z_max`.
pub fn fourier_coeffs(eta: &[f64], z_max: i64) -> Vec<(i64, f64)> {
    (-z_max..=z_max).map(|z| (z, pair_empirical(eta, |u| basis(z, u)))).collect()
}

/// `‖π‖²_{−m} = Σ_z γ_z^{−m} ⟨π, h_z⟩²`; needs `m > 5/2`.
pub fn sobolev_norm(coeffs: &[(i64, f64)], m: f64) -> Result<f64> {
    if m.is_nan() || m <= 2.5 {
        return Err(Error::InvalidInput(format!("Sobolev index must exceed 5/2, got {m}")));
    }
    Ok(coeffs.iter().map(|&(z, c)| sobolev_weight(z).powf(-m) * c * c).sum())
}

/// `Σ_x (ρ_{x+1} − ρ_x)²` on the torus.
pub fn gradient_energy(rho: &[f64]) -> f64 {
    let n = rho.len();
    (0..n).map(|x| (rho[(x + 1) % n] - rho[x]).powi(2)).sum()
}

/// Spectral solution of `dρ_x/dt = D N² Δρ_x` (macroscopic time).
#[derive(Debug, Clone)]
pub struct HeatSolver {
    n: usize,
    d: f64,
    modes: Vec<Complex64>,
}

impl HeatSolver {
    pub fn new(rho0: &[f64], d: f64) -> Result<Self> {
        if !(d > 0.0 && d.is_finite()) {
            return Err(Error::InvalidInput(format!("diffusivity must be positive, got {d}")));
        }
        if rho0.is_empty() {
            return Err(Error::InvalidInput("empty profile".into()));
        }
        let n = rho0.len();
        let mut modes: Vec<Complex64> = rho0.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut modes);
        Ok(Self { n, d, modes })
    }

    /// `4 sin²(πz/N)`, the symbol of `−Δ`.
    fn symbol(&self, z: usize) -> f64 {
        4.0 * (PI * z as f64 / self.n as f64).sin().powi(2)
    }

    pub fn profile(&self, t: f64) -> Vec<f64> {
        let n2 = (self.n * self.n) as f64;
        let mut buf: Vec<Complex64> =
            self.modes.iter().enumerate().map(|(z, c)| c * (-self.d * self.symbol(z) * n2 * t).exp()).collect();
        FftPlanner::new().plan_fft_inverse(self.n).process(&mut buf);
        buf.iter().map(|c| c.re / self.n as f64).collect()
    }

    /// `‖∇⁺ρ(t)‖²` by Parseval, without rebuilding the profile.
    pub fn gradient_energy(&self, t: f64) -> f64 {
        let n2 = (self.n * self.n) as f64;
        self.modes
            .iter()
            .enumerate()
            .map(|(z, c)| {
                let s = self.symbol(z);
                c.norm_sqr() * s * (-2.0 * self.d * s * n2 * t).exp()
            })
            .sum::<f64>()
            / self.n as f64
    }
}

/// One-shot `discrete_heat(ρ₀, D, t)`.
pub fn discrete_heat(rho0: &[f64], d: f64, t: f64) -> Result<Vec<f64>> {
    Ok(HeatSolver::new(rho0, d)?.profile(t))
}

/// Initial mean profiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum ProfileSpec {
    Constant {
        value: f64,
    },
    /// `mean + amplitude·cos(2π·frequency·u)`.
    Cosine {
        mean: f64,
        amplitude: f64,
        frequency: u32,
    },
    /// `high` on `[from, to)`, `low` elsewhere.
    Step {
        low: f64,
        high: f64,
        from: f64,
        to: f64,
    },
}

impl ProfileSpec {
    pub fn eval(&self, u: f64) -> f64 {
        match *self {
            ProfileSpec::Constant { value } => value,
            ProfileSpec::Cosine { mean, amplitude, frequency } => {
                mean + amplitude * (2.0 * PI * frequency as f64 * u).cos()
            }
            ProfileSpec::Step { low, high, from, to } => {
                if (from..to).contains(&u) {
                    high
                } else {
                    low
                }
            }
        }
    }

    /// Per-site means `ρ₀(x/N)`.
    pub fn sample(&self, n: usize) -> Vec<f64> {
        (0..n).map(|x| self.eval(x as f64 / n as f64)).collect()
    }

    fn range(&self) -> (f64, f64) {
        match *self {
            ProfileSpec::Constant { value } => (value, value),
            ProfileSpec::Cosine { mean, amplitude, .. } => (mean - amplitude.abs(), mean + amplitude.abs()),
            ProfileSpec::Step { low, high, .. } => (low.min(high), low.max(high)),
        }
    }

    /// The profile must stay inside the mean domain shrunk by 5%: of its
    /// width when bounded, of the profile's own maximum at a lone `0` end.
    pub fn validate(&self, family: NefFamily) -> Result<()> {
        let (lo, hi) = self.range();
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(Error::Domain("profile values must be finite".into()));
        }
        if let ProfileSpec::Step { from, to, .. } = *self {
            if !(0.0..=1.0).contains(&from) || !(0.0..=1.0).contains(&to) || from > to {
                return Err(Error::Domain(format!("step interval [{from}, {to}) not inside [0, 1]")));
            }
        }
        let (dlo, dhi) = family.mean_domain();
        let (min_ok, max_ok) = match (dlo.is_finite(), dhi.is_finite()) {
            (true, true) => {
                let m = 0.05 * (dhi - dlo);
                (dlo + m, dhi - m)
            }
            (true, false) => (dlo + 0.05 * (hi - dlo), f64::INFINITY),
            _ => (f64::NEG_INFINITY, f64::INFINITY),
        };
        if lo < min_ok || hi > max_ok || (dlo.is_finite() && lo <= dlo) {
            return Err(Error::Domain(format!(
                "profile range [{lo}, {hi}] leaves [{min_ok}, {max_ok}] for {}",
                family.name()
            )));
        }
        Ok(())
    }
}

/// How each replica starts.
#[derive(Debug, Clone, PartialEq)]
pub enum Start {
    /// Independent sites with means from the profile.
    Profile(ProfileSpec),
    /// The same configuration in every replica.
    State(Vec<f64>),
}

/// Running `⟨π, Δ_N G⟩` and `Υ(G)` maintained across bond updates, and their
/// time integrals accumulated exactly over holding intervals.
#[derive(Debug, Clone)]
pub struct MartingaleTracker {
    n: usize,
    coeffs: QuadraticCoeffs,
    /// `G(x/N)` per test function.
    g: Vec<Vec<f64>>,
    /// `Δ_N G(x) = N²(G_{x+1} + G_{x−1} − 2G_x)`.
    lap: Vec<Vec<f64>>,
    /// `(G_x − G_{x+1})²`.
    w: Vec<Vec<f64>>,
    start: Vec<f64>,
    drift: Vec<f64>,
    upsilon: Vec<f64>,
    int_drift: Vec<f64>,
    int_upsilon: Vec<f64>,
    updates: u64,
    /// Per observation and test function: `(M_t, ∫₀ᵗ Υ ds)`.
    pub records: Vec<Vec<(f64, f64)>>,
}

const TRACKER_REFRESH: u64 = 4096;

impl MartingaleTracker {
    pub fn new(n: usize, tests: &[TestFunction], coeffs: QuadraticCoeffs) -> Self {
        let n2 = (n * n) as f64;
        let g: Vec<Vec<f64>> = tests.iter().map(|t| (0..n).map(|x| t.eval(x as f64 / n as f64)).collect()).collect();
        let lap = g
            .iter()
            .map(|gv| (0..n).map(|x| n2 * (gv[(x + 1) % n] + gv[(x + n - 1) % n] - 2.0 * gv[x])).collect())
            .collect();
        let w = g.iter().map(|gv| (0..n).map(|x| (gv[x] - gv[(x + 1) % n]).powi(2)).collect()).collect();
        let k = tests.len();
        Self {
            n,
            coeffs,
            g,
            lap,
            w,
            start: vec![0.0; k],
            drift: vec![0.0; k],
            upsilon: vec![0.0; k],
            int_drift: vec![0.0; k],
            int_upsilon: vec![0.0; k],
            updates: 0,
            records: Vec::new(),
        }
    }

    /// `D(η_x − η_y)² − L(η_x η_y)`.
    fn bond_q(&self, ex: f64, ey: f64) -> f64 {
        let c = &self.coeffs;
        let l = c.a * (ex * ex + ey * ey) + c.b * ex * ey + c.c * (ex + ey) + c.d;
        c.diffusivity * (ex - ey).powi(2) - l
    }

    fn pairing(&self, k: usize, eta: &[f64]) -> f64 {
        eta.iter().zip(&self.g[k]).map(|(e, g)| e * g).sum::<f64>() / self.n as f64
    }

    fn refresh(&mut self, eta: &[f64]) {
        let n = self.n;
        let q: Vec<f64> = (0..n).map(|x| self.bond_q(eta[x], eta[(x + 1) % n])).collect();
        for k in 0..self.g.len() {
            self.drift[k] = eta.iter().zip(&self.lap[k]).map(|(e, l)| e * l).sum::<f64>() / n as f64;
            self.upsilon[k] = q.iter().zip(&self.w[k]).map(|(q, w)| q * w).sum();
        }
    }

    /// Adds `sign` times the contributions of the sites and bonds touched by
    /// an update of bond `x`.
    fn local(&mut self, eta: &[f64], x: usize, sign: f64) {
        let n = self.n;
        let y = (x + 1) % n;
        let bonds = [(x + n - 1) % n, x, y];
        let q = bonds.map(|b| self.bond_q(eta[b], eta[(b + 1) % n]));
        for k in 0..self.g.len() {
            self.drift[k] += sign * (eta[x] * self.lap[k][x] + eta[y] * self.lap[k][y]) / n as f64;
            self.upsilon[k] += sign * bonds.iter().zip(&q).map(|(&b, q)| self.w[k][b] * q).sum::<f64>();
        }
    }
}

impl Observer for MartingaleTracker {
    fn start(&mut self, cfg: &Configuration) {
        for k in 0..self.g.len() {
            self.start[k] = self.pairing(k, cfg.eta());
        }
        self.refresh(cfg.eta());
    }

    fn hold(&mut self, _cfg: &Configuration, dt: f64) {
        for k in 0..self.g.len() {
            self.int_drift[k] += self.coeffs.diffusivity * self.drift[k] * dt;
            self.int_upsilon[k] += self.upsilon[k] * dt;
        }
    }

    fn before_bond(&mut self, cfg: &Configuration, x: usize) {
        self.local(cfg.eta(), x, -1.0);
    }

    fn after_bond(&mut self, cfg: &Configuration, x: usize) {
        self.updates += 1;
        if self.updates.is_multiple_of(TRACKER_REFRESH) {
            self.refresh(cfg.eta());
        } else {
            self.local(cfg.eta(), x, 1.0);
        }
    }

    fn after_sweep(&mut self, cfg: &Configuration) {
        self.refresh(cfg.eta());
    }

    fn observe(&mut self, _k: usize, _t: f64, cfg: &Configuration) {
        self.refresh(cfg.eta());
        let row = (0..self.g.len())
            .map(|k| (self.pairing(k, cfg.eta()) - self.start[k] - self.int_drift[k], self.int_upsilon[k]))
            .collect();
        self.records.push(row);
    }
}

/// Everything one replica reports at each observation time.
#[derive(Debug, Clone, Default)]
pub struct ReplicaRecord {
    /// `η` per time.
    pub profiles: Vec<Vec<f64>>,
    /// `Σ_x η_x η_{x+i}` for `i = 0..=⌊N/2⌋`, per time.
    pub pair_sums: Vec<Vec<f64>>,
    /// `⟨π_t, G⟩` per time and test function.
    pub pairings: Vec<Vec<f64>>,
    /// `(M_t(G), ∫₀ᵗ Υ(G))` per time and test function.
    pub martingale: Vec<Vec<(f64, f64)>>,
}

/// `Σ_x η_x η_{x+i}` for `i = 0..=⌊N/2⌋`.
pub fn pair_sums(eta: &[f64]) -> Vec<f64> {
    let n = eta.len();
    (0..=n / 2).map(|i| (0..n).map(|x| eta[x] * eta[(x + i) % n]).sum()).collect()
}

struct Recorder {
    tests: Vec<TestFunction>,
    record: ReplicaRecord,
}

impl Observer for Recorder {
    fn observe(&mut self, _k: usize, _t: f64, cfg: &Configuration) {
        let eta = cfg.eta();
        self.record.profiles.push(eta.to_vec());
        self.record.pair_sums.push(pair_sums(eta));
        self.record.pairings.push(self.tests.iter().map(|g| pair_empirical(eta, |u| g.eval(u))).collect());
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleConfig {
    pub spec: ModelSpec,
    pub n: usize,
    pub start: Start,
    /// Observation times, sorted; the last is the horizon.
    pub times: Vec<f64>,
    pub replicas: usize,
    pub seed: u64,
    pub tests: Vec<TestFunction>,
    pub options: SimOptions,
}

/// Replica records in replica order, plus the model constants used.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub spec: ModelSpec,
    pub n: usize,
    pub times: Vec<f64>,
    pub tests: Vec<TestFunction>,
    pub coeffs: QuadraticCoeffs,
    pub qvf: QvfTriple,
    /// `ρ₀(x/N)`, or the deterministic start.
    pub initial_means: Vec<f64>,
    pub replicas: Vec<ReplicaRecord>,
}

pub fn run_ensemble(cfg: &EnsembleConfig) -> Result<Ensemble> {
    let model = cfg.spec.build()?;
    let coeffs = extract_quadratic_coeffs(&model)?;
    let qvf = qvf_from_coeffs(&coeffs)?;
    run_ensemble_with(cfg, &model, coeffs, qvf)
}

/// As `run_ensemble` with precomputed model constants.
pub fn run_ensemble_with(
    cfg: &EnsembleConfig,
    model: &Model,
    coeffs: QuadraticCoeffs,
    qvf: QvfTriple,
) -> Result<Ensemble> {
    if cfg.times.is_empty() || cfg.replicas == 0 {
        return Err(Error::InvalidInput("need at least one time and one replica".into()));
    }
    let family = cfg.spec.kind.invariant_family();
    let initial_means = match &cfg.start {
        Start::Profile(p) => {
            p.validate(family)?;
            p.sample(cfg.n)
        }
        Start::State(s) => {
            Configuration::new(cfg.spec, s.clone())?;
            if s.len() != cfg.n {
                return Err(Error::InvalidInput(format!("start has {} sites, N = {}", s.len(), cfg.n)));
            }
            s.clone()
        }
    };
    let horizon = *cfg.times.last().expect("non-empty");
    let replicas = run_replicas(cfg.replicas, cfg.seed, |_, rng| {
        let mut c = match &cfg.start {
            Start::Profile(p) => init_profile(cfg.spec, |u| p.eval(u), cfg.n, rng)?,
            Start::State(s) => Configuration::new(cfg.spec, s.clone())?,
        };
        let mut rec = Recorder { tests: cfg.tests.clone(), record: ReplicaRecord::default() };
        let mut mart = MartingaleTracker::new(cfg.n, &cfg.tests, coeffs);
        simulate(model, &mut c, horizon, &cfg.times, rng, &mut (&mut rec, &mut mart), cfg.options)?;
        rec.record.martingale = mart.records;
        Ok(rec.record)
    })?;
    Ok(Ensemble {
        spec: cfg.spec,
        n: cfg.n,
        times: cfg.times.clone(),
        tests: cfg.tests.clone(),
        coeffs,
        qvf,
        initial_means,
        replicas,
    })
}

/// Deterministic seed for bootstrap resampling of one statistic.
fn stat_seed(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(base ^ 0x9e37_79b9_7f4a_7c15, |h, &p| (h ^ p).wrapping_mul(0x1000_0000_01b3).rotate_left(17))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileRow {
    pub t: f64,
    pub x: usize,
    pub mean: f64,
    pub se: f64,
    pub reference: f64,
}

impl Ensemble {
    pub fn heat(&self) -> Result<HeatSolver> {
        HeatSolver::new(&self.initial_means, self.coeffs.diffusivity)
    }

    /// Ensemble-mean profile with bootstrap SEs against the heat solution.
    pub fn profile_rows(&self, seed: u64) -> Result<Vec<ProfileRow>> {
        let heat = self.heat()?;
        let mut rows = Vec::new();
        for (k, &t) in self.times.iter().enumerate() {
            let reference = heat.profile(t);
            for (x, &r) in reference.iter().enumerate() {
                let vals: Vec<f64> = self.replicas.iter().map(|rep| rep.profiles[k][x]).collect();
                rows.push(ProfileRow {
                    t,
                    x,
                    mean: mean(&vals),
                    se: bootstrap_mean_se(&vals, stat_seed(seed, &[k as u64, x as u64])),
                    reference: r,
                });
            }
        }
        Ok(rows)
    }

    /// `φ̂(t, i)` with bootstrap SEs.
    pub fn phi_estimate(&self, seed: u64) -> Result<CorrelationTrace> {
        let QvfTriple { v2, v1, v0 } = self.qvf;
        if v2 <= -1.0 {
            return Err(Error::DegenerateRecentering(v2));
        }
        let heat = self.heat()?;
        let lags = self.n / 2 + 1;
        let mut phi = Vec::with_capacity(self.times.len());
        let mut se = Vec::with_capacity(self.times.len());
        let mut rho = Vec::with_capacity(self.times.len());
        for (k, &t) in self.times.iter().enumerate() {
            let r = heat.profile(t);
            let centre = pair_sums(&r);
            let mut row = Vec::with_capacity(lags);
            let mut row_se = Vec::with_capacity(lags);
            for (i, &c) in centre.iter().enumerate().take(lags) {
                let vals: Vec<f64> = self.replicas.iter().map(|rep| rep.pair_sums[k][i]).collect();
                let s = bootstrap_mean_se(&vals, stat_seed(seed, &[k as u64, i as u64, 0x0f1]));
                if i == 0 {
                    let sub: f64 = r.iter().map(|&p| (v2 + 1.0) * p * p + v1 * p + v0).sum();
                    row.push((mean(&vals) - sub) / (v2 + 1.0));
                    row_se.push(s / (v2 + 1.0));
                } else {
                    row.push(mean(&vals) - c);
                    row_se.push(s);
                }
            }
            phi.push(row);
            se.push(row_se);
            rho.push(r);
        }
        Ok(CorrelationTrace { n: self.n, times: self.times.clone(), phi, se, qvf: self.qvf, rho })
    }

    /// `(1/N) Σ_x E[η_x²]` per time with its SE.
    pub fn second_moment(&self) -> Vec<(f64, f64)> {
        (0..self.times.len())
            .map(|k| {
                let vals: Vec<f64> = self.replicas.iter().map(|r| r.pair_sums[k][0] / self.n as f64).collect();
                (mean(&vals), std_error(&vals))
            })
            .collect()
    }

    /// Variance across replicas of `⟨π_t, G_j⟩` and its SE, per time.
    pub fn pairing_variance(&self, j: usize) -> Vec<(f64, f64)> {
        (0..self.times.len())
            .map(|k| {
                let vals: Vec<f64> = self.replicas.iter().map(|r| r.pairings[k][j]).collect();
                (variance(&vals), variance_se(&vals))
            })
            .collect()
    }

    pub fn martingale_rows(&self) -> Vec<MartingaleRow> {
        let mut rows = Vec::new();
        for (k, &t) in self.times.iter().enumerate() {
            for (j, g) in self.tests.iter().enumerate() {
                let m: Vec<f64> = self.replicas.iter().map(|r| r.martingale[k][j].0).collect();
                let q: Vec<f64> = self.replicas.iter().map(|r| r.martingale[k][j].1).collect();
                rows.push(MartingaleRow {
                    t,
                    test: g.name(),
                    mean_m: mean(&m),
                    se_mean_m: std_error(&m),
                    // Second moment about zero: the martingale has mean 0.
                    var_m: m.iter().map(|v| v * v).sum::<f64>() / m.len() as f64,
                    se_var_m: std_error(&m.iter().map(|v| v * v).collect::<Vec<_>>()),
                    mean_int_qv: mean(&q),
                    se_int_qv: std_error(&q),
                });
            }
        }
        rows
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleRow {
    pub t: f64,
    pub test: String,
    pub mean_m: f64,
    pub se_mean_m: f64,
    /// `E[M_t²]` estimated about zero.
    pub var_m: f64,
    pub se_var_m: f64,
    pub mean_int_qv: f64,
    pub se_int_qv: f64,
}

/// `φ(t, i)` estimates on `I_N` with the recentering inputs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationTrace {
    pub n: usize,
    pub times: Vec<f64>,
    /// `phi[t][i]`.
    pub phi: Vec<Vec<f64>>,
    pub se: Vec<Vec<f64>>,
    pub qvf: QvfTriple,
    /// `ρ_x(t)` used for centering.
    pub rho: Vec<Vec<f64>>,
}

/// `φ(0, ·)` of a deterministic configuration.
pub fn phi_of_state(eta: &[f64], qvf: QvfTriple) -> Result<Vec<f64>> {
    let QvfTriple { v2, v1, v0 } = qvf;
    if v2 <= -1.0 {
        return Err(Error::DegenerateRecentering(v2));
    }
    let mut out = vec![0.0; eta.len() / 2 + 1];
    out[0] = eta.iter().map(|&e| e * e - ((v2 + 1.0) * e * e + v1 * e + v0)).sum::<f64>() / (v2 + 1.0);
    Ok(out)
}

/// Exact `φ(t, ·)` from a deterministic start by evolving the law on the
/// conserved fiber; `times` are macroscopic and sorted.
pub fn exact_phi(m: &Model, start: &[u32], qvf: QvfTriple, times: &[f64]) -> Result<Vec<Vec<f64>>> {
    let QvfTriple { v2, v1, v0 } = qvf;
    if v2 <= -1.0 {
        return Err(Error::DegenerateRecentering(v2));
    }
    if times.windows(2).any(|w| w[0] > w[1]) || times.first().is_some_and(|&t| t < 0.0) {
        return Err(Error::InvalidInput("times must be sorted and nonnegative".into()));
    }
    let n = start.len();
    let g = exact_generator(m, n, start.iter().sum())?;
    let mut law = initial_weights(&g, m, &InitialLaw::State(start.to_vec()))?;
    let n2 = (n * n) as f64;
    let mut now = 0.0;
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        law = g.evolve(&law, (t - now) * n2)?;
        now = t;
        let mut rho = vec![0.0; n];
        let mut pairs = vec![0.0; n / 2 + 1];
        for (s, &p) in g.states().zip(&law) {
            for x in 0..n {
                rho[x] += p * s[x] as f64;
                for (i, acc) in pairs.iter_mut().enumerate() {
                    *acc += p * (s[x] * s[(x + i) % n]) as f64;
                }
            }
        }
        let centre = pair_sums(&rho);
        let mut phi: Vec<f64> = pairs.iter().zip(&centre).map(|(e, c)| e - c).collect();
        phi[0] = (pairs[0] - rho.iter().map(|&r| (v2 + 1.0) * r * r + v1 * r + v0).sum::<f64>()) / (v2 + 1.0);
        out.push(phi);
    }
    Ok(out)
}

/// Per lattice size: profile errors, fluctuations, martingale table, `φ̂`.
#[derive(Debug, Clone, Serialize)]
pub struct HydroLevel {
    pub n: usize,
    pub profile: Vec<ProfileRow>,
    /// Per time: `max_x |mean − reference|`.
    pub sup_error: Vec<f64>,
    /// Per time: `((1/N) Σ_x (mean − reference)²)^{1/2}`.
    pub l2_error: Vec<f64>,
    /// Per time: `max_x |mean − reference| / se`.
    pub max_z: Vec<f64>,
    /// Per time: variance of `⟨π_t, h_1⟩` and its SE.
    pub h1_variance: Vec<(f64, f64)>,
    pub second_moment: Vec<(f64, f64)>,
    pub martingale: Vec<MartingaleRow>,
    pub phi: CorrelationTrace,
}

#[derive(Debug, Clone, Serialize)]
pub struct HydroResult {
    pub model: String,
    pub diffusivity: f64,
    pub times: Vec<f64>,
    pub levels: Vec<HydroLevel>,
}

/// Runs the ensemble at each lattice size and compares against the discrete
/// heat flow with the model's `D`. The tests must include `h_1`.
pub fn hydro_convergence_experiment(
    spec: ModelSpec,
    profile: ProfileSpec,
    ns: &[usize],
    times: &[f64],
    replicas: usize,
    seed: u64,
) -> Result<HydroResult> {
    if ns.windows(2).any(|w| w[0] >= w[1]) || ns.is_empty() {
        return Err(Error::InvalidInput(format!("lattice sizes must increase, got {ns:?}")));
    }
    profile.validate(spec.kind.invariant_family())?;
    let model = spec.build()?;
    let coeffs = extract_quadratic_coeffs(&model)?;
    let qvf = qvf_from_coeffs(&coeffs)?;
    let tests = TestFunction::standard_set();
    let h1 = tests.iter().position(|t| *t == TestFunction::Mode { z: 1 }).expect("standard set has h1");
    let mut levels = Vec::with_capacity(ns.len());
    for &n in ns {
        let cfg = EnsembleConfig {
            spec,
            n,
            start: Start::Profile(profile),
            times: times.to_vec(),
            replicas,
            seed: stat_seed(seed, &[n as u64]),
            tests: tests.clone(),
            options: SimOptions::default(),
        };
        let ens = run_ensemble_with(&cfg, &model, coeffs, qvf)?;
        let rows = ens.profile_rows(seed)?;
        let mut sup_error = Vec::new();
        let mut l2_error = Vec::new();
        let mut max_z = Vec::new();
        for chunk in rows.chunks(n) {
            let diffs: Vec<f64> = chunk.iter().map(|r| (r.mean - r.reference).abs()).collect();
            sup_error.push(diffs.iter().copied().fold(0.0, f64::max));
            l2_error.push((diffs.iter().map(|d| d * d).sum::<f64>() / n as f64).sqrt());
            max_z.push(chunk.iter().map(|r| (r.mean - r.reference).abs() / r.se.max(1e-300)).fold(0.0, f64::max));
        }
        levels.push(HydroLevel {
            n,
            profile: rows,
            sup_error,
            l2_error,
            max_z,
            h1_variance: ens.pairing_variance(h1),
            second_moment: ens.second_moment(),
            martingale: ens.martingale_rows(),
            phi: ens.phi_estimate(seed)?,
        });
    }
    Ok(HydroResult { model: spec.kind.name(), diffusivity: coeffs.diffusivity, times: times.to_vec(), levels })
}

pub fn write_profile_csv<W: Write>(w: &mut W, res: &HydroResult) -> std::io::Result<()> {
    writeln!(w, "model,N,t,x,mean,se,reference")?;
    for lv in &res.levels {
        for r in &lv.profile {
            writeln!(w, "{},{},{},{},{},{},{}", res.model, lv.n, r.t, r.x, r.mean, r.se, r.reference)?;
        }
    }
    Ok(())
}

pub fn write_phi_csv<W: Write>(w: &mut W, model: &str, traces: &[&CorrelationTrace]) -> std::io::Result<()> {
    writeln!(w, "model,N,t,i,phi,se")?;
    for tr in traces {
        for (k, t) in tr.times.iter().enumerate() {
            for (i, (p, s)) in tr.phi[k].iter().zip(&tr.se[k]).enumerate() {
                writeln!(w, "{model},{},{t},{i},{p},{s}", tr.n)?;
            }
        }
    }
    Ok(())
}

pub fn write_martingale_csv<W: Write>(w: &mut W, res: &HydroResult) -> std::io::Result<()> {
    writeln!(w, "model,N,t,G,var_M,mean_int_qv,se")?;
    for lv in &res.levels {
        for r in &lv.martingale {
            writeln!(w, "{},{},{},{},{},{},{}", res.model, lv.n, r.t, r.test, r.var_m, r.mean_int_qv, r.se_var_m)?;
        }
    }
    Ok(())
}
