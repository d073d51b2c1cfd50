//! Continuous-time simulation on the discrete torus under diffusive scaling,
//! product-measure initialization, and an exact generator on small fibers.
//!
//! Times passed in and out are macroscopic; the chain runs for `N²·T`
//! microscopic time units.

mod fiber;
pub(crate) use fiber::initial_weights;
mod tree;

pub use fiber::{
    exact_expectation_evolution, exact_generator, exact_generator_with_cap, exact_stationarity_residual,
    FiberGenerator, InitialLaw, DEFAULT_FIBER_CAP,
};
pub use tree::RateTree;

use crate::error::{Error, Result};
use crate::models::{harmonic_rates, Model, ModelKind, ModelSpec};
use crate::nef::{make_nef, NefDistribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use std::io::Write;

/// Continuous totals are re-summed from scratch after this many events.
pub const RESUM_INTERVAL: u64 = 100_000;

/// Default ceiling on a single bond rate.
pub const DEFAULT_RATE_CAP: f64 = 1e12;

/// Lattice state on the torus `{0, …, N−1}` with its cached conserved total.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    spec: ModelSpec,
    eta: Vec<f64>,
    total: f64,
}

impl Configuration {
    /// Checks `N ≥ 3` and that every value lies in the model's state space.
    pub fn new(spec: ModelSpec, eta: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if eta.len() < 3 {
            return Err(Error::InvalidInput(format!("torus needs N ≥ 3 sites, got {}", eta.len())));
        }
        let support = spec.kind.support();
        if let Some((x, v)) = eta.iter().enumerate().find(|(_, &v)| !support.contains(v)) {
            return Err(Error::Domain(format!("site {x} holds {v}, outside the state space of {}", spec.kind.name())));
        }
        let total = eta.iter().sum();
        Ok(Self { spec, eta, total })
    }

    pub fn spec(&self) -> ModelSpec {
        self.spec
    }

    pub fn n(&self) -> usize {
        self.eta.len()
    }

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }

    pub fn into_eta(self) -> Vec<f64> {
        self.eta
    }

    /// Cached total; exact for integer states.
    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn recomputed_total(&self) -> f64 {
        self.eta.iter().sum()
    }

    fn resum(&mut self) {
        self.total = self.recomputed_total();
    }

    /// Writes both sites of bond `x` and adjusts the cached total.
    fn set_bond(&mut self, x: usize, a: f64, b: f64) {
        let y = (x + 1) % self.eta.len();
        self.total += (a - self.eta[x]) + (b - self.eta[y]);
        self.eta[x] = a;
        self.eta[y] = b;
    }
}

/// I.i.d. draws from the model's invariant family at mean `ρ`.
pub fn init_product<R: Rng + ?Sized>(spec: ModelSpec, rho: f64, n: usize, rng: &mut R) -> Result<Configuration> {
    let spec = ModelSpec::new(spec.kind, rho)?;
    let d = make_nef(spec.kind.invariant_family(), rho)?;
    Configuration::new(spec, d.sample(n, rng))
}

/// Independent draws with site `x` at mean `ρ₀(x/N)`.
pub fn init_profile<R: Rng + ?Sized>(
    spec: ModelSpec,
    profile: impl Fn(f64) -> f64,
    n: usize,
    rng: &mut R,
) -> Result<Configuration> {
    let family = spec.kind.invariant_family();
    let means: Vec<f64> = (0..n).map(|x| profile(x as f64 / n as f64)).collect();
    // Equal means share one distribution, which matters for tabulated samplers.
    let mut cache: Vec<(f64, NefDistribution)> = Vec::new();
    let mut eta = Vec::with_capacity(n);
    for &m in &means {
        let idx = match cache.iter().position(|(r, _)| r.to_bits() == m.to_bits()) {
            Some(i) => i,
            None => {
                cache.push((m, make_nef(family, m)?));
                cache.len() - 1
            }
        };
        eta.push(cache[idx].1.sample_one(rng));
    }
    Configuration::new(spec, eta)
}

/// Reducers driven by the event loop. Defaults ignore every hook.
pub trait Observer {
    /// Initial state, before any event.
    fn start(&mut self, _cfg: &Configuration) {}
    /// The configuration stays as given for `dt` macroscopic time.
    fn hold(&mut self, _cfg: &Configuration, _dt: f64) {}
    /// Bond `(x, x+1)` is about to change.
    fn before_bond(&mut self, _cfg: &Configuration, _x: usize) {}
    /// Bond `(x, x+1)` has changed.
    fn after_bond(&mut self, _cfg: &Configuration, _x: usize) {}
    /// Every site may have changed (one diffusion step).
    fn after_sweep(&mut self, _cfg: &Configuration) {}
    /// Scheduled observation `k` at macroscopic time `t`.
    fn observe(&mut self, _k: usize, _t: f64, _cfg: &Configuration) {}
}

impl Observer for () {}

impl<A: Observer, B: Observer> Observer for (A, B) {
    fn start(&mut self, cfg: &Configuration) {
        self.0.start(cfg);
        self.1.start(cfg);
    }
    fn hold(&mut self, cfg: &Configuration, dt: f64) {
        self.0.hold(cfg, dt);
        self.1.hold(cfg, dt);
    }
    fn before_bond(&mut self, cfg: &Configuration, x: usize) {
        self.0.before_bond(cfg, x);
        self.1.before_bond(cfg, x);
    }
    fn after_bond(&mut self, cfg: &Configuration, x: usize) {
        self.0.after_bond(cfg, x);
        self.1.after_bond(cfg, x);
    }
    fn after_sweep(&mut self, cfg: &Configuration) {
        self.0.after_sweep(cfg);
        self.1.after_sweep(cfg);
    }
    fn observe(&mut self, k: usize, t: f64, cfg: &Configuration) {
        self.0.observe(k, t, cfg);
        self.1.observe(k, t, cfg);
    }
}

impl<O: Observer + ?Sized> Observer for &mut O {
    fn start(&mut self, cfg: &Configuration) {
        (**self).start(cfg);
    }
    fn hold(&mut self, cfg: &Configuration, dt: f64) {
        (**self).hold(cfg, dt);
    }
    fn before_bond(&mut self, cfg: &Configuration, x: usize) {
        (**self).before_bond(cfg, x);
    }
    fn after_bond(&mut self, cfg: &Configuration, x: usize) {
        (**self).after_bond(cfg, x);
    }
    fn after_sweep(&mut self, cfg: &Configuration) {
        (**self).after_sweep(cfg);
    }
    fn observe(&mut self, k: usize, t: f64, cfg: &Configuration) {
        (**self).observe(k, t, cfg);
    }
}

/// Copies of the configuration at each scheduled time.
#[derive(Debug, Clone, Default)]
pub struct SnapshotRecorder {
    pub snapshots: Vec<(f64, Vec<f64>)>,
}

impl Observer for SnapshotRecorder {
    fn observe(&mut self, _k: usize, t: f64, cfg: &Configuration) {
        self.snapshots.push((t, cfg.eta().to_vec()));
    }
}

/// Number of bond updates, one per jump or thermalization.
#[derive(Debug, Clone, Copy, Default)]
pub struct EventCounter {
    pub events: u64,
}

impl Observer for EventCounter {
    fn after_bond(&mut self, _cfg: &Configuration, _x: usize) {
        self.events += 1;
    }
}

/// Writes `t,x,eta` rows.
pub fn write_snapshots<W: Write>(w: &mut W, snapshots: &[(f64, Vec<f64>)]) -> std::io::Result<()> {
    writeln!(w, "t,x,eta")?;
    for (t, eta) in snapshots {
        for (x, v) in eta.iter().enumerate() {
            writeln!(w, "{t},{x},{v}")?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    /// `RateOverflow` once any bond rate exceeds this.
    pub rate_cap: f64,
    /// Microscopic Euler–Maruyama step for the diffusion; `None` picks
    /// `min(0.05σ², 0.1)`.
    pub diffusion_step: Option<f64>,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { rate_cap: DEFAULT_RATE_CAP, diffusion_step: None }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SimStats {
    /// Bond updates (jumps, thermalizations) or diffusion steps.
    pub events: u64,
    pub micro_time: f64,
}

/// Default Euler–Maruyama step for the diffusion with variance `σ²`.
pub fn default_diffusion_step(sigma2: f64) -> f64 {
    (0.05 * sigma2).min(0.1)
}

/// Independent stream `replica` of a seeded counter-based generator.
pub fn replica_rng(seed: u64, replica: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replica);
    rng
}

/// Runs `job(replica, rng)` for every replica in parallel; results come
/// back in replica order, so reductions over them are deterministic.
pub fn run_replicas<T, F>(replicas: usize, seed: u64, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, &mut ChaCha8Rng) -> Result<T> + Sync,
{
    (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = replica_rng(seed, r as u64);
            job(r, &mut rng)
        })
        .collect()
}

/// Runs the chain for macroscopic time `t_macro` from `cfg`, calling
/// `obs.observe` at each time of `schedule` (sorted, within `[0, t_macro]`).
pub fn simulate<R: Rng + ?Sized, O: Observer>(
    model: &Model,
    cfg: &mut Configuration,
    t_macro: f64,
    schedule: &[f64],
    rng: &mut R,
    obs: &mut O,
    opts: SimOptions,
) -> Result<SimStats> {
    if !(t_macro >= 0.0 && t_macro.is_finite()) {
        return Err(Error::InvalidInput(format!("horizon must be finite and ≥ 0, got {t_macro}")));
    }
    if schedule.windows(2).any(|w| w[0] > w[1]) || schedule.iter().any(|&t| !(0.0..=t_macro).contains(&t)) {
        return Err(Error::InvalidInput("observation times must be sorted within [0, T]".into()));
    }
    if model.kind() != cfg.spec.kind {
        return Err(Error::InvalidInput(format!(
            "configuration built for {}, model is {}",
            cfg.spec.kind.name(),
            model.kind().name()
        )));
    }
    let n2 = (cfg.n() * cfg.n()) as f64;
    let clock = Clock { n2, horizon: t_macro * n2, schedule, next: 0 };
    obs.start(cfg);
    match model.kind() {
        ModelKind::Redistribution { .. } => run_redistribution(model, cfg, clock, rng, obs),
        ModelKind::GinzburgLandau { sigma2 } => {
            let step = opts.diffusion_step.unwrap_or_else(|| default_diffusion_step(sigma2));
            if !(step > 0.0 && step.is_finite()) {
                return Err(Error::InvalidInput(format!("diffusion step must be positive, got {step}")));
            }
            run_diffusion(sigma2, step, cfg, clock, rng, obs)
        }
        _ => run_particles(model, cfg, clock, rng, obs, opts.rate_cap),
    }
}

/// Microscopic time bookkeeping and the observation cursor.
struct Clock<'a> {
    n2: f64,
    horizon: f64,
    schedule: &'a [f64],
    next: usize,
}

impl Clock<'_> {
    /// Advances from `now` to `min(target, horizon)`, firing every scheduled
    /// observation on the way. Returns the new time.
    fn advance_to<O: Observer>(&mut self, now: f64, target: f64, cfg: &Configuration, obs: &mut O) -> f64 {
        let end = target.min(self.horizon);
        let mut t = now;
        while self.next < self.schedule.len() && self.schedule[self.next] * self.n2 <= end {
            let at = self.schedule[self.next] * self.n2;
            if at > t {
                obs.hold(cfg, (at - t) / self.n2);
                t = at;
            }
            obs.observe(self.next, self.schedule[self.next], cfg);
            self.next += 1;
        }
        if end > t {
            obs.hold(cfg, (end - t) / self.n2);
        }
        end
    }

    fn finish<O: Observer>(&mut self, now: f64, cfg: &Configuration, obs: &mut O) {
        self.advance_to(now, self.horizon, cfg, obs);
        // Times equal to the horizon can be missed by rounding in `t·N²`.
        while self.next < self.schedule.len() {
            obs.observe(self.next, self.schedule[self.next], cfg);
            self.next += 1;
        }
    }
}

fn run_redistribution<R: Rng + ?Sized, O: Observer>(
    model: &Model,
    cfg: &mut Configuration,
    mut clock: Clock<'_>,
    rng: &mut R,
    obs: &mut O,
) -> Result<SimStats> {
    let kernel = model.kernel().expect("redistribution kernel");
    let n = cfg.n();
    let continuous = !model.kind().is_discrete();
    // One unit-rate clock per bond.
    let wait = Exp::new(n as f64).expect("positive rate");
    let mut t = 0.0;
    let mut events = 0u64;
    loop {
        let next = t + wait.sample(rng);
        if next >= clock.horizon {
            clock.finish(t, cfg, obs);
            break;
        }
        t = clock.advance_to(t, next, cfg, obs);
        let x = rng.random_range(0..n);
        let y = (x + 1) % n;
        obs.before_bond(cfg, x);
        let (a, b) = kernel.thermalize(cfg.eta[x], cfg.eta[y], rng);
        cfg.set_bond(x, a, b);
        obs.after_bond(cfg, x);
        events += 1;
        if continuous && events.is_multiple_of(RESUM_INTERVAL) {
            cfg.resum();
        }
    }
    if continuous {
        cfg.resum();
    }
    Ok(SimStats { events, micro_time: clock.horizon })
}

/// `½ Σ_α c_α(η)` and its prefix sums, grown on demand per occupation.
struct HarmonicTable {
    two_s: f64,
    prefix: Vec<Vec<f64>>,
}

impl HarmonicTable {
    fn new(two_s: f64) -> Self {
        Self { two_s, prefix: Vec::new() }
    }

    fn ensure(&mut self, eta: usize) {
        while self.prefix.len() <= eta {
            let m = self.prefix.len() as u32;
            let mut acc = 0.0;
            let sums = harmonic_rates(self.two_s, m)
                .into_iter()
                .map(|c| {
                    acc += 0.5 * c;
                    acc
                })
                .collect();
            self.prefix.push(sums);
        }
    }

    fn total(&mut self, eta: usize) -> f64 {
        self.ensure(eta);
        self.prefix[eta].last().copied().unwrap_or(0.0)
    }

    /// Number of particles `α ≥ 1` moved, for `u` uniform on `[0, total)`.
    fn sample(&mut self, eta: usize, u: f64) -> f64 {
        self.ensure(eta);
        let p = &self.prefix[eta];
        (p.partition_point(|&c| c <= u).min(p.len() - 1) + 1) as f64
    }
}

/// Directed rates of the particle kinds.
struct ParticleRates {
    kind: ModelKind,
    harmonic: Option<HarmonicTable>,
}

impl ParticleRates {
    fn new(kind: ModelKind) -> Self {
        let harmonic = match kind {
            ModelKind::Harmonic { two_s } => Some(HarmonicTable::new(two_s)),
            _ => None,
        };
        Self { kind, harmonic }
    }

    /// Total rate out of a site holding `from` towards one holding `to`.
    fn out(&mut self, from: f64, to: f64) -> f64 {
        match self.kind {
            ModelKind::Irw => 0.5 * from,
            ModelKind::Pep { kappa } => 0.5 * from * (kappa as f64 - to),
            ModelKind::Sip { two_s } => 0.5 * from * (two_s + to),
            ModelKind::Harmonic { .. } => self.harmonic.as_mut().expect("table").total(from as usize),
            _ => unreachable!("particle kinds only"),
        }
    }

    /// Particles moved by a jump out of `from`, `u` uniform on `[0, out)`.
    fn amount(&mut self, from: f64, u: f64) -> f64 {
        match self.harmonic.as_mut() {
            Some(h) => h.sample(from as usize, u),
            None => 1.0,
        }
    }
}

fn run_particles<R: Rng + ?Sized, O: Observer>(
    model: &Model,
    cfg: &mut Configuration,
    mut clock: Clock<'_>,
    rng: &mut R,
    obs: &mut O,
    cap: f64,
) -> Result<SimStats> {
    let n = cfg.n();
    let mut rates_of = ParticleRates::new(model.kind());
    let bond_rate = |cfg: &Configuration, x: usize, r: &mut ParticleRates| -> Result<(f64, f64)> {
        let (a, b) = (cfg.eta[x], cfg.eta[(x + 1) % n]);
        let (fwd, bwd) = (r.out(a, b), r.out(b, a));
        if fwd + bwd > cap {
            return Err(Error::RateOverflow { rate: fwd + bwd, cap });
        }
        Ok((fwd, bwd))
    };
    let mut rates = Vec::with_capacity(n);
    for x in 0..n {
        let (f, b) = bond_rate(cfg, x, &mut rates_of)?;
        rates.push(f + b);
    }
    let mut tree = RateTree::new(&rates);
    let mut t = 0.0;
    let mut events = 0u64;
    loop {
        let total = tree.total();
        // A frozen state (e.g. no particles) holds until the horizon.
        let next = if total > 0.0 { t + rng.random::<f64>().ln() / -total } else { f64::INFINITY };
        if next >= clock.horizon {
            clock.finish(t, cfg, obs);
            break;
        }
        t = clock.advance_to(t, next, cfg, obs);
        let x = tree.select(rng.random::<f64>() * total);
        let y = (x + 1) % n;
        let (fwd, bwd) = bond_rate(cfg, x, &mut rates_of)?;
        let u = rng.random::<f64>() * (fwd + bwd);
        let (from, u) = if u < fwd { (x, u) } else { (y, u - fwd) };
        let amount = rates_of.amount(cfg.eta[from], u);
        obs.before_bond(cfg, x);
        let (mut a, mut b) = (cfg.eta[x], cfg.eta[y]);
        if from == x {
            a -= amount;
            b += amount;
        } else {
            a += amount;
            b -= amount;
        }
        cfg.set_bond(x, a, b);
        obs.after_bond(cfg, x);
        events += 1;
        for z in [(x + n - 1) % n, x, y] {
            let (f, b) = bond_rate(cfg, z, &mut rates_of)?;
            tree.set(z, f + b);
        }
    }
    Ok(SimStats { events, micro_time: clock.horizon })
}

/// Synchronous Euler–Maruyama for `L₀,₁ = ½(∂₁−∂₀)² − (1/(2σ²))(η₁−η₀)(∂₁−∂₀)`
/// on every bond: bond `x` moves `dZ = −(η_{x+1}−η_x)/(2σ²)·δ + √δ·ξ` from
/// site `x` to site `x+1`.
fn run_diffusion<R: Rng + ?Sized, O: Observer>(
    sigma2: f64,
    step: f64,
    cfg: &mut Configuration,
    mut clock: Clock<'_>,
    rng: &mut R,
    obs: &mut O,
) -> Result<SimStats> {
    let n = cfg.n();
    let mut flux = vec![0.0; n];
    let mut t = 0.0;
    let mut steps = 0u64;
    let drift = 0.5 / sigma2;
    while t < clock.horizon {
        // Land exactly on scheduled times and on the horizon.
        let mut target = (t + step).min(clock.horizon);
        if let Some(&s) = clock.schedule.get(clock.next) {
            let at = s * clock.n2;
            if at > t && at < target {
                target = at;
            }
        }
        let dt = target - t;
        t = clock.advance_to(t, target, cfg, obs);
        let sd = dt.sqrt();
        for (x, j) in flux.iter_mut().enumerate() {
            let xi: f64 = StandardNormal.sample(rng);
            *j = -drift * (cfg.eta[(x + 1) % n] - cfg.eta[x]) * dt + sd * xi;
        }
        for (x, &j) in flux.iter().enumerate() {
            cfg.eta[x] -= j;
            cfg.eta[(x + 1) % n] += j;
        }
        steps += 1;
        if steps.is_multiple_of(RESUM_INTERVAL) {
            cfg.resum();
        }
        obs.after_sweep(cfg);
    }
    cfg.resum();
    clock.finish(t, cfg, obs);
    Ok(SimStats { events: steps, micro_time: clock.horizon })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nef::NefFamily;
    use rand::Rng;

    fn spec(kind: ModelKind, rho: f64) -> ModelSpec {
        ModelSpec::new(kind, rho).unwrap()
    }

    fn discrete_kinds() -> Vec<ModelSpec> {
        vec![
            spec(ModelKind::Redistribution { family: NefFamily::Poisson }, 1.0),
            spec(ModelKind::Redistribution { family: NefFamily::Binomial { kappa: 2 } }, 1.0),
            spec(ModelKind::Redistribution { family: NefFamily::NegBinomial { two_s: 1.5 } }, 1.0),
            spec(ModelKind::Irw, 1.0),
            spec(ModelKind::Pep { kappa: 2 }, 1.0),
            spec(ModelKind::Sip { two_s: 1.0 }, 1.0),
            spec(ModelKind::Harmonic { two_s: 1.0 }, 1.0),
        ]
    }

    #[test]
    fn product_init_mean_within_clt_band() {
        let mut rng = replica_rng(1, 0);
        let n = 4000;
        for s in discrete_kinds() {
            let rho = 1.0;
            let c = init_product(s, rho, n, &mut rng).unwrap();
            let v = s.kind.invariant_family().variance(rho);
            let mean = c.total() / n as f64;
            assert!((mean - rho).abs() <= 4.0 * (v / n as f64).sqrt(), "{}: {mean}", s.kind.name());
        }
    }

    #[test]
    fn binomial_init_respects_cap() {
        let mut rng = replica_rng(2, 0);
        let s = spec(ModelKind::Redistribution { family: NefFamily::Binomial { kappa: 2 } }, 1.0);
        let c = init_product(s, 1.0, 8, &mut rng).unwrap();
        assert!(c.eta().iter().all(|&v| v == 0.0 || v == 1.0 || v == 2.0));
    }

    #[test]
    fn profile_init_follows_cosine() {
        let s = spec(ModelKind::Redistribution { family: NefFamily::Poisson }, 2.0);
        let n = 16;
        let reps = 4000;
        let mut sums = vec![0.0; n];
        let mut rng = replica_rng(3, 0);
        let profile = |u: f64| 2.0 + (2.0 * std::f64::consts::PI * u).cos();
        for _ in 0..reps {
            let c = init_profile(s, profile, n, &mut rng).unwrap();
            for (acc, v) in sums.iter_mut().zip(c.eta()) {
                *acc += v;
            }
        }
        for (x, acc) in sums.iter().enumerate() {
            let rho = profile(x as f64 / n as f64);
            let se = (rho / reps as f64).sqrt();
            assert!((acc / reps as f64 - rho).abs() <= 4.0 * se, "site {x}");
        }
    }

    #[test]
    fn rejects_bad_configurations() {
        let s = spec(ModelKind::Pep { kappa: 2 }, 1.0);
        assert!(matches!(Configuration::new(s, vec![0.0, 3.0, 1.0]), Err(Error::Domain(_))));
        assert!(matches!(Configuration::new(s, vec![0.0, 1.0]), Err(Error::InvalidInput(_))));
        assert!(matches!(Configuration::new(s, vec![0.0, 0.5, 1.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn zero_horizon_is_identity() {
        for s in discrete_kinds() {
            let m = s.build().unwrap();
            let mut rng = replica_rng(4, 0);
            let mut c = init_product(s, 1.0, 10, &mut rng).unwrap();
            let before = c.clone();
            let mut rec = SnapshotRecorder::default();
            let st = simulate(&m, &mut c, 0.0, &[0.0], &mut rng, &mut rec, SimOptions::default()).unwrap();
            assert_eq!(st.events, 0);
            assert_eq!(c, before);
            assert_eq!(rec.snapshots, vec![(0.0, before.eta().to_vec())]);
        }
    }

    /// Checks support and exact integer conservation after every event.
    struct Guard {
        total: f64,
        violations: usize,
    }

    impl Observer for Guard {
        fn after_bond(&mut self, cfg: &Configuration, x: usize) {
            let support = cfg.spec().kind.support();
            let n = cfg.n();
            let ok = support.contains(cfg.eta()[x]) && support.contains(cfg.eta()[(x + 1) % n]);
            if !ok || cfg.total() != self.total {
                self.violations += 1;
            }
        }
    }

    #[test]
    fn discrete_models_conserve_exactly_over_a_million_events() {
        for s in discrete_kinds() {
            let m = s.build().unwrap();
            let mut rng = replica_rng(5, 0);
            let n = 32;
            let mut c = init_product(s, 1.0, n, &mut rng).unwrap();
            let start = c.total();
            let mut g = Guard { total: start, violations: 0 };
            let mut counter = EventCounter::default();
            let mut rounds = 0;
            while counter.events < 1_000_000 {
                simulate(&m, &mut c, 20.0, &[], &mut rng, &mut (&mut g, &mut counter), SimOptions::default()).unwrap();
                rounds += 1;
                assert!(rounds < 500, "{} too slow to reach 10⁶ events", s.kind.name());
            }
            assert_eq!(g.violations, 0, "{}", s.kind.name());
            assert_eq!(c.recomputed_total(), start);
            assert_eq!(c.total(), start);
        }
    }

    #[test]
    fn event_count_matches_rate() {
        // Redistribution: unit rate per bond.
        let s = spec(ModelKind::Redistribution { family: NefFamily::Poisson }, 1.0);
        let m = s.build().unwrap();
        let n = 32;
        let t = 5.0;
        let mut rng = replica_rng(6, 0);
        let mut c = init_product(s, 1.0, n, &mut rng).unwrap();
        let mut k = EventCounter::default();
        simulate(&m, &mut c, t, &[], &mut rng, &mut k, SimOptions::default()).unwrap();
        let expected = (n * n) as f64 * t * n as f64;
        assert!((k.events as f64 / expected - 1.0).abs() < 0.05);

        // IRW with a stationary Poisson(ρ) state: mean bond rate is ρ.
        let s = spec(ModelKind::Irw, 2.0);
        let m = s.build().unwrap();
        let mut c = init_product(s, 2.0, n, &mut rng).unwrap();
        let mut k = EventCounter::default();
        simulate(&m, &mut c, 1.0, &[], &mut rng, &mut k, SimOptions::default()).unwrap();
        let expected = (n * n) as f64 * n as f64 * 2.0;
        assert!((k.events as f64 / expected - 1.0).abs() < 0.05, "{} vs {expected}", k.events);
    }

    #[test]
    fn observations_fire_once_each_in_order() {
        struct Times(Vec<(usize, f64)>, f64);
        impl Observer for Times {
            fn observe(&mut self, k: usize, t: f64, _cfg: &Configuration) {
                self.0.push((k, t));
            }
            fn hold(&mut self, _cfg: &Configuration, dt: f64) {
                assert!(dt >= 0.0);
                self.1 += dt;
            }
        }
        let sched = [0.0, 0.01, 0.01, 0.05, 0.1];
        for s in [
            spec(ModelKind::Redistribution { family: NefFamily::Gamma { two_s: 1.0 } }, 1.0),
            spec(ModelKind::Sip { two_s: 2.0 }, 1.0),
            spec(ModelKind::GinzburgLandau { sigma2: 1.0 }, 0.0),
        ] {
            let m = s.build().unwrap();
            let mut rng = replica_rng(7, 0);
            let mut c = init_product(s, s.rho, 8, &mut rng).unwrap();
            let mut o = Times(Vec::new(), 0.0);
            simulate(&m, &mut c, 0.1, &sched, &mut rng, &mut o, SimOptions::default()).unwrap();
            let want: Vec<(usize, f64)> = sched.iter().copied().enumerate().collect();
            assert_eq!(o.0, want, "{}", s.kind.name());
            assert!((o.1 - 0.1).abs() < 1e-12, "{}: held {}", s.kind.name(), o.1);
        }
    }

    #[test]
    fn schedule_is_validated() {
        let s = spec(ModelKind::Irw, 1.0);
        let m = s.build().unwrap();
        let mut rng = replica_rng(8, 0);
        let mut c = init_product(s, 1.0, 8, &mut rng).unwrap();
        for bad in [&[0.2, 0.1][..], &[0.5][..], &[-0.1][..]] {
            let r = simulate(&m, &mut c, 0.3, bad, &mut rng, &mut (), SimOptions::default());
            assert!(matches!(r, Err(Error::InvalidInput(_))));
        }
        assert!(simulate(&m, &mut c, -1.0, &[], &mut rng, &mut (), SimOptions::default()).is_err());
    }

    #[test]
    fn rate_cap_triggers_overflow() {
        let s = spec(ModelKind::Sip { two_s: 1.0 }, 1.0);
        let m = s.build().unwrap();
        let mut c = Configuration::new(s, vec![100.0, 100.0, 0.0, 0.0]).unwrap();
        let mut rng = replica_rng(9, 0);
        let opts = SimOptions { rate_cap: 100.0, ..SimOptions::default() };
        let r = simulate(&m, &mut c, 0.1, &[], &mut rng, &mut (), opts);
        assert!(matches!(r, Err(Error::RateOverflow { .. })));
    }

    #[test]
    fn same_seed_same_trajectory() {
        for s in [
            spec(ModelKind::Harmonic { two_s: 1.0 }, 1.0),
            spec(ModelKind::Redistribution { family: NefFamily::Ghs { r: 1.0 } }, 0.5),
            spec(ModelKind::GinzburgLandau { sigma2: 0.5 }, 0.0),
        ] {
            let m = s.build().unwrap();
            let run = |seed| {
                let mut rng = replica_rng(seed, 3);
                let mut c = init_product(s, s.rho, 12, &mut rng).unwrap();
                let mut rec = SnapshotRecorder::default();
                simulate(&m, &mut c, 0.05, &[0.02, 0.05], &mut rng, &mut rec, SimOptions::default()).unwrap();
                rec.snapshots
            };
            assert_eq!(run(11), run(11));
            assert_ne!(run(11), run(12));
        }
    }

    #[test]
    fn replicas_are_ordered_and_thread_independent() {
        let job = |_r: usize, rng: &mut ChaCha8Rng| -> Result<u64> { Ok(rng.random()) };
        let a = run_replicas(16, 42, job).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| run_replicas(16, 42, job).unwrap());
        assert_eq!(a, b);
        let direct: Vec<u64> = (0..16).map(|r| replica_rng(42, r).random()).collect();
        assert_eq!(a, direct);
    }

    #[test]
    fn continuous_totals_stay_within_rounding() {
        for s in [
            spec(ModelKind::Redistribution { family: NefFamily::Normal { sigma2: 1.5 } }, 0.3),
            spec(ModelKind::Redistribution { family: NefFamily::Gamma { two_s: 1.0 } }, 1.0),
            spec(ModelKind::GinzburgLandau { sigma2: 1.0 }, 0.0),
        ] {
            let m = s.build().unwrap();
            let n = 32;
            let mut rng = replica_rng(10, 0);
            let mut c = init_product(s, s.rho, n, &mut rng).unwrap();
            let start = c.total();
            simulate(&m, &mut c, 0.5, &[], &mut rng, &mut (), SimOptions::default()).unwrap();
            assert!((c.total() - c.recomputed_total()).abs() <= 1e-9 * n as f64);
            assert!((c.total() - start).abs() <= 1e-9 * n as f64, "{}", s.kind.name());
            assert!(c.eta().iter().all(|&v| s.kind.support().contains(v)));
        }
    }

    #[test]
    fn gamma_stationary_site_mean_does_not_drift() {
        let s = spec(ModelKind::Redistribution { family: NefFamily::Gamma { two_s: 1.0 } }, 1.0);
        let m = s.build().unwrap();
        let (n, reps) = (64, 200);
        let finals = run_replicas(reps, 13, |_, rng| {
            let mut c = init_product(s, 1.0, n, rng)?;
            simulate(&m, &mut c, 0.1, &[], rng, &mut (), SimOptions::default())?;
            Ok(c.eta()[0])
        })
        .unwrap();
        let mean = finals.iter().sum::<f64>() / reps as f64;
        let var = finals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
        assert!((mean - 1.0).abs() <= 4.0 * (var / reps as f64).sqrt());
    }

    #[test]
    fn harmonic_table_matches_rates() {
        let mut h = HarmonicTable::new(1.0);
        let direct: f64 = harmonic_rates(1.0, 5).iter().map(|c| 0.5 * c).sum();
        assert!((h.total(5) - direct).abs() < 1e-15);
        assert_eq!(h.total(0), 0.0);
        assert_eq!(h.sample(5, 0.0), 1.0);
        assert_eq!(h.sample(5, direct * (1.0 - 1e-12)), 5.0);
    }
}
