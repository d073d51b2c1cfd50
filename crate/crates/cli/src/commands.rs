//! One function per subcommand. Each validates everything it will use before
//! computing, writes its artifacts, and returns the acceptance findings.

use crate::config::{ExperimentConfig, WalkParams};
use crate::output::Artifacts;
use crate::Failure;
use qvflab_core::engine::{
    exact_stationarity_residual, init_profile, run_replicas, simulate, Configuration, EventCounter, SimOptions,
    SnapshotRecorder,
};
use qvflab_core::hydro::{
    hydro_convergence_experiment, phi_of_state, run_ensemble, write_martingale_csv, write_phi_csv, write_profile_csv,
    EnsembleConfig, HeatSolver, ProfileSpec, Start,
};
use qvflab_core::models::{
    coefficient_report, extract_quadratic_coeffs, qvf_from_coeffs, verify_assumptions, ModelSpec,
};
use qvflab_core::rwalk::{build_walk, occupation_times, phi_ode, verify_scaling, ScalingReport};
use serde::Serialize;
use std::io::Write;

/// Outcome of the acceptance assertions attached to a command.
#[derive(Debug, Default, Serialize)]
pub struct Findings {
    pub checks: Vec<Finding>,
}

#[derive(Debug, Serialize)]
pub struct Finding {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Findings {
    fn push(&mut self, name: impl Into<String>, pass: bool, detail: impl Into<String>) {
        self.checks.push(Finding { name: name.into(), pass, detail: detail.into() });
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::validation(msg.into())
}

fn need_models(cfg: &ExperimentConfig) -> Result<&[ModelSpec], Failure> {
    if cfg.models.is_empty() {
        return Err(invalid("`models` must list at least one model"));
    }
    for m in &cfg.models {
        m.validate()?;
    }
    Ok(&cfg.models)
}

fn need_ns(cfg: &ExperimentConfig, min: usize) -> Result<&[usize], Failure> {
    if cfg.ns.is_empty() {
        return Err(invalid("`ns` must list at least one lattice size"));
    }
    if let Some(&n) = cfg.ns.iter().find(|&&n| n < min) {
        return Err(invalid(format!("lattice size {n} is below the minimum {min}")));
    }
    if cfg.ns.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid(format!("`ns` must increase, got {:?}", cfg.ns)));
    }
    Ok(&cfg.ns)
}

/// The start used by Monte Carlo commands, validated against every model.
fn need_start(cfg: &ExperimentConfig, n: usize) -> Result<Start, Failure> {
    match (&cfg.profile, &cfg.state) {
        (Some(_), Some(_)) => Err(invalid("give either `profile` or `state`, not both")),
        (None, None) => Err(invalid("need a `profile` or a `state`")),
        (Some(p), None) => {
            for m in &cfg.models {
                p.validate(m.kind.invariant_family())?;
            }
            Ok(Start::Profile(*p))
        }
        (None, Some(s)) => {
            if s.len() != n {
                return Err(invalid(format!("`state` has {} sites but N = {n}", s.len())));
            }
            for m in &cfg.models {
                Configuration::new(*m, s.clone())?;
            }
            Ok(Start::State(s.clone()))
        }
    }
}

#[derive(Serialize)]
struct ClassifyRow {
    #[serde(flatten)]
    report: qvflab_core::models::CoefficientReport,
    family: String,
    family_v2: f64,
    family_v1: f64,
    family_v0: f64,
    max_abs_diff: f64,
    tolerance: f64,
}

pub fn classify(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<Findings, Failure> {
    let models = need_models(cfg)?;
    let mut rows = Vec::new();
    let mut f = Findings::default();
    for s in models {
        let m = s.build()?;
        let report = coefficient_report(&m)?;
        let fam = s.kind.invariant_family();
        let want = fam.qvf();
        let got = qvflab_core::nef::QvfTriple::new(report.v2, report.v1, report.v0);
        let diff = got.max_abs_diff(&want);
        let tolerance = if s.kind.is_exact() { 1e-8 } else { 1e-6 };
        f.push(
            format!("{}: QVF matches {}", report.model, fam.name()),
            diff <= tolerance,
            format!("max |Δ| = {diff:.2e}, tolerance {tolerance:.0e}"),
        );
        rows.push(ClassifyRow {
            report,
            family: fam.name().to_string(),
            family_v2: want.v2,
            family_v1: want.v1,
            family_v0: want.v0,
            max_abs_diff: diff,
            tolerance,
        });
    }
    art.csv("classify.csv", |w| {
        writeln!(w, "model,D,a,b,c,d,residual,v2,v1,v0,family,family_v2,family_v1,family_v0,max_abs_diff")?;
        for r in &rows {
            let c = &r.report;
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                c.model,
                c.diffusivity,
                c.a,
                c.b,
                c.c,
                c.d,
                c.residual,
                c.v2,
                c.v1,
                c.v0,
                r.family,
                r.family_v2,
                r.family_v1,
                r.family_v0,
                r.max_abs_diff
            )?;
        }
        Ok(())
    })?;
    art.json("classify.json", &rows)?;
    Ok(f)
}

#[derive(Serialize)]
struct FiberResidual {
    n: usize,
    total: u32,
    residual: f64,
}

#[derive(Serialize)]
struct VerifyReport {
    assumptions: qvflab_core::models::AssumptionReport,
    fibers: Vec<FiberResidual>,
}

pub fn verify(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<Findings, Failure> {
    let models = need_models(cfg)?;
    let fibers = if cfg.fibers.is_empty() {
        vec![crate::config::Fiber { n: 3, total: 3 }, crate::config::Fiber { n: 4, total: 4 }]
    } else {
        cfg.fibers.clone()
    };
    if let Some(fb) = fibers.iter().find(|f| f.n < 2) {
        return Err(invalid(format!("fiber needs N ≥ 2, got {}", fb.n)));
    }
    let mut f = Findings::default();
    let mut reports = Vec::new();
    for s in models {
        let m = s.build()?;
        let assumptions = verify_assumptions(&m, s.kind.default_tolerance())?;
        for c in &assumptions.checks {
            f.push(
                format!("{}: {}", assumptions.model, c.name),
                c.pass,
                format!("value {:.3e}, tolerance {:.0e}", c.value, c.tol),
            );
        }
        let mut res = Vec::new();
        if s.kind.is_discrete() {
            for fb in &fibers {
                let r = exact_stationarity_residual(&m, fb.n, fb.total)?;
                f.push(
                    format!("{}: canonical measure stationary on (N={}, M={})", assumptions.model, fb.n, fb.total),
                    r <= 1e-12,
                    format!("‖νL‖∞ = {r:.2e}"),
                );
                res.push(FiberResidual { n: fb.n, total: fb.total, residual: r });
            }
        }
        reports.push(VerifyReport { assumptions, fibers: res });
    }
    art.csv("verify.csv", |w| {
        writeln!(w, "check,pass,detail")?;
        for c in &f.checks {
            writeln!(w, "\"{}\",{},\"{}\"", c.name, c.pass, c.detail)?;
        }
        Ok(())
    })?;
    art.json("verify.json", &reports)?;
    Ok(f)
}

#[derive(Serialize)]
struct SimulateReplica {
    replica: usize,
    events: u64,
    initial_total: f64,
    final_total: f64,
}

pub fn simulate_cmd(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<Findings, Failure> {
    let models = need_models(cfg)?;
    if models.len() != 1 || cfg.ns.len() != 1 {
        return Err(invalid("`simulate` takes exactly one model and one lattice size"));
    }
    let spec = models[0];
    let n = need_ns(cfg, 3)?[0];
    let start = need_start(cfg, n)?;
    let times = cfg.schedule().map_err(invalid)?;
    let replicas = cfg.replicas(1).map_err(invalid)?;
    let model = spec.build()?;
    let horizon = *times.last().unwrap();
    let runs = run_replicas(replicas, cfg.seed, |_, rng| {
        let mut c = match &start {
            Start::Profile(p) => init_profile(spec, |u| p.eval(u), n, rng)?,
            Start::State(s) => Configuration::new(spec, s.clone())?,
        };
        let initial_total = c.recomputed_total();
        let mut snaps = SnapshotRecorder::default();
        let mut count = EventCounter::default();
        simulate(&model, &mut c, horizon, &times, rng, &mut (&mut snaps, &mut count), SimOptions::default())?;
        Ok((snaps.snapshots, count.events, initial_total, c.recomputed_total()))
    })?;
    let mut f = Findings::default();
    let mut summary = Vec::new();
    for (k, (_, events, t0, t1)) in runs.iter().enumerate() {
        let drift = (t1 - t0).abs();
        f.push(format!("replica {k}: conservation"), drift <= 1e-9 * t0.abs().max(1.0), format!("|ΔΣη| = {drift:.2e}"));
        summary.push(SimulateReplica { replica: k, events: *events, initial_total: *t0, final_total: *t1 });
    }
    art.csv("snapshots.csv", |w| {
        writeln!(w, "model,N,replica,t,x,eta")?;
        for (k, (snaps, ..)) in runs.iter().enumerate() {
            for (t, eta) in snaps {
                for (x, v) in eta.iter().enumerate() {
                    writeln!(w, "{},{n},{k},{t},{x},{v}", spec.kind.name())?;
                }
            }
        }
        Ok(())
    })?;
    art.json("simulate.json", &summary)?;
    Ok(f)
}

#[derive(Serialize)]
struct HydroSummary {
    model: String,
    diffusivity: f64,
    levels: Vec<HydroLevelSummary>,
}

#[derive(Serialize)]
struct HydroLevelSummary {
    n: usize,
    sup_error: Vec<f64>,
    l2_error: Vec<f64>,
    max_z: Vec<f64>,
    h1_variance: Vec<(f64, f64)>,
    second_moment: Vec<(f64, f64)>,
}

pub fn hydro(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<Findings, Failure> {
    let models = need_models(cfg)?;
    let ns = need_ns(cfg, 4)?;
    let profile: ProfileSpec = match need_start(cfg, ns[0])? {
        Start::Profile(p) => p,
        Start::State(_) => return Err(invalid("`hydro` needs a `profile` start")),
    };
    let times = cfg.schedule().map_err(invalid)?;
    let replicas = cfg.replicas(400).map_err(invalid)?;
    let mut results = Vec::new();
    for &s in models {
        results.push(hydro_convergence_experiment(s, profile, ns, &times, replicas, cfg.seed)?);
    }
    let mut f = Findings::default();
    let mut summary = Vec::new();
    for r in &results {
        for lv in &r.levels {
            let z = lv.max_z.iter().copied().fold(0.0, f64::max);
            f.push(format!("{} N={}: mean profile vs heat flow", r.model, lv.n), z <= 4.0, format!("max z = {z:.2}"));
        }
        for w in r.levels.windows(2) {
            let ratio = w[0].h1_variance.last().unwrap().0 / w[1].h1_variance.last().unwrap().0;
            let expected = w[1].n as f64 / w[0].n as f64;
            f.push(
                format!("{} N={}→{}: Var⟨π_T, h1⟩ ratio", r.model, w[0].n, w[1].n),
                (ratio / expected - 1.0).abs() <= 0.25,
                format!("{ratio:.3}, expected {expected} ± 25%"),
            );
        }
        summary.push(HydroSummary {
            model: r.model.clone(),
            diffusivity: r.diffusivity,
            levels: r
                .levels
                .iter()
                .map(|lv| HydroLevelSummary {
                    n: lv.n,
                    sup_error: lv.sup_error.clone(),
                    l2_error: lv.l2_error.clone(),
                    max_z: lv.max_z.clone(),
                    h1_variance: lv.h1_variance.clone(),
                    second_moment: lv.second_moment.clone(),
                })
                .collect(),
        });
    }
    art.csv("profile.csv", |w| {
        writeln!(w, "model,N,t,x,mean,se,reference")?;
        for r in &results {
            let mut buf = Vec::new();
            write_profile_csv(&mut buf, r)?;
            skip_header(w, &buf)?;
        }
        Ok(())
    })?;
    art.csv("martingale.csv", |w| {
        writeln!(w, "model,N,t,G,var_M,mean_int_qv,se")?;
        for r in &results {
            let mut buf = Vec::new();
            write_martingale_csv(&mut buf, r)?;
            skip_header(w, &buf)?;
        }
        Ok(())
    })?;
    art.csv("phi.csv", |w| {
        writeln!(w, "model,N,t,i,phi,se")?;
        for r in &results {
            let traces: Vec<_> = r.levels.iter().map(|lv| &lv.phi).collect();
            let mut buf = Vec::new();
            write_phi_csv(&mut buf, &r.model, &traces)?;
            skip_header(w, &buf)?;
        }
        Ok(())
    })?;
    art.json("hydro.json", &summary)?;
    Ok(f)
}

/// Copies a core CSV block without its header row.
fn skip_header(w: &mut impl Write, buf: &[u8]) -> std::io::Result<()> {
    let start = buf.iter().position(|&b| b == b'\n').map_or(buf.len(), |p| p + 1);
    w.write_all(&buf[start..])
}

pub fn correlations(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<Findings, Failure> {
    let models = need_models(cfg)?;
    let ns = need_ns(cfg, 4)?;
    if cfg.state.is_some() && ns.len() != 1 {
        return Err(invalid("a deterministic `state` fixes a single lattice size"));
    }
    let start = need_start(cfg, ns[0])?;
    let times = cfg.schedule().map_err(invalid)?;
    let replicas = cfg.replicas(2000).map_err(invalid)?;
    let mut f = Findings::default();
    let mut mc_rows = Vec::new();
    let mut ode_rows = Vec::new();
    for &s in models {
        let m = s.build()?;
        let coeffs = extract_quadratic_coeffs(&m)?;
        let qvf = qvf_from_coeffs(&coeffs)?;
        for &n in ns {
            let walk = build_walk(n, coeffs.diffusivity, coeffs.a, qvf.v2)?;
            let ens_cfg = EnsembleConfig {
                spec: s,
                n,
                start: start.clone(),
                times: times.clone(),
                replicas,
                seed: cfg.seed,
                tests: cfg.observables(),
                options: SimOptions::default(),
            };
            let ens = run_ensemble(&ens_cfg)?;
            let trace = ens.phi_estimate(cfg.seed)?;
            // A product start has no correlations; a fixed start has φ(0, 0) ≠ 0.
            let phi0 = match &start {
                Start::Profile(_) => vec![0.0; walk.size()],
                Start::State(eta) => phi_of_state(eta, qvf)?,
            };
            let heat = HeatSolver::new(&ens.initial_means, coeffs.diffusivity)?;
            let ode = phi_ode(&walk, &phi0, |t| heat.gradient_energy(t), &times)?;
            let mut worst = 0.0f64;
            for (k, &t) in times.iter().enumerate() {
                for (i, &o) in ode[k].iter().enumerate() {
                    let (p, se) = (trace.phi[k][i], trace.se[k][i]);
                    let z = if se > 0.0 {
                        (p - o).abs() / se
                    } else if (p - o).abs() < 1e-12 {
                        0.0
                    } else {
                        f64::INFINITY
                    };
                    worst = worst.max(z);
                    mc_rows.push((s.kind.name(), n, t, i, p, se, o, z));
                    ode_rows.push((s.kind.name(), n, t, i, o));
                }
            }
            f.push(format!("{} N={n}: φ̂ vs φ ODE", s.kind.name()), worst <= 4.0, format!("max z = {worst:.2}"));
        }
    }
    art.csv("phi.csv", |w| {
        writeln!(w, "model,N,t,i,phi,se")?;
        for (m, n, t, i, p, se, ..) in &mc_rows {
            writeln!(w, "{m},{n},{t},{i},{p},{se}")?;
        }
        Ok(())
    })?;
    art.csv("phi_ode.csv", |w| {
        writeln!(w, "model,N,t,i,phi")?;
        for (m, n, t, i, o) in &ode_rows {
            writeln!(w, "{m},{n},{t},{i},{o}")?;
        }
        Ok(())
    })?;
    art.csv("correlations.csv", |w| {
        writeln!(w, "model,N,t,i,phi_mc,se,phi_ode,z")?;
        for (m, n, t, i, p, se, o, z) in &mc_rows {
            writeln!(w, "{m},{n},{t},{i},{p},{se},{o},{z}")?;
        }
        Ok(())
    })?;
    Ok(f)
}

#[derive(Serialize)]
struct WalkReport {
    label: String,
    #[serde(rename = "D")]
    d: f64,
    a: f64,
    v2: f64,
    scaling: Option<ScalingReport>,
}

pub fn walk(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<Findings, Failure> {
    let mut params: Vec<(String, WalkParams)> = Vec::new();
    for s in &cfg.models {
        s.validate()?;
        let c = extract_quadratic_coeffs(&s.build()?)?;
        let q = qvf_from_coeffs(&c)?;
        params.push((s.kind.name(), WalkParams { d: c.diffusivity, a: c.a, v2: q.v2 }));
    }
    params.extend(cfg.walks.iter().map(|w| (format!("D={},a={},v2={}", w.d, w.a, w.v2), *w)));
    if params.is_empty() {
        return Err(invalid("`walk` needs `models` or `walks`"));
    }
    let ns = need_ns(cfg, 4)?;
    let times = cfg.schedule().map_err(invalid)?;
    let t = *times.last().unwrap();
    for (_, p) in &params {
        for &n in ns {
            build_walk(n, p.d, p.a, p.v2)?;
        }
    }
    let mut f = Findings::default();
    let mut reports = Vec::new();
    let mut rows = Vec::new();
    for (label, p) in &params {
        for &n in ns {
            let spec = build_walk(n, p.d, p.a, p.v2)?;
            for &tk in &times {
                for (i, v) in occupation_times(&spec, tk)?.into_iter().enumerate() {
                    rows.push((n, *p, i, tk, v));
                }
            }
        }
        let scaling = if ns.len() >= 3 && ns[ns.len() - 1] >= 8 * ns[0] {
            let r = verify_scaling(p.d, p.a, p.v2, ns, t)?;
            f.push(format!("{label}: local-time slope"), r.pass, format!("slope {:.4} in [−1.15, −0.85]", r.slope));
            Some(r)
        } else {
            None
        };
        reports.push(WalkReport { label: label.clone(), d: p.d, a: p.a, v2: p.v2, scaling });
    }
    art.csv("walk.csv", |w| {
        writeln!(w, "N,D,a,v2,i,t,occupation_time")?;
        for (n, p, i, t, v) in &rows {
            writeln!(w, "{n},{},{},{},{i},{t},{v}", p.d, p.a, p.v2)?;
        }
        Ok(())
    })?;
    art.json("walk.json", &reports)?;
    Ok(f)
}
