//! Full generator of a discrete model restricted to one conserved fiber
//! `{η : Σ η_x = M}` on the torus of `N` sites, for exact checks.

use crate::error::{Error, Result};
use crate::models::Model;
use crate::nef::make_nef;
use std::collections::HashMap;
use std::io::Write;

/// Largest fiber enumerated unless a cap is given.
pub const DEFAULT_FIBER_CAP: usize = 200_000;

/// Uniformization chunks keep `Λ·h` below this, so `e^{−Λh}` never underflows.
const CHUNK_RATE_TIME: f64 = 30.0;

/// Sparse generator on the fiber; states listed in lexicographic order.
#[derive(Debug, Clone)]
pub struct FiberGenerator {
    n: usize,
    total: u32,
    states: Vec<u32>,
    index: HashMap<Vec<u32>, usize>,
    /// Off-diagonal `(target, rate)` per row, merged by target.
    rows: Vec<Vec<(usize, f64)>>,
    diag: Vec<f64>,
}

/// Starting law for `exact_expectation_evolution`.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialLaw {
    /// Dirac mass at one configuration.
    State(Vec<u32>),
    /// The invariant product measure conditioned on the fiber.
    Canonical,
    /// Explicit probabilities in fiber order.
    Weights(Vec<f64>),
}

type BondMoves = Vec<(f64, f64, f64)>;

pub fn exact_generator(m: &Model, n: usize, total: u32) -> Result<FiberGenerator> {
    exact_generator_with_cap(m, n, total, DEFAULT_FIBER_CAP)
}

pub fn exact_generator_with_cap(m: &Model, n: usize, total: u32, cap: usize) -> Result<FiberGenerator> {
    let support = m.kind().support();
    if !support.is_discrete() {
        return Err(Error::InvalidInput(format!("{} has a continuous state space", m.kind().name())));
    }
    if n < 3 {
        return Err(Error::InvalidInput(format!("torus needs N ≥ 3 sites, got {n}")));
    }
    let site_cap = support.cap().unwrap_or(total).min(total);
    let size = fiber_size(n, total, site_cap);
    if size > cap as u128 {
        return Err(Error::FiberTooLarge { size: size.min(usize::MAX as u128) as usize, cap });
    }
    let size = size as usize;
    let mut states = Vec::with_capacity(size * n);
    let mut current = vec![0u32; n];
    enumerate(&mut current, 0, total, site_cap, &mut states);
    debug_assert_eq!(states.len(), size * n);
    let index: HashMap<Vec<u32>, usize> = states.chunks(n).enumerate().map(|(i, s)| (s.to_vec(), i)).collect();

    let mut rows = Vec::with_capacity(size);
    let mut diag = Vec::with_capacity(size);
    // Bond transitions depend only on the two occupations.
    let mut cache: HashMap<(u32, u32), BondMoves> = HashMap::new();
    let mut target = vec![0u32; n];
    for i in 0..size {
        let s = &states[i * n..(i + 1) * n];
        let mut row: Vec<(usize, f64)> = Vec::new();
        for x in 0..n {
            let y = (x + 1) % n;
            let key = (s[x], s[y]);
            let moves = match cache.entry(key) {
                std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
                std::collections::hash_map::Entry::Vacant(e) => e.insert(m.bond_transitions(s[x] as f64, s[y] as f64)?),
            };
            for &(a, b, rate) in moves.iter() {
                if rate == 0.0 {
                    continue;
                }
                target.copy_from_slice(s);
                target[x] = a as u32;
                target[y] = b as u32;
                let j = index[&target];
                row.push((j, rate));
            }
        }
        row.sort_by_key(|&(j, _)| j);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
        for (j, r) in row {
            match merged.last_mut() {
                Some((k, acc)) if *k == j => *acc += r,
                _ => merged.push((j, r)),
            }
        }
        // Bonds that leave the state unchanged carry no rate.
        merged.retain(|&(j, _)| j != i);
        diag.push(-merged.iter().map(|&(_, r)| r).sum::<f64>());
        rows.push(merged);
    }
    Ok(FiberGenerator { n, total, states, index, rows, diag })
}

/// Number of compositions of `total` into `n` parts each at most `cap`.
fn fiber_size(n: usize, total: u32, cap: u32) -> u128 {
    let m = total as usize;
    let mut ways = vec![0u128; m + 1];
    ways[0] = 1;
    for _ in 0..n {
        let mut next = vec![0u128; m + 1];
        for (s, &w) in ways.iter().enumerate() {
            if w == 0 {
                continue;
            }
            for v in 0..=(cap as usize).min(m - s) {
                next[s + v] = next[s + v].saturating_add(w);
            }
        }
        ways = next;
    }
    ways[m]
}

fn enumerate(current: &mut [u32], pos: usize, left: u32, cap: u32, out: &mut Vec<u32>) {
    let n = current.len();
    if pos + 1 == n {
        if left <= cap {
            current[pos] = left;
            out.extend_from_slice(current);
        }
        return;
    }
    for v in 0..=left.min(cap) {
        current[pos] = v;
        enumerate(current, pos + 1, left - v, cap, out);
    }
}

impl FiberGenerator {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn sites(&self) -> usize {
        self.n
    }

    pub fn total(&self) -> u32 {
        self.total
    }

    pub fn state(&self, i: usize) -> &[u32] {
        &self.states[i * self.n..(i + 1) * self.n]
    }

    pub fn states(&self) -> impl Iterator<Item = &[u32]> {
        self.states.chunks(self.n)
    }

    pub fn index_of(&self, state: &[u32]) -> Option<usize> {
        self.index.get(state).copied()
    }

    /// `L_ij` for `i ≠ j`, as stored.
    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn diagonal(&self, i: usize) -> f64 {
        self.diag[i]
    }

    /// Largest `|Σ_j L_ij|`.
    pub fn max_row_sum(&self) -> f64 {
        self.rows
            .iter()
            .zip(&self.diag)
            .map(|(r, d)| (r.iter().map(|&(_, v)| v).sum::<f64>() + d).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_exit_rate(&self) -> f64 {
        self.diag.iter().map(|d| -d).fold(0.0, f64::max)
    }

    /// `(L f)_i`.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .zip(&self.diag)
            .enumerate()
            .map(|(i, (row, d))| d * f[i] + row.iter().map(|&(j, r)| r * f[j]).sum::<f64>())
            .collect()
    }

    /// `(μ L)_j`.
    pub fn apply_left(&self, mu: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = mu.iter().zip(&self.diag).map(|(m, d)| m * d).collect();
        for (i, row) in self.rows.iter().enumerate() {
            if mu[i] == 0.0 {
                continue;
            }
            for &(j, r) in row {
                out[j] += mu[i] * r;
            }
        }
        out
    }

    /// Product measure of the model's invariant family conditioned on the
    /// fiber; `ρ` drops out after normalization.
    pub fn canonical_measure(&self, m: &Model) -> Result<Vec<f64>> {
        let spec = m.spec();
        let d = make_nef(spec.kind.invariant_family(), spec.rho)?;
        let logs: Vec<f64> = self.states().map(|s| s.iter().map(|&v| d.ln_density(v as f64)).sum()).collect();
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
        let z: f64 = w.iter().sum();
        Ok(w.into_iter().map(|v| v / z).collect())
    }

    /// `μ e^{tL}` by uniformization, `t` microscopic.
    pub fn evolve(&self, mu: &[f64], t: f64) -> Result<Vec<f64>> {
        if mu.len() != self.len() {
            return Err(Error::InvalidInput(format!("law has {} entries, fiber has {}", mu.len(), self.len())));
        }
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::InvalidInput(format!("time must be finite and ≥ 0, got {t}")));
        }
        let lambda = self.max_exit_rate();
        if lambda == 0.0 || t == 0.0 {
            return Ok(mu.to_vec());
        }
        let chunks = (lambda * t / CHUNK_RATE_TIME).ceil().max(1.0);
        let h = t / chunks;
        let mut v = mu.to_vec();
        for _ in 0..chunks as usize {
            v = self.uniformized_step(&v, lambda, h);
        }
        Ok(v)
    }

    /// `Σ_k Pois(k; Λh) · v Pᵏ` with `P = I + L/Λ`, truncated once the
    /// remaining Poisson mass is below `1e-17`.
    fn uniformized_step(&self, v: &[f64], lambda: f64, h: f64) -> Vec<f64> {
        let lt = lambda * h;
        let mut weight = (-lt).exp();
        let mut used = weight;
        let mut term = v.to_vec();
        let mut out: Vec<f64> = term.iter().map(|x| weight * x).collect();
        let mut k = 0.0;
        while 1.0 - used > 1e-17 || k < lt {
            k += 1.0;
            let lv = self.apply_left(&term);
            for (t, d) in term.iter_mut().zip(&lv) {
                *t += d / lambda;
            }
            weight *= lt / k;
            used += weight;
            for (o, t) in out.iter_mut().zip(&term) {
                *o += weight * t;
            }
            if weight < 1e-300 {
                break;
            }
        }
        out
    }

    /// Writes the generator as `row,col,rate` triples, diagonal included.
    pub fn write_coo<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "row,col,rate")?;
        for (i, row) in self.rows.iter().enumerate() {
            let mut entries: Vec<(usize, f64)> = row.clone();
            entries.push((i, self.diag[i]));
            entries.sort_by_key(|&(j, _)| j);
            for (j, r) in entries {
                writeln!(w, "{i},{j},{r}")?;
            }
        }
        Ok(())
    }
}

/// `‖ν_can L‖_∞` on the fiber of `N` sites and total `M`.
pub fn exact_stationarity_residual(m: &Model, n: usize, total: u32) -> Result<f64> {
    let g = exact_generator(m, n, total)?;
    let nu = g.canonical_measure(m)?;
    Ok(g.apply_left(&nu).into_iter().fold(0.0, |acc, v| acc.max(v.abs())))
}

/// `E[f(η(t))]` started from `init`, `t` microscopic.
pub fn exact_expectation_evolution(
    m: &Model,
    n: usize,
    total: u32,
    f: impl Fn(&[u32]) -> f64,
    init: &InitialLaw,
    t: f64,
) -> Result<f64> {
    let g = exact_generator(m, n, total)?;
    let mu = initial_weights(&g, m, init)?;
    let law = g.evolve(&mu, t)?;
    Ok(g.states().zip(&law).map(|(s, p)| p * f(s)).sum())
}

pub(crate) fn initial_weights(g: &FiberGenerator, m: &Model, init: &InitialLaw) -> Result<Vec<f64>> {
    match init {
        InitialLaw::State(s) => {
            let i = g.index_of(s).ok_or_else(|| Error::InvalidInput(format!("state {s:?} not in the fiber")))?;
            let mut mu = vec![0.0; g.len()];
            mu[i] = 1.0;
            Ok(mu)
        }
        InitialLaw::Canonical => g.canonical_measure(m),
        InitialLaw::Weights(w) if w.len() == g.len() => Ok(w.clone()),
        InitialLaw::Weights(w) => Err(Error::InvalidInput(format!("{} weights for {} states", w.len(), g.len()))),
    }
}
