//! Numerical integration used as the independent oracle for densities,
//! kernel moments and bond actions.
//!
//! * [`integrate`]: adaptive Gauss–Kronrod (7/15) on a finite interval.
//! * [`integrate_line`]: the same on ℝ after the algebraic map
//!   `x = c + s·u/(1-u²)`, which turns exponential tails into super-exponential
//!   decay at `u = ±1`.
//! * [`tanh_sinh`]: double-exponential rule for finite intervals with
//!   integrable endpoint singularities (beta-type kernels).

use crate::error::{Error, Result};
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::FRAC_PI_2;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] =
    [0.129_484_966_168_869_7, 0.279_705_391_489_276_7, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];

const MAX_SEGMENTS: usize = 4000;

#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Tolerance {
    pub const fn new(abs: f64, rel: f64) -> Self {
        Self { abs, rel }
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { abs: 1e-10, rel: 1e-12 }
    }
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> Segment {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = f(center - dx) + f(center + dx);
        kron += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    Segment { a, b, value: kron * half, error: ((kron - gauss) * half).abs() }
}

/// Adaptive Gauss–Kronrod on `[a, b]`.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: Tolerance) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let mut heap = BinaryHeap::new();
    let first = kronrod(&mut f, a, b);
    let mut total = first.value;
    let mut err = first.error;
    heap.push(first);
    while err > tol.abs.max(tol.rel * total.abs()) {
        if heap.len() >= MAX_SEGMENTS || !total.is_finite() {
            return Err(Error::QuadratureFailure { tol: tol.abs, estimate: total, error: err });
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        let left = kronrod(&mut f, worst.a, mid);
        let right = kronrod(&mut f, mid, worst.b);
        total += left.value + right.value - worst.value;
        err += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
    }
    // Re-sum to shed the drift of the incremental updates.
    Ok(heap.iter().map(|s| s.value).sum())
}

/// Integral over ℝ of a function with (at least) exponentially decaying tails.
/// `center` and `scale` should roughly locate the bulk of the mass.
pub fn integrate_line<F: FnMut(f64) -> f64>(mut f: F, center: f64, scale: f64, tol: Tolerance) -> Result<f64> {
    let mut mapped = |u: f64| {
        let d = 1.0 - u * u;
        if d <= 0.0 {
            return 0.0;
        }
        let v = f(center + scale * u / d);
        if v == 0.0 {
            0.0
        } else {
            v * scale * (1.0 + u * u) / (d * d)
        }
    };
    // Splitting at the centre keeps the bulk away from the first bisection.
    let left = integrate(&mut mapped, -1.0, 0.0, tol)?;
    let right = integrate(&mut mapped, 0.0, 1.0, tol)?;
    Ok(left + right)
}

/// Double-exponential (tanh-sinh) rule on `[a, b]`.
pub fn tanh_sinh<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: Tolerance) -> Result<f64> {
    tanh_sinh_gaps(|left, right| f(if left <= right { a + left } else { b - right }), a, b, tol)
}

/// Tanh-sinh rule where the integrand receives the exact distances
/// `(x - a, b - x)` to both endpoints, so integrands singular at `a` or `b`
/// are evaluated without cancellation.
pub fn tanh_sinh_gaps<F: FnMut(f64, f64) -> f64>(mut f: F, a: f64, b: f64, tol: Tolerance) -> Result<f64> {
    const T_MAX: f64 = 4.0;
    const MAX_LEVEL: u32 = 12;
    if a == b {
        return Ok(0.0);
    }
    let width = b - a;
    let mut eval = |t: f64| -> f64 {
        let y = FRAC_PI_2 * t.sinh();
        let w = FRAC_PI_2 * t.cosh() / (y.cosh() * y.cosh());
        if !w.is_finite() || w == 0.0 {
            return 0.0;
        }
        // Distance to the nearer endpoint, computed without subtraction.
        let near = width / (1.0 + (2.0 * y.abs()).exp());
        if near == 0.0 {
            return 0.0;
        }
        let far = width - near;
        let (left, right) = if y < 0.0 { (near, far) } else { (far, near) };
        let v = f(left, right);
        if v.is_finite() {
            v * w * 0.5 * width
        } else {
            0.0
        }
    };

    let mut h = 1.0;
    let mut sum = eval(0.0);
    let mut k = 1;
    while k as f64 * h <= T_MAX {
        let t = k as f64 * h;
        sum += eval(t) + eval(-t);
        k += 1;
    }
    let mut estimate = sum * h;
    for _ in 0..MAX_LEVEL {
        h *= 0.5;
        let mut k = 1;
        while k as f64 * h <= T_MAX {
            let t = k as f64 * h;
            sum += eval(t) + eval(-t);
            k += 2;
        }
        let next = sum * h;
        let diff = (next - estimate).abs();
        estimate = next;
        if diff <= tol.abs.max(tol.rel * next.abs()) {
            return Ok(next);
        }
    }
    Err(Error::QuadratureFailure { tol: tol.abs, estimate, error: f64::NAN })
}

/// Integral over `[a, ∞)` via `x = a + s·v/(1-v)` and the tanh-sinh rule,
/// which tolerates an integrable singularity at `a`.
pub fn integrate_half_line<F: FnMut(f64) -> f64>(mut f: F, a: f64, scale: f64, tol: Tolerance) -> Result<f64> {
    tanh_sinh(
        |v| {
            let d = 1.0 - v;
            let val = f(a + scale * v / d);
            if val == 0.0 {
                0.0
            } else {
                val * scale / (d * d)
            }
        },
        0.0,
        1.0,
        tol,
    )
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else { p1 };
            let pn1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pn1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}
