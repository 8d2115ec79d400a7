//! Small numerical kernels shared by the samplers, bounds and solver:
//! adaptive Gauss–Kronrod quadrature, compensated summation and a
//! tridiagonal solver.

use crate::error::{Error, Result};

// Kronrod abscissae on [-1, 1] (positive half, descending); odd indices are
// the embedded 7-point Gauss nodes.
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
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_INTERVALS: usize = 4000;

/// One 15-point Kronrod panel on `[a, b]`: returns `(kronrod, |kronrod - gauss|)`.
fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut resk = fc * WGK[7];
    let mut resg = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        resk += WGK[j] * s;
        if j % 2 == 1 {
            resg += WG[j / 2] * s;
        }
    }
    (resk * h, ((resk - resg) * h).abs())
}

#[derive(Clone, Copy)]
struct Panel {
    a: f64,
    b: f64,
    est: f64,
    err: f64,
}

impl PartialEq for Panel {
    fn eq(&self, o: &Self) -> bool {
        self.err == o.err
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Panel {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        self.err.total_cmp(&o.err)
    }
}

/// Globally adaptive G7/K15: repeatedly bisects the panel with the largest
/// error estimate until the summed estimate meets the tolerance.
fn global_adapt<F: Fn(f64) -> f64>(f: &F, edges: &[f64], abs_tol: f64, rel_tol: f64) -> Result<f64> {
    let mut heap = std::collections::BinaryHeap::new();
    let mut settled = CompensatedSum::new();
    let mut settled_err = 0.0;
    for w in edges.windows(2) {
        let (est, err) = gk15(f, w[0], w[1]);
        heap.push(Panel {
            a: w[0],
            b: w[1],
            est,
            err,
        });
    }
    loop {
        let mut total = settled;
        let mut err = settled_err;
        for p in heap.iter() {
            total.add(p.est);
            err += p.err;
        }
        let total = total.value();
        if !total.is_finite() {
            return Err(Error::Quadrature(format!(
                "non-finite integral on [{}, {}]",
                edges[0],
                edges[edges.len() - 1]
            )));
        }
        let tol = abs_tol.max(rel_tol * total.abs());
        if err <= tol || heap.is_empty() {
            return Ok(total);
        }
        if heap.len() + 1 >= MAX_INTERVALS {
            // accept a near miss caused by roundoff in the error estimate
            if err <= 100.0 * tol.max(1e-15 * total.abs()) {
                return Ok(total);
            }
            return Err(Error::Quadrature(format!(
                "interval limit on [{}, {}], error estimate {err:e}",
                edges[0],
                edges[edges.len() - 1]
            )));
        }
        let p = heap.pop().expect("nonempty heap");
        let m = 0.5 * (p.a + p.b);
        if m <= p.a || m >= p.b {
            // cannot split further in floating point
            settled.add(p.est);
            settled_err += p.err;
            continue;
        }
        let (l, le) = gk15(f, p.a, m);
        let (r, re) = gk15(f, m, p.b);
        let diff = (l + r - p.est).abs();
        let (le, re) = if diff <= 1e-15 * (l + r).abs() {
            // children agree with the parent to roundoff
            (0.5 * diff, 0.5 * diff)
        } else {
            (le, re)
        };
        heap.push(Panel {
            a: p.a,
            b: m,
            est: l,
            err: le,
        });
        heap.push(Panel {
            a: m,
            b: p.b,
            est: r,
            err: re,
        });
    }
}

/// Adaptive Gauss–Kronrod (G7/K15) integral of `f` over `[a, b]`.
///
/// Stops when the summed error estimate is below
/// `max(abs_tol, rel_tol·|integral|)`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    if b < a {
        return integrate(f, b, a, abs_tol, rel_tol).map(|v| -v);
    }
    let n0 = 4;
    let h = (b - a) / n0 as f64;
    let edges: Vec<f64> = (0..=n0).map(|i| if i == n0 { b } else { a + h * i as f64 }).collect();
    global_adapt(&f, &edges, abs_tol, rel_tol)
}

const GL8_X: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL8_W: [f64; 4] = [
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// Fixed 8-point Gauss–Legendre rule on `[a, b]`, for integrands known to be
/// smooth on the interval.
pub fn gauss_legendre_8<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut acc = 0.0;
    for (x, w) in GL8_X.iter().zip(&GL8_W) {
        acc += w * (f(c - h * x) + f(c + h * x));
    }
    acc * h
}

/// Adaptive G7/K15 started from a single panel with an absolute
/// tolerance; cheaper than [`integrate`] for smooth integrands of known
/// scale.
pub fn integrate_abs<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64) -> Result<f64> {
    global_adapt(&f, &[a, b], abs_tol, 0.0)
}

/// Integral over `[a, b]` after the smoothing map
/// `x = a + (b-a)·u^m / (u^m + (1-u)^m)`, which flattens integrable
/// power-law singularities at both endpoints. `m ≥ 1`; `m = 1` is the
/// identity map.
pub fn integrate_smoothed<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, m: f64, abs_tol: f64, rel_tol: f64) -> Result<f64> {
    let len = b - a;
    let g = |u: f64| {
        if u <= 0.0 || u >= 1.0 {
            return 0.0;
        }
        let p = u.powf(m);
        let q = (1.0 - u).powf(m);
        let den = p + q;
        let w = p / den;
        // d/du [p / (p+q)] = m (u^{m-1} q + p (1-u)^{m-1}) / den²
        let dw = m * (u.powf(m - 1.0) * q + p * (1.0 - u).powf(m - 1.0)) / (den * den);
        let x = a + len * w;
        if dw == 0.0 || x <= a.min(b) || x >= a.max(b) {
            return 0.0;
        }
        f(x) * len * dw
    };
    integrate(g, 0.0, 1.0, abs_tol, rel_tol)
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

/// Compensated sum of a slice, in index order.
pub fn compensated_sum(xs: &[f64]) -> f64 {
    xs.iter().copied().collect::<CompensatedSum>().value()
}

/// Solves the tridiagonal system with constant sub/super-diagonal `off` and
/// diagonal `diag` (Thomas algorithm). `rhs` is overwritten with the
/// solution; `scratch` must have the same length.
pub fn solve_tridiagonal_const(diag: f64, off: f64, rhs: &mut [f64], scratch: &mut [f64]) {
    let n = rhs.len();
    if n == 0 {
        return;
    }
    debug_assert_eq!(scratch.len(), n);
    let mut denom = diag;
    scratch[0] = off / denom;
    rhs[0] /= denom;
    for i in 1..n {
        denom = diag - off * scratch[i - 1];
        scratch[i] = off / denom;
        rhs[i] = (rhs[i] - off * rhs[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= scratch[i] * rhs[i + 1];
    }
}

/// Linear interpolation of tabulated values on a uniform grid `x_j = j·dx`.
/// Arguments past the last node are clamped to the end value.
pub fn interp_uniform(values: &[f64], dx: f64, x: f64) -> f64 {
    let n = values.len();
    if n == 0 {
        return 0.0;
    }
    if x <= 0.0 {
        return values[0];
    }
    let pos = x / dx;
    let j = pos.floor() as usize;
    if j + 1 >= n {
        return values[n - 1];
    }
    let w = pos - j as f64;
    values[j] + w * (values[j + 1] - values[j])
}
