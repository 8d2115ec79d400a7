//! Brownian and fractional Brownian sample paths on a uniform grid.
//!
//! Two couplings are supported: `W` and `B^H` independent, or `B^H` built
//! from the increments of the same `W` through the Volterra kernel
//! `K_H(t, s)`. All samplers are pure functions of their inputs and the RNG
//! they are handed; per-path RNG streams come from [`path_rng`].

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{gauss_legendre_8, integrate, integrate_smoothed};
use crate::special::{beta, ln_gamma};

/// RNG used for every sampled path.
pub type PathRng = ChaCha8Rng;

/// Counter-based split of a master seed: path `index` always draws from the
/// same ChaCha stream, independent of how paths are scheduled.
pub fn path_rng(master_seed: u64, index: u64) -> PathRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// Uniform discretization `t_j = j·dt`, `j = 0..=n_steps`, of `[0, t_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    t_max: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(t_max: f64, n_steps: usize) -> Result<Self> {
        if !(t_max > 0.0) || !t_max.is_finite() {
            return Err(Error::Domain(format!("grid horizon must be positive, got {t_max}")));
        }
        if n_steps == 0 {
            return Err(Error::Domain("grid needs at least one step".into()));
        }
        Ok(Self { t_max, n_steps })
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.t_max / self.n_steps as f64
    }

    /// Number of grid points, `n_steps + 1`.
    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn t(&self, j: usize) -> f64 {
        if j == self.n_steps {
            self.t_max
        } else {
            j as f64 * self.dt()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|j| self.t(j)).collect()
    }

    /// Validates a grid deserialized from a config file.
    pub fn validate(&self) -> Result<()> {
        TimeGrid::new(self.t_max, self.n_steps).map(|_| ())
    }
}

/// How `W` and `B^H` are coupled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseCoupling {
    /// `W` independent of `B^H`.
    Independent,
    /// `B^H(t) = ∫₀ᵗ K_H(t,s) dW(s)` driven by the same `W`.
    VolterraDependent,
}

/// One realization of `(W, B^H)` on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    pub grid: TimeGrid,
    pub w: Vec<f64>,
    pub bh: Vec<f64>,
    pub hurst: f64,
    pub coupling: NoiseCoupling,
}

impl SamplePath {
    pub fn new(grid: TimeGrid, w: Vec<f64>, bh: Vec<f64>, hurst: f64, coupling: NoiseCoupling) -> Result<Self> {
        check_hurst_open(hurst)?;
        for arr in [&w, &bh] {
            if arr.len() != grid.len() {
                return Err(Error::GridMismatch {
                    expected: grid.len(),
                    got: arr.len(),
                });
            }
        }
        if w[0] != 0.0 || bh[0] != 0.0 {
            return Err(Error::Domain("sample paths must start at zero".into()));
        }
        Ok(Self {
            grid,
            w,
            bh,
            hurst,
            coupling,
        })
    }

    /// The identically-zero path.
    pub fn zero(grid: TimeGrid, hurst: f64, coupling: NoiseCoupling) -> Result<Self> {
        Self::new(grid, vec![0.0; grid.len()], vec![0.0; grid.len()], hurst, coupling)
    }

    /// Brownian increments `W(t_{j+1}) - W(t_j)`.
    pub fn w_increments(&self) -> Vec<f64> {
        self.w.windows(2).map(|p| p[1] - p[0]).collect()
    }

    /// Writes the path as CSV with header `t,w,bh`.
    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path)?;
        wtr.write_record(["t", "w", "bh"])?;
        for j in 0..self.grid.len() {
            wtr.write_record([fmt_f64(self.grid.t(j)), fmt_f64(self.w[j]), fmt_f64(self.bh[j])])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Locale-independent float formatting with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

fn check_hurst_open(h: f64) -> Result<()> {
    if h > 0.0 && h < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("Hurst index must lie in (0,1), got {h}")))
    }
}

fn check_hurst_volterra(h: f64) -> Result<()> {
    if h > 0.5 && h < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("Volterra kernel requires H in (1/2,1), got {h}")))
    }
}

/// Brownian path on `grid`: `W(0) = 0`, independent `N(0, dt)` increments.
pub fn sample_bm<R: Rng + ?Sized>(grid: &TimeGrid, rng: &mut R) -> Vec<f64> {
    let z: Vec<f64> = (0..grid.n_steps()).map(|_| rng.sample(StandardNormal)).collect();
    bm_from_normals(grid, &z)
}

/// Brownian path from given standard-normal draws, one per step.
pub fn bm_from_normals(grid: &TimeGrid, z: &[f64]) -> Vec<f64> {
    let sd = grid.dt().sqrt();
    let mut w = Vec::with_capacity(z.len() + 1);
    w.push(0.0);
    let mut acc = 0.0;
    for zi in z {
        acc += sd * zi;
        w.push(acc);
    }
    w
}

/// fBm covariance `R_H(t,s) = ½(s^{2H} + t^{2H} − |t−s|^{2H})`.
pub fn fbm_covariance(t: f64, s: f64, hurst: f64) -> Result<f64> {
    check_hurst_open(hurst)?;
    if t < 0.0 || s < 0.0 {
        return Err(Error::Domain(format!("times must be nonnegative, got ({t}, {s})")));
    }
    let h2 = 2.0 * hurst;
    Ok(0.5 * (s.powf(h2) + t.powf(h2) - (t - s).abs().powf(h2)))
}

/// Autocovariance of unit-step fractional Gaussian noise at lag `k`.
fn fgn_autocov(k: usize, hurst: f64) -> f64 {
    let h2 = 2.0 * hurst;
    let k = k as f64;
    0.5 * ((k + 1.0).powf(h2) - 2.0 * k.powf(h2) + (k - 1.0).abs().powf(h2))
}

/// Which exact method an [`FbmSampler`] ended up with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FbmMethod {
    CirculantEmbedding,
    Cholesky,
}

enum FbmPlan {
    Circulant {
        /// `sqrt(λ_k / m)` for the circulant eigenvalues.
        scale: Vec<f64>,
        fft: Arc<dyn Fft<f64>>,
    },
    Cholesky {
        /// Row-major lower-triangular factor of the covariance at `t_1..t_n`.
        lower: Vec<f64>,
    },
}

/// Exact fBm sampler for a fixed grid and Hurst index. Construction does
/// the O(n log n) (or O(n³) for Cholesky) setup once; sampling is then
/// cheap and thread-safe.
pub struct FbmSampler {
    grid: TimeGrid,
    hurst: f64,
    plan: FbmPlan,
}

impl std::fmt::Debug for FbmSampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FbmSampler")
            .field("grid", &self.grid)
            .field("hurst", &self.hurst)
            .field("method", &self.method())
            .finish()
    }
}

/// Relative size below which negative circulant eigenvalues are roundoff.
const EMBEDDING_TOL: f64 = 1e-10;

impl FbmSampler {
    /// Circulant embedding of the increment sequence, falling back to
    /// Cholesky when the embedding is not nonnegative definite.
    pub fn new(grid: TimeGrid, hurst: f64) -> Result<Self> {
        check_hurst_open(hurst)?;
        match Self::circulant(grid, hurst) {
            Some(s) => Ok(s),
            None => Self::cholesky(grid, hurst),
        }
    }

    /// Forces the Cholesky method.
    pub fn cholesky(grid: TimeGrid, hurst: f64) -> Result<Self> {
        check_hurst_open(hurst)?;
        let n = grid.n_steps();
        let mut lower = vec![0.0; n * n];
        for i in 0..n {
            let ti = grid.t(i + 1);
            for j in 0..=i {
                let mut sum = fbm_covariance(ti, grid.t(j + 1), hurst)?;
                for k in 0..j {
                    sum -= lower[i * n + k] * lower[j * n + k];
                }
                if i == j {
                    if !(sum > 0.0) {
                        return Err(Error::NotPositiveDefinite { row: i });
                    }
                    lower[i * n + i] = sum.sqrt();
                } else {
                    lower[i * n + j] = sum / lower[j * n + j];
                }
            }
        }
        Ok(Self {
            grid,
            hurst,
            plan: FbmPlan::Cholesky { lower },
        })
    }

    fn circulant(grid: TimeGrid, hurst: f64) -> Option<Self> {
        let n = grid.n_steps();
        let m = 2 * n;
        let mut row: Vec<Complex<f64>> = Vec::with_capacity(m);
        for k in 0..=n {
            row.push(Complex::new(fgn_autocov(k, hurst), 0.0));
        }
        for k in (1..n).rev() {
            row.push(Complex::new(fgn_autocov(k, hurst), 0.0));
        }
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(m);
        fft.process(&mut row);
        let max = row.iter().map(|c| c.re.abs()).fold(0.0, f64::max);
        let mut scale = Vec::with_capacity(m);
        for c in &row {
            let lam = c.re;
            if lam < -EMBEDDING_TOL * max {
                return None;
            }
            scale.push((lam.max(0.0) / m as f64).sqrt());
        }
        Some(Self {
            grid,
            hurst,
            plan: FbmPlan::Circulant { scale, fft },
        })
    }

    pub fn method(&self) -> FbmMethod {
        match self.plan {
            FbmPlan::Circulant { .. } => FbmMethod::CirculantEmbedding,
            FbmPlan::Cholesky { .. } => FbmMethod::Cholesky,
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    /// Draws one path `B^H(t_0..t_n)` with `B^H(0) = 0`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.grid.n_steps();
        let mut out = Vec::with_capacity(n + 1);
        out.push(0.0);
        match &self.plan {
            FbmPlan::Circulant { scale, fft } => {
                let mut buf: Vec<Complex<f64>> = scale
                    .iter()
                    .map(|&s| {
                        let a: f64 = rng.sample(StandardNormal);
                        let b: f64 = rng.sample(StandardNormal);
                        Complex::new(s * a, s * b)
                    })
                    .collect();
                fft.process(&mut buf);
                let step = self.grid.dt().powf(self.hurst);
                let mut acc = 0.0;
                for c in buf.iter().take(n) {
                    acc += step * c.re;
                    out.push(acc);
                }
            }
            FbmPlan::Cholesky { lower } => {
                let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
                for i in 0..n {
                    let row = &lower[i * n..i * n + i + 1];
                    out.push(row.iter().zip(&z).map(|(l, z)| l * z).sum());
                }
            }
        }
        out
    }
}

/// One exact fBm path; builds a fresh [`FbmSampler`]. Campaigns should hold
/// a sampler instead.
pub fn sample_fbm<R: Rng + ?Sized>(grid: &TimeGrid, hurst: f64, rng: &mut R) -> Result<Vec<f64>> {
    Ok(FbmSampler::new(*grid, hurst)?.sample(rng))
}

/// Normalizing constant of the Volterra kernel in its displayed form,
/// fixed so that `∫₀ᵗ K_H(t,s)² ds = t^{2H}`.
///
/// The bracket equals `(H − ½)` times the kernel
/// `s^{½−H} ∫_s^t (u−s)^{H−3/2} u^{H−½} du`, whose constant is
/// `sqrt(H(2H−1) / B(2−2H, H−½))`.
pub fn volterra_constant(hurst: f64) -> Result<f64> {
    check_hurst_volterra(hurst)?;
    Ok(reduced_constant(hurst)? / (hurst - 0.5))
}

/// `c_H = sqrt(H(2H−1) / B(2−2H, H−½)) = (H − ½)·C_H`.
fn reduced_constant(hurst: f64) -> Result<f64> {
    Ok((hurst * (2.0 * hurst - 1.0) / beta(2.0 - 2.0 * hurst, hurst - 0.5)?).sqrt())
}

/// Constants of the Volterra kernel for one Hurst index.
#[derive(Debug, Clone, Copy)]
struct KernelConsts {
    alpha: f64,
    /// `c_H / α`.
    scale: f64,
    /// `Γ(1+α)Γ(1−2α) / (2Γ(1−α))`.
    connection: f64,
}

impl KernelConsts {
    fn new(hurst: f64) -> Result<Self> {
        let alpha = hurst - 0.5;
        let connection = (ln_gamma(1.0 + alpha)? + ln_gamma(1.0 - 2.0 * alpha)? - ln_gamma(1.0 - alpha)?).exp() / 2.0;
        Ok(Self {
            alpha,
            scale: reduced_constant(hurst)? / alpha,
            connection,
        })
    }
}

/// `Σ_n (−α)_n / (c)_n x^n`, i.e. `₂F₁(−α, 1; c; x)`, for `0 ≤ x ≤ ½`.
fn hyp_neg_alpha_one(alpha: f64, c: f64, x: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 1.0;
    for n in 0..200 {
        let nf = n as f64;
        term *= (nf - alpha) / (nf + c) * x;
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    sum
}

/// `K_H(1, s)` for `0 < s < 1`.
///
/// Integrating the displayed bracket by parts gives
/// `(H−½) s^{½−H} ∫_s^1 (u−s)^{H−3/2} u^{H−½} du`, and with `α = H−½`
/// the integral equals `(1−s)^α G(1−s) / α`, `G(x) = ₂F₁(−α, 1; 1+α; x)`.
/// `G` is summed directly for `1−s ≤ ½` and through the connection formula
/// at `x = 1` otherwise.
fn kernel_unit(s: f64, k: &KernelConsts) -> f64 {
    let a = k.alpha;
    let g = if s >= 0.5 {
        hyp_neg_alpha_one(a, 1.0 + a, 1.0 - s)
    } else {
        0.5 * hyp_neg_alpha_one(a, 1.0 - 2.0 * a, s) + k.connection * s.powf(2.0 * a) * (1.0 - s).powf(-a)
    };
    k.scale * (s.powf(-a) * (1.0 - s).powf(a)) * g
}

/// Volterra kernel `K_H(t,s)` for `0 < s < t`, `H ∈ (½, 1)`.
pub fn volterra_kernel(t: f64, s: f64, hurst: f64) -> Result<f64> {
    check_hurst_volterra(hurst)?;
    if !(s > 0.0) || !(s < t) {
        return Err(Error::Domain(format!(
            "Volterra kernel requires 0 < s < t, got s={s}, t={t}"
        )));
    }
    // K_H(t,s) = t^{H-1/2} K_H(1, s/t)
    let k = t.powf(hurst - 0.5) * kernel_unit(s / t, &KernelConsts::new(hurst)?);
    if k.is_finite() {
        Ok(k)
    } else {
        Err(Error::Quadrature(format!("kernel at t={t}, s={s}")))
    }
}

/// `∫₀ᵗ K_H(t,s) ds = Cov(W(t), B^H(t))` under the Volterra coupling.
pub fn volterra_kernel_integral(t: f64, hurst: f64) -> Result<f64> {
    check_hurst_volterra(hurst)?;
    if t <= 0.0 {
        return Ok(0.0);
    }
    let unit = cached_unit_kernel_integral(hurst)?;
    Ok(unit * t.powf(hurst + 0.5))
}

fn cached_unit_kernel_integral(hurst: f64) -> Result<f64> {
    static CACHE: OnceLock<Mutex<HashMap<u64, f64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(v) = cache.lock().unwrap().get(&hurst.to_bits()) {
        return Ok(*v);
    }
    let kc = KernelConsts::new(hurst)?;
    let m = smoothing_exponent(hurst);
    let v = integrate_smoothed(|s| kernel_unit(s, &kc), 0.0, 1.0, m, 1e-13, 1e-11)?;
    cache.lock().unwrap().insert(hurst.to_bits(), v);
    Ok(v)
}

/// Endpoint smoothing strong enough to flatten `s^{1-2H}` (the squared
/// kernel near `s = 0`).
fn smoothing_exponent(hurst: f64) -> f64 {
    (2.0 / (2.0 - 2.0 * hurst)).ceil().max(2.0)
}

/// `∫₀ᵗ K_H(t,s)² ds`, which equals `t^{2H}` under the chosen `C_H`.
pub fn volterra_variance(t: f64, hurst: f64) -> Result<f64> {
    check_hurst_volterra(hurst)?;
    if t <= 0.0 {
        return Ok(0.0);
    }
    let m = smoothing_exponent(hurst);
    let f = |s: f64| volterra_kernel(t, s, hurst).map(|k| k * k).unwrap_or(f64::NAN);
    integrate_smoothed(f, 0.0, t, m, 1e-14, 1e-10)
}

/// Cell-averaged Volterra weights for a grid: `B^H(t_j) ≈ Σ_{i<j} w_{ji} ΔW_i`
/// with `w_{ji} = (1/dt) ∫_{t_i}^{t_{i+1}} K_H(t_j, s) ds`.
#[derive(Debug, Clone)]
pub struct VolterraSampler {
    grid: TimeGrid,
    hurst: f64,
    /// Packed lower-triangular rows: row `j-1` (for `t_j`) has `j` entries.
    weights: Arc<Vec<f64>>,
}

impl VolterraSampler {
    pub fn new(grid: TimeGrid, hurst: f64) -> Result<Self> {
        check_hurst_volterra(hurst)?;
        let unit = unit_cell_weights(grid.n_steps(), hurst)?;
        let scale = grid.dt().powf(hurst - 0.5);
        let weights = if scale == 1.0 {
            unit
        } else {
            Arc::new(unit.iter().map(|w| w * scale).collect())
        };
        Ok(Self { grid, hurst, weights })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    /// Weight of increment `i` in `B^H(t_j)`, `i < j`.
    pub fn weight(&self, j: usize, i: usize) -> f64 {
        debug_assert!(i < j && j <= self.grid.n_steps());
        self.weights[(j - 1) * j / 2 + i]
    }

    /// `B^H` on the grid from the Brownian increments of the same path.
    pub fn apply(&self, w_increments: &[f64]) -> Result<Vec<f64>> {
        let n = self.grid.n_steps();
        if w_increments.len() != n {
            return Err(Error::GridMismatch {
                expected: n,
                got: w_increments.len(),
            });
        }
        let mut out = Vec::with_capacity(n + 1);
        out.push(0.0);
        for j in 1..=n {
            let row = &self.weights[(j - 1) * j / 2..(j - 1) * j / 2 + j];
            out.push(row.iter().zip(w_increments).map(|(k, dw)| k * dw).sum());
        }
        Ok(out)
    }
}

/// Dimensionless (dt = 1) cell weights, cached per `(n, H)`.
fn unit_cell_weights(n: usize, hurst: f64) -> Result<Arc<Vec<f64>>> {
    type Key = (usize, u64);
    static CACHE: OnceLock<Mutex<HashMap<Key, Arc<Vec<f64>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let key = (n, hurst.to_bits());
    if let Some(w) = cache.lock().unwrap().get(&key) {
        return Ok(Arc::clone(w));
    }
    let kc = KernelConsts::new(hurst)?;
    let m = smoothing_exponent(hurst);
    let rows: Vec<Result<Vec<f64>>> = (1..=n)
        .into_par_iter()
        .map(|j| {
            let jf = j as f64;
            let scale = jf.powf(hurst - 0.5) * jf;
            // ∫_i^{i+1} K(j,σ) dσ = j^{H-1/2} · j · ∫_{i/j}^{(i+1)/j} K(1,y) dy
            (0..j)
                .map(|i| {
                    let a = i as f64 / jf;
                    let b = (i + 1) as f64 / jf;
                    let f = |y: f64| kernel_unit(y, &kc);
                    // cells at least two widths from both singular ends are smooth
                    let v = if i >= 2 && i + 3 <= j {
                        gauss_legendre_8(f, a, b)
                    } else if i == 0 || i + 1 == j {
                        integrate_smoothed(f, a, b, m, 1e-15, 1e-10)?
                    } else {
                        integrate(f, a, b, 1e-15, 1e-10)?
                    };
                    Ok(scale * v)
                })
                .collect()
        })
        .collect();
    let mut packed = Vec::with_capacity(n * (n + 1) / 2);
    for row in rows {
        packed.extend(row?);
    }
    let packed = Arc::new(packed);
    cache.lock().unwrap().insert(key, Arc::clone(&packed));
    Ok(packed)
}

/// `B^H` on `grid` built from the given Brownian increments via the
/// cell-averaged Volterra kernel.
pub fn sample_fbm_volterra(grid: &TimeGrid, hurst: f64, w_increments: &[f64]) -> Result<Vec<f64>> {
    VolterraSampler::new(*grid, hurst)?.apply(w_increments)
}

/// Reusable generator of `(W, B^H)` paths for one grid, Hurst index and
/// coupling.
#[derive(Debug, Clone)]
pub struct NoiseGenerator {
    grid: TimeGrid,
    hurst: f64,
    coupling: NoiseCoupling,
    fbm: Option<Arc<FbmSampler>>,
    volterra: Option<VolterraSampler>,
}

impl NoiseGenerator {
    pub fn new(grid: TimeGrid, hurst: f64, coupling: NoiseCoupling) -> Result<Self> {
        let (fbm, volterra) = match coupling {
            NoiseCoupling::Independent => (Some(Arc::new(FbmSampler::new(grid, hurst)?)), None),
            NoiseCoupling::VolterraDependent => (None, Some(VolterraSampler::new(grid, hurst)?)),
        };
        Ok(Self {
            grid,
            hurst,
            coupling,
            fbm,
            volterra,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    pub fn coupling(&self) -> NoiseCoupling {
        self.coupling
    }

    pub fn fbm_method(&self) -> Option<FbmMethod> {
        self.fbm.as_ref().map(|s| s.method())
    }

    /// Draws one path. `W` is always drawn first, so the Brownian component
    /// of path `i` is the same under both couplings.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SamplePath {
        let w = sample_bm(&self.grid, rng);
        let bh = match (&self.fbm, &self.volterra) {
            (Some(f), _) => f.sample(rng),
            (None, Some(v)) => {
                let inc: Vec<f64> = w.windows(2).map(|p| p[1] - p[0]).collect();
                v.apply(&inc).expect("increments match grid")
            }
            (None, None) => unreachable!("generator always holds a sampler"),
        };
        SamplePath {
            grid: self.grid,
            w,
            bh,
            hurst: self.hurst,
            coupling: self.coupling,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_validation() {
        assert!(TimeGrid::new(0.0, 4).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
        let g = TimeGrid::new(2.0, 4).unwrap();
        assert_eq!(g.len(), 5);
        assert_eq!(g.dt(), 0.5);
        assert_eq!(g.times(), vec![0.0, 0.5, 1.0, 1.5, 2.0]);
    }

    #[test]
    fn covariance_examples() {
        for h in [0.3, 0.5, 0.9] {
            assert!((fbm_covariance(1.0, 1.0, h).unwrap() - 1.0).abs() < 1e-15);
        }
        assert!((fbm_covariance(0.5, 1.0, 0.5).unwrap() - 0.5).abs() < 1e-15);
        let v = fbm_covariance(1.0, 2.0, 0.7).unwrap();
        assert!((v - 2f64.powf(1.4) / 2.0).abs() < 1e-14);
        assert!((v - 1.31951).abs() < 1e-5);
        assert!(fbm_covariance(1.0, 1.0, 1.0).is_err());
        assert!(fbm_covariance(-1.0, 1.0, 0.5).is_err());
    }

    #[test]
    fn bm_with_zero_draw_is_flat() {
        let g = TimeGrid::new(1.0, 1).unwrap();
        assert_eq!(bm_from_normals(&g, &[0.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn paths_start_at_zero() {
        let g = TimeGrid::new(1.0, 16).unwrap();
        let mut rng = path_rng(7, 0);
        for coupling in [NoiseCoupling::Independent, NoiseCoupling::VolterraDependent] {
            let gen = NoiseGenerator::new(g, 0.7, coupling).unwrap();
            let p = gen.sample(&mut rng);
            assert_eq!(p.w[0], 0.0);
            assert_eq!(p.bh[0], 0.0);
            assert_eq!(p.w.len(), 17);
            assert_eq!(p.bh.len(), 17);
        }
    }

    #[test]
    fn single_step_fbm_variance() {
        // one increment: B^H(dt) ~ N(0, dt^{2H})
        let g = TimeGrid::new(0.5, 1).unwrap();
        let s = FbmSampler::new(g, 0.8).unwrap();
        let mut rng = path_rng(3, 0);
        let n = 40_000;
        let xs: Vec<f64> = (0..n).map(|_| s.sample(&mut rng)[1]).collect();
        let var = xs.iter().map(|x| x * x).sum::<f64>() / n as f64;
        let target = 0.5f64.powf(1.6);
        let se = target * (2.0 / n as f64).sqrt();
        assert!((var - target).abs() < 5.0 * se, "{var} vs {target}");
    }

    #[test]
    fn cholesky_and_circulant_agree_in_law() {
        let g = TimeGrid::new(1.0, 3).unwrap();
        let chol = FbmSampler::cholesky(g, 0.7).unwrap();
        assert_eq!(chol.method(), FbmMethod::Cholesky);
        let circ = FbmSampler::new(g, 0.7).unwrap();
        assert_eq!(circ.method(), FbmMethod::CirculantEmbedding);
        // reconstruct covariance from the Cholesky factor exactly
        if let FbmPlan::Cholesky { lower } = &chol.plan {
            for i in 0..3 {
                for j in 0..=i {
                    let c: f64 = (0..=j).map(|k| lower[i * 3 + k] * lower[j * 3 + k]).sum();
                    let r = fbm_covariance(g.t(i + 1), g.t(j + 1), 0.7).unwrap();
                    assert!((c - r).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn circulant_covariance_is_exact() {
        // Σ_k scale_k² e^{2πi jk/m} reproduces the fGn autocovariance exactly
        let g = TimeGrid::new(1.0, 8).unwrap();
        let s = FbmSampler::new(g, 0.9).unwrap();
        if let FbmPlan::Circulant { scale, .. } = &s.plan {
            let m = scale.len();
            for lag in 0..8 {
                let c: f64 = (0..m)
                    .map(|k| {
                        let th = 2.0 * std::f64::consts::PI * (lag * k) as f64 / m as f64;
                        scale[k] * scale[k] * th.cos()
                    })
                    .sum();
                assert!((c - fgn_autocov(lag, 0.9)).abs() < 1e-12, "lag {lag}");
            }
        } else {
            panic!("expected circulant embedding");
        }
    }

    #[test]
    fn volterra_kernel_domain() {
        assert!(volterra_kernel(1.0, 1.0, 0.7).is_err());
        assert!(volterra_kernel(1.0, 0.0, 0.7).is_err());
        assert!(volterra_kernel(1.0, 0.5, 0.5).is_err());
        assert!(volterra_kernel(1.0, 0.5, 1.0).is_err());
        let k = volterra_kernel(1.0, 0.999_999, 0.7).unwrap();
        assert!(k.is_finite() && k > 0.0);
    }

    #[test]
    fn volterra_kernel_matches_displayed_form() {
        // independent route: the displayed bracket
        // (t/s)^{H-1/2}(t-s)^{H-1/2} - (H-1/2) s^{1/2-H} ∫_s^t u^{H-3/2}(u-s)^{H-1/2} du
        for &h in &[0.55, 0.7, 0.9] {
            let ch = volterra_constant(h).unwrap();
            for &(t, s) in &[(1.0, 0.3), (2.0, 0.1), (0.5, 0.45), (1.0, 0.01)] {
                let a = h - 0.5;
                let inner =
                    integrate_smoothed(|u: f64| u.powf(h - 1.5) * (u - s).powf(a), s, t, 4.0, 1e-15, 1e-13).unwrap();
                let reference = ch * ((t / s).powf(a) * (t - s).powf(a) - a * s.powf(-a) * inner);
                let k = volterra_kernel(t, s, h).unwrap();
                assert!(
                    (k - reference).abs() < 1e-8 * reference.abs(),
                    "H={h} t={t} s={s}: {k} vs {reference}"
                );
            }
        }
    }

    #[test]
    fn kernel_series_matches_quadrature_form() {
        // ∫_s^1 (u-s)^{α-1} u^{α} du via u = s + (1-s) v^{1/α}, a smooth integrand
        for &h in &[0.55, 0.7, 0.9, 0.97] {
            let a = h - 0.5;
            let kc = KernelConsts::new(h).unwrap();
            let c = reduced_constant(h).unwrap();
            for &s in &[1e-9, 1e-3, 0.1, 0.49, 0.5, 0.51, 0.9, 0.999_999] {
                let p = 1.0 / a;
                let inner = integrate(|v: f64| (s + (1.0 - s) * v.powf(p)).powf(a), 0.0, 1.0, 1e-15, 1e-14).unwrap();
                let reference = c * s.powf(-a) * (1.0 - s).powf(a) * p * inner;
                let k = kernel_unit(s, &kc);
                assert!(
                    (k - reference).abs() < 1e-11 * reference.abs(),
                    "H={h} s={s}: {k} vs {reference}"
                );
            }
        }
    }

    #[test]
    fn volterra_zero_increments_give_zero_path() {
        let g = TimeGrid::new(1.0, 32).unwrap();
        let bh = sample_fbm_volterra(&g, 0.7, &vec![0.0; 32]).unwrap();
        assert!(bh.iter().all(|&x| x == 0.0));
        assert!(matches!(
            sample_fbm_volterra(&g, 0.7, &[0.0; 3]),
            Err(Error::GridMismatch { .. })
        ));
    }

    #[test]
    fn volterra_cell_weights_integrate_kernel() {
        // Σ_i w_{ni} dt = ∫₀^{t_n} K(t_n, s) ds exactly (up to quadrature)
        let g = TimeGrid::new(2.0, 16).unwrap();
        let v = VolterraSampler::new(g, 0.7).unwrap();
        let sum: f64 = (0..16).map(|i| v.weight(16, i)).sum::<f64>() * g.dt();
        let exact = volterra_kernel_integral(2.0, 0.7).unwrap();
        assert!((sum - exact).abs() < 1e-8 * exact, "{sum} vs {exact}");
    }

    #[test]
    fn path_csv_has_header() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("p.csv");
        let g = TimeGrid::new(1.0, 2).unwrap();
        let p = SamplePath::zero(g, 0.7, NoiseCoupling::Independent).unwrap();
        p.write_csv(&file).unwrap();
        let text = std::fs::read_to_string(&file).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,w,bh"));
        assert_eq!(lines.count(), 3);
    }

    #[test]
    fn rng_streams_are_reproducible_and_distinct() {
        let a: u64 = path_rng(11, 5).random();
        let b: u64 = path_rng(11, 5).random();
        let c: u64 = path_rng(11, 6).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
