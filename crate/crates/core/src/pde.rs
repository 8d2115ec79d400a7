//! Direct solver for the transformed random PDE system
//!
//! `∂v_i/∂t = (Δ + γ_i − k_{i1}²/2) v_i + e^{−k_{i1}W − k_{i2}B^H} (e^{k_{j1}W + k_{j2}B^H} v_j)^{1+β_i}`
//!
//! on `(0, L)` with Dirichlet data, along one noise path. Method of lines
//! with a centered Laplacian; the linear part is backward Euler, the
//! reaction is explicit with sub-steps limited by a growth controller.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::SamplePath;
use crate::numerics::{interp_uniform, solve_tridiagonal_const, CompensatedSum};
use crate::params::{DerivedConstants, EigenPair, SystemParams};
use crate::stopping::{cumulative_exp_functional, general_exponents, ExpFunctionalSpec};

/// Tolerance below zero before a value counts as a positivity fault.
pub const POSITIVITY_TOL: f64 = 1e-12;

/// Uniform mesh of `(0, L)` with `n_cells` cells; the unknowns are the
/// `n_cells − 1` interior nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpatialMesh {
    domain_length: f64,
    n_cells: usize,
}

impl SpatialMesh {
    pub fn new(domain_length: f64, n_cells: usize) -> Result<Self> {
        if !(domain_length > 0.0) || !domain_length.is_finite() {
            return Err(Error::Domain(format!(
                "domain length must be positive, got {domain_length}"
            )));
        }
        if n_cells < 8 {
            return Err(Error::Domain(format!("mesh needs at least 8 cells, got {n_cells}")));
        }
        Ok(Self { domain_length, n_cells })
    }

    pub fn domain_length(&self) -> f64 {
        self.domain_length
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn dx(&self) -> f64 {
        self.domain_length / self.n_cells as f64
    }

    pub fn n_interior(&self) -> usize {
        self.n_cells - 1
    }

    /// Position of interior node `m`, `m = 0..n_interior()`.
    pub fn x(&self, m: usize) -> f64 {
        (m + 1) as f64 * self.dx()
    }

    pub fn validate(&self) -> Result<()> {
        SpatialMesh::new(self.domain_length, self.n_cells).map(|_| ())
    }
}

/// Solver tuning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverControls {
    /// Integration horizon; defaults to the path horizon.
    pub horizon: Option<f64>,
    /// Largest relative sup-norm increase allowed from one reaction step.
    pub growth_tol: f64,
    /// `Θ = theta_factor · (initial sup-norm + 1)`.
    pub theta_factor: f64,
    /// Keep full fields at every recorded stamp.
    pub keep_snapshots: bool,
    /// Record a stamp every this many noise-grid steps.
    pub record_every: usize,
    /// Smallest admissible sub-step before a step-collapse error.
    pub min_substep: f64,
    /// Upper bound on the sub-step; defaults to the noise-grid step.
    pub max_substep: Option<f64>,
    /// Drop the reaction term (linear test hook).
    pub disable_nonlinearity: bool,
}

impl Default for SolverControls {
    fn default() -> Self {
        Self {
            horizon: None,
            growth_tol: 0.01,
            theta_factor: 1e8,
            keep_snapshots: false,
            record_every: 1,
            min_substep: 1e-14,
            max_substep: None,
            disable_nonlinearity: false,
        }
    }
}

/// Whether and when the solver saw blow-up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Blowup {
    DetectedAt { t_blow: f64 },
    NoneBeforeHorizon,
}

impl Blowup {
    pub fn time(&self) -> Option<f64> {
        match self {
            Blowup::DetectedAt { t_blow } => Some(*t_blow),
            Blowup::NoneBeforeHorizon => None,
        }
    }
}

/// Full fields at one stamp, boundary nodes included.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub t: f64,
    pub v1: Vec<f64>,
    pub v2: Vec<f64>,
}

/// Solver output along one path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PdeTrajectory {
    pub times: Vec<f64>,
    pub sup_v1: Vec<f64>,
    pub sup_v2: Vec<f64>,
    /// Projections `v_i(t, ψ)` at each stamp.
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
    pub snapshots: Vec<Snapshot>,
    pub blowup: Blowup,
    /// Blow-up threshold `Θ` used.
    pub theta: f64,
    pub mesh: SpatialMesh,
    pub substeps: usize,
}

impl PdeTrajectory {
    /// Writes `t,sup_v1,sup_v2,h1,h2`.
    pub fn write_csv<P: AsRef<std::path::Path>>(&self, path: P) -> Result<()> {
        use crate::noise::fmt_f64;
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["t", "sup_v1", "sup_v2", "h1", "h2"])?;
        for j in 0..self.times.len() {
            w.write_record([
                fmt_f64(self.times[j]),
                fmt_f64(self.sup_v1[j]),
                fmt_f64(self.sup_v2[j]),
                fmt_f64(self.h1[j]),
                fmt_f64(self.h2[j]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `∫ v ψ` by the trapezoid rule on interior nodes (boundary values vanish).
pub fn project_on_eigenfunction(values: &[f64], mesh: &SpatialMesh, eig: &EigenPair) -> f64 {
    let dx = mesh.dx();
    let s: CompensatedSum = values.iter().enumerate().map(|(m, v)| v * eig.psi(mesh.x(m))).collect();
    s.value() * dx
}

/// Projection of a full snapshot (boundary included) onto `ψ`.
pub fn project_snapshot(snap: &Snapshot, mesh: &SpatialMesh, eig: &EigenPair) -> (f64, f64) {
    let n = mesh.n_interior();
    (
        project_on_eigenfunction(&snap.v1[1..=n], mesh, eig),
        project_on_eigenfunction(&snap.v2[1..=n], mesh, eig),
    )
}

fn sup(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

#[inline]
fn pow1p(x: f64, beta: f64) -> f64 {
    if beta == 1.0 {
        x * x
    } else {
        x.powf(1.0 + beta)
    }
}

/// Per-path coefficients of the reaction terms.
struct Reaction {
    beta: [f64; 2],
    /// log-coefficients on `(W, B^H)`: `−k_{i1} + (1+β_i)k_{j1}`, etc.
    coef: [[f64; 2]; 2],
    off: bool,
}

impl Reaction {
    fn new(params: &SystemParams, off: bool) -> Self {
        let k = |i, j| params.kij(i, j);
        let b = [params.beta1, params.beta2];
        let coef = [
            [-k(1, 1) + (1.0 + b[0]) * k(2, 1), -k(1, 2) + (1.0 + b[0]) * k(2, 2)],
            [-k(2, 1) + (1.0 + b[1]) * k(1, 1), -k(2, 2) + (1.0 + b[1]) * k(1, 2)],
        ];
        Self { beta: b, coef, off }
    }

    fn factors(&self, w: f64, bh: f64) -> [f64; 2] {
        if self.off {
            return [0.0, 0.0];
        }
        [
            (self.coef[0][0] * w + self.coef[0][1] * bh).exp(),
            (self.coef[1][0] * w + self.coef[1][1] * bh).exp(),
        ]
    }
}

struct State {
    v: [Vec<f64>; 2],
}

impl State {
    fn sup(&self) -> f64 {
        sup(&self.v[0]).max(sup(&self.v[1]))
    }
}

struct Stepper<'a> {
    mesh: SpatialMesh,
    lin: [f64; 2],
    reaction: Reaction,
    path: &'a SamplePath,
    rhs: [Vec<f64>; 2],
    scratch: Vec<f64>,
}

impl Stepper<'_> {
    fn noise(&self, t: f64) -> (f64, f64) {
        let dt = self.path.grid.dt();
        (
            interp_uniform(&self.path.w, dt, t),
            interp_uniform(&self.path.bh, dt, t),
        )
    }

    /// Largest relative reaction rate `max_i sup(R_i) / sup(v_i)` at `t`.
    fn reaction_rate(&self, s: &State, t: f64) -> f64 {
        let (w, bh) = self.noise(t);
        let f = self.reaction.factors(w, bh);
        let mut rate: f64 = 0.0;
        for i in 0..2 {
            let j = 1 - i;
            let r = f[i] * pow1p(sup(&s.v[j]), self.reaction.beta[i]);
            let base = sup(&s.v[i]).max(1e-300);
            rate = rate.max(r / base);
        }
        rate
    }

    /// One IMEX Euler step of size `dt` from `t`, in place.
    fn step(&mut self, s: &mut State, t: f64, dt: f64) -> Result<()> {
        let (w, bh) = self.noise(t);
        let f = self.reaction.factors(w, bh);
        let inv_dx2 = 1.0 / (self.mesh.dx() * self.mesh.dx());
        for i in 0..2 {
            let j = 1 - i;
            let beta = self.reaction.beta[i];
            for m in 0..s.v[i].len() {
                self.rhs[i][m] = s.v[i][m] + dt * f[i] * pow1p(s.v[j][m].max(0.0), beta);
            }
        }
        for i in 0..2 {
            let diag = 1.0 + dt * (2.0 * inv_dx2 - self.lin[i]);
            let off = -dt * inv_dx2;
            solve_tridiagonal_const(diag, off, &mut self.rhs[i], &mut self.scratch);
            std::mem::swap(&mut s.v[i], &mut self.rhs[i]);
        }
        for i in 0..2 {
            if let Some(&min) = s.v[i].iter().min_by(|a, b| a.total_cmp(b)) {
                if min < -POSITIVITY_TOL || !min.is_finite() {
                    return Err(Error::NonPositivity { t: t + dt, value: min });
                }
            }
        }
        Ok(())
    }
}

fn interior_initial(params: &SystemParams, eig: &EigenPair, mesh: &SpatialMesh) -> State {
    let n = mesh.n_interior();
    let mut v1 = Vec::with_capacity(n);
    let mut v2 = Vec::with_capacity(n);
    for m in 0..n {
        let (a, b) = params.initial.eval(eig, mesh.x(m));
        v1.push(a);
        v2.push(b);
    }
    State { v: [v1, v2] }
}

fn with_boundary(v: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(v.len() + 2);
    out.push(0.0);
    out.extend_from_slice(v);
    out.push(0.0);
    out
}

/// Integrates the random PDE system along `path`.
pub fn solve_random_pde(
    params: &SystemParams,
    consts: &DerivedConstants,
    path: &SamplePath,
    mesh: &SpatialMesh,
    controls: &SolverControls,
) -> Result<PdeTrajectory> {
    if (mesh.domain_length() - params.domain_length).abs() > 1e-12 * params.domain_length {
        return Err(Error::InvalidParams(
            "mesh length differs from the domain length".into(),
        ));
    }
    let grid = path.grid;
    let horizon = controls.horizon.unwrap_or(grid.t_max());
    if !(horizon > 0.0) || horizon > grid.t_max() * (1.0 + 1e-12) {
        return Err(Error::Domain(format!(
            "solver horizon {horizon} must lie in (0, {}]",
            grid.t_max()
        )));
    }
    let eig = consts.eig;
    let mut state = interior_initial(params, &eig, mesh);
    let theta = controls.theta_factor * (state.sup() + 1.0);
    let n = mesh.n_interior();
    let lin = [
        params.gamma1 - 0.5 * params.kij(1, 1).powi(2),
        params.gamma2 - 0.5 * params.kij(2, 1).powi(2),
    ];
    // backward Euler keeps an M-matrix (hence positivity) while dt·c < 1
    let lin_cap = lin.iter().copied().fold(0.0, f64::max);
    let dt_lin = if lin_cap > 0.0 { 0.5 / lin_cap } else { f64::INFINITY };
    let dt_max = controls.max_substep.unwrap_or(grid.dt()).min(grid.dt()).min(dt_lin);
    let beta_min = params.beta2.min(params.beta1);
    let mut stepper = Stepper {
        mesh: *mesh,
        lin,
        reaction: Reaction::new(params, controls.disable_nonlinearity),
        path,
        rhs: [vec![0.0; n], vec![0.0; n]],
        scratch: vec![0.0; n],
    };

    let mut traj = PdeTrajectory {
        times: Vec::new(),
        sup_v1: Vec::new(),
        sup_v2: Vec::new(),
        h1: Vec::new(),
        h2: Vec::new(),
        snapshots: Vec::new(),
        blowup: Blowup::NoneBeforeHorizon,
        theta,
        mesh: *mesh,
        substeps: 0,
    };
    let record = |traj: &mut PdeTrajectory, s: &State, t: f64| {
        traj.times.push(t);
        traj.sup_v1.push(sup(&s.v[0]));
        traj.sup_v2.push(sup(&s.v[1]));
        traj.h1.push(project_on_eigenfunction(&s.v[0], mesh, &eig));
        traj.h2.push(project_on_eigenfunction(&s.v[1], mesh, &eig));
        if controls.keep_snapshots {
            traj.snapshots.push(Snapshot {
                t,
                v1: with_boundary(&s.v[0]),
                v2: with_boundary(&s.v[1]),
            });
        }
    };
    record(&mut traj, &state, 0.0);

    let every = controls.record_every.max(1);
    let mut next_index = every;
    let stamp_time = |idx: usize| grid.t(idx.min(grid.n_steps())).min(horizon);
    let mut t = 0.0;
    let mut saved = State {
        v: [vec![0.0; n], vec![0.0; n]],
    };
    while t < horizon {
        let target = stamp_time(next_index);
        let rate = stepper.reaction_rate(&state, t);
        let mut dt = dt_max.min(target - t);
        if rate > 0.0 {
            dt = dt.min(controls.growth_tol / rate);
        }
        if dt < controls.min_substep {
            return Err(Error::StepCollapse { t, dt });
        }
        let sup_old = state.sup();
        saved.v[0].copy_from_slice(&state.v[0]);
        saved.v[1].copy_from_slice(&state.v[1]);
        stepper.step(&mut state, t, dt)?;
        traj.substeps += 1;
        let sup_new = state.sup();
        if sup_new >= theta {
            // repeat the interval as two half steps and interpolate the
            // hit time in sup^{-β}, which is near linear close to blow-up
            let mut half = State {
                v: [saved.v[0].clone(), saved.v[1].clone()],
            };
            stepper.step(&mut half, t, 0.5 * dt)?;
            let sup_mid = half.sup();
            let (t0, s0, s1, h) = if sup_mid >= theta {
                (t, sup_old, sup_mid, 0.5 * dt)
            } else {
                stepper.step(&mut half, t + 0.5 * dt, 0.5 * dt)?;
                (t + 0.5 * dt, sup_mid, half.sup().max(theta), 0.5 * dt)
            };
            let y = |s: f64| s.powf(-beta_min);
            let frac = ((y(s0) - y(theta)) / (y(s0) - y(s1))).clamp(0.0, 1.0);
            let t_blow = t0 + frac * h;
            record(&mut traj, &state, t + dt);
            traj.blowup = Blowup::DetectedAt { t_blow };
            return Ok(traj);
        }
        t += dt;
        if t >= target - 1e-12 * target.max(1.0) {
            t = target;
            record(&mut traj, &state, t);
            next_index += every;
        }
    }
    Ok(traj)
}

/// Trajectory of the projected subsolution ODE.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OdeTrajectory {
    pub times: Vec<f64>,
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
    pub blowup: Blowup,
    pub theta: f64,
}

/// RK4 integration of
/// `h₁' = (−λ+γ₁−k₁₁²/2)h₁ + e^{ρ₁W+ρ₂B^H} h₂^{1+β₁}`,
/// `h₂' = (−λ+γ₂−k₂₁²/2)h₂ + e^{ρ₁W+ρ₂B^H} h₁^{1+β₂}`,
/// stamped on the noise grid.
pub fn integrate_subsolution_ode(
    path: &SamplePath,
    params: &SystemParams,
    consts: &DerivedConstants,
    h0: (f64, f64),
    controls: &SolverControls,
) -> Result<OdeTrajectory> {
    let (r1, r2) = consts.require_rho("projected subsolution ODE")?;
    let grid = path.grid;
    let horizon = controls.horizon.unwrap_or(grid.t_max()).min(grid.t_max());
    let lam = consts.eig.lambda;
    let lin = [
        -lam + params.gamma1 - 0.5 * params.kij(1, 1).powi(2),
        -lam + params.gamma2 - 0.5 * params.kij(2, 1).powi(2),
    ];
    let b = [params.beta1, params.beta2];
    let dtg = grid.dt();
    let forcing = |t: f64| (r1 * interp_uniform(&path.w, dtg, t) + r2 * interp_uniform(&path.bh, dtg, t)).exp();
    let rhs = |t: f64, h: [f64; 2]| -> [f64; 2] {
        let e = if controls.disable_nonlinearity { 0.0 } else { forcing(t) };
        [
            lin[0] * h[0] + e * pow1p(h[1].max(0.0), b[0]),
            lin[1] * h[1] + e * pow1p(h[0].max(0.0), b[1]),
        ]
    };
    let theta = controls.theta_factor * (h0.0.max(h0.1) + 1.0);
    let mut h = [h0.0, h0.1];
    let mut out = OdeTrajectory {
        times: vec![0.0],
        h1: vec![h[0]],
        h2: vec![h[1]],
        blowup: Blowup::NoneBeforeHorizon,
        theta,
    };
    let dt_max = controls.max_substep.unwrap_or(dtg).min(dtg);
    let beta_min = b[0].min(b[1]);
    let mut t = 0.0;
    let mut next = 1usize;
    while t < horizon {
        let target = grid.t(next.min(grid.n_steps())).min(horizon);
        let k1 = rhs(t, h);
        let rate = (0..2).map(|i| k1[i].abs() / h[i].abs().max(1e-300)).fold(0.0, f64::max);
        let mut dt = dt_max.min(target - t);
        if rate > 0.0 {
            dt = dt.min(controls.growth_tol / rate);
        }
        if dt < controls.min_substep {
            return Err(Error::StepCollapse { t, dt });
        }
        let add = |h: [f64; 2], k: [f64; 2], c: f64| [h[0] + c * k[0], h[1] + c * k[1]];
        let k2 = rhs(t + 0.5 * dt, add(h, k1, 0.5 * dt));
        let k3 = rhs(t + 0.5 * dt, add(h, k2, 0.5 * dt));
        let k4 = rhs(t + dt, add(h, k3, dt));
        let old = h;
        for i in 0..2 {
            h[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        let s_old = old[0].max(old[1]);
        let s_new = h[0].max(h[1]);
        if s_new >= theta || !s_new.is_finite() {
            let y = |s: f64| s.powf(-beta_min);
            let s_new = if s_new.is_finite() { s_new } else { f64::MAX };
            let frac = ((y(s_old) - y(theta)) / (y(s_old) - y(s_new))).clamp(0.0, 1.0);
            out.blowup = Blowup::DetectedAt { t_blow: t + frac * dt };
            return Ok(out);
        }
        t += dt;
        if t >= target - 1e-12 * target.max(1.0) {
            t = target;
            out.times.push(t);
            out.h1.push(h[0]);
            out.h2.push(h[1]);
            next += 1;
        }
    }
    Ok(out)
}

/// Result of comparing the solver against the global-existence envelope.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvelopeReport {
    /// `β_i (C_i‖ψ‖)^{β_i} ∫₀^{T} e^{A_i}` at the horizon.
    pub condition_integral: [f64; 2],
    /// Both integrals stay below 1 on the truncated horizon.
    pub satisfied_at_horizon: bool,
    /// Largest `v_i / envelope_i` over the checked points.
    pub max_ratio: f64,
    pub violations: usize,
    pub checked_points: usize,
}

/// Envelope `C_iψ(x) / [1 − β_i(C_i‖ψ‖)^{β_i} ∫₀ᵗ e^{A_i}]^{1/β_i}` at stamp
/// times, for eigen-multiple data with balanced drifts.
pub fn check_global_envelope(
    trajectory: &PdeTrajectory,
    params: &SystemParams,
    consts: &DerivedConstants,
    path: &SamplePath,
    rel_tol: f64,
) -> Result<EnvelopeReport> {
    let (c1, c2) = params
        .initial
        .eigen_multiples()
        .ok_or_else(|| Error::Inapplicable("global envelope", "requires eigen-multiple initial data".into()))?;
    if !consts.drift_balanced {
        return Err(Error::Inapplicable(
            "global envelope",
            "requires γ_i = λ + k_{i1}²/2".into(),
        ));
    }
    let eig = consts.eig;
    let (ea, eb) = general_exponents(params);
    let cum = [
        cumulative_exp_functional(path, &ExpFunctionalSpec::single(ea.rho_w, ea.rho_bh, 0.0))?.values,
        cumulative_exp_functional(path, &ExpFunctionalSpec::single(eb.rho_w, eb.rho_bh, 0.0))?.values,
    ];
    let c = [c1, c2];
    let beta = [params.beta1, params.beta2];
    let pref = [
        beta[0] * (c[0] * eig.psi_sup).powf(beta[0]),
        beta[1] * (c[1] * eig.psi_sup).powf(beta[1]),
    ];
    let dtg = path.grid.dt();
    let horizon = trajectory.times.last().copied().unwrap_or(0.0);
    let condition_integral = [
        pref[0] * interp_uniform(&cum[0], dtg, horizon),
        pref[1] * interp_uniform(&cum[1], dtg, horizon),
    ];
    let satisfied_at_horizon = condition_integral.iter().all(|&v| v < 1.0);
    let mesh = trajectory.mesh;
    let mut max_ratio: f64 = 0.0;
    let mut violations = 0;
    let mut checked = 0;
    for snap in &trajectory.snapshots {
        for i in 0..2 {
            let denom = 1.0 - pref[i] * interp_uniform(&cum[i], dtg, snap.t);
            let field = if i == 0 { &snap.v1 } else { &snap.v2 };
            for m in 0..mesh.n_interior() {
                let v = field[m + 1];
                checked += 1;
                if denom <= 0.0 {
                    continue;
                }
                let env = c[i] * eig.psi(mesh.x(m)) / denom.powf(1.0 / beta[i]);
                let ratio = v / env;
                max_ratio = max_ratio.max(ratio);
                if ratio > 1.0 + rel_tol {
                    violations += 1;
                }
            }
        }
    }
    Ok(EnvelopeReport {
        condition_integral,
        satisfied_at_horizon,
        max_ratio,
        violations,
        checked_points: checked,
    })
}

/// Sufficient global-existence condition through heat-kernel bounds with
/// constant `c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SharpBound {
    /// `β_i (C₂(1+c)‖ψ‖²)^{β_i}`.
    pub value: [f64; 2],
    /// `1 / value`: allowed size of `∫₀^∞ e^{A_i}`.
    pub budget: [f64; 2],
}

pub fn sharp_bound_threshold(params: &SystemParams, consts: &DerivedConstants, c: f64) -> Result<SharpBound> {
    if !(c >= 0.0) {
        return Err(Error::Domain(format!(
            "heat-kernel constant must be nonnegative, got {c}"
        )));
    }
    let (_, c2) = params
        .initial
        .eigen_multiples()
        .ok_or_else(|| Error::Inapplicable("sharp global bound", "requires eigen-multiple initial data".into()))?;
    let base = c2 * (1.0 + c) * consts.eig.psi_sup.powi(2);
    let value = [
        params.beta1 * base.powf(params.beta1),
        params.beta2 * base.powf(params.beta2),
    ];
    Ok(SharpBound {
        value,
        budget: [1.0 / value[0], 1.0 / value[1]],
    })
}
