//! Exponential functionals `∫₀ᵗ exp(ρ_W W(s) + ρ_B B^H(s) + drift·s) ds`
//! along a sampled path, and their first threshold crossings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{SamplePath, TimeGrid};
use crate::params::{DerivedConstants, SystemParams};

/// Default cap on the exponent before it is clamped.
pub const EXPONENT_CAP: f64 = 700.0;

/// One exponent `ρ_W W(s) + ρ_B B^H(s) + drift·s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exponent {
    pub rho_w: f64,
    pub rho_bh: f64,
    pub drift: f64,
}

impl Exponent {
    pub fn new(rho_w: f64, rho_bh: f64, drift: f64) -> Self {
        Self { rho_w, rho_bh, drift }
    }

    #[inline]
    pub fn eval(&self, w: f64, bh: f64, t: f64) -> f64 {
        self.rho_w * w + self.rho_bh * bh + self.drift * t
    }
}

/// How a second exponent combines with the first, pointwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combine {
    Single,
    MinOfTwo(Exponent),
    MaxOfTwo(Exponent),
}

/// Integrand specification of an exponential functional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpFunctionalSpec {
    pub rho_w: f64,
    pub rho_bh: f64,
    pub drift: f64,
    pub combine: Combine,
}

impl ExpFunctionalSpec {
    pub fn single(rho_w: f64, rho_bh: f64, drift: f64) -> Self {
        Self {
            rho_w,
            rho_bh,
            drift,
            combine: Combine::Single,
        }
    }

    pub fn min_of(a: Exponent, b: Exponent) -> Self {
        Self {
            rho_w: a.rho_w,
            rho_bh: a.rho_bh,
            drift: a.drift,
            combine: Combine::MinOfTwo(b),
        }
    }

    pub fn max_of(a: Exponent, b: Exponent) -> Self {
        Self {
            rho_w: a.rho_w,
            rho_bh: a.rho_bh,
            drift: a.drift,
            combine: Combine::MaxOfTwo(b),
        }
    }

    pub fn primary(&self) -> Exponent {
        Exponent::new(self.rho_w, self.rho_bh, self.drift)
    }

    pub fn validate(&self) -> Result<()> {
        let second = match self.combine {
            Combine::Single => None,
            Combine::MinOfTwo(e) | Combine::MaxOfTwo(e) => Some(e),
        };
        let all = [Some(self.primary()), second];
        for e in all.iter().flatten() {
            if !(e.rho_w.is_finite() && e.rho_bh.is_finite() && e.drift.is_finite()) {
                return Err(Error::Domain(format!("non-finite functional coefficients {e:?}")));
            }
        }
        Ok(())
    }

    /// Log of the combined integrand at one grid point.
    #[inline]
    pub fn log_integrand(&self, w: f64, bh: f64, t: f64) -> f64 {
        let x = self.primary().eval(w, bh, t);
        match self.combine {
            Combine::Single => x,
            Combine::MinOfTwo(e) => x.min(e.eval(w, bh, t)),
            Combine::MaxOfTwo(e) => x.max(e.eval(w, bh, t)),
        }
    }
}

/// Trapezoid cumulative integral on the path grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Cumulative {
    pub values: Vec<f64>,
    /// Set when some exponent exceeded the cap and was clamped.
    pub saturated: bool,
}

/// Cumulative trapezoid integral of the combined integrand; `values[0] = 0`.
pub fn cumulative_exp_functional(path: &SamplePath, spec: &ExpFunctionalSpec) -> Result<Cumulative> {
    cumulative_with_cap(path, spec, EXPONENT_CAP)
}

pub fn cumulative_with_cap(path: &SamplePath, spec: &ExpFunctionalSpec, cap: f64) -> Result<Cumulative> {
    spec.validate()?;
    let grid = path.grid;
    let n = grid.len();
    if path.w.len() != n || path.bh.len() != n {
        return Err(Error::GridMismatch {
            expected: n,
            got: path.w.len().min(path.bh.len()),
        });
    }
    let dt = grid.dt();
    let mut saturated = false;
    let mut integrand = |j: usize| {
        let x = spec.log_integrand(path.w[j], path.bh[j], grid.t(j));
        if x > cap {
            saturated = true;
            cap.exp()
        } else {
            x.exp()
        }
    };
    let mut values = Vec::with_capacity(n);
    values.push(0.0);
    let mut prev = integrand(0);
    let mut acc = 0.0;
    for j in 1..n {
        let cur = integrand(j);
        acc += 0.5 * dt * (prev + cur);
        values.push(acc);
        prev = cur;
    }
    Ok(Cumulative { values, saturated })
}

/// Outcome of a first-crossing search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CrossingKind {
    /// Crossed at `t_hat`, inside grid cell `[lower, upper]`.
    Crossed { t_hat: f64, lower: usize, upper: usize },
    /// No crossing up to the horizon.
    Censored { horizon: f64 },
}

/// A stopping-time estimate along one path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingEstimate {
    pub kind: CrossingKind,
    pub threshold: f64,
    /// Cumulative integral at the horizon.
    pub integral_at_horizon: f64,
    pub saturated: bool,
}

impl StoppingEstimate {
    /// Crossing time, `None` when censored.
    pub fn time(&self) -> Option<f64> {
        match self.kind {
            CrossingKind::Crossed { t_hat, .. } => Some(t_hat),
            CrossingKind::Censored { .. } => None,
        }
    }

    pub fn crossed(&self) -> bool {
        matches!(self.kind, CrossingKind::Crossed { .. })
    }

    /// Crossing time with censored paths mapped to `+∞`.
    pub fn time_or_inf(&self) -> f64 {
        self.time().unwrap_or(f64::INFINITY)
    }

    /// The earlier of two estimates (censored counts as `+∞`).
    pub fn earlier(self, other: StoppingEstimate) -> StoppingEstimate {
        if other.time_or_inf() < self.time_or_inf() {
            other
        } else {
            self
        }
    }
}

/// First index with `cumulative ≥ threshold`, with linear interpolation
/// inside the bracketing cell.
pub fn first_crossing(cumulative: &[f64], grid: &TimeGrid, threshold: f64) -> StoppingEstimate {
    let last = cumulative.last().copied().unwrap_or(0.0);
    let base = StoppingEstimate {
        kind: CrossingKind::Censored { horizon: grid.t_max() },
        threshold,
        integral_at_horizon: last,
        saturated: false,
    };
    if threshold <= 0.0 {
        return StoppingEstimate {
            kind: CrossingKind::Crossed {
                t_hat: 0.0,
                lower: 0,
                upper: 0,
            },
            ..base
        };
    }
    // nondecreasing, so binary search for the first value ≥ threshold
    let j = cumulative.partition_point(|&v| v < threshold);
    if j >= cumulative.len() {
        return base;
    }
    let lo = cumulative[j - 1];
    let hi = cumulative[j];
    let frac = if hi > lo { (threshold - lo) / (hi - lo) } else { 1.0 };
    let t0 = grid.t(j - 1);
    let t1 = grid.t(j);
    let t_hat = (t0 + frac * (t1 - t0)).clamp(t0, t1);
    StoppingEstimate {
        kind: CrossingKind::Crossed {
            t_hat,
            lower: j - 1,
            upper: j,
        },
        ..base
    }
}

/// Crossing of the functional `spec` against `threshold` along `path`.
pub fn stopping_time(path: &SamplePath, spec: &ExpFunctionalSpec, threshold: f64) -> Result<StoppingEstimate> {
    let cum = cumulative_exp_functional(path, spec)?;
    let mut est = first_crossing(&cum.values, &path.grid, threshold);
    est.saturated = cum.saturated;
    Ok(est)
}

fn require_admissible_hurst(path: &SamplePath) -> Result<()> {
    if path.hurst > 0.5 && path.hurst < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "stopping-time bounds require H in (1/2,1), got {}",
            path.hurst
        )))
    }
}

fn require_balanced(consts: &DerivedConstants, what: &'static str) -> Result<()> {
    if consts.drift_balanced {
        Ok(())
    } else {
        Err(Error::Inapplicable(what, "requires γ_i = λ + k_{i1}²/2".into()))
    }
}

/// Integrand of the lower bound `τ*`: `exp(ρ₁W + ρ₂B^H)`.
pub fn lower_star_spec(consts: &DerivedConstants) -> Result<ExpFunctionalSpec> {
    let (r1, r2) = consts.require_rho("lower bound τ*")?;
    Ok(ExpFunctionalSpec::single(r1, r2, 0.0))
}

/// Integrand of `τ₁*`: `exp(ρ₁W + ρ₂B^H − a s)`.
pub fn upper1_spec(consts: &DerivedConstants) -> Result<ExpFunctionalSpec> {
    let (r1, r2) = consts.require_rho("upper bound τ₁*")?;
    Ok(ExpFunctionalSpec::single(r1, r2, -consts.a))
}

/// Integrand of `τ₂*`: `exp(ρ₁W + ρ₂B^H − a₁ s)`.
pub fn upper2_spec(consts: &DerivedConstants) -> Result<ExpFunctionalSpec> {
    let (r1, r2) = consts.require_rho("upper bound τ₂*")?;
    Ok(ExpFunctionalSpec::single(r1, r2, -consts.a1))
}

/// The two general-case exponents (no coupling condition needed):
/// `A = ((1+β₁)k₂₁−k₁₁)W + ((1+β₁)k₂₂−k₁₂)B^H` and
/// `B = ((1+β₂)k₁₁−k₂₁)W + ((1+β₂)k₁₂−k₂₂)B^H`, both driftless.
pub fn general_exponents(params: &SystemParams) -> (Exponent, Exponent) {
    let k = |i, j| params.kij(i, j);
    let a = Exponent::new(
        (1.0 + params.beta1) * k(2, 1) - k(1, 1),
        (1.0 + params.beta1) * k(2, 2) - k(1, 2),
        0.0,
    );
    let b = Exponent::new(
        (1.0 + params.beta2) * k(1, 1) - k(2, 1),
        (1.0 + params.beta2) * k(1, 2) - k(2, 2),
        0.0,
    );
    (a, b)
}

/// `τ*`: single crossing of `∫exp(ρ₁W + ρ₂B^H)` against `θ_lower`.
pub fn tau_lower_star(path: &SamplePath, consts: &DerivedConstants) -> Result<StoppingEstimate> {
    require_admissible_hurst(path)?;
    require_balanced(consts, "lower bound τ*")?;
    let theta = consts
        .thresholds
        .theta_lower
        .ok_or_else(|| Error::Inapplicable("lower bound τ*", "requires eigen-multiple initial data".into()))?;
    stopping_time(path, &lower_star_spec(consts)?, theta)
}

/// `τ₁*` (equal exponents).
pub fn tau_upper_1(path: &SamplePath, consts: &DerivedConstants) -> Result<StoppingEstimate> {
    require_admissible_hurst(path)?;
    let theta = consts
        .thresholds
        .theta_u1
        .ok_or_else(|| Error::Inapplicable("upper bound τ₁*", "requires β₁ = β₂ and E(0) > 0".into()))?;
    stopping_time(path, &upper1_spec(consts)?, theta)
}

/// `τ₂*` (strict exponents, mass condition).
pub fn tau_upper_2(path: &SamplePath, consts: &DerivedConstants) -> Result<StoppingEstimate> {
    require_admissible_hurst(path)?;
    if consts.d1.is_none() {
        return Err(Error::Inapplicable("upper bound τ₂*", "requires β₁ > β₂".into()));
    }
    let theta = consts.thresholds.theta_u2.ok_or(Error::MassCondition)?;
    stopping_time(path, &upper2_spec(consts)?, theta)
}

fn general_lower_thresholds(consts: &DerivedConstants, what: &'static str) -> Result<(f64, f64)> {
    match (consts.thresholds.theta_lower_1, consts.thresholds.theta_lower_2) {
        (Some(a), Some(b)) => Ok((a, b)),
        _ => Err(Error::Inapplicable(what, "requires eigen-multiple initial data".into())),
    }
}

/// `τ**`: the earlier of the crossings of `∫e^A` against
/// `1/(β₁C₁^{β₁}‖ψ‖^{β₁})` and `∫e^B` against `1/(β₂C₂^{β₂}‖ψ‖^{β₂})`.
pub fn tau_double_star(
    path: &SamplePath,
    params: &SystemParams,
    consts: &DerivedConstants,
) -> Result<StoppingEstimate> {
    require_admissible_hurst(path)?;
    require_balanced(consts, "general lower bound τ**")?;
    let (t1, t2) = general_lower_thresholds(consts, "general lower bound τ**")?;
    let (a, b) = general_exponents(params);
    let ea = stopping_time(path, &ExpFunctionalSpec::single(a.rho_w, a.rho_bh, 0.0), t1)?;
    let eb = stopping_time(path, &ExpFunctionalSpec::single(b.rho_w, b.rho_bh, 0.0), t2)?;
    let mut est = ea.earlier(eb);
    est.saturated = ea.saturated || eb.saturated;
    Ok(est)
}

/// `τ′`: crossing of `∫max(e^A, e^B)` against the smaller threshold.
pub fn tau_prime(path: &SamplePath, params: &SystemParams, consts: &DerivedConstants) -> Result<StoppingEstimate> {
    require_admissible_hurst(path)?;
    require_balanced(consts, "corollary bound τ′")?;
    let (t1, t2) = general_lower_thresholds(consts, "corollary bound τ′")?;
    let (a, b) = general_exponents(params);
    stopping_time(path, &ExpFunctionalSpec::max_of(a, b), t1.min(t2))
}

/// Which exponent regime a general upper bound uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaCase {
    EqualBeta,
    StrictBeta,
}

/// Integrand of the general upper bounds: `min(e^A, e^B)·e^{drift·s}`.
pub fn upper_general_spec(params: &SystemParams, consts: &DerivedConstants, case: BetaCase) -> ExpFunctionalSpec {
    let (mut a, mut b) = general_exponents(params);
    let drift = match case {
        BetaCase::EqualBeta => -consts.a,
        BetaCase::StrictBeta => -consts.a1,
    };
    a.drift = drift;
    b.drift = drift;
    ExpFunctionalSpec::min_of(a, b)
}

/// `τ₁**` / `τ₂**`.
pub fn tau_upper_general(
    path: &SamplePath,
    params: &SystemParams,
    consts: &DerivedConstants,
    case: BetaCase,
) -> Result<StoppingEstimate> {
    require_admissible_hurst(path)?;
    let theta = match case {
        BetaCase::EqualBeta => consts
            .thresholds
            .theta_u1
            .ok_or_else(|| Error::Inapplicable("general upper bound τ₁**", "requires β₁ = β₂".into()))?,
        BetaCase::StrictBeta => {
            if consts.d1.is_none() {
                return Err(Error::Inapplicable(
                    "general upper bound τ₂**",
                    "requires β₁ > β₂".into(),
                ));
            }
            consts.thresholds.theta_u2.ok_or(Error::MassCondition)?
        }
    };
    stopping_time(path, &upper_general_spec(params, consts, case), theta)
}

/// The regime implied by the exponents.
pub fn beta_case(params: &SystemParams) -> BetaCase {
    if params.equal_betas() {
        BetaCase::EqualBeta
    } else {
        BetaCase::StrictBeta
    }
}
