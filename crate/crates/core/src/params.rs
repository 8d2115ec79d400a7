//! System parameters, the Dirichlet eigenpair and every derived constant
//! and stopping threshold.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{volterra_constant, NoiseCoupling};

/// Relative tolerance for the coupling consistency equalities.
pub const COUPLING_TOL: f64 = 1e-9;

/// Initial data `f_1, f_2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialData {
    /// `f_i = C_i ψ` with `0 < C_1 ≤ C_2`.
    EigenMultiple { c1: f64, c2: f64 },
    /// Node values on the uniform mesh `x_m = m·L/(len−1)`, boundary
    /// nodes included and equal to zero.
    Tabulated { f1: Vec<f64>, f2: Vec<f64> },
}

impl InitialData {
    pub fn validate(&self) -> Result<()> {
        match self {
            InitialData::EigenMultiple { c1, c2 } => {
                if !(*c1 > 0.0 && c1.is_finite() && c2.is_finite()) {
                    return Err(Error::InvalidParams(format!("C_1 must be positive, got {c1}")));
                }
                if c1 > c2 {
                    return Err(Error::InvalidParams(format!("requires C_1 ≤ C_2, got {c1} > {c2}")));
                }
                Ok(())
            }
            InitialData::Tabulated { f1, f2 } => {
                if f1.len() != f2.len() || f1.len() < 3 {
                    return Err(Error::InvalidParams(
                        "tabulated data need two arrays of equal length ≥ 3".into(),
                    ));
                }
                for f in [f1, f2] {
                    if f.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                        return Err(Error::InvalidParams(
                            "tabulated data must be finite and nonnegative".into(),
                        ));
                    }
                    if f[0] != 0.0 || f[f.len() - 1] != 0.0 {
                        return Err(Error::InvalidParams(
                            "tabulated data must vanish at the boundary".into(),
                        ));
                    }
                }
                Ok(())
            }
        }
    }

    /// `(C_1, C_2)` for eigen-multiple data.
    pub fn eigen_multiples(&self) -> Option<(f64, f64)> {
        match self {
            InitialData::EigenMultiple { c1, c2 } => Some((*c1, *c2)),
            InitialData::Tabulated { .. } => None,
        }
    }

    /// Values of `(f_1, f_2)` at `x`.
    pub fn eval(&self, eig: &EigenPair, x: f64) -> (f64, f64) {
        match self {
            InitialData::EigenMultiple { c1, c2 } => {
                let p = eig.psi(x);
                (c1 * p, c2 * p)
            }
            InitialData::Tabulated { f1, f2 } => {
                let dx = eig.domain_length / (f1.len() - 1) as f64;
                (
                    crate::numerics::interp_uniform(f1, dx, x),
                    crate::numerics::interp_uniform(f2, dx, x),
                )
            }
        }
    }
}

/// Full problem description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemParams {
    pub beta1: f64,
    pub beta2: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    /// `k[i][j]` is the coefficient of noise `j` (0 = `W`, 1 = `B^H`) in
    /// component `i`.
    pub k: [[f64; 2]; 2],
    pub hurst: f64,
    pub coupling: NoiseCoupling,
    pub domain_length: f64,
    pub initial: InitialData,
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParams(m));
        if !(self.beta2 > 0.0) || !(self.beta1 >= self.beta2) || !self.beta1.is_finite() {
            return bad(format!(
                "requires β₁ ≥ β₂ > 0, got β₁={}, β₂={}",
                self.beta1, self.beta2
            ));
        }
        if !(self.gamma1 > 0.0 && self.gamma2 > 0.0) || !self.gamma1.is_finite() || !self.gamma2.is_finite() {
            return bad(format!(
                "drifts must be positive, got γ₁={}, γ₂={}",
                self.gamma1, self.gamma2
            ));
        }
        if self.k.iter().flatten().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return bad(format!(
                "noise coefficients must be finite and nonnegative, got {:?}",
                self.k
            ));
        }
        if !(self.hurst > 0.5 && self.hurst < 1.0) {
            return bad(format!("Hurst index must lie in (1/2,1), got {}", self.hurst));
        }
        if !(self.domain_length > 0.0) || !self.domain_length.is_finite() {
            return bad(format!("domain length must be positive, got {}", self.domain_length));
        }
        self.initial.validate()
    }

    /// `k_{ij}` with 1-based indices as in the equations.
    pub fn kij(&self, i: usize, j: usize) -> f64 {
        self.k[i - 1][j - 1]
    }

    pub fn equal_betas(&self) -> bool {
        (self.beta1 - self.beta2).abs() <= 1e-12 * self.beta1.abs().max(1.0)
    }

    /// `γ_i = λ + k_{i1}²/2` for both components (relative tolerance 1e-9).
    pub fn drift_balanced(&self, eig: &EigenPair) -> bool {
        [(self.gamma1, self.kij(1, 1)), (self.gamma2, self.kij(2, 1))]
            .iter()
            .all(|&(g, k)| {
                let target = eig.lambda + 0.5 * k * k;
                (g - target).abs() <= COUPLING_TOL * target.abs().max(1.0)
            })
    }
}

/// First Dirichlet eigenpair of `−Δ` on `(0, L)`, `ψ` normalized to unit
/// integral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenPair {
    pub domain_length: f64,
    pub lambda: f64,
    pub psi_sup: f64,
}

impl EigenPair {
    pub fn psi(&self, x: f64) -> f64 {
        if x <= 0.0 || x >= self.domain_length {
            return 0.0;
        }
        self.psi_sup * (PI * x / self.domain_length).sin()
    }

    /// `∫ ψ² = π² / (8L)`.
    pub fn psi_sq_integral(&self) -> f64 {
        PI * PI / (8.0 * self.domain_length)
    }
}

pub fn eigenpair(domain_length: f64) -> Result<EigenPair> {
    if !(domain_length > 0.0) || !domain_length.is_finite() {
        return Err(Error::Domain(format!(
            "domain length must be positive, got {domain_length}"
        )));
    }
    Ok(EigenPair {
        domain_length,
        lambda: (PI / domain_length).powi(2),
        psi_sup: PI / (2.0 * domain_length),
    })
}

/// `(ρ₁, ρ₂)` after checking both coupling equalities
/// `(1+β₁)k₂ⱼ − k₁ⱼ = (1+β₂)k₁ⱼ − k₂ⱼ`, `j = 1, 2`.
pub fn coupled_exponents(beta1: f64, beta2: f64, k: &[[f64; 2]; 2], tol: f64) -> Result<(f64, f64)> {
    let mut rho = [0.0; 2];
    for (j, which) in [(0, "noise W"), (1, "noise B^H")] {
        let lhs = (1.0 + beta1) * k[1][j] - k[0][j];
        let rhs = (1.0 + beta2) * k[0][j] - k[1][j];
        let scale = k[0][j].abs().max(k[1][j].abs()).max(1.0);
        if (lhs - rhs).abs() > tol * scale {
            return Err(Error::CouplingInconsistent { which, lhs, rhs });
        }
        rho[j] = lhs;
    }
    Ok((rho[0], rho[1]))
}

pub fn derive_coupled_exponents(params: &SystemParams, tol: f64) -> Result<(f64, f64)> {
    coupled_exponents(params.beta1, params.beta2, &params.k, tol)
}

pub fn compute_d1(beta1: f64, beta2: f64) -> Result<f64> {
    if !(beta1 > beta2 && beta2 > 0.0) {
        return Err(Error::Domain(format!(
            "D₁ requires β₁ > β₂ > 0, got ({beta1}, {beta2})"
        )));
    }
    let d = beta1 - beta2;
    Ok((d / (1.0 + beta1)) * ((1.0 + beta1) / (1.0 + beta2)).powf((1.0 + beta2) / d))
}

/// Largest admissible `ε₀ = min{1, (h₂(0) / D₁^{1/(1+β₂)})^{β₁−β₂}}`.
pub fn compute_epsilon0(h2_0: f64, d1: f64, beta1: f64, beta2: f64) -> Result<f64> {
    if !(h2_0 > 0.0) {
        return Err(Error::Domain(format!("ε₀ requires h₂(0) > 0, got {h2_0}")));
    }
    let v = (h2_0 / d1.powf(1.0 / (1.0 + beta2))).powf(beta1 - beta2);
    Ok(v.min(1.0))
}

/// `2^{−(1+β₂)} ε₀ E0^{1+β₂} ≥ ε₀^{(1+β₁)/(β₁−β₂)} D₁`.
pub fn check_mass_condition(eps0: f64, e0: f64, d1: f64, beta1: f64, beta2: f64) -> bool {
    if !(e0 > 0.0) {
        return false;
    }
    let lhs = 2f64.powf(-(1.0 + beta2)) * eps0 * e0.powf(1.0 + beta2);
    let rhs = eps0.powf((1.0 + beta1) / (beta1 - beta2)) * d1;
    lhs >= rhs
}

/// Projections `(h₁(0), h₂(0)) = (∫f₁ψ, ∫f₂ψ)`.
pub fn initial_projections(initial: &InitialData, eig: &EigenPair) -> (f64, f64) {
    match initial {
        InitialData::EigenMultiple { c1, c2 } => {
            let q = eig.psi_sq_integral();
            (c1 * q, c2 * q)
        }
        InitialData::Tabulated { f1, f2 } => {
            let n = f1.len() - 1;
            let dx = eig.domain_length / n as f64;
            let mut s1 = crate::numerics::CompensatedSum::new();
            let mut s2 = crate::numerics::CompensatedSum::new();
            // trapezoid; boundary nodes vanish
            for m in 1..n {
                let p = eig.psi(m as f64 * dx);
                s1.add(f1[m] * p);
                s2.add(f2[m] * p);
            }
            (s1.value() * dx, s2.value() * dx)
        }
    }
}

/// `E(0) = ∫(f₁+f₂)ψ`.
pub fn compute_e0(initial: &InitialData, eig: &EigenPair) -> f64 {
    let (a, b) = initial_projections(initial, eig);
    a + b
}

/// `N = [β₂ E0^{β₂} (ε₀/2^{1+β₂} − ε₀^{(1+β₁)/(β₁−β₂)} D₁ / E0^{1+β₂})]^{−1}`.
pub fn compute_n(beta1: f64, beta2: f64, e0: f64, eps0: f64, d1: f64) -> Result<f64> {
    if !check_mass_condition(eps0, e0, d1, beta1, beta2) {
        return Err(Error::MassCondition);
    }
    let bracket =
        eps0 / 2f64.powf(1.0 + beta2) - eps0.powf((1.0 + beta1) / (beta1 - beta2)) * d1 / e0.powf(1.0 + beta2);
    if !(bracket > 0.0) {
        return Err(Error::MassCondition);
    }
    Ok(1.0 / (beta2 * e0.powf(beta2) * bracket))
}

/// `1 / (β C^β ‖ψ‖∞^β)`.
pub fn lower_threshold(beta: f64, c: f64, psi_sup: f64) -> f64 {
    1.0 / (beta * (c * psi_sup).powf(beta))
}

/// `2^β β^{−1} E0^{−β}`.
pub fn upper1_threshold(beta: f64, e0: f64) -> f64 {
    2f64.powf(beta) / (beta * e0.powf(beta))
}

/// Stopping thresholds; `None` where the defining result does not apply.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Thresholds {
    /// `1/(β₁C₁^{β₁}‖ψ‖^{β₁})`, eigen-multiple data only.
    pub theta_lower_1: Option<f64>,
    /// `1/(β₂C₂^{β₂}‖ψ‖^{β₂})`, eigen-multiple data only.
    pub theta_lower_2: Option<f64>,
    /// `min(theta_lower_1, theta_lower_2)`.
    pub theta_lower: Option<f64>,
    /// `β₁ = β₂` only.
    pub theta_u1: Option<f64>,
    /// `N`, `β₁ > β₂` and mass condition only.
    pub theta_u2: Option<f64>,
}

pub fn stopping_thresholds(params: &SystemParams, consts: &DerivedConstants) -> Thresholds {
    let sup = consts.eig.psi_sup;
    let (tl1, tl2) = match params.initial.eigen_multiples() {
        Some((c1, c2)) => (
            Some(lower_threshold(params.beta1, c1, sup)),
            Some(lower_threshold(params.beta2, c2, sup)),
        ),
        None => (None, None),
    };
    let theta_lower = match (tl1, tl2) {
        (Some(a), Some(b)) => Some(a.min(b)),
        _ => None,
    };
    let theta_u1 = (params.equal_betas() && consts.e0 > 0.0).then(|| upper1_threshold(params.beta1, consts.e0));
    let theta_u2 = match (consts.d1, consts.eps0) {
        (Some(d1), Some(eps0)) => compute_n(params.beta1, params.beta2, consts.e0, eps0, d1).ok(),
        _ => None,
    };
    Thresholds {
        theta_lower_1: tl1,
        theta_lower_2: tl2,
        theta_lower,
        theta_u1,
        theta_u2,
    }
}

/// Everything computed from a [`SystemParams`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DerivedConstants {
    pub eig: EigenPair,
    /// `(ρ₁, ρ₂)` when the coupling condition holds.
    pub rho: Option<(f64, f64)>,
    /// Why the coupling condition failed, when it did.
    pub coupling_diagnostic: Option<String>,
    /// `γ_i = λ + k_{i1}²/2`.
    pub drift_balanced: bool,
    pub gamma_min: f64,
    pub k_sq: f64,
    /// `β₁(λ − γ + k²)`.
    pub a: f64,
    /// `β₂(λ − γ + k²)`.
    pub a1: f64,
    pub d1: Option<f64>,
    pub eps0: Option<f64>,
    pub mass_condition: Option<bool>,
    pub h1_0: f64,
    pub h2_0: f64,
    pub e0: f64,
    pub thresholds: Thresholds,
    /// Normalizing constant of the Volterra kernel, recorded as metadata.
    pub volterra_c_h: f64,
}

impl DerivedConstants {
    pub fn compute(params: &SystemParams) -> Result<Self> {
        params.validate()?;
        let eig = eigenpair(params.domain_length)?;
        let (rho, coupling_diagnostic) = match derive_coupled_exponents(params, COUPLING_TOL) {
            Ok(r) => (Some(r), None),
            Err(e) => (None, Some(e.to_string())),
        };
        let gamma_min = params.gamma1.min(params.gamma2);
        let k11 = params.kij(1, 1);
        let k21 = params.kij(2, 1);
        let k_sq = (0.5 * k11 * k11).max(0.5 * k21 * k21);
        let base = eig.lambda - gamma_min + k_sq;
        let (h1_0, h2_0) = initial_projections(&params.initial, &eig);
        let e0 = h1_0 + h2_0;
        let (d1, eps0, mass_condition) = if params.equal_betas() {
            (None, None, None)
        } else {
            let d1 = compute_d1(params.beta1, params.beta2)?;
            if h2_0 > 0.0 {
                let eps0 = compute_epsilon0(h2_0, d1, params.beta1, params.beta2)?;
                let ok = check_mass_condition(eps0, e0, d1, params.beta1, params.beta2);
                (Some(d1), Some(eps0), Some(ok))
            } else {
                (Some(d1), None, Some(false))
            }
        };
        let mut consts = DerivedConstants {
            eig,
            rho,
            coupling_diagnostic,
            drift_balanced: params.drift_balanced(&eig),
            gamma_min,
            k_sq,
            a: params.beta1 * base,
            a1: params.beta2 * base,
            d1,
            eps0,
            mass_condition,
            h1_0,
            h2_0,
            e0,
            thresholds: Thresholds {
                theta_lower_1: None,
                theta_lower_2: None,
                theta_lower: None,
                theta_u1: None,
                theta_u2: None,
            },
            volterra_c_h: volterra_constant(params.hurst)?,
        };
        consts.thresholds = stopping_thresholds(params, &consts);
        Ok(consts)
    }

    /// `(ρ₁, ρ₂)` or an `Inapplicable` error naming the caller.
    pub fn require_rho(&self, what: &'static str) -> Result<(f64, f64)> {
        self.rho.ok_or_else(|| {
            Error::Inapplicable(
                what,
                self.coupling_diagnostic
                    .clone()
                    .unwrap_or_else(|| "coupling condition fails".into()),
            )
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn base_params() -> SystemParams {
        SystemParams {
            beta1: 1.0,
            beta2: 1.0,
            gamma1: 1.0,
            gamma2: 1.0,
            k: [[0.0; 2]; 2],
            hurst: 0.7,
            coupling: NoiseCoupling::Independent,
            domain_length: PI,
            initial: InitialData::EigenMultiple { c1: 1.0, c2: 2.0 },
        }
    }

    #[test]
    fn eigenpair_examples() {
        let e = eigenpair(PI).unwrap();
        assert!((e.lambda - 1.0).abs() < 1e-15);
        assert!((e.psi_sup - 0.5).abs() < 1e-15);
        assert!((e.psi(PI / 2.0) - 0.5).abs() < 1e-15);
        assert!((e.psi(1.0) - 1f64.sin() / 2.0).abs() < 1e-15);
        let e = eigenpair(1.0).unwrap();
        assert!((e.lambda - PI * PI).abs() < 1e-12);
        assert!((e.psi_sup - PI / 2.0).abs() < 1e-15);
        let e = eigenpair(2.0 * PI).unwrap();
        assert!((e.lambda - 0.25).abs() < 1e-15);
        assert!((e.psi_sup - 0.25).abs() < 1e-15);
        assert!(eigenpair(0.0).is_err());
    }

    #[test]
    fn psi_has_unit_integral() {
        for l in [1.0, PI, 7.5] {
            let e = eigenpair(l).unwrap();
            let v = crate::numerics::integrate(|x| e.psi(x), 0.0, l, 1e-14, 1e-13).unwrap();
            assert!((v - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn psi_solves_eigenproblem() {
        let l = 2.0;
        let e = eigenpair(l).unwrap();
        let dx = l / 101.0;
        let h = 1e-3;
        for m in 1..=100 {
            let x = m as f64 * dx;
            let lap = (e.psi(x + h) - 2.0 * e.psi(x) + e.psi(x - h)) / (h * h);
            let res = (-lap - e.lambda * e.psi(x)).abs();
            assert!(res <= 1e-6 * e.psi_sup / (dx * dx), "x={x} residual {res}");
        }
    }

    #[test]
    fn coupled_exponent_examples() {
        let k = [[0.1, 0.2], [0.1, 0.2]];
        let (r1, r2) = coupled_exponents(1.0, 1.0, &k, COUPLING_TOL).unwrap();
        assert!((r1 - 0.1).abs() < 1e-15 && (r2 - 0.2).abs() < 1e-15);
        let k = [[0.4, 0.4], [0.3, 0.3]];
        let (r1, r2) = coupled_exponents(2.0, 1.0, &k, COUPLING_TOL).unwrap();
        assert!((r1 - 0.5).abs() < 1e-14 && (r2 - 0.5).abs() < 1e-14);
        let k = [[0.1, 0.0], [0.1, 0.0]];
        match coupled_exponents(2.0, 1.0, &k, COUPLING_TOL) {
            Err(Error::CouplingInconsistent { lhs, rhs, .. }) => {
                assert!((lhs - 0.2).abs() < 1e-15 && (rhs - 0.1).abs() < 1e-15)
            }
            other => panic!("expected inconsistency, got {other:?}"),
        }
    }

    #[test]
    fn d1_examples() {
        assert!((compute_d1(2.0, 1.0).unwrap() - 0.75).abs() < 1e-15);
        assert!((compute_d1(3.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(compute_d1(1.0, 1.0).is_err());
    }

    #[test]
    fn epsilon0_examples() {
        assert_eq!(compute_epsilon0(1e9, 0.75, 2.0, 1.0).unwrap(), 1.0);
        let e = compute_epsilon0(0.75f64.sqrt(), 0.75, 2.0, 1.0).unwrap();
        assert!((e - 1.0).abs() < 1e-15);
        let e = compute_epsilon0(0.5, 0.75, 2.0, 1.0).unwrap();
        assert!((e - 0.5 / 0.75f64.sqrt()).abs() < 1e-15);
        assert!((e - 0.57735).abs() < 1e-5);
        assert!(compute_epsilon0(0.0, 0.75, 2.0, 1.0).is_err());
    }

    #[test]
    fn mass_condition_examples() {
        assert!(check_mass_condition(1.0, 100.0, 0.75, 2.0, 1.0));
        assert!(!check_mass_condition(1.0, 0.0, 0.75, 2.0, 1.0));
        // sufficient condition: E0 > 2 ε₀^{1/(β₁−β₂)} D₁^{1/(1+β₂)}
        let (b1, b2) = (2.5, 0.7);
        let d1 = compute_d1(b1, b2).unwrap();
        let eps0 = compute_epsilon0(0.3, d1, b1, b2).unwrap();
        let floor = 2.0 * eps0.powf(1.0 / (b1 - b2)) * d1.powf(1.0 / (1.0 + b2));
        assert!(check_mass_condition(eps0, floor * 1.0001, d1, b1, b2));
    }

    #[test]
    fn e0_examples() {
        let e = eigenpair(PI).unwrap();
        let v = compute_e0(&InitialData::EigenMultiple { c1: 1.0, c2: 2.0 }, &e);
        assert!((v - 3.0 * PI / 8.0).abs() < 1e-15);
        assert!((v - 1.17810).abs() < 1e-5);
        let n = 10_000;
        let zero = InitialData::Tabulated {
            f1: vec![0.0; n],
            f2: vec![0.0; n],
        };
        assert_eq!(compute_e0(&zero, &e), 0.0);
        let dx = PI / (n - 1) as f64;
        let f1: Vec<f64> = (0..n).map(|m| e.psi(m as f64 * dx)).collect();
        let f2: Vec<f64> = f1.iter().map(|v| 2.0 * v).collect();
        let tab = InitialData::Tabulated { f1, f2 };
        tab.validate().unwrap();
        assert!((compute_e0(&tab, &e) - 3.0 * PI / 8.0).abs() < 1e-6);
    }

    #[test]
    fn threshold_examples() {
        let p = base_params();
        let c = DerivedConstants::compute(&p).unwrap();
        let t = c.thresholds;
        assert!((t.theta_lower.unwrap() - 1.0).abs() < 1e-15);
        assert!((t.theta_lower_1.unwrap() - 2.0).abs() < 1e-15);
        assert!((t.theta_u1.unwrap() - 16.0 / (3.0 * PI)).abs() < 1e-14);
        assert!((t.theta_u1.unwrap() - 1.69765).abs() < 1e-5);
        assert_eq!(t.theta_u2, None);
    }

    #[test]
    fn n_is_reciprocal_of_bracket() {
        let (b1, b2) = (2.0, 1.0);
        let d1 = compute_d1(b1, b2).unwrap();
        let e0: f64 = 3.0;
        let eps0: f64 = 0.5;
        let bracket = eps0 / 4.0 - eps0.powf(3.0) * d1 / (e0 * e0);
        let n = compute_n(b1, b2, e0, eps0, d1).unwrap();
        assert!((n - 1.0 / (b2 * e0 * bracket)).abs() < 1e-13 * n);
        // a bracket of ½·β₂E0 divided by β₂E0^{β₂} gives N = 2/(β₂E0)
        assert!((1.0 / (b2 * e0.powf(b2) * (0.5 * b2 * e0 / (b2 * e0.powf(b2)))) - 2.0 / (b2 * e0)).abs() < 1e-15);
        assert_eq!(compute_n(b1, b2, 1e-3, 1.0, d1), Err(Error::MassCondition));
    }

    #[test]
    fn degenerate_zero_noise_constants() {
        let mut p = base_params();
        p.initial = InitialData::EigenMultiple { c1: 1.0, c2: 1.0 };
        let c = DerivedConstants::compute(&p).unwrap();
        assert_eq!(c.rho, Some((0.0, 0.0)));
        assert!(c.drift_balanced);
        assert_eq!(c.a, 0.0);
        assert!((c.thresholds.theta_lower.unwrap() - 2.0).abs() < 1e-15);
        assert!((c.thresholds.theta_u1.unwrap() - 8.0 / PI).abs() < 1e-14);
    }

    #[test]
    fn strict_beta_fills_d1_and_n() {
        let mut p = base_params();
        p.beta1 = 2.0;
        p.k = [[0.4, 0.4], [0.3, 0.3]];
        p.initial = InitialData::EigenMultiple { c1: 20.0, c2: 30.0 };
        let c = DerivedConstants::compute(&p).unwrap();
        assert_eq!(c.d1, Some(0.75));
        assert_eq!(c.mass_condition, Some(true));
        assert!(c.thresholds.theta_u2.unwrap() > 0.0);
        assert_eq!(c.thresholds.theta_u1, None);
        let (r1, r2) = c.rho.unwrap();
        assert!((r1 - 0.5).abs() < 1e-14 && (r2 - 0.5).abs() < 1e-14);
    }

    #[test]
    fn validation_rejects_bad_inputs() {
        let mut p = base_params();
        p.beta2 = 2.0;
        assert!(p.validate().is_err());
        let mut p = base_params();
        p.hurst = 0.5;
        assert!(p.validate().is_err());
        let mut p = base_params();
        p.k[0][1] = -0.1;
        assert!(p.validate().is_err());
        let mut p = base_params();
        p.initial = InitialData::EigenMultiple { c1: 2.0, c2: 1.0 };
        assert!(p.validate().is_err());
        let mut p = base_params();
        p.initial = InitialData::Tabulated {
            f1: vec![0.0, 1.0, 0.5],
            f2: vec![0.0, 1.0, 0.0],
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn config_roundtrip_and_unknown_keys() {
        let p = base_params();
        let s = serde_json::to_string(&p).unwrap();
        let q: SystemParams = serde_json::from_str(&s).unwrap();
        assert_eq!(p, q);
        let bad = s.replacen("\"beta1\"", "\"bogus\":1,\"beta1\"", 1);
        assert!(serde_json::from_str::<SystemParams>(&bad).is_err());
    }

    #[test]
    fn derived_constants_are_reproducible() {
        let p = base_params();
        let a = DerivedConstants::compute(&p).unwrap();
        let b = DerivedConstants::compute(&p).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    proptest! {
        #[test]
        fn coupling_check_is_symmetric(b2 in 0.1f64..3.0, extra in 0.0f64..2.0, k11 in 0.0f64..2.0, k12 in 0.0f64..2.0) {
            // pick k₂ⱼ so the coupling holds: (2+β₁)k₂ⱼ = (2+β₂)k₁ⱼ
            let b1 = b2 + extra;
            let k = [[k11, k12], [(2.0 + b2) * k11 / (2.0 + b1), (2.0 + b2) * k12 / (2.0 + b1)]];
            let swapped = [k[1], k[0]];
            let r = coupled_exponents(b1, b2, &k, COUPLING_TOL).unwrap();
            let s = coupled_exponents(b2, b1, &swapped, COUPLING_TOL).unwrap();
            prop_assert!((r.0 - s.0).abs() <= 1e-12 * (1.0 + r.0.abs()));
            prop_assert!((r.1 - s.1).abs() <= 1e-12 * (1.0 + r.1.abs()));
        }

        #[test]
        fn theta_lower_decreases_in_c(beta in 0.2f64..3.0, c in 0.01f64..10.0, dc in 0.001f64..5.0, l in 0.5f64..10.0) {
            let e = eigenpair(l).unwrap();
            prop_assert!(lower_threshold(beta, c + dc, e.psi_sup) < lower_threshold(beta, c, e.psi_sup));
        }

        #[test]
        fn theta_u1_decreases_in_e0(beta in 0.2f64..3.0, e0 in 0.01f64..10.0, de in 0.001f64..5.0) {
            prop_assert!(upper1_threshold(beta, e0 + de) < upper1_threshold(beta, e0));
        }
    }
}
