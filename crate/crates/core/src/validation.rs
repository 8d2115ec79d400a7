//! Reduced-scale self check: noise calibration and exactness, the `1/(2Z_ν)`
//! law, the pathwise sandwich and upper-bound dominance.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::Result;
use crate::mc::{map_indexed, run_campaign, CampaignSpec, FaultInjection, Pipeline};
use crate::noise::{fbm_covariance, path_rng, volterra_variance, FbmSampler, NoiseCoupling, TimeGrid};
use crate::params::{InitialData, SystemParams};
use crate::pde::SolverControls;
use crate::prob::{
    inverse_gamma_half_cdf, ks_critical_1pct, ks_statistic, natural_steps, sample_truncated_functional,
    truncation_horizon, GammaLawInput,
};

/// Sizes of the reduced checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationProfile {
    pub seed: u64,
    pub fbm_paths: u64,
    pub yor_samples: u64,
    pub sandwich_paths: u64,
    pub dominance_paths: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fault: Option<FaultInjection>,
}

impl Default for ValidationProfile {
    fn default() -> Self {
        Self {
            seed: 20_240_601,
            fbm_paths: 20_000,
            yor_samples: 5_000,
            sandwich_paths: 300,
            dominance_paths: 2_000,
            fault: None,
        }
    }
}

/// One check outcome.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationCheck {
    pub name: String,
    pub passed: bool,
    /// Worst observed statistic.
    pub value: f64,
    pub tolerance: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub profile: ValidationProfile,
    pub checks: Vec<ValidationCheck>,
    pub passed: bool,
}

/// `∫₀ᵗ K_H(t,s)² ds = t^{2H}` on `H ∈ {0.55, 0.7, 0.9}`, `t ∈ {0.5, 1, 2}`.
pub fn check_volterra_calibration() -> Result<ValidationCheck> {
    let mut worst: f64 = 0.0;
    for &h in &[0.55, 0.7, 0.9] {
        for &t in &[0.5, 1.0, 2.0] {
            let v: f64 = volterra_variance(t, h)?;
            worst = worst.max((v / t.powf(2.0 * h) - 1.0).abs());
        }
    }
    Ok(ValidationCheck {
        name: "volterra_calibration".into(),
        passed: worst <= 1e-3,
        value: worst,
        tolerance: 1e-3,
        detail: "max relative error of ∫K² against t^{2H}".into(),
    })
}

/// Entrywise empirical covariance of `B^H` on a 4-step grid against
/// `R_H`, in units of standard errors; returns the worst z-score.
pub fn fbm_covariance_zscore(hurst: f64, n_paths: u64, seed: u64) -> Result<f64> {
    let grid = TimeGrid::new(1.0, 4)?;
    let sampler = FbmSampler::new(grid, hurst)?;
    let paths = map_indexed(n_paths, |i| sampler.sample(&mut path_rng(seed, i)));
    let mut worst: f64 = 0.0;
    for a in 1..=4 {
        for b in a..=4 {
            let prods: Vec<f64> = paths.iter().map(|p| p[a] * p[b]).collect();
            let (m, se) = crate::prob::mean_se(&prods);
            let want = fbm_covariance(grid.t(a), grid.t(b), hurst)?;
            worst = worst.max((m - want).abs() / se);
        }
    }
    Ok(worst)
}

pub fn check_fbm_covariance(n_paths: u64, seed: u64) -> Result<ValidationCheck> {
    let mut worst: f64 = 0.0;
    for &h in &[0.55, 0.7, 0.9] {
        worst = worst.max(fbm_covariance_zscore(h, n_paths, seed)?);
    }
    Ok(ValidationCheck {
        name: "fbm_covariance".into(),
        passed: worst <= 5.0,
        value: worst,
        tolerance: 5.0,
        detail: format!("max |Ĉ − R_H| / SE over 10 entries and 3 Hurst values, {n_paths} paths"),
    })
}

/// KS statistic of truncated `∫e^{2(B_t − νt)} dt` samples against the
/// `1/(2Z_ν)` law.
pub fn yor_ks(nu: f64, n: u64, seed: u64) -> Result<(f64, f64)> {
    let g = GammaLawInput::new(2.0, 2.0 * nu, 1.0)?;
    let t_max = truncation_horizon(&g);
    let steps = natural_steps(&g, t_max, 0.01);
    let mut xs = map_indexed(n, |i| {
        sample_truncated_functional(2.0, 2.0 * nu, t_max, steps, &mut path_rng(seed, i))
    });
    let d = ks_statistic(&mut xs, |x| inverse_gamma_half_cdf(nu, x).unwrap_or(f64::NAN));
    Ok((d, ks_critical_1pct(n as usize)))
}

pub fn check_yor_law(n: u64, seed: u64) -> Result<ValidationCheck> {
    let mut worst_ratio: f64 = 0.0;
    let mut detail = Vec::new();
    for &nu in &[1.0, 2.0] {
        let (d, crit) = yor_ks(nu, n, seed)?;
        worst_ratio = worst_ratio.max(d / crit);
        detail.push(format!("ν={nu}: D={d:.5} (1% critical {crit:.5})"));
    }
    Ok(ValidationCheck {
        name: "yor_law".into(),
        passed: worst_ratio < 1.0,
        value: worst_ratio,
        tolerance: 1.0,
        detail: detail.join("; "),
    })
}

/// A drift-balanced, equal-exponent parameter set satisfying the
/// coupling condition.
pub fn sandwich_params(hurst: f64, coupling: NoiseCoupling, k1: f64, k2: f64, c: f64) -> SystemParams {
    let gamma = 1.0 + 0.5 * k1 * k1;
    SystemParams {
        beta1: 1.0,
        beta2: 1.0,
        gamma1: gamma,
        gamma2: gamma,
        k: [[k1, k2], [k1, k2]],
        hurst,
        coupling,
        domain_length: PI,
        initial: InitialData::EigenMultiple { c1: c, c2: c },
    }
}

fn campaign(params: SystemParams, grid: TimeGrid, n_paths: u64, seed: u64, pipelines: Vec<Pipeline>) -> CampaignSpec {
    CampaignSpec {
        params,
        grid,
        mesh: None,
        solver: SolverControls::default(),
        n_paths,
        master_seed: seed,
        pipelines,
        bound_horizon: None,
        alpha: None,
        gamma_oracle_paths: None,
        fault: None,
    }
}

pub fn check_sandwich(n_paths: u64, seed: u64, fault: Option<FaultInjection>) -> Result<ValidationCheck> {
    let mut spec = campaign(
        sandwich_params(0.7, NoiseCoupling::Independent, 0.3, 0.8, 0.3),
        TimeGrid::new(20.0, 1000)?,
        n_paths,
        seed,
        vec![Pipeline::LowerStar, Pipeline::Upper1],
    );
    spec.fault = fault;
    let rep = run_campaign(&spec)?;
    let c = rep.check("sandwich_lower_upper").expect("both pipelines requested");
    Ok(ValidationCheck {
        name: "sandwich".into(),
        passed: c.passed,
        value: c.violations as f64,
        tolerance: 0.0,
        detail: format!("{} of {} paths violate τ* ≤ τ₁*", c.violations, c.compared),
    })
}

pub fn check_dominance(n_paths: u64, seed: u64) -> Result<ValidationCheck> {
    let mut spec = campaign(
        sandwich_params(0.7, NoiseCoupling::Independent, 0.3, 0.4, 0.6),
        TimeGrid::new(1.0, 256)?,
        n_paths,
        seed,
        vec![Pipeline::TailBounds],
    );
    spec.bound_horizon = Some(1.0);
    let rep = run_campaign(&spec)?;
    let c = rep.check("upper_dominance").expect("tail bounds requested");
    Ok(ValidationCheck {
        name: "upper_dominance".into(),
        passed: c.passed && c.compared > 0,
        value: c.violations as f64,
        tolerance: 0.0,
        detail: format!(
            "{} of {} applicable bounds violated; {}",
            c.violations, c.compared, c.detail
        ),
    })
}

/// Runs every reduced check.
pub fn run_validation(profile: &ValidationProfile) -> Result<ValidationReport> {
    let seed = profile.seed;
    let checks = vec![
        check_volterra_calibration()?,
        check_fbm_covariance(profile.fbm_paths, seed)?,
        check_yor_law(profile.yor_samples, seed.wrapping_add(1))?,
        check_sandwich(profile.sandwich_paths, seed.wrapping_add(2), profile.fault)?,
        check_dominance(profile.dominance_paths, seed.wrapping_add(3))?,
    ];
    let passed = checks.iter().all(|c| c.passed);
    Ok(ValidationReport {
        profile: *profile,
        checks,
        passed,
    })
}
