use std::f64::consts::PI;

use blowup_core::mc::{run_campaign, run_campaign_with_records, CampaignSpec, Pipeline, StoppingOutcome};
use blowup_core::noise::{path_rng, NoiseCoupling, NoiseGenerator, TimeGrid};
use blowup_core::params::DerivedConstants;
use blowup_core::pde::{solve_random_pde, SolverControls, SpatialMesh};
use blowup_core::stopping::{tau_lower_star, tau_upper_1};
use blowup_core::validation::{run_validation, sandwich_params, ValidationProfile};
use proptest::prelude::*;

fn spec(pipelines: Vec<Pipeline>, n_paths: u64, seed: u64) -> CampaignSpec {
    CampaignSpec {
        params: sandwich_params(0.7, NoiseCoupling::Independent, 0.3, 0.4, 1.0),
        grid: TimeGrid::new(8.0, 512).unwrap(),
        mesh: Some(SpatialMesh::new(PI, 32).unwrap()),
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

#[test]
fn pde_blowup_time_sits_between_the_stopping_times() {
    let s = spec(vec![Pipeline::PdeSandwich], 1, 0);
    let consts = DerivedConstants::compute(&s.params).unwrap();
    let gen = NoiseGenerator::new(s.grid, s.params.hurst, s.params.coupling).unwrap();
    let mesh = s.mesh.unwrap();
    for i in 0..6 {
        let path = gen.sample(&mut path_rng(77, i));
        let lo = tau_lower_star(&path, &consts).unwrap().time_or_inf();
        let hi = tau_upper_1(&path, &consts).unwrap().time_or_inf();
        let traj = solve_random_pde(&s.params, &consts, &path, &mesh, &s.solver).unwrap();
        let Some(t) = traj.blowup.time() else {
            assert!(
                hi.is_infinite() || hi > s.grid.t_max() * 0.9,
                "path {i}: no blow-up but τ₁* = {hi}"
            );
            continue;
        };
        let slack = 5.0 * s.grid.dt().max(mesh.dx() * mesh.dx()) * t;
        assert!(t >= lo - slack && t <= hi + slack, "path {i}: {lo} ≤ {t} ≤ {hi}");
    }
}

#[test]
fn campaign_report_round_trips_through_json() {
    let rep = run_campaign(&spec(vec![Pipeline::LowerStar, Pipeline::Upper1], 50, 3)).unwrap();
    let v: serde_json::Value = serde_json::from_str(&rep.to_json().unwrap()).unwrap();
    assert_eq!(v["n_paths"], 50);
    assert_eq!(v["stopping"].as_array().unwrap().len(), 2);
    assert!(rep.all_checks_pass());
}

#[test]
fn records_agree_with_summary_counts() {
    let (rep, records) = run_campaign_with_records(&spec(vec![Pipeline::LowerStar], 64, 5)).unwrap();
    let crossed = records
        .iter()
        .filter(|r| matches!(r.stopping.get(&Pipeline::LowerStar), Some(StoppingOutcome::Ok(e)) if e.crossed()))
        .count() as u64;
    assert_eq!(rep.stopping_summary(Pipeline::LowerStar).unwrap().crossed, crossed);
    assert_eq!(records.len(), 64);
    assert!(records.iter().enumerate().all(|(i, r)| r.index == i as u64));
}

#[test]
fn small_validation_profile_passes() {
    let profile = ValidationProfile {
        fbm_paths: 2000,
        yor_samples: 1000,
        sandwich_paths: 100,
        dominance_paths: 500,
        ..ValidationProfile::default()
    };
    let rep = run_validation(&profile).unwrap();
    assert!(rep.passed, "{:#?}", rep.checks);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn sandwich_holds_for_random_coefficients(k1 in 0.0f64..0.6, k2 in 0.0f64..0.6, c in 0.2f64..2.0, seed in 0u64..1000) {
        let mut s = spec(vec![Pipeline::LowerStar, Pipeline::Upper1], 20, seed);
        s.params = sandwich_params(0.7, NoiseCoupling::Independent, k1, k2, c);
        let rep = run_campaign(&s).unwrap();
        prop_assert!(rep.check("sandwich_lower_upper").unwrap().passed);
    }
}
