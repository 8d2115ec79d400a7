//! Analytic constants and bounds for one parameter set.

use blowup_core::params::DerivedConstants;
use blowup_core::pde::sharp_bound_threshold;
use blowup_core::prob::{
    gamma_law_lower_bound, l_alpha_deterministic, l_alpha_drift, lower_bound_malliavin, malliavin_denominator,
    tail_bound_concentration, tail_bound_markov, ConcentrationVariant, GammaLawInput, TailBoundInput,
};
use blowup_core::stopping::{beta_case, general_exponents};
use blowup_core::{Result, SystemParams};

use crate::config::BoundsConfig;
use crate::table::{cell, Table};

/// One line of the bounds table.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundLine {
    pub section: &'static str,
    pub quantity: String,
    pub variant: String,
    pub value: Option<f64>,
    pub note: String,
}

impl BoundLine {
    pub fn applicable(&self) -> bool {
        self.value.is_some()
    }
}

pub const HEADER: [&str; 6] = ["section", "quantity", "variant", "value", "status", "note"];

struct Lines(Vec<BoundLine>);

impl Lines {
    fn value(&mut self, section: &'static str, quantity: &str, variant: &str, v: f64) {
        self.0.push(BoundLine {
            section,
            quantity: quantity.into(),
            variant: variant.into(),
            value: Some(v),
            note: String::new(),
        });
    }

    fn option(&mut self, section: &'static str, quantity: &str, variant: &str, v: Option<f64>, why: &str) {
        self.0.push(BoundLine {
            section,
            quantity: quantity.into(),
            variant: variant.into(),
            value: v,
            note: if v.is_some() { String::new() } else { why.into() },
        });
    }

    fn result(&mut self, section: &'static str, quantity: &str, variant: &str, r: Result<f64>) {
        let (value, note) = match r {
            Ok(v) => (Some(v), String::new()),
            Err(e) => (None, e.to_string()),
        };
        self.0.push(BoundLine {
            section,
            quantity: quantity.into(),
            variant: variant.into(),
            value,
            note,
        });
    }
}

/// Every constant and bound the parameter set admits; the rest are kept
/// as inapplicable lines with the reason.
pub fn bound_lines(params: &SystemParams, cfg: &BoundsConfig) -> Result<Vec<BoundLine>> {
    let consts = DerivedConstants::compute(params)?;
    let mut l = Lines(Vec::new());
    let eig = consts.eig;

    l.value("eigen", "lambda", "", eig.lambda);
    l.value("eigen", "psi_sup", "", eig.psi_sup);
    l.value("eigen", "psi_sq_integral", "", eig.psi_sq_integral());

    let (ea, eb) = general_exponents(params);
    for (name, e) in [("A", ea), ("B", eb)] {
        l.value("general", &format!("exponent_{name}"), "rho_w", e.rho_w);
        l.value("general", &format!("exponent_{name}"), "rho_bh", e.rho_bh);
    }
    l.value("general", "gamma_min", "", consts.gamma_min);
    l.value("general", "k_sq", "", consts.k_sq);
    l.value("general", "a", "", consts.a);
    l.value("general", "a1", "", consts.a1);
    l.value(
        "general",
        "drift_balanced",
        "",
        f64::from(u8::from(consts.drift_balanced)),
    );
    l.value("general", "volterra_c_h", "", consts.volterra_c_h);
    l.value("general", "h1_0", "", consts.h1_0);
    l.value("general", "h2_0", "", consts.h2_0);
    l.value("general", "e0", "", consts.e0);

    let coupling_why = consts
        .coupling_diagnostic
        .clone()
        .unwrap_or_else(|| "coupling condition fails".into());
    l.option("coupled", "rho1", "", consts.rho.map(|r| r.0), &coupling_why);
    l.option("coupled", "rho2", "", consts.rho.map(|r| r.1), &coupling_why);

    let th = consts.thresholds;
    let no_eigen = "requires eigen-multiple initial data";
    l.option("thresholds", "theta_lower_1", "", th.theta_lower_1, no_eigen);
    l.option("thresholds", "theta_lower_2", "", th.theta_lower_2, no_eigen);
    l.option("thresholds", "theta_lower", "", th.theta_lower, no_eigen);
    l.option("thresholds", "theta_u1", "", th.theta_u1, "requires β₁ = β₂");
    l.option("thresholds", "d1", "", consts.d1, "requires β₁ > β₂");
    l.option("thresholds", "eps0", "", consts.eps0, "requires β₁ > β₂ and h₂(0) > 0");
    l.option(
        "thresholds",
        "mass_condition",
        "",
        consts.mass_condition.map(|b| f64::from(u8::from(b))),
        "requires β₁ > β₂",
    );
    l.option(
        "thresholds",
        "theta_u2",
        "",
        th.theta_u2,
        "requires β₁ > β₂ and the mass condition",
    );

    let case = beta_case(params);
    let tail = TailBoundInput::from_params(params, &consts, case, cfg.horizon);
    let on_tail = |f: &dyn Fn(&TailBoundInput) -> Result<f64>| match &tail {
        Ok(t) => f(t),
        Err(e) => Err(e.clone()),
    };
    l.result("tail", "mu_T", "", on_tail(&|t| t.mu()));
    l.result(
        "tail",
        "concentration",
        "m_squared",
        on_tail(&|t| tail_bound_concentration(t, ConcentrationVariant::MSquared)),
    );
    l.result(
        "tail",
        "concentration",
        "literal",
        on_tail(&|t| tail_bound_concentration(t, ConcentrationVariant::Literal)),
    );
    l.result("tail", "markov", "", on_tail(&tail_bound_markov));
    if let Some(alpha) = cfg.alpha {
        let h = params.hurst;
        l.result(
            "tail",
            "malliavin_denominator",
            "",
            on_tail(&|t| malliavin_denominator(alpha, t.rho1, t.rho2, h, t.threshold)),
        );
        l.result(
            "tail",
            "malliavin",
            "zero_noise_L",
            on_tail(&|t| {
                let big_l = l_alpha_deterministic(l_alpha_drift(&consts), alpha, t.threshold, t.horizon);
                lower_bound_malliavin(alpha, big_l, t.rho1, t.rho2, h, t.threshold)
            }),
        );
    }
    let gamma = GammaLawInput::from_params(params, &consts, case).and_then(|g| gamma_law_lower_bound(&g));
    l.result(
        "tail",
        "gamma_law",
        "printed_density",
        gamma.clone().map(|g| g.printed_density),
    );
    l.result(
        "tail",
        "gamma_law",
        "derivation_literal",
        gamma.map(|g| g.derivation_literal),
    );

    if let Some(c) = cfg.sharp_c {
        let sb = sharp_bound_threshold(params, &consts, c);
        for i in 0..2 {
            l.result(
                "global",
                "sharp_value",
                &format!("component_{}", i + 1),
                sb.clone().map(|s| s.value[i]),
            );
            l.result(
                "global",
                "sharp_budget",
                &format!("component_{}", i + 1),
                sb.clone().map(|s| s.budget[i]),
            );
        }
    }
    Ok(l.0)
}

pub fn bounds_table(lines: &[BoundLine]) -> Table {
    let mut t = Table::new(&HEADER);
    for b in lines {
        t.push(vec![
            b.section.into(),
            b.quantity.clone(),
            b.variant.clone(),
            cell(b.value),
            if b.applicable() { "ok" } else { "inapplicable" }.into(),
            b.note.clone(),
        ]);
    }
    t
}
