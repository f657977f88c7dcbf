//! Simulated trajectories against the analytic moments.

use dynlead::linalg::rel_diff;
use dynlead::oracle::{empirical_cross_cov, run_identity_suite, simulate, SuiteSettings};
use dynlead::scenario::{oracle_sphere_config, DynamicsConfig, Scenario};

fn oracle() -> (Scenario, DynamicsConfig) {
    let cfg = DynamicsConfig::default();
    (Scenario::synthetic(&oracle_sphere_config(), &cfg).unwrap(), cfg)
}

#[test]
fn long_run_matches_stationary_moments() {
    let (s, cfg) = oracle();
    let noise = s.unit_noise(&cfg).unwrap();
    let run = simulate(&s.dynamics, &s.lead_field, &noise, 200_000, 1).unwrap();
    let d = &s.dynamics;
    assert!(rel_diff(&empirical_cross_cov(&run, 0).unwrap(), d.steady_cov()) < 0.05);
    let back = d.back_transition() * d.steady_cov();
    assert!(rel_diff(&empirical_cross_cov(&run, -1).unwrap(), &back) < 0.05);
    let fwd = d.transition_dense() * d.steady_cov();
    assert!(rel_diff(&empirical_cross_cov(&run, 1).unwrap(), &fwd) < 0.05);
}

#[test]
fn short_runs_widen_the_bounds() {
    let (s, cfg) = oracle();
    let noise = s.unit_noise(&cfg).unwrap();
    let settings = SuiteSettings {
        samples: 2_000,
        ..SuiteSettings::default()
    };
    let report = run_identity_suite(&s.dynamics, &s.lead_field, &noise, &settings).unwrap();
    assert!(report.widened_bounds);
    let lag0 = report.checks.iter().find(|c| c.name == "cross_cov_lag_+0").unwrap();
    assert!((lag0.bound - 0.5).abs() < 1e-12);
}

#[test]
fn negative_control_is_flagged() {
    let (s, cfg) = oracle();
    let noise = s.unit_noise(&cfg).unwrap();
    let settings = SuiteSettings {
        samples: 100_000,
        seed: 3,
        negative_control: true,
        ..SuiteSettings::default()
    };
    let report = run_identity_suite(&s.dynamics, &s.lead_field, &noise, &settings).unwrap();
    assert!(!report.all_passed);
    let failing: Vec<_> = report.checks.iter().filter(|c| !c.passed).collect();
    assert_eq!(failing.len(), 1, "{failing:?}");
    assert!(failing[0].negative_control);
}

/// Expected ‖Ĉ − C‖_F / ‖C‖_F of the lag-0 sample covariance over `t`
/// samples of a stationary Gaussian process, from
/// `E‖Ĉ − C‖²_F ≈ (1/T) Σ_τ [(tr C_τ)² + tr(C_τ C_τ)]`, `C_τ = F^τ C`.
fn predicted_relative_error(s: &Scenario, t: usize) -> f64 {
    let d = &s.dynamics;
    let c = d.steady_cov();
    let term = |m: &nalgebra::DMatrix<f64>| m.trace().powi(2) + m.component_mul(&m.transpose()).sum();
    let mut total = term(c);
    let mut lagged = c.clone();
    loop {
        lagged = d.transition().mul_dense(&lagged);
        let add = 2.0 * term(&lagged);
        total += add;
        if add < 1e-12 * total {
            break;
        }
    }
    (total / t as f64).sqrt() / c.norm()
}

#[test]
fn desk_model_covariance_error_matches_prediction() {
    let cfg = DynamicsConfig::default();
    let s = Scenario::synthetic(&dynlead::forward::SphereConfig::default(), &cfg).unwrap();
    let noise = s.unit_noise(&cfg).unwrap();
    let samples = 200_000;
    let run = simulate(&s.dynamics, &s.lead_field, &noise, samples, 2).unwrap();
    let err = rel_diff(&empirical_cross_cov(&run, 0).unwrap(), s.dynamics.steady_cov());
    let expected = predicted_relative_error(&s, samples);
    assert!((0.7..1.3).contains(&(err / expected)), "measured {err}, predicted {expected}");
}

#[test]
fn oracle_model_error_matches_prediction() {
    let (s, cfg) = oracle();
    let noise = s.unit_noise(&cfg).unwrap();
    let expected = predicted_relative_error(&s, 50_000);
    let mean: f64 = (0..8u64)
        .map(|seed| {
            let run = simulate(&s.dynamics, &s.lead_field, &noise, 50_000, 40 + seed).unwrap();
            rel_diff(&empirical_cross_cov(&run, 0).unwrap(), s.dynamics.steady_cov())
        })
        .sum::<f64>()
        / 8.0;
    assert!((0.7..1.3).contains(&(mean / expected)), "measured {mean}, predicted {expected}");
}
