//! Statistical behaviour of the estimators against exact values.

use evsi_core::cases::{linear_nuisance, ConjugateToy};
use evsi_core::model::run_psa;
use evsi_core::moment_match::{estimate_evsi, MomentMatchOptions};
use evsi_core::oracle::{exact_evsi, nested_mc_evsi, NestedOptions};
use evsi_core::preposterior::PosteriorOptions;
use evsi_core::stats::SeedSpec;
use statrs::function::beta::ln_beta;
use statrs::function::factorial::ln_binomial;

/// Exact EVSI of the nuisance model by enumerating the beta-binomial
/// predictive distribution of the trial.
fn linear_nuisance_exact(trials: u64) -> f64 {
    let n = trials as f64;
    (0..=trials)
        .map(|x| {
            let x = x as f64;
            let p = (ln_binomial(trials, x as u64) + ln_beta(x + 1.0, n - x + 4.0)
                - ln_beta(1.0, 4.0))
            .exp();
            p * (10_000.0 * (1.0 + x) / (5.0 + n) - 2_000.0).max(0.0)
        })
        .sum()
}

fn sd(values: &[f64]) -> f64 {
    let m = values.iter().sum::<f64>() / values.len() as f64;
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}

#[test]
fn nested_standard_error_halves_when_outer_samples_quadruple() {
    let toy = ConjugateToy::beta_binomial(10);
    let model = toy.model().unwrap();
    let design = toy.design();
    let master = SeedSpec::from_master(21);
    let mut small = Vec::new();
    let mut large = Vec::new();
    for r in 0..10 {
        let run = |n: usize, label: u64| {
            let opts = NestedOptions::new(n, 100, master.derive_path(&[r, label]));
            nested_mc_evsi(&model, &design, &opts)
                .unwrap()
                .standard_error
        };
        small.push(run(2_000, 0));
        large.push(run(8_000, 1));
    }
    let ratio = small.iter().sum::<f64>() / large.iter().sum::<f64>();
    assert!((ratio - 2.0).abs() <= 0.4, "SE ratio {ratio}");
}

#[test]
fn nested_errors_match_reported_standard_errors() {
    let toy = ConjugateToy::beta_binomial(5);
    let model = toy.model().unwrap();
    let exact = exact_evsi(&toy).unwrap().evsi;
    let master = SeedSpec::from_master(22);
    let mut z = Vec::new();
    for r in 0..20 {
        let opts = NestedOptions::new(5_000, 100, master.derive(r));
        let res = nested_mc_evsi(&model, &toy.design(), &opts).unwrap();
        z.push((res.evsi - exact) / res.standard_error);
    }
    let spread = sd(&z);
    assert!((0.5..=1.6).contains(&spread), "z spread {spread}");
}

#[test]
fn more_quadrature_points_reduce_variance_error() {
    let toy = ConjugateToy::quadratic_normal();
    let model = toy.model().unwrap();
    let design = toy.design();
    let exact = toy.analytic_preposterior().unwrap().variance;
    let master = SeedSpec::from_master(23);
    let mut err10 = 0.0;
    let mut err100 = 0.0;
    for r in 0..20 {
        let rep = master.derive(r);
        let psa = run_psa(&model, 10_000, rep.derive(0)).unwrap();
        let sigma2 = |q: usize| {
            let opts = MomentMatchOptions {
                q,
                posterior: PosteriorOptions {
                    m: 1_000,
                    burn_in: 0,
                },
                seed: rep.derive(1),
                ..Default::default()
            };
            estimate_evsi(&model, &design, &psa, &opts).unwrap().sigma2
        };
        err10 += (sigma2(10) - exact).abs();
        err100 += (sigma2(100) - exact).abs();
    }
    assert!(
        err100 < err10,
        "mean errors Q=10 {} Q=100 {}",
        err10 / 20.0,
        err100 / 20.0
    );
}

#[test]
fn nuisance_model_estimates_match_enumeration() {
    let trials = 50;
    let exact = linear_nuisance_exact(trials);
    let (model, design) = linear_nuisance(trials).unwrap();
    let seed = SeedSpec::from_master(24);

    let nested = nested_mc_evsi(
        &model,
        &design,
        &NestedOptions::new(20_000, 2_000, seed.derive(0)),
    )
    .unwrap();
    assert!(
        (nested.evsi - exact).abs() <= 3.0 * nested.standard_error,
        "nested {} (SE {}) vs {exact}",
        nested.evsi,
        nested.standard_error
    );

    let psa = run_psa(&model, 100_000, seed.derive(1)).unwrap();
    let opts = MomentMatchOptions {
        seed: seed.derive(2),
        ..Default::default()
    };
    let mm = estimate_evsi(&model, &design, &psa, &opts).unwrap();
    let rel = (mm.evsi - exact) / exact;
    println!(
        "moment matching {} vs exact {exact} ({:+.2}%)",
        mm.evsi,
        100.0 * rel
    );
    assert!(
        (mm.evsi - exact).abs() <= 0.05 * exact + 3.0 * mm.standard_error,
        "moment matching {} (SE {}) vs {exact}",
        mm.evsi,
        mm.standard_error
    );
    assert!(mm.evsi <= mm.evppi + 3.0 * mm.evppi_standard_error);
}
