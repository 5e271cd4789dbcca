// Structural checks on exchange rates: positivity, reversibility, gradient
// condition and the Green-Kubo identity.

use std::error::Error;

use gkmc::rates::{green_kubo_residual, verify_assumptions, DirectionRates, ExchangeRateSpec, LocalFunction};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    for alpha in [-0.3, 0.2, 0.5] {
        let spec = ExchangeRateSpec::speedchange(1, &[alpha])?;
        let report = verify_assumptions(&spec);
        println!(
            "speedchange({alpha}): passed={} c_*={} green_kubo={:.1e}",
            report.passed(),
            report.c_star,
            green_kubo_residual(&spec)
        );
        assert!(report.passed());
    }

    // rate depending on eta_0
    let bad = ExchangeRateSpec::new(
        1,
        vec![DirectionRates {
            rate: LocalFunction::new(1, vec![vec![0], vec![2]], vec![1.0, 2.0, 1.0, 2.0])?,
            witness: LocalFunction::occupation(vec![0]),
        }],
    )?;
    let report = verify_assumptions(&bad);
    for v in &report.violations {
        println!("witness: {v}");
    }
    assert!(!report.passed());
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
