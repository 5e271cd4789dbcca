// Canonical expectations on a box against the second-order expansion around
// the Bernoulli value.

use std::error::Error;

use gkmc::master::{equivalence_error, log_log_slope};
use gkmc::rates::FlipRateSpec;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let c_plus = FlipRateSpec::cubicflip(1, 0.25, 0.75, 0.5)?.c_plus().clone();
    let ells = [2.0, 3.0, 4.0, 5.0];
    let mut errors = Vec::new();
    for &ell in &ells {
        let e = equivalence_error(&c_plus, ell as usize)?;
        println!("ell = {ell}: error {e:.3e}");
        errors.push(e);
    }
    println!("log-log slope {:.3}", log_log_slope(&ells, &errors));
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
