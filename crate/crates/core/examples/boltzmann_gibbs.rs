// Boltzmann-Gibbs functional under stationary exchange dynamics, against the
// frozen-configuration control.

use std::error::Error;

use gkmc::bg::{frozen_functionals, rms_normalized, stationary_functionals, Coefficient};
use gkmc::lattice::TorusShape;
use gkmc::rates::{ExchangeRateSpec, LocalFunction};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let pair = LocalFunction::new(2, vec![vec![0, 0], vec![1, 0]], vec![0.0, 0.0, 0.0, 1.0])?;
    let times: Vec<f64> = (0..=10).map(|i| i as f64 * 1e-3).collect();
    for n in [16, 32, 64] {
        let shape = TorusShape::new(2, n)?;
        let dynamic = stationary_functionals(
            &ExchangeRateSpec::simple(2),
            shape,
            0.5,
            std::slice::from_ref(&pair),
            Coefficient::Constant(1.0),
            &times,
            8,
            1,
        )?;
        let frozen = frozen_functionals(shape, 0.5, &pair, Coefficient::Constant(1.0), &times, 64, 1)?;
        println!(
            "N = {n:<3} dynamic {:.3e}  frozen {:.3e}",
            rms_normalized(&dynamic[0], shape),
            rms_normalized(&frozen, shape)
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
