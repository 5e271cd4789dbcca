// Homogenized diffusion coefficient P and reaction term f.

use std::error::Error;

use gkmc::rates::{check_bistable_balance, compute_f, compute_p, ExchangeRateSpec, FlipRateSpec};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let p_simple = compute_p(&ExchangeRateSpec::simple(2))?;
    let p_speed = compute_p(&ExchangeRateSpec::speedchange(1, &[0.5])?)?;
    println!("P simple      = {:?}", p_simple.coeffs());
    println!("P speedchange = {:?}", p_speed.coeffs());

    let flips = FlipRateSpec::cubicflip(1, 0.25, 0.75, 0.5)?;
    let f = compute_f(&flips);
    println!("f cubicflip   = {:?}", f.coeffs());

    let report = check_bistable_balance(&f, &p_simple)?;
    println!(
        "zeros {} {} {}, A(f) = {:e}",
        report.alpha1, report.alpha_star, report.alpha2, report.a
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
