// Balancing alpha*, the surface tension-mobility constant lambda0 and the
// shrinking-sphere law.

use std::error::Error;

use gkmc::mcf::{compute_lambda0, compute_w, sphere_radius_law, SharpInterfaceModel};
use gkmc::rates::{balance_alpha_star, compute_f, compute_p, ExchangeRateSpec, FlipRateSpec};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let p = compute_p(&ExchangeRateSpec::speedchange(2, &[0.5])?)?;
    let alpha_star = balance_alpha_star(&p, 0.25, 0.75, |a| FlipRateSpec::cubicflip(2, 0.25, 0.75, a))?;
    let f = compute_f(&FlipRateSpec::cubicflip(2, 0.25, 0.75, alpha_star)?);
    let w = compute_w(&p, &f)?;
    let lambda0 = compute_lambda0(&p, &f)?;
    println!("alpha* = {alpha_star} (61/120 = {})", 61.0 / 120.0);
    println!("max W = {:?}", w.max());
    println!("lambda0 = {lambda0}");

    let model = SharpInterfaceModel::from_polynomials(&p, &f, 2)?;
    let r0 = 0.3;
    println!("extinction at t = {}", model.extinction_time(r0));
    for t in [0.0, 0.005, 0.01, 0.02] {
        println!("R({t}) = {}", sphere_radius_law(r0, &model, t)?);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
