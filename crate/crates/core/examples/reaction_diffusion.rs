// Discrete reaction-diffusion equation from a smoothed disc and the interface
// radius read-out.

use std::error::Error;

use gkmc::config::{initial_field, Initial, Phase};
use gkmc::lattice::TorusShape;
use gkmc::mcf::{extract_radius, sphere_radius_law, SharpInterfaceModel};
use gkmc::pde::{run, PdeParams};
use gkmc::poly::Polynomial;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let n = 128;
    let shape = TorusShape::new(2, n)?;
    let p = Polynomial::x();
    // balanced cubic with zeros 1/4, 1/2, 3/4
    let f = Polynomial::from_roots(-1.0, &[0.25, 0.5, 0.75]);
    let model = SharpInterfaceModel::from_polynomials(&p, &f, 2)?;
    let initial = Initial::Sphere {
        radius: 0.3,
        inside: Phase::Alpha2,
        width: None,
        center: None,
    };
    let u0 = initial_field(&initial, shape, Some((model.alpha1, model.alpha2)))?;
    let times = vec![0.0, 0.005, 0.01, 0.02];
    let params = PdeParams::new(shape, 16.0, p, f, 0.02, times)?;
    let out = run(&u0, &params)?;
    println!("{} Euler steps, invariant interval {:?}", out.steps, out.bounds);
    for (t, u) in &out.snapshots {
        let r = extract_radius(u, model.alpha_star, &[0.5, 0.5])?;
        println!("t = {t:<6} R = {r:.4}  law {:.4}", sphere_radius_law(0.3, &model, *t)?);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
