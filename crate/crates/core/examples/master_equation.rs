// Exact law on a tiny torus: comparison with KMC and the relative entropy
// production inequality.

use std::error::Error;

use gkmc::kmc::{SimParams, Simulator};
use gkmc::lattice::{sample_product_with, DensityField, TorusShape};
use gkmc::master::{build_generator, entropy_production_check, evolve, DenseDistribution, ProductMeasure};
use gkmc::pde::{OdePath, PdeParams};
use gkmc::rates::{compute_f, compute_p, ExchangeRateSpec, FlipRateSpec};
use gkmc::rng;
use rayon::prelude::*;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let shape = TorusShape::new(1, 6)?;
    let exchange = ExchangeRateSpec::speedchange(1, &[0.5])?;
    let flips = FlipRateSpec::cubicflip(1, 0.25, 0.75, 0.5)?;
    let t = 0.5;
    let params = SimParams {
        shape,
        k: 2.0,
        exchange: exchange.clone(),
        flips: Some(flips.clone()),
        t_end: t,
        snapshot_times: vec![t],
        seed: 11,
    };
    let u0 = DensityField::from_sites(shape, |c| 0.2 + 0.1 * c[0] as f64);
    let mu0 = DenseDistribution::from_product(&ProductMeasure::new(u0.clone())?)?;
    let mu_t = evolve(&mu0, &build_generator(&params)?, t);

    let sim = Simulator::new(&params)?;
    let replicas = 20_000;
    let states: Vec<usize> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::stream(params.seed, 6, r);
            let init = sample_product_with(&u0, &mut rng).unwrap();
            sim.run(init, &mut rng)
                .unwrap()
                .final_configuration()
                .unwrap()
                .to_state() as usize
        })
        .collect();
    let empirical = DenseDistribution::empirical(shape, states)?;
    println!(
        "TV(KMC, exact) over {replicas} replicas = {:.4}",
        empirical.total_variation(&mu_t)
    );

    let pde = PdeParams::new(shape, 2.0, compute_p(&exchange)?, compute_f(&flips), t, vec![t])?;
    let substep = 0.5 * pde.max_dt();
    let path = OdePath::new(pde, u0, substep)?;
    let report = entropy_production_check(&params, &mu0, &path, &[0.1, 0.25, 0.45], 1e-3)?;
    print!("{}", report.csv());
    assert!(report.holds);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
