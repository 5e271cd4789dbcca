// Exact continuous-time simulation of the full dynamics from a product
// measure, with snapshot files.

use std::error::Error;

use gkmc::kmc::{run_replicas, SimParams, Simulator};
use gkmc::lattice::{DensityField, TorusShape};
use gkmc::rates::{ExchangeRateSpec, FlipRateSpec};
use gkmc::snapshot::{Payload, Snapshot};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let shape = TorusShape::new(2, 32)?;
    let params = SimParams {
        shape,
        k: 8.0,
        exchange: ExchangeRateSpec::simple(2),
        flips: Some(FlipRateSpec::cubicflip(2, 0.25, 0.75, 0.5)?),
        t_end: 0.01,
        snapshot_times: vec![0.0, 0.005, 0.01],
        seed: 7,
    };
    let sim = Simulator::new(&params)?;
    println!("rejection bound = {}", sim.bound());
    let u0 = DensityField::sample(shape, |v| if (v[0] - 0.5).abs() < 0.25 { 0.75 } else { 0.25 });
    let trajectories = run_replicas(&sim, &u0, params.seed, 4)?;
    for (r, traj) in trajectories.iter().enumerate() {
        let densities: Vec<String> = traj
            .snapshots
            .iter()
            .map(|(_, c)| format!("{:.4}", c.density()))
            .collect();
        println!("replica {r}: densities {}", densities.join(" "));
    }

    let dir = tempfile::tempdir()?;
    let (t, cfg) = trajectories[0].snapshots.last().unwrap().clone();
    let path = dir.path().join("final.snap");
    Snapshot::occupancy(t, cfg.clone()).write(&path)?;
    let back = Snapshot::read(&path)?;
    assert!(matches!(back.payload, Payload::Occupancy(c) if c == cfg));
    println!("snapshot round trip ok ({} bytes)", std::fs::metadata(&path)?.len());
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
