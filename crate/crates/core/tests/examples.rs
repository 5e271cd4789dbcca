#[allow(dead_code)]
mod verify_rates {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/verify_rates.rs"));
}

#[test]
fn verify_rates_example_runs() {
    verify_rates::run_example().expect("verify_rates example should run");
}

#[allow(dead_code)]
mod homogenize {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/homogenize.rs"));
}

#[test]
fn homogenize_example_runs() {
    homogenize::run_example().expect("homogenize example should run");
}

#[allow(dead_code)]
mod sharp_interface {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/sharp_interface.rs"));
}

#[test]
fn sharp_interface_example_runs() {
    sharp_interface::run_example().expect("sharp_interface example should run");
}

#[allow(dead_code)]
mod kmc_snapshots {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/kmc_snapshots.rs"));
}

#[test]
fn kmc_snapshots_example_runs() {
    kmc_snapshots::run_example().expect("kmc_snapshots example should run");
}

#[allow(dead_code)]
mod master_equation {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/master_equation.rs"));
}

#[test]
fn master_equation_example_runs() {
    master_equation::run_example().expect("master_equation example should run");
}

#[allow(dead_code)]
mod reaction_diffusion {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/reaction_diffusion.rs"));
}

#[test]
fn reaction_diffusion_example_runs() {
    reaction_diffusion::run_example().expect("reaction_diffusion example should run");
}

#[allow(dead_code)]
mod boltzmann_gibbs {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/boltzmann_gibbs.rs"));
}

#[test]
fn boltzmann_gibbs_example_runs() {
    boltzmann_gibbs::run_example().expect("boltzmann_gibbs example should run");
}

#[allow(dead_code)]
mod equivalence_of_ensembles {
    include!(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/examples/equivalence_of_ensembles.rs"
    ));
}

#[test]
fn equivalence_of_ensembles_example_runs() {
    equivalence_of_ensembles::run_example().expect("equivalence_of_ensembles example should run");
}

#[allow(dead_code)]
mod desk_check {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/desk_check.rs"));
}

#[test]
fn desk_check_example_runs() {
    desk_check::run_example().expect("desk_check example should run");
}
