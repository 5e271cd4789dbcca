// Config-driven comparison of the particle system, the discrete PDE and the
// sphere law, written as CSV.

use std::error::Error;

use gkmc::config::ExperimentConfig;
use gkmc::pipeline::{pipeline_compare, Experiment};

const CONFIG: &str = r#"
seed = 5
replicas = 4
t_end = 0.01

[rates]
exchange = "simple"
flip = "cubicflip(0.25, 0.75, 0.5)"

[shape]
dim = 2
n = 48

[k]
rule = "fixed"
value = 8.0

[initial]
kind = "sphere"
radius = 0.3
inside = "alpha2"

[snapshots]
count = 3
"#;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let exp = Experiment::new(ExperimentConfig::parse(CONFIG)?)?;
    println!("lambda0 = {:?}", exp.model.map(|m| m.lambda0));
    let report = pipeline_compare(&exp, 48)?;
    print!("{}", report.csv(&exp.meta));
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
