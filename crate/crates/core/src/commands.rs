//! File-producing runners behind each subcommand. Every CSV starts with the
//! provenance line of [`Meta`]; snapshot files carry the config hash in their
//! names and are listed in `manifest.csv`.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::bg::{self, BgRow, Coefficient};
use crate::config::{initial_field, ConfigError, ExperimentConfig, ResolvedRates};
use crate::kmc::{pair_correlation, SimParams, Simulator};
use crate::lattice::TorusShape;
use crate::master::{self, DenseDistribution, ProductMeasure};
use crate::mcf::{self, compute_w, lambda0_from_w};
use crate::pde::OdePath;
use crate::pipeline::{self, named_h, num, Experiment, Meta, PipelineError};
use crate::rates::{
    check_bistable_balance, compute_f, compute_p, green_kubo_residual, verify_assumptions, RateFile, IDENTITY_TOL,
};
use crate::rng;
use crate::snapshot::{Payload, Snapshot};

/// Rates read from an experiment config (`.toml`) or a rate file
/// (`.json5` / `.json`).
#[derive(Debug, Clone)]
pub struct RatesInput {
    pub rates: ResolvedRates,
    pub dim: usize,
    pub meta: Meta,
}

pub fn load_rates_input(path: &Path, seed: Option<u64>) -> Result<RatesInput, PipelineError> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    if ext == "json5" || ext == "json" {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let file = RateFile::parse(&text)?;
        let hash = Sha256::digest(text.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        return Ok(RatesInput {
            dim: file.exchange.dim(),
            rates: ResolvedRates {
                exchange: file.exchange,
                flip: file.flip,
            },
            meta: Meta {
                hash,
                seed: seed.unwrap_or(0),
            },
        });
    }
    let mut config = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    Ok(RatesInput {
        rates: config.resolve_rates()?,
        dim: config.shape.dim,
        meta: Meta {
            hash: config.hash(),
            seed: config.seed,
        },
    })
}

fn write(out: &Path, name: &str, text: &str) -> Result<PathBuf, PipelineError> {
    fs::create_dir_all(out)?;
    let path = out.join(name);
    fs::write(&path, text)?;
    Ok(path)
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

/// `verify.csv`: one row per assumption plus the Green-Kubo residual. Fails
/// with an assumption error after writing when any check fails.
pub fn verify_rates(input: &RatesInput, out: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let report = verify_assumptions(&input.rates.exchange);
    let witness = |a: crate::rates::Assumption| {
        report
            .violations
            .iter()
            .find(|v| v.assumption == a)
            .map(|v| quote(&v.to_string()))
            .unwrap_or_default()
    };
    use crate::rates::Assumption::*;
    let mut text = input.meta.header();
    text.push_str("check,passed,value,witness\n");
    let nd = report.violations.iter().all(|v| v.assumption != NonDegeneracy);
    text.push_str(&format!(
        "non_degeneracy,{nd},{},{}\n",
        num(report.c_star),
        witness(NonDegeneracy)
    ));
    text.push_str(&format!(
        "reversibility,{},,{}\n",
        report.reversible,
        witness(Reversibility)
    ));
    text.push_str(&format!("gradient,{},,{}\n", report.gradient_ok, witness(Gradient)));
    let gk_ok = if report.passed() {
        let r = green_kubo_residual(&input.rates.exchange);
        let ok = r <= IDENTITY_TOL;
        text.push_str(&format!("green_kubo,{ok},{},\n", num(r)));
        ok
    } else {
        text.push_str("green_kubo,false,,\n");
        false
    };
    let path = write(out, "verify.csv", &text)?;
    if let Some(v) = report.violations.first() {
        return Err(PipelineError::Assumption(v.to_string()));
    }
    if !gk_ok {
        return Err(PipelineError::Assumption("Green-Kubo identity fails".into()));
    }
    Ok(vec![path])
}

/// `polynomials.csv` with the coefficients of `P` and `f`, and `roots.csv`
/// when `f` is bistable.
pub fn polynomials(input: &RatesInput, out: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    verify_assumptions(&input.rates.exchange).into_result()?;
    let p = compute_p(&input.rates.exchange)?;
    let mut text = input.meta.header();
    text.push_str("name,degree,coefficients\n");
    let row = |name: &str, poly: &crate::poly::Polynomial| {
        let cs: Vec<String> = poly.coeffs().iter().map(|c| num(*c)).collect();
        format!("{name},{},{}\n", poly.degree(), cs.join(" "))
    };
    text.push_str(&row("P", &p));
    text.push_str(&row("dP", &p.derivative()));
    let mut files = Vec::new();
    if let Some(flip) = &input.rates.flip {
        let f = compute_f(flip);
        text.push_str(&row("f", &f));
        if let Ok(b) = check_bistable_balance(&f, &p) {
            let mut roots = input.meta.header();
            roots.push_str("alpha1,alpha_star,alpha2,balance\n");
            roots.push_str(&format!(
                "{},{},{},{}\n",
                num(b.alpha1),
                num(b.alpha_star),
                num(b.alpha2),
                num(b.a)
            ));
            files.push(write(out, "roots.csv", &roots)?);
        }
    }
    files.insert(0, write(out, "polynomials.csv", &text)?);
    Ok(files)
}

/// `lambda0.csv`.
pub fn lambda0(input: &RatesInput, out: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    verify_assumptions(&input.rates.exchange).into_result()?;
    let p = compute_p(&input.rates.exchange)?;
    let flip = input
        .rates
        .flip
        .as_ref()
        .ok_or_else(|| ConfigError::Invalid("lambda0 needs flip rates".into()))?;
    let f = compute_f(flip);
    let balance = check_bistable_balance(&f, &p)?;
    let w = compute_w(&p, &f)?;
    let l = lambda0_from_w(&p, &w)?;
    let mut text = input.meta.header();
    text.push_str("alpha1,alpha_star,alpha2,balance,lambda0\n");
    text.push_str(&format!(
        "{},{},{},{},{}\n",
        num(w.alpha1),
        num(w.alpha_star),
        num(w.alpha2),
        num(balance.a),
        num(l)
    ));
    Ok(vec![write(out, "lambda0.csv", &text)?])
}

fn manifest(meta: &Meta, rows: &[String]) -> String {
    let mut text = meta.header();
    text.push_str("file,kind,N,replica,t\n");
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    text
}

/// KMC replicas from `nu_{u0}`: occupancy snapshots and `simulate_N{n}.csv`
/// with `replica,t,density,pair_correlation`.
pub fn simulate(exp: &Experiment, out: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    fs::create_dir_all(out)?;
    let times = exp.config.times();
    let mut files = Vec::new();
    let mut entries = Vec::new();
    for n in exp.config.n_values() {
        let trajs = exp.simulate(n, &times)?;
        let mut text = exp.meta.header();
        text.push_str(&format!("# N={n} K={}\n", num(exp.sim_params(n, &times)?.k)));
        text.push_str("replica,t,density,pair_correlation,events\n");
        for (r, traj) in trajs.iter().enumerate() {
            for (i, (t, cfg)) in traj.snapshots.iter().enumerate() {
                text.push_str(&format!(
                    "{r},{},{},{},{}\n",
                    num(*t),
                    num(cfg.density()),
                    num(pair_correlation(cfg)),
                    traj.event_count
                ));
                let name = format!("kmc_{}_N{n}_r{r}_s{i}.snap", exp.meta.tag());
                Snapshot::occupancy(*t, cfg.clone()).write(&out.join(&name))?;
                entries.push(format!("{name},occupancy,{n},{r},{}", num(*t)));
                files.push(out.join(name));
            }
        }
        files.push(write(out, &format!("simulate_N{n}.csv"), &text)?);
    }
    files.push(write(out, "manifest.csv", &manifest(&exp.meta, &entries))?);
    Ok(files)
}

/// Discrete PDE from `u0`: field snapshots, the monitor CSV and, for sphere
/// profiles, `pde_radius_N{n}.csv`.
pub fn pde(exp: &Experiment, out: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    fs::create_dir_all(out)?;
    let times = exp.config.times();
    let mut files = Vec::new();
    let mut entries = Vec::new();
    for n in exp.config.n_values() {
        let run = exp.solve_pde(n, &times)?;
        for (i, (t, u)) in run.snapshots.iter().enumerate() {
            let name = format!("pde_{}_N{n}_s{i}.snap", exp.meta.tag());
            Snapshot::field(*t, u.clone()).write(&out.join(&name))?;
            entries.push(format!("{name},field,{n},,{}", num(*t)));
            files.push(out.join(name));
        }
        let mut text = exp.meta.header();
        text.push_str(&format!(
            "# N={n} K={} steps={}\n",
            num(exp.pde_params(n, &times)?.k),
            run.steps
        ));
        text.push_str(&run.monitor_csv());
        files.push(write(out, &format!("pde_N{n}.csv"), &text)?);
        if let (Some((sphere, _)), Some(model)) = (exp.sphere(), exp.model) {
            let mut text = exp.meta.header();
            text.push_str("t,pde_radius,law_radius\n");
            for (t, u) in &run.snapshots {
                let r = mcf::extract_radius(u, model.alpha_star, &sphere.center).ok();
                let law = mcf::sphere_radius_law(sphere.radius, &model, *t).ok();
                text.push_str(&format!(
                    "{},{},{}\n",
                    num(*t),
                    r.map(num).unwrap_or_default(),
                    law.map(num).unwrap_or_default()
                ));
            }
            files.push(write(out, &format!("pde_radius_N{n}.csv"), &text)?);
        }
    }
    files.push(write(out, "manifest.csv", &manifest(&exp.meta, &entries))?);
    Ok(files)
}

/// Exact law on a tiny torus of side `master.side`: the final distribution,
/// the entropy production check along the discrete PDE path, and optionally
/// the total variation against KMC. Fails with a numerical error after
/// writing when the entropy inequality is violated.
pub fn master(exp: &Experiment, out: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let cfg = &exp.config;
    let side = cfg.master.side;
    let shape = TorusShape::new(cfg.shape.dim, side)?;
    let alphas = exp.model.map(|m| (m.alpha1, m.alpha2));
    let u0 = initial_field(&cfg.initial, shape, alphas)?;
    let k = if exp.rates.flip.is_some() { exp.k(side)? } else { 0.0 };
    let t = cfg.t_end;
    let params = SimParams {
        shape,
        k,
        exchange: exp.rates.exchange.clone(),
        flips: exp.rates.flip.clone(),
        t_end: t,
        snapshot_times: vec![t],
        seed: cfg.seed,
    };
    let map = |e: master::MasterError| PipelineError::Config(ConfigError::Invalid(e.to_string()));
    let gen = master::build_generator(&params).map_err(map)?;
    let mu0 = DenseDistribution::from_product(&ProductMeasure::new(u0.clone()).map_err(map)?).map_err(map)?;
    let mu_t = master::evolve(&mu0, &gen, t);
    let mut files = Vec::new();

    let mut text = exp.meta.header();
    text.push_str(&format!("# side={side} K={} t={}\n", num(k), num(t)));
    text.push_str("state,probability\n");
    for (s, p) in mu_t.probs().iter().enumerate() {
        text.push_str(&format!("{s},{}\n", num(*p)));
    }
    files.push(write(out, &format!("master_N{side}.csv"), &text)?);

    let f = exp.f.clone().unwrap_or_else(crate::poly::Polynomial::zero);
    let pde_params = crate::pde::PdeParams::new(shape, k, exp.p.clone(), f, t, vec![t])?;
    let substep = 0.5 * pde_params.max_dt();
    let path = OdePath::new(pde_params, u0.clone(), substep)?;
    let grid_points = cfg.master.grid.max(1);
    let h = t / (grid_points as f64 * 100.0);
    let grid: Vec<f64> = (1..=grid_points)
        .map(|i| t * i as f64 / grid_points as f64 - h)
        .collect();
    let report = master::entropy_production_check(&params, &mu0, &path, &grid, h).map_err(map)?;
    let mut text = exp.meta.header();
    text.push_str(&report.csv());
    files.push(write(out, &format!("master_entropy_N{side}.csv"), &text)?);

    if cfg.master.kmc_replicas > 0 {
        let sim = Simulator::new(&params)?;
        let states: Vec<usize> = (0..cfg.master.kmc_replicas)
            .into_par_iter()
            .map(|r| -> Result<usize, PipelineError> {
                let mut rng = rng::stream(cfg.seed, side as u64, r as u64);
                let init = crate::lattice::sample_product_with(&u0, &mut rng)?;
                let traj = sim.run(init, &mut rng)?;
                Ok(traj.final_configuration().expect("snapshot at t").to_state() as usize)
            })
            .collect::<Result<_, _>>()?;
        let emp = DenseDistribution::empirical(shape, states).map_err(map)?;
        let mut text = exp.meta.header();
        text.push_str("t,replicas,total_variation\n");
        text.push_str(&format!(
            "{},{},{}\n",
            num(t),
            cfg.master.kmc_replicas,
            num(emp.total_variation(&mu_t))
        ));
        files.push(write(out, &format!("master_tv_N{side}.csv"), &text)?);
    }
    if !report.holds {
        return Err(PipelineError::Numerical("entropy production inequality fails".into()));
    }
    Ok(files)
}

fn bg_header(meta: &Meta) -> String {
    let mut text = meta.header();
    text.push_str("# normalized = root mean square over replicas of functional / N^d\n");
    text.push_str(bg::CSV_HEADER);
    text.push('\n');
    text
}

/// Boltzmann-Gibbs functional per lattice size and local function. Reads the
/// occupancy snapshots listed in `bg.input/manifest.csv` (with the discrete PDE
/// as density path) or, without input, runs stationary exchange dynamics at
/// `bg.density`. Also writes the frozen-configuration control.
pub fn bg(exp: &Experiment, out: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let cfg = &exp.config;
    let times = cfg.times();
    let coefficient = Coefficient::Constant(cfg.bg.coefficient);
    let t_end = *times.last().expect("non-empty schedule");
    let mut text = bg_header(&exp.meta);
    let mut frozen = bg_header(&exp.meta);
    for n in cfg.n_values() {
        let shape = exp.shape(n)?;
        let hs = cfg
            .bg
            .h
            .iter()
            .map(|name| named_h(name, shape.dim(), exp.rates.flip.as_ref()))
            .collect::<Result<Vec<_>, _>>()?;
        let (values, k) = match &cfg.bg.input {
            Some(dir) => (
                read_functionals(exp, dir, n, &hs, coefficient)?,
                exp.sim_params(n, &times)?.k,
            ),
            None => (
                bg::stationary_functionals(
                    &exp.rates.exchange,
                    shape,
                    cfg.bg.density,
                    &hs,
                    coefficient,
                    &times,
                    cfg.replicas,
                    cfg.seed,
                )?,
                0.0,
            ),
        };
        for (name, vals) in cfg.bg.h.iter().zip(&values) {
            let row = BgRow {
                n,
                k,
                t: t_end,
                h_name: name.clone(),
                functional: vals.iter().sum::<f64>() / vals.len() as f64,
                normalized: bg::rms_normalized(vals, shape),
            };
            text.push_str(&row.csv());
            text.push('\n');
        }
        for (name, h) in cfg.bg.h.iter().zip(&hs) {
            let vals = bg::frozen_functionals(
                shape,
                cfg.bg.density,
                h,
                coefficient,
                &times,
                cfg.bg.frozen_samples,
                cfg.seed,
            )?;
            let row = BgRow {
                n,
                k: 0.0,
                t: t_end,
                h_name: format!("{name}_frozen"),
                functional: vals.iter().sum::<f64>() / vals.len() as f64,
                normalized: bg::rms_normalized(&vals, shape),
            };
            frozen.push_str(&row.csv());
            frozen.push('\n');
        }
    }
    Ok(vec![
        write(out, "bg.csv", &text)?,
        write(out, "bg_frozen.csv", &frozen)?,
    ])
}

fn read_functionals(
    exp: &Experiment,
    dir: &Path,
    n: usize,
    hs: &[crate::rates::LocalFunction],
    coefficient: Coefficient,
) -> Result<Vec<Vec<f64>>, PipelineError> {
    let text = fs::read_to_string(dir.join("manifest.csv"))?;
    let mut by_replica: std::collections::BTreeMap<usize, Vec<(f64, PathBuf)>> = Default::default();
    for line in text.lines().filter(|l| !l.starts_with('#')).skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let bad = || ConfigError::Invalid(format!("manifest line '{line}'"));
        if cols.len() != 5 || cols[1] != "occupancy" || cols[2].parse::<usize>().map_err(|_| bad())? != n {
            continue;
        }
        let r: usize = cols[3].parse().map_err(|_| bad())?;
        let t: f64 = cols[4].parse().map_err(|_| bad())?;
        by_replica.entry(r).or_default().push((t, dir.join(cols[0])));
    }
    if by_replica.is_empty() {
        return Err(ConfigError::Invalid(format!("no occupancy snapshots for N = {n} in {}", dir.display())).into());
    }
    let mut trajectories = Vec::new();
    for (_, mut snaps) in by_replica {
        snaps.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut traj = Vec::new();
        for (_, path) in snaps {
            let s = Snapshot::read(&path)?;
            match s.payload {
                Payload::Occupancy(c) => traj.push((s.time, c)),
                Payload::Field(_) => return Err(ConfigError::Invalid("field snapshot in trajectory".into()).into()),
            }
        }
        trajectories.push(traj);
    }
    let times: Vec<f64> = trajectories[0].iter().map(|(t, _)| *t).collect();
    let pde_fields: Vec<_> = exp
        .solve_pde(n, &times)?
        .snapshots
        .into_iter()
        .map(|(_, u)| u)
        .collect();
    hs.iter()
        .map(|h| {
            let spec = bg::BgSpec::new(h.clone(), coefficient, times.clone())?;
            trajectories
                .iter()
                .map(|traj| {
                    Ok(bg::bg_functional_snapshots(
                        traj,
                        &spec,
                        bg::UPath::Snapshots(&pde_fields),
                    )?)
                })
                .collect()
        })
        .collect()
}

/// `compare_N{n}.csv` for each lattice size.
pub fn compare(exp: &Experiment, out: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    exp.config
        .n_values()
        .into_iter()
        .map(|n| {
            let report = pipeline::pipeline_compare(exp, n)?;
            write(out, &format!("compare_N{n}.csv"), &report.csv(&exp.meta))
        })
        .collect()
}

/// `compare_N{n}.csv` for each size plus the aggregated `sweep.csv`.
pub fn sweep(exp: &Experiment, out: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let report = pipeline::sweep(exp)?;
    let mut files = Vec::new();
    for r in &report.reports {
        files.push(write(out, &format!("compare_N{}.csv", r.n), &r.csv(&exp.meta))?);
    }
    files.push(write(out, "sweep.csv", &report.csv(&exp.meta))?);
    Ok(files)
}
