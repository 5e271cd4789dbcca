//! End-to-end comparison of particle system, discrete PDE and the sharp
//! interface law.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::bg::{self, BgError, BgSpec, Coefficient, UPath};
use crate::config::{initial_field, ConfigError, ExperimentConfig, Initial, Phase, ResolvedRates};
use crate::kmc::{self, KmcError, SimParams, Simulator, Trajectory};
use crate::lattice::{block_average, DensityField, LatticeError, TorusShape};
use crate::mcf::{self, McfError, SharpInterfaceModel, Side, Sphere};
use crate::pde::{self, PdeError, PdeParams, PdeRun};
use crate::poly::Polynomial;
use crate::rates::{compute_f, compute_p, unit, verify_assumptions, FlipRateSpec, LocalFunction, RateError};
use crate::snapshot::SnapshotError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("rate assumptions: {0}")]
    Assumption(String),
    #[error("numerical invariant: {0}")]
    Numerical(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    /// 1 for configuration and i/o, 2 for rate assumptions, 3 for numerics.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(ConfigError::Rates(e)) if is_assumption(e) => 2,
            PipelineError::Config(_) | PipelineError::Io(_) => 1,
            PipelineError::Assumption(_) => 2,
            PipelineError::Numerical(_) => 3,
        }
    }
}

fn is_assumption(e: &RateError) -> bool {
    matches!(
        e,
        RateError::AssumptionViolated(_)
            | RateError::DirectionDependent { .. }
            | RateError::NonMonotoneP(_)
            | RateError::WrongRootCount(_)
            | RateError::WrongStability
            | RateError::NoSignChange
    )
}

impl From<RateError> for PipelineError {
    fn from(e: RateError) -> Self {
        if is_assumption(&e) {
            PipelineError::Assumption(e.to_string())
        } else {
            PipelineError::Config(ConfigError::Rates(e))
        }
    }
}

impl From<KmcError> for PipelineError {
    fn from(e: KmcError) -> Self {
        match e {
            KmcError::Rates(r) => r.into(),
            KmcError::BoundExceeded { .. } => PipelineError::Numerical(e.to_string()),
            other => PipelineError::Config(ConfigError::Invalid(other.to_string())),
        }
    }
}

impl From<PdeError> for PipelineError {
    fn from(e: PdeError) -> Self {
        match e {
            PdeError::Params(_) | PdeError::Shape => PipelineError::Config(ConfigError::Invalid(e.to_string())),
            other => PipelineError::Numerical(other.to_string()),
        }
    }
}

impl From<McfError> for PipelineError {
    fn from(e: McfError) -> Self {
        match e {
            McfError::Rates(r) => r.into(),
            McfError::Unbalanced(_) | McfError::WNotPositive { .. } => PipelineError::Assumption(e.to_string()),
            other => PipelineError::Numerical(other.to_string()),
        }
    }
}

impl From<BgError> for PipelineError {
    fn from(e: BgError) -> Self {
        PipelineError::Numerical(e.to_string())
    }
}

impl From<LatticeError> for PipelineError {
    fn from(e: LatticeError) -> Self {
        PipelineError::Config(ConfigError::Invalid(e.to_string()))
    }
}

impl From<SnapshotError> for PipelineError {
    fn from(e: SnapshotError) -> Self {
        PipelineError::Config(ConfigError::Invalid(e.to_string()))
    }
}

/// Provenance written at the top of every output file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Meta {
    pub hash: String,
    pub seed: u64,
}

impl Meta {
    pub fn header(&self) -> String {
        format!("# gkmc {VERSION} config={} seed={}\n", self.hash, self.seed)
    }

    /// First 12 hex digits of the hash, for file names.
    pub fn tag(&self) -> &str {
        &self.hash[..12]
    }
}

/// A validated config with its rates and homogenized coefficients.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub rates: ResolvedRates,
    pub p: Polynomial,
    pub f: Option<Polynomial>,
    /// Present when `f` is bistable and balanced.
    pub model: Option<SharpInterfaceModel>,
    pub meta: Meta,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let rates = config.resolve_rates()?;
        verify_assumptions(&rates.exchange).into_result()?;
        let p = compute_p(&rates.exchange)?;
        let f = rates.flip.as_ref().map(compute_f);
        let model = f
            .as_ref()
            .and_then(|f| SharpInterfaceModel::from_polynomials(&p, f, config.shape.dim).ok());
        let meta = Meta {
            hash: config.hash(),
            seed: config.seed,
        };
        Ok(Experiment {
            config,
            rates,
            p,
            f,
            model,
            meta,
        })
    }

    pub fn shape(&self, n: usize) -> Result<TorusShape, PipelineError> {
        Ok(self.config.shape_for(n)?)
    }

    pub fn k(&self, n: usize) -> Result<f64, PipelineError> {
        Ok(self.config.k.k(n)?)
    }

    pub fn u0(&self, n: usize) -> Result<DensityField, PipelineError> {
        let alphas = self.model.map(|m| (m.alpha1, m.alpha2));
        Ok(initial_field(&self.config.initial, self.shape(n)?, alphas)?)
    }

    pub fn sim_params(&self, n: usize, times: &[f64]) -> Result<SimParams, PipelineError> {
        Ok(SimParams {
            shape: self.shape(n)?,
            k: if self.rates.flip.is_some() { self.k(n)? } else { 0.0 },
            exchange: self.rates.exchange.clone(),
            flips: self.rates.flip.clone(),
            t_end: times.last().copied().unwrap_or(self.config.t_end),
            snapshot_times: times.to_vec(),
            seed: self.config.seed,
        })
    }

    pub fn pde_params(&self, n: usize, times: &[f64]) -> Result<PdeParams, PipelineError> {
        let f = self.f.clone().unwrap_or_else(Polynomial::zero);
        let k = if self.f.is_some() { self.k(n)? } else { 0.0 };
        let t_end = times.last().copied().unwrap_or(self.config.t_end);
        let mut params = PdeParams::new(self.shape(n)?, k, self.p.clone(), f, t_end, times.to_vec())?;
        if let Some(theta) = self.config.pde.theta {
            params.theta = theta;
        }
        if let Some(sigma) = self.config.pde.sigma {
            params.sigma = sigma;
        }
        params.validate()?;
        Ok(params)
    }

    /// Sphere geometry of the initial profile, if any.
    pub fn sphere(&self) -> Option<(Sphere, Side)> {
        match &self.config.initial {
            Initial::Sphere {
                radius, inside, center, ..
            } => {
                let dim = self.config.shape.dim;
                let sphere = Sphere {
                    center: center.clone().unwrap_or_else(|| vec![0.5; dim]),
                    radius: *radius,
                };
                let side = match inside {
                    Phase::Alpha1 => Side::Alpha1Inside,
                    Phase::Alpha2 => Side::Alpha2Inside,
                };
                Some((sphere, side))
            }
            _ => None,
        }
    }

    /// Runs the KMC replicas for one lattice size.
    pub fn simulate(&self, n: usize, times: &[f64]) -> Result<Vec<Trajectory>, PipelineError> {
        let sim = Simulator::new(&self.sim_params(n, times)?)?;
        Ok(kmc::run_replicas(
            &sim,
            &self.u0(n)?,
            self.config.seed,
            self.config.replicas,
        )?)
    }

    pub fn solve_pde(&self, n: usize, times: &[f64]) -> Result<PdeRun, PipelineError> {
        Ok(pde::run(&self.u0(n)?, &self.pde_params(n, times)?)?)
    }
}

/// Local functions available to the Boltzmann-Gibbs read-out by name.
pub fn named_h(name: &str, dim: usize, flip: Option<&FlipRateSpec>) -> Result<LocalFunction, PipelineError> {
    let origin = vec![0i64; dim];
    match name {
        "occupation" => Ok(LocalFunction::occupation(origin)),
        "pair" => {
            let e = unit(dim, 0);
            Ok(LocalFunction::from_fn(dim, vec![origin.clone(), e.clone()], |o| {
                o.at(&origin) * o.at(&e)
            })?)
        }
        "c_plus" => {
            let default;
            let flip = match flip {
                Some(f) => f,
                None => {
                    default = FlipRateSpec::cubicflip(dim, 0.25, 0.75, 0.5)?;
                    &default
                }
            };
            Ok(flip.c_plus().clone())
        }
        other => Err(PipelineError::Config(ConfigError::Invalid(format!(
            "unknown local function '{other}'"
        )))),
    }
}

/// Block size `round(N^{1/4})`.
pub fn block_size(n: usize) -> usize {
    ((n as f64).powf(0.25).round() as usize).max(1)
}

/// Mean and standard error.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub t: f64,
    pub particle_radius: Option<f64>,
    pub particle_radius_stderr: Option<f64>,
    /// Replicas whose interface was found on every ray.
    pub radius_replicas: usize,
    pub pde_radius: Option<f64>,
    pub law_radius: Option<f64>,
    pub particle_gap: Option<f64>,
    pub pde_gap: Option<f64>,
    pub l1: f64,
    pub particle_density: f64,
    pub particle_density_stderr: f64,
    pub pde_mean: f64,
}

pub const COMPARE_HEADER: &str = "t,particle_radius,particle_radius_stderr,radius_replicas,pde_radius,law_radius,particle_gap,pde_gap,l1,particle_density,particle_density_stderr,pde_mean";

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// Shortest decimal that round-trips.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

impl CompareRow {
    pub fn csv(&self) -> String {
        [
            num(self.t),
            opt(self.particle_radius),
            opt(self.particle_radius_stderr),
            self.radius_replicas.to_string(),
            opt(self.pde_radius),
            opt(self.law_radius),
            opt(self.particle_gap),
            opt(self.pde_gap),
            num(self.l1),
            num(self.particle_density),
            num(self.particle_density_stderr),
            num(self.pde_mean),
        ]
        .join(",")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BgSummary {
    pub h_name: String,
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    pub n: usize,
    pub k: f64,
    pub ell: usize,
    pub replicas: usize,
    pub lambda0: Option<f64>,
    pub rows: Vec<CompareRow>,
    /// Extinction time when the schedule was cut short.
    pub truncated_at: Option<f64>,
    /// Mean `|BG functional| / N^d` over replicas along the PDE path.
    pub bg: Option<BgSummary>,
}

impl CompareReport {
    pub fn csv(&self, meta: &Meta) -> String {
        let mut out = meta.header();
        out.push_str(&format!(
            "# N={} K={} ell={} replicas={} lambda0={}",
            self.n,
            num(self.k),
            self.ell,
            self.replicas,
            opt(self.lambda0)
        ));
        if let Some(t) = self.truncated_at {
            out.push_str(&format!(" truncated_at={}", num(t)));
        }
        if let Some(b) = &self.bg {
            out.push_str(&format!(" bg_{}={} bg_stderr={}", b.h_name, num(b.mean), num(b.stderr)));
        }
        out.push('\n');
        out.push_str(COMPARE_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.csv());
            out.push('\n');
        }
        out
    }

    /// Mean L1 gap over the snapshots after time 0.
    pub fn mean_l1(&self) -> f64 {
        let rows: Vec<f64> = self.rows.iter().filter(|r| r.t > 0.0).map(|r| r.l1).collect();
        if rows.is_empty() {
            self.rows.first().map_or(f64::NAN, |r| r.l1)
        } else {
            rows.iter().sum::<f64>() / rows.len() as f64
        }
    }

    /// Largest `|particle radius - PDE radius|`.
    pub fn max_radius_error(&self) -> Option<f64> {
        self.rows
            .iter()
            .filter_map(|r| Some((r.particle_radius? - r.pde_radius?).abs()))
            .reduce(f64::max)
    }

    /// Mean particle pairing gap over the snapshots where it is defined.
    pub fn mean_particle_gap(&self) -> Option<f64> {
        let gaps: Vec<f64> = self.rows.iter().filter_map(|r| r.particle_gap).collect();
        (!gaps.is_empty()).then(|| gaps.iter().sum::<f64>() / gaps.len() as f64)
    }
}

struct ReplicaReadout {
    radius: Vec<Option<f64>>,
    gap: Vec<Option<f64>>,
    l1: Vec<f64>,
    density: Vec<f64>,
    bg: Option<f64>,
}

/// Particle system, PDE and sphere law for one lattice size.
pub fn pipeline_compare(exp: &Experiment, n: usize) -> Result<CompareReport, PipelineError> {
    let shape = exp.shape(n)?;
    let mut times = exp.config.times();
    let geometry = exp.sphere().filter(|_| exp.model.is_some());
    let mut truncated_at = None;
    if let (Some((sphere, _)), Some(model)) = (&geometry, &exp.model) {
        let ext = model.extinction_time(sphere.radius);
        if times.iter().any(|&t| t >= ext) {
            truncated_at = Some(ext);
            times.retain(|&t| t < ext);
        }
    }
    if times.is_empty() {
        return Err(PipelineError::Numerical(
            "interface vanishes before the first snapshot".into(),
        ));
    }
    let trajectories = exp.simulate(n, &times)?;
    let pde_run = exp.solve_pde(n, &times)?;
    let ell = block_size(n);
    let law: Vec<Option<Sphere>> = times
        .iter()
        .map(|&t| {
            let (sphere, _) = geometry.as_ref()?;
            let r = mcf::sphere_radius_law(sphere.radius, exp.model.as_ref()?, t).ok()?;
            Some(Sphere {
                center: sphere.center.clone(),
                radius: r,
            })
        })
        .collect();
    let pde_fields: Vec<DensityField> = pde_run.snapshots.iter().map(|(_, u)| u.clone()).collect();
    let bg_h = match exp.config.bg.h.first() {
        Some(name) => Some((name.clone(), named_h(name, shape.dim(), exp.rates.flip.as_ref())?)),
        None => None,
    };
    let bg_spec = match (&bg_h, times.len() >= 2) {
        (Some((_, h)), true) => Some(BgSpec::new(
            h.clone(),
            Coefficient::Constant(exp.config.bg.coefficient),
            times.clone(),
        )?),
        _ => None,
    };

    let readouts: Vec<ReplicaReadout> = trajectories
        .par_iter()
        .map(|traj| -> Result<ReplicaReadout, PipelineError> {
            let mut out = ReplicaReadout {
                radius: Vec::new(),
                gap: Vec::new(),
                l1: Vec::new(),
                density: Vec::new(),
                bg: None,
            };
            for (i, (_, cfg)) in traj.snapshots.iter().enumerate() {
                let block = block_average(cfg, ell)?;
                let mut radius = None;
                let mut gap = None;
                if let (Some((sphere, side)), Some(model)) = (&geometry, &exp.model) {
                    radius = mcf::extract_radius(&block, model.alpha_star, &sphere.center).ok();
                    if let Some(s) = &law[i] {
                        gap = Some(mcf::compare_to_chi(&cfg.to_field(), model, s, *side)?);
                    }
                }
                out.radius.push(radius);
                out.gap.push(gap);
                out.l1.push(block.l1_distance(&pde_fields[i]));
                out.density.push(cfg.density());
            }
            if let Some(spec) = &bg_spec {
                let v = bg::bg_functional(traj, spec, UPath::Snapshots(&pde_fields))?;
                out.bg = Some(bg::normalized(v, shape));
            }
            Ok(out)
        })
        .collect::<Result<_, _>>()?;

    let mut rows = Vec::with_capacity(times.len());
    for (i, &t) in times.iter().enumerate() {
        let pde_field = &pde_fields[i];
        let radii: Vec<f64> = readouts.iter().filter_map(|r| r.radius[i]).collect();
        let (particle_radius, particle_radius_stderr) = match radii.len() {
            0 => (None, None),
            1 => (Some(radii[0]), None),
            _ => {
                let (m, s) = mean_stderr(&radii);
                (Some(m), Some(s))
            }
        };
        let (pde_radius, pde_gap) = match (&geometry, &exp.model) {
            (Some((sphere, side)), Some(model)) => (
                mcf::extract_radius(pde_field, model.alpha_star, &sphere.center).ok(),
                law[i]
                    .as_ref()
                    .map(|s| mcf::compare_to_chi(pde_field, model, s, *side))
                    .transpose()?,
            ),
            _ => (None, None),
        };
        let gaps: Option<Vec<f64>> = readouts.iter().map(|r| r.gap[i]).collect();
        let l1: Vec<f64> = readouts.iter().map(|r| r.l1[i]).collect();
        let dens: Vec<f64> = readouts.iter().map(|r| r.density[i]).collect();
        let (particle_density, particle_density_stderr) = mean_stderr(&dens);
        rows.push(CompareRow {
            t,
            particle_radius,
            particle_radius_stderr,
            radius_replicas: radii.len(),
            pde_radius,
            law_radius: law[i].as_ref().map(|s| s.radius),
            particle_gap: gaps.filter(|g| !g.is_empty()).map(|g| mean_stderr(&g).0),
            pde_gap,
            l1: mean_stderr(&l1).0,
            particle_density,
            particle_density_stderr,
            pde_mean: pde_field.mean(),
        });
    }
    let bg = match (&bg_h, readouts.iter().map(|r| r.bg).collect::<Option<Vec<f64>>>()) {
        (Some((name, _)), Some(vals)) => {
            let (mean, stderr) = mean_stderr(&vals);
            Some(BgSummary {
                h_name: name.clone(),
                mean,
                stderr,
            })
        }
        _ => None,
    };
    Ok(CompareReport {
        n,
        k: exp.sim_params(n, &times)?.k,
        ell,
        replicas: exp.config.replicas,
        lambda0: exp.model.map(|m| m.lambda0),
        rows,
        truncated_at,
        bg,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub reports: Vec<CompareReport>,
}

pub const SWEEP_HEADER: &str = "N,K,ell,mean_l1,max_radius_error,mean_particle_gap,bg_normalized";

impl SweepReport {
    pub fn csv(&self, meta: &Meta) -> String {
        let mut out = meta.header();
        out.push_str(SWEEP_HEADER);
        out.push('\n');
        for r in &self.reports {
            out.push_str(
                &[
                    r.n.to_string(),
                    num(r.k),
                    r.ell.to_string(),
                    num(r.mean_l1()),
                    opt(r.max_radius_error()),
                    opt(r.mean_particle_gap()),
                    opt(r.bg.as_ref().map(|b| b.mean)),
                ]
                .join(","),
            );
            out.push('\n');
        }
        out
    }
}

/// `pipeline_compare` for every lattice size of the config, in order.
pub fn sweep(exp: &Experiment) -> Result<SweepReport, PipelineError> {
    let reports = exp
        .config
        .n_values()
        .into_iter()
        .map(|n| pipeline_compare(exp, n))
        .collect::<Result<_, _>>()?;
    Ok(SweepReport { reports })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(initial: &str, n: &str, replicas: usize) -> ExperimentConfig {
        ExperimentConfig::parse(&format!(
            r#"
seed = 3
replicas = {replicas}
t_end = 0.004

[rates]
exchange = "simple"
flip = "cubicflip(0.25,0.75,0.5)"

[shape]
dim = 2
n = {n}

[k]
rule = "fixed"
value = 8.0

[initial]
{initial}

[snapshots]
count = 3
"#
        ))
        .unwrap()
    }

    #[test]
    fn block_sizes() {
        assert_eq!(block_size(64), 3);
        assert_eq!(block_size(128), 3);
        assert_eq!(block_size(16), 2);
        assert_eq!(block_size(256), 4);
    }

    #[test]
    fn constant_profile_tracks_density() {
        let exp = Experiment::new(config("kind = \"constant\"\nvalue = 0.75", "16", 6)).unwrap();
        let report = pipeline_compare(&exp, 16).unwrap();
        assert_eq!(report.rows.len(), 3);
        for r in &report.rows {
            assert!(r.particle_radius.is_none() && r.pde_radius.is_none() && r.law_radius.is_none());
            assert!((r.pde_mean - 0.75).abs() < 1e-12);
            assert!((r.particle_density - 0.75).abs() <= 4.0 * r.particle_density_stderr.max(1e-3));
        }
    }

    #[test]
    fn sphere_report_is_deterministic_and_complete() {
        let exp = Experiment::new(config("kind = \"sphere\"\nradius = 0.3", "32", 2)).unwrap();
        let a = pipeline_compare(&exp, 32).unwrap();
        let b = pipeline_compare(&exp, 32).unwrap();
        assert_eq!(a.csv(&exp.meta), b.csv(&exp.meta));
        assert!(a.rows.iter().all(|r| r.pde_radius.is_some() && r.law_radius.is_some()));
        assert!(a.bg.is_some());
        let text = a.csv(&exp.meta);
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("# gkmc "));
        assert_eq!(lines[2], COMPARE_HEADER);
    }

    #[test]
    fn degenerate_sweep_matches_compare() {
        let exp = Experiment::new(config("kind = \"sphere\"\nradius = 0.3", "16", 2)).unwrap();
        let s = sweep(&exp).unwrap();
        assert_eq!(s.reports.len(), 1);
        assert_eq!(s.reports[0], pipeline_compare(&exp, 16).unwrap());
    }

    #[test]
    fn extinction_truncates() {
        let mut c = config("kind = \"sphere\"\nradius = 0.05", "16", 1);
        c.t_end = 0.004;
        let exp = Experiment::new(c).unwrap();
        let report = pipeline_compare(&exp, 16).unwrap();
        let ext = 0.05f64.powi(2) / 2.0;
        assert_eq!(report.truncated_at, Some(ext));
        assert!(report.rows.iter().all(|r| r.t < ext));
    }

    #[test]
    fn exit_codes() {
        let e: PipelineError = RateError::WrongStability.into();
        assert_eq!(e.exit_code(), 2);
        assert_eq!(PipelineError::Numerical("x".into()).exit_code(), 3);
        assert_eq!(PipelineError::Config(ConfigError::Invalid("x".into())).exit_code(), 1);
    }
}
