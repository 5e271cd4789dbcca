//! Boltzmann-Gibbs functional along trajectories.
//!
//! For a local `h` and a density field `u`,
//! `f_{t,x}(eta) = tau_x h(eta) - h~(u_x) - h~'(u_x)(eta_x - u_x)` with
//! `h~(beta) = E^{nu_beta}[h]`; the functional is
//! `int_0^T sum_x a_{t,x} f_{t,x}(eta(t)) dt`.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::kmc::{self, KmcError, SimParams, Simulator, Trajectory};
use crate::lattice::{
    local_eval, sample_product_with, CompiledLocal, Configuration, DensityField, LatticeError, TorusShape,
};
use crate::poly::Polynomial;
use crate::rates::{bernoulli_expectation, ExchangeRateSpec, LocalFunction};
use crate::rng;

#[derive(Debug, Error)]
pub enum BgError {
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Kmc(#[from] KmcError),
    #[error("snapshot grid does not match the time grid: {0}")]
    Misaligned(String),
    #[error("density {0} is not in (0, 1)")]
    NotInterior(f64),
    #[error("invalid coefficient rule: {0}")]
    Coefficient(String),
}

/// Coefficient rule `a_{t,x}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Coefficient {
    Constant(f64),
    /// `c K^theta u_x(t) / [t (T - t)]^kappa`, evaluated at the midpoint of
    /// each Riemann interval so `kappa > 0` stays finite.
    FromField {
        c: f64,
        k: f64,
        theta: f64,
        kappa: f64,
    },
}

impl Coefficient {
    fn validate(&self) -> Result<(), BgError> {
        match *self {
            Coefficient::Constant(a) if a.is_finite() => Ok(()),
            Coefficient::FromField { c, k, theta, kappa }
                if c.is_finite() && k >= 1.0 && theta.is_finite() && (0.0..1.0).contains(&kappa) =>
            {
                Ok(())
            }
            other => Err(BgError::Coefficient(format!("{other:?}"))),
        }
    }

    fn time_factor(&self, t: f64, t_end: f64) -> f64 {
        match *self {
            Coefficient::Constant(a) => a,
            Coefficient::FromField { c, k, theta, kappa } => {
                let s = t * (t_end - t);
                c * k.powf(theta) / if kappa == 0.0 { 1.0 } else { s.powf(kappa) }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct BgSpec {
    pub h: LocalFunction,
    pub coefficient: Coefficient,
    pub times: Vec<f64>,
}

impl BgSpec {
    pub fn new(h: LocalFunction, coefficient: Coefficient, times: Vec<f64>) -> Result<Self, BgError> {
        coefficient.validate()?;
        if times.len() < 2 || times.windows(2).any(|w| !(w[0] < w[1])) || times[0] < 0.0 {
            return Err(BgError::Misaligned(format!("time grid {times:?}")));
        }
        Ok(BgSpec { h, coefficient, times })
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().expect("validated grid")
    }
}

/// `h~` and `h~'` for a local function.
#[derive(Debug, Clone)]
pub struct Projection {
    pub h_tilde: Polynomial,
    pub h_tilde_prime: Polynomial,
}

impl Projection {
    pub fn new(h: &LocalFunction) -> Self {
        let h_tilde = bernoulli_expectation(h);
        let h_tilde_prime = h_tilde.derivative();
        Projection { h_tilde, h_tilde_prime }
    }

    #[inline]
    pub fn correction(&self, u: f64, eta: f64) -> f64 {
        self.h_tilde.eval(u) + self.h_tilde_prime.eval(u) * (eta - u)
    }
}

/// `f_{t,x}` at one site.
pub fn f_tx(cfg: &Configuration, h: &LocalFunction, u: &DensityField, x: usize) -> Result<f64, BgError> {
    let ux = u.get(x);
    if !(ux > 0.0 && ux < 1.0) {
        return Err(BgError::NotInterior(ux));
    }
    let proj = Projection::new(h);
    Ok(local_eval(h, cfg, x)? - proj.correction(ux, cfg.occupancy(x) as f64))
}

/// `sum_x w_x f_{t,x}(eta)` with a compiled `h`.
fn weighted_sum(
    cfg: &Configuration,
    compiled: &CompiledLocal,
    proj: &Projection,
    u: &DensityField,
    field_weight: bool,
) -> f64 {
    (0..cfg.shape().sites())
        .map(|x| {
            let ux = u.get(x);
            let f = compiled.eval(cfg, x) - proj.correction(ux, cfg.occupancy(x) as f64);
            if field_weight {
                ux * f
            } else {
                f
            }
        })
        .sum()
}

/// Density path for the functional.
#[derive(Debug, Clone, Copy)]
pub enum UPath<'a> {
    Constant(&'a DensityField),
    /// One field per time grid point.
    Snapshots(&'a [DensityField]),
}

impl UPath<'_> {
    fn at(&self, i: usize) -> &DensityField {
        match self {
            UPath::Constant(u) => u,
            UPath::Snapshots(us) => &us[i],
        }
    }
}

/// Left-endpoint Riemann sum of the functional over the snapshot grid.
pub fn bg_functional(traj: &Trajectory, spec: &BgSpec, u: UPath<'_>) -> Result<f64, BgError> {
    bg_functional_snapshots(&traj.snapshots, spec, u)
}

pub fn bg_functional_snapshots(
    snapshots: &[(f64, Configuration)],
    spec: &BgSpec,
    u: UPath<'_>,
) -> Result<f64, BgError> {
    if snapshots.len() != spec.times.len() {
        return Err(BgError::Misaligned(format!(
            "{} snapshots for {} grid points",
            snapshots.len(),
            spec.times.len()
        )));
    }
    for ((t, _), s) in snapshots.iter().zip(&spec.times) {
        if (t - s).abs() > 1e-12 * s.abs().max(1.0) {
            return Err(BgError::Misaligned(format!("snapshot at {t}, grid point {s}")));
        }
    }
    if let UPath::Snapshots(us) = u {
        if us.len() != spec.times.len() {
            return Err(BgError::Misaligned(format!("{} density fields", us.len())));
        }
    }
    let shape = snapshots[0].1.shape();
    for i in 0..spec.times.len() {
        let field = u.at(i);
        if field.shape() != shape {
            return Err(BgError::Misaligned("density field on another torus".into()));
        }
        if let Some(&v) = field.values().iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
            return Err(BgError::NotInterior(v));
        }
    }
    let compiled = CompiledLocal::new(&spec.h, shape)?;
    let proj = Projection::new(&spec.h);
    let field_weight = matches!(spec.coefficient, Coefficient::FromField { .. });
    let t_end = spec.t_end();
    let total = (0..spec.times.len() - 1)
        .into_par_iter()
        .map(|i| {
            let (t0, t1) = (spec.times[i], spec.times[i + 1]);
            let a = spec.coefficient.time_factor(0.5 * (t0 + t1), t_end);
            (t1 - t0) * a * weighted_sum(&snapshots[i].1, &compiled, &proj, u.at(i), field_weight)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    Ok(total)
}

/// `|functional| / N^d`.
pub fn normalized(value: f64, shape: TorusShape) -> f64 {
    value.abs() / shape.sites() as f64
}

/// Functional of a configuration held fixed over `[0, T]`.
pub fn frozen_functional(cfg: &Configuration, spec: &BgSpec, u: &DensityField) -> Result<f64, BgError> {
    let snapshots: Vec<_> = spec.times.iter().map(|&t| (t, cfg.clone())).collect();
    bg_functional_snapshots(&snapshots, spec, UPath::Constant(u))
}

/// Stream tag offset of the frozen-configuration control.
pub const FROZEN_TAG: u64 = 1 << 40;

/// Functionals along `replicas` pure-exchange runs started from `nu_rho`
/// with `u = rho`; one vector per `h`, indexed by replica.
#[allow(clippy::too_many_arguments)]
pub fn stationary_functionals(
    exchange: &ExchangeRateSpec,
    shape: TorusShape,
    rho: f64,
    hs: &[LocalFunction],
    coefficient: Coefficient,
    times: &[f64],
    replicas: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>, BgError> {
    let t_end = *times
        .last()
        .ok_or_else(|| BgError::Misaligned("empty time grid".into()))?;
    let mut params = SimParams::kawasaki(shape, exchange.clone(), t_end, seed);
    params.snapshot_times = times.to_vec();
    let sim = Simulator::new(&params)?;
    let u = DensityField::constant(shape, rho);
    let trajectories = kmc::run_replicas(&sim, &u, seed, replicas)?;
    hs.iter()
        .map(|h| {
            let spec = BgSpec::new(h.clone(), coefficient, times.to_vec())?;
            trajectories
                .iter()
                .map(|traj| bg_functional(traj, &spec, UPath::Constant(&u)))
                .collect()
        })
        .collect()
}

/// Functionals of `samples` independent configurations from `nu_rho`, each
/// held fixed over the time grid.
pub fn frozen_functionals(
    shape: TorusShape,
    rho: f64,
    h: &LocalFunction,
    coefficient: Coefficient,
    times: &[f64],
    samples: usize,
    seed: u64,
) -> Result<Vec<f64>, BgError> {
    let spec = BgSpec::new(h.clone(), coefficient, times.to_vec())?;
    let u = DensityField::constant(shape, rho);
    let tag = FROZEN_TAG + shape.side() as u64;
    (0..samples)
        .into_par_iter()
        .map(|s| {
            let mut rng = rng::stream(seed, tag, s as u64);
            let cfg = sample_product_with(&u, &mut rng)?;
            frozen_functional(&cfg, &spec, &u)
        })
        .collect()
}

/// Root mean square of `functional / N^d` over replicas.
pub fn rms_normalized(values: &[f64], shape: TorusShape) -> f64 {
    let n = shape.sites() as f64;
    (values.iter().map(|v| (v / n).powi(2)).sum::<f64>() / values.len() as f64).sqrt()
}

/// One row of the `bg` CSV.
#[derive(Debug, Clone, Serialize)]
pub struct BgRow {
    pub n: usize,
    pub k: f64,
    pub t: f64,
    pub h_name: String,
    pub functional: f64,
    pub normalized: f64,
}

pub const CSV_HEADER: &str = "N,K,T,h_name,functional,normalized";

impl BgRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{:.17e},{:.17e}",
            self.n, self.k, self.t, self.h_name, self.functional, self.normalized
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::sample_product;
    use crate::rates::{unit, FlipRateSpec};

    fn pair(dim: usize) -> LocalFunction {
        LocalFunction::from_fn(dim, vec![vec![0; dim], unit(dim, 0)], |o| {
            o.at(&vec![0; dim]) * o.at(&unit(dim, 0))
        })
        .unwrap()
    }

    #[test]
    fn occupation_is_linearized_exactly() {
        let shape = TorusShape::new(2, 8).unwrap();
        let h = LocalFunction::occupation(vec![0, 0]);
        let u = DensityField::sample(shape, |v| 0.2 + 0.5 * v[0]);
        let cfg = sample_product(&u, 3).unwrap();
        for x in 0..shape.sites() {
            assert!(f_tx(&cfg, &h, &u, x).unwrap().abs() < 1e-15);
        }
        let spec = BgSpec::new(h, Coefficient::Constant(1.0), vec![0.0, 0.5, 1.0]).unwrap();
        let v = frozen_functional(&cfg, &spec, &u).unwrap();
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn pair_has_mean_zero_under_product_measure() {
        let shape = TorusShape::new(2, 1000).unwrap();
        let beta = 0.3;
        let u = DensityField::constant(shape, beta);
        let cfg = sample_product(&u, 11).unwrap();
        let h = pair(2);
        let compiled = CompiledLocal::new(&h, shape).unwrap();
        let proj = Projection::new(&h);
        let vals: Vec<f64> = (0..shape.sites())
            .map(|x| compiled.eval(&cfg, x) - proj.correction(beta, cfg.occupancy(x) as f64))
            .collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        // neighbouring terms are correlated; a crude bound uses 3x the variance
        assert!(mean.abs() < 4.0 * (3.0 * var / n).sqrt(), "{mean}");
    }

    #[test]
    fn c_plus_on_full_configuration() {
        let shape = TorusShape::new(1, 10).unwrap();
        let flips = FlipRateSpec::cubicflip(1, 0.25, 0.75, 0.5).unwrap();
        let h = flips.c_plus().clone();
        let cfg = Configuration::full(shape);
        let u = DensityField::constant(shape, 0.5);
        let ht = bernoulli_expectation(&h);
        let expected = h.eval_with(|_| true) - ht.eval(0.5) - ht.derivative().eval(0.5) * 0.5;
        let got = f_tx(&cfg, &h, &u, 4).unwrap();
        assert!((got - expected).abs() < 1e-15);
        // c+ = eta_{-1} eta_1 + 3/32, so h~ = b^2 + 3/32 and h~' = 2b
        assert!((got - (1.0 + 3.0 / 32.0 - 0.25 - 3.0 / 32.0 - 0.5)).abs() < 1e-15);
    }

    #[test]
    fn exact_mean_zero_by_enumeration() {
        for beta in [0.1f64, 0.5, 0.77] {
            let h = FlipRateSpec::cubicflip(1, 0.25, 0.75, 0.5).unwrap().c_plus().clone();
            let support: Vec<_> = {
                let mut s = h.support().to_vec();
                if !s.contains(&vec![0]) {
                    s.push(vec![0]);
                }
                s
            };
            let ext = h.extend_to(&support).unwrap();
            let proj = Projection::new(&h);
            let zero = support.iter().position(|o| o == &vec![0]).unwrap();
            let mut mean = 0.0f64;
            for bits in 0..(1usize << support.len()) {
                let ones = bits.count_ones() as i32;
                let p = beta.powi(ones) * (1.0 - beta).powi(support.len() as i32 - ones);
                let eta = ((bits >> zero) & 1) as f64;
                mean += p * (ext.value(bits) - proj.correction(beta, eta));
            }
            assert!(mean.abs() < 1e-14);
        }
    }

    #[test]
    fn linear_in_h() {
        let shape = TorusShape::new(2, 16).unwrap();
        let u = DensityField::constant(shape, 0.4);
        let a = pair(2);
        let b = FlipRateSpec::cubicflip(2, 0.25, 0.75, 0.5).unwrap().c_plus().clone();
        let combo = LocalFunction::combine(&a, &b, |x, y| 2.0 * x - 3.0 * y).unwrap();
        let times = vec![0.0, 0.1, 0.3];
        let cfg = sample_product(&u, 5).unwrap();
        let value = |h: LocalFunction| {
            frozen_functional(
                &cfg,
                &BgSpec::new(h, Coefficient::Constant(1.0), times.clone()).unwrap(),
                &u,
            )
            .unwrap()
        };
        let (va, vb, vc) = (value(a), value(b), value(combo));
        assert!((vc - (2.0 * va - 3.0 * vb)).abs() < 1e-10);
    }

    #[test]
    fn misaligned_grid_is_rejected() {
        let shape = TorusShape::new(1, 8).unwrap();
        let u = DensityField::constant(shape, 0.5);
        let spec = BgSpec::new(pair(1), Coefficient::Constant(1.0), vec![0.0, 1.0]).unwrap();
        let snaps = vec![(0.0, Configuration::empty(shape)), (0.5, Configuration::empty(shape))];
        assert!(matches!(
            bg_functional_snapshots(&snaps, &spec, UPath::Constant(&u)),
            Err(BgError::Misaligned(_))
        ));
        assert!(BgSpec::new(pair(1), Coefficient::Constant(1.0), vec![0.0]).is_err());
    }
}
