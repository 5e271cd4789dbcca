//! Rejection kinetic Monte Carlo for the generator `N^2 L_K + K L_G`.
//!
//! Every unordered bond `{x, x + e_i}` carries a clock of rate
//! `N^2 c_i(tau_x eta)` and every site a clock of rate `K c(tau_x eta)`. All
//! clocks are dominated by one global Poisson stream of rate
//! `M = d N^d N^2 cmax_K + N^d K cmax_G`; each arrival proposes a uniformly
//! chosen bond or site and is accepted with probability `rate / bound`.

use rand::distributions::Open01;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::lattice::{sample_product_with, CompiledLocal, Configuration, DensityField, LatticeError, TorusShape};
use crate::rates::{verify_assumptions, ExchangeRateSpec, FlipRateSpec, RateError};
use crate::rng;

#[derive(Debug, Error)]
pub enum KmcError {
    #[error(transparent)]
    Rates(#[from] RateError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error("invalid simulation parameters: {0}")]
    Params(String),
    #[error("rate {rate} exceeds its bound {bound}")]
    BoundExceeded { rate: f64, bound: f64 },
}

#[derive(Debug, Clone)]
pub struct SimParams {
    pub shape: TorusShape,
    pub k: f64,
    pub exchange: ExchangeRateSpec,
    pub flips: Option<FlipRateSpec>,
    pub t_end: f64,
    pub snapshot_times: Vec<f64>,
    pub seed: u64,
}

impl SimParams {
    /// Pure Kawasaki dynamics with snapshots at 0 and `t_end`.
    pub fn kawasaki(shape: TorusShape, exchange: ExchangeRateSpec, t_end: f64, seed: u64) -> Self {
        SimParams {
            shape,
            k: 0.0,
            exchange,
            flips: None,
            t_end,
            snapshot_times: vec![0.0, t_end],
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), KmcError> {
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            return Err(KmcError::Params(format!("t_end = {}", self.t_end)));
        }
        if !(self.k >= 0.0) || !self.k.is_finite() {
            return Err(KmcError::Params(format!("K = {}", self.k)));
        }
        if self.exchange.dim() != self.shape.dim() {
            return Err(KmcError::Params("rate dimension differs from torus dimension".into()));
        }
        if let Some(f) = &self.flips {
            if f.dim() != self.shape.dim() {
                return Err(KmcError::Params(
                    "flip rate dimension differs from torus dimension".into(),
                ));
            }
        }
        let sorted = self.snapshot_times.windows(2).all(|w| w[0] <= w[1]);
        let inside = self.snapshot_times.iter().all(|&s| (0.0..=self.t_end).contains(&s));
        if !sorted || !inside {
            return Err(KmcError::Params(
                "snapshot times must be sorted and within [0, t_end]".into(),
            ));
        }
        Ok(())
    }
}

/// A state change, reported to observers after it has been applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Event {
    Swap { x: usize, y: usize },
    Flip { x: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub snapshots: Vec<(f64, Configuration)>,
    /// Proposals drawn from the bounding Poisson stream.
    pub event_count: u64,
    /// Accepted proposals, no-op swaps included.
    pub accepted_count: u64,
    /// Swap proposals on occupied-vacant bonds.
    pub active_swap_proposals: u64,
    pub active_swap_accepted: u64,
}

impl Trajectory {
    pub fn final_configuration(&self) -> Option<&Configuration> {
        self.snapshots.last().map(|(_, c)| c)
    }
}

/// Rates compiled for one torus, reusable across replicas.
#[derive(Debug, Clone)]
pub struct Simulator {
    shape: TorusShape,
    n2: f64,
    k: f64,
    exchange: Vec<CompiledLocal>,
    cmax_k: f64,
    flip: Option<CompiledLocal>,
    cmax_g: f64,
    neighbors: Vec<u32>,
    t_end: f64,
    snapshot_times: Vec<f64>,
    m_swap: f64,
    m_flip: f64,
}

impl Simulator {
    /// Checks positivity, reversibility and the gradient condition of the
    /// exchange rates, then compiles.
    pub fn new(params: &SimParams) -> Result<Self, KmcError> {
        verify_assumptions(&params.exchange).into_result()?;
        Simulator::new_unverified(params)
    }

    /// Compiles without the structural checks on the exchange rates. Rates
    /// must still be positive. Meant for negative controls.
    pub fn new_unverified(params: &SimParams) -> Result<Self, KmcError> {
        params.validate()?;
        let shape = params.shape;
        let d = shape.dim();
        let n = shape.side() as f64;
        let mut exchange = Vec::with_capacity(d);
        for i in 0..d {
            let support = params.exchange.bond_support(i);
            if !shape.admits(&support) {
                return Err(LatticeError::SupportExceedsTorus {
                    support,
                    side: shape.side(),
                }
                .into());
            }
            exchange.push(CompiledLocal::new(params.exchange.rate(i), shape)?);
        }
        if params.exchange.c_min() <= 0.0 {
            return Err(KmcError::Params("exchange rates must be positive".into()));
        }
        let cmax_k = params.exchange.c_max();
        let (flip, cmax_g) = match &params.flips {
            Some(f) if params.k > 0.0 => {
                let c = f.combined();
                (Some(CompiledLocal::new(&c, shape)?), f.c_max())
            }
            _ => (None, 0.0),
        };
        let sites = shape.sites();
        let mut neighbors = Vec::with_capacity(sites * d);
        for x in 0..sites {
            for i in 0..d {
                neighbors.push(shape.neighbor(x, i, true) as u32);
            }
        }
        let m_swap = d as f64 * sites as f64 * n * n * cmax_k;
        let m_flip = if flip.is_some() {
            sites as f64 * params.k * cmax_g
        } else {
            0.0
        };
        Ok(Simulator {
            shape,
            n2: n * n,
            k: params.k,
            exchange,
            cmax_k,
            flip,
            cmax_g,
            neighbors,
            t_end: params.t_end,
            snapshot_times: params.snapshot_times.clone(),
            m_swap,
            m_flip,
        })
    }

    pub fn shape(&self) -> TorusShape {
        self.shape
    }

    /// Total bounding rate `M`.
    pub fn bound(&self) -> f64 {
        self.m_swap + self.m_flip
    }

    /// Actual rate of swapping the bond `(x, x + e_i)`.
    pub fn swap_rate(&self, cfg: &Configuration, x: usize, i: usize) -> f64 {
        self.n2 * self.exchange[i].eval(cfg, x)
    }

    /// Actual rate of flipping site `x`.
    pub fn flip_rate(&self, cfg: &Configuration, x: usize) -> f64 {
        match &self.flip {
            Some(f) => self.k * f.eval(cfg, x),
            None => 0.0,
        }
    }

    pub fn run(&self, init: Configuration, rng: &mut ChaCha8Rng) -> Result<Trajectory, KmcError> {
        self.run_observed(init, rng, |_, _, _| {})
    }

    /// Runs and calls `observe(time, event, state_after)` on every state change.
    pub fn run_observed(
        &self,
        init: Configuration,
        rng: &mut ChaCha8Rng,
        mut observe: impl FnMut(f64, Event, &Configuration),
    ) -> Result<Trajectory, KmcError> {
        if init.shape() != self.shape {
            return Err(LatticeError::ShapeMismatch(init.shape(), self.shape).into());
        }
        let d = self.shape.dim();
        let sites = self.shape.sites();
        let bonds = sites * d;
        let m = self.bound();
        let mut cfg = init;
        let mut traj = Trajectory {
            snapshots: Vec::with_capacity(self.snapshot_times.len()),
            event_count: 0,
            accepted_count: 0,
            active_swap_proposals: 0,
            active_swap_accepted: 0,
        };
        let mut next = 0;
        let mut t = 0.0;
        if m > 0.0 {
            let swap_share = self.m_swap / m;
            loop {
                let u: f64 = rng.sample(Open01);
                let t_new = t - u.ln() / m;
                while next < self.snapshot_times.len() && self.snapshot_times[next] < t_new {
                    traj.snapshots.push((self.snapshot_times[next], cfg.clone()));
                    next += 1;
                }
                if t_new > self.t_end {
                    break;
                }
                t = t_new;
                traj.event_count += 1;
                if rng.gen::<f64>() < swap_share {
                    let b = rng.gen_range(0..bonds);
                    let (x, i) = (b / d, b % d);
                    let y = self.neighbors[b] as usize;
                    if cfg.get(x) == cfg.get(y) {
                        traj.accepted_count += 1;
                        continue;
                    }
                    traj.active_swap_proposals += 1;
                    let c = self.exchange[i].eval(&cfg, x);
                    if c > self.cmax_k {
                        return Err(KmcError::BoundExceeded {
                            rate: c,
                            bound: self.cmax_k,
                        });
                    }
                    if rng.gen::<f64>() * self.cmax_k < c {
                        cfg.swap(x, y);
                        traj.accepted_count += 1;
                        traj.active_swap_accepted += 1;
                        observe(t, Event::Swap { x, y }, &cfg);
                    }
                } else {
                    let x = rng.gen_range(0..sites);
                    let c = self.flip.as_ref().map_or(0.0, |f| f.eval(&cfg, x));
                    if c > self.cmax_g {
                        return Err(KmcError::BoundExceeded {
                            rate: c,
                            bound: self.cmax_g,
                        });
                    }
                    if rng.gen::<f64>() * self.cmax_g < c {
                        cfg.flip(x);
                        traj.accepted_count += 1;
                        observe(t, Event::Flip { x }, &cfg);
                    }
                }
            }
        }
        while next < self.snapshot_times.len() {
            traj.snapshots.push((self.snapshot_times[next], cfg.clone()));
            next += 1;
        }
        Ok(traj)
    }
}

/// Single trajectory on the stream `(seed, 0, 0)`.
pub fn run(params: &SimParams, init: Configuration) -> Result<Trajectory, KmcError> {
    let sim = Simulator::new(params)?;
    sim.run(init, &mut rng::stream(params.seed, 0, 0))
}

/// Independent replicas started from `nu_{u0}`. Replica `r` uses the stream
/// `(seed, N, r)` for both the initial sample and the dynamics.
pub fn run_replicas(
    sim: &Simulator,
    u0: &DensityField,
    seed: u64,
    replicas: usize,
) -> Result<Vec<Trajectory>, KmcError> {
    let tag = sim.shape().side() as u64;
    (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::stream(seed, tag, r as u64);
            let init = sample_product_with(u0, &mut rng)?;
            sim.run(init, &mut rng)
        })
        .collect()
}

/// Mean of `eta_x eta_{x+e_i}` over all sites and directions.
pub fn pair_correlation(cfg: &Configuration) -> f64 {
    let shape = cfg.shape();
    let d = shape.dim();
    let mut s = 0usize;
    for x in 0..shape.sites() {
        if cfg.get(x) {
            for i in 0..d {
                s += cfg.get(shape.neighbor(x, i, true)) as usize;
            }
        }
    }
    s as f64 / (shape.sites() * d) as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservableDrift {
    pub name: &'static str,
    pub drift: f64,
    pub stderr: f64,
}

impl ObservableDrift {
    pub fn within(&self, sigmas: f64) -> bool {
        self.drift.abs() <= sigmas * self.stderr
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationarityReport {
    pub replicas: usize,
    pub observables: Vec<ObservableDrift>,
    pub passed: bool,
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

/// Runs pure-Kawasaki replicas from `nu_rho` and tests that the
/// snapshot-averaged density stays at `rho` and the nearest-neighbour pair
/// correlation does not drift between the first and last snapshot (4 sigma).
pub fn stationarity_check(params: &SimParams, rho: f64, n_replicas: usize) -> Result<StationarityReport, KmcError> {
    stationarity_with(Simulator::new(params)?, params, rho, n_replicas)
}

/// Same as [`stationarity_check`] without the structural rate checks.
pub fn stationarity_check_unverified(
    params: &SimParams,
    rho: f64,
    n_replicas: usize,
) -> Result<StationarityReport, KmcError> {
    stationarity_with(Simulator::new_unverified(params)?, params, rho, n_replicas)
}

fn stationarity_with(
    sim: Simulator,
    params: &SimParams,
    rho: f64,
    n_replicas: usize,
) -> Result<StationarityReport, KmcError> {
    if params.flips.is_some() && params.k > 0.0 {
        return Err(KmcError::Params("stationarity check needs flips absent".into()));
    }
    if n_replicas < 2 || params.snapshot_times.len() < 2 {
        return Err(KmcError::Params("need two replicas and two snapshots".into()));
    }
    let u = DensityField::constant(params.shape, rho);
    let trajs = run_replicas(&sim, &u, params.seed, n_replicas)?;
    let density: Vec<f64> = trajs
        .iter()
        .map(|t| t.snapshots.iter().map(|(_, c)| c.density()).sum::<f64>() / t.snapshots.len() as f64)
        .collect();
    let pair: Vec<f64> = trajs
        .iter()
        .map(|t| pair_correlation(&t.snapshots.last().unwrap().1) - pair_correlation(&t.snapshots[0].1))
        .collect();
    let (dm, ds) = mean_and_stderr(&density);
    let (pm, ps) = mean_and_stderr(&pair);
    let observables = vec![
        ObservableDrift {
            name: "density",
            drift: dm - rho,
            stderr: ds,
        },
        ObservableDrift {
            name: "pair_correlation",
            drift: pm,
            stderr: ps,
        },
    ];
    let passed = observables.iter().all(|o| o.within(4.0));
    Ok(StationarityReport {
        replicas: n_replicas,
        observables,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::sample_product;

    fn shape(d: usize, n: usize) -> TorusShape {
        TorusShape::new(d, n).unwrap()
    }

    #[test]
    fn kawasaki_conserves_particles() {
        let s = shape(2, 16);
        let params = SimParams {
            snapshot_times: vec![0.0, 0.01, 0.02],
            ..SimParams::kawasaki(s, ExchangeRateSpec::speedchange(2, &[0.4]).unwrap(), 0.02, 3)
        };
        let sim = Simulator::new(&params).unwrap();
        let init = sample_product(&DensityField::constant(s, 0.3), 1).unwrap();
        let n0 = init.count();
        let mut rng = rng::stream(3, 0, 0);
        let mut last_t = 0.0;
        let traj = sim
            .run_observed(init, &mut rng, |t, ev, cfg| {
                assert!(t > last_t);
                last_t = t;
                assert!(matches!(ev, Event::Swap { .. }));
                assert_eq!(cfg.count(), n0);
            })
            .unwrap();
        assert_eq!(traj.snapshots.len(), 3);
        assert!(traj.snapshots.iter().all(|(_, c)| c.count() == n0));
        assert!(traj.event_count > 0);
    }

    #[test]
    fn flips_change_count_by_one() {
        let s = shape(1, 32);
        let params = SimParams {
            shape: s,
            k: 5.0,
            exchange: ExchangeRateSpec::simple(1),
            flips: Some(FlipRateSpec::cubicflip(1, 0.25, 0.75, 0.5).unwrap()),
            t_end: 0.5,
            snapshot_times: vec![0.5],
            seed: 9,
        };
        let sim = Simulator::new(&params).unwrap();
        let init = sample_product(&DensityField::constant(s, 0.5), 2).unwrap();
        let mut count = init.count() as i64;
        let mut flips = 0;
        sim.run_observed(init, &mut rng::stream(9, 0, 0), |_, ev, cfg| {
            let now = cfg.count() as i64;
            match ev {
                Event::Swap { .. } => assert_eq!(now, count),
                Event::Flip { .. } => {
                    assert_eq!((now - count).abs(), 1);
                    flips += 1;
                }
            }
            count = now;
        })
        .unwrap();
        assert!(flips > 0);
    }

    #[test]
    fn reruns_are_bit_identical() {
        let s = shape(2, 8);
        let params = SimParams {
            shape: s,
            k: 2.0,
            exchange: ExchangeRateSpec::speedchange(2, &[0.5]).unwrap(),
            flips: Some(FlipRateSpec::cubicflip(2, 0.25, 0.75, 0.5).unwrap()),
            t_end: 0.1,
            snapshot_times: vec![0.0, 0.05, 0.1],
            seed: 77,
        };
        let init = sample_product(&DensityField::constant(s, 0.5), 4).unwrap();
        let a = run(&params, init.clone()).unwrap();
        let b = run(&params, init).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn acceptance_ratio_respects_lower_bound() {
        let s = shape(1, 64);
        let spec = ExchangeRateSpec::speedchange(1, &[0.5]).unwrap();
        let params = SimParams::kawasaki(s, spec.clone(), 0.02, 5);
        let init = sample_product(&DensityField::constant(s, 0.5), 5).unwrap();
        let t = run(&params, init).unwrap();
        let ratio = t.active_swap_accepted as f64 / t.active_swap_proposals as f64;
        assert!(ratio >= spec.c_min() / spec.c_max() - 0.01, "{ratio}");
    }

    #[test]
    fn refuses_irreversible_rates() {
        let s = shape(1, 8);
        let spec = ExchangeRateSpec::speedchange(1, &[0.3]).unwrap();
        // entry with eta_0 = 1, eta_e = 0 only
        let bad = spec.with_rate_entry(0, 0b0001, 3.0).unwrap();
        let params = SimParams::kawasaki(s, bad, 0.1, 1);
        assert!(matches!(Simulator::new(&params), Err(KmcError::Rates(_))));
    }

    #[test]
    fn rejects_bad_schedules_and_small_tori() {
        let s = shape(1, 3);
        let params = SimParams::kawasaki(s, ExchangeRateSpec::speedchange(1, &[0.3]).unwrap(), 0.1, 1);
        assert!(matches!(Simulator::new(&params), Err(KmcError::Lattice(_))));
        let mut p = SimParams::kawasaki(shape(1, 8), ExchangeRateSpec::simple(1), 0.1, 1);
        p.snapshot_times = vec![0.2];
        assert!(Simulator::new(&p).is_err());
    }

    #[test]
    fn ssep_is_stationary() {
        let params = SimParams {
            snapshot_times: vec![0.0, 0.02, 0.04],
            ..SimParams::kawasaki(shape(2, 16), ExchangeRateSpec::simple(2), 0.04, 11)
        };
        let r = stationarity_check(&params, 0.3, 64).unwrap();
        assert!(r.passed, "{r:?}");
    }
}
