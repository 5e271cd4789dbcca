//! Exact forward equation on tiny tori: the generator as a sparse matrix over
//! all `2^{N^d}` configurations, uniformization, relative entropy, Dirichlet
//! forms, the adjoint identities and the entropy-production inequality.
//!
//! A state is the integer whose bit `x` is the occupancy of site `x`.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::kmc::{KmcError, SimParams};
use crate::lattice::{CompiledLocal, DensityField, LatticeError, TorusShape};
use crate::pde::DensityPath;
use crate::rates::{bernoulli_expectation, LocalFunction, RateError};

/// Largest torus (in sites) the dense oracle accepts.
pub const MAX_SITES: usize = 20;
/// Largest canonical box (in sites).
pub const MAX_BOX_SITES: usize = 24;
/// Truncated Poisson mass per uniformization chunk.
const CHUNK_TAIL: f64 = 1e-14;
/// Largest `Lambda * tau` per uniformization chunk.
const CHUNK_SPAN: f64 = 20.0;

#[derive(Debug, Error)]
pub enum MasterError {
    #[error("torus has {0} sites; the dense oracle supports at most {MAX_SITES}")]
    TooLarge(usize),
    #[error("box has {0} sites; at most {MAX_BOX_SITES} are supported")]
    BoxTooLarge(usize),
    #[error("support of h does not fit in the box of half-width {0}")]
    SupportOutsideBox(usize),
    #[error("particle number {j} outside 0..={n}")]
    ParticleNumber { j: usize, n: usize },
    #[error("product measure needs means in (0,1), got {0}")]
    NotInterior(f64),
    #[error("distribution length {got} does not match {expected} states")]
    Length { expected: usize, got: usize },
    #[error("time grid point {0} too close to 0 for a centered difference")]
    Grid(f64),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Rates(#[from] RateError),
    #[error(transparent)]
    Params(#[from] KmcError),
}

/// Off-diagonal rates of the generator. Every move is an involution, so the
/// move list of `eta` also names every state that can jump into `eta`.
#[derive(Debug, Clone)]
pub struct SparseGenerator {
    shape: TorusShape,
    row_ptr: Vec<usize>,
    target: Vec<u32>,
    rate_out: Vec<f64>,
    rate_in: Vec<f64>,
    exit: Vec<f64>,
}

impl SparseGenerator {
    pub fn shape(&self) -> TorusShape {
        self.shape
    }

    pub fn states(&self) -> usize {
        self.exit.len()
    }

    /// `(target, rate)` for every positive-rate move out of `state`.
    pub fn moves(&self, state: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[state]..self.row_ptr[state + 1];
        self.target[r.clone()]
            .iter()
            .zip(&self.rate_out[r])
            .map(|(&t, &q)| (t as usize, q))
    }

    /// Exit rate `-Q(eta, eta)`.
    pub fn exit_rate(&self, state: usize) -> f64 {
        self.exit[state]
    }

    /// `Q(from, to)` (off-diagonal), zero if no move connects them.
    pub fn rate(&self, from: usize, to: usize) -> f64 {
        self.moves(from).filter(|&(t, _)| t == to).map(|(_, q)| q).sum()
    }

    /// Row sums of the full matrix, zero by construction.
    pub fn row_sum(&self, state: usize) -> f64 {
        self.moves(state).map(|(_, q)| q).sum::<f64>() - self.exit[state]
    }

    /// `(mu Q)(eta) = sum_{eta'} mu(eta') Q(eta', eta)`.
    pub fn apply_forward(&self, mu: &[f64], out: &mut [f64]) {
        out.par_iter_mut().enumerate().for_each(|(s, o)| {
            let r = self.row_ptr[s]..self.row_ptr[s + 1];
            let inflow: f64 = self.target[r.clone()]
                .iter()
                .zip(&self.rate_in[r])
                .map(|(&t, &q)| mu[t as usize] * q)
                .sum();
            *o = inflow - self.exit[s] * mu[s];
        });
    }

    /// `(L g)(eta) = sum_{eta'} Q(eta, eta') (g(eta') - g(eta))`.
    pub fn apply_generator(&self, g: &[f64]) -> Vec<f64> {
        (0..self.states())
            .map(|s| self.moves(s).map(|(t, q)| q * (g[t] - g[s])).sum())
            .collect()
    }

    fn max_exit(&self) -> f64 {
        self.exit.iter().copied().fold(0.0, f64::max)
    }
}

fn check_size(shape: TorusShape) -> Result<(), MasterError> {
    if shape.sites() > MAX_SITES {
        Err(MasterError::TooLarge(shape.sites()))
    } else {
        Ok(())
    }
}

/// Generator with exchange clocks scaled by `kawasaki` and flip clocks by
/// `glauber`.
pub fn build_generator_scaled(params: &SimParams, kawasaki: f64, glauber: f64) -> Result<SparseGenerator, MasterError> {
    let shape = params.shape;
    check_size(shape)?;
    params.validate()?;
    let d = shape.dim();
    let sites = shape.sites();
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
    let flip = match &params.flips {
        Some(f) if glauber > 0.0 => Some(CompiledLocal::new(&f.combined(), shape)?),
        _ => None,
    };
    let bonds: Vec<(usize, usize, usize)> = (0..sites)
        .flat_map(|x| (0..d).map(move |i| (x, i)))
        .map(|(x, i)| (x, shape.neighbor(x, i, true), i))
        .collect();
    let states = 1usize << sites;
    let rows: Vec<Vec<(u32, f64, f64)>> = (0..states)
        .into_par_iter()
        .map(|s| {
            let st = s as u64;
            let mut row = Vec::new();
            if kawasaki > 0.0 {
                for &(x, y, i) in &bonds {
                    if ((st >> x) ^ (st >> y)) & 1 == 1 {
                        let t = st ^ (1 << x) ^ (1 << y);
                        let out = kawasaki * exchange[i].eval_state(st, x);
                        let inn = kawasaki * exchange[i].eval_state(t, x);
                        row.push((t as u32, out, inn));
                    }
                }
            }
            if let Some(f) = &flip {
                for x in 0..sites {
                    let t = st ^ (1 << x);
                    let out = glauber * f.eval_state(st, x);
                    let inn = glauber * f.eval_state(t, x);
                    if out > 0.0 || inn > 0.0 {
                        row.push((t as u32, out, inn));
                    }
                }
            }
            row
        })
        .collect();
    let mut gen = SparseGenerator {
        shape,
        row_ptr: Vec::with_capacity(states + 1),
        target: Vec::new(),
        rate_out: Vec::new(),
        rate_in: Vec::new(),
        exit: Vec::with_capacity(states),
    };
    gen.row_ptr.push(0);
    for row in rows {
        let mut exit = 0.0;
        for (t, out, inn) in row {
            gen.target.push(t);
            gen.rate_out.push(out);
            gen.rate_in.push(inn);
            exit += out;
        }
        gen.exit.push(exit);
        gen.row_ptr.push(gen.target.len());
    }
    Ok(gen)
}

/// The generator of `N^2 L_K + K L_G`.
pub fn build_generator(params: &SimParams) -> Result<SparseGenerator, MasterError> {
    let n = params.shape.side() as f64;
    build_generator_scaled(params, n * n, params.k)
}

/// Probability vector over all configurations of a tiny torus.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseDistribution {
    shape: TorusShape,
    probs: Vec<f64>,
}

impl DenseDistribution {
    pub fn new(shape: TorusShape, probs: Vec<f64>) -> Result<Self, MasterError> {
        check_size(shape)?;
        let expected = 1usize << shape.sites();
        if probs.len() != expected {
            return Err(MasterError::Length {
                expected,
                got: probs.len(),
            });
        }
        Ok(DenseDistribution { shape, probs })
    }

    pub fn point_mass(shape: TorusShape, state: usize) -> Result<Self, MasterError> {
        check_size(shape)?;
        let mut probs = vec![0.0; 1 << shape.sites()];
        probs[state] = 1.0;
        Ok(DenseDistribution { shape, probs })
    }

    pub fn uniform(shape: TorusShape) -> Result<Self, MasterError> {
        check_size(shape)?;
        let n = 1usize << shape.sites();
        Ok(DenseDistribution {
            shape,
            probs: vec![1.0 / n as f64; n],
        })
    }

    pub fn from_product(nu: &ProductMeasure) -> Result<Self, MasterError> {
        let shape = nu.shape();
        check_size(shape)?;
        Ok(DenseDistribution {
            shape,
            probs: (0..1usize << shape.sites()).map(|s| nu.prob(s)).collect(),
        })
    }

    /// Empirical law of a list of states.
    pub fn empirical(shape: TorusShape, states: impl IntoIterator<Item = usize>) -> Result<Self, MasterError> {
        check_size(shape)?;
        let mut counts = vec![0u64; 1 << shape.sites()];
        let mut total = 0u64;
        for s in states {
            counts[s] += 1;
            total += 1;
        }
        Ok(DenseDistribution {
            shape,
            probs: counts.iter().map(|&c| c as f64 / total as f64).collect(),
        })
    }

    pub fn shape(&self) -> TorusShape {
        self.shape
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn expectation(&self, g: impl Fn(usize) -> f64) -> f64 {
        self.probs.iter().enumerate().map(|(s, p)| p * g(s)).sum()
    }

    pub fn total_variation(&self, other: &DenseDistribution) -> f64 {
        0.5 * self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }
}

/// Product Bernoulli measure `nu_u` with interior means.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductMeasure {
    u: DensityField,
    log_p: Vec<f64>,
    log_q: Vec<f64>,
}

impl ProductMeasure {
    pub fn new(u: DensityField) -> Result<Self, MasterError> {
        if let Some(&v) = u.values().iter().find(|&&v| !(v > 0.0 && v < 1.0)) {
            return Err(MasterError::NotInterior(v));
        }
        let log_p = u.values().iter().map(|v| v.ln()).collect();
        let log_q = u.values().iter().map(|v| (1.0 - v).ln()).collect();
        Ok(ProductMeasure { u, log_p, log_q })
    }

    pub fn constant(shape: TorusShape, rho: f64) -> Result<Self, MasterError> {
        ProductMeasure::new(DensityField::constant(shape, rho))
    }

    pub fn shape(&self) -> TorusShape {
        self.u.shape()
    }

    pub fn means(&self) -> &DensityField {
        &self.u
    }

    pub fn log_prob(&self, state: usize) -> f64 {
        (0..self.u.values().len())
            .map(|x| {
                if (state >> x) & 1 == 1 {
                    self.log_p[x]
                } else {
                    self.log_q[x]
                }
            })
            .sum()
    }

    pub fn prob(&self, state: usize) -> f64 {
        (0..self.u.values().len())
            .map(|x| {
                let v = self.u.get(x);
                if (state >> x) & 1 == 1 {
                    v
                } else {
                    1.0 - v
                }
            })
            .product()
    }

    /// `nu(to) / nu(from)` from the sites where the two states differ.
    pub fn ratio(&self, from: usize, to: usize) -> f64 {
        let mut diff = from ^ to;
        let mut log = 0.0;
        while diff != 0 {
            let x = diff.trailing_zeros() as usize;
            diff &= diff - 1;
            if (to >> x) & 1 == 1 {
                log += self.log_p[x] - self.log_q[x];
            } else {
                log += self.log_q[x] - self.log_p[x];
            }
        }
        log.exp()
    }
}

/// `mu_0 exp(t Q)` by uniformization, in chunks with `Lambda tau <= 20`; the
/// truncated Poisson tail is below `1e-14` per chunk.
pub fn evolve(mu0: &DenseDistribution, gen: &SparseGenerator, t: f64) -> DenseDistribution {
    assert!(t >= 0.0, "negative evolution time");
    let lambda = gen.max_exit();
    if t == 0.0 || lambda == 0.0 {
        return mu0.clone();
    }
    let chunks = (lambda * t / CHUNK_SPAN).ceil().max(1.0) as usize;
    let tau = t / chunks as f64;
    let lt = lambda * tau;
    let n = mu0.probs.len();
    let mut mu = mu0.probs.clone();
    let mut v = vec![0.0; n];
    let mut qv = vec![0.0; n];
    let mut acc = vec![0.0; n];
    for _ in 0..chunks {
        v.copy_from_slice(&mu);
        let mut w = (-lt).exp();
        let mut mass = w;
        acc.iter_mut().zip(&v).for_each(|(a, b)| *a = w * b);
        let mut k = 0usize;
        while 1.0 - mass > CHUNK_TAIL && k < 10_000 {
            gen.apply_forward(&v, &mut qv);
            v.iter_mut().zip(&qv).for_each(|(a, b)| *a += b / lambda);
            k += 1;
            w *= lt / k as f64;
            mass += w;
            acc.iter_mut().zip(&v).for_each(|(a, b)| *a += w * b);
        }
        std::mem::swap(&mut mu, &mut acc);
    }
    DenseDistribution {
        shape: mu0.shape,
        probs: mu,
    }
}

/// `H(mu | nu) = sum mu log(mu / nu)` with `0 log 0 = 0`.
pub fn relative_entropy(mu: &DenseDistribution, nu: &ProductMeasure) -> f64 {
    mu.probs
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(s, &p)| p * (p.ln() - nu.log_prob(s)))
        .sum()
}

/// `D_N(g; nu) = N^2 sum_bonds int c (grad g)^2 dnu + K sum_x int c_x (grad g)^2 dnu`,
/// read off the generator (each move of each state counted once).
pub fn dirichlet_form(g: &[f64], nu: &ProductMeasure, gen: &SparseGenerator) -> f64 {
    (0..gen.states())
        .map(|s| {
            let local: f64 = gen.moves(s).map(|(t, q)| q * (g[t] - g[s]).powi(2)).sum();
            nu.prob(s) * local
        })
        .sum()
}

/// `(L^{*,nu} 1)(eta) = sum_{eta'} nu(eta') Q(eta', eta) / nu(eta) - exit(eta)`.
pub fn adjoint_one(gen: &SparseGenerator, nu: &ProductMeasure) -> Vec<f64> {
    (0..gen.states())
        .map(|s| {
            let r = gen.row_ptr[s]..gen.row_ptr[s + 1];
            let inflow: f64 = gen.target[r.clone()]
                .iter()
                .zip(&gen.rate_in[r])
                .map(|(&t, &q)| q * nu.ratio(s, t as usize))
                .sum();
            inflow - gen.exit[s]
        })
        .collect()
}

fn chi(u: f64) -> f64 {
    u * (1.0 - u)
}

fn centered(state: usize, x: usize, u: f64) -> f64 {
    ((state >> x) & 1) as f64 - u
}

/// Closed form of `L_K^{*,nu_u} 1` as a sum over ordered nearest-neighbour
/// pairs, with unit prefactor.
pub fn kawasaki_adjoint_closed_form(params: &SimParams, u: &DensityField) -> Result<Vec<f64>, MasterError> {
    let shape = params.shape;
    check_size(shape)?;
    let d = shape.dim();
    let rates: Vec<CompiledLocal> = (0..d)
        .map(|i| CompiledLocal::new(params.exchange.rate(i), shape))
        .collect::<Result<_, _>>()?;
    let sites = shape.sites();
    Ok((0..1usize << sites)
        .map(|s| {
            let st = s as u64;
            let mut total = 0.0;
            for x in 0..sites {
                #[allow(clippy::needless_range_loop)]
                for i in 0..d {
                    for forward in [true, false] {
                        let y = shape.neighbor(x, i, forward);
                        let base = if forward { x } else { y };
                        let c = rates[i].eval_state(st, base);
                        let (ux, uy) = (u.get(x), u.get(y));
                        let (ex, ey) = (centered(s, x, ux), centered(s, y, uy));
                        let du = uy - ux;
                        total += -0.5 * du * du / (chi(ux) * chi(uy)) * c * ex * ey;
                        total += 0.5 * c * (ex / chi(ux) - ey / chi(uy)) * du;
                    }
                }
            }
            total
        })
        .collect())
}

/// Closed form of `L_G^{*,nu_u} 1`, unit prefactor.
pub fn glauber_adjoint_closed_form(params: &SimParams, u: &DensityField) -> Result<Vec<f64>, MasterError> {
    let shape = params.shape;
    check_size(shape)?;
    let sites = shape.sites();
    let Some(flips) = &params.flips else {
        return Ok(vec![0.0; 1 << sites]);
    };
    let plus = CompiledLocal::new(flips.c_plus(), shape)?;
    let minus = CompiledLocal::new(flips.c_minus(), shape)?;
    Ok((0..1usize << sites)
        .map(|s| {
            let st = s as u64;
            (0..sites)
                .map(|x| {
                    let ux = u.get(x);
                    (plus.eval_state(st, x) / ux - minus.eval_state(st, x) / (1.0 - ux)) * centered(s, x, ux)
                })
                .sum()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdjointResiduals {
    pub kawasaki: f64,
    pub glauber: f64,
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Largest state-wise gap between the matrix adjoint `L^{*,nu_u} 1` and the
/// closed forms, separately for the exchange and the flip part.
pub fn adjoint_identity_residuals(params: &SimParams, u: &DensityField) -> Result<AdjointResiduals, MasterError> {
    let nu = ProductMeasure::new(u.clone())?;
    let gk = build_generator_scaled(params, 1.0, 0.0)?;
    let kawasaki = max_diff(&adjoint_one(&gk, &nu), &kawasaki_adjoint_closed_form(params, u)?);
    let glauber = if params.flips.is_some() {
        let gg = build_generator_scaled(params, 0.0, 1.0)?;
        max_diff(&adjoint_one(&gg, &nu), &glauber_adjoint_closed_form(params, u)?)
    } else {
        0.0
    };
    Ok(AdjointResiduals { kawasaki, glauber })
}

/// `log psi_t(eta) = log(nu_t(eta) / m(eta))` with `m` uniform.
pub fn log_psi(nu: &ProductMeasure, state: usize) -> f64 {
    nu.log_prob(state) + nu.shape().sites() as f64 * std::f64::consts::LN_2
}

/// `sum_x du_x/dt (eta_x - u_x) / chi(u_x)` per state.
pub fn log_psi_derivative(u: &DensityField, du: &DensityField) -> Vec<f64> {
    let sites = u.shape().sites();
    (0..1usize << sites)
        .map(|s| {
            (0..sites)
                .map(|x| du.get(x) * centered(s, x, u.get(x)) / chi(u.get(x)))
                .sum()
        })
        .collect()
}

/// Largest gap between the centered difference of `log psi_t` (step `dt`)
/// and the closed form of its time derivative.
pub fn log_psi_time_derivative_residual(path: &dyn DensityPath, t: f64, dt: f64) -> Result<f64, MasterError> {
    let u = path.field(t);
    check_size(u.shape())?;
    let plus = ProductMeasure::new(path.field(t + dt))?;
    let minus = ProductMeasure::new(path.field(t - dt))?;
    let exact = log_psi_derivative(&u, &path.time_derivative(t));
    Ok(exact
        .iter()
        .enumerate()
        .map(|(s, e)| ((log_psi(&plus, s) - log_psi(&minus, s)) / (2.0 * dt) - e).abs())
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EntropyPoint {
    pub t: f64,
    pub entropy: f64,
    /// Centered difference of `H(mu_t | nu_t)` with half the nominal step.
    pub dh_dt: f64,
    pub dirichlet: f64,
    /// `int (L^{*,nu_t} 1 - d/dt log psi_t) dmu_t`.
    pub source: f64,
    pub rhs: f64,
    /// Difference between the centered differences at `h` and `h/2`.
    pub fd_error: f64,
    pub tolerance: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntropyReport {
    pub points: Vec<EntropyPoint>,
    pub holds: bool,
}

impl EntropyReport {
    pub fn csv(&self) -> String {
        let mut s = String::from("t,entropy,dh_dt,dirichlet,source,rhs,tolerance,holds\n");
        for p in &self.points {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                p.t, p.entropy, p.dh_dt, p.dirichlet, p.source, p.rhs, p.tolerance, p.holds
            ));
        }
        s
    }
}

/// Checks `dH/dt <= -D_N(sqrt(dmu/dnu); nu) + int (L^* 1 - d/dt log psi) dmu`
/// along the exact law `mu_t` and `nu_t = nu_{u(t)}` at every grid time.
/// `dH/dt` is a centered difference with step `h / 2`; the tolerance is ten
/// times its Richardson error estimate plus a floor for round-off.
pub fn entropy_production_check(
    params: &SimParams,
    mu0: &DenseDistribution,
    path: &dyn DensityPath,
    t_grid: &[f64],
    h: f64,
) -> Result<EntropyReport, MasterError> {
    let gen = build_generator(params)?;
    let n = params.shape.side() as f64;
    let gk = build_generator_scaled(params, n * n, 0.0)?;
    let gg = if params.flips.is_some() && params.k > 0.0 {
        Some(build_generator_scaled(params, 0.0, params.k)?)
    } else {
        None
    };
    let entropy = |mu: &DenseDistribution, t: f64| -> Result<f64, MasterError> {
        Ok(relative_entropy(mu, &ProductMeasure::new(path.field(t))?))
    };
    let mut points = Vec::with_capacity(t_grid.len());
    let mut mu = mu0.clone();
    let mut now = 0.0;
    for &t in t_grid {
        if t - h < now - 1e-15 || t - h < 0.0 {
            return Err(MasterError::Grid(t));
        }
        mu = evolve(&mu, &gen, t - h - now);
        let step = 0.5 * h;
        let m_minus = mu.clone();
        let m_half_minus = evolve(&m_minus, &gen, step);
        let m_t = evolve(&m_half_minus, &gen, step);
        let m_half_plus = evolve(&m_t, &gen, step);
        let m_plus = evolve(&m_half_plus, &gen, step);
        let d_h = (entropy(&m_plus, t + h)? - entropy(&m_minus, t - h)?) / (2.0 * h);
        let d_half = (entropy(&m_half_plus, t + step)? - entropy(&m_half_minus, t - step)?) / h;
        let fd_error = (d_h - d_half).abs();

        let u = path.field(t);
        let nu = ProductMeasure::new(u.clone())?;
        let sqrt_f: Vec<f64> = m_t
            .probs()
            .iter()
            .enumerate()
            .map(|(s, &p)| (p.max(0.0) / nu.prob(s)).sqrt())
            .collect();
        let dirichlet = dirichlet_form(&sqrt_f, &nu, &gen);
        let mut star = adjoint_one(&gk, &nu);
        if let Some(gg) = &gg {
            for (a, b) in star.iter_mut().zip(adjoint_one(gg, &nu)) {
                *a += b;
            }
        }
        let dpsi = log_psi_derivative(&u, &path.time_derivative(t));
        let source: f64 = m_t
            .probs()
            .iter()
            .zip(star.iter().zip(&dpsi))
            .map(|(p, (a, b))| p * (a - b))
            .sum();
        let rhs = -dirichlet + source;
        let scale = 1.0 + dirichlet.abs() + source.abs() + d_half.abs();
        let tolerance = 10.0 * fd_error / 3.0 + 1e-8 * scale;
        points.push(EntropyPoint {
            t,
            entropy: entropy(&m_t, t)?,
            dh_dt: d_half,
            dirichlet,
            source,
            rhs,
            fd_error,
            tolerance,
            holds: d_half.is_finite() && rhs.is_finite() && d_half <= rhs + tolerance,
        });
        mu = m_t;
        now = t;
    }
    let holds = points.iter().all(|p| p.holds);
    Ok(EntropyReport { points, holds })
}

/// Offsets of the box `{-ell..ell}^d`, in row-major order.
pub fn box_offsets(dim: usize, ell: usize) -> Vec<Vec<i64>> {
    let side = 2 * ell + 1;
    let total = side.pow(dim as u32);
    (0..total)
        .map(|mut k| {
            let mut o = vec![0i64; dim];
            for c in o.iter_mut().rev() {
                *c = (k % side) as i64 - ell as i64;
                k /= side;
            }
            o
        })
        .collect()
}

fn box_positions(h: &LocalFunction, ell: usize) -> Result<(usize, Vec<usize>), MasterError> {
    let offsets = box_offsets(h.dim(), ell);
    if offsets.len() > MAX_BOX_SITES {
        return Err(MasterError::BoxTooLarge(offsets.len()));
    }
    let positions = h.embedding(&offsets).ok_or(MasterError::SupportOutsideBox(ell))?;
    Ok((offsets.len(), positions))
}

/// `E[h | sum_{Lambda_ell} eta = j]` under `nu_{1/2}` (uniform over the
/// configurations of the box with `j` particles), by enumeration.
pub fn canonical_expectation(h: &LocalFunction, ell: usize, j: usize) -> Result<f64, MasterError> {
    let (n, positions) = box_positions(h, ell)?;
    if j > n {
        return Err(MasterError::ParticleNumber { j, n });
    }
    let read = |state: u64| -> usize {
        positions
            .iter()
            .enumerate()
            .fold(0usize, |acc, (k, &p)| acc | ((((state >> p) & 1) as usize) << k))
    };
    if j == 0 {
        return Ok(h.value(read(0)));
    }
    // Gosper's hack: all n-bit words with j ones, in increasing order
    let mut state: u64 = (1u64 << j) - 1;
    let limit = 1u64 << n;
    let (mut sum, mut count) = (0.0, 0u64);
    while state < limit {
        sum += h.value(read(state));
        count += 1;
        let c = state & state.wrapping_neg();
        let r = state + c;
        state = (((r ^ state) >> 2) / c) | r;
    }
    Ok(sum / count as f64)
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// The same conditional expectation from the hypergeometric law of the
/// occupancies on the support of `h`.
pub fn canonical_expectation_hypergeometric(h: &LocalFunction, ell: usize, j: usize) -> Result<f64, MasterError> {
    let (n, _) = box_positions(h, ell)?;
    if j > n {
        return Err(MasterError::ParticleNumber { j, n });
    }
    let m = h.support().len();
    let total = binomial(n, j);
    Ok(h.table()
        .iter()
        .enumerate()
        .map(|(idx, v)| {
            let ones = idx.count_ones() as usize;
            if ones > j || j - ones > n - m {
                0.0
            } else {
                v * binomial(n - m, j - ones) / total
            }
        })
        .sum())
}

/// `max_j |E[h | j] - h~(rho) + chi(rho) h~''(rho) / (2 n)|` with `rho = j/n`
/// and `n = (2 ell + 1)^d`: the error of the second-order equivalence of
/// ensembles.
pub fn equivalence_error(h: &LocalFunction, ell: usize) -> Result<f64, MasterError> {
    let (n, _) = box_positions(h, ell)?;
    let ht = bernoulli_expectation(h);
    let ht2 = ht.derivative().derivative();
    let mut worst: f64 = 0.0;
    for j in 0..=n {
        let rho = j as f64 / n as f64;
        let expansion = ht.eval(rho) - chi(rho) * ht2.eval(rho) / (2.0 * n as f64);
        worst = worst.max((canonical_expectation(h, ell, j)? - expansion).abs());
    }
    Ok(worst)
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rates::{ExchangeRateSpec, FlipRateSpec};

    fn shape(d: usize, n: usize) -> TorusShape {
        TorusShape::new(d, n).unwrap()
    }

    fn full_params(n: usize, k: f64) -> SimParams {
        SimParams {
            shape: shape(1, n),
            k,
            exchange: ExchangeRateSpec::speedchange(1, &[0.5]).unwrap(),
            flips: Some(FlipRateSpec::cubicflip(1, 0.25, 0.75, 0.5).unwrap()),
            t_end: 1.0,
            snapshot_times: vec![],
            seed: 0,
        }
    }

    #[test]
    fn two_site_ssep() {
        let params = SimParams::kawasaki(shape(1, 2), ExchangeRateSpec::simple(1), 1.0, 0);
        let g = build_generator(&params).unwrap();
        assert_eq!(g.states(), 4);
        assert_eq!(g.rate(0b01, 0b10), 2.0 * 4.0);
        assert_eq!(g.rate(0b10, 0b01), 8.0);
        assert_eq!(g.exit_rate(0b00), 0.0);
        assert_eq!(g.exit_rate(0b11), 0.0);
    }

    #[test]
    fn rows_sum_to_zero() {
        let g = build_generator(&full_params(5, 2.0)).unwrap();
        for s in 0..g.states() {
            assert!(g.row_sum(s).abs() < 1e-12);
            assert!(g.moves(s).all(|(_, q)| q >= 0.0));
        }
    }

    #[test]
    fn too_large_is_rejected() {
        let params = SimParams::kawasaki(shape(1, 21), ExchangeRateSpec::simple(1), 1.0, 0);
        assert!(matches!(build_generator(&params), Err(MasterError::TooLarge(21))));
    }

    #[test]
    fn evolve_preserves_mass() {
        let params = full_params(6, 2.0);
        let g = build_generator(&params).unwrap();
        let mu0 = DenseDistribution::point_mass(params.shape, 0b010110).unwrap();
        assert_eq!(evolve(&mu0, &g, 0.0), mu0);
        let mu = evolve(&mu0, &g, 0.5);
        assert!((mu.total() - 1.0).abs() < 1e-12);
        assert!(mu.probs().iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn kawasaki_keeps_bernoulli_invariant() {
        let params = SimParams::kawasaki(shape(1, 6), ExchangeRateSpec::speedchange(1, &[0.5]).unwrap(), 1.0, 0);
        let g = build_generator(&params).unwrap();
        let nu = ProductMeasure::constant(params.shape, 0.3).unwrap();
        let mu0 = DenseDistribution::from_product(&nu).unwrap();
        let mu = evolve(&mu0, &g, 0.7);
        assert!(mu.total_variation(&mu0) < 1e-10);
        assert!(relative_entropy(&mu, &nu).abs() < 1e-10);
    }

    #[test]
    fn ssep_mixes_within_sector() {
        let params = SimParams::kawasaki(shape(1, 6), ExchangeRateSpec::simple(1), 1.0, 0);
        let g = build_generator(&params).unwrap();
        let mu = evolve(&DenseDistribution::point_mass(params.shape, 0b000111).unwrap(), &g, 3.0);
        for s in 0..64usize {
            let expected = if s.count_ones() == 3 { 1.0 / 20.0 } else { 0.0 };
            assert!((mu.probs()[s] - expected).abs() < 1e-8);
        }
    }

    #[test]
    fn relative_entropy_examples() {
        let s = shape(1, 8);
        let nu = ProductMeasure::constant(s, 0.5).unwrap();
        let mu = DenseDistribution::point_mass(s, 255).unwrap();
        assert!((relative_entropy(&mu, &nu) - 8.0 * 2f64.ln()).abs() < 1e-12);
        let same = DenseDistribution::from_product(&nu).unwrap();
        assert!(relative_entropy(&same, &nu).abs() < 1e-12);
    }

    #[test]
    fn dirichlet_form_of_indicator() {
        let params = SimParams::kawasaki(shape(1, 2), ExchangeRateSpec::simple(1), 1.0, 0);
        let g = build_generator(&params).unwrap();
        let nu = ProductMeasure::constant(params.shape, 0.5).unwrap();
        let ind = vec![0.0, 1.0, 0.0, 0.0];
        // both 01 and 10 see a jump of size 1 at rate 8, each with weight 1/4
        assert!((dirichlet_form(&ind, &nu, &g) - 4.0).abs() < 1e-12);
        assert_eq!(dirichlet_form(&[3.0; 4], &nu, &g), 0.0);
    }

    #[test]
    fn adjoint_identities_hold_on_small_torus() {
        let params = full_params(4, 2.0);
        let u = DensityField::sample(params.shape, |v| {
            0.5 + 0.2 * (2.0 * std::f64::consts::PI * v[0]).sin() + 0.05 * v[0]
        });
        let r = adjoint_identity_residuals(&params, &u).unwrap();
        assert!(r.kawasaki <= 1e-10 && r.glauber <= 1e-10, "{r:?}");
    }

    #[test]
    fn canonical_expectation_examples() {
        let h = LocalFunction::occupation(vec![0]);
        assert!((canonical_expectation(&h, 2, 3).unwrap() - 0.6).abs() < 1e-15);
        let pair = LocalFunction::from_fn(1, vec![vec![0], vec![1]], |o| o.at(&[0]) * o.at(&[1])).unwrap();
        assert!((canonical_expectation(&pair, 1, 2).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        for j in 0..=9 {
            let a = canonical_expectation(&pair, 4, j).unwrap();
            let b = canonical_expectation_hypergeometric(&pair, 4, j).unwrap();
            assert!((a - b).abs() < 1e-14);
        }
        assert!(matches!(
            canonical_expectation(&pair, 0, 0),
            Err(MasterError::SupportOutsideBox(0))
        ));
    }

    #[test]
    fn log_log_slope_of_power_law() {
        let xs = [2.0, 3.0, 4.0, 5.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(-2.0)).collect();
        assert!((log_log_slope(&xs, &ys) + 2.0).abs() < 1e-12);
    }
}
