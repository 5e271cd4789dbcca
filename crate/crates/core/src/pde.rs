//! Explicit solver for the discrete reaction-diffusion system
//! `du/dt = Delta^N P(u) + K f(u)` on the torus, with maximum-principle and
//! derivative monitors.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::lattice::{DensityField, TorusShape};
use crate::poly::Polynomial;

pub const DEFAULT_THETA: f64 = 0.45;
pub const DEFAULT_SIGMA: f64 = 0.5;
/// Slack allowed on the maximum principle.
pub const BOUND_SLACK: f64 = 1e-12;

const PAR_THRESHOLD: usize = 1 << 14;

#[derive(Debug, Error)]
pub enum PdeError {
    #[error("time step {dt:e} exceeds the stability bound {bound:e}")]
    StabilityBound { dt: f64, bound: f64 },
    #[error("maximum principle violated at t = {time}: value {value} outside [{lo}, {hi}]")]
    MaximumPrinciple { time: f64, value: f64, lo: f64, hi: f64 },
    #[error("invalid PDE parameters: {0}")]
    Params(String),
    #[error("field shape does not match the parameters")]
    Shape,
}

#[derive(Debug, Clone)]
pub struct PdeParams {
    pub shape: TorusShape,
    pub k: f64,
    pub p: Polynomial,
    pub f: Polynomial,
    /// Safety factor against the monotonicity bound.
    pub theta: f64,
    /// Exponent used only when post-processing monitors.
    pub sigma: f64,
    pub t_end: f64,
    pub snapshot_times: Vec<f64>,
}

impl PdeParams {
    pub fn new(
        shape: TorusShape,
        k: f64,
        p: Polynomial,
        f: Polynomial,
        t_end: f64,
        snapshot_times: Vec<f64>,
    ) -> Result<Self, PdeError> {
        let params = PdeParams {
            shape,
            k,
            p,
            f,
            theta: DEFAULT_THETA,
            sigma: DEFAULT_SIGMA,
            t_end,
            snapshot_times,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), PdeError> {
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(PdeError::Params(format!("theta = {} not in (0, 1]", self.theta)));
        }
        if !(self.k >= 0.0) || !self.k.is_finite() {
            return Err(PdeError::Params(format!("K = {}", self.k)));
        }
        let min_dp = self.p.derivative().min_on(0.0, 1.0, 10_000);
        if !(min_dp > 0.0) {
            return Err(PdeError::Params(format!("P' not positive on [0,1] (min {min_dp})")));
        }
        if !(self.t_end >= 0.0) {
            return Err(PdeError::Params(format!("t_end = {}", self.t_end)));
        }
        let sorted = self.snapshot_times.windows(2).all(|w| w[0] <= w[1]);
        let inside = self.snapshot_times.iter().all(|&s| (0.0..=self.t_end).contains(&s));
        if !sorted || !inside {
            return Err(PdeError::Params(
                "snapshot times must be sorted and within [0, t_end]".into(),
            ));
        }
        Ok(())
    }

    /// Monotonicity bound `1 / (2 d N^2 max P' + K max |f'|)` without the
    /// safety factor.
    pub fn monotone_dt(&self) -> f64 {
        let n = self.shape.side() as f64;
        let dp = self.p.derivative().max_abs_on(0.0, 1.0, 10_000);
        let df = self.f.derivative().max_abs_on(0.0, 1.0, 10_000);
        // grid maxima can undershoot the true maximum by a hair
        let rate = (2.0 * self.shape.dim() as f64 * n * n * dp + self.k * df) * (1.0 + 1e-6);
        1.0 / rate
    }

    /// Largest admissible step `theta * monotone_dt`.
    pub fn max_dt(&self) -> f64 {
        self.theta * self.monotone_dt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonitorSample {
    pub time: f64,
    pub min_u: f64,
    pub max_u: f64,
    pub max_grad: f64,
    pub max_lap: f64,
}

#[derive(Debug, Clone)]
pub struct PdeRun {
    pub snapshots: Vec<(f64, DensityField)>,
    pub monitors: Vec<MonitorSample>,
    pub steps: u64,
    pub bounds: (f64, f64),
}

impl PdeRun {
    pub fn final_field(&self) -> Option<&DensityField> {
        self.snapshots.last().map(|(_, u)| u)
    }

    /// Monitor CSV `time,min_u,max_u,max_grad,max_lap`.
    pub fn monitor_csv(&self) -> String {
        let mut s = String::from("time,min_u,max_u,max_grad,max_lap\n");
        for m in &self.monitors {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                m.time, m.min_u, m.max_u, m.max_grad, m.max_lap
            ));
        }
        s
    }
}

/// Adds `scale * (sum_i v(x+e_i) + v(x-e_i) - 2 v(x))` to `out` over the
/// sites of one slab `x_0 = a`.
fn add_laplacian_slab(shape: TorusShape, v: &[f64], a: usize, out: &mut [f64], scale: f64) {
    let n = shape.side();
    let d = shape.dim();
    let slab = out.len();
    let base = a * slab;
    let up = ((a + 1) % n) * slab;
    let down = ((a + n - 1) % n) * slab;
    for (l, o) in out.iter_mut().enumerate() {
        *o += scale * (v[up + l] + v[down + l] - 2.0 * v[base + l]);
    }
    for axis in 1..d {
        let s = shape.stride(axis);
        let blocks = slab / (n * s);
        for b in 0..blocks {
            let start = b * n * s;
            for c in 0..n {
                let fwd = if c + 1 == n { 0 } else { c + 1 };
                let bwd = if c == 0 { n - 1 } else { c - 1 };
                for inner in 0..s {
                    let l = start + c * s + inner;
                    let lf = start + fwd * s + inner;
                    let lb = start + bwd * s + inner;
                    out[l] += scale * (v[base + lf] + v[base + lb] - 2.0 * v[base + l]);
                }
            }
        }
    }
}

/// `out = u + dt (Delta^N P(u) + K f(u))`, returns `(min, max)` of `out`.
fn euler_into(params: &PdeParams, u: &[f64], p_buf: &mut [f64], out: &mut [f64], dt: f64) -> (f64, f64) {
    let shape = params.shape;
    let n = shape.side() as f64;
    let slab = shape.sites() / shape.side();
    let lap_scale = dt * n * n;
    let kdt = dt * params.k;
    let par = shape.sites() >= PAR_THRESHOLD;
    let eval_p = |(pv, uv): (&mut f64, &f64)| *pv = params.p.eval(*uv);
    if par {
        p_buf.par_iter_mut().zip(u.par_iter()).for_each(eval_p);
    } else {
        p_buf.iter_mut().zip(u.iter()).for_each(eval_p);
    }
    let p_buf: &[f64] = p_buf;
    let update = |(a, chunk): (usize, &mut [f64])| -> (f64, f64) {
        let base = a * slab;
        for (l, o) in chunk.iter_mut().enumerate() {
            let ux = u[base + l];
            *o = ux + kdt * params.f.eval(ux);
        }
        add_laplacian_slab(shape, p_buf, a, chunk, lap_scale);
        chunk.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
    };
    let fold = |a: (f64, f64), b: (f64, f64)| (a.0.min(b.0), a.1.max(b.1));
    if par {
        out.par_chunks_mut(slab)
            .enumerate()
            .map(update)
            .reduce(|| (f64::INFINITY, f64::NEG_INFINITY), fold)
    } else {
        out.chunks_mut(slab)
            .enumerate()
            .map(update)
            .fold((f64::INFINITY, f64::NEG_INFINITY), fold)
    }
}

/// `Delta^N v`.
pub fn discrete_laplacian(v: &DensityField) -> DensityField {
    let shape = v.shape();
    let n = shape.side() as f64;
    let slab = shape.sites() / shape.side();
    let mut out = vec![0.0; shape.sites()];
    for (a, chunk) in out.chunks_mut(slab).enumerate() {
        add_laplacian_slab(shape, v.values(), a, chunk, n * n);
    }
    DensityField::new(shape, out)
}

/// `Delta^N P(u) + K f(u)`.
pub fn rhs(u: &DensityField, params: &PdeParams) -> DensityField {
    let pu = u.map(|v| params.p.eval(v));
    let mut out = discrete_laplacian(&pu).into_values();
    for (o, &v) in out.iter_mut().zip(u.values()) {
        *o += params.k * params.f.eval(v);
    }
    DensityField::new(u.shape(), out)
}

/// `{N (u(x + e_i) - u(x))}_i`, one field per direction.
pub fn discrete_gradient(u: &DensityField) -> Vec<DensityField> {
    let shape = u.shape();
    let n = shape.side() as f64;
    (0..shape.dim())
        .map(|i| {
            let values = (0..shape.sites())
                .map(|x| n * (u.get(shape.neighbor(x, i, true)) - u.get(x)))
                .collect();
            DensityField::new(shape, values)
        })
        .collect()
}

pub fn monitor(u: &DensityField, time: f64) -> MonitorSample {
    let max_abs = |f: &DensityField| f.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    MonitorSample {
        time,
        min_u: u.min(),
        max_u: u.max(),
        max_grad: discrete_gradient(u).iter().map(max_abs).fold(0.0, f64::max),
        max_lap: max_abs(&discrete_laplacian(u)),
    }
}

/// One explicit Euler step.
pub fn step(u: &DensityField, params: &PdeParams, dt: f64) -> Result<DensityField, PdeError> {
    if u.shape() != params.shape {
        return Err(PdeError::Shape);
    }
    let bound = params.max_dt();
    if dt > bound {
        return Err(PdeError::StabilityBound { dt, bound });
    }
    let mut p = vec![0.0; u.values().len()];
    let mut out = vec![0.0; u.values().len()];
    euler_into(params, u.values(), &mut p, &mut out, dt);
    Ok(DensityField::new(u.shape(), out))
}

/// Invariant interval `[min(u-, alpha1), max(u+, alpha2)]`, where
/// `alpha1 <= alpha2` are the outermost zeros of `f` that bracket the initial
/// range. Falls back to the nearest zero of `f` outside `[u-, u+]`, or to
/// `[0, 1]`.
pub fn max_principle_bounds(u0: &DensityField, f: &Polynomial) -> (f64, f64) {
    let (um, up) = (u0.min(), u0.max());
    let roots = f.roots_in(0.0, 1.0, 10_000, 1e-13);
    let lo = if f.eval(um) >= 0.0 {
        um
    } else {
        roots.iter().copied().filter(|&r| r <= um).fold(0.0, f64::max)
    };
    let hi = if f.eval(up) <= 0.0 {
        up
    } else {
        roots.iter().copied().filter(|&r| r >= up).fold(1.0, f64::min)
    };
    if roots.len() == 3 {
        (lo.min(um.min(roots[0])), hi.max(up.max(roots[2])))
    } else {
        (lo, hi)
    }
}

fn check_initial(u0: &DensityField, params: &PdeParams) -> Result<(), PdeError> {
    if u0.shape() != params.shape {
        return Err(PdeError::Shape);
    }
    if u0.check_unit_interval().is_err() {
        return Err(PdeError::Params("initial field outside [0,1]".into()));
    }
    Ok(())
}

/// Steps to `t_end` with the largest uniform step per snapshot interval that
/// satisfies the stability bound, checking the maximum principle every step.
pub fn run(u0: &DensityField, params: &PdeParams) -> Result<PdeRun, PdeError> {
    params.validate()?;
    check_initial(u0, params)?;
    let bounds = max_principle_bounds(u0, &params.f);
    let (lo, hi) = (bounds.0 - BOUND_SLACK, bounds.1 + BOUND_SLACK);
    let dt_max = params.max_dt();
    let mut stops: Vec<f64> = params.snapshot_times.clone();
    if stops.last().is_none_or(|&l| l < params.t_end) {
        stops.push(params.t_end);
    }
    let mut u = u0.values().to_vec();
    let mut next = vec![0.0; u.len()];
    let mut p = vec![0.0; u.len()];
    let mut t = 0.0;
    let mut steps = 0u64;
    let mut run = PdeRun {
        snapshots: Vec::with_capacity(params.snapshot_times.len()),
        monitors: Vec::with_capacity(params.snapshot_times.len() + 1),
        steps: 0,
        bounds,
    };
    if params.snapshot_times.first() != Some(&0.0) {
        run.monitors.push(monitor(u0, 0.0));
    }
    let mut snap_idx = 0;
    for &stop in &stops {
        let span = stop - t;
        if span > 0.0 {
            let n = (span / dt_max).ceil().max(1.0) as u64;
            let dt = span / n as f64;
            for k in 0..n {
                let (mn, mx) = euler_into(params, &u, &mut p, &mut next, dt);
                std::mem::swap(&mut u, &mut next);
                steps += 1;
                if mn < lo || mx > hi {
                    return Err(PdeError::MaximumPrinciple {
                        time: t + (k + 1) as f64 * dt,
                        value: if mn < lo { mn } else { mx },
                        lo: bounds.0,
                        hi: bounds.1,
                    });
                }
            }
            t = stop;
        }
        while snap_idx < params.snapshot_times.len() && params.snapshot_times[snap_idx] <= stop {
            let field = DensityField::new(params.shape, u.clone());
            run.monitors.push(monitor(&field, params.snapshot_times[snap_idx]));
            run.snapshots.push((params.snapshot_times[snap_idx], field));
            snap_idx += 1;
        }
    }
    run.steps = steps;
    Ok(run)
}

/// Integrates to `t_end` with a prescribed step (which must divide `t_end`).
pub fn run_fixed_dt(u0: &DensityField, params: &PdeParams, dt: f64) -> Result<DensityField, PdeError> {
    check_initial(u0, params)?;
    let bound = params.max_dt();
    if dt > bound {
        return Err(PdeError::StabilityBound { dt, bound });
    }
    let n = (params.t_end / dt).round();
    if (n * dt - params.t_end).abs() > 1e-9 * params.t_end.max(dt) {
        return Err(PdeError::Params(format!(
            "dt = {dt} does not divide t_end = {}",
            params.t_end
        )));
    }
    let mut u = u0.values().to_vec();
    let mut next = vec![0.0; u.len()];
    let mut p = vec![0.0; u.len()];
    for _ in 0..n as u64 {
        euler_into(params, &u, &mut p, &mut next, dt);
        std::mem::swap(&mut u, &mut next);
    }
    Ok(DensityField::new(params.shape, u))
}

/// Classical fourth-order Runge-Kutta for a scalar ODE.
pub fn rk4_scalar(f: impl Fn(f64) -> f64, y0: f64, t: f64, steps: usize) -> f64 {
    let h = t / steps as f64;
    let mut y = y0;
    for _ in 0..steps {
        let k1 = f(y);
        let k2 = f(y + 0.5 * h * k1);
        let k3 = f(y + 0.5 * h * k2);
        let k4 = f(y + h * k3);
        y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    y
}

/// A time-dependent density profile with known time derivative.
pub trait DensityPath: Sync {
    fn field(&self, t: f64) -> DensityField;
    fn time_derivative(&self, t: f64) -> DensityField;
}

/// Path given by closures.
pub struct FnPath<F, G> {
    pub field: F,
    pub derivative: G,
}

impl<F, G> DensityPath for FnPath<F, G>
where
    F: Fn(f64) -> DensityField + Sync,
    G: Fn(f64) -> DensityField + Sync,
{
    fn field(&self, t: f64) -> DensityField {
        (self.field)(t)
    }

    fn time_derivative(&self, t: f64) -> DensityField {
        (self.derivative)(t)
    }
}

/// A time-independent profile.
pub struct StaticPath(pub DensityField);

impl DensityPath for StaticPath {
    fn field(&self, _t: f64) -> DensityField {
        self.0.clone()
    }

    fn time_derivative(&self, _t: f64) -> DensityField {
        DensityField::constant(self.0.shape(), 0.0)
    }
}

/// Solution of the discrete system by RK4 on a fixed sub-step grid; `field(t)`
/// integrates whole sub-steps up to the last grid point below `t` and one
/// partial step, so the path is continuous in `t`.
pub struct OdePath {
    params: PdeParams,
    u0: DensityField,
    substep: f64,
}

impl OdePath {
    pub fn new(params: PdeParams, u0: DensityField, substep: f64) -> Result<Self, PdeError> {
        check_initial(&u0, &params)?;
        if !(substep > 0.0) {
            return Err(PdeError::Params("substep must be positive".into()));
        }
        Ok(OdePath { params, u0, substep })
    }

    fn rk4(&self, u: &DensityField, h: f64) -> DensityField {
        let axpy = |a: &DensityField, s: f64, b: &DensityField| {
            DensityField::new(
                a.shape(),
                a.values().iter().zip(b.values()).map(|(x, y)| x + s * y).collect(),
            )
        };
        let k1 = rhs(u, &self.params);
        let k2 = rhs(&axpy(u, 0.5 * h, &k1), &self.params);
        let k3 = rhs(&axpy(u, 0.5 * h, &k2), &self.params);
        let k4 = rhs(&axpy(u, h, &k3), &self.params);
        let values = (0..u.values().len())
            .map(|i| u.get(i) + h / 6.0 * (k1.get(i) + 2.0 * k2.get(i) + 2.0 * k3.get(i) + k4.get(i)))
            .collect();
        DensityField::new(u.shape(), values)
    }
}

impl DensityPath for OdePath {
    fn field(&self, t: f64) -> DensityField {
        let whole = (t / self.substep).floor() as u64;
        let mut u = self.u0.clone();
        for _ in 0..whole {
            u = self.rk4(&u, self.substep);
        }
        let rest = t - whole as f64 * self.substep;
        if rest > 0.0 {
            u = self.rk4(&u, rest);
        }
        u
    }

    fn time_derivative(&self, t: f64) -> DensityField {
        rhs(&self.field(t), &self.params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn cubic() -> Polynomial {
        Polynomial::from_roots(-1.0, &[0.25, 0.5, 0.75])
    }

    fn params(d: usize, n: usize, k: f64, t_end: f64) -> PdeParams {
        PdeParams::new(
            TorusShape::new(d, n).unwrap(),
            k,
            Polynomial::x(),
            cubic(),
            t_end,
            vec![t_end],
        )
        .unwrap()
    }

    #[test]
    fn constant_zero_of_f_is_fixed() {
        let p = params(2, 16, 10.0, 0.01);
        let u = DensityField::constant(p.shape, 0.25);
        let v = step(&u, &p, p.max_dt()).unwrap();
        assert!(v.values().iter().all(|&x| (x - 0.25).abs() < 1e-15));
    }

    #[test]
    fn step_rejects_large_dt() {
        let p = params(1, 32, 1.0, 0.01);
        let u = DensityField::constant(p.shape, 0.4);
        assert!(matches!(
            step(&u, &p, 2.0 * p.max_dt()),
            Err(PdeError::StabilityBound { .. })
        ));
    }

    #[test]
    fn fourier_mode_decays_at_discrete_rate() {
        let n = 32;
        let shape = TorusShape::new(2, n).unwrap();
        let p = PdeParams::new(shape, 0.0, Polynomial::x(), Polynomial::zero(), 1.0, vec![]).unwrap();
        let (k1, k2) = (3.0, 5.0);
        let phase = |c: &[usize]| 2.0 * PI * (k1 * c[0] as f64 + k2 * c[1] as f64) / n as f64;
        let u = DensityField::from_sites(shape, |c| 0.5 + 0.1 * phase(c).cos());
        let dt = p.max_dt();
        let v = step(&u, &p, dt).unwrap();
        let nn = (n * n) as f64;
        let lambda =
            2.0 * nn * (1.0 - (2.0 * PI * k1 / n as f64).cos()) + 2.0 * nn * (1.0 - (2.0 * PI * k2 / n as f64).cos());
        for x in 0..shape.sites() {
            let c = shape.coords(x);
            let expected = 0.5 + 0.1 * (1.0 - dt * lambda) * phase(&c).cos();
            assert!((v.get(x) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_state_follows_scalar_ode() {
        let k = 16.0;
        let t = 1.0 / k;
        let p = params(1, 2, k, t);
        let dt = t / 200_000.0;
        let u = run_fixed_dt(&DensityField::constant(p.shape, 0.9), &p, dt).unwrap();
        let f = cubic();
        let exact = rk4_scalar(|y| k * f.eval(y), 0.9, t, 10_000);
        assert!((u.get(0) - exact).abs() < 1e-6, "{} vs {exact}", u.get(0));
    }

    #[test]
    fn converges_to_stable_zero() {
        let mut p = params(1, 128, 16.0, 8.0);
        p.snapshot_times = vec![2.0, 8.0];
        let run = run(&DensityField::constant(p.shape, 0.6), &p).unwrap();
        let f = cubic();
        let oracle = rk4_scalar(|y| 16.0 * f.eval(y), 0.6, 2.0, 20_000);
        let (_, u2) = &run.snapshots[0];
        assert!(u2.values().iter().all(|&v| (v - oracle).abs() < 1e-3 && v < 0.75));
        let (_, u8) = &run.snapshots[1];
        assert!(u8.values().iter().all(|&v| (v - 0.75).abs() < 1e-6));
    }

    #[test]
    fn gradient_examples() {
        let shape = TorusShape::new(2, 16).unwrap();
        let g = discrete_gradient(&DensityField::constant(shape, 0.3));
        assert!(g.iter().all(|f| f.values().iter().all(|&v| v == 0.0)));
        let u = DensityField::from_sites(shape, |c| c[0] as f64 / 16.0);
        let g = discrete_gradient(&u);
        for x in 0..shape.sites() {
            let c = shape.coords(x);
            if c[0] != 15 {
                assert!((g[0].get(x) - 1.0).abs() < 1e-12);
            }
            assert_eq!(g[1].get(x), 0.0);
        }
        let w = DensityField::from_sites(shape, |c| ((c[0] * 7 + c[1] * 3) % 5) as f64 / 5.0);
        for gi in discrete_gradient(&w) {
            assert!(gi.values().iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn snapshots_and_monitors_follow_schedule() {
        let shape = TorusShape::new(1, 64).unwrap();
        let p = PdeParams::new(shape, 4.0, Polynomial::x(), cubic(), 0.01, vec![0.0, 0.003, 0.01]).unwrap();
        let u0 = DensityField::sample(shape, |v| 0.5 + 0.2 * (2.0 * PI * v[0]).sin());
        let r = run(&u0, &p).unwrap();
        let times: Vec<f64> = r.snapshots.iter().map(|(t, _)| *t).collect();
        assert_eq!(times, vec![0.0, 0.003, 0.01]);
        assert_eq!(r.monitors.len(), 3);
        assert!(r.monitor_csv().starts_with("time,min_u,max_u,max_grad,max_lap\n"));
    }

    #[test]
    fn ode_path_is_consistent() {
        let shape = TorusShape::new(1, 4).unwrap();
        let p = PdeParams::new(shape, 2.0, Polynomial::new(vec![0.0, 1.0, 0.5]), cubic(), 1.0, vec![]).unwrap();
        let u0 = DensityField::sample(shape, |v| 0.5 + 0.2 * (2.0 * PI * v[0]).cos());
        let path = OdePath::new(p, u0, 1e-4).unwrap();
        let h = 1e-5;
        let a = path.field(0.05 - h);
        let b = path.field(0.05 + h);
        let d = path.time_derivative(0.05);
        for x in 0..4 {
            assert!(((b.get(x) - a.get(x)) / (2.0 * h) - d.get(x)).abs() < 1e-6);
        }
    }
}
