//! The interface constant `lambda0`, the shrinking-sphere solution of
//! `V = lambda0 * kappa`, step profiles and interface read-out from density
//! fields.

use std::f64::consts::PI;

use serde::Serialize;
use thiserror::Error;

use crate::lattice::{field_pairing, DensityField, TorusShape};
use crate::poly::Polynomial;
use crate::quadrature;
use crate::rates::{check_bistable_balance, RateError};

/// Largest `|A(f)|` accepted as balanced.
pub const BALANCE_TOL: f64 = 1e-10;
/// Nodes per half-interval in the `lambda0` quadrature.
pub const LAMBDA0_NODES: usize = 96;
pub const RAYS_2D: usize = 64;
pub const RAYS_3D: usize = 128;

#[derive(Debug, Error)]
pub enum McfError {
    #[error(transparent)]
    Rates(#[from] RateError),
    #[error("reaction term is not balanced: A(f) = {0:e}")]
    Unbalanced(f64),
    #[error("W is not positive at {alpha} (value {value:e})")]
    WNotPositive { alpha: f64, value: f64 },
    #[error("degenerate W: denominator integral {0:e}")]
    DegenerateW(f64),
    #[error("t = {t} is past the extinction time {extinction}")]
    Extinct { t: f64, extinction: f64 },
    #[error("no crossing of the level set along ray {0}")]
    NoCrossing(usize),
    #[error("interface read-out not available in dimension {0}")]
    Dimension(usize),
    #[error("invalid argument: {0}")]
    Invalid(String),
}

/// `W(alpha) = int_alpha^{alpha2} f P'` with the zeros of `f`.
#[derive(Debug, Clone, PartialEq)]
pub struct WFunction {
    pub w: Polynomial,
    pub alpha1: f64,
    pub alpha_star: f64,
    pub alpha2: f64,
}

impl WFunction {
    /// Largest value of `W` on `[alpha1, alpha2]` and its location.
    pub fn max(&self) -> (f64, f64) {
        (0..=10_000)
            .map(|k| self.alpha1 + (self.alpha2 - self.alpha1) * k as f64 / 10_000.0)
            .map(|a| (a, self.w.eval(a)))
            .fold((self.alpha1, f64::NEG_INFINITY), |m, p| if p.1 > m.1 { p } else { m })
    }
}

pub fn compute_w(p: &Polynomial, f: &Polynomial) -> Result<WFunction, McfError> {
    let report = check_bistable_balance(f, p)?;
    if report.a.abs() > BALANCE_TOL {
        return Err(McfError::Unbalanced(report.a));
    }
    let big_f = (f * &p.derivative()).antiderivative();
    let w = &Polynomial::constant(big_f.eval(report.alpha2)) - &big_f;
    let (a1, a2) = (report.alpha1, report.alpha2);
    for end in [a1, a2] {
        if w.eval(end).abs() > BALANCE_TOL {
            return Err(McfError::Unbalanced(w.eval(end)));
        }
    }
    for k in 1..10_000 {
        let alpha = a1 + (a2 - a1) * k as f64 / 10_000.0;
        let value = w.eval(alpha);
        if !(value > 0.0) {
            return Err(McfError::WNotPositive { alpha, value });
        }
    }
    Ok(WFunction {
        w,
        alpha1: a1,
        alpha_star: report.alpha_star,
        alpha2: a2,
    })
}

/// `int_{alpha1}^{alpha2} g` with `alpha = alpha_i +- L s^2` on each half, so
/// endpoint square-root behaviour of the integrand is smoothed out.
fn endpoint_quadrature(g: impl Fn(f64) -> f64, a1: f64, a2: f64, nodes: usize) -> f64 {
    let mid = 0.5 * (a1 + a2);
    let len = mid - a1;
    let left = quadrature::integrate(|s| g(a1 + len * s * s) * 2.0 * len * s, 0.0, 1.0, nodes);
    let right = quadrature::integrate(|s| g(a2 - len * s * s) * 2.0 * len * s, 0.0, 1.0, nodes);
    left + right
}

/// `lambda0 = int P' sqrt(W) / int sqrt(W)` over `[alpha1, alpha2]`.
pub fn compute_lambda0(p: &Polynomial, f: &Polynomial) -> Result<f64, McfError> {
    let w = compute_w(p, f)?;
    lambda0_from_w(p, &w)
}

pub fn lambda0_from_w(p: &Polynomial, w: &WFunction) -> Result<f64, McfError> {
    let dp = p.derivative();
    let root = |a: f64| w.w.eval(a).max(0.0).sqrt();
    let den = endpoint_quadrature(root, w.alpha1, w.alpha2, LAMBDA0_NODES);
    if !(den > 0.0) {
        return Err(McfError::DegenerateW(den));
    }
    let num = endpoint_quadrature(|a| dp.eval(a) * root(a), w.alpha1, w.alpha2, LAMBDA0_NODES);
    Ok(num / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SharpInterfaceModel {
    pub lambda0: f64,
    pub dim: usize,
    pub alpha1: f64,
    pub alpha_star: f64,
    pub alpha2: f64,
}

impl SharpInterfaceModel {
    pub fn from_polynomials(p: &Polynomial, f: &Polynomial, dim: usize) -> Result<Self, McfError> {
        let w = compute_w(p, f)?;
        Ok(SharpInterfaceModel {
            lambda0: lambda0_from_w(p, &w)?,
            dim,
            alpha1: w.alpha1,
            alpha_star: w.alpha_star,
            alpha2: w.alpha2,
        })
    }

    /// Time at which a sphere of radius `r0` vanishes.
    pub fn extinction_time(&self, r0: f64) -> f64 {
        if self.dim <= 1 {
            f64::INFINITY
        } else {
            r0 * r0 / (2.0 * self.lambda0 * (self.dim - 1) as f64)
        }
    }
}

/// `R(t) = sqrt(R0^2 - 2 lambda0 (d - 1) t)`.
pub fn sphere_radius_law(r0: f64, model: &SharpInterfaceModel, t: f64) -> Result<f64, McfError> {
    let extinction = model.extinction_time(r0);
    if t > extinction {
        return Err(McfError::Extinct { t, extinction });
    }
    let k = 2.0 * model.lambda0 * model.dim.saturating_sub(1) as f64;
    Ok((r0 * r0 - k * t).max(0.0).sqrt())
}

/// Sampled `(time, radius)` pairs.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RadiusSeries {
    points: Vec<(f64, f64)>,
}

impl RadiusSeries {
    pub fn push(&mut self, t: f64, r: f64) -> Result<(), McfError> {
        if r < 0.0 || self.points.last().is_some_and(|&(s, _)| s >= t) {
            return Err(McfError::Invalid(format!("bad radius sample ({t}, {r})")));
        }
        self.points.push((t, r));
        Ok(())
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sphere {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Sphere {
    pub fn centered(dim: usize, radius: f64) -> Self {
        Sphere {
            center: vec![0.5; dim],
            radius,
        }
    }
}

/// Which phase sits inside the interface.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub enum Side {
    #[default]
    Alpha1Inside,
    Alpha2Inside,
}

impl Side {
    pub fn values(self, model: &SharpInterfaceModel) -> (f64, f64) {
        match self {
            Side::Alpha1Inside => (model.alpha1, model.alpha2),
            Side::Alpha2Inside => (model.alpha2, model.alpha1),
        }
    }
}

/// Distance on the unit torus.
pub fn periodic_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = (x - y).rem_euclid(1.0);
            d.min(1.0 - d).powi(2)
        })
        .sum::<f64>()
        .sqrt()
}

/// `chi_Gamma`: the inner value strictly inside the sphere, the outer value
/// elsewhere, sampled at `x / N`.
pub fn step_profile(model: &SharpInterfaceModel, sphere: &Sphere, shape: TorusShape, side: Side) -> DensityField {
    let (inner, outer) = side.values(model);
    DensityField::sample(shape, |v| {
        if periodic_distance(v, &sphere.center) < sphere.radius {
            inner
        } else {
            outer
        }
    })
}

/// Periodic multilinear interpolation at a point of the unit torus.
pub fn interpolate(field: &DensityField, point: &[f64]) -> f64 {
    let shape = field.shape();
    let n = shape.side();
    let d = shape.dim();
    let mut base = vec![0usize; d];
    let mut frac = vec![0.0; d];
    for i in 0..d {
        let g = point[i].rem_euclid(1.0) * n as f64;
        let f = g.floor();
        base[i] = (f as usize) % n;
        frac[i] = g - f;
    }
    let mut value = 0.0;
    let mut corner = vec![0usize; d];
    for mask in 0..(1usize << d) {
        let mut weight = 1.0;
        for i in 0..d {
            let up = (mask >> i) & 1;
            corner[i] = (base[i] + up) % n;
            weight *= if up == 1 { frac[i] } else { 1.0 - frac[i] };
        }
        if weight != 0.0 {
            value += weight * field.get(shape.index(&corner));
        }
    }
    value
}

/// Unit directions used for the radius read-out.
pub fn ray_directions(dim: usize) -> Result<Vec<Vec<f64>>, McfError> {
    match dim {
        1 => Ok(vec![vec![1.0], vec![-1.0]]),
        2 => Ok((0..RAYS_2D)
            .map(|k| {
                let a = 2.0 * PI * k as f64 / RAYS_2D as f64;
                vec![a.cos(), a.sin()]
            })
            .collect()),
        3 => {
            let golden = PI * (3.0 - 5f64.sqrt());
            Ok((0..RAYS_3D)
                .map(|k| {
                    let z = 1.0 - (2.0 * k as f64 + 1.0) / RAYS_3D as f64;
                    let r = (1.0 - z * z).sqrt();
                    let a = golden * k as f64;
                    vec![r * a.cos(), r * a.sin(), z]
                })
                .collect())
        }
        d => Err(McfError::Dimension(d)),
    }
}

/// Crossing radius along one ray from samples `v_k = u(k h) - alpha_star`.
///
/// With `g_m = sum_{k<m} v_k`, the crossing sits at the interior extremum of
/// `g` (the minimum when the ray goes from below to above `alpha_star`, the
/// maximum otherwise); it is then located by linear interpolation between the
/// two bracketing samples. On a monotone profile this is the unique crossing;
/// on a noisy one, isolated excursions across the level far from the
/// interface do not move it.
pub fn ray_crossing(v: &[f64], h: f64) -> Option<f64> {
    let steps = v.len();
    if steps < 2 {
        return None;
    }
    let mut g = 0.0;
    let (mut lo, mut lo_at, mut hi, mut hi_at) = (0.0, 0usize, 0.0, 0usize);
    for (k, vk) in v.iter().enumerate() {
        g += vk;
        if g < lo {
            lo = g;
            lo_at = k + 1;
        }
        if g > hi {
            hi = g;
            hi_at = k + 1;
        }
    }
    let end = g;
    let interior = |m: usize| m >= 1 && m < steps;
    let depth_lo = if interior(lo_at) {
        end.min(0.0) - lo
    } else {
        f64::NEG_INFINITY
    };
    let depth_hi = if interior(hi_at) {
        hi - end.max(0.0)
    } else {
        f64::NEG_INFINITY
    };
    if !(depth_lo > 0.0 || depth_hi > 0.0) {
        return None;
    }
    let m = if depth_lo >= depth_hi { lo_at } else { hi_at };
    let (a, b) = (v[m - 1], v[m]);
    let frac = if a == b { 0.0 } else { a / (a - b) };
    Some(((m - 1) as f64 + frac.clamp(0.0, 1.0)) * h)
}

/// Mean over rays of the radius where the field crosses `alpha_star`, seen
/// from `center`; each ray is sampled every `1/(4N)` up to distance 1/2 with
/// periodic multilinear interpolation.
pub fn extract_radius(field: &DensityField, alpha_star: f64, center: &[f64]) -> Result<f64, McfError> {
    let n = field.shape().side() as f64;
    let h = 0.25 / n;
    let steps = (0.5 / h) as usize;
    let dirs = ray_directions(field.shape().dim())?;
    let mut total = 0.0;
    let mut point = vec![0.0; center.len()];
    let mut v = vec![0.0; steps];
    for (ray, dir) in dirs.iter().enumerate() {
        for (k, vk) in v.iter_mut().enumerate() {
            let r = k as f64 * h;
            for (p, (c, e)) in point.iter_mut().zip(center.iter().zip(dir)) {
                *p = c + r * e;
            }
            *vk = interpolate(field, &point) - alpha_star;
        }
        total += ray_crossing(&v, h).ok_or(McfError::NoCrossing(ray))?;
    }
    Ok(total / dirs.len() as f64)
}

/// The eight low-frequency test functions: `(wave vector, sine?)`.
pub fn test_modes(dim: usize) -> Vec<(Vec<i64>, bool)> {
    let e = |i: usize, k: i64| {
        let mut v = vec![0i64; dim];
        v[i % dim] += k;
        v
    };
    if dim == 1 {
        return vec![
            (e(0, 0), false),
            (e(0, 1), false),
            (e(0, 1), true),
            (e(0, 2), false),
            (e(0, 2), true),
            (e(0, 3), false),
            (e(0, 3), true),
            (e(0, 4), false),
        ];
    }
    let mut diag = e(0, 1);
    diag[1] = 1;
    let mut anti = e(0, 1);
    anti[1] = -1;
    vec![
        (e(0, 0), false),
        (e(0, 1), false),
        (e(0, 1), true),
        (e(1, 1), false),
        (e(1, 1), true),
        (diag, false),
        (anti, false),
        (e(0, 2), false),
    ]
}

/// `phi(v) = cos(2 pi k.v)` or `sin(2 pi k.v)` sampled on the grid.
pub fn test_function(shape: TorusShape, k: &[i64], sine: bool) -> DensityField {
    DensityField::sample(shape, |v| {
        let phase = 2.0 * PI * v.iter().zip(k).map(|(a, b)| a * *b as f64).sum::<f64>();
        if sine {
            phase.sin()
        } else {
            phase.cos()
        }
    })
}

/// `max_phi |<u, phi> - <chi_Gamma, phi>|` over the eight test functions.
pub fn compare_to_chi(
    field: &DensityField,
    model: &SharpInterfaceModel,
    sphere: &Sphere,
    side: Side,
) -> Result<f64, McfError> {
    let shape = field.shape();
    let chi = step_profile(model, sphere, shape, side);
    let mut worst: f64 = 0.0;
    for (k, sine) in test_modes(shape.dim()) {
        let phi = test_function(shape, &k, sine);
        let a = field_pairing(field, &phi).map_err(|e| McfError::Invalid(e.to_string()))?;
        let b = field_pairing(&chi, &phi).map_err(|e| McfError::Invalid(e.to_string()))?;
        worst = worst.max((a - b).abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pde::discrete_laplacian;

    fn symmetric() -> Polynomial {
        Polynomial::from_roots(-1.0, &[0.25, 0.5, 0.75])
    }

    fn model(dim: usize) -> SharpInterfaceModel {
        SharpInterfaceModel::from_polynomials(&Polynomial::x(), &symmetric(), dim).unwrap()
    }

    #[test]
    fn w_for_symmetric_cubic() {
        let w = compute_w(&Polynomial::x(), &symmetric()).unwrap();
        assert!((w.w.eval(0.5) - 1.0 / 1024.0).abs() < 1e-15);
        assert!(w.w.eval(0.75).abs() < 1e-15);
        let n = 1_000_000;
        let h = 0.25 / n as f64;
        let f = symmetric();
        let mid: f64 = (0..n).map(|k| f.eval(0.5 + (k as f64 + 0.5) * h)).sum::<f64>() * h;
        assert!((mid - w.w.eval(0.5)).abs() < 1e-9);
    }

    #[test]
    fn unbalanced_w_is_rejected() {
        let f = Polynomial::from_roots(-1.0, &[0.25, 0.6, 0.75]);
        assert!(matches!(compute_w(&Polynomial::x(), &f), Err(McfError::Unbalanced(_))));
    }

    #[test]
    fn lambda0_is_one_for_linear_p_and_scale_invariant() {
        let l = compute_lambda0(&Polynomial::x(), &symmetric()).unwrap();
        assert!((l - 1.0).abs() < 1e-8);
        let p = Polynomial::new(vec![0.0, 1.0, 0.5]);
        let f = Polynomial::from_roots(-1.0, &[0.25, 61.0 / 120.0, 0.75]);
        let a = compute_lambda0(&p, &f).unwrap();
        let b = compute_lambda0(&p, &f.scale(2.0)).unwrap();
        assert!((a - b).abs() < 1e-8);
    }

    #[test]
    fn sphere_law_examples() {
        let m = model(2);
        assert!((sphere_radius_law(0.3, &m, 0.02).unwrap() - 0.05f64.sqrt()).abs() < 1e-8);
        assert_eq!(sphere_radius_law(0.3, &m, 0.0).unwrap(), 0.3);
        let m3 = SharpInterfaceModel {
            dim: 3,
            lambda0: 1.0,
            ..m
        };
        assert!((m3.extinction_time(0.3) - 0.0225).abs() < 1e-15);
        assert!(sphere_radius_law(0.3, &m3, 0.023).is_err());
        // R R' = -lambda0 (d - 1)
        let (t, h) = (0.01, 1e-6);
        let r = sphere_radius_law(0.3, &m, t).unwrap();
        let dr = (sphere_radius_law(0.3, &m, t + h).unwrap() - sphere_radius_law(0.3, &m, t - h).unwrap()) / (2.0 * h);
        assert!((r * dr + m.lambda0).abs() < 1e-8);
    }

    #[test]
    fn step_profile_examples() {
        let m = model(2);
        let shape = TorusShape::new(2, 128).unwrap();
        let empty = step_profile(&m, &Sphere::centered(2, 0.0), shape, Side::Alpha1Inside);
        assert!(empty.values().iter().all(|&v| v == m.alpha2));
        let disc = step_profile(&m, &Sphere::centered(2, 0.25), shape, Side::Alpha1Inside);
        let inside = disc.values().iter().filter(|&&v| v == m.alpha1).count() as f64 / shape.sites() as f64;
        assert!((inside - PI / 16.0).abs() < 2.0 / 128.0);
        let flipped = step_profile(&m, &Sphere::centered(2, 0.25), shape, Side::Alpha2Inside);
        for x in 0..shape.sites() {
            assert_eq!(disc.get(x) == m.alpha1, flipped.get(x) == m.alpha2);
        }
    }

    #[test]
    fn radius_of_smoothed_step() {
        let m = model(2);
        let n = 128;
        let shape = TorusShape::new(2, n).unwrap();
        let step = step_profile(&m, &Sphere::centered(2, 0.3), shape, Side::Alpha1Inside);
        let lap = discrete_laplacian(&step);
        // one heat step with a stable dt
        let dt = 0.2 / (n * n) as f64;
        let smooth = DensityField::new(
            shape,
            step.values()
                .iter()
                .zip(lap.values())
                .map(|(a, b)| a + dt * b)
                .collect(),
        );
        let r = extract_radius(&smooth, m.alpha_star, &[0.5, 0.5]).unwrap();
        assert!((r - 0.3).abs() < 1.5 / n as f64, "{r}");
    }

    #[test]
    fn radius_of_tanh_profile_in_2d_and_3d() {
        for (d, n) in [(2usize, 128usize), (3, 48)] {
            let shape = TorusShape::new(d, n).unwrap();
            let c = vec![0.5; d];
            let u = DensityField::sample(shape, |v| 0.5 + 0.25 * ((periodic_distance(v, &c) - 0.2) * 40.0).tanh());
            let r = extract_radius(&u, 0.5, &c).unwrap();
            assert!((r - 0.2).abs() < 1.0 / n as f64, "d = {d}: {r}");
        }
        let flat = DensityField::constant(TorusShape::new(2, 32).unwrap(), 0.7);
        assert!(matches!(
            extract_radius(&flat, 0.5, &[0.5, 0.5]),
            Err(McfError::NoCrossing(0))
        ));
    }

    #[test]
    fn ray_crossing_cases() {
        let h = 0.1;
        let v: Vec<f64> = (0..10).map(|k| k as f64 - 4.5).collect();
        assert!((ray_crossing(&v, h).unwrap() - 0.45).abs() < 1e-12);
        let down: Vec<f64> = v.iter().map(|x| -x).collect();
        assert!((ray_crossing(&down, h).unwrap() - 0.45).abs() < 1e-12);
        // a lone excursion deep inside does not move the crossing
        let mut noisy = v.clone();
        noisy[1] = 0.5;
        assert!((ray_crossing(&noisy, h).unwrap() - 0.45).abs() < 1e-12);
        assert!(ray_crossing(&[1.0; 10], h).is_none());
        assert!(ray_crossing(&[-1.0; 10], h).is_none());
    }

    #[test]
    fn compare_to_chi_examples() {
        let m = model(2);
        let shape = TorusShape::new(2, 128).unwrap();
        let s = Sphere::centered(2, 0.2);
        let chi = step_profile(&m, &s, shape, Side::Alpha1Inside);
        assert_eq!(compare_to_chi(&chi, &m, &s, Side::Alpha1Inside).unwrap(), 0.0);
        let bigger = step_profile(&m, &Sphere::centered(2, 0.25), shape, Side::Alpha1Inside);
        let gap = compare_to_chi(&bigger, &m, &s, Side::Alpha1Inside).unwrap();
        // annulus area times alpha2 - alpha1, within the grid error
        let annulus = PI * (0.25f64.powi(2) - 0.2f64.powi(2)) * 0.5;
        assert!(gap >= 0.9 * annulus, "{gap} vs {annulus}");
    }
}
