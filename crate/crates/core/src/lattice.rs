//! The discrete torus `(Z/NZ)^d`: bit-packed occupancy configurations, real
//! density fields, local-function evaluation, block averages and empirical
//! pairings.
//!
//! Sites are numbered row-major: coordinate 0 is the slowest index, so in
//! `d = 2` site `(x0, x1)` has index `x0 * N + x1`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rates::{LocalFunction, Offset};

#[derive(Debug, Error)]
pub enum LatticeError {
    #[error("support {support:?} does not fit on a torus of side {side}")]
    SupportExceedsTorus { support: Vec<Offset>, side: usize },
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch(TorusShape, TorusShape),
    #[error("block of half-width {ell} exceeds torus side {side}")]
    WindowTooLarge { ell: usize, side: usize },
    #[error("density value {0} outside [0,1]")]
    InvalidDensity(f64),
    #[error("dimension {0} of local function does not match the torus")]
    DimensionMismatch(usize),
    #[error("invalid torus: dimension {dim}, side {side}")]
    InvalidShape { dim: usize, side: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TorusShape {
    dim: usize,
    side: usize,
}

impl TorusShape {
    pub fn new(dim: usize, side: usize) -> Result<Self, LatticeError> {
        if dim == 0 || side < 2 || (side as f64).powi(dim as i32) > u32::MAX as f64 {
            return Err(LatticeError::InvalidShape { dim, side });
        }
        Ok(TorusShape { dim, side })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn sites(&self) -> usize {
        self.side.pow(self.dim as u32)
    }

    /// Index stride of coordinate `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        self.side.pow((self.dim - 1 - axis) as u32)
    }

    pub fn coords(&self, x: usize) -> Vec<usize> {
        let mut c = vec![0; self.dim];
        self.coords_into(x, &mut c);
        c
    }

    pub fn coords_into(&self, mut x: usize, out: &mut [usize]) {
        for axis in (0..self.dim).rev() {
            out[axis] = x % self.side;
            x /= self.side;
        }
    }

    pub fn index(&self, coords: &[usize]) -> usize {
        coords.iter().fold(0, |acc, &c| acc * self.side + c % self.side)
    }

    /// Index of `x + offset` with periodic wrap.
    pub fn offset(&self, x: usize, offset: &[i64]) -> usize {
        let n = self.side as i64;
        let mut c = vec![0; self.dim];
        self.coords_into(x, &mut c);
        c.iter().zip(offset).fold(0usize, |acc, (&xi, &oi)| {
            acc * self.side + (xi as i64 + oi).rem_euclid(n) as usize
        })
    }

    /// Neighbour `x +/- e_axis`.
    pub fn neighbor(&self, x: usize, axis: usize, forward: bool) -> usize {
        let s = self.stride(axis);
        let c = (x / s) % self.side;
        if forward {
            if c + 1 == self.side {
                x + s - self.side * s
            } else {
                x + s
            }
        } else if c == 0 {
            x + self.side * s - s
        } else {
            x - s
        }
    }

    /// Whether the offsets land on pairwise distinct sites, i.e. the support
    /// fits inside a translated copy of the torus.
    pub fn admits(&self, support: &[Offset]) -> bool {
        let n = self.side as i64;
        let reduced: Vec<Vec<i64>> = support
            .iter()
            .map(|o| o.iter().map(|c| c.rem_euclid(n)).collect())
            .collect();
        reduced
            .iter()
            .enumerate()
            .all(|(i, a)| a.len() == self.dim && !reduced[..i].contains(a))
    }

    /// Macroscopic position `x / N` of a site.
    pub fn point(&self, x: usize) -> Vec<f64> {
        self.coords(x)
            .into_iter()
            .map(|c| c as f64 / self.side as f64)
            .collect()
    }
}

/// Occupancy field `eta in {0,1}^{T_N^d}`, one bit per site.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Configuration {
    shape: TorusShape,
    bits: Vec<u64>,
}

impl Configuration {
    pub fn empty(shape: TorusShape) -> Self {
        Configuration {
            shape,
            bits: vec![0; shape.sites().div_ceil(64)],
        }
    }

    pub fn full(shape: TorusShape) -> Self {
        let mut c = Configuration::empty(shape);
        for x in 0..shape.sites() {
            c.set(x, true);
        }
        c
    }

    pub fn from_fn(shape: TorusShape, f: impl Fn(usize) -> bool) -> Self {
        let mut c = Configuration::empty(shape);
        for x in 0..shape.sites() {
            if f(x) {
                c.set(x, true);
            }
        }
        c
    }

    /// Configuration whose site `x` holds bit `x` of `state` (tiny tori only).
    pub fn from_state(shape: TorusShape, state: u64) -> Self {
        Configuration::from_fn(shape, |x| (state >> x) & 1 == 1)
    }

    /// Inverse of [`Configuration::from_state`].
    pub fn to_state(&self) -> u64 {
        debug_assert!(self.shape.sites() <= 64);
        self.bits.first().copied().unwrap_or(0)
    }

    pub fn shape(&self) -> TorusShape {
        self.shape
    }

    #[inline]
    pub fn get(&self, x: usize) -> bool {
        (self.bits[x >> 6] >> (x & 63)) & 1 == 1
    }

    #[inline]
    pub fn occupancy(&self, x: usize) -> u8 {
        ((self.bits[x >> 6] >> (x & 63)) & 1) as u8
    }

    #[inline]
    pub fn set(&mut self, x: usize, v: bool) {
        let mask = 1u64 << (x & 63);
        if v {
            self.bits[x >> 6] |= mask;
        } else {
            self.bits[x >> 6] &= !mask;
        }
    }

    #[inline]
    pub fn flip(&mut self, x: usize) {
        self.bits[x >> 6] ^= 1u64 << (x & 63);
    }

    /// `eta -> eta^{x,y}`.
    #[inline]
    pub fn swap(&mut self, x: usize, y: usize) {
        if self.get(x) != self.get(y) {
            self.flip(x);
            self.flip(y);
        }
    }

    /// Particle number.
    pub fn count(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn density(&self) -> f64 {
        self.count() as f64 / self.shape.sites() as f64
    }

    /// `tau_z eta`: the result at `y` is the occupancy of `self` at `y + z`.
    pub fn translated(&self, z: &[i64]) -> Self {
        Configuration::from_fn(self.shape, |y| self.get(self.shape.offset(y, z)))
    }

    /// `1 - eta`.
    pub fn complement(&self) -> Self {
        Configuration::from_fn(self.shape, |x| !self.get(x))
    }

    pub fn to_field(&self) -> DensityField {
        DensityField {
            shape: self.shape,
            values: (0..self.shape.sites()).map(|x| self.occupancy(x) as f64).collect(),
        }
    }

    /// Packed bytes: site `x` is bit `x % 8` of byte `x / 8`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.shape.sites().div_ceil(8);
        self.bits.iter().flat_map(|w| w.to_le_bytes()).take(n).collect()
    }

    pub fn from_bytes(shape: TorusShape, bytes: &[u8]) -> Option<Self> {
        if bytes.len() != shape.sites().div_ceil(8) {
            return None;
        }
        let mut c = Configuration::empty(shape);
        for (i, chunk) in bytes.chunks(8).enumerate() {
            let mut buf = [0u8; 8];
            buf[..chunk.len()].copy_from_slice(chunk);
            c.bits[i] = u64::from_le_bytes(buf);
        }
        let extra = c.bits.len() * 64 - shape.sites();
        if extra > 0 {
            let last = c.bits.len() - 1;
            c.bits[last] &= u64::MAX >> extra;
        }
        Some(c)
    }
}

/// Real-valued field on the torus.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    shape: TorusShape,
    values: Vec<f64>,
}

impl DensityField {
    pub fn new(shape: TorusShape, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), shape.sites(), "field length must equal site count");
        DensityField { shape, values }
    }

    pub fn constant(shape: TorusShape, c: f64) -> Self {
        DensityField {
            shape,
            values: vec![c; shape.sites()],
        }
    }

    /// Samples `u(x / N)` at every grid point.
    pub fn sample(shape: TorusShape, u: impl Fn(&[f64]) -> f64) -> Self {
        DensityField {
            shape,
            values: (0..shape.sites()).map(|x| u(&shape.point(x))).collect(),
        }
    }

    /// Builds from integer site coordinates.
    pub fn from_sites(shape: TorusShape, u: impl Fn(&[usize]) -> f64) -> Self {
        DensityField {
            shape,
            values: (0..shape.sites()).map(|x| u(&shape.coords(x))).collect(),
        }
    }

    pub fn shape(&self) -> TorusShape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, x: usize) -> f64 {
        self.values[x]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        DensityField {
            shape: self.shape,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `y -> u(y + z)`.
    pub fn translated(&self, z: &[i64]) -> Self {
        DensityField {
            shape: self.shape,
            values: (0..self.shape.sites())
                .map(|y| self.values[self.shape.offset(y, z)])
                .collect(),
        }
    }

    /// `N^{-d} sum_x |u(x) - v(x)|`.
    pub fn l1_distance(&self, other: &DensityField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / self.values.len() as f64
    }

    pub fn check_unit_interval(&self) -> Result<(), LatticeError> {
        match self.values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            Some(&v) => Err(LatticeError::InvalidDensity(v)),
            None => Ok(()),
        }
    }
}

/// `h(tau_x eta)`.
pub fn local_eval(h: &LocalFunction, cfg: &Configuration, x: usize) -> Result<f64, LatticeError> {
    let shape = cfg.shape();
    if h.dim() != shape.dim() {
        return Err(LatticeError::DimensionMismatch(h.dim()));
    }
    if !shape.admits(h.support()) {
        return Err(LatticeError::SupportExceedsTorus {
            support: h.support().to_vec(),
            side: shape.side(),
        });
    }
    Ok(h.eval_with(|o| cfg.get(shape.offset(x, o))))
}

/// A local function bound to one torus: the sites read around every `x` are
/// precomputed, so evaluation is a handful of bit reads and one table lookup.
#[derive(Debug, Clone)]
pub struct CompiledLocal {
    width: usize,
    sites: Vec<u32>,
    table: Vec<f64>,
}

impl CompiledLocal {
    pub fn new(h: &LocalFunction, shape: TorusShape) -> Result<Self, LatticeError> {
        if h.dim() != shape.dim() {
            return Err(LatticeError::DimensionMismatch(h.dim()));
        }
        if !shape.admits(h.support()) {
            return Err(LatticeError::SupportExceedsTorus {
                support: h.support().to_vec(),
                side: shape.side(),
            });
        }
        let width = h.support().len();
        let mut sites = Vec::with_capacity(width * shape.sites());
        for x in 0..shape.sites() {
            for o in h.support() {
                sites.push(shape.offset(x, o) as u32);
            }
        }
        Ok(CompiledLocal {
            width,
            sites,
            table: h.table().to_vec(),
        })
    }

    #[inline]
    pub fn eval(&self, cfg: &Configuration, x: usize) -> f64 {
        let base = x * self.width;
        let mut idx = 0usize;
        for k in 0..self.width {
            idx |= (cfg.occupancy(self.sites[base + k] as usize) as usize) << k;
        }
        self.table[idx]
    }

    /// Evaluation on a configuration packed into the low bits of `state`.
    #[inline]
    pub fn eval_state(&self, state: u64, x: usize) -> f64 {
        let base = x * self.width;
        let mut idx = 0usize;
        for k in 0..self.width {
            idx |= (((state >> self.sites[base + k]) & 1) as usize) << k;
        }
        self.table[idx]
    }

    pub fn max_value(&self) -> f64 {
        self.table.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Independent `Bernoulli(u(x))` occupancies.
pub fn sample_product(u: &DensityField, seed: u64) -> Result<Configuration, LatticeError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_product_with(u, &mut rng)
}

pub fn sample_product_with<R: Rng + ?Sized>(u: &DensityField, rng: &mut R) -> Result<Configuration, LatticeError> {
    u.check_unit_interval()?;
    let shape = u.shape();
    let mut c = Configuration::empty(shape);
    for x in 0..shape.sites() {
        if rng.gen::<f64>() < u.get(x) {
            c.set(x, true);
        }
    }
    Ok(c)
}

/// Averages over the max-norm box `|y - x| <= ell` (side `2 ell + 1`),
/// computed axis by axis with sliding window sums.
pub fn box_filter(field: &DensityField, ell: usize) -> Result<DensityField, LatticeError> {
    let shape = field.shape();
    let n = shape.side();
    let width = 2 * ell + 1;
    if width > n {
        return Err(LatticeError::WindowTooLarge { ell, side: n });
    }
    let mut cur = field.values.clone();
    let mut next = vec![0.0; cur.len()];
    let mut line = vec![0.0; n];
    for axis in 0..shape.dim() {
        let s = shape.stride(axis);
        for start in 0..shape.sites() {
            if !(start / s).is_multiple_of(n) {
                continue;
            }
            for (j, slot) in line.iter_mut().enumerate() {
                *slot = cur[start + j * s];
            }
            let mut w: f64 = (0..width).map(|k| line[(k + n - ell) % n]).sum();
            for j in 0..n {
                next[start + j * s] = w;
                w += line[(j + ell + 1) % n] - line[(j + n - ell) % n];
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    let norm = (width as f64).powi(shape.dim() as i32);
    for v in &mut cur {
        *v /= norm;
    }
    Ok(DensityField { shape, values: cur })
}

/// Block average `eta^ell`.
pub fn block_average(cfg: &Configuration, ell: usize) -> Result<DensityField, LatticeError> {
    box_filter(&cfg.to_field(), ell)
}

/// `<alpha^N, phi> = N^{-d} sum_x eta_x phi(x/N)` with `phi` pre-sampled.
pub fn empirical_pairing(cfg: &Configuration, phi: &DensityField) -> Result<f64, LatticeError> {
    if cfg.shape() != phi.shape() {
        return Err(LatticeError::ShapeMismatch(cfg.shape(), phi.shape()));
    }
    let sites = cfg.shape().sites();
    let s: f64 = (0..sites).filter(|&x| cfg.get(x)).map(|x| phi.get(x)).sum();
    Ok(s / sites as f64)
}

/// `N^{-d} sum_x u(x) phi(x/N)`, the pairing for a density field.
pub fn field_pairing(u: &DensityField, phi: &DensityField) -> Result<f64, LatticeError> {
    if u.shape() != phi.shape() {
        return Err(LatticeError::ShapeMismatch(u.shape(), phi.shape()));
    }
    Ok(u.values.iter().zip(&phi.values).map(|(a, b)| a * b).sum::<f64>() / u.values.len() as f64)
}
