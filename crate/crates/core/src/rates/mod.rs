//! Exchange and flip rates, their structural checks, and homogenization into
//! the macroscopic polynomials `P` (diffusion) and `f` (reaction).

mod file;
mod local;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::poly::Polynomial;

pub use file::{parse_named_exchange, parse_named_flip, RateFile};
pub use local::{union_support, LocalFunction, Occupancy, Offset, MAX_SUPPORT};

/// Coefficient tolerance for polynomial identities.
pub const IDENTITY_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum RateError {
    #[error("support has {len} sites, at most {max} are supported")]
    SupportTooLarge { len: usize, max: usize },
    #[error("offset has dimension {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("duplicate offset {0:?} in support")]
    DuplicateOffset(Offset),
    #[error("table has {got} entries, expected {expected}")]
    TableLength { expected: usize, got: usize },
    #[error("table contains a non-finite value")]
    NonFinite,
    #[error("support is not contained in the target support")]
    SupportNotContained,
    #[error("creation/annihilation rate depends on the occupancy at the origin")]
    DependsOnOrigin,
    #[error("negative flip rate {0}")]
    NegativeFlipRate(f64),
    #[error("expected {expected} exchange directions, got {got}")]
    DirectionCount { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("assumption violated: {0}")]
    AssumptionViolated(Violation),
    #[error("diffusion polynomial depends on direction {direction}: coefficient mismatch {mismatch:e}")]
    DirectionDependent { direction: usize, mismatch: f64 },
    #[error("P' is not positive on (0,1) (min {0:e})")]
    NonMonotoneP(f64),
    #[error("reaction term has {0} zeros in (0,1), expected 3")]
    WrongRootCount(usize),
    #[error("reaction zeros do not have the stable/unstable/stable pattern")]
    WrongStability,
    #[error("balance integral does not change sign on the alpha* bracket")]
    NoSignChange,
    #[error("rate file: {0}")]
    File(String),
    #[error("unknown named rate spec '{0}'")]
    UnknownName(String),
}

/// Unit vector `e_i` in dimension `dim`.
pub fn unit(dim: usize, i: usize) -> Offset {
    let mut e = vec![0; dim];
    e[i] = 1;
    e
}

fn origin(dim: usize) -> Offset {
    vec![0; dim]
}

fn scaled(e: &[i64], s: i64) -> Offset {
    e.iter().map(|c| c * s).collect()
}

/// Exchange rate `c_{0,e_i}` and gradient witness `h_i` for one direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionRates {
    pub rate: LocalFunction,
    pub witness: LocalFunction,
}

/// Nearest-neighbour exchange rates, one direction per lattice axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExchangeRateSpec {
    dim: usize,
    directions: Vec<DirectionRates>,
}

impl ExchangeRateSpec {
    pub fn new(dim: usize, directions: Vec<DirectionRates>) -> Result<Self, RateError> {
        if directions.len() != dim {
            return Err(RateError::DirectionCount {
                expected: dim,
                got: directions.len(),
            });
        }
        for d in &directions {
            for f in [&d.rate, &d.witness] {
                if f.dim() != dim {
                    return Err(RateError::DimensionMismatch {
                        expected: dim,
                        got: f.dim(),
                    });
                }
            }
        }
        Ok(ExchangeRateSpec { dim, directions })
    }

    /// `c == 1` with witness `h_i = eta_0`.
    pub fn simple(dim: usize) -> Self {
        let directions = (0..dim)
            .map(|_| DirectionRates {
                rate: LocalFunction::constant(dim, 1.0),
                witness: LocalFunction::occupation(origin(dim)),
            })
            .collect();
        ExchangeRateSpec { dim, directions }
    }

    /// Speed change `c_{0,e_i} = 1 + a_i (eta_{-e_i} + eta_{2e_i})` with
    /// witness `h_i = (a_i+1) eta_0 + a_i (eta_{-e_i} - eta_0)(eta_0 - eta_{e_i})`.
    ///
    /// One coefficient is shared by all directions; otherwise one per direction.
    pub fn speedchange(dim: usize, alphas: &[f64]) -> Result<Self, RateError> {
        let alphas: Vec<f64> = match alphas.len() {
            1 => vec![alphas[0]; dim],
            n if n == dim => alphas.to_vec(),
            n => {
                return Err(RateError::InvalidParameter(format!(
                    "speedchange needs 1 or {dim} coefficients, got {n}"
                )))
            }
        };
        let mut directions = Vec::with_capacity(dim);
        for (i, &a) in alphas.iter().enumerate() {
            if !(a > -0.5) {
                return Err(RateError::InvalidParameter(format!(
                    "speedchange coefficient {a} must exceed -1/2"
                )));
            }
            let o = origin(dim);
            let e = unit(dim, i);
            let back = scaled(&e, -1);
            let fwd2 = scaled(&e, 2);
            let rate = LocalFunction::from_fn(dim, vec![o.clone(), e.clone(), back.clone(), fwd2.clone()], |occ| {
                1.0 + a * (occ.at(&back) + occ.at(&fwd2))
            })?;
            let witness = LocalFunction::from_fn(dim, vec![back.clone(), o.clone(), e.clone()], |occ| {
                let (m, z, p) = (occ.at(&back), occ.at(&o), occ.at(&e));
                (a + 1.0) * z + a * (m - z) * (z - p)
            })?;
            directions.push(DirectionRates { rate, witness });
        }
        Ok(ExchangeRateSpec { dim, directions })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn directions(&self) -> &[DirectionRates] {
        &self.directions
    }

    pub fn rate(&self, i: usize) -> &LocalFunction {
        &self.directions[i].rate
    }

    pub fn witness(&self, i: usize) -> &LocalFunction {
        &self.directions[i].witness
    }

    /// Largest exchange rate over all directions.
    pub fn c_max(&self) -> f64 {
        self.directions
            .iter()
            .map(|d| d.rate.max_value())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Smallest exchange rate over all directions (`c_*`).
    pub fn c_min(&self) -> f64 {
        self.directions
            .iter()
            .map(|d| d.rate.min_value())
            .fold(f64::INFINITY, f64::min)
    }

    /// Sites read by the bond `(0, e_i)`: the bond itself plus the rate's support.
    pub fn bond_support(&self, i: usize) -> Vec<Offset> {
        union_support(&[
            &[origin(self.dim), unit(self.dim, i)],
            self.directions[i].rate.support(),
        ])
    }

    /// Same spec with one table entry of the rate in direction `i` replaced.
    /// Intended for negative controls.
    pub fn with_rate_entry(&self, i: usize, idx: usize, value: f64) -> Result<Self, RateError> {
        let mut out = self.clone();
        let r = &self.directions[i].rate;
        let mut table = r.table().to_vec();
        table[idx] = value;
        out.directions[i].rate = LocalFunction::new(self.dim, r.support().to_vec(), table)?;
        Ok(out)
    }
}

/// Creation and annihilation rates `c^+`, `c^-` (neither reads the origin).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipRateSpec {
    c_plus: LocalFunction,
    c_minus: LocalFunction,
}

impl FlipRateSpec {
    pub fn new(c_plus: LocalFunction, c_minus: LocalFunction) -> Result<Self, RateError> {
        if c_plus.dim() != c_minus.dim() {
            return Err(RateError::DimensionMismatch {
                expected: c_plus.dim(),
                got: c_minus.dim(),
            });
        }
        let o = origin(c_plus.dim());
        let c_plus = c_plus.without(&o)?;
        let c_minus = c_minus.without(&o)?;
        for f in [&c_plus, &c_minus] {
            let m = f.min_value();
            if m < 0.0 {
                return Err(RateError::NegativeFlipRate(m));
            }
        }
        Ok(FlipRateSpec { c_plus, c_minus })
    }

    pub fn constant(dim: usize, plus: f64, minus: f64) -> Result<Self, RateError> {
        FlipRateSpec::new(LocalFunction::constant(dim, plus), LocalFunction::constant(dim, minus))
    }

    /// Three-site flip rates with `c^+ = a1 eta_x eta_y + a2 eta_x + a3`,
    /// `c^- = b1 eta_x eta_y + b2 eta_x + b3`, where `x = -e_1`, `y = e_1` and
    /// the coefficients are solved so that
    /// `f(rho) = -(rho - alpha1)(rho - alpha_star)(rho - alpha2)` with
    /// `a1 = 1`, `a2 = b1 = 0`.
    pub fn cubicflip(dim: usize, alpha1: f64, alpha2: f64, alpha_star: f64) -> Result<Self, RateError> {
        if !(0.0 < alpha1 && alpha1 < alpha_star && alpha_star < alpha2 && alpha2 < 1.0) {
            return Err(RateError::InvalidParameter(format!(
                "cubicflip needs 0 < alpha1 < alpha* < alpha2 < 1, got ({alpha1}, {alpha2}, {alpha_star})"
            )));
        }
        let s1 = alpha1 + alpha_star + alpha2;
        let s2 = alpha1 * alpha_star + alpha_star * alpha2 + alpha2 * alpha1;
        let s3 = alpha1 * alpha_star * alpha2;
        let (a1, a2, b1) = (1.0, 0.0, 0.0);
        let a3 = s3;
        let b2 = a1 - a2 - s1;
        let b3 = a2 - a3 + s2;
        let e = unit(dim, 0);
        let x = scaled(&e, -1);
        let y = e;
        let support = vec![x.clone(), y.clone()];
        let c_plus = LocalFunction::from_fn(dim, support.clone(), |o| a1 * o.at(&x) * o.at(&y) + a2 * o.at(&x) + a3)?;
        let c_minus = LocalFunction::from_fn(dim, support, |o| b1 * o.at(&x) * o.at(&y) + b2 * o.at(&x) + b3)?;
        FlipRateSpec::new(c_plus, c_minus)
    }

    pub fn dim(&self) -> usize {
        self.c_plus.dim()
    }

    pub fn c_plus(&self) -> &LocalFunction {
        &self.c_plus
    }

    pub fn c_minus(&self) -> &LocalFunction {
        &self.c_minus
    }

    /// Largest flip rate over all configurations.
    pub fn c_max(&self) -> f64 {
        self.c_plus.max_value().max(self.c_minus.max_value())
    }

    pub fn scale(&self, s: f64) -> Self {
        FlipRateSpec {
            c_plus: self.c_plus.scale(s),
            c_minus: self.c_minus.scale(s),
        }
    }

    /// The full flip rate `c = c^+ (1 - eta_0) + c^- eta_0`.
    pub fn combined(&self) -> LocalFunction {
        let o = origin(self.dim());
        let support = union_support(&[std::slice::from_ref(&o), self.c_plus.support(), self.c_minus.support()]);
        let plus = self.c_plus.extend_to(&support).expect("support contains c+");
        let minus = self.c_minus.extend_to(&support).expect("support contains c-");
        let table = (0..1usize << support.len())
            .map(|idx| {
                if idx & 1 == 1 {
                    minus.value(idx)
                } else {
                    plus.value(idx)
                }
            })
            .collect();
        LocalFunction::new(self.dim(), support, table).expect("well-formed")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Assumption {
    NonDegeneracy,
    Reversibility,
    Gradient,
}

impl fmt::Display for Assumption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Assumption::NonDegeneracy => "non-degeneracy (c > 0)",
            Assumption::Reversibility => "reversibility (c independent of the bond occupancies)",
            Assumption::Gradient => "gradient condition",
        };
        f.write_str(s)
    }
}

/// A failed assumption with the configuration that exhibits it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub assumption: Assumption,
    pub direction: usize,
    pub configuration: Vec<(Offset, u8)>,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} fails in direction {} at ", self.assumption, self.direction + 1)?;
        let sites: Vec<String> = self.configuration.iter().map(|(o, v)| format!("{o:?}={v}")).collect();
        write!(f, "{{{}}}", sites.join(", "))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub c_star: f64,
    pub reversible: bool,
    pub gradient_ok: bool,
    pub violations: Vec<Violation>,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<Self, RateError> {
        match self.violations.first() {
            Some(v) => Err(RateError::AssumptionViolated(v.clone())),
            None => Ok(self),
        }
    }
}

fn describe(support: &[Offset], bits: usize) -> Vec<(Offset, u8)> {
    support
        .iter()
        .enumerate()
        .map(|(k, s)| (s.clone(), ((bits >> k) & 1) as u8))
        .collect()
}

/// Exhaustively checks positivity, reversibility and the gradient identity
/// `c(eta)(eta_0 - eta_{e_i}) = h_i(eta) - h_i(tau_{e_i} eta)` on the joint
/// support of every direction.
pub fn verify_assumptions(spec: &ExchangeRateSpec) -> AssumptionReport {
    let dim = spec.dim();
    let mut violations = Vec::new();
    let c_star = spec.c_min();
    let mut reversible = true;
    let mut gradient_ok = true;
    for (i, dir) in spec.directions().iter().enumerate() {
        let o = origin(dim);
        let e = unit(dim, i);
        let shifted = dir.witness.translated(&e);
        let support = union_support(&[
            &[o.clone(), e.clone()],
            dir.rate.support(),
            dir.witness.support(),
            shifted.support(),
        ]);
        if support.len() > 24 {
            violations.push(Violation {
                assumption: Assumption::Gradient,
                direction: i,
                configuration: Vec::new(),
            });
            gradient_ok = false;
            continue;
        }
        let rate = dir.rate.extend_to(&support).expect("subset");
        let swapped = dir.rate.swapped(&o, &e).extend_to(&support).expect("subset");
        let h = dir.witness.extend_to(&support).expect("subset");
        let h_shift = shifted.extend_to(&support).expect("subset");
        let (p0, pe) = (0usize, 1usize);

        if let Some(idx) = (0..rate.table().len()).find(|&idx| rate.value(idx) <= 0.0) {
            violations.push(Violation {
                assumption: Assumption::NonDegeneracy,
                direction: i,
                configuration: describe(&support, idx),
            });
        }
        let tol = IDENTITY_TOL * (1.0 + rate.max_value().abs());
        if let Some(idx) = (0..rate.table().len()).find(|&idx| (rate.value(idx) - swapped.value(idx)).abs() > tol) {
            reversible = false;
            violations.push(Violation {
                assumption: Assumption::Reversibility,
                direction: i,
                configuration: describe(&support, idx),
            });
        }
        let bad = (0..rate.table().len()).find(|&idx| {
            let n0 = ((idx >> p0) & 1) as f64;
            let ne = ((idx >> pe) & 1) as f64;
            let current = rate.value(idx) * (n0 - ne);
            (current - (h.value(idx) - h_shift.value(idx))).abs() > tol
        });
        if let Some(idx) = bad {
            gradient_ok = false;
            violations.push(Violation {
                assumption: Assumption::Gradient,
                direction: i,
                configuration: describe(&support, idx),
            });
        }
    }
    AssumptionReport {
        c_star,
        reversible,
        gradient_ok,
        violations,
    }
}

/// `beta -> E^{nu_beta}[h]` expanded to exact coefficients.
pub fn bernoulli_expectation(h: &LocalFunction) -> Polynomial {
    let n = h.support().len();
    let mut by_count = vec![0.0; n + 1];
    for (idx, v) in h.table().iter().enumerate() {
        by_count[idx.count_ones() as usize] += v;
    }
    let beta = Polynomial::x();
    let one_minus = Polynomial::new(vec![1.0, -1.0]);
    let mut out = Polynomial::zero();
    for (m, s) in by_count.iter().enumerate() {
        if *s == 0.0 {
            continue;
        }
        let mut term = Polynomial::constant(*s);
        for _ in 0..m {
            term = &term * &beta;
        }
        for _ in 0..(n - m) {
            term = &term * &one_minus;
        }
        out = &out + &term;
    }
    out
}

/// `P_i = E[h_i]` per direction; returns the common polynomial or fails if
/// the directions disagree.
pub fn compute_p(spec: &ExchangeRateSpec) -> Result<Polynomial, RateError> {
    let polys: Vec<Polynomial> = spec
        .directions()
        .iter()
        .map(|d| bernoulli_expectation(&d.witness))
        .collect();
    let first = polys[0].clone();
    for (i, p) in polys.iter().enumerate().skip(1) {
        let mismatch = first.max_coeff_diff(p);
        if mismatch > IDENTITY_TOL {
            return Err(RateError::DirectionDependent { direction: i, mismatch });
        }
    }
    Ok(first)
}

/// Largest coefficient mismatch in `P_i' * 2 chi = E[c (eta_0 - eta_{e_i})^2]`
/// and `P_i' = E[c]` over all directions.
pub fn green_kubo_residual(spec: &ExchangeRateSpec) -> f64 {
    let dim = spec.dim();
    let chi2 = Polynomial::compressibility().scale(2.0);
    let mut worst: f64 = 0.0;
    for (i, dir) in spec.directions().iter().enumerate() {
        let dp = bernoulli_expectation(&dir.witness).derivative();
        let support = spec.bond_support(i);
        let o = origin(dim);
        let e = unit(dim, i);
        let rate = dir.rate.clone();
        let weighted = LocalFunction::from_fn(dim, support, |occ| {
            let diff = occ.at(&o) - occ.at(&e);
            rate.eval_with(|s| occ.at(s) == 1.0) * diff * diff
        })
        .expect("bond support within limits");
        let lhs = &dp * &chi2;
        worst = worst.max(lhs.max_coeff_diff(&bernoulli_expectation(&weighted)));
        worst = worst.max(dp.max_coeff_diff(&bernoulli_expectation(&dir.rate)));
    }
    worst
}

/// `f(rho) = (1 - rho) E[c^+] - rho E[c^-]`.
pub fn compute_f(spec: &FlipRateSpec) -> Polynomial {
    let one_minus = Polynomial::new(vec![1.0, -1.0]);
    let plus = &one_minus * &bernoulli_expectation(spec.c_plus());
    let minus = &Polynomial::x() * &bernoulli_expectation(spec.c_minus());
    &plus - &minus
}

/// Zeros of a bistable reaction term and its balance integral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BistableReport {
    pub alpha1: f64,
    pub alpha_star: f64,
    pub alpha2: f64,
    /// `A(f) = int_{alpha1}^{alpha2} f P' d rho`.
    pub a: f64,
}

pub const ROOT_GRID: usize = 10_000;
pub const ROOT_TOL: f64 = 1e-12;

/// Finds the three zeros of `f` in `(0,1)`, checks the stability pattern and
/// integrates `f P'` between the stable zeros.
pub fn check_bistable_balance(f: &Polynomial, p: &Polynomial) -> Result<BistableReport, RateError> {
    let dp = p.derivative();
    let min_dp = (1..ROOT_GRID)
        .map(|k| dp.eval(k as f64 / ROOT_GRID as f64))
        .fold(f64::INFINITY, f64::min);
    if !(min_dp > 0.0) {
        return Err(RateError::NonMonotoneP(min_dp));
    }
    let roots = f.roots_in(0.0, 1.0, ROOT_GRID, ROOT_TOL);
    if roots.len() != 3 {
        return Err(RateError::WrongRootCount(roots.len()));
    }
    let df = f.derivative();
    let (a1, a_star, a2) = (roots[0], roots[1], roots[2]);
    if !(df.eval(a1) < 0.0 && df.eval(a_star) > 0.0 && df.eval(a2) < 0.0) {
        return Err(RateError::WrongStability);
    }
    let a = (f * &dp).integrate(a1, a2);
    Ok(BistableReport {
        alpha1: a1,
        alpha_star: a_star,
        alpha2: a2,
        a,
    })
}

/// Bisects `alpha* -> A(f(.; alpha*))` over `(alpha1, alpha2)` for a family of
/// flip rates whose reaction term vanishes at `alpha1`, `alpha*`, `alpha2`.
pub fn balance_alpha_star(
    p: &Polynomial,
    alpha1: f64,
    alpha2: f64,
    family: impl Fn(f64) -> Result<FlipRateSpec, RateError>,
) -> Result<f64, RateError> {
    let dp = p.derivative();
    let balance = |a: f64| -> Result<f64, RateError> {
        let f = compute_f(&family(a)?);
        Ok((&f * &dp).integrate(alpha1, alpha2))
    };
    let eps = 1e-9 * (alpha2 - alpha1);
    let (mut lo, mut hi) = (alpha1 + eps, alpha2 - eps);
    let mut a_lo = balance(lo)?;
    let a_hi = balance(hi)?;
    if a_lo == 0.0 {
        return Ok(lo);
    }
    if a_hi == 0.0 {
        return Ok(hi);
    }
    if (a_lo < 0.0) == (a_hi < 0.0) {
        return Err(RateError::NoSignChange);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let a_mid = balance(mid)?;
        if a_mid.abs() <= IDENTITY_TOL || hi - lo < 1e-15 {
            return Ok(mid);
        }
        if (a_mid < 0.0) == (a_lo < 0.0) {
            lo = mid;
            a_lo = a_mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simple_rates_pass_all_assumptions() {
        let r = verify_assumptions(&ExchangeRateSpec::simple(2));
        assert_eq!(r.c_star, 1.0);
        assert!(r.reversible && r.gradient_ok && r.passed());
    }

    #[test]
    fn speedchange_passes_with_its_witness() {
        let spec = ExchangeRateSpec::speedchange(1, &[0.3]).unwrap();
        let r = verify_assumptions(&spec);
        assert!((r.c_star - 1.0).abs() < 1e-15);
        assert!(r.reversible && r.gradient_ok, "{:?}", r.violations);
    }

    #[test]
    fn wrong_witness_yields_counterexample() {
        let good = ExchangeRateSpec::speedchange(1, &[0.3]).unwrap();
        let bad = ExchangeRateSpec::new(
            1,
            vec![DirectionRates {
                rate: good.rate(0).clone(),
                witness: LocalFunction::occupation(vec![0]),
            }],
        )
        .unwrap();
        let r = verify_assumptions(&bad);
        assert!(r.reversible);
        assert!(!r.gradient_ok);
        let v = r
            .violations
            .iter()
            .find(|v| v.assumption == Assumption::Gradient)
            .unwrap();
        // replay the counterexample by hand
        let occ = |o: &[i64]| {
            v.configuration
                .iter()
                .find(|(s, _)| s.as_slice() == o)
                .map(|(_, b)| *b as f64)
                .unwrap_or(0.0)
        };
        let c = 1.0 + 0.3 * (occ(&[-1]) + occ(&[2]));
        let lhs = c * (occ(&[0]) - occ(&[1]));
        let rhs = occ(&[0]) - occ(&[1]);
        assert!((lhs - rhs).abs() > 1e-3);
    }

    #[test]
    fn bernoulli_expectation_examples() {
        let h = LocalFunction::occupation(vec![0]);
        assert!(bernoulli_expectation(&h).max_coeff_diff(&Polynomial::x()) < 1e-15);
        let pair = LocalFunction::from_fn(2, vec![vec![0, 0], vec![1, 0]], |o| o.at(&[0, 0]) * o.at(&[1, 0])).unwrap();
        let sq = Polynomial::new(vec![0.0, 0.0, 1.0]);
        assert!(bernoulli_expectation(&pair).max_coeff_diff(&sq) < 1e-15);
        let spec = ExchangeRateSpec::speedchange(1, &[0.5]).unwrap();
        let p = bernoulli_expectation(spec.witness(0));
        assert!(p.max_coeff_diff(&Polynomial::new(vec![0.0, 1.0, 0.5])) < 1e-12);
    }

    #[test]
    fn anisotropic_speedchange_violates_direction_independence() {
        let spec = ExchangeRateSpec::speedchange(2, &[0.5, 0.2]).unwrap();
        assert!(matches!(compute_p(&spec), Err(RateError::DirectionDependent { .. })));
    }

    #[test]
    fn green_kubo_examples() {
        assert_eq!(green_kubo_residual(&ExchangeRateSpec::simple(1)), 0.0);
        let spec = ExchangeRateSpec::speedchange(1, &[0.5]).unwrap();
        assert!(green_kubo_residual(&spec) <= 1e-12);
        let ec = bernoulli_expectation(spec.rate(0));
        assert!(ec.max_coeff_diff(&Polynomial::new(vec![1.0, 1.0])) < 1e-12);
    }

    #[test]
    fn reaction_term_examples() {
        let flip = FlipRateSpec::cubicflip(1, 0.25, 0.75, 0.5).unwrap();
        let f = compute_f(&flip);
        let expected = Polynomial::new(vec![0.09375, -0.6875, 1.5, -1.0]);
        assert!(f.max_coeff_diff(&expected) < 1e-12, "{f}");
        // coefficients quoted for alpha* = 1/2
        assert!((flip.c_plus().value(0) - 3.0 / 32.0).abs() < 1e-15);
        assert!((flip.c_minus().value(0) - 19.0 / 32.0).abs() < 1e-15);
        assert!((flip.c_minus().value(1) - (19.0 / 32.0 - 0.5)).abs() < 1e-15);

        let f = compute_f(&FlipRateSpec::constant(1, 1.0, 1.0).unwrap());
        assert!(f.max_coeff_diff(&Polynomial::new(vec![1.0, -2.0])) < 1e-15);
        let f = compute_f(&FlipRateSpec::constant(1, 0.0, 1.0).unwrap());
        assert!(f.max_coeff_diff(&Polynomial::new(vec![0.0, -1.0])) < 1e-15);
    }

    #[test]
    fn flip_rates_must_not_read_origin() {
        let bad = LocalFunction::occupation(vec![0]);
        assert!(matches!(
            FlipRateSpec::new(bad, LocalFunction::constant(1, 1.0)),
            Err(RateError::DependsOnOrigin)
        ));
        assert!(matches!(
            FlipRateSpec::constant(1, -1.0, 1.0),
            Err(RateError::NegativeFlipRate(_))
        ));
    }

    #[test]
    fn bistable_balance_symmetric_cubic() {
        let f = Polynomial::from_roots(-1.0, &[0.25, 0.5, 0.75]);
        let r = check_bistable_balance(&f, &Polynomial::x()).unwrap();
        assert!((r.alpha1 - 0.25).abs() < 1e-10);
        assert!((r.alpha_star - 0.5).abs() < 1e-10);
        assert!((r.alpha2 - 0.75).abs() < 1e-10);
        assert!(r.a.abs() < 1e-15);
    }

    #[test]
    fn bistable_balance_rejects_monostable() {
        let f = Polynomial::new(vec![1.0, -2.0]);
        assert!(matches!(
            check_bistable_balance(&f, &Polynomial::x()),
            Err(RateError::WrongRootCount(1))
        ));
        let g = Polynomial::from_roots(1.0, &[0.25, 0.5, 0.75]);
        assert!(matches!(
            check_bistable_balance(&g, &Polynomial::x()),
            Err(RateError::WrongStability)
        ));
    }

    #[test]
    fn unbalanced_cubic_reports_exact_integral() {
        // int_{1/4}^{3/4} -(r-1/4)(r-0.6)(r-3/4) dr = -1/480
        let f = Polynomial::from_roots(-1.0, &[0.25, 0.6, 0.75]);
        let r = check_bistable_balance(&f, &Polynomial::x()).unwrap();
        assert!((r.a + 1.0 / 480.0).abs() < 1e-12);
    }

    #[test]
    fn balanced_alpha_star_for_linear_p_is_midpoint() {
        let a = balance_alpha_star(&Polynomial::x(), 0.25, 0.75, |s| {
            FlipRateSpec::cubicflip(1, 0.25, 0.75, s)
        })
        .unwrap();
        assert!((a - 0.5).abs() < 1e-9);
    }

    #[test]
    fn balanced_alpha_star_for_quadratic_p() {
        let p = Polynomial::new(vec![0.0, 1.0, 0.5]);
        let fam = |s| FlipRateSpec::cubicflip(1, 0.25, 0.75, s);
        let a = balance_alpha_star(&p, 0.25, 0.75, fam).unwrap();
        // exact root of the (linear in alpha*) balance integral: 61/120
        assert!((a - 61.0 / 120.0).abs() < 1e-9, "{a}");
        assert!(a > 0.5);
        let scaled = balance_alpha_star(&p, 0.25, 0.75, |s| Ok(fam(s)?.scale(2.0))).unwrap();
        assert!((scaled - a).abs() < 1e-9);
    }

    #[test]
    fn combined_flip_rate_reads_origin() {
        let flip = FlipRateSpec::constant(1, 2.0, 3.0).unwrap();
        let c = flip.combined();
        assert_eq!(c.eval_with(|_| false), 2.0);
        assert_eq!(c.eval_with(|o| o == [0]), 3.0);
    }
}
