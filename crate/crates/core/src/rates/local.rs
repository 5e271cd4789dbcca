use serde::{Deserialize, Serialize};

use super::RateError;

/// A lattice offset in `Z^d`.
pub type Offset = Vec<i64>;

/// Largest support a truth table may have.
pub const MAX_SUPPORT: usize = 16;

/// A function of finitely many occupancies, stored as a truth table.
///
/// `table[idx]` is the value on the restricted configuration whose occupancy
/// at `support[k]` is bit `k` of `idx` (little-endian in support order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalFunction {
    dim: usize,
    support: Vec<Offset>,
    table: Vec<f64>,
}

/// Read-only view of one restricted configuration, handed to [`LocalFunction::from_fn`].
pub struct Occupancy<'a> {
    support: &'a [Offset],
    bits: usize,
}

impl Occupancy<'_> {
    /// Occupancy (0 or 1) at `offset`.
    ///
    /// Panics if `offset` is not part of the support being tabulated.
    pub fn at(&self, offset: &[i64]) -> f64 {
        let k = self
            .support
            .iter()
            .position(|s| s.as_slice() == offset)
            .unwrap_or_else(|| panic!("offset {offset:?} outside support"));
        ((self.bits >> k) & 1) as f64
    }
}

impl LocalFunction {
    pub fn new(dim: usize, support: Vec<Offset>, table: Vec<f64>) -> Result<Self, RateError> {
        if support.len() > MAX_SUPPORT {
            return Err(RateError::SupportTooLarge {
                len: support.len(),
                max: MAX_SUPPORT,
            });
        }
        if let Some(bad) = support.iter().find(|s| s.len() != dim) {
            return Err(RateError::DimensionMismatch {
                expected: dim,
                got: bad.len(),
            });
        }
        for (i, a) in support.iter().enumerate() {
            if support[..i].contains(a) {
                return Err(RateError::DuplicateOffset(a.clone()));
            }
        }
        if table.len() != 1 << support.len() {
            return Err(RateError::TableLength {
                expected: 1 << support.len(),
                got: table.len(),
            });
        }
        if table.iter().any(|v| !v.is_finite()) {
            return Err(RateError::NonFinite);
        }
        Ok(LocalFunction { dim, support, table })
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        LocalFunction {
            dim,
            support: Vec::new(),
            table: vec![c],
        }
    }

    /// `eta_offset`.
    pub fn occupation(offset: Offset) -> Self {
        LocalFunction {
            dim: offset.len(),
            support: vec![offset],
            table: vec![0.0, 1.0],
        }
    }

    /// Tabulates `f` over every configuration of `support`.
    pub fn from_fn(dim: usize, support: Vec<Offset>, f: impl Fn(&Occupancy) -> f64) -> Result<Self, RateError> {
        if support.len() > MAX_SUPPORT {
            return Err(RateError::SupportTooLarge {
                len: support.len(),
                max: MAX_SUPPORT,
            });
        }
        let table = (0..1usize << support.len())
            .map(|bits| {
                f(&Occupancy {
                    support: &support,
                    bits,
                })
            })
            .collect();
        LocalFunction::new(dim, support, table)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn support(&self) -> &[Offset] {
        &self.support
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn value(&self, bits: usize) -> f64 {
        self.table[bits]
    }

    pub fn min_value(&self) -> f64 {
        self.table.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.table.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest `|offset_k|` over all coordinates of the support.
    pub fn range(&self) -> i64 {
        self.support
            .iter()
            .flat_map(|s| s.iter().map(|c| c.abs()))
            .max()
            .unwrap_or(0)
    }

    /// Evaluates with an arbitrary occupancy lookup.
    pub fn eval_with(&self, occupied: impl Fn(&[i64]) -> bool) -> f64 {
        let idx = self
            .support
            .iter()
            .enumerate()
            .fold(0usize, |acc, (k, s)| acc | ((occupied(s) as usize) << k));
        self.table[idx]
    }

    /// Position of each support offset inside `superset`, or `None` if some
    /// offset is missing.
    pub fn embedding(&self, superset: &[Offset]) -> Option<Vec<usize>> {
        self.support
            .iter()
            .map(|s| superset.iter().position(|t| t == s))
            .collect()
    }

    /// Re-tabulates on a larger support.
    pub fn extend_to(&self, superset: &[Offset]) -> Result<Self, RateError> {
        let emb = self.embedding(superset).ok_or(RateError::SupportNotContained)?;
        LocalFunction::from_fn(self.dim, superset.to_vec(), |occ| {
            let idx = emb
                .iter()
                .enumerate()
                .fold(0usize, |acc, (k, &p)| acc | (((occ.bits >> p) & 1) << k));
            self.table[idx]
        })
    }

    /// `eta -> h(tau_shift eta)`: the same table read at shifted offsets.
    pub fn translated(&self, shift: &[i64]) -> Self {
        LocalFunction {
            dim: self.dim,
            support: self
                .support
                .iter()
                .map(|s| s.iter().zip(shift).map(|(a, b)| a + b).collect())
                .collect(),
            table: self.table.clone(),
        }
    }

    /// `eta -> h(eta^{a,b})`, the function after exchanging occupancies at `a` and `b`.
    pub fn swapped(&self, a: &[i64], b: &[i64]) -> Self {
        let pa = self.support.iter().position(|s| s == a);
        let pb = self.support.iter().position(|s| s == b);
        let mut out = self.clone();
        match (pa, pb) {
            (Some(i), Some(j)) => {
                for idx in 0..self.table.len() {
                    let bi = (idx >> i) & 1;
                    let bj = (idx >> j) & 1;
                    let src = (idx & !(1 << i) & !(1 << j)) | (bj << i) | (bi << j);
                    out.table[idx] = self.table[src];
                }
            }
            (Some(_), None) | (None, Some(_)) => {
                let (present, absent) = if pa.is_some() { (a, b) } else { (b, a) };
                // the absent site now feeds the value that used to sit at `present`
                let mut support = self.support.clone();
                let k = support.iter().position(|s| s == present).unwrap();
                support[k] = absent.to_vec();
                out.support = support;
            }
            (None, None) => {}
        }
        out
    }

    /// First restricted configuration on which flipping `offset` changes the
    /// value, if any.
    pub fn dependence_witness(&self, offset: &[i64]) -> Option<usize> {
        let k = self.support.iter().position(|s| s == offset)?;
        (0..self.table.len()).find(|&idx| self.table[idx] != self.table[idx ^ (1 << k)])
    }

    pub fn scale(&self, s: f64) -> Self {
        LocalFunction {
            dim: self.dim,
            support: self.support.clone(),
            table: self.table.iter().map(|v| v * s).collect(),
        }
    }

    /// Pointwise combination on the union of supports.
    pub fn combine(&self, other: &LocalFunction, op: impl Fn(f64, f64) -> f64) -> Result<Self, RateError> {
        let support = union_support(&[self.support(), other.support()]);
        let a = self.extend_to(&support)?;
        let b = other.extend_to(&support)?;
        let table = a.table.iter().zip(&b.table).map(|(x, y)| op(*x, *y)).collect();
        LocalFunction::new(self.dim, support, table)
    }

    /// Support with the given offset removed, valid only if the function does
    /// not depend on it.
    pub fn without(&self, offset: &[i64]) -> Result<Self, RateError> {
        let Some(k) = self.support.iter().position(|s| s == offset) else {
            return Ok(self.clone());
        };
        if self.dependence_witness(offset).is_some() {
            return Err(RateError::DependsOnOrigin);
        }
        let mut support = self.support.clone();
        support.remove(k);
        let table = (0..1usize << support.len())
            .map(|idx| {
                let low = idx & ((1 << k) - 1);
                let high = (idx >> k) << (k + 1);
                self.table[low | high]
            })
            .collect();
        LocalFunction::new(self.dim, support, table)
    }
}

/// Ordered union of supports (first occurrence wins).
pub fn union_support(parts: &[&[Offset]]) -> Vec<Offset> {
    let mut out: Vec<Offset> = Vec::new();
    for part in parts {
        for s in part.iter() {
            if !out.contains(s) {
                out.push(s.clone());
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_index_is_little_endian_in_support_order() {
        let h = LocalFunction::from_fn(1, vec![vec![0], vec![1]], |o| o.at(&[0]) + 10.0 * o.at(&[1])).unwrap();
        assert_eq!(h.table(), &[0.0, 1.0, 10.0, 11.0]);
    }

    #[test]
    fn rejects_bad_tables() {
        assert!(matches!(
            LocalFunction::new(1, vec![vec![0]], vec![1.0]),
            Err(RateError::TableLength { .. })
        ));
        assert!(matches!(
            LocalFunction::new(1, vec![vec![0], vec![0]], vec![0.0; 4]),
            Err(RateError::DuplicateOffset(_))
        ));
        let big: Vec<Offset> = (0..17).map(|i| vec![i]).collect();
        assert!(matches!(
            LocalFunction::new(1, big, vec![0.0; 1 << 17]),
            Err(RateError::SupportTooLarge { .. })
        ));
    }

    #[test]
    fn extension_preserves_values() {
        let h = LocalFunction::occupation(vec![1]);
        let e = h.extend_to(&[vec![0], vec![1], vec![2]]).unwrap();
        for idx in 0..8 {
            assert_eq!(e.value(idx), ((idx >> 1) & 1) as f64);
        }
    }

    #[test]
    fn swap_exchanges_bits() {
        let h = LocalFunction::occupation(vec![0]);
        let s = h.swapped(&[0], &[1]);
        assert_eq!(s.eval_with(|o| o == [1]), 1.0);
        assert_eq!(s.eval_with(|o| o == [0]), 0.0);
    }

    #[test]
    fn without_drops_irrelevant_site() {
        let h = LocalFunction::occupation(vec![2])
            .extend_to(&[vec![0], vec![2]])
            .unwrap();
        let g = h.without(&[0]).unwrap();
        assert_eq!(g.support(), &[vec![2]]);
        assert_eq!(g.table(), &[0.0, 1.0]);
        assert!(LocalFunction::occupation(vec![0]).without(&[0]).is_err());
    }
}
