//! Domain types shared by every solver: cluster parameters, buffer
//! allocations, token states and the lattice of states below an allocation.

use std::ops::Deref;

use serde::Serialize;

use crate::error::{Error, Result};

/// Default bound on the number of lattice points any exact computation may touch.
pub const DEFAULT_LATTICE_CAP: usize = 1_000_000;

/// Arrival rate and per-server service rates of a cluster.
///
/// Service rates are kept sorted non-increasing (stable with respect to the
/// order the caller supplied), so server `0` is always a fastest server. The
/// permutation back to caller order is retained for reporting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterParams {
    lambda: f64,
    mu: Vec<f64>,
    /// `user_index[k]` is the caller-order position of sorted server `k`.
    user_index: Vec<usize>,
}

fn check_rate(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::NonPositiveRate {
            name: name.to_string(),
            value,
        })
    }
}

impl ClusterParams {
    pub fn new(lambda: f64, mu: &[f64]) -> Result<Self> {
        check_rate("lambda", lambda)?;
        if mu.is_empty() {
            return Err(Error::NoServers);
        }
        for (i, &m) in mu.iter().enumerate() {
            check_rate(&format!("mu[{}]", i + 1), m)?;
        }
        let mut user_index: Vec<usize> = (0..mu.len()).collect();
        // stable: equal rates keep caller order
        user_index.sort_by(|&a, &b| mu[b].total_cmp(&mu[a]));
        let sorted = user_index.iter().map(|&i| mu[i]).collect();
        Ok(Self {
            lambda,
            mu: sorted,
            user_index,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Service rates, fastest first.
    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn servers(&self) -> usize {
        self.mu.len()
    }

    pub fn total_service_rate(&self) -> f64 {
        self.mu.iter().sum()
    }

    /// Same service rates, different arrival rate.
    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        check_rate("lambda", lambda)?;
        Ok(Self {
            lambda,
            ..self.clone()
        })
    }

    /// Caller-order position of sorted server `k`.
    pub fn user_index(&self, k: usize) -> usize {
        self.user_index[k]
    }

    /// Reorders a caller-order vector (e.g. buffer lengths typed by a user)
    /// into the internal fastest-first order.
    pub fn to_sorted_order<T: Clone>(&self, user: &[T]) -> Vec<T> {
        self.user_index.iter().map(|&i| user[i].clone()).collect()
    }

    /// Inverse of [`Self::to_sorted_order`].
    pub fn to_user_order<T: Clone>(&self, sorted: &[T]) -> Vec<T> {
        let mut out: Vec<Option<T>> = vec![None; sorted.len()];
        for (k, v) in sorted.iter().enumerate() {
            out[self.user_index[k]] = Some(v.clone());
        }
        out.into_iter().map(|v| v.expect("permutation")).collect()
    }

    /// Service rates in caller order.
    pub fn mu_user_order(&self) -> Vec<f64> {
        self.to_user_order(&self.mu)
    }
}

/// Buffer length per server, in the fastest-first order of the owning
/// [`ClusterParams`]. Zero-length buffers are legal.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct Allocation(Vec<usize>);

impl Allocation {
    pub fn new(ell: Vec<usize>) -> Self {
        Self(ell)
    }

    /// Accepts signed input (as parsed from a command line) and rejects
    /// negative entries.
    pub fn from_signed(ell: &[i64]) -> Result<Self> {
        ell.iter()
            .enumerate()
            .map(|(i, &v)| {
                usize::try_from(v).map_err(|_| Error::NegativeBufferLength {
                    server: i + 1,
                    value: v,
                })
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }

    /// Total number of slots `L`.
    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.0
    }

    /// `ell + e_to - e_from`; `None` when server `from` has no slot to give.
    pub fn move_slot(&self, from: usize, to: usize) -> Option<Self> {
        let mut v = self.0.clone();
        v[from] = v[from].checked_sub(1)?;
        v[to] += 1;
        Some(Self(v))
    }
}

impl Deref for Allocation {
    type Target = [usize];
    fn deref(&self) -> &[usize] {
        &self.0
    }
}

impl From<Vec<usize>> for Allocation {
    fn from(v: Vec<usize>) -> Self {
        Self(v)
    }
}

/// Free slots per server; the Markov state of the token network.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct StateVector(Vec<usize>);

impl StateVector {
    pub fn new(x: Vec<usize>) -> Self {
        Self(x)
    }

    pub fn free_slots(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

impl Deref for StateVector {
    type Target = [usize];
    fn deref(&self) -> &[usize] {
        &self.0
    }
}

impl From<Vec<usize>> for StateVector {
    fn from(v: Vec<usize>) -> Self {
        Self(v)
    }
}

/// Exact or estimated long-run performance of one (params, allocation) pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    /// Probability that an arriving job is rejected.
    pub loss: f64,
    /// Fraction of time each server is busy (0 for empty buffers).
    pub occupation: Vec<f64>,
    /// Mean number of jobs in each buffer.
    pub mean_jobs: Vec<f64>,
    /// Mean sojourn time of admitted jobs; `None` when no job is ever admitted.
    pub mean_response_time: Option<f64>,
    /// `ln G(ell)`.
    pub norm_const_log: f64,
}

/// Checks that an allocation fits the cluster it is evaluated against.
pub fn validate(params: &ClusterParams, alloc: &Allocation) -> Result<()> {
    if params.servers() != alloc.len() {
        return Err(Error::DimensionMismatch {
            expected: params.servers(),
            found: alloc.len(),
        });
    }
    Ok(())
}

/// Validates raw user input in one pass and builds the typed pair. The
/// allocation is given in caller order and returned in fastest-first order.
pub fn validate_raw(lambda: f64, mu: &[f64], ell: &[i64]) -> Result<(ClusterParams, Allocation)> {
    let params = ClusterParams::new(lambda, mu)?;
    if ell.len() != mu.len() {
        return Err(Error::DimensionMismatch {
            expected: mu.len(),
            found: ell.len(),
        });
    }
    let user = Allocation::from_signed(ell)?;
    let alloc = Allocation::new(params.to_sorted_order(&user));
    Ok((params, alloc))
}

/// Box lattice `{x : 0 <= x <= bounds}` with a row-major bijection to
/// `0..len` (last coordinate varies fastest).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateLattice {
    bounds: Vec<usize>,
    strides: Vec<usize>,
    len: usize,
}

/// Lattice of states below `alloc` with the default cap.
pub fn state_lattice(alloc: &Allocation) -> Result<StateLattice> {
    StateLattice::with_cap(alloc, DEFAULT_LATTICE_CAP)
}

/// Number of points in the box below `bounds`, or `None` on overflow.
pub fn lattice_size(bounds: &[usize]) -> Option<usize> {
    bounds
        .iter()
        .try_fold(1usize, |acc, &b| acc.checked_mul(b.checked_add(1)?))
}

impl StateLattice {
    pub fn with_cap(bounds: &[usize], cap: usize) -> Result<Self> {
        let len = lattice_size(bounds).unwrap_or(usize::MAX);
        if len > cap {
            return Err(Error::CapacityExceeded {
                what: "state lattice",
                size: len as u128,
                cap: cap as u128,
            });
        }
        let n = bounds.len();
        let mut strides = vec![1usize; n];
        for i in (0..n.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * (bounds[i + 1] + 1);
        }
        Ok(Self {
            bounds: bounds.to_vec(),
            strides,
            len,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bounds(&self) -> &[usize] {
        &self.bounds
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn contains(&self, x: &[usize]) -> bool {
        x.len() == self.bounds.len() && x.iter().zip(&self.bounds).all(|(a, b)| a <= b)
    }

    pub fn index_of(&self, x: &[usize]) -> Option<usize> {
        if !self.contains(x) {
            return None;
        }
        Some(x.iter().zip(&self.strides).map(|(a, s)| a * s).sum())
    }

    pub fn state_at(&self, mut index: usize) -> StateVector {
        assert!(index < self.len, "lattice index out of range");
        let x = self
            .strides
            .iter()
            .map(|&s| {
                let v = index / s;
                index %= s;
                v
            })
            .collect();
        StateVector(x)
    }

    /// States in index order.
    pub fn iter(&self) -> LatticeIter<'_> {
        LatticeIter {
            bounds: &self.bounds,
            next: Some(vec![0; self.bounds.len()]),
        }
    }
}

pub struct LatticeIter<'a> {
    bounds: &'a [usize],
    next: Option<Vec<usize>>,
}

impl Iterator for LatticeIter<'_> {
    type Item = StateVector;

    fn next(&mut self) -> Option<StateVector> {
        let current = self.next.take()?;
        let mut succ = current.clone();
        let mut advanced = false;
        for i in (0..succ.len()).rev() {
            if succ[i] < self.bounds[i] {
                succ[i] += 1;
                advanced = true;
                break;
            }
            succ[i] = 0;
        }
        if advanced {
            self.next = Some(succ);
        }
        Some(StateVector(current))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn validate_examples() {
        assert!(validate_raw(1.0, &[0.6, 0.4], &[1, 1]).is_ok());
        assert!(matches!(
            validate_raw(0.0, &[0.6, 0.4], &[1, 1]),
            Err(Error::NonPositiveRate { .. })
        ));
        assert!(matches!(
            validate_raw(1.0, &[0.6, 0.4], &[1, 1, 1]),
            Err(Error::DimensionMismatch {
                expected: 2,
                found: 3
            })
        ));
        assert!(matches!(
            validate_raw(1.0, &[0.6, 0.4], &[1, -1]),
            Err(Error::NegativeBufferLength {
                server: 2,
                value: -1
            })
        ));
        assert!(matches!(
            validate_raw(1.0, &[0.6, f64::NAN], &[1, 1]),
            Err(Error::NonPositiveRate { .. })
        ));
        assert!(matches!(validate_raw(1.0, &[], &[]), Err(Error::NoServers)));

        let p = ClusterParams::new(1.0, &[0.6, 0.4]).unwrap();
        assert!(validate(&p, &Allocation::new(vec![1, 1])).is_ok());
        assert!(validate(&p, &Allocation::new(vec![1])).is_err());
    }

    #[test]
    fn rates_are_sorted_stably() {
        let p = ClusterParams::new(1.0, &[0.2, 0.5, 0.2, 0.1]).unwrap();
        assert_eq!(p.mu(), &[0.5, 0.2, 0.2, 0.1]);
        assert_eq!(p.user_index(0), 1);
        assert_eq!(p.user_index(1), 0);
        assert_eq!(p.user_index(2), 2);
        assert_eq!(p.mu_user_order(), vec![0.2, 0.5, 0.2, 0.1]);

        let (_, alloc) = validate_raw(1.0, &[0.4, 0.6], &[3, 7]).unwrap();
        assert_eq!(alloc.as_slice(), &[7, 3]);
    }

    #[test]
    fn lattice_examples() {
        let l = state_lattice(&Allocation::new(vec![1, 1])).unwrap();
        let states: Vec<Vec<usize>> = l.iter().map(|s| s.as_slice().to_vec()).collect();
        assert_eq!(states, vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]);
        assert_eq!(
            state_lattice(&Allocation::new(vec![2, 0])).unwrap().len(),
            3
        );
        assert_eq!(
            state_lattice(&Allocation::new(vec![3, 3, 3]))
                .unwrap()
                .len(),
            64
        );
        assert!(matches!(
            StateLattice::with_cap(&[9, 9, 9], 999),
            Err(Error::CapacityExceeded { .. })
        ));
        assert!(matches!(
            StateLattice::with_cap(&[usize::MAX, 2], 10),
            Err(Error::CapacityExceeded { .. })
        ));
    }

    #[test]
    fn move_slot_respects_empty_buffers() {
        let a = Allocation::new(vec![2, 0]);
        assert_eq!(a.move_slot(0, 1).unwrap().as_slice(), &[1, 1]);
        assert!(a.move_slot(1, 0).is_none());
    }

    proptest! {
        #[test]
        fn lattice_index_is_a_bijection(bounds in proptest::collection::vec(0usize..5, 1..5)) {
            let l = StateLattice::with_cap(&bounds, DEFAULT_LATTICE_CAP).unwrap();
            let expected: usize = bounds.iter().map(|b| b + 1).product();
            prop_assert_eq!(l.len(), expected);
            let mut count = 0;
            for (i, s) in l.iter().enumerate() {
                prop_assert_eq!(l.index_of(&s), Some(i));
                prop_assert_eq!(l.state_at(i), s);
                count += 1;
            }
            prop_assert_eq!(count, expected);
        }

        #[test]
        fn validate_is_total(lambda in -2.0f64..2.0, mu in proptest::collection::vec(-1.0f64..1.0, 0..4),
                             ell in proptest::collection::vec(-3i64..4, 0..4)) {
            // never panics
            let _ = validate_raw(lambda, &mu, &ell);
        }
    }
}
