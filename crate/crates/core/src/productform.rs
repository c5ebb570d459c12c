//! Exact analysis of the token network through its normalization constant.
//!
//! With `x` the vector of free slots and `r_i = mu_i / lambda`, the stationary
//! weight of `x` is `multinomial(x) * prod r_i^{x_i}` and `G(ell)` is the sum
//! of these weights over `x <= ell`. `G` obeys the Erlang-B-like recursion
//! `G(k) = 1 + sum_{i: k_i >= 1} r_i G(k - e_i)` with `G(0) = 1`, which is
//! what [`NormTable`] evaluates. All values are carried as natural logarithms
//! so that `lambda = 1e-6` with `L = 60` stays inside double range.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{
    lattice_size, validate, Allocation, ClusterParams, MetricsReport, StateLattice, StateVector,
    DEFAULT_LATTICE_CAP,
};
use crate::numeric::{binomial_u128, log_add, log_factorials, log_sum_exp, SignedLogSum};

/// Differences that cancel all but this fraction of the states unique to
/// either side are ties.
pub const NEAR_TIE: f64 = 1e-12;

/// Coefficients below this fraction of the largest magnitude count as zero.
pub const ZERO_COEFFICIENT_REL: f64 = 1e-14;

/// Largest total buffer accepted by [`norm_const_direct`].
pub const DIRECT_MAX_TOTAL: usize = 30;

/// Lexicographic ranking of `{k in N^n : sum k <= total}`, last coordinate fastest.
#[derive(Debug, Clone)]
struct SimplexIndex {
    n: usize,
    total: usize,
    offsets: Vec<usize>,
    len: usize,
}

impl SimplexIndex {
    fn new(n: usize, total: usize, cap: usize) -> Result<Self> {
        let size = binomial_u128((total + n) as u128, n as u128);
        if size > cap as u128 {
            return Err(Error::CapacityExceeded {
                what: "normalization table",
                size,
                cap: cap as u128,
            });
        }
        // count(m, t) = #{y in N^m : sum y <= t} = C(t + m, m)
        let count = |m: usize, t: usize| binomial_u128((t + m) as u128, m as u128) as usize;
        let width = total + 2;
        let mut offsets = vec![0usize; n * (total + 1) * width];
        for i in 0..n {
            let m = n - i - 1;
            for r in 0..=total {
                let base = (i * (total + 1) + r) * width;
                let mut acc = 0;
                for v in 0..=r {
                    offsets[base + v] = acc;
                    acc += count(m, r - v);
                }
            }
        }
        Ok(Self {
            n,
            total,
            offsets,
            len: size as usize,
        })
    }

    fn rank(&self, k: &[usize]) -> Option<usize> {
        if k.len() != self.n {
            return None;
        }
        let width = self.total + 2;
        let mut rest = self.total;
        let mut acc = 0;
        for (i, &v) in k.iter().enumerate() {
            if v > rest {
                return None;
            }
            acc += self.offsets[(i * (self.total + 1) + rest) * width + v];
            rest -= v;
        }
        Some(acc)
    }

    /// Advances `k` to its lexicographic successor; `false` at the end.
    fn advance(&self, k: &mut [usize]) -> bool {
        let mut sum: usize = k.iter().sum();
        for i in (0..k.len()).rev() {
            if sum < self.total {
                k[i] += 1;
                return true;
            }
            sum -= k[i];
            k[i] = 0;
        }
        false
    }
}

#[derive(Debug, Clone)]
enum Layout {
    /// Every `k <= bounds`.
    Box(StateLattice),
    /// Every `k` with `sum k <= total`.
    Simplex(SimplexIndex),
}

impl Layout {
    fn index(&self, k: &[usize]) -> Option<usize> {
        match self {
            Layout::Box(l) => l.index_of(k),
            Layout::Simplex(s) => s.rank(k),
        }
    }

    fn len(&self) -> usize {
        match self {
            Layout::Box(l) => l.len(),
            Layout::Simplex(s) => s.len,
        }
    }
}

/// `ln G(k)` for every sub-allocation `k` of a region, built once and shared by
/// all metrics. Immutable after construction.
#[derive(Debug, Clone)]
pub struct NormTable {
    params: ClusterParams,
    log_ratio: Vec<f64>,
    layout: Layout,
    log_g: Vec<f64>,
}

impl NormTable {
    /// Table over the box `{k <= alloc}`.
    pub fn for_allocation(params: &ClusterParams, alloc: &Allocation) -> Result<Self> {
        Self::for_allocation_with_cap(params, alloc, DEFAULT_LATTICE_CAP)
    }

    pub fn for_allocation_with_cap(
        params: &ClusterParams,
        alloc: &Allocation,
        cap: usize,
    ) -> Result<Self> {
        validate(params, alloc)?;
        let lattice = StateLattice::with_cap(alloc, cap)?;
        Ok(Self::build(params, Layout::Box(lattice)))
    }

    /// Table over every `k` with `sum k <= total`; covers all allocations of
    /// `total` slots at once, which is what the optimizer needs.
    pub fn up_to_total(params: &ClusterParams, total: usize, cap: usize) -> Result<Self> {
        let index = SimplexIndex::new(params.servers(), total, cap)?;
        Ok(Self::build(params, Layout::Simplex(index)))
    }

    fn build(params: &ClusterParams, layout: Layout) -> Self {
        let lambda = params.lambda();
        let log_ratio: Vec<f64> = params.mu().iter().map(|m| (m / lambda).ln()).collect();
        let n = params.servers();
        let mut log_g = vec![0.0; layout.len()];
        match &layout {
            Layout::Box(lattice) => {
                let strides = lattice.strides();
                for (idx, k) in lattice.iter().enumerate() {
                    let mut acc = 0.0;
                    for i in 0..n {
                        if k[i] >= 1 {
                            acc = log_add(acc, log_ratio[i] + log_g[idx - strides[i]]);
                        }
                    }
                    log_g[idx] = acc;
                }
            }
            Layout::Simplex(simplex) => {
                let mut k = vec![0usize; n];
                let mut idx = 0;
                loop {
                    let mut acc = 0.0;
                    for i in 0..n {
                        if k[i] >= 1 {
                            k[i] -= 1;
                            let prev = simplex.rank(&k).expect("predecessor in simplex");
                            k[i] += 1;
                            acc = log_add(acc, log_ratio[i] + log_g[prev]);
                        }
                    }
                    log_g[idx] = acc;
                    idx += 1;
                    if !simplex.advance(&mut k) {
                        break;
                    }
                }
                debug_assert_eq!(idx, simplex.len);
            }
        }
        Self {
            params: params.clone(),
            log_ratio,
            layout,
            log_g,
        }
    }

    pub fn params(&self) -> &ClusterParams {
        &self.params
    }

    /// `ln G(k)`, or `None` when `k` is outside the table.
    pub fn log_g(&self, k: &[usize]) -> Option<f64> {
        self.layout.index(k).map(|i| self.log_g[i])
    }

    fn log_g_checked(&self, k: &[usize]) -> Result<f64> {
        self.log_g(k).ok_or_else(|| Error::StateOutOfRange {
            state: k.to_vec(),
            bound: match &self.layout {
                Layout::Box(l) => l.bounds().to_vec(),
                Layout::Simplex(s) => vec![s.total; s.n],
            },
        })
    }

    /// `ln(mu_i / lambda)` per server.
    pub fn log_ratios(&self) -> &[f64] {
        &self.log_ratio
    }

    /// `ln beta(ell) = -ln G(ell)`.
    pub fn log_loss(&self, ell: &[usize]) -> Result<f64> {
        Ok(-self.log_g_checked(ell)?)
    }

    pub fn loss(&self, ell: &[usize]) -> Result<f64> {
        Ok(self.log_loss(ell)?.exp())
    }

    /// `G(ell - e_i) / G(ell)`; `EmptyBuffer` when `ell_i = 0`.
    pub fn occupation(&self, ell: &[usize], i: usize) -> Result<f64> {
        self.check_server(i)?;
        if ell[i] == 0 {
            return Err(Error::EmptyBuffer { server: i });
        }
        let full = self.log_g_checked(ell)?;
        let mut k = ell.to_vec();
        k[i] -= 1;
        Ok((self.log_g_checked(&k)? - full).exp())
    }

    /// `alpha_i = sum_{m < ell_i} G(ell with ell_i replaced by m) / G(ell)`.
    pub fn mean_queue_lengths(&self, ell: &[usize]) -> Result<Vec<f64>> {
        let full = self.log_g_checked(ell)?;
        let mut k = ell.to_vec();
        let mut out = Vec::with_capacity(ell.len());
        for i in 0..ell.len() {
            let mut alpha = 0.0;
            for m in 0..ell[i] {
                k[i] = m;
                alpha += (self.log_g_checked(&k)? - full).exp();
            }
            k[i] = ell[i];
            out.push(alpha);
        }
        Ok(out)
    }

    /// Little's law: `sum alpha_i / (lambda (1 - beta))`.
    pub fn mean_response_time(&self, ell: &[usize]) -> Result<f64> {
        if ell.iter().sum::<usize>() == 0 {
            return Err(Error::NoAdmittedJobs);
        }
        let alpha: f64 = self.mean_queue_lengths(ell)?.iter().sum();
        let admitted = -(-self.log_g_checked(ell)?).exp_m1();
        Ok(alpha / (self.params.lambda() * admitted))
    }

    pub fn metrics(&self, ell: &[usize]) -> Result<MetricsReport> {
        let log_g = self.log_g_checked(ell)?;
        let occupation = (0..ell.len())
            .map(|i| match self.occupation(ell, i) {
                Ok(r) => Ok(r),
                Err(Error::EmptyBuffer { .. }) => Ok(0.0),
                Err(e) => Err(e),
            })
            .collect::<Result<Vec<_>>>()?;
        let mean_response_time = match self.mean_response_time(ell) {
            Ok(d) => Some(d),
            Err(Error::NoAdmittedJobs) => None,
            Err(e) => return Err(e),
        };
        Ok(MetricsReport {
            loss: (-log_g).exp(),
            occupation,
            mean_jobs: self.mean_queue_lengths(ell)?,
            mean_response_time,
            norm_const_log: log_g,
        })
    }

    fn check_server(&self, i: usize) -> Result<()> {
        if i >= self.params.servers() {
            return Err(Error::ServerIndex {
                index: i,
                servers: self.params.servers(),
            });
        }
        Ok(())
    }
}

/// Builds the normalization table for one allocation.
pub fn norm_const(params: &ClusterParams, alloc: &Allocation) -> Result<NormTable> {
    NormTable::for_allocation(params, alloc)
}

/// Unnormalized log weight `ln(multinomial(x) prod r_i^{x_i})`.
fn log_weight(x: &[usize], log_ratio: &[f64], log_fact: &[f64]) -> f64 {
    let total: usize = x.iter().sum();
    let mut acc = log_fact[total];
    for (&xi, &lr) in x.iter().zip(log_ratio) {
        acc += xi as f64 * lr - log_fact[xi];
    }
    acc
}

/// `ln G(ell)` by summing every stationary weight explicitly. Only meant as a
/// cross-check for [`norm_const`] on small instances.
pub fn norm_const_direct(params: &ClusterParams, alloc: &Allocation) -> Result<f64> {
    validate(params, alloc)?;
    let total = alloc.total();
    if total > DIRECT_MAX_TOTAL {
        return Err(Error::CapacityExceeded {
            what: "direct normalization sum (total slots)",
            size: total as u128,
            cap: DIRECT_MAX_TOTAL as u128,
        });
    }
    let lattice = StateLattice::with_cap(alloc, DEFAULT_LATTICE_CAP)?;
    let lambda = params.lambda();
    let log_ratio: Vec<f64> = params.mu().iter().map(|m| (m / lambda).ln()).collect();
    let log_fact = log_factorials(total);
    let terms: Vec<f64> = lattice
        .iter()
        .map(|x| log_weight(&x, &log_ratio, &log_fact))
        .collect();
    Ok(log_sum_exp(&terms))
}

/// `pi(x)` for one state.
pub fn stationary_prob(params: &ClusterParams, alloc: &Allocation, x: &StateVector) -> Result<f64> {
    validate(params, alloc)?;
    if x.len() != alloc.len() || x.iter().zip(alloc.iter()).any(|(a, b)| a > b) {
        return Err(Error::StateOutOfRange {
            state: x.as_slice().to_vec(),
            bound: alloc.as_slice().to_vec(),
        });
    }
    let table = norm_const(params, alloc)?;
    let log_g = table.log_g_checked(alloc)?;
    let log_fact = log_factorials(alloc.total());
    Ok((log_weight(x, table.log_ratios(), &log_fact) - log_g).exp())
}

/// The whole stationary vector in lattice index order.
pub fn stationary_distribution(params: &ClusterParams, alloc: &Allocation) -> Result<Vec<f64>> {
    let table = norm_const(params, alloc)?;
    let log_g = table.log_g_checked(alloc)?;
    let lattice = StateLattice::with_cap(alloc, DEFAULT_LATTICE_CAP)?;
    let log_fact = log_factorials(alloc.total());
    Ok(lattice
        .iter()
        .map(|x| (log_weight(&x, table.log_ratios(), &log_fact) - log_g).exp())
        .collect())
}

/// `beta(ell) = 1 / G(ell)`.
pub fn loss_probability(params: &ClusterParams, alloc: &Allocation) -> Result<f64> {
    norm_const(params, alloc)?.loss(alloc)
}

/// Fraction of time server `i` is busy.
pub fn occupation_rate(params: &ClusterParams, alloc: &Allocation, i: usize) -> Result<f64> {
    norm_const(params, alloc)?.occupation(alloc, i)
}

pub fn mean_queue_lengths(params: &ClusterParams, alloc: &Allocation) -> Result<Vec<f64>> {
    norm_const(params, alloc)?.mean_queue_lengths(alloc)
}

pub fn mean_response_time(params: &ClusterParams, alloc: &Allocation) -> Result<f64> {
    norm_const(params, alloc)?.mean_response_time(alloc)
}

/// Full exact report for one instance.
pub fn metrics(params: &ClusterParams, alloc: &Allocation) -> Result<MetricsReport> {
    norm_const(params, alloc)?.metrics(alloc)
}

/// Signed change `G(ell + e_i - e_j) - G(ell)`, kept in log-magnitude form
/// because `G` itself can exceed double range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeltaG {
    /// -1, 0 or +1.
    pub sign: f64,
    /// `ln |delta G|` (`-inf` when the sign is 0).
    pub log_abs: f64,
    /// Less than a [`NEAR_TIE`] fraction of the boundary mass survives the
    /// subtraction: the two allocations are tied in loss probability.
    pub near_tie: bool,
}

impl DeltaG {
    pub fn value(&self) -> f64 {
        if self.sign == 0.0 {
            0.0
        } else {
            self.sign * self.log_abs.exp()
        }
    }

    /// Strictly positive and not a near tie.
    pub fn is_positive(&self) -> bool {
        self.sign > 0.0 && !self.near_tie
    }

    /// Strictly negative and not a near tie.
    pub fn is_negative(&self) -> bool {
        self.sign < 0.0 && !self.near_tie
    }
}

fn check_pair(params: &ClusterParams, alloc: &Allocation, i: usize, j: usize) -> Result<()> {
    validate(params, alloc)?;
    for idx in [i, j] {
        if idx >= params.servers() {
            return Err(Error::ServerIndex {
                index: idx,
                servers: params.servers(),
            });
        }
    }
    if alloc[j] == 0 {
        return Err(Error::EmptyBuffer { server: j });
    }
    Ok(())
}

/// `delta_{j -> i} G(ell) = G(ell + e_i - e_j) - G(ell)`.
///
/// Evaluated as a difference of the two boundary faces that distinguish the
/// lattices, so the common bulk of `G` never enters the subtraction and the
/// sign is reliable however small the difference is relative to `G`.
pub fn delta_g(params: &ClusterParams, alloc: &Allocation, i: usize, j: usize) -> Result<DeltaG> {
    delta_g_boundary(params, alloc, i, j)
}

/// Table-only route: returns `(ln G(ell + e_i - e_j) - ln G(ell), ln G(ell))`.
pub fn table_log_difference(
    params: &ClusterParams,
    alloc: &Allocation,
    i: usize,
    j: usize,
) -> Result<(f64, f64)> {
    check_pair(params, alloc, i, j)?;
    if i == j {
        let lg = norm_const(params, alloc)?.log_g_checked(alloc)?;
        return Ok((0.0, lg));
    }
    let mut bounds = alloc.as_slice().to_vec();
    bounds[i] += 1;
    let table = NormTable::for_allocation(params, &Allocation::new(bounds))?;
    let moved = alloc.move_slot(j, i).expect("checked ell_j >= 1");
    let a = table.log_g_checked(&moved)?;
    let b = table.log_g_checked(alloc)?;
    Ok((a - b, b))
}

/// Boundary-face route for `delta_{j -> i} G(ell)`: the states gained are those
/// with `x_i = ell_i + 1, x_j < ell_j`, the states lost are those with
/// `x_j = ell_j, x_i <= ell_i`. For two servers this is
/// `sum_{x2 < ell2} w(ell1 + 1, x2) - sum_{x1 <= ell1} w(x1, ell2)`.
pub fn delta_g_boundary(
    params: &ClusterParams,
    alloc: &Allocation,
    i: usize,
    j: usize,
) -> Result<DeltaG> {
    check_pair(params, alloc, i, j)?;
    if i == j {
        return Ok(DeltaG {
            sign: 0.0,
            log_abs: f64::NEG_INFINITY,
            near_tie: true,
        });
    }
    let lambda = params.lambda();
    let log_ratio: Vec<f64> = params.mu().iter().map(|m| (m / lambda).ln()).collect();
    let log_fact = log_factorials(alloc.total() + 1);
    let mut sum = SignedLogSum::default();

    // gained face: free coordinate bounds with x_i pinned at ell_i + 1
    let mut gained = alloc.as_slice().to_vec();
    gained[i] = 0;
    gained[j] -= 1;
    for mut x in StateLattice::with_cap(&gained, DEFAULT_LATTICE_CAP)?
        .iter()
        .map(|s| s.as_slice().to_vec())
    {
        x[i] = alloc[i] + 1;
        sum.add(true, log_weight(&x, &log_ratio, &log_fact));
    }

    let mut lost = alloc.as_slice().to_vec();
    lost[j] = 0;
    for mut x in StateLattice::with_cap(&lost, DEFAULT_LATTICE_CAP)?
        .iter()
        .map(|s| s.as_slice().to_vec())
    {
        x[j] = alloc[j];
        sum.add(false, log_weight(&x, &log_ratio, &log_fact));
    }

    let (sign, log_abs, surviving) = sum.resolve();
    Ok(DeltaG {
        sign,
        log_abs,
        near_tie: surviving <= NEAR_TIE,
    })
}

/// Exact comparison of `G(a)` and `G(b)` for two allocations of one cluster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Comparison {
    /// Sign of `G(a) - G(b)`; 0 on a tie.
    pub sign: f64,
    /// `|G(a) - G(b)|` as a fraction of the larger of the two exclusive sums.
    pub surviving: f64,
}

impl Comparison {
    pub fn is_tie(&self, tolerance: f64) -> bool {
        self.sign == 0.0 || self.surviving <= tolerance
    }
}

/// Compares `G(a)` with `G(b)` through the states that lie below only one of
/// the two allocations. A larger `G` means a lower loss probability.
pub fn compare_norm_consts(
    params: &ClusterParams,
    a: &Allocation,
    b: &Allocation,
) -> Result<Comparison> {
    validate(params, a)?;
    validate(params, b)?;
    let lambda = params.lambda();
    let log_ratio: Vec<f64> = params.mu().iter().map(|m| (m / lambda).ln()).collect();
    let log_fact = log_factorials(a.total().max(b.total()));
    let mut sum = SignedLogSum::default();
    add_exclusive(&mut sum, true, a, b, &log_ratio, &log_fact);
    add_exclusive(&mut sum, false, b, a, &log_ratio, &log_fact);
    let (sign, _, surviving) = sum.resolve();
    Ok(Comparison { sign, surviving })
}

/// Adds the weights of `{x <= own} \ {x <= other}`, split into disjoint boxes:
/// the `k`-th box has the `k`-th exceeding coordinate above `other` and every
/// earlier exceeding coordinate within it.
fn add_exclusive(
    sum: &mut SignedLogSum,
    positive: bool,
    own: &[usize],
    other: &[usize],
    log_ratio: &[f64],
    log_fact: &[f64],
) {
    let n = own.len();
    let exceeding: Vec<usize> = (0..n).filter(|&i| own[i] > other[i]).collect();
    let mut lo = vec![0usize; n];
    let mut hi = own.to_vec();
    for &i in &exceeding {
        lo[i] = other[i] + 1;
        hi[i] = own[i];
        let mut x = lo.clone();
        'states: loop {
            sum.add(positive, log_weight(&x, log_ratio, log_fact));
            for c in (0..n).rev() {
                if x[c] < hi[c] {
                    x[c] += 1;
                    continue 'states;
                }
                x[c] = lo[c];
            }
            break;
        }
        lo[i] = 0;
        hi[i] = other[i];
    }
}

/// Sign structure of the coefficient sequence of `delta G` in powers of `1/lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SignPattern {
    /// Every coefficient positive: the faster server should get the slot at any load.
    AllPositive,
    /// Every coefficient negative.
    AllNegative,
    /// Negative up to `n_star - 1`, non-negative at `n_star`, positive after.
    NegThenPos { n_star: usize },
    /// None of the above; never produced for `mu_1 > mu_2`.
    Irregular,
}

/// Coefficients `c_n`, `n_min <= n <= n_max`, with
/// `delta G(lambda, ell) = sum_n c_n lambda^{-n}` for two servers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaCoefficients {
    pub n_min: usize,
    pub n_max: usize,
    pub c: Vec<f64>,
    pub pattern: SignPattern,
}

impl DeltaCoefficients {
    pub fn coefficient(&self, n: usize) -> Option<f64> {
        if n < self.n_min || n > self.n_max {
            return None;
        }
        Some(self.c[n - self.n_min])
    }

    /// `sum_n c_n lambda^{-n}` as (sign, ln|value|).
    pub fn evaluate(&self, lambda: f64) -> (f64, f64) {
        let ll = lambda.ln();
        let mut sum = SignedLogSum::default();
        for (k, &c) in self.c.iter().enumerate() {
            if c != 0.0 {
                let n = (self.n_min + k) as f64;
                sum.add(c > 0.0, c.abs().ln() - n * ll);
            }
        }
        let (sign, log_abs, _) = sum.resolve();
        (sign, log_abs)
    }

    pub fn evaluate_value(&self, lambda: f64) -> f64 {
        let (sign, log_abs) = self.evaluate(lambda);
        if sign == 0.0 {
            0.0
        } else {
            sign * log_abs.exp()
        }
    }
}

/// Classifies a coefficient sequence starting at `n_min`.
pub fn classify_signs(c: &[f64], n_min: usize) -> SignPattern {
    let scale = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let sign = |v: f64| -> i8 {
        if v.abs() <= ZERO_COEFFICIENT_REL * scale {
            0
        } else if v > 0.0 {
            1
        } else {
            -1
        }
    };
    let signs: Vec<i8> = c.iter().map(|&v| sign(v)).collect();
    let Some(first) = signs.iter().position(|&s| s >= 0) else {
        return SignPattern::AllNegative;
    };
    if signs[first + 1..].iter().any(|&s| s <= 0) {
        return SignPattern::Irregular;
    }
    if first == 0 && signs[0] > 0 {
        SignPattern::AllPositive
    } else {
        SignPattern::NegThenPos {
            n_star: n_min + first,
        }
    }
}

/// Two-server expansion of `delta G(ell) = G(ell + e1 - e2) - G(ell)`.
pub fn delta_g_coefficients(
    params: &ClusterParams,
    alloc: &Allocation,
) -> Result<DeltaCoefficients> {
    if params.servers() != 2 {
        return Err(Error::NotTwoServers {
            found: params.servers(),
        });
    }
    validate(params, alloc)?;
    let (l1, l2) = (alloc[0], alloc[1]);
    if l2 == 0 {
        return Err(Error::EmptyBuffer { server: 1 });
    }
    let (m1, m2) = (params.mu()[0], params.mu()[1]);
    let lf = log_factorials(l1 + l2);
    let log_choose = |n: usize, k: usize| lf[n] - lf[k] - lf[n - k];
    // term gained by the extra fast slot, and term lost with the slow slot
    let gained = |n: usize| {
        (log_choose(n, l1 + 1) + (l1 + 1) as f64 * m1.ln() + (n - l1 - 1) as f64 * m2.ln()).exp()
    };
    let lost =
        |n: usize| (log_choose(n, l2) + (n - l2) as f64 * m1.ln() + l2 as f64 * m2.ln()).exp();

    let n_min = (l1 + 1).min(l2);
    let n_max = l1 + l2;
    let c: Vec<f64> = (n_min..=n_max)
        .map(|n| {
            if l1 < l2 {
                if n < l2 {
                    gained(n)
                } else {
                    gained(n) - lost(n)
                }
            } else if n <= l1 {
                -lost(n)
            } else {
                gained(n) - lost(n)
            }
        })
        .collect();
    let pattern = classify_signs(&c, n_min);
    Ok(DeltaCoefficients {
        n_min,
        n_max,
        c,
        pattern,
    })
}

/// Number of states in the box below `alloc`, saturating.
pub fn state_count(alloc: &Allocation) -> usize {
    lattice_size(alloc).unwrap_or(usize::MAX)
}
