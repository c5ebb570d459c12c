//! Exhaustive search for the best split of `L` buffer slots, the asymptotic
//! predictors for light and heavy load, and scans over the arrival rate.
//!
//! Allocations here are always in the server order of [`ClusterParams`],
//! i.e. non-increasing service rate.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Allocation, ClusterParams};
use crate::numeric::{binomial_u128, log_factorials};
use crate::productform::{
    compare_norm_consts, delta_g, delta_g_coefficients, DeltaG, NormTable, SignPattern,
};

/// Largest number of compositions [`optimal_allocation`] will enumerate.
pub const SEARCH_CAP: usize = 200_000;

/// Largest normalization table built for a search.
pub const TABLE_CAP: usize = 20_000_000;

/// Relative tolerance under which two metric values count as tied.
pub const DEFAULT_TIE_TOLERANCE: f64 = 1e-12;

/// Compositions checked by brute force when verifying the multinomial mode.
const MODE_EXHAUSTIVE_CAP: u128 = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Metric {
    LossProbability,
    MeanResponseTime,
}

#[derive(Debug, Clone)]
pub struct OptimizationQuery {
    pub params: ClusterParams,
    pub total_slots: usize,
    pub metric: Metric,
    pub tie_tolerance: f64,
}

impl OptimizationQuery {
    pub fn new(params: ClusterParams, total_slots: usize, metric: Metric) -> Self {
        Self {
            params,
            total_slots,
            metric,
            tie_tolerance: DEFAULT_TIE_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizationResult {
    /// Every allocation within the tie tolerance of the best, in lexicographic order.
    pub minimizers: Vec<Allocation>,
    /// Lexicographically smallest minimizer.
    pub canonical: Allocation,
    pub best_value: f64,
}

/// Number of ways to split `total` slots over `servers` servers.
pub fn composition_count(total: usize, servers: usize) -> u128 {
    if servers == 0 {
        return 0;
    }
    binomial_u128((total + servers - 1) as u128, (servers - 1) as u128)
}

/// All compositions of `total` into `servers` parts, lexicographic order.
pub fn compositions(total: usize, servers: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if servers == 0 {
        return out;
    }
    let mut k = vec![0; servers];
    k[servers - 1] = total;
    loop {
        out.push(k.clone());
        // next composition: bump the rightmost bumpable prefix coordinate
        let Some(i) = (0..servers - 1)
            .rev()
            .find(|&i| k[i + 1..].iter().sum::<usize>() > 0)
        else {
            break;
        };
        let rest: usize = k[i + 1..].iter().sum();
        k[i] += 1;
        for v in &mut k[i + 1..] {
            *v = 0;
        }
        k[servers - 1] = rest - 1;
    }
    out
}

/// Value used for ranking: `ln beta` for loss (so tiny probabilities still
/// compare), the plain value for response time.
fn ranking_key(table: &NormTable, ell: &[usize], metric: Metric) -> Result<f64> {
    match metric {
        Metric::LossProbability => table.log_loss(ell),
        Metric::MeanResponseTime => table.mean_response_time(ell),
    }
}

/// Exhaustive minimization of the chosen metric over all compositions of `L`.
pub fn optimal_allocation(q: &OptimizationQuery) -> Result<OptimizationResult> {
    if q.total_slots == 0 {
        return Err(match q.metric {
            Metric::MeanResponseTime => Error::NoAdmittedJobs,
            Metric::LossProbability => {
                Error::InvalidConfig("total slots must be at least 1".into())
            }
        });
    }
    let n = q.params.servers();
    let count = composition_count(q.total_slots, n);
    if count > SEARCH_CAP as u128 {
        return Err(Error::CapacityExceeded {
            what: "allocation search",
            size: count,
            cap: SEARCH_CAP as u128,
        });
    }
    let table = NormTable::up_to_total(&q.params, q.total_slots, TABLE_CAP)?;
    optimal_allocation_in(&table, q.total_slots, q.metric, q.tie_tolerance)
}

/// Loss keys within this distance of the best (in `ln beta`, scaled by
/// `max(1, |ln beta|)`) are re-ranked exactly. Well above the rounding error
/// of the table recursion.
const COARSE_WINDOW: f64 = 1e-11;

/// Search using a prebuilt table that covers every composition of `total`.
///
/// Response times are ranked by value. Loss probabilities of different
/// allocations can agree to far more digits than a double holds, so the
/// table only shortlists; the shortlist is then ranked with
/// [`compare_norm_consts`], whose tie test is relative to the states the two
/// allocations do not share.
pub fn optimal_allocation_in(
    table: &NormTable,
    total: usize,
    metric: Metric,
    tie_tolerance: f64,
) -> Result<OptimizationResult> {
    let all = compositions(total, table.params().servers());
    let keys = all
        .iter()
        .map(|ell| ranking_key(table, ell, metric))
        .collect::<Result<Vec<_>>>()?;
    let best = keys.iter().copied().fold(f64::INFINITY, f64::min);

    let minimizers: Vec<Allocation> = match metric {
        Metric::MeanResponseTime => all
            .into_iter()
            .zip(&keys)
            .filter(|(_, &k)| (k - best).abs() <= tie_tolerance * best.abs())
            .map(|(ell, _)| Allocation::new(ell))
            .collect(),
        Metric::LossProbability => {
            let window = COARSE_WINDOW * best.abs().max(1.0);
            let shortlist: Vec<Allocation> = all
                .into_iter()
                .zip(&keys)
                .filter(|(_, &k)| k <= best + window)
                .map(|(ell, _)| Allocation::new(ell))
                .collect();
            let params = table.params();
            let mut champion = 0;
            for c in 1..shortlist.len() {
                let cmp = compare_norm_consts(params, &shortlist[c], &shortlist[champion])?;
                if cmp.sign > 0.0 && !cmp.is_tie(tie_tolerance) {
                    champion = c;
                }
            }
            let mut out = Vec::new();
            for (c, alloc) in shortlist.iter().enumerate() {
                if c == champion
                    || compare_norm_consts(params, alloc, &shortlist[champion])?
                        .is_tie(tie_tolerance)
                {
                    out.push(alloc.clone());
                }
            }
            out
        }
    };
    let canonical = minimizers[0].clone();
    let best_value = match metric {
        Metric::LossProbability => table.loss(&canonical)?,
        Metric::MeanResponseTime => best,
    };
    Ok(OptimizationResult {
        minimizers,
        canonical,
        best_value,
    })
}

/// Light-load optimum. The second entry is the alternative endpoint when
/// the two candidates tie.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LowTrafficPrediction {
    pub primary: Allocation,
    pub alternative: Option<Allocation>,
}

impl LowTrafficPrediction {
    pub fn contains(&self, alloc: &Allocation) -> bool {
        &self.primary == alloc || self.alternative.as_ref() == Some(alloc)
    }
}

/// Rounds values within `1e-9` of an integer onto it before ceil or floor.
fn snap(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r
    } else {
        x
    }
}

/// Light-load optimal split for rates `mu` (in the order given).
///
/// Two servers: `ell_1 = ceil(p_1 L - p_2)` with `p = mu / sum mu`, plus
/// `floor(p_1 L + p_1)` when that differs. More servers: a mode of
/// `Multinomial(L; p)`.
pub fn low_traffic_predictor(mu: &[f64], total: usize) -> LowTrafficPrediction {
    let sum: f64 = mu.iter().sum();
    let p: Vec<f64> = mu.iter().map(|m| m / sum).collect();
    if p.len() == 2 {
        let lt = total as f64;
        let clamp = |v: f64| v.max(0.0).min(lt) as usize;
        let first = clamp(snap(p[0] * lt - p[1]).ceil());
        let second = clamp(snap(p[0] * lt + p[0]).floor());
        let make = |l1: usize| Allocation::new(vec![l1, total - l1]);
        return LowTrafficPrediction {
            primary: make(first),
            alternative: (second != first).then(|| make(second)),
        };
    }
    LowTrafficPrediction {
        primary: multinomial_mode(&p, total),
        alternative: None,
    }
}

fn log_multinomial_kernel(ell: &[usize], log_p: &[f64], lf: &[f64]) -> f64 {
    ell.iter()
        .zip(log_p)
        .map(|(&l, &lp)| l as f64 * lp - lf[l])
        .sum()
}

/// Adds slots one at a time where `p_i / (ell_i + 1)` is largest (lowest index
/// on ties), then confirms against brute force when that is cheap.
pub fn multinomial_mode(p: &[f64], total: usize) -> Allocation {
    let n = p.len();
    let mut ell = vec![0usize; n];
    for _ in 0..total {
        let mut best = 0;
        for i in 1..n {
            if p[i] / (ell[i] + 1) as f64 > p[best] / (ell[best] + 1) as f64 {
                best = i;
            }
        }
        ell[best] += 1;
    }
    if composition_count(total, n) <= MODE_EXHAUSTIVE_CAP {
        let log_p: Vec<f64> = p.iter().map(|v| v.ln()).collect();
        let lf = log_factorials(total);
        let greedy = log_multinomial_kernel(&ell, &log_p, &lf);
        let mut best = (greedy, ell.clone());
        for c in compositions(total, n) {
            let v = log_multinomial_kernel(&c, &log_p, &lf);
            if v > best.0 + 1e-12 * best.0.abs().max(1.0) {
                best = (v, c);
            }
        }
        ell = best.1;
    }
    Allocation::new(ell)
}

/// Heavy-load optimum: as even as possible, extra slots to the fastest servers.
pub fn heavy_traffic_predictor(mu: &[f64], total: usize) -> Allocation {
    let n = mu.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| mu[b].total_cmp(&mu[a]));
    let mut ell = vec![total / n; n];
    for &i in order.iter().take(total % n) {
        ell[i] += 1;
    }
    Allocation::new(ell)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanPoint {
    pub lambda: f64,
    pub result: OptimizationResult,
}

/// A coordinate of the canonical optimum moved the wrong way between two grid points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityViolation {
    pub server: usize,
    pub lambda_before: f64,
    pub lambda_after: f64,
    pub before: usize,
    pub after: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub metric: Metric,
    pub points: Vec<ScanPoint>,
    /// Fastest server growing or slowest server shrinking with load.
    pub violations: Vec<MonotonicityViolation>,
    /// `false` for response time, where violations are observations only.
    pub asserted: bool,
}

impl MonotonicityReport {
    pub fn passed(&self) -> bool {
        !self.asserted || self.violations.is_empty()
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::InvalidGrid("need at least two arrival rates".into()));
    }
    if grid.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
        return Err(Error::InvalidGrid(
            "arrival rates must be positive and finite".into(),
        ));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidGrid(
            "arrival rates must be strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Canonical optimum at every grid point, computed in parallel and returned in grid order.
pub fn scan(mu: &[f64], total: usize, grid: &[f64], metric: Metric) -> Result<Vec<ScanPoint>> {
    grid.par_iter()
        .map(|&lambda| {
            let params = ClusterParams::new(lambda, mu)?;
            let result = optimal_allocation(&OptimizationQuery::new(params, total, metric))?;
            Ok(ScanPoint { lambda, result })
        })
        .collect()
}

/// Consecutive-point violations of "fastest non-increasing, slowest non-decreasing".
pub fn monotonicity_violations(points: &[ScanPoint]) -> Vec<MonotonicityViolation> {
    let mut out = Vec::new();
    for w in points.windows(2) {
        let (a, b) = (&w[0].result.canonical, &w[1].result.canonical);
        let last = a.len() - 1;
        if b[0] > a[0] {
            out.push(MonotonicityViolation {
                server: 0,
                lambda_before: w[0].lambda,
                lambda_after: w[1].lambda,
                before: a[0],
                after: b[0],
            });
        }
        if last > 0 && b[last] < a[last] {
            out.push(MonotonicityViolation {
                server: last,
                lambda_before: w[0].lambda,
                lambda_after: w[1].lambda,
                before: a[last],
                after: b[last],
            });
        }
    }
    out
}

pub fn monotonicity_scan(
    mu: &[f64],
    total: usize,
    grid: &[f64],
    metric: Metric,
) -> Result<MonotonicityReport> {
    check_grid(grid)?;
    let sorted = ClusterParams::new(1.0, mu)?.mu().to_vec();
    let points = scan(&sorted, total, grid, metric)?;
    Ok(MonotonicityReport {
        metric,
        violations: monotonicity_violations(&points),
        asserted: metric == Metric::LossProbability,
        points,
    })
}

/// The total of the `n` fastest servers went up between two grid points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConjectureFailure {
    pub n: usize,
    pub lambda_before: f64,
    pub lambda_after: f64,
    pub sum_before: usize,
    pub sum_after: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConjectureReport {
    pub points: Vec<ScanPoint>,
    /// Prefix lengths `n = 1..N-1` that were checked.
    pub prefixes: usize,
    pub failures: Vec<ConjectureFailure>,
}

impl ConjectureReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    /// Whether the prefix of length `n` stayed non-increasing.
    pub fn prefix_passed(&self, n: usize) -> bool {
        self.failures.iter().all(|f| f.n != n)
    }
}

pub fn prefix_sum_failures(points: &[ScanPoint]) -> Vec<ConjectureFailure> {
    let mut out = Vec::new();
    let Some(first) = points.first() else {
        return out;
    };
    let servers = first.result.canonical.len();
    for n in 1..servers {
        for w in points.windows(2) {
            let before: usize = w[0].result.canonical[..n].iter().sum();
            let after: usize = w[1].result.canonical[..n].iter().sum();
            if after > before {
                out.push(ConjectureFailure {
                    n,
                    lambda_before: w[0].lambda,
                    lambda_after: w[1].lambda,
                    sum_before: before,
                    sum_after: after,
                });
            }
        }
    }
    out
}

/// Evidence for "the `n` fastest servers together get fewer slots as load grows".
pub fn conjecture_scan(mu: &[f64], total: usize, grid: &[f64]) -> Result<ConjectureReport> {
    if mu.len() < 3 {
        return Err(Error::TooFewServers { found: mu.len() });
    }
    check_grid(grid)?;
    let sorted = ClusterParams::new(1.0, mu)?.mu().to_vec();
    let points = scan(&sorted, total, grid, Metric::LossProbability)?;
    Ok(ConjectureReport {
        failures: prefix_sum_failures(&points),
        prefixes: sorted.len() - 1,
        points,
    })
}

/// Shifting slots to the slower server kept helping after a shift had already helped.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftViolation {
    pub lambda: f64,
    pub ell: Vec<usize>,
    pub x: usize,
}

/// The faster server gained the advantage again at a lower load than one where it had lost it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoadOrderViolation {
    pub ell: Vec<usize>,
    pub lambda_negative: f64,
    pub lambda_positive: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PropositionReport {
    /// Premises `beta(ell + e1 - e2) <= beta(ell)` examined.
    pub shift_premises: usize,
    pub shift_steps: usize,
    pub shift_violations: Vec<ShiftViolation>,
    /// Allocations whose sign of `delta G` was followed across the load grid.
    pub load_sequences: usize,
    pub load_violations: Vec<LoadOrderViolation>,
    /// Allocations whose coefficient signs were classified.
    pub classified: usize,
    pub irregular: Vec<Vec<usize>>,
    pub near_ties_skipped: usize,
}

impl PropositionReport {
    pub fn passed(&self) -> bool {
        self.shift_violations.is_empty()
            && self.load_violations.is_empty()
            && self.irregular.is_empty()
    }
}

/// First step of a chain of `delta G` values that is clearly negative.
pub fn first_negative_step(steps: &[DeltaG]) -> Option<usize> {
    steps.iter().position(|d| d.is_negative())
}

/// Index `x` at which a loss sequence fails to increase strictly, ignoring
/// relative differences below the near-tie tolerance.
pub fn loss_sequence_violation(betas: &[f64]) -> Option<usize> {
    betas.windows(2).position(|w| {
        let diff = w[1] - w[0];
        diff < 0.0 && diff.abs() > crate::productform::NEAR_TIE * w[0].abs().max(w[1].abs())
            || diff == 0.0
    })
}

/// First clear positive that follows a clear negative along increasing load.
pub fn load_order_violation(lambdas: &[f64], deltas: &[DeltaG]) -> Option<(f64, f64)> {
    let mut negative_at = None;
    for (&l, d) in lambdas.iter().zip(deltas) {
        if d.is_negative() && negative_at.is_none() {
            negative_at = Some(l);
        }
        if d.is_positive() {
            if let Some(ln) = negative_at {
                return Some((ln, l));
            }
        }
    }
    None
}

/// Exhaustive two-server check of both structural properties of the optimum
/// and of the sign structure of the `delta G` expansion, for every `ell` with
/// `ell_2 >= 1` and `ell_1 + ell_2 <= max_total`.
pub fn proposition_checks(mu: &[f64], max_total: usize, grid: &[f64]) -> Result<PropositionReport> {
    if mu.len() != 2 {
        return Err(Error::NotTwoServers { found: mu.len() });
    }
    check_grid(grid)?;
    let sorted = ClusterParams::new(1.0, mu)?.mu().to_vec();

    let allocations: Vec<Vec<usize>> = (1..=max_total)
        .flat_map(|total| (0..total).map(move |l1| vec![l1, total - l1]))
        .collect();

    // delta G for every allocation at every load, one table per load
    let per_lambda: Vec<(Vec<DeltaG>, PropositionReport)> = grid
        .par_iter()
        .map(|&lambda| -> Result<_> {
            let params = ClusterParams::new(lambda, &sorted)?;
            let deltas = allocations
                .iter()
                .map(|ell| delta_g(&params, &Allocation::new(ell.clone()), 0, 1))
                .collect::<Result<Vec<_>>>()?;
            let mut report = PropositionReport::default();
            for (ell, d) in allocations.iter().zip(&deltas) {
                if d.near_tie {
                    report.near_ties_skipped += 1;
                }
                if d.near_tie || d.sign < 0.0 {
                    continue;
                }
                report.shift_premises += 1;
                // steps ell - (x+1)(e1 - e2), x = 0..ell_1 - 1
                let steps = (0..ell[0])
                    .map(|x| {
                        let shifted = Allocation::new(vec![ell[0] - x - 1, ell[1] + x + 1]);
                        delta_g(&params, &shifted, 0, 1)
                    })
                    .collect::<Result<Vec<_>>>()?;
                report.shift_steps += steps.len();
                report.near_ties_skipped += steps.iter().filter(|s| s.near_tie).count();
                if let Some(x) = first_negative_step(&steps) {
                    report.shift_violations.push(ShiftViolation {
                        lambda,
                        ell: ell.clone(),
                        x,
                    });
                }
            }
            Ok((deltas, report))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut report = PropositionReport::default();
    for (_, r) in &per_lambda {
        report.shift_premises += r.shift_premises;
        report.shift_steps += r.shift_steps;
        report.near_ties_skipped += r.near_ties_skipped;
        report
            .shift_violations
            .extend(r.shift_violations.iter().cloned());
    }

    let unit = ClusterParams::new(1.0, &sorted)?;
    for (a, ell) in allocations.iter().enumerate() {
        let deltas: Vec<DeltaG> = per_lambda.iter().map(|(d, _)| d[a]).collect();
        report.load_sequences += 1;
        if let Some((neg, pos)) = load_order_violation(grid, &deltas) {
            report.load_violations.push(LoadOrderViolation {
                ell: ell.clone(),
                lambda_negative: neg,
                lambda_positive: pos,
            });
        }
        let coeffs = delta_g_coefficients(&unit, &Allocation::new(ell.clone()))?;
        report.classified += 1;
        if coeffs.pattern == SignPattern::Irregular {
            report.irregular.push(ell.clone());
        }
    }
    Ok(report)
}

/// `count` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|k| (a + (b - a) * k as f64 / (count - 1) as f64).exp())
        .collect()
}
