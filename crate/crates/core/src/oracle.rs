//! Ground truth by brute force: the token-network generator solved numerically,
//! with no use of the product form.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{validate, Allocation, ClusterParams, MetricsReport, StateLattice};

/// Largest state space the oracle accepts by default.
pub const ORACLE_CAP: usize = 5000;

/// Systems up to this size are solved by dense LU; larger ones by power iteration.
pub const DENSE_LIMIT: usize = 2000;

const RESIDUAL_TOL: f64 = 1e-12;
/// Power iteration also runs until its estimated per-state error is this small.
const STATE_ERROR_TARGET: f64 = 1e-12;
/// Changes this small are rounding noise; the iterate cannot improve further.
const ROUNDOFF_FLOOR: f64 = 1e-16;
const CHECK_EVERY: usize = 64;
const MAX_POWER_ITERATIONS: usize = 50_000_000;

/// Sparse generator of the free-slot chain: off-diagonal rates per row.
#[derive(Debug, Clone)]
pub struct GeneratorMatrix {
    lattice: StateLattice,
    rows: Vec<Vec<(usize, f64)>>,
    lambda: f64,
}

impl GeneratorMatrix {
    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn lattice(&self) -> &StateLattice {
        &self.lattice
    }

    /// Outgoing transitions `(target, rate)` of state index `from`.
    pub fn transitions(&self, from: usize) -> &[(usize, f64)] {
        &self.rows[from]
    }

    /// Rate `q(from, to)` for `from != to`; zero when absent.
    pub fn rate(&self, from: usize, to: usize) -> f64 {
        self.rows[from]
            .iter()
            .filter(|(t, _)| *t == to)
            .map(|(_, r)| r)
            .sum()
    }

    /// Total outflow, i.e. minus the diagonal entry.
    pub fn outflow(&self, from: usize) -> f64 {
        self.rows[from].iter().map(|(_, r)| r).sum()
    }

    fn max_outflow(&self) -> f64 {
        (0..self.dim()).map(|i| self.outflow(i)).fold(0.0, f64::max)
    }

    /// `max_y |(pi Q)_y|`.
    pub fn residual(&self, pi: &[f64]) -> f64 {
        let mut flow = vec![0.0; self.dim()];
        for (x, row) in self.rows.iter().enumerate() {
            for &(y, r) in row {
                flow[y] += pi[x] * r;
                flow[x] -= pi[x] * r;
            }
        }
        flow.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn scale(&self) -> f64 {
        self.max_outflow().max(self.lambda)
    }
}

pub fn build_generator(params: &ClusterParams, alloc: &Allocation) -> Result<GeneratorMatrix> {
    build_generator_with_cap(params, alloc, ORACLE_CAP)
}

pub fn build_generator_with_cap(
    params: &ClusterParams,
    alloc: &Allocation,
    cap: usize,
) -> Result<GeneratorMatrix> {
    validate(params, alloc)?;
    let lattice = StateLattice::with_cap(alloc, cap)?;
    let lambda = params.lambda();
    let mu = params.mu();
    let strides = lattice.strides().to_vec();
    let mut rows = Vec::with_capacity(lattice.len());
    for (idx, x) in lattice.iter().enumerate() {
        let free: usize = x.iter().sum();
        let mut row = Vec::new();
        for i in 0..x.len() {
            if x[i] >= 1 {
                row.push((idx - strides[i], lambda * x[i] as f64 / free as f64));
            }
            if x[i] < alloc[i] {
                row.push((idx + strides[i], mu[i]));
            }
        }
        rows.push(row);
    }
    Ok(GeneratorMatrix {
        lattice,
        rows,
        lambda,
    })
}

/// Stationary vector in lattice index order.
pub fn solve_stationary(gen: &GeneratorMatrix) -> Result<Vec<f64>> {
    if gen.dim() <= DENSE_LIMIT {
        solve_dense(gen)
    } else {
        solve_power(gen)
    }
}

/// LU solve of `Q^T pi = 0` with the last equation replaced by `sum pi = 1`.
pub fn solve_dense(gen: &GeneratorMatrix) -> Result<Vec<f64>> {
    let n = gen.dim();
    if n == 1 {
        return Ok(vec![1.0]);
    }
    let mut a = DMatrix::<f64>::zeros(n, n);
    for (x, row) in gen.rows.iter().enumerate() {
        for &(y, r) in row {
            a[(y, x)] += r;
            a[(x, x)] -= r;
        }
    }
    for c in 0..n {
        a[(n - 1, c)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(n);
    b[n - 1] = 1.0;
    let sol = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::SingularSystem("LU factorization is singular".into()))?;
    finish(gen, sol.iter().copied().collect())
}

/// Power iteration on the uniformized chain `P = I + Q / (1.01 max outflow)`.
pub fn solve_power(gen: &GeneratorMatrix) -> Result<Vec<f64>> {
    let n = gen.dim();
    let unif = 1.01 * gen.max_outflow();
    if unif == 0.0 {
        return Ok(vec![1.0 / n as f64; n]);
    }
    let target = RESIDUAL_TOL * gen.scale();
    let stay: Vec<f64> = (0..n).map(|y| 1.0 - gen.outflow(y) / unif).collect();
    let moves: Vec<Vec<(usize, f64)>> = gen
        .rows
        .iter()
        .map(|row| row.iter().map(|&(y, r)| (y, r / unif)).collect())
        .collect();
    let mut pi = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    let mut checkpoint = pi.clone();
    let mut last_change = f64::INFINITY;
    for iter in 0..MAX_POWER_ITERATIONS {
        for ((v, &p), &s) in next.iter_mut().zip(&pi).zip(&stay) {
            *v = p * s;
        }
        for (x, row) in moves.iter().enumerate() {
            let p = pi[x];
            for &(y, q) in row {
                next[y] += p * q;
            }
        }
        std::mem::swap(&mut pi, &mut next);
        if iter % CHECK_EVERY == CHECK_EVERY - 1 {
            let total: f64 = pi.iter().sum();
            pi.iter_mut().for_each(|v| *v /= total);
            let change = pi
                .iter()
                .zip(&checkpoint)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            // geometric tail: what is left is about change * q / (1 - q)
            let q = if last_change.is_finite() {
                change / last_change
            } else {
                1.0
            };
            let remaining = if q < 1.0 {
                change * q / (1.0 - q)
            } else {
                f64::INFINITY
            };
            if gen.residual(&pi) <= target
                && (remaining <= STATE_ERROR_TARGET || change <= ROUNDOFF_FLOOR)
            {
                return Ok(pi);
            }
            last_change = change;
            checkpoint.copy_from_slice(&pi);
        }
    }
    Err(Error::SingularSystem(format!(
        "power iteration did not reach residual {target:e}"
    )))
}

fn finish(gen: &GeneratorMatrix, mut pi: Vec<f64>) -> Result<Vec<f64>> {
    if pi.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem("non-finite solution".into()));
    }
    for v in pi.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|v| *v /= total);
    let res = gen.residual(&pi);
    if res > 1e3 * RESIDUAL_TOL * gen.scale() {
        return Err(Error::SingularSystem(format!("residual {res:e} too large")));
    }
    Ok(pi)
}

/// Metrics recomputed from the numerically solved chain.
pub fn oracle_metrics(params: &ClusterParams, alloc: &Allocation) -> Result<MetricsReport> {
    let gen = build_generator(params, alloc)?;
    let pi = solve_stationary(&gen)?;
    Ok(metrics_from_distribution(params, alloc, gen.lattice(), &pi))
}

/// Loss, occupation, queue lengths and response time from any stationary vector.
pub fn metrics_from_distribution(
    params: &ClusterParams,
    alloc: &Allocation,
    lattice: &StateLattice,
    pi: &[f64],
) -> MetricsReport {
    let n = alloc.len();
    let mut occupation = vec![0.0; n];
    let mut mean_jobs = vec![0.0; n];
    let mut loss = 0.0;
    for (x, &p) in lattice.iter().zip(pi) {
        if x.iter().all(|&v| v == 0) {
            loss += p;
        }
        for i in 0..n {
            if x[i] < alloc[i] {
                occupation[i] += p;
            }
            mean_jobs[i] += (alloc[i] - x[i]) as f64 * p;
        }
    }
    let jobs: f64 = mean_jobs.iter().sum();
    let mean_response_time = if alloc.total() == 0 {
        None
    } else {
        Some(jobs / (params.lambda() * (1.0 - loss)))
    };
    MetricsReport {
        loss,
        occupation,
        mean_jobs,
        mean_response_time,
        norm_const_log: -loss.ln(),
    }
}

/// Reproducible test instances for certification runs: `count` systems
/// cycling through 2, 3 and 4 servers and loads 0.1, 1 and 10, with rates
/// drawn from `[0.05, 1)` and buffers small enough that every lattice has at
/// most `max_states` states.
pub fn random_instances(
    seed: u64,
    count: usize,
    max_states: usize,
) -> Vec<(ClusterParams, Allocation)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|k| {
            let n = 2 + k % 3;
            let lambda = [0.1, 1.0, 10.0][(k / 3) % 3];
            let mu: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
            // largest per-axis bound b with (b + 1)^n <= max_states
            let mut side = (max_states as f64).powf(1.0 / n as f64).floor() as usize;
            while side > 1 && side.pow(n as u32) > max_states {
                side -= 1;
            }
            let ell: Vec<usize> = (0..n).map(|_| rng.random_range(0..side.max(1))).collect();
            let params = ClusterParams::new(lambda, &mu).expect("positive rates");
            (params, Allocation::new(ell))
        })
        .collect()
}
