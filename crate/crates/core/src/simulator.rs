//! Discrete-event simulation of the physical cluster: Poisson arrivals, a
//! dispatcher that picks a server with probability proportional to its free
//! slots, and servers that run processor sharing or FCFS.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::model::{validate, Allocation, ClusterParams, MetricsReport};
use crate::productform;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Scheduler {
    ProcessorSharing,
    Fcfs,
}

/// Job size law, always with unit mean; a job of size `s` needs `s / mu_i`
/// time units alone on server `i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum ServiceDistribution {
    Exponential,
    Deterministic,
    /// Rate `r1` with probability `p`, rate `r2` otherwise.
    HyperExponential {
        p: f64,
        r1: f64,
        r2: f64,
    },
}

impl ServiceDistribution {
    pub fn hyperexponential(p: f64, r1: f64, r2: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0 && r1 > 0.0 && r2 > 0.0 && r1.is_finite() && r2.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "hyperexponential needs 0 < p < 1 and positive rates, got p={p}, r1={r1}, r2={r2}"
            )));
        }
        let mean = p / r1 + (1.0 - p) / r2;
        if (mean - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "hyperexponential mean must be 1, got {mean}"
            )));
        }
        Ok(Self::HyperExponential { p, r1, r2 })
    }

    /// Unit-mean mixture whose two branches contribute equally to the mean,
    /// tuned to squared coefficient of variation `scv > 1`.
    pub fn balanced_hyperexponential(scv: f64) -> Result<Self> {
        if !(scv > 1.0 && scv.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "hyperexponential needs squared CV above 1, got {scv}"
            )));
        }
        // 1 / (2 p (1 - p)) - 1 = scv
        let p = (1.0 - ((scv - 1.0) / (scv + 1.0)).sqrt()) / 2.0;
        Ok(Self::HyperExponential {
            p,
            r1: 2.0 * p,
            r2: 2.0 * (1.0 - p),
        })
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Self::Exponential | Self::Deterministic => 1.0,
            Self::HyperExponential { p, r1, r2 } => p / r1 + (1.0 - p) / r2,
        }
    }

    /// Squared coefficient of variation.
    pub fn scv(&self) -> f64 {
        match *self {
            Self::Exponential => 1.0,
            Self::Deterministic => 0.0,
            Self::HyperExponential { p, r1, r2 } => {
                let m2 = 2.0 * p / (r1 * r1) + 2.0 * (1.0 - p) / (r2 * r2);
                let m = self.mean();
                m2 / (m * m) - 1.0
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Exponential => "exponential",
            Self::Deterministic => "deterministic",
            Self::HyperExponential { .. } => "hyperexponential",
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::Exponential => rng.sample::<f64, _>(Exp1),
            Self::Deterministic => 1.0,
            Self::HyperExponential { p, r1, r2 } => {
                let rate = if rng.random::<f64>() < p { r1 } else { r2 };
                rng.sample::<f64, _>(Exp1) / rate
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Horizon {
    /// Total number of arrivals, warmup included.
    Arrivals(u64),
    /// Total simulated time, warmup included.
    Time(f64),
}

pub const DEFAULT_ARRIVALS: u64 = 1_000_000;
pub const DEFAULT_WARMUP: f64 = 0.2;
pub const DEFAULT_REPLICATIONS: usize = 20;
pub const DEFAULT_CONFIDENCE: f64 = 0.95;

#[derive(Debug, Clone, Serialize)]
pub struct SimConfig {
    #[serde(skip)]
    pub params: ClusterParams,
    pub alloc: Allocation,
    pub scheduler: Scheduler,
    pub service: ServiceDistribution,
    pub horizon: Horizon,
    pub warmup_fraction: f64,
    pub replications: usize,
    pub seed: u64,
    /// Coverage of each reported interval.
    pub confidence: f64,
}

impl SimConfig {
    pub fn new(params: ClusterParams, alloc: Allocation) -> Self {
        Self {
            params,
            alloc,
            scheduler: Scheduler::ProcessorSharing,
            service: ServiceDistribution::Exponential,
            horizon: Horizon::Arrivals(DEFAULT_ARRIVALS),
            warmup_fraction: DEFAULT_WARMUP,
            replications: DEFAULT_REPLICATIONS,
            seed: 0,
            confidence: DEFAULT_CONFIDENCE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate(&self.params, &self.alloc)?;
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::InvalidConfig(format!(
                "warmup fraction must lie in [0, 1), got {}",
                self.warmup_fraction
            )));
        }
        if self.replications < 2 {
            return Err(Error::InvalidConfig(
                "at least two replications are needed".into(),
            ));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "confidence must lie in (0, 1), got {}",
                self.confidence
            )));
        }
        if (self.service.mean() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(
                "service distribution must have unit mean".into(),
            ));
        }
        match self.horizon {
            Horizon::Arrivals(0) => Err(Error::InvalidConfig(
                "arrival horizon must be positive".into(),
            )),
            Horizon::Time(t) if !(t > 0.0 && t.is_finite()) => {
                Err(Error::InvalidConfig("time horizon must be positive".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Raw counts and time integrals of one replication over its measurement window.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ReplicationTallies {
    pub arrivals: u64,
    pub admitted: u64,
    pub rejected: u64,
    pub window: f64,
    pub busy_time: Vec<f64>,
    pub jobs_time: Vec<f64>,
    /// Time with every buffer full.
    pub full_time: f64,
    pub response_sum: f64,
    pub response_count: u64,
}

impl ReplicationTallies {
    pub fn loss(&self) -> f64 {
        self.rejected as f64 / self.arrivals as f64
    }

    pub fn occupation(&self, i: usize) -> f64 {
        self.busy_time[i] / self.window
    }

    pub fn mean_jobs(&self) -> f64 {
        self.jobs_time.iter().sum::<f64>() / self.window
    }

    pub fn throughput(&self) -> f64 {
        self.admitted as f64 / self.window
    }

    pub fn full_fraction(&self) -> f64 {
        self.full_time / self.window
    }

    pub fn mean_response_time(&self) -> Option<f64> {
        (self.response_count > 0).then(|| self.response_sum / self.response_count as f64)
    }
}

#[derive(Debug, Clone, Copy)]
struct Job {
    arrival: f64,
    tagged: bool,
}

/// Processor-sharing job keyed by the virtual time at which it completes.
#[derive(Debug, Clone, Copy)]
struct PsJob {
    finish_tag: f64,
    seq: u64,
    job: Job,
}

impl PartialEq for PsJob {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for PsJob {}
impl PartialOrd for PsJob {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for PsJob {
    fn cmp(&self, other: &Self) -> Ordering {
        self.finish_tag
            .total_cmp(&other.finish_tag)
            .then(self.seq.cmp(&other.seq))
    }
}

enum Queue {
    /// Virtual time advances at `mu / n` while `n` jobs share the server.
    Ps {
        virtual_time: f64,
        updated: f64,
        jobs: BinaryHeap<Reverse<PsJob>>,
    },
    /// Head job started (or resumed) at `head_start` with `head_work` left.
    Fcfs {
        jobs: VecDeque<(Job, f64)>,
        head_start: f64,
    },
}

struct Server {
    mu: f64,
    queue: Queue,
    next_departure: f64,
}

impl Server {
    fn len(&self) -> usize {
        match &self.queue {
            Queue::Ps { jobs, .. } => jobs.len(),
            Queue::Fcfs { jobs, .. } => jobs.len(),
        }
    }

    fn sync_virtual_time(&mut self, now: f64) {
        if let Queue::Ps {
            virtual_time,
            updated,
            jobs,
        } = &mut self.queue
        {
            if !jobs.is_empty() {
                *virtual_time += (now - *updated) * self.mu / jobs.len() as f64;
            }
            *updated = now;
        }
    }

    fn reschedule(&mut self, now: f64) {
        self.next_departure = match &self.queue {
            Queue::Ps {
                virtual_time, jobs, ..
            } => match jobs.peek() {
                Some(Reverse(head)) => {
                    now + ((head.finish_tag - virtual_time).max(0.0)) * jobs.len() as f64 / self.mu
                }
                None => f64::INFINITY,
            },
            Queue::Fcfs { jobs, head_start } => match jobs.front() {
                Some((_, work)) => head_start + work / self.mu,
                None => f64::INFINITY,
            },
        };
    }

    fn admit(&mut self, now: f64, job: Job, work: f64, seq: u64) {
        self.sync_virtual_time(now);
        match &mut self.queue {
            Queue::Ps {
                virtual_time, jobs, ..
            } => jobs.push(Reverse(PsJob {
                finish_tag: *virtual_time + work,
                seq,
                job,
            })),
            Queue::Fcfs { jobs, head_start } => {
                if jobs.is_empty() {
                    *head_start = now;
                }
                jobs.push_back((job, work));
            }
        }
        self.reschedule(now);
    }

    fn depart(&mut self, now: f64) -> Job {
        self.sync_virtual_time(now);
        let job = match &mut self.queue {
            Queue::Ps {
                virtual_time, jobs, ..
            } => {
                let Reverse(head) = jobs.pop().expect("departure from empty server");
                *virtual_time = head.finish_tag;
                head.job
            }
            Queue::Fcfs { jobs, head_start } => {
                let (job, _) = jobs.pop_front().expect("departure from empty server");
                *head_start = now;
                job
            }
        };
        self.reschedule(now);
        job
    }
}

/// Independent generator for `(seed, replication, purpose)`.
fn stream(seed: u64, replication: u64, purpose: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&replication.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(purpose);
    rng
}

/// Runs one replication. Statistics cover the window after warmup; jobs that
/// arrive inside it are followed until they leave, with arrivals continuing
/// meanwhile so their sharing is not distorted.
pub fn run_replication(cfg: &SimConfig, replication: u64) -> ReplicationTallies {
    let n = cfg.alloc.len();
    let lambda = cfg.params.lambda();
    let mut arrivals_rng = stream(cfg.seed, replication, 0);
    let mut dispatch_rng = stream(cfg.seed, replication, 1);
    let mut size_rngs: Vec<ChaCha8Rng> = (0..n)
        .map(|i| stream(cfg.seed, replication, 2 + i as u64))
        .collect();

    let mut servers: Vec<Server> = cfg
        .params
        .mu()
        .iter()
        .map(|&mu| Server {
            mu,
            queue: match cfg.scheduler {
                Scheduler::ProcessorSharing => Queue::Ps {
                    virtual_time: 0.0,
                    updated: 0.0,
                    jobs: BinaryHeap::new(),
                },
                Scheduler::Fcfs => Queue::Fcfs {
                    jobs: VecDeque::new(),
                    head_start: 0.0,
                },
            },
            next_departure: f64::INFINITY,
        })
        .collect();

    // arrival-count horizon: the window opens at arrival `warm` and closes at arrival `total`
    let (mut start, mut end, warm, total) = match cfg.horizon {
        Horizon::Arrivals(total) => {
            let warm = (cfg.warmup_fraction * total as f64).floor() as u64;
            let start = if warm == 0 { 0.0 } else { f64::INFINITY };
            (start, f64::INFINITY, warm, total)
        }
        Horizon::Time(t) => (cfg.warmup_fraction * t, t, 0, u64::MAX),
    };

    let mut tallies = ReplicationTallies {
        busy_time: vec![0.0; n],
        jobs_time: vec![0.0; n],
        ..Default::default()
    };
    let mut now = 0.0;
    let mut next_arrival = arrivals_rng.sample::<f64, _>(Exp1) / lambda;
    let mut arrival_count: u64 = 0;
    let mut outstanding: u64 = 0;
    let mut seq: u64 = 0;

    loop {
        let (srv, departure) = servers
            .iter()
            .enumerate()
            .map(|(i, s)| (i, s.next_departure))
            .fold(
                (usize::MAX, f64::INFINITY),
                |a, b| if b.1 < a.1 { b } else { a },
            );
        let next = departure.min(next_arrival);
        if now >= end && outstanding == 0 {
            break;
        }
        if next > end && now < end && outstanding == 0 && matches!(cfg.horizon, Horizon::Time(_)) {
            // nothing tagged is pending; close the window at the horizon
            accumulate(&mut tallies, &servers, &cfg.alloc, now, end, start, end);
            break;
        }
        accumulate(&mut tallies, &servers, &cfg.alloc, now, next, start, end);
        now = next;

        if departure <= next_arrival {
            let job = servers[srv].depart(now);
            if job.tagged {
                tallies.response_sum += now - job.arrival;
                tallies.response_count += 1;
                outstanding -= 1;
            }
            continue;
        }

        arrival_count += 1;
        next_arrival = now + arrivals_rng.sample::<f64, _>(Exp1) / lambda;
        let tagged = match cfg.horizon {
            Horizon::Arrivals(_) => {
                if arrival_count == warm {
                    start = now;
                }
                if arrival_count == total {
                    end = now;
                }
                arrival_count > warm && arrival_count <= total
            }
            Horizon::Time(_) => now >= start && now <= end,
        };
        let free: Vec<usize> = servers
            .iter()
            .zip(cfg.alloc.iter())
            .map(|(s, &l)| l - s.len())
            .collect();
        let total_free: usize = free.iter().sum();
        if tagged {
            tallies.arrivals += 1;
        }
        if total_free == 0 {
            if tagged {
                tallies.rejected += 1;
            }
            continue;
        }
        let mut pick = dispatch_rng.random_range(0..total_free);
        let target = free
            .iter()
            .position(|&f| {
                if pick < f {
                    true
                } else {
                    pick -= f;
                    false
                }
            })
            .expect("pick below total free slots");
        let work = cfg.service.sample(&mut size_rngs[target]);
        seq += 1;
        servers[target].admit(
            now,
            Job {
                arrival: now,
                tagged,
            },
            work,
            seq,
        );
        if tagged {
            tallies.admitted += 1;
            outstanding += 1;
        }
    }
    tallies.window = end - start;
    tallies
}

fn accumulate(
    tallies: &mut ReplicationTallies,
    servers: &[Server],
    alloc: &Allocation,
    from: f64,
    to: f64,
    start: f64,
    end: f64,
) {
    let dt = to.min(end) - from.max(start);
    if dt <= 0.0 || !dt.is_finite() {
        return;
    }
    let mut full = true;
    for (i, s) in servers.iter().enumerate() {
        let k = s.len();
        if k > 0 {
            tallies.busy_time[i] += dt;
        }
        tallies.jobs_time[i] += k as f64 * dt;
        if k < alloc[i] {
            full = false;
        }
    }
    if full {
        tallies.full_time += dt;
    }
}

/// Sample mean with a two-sided t interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub mean: f64,
    pub half_width: f64,
}

impl Interval {
    pub fn from_samples(samples: &[f64], confidence: f64) -> Self {
        let r = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / r;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (r - 1.0);
        let t = StudentsT::new(0.0, 1.0, r - 1.0)
            .expect("at least two samples")
            .inverse_cdf(0.5 + confidence / 2.0);
        Self {
            mean,
            half_width: t * (var / r).sqrt(),
        }
    }

    /// `|mean - value| <= half_width`, with slack for values known only to rounding.
    pub fn covers(&self, value: f64) -> bool {
        (self.mean - value).abs() <= self.half_width + 1e-12 * value.abs().max(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimEstimate {
    pub loss: Interval,
    /// `None` when some replication admitted no job.
    pub mean_response_time: Option<Interval>,
    pub occupation: Vec<Interval>,
    pub throughput: Interval,
    pub mean_jobs: Interval,
    /// Fraction of time with every buffer full; equals the loss by PASTA.
    pub full_fraction: Interval,
    pub replications: usize,
    pub confidence: f64,
}

/// Runs all replications (in parallel) and aggregates them in replication order.
pub fn estimate_metrics(cfg: &SimConfig) -> Result<SimEstimate> {
    Ok(summarize(&run_all(cfg)?, cfg.confidence))
}

pub fn run_all(cfg: &SimConfig) -> Result<Vec<ReplicationTallies>> {
    cfg.validate()?;
    Ok((0..cfg.replications as u64)
        .into_par_iter()
        .map(|r| run_replication(cfg, r))
        .collect())
}

pub fn summarize(reps: &[ReplicationTallies], confidence: f64) -> SimEstimate {
    let collect = |f: &dyn Fn(&ReplicationTallies) -> f64| -> Interval {
        let v: Vec<f64> = reps.iter().map(f).collect();
        Interval::from_samples(&v, confidence)
    };
    let responses: Option<Vec<f64>> = reps.iter().map(|r| r.mean_response_time()).collect();
    let n = reps[0].busy_time.len();
    SimEstimate {
        loss: collect(&|r| r.loss()),
        mean_response_time: responses.map(|v| Interval::from_samples(&v, confidence)),
        occupation: (0..n).map(|i| collect(&|r| r.occupation(i))).collect(),
        throughput: collect(&|r| r.throughput()),
        mean_jobs: collect(&|r| r.mean_jobs()),
        full_fraction: collect(&|r| r.full_fraction()),
        replications: reps.len(),
        confidence,
    }
}

/// One analytic value against one simulated interval.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageCheck {
    pub metric: String,
    pub distribution: &'static str,
    pub analytic: f64,
    pub mean: f64,
    pub half_width: f64,
    pub covered: bool,
}

/// Two distributions whose means for one metric should agree.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementCheck {
    pub metric: String,
    pub first: &'static str,
    pub second: &'static str,
    pub difference: f64,
    pub allowed: f64,
    pub agrees: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InsensitivityReport {
    pub analytic: MetricsReport,
    pub estimates: Vec<(&'static str, SimEstimate)>,
    pub coverage: Vec<CoverageCheck>,
    pub agreement: Vec<AgreementCheck>,
    /// Level of each individual interval.
    pub interval_confidence: f64,
}

impl InsensitivityReport {
    pub fn passed(&self) -> bool {
        self.coverage.iter().all(|c| c.covered) && self.agreement.iter().all(|a| a.agrees)
    }
}

/// Squared coefficient of variation of the high-variance case.
pub const HYPER_SCV: f64 = 4.0;

/// The three unit-mean size laws compared by [`insensitivity_test`].
pub fn insensitivity_distributions() -> [ServiceDistribution; 3] {
    [
        ServiceDistribution::Exponential,
        ServiceDistribution::Deterministic,
        ServiceDistribution::balanced_hyperexponential(HYPER_SCV).expect("scv above one"),
    ]
}

/// Simulates the cluster under each size law and compares with the exact
/// metrics. `cfg.confidence` is the joint level over every interval of the
/// test; each interval gets a Bonferroni share of it.
pub fn insensitivity_test(cfg: &SimConfig) -> Result<InsensitivityReport> {
    if cfg.scheduler != Scheduler::ProcessorSharing {
        return Err(Error::SchedulerNotPS);
    }
    cfg.validate()?;
    let analytic = productform::metrics(&cfg.params, &cfg.alloc)?;
    let dists = insensitivity_distributions();
    let per_dist = 1 + cfg.alloc.len() + usize::from(analytic.mean_response_time.is_some());
    let interval_confidence = 1.0 - (1.0 - cfg.confidence) / (dists.len() * per_dist) as f64;

    let mut estimates = Vec::new();
    for dist in dists {
        let mut c = cfg.clone();
        c.service = dist;
        c.confidence = interval_confidence;
        estimates.push((dist.name(), estimate_metrics(&c)?));
    }

    let mut coverage = Vec::new();
    let mut named: Vec<(String, f64, Vec<Interval>)> = Vec::new();
    named.push((
        "loss".into(),
        analytic.loss,
        estimates.iter().map(|(_, e)| e.loss).collect(),
    ));
    if let Some(d) = analytic.mean_response_time {
        let iv: Option<Vec<Interval>> = estimates
            .iter()
            .map(|(_, e)| e.mean_response_time)
            .collect();
        if let Some(iv) = iv {
            named.push(("mean_response_time".into(), d, iv));
        }
    }
    for i in 0..cfg.alloc.len() {
        named.push((
            format!("occupation_{}", i + 1),
            analytic.occupation[i],
            estimates.iter().map(|(_, e)| e.occupation[i]).collect(),
        ));
    }
    for (metric, value, intervals) in &named {
        for ((dist, _), iv) in estimates.iter().zip(intervals) {
            coverage.push(CoverageCheck {
                metric: metric.clone(),
                distribution: dist,
                analytic: *value,
                mean: iv.mean,
                half_width: iv.half_width,
                covered: iv.covers(*value),
            });
        }
    }
    let mut agreement = Vec::new();
    for (metric, _, intervals) in &named {
        for a in 0..intervals.len() {
            for b in a + 1..intervals.len() {
                let difference = (intervals[a].mean - intervals[b].mean).abs();
                let allowed = intervals[a].half_width + intervals[b].half_width;
                agreement.push(AgreementCheck {
                    metric: metric.clone(),
                    first: estimates[a].0,
                    second: estimates[b].0,
                    difference,
                    allowed,
                    agrees: difference <= allowed + 1e-12,
                });
            }
        }
    }
    Ok(InsensitivityReport {
        analytic,
        estimates,
        coverage,
        agreement,
        interval_confidence,
    })
}
