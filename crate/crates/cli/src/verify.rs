use hetlb::optimizer::{self, ConjectureReport, PropositionReport};
use hetlb::oracle::{self, build_generator_with_cap, solve_stationary};
use hetlb::productform;
use hetlb::simulator::{self, SimConfig};
use hetlb::{validate_raw, Allocation, ClusterParams, MetricsReport};
use rayon::prelude::*;
use serde::Serialize;

use crate::commands::{err, floats, grid, integers, CmdResult};
use crate::output::{json, num, Csv};
use crate::{Cli, Fault, Format, Outcome, Suite};

/// Largest per-state gap tolerated between the closed form and the solved chain.
/// Metric gaps are reported alongside but not judged: they sum many state
/// errors weighted by queue lengths.
pub const CERTIFY_TOL: f64 = 1e-9;

pub fn run(cli: &Cli, suite: &Suite) -> CmdResult<Outcome> {
    let fmt = cli.global.format;
    match suite {
        Suite::Productform {
            instances,
            max_states,
        } => productform_suite(
            fmt,
            cli.global.seed,
            *instances,
            *max_states,
            cli.global.inject_fault,
        ),
        Suite::Propositions {
            mu1,
            max_total,
            points,
        } => propositions(fmt, mu1, *max_total, *points),
        Suite::Conjecture { mu, total, grid: g } => conjecture(fmt, mu, *total, g),
        Suite::Insensitivity {
            lambda,
            mu,
            ell,
            arrivals,
            warmup,
            replications,
            confidence,
        } => {
            let mu = floats(mu, "--mu")?;
            let ell = integers(ell, "--ell")?;
            let (params, alloc) = validate_raw(*lambda, &mu, &ell).map_err(err)?;
            let mut cfg = SimConfig::new(params, alloc);
            cfg.horizon = simulator::Horizon::Arrivals(*arrivals);
            cfg.warmup_fraction = *warmup;
            cfg.replications = *replications;
            cfg.confidence = *confidence;
            cfg.seed = cli.global.seed;
            insensitivity(fmt, &cfg)
        }
    }
}

#[derive(Serialize)]
struct Certified {
    servers: usize,
    lambda: f64,
    mu: Vec<f64>,
    ell: Vec<usize>,
    states: usize,
    max_state_error: f64,
    max_metric_error: f64,
}

/// Closed-form stationary law in lattice order. The fault evaluates the
/// closed form on the mirrored system, so each buffer meets the wrong rate.
fn exact_distribution(
    params: &ClusterParams,
    alloc: &Allocation,
    fault: Option<Fault>,
) -> hetlb::Result<Vec<f64>> {
    match fault {
        None => productform::stationary_distribution(params, alloc),
        Some(Fault::ReverseMu) => {
            let mirrored = Allocation::new(alloc.iter().rev().copied().collect());
            let lattice = hetlb::state_lattice(alloc)?;
            lattice
                .iter()
                .map(|x| {
                    let back: Vec<usize> = x.iter().rev().copied().collect();
                    productform::stationary_prob(params, &mirrored, &back.into())
                })
                .collect()
        }
    }
}

fn exact_metrics(
    params: &ClusterParams,
    alloc: &Allocation,
    fault: Option<Fault>,
) -> hetlb::Result<MetricsReport> {
    match fault {
        None => productform::metrics(params, alloc),
        Some(Fault::ReverseMu) => {
            let mirrored = Allocation::new(alloc.iter().rev().copied().collect());
            let mut m = productform::metrics(params, &mirrored)?;
            m.occupation.reverse();
            m.mean_jobs.reverse();
            Ok(m)
        }
    }
}

fn metric_gap(a: &MetricsReport, b: &MetricsReport) -> f64 {
    let mut gap = (a.loss - b.loss).abs();
    for (x, y) in a
        .occupation
        .iter()
        .zip(&b.occupation)
        .chain(a.mean_jobs.iter().zip(&b.mean_jobs))
    {
        gap = gap.max((x - y).abs());
    }
    if let (Some(x), Some(y)) = (a.mean_response_time, b.mean_response_time) {
        gap = gap.max((x - y).abs() / y.max(1.0));
    }
    gap
}

fn certify(
    params: &ClusterParams,
    alloc: &Allocation,
    cap: usize,
    fault: Option<Fault>,
) -> hetlb::Result<Certified> {
    let gen = build_generator_with_cap(params, alloc, cap)?;
    let pi = solve_stationary(&gen)?;
    let exact = exact_distribution(params, alloc, fault)?;
    let max_state_error = pi
        .iter()
        .zip(&exact)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let solved = oracle::metrics_from_distribution(params, alloc, gen.lattice(), &pi);
    let max_metric_error = metric_gap(&solved, &exact_metrics(params, alloc, fault)?);
    Ok(Certified {
        servers: params.servers(),
        lambda: params.lambda(),
        mu: params.mu().to_vec(),
        ell: alloc.as_slice().to_vec(),
        states: gen.dim(),
        max_state_error,
        max_metric_error,
    })
}

#[derive(Serialize)]
struct ProductformJson<'a> {
    tolerance: f64,
    passed: bool,
    worst_state_error: f64,
    worst_metric_error: f64,
    instances: &'a [Certified],
}

fn productform_suite(
    fmt: Format,
    seed: u64,
    count: usize,
    max_states: usize,
    fault: Option<Fault>,
) -> CmdResult<Outcome> {
    if count == 0 {
        return Err("--instances must be at least 1".into());
    }
    let cases = oracle::random_instances(seed, count, max_states);
    let results = cases
        .par_iter()
        .map(|(p, a)| certify(p, a, max_states, fault))
        .collect::<hetlb::Result<Vec<_>>>()
        .map_err(err)?;
    let worst_state = results
        .iter()
        .map(|c| c.max_state_error)
        .fold(0.0, f64::max);
    let worst_metric = results
        .iter()
        .map(|c| c.max_metric_error)
        .fold(0.0, f64::max);
    let passed = worst_state <= CERTIFY_TOL;
    let text = match fmt {
        Format::Json => json(&ProductformJson {
            tolerance: CERTIFY_TOL,
            passed,
            worst_state_error: worst_state,
            worst_metric_error: worst_metric,
            instances: &results,
        }),
        Format::Csv => {
            let mut csv = Csv::new(&[
                "instance",
                "servers",
                "lambda",
                "mu",
                "ell",
                "states",
                "max_state_error",
                "max_metric_error",
            ]);
            for (k, c) in results.iter().enumerate() {
                let mu: Vec<String> = c.mu.iter().map(|&m| num(m)).collect();
                let ell: Vec<String> = c.ell.iter().map(|l| l.to_string()).collect();
                csv.row(&[
                    k.to_string(),
                    c.servers.to_string(),
                    num(c.lambda),
                    mu.join(";"),
                    ell.join(";"),
                    c.states.to_string(),
                    num(c.max_state_error),
                    num(c.max_metric_error),
                ]);
            }
            csv.into_string()
        }
    };
    if !passed {
        eprintln!("product form disagrees with the solved chain: worst state error {worst_state:e}, worst metric error {worst_metric:e}");
    }
    Ok(Outcome { text, passed })
}

#[derive(Serialize)]
struct PropositionJson {
    mu1: f64,
    #[serde(flatten)]
    report: PropositionReport,
}

fn propositions(fmt: Format, mu1: &str, max_total: usize, points: usize) -> CmdResult<Outcome> {
    let firsts = floats(mu1, "--mu1")?;
    if let Some(bad) = firsts.iter().find(|m| !(**m > 0.0 && **m < 1.0)) {
        return Err(format!("--mu1 values must lie in (0, 1), got {bad}"));
    }
    if points < 2 {
        return Err("--points must be at least 2".into());
    }
    let loads = optimizer::log_grid(0.1, 10.0, points);
    let mut records = Vec::new();
    for &m in &firsts {
        let report =
            optimizer::proposition_checks(&[m, 1.0 - m], max_total, &loads).map_err(err)?;
        records.push(PropositionJson { mu1: m, report });
    }
    let passed = records.iter().all(|r| r.report.passed());
    let text = match fmt {
        Format::Json => json(&records),
        Format::Csv => {
            let mut csv = Csv::new(&[
                "mu1",
                "shift_premises",
                "shift_steps",
                "shift_violations",
                "load_sequences",
                "load_violations",
                "classified",
                "irregular",
                "near_ties_skipped",
            ]);
            for r in &records {
                let p = &r.report;
                csv.row(&[
                    num(r.mu1),
                    p.shift_premises.to_string(),
                    p.shift_steps.to_string(),
                    p.shift_violations.len().to_string(),
                    p.load_sequences.to_string(),
                    p.load_violations.len().to_string(),
                    p.classified.to_string(),
                    p.irregular.len().to_string(),
                    p.near_ties_skipped.to_string(),
                ]);
            }
            csv.into_string()
        }
    };
    Ok(Outcome { text, passed })
}

fn conjecture(fmt: Format, mu: &str, total: usize, g: &crate::GridArgs) -> CmdResult<Outcome> {
    let mu = floats(mu, "--mu")?;
    let loads = grid(g, || (1..=70).map(|k| 0.1 * k as f64).collect())?;
    let report: ConjectureReport = optimizer::conjecture_scan(&mu, total, &loads).map_err(err)?;
    let passed = report.passed();
    for f in &report.failures {
        eprintln!(
            "the {} fastest servers went from {} to {} slots between lambda {} and {}",
            f.n, f.sum_before, f.sum_after, f.lambda_before, f.lambda_after
        );
    }
    let text = match fmt {
        Format::Json => json(&report),
        Format::Csv => {
            let n = mu.len();
            let mut header = vec!["lambda".to_string()];
            header.extend((1..=n).map(|i| format!("l_{i}")));
            header.extend((1..n).map(|k| format!("prefix_{k}")));
            let mut csv = Csv::new(&header);
            for p in &report.points {
                let ell = p.result.canonical.as_slice();
                let mut row = vec![num(p.lambda)];
                row.extend(ell.iter().map(|l| l.to_string()));
                let mut sum = 0;
                for l in &ell[..n - 1] {
                    sum += l;
                    row.push(sum.to_string());
                }
                csv.row(&row);
            }
            csv.into_string()
        }
    };
    Ok(Outcome { text, passed })
}

fn insensitivity(fmt: Format, cfg: &SimConfig) -> CmdResult<Outcome> {
    let report = simulator::insensitivity_test(cfg).map_err(err)?;
    let passed = report.passed();
    let text = match fmt {
        Format::Json => json(&report),
        Format::Csv => {
            let mut csv = Csv::new(&[
                "metric",
                "distribution",
                "analytic",
                "mean",
                "half_width",
                "covered",
            ]);
            for c in &report.coverage {
                csv.row(&[
                    c.metric.clone(),
                    c.distribution.to_string(),
                    num(c.analytic),
                    num(c.mean),
                    num(c.half_width),
                    c.covered.to_string(),
                ]);
            }
            csv.into_string()
        }
    };
    if !passed {
        for c in report.coverage.iter().filter(|c| !c.covered) {
            eprintln!(
                "{} under {} misses: {} vs {} +- {}",
                c.metric, c.distribution, c.analytic, c.mean, c.half_width
            );
        }
        for a in report.agreement.iter().filter(|a| !a.agrees) {
            eprintln!(
                "{}: {} and {} differ by {} (allowed {})",
                a.metric, a.first, a.second, a.difference, a.allowed
            );
        }
    }
    Ok(Outcome { text, passed })
}
