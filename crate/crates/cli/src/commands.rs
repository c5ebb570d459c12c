use hetlb::optimizer::{self, Metric, OptimizationQuery, OptimizationResult};
use hetlb::simulator::{self, Horizon, Scheduler, ServiceDistribution, SimConfig};
use hetlb::{oracle, productform, validate_raw, Allocation, ClusterParams, MetricsReport};
use serde::Serialize;

use crate::output::{json, num, Csv};
use crate::{
    Cli, Command, Format, GridArgs, MetricArg, Outcome, SchedulerArg, ServiceArg, SimArgs,
};

pub type CmdResult<T> = Result<T, String>;

pub fn err(e: hetlb::Error) -> String {
    e.to_string()
}

pub fn floats(text: &str, what: &str) -> CmdResult<Vec<f64>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| format!("{what}: `{}` is not a number", t.trim()))
        })
        .collect()
}

pub fn integers(text: &str, what: &str) -> CmdResult<Vec<i64>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<i64>()
                .map_err(|_| format!("{what}: `{}` is not an integer", t.trim()))
        })
        .collect()
}

pub fn metric(m: MetricArg) -> Metric {
    match m {
        MetricArg::Loss => Metric::LossProbability,
        MetricArg::ResponseTime => Metric::MeanResponseTime,
    }
}

fn metric_name(m: Metric) -> &'static str {
    match m {
        Metric::LossProbability => "loss",
        Metric::MeanResponseTime => "response-time",
    }
}

/// Arrival rates from `--lambdas` or `--grid LO:HI:COUNT [--log]`.
pub fn grid(args: &GridArgs, default: impl FnOnce() -> Vec<f64>) -> CmdResult<Vec<f64>> {
    let points = if let Some(list) = &args.lambdas {
        floats(list, "--lambdas")?
    } else if let Some(spec) = &args.grid {
        let parts: Vec<&str> = spec.split(':').collect();
        let [lo, hi, count] = parts[..] else {
            return Err(format!("--grid expects LO:HI:COUNT, got `{spec}`"));
        };
        let lo: f64 = lo
            .parse()
            .map_err(|_| format!("--grid: bad lower end `{lo}`"))?;
        let hi: f64 = hi
            .parse()
            .map_err(|_| format!("--grid: bad upper end `{hi}`"))?;
        let count: usize = count
            .parse()
            .map_err(|_| format!("--grid: bad count `{count}`"))?;
        if count == 0 {
            return Err("--grid: the grid is empty".into());
        }
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(format!("--grid: need 0 < LO <= HI, got {lo}:{hi}"));
        }
        if args.log {
            optimizer::log_grid(lo, hi, count)
        } else if count == 1 {
            vec![lo]
        } else {
            (0..count)
                .map(|k| lo + (hi - lo) * k as f64 / (count - 1) as f64)
                .collect()
        }
    } else {
        default()
    };
    if points.is_empty() {
        return Err("the load grid is empty".into());
    }
    if let Some(bad) = points.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
        return Err(format!(
            "arrival rates must be positive and finite, got {bad}"
        ));
    }
    Ok(points)
}

pub fn run(cli: &Cli) -> CmdResult<Outcome> {
    let fmt = cli.global.format;
    match &cli.command {
        Command::Analyze {
            system,
            ell,
            oracle,
        } => analyze(fmt, system.lambda, &system.mu, ell, *oracle),
        Command::Optimize {
            system,
            total,
            metric: m,
        } => optimize(fmt, system.lambda, &system.mu, *total, metric(*m)),
        Command::Sweep {
            mu,
            total,
            metric: m,
            grid: g,
        } => sweep(fmt, mu, *total, metric(*m), g),
        Command::Simulate { system, ell, sim } => {
            simulate(fmt, system.lambda, &system.mu, ell, sim, cli.global.seed)
        }
        Command::Verify { suite } => crate::verify::run(cli, suite),
        Command::Figures { id, overrides } => crate::figures::run(fmt, *id, overrides),
    }
}

/// Per-server fields of a report, moved to the order the rates were given in.
fn user_order_report(params: &ClusterParams, r: &MetricsReport) -> MetricsReport {
    MetricsReport {
        occupation: params.to_user_order(&r.occupation),
        mean_jobs: params.to_user_order(&r.mean_jobs),
        ..r.clone()
    }
}

#[derive(Serialize)]
struct AnalyzeJson {
    lambda: f64,
    mu: Vec<f64>,
    ell: Vec<usize>,
    method: &'static str,
    #[serde(flatten)]
    metrics: MetricsReport,
}

fn analyze(fmt: Format, lambda: f64, mu: &str, ell: &str, use_oracle: bool) -> CmdResult<Outcome> {
    let mu = floats(mu, "--mu")?;
    let ell_raw = integers(ell, "--ell")?;
    let (params, alloc) = validate_raw(lambda, &mu, &ell_raw).map_err(err)?;
    let report = if use_oracle {
        oracle::oracle_metrics(&params, &alloc).map_err(err)?
    } else {
        productform::metrics(&params, &alloc).map_err(err)?
    };
    let report = user_order_report(&params, &report);
    let text = match fmt {
        Format::Json => json(&AnalyzeJson {
            lambda,
            mu: params.mu_user_order(),
            ell: params.to_user_order(alloc.as_slice()),
            method: if use_oracle { "oracle" } else { "product-form" },
            metrics: report,
        }),
        Format::Csv => {
            let mut csv = Csv::new(&["quantity", "value"]);
            csv.row(&["loss".to_string(), num(report.loss)]);
            for (i, v) in report.occupation.iter().enumerate() {
                csv.row(&[format!("occupation_{}", i + 1), num(*v)]);
            }
            for (i, v) in report.mean_jobs.iter().enumerate() {
                csv.row(&[format!("mean_jobs_{}", i + 1), num(*v)]);
            }
            csv.row(&[
                "mean_response_time".to_string(),
                num(report.mean_response_time.unwrap_or(f64::NAN)),
            ]);
            csv.row(&["log_norm_const".to_string(), num(report.norm_const_log)]);
            csv.into_string()
        }
    };
    Ok(Outcome::ok(text))
}

/// Header shared by `optimize` and `sweep`.
fn optimum_header(n: usize) -> Vec<String> {
    let mut h: Vec<String> = (1..=n).map(|i| format!("mu_{i}")).collect();
    h.push("lambda".into());
    h.extend((1..=n).map(|i| format!("l_{i}")));
    h.push("best_value".into());
    h.push("ties".into());
    h
}

fn optimum_row(params: &ClusterParams, lambda: f64, r: &OptimizationResult) -> Vec<String> {
    let mut row: Vec<String> = params.mu_user_order().into_iter().map(num).collect();
    row.push(num(lambda));
    row.extend(
        params
            .to_user_order(r.canonical.as_slice())
            .into_iter()
            .map(|l| l.to_string()),
    );
    row.push(num(r.best_value));
    row.push(r.minimizers.len().to_string());
    row
}

#[derive(Serialize)]
struct OptimumJson {
    mu: Vec<f64>,
    lambda: f64,
    total: usize,
    metric: &'static str,
    allocation: Vec<usize>,
    minimizers: Vec<Vec<usize>>,
    best_value: f64,
}

fn optimum_json(
    params: &ClusterParams,
    lambda: f64,
    total: usize,
    m: Metric,
    r: &OptimizationResult,
) -> OptimumJson {
    OptimumJson {
        mu: params.mu_user_order(),
        lambda,
        total,
        metric: metric_name(m),
        allocation: params.to_user_order(r.canonical.as_slice()),
        minimizers: r
            .minimizers
            .iter()
            .map(|a| params.to_user_order(a.as_slice()))
            .collect(),
        best_value: r.best_value,
    }
}

fn optimize(fmt: Format, lambda: f64, mu: &str, total: usize, m: Metric) -> CmdResult<Outcome> {
    let mu = floats(mu, "--mu")?;
    let params = ClusterParams::new(lambda, &mu).map_err(err)?;
    let result = optimizer::optimal_allocation(&OptimizationQuery::new(params.clone(), total, m))
        .map_err(err)?;
    let text = match fmt {
        Format::Json => json(&optimum_json(&params, lambda, total, m, &result)),
        Format::Csv => {
            let mut csv = Csv::new(&optimum_header(mu.len()));
            csv.row(&optimum_row(&params, lambda, &result));
            csv.into_string()
        }
    };
    Ok(Outcome::ok(text))
}

fn sweep(fmt: Format, mus: &[String], total: usize, m: Metric, g: &GridArgs) -> CmdResult<Outcome> {
    let lambdas = grid(g, Vec::new)?;
    let clusters = mus
        .iter()
        .map(|s| {
            let mu = floats(s, "--mu")?;
            ClusterParams::new(1.0, &mu).map_err(err)
        })
        .collect::<CmdResult<Vec<_>>>()?;
    let n = clusters[0].servers();
    if fmt == Format::Csv && clusters.iter().any(|c| c.servers() != n) {
        return Err(
            "--mu: every rate vector in a CSV sweep needs the same number of servers".into(),
        );
    }
    let mut rows = Vec::new();
    let mut records = Vec::new();
    for unit in &clusters {
        let points = optimizer::scan(unit.mu(), total, &lambdas, m).map_err(err)?;
        for p in points {
            let params = unit.with_lambda(p.lambda).map_err(err)?;
            rows.push(optimum_row(&params, p.lambda, &p.result));
            records.push(optimum_json(&params, p.lambda, total, m, &p.result));
        }
    }
    let text = match fmt {
        Format::Json => json(&records),
        Format::Csv => {
            let mut csv = Csv::new(&optimum_header(n));
            for r in &rows {
                csv.row(r);
            }
            csv.into_string()
        }
    };
    Ok(Outcome::ok(text))
}

pub fn sim_config(
    params: ClusterParams,
    alloc: Allocation,
    sim: &SimArgs,
    seed: u64,
) -> CmdResult<SimConfig> {
    let mut cfg = SimConfig::new(params, alloc);
    cfg.scheduler = match sim.scheduler {
        SchedulerArg::Ps => Scheduler::ProcessorSharing,
        SchedulerArg::Fcfs => Scheduler::Fcfs,
    };
    cfg.service = match sim.service {
        ServiceArg::Exp => ServiceDistribution::Exponential,
        ServiceArg::Det => ServiceDistribution::Deterministic,
        ServiceArg::Hyper => {
            ServiceDistribution::balanced_hyperexponential(sim.scv).map_err(err)?
        }
    };
    cfg.horizon = match (sim.arrivals, sim.time) {
        (_, Some(t)) => Horizon::Time(t),
        (Some(n), None) => Horizon::Arrivals(n),
        (None, None) => Horizon::Arrivals(simulator::DEFAULT_ARRIVALS),
    };
    cfg.warmup_fraction = sim.warmup;
    cfg.replications = sim.replications;
    cfg.confidence = sim.confidence;
    cfg.seed = seed;
    cfg.validate().map_err(err)?;
    Ok(cfg)
}

#[derive(Serialize)]
struct SimRow {
    metric: String,
    mean: f64,
    half_width: f64,
    analytic: Option<f64>,
}

fn simulate(
    fmt: Format,
    lambda: f64,
    mu: &str,
    ell: &str,
    sim: &SimArgs,
    seed: u64,
) -> CmdResult<Outcome> {
    let mu = floats(mu, "--mu")?;
    let ell_raw = integers(ell, "--ell")?;
    let (params, alloc) = validate_raw(lambda, &mu, &ell_raw).map_err(err)?;
    let cfg = sim_config(params.clone(), alloc.clone(), sim, seed)?;
    let est = simulator::estimate_metrics(&cfg).map_err(err)?;
    let exact = productform::metrics(&params, &alloc).map_err(err)?;

    let mut rows = vec![SimRow {
        metric: "loss".into(),
        mean: est.loss.mean,
        half_width: est.loss.half_width,
        analytic: Some(exact.loss),
    }];
    if let Some(d) = est.mean_response_time {
        rows.push(SimRow {
            metric: "mean_response_time".into(),
            mean: d.mean,
            half_width: d.half_width,
            analytic: exact.mean_response_time,
        });
    }
    let occupation = params.to_user_order(&est.occupation);
    let exact_occupation = params.to_user_order(&exact.occupation);
    for (i, (iv, a)) in occupation.iter().zip(&exact_occupation).enumerate() {
        rows.push(SimRow {
            metric: format!("occupation_{}", i + 1),
            mean: iv.mean,
            half_width: iv.half_width,
            analytic: Some(*a),
        });
    }
    rows.push(SimRow {
        metric: "throughput".into(),
        mean: est.throughput.mean,
        half_width: est.throughput.half_width,
        analytic: Some(lambda * (1.0 - exact.loss)),
    });
    rows.push(SimRow {
        metric: "mean_jobs".into(),
        mean: est.mean_jobs.mean,
        half_width: est.mean_jobs.half_width,
        analytic: Some(exact.mean_jobs.iter().sum()),
    });
    rows.push(SimRow {
        metric: "full_fraction".into(),
        mean: est.full_fraction.mean,
        half_width: est.full_fraction.half_width,
        analytic: Some(exact.loss),
    });

    let text = match fmt {
        Format::Json => json(&rows),
        Format::Csv => {
            let mut csv = Csv::new(&["metric", "mean", "half_width", "analytic"]);
            for r in &rows {
                csv.row(&[
                    r.metric.clone(),
                    num(r.mean),
                    num(r.half_width),
                    num(r.analytic.unwrap_or(f64::NAN)),
                ]);
            }
            csv.into_string()
        }
    };
    Ok(Outcome::ok(text))
}
