//! Data series for the six plots. Rows are loads (or ℓ₁ for the
//! loss-versus-split plot); allocations are reported fastest server first.

use hetlb::optimizer::{self, Metric};
use hetlb::productform::NormTable;
use hetlb::ClusterParams;
use rayon::prelude::*;
use serde::Serialize;

use crate::commands::{err, floats, grid, integers, CmdResult};
use crate::output::{json, num, Csv};
use crate::{FigureArgs, Format, Outcome};

const FAST_RATES: [f64; 6] = [0.5, 0.6, 0.7, 0.8, 0.9, 0.95];
const FOUR_SERVERS: [f64; 4] = [0.45, 0.3, 0.2, 0.05];
const TABLE_CAP: usize = 1 << 24;

#[derive(Serialize)]
pub struct Figure {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

pub fn run(fmt: Format, id: u8, o: &FigureArgs) -> CmdResult<Outcome> {
    let fig = build(id, o)?;
    let text = match fmt {
        Format::Json => json(&fig),
        Format::Csv => {
            let mut csv = Csv::new(&fig.columns);
            for r in &fig.rows {
                csv.row(&r.iter().map(|&v| num(v)).collect::<Vec<_>>());
            }
            csv.into_string()
        }
    };
    Ok(Outcome::ok(text))
}

pub fn build(id: u8, o: &FigureArgs) -> CmdResult<Figure> {
    match id {
        3 => loss_against_split(o),
        4 => fastest_share(o, Metric::LossProbability),
        5 => response_against_load(o),
        6 => fastest_share(o, Metric::MeanResponseTime),
        7 => optimum_against_load(o, Metric::LossProbability),
        8 => optimum_against_load(o, Metric::MeanResponseTime),
        _ => Err(format!("no figure {id}; choose 3 to 8")),
    }
}

fn steps(step: f64, count: usize) -> Vec<f64> {
    (1..=count).map(|k| step * k as f64).collect()
}

fn rates(o: &FigureArgs, default: &[f64], servers: Option<usize>) -> CmdResult<Vec<f64>> {
    let mu = match &o.mu {
        Some(s) => floats(s, "--mu")?,
        None => return Ok(default.to_vec()),
    };
    if let Some(n) = servers {
        if mu.len() != n {
            return Err(format!(
                "--mu: this figure needs {n} rates, got {}",
                mu.len()
            ));
        }
    }
    // sorting also rejects bad rates
    Ok(ClusterParams::new(1.0, &mu).map_err(err)?.mu().to_vec())
}

fn table(lambda: f64, mu: &[f64], total: usize) -> CmdResult<NormTable> {
    let params = ClusterParams::new(lambda, mu).map_err(err)?;
    NormTable::up_to_total(&params, total, TABLE_CAP).map_err(err)
}

/// Loss of every two-server split of the slots, one column per load.
fn loss_against_split(o: &FigureArgs) -> CmdResult<Figure> {
    let total = o.total.unwrap_or(20);
    let mu = rates(o, &[0.9, 0.1], Some(2))?;
    let loads = grid(&o.grid, || steps(0.25, 8))?;
    let mut columns = vec!["l1".to_string()];
    columns.extend(loads.iter().map(|l| format!("lambda={}", num(*l))));
    let tables = loads
        .par_iter()
        .map(|&l| table(l, &mu, total))
        .collect::<CmdResult<Vec<_>>>()?;
    let rows = (0..=total)
        .map(|l1| {
            let mut row = vec![l1 as f64];
            for t in &tables {
                row.push(t.loss(&[l1, total - l1]).map_err(err)?);
            }
            Ok(row)
        })
        .collect::<CmdResult<Vec<_>>>()?;
    Ok(Figure { columns, rows })
}

/// Optimal slots at the fast server against load, for several fast rates.
fn fastest_share(o: &FigureArgs, metric: Metric) -> CmdResult<Figure> {
    let total = o.total.unwrap_or(20);
    let firsts = match &o.mu1 {
        Some(s) => floats(s, "--mu1")?,
        None => FAST_RATES.to_vec(),
    };
    if let Some(bad) = firsts.iter().find(|m| !(**m >= 0.5 && **m < 1.0)) {
        return Err(format!("--mu1 values must lie in [0.5, 1), got {bad}"));
    }
    let loads = grid(&o.grid, || steps(0.05, 100))?;
    let mut columns = vec!["lambda".to_string()];
    columns.extend(firsts.iter().map(|m| format!("mu1={}", num(*m))));
    let scans = firsts
        .iter()
        .map(|&m| optimizer::scan(&[m, 1.0 - m], total, &loads, metric).map_err(err))
        .collect::<CmdResult<Vec<_>>>()?;
    let rows = loads
        .iter()
        .enumerate()
        .map(|(k, &l)| {
            let mut row = vec![l];
            row.extend(scans.iter().map(|s| s[k].result.canonical[0] as f64));
            row
        })
        .collect();
    Ok(Figure { columns, rows })
}

/// Mean response time against load for fixed two-server splits.
fn response_against_load(o: &FigureArgs) -> CmdResult<Figure> {
    let total = o.total.unwrap_or(20);
    let mu = rates(o, &[0.75, 0.25], Some(2))?;
    let splits: Vec<usize> = match &o.splits {
        Some(s) => integers(s, "--splits")?
            .into_iter()
            .map(|v| {
                usize::try_from(v)
                    .ok()
                    .filter(|&v| v <= total)
                    .ok_or(format!("--splits: {v} is not in 0..={total}"))
            })
            .collect::<CmdResult<_>>()?,
        None => (0..=total).step_by(4.max(total / 5)).collect(),
    };
    let loads = grid(&o.grid, || steps(0.02, 200))?;
    let mut columns = vec!["lambda".to_string()];
    columns.extend(splits.iter().map(|s| format!("l1={s}")));
    let rows = loads
        .par_iter()
        .map(|&l| {
            let t = table(l, &mu, total)?;
            let mut row = vec![l];
            for &s in &splits {
                row.push(t.mean_response_time(&[s, total - s]).map_err(err)?);
            }
            Ok(row)
        })
        .collect::<CmdResult<Vec<_>>>()?;
    Ok(Figure { columns, rows })
}

/// Optimal allocation against load, one column per server.
fn optimum_against_load(o: &FigureArgs, metric: Metric) -> CmdResult<Figure> {
    let total = o.total.unwrap_or(40);
    let mu = rates(o, &FOUR_SERVERS, None)?;
    let loads = grid(&o.grid, || steps(0.1, 70))?;
    let points = optimizer::scan(&mu, total, &loads, metric).map_err(err)?;
    let mut columns = vec!["lambda".to_string()];
    columns.extend((1..=mu.len()).map(|i| format!("l{i}")));
    let rows = points
        .iter()
        .map(|p| {
            let mut row = vec![p.lambda];
            row.extend(p.result.canonical.iter().map(|&l| l as f64));
            row
        })
        .collect();
    Ok(Figure { columns, rows })
}
