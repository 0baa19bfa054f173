//! CSV and JSON artefacts. Floats are written in shortest round-trip form.

use std::path::Path;

use mfeq_core::scenario::Scenario;
use mfeq_core::simulate::{ClearingReport, ClearingScaling};
use mfeq_core::{AgentEnsemble, AgentPopulation, Error, MarketPath, Result, RiccatiSolution, ThetaCoefficients, TimeGrid};
use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};

fn io_err(path: &Path, e: impl Into<std::io::Error>) -> Error {
    Error::Io { path: path.display().to_string(), source: e.into() }
}

struct Table {
    writer: csv::Writer<std::fs::File>,
}

impl Table {
    fn create(path: &Path, header: &[String]) -> Result<Self> {
        let mut writer = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
        writer.write_record(header).map_err(|e| io_err(path, e))?;
        Ok(Self { writer })
    }

    fn row(&mut self, path: &Path, values: impl IntoIterator<Item = String>) -> Result<()> {
        self.writer.write_record(values.into_iter().collect::<Vec<_>>()).map_err(|e| io_err(path, e))
    }

    fn finish(mut self, path: &Path) -> Result<()> {
        self.writer.flush().map_err(|e| io_err(path, e))
    }
}

fn matrix_names(prefix: &str, m: &DMatrix<f64>) -> Vec<String> {
    (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| format!("{prefix}_{i}_{j}"))).collect()
}

fn vector_names(prefix: &str, len: usize) -> Vec<String> {
    (0..len).map(|i| format!("{prefix}_{i}")).collect()
}

fn matrix_cells(m: &DMatrix<f64>) -> impl Iterator<Item = String> + '_ {
    (0..m.nrows()).flat_map(move |i| (0..m.ncols()).map(move |j| m[(i, j)].to_string()))
}

fn vector_cells(v: &DVector<f64>) -> impl Iterator<Item = String> + '_ {
    v.iter().map(|x| x.to_string())
}

/// Columns: `t`, then row-major entries of A00, A11, A10, B0, B1 and C.
pub fn write_riccati(path: &Path, sol: &RiccatiSolution) -> Result<()> {
    let mut header = vec!["t".to_string()];
    header.extend(matrix_names("a00", &sol.a00[0]));
    header.extend(matrix_names("a11", &sol.a11[0]));
    header.extend(matrix_names("a10", &sol.a10[0]));
    header.extend(vector_names("b0", sol.b0[0].len()));
    header.extend(vector_names("b1", sol.b1[0].len()));
    header.push("c".into());
    let mut t = Table::create(path, &header)?;
    for k in 0..sol.grid.n_nodes() {
        let row = std::iter::once(sol.grid.t(k).to_string())
            .chain(matrix_cells(&sol.a00[k]))
            .chain(matrix_cells(&sol.a11[k]))
            .chain(matrix_cells(&sol.a10[k]))
            .chain(vector_cells(&sol.b0[k]))
            .chain(vector_cells(&sol.b1[k]))
            .chain(std::iter::once(sol.c[k].to_string()));
        t.row(path, row)?;
    }
    t.finish(path)
}

/// Columns: `t`, true premium, its estimate, stock prices, common factor.
pub fn write_paths(path: &Path, m: &MarketPath) -> Result<()> {
    let d0 = m.theta_path[0].len();
    let mut header = vec!["t".to_string()];
    header.extend(vector_names("theta", d0));
    header.extend(vector_names("theta_hat", d0));
    header.extend(vector_names("s", m.s_path[0].len()));
    header.extend(vector_names("x0", m.x0_path[0].len()));
    let mut t = Table::create(path, &header)?;
    for k in 0..m.grid.n_nodes() {
        let row = std::iter::once(m.grid.t(k).to_string())
            .chain(vector_cells(&m.theta_path[k]))
            .chain(vector_cells(&m.theta_hat_path[k]))
            .chain(vector_cells(&m.s_path[k]))
            .chain(vector_cells(&m.x0_path[k]));
        t.row(path, row)?;
    }
    t.finish(path)
}

/// Columns: `t`, population-average share vector.
pub fn write_clearing(path: &Path, grid: &TimeGrid, ens: &AgentEnsemble) -> Result<()> {
    let mut header = vec!["t".to_string()];
    header.extend(vector_names("mean_pi", ens.mean_strategy[0].len()));
    let mut t = Table::create(path, &header)?;
    for (k, m) in ens.mean_strategy.iter().enumerate() {
        t.row(path, std::iter::once(grid.t(k).to_string()).chain(vector_cells(m)))?;
    }
    t.finish(path)
}

pub fn write_wealth(path: &Path, ens: &AgentEnsemble) -> Result<()> {
    let header: Vec<String> = [
        "agent_id",
        "xi",
        "terminal_wealth",
        "liability",
        "terminal_net",
        "utility",
        "certainty_equivalent",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let mut t = Table::create(path, &header)?;
    for a in &ens.agents {
        t.row(
            path,
            [
                a.agent_id.to_string(),
                a.xi.to_string(),
                a.terminal_wealth.to_string(),
                a.liability.to_string(),
                a.terminal_net.to_string(),
                a.utility.to_string(),
                a.certainty_equivalent.to_string(),
            ],
        )?;
    }
    t.finish(path)
}

pub fn write_scaling(path: &Path, sc: &ClearingScaling) -> Result<()> {
    let header: Vec<String> =
        ["n_agents", "replication", "seed", "l2_mean", "sup_abs_mean"].iter().map(|s| s.to_string()).collect();
    let mut t = Table::create(path, &header)?;
    for r in &sc.rows {
        t.row(
            path,
            [
                r.n_agents.to_string(),
                r.replication.to_string(),
                r.seed.to_string(),
                r.report.l2_mean.to_string(),
                r.report.sup_abs_mean.to_string(),
            ],
        )?;
    }
    t.finish(path)
}

fn moments(xs: impl Iterator<Item = f64>) -> Value {
    let v: Vec<f64> = xs.collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    json!({ "mean": mean, "std": var.sqrt(), "min": min, "max": max })
}

pub fn summary(
    s: &Scenario,
    pop: &AgentPopulation,
    coeffs: &ThetaCoefficients,
    report: &ClearingReport,
    ens: &AgentEnsemble,
    antithetic: bool,
) -> Value {
    let a = &ens.agents;
    json!({
        "config": s.to_json_value(),
        "resolved": {
            "n_agents": pop.n_agents,
            "n_steps_sim": s.run.n_steps_sim,
            "n_steps_ode": s.run.n_steps_ode,
            "antithetic": antithetic,
        },
        "seeds": {
            "master": s.run.seed,
            "market_stream": "market/0",
            "agent_streams": "agent/<agent_id>",
        },
        "clearing": {
            "n_agents": report.n_agents,
            "sup_abs_mean": report.sup_abs_mean,
            "l2_mean": report.l2_mean,
        },
        "theta_prior_mean": coeffs.m.iter().copied().collect::<Vec<_>>(),
        "filter_variance_psd_violations": coeffs.psd_violations,
        "moments": {
            "xi": moments(a.iter().map(|x| x.xi)),
            "terminal_wealth": moments(a.iter().map(|x| x.terminal_wealth)),
            "liability": moments(a.iter().map(|x| x.liability)),
            "terminal_net": moments(a.iter().map(|x| x.terminal_net)),
            "utility": moments(a.iter().map(|x| x.utility)),
            "certainty_equivalent": moments(a.iter().map(|x| x.certainty_equivalent)),
        },
    })
}

pub fn write_json(path: &Path, v: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}
