//! Scenario files: a single JSON document holding every record needed for a
//! run. Matrices are row-major arrays of rows; all numbers are IEEE doubles.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::equilibrium::{EtaSchedule, ThetaPrior};
use crate::error::{Error, Result};
use crate::linalg::{matrix_from_rows, matrix_to_rows};
use crate::model::{AgentPopulation, Dims, ModelParams, TerminalLiability, VolSchedule};

pub const DEFAULT_BLOWUP_BOUND: f64 = 1e8;

/// Execution settings carried by the scenario file; command-line flags
/// override them.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub seed: u64,
    pub n_steps_ode: usize,
    pub n_steps_sim: usize,
    pub n_agents_override: Option<usize>,
    pub out_dir: PathBuf,
    pub blowup_bound: f64,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            seed: 0,
            n_steps_ode: 10_000,
            n_steps_sim: 2_000,
            n_agents_override: None,
            out_dir: PathBuf::from("out"),
            blowup_bound: DEFAULT_BLOWUP_BOUND,
        }
    }
}

impl RunSettings {
    pub fn validate(&self) -> Result<()> {
        if self.n_steps_ode < 2 {
            return Err(Error::Validation("n_steps_ode must be at least 2".into()));
        }
        if self.n_steps_sim < 2 {
            return Err(Error::Validation("n_steps_sim must be at least 2".into()));
        }
        if self.n_agents_override == Some(0) {
            return Err(Error::Validation("n_agents must be positive".into()));
        }
        if !(self.blowup_bound > 0.0) {
            return Err(Error::Validation("blowup_bound must be positive".into()));
        }
        Ok(())
    }
}

/// The validated record set of one scenario file.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub params: ModelParams<f64>,
    pub liability: TerminalLiability<f64>,
    pub population: AgentPopulation<f64>,
    pub prior: ThetaPrior<f64>,
    pub run: RunSettings,
}

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum VolFile {
    Constant(Rows),
    Table { times: Vec<f64>, values: Vec<Rows> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum EtaFile {
    /// `(t − start)·1_{[start, T]}(t)` times `loading`.
    Ramp { start: f64, loading: Rows },
    Constant(Rows),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub gamma: f64,
    pub k0: f64,
    pub k: f64,
    pub m0: Vec<f64>,
    pub m: Vec<f64>,
    pub sigma0: Rows,
    pub sigma: Rows,
    pub vol: VolFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vol_bounds: Option<[f64; 2]>,
    pub x0_init: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s0: Option<Vec<f64>>,
    pub horizon: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiabilityFile {
    pub a00: Rows,
    pub a11: Rows,
    pub a10: Rows,
    pub b0: Vec<f64>,
    pub b1: Vec<f64>,
    pub c: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationFile {
    pub n_agents: usize,
    pub xi_mean: f64,
    pub xi_var: f64,
    pub x0_mean: Vec<f64>,
    pub x0_cov: Rows,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorFile {
    pub v: Rows,
    pub eta: EtaFile,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFile {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_ode_steps")]
    pub n_steps_ode: usize,
    #[serde(default = "default_sim_steps")]
    pub n_steps_sim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_agents_override: Option<usize>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_blowup")]
    pub blowup_bound: f64,
}

fn default_ode_steps() -> usize {
    RunSettings::default().n_steps_ode
}
fn default_sim_steps() -> usize {
    RunSettings::default().n_steps_sim
}
fn default_out_dir() -> PathBuf {
    RunSettings::default().out_dir
}
fn default_blowup() -> f64 {
    DEFAULT_BLOWUP_BOUND
}

impl Default for RunFile {
    fn default() -> Self {
        RunSettings::default().into()
    }
}

impl From<RunSettings> for RunFile {
    fn from(r: RunSettings) -> Self {
        Self {
            seed: r.seed,
            n_steps_ode: r.n_steps_ode,
            n_steps_sim: r.n_steps_sim,
            n_agents_override: r.n_agents_override,
            out_dir: r.out_dir,
            blowup_bound: r.blowup_bound,
        }
    }
}

/// On-disk layout of a scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub model: ModelFile,
    pub liability: LiabilityFile,
    pub population: PopulationFile,
    pub theta_prior: PriorFile,
    #[serde(default)]
    pub run: RunFile,
}

fn vector(v: &[f64], what: &str) -> Result<DVector<f64>> {
    if v.is_empty() {
        return Err(Error::Validation(format!("{what} must be non-empty")));
    }
    Ok(DVector::from_column_slice(v))
}

impl ScenarioFile {
    /// Converts into validated records.
    pub fn into_scenario(self) -> Result<Scenario> {
        let ScenarioFile { model, liability, population, theta_prior, run } = self;

        let m0 = vector(&model.m0, "m0")?;
        let m = vector(&model.m, "m")?;
        let vol = match &model.vol {
            VolFile::Constant(rows) => VolSchedule::Constant(matrix_from_rows(rows, "vol")?),
            VolFile::Table { times, values } => VolSchedule::Table {
                times: times.clone(),
                values: values
                    .iter()
                    .map(|r| matrix_from_rows(r, "vol"))
                    .collect::<Result<_>>()?,
            },
        };
        let eta = match &theta_prior.eta {
            EtaFile::Ramp { start, loading } => EtaSchedule::Ramp {
                start: *start,
                loading: matrix_from_rows(loading, "eta loading")?,
            },
            EtaFile::Constant(rows) => EtaSchedule::Constant(matrix_from_rows(rows, "eta")?),
        };
        let dims = Dims { d0: m0.len(), d: m.len(), k_noise: eta.noise_dim() };
        let d0 = dims.d0;

        let params = ModelParams {
            gamma: model.gamma,
            k0: model.k0,
            k: model.k,
            m0,
            m,
            sigma0: matrix_from_rows(&model.sigma0, "sigma0")?,
            sigma: matrix_from_rows(&model.sigma, "sigma")?,
            vol,
            vol_bounds: model.vol_bounds.map(|[a, b]| (a, b)),
            x0_init: vector(&model.x0_init, "x0_init")?,
            s0: match &model.s0 {
                Some(s) => vector(s, "s0")?,
                None => DVector::from_element(d0, 1.0),
            },
            horizon: model.horizon,
            dims,
        };
        params.validate()?;

        let liability = TerminalLiability {
            a00: matrix_from_rows(&liability.a00, "a00F")?,
            a11: matrix_from_rows(&liability.a11, "a11F")?,
            a10: matrix_from_rows(&liability.a10, "a10F")?,
            b0: vector(&liability.b0, "b0F")?,
            b1: vector(&liability.b1, "b1F")?,
            c: liability.c,
        };
        liability.validate(dims)?;

        let population = AgentPopulation {
            n_agents: population.n_agents,
            xi_mean: population.xi_mean,
            xi_var: population.xi_var,
            x0_mean: vector(&population.x0_mean, "x0_mean")?,
            x0_cov: matrix_from_rows(&population.x0_cov, "x0_cov")?,
        };
        population.validate(dims)?;

        let prior = ThetaPrior { v: matrix_from_rows(&theta_prior.v, "v")?, eta };
        prior.validate(dims)?;

        let run = RunSettings {
            seed: run.seed,
            n_steps_ode: run.n_steps_ode,
            n_steps_sim: run.n_steps_sim,
            n_agents_override: run.n_agents_override,
            out_dir: run.out_dir,
            blowup_bound: run.blowup_bound,
        };
        run.validate()?;

        Ok(Scenario { params, liability, population, prior, run })
    }
}

impl From<&Scenario> for ScenarioFile {
    fn from(s: &Scenario) -> Self {
        let p = &s.params;
        let vec = |v: &DVector<f64>| v.iter().copied().collect::<Vec<_>>();
        ScenarioFile {
            model: ModelFile {
                gamma: p.gamma,
                k0: p.k0,
                k: p.k,
                m0: vec(&p.m0),
                m: vec(&p.m),
                sigma0: matrix_to_rows(&p.sigma0),
                sigma: matrix_to_rows(&p.sigma),
                vol: match &p.vol {
                    VolSchedule::Constant(m) => VolFile::Constant(matrix_to_rows(m)),
                    VolSchedule::Table { times, values } => VolFile::Table {
                        times: times.clone(),
                        values: values.iter().map(matrix_to_rows).collect(),
                    },
                },
                vol_bounds: p.vol_bounds.map(|(a, b)| [a, b]),
                x0_init: vec(&p.x0_init),
                s0: Some(vec(&p.s0)),
                horizon: p.horizon,
            },
            liability: LiabilityFile {
                a00: matrix_to_rows(&s.liability.a00),
                a11: matrix_to_rows(&s.liability.a11),
                a10: matrix_to_rows(&s.liability.a10),
                b0: vec(&s.liability.b0),
                b1: vec(&s.liability.b1),
                c: s.liability.c,
            },
            population: PopulationFile {
                n_agents: s.population.n_agents,
                xi_mean: s.population.xi_mean,
                xi_var: s.population.xi_var,
                x0_mean: vec(&s.population.x0_mean),
                x0_cov: matrix_to_rows(&s.population.x0_cov),
            },
            theta_prior: PriorFile {
                v: matrix_to_rows(&s.prior.v),
                eta: match &s.prior.eta {
                    EtaSchedule::Ramp { start, loading } => {
                        EtaFile::Ramp { start: *start, loading: matrix_to_rows(loading) }
                    }
                    EtaSchedule::Constant(m) => EtaFile::Constant(matrix_to_rows(m)),
                },
            },
            run: s.run.clone().into(),
        }
    }
}

impl Scenario {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ScenarioFile::from(self)).expect("scenario serialises")
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(ScenarioFile::from(self)).expect("scenario serialises")
    }

    /// Population with the agent-count override applied.
    pub fn effective_population(&self) -> AgentPopulation<f64> {
        let mut p = self.population.clone();
        if let Some(n) = self.run.n_agents_override {
            p.n_agents = n;
        }
        p
    }
}

pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let file: ScenarioFile =
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    file.into_scenario()
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| Error::Io { path: path.display().to_string(), source })?;
    parse_scenario(&text)
}

/// The economy of the reference experiment: N = 5000 agents on `[0, 1]`
/// with one stock, one idiosyncratic factor and one `B⁰` noise.
pub fn reference_scenario() -> Scenario {
    let s = |x: f64| DMatrix::from_element(1, 1, x);
    let v = |x: f64| DVector::from_element(1, x);
    let dims = Dims { d0: 1, d: 1, k_noise: 1 };
    Scenario {
        params: ModelParams {
            gamma: 1.5,
            k0: 0.05,
            k: 0.05,
            m0: v(-0.5),
            m: v(-0.5),
            sigma0: s(0.3),
            sigma: s(0.3),
            vol: VolSchedule::Constant(s(0.2)),
            vol_bounds: None,
            x0_init: v(0.0),
            s0: v(1.0),
            horizon: 1.0,
            dims,
        },
        liability: TerminalLiability {
            a00: s(0.7),
            a11: s(0.2),
            a10: s(0.3),
            b0: v(-1.3),
            b1: v(-0.7),
            c: 1.2,
        },
        population: AgentPopulation {
            n_agents: 5000,
            xi_mean: 2.0,
            xi_var: 0.3,
            x0_mean: v(-0.7),
            x0_cov: s(0.5),
        },
        prior: ThetaPrior { v: s(0.1), eta: EtaSchedule::Ramp { start: 0.6, loading: s(1.0) } },
        run: RunSettings::default(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const REFERENCE: &str = include_str!("../../../scenarios/s4.json");

    fn with_edit(edit: impl FnOnce(&mut serde_json::Value)) -> Result<Scenario> {
        let mut v: serde_json::Value = serde_json::from_str(REFERENCE).unwrap();
        edit(&mut v);
        parse_scenario(&v.to_string())
    }

    #[test]
    fn reference_file_matches_table() {
        let s = parse_scenario(REFERENCE).unwrap();
        let p = &s.params;
        assert_eq!((p.gamma, p.k0, p.k), (1.5, 0.05, 0.05));
        assert_eq!((p.m0[0], p.m[0]), (-0.5, -0.5));
        assert_eq!((p.sigma0[(0, 0)], p.sigma[(0, 0)]), (0.3, 0.3));
        let f = &s.liability;
        assert_eq!((f.a00[(0, 0)], f.a11[(0, 0)], f.a10[(0, 0)]), (0.7, 0.2, 0.3));
        assert_eq!((f.b0[0], f.b1[0], f.c), (-1.3, -0.7, 1.2));
        assert_eq!(s.population.n_agents, 5000);
        let mut expected = reference_scenario();
        expected.run = s.run.clone();
        assert_eq!(s, expected);
    }

    #[test]
    fn negative_k0_rejected() {
        let err = with_edit(|v| v["model"]["k0"] = (-0.05).into()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(err.to_string().contains("k0 must be positive"), "{err}");
    }

    #[test]
    fn asymmetric_a11_rejected() {
        let err = with_edit(|v| {
            v["model"]["m"] = serde_json::json!([-0.5, -0.5]);
            v["model"]["sigma"] = serde_json::json!([[0.3, 0.0], [0.0, 0.3]]);
            v["liability"]["a11"] = serde_json::json!([[0.2, 0.1], [0.0, 0.2]]);
            v["liability"]["a10"] = serde_json::json!([[0.3], [0.3]]);
            v["liability"]["b1"] = serde_json::json!([-0.7, -0.7]);
            v["population"]["x0_mean"] = serde_json::json!([-0.7, -0.7]);
            v["population"]["x0_cov"] = serde_json::json!([[0.5, 0.0], [0.0, 0.5]]);
        })
        .unwrap_err();
        assert!(err.to_string().contains("a11F not symmetric"), "{err}");
    }

    #[test]
    fn malformed_file_is_parse_error() {
        assert!(matches!(parse_scenario("{ \"model\": "), Err(Error::Parse(_))));
        assert!(matches!(
            with_edit(|v| v["model"]["bogus"] = 1.into()),
            Err(Error::Parse(_))
        ));
    }

    #[test]
    fn out_of_domain_fields_rejected() {
        for (path, value) in [
            (("model", "gamma"), serde_json::json!(0.0)),
            (("model", "k"), serde_json::json!(-1.0)),
            (("model", "horizon"), serde_json::json!(0.0)),
            (("model", "vol"), serde_json::json!({"constant": [[0.0]]})),
            (("model", "sigma0"), serde_json::json!([[0.3, 0.1]])),
            (("population", "xi_var"), serde_json::json!(-0.3)),
            (("population", "x0_cov"), serde_json::json!([[0.0]])),
            (("population", "n_agents"), serde_json::json!(0)),
            (("theta_prior", "v"), serde_json::json!([[-0.1]])),
            (("run", "n_steps_sim"), serde_json::json!(1)),
        ] {
            let res = with_edit(|v| v[path.0][path.1] = value.clone());
            assert!(matches!(res, Err(Error::Validation(_))), "{path:?} = {value} accepted");
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(load_scenario("/nonexistent/s.json"), Err(Error::Io { .. })));
    }

    #[test]
    fn load_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        std::fs::write(&path, reference_scenario().to_json()).unwrap();
        assert_eq!(load_scenario(&path).unwrap(), reference_scenario());
    }
}
