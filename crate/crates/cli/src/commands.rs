//! The six commands. Each returns its rendered output and the number of grid
//! points that failed; failures are recorded in the output rather than aborting.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use sdt_core::estimation::{fit, EstimationConfig};
use sdt_core::model::{make_normal_fixed_sigma, ConstraintSet, ParametricModel};
use sdt_core::robustness::{
    contaminated_power, if2_sdt, if_mdpde, if_restricted_mdpde, level_influence, power_influence,
    simulate_level_power, ContaminationSpec, Direction,
};
use sdt_core::testing::{power_approximation, restricted_population_fit, run_sdt, TestReport, TestSpec};

use crate::config::{parse_assignments, parse_model, parse_null, parse_point, y_grid, Command, RunConfig, CONVENTIONS};
use crate::data::load_sample;
use crate::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CommandOutput {
    pub text: String,
    pub failures: usize,
}

pub fn run(cfg: &RunConfig) -> Result<CommandOutput> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {} worker threads: {e}", cfg.jobs)))?;
    pool.install(|| match cfg.command {
        Command::Fit => cmd_fit(cfg),
        Command::Test => cmd_test(cfg),
        Command::PvalueCurve => cmd_pvalue_curve(cfg),
        Command::Ifcurve => cmd_ifcurve(cfg),
        Command::Power => cmd_power(cfg),
        Command::Simulate => cmd_simulate(cfg),
    })
}

struct Table {
    writer: csv::Writer<Vec<u8>>,
    failures: usize,
}

impl Table {
    fn new(header: &[String]) -> Result<Self> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(header)?;
        Ok(Table { writer, failures: 0 })
    }

    fn row(&mut self, cells: Vec<String>) -> Result<()> {
        self.writer.write_record(&cells)?;
        Ok(())
    }

    fn finish(self, cfg: &RunConfig) -> Result<CommandOutput> {
        let body = self
            .writer
            .into_inner()
            .map_err(|e| CliError::Config(format!("cannot flush CSV output: {e}")))?;
        let mut text = cfg.metadata_line();
        text.push('\n');
        text.push_str(&String::from_utf8(body).expect("CSV output is UTF-8"));
        Ok(CommandOutput {
            text,
            failures: self.failures,
        })
    }
}

fn strings<const N: usize>(cells: [&str; N]) -> Vec<String> {
    cells.iter().map(|s| s.to_string()).collect()
}

fn require<'a>(value: &'a Option<String>, flag: &str, command: &str) -> Result<&'a str> {
    value
        .as_deref()
        .ok_or_else(|| CliError::Config(format!("{command} needs --{flag}")))
}

fn estimation(cfg: &RunConfig, beta: f64) -> EstimationConfig {
    EstimationConfig {
        seed: cfg.seed,
        ..EstimationConfig::mdpde(beta)
    }
}

fn test_spec(
    model: Arc<dyn ParametricModel>,
    constraints: ConstraintSet,
    (beta, gamma, lambda): (f64, f64, f64),
    alpha: f64,
) -> Result<TestSpec> {
    Ok(TestSpec::new(model, constraints, beta, gamma, lambda)?.with_alpha(alpha)?)
}

/// `beta, <param>_hat..., converged, objective, error`.
pub fn cmd_fit(cfg: &RunConfig) -> Result<CommandOutput> {
    let sample = load_sample(&cfg.data, &cfg.drop)?;
    let model = parse_model(&cfg.model)?;
    let constraints = cfg.null.as_deref().map(|e| parse_null(e, model.as_ref())).transpose()?;
    let mut header = vec!["beta".to_string()];
    header.extend(model.param_names().iter().map(|p| format!("{p}_hat")));
    header.extend(strings(["converged", "objective", "error"]));
    let results: Vec<_> = cfg
        .beta
        .par_iter()
        .map(|&b| fit(&sample, model.as_ref(), constraints.as_ref(), &estimation(cfg, b)))
        .collect();
    let mut table = Table::new(&header)?;
    for (&b, r) in cfg.beta.iter().zip(results) {
        let mut row = vec![b.to_string()];
        match r {
            Ok(f) => {
                row.extend(f.theta_hat.iter().map(|v| v.to_string()));
                row.extend([f.converged.to_string(), f.objective.to_string(), String::new()]);
                if !f.converged {
                    table.failures += 1;
                }
            }
            Err(e) => {
                row.extend(std::iter::repeat_n(String::new(), model.dim()));
                row.extend(["false".to_string(), String::new(), e.to_string()]);
                table.failures += 1;
            }
        }
        table.row(row)?;
    }
    table.finish(cfg)
}

#[derive(Serialize)]
struct Metadata<'a> {
    tool: &'static str,
    version: &'static str,
    config_sha256: String,
    seed: u64,
    conventions: &'static str,
    config: &'a RunConfig,
}

fn metadata(cfg: &RunConfig) -> Metadata<'_> {
    Metadata {
        tool: "sdt",
        version: env!("CARGO_PKG_VERSION"),
        config_sha256: cfg.hash(),
        seed: cfg.seed,
        conventions: CONVENTIONS,
        config: cfg,
    }
}

#[derive(Serialize)]
struct TestPoint {
    beta: f64,
    gamma: f64,
    lambda: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<TestReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

/// JSON: `{ metadata, results: [{beta, gamma, lambda, report | error}] }`.
pub fn cmd_test(cfg: &RunConfig) -> Result<CommandOutput> {
    let sample = load_sample(&cfg.data, &cfg.drop)?;
    let model = parse_model(&cfg.model)?;
    let constraints = parse_null(require(&cfg.null, "null", "test")?, model.as_ref())?;
    let points: Vec<TestPoint> = cfg
        .grid()
        .par_iter()
        .map(|&(beta, gamma, lambda)| {
            let result = test_spec(model.clone(), constraints.clone(), (beta, gamma, lambda), cfg.alpha)
                .and_then(|spec| Ok(run_sdt(&sample, &spec)?));
            let (report, error) = match result {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            };
            TestPoint {
                beta,
                gamma,
                lambda,
                report,
                error,
            }
        })
        .collect();
    let failures = points.iter().filter(|p| p.error.is_some()).count();
    #[derive(Serialize)]
    struct Out<'a> {
        metadata: Metadata<'a>,
        results: Vec<TestPoint>,
    }
    let mut text = serde_json::to_string_pretty(&Out {
        metadata: metadata(cfg),
        results: points,
    })?;
    text.push('\n');
    Ok(CommandOutput { text, failures })
}

/// Models and nulls of the two p-value modes: σ estimated, and σ fixed at `--known-sigma`.
fn curve_modes(cfg: &RunConfig, null: &str) -> Result<Vec<(&'static str, Arc<dyn ParametricModel>, ConstraintSet)>> {
    let model = parse_model(&cfg.model)?;
    let mut modes = vec![("unknown-sigma", model.clone(), parse_null(null, model.as_ref())?)];
    if cfg.model == "normal" {
        let known: Arc<dyn ParametricModel> = Arc::new(make_normal_fixed_sigma(cfg.known_sigma)?);
        let fixings = parse_assignments(null, model.as_ref())?;
        if fixings.iter().any(|&(i, _)| i != 0) {
            return Err(CliError::Config(format!(
                "known-sigma mode only tests the mean; {null:?} restricts sigma"
            )));
        }
        let c = ConstraintSet::fix(1, &[(0, fixings[0].1)])?;
        modes.insert(0, ("known-sigma", known, c));
    }
    Ok(modes)
}

/// `mode, gamma, lambda, beta, statistic, p_value, reject, error`.
pub fn cmd_pvalue_curve(cfg: &RunConfig) -> Result<CommandOutput> {
    let sample = load_sample(&cfg.data, &cfg.drop)?;
    let null = require(&cfg.null, "null", "pvalue-curve")?;
    let modes = curve_modes(cfg, null)?;
    let grid = cfg.grid();
    let jobs: Vec<(usize, (f64, f64, f64))> = (0..modes.len())
        .flat_map(|m| grid.iter().map(move |&p| (m, p)))
        .collect();
    let results: Vec<_> = jobs
        .par_iter()
        .map(|&(m, point)| {
            let (_, model, c) = &modes[m];
            test_spec(model.clone(), c.clone(), point, cfg.alpha).and_then(|s| Ok(run_sdt(&sample, &s)?))
        })
        .collect();
    let mut table = Table::new(
        &strings(["mode", "gamma", "lambda", "beta", "statistic", "p_value", "reject", "error"]),
    )?;
    for (&(m, (b, g, l)), r) in jobs.iter().zip(results) {
        let mut row = vec![modes[m].0.to_string(), g.to_string(), l.to_string(), b.to_string()];
        match r {
            Ok(rep) => row.extend([
                rep.statistic.to_string(),
                rep.p_value.to_string(),
                rep.reject.to_string(),
                String::new(),
            ]),
            Err(e) => {
                row.extend([String::new(), String::new(), String::new(), e.to_string()]);
                table.failures += 1;
            }
        }
        table.row(row)?;
    }
    table.finish(cfg)
}

fn influence_values(
    kind: &str,
    y: f64,
    spec: &TestSpec,
    theta0: &[f64],
    delta: Option<&[f64]>,
) -> Result<Vec<(String, f64)>> {
    let model = spec.model.as_ref();
    let named = |v: Vec<f64>| -> Vec<(String, f64)> {
        model.param_names().iter().map(|n| n.to_string()).zip(v).collect()
    };
    Ok(match kind {
        "if" => named(if_mdpde(y, model, theta0, spec.beta)?),
        "rif" => named(if_restricted_mdpde(y, model, theta0, spec.beta, &spec.constraints)?),
        "if2" => vec![(
            "if2".into(),
            if2_sdt(y, model, theta0, spec.beta, &spec.tuning()?, &spec.constraints)?,
        )],
        "lif" => vec![("lif".into(), level_influence(y, spec, theta0)?)],
        "pif" => {
            let delta = delta.ok_or_else(|| CliError::Config("--kind pif needs --delta".into()))?;
            vec![("pif".into(), power_influence(y, spec, theta0, delta)?)]
        }
        "level" => vec![(
            "level".into(),
            contaminated_power(spec, theta0, &vec![0.0; model.dim()], 0.1, y)?,
        )],
        other => {
            return Err(CliError::Config(format!(
                "unknown curve kind {other:?} (expected if, rif, if2, lif, pif or level)"
            )))
        }
    })
}

/// Long format: `beta, gamma, lambda, y, component, value, error`.
pub fn cmd_ifcurve(cfg: &RunConfig) -> Result<CommandOutput> {
    let model = parse_model(&cfg.model)?;
    let constraints = parse_null(require(&cfg.null, "null", "ifcurve")?, model.as_ref())?;
    let ys = y_grid(&cfg.y_grid)?;
    let theta0 = match &cfg.theta0 {
        Some(expr) => parse_point(expr, model.as_ref())?,
        None => {
            let sample = load_sample(&cfg.data, &cfg.drop)?;
            fit(&sample, model.as_ref(), Some(&constraints), &estimation(cfg, cfg.beta[0]))?.theta_hat
        }
    };
    let mut table = Table::new(&strings(["beta", "gamma", "lambda", "y", "component", "value", "error"]))?;
    for point in cfg.grid() {
        let spec = test_spec(model.clone(), constraints.clone(), point, cfg.alpha)?;
        let values: Vec<_> = ys
            .par_iter()
            .map(|&y| influence_values(&cfg.kind, y, &spec, &theta0, cfg.delta.as_deref()))
            .collect();
        let (b, g, l) = point;
        for (&y, v) in ys.iter().zip(values) {
            let lead = [b.to_string(), g.to_string(), l.to_string(), y.to_string()];
            match v {
                Ok(pairs) => {
                    for (name, value) in pairs {
                        let mut row = lead.to_vec();
                        row.extend([name, value.to_string(), String::new()]);
                        table.row(row)?;
                    }
                }
                Err(e @ CliError::Config(_)) => return Err(e),
                Err(e) => {
                    let mut row = lead.to_vec();
                    row.extend([String::new(), String::new(), e.to_string()]);
                    table.row(row)?;
                    table.failures += 1;
                }
            }
        }
    }
    table.finish(cfg)
}

/// `beta, gamma, lambda, n, power, error` at the alternative `--theta-star`.
pub fn cmd_power(cfg: &RunConfig) -> Result<CommandOutput> {
    let model = parse_model(&cfg.model)?;
    let constraints = parse_null(require(&cfg.null, "null", "power")?, model.as_ref())?;
    let star = parse_point(require(&cfg.theta_star, "theta-star", "power")?, model.as_ref())?;
    let grid = cfg.grid();
    let results: Vec<Vec<sdt_core::Result<f64>>> = grid
        .par_iter()
        .map(|&point| {
            let spec = match test_spec(model.clone(), constraints.clone(), point, cfg.alpha) {
                Ok(s) => s,
                Err(e) => return vec![Err(sdt_core::SdtError::Domain(e.to_string())); cfg.n.len()],
            };
            let theta0 = match restricted_population_fit(&spec, &star) {
                Ok(f) => f.theta_hat,
                Err(e) => return vec![Err(e); cfg.n.len()],
            };
            cfg.n
                .iter()
                .map(|&n| power_approximation(&spec, &star, &theta0, n, None))
                .collect()
        })
        .collect();
    let mut table = Table::new(&strings(["beta", "gamma", "lambda", "n", "power", "error"]))?;
    for (&(b, g, l), row_results) in grid.iter().zip(results) {
        for (&n, r) in cfg.n.iter().zip(row_results) {
            let mut row = vec![b.to_string(), g.to_string(), l.to_string(), n.to_string()];
            match r {
                Ok(p) => row.extend([p.to_string(), String::new()]),
                Err(e) => {
                    row.extend([String::new(), e.to_string()]);
                    table.failures += 1;
                }
            }
            table.row(row)?;
        }
    }
    table.finish(cfg)
}

/// `beta, gamma, lambda, n, epsilon, y, rate, mc_se, replicates, failures, seed, error`.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<CommandOutput> {
    let model = parse_model(&cfg.model)?;
    let constraints = parse_null(require(&cfg.null, "null", "simulate")?, model.as_ref())?;
    let truth = parse_point(require(&cfg.theta_star, "theta-star", "simulate")?, model.as_ref())?;
    let contamination = ContaminationSpec {
        epsilon: cfg.epsilon,
        y: cfg.y,
        direction: match &cfg.delta {
            Some(d) => Direction::PowerSequence(d.clone()),
            None => Direction::LevelSequence,
        },
    };
    let mut table = Table::new(
        &strings([
            "beta", "gamma", "lambda", "n", "epsilon", "y", "rate", "mc_se", "replicates", "failures", "seed", "error",
        ]),
    )?;
    for point in cfg.grid() {
        for &n in &cfg.n {
            let (b, g, l) = point;
            let mut row = vec![
                b.to_string(),
                g.to_string(),
                l.to_string(),
                n.to_string(),
                cfg.epsilon.to_string(),
                cfg.y.to_string(),
            ];
            let result = test_spec(model.clone(), constraints.clone(), point, cfg.alpha).and_then(|spec| {
                Ok(simulate_level_power(&spec, &truth, &contamination, n, cfg.replicates, cfg.seed)?)
            });
            match result {
                Ok(s) => {
                    row.extend([
                        s.rate.to_string(),
                        s.mc_se.to_string(),
                        s.replicates.to_string(),
                        s.failures.to_string(),
                        cfg.seed.to_string(),
                        String::new(),
                    ]);
                    if s.failures > 0 {
                        table.failures += 1;
                    }
                }
                Err(e) => {
                    row.extend(["", "", "", ""].map(String::from));
                    row.extend([cfg.seed.to_string(), e.to_string()]);
                    table.failures += 1;
                }
            }
            table.row(row)?;
        }
    }
    table.finish(cfg)
}
