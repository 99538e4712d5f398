//! Run configuration: command-line flags layered over an optional JSON file.

use std::sync::Arc;

use clap::{Args, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use sdt_core::model::{make_normal_fixed_sigma, make_normal_model, make_poisson_model, ConstraintSet, ParametricModel};

use crate::{CliError, Result};

/// Conventions adopted where the theory leaves a choice; written into every output header.
pub const CONVENTIONS: &str =
    "null_law=restricted_plugin;a12=zero;a_gamma=hessian;lif_pif=numeric_eps_derivative;contamination=eps_over_sqrt_n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Subcommand)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Minimum-DPD fits over a β grid
    Fit,
    /// S-divergence tests over a (β, γ, λ) grid
    Test,
    /// P-values over a γ/λ/β grid in known-σ and unknown-σ modes
    PvalueCurve,
    /// Influence curves over a y grid
    Ifcurve,
    /// Asymptotic power approximations over an n grid
    Power,
    /// Monte Carlo rejection rates
    Simulate,
}

/// Every flag is optional so that a config file can supply it instead.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Options {
    /// JSON file with any of these options (flags take precedence)
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<String>,
    /// Data file path or builtin:<name>
    #[arg(long, global = true)]
    pub data: Option<String>,
    /// 1-based observation positions to remove, comma separated
    #[arg(long, global = true, value_delimiter = ',')]
    pub drop: Option<Vec<usize>>,
    /// normal | poisson | normal-fixed-sigma:<value>
    #[arg(long, global = true)]
    pub model: Option<String>,
    /// Null hypothesis, e.g. "mu=0" (conjunctions with ',' or '&')
    #[arg(long, global = true)]
    pub null: Option<String>,
    #[arg(long, global = true, value_delimiter = ',', allow_negative_numbers = true)]
    pub beta: Option<Vec<f64>>,
    #[arg(long, global = true, value_delimiter = ',', allow_negative_numbers = true)]
    pub gamma: Option<Vec<f64>>,
    #[arg(long, global = true, value_delimiter = ',', allow_negative_numbers = true)]
    pub lambda: Option<Vec<f64>>,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for grid points and replicates
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output file (standard output when absent)
    #[arg(long, global = true)]
    pub out: Option<String>,
    /// Known σ used by the known-σ mode of pvalue-curve
    #[arg(long, global = true)]
    pub known_sigma: Option<f64>,
    /// Parameter point for ifcurve, e.g. "mu=0,sigma=1" (default: restricted fit)
    #[arg(long, global = true)]
    pub theta0: Option<String>,
    /// Alternative for power, or data-generating point for simulate
    #[arg(long, global = true)]
    pub theta_star: Option<String>,
    /// Influence curve kind: if | rif | if2 | lif | pif
    #[arg(long, global = true)]
    pub kind: Option<String>,
    /// y grid as lo:hi:step
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub y_grid: Option<String>,
    /// Contiguous-alternative direction Δ, comma separated
    #[arg(long, global = true, value_delimiter = ',', allow_negative_numbers = true)]
    pub delta: Option<Vec<f64>>,
    /// Sample sizes
    #[arg(long, global = true, value_delimiter = ',')]
    pub n: Option<Vec<usize>>,
    #[arg(long, global = true)]
    pub replicates: Option<usize>,
    /// Contamination ε (mass ε/√n)
    #[arg(long, global = true)]
    pub epsilon: Option<f64>,
    /// Contamination point
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub y: Option<f64>,
}

macro_rules! overlay {
    ($base:ident, $top:ident, $($field:ident),*) => {
        $( if $top.$field.is_some() { $base.$field = $top.$field.clone(); } )*
    };
}

impl Options {
    /// `self` over the contents of `--config`, if any.
    pub fn layered(&self) -> Result<Options> {
        let Some(path) = &self.config else {
            return Ok(self.clone());
        };
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        })?;
        let mut base: Options = serde_json::from_str(&text)?;
        overlay!(
            base, self, data, drop, model, null, beta, gamma, lambda, alpha, seed, jobs, out, known_sigma, theta0,
            theta_star, kind, y_grid, delta, n, replicates, epsilon, y
        );
        Ok(base)
    }
}

/// Fully resolved configuration of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: Command,
    pub data: String,
    pub drop: Vec<usize>,
    pub model: String,
    pub null: Option<String>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Set when β was not given and follows γ (pvalue-curve).
    pub beta_follows_gamma: bool,
    pub alpha: f64,
    pub seed: u64,
    pub jobs: usize,
    pub out: Option<String>,
    pub known_sigma: f64,
    pub theta0: Option<String>,
    pub theta_star: Option<String>,
    pub kind: String,
    pub y_grid: String,
    pub delta: Option<Vec<f64>>,
    pub n: Vec<usize>,
    pub replicates: usize,
    pub epsilon: f64,
    pub y: f64,
}

impl RunConfig {
    pub fn resolve(command: Command, flags: &Options) -> Result<Self> {
        let o = flags.layered()?;
        let curve = command == Command::PvalueCurve;
        let gamma = o.gamma.clone().unwrap_or_else(|| {
            if curve {
                (0..=10).map(|i| i as f64 / 10.0).collect()
            } else {
                vec![0.0]
            }
        });
        let lambda = o
            .lambda
            .clone()
            .unwrap_or_else(|| if curve { vec![-0.5, 0.0, 0.5, 1.0] } else { vec![0.0] });
        let beta_follows_gamma = curve && o.beta.is_none();
        let beta = match &o.beta {
            Some(b) => b.clone(),
            None if command == Command::Fit => vec![0.0, 0.05, 0.1, 0.2, 0.5],
            None if curve => gamma.clone(),
            None => vec![0.0],
        };
        let cfg = RunConfig {
            command,
            data: o.data.unwrap_or_else(|| "builtin:telephone-fault".into()),
            drop: o.drop.unwrap_or_default(),
            model: o.model.unwrap_or_else(|| "normal".into()),
            null: o.null,
            beta,
            gamma,
            lambda,
            beta_follows_gamma,
            alpha: o.alpha.unwrap_or(0.05),
            seed: o.seed.unwrap_or(0),
            jobs: o.jobs.unwrap_or(1),
            out: o.out,
            known_sigma: o.known_sigma.unwrap_or(132.0),
            theta0: o.theta0,
            theta_star: o.theta_star,
            kind: o.kind.unwrap_or_else(|| "if2".into()),
            y_grid: o.y_grid.unwrap_or_else(|| "-50:50:1".into()),
            delta: o.delta,
            n: o.n.unwrap_or_else(|| vec![100]),
            replicates: o.replicates.unwrap_or(1000),
            epsilon: o.epsilon.unwrap_or(0.0),
            y: o.y.unwrap_or(0.0),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        for (name, grid) in [("beta", &self.beta), ("gamma", &self.gamma), ("lambda", &self.lambda)] {
            if grid.is_empty() {
                return Err(CliError::Config(format!("--{name} grid is empty")));
            }
        }
        if self.n.is_empty() || self.n.contains(&0) {
            return Err(CliError::Config("--n needs positive sample sizes".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(CliError::Config(format!("--alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.jobs == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        let model = parse_model(&self.model)?;
        if let Some(null) = &self.null {
            parse_null(null, model.as_ref())?;
        }
        if !self.data.starts_with(crate::data::BUILTIN_PREFIX) && !std::path::Path::new(&self.data).exists() {
            return Err(CliError::Config(format!("data file {} does not exist", self.data)));
        }
        y_grid(&self.y_grid)?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("configuration serializes");
        format!("{:x}", Sha256::digest(json))
    }

    /// `# key=value ...` line heading every output.
    pub fn metadata_line(&self) -> String {
        format!(
            "# sdt {} config_sha256={} seed={} conventions={}",
            env!("CARGO_PKG_VERSION"),
            self.hash(),
            self.seed,
            CONVENTIONS
        )
    }

    /// `(β, γ, λ)` grid points in output order.
    pub fn grid(&self) -> Vec<(f64, f64, f64)> {
        let mut points = Vec::new();
        for &g in &self.gamma {
            for &l in &self.lambda {
                if self.beta_follows_gamma {
                    points.push((g, g, l));
                } else {
                    for &b in &self.beta {
                        points.push((b, g, l));
                    }
                }
            }
        }
        points
    }
}

pub fn parse_model(name: &str) -> Result<Arc<dyn ParametricModel>> {
    match name {
        "normal" => Ok(Arc::new(make_normal_model())),
        "poisson" => Ok(Arc::new(make_poisson_model())),
        other => match other.strip_prefix("normal-fixed-sigma:") {
            Some(v) => {
                let sigma: f64 = v
                    .parse()
                    .map_err(|_| CliError::Config(format!("cannot parse σ in {other:?}")))?;
                Ok(Arc::new(make_normal_fixed_sigma(sigma)?))
            }
            None => Err(CliError::Config(format!(
                "unknown model {other:?} (expected normal, poisson or normal-fixed-sigma:<value>)"
            ))),
        },
    }
}

/// `name=value` pairs joined by `,`, `&` or `and`.
pub fn parse_assignments(expr: &str, model: &dyn ParametricModel) -> Result<Vec<(usize, f64)>> {
    let names = model.param_names();
    let mut out: Vec<(usize, f64)> = Vec::new();
    for part in expr.replace(" and ", "&").split([',', '&']) {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let (name, value) = part
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("expected name=value, got {part:?}")))?;
        let name = name.trim();
        let idx = names.iter().position(|n| *n == name).ok_or_else(|| {
            CliError::Config(format!("{name:?} is not a parameter of {} ({names:?})", model.name()))
        })?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("cannot parse value in {part:?}")))?;
        if out.iter().any(|(i, _)| *i == idx) {
            return Err(CliError::Config(format!("{name} is assigned twice in {expr:?}")));
        }
        out.push((idx, value));
    }
    if out.is_empty() {
        return Err(CliError::Config(format!("empty parameter expression {expr:?}")));
    }
    Ok(out)
}

pub fn parse_null(expr: &str, model: &dyn ParametricModel) -> Result<ConstraintSet> {
    Ok(ConstraintSet::fix(model.dim(), &parse_assignments(expr, model)?)?)
}

/// A full parameter vector; every coordinate must be assigned.
pub fn parse_point(expr: &str, model: &dyn ParametricModel) -> Result<Vec<f64>> {
    let pairs = parse_assignments(expr, model)?;
    if pairs.len() != model.dim() {
        return Err(CliError::Config(format!(
            "{expr:?} must assign all of {:?}",
            model.param_names()
        )));
    }
    let mut theta = vec![0.0; model.dim()];
    for (i, v) in pairs {
        theta[i] = v;
    }
    Ok(theta)
}

/// `lo:hi:step` expanded inclusively.
pub fn y_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<f64> = spec
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| CliError::Config(format!("cannot parse y grid {spec:?}")))?;
    let [lo, hi, step] = parts[..] else {
        return Err(CliError::Config(format!("y grid must be lo:hi:step, got {spec:?}")));
    };
    if !(step > 0.0 && hi >= lo) {
        return Err(CliError::Config(format!("y grid {spec:?} is empty")));
    }
    let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| lo + i as f64 * step).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_expressions() {
        let m = make_normal_model();
        assert_eq!(parse_assignments("mu=0", &m).unwrap(), vec![(0, 0.0)]);
        assert_eq!(
            parse_assignments("mu = 115 & sigma=132", &m).unwrap(),
            vec![(0, 115.0), (1, 132.0)]
        );
        assert!(parse_assignments("nu=1", &m).is_err());
        assert!(parse_assignments("mu=1,mu=2", &m).is_err());
        assert!(parse_point("mu=1", &m).is_err());
        assert_eq!(parse_point("sigma=2,mu=1", &m).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn models() {
        assert_eq!(parse_model("normal-fixed-sigma:132").unwrap().dim(), 1);
        assert_eq!(parse_model("poisson").unwrap().param_names(), &["theta"]);
        assert!(parse_model("cauchy").is_err());
    }

    #[test]
    fn grids() {
        assert_eq!(y_grid("-1:1:0.5").unwrap(), vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert!(y_grid("1:0:1").is_err());
        let cfg = RunConfig::resolve(Command::PvalueCurve, &Options::default()).unwrap();
        assert_eq!(cfg.grid().len(), 11 * 4);
        assert!(cfg.grid().iter().all(|(b, g, _)| b == g));
        let cfg = RunConfig::resolve(
            Command::PvalueCurve,
            &Options {
                beta: Some(vec![0.0, 0.5]),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(cfg.grid().len(), 11 * 4 * 2);
    }

    #[test]
    fn hash_tracks_configuration() {
        let a = RunConfig::resolve(Command::Fit, &Options::default()).unwrap();
        let b = RunConfig::resolve(
            Command::Fit,
            &Options {
                seed: Some(9),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(a.hash(), a.clone().hash());
        assert_ne!(a.hash(), b.hash());
        assert!(a.metadata_line().starts_with("# sdt "));
    }
}
