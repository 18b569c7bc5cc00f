//! Scenario settings from flags and an optional TOML file. Flags win.

use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{bail, Context};
use clap::{Args, ValueEnum};
use nkmpc::models::{DEFAULT_ALPHA1, DEFAULT_ALPHA2, DEFAULT_WD, DEFAULT_X0, DEFAULT_XF};
use nkmpc::{Model1Params, Model2Params, ModelChoice, MpcConfig};
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Switch {
    On,
    Off,
}

impl From<Switch> for bool {
    fn from(s: Switch) -> bool {
        s == Switch::On
    }
}

/// A pair `A,B` of floats.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(from = "[f64; 2]")]
pub struct Pair(pub [f64; 2]);

impl From<[f64; 2]> for Pair {
    fn from(v: [f64; 2]) -> Self {
        Pair(v)
    }
}

impl FromStr for Pair {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 2 {
            return Err(format!("expected A,B but got '{s}'"));
        }
        let f = |t: &str| t.parse::<f64>().map_err(|e| format!("'{t}': {e}"));
        Ok(Pair([f(parts[0])?, f(parts[1])?]))
    }
}

/// Scenario flags shared by all subcommands. Every field is optional so
/// that unset flags fall through to the config file and then the defaults.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// Model id
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub model: Option<u8>,
    /// Horizon grid size N
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Number of system-time steps
    #[arg(long)]
    pub steps: Option<usize>,
    /// System time step [default: cold-start horizon length / steps]
    #[arg(long)]
    pub dt: Option<f64>,
    /// Newton-Krylov refinements per step
    #[arg(long)]
    pub refinements: Option<usize>,
    /// Shift the warm start along the horizon
    #[arg(long, value_enum)]
    pub shift: Option<Switch>,
    /// Block preconditioner for GMRES
    #[arg(long, value_enum)]
    pub precond: Option<Switch>,
    /// Absolute GMRES tolerance
    #[arg(long)]
    pub tol: Option<f64>,
    /// Finite-difference step of the Jacobian-vector product
    #[arg(long)]
    pub fd_step: Option<f64>,
    /// Initial state A,B
    #[arg(long, allow_hyphen_values = true)]
    pub x0: Option<Pair>,
    /// Target state A,B
    #[arg(long, allow_hyphen_values = true)]
    pub xf: Option<Pair>,
    /// Interior-point penalty weight
    #[arg(long)]
    pub wd: Option<f64>,
    /// Terminal penalty weight (model 2)
    #[arg(long)]
    pub alpha1: Option<f64>,
    /// Control regularization weight (model 2)
    #[arg(long)]
    pub alpha2: Option<f64>,
    /// Initial guess of the horizon length
    #[arg(long)]
    pub p0: Option<f64>,
    /// TOML file with any of the above keys (underscores for dashes)
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

impl Scenario {
    /// Fills unset fields from `other`.
    pub fn or(self, other: Scenario) -> Scenario {
        Scenario {
            model: self.model.or(other.model),
            horizon: self.horizon.or(other.horizon),
            steps: self.steps.or(other.steps),
            dt: self.dt.or(other.dt),
            refinements: self.refinements.or(other.refinements),
            shift: self.shift.or(other.shift),
            precond: self.precond.or(other.precond),
            tol: self.tol.or(other.tol),
            fd_step: self.fd_step.or(other.fd_step),
            x0: self.x0.or(other.x0),
            xf: self.xf.or(other.xf),
            wd: self.wd.or(other.wd),
            alpha1: self.alpha1.or(other.alpha1),
            alpha2: self.alpha2.or(other.alpha2),
            p0: self.p0.or(other.p0),
            config: self.config.or(other.config),
        }
    }

    pub fn from_toml(text: &str) -> anyhow::Result<Scenario> {
        Ok(toml::from_str(text)?)
    }

    /// Merges in the file named by `--config`, if any.
    pub fn resolve(self) -> anyhow::Result<Scenario> {
        match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                let file = Self::from_toml(&text)
                    .with_context(|| format!("parsing {}", path.display()))?;
                Ok(self.or(file))
            }
            None => Ok(self),
        }
    }

    pub fn to_config(&self) -> anyhow::Result<MpcConfig> {
        let d = MpcConfig::default();
        let w_d = self.wd.unwrap_or(DEFAULT_WD);
        let x_f = self.xf.map_or(DEFAULT_XF, |p| p.0);
        let model = match self.model.unwrap_or(1) {
            1 => {
                if self.alpha1.is_some() || self.alpha2.is_some() {
                    bail!("--alpha1/--alpha2 apply to model 2 only");
                }
                ModelChoice::Model1(Model1Params { w_d, x_f })
            }
            2 => ModelChoice::Model2(Model2Params {
                w_d,
                alpha1: self.alpha1.unwrap_or(DEFAULT_ALPHA1),
                alpha2: self.alpha2.unwrap_or(DEFAULT_ALPHA2),
                x_f,
            }),
            m => bail!("unknown model {m}"),
        };
        let config = MpcConfig {
            model,
            horizon: self.horizon.unwrap_or(d.horizon),
            steps: self.steps.unwrap_or(d.steps),
            dt: self.dt.or(d.dt),
            refinements: self.refinements.unwrap_or(d.refinements),
            shifting: self.shift.map_or(d.shifting, bool::from),
            preconditioning: self.precond.map_or(d.preconditioning, bool::from),
            fd_step: self.fd_step.unwrap_or(d.fd_step),
            gmres_tol: self.tol.unwrap_or(d.gmres_tol),
            p0: self.p0.unwrap_or(d.p0),
            x0: self.x0.map_or(DEFAULT_X0, |p| p.0),
            ..d
        };
        config.validate()?;
        Ok(config)
    }
}

/// Applies `key=value` overrides separated by commas, e.g. `precond=on,refinements=2`.
pub fn apply_overrides(base: &Scenario, spec: &str) -> anyhow::Result<Scenario> {
    let mut s = base.clone();
    for item in spec.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let (k, v) = item
            .split_once('=')
            .with_context(|| format!("override '{item}' is not key=value"))?;
        let switch = |v: &str| Switch::from_str(v, true).map_err(anyhow::Error::msg);
        match k.trim().replace('-', "_").as_str() {
            "precond" => s.precond = Some(switch(v)?),
            "shift" => s.shift = Some(switch(v)?),
            "refinements" => s.refinements = Some(v.parse()?),
            "horizon" => s.horizon = Some(v.parse()?),
            "steps" => s.steps = Some(v.parse()?),
            "dt" => s.dt = Some(v.parse()?),
            "tol" => s.tol = Some(v.parse()?),
            "fd_step" => s.fd_step = Some(v.parse()?),
            "p0" => s.p0 = Some(v.parse()?),
            other => bail!("unsupported override key '{other}'"),
        }
    }
    Ok(s)
}
