//! Minimum-time double integrator `χ̈ = u`, `|u| ≤ 1`, on the scaled horizon.
//!
//! State `x = (χ, χ̇)`. The bound on `u` is replaced by `u² + u_d² = 1` with a
//! dummy `u_d`, rewarded through the interior-point term `−w_d·p·Σ Δτ·u_d`.
//!
//! * [`Model1`] enforces the target through the terminal constraint
//!   `ψ = x_N − x_f`, with multipliers `ν`.
//! * [`Model2`] replaces `ψ` by the penalty `(α₁/2)|x_N − x_f|²` and adds the
//!   regularization `(α₂/2)·p·Σ Δτ·u²`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SolverError};
use crate::ocp::{Dims, ModelDefinition, StagePoint};

pub const DEFAULT_WD: f64 = 0.005;
pub const DEFAULT_ALPHA1: f64 = 1.0e3;
pub const DEFAULT_ALPHA2: f64 = 0.1;
pub const DEFAULT_X0: [f64; 2] = [-1.0, 0.0];
pub const DEFAULT_XF: [f64; 2] = [0.0, 0.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Model1Params {
    /// Interior-point penalty weight.
    pub w_d: f64,
    pub x_f: [f64; 2],
}

impl Default for Model1Params {
    fn default() -> Self {
        Self {
            w_d: DEFAULT_WD,
            x_f: DEFAULT_XF,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Model2Params {
    pub w_d: f64,
    /// Terminal penalty weight.
    pub alpha1: f64,
    /// Control regularization weight.
    pub alpha2: f64,
    pub x_f: [f64; 2],
}

impl Default for Model2Params {
    fn default() -> Self {
        Self {
            w_d: DEFAULT_WD,
            alpha1: DEFAULT_ALPHA1,
            alpha2: DEFAULT_ALPHA2,
            x_f: DEFAULT_XF,
        }
    }
}

fn check_finite(name: &str, v: f64) -> Result<()> {
    if !v.is_finite() {
        return Err(SolverError::Config(format!("{name} must be finite")));
    }
    Ok(())
}

const DIMS_1: Dims = Dims {
    n_x: 2,
    n_u: 1,
    n_d: 1,
    n_c: 1,
    n_psi: 2,
};

const DIMS_2: Dims = Dims { n_psi: 0, ..DIMS_1 };

// Dynamics, constraint and the shared part of the Hamiltonian.
fn dynamics(x: &[f64], u: &[f64], p: f64) -> Vec<f64> {
    vec![p * x[1], p * u[0]]
}

fn constraint(u: &[f64], ud: &[f64]) -> Vec<f64> {
    vec![u[0] * u[0] + ud[0] * ud[0] - 1.0]
}

fn h_x(s: &StagePoint<'_>) -> Vec<f64> {
    vec![0.0, s.p * s.lambda[0]]
}

fn h_ud(s: &StagePoint<'_>, w_d: f64) -> Vec<f64> {
    vec![2.0 * s.mu[0] * s.ud[0] - w_d * s.p]
}

fn h_p_base(s: &StagePoint<'_>, w_d: f64) -> f64 {
    s.lambda[0] * s.x[1] + s.lambda[1] * s.u[0] - w_d * s.ud[0]
}

fn hessian(s: &StagePoint<'_>, uu_extra: f64) -> Vec<f64> {
    let (u, ud, mu) = (s.u[0], s.ud[0], s.mu[0]);
    vec![
        2.0 * mu + uu_extra,
        0.0,
        2.0 * u,
        0.0,
        2.0 * mu,
        2.0 * ud,
        2.0 * u,
        2.0 * ud,
        0.0,
    ]
}

fn initial_stage(w_d: f64, p: f64) -> Vec<f64> {
    vec![0.0, 1.0, w_d * p / 2.0]
}

fn clamp_unit(u: &mut [f64]) {
    for v in u {
        *v = v.clamp(-1.0, 1.0);
    }
}

/// Hard terminal constraint variant.
#[derive(Debug, Clone)]
pub struct Model1 {
    params: Model1Params,
}

impl Model1 {
    pub fn new(params: Model1Params) -> Result<Self> {
        check_finite("w_d", params.w_d)?;
        if params.w_d <= 0.0 {
            return Err(SolverError::Config("w_d must be positive".into()));
        }
        check_finite("x_f", params.x_f[0])?;
        check_finite("y_f", params.x_f[1])?;
        Ok(Self { params })
    }

    pub fn params(&self) -> &Model1Params {
        &self.params
    }
}

impl ModelDefinition for Model1 {
    fn dims(&self) -> Dims {
        DIMS_1
    }

    fn dynamics(&self, _tau: f64, x: &[f64], u: &[f64], p: f64) -> Vec<f64> {
        dynamics(x, u, p)
    }

    fn constraint(&self, _tau: f64, _x: &[f64], u: &[f64], ud: &[f64], _p: f64) -> Vec<f64> {
        constraint(u, ud)
    }

    fn h_x(&self, s: &StagePoint<'_>) -> Vec<f64> {
        h_x(s)
    }

    fn h_u(&self, s: &StagePoint<'_>) -> Vec<f64> {
        vec![s.p * s.lambda[1] + 2.0 * s.u[0] * s.mu[0]]
    }

    fn h_ud(&self, s: &StagePoint<'_>) -> Vec<f64> {
        h_ud(s, self.params.w_d)
    }

    fn h_p(&self, s: &StagePoint<'_>) -> f64 {
        h_p_base(s, self.params.w_d)
    }

    fn stage_hessian(&self, s: &StagePoint<'_>) -> Vec<f64> {
        hessian(s, 0.0)
    }

    fn phi_x(&self, _tau: f64, _x: &[f64], _p: f64) -> Vec<f64> {
        vec![0.0, 0.0]
    }

    fn phi_p(&self, _tau: f64, _x: &[f64], _p: f64) -> f64 {
        1.0
    }

    fn psi(&self, _tau: f64, x: &[f64], _p: f64) -> Vec<f64> {
        vec![x[0] - self.params.x_f[0], x[1] - self.params.x_f[1]]
    }

    fn psi_x_t(&self, _tau: f64, _x: &[f64], _p: f64, nu: &[f64]) -> Vec<f64> {
        nu.to_vec()
    }

    fn psi_p_t(&self, _tau: f64, _x: &[f64], _p: f64, _nu: &[f64]) -> f64 {
        0.0
    }

    fn initial_stage(&self, p: f64) -> Vec<f64> {
        initial_stage(self.params.w_d, p)
    }

    fn clamp_control(&self, u: &mut [f64]) {
        clamp_unit(u)
    }
}

/// Terminal penalty variant with control regularization.
#[derive(Debug, Clone)]
pub struct Model2 {
    params: Model2Params,
}

impl Model2 {
    pub fn new(params: Model2Params) -> Result<Self> {
        for (name, v) in [
            ("w_d", params.w_d),
            ("alpha1", params.alpha1),
            ("alpha2", params.alpha2),
            ("x_f", params.x_f[0]),
            ("y_f", params.x_f[1]),
        ] {
            check_finite(name, v)?;
        }
        if params.w_d <= 0.0 || params.alpha1 <= 0.0 {
            return Err(SolverError::Config(
                "w_d and alpha1 must be positive".into(),
            ));
        }
        if params.alpha2 < 0.0 {
            return Err(SolverError::Config("alpha2 must be non-negative".into()));
        }
        Ok(Self { params })
    }

    pub fn params(&self) -> &Model2Params {
        &self.params
    }
}

impl ModelDefinition for Model2 {
    fn dims(&self) -> Dims {
        DIMS_2
    }

    fn dynamics(&self, _tau: f64, x: &[f64], u: &[f64], p: f64) -> Vec<f64> {
        dynamics(x, u, p)
    }

    fn constraint(&self, _tau: f64, _x: &[f64], u: &[f64], ud: &[f64], _p: f64) -> Vec<f64> {
        constraint(u, ud)
    }

    fn h_x(&self, s: &StagePoint<'_>) -> Vec<f64> {
        h_x(s)
    }

    fn h_u(&self, s: &StagePoint<'_>) -> Vec<f64> {
        let u = s.u[0];
        vec![s.p * s.lambda[1] + 2.0 * u * s.mu[0] + self.params.alpha2 * s.p * u]
    }

    fn h_ud(&self, s: &StagePoint<'_>) -> Vec<f64> {
        h_ud(s, self.params.w_d)
    }

    fn h_p(&self, s: &StagePoint<'_>) -> f64 {
        h_p_base(s, self.params.w_d) + 0.5 * self.params.alpha2 * s.u[0] * s.u[0]
    }

    fn stage_hessian(&self, s: &StagePoint<'_>) -> Vec<f64> {
        hessian(s, self.params.alpha2 * s.p)
    }

    fn phi_x(&self, _tau: f64, x: &[f64], _p: f64) -> Vec<f64> {
        let a = self.params.alpha1;
        vec![
            a * (x[0] - self.params.x_f[0]),
            a * (x[1] - self.params.x_f[1]),
        ]
    }

    fn phi_p(&self, _tau: f64, _x: &[f64], _p: f64) -> f64 {
        1.0
    }

    fn psi(&self, _tau: f64, _x: &[f64], _p: f64) -> Vec<f64> {
        Vec::new()
    }

    fn psi_x_t(&self, _tau: f64, _x: &[f64], _p: f64, _nu: &[f64]) -> Vec<f64> {
        vec![0.0, 0.0]
    }

    fn psi_p_t(&self, _tau: f64, _x: &[f64], _p: f64, _nu: &[f64]) -> f64 {
        0.0
    }

    fn initial_stage(&self, p: f64) -> Vec<f64> {
        initial_stage(self.params.w_d, p)
    }

    fn clamp_control(&self, u: &mut [f64]) {
        clamp_unit(u)
    }
}

/// Model selection as it appears in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "lowercase")]
pub enum ModelChoice {
    Model1(Model1Params),
    Model2(Model2Params),
}

impl ModelChoice {
    pub fn id(&self) -> &'static str {
        match self {
            ModelChoice::Model1(_) => "model1",
            ModelChoice::Model2(_) => "model2",
        }
    }

    pub fn target(&self) -> [f64; 2] {
        match self {
            ModelChoice::Model1(p) => p.x_f,
            ModelChoice::Model2(p) => p.x_f,
        }
    }

    pub fn w_d(&self) -> f64 {
        match self {
            ModelChoice::Model1(p) => p.w_d,
            ModelChoice::Model2(p) => p.w_d,
        }
    }

    /// Instantiates and validates the model.
    pub fn build(&self) -> Result<Box<dyn ModelDefinition>> {
        let model: Box<dyn ModelDefinition> = match *self {
            ModelChoice::Model1(p) => Box::new(Model1::new(p)?),
            ModelChoice::Model2(p) => Box::new(Model2::new(p)?),
        };
        crate::ocp::validate_model(model.as_ref())?;
        Ok(model)
    }
}
