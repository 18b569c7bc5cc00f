//! Discretized prediction problem on the scaled horizon `[0, 1]`.
//!
//! A model supplies the stage functions of a time-scaled optimal control
//! problem: dynamics `f`, equality constraints `C`, the partial derivatives of
//! the Hamiltonian `H = L + λᵀf + μᵀC`, the terminal cost `φ` and the terminal
//! constraint `ψ`. The horizon length `p` enters every stage function as a
//! parameter. The nonlinear residual `F(U, x_t, t)` is obtained by eliminating
//! the states with a forward sweep and the costates with a backward sweep,
//! leaving only the stacked unknowns `U`.

use crate::error::{Result, SolverError};

/// Dimensions of a discretized prediction problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub n_x: usize,
    pub n_u: usize,
    pub n_d: usize,
    pub n_c: usize,
    pub n_psi: usize,
}

impl Dims {
    /// Unknowns per stage: control, dummy and constraint multiplier.
    pub fn stage_width(&self) -> usize {
        self.n_u + self.n_d + self.n_c
    }

    /// Trailing unknowns: terminal multipliers plus the horizon parameter.
    pub fn border_width(&self) -> usize {
        self.n_psi + 1
    }

    pub fn flat_len(&self, n: usize) -> usize {
        n * self.stage_width() + self.border_width()
    }
}

/// Arguments of the Hamiltonian at one stage. `lambda` is the costate of the
/// *next* node, `λ_{i+1}`.
#[derive(Debug, Clone, Copy)]
pub struct StagePoint<'a> {
    pub tau: f64,
    pub x: &'a [f64],
    pub lambda: &'a [f64],
    pub u: &'a [f64],
    pub ud: &'a [f64],
    pub mu: &'a [f64],
    pub p: f64,
}

/// Stage and terminal functions of a time-scaled prediction problem.
///
/// Vectors are returned by value; [`validate_model`] checks their lengths
/// against [`Dims`] once, before a model is used.
pub trait ModelDefinition: Send + Sync {
    fn dims(&self) -> Dims;

    /// Scaled dynamics `f(τ, x, u, p)`. With `p = 1` this is the physical
    /// plant vector field used for closed-loop propagation.
    fn dynamics(&self, tau: f64, x: &[f64], u: &[f64], p: f64) -> Vec<f64>;

    /// Equality constraints `C(τ, x, u, u_d, p)`.
    fn constraint(&self, tau: f64, x: &[f64], u: &[f64], ud: &[f64], p: f64) -> Vec<f64>;

    fn h_x(&self, s: &StagePoint<'_>) -> Vec<f64>;
    fn h_u(&self, s: &StagePoint<'_>) -> Vec<f64>;
    fn h_ud(&self, s: &StagePoint<'_>) -> Vec<f64>;

    fn h_mu(&self, s: &StagePoint<'_>) -> Vec<f64> {
        self.constraint(s.tau, s.x, s.u, s.ud, s.p)
    }

    /// `∂H/∂p` at one stage.
    fn h_p(&self, s: &StagePoint<'_>) -> f64;

    /// Hessian of `H` with respect to the stage unknowns `(u, u_d, μ)`,
    /// row-major, `stage_width × stage_width`.
    fn stage_hessian(&self, s: &StagePoint<'_>) -> Vec<f64>;

    fn phi_x(&self, tau: f64, x: &[f64], p: f64) -> Vec<f64>;
    fn phi_p(&self, tau: f64, x: &[f64], p: f64) -> f64;

    fn psi(&self, tau: f64, x: &[f64], p: f64) -> Vec<f64>;

    /// `(∂ψ/∂x)ᵀ ν`.
    fn psi_x_t(&self, tau: f64, x: &[f64], p: f64, nu: &[f64]) -> Vec<f64>;

    /// `νᵀ ∂ψ/∂p`.
    fn psi_p_t(&self, tau: f64, x: &[f64], p: f64, nu: &[f64]) -> f64;

    /// Stage values `(u, u_d, μ)` used to initialize a cold start with
    /// horizon length `p`.
    fn initial_stage(&self, _p: f64) -> Vec<f64> {
        let d = self.dims();
        let mut s = vec![0.0; d.stage_width()];
        s[d.n_u..d.n_u + d.n_d].fill(1.0);
        s
    }

    /// Projects a computed control onto the admissible set before it is
    /// applied to the plant.
    fn clamp_control(&self, _u: &mut [f64]) {}
}

fn check_len(callback: &'static str, v: &[f64], expected: usize) -> Result<()> {
    if v.len() != expected {
        return Err(SolverError::CallbackDimension {
            callback,
            expected,
            got: v.len(),
        });
    }
    Ok(())
}

/// Probes every callback once and checks the output dimensions.
pub fn validate_model(model: &dyn ModelDefinition) -> Result<()> {
    let d = model.dims();
    if d.n_x == 0 || d.n_u == 0 {
        return Err(SolverError::Config(
            "state and control dimensions must be positive".into(),
        ));
    }
    let x = vec![0.5; d.n_x];
    let lambda = vec![0.25; d.n_x];
    let u = vec![0.3; d.n_u];
    let ud = vec![0.7; d.n_d];
    let mu = vec![0.1; d.n_c];
    let nu = vec![0.2; d.n_psi];
    let p = 1.5;
    let s = StagePoint {
        tau: 0.0,
        x: &x,
        lambda: &lambda,
        u: &u,
        ud: &ud,
        mu: &mu,
        p,
    };
    check_len("dynamics", &model.dynamics(0.0, &x, &u, p), d.n_x)?;
    check_len("constraint", &model.constraint(0.0, &x, &u, &ud, p), d.n_c)?;
    check_len("h_x", &model.h_x(&s), d.n_x)?;
    check_len("h_u", &model.h_u(&s), d.n_u)?;
    check_len("h_ud", &model.h_ud(&s), d.n_d)?;
    check_len("h_mu", &model.h_mu(&s), d.n_c)?;
    let w = d.stage_width();
    check_len("stage_hessian", &model.stage_hessian(&s), w * w)?;
    check_len("phi_x", &model.phi_x(1.0, &x, p), d.n_x)?;
    check_len("psi", &model.psi(1.0, &x, p), d.n_psi)?;
    check_len("psi_x_t", &model.psi_x_t(1.0, &x, p, &nu), d.n_x)?;
    Ok(())
}

/// The stacked unknown vector
/// `[u_0, u_{d,0}, μ_0, …, u_{N-1}, u_{d,N-1}, μ_{N-1}, ν, p]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonSolution {
    dims: Dims,
    n: usize,
    data: Vec<f64>,
}

impl HorizonSolution {
    pub fn from_flat(dims: Dims, n: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(SolverError::Config(
                "horizon grid size must be positive".into(),
            ));
        }
        let expected = dims.flat_len(n);
        if data.len() != expected {
            return Err(SolverError::Dimension {
                what: "horizon solution",
                expected,
                got: data.len(),
            });
        }
        Ok(Self { dims, n, data })
    }

    /// Builds a solution with every stage set to `stage`.
    pub fn uniform(dims: Dims, n: usize, stage: &[f64], nu: &[f64], p: f64) -> Result<Self> {
        let w = dims.stage_width();
        if stage.len() != w {
            return Err(SolverError::Dimension {
                what: "stage values",
                expected: w,
                got: stage.len(),
            });
        }
        if nu.len() != dims.n_psi {
            return Err(SolverError::Dimension {
                what: "terminal multipliers",
                expected: dims.n_psi,
                got: nu.len(),
            });
        }
        let mut data = Vec::with_capacity(dims.flat_len(n));
        for _ in 0..n {
            data.extend_from_slice(stage);
        }
        data.extend_from_slice(nu);
        data.push(p);
        Self::from_flat(dims, n, data)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    /// Horizon grid size `N`.
    pub fn horizon(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn stage(&self, i: usize) -> &[f64] {
        let w = self.dims.stage_width();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn stage_mut(&mut self, i: usize) -> &mut [f64] {
        let w = self.dims.stage_width();
        &mut self.data[i * w..(i + 1) * w]
    }

    pub fn u(&self, i: usize) -> &[f64] {
        &self.stage(i)[..self.dims.n_u]
    }

    pub fn ud(&self, i: usize) -> &[f64] {
        let d = self.dims;
        &self.stage(i)[d.n_u..d.n_u + d.n_d]
    }

    pub fn mu(&self, i: usize) -> &[f64] {
        let d = self.dims;
        &self.stage(i)[d.n_u + d.n_d..]
    }

    pub fn nu(&self) -> &[f64] {
        let start = self.n * self.dims.stage_width();
        &self.data[start..start + self.dims.n_psi]
    }

    pub fn nu_mut(&mut self) -> &mut [f64] {
        let start = self.n * self.dims.stage_width();
        &mut self.data[start..start + self.dims.n_psi]
    }

    pub fn p(&self) -> f64 {
        self.data[self.data.len() - 1]
    }

    pub fn set_p(&mut self, p: f64) {
        let last = self.data.len() - 1;
        self.data[last] = p;
    }

    /// Grid step of the scaled horizon, `1/N`.
    pub fn dtau(&self) -> f64 {
        1.0 / self.n as f64
    }
}

/// States `x_0..x_N` and costates `λ_0..λ_N`, stored node-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RecursionBuffers {
    n_x: usize,
    states: Vec<f64>,
    costates: Vec<f64>,
}

impl RecursionBuffers {
    /// Number of nodes, `N + 1`.
    pub fn nodes(&self) -> usize {
        self.states.len() / self.n_x
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.n_x..(i + 1) * self.n_x]
    }

    pub fn costate(&self, i: usize) -> &[f64] {
        &self.costates[i * self.n_x..(i + 1) * self.n_x]
    }
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Explicit Euler sweep `x_{i+1} = x_i + f(τ_i, x_i, u_i, p)·Δτ` from `x_0 = x_t`.
/// Costates are left at zero.
pub fn forward_recursion(
    model: &dyn ModelDefinition,
    x_t: &[f64],
    sol: &HorizonSolution,
) -> Result<RecursionBuffers> {
    let d = model.dims();
    if x_t.len() != d.n_x {
        return Err(SolverError::Dimension {
            what: "current state",
            expected: d.n_x,
            got: x_t.len(),
        });
    }
    let n = sol.horizon();
    let dtau = sol.dtau();
    let p = sol.p();
    let mut states = Vec::with_capacity((n + 1) * d.n_x);
    states.extend_from_slice(x_t);
    if !all_finite(x_t) {
        return Err(SolverError::StateDivergence { stage: 0 });
    }
    for i in 0..n {
        let tau = i as f64 * dtau;
        let xi = &states[i * d.n_x..(i + 1) * d.n_x];
        let f = model.dynamics(tau, xi, sol.u(i), p);
        let next: Vec<f64> = xi.iter().zip(&f).map(|(x, fx)| x + fx * dtau).collect();
        if !all_finite(&next) {
            return Err(SolverError::StateDivergence { stage: i + 1 });
        }
        states.extend_from_slice(&next);
    }
    Ok(RecursionBuffers {
        n_x: d.n_x,
        costates: vec![0.0; states.len()],
        states,
    })
}

/// Backward sweep `λ_i = λ_{i+1} + ∂Hᵀ/∂x(τ_i, x_i, λ_{i+1}, …)·Δτ` starting
/// from `λ_N = ∂φᵀ/∂x + (∂ψᵀ/∂x)ν`.
pub fn backward_recursion(
    model: &dyn ModelDefinition,
    mut buffers: RecursionBuffers,
    sol: &HorizonSolution,
) -> Result<RecursionBuffers> {
    let n = sol.horizon();
    let nx = buffers.n_x;
    if buffers.nodes() != n + 1 {
        return Err(SolverError::Dimension {
            what: "recursion buffers",
            expected: n + 1,
            got: buffers.nodes(),
        });
    }
    let dtau = sol.dtau();
    let p = sol.p();
    let x_n = buffers.state(n).to_vec();
    let phi_x = model.phi_x(1.0, &x_n, p);
    let psi_x = model.psi_x_t(1.0, &x_n, p, sol.nu());
    for k in 0..nx {
        buffers.costates[n * nx + k] = phi_x[k] + psi_x[k];
    }
    if !all_finite(buffers.costate(n)) {
        return Err(SolverError::CostateDivergence { stage: n });
    }
    for i in (0..n).rev() {
        let (head, tail) = buffers.costates.split_at_mut((i + 1) * nx);
        let next = &tail[..nx];
        let s = StagePoint {
            tau: i as f64 * dtau,
            x: &buffers.states[i * nx..(i + 1) * nx],
            lambda: next,
            u: sol.u(i),
            ud: sol.ud(i),
            mu: sol.mu(i),
            p,
        };
        let hx = model.h_x(&s);
        let cur = &mut head[i * nx..];
        for k in 0..nx {
            cur[k] = next[k] + hx[k] * dtau;
        }
        if !all_finite(&cur[..nx]) {
            return Err(SolverError::CostateDivergence { stage: i });
        }
    }
    Ok(buffers)
}

/// Runs both sweeps and returns the filled buffers.
pub fn recursions(
    model: &dyn ModelDefinition,
    x_t: &[f64],
    sol: &HorizonSolution,
) -> Result<RecursionBuffers> {
    let buffers = forward_recursion(model, x_t, sol)?;
    backward_recursion(model, buffers, sol)
}

/// Residual `F(U, x_t, t) = ∂ℒᵀ/∂U` in the same order as `U`: per stage
/// `H_u·Δτ, H_{u_d}·Δτ, C·Δτ`; then `ψ(x_N)`; then the `p`-row
/// `∂φ/∂p + νᵀ∂ψ/∂p + Δτ·Σ H_p`.
///
/// The models are autonomous in scaled time, so `t` only tags the call.
pub fn evaluate_f(
    model: &dyn ModelDefinition,
    sol: &HorizonSolution,
    x_t: &[f64],
    _t: f64,
) -> Result<Vec<f64>> {
    let buffers = recursions(model, x_t, sol)?;
    Ok(assemble_residual(model, sol, &buffers))
}

/// Assembles `F` from already computed sweeps.
pub fn assemble_residual(
    model: &dyn ModelDefinition,
    sol: &HorizonSolution,
    buffers: &RecursionBuffers,
) -> Vec<f64> {
    let n = sol.horizon();
    let dtau = sol.dtau();
    let p = sol.p();
    let mut out = Vec::with_capacity(sol.len());
    let mut hp_sum = 0.0;
    for i in 0..n {
        let s = StagePoint {
            tau: i as f64 * dtau,
            x: buffers.state(i),
            lambda: buffers.costate(i + 1),
            u: sol.u(i),
            ud: sol.ud(i),
            mu: sol.mu(i),
            p,
        };
        out.extend(model.h_u(&s).into_iter().map(|v| v * dtau));
        out.extend(model.h_ud(&s).into_iter().map(|v| v * dtau));
        out.extend(model.h_mu(&s).into_iter().map(|v| v * dtau));
        hp_sum += model.h_p(&s);
    }
    let x_n = buffers.state(n);
    out.extend(model.psi(1.0, x_n, p));
    let p_row = model.phi_p(1.0, x_n, p) + model.psi_p_t(1.0, x_n, p, sol.nu()) + dtau * hp_sum;
    out.push(p_row);
    out
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
