//! Closed-loop receding-horizon driver.
//!
//! At `t_0` a damped Newton iteration produces `U_0` from a fixed initial
//! guess. At each later system time `t_j = t_0 + jΔt` the previous solution
//! is reused as a warm start (optionally shifted along the horizon) and
//! refined by `k` Newton-Krylov steps `a_j(ΔU) = −F(U, x_j, t_j)`. The first
//! `n_u` entries of `U_j` are applied to the plant.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::SolverError;
use crate::krylov::{
    gmres, FdOperator, LinearOperator, Preconditioner, DEFAULT_FD_STEP, DEFAULT_GMRES_TOL,
};
use crate::linalg::axpy;
use crate::models::{Model1Params, ModelChoice, DEFAULT_X0};
use crate::ocp::{evaluate_f, norm2, HorizonSolution, ModelDefinition};
use crate::precond::{PreconditionerFactors, SparsePreconditioner};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcConfig {
    pub model: ModelChoice,
    /// Horizon grid size `N`.
    pub horizon: usize,
    /// Number of system-time steps.
    pub steps: usize,
    /// System step. `None` uses the cold-start horizon length divided by
    /// `steps`.
    pub dt: Option<f64>,
    /// Newton-Krylov refinements per step.
    pub refinements: usize,
    pub shifting: bool,
    pub preconditioning: bool,
    pub fd_step: f64,
    pub gmres_tol: f64,
    /// `None` uses the dimension of `U`.
    pub gmres_max_iter: Option<usize>,
    /// Initial guess of the horizon length.
    pub p0: f64,
    pub cold_start_max_iter: usize,
    /// Residual norm above which a step is declared failed.
    pub divergence_threshold: f64,
    pub x0: [f64; 2],
    /// Radius of the target ball accepted when the horizon is exhausted.
    pub terminal_radius: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            model: ModelChoice::Model1(Model1Params::default()),
            horizon: 20,
            steps: 1000,
            dt: None,
            refinements: 1,
            shifting: false,
            preconditioning: true,
            fd_step: DEFAULT_FD_STEP,
            gmres_tol: DEFAULT_GMRES_TOL,
            gmres_max_iter: None,
            p0: 2.5,
            cold_start_max_iter: 100,
            divergence_threshold: 1e6,
            x0: DEFAULT_X0,
            terminal_radius: 5e-2,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |m: &str| Err(SolverError::Config(m.to_string()));
        if self.horizon < 2 {
            return bad("horizon must be at least 2");
        }
        if self.refinements == 0 {
            return bad("refinements must be at least 1");
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return bad("dt must be positive");
            }
        }
        if !(self.fd_step > 0.0 && self.fd_step.is_finite()) {
            return bad("fd step must be positive");
        }
        if !(self.gmres_tol > 0.0 && self.gmres_tol.is_finite()) {
            return bad("gmres tolerance must be positive");
        }
        if self.gmres_max_iter == Some(0) {
            return bad("gmres max_iter must be at least 1");
        }
        if !(self.p0 > 0.0 && self.p0.is_finite()) {
            return bad("initial horizon guess must be positive");
        }
        if self.cold_start_max_iter == 0 {
            return bad("cold-start iteration cap must be at least 1");
        }
        if !(self.divergence_threshold > 0.0) {
            return bad("divergence threshold must be positive");
        }
        if !(self.terminal_radius > 0.0) {
            return bad("terminal radius must be positive");
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            return bad("initial state must be finite");
        }
        Ok(())
    }
}

/// Per-step diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: usize,
    /// `‖F(U_{j−1}, x_j, t_j)‖₂` before refinement.
    pub residual_before: f64,
    /// `‖F(U_j, x_j, t_j)‖₂` after all refinements.
    pub residual_after: f64,
    /// GMRES iterations of each refinement.
    pub gmres_per_refinement: Vec<usize>,
    pub gmres_converged: bool,
    pub p: f64,
    pub wall_time_s: f64,
}

impl StepStats {
    pub fn gmres_iterations(&self) -> usize {
        self.gmres_per_refinement.iter().sum()
    }
}

/// Control computed at one sample together with its diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlRecord {
    /// Control applied to the plant, after projection onto the bounds.
    pub applied: Vec<f64>,
    /// First `n_u` entries of `U_j`.
    pub computed: Vec<f64>,
    /// First `n_d` dummy entries of `U_j`.
    pub dummy: Vec<f64>,
    pub stats: StepStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub step: usize,
    pub t: f64,
    pub state: Vec<f64>,
    /// `None` for the final state of a run.
    pub control: Option<ControlRecord>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    /// System step actually used.
    pub dt: f64,
    /// Set when the run stopped because the horizon was nearly exhausted.
    pub stopped_early: bool,
}

impl Trajectory {
    pub fn controls(&self) -> impl Iterator<Item = &ControlRecord> {
        self.samples.iter().filter_map(|s| s.control.as_ref())
    }

    pub fn final_state(&self) -> Option<&[f64]> {
        self.samples.last().map(|s| s.state.as_slice())
    }
}

/// A refinement that ended with a diverged or inadmissible iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFailure {
    pub step: usize,
    pub reason: String,
    pub stats: StepStats,
}

#[derive(Debug, Error)]
pub enum MpcError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("step {} failed: {}", .failure.step, .failure.reason)]
    Step {
        failure: StepFailure,
        partial: Box<Trajectory>,
    },
}

impl MpcError {
    pub fn partial_trajectory(&self) -> Option<&Trajectory> {
        match self {
            MpcError::Step { partial, .. } => Some(partial),
            MpcError::Solver(_) => None,
        }
    }
}

/// Outcome of the cold-start iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct ColdStartReport {
    pub iterations: usize,
    pub initial_residual: f64,
    pub final_residual: f64,
    pub gmres_iterations: usize,
}

fn max_iter(config: &MpcConfig, dim: usize) -> usize {
    config.gmres_max_iter.unwrap_or(dim)
}

fn factorize_at(
    model: &dyn ModelDefinition,
    sol: &HorizonSolution,
    x: &[f64],
    op: &FdOperator<'_>,
) -> Result<PreconditionerFactors, SolverError> {
    SparsePreconditioner::assemble(model, sol, x, op)?.factorize()
}

/// Initial guess `u = 0, u_d = 1, μ = w_d·p/2, ν = 0` (for the shipped
/// models) with horizon length `p`.
pub fn initial_guess(
    model: &dyn ModelDefinition,
    n: usize,
    p: f64,
) -> Result<HorizonSolution, SolverError> {
    let d = model.dims();
    HorizonSolution::uniform(d, n, &model.initial_stage(p), &vec![0.0; d.n_psi], p)
}

/// Finite-difference Jacobian with the horizon length frozen: the last
/// unknown is held fixed and the last residual row is dropped.
struct FrozenHorizonOperator<'a, 'm> {
    op: &'a FdOperator<'m>,
}

impl LinearOperator for FrozenHorizonOperator<'_, '_> {
    fn dim(&self) -> usize {
        self.op.dim() - 1
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>, SolverError> {
        let mut full = v.to_vec();
        full.push(0.0);
        let mut out = self.op.apply(&full)?;
        out.pop();
        Ok(out)
    }
}

/// `v ↦ J(Jv) + εv` for a symmetric Jacobian `J`.
struct DampedNormalOperator<'a> {
    op: &'a dyn LinearOperator,
    eps: f64,
}

impl LinearOperator for DampedNormalOperator<'_> {
    fn dim(&self) -> usize {
        self.op.dim()
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>, SolverError> {
        let jv = self.op.apply(v)?;
        let mut out = self.op.apply(&jv)?;
        axpy(self.eps, v, &mut out);
        Ok(out)
    }
}

/// Residual of the damped Newton phases; with a frozen horizon the `p`-row
/// is excluded.
fn phase_residual(
    model: &dyn ModelDefinition,
    sol: &HorizonSolution,
    x0: &[f64],
    t0: f64,
    freeze_p: bool,
) -> Result<Vec<f64>, SolverError> {
    let mut f = evaluate_f(model, sol, x0, t0)?;
    if freeze_p {
        f.pop();
    }
    Ok(f)
}

/// Largest residual decrease along `dir` by step halving, if any.
#[allow(clippy::too_many_arguments)]
fn line_search(
    model: &dyn ModelDefinition,
    sol: &HorizonSolution,
    dir: &[f64],
    x0: &[f64],
    t0: f64,
    res: f64,
    min_alpha: f64,
    freeze_p: bool,
) -> Option<(HorizonSolution, Vec<f64>, f64)> {
    let mut alpha = 1.0;
    while alpha >= min_alpha {
        let mut trial = sol.clone();
        axpy(alpha, dir, trial.as_mut_slice());
        // Fraction-to-boundary rule on the horizon length.
        if trial.p() >= 0.5 * sol.p() {
            if let Ok(ft) = phase_residual(model, &trial, x0, t0, freeze_p) {
                let rt = norm2(&ft);
                if rt.is_finite() && rt < res {
                    return Some((trial, ft, rt));
                }
            }
        }
        alpha *= 0.5;
    }
    None
}

struct PhaseOutcome {
    sol: HorizonSolution,
    residual: f64,
    iterations: usize,
    gmres_iterations: usize,
    converged: bool,
}

/// Damped Newton on `F` (or on `F` without the `p`-row and `p` column).
/// Newton directions come from GMRES; when halving does not give a decrease
/// a Levenberg-Marquardt direction `(J² + εI)d = −JF` is used, relying on
/// the symmetry of `F_U`.
fn damped_newton(
    model: &dyn ModelDefinition,
    mut sol: HorizonSolution,
    x0: &[f64],
    t0: f64,
    config: &MpcConfig,
    freeze_p: bool,
    max_iter: usize,
) -> Result<PhaseOutcome, SolverError> {
    let target = 10.0 * config.gmres_tol;
    let mut f = phase_residual(model, &sol, x0, t0, freeze_p)?;
    let mut res = norm2(&f);
    let mut gmres_total = 0;
    let mut lm_eps = 1e-3;
    for it in 0..max_iter {
        if res <= target {
            return Ok(PhaseOutcome {
                sol,
                residual: res,
                iterations: it,
                gmres_iterations: gmres_total,
                converged: true,
            });
        }
        let fd = FdOperator::new(model, &sol, x0, t0, config.fd_step)?;
        let frozen = FrozenHorizonOperator { op: &fd };
        let op: &dyn LinearOperator = if freeze_p { &frozen } else { &fd };
        let b: Vec<f64> = f.iter().map(|v| -v).collect();
        let factors = if config.preconditioning && !freeze_p {
            factorize_at(model, &sol, x0, &fd).ok()
        } else {
            None
        };
        let pc = factors.as_ref().map(|f| f as &dyn Preconditioner);
        let tol = config.gmres_tol.min(0.1 * res);
        let lift = |mut d: Vec<f64>| {
            if freeze_p {
                d.push(0.0);
            }
            d
        };
        let mut accepted = match gmres(op, &b, tol, op.dim(), pc) {
            Ok((du, rep)) => {
                gmres_total += rep.iterations;
                line_search(model, &sol, &lift(du), x0, t0, res, 1.0 / 64.0, freeze_p)
            }
            Err(SolverError::OperatorDivergence) => None,
            Err(e) => return Err(e),
        };
        if accepted.is_none() {
            let rhs = op.apply(&b)?;
            while accepted.is_none() && lm_eps < 1e12 {
                let normal = DampedNormalOperator { op, eps: lm_eps };
                if let Ok((du, rep)) = gmres(&normal, &rhs, 1e-3 * norm2(&rhs), op.dim(), None) {
                    gmres_total += rep.iterations;
                    accepted = line_search(model, &sol, &lift(du), x0, t0, res, 1.0, freeze_p);
                }
                if accepted.is_none() {
                    lm_eps *= 10.0;
                }
            }
            lm_eps = (lm_eps * 0.1).max(1e-12);
        }
        match accepted {
            Some((s, ft, rt)) => {
                sol = s;
                f = ft;
                res = rt;
            }
            None => {
                return Ok(PhaseOutcome {
                    sol,
                    residual: res,
                    iterations: it + 1,
                    gmres_iterations: gmres_total,
                    converged: false,
                })
            }
        }
    }
    Ok(PhaseOutcome {
        converged: res <= target,
        sol,
        residual: res,
        iterations: max_iter,
        gmres_iterations: gmres_total,
    })
}

/// Full Newton direction at `sol`, or `None` if GMRES cannot produce one.
fn newton_direction(
    model: &dyn ModelDefinition,
    sol: &HorizonSolution,
    f: &[f64],
    x0: &[f64],
    t0: f64,
    config: &MpcConfig,
) -> Result<Option<(Vec<f64>, usize)>, SolverError> {
    let fd = FdOperator::new(model, sol, x0, t0, config.fd_step)?;
    let factors = if config.preconditioning {
        factorize_at(model, sol, x0, &fd).ok()
    } else {
        None
    };
    let pc = factors.as_ref().map(|f| f as &dyn Preconditioner);
    let b: Vec<f64> = f.iter().map(|v| -v).collect();
    let tol = config.gmres_tol.min(0.1 * norm2(f));
    match gmres(&fd, &b, tol, fd.dim(), pc) {
        Ok((d, rep)) if d.iter().all(|v| v.is_finite()) => Ok(Some((d, rep.iterations))),
        Ok(_) | Err(SolverError::OperatorDivergence) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Computes `U_0` from [`initial_guess`].
///
/// First the optimality conditions are solved with the horizon length held
/// at `config.p0`. Then each iteration takes a full Newton step as a
/// predictor and re-solves the fixed-horizon conditions at the predicted
/// `p` as a corrector; the `p` step is halved until `‖F‖₂` decreases.
/// Converged once `‖F‖₂ ≤ 10·gmres_tol`. `cold_start_max_iter` caps the
/// number of predictor steps. If this fails, damped Newton on the full
/// system is run from the initial guess instead.
///
/// Plain Newton cannot start from the initial guess: at `u = 0, ν = 0` the
/// columns coupling `u` to `ν` and `p` vanish and `F_U` is singular, and
/// with large terminal costates a decrease of `‖F‖₂` is available by
/// shrinking `p` towards a spurious stationary point.
pub fn cold_start(
    model: &dyn ModelDefinition,
    config: &MpcConfig,
    x0: &[f64],
    t0: f64,
) -> Result<(HorizonSolution, ColdStartReport), SolverError> {
    match predictor_corrector(model, config, x0, t0) {
        Err(SolverError::ColdStart { .. }) => {}
        other => return other,
    }
    let sol = initial_guess(model, config.horizon, config.p0)?;
    let initial_residual = norm2(&evaluate_f(model, &sol, x0, t0)?);
    let out = damped_newton(
        model,
        sol,
        x0,
        t0,
        config,
        false,
        config.cold_start_max_iter,
    )?;
    if !out.converged {
        return Err(SolverError::ColdStart {
            iterations: out.iterations,
            residual: out.residual,
        });
    }
    Ok((
        out.sol,
        ColdStartReport {
            iterations: out.iterations,
            initial_residual,
            final_residual: out.residual,
            gmres_iterations: out.gmres_iterations,
        },
    ))
}

fn predictor_corrector(
    model: &dyn ModelDefinition,
    config: &MpcConfig,
    x0: &[f64],
    t0: f64,
) -> Result<(HorizonSolution, ColdStartReport), SolverError> {
    const CORRECTOR_ITER: usize = 30;
    let sol = initial_guess(model, config.horizon, config.p0)?;
    let initial_residual = norm2(&evaluate_f(model, &sol, x0, t0)?);
    let target = 10.0 * config.gmres_tol;
    let fixed = damped_newton(model, sol, x0, t0, config, true, CORRECTOR_ITER)?;
    let mut gmres_total = fixed.gmres_iterations;
    let mut sol = fixed.sol;
    let mut f = evaluate_f(model, &sol, x0, t0)?;
    let mut res = norm2(&f);
    let fail = |iterations, residual| SolverError::ColdStart {
        iterations,
        residual,
    };
    if !fixed.converged {
        return Err(fail(fixed.iterations, res));
    }
    for it in 0..config.cold_start_max_iter {
        if res <= target {
            return Ok((
                sol,
                ColdStartReport {
                    iterations: it,
                    initial_residual,
                    final_residual: res,
                    gmres_iterations: gmres_total,
                },
            ));
        }
        let Some((dir, iters)) = newton_direction(model, &sol, &f, x0, t0, config)? else {
            return Err(fail(it, res));
        };
        gmres_total += iters;
        let p = sol.p();
        let dp_full = *dir.last().expect("non-empty unknown vector");
        let mut scale = (0.5 * p / dp_full.abs().max(f64::MIN_POSITIVE)).min(1.0);
        let mut accepted = None;
        while scale >= 1.0 / 64.0 {
            let mut trial = sol.clone();
            axpy(scale, &dir, trial.as_mut_slice());
            if let Ok(c) = damped_newton(model, trial, x0, t0, config, true, CORRECTOR_ITER) {
                gmres_total += c.gmres_iterations;
                if c.converged {
                    if let Ok(fc) = evaluate_f(model, &c.sol, x0, t0) {
                        let rc = norm2(&fc);
                        if rc.is_finite() && rc < res {
                            accepted = Some((c.sol, fc, rc));
                            break;
                        }
                    }
                }
            }
            scale *= 0.5;
        }
        match accepted {
            Some((s, fc, rc)) => {
                sol = s;
                f = fc;
                res = rc;
            }
            None => return Err(fail(it + 1, res)),
        }
    }
    if res <= target {
        Ok((
            sol,
            ColdStartReport {
                iterations: config.cold_start_max_iter,
                initial_residual,
                final_residual: res,
                gmres_iterations: gmres_total,
            },
        ))
    } else {
        Err(fail(config.cold_start_max_iter, res))
    }
}

/// Warm start shifted along the horizon by `dt`.
///
/// The new horizon length is `p − dt`. Stage node `τ_i = i/N` of the new
/// horizon corresponds to old scaled time `σ_i = (dt + τ_i·p_new)/p_old`; the
/// per-stage values are interpolated linearly between the old nodes `i/N`,
/// `i = 0..N−1`, and held constant past the last one. `ν` is copied.
pub fn shift_horizon(prev: &HorizonSolution, dt: f64) -> Result<HorizonSolution, SolverError> {
    let p_old = prev.p();
    if !(p_old > dt) {
        return Err(SolverError::HorizonExhausted { p: p_old, dt });
    }
    let p_new = p_old - dt;
    let n = prev.horizon();
    let nf = n as f64;
    let mut next = prev.clone();
    for i in 0..n {
        let tau = i as f64 / nf;
        // Position in units of old grid steps.
        let s = ((dt + tau * p_new) / p_old * nf).clamp(0.0, (n - 1) as f64);
        let lo = (s.floor() as usize).min(n - 1);
        let hi = (lo + 1).min(n - 1);
        let w = s - lo as f64;
        let (a, b) = (prev.stage(lo), prev.stage(hi));
        for (k, v) in next.stage_mut(i).iter_mut().enumerate() {
            *v = if w == 0.0 {
                a[k]
            } else {
                (1.0 - w) * a[k] + w * b[k]
            };
        }
    }
    next.set_p(p_new);
    Ok(next)
}

/// `k` Newton-Krylov refinements of `sol` at `(x, t)`.
pub fn newton_refine(
    model: &dyn ModelDefinition,
    sol: &HorizonSolution,
    x: &[f64],
    t: f64,
    step: usize,
    config: &MpcConfig,
) -> Result<(HorizonSolution, StepStats), StepFailure> {
    let start = Instant::now();
    let mut stats = StepStats {
        step,
        residual_before: f64::NAN,
        residual_after: f64::NAN,
        gmres_per_refinement: Vec::with_capacity(config.refinements),
        gmres_converged: true,
        p: sol.p(),
        wall_time_s: 0.0,
    };
    let fail = |reason: String, stats: &StepStats| StepFailure {
        step,
        reason,
        stats: StepStats {
            wall_time_s: start.elapsed().as_secs_f64(),
            ..stats.clone()
        },
    };
    let mut cur = sol.clone();
    for r in 0..config.refinements {
        let op = match FdOperator::new(model, &cur, x, t, config.fd_step) {
            Ok(op) => op,
            Err(e) => return Err(fail(e.to_string(), &stats)),
        };
        let b: Vec<f64> = op.base_residual().iter().map(|v| -v).collect();
        let nb = norm2(&b);
        if r == 0 {
            stats.residual_before = nb;
        }
        if !nb.is_finite() || nb > config.divergence_threshold {
            return Err(fail(format!("residual norm {nb:e} diverged"), &stats));
        }
        let factors = if config.preconditioning {
            match factorize_at(model, &cur, x, &op) {
                Ok(f) => Some(f),
                Err(e) => return Err(fail(e.to_string(), &stats)),
            }
        } else {
            None
        };
        let pc = factors.as_ref().map(|f| f as &dyn Preconditioner);
        let (du, rep) = match gmres(&op, &b, config.gmres_tol, max_iter(config, cur.len()), pc) {
            Ok(v) => v,
            Err(e) => return Err(fail(e.to_string(), &stats)),
        };
        stats.gmres_per_refinement.push(rep.iterations);
        stats.gmres_converged &= rep.converged;
        for (u, d) in cur.as_mut_slice().iter_mut().zip(&du) {
            *u += d;
        }
    }
    stats.p = cur.p();
    let after = evaluate_f(model, &cur, x, t).map(|f| norm2(&f));
    match after {
        Ok(v) => stats.residual_after = v,
        Err(e) => return Err(fail(e.to_string(), &stats)),
    }
    if !stats.residual_after.is_finite() || stats.residual_after > config.divergence_threshold {
        let msg = format!("residual norm {:e} diverged", stats.residual_after);
        return Err(fail(msg, &stats));
    }
    if !(cur.p() > 0.0) {
        let msg = format!("horizon length became non-positive ({})", cur.p());
        return Err(fail(msg, &stats));
    }
    stats.wall_time_s = start.elapsed().as_secs_f64();
    Ok((cur, stats))
}

fn control_record(
    model: &dyn ModelDefinition,
    sol: &HorizonSolution,
    stats: StepStats,
) -> ControlRecord {
    let computed = sol.u(0).to_vec();
    let mut applied = computed.clone();
    model.clamp_control(&mut applied);
    ControlRecord {
        applied,
        computed,
        dummy: sol.ud(0).to_vec(),
        stats,
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Runs the closed loop from `config.x0` at `t_0 = 0`.
pub fn simulate(config: &MpcConfig) -> Result<Trajectory, MpcError> {
    config.validate()?;
    let model = config.model.build()?;
    let model = model.as_ref();
    let target = config.model.target();
    let t0 = 0.0;
    let mut x = config.x0.to_vec();
    let mut traj = Trajectory::default();
    if config.steps == 0 {
        traj.dt = config.dt.unwrap_or(0.0);
        traj.samples.push(Sample {
            step: 0,
            t: t0,
            state: x,
            control: None,
        });
        return Ok(traj);
    }

    let start = Instant::now();
    let (mut sol, cold) = cold_start(model, config, &x, t0)?;
    let dt = config.dt.unwrap_or(sol.p() / config.steps as f64);
    traj.dt = dt;
    let stats0 = StepStats {
        step: 0,
        residual_before: cold.initial_residual,
        residual_after: cold.final_residual,
        gmres_per_refinement: vec![cold.gmres_iterations],
        gmres_converged: true,
        p: sol.p(),
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    let mut record = control_record(model, &sol, stats0);

    for j in 1..=config.steps {
        let applied = record.applied.clone();
        traj.samples.push(Sample {
            step: j - 1,
            t: t0 + (j - 1) as f64 * dt,
            state: x.clone(),
            control: Some(record),
        });
        let f = model.dynamics(0.0, &x, &applied, 1.0);
        for (xi, fi) in x.iter_mut().zip(&f) {
            *xi += dt * fi;
        }
        let t = t0 + j as f64 * dt;
        let final_sample = Sample {
            step: j,
            t,
            state: x.clone(),
            control: None,
        };
        if j == config.steps {
            traj.samples.push(final_sample);
            break;
        }
        if sol.p() <= 2.0 * dt {
            traj.samples.push(final_sample);
            traj.stopped_early = true;
            let miss = distance(&x, &target);
            if miss <= config.terminal_radius {
                return Ok(traj);
            }
            let failure = StepFailure {
                step: j,
                reason: format!(
                    "horizon exhausted (p = {}) with the state {miss:e} away from the target",
                    sol.p()
                ),
                stats: StepStats {
                    step: j,
                    residual_before: f64::NAN,
                    residual_after: f64::NAN,
                    gmres_per_refinement: Vec::new(),
                    gmres_converged: false,
                    p: sol.p(),
                    wall_time_s: 0.0,
                },
            };
            return Err(MpcError::Step {
                failure,
                partial: Box::new(traj),
            });
        }
        let warm = if config.shifting {
            shift_horizon(&sol, dt)?
        } else {
            sol.clone()
        };
        match newton_refine(model, &warm, &x, t, j, config) {
            Ok((next, stats)) => {
                sol = next;
                record = control_record(model, &sol, stats);
            }
            Err(failure) => {
                traj.samples.push(final_sample);
                return Err(MpcError::Step {
                    failure,
                    partial: Box::new(traj),
                });
            }
        }
    }
    Ok(traj)
}
