//! Matrix-free Newton-Krylov linear algebra.
//!
//! [`FdOperator`] replaces the Jacobian-vector product `F_U·V` by a forward
//! difference of the residual around a frozen base point, so the Jacobian is
//! never formed. [`gmres`] solves the resulting linear system with optional
//! left preconditioning; [`dense_direct_solve`] materializes the operator
//! column by column and is used as a reference.

use std::cell::Cell;

use crate::error::{Result, SolverError};
use crate::linalg::{axpy, dot, DenseMatrix, LuFactors};
use crate::ocp::{evaluate_f, norm2, HorizonSolution, ModelDefinition};

pub const DEFAULT_FD_STEP: f64 = 1e-8;
pub const DEFAULT_GMRES_TOL: f64 = 1e-6;
/// Largest operator dimension [`dense_direct_solve`] will materialize.
pub const DENSE_LIMIT: usize = 2000;

pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, v: &[f64]) -> Result<Vec<f64>>;
}

/// Application of `M⁻¹` for a preconditioner `M`.
pub trait Preconditioner {
    fn apply_inverse(&self, r: &[f64]) -> Vec<f64>;
}

impl LinearOperator for DenseMatrix {
    fn dim(&self) -> usize {
        self.cols()
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        Ok(self.matvec(v))
    }
}

impl Preconditioner for LuFactors {
    fn apply_inverse(&self, r: &[f64]) -> Vec<f64> {
        self.solve(r)
    }
}

/// `a(V) = (F(U⁰ + hV) − F(U⁰)) / h` with the base residual cached.
pub struct FdOperator<'a> {
    model: &'a dyn ModelDefinition,
    base: HorizonSolution,
    base_residual: Vec<f64>,
    x_t: Vec<f64>,
    t: f64,
    h: f64,
    evaluations: Cell<usize>,
}

impl<'a> FdOperator<'a> {
    pub fn new(
        model: &'a dyn ModelDefinition,
        base: &HorizonSolution,
        x_t: &[f64],
        t: f64,
        h: f64,
    ) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(SolverError::Config(format!(
                "finite-difference step must be positive, got {h}"
            )));
        }
        let base_residual = evaluate_f(model, base, x_t, t)?;
        if base_residual.iter().any(|v| !v.is_finite()) {
            return Err(SolverError::OperatorDivergence);
        }
        Ok(Self {
            model,
            base: base.clone(),
            base_residual,
            x_t: x_t.to_vec(),
            t,
            h,
            evaluations: Cell::new(0),
        })
    }

    /// `F(U⁰, x_t, t)`.
    pub fn base_residual(&self) -> &[f64] {
        &self.base_residual
    }

    pub fn base(&self) -> &HorizonSolution {
        &self.base
    }

    pub fn step(&self) -> f64 {
        self.h
    }

    /// Residual evaluations performed by [`LinearOperator::apply`] so far.
    pub fn evaluations(&self) -> usize {
        self.evaluations.get()
    }
}

impl LinearOperator for FdOperator<'_> {
    fn dim(&self) -> usize {
        self.base.len()
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(SolverError::Dimension {
                what: "operator argument",
                expected: self.dim(),
                got: v.len(),
            });
        }
        let mut shifted = self.base.clone();
        axpy(self.h, v, shifted.as_mut_slice());
        self.evaluations.set(self.evaluations.get() + 1);
        let f = evaluate_f(self.model, &shifted, &self.x_t, self.t).map_err(|e| match e {
            SolverError::StateDivergence { .. } | SolverError::CostateDivergence { .. } => {
                SolverError::OperatorDivergence
            }
            other => other,
        })?;
        let out: Vec<f64> = f
            .iter()
            .zip(&self.base_residual)
            .map(|(a, b)| (a - b) / self.h)
            .collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(SolverError::OperatorDivergence);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmresReport {
    pub iterations: usize,
    /// Final residual norm, measured after preconditioning.
    pub residual_norm: f64,
    pub converged: bool,
    pub basis_size: usize,
    /// Residual norm estimate after each iteration, starting with `‖Pb‖`.
    pub history: Vec<f64>,
}

/// Full-memory GMRES from a zero initial guess.
///
/// With a preconditioner the system `M⁻¹A x = M⁻¹b` is solved and the
/// tolerance applies to `‖M⁻¹(b − Ax)‖₂`. Reaching `max_iter` is not an
/// error: the best iterate is returned with `converged = false`.
pub fn gmres(
    op: &dyn LinearOperator,
    b: &[f64],
    tol: f64,
    max_iter: usize,
    precond: Option<&dyn Preconditioner>,
) -> Result<(Vec<f64>, GmresReport)> {
    let n = op.dim();
    if b.len() != n {
        return Err(SolverError::Dimension {
            what: "right-hand side",
            expected: n,
            got: b.len(),
        });
    }
    if !(tol > 0.0) || max_iter == 0 {
        return Err(SolverError::Config(
            "gmres needs tol > 0 and max_iter >= 1".into(),
        ));
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(SolverError::OperatorDivergence);
    }
    let apply_precond = |r: Vec<f64>| match precond {
        Some(p) => p.apply_inverse(&r),
        None => r,
    };

    let r0 = apply_precond(b.to_vec());
    let beta = norm2(&r0);
    let mut history = vec![beta];
    if !beta.is_finite() {
        return Err(SolverError::OperatorDivergence);
    }
    if beta <= tol {
        return Ok((
            vec![0.0; n],
            GmresReport {
                iterations: 0,
                residual_norm: beta,
                converged: true,
                basis_size: 0,
                history,
            },
        ));
    }

    let mut basis: Vec<Vec<f64>> = vec![r0.iter().map(|v| v / beta).collect()];
    // Columns of the rotated Hessenberg matrix.
    let mut hess: Vec<Vec<f64>> = Vec::new();
    let mut cs: Vec<f64> = Vec::new();
    let mut sn: Vec<f64> = Vec::new();
    let mut g = vec![beta];
    let mut residual = beta;
    let mut converged = false;

    for j in 0..max_iter {
        let mut w = apply_precond(op.apply(&basis[j])?);
        if w.iter().any(|v| !v.is_finite()) {
            return Err(SolverError::OperatorDivergence);
        }
        let w_norm0 = norm2(&w);
        let mut col = vec![0.0; j + 2];
        // Modified Gram-Schmidt with one reorthogonalization pass.
        for _ in 0..2 {
            for (i, v) in basis.iter().enumerate() {
                let c = dot(&w, v);
                col[i] += c;
                axpy(-c, v, &mut w);
            }
        }
        let h_next = norm2(&w);
        col[j + 1] = h_next;

        for i in 0..j {
            let (a, b) = (col[i], col[i + 1]);
            col[i] = cs[i] * a + sn[i] * b;
            col[i + 1] = -sn[i] * a + cs[i] * b;
        }
        let (a, b) = (col[j], col[j + 1]);
        let r = a.hypot(b);
        let (c, s) = if r == 0.0 { (1.0, 0.0) } else { (a / r, b / r) };
        col[j] = r;
        col[j + 1] = 0.0;
        cs.push(c);
        sn.push(s);
        g.push(-s * g[j]);
        g[j] *= c;
        hess.push(col);

        residual = g[j + 1].abs();
        history.push(residual);
        let breakdown = h_next <= 1e-14 * w_norm0.max(f64::MIN_POSITIVE);
        if residual <= tol {
            converged = true;
        }
        if converged || breakdown || j + 1 == max_iter {
            break;
        }
        basis.push(w.iter().map(|v| v / h_next).collect());
    }

    let k = hess.len();
    let mut y = vec![0.0; k];
    for i in (0..k).rev() {
        let s: f64 = (i + 1..k).map(|m| hess[m][i] * y[m]).sum();
        y[i] = if hess[i][i] != 0.0 {
            (g[i] - s) / hess[i][i]
        } else {
            0.0
        };
    }
    let mut x = vec![0.0; n];
    for (yi, v) in y.iter().zip(&basis) {
        axpy(*yi, v, &mut x);
    }
    Ok((
        x,
        GmresReport {
            iterations: k,
            residual_norm: residual,
            converged,
            basis_size: basis.len(),
            history,
        },
    ))
}

/// Forms the operator matrix column by column from `op(e_k)`.
pub fn materialize(op: &dyn LinearOperator) -> Result<DenseMatrix> {
    let n = op.dim();
    if n > DENSE_LIMIT {
        return Err(SolverError::TooLarge {
            dim: n,
            limit: DENSE_LIMIT,
        });
    }
    let mut cols = Vec::with_capacity(n);
    let mut e = vec![0.0; n];
    for k in 0..n {
        e[k] = 1.0;
        cols.push(op.apply(&e)?);
        e[k] = 0.0;
    }
    Ok(DenseMatrix::from_columns(n, &cols))
}

/// Gaussian elimination with partial pivoting on the materialized operator.
pub fn dense_direct_solve(op: &dyn LinearOperator, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != op.dim() {
        return Err(SolverError::Dimension {
            what: "right-hand side",
            expected: op.dim(),
            got: b.len(),
        });
    }
    let a = materialize(op)?;
    Ok(LuFactors::new(&a)?.solve(b))
}
