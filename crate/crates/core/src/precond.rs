//! Bordered block-diagonal preconditioner.
//!
//! ```text
//!     M = | M11  M12 |      M11 = diag(B_0, …, B_{N-1})
//!         | M21  M22 |      M21 = M12ᵀ
//! ```
//!
//! Each stage block `B_i = Δτ·∇²_{(u,u_d,μ)} H` is computed analytically. The
//! `l = n_psi + 1` border columns are probed with the finite-difference
//! operator on the trailing unit vectors. The factorization
//!
//! ```text
//!     M = | I            0 | | M11  M12 |     S22 = M22 − M21 M11⁻¹ M12
//!         | M21 M11⁻¹    I | | 0    S22 |
//! ```
//!
//! and every application of `M⁻¹` touch each stage block a fixed number of
//! times, so setup, factorization, application and storage are all `O(N)`.

use crate::error::{Result, SolverError};
use crate::krylov::{FdOperator, LinearOperator, Preconditioner};
use crate::linalg::{DenseMatrix, LuFactors};
use crate::ocp::{recursions, HorizonSolution, ModelDefinition, StagePoint};

/// Stage blocks with `|det|` below this are rejected.
pub const BLOCK_DET_MIN: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct SparsePreconditioner {
    n: usize,
    bs: usize,
    l: usize,
    /// `n` row-major `bs × bs` blocks.
    blocks: Vec<f64>,
    /// `M12`, row-major `(n·bs) × l`.
    border: Vec<f64>,
    /// `M22`, row-major `l × l`.
    corner: Vec<f64>,
}

impl SparsePreconditioner {
    pub fn from_parts(
        n: usize,
        bs: usize,
        l: usize,
        blocks: Vec<f64>,
        border: Vec<f64>,
        corner: Vec<f64>,
    ) -> Result<Self> {
        for (what, expected, got) in [
            ("stage blocks", n * bs * bs, blocks.len()),
            ("border columns", n * bs * l, border.len()),
            ("corner block", l * l, corner.len()),
        ] {
            if expected != got {
                return Err(SolverError::Dimension {
                    what,
                    expected,
                    got,
                });
            }
        }
        Ok(Self {
            n,
            bs,
            l,
            blocks,
            border,
            corner,
        })
    }

    /// Builds `M` at the linearization point of `op`.
    pub fn assemble(
        model: &dyn ModelDefinition,
        sol: &HorizonSolution,
        x_t: &[f64],
        op: &FdOperator<'_>,
    ) -> Result<Self> {
        let d = model.dims();
        let n = sol.horizon();
        let bs = d.stage_width();
        let l = d.border_width();
        let dtau = sol.dtau();
        let buffers = recursions(model, x_t, sol)?;

        let mut blocks = Vec::with_capacity(n * bs * bs);
        for i in 0..n {
            let s = StagePoint {
                tau: i as f64 * dtau,
                x: buffers.state(i),
                lambda: buffers.costate(i + 1),
                u: sol.u(i),
                ud: sol.ud(i),
                mu: sol.mu(i),
                p: sol.p(),
            };
            blocks.extend(model.stage_hessian(&s).into_iter().map(|v| v * dtau));
        }

        let m = sol.len();
        let rows = n * bs;
        let mut border = vec![0.0; rows * l];
        let mut corner = vec![0.0; l * l];
        let mut e = vec![0.0; m];
        for c in 0..l {
            e[rows + c] = 1.0;
            let col = op.apply(&e)?;
            e[rows + c] = 0.0;
            for r in 0..rows {
                border[r * l + c] = col[r];
            }
            for r in 0..l {
                corner[r * l + c] = col[rows + r];
            }
        }
        for r in 0..l {
            for c in r + 1..l {
                let avg = 0.5 * (corner[r * l + c] + corner[c * l + r]);
                corner[r * l + c] = avg;
                corner[c * l + r] = avg;
            }
        }
        let m = Self::from_parts(n, bs, l, blocks, border, corner)?;
        m.check_blocks()?;
        Ok(m)
    }

    fn check_blocks(&self) -> Result<()> {
        for i in 0..self.n {
            let det = block_det(self.block(i), self.bs);
            if !(det.abs() >= BLOCK_DET_MIN) {
                return Err(SolverError::NearSingularBlock { stage: i, det });
            }
        }
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.n
    }

    pub fn block_size(&self) -> usize {
        self.bs
    }

    pub fn border_width(&self) -> usize {
        self.l
    }

    pub fn dim(&self) -> usize {
        self.n * self.bs + self.l
    }

    pub fn block(&self, i: usize) -> &[f64] {
        let b2 = self.bs * self.bs;
        &self.blocks[i * b2..(i + 1) * b2]
    }

    pub fn border(&self) -> &[f64] {
        &self.border
    }

    pub fn corner(&self) -> &[f64] {
        &self.corner
    }

    /// `M·v` in `O(N)`.
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        let (bs, l) = (self.bs, self.l);
        let rows = self.n * bs;
        assert_eq!(v.len(), rows + l);
        let (v1, v2) = v.split_at(rows);
        let mut out = vec![0.0; rows + l];
        for i in 0..self.n {
            let b = self.block(i);
            for r in 0..bs {
                let row = i * bs + r;
                let mut s: f64 = (0..bs).map(|c| b[r * bs + c] * v1[i * bs + c]).sum();
                s += (0..l)
                    .map(|c| self.border[row * l + c] * v2[c])
                    .sum::<f64>();
                out[row] = s;
                for c in 0..l {
                    out[rows + c] += self.border[row * l + c] * v1[row];
                }
            }
        }
        for r in 0..l {
            out[rows + r] += (0..l).map(|c| self.corner[r * l + c] * v2[c]).sum::<f64>();
        }
        out
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let (bs, l) = (self.bs, self.l);
        let rows = self.n * bs;
        let mut m = DenseMatrix::zeros(rows + l, rows + l);
        for i in 0..self.n {
            let b = self.block(i);
            for r in 0..bs {
                for c in 0..bs {
                    m[(i * bs + r, i * bs + c)] = b[r * bs + c];
                }
            }
        }
        for r in 0..rows {
            for c in 0..l {
                m[(r, rows + c)] = self.border[r * l + c];
                m[(rows + c, r)] = self.border[r * l + c];
            }
        }
        for r in 0..l {
            for c in 0..l {
                m[(rows + r, rows + c)] = self.corner[r * l + c];
            }
        }
        m
    }

    pub fn factorize(&self) -> Result<PreconditionerFactors> {
        let (n, bs, l) = (self.n, self.bs, self.l);
        let b2 = bs * bs;
        let rows = n * bs;
        let mut flops: u64 = 0;

        let mut block_inv = Vec::with_capacity(n * b2);
        for i in 0..n {
            let (inv, det) = invert_block(self.block(i), bs)?;
            if !(det.abs() >= BLOCK_DET_MIN) {
                return Err(SolverError::NearSingularBlock { stage: i, det });
            }
            block_inv.extend(inv);
        }
        flops += (n * inversion_flops(bs)) as u64;

        // Strip W = M11⁻¹ M12.
        let mut strip = vec![0.0; rows * l];
        for i in 0..n {
            let inv = &block_inv[i * b2..(i + 1) * b2];
            for r in 0..bs {
                for c in 0..l {
                    strip[(i * bs + r) * l + c] = (0..bs)
                        .map(|k| inv[r * bs + k] * self.border[(i * bs + k) * l + c])
                        .sum();
                }
            }
        }
        flops += (2 * rows * bs * l) as u64;

        // S22 = M22 − M12ᵀ W.
        let mut schur = self.corner.clone();
        for r in 0..rows {
            for a in 0..l {
                let m = self.border[r * l + a];
                for b in 0..l {
                    schur[a * l + b] -= m * strip[r * l + b];
                }
            }
        }
        flops += (2 * rows * l * l) as u64;
        let schur_lu = LuFactors::new(&DenseMatrix::from_row_major(l, l, schur.clone())).map_err(
            |e| match e {
                SolverError::Singular { pivot } => SolverError::SingularSchur { pivot },
                other => other,
            },
        )?;
        flops += (2 * l * l * l / 3 + l * l) as u64;

        Ok(PreconditionerFactors {
            n,
            bs,
            l,
            blocks: self.blocks.clone(),
            block_inv,
            border: self.border.clone(),
            strip,
            schur,
            schur_lu,
            flops,
        })
    }
}

fn inversion_flops(bs: usize) -> usize {
    if bs == 3 {
        // 9 cofactors, determinant, scaling.
        9 * 3 + 5 + 9
    } else {
        2 * bs * bs * bs
    }
}

fn block_det(b: &[f64], bs: usize) -> f64 {
    if bs == 3 {
        det3(b)
    } else {
        LuFactors::new(&DenseMatrix::from_row_major(bs, bs, b.to_vec()))
            .map(|lu| lu.determinant())
            .unwrap_or(0.0)
    }
}

fn det3(b: &[f64]) -> f64 {
    b[0] * (b[4] * b[8] - b[5] * b[7]) - b[1] * (b[3] * b[8] - b[5] * b[6])
        + b[2] * (b[3] * b[7] - b[4] * b[6])
}

/// Returns the inverse and determinant of a row-major block.
fn invert_block(b: &[f64], bs: usize) -> Result<(Vec<f64>, f64)> {
    if bs == 3 {
        let det = det3(b);
        let cof = [
            b[4] * b[8] - b[5] * b[7],
            b[2] * b[7] - b[1] * b[8],
            b[1] * b[5] - b[2] * b[4],
            b[5] * b[6] - b[3] * b[8],
            b[0] * b[8] - b[2] * b[6],
            b[2] * b[3] - b[0] * b[5],
            b[3] * b[7] - b[4] * b[6],
            b[1] * b[6] - b[0] * b[7],
            b[0] * b[4] - b[1] * b[3],
        ];
        return Ok((cof.iter().map(|c| c / det).collect(), det));
    }
    let lu = LuFactors::new(&DenseMatrix::from_row_major(bs, bs, b.to_vec())).map_err(|_| {
        SolverError::NearSingularBlock {
            stage: usize::MAX,
            det: 0.0,
        }
    })?;
    let mut inv = vec![0.0; bs * bs];
    let mut e = vec![0.0; bs];
    for c in 0..bs {
        e[c] = 1.0;
        let col = lu.solve(&e);
        e[c] = 0.0;
        for r in 0..bs {
            inv[r * bs + c] = col[r];
        }
    }
    Ok((inv, lu.determinant()))
}

/// Block LU factors of a [`SparsePreconditioner`].
#[derive(Debug, Clone)]
pub struct PreconditionerFactors {
    n: usize,
    bs: usize,
    l: usize,
    blocks: Vec<f64>,
    block_inv: Vec<f64>,
    border: Vec<f64>,
    strip: Vec<f64>,
    schur: Vec<f64>,
    schur_lu: LuFactors,
    flops: u64,
}

impl PreconditionerFactors {
    pub fn dim(&self) -> usize {
        self.n * self.bs + self.l
    }

    /// Floating point operations spent in [`SparsePreconditioner::factorize`].
    pub fn factorization_flops(&self) -> u64 {
        self.flops
    }

    /// Floating point operations of one [`Preconditioner::apply_inverse`].
    pub fn apply_flops(&self) -> u64 {
        let rows = self.n * self.bs;
        (2 * rows * self.bs + 4 * rows * self.l + 2 * self.l * self.l + rows) as u64
    }

    /// Number of `f64` values held by the factors.
    pub fn memory_words(&self) -> usize {
        self.blocks.len()
            + self.block_inv.len()
            + self.border.len()
            + self.strip.len()
            + 2 * self.schur.len()
    }

    /// `S22` before its dense LU.
    pub fn schur_complement(&self) -> &[f64] {
        &self.schur
    }

    /// Dense `(L, U)` with `L = [[I, 0], [M21 M11⁻¹, I]]` and
    /// `U = [[M11, M12], [0, S22]]`.
    pub fn dense_factors(&self) -> (DenseMatrix, DenseMatrix) {
        let (n, bs, l) = (self.n, self.bs, self.l);
        let b2 = bs * bs;
        let rows = n * bs;
        let dim = rows + l;
        let mut lower = DenseMatrix::identity(dim);
        let mut upper = DenseMatrix::zeros(dim, dim);
        for i in 0..n {
            let blk = &self.blocks[i * b2..(i + 1) * b2];
            let inv = &self.block_inv[i * b2..(i + 1) * b2];
            for r in 0..bs {
                for c in 0..bs {
                    upper[(i * bs + r, i * bs + c)] = blk[r * bs + c];
                }
            }
            // (M21 M11⁻¹)[a, i·bs + c] = Σ_k M12[i·bs + k, a] · inv[k, c]
            for a in 0..l {
                for c in 0..bs {
                    lower[(rows + a, i * bs + c)] = (0..bs)
                        .map(|k| self.border[(i * bs + k) * l + a] * inv[k * bs + c])
                        .sum();
                }
            }
        }
        for r in 0..rows {
            for c in 0..l {
                upper[(r, rows + c)] = self.border[r * l + c];
            }
        }
        for r in 0..l {
            for c in 0..l {
                upper[(rows + r, rows + c)] = self.schur[r * l + c];
            }
        }
        (lower, upper)
    }
}

impl Preconditioner for PreconditionerFactors {
    fn apply_inverse(&self, r: &[f64]) -> Vec<f64> {
        let (n, bs, l) = (self.n, self.bs, self.l);
        let b2 = bs * bs;
        let rows = n * bs;
        assert_eq!(r.len(), rows + l, "preconditioner argument length");
        let (r1, r2) = r.split_at(rows);

        // z = M11⁻¹ r1
        let mut z = vec![0.0; rows];
        for i in 0..n {
            let inv = &self.block_inv[i * b2..(i + 1) * b2];
            for a in 0..bs {
                z[i * bs + a] = (0..bs).map(|k| inv[a * bs + k] * r1[i * bs + k]).sum();
            }
        }
        // y2 = r2 − M21 z, x2 = S22⁻¹ y2
        let mut y2 = r2.to_vec();
        for row in 0..rows {
            for a in 0..l {
                y2[a] -= self.border[row * l + a] * z[row];
            }
        }
        let x2 = self.schur_lu.solve(&y2);
        // x1 = z − W x2
        let mut out = z;
        for row in 0..rows {
            out[row] -= (0..l).map(|c| self.strip[row * l + c] * x2[c]).sum::<f64>();
        }
        out.extend(x2);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::relative_error;
    use crate::models::{Model1, Model1Params};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(rng: &mut ChaCha8Rng, n: usize, l: usize) -> SparsePreconditioner {
        let bs = 3;
        let mut blocks = Vec::new();
        for _ in 0..n {
            let mut b = [0.0; 9];
            for r in 0..3 {
                for c in r..3 {
                    let v = rng.gen_range(-0.5..0.5);
                    b[r * 3 + c] = v;
                    b[c * 3 + r] = v;
                }
                b[r * 3 + r] += 3.0;
            }
            blocks.extend(b);
        }
        let border = (0..n * bs * l).map(|_| rng.gen_range(-0.3..0.3)).collect();
        let mut corner = vec![0.0; l * l];
        for r in 0..l {
            for c in r..l {
                let v = rng.gen_range(-0.5..0.5);
                corner[r * l + c] = v;
                corner[c * l + r] = v;
            }
            corner[r * l + r] += 4.0;
        }
        SparsePreconditioner::from_parts(n, bs, l, blocks, border, corner).unwrap()
    }

    fn identity(n: usize, l: usize) -> SparsePreconditioner {
        let mut blocks = Vec::new();
        for _ in 0..n {
            blocks.extend([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        }
        let mut corner = vec![0.0; l * l];
        for r in 0..l {
            corner[r * l + r] = 1.0;
        }
        SparsePreconditioner::from_parts(n, 3, l, blocks, vec![0.0; n * 3 * l], corner).unwrap()
    }

    #[test]
    fn identity_round_trip() {
        let f = identity(4, 3).factorize().unwrap();
        let r: Vec<f64> = (0..15).map(|v| v as f64 - 7.0).collect();
        assert_eq!(f.apply_inverse(&r), r);
        let (lo, up) = f.dense_factors();
        assert_eq!(lo.matmul(&up), DenseMatrix::identity(15));
    }

    #[test]
    fn reconstruction_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = random_instance(&mut rng, 5, 3);
        let f = m.factorize().unwrap();
        let (lo, up) = f.dense_factors();
        let dense = m.to_dense();
        let rel = lo.matmul(&up).distance(&dense) / dense.frobenius();
        assert!(rel <= 1e-12, "rel = {rel}");
    }

    #[test]
    fn apply_inverse_matches_dense_elimination() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &(n, l) in &[(1, 1), (7, 3), (50, 3), (33, 1)] {
            let m = random_instance(&mut rng, n, l);
            let f = m.factorize().unwrap();
            let r: Vec<f64> = (0..m.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let dense = LuFactors::new(&m.to_dense()).unwrap().solve(&r);
            assert!(relative_error(&f.apply_inverse(&r), &dense) <= 1e-10);
            assert!(relative_error(&m.matvec(&r), &m.to_dense().matvec(&r)) <= 1e-14);
        }
    }

    #[test]
    fn model1_block_formula_and_determinant() {
        let m = Model1::new(Model1Params::default()).unwrap();
        // N = 1 gives Δτ = 1.
        let sol =
            HorizonSolution::uniform(m.dims(), 1, &[0.0, 1.0, 0.005], &[0.0, 0.0], 2.0).unwrap();
        let op = FdOperator::new(&m, &sol, &[-1.0, 0.0], 0.0, 1e-8).unwrap();
        let pc = SparsePreconditioner::assemble(&m, &sol, &[-1.0, 0.0], &op).unwrap();
        let expected = [0.01, 0.0, 0.0, 0.0, 0.01, 2.0, 0.0, 2.0, 0.0];
        for (a, b) in pc.block(0).iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(pc.border_width(), 3);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let n = rng.gen_range(1..40);
            let dtau = 1.0 / n as f64;
            let (u, ud, mu) = (
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(0.001..1.0),
            );
            let b: Vec<f64> = [mu, 0.0, u, 0.0, mu, ud, u, ud, 0.0]
                .iter()
                .map(|v| 2.0 * dtau * v)
                .collect();
            let expected = -(2.0 * dtau).powi(3) * mu * (u * u + ud * ud);
            assert!((det3(&b) - expected).abs() <= 1e-12 * expected.abs().max(1e-300));
        }
    }

    #[test]
    fn near_singular_block_is_rejected() {
        let m = Model1::new(Model1Params::default()).unwrap();
        let sol =
            HorizonSolution::uniform(m.dims(), 3, &[0.0, 1.0, 0.0], &[0.0, 0.0], 2.0).unwrap();
        let op = FdOperator::new(&m, &sol, &[-1.0, 0.0], 0.0, 1e-8).unwrap();
        match SparsePreconditioner::assemble(&m, &sol, &[-1.0, 0.0], &op) {
            Err(SolverError::NearSingularBlock { stage, .. }) => assert_eq!(stage, 0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn singular_schur_is_reported() {
        let mut m = identity(2, 1);
        m.corner[0] = 0.0;
        assert!(matches!(
            m.factorize(),
            Err(SolverError::SingularSchur { .. })
        ));
    }

    #[test]
    fn counters_grow_linearly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let small = random_instance(&mut rng, 100, 3).factorize().unwrap();
        let large = random_instance(&mut rng, 200, 3).factorize().unwrap();
        let ratio = large.factorization_flops() as f64 / small.factorization_flops() as f64;
        assert!((1.9..=2.1).contains(&ratio), "{ratio}");
        let ratio = large.memory_words() as f64 / small.memory_words() as f64;
        assert!((1.9..=2.1).contains(&ratio), "{ratio}");
    }

    #[test]
    fn generic_block_size_path() {
        let blocks = vec![2.0, 1.0, 1.0, 3.0, 4.0, 0.0, 0.0, 5.0];
        let m =
            SparsePreconditioner::from_parts(2, 2, 1, blocks, vec![0.1, 0.2, 0.3, 0.4], vec![6.0])
                .unwrap();
        let f = m.factorize().unwrap();
        let v = [1.0, -1.0, 0.5, 2.0, 0.25];
        let back = f.apply_inverse(&m.matvec(&v));
        assert!(relative_error(&back, &v) < 1e-13);
    }
}
