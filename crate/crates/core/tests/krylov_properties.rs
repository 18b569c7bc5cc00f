mod common;

use common::{central_jacobian, converged, m1, m2, rel_err, X0};
use nkmpc::krylov::{dense_direct_solve, materialize, DEFAULT_FD_STEP};
use nkmpc::linalg::DenseMatrix;
use nkmpc::{gmres, FdOperator, ModelDefinition};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(n: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    let data = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    DenseMatrix::from_row_major(n, n, data)
}

fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    let a = random_matrix(n, rng);
    let mut m = a.matmul(&a.transpose());
    for i in 0..n {
        m[(i, i)] += 0.1;
    }
    m
}

/// `Q diag(d) Qᵀ` with eigenvalues of both signs, `|d| ∈ [0.2, 5]`.
fn random_indefinite(n: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    let a = random_matrix(n, rng);
    // Gram-Schmidt on the columns of `a`.
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(n);
    for j in 0..n {
        let mut v: Vec<f64> = (0..n).map(|i| a[(i, j)]).collect();
        for _ in 0..2 {
            for w in &q {
                let d: f64 = v.iter().zip(w).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(w).for_each(|(x, y)| *x -= d * y);
            }
        }
        let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        q.push(v.into_iter().map(|x| x / nv).collect());
    }
    let qm = DenseMatrix::from_columns(n, &q);
    let mut d = DenseMatrix::zeros(n, n);
    for i in 0..n {
        let s = if i % 2 == 0 { 1.0 } else { -1.0 };
        d[(i, i)] = s * rng.gen_range(0.2..5.0);
    }
    qm.matmul(&d).matmul(&qm.transpose())
}

fn check_against_dense(a: &DenseMatrix, rng: &mut ChaCha8Rng) -> Result<(), TestCaseError> {
    let n = a.rows();
    let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let (x, rep) = gmres(a, &b, 1e-10, n, None).unwrap();
    let direct = dense_direct_solve(a, &b).unwrap();
    prop_assert!(rep.converged);
    let err = rel_err(&x, &direct);
    prop_assert!(err <= 1e-6, "relative error {err:e}");
    for w in rep.history.windows(2) {
        prop_assert!(w[1] <= w[0] * (1.0 + 1e-12), "history increased: {:?}", w);
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gmres_matches_dense_on_spd(n in 1usize..=60, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_spd(n, &mut rng);
        check_against_dense(&a, &mut rng)?;
    }

    #[test]
    fn gmres_matches_dense_on_symmetric_indefinite(n in 2usize..=60, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_indefinite(n, &mut rng);
        check_against_dense(&a, &mut rng)?;
    }
}

fn fd_vs_central(model: &dyn ModelDefinition, n: usize) {
    let sol = converged(model, n);
    let op = FdOperator::new(model, &sol, &X0, 0.0, DEFAULT_FD_STEP).unwrap();
    let fd = materialize(&op).unwrap();
    let oracle = central_jacobian(model, &sol, &X0, 1e-5);
    for j in 0..sol.len() {
        let a: Vec<f64> = (0..sol.len()).map(|i| fd[(i, j)]).collect();
        let b: Vec<f64> = (0..sol.len()).map(|i| oracle[(i, j)]).collect();
        let err = rel_err(&a, &b);
        assert!(err <= 1e-5, "column {j}: relative error {err:e}");
    }
}

#[test]
fn fd_columns_match_central_differences_model1() {
    fd_vs_central(&m1(), 20);
}

#[test]
fn fd_columns_match_central_differences_model2() {
    fd_vs_central(&m2(), 30);
}

fn asymmetry(model: &dyn ModelDefinition, n: usize) -> f64 {
    let sol = converged(model, n);
    let op = FdOperator::new(model, &sol, &X0, 0.0, DEFAULT_FD_STEP).unwrap();
    let a = materialize(&op).unwrap();
    a.distance(&a.transpose()) / a.frobenius()
}

#[test]
fn jacobian_is_symmetric_at_converged_points() {
    let s1 = asymmetry(&m1(), 20);
    let s2 = asymmetry(&m2(), 70);
    assert!(s1 <= 1e-4, "model 1 asymmetry {s1:e}");
    assert!(s2 <= 1e-4, "model 2 asymmetry {s2:e}");
}

#[test]
fn fd_operator_is_linear_to_first_order() {
    let m = m1();
    let sol = converged(&m, 20);
    let op = FdOperator::new(&m, &sol, &X0, 0.0, DEFAULT_FD_STEP).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let v: Vec<f64> = (0..sol.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let w: Vec<f64> = (0..sol.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let sum: Vec<f64> = v.iter().zip(&w).map(|(a, b)| a + b).collect();
    use nkmpc::LinearOperator;
    let (av, aw, asum) = (
        op.apply(&v).unwrap(),
        op.apply(&w).unwrap(),
        op.apply(&sum).unwrap(),
    );
    let lin: Vec<f64> = av.iter().zip(&aw).map(|(a, b)| a + b).collect();
    assert!(rel_err(&asum, &lin) < 1e-5);
}
