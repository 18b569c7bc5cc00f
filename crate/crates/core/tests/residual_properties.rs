mod common;

use common::{lagrangian_gradient, m1, m2, random_solution, rel_err, Lagrangian, X0};
use nkmpc::models::{DEFAULT_ALPHA1, DEFAULT_ALPHA2, DEFAULT_WD, DEFAULT_XF};
use nkmpc::ocp::forward_recursion;
use nkmpc::{evaluate_f, HorizonSolution, ModelDefinition};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn model1_residual_is_lagrangian_gradient(n in 1usize..=5, seed in any::<u64>()) {
        let m = m1();
        let sol = random_solution(&m, n, &mut ChaCha8Rng::seed_from_u64(seed));
        let f = evaluate_f(&m, &sol, &X0, 0.0).unwrap();
        let kind = Lagrangian::Min { w_d: DEFAULT_WD, x_f: DEFAULT_XF };
        let g = lagrangian_gradient(kind, sol.as_slice(), X0, 1e-5);
        let err = rel_err(&f, &g);
        prop_assert!(err <= 1e-6, "relative error {err:e}");
    }

    #[test]
    fn model2_residual_is_lagrangian_gradient(n in 1usize..=5, seed in any::<u64>()) {
        let m = m2();
        let sol = random_solution(&m, n, &mut ChaCha8Rng::seed_from_u64(seed));
        let f = evaluate_f(&m, &sol, &X0, 0.0).unwrap();
        let kind = Lagrangian::Penalty {
            w_d: DEFAULT_WD,
            alpha1: DEFAULT_ALPHA1,
            alpha2: DEFAULT_ALPHA2,
            x_f: DEFAULT_XF,
        };
        let g = lagrangian_gradient(kind, sol.as_slice(), X0, 1e-5);
        let err = rel_err(&f, &g);
        prop_assert!(err <= 1e-6, "relative error {err:e}");
    }

    #[test]
    fn evaluation_is_bitwise_deterministic(n in 1usize..=30, seed in any::<u64>()) {
        let m = m2();
        let sol = random_solution(&m, n, &mut ChaCha8Rng::seed_from_u64(seed));
        let a = evaluate_f(&m, &sol, &X0, 0.0).unwrap();
        let b = evaluate_f(&m, &sol.clone(), &X0, 0.0).unwrap();
        prop_assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn constraint_row_matches_formula(n in 1usize..=40, seed in any::<u64>()) {
        for model in [&m1() as &dyn ModelDefinition, &m2()] {
            let sol = random_solution(model, n, &mut ChaCha8Rng::seed_from_u64(seed));
            let f = evaluate_f(model, &sol, &X0, 0.0).unwrap();
            let dtau = 1.0 / n as f64;
            for i in 0..n {
                let (u, ud) = (sol.u(i)[0], sol.ud(i)[0]);
                let want = dtau * (u * u + ud * ud - 1.0);
                prop_assert!((f[3 * i + 2] - want).abs() <= 1e-15 * (1.0 + want.abs()));
            }
        }
    }

    #[test]
    fn doubling_n_halves_stage_rows(n in 1usize..=20, u in -0.9f64..0.9, mu in 0.1f64..2.0, p in 0.5f64..3.0) {
        // With ν = 0 the Model 1 costates vanish, so every stage row depends
        // only on the frozen per-stage values and Δτ.
        let m = m1();
        let stage = [u, (1.0 - u * u).sqrt() * 0.9, mu];
        let a = HorizonSolution::uniform(m.dims(), n, &stage, &[0.0, 0.0], p).unwrap();
        let b = HorizonSolution::uniform(m.dims(), 2 * n, &stage, &[0.0, 0.0], p).unwrap();
        let fa = evaluate_f(&m, &a, &X0, 0.0).unwrap();
        let fb = evaluate_f(&m, &b, &X0, 0.0).unwrap();
        for k in 0..3 * n {
            prop_assert!((fb[k] - 0.5 * fa[k % 3]).abs() <= 1e-15 * fa[k % 3].abs().max(1e-300));
        }
    }

    #[test]
    fn models_share_dynamics(n in 1usize..=20, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_solution(&m1(), n, &mut rng);
        let mut b = HorizonSolution::uniform(m2().dims(), n, &[0.0; 3], &[], a.p()).unwrap();
        for i in 0..n {
            b.stage_mut(i).copy_from_slice(a.stage(i));
        }
        let xa = forward_recursion(&m1(), &X0, &a).unwrap();
        let xb = forward_recursion(&m2(), &X0, &b).unwrap();
        prop_assert_eq!(xa, xb);
    }
}

#[test]
fn stage_rows_vanish_pointwise_as_n_grows() {
    let m = m1();
    let stage = [0.3, 0.8, 0.7];
    let rows: Vec<f64> = [10, 100, 1000]
        .iter()
        .map(|&n| {
            let s = HorizonSolution::uniform(m.dims(), n, &stage, &[0.0, 0.0], 2.0).unwrap();
            max_abs(&evaluate_f(&m, &s, &X0, 0.0).unwrap()[..3])
        })
        .collect();
    assert!(
        rows[1] < rows[0] / 9.99 && rows[2] < rows[1] / 9.99,
        "{rows:?}"
    );
}
