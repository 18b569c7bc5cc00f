#![allow(dead_code)]

use nkmpc::linalg::DenseMatrix;
use nkmpc::mpc::{cold_start, MpcConfig};
use nkmpc::{
    evaluate_f, HorizonSolution, Model1, Model1Params, Model2, Model2Params, ModelDefinition,
};
use rand::Rng;

pub const X0: [f64; 2] = [-1.0, 0.0];

pub fn m1() -> Model1 {
    Model1::new(Model1Params::default()).unwrap()
}

pub fn m2() -> Model2 {
    Model2::new(Model2Params::default()).unwrap()
}

pub fn converged(model: &dyn ModelDefinition, n: usize) -> HorizonSolution {
    let config = MpcConfig {
        horizon: n,
        ..Default::default()
    };
    cold_start(model, &config, &X0, 0.0).unwrap().0
}

/// Random iterate with `u_d > 0`, `μ` bounded away from zero and `p ∈ [0.5, 3]`.
pub fn random_solution<R: Rng>(
    model: &dyn ModelDefinition,
    n: usize,
    rng: &mut R,
) -> HorizonSolution {
    let d = model.dims();
    let mut sol =
        HorizonSolution::uniform(d, n, &[0.0, 1.0, 1.0], &vec![0.0; d.n_psi], 1.0).unwrap();
    for i in 0..n {
        let u: f64 = rng.gen_range(-0.95..0.95);
        let s = sol.stage_mut(i);
        s[0] = u;
        s[1] = (1.0 - u * u).sqrt() * rng.gen_range(0.8..1.2);
        s[2] = rng.gen_range(0.1..1.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    }
    for v in sol.nu_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    sol.set_p(rng.gen_range(0.5..3.0));
    sol
}

/// Dense Jacobian of `F` by central differences.
pub fn central_jacobian(
    model: &dyn ModelDefinition,
    sol: &HorizonSolution,
    x0: &[f64],
    h: f64,
) -> DenseMatrix {
    let n = sol.len();
    let cols: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            let mut plus = sol.clone();
            plus.as_mut_slice()[k] += h;
            let mut minus = sol.clone();
            minus.as_mut_slice()[k] -= h;
            let fp = evaluate_f(model, &plus, x0, 0.0).unwrap();
            let fm = evaluate_f(model, &minus, x0, 0.0).unwrap();
            fp.iter()
                .zip(&fm)
                .map(|(a, b)| (a - b) / (2.0 * h))
                .collect()
        })
        .collect();
    DenseMatrix::from_columns(n, &cols)
}

/// Which discrete Lagrangian to evaluate.
#[derive(Clone, Copy)]
pub enum Lagrangian {
    Min {
        w_d: f64,
        x_f: [f64; 2],
    },
    Penalty {
        w_d: f64,
        alpha1: f64,
        alpha2: f64,
        x_f: [f64; 2],
    },
}

/// Discrete Lagrangian with the dynamics eliminated, written out by hand for
/// the double integrator: `x_{i+1} = x_i + Δτ·p·(y_i, u_i)`.
pub fn lagrangian(kind: Lagrangian, u: &[f64], x0: [f64; 2]) -> f64 {
    let n = (u.len() - 1 - nu_len(kind)) / 3;
    let dtau = 1.0 / n as f64;
    let p = u[u.len() - 1];
    let (mut x, mut y) = (x0[0], x0[1]);
    let mut total = p;
    for i in 0..n {
        let (ui, udi, mui) = (u[3 * i], u[3 * i + 1], u[3 * i + 2]);
        let c = ui * ui + udi * udi - 1.0;
        let run = match kind {
            Lagrangian::Min { w_d, .. } => -w_d * udi * p,
            Lagrangian::Penalty { w_d, alpha2, .. } => -w_d * udi * p + 0.5 * alpha2 * p * ui * ui,
        };
        total += dtau * (run + mui * c);
        let (xn, yn) = (x + dtau * p * y, y + dtau * p * ui);
        x = xn;
        y = yn;
    }
    match kind {
        Lagrangian::Min { x_f, .. } => {
            total + u[3 * n] * (x - x_f[0]) + u[3 * n + 1] * (y - x_f[1])
        }
        Lagrangian::Penalty { alpha1, x_f, .. } => {
            total + 0.5 * alpha1 * ((x - x_f[0]).powi(2) + (y - x_f[1]).powi(2))
        }
    }
}

fn nu_len(kind: Lagrangian) -> usize {
    match kind {
        Lagrangian::Min { .. } => 2,
        Lagrangian::Penalty { .. } => 0,
    }
}

pub fn lagrangian_gradient(kind: Lagrangian, u: &[f64], x0: [f64; 2], h: f64) -> Vec<f64> {
    (0..u.len())
        .map(|k| {
            let mut plus = u.to_vec();
            plus[k] += h;
            let mut minus = u.to_vec();
            minus[k] -= h;
            (lagrangian(kind, &plus, x0) - lagrangian(kind, &minus, x0)) / (2.0 * h)
        })
        .collect()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    nkmpc::linalg::relative_error(a, b)
}
