mod common;

use nkmpc::mpc::{simulate, MpcConfig};
use nkmpc::{Model2Params, ModelChoice, Trajectory};

fn model1_nominal() -> MpcConfig {
    MpcConfig {
        steps: 500,
        refinements: 2,
        ..Default::default()
    }
}

fn model2_nominal() -> MpcConfig {
    MpcConfig {
        model: ModelChoice::Model2(Model2Params::default()),
        horizon: 70,
        steps: 200,
        dt: Some(0.01),
        shifting: true,
        ..Default::default()
    }
}

fn check_clock(traj: &Trajectory, t_f: f64) {
    for s in &traj.samples {
        if let Some(c) = &s.control {
            if s.t <= 0.9 * t_f {
                let gap = (s.t + c.stats.p - t_f).abs();
                assert!(gap <= 0.1, "step {}: t + p misses t_f by {gap}", s.step);
            }
        }
    }
}

/// `|u| ≤ 1` after projection; before projection the dummy constraint is
/// violated by at most `‖F‖₂/Δτ`, and by at most `1e-4` on every step that
/// left the residual below `1e-4·Δτ`. Returns the number of steps where
/// the `1e-4` bound does not hold.
fn check_controls(traj: &Trajectory, dtau: f64) -> usize {
    let mut loose = 0;
    for c in traj.controls() {
        let u = c.applied[0];
        assert!(u.abs() <= 1.0, "step {}: |u| = {}", c.stats.step, u.abs());
        let (uc, ud) = (c.computed[0], c.dummy[0]);
        let g = (uc * uc + ud * ud - 1.0).abs();
        let res = c.stats.residual_after;
        assert!(
            g <= res / dtau * (1.0 + 1e-12),
            "step {}: constraint {g:e}, residual {res:e}",
            c.stats.step
        );
        if res <= 1e-4 * dtau {
            assert!(
                g <= 1e-4,
                "step {}: constraint residual {g:e}",
                c.stats.step
            );
        }
        loose += usize::from(g > 1e-4);
    }
    loose
}

#[test]
fn model1_nominal_tracks_remaining_time() {
    let traj = simulate(&model1_nominal()).unwrap();
    assert_eq!(traj.samples.len(), 501);
    assert_eq!(traj.controls().count(), 500);
    check_clock(&traj, 2.0);
}

#[test]
fn model2_nominal_tracks_remaining_time() {
    let traj = simulate(&model2_nominal()).unwrap();
    check_clock(&traj, 2.0);
    assert!(common::rel_err(traj.final_state().unwrap(), &[0.0, 0.0]) < 5e-2);
}

#[test]
fn applied_controls_are_admissible() {
    let loose1 = check_controls(&simulate(&model1_nominal()).unwrap(), 1.0 / 20.0);
    let loose2 = check_controls(&simulate(&model2_nominal()).unwrap(), 1.0 / 70.0);
    assert!(
        loose1 <= 25 && loose2 <= 40,
        "{loose1} and {loose2} loose steps"
    );
}

#[test]
fn cold_start_estimates_minimum_time() {
    for config in [model1_nominal(), model2_nominal()] {
        let traj = simulate(&MpcConfig { steps: 1, ..config }).unwrap();
        let p0 = traj.samples[0].control.as_ref().unwrap().stats.p;
        assert!((p0 - 2.0).abs() <= 1e-2, "p0 = {p0}");
    }
}

#[test]
fn step_failure_keeps_partial_trajectory() {
    let err = simulate(&MpcConfig {
        steps: 500,
        ..Default::default()
    })
    .unwrap_err();
    let partial = err.partial_trajectory().unwrap();
    assert!(partial.samples.len() > 10);
    assert!(partial.samples.last().unwrap().control.is_none());
}

#[test]
fn runs_are_reproducible() {
    let config = MpcConfig {
        steps: 1000,
        ..Default::default()
    };
    let a = simulate(&config).unwrap();
    let b = simulate(&config).unwrap();
    let states = |t: &Trajectory| {
        t.samples
            .iter()
            .map(|s| s.state.clone())
            .collect::<Vec<_>>()
    };
    assert_eq!(states(&a), states(&b));
}
