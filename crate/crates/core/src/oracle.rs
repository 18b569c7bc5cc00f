//! Closed-form minimum-time feedback for the double integrator with
//! `|u| ≤ 1`, steering any state to the origin.

use serde::{Deserialize, Serialize};

/// Half-width of the band treated as lying on the switching curve.
pub const CURVE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    /// Position.
    pub x: f64,
    /// Velocity.
    pub y: f64,
}

impl PlantState {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

/// `Δ = x + y|y|/2`; zero on the switching curve.
pub fn switching_function(s: PlantState) -> f64 {
    s.x + s.y * s.y.abs() / 2.0
}

fn on_curve(delta: f64) -> bool {
    delta.abs() <= CURVE_TOLERANCE
}

pub fn bang_bang_control(s: PlantState) -> f64 {
    let delta = switching_function(s);
    if on_curve(delta) {
        if s.y == 0.0 {
            0.0
        } else {
            -s.y.signum()
        }
    } else if delta < 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Optimal time to reach the origin.
pub fn min_time(s: PlantState) -> f64 {
    let delta = switching_function(s);
    let y = s.y;
    if on_curve(delta) {
        y.abs()
    } else if delta < 0.0 {
        2.0 * (y * y / 2.0 - s.x).sqrt() - y
    } else {
        2.0 * (y * y / 2.0 + s.x).sqrt() + y
    }
}

/// Time of the single switch along the optimal trajectory from `s`, or `None`
/// when the state already lies on the switching curve.
pub fn switch_time(s: PlantState) -> Option<f64> {
    let delta = switching_function(s);
    if on_curve(delta) {
        return None;
    }
    let u = if delta < 0.0 { 1.0 } else { -1.0 };
    // Under u, y grows linearly until it meets the curve at |y| = sqrt(y²/2 ∓ x).
    let y_switch = u * (s.y * s.y / 2.0 - u * s.x).sqrt();
    Some((y_switch - s.y) / u)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Explicit Euler closed loop under the bang-bang law; returns the time
    /// at which the state first enters the ball of radius `radius`.
    fn simulate(mut s: PlantState, dt: f64, radius: f64, t_max: f64) -> Option<f64> {
        let mut t = 0.0;
        while t <= t_max {
            if s.norm() <= radius {
                return Some(t);
            }
            let u = bang_bang_control(s);
            s = PlantState::new(s.x + dt * s.y, s.y + dt * u);
            t += dt;
        }
        None
    }

    #[test]
    fn switching_function_examples() {
        assert_eq!(switching_function(PlantState::new(-1.0, 0.0)), -1.0);
        assert_eq!(switching_function(PlantState::new(-0.5, 1.0)), 0.0);
        assert_eq!(switching_function(PlantState::new(0.0, 0.0)), 0.0);
    }

    #[test]
    fn control_examples() {
        assert_eq!(bang_bang_control(PlantState::new(-1.0, 0.0)), 1.0);
        assert_eq!(bang_bang_control(PlantState::new(-0.5, 1.0)), -1.0);
        assert_eq!(bang_bang_control(PlantState::new(0.0, 0.0)), 0.0);
        assert_eq!(bang_bang_control(PlantState::new(1.0, 0.0)), -1.0);
    }

    #[test]
    fn min_time_examples() {
        assert_eq!(min_time(PlantState::new(-1.0, 0.0)), 2.0);
        assert_eq!(min_time(PlantState::new(0.0, 0.0)), 0.0);
        assert_eq!(min_time(PlantState::new(-0.5, 1.0)), 1.0);
        assert_eq!(switch_time(PlantState::new(-1.0, 0.0)), Some(1.0));
    }

    #[test]
    fn nominal_state_reaches_origin_in_two() {
        let t = simulate(PlantState::new(-1.0, 0.0), 1e-4, 1e-2, 3.0).unwrap();
        assert!(t <= 2.0 + 1e-2, "t = {t}");
    }

    #[test]
    fn on_curve_state_coasts_in_unit_time() {
        // u = -1 for one time unit from (-0.5, 1) lands at the origin.
        let (x, y) = (-0.5_f64, 1.0_f64);
        let (xe, ye) = (x + y - 0.5, y - 1.0);
        assert!(xe.abs() < 1e-15 && ye.abs() < 1e-15);
    }

    #[test]
    fn simulation_reaches_origin_from_grid() {
        let mut k = 0;
        for i in -4..=4 {
            for j in -4..=4 {
                let s = PlantState::new(i as f64 * 0.5, j as f64 * 0.5);
                let tf = min_time(s);
                let t = simulate(s, 1e-4, 1e-2, tf + 1e-2);
                assert!(t.is_some(), "from {s:?} (t_f = {tf})");
                k += 1;
            }
        }
        assert_eq!(k, 81);
    }

    #[test]
    fn min_time_continuous_across_curve() {
        for y in [-1.5, -0.7, 0.3, 1.2] {
            let x = -y * f64::abs(y) / 2.0;
            let lo = min_time(PlantState::new(x - 1e-9, y));
            let hi = min_time(PlantState::new(x + 1e-9, y));
            let on = min_time(PlantState::new(x, y));
            assert!((lo - on).abs() < 1e-4, "{lo} vs {on}");
            assert!((hi - on).abs() < 1e-4, "{hi} vs {on}");
        }
    }
}
