use serde::{Deserialize, Serialize};

use crate::num::Real;
use crate::traj::BicycleState;

/// Steering angle limit in radians.
pub const MAX_STEER: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Controls<T: Real = f64> {
    pub accel: T,
    pub steer_rate: T,
}

impl<T: Real> Controls<T> {
    pub fn new(accel: T, steer_rate: T) -> Self {
        Controls { accel, steer_rate }
    }
}

/// One explicit Euler step of the kinematic bicycle model.
pub fn bicycle_step<T: Real>(state: &BicycleState<T>, controls: Controls<T>, dt: T, wheelbase: T) -> BicycleState<T> {
    let max = T::lit(MAX_STEER);
    let phi = (state.phi + controls.steer_rate * dt).max(-max).min(max);
    let kappa = phi.tan() / wheelbase;
    let theta = state.theta + state.v * kappa * dt;
    let p_x = state.p_x + state.v * dt * theta.cos();
    let p_y = state.p_y + state.v * dt * theta.sin();
    let v = (state.v + controls.accel * dt).max(T::zero());
    BicycleState { p_x, p_y, theta, v, a_t: controls.accel, a_n: v * v * kappa, phi, kappa }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rest_state_is_fixed_point() {
        let s = BicycleState::<f64>::at_rest(3.0, -1.0, 0.4);
        let n = bicycle_step(&s, Controls::default(), 0.5, 2.7);
        assert_eq!(n, s);
    }

    #[test]
    fn euler_acceleration_from_rest() {
        let mut s = BicycleState::<f64>::at_rest(0.0, 0.0, 0.0);
        for _ in 0..2 {
            s = bicycle_step(&s, Controls::new(1.0, 0.0), 0.5, 2.7);
        }
        assert!((s.v - 1.0).abs() < 1e-12);
        // positions use the speed before the update: 0 * 0.5 + 0.5 * 0.5
        assert!((s.p_x - 0.25).abs() < 1e-12);
        assert_eq!(s.p_y, 0.0);
    }

    #[test]
    fn constant_curvature_heading_rate() {
        let wb = 2.7;
        let phi = (0.1f64 * wb).atan();
        let mut s = BicycleState { v: 5.0, phi, kappa: 0.1, ..BicycleState::at_rest(0.0, 0.0, 0.0) };
        for i in 1..=4 {
            s = bicycle_step(&s, Controls::default(), 0.5, wb);
            assert!((s.theta - 0.25 * i as f64).abs() < 1e-12);
            assert!((s.a_n - 2.5).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn speed_and_steer_stay_bounded(
            v in 0.0f64..30.0, phi in -0.6f64..0.6, a in -50.0f64..50.0, rate in -10.0f64..10.0, dt in 0.01f64..1.0
        ) {
            let s = BicycleState { v, phi, ..BicycleState::at_rest(0.0, 0.0, 0.0) };
            let n = bicycle_step(&s, Controls::new(a, rate), dt, 2.7);
            prop_assert!(n.v >= 0.0);
            prop_assert!(n.phi.abs() <= MAX_STEER);
        }
    }
}
