//! Discrete-time robot motion models (forward Euler) and their Jacobians.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Vec2;

#[derive(Debug, Error, PartialEq)]
pub enum DynamicsError {
    #[error("{model} expects a state of dimension {expected}, got {got}")]
    StateDimension {
        model: DynamicsModel,
        expected: usize,
        got: usize,
    },
    #[error("unknown dynamics model `{0}`")]
    UnknownModel(String),
}

/// Motion model family; every model takes a 2-D input.
///
/// * single integrator: state `[p]`, input velocity
/// * double integrator: state `[p; ṗ]`, input acceleration
/// * unicycle: state `[p; θ]`, input `(v, ω)`
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicsModel {
    SingleIntegrator,
    DoubleIntegrator,
    Unicycle,
}

pub const INPUT_DIM: usize = 2;

/// Local affine model `x' ≈ A x + B u + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineStep {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DVector<f64>,
}

/// Wraps an angle to (−π, π].
pub fn wrap_angle(theta: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let w = theta - TAU * ((theta - PI) / TAU).ceil();
    if w <= -PI {
        w + TAU
    } else {
        w
    }
}

impl DynamicsModel {
    pub const ALL: [DynamicsModel; 3] = [
        DynamicsModel::SingleIntegrator,
        DynamicsModel::DoubleIntegrator,
        DynamicsModel::Unicycle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DynamicsModel::SingleIntegrator => "single_integrator",
            DynamicsModel::DoubleIntegrator => "double_integrator",
            DynamicsModel::Unicycle => "unicycle",
        }
    }

    pub fn state_dim(self) -> usize {
        match self {
            DynamicsModel::SingleIntegrator => 2,
            DynamicsModel::DoubleIntegrator => 4,
            DynamicsModel::Unicycle => 3,
        }
    }

    /// Integrator models are exactly affine.
    pub fn is_linear(self) -> bool {
        !matches!(self, DynamicsModel::Unicycle)
    }

    pub fn check_state(self, x: &DVector<f64>) -> Result<(), DynamicsError> {
        if x.len() == self.state_dim() {
            Ok(())
        } else {
            Err(DynamicsError::StateDimension {
                model: self,
                expected: self.state_dim(),
                got: x.len(),
            })
        }
    }

    /// Builds a state at rest at `p` (zero velocity, or heading `theta`).
    pub fn state_at(self, p: Vec2, theta: f64) -> DVector<f64> {
        match self {
            DynamicsModel::SingleIntegrator => DVector::from_vec(vec![p.x, p.y]),
            DynamicsModel::DoubleIntegrator => DVector::from_vec(vec![p.x, p.y, 0.0, 0.0]),
            DynamicsModel::Unicycle => DVector::from_vec(vec![p.x, p.y, wrap_angle(theta)]),
        }
    }

    pub fn step(self, x: &DVector<f64>, u: &Vec2, dt: f64) -> DVector<f64> {
        debug_assert_eq!(x.len(), self.state_dim());
        match self {
            DynamicsModel::SingleIntegrator => {
                DVector::from_vec(vec![x[0] + u.x * dt, x[1] + u.y * dt])
            }
            DynamicsModel::DoubleIntegrator => DVector::from_vec(vec![
                x[0] + x[2] * dt,
                x[1] + x[3] * dt,
                x[2] + u.x * dt,
                x[3] + u.y * dt,
            ]),
            DynamicsModel::Unicycle => {
                let th = x[2];
                DVector::from_vec(vec![
                    x[0] + th.cos() * u.x * dt,
                    x[1] + th.sin() * u.x * dt,
                    wrap_angle(th + u.y * dt),
                ])
            }
        }
    }

    /// First-order expansion of [`DynamicsModel::step`] about `(x̄, ū)`.
    pub fn linearize(self, x: &DVector<f64>, u: &Vec2, dt: f64) -> AffineStep {
        let n = self.state_dim();
        let mut a = DMatrix::<f64>::identity(n, n);
        let mut b = DMatrix::<f64>::zeros(n, INPUT_DIM);
        match self {
            DynamicsModel::SingleIntegrator => {
                b[(0, 0)] = dt;
                b[(1, 1)] = dt;
            }
            DynamicsModel::DoubleIntegrator => {
                a[(0, 2)] = dt;
                a[(1, 3)] = dt;
                b[(2, 0)] = dt;
                b[(3, 1)] = dt;
            }
            DynamicsModel::Unicycle => {
                let (s, c) = x[2].sin_cos();
                a[(0, 2)] = -s * u.x * dt;
                a[(1, 2)] = c * u.x * dt;
                b[(0, 0)] = c * dt;
                b[(1, 0)] = s * dt;
                b[(2, 1)] = dt;
            }
        }
        let mut next = self.step(x, u, dt);
        if self == DynamicsModel::Unicycle {
            // keep c consistent with the unwrapped heading A x̄ + B ū
            next[2] = x[2] + u.y * dt;
        }
        let uv = DVector::from_vec(vec![u.x, u.y]);
        let c = next - &a * x - &b * uv;
        AffineStep { a, b, c }
    }

    pub fn position_of(self, x: &DVector<f64>) -> Vec2 {
        Vec2::new(x[0], x[1])
    }

    /// Velocity part of the state, if the model has one.
    pub fn velocity_of(self, x: &DVector<f64>) -> Option<Vec2> {
        match self {
            DynamicsModel::DoubleIntegrator => Some(Vec2::new(x[2], x[3])),
            _ => None,
        }
    }
}

impl fmt::Display for DynamicsModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DynamicsModel {
    type Err = DynamicsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DynamicsModel::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| DynamicsError::UnknownModel(s.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn examples_of_one_step() {
        let si = DynamicsModel::SingleIntegrator.step(&v(&[1.0, 1.0]), &Vec2::new(1.0, 0.0), 0.1);
        assert_relative_eq!(si, v(&[1.1, 1.0]), epsilon = 1e-15);
        let uni = DynamicsModel::Unicycle.step(&v(&[0.0, 0.0, 0.0]), &Vec2::new(1.0, 0.0), 0.1);
        assert_relative_eq!(uni, v(&[0.1, 0.0, 0.0]), epsilon = 1e-15);
        let di =
            DynamicsModel::DoubleIntegrator.step(&v(&[0.0, 0.0, 1.0, 0.0]), &Vec2::zeros(), 0.1);
        assert_relative_eq!(di, v(&[0.1, 0.0, 1.0, 0.0]), epsilon = 1e-15);
    }

    #[test]
    fn wrap_range() {
        assert_relative_eq!(wrap_angle(PI), PI);
        assert_relative_eq!(wrap_angle(-PI), PI);
        assert_relative_eq!(wrap_angle(3.0 * PI), PI, epsilon = 1e-12);
        assert_relative_eq!(wrap_angle(-0.5), -0.5);
        assert_relative_eq!(wrap_angle(2.0 * PI + 0.25), 0.25, epsilon = 1e-12);
    }

    #[test]
    fn single_integrator_jacobian() {
        let s =
            DynamicsModel::SingleIntegrator.linearize(&v(&[3.0, -2.0]), &Vec2::new(0.3, 0.1), 0.1);
        assert_eq!(s.a, DMatrix::identity(2, 2));
        assert_relative_eq!(s.b, DMatrix::identity(2, 2) * 0.1);
        assert_relative_eq!(s.c, DVector::zeros(2), epsilon = 1e-15);
    }

    #[test]
    fn unicycle_heading_sensitivity() {
        let dt = 0.1;
        let s = DynamicsModel::Unicycle.linearize(&v(&[0.0, 0.0, 0.0]), &Vec2::new(1.0, 0.0), dt);
        assert_relative_eq!(s.a[(0, 2)], 0.0);
        assert_relative_eq!(s.a[(1, 2)], dt);
    }

    #[test]
    fn position_extraction() {
        assert_eq!(
            DynamicsModel::SingleIntegrator.position_of(&v(&[3.0, 4.0])),
            Vec2::new(3.0, 4.0)
        );
        assert_eq!(
            DynamicsModel::Unicycle.position_of(&v(&[1.0, 2.0, 0.5])),
            Vec2::new(1.0, 2.0)
        );
        assert_eq!(
            DynamicsModel::DoubleIntegrator.position_of(&v(&[0.0, 0.0, 5.0, 5.0])),
            Vec2::zeros()
        );
    }

    #[test]
    fn names_roundtrip() {
        for m in DynamicsModel::ALL {
            assert_eq!(m.name().parse::<DynamicsModel>().unwrap(), m);
        }
        assert!("bicycle".parse::<DynamicsModel>().is_err());
    }

    #[test]
    fn state_dimension_is_checked() {
        let err = DynamicsModel::Unicycle
            .check_state(&v(&[1.0, 2.0]))
            .unwrap_err();
        assert!(matches!(
            err,
            DynamicsError::StateDimension {
                expected: 3,
                got: 2,
                ..
            }
        ));
    }

    /// Central finite-difference Jacobians, independent of `linearize`.
    fn fd_jacobians(
        m: DynamicsModel,
        x: &DVector<f64>,
        u: &Vec2,
        dt: f64,
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        let h = 1e-6;
        let n = m.state_dim();
        let unwrap = |y: DVector<f64>, reference: &DVector<f64>| {
            let mut y = y;
            if m == DynamicsModel::Unicycle {
                y[2] = reference[2] + wrap_angle(y[2] - reference[2]);
            }
            y
        };
        let base = m.step(x, u, dt);
        let mut a = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let d =
                (unwrap(m.step(&xp, u, dt), &base) - unwrap(m.step(&xm, u, dt), &base)) / (2.0 * h);
            a.set_column(j, &d);
        }
        let mut b = DMatrix::zeros(n, 2);
        for j in 0..2 {
            let mut up = *u;
            let mut um = *u;
            up[j] += h;
            um[j] -= h;
            let d =
                (unwrap(m.step(x, &up, dt), &base) - unwrap(m.step(x, &um, dt), &base)) / (2.0 * h);
            b.set_column(j, &d);
        }
        (a, b)
    }

    fn close(analytic: f64, fd: f64) -> bool {
        (analytic - fd).abs() <= 1e-5 * analytic.abs().max(1.0)
    }

    proptest! {
        #[test]
        fn jacobians_match_finite_differences(
            px in -5.0..5.0f64, py in -5.0..5.0f64, th in -3.0..3.0f64,
            vx in -2.0..2.0f64, vy in -2.0..2.0f64,
            u0 in -2.0..2.0f64, u1 in -2.0..2.0f64,
        ) {
            let u = Vec2::new(u0, u1);
            for m in DynamicsModel::ALL {
                let x = match m {
                    DynamicsModel::SingleIntegrator => v(&[px, py]),
                    DynamicsModel::DoubleIntegrator => v(&[px, py, vx, vy]),
                    DynamicsModel::Unicycle => v(&[px, py, th]),
                };
                let lin = m.linearize(&x, &u, 0.1);
                let (a, b) = fd_jacobians(m, &x, &u, 0.1);
                for (an, fd) in lin.a.iter().zip(a.iter()) {
                    prop_assert!(close(*an, *fd), "{m}: A {an} vs {fd}");
                }
                for (an, fd) in lin.b.iter().zip(b.iter()) {
                    prop_assert!(close(*an, *fd), "{m}: B {an} vs {fd}");
                }
            }
        }

        #[test]
        fn integrators_are_exactly_affine(
            px in -5.0..5.0f64, py in -5.0..5.0f64, vx in -2.0..2.0f64, vy in -2.0..2.0f64,
            u0 in -2.0..2.0f64, u1 in -2.0..2.0f64, w0 in -2.0..2.0f64, w1 in -2.0..2.0f64,
        ) {
            for (m, x) in [
                (DynamicsModel::SingleIntegrator, v(&[px, py])),
                (DynamicsModel::DoubleIntegrator, v(&[px, py, vx, vy])),
            ] {
                let lin = m.linearize(&x, &Vec2::new(u0, u1), 0.1);
                // evaluate the affine model at a different point than the expansion point
                let x2 = &x * 0.5;
                let w = Vec2::new(w0, w1);
                let affine = &lin.a * &x2 + &lin.b * DVector::from_vec(vec![w.x, w.y]) + &lin.c;
                prop_assert!((affine - m.step(&x2, &w, 0.1)).norm() <= 1e-12);
            }
        }

        #[test]
        fn straight_unicycle_keeps_heading(th in -3.0..3.0f64, speed in -2.0..2.0f64) {
            let x = v(&[1.0, -1.0, th]);
            let y = DynamicsModel::Unicycle.step(&x, &Vec2::new(speed, 0.0), 0.1);
            prop_assert!((y[2] - th).abs() < 1e-12);
            let moved = (Vec2::new(y[0], y[1]) - Vec2::new(1.0, -1.0)).norm();
            prop_assert!((moved - speed.abs() * 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn unicycle_linearization_error_is_second_order() {
        let m = DynamicsModel::Unicycle;
        let x = v(&[0.3, -0.2, 0.7]);
        let u = Vec2::new(0.8, 0.5);
        let lin = m.linearize(&x, &u, 0.5);
        let residual = |scale: f64| {
            let dx = v(&[0.0, 0.0, 0.4]) * scale;
            let du = Vec2::new(0.3, -0.2) * scale;
            let xp = &x + &dx;
            let up = u + du;
            let affine = &lin.a * &xp + &lin.b * DVector::from_vec(vec![up.x, up.y]) + &lin.c;
            let mut exact = m.step(&xp, &up, 0.5);
            exact[2] = xp[2] + up.y * 0.5;
            (exact - affine).norm()
        };
        let ratio = residual(0.1) / residual(0.05);
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
    }
}
