//! Reduced kinematic plant: surge, heave and yaw rate are actuated, sway is
//! an unactuated bounded perturbation, and ocean currents add a bounded
//! inertial-frame velocity.

use std::f64::consts::{PI, TAU};

use nalgebra::Vector4;

use crate::error::{Error, Result};
use crate::Vec3;

/// Wraps an angle to (-pi, pi].
pub fn wrap_angle(angle: f64) -> f64 {
    let mut a = angle - TAU * ((angle + PI) / TAU).floor();
    if a <= -PI {
        a += TAU;
    }
    if a > PI {
        a -= TAU;
    }
    a
}

/// Inertial pose `[x, y, z, psi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub psi: f64,
}

impl VehicleState {
    pub fn new(x: f64, y: f64, z: f64, psi: f64) -> Self {
        VehicleState {
            x,
            y,
            z,
            psi: wrap_angle(psi),
        }
    }

    pub fn position(&self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }

    pub fn to_vector(&self) -> Vector4<f64> {
        Vector4::new(self.x, self.y, self.z, self.psi)
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        VehicleState::new(v[0], v[1], v[2], v[3])
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.psi.is_finite()
    }
}

/// Actuated body velocities: surge `u`, heave `w`, yaw rate `r`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BodyVelocity {
    pub u: f64,
    pub w: f64,
    pub r: f64,
}

impl BodyVelocity {
    pub const ZERO: BodyVelocity = BodyVelocity { u: 0.0, w: 0.0, r: 0.0 };

    pub fn new(u: f64, w: f64, r: f64) -> Self {
        BodyVelocity { u, w, r }
    }

    pub fn to_vec3(&self) -> Vec3 {
        Vec3::new(self.u, self.w, self.r)
    }

    pub fn from_vec3(v: &Vec3) -> Self {
        BodyVelocity::new(v[0], v[1], v[2])
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.w.is_finite() && self.r.is_finite()
    }
}

impl std::ops::Add for BodyVelocity {
    type Output = BodyVelocity;
    fn add(self, rhs: BodyVelocity) -> BodyVelocity {
        BodyVelocity::new(self.u + rhs.u, self.w + rhs.w, self.r + rhs.r)
    }
}

/// Symmetric per-axis input bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityBox {
    pub u_max: f64,
    pub w_max: f64,
    pub r_max: f64,
}

impl VelocityBox {
    pub fn new(u_max: f64, w_max: f64, r_max: f64) -> Result<Self> {
        for (name, b) in [("u_max", u_max), ("w_max", w_max), ("r_max", r_max)] {
            if !(b > 0.0) || !b.is_finite() {
                return Err(Error::config(format!("velocity bound {name} = {b} must be > 0")));
            }
        }
        Ok(VelocityBox { u_max, w_max, r_max })
    }

    /// Euclidean norm of the bound vector.
    pub fn v_bar(&self) -> f64 {
        (self.u_max.powi(2) + self.w_max.powi(2) + self.r_max.powi(2)).sqrt()
    }

    pub fn bounds(&self) -> [f64; 3] {
        [self.u_max, self.w_max, self.r_max]
    }

    pub fn contains(&self, v: &BodyVelocity) -> bool {
        v.u.abs() <= self.u_max && v.w.abs() <= self.w_max && v.r.abs() <= self.r_max
    }

    /// Clamps `v` into the box; the flag reports whether any axis moved.
    pub fn clamp(&self, v: &BodyVelocity) -> (BodyVelocity, bool) {
        let c = BodyVelocity::new(
            v.u.clamp(-self.u_max, self.u_max),
            v.w.clamp(-self.w_max, self.w_max),
            v.r.clamp(-self.r_max, self.r_max),
        );
        (c, c != *v)
    }

    /// Shrinks every axis by `margin`. Fails naming the first axis that
    /// would become empty.
    pub fn shrink(&self, margin: f64) -> Result<VelocityBox> {
        for (name, b) in [("surge", self.u_max), ("heave", self.w_max), ("yaw rate", self.r_max)] {
            if b - margin <= 0.0 {
                return Err(Error::EmptyTightenedSet(format!(
                    "{name} bound {b} minus ancillary margin {margin} is not positive"
                )));
            }
        }
        Ok(VelocityBox {
            u_max: self.u_max - margin,
            w_max: self.w_max - margin,
            r_max: self.r_max - margin,
        })
    }
}

/// Ocean current in the inertial frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CurrentModel {
    None,
    /// Horizontal current of constant magnitude whose direction rotates at
    /// `rate`, plus a vertical sinusoid at the same rate:
    /// `[h sin(rate t + phase), h cos(rate t + phase), v sin(rate t + vertical_phase)]`.
    Rotating {
        horizontal: f64,
        vertical: f64,
        rate: f64,
        phase: f64,
        vertical_phase: f64,
    },
    /// Constant current of speed `speed`, heading `heading` in the x-y plane
    /// and inclination `inclination` from the z axis.
    Polar {
        speed: f64,
        heading: f64,
        inclination: f64,
    },
}

impl CurrentModel {
    pub fn velocity(&self, t: f64) -> Vec3 {
        match *self {
            CurrentModel::None => Vec3::zeros(),
            CurrentModel::Rotating {
                horizontal,
                vertical,
                rate,
                phase,
                vertical_phase,
            } => {
                let a = rate * t + phase;
                Vec3::new(
                    horizontal * a.sin(),
                    horizontal * a.cos(),
                    vertical * (rate * t + vertical_phase).sin(),
                )
            }
            CurrentModel::Polar {
                speed,
                heading,
                inclination,
            } => Vec3::new(
                speed * heading.cos() * inclination.sin(),
                speed * heading.sin() * inclination.sin(),
                speed * inclination.cos(),
            ),
        }
    }

    /// Supremum over time of the horizontal speed.
    pub fn horizontal_bound(&self) -> f64 {
        match *self {
            CurrentModel::None => 0.0,
            CurrentModel::Rotating { horizontal, .. } => horizontal.abs(),
            CurrentModel::Polar { speed, inclination, .. } => (speed * inclination.sin()).abs(),
        }
    }

    /// Supremum over time of the vertical speed.
    pub fn vertical_bound(&self) -> f64 {
        match *self {
            CurrentModel::None => 0.0,
            CurrentModel::Rotating { vertical, .. } => vertical.abs(),
            CurrentModel::Polar { speed, inclination, .. } => (speed * inclination.cos()).abs(),
        }
    }

    /// Supremum over time of the current speed.
    pub fn bound(&self) -> f64 {
        match *self {
            CurrentModel::Polar { speed, .. } => speed.abs(),
            _ => self.horizontal_bound().hypot(self.vertical_bound()),
        }
    }
}

/// Sway speed treated as an exogenous bounded signal `amplitude * cos(2 pi t / period)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwayModel {
    pub amplitude: f64,
    pub period: f64,
}

impl SwayModel {
    pub fn speed(&self, t: f64) -> f64 {
        self.amplitude * (TAU * t / self.period).cos()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisturbanceModel {
    pub current: CurrentModel,
    pub sway: Option<SwayModel>,
}

impl DisturbanceModel {
    pub fn none() -> Self {
        DisturbanceModel {
            current: CurrentModel::None,
            sway: None,
        }
    }

    /// Bound on the sway speed.
    pub fn sway_bound(&self) -> f64 {
        self.sway.map_or(0.0, |s| s.amplitude.abs())
    }

    /// Bound on the current speed.
    pub fn current_bound(&self) -> f64 {
        self.current.bound()
    }

    /// Bound on the full disturbance: current plus sway coupling.
    pub fn total_bound(&self) -> f64 {
        self.current_bound() + self.sway_bound()
    }

    /// Bound on the horizontal part of the disturbance (sway acts horizontally).
    pub fn horizontal_bound(&self) -> f64 {
        self.current.horizontal_bound() + self.sway_bound()
    }

    pub fn vertical_bound(&self) -> f64 {
        self.current.vertical_bound()
    }

    /// Full disturbance `current + g(x, v)` acting on the vehicle at time `t`.
    pub fn omega(&self, t: f64, state: &VehicleState) -> Vector4<f64> {
        let mut w = current_disturbance(t, self);
        if let Some(sway) = &self.sway {
            w += sway_coupling_unchecked(state.psi, sway.speed(t));
        }
        w
    }
}

/// Current part of the disturbance as a 4-vector; the yaw entry is always zero.
pub fn current_disturbance(t: f64, model: &DisturbanceModel) -> Vector4<f64> {
    let c = model.current.velocity(t);
    Vector4::new(c[0], c[1], c[2], 0.0)
}

fn sway_coupling_unchecked(psi: f64, speed: f64) -> Vector4<f64> {
    let (s, c) = psi.sin_cos();
    Vector4::new(-s * speed, c * speed, 0.0, 0.0)
}

/// Inertial velocity produced by a sway speed: `[-sin psi, cos psi, 0, 0] * v`.
pub fn sway_coupling(state: &VehicleState, sway_speed: f64, sway_bound: f64) -> Result<Vector4<f64>> {
    if sway_speed.abs() > sway_bound {
        return Err(Error::SwayBound {
            speed: sway_speed,
            bound: sway_bound,
        });
    }
    Ok(sway_coupling_unchecked(state.psi, sway_speed))
}

#[inline]
pub(crate) fn kinematics_raw(psi: f64, u: f64, w: f64, r: f64, omega: &Vector4<f64>) -> Vector4<f64> {
    let (s, c) = psi.sin_cos();
    Vector4::new(u * c + omega[0], u * s + omega[1], w + omega[2], r)
}

/// Perturbed kinematics: `x' = f(x) v + omega`.
pub fn kinematics(state: &VehicleState, input: &BodyVelocity, omega: &Vector4<f64>) -> Result<Vector4<f64>> {
    if !state.is_finite() {
        return Err(Error::NonFinite("vehicle state"));
    }
    if !input.is_finite() {
        return Err(Error::NonFinite("body velocity"));
    }
    if !omega.iter().all(|w| w.is_finite()) {
        return Err(Error::NonFinite("disturbance"));
    }
    if omega[3] != 0.0 {
        return Err(Error::config("disturbance has no yaw component"));
    }
    Ok(kinematics_raw(state.psi, input.u, input.w, input.r, omega))
}

/// One classical fourth-order Runge-Kutta step of `x' = f(t, x)`.
#[inline]
pub fn rk4_step<F>(f: F, t: f64, x: &Vector4<f64>, h: f64) -> Vector4<f64>
where
    F: Fn(f64, &Vector4<f64>) -> Vector4<f64>,
{
    let k1 = f(t, x);
    let k2 = f(t + 0.5 * h, &(x + k1 * (0.5 * h)));
    let k3 = f(t + 0.5 * h, &(x + k2 * (0.5 * h)));
    let k4 = f(t + h, &(x + k3 * h));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Advances the plant by `dt` with the input held constant.
pub fn step<D>(state: &VehicleState, input: &BodyVelocity, disturbance: D, t: f64, dt: f64) -> Result<VehicleState>
where
    D: Fn(f64, &VehicleState) -> Vector4<f64>,
{
    if !(dt > 0.0) {
        return Err(Error::config(format!("integration step {dt} must be > 0")));
    }
    if !input.is_finite() {
        return Err(Error::NonFinite("body velocity"));
    }
    let rhs = |s: f64, x: &Vector4<f64>| {
        let here = VehicleState {
            x: x[0],
            y: x[1],
            z: x[2],
            psi: x[3],
        };
        kinematics_raw(x[3], input.u, input.w, input.r, &disturbance(s, &here))
    };
    let next = rk4_step(rhs, t, &state.to_vector(), dt);
    let next = VehicleState::from_vector(&next);
    if !next.is_finite() {
        return Err(Error::NonFinite("propagated vehicle state"));
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_2;

    fn section_current() -> DisturbanceModel {
        DisturbanceModel {
            current: CurrentModel::Rotating {
                horizontal: 0.1,
                vertical: 0.1,
                rate: TAU / 15.0,
                phase: 0.0,
                vertical_phase: 0.0,
            },
            sway: None,
        }
    }

    #[test]
    fn wrap_stays_in_half_open_interval() {
        assert_eq!(wrap_angle(PI), PI);
        assert_abs_diff_eq!(wrap_angle(-PI), PI, epsilon = 1e-15);
        assert_abs_diff_eq!(wrap_angle(3.0 * PI), PI, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_angle(0.25 + TAU * 7.0), 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_angle(-0.25 - TAU), -0.25, epsilon = 1e-12);
    }

    #[test]
    fn kinematics_examples() {
        let zero = Vector4::zeros();
        let d = kinematics(
            &VehicleState::new(0.0, 0.0, 0.0, 0.0),
            &BodyVelocity::new(1.0, 0.0, 0.0),
            &zero,
        )
        .unwrap();
        assert_abs_diff_eq!(d, Vector4::new(1.0, 0.0, 0.0, 0.0), epsilon = 1e-15);

        let s = VehicleState::new(0.0, 0.0, 0.0, FRAC_PI_2);
        let g = sway_coupling(&s, 0.2, 0.2).unwrap();
        assert_abs_diff_eq!(g, Vector4::new(-0.2, 0.0, 0.0, 0.0), epsilon = 1e-15);
        let d = kinematics(&s, &BodyVelocity::new(1.0, 0.0, 0.5), &g).unwrap();
        assert_abs_diff_eq!(d, Vector4::new(-0.2, 1.0, 0.0, 0.5), epsilon = 1e-15);

        let w = current_disturbance(0.0, &section_current());
        let d = kinematics(&VehicleState::new(1.0, 2.0, 3.0, 0.3), &BodyVelocity::ZERO, &w).unwrap();
        assert_abs_diff_eq!(d, Vector4::new(0.0, 0.1, 0.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn kinematics_rejects_bad_inputs() {
        let s = VehicleState::new(0.0, 0.0, 0.0, 0.0);
        let bad = BodyVelocity::new(f64::NAN, 0.0, 0.0);
        assert!(matches!(
            kinematics(&s, &bad, &Vector4::zeros()),
            Err(Error::NonFinite(_))
        ));
        let yaw = Vector4::new(0.0, 0.0, 0.0, 0.1);
        assert!(kinematics(&s, &BodyVelocity::ZERO, &yaw).is_err());
    }

    #[test]
    fn sway_coupling_examples() {
        let s0 = VehicleState::new(0.0, 0.0, 0.0, 0.0);
        assert_abs_diff_eq!(sway_coupling(&s0, 0.2, 0.2).unwrap(), Vector4::new(0.0, 0.2, 0.0, 0.0));
        assert_eq!(sway_coupling(&s0, 0.0, 0.2).unwrap(), Vector4::zeros());
        assert!(matches!(sway_coupling(&s0, 0.3, 0.2), Err(Error::SwayBound { .. })));
    }

    #[test]
    fn current_examples() {
        let m = section_current();
        assert_abs_diff_eq!(
            current_disturbance(0.0, &m),
            Vector4::new(0.0, 0.1, 0.0, 0.0),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            current_disturbance(3.75, &m),
            Vector4::new(0.1, 0.0, 0.1, 0.0),
            epsilon = 1e-15
        );
        let polar = DisturbanceModel {
            current: CurrentModel::Polar {
                speed: 0.0,
                heading: 1.0,
                inclination: 0.4,
            },
            sway: None,
        };
        assert_eq!(current_disturbance(12.0, &polar), Vector4::zeros());
    }

    #[test]
    fn current_bound_matches_grid_maximum() {
        let m = section_current();
        let grid_max = (0..200_000)
            .map(|i| current_disturbance(i as f64 * 1e-4, &m).norm())
            .fold(0.0, f64::max);
        assert!(grid_max <= m.current_bound() + 1e-15);
        assert_abs_diff_eq!(grid_max, 0.1 * 2f64.sqrt(), epsilon = 1e-9);
        assert_abs_diff_eq!(m.horizontal_bound(), 0.1);
        assert_abs_diff_eq!(m.vertical_bound(), 0.1);

        let polar = CurrentModel::Polar {
            speed: 0.2,
            heading: 0.7,
            inclination: 1.1,
        };
        assert_abs_diff_eq!(polar.velocity(0.0).norm(), 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(
            polar.horizontal_bound().hypot(polar.vertical_bound()),
            0.2,
            epsilon = 1e-15
        );
    }

    #[test]
    fn step_examples() {
        let none = |_: f64, _: &VehicleState| Vector4::zeros();
        let s = VehicleState::new(1.0, -2.0, 0.5, 0.3);
        assert_eq!(step(&s, &BodyVelocity::ZERO, none, 0.0, 0.1).unwrap(), s);

        let s = VehicleState::new(0.0, 0.0, 0.0, 0.0);
        let n = step(&s, &BodyVelocity::new(1.0, 0.0, 0.0), none, 0.0, 0.1).unwrap();
        assert_abs_diff_eq!(n.x, 0.1, epsilon = 1e-15);
        let n = step(&s, &BodyVelocity::new(0.0, 0.0, 0.5), none, 0.0, 0.1).unwrap();
        assert_abs_diff_eq!(n.psi, 0.05, epsilon = 1e-15);

        assert!(step(&s, &BodyVelocity::ZERO, none, 0.0, 0.0).is_err());
    }

    #[test]
    fn velocity_box_operations() {
        let b = VelocityBox::new(0.4, 0.3, 0.5).unwrap();
        assert_abs_diff_eq!(b.v_bar(), 0.5f64.sqrt(), epsilon = 1e-15);
        let (c, active) = b.clamp(&BodyVelocity::new(0.41, -0.1, -0.6));
        assert!(active);
        assert_eq!(c, BodyVelocity::new(0.4, -0.1, -0.5));
        assert!(b.shrink(0.35).is_err());
        assert!(VelocityBox::new(0.0, 1.0, 1.0).is_err());
    }
}
