//! Tracking-error coordinates.
//!
//! The vehicle is described relative to a reference point `p_d(t)` by the
//! horizontal distance `e_d`, the vertical error `e_z` and the projected
//! orientation error `e_o = sin(psi - theta)`, where `theta` is the bearing of
//! the vehicle seen from the reference. Their time derivative splits into
//! `J(e) v + zeta(e, p_d') + xi(e, omega)`.
//!
//! Throughout, `a = cos(psi - theta)` is the alignment of the heading with the
//! error vector; `a > 0` means the vehicle points away from the reference.

use std::f64::consts::{PI, TAU};

use nalgebra::{Vector4, Vector6};

use crate::error::{Error, Result};
use crate::geometry::KnownWorld;
use crate::vehicle::{self, BodyVelocity, VehicleState};
use crate::{Mat3, Vec3};

/// Error triple `(e_d, e_z, e_o)` plus the Cartesian context it was built from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorState {
    pub ex: f64,
    pub ey: f64,
    pub ez: f64,
    pub psi: f64,
    pub ed: f64,
    pub eo: f64,
}

/// Which of the two headings compatible with a given `e_o` is meant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// `a >= 0`: heading away from the reference.
    Away,
    /// `a < 0`: heading towards the reference.
    Toward,
}

impl ErrorState {
    pub fn from_context(ex: f64, ey: f64, ez: f64, psi: f64) -> Result<Self> {
        if !(ex.is_finite() && ey.is_finite() && ez.is_finite() && psi.is_finite()) {
            return Err(Error::NonFinite("error coordinates"));
        }
        let ed = ex.hypot(ey);
        if ed == 0.0 {
            return Err(Error::SingularTransform { ed });
        }
        let (s, c) = psi.sin_cos();
        let eo = ((ex * s - ey * c) / ed).clamp(-1.0, 1.0);
        Ok(ErrorState {
            ex,
            ey,
            ez,
            psi,
            ed,
            eo,
        })
    }

    /// Rebuilds a context from the reduced triple and a heading.
    pub fn from_reduced(ed: f64, ez: f64, eo: f64, psi: f64, branch: Branch) -> Result<Self> {
        if !(ed > 0.0) {
            return Err(Error::SingularTransform { ed });
        }
        if !(-1.0..=1.0).contains(&eo) {
            return Err(Error::config(format!("orientation error {eo} outside [-1, 1]")));
        }
        let phi = match branch {
            Branch::Away => eo.asin(),
            Branch::Toward => PI - eo.asin(),
        };
        let theta = psi - phi;
        Ok(ErrorState {
            ex: ed * theta.cos(),
            ey: ed * theta.sin(),
            ez,
            psi,
            ed,
            eo,
        })
    }

    pub fn triple(&self) -> Vec3 {
        Vec3::new(self.ed, self.ez, self.eo)
    }

    /// Position of the vehicle relative to the reference.
    pub fn offset(&self) -> Vec3 {
        Vec3::new(self.ex, self.ey, self.ez)
    }

    /// `cos(psi - theta)`.
    pub fn alignment(&self) -> f64 {
        let (s, c) = self.psi.sin_cos();
        (self.ex * c + self.ey * s) / self.ed
    }

    pub fn branch(&self) -> Branch {
        if self.alignment() >= 0.0 {
            Branch::Away
        } else {
            Branch::Toward
        }
    }
}

/// Reference trajectory `p_d(t)` with its analytic velocity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReferenceTrajectory {
    Stationary {
        point: Vec3,
    },
    Line {
        origin: Vec3,
        velocity: Vec3,
    },
    /// Horizontal circle `center + radius * [sin(2 pi t / period + phase), cos(..), 0]`.
    Circle {
        center: Vec3,
        radius: f64,
        period: f64,
        phase: f64,
    },
}

impl ReferenceTrajectory {
    pub fn position(&self, t: f64) -> Vec3 {
        match *self {
            ReferenceTrajectory::Stationary { point } => point,
            ReferenceTrajectory::Line { origin, velocity } => origin + velocity * t,
            ReferenceTrajectory::Circle {
                center,
                radius,
                period,
                phase,
            } => {
                let a = TAU * t / period + phase;
                center + Vec3::new(radius * a.sin(), radius * a.cos(), 0.0)
            }
        }
    }

    pub fn velocity(&self, t: f64) -> Vec3 {
        match *self {
            ReferenceTrajectory::Stationary { .. } => Vec3::zeros(),
            ReferenceTrajectory::Line { velocity, .. } => velocity,
            ReferenceTrajectory::Circle {
                radius, period, phase, ..
            } => {
                let w = TAU / period;
                let a = w * t + phase;
                Vec3::new(radius * w * a.cos(), -radius * w * a.sin(), 0.0)
            }
        }
    }

    /// Supremum of `|p_d'(t)|` over time.
    pub fn max_speed(&self) -> f64 {
        match *self {
            ReferenceTrajectory::Stationary { .. } => 0.0,
            ReferenceTrajectory::Line { velocity, .. } => velocity.norm(),
            ReferenceTrajectory::Circle { radius, period, .. } => (radius * TAU / period).abs(),
        }
    }
}

/// Feasible error set: `e_d >= epsilon` and the vehicle ball, inflated by
/// `inflation`, clear of every known obstacle and of the boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorConstraintSet {
    pub epsilon: f64,
    pub inflation: f64,
}

impl ErrorConstraintSet {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::config(format!("epsilon = {epsilon} must be > 0")));
        }
        Ok(ErrorConstraintSet {
            epsilon,
            inflation: 0.0,
        })
    }

    pub fn check_distance(&self, e: &ErrorState) -> Result<()> {
        if e.ed < self.epsilon {
            return Err(Error::OutsideErrorSet {
                ed: e.ed,
                bound: self.epsilon,
            });
        }
        Ok(())
    }

    pub fn contains(&self, e: &ErrorState, t: f64, reference: &ReferenceTrajectory, world: &KnownWorld) -> bool {
        e.ed >= self.epsilon && world.min_clearance(&(reference.position(t) + e.offset())) >= self.inflation
    }
}

pub fn to_error_coords(state: &VehicleState, t: f64, reference: &ReferenceTrajectory) -> Result<ErrorState> {
    let d = state.position() - reference.position(t);
    ErrorState::from_context(d[0], d[1], d[2], state.psi)
}

/// Inverse of [`to_error_coords`] given the full context.
pub fn to_vehicle_state(e: &ErrorState, t: f64, reference: &ReferenceTrajectory) -> VehicleState {
    let p = reference.position(t) + e.offset();
    VehicleState::new(p[0], p[1], p[2], e.psi)
}

/// Input matrix `J(e)`: `e' = J(e) v + ...`.
pub fn error_jacobian(e: &ErrorState) -> Mat3 {
    let a = e.alignment();
    Mat3::new(a, 0.0, 0.0, 0.0, 1.0, 0.0, -a * e.eo / e.ed, 0.0, a)
}

/// Contribution of the reference motion.
pub fn drift_term(e: &ErrorState, ref_vel: &Vec3) -> Vec3 {
    let a = e.alignment();
    let ed2 = e.ed * e.ed;
    Vec3::new(
        -(e.ex * ref_vel[0] + e.ey * ref_vel[1]) / e.ed,
        -ref_vel[2],
        a * (e.ex * ref_vel[1] - e.ey * ref_vel[0]) / ed2,
    )
}

/// Contribution of the disturbance.
pub fn disturbance_term(e: &ErrorState, omega: &Vector4<f64>) -> Vec3 {
    let a = e.alignment();
    let ed2 = e.ed * e.ed;
    Vec3::new(
        (e.ex * omega[0] + e.ey * omega[1]) / e.ed,
        omega[2],
        a * (e.ey * omega[0] - e.ex * omega[1]) / ed2,
    )
}

pub fn nominal_error_dynamics(e: &ErrorState, v: &BodyVelocity, ref_vel: &Vec3) -> Vec3 {
    error_jacobian(e) * v.to_vec3() + drift_term(e, ref_vel)
}

pub fn error_dynamics(e: &ErrorState, v: &BodyVelocity, ref_vel: &Vec3, omega: &Vector4<f64>) -> Vec3 {
    nominal_error_dynamics(e, v, ref_vel) + disturbance_term(e, omega)
}

/// Supremum of `|xi(e, omega)|` over `e_d >= epsilon`, `|omega| <= omega_bar`.
pub fn xi_bound(epsilon: f64, omega_bar: f64) -> f64 {
    omega_bar * (1.0 / epsilon).max(1.0)
}

/// As [`xi_bound`] but with separate bounds on the horizontal and vertical
/// parts of the disturbance.
pub fn xi_bound_split(epsilon: f64, horizontal: f64, vertical: f64) -> f64 {
    let k = (1.0 / (epsilon * epsilon)).max(1.0);
    (k * horizontal * horizontal + vertical * vertical).sqrt()
}

/// Advances the disturbance-free vehicle by `dt` and returns the new state
/// together with its error coordinates at `t + dt`.
pub fn propagate_nominal(
    state: &VehicleState,
    v: &BodyVelocity,
    t: f64,
    dt: f64,
    reference: &ReferenceTrajectory,
) -> Result<(VehicleState, ErrorState)> {
    let next = vehicle::step(state, v, |_, _| Vector4::zeros(), t, dt)?;
    let e = to_error_coords(&next, t + dt, reference)?;
    Ok((next, e))
}

/// Integrates the error dynamics directly in error space with one RK4 step.
///
/// The triple `(e_d, e_z, e_o)` evolves under `J v + zeta + xi`; the context
/// `(e_x, e_y, psi)` needed to evaluate those terms is carried alongside
/// under its own kinematics. Returns the integrated triple and the carried
/// context at `t + h`.
pub fn integrate_error_dynamics<D>(
    e0: &ErrorState,
    v: &BodyVelocity,
    reference: &ReferenceTrajectory,
    omega: D,
    t: f64,
    h: f64,
) -> Result<(Vec3, ErrorState)>
where
    D: Fn(f64, &VehicleState) -> Vector4<f64>,
{
    // [e_d, e_z, e_o, e_x, e_y, psi]
    let rhs = |s: f64, y: &Vector6<f64>| -> Vector6<f64> {
        let ed = y[3].hypot(y[4]);
        let (sn, cs) = y[5].sin_cos();
        let ctx = ErrorState {
            ex: y[3],
            ey: y[4],
            ez: y[1],
            psi: y[5],
            ed,
            eo: (y[3] * sn - y[4] * cs) / ed,
        };
        let here = to_vehicle_state(&ctx, s, reference);
        let w = omega(s, &here);
        let pd = reference.velocity(s);
        let de = error_dynamics(&ctx, v, &pd, &w);
        Vector6::new(
            de[0],
            de[1],
            de[2],
            v.u * cs + w[0] - pd[0],
            v.u * sn + w[1] - pd[1],
            v.r,
        )
    };
    let y0 = Vector6::new(e0.ed, e0.ez, e0.eo, e0.ex, e0.ey, e0.psi);
    let k1 = rhs(t, &y0);
    let k2 = rhs(t + 0.5 * h, &(y0 + k1 * (0.5 * h)));
    let k3 = rhs(t + 0.5 * h, &(y0 + k2 * (0.5 * h)));
    let k4 = rhs(t + h, &(y0 + k3 * h));
    let y = y0 + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    if !y.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("error-space propagation"));
    }
    let ctx = ErrorState::from_context(y[3], y[4], y[1], y[5])?;
    Ok((Vec3::new(y[0], y[1], y[2]), ctx))
}
