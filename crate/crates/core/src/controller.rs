//! Receding-horizon loop: sense, update the known world, solve the FHOCP from
//! the measured error and apply `v = v_hat + kappa(e, e_hat)`.
//!
//! The nominal error is reset to the measured one at every sampling instant,
//! so `kappa` vanishes there; between samples the nominal vehicle is
//! propagated with the committed `v_hat` and `kappa` acts at any extra
//! actuation instants.

use std::time::Instant;

use nalgebra::Vector4;

use crate::error::{Error, Result};
use crate::errorframe::{self, ErrorConstraintSet, ErrorState, ReferenceTrajectory};
use crate::fhocp::{self, FhocpConfig, FhocpSolution, SolverStatus};
use crate::geometry::KnownWorld;
use crate::tube::{self, TubeParameters};
use crate::vehicle::{self, BodyVelocity, VehicleState, VelocityBox};

/// Everything the loop owns between steps.
#[derive(Debug, Clone)]
pub struct ControllerState {
    pub last_solution: Option<FhocpSolution>,
    /// Nominal error `e_hat`, propagated between samples.
    pub nominal_error: Option<ErrorState>,
    /// Nominal vehicle state behind `nominal_error`.
    pub nominal_state: Option<VehicleState>,
    /// Nominal input committed for the current interval.
    pub committed: Option<BodyVelocity>,
    pub world: KnownWorld,
    pub tube: TubeParameters,
    pub fhocp: FhocpConfig,
    pub reference: ReferenceTrajectory,
    /// Untightened input box; the applied input is clamped to it.
    pub input_box: VelocityBox,
    pub tightened_set: ErrorConstraintSet,
    pub tightened_box: VelocityBox,
    pub clock: f64,
    fallback_plan: Vec<BodyVelocity>,
    pub stats: ControllerStats,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ControllerStats {
    pub solves: usize,
    pub fallbacks: usize,
    pub forced_resolves: usize,
    pub clamp_events: usize,
    /// Samples at which the measured error lay outside the certified domain.
    pub domain_exits: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// Input sent to the plant.
    pub applied: BodyVelocity,
    pub nominal_input: BodyVelocity,
    pub error: ErrorState,
    pub status: SolverStatus,
    pub newly_discovered: Vec<usize>,
    pub forced_resolve: bool,
    pub clamped: bool,
    pub in_certified_domain: bool,
    pub solve_ms: f64,
}

impl ControllerState {
    /// `input_margin` is the amount by which the nominal input box is shrunk
    /// to leave room for the ancillary feedback.
    pub fn new(
        world: KnownWorld,
        tube: TubeParameters,
        fhocp: FhocpConfig,
        reference: ReferenceTrajectory,
        error_set: ErrorConstraintSet,
        input_box: VelocityBox,
        input_margin: f64,
    ) -> Result<Self> {
        fhocp.validate()?;
        tube.validate()?;
        let (tightened_set, tightened_box) =
            tube::tighten_sets_with_margin(&error_set, &input_box, tube.rho_tilde, input_margin)?;
        if !fhocp.terminal_set_nonempty(&tightened_set) {
            return Err(Error::EmptyTightenedSet(format!(
                "terminal set |e|_P <= {} misses the tightened distance floor {}",
                fhocp.terminal_eps, tightened_set.epsilon
            )));
        }
        Ok(ControllerState {
            last_solution: None,
            nominal_error: None,
            nominal_state: None,
            committed: None,
            world,
            tube,
            fhocp,
            reference,
            input_box,
            tightened_set,
            tightened_box,
            clock: 0.0,
            fallback_plan: Vec::new(),
            stats: ControllerStats::default(),
        })
    }

    fn clamp(&mut self, v: &BodyVelocity) -> (BodyVelocity, bool) {
        let (c, active) = self.input_box.clamp(v);
        if active {
            self.stats.clamp_events += 1;
            log::warn!("t = {:.3}: input {v:?} clamped to {c:?}", self.clock);
        }
        (c, active)
    }

    /// Whether obstacle `id`, inflated by the tube, meets the last plan.
    fn invalidates_plan(&self, id: usize) -> bool {
        let (Some(sol), Some(obs)) = (&self.last_solution, self.world.workspace().obstacle(id)) else {
            return false;
        };
        let reach = obs.radius + self.world.workspace().vehicle_radius + self.tube.rho_tilde;
        sol.nominal_states
            .iter()
            .any(|s| (s.position() - obs.center).norm() < reach)
    }

    /// Ancillary input at an actuation instant between samples.
    pub fn ancillary_input(&mut self, measured: &VehicleState, t: f64) -> Result<BodyVelocity> {
        let (Some(v_hat), Some(e_hat)) = (self.committed, self.nominal_error) else {
            return Err(Error::config("no committed nominal input"));
        };
        let e = errorframe::to_error_coords(measured, t, &self.reference)?;
        let v = v_hat + tube::ancillary_feedback(&e, &e_hat, self.tube.sigma);
        Ok(self.clamp(&v).0)
    }
}

/// One sampling instant of the loop.
pub fn control_step(measured: &VehicleState, t: f64, ctrl: &mut ControllerState) -> Result<StepOutcome> {
    ctrl.clock = t;
    let e = errorframe::to_error_coords(measured, t, &ctrl.reference)?;
    let newly_discovered = ctrl.world.detect_obstacles(&measured.position());
    let forced_resolve = newly_discovered.iter().any(|&id| ctrl.invalidates_plan(id));
    if forced_resolve {
        ctrl.stats.forced_resolves += 1;
    }
    let in_certified_domain = ctrl.tube.domain.contains(&e);
    if !in_certified_domain {
        ctrl.stats.domain_exits += 1;
        log::debug!("t = {t:.3}: error {:?} outside the certified domain", e.triple());
    }

    let program = fhocp::transcribe(
        &e,
        t,
        &ctrl.fhocp,
        &ctrl.tightened_set,
        &ctrl.tightened_box,
        &ctrl.reference,
        &ctrl.world,
    );
    let warm = match (&ctrl.last_solution, forced_resolve) {
        (Some(sol), false) => Some(fhocp::shift_inputs(&sol.inputs)),
        _ => None,
    };
    let started = Instant::now();
    let sol = fhocp::solve(&program, warm.as_deref());
    let solve_ms = started.elapsed().as_secs_f64() * 1e3;
    ctrl.stats.solves += 1;

    let (v_hat, status) = if sol.status.is_feasible() {
        ctrl.fallback_plan = fhocp::shift_inputs(&sol.inputs);
        let v = sol.inputs[0];
        ctrl.last_solution = Some(sol);
        (v, program_status(&ctrl.last_solution))
    } else {
        ctrl.stats.fallbacks += 1;
        log::warn!("t = {t:.3}: FHOCP infeasible, falling back");
        let v = if ctrl.fallback_plan.is_empty() {
            BodyVelocity::ZERO
        } else {
            ctrl.fallback_plan.remove(0)
        };
        (v, SolverStatus::Fallback)
    };

    // e_hat(t_k) = e(t_k)
    ctrl.nominal_error = Some(e);
    ctrl.nominal_state = Some(*measured);
    ctrl.committed = Some(v_hat);
    let v = v_hat + tube::ancillary_feedback(&e, &e, ctrl.tube.sigma);
    let (applied, clamped) = ctrl.clamp(&v);
    Ok(StepOutcome {
        applied,
        nominal_input: v_hat,
        error: e,
        status,
        newly_discovered,
        forced_resolve,
        clamped,
        in_certified_domain,
        solve_ms,
    })
}

fn program_status(sol: &Option<FhocpSolution>) -> SolverStatus {
    sol.as_ref().map_or(SolverStatus::Fallback, |s| s.status)
}

/// Advances the nominal vehicle, and with it `e_hat`, by `dt_sub` under the
/// committed nominal input.
pub fn intersample_nominal_propagate(ctrl: &mut ControllerState, dt_sub: f64) -> Result<()> {
    let (Some(v_hat), Some(x_hat)) = (ctrl.committed, ctrl.nominal_state) else {
        return Err(Error::config("no committed nominal input to propagate"));
    };
    let t = ctrl.clock;
    let next = vehicle::step(&x_hat, &v_hat, |_, _| Vector4::zeros(), t, dt_sub)?;
    ctrl.clock = t + dt_sub;
    ctrl.nominal_error = Some(errorframe::to_error_coords(&next, ctrl.clock, &ctrl.reference)?);
    ctrl.nominal_state = Some(next);
    Ok(())
}
