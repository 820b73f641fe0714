//! Closed-loop simulation: the plant is integrated with fixed-step RK4 over
//! `substeps` per control period, the controller runs at every period.

use std::num::NonZeroUsize;
use std::thread;

use crate::controller::{self, ControllerState, ControllerStats};
use crate::error::Result;
use crate::errorframe;
use crate::fhocp::SolverStatus;
use crate::geometry::KnownWorld;
use crate::scenario::Scenario;
use crate::vehicle::{self, BodyVelocity, VehicleState};
use crate::Vec3;

/// One control period. Errors are `(e_d, e_z, e_o)` triples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRecord {
    pub t: f64,
    /// Measured state at `t`.
    pub state: VehicleState,
    /// Input applied at `t`.
    pub input: BodyVelocity,
    /// Real error at `t`.
    pub error: Vec3,
    /// Nominal error predicted for `t + dt`, before the next reset.
    pub nominal: Vec3,
    /// Largest `|e - e_hat|` over `(t, t + dt]`.
    pub rho_norm: f64,
    /// Ground-truth clearance at `t`.
    pub clearance: f64,
    pub n_discovered: usize,
    pub status: SolverStatus,
    /// Wall time of the solve; zero unless timing was requested.
    pub solve_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimLog {
    pub records: Vec<LogRecord>,
    /// Why the loop stopped early, if it did.
    pub abort_reason: Option<String>,
    pub stats: ControllerStats,
}

impl SimLog {
    pub fn aborted(&self) -> bool {
        self.abort_reason.is_some() || self.records.last().is_some_and(|r| r.status == SolverStatus::Aborted)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimOptions {
    /// Record solver wall time. Off by default so that logs are reproducible
    /// byte for byte.
    pub record_timing: bool,
}

fn abort_record(t: f64, state: &VehicleState, world: &KnownWorld) -> LogRecord {
    let nan = Vec3::repeat(f64::NAN);
    LogRecord {
        t,
        state: *state,
        input: BodyVelocity::ZERO,
        error: nan,
        nominal: nan,
        rho_norm: f64::NAN,
        clearance: world.workspace().clearance(&state.position()),
        n_discovered: world.discovered().len(),
        status: SolverStatus::Aborted,
        solve_ms: 0.0,
    }
}

pub fn run_scenario(scenario: &Scenario) -> Result<SimLog> {
    run_scenario_with(scenario, SimOptions::default())
}

/// Runs the closed loop for the whole duration. Set-up problems are
/// returned as errors; a failure inside the loop ends the log with an
/// `aborted` record instead.
pub fn run_scenario_with(scenario: &Scenario, options: SimOptions) -> Result<SimLog> {
    let disturbance = scenario.disturbance()?;
    let mut ctrl = ControllerState::new(
        KnownWorld::new(scenario.workspace.clone()),
        scenario.tube,
        scenario.fhocp.clone(),
        scenario.reference,
        scenario.error_set,
        scenario.input_box,
        scenario.input_margin,
    )?;
    let dt = scenario.file.dt;
    let substeps = scenario.file.substeps;
    let per_actuation = substeps / scenario.file.actuation_substeps;
    let h = dt / substeps as f64;
    let omega = |t: f64, s: &VehicleState| disturbance.omega(t, s);

    let mut log = SimLog {
        records: Vec::with_capacity(scenario.steps),
        ..SimLog::default()
    };
    let mut state = scenario.initial_state;
    for k in 0..scenario.steps {
        let t = k as f64 * dt;
        let outcome = match controller::control_step(&state, t, &mut ctrl) {
            Ok(o) => o,
            Err(e) => {
                log::error!("t = {t:.3}: controller aborted: {e}");
                log.records.push(abort_record(t, &state, &ctrl.world));
                log.abort_reason = Some(e.to_string());
                break;
            }
        };
        let start = state;
        let interval = (|| -> Result<(VehicleState, f64)> {
            let mut x = state;
            let mut input = outcome.applied;
            let mut rho_max = 0.0f64;
            for j in 0..substeps {
                let tj = t + j as f64 * h;
                if j > 0 && j % per_actuation == 0 {
                    input = ctrl.ancillary_input(&x, tj)?;
                }
                x = vehicle::step(&x, &input, omega, tj, h)?;
                controller::intersample_nominal_propagate(&mut ctrl, h)?;
                let e = errorframe::to_error_coords(&x, t + (j + 1) as f64 * h, &scenario.reference)?;
                let e_hat = ctrl.nominal_error.expect("propagated above");
                rho_max = rho_max.max((e.triple() - e_hat.triple()).norm());
            }
            Ok((x, rho_max))
        })();
        let (next, rho_norm) = match interval {
            Ok(v) => v,
            Err(e) => {
                log::error!("t = {t:.3}: simulation aborted: {e}");
                log.records.push(abort_record(t, &start, &ctrl.world));
                log.abort_reason = Some(e.to_string());
                break;
            }
        };
        log.records.push(LogRecord {
            t,
            state: start,
            input: outcome.applied,
            error: outcome.error.triple(),
            nominal: ctrl.nominal_error.expect("propagated").triple(),
            rho_norm,
            clearance: scenario.workspace.clearance(&start.position()),
            n_discovered: ctrl.world.discovered().len(),
            status: outcome.status,
            solve_ms: if options.record_timing { outcome.solve_ms } else { 0.0 },
        });
        state = next;
    }
    log.stats = ctrl.stats;
    Ok(log)
}

/// One Monte Carlo run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub index: usize,
    pub seed: u64,
    pub log: Result<SimLog, String>,
}

/// Runs `runs` copies of the scenario with seeds `base_seed + i` on up to
/// `workers` threads; results come back in index order.
pub fn run_monte_carlo(scenario: &Scenario, runs: usize, base_seed: u64, workers: usize) -> Vec<RunResult> {
    let workers = workers.clamp(1, runs.max(1));
    let mut slots: Vec<Option<RunResult>> = vec![None; runs];
    thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                scope.spawn(move || {
                    (w..runs)
                        .step_by(workers)
                        .map(|i| {
                            let seed = base_seed.wrapping_add(i as u64);
                            let log = run_scenario(&scenario.with_seed(seed)).map_err(|e| e.to_string());
                            RunResult { index: i, seed, log }
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for handle in handles {
            for r in handle.join().expect("simulation worker panicked") {
                let i = r.index;
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|r| r.expect("every index is run")).collect()
}

/// Number of worker threads to use by default.
pub fn default_workers() -> usize {
    thread::available_parallelism().map_or(1, NonZeroUsize::get)
}
