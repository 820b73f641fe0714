//! Finite-horizon optimal control problem over the nominal error dynamics.
//!
//! Direct single shooting: the decision variables are the `N` input triples,
//! the nominal vehicle is rolled out disturbance-free with RK4 at `dt`, and
//! the error triple is read off at every knot. The cost is the rectangle-rule
//! integral of `|e|_Q^2 + |v|_R^2` plus `|e_N|_P^2`. Path constraints (distance
//! floor, obstacle and boundary clearance) are imposed at knots `1..=N`; the
//! terminal set is a soft constraint with a fixed penalty weight.
//!
//! The solver is a Gauss-Newton SQP on the l1 exact-penalty merit function.
//! Each subproblem linearises the near-active constraints with elastic slacks
//! and is solved by [`crate::qp::solve_qp`]; gradients are forward
//! differences.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::errorframe::{self, ErrorConstraintSet, ErrorState, ReferenceTrajectory};
use crate::geometry::{KnownWorld, Obstacle};
use crate::qp;
use crate::vehicle::{self, BodyVelocity, VehicleState, VelocityBox};
use crate::{Mat3, Vec3};

const FD_STEP: f64 = 1e-6;
const MU_INITIAL: f64 = 1e2;
const MU_GROWTH: f64 = 10.0;
const MU_MAX: f64 = 1e6;
/// Path constraints are considered satisfied above `-FEASIBILITY_TOL`.
pub const FEASIBILITY_TOL: f64 = 1e-7;
/// Curvature given to the elastic slacks so the subproblem stays strictly convex.
const SLACK_CURVATURE: f64 = 1.0;
/// Stop when the step in every input is below this.
const STEP_TOL: f64 = 1e-6;
/// ... or the model predicts a relative merit decrease below this.
const DECREASE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct FhocpConfig {
    /// Number of shooting intervals `N`.
    pub steps: usize,
    pub dt: f64,
    pub q: Mat3,
    pub r: Mat3,
    pub p: Mat3,
    /// Terminal-set radius in the `P` norm.
    pub terminal_eps: f64,
    /// Weight on the violation of the terminal set.
    pub terminal_penalty: f64,
    pub max_iterations: usize,
    /// Only constraints whose value is below this are linearised.
    pub screening_distance: f64,
}

impl FhocpConfig {
    pub fn horizon(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("horizon must have at least one step"));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::config(format!("sampling period {} must be > 0", self.dt)));
        }
        for (name, m) in [("Q", &self.q), ("R", &self.r), ("P", &self.p)] {
            let symmetric = (m - m.transpose()).amax() <= 1e-12 * (1.0 + m.amax());
            if !symmetric || m.cholesky().is_none() {
                return Err(Error::config(format!(
                    "weight {name} must be symmetric positive definite"
                )));
            }
        }
        if !(self.terminal_eps > 0.0) {
            return Err(Error::config(format!(
                "terminal radius {} must be > 0",
                self.terminal_eps
            )));
        }
        if !(self.terminal_penalty > 0.0) {
            return Err(Error::config("terminal penalty must be > 0"));
        }
        if self.max_iterations == 0 {
            return Err(Error::config("solver needs at least one iteration"));
        }
        Ok(())
    }

    /// Whether some point with `e_d >= epsilon` lies in the terminal set.
    ///
    /// The minimiser of `e' P e` on `e_d >= epsilon` is
    /// `epsilon * P^-1 e1 / (P^-1)_11`; if its offset leaves `[-1, 1]` the
    /// test falls back to the point `(epsilon, 0, 0)`.
    pub fn terminal_set_nonempty(&self, error_set: &ErrorConstraintSet) -> bool {
        let eps = error_set.epsilon;
        let norm = |e: Vec3| e.dot(&(self.p * e)).sqrt();
        if let Some(pinv) = self.p.try_inverse() {
            let col = pinv.column(0).into_owned();
            let e = col * (eps / col[0]);
            if e[2].abs() <= 1.0 && norm(e) <= self.terminal_eps {
                return true;
            }
        }
        norm(Vec3::new(eps, 0.0, 0.0)) <= self.terminal_eps
    }
}

pub fn stage_cost(e_hat: &ErrorState, v_hat: &BodyVelocity, config: &FhocpConfig) -> f64 {
    let e = e_hat.triple();
    let v = v_hat.to_vec3();
    e.dot(&(config.q * e)) + v.dot(&(config.r * v))
}

pub fn terminal_cost(e_hat: &ErrorState, config: &FhocpConfig) -> f64 {
    let e = e_hat.triple();
    e.dot(&(config.p * e))
}

/// `|e|_P <= terminal_eps` and `e` in the tightened error set.
pub fn in_terminal_set(
    e_hat: &ErrorState,
    config: &FhocpConfig,
    error_set: &ErrorConstraintSet,
    t: f64,
    reference: &ReferenceTrajectory,
    world: &KnownWorld,
) -> bool {
    terminal_cost(e_hat, config).sqrt() <= config.terminal_eps && error_set.contains(e_hat, t, reference, world)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverStatus {
    Solved,
    /// Path constraints hold but the terminal set was not reached.
    TerminalRelaxed,
    MaxIterations,
    Infeasible,
    /// The previous plan was reused because the solver failed.
    Fallback,
    /// The loop stopped at this sample.
    Aborted,
}

impl SolverStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolverStatus::Solved => "solved",
            SolverStatus::TerminalRelaxed => "terminal_relaxed",
            SolverStatus::MaxIterations => "max_iterations",
            SolverStatus::Infeasible => "infeasible",
            SolverStatus::Fallback => "fallback",
            SolverStatus::Aborted => "aborted",
        }
    }

    /// Path-feasible outcome of the optimiser itself.
    pub fn is_feasible(&self) -> bool {
        matches!(
            self,
            SolverStatus::Solved | SolverStatus::TerminalRelaxed | SolverStatus::MaxIterations
        )
    }
}

impl fmt::Display for SolverStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SolverStatus {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "solved" => SolverStatus::Solved,
            "terminal_relaxed" => SolverStatus::TerminalRelaxed,
            "max_iterations" => SolverStatus::MaxIterations,
            "infeasible" => SolverStatus::Infeasible,
            "fallback" => SolverStatus::Fallback,
            "aborted" => SolverStatus::Aborted,
            other => return Err(Error::config(format!("unknown solver status {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FhocpSolution {
    pub inputs: Vec<BodyVelocity>,
    /// `N + 1` nominal error states, the first being the supplied initial error.
    pub nominal_errors: Vec<ErrorState>,
    /// `N + 1` nominal vehicle states.
    pub nominal_states: Vec<VehicleState>,
    /// Stage plus terminal cost.
    pub cost: f64,
    /// `cost` plus the terminal penalty term; the quantity actually minimised.
    pub objective: f64,
    pub status: SolverStatus,
    pub iterations: usize,
    /// Largest path-constraint violation (0 when feasible).
    pub max_violation: f64,
}

/// One transcribed problem instance.
#[derive(Debug, Clone)]
pub struct Program {
    pub initial_state: VehicleState,
    pub initial_error: ErrorState,
    pub t0: f64,
    pub config: FhocpConfig,
    /// Tightened error set.
    pub error_set: ErrorConstraintSet,
    /// Tightened input box.
    pub input_box: VelocityBox,
    pub reference: ReferenceTrajectory,
    /// Obstacles known at transcription time.
    pub obstacles: Vec<Obstacle>,
    pub boundary_center: Vec3,
    pub boundary_radius: f64,
    pub vehicle_radius: f64,
}

pub fn transcribe(
    e0: &ErrorState,
    t0: f64,
    config: &FhocpConfig,
    error_set: &ErrorConstraintSet,
    input_box: &VelocityBox,
    reference: &ReferenceTrajectory,
    world: &KnownWorld,
) -> Program {
    let ws = world.workspace();
    Program {
        initial_state: errorframe::to_vehicle_state(e0, t0, reference),
        initial_error: *e0,
        t0,
        config: config.clone(),
        error_set: *error_set,
        input_box: *input_box,
        reference: *reference,
        obstacles: world.discovered_obstacles().cloned().collect(),
        boundary_center: ws.boundary_center,
        boundary_radius: ws.boundary_radius,
        vehicle_radius: ws.vehicle_radius,
    }
}

impl Program {
    pub fn num_variables(&self) -> usize {
        3 * self.config.steps
    }

    /// Path constraints per knot: distance floor, boundary, one per obstacle.
    fn constraints_per_knot(&self) -> usize {
        2 + self.obstacles.len()
    }

    pub fn knot_time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.config.dt
    }
}

/// Evaluation of a candidate input sequence.
struct Evaluation {
    states: Vec<Vector4<f64>>,
    errors: Vec<Vec3>,
    residuals: DVector<f64>,
    /// Path constraints `g >= 0`, knot-major.
    path: DVector<f64>,
    /// Terminal constraint `eps_T - |e_N|_P >= 0`.
    terminal: f64,
}

impl Evaluation {
    fn cost(&self) -> f64 {
        self.residuals.norm_squared()
    }

    fn path_violation(&self) -> f64 {
        self.path.iter().fold(0.0, |m: f64, g| m.max(-g))
    }

    fn terminal_violation(&self) -> f64 {
        (-self.terminal).max(0.0)
    }
}

/// Cached per-problem data for fast rollouts.
struct Shooting<'a> {
    prog: &'a Program,
    ref_pos: Vec<Vec3>,
    lq: Mat3,
    lr: Mat3,
    lp: Mat3,
    sqrt_dt: f64,
}

fn triple_at(state: &Vector4<f64>, pd: &Vec3) -> Vec3 {
    let ex = state[0] - pd[0];
    let ey = state[1] - pd[1];
    let ez = state[2] - pd[2];
    let ed = ex.hypot(ey);
    let eo = if ed > 0.0 {
        let (s, c) = state[3].sin_cos();
        ((ex * s - ey * c) / ed).clamp(-1.0, 1.0)
    } else {
        0.0
    };
    Vec3::new(ed, ez, eo)
}

#[inline]
fn nominal_step(x: &Vector4<f64>, u: &[f64], t: f64, dt: f64) -> Vector4<f64> {
    let zero = Vector4::zeros();
    vehicle::rk4_step(
        |_, s: &Vector4<f64>| vehicle::kinematics_raw(s[3], u[0], u[1], u[2], &zero),
        t,
        x,
        dt,
    )
}

impl<'a> Shooting<'a> {
    fn new(prog: &'a Program) -> Self {
        let c = &prog.config;
        let chol = |m: &Mat3| m.cholesky().expect("validated weight").l();
        Shooting {
            prog,
            ref_pos: (0..=c.steps)
                .map(|k| prog.reference.position(prog.knot_time(k)))
                .collect(),
            lq: chol(&c.q),
            lr: chol(&c.r),
            lp: chol(&c.p),
            sqrt_dt: c.dt.sqrt(),
        }
    }

    fn n(&self) -> usize {
        self.prog.config.steps
    }

    fn num_residuals(&self) -> usize {
        6 * self.n() + 3
    }

    /// Rolls out from knot `from`, reusing `base` for earlier knots.
    fn evaluate(&self, u: &[f64], base: Option<(&Evaluation, usize)>) -> Evaluation {
        let n = self.n();
        let prog = self.prog;
        let (mut states, mut errors, from) = match base {
            Some((b, from)) => (b.states[..=from].to_vec(), b.errors[..=from].to_vec(), from),
            None => {
                let x0 = prog.initial_state.to_vector();
                (vec![x0], vec![prog.initial_error.triple()], 0)
            }
        };
        states.reserve(n + 1);
        errors.reserve(n + 1);
        for k in from..n {
            let next = nominal_step(&states[k], &u[3 * k..3 * k + 3], prog.knot_time(k), prog.config.dt);
            errors.push(triple_at(&next, &self.ref_pos[k + 1]));
            states.push(next);
        }

        let mut residuals = DVector::zeros(self.num_residuals());
        for k in 0..n {
            let re = self.lq.transpose() * errors[k] * self.sqrt_dt;
            let uv = Vec3::new(u[3 * k], u[3 * k + 1], u[3 * k + 2]);
            let ru = self.lr.transpose() * uv * self.sqrt_dt;
            residuals.fixed_rows_mut::<3>(3 * k).copy_from(&re);
            residuals.fixed_rows_mut::<3>(3 * n + 3 * k).copy_from(&ru);
        }
        let rp = self.lp.transpose() * errors[n];
        residuals.fixed_rows_mut::<3>(6 * n).copy_from(&rp);

        let per = prog.constraints_per_knot();
        let mut path = DVector::zeros(n * per);
        let eps = prog.error_set.epsilon;
        let infl = prog.error_set.inflation;
        let rbar = prog.vehicle_radius;
        for k in 1..=n {
            let row = (k - 1) * per;
            let p = states[k].fixed_rows::<3>(0).into_owned();
            path[row] = errors[k][0] - eps;
            path[row + 1] = prog.boundary_radius - (p - prog.boundary_center).norm() - rbar - infl;
            for (j, obs) in prog.obstacles.iter().enumerate() {
                path[row + 2 + j] = (p - obs.center).norm() - obs.radius - rbar - infl;
            }
        }
        let terminal = prog.config.terminal_eps - rp.norm();
        Evaluation {
            states,
            errors,
            residuals,
            path,
            terminal,
        }
    }

    /// Forward-difference Jacobians of residuals, path constraints and terminal constraint.
    fn jacobians(&self, u: &[f64], base: &Evaluation) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
        let nv = u.len();
        let mut jr = DMatrix::zeros(base.residuals.len(), nv);
        let mut jg = DMatrix::zeros(base.path.len(), nv);
        let mut jt = DVector::zeros(nv);
        let mut up = u.to_vec();
        for j in 0..nv {
            let h = FD_STEP * (1.0 + u[j].abs());
            up[j] = u[j] + h;
            let e = self.evaluate(&up, Some((base, j / 3)));
            jr.set_column(j, &((&e.residuals - &base.residuals) / h));
            jg.set_column(j, &((&e.path - &base.path) / h));
            jt[j] = (e.terminal - base.terminal) / h;
            up[j] = u[j];
        }
        (jr, jg, jt)
    }

    fn merit(&self, e: &Evaluation, mu: f64) -> f64 {
        let viol: f64 = e.path.iter().map(|g| (-g).max(0.0)).sum();
        e.cost() + mu * viol + self.prog.config.terminal_penalty * e.terminal_violation()
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let b = self.prog.input_box.bounds();
        let ub: Vec<f64> = (0..self.n()).flat_map(|_| b).collect();
        let lb = ub.iter().map(|x| -x).collect();
        (lb, ub)
    }
}

/// One row of the optional per-solve trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub start: usize,
    pub iteration: usize,
    pub merit: f64,
    pub cost: f64,
    pub max_violation: f64,
    pub mu: f64,
    pub step: f64,
    pub alpha: f64,
}

pub fn write_trace(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.into(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

struct Attempt {
    u: Vec<f64>,
    eval: Evaluation,
    iterations: usize,
    converged: bool,
    feasible: bool,
}

fn objective_of(shoot: &Shooting<'_>, e: &Evaluation) -> f64 {
    e.cost() + shoot.prog.config.terminal_penalty * e.terminal_violation()
}

fn run_sqp(shoot: &Shooting<'_>, start: Vec<f64>, start_id: usize, trace: &mut Option<&mut Vec<TraceRow>>) -> Attempt {
    let prog = shoot.prog;
    let cfg = &prog.config;
    let nv = start.len();
    let (lb, ub) = shoot.bounds();
    let mut u: Vec<f64> = start
        .iter()
        .zip(lb.iter().zip(&ub))
        .map(|(x, (l, h))| x.clamp(*l, *h))
        .collect();
    let mut eval = shoot.evaluate(&u, None);
    let mut mu = MU_INITIAL;

    let mut best: Option<(Vec<f64>, f64)> = None;
    let consider = |u: &[f64], e: &Evaluation, best: &mut Option<(Vec<f64>, f64)>| {
        if e.path_violation() <= FEASIBILITY_TOL {
            let obj = objective_of(shoot, e);
            if best.as_ref().is_none_or(|(_, b)| obj < *b) {
                *best = Some((u.to_vec(), obj));
            }
        }
    };
    consider(&u, &eval, &mut best);

    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iterations {
        iterations += 1;
        let (jr, jg, jt) = shoot.jacobians(&u, &eval);
        let grad = jr.transpose() * &eval.residuals * 2.0;
        let mut gn = jr.transpose() * &jr * 2.0;
        for i in 0..nv {
            gn[(i, i)] += 1e-9;
        }

        let screened: Vec<usize> = (0..eval.path.len())
            .filter(|&i| eval.path[i] < cfg.screening_distance)
            .collect();
        let ns = screened.len() + 1;
        let nx = nv + ns;
        let mut h = DMatrix::zeros(nx, nx);
        h.view_mut((0, 0), (nv, nv)).copy_from(&gn);
        for i in nv..nx {
            h[(i, i)] = SLACK_CURVATURE;
        }
        let mut g = DVector::zeros(nx);
        g.rows_mut(0, nv).copy_from(&grad);
        for i in 0..screened.len() {
            g[nv + i] = mu;
        }
        g[nx - 1] = cfg.terminal_penalty;

        let rows = 2 * ns + 2 * nv;
        let mut a = DMatrix::zeros(rows, nx);
        let mut b = DVector::zeros(rows);
        for (s, &i) in screened.iter().enumerate() {
            a.view_mut((s, 0), (1, nv)).copy_from(&jg.row(i));
            a[(s, nv + s)] = 1.0;
            b[s] = -eval.path[i];
        }
        let t_row = ns - 1;
        a.view_mut((t_row, 0), (1, nv)).copy_from(&jt.transpose());
        a[(t_row, nx - 1)] = 1.0;
        b[t_row] = -eval.terminal;
        for s in 0..ns {
            a[(ns + s, nv + s)] = 1.0;
        }
        for j in 0..nv {
            a[(2 * ns + 2 * j, j)] = 1.0;
            b[2 * ns + 2 * j] = lb[j] - u[j];
            a[(2 * ns + 2 * j + 1, j)] = -1.0;
            b[2 * ns + 2 * j + 1] = u[j] - ub[j];
        }

        let sol = match qp::solve_qp(&h, &g, &a, &b) {
            Ok(s) => s,
            Err(err) => {
                log::debug!("subproblem failed: {err}");
                break;
            }
        };
        let d = sol.x.rows(0, nv).into_owned();
        let slack_max = sol.x.rows(nv, screened.len()).iter().fold(0.0, |m: f64, s| m.max(*s));

        // predicted decrease of the merit function under the linear-quadratic model
        let merit0 = shoot.merit(&eval, mu);
        let lin_path: f64 = screened
            .iter()
            .map(|&i| (-(eval.path[i] + jg.row(i).transpose().dot(&d))).max(0.0))
            .sum();
        let lin_term = (-(eval.terminal + jt.dot(&d))).max(0.0);
        let model =
            eval.cost() + grad.dot(&d) + 0.5 * d.dot(&(&gn * &d)) + mu * lin_path + cfg.terminal_penalty * lin_term;
        let pred = merit0 - model;

        let step = d.amax();
        if step < STEP_TOL || pred <= DECREASE_TOL * (1.0 + merit0.abs()) {
            if eval.path_violation() > FEASIBILITY_TOL && mu < MU_MAX {
                mu = (mu * MU_GROWTH).min(MU_MAX);
                continue;
            }
            converged = true;
            break;
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha >= 1e-3 {
            let trial: Vec<f64> = u
                .iter()
                .zip(d.iter())
                .zip(lb.iter().zip(&ub))
                .map(|((x, dx), (l, h))| (x + alpha * dx).clamp(*l, *h))
                .collect();
            let e = shoot.evaluate(&trial, None);
            if shoot.merit(&e, mu) <= merit0 - 1e-4 * alpha * pred {
                accepted = Some((trial, e));
                break;
            }
            alpha *= 0.5;
        }
        if let Some(tr) = trace.as_deref_mut() {
            tr.push(TraceRow {
                start: start_id,
                iteration: iterations,
                merit: merit0,
                cost: eval.cost(),
                max_violation: eval.path_violation(),
                mu,
                step,
                alpha: if accepted.is_some() { alpha } else { 0.0 },
            });
        }
        match accepted {
            Some((trial, e)) => {
                u = trial;
                eval = e;
                consider(&u, &eval, &mut best);
                if alpha * step < STEP_TOL {
                    converged = true;
                    break;
                }
            }
            None => {
                if eval.path_violation() > FEASIBILITY_TOL && mu < MU_MAX {
                    mu = (mu * MU_GROWTH).min(MU_MAX);
                    continue;
                }
                // no progress possible along the model direction
                converged = true;
                break;
            }
        }
        if slack_max > 1e-9 && mu < MU_MAX {
            mu = (mu * MU_GROWTH).min(MU_MAX);
        }
    }

    match best {
        Some((bu, _)) => {
            let e = shoot.evaluate(&bu, None);
            Attempt {
                u: bu,
                eval: e,
                iterations,
                converged,
                feasible: true,
            }
        }
        None => Attempt {
            u,
            eval,
            iterations,
            converged,
            feasible: false,
        },
    }
}

fn finish(shoot: &Shooting<'_>, at: Attempt) -> FhocpSolution {
    let prog = shoot.prog;
    let n = prog.config.steps;
    let inputs: Vec<BodyVelocity> = (0..n)
        .map(|k| BodyVelocity::new(at.u[3 * k], at.u[3 * k + 1], at.u[3 * k + 2]))
        .collect();
    let nominal_states: Vec<VehicleState> = at.eval.states.iter().map(VehicleState::from_vector).collect();
    let mut nominal_errors = vec![prog.initial_error];
    for (k, s) in nominal_states.iter().enumerate().skip(1) {
        let pd = shoot.ref_pos[k];
        let ctx = ErrorState::from_context(s.x - pd[0], s.y - pd[1], s.z - pd[2], s.psi);
        nominal_errors.push(ctx.unwrap_or(ErrorState {
            ex: 0.0,
            ey: 0.0,
            ez: s.z - pd[2],
            psi: s.psi,
            ed: 0.0,
            eo: 0.0,
        }));
    }
    let status = if !at.feasible {
        SolverStatus::Infeasible
    } else if !at.converged {
        SolverStatus::MaxIterations
    } else if at.eval.terminal_violation() > 0.0 {
        SolverStatus::TerminalRelaxed
    } else {
        SolverStatus::Solved
    };
    FhocpSolution {
        inputs,
        nominal_errors,
        nominal_states,
        cost: at.eval.cost(),
        objective: objective_of(shoot, &at.eval),
        status,
        iterations: at.iterations,
        max_violation: at.eval.path_violation(),
    }
}

fn better(a: &FhocpSolution, b: &FhocpSolution) -> bool {
    let rank = |s: &FhocpSolution| match s.status {
        SolverStatus::Solved | SolverStatus::TerminalRelaxed | SolverStatus::MaxIterations => 0,
        _ => 1,
    };
    (rank(a), a.objective) < (rank(b), b.objective)
}

/// Solves from the warm start (if any) and, unless that succeeds outright,
/// also from zero inputs; returns the better of the two.
pub fn solve(program: &Program, warm_start: Option<&[BodyVelocity]>) -> FhocpSolution {
    solve_traced(program, warm_start, None)
}

pub fn solve_traced(
    program: &Program,
    warm_start: Option<&[BodyVelocity]>,
    mut trace: Option<&mut Vec<TraceRow>>,
) -> FhocpSolution {
    let shoot = Shooting::new(program);
    let nv = program.num_variables();
    let cold = vec![0.0; nv];
    let warm = warm_start.map(|w| {
        let mut u = Vec::with_capacity(nv);
        for k in 0..program.config.steps {
            let v = w.get(k).or(w.last()).copied().unwrap_or(BodyVelocity::ZERO);
            u.extend([v.u, v.w, v.r]);
        }
        u
    });
    let mut best = None;
    if let Some(w) = warm {
        let sol = finish(&shoot, run_sqp(&shoot, w, 1, &mut trace));
        if sol.status == SolverStatus::Solved {
            return sol;
        }
        best = Some(sol);
    }
    let sol = finish(&shoot, run_sqp(&shoot, cold, 0, &mut trace));
    match best {
        Some(b) if !better(&sol, &b) => b,
        _ => sol,
    }
}

/// Shifts a plan by one step, repeating the last input.
pub fn shift_inputs(inputs: &[BodyVelocity]) -> Vec<BodyVelocity> {
    let mut out: Vec<BodyVelocity> = inputs.iter().skip(1).copied().collect();
    if let Some(last) = inputs.last() {
        out.push(*last);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verification {
    pub violations: Vec<String>,
    pub terminal_member: bool,
    pub cost: f64,
}

impl Verification {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Replays `inputs` through the plant integrator with no disturbance and
/// checks every constraint of `program` at every knot. Terminal membership is
/// reported, and required when `require_terminal` is set.
pub fn verify(program: &Program, inputs: &[BodyVelocity], require_terminal: bool) -> Verification {
    let cfg = &program.config;
    let mut violations = Vec::new();
    if inputs.len() != cfg.steps {
        violations.push(format!("expected {} inputs, got {}", cfg.steps, inputs.len()));
        return Verification {
            violations,
            terminal_member: false,
            cost: f64::INFINITY,
        };
    }
    let b = program.input_box;
    let tol = FEASIBILITY_TOL;
    let mut state = program.initial_state;
    let mut e = program.initial_error;
    let mut cost = 0.0;
    for (k, v) in inputs.iter().enumerate() {
        if !b.contains(v) {
            violations.push(format!("knot {k}: input {v:?} outside {b:?}"));
        }
        cost += cfg.dt * stage_cost(&e, v, cfg);
        let t = program.knot_time(k);
        state = match vehicle::step(&state, v, |_, _| Vector4::zeros(), t, cfg.dt) {
            Ok(s) => s,
            Err(err) => {
                violations.push(format!("knot {}: {err}", k + 1));
                break;
            }
        };
        e = match errorframe::to_error_coords(&state, t + cfg.dt, &program.reference) {
            Ok(e) => e,
            Err(err) => {
                violations.push(format!("knot {}: {err}", k + 1));
                break;
            }
        };
        if e.ed < program.error_set.epsilon - tol {
            violations.push(format!(
                "knot {}: e_d = {} below {}",
                k + 1,
                e.ed,
                program.error_set.epsilon
            ));
        }
        let p = state.position();
        let margin = program.error_set.inflation - tol;
        let bc = program.boundary_radius - (p - program.boundary_center).norm() - program.vehicle_radius;
        if bc < margin {
            violations.push(format!("knot {}: boundary clearance {bc}", k + 1));
        }
        for obs in &program.obstacles {
            let c = (p - obs.center).norm() - obs.radius - program.vehicle_radius;
            if c < margin {
                violations.push(format!("knot {}: obstacle {} clearance {c}", k + 1, obs.id));
            }
        }
    }
    cost += terminal_cost(&e, cfg);
    let terminal_member = violations.is_empty() && terminal_cost(&e, cfg).sqrt() <= cfg.terminal_eps + tol;
    if require_terminal && !terminal_member {
        violations.push("terminal error outside the terminal set".into());
    }
    Verification {
        violations,
        terminal_member,
        cost,
    }
}
