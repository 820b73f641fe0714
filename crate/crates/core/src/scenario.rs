//! Scenario files: one TOML document, versioned by `schema_version`, with
//! unknown keys rejected. [`Scenario::load`] parses, resolves the tube
//! parameters and validates the whole set-up, so a loaded scenario is ready
//! to run.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::errorframe::{self, ErrorConstraintSet, ReferenceTrajectory};
use crate::fhocp::FhocpConfig;
use crate::geometry::{KnownWorld, Obstacle, Workspace};
use crate::tube::{self, CertificationRequest, OperationalDomain, TubeParameters};
use crate::vehicle::{CurrentModel, DisturbanceModel, SwayModel, VehicleState, VelocityBox};
use crate::{Mat3, Vec3};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema_version: u32,
    /// Simulated time in seconds.
    pub duration: f64,
    /// Control period, also the FHOCP step.
    pub dt: f64,
    /// Plant integration steps per control period.
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    /// Instants per control period at which the input is recomputed.
    #[serde(default = "default_actuation_substeps")]
    pub actuation_substeps: usize,
    #[serde(default)]
    pub seed: u64,
    pub workspace: WorkspaceSpec,
    pub initial_state: InitialStateSpec,
    pub reference: ReferenceSpec,
    #[serde(default)]
    pub disturbance: DisturbanceSpec,
    pub sway: Option<SwaySpec>,
    pub velocity_box: VelocityBoxSpec,
    pub constraints: ConstraintSpec,
    pub tube: TubeSpec,
    pub fhocp: FhocpSpec,
    #[serde(default)]
    pub checks: CheckSpec,
}

fn default_substeps() -> usize {
    10
}

fn default_actuation_substeps() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkspaceSpec {
    pub boundary_center: [f64; 3],
    pub boundary_radius: f64,
    pub vehicle_radius: f64,
    pub sensing_radius: f64,
    #[serde(default)]
    pub obstacles: Vec<ObstacleSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleSpec {
    pub center: [f64; 3],
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialStateSpec {
    pub position: [f64; 3],
    pub psi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceSpec {
    Stationary {
        point: [f64; 3],
    },
    Line {
        origin: [f64; 3],
        velocity: [f64; 3],
    },
    /// `center + radius [sin(2 pi t / period + phase), cos(2 pi t / period + phase), 0]`.
    Circle {
        center: [f64; 3],
        radius: f64,
        period: f64,
        #[serde(default)]
        phase: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DisturbanceSpec {
    #[default]
    None,
    /// `[h sin(2 pi t / period + phase), h cos(2 pi t / period + phase), v sin(2 pi t / period + vertical_phase)]`.
    Rotating {
        horizontal: f64,
        vertical: f64,
        period: f64,
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        vertical_phase: f64,
    },
    Polar {
        speed: f64,
        heading: f64,
        inclination: f64,
    },
    /// A rotating current drawn per run from the scenario seed: amplitudes
    /// uniform in `[max / 2, max]`, period uniform in
    /// `[period_min, period_max]`, random sense of rotation and phases.
    Random {
        horizontal_max: f64,
        vertical_max: f64,
        period_min: f64,
        period_max: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwaySpec {
    pub amplitude: f64,
    pub period: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VelocityBoxSpec {
    pub u_max: f64,
    pub w_max: f64,
    pub r_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSpec {
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum TubeSpec {
    /// Estimate the constants at load time.
    Certify {
        domain: OperationalDomain,
        margin: f64,
        samples: usize,
        seed: u64,
    },
    /// Read a file written by `certify`; relative paths resolve against the
    /// scenario file's directory.
    Artifact { path: PathBuf },
    /// Constants given directly; `xi_tilde` and `rho_tilde` are derived.
    Inline {
        lip1: f64,
        lip2: f64,
        j_lower: f64,
        sigma: f64,
        domain: OperationalDomain,
    },
}

/// A weight matrix: either its diagonal or all nine entries by row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightSpec {
    Diagonal([f64; 3]),
    Full([[f64; 3]; 3]),
}

impl WeightSpec {
    pub fn matrix(&self) -> Mat3 {
        match self {
            WeightSpec::Diagonal(d) => Mat3::from_diagonal(&Vec3::from(*d)),
            WeightSpec::Full(rows) => Mat3::from_fn(|i, j| rows[i][j]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FhocpSpec {
    /// Prediction horizon `T` in seconds; must be a multiple of `dt`.
    pub horizon: f64,
    pub q: WeightSpec,
    pub r: WeightSpec,
    pub p: WeightSpec,
    pub terminal_eps: f64,
    pub terminal_penalty: f64,
    pub max_iterations: usize,
    pub screening_distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckSpec {
    #[serde(default)]
    pub allow_fallback: bool,
    /// Number of `e_d` peaks the run must show, if given.
    pub expected_peaks: Option<usize>,
}

/// A validated, ready-to-run scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub workspace: Arc<Workspace>,
    pub initial_state: VehicleState,
    pub reference: ReferenceTrajectory,
    pub input_box: VelocityBox,
    pub error_set: ErrorConstraintSet,
    pub tube: TubeParameters,
    /// Present when the tube was certified at load time.
    pub certification: Option<CertificationRequest>,
    pub fhocp: FhocpConfig,
    /// Shrink applied to the nominal input box.
    pub input_margin: f64,
    /// Disturbance bound `xi_tilde` in error coordinates implied by the scenario.
    pub xi_tilde: f64,
    /// `R_bar / (V_bar + xi_tilde)`.
    pub horizon_limit: f64,
    pub steps: usize,
    pub seed: u64,
}

fn vec3(a: [f64; 3]) -> Vec3 {
    Vec3::from(a)
}

fn scenario_err(msg: impl Into<String>) -> Error {
    Error::Scenario(msg.into())
}

/// `value / dt` as an integer, if it is one up to rounding.
fn whole_steps(value: f64, dt: f64) -> Option<usize> {
    let k = (value / dt).round();
    ((k * dt - value).abs() <= 1e-9 * value.abs().max(1.0) && k >= 0.0).then_some(k as usize)
}

impl ScenarioFile {
    pub fn from_toml_str(text: &str) -> std::result::Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// Horizontal and vertical disturbance bounds, sway included.
    pub fn disturbance_bounds(&self) -> (f64, f64) {
        let (h, v) = match &self.disturbance {
            DisturbanceSpec::None => (0.0, 0.0),
            DisturbanceSpec::Rotating {
                horizontal, vertical, ..
            } => (horizontal.abs(), vertical.abs()),
            DisturbanceSpec::Polar { .. } => {
                let c = self.current_model(0).expect("polar current needs no draw");
                (c.horizontal_bound(), c.vertical_bound())
            }
            DisturbanceSpec::Random {
                horizontal_max,
                vertical_max,
                ..
            } => (horizontal_max.abs(), vertical_max.abs()),
        };
        (h + self.sway.map_or(0.0, |s| s.amplitude.abs()), v)
    }

    /// The current for a run with the given seed.
    pub fn current_model(&self, seed: u64) -> Result<CurrentModel> {
        Ok(match self.disturbance {
            DisturbanceSpec::None => CurrentModel::None,
            DisturbanceSpec::Rotating {
                horizontal,
                vertical,
                period,
                phase,
                vertical_phase,
            } => CurrentModel::Rotating {
                horizontal,
                vertical,
                rate: TAU / period,
                phase,
                vertical_phase,
            },
            DisturbanceSpec::Polar {
                speed,
                heading,
                inclination,
            } => CurrentModel::Polar {
                speed,
                heading,
                inclination,
            },
            DisturbanceSpec::Random {
                horizontal_max,
                vertical_max,
                period_min,
                period_max,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let horizontal = horizontal_max * rng.random_range(0.5..=1.0);
                let vertical = vertical_max * rng.random_range(0.5..=1.0);
                let period = if period_max > period_min {
                    rng.random_range(period_min..=period_max)
                } else {
                    period_min
                };
                let sense = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                CurrentModel::Rotating {
                    horizontal,
                    vertical,
                    rate: sense * TAU / period,
                    phase: rng.random_range(0.0..TAU),
                    vertical_phase: rng.random_range(0.0..TAU),
                }
            }
        })
    }

    fn check_disturbance(&self) -> Result<()> {
        let positive = |name: &str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(scenario_err(format!("disturbance {name} = {x} must be > 0")))
            }
        };
        let finite_nonneg = |name: &str, x: f64| {
            if x >= 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(scenario_err(format!("disturbance {name} = {x} must be >= 0")))
            }
        };
        match self.disturbance {
            DisturbanceSpec::None => {}
            DisturbanceSpec::Rotating {
                horizontal,
                vertical,
                period,
                ..
            } => {
                finite_nonneg("horizontal", horizontal)?;
                finite_nonneg("vertical", vertical)?;
                positive("period", period)?;
            }
            DisturbanceSpec::Polar { speed, .. } => finite_nonneg("speed", speed)?,
            DisturbanceSpec::Random {
                horizontal_max,
                vertical_max,
                period_min,
                period_max,
            } => {
                finite_nonneg("horizontal_max", horizontal_max)?;
                finite_nonneg("vertical_max", vertical_max)?;
                positive("period_min", period_min)?;
                if !(period_max >= period_min) {
                    return Err(scenario_err("disturbance period_max must be >= period_min"));
                }
            }
        }
        if let Some(s) = self.sway {
            finite_nonneg("sway amplitude", s.amplitude)?;
            positive("sway period", s.period)?;
        }
        Ok(())
    }
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file = ScenarioFile::from_toml_str(&text).map_err(|source| Error::Toml {
            path: path.into(),
            source,
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Scenario::from_file(file, base)
    }

    /// Validates `file`; artifact paths are resolved against `base_dir`.
    pub fn from_file(file: ScenarioFile, base_dir: &Path) -> Result<Self> {
        if file.schema_version != SCHEMA_VERSION {
            return Err(scenario_err(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                file.schema_version
            )));
        }
        if !(file.dt > 0.0) || !file.dt.is_finite() {
            return Err(scenario_err(format!("dt = {} must be > 0", file.dt)));
        }
        if !(file.duration >= 0.0) || !file.duration.is_finite() {
            return Err(scenario_err(format!("duration = {} must be >= 0", file.duration)));
        }
        let steps = whole_steps(file.duration, file.dt).ok_or_else(|| {
            scenario_err(format!(
                "duration {} is not a multiple of dt {}",
                file.duration, file.dt
            ))
        })?;
        if file.substeps == 0 || file.actuation_substeps == 0 || !file.substeps.is_multiple_of(file.actuation_substeps)
        {
            return Err(scenario_err(format!(
                "substeps ({}) must be a positive multiple of actuation_substeps ({})",
                file.substeps, file.actuation_substeps
            )));
        }

        let ws = &file.workspace;
        let workspace = Workspace {
            boundary_center: vec3(ws.boundary_center),
            boundary_radius: ws.boundary_radius,
            obstacles: ws
                .obstacles
                .iter()
                .enumerate()
                .map(|(i, o)| Obstacle::new(i + 1, vec3(o.center), o.radius))
                .collect(),
            vehicle_radius: ws.vehicle_radius,
            sensing_radius: ws.sensing_radius,
        };
        let report = workspace.validate();
        if !report.passed() {
            let msgs: Vec<String> = report.violations.iter().map(|v| v.to_string()).collect();
            return Err(scenario_err(format!("workspace: {}", msgs.join("; "))));
        }
        let workspace = Arc::new(workspace);

        let reference = match file.reference {
            ReferenceSpec::Stationary { point } => ReferenceTrajectory::Stationary { point: vec3(point) },
            ReferenceSpec::Line { origin, velocity } => ReferenceTrajectory::Line {
                origin: vec3(origin),
                velocity: vec3(velocity),
            },
            ReferenceSpec::Circle {
                center,
                radius,
                period,
                phase,
            } => {
                if !(radius > 0.0 && period > 0.0) {
                    return Err(scenario_err("circle radius and period must be > 0"));
                }
                ReferenceTrajectory::Circle {
                    center: vec3(center),
                    radius,
                    period,
                    phase,
                }
            }
        };

        let b = file.velocity_box;
        let input_box = VelocityBox::new(b.u_max, b.w_max, b.r_max)?;
        let error_set = ErrorConstraintSet::new(file.constraints.epsilon)?;
        file.check_disturbance()?;
        let (h_bound, v_bound) = file.disturbance_bounds();
        let xi_tilde = errorframe::xi_bound_split(error_set.epsilon, h_bound, v_bound);

        let (tube, certification) = match &file.tube {
            TubeSpec::Certify {
                domain,
                margin,
                samples,
                seed,
            } => {
                let request = CertificationRequest {
                    domain: *domain,
                    margin: *margin,
                    samples: *samples,
                    seed: *seed,
                };
                (tube::certify(&request, &input_box, xi_tilde)?, Some(request))
            }
            TubeSpec::Artifact { path } => {
                let path = if path.is_absolute() {
                    path.clone()
                } else {
                    base_dir.join(path)
                };
                let params = tube::read_artifact(&path)?;
                if params.xi_tilde < xi_tilde {
                    return Err(scenario_err(format!(
                        "tube artifact certified for xi_tilde = {} but the scenario needs {xi_tilde}",
                        params.xi_tilde
                    )));
                }
                (params, None)
            }
            TubeSpec::Inline {
                lip1,
                lip2,
                j_lower,
                sigma,
                domain,
            } => {
                domain.validate()?;
                (
                    TubeParameters::new(*lip1, *lip2, *j_lower, xi_tilde, *sigma, *domain)?,
                    None,
                )
            }
        };
        tube.validate()?;

        let f = &file.fhocp;
        let horizon_steps = whole_steps(f.horizon, file.dt).filter(|&n| n > 0).ok_or_else(|| {
            scenario_err(format!(
                "horizon {} is not a positive multiple of dt {}",
                f.horizon, file.dt
            ))
        })?;
        let fhocp = FhocpConfig {
            steps: horizon_steps,
            dt: file.dt,
            q: f.q.matrix(),
            r: f.r.matrix(),
            p: f.p.matrix(),
            terminal_eps: f.terminal_eps,
            terminal_penalty: f.terminal_penalty,
            max_iterations: f.max_iterations,
            screening_distance: f.screening_distance,
        };
        fhocp.validate()?;

        let horizon_limit = tube::max_horizon(workspace.sensing_radius, input_box.v_bar(), tube.xi_tilde);
        if f.horizon > horizon_limit {
            return Err(scenario_err(format!(
                "horizon {} exceeds R_bar / (V_bar + xi_tilde) = {horizon_limit}",
                f.horizon
            )));
        }

        // kappa vanishes at the sampling instants when the input is only
        // recomputed there; otherwise it can reach sigma * rho_tilde.
        let input_margin = if file.actuation_substeps == 1 {
            0.0
        } else {
            tube.feedback_bound()
        };
        let (tightened_set, _) = tube::tighten_sets_with_margin(&error_set, &input_box, tube.rho_tilde, input_margin)?;
        if !fhocp.terminal_set_nonempty(&tightened_set) {
            return Err(Error::EmptyTightenedSet(format!(
                "no error with e_d >= {} has |e|_P <= {}",
                tightened_set.epsilon, fhocp.terminal_eps
            )));
        }

        let p = file.initial_state.position;
        let initial_state = VehicleState::new(p[0], p[1], p[2], file.initial_state.psi);
        if !initial_state.is_finite() {
            return Err(Error::NonFinite("initial state"));
        }
        let world = KnownWorld::omniscient(workspace.clone());
        if !world.is_state_admissible(&initial_state) {
            return Err(scenario_err(
                "initial vehicle ball intersects an obstacle or the boundary",
            ));
        }
        let e0 = errorframe::to_error_coords(&initial_state, 0.0, &reference)?;
        error_set.check_distance(&e0)?;

        let seed = file.seed;
        Ok(Scenario {
            file,
            workspace,
            initial_state,
            reference,
            input_box,
            error_set,
            tube,
            certification,
            fhocp,
            input_margin,
            xi_tilde,
            horizon_limit,
            steps,
            seed,
        })
    }

    /// The same scenario with another seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut s = self.clone();
        s.seed = seed;
        s.file.seed = seed;
        s
    }

    /// Disturbance acting on the plant for this scenario's seed.
    pub fn disturbance(&self) -> Result<DisturbanceModel> {
        Ok(DisturbanceModel {
            current: self.file.current_model(self.seed)?,
            sway: self.file.sway.map(|s| SwayModel {
                amplitude: s.amplitude,
                period: s.period,
            }),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const CIRCLE: &str = r#"
schema_version = 1
duration = 1.0
dt = 0.1

[workspace]
boundary_center = [0.0, 0.0, 0.0]
boundary_radius = 10.0
vehicle_radius = 0.25
sensing_radius = 1.5
obstacles = [{ center = [3.0, 0.0, 0.0], radius = 0.5 }]

[initial_state]
position = [-0.5, 3.0, 0.0]
psi = 0.0

[reference]
kind = "circle"
center = [0.0, 0.0, 0.0]
radius = 3.0
period = 50.0

[disturbance]
kind = "rotating"
horizontal = 0.1
vertical = 0.1
period = 7.5

[velocity_box]
u_max = 0.4
w_max = 0.3
r_max = 0.5

[constraints]
epsilon = 0.1

[tube]
source = "inline"
lip1 = 1.6
lip2 = 1.0
j_lower = 0.25
sigma = 26.0
domain = { ed_min = 1.0, ed_max = 6.0, ez_max = 2.0, a_min = 0.5, ref_speed_max = 0.4 }

[fhocp]
horizon = 0.8
q = [1.0, 1.0, 1.0]
r = [0.1, 0.1, 0.1]
p = [5.0, 5.0, 5.0]
terminal_eps = 1.0
terminal_penalty = 10.0
max_iterations = 50
screening_distance = 1.0
"#;

    fn parse(text: &str) -> Result<Scenario> {
        let file = ScenarioFile::from_toml_str(text).map_err(|e| scenario_err(e.to_string()))?;
        Scenario::from_file(file, Path::new("."))
    }

    #[test]
    fn loads_and_derives() {
        let s = parse(CIRCLE).unwrap();
        assert_eq!(s.steps, 10);
        assert_eq!(s.fhocp.steps, 8);
        assert_eq!(s.input_margin, 0.0);
        let expected = (100.0f64 * 0.01 + 0.01).sqrt();
        assert!((s.xi_tilde - expected).abs() < 1e-12);
        assert!((s.horizon_limit - 1.5 / (0.5f64.sqrt() + expected)).abs() < 1e-12);
        assert_eq!(s.workspace.obstacles[0].id, 1);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = CIRCLE.replace("epsilon = 0.1", "epsilon = 0.1\nfoo = 2");
        assert!(ScenarioFile::from_toml_str(&text).is_err());
        let text = CIRCLE.replace("period = 7.5", "period = 7.5\nrate = 1.0");
        assert!(ScenarioFile::from_toml_str(&text).is_err());
    }

    #[test]
    fn rejects_misaligned_duration_and_version() {
        assert!(parse(&CIRCLE.replace("duration = 1.0", "duration = 1.05")).is_err());
        assert!(parse(&CIRCLE.replace("schema_version = 1", "schema_version = 2")).is_err());
        assert!(parse(&CIRCLE.replace("horizon = 0.8", "horizon = 0.75")).is_err());
    }

    #[test]
    fn full_weight_matrix() {
        let text = CIRCLE.replace(
            "q = [1.0, 1.0, 1.0]",
            "q = [[2.0, 0.5, 0.0], [0.5, 1.0, 0.0], [0.0, 0.0, 1.0]]",
        );
        let s = parse(&text).unwrap();
        assert_eq!(s.fhocp.q[(0, 1)], 0.5);
        assert_eq!(s.fhocp.q[(1, 0)], 0.5);
    }

    #[test]
    fn random_disturbance_is_seeded_and_bounded() {
        let text = CIRCLE.replace(
            "kind = \"rotating\"\nhorizontal = 0.1\nvertical = 0.1\nperiod = 7.5",
            "kind = \"random\"\nhorizontal_max = 0.1\nvertical_max = 0.1\nperiod_min = 5.0\nperiod_max = 20.0",
        );
        let s = parse(&text).unwrap();
        let a = s.with_seed(3).disturbance().unwrap();
        let b = s.with_seed(3).disturbance().unwrap();
        let c = s.with_seed(4).disturbance().unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        for m in [a, c] {
            assert!(m.current.horizontal_bound() <= 0.1 && m.current.vertical_bound() <= 0.1);
        }
    }

    #[test]
    fn empty_terminal_set_is_rejected() {
        let text = CIRCLE.replace("terminal_eps = 1.0", "terminal_eps = 0.5");
        assert!(matches!(parse(&text), Err(Error::EmptyTightenedSet(_))));
    }

    #[test]
    fn substep_tightening_needs_room() {
        let text = CIRCLE.replace("dt = 0.1", "dt = 0.1\nactuation_substeps = 2");
        assert!(matches!(parse(&text), Err(Error::EmptyTightenedSet(_))));
    }
}
