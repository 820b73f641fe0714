//! Spherical-world workspace: a bounding ball, ball obstacles, and a
//! range-ball sensor that discovers obstacles as the vehicle moves.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use crate::vehicle::VehicleState;
use crate::Vec3;

#[derive(Debug, Clone, PartialEq)]
pub struct Obstacle {
    pub id: usize,
    pub center: Vec3,
    pub radius: f64,
}

impl Obstacle {
    pub fn new(id: usize, center: Vec3, radius: f64) -> Self {
        Obstacle { id, center, radius }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Workspace {
    pub boundary_center: Vec3,
    pub boundary_radius: f64,
    pub obstacles: Vec<Obstacle>,
    /// Radius of the ball circumscribing the vehicle.
    pub vehicle_radius: f64,
    pub sensing_radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonPositiveRadius {
        id: usize,
    },
    DuplicateId {
        id: usize,
    },
    SensingNotBeyondVehicle {
        sensing: f64,
        vehicle: f64,
    },
    /// Two obstacles leave no corridor wide enough for the vehicle.
    PairTooClose {
        first: usize,
        second: usize,
        separation: f64,
        required: f64,
    },
    /// Obstacle plus a vehicle-wide corridor does not fit inside the boundary.
    BoundaryTooClose {
        id: usize,
        reach: f64,
        boundary: f64,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonPositiveRadius { id } => write!(f, "obstacle {id}: radius must be > 0"),
            Violation::DuplicateId { id } => write!(f, "obstacle id {id} used more than once"),
            Violation::SensingNotBeyondVehicle { sensing, vehicle } => {
                write!(f, "sensing radius {sensing} must exceed vehicle radius {vehicle}")
            }
            Violation::PairTooClose {
                first,
                second,
                separation,
                required,
            } => write!(
                f,
                "obstacles {first} and {second}: separation {separation} <= required {required}"
            ),
            Violation::BoundaryTooClose { id, reach, boundary } => {
                write!(f, "obstacle {id}: reach {reach} >= boundary radius {boundary}")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

impl Workspace {
    /// Checks the spherical-world separation conditions. Never fails; the
    /// report lists every violated condition.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        let rbar = self.vehicle_radius;
        if self.sensing_radius <= rbar {
            violations.push(Violation::SensingNotBeyondVehicle {
                sensing: self.sensing_radius,
                vehicle: rbar,
            });
        }
        let mut seen = BTreeSet::new();
        for obs in &self.obstacles {
            if !(obs.radius > 0.0) {
                violations.push(Violation::NonPositiveRadius { id: obs.id });
            }
            if !seen.insert(obs.id) {
                violations.push(Violation::DuplicateId { id: obs.id });
            }
            let reach = (obs.center - self.boundary_center).norm() + obs.radius + 2.0 * rbar;
            if !(reach < self.boundary_radius) {
                violations.push(Violation::BoundaryTooClose {
                    id: obs.id,
                    reach,
                    boundary: self.boundary_radius,
                });
            }
        }
        for (i, a) in self.obstacles.iter().enumerate() {
            for b in &self.obstacles[i + 1..] {
                let separation = (a.center - b.center).norm();
                let required = 2.0 * rbar + a.radius + b.radius;
                if !(separation > required) {
                    violations.push(Violation::PairTooClose {
                        first: a.id,
                        second: b.id,
                        separation,
                        required,
                    });
                }
            }
        }
        ValidationReport { violations }
    }

    pub fn obstacle(&self, id: usize) -> Option<&Obstacle> {
        self.obstacles.iter().find(|o| o.id == id)
    }

    /// Signed distance from the vehicle ball to the boundary sphere.
    pub fn boundary_clearance(&self, position: &Vec3) -> f64 {
        self.boundary_radius - (position - self.boundary_center).norm() - self.vehicle_radius
    }

    /// Ground-truth clearance against every obstacle, known or not.
    pub fn clearance(&self, position: &Vec3) -> f64 {
        self.obstacles
            .iter()
            .map(|o| obstacle_clearance(o, self.vehicle_radius, position))
            .fold(self.boundary_clearance(position), f64::min)
    }
}

pub fn validate_spherical_world(workspace: &Workspace) -> ValidationReport {
    workspace.validate()
}

fn obstacle_clearance(obs: &Obstacle, vehicle_radius: f64, position: &Vec3) -> f64 {
    (position - obs.center).norm() - obs.radius - vehicle_radius
}

/// What the controller currently knows about the workspace.
///
/// The set of discovered obstacles only ever grows.
#[derive(Debug, Clone)]
pub struct KnownWorld {
    full: Arc<Workspace>,
    discovered: BTreeSet<usize>,
}

impl KnownWorld {
    pub fn new(full: Arc<Workspace>) -> Self {
        KnownWorld {
            full,
            discovered: BTreeSet::new(),
        }
    }

    /// A world in which every obstacle is already known.
    pub fn omniscient(full: Arc<Workspace>) -> Self {
        let discovered = full.obstacles.iter().map(|o| o.id).collect();
        KnownWorld { full, discovered }
    }

    pub fn workspace(&self) -> &Workspace {
        &self.full
    }

    pub fn discovered(&self) -> &BTreeSet<usize> {
        &self.discovered
    }

    pub fn discovered_obstacles(&self) -> impl Iterator<Item = &Obstacle> + '_ {
        self.full
            .obstacles
            .iter()
            .filter(move |o| self.discovered.contains(&o.id))
    }

    /// Adds every obstacle whose ball meets the sensing ball around
    /// `position`. Returns the ids that were not known before.
    pub fn detect_obstacles(&mut self, position: &Vec3) -> Vec<usize> {
        let range = self.full.sensing_radius;
        let mut fresh = Vec::new();
        for obs in &self.full.obstacles {
            if (position - obs.center).norm() <= range + obs.radius && self.discovered.insert(obs.id) {
                fresh.push(obs.id);
            }
        }
        fresh
    }

    /// Smallest signed gap between the vehicle ball and any known obstacle
    /// or the boundary; negative means overlap.
    pub fn min_clearance(&self, position: &Vec3) -> f64 {
        let rbar = self.full.vehicle_radius;
        self.discovered_obstacles()
            .map(|o| obstacle_clearance(o, rbar, position))
            .fold(self.full.boundary_clearance(position), f64::min)
    }

    /// Closed-set convention: zero clearance is admissible.
    pub fn is_state_admissible(&self, state: &VehicleState) -> bool {
        self.min_clearance(&state.position()) >= 0.0
    }
}
