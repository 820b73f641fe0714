//! Off-line tube certification.
//!
//! The ancillary law `kappa(e, e_hat) = -sigma (e - e_hat)` keeps the deviation
//! `rho = e - e_hat` inside the ball of radius
//! `rho_tilde = xi_tilde / (sigma J_lower - L1 - L2)` provided the symmetric
//! part of `J` is bounded below by `J_lower > 0` and `J v`, `zeta` are
//! Lipschitz in `e` with constants `L1`, `L2`. None of these hold on the
//! whole error set, so they are estimated by sampling over an
//! [`OperationalDomain`].

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::errorframe::{self, Branch, ErrorConstraintSet, ErrorState};
use crate::vehicle::{BodyVelocity, VelocityBox};
use crate::{Mat3, Vec3};

pub const SIGMA_MIN: f64 = 1.0;
/// Relative safety factor applied to every sampled constant.
pub const INFLATION: f64 = 0.1;
pub const MIN_SAMPLES: usize = 10_000;
pub const ARTIFACT_SCHEMA_VERSION: u32 = 1;

/// Box in error coordinates on which the tube constants are certified:
/// `ed_min <= e_d <= ed_max`, `|e_z| <= ez_max`, and alignment `a >= a_min`
/// (equivalently `|e_o| <= sqrt(1 - a_min^2)` on the `a > 0` branch).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperationalDomain {
    pub ed_min: f64,
    pub ed_max: f64,
    pub ez_max: f64,
    pub a_min: f64,
    /// Bound on the reference speed used for `L2`.
    pub ref_speed_max: f64,
}

impl OperationalDomain {
    pub fn validate(&self) -> Result<()> {
        let ok = self.ed_min > 0.0
            && self.ed_max >= self.ed_min
            && self.ez_max >= 0.0
            && self.a_min > 0.0
            && self.a_min <= 1.0
            && self.ref_speed_max >= 0.0
            && [self.ed_min, self.ed_max, self.ez_max, self.a_min, self.ref_speed_max]
                .iter()
                .all(|x| x.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid operational domain {self:?}")))
        }
    }

    pub fn eo_max(&self) -> f64 {
        (1.0 - self.a_min * self.a_min).max(0.0).sqrt()
    }

    pub fn contains(&self, e: &ErrorState) -> bool {
        e.ed >= self.ed_min && e.ed <= self.ed_max && e.ez.abs() <= self.ez_max && e.alignment() >= self.a_min
    }

    pub fn is_subset_of(&self, other: &OperationalDomain) -> bool {
        self.ed_min >= other.ed_min
            && self.ed_max <= other.ed_max
            && self.ez_max <= other.ez_max
            && self.a_min >= other.a_min
            && self.ref_speed_max <= other.ref_speed_max
    }

    fn sample_triple(&self, rng: &mut ChaCha8Rng) -> Vec3 {
        let eo = self.eo_max();
        Vec3::new(
            uniform(rng, self.ed_min, self.ed_max),
            uniform(rng, -self.ez_max, self.ez_max),
            uniform(rng, -eo, eo),
        )
    }

    fn corners(&self) -> Vec<Vec3> {
        let eo = self.eo_max();
        let mut out = Vec::with_capacity(8);
        for ed in [self.ed_min, self.ed_max] {
            for ez in [-self.ez_max, self.ez_max] {
                for o in [-eo, eo] {
                    out.push(Vec3::new(ed, ez, o));
                }
            }
        }
        out
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// Certified tube constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TubeParameters {
    pub lip1: f64,
    pub lip2: f64,
    pub j_lower: f64,
    pub xi_tilde: f64,
    pub sigma: f64,
    pub rho_tilde: f64,
    pub domain: OperationalDomain,
}

impl TubeParameters {
    /// Assembles parameters from the constants and recomputes `rho_tilde`.
    pub fn new(
        lip1: f64,
        lip2: f64,
        j_lower: f64,
        xi_tilde: f64,
        sigma: f64,
        domain: OperationalDomain,
    ) -> Result<Self> {
        let mut p = TubeParameters {
            lip1,
            lip2,
            j_lower,
            xi_tilde,
            sigma,
            rho_tilde: 0.0,
            domain,
        };
        p.rho_tilde = tube_radius(&p)?;
        Ok(p)
    }

    /// Checks the stored values against the tube inequalities.
    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        let all = [
            self.lip1,
            self.lip2,
            self.j_lower,
            self.xi_tilde,
            self.sigma,
            self.rho_tilde,
        ];
        if !all.iter().all(|x| x.is_finite() && *x >= 0.0) {
            return Err(Error::Certification(format!(
                "non-finite or negative constant in {self:?}"
            )));
        }
        let rho = tube_radius(self)?;
        if (rho - self.rho_tilde).abs() > 1e-12 * (1.0 + rho) {
            return Err(Error::Certification(format!(
                "rho_tilde {} inconsistent with the constants (expected {rho})",
                self.rho_tilde
            )));
        }
        Ok(())
    }

    /// Upper bound on `|kappa|` inside the tube.
    pub fn feedback_bound(&self) -> f64 {
        self.sigma * self.rho_tilde
    }
}

/// Inputs to [`certify`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificationRequest {
    pub domain: OperationalDomain,
    pub margin: f64,
    pub samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzEstimate {
    pub lip1: f64,
    pub lip2: f64,
    pub j_lower: f64,
}

fn spectral_norm(m: &Mat3) -> f64 {
    m.singular_values().max()
}

fn min_sym_eigen(j: &Mat3) -> f64 {
    let s = (j + j.transpose()) * 0.5;
    s.symmetric_eigenvalues().min()
}

fn state_at(triple: &Vec3, psi: f64) -> ErrorState {
    // the domain keeps e_d > 0 and |e_o| < 1
    ErrorState::from_reduced(triple[0], triple[1], triple[2], psi, Branch::Away)
        .expect("operational domain keeps the transform regular")
}

fn input_map(triple: &Vec3, psi: f64, v: &Vec3) -> Vec3 {
    errorframe::error_jacobian(&state_at(triple, psi)) * v
}

fn drift_map(triple: &Vec3, psi: f64, pd: &Vec3) -> Vec3 {
    errorframe::drift_term(&state_at(triple, psi), pd)
}

/// Central-difference Jacobian of `f` at `x`, clamping `e_o` into the open interval.
fn fd_jacobian<F: Fn(&Vec3) -> Vec3>(f: F, x: &Vec3) -> Mat3 {
    let h = 1e-6;
    let mut m = Mat3::zeros();
    for k in 0..3 {
        let mut xp = *x;
        let mut xm = *x;
        xp[k] += h;
        xm[k] -= h;
        if k == 2 {
            xp[2] = xp[2].min(1.0 - 1e-12);
            xm[2] = xm[2].max(-1.0 + 1e-12);
        }
        let col = (f(&xp) - f(&xm)) / (xp[k] - xm[k]);
        m.set_column(k, &col);
    }
    m
}

fn sample_input(rng: &mut ChaCha8Rng, b: &VelocityBox) -> Vec3 {
    Vec3::new(
        uniform(rng, -b.u_max, b.u_max),
        uniform(rng, -b.w_max, b.w_max),
        uniform(rng, -b.r_max, b.r_max),
    )
}

fn sample_ball(rng: &mut ChaCha8Rng, radius: f64) -> Vec3 {
    if radius <= 0.0 {
        return Vec3::zeros();
    }
    loop {
        let p = Vec3::new(
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
        );
        if p.norm_squared() <= 1.0 {
            return p * radius;
        }
    }
}

/// Estimates `L1`, `L2` and `J_lower` over `domain` by sampling.
///
/// `L1` and `L2` take the larger of the sampled Jacobian operator norms and
/// the sampled difference quotients, then grow by [`INFLATION`]; `J_lower`
/// is the smallest sampled eigenvalue of the symmetric part of `J`, shrunk by
/// the same factor. Domain corners and input-box vertices are always included.
pub fn estimate_constants(
    domain: &OperationalDomain,
    input_box: &VelocityBox,
    samples: usize,
    seed: u64,
) -> Result<LipschitzEstimate> {
    domain.validate()?;
    if samples < MIN_SAMPLES {
        return Err(Error::config(format!(
            "at least {MIN_SAMPLES} samples required, got {samples}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lip1: f64 = 0.0;
    let mut lip2: f64 = 0.0;
    let mut j_min = f64::INFINITY;

    let [ub, wb, rb] = input_box.bounds();
    let mut vertices = Vec::with_capacity(8);
    for u in [-ub, ub] {
        for w in [-wb, wb] {
            for r in [-rb, rb] {
                vertices.push(Vec3::new(u, w, r));
            }
        }
    }

    let visit = |e: &Vec3, psi: f64, v: &Vec3, pd: &Vec3| {
        let j1 = fd_jacobian(|x| input_map(x, psi, v), e);
        let j2 = fd_jacobian(|x| drift_map(x, psi, pd), e);
        let jm = min_sym_eigen(&errorframe::error_jacobian(&state_at(e, psi)));
        (spectral_norm(&j1), spectral_norm(&j2), jm)
    };

    for c in domain.corners() {
        for v in &vertices {
            for k in 0..8 {
                let psi = -PI + PI * k as f64 / 4.0;
                let pd = Vec3::new(psi.cos(), psi.sin(), 0.0) * domain.ref_speed_max;
                let (a, b, j) = visit(&c, psi, v, &pd);
                lip1 = lip1.max(a);
                lip2 = lip2.max(b);
                j_min = j_min.min(j);
            }
        }
    }
    for _ in 0..samples {
        let e = domain.sample_triple(&mut rng);
        let psi = rng.random_range(-PI..PI);
        let v = sample_input(&mut rng, input_box);
        let pd = sample_ball(&mut rng, domain.ref_speed_max);
        let (a, b, j) = visit(&e, psi, &v, &pd);
        lip1 = lip1.max(a);
        lip2 = lip2.max(b);
        j_min = j_min.min(j);

        // difference quotient against a second point of the domain
        let e2 = domain.sample_triple(&mut rng);
        let d = (e - e2).norm();
        if d > 1e-9 {
            lip1 = lip1.max((input_map(&e, psi, &v) - input_map(&e2, psi, &v)).norm() / d);
            lip2 = lip2.max((drift_map(&e, psi, &pd) - drift_map(&e2, psi, &pd)).norm() / d);
        }
    }

    let j_lower = j_min * (1.0 - INFLATION);
    if !(j_lower > 0.0) {
        return Err(Error::Certification(format!(
            "symmetric part of J is not positive definite on the domain (sampled minimum {j_min})"
        )));
    }
    Ok(LipschitzEstimate {
        lip1: lip1 * (1.0 + INFLATION),
        lip2: lip2 * (1.0 + INFLATION),
        j_lower,
    })
}

/// `sigma = margin (L1 + L2) / J_lower`, floored at [`SIGMA_MIN`].
pub fn choose_sigma(lip1: f64, lip2: f64, j_lower: f64, margin: f64) -> Result<f64> {
    if !(j_lower > 0.0) {
        return Err(Error::Certification(format!("J_lower = {j_lower} must be > 0")));
    }
    if !(margin > 1.0) {
        return Err(Error::config(format!("sigma margin {margin} must be > 1")));
    }
    Ok((margin * (lip1 + lip2) / j_lower).max(SIGMA_MIN))
}

/// `rho_tilde = xi_tilde / (sigma J_lower - L1 - L2)`.
pub fn tube_radius(p: &TubeParameters) -> Result<f64> {
    let den = p.sigma * p.j_lower - p.lip1 - p.lip2;
    if !(den > 0.0) {
        return Err(Error::Certification(format!(
            "sigma * J_lower - L1 - L2 = {den} must be > 0"
        )));
    }
    Ok(p.xi_tilde / den)
}

/// `kappa(e, e_hat) = -sigma (e - e_hat)` on the error triple.
pub fn ancillary_feedback(e: &ErrorState, e_hat: &ErrorState, sigma: f64) -> BodyVelocity {
    BodyVelocity::from_vec3(&(-(e.triple() - e_hat.triple()) * sigma))
}

/// `E (-) P` and `V (-) (-sigma P)`: the distance floor and obstacle
/// clearances grow by `rho_tilde`, every input bound shrinks by
/// `sigma * rho_tilde`.
pub fn tighten_sets(
    error_set: &ErrorConstraintSet,
    input_box: &VelocityBox,
    params: &TubeParameters,
) -> Result<(ErrorConstraintSet, VelocityBox)> {
    tighten_sets_with_margin(error_set, input_box, params.rho_tilde, params.feedback_bound())
}

/// As [`tighten_sets`] with an explicit input margin.
pub fn tighten_sets_with_margin(
    error_set: &ErrorConstraintSet,
    input_box: &VelocityBox,
    rho_tilde: f64,
    input_margin: f64,
) -> Result<(ErrorConstraintSet, VelocityBox)> {
    let tightened_box = input_box.shrink(input_margin)?;
    let tightened = ErrorConstraintSet {
        epsilon: error_set.epsilon + rho_tilde,
        inflation: error_set.inflation + rho_tilde,
    };
    Ok((tightened, tightened_box))
}

/// Largest admissible horizon `R_bar / (V_bar + xi_tilde)`.
pub fn max_horizon(sensing_radius: f64, v_bar: f64, xi_tilde: f64) -> f64 {
    sensing_radius / (v_bar + xi_tilde)
}

/// Runs the whole certification: constants, gain and radius.
pub fn certify(request: &CertificationRequest, input_box: &VelocityBox, xi_tilde: f64) -> Result<TubeParameters> {
    let est = estimate_constants(&request.domain, input_box, request.samples, request.seed)?;
    let sigma = choose_sigma(est.lip1, est.lip2, est.j_lower, request.margin)?;
    TubeParameters::new(est.lip1, est.lip2, est.j_lower, xi_tilde, sigma, request.domain)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Artifact {
    schema_version: u32,
    tube: TubeParameters,
    certification: Option<CertificationRequest>,
}

/// Writes certified parameters as a TOML key-value file.
pub fn write_artifact(path: &Path, params: &TubeParameters, request: Option<&CertificationRequest>) -> Result<()> {
    let artifact = Artifact {
        schema_version: ARTIFACT_SCHEMA_VERSION,
        tube: *params,
        certification: request.copied(),
    };
    let text = toml::to_string(&artifact).map_err(|e| Error::config(format!("serialising tube artifact: {e}")))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_artifact(path: &Path) -> Result<TubeParameters> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let artifact: Artifact = toml::from_str(&text).map_err(|source| Error::Toml {
        path: path.into(),
        source,
    })?;
    if artifact.schema_version != ARTIFACT_SCHEMA_VERSION {
        return Err(Error::config(format!(
            "{}: unsupported tube artifact schema_version {}",
            path.display(),
            artifact.schema_version
        )));
    }
    artifact.tube.validate()?;
    Ok(artifact.tube)
}
