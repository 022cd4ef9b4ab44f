//! The V₁₁ parity-odd potential, the pseudomagnetic field it induces at the
//! sensor after integration over the polarized source, a Monte Carlo oracle for
//! that integral, and the classical dipole field of the same source.
//!
//! SI form of the potential:
//!
//! ```text
//! V₁₁ = −f₁₁ · ħ²/(4π mₑ) · [(σ̂ₙ × σ̂ₑ)·r̂] · (1/(λr) + 1/r²) · e^(−r/λ)
//! ```
//!
//! with r̂ pointing from the electron (source) to the neutron (sensor).

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::constants::{PhysicalConstants, MU0_OVER_4PI};
use crate::exec::Execution;
use crate::source_model::SourceModel;
use crate::{PossError, Result};

/// Above this force range the exponential is replaced by its expansion.
pub const LAMBDA_EXPANSION_M: f64 = 1e6;
/// At or below this force range the field is reported as underflowed zero.
pub const LAMBDA_UNDERFLOW_M: f64 = 1e-6;

const MC_CHUNK: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntegrationMethod {
    Quadrature,
    MonteCarlo,
}

impl IntegrationMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            IntegrationMethod::Quadrature => "quadrature",
            IntegrationMethod::MonteCarlo => "monte_carlo",
        }
    }
}

/// How the sensor samples the field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SensorModel {
    Point,
    /// Average over a box of the given edge lengths (m) centered on the sensor
    /// point, sampled with `points_per_axis`³ midpoints (quadrature) or
    /// uniformly (Monte Carlo).
    VolumeAverage {
        edges: Vector3<f64>,
        points_per_axis: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrationConfig {
    /// Starting midpoint grid; doubled until the Richardson estimate converges.
    pub grid_points_per_axis: usize,
    pub max_grid_points_per_axis: usize,
    pub mc_samples: usize,
    pub rng_seed: u64,
    pub target_rel_error: f64,
    pub sensor: SensorModel,
    pub execution: Execution,
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        Self {
            grid_points_per_axis: 8,
            max_grid_points_per_axis: 256,
            mc_samples: 100_000,
            rng_seed: 0x5eed,
            target_rel_error: 1e-4,
            sensor: SensorModel::Point,
            execution: Execution::default(),
        }
    }
}

impl IntegrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_points_per_axis < 2 {
            return Err(PossError::invalid(
                "grid_points_per_axis must be at least 2",
            ));
        }
        if self.max_grid_points_per_axis < 2 * self.grid_points_per_axis {
            return Err(PossError::invalid(
                "max grid must allow at least one refinement",
            ));
        }
        if self.mc_samples < 1000 {
            return Err(PossError::invalid("mc_samples must be at least 1000"));
        }
        if !(self.target_rel_error.is_finite() && self.target_rel_error > 0.0) {
            return Err(PossError::invalid("target_rel_error must be positive"));
        }
        if let SensorModel::VolumeAverage {
            edges,
            points_per_axis,
        } = self.sensor
        {
            if points_per_axis == 0 || edges.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
                return Err(PossError::invalid(
                    "sensor box needs positive edges and points",
                ));
            }
        }
        Ok(())
    }
}

/// Exotic field at the sensor for one (λ, f₁₁).
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoFieldResult {
    /// Tesla.
    pub field: Vector3<f64>,
    /// Norm of `component_errors`, tesla.
    pub integration_error: f64,
    /// Richardson error (quadrature) or standard error (Monte Carlo) per component.
    pub component_errors: Vector3<f64>,
    pub method: IntegrationMethod,
    pub lambda_m: f64,
    pub f11: f64,
    /// Set when λ is too short for the field to be representable.
    pub underflow: bool,
    /// Final grid (quadrature) or sample count (Monte Carlo).
    pub resolution: usize,
}

impl PseudoFieldResult {
    fn zero(method: IntegrationMethod, lambda_m: f64, f11: f64, underflow: bool) -> Self {
        Self {
            field: Vector3::zeros(),
            integration_error: 0.0,
            component_errors: Vector3::zeros(),
            method,
            lambda_m,
            f11,
            underflow,
            resolution: 0,
        }
    }
}

/// Euclidean norm that survives components near the f64 underflow threshold.
pub(crate) fn scaled_norm(v: &Vector3<f64>) -> f64 {
    let m = v.amax();
    if m == 0.0 {
        0.0
    } else {
        m * (v / m).norm()
    }
}

fn check_unit(v: &Vector3<f64>, name: &str) -> Result<()> {
    if (v.norm() - 1.0).abs() > 1e-9 {
        return Err(PossError::invalid(format!(
            "{name} must be a unit vector, |v| = {}",
            v.norm()
        )));
    }
    Ok(())
}

fn check_lambda(lambda_m: f64) -> Result<()> {
    if !(lambda_m.is_finite() && lambda_m > 0.0) {
        return Err(PossError::invalid(format!(
            "force range must be positive, got {lambda_m}"
        )));
    }
    Ok(())
}

/// Radial factor (1/(λr) + 1/r²)·e^(−r/λ), m⁻².
pub fn radial_factor(r: f64, lambda_m: f64) -> f64 {
    if lambda_m >= LAMBDA_EXPANSION_M {
        let x = r / lambda_m;
        (1.0 - 0.5 * x * x) / (r * r)
    } else {
        (1.0 / (lambda_m * r) + 1.0 / (r * r)) * (-r / lambda_m).exp()
    }
}

/// V₁₁ energy (J) between a neutron spin `sigma_n` and an electron spin
/// `sigma_e` separated by `r_vec` (from electron to neutron).
pub fn v11_potential(
    sigma_n: &Vector3<f64>,
    sigma_e: &Vector3<f64>,
    r_vec: &Vector3<f64>,
    lambda_m: f64,
    f11: f64,
    constants: &PhysicalConstants,
) -> Result<f64> {
    check_unit(sigma_n, "sigma_n")?;
    check_unit(sigma_e, "sigma_e")?;
    check_lambda(lambda_m)?;
    let r = r_vec.norm();
    if r == 0.0 {
        return Err(PossError::Singularity("V11 is singular at r = 0".into()));
    }
    let r_hat = r_vec / r;
    let angular = sigma_n.cross(sigma_e).dot(&r_hat);
    Ok(-f11 * constants.v11_prefactor() * angular * radial_factor(r, lambda_m))
}

/// Prefactor −f₁₁ħ²/(4π mₑ μ_Xe) of the field integral, T·m².
fn field_prefactor(f11: f64, constants: &PhysicalConstants) -> f64 {
    -f11 * constants.v11_prefactor() / constants.mu_xe
}

/// Sensor sampling points and their weights.
fn sensor_points(center: &Vector3<f64>, sensor: &SensorModel) -> Vec<Vector3<f64>> {
    match *sensor {
        SensorModel::Point => vec![*center],
        SensorModel::VolumeAverage {
            edges,
            points_per_axis: k,
        } => {
            let mut pts = Vec::with_capacity(k * k * k);
            for i in 0..k {
                for j in 0..k {
                    for l in 0..k {
                        let u = [i, j, l].map(|q| (q as f64 + 0.5) / k as f64 - 0.5);
                        pts.push(
                            center + Vector3::new(u[0] * edges.x, u[1] * edges.y, u[2] * edges.z),
                        );
                    }
                }
            }
            pts
        }
    }
}

fn check_sensor_outside(source: &SourceModel, points: &[Vector3<f64>]) -> Result<()> {
    if points.iter().any(|p| source.geometry.contains(p)) {
        return Err(PossError::invalid(
            "sensor point lies inside the source cell",
        ));
    }
    Ok(())
}

/// ρ(s)·(σ̂ₑ × r̂)·radial(r) averaged over the sensor points, for a source
/// element at `s`.
#[inline]
fn integrand(
    source: &SourceModel,
    s: &Vector3<f64>,
    sensors: &[Vector3<f64>],
    lambda_m: f64,
) -> Vector3<f64> {
    let rho = source.density_at(s);
    if rho == 0.0 {
        return Vector3::zeros();
    }
    let sigma_e = source.geometry.polarization_axis();
    let mut acc = Vector3::zeros();
    for p in sensors {
        let r_vec = p - s;
        let r = r_vec.norm();
        let r_hat = r_vec / r;
        acc += sigma_e.cross(&r_hat) * radial_factor(r, lambda_m);
    }
    acc * (rho / sensors.len() as f64)
}

fn midpoint_sum(
    source: &SourceModel,
    sensors: &[Vector3<f64>],
    lambda_m: f64,
    n: usize,
    execution: Execution,
) -> Vector3<f64> {
    let geometry = &source.geometry;
    let inv = 1.0 / n as f64;
    let slabs = execution.map(n, |i| {
        let mut slab = Vector3::zeros();
        let ux = (i as f64 + 0.5) * inv;
        for j in 0..n {
            let uy = (j as f64 + 0.5) * inv;
            for k in 0..n {
                let uz = (k as f64 + 0.5) * inv;
                let s = geometry.cell_point([ux, uy, uz]);
                slab += integrand(source, &s, sensors, lambda_m);
            }
        }
        slab
    });
    let sum: Vector3<f64> = slabs.into_iter().sum();
    sum * (geometry.cell_volume() * inv * inv * inv)
}

/// Volume-integrated exotic field at `sensor_point` by midpoint product
/// quadrature with Richardson refinement.
///
/// The grid starts at `cfg.grid_points_per_axis` and doubles until the
/// Richardson error of the finer grid falls below `cfg.target_rel_error`
/// relative to the field magnitude. The extrapolated value is returned.
pub fn pseudo_field_point(
    source: &SourceModel,
    sensor_point: &Vector3<f64>,
    lambda_m: f64,
    f11: f64,
    cfg: &IntegrationConfig,
    constants: &PhysicalConstants,
) -> Result<PseudoFieldResult> {
    check_lambda(lambda_m)?;
    cfg.validate()?;
    source.validate()?;
    let sensors = sensor_points(sensor_point, &cfg.sensor);
    check_sensor_outside(source, &sensors)?;
    let method = IntegrationMethod::Quadrature;
    if lambda_m <= LAMBDA_UNDERFLOW_M {
        return Ok(PseudoFieldResult::zero(method, lambda_m, f11, true));
    }
    if f11 == 0.0 {
        return Ok(PseudoFieldResult::zero(method, lambda_m, f11, false));
    }
    let prefactor = field_prefactor(f11, constants);

    let mut n = cfg.grid_points_per_axis;
    let mut coarse = midpoint_sum(source, &sensors, lambda_m, n, cfg.execution);
    loop {
        let fine = midpoint_sum(source, &sensors, lambda_m, 2 * n, cfg.execution);
        let correction = (fine - coarse) / 3.0;
        let extrapolated = fine + correction;
        let err = correction.abs();
        let magnitude = scaled_norm(&extrapolated);
        let rel = if magnitude == 0.0 {
            0.0
        } else {
            scaled_norm(&err) / magnitude
        };
        if rel <= cfg.target_rel_error {
            let field = extrapolated * prefactor;
            let component_errors = err * prefactor.abs();
            return Ok(PseudoFieldResult {
                field,
                integration_error: scaled_norm(&component_errors),
                component_errors,
                method,
                lambda_m,
                f11,
                underflow: magnitude == 0.0,
                resolution: 2 * n,
            });
        }
        if 4 * n > cfg.max_grid_points_per_axis {
            return Err(PossError::Integration {
                lambda_m,
                achieved: rel,
                target: cfg.target_rel_error,
                grid: 2 * n,
            });
        }
        coarse = fine;
        n *= 2;
    }
}

#[derive(Debug, Clone, Copy)]
struct RunningStats {
    n: f64,
    mean: Vector3<f64>,
    m2: Vector3<f64>,
}

impl RunningStats {
    fn new() -> Self {
        Self {
            n: 0.0,
            mean: Vector3::zeros(),
            m2: Vector3::zeros(),
        }
    }

    fn push(&mut self, x: Vector3<f64>) {
        self.n += 1.0;
        let delta = x - self.mean;
        self.mean += delta / self.n;
        self.m2 += delta.component_mul(&(x - self.mean));
    }

    fn merge(self, other: Self) -> Self {
        if self.n == 0.0 {
            return other;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        Self {
            n,
            mean: self.mean + delta * (other.n / n),
            m2: self.m2 + other.m2 + delta.component_mul(&delta) * (self.n * other.n / n),
        }
    }
}

/// Independent Monte Carlo estimate of the same integral.
///
/// Samples are drawn in fixed chunks, each from its own ChaCha stream keyed by
/// `(rng_seed, chunk index)`, and merged in chunk order; the result is
/// bit-identical regardless of the execution strategy.
pub fn pseudo_field_mc_oracle(
    source: &SourceModel,
    sensor_point: &Vector3<f64>,
    lambda_m: f64,
    f11: f64,
    cfg: &IntegrationConfig,
    constants: &PhysicalConstants,
) -> Result<PseudoFieldResult> {
    check_lambda(lambda_m)?;
    cfg.validate()?;
    source.validate()?;
    let sensors = sensor_points(sensor_point, &cfg.sensor);
    check_sensor_outside(source, &sensors)?;
    let method = IntegrationMethod::MonteCarlo;
    if lambda_m <= LAMBDA_UNDERFLOW_M {
        return Ok(PseudoFieldResult::zero(method, lambda_m, f11, true));
    }
    if f11 == 0.0 {
        let mut r = PseudoFieldResult::zero(method, lambda_m, f11, false);
        r.resolution = cfg.mc_samples;
        return Ok(r);
    }
    let prefactor = field_prefactor(f11, constants);
    let volume = source.geometry.cell_volume();
    let total = cfg.mc_samples;
    let chunks = total.div_ceil(MC_CHUNK);
    let sensor_box = match cfg.sensor {
        SensorModel::Point => None,
        SensorModel::VolumeAverage { edges, .. } => Some(edges),
    };

    let partial = cfg.execution.map(chunks, |c| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        rng.set_stream(c as u64);
        let count = MC_CHUNK.min(total - c * MC_CHUNK);
        let mut stats = RunningStats::new();
        for _ in 0..count {
            let u: [f64; 3] = [rng.random(), rng.random(), rng.random()];
            let s = source.geometry.cell_point(u);
            let value = match sensor_box {
                None => integrand(source, &s, &sensors[..1], lambda_m),
                Some(edges) => {
                    let v: [f64; 3] = [rng.random(), rng.random(), rng.random()];
                    let p = sensor_point
                        + Vector3::new(
                            (v[0] - 0.5) * edges.x,
                            (v[1] - 0.5) * edges.y,
                            (v[2] - 0.5) * edges.z,
                        );
                    integrand(source, &s, std::slice::from_ref(&p), lambda_m)
                }
            };
            stats.push(value * volume);
        }
        stats
    });
    let stats = partial
        .into_iter()
        .fold(RunningStats::new(), RunningStats::merge);
    let n = stats.n;
    let se = (stats.m2 / (n - 1.0)).map(f64::sqrt) / n.sqrt();
    let field = stats.mean * prefactor;
    let component_errors = se * prefactor.abs();
    Ok(PseudoFieldResult {
        field,
        integration_error: scaled_norm(&component_errors),
        component_errors,
        method,
        lambda_m,
        f11,
        underflow: false,
        resolution: total,
    })
}

/// x̂ projection of the exotic field at the sensor center for f₁₁ = 1: the
/// field per unit coupling seen along the sensitive axis, tesla.
pub fn unit_coupling_field(
    source: &SourceModel,
    lambda_m: f64,
    cfg: &IntegrationConfig,
    constants: &PhysicalConstants,
) -> Result<PseudoFieldResult> {
    pseudo_field_point(source, &Vector3::zeros(), lambda_m, 1.0, cfg, constants)
}

/// Point-dipole field (μ₀/4π)[3(m·r̂)r̂ − m]/r³, tesla.
pub fn magnetic_dipole_field(
    moment: &Vector3<f64>,
    displacement: &Vector3<f64>,
) -> Result<Vector3<f64>> {
    let r = displacement.norm();
    if r == 0.0 {
        return Err(PossError::Singularity(
            "dipole field is singular at zero displacement".into(),
        ));
    }
    let r_hat = displacement / r;
    Ok((r_hat * (3.0 * moment.dot(&r_hat)) - moment) * (MU0_OVER_4PI / (r * r * r)))
}

/// Classical field of the polarized source at `sensor_point`, treating every
/// polarized electron as one Bohr magneton along σ̂ₑ at the cell center.
pub fn source_dipole_field(
    source: &SourceModel,
    sensor_point: &Vector3<f64>,
    constants: &PhysicalConstants,
) -> Result<Vector3<f64>> {
    let moment = source.geometry.polarization_axis().into_inner()
        * (source.content.n_polarized_electrons * constants.mu_b);
    magnetic_dipole_field(&moment, &(sensor_point - source.geometry.offset()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn consts() -> PhysicalConstants {
        PhysicalConstants::default()
    }

    #[test]
    fn v11_vanishes_for_parallel_spins_and_orthogonal_geometry() {
        let c = consts();
        let r = Vector3::new(0.01, 0.02, 0.03);
        let z = Vector3::z();
        assert_eq!(v11_potential(&z, &z, &r, 0.1, 1.0, &c).unwrap(), 0.0);
        // σn×σe = ŷ×ẑ = x̂, r along ŷ ⊥ x̂
        let v = v11_potential(
            &Vector3::y(),
            &z,
            &Vector3::new(0.0, 0.05, 0.0),
            0.1,
            1.0,
            &c,
        )
        .unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(
            v11_potential(&Vector3::y(), &z, &r, 0.1, 0.0, &c).unwrap(),
            0.0
        );
    }

    #[test]
    fn v11_errors() {
        let c = consts();
        let z = Vector3::z();
        let x = Vector3::x();
        assert!(matches!(
            v11_potential(&x, &z, &Vector3::zeros(), 0.1, 1.0, &c),
            Err(PossError::Singularity(_))
        ));
        assert!(v11_potential(&x, &z, &Vector3::y(), 0.0, 1.0, &c).is_err());
        assert!(v11_potential(&x, &z, &Vector3::y(), -1.0, 1.0, &c).is_err());
        assert!(v11_potential(&(x * 2.0), &z, &Vector3::y(), 1.0, 1.0, &c).is_err());
    }

    #[test]
    fn v11_radial_ratio_long_range() {
        // oracle: (1/(λr)+1/r²)e^(−r/λ) evaluated symbolically at r and 2r
        let c = consts();
        let (sn, se) = (Vector3::y(), Vector3::z());
        let r = Vector3::new(0.03, 0.0, 0.0);
        let lambda = 1e3;
        let v1 = v11_potential(&sn, &se, &r, lambda, 1.0, &c).unwrap();
        let v2 = v11_potential(&sn, &se, &(r * 2.0), lambda, 1.0, &c).unwrap();
        let rr = 0.03;
        let oracle = |r: f64| (1.0 / (lambda * r) + 1.0 / (r * r)) * (-r / lambda).exp();
        assert_relative_eq!(v2 / v1, oracle(2.0 * rr) / oracle(rr), max_relative = 1e-12);
        assert!((v2 / v1 - 0.25).abs() < 1e-4);
    }

    #[test]
    fn v11_si_magnitude() {
        // ħ²/(4π mₑ r²) at r = 1 cm, λ → ∞, unit angular factor
        let c = consts();
        let v = v11_potential(
            &Vector3::y(),
            &Vector3::z(),
            &Vector3::new(0.01, 0.0, 0.0),
            1e9,
            1.0,
            &c,
        )
        .unwrap();
        let expected = 1.054_571_817e-34f64.powi(2)
            / (4.0 * std::f64::consts::PI * 9.109_383_701_5e-31)
            / 1e-4;
        assert_relative_eq!(v.abs(), expected, max_relative = 1e-9);
    }

    #[test]
    fn radial_expansion_is_continuous() {
        let r = 0.05;
        let below = (1.0 / (0.999e6 * r) + 1.0 / (r * r)) * (-r / 0.999e6f64).exp();
        assert_relative_eq!(radial_factor(r, 1e6), below, max_relative = 1e-12);
    }

    #[test]
    fn field_is_zero_for_zero_coupling_and_underflows_for_tiny_range() {
        let src = SourceModel::reference();
        let cfg = IntegrationConfig::default();
        let r = pseudo_field_point(&src, &Vector3::zeros(), 0.1, 0.0, &cfg, &consts()).unwrap();
        assert_eq!(r.field, Vector3::zeros());
        let r = pseudo_field_point(&src, &Vector3::zeros(), 1e-7, 1.0, &cfg, &consts()).unwrap();
        assert!(r.underflow);
        assert_eq!(r.field, Vector3::zeros());
    }

    #[test]
    fn sensor_inside_cell_is_rejected() {
        let src = SourceModel::reference();
        let cfg = IntegrationConfig::default();
        let inside = *src.geometry.offset();
        assert!(pseudo_field_point(&src, &inside, 0.1, 1.0, &cfg, &consts()).is_err());
        assert!(pseudo_field_mc_oracle(&src, &inside, 0.1, 1.0, &cfg, &consts()).is_err());
    }

    #[test]
    fn on_axis_source_gives_x_directed_field() {
        let mut src = SourceModel::reference();
        src.geometry = src
            .geometry
            .with_offset(Vector3::new(0.0, 0.0507, 0.0))
            .unwrap();
        let r = pseudo_field_point(
            &src,
            &Vector3::zeros(),
            0.1,
            1e-20,
            &IntegrationConfig::default(),
            &consts(),
        )
        .unwrap();
        assert!(r.field.x > 0.0);
        assert!(r.field.y.abs() < 1e-9 * r.field.x.abs());
        assert!(r.field.z.abs() < 1e-9 * r.field.x.abs());
    }

    #[test]
    fn dipole_on_transverse_axis() {
        let b = magnetic_dipole_field(&Vector3::z(), &Vector3::new(0.0, 0.05, 0.0)).unwrap();
        assert_eq!(b.x, 0.0);
        assert_eq!(b.y, 0.0);
        assert!(b.z < 0.0);
        assert!(magnetic_dipole_field(&Vector3::z(), &Vector3::zeros()).is_err());
    }

    #[test]
    fn mc_is_reproducible_and_zero_for_zero_coupling() {
        let src = SourceModel::reference();
        let cfg = IntegrationConfig {
            mc_samples: 20_000,
            ..Default::default()
        };
        let a = pseudo_field_mc_oracle(&src, &Vector3::zeros(), 0.1, 1.0, &cfg, &consts()).unwrap();
        let b = pseudo_field_mc_oracle(
            &src,
            &Vector3::zeros(),
            0.1,
            1.0,
            &IntegrationConfig {
                execution: Execution::Sequential,
                ..cfg
            },
            &consts(),
        )
        .unwrap();
        assert_eq!(a.field, b.field);
        assert_eq!(a.component_errors, b.component_errors);
        let z = pseudo_field_mc_oracle(&src, &Vector3::zeros(), 0.1, 0.0, &cfg, &consts()).unwrap();
        assert_eq!(z.field, Vector3::zeros());
        assert_eq!(z.integration_error, 0.0);
    }
}
