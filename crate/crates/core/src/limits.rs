//! Systematic budget, confidence limits, λ sweep and coupling-product
//! conversions.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::amplifier::AmplifierParams;
use crate::constants::{PhysicalConstants, HBAR_C_EV_M};
use crate::exotic_field::{unit_coupling_field, IntegrationConfig};
use crate::source_model::SourceModel;
use crate::{Execution, PossError, Result};

/// Which part of the forward chain a calibrated parameter enters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParameterKind {
    /// Source offset component (0 = x, 1 = y, 2 = z), metres.
    Position(usize),
    /// Number of polarized electrons in the source.
    PolarizedCount,
    /// Amplifier phase delay φₐ, rad.
    PhaseDelay,
    /// Calibration constant α, V/T.
    CalibrationAlpha,
}

impl ParameterKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ParameterKind::Position(0) => "position_x",
            ParameterKind::Position(1) => "position_y",
            ParameterKind::Position(_) => "position_z",
            ParameterKind::PolarizedCount => "polarized_count",
            ParameterKind::PhaseDelay => "phase_delay",
            ParameterKind::CalibrationAlpha => "calibration_alpha",
        }
    }
}

/// A calibrated input with (possibly asymmetric) one-sigma uncertainties, SI.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedParameter {
    pub name: String,
    pub kind: ParameterKind,
    pub value: f64,
    pub sigma_plus: f64,
    pub sigma_minus: f64,
}

impl CalibratedParameter {
    pub fn new(kind: ParameterKind, value: f64, sigma_plus: f64, sigma_minus: f64) -> Result<Self> {
        let p = Self {
            name: kind.as_str().to_string(),
            kind,
            value,
            sigma_plus,
            sigma_minus,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.value.is_finite() {
            return Err(PossError::invalid(format!(
                "{}: value must be finite",
                self.name
            )));
        }
        for (label, s) in [
            ("sigma_plus", self.sigma_plus),
            ("sigma_minus", self.sigma_minus),
        ] {
            if !(s.is_finite() && s >= 0.0) {
                return Err(PossError::invalid(format!(
                    "{}: {label} must be non-negative, got {s}",
                    self.name
                )));
            }
        }
        if let ParameterKind::Position(axis) = self.kind {
            if axis > 2 {
                return Err(PossError::invalid(format!(
                    "position axis {axis} out of range"
                )));
            }
        }
        Ok(())
    }
}

/// Calibrated inputs of the reference setup. Values are taken from the models;
/// uncertainties are the measured ones. One-sided bounds ("< 0.01") are used
/// as the sigma on that side.
pub fn reference_parameters(
    source: &SourceModel,
    amplifier: &AmplifierParams,
) -> Vec<CalibratedParameter> {
    let offset = source.geometry.offset();
    let position_sigma = [0.40e-3, 0.71e-3, 0.01e-3];
    let mut params: Vec<CalibratedParameter> = (0..3)
        .map(|axis| CalibratedParameter {
            name: ParameterKind::Position(axis).as_str().into(),
            kind: ParameterKind::Position(axis),
            value: offset[axis],
            sigma_plus: position_sigma[axis],
            sigma_minus: position_sigma[axis],
        })
        .collect();
    params.push(CalibratedParameter {
        name: "polarized_count".into(),
        kind: ParameterKind::PolarizedCount,
        value: source.content.n_polarized_electrons,
        sigma_plus: 0.24e14,
        sigma_minus: 0.24e14,
    });
    params.push(CalibratedParameter {
        name: "phase_delay".into(),
        kind: ParameterKind::PhaseDelay,
        value: amplifier.phase_delay,
        sigma_plus: 0.54f64.to_radians(),
        sigma_minus: 0.54f64.to_radians(),
    });
    params.push(CalibratedParameter {
        name: "calibration_alpha".into(),
        kind: ParameterKind::CalibrationAlpha,
        value: amplifier.calibration_alpha,
        sigma_plus: 0.01e9,
        sigma_minus: 0.17e9,
    });
    params
}

/// The analysis chain as seen by the systematic budget and the λ sweep.
pub trait ForwardModel: Sync {
    /// x̂ component of the exotic field for f₁₁ = 1 at range `lambda_m`, tesla.
    /// `None` when the field underflows.
    fn unit_field(&self, lambda_m: f64) -> Result<Option<f64>>;

    /// Coupling recovered from the same data when the analysis assumes
    /// `kind` shifted by `shift` from nominal. With `shift = 0` this returns
    /// `mean_f11`.
    fn recovered(
        &self,
        mean_f11: f64,
        lambda_m: f64,
        kind: ParameterKind,
        shift: f64,
    ) -> Result<f64>;
}

/// Lock-in forward chain: the estimate scales as 1/(α·b₁₁) and as cos δφ in
/// the reference phase.
#[derive(Debug, Clone)]
pub struct LockinForward {
    pub source: SourceModel,
    pub amplifier: AmplifierParams,
    pub constants: PhysicalConstants,
    pub field_cfg: IntegrationConfig,
    /// Mean of the quadrature-channel estimate, in f₁₁ units. A phase error
    /// leaks it into the in-phase channel.
    pub quadrature_f11: f64,
}

impl LockinForward {
    pub fn new(
        source: &SourceModel,
        amplifier: &AmplifierParams,
        constants: &PhysicalConstants,
        field_cfg: &IntegrationConfig,
    ) -> Self {
        Self {
            source: source.clone(),
            amplifier: *amplifier,
            constants: *constants,
            field_cfg: *field_cfg,
            quadrature_f11: 0.0,
        }
    }

    fn field_for(&self, source: &SourceModel, lambda_m: f64) -> Result<Option<f64>> {
        let r = unit_coupling_field(source, lambda_m, &self.field_cfg, &self.constants)?;
        Ok(if r.underflow { None } else { Some(r.field.x) })
    }
}

impl ForwardModel for LockinForward {
    fn unit_field(&self, lambda_m: f64) -> Result<Option<f64>> {
        self.field_for(&self.source, lambda_m)
    }

    fn recovered(
        &self,
        mean_f11: f64,
        lambda_m: f64,
        kind: ParameterKind,
        shift: f64,
    ) -> Result<f64> {
        if shift == 0.0 {
            return Ok(mean_f11);
        }
        match kind {
            ParameterKind::CalibrationAlpha => {
                let alpha = self.amplifier.calibration_alpha;
                if alpha + shift <= 0.0 {
                    return Err(PossError::invalid(
                        "shifted calibration constant is not positive",
                    ));
                }
                Ok(mean_f11 * alpha / (alpha + shift))
            }
            ParameterKind::PolarizedCount => {
                let n = self.source.content.n_polarized_electrons;
                if n + shift <= 0.0 {
                    return Err(PossError::invalid(
                        "shifted polarized count is not positive",
                    ));
                }
                Ok(mean_f11 * n / (n + shift))
            }
            ParameterKind::PhaseDelay => {
                Ok(mean_f11 * shift.cos() - self.quadrature_f11 * shift.sin())
            }
            ParameterKind::Position(axis) => {
                let mut offset = *self.source.geometry.offset();
                offset[axis] += shift;
                let shifted = self
                    .source
                    .with_geometry(self.source.geometry.with_offset(offset)?);
                let nominal = self.unit_field(lambda_m)?;
                let moved = self.field_for(&shifted, lambda_m)?;
                match (nominal, moved) {
                    (Some(b0), Some(b1)) if b1 != 0.0 => Ok(mean_f11 * b0 / b1),
                    _ => Err(PossError::Division(format!(
                        "unit field vanishes at λ = {lambda_m} m"
                    ))),
                }
            }
        }
    }
}

/// How asymmetric shifts are reduced to one magnitude before the quadrature sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Symmetrization {
    #[default]
    Max,
    Average,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetEntry {
    pub name: String,
    pub kind: ParameterKind,
    /// Signed f₁₁ shift for the parameter moved up by σ₊.
    pub delta_plus: f64,
    /// Signed f₁₁ shift for the parameter moved down by σ₋.
    pub delta_minus: f64,
    /// Set when re-evaluation failed; the entry is then left out of the sum.
    pub error: Option<String>,
}

impl BudgetEntry {
    pub fn magnitude(&self, rule: Symmetrization) -> f64 {
        match rule {
            Symmetrization::Max => self.delta_plus.abs().max(self.delta_minus.abs()),
            Symmetrization::Average => 0.5 * (self.delta_plus.abs() + self.delta_minus.abs()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystematicBudget {
    pub entries: Vec<BudgetEntry>,
    pub combined_syst: f64,
    pub symmetrization: Symmetrization,
}

/// Shifts every parameter by ±1σ, records the change of the recovered f₁₁ and
/// adds the symmetrized magnitudes in quadrature.
pub fn propagate_systematics<F: ForwardModel>(
    params: &[CalibratedParameter],
    mean_f11: f64,
    lambda_m: f64,
    forward: &F,
    symmetrization: Symmetrization,
) -> Result<SystematicBudget> {
    for p in params {
        p.validate()?;
    }
    let nominal = forward.recovered(mean_f11, lambda_m, ParameterKind::CalibrationAlpha, 0.0)?;
    if (nominal - mean_f11).abs() > 1e-12 * mean_f11.abs() {
        return Err(PossError::invalid(
            "forward model does not reproduce the nominal estimate",
        ));
    }
    let entries: Vec<BudgetEntry> = params
        .iter()
        .map(|p| {
            let shifted = |s: f64| -> Result<f64> {
                if s == 0.0 {
                    return Ok(0.0);
                }
                Ok(forward.recovered(mean_f11, lambda_m, p.kind, s)? - mean_f11)
            };
            match (shifted(p.sigma_plus), shifted(-p.sigma_minus)) {
                (Ok(up), Ok(down)) => BudgetEntry {
                    name: p.name.clone(),
                    kind: p.kind,
                    delta_plus: up,
                    delta_minus: down,
                    error: None,
                },
                (Err(e), _) | (_, Err(e)) => BudgetEntry {
                    name: p.name.clone(),
                    kind: p.kind,
                    delta_plus: 0.0,
                    delta_minus: 0.0,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let combined_syst = entries
        .iter()
        .filter(|e| e.error.is_none())
        .fold(0.0, |acc: f64, e| acc.hypot(e.magnitude(symmetrization)));
    Ok(SystematicBudget {
        entries,
        combined_syst,
        symmetrization,
    })
}

/// Construction of the upper bound on |f₁₁|.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClConvention {
    /// |mean| + z((1+cl)/2)·σ.
    #[default]
    TwoSided,
    /// |mean| + z(cl)·σ.
    OneSided,
    /// Unified ordering for a Gaussian measurement of a non-negative |f₁₁|.
    FeldmanCousins,
}

impl ClConvention {
    pub fn as_str(self) -> &'static str {
        match self {
            ClConvention::TwoSided => "two_sided",
            ClConvention::OneSided => "one_sided",
            ClConvention::FeldmanCousins => "feldman_cousins",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "two_sided" => Some(ClConvention::TwoSided),
            "one_sided" => Some(ClConvention::OneSided),
            "feldman_cousins" => Some(ClConvention::FeldmanCousins),
            _ => None,
        }
    }
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Acceptance interval [x₁, x₂] of the unified construction at true value
/// `mu` ≥ 0 (unit σ).
fn fc_acceptance(mu: f64, cl: f64) -> (f64, f64) {
    let n = std_normal();
    if mu == 0.0 {
        return (f64::NEG_INFINITY, n.inverse_cdf(cl));
    }
    // Partner of x₂ with equal likelihood ratio on the other side of μ.
    let lower = |x2: f64| {
        let mirror = 2.0 * mu - x2;
        if mirror >= 0.0 {
            mirror
        } else {
            (mu * mu - (x2 - mu) * (x2 - mu)) / (2.0 * mu)
        }
    };
    let coverage = |x2: f64| n.cdf(x2 - mu) - n.cdf(lower(x2) - mu);
    let (mut a, mut b) = (mu, mu + 10.0);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if coverage(m) < cl {
            a = m;
        } else {
            b = m;
        }
    }
    let x2 = 0.5 * (a + b);
    (lower(x2), x2)
}

/// Unified upper limit on μ ≥ 0 for an observation `x` (unit σ).
pub fn feldman_cousins_upper(x: f64, cl: f64) -> f64 {
    let (mut a, mut b) = (0.0, x.max(0.0) + 10.0);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if fc_acceptance(m, cl).0 <= x {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Upper bound on |f₁₁| at confidence `cl` from a mean with statistical and
/// systematic errors added in quadrature.
pub fn confidence_limit(
    mean: f64,
    stat: f64,
    syst: f64,
    cl: f64,
    convention: ClConvention,
) -> Result<f64> {
    if !(stat > 0.0 && stat.is_finite()) {
        return Err(PossError::invalid(format!(
            "statistical error must be positive, got {stat}"
        )));
    }
    if !(syst >= 0.0 && syst.is_finite()) {
        return Err(PossError::invalid(format!(
            "systematic error must be non-negative, got {syst}"
        )));
    }
    if !(cl > 0.5 && cl < 1.0) {
        return Err(PossError::invalid(format!(
            "confidence level must lie in (0.5, 1), got {cl}"
        )));
    }
    if !mean.is_finite() {
        return Err(PossError::invalid("mean must be finite"));
    }
    let sigma = stat.hypot(syst);
    let n = std_normal();
    Ok(match convention {
        ClConvention::TwoSided => mean.abs() + n.inverse_cdf(0.5 * (1.0 + cl)) * sigma,
        ClConvention::OneSided => mean.abs() + n.inverse_cdf(cl) * sigma,
        ClConvention::FeldmanCousins => sigma * feldman_cousins_upper(mean.abs() / sigma, cl),
    })
}

/// Limits on coupling products, each assuming the other terms vanish.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingLimits {
    /// |g_V^e g_A^n|.
    pub gve_gan: f64,
    /// |g_A^e g_V^n|.
    pub gae_gvn: f64,
    /// |g_A^n g_V^p|.
    pub gna_gpv: f64,
    /// |g_V^n g_A^p|.
    pub gnv_gpa: f64,
}

impl CouplingLimits {
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            gve_gan: self.gve_gan / k,
            gae_gvn: self.gae_gvn / k,
            gna_gpv: self.gna_gpv / k,
            gnv_gpa: self.gnv_gpa / k,
        }
    }
}

pub fn couplings_from_f11(f11_limit: f64, constants: &PhysicalConstants) -> Result<CouplingLimits> {
    if !(f11_limit >= 0.0) {
        return Err(PossError::invalid(format!(
            "f11 limit must be non-negative, got {f11_limit}"
        )));
    }
    Ok(CouplingLimits {
        gve_gan: 2.0 * f11_limit,
        gae_gvn: 2.0 * constants.m_n / constants.m_e * f11_limit,
        gna_gpv: 2.0 * constants.m_p / constants.m_e * f11_limit,
        gnv_gpa: 2.0 * constants.m_n / constants.m_e * f11_limit,
    })
}

/// One λ of an exclusion curve. Unconstrained points carry infinite limits.
#[derive(Debug, Clone, PartialEq)]
pub struct ExclusionPoint {
    pub lambda_m: f64,
    pub boson_mass_ev: f64,
    pub f11_limit: f64,
    pub couplings: CouplingLimits,
    pub constrained: bool,
    pub mean_f11: f64,
    pub stat_error: f64,
    pub syst_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExclusionCurve {
    pub points: Vec<ExclusionPoint>,
    pub cl: f64,
    pub convention: ClConvention,
    /// Product of the gains applied by [`project_upgrade`]; 1 for a measured curve.
    pub projection_gain: f64,
}

/// Mediator mass for range λ, eV.
pub fn boson_mass_ev(lambda_m: f64) -> f64 {
    HBAR_C_EV_M / lambda_m
}

/// `n` log-spaced ranges from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo && n >= 2) {
        return Err(PossError::invalid(
            "log grid needs 0 < lo < hi and at least two points",
        ));
    }
    let (a, b) = (lo.log10(), hi.log10());
    Ok((0..n)
        .map(|i| {
            if i == n - 1 {
                hi
            } else {
                10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64)
            }
        })
        .collect())
}

/// 60 points from 1 mm to 10 km.
pub fn default_lambda_grid() -> Vec<f64> {
    log_grid(1e-3, 1e4, 60).expect("static grid")
}

/// Combined estimate at the range where the records were analyzed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceEstimate {
    pub mean: f64,
    pub stat_error: f64,
    pub lambda_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSettings {
    pub cl: f64,
    pub convention: ClConvention,
    pub symmetrization: Symmetrization,
    pub execution: Execution,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            cl: 0.95,
            convention: ClConvention::TwoSided,
            symmetrization: Symmetrization::Max,
            execution: Execution::default(),
        }
    }
}

fn unconstrained(lambda_m: f64) -> ExclusionPoint {
    let inf = f64::INFINITY;
    ExclusionPoint {
        lambda_m,
        boson_mass_ev: boson_mass_ev(lambda_m),
        f11_limit: inf,
        couplings: CouplingLimits {
            gve_gan: inf,
            gae_gvn: inf,
            gna_gpv: inf,
            gnv_gpa: inf,
        },
        constrained: false,
        mean_f11: f64::NAN,
        stat_error: inf,
        syst_error: inf,
    }
}

/// Exclusion limit at one range. The estimator is linear in 1/b₁₁, so the
/// mean and error found at the reference range are rescaled by the field
/// ratio, and the systematics are re-propagated at the new range.
pub fn exclusion_point<F: ForwardModel>(
    lambda_m: f64,
    estimate: &ReferenceEstimate,
    reference_field: f64,
    params: &[CalibratedParameter],
    forward: &F,
    settings: &SweepSettings,
    constants: &PhysicalConstants,
) -> Result<ExclusionPoint> {
    let b = match forward.unit_field(lambda_m)? {
        Some(b) if b != 0.0 && b.is_finite() => b,
        _ => return Ok(unconstrained(lambda_m)),
    };
    let ratio = reference_field / b;
    let mean = estimate.mean * ratio;
    let stat = estimate.stat_error * ratio.abs();
    if !(stat.is_finite() && stat > 0.0) {
        return Ok(unconstrained(lambda_m));
    }
    let budget = propagate_systematics(params, mean, lambda_m, forward, settings.symmetrization)?;
    let limit = confidence_limit(
        mean,
        stat,
        budget.combined_syst,
        settings.cl,
        settings.convention,
    )?;
    Ok(ExclusionPoint {
        lambda_m,
        boson_mass_ev: boson_mass_ev(lambda_m),
        f11_limit: limit,
        couplings: couplings_from_f11(limit, constants)?,
        constrained: true,
        mean_f11: mean,
        stat_error: stat,
        syst_error: budget.combined_syst,
    })
}

/// Exclusion curve over `grid` (strictly increasing ranges). Points are
/// evaluated independently and returned in grid order; ranges where the field
/// underflows or its integral fails to converge are flagged unconstrained.
pub fn sweep_lambda<F: ForwardModel>(
    grid: &[f64],
    estimate: &ReferenceEstimate,
    params: &[CalibratedParameter],
    forward: &F,
    settings: &SweepSettings,
    constants: &PhysicalConstants,
) -> Result<ExclusionCurve> {
    if grid.is_empty() {
        return Err(PossError::invalid("empty λ grid"));
    }
    if grid.iter().any(|l| !(l.is_finite() && *l > 0.0)) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(PossError::invalid(
            "λ grid must be positive and strictly increasing",
        ));
    }
    let reference_field = match forward.unit_field(estimate.lambda_m)? {
        Some(b) if b != 0.0 => b,
        _ => {
            return Err(PossError::Division(format!(
                "unit field vanishes at the reference λ = {} m",
                estimate.lambda_m
            )))
        }
    };
    let points = settings
        .execution
        .map_slice(grid, |&l| {
            match exclusion_point(
                l,
                estimate,
                reference_field,
                params,
                forward,
                settings,
                constants,
            ) {
                // a range whose field integral does not converge places no bound
                Err(PossError::Integration { .. }) => Ok(unconstrained(l)),
                other => other,
            }
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(ExclusionCurve {
        points,
        cl: settings.cl,
        convention: settings.convention,
        projection_gain: 1.0,
    })
}

/// Curve expected after improving the sensor by `sensitivity_gain` and the
/// source strength by `source_gain`.
pub fn project_upgrade(
    curve: &ExclusionCurve,
    sensitivity_gain: f64,
    source_gain: f64,
) -> Result<ExclusionCurve> {
    if !(sensitivity_gain >= 1.0
        && source_gain >= 1.0
        && sensitivity_gain.is_finite()
        && source_gain.is_finite())
    {
        return Err(PossError::invalid(
            "projection gains must be finite and at least 1",
        ));
    }
    let k = sensitivity_gain * source_gain;
    let points = curve
        .points
        .iter()
        .map(|p| ExclusionPoint {
            f11_limit: p.f11_limit / k,
            couplings: p.couplings.scaled(k),
            ..p.clone()
        })
        .collect();
    Ok(ExclusionCurve {
        points,
        projection_gain: curve.projection_gain * k,
        ..curve.clone()
    })
}

/// Default upgrade: four orders each from sensor and source.
pub const DEFAULT_SENSITIVITY_GAIN: f64 = 1e4;
pub const DEFAULT_SOURCE_GAIN: f64 = 1e4;
