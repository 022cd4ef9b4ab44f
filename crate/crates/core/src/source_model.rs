//! The polarized spin source: cell geometry, polarized-spin content with its
//! spatial density profile, and the chopper modulation waveform.

use std::f64::consts::PI;

use nalgebra::{Unit, Vector3};

use crate::{PossError, Result};

/// Rectangular source cell placed at `offset` from the sensor-cell center.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceGeometry {
    edges: Vector3<f64>,
    offset: Vector3<f64>,
    polarization_axis: Unit<Vector3<f64>>,
}

impl SourceGeometry {
    /// `edges` and `offset` in metres. The polarization axis is normalized here;
    /// a zero axis is rejected.
    pub fn new(
        edges: Vector3<f64>,
        offset: Vector3<f64>,
        polarization_axis: Vector3<f64>,
    ) -> Result<Self> {
        if edges.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return Err(PossError::invalid(format!(
                "cell edges must be positive, got {edges:?}"
            )));
        }
        if offset.iter().any(|c| !c.is_finite()) || offset.norm() == 0.0 {
            return Err(PossError::invalid(
                "source offset must be finite and non-zero",
            ));
        }
        let norm = polarization_axis.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(PossError::invalid("polarization axis must be non-zero"));
        }
        let geometry = Self {
            edges,
            offset,
            polarization_axis: Unit::new_normalize(polarization_axis),
        };
        // The sensor sits at the origin and must lie outside the cell.
        if geometry.contains(&Vector3::zeros()) {
            return Err(PossError::invalid(
                "sensor center lies inside the source cell",
            ));
        }
        Ok(geometry)
    }

    /// Cubic cell of the given volume.
    pub fn cube(
        volume_m3: f64,
        offset: Vector3<f64>,
        polarization_axis: Vector3<f64>,
    ) -> Result<Self> {
        let a = volume_m3.cbrt();
        Self::new(Vector3::repeat(a), offset, polarization_axis)
    }

    pub fn edges(&self) -> &Vector3<f64> {
        &self.edges
    }

    pub fn offset(&self) -> &Vector3<f64> {
        &self.offset
    }

    pub fn polarization_axis(&self) -> &Unit<Vector3<f64>> {
        &self.polarization_axis
    }

    pub fn cell_volume(&self) -> f64 {
        self.edges.x * self.edges.y * self.edges.z
    }

    /// Same geometry with a different offset.
    pub fn with_offset(&self, offset: Vector3<f64>) -> Result<Self> {
        Self::new(self.edges, offset, self.polarization_axis.into_inner())
    }

    /// Point reflection of the source through the sensor center.
    pub fn mirrored(&self) -> Result<Self> {
        self.with_offset(-self.offset)
    }

    pub fn contains(&self, point: &Vector3<f64>) -> bool {
        let d = point - self.offset;
        (0..3).all(|i| d[i].abs() <= 0.5 * self.edges[i])
    }

    /// Maps unit-cube coordinates `u ∈ [0,1]³` to a point of the cell.
    pub(crate) fn cell_point(&self, u: [f64; 3]) -> Vector3<f64> {
        Vector3::new(
            self.offset.x + (u[0] - 0.5) * self.edges.x,
            self.offset.y + (u[1] - 0.5) * self.edges.y,
            self.offset.z + (u[2] - 0.5) * self.edges.z,
        )
    }
}

/// Spatial distribution of polarized spins inside the cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DensityProfile {
    Uniform,
    /// Pump-light attenuation along cell axis `axis` (0 = x, 1 = y, 2 = z). The
    /// pump enters at the face with the lowest coordinate.
    ExponentialAttenuation {
        decay_length_m: f64,
        axis: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolarizationContent {
    pub n_polarized_electrons: f64,
    pub n_polarized_protons: f64,
    pub profile: DensityProfile,
}

impl PolarizationContent {
    pub fn uniform(n_polarized_electrons: f64) -> Self {
        Self {
            n_polarized_electrons,
            n_polarized_protons: 0.9 * n_polarized_electrons,
            profile: DensityProfile::Uniform,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.n_polarized_electrons.is_finite() && self.n_polarized_electrons >= 0.0) {
            return Err(PossError::invalid(
                "polarized electron count must be non-negative",
            ));
        }
        if !(self.n_polarized_protons.is_finite() && self.n_polarized_protons >= 0.0) {
            return Err(PossError::invalid(
                "polarized proton count must be non-negative",
            ));
        }
        if let DensityProfile::ExponentialAttenuation {
            decay_length_m,
            axis,
        } = self.profile
        {
            if !(decay_length_m.is_finite() && decay_length_m > 0.0) {
                return Err(PossError::invalid("decay length must be positive"));
            }
            if axis > 2 {
                return Err(PossError::invalid(format!(
                    "attenuation axis {axis} out of range"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModulationMode {
    /// Pump blocked and unblocked: levels {0, 1}.
    Chop,
    /// Pump helicity reversed: levels {−1, +1}.
    Reverse,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModulationScheme {
    pub frequency_hz: f64,
    pub duty_cycle: f64,
    pub phase_rad: f64,
    pub mode: ModulationMode,
}

impl Default for ModulationScheme {
    fn default() -> Self {
        Self {
            frequency_hz: 10.0,
            duty_cycle: 0.5,
            phase_rad: 0.0,
            mode: ModulationMode::Chop,
        }
    }
}

impl ModulationScheme {
    pub fn validate(&self) -> Result<()> {
        if !(self.frequency_hz.is_finite() && self.frequency_hz > 0.0) {
            return Err(PossError::invalid("modulation frequency must be positive"));
        }
        if !(self.duty_cycle > 0.0 && self.duty_cycle < 1.0) {
            return Err(PossError::invalid("duty cycle must lie in (0, 1)"));
        }
        if !self.phase_rad.is_finite() {
            return Err(PossError::invalid("modulation phase must be finite"));
        }
        Ok(())
    }

    pub fn period(&self) -> f64 {
        1.0 / self.frequency_hz
    }

    fn is_half_duty(&self) -> bool {
        self.duty_cycle == 0.5
    }

    /// Sine and cosine Fourier coefficients of the `n`th harmonic in the phase
    /// variable θ = 2πνt + φ, i.e. level(θ) = dc + Σ aₙ cos nθ + bₙ sin nθ.
    pub fn fourier_coefficients(&self, n: u32) -> (f64, f64) {
        let nf = n as f64;
        let scale = match self.mode {
            ModulationMode::Chop => 1.0,
            ModulationMode::Reverse => 2.0,
        };
        if self.is_half_duty() {
            if n.is_multiple_of(2) {
                return (0.0, 0.0);
            }
            return (0.0, scale * 2.0 / (PI * nf));
        }
        let x = 2.0 * PI * nf * self.duty_cycle;
        let a = x.sin() / (PI * nf);
        let b = (1.0 - x.cos()) / (PI * nf);
        (scale * a, scale * b)
    }

    /// Mean level over one period.
    pub fn dc_level(&self) -> f64 {
        match self.mode {
            ModulationMode::Chop => self.duty_cycle,
            ModulationMode::Reverse => 2.0 * self.duty_cycle - 1.0,
        }
    }

    /// Fourier series of the waveform truncated to harmonics strictly below
    /// `max_frequency_hz` (anti-aliased synthesis on a sample grid).
    pub fn bandlimited_level(&self, t: f64, max_frequency_hz: f64) -> f64 {
        let theta = 2.0 * PI * self.frequency_hz * t + self.phase_rad;
        let mut level = self.dc_level();
        let mut n = 1u32;
        while (n as f64) * self.frequency_hz < max_frequency_hz {
            let (a, b) = self.fourier_coefficients(n);
            if a != 0.0 || b != 0.0 {
                let nt = n as f64 * theta;
                level += a * nt.cos() + b * nt.sin();
            }
            n += 1;
        }
        level
    }
}

/// Instantaneous source-polarization multiplier at time `t`.
///
/// Chop mode returns 1 while the pump is unblocked and 0 otherwise; the
/// unblocked window starts where sin(2πνt + φ) turns positive.
pub fn modulation_waveform(t: f64, scheme: &ModulationScheme) -> Result<f64> {
    if !t.is_finite() {
        return Err(PossError::invalid(format!("time must be finite, got {t}")));
    }
    scheme.validate()?;
    let cycles = scheme.frequency_hz * t + scheme.phase_rad / (2.0 * PI);
    let frac = cycles - cycles.floor();
    let on = frac < scheme.duty_cycle;
    Ok(match (scheme.mode, on) {
        (ModulationMode::Chop, true) => 1.0,
        (ModulationMode::Chop, false) => 0.0,
        (ModulationMode::Reverse, true) => 1.0,
        (ModulationMode::Reverse, false) => -1.0,
    })
}

/// Peak-to-peak amplitude of the `n`th harmonic relative to the full source
/// level. For the 50 % chop this is 4/(πn) on odd harmonics and exactly 0 on
/// even ones; reversal doubles it.
pub fn harmonic_amplitude(n: u32, scheme: &ModulationScheme) -> Result<f64> {
    if n == 0 {
        return Err(PossError::invalid("harmonic index must be at least 1"));
    }
    scheme.validate()?;
    let (a, b) = scheme.fourier_coefficients(n);
    Ok(2.0 * a.hypot(b))
}

/// Phase φₙ of the `n`th harmonic, written as sin(n·2πνt + φₙ).
pub fn harmonic_phase(n: u32, scheme: &ModulationScheme) -> Result<f64> {
    if n == 0 {
        return Err(PossError::invalid("harmonic index must be at least 1"));
    }
    let (a, b) = scheme.fourier_coefficients(n);
    Ok(n as f64 * scheme.phase_rad + a.atan2(b))
}

/// Complete description of the spin source.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceModel {
    pub geometry: SourceGeometry,
    pub content: PolarizationContent,
    pub modulation: ModulationScheme,
}

impl SourceModel {
    /// Cubic 0.58 cm³ cell at (−1.41, 50.67, 3.19) mm, 2.14 × 10¹⁴ polarized
    /// electrons along ẑ, 10 Hz 50 % chop.
    pub fn reference() -> Self {
        let geometry = SourceGeometry::cube(
            0.58e-6,
            Vector3::new(-1.41e-3, 50.67e-3, 3.19e-3),
            Vector3::z(),
        )
        .expect("reference geometry is valid");
        Self {
            geometry,
            content: PolarizationContent::uniform(2.14e14),
            modulation: ModulationScheme::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.content.validate()?;
        self.modulation.validate()
    }

    pub fn with_geometry(&self, geometry: SourceGeometry) -> Self {
        Self {
            geometry,
            ..self.clone()
        }
    }

    /// Polarized-electron number density at `point` (sensor frame), m⁻³.
    pub fn density_at(&self, point: &Vector3<f64>) -> f64 {
        density_at(point, &self.content, &self.geometry)
    }
}

/// Polarized-electron number density at `point` (sensor frame), m⁻³; zero
/// outside the cell.
pub fn density_at(
    point: &Vector3<f64>,
    content: &PolarizationContent,
    geometry: &SourceGeometry,
) -> f64 {
    if !geometry.contains(point) {
        return 0.0;
    }
    let n = content.n_polarized_electrons;
    match content.profile {
        DensityProfile::Uniform => n / geometry.cell_volume(),
        DensityProfile::ExponentialAttenuation {
            decay_length_m,
            axis,
        } => {
            let edges = geometry.edges();
            let depth = point[axis] - (geometry.offset()[axis] - 0.5 * edges[axis]);
            let area = geometry.cell_volume() / edges[axis];
            let norm = area * decay_length_m * (1.0 - (-edges[axis] / decay_length_m).exp());
            n / norm * (-depth / decay_length_m).exp()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn chop() -> ModulationScheme {
        ModulationScheme::default()
    }

    #[test]
    fn waveform_levels_at_quarter_periods() {
        assert_eq!(modulation_waveform(0.025, &chop()).unwrap(), 1.0);
        assert_eq!(modulation_waveform(0.075, &chop()).unwrap(), 0.0);
        let rev = ModulationScheme {
            mode: ModulationMode::Reverse,
            ..chop()
        };
        assert_eq!(modulation_waveform(0.025, &rev).unwrap(), 1.0);
        assert_eq!(modulation_waveform(0.075, &rev).unwrap(), -1.0);
    }

    #[test]
    fn waveform_rejects_non_finite_time() {
        assert!(modulation_waveform(f64::NAN, &chop()).is_err());
        assert!(modulation_waveform(f64::INFINITY, &chop()).is_err());
    }

    #[test]
    fn waveform_is_periodic() {
        for k in 0..200 {
            let t = 0.0013 * k as f64;
            let a = modulation_waveform(t, &chop()).unwrap();
            let b = modulation_waveform(t + 0.1 * 7.0, &chop()).unwrap();
            assert_eq!(a, b, "t = {t}");
        }
    }

    #[test]
    fn harmonic_amplitudes_of_half_duty_chop() {
        assert_relative_eq!(
            harmonic_amplitude(1, &chop()).unwrap(),
            4.0 / PI,
            max_relative = 1e-15
        );
        assert!((harmonic_amplitude(1, &chop()).unwrap() - 1.273).abs() < 1e-3);
        assert_eq!(harmonic_amplitude(2, &chop()).unwrap(), 0.0);
        assert_relative_eq!(
            harmonic_amplitude(3, &chop()).unwrap(),
            0.4244,
            max_relative = 1e-4
        );
        let rev = ModulationScheme {
            mode: ModulationMode::Reverse,
            ..chop()
        };
        assert_relative_eq!(
            harmonic_amplitude(1, &rev).unwrap(),
            8.0 / PI,
            max_relative = 1e-15
        );
        assert_eq!(harmonic_amplitude(4, &rev).unwrap(), 0.0);
        assert!(harmonic_amplitude(0, &chop()).is_err());
    }

    #[test]
    fn parseval_for_chop() {
        // mean square of {0,1} at 50 % is 1/2 = dc² + Σ (amplitude/2)²/2
        let dc = 0.5f64;
        let mut power = dc * dc;
        for n in (1..=999).step_by(2) {
            let a = harmonic_amplitude(n, &chop()).unwrap() / 2.0;
            power += a * a / 2.0;
        }
        assert!((power - 0.5).abs() < 1e-3, "{power}");
    }

    #[test]
    fn time_average_equals_duty_cycle() {
        for duty in [0.5, 0.3] {
            let s = ModulationScheme {
                duty_cycle: duty,
                ..chop()
            };
            let n = 100_000;
            let mean: f64 = (0..n)
                .map(|k| modulation_waveform((k as f64 + 0.5) / n as f64 * 0.1, &s).unwrap())
                .sum::<f64>()
                / n as f64;
            assert!((mean - duty).abs() < 1e-4, "{duty}: {mean}");
        }
    }

    #[test]
    fn harmonics_match_dft_of_sampled_waveform() {
        // independent route: direct DFT of a 10⁵-sample period
        let s = ModulationScheme {
            phase_rad: 0.4,
            ..chop()
        };
        let n = 100_000usize;
        for h in [1u32, 3, 5, 7] {
            let (mut re, mut im) = (0.0, 0.0);
            for k in 0..n {
                let t = k as f64 / n as f64 * s.period();
                let v = modulation_waveform(t, &s).unwrap();
                let arg = 2.0 * PI * h as f64 * k as f64 / n as f64;
                re += v * arg.cos();
                im += v * arg.sin();
            }
            let amp_pp = 2.0 * 2.0 * (re * re + im * im).sqrt() / n as f64;
            let expected = harmonic_amplitude(h, &s).unwrap();
            assert!(
                ((amp_pp - expected) / expected).abs() < 1e-3,
                "N={h}: {amp_pp} vs {expected}"
            );
        }
    }

    #[test]
    fn bandlimited_series_follows_waveform_away_from_edges() {
        let s = ModulationScheme {
            duty_cycle: 0.3,
            ..chop()
        };
        let lvl = s.bandlimited_level(0.015, 20_000.0);
        assert!((lvl - 1.0).abs() < 0.02, "{lvl}");
        let lvl = s.bandlimited_level(0.065, 20_000.0);
        assert!(lvl.abs() < 0.02, "{lvl}");
    }

    #[test]
    fn uniform_density_at_center() {
        let src = SourceModel::reference();
        let rho = src.density_at(src.geometry.offset());
        // 2.14e14 / 0.58 cm³ ≈ 3.69e14 cm⁻³
        assert_relative_eq!(rho * 1e-6, 3.69e14, max_relative = 1e-3);
        assert_eq!(src.density_at(&Vector3::new(0.0, 1.0, 0.0)), 0.0);
    }

    #[test]
    fn density_integrates_to_count() {
        for profile in [
            DensityProfile::Uniform,
            DensityProfile::ExponentialAttenuation {
                decay_length_m: 3e-3,
                axis: 2,
            },
        ] {
            let mut src = SourceModel::reference();
            src.content.profile = profile;
            let g = &src.geometry;
            let n = 60;
            let dv = g.cell_volume() / (n * n * n) as f64;
            let mut total = 0.0;
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        let u = [
                            (i as f64 + 0.5) / n as f64,
                            (j as f64 + 0.5) / n as f64,
                            (k as f64 + 0.5) / n as f64,
                        ];
                        let rho = src.density_at(&g.cell_point(u));
                        assert!(rho >= 0.0);
                        total += rho * dv;
                    }
                }
            }
            assert_relative_eq!(total, 2.14e14, max_relative = 1e-3);
        }
    }

    #[test]
    fn geometry_invariants() {
        let g = SourceModel::reference().geometry;
        let a = g.edges().x;
        assert_relative_eq!(g.cell_volume(), a * a * a, max_relative = 1e-12);
        assert_relative_eq!(g.cell_volume(), 0.58e-6, max_relative = 1e-12);
        assert_relative_eq!(g.polarization_axis().norm(), 1.0, max_relative = 1e-12);
        assert!(SourceGeometry::cube(0.58e-6, Vector3::zeros(), Vector3::z()).is_err());
        assert!(
            SourceGeometry::cube(0.58e-6, Vector3::new(0.0, 0.05, 0.0), Vector3::zeros()).is_err()
        );
    }
}
