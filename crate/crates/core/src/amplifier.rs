//! ¹²⁹Xe–⁸⁷Rb spin amplifier: amplification factor, resonant frequency
//! response with phase delay, anisotropic noise floors, time-domain Bloch
//! dynamics, and the frequency-domain transfer applied to synthetic inputs.

use std::f64::consts::PI;

use nalgebra::Vector3;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;

use crate::constants::PhysicalConstants;
use crate::timeseries::TimeSeries;
use crate::{PossError, Result};

/// Longitudinal ¹²⁹Xe magnetization (tesla-equivalent) that makes
/// (4π/3)κ₀|γ|M_zT₂ = 187.4 with κ₀ = 540, T₂ = 20 s and the ¹²⁹Xe
/// gyromagnetic ratio.
pub const DEFAULT_MZ_T: f64 = 5.558_764_121_159_722e-11;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn is_transverse(self) -> bool {
        !matches!(self, Axis::Z)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmplifierParams {
    /// Fermi-contact enhancement factor.
    pub kappa0: f64,
    /// ¹²⁹Xe gyromagnetic ratio, rad/(s·T) (negative for ¹²⁹Xe).
    pub gamma_n: f64,
    /// Longitudinal magnetization, tesla-equivalent.
    pub mz: f64,
    pub t2: f64,
    pub t1: f64,
    /// Resonance frequency, Hz.
    pub nu0: f64,
    /// Bias field, tesla; derived from `nu0` when absent.
    pub b0: Option<f64>,
    /// Phase lag φₐ of the amplified signal, rad.
    pub phase_delay: f64,
    /// Sensor output per unit effective field, V/T.
    pub calibration_alpha: f64,
}

impl Default for AmplifierParams {
    fn default() -> Self {
        Self {
            kappa0: 540.0,
            gamma_n: PhysicalConstants::default().gamma_xe(),
            mz: DEFAULT_MZ_T,
            t2: 20.0,
            t1: 20.0,
            nu0: 10.0,
            b0: Some(847e-9),
            phase_delay: 13.20f64.to_radians(),
            calibration_alpha: 1.99e9,
        }
    }
}

impl AmplifierParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.t2.is_finite() && self.t2 > 0.0) {
            return Err(PossError::invalid("T2 must be positive"));
        }
        if !(self.t1 >= self.t2) {
            return Err(PossError::invalid("T1 must be at least T2"));
        }
        if !(self.nu0.is_finite() && self.nu0 > 0.0) {
            return Err(PossError::invalid("nu0 must be positive"));
        }
        if self.gamma_n == 0.0 || !self.gamma_n.is_finite() {
            return Err(PossError::invalid(
                "gyromagnetic ratio must be finite and non-zero",
            ));
        }
        if !(self.kappa0.is_finite() && self.mz.is_finite() && self.calibration_alpha.is_finite()) {
            return Err(PossError::invalid("kappa0, Mz and alpha must be finite"));
        }
        if let Some(b0) = self.b0 {
            let larmor = (self.gamma_n * b0 / (2.0 * PI)).abs();
            if ((larmor - self.nu0) / self.nu0).abs() > 0.01 {
                return Err(PossError::invalid(format!(
                    "bias field {b0:e} T gives a Larmor frequency of {larmor:.4} Hz, \
                     inconsistent with nu0 = {} Hz",
                    self.nu0
                )));
            }
        }
        Ok(())
    }

    pub fn bias_field(&self) -> f64 {
        self.b0.unwrap_or(2.0 * PI * self.nu0 / self.gamma_n.abs())
    }

    /// Full width at half maximum of the resonance, 1/(πT₂), Hz.
    pub fn linewidth(&self) -> f64 {
        1.0 / (PI * self.t2)
    }

    /// Unit-peak Lorentzian L(ν) of full width 1/(πT₂) centered on ν₀.
    pub fn lorentzian(&self, nu: f64) -> f64 {
        let x = self.detuning(nu);
        1.0 / (1.0 + x * x)
    }

    fn detuning(&self, nu: f64) -> f64 {
        2.0 * (nu - self.nu0) / self.linewidth()
    }

    /// (4π/3)·κ₀: effective field read out per unit transverse magnetization.
    pub fn fermi_contact_factor(&self) -> f64 {
        4.0 * PI / 3.0 * self.kappa0
    }
}

/// η = (4π/3)·κ₀·|γ_N|·M_z·T₂.
pub fn amplification_factor(params: &AmplifierParams) -> f64 {
    params.fermi_contact_factor() * params.gamma_n.abs() * params.mz * params.t2
}

/// Longitudinal magnetization that yields amplification `eta`.
pub fn mz_for_amplification(eta: f64, kappa0: f64, gamma_n: f64, t2: f64) -> f64 {
    3.0 * eta / (4.0 * PI * kappa0 * gamma_n.abs() * t2)
}

/// Anchors of the field-noise spectral density, T/√Hz, referred to the input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub on_resonance_x: f64,
    pub off_resonance_x: f64,
    pub z_axis: f64,
    /// Interpolate the transverse floor between the anchors with the
    /// resonance lineshape. Otherwise the on-resonance value applies at all ν.
    pub lineshape_linked: bool,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            on_resonance_x: 33.9e-15,
            off_resonance_x: 6.4e-12,
            z_axis: 257.5e-12,
            lineshape_linked: true,
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("on_resonance_x", self.on_resonance_x),
            ("off_resonance_x", self.off_resonance_x),
            ("z_axis", self.z_axis),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(PossError::invalid(format!(
                    "noise density {name} must be non-negative"
                )));
            }
        }
        Ok(())
    }

    /// Noise off everywhere.
    pub fn silent() -> Self {
        Self {
            on_resonance_x: 0.0,
            off_resonance_x: 0.0,
            z_axis: 0.0,
            lineshape_linked: false,
        }
    }
}

/// Complex gain and input-referred noise floor at one frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Response {
    pub gain: Complex64,
    /// T/√Hz.
    pub noise_floor: f64,
}

impl Response {
    /// Output noise in effective-field units, T/√Hz.
    pub fn output_noise(&self) -> f64 {
        self.gain.norm() * self.noise_floor
    }
}

/// Gain and noise floor at frequency `nu` (Hz) for a field along `axis`.
///
/// Transverse axes: |G| = 1 + (η − 1)·L(ν), arg G = −atan(2(ν−ν₀)/Δν) − φₐ.
/// The longitudinal axis sees the bare magnetometer, G = 1.
pub fn response(nu: f64, axis: Axis, params: &AmplifierParams, noise: &NoiseModel) -> Response {
    if !axis.is_transverse() {
        return Response {
            gain: Complex64::new(1.0, 0.0),
            noise_floor: noise.z_axis,
        };
    }
    let eta = amplification_factor(params);
    let l = params.lorentzian(nu);
    let magnitude = 1.0 + (eta - 1.0) * l;
    let phase = -params.detuning(nu).atan() - params.phase_delay;
    let noise_floor = if noise.lineshape_linked {
        let (on, off) = (noise.on_resonance_x, noise.off_resonance_x);
        if on == 0.0 || off == 0.0 {
            0.0
        } else {
            1.0 / (1.0 / off + (1.0 / on - 1.0 / off) * l)
        }
    } else {
        noise.on_resonance_x
    };
    Response {
        gain: Complex64::from_polar(magnitude, phase),
        noise_floor,
    }
}

/// Magnetization history from [`simulate_bloch`].
#[derive(Debug, Clone)]
pub struct BlochTrace {
    pub dt: f64,
    /// Tesla-equivalent, one entry per drive sample.
    pub magnetization: Vec<Vector3<f64>>,
}

impl BlochTrace {
    /// Effective field (4π/3)κ₀·M_⊥ seen by the embedded magnetometer.
    pub fn effective_field(&self, params: &AmplifierParams) -> Vec<Vector3<f64>> {
        let k = params.fermi_contact_factor();
        self.magnetization
            .iter()
            .map(|m| Vector3::new(m.x * k, m.y * k, 0.0))
            .collect()
    }

    pub fn transverse_magnitude(&self) -> Vec<f64> {
        self.magnetization.iter().map(|m| m.x.hypot(m.y)).collect()
    }
}

fn bloch_rhs(
    m: &Vector3<f64>,
    b: &Vector3<f64>,
    gamma: f64,
    t1: f64,
    t2: f64,
    mz0: f64,
) -> Vector3<f64> {
    m.cross(b) * gamma - Vector3::new(m.x / t2, m.y / t2, (m.z - mz0) / t1)
}

/// Integrates the Bloch equations for the noble-gas magnetization, starting
/// from full longitudinal polarization.
///
/// `drive` holds the applied field (tesla) at spacing `dt`; it is linearly
/// interpolated for the half steps of the fixed-step RK4 scheme.
pub fn simulate_bloch(
    params: &AmplifierParams,
    drive: &[Vector3<f64>],
    dt: f64,
) -> Result<BlochTrace> {
    simulate_bloch_from(params, Vector3::new(0.0, 0.0, params.mz), drive, dt)
}

/// [`simulate_bloch`] from an arbitrary initial magnetization.
pub fn simulate_bloch_from(
    params: &AmplifierParams,
    initial: Vector3<f64>,
    drive: &[Vector3<f64>],
    dt: f64,
) -> Result<BlochTrace> {
    params.validate()?;
    if !(dt > 0.0 && dt <= 1.0 / (20.0 * params.nu0)) {
        return Err(PossError::invalid(format!(
            "step {dt} s is too coarse to resolve precession at {} Hz (need <= {} s)",
            params.nu0,
            1.0 / (20.0 * params.nu0)
        )));
    }
    let bias = Vector3::new(0.0, 0.0, params.bias_field());
    let (gamma, t1, t2, mz0) = (params.gamma_n, params.t1, params.t2, params.mz);
    let f = |m: &Vector3<f64>, b: &Vector3<f64>| bloch_rhs(m, b, gamma, t1, t2, mz0);

    let mut out = Vec::with_capacity(drive.len());
    let mut m = initial;
    for (k, d0) in drive.iter().enumerate() {
        out.push(m);
        let d1 = drive.get(k + 1).unwrap_or(d0);
        let b0 = bias + d0;
        let bh = bias + (d0 + d1) * 0.5;
        let b1 = bias + d1;
        let k1 = f(&m, &b0);
        let k2 = f(&(m + k1 * (0.5 * dt)), &bh);
        let k3 = f(&(m + k2 * (0.5 * dt)), &bh);
        let k4 = f(&(m + k3 * dt), &b1);
        m += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    }
    Ok(BlochTrace {
        dt,
        magnetization: out,
    })
}

/// Filters a field time-series (tesla, along `axis`) through the amplifier
/// response, adds Gaussian noise shaped by the output noise density when
/// `noise_seed` is given, and converts to volts with the calibration constant.
///
/// The transfer is applied in the frequency domain over the whole record, so
/// periodic inputs are treated in steady state.
pub fn apply_amplifier(
    input: &TimeSeries,
    axis: Axis,
    params: &AmplifierParams,
    noise: &NoiseModel,
    noise_seed: Option<u64>,
) -> Result<TimeSeries> {
    params.validate()?;
    noise.validate()?;
    if input.sample_rate < 20.0 * params.nu0 {
        return Err(PossError::invalid(format!(
            "sample rate {} Hz is below 20 x nu0 = {} Hz",
            input.sample_rate,
            20.0 * params.nu0
        )));
    }
    let n = input.len();
    if n == 0 {
        return TimeSeries::new(input.sample_rate, input.t0, Vec::new(), noise_seed);
    }
    let fs = input.sample_rate;
    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(n);
    let inverse = planner.plan_fft_inverse(n);

    let mut spectrum: Vec<Complex64> = input
        .values
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .collect();
    forward.process(&mut spectrum);

    let mut noise_spectrum = noise_seed.map(|seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w: Vec<Complex64> = (0..n)
            .map(|_| Complex64::new(StandardNormal.sample(&mut rng), 0.0))
            .collect();
        forward.process(&mut w);
        w
    });

    let white_scale = (fs / 2.0).sqrt();
    for k in 0..n {
        let (freq, negative) = if k <= n / 2 {
            (k as f64 * fs / n as f64, false)
        } else {
            ((n - k) as f64 * fs / n as f64, true)
        };
        let r = response(freq, axis, params, noise);
        let g = if negative { r.gain.conj() } else { r.gain };
        spectrum[k] *= g;
        if let Some(w) = noise_spectrum.as_mut() {
            spectrum[k] += w[k] * (r.output_noise() * white_scale);
        }
    }
    inverse.process(&mut spectrum);
    let scale = params.calibration_alpha / n as f64;
    let values = spectrum.iter().map(|c| c.re * scale).collect();
    TimeSeries::new(fs, input.t0, values, noise_seed)
}
