//! Synthetic search data and the lock-in estimator: per-period coupling
//! extraction, per-record Gaussian statistics, and weighted combination of
//! records.

use std::f64::consts::PI;

use nalgebra::Vector3;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::erf::erf;

use crate::amplifier::{apply_amplifier, response, AmplifierParams, Axis, NoiseModel};
use crate::constants::PhysicalConstants;
use crate::exotic_field::{pseudo_field_point, IntegrationConfig};
use crate::source_model::{harmonic_amplitude, harmonic_phase, SourceModel};
pub use crate::timeseries::TimeSeries;
use crate::{PossError, Result};

/// Frequency, phase and amplitude normalization of the lock-in reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LockinReference {
    pub frequency_hz: f64,
    /// φ₁ − φₐ: phase of the amplified first harmonic, rad.
    pub phase_rad: f64,
    /// First-harmonic amplitude per unit source level (2/π for the 50 % chop).
    pub first_harmonic_fraction: f64,
}

impl LockinReference {
    /// Reference for `source` read out through `amplifier` along x̂.
    pub fn for_setup(source: &SourceModel, amplifier: &AmplifierParams) -> Result<Self> {
        let scheme = &source.modulation;
        let gain = response(
            scheme.frequency_hz,
            Axis::X,
            amplifier,
            &NoiseModel::default(),
        )
        .gain;
        Ok(Self {
            frequency_hz: scheme.frequency_hz,
            phase_rad: harmonic_phase(1, scheme)? + gain.arg(),
            first_harmonic_fraction: harmonic_amplitude(1, scheme)? / 2.0,
        })
    }

    pub fn period(&self) -> f64 {
        1.0 / self.frequency_hz
    }
}

/// End-to-end conversion from output volts to input field at the modulation
/// frequency: calibration constant times the amplifier gain there, V/T.
pub fn lockin_alpha(source: &SourceModel, amplifier: &AmplifierParams) -> f64 {
    let gain = response(
        source.modulation.frequency_hz,
        Axis::X,
        amplifier,
        &NoiseModel::default(),
    )
    .gain;
    amplifier.calibration_alpha * gain.norm()
}

/// Ground truth attached to a synthetic record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InjectionTruth {
    pub f11: f64,
    pub lambda_m: f64,
    /// x̂ component of the exotic field for f₁₁ = 1, T.
    pub b11_unit: f64,
    pub reference: LockinReference,
    pub alpha: f64,
}

#[derive(Debug, Clone)]
pub struct SearchRecord {
    pub series: TimeSeries,
    pub truth: InjectionTruth,
}

/// Reusable forward chain for one (source, amplifier, λ): the field integral
/// is evaluated once and shared by every record.
#[derive(Debug, Clone)]
pub struct SearchSynthesizer {
    pub source: SourceModel,
    pub amplifier: AmplifierParams,
    pub noise: NoiseModel,
    pub sample_rate: f64,
    pub lambda_m: f64,
    pub b11_unit: f64,
    pub reference: LockinReference,
    pub alpha: f64,
}

impl SearchSynthesizer {
    pub fn new(
        source: &SourceModel,
        amplifier: &AmplifierParams,
        noise: &NoiseModel,
        constants: &PhysicalConstants,
        field_cfg: &IntegrationConfig,
        lambda_m: f64,
        sample_rate: f64,
    ) -> Result<Self> {
        let field = pseudo_field_point(
            source,
            &Vector3::zeros(),
            lambda_m,
            1.0,
            field_cfg,
            constants,
        )?;
        Self::with_unit_field(
            source,
            amplifier,
            noise,
            field.field.x,
            lambda_m,
            sample_rate,
        )
    }

    /// Skips the field integral when `b11_unit` is already known.
    pub fn with_unit_field(
        source: &SourceModel,
        amplifier: &AmplifierParams,
        noise: &NoiseModel,
        b11_unit: f64,
        lambda_m: f64,
        sample_rate: f64,
    ) -> Result<Self> {
        source.validate()?;
        amplifier.validate()?;
        noise.validate()?;
        if sample_rate < 20.0 * source.modulation.frequency_hz {
            return Err(PossError::invalid(
                "sample rate must be at least 20x the modulation frequency",
            ));
        }
        Ok(Self {
            source: source.clone(),
            amplifier: *amplifier,
            noise: *noise,
            sample_rate,
            lambda_m,
            b11_unit,
            reference: LockinReference::for_setup(source, amplifier)?,
            alpha: lockin_alpha(source, amplifier),
        })
    }

    pub fn truth(&self, f11: f64) -> InjectionTruth {
        InjectionTruth {
            f11,
            lambda_m: self.lambda_m,
            b11_unit: self.b11_unit,
            reference: self.reference,
            alpha: self.alpha,
        }
    }

    /// Exotic field along x̂ (tesla) sampled on the record grid. Harmonics at or
    /// above Nyquist are left out so the samples carry no aliasing.
    pub fn input_field(&self, f11: f64, duration: f64, t0: f64) -> Result<TimeSeries> {
        let period = self.source.modulation.period();
        if !(duration >= 10.0 * period * (1.0 - 1e-12)) {
            return Err(PossError::invalid(format!(
                "duration {duration} s is shorter than 10 modulation periods"
            )));
        }
        let n = (duration * self.sample_rate).round() as usize;
        let amplitude = f11 * self.b11_unit;
        let nyquist = 0.5 * self.sample_rate;
        let scheme = self.source.modulation;
        let values = (0..n)
            .map(|k| {
                let t = t0 + k as f64 / self.sample_rate;
                amplitude * scheme.bandlimited_level(t, nyquist)
            })
            .collect();
        TimeSeries::new(self.sample_rate, t0, values, None)
    }

    /// One record of sensor output in volts; noise is added only when
    /// `noise_seed` is given.
    pub fn record(&self, f11: f64, duration: f64, noise_seed: Option<u64>) -> Result<SearchRecord> {
        let input = self.input_field(f11, duration, 0.0)?;
        let series = apply_amplifier(&input, Axis::X, &self.amplifier, &self.noise, noise_seed)?;
        Ok(SearchRecord {
            series,
            truth: self.truth(f11),
        })
    }
}

/// Forward chain from an injected coupling to a record of sensor output.
#[allow(clippy::too_many_arguments)]
pub fn synthesize_search_data(
    f11: f64,
    lambda_m: f64,
    source: &SourceModel,
    amplifier: &AmplifierParams,
    noise: &NoiseModel,
    duration: f64,
    sample_rate: f64,
    noise_seed: Option<u64>,
    field_cfg: &IntegrationConfig,
    constants: &PhysicalConstants,
) -> Result<SearchRecord> {
    SearchSynthesizer::new(
        source,
        amplifier,
        noise,
        constants,
        field_cfg,
        lambda_m,
        sample_rate,
    )?
    .record(f11, duration, noise_seed)
}

/// Coupling estimates, one per modulation period.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodEstimates {
    /// In-phase estimates f₁₁ⁱ.
    pub values: Vec<f64>,
    /// Same projection on the quadrature (90°-shifted) reference.
    pub quadrature: Vec<f64>,
    pub period: f64,
    pub reference_phase: f64,
    /// Samples of a trailing partial period that were discarded.
    pub dropped_samples: usize,
}

/// Lock-in estimate of f₁₁ for every complete modulation period of `series`.
///
/// For each period Sᵢ the estimate is
/// `∫ sin(2πνt + φ)·Sᵢ dt / (c·α·b · ∫ sin²(2πνt + φ) dt)` with `c` the
/// first-harmonic fraction (so 1/c = π/2 for the 50 % chop). Integrals use the
/// trapezoid rule with periodic closure over the samples of the period, which
/// requires an integer number of samples per period.
pub fn extract_per_period(
    series: &TimeSeries,
    reference: &LockinReference,
    alpha: f64,
    b11_unit: f64,
) -> Result<PeriodEstimates> {
    if b11_unit == 0.0 || !b11_unit.is_finite() {
        return Err(PossError::Division(format!(
            "unit-coupling field is {b11_unit}"
        )));
    }
    if alpha == 0.0 || !alpha.is_finite() {
        return Err(PossError::Division(format!(
            "calibration constant is {alpha}"
        )));
    }
    let per_period = series.sample_rate / reference.frequency_hz;
    let samples = per_period.round();
    if samples < 4.0 || (per_period - samples).abs() > 1e-6 * samples {
        return Err(PossError::invalid(format!(
            "sample rate {} Hz does not give an integer number (>= 4) of samples per {} Hz period",
            series.sample_rate, reference.frequency_hz
        )));
    }
    let p = samples as usize;
    let periods = series.len() / p;
    if periods == 0 {
        return Err(PossError::invalid(
            "series is shorter than one modulation period",
        ));
    }
    let dt = series.dt();
    let omega = 2.0 * PI * reference.frequency_hz;
    let norm = 1.0 / (reference.first_harmonic_fraction * alpha * b11_unit);

    let mut values = Vec::with_capacity(periods);
    let mut quadrature = Vec::with_capacity(periods);
    for i in 0..periods {
        let (mut in_phase, mut quad, mut sin2, mut cos2) = (0.0, 0.0, 0.0, 0.0);
        for k in i * p..(i + 1) * p {
            let arg = omega * series.time(k) + reference.phase_rad;
            let (s, c) = arg.sin_cos();
            let v = series.values[k];
            in_phase += s * v;
            quad += c * v;
            sin2 += s * s;
            cos2 += c * c;
        }
        // dt cancels between numerator and denominator but is kept for clarity
        values.push(norm * (in_phase * dt) / (sin2 * dt));
        quadrature.push(norm * (quad * dt) / (cos2 * dt));
    }
    Ok(PeriodEstimates {
        values,
        quadrature,
        period: reference.period(),
        reference_phase: reference.phase_rad,
        dropped_samples: series.len() - periods * p,
    })
}

/// Mean and statistical error of one record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordSummary {
    pub mean: f64,
    pub stat_error: f64,
    pub n_periods: usize,
    /// p-value of Pearson's χ² test of the fitted Gaussian.
    pub fit_quality: f64,
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Two-parameter Nelder–Mead minimizer.
fn nelder_mead<F: Fn([f64; 2]) -> f64>(
    f: F,
    x0: [f64; 2],
    step: f64,
    max_iter: usize,
    tol: f64,
) -> [f64; 2] {
    let mut simplex = [x0, [x0[0] + step, x0[1]], [x0[0], x0[1] + step]];
    let mut values = simplex.map(&f);
    for _ in 0..max_iter {
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.map(|i| simplex[i]);
        values = order.map(|i| values[i]);
        if (values[2] - values[0]).abs() <= tol * (values[0].abs() + tol) {
            break;
        }
        let centroid = [
            (simplex[0][0] + simplex[1][0]) / 2.0,
            (simplex[0][1] + simplex[1][1]) / 2.0,
        ];
        let along = |t: f64| {
            [
                centroid[0] + t * (simplex[2][0] - centroid[0]),
                centroid[1] + t * (simplex[2][1] - centroid[1]),
            ]
        };
        let reflected = along(-1.0);
        let fr = f(reflected);
        if fr < values[0] {
            let expanded = along(-2.0);
            let fe = f(expanded);
            if fe < fr {
                simplex[2] = expanded;
                values[2] = fe;
            } else {
                simplex[2] = reflected;
                values[2] = fr;
            }
        } else if fr < values[1] {
            simplex[2] = reflected;
            values[2] = fr;
        } else {
            let contracted = if fr < values[2] {
                along(-0.5)
            } else {
                along(0.5)
            };
            let fc = f(contracted);
            if fc < values[2].min(fr) {
                simplex[2] = contracted;
                values[2] = fc;
            } else {
                for i in 1..3 {
                    simplex[i] = [
                        simplex[0][0] + 0.5 * (simplex[i][0] - simplex[0][0]),
                        simplex[0][1] + 0.5 * (simplex[i][1] - simplex[0][1]),
                    ];
                    values[i] = f(simplex[i]);
                }
            }
        }
    }
    let best = (0..3)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .unwrap();
    simplex[best]
}

/// Histogram-based Gaussian fit of per-period estimates.
///
/// Bins follow the Freedman–Diaconis rule; the Gaussian is fitted by binned
/// maximum likelihood and checked with Pearson's χ² (bins merged until each
/// expects at least five entries).
pub fn gaussian_fit(estimates: &PeriodEstimates) -> Result<RecordSummary> {
    gaussian_fit_values(&estimates.values)
}

/// [`gaussian_fit`] on a bare slice.
pub fn gaussian_fit_values(values: &[f64]) -> Result<RecordSummary> {
    let n = values.len();
    if n < 100 {
        return Err(PossError::invalid(format!(
            "need at least 100 estimates, got {n}"
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(PossError::invalid("estimates must be finite"));
    }
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nf - 1.0);
    let sd = var.sqrt();
    if values.iter().all(|v| *v == values[0]) {
        return Err(PossError::ZeroWidth { value: values[0] });
    }
    if sd <= 1e-14 * mean.abs() {
        return Err(PossError::ZeroWidth { value: mean });
    }

    let mut z: Vec<f64> = values.iter().map(|v| (v - mean) / sd).collect();
    z.sort_by(f64::total_cmp);
    let (lo, hi) = (z[0], z[n - 1]);
    let iqr = quantile_sorted(&z, 0.75) - quantile_sorted(&z, 0.25);
    let width = if iqr > 0.0 {
        2.0 * iqr * nf.powf(-1.0 / 3.0)
    } else {
        3.49 * nf.powf(-1.0 / 3.0)
    };
    let bins = (((hi - lo) / width).ceil() as usize).clamp(5, 400);
    let bw = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| lo + i as f64 * bw).collect();
    let mut counts = vec![0.0f64; bins];
    for v in &z {
        let idx = (((v - lo) / bw) as usize).min(bins - 1);
        counts[idx] += 1.0;
    }

    let probabilities = |mu: f64, sigma: f64| -> Vec<f64> {
        // outer bins extend to ±∞ so the model cannot flatten into the range
        let mut cdf: Vec<f64> = edges
            .iter()
            .map(|e| std_normal_cdf((e - mu) / sigma))
            .collect();
        cdf[0] = 0.0;
        cdf[bins] = 1.0;
        cdf.windows(2).map(|w| w[1] - w[0]).collect()
    };
    let nll = |p: [f64; 2]| -> f64 {
        let probs = probabilities(p[0], p[1].exp());
        counts
            .iter()
            .zip(&probs)
            .filter(|(c, _)| **c > 0.0)
            .map(|(c, q)| -c * q.max(1e-300).ln())
            .sum()
    };
    let best = nelder_mead(nll, [0.0, 0.0], 0.1, 1000, 1e-13);
    let (mu, sigma) = (best[0], best[1].exp());

    let expected: Vec<f64> = probabilities(mu, sigma).iter().map(|q| q * nf).collect();
    let mut merged: Vec<(f64, f64)> = Vec::new();
    let (mut o_acc, mut e_acc) = (0.0, 0.0);
    for (o, e) in counts.iter().zip(&expected) {
        o_acc += o;
        e_acc += e;
        if e_acc >= 5.0 {
            merged.push((o_acc, e_acc));
            o_acc = 0.0;
            e_acc = 0.0;
        }
    }
    if e_acc > 0.0 || o_acc > 0.0 {
        match merged.last_mut() {
            Some(last) => {
                last.0 += o_acc;
                last.1 += e_acc;
            }
            None => merged.push((o_acc, e_acc)),
        }
    }
    let chi2: f64 = merged.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let dof = merged.len() as f64 - 3.0;
    let fit_quality = if dof >= 1.0 {
        ChiSquared::new(dof).map(|d| d.sf(chi2)).unwrap_or(f64::NAN)
    } else {
        f64::NAN
    };

    Ok(RecordSummary {
        mean: mean + sd * mu,
        stat_error: sd * sigma / nf.sqrt(),
        n_periods: n,
        fit_quality,
    })
}

/// Inverse-variance combination of records.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CombinedResult {
    pub mean: f64,
    pub stat_error: f64,
    /// Undefined for a single record.
    pub reduced_chi2: Option<f64>,
    pub n_records: usize,
    /// Whether `stat_error` was scaled by √χ²ᵣ.
    pub inflated: bool,
}

/// Weighted mean, (Σw)^(−½) error and reduced χ² of the record means; with
/// `inflate` the error is scaled by √χ²ᵣ whenever χ²ᵣ > 1.
pub fn combine_records(summaries: &[RecordSummary], inflate: bool) -> Result<CombinedResult> {
    if summaries.is_empty() {
        return Err(PossError::invalid("no records to combine"));
    }
    if let Some(bad) = summaries
        .iter()
        .find(|s| !(s.stat_error > 0.0 && s.stat_error.is_finite()))
    {
        return Err(PossError::invalid(format!(
            "record error must be positive, got {}",
            bad.stat_error
        )));
    }
    if summaries.len() == 1 {
        let s = summaries[0];
        return Ok(CombinedResult {
            mean: s.mean,
            stat_error: s.stat_error,
            reduced_chi2: None,
            n_records: 1,
            inflated: false,
        });
    }
    let weights: Vec<f64> = summaries
        .iter()
        .map(|s| 1.0 / (s.stat_error * s.stat_error))
        .collect();
    let wsum: f64 = weights.iter().sum();
    let mean = summaries
        .iter()
        .zip(&weights)
        .map(|(s, w)| w * s.mean)
        .sum::<f64>()
        / wsum;
    let chi2: f64 = summaries
        .iter()
        .zip(&weights)
        .map(|(s, w)| w * (s.mean - mean).powi(2))
        .sum();
    let reduced = chi2 / (summaries.len() - 1) as f64;
    let mut stat_error = wsum.powf(-0.5);
    let inflated = inflate && reduced > 1.0;
    if inflated {
        stat_error *= reduced.sqrt();
    }
    Ok(CombinedResult {
        mean,
        stat_error,
        reduced_chi2: Some(reduced),
        n_records: summaries.len(),
        inflated,
    })
}
