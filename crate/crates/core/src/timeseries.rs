use crate::{PossError, Result};

/// Uniformly sampled signal.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub sample_rate: f64,
    pub t0: f64,
    pub values: Vec<f64>,
    /// Noise seed for synthetic data; `None` for recorded data.
    pub seed: Option<u64>,
}

impl TimeSeries {
    pub fn new(sample_rate: f64, t0: f64, values: Vec<f64>, seed: Option<u64>) -> Result<Self> {
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(PossError::invalid(format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        if !t0.is_finite() {
            return Err(PossError::invalid("start time must be finite"));
        }
        Ok(Self {
            sample_rate,
            t0,
            values,
            seed,
        })
    }

    /// Builds a series from explicit sample times, which must be evenly spaced
    /// to within one part in 10⁶ of the step.
    pub fn from_samples(times: &[f64], values: Vec<f64>, seed: Option<u64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(PossError::invalid("times and values differ in length"));
        }
        if times.len() < 2 {
            return Err(PossError::invalid(
                "need at least two samples to infer the rate",
            ));
        }
        let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
        if !(dt > 0.0) {
            return Err(PossError::invalid("sample times must increase"));
        }
        for (i, w) in times.windows(2).enumerate() {
            if ((w[1] - w[0]) - dt).abs() > 1e-6 * dt {
                return Err(PossError::NonUniformSampling { index: i + 1 });
            }
        }
        Self::new(1.0 / dt, times[0], values, seed)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate
    }

    pub fn duration(&self) -> f64 {
        self.values.len() as f64 / self.sample_rate
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 / self.sample_rate
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_samples_accepted() {
        let t: Vec<f64> = (0..100).map(|k| 1.0 + k as f64 * 0.005).collect();
        let s = TimeSeries::from_samples(&t, vec![0.0; 100], None).unwrap();
        assert!((s.sample_rate - 200.0).abs() < 1e-9);
        assert!((s.duration() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn non_uniform_samples_rejected() {
        let mut t: Vec<f64> = (0..100).map(|k| k as f64 * 0.005).collect();
        t[40] += 0.001;
        assert!(matches!(
            TimeSeries::from_samples(&t, vec![0.0; 100], None),
            Err(PossError::NonUniformSampling { index: 40 })
        ));
    }
}
