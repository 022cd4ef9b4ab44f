//! Flat, sectioned `key = value` configuration.
//!
//! Every numeric key carries its unit in the name (`offset_y_mm`,
//! `calibration_alpha_V_per_nT`, `duty_cycle_frac`, ...). Values are stored in
//! the units written in the file and converted to SI only when the core types
//! are built, so serializing and re-parsing is exact.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use sha2::{Digest, Sha256};

use crate::io::fmt_f64;

use poss_core::amplifier::{AmplifierParams, NoiseModel, DEFAULT_MZ_T};
use poss_core::exotic_field::IntegrationConfig;
use poss_core::limits::{log_grid, ClConvention, Symmetrization};
use poss_core::source_model::{
    DensityProfile, ModulationMode, ModulationScheme, PolarizationContent, SourceGeometry,
    SourceModel,
};
use poss_core::{Execution, PhysicalConstants};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("{file}:{line}: {message}")]
    Syntax {
        file: String,
        line: usize,
        message: String,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Num(f64),
    Int(u64),
    Bool(bool),
    /// One of a fixed set of words.
    Word(String),
    /// A number or `none`.
    OptNum(Option<f64>),
    Path(String),
}

struct KeySpec {
    section: &'static str,
    name: &'static str,
    default: Value,
    words: &'static [&'static str],
}

const AXES: &[&str] = &["x", "y", "z", "-x", "-y", "-z"];
const SECTIONS: &[&str] = &[
    "source",
    "constants",
    "amplifier",
    "noise",
    "field",
    "analysis",
    "limits",
    "output",
];

fn schema() -> Vec<KeySpec> {
    let src = SourceModel::reference();
    let amp = AmplifierParams::default();
    let c = PhysicalConstants::default();
    let field = IntegrationConfig::default();
    // 0.58 cm³ cube
    let edge_mm = 580f64.cbrt();
    let num = |v: f64| Value::Num(v);
    let spec = |section, name, default| KeySpec {
        section,
        name,
        default,
        words: &[],
    };
    let word = |section, name, default: &str, words| KeySpec {
        section,
        name,
        default: Value::Word(default.into()),
        words,
    };
    vec![
        spec("source", "edge_x_mm", num(edge_mm)),
        spec("source", "edge_y_mm", num(edge_mm)),
        spec("source", "edge_z_mm", num(edge_mm)),
        spec("source", "offset_x_mm", num(-1.41)),
        spec("source", "offset_y_mm", num(50.67)),
        spec("source", "offset_z_mm", num(3.19)),
        word("source", "polarization_axis", "z", AXES),
        spec(
            "source",
            "polarized_electrons_count",
            num(src.content.n_polarized_electrons),
        ),
        spec(
            "source",
            "polarized_protons_count",
            num(src.content.n_polarized_protons),
        ),
        word(
            "source",
            "density_profile",
            "uniform",
            &["uniform", "exponential"],
        ),
        spec("source", "attenuation_length_mm", num(10.0)),
        word("source", "attenuation_axis", "z", &["x", "y", "z"]),
        spec(
            "source",
            "modulation_frequency_Hz",
            num(src.modulation.frequency_hz),
        ),
        spec("source", "duty_cycle_frac", num(src.modulation.duty_cycle)),
        spec("source", "modulation_phase_deg", num(0.0)),
        word("source", "modulation_mode", "chop", &["chop", "reverse"]),
        spec("constants", "hbar_J_s", num(c.hbar)),
        spec("constants", "c_m_per_s", num(c.c)),
        spec("constants", "electron_mass_kg", num(c.m_e)),
        spec("constants", "neutron_mass_kg", num(c.m_n)),
        spec("constants", "proton_mass_kg", num(c.m_p)),
        spec("constants", "xe_moment_J_per_T", num(c.mu_xe)),
        spec("constants", "bohr_magneton_J_per_T", num(c.mu_b)),
        spec("amplifier", "kappa0_ratio", num(amp.kappa0)),
        spec("amplifier", "mz_T", num(DEFAULT_MZ_T)),
        spec("amplifier", "t2_s", num(amp.t2)),
        spec("amplifier", "t1_s", num(amp.t1)),
        spec("amplifier", "nu0_Hz", num(amp.nu0)),
        spec("amplifier", "b0_nT", Value::OptNum(Some(847.0))),
        spec("amplifier", "phase_delay_deg", num(13.2)),
        spec("amplifier", "calibration_alpha_V_per_nT", num(1.99)),
        spec("noise", "enabled", Value::Bool(true)),
        spec("noise", "on_resonance_fT_per_rtHz", num(33.9)),
        spec("noise", "off_resonance_fT_per_rtHz", num(6400.0)),
        spec("noise", "z_axis_fT_per_rtHz", num(257_500.0)),
        spec("noise", "lineshape_linked", Value::Bool(true)),
        spec(
            "field",
            "grid_points_count",
            Value::Int(field.grid_points_per_axis as u64),
        ),
        spec(
            "field",
            "max_grid_points_count",
            Value::Int(field.max_grid_points_per_axis as u64),
        ),
        spec(
            "field",
            "target_rel_error_frac",
            num(field.target_rel_error),
        ),
        spec(
            "field",
            "mc_samples_count",
            Value::Int(field.mc_samples as u64),
        ),
        spec("field", "mc_seed", Value::Int(field.rng_seed)),
        word(
            "field",
            "execution",
            "parallel",
            &["parallel", "sequential"],
        ),
        spec("analysis", "lambda_m", num(0.1)),
        spec("analysis", "f11_ratio", num(0.0)),
        spec("analysis", "duration_s", num(3600.0)),
        spec("analysis", "records_count", Value::Int(24)),
        spec("analysis", "sample_rate_Hz", num(200.0)),
        spec("analysis", "master_seed", Value::Int(1)),
        spec("analysis", "inflate_errors", Value::Bool(true)),
        spec("limits", "lambda_min_m", num(1e-3)),
        spec("limits", "lambda_max_m", num(1e4)),
        spec("limits", "lambda_points_count", Value::Int(60)),
        spec("limits", "cl_frac", num(0.95)),
        word(
            "limits",
            "convention",
            "two_sided",
            &["two_sided", "one_sided", "feldman_cousins"],
        ),
        word("limits", "symmetrization", "max", &["max", "average"]),
        spec("limits", "quadrature_leakage_f11_ratio", num(0.0)),
        spec("limits", "sensitivity_gain_ratio", num(1e4)),
        spec("limits", "source_gain_ratio", num(1e4)),
        spec("limits", "project", Value::Bool(false)),
        spec("output", "directory", Value::Path("poss-out".into())),
    ]
}

/// Resolved configuration: every schema key with its value.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    values: BTreeMap<(String, String), Value>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let values = schema()
            .into_iter()
            .map(|k| ((k.section.to_string(), k.name.to_string()), k.default))
            .collect();
        Self { values }
    }
}

fn render(v: &Value) -> String {
    match v {
        Value::Num(x) => fmt_f64(*x),
        Value::Int(i) => i.to_string(),
        Value::Bool(b) => b.to_string(),
        Value::Word(w) | Value::Path(w) => w.clone(),
        Value::OptNum(None) => "none".into(),
        Value::OptNum(Some(x)) => fmt_f64(*x),
    }
}

fn parse_value(spec: &KeySpec, raw: &str) -> Result<Value, String> {
    let num = |s: &str| -> Result<f64, String> {
        let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("`{s}` is not finite"))
        }
    };
    match &spec.default {
        Value::Num(_) => num(raw).map(Value::Num),
        Value::Int(_) => raw
            .parse::<u64>()
            .map(Value::Int)
            .map_err(|_| format!("`{raw}` is not a non-negative integer")),
        Value::Bool(_) => match raw {
            "true" => Ok(Value::Bool(true)),
            "false" => Ok(Value::Bool(false)),
            _ => Err(format!("`{raw}` is not true or false")),
        },
        Value::Word(_) => {
            if spec.words.contains(&raw) {
                Ok(Value::Word(raw.into()))
            } else {
                Err(format!("`{raw}` is not one of {}", spec.words.join(", ")))
            }
        }
        Value::OptNum(_) => {
            if raw == "none" {
                Ok(Value::OptNum(None))
            } else {
                num(raw).map(|v| Value::OptNum(Some(v)))
            }
        }
        Value::Path(_) => Ok(Value::Path(raw.into())),
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Invalid(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Parses `text`; keys that are absent keep their defaults.
    pub fn parse(text: &str, file: &str) -> Result<Self, ConfigError> {
        let specs = schema();
        let mut cfg = Self::default();
        let mut section: Option<String> = None;
        let mut seen = std::collections::HashSet::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line = idx + 1;
            let err = |message: String| ConfigError::Syntax {
                file: file.into(),
                line,
                message,
            };
            let content = raw_line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(rest) = content.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| err("unterminated section header".into()))?
                    .trim();
                if !SECTIONS.contains(&name) {
                    return Err(err(format!("unknown section [{name}]")));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, found `{content}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let sec = section
                .as_deref()
                .ok_or_else(|| err("key outside of any section".into()))?;
            let Some(spec) = specs.iter().find(|s| s.section == sec && s.name == key) else {
                let prefix = format!("{key}_");
                if let Some(s) = specs
                    .iter()
                    .find(|s| s.section == sec && s.name.starts_with(&prefix))
                {
                    return Err(err(format!(
                        "key `{key}` lacks a unit suffix; expected `{}`",
                        s.name
                    )));
                }
                return Err(err(format!("unknown key `{key}` in [{sec}]")));
            };
            if !seen.insert((sec.to_string(), key.to_string())) {
                return Err(err(format!("duplicate key `{key}` in [{sec}]")));
            }
            let v = parse_value(spec, value).map_err(|m| err(format!("{key}: {m}")))?;
            cfg.values.insert((sec.into(), key.into()), v);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text form: all keys, schema order.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let mut current = "";
        for spec in schema() {
            if spec.section != current {
                if !current.is_empty() {
                    out.push('\n');
                }
                let _ = writeln!(out, "[{}]", spec.section);
                current = spec.section;
            }
            let v = &self.values[&(spec.section.to_string(), spec.name.to_string())];
            let _ = writeln!(out, "{} = {}", spec.name, render(v));
        }
        out
    }

    /// SHA-256 of the canonical form, hex.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.serialize().as_bytes()))
    }

    fn get(&self, section: &str, key: &str) -> &Value {
        self.values
            .get(&(section.to_string(), key.to_string()))
            .unwrap_or_else(|| panic!("schema has no key {section}.{key}"))
    }

    pub fn num(&self, section: &str, key: &str) -> f64 {
        match self.get(section, key) {
            Value::Num(v) => *v,
            other => panic!("{section}.{key} is not numeric: {other:?}"),
        }
    }

    pub fn int(&self, section: &str, key: &str) -> u64 {
        match self.get(section, key) {
            Value::Int(v) => *v,
            other => panic!("{section}.{key} is not an integer: {other:?}"),
        }
    }

    pub fn flag(&self, section: &str, key: &str) -> bool {
        match self.get(section, key) {
            Value::Bool(v) => *v,
            other => panic!("{section}.{key} is not boolean: {other:?}"),
        }
    }

    pub fn word(&self, section: &str, key: &str) -> &str {
        match self.get(section, key) {
            Value::Word(v) | Value::Path(v) => v,
            other => panic!("{section}.{key} is not text: {other:?}"),
        }
    }

    /// Replaces a value after checking it against the key's type.
    pub fn set(&mut self, section: &str, key: &str, raw: &str) -> Result<(), ConfigError> {
        let specs = schema();
        let spec = specs
            .iter()
            .find(|s| s.section == section && s.name == key)
            .ok_or_else(|| ConfigError::Invalid(format!("unknown key {section}.{key}")))?;
        let v = parse_value(spec, raw)
            .map_err(|m| ConfigError::Invalid(format!("{section}.{key}: {m}")))?;
        self.values.insert((section.into(), key.into()), v);
        self.validate()
    }

    pub fn set_num(&mut self, section: &str, key: &str, v: f64) -> Result<(), ConfigError> {
        self.set(section, key, &fmt_f64(v))
    }

    pub fn output_dir(&self) -> PathBuf {
        PathBuf::from(self.word("output", "directory"))
    }

    /// Builds every core type once so that inconsistent values are reported
    /// at load time.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: poss_core::PossError| ConfigError::Invalid(e.to_string());
        self.constants().validate().map_err(invalid)?;
        let source = self.source()?;
        source.validate().map_err(invalid)?;
        self.amplifier().validate().map_err(invalid)?;
        self.noise().validate().map_err(invalid)?;
        self.integration().validate().map_err(invalid)?;
        let positive = [
            ("analysis.lambda_m", self.lambda_m()),
            ("analysis.duration_s", self.duration_s()),
            ("analysis.sample_rate_Hz", self.sample_rate_hz()),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(ConfigError::Invalid(format!("{name} must be positive")));
            }
        }
        if self.records() == 0 {
            return Err(ConfigError::Invalid(
                "analysis.records_count must be at least 1".into(),
            ));
        }
        let cl = self.num("limits", "cl_frac");
        if !(cl > 0.5 && cl < 1.0) {
            return Err(ConfigError::Invalid(
                "limits.cl_frac must lie in (0.5, 1)".into(),
            ));
        }
        self.lambda_grid()?;
        for key in ["sensitivity_gain_ratio", "source_gain_ratio"] {
            if !(self.num("limits", key) >= 1.0) {
                return Err(ConfigError::Invalid(format!(
                    "limits.{key} must be at least 1"
                )));
            }
        }
        Ok(())
    }

    pub fn constants(&self) -> PhysicalConstants {
        let n = |k| self.num("constants", k);
        PhysicalConstants {
            hbar: n("hbar_J_s"),
            c: n("c_m_per_s"),
            m_e: n("electron_mass_kg"),
            m_n: n("neutron_mass_kg"),
            m_p: n("proton_mass_kg"),
            mu_xe: n("xe_moment_J_per_T"),
            mu_b: n("bohr_magneton_J_per_T"),
        }
    }

    fn axis_index(word: &str) -> usize {
        match word.trim_start_matches('-') {
            "x" => 0,
            "y" => 1,
            _ => 2,
        }
    }

    pub fn source(&self) -> Result<SourceModel, ConfigError> {
        let n = |k| self.num("source", k);
        let axis_word = self.word("source", "polarization_axis");
        let mut axis = Vector3::zeros();
        axis[Self::axis_index(axis_word)] = if axis_word.starts_with('-') {
            -1.0
        } else {
            1.0
        };
        let geometry = SourceGeometry::new(
            Vector3::new(n("edge_x_mm"), n("edge_y_mm"), n("edge_z_mm")) * 1e-3,
            Vector3::new(n("offset_x_mm"), n("offset_y_mm"), n("offset_z_mm")) * 1e-3,
            axis,
        )
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let profile = match self.word("source", "density_profile") {
            "exponential" => DensityProfile::ExponentialAttenuation {
                decay_length_m: n("attenuation_length_mm") * 1e-3,
                axis: Self::axis_index(self.word("source", "attenuation_axis")),
            },
            _ => DensityProfile::Uniform,
        };
        let mode = match self.word("source", "modulation_mode") {
            "reverse" => ModulationMode::Reverse,
            _ => ModulationMode::Chop,
        };
        Ok(SourceModel {
            geometry,
            content: PolarizationContent {
                n_polarized_electrons: n("polarized_electrons_count"),
                n_polarized_protons: n("polarized_protons_count"),
                profile,
            },
            modulation: ModulationScheme {
                frequency_hz: n("modulation_frequency_Hz"),
                duty_cycle: n("duty_cycle_frac"),
                phase_rad: n("modulation_phase_deg").to_radians(),
                mode,
            },
        })
    }

    pub fn amplifier(&self) -> AmplifierParams {
        let n = |k| self.num("amplifier", k);
        let b0 = match self.get("amplifier", "b0_nT") {
            Value::OptNum(v) => v.map(|b| b * 1e-9),
            _ => None,
        };
        AmplifierParams {
            kappa0: n("kappa0_ratio"),
            gamma_n: self.constants().gamma_xe(),
            mz: n("mz_T"),
            t2: n("t2_s"),
            t1: n("t1_s"),
            nu0: n("nu0_Hz"),
            b0,
            phase_delay: n("phase_delay_deg").to_radians(),
            calibration_alpha: n("calibration_alpha_V_per_nT") * 1e9,
        }
    }

    pub fn noise(&self) -> NoiseModel {
        if !self.flag("noise", "enabled") {
            return NoiseModel::silent();
        }
        let n = |k| self.num("noise", k) * 1e-15;
        NoiseModel {
            on_resonance_x: n("on_resonance_fT_per_rtHz"),
            off_resonance_x: n("off_resonance_fT_per_rtHz"),
            z_axis: n("z_axis_fT_per_rtHz"),
            lineshape_linked: self.flag("noise", "lineshape_linked"),
        }
    }

    pub fn noise_enabled(&self) -> bool {
        self.flag("noise", "enabled")
    }

    pub fn execution(&self) -> Execution {
        match self.word("field", "execution") {
            "sequential" => Execution::Sequential,
            _ => Execution::Parallel,
        }
    }

    pub fn integration(&self) -> IntegrationConfig {
        IntegrationConfig {
            grid_points_per_axis: self.int("field", "grid_points_count") as usize,
            max_grid_points_per_axis: self.int("field", "max_grid_points_count") as usize,
            mc_samples: self.int("field", "mc_samples_count") as usize,
            rng_seed: self.int("field", "mc_seed"),
            target_rel_error: self.num("field", "target_rel_error_frac"),
            execution: self.execution(),
            ..IntegrationConfig::default()
        }
    }

    pub fn lambda_m(&self) -> f64 {
        self.num("analysis", "lambda_m")
    }

    pub fn f11(&self) -> f64 {
        self.num("analysis", "f11_ratio")
    }

    pub fn duration_s(&self) -> f64 {
        self.num("analysis", "duration_s")
    }

    pub fn records(&self) -> u64 {
        self.int("analysis", "records_count")
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.num("analysis", "sample_rate_Hz")
    }

    pub fn master_seed(&self) -> u64 {
        self.int("analysis", "master_seed")
    }

    pub fn lambda_grid(&self) -> Result<Vec<f64>, ConfigError> {
        log_grid(
            self.num("limits", "lambda_min_m"),
            self.num("limits", "lambda_max_m"),
            self.int("limits", "lambda_points_count") as usize,
        )
        .map_err(|e| ConfigError::Invalid(format!("limits λ grid: {e}")))
    }

    pub fn convention(&self) -> ClConvention {
        ClConvention::parse(self.word("limits", "convention")).unwrap_or_default()
    }

    pub fn symmetrization(&self) -> Symmetrization {
        match self.word("limits", "symmetrization") {
            "average" => Symmetrization::Average,
            _ => Symmetrization::Max,
        }
    }
}

/// Per-record noise seed: the first eight bytes (little-endian) of
/// SHA-256(master_seed ‖ record_index), both encoded as little-endian u64.
pub fn record_seed(master_seed: u64, record_index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(master_seed.to_le_bytes());
    h.update(record_index.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}
