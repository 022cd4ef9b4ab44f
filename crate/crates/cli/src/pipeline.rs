//! Subcommands. Each stage reads and writes plain files in the output
//! directory, so running the stages one by one produces the same files as
//! `full`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::Vector3;
use poss_core::analysis::{
    combine_records, extract_per_period, gaussian_fit, LockinReference, RecordSummary,
    SearchSynthesizer, TimeSeries,
};
use poss_core::exotic_field::{
    pseudo_field_mc_oracle, pseudo_field_point, source_dipole_field, PseudoFieldResult,
};
use poss_core::limits::{
    boson_mass_ev, confidence_limit, exclusion_point, project_upgrade, propagate_systematics,
    reference_parameters, sweep_lambda, CalibratedParameter, ExclusionCurve, ExclusionPoint,
    ForwardModel, LockinForward, ParameterKind, ReferenceEstimate, SweepSettings,
};
use poss_core::PossError;

use crate::config::{record_seed, PipelineConfig};
use crate::error::CliError;
use crate::io::{
    fmt_f64, read_sidecar, update_manifest, write_csv, write_sidecar, StageRecord, Table,
};

pub const FIELD_FILE: &str = "field.csv";
pub const FIELD_SWEEP_FILE: &str = "field_sweep.csv";
pub const RECORDS_DIR: &str = "records";
pub const SUMMARY_FILE: &str = "record_summaries.csv";
pub const COMBINED_FILE: &str = "combined.csv";
pub const EXCLUSION_FILE: &str = "exclusion.csv";
pub const REFERENCE_LIMIT_FILE: &str = "reference_limit.csv";
pub const BUDGET_FILE: &str = "systematic_budget.csv";

const TIME_SERIES_HEADER: [&str; 2] = ["time_s", "signal_V"];
const SUMMARY_HEADER: [&str; 5] = [
    "record_id",
    "mean_f11",
    "stat_err",
    "n_periods",
    "fit_quality",
];
const COMBINED_HEADER: [&str; 6] = [
    "mean_f11",
    "stat_err",
    "reduced_chi2",
    "n_records",
    "inflated",
    "lambda_m",
];

/// Everything a stage needs: the resolved config, its hash and where to write.
pub struct Context {
    pub cfg: PipelineConfig,
    pub hash: String,
    pub out: PathBuf,
}

impl Context {
    pub fn new(cfg: PipelineConfig, out: PathBuf) -> Self {
        let hash = cfg.hash();
        Self { cfg, hash, out }
    }

    fn meta(&self, extra: Vec<(&'static str, String)>) -> Vec<(&'static str, String)> {
        let mut m = vec![
            ("tool", format!("poss {}", env!("CARGO_PKG_VERSION"))),
            ("config_hash", self.hash.clone()),
        ];
        m.extend(extra);
        m
    }

    fn relative(&self, path: &Path) -> String {
        path.strip_prefix(&self.out)
            .unwrap_or(path)
            .display()
            .to_string()
    }

    fn record_stage(
        &self,
        name: &str,
        inputs: &[PathBuf],
        outputs: &[PathBuf],
        start: Instant,
    ) -> Result<(), CliError> {
        update_manifest(
            &self.out,
            &self.hash,
            StageRecord {
                name: name.into(),
                inputs: inputs.iter().map(|p| self.relative(p)).collect(),
                outputs: outputs.iter().map(|p| self.relative(p)).collect(),
                wall_clock_s: start.elapsed().as_secs_f64(),
            },
        )
    }
}

fn field_row(label: &str, r: &PseudoFieldResult) -> Vec<String> {
    vec![
        label.into(),
        fmt_f64(r.field.x),
        fmt_f64(r.field.y),
        fmt_f64(r.field.z),
        fmt_f64(r.component_errors.x),
        fmt_f64(r.component_errors.y),
        fmt_f64(r.component_errors.z),
        r.resolution.to_string(),
        r.underflow.to_string(),
    ]
}

/// Exotic field at the sensor by quadrature and by Monte Carlo, plus the
/// classical dipole field of the source for comparison.
pub fn cmd_field(ctx: &Context, mirrored: bool) -> Result<Vec<PathBuf>, CliError> {
    let start = Instant::now();
    let cfg = &ctx.cfg;
    let mut source = cfg.source()?;
    if mirrored {
        source = source.with_geometry(source.geometry.mirrored()?);
    }
    let c = cfg.constants();
    let icfg = cfg.integration();
    let (lambda, f11) = (cfg.lambda_m(), cfg.f11());
    let origin = Vector3::zeros();
    let quad = pseudo_field_point(&source, &origin, lambda, f11, &icfg, &c)?;
    let mc = pseudo_field_mc_oracle(&source, &origin, lambda, f11, &icfg, &c)?;
    let dipole = source_dipole_field(&source, &origin, &c)?;
    let rows = vec![
        field_row("quadrature", &quad),
        field_row("monte_carlo", &mc),
        vec![
            "classical_dipole".into(),
            fmt_f64(dipole.x),
            fmt_f64(dipole.y),
            fmt_f64(dipole.z),
            "0".into(),
            "0".into(),
            "0".into(),
            "0".into(),
            "false".into(),
        ],
    ];
    let path = ctx.out.join(FIELD_FILE);
    write_csv(
        &path,
        &ctx.meta(vec![
            ("lambda_m", fmt_f64(lambda)),
            ("f11", fmt_f64(f11)),
            ("mirrored", mirrored.to_string()),
            ("units", "field and errors in T at the sensor center".into()),
        ]),
        &[
            "method",
            "Bx_T",
            "By_T",
            "Bz_T",
            "err_x_T",
            "err_y_T",
            "err_z_T",
            "resolution",
            "underflow",
        ],
        &rows,
    )?;
    ctx.record_stage("field", &[], std::slice::from_ref(&path), start)?;
    Ok(vec![path])
}

/// Unit-coupling field over the configured λ grid.
pub fn cmd_sweep(ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let start = Instant::now();
    let cfg = &ctx.cfg;
    let source = cfg.source()?;
    let c = cfg.constants();
    let icfg = cfg.integration();
    let grid = cfg.lambda_grid()?;
    let results = cfg.execution().map_slice(&grid, |&l| {
        pseudo_field_point(&source, &Vector3::zeros(), l, 1.0, &icfg, &c)
    });
    let mut rows = Vec::with_capacity(grid.len());
    for (lambda, r) in grid.iter().zip(results) {
        let (b, err, status) = match r {
            Ok(r) if r.underflow => (Vector3::zeros(), 0.0, "underflow"),
            Ok(r) => (r.field, r.integration_error, "ok"),
            Err(PossError::Integration { .. }) => {
                (Vector3::repeat(f64::NAN), f64::NAN, "unconverged")
            }
            Err(e) => return Err(e.into()),
        };
        rows.push(vec![
            fmt_f64(*lambda),
            fmt_f64(boson_mass_ev(*lambda)),
            fmt_f64(b.x),
            fmt_f64(b.y),
            fmt_f64(b.z),
            fmt_f64(err),
            status.into(),
        ]);
    }
    let path = ctx.out.join(FIELD_SWEEP_FILE);
    write_csv(
        &path,
        &ctx.meta(vec![
            ("f11", "1".into()),
            ("units", "field in T for unit coupling".into()),
        ]),
        &[
            "lambda_m",
            "boson_mass_eV",
            "Bx_T",
            "By_T",
            "Bz_T",
            "integration_error_T",
            "status",
        ],
        &rows,
    )?;
    ctx.record_stage("sweep", &[], std::slice::from_ref(&path), start)?;
    Ok(vec![path])
}

fn synthesizer(cfg: &PipelineConfig, lambda: f64) -> Result<SearchSynthesizer, CliError> {
    Ok(SearchSynthesizer::new(
        &cfg.source()?,
        &cfg.amplifier(),
        &cfg.noise(),
        &cfg.constants(),
        &cfg.integration(),
        lambda,
        cfg.sample_rate_hz(),
    )?)
}

fn record_name(i: u64) -> String {
    format!("record_{i:03}")
}

/// Synthetic records, one CSV plus a `.meta` sidecar each.
pub fn cmd_simulate(ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let start = Instant::now();
    let cfg = &ctx.cfg;
    let records = cfg.records();
    if records == 0 {
        return Err(CliError::Rejected("at least one record is required".into()));
    }
    let lambda = cfg.lambda_m();
    let f11 = cfg.f11();
    let syn = synthesizer(cfg, lambda)?;
    let dir = ctx.out.join(RECORDS_DIR);
    fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let master = cfg.master_seed();
    let noise_on = cfg.noise_enabled();

    let write_one = |i: u64| -> Result<Vec<PathBuf>, CliError> {
        let seed = record_seed(master, i);
        let rec = syn.record(f11, cfg.duration_s(), noise_on.then_some(seed))?;
        let name = record_name(i);
        let csv_path = dir.join(format!("{name}.csv"));
        let meta_path = dir.join(format!("{name}.meta"));
        let rows: Vec<Vec<String>> = rec
            .series
            .values
            .iter()
            .enumerate()
            .map(|(k, v)| vec![fmt_f64(rec.series.time(k)), fmt_f64(*v)])
            .collect();
        write_csv(
            &csv_path,
            &ctx.meta(vec![
                ("seed", seed.to_string()),
                ("sample_rate_Hz", fmt_f64(rec.series.sample_rate)),
                ("t0_s", fmt_f64(rec.series.t0)),
                ("units", "s, V".into()),
            ]),
            &TIME_SERIES_HEADER,
            &rows,
        )?;
        let t = rec.truth;
        write_sidecar(
            &meta_path,
            &[
                ("config_hash", ctx.hash.clone()),
                ("seed", seed.to_string()),
                ("noise", if noise_on { "on" } else { "off" }.to_string()),
                ("injected_f11", fmt_f64(t.f11)),
                ("lambda_m", fmt_f64(t.lambda_m)),
                ("b11_unit_T", fmt_f64(t.b11_unit)),
                ("reference_phase_rad", fmt_f64(t.reference.phase_rad)),
                ("modulation_frequency_Hz", fmt_f64(t.reference.frequency_hz)),
                (
                    "first_harmonic_fraction",
                    fmt_f64(t.reference.first_harmonic_fraction),
                ),
                ("lockin_alpha_V_per_T", fmt_f64(t.alpha)),
            ],
        )?;
        Ok(vec![csv_path, meta_path])
    };

    let results = cfg
        .execution()
        .map(records as usize, |i| write_one(i as u64));
    let mut written = Vec::new();
    let mut failure = None;
    for r in results {
        match r {
            Ok(paths) => written.extend(paths),
            Err(e) => failure = failure.or(Some(e)),
        }
    }
    if let Some(e) = failure {
        for p in &written {
            let _ = fs::remove_file(p);
        }
        return Err(e);
    }
    ctx.record_stage("simulate", &[], &written, start)?;
    Ok(written)
}

/// Record files of a previous `simulate` run, in name order.
pub fn default_inputs(out: &Path) -> Vec<PathBuf> {
    let dir = out.join(RECORDS_DIR);
    let mut files: Vec<PathBuf> = fs::read_dir(&dir)
        .map(|it| {
            it.filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "csv"))
                .collect()
        })
        .unwrap_or_default();
    files.sort();
    files
}

/// Calibration used to analyze one record.
struct Calibration {
    reference: LockinReference,
    alpha: f64,
    b11_unit: f64,
    lambda_m: f64,
}

fn sidecar_number(
    meta: &std::collections::BTreeMap<String, String>,
    path: &Path,
    key: &str,
) -> Result<f64, CliError> {
    meta.get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| CliError::Io(format!("{}: missing or malformed `{key}`", path.display())))
}

fn calibration_for(path: &Path, fallback: &Calibration) -> Result<Calibration, CliError> {
    let sidecar = path.with_extension("meta");
    if !sidecar.exists() {
        return Ok(Calibration { ..*fallback });
    }
    let meta = read_sidecar(&sidecar)?;
    Ok(Calibration {
        reference: LockinReference {
            frequency_hz: sidecar_number(&meta, &sidecar, "modulation_frequency_Hz")?,
            phase_rad: sidecar_number(&meta, &sidecar, "reference_phase_rad")?,
            first_harmonic_fraction: sidecar_number(&meta, &sidecar, "first_harmonic_fraction")?,
        },
        alpha: sidecar_number(&meta, &sidecar, "lockin_alpha_V_per_T")?,
        b11_unit: sidecar_number(&meta, &sidecar, "b11_unit_T")?,
        lambda_m: sidecar_number(&meta, &sidecar, "lambda_m")?,
    })
}

pub fn read_time_series(path: &Path) -> Result<TimeSeries, CliError> {
    let table = Table::read(path)?;
    table.expect_header(&TIME_SERIES_HEADER)?;
    let fs_hz = table.meta_number("sample_rate_Hz")?;
    let t0 = table.meta_number("t0_s")?;
    let seed = table.meta.get("seed").and_then(|s| s.parse().ok());
    let mut values = Vec::with_capacity(table.rows.len());
    for (k, (line, row)) in table.rows.iter().enumerate() {
        let t = table.number(*line, row, 0)?;
        let expected = t0 + k as f64 / fs_hz;
        if (t - expected).abs() > 1e-6 / fs_hz {
            return Err(CliError::Io(format!(
                "{}:{line}: time {t} s breaks uniform sampling at {fs_hz} Hz",
                path.display()
            )));
        }
        values.push(table.number(*line, row, 1)?);
    }
    Ok(TimeSeries::new(fs_hz, t0, values, seed)?)
}

/// Lock-in analysis of every input record and their weighted combination.
pub fn cmd_analyze(ctx: &Context, inputs: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let start = Instant::now();
    if inputs.is_empty() {
        return Err(CliError::Rejected("no input records to analyze".into()));
    }
    let cfg = &ctx.cfg;
    let syn = synthesizer(cfg, cfg.lambda_m())?;
    let fallback = Calibration {
        reference: syn.reference,
        alpha: syn.alpha,
        b11_unit: syn.b11_unit,
        lambda_m: syn.lambda_m,
    };
    let analyzed = cfg.execution().map_slice(
        inputs,
        |path| -> Result<(RecordSummary, f64, usize), CliError> {
            let cal = calibration_for(path, &fallback)?;
            let series = read_time_series(path)?;
            let est = extract_per_period(&series, &cal.reference, cal.alpha, cal.b11_unit)?;
            let summary = gaussian_fit(&est)
                .map_err(|e| CliError::Numerical(format!("{}: {e}", path.display())))?;
            Ok((summary, cal.lambda_m, est.dropped_samples))
        },
    );
    let mut summaries = Vec::with_capacity(inputs.len());
    let mut lambda = None;
    let mut rows = Vec::new();
    for (path, result) in inputs.iter().zip(analyzed) {
        let (s, l, dropped) = result?;
        if dropped > 0 {
            eprintln!(
                "warning: {}: {dropped} samples of a partial period dropped",
                path.display()
            );
        }
        match lambda {
            None => lambda = Some(l),
            Some(prev) if prev != l => {
                return Err(CliError::Rejected(format!(
                    "{} was synthesized at λ = {l} m, other records at {prev} m",
                    path.display()
                )))
            }
            _ => {}
        }
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        rows.push(vec![
            id,
            fmt_f64(s.mean),
            fmt_f64(s.stat_error),
            s.n_periods.to_string(),
            fmt_f64(s.fit_quality),
        ]);
        summaries.push(s);
    }
    let lambda = lambda.expect("at least one record");
    let combined = combine_records(&summaries, cfg.flag("analysis", "inflate_errors"))?;
    let summary_path = ctx.out.join(SUMMARY_FILE);
    write_csv(
        &summary_path,
        &ctx.meta(vec![
            ("lambda_m", fmt_f64(lambda)),
            ("units", "f11 dimensionless".into()),
        ]),
        &SUMMARY_HEADER,
        &rows,
    )?;
    let combined_path = ctx.out.join(COMBINED_FILE);
    write_csv(
        &combined_path,
        &ctx.meta(vec![("units", "f11 dimensionless".into())]),
        &COMBINED_HEADER,
        &[vec![
            fmt_f64(combined.mean),
            fmt_f64(combined.stat_error),
            combined
                .reduced_chi2
                .map(fmt_f64)
                .unwrap_or_else(|| "nan".into()),
            combined.n_records.to_string(),
            combined.inflated.to_string(),
            fmt_f64(lambda),
        ]],
    )?;
    let outputs = vec![summary_path, combined_path];
    ctx.record_stage("analyze", inputs, &outputs, start)?;
    Ok(outputs)
}

pub fn read_combined(path: &Path) -> Result<ReferenceEstimate, CliError> {
    let t = Table::read(path)?;
    t.expect_header(&COMBINED_HEADER)?;
    let (line, row) = t
        .rows
        .first()
        .ok_or_else(|| CliError::Io(format!("{}: no combined result", path.display())))?;
    Ok(ReferenceEstimate {
        mean: t.number(*line, row, 0)?,
        stat_error: t.number(*line, row, 1)?,
        lambda_m: t.number(*line, row, 5)?,
    })
}

const EXCLUSION_HEADER: [&str; 13] = [
    "lambda_m",
    "boson_mass_eV",
    "f11_limit",
    "gVe_gAn",
    "gAe_gVn",
    "gnA_gpV",
    "gnV_gpA",
    "cl",
    "convention",
    "constrained",
    "mean_f11",
    "stat_err",
    "syst_err",
];
const PROJECTION_HEADER: [&str; 5] = [
    "proj_f11_limit",
    "proj_gVe_gAn",
    "proj_gAe_gVn",
    "proj_gnA_gpV",
    "proj_gnV_gpA",
];

fn exclusion_row(
    p: &ExclusionPoint,
    curve: &ExclusionCurve,
    projected: Option<&ExclusionPoint>,
) -> Vec<String> {
    let mut row = vec![
        fmt_f64(p.lambda_m),
        fmt_f64(p.boson_mass_ev),
        fmt_f64(p.f11_limit),
        fmt_f64(p.couplings.gve_gan),
        fmt_f64(p.couplings.gae_gvn),
        fmt_f64(p.couplings.gna_gpv),
        fmt_f64(p.couplings.gnv_gpa),
        fmt_f64(curve.cl),
        curve.convention.as_str().into(),
        p.constrained.to_string(),
        fmt_f64(p.mean_f11),
        fmt_f64(p.stat_error),
        fmt_f64(p.syst_error),
    ];
    if let Some(q) = projected {
        row.extend([
            fmt_f64(q.f11_limit),
            fmt_f64(q.couplings.gve_gan),
            fmt_f64(q.couplings.gae_gvn),
            fmt_f64(q.couplings.gna_gpv),
            fmt_f64(q.couplings.gnv_gpa),
        ]);
    }
    row
}

fn unit_label(kind: ParameterKind) -> (&'static str, f64) {
    match kind {
        ParameterKind::Position(_) => ("mm", 1e3),
        ParameterKind::PolarizedCount => ("count", 1.0),
        ParameterKind::PhaseDelay => ("deg", 180.0 / std::f64::consts::PI),
        ParameterKind::CalibrationAlpha => ("V/nT", 1e-9),
    }
}

fn limits_parameters(cfg: &PipelineConfig) -> Result<Vec<CalibratedParameter>, CliError> {
    Ok(reference_parameters(&cfg.source()?, &cfg.amplifier()))
}

/// Systematic budget at the analysis range, the limit there, and the full
/// exclusion curve.
pub fn cmd_limits(ctx: &Context, combined: &Path) -> Result<Vec<PathBuf>, CliError> {
    let start = Instant::now();
    let cfg = &ctx.cfg;
    let estimate = read_combined(combined)?;
    let source = cfg.source()?;
    let amp = cfg.amplifier();
    let c = cfg.constants();
    let mut forward = LockinForward::new(&source, &amp, &c, &cfg.integration());
    forward.quadrature_f11 = cfg.num("limits", "quadrature_leakage_f11_ratio");
    let params = limits_parameters(cfg)?;
    let settings = SweepSettings {
        cl: cfg.num("limits", "cl_frac"),
        convention: cfg.convention(),
        symmetrization: cfg.symmetrization(),
        execution: cfg.execution(),
    };

    let budget = propagate_systematics(
        &params,
        estimate.mean,
        estimate.lambda_m,
        &forward,
        settings.symmetrization,
    )?;
    let mut budget_rows = Vec::new();
    for (p, e) in params.iter().zip(&budget.entries) {
        if let Some(err) = &e.error {
            eprintln!("warning: systematic `{}` left out: {err}", e.name);
        }
        let (unit, scale) = unit_label(p.kind);
        budget_rows.push(vec![
            p.name.clone(),
            fmt_f64(p.value * scale),
            unit.into(),
            fmt_f64(p.sigma_plus * scale),
            fmt_f64(p.sigma_minus * scale),
            fmt_f64(e.delta_plus),
            fmt_f64(e.delta_minus),
            e.error
                .as_deref()
                .map(|_| "excluded")
                .unwrap_or("ok")
                .into(),
        ]);
    }
    budget_rows.push(vec![
        "final_f11".into(),
        fmt_f64(estimate.mean),
        "f11".into(),
        fmt_f64(estimate.stat_error),
        fmt_f64(estimate.stat_error),
        fmt_f64(budget.combined_syst),
        fmt_f64(budget.combined_syst),
        "stat in sigma columns, syst in delta columns".into(),
    ]);
    let budget_path = ctx.out.join(BUDGET_FILE);
    write_csv(
        &budget_path,
        &ctx.meta(vec![
            ("lambda_m", fmt_f64(estimate.lambda_m)),
            (
                "symmetrization",
                format!("{:?}", settings.symmetrization).to_lowercase(),
            ),
        ]),
        &[
            "parameter",
            "value",
            "unit",
            "sigma_plus",
            "sigma_minus",
            "delta_f11_plus",
            "delta_f11_minus",
            "status",
        ],
        &budget_rows,
    )?;

    let project = cfg.flag("limits", "project");
    let (gs, gx) = (
        cfg.num("limits", "sensitivity_gain_ratio"),
        cfg.num("limits", "source_gain_ratio"),
    );
    let mut header: Vec<&str> = EXCLUSION_HEADER.to_vec();
    if project {
        header.extend(PROJECTION_HEADER);
    }
    let write_curve = |path: &Path, curve: &ExclusionCurve| -> Result<(), CliError> {
        let projected = if project {
            Some(project_upgrade(curve, gs, gx)?)
        } else {
            None
        };
        let rows: Vec<Vec<String>> = curve
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| exclusion_row(p, curve, projected.as_ref().map(|q| &q.points[i])))
            .collect();
        let mut meta = vec![
            ("reference_lambda_m", fmt_f64(estimate.lambda_m)),
            (
                "coupling_columns",
                "each assumes the other products vanish".into(),
            ),
        ];
        if project {
            meta.push((
                "projection_gains",
                format!("sensitivity {}, source {}", fmt_f64(gs), fmt_f64(gx)),
            ));
        }
        write_csv(path, &ctx.meta(meta), &header, &rows)
    };

    let reference_field = forward.unit_field(estimate.lambda_m)?.ok_or_else(|| {
        CliError::Numerical(format!("field underflows at λ = {} m", estimate.lambda_m))
    })?;
    let point = exclusion_point(
        estimate.lambda_m,
        &estimate,
        reference_field,
        &params,
        &forward,
        &settings,
        &c,
    )?;
    debug_assert_eq!(
        point.f11_limit,
        confidence_limit(
            estimate.mean,
            estimate.stat_error,
            budget.combined_syst,
            settings.cl,
            settings.convention
        )?
    );
    let reference_curve = ExclusionCurve {
        points: vec![point],
        cl: settings.cl,
        convention: settings.convention,
        projection_gain: 1.0,
    };
    let reference_path = ctx.out.join(REFERENCE_LIMIT_FILE);
    write_curve(&reference_path, &reference_curve)?;

    let curve = sweep_lambda(
        &cfg.lambda_grid()?,
        &estimate,
        &params,
        &forward,
        &settings,
        &c,
    )?;
    let unconstrained = curve.points.iter().filter(|p| !p.constrained).count();
    if unconstrained > 0 {
        eprintln!("warning: {unconstrained} λ points are unconstrained (field underflow or non-convergence)");
    }
    let exclusion_path = ctx.out.join(EXCLUSION_FILE);
    write_curve(&exclusion_path, &curve)?;

    let outputs = vec![budget_path, reference_path, exclusion_path];
    ctx.record_stage("limits", &[combined.to_path_buf()], &outputs, start)?;
    Ok(outputs)
}

/// field → simulate → analyze → limits.
pub fn cmd_full(ctx: &Context, mirrored: bool) -> Result<Vec<PathBuf>, CliError> {
    let mut outputs = cmd_field(ctx, mirrored)?;
    let written = cmd_simulate(ctx)?;
    let records: Vec<PathBuf> = written
        .iter()
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .cloned()
        .collect();
    outputs.extend(written);
    let analyzed = cmd_analyze(ctx, &records)?;
    let combined = analyzed[1].clone();
    outputs.extend(analyzed);
    outputs.extend(cmd_limits(ctx, &combined)?);
    Ok(outputs)
}
