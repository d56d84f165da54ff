//! Experiment execution: builds laboratory objects from a resolved config,
//! runs the named experiment, and assembles every artifact as bytes. Nothing
//! here touches the filesystem except reading a file datum; the caller owns
//! all writes, so outputs come from one writer.
//!
//! Errors split along the exit-code contract: anything that rejects the
//! problem statement (bad parameters, resolution guards, scheme mismatches)
//! stays a validation error, while failures during the numerics (CFL
//! violations, non-finite fields, step budgets, I/O) become aborts naming
//! the module and operation; the underlying error carries the time node
//! where one exists.

use std::fmt::Write as _;
use std::path::Path;

use vanishlab_core::error::LabError;
use vanishlab_core::evolve::{
    adjoint_mode_pair, solve_backward_diffusive, solve_forward, solve_forward_regularized,
    solve_transport_analytic, AnalyticDatum, Datum, Scheme, SolvePlan, Trajectory,
};
use vanishlab_core::stochastic::{estimate_backward, estimate_forward};
use vanishlab_core::torus::bump::SourceSpec;
use vanishlab_core::torus::{io as container, ScalarGridField, TorusGrid};
use vanishlab_core::util::Vec2;
use vanishlab_core::vanishing::{
    backward_discontinuity_probe, dissipation_meter, duality_check, exchange_nonuniqueness_demo,
    standard_test_panel, sweep_delta, sweep_nu, weak_residual, DualityMode, ResidualReport,
    SourcePanel, SweepRecord, SweepSetup,
};
use vanishlab_core::velocity::{ShearProfile, StreamFunction, VelocityField};

use crate::config::{
    ConfigError, DatumCfg, FieldCfg, FieldKindCfg, McDirection, Payload, ProfileCfg, RunConfig,
    SourceCfg,
};
use crate::manifest::FieldTruncation;
use crate::svg::{Chart, Series};

#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    Invalid(LabError),
    Abort {
        module: &'static str,
        operation: &'static str,
        source: LabError,
    },
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(e) => write!(f, "{e}"),
            RunError::Invalid(e) => write!(f, "invalid config: {e}"),
            RunError::Abort {
                module,
                operation,
                source,
            } => write!(f, "numerical abort in {module}::{operation}: {source}"),
        }
    }
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Invalid(_) => 2,
            RunError::Abort { .. } => 3,
        }
    }
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e)
    }
}

fn abort_shaped(e: &LabError) -> bool {
    matches!(
        e,
        LabError::CflViolation { .. }
            | LabError::NonFinite { .. }
            | LabError::StepBudgetExceeded { .. }
            | LabError::Io(_)
    )
}

/// Tags a core call with its module and operation for the abort report.
fn ctx<T>(
    module: &'static str,
    operation: &'static str,
    r: Result<T, LabError>,
) -> Result<T, RunError> {
    r.map_err(|source| {
        if abort_shaped(&source) {
            RunError::Abort {
                module,
                operation,
                source,
            }
        } else {
            RunError::Invalid(source)
        }
    })
}

/// Everything a run produces, before any of it is written.
pub struct RunOutput {
    /// File name to content; names are flat, the caller prefixes the output
    /// directory.
    pub files: Vec<(String, Vec<u8>)>,
    pub truncation: Option<FieldTruncation>,
    /// Human-readable result lines for stdout.
    pub summary: Vec<String>,
}

impl RunOutput {
    fn new(truncation: Option<FieldTruncation>) -> RunOutput {
        RunOutput {
            files: Vec::new(),
            truncation,
            summary: Vec::new(),
        }
    }

    fn file(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    fn note(&mut self, line: String) {
        self.summary.push(line);
    }
}

pub fn execute(cfg: &RunConfig, base: &Path, allow_flag: bool) -> Result<RunOutput, RunError> {
    let grid = ctx("torus", "grid", TorusGrid::new(cfg.grid_n))?;
    let allow = cfg.allow_under_resolved || allow_flag;
    match &cfg.payload {
        Payload::Solve {
            field,
            datum,
            solve,
        } => run_solve(grid, field, datum, solve, base),
        Payload::Sweep {
            delta,
            verdict,
            field,
            datum,
            sweep,
            ..
        } => run_sweep(grid, field, datum, sweep, *delta, *verdict, allow, base),
        Payload::Duality {
            field,
            datum,
            source,
            duality,
        } => run_duality(grid, field, datum, source, duality, base),
        Payload::Mc {
            field,
            datum,
            source,
            mc,
        } => run_mc(grid, cfg.seed, field, datum.as_ref(), source.as_ref(), mc, base),
        Payload::Weak { field, datum, weak } => run_weak(grid, field, datum, weak, base),
        Payload::Demo(demo) => run_demo(grid, demo),
        Payload::Probe {
            field,
            source,
            probe,
        } => run_probe(grid, field, source, probe, allow),
    }
}

fn build_field(cfg: &FieldCfg) -> Result<(VelocityField, Option<FieldTruncation>), RunError> {
    let mut truncation = None;
    let field = match &cfg.kind {
        FieldKindCfg::Zero => VelocityField::zero(),
        FieldKindCfg::Shear { axis, profile } => {
            let profile = match *profile {
                ProfileCfg::Sinusoid {
                    amplitude,
                    freq,
                    phase,
                } => ShearProfile::Sinusoid {
                    amplitude,
                    freq,
                    phase,
                },
                ProfileCfg::DyadicStrips { strip_log2, speed } => {
                    ShearProfile::DyadicStrips { strip_log2, speed }
                }
            };
            VelocityField::steady_shear(*axis, profile)
        }
        FieldKindCfg::Stream { amplitude, fx, fy } => {
            VelocityField::steady_stream(StreamFunction::CellArray {
                amplitude: *amplitude,
                fx: *fx,
                fy: *fy,
            })
        }
        FieldKindCfg::Exchange {
            n_min,
            n_max,
            orientation,
        } => {
            truncation = Some(FieldTruncation {
                n_max: *n_max,
                activation_time: (2.0f64).powi(-(*n_max as i32) - 1),
            });
            ctx(
                "velocity",
                "dyadic_exchange",
                VelocityField::dyadic_exchange(*n_min, *n_max, *orientation),
            )?
        }
    };
    if cfg.mollify > 0.0 {
        let field = ctx("velocity", "mollified", field.mollified(cfg.mollify))?;
        Ok((field, truncation))
    } else {
        Ok((field, truncation))
    }
}

fn build_datum(cfg: &DatumCfg, grid: TorusGrid, base: &Path) -> Result<Datum, RunError> {
    let analytic = match *cfg {
        DatumCfg::Constant { value } => AnalyticDatum::Constant { value },
        DatumCfg::CosineX { freq, amplitude } => AnalyticDatum::CosineX { freq, amplitude },
        DatumCfg::CosineY { freq, amplitude } => AnalyticDatum::CosineY { freq, amplitude },
        DatumCfg::Checkerboard { level } => AnalyticDatum::Checkerboard { level },
        DatumCfg::VerticalStripes { level } => AnalyticDatum::VerticalStripes { level },
        DatumCfg::File { ref path } => {
            let full = base.join(path);
            let fields = container::read_fields_path(&full).map_err(|e| {
                RunError::Config(ConfigError {
                    path: "datum.path".to_string(),
                    reason: format!("cannot load '{}': {e}", full.display()),
                })
            })?;
            let first = fields.into_iter().next().ok_or_else(|| {
                RunError::Config(ConfigError {
                    path: "datum.path".to_string(),
                    reason: "container holds no fields".to_string(),
                })
            })?;
            if first.grid() != grid {
                return Err(RunError::Config(ConfigError {
                    path: "datum.path".to_string(),
                    reason: format!(
                        "container grid is {} cells per side, run grid is {}",
                        first.grid().n(),
                        grid.n()
                    ),
                }));
            }
            return Ok(Datum::Grid(first));
        }
    };
    Ok(Datum::Analytic(analytic))
}

fn source_spec(cfg: &SourceCfg, horizon: f64) -> Result<SourceSpec, RunError> {
    ctx(
        "torus",
        "source",
        SourceSpec::new(
            cfg.center_t,
            (cfg.center_x, cfg.center_y),
            cfg.radius_t,
            cfg.radius_x,
            cfg.amplitude,
            horizon,
        ),
    )
}

fn uniform_times(horizon: f64, samples: usize) -> Vec<f64> {
    (0..samples)
        .map(|k| horizon * k as f64 / (samples - 1) as f64)
        .collect()
}

fn csv(header: &str, rows: &[String]) -> Vec<u8> {
    let mut text = String::with_capacity(header.len() + 1 + rows.len() * 32);
    text.push_str(header);
    text.push('\n');
    for row in rows {
        text.push_str(row);
        text.push('\n');
    }
    text.into_bytes()
}

fn container_bytes(fields: &[&ScalarGridField]) -> Result<Vec<u8>, RunError> {
    let mut buf = Vec::new();
    ctx("torus", "write_fields", container::write_fields(&mut buf, fields))?;
    Ok(buf)
}

fn run_solve(
    grid: TorusGrid,
    field_cfg: &FieldCfg,
    datum_cfg: &DatumCfg,
    solve: &crate::config::SolveCfg,
    base: &Path,
) -> Result<RunOutput, RunError> {
    let (field, truncation) = build_field(field_cfg)?;
    let datum = build_datum(datum_cfg, grid, base)?;

    let traj = if solve.scheme == Scheme::PureTransport {
        if let Datum::Analytic(a) = &datum {
            ctx(
                "evolve",
                "solve_transport_analytic",
                solve_transport_analytic(&field, a, grid, &solve.outputs),
            )?
        } else {
            return Err(RunError::Invalid(LabError::InvalidParameter {
                name: "scheme",
                reason: "pure transport needs a closed-form datum; grid data \
                         would reintroduce interpolation error"
                    .into(),
            }));
        }
    } else {
        let config = ctx(
            "evolve",
            "plan",
            SolvePlan::new(&field, grid, solve.nu, solve.horizon)
                .scheme(solve.scheme)
                .interpolation(solve.interpolation)
                .cfl(solve.cfl)
                .outputs(&solve.outputs)
                .build(),
        )?;
        let rho0 = ctx("evolve", "realize_datum", datum.realize(grid))?;
        ctx(
            "evolve",
            "solve_forward",
            solve_forward(&field, &rho0, &config),
        )?
    };

    let mut out = RunOutput::new(truncation);
    let refs: Vec<&ScalarGridField> = traj.snapshots.iter().collect();
    out.file("fields.bin", container_bytes(&refs)?);
    out.file("ledger.csv", ledger_csv(&traj));
    out.file("ledger.svg", ledger_chart(&traj).render().into_bytes());

    let ledger = &traj.ledger;
    out.note(format!(
        "solved to t = {} on {} cells: final l2 = {}, mean drift = {}, dissipation = {}",
        traj.times.last().expect("nonempty"),
        grid.n(),
        traj.last().norm_l2(),
        traj.mean_drift(),
        ledger.dissipation(),
    ));
    Ok(out)
}

fn ledger_csv(traj: &Trajectory) -> Vec<u8> {
    let ledger = &traj.ledger;
    let rows: Vec<String> = (0..ledger.times.len())
        .map(|k| {
            format!(
                "{},{},{},{},{}",
                ledger.times[k],
                ledger.l2_sq[k],
                ledger.h1_sq[k],
                ledger.grad_energy_cum[k],
                ledger.source_work_cum[k]
            )
        })
        .collect();
    csv("time,l2_sq,h1_sq,grad_energy_cum,source_work_cum", &rows)
}

fn ledger_chart(traj: &Trajectory) -> Chart {
    let ledger = &traj.ledger;
    let energy: Vec<(f64, f64)> = ledger
        .times
        .iter()
        .zip(&ledger.l2_sq)
        .map(|(&t, &e)| (t, e))
        .collect();
    let balance: Vec<(f64, f64)> = (0..ledger.times.len())
        .map(|k| (ledger.times[k], ledger.l2_sq[k] + ledger.grad_energy_cum[k]))
        .collect();
    Chart {
        title: "energy ledger".to_string(),
        x_label: "time".to_string(),
        y_label: "squared l2 norm".to_string(),
        log_x: false,
        log_y: false,
        series: vec![
            Series::plain("l2 energy", energy),
            Series::plain("l2 + dissipated", balance),
        ],
    }
}

#[allow(clippy::too_many_arguments)]
fn run_sweep(
    grid: TorusGrid,
    field_cfg: &FieldCfg,
    datum_cfg: &DatumCfg,
    sweep: &crate::config::SweepCfg,
    delta: bool,
    verdict: bool,
    allow: bool,
    base: &Path,
) -> Result<RunOutput, RunError> {
    let (field, truncation) = build_field(field_cfg)?;
    let datum = build_datum(datum_cfg, grid, base)?;
    let panel = ctx(
        "vanishing",
        "source_panel",
        SourcePanel::standard(sweep.horizon),
    )?;
    let setup = SweepSetup {
        grid,
        horizon: sweep.horizon,
        pairing_intervals: sweep.pairing_intervals,
        early_times: sweep.early_times.clone(),
        interpolation: sweep.interpolation,
        cfl: sweep.cfl,
        allow_under_resolved: allow,
        trace_dt: (sweep.trace_dt > 0.0).then_some(sweep.trace_dt),
    };
    let record = if delta {
        ctx(
            "vanishing",
            "sweep_delta",
            sweep_delta(&field, &datum, &sweep.values, &panel, &setup),
        )?
    } else {
        ctx(
            "vanishing",
            "sweep_nu",
            sweep_nu(&field, &datum, &sweep.values, &panel, &setup),
        )?
    };

    let mut out = RunOutput::new(truncation);
    out.file("sweep.csv", record.csv().into_bytes());
    let parameter_label = if delta {
        "mollification scale"
    } else {
        "diffusivity"
    };
    out.file(
        "pairings.svg",
        pairings_chart(&record, parameter_label).render().into_bytes(),
    );
    out.file(
        "dissipation.svg",
        dissipation_chart(&record, parameter_label)
            .render()
            .into_bytes(),
    );

    let gaps = record.gaps();
    out.note(format!(
        "{} ladder over {} entries (guard {}): gaps = [{}], contracting = {}",
        parameter_label,
        record.entries.len(),
        record.guard,
        gaps.iter()
            .map(|g| g.to_string())
            .collect::<Vec<_>>()
            .join(", "),
        record.selecting,
    ));
    if let Some(terminal) = record.terminal() {
        out.note(format!(
            "terminal entry: parameter = {}, dissipation = {}, final l2 = {}",
            terminal.parameter, terminal.dissipation, terminal.final_l2,
        ));
    }

    if verdict {
        let meter = dissipation_meter(&record);
        let rows: Vec<String> = record
            .entries
            .iter()
            .map(|e| {
                format!(
                    "{},{},{}",
                    e.parameter,
                    e.dissipation,
                    if e.under_resolved { "under-resolved" } else { "ok" }
                )
            })
            .collect();
        out.file("dissipation.csv", csv("parameter,dissipation,flag", &rows));
        out.note(format!("dissipation meter: {}", meter.verdict()));
    }
    Ok(out)
}

fn pairings_chart(record: &SweepRecord, parameter_label: &str) -> Chart {
    let flagged: Vec<bool> = record.entries.iter().map(|e| e.under_resolved).collect();
    let sources = record
        .entries
        .first()
        .map(|e| e.pairings.len())
        .unwrap_or(0);
    let series = (0..sources)
        .map(|j| Series {
            label: format!("source {j}"),
            points: record
                .entries
                .iter()
                .map(|e| (e.parameter, e.pairings[j]))
                .collect(),
            flagged: flagged.clone(),
        })
        .collect();
    Chart {
        title: "source pairings along the ladder".to_string(),
        x_label: format!("{parameter_label} (log)"),
        y_label: "pairing".to_string(),
        log_x: true,
        log_y: false,
        series,
    }
}

fn dissipation_chart(record: &SweepRecord, parameter_label: &str) -> Chart {
    let series = Series {
        label: "dissipation".to_string(),
        points: record
            .entries
            .iter()
            .map(|e| (e.parameter, e.dissipation))
            .collect(),
        flagged: record.entries.iter().map(|e| e.under_resolved).collect(),
    };
    Chart {
        title: "dissipation series".to_string(),
        x_label: format!("{parameter_label} (log)"),
        y_label: "dissipation".to_string(),
        log_x: true,
        log_y: false,
        series: vec![series],
    }
}

fn run_duality(
    grid: TorusGrid,
    field_cfg: &FieldCfg,
    datum_cfg: &DatumCfg,
    source_cfg: &SourceCfg,
    duality: &crate::config::DualityCfg,
    base: &Path,
) -> Result<RunOutput, RunError> {
    let (field, truncation) = build_field(field_cfg)?;
    let datum = build_datum(datum_cfg, grid, base)?;
    let chi = source_spec(source_cfg, duality.horizon)?;
    let times = uniform_times(duality.horizon, duality.time_samples);
    let rho0 = ctx("evolve", "realize_datum", datum.realize(grid))?;

    let (mode_word, report) = match duality.mode {
        DualityMode::DiscreteAdjoint => {
            let config = ctx(
                "evolve",
                "plan",
                SolvePlan::new(&field, grid, duality.nu, duality.horizon)
                    .scheme(Scheme::SpectralGalerkin)
                    .cfl(duality.cfl)
                    .outputs(&times)
                    .with_source(&chi)
                    .build(),
            )?;
            let (fwd, bwd) = ctx(
                "evolve",
                "adjoint_mode_pair",
                adjoint_mode_pair(&field, &rho0, &chi, &config),
            )?;
            (
                "adjoint",
                ctx(
                    "vanishing",
                    "duality_check",
                    duality_check(&fwd, &bwd, &chi, DualityMode::DiscreteAdjoint),
                )?,
            )
        }
        DualityMode::Independent => {
            let config = ctx(
                "evolve",
                "plan",
                SolvePlan::new(&field, grid, duality.nu, duality.horizon)
                    .scheme(Scheme::Splitting)
                    .interpolation(duality.interpolation)
                    .cfl(duality.cfl)
                    .outputs(&times)
                    .with_source(&chi)
                    .build(),
            )?;
            let fwd = ctx(
                "evolve",
                "solve_forward",
                solve_forward(&field, &rho0, &config),
            )?;
            let bwd = ctx(
                "evolve",
                "solve_backward_diffusive",
                solve_backward_diffusive(&field, &chi, &config),
            )?;
            (
                "independent",
                ctx(
                    "vanishing",
                    "duality_check",
                    duality_check(&fwd, &bwd, &chi, DualityMode::Independent),
                )?,
            )
        }
    };

    let mut out = RunOutput::new(truncation);
    out.file(
        "duality.csv",
        csv(
            "mode,lhs,rhs,abs_gap,rel_gap",
            &[format!(
                "{mode_word},{},{},{},{}",
                report.lhs, report.rhs, report.abs_gap, report.rel_gap
            )],
        ),
    );
    out.note(format!(
        "duality ({mode_word}): lhs = {}, rhs = {}, relative gap = {}",
        report.lhs, report.rhs, report.rel_gap,
    ));
    Ok(out)
}

/// Spreads `count` probes over a centered sublattice, row-major, so probe
/// sets are deterministic and, on grids divisible by `2 side`, land exactly
/// on grid nodes.
fn probe_points(count: usize) -> Vec<Vec2> {
    let side = (count as f64).sqrt().ceil() as usize;
    let mut points = Vec::with_capacity(count);
    'outer: for j in 0..side {
        for i in 0..side {
            if points.len() == count {
                break 'outer;
            }
            points.push(Vec2::new(
                (i as f64 + 0.5) / side as f64,
                (j as f64 + 0.5) / side as f64,
            ));
        }
    }
    points
}

/// Decorrelates probe walks while keeping one top-level seed.
fn probe_seed(master: u64, probe: usize) -> u64 {
    master.wrapping_add((probe as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

#[allow(clippy::too_many_arguments)]
fn run_mc(
    grid: TorusGrid,
    seed: u64,
    field_cfg: &FieldCfg,
    datum_cfg: Option<&DatumCfg>,
    source_cfg: Option<&SourceCfg>,
    mc: &crate::config::McCfg,
    base: &Path,
) -> Result<RunOutput, RunError> {
    let (field, truncation) = build_field(field_cfg)?;
    let points = probe_points(mc.probes);

    let (reference, estimates) = match mc.direction {
        McDirection::Forward => {
            let datum = build_datum(
                datum_cfg.expect("forward direction parses a datum"),
                grid,
                base,
            )?;
            let config = ctx(
                "evolve",
                "plan",
                SolvePlan::new(&field, grid, mc.nu, mc.horizon)
                    .scheme(Scheme::Splitting)
                    .interpolation(mc.interpolation)
                    .cfl(mc.cfl)
                    .outputs(&[mc.t])
                    .build(),
            )?;
            let rho0 = ctx("evolve", "realize_datum", datum.realize(grid))?;
            let traj = ctx(
                "evolve",
                "solve_forward",
                solve_forward(&field, &rho0, &config),
            )?;
            let reference = traj
                .snapshot_at(mc.t)
                .expect("requested output time")
                .clone();
            let mut estimates = Vec::with_capacity(points.len());
            for (p, &x) in points.iter().enumerate() {
                estimates.push(ctx(
                    "stochastic",
                    "estimate_forward",
                    estimate_forward(
                        &field,
                        &datum,
                        mc.nu,
                        mc.t,
                        x,
                        mc.samples,
                        probe_seed(seed, p),
                        mc.dt,
                    ),
                )?);
            }
            (reference, estimates)
        }
        McDirection::Backward => {
            let chi = source_spec(
                source_cfg.expect("backward direction parses a source"),
                mc.horizon,
            )?;
            let config = ctx(
                "evolve",
                "plan",
                SolvePlan::new(&field, grid, mc.nu, mc.horizon)
                    .scheme(Scheme::Splitting)
                    .interpolation(mc.interpolation)
                    .cfl(mc.cfl)
                    .outputs(&[mc.t])
                    .with_source(&chi)
                    .build(),
            )?;
            let traj = ctx(
                "evolve",
                "solve_backward_diffusive",
                solve_backward_diffusive(&field, &chi, &config),
            )?;
            let reference = traj
                .snapshot_at(mc.t)
                .expect("requested output time")
                .clone();
            let mut estimates = Vec::with_capacity(points.len());
            for (p, &x) in points.iter().enumerate() {
                estimates.push(ctx(
                    "stochastic",
                    "estimate_backward",
                    estimate_backward(
                        &field,
                        &chi,
                        mc.nu,
                        mc.t,
                        mc.horizon,
                        x,
                        mc.samples,
                        probe_seed(seed, p),
                        mc.dt,
                    ),
                )?);
            }
            (reference, estimates)
        }
    };

    let ref_datum = Datum::Grid(reference);
    let mut rows = Vec::with_capacity(points.len());
    let mut worst_z = 0.0f64;
    for (p, (&x, est)) in points.iter().zip(&estimates).enumerate() {
        let grid_value = ref_datum.eval(x);
        let diff = est.mean - grid_value;
        let z = if est.stderr > 0.0 {
            diff / est.stderr
        } else if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        worst_z = worst_z.max(z.abs());
        rows.push(format!(
            "{p},{},{},{grid_value},{},{},{z}",
            x.x, x.y, est.mean, est.stderr
        ));
    }

    let mut out = RunOutput::new(truncation);
    out.file("mc.csv", csv("probe,x1,x2,grid,estimate,stderr,z", &rows));
    let direction_word = match mc.direction {
        McDirection::Forward => "forward",
        McDirection::Backward => "backward",
    };
    out.note(format!(
        "{direction_word} estimates at {} probes, {} paths each: worst |z| = {worst_z}",
        points.len(),
        mc.samples,
    ));
    Ok(out)
}

fn run_weak(
    grid: TorusGrid,
    field_cfg: &FieldCfg,
    datum_cfg: &DatumCfg,
    weak: &crate::config::WeakCfg,
    base: &Path,
) -> Result<RunOutput, RunError> {
    let (field, truncation) = build_field(field_cfg)?;
    let datum = build_datum(datum_cfg, grid, base)?;
    let rho0 = ctx("evolve", "realize_datum", datum.realize(grid))?;
    let times = uniform_times(weak.horizon, weak.time_samples);
    let traj = ctx(
        "evolve",
        "solve_forward_regularized",
        solve_forward_regularized(
            &field,
            &datum,
            grid,
            &times,
            (weak.trace_dt > 0.0).then_some(weak.trace_dt),
        ),
    )?;
    let tests = ctx(
        "vanishing",
        "standard_test_panel",
        standard_test_panel(weak.horizon),
    )?;
    let report = ctx(
        "vanishing",
        "weak_residual",
        weak_residual(&traj, &rho0, &tests, &weak.strides),
    )?;

    let mut out = RunOutput::new(truncation);
    out.file("residuals.csv", residual_csv(&report, None));
    out.file(
        "residuals.svg",
        residual_chart(&report, None).render().into_bytes(),
    );
    out.note(format!(
        "weak residual at the finest level ({} nodes): max |r| = {}",
        report.node_counts.last().expect("validated levels"),
        report.max_finest_abs(),
    ));
    Ok(out)
}

fn residual_csv(report: &ResidualReport, control: Option<&ResidualReport>) -> Vec<u8> {
    let mut rows = Vec::new();
    for (level, residuals) in report.residuals.iter().enumerate() {
        for (test, r) in residuals.iter().enumerate() {
            let mut row = format!(
                "{level},{},{},{test},{r}",
                report.strides[level], report.node_counts[level]
            );
            if let Some(c) = control {
                let _ = write!(row, ",{}", c.residuals[level][test]);
            }
            rows.push(row);
        }
    }
    let header = if control.is_some() {
        "level,stride,nodes,test,residual,control"
    } else {
        "level,stride,nodes,test,residual"
    };
    csv(header, &rows)
}

fn residual_chart(report: &ResidualReport, control: Option<&ResidualReport>) -> Chart {
    let tests = report.scales.len();
    let mut series = Vec::new();
    for j in 0..tests {
        series.push(Series::plain(
            format!("test {j}"),
            report
                .node_counts
                .iter()
                .zip(&report.residuals)
                .map(|(&n, level)| (n as f64, level[j].abs()))
                .collect(),
        ));
    }
    if let Some(c) = control {
        for j in 0..tests {
            series.push(Series::plain(
                format!("control {j}"),
                c.node_counts
                    .iter()
                    .zip(&c.residuals)
                    .map(|(&n, level)| (n as f64, level[j].abs()))
                    .collect(),
            ));
        }
    }
    Chart {
        title: "weak residual refinement".to_string(),
        x_label: "quadrature nodes (log)".to_string(),
        y_label: "|residual| (log, floor 1e-18)".to_string(),
        log_x: true,
        log_y: true,
        series,
    }
}

fn run_demo(grid: TorusGrid, demo: &crate::config::DemoCfg) -> Result<RunOutput, RunError> {
    let report = ctx(
        "vanishing",
        "exchange_nonuniqueness_demo",
        exchange_nonuniqueness_demo(demo.n_max, grid, demo.nodes_per_slab, &demo.strides),
    )?;

    let mut out = RunOutput::new(Some(FieldTruncation {
        n_max: demo.n_max,
        activation_time: (2.0f64).powi(-(demo.n_max as i32) - 1),
    }));
    out.file(
        "residuals.csv",
        residual_csv(&report.residuals, Some(&report.control_residuals)),
    );
    out.file(
        "residuals.svg",
        residual_chart(&report.residuals, Some(&report.control_residuals))
            .render()
            .into_bytes(),
    );

    let pattern_rows: Vec<String> = report
        .pattern_pairings
        .iter()
        .enumerate()
        .map(|(k, p)| format!("{},{p}", (2.0f64).powi(-(k as i32) - 1)))
        .collect();
    out.file("patterns.csv", csv("time,probe_pairing", &pattern_rows));

    let state_rows: Vec<String> = report
        .key_states
        .iter()
        .enumerate()
        .map(|(k, (t, f))| format!("{k},{t},{}", f.norm_l2()))
        .collect();
    out.file("states.csv", csv("index,time,l2", &state_rows));
    let fields: Vec<&ScalarGridField> = report.key_states.iter().map(|(_, f)| f).collect();
    out.file("fields.bin", container_bytes(&fields)?);

    out.note(format!(
        "transport residual control ratio = {}, patterns exact = {}, probe pairings decreasing = {}",
        report.control_ratio, report.patterns_exact, report.pairings_decreasing,
    ));
    out.note(format!(
        "distance from the selected limit at t = 1: {}",
        report.separation,
    ));
    Ok(out)
}

fn run_probe(
    grid: TorusGrid,
    field_cfg: &FieldCfg,
    source_cfg: &SourceCfg,
    probe: &crate::config::ProbeCfg,
    allow: bool,
) -> Result<RunOutput, RunError> {
    let (field, truncation) = build_field(field_cfg)?;
    let chi = source_spec(source_cfg, probe.horizon)?;
    let setup = SweepSetup {
        grid,
        horizon: probe.horizon,
        pairing_intervals: 16,
        early_times: Vec::new(),
        interpolation: probe.interpolation,
        cfl: probe.cfl,
        allow_under_resolved: allow,
        trace_dt: None,
    };
    let report = ctx(
        "vanishing",
        "backward_discontinuity_probe",
        backward_discontinuity_probe(&field, &chi, &probe.nus, &probe.times, &setup),
    )?;

    let rows: Vec<String> = report
        .rows
        .iter()
        .map(|r| format!("{},{},{}", r.nu, r.t, r.departure))
        .collect();

    let mut series = Vec::new();
    for &t in &probe.times {
        let points: Vec<(f64, f64)> = report
            .rows
            .iter()
            .filter(|r| r.t == t)
            .map(|r| (r.nu, r.departure))
            .collect();
        series.push(Series::plain(format!("t = {t}"), points));
    }

    let mut out = RunOutput::new(truncation);
    out.file("probe.csv", csv("nu,t,departure", &rows));
    out.file(
        "departure.svg",
        Chart {
            title: "backward departure from the initial trace".to_string(),
            x_label: "diffusivity (log)".to_string(),
            y_label: "departure".to_string(),
            log_x: true,
            log_y: false,
            series,
        }
        .render()
        .into_bytes(),
    );
    let worst = report.rows.iter().map(|r| r.departure).fold(0.0, f64::max);
    out.note(format!(
        "tabulated {} departures; largest = {worst} (exploratory, no verdict)",
        report.rows.len(),
    ));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probe_points_tile_a_sublattice() {
        let points = probe_points(16);
        assert_eq!(points.len(), 16);
        assert_eq!(points[0], Vec2::new(0.125, 0.125));
        assert_eq!(points[15], Vec2::new(0.875, 0.875));
        let trimmed = probe_points(5);
        assert_eq!(trimmed.len(), 5);
        assert_eq!(trimmed[3], Vec2::new(0.5 / 3.0, 1.5 / 3.0));
    }

    #[test]
    fn probe_seeds_differ_between_probes() {
        let seeds: Vec<u64> = (0..8).map(|p| probe_seed(42, p)).collect();
        for (i, a) in seeds.iter().enumerate() {
            for b in &seeds[i + 1..] {
                assert_ne!(a, b);
            }
        }
        assert_eq!(probe_seed(42, 3), probe_seed(42, 3));
    }

    #[test]
    fn abort_classification_matches_the_exit_contract() {
        assert!(abort_shaped(&LabError::NonFinite {
            t: 0.5,
            stage: "advection",
        }));
        assert!(abort_shaped(&LabError::StepBudgetExceeded { t: 1e-9 }));
        assert!(!abort_shaped(&LabError::UnderResolved {
            nu: 1e-9,
            guard: 1e-3,
            n: 64,
        }));
        assert!(!abort_shaped(&LabError::InvalidGridSize { n: 7 }));
    }
}
