//! Experiment drivers built on the solvers: vanishing-parameter sweeps,
//! duality reports, dissipation series, weak-form residuals with quadrature
//! refinement, the dyadic exchange non-uniqueness demonstration, and
//! recovery and continuity probes.
//!
//! A sweep runs one solve per parameter value against a fixed panel of
//! space-time sources and records the pairings
//!
//! ```text
//! p_i(j) = int_0^T <rho_i(t), chi_j(t)> dt,
//! ```
//!
//! approximated by the trapezoid rule over output times shared by every
//! entry, so differences between entries see the same quadrature. The Cauchy
//! gap between consecutive parameters is
//!
//! ```text
//! g_i = max_j |p_i(j) - p_{i+1}(j)|,
//! ```
//!
//! and a monotone gap series is the operational signature that the family
//! converges weakly to a single limit: pairings against a fixed panel then
//! form a Cauchy sequence. Every entry also carries the energy readings the
//! dissipation meter and the recovery check consume, so one sweep feeds all
//! three reports.
//!
//! Resolution guards: diffusive sweeps refuse `nu < (4 h)^2` and mollified
//! sweeps refuse `delta < 2 h` on a grid of spacing `h`, unless explicitly
//! overridden, in which case the offending entries are flagged and excluded
//! from every verdict.

use serde::Serialize;

use crate::error::{LabError, Result};
use crate::evolve::{
    self, discrete_duality_sides, solve_backward_diffusive, solve_forward,
    solve_forward_regularized, AnalyticDatum, Datum, Interpolation, Scheme, SolvePlan,
    Trajectory,
};
use crate::torus::bump::{bump, SourceSpec, TestFunctionSpec, TestSide};
use crate::torus::{pairing, ScalarGridField, TorusGrid};
use crate::util::{pairwise_sum, Vec2};
use crate::velocity::{checkerboard, vertical_stripes, Axis, Motion, Orientation, VelocityField};

/// Which parameter a sweep sends to zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SweepKind {
    /// Diffusivity ladder, solved with the splitting scheme.
    Nu,
    /// Mollification-scale ladder, solved along regularized characteristics.
    Delta,
}

/// Smallest diffusivity the grid can represent without the solution's
/// dissipative scale `sqrt(nu)` falling under a few cells.
pub fn nu_floor(grid: TorusGrid) -> f64 {
    let s = 4.0 * grid.spacing();
    s * s
}

/// Smallest mollification scale the grid resolves: two cells.
pub fn delta_floor(grid: TorusGrid) -> f64 {
    2.0 * grid.spacing()
}

/// Fixed panel of space-time sources that every sweep entry is paired
/// against. Centers, widths and amplitudes are spread out so that no single
/// symmetry of a velocity field can zero out the whole panel.
#[derive(Debug, Clone, Serialize)]
pub struct SourcePanel {
    sources: Vec<SourceSpec>,
}

impl SourcePanel {
    /// Eight sources with staggered centers and scales, supported strictly
    /// inside `(0, horizon)` in time.
    pub fn standard(horizon: f64) -> Result<SourcePanel> {
        let t = horizon;
        let raw = [
            (0.30, (0.25, 0.25), 0.12, 0.18, 1.0),
            (0.30, (0.75, 0.50), 0.12, 0.24, 0.8),
            (0.45, (0.50, 0.75), 0.15, 0.20, 1.2),
            (0.45, (0.10, 0.60), 0.10, 0.15, -0.9),
            (0.60, (0.40, 0.15), 0.18, 0.22, 1.0),
            (0.60, (0.85, 0.85), 0.12, 0.30, 0.7),
            (0.75, (0.30, 0.55), 0.15, 0.25, 1.1),
            (0.75, (0.65, 0.35), 0.10, 0.12, 1.3),
        ];
        let mut sources = Vec::with_capacity(raw.len());
        for (ct, c, rt, rx, a) in raw {
            sources.push(SourceSpec::new(ct * t, c, rt * t, rx, a, t)?);
        }
        Ok(SourcePanel { sources })
    }

    /// Panel from explicit sources; must be nonempty.
    pub fn from_sources(sources: Vec<SourceSpec>) -> Result<SourcePanel> {
        if sources.is_empty() {
            return Err(LabError::InvalidParameter {
                name: "sources",
                reason: "a pairing panel needs at least one source".into(),
            });
        }
        Ok(SourcePanel { sources })
    }

    pub fn sources(&self) -> &[SourceSpec] {
        &self.sources
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }
}

/// Shared configuration of a sweep: the grid, the horizon, the pairing
/// quadrature density, the early instants watched by the recovery check, and
/// the solver knobs.
#[derive(Debug, Clone, Serialize)]
pub struct SweepSetup {
    pub grid: TorusGrid,
    pub horizon: f64,
    /// Number of uniform intervals in the pairing quadrature; the nodes
    /// `k horizon / pairing_intervals` become output times of every solve.
    pub pairing_intervals: usize,
    /// Early instants at which spatial norms are recorded.
    pub early_times: Vec<f64>,
    pub interpolation: Interpolation,
    pub cfl: f64,
    /// Run flagged entries instead of rejecting an under-resolved ladder.
    pub allow_under_resolved: bool,
    /// Trace step override for the mollified solves; `None` uses the
    /// Lipschitz budget of the mollified field.
    pub trace_dt: Option<f64>,
}

impl SweepSetup {
    pub fn standard(grid: TorusGrid) -> SweepSetup {
        SweepSetup {
            grid,
            horizon: 1.0,
            pairing_intervals: 16,
            early_times: vec![1.0 / 32.0, 1.0 / 16.0, 1.0 / 8.0],
            interpolation: Interpolation::MonotoneBilinear,
            cfl: 0.9,
            allow_under_resolved: false,
            trace_dt: None,
        }
    }

    /// Output instants shared by every entry: pairing quadrature nodes, the
    /// early recovery instants, and both endpoints.
    pub fn output_times(&self) -> Result<Vec<f64>> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(LabError::InvalidParameter {
                name: "horizon",
                reason: format!("need a positive finite horizon, got {}", self.horizon),
            });
        }
        if self.pairing_intervals < 4 {
            return Err(LabError::InvalidParameter {
                name: "pairing_intervals",
                reason: format!(
                    "pairing quadrature needs at least 4 intervals, got {}",
                    self.pairing_intervals
                ),
            });
        }
        let mut times = Vec::with_capacity(self.pairing_intervals + self.early_times.len() + 1);
        for k in 0..=self.pairing_intervals {
            times.push(self.horizon * k as f64 / self.pairing_intervals as f64);
        }
        for &t in &self.early_times {
            if !(t > 0.0 && t <= self.horizon) {
                return Err(LabError::InvalidParameter {
                    name: "early_times",
                    reason: format!("early instant {t} outside (0, {}]", self.horizon),
                });
            }
            times.push(t);
        }
        times.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        times.dedup();
        Ok(times)
    }
}

/// One solved parameter value: the panel pairings and the scalar reductions
/// of the trajectory. Snapshots themselves are dropped once reduced.
#[derive(Debug, Clone, Serialize)]
pub struct SweepEntry {
    pub parameter: f64,
    pub under_resolved: bool,
    pub pairings: Vec<f64>,
    /// `nu int int |grad rho|^2`, from the solver's energy ledger.
    pub dissipation: f64,
    /// Worst relative violation of the forward energy inequality.
    pub energy_excess: f64,
    pub mean_drift: f64,
    pub max_abs: f64,
    pub final_l2: f64,
    /// Spatial norms at the setup's early instants, in order.
    pub early_l2: Vec<f64>,
    /// Cauchy gap to the next resolved entry; `None` on flagged entries and
    /// on the last resolved one.
    pub gap_to_next: Option<f64>,
}

/// A finished sweep: entries in ladder order plus the convergence verdict
/// over the resolved range.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRecord {
    pub kind: SweepKind,
    /// Resolution floor the ladder was checked against.
    pub guard: f64,
    pub early_times: Vec<f64>,
    pub entries: Vec<SweepEntry>,
    /// True when at least two gaps exist and they never increase.
    pub selecting: bool,
}

impl SweepRecord {
    /// Gaps between consecutive resolved entries, in ladder order.
    pub fn gaps(&self) -> Vec<f64> {
        self.entries.iter().filter_map(|e| e.gap_to_next).collect()
    }

    pub fn last_gap(&self) -> Option<f64> {
        self.gaps().last().copied()
    }

    /// Last resolved entry; its pairings are the sweep's best estimate of
    /// the limiting pairings.
    pub fn terminal(&self) -> Option<&SweepEntry> {
        self.entries.iter().rev().find(|e| !e.under_resolved)
    }

    pub fn resolved(&self) -> Vec<&SweepEntry> {
        self.entries.iter().filter(|e| !e.under_resolved).collect()
    }

    /// One row per (entry, source): `parameter, source_id, pairing, gap,
    /// dissipation, flag`. The gap column repeats per entry and is empty
    /// where no gap is defined.
    pub fn csv(&self) -> String {
        let mut out = String::from("parameter,source_id,pairing,gap,dissipation,flag\n");
        for e in &self.entries {
            let gap = e.gap_to_next.map(|g| g.to_string()).unwrap_or_default();
            let flag = if e.under_resolved { "under-resolved" } else { "ok" };
            for (j, p) in e.pairings.iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    e.parameter, j, p, gap, e.dissipation, flag
                ));
            }
        }
        out
    }
}

fn validate_ladder(name: &'static str, values: &[f64]) -> Result<()> {
    if values.len() < 2 {
        return Err(LabError::InvalidParameter {
            name,
            reason: "a sweep needs at least two parameter values".into(),
        });
    }
    for &v in values {
        if !(v > 0.0 && v.is_finite()) {
            return Err(LabError::InvalidParameter {
                name,
                reason: format!("parameter values must be finite and positive, got {v}"),
            });
        }
    }
    for w in values.windows(2) {
        if w[1] >= w[0] {
            return Err(LabError::InvalidParameter {
                name,
                reason: format!("ladder must decrease strictly, got {} then {}", w[0], w[1]),
            });
        }
    }
    Ok(())
}

fn validate_panel(panel: &SourcePanel, horizon: f64) -> Result<()> {
    for (j, chi) in panel.sources().iter().enumerate() {
        let (lo, hi) = chi.support_t();
        if lo <= 0.0 || hi >= horizon {
            return Err(LabError::InvalidParameter {
                name: "sources",
                reason: format!(
                    "source {j} support ({lo}, {hi}) must sit strictly inside (0, {horizon})"
                ),
            });
        }
    }
    Ok(())
}

/// Panel pairings and scalar reductions of one trajectory.
fn reduce_entry(
    traj: &Trajectory,
    parameter: f64,
    under_resolved: bool,
    panel: &SourcePanel,
    setup: &SweepSetup,
) -> Result<SweepEntry> {
    let weights = evolve::trapezoid_weights(&traj.times);
    let mut pairings = vec![0.0; panel.len()];
    for (k, &t) in traj.times.iter().enumerate() {
        if weights[k] == 0.0 {
            continue;
        }
        for (j, chi) in panel.sources().iter().enumerate() {
            let (lo, hi) = chi.support_t();
            if t <= lo || t >= hi {
                continue;
            }
            let chi_t =
                ScalarGridField::from_fn(setup.grid, |x, y| chi.value(t, Vec2::new(x, y)));
            pairings[j] += weights[k] * pairing(&traj.snapshots[k], &chi_t)?;
        }
    }
    let early_l2 = setup
        .early_times
        .iter()
        .map(|&t| {
            traj.snapshot_at(t)
                .expect("early instants are output times")
                .norm_l2()
        })
        .collect();
    Ok(SweepEntry {
        parameter,
        under_resolved,
        pairings,
        dissipation: traj.ledger.dissipation(),
        energy_excess: traj.ledger.forward_inequality_excess(),
        mean_drift: traj.mean_drift(),
        max_abs: traj.max_abs(),
        final_l2: traj.last().norm_l2(),
        early_l2,
        gap_to_next: None,
    })
}

fn finish_record(
    kind: SweepKind,
    guard: f64,
    setup: &SweepSetup,
    mut entries: Vec<SweepEntry>,
) -> SweepRecord {
    let resolved: Vec<usize> = entries
        .iter()
        .enumerate()
        .filter(|(_, e)| !e.under_resolved)
        .map(|(i, _)| i)
        .collect();
    for w in resolved.windows(2) {
        let gap = entries[w[0]]
            .pairings
            .iter()
            .zip(&entries[w[1]].pairings)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        entries[w[0]].gap_to_next = Some(gap);
    }
    let gaps: Vec<f64> = entries.iter().filter_map(|e| e.gap_to_next).collect();
    let selecting = gaps.len() >= 2 && gaps.windows(2).all(|w| w[1] <= w[0]);
    SweepRecord {
        kind,
        guard,
        early_times: setup.early_times.clone(),
        entries,
        selecting,
    }
}

/// Diffusivity sweep: one splitting solve per `nu`, each paired against the
/// panel on the shared output times. The ladder must decrease strictly and
/// stay at or above [`nu_floor`] unless the setup allows flagged entries.
pub fn sweep_nu(
    field: &VelocityField,
    rho_in: &Datum,
    nus: &[f64],
    panel: &SourcePanel,
    setup: &SweepSetup,
) -> Result<SweepRecord> {
    validate_ladder("nus", nus)?;
    validate_panel(panel, setup.horizon)?;
    let times = setup.output_times()?;
    let rho0 = rho_in.realize(setup.grid)?;
    let guard = nu_floor(setup.grid);
    let mut entries = Vec::with_capacity(nus.len());
    for &nu in nus {
        let under = nu < guard;
        if under && !setup.allow_under_resolved {
            return Err(LabError::UnderResolved {
                nu,
                guard,
                n: setup.grid.n(),
            });
        }
        let config = SolvePlan::new(field, setup.grid, nu, setup.horizon)
            .scheme(Scheme::Splitting)
            .interpolation(setup.interpolation)
            .cfl(setup.cfl)
            .outputs(&times)
            .build()?;
        let traj = solve_forward(field, &rho0, &config)?;
        entries.push(reduce_entry(&traj, nu, under, panel, setup)?);
    }
    Ok(finish_record(SweepKind::Nu, guard, setup, entries))
}

/// Mollification sweep: the field is smoothed in space at each `delta` and
/// the inviscid problem is solved along the regularized characteristics.
/// The ladder must decrease strictly and stay at or above [`delta_floor`]
/// unless the setup allows flagged entries.
pub fn sweep_delta(
    field: &VelocityField,
    rho_in: &Datum,
    deltas: &[f64],
    panel: &SourcePanel,
    setup: &SweepSetup,
) -> Result<SweepRecord> {
    validate_ladder("deltas", deltas)?;
    validate_panel(panel, setup.horizon)?;
    let times = setup.output_times()?;
    let guard = delta_floor(setup.grid);
    let mut entries = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let under = delta < guard;
        if under && !setup.allow_under_resolved {
            return Err(LabError::DeltaUnderResolved { delta, guard });
        }
        let mollified = field.clone().mollified(delta)?;
        let traj =
            solve_forward_regularized(&mollified, rho_in, setup.grid, &times, setup.trace_dt)?;
        entries.push(reduce_entry(&traj, delta, under, panel, setup)?);
    }
    Ok(finish_record(SweepKind::Delta, guard, setup, entries))
}

/// How the two trajectories of a duality check were produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DualityMode {
    /// Backward solve is the exact algebraic transpose of the forward one;
    /// the gap is pure round-off.
    DiscreteAdjoint,
    /// Independently discretized solves; the gap measures consistency.
    Independent,
}

/// The two sides of `int <rho, chi> dt = <rho_in, theta(0)>` and their gap.
#[derive(Debug, Clone, Serialize)]
pub struct DualityReport {
    pub mode: DualityMode,
    pub lhs: f64,
    pub rhs: f64,
    pub abs_gap: f64,
    pub rel_gap: f64,
}

/// Pairs a forward trajectory with a backward one solved for the same
/// source. Both must share grid and output times, and the times must sample
/// the interior of the source support.
pub fn duality_check(
    forward: &Trajectory,
    backward: &Trajectory,
    chi: &SourceSpec,
    mode: DualityMode,
) -> Result<DualityReport> {
    if forward.first().grid() != backward.first().grid() {
        return Err(LabError::GridMismatch {
            left: forward.first().grid().n(),
            right: backward.first().grid().n(),
        });
    }
    if forward.times != backward.times {
        return Err(LabError::InvalidParameter {
            name: "output_times",
            reason: "forward and backward trajectories must share their snapshot instants"
                .into(),
        });
    }
    let (lo, hi) = chi.support_t();
    let inside = forward.times.iter().filter(|&&t| t > lo && t < hi).count();
    if inside < 2 {
        return Err(LabError::InvalidParameter {
            name: "output_times",
            reason: format!(
                "source support ({lo}, {hi}) contains {inside} snapshot instants; \
                 the pairing quadrature needs at least 2"
            ),
        });
    }
    let (lhs, rhs) = discrete_duality_sides(forward, backward, chi)?;
    let abs_gap = (lhs - rhs).abs();
    let rel_gap = abs_gap / lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE);
    Ok(DualityReport {
        mode,
        lhs,
        rhs,
        abs_gap,
        rel_gap,
    })
}

/// Dissipation along a sweep's resolved range.
#[derive(Debug, Clone, Serialize)]
pub struct DissipationSeries {
    pub parameters: Vec<f64>,
    pub values: Vec<f64>,
    /// Never increases along the ladder.
    pub monotone: bool,
    /// Last value at most half the first.
    pub halved: bool,
}

impl DissipationSeries {
    pub fn vanishing(&self) -> bool {
        self.values.len() >= 2 && self.monotone && self.halved
    }

    pub fn verdict(&self) -> &'static str {
        if self.vanishing() {
            "no anomalous dissipation (resolved range)"
        } else {
            "inconclusive"
        }
    }
}

/// Reads the dissipation column off a sweep's resolved entries.
pub fn dissipation_meter(record: &SweepRecord) -> DissipationSeries {
    let resolved = record.resolved();
    let parameters: Vec<f64> = resolved.iter().map(|e| e.parameter).collect();
    let values: Vec<f64> = resolved.iter().map(|e| e.dissipation).collect();
    let monotone = values.len() >= 2 && values.windows(2).all(|w| w[1] <= w[0]);
    let halved = values.len() >= 2 && *values.last().expect("nonempty") <= 0.5 * values[0];
    DissipationSeries {
        parameters,
        values,
        monotone,
        halved,
    }
}

/// Weak-form residuals of a trajectory against a panel of test functions,
/// at a series of time-quadrature refinements.
#[derive(Debug, Clone, Serialize)]
pub struct ResidualReport {
    /// Subsampling strides, coarse to fine.
    pub strides: Vec<usize>,
    /// Quadrature nodes used at each level.
    pub node_counts: Vec<usize>,
    /// `residuals[level][test]`.
    pub residuals: Vec<Vec<f64>>,
    /// Per-test amplitude, the natural scale of its residual.
    pub scales: Vec<f64>,
}

impl ResidualReport {
    pub fn finest(&self) -> &[f64] {
        self.residuals.last().expect("at least three levels")
    }

    pub fn max_finest_abs(&self) -> f64 {
        self.finest().iter().fold(0.0, |m, r| m.max(r.abs()))
    }
}

/// Distributional residual of the transport equation,
///
/// ```text
/// R(phi) = int_0^T <rho(t), d_t phi(t) + b . grad phi(t)> dt
///          + <rho_in, phi(0, .)>,
/// ```
///
/// evaluated per interval with the velocity frozen at the interval midpoint
/// and the trapezoid rule in time; `R(phi) = 0` for every weak solution and
/// every admissible test function. Each refinement level subsamples the
/// trajectory's snapshot times by a stride, so the series isolates the time
/// quadrature error. Test functions must vanish at the final time and their
/// support must end strictly before it.
pub fn weak_residual(
    traj: &Trajectory,
    rho_in: &ScalarGridField,
    tests: &[TestFunctionSpec],
    strides: &[usize],
) -> Result<ResidualReport> {
    if tests.is_empty() {
        return Err(LabError::InvalidParameter {
            name: "test_functions",
            reason: "need at least one test function".into(),
        });
    }
    if strides.len() < 3 {
        return Err(LabError::InvalidParameter {
            name: "strides",
            reason: format!("a refinement series needs at least 3 levels, got {}", strides.len()),
        });
    }
    for w in strides.windows(2) {
        if w[1] >= w[0] {
            return Err(LabError::InvalidParameter {
                name: "strides",
                reason: "strides must decrease strictly toward the finest level".into(),
            });
        }
    }
    if strides[strides.len() - 1] == 0 {
        return Err(LabError::InvalidParameter {
            name: "strides",
            reason: "strides must be positive".into(),
        });
    }
    if traj.times.len() < 2 {
        return Err(LabError::InvalidParameter {
            name: "trajectory",
            reason: "need at least two snapshots to integrate in time".into(),
        });
    }
    let grid = traj.first().grid();
    if rho_in.grid() != grid {
        return Err(LabError::GridMismatch {
            left: rho_in.grid().n(),
            right: grid.n(),
        });
    }
    let horizon = *traj.times.last().expect("nonempty");
    for (j, test) in tests.iter().enumerate() {
        let (lo, hi) = test.support_t();
        if test.side() != TestSide::Forward || hi >= horizon {
            return Err(LabError::InvalidParameter {
                name: "test_functions",
                reason: format!(
                    "test {j} support ({lo}, {hi}) must vanish before the final time {horizon}"
                ),
            });
        }
    }

    let mut node_counts = Vec::with_capacity(strides.len());
    let mut residuals = Vec::with_capacity(strides.len());
    for &stride in strides {
        let mut idx: Vec<usize> = (0..traj.times.len()).step_by(stride).collect();
        if *idx.last().expect("nonempty") != traj.times.len() - 1 {
            idx.push(traj.times.len() - 1);
        }
        node_counts.push(idx.len());
        residuals.push(residual_level(traj, rho_in, tests, &idx)?);
    }
    let scales = tests.iter().map(|t| t.profile().amplitude.abs()).collect();
    Ok(ResidualReport {
        strides: strides.to_vec(),
        node_counts,
        residuals,
        scales,
    })
}

/// Realized rates of one test function at a fixed time: `d_t phi` and both
/// gradient components. `None` outside the open time support, where all
/// three vanish identically.
struct TestRates {
    dt: ScalarGridField,
    dx: ScalarGridField,
    dy: ScalarGridField,
}

fn realize_test_rates(test: &TestFunctionSpec, grid: TorusGrid, t: f64) -> Option<TestRates> {
    let (lo, hi) = test.support_t();
    if t <= lo || t >= hi {
        return None;
    }
    let n = grid.n();
    let mut dt_v = vec![0.0; n * n];
    let mut dx_v = vec![0.0; n * n];
    let mut dy_v = vec![0.0; n * n];
    for j in 0..n {
        let y = grid.coord(j);
        for i in 0..n {
            let x = Vec2::new(grid.coord(i), y);
            let k = j * n + i;
            dt_v[k] = test.time_derivative(t, x);
            let g = test.gradient(t, x);
            dx_v[k] = g.x;
            dy_v[k] = g.y;
        }
    }
    let field = |v| ScalarGridField::from_values(grid, v).expect("matching length");
    Some(TestRates {
        dt: field(dt_v),
        dx: field(dx_v),
        dy: field(dy_v),
    })
}

/// `<state, b(t) . (gx, gy)>` with the shear structure of the motion
/// exploited: a shear weighs whole rows or columns by its profile, so no
/// velocity grid is ever materialized.
fn advective_pairing(
    state: &ScalarGridField,
    field: &VelocityField,
    t: f64,
    gx: &ScalarGridField,
    gy: &ScalarGridField,
) -> f64 {
    let grid = state.grid();
    let n = grid.n();
    let h2 = grid.spacing() * grid.spacing();
    let s = state.values();
    let vx = gx.values();
    let vy = gy.values();
    let row_totals: Vec<f64> = match field.motion_at(t) {
        Motion::Still => return 0.0,
        Motion::Shear {
            axis: Axis::X,
            profile,
        } => (0..n)
            .map(|j| {
                let base = j * n;
                let mut acc = 0.0;
                for i in 0..n {
                    acc += s[base + i] * vx[base + i];
                }
                profile.eval(grid.coord(j)) * acc
            })
            .collect(),
        Motion::Shear {
            axis: Axis::Y,
            profile,
        } => {
            let speeds: Vec<f64> = (0..n).map(|i| profile.eval(grid.coord(i))).collect();
            (0..n)
                .map(|j| {
                    let base = j * n;
                    let mut acc = 0.0;
                    for i in 0..n {
                        acc += s[base + i] * vy[base + i] * speeds[i];
                    }
                    acc
                })
                .collect()
        }
        Motion::General => (0..n)
            .map(|j| {
                let y = grid.coord(j);
                let base = j * n;
                let mut acc = 0.0;
                for i in 0..n {
                    let b = field.eval_velocity(t, Vec2::new(grid.coord(i), y));
                    acc += s[base + i] * (b.x * vx[base + i] + b.y * vy[base + i]);
                }
                acc
            })
            .collect(),
    };
    pairwise_sum(&row_totals) * h2
}

fn residual_level(
    traj: &Trajectory,
    rho_in: &ScalarGridField,
    tests: &[TestFunctionSpec],
    idx: &[usize],
) -> Result<Vec<f64>> {
    let grid = traj.first().grid();
    let mut acc = vec![0.0; tests.len()];

    let g_value = |k: usize, rates: &Option<TestRates>, t_mid: f64| -> Result<f64> {
        match rates {
            None => Ok(0.0),
            Some(r) => {
                let state = &traj.snapshots[k];
                let time_part = pairing(state, &r.dt)?;
                let adv_part = advective_pairing(state, &traj.field, t_mid, &r.dx, &r.dy);
                Ok(time_part + adv_part)
            }
        }
    };

    let mut left: Vec<Option<TestRates>> = tests
        .iter()
        .map(|test| realize_test_rates(test, grid, traj.times[idx[0]]))
        .collect();
    for w in idx.windows(2) {
        let (ka, kb) = (w[0], w[1]);
        let (ta, tb) = (traj.times[ka], traj.times[kb]);
        let mid = 0.5 * (ta + tb);
        let right: Vec<Option<TestRates>> = tests
            .iter()
            .map(|test| realize_test_rates(test, grid, tb))
            .collect();
        for j in 0..tests.len() {
            let ga = g_value(ka, &left[j], mid)?;
            let gb = g_value(kb, &right[j], mid)?;
            acc[j] += 0.5 * (tb - ta) * (ga + gb);
        }
        left = right;
    }
    for (j, test) in tests.iter().enumerate() {
        let (lo, hi) = test.support_t();
        if lo < 0.0 && 0.0 < hi {
            let phi0 = ScalarGridField::from_fn(grid, |x, y| test.value(0.0, Vec2::new(x, y)));
            acc[j] += pairing(rho_in, &phi0)?;
        }
    }
    Ok(acc)
}

/// Clone of a trajectory with one snapshot scaled, for control experiments
/// that must trip the residual check.
pub fn corrupted_control(traj: &Trajectory, index: usize, factor: f64) -> Result<Trajectory> {
    if index >= traj.snapshots.len() {
        return Err(LabError::InvalidParameter {
            name: "index",
            reason: format!(
                "snapshot index {index} out of range for {} snapshots",
                traj.snapshots.len()
            ),
        });
    }
    if !factor.is_finite() {
        return Err(LabError::InvalidParameter {
            name: "factor",
            reason: format!("corruption factor must be finite, got {factor}"),
        });
    }
    let mut out = traj.clone();
    for v in out.snapshots[index].values_mut() {
        *v *= factor;
    }
    Ok(out)
}

/// Outcome of the dyadic exchange demonstration: a piecewise transport
/// solution reconstructed slab by slab, its weak residual against a clean
/// and a corrupted control, and the separation from the selected limit.
#[derive(Debug, Clone)]
pub struct ExchangeDemoReport {
    pub n_max: u32,
    pub times: Vec<f64>,
    pub residuals: ResidualReport,
    pub control_residuals: ResidualReport,
    /// Largest per-test ratio of corrupted over clean residual magnitude at
    /// the finest level; one tripped test function is enough to disqualify
    /// a candidate.
    pub control_ratio: f64,
    /// `||rho(1)||_{L^2}`; the selected limit is identically zero, so this
    /// is also the distance to it.
    pub separation: f64,
    /// Every dyadic-time snapshot matched its pattern bit for bit.
    pub patterns_exact: bool,
    /// `|<rho(2^-n), probe>|` for `n = 1..=n_max`, against a fixed smooth
    /// probe; equidistribution shows up as decay.
    pub pattern_pairings: Vec<f64>,
    pub pairings_decreasing: bool,
    /// Retained states: the frozen pattern at `t = 0`, each dyadic instant
    /// `2^-n`, and the stripes at `t = 1`.
    pub key_states: Vec<(f64, ScalarGridField)>,
}

fn dyadic(n: i32) -> f64 {
    (2.0f64).powi(-n)
}

/// Three staggered space-time bumps covering the early, middle and late
/// thirds of `(0, horizon)`, for weak-residual checks against forward
/// trajectories.
pub fn standard_test_panel(horizon: f64) -> Result<Vec<TestFunctionSpec>> {
    let raw = [
        (0.30, (0.30, 0.60), 0.15, 0.22, 1.0),
        (0.55, (0.70, 0.30), 0.20, 0.18, 0.9),
        (0.80, (0.45, 0.50), 0.15, 0.25, 1.1),
    ];
    let mut tests = Vec::with_capacity(raw.len());
    for (ct, c, rt, rx, a) in raw {
        tests.push(TestFunctionSpec::new(
            TestSide::Forward,
            ct * horizon,
            c,
            rt * horizon,
            rx,
            a,
            horizon,
        )?);
    }
    Ok(tests)
}

fn demo_test_panel(window_lo: f64, horizon: f64) -> Result<Vec<TestFunctionSpec>> {
    let tests = standard_test_panel(horizon)?;
    for test in &tests {
        if test.support_t().0 <= window_lo {
            return Err(LabError::InvalidParameter {
                name: "n_max",
                reason: format!(
                    "active window bottom {window_lo} reaches into the test panel; \
                     need at least two exchange slabs"
                ),
            });
        }
    }
    Ok(tests)
}

/// Reconstructs the bounded solution that refuses the vanishing-diffusivity
/// limit: on each slab `(2^-n-1, 2^-n]` it is the exact transport of the
/// level-`n+1` checkerboard started at the slab's bottom, which the exchange
/// field carries onto the level-`n` pattern by the slab's end. Below the
/// active window the pattern is frozen.
///
/// The report checks three things: the dyadic-time snapshots reproduce the
/// patterns exactly; the weak residual over test functions supported inside
/// the active window is quadrature-limited, and at least an order of
/// magnitude under a corrupted control; and the final state has unit
/// distance from the selected (identically zero) limit.
///
/// `nodes_per_slab` must be even so every slab's midpoint, where the shear
/// direction flips, is a quadrature node.
pub fn exchange_nonuniqueness_demo(
    n_max: u32,
    grid: TorusGrid,
    nodes_per_slab: usize,
    strides: &[usize],
) -> Result<ExchangeDemoReport> {
    if nodes_per_slab < 4 || nodes_per_slab % 2 != 0 {
        return Err(LabError::InvalidParameter {
            name: "nodes_per_slab",
            reason: format!("need an even count of at least 4, got {nodes_per_slab}"),
        });
    }
    let field = VelocityField::dyadic_exchange(0, n_max, Orientation::Standard)?;
    let window_lo = dyadic(n_max as i32 + 1);
    let tests = demo_test_panel(window_lo, 1.0)?;

    let mut times = vec![0.0, window_lo];
    for n in (0..=n_max).rev() {
        let lo = dyadic(n as i32 + 1);
        for k in 1..=nodes_per_slab {
            times.push(lo + lo * (k as f64 / nodes_per_slab as f64));
        }
    }

    let mut snapshots = Vec::with_capacity(times.len());
    let mut ledger = evolve::EnergyLedger::new(false);
    for &t in &times {
        let snap = if t <= window_lo {
            AnalyticDatum::Checkerboard { level: n_max + 1 }.realize(grid)?
        } else {
            let n = (0..=n_max)
                .find(|&n| t > dyadic(n as i32 + 1) && t <= dyadic(n as i32))
                .expect("times lie in the slab decomposition");
            let datum = AnalyticDatum::Checkerboard { level: n + 1 };
            let slab_lo = dyadic(n as i32 + 1);
            evolve::trace_grid(grid, |x| Ok(datum.eval(field.exact_flow(slab_lo, t, x)?)))?
        };
        snap.check_finite(t, "slab transport")?;
        evolve::push_state_row(&mut ledger, t, &snap);
        snapshots.push(snap);
    }
    let mut traj = Trajectory {
        times: times.clone(),
        snapshots,
        ledger,
        config: evolve::echo_config(grid, 0.0, Scheme::PureTransport, times.clone()),
        field: field.clone(),
    };

    let mut patterns_exact = traj
        .snapshot_at(window_lo)
        .expect("window bottom is an output")
        .values()
        == checkerboard(n_max + 1, grid)?.values();
    for n in 1..=n_max {
        let expected = checkerboard(n, grid)?;
        patterns_exact &= traj
            .snapshot_at(dyadic(n as i32))
            .expect("dyadic instants are outputs")
            .values()
            == expected.values();
    }
    let stripes = vertical_stripes(1, grid)?;
    patterns_exact &= traj
        .snapshot_at(1.0)
        .expect("the horizon is an output")
        .values()
        == stripes.values();

    let probe = ScalarGridField::from_fn(grid, |x, y| {
        bump((x - 0.3) / 0.35) * bump((y - 0.55) / 0.35)
    });
    let mut pattern_pairings = Vec::with_capacity(n_max as usize);
    for n in 1..=n_max {
        let snap = traj.snapshot_at(dyadic(n as i32)).expect("output");
        pattern_pairings.push(pairing(snap, &probe)?.abs());
    }
    let pairings_decreasing = pattern_pairings.windows(2).all(|w| w[1] < w[0]);

    let separation = traj.snapshot_at(1.0).expect("output").norm_l2();

    let rho_in = traj.first().clone();
    let residuals = weak_residual(&traj, &rho_in, &tests, strides)?;

    // Control: scale the snapshots across half of the middle test's time
    // window. Inside the window the scaled states still solve the equation,
    // so the whole defect sits in the two jumps at the window edges, worth
    // `0.1 (<rho phi>(b) - <rho phi>(a))` regardless of the quadrature
    // density. The states are corrupted in place and restored bitwise; a
    // cloned trajectory would double the footprint at production
    // resolutions.
    let (win_lo, win_hi) = (0.45, 0.65);
    let window: Vec<usize> = times
        .iter()
        .enumerate()
        .filter(|(_, &t)| t >= win_lo && t <= win_hi)
        .map(|(i, _)| i)
        .collect();
    let originals: Vec<Vec<f64>> = window
        .iter()
        .map(|&i| traj.snapshots[i].values().to_vec())
        .collect();
    for &i in &window {
        for v in traj.snapshots[i].values_mut() {
            *v *= 1.1;
        }
    }
    let control_residuals = weak_residual(&traj, &rho_in, &tests, strides)?;
    for (&i, orig) in window.iter().zip(&originals) {
        traj.snapshots[i].values_mut().copy_from_slice(orig);
    }
    let control_ratio = residuals
        .finest()
        .iter()
        .zip(control_residuals.finest())
        .map(|(clean, bad)| bad.abs() / clean.abs().max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);

    let mut key_states = vec![(0.0, traj.first().clone())];
    for n in (1..=n_max).rev() {
        let t = dyadic(n as i32);
        key_states.push((t, traj.snapshot_at(t).expect("output").clone()));
    }
    key_states.push((1.0, traj.snapshot_at(1.0).expect("output").clone()));

    Ok(ExchangeDemoReport {
        n_max,
        times,
        residuals,
        control_residuals,
        control_ratio,
        separation,
        patterns_exact,
        pattern_pairings,
        pairings_decreasing,
        key_states,
    })
}

/// Early-time norm deficits along a sweep, against the datum's norm.
#[derive(Debug, Clone, Serialize)]
pub struct RecoveryReport {
    pub datum_l2: f64,
    pub early_times: Vec<f64>,
    pub parameters: Vec<f64>,
    /// `deficits[entry][early_time] = datum_l2 - ||rho(t)||`.
    pub deficits: Vec<Vec<f64>>,
    /// Per early instant: the deficit decreases strictly along the ladder.
    pub improving: Vec<bool>,
}

/// Measures how much of the datum's norm each entry has recovered by the
/// early instants. A shrinking deficit along the ladder is the quantitative
/// form of strong initial-time continuity of the limit.
pub fn l2_recovery_check(record: &SweepRecord, datum_l2: f64) -> Result<RecoveryReport> {
    if !(datum_l2 > 0.0 && datum_l2.is_finite()) {
        return Err(LabError::InvalidParameter {
            name: "datum_l2",
            reason: format!("need a positive finite datum norm, got {datum_l2}"),
        });
    }
    if record.early_times.is_empty() {
        return Err(LabError::InvalidParameter {
            name: "early_times",
            reason: "the sweep recorded no early instants".into(),
        });
    }
    let resolved = record.resolved();
    let parameters: Vec<f64> = resolved.iter().map(|e| e.parameter).collect();
    let deficits: Vec<Vec<f64>> = resolved
        .iter()
        .map(|e| e.early_l2.iter().map(|l2| datum_l2 - l2).collect())
        .collect();
    let improving = (0..record.early_times.len())
        .map(|k| {
            deficits.len() >= 2
                && deficits.windows(2).all(|w| w[1][k] < w[0][k])
        })
        .collect();
    Ok(RecoveryReport {
        datum_l2,
        early_times: record.early_times.clone(),
        parameters,
        deficits,
        improving,
    })
}

/// One departure reading of a backward solution from its initial-time state.
#[derive(Debug, Clone, Serialize)]
pub struct ProbeRow {
    pub nu: f64,
    pub t: f64,
    /// `||theta(t) - theta(0)||_{L^2}`.
    pub departure: f64,
}

/// Exploratory table of backward departures; carries no verdict.
#[derive(Debug, Clone, Serialize)]
pub struct BackwardProbeReport {
    pub horizon: f64,
    pub rows: Vec<ProbeRow>,
}

/// Tabulates `||theta(t) - theta(0)||` for a ladder of diffusivities, to
/// probe whether the backward solutions keep moving at early times as the
/// diffusivity vanishes. The grid, horizon and solver knobs come from the
/// setup; its pairing and early-time fields are not used.
pub fn backward_discontinuity_probe(
    field: &VelocityField,
    chi: &SourceSpec,
    nus: &[f64],
    probe_times: &[f64],
    setup: &SweepSetup,
) -> Result<BackwardProbeReport> {
    validate_ladder("nus", nus)?;
    if probe_times.is_empty() {
        return Err(LabError::InvalidParameter {
            name: "probe_times",
            reason: "need at least one probe instant".into(),
        });
    }
    for &t in probe_times {
        if !(t > 0.0 && t <= setup.horizon) {
            return Err(LabError::InvalidParameter {
                name: "probe_times",
                reason: format!("probe instant {t} outside (0, {}]", setup.horizon),
            });
        }
    }
    let guard = nu_floor(setup.grid);
    let mut rows = Vec::with_capacity(nus.len() * probe_times.len());
    for &nu in nus {
        if nu < guard && !setup.allow_under_resolved {
            return Err(LabError::UnderResolved {
                nu,
                guard,
                n: setup.grid.n(),
            });
        }
        let config = SolvePlan::new(field, setup.grid, nu, setup.horizon)
            .scheme(Scheme::Splitting)
            .interpolation(setup.interpolation)
            .cfl(setup.cfl)
            .outputs(probe_times)
            .with_source(chi)
            .build()?;
        let traj = solve_backward_diffusive(field, chi, &config)?;
        let theta0 = traj.snapshot_at(0.0).expect("0 is always an output");
        for &t in probe_times {
            let theta_t = traj
                .snapshot_at(t)
                .expect("probe instants are output times");
            let diff: Vec<f64> = theta_t
                .values()
                .iter()
                .zip(theta0.values())
                .map(|(a, b)| a - b)
                .collect();
            let departure =
                ScalarGridField::from_values(setup.grid, diff)?.norm_l2();
            rows.push(ProbeRow { nu, t, departure });
        }
    }
    Ok(BackwardProbeReport {
        horizon: setup.horizon,
        rows,
    })
}
