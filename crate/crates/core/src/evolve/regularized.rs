//! Characteristic-tracing solvers for the inviscid problems.
//!
//! With a velocity field regular enough to own a flow map `X` (closed-form
//! phases, or a mollification with a finite Lipschitz budget), the forward
//! solution is the pull-back `u(t, x) = u_in(X(0, t, x))` and the backward
//! solution is the line integral
//!
//! ```text
//! v(t, x) = int_t^T chi(s, X(s, t, x)) ds,
//! ```
//!
//! both evaluated pointwise on the grid with no PDE stepping at all. The
//! forward values are point evaluations of the datum (monotone interpolation
//! for sampled data), so the sup bound of the datum is preserved exactly; the
//! backward terminal state is exactly zero.
//!
//! Flow hops use the closed form when the field has one, otherwise a
//! characteristic tracer whose step obeys the field's Lipschitz budget; an
//! explicit `trace_dt` overrides the budget step, which is what refinement
//! studies sweep. The time integral is the trapezoid rule on nodes that
//! include every phase boundary and the source support edges, refined
//! uniformly in between, so the integrand is smooth on every piece and the
//! quadrature error shrinks quadratically under refinement.

use crate::error::{LabError, Result};
use crate::torus::bump::SourceSpec;
use crate::torus::{spacetime_quadrature, ScalarGridField, TorusGrid};
use crate::util::Vec2;
use crate::velocity::flow::rk4_flow;
use crate::velocity::VelocityField;

use super::{
    echo_config, push_state_row, sorted_outputs, trace_grid, Datum, EnergyLedger, Scheme,
    Trajectory,
};

/// How single flow hops are computed.
enum Tracer {
    Exact,
    Rk4 { dt: f64 },
}

impl Tracer {
    fn for_field(field: &VelocityField, trace_dt: Option<f64>) -> Result<Self> {
        if field.has_exact_flow() {
            return Ok(Tracer::Exact);
        }
        let dt = match trace_dt {
            Some(dt) if dt > 0.0 && dt.is_finite() => dt,
            Some(dt) => {
                return Err(LabError::InvalidParameter {
                    name: "trace_dt",
                    reason: format!("step must be positive and finite, got {dt}"),
                })
            }
            None => {
                let rate = field.lipschitz_rate().ok_or(LabError::NotMollified)?;
                if rate > 0.0 {
                    0.25 / rate
                } else {
                    f64::INFINITY
                }
            }
        };
        Ok(Tracer::Rk4 { dt })
    }

    /// Position at time `s` of the characteristic through `x` at time `t`.
    fn hop(&self, field: &VelocityField, s: f64, t: f64, x: Vec2) -> Result<Vec2> {
        match self {
            Tracer::Exact => field.exact_flow(s, t, x),
            Tracer::Rk4 { dt } => rk4_flow(field, s, t, x, *dt),
        }
    }
}

/// Pull-back of the datum along the flow, sampled at the output times.
pub fn solve_forward_regularized(
    field: &VelocityField,
    datum: &Datum,
    grid: TorusGrid,
    output_times: &[f64],
    trace_dt: Option<f64>,
) -> Result<Trajectory> {
    let times = sorted_outputs(output_times)?;
    let tracer = Tracer::for_field(field, trace_dt)?;
    let mut snapshots = Vec::with_capacity(times.len());
    let mut ledger = EnergyLedger::new(false);
    for &t in &times {
        let snap = if t == 0.0 {
            datum.realize(grid)?
        } else {
            trace_grid(grid, |x| Ok(datum.eval(tracer.hop(field, 0.0, t, x)?)))?
        };
        snap.check_finite(t, "characteristic trace")?;
        push_state_row(&mut ledger, t, &snap);
        snapshots.push(snap);
    }
    Ok(Trajectory {
        times: times.clone(),
        snapshots,
        ledger,
        config: echo_config(grid, 0.0, Scheme::PureTransport, times),
        field: field.clone(),
    })
}

/// Line-integral solution of the backward source problem, sampled at the
/// output times (0 and the horizon are always included).
pub fn solve_backward_regularized(
    field: &VelocityField,
    chi: &SourceSpec,
    grid: TorusGrid,
    horizon: f64,
    output_times: &[f64],
    steps_per_piece: usize,
    trace_dt: Option<f64>,
) -> Result<Trajectory> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(LabError::InvalidParameter {
            name: "horizon",
            reason: format!("need a positive finite horizon, got {horizon}"),
        });
    }
    if steps_per_piece == 0 {
        return Err(LabError::InvalidParameter {
            name: "steps_per_piece",
            reason: "quadrature needs at least one interval per piece".into(),
        });
    }
    let mut requested = output_times.to_vec();
    requested.push(0.0);
    requested.push(horizon);
    let times = sorted_outputs(&requested)?;
    if *times.last().unwrap() > horizon {
        return Err(LabError::InvalidParameter {
            name: "output_times",
            reason: "outputs beyond the horizon".into(),
        });
    }
    let tracer = Tracer::for_field(field, trace_dt)?;
    let (chi_lo, chi_hi) = chi.support_t();

    let mut snapshots = Vec::with_capacity(times.len());
    let mut rows = Vec::with_capacity(times.len());
    for &t in &times {
        let q_lo = t.max(chi_lo).max(0.0);
        let q_hi = horizon.min(chi_hi);
        let snap = if q_lo >= q_hi {
            ScalarGridField::zeros(grid)
        } else {
            let quad = quadrature_nodes(field, q_lo, q_hi, steps_per_piece);
            trace_grid(grid, |x| {
                let mut pos = tracer.hop(field, quad[0], t, x)?;
                let mut samples = Vec::with_capacity(quad.len());
                samples.push(chi.value(quad[0], pos));
                for w in quad.windows(2) {
                    pos = tracer.hop(field, w[1], w[0], pos)?;
                    samples.push(chi.value(w[1], pos));
                }
                spacetime_quadrature(&samples, &quad)
            })?
        };
        snap.check_finite(t, "source line integral")?;
        let spec = crate::torus::spectral::SpectralField::from_grid(&snap);
        rows.push((
            horizon - t,
            spec.energy(),
            spec.h1_seminorm_sq(),
            chi.l2_spacetime_sq(t, horizon),
        ));
        snapshots.push(snap);
    }
    let mut ledger = EnergyLedger::new(true);
    for &(tau, l2, h1, work) in rows.iter().rev() {
        ledger.push(tau, l2, h1, 0.0, work);
    }
    Ok(Trajectory {
        times: times.clone(),
        snapshots,
        ledger,
        config: echo_config(grid, 0.0, Scheme::PureTransport, times),
        field: field.clone(),
    })
}

/// Trapezoid nodes on `[lo, hi]`: phase boundaries plus a uniform refinement
/// of each piece.
fn quadrature_nodes(field: &VelocityField, lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    let mut pieces = vec![lo, hi];
    pieces.extend(field.breakpoints(lo, hi));
    pieces.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    pieces.dedup();
    let mut nodes = vec![lo];
    for w in pieces.windows(2) {
        let (a, b) = (w[0], w[1]);
        for q in 1..steps {
            nodes.push(a + (b - a) * (q as f64 / steps as f64));
        }
        nodes.push(b);
    }
    nodes.dedup();
    nodes
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolve::AnalyticDatum;
    use crate::torus::norm_l2;
    use crate::util::integrate_gl16;
    use crate::velocity::{Axis, ShearProfile, StreamFunction};

    fn shear() -> VelocityField {
        VelocityField::steady_shear(
            Axis::X,
            ShearProfile::Sinusoid {
                amplitude: 0.8,
                freq: 1,
                phase: 0.1,
            },
        )
    }

    #[test]
    fn mollified_zero_field_returns_the_datum_bitwise() {
        let field = VelocityField::zero().mollified(0.25).unwrap();
        let grid = TorusGrid::new(16).unwrap();
        let rho = ScalarGridField::from_fn(grid, |x, y| (x * 9.0 + y * 4.0).sin());
        let traj = solve_forward_regularized(
            &field,
            &Datum::Grid(rho.clone()),
            grid,
            &[0.0, 0.3, 1.0],
            None,
        )
        .unwrap();
        for snap in &traj.snapshots {
            assert_eq!(snap.values(), rho.values());
        }
    }

    #[test]
    fn pullback_keeps_the_exact_sup_bound_and_mean() {
        let field = shear();
        let grid = TorusGrid::new(32).unwrap();
        let tp = 2.0 * std::f64::consts::PI;
        let analytic = Datum::Analytic(AnalyticDatum::CosineX {
            freq: 1,
            amplitude: 1.0,
        });
        let traj =
            solve_forward_regularized(&field, &analytic, grid, &[0.0, 0.37], None).unwrap();
        assert!(traj.max_abs() <= 1.0);
        assert!(
            traj.mean_drift() <= 1e-8,
            "mean drift {}",
            traj.mean_drift()
        );

        let sampled = ScalarGridField::from_fn(grid, |x, y| (tp * x).cos() * (tp * y).sin());
        let sup = sampled.norm_linf();
        let traj = solve_forward_regularized(
            &field,
            &Datum::Grid(sampled),
            grid,
            &[0.0, 0.5, 1.0],
            None,
        )
        .unwrap();
        assert!(traj.max_abs() <= sup, "sup grew: {} > {sup}", traj.max_abs());
        assert!(traj.mean_drift() <= 1e-5);
    }

    #[test]
    fn mollified_shear_converges_to_the_sharp_transport() {
        let grid = TorusGrid::new(64).unwrap();
        let datum = AnalyticDatum::CosineX {
            freq: 1,
            amplitude: 1.0,
        };
        let t = 0.4;
        let sharp = crate::evolve::solve_transport_analytic(&shear(), &datum, grid, &[0.0, t])
            .unwrap();
        let mut previous = f64::INFINITY;
        for k in 3..=6 {
            let delta = 0.5f64.powi(k);
            let field = shear().mollified(delta).unwrap();
            let traj = solve_forward_regularized(
                &field,
                &Datum::Analytic(datum),
                grid,
                &[0.0, t],
                None,
            )
            .unwrap();
            let mut diff = traj.last().clone();
            for (v, s) in diff.values_mut().iter_mut().zip(sharp.last().values()) {
                *v -= s;
            }
            let err = norm_l2(&diff);
            assert!(
                err < previous,
                "delta = {delta}: error {err} did not drop below {previous}"
            );
            previous = err;
        }
        assert!(previous < 0.05, "finest error {previous}");
    }

    #[test]
    fn zero_field_line_integral_matches_the_time_integral() {
        let field = VelocityField::zero();
        let grid = TorusGrid::new(16).unwrap();
        let horizon = 1.0;
        let chi = SourceSpec::new(0.5, (0.4, 0.55), 0.2, 0.2, 1.3, horizon).unwrap();
        let traj = solve_backward_regularized(&field, &chi, grid, horizon, &[0.2], 256, None)
            .unwrap();
        let snap = traj.snapshot_at(0.2).unwrap();
        let (lo, hi) = chi.support_t();
        for (i, j) in [(3, 5), (7, 2), (12, 9)] {
            let (x, y) = grid.point(i, j);
            let exact = integrate_gl16(lo.max(0.2), hi.min(horizon), 4, |s| {
                chi.value(s, Vec2::new(x, y))
            });
            let got = snap.get(i as i64, j as i64);
            assert!(
                (got - exact).abs() <= 1e-5,
                "point ({i},{j}): {got} vs {exact}"
            );
        }
    }

    #[test]
    fn terminal_state_is_zero_and_sup_bound_holds() {
        let field = shear();
        let grid = TorusGrid::new(32).unwrap();
        let horizon = 1.0;
        let chi = SourceSpec::new(0.45, (0.3, 0.6), 0.25, 0.15, 2.0, horizon).unwrap();
        let traj =
            solve_backward_regularized(&field, &chi, grid, horizon, &[0.1, 0.45], 128, None)
                .unwrap();
        assert_eq!(traj.times, vec![0.0, 0.1, 0.45, 1.0]);
        let terminal = traj.snapshot_at(horizon).unwrap();
        assert!(terminal.values().iter().all(|&v| v == 0.0));
        let budget = chi.sup_time_integral();
        assert!(
            traj.max_abs() <= budget * (1.0 + 1e-5),
            "sup {} above {budget}",
            traj.max_abs()
        );
        assert!(traj.ledger.reversed);
        assert!(traj.ledger.backward_energy_excess(horizon) <= 0.0);
        let final_work = traj.ledger.source_work_cum.last().unwrap();
        assert!((final_work - chi.l2_spacetime_sq(0.0, horizon)).abs() <= 1e-12);
    }

    #[test]
    fn backward_quadrature_error_shrinks_quadratically() {
        let field = shear();
        let grid = TorusGrid::new(8).unwrap();
        let horizon = 1.0;
        let chi = SourceSpec::new(0.5, (0.5, 0.5), 0.25, 0.2, 1.0, horizon).unwrap();
        let theta_at = |steps: usize| -> ScalarGridField {
            solve_backward_regularized(&field, &chi, grid, horizon, &[0.0], steps, None)
                .unwrap()
                .snapshot_at(0.0)
                .unwrap()
                .clone()
        };
        let reference = theta_at(2048);
        let err = |steps: usize| -> f64 {
            let mut d = theta_at(steps);
            for (v, r) in d.values_mut().iter_mut().zip(reference.values()) {
                *v -= r;
            }
            norm_l2(&d)
        };
        let (e16, e64) = (err(16), err(64));
        let order = (e16 / e64).log2() / 2.0;
        assert!(order > 1.8, "quadrature order {order} ({e16} vs {e64})");
    }

    #[test]
    fn rough_fields_without_a_budget_are_rejected() {
        let field = VelocityField::steady_stream(StreamFunction::CellArray {
            amplitude: 0.3,
            fx: 1,
            fy: 1,
        });
        let grid = TorusGrid::new(8).unwrap();
        let datum = Datum::Analytic(AnalyticDatum::Constant { value: 1.0 });
        assert!(matches!(
            solve_forward_regularized(&field, &datum, grid, &[0.0, 0.5], None),
            Err(LabError::NotMollified)
        ));
        // An explicit trace step unlocks the tracer.
        let traj =
            solve_forward_regularized(&field, &datum, grid, &[0.0, 0.5], Some(0.05)).unwrap();
        assert_eq!(traj.last().get(0, 0), 1.0);
    }

    #[test]
    fn mollified_stream_traces_run_under_the_budget_step() {
        let field = VelocityField::steady_stream(StreamFunction::CellArray {
            amplitude: 0.2,
            fx: 1,
            fy: 1,
        })
        .mollified(0.25)
        .unwrap();
        let grid = TorusGrid::new(8).unwrap();
        let datum = Datum::Analytic(AnalyticDatum::CosineX {
            freq: 1,
            amplitude: 1.0,
        });
        let budget = solve_forward_regularized(&field, &datum, grid, &[0.0, 0.1], None).unwrap();
        let fine = solve_forward_regularized(
            &field,
            &datum,
            grid,
            &[0.0, 0.1],
            Some(1e-4),
        )
        .unwrap();
        let mut worst = 0.0f64;
        for (a, b) in budget.last().values().iter().zip(fine.last().values()) {
            worst = worst.max((a - b).abs());
        }
        assert!(worst <= 1e-8, "budget trace off by {worst}");
        assert!(budget.max_abs() <= 1.0);
    }
}
