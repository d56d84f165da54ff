//! Linear spectral stepper with an exact algebraic transpose.
//!
//! The advection generator is applied pseudo-spectrally,
//!
//! ```text
//! L u  = -(b1 Dx u + b2 Dy u),       L' v = Dx(b1 v) + Dy(b2 v),
//! ```
//!
//! with `Dx`, `Dy` the Fourier derivative matrices (Nyquist row zeroed, so
//! both are exactly antisymmetric on the grid inner product) and `b1`, `b2`
//! the sampled velocity components, frozen at each step midpoint. `L'` is the
//! matrix transpose of `L` because diagonal multiplication is symmetric and
//! the derivatives flip sign.
//!
//! One step is the palindrome `D(dt/2) . R(dt L) . D(dt/2)` where `R` is the
//! classical fourth-order Runge-Kutta polynomial `I + z + z^2/2 + z^3/6 +
//! z^4/24` and `D` the exact heat multiplier, a symmetric matrix. The step's
//! transpose is therefore the same composition built on `L'`, which is what
//! [`adjoint_pair`] marches backward; the resulting discrete duality identity
//! holds to round-off, with no quadrature or interpolation error.
//!
//! `L` is antisymmetric, so `R(dt L)` is a normal matrix with eigenvalues
//! `R(i y)`; `|R(i y)| <= 1` exactly when `|y| <= 2 sqrt(2)`. Each step
//! checks `dt pi n (sup|b1| + sup|b2|)`, a bound for the largest `|y|`,
//! against that margin and refuses to run outside it, since an unstable
//! linear step would amplify round-off exponentially.
//!
//! Sampled shears and band-limited streams are spectrally divergence-free,
//! so `L' 1 = 0` holds exactly and the mean is conserved to round-off.

use crate::error::{LabError, Result};
use crate::torus::bump::SourceSpec;
use crate::torus::spectral::SpectralField;
use crate::torus::{ScalarGridField, TorusGrid};
use crate::util::Vec2;
use crate::velocity::VelocityField;

use super::{
    contains_time, spectral_readings, trapezoid_weights, EnergyLedger, SolveConfig, Trajectory,
};

const RK4_STABILITY_SPAN: f64 = 2.0 * std::f64::consts::SQRT_2;

pub(crate) fn solve_forward(
    field: &VelocityField,
    rho_in: &ScalarGridField,
    config: &SolveConfig,
) -> Result<Trajectory> {
    let (states, ledger) = march_all(field, rho_in, config)?;
    let mut snapshots = Vec::with_capacity(config.output_times.len());
    let mut times = Vec::with_capacity(config.output_times.len());
    for (k, &t) in config.time_nodes.iter().enumerate() {
        if contains_time(&config.output_times, t) {
            snapshots.push(states[k].clone());
            times.push(t);
        }
    }
    Ok(Trajectory {
        times,
        snapshots,
        ledger,
        config: config.clone(),
        field: field.clone(),
    })
}

/// Forward and backward trajectories produced by one stepper and its exact
/// transpose; both carry snapshots at every time node.
pub(crate) fn adjoint_pair(
    field: &VelocityField,
    rho_in: &ScalarGridField,
    chi: &SourceSpec,
    config: &SolveConfig,
) -> Result<(Trajectory, Trajectory)> {
    let nodes = &config.time_nodes;
    let horizon = config.horizon();
    let grid = config.grid;
    let (states, fwd_ledger) = march_all(field, rho_in, config)?;
    let weights = trapezoid_weights(nodes);
    let (chi_lo, chi_hi) = chi.support_t();
    let chi_at = |t: f64| -> Option<ScalarGridField> {
        if t <= chi_lo || t >= chi_hi {
            return None;
        }
        Some(ScalarGridField::from_fn(grid, |x, y| {
            chi.value(t, Vec2::new(x, y))
        }))
    };

    let last = nodes.len() - 1;
    let mut ledger = EnergyLedger::new(true);
    let mut grad = 0.0;
    // Source work accumulates the same trapezoid rule the recursion injects.
    let mut work = 0.0;
    let mut theta = ScalarGridField::zeros(grid);
    if let Some(chi_field) = chi_at(nodes[last]) {
        add_scaled(&mut theta, weights[last], &chi_field);
    }
    work += weights[last] * chi.l2_space_sq_at(nodes[last]);
    let (l2, h1) = spectral_readings(&theta);
    ledger.push(horizon - nodes[last], l2, h1, 0.0, work);
    let mut rev_snapshots = vec![theta.clone()];

    for k in (0..last).rev() {
        let (a, b) = (nodes[k], nodes[k + 1]);
        let step = StepOperator::prepare(field, grid, config.nu, a, b)?;
        grad += step.apply(&mut theta, Direction::Transpose);
        if let Some(chi_field) = chi_at(nodes[k]) {
            add_scaled(&mut theta, weights[k], &chi_field);
        }
        work += weights[k] * chi.l2_space_sq_at(nodes[k]);
        let (l2, h1) = spectral_readings(&theta);
        if !l2.is_finite() {
            return Err(LabError::NonFinite {
                t: nodes[k],
                stage: "transpose step",
            });
        }
        ledger.push(horizon - nodes[k], l2, h1, grad, work);
        rev_snapshots.push(theta.clone());
    }
    rev_snapshots.reverse();

    let forward = Trajectory {
        times: nodes.clone(),
        snapshots: states,
        ledger: fwd_ledger,
        config: config.clone(),
        field: field.clone(),
    };
    let backward = Trajectory {
        times: nodes.clone(),
        snapshots: rev_snapshots,
        ledger,
        config: config.clone(),
        field: field.clone(),
    };
    Ok((forward, backward))
}

/// Marches every node, keeping the state at each one.
fn march_all(
    field: &VelocityField,
    rho_in: &ScalarGridField,
    config: &SolveConfig,
) -> Result<(Vec<ScalarGridField>, EnergyLedger)> {
    let nodes = &config.time_nodes;
    let mut states = Vec::with_capacity(nodes.len());
    let mut ledger = EnergyLedger::new(false);
    let (l2, h1) = spectral_readings(rho_in);
    ledger.push(nodes[0], l2, h1, 0.0, 0.0);
    states.push(rho_in.clone());
    let mut grad = 0.0;
    for k in 0..nodes.len() - 1 {
        let (a, b) = (nodes[k], nodes[k + 1]);
        let step = StepOperator::prepare(field, config.grid, config.nu, a, b)?;
        let mut state = states[k].clone();
        grad += step.apply(&mut state, Direction::Forward);
        let (l2, h1) = spectral_readings(&state);
        if !l2.is_finite() {
            return Err(LabError::NonFinite {
                t: b,
                stage: "spectral step",
            });
        }
        ledger.push(b, l2, h1, grad, 0.0);
        states.push(state);
    }
    Ok((states, ledger))
}

enum Direction {
    Forward,
    Transpose,
}

/// One prepared step: frozen velocity grids plus the step length, applied
/// forward or transposed.
struct StepOperator {
    b1: ScalarGridField,
    b2: ScalarGridField,
    dt: f64,
    nu: f64,
}

impl StepOperator {
    fn prepare(
        field: &VelocityField,
        grid: TorusGrid,
        nu: f64,
        a: f64,
        b: f64,
    ) -> Result<Self> {
        let dt = b - a;
        let t_mid = 0.5 * (a + b);
        let (b1, b2) = field.velocity_grids(t_mid, grid);
        let reach = b1.norm_linf() + b2.norm_linf();
        let span = dt * std::f64::consts::PI * grid.n() as f64 * reach;
        if span > RK4_STABILITY_SPAN * (1.0 + 1e-9) {
            return Err(LabError::CflViolation {
                t: a,
                dt,
                budget: RK4_STABILITY_SPAN / (std::f64::consts::PI * grid.n() as f64 * reach),
            });
        }
        Ok(StepOperator { b1, b2, dt, nu })
    }

    /// Applies the palindrome and returns the summed diffusion drops.
    fn apply(&self, state: &mut ScalarGridField, direction: Direction) -> f64 {
        let tau = 0.5 * self.dt;
        let mut drops = heat_multiply(state, self.nu, tau);
        let next = match direction {
            Direction::Forward => rk4(state, self.dt, |u| generator(u, &self.b1, &self.b2)),
            Direction::Transpose => {
                rk4(state, self.dt, |u| generator_transpose(u, &self.b1, &self.b2))
            }
        };
        *state = next;
        drops += heat_multiply(state, self.nu, tau);
        drops
    }
}

/// `-(b1 Dx u + b2 Dy u)` with spectral derivatives.
fn generator(u: &ScalarGridField, b1: &ScalarGridField, b2: &ScalarGridField) -> ScalarGridField {
    let spec = SpectralField::from_grid(u);
    let ux = spec.derivative_x().to_grid();
    let uy = spec.derivative_y().to_grid();
    let mut out = ux;
    let vals = out.values_mut();
    for (i, v) in vals.iter_mut().enumerate() {
        *v = -(b1.values()[i] * *v + b2.values()[i] * uy.values()[i]);
    }
    out
}

/// `Dx(b1 v) + Dy(b2 v)`, the grid transpose of [`generator`].
fn generator_transpose(
    v: &ScalarGridField,
    b1: &ScalarGridField,
    b2: &ScalarGridField,
) -> ScalarGridField {
    let mut w1 = v.clone();
    for (i, val) in w1.values_mut().iter_mut().enumerate() {
        *val *= b1.values()[i];
    }
    let mut w2 = v.clone();
    for (i, val) in w2.values_mut().iter_mut().enumerate() {
        *val *= b2.values()[i];
    }
    let mut s1 = SpectralField::from_grid(&w1).derivative_x();
    let s2 = SpectralField::from_grid(&w2).derivative_y();
    for (c, d) in s1.coeffs_mut().iter_mut().zip(s2.coeffs()) {
        *c += *d;
    }
    s1.to_grid()
}

/// Classical RK4 on the frozen linear generator; for linear `l` this is the
/// degree-four stability polynomial applied to the state.
fn rk4(
    u: &ScalarGridField,
    dt: f64,
    l: impl Fn(&ScalarGridField) -> ScalarGridField,
) -> ScalarGridField {
    let k1 = l(u);
    let mut stage = u.clone();
    add_scaled(&mut stage, 0.5 * dt, &k1);
    let k2 = l(&stage);
    stage = u.clone();
    add_scaled(&mut stage, 0.5 * dt, &k2);
    let k3 = l(&stage);
    stage = u.clone();
    add_scaled(&mut stage, dt, &k3);
    let k4 = l(&stage);
    let mut out = u.clone();
    add_scaled(&mut out, dt / 6.0, &k1);
    add_scaled(&mut out, dt / 3.0, &k2);
    add_scaled(&mut out, dt / 3.0, &k3);
    add_scaled(&mut out, dt / 6.0, &k4);
    out
}

fn add_scaled(out: &mut ScalarGridField, c: f64, other: &ScalarGridField) {
    for (o, v) in out.values_mut().iter_mut().zip(other.values()) {
        *o += c * v;
    }
}

/// Exact heat multiplier of duration `tau`; returns the measured energy drop.
fn heat_multiply(state: &mut ScalarGridField, nu: f64, tau: f64) -> f64 {
    if nu * tau == 0.0 {
        return 0.0;
    }
    let n = state.grid().n();
    let tp = 2.0 * std::f64::consts::PI;
    let row: Vec<f64> = (0..n)
        .map(|i| {
            let k = SpectralField::freq(n, i) as f64;
            (-nu * tp * tp * k * k * tau).exp()
        })
        .collect();
    let mut spec = SpectralField::from_grid(state);
    let before = spec.energy();
    let coeffs = spec.coeffs_mut();
    for j in 0..n {
        let fj = row[j];
        for i in 0..n {
            coeffs[j * n + i] *= fj * row[i];
        }
    }
    let after = spec.energy();
    let back = spec.to_grid();
    state.values_mut().copy_from_slice(back.values());
    before - after
}
