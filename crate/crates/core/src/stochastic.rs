//! Particle estimators for the advection-diffusion problems.
//!
//! The grid solvers have an independent check: the solution of the forward
//! problem at a point is the average of the datum over stochastic
//! characteristics
//!
//! ```text
//! dX = b(s, X) ds + sqrt(2 nu) dW,
//! ```
//!
//! run from `(t, x)` down to time zero, and the backward dual value is the
//! averaged time integral of the source along the same process run toward the
//! horizon. Paths are Euler-Maruyama with steps aligned to the field's time
//! slabs, so the drift is smooth inside every step; the Brownian increment is
//! a planar Gaussian with per-coordinate variance exactly `2 nu dt`, wrapped
//! onto the torus. Walking the reversed time direction integrates the negated
//! field, exactly as the grid solvers do.
//!
//! Reproducibility: every particle owns stream `i` of a counter-based
//! generator seeded by the run's 64-bit seed, so results are independent of
//! the parallel schedule, and all reductions are pairwise sums. Estimates come
//! with the sample standard error; the incompressibility check flows a
//! stratified lattice cloud and scores endpoint occupancy with a chi-square
//! uniformity statistic.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{LabError, Result};
use crate::evolve::Datum;
use crate::torus::bump::SourceSpec;
use crate::util::{pairwise_sum, Vec2};
use crate::velocity::VelocityField;

/// Endpoints of a batch of stochastic characteristics.
#[derive(Debug, Clone)]
pub struct ParticleCloud {
    /// Final positions, wrapped to the unit square, in particle order.
    pub positions: Vec<Vec2>,
    pub seed: u64,
    /// Euler-Maruyama steps each path took.
    pub steps: usize,
    pub nu: f64,
    /// `(from, to)` in problem time; `from > to` means the walk ran backward.
    pub span: (f64, f64),
}

/// A Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct McEstimate {
    pub mean: f64,
    /// Sample standard deviation over `sqrt(samples)`.
    pub stderr: f64,
    pub samples: usize,
}

/// Chi-square endpoint-occupancy score for a flowed lattice cloud.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct UniformityReport {
    pub statistic: f64,
    pub dof: usize,
    /// 99.9% quantile of the chi-square law with `dof` degrees of freedom.
    pub threshold: f64,
    pub passes: bool,
    pub samples: usize,
}

const MIN_ESTIMATE_SAMPLES: usize = 100;

/// Runs `m` independent paths from `start` at time `from` to time `to`.
pub fn simulate_flow(
    field: &VelocityField,
    nu: f64,
    from: f64,
    to: f64,
    start: Vec2,
    m: usize,
    seed: u64,
    dt_sde: f64,
) -> Result<ParticleCloud> {
    check_nu(nu)?;
    if m == 0 {
        return Err(LabError::InsufficientSamples { m, min: 1 });
    }
    let nodes = slab_partition(field, from.min(to), from.max(to), dt_sde)?;
    let backward = from > to;
    let positions = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut rng = particle_rng(seed, i);
            walk(field, nu, &nodes, backward, start, &mut rng, |_, _| {})
        })
        .collect();
    Ok(ParticleCloud {
        positions,
        seed,
        steps: nodes.len() - 1,
        nu,
        span: (from, to),
    })
}

/// Pointwise forward solution estimate: the datum averaged over
/// characteristic endpoints at time zero.
pub fn estimate_forward(
    field: &VelocityField,
    datum: &Datum,
    nu: f64,
    t: f64,
    x: Vec2,
    m: usize,
    seed: u64,
    dt_sde: f64,
) -> Result<McEstimate> {
    check_nu(nu)?;
    check_samples(m)?;
    if !(t > 0.0) || !t.is_finite() {
        return Err(LabError::InvalidParameter {
            name: "t",
            reason: format!("evaluation time must be positive, got {t}"),
        });
    }
    let nodes = slab_partition(field, 0.0, t, dt_sde)?;
    let values: Vec<f64> = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut rng = particle_rng(seed, i);
            let end = walk(field, nu, &nodes, true, x, &mut rng, |_, _| {});
            datum.eval(end)
        })
        .collect();
    Ok(reduce(&values))
}

/// Pointwise backward dual estimate: the source integrated along each path
/// from `t` to the horizon by the trapezoid rule on the walk's own nodes,
/// then averaged.
pub fn estimate_backward(
    field: &VelocityField,
    chi: &SourceSpec,
    nu: f64,
    t: f64,
    horizon: f64,
    x: Vec2,
    m: usize,
    seed: u64,
    dt_sde: f64,
) -> Result<McEstimate> {
    check_nu(nu)?;
    check_samples(m)?;
    if !(0.0..=horizon).contains(&t) || !horizon.is_finite() {
        return Err(LabError::InvalidParameter {
            name: "t",
            reason: format!("need 0 <= t <= horizon, got t = {t}, horizon = {horizon}"),
        });
    }
    let nodes = slab_partition(field, t, horizon, dt_sde)?;
    let values: Vec<f64> = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut rng = particle_rng(seed, i);
            let mut acc = 0.0;
            let mut prev = chi.value(nodes[0], x);
            walk(field, nu, &nodes, false, x, &mut rng, |q, pos| {
                let cur = chi.value(nodes[q], pos);
                acc += 0.5 * (nodes[q] - nodes[q - 1]) * (prev + cur);
                prev = cur;
            });
            acc
        })
        .collect();
    Ok(reduce(&values))
}

/// Flows a stratified lattice cloud over `span` and scores endpoint occupancy
/// on a `bins x bins` partition against the uniform law.
///
/// The cloud is the `side x side` lattice with `side = floor(sqrt(m))`;
/// measure preservation of the flow keeps its occupancy uniform in law, and
/// exactly uniform for noiseless lattice-preserving flows.
pub fn incompressibility_check(
    field: &VelocityField,
    nu: f64,
    span: (f64, f64),
    m: usize,
    seed: u64,
    bins: usize,
    dt_sde: f64,
) -> Result<UniformityReport> {
    check_nu(nu)?;
    if bins < 2 {
        return Err(LabError::InvalidParameter {
            name: "bins",
            reason: "need at least a 2 x 2 partition".into(),
        });
    }
    let side = (m as f64).sqrt().floor() as usize;
    let samples = side * side;
    let min = 10 * bins * bins;
    if samples < min {
        return Err(LabError::InsufficientSamples { m: samples, min });
    }
    let nodes = slab_partition(field, span.0.min(span.1), span.0.max(span.1), dt_sde)?;
    let backward = span.0 > span.1;
    let endpoints: Vec<Vec2> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let start = Vec2::new(
                (i % side) as f64 / side as f64,
                (i / side) as f64 / side as f64,
            );
            let mut rng = particle_rng(seed, i);
            walk(field, nu, &nodes, backward, start, &mut rng, |_, _| {})
        })
        .collect();
    let mut counts = vec![0usize; bins * bins];
    for p in &endpoints {
        let bi = ((p.x * bins as f64) as usize).min(bins - 1);
        let bj = ((p.y * bins as f64) as usize).min(bins - 1);
        counts[bj * bins + bi] += 1;
    }
    let expected = samples as f64 / (bins * bins) as f64;
    let terms: Vec<f64> = counts
        .iter()
        .map(|&c| {
            let d = c as f64 - expected;
            d * d / expected
        })
        .collect();
    let statistic = pairwise_sum(&terms);
    let dof = bins * bins - 1;
    let threshold = ChiSquared::new(dof as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.999);
    Ok(UniformityReport {
        statistic,
        dof,
        threshold,
        passes: statistic < threshold,
        samples,
    })
}

fn check_nu(nu: f64) -> Result<()> {
    if !(nu >= 0.0) || !nu.is_finite() {
        return Err(LabError::InvalidParameter {
            name: "nu",
            reason: format!("diffusivity must be finite and nonnegative, got {nu}"),
        });
    }
    Ok(())
}

fn check_samples(m: usize) -> Result<()> {
    if m < MIN_ESTIMATE_SAMPLES {
        return Err(LabError::InsufficientSamples {
            m,
            min: MIN_ESTIMATE_SAMPLES,
        });
    }
    Ok(())
}

fn particle_rng(seed: u64, index: usize) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Ascending step nodes on `[lo, hi]` whose pieces are the field's slabs,
/// each tiled exactly by `dt`.
fn slab_partition(field: &VelocityField, lo: f64, hi: f64, dt: f64) -> Result<Vec<f64>> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(LabError::InvalidParameter {
            name: "dt_sde",
            reason: format!("step must be positive and finite, got {dt}"),
        });
    }
    if lo == hi {
        return Ok(vec![lo]);
    }
    let mut pieces = vec![lo, hi];
    pieces.extend(field.breakpoints(lo, hi));
    pieces.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    pieces.dedup();
    let mut nodes = vec![lo];
    for w in pieces.windows(2) {
        let len = w[1] - w[0];
        let ratio = len / dt;
        let steps = ratio.round();
        if steps < 1.0 || (ratio - steps).abs() > 1e-9 * steps {
            return Err(LabError::SlabMisaligned {
                dt,
                lo: w[0],
                hi: w[1],
            });
        }
        let k = steps as usize;
        for q in 1..k {
            nodes.push(w[0] + len * (q as f64 / k as f64));
        }
        nodes.push(w[1]);
    }
    nodes.dedup();
    Ok(nodes)
}

/// One Euler-Maruyama path over ascending `nodes`, walked forward or
/// backward; calls `visit(q, pos)` after arriving at `nodes[q]` (forward
/// walks only). Drift is frozen at the step's time midpoint, interior to its
/// slab, so piecewise-steady fields see no boundary ambiguity.
fn walk(
    field: &VelocityField,
    nu: f64,
    nodes: &[f64],
    backward: bool,
    start: Vec2,
    rng: &mut ChaCha12Rng,
    mut visit: impl FnMut(usize, Vec2),
) -> Vec2 {
    let mut pos = start.wrap();
    let steps = nodes.len() - 1;
    for step in 0..steps {
        let (u, w) = if backward {
            (nodes[steps - step], nodes[steps - step - 1])
        } else {
            (nodes[step], nodes[step + 1])
        };
        let v = field.eval_velocity(0.5 * (u + w), pos);
        let dt = w - u;
        let mut dx = dt * v.x;
        let mut dy = dt * v.y;
        if nu > 0.0 {
            let scale = (2.0 * nu * dt.abs()).sqrt();
            let g1: f64 = rng.sample(StandardNormal);
            let g2: f64 = rng.sample(StandardNormal);
            dx += scale * g1;
            dy += scale * g2;
        }
        pos = Vec2::new(pos.x + dx, pos.y + dy).wrap();
        if !backward {
            visit(step + 1, pos);
        }
    }
    pos
}

fn reduce(values: &[f64]) -> McEstimate {
    let m = values.len();
    let mean = pairwise_sum(values) / m as f64;
    let devs: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&devs) / (m as f64 - 1.0);
    McEstimate {
        mean,
        stderr: (var / m as f64).sqrt(),
        samples: m,
    }
}
