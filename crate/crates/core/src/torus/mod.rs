//! Periodic-torus discretization.
//!
//! The unit torus is sampled on a uniform N x N lattice with N a power of two,
//! samples at `x_i = i/N`. Powers of two keep the spacing `h = 1/N` exact in
//! floating point and align the lattice with dyadic cell boundaries, so
//! checkerboard patterns and slab-aligned shear fields are represented without
//! interpolation error.
//!
//! Norms follow the equal-weight (trigonometric) quadrature
//!
//! ```text
//! ||f||_{L^2}^2 = h^2 sum_{i,j} f_{ij}^2,    <f, g> = h^2 sum_{i,j} f_{ij} g_{ij},
//! ```
//!
//! which is exactly the continuum integral for trigonometric polynomials below
//! the Nyquist frequency. The H^1 seminorm is computed from the discrete
//! Fourier coefficients as `sum_k |2 pi k|^2 |f_k|^2`. Time integrals use the
//! trapezoidal rule on caller-supplied nodes; integrands are only piecewise
//! smooth in time (velocity slabs, source supports), so callers must place
//! nodes on every breakpoint.

pub mod bump;
pub mod io;
pub mod spectral;

use crate::error::{LabError, Result};
use crate::util::pairwise_sum;

/// Uniform periodic N x N grid on the unit torus.
///
/// Samples sit at `(i/N, j/N)`; each sample owns the cell of side `1/N`
/// centered on it. N must be a power of two and at least 4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct TorusGrid {
    n: usize,
}

impl TorusGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 4 || !n.is_power_of_two() {
            return Err(LabError::InvalidGridSize { n });
        }
        Ok(TorusGrid { n })
    }

    /// Cells per axis.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Grid spacing `1/N`, exact in binary floating point.
    pub fn spacing(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Total number of samples, `N^2`.
    pub fn cell_count(&self) -> usize {
        self.n * self.n
    }

    /// Storage index of the periodically wrapped sample `(i, j)`.
    ///
    /// `i` indexes the first coordinate, `j` the second; storage is row-major
    /// in `j` so a contiguous run holds one horizontal line.
    pub fn index(&self, i: i64, j: i64) -> usize {
        let n = self.n as i64;
        let iw = i.rem_euclid(n) as usize;
        let jw = j.rem_euclid(n) as usize;
        jw * self.n + iw
    }

    /// Coordinate of sample `i` along either axis.
    pub fn coord(&self, i: usize) -> f64 {
        i as f64 * self.spacing()
    }

    /// Both coordinates of sample `(i, j)`.
    pub fn point(&self, i: usize, j: usize) -> (f64, f64) {
        (self.coord(i), self.coord(j))
    }

    /// Sums with plain accumulation on small grids and pairwise association
    /// on large ones, where the O(n) round-off of a running sum would show up
    /// against the 1e-10 tolerances used throughout.
    pub(crate) fn reduce(&self, terms: &[f64]) -> f64 {
        if self.n >= 2048 {
            pairwise_sum(terms)
        } else {
            terms.iter().sum()
        }
    }
}

/// Scalar sample values on a [`TorusGrid`], indexed periodically.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGridField {
    grid: TorusGrid,
    values: Vec<f64>,
}

impl ScalarGridField {
    pub fn zeros(grid: TorusGrid) -> Self {
        ScalarGridField {
            grid,
            values: vec![0.0; grid.cell_count()],
        }
    }

    pub fn constant(grid: TorusGrid, c: f64) -> Self {
        ScalarGridField {
            grid,
            values: vec![c; grid.cell_count()],
        }
    }

    /// Samples `f(x1, x2)` at every grid point.
    pub fn from_fn(grid: TorusGrid, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let n = grid.n();
        let mut values = Vec::with_capacity(grid.cell_count());
        for j in 0..n {
            let x2 = grid.coord(j);
            for i in 0..n {
                values.push(f(grid.coord(i), x2));
            }
        }
        ScalarGridField { grid, values }
    }

    /// Wraps an existing value vector; the length must be `N^2`.
    pub fn from_values(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.cell_count() {
            return Err(LabError::InvalidParameter {
                name: "values",
                reason: format!(
                    "expected {} samples for N = {}, got {}",
                    grid.cell_count(),
                    grid.n(),
                    values.len()
                ),
            });
        }
        Ok(ScalarGridField { grid, values })
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Periodic sample access.
    pub fn get(&self, i: i64, j: i64) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    pub fn set(&mut self, i: i64, j: i64, v: f64) {
        let idx = self.grid.index(i, j);
        self.values[idx] = v;
    }

    /// Errors with the given time and stage label if any sample is NaN or
    /// infinite.
    pub fn check_finite(&self, t: f64, stage: &'static str) -> Result<()> {
        if self.values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(LabError::NonFinite { t, stage })
        }
    }

    /// Integral over the torus, `h^2 sum f`.
    pub fn mean(&self) -> f64 {
        self.grid.reduce(&self.values) * self.grid.spacing() * self.grid.spacing()
    }

    pub fn norm_l2(&self) -> f64 {
        norm_l2(self)
    }

    pub fn norm_linf(&self) -> f64 {
        norm_linf(self)
    }

    pub fn h1_seminorm_sq(&self) -> f64 {
        h1_seminorm_sq(self)
    }
}

/// Grid L^2 norm, `sqrt(h^2 sum f^2)`.
pub fn norm_l2(f: &ScalarGridField) -> f64 {
    let sq: Vec<f64> = f.values().iter().map(|v| v * v).collect();
    (f.grid().reduce(&sq).max(0.0)).sqrt() * f.grid().spacing()
}

/// Max norm, `max |f|`.
pub fn norm_linf(f: &ScalarGridField) -> f64 {
    f.values().iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Squared H^1 seminorm from the discrete Fourier coefficients,
/// `sum_k |2 pi k|^2 |f_k|^2`; exact for band-limited fields and invariant
/// under adding a constant.
pub fn h1_seminorm_sq(f: &ScalarGridField) -> f64 {
    spectral::SpectralField::from_grid(f).h1_seminorm_sq()
}

/// L^2 pairing `<f, g> = h^2 sum f g`; symmetric and bilinear.
pub fn pairing(f: &ScalarGridField, g: &ScalarGridField) -> Result<f64> {
    if f.grid() != g.grid() {
        return Err(LabError::GridMismatch {
            left: f.grid().n(),
            right: g.grid().n(),
        });
    }
    let prod: Vec<f64> = f
        .values()
        .iter()
        .zip(g.values())
        .map(|(a, b)| a * b)
        .collect();
    Ok(f.grid().reduce(&prod) * f.grid().spacing() * f.grid().spacing())
}

/// Trapezoidal integral of time samples over the node set.
///
/// Exact for integrands that are piecewise linear in time on these nodes;
/// solvers arrange for every slab and source-support boundary to be a node, so
/// the kinks of the true integrand always sit on quadrature points.
pub fn spacetime_quadrature(samples: &[f64], times: &[f64]) -> Result<f64> {
    if samples.len() != times.len() {
        return Err(LabError::InvalidParameter {
            name: "samples",
            reason: format!("{} samples vs {} time nodes", samples.len(), times.len()),
        });
    }
    if times.len() < 2 {
        return Err(LabError::InvalidParameter {
            name: "times",
            reason: "need at least two time nodes".into(),
        });
    }
    for (idx, w) in times.windows(2).enumerate() {
        if !(w[1] > w[0]) || !w[0].is_finite() || !w[1].is_finite() {
            return Err(LabError::UnsortedTimes { index: idx + 1 });
        }
    }
    let mut acc = 0.0;
    for k in 0..times.len() - 1 {
        acc += 0.5 * (samples[k] + samples[k + 1]) * (times[k + 1] - times[k]);
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn grid(n: usize) -> TorusGrid {
        TorusGrid::new(n).unwrap()
    }

    /// Reference checkerboard built directly from the sign formula, kept local
    /// so these tests do not depend on the velocity module.
    fn checkerboard_direct(g: TorusGrid, level: u32) -> ScalarGridField {
        let scale = (1u64 << level) as f64;
        ScalarGridField::from_fn(g, |x, y| {
            let cell = (x * scale).floor() as i64 + (y * scale).floor() as i64;
            if cell % 2 == 0 {
                1.0
            } else {
                -1.0
            }
        })
    }

    #[test]
    fn grid_rejects_bad_sizes() {
        for n in [0, 1, 2, 3, 5, 6, 12, 100] {
            assert!(TorusGrid::new(n).is_err(), "N = {n} should be rejected");
        }
        for n in [4, 8, 64, 512] {
            assert!(TorusGrid::new(n).is_ok());
        }
    }

    #[test]
    fn spacing_times_n_is_exactly_one() {
        for n in [4, 8, 16, 64, 256, 1024, 4096] {
            let g = grid(n);
            assert_eq!(g.spacing() * n as f64, 1.0);
        }
    }

    #[test]
    fn indexing_wraps_periodically() {
        let g = grid(8);
        assert_eq!(g.index(3, 5), g.index(3 + 8, 5));
        assert_eq!(g.index(3, 5), g.index(3, 5 - 8));
        assert_eq!(g.index(-1, -1), g.index(7, 7));
        let mut f = ScalarGridField::zeros(g);
        f.set(2, 3, 7.5);
        assert_eq!(f.get(2 + 16, 3 - 8), 7.5);
    }

    #[test]
    fn norm_l2_of_unit_constant_is_one() {
        for n in [4, 32, 128] {
            let f = ScalarGridField::constant(grid(n), 1.0);
            assert_eq!(f.norm_l2(), 1.0);
        }
    }

    #[test]
    fn norm_l2_of_checkerboard_is_one() {
        for level in 1..=3 {
            let f = checkerboard_direct(grid(64), level);
            assert_eq!(f.norm_l2(), 1.0);
        }
    }

    #[test]
    fn norm_l2_of_cosine_matches_closed_form() {
        // Integral of cos^2(2 pi x) is 1/2; equal-weight quadrature on a
        // uniform grid is exact for this trigonometric polynomial.
        let f = ScalarGridField::from_fn(grid(64), |x, _| (2.0 * PI * x).cos());
        assert_abs_diff_eq!(f.norm_l2(), 0.5f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn norm_linf_hits_the_grid_maximizer() {
        let zero = ScalarGridField::zeros(grid(16));
        assert_eq!(zero.norm_linf(), 0.0);
        let cb = checkerboard_direct(grid(16), 1);
        assert_eq!(cb.norm_linf(), 1.0);
        // x = 0 is a sample, so the max of 2 cos(2 pi x) is attained exactly.
        let f = ScalarGridField::from_fn(grid(64), |x, _| 2.0 * (2.0 * PI * x).cos());
        assert_abs_diff_eq!(f.norm_linf(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn h1_seminorm_of_constant_is_zero() {
        let f = ScalarGridField::constant(grid(32), 3.25);
        assert_abs_diff_eq!(f.h1_seminorm_sq(), 0.0, epsilon = 1e-20);
    }

    #[test]
    fn h1_seminorm_of_single_mode_matches_closed_form() {
        // cos(2 pi x) has coefficients 1/2 at k = (1,0) and (-1,0), so the
        // seminorm squared is (2 pi)^2 * (1/4 + 1/4) = 2 pi^2.
        let f = ScalarGridField::from_fn(grid(64), |x, _| (2.0 * PI * x).cos());
        assert_relative_eq!(f.h1_seminorm_sq(), 2.0 * PI * PI, max_relative = 1e-12);
    }

    #[test]
    fn h1_seminorm_adds_over_orthogonal_modes() {
        let g = grid(64);
        let a = ScalarGridField::from_fn(g, |x, _| (2.0 * PI * x).cos());
        let b = ScalarGridField::from_fn(g, |_, y| (2.0 * PI * 3.0 * y).sin());
        let sum = ScalarGridField::from_fn(g, |x, y| {
            (2.0 * PI * x).cos() + (2.0 * PI * 3.0 * y).sin()
        });
        assert_relative_eq!(
            sum.h1_seminorm_sq(),
            a.h1_seminorm_sq() + b.h1_seminorm_sq(),
            max_relative = 1e-10
        );
    }

    #[test]
    fn h1_seminorm_ignores_constant_shift() {
        let g = grid(32);
        let a = ScalarGridField::from_fn(g, |x, y| (2.0 * PI * x).cos() * (2.0 * PI * y).sin());
        let mut b = a.clone();
        for v in b.values_mut() {
            *v += 4.0;
        }
        assert_relative_eq!(a.h1_seminorm_sq(), b.h1_seminorm_sq(), max_relative = 1e-10);
    }

    #[test]
    fn pairing_checkerboard_against_constant_vanishes() {
        let g = grid(64);
        let one = ScalarGridField::constant(g, 1.0);
        for level in 1..=4 {
            let cb = checkerboard_direct(g, level);
            assert_abs_diff_eq!(pairing(&cb, &one).unwrap(), 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn distinct_checkerboard_levels_are_orthogonal() {
        let g = grid(64);
        for n in 1..=4u32 {
            for m in 1..=4u32 {
                if n == m {
                    continue;
                }
                let p = pairing(&checkerboard_direct(g, n), &checkerboard_direct(g, m)).unwrap();
                assert_abs_diff_eq!(p, 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn pairing_rejects_grid_mismatch() {
        let a = ScalarGridField::zeros(grid(8));
        let b = ScalarGridField::zeros(grid(16));
        assert!(matches!(
            pairing(&a, &b),
            Err(LabError::GridMismatch { .. })
        ));
    }

    #[test]
    fn trapezoid_is_exact_on_linear_data() {
        let times = [0.0, 0.5, 1.0];
        assert_eq!(
            spacetime_quadrature(&[2.0, 2.0, 2.0], &times).unwrap(),
            2.0
        );
        assert_eq!(
            spacetime_quadrature(&[0.0, 0.5, 1.0], &times).unwrap(),
            0.5
        );
    }

    #[test]
    fn trapezoid_on_t_squared_matches_third() {
        let m = 1025;
        let times: Vec<f64> = (0..m).map(|k| k as f64 / (m - 1) as f64).collect();
        let samples: Vec<f64> = times.iter().map(|t| t * t).collect();
        let got = spacetime_quadrature(&samples, &times).unwrap();
        assert_abs_diff_eq!(got, 1.0 / 3.0, epsilon = 1e-6);
    }

    #[test]
    fn trapezoid_rejects_unsorted_nodes() {
        let err = spacetime_quadrature(&[0.0, 1.0, 2.0], &[0.0, 0.7, 0.7]);
        assert!(matches!(err, Err(LabError::UnsortedTimes { index: 2 })));
    }

    proptest! {
        #[test]
        fn cauchy_schwarz_holds(seed in any::<u64>(), nexp in 2usize..6) {
            use rand::{Rng, SeedableRng};
            let n = 1 << nexp;
            let g = grid(n);
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
            let f = ScalarGridField::from_fn(g, |_, _| rng.gen_range(-1.0..1.0));
            let h = ScalarGridField::from_fn(g, |_, _| rng.gen_range(-1.0..1.0));
            let p = pairing(&f, &h).unwrap();
            let bound = f.norm_l2() * h.norm_l2();
            prop_assert!(p * p <= bound * bound * (1.0 + 1e-12));
        }

        #[test]
        fn pairing_with_self_is_norm_squared(seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let g = grid(32);
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
            let f = ScalarGridField::from_fn(g, |_, _| rng.gen_range(-2.0..2.0));
            let p = pairing(&f, &f).unwrap();
            prop_assert!((p - f.norm_l2().powi(2)).abs() <= 1e-12 * p.abs().max(1.0));
        }
    }
}
