//! Discrete Fourier transforms and spectral calculus on the torus grid.
//!
//! Coefficients use the analysis normalization
//!
//! ```text
//! f_k = (1/N^2) sum_x f(x) e^{-2 pi i k.x},    f(x) = sum_k f_k e^{+2 pi i k.x},
//! ```
//!
//! with integer frequencies `k in [-N/2+1, N/2]` per axis. Under this scaling
//! Parseval reads `h^2 sum |f|^2 = sum_k |f_k|^2`, matching the grid norms in
//! the parent module. Transform plans are cached per grid size.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex;
use rustfft::{Fft, FftDirection, FftPlanner};

use super::{ScalarGridField, TorusGrid};

fn plan(n: usize, direction: FftDirection) -> Arc<dyn Fft<f64>> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, bool), Arc<dyn Fft<f64>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let key = (n, direction == FftDirection::Inverse);
    let mut map = cache.lock().unwrap();
    map.entry(key)
        .or_insert_with(|| FftPlanner::new().plan_fft(n, direction))
        .clone()
}

fn transpose(buf: &mut [Complex<f64>], n: usize) {
    for j in 0..n {
        for i in 0..j {
            buf.swap(j * n + i, i * n + j);
        }
    }
}

/// Transforms every length-`n` row of the buffer. Rows are independent, so
/// running them on the rayon pool changes nothing but wall time; results are
/// bit-identical to the serial path.
fn fft_rows(buf: &mut [Complex<f64>], n: usize, p: &Arc<dyn Fft<f64>>) {
    if n >= 256 {
        use rayon::prelude::*;
        buf.par_chunks_mut(n).for_each_init(
            || vec![Complex::new(0.0, 0.0); p.get_inplace_scratch_len()],
            |scratch, row| p.process_with_scratch(row, scratch),
        );
    } else {
        p.process(buf);
    }
}

/// Rows first (the contiguous axis), then columns via transposition.
fn fft2(buf: &mut [Complex<f64>], n: usize, direction: FftDirection) {
    let p = plan(n, direction);
    fft_rows(buf, n, &p);
    transpose(buf, n);
    fft_rows(buf, n, &p);
    transpose(buf, n);
}

/// Fourier coefficients of a grid field, stored with the same `(i fast, j
/// slow)` layout as the samples: entry `j*N + i` holds the mode
/// `(k1, k2) = (freq(i), freq(j))`.
#[derive(Debug, Clone)]
pub struct SpectralField {
    grid: TorusGrid,
    coeffs: Vec<Complex<f64>>,
}

impl SpectralField {
    /// Integer frequency of storage index `idx` on an N-point axis; the
    /// Nyquist index maps to `+N/2`.
    pub fn freq(n: usize, idx: usize) -> i64 {
        if idx <= n / 2 {
            idx as i64
        } else {
            idx as i64 - n as i64
        }
    }

    /// Forward transform of a sample field.
    pub fn from_grid(f: &ScalarGridField) -> Self {
        let n = f.grid().n();
        let mut coeffs: Vec<Complex<f64>> = f
            .values()
            .iter()
            .map(|&v| Complex::new(v, 0.0))
            .collect();
        fft2(&mut coeffs, n, FftDirection::Forward);
        let scale = 1.0 / (n as f64 * n as f64);
        for c in &mut coeffs {
            *c *= scale;
        }
        SpectralField {
            grid: f.grid(),
            coeffs,
        }
    }

    /// Inverse transform; the imaginary residue of a real-origin field is
    /// round-off and is dropped.
    pub fn to_grid(&self) -> ScalarGridField {
        let n = self.grid.n();
        let mut buf = self.coeffs.clone();
        fft2(&mut buf, n, FftDirection::Inverse);
        let values = buf.into_iter().map(|c| c.re).collect();
        ScalarGridField::from_values(self.grid, values).expect("coefficient count matches grid")
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn coeffs(&self) -> &[Complex<f64>] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex<f64>] {
        &mut self.coeffs
    }

    /// Mean of the underlying field (the zero mode).
    pub fn mean(&self) -> f64 {
        self.coeffs[0].re
    }

    /// Multiplies every coefficient by a real symbol `s(k1, k2)`.
    pub fn map_symbol(&mut self, mut s: impl FnMut(i64, i64) -> f64) {
        let n = self.grid.n();
        for j in 0..n {
            let k2 = Self::freq(n, j);
            for i in 0..n {
                let k1 = Self::freq(n, i);
                self.coeffs[j * n + i] *= s(k1, k2);
            }
        }
    }

    /// Multiplies every coefficient by a complex symbol `s(k1, k2)`.
    pub fn map_symbol_complex(&mut self, mut s: impl FnMut(i64, i64) -> Complex<f64>) {
        let n = self.grid.n();
        for j in 0..n {
            let k2 = Self::freq(n, j);
            for i in 0..n {
                let k1 = Self::freq(n, i);
                self.coeffs[j * n + i] *= s(k1, k2);
            }
        }
    }

    /// Spectral derivative along the first axis.
    ///
    /// The Nyquist column is zeroed: on a real field that mode carries no sign
    /// information for an odd symbol, and zeroing it keeps the operator
    /// skew-adjoint on the grid. (Same convention along the second axis.)
    pub fn derivative_x(&self) -> Self {
        let mut out = self.clone();
        let n = self.grid.n() as i64;
        out.map_symbol_complex(|k1, _| {
            if 2 * k1.abs() == n {
                Complex::new(0.0, 0.0)
            } else {
                Complex::new(0.0, 2.0 * std::f64::consts::PI * k1 as f64)
            }
        });
        out
    }

    /// Spectral derivative along the second axis.
    pub fn derivative_y(&self) -> Self {
        let mut out = self.clone();
        let n = self.grid.n() as i64;
        out.map_symbol_complex(|_, k2| {
            if 2 * k2.abs() == n {
                Complex::new(0.0, 0.0)
            } else {
                Complex::new(0.0, 2.0 * std::f64::consts::PI * k2 as f64)
            }
        });
        out
    }

    /// `sum_k |f_k|^2`; equals the squared grid L^2 norm by Parseval.
    pub fn energy(&self) -> f64 {
        let terms: Vec<f64> = self.coeffs.iter().map(|c| c.norm_sqr()).collect();
        self.grid.reduce(&terms)
    }

    /// `sum_k |2 pi k|^2 |f_k|^2`.
    pub fn h1_seminorm_sq(&self) -> f64 {
        let n = self.grid.n();
        let two_pi_sq = (2.0 * std::f64::consts::PI).powi(2);
        let mut terms = Vec::with_capacity(self.coeffs.len());
        for j in 0..n {
            let k2 = Self::freq(n, j) as f64;
            for i in 0..n {
                let k1 = Self::freq(n, i) as f64;
                terms.push(two_pi_sq * (k1 * k1 + k2 * k2) * self.coeffs[j * n + i].norm_sqr());
            }
        }
        self.grid.reduce(&terms)
    }
}

/// Forward transform, free-function form.
pub fn to_spectral(f: &ScalarGridField) -> SpectralField {
    SpectralField::from_grid(f)
}

/// Inverse transform, free-function form.
pub fn from_spectral(coeffs: &SpectralField) -> ScalarGridField {
    coeffs.to_grid()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;

    fn grid(n: usize) -> TorusGrid {
        TorusGrid::new(n).unwrap()
    }

    fn random_field(n: usize, seed: u64) -> ScalarGridField {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        ScalarGridField::from_fn(grid(n), |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn roundtrip_reproduces_input() {
        let f = random_field(32, 7);
        let back = from_spectral(&to_spectral(&f));
        for (a, b) in f.values().iter().zip(back.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn constant_field_has_only_the_zero_mode() {
        let f = ScalarGridField::constant(grid(16), 2.5);
        let s = to_spectral(&f);
        assert_relative_eq!(s.mean(), 2.5, max_relative = 1e-13);
        for (idx, c) in s.coeffs().iter().enumerate() {
            if idx == 0 {
                continue;
            }
            assert_abs_diff_eq!(c.norm(), 0.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn cosine_has_two_conjugate_modes() {
        let n = 32;
        let f = ScalarGridField::from_fn(grid(n), |x, _| (2.0 * PI * x).cos());
        let s = to_spectral(&f);
        for j in 0..n {
            for i in 0..n {
                let c = s.coeffs()[j * n + i];
                let expected = if j == 0 && (i == 1 || i == n - 1) {
                    0.5
                } else {
                    0.0
                };
                assert_abs_diff_eq!(c.re, expected, epsilon = 1e-13);
                assert_abs_diff_eq!(c.im, 0.0, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn derivative_of_sine_is_scaled_cosine() {
        let n = 64;
        let f = ScalarGridField::from_fn(grid(n), |x, _| (2.0 * PI * 3.0 * x).sin());
        let d = to_spectral(&f).derivative_x().to_grid();
        let expect =
            ScalarGridField::from_fn(grid(n), |x, _| 6.0 * PI * (2.0 * PI * 3.0 * x).cos());
        for (a, b) in d.values().iter().zip(expect.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn derivative_zeroes_the_nyquist_mode() {
        let n = 16;
        // cos(pi N x) alternates +1/-1 on samples: pure Nyquist content.
        let f = ScalarGridField::from_fn(grid(n), |x, _| (PI * n as f64 * x).cos());
        let d = to_spectral(&f).derivative_x().to_grid();
        assert_abs_diff_eq!(d.norm_linf(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn derivative_y_acts_on_second_axis_only() {
        let n = 32;
        let f = ScalarGridField::from_fn(grid(n), |x, y| {
            (2.0 * PI * x).cos() + (2.0 * PI * 2.0 * y).sin()
        });
        let d = to_spectral(&f).derivative_y().to_grid();
        let expect =
            ScalarGridField::from_fn(grid(n), |_, y| 4.0 * PI * (2.0 * PI * 2.0 * y).cos());
        for (a, b) in d.values().iter().zip(expect.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    proptest! {
        #[test]
        fn parseval_energy_matches_grid_norm(seed in any::<u64>(), nexp in 2usize..8) {
            let f = random_field(1 << nexp, seed);
            let e = to_spectral(&f).energy();
            let n2 = f.norm_l2().powi(2);
            prop_assert!((e - n2).abs() <= 1e-10 * n2.max(1e-30));
        }

        #[test]
        fn roundtrip_is_identity_on_random_fields(seed in any::<u64>(), nexp in 2usize..7) {
            let f = random_field(1 << nexp, seed);
            let back = from_spectral(&to_spectral(&f));
            let max_err = f.values().iter().zip(back.values())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            prop_assert!(max_err <= 1e-12);
        }
    }
}
