//! Small numeric helpers: compensated reductions, periodic wrapping and
//! Gauss-Legendre quadrature nodes shared by the mollifier and the source
//! pairings.

/// Sum with pairwise (cascade) association.
///
/// Error grows like O(log n) in ulps instead of O(n) for naive left-to-right
/// accumulation, which matters for the 2^18-term grid reductions at N = 512.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BASE: usize = 64;
    if values.len() <= BASE {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Map a coordinate to the fundamental domain [0, 1).
///
/// `rem_euclid` alone can return exactly 1.0 when the argument is a tiny
/// negative number (rounding in the addition), so the result is folded once
/// more.
pub fn wrap_unit(x: f64) -> f64 {
    let y = x.rem_euclid(1.0);
    if y >= 1.0 {
        y - 1.0
    } else {
        y
    }
}

/// Signed periodic displacement from `a` to `b` in (-1/2, 1/2].
pub fn periodic_delta(a: f64, b: f64) -> f64 {
    let mut d = b - a - (b - a).round();
    if d <= -0.5 {
        d += 1.0;
    }
    d
}

/// Periodic distance on the unit circle.
pub fn periodic_dist(a: f64, b: f64) -> f64 {
    periodic_delta(a, b).abs()
}

/// Point or displacement in the plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn wrap(self) -> Self {
        Vec2::new(wrap_unit(self.x), wrap_unit(self.y))
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl std::ops::Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl std::ops::Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl std::ops::Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

/// 16-point Gauss-Legendre rule on [-1, 1]: `(node, weight)` pairs.
///
/// Nodes are listed in increasing order; weights sum to 2 up to round-off.
pub const GAUSS_LEGENDRE_16: [(f64, f64); 16] = [
    (-0.9894009349916499, 0.027152459411754096),
    (-0.9445750230732326, 0.062253523938647894),
    (-0.8656312023878318, 0.09515851168249279),
    (-0.755404408355003, 0.12462897125553388),
    (-0.6178762444026438, 0.14959598881657674),
    (-0.45801677765722737, 0.16915651939500254),
    (-0.2816035507792589, 0.18260341504492358),
    (-0.09501250983763744, 0.1894506104550685),
    (0.09501250983763744, 0.1894506104550685),
    (0.2816035507792589, 0.18260341504492358),
    (0.45801677765722737, 0.16915651939500254),
    (0.6178762444026438, 0.14959598881657674),
    (0.755404408355003, 0.12462897125553388),
    (0.8656312023878318, 0.09515851168249279),
    (0.9445750230732326, 0.062253523938647894),
    (0.9894009349916499, 0.027152459411754096),
];

/// 2-point Gauss-Legendre rule on [-1, 1].
pub const GAUSS_LEGENDRE_2: [(f64, f64); 2] = [
    (-0.5773502691896258, 1.0),
    (0.5773502691896258, 1.0),
];

/// Integrate `f` over `[lo, hi]` with a composite 16-point Gauss rule.
pub fn integrate_gl16(lo: f64, hi: f64, panels: usize, mut f: impl FnMut(f64) -> f64) -> f64 {
    assert!(panels > 0 && hi >= lo);
    let width = (hi - lo) / panels as f64;
    let mut acc = 0.0;
    for p in 0..panels {
        let a = lo + p as f64 * width;
        let mid = a + 0.5 * width;
        let half = 0.5 * width;
        for &(node, weight) in GAUSS_LEGENDRE_16.iter() {
            acc += weight * half * f(mid + half * node);
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn pairwise_sum_matches_exact_for_ones() {
        let v = vec![1.0; 100_000];
        assert_eq!(pairwise_sum(&v), 100_000.0);
    }

    #[test]
    fn pairwise_sum_beats_naive_on_alternating_magnitudes() {
        // 2^20 terms of t^2 sampled on a uniform grid; compare against the
        // closed form computed in extended precision via Kahan.
        let n = 1 << 20;
        let v: Vec<f64> = (0..n).map(|i| (i as f64 / n as f64).sin()).collect();
        let mut kahan = 0.0f64;
        let mut c = 0.0f64;
        for &x in &v {
            let y = x - c;
            let t = kahan + y;
            c = (t - kahan) - y;
            kahan = t;
        }
        let pw = pairwise_sum(&v);
        assert_relative_eq!(pw, kahan, max_relative = 1e-13);
    }

    #[test]
    fn wrap_unit_stays_in_range() {
        for &x in &[-3.25, -1.0, -1e-18, 0.0, 0.75, 1.0, 7.5, 1.0 - 1e-17] {
            let y = wrap_unit(x);
            assert!((0.0..1.0).contains(&y), "wrap({x}) = {y}");
        }
        assert_eq!(wrap_unit(-0.25), 0.75);
        assert_eq!(wrap_unit(2.5), 0.5);
    }

    #[test]
    fn periodic_distance_is_symmetric_and_short() {
        assert_relative_eq!(periodic_dist(0.1, 0.9), 0.2, max_relative = 1e-15);
        assert_relative_eq!(periodic_dist(0.9, 0.1), 0.2, max_relative = 1e-15);
        assert_eq!(periodic_dist(0.5, 0.5), 0.0);
        assert_relative_eq!(periodic_delta(0.9, 0.1), 0.2, max_relative = 1e-15);
        assert_relative_eq!(periodic_delta(0.1, 0.9), -0.2, max_relative = 1e-15);
    }

    #[test]
    fn gl16_is_exact_on_high_degree_polynomials() {
        // Degree 31 is the exactness limit of the 16-point rule.
        let exact = 2.0 / 31.0; // integral of x^30 over [-1, 1]
        let got = integrate_gl16(-1.0, 1.0, 1, |x| x.powi(30));
        assert_relative_eq!(got, exact, max_relative = 1e-13);
    }

    #[test]
    fn gl16_weights_sum_to_two() {
        let s: f64 = GAUSS_LEGENDRE_16.iter().map(|&(_, w)| w).sum();
        assert_relative_eq!(s, 2.0, max_relative = 1e-15);
    }

    #[test]
    fn composite_gl_converges_on_nonsmooth_integrand() {
        // the square-root kink at 0 limits the rate, so the tolerance is
        // coarser than for smooth integrands
        let got = integrate_gl16(0.0, 1.0, 64, |x| x.sqrt());
        assert_relative_eq!(got, 2.0 / 3.0, max_relative = 1e-6);
        let finer = integrate_gl16(0.0, 1.0, 256, |x| x.sqrt());
        assert!((finer - 2.0 / 3.0).abs() < (got - 2.0 / 3.0).abs());
    }
}
