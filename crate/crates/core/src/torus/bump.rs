//! Closed-form compactly supported bumps: the 1D profile, space-time sources,
//! and the two-sided family of test functions.
//!
//! Everything is a tensor product of the standard profile
//!
//! ```text
//! psi(s) = exp(1 - 1/(1 - s^2))   for |s| < 1,    psi(s) = 0 otherwise,
//! ```
//!
//! normalized so `psi(0) = 1`. With `u = 1 - s^2` the derivatives are
//!
//! ```text
//! psi'(s)  = psi(s) * (-2s) / u^2,
//! psi''(s) = psi(s) * (4s^2/u^4 - 2/u^2 - 8s^2/u^3),
//! ```
//!
//! all identically zero outside `|s| < 1`. A space-time bump is
//! `A * psi((t - t0)/r_t) * psi(d1/r_x) * psi(d2/r_x)` with `d_i` the signed
//! periodic displacement from the spatial center, so the support is a box in
//! time times a periodic square on the torus.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::util::{integrate_gl16, periodic_delta, Vec2};

/// Integral of the profile over its support, frozen from a converged
/// high-panel Gauss evaluation.
pub const BUMP_INTEGRAL: f64 = 1.206900322437876;

/// Integral of the squared profile over its support.
pub const BUMP_SQUARED_INTEGRAL: f64 = 0.983380812912726;

/// Profile value together with its first two derivatives.
///
/// Returns exact zeros outside the open support. Inside, the exponential is
/// evaluated first: once it underflows to zero the rational prefactors are
/// never formed, since they diverge near the boundary and `0 * inf` would
/// poison the result with NaN.
pub fn bump_all(s: f64) -> (f64, f64, f64) {
    if s.abs() >= 1.0 || !s.is_finite() {
        return (0.0, 0.0, 0.0);
    }
    let u = 1.0 - s * s;
    let value = (1.0 - 1.0 / u).exp();
    if value == 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let u2 = u * u;
    let d1 = value * (-2.0 * s) / u2;
    let d2 = value * (4.0 * s * s / (u2 * u2) - 2.0 / u2 - 8.0 * s * s / (u2 * u));
    (value, d1, d2)
}

/// Profile value alone.
pub fn bump(s: f64) -> f64 {
    bump_all(s).0
}

/// Smooth space-time bump `A psi((t-t0)/r_t) psi(d1/r_x) psi(d2/r_x)` with
/// closed-form value, time derivative, gradient and Laplacian.
///
/// This is the raw formula with no support constraints; [`SourceSpec`] and
/// [`TestFunctionSpec`] wrap it with the window invariants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeBump {
    pub center_t: f64,
    pub center: (f64, f64),
    pub radius_t: f64,
    pub radius_x: f64,
    pub amplitude: f64,
}

impl SpaceTimeBump {
    fn factors(&self, t: f64, x: Vec2) -> Option<(f64, f64, f64, f64, f64, f64, f64, f64, f64)> {
        let st = (t - self.center_t) / self.radius_t;
        let s1 = periodic_delta(self.center.0, x.x) / self.radius_x;
        let s2 = periodic_delta(self.center.1, x.y) / self.radius_x;
        if st.abs() >= 1.0 || s1.abs() >= 1.0 || s2.abs() >= 1.0 {
            return None;
        }
        let (pt, dpt, _) = bump_all(st);
        let (p1, dp1, ddp1) = bump_all(s1);
        let (p2, dp2, ddp2) = bump_all(s2);
        Some((pt, dpt, p1, dp1, ddp1, p2, dp2, ddp2, self.amplitude))
    }

    pub fn value(&self, t: f64, x: Vec2) -> f64 {
        match self.factors(t, x) {
            None => 0.0,
            Some((pt, _, p1, _, _, p2, _, _, a)) => a * pt * p1 * p2,
        }
    }

    pub fn time_derivative(&self, t: f64, x: Vec2) -> f64 {
        match self.factors(t, x) {
            None => 0.0,
            Some((_, dpt, p1, _, _, p2, _, _, a)) => a * dpt / self.radius_t * p1 * p2,
        }
    }

    pub fn gradient(&self, t: f64, x: Vec2) -> Vec2 {
        match self.factors(t, x) {
            None => Vec2::ZERO,
            Some((pt, _, p1, dp1, _, p2, dp2, _, a)) => Vec2::new(
                a * pt * dp1 / self.radius_x * p2,
                a * pt * p1 * dp2 / self.radius_x,
            ),
        }
    }

    pub fn laplacian(&self, t: f64, x: Vec2) -> f64 {
        match self.factors(t, x) {
            None => 0.0,
            Some((pt, _, p1, _, ddp1, p2, _, ddp2, a)) => {
                let rx2 = self.radius_x * self.radius_x;
                a * pt * (ddp1 * p2 + p1 * ddp2) / rx2
            }
        }
    }

    /// Time window `(t0 - r_t, t0 + r_t)` outside which the bump vanishes.
    pub fn support_t(&self) -> (f64, f64) {
        (self.center_t - self.radius_t, self.center_t + self.radius_t)
    }

    /// `int ||chi(s, .)||_{L_inf} ds` over all time: the spatial max is
    /// attained at the center, so this is `|A| r_t int psi`.
    pub fn sup_time_integral(&self) -> f64 {
        self.amplitude.abs() * self.radius_t * BUMP_INTEGRAL
    }

    /// Squared spatial L^2 norm at fixed time, from the tensor closed form
    /// `A^2 psi_t^2 (r_x int psi^2)^2`.
    pub fn l2_space_sq_at(&self, t: f64) -> f64 {
        let pt = bump((t - self.center_t) / self.radius_t);
        let spatial = self.radius_x * BUMP_SQUARED_INTEGRAL;
        self.amplitude * self.amplitude * pt * pt * spatial * spatial
    }

    /// `int_lo^hi int |chi|^2 dx ds`, evaluated by Gauss quadrature of the
    /// closed-form spatial norm over the clipped time window.
    pub fn l2_spacetime_sq(&self, lo: f64, hi: f64) -> f64 {
        let (a, b) = self.support_t();
        let lo = lo.max(a);
        let hi = hi.min(b);
        if hi <= lo {
            return 0.0;
        }
        integrate_gl16(lo, hi, 8, |s| self.l2_space_sq_at(s))
    }

    fn validate_shape(&self) -> Result<()> {
        if !(self.radius_t > 0.0) {
            return Err(LabError::InvalidParameter {
                name: "radius_t",
                reason: format!("must be positive, got {}", self.radius_t),
            });
        }
        if !(self.radius_x > 0.0 && self.radius_x < 0.5) {
            return Err(LabError::InvalidParameter {
                name: "radius_x",
                reason: format!("must lie in (0, 0.5), got {}", self.radius_x),
            });
        }
        if !self.amplitude.is_finite() || !self.center_t.is_finite() {
            return Err(LabError::InvalidParameter {
                name: "amplitude",
                reason: "non-finite bump parameter".into(),
            });
        }
        Ok(())
    }
}

/// Source term `chi`, compactly supported in the open slab `(0, T) x T^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    bump: SpaceTimeBump,
}

impl SourceSpec {
    /// Validates `0 < t0 - r_t` and `t0 + r_t < T`.
    pub fn new(
        center_t: f64,
        center: (f64, f64),
        radius_t: f64,
        radius_x: f64,
        amplitude: f64,
        horizon: f64,
    ) -> Result<Self> {
        let bump = SpaceTimeBump {
            center_t,
            center,
            radius_t,
            radius_x,
            amplitude,
        };
        bump.validate_shape()?;
        if !(center_t - radius_t > 0.0 && center_t + radius_t < horizon) {
            return Err(LabError::InvalidParameter {
                name: "source time window",
                reason: format!(
                    "support ({}, {}) must lie strictly inside (0, {horizon})",
                    center_t - radius_t,
                    center_t + radius_t
                ),
            });
        }
        Ok(SourceSpec { bump })
    }

    pub fn profile(&self) -> &SpaceTimeBump {
        &self.bump
    }

    pub fn value(&self, t: f64, x: Vec2) -> f64 {
        self.bump.value(t, x)
    }

    pub fn time_derivative(&self, t: f64, x: Vec2) -> f64 {
        self.bump.time_derivative(t, x)
    }

    pub fn gradient(&self, t: f64, x: Vec2) -> Vec2 {
        self.bump.gradient(t, x)
    }

    pub fn laplacian(&self, t: f64, x: Vec2) -> f64 {
        self.bump.laplacian(t, x)
    }

    pub fn support_t(&self) -> (f64, f64) {
        self.bump.support_t()
    }

    pub fn sup_time_integral(&self) -> f64 {
        self.bump.sup_time_integral()
    }

    pub fn l2_space_sq_at(&self, t: f64) -> f64 {
        self.bump.l2_space_sq_at(t)
    }

    pub fn l2_spacetime_sq(&self, lo: f64, hi: f64) -> f64 {
        self.bump.l2_spacetime_sq(lo, hi)
    }

    pub fn amplitude(&self) -> f64 {
        self.bump.amplitude
    }
}

/// Which endpoint of `[0, T]` a test function must avoid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TestSide {
    /// Support may reach or straddle `t = 0` but must exclude `t = T`.
    Forward,
    /// Support may reach `t = T` but must exclude `t = 0`.
    Backward,
}

/// Test function for the weak forms: a [`SpaceTimeBump`] plus the side flag
/// recording which endpoint of the time interval its support avoids.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestFunctionSpec {
    bump: SpaceTimeBump,
    side: TestSide,
}

impl TestFunctionSpec {
    pub fn new(
        side: TestSide,
        center_t: f64,
        center: (f64, f64),
        radius_t: f64,
        radius_x: f64,
        amplitude: f64,
        horizon: f64,
    ) -> Result<Self> {
        let bump = SpaceTimeBump {
            center_t,
            center,
            radius_t,
            radius_x,
            amplitude,
        };
        bump.validate_shape()?;
        let ok = match side {
            TestSide::Forward => center_t + radius_t < horizon,
            TestSide::Backward => center_t - radius_t > 0.0,
        };
        if !ok {
            return Err(LabError::InvalidParameter {
                name: "test time window",
                reason: format!(
                    "support ({}, {}) violates the {:?}-side convention on [0, {horizon}]",
                    center_t - radius_t,
                    center_t + radius_t,
                    side
                ),
            });
        }
        Ok(TestFunctionSpec { bump, side })
    }

    pub fn side(&self) -> TestSide {
        self.side
    }

    pub fn profile(&self) -> &SpaceTimeBump {
        &self.bump
    }

    pub fn value(&self, t: f64, x: Vec2) -> f64 {
        self.bump.value(t, x)
    }

    pub fn time_derivative(&self, t: f64, x: Vec2) -> f64 {
        self.bump.time_derivative(t, x)
    }

    pub fn gradient(&self, t: f64, x: Vec2) -> Vec2 {
        self.bump.gradient(t, x)
    }

    pub fn laplacian(&self, t: f64, x: Vec2) -> f64 {
        self.bump.laplacian(t, x)
    }

    pub fn support_t(&self) -> (f64, f64) {
        self.bump.support_t()
    }
}
