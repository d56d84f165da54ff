//! Spatial mollification kernel.
//!
//! The kernel is the normalized tensor bump
//!
//! ```text
//! w(z) = psi(u1) psi(u2) / Z,   u_i = (z_i - 1/2) / 0.45,   Z = (0.45 I_psi)^2,
//! ```
//!
//! nonnegative, smooth, supported strictly inside the unit square `(0, 1)^2`
//! (concretely in `(0.05, 0.95)^2`), with integral one. The scaled family is
//! `w_d(z) = w(z/d) / d^2`, supported in `(0, d)^2`, so mollifying shifts mass
//! by strictly positive offsets: a one-sided smoothing.
//!
//! Convolutions are evaluated with a fixed 16-node Gauss-Legendre rule per
//! axis over the kernel support. The discrete weights are renormalized to sum
//! to one, which makes constants exact fixed points of the discrete
//! convolution and keeps mollified shear profiles mass-preserving; the
//! continuous normalization is independently checked at construction.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::torus::bump::{bump, BUMP_INTEGRAL};
use crate::util::{integrate_gl16, Vec2, GAUSS_LEGENDRE_16};

/// Center of the unscaled kernel support in each axis.
pub const KERNEL_CENTER: f64 = 0.5;

/// Half-width of the unscaled kernel support in each axis.
pub const KERNEL_RADIUS: f64 = 0.45;

/// Certified upper bound for `max |psi'|` over the profile support.
const BUMP_D1_SUP: f64 = 2.170357085711;

/// One-dimensional factor of the unscaled kernel on `(0, 1)`, normalized to
/// unit integral.
pub fn kernel_1d(z: f64) -> f64 {
    bump((z - KERNEL_CENTER) / KERNEL_RADIUS) / (KERNEL_RADIUS * BUMP_INTEGRAL)
}

/// Unscaled kernel on the unit square.
pub fn kernel(z1: f64, z2: f64) -> f64 {
    kernel_1d(z1) * kernel_1d(z2)
}

/// Mollification recipe at a fixed scale: the kernel plus its discrete
/// quadrature, ready to convolve velocity fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MollifierSpec {
    delta: f64,
    /// `(s_q, omega_q)`: quadrature nodes of the 1D kernel factor in kernel
    /// coordinates `s in (0, 1)`, weights normalized to sum to one.
    marginal: [(f64, f64); 16],
}

impl MollifierSpec {
    /// Builds the standard kernel at scale `delta in (0, 1)` and verifies the
    /// continuous normalization by composite quadrature.
    pub fn standard(delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(LabError::InvalidParameter {
                name: "delta",
                reason: format!("mollification scale must lie in (0, 1), got {delta}"),
            });
        }
        let mut marginal = [(0.0, 0.0); 16];
        let mut total = 0.0;
        for (slot, &(node, weight)) in marginal.iter_mut().zip(GAUSS_LEGENDRE_16.iter()) {
            let s = KERNEL_CENTER + KERNEL_RADIUS * node;
            let raw = weight * bump(node);
            *slot = (s, raw);
            total += raw;
        }
        for slot in marginal.iter_mut() {
            slot.1 /= total;
        }
        let continuous = integrate_gl16(0.0, 1.0, 32, kernel_1d);
        if (continuous - 1.0).abs() > 1e-10 {
            return Err(LabError::InvalidParameter {
                name: "mollifier",
                reason: format!("kernel normalization off by {:.3e}", continuous - 1.0),
            });
        }
        Ok(MollifierSpec { delta, marginal })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Scaled kernel `w_d(z) = w(z/d)/d^2`.
    pub fn kernel_scaled(&self, z: Vec2) -> f64 {
        kernel(z.x / self.delta, z.y / self.delta) / (self.delta * self.delta)
    }

    /// Certified upper bound for `sup |grad w_d| = sup |grad w| / d^3`.
    ///
    /// Componentwise `|d_i w| <= max|psi'| * max(psi) / (0.45 Z)`, and the
    /// Euclidean norm picks up at most sqrt(2).
    pub fn gradient_sup(&self) -> f64 {
        let z = (KERNEL_RADIUS * BUMP_INTEGRAL) * (KERNEL_RADIUS * BUMP_INTEGRAL);
        let unscaled = std::f64::consts::SQRT_2 * BUMP_D1_SUP / (KERNEL_RADIUS * z);
        unscaled / (self.delta * self.delta * self.delta)
    }

    /// Quadrature taps of the scaled 1D marginal: offsets `delta * s_q` with
    /// normalized weights. Convolving a shear profile needs only these.
    pub fn marginal_taps(&self) -> [(f64, f64); 16] {
        let mut taps = self.marginal;
        for t in taps.iter_mut() {
            t.0 *= self.delta;
        }
        taps
    }

    /// Full 256-node tensor rule for the scaled kernel: `(offset, weight)`
    /// with weights summing to one.
    pub fn quad_taps(&self) -> Vec<(Vec2, f64)> {
        let mut taps = Vec::with_capacity(256);
        for &(s1, w1) in self.marginal.iter() {
            for &(s2, w2) in self.marginal.iter() {
                taps.push((Vec2::new(self.delta * s1, self.delta * s2), w1 * w2));
            }
        }
        taps
    }

    /// First moment `sum omega_q s_q` of the marginal in kernel coordinates;
    /// close to 1/2 by symmetry. Offsets scale as `delta * moment1`.
    pub fn moment1(&self) -> f64 {
        self.marginal.iter().map(|&(s, w)| w * s).sum()
    }

    /// Second moment `sum omega_q s_q^2` of the marginal.
    pub fn moment2(&self) -> f64 {
        self.marginal.iter().map(|&(s, w)| w * s * s).sum()
    }
}
