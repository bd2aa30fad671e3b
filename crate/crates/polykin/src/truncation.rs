//! The smooth cutoff family used to truncate the stress and the drag term of
//! the Fokker-Planck equation, together with the relative-entropy function.
//!
//! The mother bump `Gamma` equals 1 on `[-1, 1]`, vanishes outside `(-2, 2)`,
//! and transitions through the standard `exp(-1/x)` partition. Scaling by the
//! level gives `Gamma_l(s) = Gamma(s / l)`; its primitive is the truncation
//! `T_l`, and `Lambda_l(s) = s Gamma_l(s)` truncates the drag nonlinearity.

use crate::numerics::{integrate_panels, smooth_step, smooth_step_integral};
use crate::Error;

/// Scaled cutoff family at a fixed level.
///
/// All evaluators accept negative arguments through the symmetry implied by
/// the even support of the mother bump: `gamma` is even, `trunc` and `lambda`
/// are odd (the Galerkin probability density is not sign-constrained, so the
/// truncations must act on negative excursions as well).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutoffFamily {
    level: u32,
}

impl CutoffFamily {
    pub fn new(level: u32) -> Result<Self, Error> {
        if level == 0 {
            return Err(Error::domain("cutoff level must be a positive integer"));
        }
        Ok(Self { level })
    }

    pub fn level(&self) -> f64 {
        f64::from(self.level)
    }

    /// Mother bump scaled to the level: 1 on `[-l, l]`, 0 outside `(-2l, 2l)`.
    pub fn gamma(&self, s: f64) -> f64 {
        let u = (s / self.level()).abs();
        if u <= 1.0 {
            1.0
        } else if u >= 2.0 {
            0.0
        } else {
            1.0 - smooth_step(u - 1.0)
        }
    }

    /// Truncation `T_l(s) = int_0^s Gamma_l`, evaluated in closed form through
    /// the cached primitive of the transition step. Identity on `[0, l]`,
    /// saturated at `1.5 l` beyond `2l`, odd in `s`.
    pub fn trunc(&self, s: f64) -> f64 {
        let l = self.level();
        let u = (s / l).abs();
        let t = if u <= 1.0 {
            u
        } else if u >= 2.0 {
            2.0 - smooth_step_integral(1.0)
        } else {
            u - smooth_step_integral(u - 1.0)
        };
        l * t * s.signum()
    }

    /// `Lambda_l(s) = s Gamma_l(s)`.
    pub fn lambda(&self, s: f64) -> f64 {
        s * self.gamma(s)
    }

    /// `T_{delta,l}(s) = int_0^s Lambda_l(t) / (t + delta) dt` for `s >= 0`.
    ///
    /// On `[0, l]` the integrand is `t / (t + delta)` and the primitive is
    /// closed-form; the transition region `[l, 2l]` is integrated with fixed
    /// Gauss panels (the integrand is smooth and bounded there).
    pub fn trunc_delta(&self, s: f64, delta: f64) -> Result<f64, Error> {
        if delta <= 0.0 {
            return Err(Error::domain("delta must be positive"));
        }
        if s < 0.0 {
            return Err(Error::domain("trunc_delta is defined for s >= 0"));
        }
        let l = self.level();
        let core = s.min(l);
        let mut value = core - delta * (1.0 + core / delta).ln();
        if s > l {
            let hi = s.min(2.0 * l);
            value += integrate_panels(|t| self.lambda(t) / (t + delta), l, hi, 16);
        }
        Ok(value)
    }
}

/// Relative-entropy integrand `F(s) = s log s + 1`, extended by continuity
/// with `F(0) = 1`. Convex, minimum `1 - 1/e` at `s = 1/e`, and `F(s) >= s`.
pub fn entropy(s: f64) -> Result<f64, Error> {
    if s < 0.0 {
        return Err(Error::domain("entropy is defined for s >= 0"));
    }
    if s == 0.0 {
        Ok(1.0)
    } else {
        Ok(s * s.ln() + 1.0)
    }
}
