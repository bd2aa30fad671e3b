//! Density transport along characteristics.
//!
//! The transported density is represented exactly as the composition of the
//! initial density with the backward flow map of the divergence-free
//! velocity, so range preservation is structural rather than numerical. The
//! flow map is integrated with a fixed-substep fourth-order Runge-Kutta
//! scheme, optionally alongside the variational equation whose determinant
//! monitors the Liouville identity `det grad X = 1`.

use crate::model::{InitialDensity, Torus};
use crate::Error;

/// A smooth velocity field on the plane. Periodic fields evaluate anywhere
/// without wrapping; verification fields need not be periodic.
pub trait VelocityField {
    fn eval(&self, x: [f64; 2], t: f64) -> [f64; 2];
    /// `grad[i][j] = d v_i / d x_j`.
    fn grad(&self, x: [f64; 2], t: f64) -> [[f64; 2]; 2];
}

/// Velocity reconstructed from stored Galerkin coefficient snapshots,
/// piecewise linear in time between them.
pub struct VelocityTrajectory {
    basis: std::sync::Arc<crate::galerkin::VelocityBasis>,
    times: Vec<f64>,
    coeffs: Vec<nalgebra::DVector<f64>>,
}

impl VelocityTrajectory {
    pub fn new(basis: std::sync::Arc<crate::galerkin::VelocityBasis>) -> Self {
        Self { basis, times: Vec::new(), coeffs: Vec::new() }
    }

    pub fn push(&mut self, t: f64, coeffs: nalgebra::DVector<f64>) {
        if let Some(&last) = self.times.last() {
            assert!(t > last, "snapshots must be pushed in increasing time order");
        }
        self.times.push(t);
        self.coeffs.push(coeffs);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn basis(&self) -> &crate::galerkin::VelocityBasis {
        &self.basis
    }

    /// Linearly interpolated coefficients at time `t` (clamped to the stored
    /// range).
    pub fn coeffs_at(&self, t: f64) -> nalgebra::DVector<f64> {
        assert!(!self.times.is_empty(), "empty trajectory");
        if t <= self.times[0] {
            return self.coeffs[0].clone();
        }
        if t >= *self.times.last().unwrap() {
            return self.coeffs.last().unwrap().clone();
        }
        let idx = match self.times.binary_search_by(|probe| probe.partial_cmp(&t).unwrap()) {
            Ok(i) => return self.coeffs[i].clone(),
            Err(i) => i,
        };
        let (t0, t1) = (self.times[idx - 1], self.times[idx]);
        let w = (t - t0) / (t1 - t0);
        &self.coeffs[idx - 1] * (1.0 - w) + &self.coeffs[idx] * w
    }
}

impl VelocityField for VelocityTrajectory {
    fn eval(&self, x: [f64; 2], t: f64) -> [f64; 2] {
        let c = self.coeffs_at(t);
        self.basis.eval(&c, x)
    }

    fn grad(&self, x: [f64; 2], t: f64) -> [[f64; 2]; 2] {
        let c = self.coeffs_at(t);
        self.basis.grad(&c, x)
    }
}

/// Characteristic integrator with a fixed Runge-Kutta substep.
pub struct CharMap<'a, V: VelocityField + ?Sized> {
    velocity: &'a V,
    substep: f64,
}

impl<'a, V: VelocityField + ?Sized> CharMap<'a, V> {
    pub fn new(velocity: &'a V, substep: f64) -> Result<Self, Error> {
        if !(substep > 0.0) {
            return Err(Error::domain("characteristic substep must be positive"));
        }
        Ok(Self { velocity, substep })
    }

    /// Integrate `dX/ds = v(X, s)` from `X(t) = x` to time `s` (forward or
    /// backward). The path satisfies the group property up to integrator
    /// tolerance.
    pub fn flow(&self, x: [f64; 2], t: f64, s: f64) -> [f64; 2] {
        self.integrate(x, t, s, false).0
    }

    /// Flow map together with its spatial Jacobian, obtained by integrating
    /// the variational equation `dJ/ds = grad v(X, s) J` alongside the path.
    pub fn flow_with_jacobian(&self, x: [f64; 2], t: f64, s: f64) -> ([f64; 2], [[f64; 2]; 2]) {
        self.integrate(x, t, s, true)
    }

    /// Determinant of the flow-map Jacobian `det grad_x X(x, t; s)`; equal to
    /// 1 for divergence-free velocity by the Liouville identity.
    pub fn jacobian_det(&self, x: [f64; 2], t: f64, s: f64) -> f64 {
        let (_, j) = self.flow_with_jacobian(x, t, s);
        j[0][0] * j[1][1] - j[0][1] * j[1][0]
    }

    fn integrate(&self, x: [f64; 2], t: f64, s: f64, with_jacobian: bool) -> ([f64; 2], [[f64; 2]; 2]) {
        let mut pos = x;
        let mut jac = [[1.0, 0.0], [0.0, 1.0]];
        if s == t {
            return (pos, jac);
        }
        let span = s - t;
        let steps = (span.abs() / self.substep).ceil().max(1.0) as usize;
        let h = span / steps as f64;
        for k in 0..steps {
            let sigma = t + k as f64 * h;
            if with_jacobian {
                let (p, j) = rk4_step_with_jacobian(self.velocity, pos, jac, sigma, h);
                pos = p;
                jac = j;
            } else {
                pos = rk4_step(self.velocity, pos, sigma, h);
            }
        }
        (pos, jac)
    }
}

fn rk4_step<V: VelocityField + ?Sized>(v: &V, x: [f64; 2], t: f64, h: f64) -> [f64; 2] {
    let k1 = v.eval(x, t);
    let k2 = v.eval(add(x, scale(k1, 0.5 * h)), t + 0.5 * h);
    let k3 = v.eval(add(x, scale(k2, 0.5 * h)), t + 0.5 * h);
    let k4 = v.eval(add(x, scale(k3, h)), t + h);
    [
        x[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        x[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ]
}

type Mat2 = [[f64; 2]; 2];

fn rk4_step_with_jacobian<V: VelocityField + ?Sized>(
    v: &V,
    x: [f64; 2],
    jac: Mat2,
    t: f64,
    h: f64,
) -> ([f64; 2], Mat2) {
    let f = |p: [f64; 2], j: Mat2, s: f64| -> ([f64; 2], Mat2) { (v.eval(p, s), matmul(v.grad(p, s), j)) };
    let (k1, l1) = f(x, jac, t);
    let (k2, l2) = f(add(x, scale(k1, 0.5 * h)), mat_add(jac, mat_scale(l1, 0.5 * h)), t + 0.5 * h);
    let (k3, l3) = f(add(x, scale(k2, 0.5 * h)), mat_add(jac, mat_scale(l2, 0.5 * h)), t + 0.5 * h);
    let (k4, l4) = f(add(x, scale(k3, h)), mat_add(jac, mat_scale(l3, h)), t + h);
    let pos = [
        x[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        x[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ];
    let mut out = jac;
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] += h / 6.0 * (l1[i][j] + 2.0 * l2[i][j] + 2.0 * l3[i][j] + l4[i][j]);
        }
    }
    (pos, out)
}

fn add(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] + b[0], a[1] + b[1]]
}

fn scale(a: [f64; 2], c: f64) -> [f64; 2] {
    [a[0] * c, a[1] * c]
}

fn mat_add(a: Mat2, b: Mat2) -> Mat2 {
    [[a[0][0] + b[0][0], a[0][1] + b[0][1]], [a[1][0] + b[1][0], a[1][1] + b[1][1]]]
}

fn mat_scale(a: Mat2, c: f64) -> Mat2 {
    [[a[0][0] * c, a[0][1] * c], [a[1][0] * c, a[1][1] * c]]
}

fn matmul(a: Mat2, b: Mat2) -> Mat2 {
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

/// Density at `(x, t)`: the initial density evaluated at the backward foot
/// `X(x, t; 0)`. Composition preserves the range of the initial field
/// exactly.
pub fn density_at<V: VelocityField + ?Sized>(
    rho0: &InitialDensity,
    torus: &Torus,
    map: &CharMap<'_, V>,
    x: [f64; 2],
    t: f64,
) -> f64 {
    let foot = map.flow(x, t, 0.0);
    rho0.eval(torus.wrap(foot), torus)
}

/// `beta(rho(x, t))`: the renormalization property holds identically because
/// both evaluation orders compose the same flow map.
pub fn renormalized_density<V: VelocityField + ?Sized, B: Fn(f64) -> f64>(
    beta: B,
    rho0: &InitialDensity,
    torus: &Torus,
    map: &CharMap<'_, V>,
    x: [f64; 2],
    t: f64,
) -> f64 {
    beta(density_at(rho0, torus, map, x, t))
}
