//! Spectral Galerkin bases on the periodic torus and assembly of the
//! time-dependent linear systems.
//!
//! Velocity modes are realified divergence-free Fourier modes: for each
//! canonical wavevector `k` the polarization `k-perp / |k|` times cosine and
//! sine, orthonormal in `L^2`. The configuration-density basis is the tensor
//! of scalar trigonometric factors with the weighted-orthonormal
//! configuration polynomials, so the weighted mass matrix factorizes and the
//! constant mode is present and first.
//!
//! The velocity subsystem is assembled in the non-conservative fixed-point
//! form `M(t) dc/dt = A(t) c + B(t)`. The configuration subsystem is kept in
//! conservative form `d/dt (N(t) d) = P(t) d + R(t)`, whose constant-mode row
//! vanishes identically: the weighted mass `int M^m zeta(rho) psi-hat` is
//! conserved exactly by any consistent one-step integrator.

use nalgebra::{DMatrix, DVector};

use crate::confspace::{ConfBasis, ConfQuadrature};
use crate::model::{RouseSystem, Torus};
use crate::truncation::CutoffFamily;
use crate::Error;

/// Uniform tensor grid on the torus with equal (trapezoid) weights.
pub struct SpatialGrid {
    pub torus: Torus,
    pub n: usize,
    pub points: Vec<[f64; 2]>,
    pub weight: f64,
}

impl SpatialGrid {
    pub fn new(torus: Torus, n: usize) -> Result<Self, Error> {
        if n < 2 {
            return Err(Error::config("spatial grid needs at least 2 points per direction"));
        }
        let mut points = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                points.push([
                    torus.lengths[0] * i as f64 / n as f64,
                    torus.lengths[1] * j as f64 / n as f64,
                ]);
            }
        }
        let weight = torus.volume() / (n * n) as f64;
        Ok(Self { torus, n, points, weight })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Trig {
    Cos,
    Sin,
}

/// Canonical wavevector enumeration shared by both bases: integer vectors
/// with `n1 > 0` or (`n1 == 0` and `n2 > 0`), ordered by `|k|^2` (then
/// lexicographically), which is also the deterministic mode ordering.
fn canonical_wavevectors(torus: &Torus, cap: i32) -> Vec<[i32; 2]> {
    let mut vs = Vec::new();
    for n1 in 0..=cap {
        for n2 in -cap..=cap {
            if n1 == 0 && n2 <= 0 {
                continue;
            }
            vs.push([n1, n2]);
        }
    }
    let k2 = |v: &[i32; 2]| -> f64 {
        let kx = std::f64::consts::TAU * v[0] as f64 / torus.lengths[0];
        let ky = std::f64::consts::TAU * v[1] as f64 / torus.lengths[1];
        kx * kx + ky * ky
    };
    vs.sort_by(|a, b| {
        k2(a).partial_cmp(&k2(b)).unwrap().then(a[0].cmp(&b[0])).then(a[1].cmp(&b[1]))
    });
    vs
}

const WAVEVECTOR_CAP: i32 = 12;

#[derive(Debug, Clone, Copy)]
struct VMode {
    n: [i32; 2],
    k: [f64; 2],
    dir: [f64; 2],
    trig: Trig,
    norm: f64,
}

/// Divergence-free trigonometric velocity basis, orthonormal in `L^2`.
pub struct VelocityBasis {
    torus: Torus,
    modes: Vec<VMode>,
}

impl VelocityBasis {
    pub fn new(torus: Torus, count: usize) -> Result<Self, Error> {
        let vectors = canonical_wavevectors(&torus, WAVEVECTOR_CAP);
        let capacity = 2 * vectors.len();
        if count > capacity {
            return Err(Error::config(format!(
                "requested {count} velocity modes but the wavevector shells provide only {capacity}"
            )));
        }
        let norm = (2.0 / torus.volume()).sqrt();
        let mut modes = Vec::with_capacity(count);
        'outer: for v in vectors {
            let k = [
                std::f64::consts::TAU * v[0] as f64 / torus.lengths[0],
                std::f64::consts::TAU * v[1] as f64 / torus.lengths[1],
            ];
            let mag = (k[0] * k[0] + k[1] * k[1]).sqrt();
            let dir = [-k[1] / mag, k[0] / mag];
            for trig in [Trig::Cos, Trig::Sin] {
                if modes.len() == count {
                    break 'outer;
                }
                modes.push(VMode { n: v, k, dir, trig, norm });
            }
        }
        Ok(Self { torus, modes })
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn torus(&self) -> &Torus {
        &self.torus
    }

    pub fn wavevector(&self, i: usize) -> [i32; 2] {
        self.modes[i].n
    }

    /// Largest integer wavenumber component over the selected modes.
    pub fn max_wavenumber(&self) -> i32 {
        self.modes.iter().map(|m| m.n[0].abs().max(m.n[1].abs())).max().unwrap_or(0)
    }

    pub fn eval_mode(&self, i: usize, x: [f64; 2]) -> [f64; 2] {
        let m = &self.modes[i];
        let phase = m.k[0] * x[0] + m.k[1] * x[1];
        let t = match m.trig {
            Trig::Cos => phase.cos(),
            Trig::Sin => phase.sin(),
        };
        [m.norm * m.dir[0] * t, m.norm * m.dir[1] * t]
    }

    /// `grad[i][j] = d w_i / d x_j` of one mode.
    pub fn grad_mode(&self, i: usize, x: [f64; 2]) -> [[f64; 2]; 2] {
        let m = &self.modes[i];
        let phase = m.k[0] * x[0] + m.k[1] * x[1];
        let dt = match m.trig {
            Trig::Cos => -phase.sin(),
            Trig::Sin => phase.cos(),
        };
        let mut g = [[0.0; 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                g[a][b] = m.norm * m.dir[a] * m.k[b] * dt;
            }
        }
        g
    }

    pub fn eval(&self, coeffs: &DVector<f64>, x: [f64; 2]) -> [f64; 2] {
        let mut v = [0.0; 2];
        for (i, &c) in coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let w = self.eval_mode(i, x);
            v[0] += c * w[0];
            v[1] += c * w[1];
        }
        v
    }

    pub fn grad(&self, coeffs: &DVector<f64>, x: [f64; 2]) -> [[f64; 2]; 2] {
        let mut g = [[0.0; 2]; 2];
        for (i, &c) in coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let gm = self.grad_mode(i, x);
            for a in 0..2 {
                for b in 0..2 {
                    g[a][b] += c * gm[a][b];
                }
            }
        }
        g
    }

    pub fn cache_on(&self, grid: &SpatialGrid) -> VelocityGridCache {
        let g = grid.len();
        let mut values = Vec::with_capacity(self.len() * g);
        let mut grads = Vec::with_capacity(self.len() * g);
        for i in 0..self.len() {
            for p in &grid.points {
                values.push(self.eval_mode(i, *p));
                grads.push(self.grad_mode(i, *p));
            }
        }
        VelocityGridCache { modes: self.len(), values, grads }
    }
}

/// Mode values and gradients tabulated on a grid, mode-major.
pub struct VelocityGridCache {
    pub modes: usize,
    pub values: Vec<[f64; 2]>,
    pub grads: Vec<[[f64; 2]; 2]>,
}

impl VelocityGridCache {
    pub fn value(&self, mode: usize, g: usize, points: usize) -> [f64; 2] {
        self.values[mode * points + g]
    }

    /// Velocity field values on the grid from coefficients.
    pub fn field(&self, coeffs: &DVector<f64>, points: usize) -> Vec<[f64; 2]> {
        let mut out = vec![[0.0; 2]; points];
        for i in 0..self.modes {
            let c = coeffs[i];
            if c == 0.0 {
                continue;
            }
            for g in 0..points {
                let w = self.values[i * points + g];
                out[g][0] += c * w[0];
                out[g][1] += c * w[1];
            }
        }
        out
    }

    pub fn field_grad(&self, coeffs: &DVector<f64>, points: usize) -> Vec<[[f64; 2]; 2]> {
        let mut out = vec![[[0.0; 2]; 2]; points];
        for i in 0..self.modes {
            let c = coeffs[i];
            if c == 0.0 {
                continue;
            }
            for g in 0..points {
                let gm = self.grads[i * points + g];
                for a in 0..2 {
                    for b in 0..2 {
                        out[g][a][b] += c * gm[a][b];
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
enum SMode {
    Constant,
    Wave { k: [f64; 2], trig: Trig, level: i64 },
}

/// Scalar trigonometric basis on the torus, orthonormal in `L^2`, constant
/// mode first.
pub struct ScalarBasis {
    torus: Torus,
    modes: Vec<SMode>,
}

impl ScalarBasis {
    pub fn torus(&self) -> &Torus {
        &self.torus
    }

    pub fn new(torus: Torus, count: usize) -> Result<Self, Error> {
        if count == 0 {
            return Err(Error::config("scalar basis needs at least the constant mode"));
        }
        let vectors = canonical_wavevectors(&torus, WAVEVECTOR_CAP);
        let capacity = 1 + 2 * vectors.len();
        if count > capacity {
            return Err(Error::config(format!(
                "requested {count} scalar modes but the wavevector shells provide only {capacity}"
            )));
        }
        let mut modes = vec![SMode::Constant];
        'outer: for v in vectors {
            let k = [
                std::f64::consts::TAU * v[0] as f64 / torus.lengths[0],
                std::f64::consts::TAU * v[1] as f64 / torus.lengths[1],
            ];
            let level = (v[0] as i64).pow(2) + (v[1] as i64).pow(2);
            for trig in [Trig::Cos, Trig::Sin] {
                if modes.len() == count {
                    break 'outer;
                }
                modes.push(SMode::Wave { k, trig, level });
            }
        }
        Ok(Self { torus, modes })
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Shell level `|n|^2` of a mode (0 for the constant).
    pub fn level(&self, i: usize) -> i64 {
        match self.modes[i] {
            SMode::Constant => 0,
            SMode::Wave { level, .. } => level,
        }
    }

    pub fn max_wavenumber(&self) -> i32 {
        self.modes
            .iter()
            .map(|m| match m {
                SMode::Constant => 0,
                SMode::Wave { k, .. } => {
                    let n1 = (k[0] * self.torus.lengths[0] / std::f64::consts::TAU).round().abs();
                    let n2 = (k[1] * self.torus.lengths[1] / std::f64::consts::TAU).round().abs();
                    n1.max(n2) as i32
                }
            })
            .max()
            .unwrap_or(0)
    }

    pub fn eval_mode(&self, i: usize, x: [f64; 2]) -> f64 {
        let vol = self.torus.volume();
        match self.modes[i] {
            SMode::Constant => 1.0 / vol.sqrt(),
            SMode::Wave { k, trig, .. } => {
                let phase = k[0] * x[0] + k[1] * x[1];
                let t = match trig {
                    Trig::Cos => phase.cos(),
                    Trig::Sin => phase.sin(),
                };
                (2.0 / vol).sqrt() * t
            }
        }
    }

    pub fn grad_mode(&self, i: usize, x: [f64; 2]) -> [f64; 2] {
        let vol = self.torus.volume();
        match self.modes[i] {
            SMode::Constant => [0.0, 0.0],
            SMode::Wave { k, trig, .. } => {
                let phase = k[0] * x[0] + k[1] * x[1];
                let dt = match trig {
                    Trig::Cos => -phase.sin(),
                    Trig::Sin => phase.cos(),
                };
                [(2.0 / vol).sqrt() * k[0] * dt, (2.0 / vol).sqrt() * k[1] * dt]
            }
        }
    }

    pub fn cache_on(&self, grid: &SpatialGrid) -> ScalarGridCache {
        let g = grid.len();
        let mut values = Vec::with_capacity(self.len() * g);
        let mut grads = Vec::with_capacity(self.len() * g);
        for i in 0..self.len() {
            for p in &grid.points {
                values.push(self.eval_mode(i, *p));
                grads.push(self.grad_mode(i, *p));
            }
        }
        ScalarGridCache { modes: self.len(), values, grads }
    }
}

pub struct ScalarGridCache {
    pub modes: usize,
    pub values: Vec<f64>,
    pub grads: Vec<[f64; 2]>,
}

/// Tensor basis for the normalized configuration density: scalar
/// trigonometric factor times weighted configuration polynomial, ordered by
/// combined degree (spatial shell level plus configuration degree) so the
/// constant function is first and truncated bases nest.
pub struct PdfBasis {
    pub xbasis: ScalarBasis,
    pub conf: ConfBasis,
    pairs: Vec<(usize, usize)>,
}

impl PdfBasis {
    pub fn new(xbasis: ScalarBasis, conf: ConfBasis, count: usize) -> Result<Self, Error> {
        let total = xbasis.len() * conf.len();
        let count = if count == 0 { total } else { count };
        if count > total {
            return Err(Error::config(format!(
                "requested {count} configuration-density modes but the tensor space has {total}"
            )));
        }
        let mut pairs: Vec<(usize, usize)> =
            (0..xbasis.len()).flat_map(|a| (0..conf.len()).map(move |b| (a, b))).collect();
        pairs.sort_by_key(|&(a, b)| (xbasis.level(a) + conf.degree(b) as i64, a, b));
        pairs.truncate(count);
        Ok(Self { xbasis, conf, pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// The `(spatial factor, configuration factor)` indices of mode `i`.
    pub fn pair(&self, i: usize) -> (usize, usize) {
        self.pairs[i]
    }

    /// Evaluate the represented field at an arbitrary point.
    pub fn eval_at(&self, coeffs: &DVector<f64>, x: [f64; 2], q: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (i, &(a, b)) in self.pairs.iter().enumerate() {
            let c = coeffs[i];
            if c == 0.0 {
                continue;
            }
            acc += c * self.xbasis.eval_mode(a, x) * self.conf.eval(b, q);
        }
        acc
    }

    /// Per-configuration-function spatial partial sums `S_b(g)`, the
    /// workhorse for evaluating the field and its derivatives on the tensor
    /// grid: `psi(g, a) = sum_b S_b(g) Q_b(a)`.
    fn partial_sums(&self, xcache: &ScalarGridCache, coeffs: &DVector<f64>, points: usize) -> Vec<f64> {
        let nb = self.conf.len();
        let mut s = vec![0.0; nb * points];
        for (i, &(a, b)) in self.pairs.iter().enumerate() {
            let c = coeffs[i];
            if c == 0.0 {
                continue;
            }
            for g in 0..points {
                s[b * points + g] += c * xcache.values[a * points + g];
            }
        }
        s
    }

    fn partial_grad_sums(
        &self,
        xcache: &ScalarGridCache,
        coeffs: &DVector<f64>,
        points: usize,
    ) -> Vec<[f64; 2]> {
        let nb = self.conf.len();
        let mut s = vec![[0.0; 2]; nb * points];
        for (i, &(a, b)) in self.pairs.iter().enumerate() {
            let c = coeffs[i];
            if c == 0.0 {
                continue;
            }
            for g in 0..points {
                let gx = xcache.grads[a * points + g];
                s[b * points + g][0] += c * gx[0];
                s[b * points + g][1] += c * gx[1];
            }
        }
        s
    }

    /// Field values on the tensor grid `(spatial point, configuration node)`.
    pub fn values_on(
        &self,
        xcache: &ScalarGridCache,
        quad: &ConfQuadrature,
        coeffs: &DVector<f64>,
        points: usize,
    ) -> Vec<f64> {
        let nq = quad.len();
        let s = self.partial_sums(xcache, coeffs, points);
        let mut out = vec![0.0; points * nq];
        for b in 0..self.conf.len() {
            let qvals = self.conf.values_of(b, nq);
            for g in 0..points {
                let sb = s[b * points + g];
                if sb == 0.0 {
                    continue;
                }
                for a in 0..nq {
                    out[g * nq + a] += sb * qvals[a];
                }
            }
        }
        out
    }

    /// Field values plus spatial and configuration gradients on the tensor
    /// grid.
    pub fn field_on(
        &self,
        xcache: &ScalarGridCache,
        quad: &ConfQuadrature,
        coeffs: &DVector<f64>,
        points: usize,
    ) -> PdfField {
        let nq = quad.len();
        let cd = quad.conf_dim();
        let s = self.partial_sums(xcache, coeffs, points);
        let sg = self.partial_grad_sums(xcache, coeffs, points);
        let mut values = vec![0.0; points * nq];
        let mut grad_x = vec![[0.0; 2]; points * nq];
        let mut grad_q = vec![0.0; points * nq * cd];
        for b in 0..self.conf.len() {
            let qvals = self.conf.values_of(b, nq);
            for g in 0..points {
                let sb = s[b * points + g];
                let sgb = sg[b * points + g];
                if sb == 0.0 && sgb == [0.0, 0.0] {
                    continue;
                }
                for a in 0..nq {
                    let qa = qvals[a];
                    values[g * nq + a] += sb * qa;
                    grad_x[g * nq + a][0] += sgb[0] * qa;
                    grad_x[g * nq + a][1] += sgb[1] * qa;
                    let gq = self.conf.grad(b, nq, a);
                    for i in 0..cd {
                        grad_q[(g * nq + a) * cd + i] += sb * gq[i];
                    }
                }
            }
        }
        PdfField { points, nodes: nq, conf_dim: cd, values, grad_x, grad_q }
    }
}

/// A configuration-density field sampled on the tensor grid.
pub struct PdfField {
    pub points: usize,
    pub nodes: usize,
    pub conf_dim: usize,
    /// `point * nodes + node`
    pub values: Vec<f64>,
    pub grad_x: Vec<[f64; 2]>,
    pub grad_q: Vec<f64>,
}

impl PdfField {
    pub fn value(&self, g: usize, a: usize) -> f64 {
        self.values[g * self.nodes + a]
    }

    pub fn grad_q(&self, g: usize, a: usize) -> &[f64] {
        let cd = self.conf_dim;
        &self.grad_q[(g * self.nodes + a) * cd..(g * self.nodes + a + 1) * cd]
    }
}

/// Assembled blocks of the velocity subsystem `M dc/dt = A c + B`.
pub struct VelocityBlocks {
    pub mass: DMatrix<f64>,
    pub dynamics: DMatrix<f64>,
    pub load: DVector<f64>,
}

fn check_finite(name: &str, g: usize, v: f64) -> Result<(), Error> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{name} at grid node {g} is {v}")))
    }
}

/// Assemble the velocity blocks from fields sampled on the grid: density,
/// convecting velocity, viscosity `mu(rho, varrho)`, extra stress, and
/// forcing.
#[allow(clippy::too_many_arguments)]
pub fn assemble_velocity_system(
    grid: &SpatialGrid,
    cache: &VelocityGridCache,
    rho: &[f64],
    u: &[[f64; 2]],
    mu: &[f64],
    tau: &[[[f64; 2]; 2]],
    force: &[[f64; 2]],
) -> Result<VelocityBlocks, Error> {
    let gpts = grid.len();
    let m = cache.modes;
    for g in 0..gpts {
        check_finite("rho", g, rho[g])?;
        check_finite("mu", g, mu[g])?;
        check_finite("u", g, u[g][0] + u[g][1])?;
        check_finite("tau", g, tau[g][0][0] + tau[g][0][1] + tau[g][1][0] + tau[g][1][1])?;
        check_finite("force", g, force[g][0] + force[g][1])?;
    }
    let w = grid.weight;
    let mut mass = DMatrix::zeros(m, m);
    let mut dynamics = DMatrix::zeros(m, m);
    let mut load = DVector::zeros(m);

    // symmetric gradients per mode per point: (s11, s12, s22)
    let mut sym = vec![[0.0; 3]; m * gpts];
    for i in 0..m {
        for g in 0..gpts {
            let gr = cache.grads[i * gpts + g];
            sym[i * gpts + g] = [gr[0][0], 0.5 * (gr[0][1] + gr[1][0]), gr[1][1]];
        }
    }

    for i in 0..m {
        for j in 0..=i {
            let mut acc = 0.0;
            for g in 0..gpts {
                let wi = cache.values[i * gpts + g];
                let wj = cache.values[j * gpts + g];
                acc += rho[g] * (wi[0] * wj[0] + wi[1] * wj[1]);
            }
            mass[(i, j)] = w * acc;
            mass[(j, i)] = w * acc;
        }
    }

    for i in 0..m {
        for j in 0..m {
            let mut conv = 0.0;
            for g in 0..gpts {
                // ((u . grad) w_j) . w_i
                let gj = cache.grads[j * gpts + g];
                let wi = cache.values[i * gpts + g];
                let adv0 = u[g][0] * gj[0][0] + u[g][1] * gj[0][1];
                let adv1 = u[g][0] * gj[1][0] + u[g][1] * gj[1][1];
                conv += rho[g] * (adv0 * wi[0] + adv1 * wi[1]);
            }
            let mut visc = 0.0;
            for g in 0..gpts {
                let si = sym[i * gpts + g];
                let sj = sym[j * gpts + g];
                visc += mu[g] * (si[0] * sj[0] + 2.0 * si[1] * sj[1] + si[2] * sj[2]);
            }
            dynamics[(i, j)] = -w * (conv + visc);
        }
    }

    for i in 0..m {
        let mut acc = 0.0;
        for g in 0..gpts {
            let wi = cache.values[i * gpts + g];
            let gi = cache.grads[i * gpts + g];
            acc += rho[g] * (force[g][0] * wi[0] + force[g][1] * wi[1]);
            let t = tau[g];
            acc -= t[0][0] * gi[0][0] + t[0][1] * gi[0][1] + t[1][0] * gi[1][0] + t[1][1] * gi[1][1];
        }
        load[i] = w * acc;
    }

    Ok(VelocityBlocks { mass, dynamics, load })
}

/// Dynamics and drive of the configuration subsystem `d/dt (N d) = P d + R`
/// (the weighted mass `N` is assembled separately at the window endpoints).
pub struct FpBlocks {
    pub dynamics: DMatrix<f64>,
    pub drive: DVector<f64>,
}

/// Weighted mass matrix `N_ij = int M^m zeta(rho) phi_i phi_j` alone; the
/// conservative update needs it at the window endpoints.
pub fn assemble_fp_mass(
    grid: &SpatialGrid,
    xcache: &ScalarGridCache,
    basis: &PdfBasis,
    zeta: &[f64],
) -> Result<DMatrix<f64>, Error> {
    let gpts = grid.len();
    let nx = basis.xbasis.len();
    let n = basis.len();
    for g in 0..gpts {
        check_finite("zeta", g, zeta[g])?;
    }
    // zeta-weighted spatial Gram
    let mut zx = DMatrix::zeros(nx, nx);
    for a in 0..nx {
        for b in 0..=a {
            let mut acc = 0.0;
            for g in 0..gpts {
                acc += zeta[g] * xcache.values[a * gpts + g] * xcache.values[b * gpts + g];
            }
            zx[(a, b)] = grid.weight * acc;
            zx[(b, a)] = grid.weight * acc;
        }
    }
    let mut mass = DMatrix::zeros(n, n);
    for i in 0..n {
        let (ai, bi) = basis.pair(i);
        for j in 0..n {
            let (aj, bj) = basis.pair(j);
            if bi == bj {
                mass[(i, j)] = zx[(ai, aj)];
            }
        }
    }
    Ok(mass)
}

/// Assemble the conservative dynamics `P` and drive `R` at one time.
///
/// The advection and spatial-diffusion blocks factor through the weighted
/// orthonormality of the configuration functions; the configuration-diffusion
/// block factors through the plain orthonormality of the spatial factors.
/// The drive carries the truncated drag term, weighted with the exact
/// Maxwellian while the mass and diffusion use the (possibly approximate)
/// weight; this split is intentional and mirrors the continuous construction.
#[allow(clippy::too_many_arguments)]
pub fn assemble_fp_dynamics(
    grid: &SpatialGrid,
    xcache: &ScalarGridCache,
    basis: &PdfBasis,
    quad: &ConfQuadrature,
    m_true: &[f64],
    mm: &[f64],
    rouse: &RouseSystem,
    cutoff: &CutoffFamily,
    zeta: &[f64],
    u: &[[f64; 2]],
    grad_u: &[[[f64; 2]; 2]],
    xi: &[f64],
) -> Result<FpBlocks, Error> {
    let gpts = grid.len();
    let nx = basis.xbasis.len();
    let nq = quad.len();
    let nb = basis.conf.len();
    let cd = quad.conf_dim();
    let springs = quad.springs();
    let dim = quad.dim();
    let n = basis.len();
    for g in 0..gpts {
        check_finite("zeta", g, zeta[g])?;
        check_finite("u", g, u[g][0] + u[g][1])?;
    }
    if xi.len() != gpts * nq {
        return Err(Error::shape("xi must be sampled on the full tensor grid"));
    }

    // conservative advection: +int zeta (u . grad X_i) X_j dx, diagonal in
    // the configuration index
    let mut adv = DMatrix::zeros(nx, nx);
    for a in 0..nx {
        for b in 0..nx {
            let mut acc = 0.0;
            for g in 0..gpts {
                let ga = xcache.grads[a * gpts + g];
                acc += zeta[g]
                    * (u[g][0] * ga[0] + u[g][1] * ga[1])
                    * xcache.values[b * gpts + g];
            }
            adv[(a, b)] = grid.weight * acc;
        }
    }
    // spatial diffusion: -int grad X_a . grad X_b dx (no drag weight), times
    // the weighted configuration mass int M^m Q Q = identity
    let mut kx = DMatrix::zeros(nx, nx);
    for a in 0..nx {
        for b in 0..=a {
            let mut acc = 0.0;
            for g in 0..gpts {
                let ga = xcache.grads[a * gpts + g];
                let gb = xcache.grads[b * gpts + g];
                acc += ga[0] * gb[0] + ga[1] * gb[1];
            }
            kx[(a, b)] = grid.weight * acc;
            kx[(b, a)] = grid.weight * acc;
        }
    }
    // configuration diffusion: -int M^m A(grad_q Q_b') : grad_q Q_b dq,
    // diagonal in the spatial index
    let mut kq: DMatrix<f64> = DMatrix::zeros(nb, nb);
    let mut coupled = vec![0.0; cd];
    for bj in 0..nb {
        for a in 0..nq {
            let w = quad.plain_weight(a) * mm[a];
            if w == 0.0 {
                continue;
            }
            rouse.apply_flat(basis.conf.grad(bj, nq, a), dim, &mut coupled);
            for bi in 0..nb {
                let gi = basis.conf.grad(bi, nq, a);
                let mut dot = 0.0;
                for i in 0..cd {
                    dot += coupled[i] * gi[i];
                }
                kq[(bi, bj)] += w * dot;
            }
        }
    }

    let mut dynamics = DMatrix::zeros(n, n);
    for i in 0..n {
        let (ai, bi) = basis.pair(i);
        for j in 0..n {
            let (aj, bj) = basis.pair(j);
            let mut p = 0.0;
            if bi == bj {
                p += adv[(ai, aj)] - kx[(ai, aj)];
            }
            if ai == aj {
                p -= kq[(bi, bj)];
            }
            dynamics[(i, j)] = p;
        }
    }

    // drive: + int M zeta Lambda_l(xi) (grad u) q : grad_q phi_i
    // inner_b(g) = int_D M Lambda_l(xi(g, .)) ((grad u(g)) q) . grad_q Q_b dq
    let mut inner = vec![0.0; nb * gpts];
    for g in 0..gpts {
        let gu = grad_u[g];
        for a in 0..nq {
            let lam = cutoff.lambda(xi[g * nq + a]);
            if lam == 0.0 {
                continue;
            }
            let w = quad.plain_weight(a) * m_true[a] * lam;
            let q = quad.node(a);
            // per spring: (grad u) q^j, a d-vector
            for b in 0..nb {
                let gq = basis.conf.grad(b, nq, a);
                let mut dot = 0.0;
                for j in 0..springs {
                    for al in 0..dim {
                        let gu_q = gu[al][0] * q[j * dim] + gu[al][1] * q[j * dim + 1];
                        dot += gu_q * gq[j * dim + al];
                    }
                }
                inner[b * gpts + g] += w * dot;
            }
        }
    }
    let mut drive = DVector::zeros(n);
    for i in 0..n {
        let (ai, bi) = basis.pair(i);
        let mut acc = 0.0;
        for g in 0..gpts {
            acc += zeta[g] * xcache.values[ai * gpts + g] * inner[bi * gpts + g];
        }
        drive[i] = grid.weight * acc;
    }

    Ok(FpBlocks { dynamics, drive })
}

/// Polymer number density `varrho(x) = zeta(rho(x)) int M^m [psi]_+ dq` on
/// the grid, with the count of negative-density quadrature hits.
pub fn polymer_number_density(
    quad: &ConfQuadrature,
    mm: &[f64],
    zeta: &[f64],
    xi: &[f64],
) -> (Vec<f64>, usize) {
    let nq = quad.len();
    let gpts = zeta.len();
    let mut out = vec![0.0; gpts];
    let mut clamped = 0usize;
    for g in 0..gpts {
        let mut acc = 0.0;
        for a in 0..nq {
            let v = xi[g * nq + a];
            if v < 0.0 {
                clamped += 1;
                continue;
            }
            acc += quad.plain_weight(a) * mm[a] * v;
        }
        out[g] = zeta[g] * acc;
    }
    (out, clamped)
}
