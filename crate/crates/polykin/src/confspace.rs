//! Configuration-space machinery: quadrature over the product of FENE balls,
//! the Maxwellian and its floor-regularized approximation, a weighted
//! orthonormal polynomial basis, and the Kramers stress in its three
//! equivalent forms.
//!
//! The Maxwellian of a FENE spring vanishes at the ball boundary like
//! `(1 - r^2/b)^{b/2}`, so plain radial rules lose accuracy there. The rules
//! here are Gauss-Jacobi in the mapped variable `x = 2 r^2 / b - 1` with
//! exponent `b/2 - 1`, which makes every integrand of the form
//! `(1 - r^2/b)^{b/2 - 1 + j} * polynomial` (j = 0, 1, ...) exact: both
//! Maxwellian-weighted moments and the `grad M` moments appearing in the
//! integrated-by-parts stress.

use nalgebra::DMatrix;

use crate::model::{fene_potential_deriv, FeneChain};
use crate::numerics::{gauss_jacobi, gauss_legendre};
use crate::truncation::CutoffFamily;
use crate::Error;

/// Quadrature nodes and weights for one ball of radius `sqrt(b)` in
/// dimension `d`.
struct BallRule {
    /// Flattened node coordinates, `d` per node.
    nodes: Vec<f64>,
    /// Plain weights: `sum w f(q) ~ int f dq`.
    plain: Vec<f64>,
    /// Unnormalized Boltzmann factor `(1 - |q|^2/b)^{b/2}` per node.
    boltzmann: Vec<f64>,
    /// Largest monomial degree `p` such that products of two degree-`p`
    /// monomials against the Maxwellian are integrated exactly.
    capacity: usize,
}

fn ball_rule(b: f64, dim: usize, radial_order: usize, angular_order: usize) -> Result<BallRule, Error> {
    if b < 2.0 {
        return Err(Error::domain(format!("extensibility must satisfy b >= 2, got {b}")));
    }
    if !(dim == 2 || dim == 3) {
        return Err(Error::domain(format!("ball dimension must be 2 or 3, got {dim}")));
    }
    if radial_order < 2 || angular_order < 4 {
        return Err(Error::domain("quadrature orders too small (radial >= 2, angular >= 4)"));
    }
    let alpha = 0.5 * b - 1.0;
    let beta = 0.5 * (dim as f64 - 2.0);
    let (xs, vs) = gauss_jacobi(radial_order, alpha, beta);
    // r^2 = b (1 + x) / 2; the factor c carries the substitution Jacobian.
    let c = match dim {
        2 => 0.25 * b,
        _ => 0.25 * b * (0.5 * b).sqrt(),
    };
    // The geometric factor (1+x)^beta stays inside the rule weight (it is
    // part of the volume measure); only the Maxwellian factor (1-x)^alpha is
    // divided out to produce plain weights.
    let mut radial: Vec<(f64, f64)> = Vec::with_capacity(radial_order);
    for (&x, &v) in xs.iter().zip(&vs) {
        let r = (0.5 * b * (1.0 + x)).sqrt();
        let u = c * v / (1.0 - x).powf(alpha);
        radial.push((r, u));
    }

    let mut nodes = Vec::new();
    let mut plain = Vec::new();
    let mut boltzmann = Vec::new();
    match dim {
        2 => {
            let wt = std::f64::consts::TAU / angular_order as f64;
            for &(r, u) in &radial {
                let bf = (1.0 - r * r / b).powf(0.5 * b);
                for j in 0..angular_order {
                    let th = std::f64::consts::TAU * j as f64 / angular_order as f64;
                    nodes.extend_from_slice(&[r * th.cos(), r * th.sin()]);
                    plain.push(u * wt);
                    boltzmann.push(bf);
                }
            }
        }
        _ => {
            let (mus, wmus) = gauss_legendre(angular_order);
            let nphi = 2 * angular_order;
            let wphi = std::f64::consts::TAU / nphi as f64;
            for &(r, u) in &radial {
                let bf = (1.0 - r * r / b).powf(0.5 * b);
                for (&mu, &wmu) in mus.iter().zip(&wmus) {
                    let s = (1.0 - mu * mu).sqrt();
                    for j in 0..nphi {
                        let phi = std::f64::consts::TAU * j as f64 / nphi as f64;
                        nodes.extend_from_slice(&[r * s * phi.cos(), r * s * phi.sin(), r * mu]);
                        plain.push(u * wmu * wphi);
                        boltzmann.push(bf);
                    }
                }
            }
        }
    }
    let capacity = (2 * radial_order - 2).min((angular_order - 1) / 2);
    Ok(BallRule { nodes, plain, boltzmann, capacity })
}

/// Partition integral `Z = int_{|q| < sqrt(b)} (1 - |q|^2/b)^{b/2} dq` of one
/// FENE ball, by the weighted radial rule (exact for every `b >= 2`).
pub fn partition_function(b: f64, dim: usize) -> Result<f64, Error> {
    partition_function_with_order(b, dim, 24)
}

pub fn partition_function_with_order(b: f64, dim: usize, radial_order: usize) -> Result<f64, Error> {
    let rule = ball_rule(b, dim, radial_order, 4)?;
    Ok(rule.plain.iter().zip(&rule.boltzmann).map(|(w, m)| w * m).sum())
}

/// Tensor quadrature over the product of the chain's configuration balls.
pub struct ConfQuadrature {
    dim: usize,
    springs: usize,
    b: Vec<f64>,
    nodes: Vec<f64>,
    plain: Vec<f64>,
    boltzmann: Vec<f64>,
    per_ball_partition: Vec<f64>,
    radial_order: usize,
    angular_order: usize,
    capacity: usize,
}

impl ConfQuadrature {
    pub fn new(chain: &FeneChain, radial_order: usize, angular_order: usize) -> Result<Self, Error> {
        Self::for_balls(chain.extensibilities(), chain.dim(), radial_order, angular_order)
    }

    /// Build directly from extensibility parameters; used by standalone
    /// configuration-space checks that do not carry a full chain.
    pub fn for_balls(
        b: &[f64],
        dim: usize,
        radial_order: usize,
        angular_order: usize,
    ) -> Result<Self, Error> {
        let rules: Vec<BallRule> = b
            .iter()
            .map(|&bj| ball_rule(bj, dim, radial_order, angular_order))
            .collect::<Result<_, _>>()?;
        let per_ball_partition: Vec<f64> = rules
            .iter()
            .map(|r| r.plain.iter().zip(&r.boltzmann).map(|(w, m)| w * m).sum())
            .collect();
        let springs = b.len();
        let counts: Vec<usize> = rules.iter().map(|r| r.plain.len()).collect();
        let total: usize = counts.iter().product();
        let mut nodes = Vec::with_capacity(total * dim * springs);
        let mut plain = Vec::with_capacity(total);
        let mut boltzmann = Vec::with_capacity(total);
        let mut index = vec![0usize; springs];
        for _ in 0..total {
            let mut w = 1.0;
            let mut m = 1.0;
            for (j, rule) in rules.iter().enumerate() {
                let a = index[j];
                nodes.extend_from_slice(&rule.nodes[a * dim..(a + 1) * dim]);
                w *= rule.plain[a];
                m *= rule.boltzmann[a];
            }
            plain.push(w);
            boltzmann.push(m);
            // odometer increment
            for j in (0..springs).rev() {
                index[j] += 1;
                if index[j] < counts[j] {
                    break;
                }
                index[j] = 0;
            }
        }
        let capacity = rules.iter().map(|r| r.capacity).min().unwrap_or(0);
        Ok(Self {
            dim,
            springs,
            b: b.to_vec(),
            nodes,
            plain,
            boltzmann,
            per_ball_partition,
            radial_order,
            angular_order,
            capacity,
        })
    }

    pub fn len(&self) -> usize {
        self.plain.len()
    }

    pub fn is_empty(&self) -> bool {
        self.plain.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn springs(&self) -> usize {
        self.springs
    }

    pub fn conf_dim(&self) -> usize {
        self.dim * self.springs
    }

    pub fn node(&self, a: usize) -> &[f64] {
        let n = self.conf_dim();
        &self.nodes[a * n..(a + 1) * n]
    }

    pub fn plain_weight(&self, a: usize) -> f64 {
        self.plain[a]
    }

    /// Plain weight times the unnormalized Boltzmann product; summing these
    /// gives the partition integral of the product domain.
    pub fn maxwellian_weight(&self, a: usize) -> f64 {
        self.plain[a] * self.boltzmann[a]
    }

    /// Unnormalized Boltzmann factor at a node.
    pub fn boltzmann(&self, a: usize) -> f64 {
        self.boltzmann[a]
    }

    pub fn per_ball_partition(&self) -> &[f64] {
        &self.per_ball_partition
    }

    pub fn extensibilities(&self) -> &[f64] {
        &self.b
    }

    pub fn radial_order(&self) -> usize {
        self.radial_order
    }

    pub fn angular_order(&self) -> usize {
        self.angular_order
    }

    /// Largest monomial degree whose Maxwellian-weighted Gram products are
    /// integrated exactly.
    pub fn degree_capacity(&self) -> usize {
        self.capacity
    }

    /// Squared length of the conformation vector of spring `j` at node `a`.
    pub fn spring_radius2(&self, a: usize, j: usize) -> f64 {
        let q = self.node(a);
        (0..self.dim).map(|i| q[j * self.dim + i] * q[j * self.dim + i]).sum()
    }
}

/// Normalized equilibrium Maxwellian of a chain, with per-node caches of its
/// values and per-spring gradients on a quadrature rule.
pub struct Maxwellian {
    b: Vec<f64>,
    dim: usize,
    partition: Vec<f64>,
    partition_product: f64,
    values: Vec<f64>,
    grads: Vec<f64>,
}

impl Maxwellian {
    pub fn new(chain: &FeneChain, quad: &ConfQuadrature) -> Result<Self, Error> {
        Self::for_balls(chain.extensibilities(), chain.dim(), quad)
    }

    pub fn for_balls(b: &[f64], dim: usize, quad: &ConfQuadrature) -> Result<Self, Error> {
        if b != quad.extensibilities() || dim != quad.dim() {
            return Err(Error::shape("quadrature was built for a different chain"));
        }
        let partition = quad.per_ball_partition().to_vec();
        let partition_product: f64 = partition.iter().product();
        let n = quad.len();
        let cd = quad.conf_dim();
        let mut values = Vec::with_capacity(n);
        let mut grads = vec![0.0; n * cd];
        for a in 0..n {
            let m = quad.boltzmann(a) / partition_product;
            values.push(m);
            let q = quad.node(a);
            for j in 0..quad.springs() {
                let r2 = quad.spring_radius2(a, j);
                let uprime = fene_potential_deriv(0.5 * r2, b[j])?;
                for i in 0..dim {
                    grads[a * cd + j * dim + i] = -m * uprime * q[j * dim + i];
                }
            }
        }
        Ok(Self { b: b.to_vec(), dim, partition, partition_product, values, grads })
    }

    /// Per-spring partition constants `Z_j`.
    pub fn partition_constants(&self) -> &[f64] {
        &self.partition
    }

    /// Product of the per-spring partition constants.
    pub fn partition_product(&self) -> f64 {
        self.partition_product
    }

    /// Evaluate `M(q)` at an arbitrary configuration point. Points on the
    /// closed boundary evaluate to the limit value 0; points outside the
    /// product of closed balls are a domain error.
    pub fn eval(&self, q: &[f64]) -> Result<f64, Error> {
        if q.len() != self.dim * self.b.len() {
            return Err(Error::shape("configuration point has wrong dimension"));
        }
        let mut m = 1.0 / self.partition_product;
        for (j, &bj) in self.b.iter().enumerate() {
            let r2: f64 = (0..self.dim).map(|i| q[j * self.dim + i].powi(2)).sum();
            if r2 > bj * (1.0 + 1e-12) {
                return Err(Error::domain(format!(
                    "configuration outside admissible ball: |q^{j}|^2 = {r2} > b = {bj}"
                )));
            }
            m *= (1.0 - r2 / bj).max(0.0).powf(0.5 * bj);
        }
        Ok(m)
    }

    /// `log M(q)` (minus infinity at the boundary).
    pub fn log_eval(&self, q: &[f64]) -> Result<f64, Error> {
        Ok(self.eval(q)?.ln())
    }

    /// Cached values at quadrature nodes.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Cached gradients at quadrature nodes, flattened `node x (dim * springs)`.
    pub fn grads(&self) -> &[f64] {
        &self.grads
    }
}

/// Floor-regularized approximate Maxwellian at index `m`.
///
/// The core is a smooth clipping of the Maxwellian in value space:
/// `core(v) = S(m v - 1) / m` with `S` the primitive of the smooth step, so
/// that `core(v) = 0` for `v <= 1/m`, `core(v) = v - 3/(2m)` for `v >= 2/m`,
/// and `0 <= v - core(v) <= 3/(2m)` everywhere. Adding the floor `1/m` gives
/// a Lipschitz function bounded below by `1/m` whose uniform distance to the
/// Maxwellian shrinks like `1/m`.
pub struct ApproxMaxwellian<'a> {
    base: &'a Maxwellian,
    index: u32,
}

impl<'a> ApproxMaxwellian<'a> {
    pub fn new(base: &'a Maxwellian, index: u32) -> Result<Self, Error> {
        if index == 0 {
            return Err(Error::domain("approximation index must be positive"));
        }
        Ok(Self { base, index })
    }

    pub fn index(&self) -> u32 {
        self.index
    }

    fn core(&self, v: f64) -> f64 {
        let m = f64::from(self.index);
        crate::numerics::smooth_step_integral(m * v - 1.0) / m
    }

    /// `M^m(q) = core(M(q)) + 1/m`.
    pub fn eval(&self, q: &[f64]) -> Result<f64, Error> {
        Ok(self.core(self.base.eval(q)?) + 1.0 / f64::from(self.index))
    }

    /// Values at the quadrature nodes of the base Maxwellian.
    pub fn values(&self) -> Vec<f64> {
        let floor = 1.0 / f64::from(self.index);
        self.base.values().iter().map(|&v| self.core(v) + floor).collect()
    }

    /// Uniform floor `1/m`.
    pub fn floor(&self) -> f64 {
        1.0 / f64::from(self.index)
    }
}

/// Weighted orthonormal basis of configuration polynomials.
///
/// Monomials in the `d*K` conformation variables, ordered by total degree
/// then lexicographically, orthonormalized in the discrete weighted inner
/// product `<f, g> = sum_a w_a N(q_a) f(q_a) g(q_a)` by twice-iterated
/// modified Gram-Schmidt. The first function is the constant mode.
pub struct ConfBasis {
    count: usize,
    conf_dim: usize,
    /// Orthonormal values, `function x node`.
    values: Vec<f64>,
    /// Orthonormal gradients, `function x node x conf_dim`.
    grads: Vec<f64>,
    /// Expansion of each basis function over the raw monomials.
    coeffs: Vec<f64>,
    exponents: Vec<Vec<usize>>,
    gram_residual: f64,
    degrees: Vec<usize>,
}

fn monomial_exponents(vars: usize, max_degree: usize) -> Vec<Vec<usize>> {
    let mut all = Vec::new();
    let mut current = vec![0usize; vars];
    fn rec(all: &mut Vec<Vec<usize>>, current: &mut Vec<usize>, var: usize, left: usize) {
        if var + 1 == current.len() {
            current[var] = left;
            all.push(current.clone());
            return;
        }
        for e in (0..=left).rev() {
            current[var] = e;
            rec(all, current, var + 1, left - e);
        }
        current[var] = 0;
    }
    for deg in 0..=max_degree {
        let mut layer = Vec::new();
        rec(&mut layer, &mut current, 0, deg);
        layer.sort();
        all.extend(layer);
    }
    all
}

impl ConfBasis {
    /// Build the first `count` weighted-orthonormal functions over monomials
    /// of total degree at most `degree` (`count = 0` selects all of them).
    pub fn build(
        quad: &ConfQuadrature,
        weight_values: &[f64],
        degree: usize,
        count: usize,
    ) -> Result<Self, Error> {
        if weight_values.len() != quad.len() {
            return Err(Error::shape("weight values must be given at every quadrature node"));
        }
        if degree > quad.degree_capacity() {
            return Err(Error::Basis(format!(
                "requested monomial degree {degree} exceeds the quadrature exactness capacity {}; \
                 raise the radial/angular orders",
                quad.degree_capacity()
            )));
        }
        let cd = quad.conf_dim();
        let exponents = monomial_exponents(cd, degree);
        let total = exponents.len();
        let count = if count == 0 { total } else { count };
        if count > total {
            return Err(Error::Basis(format!(
                "requested {count} configuration functions but degree {degree} supports only {total}"
            )));
        }
        let n = quad.len();
        let w: Vec<f64> = (0..n).map(|a| quad.plain_weight(a) * weight_values[a]).collect();

        // raw monomial values and gradients at the nodes
        let mut values = vec![0.0; count * n];
        let mut grads = vec![0.0; count * n * cd];
        let mut coeffs = vec![0.0; count * count];
        for (f, exps) in exponents.iter().take(count).enumerate() {
            coeffs[f * count + f] = 1.0;
            for a in 0..n {
                let q = quad.node(a);
                let mut v = 1.0;
                for (i, &e) in exps.iter().enumerate() {
                    v *= q[i].powi(e as i32);
                }
                values[f * n + a] = v;
                for (i, &e) in exps.iter().enumerate() {
                    if e == 0 {
                        continue;
                    }
                    let mut g = e as f64 * q[i].powi(e as i32 - 1);
                    for (i2, &e2) in exps.iter().enumerate() {
                        if i2 != i {
                            g *= q[i2].powi(e2 as i32);
                        }
                    }
                    grads[(f * n + a) * cd + i] = g;
                }
            }
        }

        let inner = |va: &[f64], vb: &[f64]| -> f64 {
            va.iter().zip(vb).zip(&w).map(|((&x, &y), &wi)| wi * x * y).sum()
        };

        // modified Gram-Schmidt, two passes per vector
        for f in 0..count {
            let norm0 = {
                let vf = &values[f * n..(f + 1) * n];
                inner(vf, vf).sqrt()
            };
            for _pass in 0..2 {
                for g in 0..f {
                    let proj = {
                        let vf = &values[f * n..(f + 1) * n];
                        let vg = &values[g * n..(g + 1) * n];
                        inner(vf, vg)
                    };
                    for a in 0..n {
                        values[f * n + a] -= proj * values[g * n + a];
                        for i in 0..cd {
                            grads[(f * n + a) * cd + i] -= proj * grads[(g * n + a) * cd + i];
                        }
                    }
                    for c in 0..count {
                        coeffs[f * count + c] -= proj * coeffs[g * count + c];
                    }
                }
            }
            let norm = {
                let vf = &values[f * n..(f + 1) * n];
                inner(vf, vf).sqrt()
            };
            if !(norm > 1e-10 * norm0.max(1e-300)) {
                return Err(Error::Basis(format!(
                    "rank deficiency while orthogonalizing the degree-{} monomial {:?}; \
                     the quadrature is too coarse for this basis size",
                    exponents[f].iter().sum::<usize>(),
                    exponents[f]
                )));
            }
            let inv = 1.0 / norm;
            for a in 0..n {
                values[f * n + a] *= inv;
                for i in 0..cd {
                    grads[(f * n + a) * cd + i] *= inv;
                }
            }
            for c in 0..count {
                coeffs[f * count + c] *= inv;
            }
        }

        let mut gram_residual = 0.0f64;
        for f in 0..count {
            for g in 0..=f {
                let d = inner(&values[f * n..(f + 1) * n], &values[g * n..(g + 1) * n])
                    - if f == g { 1.0 } else { 0.0 };
                gram_residual = gram_residual.max(d.abs());
            }
        }

        let degrees = exponents.iter().take(count).map(|e| e.iter().sum()).collect();
        Ok(Self {
            count,
            conf_dim: cd,
            values,
            grads,
            coeffs,
            exponents: exponents.into_iter().take(count).collect(),
            gram_residual,
            degrees,
        })
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn gram_residual(&self) -> f64 {
        self.gram_residual
    }

    /// Total degree of basis function `f`'s leading monomial.
    pub fn degree(&self, f: usize) -> usize {
        self.degrees[f]
    }

    /// Value of function `f` at node `a`.
    pub fn value(&self, f: usize, nodes: usize, a: usize) -> f64 {
        debug_assert_eq!(nodes * self.count, self.values.len());
        self.values[f * nodes + a]
    }

    pub fn values_of(&self, f: usize, nodes: usize) -> &[f64] {
        &self.values[f * nodes..(f + 1) * nodes]
    }

    /// Gradient of function `f` at node `a` (a `conf_dim` slice).
    pub fn grad(&self, f: usize, nodes: usize, a: usize) -> &[f64] {
        let cd = self.conf_dim;
        &self.grads[(f * nodes + a) * cd..(f * nodes + a + 1) * cd]
    }

    /// Evaluate function `f` at an arbitrary configuration point through its
    /// monomial expansion.
    pub fn eval(&self, f: usize, q: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (c, exps) in self.exponents.iter().enumerate() {
            let coeff = self.coeffs[f * self.count + c];
            if coeff == 0.0 {
                continue;
            }
            let mut v = coeff;
            for (i, &e) in exps.iter().enumerate() {
                v *= q[i].powi(e as i32);
            }
            acc += v;
        }
        acc
    }
}

/// The three equivalent expressions of the polymeric extra stress.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StressForm {
    /// Moment of `U' q q^T` minus the isotropic polymer-number-density part.
    Kramers,
    /// Integrated-by-parts form against `grad M` (the form used in the
    /// coupled scheme).
    Divergence,
    /// Form carrying the configuration gradient of the truncated density.
    Gradient,
}

/// Evaluate the truncated Kramers stress at one spatial point.
///
/// `psi` holds the normalized configuration density at the quadrature nodes;
/// `psi_grad` its configuration gradients (`node x conf_dim`), required by
/// the gradient form. Negative density values are counted and reported but
/// enter the truncation untouched (the truncation is odd on negative
/// excursions). Returns the `d x d` stress and the negative-node count.
#[allow(clippy::too_many_arguments)]
pub fn kramers_stress(
    quad: &ConfQuadrature,
    maxwellian: &Maxwellian,
    cutoff: &CutoffFamily,
    zeta: f64,
    k_stress: f64,
    psi: &[f64],
    psi_grad: Option<&[f64]>,
    form: StressForm,
) -> Result<(DMatrix<f64>, usize), Error> {
    let d = quad.dim();
    let springs = quad.springs();
    let cd = quad.conf_dim();
    let n = quad.len();
    if psi.len() != n {
        return Err(Error::shape("psi must be sampled at every quadrature node"));
    }
    let negatives = psi.iter().filter(|&&v| v < 0.0).count();
    let mut tau = DMatrix::zeros(d, d);
    match form {
        StressForm::Gradient => {
            let grads = psi_grad
                .ok_or_else(|| Error::domain("gradient stress form needs configuration gradients"))?;
            if grads.len() != n * cd {
                return Err(Error::shape("psi gradients have wrong length"));
            }
            for a in 0..n {
                let w = quad.plain_weight(a) * maxwellian.values()[a] * zeta;
                let gamma = cutoff.gamma(psi[a]);
                if gamma == 0.0 {
                    continue;
                }
                let q = quad.node(a);
                for j in 0..springs {
                    for alpha in 0..d {
                        let gpsi = gamma * grads[a * cd + j * d + alpha];
                        for beta in 0..d {
                            tau[(alpha, beta)] += k_stress * w * gpsi * q[j * d + beta];
                        }
                    }
                }
            }
        }
        StressForm::Divergence => {
            for a in 0..n {
                let t = cutoff.trunc(psi[a]);
                if t == 0.0 {
                    continue;
                }
                let w = quad.plain_weight(a) * zeta * t;
                let m = maxwellian.values()[a];
                let q = quad.node(a);
                for alpha in 0..d {
                    tau[(alpha, alpha)] -= k_stress * w * springs as f64 * m;
                }
                for j in 0..springs {
                    for alpha in 0..d {
                        let gm = maxwellian.grads()[a * cd + j * d + alpha];
                        for beta in 0..d {
                            tau[(alpha, beta)] -= k_stress * w * gm * q[j * d + beta];
                        }
                    }
                }
            }
        }
        StressForm::Kramers => {
            let b = quad.extensibilities();
            let mut number_density = 0.0;
            for a in 0..n {
                let t = cutoff.trunc(psi[a]);
                if t == 0.0 {
                    continue;
                }
                let m = maxwellian.values()[a];
                let w = quad.plain_weight(a) * zeta * t * m;
                number_density += w;
                let q = quad.node(a);
                for j in 0..springs {
                    let uprime = fene_potential_deriv(0.5 * quad.spring_radius2(a, j), b[j])?;
                    for alpha in 0..d {
                        for beta in 0..d {
                            tau[(alpha, beta)] +=
                                k_stress * w * uprime * q[j * d + alpha] * q[j * d + beta];
                        }
                    }
                }
            }
            for alpha in 0..d {
                tau[(alpha, alpha)] -= k_stress * springs as f64 * number_density;
            }
        }
    }
    Ok((tau, negatives))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::adaptive_simpson;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    fn quad_for(b: f64, dim: usize) -> ConfQuadrature {
        ConfQuadrature::for_balls(&[b], dim, 12, 16).unwrap()
    }

    #[test]
    fn partition_analytic_values() {
        // d = 2: Z = 2 pi b / (b + 2)
        assert_abs_diff_eq!(
            partition_function(2.0, 2).unwrap(),
            std::f64::consts::PI,
            epsilon = 1e-12
        );
        for &b in &[4.0, 12.0] {
            let z = partition_function(b, 2).unwrap();
            assert_abs_diff_eq!(z, std::f64::consts::TAU * b / (b + 2.0), epsilon = 1e-12 * z);
        }
        // d = 3, b = 2: 4 pi (2 sqrt2/3 - 2 sqrt2/5)
        let z32 = partition_function(2.0, 3).unwrap();
        let s2 = 2f64.sqrt();
        let expected = 4.0 * std::f64::consts::PI * (2.0 * s2 / 3.0 - 2.0 * s2 / 5.0);
        assert_abs_diff_eq!(z32, expected, epsilon = 1e-12 * expected);
        assert_abs_diff_eq!(z32 / (4.0 * std::f64::consts::PI), 0.377124, epsilon = 1e-6);
        assert!(partition_function(1.5, 2).is_err());
    }

    #[test]
    fn partition_matches_adaptive_oracle() {
        // radial oracle for b = 12, d = 2: 2 pi int (1 - r^2/12)^6 r dr
        let b = 12.0;
        let oracle = std::f64::consts::TAU
            * adaptive_simpson(&|r: f64| (1.0 - r * r / b).powf(0.5 * b) * r, 0.0, b.sqrt(), 1e-14);
        let z = partition_function(b, 2).unwrap();
        assert!((z - oracle).abs() <= 1e-12 * oracle);
    }

    #[test]
    fn maxwellian_normalizes_on_test_matrix() {
        for &(b, d) in &[(2.0, 2), (4.0, 2), (12.0, 2), (4.0, 3)] {
            let quad = quad_for(b, d);
            let z_quad: f64 = (0..quad.len()).map(|a| quad.maxwellian_weight(a)).sum();
            // independent closed form for the partition integral
            let z_exact = match d {
                2 => std::f64::consts::TAU * b / (b + 2.0),
                _ => {
                    let g = statrs::function::gamma::gamma;
                    4.0 * std::f64::consts::PI * 0.5
                        * b.powf(1.5)
                        * g(1.5) * g(0.5 * b + 1.0) / g(0.5 * b + 2.5)
                }
            };
            assert!(
                (z_quad / z_exact - 1.0).abs() <= 1e-10,
                "normalization defect for (b, d) = ({b}, {d}): {}",
                z_quad / z_exact - 1.0
            );
        }
    }

    #[test]
    fn weighted_rule_exactness_against_adaptive() {
        // (1 - r^2/b)^{b/2} times polynomials, including an odd angular factor
        let b = 12.0;
        let quad = quad_for(b, 2);
        // f(q) = q1^2 q2^2: angular average 1/8 r^4
        let quad_val: f64 = (0..quad.len())
            .map(|a| {
                let q = quad.node(a);
                quad.maxwellian_weight(a) * q[0] * q[0] * q[1] * q[1]
            })
            .sum();
        let oracle = std::f64::consts::TAU / 8.0
            * adaptive_simpson(
                &|r: f64| (1.0 - r * r / b).powf(0.5 * b) * r.powi(5),
                0.0,
                b.sqrt(),
                1e-15,
            );
        assert!((quad_val - oracle).abs() <= 1e-12 * oracle.abs());
        // gradient-class integrand (1 - r^2/b)^{b/2 - 1} * r^2
        let quad_val2: f64 = (0..quad.len())
            .map(|a| {
                let q = quad.node(a);
                let r2 = q[0] * q[0] + q[1] * q[1];
                quad.plain_weight(a) * (1.0 - r2 / b).powf(0.5 * b - 1.0) * r2
            })
            .sum();
        let oracle2 = std::f64::consts::TAU
            * adaptive_simpson(
                &|r: f64| (1.0 - r * r / b).powf(0.5 * b - 1.0) * r.powi(3),
                0.0,
                b.sqrt(),
                1e-15,
            );
        assert!((quad_val2 - oracle2).abs() <= 1e-12 * oracle2.abs());
    }

    #[test]
    fn maxwellian_point_values_and_product_law() {
        let quad = quad_for(2.0, 2);
        let m = Maxwellian::for_balls(&[2.0], 2, &quad).unwrap();
        assert_abs_diff_eq!(
            m.eval(&[0.0, 0.0]).unwrap(),
            1.0 / std::f64::consts::PI,
            epsilon = 1e-12
        );
        // boundary evaluates to the limit 0; outside is a domain error
        let r = 2f64.sqrt();
        assert_eq!(m.eval(&[r, 0.0]).unwrap(), 0.0);
        assert!(m.eval(&[r + 1e-3, 0.0]).is_err());

        // product law for two springs
        let chain = FeneChain::new(vec![4.0, 6.0], 2).unwrap();
        let quad2 = ConfQuadrature::new(&chain, 6, 8).unwrap();
        let m2 = Maxwellian::new(&chain, &quad2).unwrap();
        let quad_a = quad_for(4.0, 2);
        let quad_b = quad_for(6.0, 2);
        let ma = Maxwellian::for_balls(&[4.0], 2, &quad_a).unwrap();
        let mb = Maxwellian::for_balls(&[6.0], 2, &quad_b).unwrap();
        let (qa, qb) = ([0.3, -0.4], [1.0, 0.2]);
        let joint = m2.eval(&[qa[0], qa[1], qb[0], qb[1]]).unwrap();
        let product = ma.eval(&qa).unwrap() * mb.eval(&qb).unwrap();
        assert!((joint - product).abs() <= 1e-14 * product);
    }

    #[test]
    fn kramers_identity_on_test_matrix() {
        // int_D M U'(|q^j|^2/2) q^j q^jT dq = I
        for &(b, d) in &[(2.0, 2), (4.0, 2), (12.0, 2), (4.0, 3)] {
            let quad = quad_for(b, d);
            let m = Maxwellian::for_balls(&[b], d, &quad).unwrap();
            let mut moment: DMatrix<f64> = DMatrix::zeros(d, d);
            for a in 0..quad.len() {
                let uprime = fene_potential_deriv(0.5 * quad.spring_radius2(a, 0), b).unwrap();
                let w = quad.plain_weight(a) * m.values()[a] * uprime;
                let q = quad.node(a);
                for al in 0..d {
                    for be in 0..d {
                        moment[(al, be)] += w * q[al] * q[be];
                    }
                }
            }
            let dev = (&moment - DMatrix::identity(d, d)).amax();
            assert!(dev <= 1e-10, "(b, d) = ({b}, {d}): deviation {dev}");
        }
    }

    #[test]
    fn approx_maxwellian_floor_and_ladder() {
        let quad = quad_for(4.0, 2);
        let m = Maxwellian::for_balls(&[4.0], 2, &quad).unwrap();
        let mut prev_defect = f64::INFINITY;
        for &idx in &[4u32, 8, 16, 32] {
            let mm = ApproxMaxwellian::new(&m, idx).unwrap();
            let vals = mm.values();
            let floor = mm.floor();
            // floor everywhere, and the core's uniform distance to the
            // Maxwellian shrinks monotonically along the ladder
            let mut defect = 0.0f64;
            for (a, &v) in vals.iter().enumerate() {
                assert!(v >= floor - 1e-15);
                defect = defect.max((v - floor - m.values()[a]).abs());
            }
            assert!(defect <= prev_defect + 1e-15, "defect not monotone at m = {idx}");
            assert!(defect <= m.values().iter().fold(0.0f64, |u, &v| u.max(v)).max(1.5 * floor) + 1e-15);
            // the approximation itself converges uniformly as well
            let full: f64 = vals
                .iter()
                .zip(m.values())
                .map(|(&v, &mv)| (v - mv).abs())
                .fold(0.0, f64::max);
            assert!(full <= 1.5 * floor + 1e-15, "m = {idx}: |M^m - M| = {full}");
            prev_defect = defect;
        }
    }

    #[test]
    fn conf_basis_orthonormal_and_constant_first() {
        let quad = quad_for(4.0, 2);
        let m = Maxwellian::for_balls(&[4.0], 2, &quad).unwrap();
        let mm = ApproxMaxwellian::new(&m, 8).unwrap();
        let weights = mm.values();
        let basis = ConfBasis::build(&quad, &weights, 3, 0).unwrap();
        assert!(basis.gram_residual() <= 1e-10, "gram residual {}", basis.gram_residual());
        // first function is the normalized constant
        let total: f64 = (0..quad.len()).map(|a| quad.plain_weight(a) * weights[a]).sum();
        let expected = 1.0 / total.sqrt();
        for a in 0..quad.len() {
            assert_abs_diff_eq!(basis.value(0, quad.len(), a), expected, epsilon = 1e-12);
        }
        // single-function build
        let one = ConfBasis::build(&quad, &weights, 0, 0).unwrap();
        assert_eq!(one.len(), 1);
        assert_abs_diff_eq!(one.value(0, quad.len(), 0), expected, epsilon = 1e-12);
    }

    #[test]
    fn conf_basis_gradients_match_finite_differences() {
        let quad = quad_for(4.0, 2);
        let m = Maxwellian::for_balls(&[4.0], 2, &quad).unwrap();
        let basis = ConfBasis::build(&quad, m.values(), 3, 0).unwrap();
        let h = 1e-6;
        for f in 0..basis.len() {
            let q0 = [0.31, -0.22];
            for i in 0..2 {
                let mut qp = q0;
                let mut qm = q0;
                qp[i] += h;
                qm[i] -= h;
                let fd = (basis.eval(f, &qp) - basis.eval(f, &qm)) / (2.0 * h);
                // analytic gradient through the monomial expansion at a node-free point:
                // compare against the same expansion evaluated at a nearby node
                let scale = fd.abs().max(1.0);
                let mut exact = 0.0;
                for (c, exps) in basis.exponents.iter().enumerate() {
                    let coeff = basis.coeffs[f * basis.count + c];
                    if coeff == 0.0 || exps[i] == 0 {
                        continue;
                    }
                    let mut v = coeff * exps[i] as f64 * q0[i].powi(exps[i] as i32 - 1);
                    for (i2, &e2) in exps.iter().enumerate() {
                        if i2 != i {
                            v *= q0[i2].powi(e2 as i32);
                        }
                    }
                    exact += v;
                }
                assert!((fd - exact).abs() <= 1e-6 * scale, "f={f} i={i}: {fd} vs {exact}");
            }
        }
    }

    #[test]
    fn conf_basis_reproduces_polynomials() {
        // projecting a random polynomial of degree <= p onto the basis
        // reproduces it when the basis covers degree p
        let quad = quad_for(4.0, 2);
        let m = Maxwellian::for_balls(&[4.0], 2, &quad).unwrap();
        let basis = ConfBasis::build(&quad, m.values(), 4, 0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let n = quad.len();
        let target: Vec<f64> = {
            let c: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            (0..n)
                .map(|a| {
                    let q = quad.node(a);
                    c[0] + c[1] * q[0] + c[2] * q[1] + c[3] * q[0] * q[0] + c[4] * q[0] * q[1]
                        + c[5] * q[1] * q[1]
                })
                .collect()
        };
        let w: Vec<f64> = (0..n).map(|a| quad.plain_weight(a) * m.values()[a]).collect();
        let mut reproduced = vec![0.0; n];
        for f in 0..basis.len() {
            let coeff: f64 = (0..n).map(|a| w[a] * target[a] * basis.value(f, n, a)).sum();
            for a in 0..n {
                reproduced[a] += coeff * basis.value(f, n, a);
            }
        }
        let err = target
            .iter()
            .zip(&reproduced)
            .map(|(t, r)| (t - r).abs())
            .fold(0.0f64, f64::max);
        assert!(err <= 1e-9, "projection error {err}");
    }

    #[test]
    fn conf_basis_rejects_excess_degree() {
        let quad = ConfQuadrature::for_balls(&[4.0], 2, 3, 6).unwrap();
        let m = Maxwellian::for_balls(&[4.0], 2, &quad).unwrap();
        let err = ConfBasis::build(&quad, m.values(), 6, 0).err().expect("expected error");
        let msg = format!("{err}");
        assert!(msg.contains("degree 6"), "unexpected message: {msg}");
    }

    fn stress_setup(b: f64) -> (ConfQuadrature, Maxwellian, CutoffFamily) {
        let quad = quad_for(b, 2);
        let m = Maxwellian::for_balls(&[b], 2, &quad).unwrap();
        (quad, m, CutoffFamily::new(8).unwrap())
    }

    #[test]
    fn equilibrium_stress_vanishes_in_all_forms() {
        let (quad, m, cutoff) = stress_setup(4.0);
        let n = quad.len();
        let psi = vec![1.0; n];
        let grads = vec![0.0; n * quad.conf_dim()];
        for form in [StressForm::Kramers, StressForm::Divergence, StressForm::Gradient] {
            let (tau, neg) =
                kramers_stress(&quad, &m, &cutoff, 1.3, 1.0, &psi, Some(&grads), form).unwrap();
            assert_eq!(neg, 0);
            assert!(tau.amax() <= 1e-10, "{form:?}: {}", tau.amax());
        }
    }

    #[test]
    fn zero_density_gives_zero_stress() {
        let (quad, m, cutoff) = stress_setup(4.0);
        let n = quad.len();
        let psi = vec![0.0; n];
        let grads = vec![0.0; n * quad.conf_dim()];
        for form in [StressForm::Kramers, StressForm::Divergence, StressForm::Gradient] {
            let (tau, _) =
                kramers_stress(&quad, &m, &cutoff, 1.0, 2.0, &psi, Some(&grads), form).unwrap();
            assert_eq!(tau.amax(), 0.0, "{form:?}");
        }
    }

    #[test]
    fn stress_forms_agree_on_polynomials() {
        let (quad, m, cutoff) = stress_setup(4.0);
        let n = quad.len();
        let cd = quad.conf_dim();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            // random degree-2 polynomial kept inside the truncation range
            let c: Vec<f64> = (0..6).map(|_| rng.gen_range(-0.3..0.3)).collect();
            let mut psi = vec![0.0; n];
            let mut grads = vec![0.0; n * cd];
            for a in 0..n {
                let q = quad.node(a);
                psi[a] = 2.0 + c[0] + c[1] * q[0] + c[2] * q[1] + c[3] * q[0] * q[0]
                    + c[4] * q[0] * q[1]
                    + c[5] * q[1] * q[1];
                grads[a * cd] = c[1] + 2.0 * c[3] * q[0] + c[4] * q[1];
                grads[a * cd + 1] = c[2] + c[4] * q[0] + 2.0 * c[5] * q[1];
            }
            let forms = [StressForm::Kramers, StressForm::Divergence, StressForm::Gradient];
            let taus: Vec<DMatrix<f64>> = forms
                .iter()
                .map(|&f| {
                    kramers_stress(&quad, &m, &cutoff, 0.8, 1.7, &psi, Some(&grads), f)
                        .unwrap()
                        .0
                })
                .collect();
            for i in 0..3 {
                for j in 0..i {
                    let dev = (&taus[i] - &taus[j]).amax();
                    assert!(dev <= 1e-8, "forms {i} vs {j}: deviation {dev}");
                }
            }
            // the moment form is symmetric by construction
            assert!((taus[0].clone() - taus[0].transpose()).amax() <= 1e-12);
        }
    }

    #[test]
    fn gradient_form_requires_gradients() {
        let (quad, m, cutoff) = stress_setup(4.0);
        let psi = vec![1.0; quad.len()];
        assert!(kramers_stress(&quad, &m, &cutoff, 1.0, 1.0, &psi, None, StressForm::Gradient)
            .is_err());
    }

    #[test]
    fn negative_density_nodes_are_counted() {
        let (quad, m, cutoff) = stress_setup(4.0);
        let psi = vec![-1.0; quad.len()];
        let (_, neg) =
            kramers_stress(&quad, &m, &cutoff, 1.0, 1.0, &psi, None, StressForm::Divergence)
                .unwrap();
        assert_eq!(neg, quad.len());
    }
}
