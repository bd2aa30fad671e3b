//! Physical model: FENE spring potentials, the Rouse coupling matrix, the
//! material coefficient laws `mu(rho, varrho)` and `zeta(rho)`, the periodic
//! flow domain, and the problem setup with its structural validation.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::Error;

/// FENE spring potential `U(s) = -(b/2) ln(1 - 2s/b)` on `0 <= s < b/2`.
///
/// Vanishes at rest, is strictly increasing and convex, and blows up as the
/// spring approaches full extension `s -> b/2`. Standalone configuration-space
/// operations admit `b >= 2`; chains used in coupled runs require the strict
/// inequality `b > 2` (see [`FeneChain`]).
pub fn fene_potential(s: f64, b: f64) -> Result<f64, Error> {
    if b < 2.0 {
        return Err(Error::domain(format!("extensibility must satisfy b >= 2, got {b}")));
    }
    if s < 0.0 {
        return Err(Error::domain(format!("spring argument must be nonnegative, got {s}")));
    }
    if s >= 0.5 * b {
        return Err(Error::domain(format!(
            "spring beyond full extension: s = {s} >= b/2 = {}",
            0.5 * b
        )));
    }
    Ok(-0.5 * b * (1.0 - 2.0 * s / b).ln())
}

/// Derivative of the FENE potential: `U'(s) = b / (b - 2s)`.
pub fn fene_potential_deriv(s: f64, b: f64) -> Result<f64, Error> {
    if b < 2.0 {
        return Err(Error::domain(format!("extensibility must satisfy b >= 2, got {b}")));
    }
    if s < 0.0 {
        return Err(Error::domain(format!("spring argument must be nonnegative, got {s}")));
    }
    if s >= 0.5 * b {
        return Err(Error::domain(format!(
            "spring beyond full extension: s = {s} >= b/2 = {}",
            0.5 * b
        )));
    }
    Ok(b / (b - 2.0 * s))
}

/// A bead-spring chain of `K` FENE springs in dimension `d`.
///
/// Spring `j` takes conformation vectors in the open ball of radius
/// `sqrt(b_j)`; the admissible configuration domain is the product of those
/// balls. Each extensibility parameter must exceed 2 so that the Maxwellian
/// decays at the boundary at least linearly in the distance.
#[derive(Debug, Clone, PartialEq)]
pub struct FeneChain {
    b: Vec<f64>,
    dim: usize,
}

impl FeneChain {
    pub fn new(b: Vec<f64>, dim: usize) -> Result<Self, Error> {
        if b.is_empty() {
            return Err(Error::config("a chain needs at least one spring"));
        }
        if !(dim == 2 || dim == 3) {
            return Err(Error::config(format!("spatial dimension must be 2 or 3, got {dim}")));
        }
        for (j, &bj) in b.iter().enumerate() {
            if !(bj > 2.0) {
                return Err(Error::config(format!(
                    "extensibility parameter must satisfy b > 2 (spring {j} has b = {bj})"
                )));
            }
        }
        Ok(Self { b, dim })
    }

    pub fn springs(&self) -> usize {
        self.b.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn extensibility(&self, j: usize) -> f64 {
        self.b[j]
    }

    pub fn extensibilities(&self) -> &[f64] {
        &self.b
    }

    /// Radius `sqrt(b_j)` of the admissible ball of spring `j`.
    pub fn ball_radius(&self, j: usize) -> f64 {
        self.b[j].sqrt()
    }

    /// Configuration-space dimension `d * K`.
    pub fn conf_dim(&self) -> usize {
        self.dim * self.springs()
    }

    pub fn potential(&self, j: usize, s: f64) -> Result<f64, Error> {
        fene_potential(s, self.b[j])
    }

    pub fn potential_deriv(&self, j: usize, s: f64) -> Result<f64, Error> {
        fene_potential_deriv(s, self.b[j])
    }
}

/// Symmetric positive-definite coupling matrix between the springs of a
/// chain, acting on `d x K` configuration-gradient matrices by
/// right-multiplication, with cached extreme eigenvalues.
#[derive(Debug, Clone, PartialEq)]
pub struct RouseSystem {
    matrix: DMatrix<f64>,
    c1: f64,
    c2: f64,
}

impl RouseSystem {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self, Error> {
        let k = matrix.nrows();
        if k == 0 || matrix.ncols() != k {
            return Err(Error::shape("coupling matrix must be square and nonempty"));
        }
        for i in 0..k {
            for j in 0..i {
                if (matrix[(i, j)] - matrix[(j, i)]).abs() > 1e-12 * matrix.amax().max(1.0) {
                    return Err(Error::config("coupling matrix must be symmetric"));
                }
            }
        }
        let eig = matrix.clone().symmetric_eigen();
        let c1 = eig.eigenvalues.min();
        let c2 = eig.eigenvalues.max();
        if c1 <= 0.0 {
            return Err(Error::config(format!(
                "coupling matrix must be positive definite (smallest eigenvalue {c1:.3e})"
            )));
        }
        Ok(Self { matrix, c1, c2 })
    }

    /// Classical chain coupling: tridiagonal with 2 on the diagonal and -1 on
    /// the off-diagonals; `[2]` for a single spring.
    pub fn classical(springs: usize) -> Result<Self, Error> {
        let mut m = DMatrix::zeros(springs, springs);
        for i in 0..springs {
            m[(i, i)] = 2.0;
            if i + 1 < springs {
                m[(i, i + 1)] = -1.0;
                m[(i + 1, i)] = -1.0;
            }
        }
        Self::new(m)
    }

    pub fn springs(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Cached `(C1, C2)` with `C1 |B|^2 <= apply(B) : B <= C2 |B|^2`.
    pub fn coercivity_bounds(&self) -> (f64, f64) {
        (self.c1, self.c2)
    }

    /// Right-multiplication `B A` of a `d x K` matrix by the coupling matrix.
    pub fn apply(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>, Error> {
        if b.ncols() != self.springs() {
            return Err(Error::shape(format!(
                "configuration matrix has {} columns, coupling matrix expects {}",
                b.ncols(),
                self.springs()
            )));
        }
        Ok(b * &self.matrix)
    }

    /// Apply the coupling to the columns of a flat `d*K` vector viewed as a
    /// `d x K` matrix; used on configuration gradients stored contiguously.
    pub fn apply_flat(&self, grad: &[f64], dim: usize, out: &mut [f64]) {
        let k = self.springs();
        debug_assert_eq!(grad.len(), dim * k);
        debug_assert_eq!(out.len(), dim * k);
        for jo in 0..k {
            for i in 0..dim {
                let mut acc = 0.0;
                for ji in 0..k {
                    acc += grad[ji * dim + i] * self.matrix[(ji, jo)];
                }
                out[jo * dim + i] = acc;
            }
        }
    }
}

/// Viscosity law `mu(rho, varrho)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MuLaw {
    Constant { value: f64 },
    /// `base + slope * rho`, not clamped; range violations are reported by
    /// the setup validator.
    AffineRho { base: f64, slope: f64 },
    /// `base + rho_slope * rho + varrho_slope * varrho`, clamped to the
    /// declared viscosity range. The clamp is a safety device: choose ranges
    /// wide enough that it stays inactive, since an active clamp is only
    /// Lipschitz at the touching set.
    AffineClamped { base: f64, rho_slope: f64, varrho_slope: f64 },
}

/// Drag law `zeta(rho)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ZetaLaw {
    Constant { value: f64 },
    AffineRho { base: f64, slope: f64 },
    /// `base + slope * rho` clamped to the declared drag range.
    AffineClamped { base: f64, slope: f64 },
}

/// Material coefficient laws with their declared ranges and the stress
/// scaling constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialLaws {
    pub mu: MuLaw,
    pub zeta: ZetaLaw,
    /// Stress scaling constant (a multiple of Boltzmann constant times
    /// absolute temperature in the nondimensionalization).
    pub k_stress: f64,
    pub rho_min: f64,
    pub rho_max: f64,
    pub mu_min: f64,
    pub mu_max: f64,
    pub zeta_min: f64,
    pub zeta_max: f64,
    pub varrho_max: f64,
}

impl MaterialLaws {
    /// Unit laws: `mu = zeta = k = 1` with wide declared ranges.
    pub fn unit() -> Self {
        Self {
            mu: MuLaw::Constant { value: 1.0 },
            zeta: ZetaLaw::Constant { value: 1.0 },
            k_stress: 1.0,
            rho_min: 0.5,
            rho_max: 2.0,
            mu_min: 0.5,
            mu_max: 2.0,
            zeta_min: 0.5,
            zeta_max: 2.0,
            varrho_max: 10.0,
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        let positive = [
            ("k_stress", self.k_stress),
            ("rho_min", self.rho_min),
            ("mu_min", self.mu_min),
            ("zeta_min", self.zeta_min),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.rho_max < self.rho_min || self.mu_max < self.mu_min || self.zeta_max < self.zeta_min
        {
            return Err(Error::config("declared ranges must be nonempty"));
        }
        if self.varrho_max < 0.0 {
            return Err(Error::config("varrho_max must be nonnegative"));
        }
        Ok(())
    }

    pub fn mu(&self, rho: f64, varrho: f64) -> f64 {
        match &self.mu {
            MuLaw::Constant { value } => *value,
            MuLaw::AffineRho { base, slope } => base + slope * rho,
            MuLaw::AffineClamped { base, rho_slope, varrho_slope } => {
                (base + rho_slope * rho + varrho_slope * varrho).clamp(self.mu_min, self.mu_max)
            }
        }
    }

    pub fn zeta(&self, rho: f64) -> f64 {
        match &self.zeta {
            ZetaLaw::Constant { value } => *value,
            ZetaLaw::AffineRho { base, slope } => base + slope * rho,
            ZetaLaw::AffineClamped { base, slope } => {
                (base + slope * rho).clamp(self.zeta_min, self.zeta_max)
            }
        }
    }
}

/// Rectangular periodic flow domain in two dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Torus {
    pub lengths: [f64; 2],
}

impl Torus {
    pub fn new(lengths: [f64; 2]) -> Result<Self, Error> {
        if lengths.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::config("torus side lengths must be positive and finite"));
        }
        Ok(Self { lengths })
    }

    /// Square torus of side `2 pi`.
    pub fn square_2pi() -> Self {
        Self { lengths: [std::f64::consts::TAU, std::f64::consts::TAU] }
    }

    pub fn volume(&self) -> f64 {
        self.lengths[0] * self.lengths[1]
    }

    /// Wrap a point into the fundamental cell `[0, L1) x [0, L2)`.
    pub fn wrap(&self, x: [f64; 2]) -> [f64; 2] {
        let mut y = x;
        for i in 0..2 {
            y[i] = x[i].rem_euclid(self.lengths[i]);
        }
        y
    }
}

/// Built-in initial density fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialDensity {
    Constant { value: f64 },
    /// `mean + amplitude * sin(2 pi wave . x / L)`.
    Sinusoidal { mean: f64, amplitude: f64, wave: [i32; 2] },
}

impl InitialDensity {
    pub fn eval(&self, x: [f64; 2], torus: &Torus) -> f64 {
        match self {
            InitialDensity::Constant { value } => *value,
            InitialDensity::Sinusoidal { mean, amplitude, wave } => {
                let phase: f64 = (0..2)
                    .map(|i| std::f64::consts::TAU * wave[i] as f64 * x[i] / torus.lengths[i])
                    .sum();
                mean + amplitude * phase.sin()
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, InitialDensity::Constant { .. })
            || matches!(self, InitialDensity::Sinusoidal { amplitude, .. } if *amplitude == 0.0)
    }

    /// Analytic range of the field over the torus.
    pub fn range(&self) -> (f64, f64) {
        match self {
            InitialDensity::Constant { value } => (*value, *value),
            InitialDensity::Sinusoidal { mean, amplitude, wave } => {
                if wave == &[0, 0] {
                    (*mean, *mean)
                } else {
                    (mean - amplitude.abs(), mean + amplitude.abs())
                }
            }
        }
    }
}

/// Built-in initial velocity fields, described in terms of the deterministic
/// divergence-free mode ordering of the velocity basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialVelocity {
    Zero,
    /// Prescribed coefficients on basis modes, by mode index.
    Modes { coeffs: Vec<ModeCoeff> },
    /// Seeded random coefficients on the first `count` modes, scaled so the
    /// velocity has the given kinetic norm `sqrt(int |v|^2)`.
    Random { amplitude: f64, count: usize },
    /// The cellular vortex field `amplitude (sin x cos y, -cos x sin y)`
    /// scaled to the torus cell.
    TaylorGreen { amplitude: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeCoeff {
    pub index: usize,
    pub value: f64,
}

/// Built-in initial normalized configuration densities `psi-hat(x, q)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialPdf {
    Uniform { value: f64 },
    /// `base (1 + xa cos(2 pi wave . x / L) + qa cos(2 pi wave . x / L) q^1_1 / sqrt(b_1))`.
    Perturbed { base: f64, x_amplitude: f64, q_amplitude: f64, wave: [i32; 2] },
}

impl InitialPdf {
    pub fn eval(&self, x: [f64; 2], q: &[f64], chain: &FeneChain, torus: &Torus) -> f64 {
        match self {
            InitialPdf::Uniform { value } => *value,
            InitialPdf::Perturbed { base, x_amplitude, q_amplitude, wave } => {
                let phase: f64 = (0..2)
                    .map(|i| std::f64::consts::TAU * wave[i] as f64 * x[i] / torus.lengths[i])
                    .sum();
                let c = phase.cos();
                base * (1.0 + x_amplitude * c + q_amplitude * c * q[0] / chain.ball_radius(0))
            }
        }
    }
}

/// Built-in forcing fields (steady combinations of velocity basis modes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Forcing {
    None,
    Modes { coeffs: Vec<ModeCoeff> },
}

/// Selection of the Maxwellian used in the weighted mass and diffusion terms:
/// either the exact Maxwellian or its floor-regularized approximation at a
/// given index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MaxwellianMode {
    Exact,
    Approx { index: u32 },
}

/// Complete description of a run: model data, discretization levels, time
/// grid, quadrature orders, and fixed-point controls.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSetup {
    pub chain: FeneChain,
    pub rouse: RouseSystem,
    pub torus: Torus,
    pub t_final: f64,
    pub dt: f64,
    pub rho0: InitialDensity,
    pub v0: InitialVelocity,
    pub psi0: InitialPdf,
    pub forcing: Forcing,
    /// Scale the initial configuration density so its weighted total mass is 1.
    pub normalize_pdf: bool,
    /// Truncation level of the cutoff family.
    pub truncation_level: u32,
    /// Number of divergence-free velocity modes.
    pub velocity_modes: usize,
    /// Number of scalar trigonometric factors in the configuration-density basis.
    pub pdf_x_modes: usize,
    /// Maximal total degree of configuration monomials.
    pub conf_degree: usize,
    /// Total number of configuration-density modes (at most x-modes times
    /// configuration functions; 0 selects the full product).
    pub pdf_modes: usize,
    pub maxwellian: MaxwellianMode,
    pub radial_order: usize,
    pub angular_order: usize,
    /// Spatial grid points per direction (0 selects four times the largest
    /// wavenumber, the anti-aliasing size for the cubic nonlinearity).
    pub spatial_grid: usize,
    /// Characteristic integrator substeps per time window.
    pub rk4_substeps: usize,
    pub fixed_point: crate::solver::FixedPointConfig,
    pub seed: u64,
}

impl ProblemSetup {
    pub fn validate(&self) -> Result<(), Error> {
        if !(self.dt > 0.0) {
            return Err(Error::config(format!("time step must be positive, got {}", self.dt)));
        }
        if self.t_final < 0.0 {
            return Err(Error::config("final time must be nonnegative"));
        }
        if self.chain.dim() != 2 {
            return Err(Error::config(
                "coupled runs use the two-dimensional periodic domain; \
                 configuration-space operations alone support dimension 3",
            ));
        }
        if self.truncation_level == 0 {
            return Err(Error::config("truncation level must be a positive integer"));
        }
        if self.velocity_modes == 0 || self.pdf_x_modes == 0 {
            return Err(Error::config("mode counts must be positive"));
        }
        if self.rk4_substeps == 0 {
            return Err(Error::config("characteristic substep count must be positive"));
        }
        self.fixed_point.validate()?;
        Ok(())
    }
}

/// One violation found by the setup validator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub check: String,
    pub location: String,
    pub value: f64,
}

/// Report of the structural data assumptions, produced by sampling.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    /// `|weighted mass of psi0 - 1|` before any renormalization.
    pub normalization_defect: f64,
    /// Scale factor that renormalization would apply.
    pub normalization_scale: f64,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Sample the data assumptions: coefficient laws inside their declared
/// ranges, initial density inside `[rho_min, rho_max]`, initial configuration
/// density nonnegative, and the normalization defect of the weighted initial
/// mass. Report-only; nothing is rejected here.
pub fn validate_setup(
    setup: &ProblemSetup,
    laws: &MaterialLaws,
    n_samples: usize,
) -> Result<ValidationReport, Error> {
    let n = n_samples.max(2);
    let mut violations = Vec::new();
    for i in 0..n {
        let rho = laws.rho_min + (laws.rho_max - laws.rho_min) * i as f64 / (n - 1) as f64;
        for j in 0..n {
            let varrho = laws.varrho_max * j as f64 / (n - 1) as f64;
            let mu = laws.mu(rho, varrho);
            if mu < laws.mu_min || mu > laws.mu_max {
                violations.push(Violation {
                    check: "mu range".into(),
                    location: format!("rho = {rho:.6}, varrho = {varrho:.6}"),
                    value: mu,
                });
            }
        }
        let zeta = laws.zeta(rho);
        if zeta < laws.zeta_min || zeta > laws.zeta_max {
            violations.push(Violation {
                check: "zeta range".into(),
                location: format!("rho = {rho:.6}"),
                value: zeta,
            });
        }
    }

    for i in 0..n {
        for j in 0..n {
            let x = [
                setup.torus.lengths[0] * i as f64 / n as f64,
                setup.torus.lengths[1] * j as f64 / n as f64,
            ];
            let rho = setup.rho0.eval(x, &setup.torus);
            if rho < laws.rho_min || rho > laws.rho_max {
                violations.push(Violation {
                    check: "rho0 range".into(),
                    location: format!("x = ({:.6}, {:.6})", x[0], x[1]),
                    value: rho,
                });
            }
        }
    }

    // Nonnegativity of psi0 and its weighted mass on the tensor sample set.
    let quad = crate::confspace::ConfQuadrature::new(
        &setup.chain,
        setup.radial_order,
        setup.angular_order,
    )?;
    let maxwellian = crate::confspace::Maxwellian::new(&setup.chain, &quad)?;
    let mut mass = 0.0;
    let cell = setup.torus.volume() / (n * n) as f64;
    for i in 0..n {
        for j in 0..n {
            let x = [
                setup.torus.lengths[0] * i as f64 / n as f64,
                setup.torus.lengths[1] * j as f64 / n as f64,
            ];
            let zeta = laws.zeta(setup.rho0.eval(x, &setup.torus));
            for a in 0..quad.len() {
                let q = quad.node(a);
                let psi = setup.psi0.eval(x, q, &setup.chain, &setup.torus);
                if psi < 0.0 {
                    violations.push(Violation {
                        check: "psi0 nonnegativity".into(),
                        location: format!(
                            "x = ({:.6}, {:.6}), q = ({})",
                            x[0],
                            x[1],
                            q.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(", ")
                        ),
                        value: psi,
                    });
                }
                mass += cell * quad.maxwellian_weight(a) / maxwellian.partition_product() * zeta * psi;
            }
        }
    }

    Ok(ValidationReport {
        violations,
        normalization_defect: (mass - 1.0).abs(),
        normalization_scale: if mass > 0.0 { 1.0 / mass } else { f64::NAN },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{central_diff, rayleigh_extremes};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    #[test]
    fn potential_values() {
        assert_eq!(fene_potential(0.0, 2.0).unwrap(), 0.0);
        assert_abs_diff_eq!(fene_potential(0.5, 2.0).unwrap(), 2f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(fene_potential(3.0, 12.0).unwrap(), -6.0 * 0.5f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(fene_potential(3.0, 12.0).unwrap(), 4.158883, epsilon = 1e-6);
        assert!(fene_potential(1.0, 2.0).is_err()); // s >= b/2
        assert!(fene_potential(-0.1, 4.0).is_err());
        assert!(fene_potential(0.1, 1.5).is_err());
    }

    #[test]
    fn potential_deriv_values() {
        assert_eq!(fene_potential_deriv(0.0, 2.0).unwrap(), 1.0);
        assert_eq!(fene_potential_deriv(0.5, 2.0).unwrap(), 2.0);
        let d = fene_potential_deriv(0.3, 4.0).unwrap();
        let fd = central_diff(&|s| fene_potential(s, 4.0).unwrap(), 0.3, 1e-5);
        assert!((d - fd).abs() <= 1e-6 * d.abs());
    }

    #[test]
    fn potential_is_increasing_and_convex() {
        let b = 4.0;
        let grid: Vec<f64> = (0..200).map(|i| 1.9 * i as f64 / 200.0).collect();
        for w in grid.windows(2) {
            assert!(fene_potential(w[1], b).unwrap() > fene_potential(w[0], b).unwrap());
        }
        let h = 1e-4;
        for &s in &grid[2..198] {
            let second = (fene_potential(s + h, b).unwrap() - 2.0 * fene_potential(s, b).unwrap()
                + fene_potential(s - h, b).unwrap())
                / (h * h);
            assert!(second >= -1e-6);
        }
    }

    #[test]
    fn boltzmann_factor_matches_maxwellian_form() {
        // exp(-U(|q|^2/2)) = (1 - |q|^2/b)^{b/2}
        for &b in &[2.5f64, 4.0, 12.0] {
            for i in 0..50 {
                let r = b.sqrt() * 0.999 * i as f64 / 49.0;
                let lhs = (-fene_potential(0.5 * r * r, b).unwrap()).exp();
                let rhs = (1.0 - r * r / b).powf(0.5 * b);
                assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1e-30));
            }
        }
    }

    #[test]
    fn deriv_distance_sandwich() {
        // dist(q, boundary) * U'(|q|^2/2) lies in [sqrt(b)/2, sqrt(b)]
        for &b in &[3.0f64, 4.0, 12.0] {
            let rad = b.sqrt();
            for i in 0..100 {
                let r = rad * 0.9999 * i as f64 / 99.0;
                let v = (rad - r) * fene_potential_deriv(0.5 * r * r, b).unwrap();
                assert!(v >= 0.5 * rad - 1e-12 && v <= rad + 1e-12, "b={b} r={r} v={v}");
            }
        }
    }

    #[test]
    fn rouse_identity_and_small_cases() {
        let rouse = RouseSystem::new(DMatrix::identity(3, 3)).unwrap();
        let b = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(rouse.apply(&b).unwrap(), b);

        let single = RouseSystem::new(DMatrix::from_row_slice(1, 1, &[2.0])).unwrap();
        let col = DMatrix::from_row_slice(2, 1, &[1.0, 3.0]);
        let out = single.apply(&col).unwrap();
        assert_eq!(out, DMatrix::from_row_slice(2, 1, &[2.0, 6.0]));

        assert!(single.apply(&DMatrix::zeros(2, 3)).is_err());
        assert!(RouseSystem::new(DMatrix::from_row_slice(1, 1, &[-1.0])).is_err());
        assert!(RouseSystem::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0])).is_err());
    }

    #[test]
    fn rouse_linearity() {
        let rouse = RouseSystem::classical(2).unwrap();
        let b1 = DMatrix::from_row_slice(2, 2, &[0.3, -1.2, 0.7, 2.0]);
        let b2 = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, -0.4, 0.9]);
        let alpha = 1.7;
        let lhs = rouse.apply(&(&b1 * alpha + &b2)).unwrap();
        let rhs = rouse.apply(&b1).unwrap() * alpha + rouse.apply(&b2).unwrap();
        assert!((lhs - rhs).amax() <= 1e-14);
    }

    #[test]
    fn rouse_coercivity_against_eigen_oracle() {
        for k in 1..=3usize {
            let rouse = RouseSystem::classical(k).unwrap();
            let (c1, c2) = rouse.coercivity_bounds();
            let (lo, hi) = rayleigh_extremes(rouse.matrix());
            assert_abs_diff_eq!(c1, lo, epsilon = 1e-12);
            assert_abs_diff_eq!(c2, hi, epsilon = 1e-12);

            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7 + k as u64);
            for _ in 0..1000 {
                let b = DMatrix::from_fn(2, k, |_, _| rng.gen_range(-1.0..1.0));
                let ab = rouse.apply(&b).unwrap();
                let pairing = ab.component_mul(&b).sum();
                let norm2 = b.norm_squared();
                assert!(pairing >= c1 * norm2 - 1e-12);
                assert!(pairing <= c2 * norm2 + 1e-12);
            }
        }
    }

    #[test]
    fn classical_single_spring_is_two() {
        let r = RouseSystem::classical(1).unwrap();
        assert_eq!(r.matrix()[(0, 0)], 2.0);
        assert_eq!(r.coercivity_bounds(), (2.0, 2.0));
    }

    fn base_setup() -> ProblemSetup {
        ProblemSetup {
            chain: FeneChain::new(vec![4.0], 2).unwrap(),
            rouse: RouseSystem::classical(1).unwrap(),
            torus: Torus::square_2pi(),
            t_final: 0.1,
            dt: 0.01,
            rho0: InitialDensity::Constant { value: 1.0 },
            v0: InitialVelocity::Zero,
            psi0: InitialPdf::Uniform { value: 1.0 },
            forcing: Forcing::None,
            normalize_pdf: false,
            truncation_level: 4,
            velocity_modes: 4,
            pdf_x_modes: 5,
            conf_degree: 2,
            pdf_modes: 0,
            maxwellian: MaxwellianMode::Exact,
            radial_order: 8,
            angular_order: 8,
            spatial_grid: 0,
            rk4_substeps: 1,
            fixed_point: crate::solver::FixedPointConfig::default(),
            seed: 0,
        }
    }

    #[test]
    fn validator_passes_unit_setup() {
        let setup = base_setup();
        let report = validate_setup(&setup, &MaterialLaws::unit(), 8).unwrap();
        assert!(report.passed(), "{:?}", report.violations);
        // psi0 = 1, zeta = 1, int M = 1: mass = |Omega|, defect reported
        // before renormalization
        let expected = setup.torus.volume() - 1.0;
        assert_abs_diff_eq!(report.normalization_defect, expected, epsilon = 1e-6);
    }

    #[test]
    fn validator_flags_mu_below_declared_range() {
        let setup = base_setup();
        let mut laws = MaterialLaws::unit();
        laws.mu = MuLaw::AffineRho { base: 0.0, slope: 1.0 }; // mu = rho
        laws.rho_min = 0.1;
        laws.mu_min = 0.5;
        let report = validate_setup(&setup, &laws, 8).unwrap();
        assert!(report
            .violations
            .iter()
            .any(|v| v.check == "mu range" && v.location.starts_with("rho = 0.1")));
    }

    #[test]
    fn validator_flags_negative_pdf_lobe() {
        let mut setup = base_setup();
        setup.psi0 = InitialPdf::Perturbed {
            base: 1.0,
            x_amplitude: 2.0,
            q_amplitude: 0.0,
            wave: [1, 0],
        };
        let report = validate_setup(&setup, &MaterialLaws::unit(), 8).unwrap();
        let hit = report.violations.iter().find(|v| v.check == "psi0 nonnegativity");
        assert!(hit.is_some());
        assert!(hit.unwrap().value < 0.0);
        assert!(hit.unwrap().location.contains("x ="));
    }

    #[test]
    fn torus_wrap() {
        let t = Torus::square_2pi();
        let w = t.wrap([-0.5, 7.0]);
        assert!(w[0] >= 0.0 && w[0] < t.lengths[0]);
        assert!(w[1] >= 0.0 && w[1] < t.lengths[1]);
        assert_abs_diff_eq!(w[0], t.lengths[0] - 0.5, epsilon = 1e-12);
    }
}
