//! Shared oracles and fixtures for the integration suites. The oracles are
//! deliberately implemented by independent routes from the library code they
//! check.

#![allow(dead_code)]

use polykin::model::{
    FeneChain, Forcing, InitialDensity, InitialPdf, InitialVelocity, MaterialLaws, MaxwellianMode,
    ModeCoeff, MuLaw, ProblemSetup, RouseSystem, Torus, ZetaLaw,
};
use polykin::solver::FixedPointConfig;

/// Extreme Rayleigh quotients of a symmetric matrix by power iteration with
/// a spectral shift; independent of the library's eigensolver path.
pub fn rayleigh_extremes(a: &nalgebra::DMatrix<f64>) -> (f64, f64) {
    let n = a.nrows();
    let power = |m: &nalgebra::DMatrix<f64>| -> f64 {
        let mut v = nalgebra::DVector::from_fn(n, |i, _| 1.0 + 1e-3 * (i as f64 + 1.0)).normalize();
        let mut lambda = 0.0;
        for _ in 0..50_000 {
            let w = m * &v;
            let norm = w.norm();
            if norm == 0.0 {
                return 0.0;
            }
            let next = w / norm;
            lambda = (m * &next).dot(&next);
            if (&next - &v).norm() < 1e-15 {
                break;
            }
            v = next;
        }
        lambda
    };
    let sigma = 2.0 * a.amax() * n as f64 + 1.0;
    let largest = power(a);
    let shifted = nalgebra::DMatrix::identity(n, n) * sigma - a;
    (sigma - power(&shifted), largest)
}

/// The reference small-data fixture: unit laws, constant density, uniform
/// configuration density, two small velocity modes, no forcing.
pub fn reference_setup(dt: f64, t_final: f64) -> (ProblemSetup, MaterialLaws) {
    let setup = ProblemSetup {
        chain: FeneChain::new(vec![4.0], 2).expect("valid chain"),
        rouse: RouseSystem::classical(1).expect("valid coupling"),
        torus: Torus::square_2pi(),
        t_final,
        dt,
        rho0: InitialDensity::Constant { value: 1.0 },
        v0: InitialVelocity::Modes {
            coeffs: vec![ModeCoeff { index: 0, value: 0.01 }, ModeCoeff { index: 3, value: 0.005 }],
        },
        psi0: InitialPdf::Uniform { value: 1.0 },
        forcing: Forcing::None,
        normalize_pdf: false,
        truncation_level: 4,
        velocity_modes: 4,
        pdf_x_modes: 9,
        conf_degree: 4,
        pdf_modes: 0,
        maxwellian: MaxwellianMode::Exact,
        radial_order: 8,
        angular_order: 12,
        spatial_grid: 0,
        rk4_substeps: 1,
        fixed_point: FixedPointConfig { tolerance: 1e-12, max_iterations: 40, damping: 1.0 },
        seed: 7,
    };
    (setup, MaterialLaws::unit())
}

/// The smooth non-equilibrium fixture: transported sinusoidal density,
/// density- and polymer-density-dependent coefficients, cellular initial
/// velocity, perturbed configuration density.
pub fn coupled_setup(dt: f64, t_final: f64) -> (ProblemSetup, MaterialLaws) {
    let mut laws = MaterialLaws::unit();
    laws.mu = MuLaw::AffineClamped { base: 1.0, rho_slope: 0.1, varrho_slope: 0.05 };
    laws.zeta = ZetaLaw::AffineClamped { base: 1.0, slope: 0.1 };
    let setup = ProblemSetup {
        chain: FeneChain::new(vec![4.0], 2).expect("valid chain"),
        rouse: RouseSystem::classical(1).expect("valid coupling"),
        torus: Torus::square_2pi(),
        t_final,
        dt,
        rho0: InitialDensity::Sinusoidal { mean: 1.2, amplitude: 0.3, wave: [1, 0] },
        v0: InitialVelocity::TaylorGreen { amplitude: 0.05 },
        psi0: InitialPdf::Perturbed { base: 1.0, x_amplitude: 0.05, q_amplitude: 0.05, wave: [1, 0] },
        forcing: Forcing::None,
        normalize_pdf: false,
        truncation_level: 4,
        velocity_modes: 8,
        pdf_x_modes: 9,
        conf_degree: 4,
        pdf_modes: 0,
        maxwellian: MaxwellianMode::Exact,
        radial_order: 8,
        angular_order: 12,
        spatial_grid: 0,
        rk4_substeps: 2,
        fixed_point: FixedPointConfig { tolerance: 1e-12, max_iterations: 40, damping: 1.0 },
        seed: 7,
    };
    (setup, laws)
}

/// The equilibrium fixture: resting fluid, uniform configuration density,
/// constant unit density.
pub fn equilibrium_setup(dt: f64, t_final: f64) -> (ProblemSetup, MaterialLaws) {
    let (mut setup, laws) = reference_setup(dt, t_final);
    setup.v0 = InitialVelocity::Zero;
    (setup, laws)
}
