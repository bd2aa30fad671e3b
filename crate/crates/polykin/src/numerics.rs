//! Shared numerical kernels: the smooth transition function used by the
//! cutoff family and the approximate Maxwellian, and Gauss quadrature rules
//! (Gauss-Jacobi via Golub-Welsch, with Gauss-Legendre as the `alpha = beta = 0`
//! special case).

use nalgebra::{DMatrix, SymmetricEigen};
use std::sync::OnceLock;

/// `exp(-1/x)` continued by zero for `x <= 0`; the building block of every
/// smooth cutoff in the crate.
fn bump_arm(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        (-1.0 / x).exp()
    }
}

/// Smooth monotone step: 0 for `x <= 0`, 1 for `x >= 1`, C-infinity in between,
/// with the symmetry `step(x) + step(1 - x) = 1`.
pub fn smooth_step(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else {
        let a = bump_arm(x);
        let b = bump_arm(1.0 - x);
        a / (a + b)
    }
}

const STEP_PANELS: usize = 64;

/// Cumulative integrals of `smooth_step` over `[0, j/64]`, `j = 0..=64`,
/// computed once with 20-point Gauss-Legendre per panel.
fn step_integral_table() -> &'static [f64; STEP_PANELS + 1] {
    static TABLE: OnceLock<[f64; STEP_PANELS + 1]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let (nodes, weights) = gauss_legendre(20);
        let mut table = [0.0; STEP_PANELS + 1];
        let h = 1.0 / STEP_PANELS as f64;
        for j in 0..STEP_PANELS {
            let (lo, hi) = (j as f64 * h, (j + 1) as f64 * h);
            let mid = 0.5 * (lo + hi);
            let half = 0.5 * (hi - lo);
            let panel: f64 = nodes
                .iter()
                .zip(&weights)
                .map(|(&x, &w)| w * smooth_step(mid + half * x))
                .sum::<f64>()
                * half;
            table[j + 1] = table[j] + panel;
        }
        table
    })
}

/// Primitive of the smooth step: `int_0^x smooth_step(t) dt`, valid for all `x`.
///
/// By the step's symmetry the full transition carries mass exactly 1/2, so for
/// `x >= 1` the primitive is `x - 1 + I(1)` with `I(1) = 1/2` taken from the
/// cached table (the table value agrees with 1/2 to quadrature accuracy).
pub fn smooth_step_integral(x: f64) -> f64 {
    let table = step_integral_table();
    if x <= 0.0 {
        0.0
    } else if x >= 1.0 {
        table[STEP_PANELS] + (x - 1.0)
    } else {
        let h = 1.0 / STEP_PANELS as f64;
        let j = ((x / h) as usize).min(STEP_PANELS - 1);
        let lo = j as f64 * h;
        let (nodes, weights) = gauss_legendre(20);
        let mid = 0.5 * (lo + x);
        let half = 0.5 * (x - lo);
        let partial: f64 = nodes
            .iter()
            .zip(&weights)
            .map(|(&t, &w)| w * smooth_step(mid + half * t))
            .sum::<f64>()
            * half;
        table[j] + partial
    }
}

/// Nodes and weights of the `n`-point Gauss-Jacobi rule for the weight
/// `(1-x)^alpha (1+x)^beta` on `[-1, 1]`, exact for polynomials of degree
/// `<= 2n - 1` against that weight. Golub-Welsch on the symmetrized Jacobi
/// recurrence matrix.
pub fn gauss_jacobi(n: usize, alpha: f64, beta: f64) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "quadrature order must be at least 1");
    assert!(alpha > -1.0 && beta > -1.0, "Jacobi exponents must exceed -1");
    let ab = alpha + beta;
    let mut diag = vec![0.0; n];
    let mut off = vec![0.0; n.saturating_sub(1)];
    diag[0] = if ab + 2.0 == 0.0 { 0.0 } else { (beta - alpha) / (ab + 2.0) };
    for k in 1..n {
        let kf = k as f64;
        let denom = (2.0 * kf + ab) * (2.0 * kf + ab + 2.0);
        diag[k] = if denom == 0.0 { 0.0 } else { (beta * beta - alpha * alpha) / denom };
    }
    for k in 1..n {
        let kf = k as f64;
        let b_k = if k == 1 {
            4.0 * (1.0 + alpha) * (1.0 + beta) / ((2.0 + ab).powi(2) * (3.0 + ab))
        } else {
            4.0 * kf * (kf + alpha) * (kf + beta) * (kf + ab)
                / ((2.0 * kf + ab).powi(2) * (2.0 * kf + ab + 1.0) * (2.0 * kf + ab - 1.0))
        };
        off[k - 1] = b_k.sqrt();
    }
    let mut jac = DMatrix::zeros(n, n);
    for k in 0..n {
        jac[(k, k)] = diag[k];
    }
    for k in 0..n - 1 {
        jac[(k, k + 1)] = off[k];
        jac[(k + 1, k)] = off[k];
    }
    let mu0 = 2f64.powf(ab + 1.0)
        * (statrs::function::gamma::ln_gamma(alpha + 1.0)
            + statrs::function::gamma::ln_gamma(beta + 1.0)
            - statrs::function::gamma::ln_gamma(ab + 2.0))
        .exp();
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let node = eig.eigenvalues[i];
            let v0 = eig.eigenvectors[(0, i)];
            (node, mu0 * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    pairs.into_iter().unzip()
}

/// `n`-point Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    gauss_jacobi(n, 0.0, 0.0)
}

/// Integrate `f` over `[a, b]` with a fixed composite Gauss-Legendre rule
/// (`panels` panels, 20 points each). Deterministic; used where a closed form
/// is unavailable but the integrand is smooth.
pub fn integrate_panels<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
    let (nodes, weights) = gauss_legendre(20);
    let h = (b - a) / panels as f64;
    let mut sum = 0.0;
    for j in 0..panels {
        let lo = a + j as f64 * h;
        let mid = lo + 0.5 * h;
        let half = 0.5 * h;
        for (&x, &w) in nodes.iter().zip(&weights) {
            sum += w * f(mid + half * x) * half;
        }
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn step_endpoints_and_symmetry() {
        assert_eq!(smooth_step(-0.3), 0.0);
        assert_eq!(smooth_step(1.7), 1.0);
        for &x in &[0.1, 0.25, 0.5, 0.9] {
            assert_abs_diff_eq!(smooth_step(x) + smooth_step(1.0 - x), 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn step_integral_matches_adaptive() {
        for &x in &[0.2, 0.5, 0.8, 1.0, 2.5] {
            let oracle = crate::testutil::adaptive_simpson(&smooth_step, 0.0, x, 1e-13);
            assert_abs_diff_eq!(smooth_step_integral(x), oracle, epsilon = 1e-11);
        }
    }

    #[test]
    fn legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(6);
        // degree 11 is the exactness limit for 6 points
        let quad: f64 = x.iter().zip(&w).map(|(&x, &w)| w * x.powi(10)).sum();
        assert_abs_diff_eq!(quad, 2.0 / 11.0, epsilon = 1e-14);
    }

    #[test]
    fn jacobi_moments_match_analytic() {
        // int_{-1}^{1} (1-x)^a dx = 2^{a+1}/(a+1); first moment of the pure
        // (1-x)^a weight is -a/(a+2) times the zeroth moment.
        for &a in &[1.0, 2.0, 2.5, 6.0] {
            let (x, w) = gauss_jacobi(8, a, 0.0);
            let m0: f64 = w.iter().sum();
            let m1: f64 = x.iter().zip(&w).map(|(&x, &w)| w * x).sum();
            assert_abs_diff_eq!(m0, 2f64.powf(a + 1.0) / (a + 1.0), epsilon = 1e-12 * m0);
            assert_abs_diff_eq!(m1 / m0, -a / (a + 2.0), epsilon = 1e-13);
        }
    }

    #[test]
    fn jacobi_half_integer_beta() {
        // weight (1+x)^{1/2}: zeroth moment 2^{3/2} * 2/3
        let (_, w) = gauss_jacobi(10, 0.0, 0.5);
        let m0: f64 = w.iter().sum();
        assert_abs_diff_eq!(m0, 2f64.powf(1.5) * 2.0 / 3.0, epsilon = 1e-13);
    }
}
