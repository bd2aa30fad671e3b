//! Independent oracles for unit tests. Everything here is deliberately
//! implemented by a different route than the code under test.

/// Adaptive Simpson quadrature with absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
        let c = 0.5 * (a + b);
        (b - a) / 6.0 * (f(a) + 4.0 * f(c) + f(b))
    }
    fn recurse<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, whole: f64, tol: f64, depth: usize) -> f64 {
        let c = 0.5 * (a + b);
        let left = simpson(f, a, c);
        let right = simpson(f, c, b);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            left + right + (left + right - whole) / 15.0
        } else {
            recurse(f, a, c, left, 0.5 * tol, depth - 1)
                + recurse(f, c, b, right, 0.5 * tol, depth - 1)
        }
    }
    recurse(f, a, b, simpson(f, a, b), tol, 48)
}

/// Central finite difference of `f` at `x` with step `h`.
pub fn central_diff<F: Fn(f64) -> f64>(f: &F, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Extreme Rayleigh quotients of a symmetric matrix by power iteration with
/// shift-and-deflate; independent of any eigensolver library.
pub fn rayleigh_extremes(a: &nalgebra::DMatrix<f64>) -> (f64, f64) {
    let n = a.nrows();
    let power = |m: &nalgebra::DMatrix<f64>| -> f64 {
        let mut v = nalgebra::DVector::from_element(n, 1.0).normalize();
        // deterministic start; perturb to avoid orthogonal-start stalls
        for i in 0..n {
            v[i] += 1e-3 * (i as f64 + 1.0);
        }
        v = v.normalize();
        let mut lambda = 0.0;
        for _ in 0..20_000 {
            let w = m * &v;
            let norm = w.norm();
            if norm == 0.0 {
                return 0.0;
            }
            let next = w / norm;
            lambda = (m * &next).dot(&next);
            if (&next - &v).norm() < 1e-15 {
                return lambda;
            }
            v = next;
        }
        lambda
    };
    // largest eigenvalue of A, then of sigma*I - A to get the smallest
    let sigma = 2.0 * a.amax() * n as f64 + 1.0;
    let largest = power(a);
    let shifted = nalgebra::DMatrix::identity(n, n) * sigma - a;
    let smallest = sigma - power(&shifted);
    (smallest, largest)
}
