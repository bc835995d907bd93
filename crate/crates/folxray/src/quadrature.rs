//! Quadrature helpers: Gauss-Legendre rules, the compactly supported bump
//! profile, and direction grids.

use std::f64::consts::PI;

/// Gauss-Legendre nodes and weights on [-1, 1].
///
/// Newton iteration on the Legendre recurrence; good to machine precision
/// for the modest orders used here.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = (n + 1) / 2;
    for k in 0..m {
        // Chebyshev-like initial guess.
        let mut x = (PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Evaluate P_n and P_n' at x by upward recurrence.
            let mut p0 = 1.0;
            let mut p1 = x;
            for j in 2..=n {
                let jf = j as f64;
                let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[k] = -x;
        nodes[n - 1 - k] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[k] = w;
        weights[n - 1 - k] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Gauss-Legendre rule mapped to [a, b].
pub fn gauss_legendre_on(a: f64, b: f64, n: usize) -> Vec<(f64, f64)> {
    let (x, w) = gauss_legendre(n);
    let c = 0.5 * (a + b);
    let hw = 0.5 * (b - a);
    x.iter()
        .zip(&w)
        .map(|(&t, &u)| (c + hw * t, hw * u))
        .collect()
}

fn smoothstep5(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * u * (10.0 + u * (-15.0 + 6.0 * u))
}

/// Fixed polynomial-spline bump: 1 on [-1, 1], support in [-2, 2],
/// C^2 quintic transition on 1 <= |s| <= 2.
pub fn bump_profile(s: f64) -> f64 {
    let a = s.abs();
    if a <= 1.0 {
        1.0
    } else if a >= 2.0 {
        0.0
    } else {
        1.0 - smoothstep5(a - 1.0)
    }
}

/// C-infinity step: 0 for u <= 0, 1 for u >= 1.
pub fn smooth_step_inf(u: f64) -> f64 {
    fn e(u: f64) -> f64 {
        if u <= 0.0 {
            0.0
        } else {
            (-1.0 / u).exp()
        }
    }
    let a = e(u);
    let b = e(1.0 - u);
    if a == 0.0 && b == 0.0 {
        0.0
    } else {
        a / (a + b)
    }
}

/// Roughly equidistributed unit vectors on S^2 (Fibonacci lattice).
pub fn fibonacci_sphere(n: usize) -> Vec<[f64; 3]> {
    let golden = (1.0 + 5.0f64.sqrt()) / 2.0;
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = 2.0 * PI * (i as f64 / golden).fract();
            [r * phi.cos(), r * phi.sin(), z]
        })
        .collect()
}

/// Node count resolving `phase_span` radians of oscillation, at least `base`.
pub fn oscillation_nodes(phase_span: f64, base: usize) -> usize {
    let need = (phase_span.abs() / (2.0 * PI) * 8.0).ceil() as usize;
    need.max(base).min(4_000_000)
}
