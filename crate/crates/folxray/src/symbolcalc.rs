//! Symbol calculus for the attenuated normal operator: the full symbol by
//! oscillatory quadrature on traced geodesics, the principal symbol in the
//! rescaled variables, its closed form for the matched Gaussian localizer,
//! the high-frequency (order -1) limit, a plane-wave cross-check, and the
//! ellipticity certificate.

use crate::error::{Error, Result};
use crate::geometry::{alpha_dir, leaf_frame, GeometrySpec, LeafFrame, V3};
use crate::modnormal::{NormalOperator, WeightVariant};
use crate::quadrature::{gauss_legendre_on, oscillation_nodes};
use num_complex::Complex64;
use rayon::prelude::*;
use std::f64::consts::PI;

/// One evaluation of a symbol at a phase-space point.
#[derive(Clone, Copy, Debug)]
pub struct SymbolSample {
    pub z: V3,
    pub xi: f64,
    pub eta: [f64; 2],
    /// Semiclassical parameter; 0 marks a principal-symbol value.
    pub h: f64,
    pub value: Complex64,
    pub variant: WeightVariant,
}

/// Leaf curvatures alpha(z, 0, omega(theta)) on the angle grid, shared by
/// all symbol quadratures at a base point.
struct LeafData {
    frame: LeafFrame,
    thetas: Vec<f64>,
    alphas: Vec<f64>,
}

fn leaf_data(spec: &GeometrySpec, z: &V3, n_theta: usize) -> Result<LeafData> {
    let frame = leaf_frame(spec, z)?;
    let thetas: Vec<f64> = (0..n_theta)
        .map(|j| 2.0 * PI * j as f64 / n_theta as f64)
        .collect();
    let alphas = thetas
        .iter()
        .map(|&t| alpha_dir(spec, z, &frame.omega(t)))
        .collect();
    Ok(LeafData {
        frame,
        thetas,
        alphas,
    })
}

/// Principal symbol
///   a0(z, xi, eta) = int exp(i(xi(lh th + a th^2) + (eta.w) th))
///                        exp(-(lh th + a th^2)) chi(lh) dth dlh dtheta
/// evaluated by an exact separation of the (th, lh) double integral into
/// two 1-d oscillatory integrals via u = th + lh/(2a).
pub fn principal_symbol(op: &NormalOperator, z: &V3, xi: f64, eta: [f64; 2]) -> Result<Complex64> {
    let ld = leaf_data(op.spec, z, op.cfg.n_theta)?;
    let dtheta = 2.0 * PI / op.cfg.n_theta as f64;
    let q = Complex64::new(1.0, -xi);
    let (lo, hi) = op.cfg.cutoff.support();
    let mut acc = Complex64::new(0.0, 0.0);
    for (j, &theta) in ld.thetas.iter().enumerate() {
        let a = ld.alphas[j];
        let mu = eta[0] * theta.cos() + eta[1] * theta.sin();
        // I_u = int exp(-q a u^2 + i mu u) du over |u| <= U.
        let u_max = (37.0 / a).sqrt();
        let n_u = oscillation_nodes(mu.abs() * 2.0 * u_max + xi.abs() * a * u_max * u_max, 64);
        let du = 2.0 * u_max / n_u as f64;
        let mut iu = Complex64::new(0.0, 0.0);
        for k in 0..=n_u {
            let u = -u_max + du * k as f64;
            let w = if k == 0 || k == n_u { 0.5 } else { 1.0 };
            iu += Complex64::new(0.0, mu * u).exp() * (-(q * (a * u * u))).exp() * (w * du);
        }
        // I_w = int chi(lh) exp(q lh^2/(4a) - i mu lh/(2a)) dlh over supp chi.
        let lmax = lo.abs().max(hi.abs());
        let n_w = oscillation_nodes(
            (xi.abs() * lmax * lmax / (4.0 * a) + mu.abs() * lmax / (2.0 * a)) * 2.0,
            64,
        );
        let mut iw = Complex64::new(0.0, 0.0);
        for &(lh, w) in &gauss_legendre_on(lo, hi, n_w) {
            let chi = op.cfg.cutoff.eval(a, lh);
            if chi == 0.0 {
                continue;
            }
            let e = q * (lh * lh / (4.0 * a)) - Complex64::new(0.0, mu * lh / (2.0 * a));
            iw += e.exp() * (chi * w);
        }
        acc += iu * iw * dtheta;
    }
    Ok(acc)
}

/// Closed form of the principal symbol for the alpha-matched Gaussian
/// localizer (tail truncation by the plateau bump ignored):
///   a0 = 2 pi int (1 + xi^2)^{-1/2}
///               exp(-(eta.w)^2 / (2 a(w) (1 + xi^2))) dtheta.
/// The square-root power makes the two-variable Gaussian integral come out
/// exactly; it also matches the order -1 high-frequency behavior.
pub fn gaussian_closed_form(op: &NormalOperator, z: &V3, xi: f64, eta: [f64; 2]) -> Result<f64> {
    if !op.cfg.cutoff.alpha_matched || op.cfg.cutoff.center != 0.0 {
        return Err(Error::Argument(
            "closed form requires the centered alpha-matched localizer".into(),
        ));
    }
    let ld = leaf_data(op.spec, z, op.cfg.n_theta)?;
    let dtheta = 2.0 * PI / op.cfg.n_theta as f64;
    let mut acc = 0.0;
    for (j, &theta) in ld.thetas.iter().enumerate() {
        let a = ld.alphas[j];
        let mu = eta[0] * theta.cos() + eta[1] * theta.sin();
        acc += (1.0 + xi * xi).powf(-0.5)
            * (-(mu * mu) / (2.0 * a * (1.0 + xi * xi))).exp()
            * dtheta;
    }
    Ok(2.0 * PI * acc)
}

/// Constant L such that |a0(R zhat)| ~ 2 pi L / R as R grows, obtained by
/// integrating the localizer over the critical set of the rescaled phase
/// (the set where the phase gradient vanishes), with the stationary-phase
/// measure attached.
pub fn highfreq_limit(op: &NormalOperator, z: &V3, xi_hat: f64, eta_hat: [f64; 2]) -> Result<f64> {
    let norm = (xi_hat * xi_hat + eta_hat[0] * eta_hat[0] + eta_hat[1] * eta_hat[1]).sqrt();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::Argument("direction must be unit length".into()));
    }
    let ld = leaf_data(op.spec, z, op.cfg.n_theta)?;
    if xi_hat.abs() > 1e-9 {
        // Critical set: t = 0, xi_hat * lh + eta_hat . w = 0, all angles.
        let dtheta = 2.0 * PI / op.cfg.n_theta as f64;
        let mut acc = 0.0;
        for (j, &theta) in ld.thetas.iter().enumerate() {
            let mu = eta_hat[0] * theta.cos() + eta_hat[1] * theta.sin();
            let lh = -mu / xi_hat;
            acc += op.cfg.cutoff.eval(ld.alphas[j], lh) * dtheta / xi_hat.abs();
        }
        Ok(acc)
    } else {
        // Critical set: t = 0 at the two angles with eta_hat . w = 0, all
        // slopes; weight 1/|d(eta_hat . w)/dtheta| there.
        let eta_norm = (eta_hat[0] * eta_hat[0] + eta_hat[1] * eta_hat[1]).sqrt();
        let theta0 = eta_hat[1].atan2(eta_hat[0]);
        let (lo, hi) = op.cfg.cutoff.support();
        let mut acc = 0.0;
        for sgn in [1.0, -1.0] {
            let theta = theta0 + sgn * 0.5 * PI;
            let a = alpha_dir(op.spec, z, &ld.frame.omega(theta));
            let chi_int: f64 = gauss_legendre_on(lo, hi, 200)
                .iter()
                .map(|&(lh, w)| w * op.cfg.cutoff.eval(a, lh))
                .sum();
            acc += chi_int / eta_norm;
        }
        Ok(acc)
    }
}

/// Full symbol of the attenuated operator at (z, xi, eta, h), by direct
/// quadrature over traced geodesics.  The returned value carries the
/// density factor (h for the global variant, h x^2 for scattering); divide
/// by `density_factor` to compare against the principal symbol.
pub fn symbol_quadrature(
    op: &NormalOperator,
    z: &V3,
    xi: f64,
    eta: [f64; 2],
) -> Result<Complex64> {
    let x0 = op.spec.foliation_value(z);
    let (xi_scale, eta_scale) = phase_scales(op, x0)?;
    let ld = leaf_data(op.spec, z, op.cfg.n_theta)?;
    let dtheta = 2.0 * PI / op.cfg.n_theta as f64;
    let scale = op.lambda_scale(x0);
    // Refine the tracer so each step carries a bounded phase increment.
    // The foliation value changes at rate at most |grad x| |v|.
    let grad_bound = 2.0 * (op.spec.foliation_range().1).sqrt();
    let speed_bound = 1.0 + scale * op.cfg.cutoff.support().1.abs().max(8.0);
    let rate = xi.abs() * grad_bound * speed_bound / xi_scale
        + (eta[0] * eta[0] + eta[1] * eta[1]).sqrt() * 2.0 / eta_scale
        + 1.0;
    let mut fine = op.spec.clone();
    fine.step = (0.35 / rate).min(op.spec.step);
    let per_theta: Result<Vec<Complex64>> = (0..op.cfg.n_theta)
        .into_par_iter()
        .map(|j| {
            let theta = ld.thetas[j];
            let a = ld.alphas[j];
            let omega = ld.frame.omega(theta);
            let mut acc = Complex64::new(0.0, 0.0);
            for &(lh, wl) in op.lambda_hat_nodes() {
                let chi = op.cfg.cutoff.eval(a, lh);
                if chi == 0.0 {
                    continue;
                }
                let v = crate::geometry::compose_tangent(&fine, z, scale * lh, &omega)?;
                let trace = crate::geometry::trace_geodesic(&fine, z, &v)?;
                let mut inner = Complex64::new(0.0, 0.0);
                for (k, &_t) in trace.times.iter().enumerate() {
                    let p = &trace.points[k];
                    let xt = op.spec.foliation_value(p);
                    let damp = op.damping(x0, xt);
                    if damp < 1e-12 {
                        continue;
                    }
                    let (y1, y2) = ld.frame.leaf_coords(p);
                    let phase = xi * (xt - x0) / xi_scale + (eta[0] * y1 + eta[1] * y2) / eta_scale;
                    let wt = trapezoid_weight(&trace.times, k);
                    inner += Complex64::new(0.0, phase).exp() * (damp * wt);
                }
                acc += inner * (chi * wl * scale);
            }
            Ok(acc * dtheta)
        })
        .collect();
    Ok(per_theta?.into_iter().sum())
}

/// Phase denominators for the two variants: (for xi, for eta).
fn phase_scales(op: &NormalOperator, x0: f64) -> Result<(f64, f64)> {
    let h = op.cfg.h;
    match op.cfg.variant {
        WeightVariant::Global => Ok((h, h.sqrt())),
        WeightVariant::Scattering => {
            if x0 <= 0.0 {
                return Err(Error::Domain(
                    "scattering symbol needs a positive foliation value".into(),
                ));
            }
            Ok((x0 * x0 * h, x0 * h.sqrt()))
        }
    }
}

/// The factor by which the full symbol exceeds the principal symbol at
/// leading order.
pub fn density_factor(op: &NormalOperator, z: &V3) -> f64 {
    let h = op.cfg.h;
    match op.cfg.variant {
        WeightVariant::Global => h,
        WeightVariant::Scattering => {
            let x0 = op.spec.foliation_value(z);
            h * x0 * x0
        }
    }
}

/// Scattering principal symbol including its density prefactor h x^2; the
/// rescaled integral itself coincides with the global principal symbol at
/// the same (xi, eta).
pub fn scattering_principal(
    op: &NormalOperator,
    z: &V3,
    xi_sc: f64,
    eta_sc: [f64; 2],
) -> Result<Complex64> {
    if op.cfg.variant != WeightVariant::Scattering {
        return Err(Error::Argument(
            "scattering principal symbol requires the scattering variant".into(),
        ));
    }
    let x0 = op.spec.foliation_value(z);
    if x0 <= 0.0 {
        return Err(Error::Domain(
            "scattering symbol needs a positive foliation value".into(),
        ));
    }
    Ok(principal_symbol(op, z, xi_sc, eta_sc)? * (op.cfg.h * x0 * x0))
}

/// Estimate the full symbol by applying the operator to a plane wave
/// carried by the foliation/leaf phases at z and dividing out the carrier.
/// An entirely independent pipeline from `symbol_quadrature` (the generic
/// operator path with its own tracer refinement).
pub fn plane_wave_probe(op: &NormalOperator, z: &V3, xi: f64, eta: [f64; 2]) -> Result<Complex64> {
    let x0 = op.spec.foliation_value(z);
    let (xi_scale, eta_scale) = phase_scales(op, x0)?;
    let frame = leaf_frame(op.spec, z)?;
    // Refined tracer for the oscillation (same certificate: the digest does
    // not depend on the step).
    let grad_bound = 2.0 * (op.spec.foliation_range().1).sqrt();
    let rate = xi.abs() * grad_bound * 2.0 / xi_scale
        + (eta[0] * eta[0] + eta[1] * eta[1]).sqrt() * 2.0 / eta_scale
        + 1.0;
    let mut fine = op.spec.clone();
    fine.step = (0.35 / rate).min(op.spec.step);
    let refined = NormalOperator::new(&fine, op.cert, op.cfg.clone())?;
    let wave = |p: &V3| -> Complex64 {
        let xt = op.spec.foliation_value(p);
        let (y1, y2) = frame.leaf_coords(p);
        let phase = xi * (xt - x0) / xi_scale + (eta[0] * y1 + eta[1] * y2) / eta_scale;
        Complex64::new(0.0, phase).exp()
    };
    refined.apply_complex(&wave, z)
}

/// Ellipticity certificate: the scaled modulus |a0| (1 + |zeta|^2)^{1/2}
/// over a radial/angular sweep of frequencies and several base points.
#[derive(Clone, Debug)]
pub struct EllipticityCertificate {
    pub c_min: f64,
    pub threshold: f64,
    pub reference: f64,
    pub pass: bool,
    pub minimizer_z: V3,
    pub minimizer_zeta: (f64, [f64; 2]),
    pub samples: usize,
}

/// Sweep |zeta| up to `zeta_max` over `n_dirs` frequency directions at the
/// given base points; pass iff the scaled modulus stays above the relative
/// margin times the zero-frequency reference.
pub fn certify_ellipticity(
    op: &NormalOperator,
    points: &[V3],
    zeta_max: f64,
    n_dirs: usize,
    n_radii: usize,
    margin: f64,
) -> Result<EllipticityCertificate> {
    if points.is_empty() {
        return Err(Error::Argument("no base points".into()));
    }
    let reference = principal_symbol(op, &points[0], 0.0, [0.0, 0.0])?.norm();
    let threshold = margin * reference;
    // Frequency directions on the unit sphere in (xi, eta1, eta2).
    let dirs = crate::quadrature::fibonacci_sphere(n_dirs);
    let radii: Vec<f64> = (0..n_radii)
        .map(|i| zeta_max * (i as f64 / (n_radii - 1) as f64).powi(2))
        .collect();
    let mut tasks = Vec::new();
    for z in points {
        for d in &dirs {
            tasks.push((*z, *d));
        }
    }
    let evals: Result<Vec<(f64, V3, (f64, [f64; 2]))>> = tasks
        .par_iter()
        .map(|&(z, d)| {
            let mut local_min = f64::INFINITY;
            let mut arg = (0.0, [0.0, 0.0]);
            for &r in &radii {
                let xi = r * d[0];
                let eta = [r * d[1], r * d[2]];
                let a0 = principal_symbol(op, &z, xi, eta)?;
                let scaled = a0.norm() * (1.0 + r * r).sqrt();
                if scaled < local_min {
                    local_min = scaled;
                    arg = (xi, eta);
                }
            }
            Ok((local_min, z, arg))
        })
        .collect();
    let evals = evals?;
    let samples = points.len() * n_dirs * n_radii;
    let mut c_min = f64::INFINITY;
    let mut minimizer_z = points[0];
    let mut minimizer_zeta = (0.0, [0.0, 0.0]);
    for (v, z, arg) in evals {
        if v < c_min {
            c_min = v;
            minimizer_z = z;
            minimizer_zeta = arg;
        }
    }
    Ok(EllipticityCertificate {
        c_min,
        threshold,
        reference,
        pass: c_min > threshold,
        minimizer_z,
        minimizer_zeta,
        samples,
    })
}

fn trapezoid_weight(times: &[f64], k: usize) -> f64 {
    let n = times.len();
    if n < 2 {
        return 0.0;
    }
    if k == 0 {
        0.5 * (times[1] - times[0])
    } else if k == n - 1 {
        0.5 * (times[n - 1] - times[n - 2])
    } else {
        0.5 * (times[k + 1] - times[k - 1])
    }
}
