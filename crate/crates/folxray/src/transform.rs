//! Geodesic ray transform: smooth test phantoms, integration of a scalar
//! field along traced geodesics, and sinograms sampled on the (base point,
//! foliation slope, leaf angle) chart used by the localized normal operator.

use crate::error::{Error, Result};
use crate::geometry::{compose_tangent, leaf_frame, trace_geodesic, Ball, GeometrySpec, V3};
use crate::grid::ScalarField;
use crate::quadrature::smooth_step_inf;
use rayon::prelude::*;
use std::collections::HashMap;

/// Isotropic Gaussian bump A exp(-|z - c|^2 / sigma^2).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bump {
    pub center: V3,
    pub sigma: f64,
    pub amplitude: f64,
}

impl Bump {
    fn eval(&self, z: &V3) -> f64 {
        self.amplitude * (-(z - self.center).norm_squared() / (self.sigma * self.sigma)).exp()
    }

    /// Radius beyond which the bump is below the soft-support threshold.
    fn effective_radius(&self, threshold: f64) -> f64 {
        if self.amplitude.abs() <= threshold {
            return 0.0;
        }
        self.sigma * (self.amplitude.abs() / threshold).ln().sqrt()
    }
}

/// Smooth compactly-supported test functions.
#[derive(Clone, Debug, PartialEq)]
pub enum Phantom {
    Bumps(Vec<Bump>),
    /// amplitude inside |z - center| <= radius - width, zero outside the
    /// ball of the given radius, with a C-infinity transition between.
    SmoothedBall {
        center: V3,
        radius: f64,
        width: f64,
        amplitude: f64,
    },
}

/// Threshold under which phantom tails are treated as zero for support
/// checks.
pub const SUPPORT_THRESHOLD: f64 = 1e-8;

impl Phantom {
    pub fn gaussian(center: V3, sigma: f64, amplitude: f64) -> Self {
        Phantom::Bumps(vec![Bump {
            center,
            sigma,
            amplitude,
        }])
    }

    /// Check that the phantom is (softly) supported inside the given ball.
    pub fn check_supported_in(&self, ball: &Ball) -> Result<()> {
        let ok = match self {
            Phantom::Bumps(bumps) => bumps.iter().all(|b| {
                (b.center - ball.center).norm() + b.effective_radius(SUPPORT_THRESHOLD)
                    <= ball.radius + 1e-12
            }),
            Phantom::SmoothedBall { center, radius, .. } => {
                (center - ball.center).norm() + radius <= ball.radius + 1e-12
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(
                "phantom support reaches outside the target domain".into(),
            ))
        }
    }
}

impl ScalarField for Phantom {
    fn eval(&self, z: &V3) -> f64 {
        match self {
            Phantom::Bumps(bumps) => bumps.iter().map(|b| b.eval(z)).sum(),
            Phantom::SmoothedBall {
                center,
                radius,
                width,
                amplitude,
            } => {
                let d = (z - center).norm();
                amplitude * smooth_step_inf((radius - d) / width)
            }
        }
    }
}

/// Integral of the field along the geodesic through (z, v), over the full
/// chord inside the extended domain.
pub fn xray(spec: &GeometrySpec, z: &V3, v: &V3, field: &dyn ScalarField) -> Result<f64> {
    let trace = trace_geodesic(spec, z, v)?;
    Ok(trace.integrate(|_, p| field.eval(p)))
}

/// Ray direction at base z for foliation slope lambda and leaf angle theta:
/// v = lambda T(z) + omega(theta) with omega metric-unit in the leaf.
pub fn ray_direction(spec: &GeometrySpec, z: &V3, lambda: f64, theta: f64) -> Result<V3> {
    let frame = leaf_frame(spec, z)?;
    compose_tangent(spec, z, lambda, &frame.omega(theta))
}

/// Supplier of ray-transform values on the (base, slope, angle) chart.
pub trait RaySource: Sync {
    fn value(&self, base_index: usize, lambda: f64, theta: f64) -> Result<f64>;
    /// Map an arbitrary base point to its index, if this source knows it.
    fn base_index(&self, z: &V3) -> Result<usize>;
}

/// Ray source that traces geodesics through an analytic field on demand.
pub struct AnalyticRays<'a> {
    pub spec: &'a GeometrySpec,
    pub field: &'a dyn ScalarField,
    pub bases: Vec<V3>,
    lookup: HashMap<[u64; 3], usize>,
}

impl<'a> AnalyticRays<'a> {
    pub fn new(spec: &'a GeometrySpec, field: &'a dyn ScalarField, bases: Vec<V3>) -> Self {
        let lookup = base_lookup(&bases);
        AnalyticRays {
            spec,
            field,
            bases,
            lookup,
        }
    }
}

impl RaySource for AnalyticRays<'_> {
    fn value(&self, base_index: usize, lambda: f64, theta: f64) -> Result<f64> {
        let z = self.bases[base_index];
        let v = ray_direction(self.spec, &z, lambda, theta)?;
        xray(self.spec, &z, &v, self.field)
    }

    fn base_index(&self, z: &V3) -> Result<usize> {
        lookup_base(&self.lookup, z)
    }
}

fn key_of(z: &V3) -> [u64; 3] {
    [z.x.to_bits(), z.y.to_bits(), z.z.to_bits()]
}

fn base_lookup(bases: &[V3]) -> HashMap<[u64; 3], usize> {
    bases
        .iter()
        .enumerate()
        .map(|(i, z)| (key_of(z), i))
        .collect()
}

fn lookup_base(lookup: &HashMap<[u64; 3], usize>, z: &V3) -> Result<usize> {
    lookup.get(&key_of(z)).copied().ok_or_else(|| {
        Error::Coverage(format!(
            "no rays recorded at base point ({:.6}, {:.6}, {:.6})",
            z.x, z.y, z.z
        ))
    })
}

/// Ray-transform samples on a product chart: for every base point, values
/// on a fixed slope grid times a uniform periodic angle grid.
#[derive(Clone, Debug)]
pub struct Sinogram {
    pub bases: Vec<V3>,
    /// Strictly increasing slope nodes, shared by all bases.
    pub lambdas: Vec<f64>,
    /// Number of uniform angles theta_j = 2 pi j / n_theta.
    pub n_theta: usize,
    /// Values indexed by (base, slope, angle), angle fastest.
    pub values: Vec<f64>,
    /// Digest of the geometry the data was traced in.
    pub geometry: String,
    lookup: HashMap<[u64; 3], usize>,
}

impl Sinogram {
    pub fn new(
        bases: Vec<V3>,
        lambdas: Vec<f64>,
        n_theta: usize,
        values: Vec<f64>,
        geometry: String,
    ) -> Self {
        assert_eq!(values.len(), bases.len() * lambdas.len() * n_theta);
        let lookup = base_lookup(&bases);
        Sinogram {
            bases,
            lambdas,
            n_theta,
            values,
            geometry,
            lookup,
        }
    }

    pub fn at(&self, b: usize, l: usize, t: usize) -> f64 {
        self.values[(b * self.lambdas.len() + l) * self.n_theta + t]
    }
}

impl RaySource for Sinogram {
    /// Linear interpolation in slope, periodic linear interpolation in
    /// angle.  Slopes outside the recorded range are a coverage error.
    fn value(&self, base_index: usize, lambda: f64, theta: f64) -> Result<f64> {
        let nl = self.lambdas.len();
        let lo = self.lambdas[0];
        let hi = self.lambdas[nl - 1];
        let eps = 1e-9 * (hi - lo).max(1.0);
        if lambda < lo - eps || lambda > hi + eps {
            return Err(Error::Coverage(format!(
                "slope {:.6} outside recorded range [{:.6}, {:.6}]",
                lambda, lo, hi
            )));
        }
        let lam = lambda.clamp(lo, hi);
        // Bracketing slope interval.
        let mut il = match self
            .lambdas
            .binary_search_by(|a| a.partial_cmp(&lam).unwrap())
        {
            Ok(i) => i.min(nl - 2),
            Err(i) => i.saturating_sub(1).min(nl - 2),
        };
        if nl == 1 {
            il = 0;
        }
        let (l0, l1, tl) = if nl == 1 {
            (0, 0, 0.0)
        } else {
            let t = (lam - self.lambdas[il]) / (self.lambdas[il + 1] - self.lambdas[il]);
            (il, il + 1, t)
        };
        let tau = theta.rem_euclid(2.0 * std::f64::consts::PI) * self.n_theta as f64
            / (2.0 * std::f64::consts::PI);
        let j0 = (tau.floor() as usize) % self.n_theta;
        let j1 = (j0 + 1) % self.n_theta;
        let tt = tau - tau.floor();
        let v = |l: usize, j: usize| self.at(base_index, l, j);
        Ok((1.0 - tl) * ((1.0 - tt) * v(l0, j0) + tt * v(l0, j1))
            + tl * ((1.0 - tt) * v(l1, j0) + tt * v(l1, j1)))
    }

    fn base_index(&self, z: &V3) -> Result<usize> {
        lookup_base(&self.lookup, z)
    }
}

/// Trace all rays of the chart through an analytic field, in parallel over
/// base points.
pub fn forward_sinogram(
    spec: &GeometrySpec,
    field: &dyn ScalarField,
    bases: Vec<V3>,
    lambdas: Vec<f64>,
    n_theta: usize,
) -> Result<Sinogram> {
    let per_base: Result<Vec<Vec<f64>>> = bases
        .par_iter()
        .map(|z| {
            let mut row = Vec::with_capacity(lambdas.len() * n_theta);
            for &lambda in &lambdas {
                for j in 0..n_theta {
                    let theta = 2.0 * std::f64::consts::PI * j as f64 / n_theta as f64;
                    let v = ray_direction(spec, z, lambda, theta)?;
                    row.push(xray(spec, z, &v, field)?);
                }
            }
            Ok(row)
        })
        .collect();
    let values: Vec<f64> = per_base?.into_iter().flatten().collect();
    Ok(Sinogram::new(bases, lambdas, n_theta, values, spec.digest()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lab() -> GeometrySpec {
        GeometrySpec::default_lab()
    }

    /// Straight-line integral of a Gaussian bump has the closed form
    /// A sigma sqrt(pi) exp(-|d_perp|^2 / sigma^2) / |v|.
    fn gaussian_line_integral(b: &Bump, z: &V3, v: &V3) -> f64 {
        let d = z - b.center;
        let dpar = d.dot(v) / v.norm();
        let dperp2 = d.norm_squared() - dpar * dpar;
        b.amplitude * b.sigma * std::f64::consts::PI.sqrt()
            * (-dperp2 / (b.sigma * b.sigma)).exp()
            / v.norm()
    }

    #[test]
    fn xray_matches_gaussian_closed_form() {
        let g = lab();
        let b = Bump {
            center: V3::new(2.0, 0.1, -0.05),
            sigma: 0.2,
            amplitude: 1.3,
        };
        let field = Phantom::Bumps(vec![b]);
        let z = V3::new(1.9, -0.2, 0.3);
        let v = V3::new(0.4, 1.0, -0.3);
        let got = xray(&g, &z, &v, &field).unwrap();
        let expect = gaussian_line_integral(&b, &z, &v);
        assert!((got - expect).abs() < 1e-6, "{} vs {}", got, expect);
    }

    #[test]
    fn xray_scales_inversely_with_speed() {
        let g = lab();
        let field = Phantom::gaussian(V3::new(2.0, 0.0, 0.0), 0.2, 1.0);
        let z = V3::new(2.0, -0.3, 0.0);
        let v = V3::new(0.2, 1.0, 0.1);
        let i1 = xray(&g, &z, &v, &field).unwrap();
        let i2 = xray(&g, &z, &(v * 2.0), &field).unwrap();
        assert!((i1 - 2.0 * i2).abs() < 1e-9);
    }

    #[test]
    fn ray_direction_has_unit_slope_derivative() {
        let g = lab();
        let z = V3::new(2.1, 0.4, -0.2);
        let v = ray_direction(&g, &z, 0.7, 1.1).unwrap();
        let grad = match &g.foliation {
            crate::geometry::FoliationFamily::SquaredDistance { center, .. } => {
                (z - center) * 2.0
            }
        };
        assert!((grad.dot(&v) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn sinogram_interpolation_hits_nodes_exactly() {
        let g = lab();
        let field = Phantom::gaussian(V3::new(2.0, 0.0, 0.0), 0.25, 1.0);
        let bases = vec![V3::new(1.9, 0.1, 0.0), V3::new(2.2, -0.3, 0.2)];
        let lambdas = vec![-0.4, -0.1, 0.2, 0.5];
        let sg = forward_sinogram(&g, &field, bases.clone(), lambdas.clone(), 6).unwrap();
        let rays = AnalyticRays::new(&g, &field, bases.clone());
        for (bi, _) in bases.iter().enumerate() {
            for (li, &lam) in lambdas.iter().enumerate() {
                for j in 0..6 {
                    let th = 2.0 * std::f64::consts::PI * j as f64 / 6.0;
                    let a = sg.value(bi, lam, th).unwrap();
                    let b = rays.value(bi, lam, th).unwrap();
                    assert!((a - b).abs() < 1e-12);
                    assert!((a - sg.at(bi, li, j)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn sinogram_rejects_out_of_range_slopes() {
        let g = lab();
        let field = Phantom::gaussian(V3::new(2.0, 0.0, 0.0), 0.25, 1.0);
        let sg = forward_sinogram(&g, &field, vec![V3::new(2.0, 0.0, 0.0)], vec![-0.2, 0.2], 4)
            .unwrap();
        assert!(matches!(
            sg.value(0, 0.8, 0.0),
            Err(Error::Coverage(_))
        ));
    }

    #[test]
    fn support_check() {
        let dom = Ball::new(V3::new(2.0, 0.0, 0.0), 1.0);
        assert!(Phantom::gaussian(V3::new(2.0, 0.0, 0.0), 0.2, 1.0)
            .check_supported_in(&dom)
            .is_ok());
        assert!(Phantom::gaussian(V3::new(2.0, 0.0, 0.0), 0.5, 1.0)
            .check_supported_in(&dom)
            .is_err());
        assert!(Phantom::gaussian(V3::new(2.8, 0.0, 0.0), 0.2, 1.0)
            .check_supported_in(&dom)
            .is_err());
    }
}
