//! Foliated geometry on a 3-d ball: conformal metric families, convex
//! foliation functions, a fixed-step geodesic tracer, the tangent split
//! into foliation-normal and leaf-tangential parts, and the numerical
//! convexity certificate that pins the constants used downstream.

use crate::error::{Error, Result};
use nalgebra::Vector3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type V3 = Vector3<f64>;

/// Closed euclidean ball, used for both the target domain and the slightly
/// larger computational domain it sits inside.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ball {
    pub center: V3,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: V3, radius: f64) -> Self {
        Ball { center, radius }
    }

    pub fn contains(&self, z: &V3) -> bool {
        (z - self.center).norm_squared() <= self.radius * self.radius
    }
}

/// Riemannian metric g_ij = c(z) delta_ij.  The conformal factor is either
/// identically one or a unit-height Gaussian bump of strength `epsilon`
/// centered at `center`: c(z) = 1 + epsilon * exp(-|z - center|^2).
#[derive(Clone, Debug, PartialEq)]
pub enum MetricFamily {
    Euclidean,
    Conformal { epsilon: f64, center: V3 },
}

impl MetricFamily {
    pub fn factor(&self, z: &V3) -> f64 {
        match self {
            MetricFamily::Euclidean => 1.0,
            MetricFamily::Conformal { epsilon, center } => {
                1.0 + epsilon * (-(z - center).norm_squared()).exp()
            }
        }
    }

    pub fn grad_factor(&self, z: &V3) -> V3 {
        match self {
            MetricFamily::Euclidean => V3::zeros(),
            MetricFamily::Conformal { epsilon, center } => {
                let d = z - center;
                d * (-2.0 * epsilon * (-d.norm_squared()).exp())
            }
        }
    }

    /// Metric inner product g_z(u, v).
    pub fn dot(&self, z: &V3, u: &V3, v: &V3) -> f64 {
        self.factor(z) * u.dot(v)
    }

    pub fn norm(&self, z: &V3, v: &V3) -> f64 {
        self.dot(z, v, v).sqrt()
    }

    /// Geodesic acceleration -Gamma^k_ij v^i v^j.  For g = c delta the
    /// Christoffel symbols collapse to
    /// Gamma^k_ij = (d_j c delta_ki + d_i c delta_kj - d_k c delta_ij) / (2c),
    /// so the acceleration is (|v|^2 grad c - 2 (grad c . v) v) / (2c).
    pub fn geodesic_accel(&self, z: &V3, v: &V3) -> V3 {
        match self {
            MetricFamily::Euclidean => V3::zeros(),
            MetricFamily::Conformal { .. } => {
                let c = self.factor(z);
                let gc = self.grad_factor(z);
                (gc * v.norm_squared() - v * (2.0 * gc.dot(v))) / (2.0 * c)
            }
        }
    }

    fn describe(&self, out: &mut String) {
        use std::fmt::Write;
        match self {
            MetricFamily::Euclidean => out.push_str("metric=euclidean;"),
            MetricFamily::Conformal { epsilon, center } => {
                let _ = write!(
                    out,
                    "metric=conformal;eps={:.17e};mc=({:.17e},{:.17e},{:.17e});",
                    epsilon, center.x, center.y, center.z
                );
            }
        }
    }
}

/// Foliation function whose level sets are the convex leaves.  The only
/// family implemented is x(z) = |z - center|^2 + offset, whose leaves are
/// spheres around `center` and whose euclidean Hessian is 2 I everywhere.
#[derive(Clone, Debug, PartialEq)]
pub enum FoliationFamily {
    SquaredDistance { center: V3, offset: f64 },
}

impl FoliationFamily {
    pub fn value(&self, z: &V3) -> f64 {
        match self {
            FoliationFamily::SquaredDistance { center, offset } => {
                (z - center).norm_squared() + offset
            }
        }
    }

    pub fn gradient(&self, z: &V3) -> V3 {
        match self {
            FoliationFamily::SquaredDistance { center, .. } => (z - center) * 2.0,
        }
    }

    /// Hessian applied to a vector; constant 2 v for the squared-distance
    /// family.
    pub fn hessian_apply(&self, _z: &V3, v: &V3) -> V3 {
        match self {
            FoliationFamily::SquaredDistance { .. } => v * 2.0,
        }
    }

    fn describe(&self, out: &mut String) {
        use std::fmt::Write;
        match self {
            FoliationFamily::SquaredDistance { center, offset } => {
                let _ = write!(
                    out,
                    "fol=sqdist;fc=({:.17e},{:.17e},{:.17e});off={:.17e};",
                    center.x, center.y, center.z, offset
                );
            }
        }
    }
}

/// Complete geometric setup: metric, foliation, the domain of interest
/// `domain`, and the enlarged domain `extended` on which rays are traced
/// and grids are laid out.
#[derive(Clone, Debug)]
pub struct GeometrySpec {
    pub metric: MetricFamily,
    pub foliation: FoliationFamily,
    pub domain: Ball,
    pub extended: Ball,
    /// RK4 step for geodesic tracing.
    pub step: f64,
    /// Hard cap on one-sided trace time before declaring failure.
    pub t_max: f64,
}

impl GeometrySpec {
    /// Reference setup: unit ball at (2,0,0) inside a radius-1.1 ball,
    /// euclidean metric, foliation x(z) = |z|^2.
    pub fn default_lab() -> Self {
        GeometrySpec {
            metric: MetricFamily::Euclidean,
            foliation: FoliationFamily::SquaredDistance {
                center: V3::zeros(),
                offset: 0.0,
            },
            domain: Ball::new(V3::new(2.0, 0.0, 0.0), 1.0),
            extended: Ball::new(V3::new(2.0, 0.0, 0.0), 1.1),
            step: 1e-2,
            t_max: 100.0,
        }
    }

    /// Same layout but with a conformal bump of the given strength centered
    /// on the domain.
    pub fn conformal_lab(epsilon: f64) -> Self {
        let mut g = Self::default_lab();
        g.metric = MetricFamily::Conformal {
            epsilon,
            center: g.domain.center,
        };
        g
    }

    pub fn foliation_value(&self, z: &V3) -> f64 {
        self.foliation.value(z)
    }

    /// Exact (inf, sup) of the foliation function over the extended ball.
    pub fn foliation_range(&self) -> (f64, f64) {
        match &self.foliation {
            FoliationFamily::SquaredDistance { center, offset } => {
                let d = (self.extended.center - center).norm();
                let r = self.extended.radius;
                let lo = if d > r { (d - r) * (d - r) } else { 0.0 };
                let hi = (d + r) * (d + r);
                (lo + offset, hi + offset)
            }
        }
    }

    /// Hex digest identifying the full geometric configuration.
    pub fn digest(&self) -> String {
        let mut s = String::new();
        self.metric.describe(&mut s);
        self.foliation.describe(&mut s);
        use std::fmt::Write;
        let _ = write!(
            s,
            "dom=({:.17e},{:.17e},{:.17e}),{:.17e};ext=({:.17e},{:.17e},{:.17e}),{:.17e};",
            self.domain.center.x,
            self.domain.center.y,
            self.domain.center.z,
            self.domain.radius,
            self.extended.center.x,
            self.extended.center.y,
            self.extended.center.z,
            self.extended.radius,
        );
        let mut h = Sha256::new();
        h.update(s.as_bytes());
        let out = h.finalize();
        out.iter().take(8).map(|b| format!("{:02x}", b)).collect()
    }

    /// Christoffel symbols Gamma[k][i][j] at z.  Zero for the euclidean
    /// metric; closed form for the conformal family.
    pub fn christoffel(&self, z: &V3) -> Result<[[[f64; 3]; 3]; 3]> {
        if !self.extended.contains(z) {
            return Err(Error::Domain(format!(
                "point ({:.3}, {:.3}, {:.3}) outside the extended domain",
                z.x, z.y, z.z
            )));
        }
        let mut out = [[[0.0; 3]; 3]; 3];
        if let MetricFamily::Conformal { .. } = self.metric {
            let c = self.metric.factor(z);
            let gc = self.metric.grad_factor(z);
            let d = [gc.x, gc.y, gc.z];
            for k in 0..3 {
                for i in 0..3 {
                    for j in 0..3 {
                        let mut v = 0.0;
                        if k == i {
                            v += d[j];
                        }
                        if k == j {
                            v += d[i];
                        }
                        if i == j {
                            v -= d[k];
                        }
                        out[k][i][j] = v / (2.0 * c);
                    }
                }
            }
        }
        Ok(out)
    }

    fn rk4_step(&self, z: &V3, v: &V3, dt: f64) -> (V3, V3) {
        let a1 = self.metric.geodesic_accel(z, v);
        let z2 = z + v * (dt / 2.0);
        let v2 = v + a1 * (dt / 2.0);
        let a2 = self.metric.geodesic_accel(&z2, &v2);
        let z3 = z + v2 * (dt / 2.0);
        let v3 = v + a2 * (dt / 2.0);
        let a3 = self.metric.geodesic_accel(&z3, &v3);
        let z4 = z + v3 * dt;
        let v4 = v + a3 * dt;
        let a4 = self.metric.geodesic_accel(&z4, &v4);
        let zn = z + (v + (v2 + v3) * 2.0 + v4) * (dt / 6.0);
        let vn = v + (a1 + (a2 + a3) * 2.0 + a4) * (dt / 6.0);
        (zn, vn)
    }

    /// Integrate the geodesic through (z, v) for exactly time `t` using
    /// `nsteps` RK4 steps, ignoring the domain boundary.
    pub fn flow(&self, z: &V3, v: &V3, t: f64, nsteps: usize) -> (V3, V3) {
        let dt = t / nsteps as f64;
        let mut z = *z;
        let mut v = *v;
        for _ in 0..nsteps {
            let (zn, vn) = self.rk4_step(&z, &v, dt);
            z = zn;
            v = vn;
        }
        (z, v)
    }

    fn trace_one_side(&self, z0: &V3, v0: &V3, dt: f64) -> Result<Vec<(f64, V3, V3)>> {
        let mut out = Vec::new();
        let mut t = 0.0;
        let mut z = *z0;
        let mut v = *v0;
        loop {
            let (zn, vn) = self.rk4_step(&z, &v, dt);
            let tn = t + dt;
            if tn.abs() > self.t_max {
                return Err(Error::IntegrationFailure(format!(
                    "geodesic did not leave the extended domain within |t| <= {}",
                    self.t_max
                )));
            }
            if self.extended.contains(&zn) {
                out.push((tn, zn, vn));
                t = tn;
                z = zn;
                v = vn;
            } else {
                // Locate the boundary crossing on the straight chord from
                // the last interior point to the first exterior point.
                let d = zn - z;
                let w = z - self.extended.center;
                let a = d.norm_squared();
                let b = 2.0 * w.dot(&d);
                let c = w.norm_squared() - self.extended.radius * self.extended.radius;
                let disc = (b * b - 4.0 * a * c).max(0.0);
                let mut s = (-b + disc.sqrt()) / (2.0 * a);
                s = s.clamp(0.0, 1.0);
                if s > 1e-12 {
                    out.push((t + s * dt, z + d * s, v + (vn - v) * s));
                }
                return Ok(out);
            }
        }
    }
}

/// A traced geodesic segment through the extended domain, sampled at the
/// integrator step in both directions from the base point (t = 0).
#[derive(Clone, Debug)]
pub struct GeodesicTrace {
    /// Times in increasing order, bracketing t = 0.  The first and last
    /// entries are the interpolated boundary crossings.
    pub times: Vec<f64>,
    pub points: Vec<V3>,
    pub velocities: Vec<V3>,
    /// Index of the t = 0 entry.
    pub base_index: usize,
    pub exited_forward: bool,
    pub exited_backward: bool,
}

impl GeodesicTrace {
    pub fn t_entry(&self) -> f64 {
        self.times[0]
    }

    pub fn t_exit(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Integrate `f(t, z)` along the trace with the trapezoid rule on the
    /// stored (non-uniform at the ends) time partition.
    pub fn integrate<F: FnMut(f64, &V3) -> f64>(&self, mut f: F) -> f64 {
        let mut acc = 0.0;
        let mut prev = f(self.times[0], &self.points[0]);
        for i in 1..self.times.len() {
            let cur = f(self.times[i], &self.points[i]);
            acc += 0.5 * (prev + cur) * (self.times[i] - self.times[i - 1]);
            prev = cur;
        }
        acc
    }
}

/// Trace the geodesic through (z, v) forward and backward until it leaves
/// the extended domain.  Errors if z is outside the extended domain or the
/// escape-time cap is exceeded.
pub fn trace_geodesic(spec: &GeometrySpec, z: &V3, v: &V3) -> Result<GeodesicTrace> {
    if !spec.extended.contains(z) {
        return Err(Error::Domain(format!(
            "trace base point ({:.3}, {:.3}, {:.3}) outside the extended domain",
            z.x, z.y, z.z
        )));
    }
    let speed = spec.metric.norm(z, v);
    if speed < 1e-14 {
        return Err(Error::Domain("zero trace direction".into()));
    }
    let fwd = spec.trace_one_side(z, v, spec.step)?;
    let bwd = spec.trace_one_side(z, v, -spec.step)?;
    let n = bwd.len() + 1 + fwd.len();
    let mut times = Vec::with_capacity(n);
    let mut points = Vec::with_capacity(n);
    let mut velocities = Vec::with_capacity(n);
    for &(t, p, w) in bwd.iter().rev() {
        times.push(t);
        points.push(p);
        velocities.push(w);
    }
    let base_index = times.len();
    times.push(0.0);
    points.push(*z);
    velocities.push(*v);
    for &(t, p, w) in &fwd {
        times.push(t);
        points.push(p);
        velocities.push(w);
    }
    Ok(GeodesicTrace {
        times,
        points,
        velocities,
        base_index,
        exited_forward: true,
        exited_backward: true,
    })
}

/// Vector field T with dx(T) = 1, pointing across the leaves.
pub fn transversal(spec: &GeometrySpec, z: &V3) -> Result<V3> {
    let g = spec.foliation.gradient(z);
    let n2 = g.norm_squared();
    if n2 < 1e-16 {
        return Err(Error::DegenerateFoliation(format!(
            "foliation gradient vanishes near ({:.3}, {:.3}, {:.3})",
            z.x, z.y, z.z
        )));
    }
    Ok(g / n2)
}

/// Split v = lambda T + omega with dx(omega) = 0; lambda = dx(v).
pub fn decompose_tangent(spec: &GeometrySpec, z: &V3, v: &V3) -> Result<(f64, V3)> {
    let g = spec.foliation.gradient(z);
    let t = transversal(spec, z)?;
    let lambda = g.dot(v);
    Ok((lambda, v - t * lambda))
}

pub fn compose_tangent(spec: &GeometrySpec, z: &V3, lambda: f64, omega: &V3) -> Result<V3> {
    let t = transversal(spec, z)?;
    Ok(t * lambda + omega)
}

/// Orthonormal-in-g frame {e1, e2} spanning the leaf tangent plane at a
/// base point, plus the data needed to express nearby points in leaf
/// coordinates.
#[derive(Clone, Debug)]
pub struct LeafFrame {
    pub base: V3,
    /// Euclidean unit normal grad x / |grad x|.
    pub normal_hat: V3,
    /// Euclidean-orthonormal leaf tangents.
    pub e1_hat: V3,
    pub e2_hat: V3,
    /// Conformal factor at the base.
    pub c: f64,
}

impl LeafFrame {
    /// Metric-unit leaf direction at angle theta.
    pub fn omega(&self, theta: f64) -> V3 {
        (self.e1_hat * theta.cos() + self.e2_hat * theta.sin()) / self.c.sqrt()
    }

    /// Metric-unit frame vectors e_i = e_i_hat / sqrt(c).
    pub fn e1(&self) -> V3 {
        self.e1_hat / self.c.sqrt()
    }

    pub fn e2(&self) -> V3 {
        self.e2_hat / self.c.sqrt()
    }

    /// Leaf coordinates of z': y_i = g(z' - base, e_i) = sqrt(c) (z'-base).e_i_hat.
    pub fn leaf_coords(&self, zp: &V3) -> (f64, f64) {
        let d = zp - self.base;
        let s = self.c.sqrt();
        (s * d.dot(&self.e1_hat), s * d.dot(&self.e2_hat))
    }
}

/// Build a deterministic leaf frame at z.  The first tangent is obtained by
/// Gram-Schmidt of a fixed reference axis against the leaf normal, choosing
/// the axis least aligned with the normal.
pub fn leaf_frame(spec: &GeometrySpec, z: &V3) -> Result<LeafFrame> {
    let g = spec.foliation.gradient(z);
    let gn = g.norm();
    if gn < 1e-8 {
        return Err(Error::DegenerateFoliation(format!(
            "foliation gradient vanishes near ({:.3}, {:.3}, {:.3})",
            z.x, z.y, z.z
        )));
    }
    let n = g / gn;
    let axis = if n.y.abs() <= 0.9 {
        V3::new(0.0, 1.0, 0.0)
    } else {
        V3::new(0.0, 0.0, 1.0)
    };
    let mut e1 = axis - n * n.dot(&axis);
    e1 /= e1.norm();
    let e2 = n.cross(&e1);
    Ok(LeafFrame {
        base: *z,
        normal_hat: n,
        e1_hat: e1,
        e2_hat: e2,
        c: spec.metric.factor(z),
    })
}

/// Half the second time derivative of x along the geodesic with slope
/// lambda and leaf direction omega at z.
pub fn alpha(spec: &GeometrySpec, z: &V3, lambda: f64, omega: &V3) -> Result<f64> {
    let v = compose_tangent(spec, z, lambda, omega)?;
    Ok(alpha_dir(spec, z, &v))
}

/// Half the second time derivative of x along the geodesic through (z, v),
/// extracted from short RK4 flows by a 5-point central difference.  This is
/// the curvature quantity controlling both the concavity constant and the
/// Gaussian width of the localizer.
pub fn alpha_dir(spec: &GeometrySpec, z: &V3, v: &V3) -> f64 {
    let delta = 1e-2;
    let nsub = 4;
    let x = |t: f64| -> f64 {
        if t == 0.0 {
            spec.foliation.value(z)
        } else {
            let (p, _) = spec.flow(z, v, t, nsub);
            spec.foliation.value(&p)
        }
    };
    let d2 = (-x(2.0 * delta) + 16.0 * x(delta) - 30.0 * x(0.0) + 16.0 * x(-delta)
        - x(-2.0 * delta))
        / (12.0 * delta * delta);
    0.5 * d2
}

/// Closed-form companion to `alpha` using the foliation Hessian and the
/// Christoffel acceleration directly:
/// alpha = (v . Hess x v + grad x . a) / 2 with a the geodesic acceleration.
pub fn alpha_hessian(spec: &GeometrySpec, z: &V3, v: &V3) -> f64 {
    let hv = spec.foliation.hessian_apply(z, v);
    let a = spec.metric.geodesic_accel(z, v);
    0.5 * (v.dot(&hv) + spec.foliation.gradient(z).dot(&a))
}

/// Constants certifying the foliation is convex for the given geometry,
/// obtained from a deterministic sampled sweep of near-leaf geodesics.
#[derive(Clone, Debug)]
pub struct ConvexityCertificate {
    /// Width of the near-tangential band |lambda| <= epsilon used below.
    pub epsilon: f64,
    /// Lower bound on d^2/dt^2 (x o gamma) over the band.
    pub c0: f64,
    /// Upper bound on |x| over the extended domain.
    pub c1: f64,
    /// Escape-time bound 2 eps / c0 + 4 c1 / eps.
    pub t_bound: f64,
    /// Band half-width for the quadratic growth bound (eps / 2).
    pub lambda0: f64,
    /// Certified constant with x(gamma(t)) >= x + lambda t + c_quad t^2 / 2
    /// for |lambda| <= lambda0.
    pub c_quad: f64,
    /// Largest exit time observed while sampling.
    pub max_exit_time: f64,
    /// Number of geodesics sampled.
    pub samples: usize,
    /// Geometry digest this certificate belongs to.
    pub geometry: String,
}

/// Run the sampled convexity sweep over at least `n_geodesics` geodesics.
/// Fails if any sampled geodesic violates concavity, quadratic growth, or
/// the escape-time bound.
pub fn certify_convexity(
    spec: &GeometrySpec,
    n_geodesics: usize,
    seed: u64,
) -> Result<ConvexityCertificate> {
    let epsilon = 1.0;
    let lambda0 = epsilon / 2.0;
    let c1 = sup_abs_foliation(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_theta = 8;
    let n_points = n_geodesics.div_ceil(n_theta * 5).max(1);
    let lambdas = [-epsilon, -lambda0, 0.0, lambda0, epsilon];
    let mut min_second = f64::INFINITY;
    let mut min_quad = f64::INFINITY;
    let mut max_exit = 0.0f64;
    let mut samples = 0usize;

    for _ in 0..n_points {
        let z = loop {
            let p = V3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ) * spec.extended.radius
                + spec.extended.center;
            if spec.extended.contains(&p) {
                break p;
            }
        };
        let frame = leaf_frame(spec, &z)?;
        for k in 0..n_theta {
            let theta = 2.0 * std::f64::consts::PI * k as f64 / n_theta as f64;
            let omega = frame.omega(theta);
            for &lambda in &lambdas {
                let v = compose_tangent(spec, &z, lambda, &omega)?;
                let a = alpha_dir(spec, &z, &v);
                min_second = min_second.min(2.0 * a);
                let trace = trace_geodesic(spec, &z, &v)?;
                max_exit = max_exit.max(trace.t_exit()).max(-trace.t_entry());
                if lambda.abs() <= lambda0 + 1e-12 {
                    let x0 = spec.foliation.value(&z);
                    for (i, &t) in trace.times.iter().enumerate() {
                        if t.abs() < 1e-6 {
                            continue;
                        }
                        let xv = spec.foliation.value(&trace.points[i]);
                        let ratio = 2.0 * (xv - x0 - lambda * t) / (t * t);
                        min_quad = min_quad.min(ratio);
                    }
                }
                samples += 1;
            }
        }
    }

    if !(min_second > 0.0) {
        return Err(Error::CertificateFailure(format!(
            "concavity violated: min d2(x o gamma)/dt2 = {:.6e}",
            min_second
        )));
    }
    if !(min_quad > 0.0) {
        return Err(Error::CertificateFailure(format!(
            "quadratic growth violated: min ratio = {:.6e}",
            min_quad
        )));
    }
    let c0 = 0.99 * min_second;
    let c_quad = 0.9 * min_quad;
    let t_bound = 2.0 * epsilon / c0 + 4.0 * c1 / epsilon;
    if max_exit > t_bound {
        return Err(Error::CertificateFailure(format!(
            "observed exit time {:.4} exceeds the escape bound {:.4}",
            max_exit, t_bound
        )));
    }
    Ok(ConvexityCertificate {
        epsilon,
        c0,
        c1,
        t_bound,
        lambda0,
        c_quad,
        max_exit_time: max_exit,
        samples,
        geometry: spec.digest(),
    })
}

fn sup_abs_foliation(spec: &GeometrySpec) -> f64 {
    match &spec.foliation {
        FoliationFamily::SquaredDistance { center, offset } => {
            let d = (spec.extended.center - center).norm() + spec.extended.radius;
            (d * d + offset).abs().max(offset.abs())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lab() -> GeometrySpec {
        GeometrySpec::default_lab()
    }

    #[test]
    fn euclidean_trace_is_straight_line() {
        let g = lab();
        let z = V3::new(2.0, 0.1, -0.2);
        let v = V3::new(0.3, 0.8, 0.5);
        let tr = trace_geodesic(&g, &z, &v).unwrap();
        for (i, &t) in tr.times.iter().enumerate() {
            let expect = z + v * t;
            assert!((tr.points[i] - expect).norm() < 1e-13);
        }
        // Endpoints sit on the extended boundary.
        let r0 = (tr.points[0] - g.extended.center).norm();
        let r1 = (tr.points.last().unwrap() - g.extended.center).norm();
        assert!((r0 - g.extended.radius).abs() < 1e-10);
        assert!((r1 - g.extended.radius).abs() < 1e-10);
    }

    #[test]
    fn conformal_trace_conserves_speed() {
        let g = GeometrySpec::conformal_lab(0.3);
        let z = V3::new(1.8, 0.2, 0.1);
        let v = V3::new(0.1, 1.0, -0.4);
        let tr = trace_geodesic(&g, &z, &v).unwrap();
        let s0 = g.metric.norm(&z, &v);
        for (i, p) in tr.points.iter().enumerate() {
            let s = g.metric.norm(p, &tr.velocities[i]);
            assert!((s - s0).abs() < 1e-8, "speed drift {}", (s - s0).abs());
        }
    }

    #[test]
    fn christoffel_euclidean_is_zero_and_conformal_matches_fd() {
        let g = lab();
        let z = V3::new(2.0, 0.0, 0.0);
        let gam = g.christoffel(&z).unwrap();
        for k in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    assert_eq!(gam[k][i][j], 0.0);
                }
            }
        }
        // Conformal: compare against central differences of the metric
        // factor in Gamma^k_ij = (d_i c d_kj + d_j c d_ki - d_k c d_ij)/(2c).
        let g = GeometrySpec::conformal_lab(0.05);
        let z = V3::new(2.0, 0.0, 0.0);
        let eps = 1e-5;
        let dc = |axis: usize| {
            let mut e = V3::zeros();
            e[axis] = eps;
            (g.metric.factor(&(z + e)) - g.metric.factor(&(z - e))) / (2.0 * eps)
        };
        let d = [dc(0), dc(1), dc(2)];
        let c = g.metric.factor(&z);
        let gam = g.christoffel(&z).unwrap();
        for k in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    let mut v = 0.0;
                    if k == i {
                        v += d[j];
                    }
                    if k == j {
                        v += d[i];
                    }
                    if i == j {
                        v -= d[k];
                    }
                    v /= 2.0 * c;
                    assert!((gam[k][i][j] - v).abs() < 1e-6);
                    assert!((gam[k][i][j] - gam[k][j][i]).abs() < 1e-15);
                }
            }
        }
        // A geodesic with zero conformal gradient component stays straight:
        // outside the extended ball the lookup errors.
        assert!(g.christoffel(&V3::new(5.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn transversal_normalization() {
        let g = lab();
        let z = V3::new(2.3, 0.4, -0.1);
        let t = transversal(&g, &z).unwrap();
        assert!((g.foliation.gradient(&z).dot(&t) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn decompose_compose_round_trip() {
        let g = GeometrySpec::conformal_lab(0.2);
        let z = V3::new(2.2, -0.3, 0.5);
        let v = V3::new(0.7, -0.2, 1.1);
        let (lambda, omega) = decompose_tangent(&g, &z, &v).unwrap();
        // omega is annihilated by dx.
        assert!(g.foliation.gradient(&z).dot(&omega).abs() < 1e-12);
        let back = compose_tangent(&g, &z, lambda, &omega).unwrap();
        assert!((back - v).norm() < 1e-13);
    }

    #[test]
    fn leaf_frame_is_orthonormal() {
        let g = GeometrySpec::conformal_lab(0.4);
        let z = V3::new(1.7, 0.3, 0.6);
        let f = leaf_frame(&g, &z).unwrap();
        assert!((g.metric.dot(&z, &f.e1(), &f.e1()) - 1.0).abs() < 1e-13);
        assert!((g.metric.dot(&z, &f.e2(), &f.e2()) - 1.0).abs() < 1e-13);
        assert!(g.metric.dot(&z, &f.e1(), &f.e2()).abs() < 1e-13);
        assert!(g.foliation.gradient(&z).dot(&f.e1_hat).abs() < 1e-13);
        assert!(g.foliation.gradient(&z).dot(&f.e2_hat).abs() < 1e-13);
        // omega(theta) is metric-unit and leaf-tangent.
        let w = f.omega(1.234);
        assert!((g.metric.norm(&z, &w) - 1.0).abs() < 1e-13);
        assert!(g.foliation.gradient(&z).dot(&w).abs() < 1e-12);
    }

    #[test]
    fn alpha_matches_hessian_form() {
        let cases = [lab(), GeometrySpec::conformal_lab(0.3)];
        for g in &cases {
            let z = V3::new(2.1, 0.2, -0.4);
            let f = leaf_frame(g, &z).unwrap();
            for k in 0..5 {
                let v = compose_tangent(g, &z, 0.2 * k as f64 - 0.4, &f.omega(0.9 * k as f64))
                    .unwrap();
                let fd = alpha_dir(g, &z, &v);
                let cf = alpha_hessian(g, &z, &v);
                assert!((fd - cf).abs() < 1e-7, "{} vs {}", fd, cf);
            }
        }
    }

    #[test]
    fn euclidean_alpha_for_unit_leaf_direction_is_one() {
        let g = lab();
        let z = V3::new(2.0, 0.5, 0.1);
        let f = leaf_frame(&g, &z).unwrap();
        let a = alpha_dir(&g, &z, &f.omega(0.3));
        assert!((a - 1.0).abs() < 1e-10);
    }

    #[test]
    fn certificate_on_euclidean_lab() {
        let g = lab();
        let cert = certify_convexity(&g, 1000, 7).unwrap();
        assert!((cert.c0 - 0.99 * 2.0).abs() < 1e-9);
        assert!((cert.c1 - 9.61).abs() < 1e-12);
        assert!(cert.max_exit_time <= cert.t_bound);
        assert!(cert.c_quad > 1.7 && cert.c_quad <= 1.9);
    }

    #[test]
    fn digest_distinguishes_geometries() {
        assert_ne!(lab().digest(), GeometrySpec::conformal_lab(0.1).digest());
        assert_eq!(lab().digest(), lab().digest());
    }
}
