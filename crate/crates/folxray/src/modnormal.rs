//! The attenuated, leaf-localized normal operator: a Gaussian slope cutoff
//! concentrates rays near the leaves, an exponential weight in the foliation
//! value damps the deep directions, and the result is applied either ray by
//! ray (to data or to fields) or assembled into a matrix on a grid mask.

use crate::error::{Error, Result};
use crate::geometry::{
    alpha_dir, compose_tangent, leaf_frame, trace_geodesic, ConvexityCertificate, GeometrySpec, V3,
};
use crate::grid::{Grid3, GridFunction, ScalarField};
use crate::quadrature::{bump_profile, gauss_legendre_on};
use crate::transform::RaySource;
use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

/// Attenuation weight in the foliation value x.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightVariant {
    /// Weight exponent -x / h; slope rescaled by sqrt(h).
    Global,
    /// Weight exponent (1/x) / h; slope rescaled by x sqrt(h).
    Scattering,
}

/// Slope localizer chi(lambda_hat) = gaussian * plateau bump.  The Gaussian
/// width is tied to the leaf curvature alpha at the base point when
/// `alpha_matched` is set; otherwise the fixed `width` is used.  `center`
/// shifts the whole localizer off the leaf (useful as a stress test: the
/// damping bound no longer controls the entries).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CutoffSpec {
    /// Plateau half-width Lambda: the bump is 1 on |s| <= Lambda and
    /// supported on |s| <= 2 Lambda (s = lambda_hat - center).
    pub lambda_cap: f64,
    pub center: f64,
    pub alpha_matched: bool,
    /// Gaussian width used when not alpha-matched.
    pub width: f64,
}

impl CutoffSpec {
    pub fn matched() -> Self {
        CutoffSpec {
            lambda_cap: 4.0,
            center: 0.0,
            alpha_matched: true,
            width: 1.0,
        }
    }

    /// Shifted, width-mismatched localizer for stress tests.
    pub fn adversarial() -> Self {
        CutoffSpec {
            lambda_cap: 4.0,
            center: 12.0,
            alpha_matched: false,
            width: 1.0,
        }
    }

    pub fn eval(&self, alpha0: f64, lambda_hat: f64) -> f64 {
        let s = lambda_hat - self.center;
        let w = if self.alpha_matched { alpha0 } else { self.width };
        (-(s * s) / (2.0 * w)).exp() * bump_profile(s / self.lambda_cap)
    }

    /// Support interval of the localizer in lambda_hat.
    pub fn support(&self) -> (f64, f64) {
        (
            self.center - 2.0 * self.lambda_cap,
            self.center + 2.0 * self.lambda_cap,
        )
    }
}

#[derive(Clone, Debug)]
pub struct NormalOpConfig {
    pub h: f64,
    pub variant: WeightVariant,
    pub cutoff: CutoffSpec,
    /// Gauss-Legendre nodes across the localizer support.
    pub n_lambda: usize,
    /// Uniform leaf angles.
    pub n_theta: usize,
    /// Verify the Gaussian damping bound at every trace sample.
    pub check_damping: bool,
}

impl NormalOpConfig {
    pub fn new(h: f64, variant: WeightVariant) -> Self {
        NormalOpConfig {
            h,
            variant,
            cutoff: CutoffSpec::matched(),
            n_lambda: 24,
            n_theta: 48,
            check_damping: true,
        }
    }
}

/// Relative damping floor; trace samples whose weight falls below it are
/// dropped from the integral.
const DAMPING_FLOOR: f64 = 1e-12;

/// The operator family, bound to a geometry and its convexity certificate.
pub struct NormalOperator<'a> {
    pub spec: &'a GeometrySpec,
    pub cert: &'a ConvexityCertificate,
    pub cfg: NormalOpConfig,
    /// GL nodes/weights over the localizer support, in lambda_hat.
    lambda_nodes: Vec<(f64, f64)>,
}

impl<'a> NormalOperator<'a> {
    pub fn new(
        spec: &'a GeometrySpec,
        cert: &'a ConvexityCertificate,
        cfg: NormalOpConfig,
    ) -> Result<Self> {
        if !(cfg.h > 0.0) {
            return Err(Error::Argument("h must be positive".into()));
        }
        if cfg.n_lambda < 6 {
            return Err(Error::Argument(
                "at least 6 slope quadrature nodes are required".into(),
            ));
        }
        if cfg.n_theta < 24 {
            return Err(Error::Argument(
                "at least 24 leaf angles are required".into(),
            ));
        }
        if cert.geometry != spec.digest() {
            return Err(Error::CertificateFailure(
                "certificate does not match the geometry".into(),
            ));
        }
        if cfg.variant == WeightVariant::Scattering && spec.foliation_range().0 <= 0.0 {
            return Err(Error::Domain(
                "scattering weight requires a positive foliation value on the extended domain"
                    .into(),
            ));
        }
        let (lo, hi) = cfg.cutoff.support();
        let lambda_nodes = gauss_legendre_on(lo, hi, cfg.n_lambda);
        Ok(NormalOperator {
            spec,
            cert,
            cfg,
            lambda_nodes,
        })
    }

    /// Physical slope per unit lambda_hat at foliation value x.
    pub fn lambda_scale(&self, x: f64) -> f64 {
        let rh = self.cfg.h.sqrt();
        match self.cfg.variant {
            WeightVariant::Global => rh,
            WeightVariant::Scattering => x.max(rh) * rh,
        }
    }

    pub fn lambda_hat_nodes(&self) -> &[(f64, f64)] {
        &self.lambda_nodes
    }

    /// Physical slope nodes of the quadrature chart at foliation value x.
    pub fn chart_lambdas(&self, x: f64) -> Vec<f64> {
        let s = self.lambda_scale(x);
        self.lambda_nodes.iter().map(|&(n, _)| s * n).collect()
    }

    /// Uniform slope grid covering the localizer support for every listed
    /// base point (used when the scale varies across bases).
    pub fn covering_lambdas(&self, bases: &[V3], n: usize) -> Vec<f64> {
        let (lo_hat, hi_hat) = self.cfg.cutoff.support();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for z in bases {
            let s = self.lambda_scale(self.spec.foliation_value(z));
            lo = lo.min(s * lo_hat).min(s * hi_hat);
            hi = hi.max(s * lo_hat).max(s * hi_hat);
        }
        let pad = 1e-9 * (hi - lo).max(1.0);
        (0..n)
            .map(|i| lo - pad + (hi - lo + 2.0 * pad) * i as f64 / (n - 1) as f64)
            .collect()
    }

    /// Attenuation weight carried from foliation value x_base (ray base) to
    /// x_t (trace point): exp((phi(x_t) - phi(x_base)) / h).
    pub fn damping(&self, x_base: f64, x_t: f64) -> f64 {
        let e = match self.cfg.variant {
            WeightVariant::Global => x_base - x_t,
            WeightVariant::Scattering => 1.0 / x_t - 1.0 / x_base,
        };
        (e / self.cfg.h).exp()
    }

    /// Certified upper bound on the damping weight at trace time t for a
    /// ray with rescaled slope lambda_hat from a base at foliation value x.
    pub fn damping_bound(&self, x_base: f64, lambda_hat: f64, t: f64) -> f64 {
        let c = self.cert.c_quad;
        let rh = self.cfg.h.sqrt();
        match self.cfg.variant {
            WeightVariant::Global => {
                let th = t / rh;
                let b = lambda_hat * lambda_hat / (2.0 * c)
                    - 0.5 * c * (th + lambda_hat / c) * (th + lambda_hat / c);
                b.exp()
            }
            WeightVariant::Scattering => {
                if x_base < rh {
                    return f64::INFINITY;
                }
                let th = t / (x_base * rh);
                let b = lambda_hat * lambda_hat / (2.0 * c)
                    - 0.5 * c * (th + lambda_hat / c) * (th + lambda_hat / c);
                let (x_min, x_sup) = self.spec.foliation_range();
                if b >= 0.0 {
                    (x_base * b / x_min).exp()
                } else {
                    (x_base * b / x_sup).exp()
                }
            }
        }
    }

    /// Localize recorded ray data at z: integrate chi against the source
    /// over the slope/angle chart.
    pub fn apply_l(&self, src: &dyn RaySource, z: &V3) -> Result<f64> {
        let bi = src.base_index(z)?;
        let frame = leaf_frame(self.spec, z)?;
        let x0 = self.spec.foliation_value(z);
        let scale = self.lambda_scale(x0);
        let dtheta = 2.0 * std::f64::consts::PI / self.cfg.n_theta as f64;
        let mut acc = 0.0;
        for j in 0..self.cfg.n_theta {
            let theta = dtheta * j as f64;
            let omega = frame.omega(theta);
            let a0 = alpha_dir(self.spec, z, &omega);
            for &(lh, wl) in &self.lambda_nodes {
                let chi = self.cfg.cutoff.eval(a0, lh);
                if chi == 0.0 {
                    continue;
                }
                acc += chi * src.value(bi, scale * lh, theta)? * wl * scale * dtheta;
            }
        }
        Ok(acc)
    }

    /// apply_l at many base points, in parallel.
    pub fn apply_l_all(&self, src: &dyn RaySource, bases: &[V3]) -> Result<Vec<f64>> {
        bases.par_iter().map(|z| self.apply_l(src, z)).collect()
    }

    /// Full attenuated normal operator on a complex field.
    pub fn apply_complex<F>(&self, f: &F, z: &V3) -> Result<Complex64>
    where
        F: Fn(&V3) -> Complex64 + Sync + ?Sized,
    {
        let frame = leaf_frame(self.spec, z)?;
        let x0 = self.spec.foliation_value(z);
        let scale = self.lambda_scale(x0);
        let dtheta = 2.0 * std::f64::consts::PI / self.cfg.n_theta as f64;
        let mut acc = Complex64::new(0.0, 0.0);
        for j in 0..self.cfg.n_theta {
            let theta = dtheta * j as f64;
            let omega = frame.omega(theta);
            let a0 = alpha_dir(self.spec, z, &omega);
            for &(lh, wl) in &self.lambda_nodes {
                let chi = self.cfg.cutoff.eval(a0, lh);
                if chi == 0.0 {
                    continue;
                }
                let v = compose_tangent(self.spec, z, scale * lh, &omega)?;
                let trace = trace_geodesic(self.spec, z, &v)?;
                let mut inner = Complex64::new(0.0, 0.0);
                let mut violation: Option<(f64, f64, f64)> = None;
                for (k, &t) in trace.times.iter().enumerate() {
                    let wt = trapezoid_weight(&trace.times, k);
                    let xt = self.spec.foliation_value(&trace.points[k]);
                    let d = self.damping(x0, xt);
                    if self.cfg.check_damping {
                        let bound = 1.05 * self.damping_bound(x0, lh, t);
                        if d > bound && violation.is_none() {
                            violation = Some((d, bound, t));
                        }
                    }
                    if d < DAMPING_FLOOR {
                        continue;
                    }
                    inner += f(&trace.points[k]) * (d * wt);
                }
                if let Some((d, bound, t)) = violation {
                    return Err(Error::DampingViolation(format!(
                        "weight {:.3e} exceeds certified bound {:.3e} at t = {:.4}, slope {:.3}",
                        d, bound, t, lh
                    )));
                }
                acc += inner * (chi * wl * scale * dtheta);
            }
        }
        Ok(acc)
    }

    /// Full attenuated normal operator on a real field.
    pub fn apply(&self, f: &dyn ScalarField, z: &V3) -> Result<f64> {
        let g = |p: &V3| Complex64::new(f.eval(p), 0.0);
        Ok(self.apply_complex(&g, z)?.re)
    }

    /// Evaluate the operator at every grid node inside the extended domain
    /// (zero outside), in parallel.
    pub fn apply_on_grid(&self, f: &dyn ScalarField, grid: &Grid3) -> Result<GridFunction> {
        let values: Result<Vec<f64>> = (0..grid.len())
            .into_par_iter()
            .map(|i| {
                let z = grid.node_flat(i);
                if self.spec.extended.contains(&z) {
                    self.apply(f, &z)
                } else {
                    Ok(0.0)
                }
            })
            .collect();
        Ok(GridFunction {
            grid: grid.clone(),
            values: values?,
        })
    }

    /// Right-hand side of the conjugated system at the masked nodes:
    /// b(z) = exp(-phi(x(z))/h) * apply_l(data, z).  Note the exponential
    /// spans an enormous dynamic range; reconstruction works with the
    /// cancelled system instead (see `assemble_localized_normal`).
    pub fn conjugated_rhs(
        &self,
        src: &dyn RaySource,
        grid: &Grid3,
        mask: &[usize],
    ) -> Result<Vec<f64>> {
        mask.par_iter()
            .map(|&i| {
                let z = grid.node_flat(i);
                let x = self.spec.foliation_value(&z);
                let phi = match self.cfg.variant {
                    WeightVariant::Global => -x,
                    WeightVariant::Scattering => 1.0 / x,
                };
                Ok((-phi / self.cfg.h).exp() * self.apply_l(src, &z)?)
            })
            .collect()
    }

    /// Assemble the attenuated operator on the grid: rows and columns are
    /// the nodes of `mask`, and each trace sample deposits its quadrature
    /// weight onto the trilinear stencil of the sample position.  Applying
    /// the matrix to nodal values reproduces `apply` on the trilinear
    /// interpolant (up to stencil taps falling outside the mask).
    pub fn assemble(&self, grid: &Grid3, mask: &[usize]) -> Result<AssembledOperator> {
        self.assemble_inner(grid, mask, Deposition::Trilinear, true)
    }

    /// Assemble the damping-free, localizer-only normal operator (the
    /// composition of localization and the plain ray transform).  This is
    /// the system actually solved during reconstruction: the attenuation of
    /// the operator and of the conjugated unknown cancel exactly along each
    /// ray, so no exponential ever needs to be evaluated.
    pub fn assemble_localized_normal(
        &self,
        grid: &Grid3,
        mask: &[usize],
        deposition: Deposition,
    ) -> Result<AssembledOperator> {
        self.assemble_inner(grid, mask, deposition, false)
    }

    fn assemble_inner(
        &self,
        grid: &Grid3,
        mask: &[usize],
        deposition: Deposition,
        with_damping: bool,
    ) -> Result<AssembledOperator> {
        let m = mask.len();
        if m == 0 {
            return Err(Error::Argument("empty grid mask".into()));
        }
        if m > 20_000 {
            return Err(Error::Argument(format!(
                "mask of {} nodes would need a {:.1} GB dense matrix",
                m,
                (m as f64 * m as f64 * 8.0) / 1e9
            )));
        }
        let mut col_of = vec![usize::MAX; grid.len()];
        for (c, &idx) in mask.iter().enumerate() {
            col_of[idx] = c;
        }
        let dtheta = 2.0 * std::f64::consts::PI / self.cfg.n_theta as f64;
        let rows: Result<Vec<Vec<f64>>> = mask
            .par_iter()
            .map(|&row_idx| {
                let z = grid.node_flat(row_idx);
                let frame = leaf_frame(self.spec, &z)?;
                let x0 = self.spec.foliation_value(&z);
                let scale = self.lambda_scale(x0);
                let mut row = vec![0.0f64; m];
                for j in 0..self.cfg.n_theta {
                    let theta = dtheta * j as f64;
                    let omega = frame.omega(theta);
                    let a0 = alpha_dir(self.spec, &z, &omega);
                    for &(lh, wl) in &self.lambda_nodes {
                        let chi = self.cfg.cutoff.eval(a0, lh);
                        if chi == 0.0 {
                            continue;
                        }
                        let v = compose_tangent(self.spec, &z, scale * lh, &omega)?;
                        let trace = trace_geodesic(self.spec, &z, &v)?;
                        let outer = chi * wl * scale * dtheta;
                        for (k, &t) in trace.times.iter().enumerate() {
                            let wt = trapezoid_weight(&trace.times, k);
                            let d = if with_damping {
                                let xt = self.spec.foliation_value(&trace.points[k]);
                                let dv = self.damping(x0, xt);
                                if self.cfg.check_damping {
                                    let bound = 1.05 * self.damping_bound(x0, lh, t);
                                    if dv > bound {
                                        return Err(Error::DampingViolation(format!(
                                            "weight {:.3e} exceeds certified bound {:.3e}",
                                            dv, bound
                                        )));
                                    }
                                }
                                if dv < DAMPING_FLOOR {
                                    continue;
                                }
                                dv
                            } else {
                                1.0
                            };
                            let wq = outer * wt * d;
                            let stencil = match deposition {
                                Deposition::Trilinear => grid.trilinear_stencil(&trace.points[k]),
                                Deposition::Tricubic => grid.tricubic_stencil(&trace.points[k]),
                            };
                            for (idx, w) in stencil {
                                let c = col_of[idx];
                                if c != usize::MAX {
                                    row[c] += wq * w;
                                }
                            }
                        }
                    }
                }
                Ok(row)
            })
            .collect();
        let rows = rows?;
        let mut matrix = DMatrix::<f64>::zeros(m, m);
        for (r, row) in rows.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                matrix[(r, c)] = v;
            }
        }
        Ok(AssembledOperator {
            grid: grid.clone(),
            mask: mask.to_vec(),
            matrix,
        })
    }
}

/// Weight of node k in the trapezoid rule on a sorted partition.
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

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Deposition {
    Trilinear,
    Tricubic,
}

/// Dense matrix realization of an operator on the masked grid nodes.
#[derive(Clone, Debug)]
pub struct AssembledOperator {
    pub grid: Grid3,
    pub mask: Vec<usize>,
    pub matrix: DMatrix<f64>,
}

impl AssembledOperator {
    pub fn dim(&self) -> usize {
        self.mask.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let v = nalgebra::DVector::from_column_slice(x);
        (&self.matrix * v).as_slice().to_vec()
    }

    /// Base points of the rows/columns.
    pub fn nodes(&self) -> Vec<V3> {
        self.mask.iter().map(|&i| self.grid.node_flat(i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::certify_convexity;
    use crate::transform::{forward_sinogram, Phantom};

    struct ConstSource {
        bases: Vec<V3>,
    }

    impl RaySource for ConstSource {
        fn value(&self, _b: usize, _l: f64, _t: f64) -> Result<f64> {
            Ok(1.0)
        }
        fn base_index(&self, z: &V3) -> Result<usize> {
            self.bases
                .iter()
                .position(|b| b == z)
                .ok_or_else(|| Error::Coverage("unknown base".into()))
        }
    }

    fn setup() -> (GeometrySpec, ConvexityCertificate) {
        let g = GeometrySpec::default_lab();
        let cert = certify_convexity(&g, 1000, 7).unwrap();
        (g, cert)
    }

    #[test]
    fn config_validation() {
        let (g, cert) = setup();
        let mut cfg = NormalOpConfig::new(0.1, WeightVariant::Global);
        cfg.n_lambda = 4;
        assert!(matches!(
            NormalOperator::new(&g, &cert, cfg),
            Err(Error::Argument(_))
        ));
        let mut cfg = NormalOpConfig::new(0.1, WeightVariant::Global);
        cfg.n_theta = 8;
        assert!(matches!(
            NormalOperator::new(&g, &cert, cfg),
            Err(Error::Argument(_))
        ));
    }

    /// On constant data the localization reduces to
    /// scale * 2 pi * integral of chi in lambda_hat.
    #[test]
    fn apply_l_constant_data_oracle() {
        let (g, cert) = setup();
        let cfg = NormalOpConfig::new(0.09, WeightVariant::Global);
        let op = NormalOperator::new(&g, &cert, cfg).unwrap();
        let z = V3::new(2.0, 0.2, -0.1);
        let src = ConstSource { bases: vec![z] };
        let got = op.apply_l(&src, &z).unwrap();
        // alpha = 1 in the euclidean lab, so chi = exp(-s^2/2) * bump(s/4).
        let chi_int: f64 = gauss_legendre_on(-8.0, 8.0, 200)
            .iter()
            .map(|&(s, w)| w * (-(s * s) / 2.0).exp() * bump_profile(s / 4.0))
            .sum();
        let expect = 0.09f64.sqrt() * 2.0 * std::f64::consts::PI * chi_int;
        assert!(
            (got - expect).abs() < 1e-6 * expect.abs(),
            "{} vs {}",
            got,
            expect
        );
    }

    /// With the slope localizer matched to the leaf curvature, the product
    /// of the attenuation weight and the localizer never exceeds one.
    #[test]
    fn damping_times_cutoff_is_bounded() {
        let (g, cert) = setup();
        for variant in [WeightVariant::Global, WeightVariant::Scattering] {
            let cfg = NormalOpConfig::new(0.08, variant);
            let op = NormalOperator::new(&g, &cert, cfg).unwrap();
            let z = V3::new(1.6, 0.4, 0.2);
            let x0 = g.foliation_value(&z);
            let frame = leaf_frame(&g, &z).unwrap();
            let scale = op.lambda_scale(x0);
            for &(lh, _) in op.lambda_hat_nodes() {
                let omega = frame.omega(1.1);
                let a0 = alpha_dir(&g, &z, &omega);
                let chi = op.cfg.cutoff.eval(a0, lh);
                let v = compose_tangent(&g, &z, scale * lh, &omega).unwrap();
                let trace = trace_geodesic(&g, &z, &v).unwrap();
                for (k, &t) in trace.times.iter().enumerate() {
                    let xt = g.foliation_value(&trace.points[k]);
                    let d = op.damping(x0, xt);
                    assert!(
                        d <= 1.05 * op.damping_bound(x0, lh, t),
                        "bound violated at t={}",
                        t
                    );
                    assert!(d * chi <= 1.0 + 1e-9, "unbounded entry {}", d * chi);
                }
            }
        }
    }

    /// Attenuation conjugation cancels exactly: applying the attenuated
    /// operator to exp(-phi(x)/h) f and undoing the outer weight equals the
    /// localization of the plain ray data of f, node for node.
    #[test]
    fn conjugation_identity_links_both_data_paths() {
        let (g, cert) = setup();
        let h = 0.1;
        let cfg = NormalOpConfig::new(h, WeightVariant::Global);
        let op = NormalOperator::new(&g, &cert, cfg).unwrap();
        let f = Phantom::gaussian(V3::new(2.0, 0.1, 0.0), 0.25, 1.0);
        let bases = vec![V3::new(2.0, 0.0, 0.0), V3::new(1.8, 0.3, -0.2)];
        let lambdas = op.chart_lambdas(0.0);
        let sg = forward_sinogram(&g, &f, bases.clone(), lambdas, op.cfg.n_theta).unwrap();
        for z in &bases {
            let lhs = op.apply_l(&sg, z).unwrap();
            // Conjugated path: weight the field, apply, unweight.
            let x0 = g.foliation_value(z);
            let weighted = |p: &V3| {
                let xp = g.foliation_value(p);
                Complex64::new(f.eval(&pv(p)) * ((x0 - xp) / h).exp(), 0.0)
            };
            let rhs = op.apply_complex(&weighted, z).unwrap().re;
            assert!(
                (lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0),
                "{} vs {}",
                lhs,
                rhs
            );
        }
    }

    fn pv(p: &V3) -> V3 {
        *p
    }

    /// The shifted localizer breaks the matched-width bound: entries of the
    /// attenuated operator exceed the unit bound that holds when matched.
    #[test]
    fn adversarial_cutoff_breaks_entry_bound() {
        let (g, cert) = setup();
        let mut cfg = NormalOpConfig::new(0.1, WeightVariant::Global);
        cfg.cutoff = CutoffSpec::adversarial();
        cfg.check_damping = false;
        let op = NormalOperator::new(&g, &cert, cfg).unwrap();
        let z = V3::new(1.4, 0.0, 0.0);
        let x0 = g.foliation_value(&z);
        let frame = leaf_frame(&g, &z).unwrap();
        let scale = op.lambda_scale(x0);
        let mut max_prod = 0.0f64;
        for &(lh, _) in op.lambda_hat_nodes() {
            let omega = frame.omega(0.0);
            let a0 = alpha_dir(&g, &z, &omega);
            let chi = op.cfg.cutoff.eval(a0, lh);
            let v = compose_tangent(&g, &z, scale * lh, &omega).unwrap();
            let trace = trace_geodesic(&g, &z, &v).unwrap();
            for (k, _) in trace.times.iter().enumerate() {
                let xt = g.foliation_value(&trace.points[k]);
                max_prod = max_prod.max(op.damping(x0, xt) * chi);
            }
        }
        assert!(max_prod > 10.0, "expected unbounded entries, got {}", max_prod);
    }

    /// Matrix rows reproduce the quadrature applied to the interpolated
    /// field.
    #[test]
    fn assembled_matrix_matches_apply() {
        let (g, cert) = setup();
        let cfg = NormalOpConfig::new(0.12, WeightVariant::Global);
        let op = NormalOperator::new(&g, &cert, cfg).unwrap();
        let grid = Grid3::covering(&g.extended, 9);
        let mask = grid.mask(&g.domain);
        let asm = op.assemble(&grid, &mask).unwrap();
        let f = Phantom::gaussian(V3::new(2.0, 0.0, 0.0), 0.2, 1.0);
        let nodal = crate::grid::GridFunction::from_fn(grid.clone(), |z| f.eval(z));
        let x: Vec<f64> = mask.iter().map(|&i| nodal.values[i]).collect();
        let viamat = asm.apply(&x);
        let nodes = asm.nodes();
        let mut max_rel = 0.0f64;
        let mut max_abs = 0.0f64;
        for (r, z) in nodes.iter().enumerate().step_by(7) {
            let direct = op.apply(&nodal, z).unwrap();
            max_abs = max_abs.max(direct.abs());
            max_rel = max_rel.max((viamat[r] - direct).abs());
        }
        assert!(max_rel < 0.02 * max_abs, "rel {} abs {}", max_rel, max_abs);
    }
}
