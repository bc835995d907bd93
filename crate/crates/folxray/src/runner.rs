//! Experiment orchestration: run-directory management and one pipeline per
//! CLI subcommand.  All numerical work is delegated to the library modules;
//! this module only wires configurations to operations and emits artifacts.

use std::path::{Path, PathBuf};

use serde_json::json;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::geometry::{
    certify_convexity, trace_geodesic, ConvexityCertificate, GeometrySpec, V3,
};
use crate::grid::Grid3;
use crate::inversion::{gmres, h_sweep, reconstruct, reconstruction_errors, LinOp, SweepRow};
use crate::io;
use crate::modnormal::{NormalOperator, WeightVariant};
use crate::symbolcalc::{certify_ellipticity, gaussian_closed_form, principal_symbol};
use crate::transform::{forward_sinogram, ray_direction, xray, Sinogram};

/// Seed for every sampled sweep the runner performs; fixed for determinism.
const RUN_SEED: u64 = 7;

#[derive(Clone, Debug)]
pub enum Command {
    Trace,
    Certify,
    Forward,
    Apply,
    Symbol,
    CertifyEllipticity,
    Reconstruct { data: Option<PathBuf> },
    SweepH,
    Selftest,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Trace => "trace",
            Command::Certify => "certify",
            Command::Forward => "forward",
            Command::Apply => "apply",
            Command::Symbol => "symbol",
            Command::CertifyEllipticity => "certify-ellipticity",
            Command::Reconstruct { .. } => "reconstruct",
            Command::SweepH => "sweep-h",
            Command::Selftest => "selftest",
        }
    }
}

/// Format unix seconds as a UTC `YYYYMMDDTHHMMSSZ` stamp.
fn utc_stamp(secs: u64) -> String {
    let days = secs / 86_400;
    let rem = secs % 86_400;
    let (hh, mm, ss) = (rem / 3600, (rem / 60) % 60, rem % 60);
    // Civil-from-days (Howard Hinnant's algorithm), valid for the unix era.
    let z = days as i64 + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z.rem_euclid(146_097);
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let y = yoe + era * 400;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = doy - (153 * mp + 2) / 5 + 1;
    let m = if mp < 10 { mp + 3 } else { mp - 9 };
    let y = if m <= 2 { y + 1 } else { y };
    format!(
        "{:04}{:02}{:02}T{:02}{:02}{:02}Z",
        y, m, d, hh, mm, ss
    )
}

/// Create a fresh run directory `<out>/<timestamp>-<confighash>[-k]`,
/// never overwriting an existing one.
pub fn create_run_dir(out: &Path, cfg: &ExperimentConfig) -> Result<PathBuf> {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let base = format!("{}-{}", utc_stamp(secs), cfg.hash());
    for k in 0..10_000u32 {
        let name = if k == 0 {
            base.clone()
        } else {
            format!("{}-{}", base, k)
        };
        let dir = out.join(&name);
        match std::fs::create_dir_all(out).and_then(|_| std::fs::create_dir(&dir)) {
            Ok(()) => {
                std::fs::write(dir.join("resolved.cfg"), cfg.emit())?;
                return Ok(dir);
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => {
                return Err(Error::Io(std::io::Error::new(
                    e.kind(),
                    format!("{}: {}", dir.display(), e),
                )))
            }
        }
    }
    Err(Error::Io(std::io::Error::new(
        std::io::ErrorKind::AlreadyExists,
        "could not find a fresh run directory name",
    )))
}

struct Lab {
    spec: GeometrySpec,
    cert: ConvexityCertificate,
}

fn build_lab(cfg: &ExperimentConfig) -> Result<Lab> {
    let spec = cfg.build_geometry()?;
    let cert = certify_convexity(&spec, 1000, RUN_SEED)?;
    Ok(Lab { spec, cert })
}

fn cert_json(cert: &ConvexityCertificate) -> serde_json::Value {
    json!({
        "epsilon": cert.epsilon,
        "c0": cert.c0,
        "c1": cert.c1,
        "t_bound": cert.t_bound,
        "lambda0": cert.lambda0,
        "c_quad": cert.c_quad,
        "max_exit_time": cert.max_exit_time,
        "samples": cert.samples,
        "geometry": cert.geometry,
    })
}

/// Sampling layout shared by `forward` and `reconstruct`: ray data tabulated
/// at exactly the slope/angle nodes the localized backprojection consumes.
fn sinogram_layout(op: &NormalOperator, bases: &[V3]) -> Vec<f64> {
    match op.cfg.variant {
        WeightVariant::Global => {
            let x = op.spec.foliation_value(&op.spec.domain.center);
            op.chart_lambdas(x)
        }
        WeightVariant::Scattering => op.covering_lambdas(bases, 160),
    }
}

fn forward_data(cfg: &ExperimentConfig, lab: &Lab, op: &NormalOperator) -> Result<(Sinogram, Vec<usize>, Grid3)> {
    let phantom = cfg.build_phantom()?;
    phantom.check_supported_in(&lab.spec.domain)?;
    let grid = Grid3::covering(&lab.spec.domain, cfg.solver.grid_n);
    let mask = grid.mask(&lab.spec.domain);
    let bases: Vec<V3> = mask.iter().map(|&i| grid.node_flat(i)).collect();
    let lambdas = sinogram_layout(op, &bases);
    let sino = forward_sinogram(&lab.spec, &phantom, bases, lambdas, cfg.normal_op.n_theta)?;
    Ok((sino, mask, grid))
}

fn report_json(row: &crate::inversion::SolveReport) -> serde_json::Value {
    json!({
        "iterations": row.iterations,
        "residual": row.residual,
        "rel_l2_error": row.rel_l2_error,
        "sup_error": row.sup_error,
        "h": row.h,
        "grid_n": row.grid_n,
        "stability_ratio": row.stability_ratio,
        "sigma_min": row.sigma_min,
        "variant": row.variant,
    })
}

const REPORT_COLUMNS: [&str; 9] = [
    "h",
    "grid_n",
    "variant",
    "iterations",
    "residual",
    "rel_l2_error",
    "sup_error",
    "stability_ratio",
    "sigma_min",
];

fn report_row(r: &crate::inversion::SolveReport, error: Option<&str>) -> Vec<String> {
    let opt = |v: Option<f64>| v.map(io::csv_f64).unwrap_or_default();
    let mut row = vec![
        io::csv_f64(r.h),
        r.grid_n.to_string(),
        r.variant.clone(),
        r.iterations.to_string(),
        io::csv_f64(r.residual),
        opt(r.rel_l2_error),
        opt(r.sup_error),
        opt(r.stability_ratio),
        opt(r.sigma_min),
    ];
    row.push(error.unwrap_or_default().to_string());
    row
}

/// Execute one subcommand, writing all artifacts into a fresh run directory.
/// Returns the run directory path.
pub fn run(cmd: &Command, cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf> {
    let dir = create_run_dir(out, cfg)?;
    match cmd {
        Command::Trace => run_trace(cfg, &dir),
        Command::Certify => run_certify(cfg, &dir),
        Command::Forward => run_forward(cfg, &dir),
        Command::Apply => run_apply(cfg, &dir),
        Command::Symbol => run_symbol(cfg, &dir),
        Command::CertifyEllipticity => run_certify_ellipticity(cfg, &dir),
        Command::Reconstruct { data } => run_reconstruct(cfg, &dir, data.as_deref()),
        Command::SweepH => run_sweep(cfg, &dir),
        Command::Selftest => run_selftest(cfg, &dir),
    }?;
    Ok(dir)
}

fn run_trace(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let lab = build_lab(cfg)?;
    let spec = &lab.spec;
    let mut rows = Vec::new();
    let n_theta = 8usize;
    let slopes = [-0.5, 0.0, 0.5];
    let offsets = [
        V3::new(0.0, 0.0, 0.0),
        V3::new(0.4, 0.3, -0.2),
        V3::new(-0.5, 0.1, 0.4),
        V3::new(0.2, -0.6, 0.1),
    ];
    for off in &offsets {
        let z = spec.domain.center + off;
        for &lam in &slopes {
            for j in 0..n_theta {
                let theta = 2.0 * std::f64::consts::PI * j as f64 / n_theta as f64;
                let v = ray_direction(spec, &z, lam, theta)?;
                let tr = trace_geodesic(spec, &z, &v)?;
                rows.push(vec![
                    io::csv_f64(z.x),
                    io::csv_f64(z.y),
                    io::csv_f64(z.z),
                    io::csv_f64(lam),
                    io::csv_f64(theta),
                    io::csv_f64(tr.t_entry()),
                    io::csv_f64(tr.t_exit()),
                    rows.len().to_string(),
                ]);
            }
        }
    }
    io::write_csv(
        &dir.join("geodesics.csv"),
        &[
            "base_x", "base_y", "base_z", "lambda", "theta", "t_entry", "t_exit", "ray_id",
        ],
        &rows,
    )
}

fn run_certify(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let lab = build_lab(cfg)?;
    io::write_json(&dir.join("certificate.json"), &cert_json(&lab.cert))
}

fn make_op<'a>(cfg: &ExperimentConfig, lab: &'a Lab) -> Result<NormalOperator<'a>> {
    NormalOperator::new(&lab.spec, &lab.cert, cfg.build_normal_op()?)
}

fn run_forward(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let lab = build_lab(cfg)?;
    let op = make_op(cfg, &lab)?;
    let (sino, _, _) = forward_data(cfg, &lab, &op)?;
    io::write_sinogram(&dir.join("data.fxsg"), &sino)
}

fn run_apply(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let lab = build_lab(cfg)?;
    let op = make_op(cfg, &lab)?;
    let phantom = cfg.build_phantom()?;
    let grid = Grid3::covering(&lab.spec.domain, cfg.solver.grid_n);
    let out = op.apply_on_grid(&phantom, &grid)?;
    io::write_volume(&dir.join("applied.fxgf"), &out)
}

fn run_symbol(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let lab = build_lab(cfg)?;
    let op = make_op(cfg, &lab)?;
    let z0 = lab.spec.domain.center;
    let mut rows = Vec::new();
    let n = 21usize;
    for i in 0..n {
        let xi = -5.0 + 10.0 * i as f64 / (n - 1) as f64;
        for j in 0..n {
            let eta1 = 5.0 * j as f64 / (n - 1) as f64;
            let a0 = principal_symbol(&op, &z0, xi, [eta1, 0.0])?;
            let cf = gaussian_closed_form(&op, &z0, xi, [eta1, 0.0]).unwrap_or(f64::NAN);
            rows.push(vec![
                io::csv_f64(xi),
                io::csv_f64(eta1),
                io::csv_f64(a0.re),
                io::csv_f64(a0.im),
                io::csv_f64(cf),
            ]);
        }
    }
    io::write_csv(
        &dir.join("symbol.csv"),
        &["xi", "eta", "re_a0", "im_a0", "gaussian_closed_form"],
        &rows,
    )
}

fn run_certify_ellipticity(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let lab = build_lab(cfg)?;
    let op = make_op(cfg, &lab)?;
    let c = lab.spec.domain.center;
    let r = 0.5 * lab.spec.domain.radius;
    let points = [
        c,
        c + V3::new(r, 0.0, 0.0),
        c + V3::new(0.0, r, 0.0),
        c + V3::new(0.0, 0.0, r),
    ];
    let cert = certify_ellipticity(&op, &points, 100.0, 32, 12, 0.01)?;
    io::write_json(
        &dir.join("ellipticity.json"),
        &json!({
            "c_min": cert.c_min,
            "threshold": cert.threshold,
            "reference": cert.reference,
            "pass": cert.pass,
            "minimizer_z": [cert.minimizer_z.x, cert.minimizer_z.y, cert.minimizer_z.z],
            "minimizer_zeta": {
                "xi": cert.minimizer_zeta.0,
                "eta": cert.minimizer_zeta.1,
            },
            "samples": cert.samples,
        }),
    )?;
    if cert.pass {
        Ok(())
    } else {
        Err(Error::CertificateFailure(format!(
            "ellipticity floor {:.3e} below threshold {:.3e}",
            cert.c_min, cert.threshold
        )))
    }
}

fn run_reconstruct(cfg: &ExperimentConfig, dir: &Path, data: Option<&Path>) -> Result<()> {
    let lab = build_lab(cfg)?;
    let op = make_op(cfg, &lab)?;
    let phantom = cfg.build_phantom()?;
    let (sino, mask, grid) = match data {
        Some(path) => {
            let sino = io::read_sinogram(path)?;
            if sino.geometry != lab.spec.digest() {
                return Err(Error::Format(
                    "sinogram geometry digest does not match the configured geometry".into(),
                ));
            }
            let grid = Grid3::covering(&lab.spec.domain, cfg.solver.grid_n);
            let mask = grid.mask(&lab.spec.domain);
            (sino, mask, grid)
        }
        None => forward_data(cfg, &lab, &op)?,
    };
    let (recon, mut report) =
        reconstruct(&op, &grid, &sino, cfg.solver.tol, cfg.solver.max_iter)?;
    let (l2, sup) = reconstruction_errors(&recon, &mask, &phantom);
    report.rel_l2_error = Some(l2);
    report.sup_error = Some(sup);
    if cfg.output.write_volumes {
        io::write_volume(&dir.join("reconstruction.fxgf"), &recon)?;
    }
    io::write_json(&dir.join("report.json"), &report_json(&report))?;
    let mut cols: Vec<&str> = REPORT_COLUMNS.to_vec();
    cols.push("error");
    io::write_csv(&dir.join("report.csv"), &cols, &[report_row(&report, None)])
}

fn run_sweep(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let hs = cfg.sweep.h_values.clone();
    let rows: Vec<SweepRow> = h_sweep(&hs, |h| {
        let mut one = cfg.clone();
        one.normal_op.h = h;
        let lab = build_lab(&one)?;
        let op = make_op(&one, &lab)?;
        let phantom = one.build_phantom()?;
        let (sino, mask, grid) = forward_data(&one, &lab, &op)?;
        let (recon, mut report) =
            reconstruct(&op, &grid, &sino, one.solver.tol, one.solver.max_iter)?;
        let (l2, sup) = reconstruction_errors(&recon, &mask, &phantom);
        report.rel_l2_error = Some(l2);
        report.sup_error = Some(sup);
        Ok(report)
    })?;
    let mut cols: Vec<&str> = REPORT_COLUMNS.to_vec();
    cols.push("error");
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|row| match (&row.report, &row.error) {
            (Some(r), _) => report_row(r, None),
            (None, err) => {
                let mut cells = vec![io::csv_f64(row.h)];
                cells.extend(std::iter::repeat_with(String::new).take(REPORT_COLUMNS.len() - 1));
                cells.push(err.clone().unwrap_or_default());
                cells
            }
        })
        .collect();
    io::write_csv(&dir.join("sweep.csv"), &cols, &csv_rows)?;
    let json_rows: Vec<serde_json::Value> = rows
        .iter()
        .map(|row| match &row.report {
            Some(r) => report_json(r),
            None => json!({"h": row.h, "error": row.error}),
        })
        .collect();
    io::write_json(&dir.join("sweep.json"), &json!({ "rows": json_rows }))
}

/// One named oracle comparison inside the selftest.
struct Check {
    name: &'static str,
    observed: f64,
    expected: f64,
    tolerance: f64,
}

impl Check {
    fn pass(&self) -> bool {
        (self.observed - self.expected).abs() <= self.tolerance
    }
}

fn run_selftest(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let lab = build_lab(cfg)?;
    let spec = &lab.spec;
    let mut checks = Vec::new();

    // Straight-line exactness of the tracer in the flat default metric.
    let z = spec.domain.center + V3::new(0.1, -0.2, 0.3);
    let v = V3::new(0.3, 0.5, -0.2).normalize();
    let tr = trace_geodesic(spec, &z, &v)?;
    let dev = tr
        .times
        .iter()
        .zip(&tr.points)
        .map(|(&t, p)| (p - (z + v * t)).norm())
        .fold(0.0f64, f64::max);
    checks.push(Check {
        name: "tracer_straight_line_deviation",
        observed: dev,
        expected: 0.0,
        tolerance: 1e-10,
    });

    // Transverse-curvature extraction against its analytic value.
    let frame = crate::geometry::leaf_frame(spec, &z)?;
    let a = crate::geometry::alpha(spec, &z, 0.0, &frame.omega(0.7))?;
    checks.push(Check {
        name: "alpha_flat_metric",
        observed: a,
        expected: 1.0,
        tolerance: 1e-7,
    });

    // Gaussian line integral against the 1-D closed form.
    let phantom = crate::transform::Phantom::gaussian(spec.domain.center, 0.3, 1.0);
    let ray_v = V3::new(0.0, 1.0, 0.0);
    let ray_z = spec.domain.center + V3::new(0.15, 0.0, -0.1);
    let got = xray(spec, &ray_z, &ray_v, &phantom)?;
    let d2 = 0.15f64.powi(2) + 0.1f64.powi(2);
    let want = 0.3 * std::f64::consts::PI.sqrt() * (-d2 / 0.09).exp();
    checks.push(Check {
        name: "gaussian_line_integral",
        observed: got,
        expected: want,
        tolerance: 1e-6 * want,
    });

    // Localized backprojection of constant data against the cutoff integral.
    let op = make_op(cfg, &lab)?;
    let bases = vec![spec.domain.center];
    let ones = ConstantRays {
        spec,
        bases: bases.clone(),
    };
    let got = op.apply_l(&ones, &bases[0])?;
    let want = constant_backprojection_oracle(&op, &bases[0])?;
    checks.push(Check {
        name: "constant_backprojection",
        observed: got,
        expected: want,
        tolerance: 1e-6 * want.abs(),
    });

    // Principal symbol at the origin of the fiber against the closed form.
    let a0 = principal_symbol(&op, &spec.domain.center, 0.0, [0.0, 0.0])?;
    let cf = gaussian_closed_form(&op, &spec.domain.center, 0.0, [0.0, 0.0])?;
    checks.push(Check {
        name: "principal_symbol_origin",
        observed: a0.re,
        expected: cf,
        tolerance: 5e-3 * cf.abs(),
    });

    // Krylov solver on a manufactured dense system.
    let n = 24;
    let mut m = nalgebra::DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = 2.0 + 0.05 * i as f64;
        if i + 1 < n {
            m[(i, i + 1)] = 0.7;
            m[(i + 1, i)] = -0.3;
        }
    }
    let xt: Vec<f64> = (0..n).map(|i| ((i % 5) as f64) - 2.0).collect();
    let b = (&m * nalgebra::DVector::from_column_slice(&xt))
        .as_slice()
        .to_vec();
    struct Dense(nalgebra::DMatrix<f64>);
    impl LinOp for Dense {
        fn dim(&self) -> usize {
            self.0.nrows()
        }
        fn apply(&self, x: &[f64], y: &mut [f64]) {
            let v = nalgebra::DVector::from_column_slice(x);
            y.copy_from_slice((&self.0 * v).as_slice());
        }
    }
    let (xs, _) = gmres(&Dense(m), &b, 1e-12, 500)?;
    let solve_err = xs
        .iter()
        .zip(&xt)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    checks.push(Check {
        name: "krylov_manufactured_solution",
        observed: solve_err,
        expected: 0.0,
        tolerance: 1e-9,
    });

    let all_pass = checks.iter().all(Check::pass);
    let rows: Vec<Vec<String>> = checks
        .iter()
        .map(|c| {
            vec![
                c.name.to_string(),
                io::csv_f64(c.observed),
                io::csv_f64(c.expected),
                io::csv_f64(c.tolerance),
                if c.pass() { "pass" } else { "fail" }.to_string(),
            ]
        })
        .collect();
    io::write_csv(
        &dir.join("selftest.csv"),
        &["check", "observed", "expected", "tolerance", "status"],
        &rows,
    )?;
    let items: Vec<serde_json::Value> = checks
        .iter()
        .map(|c| {
            json!({
                "check": c.name,
                "observed": c.observed,
                "expected": c.expected,
                "tolerance": c.tolerance,
                "pass": c.pass(),
            })
        })
        .collect();
    io::write_json(
        &dir.join("selftest.json"),
        &json!({"pass": all_pass, "checks": items}),
    )?;
    if all_pass {
        Ok(())
    } else {
        Err(Error::CertificateFailure(
            "one or more selftest oracle comparisons failed".into(),
        ))
    }
}

/// Ray data identically one, for the constant-backprojection oracle.
struct ConstantRays<'a> {
    spec: &'a GeometrySpec,
    bases: Vec<V3>,
}

impl crate::transform::RaySource for ConstantRays<'_> {
    fn value(&self, _b: usize, _lambda: f64, _theta: f64) -> Result<f64> {
        Ok(1.0)
    }
    fn base_index(&self, z: &V3) -> Result<usize> {
        let _ = self.spec;
        self.bases
            .iter()
            .position(|p| (p - z).norm() < 1e-12)
            .ok_or_else(|| Error::Coverage("unknown base point".into()))
    }
}

/// Dense-quadrature evaluation of the backprojection of constant data:
/// the slope-scale times 2 pi times the integral of the localizer.
fn constant_backprojection_oracle(op: &NormalOperator, z: &V3) -> Result<f64> {
    let frame = crate::geometry::leaf_frame(op.spec, z)?;
    let x0 = op.spec.foliation_value(z);
    let scale = op.lambda_scale(x0);
    let (lo, hi) = op.cfg.cutoff.support();
    let nodes = crate::quadrature::gauss_legendre_on(lo, hi, 200);
    let a = crate::geometry::alpha(op.spec, z, 0.0, &frame.omega(0.0))?;
    let integral: f64 = nodes
        .iter()
        .map(|&(lh, w)| w * op.cfg.cutoff.eval(a, lh))
        .sum();
    Ok(scale * 2.0 * std::f64::consts::PI * integral)
}
