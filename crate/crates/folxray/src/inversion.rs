//! Discrete left-inversion: a restarted minimal-residual Krylov solver, the
//! end-to-end reconstruction of a field from its ray data, a singular-value
//! injectivity probe, and parameter sweeps.

use crate::error::{Error, Result};
use crate::grid::{Grid3, GridFunction, ScalarField};
use crate::modnormal::{AssembledOperator, Deposition, NormalOperator};
use crate::transform::RaySource;

/// Square linear operator usable by the iterative solver.
pub trait LinOp {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

impl LinOp for AssembledOperator {
    fn dim(&self) -> usize {
        self.mask.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let v = nalgebra::DVector::from_column_slice(x);
        let out = &self.matrix * v;
        y.copy_from_slice(out.as_slice());
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SolveStats {
    pub iterations: usize,
    /// Final relative residual |A x - b| / |b|.
    pub residual: f64,
}

const RESTART: usize = 50;

/// Restarted generalized minimal-residual iteration with Givens rotations.
/// Declares non-convergence when a full restart cycle reduces the residual
/// by less than a factor of 1e-3 relative progress, or when `max_iter` is
/// exhausted.
pub fn gmres(a: &dyn LinOp, b: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, SolveStats)> {
    let n = a.dim();
    if b.len() != n {
        return Err(Error::Argument("right-hand side has the wrong length".into()));
    }
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((
            x,
            SolveStats {
                iterations: 0,
                residual: 0.0,
            },
        ));
    }
    let mut iterations = 0usize;
    let mut r = vec![0.0; n];
    loop {
        // r = b - A x
        a.apply(&x, &mut r);
        for i in 0..n {
            r[i] = b[i] - r[i];
        }
        let beta = norm(&r);
        let cycle_start = beta / bnorm;
        if cycle_start <= tol {
            return Ok((
                x,
                SolveStats {
                    iterations,
                    residual: cycle_start,
                },
            ));
        }
        let m = RESTART.min(n);
        let mut v: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        v.push(r.iter().map(|&t| t / beta).collect());
        let mut hmat = vec![vec![0.0f64; m]; m + 1];
        let mut cs = vec![0.0f64; m];
        let mut sn = vec![0.0f64; m];
        let mut g = vec![0.0f64; m + 1];
        g[0] = beta;
        let mut j_used = 0;
        let mut res = cycle_start;
        for j in 0..m {
            let mut w = vec![0.0; n];
            a.apply(&v[j], &mut w);
            for i in 0..=j {
                let hij = dot(&w, &v[i]);
                hmat[i][j] = hij;
                for (wk, vk) in w.iter_mut().zip(&v[i]) {
                    *wk -= hij * vk;
                }
            }
            let hj1 = norm(&w);
            hmat[j + 1][j] = hj1;
            iterations += 1;
            j_used = j + 1;
            if hj1 > 1e-300 {
                v.push(w.iter().map(|&t| t / hj1).collect());
            }
            // Apply accumulated rotations to the new column.
            for i in 0..j {
                let t = cs[i] * hmat[i][j] + sn[i] * hmat[i + 1][j];
                hmat[i + 1][j] = -sn[i] * hmat[i][j] + cs[i] * hmat[i + 1][j];
                hmat[i][j] = t;
            }
            let denom = (hmat[j][j] * hmat[j][j] + hmat[j + 1][j] * hmat[j + 1][j]).sqrt();
            if denom > 0.0 {
                cs[j] = hmat[j][j] / denom;
                sn[j] = hmat[j + 1][j] / denom;
            } else {
                cs[j] = 1.0;
                sn[j] = 0.0;
            }
            hmat[j][j] = cs[j] * hmat[j][j] + sn[j] * hmat[j + 1][j];
            hmat[j + 1][j] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            res = g[j + 1].abs() / bnorm;
            if res <= tol || hj1 <= 1e-300 || iterations >= max_iter {
                break;
            }
        }
        // Back-substitute and update x.
        let mut y = vec![0.0f64; j_used];
        for i in (0..j_used).rev() {
            let mut s = g[i];
            for k in i + 1..j_used {
                s -= hmat[i][k] * y[k];
            }
            y[i] = s / hmat[i][i];
        }
        for (j, &yj) in y.iter().enumerate() {
            for i in 0..n {
                x[i] += yj * v[j][i];
            }
        }
        if res <= tol {
            return Ok((
                x,
                SolveStats {
                    iterations,
                    residual: res,
                },
            ));
        }
        if iterations >= max_iter {
            return Err(Error::NonConvergence(format!(
                "no convergence after {} iterations (residual {:.3e})",
                iterations, res
            )));
        }
        if res > cycle_start * (1.0 - 1e-3) {
            return Err(Error::NonConvergence(format!(
                "stagnation: residual {:.3e} -> {:.3e} over one restart cycle",
                cycle_start, res
            )));
        }
    }
}

fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(&a, &b)| a * b).sum()
}

/// Solve the masked linear system to the requested relative residual.
pub fn solve_normal(
    a: &dyn LinOp,
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, SolveStats)> {
    gmres(a, b, tol, max_iter)
}

/// Outcome of one reconstruction run.
#[derive(Clone, Debug)]
pub struct SolveReport {
    pub iterations: usize,
    pub residual: f64,
    pub rel_l2_error: Option<f64>,
    pub sup_error: Option<f64>,
    pub h: f64,
    pub grid_n: usize,
    pub stability_ratio: Option<f64>,
    pub sigma_min: Option<f64>,
    pub variant: String,
}

/// Reconstruct a field on the masked grid nodes from ray data.
///
/// The conjugated system (attenuated operator acting on the weighted
/// unknown) is solved in its exactly cancelled form: along every ray the
/// attenuation of the operator and of the unknown multiply to one, so the
/// system reduces to (localized normal operator) f = (localization of the
/// data), with no exponential ever evaluated.  The cancelled matrix uses
/// the cubic deposition stencil for interpolation accuracy.
pub fn reconstruct(
    op: &NormalOperator,
    grid: &Grid3,
    d: &dyn RaySource,
    tol: f64,
    max_iter: usize,
) -> Result<(GridFunction, SolveReport)> {
    let mask = grid.mask(&op.spec.domain);
    let asm = op.assemble_localized_normal(grid, &mask, Deposition::Tricubic)?;
    let nodes = asm.nodes();
    let b = op.apply_l_all(d, &nodes)?;
    let (f, stats) = gmres(&asm, &b, tol, max_iter)?;
    let mut out = GridFunction::zeros(grid.clone());
    for (k, &idx) in mask.iter().enumerate() {
        out.values[idx] = f[k];
    }
    let bnorm = norm(&b);
    let fnorm = norm(&f);
    Ok((
        out,
        SolveReport {
            iterations: stats.iterations,
            residual: stats.residual,
            rel_l2_error: None,
            sup_error: None,
            h: op.cfg.h,
            grid_n: grid.n,
            stability_ratio: if bnorm > 0.0 { Some(fnorm / bnorm) } else { None },
            sigma_min: None,
            variant: format!("{:?}", op.cfg.variant).to_lowercase(),
        },
    ))
}

/// Relative l2 and sup errors of a reconstruction against a reference field
/// sampled at the masked nodes.
pub fn reconstruction_errors(
    recon: &GridFunction,
    mask: &[usize],
    reference: &dyn ScalarField,
) -> (f64, f64) {
    let mut num = 0.0;
    let mut den = 0.0;
    let mut sup = 0.0f64;
    for &idx in mask {
        let z = recon.grid.node_flat(idx);
        let r = reference.eval(&z);
        let e = recon.values[idx] - r;
        num += e * e;
        den += r * r;
        sup = sup.max(e.abs());
    }
    ((num / den.max(1e-300)).sqrt(), sup)
}

/// Smallest/largest singular values of an assembled operator (dense SVD).
pub fn injectivity_probe(asm: &AssembledOperator) -> Result<(f64, f64)> {
    let m = asm.mask.len();
    if m > 3000 {
        return Err(Error::Argument(format!(
            "injectivity probe limited to 3000 nodes, got {}",
            m
        )));
    }
    let svd = asm.matrix.clone().svd(false, false);
    let mut smin = f64::INFINITY;
    let mut smax = 0.0f64;
    for &s in svd.singular_values.iter() {
        smin = smin.min(s);
        smax = smax.max(s);
    }
    Ok((smin, smax))
}

/// One row of a parameter sweep: either a report or the failure message.
#[derive(Clone, Debug)]
pub struct SweepRow {
    pub h: f64,
    pub report: Option<SolveReport>,
    pub error: Option<String>,
}

/// Run reconstructions across a list of h values, recording failures per
/// row and continuing.
pub fn h_sweep<F>(hs: &[f64], mut run_one: F) -> Result<Vec<SweepRow>>
where
    F: FnMut(f64) -> Result<SolveReport>,
{
    if hs.len() < 3 {
        return Err(Error::Argument("a sweep needs at least 3 h values".into()));
    }
    Ok(hs
        .iter()
        .map(|&h| match run_one(h) {
            Ok(report) => SweepRow {
                h,
                report: Some(report),
                error: None,
            },
            Err(e) => SweepRow {
                h,
                report: None,
                error: Some(e.to_string()),
            },
        })
        .collect())
}
