//! Cubic sampling grids over the computational ball: node indexing, domain
//! masks, trilinear and cubic-convolution interpolation stencils, and grid
//! functions.

use crate::geometry::{Ball, V3};

/// Axis-aligned cubic grid with `n` nodes per axis.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid3 {
    pub origin: V3,
    pub spacing: f64,
    pub n: usize,
}

impl Grid3 {
    /// Grid whose node cube exactly covers the given ball.
    pub fn covering(ball: &Ball, n: usize) -> Self {
        assert!(n >= 2);
        let r = ball.radius;
        Grid3 {
            origin: ball.center - V3::new(r, r, r),
            spacing: 2.0 * r / (n - 1) as f64,
            n,
        }
    }

    pub fn len(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn flat(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n + j) * self.n + k
    }

    pub fn unflat(&self, idx: usize) -> (usize, usize, usize) {
        let k = idx % self.n;
        let j = (idx / self.n) % self.n;
        let i = idx / (self.n * self.n);
        (i, j, k)
    }

    pub fn node(&self, i: usize, j: usize, k: usize) -> V3 {
        self.origin + V3::new(i as f64, j as f64, k as f64) * self.spacing
    }

    pub fn node_flat(&self, idx: usize) -> V3 {
        let (i, j, k) = self.unflat(idx);
        self.node(i, j, k)
    }

    /// Flat indices of all nodes inside the given ball, in flat order.
    pub fn mask(&self, ball: &Ball) -> Vec<usize> {
        (0..self.len())
            .filter(|&idx| ball.contains(&self.node_flat(idx)))
            .collect()
    }

    /// Fractional grid coordinates of a point.
    fn fractional(&self, z: &V3) -> (f64, f64, f64) {
        let d = (z - self.origin) / self.spacing;
        (d.x, d.y, d.z)
    }

    /// Trilinear stencil: up to 8 (flat index, weight) pairs summing to one
    /// when z lies inside the node cube.  Taps outside the grid are dropped.
    pub fn trilinear_stencil(&self, z: &V3) -> Vec<(usize, f64)> {
        let (fx, fy, fz) = self.fractional(z);
        let mut out = Vec::with_capacity(8);
        let i0 = fx.floor() as i64;
        let j0 = fy.floor() as i64;
        let k0 = fz.floor() as i64;
        let tx = fx - i0 as f64;
        let ty = fy - j0 as f64;
        let tz = fz - k0 as f64;
        for (di, wx) in [(0i64, 1.0 - tx), (1, tx)] {
            for (dj, wy) in [(0i64, 1.0 - ty), (1, ty)] {
                for (dk, wz) in [(0i64, 1.0 - tz), (1, tz)] {
                    let w = wx * wy * wz;
                    if w == 0.0 {
                        continue;
                    }
                    let (i, j, k) = (i0 + di, j0 + dj, k0 + dk);
                    if self.in_range(i, j, k) {
                        out.push((self.flat(i as usize, j as usize, k as usize), w));
                    }
                }
            }
        }
        out
    }

    /// Cubic-convolution stencil (Keys kernel, a = -1/2): up to 64 taps with
    /// third-order accuracy.  Taps outside the grid are dropped, which is a
    /// zero extension of the sampled function.
    pub fn tricubic_stencil(&self, z: &V3) -> Vec<(usize, f64)> {
        let (fx, fy, fz) = self.fractional(z);
        let i0 = fx.floor() as i64;
        let j0 = fy.floor() as i64;
        let k0 = fz.floor() as i64;
        let wx = keys_weights(fx - i0 as f64);
        let wy = keys_weights(fy - j0 as f64);
        let wz = keys_weights(fz - k0 as f64);
        let mut out = Vec::with_capacity(64);
        for di in -1i64..=2 {
            let a = wx[(di + 1) as usize];
            if a == 0.0 {
                continue;
            }
            for dj in -1i64..=2 {
                let b = a * wy[(dj + 1) as usize];
                if b == 0.0 {
                    continue;
                }
                for dk in -1i64..=2 {
                    let w = b * wz[(dk + 1) as usize];
                    if w == 0.0 {
                        continue;
                    }
                    let (i, j, k) = (i0 + di, j0 + dj, k0 + dk);
                    if self.in_range(i, j, k) {
                        out.push((self.flat(i as usize, j as usize, k as usize), w));
                    }
                }
            }
        }
        out
    }

    fn in_range(&self, i: i64, j: i64, k: i64) -> bool {
        let n = self.n as i64;
        (0..n).contains(&i) && (0..n).contains(&j) && (0..n).contains(&k)
    }
}

/// Interpolation kernel weights for offsets {-1, 0, 1, 2} around a cell at
/// parameter t in [0, 1): Keys cubic convolution with a = -1/2.
fn keys_weights(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        -0.5 * t3 + t2 - 0.5 * t,
        1.5 * t3 - 2.5 * t2 + 1.0,
        -1.5 * t3 + 2.0 * t2 + 0.5 * t,
        0.5 * t3 - 0.5 * t2,
    ]
}

/// Anything that can be sampled at a point of the computational domain.
pub trait ScalarField: Sync {
    fn eval(&self, z: &V3) -> f64;
}

impl<F: Fn(&V3) -> f64 + Sync> ScalarField for F {
    fn eval(&self, z: &V3) -> f64 {
        self(z)
    }
}

/// Nodal values on a grid, sampled via the trilinear stencil and extended
/// by zero outside the node cube.
#[derive(Clone, Debug)]
pub struct GridFunction {
    pub grid: Grid3,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(grid: Grid3) -> Self {
        let n = grid.len();
        GridFunction {
            grid,
            values: vec![0.0; n],
        }
    }

    pub fn from_fn<F: FnMut(&V3) -> f64>(grid: Grid3, mut f: F) -> Self {
        let values = (0..grid.len()).map(|i| f(&grid.node_flat(i))).collect();
        GridFunction { grid, values }
    }
}

impl ScalarField for GridFunction {
    fn eval(&self, z: &V3) -> f64 {
        self.grid
            .trilinear_stencil(z)
            .iter()
            .map(|&(idx, w)| w * self.values[idx])
            .sum()
    }
}
