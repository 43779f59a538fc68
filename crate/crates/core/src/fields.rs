//! Uniform rectangular grid, nodal fields and finite-difference operators.
//!
//! Derivatives use second-order central differences in the interior and
//! second-order one-sided stencils on the boundary. Every operator comes with
//! an exact adjoint (`*_adjoint_add`) so that discrete energies and their
//! nodal gradients stay consistent.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanics::Trajectory;
use crate::tensor::{Mat2, Tensor3, Vec2};

/// One edge of the rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Edge {
    Left,
    Right,
    Bottom,
    Top,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Interior,
    Dirichlet,
    Neumann,
}

/// 1D finite-difference stencil with up to four taps.
#[derive(Debug, Clone, Copy)]
struct Stencil {
    idx: [usize; 4],
    coef: [f64; 4],
    len: usize,
}

impl Stencil {
    fn new(taps: &[(usize, f64)]) -> Self {
        let mut s = Stencil {
            idx: [0; 4],
            coef: [0.0; 4],
            len: taps.len(),
        };
        for (k, &(i, c)) in taps.iter().enumerate() {
            s.idx[k] = i;
            s.coef[k] = c;
        }
        s
    }

    fn taps(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        (0..self.len).map(move |k| (self.idx[k], self.coef[k]))
    }
}

fn first_derivative_stencils(n: usize, h: f64) -> Vec<Stencil> {
    let c = 0.5 / h;
    (0..n)
        .map(|i| {
            if i == 0 {
                Stencil::new(&[(0, -3.0 * c), (1, 4.0 * c), (2, -c)])
            } else if i == n - 1 {
                Stencil::new(&[(n - 1, 3.0 * c), (n - 2, -4.0 * c), (n - 3, c)])
            } else {
                Stencil::new(&[(i - 1, -c), (i + 1, c)])
            }
        })
        .collect()
}

fn second_derivative_stencils(n: usize, h: f64) -> Vec<Stencil> {
    let c = 1.0 / (h * h);
    (0..n)
        .map(|i| {
            if i == 0 || i == n - 1 {
                let (a, b, cc, d) = if i == 0 { (0, 1, 2, 3) } else { (n - 1, n - 2, n - 3, n.wrapping_sub(4)) };
                if n >= 4 {
                    Stencil::new(&[(a, 2.0 * c), (b, -5.0 * c), (cc, 4.0 * c), (d, -c)])
                } else {
                    Stencil::new(&[(a, c), (b, -2.0 * c), (cc, c)])
                }
            } else {
                Stencil::new(&[(i - 1, c), (i, -2.0 * c), (i + 1, c)])
            }
        })
        .collect()
}

/// Uniform discretization of the rectangle `U` with boundary bookkeeping.
#[derive(Debug, Clone)]
pub struct Grid2 {
    pub nx: usize,
    pub ny: usize,
    pub hx: f64,
    pub hy: f64,
    pub origin: Vec2,
    dirichlet: Vec<Edge>,
    kinds: Vec<NodeKind>,
    normals: Vec<Vec2>,
    weights: Vec<f64>,
    dx: Vec<Stencil>,
    dy: Vec<Stencil>,
    dxx: Vec<Stencil>,
    dyy: Vec<Stencil>,
}

impl Grid2 {
    /// Builds an `nx × ny` node grid over `[x0, x1] × [y0, y1]`.
    pub fn new(nx: usize, ny: usize, x_range: [f64; 2], y_range: [f64; 2], dirichlet: &[Edge]) -> Result<Self> {
        if nx < 3 || ny < 3 {
            return Err(Error::Config(format!("grid needs at least 3×3 nodes, got {nx}×{ny}")));
        }
        let (lx, ly) = (x_range[1] - x_range[0], y_range[1] - y_range[0]);
        if !(lx > 0.0 && ly > 0.0) {
            return Err(Error::Config("grid extents must be positive".into()));
        }
        if dirichlet.is_empty() {
            return Err(Error::Config("Dirichlet boundary must be nonempty".into()));
        }
        let hx = lx / (nx - 1) as f64;
        let hy = ly / (ny - 1) as f64;
        let mut kinds = vec![NodeKind::Interior; nx * ny];
        let mut normals = vec![Vec2::zeros(); nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                let mut on = Vec::with_capacity(2);
                if i == 0 {
                    on.push(Edge::Left);
                }
                if i == nx - 1 {
                    on.push(Edge::Right);
                }
                if j == 0 {
                    on.push(Edge::Bottom);
                }
                if j == ny - 1 {
                    on.push(Edge::Top);
                }
                if on.is_empty() {
                    continue;
                }
                let k = j * nx + i;
                kinds[k] = if on.iter().any(|e| dirichlet.contains(e)) {
                    NodeKind::Dirichlet
                } else {
                    NodeKind::Neumann
                };
                let n: Vec2 = on
                    .iter()
                    .map(|e| match e {
                        Edge::Left => Vec2::new(-1.0, 0.0),
                        Edge::Right => Vec2::new(1.0, 0.0),
                        Edge::Bottom => Vec2::new(0.0, -1.0),
                        Edge::Top => Vec2::new(0.0, 1.0),
                    })
                    .sum();
                normals[k] = n.normalize();
            }
        }
        let mut weights = vec![0.0; nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                let wx = if i == 0 || i == nx - 1 { 0.5 } else { 1.0 };
                let wy = if j == 0 || j == ny - 1 { 0.5 } else { 1.0 };
                weights[j * nx + i] = wx * wy * hx * hy;
            }
        }
        Ok(Self {
            nx,
            ny,
            hx,
            hy,
            origin: Vec2::new(x_range[0], y_range[0]),
            dirichlet: dirichlet.to_vec(),
            kinds,
            normals,
            weights,
            dx: first_derivative_stencils(nx, hx),
            dy: first_derivative_stencils(ny, hy),
            dxx: second_derivative_stencils(nx, hx),
            dyy: second_derivative_stencils(ny, hy),
        })
    }

    /// Unit square with `n × n` nodes and the left edge clamped.
    pub fn unit_square(n: usize) -> Result<Self> {
        Self::new(n, n, [0.0, 1.0], [0.0, 1.0], &[Edge::Left])
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn ij(&self, k: usize) -> (usize, usize) {
        (k % self.nx, k / self.nx)
    }

    #[inline]
    pub fn point(&self, k: usize) -> Vec2 {
        let (i, j) = self.ij(k);
        self.origin + Vec2::new(i as f64 * self.hx, j as f64 * self.hy)
    }

    pub fn extent(&self) -> [f64; 4] {
        [
            self.origin.x,
            self.origin.x + (self.nx - 1) as f64 * self.hx,
            self.origin.y,
            self.origin.y + (self.ny - 1) as f64 * self.hy,
        ]
    }

    pub fn area(&self) -> f64 {
        let [x0, x1, y0, y1] = self.extent();
        (x1 - x0) * (y1 - y0)
    }

    pub fn h(&self) -> f64 {
        self.hx.max(self.hy)
    }

    /// Same node layout and boundary assignment.
    pub fn same_layout(&self, other: &Grid2) -> bool {
        self.nx == other.nx
            && self.ny == other.ny
            && self.hx == other.hx
            && self.hy == other.hy
            && self.origin == other.origin
            && self.kinds == other.kinds
    }

    /// Edges carrying the Dirichlet condition.
    pub fn dirichlet_edges(&self) -> &[Edge] {
        &self.dirichlet
    }

    pub fn kind(&self, k: usize) -> NodeKind {
        self.kinds[k]
    }

    /// Product of the normalized distances to the Dirichlet edges; vanishes
    /// exactly on `Γ_D` and is at most one.
    pub fn dirichlet_cutoff(&self, x: &Vec2) -> f64 {
        let [x0, x1, y0, y1] = self.extent();
        let u = (x.x - x0) / (x1 - x0);
        let v = (x.y - y0) / (y1 - y0);
        self.dirichlet
            .iter()
            .map(|e| match e {
                Edge::Left => u,
                Edge::Right => 1.0 - u,
                Edge::Bottom => v,
                Edge::Top => 1.0 - v,
            })
            .product()
    }

    pub fn is_dirichlet(&self, k: usize) -> bool {
        self.kinds[k] == NodeKind::Dirichlet
    }

    pub fn is_boundary(&self, k: usize) -> bool {
        self.kinds[k] != NodeKind::Interior
    }

    /// Outer unit normal at boundary nodes (corners get the diagonal), zero
    /// in the interior.
    pub fn normal(&self, k: usize) -> Vec2 {
        self.normals[k]
    }

    /// Trapezoidal quadrature weights.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn integrate(&self, values: impl IntoIterator<Item = f64>) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }

    /// Euclidean distance from a point to the boundary of the rectangle.
    pub fn distance_to_boundary(&self, x: &Vec2) -> f64 {
        let [x0, x1, y0, y1] = self.extent();
        (x.x - x0).min(x1 - x.x).min(x.y - y0).min(y1 - x.y)
    }

    /// Node indices and coefficients of the `∂x` and `∂y` stencils at `k`.
    pub fn derivative_taps(&self, k: usize) -> (Vec<(usize, f64)>, Vec<(usize, f64)>) {
        let (i, j) = self.ij(k);
        (
            self.dx[i].taps().map(|(ii, c)| (self.index(ii, j), c)).collect(),
            self.dy[j].taps().map(|(jj, c)| (self.index(i, jj), c)).collect(),
        )
    }

    /// Gradient of a nodal scalar.
    pub fn grad_scalar(&self, u: &[f64]) -> Vec<Vec2> {
        let mut out = Vec::with_capacity(self.len());
        for j in 0..self.ny {
            for i in 0..self.nx {
                let gx: f64 = self.dx[i].taps().map(|(ii, c)| c * u[self.index(ii, j)]).sum();
                let gy: f64 = self.dy[j].taps().map(|(jj, c)| c * u[self.index(i, jj)]).sum();
                out.push(Vec2::new(gx, gy));
            }
        }
        out
    }

    /// Gradient of a single node of a vector field, `F_ij = ∂y_i/∂x_j`.
    #[inline]
    pub fn grad_vector_at(&self, y: &[Vec2], k: usize) -> Mat2 {
        let (i, j) = self.ij(k);
        let mut gx = Vec2::zeros();
        for (ii, c) in self.dx[i].taps() {
            gx += y[self.index(ii, j)] * c;
        }
        let mut gy = Vec2::zeros();
        for (jj, c) in self.dy[j].taps() {
            gy += y[self.index(i, jj)] * c;
        }
        Mat2::new(gx.x, gy.x, gx.y, gy.y)
    }

    pub fn grad_vector(&self, y: &[Vec2]) -> Vec<Mat2> {
        (0..self.len()).map(|k| self.grad_vector_at(y, k)).collect()
    }

    /// Accumulates `Gᵀ P` into `out`, where `G` is the vector gradient
    /// operator and `P` a per-node matrix field.
    pub fn grad_vector_adjoint_add(&self, p: &[Mat2], out: &mut [Vec2]) {
        for j in 0..self.ny {
            for i in 0..self.nx {
                let pk = &p[self.index(i, j)];
                let col_x = Vec2::new(pk[(0, 0)], pk[(1, 0)]);
                let col_y = Vec2::new(pk[(0, 1)], pk[(1, 1)]);
                for (ii, c) in self.dx[i].taps() {
                    out[self.index(ii, j)] += col_x * c;
                }
                for (jj, c) in self.dy[j].taps() {
                    out[self.index(i, jj)] += col_y * c;
                }
            }
        }
    }

    /// Second gradient of a single node, `G_ijk = ∂²y_i/∂x_j∂x_k`.
    #[inline]
    pub fn hessian_at(&self, y: &[Vec2], k: usize) -> Tensor3 {
        let (i, j) = self.ij(k);
        let mut xx = Vec2::zeros();
        for (ii, c) in self.dxx[i].taps() {
            xx += y[self.index(ii, j)] * c;
        }
        let mut yy = Vec2::zeros();
        for (jj, c) in self.dyy[j].taps() {
            yy += y[self.index(i, jj)] * c;
        }
        let mut xy = Vec2::zeros();
        for (ii, a) in self.dx[i].taps() {
            for (jj, b) in self.dy[j].taps() {
                xy += y[self.index(ii, jj)] * (a * b);
            }
        }
        let mut t = Tensor3::ZERO;
        for c in 0..2 {
            t.0[c][0][0] = xx[c];
            t.0[c][0][1] = xy[c];
            t.0[c][1][0] = xy[c];
            t.0[c][1][1] = yy[c];
        }
        t
    }

    pub fn hessian(&self, y: &[Vec2]) -> Vec<Tensor3> {
        (0..self.len()).map(|k| self.hessian_at(y, k)).collect()
    }

    /// Accumulates the adjoint of [`Grid2::hessian`] applied to `s`.
    pub fn hessian_adjoint_add(&self, s: &[Tensor3], out: &mut [Vec2]) {
        for j in 0..self.ny {
            for i in 0..self.nx {
                let t = &s[self.index(i, j)];
                let xx = Vec2::new(t.0[0][0][0], t.0[1][0][0]);
                let yy = Vec2::new(t.0[0][1][1], t.0[1][1][1]);
                let xy = Vec2::new(t.0[0][0][1] + t.0[0][1][0], t.0[1][0][1] + t.0[1][1][0]);
                for (ii, c) in self.dxx[i].taps() {
                    out[self.index(ii, j)] += xx * c;
                }
                for (jj, c) in self.dyy[j].taps() {
                    out[self.index(i, jj)] += yy * c;
                }
                for (ii, a) in self.dx[i].taps() {
                    for (jj, b) in self.dy[j].taps() {
                        out[self.index(ii, jj)] += xy * (a * b);
                    }
                }
            }
        }
    }

    /// Bilinear interpolation of a nodal scalar at `x` (clamped to the grid).
    pub fn interpolate(&self, u: &[f64], x: &Vec2) -> f64 {
        let (i, j, a, b) = self.locate(x);
        let k00 = self.index(i, j);
        let k10 = self.index(i + 1, j);
        let k01 = self.index(i, j + 1);
        let k11 = self.index(i + 1, j + 1);
        (1.0 - a) * (1.0 - b) * u[k00] + a * (1.0 - b) * u[k10] + (1.0 - a) * b * u[k01] + a * b * u[k11]
    }

    /// Cell `(i, j)` containing `x` and the local coordinates in `[0, 1]²`.
    pub fn locate(&self, x: &Vec2) -> (usize, usize, f64, f64) {
        let fx = ((x.x - self.origin.x) / self.hx).clamp(0.0, (self.nx - 1) as f64);
        let fy = ((x.y - self.origin.y) / self.hy).clamp(0.0, (self.ny - 1) as f64);
        let i = (fx.floor() as usize).min(self.nx - 2);
        let j = (fy.floor() as usize).min(self.ny - 2);
        (i, j, fx - i as f64, fy - j as f64)
    }
}

/// Nodal scalar field on a grid.
#[derive(Debug, Clone)]
pub struct ScalarField {
    grid: Arc<Grid2>,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Arc<Grid2>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape {
                expected: grid.len(),
                got: values.len(),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Arc<Grid2>, value: f64) -> Self {
        let n = grid.len();
        Self {
            grid,
            values: vec![value; n],
        }
    }

    pub fn from_fn(grid: Arc<Grid2>, f: impl Fn(Vec2) -> f64) -> Self {
        let values = (0..grid.len()).map(|k| f(grid.point(k))).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &Arc<Grid2> {
        &self.grid
    }

    pub fn grad(&self) -> Vec<Vec2> {
        self.grid.grad_scalar(&self.values)
    }

    pub fn max_abs_diff(&self, other: &ScalarField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

impl PartialEq for ScalarField {
    fn eq(&self, other: &Self) -> bool {
        self.grid.same_layout(&other.grid) && self.values == other.values
    }
}

/// Nodal 2-vector field (deformations).
#[derive(Debug, Clone)]
pub struct VectorField2 {
    grid: Arc<Grid2>,
    pub values: Vec<Vec2>,
}

impl VectorField2 {
    pub fn new(grid: Arc<Grid2>, values: Vec<Vec2>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape {
                expected: grid.len(),
                got: values.len(),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn identity(grid: Arc<Grid2>) -> Self {
        let values = (0..grid.len()).map(|k| grid.point(k)).collect();
        Self { grid, values }
    }

    pub fn from_fn(grid: Arc<Grid2>, f: impl Fn(Vec2) -> Vec2) -> Self {
        let values = (0..grid.len()).map(|k| f(grid.point(k))).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &Arc<Grid2> {
        &self.grid
    }

    pub fn grad(&self) -> Vec<Mat2> {
        self.grid.grad_vector(&self.values)
    }

    pub fn hessian(&self) -> Vec<Tensor3> {
        self.grid.hessian(&self.values)
    }

    pub fn min_det(&self) -> f64 {
        (0..self.grid.len())
            .map(|k| self.grid.grad_vector_at(&self.values, k).determinant())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs_diff(&self, other: &VectorField2) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).amax()))
    }
}

impl PartialEq for VectorField2 {
    fn eq(&self, other: &Self) -> bool {
        self.grid.same_layout(&other.grid) && self.values == other.values
    }
}

/// Which trajectory quantity [`sample_time`] interpolates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Deformation,
    Gradient,
}

/// Value sampled from a trajectory at one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sample {
    Deformation(Vec2),
    Gradient(Mat2),
}

/// Piecewise-linear interpolation in time of the deformation (or its
/// gradient) at node `k`; `t` is clamped to `[0, T]`.
pub fn sample_time(traj: &Trajectory, kind: FieldKind, t: f64, k: usize) -> Sample {
    let (lo, hi, a) = traj.bracket(t);
    match kind {
        FieldKind::Deformation => {
            let y0 = traj.snapshot(lo).values[k];
            let y1 = traj.snapshot(hi).values[k];
            Sample::Deformation(y0 * (1.0 - a) + y1 * a)
        }
        FieldKind::Gradient => {
            let f0 = traj.gradient(lo, k);
            let f1 = traj.gradient(hi, k);
            Sample::Gradient(f0 * (1.0 - a) + f1 * a)
        }
    }
}
