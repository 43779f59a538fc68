//! Grid Laplacian preconditioner for the incremental minimization.
//!
//! The mechanical Hessian is spectrally close to the vector Laplacian built
//! from the same difference stencils and boundary conditions; its inverse,
//! applied componentwise, serves as the initial inverse-Hessian guess of
//! L-BFGS.

use crate::fields::Grid2;
use crate::lbfgs::Preconditioner;

/// Cholesky factor of a symmetric positive definite band matrix.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    bw: usize,
    /// Row `i` holds `L[i][i - bw ..= i]`.
    l: Vec<f64>,
}

impl BandCholesky {
    /// Factors the matrix whose lower band is given by `entry(i, j)` for
    /// `i - bw <= j <= i`. Returns `None` if it is not positive definite.
    pub fn factor(n: usize, bw: usize, mut entry: impl FnMut(usize, usize) -> f64) -> Option<Self> {
        let w = bw + 1;
        let mut l = vec![0.0; n * w];
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                let mut s = entry(i, j);
                let k0 = j0.max(j.saturating_sub(bw));
                for k in k0..j {
                    s -= l[i * w + k + bw - i] * l[j * w + k + bw - j];
                }
                if j == i {
                    if !(s > 0.0) {
                        return None;
                    }
                    l[i * w + bw] = s.sqrt();
                } else {
                    l[i * w + j + bw - i] = s / l[j * w + bw];
                }
            }
        }
        Some(Self { n, bw, l })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Overwrites `b` with `A⁻¹ b`.
    pub fn solve(&self, b: &mut [f64]) {
        let (w, bw) = (self.bw + 1, self.bw);
        for i in 0..self.n {
            let mut s = b[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.l[i * w + k + bw - i] * b[k];
            }
            b[i] = s / self.l[i * w + bw];
        }
        for i in (0..self.n).rev() {
            let mut s = b[i];
            for k in i + 1..(i + bw + 1).min(self.n) {
                s -= self.l[k * w + i + bw - k] * b[k];
            }
            b[i] = s / self.l[i * w + bw];
        }
    }
}

/// `Σ_k w_k (D_k ⊗ D_k)` over the nodal difference stencils `D_k` (the
/// operator `Gᵀ W G` of the discrete gradient), restricted to the free
/// nodes, plus a multiple of the five-point Laplacian that controls the
/// odd-even modes the centred stencils cannot see.
#[derive(Debug, Clone)]
pub struct GridLaplacian {
    chol: BandCholesky,
    scratch: std::cell::RefCell<Vec<f64>>,
}

impl GridLaplacian {
    /// Weight of the five-point term relative to the stencil operator.
    pub const COMPACT_WEIGHT: f64 = 0.05;

    pub fn new(grid: &Grid2, free: &[usize]) -> Option<Self> {
        Self::with_weight(grid, free, Self::COMPACT_WEIGHT)
    }

    pub fn with_weight(grid: &Grid2, free: &[usize], compact: f64) -> Option<Self> {
        let n = free.len();
        let mut slot = vec![usize::MAX; grid.len()];
        for (m, &k) in free.iter().enumerate() {
            slot[k] = m;
        }
        let bw = (2 * grid.nx + 2).min(n.saturating_sub(1)).max(1);
        let w = bw + 1;
        let mut band = vec![0.0; n * w];
        let mut add = |a: usize, b: usize, v: f64| {
            let (sa, sb) = (slot[a], slot[b]);
            if sa == usize::MAX || sb == usize::MAX {
                return;
            }
            let (i, j) = if sa >= sb { (sa, sb) } else { (sb, sa) };
            debug_assert!(i - j <= bw);
            if a == b || sa > sb {
                band[i * w + j + bw - i] += v;
            }
        };
        for k in 0..grid.len() {
            let wk = grid.weights()[k];
            let (dx, dy) = grid.derivative_taps(k);
            for taps in [&dx, &dy] {
                for &(a, ca) in taps.iter() {
                    for &(b, cb) in taps.iter() {
                        add(a, b, wk * ca * cb);
                    }
                }
            }
        }
        let (cx, cy) = (grid.hy / grid.hx, grid.hx / grid.hy);
        for k in 0..grid.len() {
            let (i, j) = grid.ij(k);
            if i + 1 < grid.nx {
                let c = compact * cx * if j == 0 || j == grid.ny - 1 { 0.5 } else { 1.0 };
                let l = grid.index(i + 1, j);
                add(k, k, c);
                add(l, l, c);
                add(l, k, -c);
            }
            if j + 1 < grid.ny {
                let c = compact * cy * if i == 0 || i == grid.nx - 1 { 0.5 } else { 1.0 };
                let l = grid.index(i, j + 1);
                add(k, k, c);
                add(l, l, c);
                add(l, k, -c);
            }
            add(k, k, 1e-3 * grid.weights()[k]);
        }
        let chol = BandCholesky::factor(n, bw, |i, j| band[i * w + j + bw - i])?;
        Some(Self {
            scratch: std::cell::RefCell::new(vec![0.0; n]),
            chol,
        })
    }
}

impl Preconditioner for GridLaplacian {
    /// Interleaved `(x, y)` components, solved one component at a time.
    fn apply(&self, r: &[f64], out: &mut [f64]) {
        let mut buf = self.scratch.borrow_mut();
        for c in 0..2 {
            for (m, v) in buf.iter_mut().enumerate() {
                *v = r[2 * m + c];
            }
            self.chol.solve(&mut buf);
            for (m, v) in buf.iter().enumerate() {
                out[2 * m + c] = *v;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::Edge;
    use approx::assert_relative_eq;

    #[test]
    fn band_solve_matches_dense() {
        // Tridiagonal plus a second band.
        let n = 12;
        let a = |i: usize, j: usize| -> f64 {
            match i.abs_diff(j) {
                0 => 4.0 + i as f64 * 0.1,
                1 => -1.0,
                3 => 0.3,
                _ => 0.0,
            }
        };
        let chol = BandCholesky::factor(n, 3, |i, j| a(i, j)).unwrap();
        let x: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut b: Vec<f64> = (0..n).map(|i| (0..n).map(|j| a(i, j) * x[j]).sum()).collect();
        chol.solve(&mut b);
        for (u, v) in b.iter().zip(&x) {
            assert_relative_eq!(u, v, epsilon = 1e-12);
        }
    }

    #[test]
    fn indefinite_is_rejected() {
        assert!(BandCholesky::factor(3, 1, |i, j| if i == j { -1.0 } else { 0.0 }).is_none());
    }

    #[test]
    fn laplacian_inverse_is_symmetric_positive() {
        let g = Grid2::new(6, 5, [0.0, 1.0], [0.0, 0.8], &[Edge::Left, Edge::Top]).unwrap();
        let free: Vec<usize> = (0..g.len()).filter(|&k| !g.is_dirichlet(k)).collect();
        let p = GridLaplacian::new(&g, &free).unwrap();
        let n = 2 * free.len();
        let col = |e: usize| {
            let mut r = vec![0.0; n];
            r[e] = 1.0;
            let mut out = vec![0.0; n];
            p.apply(&r, &mut out);
            out
        };
        for a in (0..n).step_by(3) {
            let ca = col(a);
            assert!(ca[a] > 0.0);
            for b in (0..n).step_by(5) {
                assert_relative_eq!(ca[b], col(b)[a], epsilon = 1e-10);
            }
        }
    }
}
