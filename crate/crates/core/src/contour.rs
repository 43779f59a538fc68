//! Marching squares on nodal scalar fields with linear edge interpolation.

use crate::fields::{Edge, Grid2};
use crate::tensor::Vec2;

/// One piece of a level curve inside cell `(i, j)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub a: Vec2,
    pub b: Vec2,
    pub cell: (usize, usize),
}

impl Segment {
    pub fn length(&self) -> f64 {
        (self.b - self.a).norm()
    }

    pub fn midpoint(&self) -> Vec2 {
        (self.a + self.b) * 0.5
    }
}

/// Corner values of cell `(i, j)` in the order (0,0), (1,0), (1,1), (0,1).
fn corners(grid: &Grid2, u: &[f64], i: usize, j: usize) -> [f64; 4] {
    [
        u[grid.index(i, j)],
        u[grid.index(i + 1, j)],
        u[grid.index(i + 1, j + 1)],
        u[grid.index(i, j + 1)],
    ]
}

/// Point on cell edge `e` (0 bottom, 1 right, 2 top, 3 left) where the
/// linear interpolant of the corner values equals `level`.
fn edge_point(grid: &Grid2, i: usize, j: usize, c: &[f64; 4], e: usize, level: f64) -> Vec2 {
    let (p, q) = match e {
        0 => (0, 1),
        1 => (1, 2),
        2 => (3, 2),
        _ => (0, 3),
    };
    let t = ((level - c[p]) / (c[q] - c[p])).clamp(0.0, 1.0);
    let base = grid.origin + Vec2::new(i as f64 * grid.hx, j as f64 * grid.hy);
    let local = match e {
        0 => Vec2::new(t, 0.0),
        1 => Vec2::new(1.0, t),
        2 => Vec2::new(t, 1.0),
        _ => Vec2::new(0.0, t),
    };
    base + Vec2::new(local.x * grid.hx, local.y * grid.hy)
}

/// Segments of `{u = level}`. A corner is inside when `u < level`, matching
/// the strict sublevel convention; saddle cells are resolved by the cell
/// average.
pub fn level_segments(grid: &Grid2, u: &[f64], level: f64) -> Vec<Segment> {
    let mut out = Vec::new();
    for j in 0..grid.ny - 1 {
        for i in 0..grid.nx - 1 {
            let c = corners(grid, u, i, j);
            let mut case = 0;
            for (bit, v) in c.iter().enumerate() {
                if *v < level {
                    case |= 1 << bit;
                }
            }
            let pairs: &[(usize, usize)] = match case {
                0 | 15 => &[],
                1 | 14 => &[(3, 0)],
                2 | 13 => &[(0, 1)],
                3 | 12 => &[(3, 1)],
                4 | 11 => &[(1, 2)],
                6 | 9 => &[(0, 2)],
                7 | 8 => &[(3, 2)],
                5 | 10 => {
                    let center_inside = (c.iter().sum::<f64>() * 0.25) < level;
                    // Case 5: corners 0 and 2 inside.
                    if (case == 5) == center_inside {
                        &[(3, 2), (0, 1)]
                    } else {
                        &[(3, 0), (1, 2)]
                    }
                }
                _ => unreachable!(),
            };
            for &(e1, e2) in pairs {
                out.push(Segment {
                    a: edge_point(grid, i, j, &c, e1, level),
                    b: edge_point(grid, i, j, &c, e2, level),
                    cell: (i, j),
                });
            }
        }
    }
    out
}

/// Segments of `{u = level}` for the bilinear interpolant of `u`, traced by
/// marching squares on an `r × r` subdivision of every cell. Segments keep
/// the index of their parent cell.
pub fn level_segments_refined(grid: &Grid2, u: &[f64], level: f64, r: usize) -> Vec<Segment> {
    if r <= 1 {
        return level_segments(grid, u, level);
    }
    let sub = Grid2::new(r + 1, r + 1, [0.0, grid.hx], [0.0, grid.hy], &[Edge::Left]).expect("valid sub-grid");
    let mut vals = vec![0.0; sub.len()];
    let mut out = Vec::new();
    for j in 0..grid.ny - 1 {
        for i in 0..grid.nx - 1 {
            let c = corners(grid, u, i, j);
            let lo = c.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !(lo < level && level <= hi) {
                continue;
            }
            for (k, v) in vals.iter_mut().enumerate() {
                let (si, sj) = sub.ij(k);
                let (a, b) = (si as f64 / r as f64, sj as f64 / r as f64);
                *v = (1.0 - a) * (1.0 - b) * c[0] + a * (1.0 - b) * c[1] + a * b * c[2] + (1.0 - a) * b * c[3];
            }
            let base = grid.origin + Vec2::new(i as f64 * grid.hx, j as f64 * grid.hy);
            for seg in level_segments(&sub, &vals, level) {
                out.push(Segment {
                    a: base + seg.a,
                    b: base + seg.b,
                    cell: (i, j),
                });
            }
        }
    }
    out
}

/// Gradient of the bilinear interpolant of `u` at `x` inside cell `(i, j)`.
pub fn bilinear_gradient(grid: &Grid2, u: &[f64], cell: (usize, usize), x: &Vec2) -> Vec2 {
    let (i, j) = cell;
    let c = corners(grid, u, i, j);
    let a = ((x.x - grid.origin.x) / grid.hx - i as f64).clamp(0.0, 1.0);
    let b = ((x.y - grid.origin.y) / grid.hy - j as f64).clamp(0.0, 1.0);
    let gx = ((1.0 - b) * (c[1] - c[0]) + b * (c[2] - c[3])) / grid.hx;
    let gy = ((1.0 - a) * (c[3] - c[0]) + a * (c[2] - c[1])) / grid.hy;
    Vec2::new(gx, gy)
}

/// Total length of `{u = level}`.
pub fn level_length(grid: &Grid2, u: &[f64], level: f64) -> f64 {
    level_segments(grid, u, level).iter().map(Segment::length).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::ScalarField;
    use std::sync::Arc;

    #[test]
    fn circle_length_converges() {
        let mut prev_err = f64::INFINITY;
        for n in [33, 65, 129] {
            let g = Arc::new(Grid2::unit_square(n).unwrap());
            let u = ScalarField::from_fn(g.clone(), |x| (x - Vec2::new(0.5, 0.5)).norm());
            let len = level_length(&g, &u.values, 0.3);
            let err = (len - 2.0 * std::f64::consts::PI * 0.3).abs();
            assert!(err < prev_err / 3.0, "n={n} err={err}");
            prev_err = err;
        }
    }

    #[test]
    fn empty_outside_range() {
        let g = Grid2::unit_square(9).unwrap();
        let u: Vec<f64> = (0..g.len()).map(|k| g.point(k).x).collect();
        assert!(level_segments(&g, &u, -1.0).is_empty());
        assert!(level_segments(&g, &u, 2.0).is_empty());
        let segs = level_segments(&g, &u, 0.4);
        let len: f64 = segs.iter().map(Segment::length).sum();
        assert!((len - 1.0).abs() < 1e-12);
        for s in &segs {
            assert!((s.a.x - 0.4).abs() < 1e-12 && (s.b.x - 0.4).abs() < 1e-12);
            let gr = bilinear_gradient(&g, &u, s.cell, &s.midpoint());
            assert!((gr - Vec2::new(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn saddle_cells_give_two_segments() {
        let g = Grid2::unit_square(3).unwrap();
        let mut u = vec![1.0; g.len()];
        u[g.index(0, 0)] = 0.0;
        u[g.index(1, 1)] = 0.0;
        let segs = level_segments(&g, &u, 0.5);
        assert_eq!(segs.iter().filter(|s| s.cell == (0, 0)).count(), 2);
    }
}
