//! Uniform tensor grids on the phenotype domain with trapezoid weights and a
//! zero-flux Laplacian.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CsrMatrix;

/// Axis-aligned box, one interval per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Discretized phenotype domain. Node `i` of a 2D grid has axis indices
/// `(i % n, i / n)`.
#[derive(Debug, Clone)]
pub struct PhenotypeGrid {
    dim: usize,
    bounds: Vec<Interval>,
    n_per_axis: usize,
    spacing: Vec<f64>,
    coords: Vec<f64>,
    weights: Vec<f64>,
    laplacian: CsrMatrix,
    anchor: usize,
}

/// Second-difference matrix on `n` nodes with spacing `h` and mirrored ghosts.
pub fn neumann_laplacian_1d(n: usize, h: f64) -> CsrMatrix {
    let s = 1.0 / (h * h);
    let rows = (0..n)
        .map(|k| {
            if k == 0 {
                vec![(0, -2.0 * s), (1, 2.0 * s)]
            } else if k == n - 1 {
                vec![(n - 2, 2.0 * s), (n - 1, -2.0 * s)]
            } else {
                vec![(k - 1, s), (k, -2.0 * s), (k + 1, s)]
            }
        })
        .collect();
    CsrMatrix::from_rows(rows)
}

/// Trapezoid weights on `n` nodes with spacing `h`.
pub fn trapezoid_weights_1d(n: usize, h: f64) -> Vec<f64> {
    (0..n)
        .map(|k| if k == 0 || k == n - 1 { 0.5 * h } else { h })
        .collect()
}

impl PhenotypeGrid {
    pub fn build(dim: usize, bounds: &[Interval], n_per_axis: usize) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension {dim} not in {{1,2}}")));
        }
        if bounds.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "{} bound intervals for dimension {dim}",
                bounds.len()
            )));
        }
        if n_per_axis < 3 {
            return Err(Error::DegenerateGrid(n_per_axis));
        }
        for (axis, b) in bounds.iter().enumerate() {
            if !(b.lo.is_finite() && b.hi.is_finite()) || b.lo >= 0.0 || b.hi <= 0.0 {
                return Err(Error::OriginNotInterior {
                    axis,
                    lo: b.lo,
                    hi: b.hi,
                });
            }
        }
        let n = n_per_axis;
        let spacing: Vec<f64> = bounds.iter().map(|b| b.len() / (n - 1) as f64).collect();
        let axis_coord = |axis: usize, k: usize| {
            if k == n - 1 {
                bounds[axis].hi
            } else {
                bounds[axis].lo + k as f64 * spacing[axis]
            }
        };
        let w1: Vec<Vec<f64>> = spacing.iter().map(|&h| trapezoid_weights_1d(n, h)).collect();
        let total = n.pow(dim as u32);
        let mut coords = Vec::with_capacity(total * dim);
        let mut weights = Vec::with_capacity(total);
        for i in 0..total {
            let mut w = 1.0;
            for axis in 0..dim {
                let k = axis_index(i, axis, n);
                coords.push(axis_coord(axis, k));
                w *= w1[axis][k];
            }
            weights.push(w);
        }

        let lap = if dim == 1 {
            neumann_laplacian_1d(n, spacing[0])
        } else {
            let l0 = neumann_laplacian_1d(n, spacing[0]);
            let l1 = neumann_laplacian_1d(n, spacing[1]);
            let rows = (0..total)
                .map(|i| {
                    let (a, b) = (i % n, i / n);
                    let mut row: Vec<(usize, f64)> = l0.row(a).map(|(c, v)| (c + b * n, v)).collect();
                    row.extend(l1.row(b).map(|(c, v)| (a + c * n, v)));
                    row
                })
                .collect();
            CsrMatrix::from_rows(rows)
        };

        let mut grid = Self {
            dim,
            bounds: bounds.to_vec(),
            n_per_axis: n,
            spacing,
            coords,
            weights,
            laplacian: lap,
            anchor: 0,
        };
        grid.anchor = (0..total)
            .min_by(|&p, &q| grid.norm(p).total_cmp(&grid.norm(q)))
            .unwrap_or(0);
        Ok(grid)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn n_per_axis(&self) -> usize {
        self.n_per_axis
    }

    pub fn bounds(&self) -> &[Interval] {
        &self.bounds
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    /// Euclidean norm of node `i`.
    pub fn norm(&self, i: usize) -> f64 {
        self.node(i).iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn laplacian(&self) -> &CsrMatrix {
        &self.laplacian
    }

    /// Node closest to the origin.
    pub fn anchor(&self) -> usize {
        self.anchor
    }

    pub fn volume(&self) -> f64 {
        self.bounds.iter().map(Interval::len).product()
    }

    /// Axis-`axis` index of node `i`.
    pub fn axis_index(&self, i: usize, axis: usize) -> usize {
        axis_index(i, axis, self.n_per_axis)
    }

    /// True when node `i` lies on ∂Ω.
    pub fn is_boundary(&self, i: usize) -> bool {
        (0..self.dim).any(|axis| {
            let k = self.axis_index(i, axis);
            k == 0 || k == self.n_per_axis - 1
        })
    }

    /// Quadrature of node values: Σ w_i f_i.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        self.weights.iter().zip(f).map(|(w, v)| w * v).sum()
    }

    /// Weighted inner product ⟨u, v⟩_w.
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(u.iter().zip(v))
            .map(|(w, (a, b))| w * a * b)
            .sum()
    }

    pub fn apply_laplacian(&self, u: &[f64]) -> Vec<f64> {
        self.laplacian.apply(u)
    }

    /// Samples `f` at every node.
    pub fn sample(&self, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        (0..self.len()).map(|i| f(self.node(i))).collect()
    }

    /// Centers and volumes of the 2^dim sub-cells of the control volume of node `i`
    /// (trapezoid cell, clipped at the boundary).
    pub fn subcells(&self, i: usize) -> Vec<(Vec<f64>, f64)> {
        let mut out = vec![(Vec::with_capacity(self.dim), 1.0)];
        for axis in 0..self.dim {
            let k = self.axis_index(i, axis);
            let h = self.spacing[axis];
            let c = self.node(i)[axis];
            let mut halves = Vec::with_capacity(2);
            if k > 0 {
                halves.push((c - 0.25 * h, 0.5 * h));
            }
            if k + 1 < self.n_per_axis {
                halves.push((c + 0.25 * h, 0.5 * h));
            }
            let mut next = Vec::with_capacity(out.len() * halves.len());
            for (pt, vol) in &out {
                for &(m, len) in &halves {
                    let mut p = pt.clone();
                    p.push(m);
                    next.push((p, vol * len));
                }
            }
            out = next;
        }
        out
    }
}

fn axis_index(i: usize, axis: usize, n: usize) -> usize {
    if axis == 0 {
        i % n
    } else {
        i / n
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid1(n: usize) -> PhenotypeGrid {
        PhenotypeGrid::build(1, &[Interval::new(-1.0, 1.0)], n).unwrap()
    }

    #[test]
    fn five_node_grid() {
        let g = grid1(5);
        let ys: Vec<f64> = (0..5).map(|i| g.node(i)[0]).collect();
        assert_eq!(ys, vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert_eq!(g.spacing()[0], 0.5);
        assert_eq!(g.weights().iter().sum::<f64>(), 2.0);
        assert_eq!(g.anchor(), 2);
    }

    #[test]
    fn laplacian_rows_sum_to_zero() {
        let g = grid1(201);
        for i in 0..g.len() {
            assert_eq!(g.laplacian().row_sum(i), 0.0);
        }
        let g2 = PhenotypeGrid::build(2, &[Interval::new(-1.0, 1.0), Interval::new(-0.5, 2.0)], 9).unwrap();
        for i in 0..g2.len() {
            assert!(g2.laplacian().row_sum(i).abs() < 1e-9);
        }
    }

    #[test]
    fn laplacian_of_square_at_center() {
        let g = grid1(5);
        let u = g.sample(|y| y[0] * y[0]);
        assert_eq!(g.apply_laplacian(&u)[2], 2.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            PhenotypeGrid::build(1, &[Interval::new(-1.0, 1.0)], 2),
            Err(Error::DegenerateGrid(2))
        ));
        assert!(matches!(
            PhenotypeGrid::build(1, &[Interval::new(0.0, 1.0)], 5),
            Err(Error::OriginNotInterior { .. })
        ));
    }

    #[test]
    fn quartic_converges_second_order() {
        let err = |n: usize| {
            let g = grid1(n);
            let u = g.sample(|y| y[0].powi(4));
            let lu = g.apply_laplacian(&u);
            (1..n - 1)
                .map(|i| (lu[i] - 12.0 * g.node(i)[0].powi(2)).abs())
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(41), err(81));
        let order = (e1 / e2).log2();
        assert!((order - 2.0).abs() < 0.05, "order {order}");
    }

    #[test]
    fn subcells_partition_the_cell() {
        let g = PhenotypeGrid::build(2, &[Interval::new(-1.0, 1.0), Interval::new(-1.0, 1.0)], 5).unwrap();
        for i in 0..g.len() {
            let v: f64 = g.subcells(i).iter().map(|(_, v)| v).sum();
            assert!((v - g.weights()[i]).abs() < 1e-15);
        }
    }

    proptest! {
        #[test]
        fn weights_and_self_adjointness(
            n in 3usize..40,
            lo in -3.0f64..-0.1,
            hi in 0.1f64..3.0,
            seed in any::<u64>(),
            two_d in any::<bool>(),
        ) {
            use rand::{Rng, SeedableRng};
            let dim = if two_d { 2 } else { 1 };
            let bounds = vec![Interval::new(lo, hi); dim];
            let n = if two_d { n.min(15) } else { n };
            let g = PhenotypeGrid::build(dim, &bounds, n).unwrap();
            let vol = g.volume();
            prop_assert!(g.weights().iter().all(|&w| w > 0.0));
            prop_assert!((g.integrate(&vec![3.0; g.len()]) - 3.0 * vol).abs() <= 1e-12 * 3.0 * vol);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let u: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let lhs = g.inner(&g.apply_laplacian(&u), &v);
            let rhs = g.inner(&u, &g.apply_laplacian(&v));
            let scale = g.laplacian().max_abs_row_sum() * vol;
            prop_assert!((lhs - rhs).abs() <= 1e-10 * scale.max(1.0));
        }
    }
}
