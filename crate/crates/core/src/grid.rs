//! Uniform tensor grids on boxes `(0, x_max) x (0, y_max)` and the finite
//! difference operators used by the schemes.
//!
//! Nodes are numbered row-major with the x index running fastest, so in 2D
//! node `(ix, iy)` has index `iy * (nx + 1) + ix`. Boundary nodes are the
//! nodes with some index equal to `0` or `n_axis`.

use std::ops::{Deref, DerefMut};

use crate::error::{Error, Result};
use crate::hamiltonian::GradPair;

/// Spatial mesh. `cells[a]` is the number of intervals on axis `a`
/// (the node count minus one).
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    dim: usize,
    cells: [usize; 2],
    x_max: [f64; 2],
    h: [f64; 2],
    strides: [usize; 2],
    n_nodes: usize,
    interior: Vec<usize>,
    interior_pos: Vec<usize>,
}

const NOT_INTERIOR: usize = usize::MAX;

impl Grid {
    pub fn new_1d(x_max: f64, cells: usize) -> Result<Self> {
        Self::build(1, [cells, 1], [x_max, 1.0])
    }

    pub fn new_2d(x_max: f64, y_max: f64, nx: usize, ny: usize) -> Result<Self> {
        Self::build(2, [nx, ny], [x_max, y_max])
    }

    fn build(dim: usize, cells: [usize; 2], x_max: [f64; 2]) -> Result<Self> {
        for a in 0..dim {
            if cells[a] < 2 {
                return Err(Error::InvalidGrid(format!(
                    "axis {a} needs at least 2 cells, got {}",
                    cells[a]
                )));
            }
            if !(x_max[a] > 0.0 && x_max[a].is_finite()) {
                return Err(Error::InvalidGrid(format!(
                    "axis {a} length must be positive, got {}",
                    x_max[a]
                )));
            }
        }
        let mut h = [1.0; 2];
        let mut strides = [0; 2];
        let mut counts = [1usize; 2];
        for a in 0..dim {
            h[a] = x_max[a] / cells[a] as f64;
            counts[a] = cells[a] + 1;
        }
        strides[0] = 1;
        strides[1] = counts[0];
        let n_nodes = counts[0] * counts[1];

        let mut interior = Vec::new();
        let mut interior_pos = vec![NOT_INTERIOR; n_nodes];
        for node in 0..n_nodes {
            let idx = [node % counts[0], node / counts[0]];
            let on_boundary = (0..dim).any(|a| idx[a] == 0 || idx[a] == cells[a]);
            if !on_boundary {
                interior_pos[node] = interior.len();
                interior.push(node);
            }
        }
        Ok(Self {
            dim,
            cells,
            x_max,
            h,
            strides,
            n_nodes,
            interior,
            interior_pos,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of intervals on `axis`.
    pub fn cells(&self, axis: usize) -> usize {
        self.cells[axis]
    }

    pub fn x_max(&self, axis: usize) -> f64 {
        self.x_max[axis]
    }

    pub fn h(&self, axis: usize) -> f64 {
        self.h[axis]
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.strides[axis]
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    /// Volume element `h_x` (1D) or `h_x h_y` (2D).
    pub fn cell_volume(&self) -> f64 {
        (0..self.dim).map(|a| self.h[a]).product()
    }

    /// Per-axis index of a node.
    pub fn index(&self, node: usize) -> [usize; 2] {
        let nx = self.cells[0] + 1;
        [node % nx, node / nx]
    }

    pub fn node(&self, idx: [usize; 2]) -> usize {
        idx[0] + idx[1] * self.strides[1]
    }

    pub fn coords(&self, node: usize) -> [f64; 2] {
        let idx = self.index(node);
        let mut x = [0.0; 2];
        for a in 0..self.dim {
            x[a] = idx[a] as f64 * self.h[a];
        }
        x
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.interior_pos[node] == NOT_INTERIOR
    }

    /// Interior nodes in increasing node order.
    pub fn interior(&self) -> &[usize] {
        &self.interior
    }

    pub fn n_interior(&self) -> usize {
        self.interior.len()
    }

    /// Position of `node` among the interior unknowns.
    pub fn interior_pos(&self, node: usize) -> Option<usize> {
        match self.interior_pos[node] {
            NOT_INTERIOR => None,
            p => Some(p),
        }
    }

    /// Restrict a node vector to the interior unknowns.
    pub fn restrict(&self, values: &[f64]) -> Vec<f64> {
        self.interior.iter().map(|&n| values[n]).collect()
    }

    /// Scatter interior unknowns into a node vector with zero boundary.
    pub fn extend(&self, interior_values: &[f64]) -> Field {
        let mut out = vec![0.0; self.n_nodes];
        for (k, &n) in self.interior.iter().enumerate() {
            out[n] = interior_values[k];
        }
        Field(out)
    }
}

/// Time discretization `t_n = n * dt`, `n = 0..=steps`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    steps: usize,
    dt: f64,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidGrid("need at least one time step".into()));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "time horizon must be positive, got {horizon}"
            )));
        }
        Ok(Self {
            steps,
            dt: horizon / steps as f64,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.steps as f64
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }
}

/// Grid function: one value per node.
#[derive(Clone, Debug, PartialEq)]
pub struct Field(Vec<f64>);

impl Field {
    pub fn zeros(grid: &Grid) -> Self {
        Field(vec![0.0; grid.n_nodes()])
    }

    pub fn from_vec(grid: &Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_nodes() {
            return Err(Error::LengthMismatch {
                expected: grid.n_nodes(),
                found: values.len(),
            });
        }
        Ok(Field(values))
    }

    pub fn from_fn(grid: &Grid, f: impl Fn([f64; 2]) -> f64) -> Self {
        Field((0..grid.n_nodes()).map(|n| f(grid.coords(n))).collect())
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn scaled(&self, c: f64) -> Field {
        Field(self.0.iter().map(|v| v * c).collect())
    }

    /// `(1 - theta) * self + theta * other`.
    pub fn relax_towards(&self, other: &Field, theta: f64) -> Field {
        Field(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| (1.0 - theta) * a + theta * b)
                .collect(),
        )
    }
}

impl Deref for Field {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Field {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// A full trajectory: slices `0..=steps`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpaceTimeField {
    slices: Vec<Field>,
}

impl SpaceTimeField {
    pub fn zeros(grid: &Grid, time: &TimeGrid) -> Self {
        Self {
            slices: vec![Field::zeros(grid); time.steps() + 1],
        }
    }

    pub fn from_slices(slices: Vec<Field>) -> Self {
        Self { slices }
    }

    pub fn constant_in_time(field: &Field, time: &TimeGrid) -> Self {
        Self {
            slices: vec![field.clone(); time.steps() + 1],
        }
    }

    pub fn slice(&self, n: usize) -> &Field {
        &self.slices[n]
    }

    pub fn slice_mut(&mut self, n: usize) -> &mut Field {
        &mut self.slices[n]
    }

    pub fn slices(&self) -> &[Field] {
        &self.slices
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn relax_towards(&self, other: &SpaceTimeField, theta: f64) -> SpaceTimeField {
        SpaceTimeField {
            slices: self
                .slices
                .iter()
                .zip(&other.slices)
                .map(|(a, b)| a.relax_towards(b, theta))
                .collect(),
        }
    }

    pub fn masses(&self, grid: &Grid) -> Vec<f64> {
        self.slices.iter().map(|s| mass(grid, s)).collect()
    }
}

fn check_axis(grid: &Grid, axis: usize) -> Result<()> {
    if axis >= grid.dim() {
        return Err(Error::AxisOutOfRange {
            axis,
            dim: grid.dim(),
        });
    }
    Ok(())
}

/// Forward differences `(W[i+1] - W[i]) / h` along `axis`, one value per
/// face. Faces are laid out row-major over the box with `cells(axis)`
/// entries along `axis` and `cells + 1` along the other axis.
pub fn d_plus(grid: &Grid, w: &[f64], axis: usize) -> Result<Vec<f64>> {
    check_axis(grid, axis)?;
    let h = grid.h(axis);
    let s = grid.stride(axis);
    let mut out = Vec::new();
    for node in 0..grid.n_nodes() {
        if grid.index(node)[axis] < grid.cells(axis) {
            out.push((w[node + s] - w[node]) / h);
        }
    }
    Ok(out)
}

/// Three-point (1D) or five-point (2D) Laplacian at interior nodes; the
/// boundary entries of the result are zero.
pub fn laplacian(grid: &Grid, w: &[f64]) -> Field {
    let mut out = Field::zeros(grid);
    for &node in grid.interior() {
        let mut acc = 0.0;
        for a in 0..grid.dim() {
            let s = grid.stride(a);
            let h2 = grid.h(a) * grid.h(a);
            acc -= (2.0 * w[node] - w[node + s] - w[node - s]) / h2;
        }
        out[node] = acc;
    }
    out
}

/// Forward and backward differences at an interior node.
pub fn grad(grid: &Grid, w: &[f64], node: usize) -> Result<GradPair> {
    if grid.is_boundary(node) {
        let idx = grid.index(node);
        let axis = (0..grid.dim())
            .find(|&a| idx[a] == 0 || idx[a] == grid.cells(a))
            .unwrap_or(0);
        return Err(Error::NoNeighbor { node, axis });
    }
    Ok(grad_unchecked(grid, w, node))
}

#[inline]
pub(crate) fn grad_unchecked(grid: &Grid, w: &[f64], node: usize) -> GradPair {
    let mut g = GradPair::zero(grid.dim());
    for a in 0..grid.dim() {
        let s = grid.stride(a);
        let h = grid.h(a);
        g.fwd[a] = (w[node + s] - w[node]) / h;
        g.bwd[a] = (w[node] - w[node - s]) / h;
    }
    g
}

/// Rectangle rule over all nodes.
pub fn mass(grid: &Grid, p: &[f64]) -> f64 {
    grid.cell_volume() * p.iter().sum::<f64>()
}

/// Discrete inner product `h^d * sum_i a_i b_i`.
pub fn inner(grid: &Grid, a: &[f64], b: &[f64]) -> f64 {
    grid.cell_volume() * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
}

/// Spatial normalized l2 norm `(h^d sum |v_i|^2)^(1/2)`.
pub fn l2_norm(grid: &Grid, v: &[f64]) -> f64 {
    inner(grid, v, v).sqrt()
}

pub fn l2_distance(grid: &Grid, a: &[f64], b: &[f64]) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (grid.cell_volume() * s).sqrt()
}

/// Space-time normalized l2 norm `(h^d dt sum_n sum_i |V_i^n|^2)^(1/2)`.
pub fn space_time_l2_distance(
    grid: &Grid,
    time: &TimeGrid,
    a: &SpaceTimeField,
    b: &SpaceTimeField,
) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.slices().iter().zip(b.slices()) {
        s += x
            .iter()
            .zip(y.iter())
            .map(|(p, q)| (p - q) * (p - q))
            .sum::<f64>();
    }
    (grid.cell_volume() * time.dt() * s).sqrt()
}

pub fn space_time_l2_norm(grid: &Grid, time: &TimeGrid, a: &SpaceTimeField) -> f64 {
    let s: f64 = a
        .slices()
        .iter()
        .map(|x| x.iter().map(|v| v * v).sum::<f64>())
        .sum();
    (grid.cell_volume() * time.dt() * s).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn d_plus_examples() {
        let g = Grid::new_1d(1.0, 2).unwrap();
        assert_eq!(d_plus(&g, &[3.0, 3.0, 3.0], 0).unwrap(), vec![0.0, 0.0]);
        assert_eq!(d_plus(&g, &[0.0, 0.5, 1.0], 0).unwrap(), vec![1.0, 1.0]);
        assert_eq!(d_plus(&g, &[0.0, 0.25, 1.0], 0).unwrap(), vec![0.5, 1.5]);
        assert!(matches!(
            d_plus(&g, &[0.0; 3], 1),
            Err(Error::AxisOutOfRange { axis: 1, dim: 1 })
        ));
    }

    #[test]
    fn d_plus_2d_face_count() {
        let g = Grid::new_2d(1.0, 1.0, 4, 3).unwrap();
        let w = Field::from_fn(&g, |x| 2.0 * x[0] - x[1]);
        let dx = d_plus(&g, &w, 0).unwrap();
        let dy = d_plus(&g, &w, 1).unwrap();
        assert_eq!(dx.len(), 4 * 4);
        assert_eq!(dy.len(), 5 * 3);
        assert!(dx.iter().all(|v| close(*v, 2.0, 1e-12)));
        assert!(dy.iter().all(|v| close(*v, -1.0, 1e-12)));
    }

    #[test]
    fn laplacian_of_affine_and_quadratic() {
        let g = Grid::new_1d(1.0, 4).unwrap();
        let lin = Field::from_fn(&g, |x| 3.0 * x[0] - 1.0);
        assert!(laplacian(&g, &lin).iter().all(|v| v.abs() < 1e-12));
        let quad = Field::from_fn(&g, |x| x[0] * x[0]);
        let lap = laplacian(&g, &quad);
        assert!(close(lap[2], 2.0, 1e-12));
        assert_eq!(lap[0], 0.0);
        assert_eq!(lap[4], 0.0);
    }

    #[test]
    fn laplacian_2d_affine_kernel() {
        let g = Grid::new_2d(1.0, 2.0, 5, 6).unwrap();
        let w = Field::from_fn(&g, |x| 1.0 + x[0] - 4.0 * x[1]);
        assert!(laplacian(&g, &w).iter().all(|v| v.abs() < 1e-10));
        let q = Field::from_fn(&g, |x| x[0] * x[0] + x[1] * x[1]);
        let lap = laplacian(&g, &q);
        for &n in g.interior() {
            assert!(close(lap[n], 4.0, 1e-9));
        }
    }

    #[test]
    fn laplacian_second_order_on_sine() {
        use std::f64::consts::PI;
        let err = |cells: usize| {
            let g = Grid::new_1d(1.0, cells).unwrap();
            let w = Field::from_fn(&g, |x| (PI * x[0]).sin());
            let lap = laplacian(&g, &w);
            g.interior()
                .iter()
                .map(|&n| (lap[n] + PI * PI * w[n]).abs())
                .fold(0.0, f64::max)
        };
        let (e1, e2, e3) = (err(20), err(40), err(80));
        let o1 = (e1 / e2).log2();
        let o2 = (e2 / e3).log2();
        assert!(o1 > 1.9 && o2 > 1.9, "orders {o1} {o2}");
    }

    #[test]
    fn grad_examples() {
        let g = Grid::new_1d(1.0, 4).unwrap();
        let c = Field::from_fn(&g, |_| 7.0);
        let gp = grad(&g, &c, 2).unwrap();
        assert_eq!((gp.fwd[0], gp.bwd[0]), (0.0, 0.0));
        let lin = Field::from_fn(&g, |x| x[0]);
        let gp = grad(&g, &lin, 1).unwrap();
        assert!(close(gp.fwd[0], 1.0, 1e-12) && close(gp.bwd[0], 1.0, 1e-12));
        let kink = Field::from_fn(&g, |x| (x[0] - 0.5).abs());
        let gp = grad(&g, &kink, 2).unwrap();
        assert!(close(gp.fwd[0], 1.0, 1e-12) && close(gp.bwd[0], -1.0, 1e-12));
        assert!(matches!(grad(&g, &lin, 0), Err(Error::NoNeighbor { .. })));
        assert!(matches!(grad(&g, &lin, 4), Err(Error::NoNeighbor { .. })));
    }

    #[test]
    fn grad_consistency_for_smooth_fields() {
        let errs: Vec<f64> = [20, 40, 80]
            .iter()
            .map(|&cells| {
                let g = Grid::new_1d(1.0, cells).unwrap();
                let w = Field::from_fn(&g, |x| (2.0 * x[0]).exp());
                let node = cells / 2;
                let gp = grad(&g, &w, node).unwrap();
                let exact = 2.0 * (2.0 * 0.5f64).exp();
                (gp.fwd[0] - exact).abs().max((gp.bwd[0] - exact).abs())
            })
            .collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2]);
        assert!(errs[2] < 0.1);
    }

    #[test]
    fn mass_examples() {
        let g = Grid::new_1d(1.0, 10).unwrap();
        assert_eq!(mass(&g, &Field::zeros(&g)), 0.0);
        let ones = Field::from_fn(&g, |_| 1.0);
        assert!(close(mass(&g, &ones), 11.0 * 0.1, 1e-12));
    }

    #[test]
    fn boundary_is_topological_boundary() {
        let g = Grid::new_2d(1.0, 1.0, 3, 4).unwrap();
        assert_eq!(g.n_nodes(), 20);
        assert_eq!(g.n_interior(), 2 * 3);
        for n in 0..g.n_nodes() {
            let [i, j] = g.index(n);
            let b = i == 0 || i == 3 || j == 0 || j == 4;
            assert_eq!(g.is_boundary(n), b);
        }
        assert_eq!(g.node([2, 3]), 2 + 3 * 4);
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(Grid::new_1d(1.0, 1).is_err());
        assert!(Grid::new_1d(0.0, 10).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
        assert!(TimeGrid::new(-1.0, 3).is_err());
    }
}
