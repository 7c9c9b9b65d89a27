//! Transport operator and the implicit forward march of the density.

use crate::error::{Error, Result};
use crate::grid::{grad_unchecked, mass, Field, Grid, SpaceTimeField};
use crate::hamiltonian::HamiltonianParams;
use crate::problem::{ControlTrajectory, DiscreteProblem};
use crate::sparse::{CsrMatrix, LuFactor};

/// Values in `[-NEG_CLAMP, 0)` are treated as roundoff and zeroed.
pub const NEG_CLAMP: f64 = 1e-12;

/// Upwind drift coefficients per node: `fwd[a]` multiplies the forward
/// difference on axis `a`, `bwd[a]` the backward one. With the numerical
/// Hamiltonian these are its partials in the two slots; `fwd <= 0 <= bwd`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransportAssembly {
    pub fwd: Vec<[f64; 2]>,
    pub bwd: Vec<[f64; 2]>,
}

impl TransportAssembly {
    pub fn zero(grid: &Grid) -> Self {
        Self {
            fwd: vec![[0.0; 2]; grid.n_nodes()],
            bwd: vec![[0.0; 2]; grid.n_nodes()],
        }
    }

    /// Coefficients from `U` through the partials of the numerical
    /// Hamiltonian at mass argument `mu`. Boundary nodes get zero.
    pub fn from_value(grid: &Grid, ham: &HamiltonianParams, u: &[f64], mu: f64) -> Self {
        let mut t = Self::zero(grid);
        for &node in grid.interior() {
            let g = grad_unchecked(grid, u, node);
            let p = ham.partials(node, mu, &g);
            t.fwd[node] = p.d_fwd;
            t.bwd[node] = p.d_bwd;
        }
        t
    }

    /// Upwind split of a given drift: `fwd = min(b, 0)`, `bwd = max(b, 0)`.
    pub fn from_control(grid: &Grid, b: &[[f64; 2]]) -> Self {
        let mut t = Self::zero(grid);
        for &node in grid.interior() {
            for a in 0..grid.dim() {
                t.fwd[node][a] = b[node][a].min(0.0);
                t.bwd[node][a] = b[node][a].max(0.0);
            }
        }
        t
    }
}

/// The transport coefficients of `U` at mass argument `mu`.
pub fn assemble_b(grid: &Grid, ham: &HamiltonianParams, u: &[f64], mu: f64) -> TransportAssembly {
    TransportAssembly::from_value(grid, ham, u, mu)
}

/// Divergence-form transport `B(P)` at interior nodes.
pub fn apply_b(grid: &Grid, t: &TransportAssembly, p: &[f64]) -> Field {
    let mut out = Field::zeros(grid);
    for &i in grid.interior() {
        let mut acc = 0.0;
        for a in 0..grid.dim() {
            let s = grid.stride(a);
            acc += (p[i] * t.fwd[i][a] - p[i - s] * t.fwd[i - s][a] + p[i + s] * t.bwd[i + s][a]
                - p[i] * t.bwd[i][a])
                / grid.h(a);
        }
        out[i] = acc;
    }
    out
}

/// Transport block of the value-equation linearization,
/// `sum_a fwd (W[i+s] - W[i]) / h + bwd (W[i] - W[i-s]) / h`, at interior nodes.
pub fn apply_transport(grid: &Grid, t: &TransportAssembly, w: &[f64]) -> Field {
    let mut out = Field::zeros(grid);
    for &i in grid.interior() {
        let mut acc = 0.0;
        for a in 0..grid.dim() {
            let s = grid.stride(a);
            acc += (t.fwd[i][a] * (w[i + s] - w[i]) + t.bwd[i][a] * (w[i] - w[i - s])) / grid.h(a);
        }
        out[i] = acc;
    }
    out
}

/// `alpha I - sigma^2/2 Lap - B` on interior unknowns (density form), or
/// its transpose `alpha I - sigma^2/2 Lap + T` (value form).
pub fn assemble_operator(
    grid: &Grid,
    sigma: f64,
    t: &TransportAssembly,
    alpha: f64,
    value_form: bool,
) -> CsrMatrix {
    let half_s2 = 0.5 * sigma * sigma;
    let mut trip = Vec::with_capacity(grid.n_interior() * (1 + 2 * grid.dim()));
    for (row, &j) in grid.interior().iter().enumerate() {
        let mut diag = alpha;
        for a in 0..grid.dim() {
            let s = grid.stride(a);
            let h = grid.h(a);
            diag += 2.0 * half_s2 / (h * h) + (t.bwd[j][a] - t.fwd[j][a]) / h;
            // Density row j couples to P[j-s] through fwd[j-s] and to
            // P[j+s] through bwd[j+s]; the value form is the transpose.
            if let Some(col) = grid.interior_pos(j - s) {
                let v = if value_form {
                    -half_s2 / (h * h) - t.bwd[j][a] / h
                } else {
                    -half_s2 / (h * h) + t.fwd[j - s][a] / h
                };
                trip.push((row, col, v));
            }
            if let Some(col) = grid.interior_pos(j + s) {
                let v = if value_form {
                    -half_s2 / (h * h) + t.fwd[j][a] / h
                } else {
                    -half_s2 / (h * h) - t.bwd[j + s][a] / h
                };
                trip.push((row, col, v));
            }
        }
        trip.push((row, row, diag));
    }
    let n = grid.n_interior();
    CsrMatrix::from_triplets(n, n, &trip).expect("stencil entries are in range")
}

/// Stationary density operator `-sigma^2/2 Lap - B` on interior unknowns.
pub fn fp_operator(grid: &Grid, sigma: f64, t: &TransportAssembly) -> CsrMatrix {
    assemble_operator(grid, sigma, t, 0.0, false)
}

/// Zero small negative roundoff; fail on anything more negative.
pub fn enforce_nonnegative(p: &mut [f64], slice: usize) -> Result<()> {
    let mut clamped = 0usize;
    for (i, v) in p.iter_mut().enumerate() {
        if *v < 0.0 {
            if *v >= -NEG_CLAMP {
                *v = 0.0;
                clamped += 1;
            } else {
                return Err(Error::StructureViolation(format!(
                    "density {v:e} at node {i}, slice {slice}"
                )));
            }
        }
    }
    if clamped > 0 {
        log::warn!("zeroed {clamped} roundoff-negative density values at slice {slice}");
    }
    Ok(())
}

/// One implicit step `(P_new - growth * P_old) / dt - sigma^2/2 Lap P_new - B(P_new) = 0`.
pub fn fp_step(
    grid: &Grid,
    sigma: f64,
    dt: f64,
    growth: f64,
    t: &TransportAssembly,
    p_old: &[f64],
) -> Result<Field> {
    let a = assemble_operator(grid, sigma, t, 1.0 / dt, false);
    let rhs: Vec<f64> = grid
        .interior()
        .iter()
        .map(|&n| growth * p_old[n] / dt)
        .collect();
    let x = LuFactor::new(&a)?.solve(&rhs)?;
    Ok(grid.extend(&x))
}

fn march(
    problem: &DiscreteProblem,
    gamma: f64,
    mut coeffs: impl FnMut(usize) -> Result<TransportAssembly>,
) -> Result<SpaceTimeField> {
    let grid = &problem.grid;
    let dt = problem.time.dt();
    let growth = (gamma * dt).exp();
    let mut slices = Vec::with_capacity(problem.time.steps() + 1);
    slices.push(problem.p0.clone());
    for n in 0..problem.time.steps() {
        let t = coeffs(n)?;
        let mut next = fp_step(grid, problem.sigma, dt, growth, &t, &slices[n])?;
        enforce_nonnegative(&mut next, n + 1)?;
        slices.push(next);
    }
    Ok(SpaceTimeField::from_slices(slices))
}

/// Forward march with drift from the fresh value iterate and the mass
/// argument frozen at the lagged density. `gamma` is the scaling rate
/// (`0` for the unscaled system).
pub fn fp_forward_sweep(
    problem: &DiscreteProblem,
    u_fresh: &SpaceTimeField,
    p_lagged: &SpaceTimeField,
    gamma: f64,
) -> Result<SpaceTimeField> {
    let shrink = (-gamma * problem.time.dt()).exp();
    march(problem, gamma, |n| {
        let m = mass(&problem.grid, p_lagged.slice(n + 1));
        if !(m > 0.0) {
            return Err(Error::DegenerateMass {
                slice: n + 1,
                mass: m,
            });
        }
        Ok(assemble_b(
            &problem.grid,
            &problem.ham,
            u_fresh.slice(n),
            shrink * m,
        ))
    })
}

/// Forward march under a prescribed drift, slice `n` acting on step `n -> n+1`.
pub fn fp_sweep_with_control(
    problem: &DiscreteProblem,
    control: &ControlTrajectory,
) -> Result<SpaceTimeField> {
    march(problem, 0.0, |n| {
        Ok(TransportAssembly::from_control(
            &problem.grid,
            &control.slices[n],
        ))
    })
}

/// Driftless march (scaled by `gamma`).
pub fn heat_sweep(problem: &DiscreteProblem, gamma: f64) -> Result<SpaceTimeField> {
    let zero = TransportAssembly::zero(&problem.grid);
    march(problem, gamma, |_| Ok(zero.clone()))
}
