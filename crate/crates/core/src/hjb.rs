//! Backward march of the value equation with lagged nonlocal terms.

use crate::error::{Error, Result};
use crate::fp::{assemble_operator, TransportAssembly};
use crate::grid::{grad_unchecked, mass, Field, Grid, SpaceTimeField};
use crate::hamiltonian::HamiltonianParams;
use crate::problem::DiscreteProblem;
use crate::sparse::LuFactor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonOptions {
    /// Stop when the raw residual is at most `tol`, or after a Newton
    /// correction with `|dU|_inf <= tol * (1 + |U|_inf)`.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iters: 50,
        }
    }
}

fn positive_mass(grid: &Grid, p: &[f64], slice: usize) -> Result<f64> {
    let m = mass(grid, p);
    if !(m > 0.0) || !m.is_finite() {
        return Err(Error::DegenerateMass { slice, mass: m });
    }
    Ok(m)
}

/// Lagged running source at interior nodes:
/// `-h^d sum_k P_k H_mu(x_k, m, grad U_k) + F_i / m - h^d sum_k P_k F_k / m^2`
/// with `m = mass(P)` and `F` the running-functional gradient at `P / m`.
pub fn assemble_f(problem: &DiscreteProblem, p: &[f64], u: &[f64]) -> Result<Field> {
    let grid = &problem.grid;
    let m = positive_mass(grid, p, 0)?;
    let vol = grid.cell_volume();
    let mut c_lag = 0.0;
    for &k in grid.interior() {
        if p[k] != 0.0 {
            let g = grad_unchecked(grid, u, k);
            c_lag += p[k] * problem.ham.partials(k, m, &g).d_mu;
        }
    }
    c_lag *= vol;
    let q: Vec<f64> = p.iter().map(|v| v / m).collect();
    let fw = problem.running.gradient(grid, &q);
    let c_f = vol * p.iter().zip(&fw).map(|(a, b)| a * b).sum::<f64>() / (m * m);
    let mut out = Field::zeros(grid);
    for &i in grid.interior() {
        out[i] = -c_lag + fw[i] / m - c_f;
    }
    Ok(out)
}

/// Terminal data at every node: `-eps / m + G_i / m - h^d sum_k P_k G_k / m^2`.
pub fn assemble_g(problem: &DiscreteProblem, p: &[f64]) -> Result<Field> {
    let grid = &problem.grid;
    let m = positive_mass(grid, p, problem.time.steps())?;
    let q: Vec<f64> = p.iter().map(|v| v / m).collect();
    let gw = problem.terminal.gradient(grid, &q);
    let c_g = grid.cell_volume() * p.iter().zip(&gw).map(|(a, b)| a * b).sum::<f64>() / (m * m);
    let out: Vec<f64> = gw
        .iter()
        .map(|g| -problem.epsilon / m + g / m - c_g)
        .collect();
    Field::from_vec(grid, out)
}

/// Result of one elliptic solve.
#[derive(Clone, Debug)]
pub struct NewtonReport {
    pub iterations: usize,
    pub residual: f64,
}

/// Solve `alpha U - sigma^2/2 Lap U + H(x, mu, grad U) = rhs` at interior
/// nodes with `U = 0` on the boundary, by Newton's method from `guess`.
#[allow(clippy::too_many_arguments)]
pub fn solve_elliptic(
    grid: &Grid,
    sigma: f64,
    ham: &HamiltonianParams,
    mu: f64,
    alpha: f64,
    rhs: &[f64],
    guess: &[f64],
    opts: &NewtonOptions,
    step: usize,
) -> Result<(Field, NewtonReport)> {
    let half_s2 = 0.5 * sigma * sigma;
    let mut u = Field::zeros(grid);
    for &n in grid.interior() {
        u[n] = guess[n];
    }
    let n_int = grid.n_interior();
    let mut residual = vec![0.0; n_int];
    let mut last = f64::INFINITY;
    for it in 0..=opts.max_iters {
        let mut t = TransportAssembly::zero(grid);
        let mut raw_res = 0.0f64;
        let mut umax = 0.0f64;
        for (row, &i) in grid.interior().iter().enumerate() {
            let g = grad_unchecked(grid, &u, i);
            let mut lap = 0.0;
            for a in 0..grid.dim() {
                let s = grid.stride(a);
                let h2 = grid.h(a) * grid.h(a);
                lap += (2.0 * u[i] - u[i + s] - u[i - s]) / h2;
            }
            let part = ham.partials(i, mu, &g);
            t.fwd[i] = part.d_fwd;
            t.bwd[i] = part.d_bwd;
            let r = alpha * u[i] + half_s2 * lap + ham.value(i, mu, &g) - rhs[i];
            residual[row] = r;
            raw_res = raw_res.max(r.abs());
            umax = umax.max(u[i].abs());
        }
        if !raw_res.is_finite() {
            break;
        }
        if raw_res <= opts.tol {
            return Ok((
                u,
                NewtonReport {
                    iterations: it,
                    residual: raw_res,
                },
            ));
        }
        if it == opts.max_iters {
            last = raw_res;
            break;
        }
        let jac = assemble_operator(grid, sigma, &t, alpha, true);
        let lu = LuFactor::new(&jac)?;
        lu.solve_in_place(&mut residual)?;
        let mut correction = 0.0f64;
        for (row, &i) in grid.interior().iter().enumerate() {
            u[i] -= residual[row];
            correction = correction.max(residual[row].abs());
        }
        last = correction;
        if correction <= opts.tol * (1.0 + umax) {
            return Ok((
                u,
                NewtonReport {
                    iterations: it + 1,
                    residual: correction,
                },
            ));
        }
    }
    Err(Error::NewtonNoConvergence {
        step,
        iterations: opts.max_iters,
        residual: last,
    })
}

/// Backward march. For `n = N_T - 1, ..., 0`, `U^n` solves
/// `(U^n - g U^{n+1}) / dt - sigma^2/2 Lap U^n + H(x, c m^{n+1}, grad U^n) = F^n`
/// with `m^{n+1}` the lagged mass, `F^n` the lagged source at
/// `(c P^{n+1}, U^n)`, `g = exp(gamma dt)` and `c = exp(-gamma dt)`.
/// The final slice is the terminal data of the lagged final density.
pub fn hjb_backward_sweep(
    problem: &DiscreteProblem,
    p_lagged: &SpaceTimeField,
    u_lagged: &SpaceTimeField,
    gamma: f64,
    opts: &NewtonOptions,
) -> Result<SpaceTimeField> {
    let grid = &problem.grid;
    let steps = problem.time.steps();
    let dt = problem.time.dt();
    let growth = (gamma * dt).exp();
    let shrink = (-gamma * dt).exp();
    let mut slices = vec![Field::zeros(grid); steps + 1];
    slices[steps] = assemble_g(problem, p_lagged.slice(steps))?;
    let mut newton_total = 0usize;
    for n in (0..steps).rev() {
        let p_next = p_lagged.slice(n + 1);
        let m = positive_mass(grid, p_next, n + 1)?;
        let source = if shrink == 1.0 {
            assemble_f(problem, p_next, u_lagged.slice(n))?
        } else {
            assemble_f(problem, &p_next.scaled(shrink), u_lagged.slice(n))?
        };
        let next = &slices[n + 1];
        let rhs: Vec<f64> = (0..grid.n_nodes())
            .map(|i| growth * next[i] / dt + source[i])
            .collect();
        let (u, rep) = solve_elliptic(
            grid,
            problem.sigma,
            &problem.ham,
            shrink * m,
            1.0 / dt,
            &rhs,
            next,
            opts,
            n,
        )?;
        newton_total += rep.iterations;
        slices[n] = u;
    }
    log::trace!("value sweep used {newton_total} Newton iterations");
    Ok(SpaceTimeField::from_slices(slices))
}
