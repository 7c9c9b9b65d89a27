//! Stationary system: a value equation shifted by the principal eigenvalue,
//! coupled with the principal eigenpair of the density operator.

use crate::error::{Error, Result};
use crate::fp::{assemble_b, fp_operator};
use crate::grid::{grad_unchecked, inner, l2_distance, Field};
use crate::hjb::{assemble_f, solve_elliptic, NewtonOptions};
use crate::problem::DiscreteProblem;
use crate::sparse::{principal_eigenpair, EigenOptions};

#[derive(Clone, Debug, PartialEq)]
pub struct StationaryRecord {
    pub k: usize,
    pub gap_p: f64,
    pub gap_u: f64,
    pub lambda: f64,
    pub eigen_residual: f64,
    pub pairing: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StationaryDiagnostics {
    pub history: Vec<StationaryRecord>,
    /// Principal eigenvalue with no drift, for reference.
    pub uncontrolled_lambda: f64,
    pub eigen_residual: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EigenSolution {
    pub lambda: f64,
    /// Nonnegative, unit mass, zero on the boundary.
    pub p: Field,
    /// Zero on the boundary.
    pub u: Field,
    pub c1: f64,
    pub diagnostics: StationaryDiagnostics,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StationaryOptions {
    pub theta: f64,
    pub adaptive_theta: bool,
    pub min_theta: f64,
    pub tol: f64,
    pub max_iters: usize,
    pub newton: NewtonOptions,
    pub eigen: EigenOptions,
}

impl Default for StationaryOptions {
    fn default() -> Self {
        Self {
            theta: 1.0,
            adaptive_theta: true,
            min_theta: 1.0 / 16.0,
            tol: 1e-6,
            max_iters: 500,
            newton: NewtonOptions::default(),
            eigen: EigenOptions::default(),
        }
    }
}

/// Solve `-sigma^2/2 Lap U + H(x, 1, grad U) = lambda U_k + F(P_k, U_k) - eps - <U_k, P_k>`.
pub fn stationary_hjb_step(
    problem: &DiscreteProblem,
    p: &Field,
    u: &Field,
    lambda: f64,
    opts: &NewtonOptions,
) -> Result<Field> {
    let grid = &problem.grid;
    let source = assemble_f(problem, p, u)?;
    let shift = problem.epsilon + inner(grid, u, p);
    let rhs: Vec<f64> = (0..grid.n_nodes())
        .map(|i| lambda * u[i] + source[i] - shift)
        .collect();
    let (next, _) = solve_elliptic(
        grid,
        problem.sigma,
        &problem.ham,
        1.0,
        0.0,
        &rhs,
        u,
        opts,
        0,
    )?;
    Ok(next)
}

/// Principal eigenpair of `-sigma^2/2 Lap - B(1, U)`, normalized to unit mass.
/// Returns `(lambda, P, residual)`.
pub fn stationary_fp_step(
    problem: &DiscreteProblem,
    u: &Field,
    eigen: &EigenOptions,
) -> Result<(f64, Field, f64)> {
    let grid = &problem.grid;
    let t = assemble_b(grid, &problem.ham, u, 1.0);
    let a = fp_operator(grid, problem.sigma, &t);
    let opts = EigenOptions {
        weight: grid.cell_volume(),
        ..eigen.clone()
    };
    let pair = principal_eigenpair(&a, &opts)?;
    Ok((pair.lambda, grid.extend(&pair.vector), pair.residual))
}

/// `c1 = -h^d sum_i P_i (H_mu(x_i, 1, grad U_i) + F_i)`.
pub fn stationary_c1(problem: &DiscreteProblem, p: &Field, u: &Field) -> f64 {
    let grid = &problem.grid;
    let fw = problem.running.gradient(grid, p);
    let mut acc = 0.0;
    for &i in grid.interior() {
        let g = grad_unchecked(grid, u, i);
        acc += p[i] * (problem.ham.partials(i, 1.0, &g).d_mu + fw[i]);
    }
    -grid.cell_volume() * acc
}

pub fn solve_stationary(
    problem: &DiscreteProblem,
    init: Option<(Field, Field, f64)>,
    opts: &StationaryOptions,
) -> Result<EigenSolution> {
    let grid = &problem.grid;
    let zero = Field::zeros(grid);
    let (lambda0, p_free, _) = stationary_fp_step(problem, &zero, &opts.eigen)?;
    let (mut p, mut u, mut lambda) = init.unwrap_or((p_free, zero, lambda0));
    let mut theta = opts.theta;
    let mut prev_residual = f64::INFINITY;
    let mut history = Vec::new();
    for k in 1..=opts.max_iters {
        let u_new = stationary_hjb_step(problem, &p, &u, lambda, &opts.newton)?;
        let (lambda_new, p_new, res) = stationary_fp_step(problem, &u_new, &opts.eigen)?;
        let residual = l2_distance(grid, &p_new, &p).max(l2_distance(grid, &u_new, &u));
        if opts.adaptive_theta && residual > prev_residual && theta > opts.min_theta {
            theta = (theta * 0.5).max(opts.min_theta);
            log::debug!("stationary iteration {k}: residual grew, relaxation now {theta}");
        }
        prev_residual = residual;
        let p_next = p.relax_towards(&p_new, theta);
        let u_next = u.relax_towards(&u_new, theta);
        let gap_p = l2_distance(grid, &p_next, &p);
        let gap_u = l2_distance(grid, &u_next, &u);
        p = p_next;
        u = u_next;
        lambda = lambda_new;
        let pairing = inner(grid, &u, &p);
        log::info!(
            "stationary iteration {k}: gap_p={gap_p:.3e} gap_u={gap_u:.3e} lambda={lambda:.10}"
        );
        history.push(StationaryRecord {
            k,
            gap_p,
            gap_u,
            lambda,
            eigen_residual: res,
            pairing,
        });
        // The exact fixed point pairs to -eps; this mode contracts slowest.
        let pairing_gap = (pairing + problem.epsilon).abs();
        if gap_p <= opts.tol && gap_u <= opts.tol && pairing_gap <= opts.tol {
            log::info!("no-drift eigenvalue {lambda0:.10}, controlled eigenvalue {lambda:.10}");
            let c1 = stationary_c1(problem, &p, &u);
            return Ok(EigenSolution {
                lambda,
                p,
                u,
                c1,
                diagnostics: StationaryDiagnostics {
                    history,
                    uncontrolled_lambda: lambda0,
                    eigen_residual: res,
                },
            });
        }
        if gap_p == 0.0 && gap_u == 0.0 {
            // Nothing moves: the value solve accepts its guess, so the
            // remaining pairing error cannot shrink.
            log::warn!("stationary iteration stalled at pairing gap {pairing_gap:e}; tighten the Newton tolerance");
            return Err(Error::StationaryNoConvergence {
                iterations: k,
                gap_p,
                gap_u,
            });
        }
    }
    let last = history.last();
    Err(Error::StationaryNoConvergence {
        iterations: opts.max_iters,
        gap_p: last.map_or(f64::NAN, |r| r.gap_p),
        gap_u: last.map_or(f64::NAN, |r| r.gap_u),
    })
}
