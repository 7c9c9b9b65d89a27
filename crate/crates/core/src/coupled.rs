//! Outer fixed-point loop coupling the value and density sweeps, the
//! exponentially scaled variant, and long-horizon diagnostics.

use crate::error::{Error, Result};
use crate::fp::{fp_forward_sweep, heat_sweep};
use crate::grid::{
    grad_unchecked, inner, l2_distance, mass, space_time_l2_distance, Field, SpaceTimeField,
    TimeGrid,
};
use crate::hjb::{hjb_backward_sweep, NewtonOptions};
use crate::problem::{ControlTrajectory, DiscreteProblem};
use crate::stationary::EigenSolution;

#[derive(Clone, Debug, PartialEq)]
pub struct SolverOptions {
    /// Initial relaxation weight in `(0, 1]`.
    pub theta: f64,
    /// Halve `theta` whenever the fixed-point residual grows.
    pub adaptive_theta: bool,
    pub min_theta: f64,
    pub tol: f64,
    pub max_iters: usize,
    pub newton: NewtonOptions,
    /// Warm start from the half-horizon solution mapped by normalized time.
    pub continuation: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            theta: 1.0,
            adaptive_theta: true,
            min_theta: 1.0 / 16.0,
            tol: 1e-6,
            max_iters: 500,
            newton: NewtonOptions::default(),
            continuation: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub k: usize,
    /// Space-time distance between successive accepted iterates.
    pub gap_p: f64,
    pub gap_u: f64,
    pub theta: f64,
    /// `h^d sum U^0 P^0` of the accepted iterate.
    pub pairing0: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Diagnostics {
    pub history: Vec<IterationRecord>,
    pub converged: bool,
    pub masses: Vec<f64>,
    /// `h^d sum_i U_i^n P_i^n` per slice.
    pub pairing: Vec<f64>,
}

impl Diagnostics {
    pub fn iterations(&self) -> usize {
        self.history.len()
    }
}

#[derive(Clone, Debug)]
pub struct FiniteSolution {
    pub p: SpaceTimeField,
    pub u: SpaceTimeField,
    pub control: ControlTrajectory,
    pub diagnostics: Diagnostics,
    /// Scaling rate the fields are expressed in (`0` when unscaled).
    pub gamma: f64,
}

/// Fixed point of the coupled discrete system.
pub fn solve_finite_horizon(
    problem: &DiscreteProblem,
    init: Option<(SpaceTimeField, SpaceTimeField)>,
    opts: &SolverOptions,
) -> Result<FiniteSolution> {
    solve_scaled(problem, 0.0, init, opts)
}

/// Fixed point of the system for `Q = exp(gamma t) P`, `V = exp(-gamma t) U`.
pub fn solve_scaled(
    problem: &DiscreteProblem,
    gamma: f64,
    init: Option<(SpaceTimeField, SpaceTimeField)>,
    opts: &SolverOptions,
) -> Result<FiniteSolution> {
    if !gamma.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "gamma must be finite, got {gamma}"
        )));
    }
    if !(opts.theta > 0.0 && opts.theta <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "relaxation must lie in (0, 1], got {}",
            opts.theta
        )));
    }
    let init = match init {
        Some(pair) => pair,
        None if opts.continuation && problem.time.steps() >= 4 => {
            continuation_start(problem, gamma, opts)?
        }
        None => (
            heat_sweep(problem, gamma)?,
            SpaceTimeField::zeros(&problem.grid, &problem.time),
        ),
    };
    fixed_point(problem, gamma, init, opts)
}

fn continuation_start(
    problem: &DiscreteProblem,
    gamma: f64,
    opts: &SolverOptions,
) -> Result<(SpaceTimeField, SpaceTimeField)> {
    let steps = problem.time.steps();
    let half_steps = steps / 2;
    let half_time = TimeGrid::new(problem.time.dt() * half_steps as f64, half_steps)?;
    let half = problem.with_time(half_time);
    let inner_opts = SolverOptions {
        continuation: false,
        ..opts.clone()
    };
    let sol = solve_scaled(&half, gamma, None, &inner_opts)?;
    let map = |f: &SpaceTimeField| -> SpaceTimeField {
        SpaceTimeField::from_slices(
            (0..=steps)
                .map(|n| {
                    let s = n as f64 * half_steps as f64 / steps as f64;
                    let lo = (s.floor() as usize).min(half_steps);
                    let hi = (lo + 1).min(half_steps);
                    let w = s - lo as f64;
                    f.slice(lo).relax_towards(f.slice(hi), w)
                })
                .collect(),
        )
    };
    let mut p = map(&sol.p);
    *p.slice_mut(0) = problem.p0.clone();
    Ok((p, map(&sol.u)))
}

fn fixed_point(
    problem: &DiscreteProblem,
    gamma: f64,
    (mut p, mut u): (SpaceTimeField, SpaceTimeField),
    opts: &SolverOptions,
) -> Result<FiniteSolution> {
    let grid = &problem.grid;
    let time = &problem.time;
    let mut theta = opts.theta;
    let mut history = Vec::new();
    let mut prev_residual = f64::INFINITY;
    let mut converged = false;
    for k in 1..=opts.max_iters {
        let u_new = hjb_backward_sweep(problem, &p, &u, gamma, &opts.newton)?;
        let p_new = fp_forward_sweep(problem, &u_new, &p, gamma)?;
        let residual = space_time_l2_distance(grid, time, &p_new, &p)
            .max(space_time_l2_distance(grid, time, &u_new, &u));
        if opts.adaptive_theta && residual > prev_residual && theta > opts.min_theta {
            theta = (theta * 0.5).max(opts.min_theta);
            log::debug!("iteration {k}: residual grew, relaxation now {theta}");
        }
        prev_residual = residual;
        let (p_next, u_next) = if theta == 1.0 {
            (p_new, u_new)
        } else {
            (
                p.relax_towards(&p_new, theta),
                u.relax_towards(&u_new, theta),
            )
        };
        let gap_p = space_time_l2_distance(grid, time, &p_next, &p);
        let gap_u = space_time_l2_distance(grid, time, &u_next, &u);
        p = p_next;
        u = u_next;
        let pairing0 = inner(grid, u.slice(0), p.slice(0));
        log::info!("iteration {k}: gap_p={gap_p:.3e} gap_u={gap_u:.3e} theta={theta}");
        history.push(IterationRecord {
            k,
            gap_p,
            gap_u,
            theta,
            pairing0,
        });
        if gap_p <= opts.tol && gap_u <= opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("fixed point not reached in {} iterations", opts.max_iters);
    }
    let control = recover_control(problem, &p, &u, gamma)?;
    let diagnostics = Diagnostics {
        history,
        converged,
        masses: p.masses(grid),
        pairing: (0..=time.steps())
            .map(|n| inner(grid, u.slice(n), p.slice(n)))
            .collect(),
    };
    Ok(FiniteSolution {
        p,
        u,
        control,
        diagnostics,
        gamma,
    })
}

/// Feedback drift `b^n = T_M(mu^{n+1} grad U^n)` with the mass argument of
/// the density step; the last slice repeats the one before it.
pub fn recover_control(
    problem: &DiscreteProblem,
    p: &SpaceTimeField,
    u: &SpaceTimeField,
    gamma: f64,
) -> Result<ControlTrajectory> {
    let grid = &problem.grid;
    let steps = problem.time.steps();
    let shrink = (-gamma * problem.time.dt()).exp();
    let mut traj = ControlTrajectory::zero(grid, &problem.time);
    for n in 0..steps {
        let m = mass(grid, p.slice(n + 1));
        if !(m > 0.0) {
            return Err(Error::DegenerateMass {
                slice: n + 1,
                mass: m,
            });
        }
        for &i in grid.interior() {
            let g = grad_unchecked(grid, u.slice(n), i);
            traj.slices[n][i] = problem.ham.control(shrink * m, &g);
        }
    }
    traj.slices[steps] = traj.slices[steps - 1].clone();
    Ok(traj)
}

/// `P^n = exp(-gamma t_n) Q^n`, `U^n = exp(gamma t_n) V^n`.
pub fn unscale(
    time: &TimeGrid,
    p_scaled: &SpaceTimeField,
    u_scaled: &SpaceTimeField,
    gamma: f64,
) -> Result<(SpaceTimeField, SpaceTimeField)> {
    let mut p = Vec::with_capacity(p_scaled.len());
    let mut u = Vec::with_capacity(u_scaled.len());
    for n in 0..p_scaled.len() {
        let e = gamma * time.time(n);
        let grow = e.exp();
        let decay = (-e).exp();
        if !grow.is_finite() || !decay.is_finite() {
            return Err(Error::Overflow { slice: n });
        }
        p.push(p_scaled.slice(n).scaled(decay));
        u.push(u_scaled.slice(n).scaled(grow));
    }
    Ok((
        SpaceTimeField::from_slices(p),
        SpaceTimeField::from_slices(u),
    ))
}

/// `ln mass(P^n)` of the unscaled density, computed without forming it.
pub fn unscaled_log_masses(
    problem: &DiscreteProblem,
    p_scaled: &SpaceTimeField,
    gamma: f64,
) -> Vec<f64> {
    (0..p_scaled.len())
        .map(|n| mass(&problem.grid, p_scaled.slice(n)).ln() - gamma * problem.time.time(n))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TurnpikePoint {
    pub t: f64,
    /// `|P^n / mass(P^n) - p_stat|`.
    pub dist_p: f64,
    /// `|mass(P^n) U^n - u_stat|`.
    pub dist_u: f64,
}

/// Spatial l2 distances between the mass-rescaled time slices and the
/// stationary pair.
pub fn turnpike_distances(
    problem: &DiscreteProblem,
    p: &SpaceTimeField,
    u: &SpaceTimeField,
    stationary: &EigenSolution,
) -> Result<Vec<TurnpikePoint>> {
    let grid = &problem.grid;
    let n_nodes = grid.n_nodes();
    if stationary.p.len() != n_nodes
        || stationary.u.len() != n_nodes
        || p.len() != u.len()
        || p.slices().iter().any(|s| s.len() != n_nodes)
    {
        return Err(Error::GridMismatch);
    }
    let mut out = Vec::with_capacity(p.len());
    for n in 0..p.len() {
        let m = mass(grid, p.slice(n));
        if !(m > 0.0) {
            return Err(Error::DegenerateMass { slice: n, mass: m });
        }
        let q: Field = p.slice(n).scaled(1.0 / m);
        let v: Field = u.slice(n).scaled(m);
        out.push(TurnpikePoint {
            t: problem.time.time(n),
            dist_p: l2_distance(grid, &q, &stationary.p),
            dist_u: l2_distance(grid, &v, &stationary.u),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::problem::{discretize_p0, InitialDensity};

    fn bare(cells: usize, steps: usize, horizon: f64) -> DiscreteProblem {
        let g = Grid::new_1d(1.0, cells).unwrap();
        let t = TimeGrid::new(horizon, steps).unwrap();
        let p0 = discretize_p0(&InitialDensity::Uniform, &g).unwrap();
        DiscreteProblem::bare(g, t, 0.8, p0)
    }

    #[test]
    fn decoupled_limit_converges_immediately() {
        let pb = bare(40, 10, 0.2);
        let sol = solve_finite_horizon(&pb, None, &SolverOptions::default()).unwrap();
        assert!(sol.diagnostics.converged);
        assert!(sol.diagnostics.iterations() <= 2);
        assert!(sol.u.slices().iter().all(|s| s.iter().all(|&v| v == 0.0)));
        let heat = heat_sweep(&pb, 0.0).unwrap();
        assert_eq!(sol.p, heat);
    }

    #[test]
    fn unscale_identity_and_exponentials() {
        let pb = bare(10, 4, 1.0);
        let ones = SpaceTimeField::constant_in_time(&Field::from_fn(&pb.grid, |_| 1.0), &pb.time);
        let (p, u) = unscale(&pb.time, &ones, &ones, 0.0).unwrap();
        assert_eq!(p, ones);
        assert_eq!(u, ones);
        let (p, u) = unscale(&pb.time, &ones, &ones, 2.0).unwrap();
        for n in 0..=4 {
            let t = pb.time.time(n);
            assert!((p.slice(n)[3] - (-2.0 * t).exp()).abs() < 1e-15);
            assert!((u.slice(n)[3] - (2.0 * t).exp()).abs() < 1e-12);
        }
        assert!(matches!(
            unscale(&pb.time, &ones, &ones, 1e4),
            Err(Error::Overflow { .. })
        ));
    }

    #[test]
    fn scaled_heat_keeps_mass_nearly_constant() {
        let pb = bare(200, 400, 1.0);
        let p_sin = Field::from_fn(&pb.grid, |x| (std::f64::consts::PI * x[0]).sin());
        let m = mass(&pb.grid, &p_sin);
        let pb = DiscreteProblem {
            p0: p_sin.scaled(1.0 / m),
            ..pb
        };
        let gamma = 0.32 * std::f64::consts::PI.powi(2);
        let q = heat_sweep(&pb, gamma).unwrap();
        let masses = q.masses(&pb.grid);
        // The discrete sine is an exact eigenvector, so each step multiplies
        // the mass by the growth factor over (1 + dt * discrete eigenvalue).
        let h = pb.grid.h(0);
        let lambda_h = 0.32 * 4.0 / (h * h) * (std::f64::consts::PI * h / 2.0).sin().powi(2);
        let dt = pb.time.dt();
        let ratio = (gamma * dt).exp() / (1.0 + dt * lambda_h);
        for (n, m) in masses.iter().enumerate() {
            assert!((m - ratio.powi(n as i32)).abs() < 1e-11, "slice {n}: {m}");
        }
        let spread = masses.iter().fold(0.0f64, |a, m| a.max((m - 1.0).abs()));
        assert!(spread < 2e-2, "spread {spread}");
    }

    #[test]
    fn distances_vanish_on_stationary_replica() {
        let pb = bare(20, 6, 0.3);
        let p_stat = pb.p0.clone();
        let u_stat = Field::from_fn(&pb.grid, |x| -x[0] * (1.0 - x[0]));
        let stat = EigenSolution {
            lambda: 1.0,
            p: p_stat.clone(),
            u: u_stat.clone(),
            c1: 0.0,
            diagnostics: Default::default(),
        };
        let p = SpaceTimeField::constant_in_time(&p_stat, &pb.time);
        let u = SpaceTimeField::constant_in_time(&u_stat, &pb.time);
        let d = turnpike_distances(&pb, &p, &u, &stat).unwrap();
        assert!(d.iter().all(|pt| pt.dist_p < 1e-14 && pt.dist_u < 1e-14));
        let wrong = EigenSolution {
            p: Field::from_vec(&Grid::new_1d(1.0, 5).unwrap(), vec![0.0; 6]).unwrap(),
            ..stat
        };
        assert!(matches!(
            turnpike_distances(&pb, &p, &u, &wrong),
            Err(Error::GridMismatch)
        ));
    }
}
