use std::fs;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use condctl::config::RunConfig;
use condctl::coupled::{unscaled_log_masses, IterationRecord, TurnpikePoint};
use condctl::fp::{fp_sweep_with_control, heat_sweep};
use condctl::grid::grad;
use condctl::mc::{pde_bin_probabilities, simulate_killed, KillingRule, McOptions};
use condctl::problem::eval_cost;
use condctl::stationary::StationaryRecord;
use condctl::{
    solve_finite_horizon, turnpike_distances, unscale, CaseId, ControlTrajectory, DiscreteProblem,
    EigenSolution, ProblemSpec, SpaceTimeField, TimeGrid,
};

use crate::output::{num, Csv, RunOutput};
use crate::{Common, McArgs, ScaledArgs, TurnpikeArgs};

fn load(common: &Common, default_case: CaseId) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| {
                condctl::Error::Config(format!("cannot read {}: {e}", path.display()))
            })?;
            RunConfig::from_toml_str(&text).with_context(|| format!("in {}", path.display()))?
        }
        None => RunConfig::from_case(common.case.unwrap_or(default_case)),
    };
    if let Some(v) = common.theta {
        cfg.theta = v;
    }
    if let Some(v) = common.tol {
        cfg.tol_fixed_point = v;
    }
    if let Some(v) = common.max_iters {
        cfg.max_iters = v;
    }
    if let Some(s) = common.cost_sign {
        cfg.spec.cost_sign = s;
    }
    cfg.spec.validate()?;
    Ok(cfg)
}

fn stride_or(given: Option<usize>, len: usize, target: usize) -> usize {
    given.unwrap_or_else(|| len.div_ceil(target)).max(1)
}

/// Indices `0, k, 2k, ...` plus the last one.
fn strided(len: usize, k: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (0..len).step_by(k).collect();
    if v.last() != Some(&(len - 1)) {
        v.push(len - 1);
    }
    v
}

fn write_fields(
    out: &mut RunOutput,
    common: &Common,
    pb: &DiscreteProblem,
    p: &SpaceTimeField,
    u: &SpaceTimeField,
    control: &ControlTrajectory,
) -> Result<()> {
    let grid = &pb.grid;
    let dim = grid.dim();
    let slices = strided(p.len(), stride_or(common.time_stride, p.len(), 100));
    let ks = stride_or(
        common.space_stride,
        grid.cells(0) + 1,
        if dim == 1 { 500 } else { 80 },
    );
    let xs = strided(grid.cells(0) + 1, ks);
    let ys = if dim == 2 {
        strided(grid.cells(1) + 1, ks)
    } else {
        vec![0]
    };
    let mut csv = if dim == 1 {
        Csv::new(&["t", "x", "p", "u", "b"])
    } else {
        Csv::new(&["t", "x", "y", "p", "u", "b_x", "b_y"])
    };
    for &n in &slices {
        let t = pb.time.time(n);
        for &j in &ys {
            for &i in &xs {
                let node = grid.node([i, j]);
                let x = grid.coords(node);
                let b = control.slices[n][node];
                let (pv, uv) = (p.slice(n)[node], u.slice(n)[node]);
                if dim == 1 {
                    csv.floats(&[t, x[0], pv, uv, b[0]]);
                } else {
                    csv.floats(&[t, x[0], x[1], pv, uv, b[0], b[1]]);
                }
            }
        }
    }
    out.write_csv("fields.csv", &csv)
}

fn write_mass(
    out: &mut RunOutput,
    time: &TimeGrid,
    log_masses: &[f64],
    scaled: Option<&[f64]>,
) -> Result<()> {
    let mut csv = match scaled {
        None => Csv::new(&["t", "mass"]),
        Some(_) => Csv::new(&["t", "mass", "scaled_mass"]),
    };
    for (n, lm) in log_masses.iter().enumerate() {
        match scaled {
            None => csv.floats(&[time.time(n), lm.exp()]),
            Some(s) => csv.floats(&[time.time(n), lm.exp(), s[n]]),
        }
    }
    out.write_csv("mass.csv", &csv)
}

fn write_finite_iters(out: &mut RunOutput, history: &[IterationRecord]) -> Result<()> {
    let mut csv = Csv::new(&["k", "l2_gap_p", "l2_gap_u", "energy_pairing", "theta"]);
    for r in history {
        csv.row(&[
            r.k.to_string(),
            num(r.gap_p),
            num(r.gap_u),
            num(r.pairing0),
            num(r.theta),
        ]);
    }
    out.write_csv("iters.csv", &csv)
}

fn write_stationary_iters(out: &mut RunOutput, history: &[StationaryRecord]) -> Result<()> {
    let mut csv = Csv::new(&[
        "k",
        "l2_gap_p",
        "l2_gap_u",
        "energy_pairing",
        "lambda",
        "eigen_residual",
    ]);
    for r in history {
        csv.row(&[
            r.k.to_string(),
            num(r.gap_p),
            num(r.gap_u),
            num(r.pairing),
            num(r.lambda),
            num(r.eigen_residual),
        ]);
    }
    out.write_csv("iters.csv", &csv)
}

fn write_eigen(out: &mut RunOutput, sol: &EigenSolution) -> Result<()> {
    let mut csv = Csv::new(&["lambda", "residual", "uncontrolled_lambda", "c1"]);
    csv.floats(&[
        sol.lambda,
        sol.diagnostics.eigen_residual,
        sol.diagnostics.uncontrolled_lambda,
        sol.c1,
    ]);
    out.write_csv("eigen.csv", &csv)
}

fn write_stationary_profile(
    out: &mut RunOutput,
    pb: &DiscreteProblem,
    sol: &EigenSolution,
) -> Result<()> {
    let grid = &pb.grid;
    let mut csv = if grid.dim() == 1 {
        Csv::new(&["x", "p", "u", "b"])
    } else {
        Csv::new(&["x", "y", "p", "u", "b_x", "b_y"])
    };
    for node in 0..grid.n_nodes() {
        let x = grid.coords(node);
        let b = if grid.is_boundary(node) {
            [0.0; 2]
        } else {
            pb.ham.control(1.0, &grad(grid, &sol.u, node)?)
        };
        if grid.dim() == 1 {
            csv.floats(&[x[0], sol.p[node], sol.u[node], b[0]]);
        } else {
            csv.floats(&[x[0], x[1], sol.p[node], sol.u[node], b[0], b[1]]);
        }
    }
    out.write_csv("stationary.csv", &csv)
}

fn stationary(out: &mut RunOutput, cfg: &RunConfig, pb: &DiscreteProblem) -> Result<EigenSolution> {
    let sol = out.timed("stationary", || {
        condctl::solve_stationary(pb, None, &cfg.stationary_options())
    })?;
    log::info!(
        "eigenvalue {:.10} (no drift {:.10}) after {} iterations",
        sol.lambda,
        sol.diagnostics.uncontrolled_lambda,
        sol.diagnostics.history.len()
    );
    out.note("lambda", sol.lambda);
    out.note("uncontrolled_lambda", sol.diagnostics.uncontrolled_lambda);
    out.note("stationary_iterations", sol.diagnostics.history.len());
    Ok(sol)
}

fn fail_unconverged(converged: bool, iterations: usize) -> Result<()> {
    if !converged {
        bail!("fixed-point iteration did not converge in {iterations} iterations; outputs were written for inspection");
    }
    Ok(())
}

pub fn solve_finite(common: &Common, default_case: CaseId) -> Result<()> {
    let cfg = load(common, default_case)?;
    let pb = cfg.spec.discretize()?;
    let mut out = RunOutput::create(&common.out)?;
    let sol = out.timed("solve", || {
        solve_finite_horizon(&pb, None, &cfg.solver_options())
    })?;
    let d = &sol.diagnostics;
    log::info!(
        "{} fixed-point iterations, converged: {}",
        d.iterations(),
        d.converged
    );
    out.note("iterations", d.iterations());
    out.note("converged", d.converged);
    let (j_opt, j_zero) = out.timed("cost", || -> Result<(f64, f64)> {
        let p_opt = fp_sweep_with_control(&pb, &sol.control)?;
        let zero = ControlTrajectory::zero(&pb.grid, &pb.time);
        let p_zero = fp_sweep_with_control(&pb, &zero)?;
        Ok((
            eval_cost(&pb, &p_opt, &sol.control)?,
            eval_cost(&pb, &p_zero, &zero)?,
        ))
    })?;
    log::info!("cost with optimal feedback {j_opt:.10}, with zero control {j_zero:.10}");
    out.note("cost_optimal", j_opt);
    out.note("cost_zero_control", j_zero);
    write_fields(&mut out, common, &pb, &sol.p, &sol.u, &sol.control)?;
    let logm: Vec<f64> = d.masses.iter().map(|m| m.ln()).collect();
    write_mass(&mut out, &pb.time, &logm, None)?;
    write_finite_iters(&mut out, &d.history)?;
    out.finish("solve-finite", &cfg.spec.case, None, &cfg)?;
    fail_unconverged(d.converged, d.iterations())
}

pub fn solve_stationary(common: &Common, default_case: CaseId) -> Result<()> {
    let cfg = load(common, default_case)?;
    let pb = cfg.spec.discretize()?;
    let mut out = RunOutput::create(&common.out)?;
    let sol = stationary(&mut out, &cfg, &pb)?;
    write_eigen(&mut out, &sol)?;
    write_stationary_profile(&mut out, &pb, &sol)?;
    write_stationary_iters(&mut out, &sol.diagnostics.history)?;
    out.finish("solve-stationary", &cfg.spec.case, None, &cfg)
}

pub fn solve_scaled(common: &Common, args: &ScaledArgs) -> Result<()> {
    let cfg = load(common, CaseId::Five)?;
    let pb = cfg.spec.discretize()?;
    let mut out = RunOutput::create(&common.out)?;
    let gamma = match args.gamma {
        Some(g) => g,
        None => {
            let sol = stationary(&mut out, &cfg, &pb)?;
            write_eigen(&mut out, &sol)?;
            sol.lambda
        }
    };
    out.note("gamma", gamma);
    let sol = out.timed("solve", || {
        condctl::solve_scaled(&pb, gamma, None, &cfg.solver_options())
    })?;
    let d = &sol.diagnostics;
    out.note("iterations", d.iterations());
    out.note("converged", d.converged);
    let (p, u) = unscale(&pb.time, &sol.p, &sol.u, gamma).context(
        "unscaled fields are not representable; rerun with a smaller horizon or inspect mass.csv",
    )?;
    write_fields(&mut out, common, &pb, &p, &u, &sol.control)?;
    write_mass(
        &mut out,
        &pb.time,
        &unscaled_log_masses(&pb, &sol.p, gamma),
        Some(&d.masses),
    )?;
    write_finite_iters(&mut out, &d.history)?;
    out.finish("solve-scaled", &cfg.spec.case, None, &cfg)?;
    fail_unconverged(d.converged, d.iterations())
}

pub fn turnpike(common: &Common, args: &TurnpikeArgs) -> Result<()> {
    let cfg = load(common, CaseId::Five)?;
    if args.horizons.is_empty() || args.horizons.iter().any(|t| !(*t > 0.0)) {
        return Err(condctl::Error::Config("horizons must be positive".into()).into());
    }
    let base = cfg.spec.discretize()?;
    let mut out = RunOutput::create(&common.out)?;
    let stat = stationary(&mut out, &cfg, &base)?;
    write_eigen(&mut out, &stat)?;
    let dt = base.time.dt();
    let runs: Vec<Result<(f64, Vec<TurnpikePoint>, bool)>> = out.timed("horizons", || {
        args.horizons
            .par_iter()
            .map(|&horizon| {
                let steps = ((horizon / dt).round() as usize).max(1);
                let spec = ProblemSpec {
                    horizon,
                    steps,
                    ..cfg.spec.clone()
                };
                let pb = spec.discretize()?;
                let sol = condctl::solve_scaled(&pb, stat.lambda, None, &cfg.solver_options())?;
                let pts = turnpike_distances(&pb, &sol.p, &sol.u, &stat)?;
                Ok((horizon, pts, sol.diagnostics.converged))
            })
            .collect()
    });
    let mut csv = Csv::new(&["horizon", "t", "dist_p", "dist_u"]);
    let mut all_converged = true;
    let mut midpoints = Vec::new();
    for run in runs {
        let (horizon, pts, converged) = run?;
        all_converged &= converged;
        for q in &pts {
            csv.floats(&[horizon, q.t, q.dist_p, q.dist_u]);
        }
        let mid = &pts[pts.len() / 2];
        log::info!(
            "T={horizon}: distances at T/2 p={:.3e} u={:.3e}",
            mid.dist_p,
            mid.dist_u
        );
        midpoints.push(
            serde_json::json!({"horizon": horizon, "dist_p": mid.dist_p, "dist_u": mid.dist_u}),
        );
    }
    out.note("midpoint_distances", midpoints);
    out.write_csv("turnpike.csv", &csv)?;
    out.finish("turnpike", &cfg.spec.case, None, &cfg)?;
    fail_unconverged(all_converged, cfg.max_iters)
}

pub fn mc_validate(common: &Common, args: &McArgs) -> Result<()> {
    let cfg = load(common, CaseId::One)?;
    let pb = cfg.spec.discretize()?;
    if args.checkpoints == 0 {
        return Err(condctl::Error::Config("need at least one checkpoint".into()).into());
    }
    let seed = common.seed.unwrap_or(0);
    let mut out = RunOutput::create(&common.out)?;
    let steps = pb.time.steps();
    let slices: Vec<usize> = (1..=args.checkpoints)
        .map(|k| ((k * steps) as f64 / args.checkpoints as f64).round() as usize)
        .collect();
    let (density, control) = if args.controlled {
        let sol = out.timed("solve", || {
            solve_finite_horizon(&pb, None, &cfg.solver_options())
        })?;
        fail_unconverged(sol.diagnostics.converged, sol.diagnostics.iterations())?;
        (fp_sweep_with_control(&pb, &sol.control)?, Some(sol.control))
    } else {
        (heat_sweep(&pb, 0.0)?, None)
    };
    let opts = McOptions {
        n_paths: args.paths,
        dt: args.mc_dt,
        seed,
        killing: if args.endpoint_killing {
            KillingRule::Endpoint
        } else {
            KillingRule::BrownianBridge
        },
        checkpoints: slices.iter().map(|&n| pb.time.time(n)).collect(),
        bins: args.bins,
        ..Default::default()
    };
    let mc = out.timed("monte-carlo", || {
        simulate_killed(&pb, control.as_ref(), &opts)
    })?;
    let masses = density.masses(&pb.grid);
    let mut csv = Csv::new(&["t", "p_hat", "stderr", "pde_mass", "z"]);
    let mut worst_survival = 0.0f64;
    for (s, &n) in mc.survival.iter().zip(&slices) {
        let z = (s.p_hat - masses[n]) / s.stderr;
        worst_survival = worst_survival.max(z.abs());
        csv.floats(&[s.t, s.p_hat, s.stderr, masses[n], z]);
    }
    out.write_csv("survival.csv", &csv)?;
    let dim = pb.grid.dim();
    let mut hist = if dim == 1 {
        Csv::new(&["t", "bin", "x_lo", "x_hi", "p_hat", "stderr", "pde"])
    } else {
        Csv::new(&[
            "t", "bin", "x_lo", "x_hi", "y_lo", "y_hi", "p_hat", "stderr", "pde",
        ])
    };
    let mut worst_bin = 0.0f64;
    let width = [0, 1].map(|a| pb.grid.x_max(a) / args.bins as f64);
    for (h, &n) in mc.histograms.iter().zip(&slices) {
        let pde = if dim == 1 {
            pde_bin_probabilities(&pb.grid, density.slice(n), args.bins)?
        } else {
            vec![f64::NAN; h.counts.len()]
        };
        for (b, ((q, se), r)) in h
            .probabilities()
            .iter()
            .zip(h.stderr())
            .zip(&pde)
            .enumerate()
        {
            if n == steps && se > 0.0 && r.is_finite() {
                worst_bin = worst_bin.max((q - r).abs() / se);
            }
            let (col, row) = ((b % args.bins) as f64, (b / args.bins) as f64);
            let mut cells = vec![
                num(h.t),
                b.to_string(),
                num(col * width[0]),
                num((col + 1.0) * width[0]),
            ];
            if dim == 2 {
                cells.extend([num(row * width[1]), num((row + 1.0) * width[1])]);
            }
            cells.extend([num(*q), num(se), num(*r)]);
            hist.row(&cells);
        }
    }
    out.write_csv("histogram.csv", &hist)?;
    log::info!(
        "largest survival z-score {worst_survival:.2}, largest final-bin z-score {worst_bin:.2}"
    );
    out.note("max_survival_z", worst_survival);
    out.note("max_final_bin_z", worst_bin);
    out.finish("mc-validate", &cfg.spec.case, Some(seed), &cfg)
}

pub fn case(id: CaseId, common: &Common) -> Result<()> {
    if common.config.is_some() || common.case.is_some() {
        return Err(condctl::Error::Config(
            "`case` runs a preset; use a solve-* subcommand with --config to change it".into(),
        )
        .into());
    }
    let common = Common {
        case: Some(id),
        ..common.clone()
    };
    match id {
        CaseId::Five => solve_stationary(&common, id),
        _ => solve_finite(&common, id),
    }
}
