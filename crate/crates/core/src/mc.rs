//! Monte Carlo simulation of the controlled diffusion `dX = -b dt + sigma dW`
//! killed on leaving the domain.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::problem::{ControlTrajectory, DiscreteProblem};

/// How exits between two Euler steps are detected.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum KillingRule {
    /// Kill only when a step lands outside the closed domain. Misses
    /// excursions between steps, so survival is biased upwards by O(sqrt(dt)).
    Endpoint,
    /// Additionally kill with the probability that a Brownian bridge between
    /// the two positions touches each boundary face.
    #[default]
    BrownianBridge,
}

#[derive(Clone, Debug, PartialEq)]
pub struct McOptions {
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    pub killing: KillingRule,
    /// Times at which survival and histograms are recorded.
    pub checkpoints: Vec<f64>,
    /// Histogram bins per axis over the whole domain.
    pub bins: usize,
    pub batch_size: usize,
}

impl Default for McOptions {
    fn default() -> Self {
        Self {
            n_paths: 100_000,
            dt: 1e-4,
            seed: 0,
            killing: KillingRule::default(),
            checkpoints: vec![],
            bins: 20,
            batch_size: 4096,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurvivalPoint {
    pub t: f64,
    pub p_hat: f64,
    pub stderr: f64,
}

/// Conditional law of the surviving paths. Bins are row-major, x fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub t: f64,
    pub bins: usize,
    pub alive: u64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn probabilities(&self) -> Vec<f64> {
        let a = self.alive.max(1) as f64;
        self.counts.iter().map(|&c| c as f64 / a).collect()
    }

    /// Binomial standard error of each conditional proportion.
    pub fn stderr(&self) -> Vec<f64> {
        let a = self.alive.max(1) as f64;
        self.probabilities()
            .iter()
            .map(|q| (q * (1.0 - q) / a).sqrt())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct McResult {
    pub survival: Vec<SurvivalPoint>,
    pub histograms: Vec<Histogram>,
    pub seed: u64,
}

/// Nodal drift field with boundary nodes copied from their interior
/// neighbour, sampled by multilinear interpolation.
struct DriftField<'a> {
    grid: &'a Grid,
    slices: Vec<Vec<[f64; 2]>>,
    slice_dt: f64,
}

impl<'a> DriftField<'a> {
    fn new(grid: &'a Grid, control: &ControlTrajectory, slice_dt: f64) -> Self {
        let slices = control
            .slices
            .iter()
            .map(|s| {
                let mut s = s.clone();
                for n in 0..grid.n_nodes() {
                    if grid.is_boundary(n) {
                        let mut idx = grid.index(n);
                        for a in 0..grid.dim() {
                            idx[a] = idx[a].clamp(1, grid.cells(a) - 1);
                        }
                        s[n] = s[grid.node(idx)];
                    }
                }
                s
            })
            .collect();
        Self {
            grid,
            slices,
            slice_dt,
        }
    }

    fn eval(&self, t: f64, x: [f64; 2]) -> [f64; 2] {
        let last = self.slices.len() - 1;
        let n = ((t / self.slice_dt + 1e-9).floor() as usize).min(last);
        let s = &self.slices[n];
        let g = self.grid;
        let mut i0 = [0usize; 2];
        let mut w = [0.0f64; 2];
        for a in 0..g.dim() {
            let r = (x[a] / g.h(a)).clamp(0.0, g.cells(a) as f64);
            let i = (r.floor() as usize).min(g.cells(a) - 1);
            i0[a] = i;
            w[a] = r - i as f64;
        }
        let mut out = [0.0; 2];
        let corners = 1usize << g.dim();
        for c in 0..corners {
            let mut idx = i0;
            let mut weight = 1.0;
            for a in 0..g.dim() {
                if c >> a & 1 == 1 {
                    idx[a] += 1;
                    weight *= w[a];
                } else {
                    weight *= 1.0 - w[a];
                }
            }
            let b = s[g.node(idx)];
            out[0] += weight * b[0];
            out[1] += weight * b[1];
        }
        out
    }
}

/// Sampler for the piecewise-(bi)linear interpolant of a nodal density.
struct InitialSampler<'a> {
    grid: &'a Grid,
    cells: Vec<usize>,
    cdf: Vec<f64>,
    density: &'a Field,
}

impl<'a> InitialSampler<'a> {
    fn new(grid: &'a Grid, density: &'a Field) -> Result<Self> {
        let mut cells = Vec::new();
        let mut cdf = Vec::new();
        let mut total = 0.0;
        let (nx, ny) = (
            grid.cells(0),
            if grid.dim() == 2 { grid.cells(1) } else { 1 },
        );
        for j in 0..ny {
            for i in 0..nx {
                let base = grid.node([i, j]);
                let w = Self::corners(grid, base)
                    .iter()
                    .map(|&n| density[n])
                    .sum::<f64>();
                if w > 0.0 {
                    total += w;
                    cells.push(base);
                    cdf.push(total);
                }
            }
        }
        if cells.is_empty() {
            return Err(Error::ZeroDensity);
        }
        cdf.iter_mut().for_each(|c| *c /= total);
        Ok(Self {
            grid,
            cells,
            cdf,
            density,
        })
    }

    fn corners(grid: &Grid, base: usize) -> Vec<usize> {
        if grid.dim() == 1 {
            vec![base, base + 1]
        } else {
            let s = grid.stride(1);
            vec![base, base + 1, base + s, base + s + 1]
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> [f64; 2] {
        let u: f64 = rng.random();
        let k = self
            .cdf
            .partition_point(|&c| c < u)
            .min(self.cells.len() - 1);
        let base = self.cells[k];
        let corners = Self::corners(self.grid, base);
        let vals: Vec<f64> = corners.iter().map(|&n| self.density[n]).collect();
        let vmax = vals.iter().cloned().fold(0.0, f64::max);
        let origin = self.grid.coords(base);
        loop {
            let mut w = [0.0; 2];
            for wa in w.iter_mut().take(self.grid.dim()) {
                *wa = rng.random();
            }
            let v = if self.grid.dim() == 1 {
                vals[0] * (1.0 - w[0]) + vals[1] * w[0]
            } else {
                vals[0] * (1.0 - w[0]) * (1.0 - w[1])
                    + vals[1] * w[0] * (1.0 - w[1])
                    + vals[2] * (1.0 - w[0]) * w[1]
                    + vals[3] * w[0] * w[1]
            };
            let accept: f64 = rng.random();
            if accept * vmax <= v {
                let mut x = [0.0; 2];
                for a in 0..self.grid.dim() {
                    x[a] = origin[a] + w[a] * self.grid.h(a);
                }
                return x;
            }
        }
    }
}

fn bin_index(grid: &Grid, bins: usize, x: [f64; 2]) -> usize {
    let mut idx = 0;
    let mut mult = 1;
    for a in 0..grid.dim() {
        let b = ((x[a] / grid.x_max(a) * bins as f64).floor() as usize).min(bins - 1);
        idx += b * mult;
        mult *= bins;
    }
    idx
}

/// Survival curve and conditional histograms by Euler-Maruyama. With
/// `control = None` the drift is zero.
pub fn simulate_killed(
    problem: &DiscreteProblem,
    control: Option<&ControlTrajectory>,
    opts: &McOptions,
) -> Result<McResult> {
    let grid = &problem.grid;
    let dim = grid.dim();
    if opts.n_paths == 0 || opts.bins == 0 || !(opts.dt > 0.0) || opts.batch_size == 0 {
        return Err(Error::InvalidParameter(
            "empty Monte Carlo configuration".into(),
        ));
    }
    if control.is_some() {
        let ratio = problem.time.dt() / opts.dt;
        if (ratio - ratio.round()).abs() > 1e-6 || ratio.round() < 1.0 {
            return Err(Error::InvalidParameter(format!(
                "MC step {} must divide the grid step {}",
                opts.dt,
                problem.time.dt()
            )));
        }
    }
    let check_steps: Vec<usize> = opts
        .checkpoints
        .iter()
        .map(|&t| (t / opts.dt).round() as usize)
        .collect();
    let total_steps = check_steps.iter().copied().max().unwrap_or(0);
    let drift = control.map(|c| DriftField::new(grid, c, problem.time.dt()));
    let sampler = InitialSampler::new(grid, &problem.p0)?;
    let sigma = problem.sigma;
    let sq = sigma * opts.dt.sqrt();
    let bridge_scale = 2.0 / (sigma * sigma * opts.dt);
    let n_bins = opts.bins.pow(dim as u32);
    let n_checks = check_steps.len();

    let n_batches = opts.n_paths.div_ceil(opts.batch_size);
    let tallies: Vec<(Vec<u64>, Vec<u64>)> = (0..n_batches)
        .into_par_iter()
        .map(|batch| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(batch as u64);
            let start = batch * opts.batch_size;
            let count = opts.batch_size.min(opts.n_paths - start);
            let mut alive = vec![0u64; n_checks];
            let mut hist = vec![0u64; n_checks * n_bins];
            for _ in 0..count {
                let mut x = sampler.sample(&mut rng);
                let mut dead = false;
                let mut next_check = 0;
                let mut step = 0usize;
                loop {
                    while next_check < n_checks && check_steps[next_check] == step {
                        if !dead {
                            alive[next_check] += 1;
                            hist[next_check * n_bins + bin_index(grid, opts.bins, x)] += 1;
                        }
                        next_check += 1;
                    }
                    if dead || step >= total_steps {
                        break;
                    }
                    let b = match &drift {
                        Some(d) => d.eval(step as f64 * opts.dt, x),
                        None => [0.0; 2],
                    };
                    let mut y = [0.0; 2];
                    for a in 0..dim {
                        let z: f64 = rng.sample(StandardNormal);
                        y[a] = x[a] - b[a] * opts.dt + sq * z;
                        if y[a] < 0.0 || y[a] > grid.x_max(a) {
                            dead = true;
                        }
                    }
                    if !dead && opts.killing == KillingRule::BrownianBridge {
                        let mut survive = 1.0;
                        for a in 0..dim {
                            let xm = grid.x_max(a);
                            for (d0, d1) in [(x[a], y[a]), (xm - x[a], xm - y[a])] {
                                let e = bridge_scale * d0 * d1;
                                if e < 40.0 {
                                    survive *= 1.0 - (-e).exp();
                                }
                            }
                        }
                        if survive < 1.0 {
                            let u: f64 = rng.random();
                            if u >= survive {
                                dead = true;
                            }
                        }
                    }
                    x = y;
                    step += 1;
                }
            }
            (alive, hist)
        })
        .collect();

    let mut alive = vec![0u64; n_checks];
    let mut hist = vec![0u64; n_checks * n_bins];
    for (a, h) in tallies {
        alive.iter_mut().zip(&a).for_each(|(s, v)| *s += v);
        hist.iter_mut().zip(&h).for_each(|(s, v)| *s += v);
    }
    let n = opts.n_paths as f64;
    let survival = (0..n_checks)
        .map(|c| {
            let p = alive[c] as f64 / n;
            SurvivalPoint {
                t: opts.checkpoints[c],
                p_hat: p,
                stderr: (p * (1.0 - p) / n).sqrt(),
            }
        })
        .collect();
    let histograms = (0..n_checks)
        .map(|c| Histogram {
            t: opts.checkpoints[c],
            bins: opts.bins,
            alive: alive[c],
            counts: hist[c * n_bins..(c + 1) * n_bins].to_vec(),
        })
        .collect();
    Ok(McResult {
        survival,
        histograms,
        seed: opts.seed,
    })
}

/// Probability of each of `bins` equal sub-intervals under the normalized
/// piecewise-linear interpolant of `p` (one-dimensional grids).
pub fn pde_bin_probabilities(grid: &Grid, p: &[f64], bins: usize) -> Result<Vec<f64>> {
    if grid.dim() != 1 {
        return Err(Error::InvalidParameter(
            "bin probabilities are implemented for 1D grids".into(),
        ));
    }
    if bins == 0 {
        return Err(Error::InvalidParameter("need at least one bin".into()));
    }
    let h = grid.h(0);
    let width = grid.x_max(0) / bins as f64;
    let mut out = vec![0.0; bins];
    for i in 0..grid.cells(0) {
        let (x0, x1) = (i as f64 * h, (i + 1) as f64 * h);
        let (v0, v1) = (p[i], p[i + 1]);
        let lin = |x: f64| v0 + (v1 - v0) * (x - x0) / h;
        let first = ((x0 / width).floor() as usize).min(bins - 1);
        let last = (((x1 / width).ceil() as usize).max(1) - 1).min(bins - 1);
        for (b, slot) in out.iter_mut().enumerate().take(last + 1).skip(first) {
            let a = x0.max(b as f64 * width);
            let c = x1.min((b + 1) as f64 * width);
            if c > a {
                *slot += 0.5 * (lin(a) + lin(c)) * (c - a);
            }
        }
    }
    let total: f64 = out.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroDensity);
    }
    out.iter_mut().for_each(|v| *v /= total);
    Ok(out)
}
