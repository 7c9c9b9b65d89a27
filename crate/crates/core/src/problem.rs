//! Problem data, its discretization, and the discrete cost functional.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{inner, mass, Field, Grid, SpaceTimeField, TimeGrid};
use crate::hamiltonian::{ControlModel, HamiltonianParams};

/// Sign inside the exponential of a cost bump `A exp(s |x - c|^2 / w^2)`.
/// `Figure` uses `s = -1`, `Printed` uses `s = +1`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostSign {
    #[default]
    Figure,
    Printed,
}

impl CostSign {
    pub fn exponent_sign(self) -> f64 {
        match self {
            CostSign::Figure => -1.0,
            CostSign::Printed => 1.0,
        }
    }
}

impl std::str::FromStr for CostSign {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "figure" => Ok(CostSign::Figure),
            "printed" => Ok(CostSign::Printed),
            other => Err(Error::Config(format!(
                "cost sign must be `figure` or `printed`, got `{other}`"
            ))),
        }
    }
}

/// `amplitude * exp(s |x - center|^2 / width^2)`; `sign` overrides the
/// problem-wide cost sign when set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: Vec<f64>,
    pub width: f64,
    pub amplitude: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sign: Option<CostSign>,
}

impl Bump {
    pub fn new(center: &[f64], width: f64, amplitude: f64) -> Self {
        Self {
            center: center.to_vec(),
            width,
            amplitude,
            sign: None,
        }
    }

    pub fn with_sign(mut self, sign: CostSign) -> Self {
        self.sign = Some(sign);
        self
    }

    pub fn eval(&self, x: [f64; 2], dim: usize, default_sign: CostSign) -> f64 {
        let s = self.sign.unwrap_or(default_sign).exponent_sign();
        let d2: f64 = (0..dim)
            .map(|a| {
                let c = self.center.get(a).copied().unwrap_or(0.0);
                (x[a] - c) * (x[a] - c)
            })
            .sum();
        self.amplitude * (s * d2 / (self.width * self.width)).exp()
    }
}

fn eval_bumps(bumps: &[Bump], x: [f64; 2], dim: usize, sign: CostSign) -> f64 {
    bumps.iter().map(|b| b.eval(x, dim, sign)).sum()
}

/// Unnormalized initial density.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InitialDensity {
    Uniform,
    /// `max(0, sum of bumps - offset)`; bump signs default to `Figure`.
    Bumps {
        bumps: Vec<Bump>,
        offset: f64,
    },
}

impl InitialDensity {
    pub fn eval(&self, x: [f64; 2], dim: usize) -> f64 {
        match self {
            InitialDensity::Uniform => 1.0,
            InitialDensity::Bumps { bumps, offset } => {
                (eval_bumps(bumps, x, dim, CostSign::Figure) - offset).max(0.0)
            }
        }
    }
}

/// Problem data in continuous form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub case: String,
    pub dim: usize,
    pub x_max: [f64; 2],
    pub cells: [usize; 2],
    pub horizon: f64,
    pub steps: usize,
    pub sigma: f64,
    pub epsilon: f64,
    /// Control bound; `f64::INFINITY` for unconstrained.
    #[serde(rename = "M", with = "bound_serde")]
    pub bound: f64,
    pub cost_sign: CostSign,
    pub p0: InitialDensity,
    /// Terminal cost weight `g_T` of the linear terminal functional.
    pub terminal: Vec<Bump>,
    /// Weight of the linear running functional.
    pub running: Vec<Bump>,
    /// Potential `f` in the Lagrangian `f + |b|^2 / 2`.
    pub potential: Vec<Bump>,
}

/// Writes an infinite bound as the string `"inf"`.
mod bound_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Value(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Value(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("invalid bound `{t}`"))),
        }
    }
}

/// Named presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CaseId {
    One,
    Two,
    TwoDA,
    TwoDB,
    Five,
}

impl std::str::FromStr for CaseId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" => Ok(CaseId::One),
            "2" => Ok(CaseId::Two),
            "3" | "2d-a" => Ok(CaseId::TwoDA),
            "4" | "2d-b" => Ok(CaseId::TwoDB),
            "5" => Ok(CaseId::Five),
            other => Err(Error::Config(format!("unknown case `{other}`"))),
        }
    }
}

impl fmt::Display for CaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CaseId::One => "1",
            CaseId::Two => "2",
            CaseId::TwoDA => "2d-a",
            CaseId::TwoDB => "2d-b",
            CaseId::Five => "5",
        };
        f.write_str(s)
    }
}

fn case1_p0() -> InitialDensity {
    InitialDensity::Bumps {
        bumps: vec![Bump::new(&[0.25], 0.1, 1.0)],
        offset: 0.05,
    }
}

fn center_p0() -> InitialDensity {
    InitialDensity::Bumps {
        bumps: vec![Bump::new(&[0.5, 0.5], 0.1, 1.0)],
        offset: 0.05,
    }
}

impl ProblemSpec {
    pub fn case(id: CaseId) -> Self {
        let base = ProblemSpec {
            case: id.to_string(),
            dim: 1,
            x_max: [1.0, 1.0],
            cells: [2000, 1],
            horizon: 0.2,
            steps: 1000,
            sigma: 0.8,
            epsilon: 0.0,
            bound: f64::INFINITY,
            cost_sign: CostSign::Figure,
            p0: case1_p0(),
            terminal: vec![Bump::new(&[0.7], 0.2, -0.5)],
            running: vec![],
            potential: vec![],
        };
        match id {
            CaseId::One => base,
            CaseId::Two => ProblemSpec {
                horizon: 2.0,
                steps: 10_000,
                ..base
            },
            CaseId::TwoDA => ProblemSpec {
                dim: 2,
                cells: [80, 80],
                steps: 40,
                p0: center_p0(),
                terminal: vec![Bump::new(&[0.5, 0.5], 0.2, 0.5)],
                ..base
            },
            CaseId::TwoDB => ProblemSpec {
                dim: 2,
                cells: [80, 80],
                steps: 40,
                p0: center_p0(),
                terminal: vec![
                    Bump::new(&[0.25, 0.75], 0.15, -0.5),
                    Bump::new(&[0.75, 0.25], 0.15, -0.5),
                ],
                ..base
            },
            CaseId::Five => ProblemSpec {
                cells: [1000, 1],
                horizon: 2.0,
                steps: 2000,
                terminal: vec![],
                running: vec![Bump::new(&[0.7], 0.2, -0.5)],
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dim == 1 || self.dim == 2) {
            return Err(Error::InvalidParameter(format!(
                "dimension must be 1 or 2, got {}",
                self.dim
            )));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::InvalidParameter("sigma must be positive".into()));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::InvalidParameter("T must be positive".into()));
        }
        if !(self.bound > 0.0) {
            return Err(Error::InvalidParameter("M must be positive".into()));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::InvalidParameter(
                "epsilon must be nonnegative".into(),
            ));
        }
        for b in self
            .terminal
            .iter()
            .chain(&self.running)
            .chain(&self.potential)
        {
            if !(b.width > 0.0) || b.center.len() < self.dim {
                return Err(Error::InvalidParameter(format!("malformed bump {b:?}")));
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid> {
        match self.dim {
            1 => Grid::new_1d(self.x_max[0], self.cells[0]),
            _ => Grid::new_2d(self.x_max[0], self.x_max[1], self.cells[0], self.cells[1]),
        }
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.horizon, self.steps)
    }

    pub fn discretize(&self) -> Result<DiscreteProblem> {
        self.validate()?;
        let grid = self.grid()?;
        let time = self.time_grid()?;
        let nodal = |bumps: &[Bump]| -> Vec<f64> {
            Field::from_fn(&grid, |x| eval_bumps(bumps, x, self.dim, self.cost_sign)).into_vec()
        };
        let ham = HamiltonianParams::new(
            ControlModel::Quadratic { bound: self.bound },
            nodal(&self.potential),
        );
        let p0 = discretize_p0(&self.p0, &grid)?;
        Ok(DiscreteProblem {
            running: Arc::new(LinearFunctional::new(nodal(&self.running))),
            terminal: Arc::new(LinearFunctional::new(nodal(&self.terminal))),
            grid,
            time,
            sigma: self.sigma,
            epsilon: self.epsilon,
            ham,
            p0,
        })
    }
}

/// A functional `Phi[q]` on normalized densities together with its
/// discrete gradient.
pub trait Functional: fmt::Debug + Send + Sync {
    fn value(&self, grid: &Grid, q: &[f64]) -> f64;
    fn gradient(&self, grid: &Grid, q: &[f64]) -> Vec<f64>;
    /// True when the gradient does not depend on `q`.
    fn is_linear(&self) -> bool {
        false
    }
}

/// `q -> h^d sum_i w_i q_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearFunctional {
    pub weights: Vec<f64>,
}

impl LinearFunctional {
    pub fn new(weights: Vec<f64>) -> Self {
        Self { weights }
    }

    pub fn zero(n: usize) -> Self {
        Self::new(vec![0.0; n])
    }
}

impl Functional for LinearFunctional {
    fn value(&self, grid: &Grid, q: &[f64]) -> f64 {
        inner(grid, &self.weights, q)
    }

    fn gradient(&self, _grid: &Grid, _q: &[f64]) -> Vec<f64> {
        self.weights.clone()
    }

    fn is_linear(&self) -> bool {
        true
    }
}

/// Everything the solvers consume.
#[derive(Clone, Debug)]
pub struct DiscreteProblem {
    pub grid: Grid,
    pub time: TimeGrid,
    pub sigma: f64,
    pub epsilon: f64,
    pub ham: HamiltonianParams,
    pub running: Arc<dyn Functional>,
    pub terminal: Arc<dyn Functional>,
    pub p0: Field,
}

impl DiscreteProblem {
    /// Homogeneous problem on `grid`: no costs, unbounded control.
    pub fn bare(grid: Grid, time: TimeGrid, sigma: f64, p0: Field) -> Self {
        let n = grid.n_nodes();
        Self {
            ham: HamiltonianParams::potential_free(ControlModel::unbounded(), n),
            running: Arc::new(LinearFunctional::zero(n)),
            terminal: Arc::new(LinearFunctional::zero(n)),
            grid,
            time,
            sigma,
            epsilon: 0.0,
            p0,
        }
    }

    pub fn with_time(&self, time: TimeGrid) -> Self {
        Self {
            time,
            ..self.clone()
        }
    }
}

/// Node values of `p0`, zeroed on the boundary and scaled to unit mass.
pub fn discretize_p0(p0: &InitialDensity, grid: &Grid) -> Result<Field> {
    let mut f = Field::from_fn(grid, |x| p0.eval(x, grid.dim()));
    for n in 0..grid.n_nodes() {
        if grid.is_boundary(n) {
            f[n] = 0.0;
        }
    }
    let m = mass(grid, &f);
    if !(m > 0.0) {
        return Err(Error::ZeroDensity);
    }
    Ok(f.scaled(1.0 / m))
}

/// Drift per time slice and node.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlTrajectory {
    pub dim: usize,
    pub slices: Vec<Vec<[f64; 2]>>,
}

impl ControlTrajectory {
    pub fn zero(grid: &Grid, time: &TimeGrid) -> Self {
        Self {
            dim: grid.dim(),
            slices: vec![vec![[0.0; 2]; grid.n_nodes()]; time.steps() + 1],
        }
    }

    pub fn max_norm(&self) -> f64 {
        self.slices
            .iter()
            .flatten()
            .map(|b| (b[0] * b[0] + b[1] * b[1]).sqrt())
            .fold(0.0, f64::max)
    }

    pub fn check_bound(&self, bound: f64) -> Result<()> {
        let m = self.max_norm();
        if m > bound * (1.0 + 1e-12) {
            return Err(Error::InvalidParameter(format!(
                "control norm {m} exceeds the bound {bound}"
            )));
        }
        Ok(())
    }
}

/// Discrete cost with the quadratic Lagrangian `f + |b|^2 / 2`.
pub fn eval_cost(
    problem: &DiscreteProblem,
    p: &SpaceTimeField,
    control: &ControlTrajectory,
) -> Result<f64> {
    let grid = &problem.grid;
    let steps = problem.time.steps();
    let dt = problem.time.dt();
    if p.len() != steps + 1 || control.slices.len() < steps {
        return Err(Error::LengthMismatch {
            expected: steps + 1,
            found: p.len().min(control.slices.len()),
        });
    }
    control.check_bound(problem.ham.model.bound().max(f64::MIN_POSITIVE))?;
    let masses = p.masses(grid);
    for (n, &m) in masses.iter().enumerate() {
        if !(m > 0.0) {
            return Err(Error::DegenerateMass { slice: n, mass: m });
        }
    }
    let f = &problem.ham.potential;
    let mut j = 0.0;
    for n in 0..steps {
        let pn = p.slice(n);
        let m = masses[n];
        let lag: f64 = (0..grid.n_nodes())
            .map(|i| {
                let b = control.slices[n][i];
                pn[i] * (f[i] + 0.5 * (b[0] * b[0] + b[1] * b[1]))
            })
            .sum::<f64>()
            * grid.cell_volume()
            / m;
        let q = pn.scaled(1.0 / m);
        j += dt * (lag + problem.running.value(grid, &q));
    }
    let m_t = masses[steps];
    let q_t = p.slice(steps).scaled(1.0 / m_t);
    j += problem.terminal.value(grid, &q_t) - problem.epsilon * m_t.ln();
    Ok(j)
}
