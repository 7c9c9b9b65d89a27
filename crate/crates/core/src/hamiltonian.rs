//! Quadratic-cost Hamiltonians with an optional bound `M` on the control.
//!
//! With `L(x, b) = f(x) + |b|^2 / 2`, the rescaled Hamiltonian is
//! `max_{|b| <= M} (xi . b - L(x, b) / mu)`. The numerical Hamiltonian
//! replaces `|xi|^2` by the upwind norm `sum_axes (xi1^-)^2 + (xi2^+)^2`.

/// Forward (`fwd`) and backward (`bwd`) differences per axis at a node.
/// Entries beyond `dim` are zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradPair {
    pub dim: usize,
    pub fwd: [f64; 2],
    pub bwd: [f64; 2],
}

impl GradPair {
    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            fwd: [0.0; 2],
            bwd: [0.0; 2],
        }
    }

    pub fn new_1d(fwd: f64, bwd: f64) -> Self {
        Self {
            dim: 1,
            fwd: [fwd, 0.0],
            bwd: [bwd, 0.0],
        }
    }

    pub fn new_2d(fwd: [f64; 2], bwd: [f64; 2]) -> Self {
        Self { dim: 2, fwd, bwd }
    }

    /// Both slots equal to `xi`, the consistent pair.
    pub fn consistent(xi: &[f64]) -> Self {
        let mut g = Self::zero(xi.len());
        for (a, &v) in xi.iter().enumerate() {
            g.fwd[a] = v;
            g.bwd[a] = v;
        }
        g
    }

    /// Squared upwind norm `sum_a (fwd_a^-)^2 + (bwd_a^+)^2`.
    pub fn upwind_norm_sq(&self) -> f64 {
        (0..self.dim)
            .map(|a| {
                let m = (-self.fwd[a]).max(0.0);
                let p = self.bwd[a].max(0.0);
                m * m + p * p
            })
            .sum()
    }

    pub fn centered(&self) -> [f64; 2] {
        let mut c = [0.0; 2];
        for a in 0..self.dim {
            c[a] = 0.5 * (self.fwd[a] + self.bwd[a]);
        }
        c
    }
}

/// Partial derivatives of the numerical Hamiltonian.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Partials {
    pub d_mu: f64,
    pub d_fwd: [f64; 2],
    pub d_bwd: [f64; 2],
}

/// Set of admissible controls.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ControlModel {
    /// `|b| <= bound`, with `f64::INFINITY` for unconstrained controls.
    Quadratic { bound: f64 },
    /// Only `b = 0` is admissible, so the Hamiltonian reduces to `-f/mu`.
    Uncontrolled,
}

impl ControlModel {
    pub fn unbounded() -> Self {
        ControlModel::Quadratic {
            bound: f64::INFINITY,
        }
    }

    pub fn bound(&self) -> f64 {
        match *self {
            ControlModel::Quadratic { bound } => bound,
            ControlModel::Uncontrolled => 0.0,
        }
    }
}

/// Radial projection onto the ball of radius `bound`.
pub fn truncate(xi: &[f64], bound: f64) -> Vec<f64> {
    let norm = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= bound {
        xi.to_vec()
    } else {
        xi.iter().map(|v| bound * v / norm).collect()
    }
}

fn radial_value(f: f64, mu: f64, r: f64, bound: f64) -> f64 {
    debug_assert!(mu > 0.0, "mu must be positive");
    if mu * r <= bound {
        0.5 * mu * r * r - f / mu
    } else {
        bound * r - f / mu - bound * bound / (2.0 * mu)
    }
}

/// Rescaled Hamiltonian at the exact gradient `xi`.
pub fn check_h(model: ControlModel, f: f64, mu: f64, xi: &[f64]) -> f64 {
    match model {
        ControlModel::Quadratic { bound } => {
            let r = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
            radial_value(f, mu, r, bound)
        }
        ControlModel::Uncontrolled => -f / mu,
    }
}

/// Upwind numerical Hamiltonian.
pub fn numerical_h(model: ControlModel, f: f64, mu: f64, g: &GradPair) -> f64 {
    match model {
        ControlModel::Quadratic { bound } => radial_value(f, mu, g.upwind_norm_sq().sqrt(), bound),
        ControlModel::Uncontrolled => -f / mu,
    }
}

pub fn numerical_h_partials(model: ControlModel, f: f64, mu: f64, g: &GradPair) -> Partials {
    let mut out = Partials {
        d_mu: f / (mu * mu),
        d_fwd: [0.0; 2],
        d_bwd: [0.0; 2],
    };
    let bound = match model {
        ControlModel::Quadratic { bound } => bound,
        ControlModel::Uncontrolled => return out,
    };
    let r2 = g.upwind_norm_sq();
    let r = r2.sqrt();
    let kappa = if mu * r <= bound {
        out.d_mu += 0.5 * r2;
        mu
    } else {
        out.d_mu += bound * bound / (2.0 * mu * mu);
        bound / r
    };
    for a in 0..g.dim {
        out.d_fwd[a] = -kappa * (-g.fwd[a]).max(0.0);
        out.d_bwd[a] = kappa * g.bwd[a].max(0.0);
    }
    out
}

/// Feedback drift `T_M(mu * centered gradient)`.
pub fn optimal_control(model: ControlModel, mu: f64, g: &GradPair) -> [f64; 2] {
    let mut b = [0.0; 2];
    let bound = match model {
        ControlModel::Quadratic { bound } => bound,
        ControlModel::Uncontrolled => return b,
    };
    let c = g.centered();
    let xi: Vec<f64> = (0..g.dim).map(|a| mu * c[a]).collect();
    for (a, v) in truncate(&xi, bound).into_iter().enumerate() {
        b[a] = v;
    }
    b
}

/// Control model plus nodal running potential `f`.
#[derive(Clone, Debug, PartialEq)]
pub struct HamiltonianParams {
    pub model: ControlModel,
    pub potential: Vec<f64>,
}

impl HamiltonianParams {
    pub fn new(model: ControlModel, potential: Vec<f64>) -> Self {
        Self { model, potential }
    }

    pub fn potential_free(model: ControlModel, n_nodes: usize) -> Self {
        Self::new(model, vec![0.0; n_nodes])
    }

    /// Same potential with the control frozen at zero.
    pub fn uncontrolled(&self) -> Self {
        Self::new(ControlModel::Uncontrolled, self.potential.clone())
    }

    pub fn value(&self, node: usize, mu: f64, g: &GradPair) -> f64 {
        numerical_h(self.model, self.potential[node], mu, g)
    }

    pub fn partials(&self, node: usize, mu: f64, g: &GradPair) -> Partials {
        numerical_h_partials(self.model, self.potential[node], mu, g)
    }

    pub fn control(&self, mu: f64, g: &GradPair) -> [f64; 2] {
        optimal_control(self.model, mu, g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const Q2: ControlModel = ControlModel::Quadratic { bound: 2.0 };

    fn brute_force_check_h(f: f64, mu: f64, xi: f64, bound: f64) -> f64 {
        let n = 200_000;
        (0..=n)
            .map(|k| {
                let b = -bound + 2.0 * bound * k as f64 / n as f64;
                xi * b - (f + 0.5 * b * b) / mu
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn truncate_examples() {
        assert_eq!(truncate(&[1.0], 2.0), vec![1.0]);
        assert_eq!(truncate(&[3.0, 4.0], 5.0), vec![3.0, 4.0]);
        let t = truncate(&[3.0, 4.0], 1.0);
        assert!((t[0] - 0.6).abs() < 1e-15 && (t[1] - 0.8).abs() < 1e-15);
        assert_eq!(truncate(&[0.0, 0.0], 1.0), vec![0.0, 0.0]);
    }

    #[test]
    fn check_h_examples() {
        assert!((check_h(Q2, 0.0, 1.0, &[1.0]) - 0.5).abs() < 1e-15);
        assert!((check_h(Q2, 0.0, 1.0, &[3.0]) - 4.0).abs() < 1e-15);
        assert!(
            (check_h(Q2, 0.0, 1.0, &[3.0]) - brute_force_check_h(0.0, 1.0, 3.0, 2.0)).abs() < 1e-9
        );
        let any = ControlModel::Quadratic { bound: 0.3 };
        assert!((check_h(any, 1.0, 2.0, &[0.0]) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn numerical_h_examples() {
        let inf = ControlModel::unbounded();
        assert!((numerical_h(inf, 0.0, 1.0, &GradPair::new_1d(-1.0, 1.0)) - 1.0).abs() < 1e-15);
        assert_eq!(numerical_h(Q2, 0.0, 1.0, &GradPair::new_1d(1.0, -1.0)), 0.0);
        assert!((numerical_h(Q2, 0.0, 1.0, &GradPair::new_1d(-3.0, 0.0)) - 4.0).abs() < 1e-15);
    }

    #[test]
    fn upwind_truncated_branch_matches_brute_force() {
        // Upwind Lagrangian: maximize over b1 <= 0 paired with xi1 and b2 >= 0 with xi2.
        let (xi1, xi2, bound) = (-3.0, 0.5, 2.0);
        let n = 1000;
        let mut best = f64::NEG_INFINITY;
        for i in 0..=n {
            let b1 = -bound * i as f64 / n as f64;
            for j in 0..=n {
                let b2 = bound * j as f64 / n as f64;
                if b1 * b1 + b2 * b2 <= bound * bound {
                    best = best.max(xi1 * b1 + xi2 * b2 - 0.5 * (b1 * b1 + b2 * b2));
                }
            }
        }
        let h = numerical_h(Q2, 0.0, 1.0, &GradPair::new_1d(xi1, xi2));
        assert!((h - best).abs() < 1e-2, "{h} vs {best}");
    }

    #[test]
    fn partials_examples() {
        let inf = ControlModel::unbounded();
        let p = numerical_h_partials(inf, 0.0, 1.0, &GradPair::new_1d(-1.0, 1.0));
        assert_eq!((p.d_fwd[0], p.d_bwd[0], p.d_mu), (-1.0, 1.0, 1.0));
        let p = numerical_h_partials(Q2, 0.3, 1.5, &GradPair::new_1d(0.4, -0.2));
        assert_eq!((p.d_fwd[0], p.d_bwd[0]), (0.0, 0.0));
        let mu = 1.7;
        let p = numerical_h_partials(Q2, 1.0, mu, &GradPair::new_1d(0.0, 0.0));
        assert!((p.d_mu - 1.0 / (mu * mu)).abs() < 1e-15);
    }

    #[test]
    fn partials_match_finite_differences() {
        let d = 1e-6;
        let cases = [
            (0.0, 1.0, GradPair::new_1d(-1.0, 1.0)),
            (0.7, 0.6, GradPair::new_1d(-4.0, 2.5)),
            (-0.3, 2.0, GradPair::new_2d([-0.2, 0.1], [0.5, -1.0])),
        ];
        for (f, mu, g) in cases {
            let p = numerical_h_partials(Q2, f, mu, &g);
            let h = |mu: f64, g: &GradPair| numerical_h(Q2, f, mu, g);
            let fd_mu = (h(mu + d, &g) - h(mu - d, &g)) / (2.0 * d);
            assert!((fd_mu - p.d_mu).abs() < 1e-4);
            for a in 0..g.dim {
                let (mut gp, mut gm) = (g, g);
                gp.fwd[a] += d;
                gm.fwd[a] -= d;
                assert!(((h(mu, &gp) - h(mu, &gm)) / (2.0 * d) - p.d_fwd[a]).abs() < 1e-4);
                let (mut gp, mut gm) = (g, g);
                gp.bwd[a] += d;
                gm.bwd[a] -= d;
                assert!(((h(mu, &gp) - h(mu, &gm)) / (2.0 * d) - p.d_bwd[a]).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn branches_agree_on_seam() {
        let (f, mu, bound): (f64, f64, f64) = (0.4, 1.3, 2.0);
        let r = bound / mu;
        let quad = 0.5 * mu * r * r - f / mu;
        let trunc = bound * r - f / mu - bound * bound / (2.0 * mu);
        assert!((quad - trunc).abs() < 1e-12);
        let dq = 0.5 * r * r + f / (mu * mu);
        let dt = f / (mu * mu) + bound * bound / (2.0 * mu * mu);
        assert!((dq - dt).abs() < 1e-12);
    }

    #[test]
    fn optimal_control_examples() {
        let one = ControlModel::Quadratic { bound: 1.0 };
        assert_eq!(optimal_control(one, 1.0, &GradPair::zero(1))[0], 0.0);
        assert!((optimal_control(one, 1.0, &GradPair::consistent(&[0.3]))[0] - 0.3).abs() < 1e-15);
        assert_eq!(
            optimal_control(Q2, 1.0, &GradPair::consistent(&[3.0]))[0],
            2.0
        );
        assert_eq!(
            optimal_control(
                ControlModel::Uncontrolled,
                1.0,
                &GradPair::consistent(&[3.0])
            )[0],
            0.0
        );
    }

    #[test]
    fn uncontrolled_is_minus_f_over_mu() {
        let g = GradPair::new_1d(-5.0, 3.0);
        assert_eq!(numerical_h(ControlModel::Uncontrolled, 2.0, 4.0, &g), -0.5);
        let p = numerical_h_partials(ControlModel::Uncontrolled, 2.0, 4.0, &g);
        assert_eq!(p.d_fwd, [0.0; 2]);
        assert_eq!(p.d_bwd, [0.0; 2]);
        assert_eq!(p.d_mu, 2.0 / 16.0);
    }
}
