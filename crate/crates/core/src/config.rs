//! TOML run configuration layered over a named case preset.
//!
//! ```toml
//! case = "1"
//! sigma = 0.8
//! M = inf
//! Nx = 400
//! [p0]
//! center = [0.25]
//! width = 0.1
//! amplitude = 1.0
//! offset = 0.05
//! [[g_T]]
//! center = [0.7]
//! width = 0.2
//! amplitude = -0.5
//! ```

use serde::{Deserialize, Serialize};

use crate::coupled::SolverOptions;
use crate::error::{Error, Result};
use crate::hjb::NewtonOptions;
use crate::problem::{Bump, CaseId, CostSign, InitialDensity, ProblemSpec};
use crate::stationary::StationaryOptions;

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Number {
    Value(f64),
    Text(String),
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Extent {
    Scalar(f64),
    PerAxis(Vec<f64>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDensity {
    kind: Option<String>,
    center: Option<Vec<f64>>,
    width: Option<f64>,
    amplitude: Option<f64>,
    offset: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    case: Option<String>,
    dim: Option<usize>,
    sigma: Option<f64>,
    epsilon: Option<f64>,
    #[serde(rename = "M")]
    bound: Option<Number>,
    #[serde(rename = "T")]
    horizon: Option<f64>,
    #[serde(rename = "Nt")]
    steps: Option<usize>,
    #[serde(rename = "Nx")]
    nx: Option<usize>,
    #[serde(rename = "Ny")]
    ny: Option<usize>,
    x_max: Option<Extent>,
    cost_sign: Option<CostSign>,
    theta: Option<f64>,
    tol_fixed_point: Option<f64>,
    tol_newton: Option<f64>,
    max_iters: Option<usize>,
    p0: Option<RawDensity>,
    #[serde(rename = "g_T")]
    terminal: Option<Vec<Bump>>,
    #[serde(rename = "f")]
    potential: Option<Vec<Bump>>,
    #[serde(rename = "phi")]
    running: Option<Vec<Bump>>,
}

/// Problem data plus iteration controls, fully resolved.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub spec: ProblemSpec,
    pub theta: f64,
    pub tol_fixed_point: f64,
    pub tol_newton: f64,
    pub max_iters: usize,
}

impl RunConfig {
    pub fn from_case(id: CaseId) -> Self {
        Self {
            spec: ProblemSpec::case(id),
            theta: 1.0,
            tol_fixed_point: 1e-6,
            tol_newton: 1e-10,
            max_iters: 500,
        }
    }

    /// Parse a TOML document. Keys absent from the file keep the values of
    /// the named case (case 1 when no case is given).
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let id: CaseId = raw.case.as_deref().unwrap_or("1").parse()?;
        let mut cfg = Self::from_case(id);
        let s = &mut cfg.spec;
        if let Some(d) = raw.dim {
            if d != s.dim {
                s.dim = d;
                if d == 2 && s.cells[1] < 2 {
                    s.cells[1] = s.cells[0];
                }
            }
        }
        set(&mut s.sigma, raw.sigma);
        set(&mut s.epsilon, raw.epsilon);
        set(&mut s.horizon, raw.horizon);
        set(&mut s.steps, raw.steps);
        if let Some(nx) = raw.nx {
            s.cells[0] = nx;
            if s.dim == 2 && raw.ny.is_none() {
                s.cells[1] = nx;
            }
        }
        if let Some(ny) = raw.ny {
            s.cells[1] = ny;
        }
        match raw.x_max {
            Some(Extent::Scalar(v)) => s.x_max = [v, v],
            Some(Extent::PerAxis(v)) => {
                for (a, x) in v.iter().take(2).enumerate() {
                    s.x_max[a] = *x;
                }
            }
            None => {}
        }
        if let Some(b) = raw.bound {
            s.bound = match b {
                Number::Value(v) => v,
                Number::Text(t) if t == "inf" || t == "infinity" => f64::INFINITY,
                Number::Text(t) => {
                    return Err(Error::Config(format!(
                        "M must be a number or \"inf\", got `{t}`"
                    )))
                }
            };
        }
        set(&mut s.cost_sign, raw.cost_sign);
        if let Some(p) = raw.p0 {
            s.p0 = match p.kind.as_deref() {
                Some("uniform") => InitialDensity::Uniform,
                Some("bump") | None => InitialDensity::Bumps {
                    bumps: vec![Bump::new(
                        &p.center
                            .ok_or_else(|| Error::Config("[p0] needs `center`".into()))?,
                        p.width
                            .ok_or_else(|| Error::Config("[p0] needs `width`".into()))?,
                        p.amplitude.unwrap_or(1.0),
                    )],
                    offset: p.offset.unwrap_or(0.0),
                },
                Some(k) => return Err(Error::Config(format!("unknown p0 kind `{k}`"))),
            };
        }
        set(&mut s.terminal, raw.terminal);
        set(&mut s.potential, raw.potential);
        set(&mut s.running, raw.running);
        set(&mut cfg.theta, raw.theta);
        set(&mut cfg.tol_fixed_point, raw.tol_fixed_point);
        set(&mut cfg.tol_newton, raw.tol_newton);
        set(&mut cfg.max_iters, raw.max_iters);
        cfg.spec
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn newton(&self) -> NewtonOptions {
        NewtonOptions {
            tol: self.tol_newton,
            ..Default::default()
        }
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            theta: self.theta,
            tol: self.tol_fixed_point,
            max_iters: self.max_iters,
            newton: self.newton(),
            ..Default::default()
        }
    }

    pub fn stationary_options(&self) -> StationaryOptions {
        StationaryOptions {
            theta: self.theta,
            tol: self.tol_fixed_point,
            max_iters: self.max_iters,
            newton: self.newton(),
            ..Default::default()
        }
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_case_one() {
        assert_eq!(
            RunConfig::from_toml_str("").unwrap(),
            RunConfig::from_case(CaseId::One)
        );
    }

    #[test]
    fn overrides_apply() {
        let cfg = RunConfig::from_toml_str(
            r#"
case = "5"
sigma = 0.5
M = 2.0
Nx = 100
T = 0.5
Nt = 50
cost_sign = "printed"
theta = 0.5
[p0]
center = [0.5]
width = 0.2
[[phi]]
center = [0.3]
width = 0.1
amplitude = -1.0
sign = "figure"
"#,
        )
        .unwrap();
        let s = &cfg.spec;
        assert_eq!((s.sigma, s.bound, s.cells[0], s.steps), (0.5, 2.0, 100, 50));
        assert_eq!(s.cost_sign, CostSign::Printed);
        assert_eq!(s.running[0].sign, Some(CostSign::Figure));
        assert_eq!(cfg.theta, 0.5);
        assert!(
            matches!(s.p0, InitialDensity::Bumps { ref bumps, offset } if bumps[0].center == vec![0.5] && offset == 0.0)
        );
    }

    #[test]
    fn infinite_bound_spellings() {
        for text in ["M = inf", "M = \"inf\""] {
            assert!(RunConfig::from_toml_str(text)
                .unwrap()
                .spec
                .bound
                .is_infinite());
        }
        assert!(RunConfig::from_toml_str("M = \"big\"").is_err());
    }

    #[test]
    fn two_dimensional_defaults_square_grid() {
        let cfg = RunConfig::from_toml_str("case = \"2d-a\"\nNx = 20").unwrap();
        assert_eq!(cfg.spec.cells, [20, 20]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = RunConfig::from_toml_str("sigma = 0.8\nNx = \"many\"\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let err = RunConfig::from_toml_str("sigmaa = 0.8\n").unwrap_err();
        assert!(err.to_string().contains("sigmaa"), "{err}");
        assert!(RunConfig::from_toml_str("sigma = -1.0").is_err());
    }
}
