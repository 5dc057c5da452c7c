//! JSON scenario configs.  Strict parsing: unknown keys are rejected
//! everywhere, and each preset checks that exactly its own parameters are
//! present, so a typo fails loudly instead of silently running defaults.

use serde::{Deserialize, Serialize};
use std::sync::Arc;

use nldisp_core::{
    build_grid, build_resource, steady, BoundaryMode, Domain, Grading, Grid, GridFunction, Kernel,
    NonlocalOperator, ResourceSpec,
};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub domain: DomainConfig,
    pub grid: GridConfig,
    pub kernel: KernelConfig,
    pub boundary: BoundaryChoice,
    pub resource: ResourceConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    /// Dispersal rate for `solve` and `eig`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<f64>,
    /// Dispersal rates for `sweep` and `scaling`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaling: Option<ScalingConfig>,
    /// Dispersal grid for `mixing`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unimodal_tol: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub bounds: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub counts: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grading: Option<GradingConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradingConfig {
    pub region: Vec<(f64, f64)>,
    pub factor: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub family: KernelFamily,
    /// sigma for gaussian, radius for tophat.
    pub param: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Gaussian,
    Tophat,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryChoice {
    Neumann,
    Dirichlet,
}

/// One flat struct for every preset; `to_spec` enforces that exactly the
/// preset's own parameters are set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceConfig {
    pub preset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequency: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub low: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub high: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub dt_safety: f64,
    pub method: MethodChoice,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-10,
            max_iter: 1_000_000,
            dt_safety: 0.9,
            method: MethodChoice::AlgebraicFp,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodChoice {
    AlgebraicFp,
    MonotoneTime,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingConfig {
    pub alpha: f64,
    pub x0: Vec<f64>,
    #[serde(default = "default_base_counts")]
    pub base_counts: usize,
    #[serde(default = "default_ball_nodes")]
    pub ball_nodes: usize,
}

fn default_base_counts() -> usize {
    2000
}

fn default_ball_nodes() -> usize {
    64
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))
    }

    pub fn domain(&self) -> Result<Domain, CliError> {
        Domain::new(&self.domain.bounds).map_err(CliError::from)
    }

    pub fn build_grid(&self) -> Result<Arc<Grid>, CliError> {
        let domain = self.domain()?;
        let grading = self.grid.grading.as_ref().map(|g| Grading {
            region: g.region.clone(),
            factor: g.factor,
        });
        build_grid(&domain, &self.grid.counts, grading.as_ref()).map_err(CliError::from)
    }

    pub fn kernel(&self) -> Kernel {
        match self.kernel.family {
            KernelFamily::Gaussian => Kernel::Gaussian {
                sigma: self.kernel.param,
            },
            KernelFamily::Tophat => Kernel::Tophat {
                radius: self.kernel.param,
            },
        }
    }

    pub fn boundary(&self) -> BoundaryMode {
        match self.boundary {
            BoundaryChoice::Neumann => BoundaryMode::Neumann,
            BoundaryChoice::Dirichlet => BoundaryMode::Dirichlet,
        }
    }

    pub fn solver_options(&self) -> steady::SolverOptions {
        steady::SolverOptions {
            tol: self.solver.tol,
            max_iter: self.solver.max_iter,
            dt_safety: self.solver.dt_safety,
        }
    }

    pub fn resource(&self, op: &NonlocalOperator) -> Result<GridFunction, CliError> {
        build_resource(&self.resource.to_spec()?, op).map_err(CliError::from)
    }

    /// The d for single-rate commands.
    pub fn single_d(&self) -> Result<f64, CliError> {
        self.d
            .ok_or_else(|| CliError::Config("this command needs a top-level \"d\"".into()))
    }

    pub fn sweep_ds(&self) -> Result<&[f64], CliError> {
        match self.d_values.as_deref() {
            Some(ds) if !ds.is_empty() => Ok(ds),
            Some(_) => Err(CliError::Config("\"d_values\" must not be empty".into())),
            None => Err(CliError::Config("this command needs \"d_values\"".into())),
        }
    }
}

impl ResourceConfig {
    pub fn to_spec(&self) -> Result<ResourceSpec, CliError> {
        let fail = |msg: &str| Err(CliError::Config(format!("resource: {msg}")));
        let fields: [(&str, bool); 9] = [
            ("value", self.value.is_some()),
            ("base", self.base.is_some()),
            ("amplitude", self.amplitude.is_some()),
            ("frequency", self.frequency.is_some()),
            ("low", self.low.is_some()),
            ("high", self.high.is_some()),
            ("split", self.split.is_some()),
            ("x0", self.x0.is_some()),
            ("eps", self.eps.is_some()),
        ];
        let expect = |wanted: &[&str]| -> Result<(), CliError> {
            for (name, present) in fields {
                let should = wanted.contains(&name);
                if present && !should {
                    return Err(CliError::Config(format!(
                        "resource preset {} does not take \"{name}\"",
                        self.preset
                    )));
                }
                if !present && should {
                    return Err(CliError::Config(format!(
                        "resource preset {} needs \"{name}\"",
                        self.preset
                    )));
                }
            }
            Ok(())
        };
        match self.preset.as_str() {
            "constant" => {
                expect(&["value"])?;
                Ok(ResourceSpec::Constant {
                    value: self.value.unwrap(),
                })
            }
            "sine" => {
                expect(&["base", "amplitude", "frequency"])?;
                Ok(ResourceSpec::Sine {
                    base: self.base.unwrap(),
                    amplitude: self.amplitude.unwrap(),
                    frequency: self.frequency.unwrap(),
                })
            }
            "two_patch" => {
                expect(&["low", "high", "split"])?;
                Ok(ResourceSpec::TwoPatch {
                    low: self.low.unwrap(),
                    high: self.high.unwrap(),
                    split: self.split.unwrap(),
                })
            }
            "m_epsilon" => {
                expect(&["x0", "eps"])?;
                Ok(ResourceSpec::MEpsilon {
                    x0: vec_to_point(self.x0.as_ref().unwrap())?,
                    eps: self.eps.unwrap(),
                })
            }
            other => fail(&format!("unknown preset \"{other}\"")),
        }
    }
}

pub fn vec_to_point(v: &[f64]) -> Result<[f64; 2], CliError> {
    match v {
        [x] => Ok([*x, 0.0]),
        [x, y] => Ok([*x, *y]),
        _ => Err(CliError::Config(format!(
            "a point needs 1 or 2 coordinates, got {}",
            v.len()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine_config_json() -> &'static str {
        r#"{
            "domain": { "bounds": [[0.0, 1.0]] },
            "grid": { "counts": [128] },
            "kernel": { "family": "gaussian", "param": 0.1 },
            "boundary": "neumann",
            "resource": { "preset": "sine", "base": 1.0, "amplitude": 0.5, "frequency": 1.0 },
            "d": 1.0
        }"#
    }

    #[test]
    fn parses_and_round_trips() {
        let cfg = ScenarioConfig::from_json(sine_config_json()).unwrap();
        assert_eq!(cfg.solver, SolverConfig::default(), "defaults fill in");
        let echoed = serde_json::to_string(&cfg).unwrap();
        let again = ScenarioConfig::from_json(&echoed).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn rejects_unknown_keys_at_every_level() {
        for broken in [
            sine_config_json().replacen("\"d\": 1.0", "\"d\": 1.0, \"dd\": 2", 1),
            sine_config_json().replacen("\"counts\": [128]", "\"counts\": [128], \"n\": 1", 1),
            sine_config_json().replacen(
                "\"frequency\": 1.0",
                "\"frequency\": 1.0, \"phase\": 0.0",
                1,
            ),
        ] {
            assert!(
                ScenarioConfig::from_json(&broken).is_err(),
                "should reject: {broken}"
            );
        }
    }

    #[test]
    fn preset_parameter_sets_are_exact() {
        let cfg = ScenarioConfig::from_json(sine_config_json()).unwrap();
        let mut wrong_extra = cfg.resource.clone();
        wrong_extra.value = Some(1.0);
        assert!(wrong_extra.to_spec().is_err(), "sine does not take value");
        let mut missing = cfg.resource.clone();
        missing.frequency = None;
        assert!(missing.to_spec().is_err(), "sine needs frequency");
        let mut unknown = cfg.resource.clone();
        unknown.preset = "plateau".into();
        assert!(unknown.to_spec().is_err());
        assert_eq!(
            cfg.resource.to_spec().unwrap(),
            ResourceSpec::Sine {
                base: 1.0,
                amplitude: 0.5,
                frequency: 1.0
            }
        );
    }

    #[test]
    fn malformed_json_is_a_config_error() {
        let err = ScenarioConfig::from_json("{ not json").unwrap_err();
        assert_eq!(err.code(), 2);
    }
}
