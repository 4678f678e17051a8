//! Experiment configuration. Every physics tolerance is explicit; only grid sizes have defaults.

use std::path::{Path, PathBuf};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::ConfigError;

#[derive(Debug, Clone, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
pub enum ExperimentConfig {
    HalfspaceVerify(HalfspaceConfig),
    RoughSolve(RoughConfig),
    NondivSolve(NondivConfig),
    NeumannVerify(NeumannConfig),
    Sharpness(SharpnessConfig),
    Norms(NormsConfig),
}

#[derive(Debug, Clone, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct HalfspaceConfig {
    pub seed: u64,
    /// Half-strip node counts per side for the manufactured fixture.
    #[serde(default = "default_halfspace_sizes")]
    pub sizes: Vec<usize>,
    /// Field prefixes (`<prefix>.json` + `<prefix>.bin`); when present the fixture is replaced by this data.
    #[serde(default)]
    pub inputs: Option<HalfspaceInputs>,
    pub tolerances: HalfspaceTolerances,
}

#[derive(Debug, Clone, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct HalfspaceInputs {
    pub forcing_tensor: Option<PathBuf>,
    pub forcing: Option<PathBuf>,
    pub h: Option<PathBuf>,
    pub g_normal: Option<PathBuf>,
    pub g_tangential: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct HalfspaceTolerances {
    /// Relative L2 error against the fixture at the finest size; required without inputs, rejected with them.
    #[serde(default)]
    pub rel_l2_error: Option<f64>,
    pub divergence: f64,
    pub normal_trace: f64,
    pub slip: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum Forcing {
    /// Known smooth flow; errors and convergence orders are reported.
    Manufactured,
    /// Seeded smooth forcing tensor; only residuals and contraction are reported.
    Random,
}

#[derive(Debug, Clone, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct RoughConfig {
    pub seed: u64,
    /// Lipschitz constant of the wall `y = K/(2 pi) cos(2 pi x)`.
    pub roughness: f64,
    pub alpha: Vec<f64>,
    #[serde(default = "default_strip_sizes")]
    pub sizes: Vec<usize>,
    pub forcing: Forcing,
    #[serde(default = "default_charts")]
    pub charts: usize,
    pub picard_tol: f64,
    pub max_sweeps: usize,
    pub tolerances: RoughTolerances,
}

#[derive(Debug, Clone, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct RoughTolerances {
    /// Bound on the geometric-mean sweep ratio.
    pub max_contraction: f64,
    pub max_residual: f64,
    /// Minimum observed order of the velocity H1 error between consecutive sizes (manufactured only).
    #[serde(default)]
    pub min_order: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct NondivConfig {
    pub seed: u64,
    pub roughness: f64,
    pub alpha: f64,
    #[serde(default = "default_strip_sizes")]
    pub sizes: Vec<usize>,
    pub picard_tol: f64,
    pub max_sweeps: usize,
    pub tolerances: NondivTolerances,
}

#[derive(Debug, Clone, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct NondivTolerances {
    pub max_residual: f64,
    /// Minimum observed order of the velocity H2 error.
    pub min_h2_order: f64,
    /// Relative max difference to the divergence-form solve for an interior tensor `F`, `f = Div F`.
    pub max_agreement: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct NeumannConfig {
    pub seed: u64,
    pub roughness: f64,
    #[serde(default = "default_strip_sizes")]
    pub sizes: Vec<usize>,
    pub tol: f64,
    pub max_sweeps: usize,
    pub tolerances: NeumannTolerances,
}

#[derive(Debug, Clone, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct NeumannTolerances {
    pub min_order: f64,
    pub max_residual: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SharpnessConfig {
    pub seed: u64,
    pub thetas: Vec<f64>,
    pub ps: Vec<f64>,
    #[serde(default = "default_sharpness_nodes")]
    pub nodes: usize,
    #[serde(default = "default_radii")]
    pub radii: usize,
    #[serde(default = "default_levels")]
    pub levels: usize,
    pub tolerances: SharpnessTolerances,
}

#[derive(Debug, Clone, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SharpnessTolerances {
    /// Exponent error allowed: `max(exponent_abs, exponent_rel |analytic|)`.
    pub exponent_abs: f64,
    pub exponent_rel: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum NormField {
    /// `sin(2 pi x) + cos(2 pi (x + y)) / 2`.
    Modes,
    /// Seeded random combination of the Fourier modes with `|k| <= 3`.
    RandomModes,
}

#[derive(Debug, Clone, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct NormsConfig {
    pub seed: u64,
    /// `(s, p)` pairs; pairs with `p = 2` are compared against the Fourier form.
    pub indices: Vec<[f64; 2]>,
    pub field: NormField,
    #[serde(default = "default_norm_sizes")]
    pub sizes: Vec<usize>,
    /// Multiplier family: compact bump charts with these Lipschitz scales.
    pub multiplier_scales: Vec<f64>,
    /// `(s, p)` at which the multiplier bound is evaluated.
    pub multiplier_index: [f64; 2],
    pub tolerances: NormsTolerances,
}

#[derive(Debug, Clone, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct NormsTolerances {
    /// `|calibrated Gagliardo / Fourier - 1|` on every size after the first.
    pub calibrated_band: f64,
    /// Relative deviation of the fitted multiplier slope from the slope through the origin.
    pub multiplier_linearity: f64,
}

fn default_halfspace_sizes() -> Vec<usize> {
    vec![32, 64, 128]
}
fn default_strip_sizes() -> Vec<usize> {
    vec![32, 64]
}
fn default_norm_sizes() -> Vec<usize> {
    vec![32, 64]
}
fn default_charts() -> usize {
    4
}
fn default_sharpness_nodes() -> usize {
    1024
}
fn default_radii() -> usize {
    5
}
fn default_levels() -> usize {
    6
}

impl ExperimentConfig {
    pub fn name(&self) -> &'static str {
        match self {
            Self::HalfspaceVerify(_) => "halfspace-verify",
            Self::RoughSolve(_) => "rough-solve",
            Self::NondivSolve(_) => "nondiv-solve",
            Self::NeumannVerify(_) => "neumann-verify",
            Self::Sharpness(_) => "sharpness",
            Self::Norms(_) => "norms",
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            Self::HalfspaceVerify(c) => c.seed,
            Self::RoughSolve(c) => c.seed,
            Self::NondivSolve(c) => c.seed,
            Self::NeumannVerify(c) => c.seed,
            Self::Sharpness(c) => c.seed,
            Self::Norms(c) => c.seed,
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        match self {
            Self::HalfspaceVerify(c) => c.seed = seed,
            Self::RoughSolve(c) => c.seed = seed,
            Self::NondivSolve(c) => c.seed = seed,
            Self::NeumannVerify(c) => c.seed = seed,
            Self::Sharpness(c) => c.seed = seed,
            Self::Norms(c) => c.seed = seed,
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read(path.to_path_buf(), e))?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(ConfigError::Schema)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.validate(base)?;
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    /// Make relative input paths relative to the config file's directory.
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(q) = p {
                *q = base.join(&*q);
            }
        };
        match self {
            Self::HalfspaceVerify(HalfspaceConfig { inputs: Some(i), .. }) => {
                for p in [&mut i.forcing_tensor, &mut i.forcing, &mut i.h, &mut i.g_normal, &mut i.g_tangential] {
                    fix(p);
                }
            }
            _ => {}
        }
    }

    /// Range checks and input existence; relative input paths resolve against `base`.
    pub fn validate(&self, base: &Path) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let positive = |name: &str, v: f64| -> Result<(), ConfigError> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(ConfigError::Invalid(format!("{name} must be positive and finite, got {v}")))
            }
        };
        let sizes = |s: &[usize], min: usize| -> Result<(), ConfigError> {
            if s.is_empty() || s.iter().any(|&n| n < min || !n.is_power_of_two()) {
                return Err(ConfigError::Invalid(format!("sizes must be non-empty powers of two >= {min}: {s:?}")));
            }
            Ok(())
        };
        let exists = |p: &Path| -> Result<(), ConfigError> {
            let full = base.join(p);
            for ext in ["json", "bin"] {
                if !full.with_extension(ext).is_file() {
                    return Err(ConfigError::Invalid(format!("input {} not found", full.with_extension(ext).display())));
                }
            }
            Ok(())
        };
        match self {
            Self::HalfspaceVerify(c) => {
                sizes(&c.sizes, 8)?;
                let t = &c.tolerances;
                for (n, v) in [("divergence", t.divergence), ("normal_trace", t.normal_trace), ("slip", t.slip)] {
                    positive(n, v)?;
                }
                match (&c.inputs, t.rel_l2_error) {
                    (None, Some(v)) => positive("rel_l2_error", v)?,
                    (None, None) => return bad("rel_l2_error is required for the manufactured fixture".into()),
                    (Some(_), Some(_)) => return bad("rel_l2_error has no exact solution to compare against with file inputs".into()),
                    (Some(_), None) => {}
                }
                if let Some(i) = &c.inputs {
                    let all = [&i.forcing_tensor, &i.forcing, &i.h, &i.g_normal, &i.g_tangential];
                    if all.iter().all(|p| p.is_none()) {
                        return bad("inputs given but no field listed".into());
                    }
                    for p in all.into_iter().flatten() {
                        exists(p)?;
                    }
                }
            }
            Self::RoughSolve(c) => {
                sizes(&c.sizes, 8)?;
                if !(c.roughness >= 0.0 && c.roughness.is_finite()) {
                    return bad(format!("roughness must be >= 0, got {}", c.roughness));
                }
                if c.alpha.is_empty() || c.alpha.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
                    return bad(format!("alpha must be a non-empty list of values >= 0: {:?}", c.alpha));
                }
                positive("picard_tol", c.picard_tol)?;
                positive("max_contraction", c.tolerances.max_contraction)?;
                positive("max_residual", c.tolerances.max_residual)?;
                if c.max_sweeps == 0 || c.charts < 2 {
                    return bad("max_sweeps must be >= 1 and charts >= 2".into());
                }
                if let Some(o) = c.tolerances.min_order {
                    if c.forcing != Forcing::Manufactured || c.sizes.len() < 2 {
                        return bad("min_order needs the manufactured forcing and at least two sizes".into());
                    }
                    positive("min_order", o)?;
                }
            }
            Self::NondivSolve(c) => {
                sizes(&c.sizes, 8)?;
                if c.sizes.len() < 2 {
                    return bad("nondiv-solve needs at least two sizes for an order".into());
                }
                if !(c.roughness >= 0.0 && c.alpha >= 0.0) {
                    return bad("roughness and alpha must be >= 0".into());
                }
                positive("picard_tol", c.picard_tol)?;
                positive("max_residual", c.tolerances.max_residual)?;
                positive("max_agreement", c.tolerances.max_agreement)?;
                if c.max_sweeps == 0 {
                    return bad("max_sweeps must be >= 1".into());
                }
            }
            Self::NeumannVerify(c) => {
                sizes(&c.sizes, 8)?;
                if c.sizes.len() < 2 {
                    return bad("neumann-verify needs at least two sizes for an order".into());
                }
                if !(c.roughness >= 0.0) {
                    return bad("roughness must be >= 0".into());
                }
                positive("tol", c.tol)?;
                positive("max_residual", c.tolerances.max_residual)?;
                if c.max_sweeps == 0 {
                    return bad("max_sweeps must be >= 1".into());
                }
            }
            Self::Sharpness(c) => {
                if c.thetas.is_empty() || c.ps.is_empty() {
                    return bad("thetas and ps must be non-empty".into());
                }
                if c.thetas.iter().any(|t| !(*t > std::f64::consts::PI / 2.0 - 1e-12 && *t < 2.0 * std::f64::consts::PI)) {
                    return bad(format!("thetas must lie in [pi/2, 2 pi): {:?}", c.thetas));
                }
                if c.ps.iter().any(|p| !(*p >= 1.0 && p.is_finite())) {
                    return bad(format!("ps must be >= 1: {:?}", c.ps));
                }
                positive("exponent_abs", c.tolerances.exponent_abs)?;
                positive("exponent_rel", c.tolerances.exponent_rel)?;
            }
            Self::Norms(c) => {
                sizes(&c.sizes, 4)?;
                if c.sizes.len() < 2 {
                    return bad("norms needs a calibration size and at least one checked size".into());
                }
                let [ms, mp] = c.multiplier_index;
                if !(ms > 0.0 && ms <= 2.0 && mp >= 1.0) {
                    return bad(format!("multiplier_index must have 0 < s <= 2 and p >= 1: {:?}", c.multiplier_index));
                }
                if c.indices.is_empty() || c.indices.iter().any(|[s, p]| !(*s > 0.0 && *s < 1.0 && *p >= 1.0)) {
                    return bad(format!("indices must be (s, p) with 0 < s < 1 <= p: {:?}", c.indices));
                }
                if c.multiplier_scales.len() < 2 || c.multiplier_scales.iter().any(|k| !(*k > 0.0)) {
                    return bad("multiplier_scales needs at least two positive values".into());
                }
                positive("calibrated_band", c.tolerances.calibrated_band)?;
                positive("multiplier_linearity", c.tolerances.multiplier_linearity)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(v: serde_json::Value) -> Result<ExperimentConfig, ConfigError> {
        let cfg: ExperimentConfig = serde_json::from_value(v).map_err(ConfigError::Schema)?;
        cfg.validate(Path::new("."))?;
        Ok(cfg)
    }

    fn rough() -> serde_json::Value {
        serde_json::json!({
            "subcommand": "rough-solve", "seed": 1, "roughness": 0.1, "alpha": [0.0],
            "forcing": "random", "picard_tol": 1e-8, "max_sweeps": 10,
            "tolerances": {"max_contraction": 0.5, "max_residual": 1e-6}
        })
    }

    #[test]
    fn grid_sizes_default_but_tolerances_do_not() {
        let ExperimentConfig::RoughSolve(c) = parse(rough()).unwrap() else { panic!() };
        assert_eq!(c.sizes, default_strip_sizes());
        let mut v = rough();
        v["tolerances"].as_object_mut().unwrap().remove("max_residual");
        assert!(matches!(parse(v), Err(ConfigError::Schema(_))));
    }

    #[test]
    fn order_needs_a_manufactured_solution() {
        let mut v = rough();
        v["tolerances"]["min_order"] = 1.0.into();
        assert!(matches!(parse(v), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn seed_override_reaches_every_variant() {
        let mut c = parse(rough()).unwrap();
        c.set_seed(99);
        assert_eq!(c.seed(), 99);
        assert_eq!(c.name(), "rough-solve");
    }

    #[test]
    fn negative_tolerances_are_rejected() {
        let mut v = rough();
        v["tolerances"]["max_contraction"] = (-0.5).into();
        assert!(matches!(parse(v), Err(ConfigError::Invalid(_))));
    }
}
