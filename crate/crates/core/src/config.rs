//! Run configuration read from TOML.
//!
//! Every key may be written either inside a table (`[kernel]` then
//! `family = "truncated"`) or as a flat dotted key (`kernel.family = "truncated"`).

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::assembly::{AssemblyContext, Forcing};
use crate::error::{Error, Result};
use crate::kernel::{Kernel, KernelFamily, PsiTable};
use crate::mesh::{build_graded_mesh_1d, build_mesh_2d, DomainSpec, Mesh};
use crate::quadrature::QuadParams;
use crate::solver::{SolverMethod, SolverParams};

/// Parsed configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub experiment: ExperimentSection,
    pub domain: DomainSection,
    pub kernel: KernelSection,
    #[serde(default)]
    pub mesh: MeshSection,
    #[serde(default)]
    pub forcing: ForcingSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub quad: QuadSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub fit: FitSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    /// `boundary_exponent`, `convergence_rate` or `profile_dump`.
    #[serde(default = "default_kind")]
    pub kind: String,
    #[serde(default = "default_name")]
    pub name: String,
    /// Output directory, relative to the config file unless absolute.
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Worker threads for the sweep; 0 uses the available parallelism.
    #[serde(default)]
    pub threads: usize,
}

fn default_kind() -> String {
    "profile_dump".into()
}

fn default_name() -> String {
    "run".into()
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            kind: default_kind(),
            name: default_name(),
            output_dir: default_output(),
            threads: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    /// `interval`, `square` or `l_shape`.
    pub kind: String,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub side: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    /// `pure`, `truncated`, `tempered` or `custom`.
    pub family: String,
    pub s: Option<f64>,
    pub p: Option<f64>,
    pub delta: Option<f64>,
    #[serde(default = "yes")]
    pub normalized: bool,
    /// Nodes of a tabulated `ψ` (custom family).
    pub psi_r: Option<Vec<f64>>,
    pub psi_v: Option<Vec<f64>>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSection {
    pub h: Option<f64>,
    /// Mesh sizes of a refinement sequence, each half the previous one.
    pub h_list: Option<Vec<f64>>,
    pub mu: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcingSection {
    /// `constant` (uses `value`) or `finite_horizon`, the constant
    /// `δ^{2-2s} / (1-s)` built from the kernel horizon and order.
    #[serde(default = "default_forcing")]
    pub kind: String,
    pub value: Option<f64>,
}

fn default_forcing() -> String {
    "constant".into()
}

impl Default for ForcingSection {
    fn default() -> Self {
        ForcingSection {
            kind: default_forcing(),
            value: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub method: Option<String>,
    pub tolerance: Option<f64>,
    pub max_iterations: Option<usize>,
    pub backtrack: Option<f64>,
    pub sufficient_decrease: Option<f64>,
    pub eps_reg: Option<f64>,
    pub continuation: Option<bool>,
    pub dense_limit: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadSection {
    pub order_disjoint: Option<usize>,
    pub order_singular: Option<usize>,
    pub far_field_factor: Option<f64>,
    pub outer_radius_factor: Option<f64>,
    pub order_far: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Orders to sweep; defaults to `[kernel.s]`.
    pub s: Option<Vec<f64>>,
    /// Exponents to sweep; defaults to `[kernel.p]`.
    pub p: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    /// Smallest fit distance; overrides `d_min_factor`.
    pub d_min: Option<f64>,
    /// Smallest fit distance as a multiple of the size of the element at the anchor; defaults to 2.
    pub d_min_factor: Option<f64>,
    /// Largest fit distance; defaults to `0.05 diam(Ω)`.
    pub d_max: Option<f64>,
    /// Sample distances per anchor in 2D.
    pub samples: Option<usize>,
    /// Anchor labels to fit; defaults to all anchors of the domain.
    pub anchors: Option<Vec<String>>,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Config> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and resolves the output directory against its location.
    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Config::from_toml(&text)?;
        if cfg.experiment.output_dir.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.experiment.output_dir = dir.join(&cfg.experiment.output_dir);
            }
        }
        Ok(cfg)
    }

    /// Canonical TOML rendering.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical rendering, without the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.experiment.output_dir = PathBuf::new();
        let digest = Sha256::digest(c.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.domain()?.validate()?;
        self.quad_params()?;
        self.solver_params()?;
        for &s in &self.s_values()? {
            for &p in &self.p_values()? {
                self.kernel(s, p)?;
            }
        }
        if let Some(mu) = self.mesh.mu {
            if !(mu >= 1.0) {
                return Err(Error::Config(format!("mesh.mu must be >= 1, got {mu}")));
            }
        }
        match self.forcing.kind.as_str() {
            "constant" | "finite_horizon" => {}
            k => return Err(Error::Config(format!("unknown forcing kind `{k}`"))),
        }
        if self.forcing.kind == "finite_horizon" && self.kernel.delta.is_none() {
            return Err(Error::Config("finite_horizon forcing needs kernel.delta".into()));
        }
        Ok(())
    }

    pub fn domain(&self) -> Result<DomainSpec> {
        let d = &self.domain;
        let need = |v: Option<f64>, key: &str| {
            v.ok_or_else(|| Error::Config(format!("domain.{key} is required for `{}`", d.kind)))
        };
        match d.kind.as_str() {
            "interval" => Ok(DomainSpec::Interval {
                a: need(d.a, "a")?,
                b: need(d.b, "b")?,
            }),
            "square" => Ok(DomainSpec::Square { side: d.side.unwrap_or(1.0) }),
            "l_shape" => Ok(DomainSpec::LShape),
            k => Err(Error::Config(format!("unknown domain kind `{k}`"))),
        }
    }

    pub fn s_values(&self) -> Result<Vec<f64>> {
        self.list(&self.sweep.s, self.kernel.s, "s")
    }

    pub fn p_values(&self) -> Result<Vec<f64>> {
        self.list(&self.sweep.p, self.kernel.p, "p")
    }

    fn list(&self, sweep: &Option<Vec<f64>>, single: Option<f64>, key: &str) -> Result<Vec<f64>> {
        match (sweep, single) {
            (Some(v), _) if !v.is_empty() => Ok(v.clone()),
            (Some(_), _) => Err(Error::Config(format!("sweep.{key} must not be empty"))),
            (None, Some(x)) => Ok(vec![x]),
            (None, None) => Err(Error::Config(format!("set kernel.{key} or sweep.{key}"))),
        }
    }

    /// The single `(s, p)` pair used by `solve` and `norm`.
    pub fn single_order(&self) -> Result<(f64, f64)> {
        let s = self.kernel.s.or_else(|| self.sweep.s.as_ref().and_then(|v| v.first().copied()));
        let p = self.kernel.p.or_else(|| self.sweep.p.as_ref().and_then(|v| v.first().copied()));
        match (s, p) {
            (Some(s), Some(p)) => Ok((s, p)),
            _ => Err(Error::Config("kernel.s and kernel.p are required".into())),
        }
    }

    pub fn kernel(&self, s: f64, p: f64) -> Result<Kernel> {
        let k = &self.kernel;
        let d = self.domain()?.dim();
        let delta = k.delta.unwrap_or(f64::INFINITY);
        let family = match k.family.as_str() {
            "pure" => KernelFamily::Pure,
            "truncated" => KernelFamily::Truncated,
            "tempered" => KernelFamily::Tempered,
            "custom" => {
                let (r, v) = match (&k.psi_r, &k.psi_v) {
                    (Some(r), Some(v)) => (r.clone(), v.clone()),
                    _ => return Err(Error::Config("custom kernel needs kernel.psi_r and kernel.psi_v".into())),
                };
                KernelFamily::Custom(Arc::new(PsiTable::new(r, v)?))
            }
            f => return Err(Error::Config(format!("unknown kernel family `{f}`"))),
        };
        Kernel::new(family, d, s, p, delta, k.normalized)
    }

    pub fn forcing(&self, s: f64) -> Forcing {
        match self.forcing.kind.as_str() {
            "finite_horizon" => {
                let delta = self.kernel.delta.unwrap_or(1.0);
                Forcing::Constant(delta.powf(2.0 - 2.0 * s) / (1.0 - s))
            }
            _ => Forcing::Constant(self.forcing.value.unwrap_or(1.0)),
        }
    }

    pub fn quad_params(&self) -> Result<QuadParams> {
        let q = &self.quad;
        let d = QuadParams::default();
        let params = QuadParams {
            order_disjoint: q.order_disjoint.unwrap_or(d.order_disjoint),
            order_singular: q.order_singular.unwrap_or(d.order_singular),
            far_field_factor: q.far_field_factor.unwrap_or(d.far_field_factor),
            outer_radius_factor: q.outer_radius_factor.unwrap_or(d.outer_radius_factor),
            order_far: q.order_far.unwrap_or(d.order_far),
        };
        params.validate()?;
        Ok(params)
    }

    pub fn solver_params(&self) -> Result<SolverParams> {
        let s = &self.solver;
        let d = SolverParams::default();
        let params = SolverParams {
            method: s.method.as_deref().map(SolverMethod::parse).transpose()?,
            tolerance: s.tolerance.or(d.tolerance),
            max_iterations: s.max_iterations.unwrap_or(d.max_iterations),
            backtrack: s.backtrack.unwrap_or(d.backtrack),
            sufficient_decrease: s.sufficient_decrease.unwrap_or(d.sufficient_decrease),
            eps_reg: s.eps_reg.unwrap_or(d.eps_reg),
            continuation: s.continuation.unwrap_or(d.continuation),
            dense_limit: s.dense_limit.unwrap_or(d.dense_limit),
            report_norm: d.report_norm,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn mu(&self) -> f64 {
        self.mesh.mu.unwrap_or(1.0)
    }

    /// Mesh of size `h` with the configured grading.
    pub fn build_mesh(&self, h: f64) -> Result<Mesh> {
        match self.domain()? {
            DomainSpec::Interval { a, b } => build_graded_mesh_1d(a, b, h, self.mu()),
            dom => build_mesh_2d(&dom, h, self.mu()),
        }
    }

    /// Mesh of size `mesh.h` (or the first entry of `mesh.h_list`).
    pub fn single_mesh(&self) -> Result<Mesh> {
        let h = self
            .mesh
            .h
            .or_else(|| self.mesh.h_list.as_ref().and_then(|v| v.first().copied()))
            .ok_or_else(|| Error::Config("mesh.h is required".into()))?;
        self.build_mesh(h)
    }

    /// Assembly context for the single `(s, p)` pair on [`Config::single_mesh`].
    pub fn single_context(&self) -> Result<AssemblyContext> {
        let (s, p) = self.single_order()?;
        let mut ctx = AssemblyContext::new(self.single_mesh()?, self.kernel(s, p)?, self.quad_params()?)?;
        ctx.eps_reg = self.solver_params()?.eps_reg;
        Ok(ctx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
experiment.kind = "boundary_exponent"
domain.kind = "interval"
domain.a = -1.0
domain.b = 1.0
kernel.family = "truncated"
kernel.delta = 0.2
kernel.p = 2.0
mesh.h = 0.125
mesh.mu = 2.0
forcing.kind = "finite_horizon"
sweep.s = [0.25, 0.75]
"#;

    #[test]
    fn flat_keys_parse() {
        let cfg = Config::from_toml(SAMPLE).unwrap();
        assert_eq!(cfg.experiment.kind, "boundary_exponent");
        assert_eq!(cfg.s_values().unwrap(), vec![0.25, 0.75]);
        assert_eq!(cfg.p_values().unwrap(), vec![2.0]);
        let k = cfg.kernel(0.25, 2.0).unwrap();
        assert_eq!(k.delta(), 0.2);
        let Forcing::Constant(f) = cfg.forcing(0.5) else { panic!() };
        assert!((f - 0.4).abs() < 1e-15);
        assert_eq!(cfg.single_mesh().unwrap().num_elements(), 16);
    }

    #[test]
    fn tables_and_flat_keys_agree() {
        let tables = r#"
[experiment]
kind = "boundary_exponent"
[domain]
kind = "interval"
a = -1.0
b = 1.0
[kernel]
family = "truncated"
delta = 0.2
p = 2.0
[mesh]
h = 0.125
mu = 2.0
[forcing]
kind = "finite_horizon"
[sweep]
s = [0.25, 0.75]
"#;
        let a = Config::from_toml(SAMPLE).unwrap();
        let b = Config::from_toml(tables).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn hash_tracks_content() {
        let a = Config::from_toml(SAMPLE).unwrap();
        let b = Config::from_toml(&SAMPLE.replace("0.2", "0.3")).unwrap();
        assert_ne!(a.hash(), b.hash());
        let round = Config::from_toml(&a.to_toml()).unwrap();
        assert_eq!(round, a);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Config::from_toml(&SAMPLE.replace("truncated", "gaussian")).is_err());
        assert!(Config::from_toml(&SAMPLE.replace("mesh.mu = 2.0", "mesh.mu = 0.5")).is_err());
        assert!(Config::from_toml(&format!("{SAMPLE}\nkernel.colour = 1\n")).is_err());
        assert!(Config::from_toml(&SAMPLE.replace("[0.25, 0.75]", "[1.5]")).is_err());
    }
}
