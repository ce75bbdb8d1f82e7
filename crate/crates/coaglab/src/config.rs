//! Run configuration: strict JSON schema, validation, and conversion into
//! core types. Unknown fields are rejected so typos cannot silently change
//! a scientific run.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::{KernelFamily, KernelParams, KernelSpec, QForm};
use crate::lattice::{Composition, LatticeState};
use crate::solver::{default_snapshot_times, SolverConfig};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("configuration is not valid JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported config version {0}, expected {CONFIG_VERSION}")]
    Version(u32),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub version: u32,
    pub d: usize,
    pub n_max: u32,
    pub kernel: KernelSection,
    pub initial: InitialSection,
    pub solver: SolverSection,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
    #[serde(default)]
    pub ssa: Option<SsaSection>,
    #[serde(default)]
    pub output: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    pub family: String,
    pub gamma: f64,
    pub p: f64,
    pub c1: f64,
    pub c2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qlin: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qquad: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<Vec<(f64, f64)>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entries: Option<Vec<InitialEntry>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialEntry {
    pub alpha: Vec<u32>,
    pub n: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub t_end: f64,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "default_abs_tol")]
    pub abs_tol: f64,
    #[serde(default = "default_dt_init")]
    pub dt_init: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_times: Option<Vec<f64>>,
    #[serde(default = "default_escape_fraction")]
    pub escape_abort_fraction: f64,
    #[serde(default = "default_snapshot_floor")]
    pub snapshot_floor: f64,
}

fn default_rel_tol() -> f64 {
    1e-8
}
fn default_abs_tol() -> f64 {
    1e-14
}
fn default_dt_init() -> f64 {
    1e-4
}
fn default_escape_fraction() -> f64 {
    0.01
}
fn default_snapshot_floor() -> f64 {
    0.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSection {
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simplex_resolution: Option<u32>,
    #[serde(default = "default_window_fraction")]
    pub window_mass_fraction: f64,
    #[serde(default = "default_window_cap")]
    pub window_m_cap: f64,
    /// Localization target for the empirical delta schedule.
    #[serde(default = "default_delta_target")]
    pub delta_target: f64,
    /// Fixed delta at which per-snapshot localized fractions are reported.
    #[serde(default = "default_localization_delta")]
    pub localization_delta: f64,
    #[serde(default = "default_moment_exponents")]
    pub moment_exponents: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_window: Option<(f64, f64)>,
    #[serde(default = "default_profile_delta")]
    pub profile_delta: f64,
    #[serde(default = "default_profile_bins")]
    pub profile_bins: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile_t_min: Option<f64>,
    #[serde(default)]
    pub csv_mirrors: bool,
}

fn default_true() -> bool {
    true
}
fn default_window_fraction() -> f64 {
    0.95
}
fn default_window_cap() -> f64 {
    1e3
}
fn default_delta_target() -> f64 {
    0.9
}
fn default_localization_delta() -> f64 {
    0.2
}
fn default_moment_exponents() -> Vec<f64> {
    vec![0.0, 1.0, 2.0]
}
fn default_profile_delta() -> f64 {
    0.25
}
fn default_profile_bins() -> usize {
    48
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SsaSection {
    pub n_particles: u64,
    pub volume: f64,
    pub seeds: Vec<u64>,
    pub record_times: Vec<f64>,
}

/// Parsed, validated configuration with core objects built.
#[derive(Debug)]
pub struct ValidatedConfig {
    pub file: RunConfigFile,
    pub kernel: KernelSpec<f64>,
    pub initial: LatticeState<f64>,
    pub solver: SolverConfig<f64>,
}

impl RunConfigFile {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let file: RunConfigFile = serde_json::from_str(text)?;
        if file.version != CONFIG_VERSION {
            return Err(ConfigError::Version(file.version));
        }
        Ok(file)
    }

    /// Builds and validates every core object the run needs. The solver
    /// gate rejects gelling declarations here, before any computation.
    pub fn validate(self, require_no_gelation: bool) -> Result<ValidatedConfig, ConfigError> {
        if self.d == 0 {
            return invalid("d must be >= 1");
        }
        if self.n_max == 0 {
            return invalid("n_max must be >= 1");
        }
        let kernel = self.build_kernel()?;
        if require_no_gelation {
            kernel
                .params
                .require_no_gelation()
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        let initial = self.build_initial()?;
        let solver = self.build_solver()?;
        solver
            .validate(0.0)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(self.diagnostics.window_mass_fraction > 0.0
            && self.diagnostics.window_mass_fraction <= 1.0)
        {
            return invalid("diagnostics.window_mass_fraction must lie in (0, 1]");
        }
        if !(self.diagnostics.window_m_cap > 1.0) {
            return invalid("diagnostics.window_m_cap must exceed 1");
        }
        if !(self.diagnostics.localization_delta > 0.0
            && self.diagnostics.localization_delta < 1.0)
        {
            return invalid("diagnostics.localization_delta must lie in (0, 1)");
        }
        if let Some(ssa) = &self.ssa {
            if ssa.n_particles < 1 {
                return invalid("ssa.n_particles must be >= 1");
            }
            if !(ssa.volume > 0.0) || !ssa.volume.is_finite() {
                return invalid("ssa.volume must be positive");
            }
            if ssa.seeds.is_empty() {
                return invalid("ssa.seeds must list at least one seed");
            }
            if ssa.record_times.windows(2).any(|w| w[1] < w[0]) {
                return invalid("ssa.record_times must be sorted");
            }
        }
        Ok(ValidatedConfig {
            kernel,
            initial,
            solver,
            file: self,
        })
    }

    pub fn build_kernel(&self) -> Result<KernelSpec<f64>, ConfigError> {
        let (family, params) = self.build_kernel_parts()?;
        KernelSpec::new(family, params).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Family structure and declared parameters, before the kernel-class
    /// validation that `KernelSpec::new` performs. `validate-kernel` maps
    /// failures of the two stages to different exit codes.
    pub fn build_kernel_parts(&self) -> Result<(KernelFamily<f64>, KernelParams<f64>), ConfigError> {
        let k = &self.kernel;
        let params = KernelParams::new(k.gamma, k.p, k.c1, k.c2)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let forbid = |cond: bool, what: &str, family: &str| -> Result<(), ConfigError> {
            if cond {
                Err(ConfigError::Invalid(format!(
                    "field '{what}' does not apply to the {family} family"
                )))
            } else {
                Ok(())
            }
        };
        let family = match k.family.as_str() {
            "constant" => {
                forbid(k.lambda.is_some(), "lambda", "constant")?;
                forbid(k.scale.is_some(), "scale", "constant")?;
                forbid(k.q0.is_some() || k.qlin.is_some() || k.qquad.is_some(), "q*", "constant")?;
                forbid(k.table.is_some(), "table", "constant")?;
                let value = k
                    .value
                    .ok_or_else(|| ConfigError::Invalid("constant family needs 'value'".into()))?;
                KernelFamily::Constant { value }
            }
            "additive" | "product" => {
                forbid(k.value.is_some(), "value", &k.family)?;
                forbid(k.lambda.is_some(), "lambda", &k.family)?;
                forbid(k.scale.is_some(), "scale", &k.family)?;
                forbid(k.q0.is_some() || k.qlin.is_some() || k.qquad.is_some(), "q*", &k.family)?;
                forbid(k.table.is_some(), "table", &k.family)?;
                if k.family == "additive" {
                    KernelFamily::Additive
                } else {
                    KernelFamily::Product
                }
            }
            "power_law_pair" => {
                forbid(k.value.is_some(), "value", "power_law_pair")?;
                forbid(k.q0.is_some() || k.qlin.is_some() || k.qquad.is_some(), "q*", "power_law_pair")?;
                forbid(k.table.is_some(), "table", "power_law_pair")?;
                KernelFamily::PowerLawPair {
                    lambda: k.lambda.ok_or_else(|| {
                        ConfigError::Invalid("power_law_pair needs 'lambda'".into())
                    })?,
                    scale: k.scale.unwrap_or(1.0),
                }
            }
            "ray_constant" => {
                forbid(k.value.is_some(), "value", "ray_constant")?;
                forbid(k.lambda.is_some(), "lambda", "ray_constant")?;
                forbid(k.scale.is_some(), "scale", "ray_constant")?;
                forbid(k.table.is_some(), "table", "ray_constant")?;
                let q0 = k.q0.unwrap_or(0.0);
                let qlin = k.qlin.clone().unwrap_or_else(|| vec![0.0; self.d]);
                let qquad = k
                    .qquad
                    .clone()
                    .unwrap_or_else(|| vec![vec![0.0; self.d]; self.d]);
                if qlin.len() != self.d || qquad.len() != self.d {
                    return invalid("ray_constant q dimensions must match d");
                }
                let q = QForm::new(q0, qlin, qquad)
                    .map_err(|e| ConfigError::Invalid(e.to_string()))?;
                KernelFamily::RayConstant { q }
            }
            "homogeneous_table" => {
                forbid(k.value.is_some(), "value", "homogeneous_table")?;
                forbid(k.lambda.is_some(), "lambda", "homogeneous_table")?;
                forbid(k.scale.is_some(), "scale", "homogeneous_table")?;
                forbid(k.q0.is_some() || k.qlin.is_some() || k.qquad.is_some(), "q*", "homogeneous_table")?;
                KernelFamily::HomogeneousTable {
                    table: k.table.clone().ok_or_else(|| {
                        ConfigError::Invalid("homogeneous_table needs 'table'".into())
                    })?,
                }
            }
            other => {
                return invalid(format!(
                    "unknown kernel family '{other}'; expected one of constant, additive, \
                     product, power_law_pair, ray_constant, homogeneous_table"
                ))
            }
        };
        Ok((family, params))
    }

    fn build_initial(&self) -> Result<LatticeState<f64>, ConfigError> {
        match self.initial.kind.as_str() {
            "monomer_mix" => {
                let weights = self
                    .initial
                    .weights
                    .as_ref()
                    .ok_or_else(|| ConfigError::Invalid("monomer_mix needs 'weights'".into()))?;
                if self.initial.entries.is_some() {
                    return invalid("monomer_mix does not take 'entries'");
                }
                LatticeState::init_monomer_mix(self.d, weights, self.n_max)
                    .map_err(|e| ConfigError::Invalid(e.to_string()))
            }
            "compositions" => {
                let entries = self
                    .initial
                    .entries
                    .as_ref()
                    .ok_or_else(|| ConfigError::Invalid("compositions needs 'entries'".into()))?;
                if self.initial.weights.is_some() {
                    return invalid("compositions does not take 'weights'");
                }
                let mut state = LatticeState::new(self.d, self.n_max);
                for e in entries {
                    let comp = Composition::new(&e.alpha)
                        .map_err(|err| ConfigError::Invalid(err.to_string()))?;
                    if comp.dim() != self.d {
                        return invalid("composition dimension must match d");
                    }
                    state
                        .set(comp, e.n)
                        .map_err(|err| ConfigError::Invalid(err.to_string()))?;
                }
                if state.support_len() == 0 {
                    return invalid("initial state must carry positive mass");
                }
                Ok(state)
            }
            other => invalid(format!(
                "unknown initial condition type '{other}'; expected monomer_mix or compositions"
            )),
        }
    }

    fn build_solver(&self) -> Result<SolverConfig<f64>, ConfigError> {
        let s = &self.solver;
        let mut config = SolverConfig::new(s.t_end);
        config.rel_tol = s.rel_tol;
        config.abs_tol = s.abs_tol;
        config.dt_init = s.dt_init;
        config.dt_max = s.dt_max.unwrap_or(s.t_end);
        config.escape_abort_fraction = s.escape_abort_fraction;
        config.snapshot_floor = s.snapshot_floor;
        config.snapshot_times = match &s.snapshot_times {
            Some(times) => times.clone(),
            None => default_snapshot_times(s.t_end),
        };
        Ok(config)
    }

    /// Canonical JSON of the kernel section, hashed into run manifests.
    pub fn kernel_digest(&self) -> String {
        let value = serde_json::to_value(&self.kernel).expect("kernel section serializes");
        crate::io::sha256_hex(value.to_string().as_bytes())
    }
}
