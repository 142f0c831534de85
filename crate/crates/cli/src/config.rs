//! Run configuration: one TOML file per run, dotted namespaces
//! (`sampler.t0 = 0.4`), unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use mrpd_core::{CgObjective, GuidanceMode, MaskPattern};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    /// Root seed for masks, noise, phases and the sampler.
    pub seed: u64,
    pub phantom: PhantomConfig,
    pub mask: MaskConfig,
    #[serde(default)]
    pub measure: MeasureConfig,
    #[serde(default)]
    pub prior: PriorConfig,
    #[serde(default)]
    pub codec: CodecConfig,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub input: Option<InputConfig>,
    #[serde(default)]
    pub adapter: AdapterConfig,
    #[serde(default)]
    pub ablate: AblateConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomConfig {
    pub size: usize,
    #[serde(default = "default_variant")]
    pub variant: u64,
    #[serde(default = "default_smoothness")]
    pub phase_smoothness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskConfig {
    pub pattern: String,
    pub accel: f64,
    #[serde(default = "default_acs")]
    pub acs_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureConfig {
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default = "one")]
    pub coils: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    /// `mixture` or `shrinkage`.
    #[serde(default = "default_prior_kind")]
    pub kind: String,
    #[serde(default = "default_components")]
    pub components: usize,
    /// Shared mixture variance; absent means the pairwise-distance rule.
    #[serde(default)]
    pub var: Option<f64>,
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// Saved mixture prior, used instead of building one.
    #[serde(default)]
    pub path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodecConfig {
    /// `identity`, `haar` or `patch`.
    #[serde(default = "default_codec_kind")]
    pub kind: String,
    #[serde(default = "one")]
    pub levels: usize,
    #[serde(default = "default_c_in")]
    pub c_in: usize,
    #[serde(default = "default_patch")]
    pub patch: usize,
    #[serde(default = "default_patch")]
    pub latent_channels: usize,
    #[serde(default = "default_tile")]
    pub tile: usize,
    #[serde(default)]
    pub core_seed: u64,
    /// Saved codec, used instead of building one.
    #[serde(default)]
    pub path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    #[serde(default = "default_t0")]
    pub t0: f64,
    #[serde(default = "default_t_ws")]
    pub t_ws: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_total_steps")]
    pub total_steps: usize,
    #[serde(default = "default_beta_start")]
    pub beta_start: f64,
    #[serde(default = "default_beta_end")]
    pub beta_end: f64,
    #[serde(default = "default_dc_every")]
    pub dc_every: usize,
    /// `hard_to_soft`, `hard_only` or `soft_only`.
    #[serde(default = "default_mode")]
    pub mode: String,
    /// `norm` or `squared_norm`.
    #[serde(default = "default_objective")]
    pub objective: String,
    #[serde(default)]
    pub full_jacobian: bool,
    /// Write every n-th clean estimate; 0 disables.
    #[serde(default)]
    pub dump_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub measurement: String,
    pub mask: String,
    #[serde(default)]
    pub reference: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterConfig {
    #[serde(default = "default_train")]
    pub train: usize,
    #[serde(default = "default_holdout")]
    pub holdout: usize,
    #[serde(default = "default_ridge")]
    pub ridge: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateConfig {
    #[serde(default = "default_lambdas")]
    pub lambdas: Vec<f64>,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_t0_grid")]
    pub t0_grid: Vec<f64>,
    #[serde(default = "default_t_ws_grid")]
    pub t_ws_grid: Vec<f64>,
    #[serde(default = "one")]
    pub repeats: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "yes")]
    pub previews: bool,
}

fn one() -> usize {
    1
}
fn yes() -> bool {
    true
}
fn default_variant() -> u64 {
    1
}
fn default_smoothness() -> f64 {
    0.5
}
fn default_acs() -> f64 {
    0.04
}
fn default_prior_kind() -> String {
    "mixture".into()
}
fn default_components() -> usize {
    32
}
fn default_tau() -> f64 {
    1.0
}
fn default_codec_kind() -> String {
    "identity".into()
}
fn default_c_in() -> usize {
    3
}
fn default_patch() -> usize {
    4
}
fn default_tile() -> usize {
    8
}
fn default_t0() -> f64 {
    0.4
}
fn default_t_ws() -> f64 {
    0.3
}
fn default_lambda() -> f64 {
    1.0
}
fn default_gamma() -> f64 {
    0.01
}
fn default_total_steps() -> usize {
    1000
}
fn default_beta_start() -> f64 {
    1e-4
}
fn default_beta_end() -> f64 {
    0.02
}
fn default_dc_every() -> usize {
    2
}
fn default_mode() -> String {
    "hard_to_soft".into()
}
fn default_objective() -> String {
    "norm".into()
}
fn default_train() -> usize {
    16
}
fn default_holdout() -> usize {
    10
}
fn default_ridge() -> f64 {
    1e-6
}
fn default_lambdas() -> Vec<f64> {
    vec![0.0, 0.5, 1.0]
}
fn default_runs() -> usize {
    3
}
fn default_t0_grid() -> Vec<f64> {
    vec![0.2, 0.4, 0.6]
}
fn default_t_ws_grid() -> Vec<f64> {
    vec![0.1]
}

macro_rules! section_default {
    ($($t:ty),*) => {$(
        impl Default for $t {
            fn default() -> Self {
                toml::from_str("").expect("every field has a default")
            }
        }
    )*};
}
section_default!(MeasureConfig, PriorConfig, CodecConfig, SamplerSection, AdapterConfig, AblateConfig, OutputConfig);

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub coils: Option<usize>,
    pub mode: Option<String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
        serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner().to_string();
            let key = missing_field(&inner).map(|f| if path == "." { f.to_string() } else { format!("{path}.{f}") });
            CliError::Config(match key {
                Some(k) => format!("missing key `{k}`"),
                None if path == "." => inner,
                None => format!("`{path}`: {inner}"),
            })
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(c) = o.coils {
            self.measure.coils = c;
        }
        if let Some(m) = &o.mode {
            self.sampler.mode = m.clone();
        }
    }

    /// SHA-256 of the canonical JSON form of the effective configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn pattern(&self) -> Result<MaskPattern, CliError> {
        MaskPattern::from_name(&self.mask.pattern)
            .ok_or_else(|| CliError::Config(format!("mask.pattern: unknown pattern `{}`", self.mask.pattern)))
    }

    pub fn mode(&self) -> Result<GuidanceMode, CliError> {
        GuidanceMode::from_name(&self.sampler.mode)
            .ok_or_else(|| CliError::Config(format!("sampler.mode: unknown mode `{}`", self.sampler.mode)))
    }

    pub fn objective(&self) -> Result<CgObjective, CliError> {
        match self.sampler.objective.as_str() {
            "norm" => Ok(CgObjective::Norm),
            "squared_norm" => Ok(CgObjective::SquaredNorm),
            other => Err(CliError::Config(format!("sampler.objective: unknown objective `{other}`"))),
        }
    }
}

fn missing_field(msg: &str) -> Option<&str> {
    let rest = msg.strip_prefix("missing field `")?;
    rest.split('`').next()
}

/// Resolves `path` against the directory holding the config file.
pub fn resolve(config_path: &Path, path: &str) -> PathBuf {
    let p = Path::new(path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        config_path.parent().unwrap_or(Path::new(".")).join(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "seed = 3\nphantom.size = 32\nmask.pattern = \"uniform1d\"\nmask.accel = 4.0\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let c = Config::parse(MINIMAL).unwrap();
        assert_eq!(c.sampler.t0, 0.4);
        assert_eq!(c.sampler.t_ws, 0.3);
        assert_eq!(c.sampler.lambda, 1.0);
        assert_eq!(c.measure.coils, 1);
        assert_eq!(c.ablate.lambdas, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn dotted_and_table_forms_agree() {
        let tables = "seed = 3\n[phantom]\nsize = 32\n[mask]\npattern = \"uniform1d\"\naccel = 4.0\n";
        assert_eq!(Config::parse(MINIMAL).unwrap(), Config::parse(tables).unwrap());
    }

    #[test]
    fn missing_key_is_named() {
        let e = Config::parse("seed = 3\nphantom.size = 32\nmask.pattern = \"uniform1d\"\n").unwrap_err();
        assert!(e.to_string().contains("mask.accel"), "{e}");
        let e = Config::parse("phantom.size = 32\nmask.pattern = \"x\"\nmask.accel = 2.0\n").unwrap_err();
        assert!(e.to_string().contains("`seed`"), "{e}");
    }

    #[test]
    fn unknown_key_rejected() {
        let e = Config::parse(&format!("{MINIMAL}sampler.t00 = 0.5\n")).unwrap_err();
        assert!(e.to_string().contains("t00"), "{e}");
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn overrides_change_hash() {
        let mut c = Config::parse(MINIMAL).unwrap();
        let h = c.hash();
        c.apply(&Overrides { seed: Some(9), ..Default::default() });
        assert_eq!(c.seed, 9);
        assert_ne!(c.hash(), h);
    }
}
