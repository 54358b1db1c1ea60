//! Scenario configuration file: sectioned TOML covering plant parameters,
//! coupling setup, compensator selection, trainer settings, design spec and
//! output paths. Unknown keys are rejected; a parse -> emit -> parse round
//! trip is semantically identical.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use cosim_core::compensator::{
    init_from_linear, read_weights, Activation, Compensator, ExtrapolatorParams, TrainerConfig,
};
use cosim_core::coupling::{CompensatorKind, CouplingScenario, Reconstruction};
use cosim_core::design::DesignSpec;
use cosim_core::plants::{OscillatorParams, StopParams};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    /// Seed for all randomness: optimizer starts and training shuffles.
    #[serde(default)]
    pub seed: u64,
    pub plant: PlantSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<StopSection>,
    pub coupling: CouplingSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compensator: Option<CompensatorSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design: Option<DesignSection>,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    pub m1: f64,
    pub m2: f64,
    pub c1: f64,
    pub c2: f64,
    pub cc: f64,
    pub d1: f64,
    pub d2: f64,
    pub dc: f64,
    /// Initial state ordered [x1, v1, x2, v2].
    pub initial_state: [f64; 4],
    /// Micro integration steps per macro step.
    #[serde(default = "default_micro_steps")]
    pub micro_steps: usize,
}

fn default_micro_steps() -> usize {
    10
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct StopSection {
    pub x_stop: f64,
    pub restitution: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CouplingSection {
    pub macro_step: f64,
    pub delay_steps: usize,
    pub history_len: usize,
    /// "zoh" or "foh".
    #[serde(default = "default_reconstruction")]
    pub reconstruction: String,
    /// "none", "foh", "linear-ar" or "network".
    pub compensator: String,
    pub duration: f64,
}

fn default_reconstruction() -> String {
    "zoh".into()
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CompensatorSection {
    pub a: Vec<f64>,
    #[serde(default)]
    pub b: f64,
    #[serde(default = "default_leaky_slope")]
    pub leaky_slope: f64,
    /// Optional parameter file (as emitted by `cosim design`) overriding
    /// `a` and `b`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params_file: Option<PathBuf>,
    /// Optional trained-network weight table (flat text) to start from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights_file: Option<PathBuf>,
}

fn default_leaky_slope() -> f64 {
    0.01
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_trigger_every")]
    pub trigger_every: usize,
    #[serde(default = "default_max_samples")]
    pub max_samples: usize,
    #[serde(default = "default_apply_delay")]
    pub apply_delay_steps: usize,
    #[serde(default = "default_deterministic")]
    pub deterministic: bool,
}

fn default_learning_rate() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}
fn default_epochs() -> usize {
    300
}
fn default_batch_size() -> usize {
    64
}
fn default_trigger_every() -> usize {
    5000
}
fn default_max_samples() -> usize {
    6000
}
fn default_apply_delay() -> usize {
    1000
}
fn default_deterministic() -> bool {
    true
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DesignSection {
    /// Bandwidth interval [lo, hi], rad/s.
    pub band: [f64; 2],
    pub relative_degree: u32,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta_weight")]
    pub beta: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
}

fn default_alpha() -> f64 {
    100.0
}
fn default_beta_weight() -> f64 {
    1.0
}
fn default_gamma() -> f64 {
    1e4
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default = "default_omega_min")]
    pub omega_min: f64,
    #[serde(default = "default_marginal_distance")]
    pub marginal_distance: f64,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            grid_points: default_grid_points(),
            omega_min: default_omega_min(),
            marginal_distance: default_marginal_distance(),
        }
    }
}

fn default_grid_points() -> usize {
    2000
}
fn default_omega_min() -> f64 {
    1e-2
}
fn default_marginal_distance() -> f64 {
    1e-3
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: default_out_dir(),
        }
    }
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Parameter file emitted by `cosim design`, loadable back through
/// `[compensator].params_file`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ParamsFile {
    pub a: Vec<f64>,
    pub b: f64,
}

impl ScenarioFile {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let file: ScenarioFile = toml::from_str(text).context("parsing scenario config")?;
        file.validate()?;
        Ok(file)
    }

    pub fn emit(&self) -> anyhow::Result<String> {
        toml::to_string_pretty(self).context("serializing scenario config")
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.plant_params()
            .validate()
            .map_err(|e| anyhow::anyhow!("[plant]: {e}"))?;
        if let Some(stop) = self.stop_params() {
            stop.validate()
                .map_err(|e| anyhow::anyhow!("[stop]: {e}"))?;
        }
        self.scenario(false)
            .validate()
            .map_err(|e| anyhow::anyhow!("[coupling]: {e}"))?;
        match self.coupling.reconstruction.as_str() {
            "zoh" | "foh" => {}
            other => bail!("[coupling].reconstruction: unknown value '{other}'"),
        }
        match self.coupling.compensator.as_str() {
            "none" | "foh" | "linear-ar" | "network" => {}
            other => bail!("[coupling].compensator: unknown value '{other}'"),
        }
        if matches!(self.coupling.compensator.as_str(), "linear-ar" | "network")
            && self.compensator.is_none()
        {
            bail!(
                "[compensator]: section required when [coupling].compensator = \"{}\"",
                self.coupling.compensator
            );
        }
        if let Some(comp) = &self.compensator {
            if comp.params_file.is_none() && comp.a.len() != self.coupling.history_len {
                bail!(
                    "[compensator].a: {} coefficients but [coupling].history_len = {}",
                    comp.a.len(),
                    self.coupling.history_len
                );
            }
            if !(comp.leaky_slope > 0.0 && comp.leaky_slope < 1.0) {
                bail!("[compensator].leaky_slope: must lie in (0, 1)");
            }
        }
        if let Some(training) = &self.training {
            if training.enabled {
                if self.coupling.compensator != "network" {
                    bail!("[training].enabled: requires [coupling].compensator = \"network\"");
                }
                self.trainer_config()
                    .unwrap()
                    .validate(self.coupling.history_len, self.coupling.delay_steps)
                    .map_err(|e| anyhow::anyhow!("[training]: {e}"))?;
            }
        }
        if let Some(design) = &self.design {
            self.design_spec_from(design)
                .validate()
                .map_err(|e| anyhow::anyhow!("[design]: {e}"))?;
        }
        if let Some(sp) = self.stop_params() {
            if self.plant.initial_state[0] < sp.x_stop {
                bail!("[plant].initial_state: x1 starts beyond [stop].x_stop");
            }
        }
        Ok(())
    }

    pub fn plant_params(&self) -> OscillatorParams {
        OscillatorParams {
            m1: self.plant.m1,
            m2: self.plant.m2,
            c1: self.plant.c1,
            c2: self.plant.c2,
            cc: self.plant.cc,
            d1: self.plant.d1,
            d2: self.plant.d2,
            dc: self.plant.dc,
        }
    }

    pub fn stop_params(&self) -> Option<StopParams> {
        self.stop.as_ref().map(|s| StopParams {
            x_stop: s.x_stop,
            restitution: s.restitution,
        })
    }

    pub fn scenario(&self, online_training: bool) -> CouplingScenario {
        CouplingScenario {
            macro_step: self.coupling.macro_step,
            delay_steps: self.coupling.delay_steps,
            history_len: self.coupling.history_len,
            reconstruction: if self.coupling.reconstruction == "foh" {
                Reconstruction::Foh
            } else {
                Reconstruction::Zoh
            },
            compensator: match self.coupling.compensator.as_str() {
                "foh" => CompensatorKind::Foh,
                "linear-ar" => CompensatorKind::LinearAr,
                "network" => CompensatorKind::Network,
                _ => CompensatorKind::None,
            },
            duration: self.coupling.duration,
            online_training,
        }
    }

    pub fn training_enabled(&self) -> bool {
        self.training.as_ref().is_some_and(|t| t.enabled)
    }

    pub fn trainer_config(&self) -> Option<TrainerConfig> {
        self.training.as_ref().map(|t| TrainerConfig {
            learning_rate: t.learning_rate,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
            epochs: t.epochs,
            batch_size: t.batch_size,
            trigger_every: t.trigger_every,
            max_samples: t.max_samples,
            apply_delay_steps: t.apply_delay_steps,
            deterministic: t.deterministic,
        })
    }

    /// Linear compensator parameters, honoring `params_file` when present.
    /// Paths are resolved relative to `base`.
    pub fn extrapolator_params(&self, base: &Path) -> anyhow::Result<ExtrapolatorParams> {
        let section = self
            .compensator
            .as_ref()
            .context("[compensator] section missing")?;
        if let Some(file) = &section.params_file {
            let path = resolve(base, file);
            let text = std::fs::read_to_string(&path).with_context(|| {
                format!("[compensator].params_file: reading {}", path.display())
            })?;
            let params: ParamsFile =
                toml::from_str(&text).context("[compensator].params_file: parsing")?;
            if params.a.len() != self.coupling.history_len {
                bail!(
                    "[compensator].params_file: {} coefficients but history_len = {}",
                    params.a.len(),
                    self.coupling.history_len
                );
            }
            Ok(ExtrapolatorParams::new(params.a, params.b)
                .map_err(|e| anyhow::anyhow!("[compensator].params_file: {e}"))?)
        } else {
            Ok(ExtrapolatorParams::new(section.a.clone(), section.b)
                .map_err(|e| anyhow::anyhow!("[compensator]: {e}"))?)
        }
    }

    /// Compensator instance for one coupling input.
    pub fn build_compensator(&self, base: &Path) -> anyhow::Result<Compensator> {
        let p = self.coupling.history_len;
        let k = self.coupling.delay_steps;
        match self.coupling.compensator.as_str() {
            "none" => Ok(Compensator::Passthrough),
            "foh" => Compensator::foh_for_delay(k, p).map_err(|e| anyhow::anyhow!("{e}")),
            "linear-ar" => Ok(Compensator::LinearAr(self.extrapolator_params(base)?)),
            "network" => {
                let section = self
                    .compensator
                    .as_ref()
                    .context("[compensator] section missing")?;
                if let Some(file) = &section.weights_file {
                    let path = resolve(base, file);
                    let reader =
                        std::io::BufReader::new(std::fs::File::open(&path).with_context(|| {
                            format!("[compensator].weights_file: opening {}", path.display())
                        })?);
                    let net =
                        read_weights(reader, p, 2, section.leaky_slope, Activation::LeakyRelu)
                            .map_err(|e| anyhow::anyhow!("[compensator].weights_file: {e}"))?;
                    Ok(Compensator::Network(net))
                } else {
                    let params = self.extrapolator_params(base)?;
                    Ok(Compensator::Network(init_from_linear(
                        &params,
                        section.leaky_slope,
                    )))
                }
            }
            other => bail!("[coupling].compensator: unknown value '{other}'"),
        }
    }

    fn design_spec_from(&self, section: &DesignSection) -> DesignSpec {
        DesignSpec {
            band: (section.band[0], section.band[1]),
            relative_degree: section.relative_degree,
            alpha: section.alpha,
            beta: section.beta,
            gamma: section.gamma,
            coeff_count: self.coupling.history_len,
            macro_step: self.coupling.macro_step,
            delay_steps: self.coupling.delay_steps,
        }
    }

    pub fn design_spec(&self) -> anyhow::Result<DesignSpec> {
        let section = self.design.as_ref().context("[design] section missing")?;
        Ok(self.design_spec_from(section))
    }
}

fn resolve(base: &Path, file: &Path) -> PathBuf {
    if file.is_absolute() {
        file.to_path_buf()
    } else {
        base.join(file)
    }
}

/// Environment overrides, applied between config values and command-line
/// flags (flags win).
pub struct EnvOverrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub deterministic_training: Option<bool>,
}

impl EnvOverrides {
    pub fn from_env() -> Self {
        let seed = std::env::var("COSIM_SEED")
            .ok()
            .and_then(|v| v.parse().ok());
        let out = std::env::var("COSIM_OUT").ok().map(PathBuf::from);
        let deterministic_training = std::env::var("COSIM_DETERMINISTIC_TRAINING")
            .ok()
            .map(|v| v == "1" || v.eq_ignore_ascii_case("true"));
        Self {
            seed,
            out,
            deterministic_training,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const EXAMPLE: &str = r#"
seed = 42

[plant]
m1 = 100.0
m2 = 1.0
c1 = 10.0
c2 = 10.0
cc = 10.0
d1 = 0.01
d2 = 0.01
dc = 0.01
initial_state = [1.0, 0.0, 1.0, 0.0]

[coupling]
macro_step = 0.001
delay_steps = 3
history_len = 4
compensator = "linear-ar"
duration = 10.0

[compensator]
a = [6.5103, -1.5509, -9.9296, 5.9702]
b = 0.0

[design]
band = [1.0, 6.0]
relative_degree = 2
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = ScenarioFile::parse(EXAMPLE).unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.coupling.delay_steps, 3);
        let emitted = cfg.emit().unwrap();
        let again = ScenarioFile::parse(&emitted).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn rejects_unknown_keys() {
        let bad = EXAMPLE.replace("[coupling]", "[coupling]\nbogus_key = 1");
        let err = ScenarioFile::parse(&bad).unwrap_err().to_string();
        assert!(err.contains("parsing scenario config"), "{err}");
    }

    #[test]
    fn rejects_coefficient_count_mismatch() {
        let bad = EXAMPLE.replace("a = [6.5103, -1.5509, -9.9296, 5.9702]", "a = [1.0, 0.0]");
        let err = format!("{:#}", ScenarioFile::parse(&bad).unwrap_err());
        assert!(err.contains("[compensator].a"), "{err}");
    }

    #[test]
    fn rejects_bad_macro_step_with_section_context() {
        let bad = EXAMPLE.replace("macro_step = 0.001", "macro_step = -1.0");
        let err = format!("{:#}", ScenarioFile::parse(&bad).unwrap_err());
        assert!(err.contains("[coupling]"), "{err}");
    }

    #[test]
    fn training_requires_network_compensator() {
        let bad = format!("{EXAMPLE}\n[training]\nenabled = true\n");
        let err = format!("{:#}", ScenarioFile::parse(&bad).unwrap_err());
        assert!(err.contains("network"), "{err}");
    }
}
