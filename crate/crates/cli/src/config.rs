//! Experiment configuration: a TOML file selects one of the built-in
//! experiments and may override any knob; a handful of CLI flags override the
//! file. Every default mirrors the constants the experiments were published
//! with, so an empty file plus an experiment id reproduces the reference runs.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use vais_core::TrainConfig;

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExperimentId {
    #[serde(rename = "ais-bimodal-d10")]
    AisBimodalD10,
    #[serde(rename = "ais-copula-d20")]
    AisCopulaD20,
    #[serde(rename = "ce-fourbranches-d100")]
    CeFourBranchesD100,
    #[serde(rename = "ce-duffing-d200")]
    CeDuffingD200,
    #[serde(rename = "custom")]
    Custom,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 5] = [
        ExperimentId::AisBimodalD10,
        ExperimentId::AisCopulaD20,
        ExperimentId::CeFourBranchesD100,
        ExperimentId::CeDuffingD200,
        ExperimentId::Custom,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentId::AisBimodalD10 => "ais-bimodal-d10",
            ExperimentId::AisCopulaD20 => "ais-copula-d20",
            ExperimentId::CeFourBranchesD100 => "ce-fourbranches-d100",
            ExperimentId::CeDuffingD200 => "ce-duffing-d200",
            ExperimentId::Custom => "custom",
        }
    }

    pub fn is_ce(&self) -> bool {
        matches!(self, ExperimentId::CeFourBranchesD100 | ExperimentId::CeDuffingD200)
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        ExperimentId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| format!("unknown experiment {s:?} (known: {})", known_ids()))
    }
}

fn known_ids() -> String {
    ExperimentId::ALL.map(|id| id.as_str()).join(", ")
}

/// Proposal family: `vae`, `single-gaussian`, or `gm-J` (e.g. `gm-3`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FamilySpec {
    Vae,
    SingleGaussian,
    Gm(usize),
}

impl FamilySpec {
    pub fn as_string(&self) -> String {
        match self {
            FamilySpec::Vae => "vae".into(),
            FamilySpec::SingleGaussian => "single-gaussian".into(),
            FamilySpec::Gm(j) => format!("gm-{j}"),
        }
    }
}

impl fmt::Display for FamilySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.as_string())
    }
}

impl FromStr for FamilySpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "vae" => Ok(FamilySpec::Vae),
            "single-gaussian" => Ok(FamilySpec::SingleGaussian),
            _ => match s.strip_prefix("gm-").and_then(|j| j.parse::<usize>().ok()) {
                Some(j) if j > 0 => Ok(FamilySpec::Gm(j)),
                _ => Err(format!("unknown family {s:?} (known: vae, single-gaussian, gm-J)")),
            },
        }
    }
}

impl Serialize for FamilySpec {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(&self.as_string())
    }
}

impl<'de> Deserialize<'de> for FamilySpec {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// VAE knobs; `m` is the number of decoded prior draws the fitted proposal
/// keeps as its exact finite mixture.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaeSettings {
    pub d_z: usize,
    pub k: usize,
    pub m: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub pretrain_steps: usize,
}

impl VaeSettings {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            d_z: self.d_z,
            k: self.k,
            hidden: self.hidden,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            pretrain_steps: self.pretrain_steps,
        }
    }
}

/// Diagonal-Gaussian target for `custom` runs; dimension is the array length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CustomTarget {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Fully resolved run configuration, echoed verbatim into the artifacts.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Config {
    pub experiment: ExperimentId,
    pub family: FamilySpec,
    pub seed: u64,
    pub n_rep: usize,
    pub threads: usize,
    pub out: PathBuf,
    /// Points per AIS iteration / CE level.
    pub n: usize,
    /// AIS iteration count; CE level cap.
    pub iterations: usize,
    pub rho: f64,
    pub vae: VaeSettings,
    pub custom: CustomTarget,
}

/// Raw TOML shape: everything optional, unknown keys rejected by name.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    experiment: Option<ExperimentId>,
    family: Option<FamilySpec>,
    seed: Option<u64>,
    n_rep: Option<usize>,
    threads: Option<usize>,
    out: Option<PathBuf>,
    n: Option<usize>,
    iterations: Option<usize>,
    rho: Option<f64>,
    vae: Option<VaeFileSection>,
    custom: Option<CustomFileSection>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct VaeFileSection {
    d_z: Option<usize>,
    k: Option<usize>,
    m: Option<usize>,
    hidden: Option<usize>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    lr: Option<f64>,
    pretrain_steps: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CustomFileSection {
    mean: Option<Vec<f64>>,
    std: Option<Vec<f64>>,
}

/// CLI-flag overrides; each beats the file, which beats the defaults.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub experiment: Option<ExperimentId>,
    pub seed: Option<u64>,
    pub n_rep: Option<usize>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
}

struct Defaults {
    family: FamilySpec,
    n_rep: usize,
    n: usize,
    iterations: usize,
    rho: f64,
    d_z: usize,
}

fn defaults_for(id: ExperimentId) -> Defaults {
    match id {
        ExperimentId::AisBimodalD10 => {
            Defaults { family: FamilySpec::Vae, n_rep: 20, n: 10_000, iterations: 10, rho: 0.25, d_z: 4 }
        }
        ExperimentId::AisCopulaD20 => {
            Defaults { family: FamilySpec::Vae, n_rep: 20, n: 10_000, iterations: 10, rho: 0.25, d_z: 8 }
        }
        ExperimentId::CeFourBranchesD100 => {
            Defaults { family: FamilySpec::Vae, n_rep: 10, n: 10_000, iterations: 20, rho: 0.25, d_z: 2 }
        }
        ExperimentId::CeDuffingD200 => {
            Defaults { family: FamilySpec::Vae, n_rep: 10, n: 10_000, iterations: 20, rho: 0.15, d_z: 2 }
        }
        ExperimentId::Custom => {
            Defaults { family: FamilySpec::Vae, n_rep: 1, n: 1_000, iterations: 3, rho: 0.25, d_z: 2 }
        }
    }
}

fn vae_defaults_for(id: ExperimentId, d_z: usize) -> VaeSettings {
    match id {
        // Small nets keep the smoke-test experiment at smoke-test cost.
        ExperimentId::Custom => VaeSettings {
            d_z,
            k: 10,
            m: 200,
            hidden: 32,
            epochs: 8,
            batch_size: 128,
            lr: 1e-3,
            pretrain_steps: 100,
        },
        _ => VaeSettings {
            d_z,
            k: 75,
            m: 1_000,
            hidden: 128,
            epochs: 30,
            batch_size: 256,
            lr: 1e-3,
            pretrain_steps: 500,
        },
    }
}

pub fn load(path: &Path, overrides: &Overrides) -> Result<Config, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let file: FileConfig =
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    resolve(file, overrides)
}

fn resolve(file: FileConfig, ov: &Overrides) -> Result<Config, CliError> {
    let experiment = ov
        .experiment
        .or(file.experiment)
        .ok_or_else(|| CliError::Config("experiment: missing (set it in the config file or pass --experiment)".into()))?;
    let def = defaults_for(experiment);
    let vs = file.vae.unwrap_or_default();
    let vae_def = vae_defaults_for(experiment, def.d_z);
    let vae = VaeSettings {
        d_z: vs.d_z.unwrap_or(vae_def.d_z),
        k: vs.k.unwrap_or(vae_def.k),
        m: vs.m.unwrap_or(vae_def.m),
        hidden: vs.hidden.unwrap_or(vae_def.hidden),
        epochs: vs.epochs.unwrap_or(vae_def.epochs),
        batch_size: vs.batch_size.unwrap_or(vae_def.batch_size),
        lr: vs.lr.unwrap_or(vae_def.lr),
        pretrain_steps: vs.pretrain_steps.unwrap_or(vae_def.pretrain_steps),
    };
    let cs = file.custom.unwrap_or_default();
    let custom = CustomTarget {
        mean: cs.mean.unwrap_or_else(|| vec![0.0, 0.0]),
        std: cs.std.unwrap_or_else(|| vec![1.0, 1.0]),
    };
    let cfg = Config {
        experiment,
        family: file.family.unwrap_or(def.family),
        seed: ov.seed.or(file.seed).unwrap_or(1),
        n_rep: ov.n_rep.or(file.n_rep).unwrap_or(def.n_rep),
        threads: ov.threads.or(file.threads).unwrap_or(1),
        out: ov
            .out
            .clone()
            .or(file.out)
            .unwrap_or_else(|| PathBuf::from("runs").join(experiment.as_str())),
        n: file.n.unwrap_or(def.n),
        iterations: file.iterations.unwrap_or(def.iterations),
        rho: file.rho.unwrap_or(def.rho),
        vae,
        custom,
    };
    validate(&cfg)?;
    Ok(cfg)
}

fn validate(cfg: &Config) -> Result<(), CliError> {
    let mut bad = Vec::new();
    if cfg.n_rep == 0 {
        bad.push("n_rep: must be positive".to_string());
    }
    if cfg.threads == 0 {
        bad.push("threads: must be positive".to_string());
    }
    if cfg.n < 2 {
        bad.push("n: need at least two points per iteration".to_string());
    }
    if cfg.iterations == 0 {
        bad.push("iterations: must be positive".to_string());
    }
    if !(cfg.rho > 0.0 && cfg.rho < 1.0) {
        bad.push(format!("rho: must lie in (0, 1); got {}", cfg.rho));
    }
    for (name, v) in [
        ("vae.d_z", cfg.vae.d_z),
        ("vae.k", cfg.vae.k),
        ("vae.m", cfg.vae.m),
        ("vae.hidden", cfg.vae.hidden),
        ("vae.epochs", cfg.vae.epochs),
        ("vae.batch_size", cfg.vae.batch_size),
    ] {
        if v == 0 {
            bad.push(format!("{name}: must be positive"));
        }
    }
    if !(cfg.vae.lr > 0.0 && cfg.vae.lr.is_finite()) {
        bad.push(format!("vae.lr: must be positive and finite; got {}", cfg.vae.lr));
    }
    if cfg.experiment == ExperimentId::Custom {
        if cfg.custom.mean.is_empty() || cfg.custom.mean.len() != cfg.custom.std.len() {
            bad.push("custom.mean: must be nonempty and the same length as custom.std".to_string());
        }
        if cfg.custom.std.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            bad.push("custom.std: entries must be positive and finite".to_string());
        }
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(CliError::Config(bad.join("; ")))
    }
}
