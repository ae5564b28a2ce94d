//! TOML run configuration.
//!
//! Every section is optional; an empty file is a valid toy-scale run. Unknown
//! keys are rejected so typos surface as config errors (exit 2) instead of
//! silently falling back to defaults.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use realign::curation::{ColorfulnessMode, CurationConfig, NegativeMode, SaliencyMode, TauMode};
use realign::data::GaussianMixture;
use realign::eval::HarnessBudget;
use realign::objectives::PolicyBranchMode;
use realign::training::{Stage, TrainConfig};
use realign::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Toy,
    Paper,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub experiment: ExperimentSection,
    pub budget: BudgetSection,
    pub curation: CurationSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub seed: u64,
    pub corpus_size: usize,
    /// Data dimension for the standard-normal mixture.
    pub dim: usize,
    /// Use the bimodal two-lobes mixture instead of a standard normal.
    pub two_lobes: bool,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            seed: 7,
            corpus_size: 256,
            dim: 2,
            two_lobes: false,
            out: None,
        }
    }
}

impl ExperimentSection {
    pub fn mixture(&self) -> Result<GaussianMixture> {
        if self.two_lobes {
            if self.dim != 2 {
                return Err(Error::Config("two_lobes requires dim = 2".into()));
            }
            Ok(GaussianMixture::two_lobes())
        } else {
            Ok(GaussianMixture::standard_normal(self.dim))
        }
    }
}

/// Optional overrides of the toy harness budget.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BudgetSection {
    pub strong_steps: Option<usize>,
    pub base_steps: Option<usize>,
    pub weak_steps: Option<usize>,
    pub stage1_steps: Option<usize>,
    pub stage2_steps: Option<usize>,
    pub eval_samples: Option<usize>,
    pub sample_steps: Option<usize>,
}

impl BudgetSection {
    pub fn resolve(&self) -> HarnessBudget {
        let mut b = HarnessBudget::toy();
        if let Some(v) = self.strong_steps {
            b.strong_steps = v;
        }
        if let Some(v) = self.base_steps {
            b.base_steps = v;
        }
        if let Some(v) = self.weak_steps {
            b.weak_steps = v;
        }
        if let Some(v) = self.stage1_steps {
            b.stage1_steps = v;
        }
        if let Some(v) = self.stage2_steps {
            b.stage2_steps = v;
        }
        if let Some(v) = self.eval_samples {
            b.eval_samples = v;
        }
        if let Some(v) = self.sample_steps {
            b.sample_steps = v;
        }
        b
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurationSection {
    pub top_k: usize,
    /// Calibrated gap threshold: quantile of the observed gap distribution.
    /// Mutually exclusive with `tau_fixed`.
    pub tau_percentile: Option<f64>,
    pub tau_fixed: Option<f64>,
    pub negative: NegativeName,
    pub colorfulness: ColorfulnessName,
    pub saliency: SaliencyName,
    pub inpaint_steps: usize,
    pub guidance_scale: f64,
    pub seed: Option<u64>,
}

impl Default for CurationSection {
    fn default() -> Self {
        CurationSection {
            top_k: 512,
            tau_percentile: None,
            tau_fixed: None,
            negative: NegativeName::Inpainting,
            colorfulness: ColorfulnessName::Off,
            saliency: SaliencyName::EnergyProxy,
            inpaint_steps: 10,
            guidance_scale: 1.0,
            seed: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeName {
    Inpainting,
    TextToImage,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorfulnessName {
    AboveAverage,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SaliencyName {
    EnergyProxy,
    FixedBlob,
}

impl CurationSection {
    pub fn resolve(&self, run_seed: u64) -> Result<CurationConfig> {
        let tau = match (self.tau_fixed, self.tau_percentile) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "tau_fixed and tau_percentile are mutually exclusive".into(),
                ))
            }
            (Some(v), None) => TauMode::Fixed(v),
            (None, Some(p)) => TauMode::Percentile(p),
            (None, None) => TauMode::Percentile(0.4),
        };
        Ok(CurationConfig {
            tau,
            top_k: self.top_k,
            colorfulness: match self.colorfulness {
                ColorfulnessName::AboveAverage => ColorfulnessMode::AboveAverage,
                ColorfulnessName::Off => ColorfulnessMode::Off,
            },
            saliency: match self.saliency {
                SaliencyName::EnergyProxy => SaliencyMode::EnergyProxy,
                SaliencyName::FixedBlob => SaliencyMode::FixedBlob,
            },
            negative: self.negative.resolve(),
            inpaint_steps: self.inpaint_steps,
            guidance_scale: self.guidance_scale,
            seed: self.seed.unwrap_or(run_seed),
        })
    }
}

impl NegativeName {
    pub fn resolve(&self) -> NegativeMode {
        match self {
            NegativeName::Inpainting => NegativeMode::Inpainting,
            NegativeName::TextToImage => NegativeMode::TextToImage,
        }
    }
}

/// Per-field overrides applied on top of the preset train config.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub steps: Option<usize>,
    pub lr: Option<f64>,
    pub batch: Option<usize>,
    pub accumulation: Option<usize>,
    pub prompt_dropout: Option<f64>,
    pub warmup_steps: Option<usize>,
    pub adapter_only: Option<bool>,
    pub margin: Option<f64>,
    pub policy_steps: Option<usize>,
    pub policy_branch: Option<PolicyBranchName>,
    pub guidance_scale: Option<f64>,
    pub beta: Option<f64>,
    /// Stage-2 initialization; required unless --from-base is passed.
    pub stage1_checkpoint: Option<PathBuf>,
    /// Directory holding a previously curated dataset (stage 2 input).
    pub pairs_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyBranchName {
    ForwardNoiseTarget,
    DetachedSelfPrediction,
}

impl TrainSection {
    pub fn resolve(&self, stage: Stage, preset: Preset, seed: u64) -> Result<TrainConfig> {
        let mut cfg = match (stage, preset) {
            (Stage::Stage1, Preset::Toy) => TrainConfig::toy_stage1(seed),
            (Stage::Stage2, Preset::Toy) => TrainConfig::toy_stage2(seed),
            (Stage::Stage1, Preset::Paper) => TrainConfig::paper_stage1(seed),
            (Stage::Stage2, Preset::Paper) => TrainConfig::paper_stage2(seed),
        };
        if let Some(v) = self.steps {
            cfg.steps = v;
        }
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.batch {
            cfg.batch = v;
        }
        if let Some(v) = self.accumulation {
            cfg.accumulation = v;
        }
        if let Some(v) = self.prompt_dropout {
            cfg.prompt_dropout = v;
        }
        if let Some(v) = self.warmup_steps {
            cfg.warmup_steps = v;
        }
        if let Some(v) = self.adapter_only {
            cfg.adapter_only = v;
        }
        if let Some(v) = self.margin {
            cfg.stage1.margin = v;
        }
        if let Some(v) = self.policy_steps {
            cfg.stage1.policy_steps = v;
        }
        if let Some(v) = self.policy_branch {
            cfg.stage1.policy_branch = match v {
                PolicyBranchName::ForwardNoiseTarget => PolicyBranchMode::ForwardNoiseTarget,
                PolicyBranchName::DetachedSelfPrediction => {
                    PolicyBranchMode::DetachedSelfPrediction
                }
            };
        }
        if let Some(v) = self.guidance_scale {
            cfg.stage1.guidance_scale = v;
        }
        if let Some(v) = self.beta {
            cfg.stage2 = realign::objectives::Stage2Config::new(v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Harness seeds for multi-seed reports.
    pub seeds: Vec<u64>,
    pub sweep_sizes: Vec<usize>,
    /// Checkpoint evaluated against the base model; defaults to the base.
    pub checkpoint: Option<PathBuf>,
    /// Generations per model for the distribution-distance metric.
    pub distance_samples: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            seeds: vec![1, 2, 3],
            sweep_sizes: vec![64, 128, 256],
            checkpoint: None,
            distance_samples: 512,
        }
    }
}

pub fn load_config(path: &std::path::Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("invalid config: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_resolves_to_toy_defaults() {
        let cfg: FileConfig = toml::from_str("").unwrap();
        assert_eq!(cfg.experiment.seed, 7);
        let train = cfg.train.resolve(Stage::Stage1, Preset::Toy, 7).unwrap();
        assert_eq!(train.steps, 300);
        let budget = cfg.budget.resolve();
        assert_eq!(budget.stage1_steps, 300);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = toml::from_str::<FileConfig>("[train]\nlearning_rate = 0.1\n");
        assert!(err.is_err());
    }

    #[test]
    fn conflicting_tau_settings_are_rejected() {
        let cfg: FileConfig =
            toml::from_str("[curation]\ntau_fixed = 0.1\ntau_percentile = 0.4\n").unwrap();
        assert!(cfg.curation.resolve(7).is_err());
    }

    #[test]
    fn overrides_apply_on_top_of_preset() {
        let cfg: FileConfig =
            toml::from_str("[train]\nsteps = 5\nmargin = -1.5\nbeta = 3.0\n").unwrap();
        let s1 = cfg.train.resolve(Stage::Stage1, Preset::Toy, 1).unwrap();
        assert_eq!(s1.steps, 5);
        assert_eq!(s1.stage1.margin, -1.5);
        let s2 = cfg.train.resolve(Stage::Stage2, Preset::Toy, 1).unwrap();
        assert_eq!(s2.stage2.beta, 3.0);
    }
}
