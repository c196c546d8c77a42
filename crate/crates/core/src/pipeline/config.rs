//! Pipeline configuration file (TOML).

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::effects::InsuranceRule;
use crate::error::{Error, Result};
use crate::ingest::{IngestConfig, SourceFormat, SourceSpec};
use crate::position::{Bucketing, DesignSpec};
use crate::probit::FitOptions;
use crate::sandwich::CounterfactualRule;
use crate::stats::Alternative;
use crate::synth::SynthConfig;
use crate::types::DateWindow;

/// An input given either as a bare path or as `{ path, format }`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InputSpec {
    Path(PathBuf),
    Full(SourceSpec),
}

impl InputSpec {
    pub fn spec(&self) -> SourceSpec {
        match self {
            InputSpec::Path(p) => SourceSpec::new(p.clone()),
            InputSpec::Full(s) => s.clone(),
        }
    }

    fn resolved(&self, base: &Path) -> SourceSpec {
        let mut s = self.spec();
        s.path = resolve(base, &s.path);
        s
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_relative() {
        base.join(p)
    } else {
        p.to_path_buf()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    pub transactions: Option<InputSpec>,
    pub blocks: Option<InputSpec>,
    pub mempool: Option<InputSpec>,
    pub labels: Option<PathBuf>,
    pub sandwiches: Option<InputSpec>,
    pub prices: Option<InputSpec>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Window {
    pub from: Option<NaiveDate>,
    pub to: Option<NaiveDate>,
    /// Days left out of every daily analysis.
    pub exclude: BTreeSet<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub buckets: Bucketing,
    pub extended: bool,
    pub fit: FitOptions,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            buckets: Bucketing::Quartiles,
            extended: false,
            fit: FitOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EffectsConfig {
    pub insurance_rule: InsuranceRule,
    /// Rows whose |max-fee effect| is below this are left out of insurance.
    pub me_floor: f64,
    pub quantiles: Vec<f64>,
}

impl Default for EffectsConfig {
    fn default() -> Self {
        Self {
            insurance_rule: InsuranceRule::Linear,
            me_floor: 1e-12,
            quantiles: vec![0.1, 0.5, 0.9],
        }
    }
}

/// A front-run swap followed by the victim's swap in the same pool and
/// direction. Inputs in ETH, outputs in tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmmCase {
    pub name: String,
    pub front_in: f64,
    pub front_out: f64,
    pub victim_in: f64,
    pub victim_out: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SandwichConfig {
    pub amm_fee: f64,
    pub counterfactual: CounterfactualRule,
    pub ttest: Alternative,
    pub bootstrap_resamples: usize,
    pub ci_level: f64,
    /// Legs with a placement effect below this are left out of the regression.
    pub effect_threshold: f64,
    pub detect_window: usize,
    pub histogram_bins: usize,
    /// Observed swap pairs to price without their front run.
    pub amm_cases: Vec<AmmCase>,
    /// Also fit the effect regression once over the whole window.
    pub pooled: bool,
}

impl Default for SandwichConfig {
    fn default() -> Self {
        Self {
            amm_fee: 0.003,
            counterfactual: CounterfactualRule::FrontExecutionPrice,
            ttest: Alternative::TwoSided,
            bootstrap_resamples: 999,
            ci_level: 0.99,
            effect_threshold: 0.5,
            detect_window: 8,
            histogram_bins: 40,
            amm_cases: Vec::new(),
            pooled: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConcentrationConfig {
    /// Days left out of the revenue series only.
    pub revenue_exclusions: BTreeSet<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Seeds every random draw of a run.
    pub seed: u64,
    #[serde(skip_serializing)]
    pub output_dir: PathBuf,
    /// Directory that relative paths are taken against: the config file's
    /// directory when loaded from a file, otherwise the working directory.
    #[serde(skip)]
    pub base_dir: PathBuf,
    pub inputs: Inputs,
    pub window: Window,
    pub model: ModelConfig,
    pub effects: EffectsConfig,
    pub sandwich: SandwichConfig,
    pub concentration: ConcentrationConfig,
    pub synth: SynthConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            output_dir: PathBuf::from("out"),
            base_dir: PathBuf::new(),
            inputs: Inputs::default(),
            window: Window::default(),
            model: ModelConfig::default(),
            effects: EffectsConfig::default(),
            sandwich: SandwichConfig::default(),
            concentration: ConcentrationConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().unwrap_or(Path::new("")).to_path_buf();
        Ok(cfg)
    }

    pub fn output_path(&self) -> PathBuf {
        resolve(&self.base_dir, &self.output_dir)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the serialized configuration with paths as written,
    /// output directory excluded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn design_spec(&self, extended: bool) -> DesignSpec {
        DesignSpec {
            bucketing: self.model.buckets,
            extended,
        }
    }

    pub fn date_window(&self) -> Result<DateWindow> {
        DateWindow::new(
            self.window.from.unwrap_or(NaiveDate::MIN),
            self.window.to.unwrap_or(NaiveDate::MAX),
        )
    }

    pub fn includes(&self, date: NaiveDate) -> bool {
        self.date_window().is_ok_and(|w| w.contains(date)) && !self.window.exclude.contains(&date)
    }

    pub fn ingest(&self) -> Result<IngestConfig> {
        let base = &self.base_dir;
        let need = |s: &Option<InputSpec>, name: &str| {
            s.as_ref()
                .map(|s| s.resolved(base))
                .ok_or_else(|| Error::Config(format!("inputs.{name} is required")))
        };
        Ok(IngestConfig {
            transactions: need(&self.inputs.transactions, "transactions")?,
            blocks: need(&self.inputs.blocks, "blocks")?,
            mempool: self.inputs.mempool.as_ref().map(|s| s.resolved(base)),
            labels: self.inputs.labels.as_ref().map(|p| resolve(base, p)),
            sandwiches: self.inputs.sandwiches.as_ref().map(|s| s.resolved(base)),
            prices: self.inputs.prices.as_ref().map(|s| s.resolved(base)),
            window: self.date_window()?,
            exclusions: self.window.exclude.clone(),
        })
    }

    /// Config for a freshly written synthetic bundle, with paths relative to
    /// the bundle directory.
    pub fn for_bundle(&self) -> Self {
        let mut cfg = self.clone();
        cfg.inputs = Inputs {
            transactions: Some(InputSpec::Path("transactions.csv".into())),
            blocks: Some(InputSpec::Path("blocks.csv".into())),
            mempool: Some(InputSpec::Full(SourceSpec {
                path: "mempool.jsonl".into(),
                format: Some(SourceFormat::JsonLines),
            })),
            labels: Some("labels.json".into()),
            sandwiches: Some(InputSpec::Path("sandwiches.csv".into())),
            prices: Some(InputSpec::Path("prices.csv".into())),
        };
        cfg.window.from = Some(self.synth.start_date);
        cfg.window.to = Some(self.synth.start_date + chrono::Days::new(self.synth.days.saturating_sub(1) as u64));
        cfg
    }
}
